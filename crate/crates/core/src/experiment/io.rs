//! File formats: CSV for tables, JSON for manifests, little-endian binary for
//! covariance matrices. Every file starts with (or contains) the config hash
//! and seed of the run that produced it.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use super::{ExperimentError, Provenance};
use crate::anomaly::FrameSeries;
use crate::kron_ops::{DenseCovariance, SpaceTimeDims};
use crate::synth::SampleSet;

/// First eight bytes of a binary covariance file.
pub const COVARIANCE_MAGIC: &[u8; 8] = b"KCOVF64\0";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io(format!("{}: {e}", path.display()))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), ExperimentError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| ExperimentError::Io(e.to_string()))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Writes a CSV whose first line is the provenance comment.
pub fn write_csv<I, R>(path: &Path, prov: &Provenance, header: &[String], rows: I) -> Result<(), ExperimentError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = create(path)?;
    writeln!(w, "{}", prov.comment()).map_err(io_err(path))?;
    let mut c = csv::Writer::from_writer(w);
    c.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        c.write_record(row).map_err(csv_err(path))?;
    }
    c.flush().map_err(io_err(path))
}

fn reader(path: &Path) -> Result<csv::Reader<File>, ExperimentError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

fn parse_row(path: &Path, line: usize, rec: &csv::StringRecord) -> Result<Vec<f64>, ExperimentError> {
    rec.iter()
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| ExperimentError::Data(format!("{}: row {line}: {f:?}: {e}", path.display())))
        })
        .collect()
}

/// Header `x_<frame>_<coordinate>`, then one sample per row.
pub fn write_samples_csv(path: &Path, prov: &Provenance, set: &SampleSet) -> Result<(), ExperimentError> {
    let SpaceTimeDims { p, t } = set.dims;
    let header: Vec<String> = (0..t)
        .flat_map(|f| (0..p).map(move |m| format!("x_{f}_{m}")))
        .collect();
    let rows = set.data.column_iter().map(|c| c.iter().map(|v| v.to_string()).collect::<Vec<_>>());
    write_csv(path, prov, &header, rows)
}

pub fn read_samples_csv(path: &Path, dims: SpaceTimeDims) -> Result<SampleSet, ExperimentError> {
    let mut r = reader(path)?;
    let width = r.headers().map_err(csv_err(path))?.len();
    if width != dims.dim() {
        return Err(ExperimentError::Data(format!(
            "{}: {width} columns, expected p*T = {}",
            path.display(),
            dims.dim()
        )));
    }
    let mut values = Vec::new();
    let mut n = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        values.extend(parse_row(path, line + 1, &rec)?);
        n += 1;
    }
    if n == 0 {
        return Err(ExperimentError::Data(format!("{}: no samples", path.display())));
    }
    Ok(SampleSet::new(dims, DMatrix::from_column_slice(dims.dim(), n, &values), None)?)
}

/// Header row required; a final column named `label` holds 0/1 frame labels.
pub fn read_frames_csv(path: &Path) -> Result<FrameSeries, ExperimentError> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let has_label = header.iter().next_back().is_some_and(|h| h.trim() == "label");
    let p = header.len() - usize::from(has_label);
    if p == 0 {
        return Err(ExperimentError::Data(format!("{}: no coordinate columns", path.display())));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let mut row = parse_row(path, line + 1, &rec.map_err(csv_err(path))?)?;
        if has_label {
            let l = row.pop().expect("nonempty row");
            if l != 0.0 && l != 1.0 {
                return Err(ExperimentError::Data(format!("{}: row {}: label {l} is not 0/1", path.display(), line + 1)));
            }
            labels.push(l as u8);
        }
        values.extend(row);
    }
    let n = values.len() / p;
    let frames = DMatrix::from_column_slice(p, n, &values);
    Ok(FrameSeries::new(frames, has_label.then_some(labels))?)
}

pub fn write_frames_csv(path: &Path, prov: &Provenance, series: &FrameSeries) -> Result<(), ExperimentError> {
    let mut header: Vec<String> = (0..series.p()).map(|m| format!("x{m}")).collect();
    header.push("label".into());
    let rows = (0..series.len()).map(|i| {
        let mut row: Vec<String> = series.frames.column(i).iter().map(|v| v.to_string()).collect();
        row.push(series.label(i).to_string());
        row
    });
    write_csv(path, prov, &header, rows)
}

/// Layout: magic, `p`, `T`, seed (each u64 LE), 32-byte config hash, then the
/// `pT × pT` entries row-major as f64 LE.
pub fn write_covariance_bin(path: &Path, prov: &Provenance, sigma: &DenseCovariance) -> Result<(), ExperimentError> {
    let SpaceTimeDims { p, t } = sigma.dims();
    let hash = hex::decode(&prov.config_hash).map_err(|e| ExperimentError::Io(e.to_string()))?;
    let mut w = create(path)?;
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    put(COVARIANCE_MAGIC)?;
    put(&(p as u64).to_le_bytes())?;
    put(&(t as u64).to_le_bytes())?;
    put(&prov.seed.to_le_bytes())?;
    put(&hash)?;
    for row in sigma.matrix().row_iter() {
        for v in row.iter() {
            put(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_covariance_bin(path: &Path) -> Result<(DenseCovariance, Provenance), ExperimentError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let bad = |what: &str| ExperimentError::Data(format!("{}: {what}", path.display()));
    if bytes.len() < 64 || &bytes[..8] != COVARIANCE_MAGIC {
        return Err(bad("not a covariance file"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    let (p, t, seed) = (word(1) as usize, word(2) as usize, word(3));
    let dims = SpaceTimeDims::new(p, t)?;
    let dim = dims.dim();
    let body = &bytes[64..];
    if body.len() != dim * dim * 8 {
        return Err(bad("truncated entries"));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let sigma = DenseCovariance::new(dims, DMatrix::from_row_slice(dim, dim, &values))?;
    Ok((sigma, Provenance { config_hash: hex::encode(&bytes[32..64]), seed }))
}
