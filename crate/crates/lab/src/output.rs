//! Bit-stable artifact writing.
//!
//! Numbers are printed with 17 significant digits in scientific notation,
//! which round-trips every `f64`. CSV uses `,` and `\n`. Files are written
//! through an [`OutputSet`] that deletes everything it wrote unless the run
//! is committed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use nullctl_core::paths::BrownianPath;
use serde::Serialize;
use serde_json::value::RawValue;

use crate::LabError;

/// 17 significant digits; non-finite values print as `nan`, `inf`, `-inf`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// `serialize_with` helper emitting [`num`] as a raw JSON number (`null`
/// when non-finite).
pub fn json_num<S: serde::Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    let text = if x.is_finite() { num(*x) } else { "null".into() };
    RawValue::from_string(text)
        .map_err(serde::ser::Error::custom)?
        .serialize(s)
}

pub fn json_nums<S: serde::Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for x in xs {
        let text = if x.is_finite() { num(*x) } else { "null".into() };
        seq.serialize_element(&RawValue::from_string(text).map_err(serde::ser::Error::custom)?)?;
    }
    seq.end()
}

/// Rows of text cells; numbers go through [`num`] before they get here.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, LabError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| LabError::Io(e.into_error()))
    }

    /// Parse a CSV produced by [`Table::to_csv`].
    pub fn from_csv(bytes: &[u8]) -> Result<Self, LabError> {
        let mut r = csv::ReaderBuilder::new().from_reader(bytes);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, LabError> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LabError::Usage(format!("missing column `{name}`")))?;
        self.rows
            .iter()
            .map(|r| {
                r[j].parse::<f64>()
                    .map_err(|_| LabError::Usage(format!("column `{name}`: bad number `{}`", r[j])))
            })
            .collect()
    }
}

/// Files written by one run; removed on drop unless [`OutputSet::commit`] ran.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Result<Self, LabError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn names(&self) -> Vec<String> {
        self.written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, LabError> {
        let path = self.dir.join(name);
        if !self.written.contains(&path) {
            self.written.push(path.clone());
        }
        fs::write(&path, bytes)?;
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<PathBuf, LabError> {
        let bytes = table.to_csv()?;
        self.write(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, LabError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn commit(mut self) -> Vec<String> {
        self.committed = true;
        self.names()
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// Little-endian dump: `seed: u64`, `dt: f64`, `T: f64`, then increments.
pub fn encode_path(path: &BrownianPath) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * path.n_steps());
    out.extend_from_slice(&path.seed().to_le_bytes());
    out.extend_from_slice(&path.dt().to_le_bytes());
    out.extend_from_slice(&path.horizon().to_le_bytes());
    for dw in path.increments() {
        out.extend_from_slice(&dw.to_le_bytes());
    }
    out
}

pub fn decode_path(mut bytes: &[u8]) -> Result<BrownianPath, LabError> {
    let mut word = [0u8; 8];
    let mut next = |b: &mut &[u8]| -> Result<[u8; 8], LabError> {
        b.read_exact(&mut word)
            .map_err(|_| LabError::Usage("truncated path dump".into()))?;
        Ok(word)
    };
    let seed = u64::from_le_bytes(next(&mut bytes)?);
    let dt = f64::from_le_bytes(next(&mut bytes)?);
    let horizon = f64::from_le_bytes(next(&mut bytes)?);
    if !bytes.len().is_multiple_of(8) {
        return Err(LabError::Usage("path dump payload is not a whole number of f64".into()));
    }
    let inc = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(BrownianPath::from_increments(seed, dt, horizon, inc)?)
}
