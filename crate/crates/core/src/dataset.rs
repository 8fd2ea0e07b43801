//! Logit/label datasets, their on-disk formats, and the row softmax.
//!
//! Two formats are supported:
//!
//! * CSV with header `logit_0,...,logit_{L-1},label`, one sample per line.
//! * Binary: magic `HCAL`, `u32` version (1), `u32` N, `u32` L, then N*L
//!   `f32` logits row-major, then N `u32` labels. Everything little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HcalError, Result};

const MAGIC: &[u8; 4] = b"HCAL";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// Guess from the file extension; anything that is not `.csv` is binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

impl FromStr for Format {
    type Err = HcalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "binary" | "bin" => Ok(Format::Binary),
            other => Err(HcalError::config("format", format!("unknown format `{other}`"))),
        }
    }
}

/// N x L logits with one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDataset {
    logits: Array2<f64>,
    labels: Vec<usize>,
    name: String,
}

impl LogitDataset {
    /// Validates finiteness, label range, N >= 1 and L >= 2.
    pub fn new(logits: Array2<f64>, labels: Vec<usize>, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let (n, l) = logits.dim();
        if n == 0 {
            return Err(HcalError::Empty(name));
        }
        if l < 2 {
            return Err(HcalError::Shape(format!("{name}: need at least 2 classes, got {l}")));
        }
        if labels.len() != n {
            return Err(HcalError::Shape(format!(
                "{name}: {n} logit rows but {} labels",
                labels.len()
            )));
        }
        for (row, r) in logits.rows().into_iter().enumerate() {
            if let Some(col) = r.iter().position(|v| !v.is_finite()) {
                return Err(HcalError::NonFinite { row, col });
            }
        }
        if let Some(row) = labels.iter().position(|&y| y >= l) {
            return Err(HcalError::LabelOutOfRange {
                row,
                label: labels[row] as u64,
                n_classes: l,
            });
        }
        Ok(LogitDataset { logits, labels, name })
    }

    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.logits.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.logits.ncols()
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize], name: impl Into<String>) -> Result<LogitDataset> {
        let logits = self.logits.select(Axis(0), idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        LogitDataset::new(logits, labels, name)
    }

    pub fn load(path: impl AsRef<Path>, format: Format) -> Result<Self> {
        match format {
            Format::Csv => load_csv(path.as_ref()),
            Format::Binary => load_binary(path.as_ref()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: Format) -> Result<()> {
        match format {
            Format::Csv => save_csv(self, path.as_ref()),
            Format::Binary => save_binary(self, path.as_ref()),
        }
    }
}

/// Row-stochastic N x L matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Array2<f64>);

impl ProbMatrix {
    pub const ROW_SUM_TOL: f64 = 1e-9;

    /// Checks entries are in [0, 1] and every row sums to 1 within [`Self::ROW_SUM_TOL`].
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (i, row) in probs.rows().into_iter().enumerate() {
            if let Some(j) = row.iter().position(|p| !(0.0..=1.0).contains(p)) {
                return Err(HcalError::Shape(format!(
                    "probability {} outside [0,1] at ({i}, {j})",
                    row[j]
                )));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > Self::ROW_SUM_TOL {
                return Err(HcalError::Shape(format!("row {i} sums to {s}")));
            }
        }
        Ok(ProbMatrix(probs))
    }

    pub(crate) fn from_raw(probs: Array2<f64>) -> Self {
        ProbMatrix(probs)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn n_samples(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Top-label confidence and argmax (lowest index on ties) per row.
    pub fn top_label(&self) -> (Vec<f64>, Vec<usize>) {
        self.0
            .rows()
            .into_iter()
            .map(|r| {
                let k = argmax(r.as_slice().expect("row-major"));
                (r[k], k)
            })
            .unzip()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Softmax of one row after subtracting its maximum, written into `out`.
pub(crate) fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Numerically stable row softmax.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> ProbMatrix {
    let mut out = Array2::<f64>::zeros(logits.dim());
    for (src, mut dst) in logits.rows().into_iter().zip(out.rows_mut()) {
        let src = src.to_vec();
        softmax_into(&src, dst.as_slice_mut().expect("contiguous"));
    }
    ProbMatrix(out)
}

/// Seeded shuffle, then the first `floor(fraction * N)` rows go left.
pub fn split_dataset(
    ds: &LogitDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LogitDataset, LogitDataset)> {
    let n = ds.n_samples();
    let n_left = (fraction * n as f64).floor();
    if !(fraction > 0.0 && fraction < 1.0) || n_left < 1.0 || n_left as usize >= n {
        return Err(HcalError::DegenerateSplit { fraction, n });
    }
    let n_left = n_left as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let left = ds.select(&idx[..n_left], format!("{}[split0]", ds.name))?;
    let right = ds.select(&idx[n_left..], format!("{}[split1]", ds.name))?;
    Ok((left, right))
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

fn load_csv(path: &Path) -> Result<LogitDataset> {
    let file = File::open(path).map_err(|e| HcalError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let malformed = |row: usize, msg: String| HcalError::Malformed {
        path: path.to_path_buf(),
        row,
        msg,
    };

    let headers = reader.headers().map_err(|e| malformed(0, e.to_string()))?.clone();
    let width = headers.len();
    if width < 3 || headers.get(width - 1) != Some("label") {
        return Err(malformed(
            0,
            "header must be logit_0,...,logit_{L-1},label with L >= 2".into(),
        ));
    }
    for (j, h) in headers.iter().take(width - 1).enumerate() {
        if h != format!("logit_{j}") {
            return Err(malformed(0, format!("expected column `logit_{j}`, found `{h}`")));
        }
    }
    let n_classes = width - 1;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(row, e.to_string()))?;
        if record.len() != width {
            return Err(malformed(
                row,
                format!("expected {width} columns, found {}", record.len()),
            ));
        }
        for (col, field) in record.iter().take(n_classes).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| malformed(row, format!("cannot parse `{field}` as a number")))?;
            if !v.is_finite() {
                return Err(HcalError::NonFinite { row, col });
            }
            values.push(v);
        }
        let field = &record[n_classes];
        let label: u64 = field
            .parse()
            .map_err(|_| malformed(row, format!("cannot parse label `{field}`")))?;
        if label >= n_classes as u64 {
            return Err(HcalError::LabelOutOfRange {
                row,
                label,
                n_classes,
            });
        }
        labels.push(label as usize);
    }
    if labels.is_empty() {
        return Err(HcalError::Empty(path.display().to_string()));
    }
    let logits = Array2::from_shape_vec((labels.len(), n_classes), values)
        .map_err(|e| HcalError::Shape(e.to_string()))?;
    LogitDataset::new(logits, labels, dataset_name(path))
}

fn save_csv(ds: &LogitDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| HcalError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| HcalError::io(path, e);
    let header: Vec<String> = (0..ds.n_classes())
        .map(|j| format!("logit_{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (row, &y) in ds.logits.rows().into_iter().zip(&ds.labels) {
        for v in row {
            // shortest representation that parses back to the same f64
            write!(w, "{v:?},").map_err(io)?;
        }
        writeln!(w, "{y}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn load_binary(path: &Path) -> Result<LogitDataset> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| HcalError::io(path, e))?;
    let bad = |msg: String| HcalError::Malformed {
        path: path.to_path_buf(),
        row: 0,
        msg,
    };
    if bytes.is_empty() {
        return Err(HcalError::Empty(path.display().to_string()));
    }
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("missing HCAL header".into()));
    }
    let version = read_u32(&bytes, 4);
    if version != BINARY_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = read_u32(&bytes, 8) as usize;
    let l = read_u32(&bytes, 12) as usize;
    let expected = 16 + 4 * n * l + 4 * n;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for N={n}, L={l}, found {}",
            bytes.len()
        )));
    }
    let mut logits = Vec::with_capacity(n * l);
    for (k, chunk) in bytes[16..16 + 4 * n * l].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(HcalError::NonFinite { row: k / l, col: k % l });
        }
        logits.push(v as f64);
    }
    let mut labels = Vec::with_capacity(n);
    for (row, chunk) in bytes[16 + 4 * n * l..].chunks_exact(4).enumerate() {
        let y = u32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if y as usize >= l {
            return Err(HcalError::LabelOutOfRange {
                row,
                label: y as u64,
                n_classes: l,
            });
        }
        labels.push(y as usize);
    }
    let logits =
        Array2::from_shape_vec((n, l), logits).map_err(|e| HcalError::Shape(e.to_string()))?;
    LogitDataset::new(logits, labels, dataset_name(path))
}

fn save_binary(ds: &LogitDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| HcalError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| HcalError::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    for v in [BINARY_VERSION, ds.n_samples() as u32, ds.n_classes() as u32] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for &v in ds.logits.iter() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    for &y in &ds.labels {
        w.write_all(&(y as u32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}
