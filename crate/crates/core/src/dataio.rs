//! Datasets in LIBSVM sparse text format, deterministic subsampling and a
//! synthetic two-cluster generator with label noise.
//!
//! Labels are normalized on load: any label `> 0` becomes `+1`, everything
//! else `-1`. Feature indices are 1-based and strictly increasing per row.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Stream;

/// One sparse feature: 1-based index and value.
pub type Feature = (u32, f64);

/// An immutable labelled sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Vec<Feature>>,
    labels: Vec<f64>,
    dim: u32,
}

impl Dataset {
    /// Builds a dataset after checking the label and row invariants.
    pub fn new(rows: Vec<Vec<Feature>>, labels: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoSamples);
        }
        if rows.len() != labels.len() {
            return Err(Error::InvalidArgument(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidArgument(format!("label of sample {i} is {} (expected -1 or +1)", labels[i])));
        }
        let mut dim = 0;
        for (i, row) in rows.iter().enumerate() {
            check_row(row).map_err(|msg| Error::InvalidArgument(format!("sample {i}: {msg}")))?;
            if let Some(&(last, _)) = row.last() {
                dim = dim.max(last);
            }
        }
        Ok(Self { rows, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest feature index present.
    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[Feature] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<Feature>] {
        &self.rows
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut rows = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
            rows.push(self.rows[i].clone());
            labels.push(self.labels[i]);
        }
        Self::new(rows, labels)
    }

    /// Copy of the dataset with the given labels replaced.
    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self> {
        Self::new(self.rows.clone(), labels)
    }

    /// Serializes to LIBSVM text. Values use Rust's shortest round-trip
    /// representation, so [`parse_libsvm`] reproduces the dataset exactly.
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for (row, &y) in self.rows.iter().zip(&self.labels) {
            out.push_str(if y > 0.0 { "+1" } else { "-1" });
            for &(idx, val) in row {
                let _ = write!(out, " {idx}:{val}");
            }
            out.push('\n');
        }
        out
    }
}

fn check_row(row: &[Feature]) -> std::result::Result<(), String> {
    let mut prev = 0u32;
    for &(idx, val) in row {
        if idx == 0 {
            return Err("feature index 0 (indices are 1-based)".into());
        }
        if idx <= prev {
            return Err(format!("feature indices not strictly increasing ({prev} then {idx})"));
        }
        if !val.is_finite() {
            return Err(format!("non-finite value at index {idx}"));
        }
        prev = idx;
    }
    Ok(())
}

/// Parses LIBSVM text: one `<label> <idx>:<val> ...` sample per nonempty line.
pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let label: f64 = label_tok.parse().map_err(|_| err(format!("invalid label `{label_tok}`")))?;
        if !label.is_finite() {
            return Err(err(format!("invalid label `{label_tok}`")));
        }
        let mut row = Vec::new();
        for tok in tokens {
            let (idx_s, val_s) =
                tok.split_once(':').ok_or_else(|| err(format!("expected <index>:<value>, got `{tok}`")))?;
            let idx: u32 = idx_s.parse().map_err(|_| err(format!("invalid feature index `{idx_s}`")))?;
            let val: f64 = val_s.parse().map_err(|_| err(format!("invalid feature value `{val_s}`")))?;
            row.push((idx, val));
        }
        check_row(&row).map_err(err)?;
        rows.push(row);
        labels.push(if label > 0.0 { 1.0 } else { -1.0 });
    }
    if rows.is_empty() {
        return Err(Error::NoSamples);
    }
    Dataset::new(rows, labels)
}

pub fn read_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_libsvm(&std::fs::read_to_string(path)?)
}

/// Draws `m` samples without replacement (partial Fisher–Yates over a
/// ChaCha8 stream seeded with `seed`).
pub fn subsample(ds: &Dataset, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 || m > ds.len() {
        return Err(Error::InvalidArgument(format!("cannot draw {m} samples from a dataset of {}", ds.len())));
    }
    let picked = Stream::new(seed, 0).partial_permutation(ds.len(), m);
    ds.select(&picked)
}

/// Two unit-variance Gaussian clusters in 2-D centred at `(±separation/2, 0)`.
///
/// Labels alternate `+1, -1, ...` so classes are balanced. Then
/// `round(flip_fraction * n)` samples, chosen from an independent stream, get
/// their label negated. Features depend only on `(n, separation, seed)`.
pub fn make_synthetic(n: usize, flip_fraction: f64, separation: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    if !(0.0..=0.5).contains(&flip_fraction) {
        return Err(Error::InvalidArgument(format!("flip fraction {flip_fraction} outside [0, 0.5]")));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!("separation {separation} must be positive")));
    }
    let mut points = Stream::new(seed, 0);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        let x1 = y * separation / 2.0 + points.normal();
        let x2 = points.normal();
        rows.push(vec![(1, x1), (2, x2)]);
        labels.push(y);
    }
    let flips = (flip_fraction * n as f64).round() as usize;
    for i in Stream::new(seed, 1).partial_permutation(n, flips) {
        labels[i] = -labels[i];
    }
    Dataset::new(rows, labels)
}
