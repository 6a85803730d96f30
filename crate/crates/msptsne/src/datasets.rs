//! Data ingestion, synthetic generation, splitting and light preprocessing.
//!
//! CSV files are comma-separated decimal floats with no header by default
//! (an option skips one header line) and an optional trailing integer label
//! column. Floats are written with 17 significant digits, which round-trips
//! f64 exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset must have at least {min} points, got {n}")]
    TooFewPoints { n: usize, min: usize },
    #[error("noise standard deviation must be nonnegative, got {0}")]
    NegativeNoise(f64),
    #[error("{path}: file is empty")]
    EmptyFile { path: String },
    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    RaggedRow {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: column {column}: cannot parse {kind} from {value:?}")]
    BadCell {
        path: String,
        line: usize,
        column: usize,
        kind: &'static str,
        value: String,
    },
    #[error("{path}:{line}: non-finite value")]
    NonFiniteValue { path: String, line: usize },
    #[error("test fraction must be in (0, 1), got {0}")]
    BadTestFraction(f64),
    #[error("split would leave an empty {side} set (n = {n}, test fraction {fraction})")]
    EmptySplit {
        side: &'static str,
        n: usize,
        fraction: f64,
    },
    #[error("labels length {labels} does not match {n} rows")]
    LabelLengthMismatch { labels: usize, n: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// A named data matrix with optional per-row integer labels. Labels are
/// carried through for output annotation only and never enter training.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub labels: Option<Vec<i64>>,
    pub name: String,
}

/// Disjoint train/test index sets covering 0..N-1.
#[derive(Debug, Clone)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

/// Closed 3-D helix: `(cos 2 pi t, sin 2 pi t, cos 2 pi coils t)` sampled at
/// t = i/n, with isotropic Gaussian noise of the given standard deviation.
pub fn gen_helix(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    gen_helix_coils(n, 10, noise_sd, seed)
}

/// [`gen_helix`] with a configurable number of coils.
pub fn gen_helix_coils(n: usize, coils: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n < 8 {
        return Err(Error::TooFewPoints { n, min: 8 });
    }
    if noise_sd < 0.0 {
        return Err(Error::NegativeNoise(noise_sd));
    }
    let mut x = Array2::zeros((n, 3));
    for i in 0..n {
        let t = i as f64 / n as f64;
        let angle = 2.0 * std::f64::consts::PI * t;
        x[[i, 0]] = angle.cos();
        x[[i, 1]] = angle.sin();
        x[[i, 2]] = (coils as f64 * angle).cos();
    }
    if noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sd).expect("validated sd");
        for v in x.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(Dataset {
        x,
        labels: None,
        name: format!("helix-{n}"),
    })
}

/// Parse a CSV of decimal floats; when `has_labels`, the last column is an
/// integer label. Errors carry 1-based line numbers.
pub fn load_csv(path: &Path, has_labels: bool, skip_header: bool) -> Result<Dataset> {
    let display = path.display().to_string();
    let content = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut expected_cols: Option<usize> = None;

    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if skip_header && idx == 0 {
            continue;
        }
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').collect();
        let expected = *expected_cols.get_or_insert(cells.len());
        if cells.len() != expected {
            return Err(Error::RaggedRow {
                path: display,
                line,
                expected,
                found: cells.len(),
            });
        }
        let feature_count = if has_labels { expected - 1 } else { expected };
        if has_labels && expected < 2 {
            return Err(Error::RaggedRow {
                path: display,
                line,
                expected: 2,
                found: expected,
            });
        }
        let mut row = Vec::with_capacity(feature_count);
        for (c, cell) in cells.iter().take(feature_count).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::BadCell {
                path: display.clone(),
                line,
                column: c + 1,
                kind: "number",
                value: cell.trim().to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: display,
                    line,
                });
            }
            row.push(v);
        }
        if has_labels {
            let cell = cells[expected - 1].trim();
            let label: i64 = cell.parse().map_err(|_| Error::BadCell {
                path: display.clone(),
                line,
                column: expected,
                kind: "integer label",
                value: cell.to_string(),
            })?;
            labels.push(label);
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(Error::EmptyFile { path: display });
    }
    let n = rows.len();
    let m = rows[0].len();
    let mut x = Array2::zeros((n, m));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| display.clone());
    Ok(Dataset {
        x,
        labels: if has_labels { Some(labels) } else { None },
        name,
    })
}

/// Write a data matrix (and optional labels as a trailing integer column) so
/// that [`load_csv`] recovers the exact same values.
pub fn save_csv(x: &Array2<f64>, labels: Option<&[i64]>, path: &Path) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != x.nrows() {
            return Err(Error::LabelLengthMismatch {
                labels: l.len(),
                n: x.nrows(),
            });
        }
    }
    let mut out = String::new();
    for (i, row) in x.rows().into_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // 17 significant digits reproduce any f64 exactly
            let _ = write!(out, "{v:.16e}");
        }
        if let Some(l) = labels {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Seeded uniform shuffle into disjoint test/train index sets with
/// |test| = round(test_fraction * n).
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::BadTestFraction(test_fraction));
    }
    let test_size = (test_fraction * n as f64).round() as usize;
    if test_size == 0 {
        return Err(Error::EmptySplit {
            side: "test",
            n,
            fraction: test_fraction,
        });
    }
    if test_size >= n {
        return Err(Error::EmptySplit {
            side: "train",
            n,
            fraction: test_fraction,
        });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let test_indices = indices[..test_size].to_vec();
    let train_indices = indices[test_size..].to_vec();
    Ok(Split {
        train_indices,
        test_indices,
        seed,
    })
}

/// Rows of `x` selected by `indices`, in order.
pub fn take_rows(x: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), x.ncols()));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// Per-feature min-max scaling to [0, 1]; constant features map to 0.
pub fn min_max_scale(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut col in out.columns_mut() {
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        if range > 0.0 {
            col.mapv_inplace(|v| (v - min) / range);
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// Add seeded isotropic Gaussian noise; breaks exact duplicate rows ahead of
/// the precision search.
pub fn jitter(x: &Array2<f64>, sd: f64, seed: u64) -> Result<Array2<f64>> {
    if sd < 0.0 {
        return Err(Error::NegativeNoise(sd));
    }
    let mut out = x.clone();
    if sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sd).expect("validated sd");
        for v in out.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}
