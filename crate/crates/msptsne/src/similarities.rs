//! Pairwise distances and the similarity structures built from them.
//!
//! Data-space (HD) similarities are Gaussian neighborhoods: row i of the
//! squared-distance matrix is passed through `exp(-beta_i * d2 / 2)` and
//! normalized, with the precision `beta_i` tuned by binary search so that the
//! row's perplexity (exponential of its Shannon entropy) hits a target
//! neighborhood size. The symmetrized form `(s + s^T) / 2N` sums to one
//! globally. Multi-scale similarities average the symmetrized matrices over
//! the dyadic perplexity ladder 2, 4, ..., 2^H with H = round(log2(N/2)),
//! which removes the perplexity parameter entirely. Embedding-space (LD)
//! similarities use a Student-t kernel with one degree of freedom.
//!
//! All operations are pure; row-level work is parallelized with rayon and is
//! bit-identical to the sequential order because rows never share state.

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

/// Lower bound of the precision search bracket.
const BETA_MIN: f64 = 1e-20;
/// Upper bound of the precision search bracket.
const BETA_MAX: f64 = 1e20;
/// Cap on bisection iterations per row.
const MAX_BISECT_ITERS: usize = 200;
/// A found precision must reproduce the target entropy this closely (natural log).
pub const ENTROPY_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least {min} points, got {n}")]
    TooFewPoints { n: usize, min: usize },
    #[error("non-finite coordinate in row {row}")]
    NonFiniteRow { row: usize },
    #[error("too few points for multi-scale: N = {n} < 8")]
    TooFewForMultiscale { n: usize },
    #[error("target perplexity {target} outside valid range (1, {max}]")]
    InvalidPerplexity { target: f64, max: f64 },
    #[error("invalid squared distance {value}")]
    InvalidDistance { value: f64 },
    #[error("all distances are zero (point duplicates every other point)")]
    DegenerateDistances,
    #[error("perplexity {target} not attainable within precision bounds")]
    PerplexityNotAttained { target: f64 },
    #[error("row {row}: {source}")]
    Row { row: usize, source: Box<Error> },
    #[error("expected a {expected:?}-normalized similarity matrix, got {got:?}")]
    WrongNormalization {
        expected: Normalization,
        got: Normalization,
    },
    #[error("matrix size mismatch: {a} vs {b}")]
    SizeMismatch { a: usize, b: usize },
}

impl Error {
    fn at_row(self, row: usize) -> Error {
        Error::Row {
            row,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// How a [`SimilarityMatrix`] is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Every row sums to one (conditional similarities).
    RowStochastic,
    /// All entries sum to one (joint similarities).
    GlobalSumOne,
}

/// Symmetric matrix of squared Euclidean distances with zero diagonal.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    d2: Array2<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.d2.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.d2
    }
}

/// Inverse variance of one point's Gaussian neighborhood.
#[derive(Debug, Clone, Copy)]
pub struct Precision {
    pub beta: f64,
}

/// Nonnegative pairwise similarities with zero diagonal and a declared
/// normalization.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    s: Array2<f64>,
    normalization: Normalization,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.s.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.s
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }
}

/// The dyadic perplexity ladder used by the multi-scale similarities.
#[derive(Debug, Clone)]
pub struct ScaleSet {
    perplexities: Vec<f64>,
}

impl ScaleSet {
    pub fn num_scales(&self) -> usize {
        self.perplexities.len()
    }

    pub fn perplexities(&self) -> &[f64] {
        &self.perplexities
    }
}

/// Squared Euclidean distances between all rows of `x`.
///
/// The result is bitwise symmetric: entry (i, j) and entry (j, i) run the
/// same accumulation over coordinates, and squaring makes the sign of the
/// difference irrelevant.
pub fn squared_euclidean_distances(x: &Array2<f64>) -> Result<DistanceMatrix> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewPoints { n, min: 2 });
    }
    for (i, row) in x.rows().into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteRow { row: i });
        }
    }

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let xi = xi.as_slice().expect("row-major data");
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let xj = x.row(j);
                    let xj = xj.as_slice().expect("row-major data");
                    xi.iter()
                        .zip(xj)
                        .map(|(a, b)| {
                            let d = a - b;
                            d * d
                        })
                        .sum()
                })
                .collect()
        })
        .collect();

    let mut d2 = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            d2[[i, j]] = v;
        }
    }
    Ok(DistanceMatrix { d2 })
}

/// Shannon entropy (natural log) of the Gaussian row distribution at a given
/// precision; optionally writes the probabilities.
///
/// Exponents are shifted by the row maximum before exponentiation so large
/// precisions cannot underflow the whole row to zero.
fn row_entropy(d2_row: &[f64], beta: f64, mut probs: Option<&mut [f64]>) -> f64 {
    let d_min = d2_row.iter().copied().fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    let mut weighted_exponent = 0.0;
    for (j, &d) in d2_row.iter().enumerate() {
        let e = -beta * (d - d_min) / 2.0;
        let w = e.exp();
        z += w;
        if w > 0.0 {
            weighted_exponent += w * e;
        }
        if let Some(p) = probs.as_deref_mut() {
            p[j] = w;
        }
    }
    if let Some(p) = probs {
        for v in p.iter_mut() {
            *v /= z;
        }
    }
    z.ln() - weighted_exponent / z
}

/// Finds the precision whose Gaussian row distribution has perplexity
/// `target_perplexity`, by bracketing (doubling/halving from beta = 1) and
/// bisection on the entropy equation.
///
/// The bisection runs to bracket exhaustion rather than stopping at the
/// entropy tolerance, so the result is reproducible to machine precision;
/// the tolerance only decides success afterwards.
///
/// Tied minimum distances bound the row entropy below by ln(multiplicity).
/// A target under that floor has no solution at any precision; the limit
/// distribution (uniform over the tied nearest neighbors) is returned with a
/// logged notice instead of an error.
pub fn precision_for_perplexity(d2_row: &[f64], target_perplexity: f64) -> Result<Precision> {
    let max = d2_row.len() as f64;
    if !(target_perplexity > 1.0 && target_perplexity <= max) {
        return Err(Error::InvalidPerplexity {
            target: target_perplexity,
            max,
        });
    }
    for &d in d2_row {
        if !d.is_finite() || d < 0.0 {
            return Err(Error::InvalidDistance { value: d });
        }
    }
    if d2_row.iter().all(|&d| d == 0.0) {
        return Err(Error::DegenerateDistances);
    }

    let h_target = target_perplexity.ln();
    let entropy_gap = |beta: f64| row_entropy(d2_row, beta, None) - h_target;
    let not_attained = || Error::PerplexityNotAttained {
        target: target_perplexity,
    };

    // Bracket the root of the (decreasing) entropy gap: f(lo) > 0 > f(hi).
    let f1 = entropy_gap(1.0);
    if f1 == 0.0 {
        return Ok(Precision { beta: 1.0 });
    }
    let (mut lo, mut hi) = if f1 > 0.0 {
        let mut hi = 2.0;
        while entropy_gap(hi) > 0.0 {
            hi *= 2.0;
            if hi > BETA_MAX {
                if entropy_gap(BETA_MAX).abs() <= ENTROPY_TOL {
                    return Ok(Precision { beta: BETA_MAX });
                }
                let d_min = d2_row.iter().copied().fold(f64::INFINITY, f64::min);
                let multiplicity = d2_row.iter().filter(|&&d| d == d_min).count();
                if (multiplicity as f64).ln() >= h_target {
                    log::warn!(
                        "perplexity {target_perplexity} is below the entropy floor of a row \
                         with {multiplicity} tied nearest neighbors; using the limit distribution"
                    );
                    return Ok(Precision { beta: BETA_MAX });
                }
                return Err(not_attained());
            }
        }
        (hi / 2.0, hi)
    } else {
        let mut lo = 0.5;
        while entropy_gap(lo) < 0.0 {
            lo /= 2.0;
            if lo < BETA_MIN {
                return if entropy_gap(BETA_MIN).abs() <= ENTROPY_TOL {
                    Ok(Precision { beta: BETA_MIN })
                } else {
                    Err(not_attained())
                };
            }
        }
        (lo, lo * 2.0)
    };

    for _ in 0..MAX_BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket exhausted at f64 resolution
        }
        let f = entropy_gap(mid);
        if f == 0.0 {
            return Ok(Precision { beta: mid });
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let beta = 0.5 * (lo + hi);
    if entropy_gap(beta).abs() <= ENTROPY_TOL {
        Ok(Precision { beta })
    } else {
        Err(not_attained())
    }
}

/// Row-stochastic Gaussian similarities at a single perplexity.
///
/// Row i holds `exp(-beta_i * d2_ij / 2)` normalized over j != i, with the
/// precision of each row tuned independently.
pub fn hd_similarities_fixed(d2: &DistanceMatrix, perplexity: f64) -> Result<SimilarityMatrix> {
    let n = d2.n();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut others = Vec::with_capacity(n - 1);
            for j in 0..n {
                if j != i {
                    others.push(d2.d2[[i, j]]);
                }
            }
            let precision =
                precision_for_perplexity(&others, perplexity).map_err(|e| e.at_row(i))?;
            let mut probs = vec![0.0; n - 1];
            row_entropy(&others, precision.beta, Some(&mut probs));
            // scatter back around the diagonal
            let mut row = vec![0.0; n];
            let mut k = 0;
            for (j, slot) in row.iter_mut().enumerate() {
                if j != i {
                    *slot = probs[k];
                    k += 1;
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut s = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            s[[i, j]] = v;
        }
    }
    Ok(SimilarityMatrix {
        s,
        normalization: Normalization::RowStochastic,
    })
}

/// t-SNE symmetrization: `(s_ij + s_ji) / 2N`, globally summing to one.
///
/// Each unordered pair is computed once and written to both entries, so the
/// output is bitwise symmetric.
pub fn symmetrize_tsne(sigma: &SimilarityMatrix) -> Result<SimilarityMatrix> {
    if sigma.normalization != Normalization::RowStochastic {
        return Err(Error::WrongNormalization {
            expected: Normalization::RowStochastic,
            got: sigma.normalization,
        });
    }
    let n = sigma.n();
    let scale = 2.0 * n as f64;
    let mut t = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (sigma.s[[i, j]] + sigma.s[[j, i]]) / scale;
            t[[i, j]] = v;
            t[[j, i]] = v;
        }
    }
    Ok(SimilarityMatrix {
        s: t,
        normalization: Normalization::GlobalSumOne,
    })
}

/// Number of scales H = round(log2(N / 2)) and the perplexity ladder
/// 2, 4, ..., 2^H.
///
/// A last scale overshooting the attainable range is clamped to N - 2 with a
/// logged notice rather than dropped.
pub fn multiscale_num_levels(n: usize) -> Result<ScaleSet> {
    if n < 8 {
        return Err(Error::TooFewForMultiscale { n });
    }
    let num_scales = (n as f64 / 2.0).log2().round() as u32;
    let mut perplexities: Vec<f64> = (1..=num_scales).map(|h| f64::from(2u32.pow(h))).collect();
    let cap = (n - 2) as f64;
    if let Some(last) = perplexities.last_mut() {
        if *last > cap {
            log::warn!(
                "clamping last multi-scale perplexity {} to N - 2 = {}",
                *last,
                cap
            );
            *last = cap;
        }
    }
    Ok(ScaleSet { perplexities })
}

/// Multi-scale similarities: the average over the perplexity ladder of the
/// symmetrized single-scale matrices.
pub fn hd_similarities_multiscale(d2: &DistanceMatrix) -> Result<SimilarityMatrix> {
    let n = d2.n();
    let scales = multiscale_num_levels(n)?;
    let mut acc = Array2::zeros((n, n));
    for &perplexity in scales.perplexities() {
        let level = symmetrize_tsne(&hd_similarities_fixed(d2, perplexity)?)?;
        acc += &level.s;
    }
    acc /= scales.num_scales() as f64;
    Ok(SimilarityMatrix {
        s: acc,
        normalization: Normalization::GlobalSumOne,
    })
}

/// Student-t similarities (one degree of freedom) of embedding coordinates,
/// normalized over all ordered pairs.
pub fn ld_similarities_student(y: &Array2<f64>) -> Result<SimilarityMatrix> {
    let d2 = squared_euclidean_distances(y)?;
    let n = d2.n();
    let mut s = Array2::zeros((n, n));
    let mut half_total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = 1.0 / (1.0 + d2.d2[[i, j]]);
            s[[i, j]] = w;
            s[[j, i]] = w;
            half_total += w;
        }
    }
    let total = 2.0 * half_total;
    s /= total;
    Ok(SimilarityMatrix {
        s,
        normalization: Normalization::GlobalSumOne,
    })
}
