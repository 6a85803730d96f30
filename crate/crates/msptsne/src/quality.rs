//! Neighborhood-preservation quality assessment.
//!
//! `Q_NX(K)` is the average fraction of each point's K nearest neighbors in
//! the data space that are also among its K nearest neighbors in the
//! embedding, for K = 1..N-2. Random embeddings score K/(N-1) in
//! expectation, so `R_NX(K)` rescales the curve to put random at 0 and
//! perfect at 1. The scalar summary is the area under R_NX with 1/K weights,
//! which emphasizes the (usually more interesting) small neighborhoods.
//!
//! Ranking ties are broken by ascending point index, so curves are exactly
//! reproducible.

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::similarities::{self, squared_euclidean_distances, DistanceMatrix};

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least {min} points, got {n}")]
    TooFewPoints { n: usize, min: usize },
    #[error("point counts disagree: {a} vs {b}")]
    SizeMismatch { a: usize, b: usize },
    #[error(transparent)]
    Similarities(#[from] similarities::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Full neighbor ranking per point: row i lists the other N-1 indices by
/// ascending distance, ties by ascending index.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    order: Vec<Vec<usize>>,
}

impl NeighborTable {
    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Neighbor indices of point `i`, nearest first.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.order[i]
    }
}

/// Q_NX and R_NX over K = 1..N-2 plus the 1/K-weighted AUC.
#[derive(Debug, Clone)]
pub struct QualityCurve {
    pub n: usize,
    pub qnx: Vec<f64>,
    pub rnx: Vec<f64>,
    pub auc: f64,
}

/// Rank all points by distance from each point.
pub fn neighbor_table(d2: &DistanceMatrix) -> Result<NeighborTable> {
    let n = d2.n();
    if n < 3 {
        return Err(Error::TooFewPoints { n, min: 3 });
    }
    let values = d2.values();
    let order: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            idx.sort_unstable_by(|&a, &b| {
                values[[i, a]]
                    .partial_cmp(&values[[i, b]])
                    .expect("finite distances")
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();
    Ok(NeighborTable { order })
}

/// Q_NX over K = 1..N-2 via an incremental sweep.
///
/// For each point the LD rank of every HD neighbor is bucketed once, so the
/// whole curve costs O(N) per point after the tables exist.
pub fn qnx_curve(hd: &NeighborTable, ld: &NeighborTable) -> Result<Vec<f64>> {
    let n = hd.n();
    if ld.n() != n {
        return Err(Error::SizeMismatch { a: n, b: ld.n() });
    }
    let k_max = n - 2;
    let mut totals = vec![0u64; k_max]; // summed intersection sizes per K

    let mut ld_rank = vec![0usize; n];
    for i in 0..n {
        // 1-based rank of point j in i's LD ordering
        for (pos, &j) in ld.neighbors(i).iter().enumerate() {
            ld_rank[j] = pos + 1;
        }
        // bucket[r]: how many of the first k HD neighbors have LD rank r
        let mut bucket = vec![0u32; n];
        let mut intersection = 0u64;
        for k in 1..=k_max {
            let r = ld_rank[hd.neighbors(i)[k - 1]];
            // HD neighbors seen earlier whose LD rank is exactly k join now
            intersection += u64::from(bucket[k]);
            if r <= k {
                intersection += 1;
            }
            bucket[r] += 1;
            totals[k - 1] += intersection;
        }
    }

    Ok(totals
        .iter()
        .enumerate()
        .map(|(idx, &t)| t as f64 / ((idx + 1) as f64 * n as f64))
        .collect())
}

/// Rescale Q_NX so that a random embedding scores 0 and a perfect one 1:
/// `R_NX(K) = ((N-1) Q_NX(K) - K) / (N-1-K)`.
pub fn rnx_curve(qnx: &[f64], n: usize) -> Vec<f64> {
    let n1 = (n - 1) as f64;
    qnx.iter()
        .enumerate()
        .map(|(idx, &q)| {
            let k = (idx + 1) as f64;
            (n1 * q - k) / (n1 - k)
        })
        .collect()
}

/// Area under R_NX with 1/K weights, normalized into [-1, 1].
pub fn auc_log_k(rnx: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, &r) in rnx.iter().enumerate() {
        let k = (idx + 1) as f64;
        num += r / k;
        den += 1.0 / k;
    }
    num / den
}

/// Full pipeline: distances, rankings, Q_NX, R_NX and AUC for a pair of
/// data/embedding matrices with matching rows.
///
/// For the extended (out-of-sample) scenario the caller passes the union of
/// training and test rows, training rows first, and the whole union is
/// scored as one set.
pub fn evaluate_embedding(hd: &Array2<f64>, ld: &Array2<f64>) -> Result<QualityCurve> {
    let n = hd.nrows();
    if ld.nrows() != n {
        return Err(Error::SizeMismatch { a: n, b: ld.nrows() });
    }
    if n < 4 {
        return Err(Error::TooFewPoints { n, min: 4 });
    }
    let hd_table = neighbor_table(&squared_euclidean_distances(hd)?)?;
    let ld_table = neighbor_table(&squared_euclidean_distances(ld)?)?;
    let qnx = qnx_curve(&hd_table, &ld_table)?;
    let rnx = rnx_curve(&qnx, n);
    let auc = auc_log_k(&rnx);
    Ok(QualityCurve { n, qnx, rnx, auc })
}
