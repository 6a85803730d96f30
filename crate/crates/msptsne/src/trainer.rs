//! Training loop gluing similarities, loss and the network together.
//!
//! Each batch builds its own data-space similarity matrix (multi-scale or
//! fixed perplexity), maps the batch through the network, forms Student-t
//! similarities of the outputs, and backpropagates the gradient of the
//! Kullback-Leibler divergence between the two. With the full-batch policy
//! (N up to the threshold) the data-space similarities are computed once and
//! reused every epoch, since the batch never changes.

use std::time::Instant;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::neural_net::{self, adam_step, backward, forward, init_mlp, AdamState, MlpModel};
use crate::similarities::{
    self, hd_similarities_fixed, hd_similarities_multiscale, ld_similarities_student,
    squared_euclidean_distances, symmetrize_tsne, Normalization, SimilarityMatrix,
};

/// Floor applied to embedding similarities inside logs and divisions, so
/// distant pairs cannot produce log(0) early in training.
const Q_FLOOR: f64 = 1e-12;

/// Offset added to the user seed for the epoch shuffling stream, keeping it
/// distinct from the weight-initialization stream.
const SHUFFLE_SEED_OFFSET: u64 = 0x5348_5546;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("multiscale mode needs at least 8 points, got {n}")]
    TooFewPointsMultiscale { n: usize },
    #[error("fixed mode needs N > perplexity + 1 (perplexity {perplexity}, N = {n})")]
    TooFewPointsFixed { n: usize, perplexity: f64 },
    #[error(
        "batch contains duplicate points ({source}); deduplicate the input \
         or enable jitter preprocessing"
    )]
    DuplicatePoints { source: similarities::Error },
    #[error("similarity matrices disagree in size: {a} vs {b}")]
    SizeMismatch { a: usize, b: usize },
    #[error("KL divergence is defined here on globally normalized similarities")]
    NotGloballyNormalized,
    #[error("embedding rows {y} do not match similarity size {p}")]
    EmbeddingSizeMismatch { y: usize, p: usize },
    #[error(transparent)]
    Similarities(#[from] similarities::Error),
    #[error(transparent)]
    NeuralNet(#[from] neural_net::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// How data-space similarities are built during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainMode {
    /// Perplexity-free: average over the dyadic perplexity ladder.
    Multiscale,
    /// Classic single-scale similarities at one perplexity.
    Fixed { perplexity: f64 },
}

/// Training hyperparameters. `Default` gives the experiment settings used
/// throughout: multiscale, 500 epochs, Adam at 1e-3, four hidden layers.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    /// Mini-batch size used only when N exceeds `full_batch_threshold`.
    pub batch_size: usize,
    pub full_batch_threshold: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    /// Emit a log line every this many epochs; 0 disables logging.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Multiscale,
            epochs: 500,
            batch_size: 1000,
            full_batch_threshold: 2048,
            learning_rate: 1e-3,
            seed: 42,
            hidden_widths: vec![150, 150, 600, 150],
            output_dim: 2,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 16 {
            return Err(Error::InvalidConfig(format!(
                "batch size must be at least 16, got {}",
                self.batch_size
            )));
        }
        if self.batch_size > self.full_batch_threshold {
            // otherwise a set just above the threshold could not fill one batch
            return Err(Error::InvalidConfig(format!(
                "batch size {} exceeds the full-batch threshold {}",
                self.batch_size, self.full_batch_threshold
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "hidden widths must be nonempty and positive, got {:?}",
                self.hidden_widths
            )));
        }
        if self.output_dim == 0 {
            return Err(Error::InvalidConfig("output dim must be positive".into()));
        }
        if let TrainMode::Fixed { perplexity } = self.mode {
            let cap = (self.batch_size - 1) as f64;
            if !(perplexity > 1.0 && perplexity < cap) {
                return Err(Error::InvalidConfig(format!(
                    "fixed-mode perplexity must lie in (1, batch size - 1) = (1, {cap}), got {perplexity}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-epoch record of a training run plus the embedding of the training set
/// under the final weights.
#[derive(Debug, Clone)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub final_loss: f64,
    pub final_embedding: Array2<f64>,
}

/// Kullback-Leibler divergence between two globally normalized similarity
/// matrices: sum over i != j with p > 0 of p * ln(p / max(q, floor)).
pub fn kl_loss(p: &SimilarityMatrix, q: &SimilarityMatrix) -> Result<f64> {
    if p.n() != q.n() {
        return Err(Error::SizeMismatch { a: p.n(), b: q.n() });
    }
    if p.normalization() != Normalization::GlobalSumOne
        || q.normalization() != Normalization::GlobalSumOne
    {
        return Err(Error::NotGloballyNormalized);
    }
    let mut loss = 0.0;
    for (&pv, &qv) in p.values().iter().zip(q.values()) {
        if pv > 0.0 {
            loss += pv * (pv / qv.max(Q_FLOOR)).ln();
        }
    }
    Ok(loss)
}

/// Gradient of [`kl_loss`] with respect to the embedding coordinates:
/// `dC/dy_i = 4 * sum_j (p_ij - q_ij) (1 + d2_ij)^-1 (y_i - y_j)`.
///
/// `q` must be the Student-t similarities of `y`. Forces between pairs are
/// antisymmetric, so every gradient column sums to zero (the loss is
/// translation invariant).
pub fn kl_grad_embedding(
    p: &SimilarityMatrix,
    q: &SimilarityMatrix,
    y: &Array2<f64>,
) -> Result<Array2<f64>> {
    let n = p.n();
    if q.n() != n {
        return Err(Error::SizeMismatch { a: n, b: q.n() });
    }
    if y.nrows() != n {
        return Err(Error::EmbeddingSizeMismatch { y: y.nrows(), p: n });
    }
    let dims = y.ncols();
    let d2 = squared_euclidean_distances(y)?;
    let pv = p.values();
    let qv = q.values();
    let d2v = d2.values();

    let mut grad = Array2::zeros((n, dims));
    for i in 0..n {
        let yi = y.row(i);
        let mut gi = vec![0.0; dims];
        for j in 0..n {
            if j == i {
                continue;
            }
            let factor = 4.0 * (pv[[i, j]] - qv[[i, j]]) / (1.0 + d2v[[i, j]]);
            let yj = y.row(j);
            for (g, (a, b)) in gi.iter_mut().zip(yi.iter().zip(yj.iter())) {
                *g += factor * (a - b);
            }
        }
        grad.row_mut(i).assign(&ndarray::aview1(&gi));
    }
    Ok(grad)
}

fn is_degenerate_row(e: &similarities::Error) -> bool {
    match e {
        similarities::Error::DegenerateDistances => true,
        similarities::Error::Row { source, .. } => is_degenerate_row(source),
        _ => false,
    }
}

/// Data-space similarities of one batch according to the training mode.
fn batch_similarities(batch: &Array2<f64>, mode: TrainMode) -> Result<SimilarityMatrix> {
    let run = || -> similarities::Result<SimilarityMatrix> {
        let d2 = squared_euclidean_distances(batch)?;
        match mode {
            TrainMode::Multiscale => hd_similarities_multiscale(&d2),
            TrainMode::Fixed { perplexity } => {
                symmetrize_tsne(&hd_similarities_fixed(&d2, perplexity)?)
            }
        }
    };
    run().map_err(|e| {
        if is_degenerate_row(&e) {
            Error::DuplicatePoints { source: e }
        } else {
            Error::Similarities(e)
        }
    })
}

fn check_mode_supported(n: usize, mode: TrainMode) -> Result<()> {
    match mode {
        TrainMode::Multiscale if n < 8 => Err(Error::TooFewPointsMultiscale { n }),
        TrainMode::Fixed { perplexity } if (n as f64) <= perplexity + 1.0 => {
            Err(Error::TooFewPointsFixed { n, perplexity })
        }
        _ => Ok(()),
    }
}

/// One gradient step on a batch; returns the batch loss.
fn train_batch(
    model: &mut MlpModel,
    adam: &mut AdamState,
    batch: &Array2<f64>,
    p: &SimilarityMatrix,
) -> Result<f64> {
    let cache = forward(model, batch)?;
    let q = ld_similarities_student(cache.output())?;
    let loss = kl_loss(p, &q)?;
    let d_y = kl_grad_embedding(p, &q, cache.output())?;
    let grads = backward(model, &cache, &d_y)?;
    adam_step(model, &grads, adam)?;
    Ok(loss)
}

/// Train the parametric map on `x`. Deterministic for a fixed seed and batch
/// policy; the wall-clock entries of the log are the only nondeterministic
/// output.
pub fn fit(x: &Array2<f64>, cfg: &TrainConfig) -> Result<(MlpModel, TrainLog)> {
    cfg.validate()?;
    let (n, m) = x.dim();
    let full_batch = n <= cfg.full_batch_threshold;
    check_mode_supported(if full_batch { n } else { cfg.batch_size }, cfg.mode)?;

    let mut dims = Vec::with_capacity(cfg.hidden_widths.len() + 2);
    dims.push(m);
    dims.extend_from_slice(&cfg.hidden_widths);
    dims.push(cfg.output_dim);
    let mut model = init_mlp(&dims, cfg.seed)?;
    let mut adam = AdamState::new(&model, cfg.learning_rate);

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);

    if full_batch {
        // the batch is the whole set every epoch; build P once
        let p = batch_similarities(x, cfg.mode)?;
        for epoch in 0..cfg.epochs {
            let start = Instant::now();
            let loss = train_batch(&mut model, &mut adam, x, &p)?;
            epoch_loss.push(loss);
            epoch_seconds.push(start.elapsed().as_secs_f64());
            log_epoch(cfg, epoch, loss);
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(SHUFFLE_SEED_OFFSET));
        let mut indices: Vec<usize> = (0..n).collect();
        for epoch in 0..cfg.epochs {
            let start = Instant::now();
            indices.shuffle(&mut rng);
            let mut losses = Vec::new();
            // trailing remainder below one batch is left to later shuffles
            for chunk in indices.chunks_exact(cfg.batch_size) {
                let batch = crate::datasets::take_rows(x, chunk);
                let p = batch_similarities(&batch, cfg.mode)?;
                losses.push(train_batch(&mut model, &mut adam, &batch, &p)?);
            }
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            epoch_loss.push(mean);
            epoch_seconds.push(start.elapsed().as_secs_f64());
            log_epoch(cfg, epoch, mean);
        }
    }

    let final_embedding = model.predict(x)?;
    let final_loss = *epoch_loss.last().expect("at least one epoch");
    Ok((
        model,
        TrainLog {
            epoch_loss,
            epoch_seconds,
            final_loss,
            final_embedding,
        },
    ))
}

fn log_epoch(cfg: &TrainConfig, epoch: usize, loss: f64) {
    if cfg.log_every > 0 && (epoch + 1).is_multiple_of(cfg.log_every) {
        log::info!("epoch {:>4}/{}: kl loss {loss:.6}", epoch + 1, cfg.epochs);
    }
}

/// Map points through a trained model. Pure per-row: the output for a row
/// never depends on the other rows in the call.
pub fn transform(model: &MlpModel, x: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(model.predict(x)?)
}
