//! Generative world model over tokenized observations.
//!
//! Observations are already compact vectors, so the encoder is the identity
//! and quantization is per-dimension: each observation dimension gets its own
//! small codebook fitted by 1-D k-means, and a frame is one token per
//! dimension. Dynamics are predicted autoregressively over the next frame's
//! tokens by a shared MLP with a position one-hot; a reward head regresses
//! the chunk-summed environment reward. Both heads read the same learned
//! token-embedding table, so reward supervision shapes the representation
//! the dynamics head consumes.

mod nets;

pub use nets::{
    evaluate_holdout, hybrid_grads, hybrid_train_step, rollout, HoldoutStats, HybridLosses,
    TokenSampling, WorldModel, WorldModelGrads, WorldModelNets,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ObservationVec;

/// One token per observation dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenFrame {
    pub tokens: Vec<usize>,
}

/// Per-dimension scalar codebooks. Codes are sorted ascending and pairwise
/// distinct; a dimension may hold fewer than `b_max` codes when the data has
/// fewer distinct values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub codes: Vec<Vec<f64>>,
    /// Commitment weight used by [`vq_loss`].
    pub beta: f64,
    /// Capacity per dimension (the B in token space); net logits have this
    /// length even for dimensions with fewer codes.
    pub b_max: usize,
}

const KMEANS_MAX_ITERS: usize = 100;

impl Codebook {
    pub fn dims(&self) -> usize {
        self.codes.len()
    }

    /// Nearest-code index for a scalar; ties resolve to the lower index.
    fn encode_dim(&self, dim: usize, x: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &c) in self.codes[dim].iter().enumerate() {
            let d = (x - c).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Fit per-dimension codebooks with 1-D k-means (`k = b_max`, quantile
/// initialization, Lloyd iterations to an assignment fixed point or 100
/// rounds). A dimension with at most `b_max` distinct values keeps those
/// values verbatim; a constant dimension degenerates to a single code and is
/// reported in the returned warning list.
pub fn fit_codebook(
    observations: &[ObservationVec],
    b_max: usize,
    beta: f64,
) -> Result<(Codebook, Vec<String>)> {
    if observations.is_empty() {
        return Err(Error::Usage("cannot fit a codebook on an empty dataset".into()));
    }
    let dims = observations[0].dim();
    let mut warnings = Vec::new();
    let mut codes = Vec::with_capacity(dims);
    for d in 0..dims {
        let mut values: Vec<f64> = observations.iter().map(|o| o.as_slice()[d]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut distinct = values.clone();
        distinct.dedup();
        if distinct.len() == 1 {
            warnings.push(format!("dimension {d} is constant; codebook has a single code"));
        }
        let dim_codes = if distinct.len() <= b_max {
            distinct
        } else {
            kmeans_1d(&values, b_max)
        };
        codes.push(dim_codes);
    }
    Ok((Codebook { codes, beta, b_max }, warnings))
}

/// Lloyd's algorithm on sorted scalars with quantile initialization.
fn kmeans_1d(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut centers: Vec<f64> =
        (0..k).map(|i| sorted[((i as f64 + 0.5) * n as f64 / k as f64) as usize]).collect();
    centers.dedup();

    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, &x) in sorted.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, &center) in centers.iter().enumerate() {
                let d = (x - center).abs();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (i, &x) in sorted.iter().enumerate() {
            sums[assignment[i]] += x;
            counts[assignment[i]] += 1;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            if counts[c] > 0 {
                *center = sums[c] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    // Empty clusters are dropped; codes stay sorted and distinct.
    let mut kept: Vec<f64> = centers
        .iter()
        .enumerate()
        .filter(|&(c, _)| assignment.iter().any(|&a| a == c))
        .map(|(_, &v)| v)
        .collect();
    kept.sort_by(|a, b| a.partial_cmp(b).unwrap());
    kept.dedup();
    kept
}

/// Quantize an observation: per-dimension nearest code index.
pub fn encode(obs: &ObservationVec, codebook: &Codebook) -> Result<TokenFrame> {
    if obs.dim() != codebook.dims() {
        return Err(Error::Shape(format!(
            "observation has {} dims, codebook {}",
            obs.dim(),
            codebook.dims()
        )));
    }
    Ok(TokenFrame {
        tokens: obs
            .as_slice()
            .iter()
            .enumerate()
            .map(|(d, &x)| codebook.encode_dim(d, x))
            .collect(),
    })
}

/// Code lookup; `decode(encode(x))` is the quantization of `x`.
pub fn decode(frame: &TokenFrame, codebook: &Codebook) -> Result<ObservationVec> {
    if frame.tokens.len() != codebook.dims() {
        return Err(Error::Shape("token frame / codebook dimension mismatch".into()));
    }
    let mut v = Vec::with_capacity(frame.tokens.len());
    for (d, &t) in frame.tokens.iter().enumerate() {
        let codes = &codebook.codes[d];
        if t >= codes.len() {
            return Err(Error::Shape(format!("token {t} out of range for dimension {d}")));
        }
        v.push(codes[t]);
    }
    Ok(ObservationVec(v))
}

/// VQ objective with the identity encoder: reconstruction plus codebook plus
/// commitment terms. With `z_e(x) = x` the three terms all reduce to the
/// quantization error, so the loss is `|x - x_hat|^2 * (1 + 1 + beta)`.
/// Stop-gradient semantics: the codebook term treats `z_e(x)` as constant
/// and the commitment term treats the codes as constant; with a fixed
/// identity encoder both are diagnostic here and nothing propagates through
/// the `sg` arguments.
pub fn vq_loss(x: &ObservationVec, codebook: &Codebook) -> Result<(f64, ObservationVec)> {
    let frame = encode(x, codebook)?;
    let xhat = decode(&frame, codebook)?;
    let err: f64 = x
        .as_slice()
        .iter()
        .zip(xhat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((err * (2.0 + codebook.beta), xhat))
}
