//! Mean-regression baseline: the same conditioning, trained with plain MSE.
//!
//! On multi-modal demonstrations this regresses to the mean trajectory — the
//! mode-collapse contrast case for the diffusion policy.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Embedding, Mlp, MlpGrads};
use crate::rng::Stream;
use crate::types::{ActionChunk, ObservationVec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionPolicy {
    pub mlp: Mlp,
    pub task_embed: Embedding,
    pub chunk_h: usize,
}

pub struct RegressionGrads {
    pub mlp: MlpGrads,
    pub task_embed: Vec<f64>,
}

impl RegressionPolicy {
    pub fn init(
        chunk_h: usize,
        obs_dim: usize,
        n_tasks: usize,
        task_embed_dim: usize,
        hidden: &[usize],
        rng: &mut Stream,
    ) -> Self {
        let n_objects = (obs_dim - 6) / 2;
        let mut dims = vec![obs_dim + super::geometry_dim(n_objects) + task_embed_dim];
        dims.extend_from_slice(hidden);
        dims.push(3 * chunk_h);
        RegressionPolicy {
            mlp: Mlp::init(&dims, rng),
            task_embed: Embedding::init(n_tasks, task_embed_dim, rng),
            chunk_h,
        }
    }

    fn input(&self, obs: &ObservationVec) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.mlp.in_dim());
        v.extend_from_slice(obs.as_slice());
        v.extend_from_slice(&super::geometry_features(obs));
        v.extend_from_slice(self.task_embed.lookup(obs.task_id()));
        v
    }

    /// Deterministic prediction; identical for repeated calls.
    pub fn predict(&self, obs: &ObservationVec) -> Result<ActionChunk> {
        let flat = self.mlp.forward(&self.input(obs))?;
        Ok(ActionChunk::from_flat(self.chunk_h, &flat))
    }

    pub fn zero_grads(&self) -> RegressionGrads {
        RegressionGrads {
            mlp: MlpGrads::zeros(&self.mlp),
            task_embed: vec![0.0; self.task_embed.w.len()],
        }
    }

    /// Squared-error loss against a demonstration chunk, accumulating
    /// gradients into `grads`.
    pub fn mse_loss(
        &self,
        obs: &ObservationVec,
        target: &ActionChunk,
        grads: &mut RegressionGrads,
    ) -> Result<f64> {
        let input = self.input(obs);
        let (pred, cache) = self.mlp.forward_cached(&input)?;
        let tgt = target.flatten();
        let loss: f64 = pred.iter().zip(&tgt).map(|(p, t)| (p - t) * (p - t)).sum();
        let upstream: Vec<f64> = pred.iter().zip(&tgt).map(|(p, t)| 2.0 * (p - t)).collect();
        let (mlp_grads, d_input) = self.mlp.backward(&cache, &upstream)?;
        grads.mlp.add(&mlp_grads);
        let off = input.len() - self.task_embed.dim;
        Embedding::accumulate(
            &mut grads.task_embed,
            self.task_embed.dim,
            obs.task_id(),
            &d_input[off..],
        );
        Ok(loss)
    }

    /// "Sampling" from the baseline ignores the stream: the policy is
    /// deterministic, which is exactly its failure mode on bimodal data.
    pub fn sample(&self, obs: &ObservationVec, _rng: &mut Stream) -> Result<ActionChunk> {
        self.predict(obs)
    }
}
