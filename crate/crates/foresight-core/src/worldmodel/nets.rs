//! Dynamics and reward networks over token frames.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decode, encode, Codebook, TokenFrame};
use crate::dataset::TransitionRecord;
use crate::error::{Error, Result};
use crate::mcts::DynamicsModel;
use crate::nn::{AdamW, Embedding, Mlp, MlpGrads, ParamBlock};
use crate::rng::Stream;
use crate::types::{ActionChunk, ObservationVec};

/// How rollout tokens are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSampling {
    /// Argmax per position (ties to the lower index); bit-identical outputs
    /// for identical inputs. The planner default.
    Greedy,
    /// Categorical sampling from the softmax; used for distributional
    /// fidelity metrics.
    Stochastic,
}

/// Learned parameters of the world model.
///
/// The token-embedding table is shared by the dynamics head and the reward
/// head, so reward supervision contributes gradients to the representation
/// the dynamics head reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModelNets {
    /// One `embed_dim` vector per (dimension, code) pair; row `d * b_max + t`.
    pub token_embed: Embedding,
    pub task_embed: Embedding,
    pub dyn_mlp: Mlp,
    pub rew_mlp: Mlp,
    pub obs_dim: usize,
    pub b_max: usize,
    pub chunk_h: usize,
}

/// Gradient buffers matching [`WorldModelNets`].
pub struct WorldModelGrads {
    pub token_embed: Vec<f64>,
    pub task_embed: Vec<f64>,
    pub dyn_mlp: MlpGrads,
    pub rew_mlp: MlpGrads,
}

/// The hybrid objective terms. `total` is exactly
/// `video + lambda_reward * reward`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridLosses {
    pub video: f64,
    pub reward: f64,
    pub total: f64,
}

impl WorldModelNets {
    pub fn init(
        obs_dim: usize,
        b_max: usize,
        chunk_h: usize,
        n_tasks: usize,
        embed_dim: usize,
        task_embed_dim: usize,
        dyn_hidden: &[usize],
        rew_hidden: &[usize],
        rng: &mut Stream,
    ) -> Self {
        // Frames enter the nets three ways: decoded code values (the
        // geometric signal), token one-hots (exact bin identity, which the
        // MLP would otherwise be slow to carve out of raw scalars), and
        // learned embeddings (the shared representation both heads train).
        let frame = obs_dim * (1 + b_max + embed_dim);
        // Raw sub-actions plus cumulative planar displacement after each
        // sub-step (the gripper integrates deltas; mid-chunk termination at
        // success makes the partial sums informative too).
        let action_dim = 3 * chunk_h + 2 * chunk_h;
        let dyn_in = frame + action_dim + task_embed_dim + frame + obs_dim;
        let mut dyn_dims = vec![dyn_in];
        dyn_dims.extend_from_slice(dyn_hidden);
        dyn_dims.push(b_max);
        let rew_in = frame + action_dim + task_embed_dim;
        let mut rew_dims = vec![rew_in];
        rew_dims.extend_from_slice(rew_hidden);
        rew_dims.push(1);
        WorldModelNets {
            token_embed: Embedding::init(obs_dim * b_max, embed_dim, rng),
            task_embed: Embedding::init(n_tasks, task_embed_dim, rng),
            dyn_mlp: Mlp::init(&dyn_dims, rng),
            rew_mlp: Mlp::init(&rew_dims, rng),
            obs_dim,
            b_max,
            chunk_h,
        }
    }

    pub fn zero_grads(&self) -> WorldModelGrads {
        WorldModelGrads {
            token_embed: vec![0.0; self.token_embed.w.len()],
            task_embed: vec![0.0; self.task_embed.w.len()],
            dyn_mlp: MlpGrads::zeros(&self.dyn_mlp),
            rew_mlp: MlpGrads::zeros(&self.rew_mlp),
        }
    }

    fn embed_dim(&self) -> usize {
        self.token_embed.dim
    }

    fn token_row(&self, dim: usize, token: usize) -> usize {
        dim * self.b_max + token
    }

    /// Frame features: decoded code values, token one-hots, then learned
    /// embeddings. With `upto < obs_dim` positions at or beyond `upto` are
    /// zeroed — the autoregressive mask: predicting token `j` can only read
    /// tokens `< j` of the current frame.
    fn frame_features(&self, tokens: &[usize], upto: usize, codebook: &Codebook) -> Vec<f64> {
        let e = self.embed_dim();
        let b = self.b_max;
        let d_obs = self.obs_dim;
        let mut v = vec![0.0; d_obs * (1 + b + e)];
        for (d, &t) in tokens.iter().enumerate().take(upto) {
            v[d] = codebook.codes[d][t];
            v[d_obs + d * b + t] = 1.0;
            let emb_off = d_obs * (1 + b);
            v[emb_off + d * e..emb_off + (d + 1) * e]
                .copy_from_slice(self.token_embed.lookup(self.token_row(d, t)));
        }
        v
    }

    /// Flat sub-actions followed by cumulative dx/dy partial sums.
    fn action_features(&self, action: &ActionChunk) -> Vec<f64> {
        let mut v = action.flatten();
        let (mut cx, mut cy) = (0.0, 0.0);
        for &[dx, dy, _] in action.steps() {
            cx += dx;
            cy += dy;
            v.push(cx);
            v.push(cy);
        }
        v
    }

    fn dyn_input(
        &self,
        prev: &[f64],
        action: &[f64],
        task_emb: &[f64],
        prefix: &[f64],
        pos: usize,
    ) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dyn_mlp.in_dim());
        v.extend_from_slice(prev);
        v.extend_from_slice(action);
        v.extend_from_slice(task_emb);
        v.extend_from_slice(prefix);
        let mut onehot = vec![0.0; self.obs_dim];
        onehot[pos] = 1.0;
        v.extend_from_slice(&onehot);
        v
    }

    /// Offset of the embedding block inside a frame-feature segment.
    fn emb_offset(&self) -> usize {
        self.obs_dim * (1 + self.b_max)
    }

    /// Logits for the token at `pos` of the next frame given the previous
    /// frame, the action, and the already-predicted prefix of the next frame.
    pub fn dyn_logits(
        &self,
        codebook: &Codebook,
        prev: &TokenFrame,
        action: &ActionChunk,
        task_id: usize,
        next_prefix: &[usize],
        pos: usize,
    ) -> Result<Vec<f64>> {
        let input = self.dyn_input(
            &self.frame_features(&prev.tokens, self.obs_dim, codebook),
            &self.action_features(action),
            self.task_embed.lookup(task_id),
            &self.frame_features(next_prefix, pos, codebook),
            pos,
        );
        self.dyn_mlp.forward(&input)
    }

    /// Scalar reward estimate for executing `action` from the state encoded
    /// by `prev`.
    pub fn reward_estimate(
        &self,
        codebook: &Codebook,
        prev: &TokenFrame,
        action: &ActionChunk,
        task_id: usize,
    ) -> Result<f64> {
        let mut input = Vec::with_capacity(self.rew_mlp.in_dim());
        input.extend_from_slice(&self.frame_features(&prev.tokens, self.obs_dim, codebook));
        input.extend_from_slice(&self.action_features(action));
        input.extend_from_slice(self.task_embed.lookup(task_id));
        Ok(self.rew_mlp.forward(&input)?[0])
    }

    /// One optimizer step over every parameter block.
    pub fn apply_step(&mut self, grads: &WorldModelGrads, opt: &mut AdamW) -> Result<()> {
        let mut blocks = vec![
            ParamBlock {
                name: "wm.token_embed".into(),
                params: &mut self.token_embed.w,
                grads: &grads.token_embed,
            },
            ParamBlock {
                name: "wm.task_embed".into(),
                params: &mut self.task_embed.w,
                grads: &grads.task_embed,
            },
        ];
        blocks.extend(crate::nn::mlp_blocks("wm.dyn", &mut self.dyn_mlp, &grads.dyn_mlp));
        blocks.extend(crate::nn::mlp_blocks("wm.rew", &mut self.rew_mlp, &grads.rew_mlp));
        opt.step(&mut blocks)
    }
}

/// Hybrid losses and gradients over a batch: mean autoregressive token
/// cross-entropy on the next frame plus `lambda` times the mean squared
/// reward error, teacher-forced. Gradients flow into both MLPs and the
/// shared embedding tables (reward gradients scaled by `lambda`, so the
/// `lambda = 0` arm trains without reward supervision while still logging
/// the reward error).
pub fn hybrid_grads(
    nets: &WorldModelNets,
    codebook: &Codebook,
    batch: &[&TransitionRecord],
    lambda: f64,
) -> Result<(HybridLosses, WorldModelGrads)> {
    if batch.is_empty() {
        return Err(Error::Usage("empty training batch".into()));
    }
    let n = batch.len() as f64;
    let d_obs = nets.obs_dim as f64;
    let video_scale = 1.0 / (n * d_obs);
    let reward_scale = 1.0 / n;

    let per_example: Vec<(f64, f64, WorldModelGrads)> = batch
        .par_iter()
        .map(|rec| example_grads(nets, codebook, rec, lambda, video_scale, reward_scale))
        .collect::<Result<Vec<_>>>()?;

    let mut grads = nets.zero_grads();
    let mut ce_sum = 0.0;
    let mut sq_sum = 0.0;
    for (ce, sq, g) in per_example {
        ce_sum += ce;
        sq_sum += sq;
        add_grads(&mut grads, &g);
    }

    let video = ce_sum * video_scale;
    let reward = sq_sum * reward_scale;
    let total = video + lambda * reward;
    if !total.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite hybrid loss (video {video}, reward {reward})"
        )));
    }
    Ok((HybridLosses { video, reward, total }, grads))
}

/// Hybrid losses + one optimizer step on both heads and the shared tables.
pub fn hybrid_train_step(
    nets: &mut WorldModelNets,
    codebook: &Codebook,
    batch: &[&TransitionRecord],
    lambda: f64,
    opt: &mut AdamW,
) -> Result<HybridLosses> {
    let (losses, grads) = hybrid_grads(nets, codebook, batch, lambda)?;
    nets.apply_step(&grads, opt)?;
    Ok(losses)
}

fn example_grads(
    nets: &WorldModelNets,
    codebook: &Codebook,
    rec: &TransitionRecord,
    lambda: f64,
    video_scale: f64,
    reward_scale: f64,
) -> Result<(f64, f64, WorldModelGrads)> {
    let prev = encode(&rec.obs, codebook)?;
    let next = encode(&rec.next_obs, codebook)?;
    let task_id = rec.obs.task_id();
    let action = nets.action_features(&rec.action);
    let prev_feat = nets.frame_features(&prev.tokens, nets.obs_dim, codebook);
    let task_emb = nets.task_embed.lookup(task_id).to_vec();
    let frame_len = prev_feat.len();

    let mut grads = nets.zero_grads();
    let mut ce_sum = 0.0;

    for pos in 0..nets.obs_dim {
        let prefix_feat = nets.frame_features(&next.tokens, pos, codebook);
        let input = nets.dyn_input(&prev_feat, &action, &task_emb, &prefix_feat, pos);
        let (logits, cache) = nets.dyn_mlp.forward_cached(&input)?;
        let target = next.tokens[pos];
        let lse = log_sum_exp(&logits);
        ce_sum += lse - logits[target];

        // d(ce)/d(logits) = softmax - onehot, scaled into the batch mean.
        let mut upstream: Vec<f64> =
            logits.iter().map(|&l| (l - lse).exp() * video_scale).collect();
        upstream[target] -= video_scale;
        let (mlp_g, d_input) = nets.dyn_mlp.backward(&cache, &upstream)?;
        grads.dyn_mlp.add(&mlp_g);
        // Decoded values are constants; only the embedding blocks carry
        // parameter gradients.
        scatter_frame(nets, &mut grads.token_embed, &prev.tokens, nets.obs_dim, &d_input[..frame_len]);
        let task_off = frame_len + action.len();
        Embedding::accumulate(
            &mut grads.task_embed,
            nets.task_embed.dim,
            task_id,
            &d_input[task_off..task_off + task_emb.len()],
        );
        let prefix_off = task_off + task_emb.len();
        scatter_frame(
            nets,
            &mut grads.token_embed,
            &next.tokens,
            pos,
            &d_input[prefix_off..prefix_off + frame_len],
        );
    }

    // Reward head.
    let mut rew_input = Vec::with_capacity(nets.rew_mlp.in_dim());
    rew_input.extend_from_slice(&prev_feat);
    rew_input.extend_from_slice(&action);
    rew_input.extend_from_slice(&task_emb);
    let (rhat, cache) = nets.rew_mlp.forward_cached(&rew_input)?;
    let err = rhat[0] - rec.reward;
    let sq = err * err;
    let upstream = vec![2.0 * err * lambda * reward_scale];
    let (mlp_g, d_input) = nets.rew_mlp.backward(&cache, &upstream)?;
    grads.rew_mlp.add(&mlp_g);
    scatter_frame(nets, &mut grads.token_embed, &prev.tokens, nets.obs_dim, &d_input[..frame_len]);
    let task_off = frame_len + action.len();
    Embedding::accumulate(
        &mut grads.task_embed,
        nets.task_embed.dim,
        task_id,
        &d_input[task_off..],
    );

    Ok((ce_sum, sq, grads))
}

/// Scatter the gradient of a frame-feature segment onto the embedding rows
/// of the first `upto` tokens (the value block at the segment head carries
/// no parameters).
fn scatter_frame(
    nets: &WorldModelNets,
    token_grads: &mut [f64],
    tokens: &[usize],
    upto: usize,
    d_frame: &[f64],
) {
    let e = nets.embed_dim();
    let off = nets.emb_offset();
    for (d, &t) in tokens.iter().enumerate().take(upto) {
        let row = nets.token_row(d, t);
        Embedding::accumulate(token_grads, e, row, &d_frame[off + d * e..off + (d + 1) * e]);
    }
}

fn add_grads(into: &mut WorldModelGrads, from: &WorldModelGrads) {
    for (a, b) in into.token_embed.iter_mut().zip(&from.token_embed) {
        *a += b;
    }
    for (a, b) in into.task_embed.iter_mut().zip(&from.task_embed) {
        *a += b;
    }
    into.dyn_mlp.add(&from.dyn_mlp);
    into.rew_mlp.add(&from.rew_mlp);
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Trained world model bundle: codebook + nets + rollout behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub codebook: Codebook,
    pub nets: WorldModelNets,
    /// The reward-loss weight this model was trained with (0 is the
    /// action-only ablation arm).
    pub lambda_reward: f64,
    pub sampling: TokenSampling,
}

/// Predict `(next_obs, reward)` for one action from one observation:
/// encode, autoregressively generate the next token frame, decode, and
/// evaluate the reward head. Pure given `(inputs, rng)`; greedy mode ignores
/// the stream entirely.
pub fn rollout(
    wm: &WorldModel,
    obs: &ObservationVec,
    action: &ActionChunk,
    sampling: TokenSampling,
    rng: &mut Stream,
) -> Result<(ObservationVec, f64)> {
    let prev = encode(obs, &wm.codebook)?;
    let task_id = obs.task_id();
    let mut tokens: Vec<usize> = Vec::with_capacity(wm.nets.obs_dim);
    for pos in 0..wm.nets.obs_dim {
        let logits = wm.nets.dyn_logits(&wm.codebook, &prev, action, task_id, &tokens, pos)?;
        // Only indices with an actual code in this dimension are valid.
        let valid = wm.codebook.codes[pos].len();
        let token = match sampling {
            TokenSampling::Greedy => argmax(&logits[..valid]),
            TokenSampling::Stochastic => sample_categorical(&logits[..valid], rng),
        };
        tokens.push(token);
    }
    let next_obs = decode(&TokenFrame { tokens }, &wm.codebook)?;
    let reward = wm.nets.reward_estimate(&wm.codebook, &prev, action, task_id)?;
    Ok((next_obs, reward))
}

impl DynamicsModel for WorldModel {
    fn rollout(
        &self,
        obs: &ObservationVec,
        action: &ActionChunk,
        rng: &mut Stream,
    ) -> Result<(ObservationVec, f64)> {
        rollout(self, obs, action, self.sampling, rng)
    }
}

/// Held-out evaluation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutStats {
    /// Teacher-forced one-step token top-1 accuracy.
    pub token_accuracy: f64,
    pub reward_mse: f64,
    pub records: usize,
}

/// Teacher-forced one-step evaluation over held-out transitions.
pub fn evaluate_holdout(wm: &WorldModel, records: &[&TransitionRecord]) -> Result<HoldoutStats> {
    if records.is_empty() {
        return Err(Error::Usage("empty holdout set".into()));
    }
    let per: Vec<(usize, usize, f64)> = records
        .par_iter()
        .map(|rec| {
            let prev = encode(&rec.obs, &wm.codebook)?;
            let next = encode(&rec.next_obs, &wm.codebook)?;
            let task_id = rec.obs.task_id();
            let mut hits = 0usize;
            for pos in 0..wm.nets.obs_dim {
                let logits = wm.nets.dyn_logits(&wm.codebook, &prev, &rec.action, task_id, &next.tokens, pos)?;
                let valid = wm.codebook.codes[pos].len();
                if argmax(&logits[..valid]) == next.tokens[pos] {
                    hits += 1;
                }
            }
            let err = wm.nets.reward_estimate(&wm.codebook, &prev, &rec.action, task_id)? - rec.reward;
            Ok((hits, wm.nets.obs_dim, err * err))
        })
        .collect::<Result<Vec<_>>>()?;
    let hits: usize = per.iter().map(|p| p.0).sum();
    let total: usize = per.iter().map(|p| p.1).sum();
    let sq: f64 = per.iter().map(|p| p.2).sum();
    Ok(HoldoutStats {
        token_accuracy: hits as f64 / total as f64,
        reward_mse: sq / records.len() as f64,
        records: records.len(),
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(logits: &[f64], rng: &mut Stream) -> usize {
    let lse = log_sum_exp(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &l) in logits.iter().enumerate() {
        acc += (l - lse).exp();
        if u < acc {
            return i;
        }
    }
    logits.len() - 1
}
