//! Deterministic stub components for planner verification.
//!
//! The stubs derive candidates, successor states, and rewards from a hash of
//! their inputs, so the proposal/dynamics pair defines a fixed tree: the
//! planner and the brute-force oracle see exactly the same problem, calls
//! are pure, and instances are reproducible from a seed.

use crate::diffusion::CandidateSet;
use crate::error::Result;
use crate::rng::Stream;
use crate::types::{ActionChunk, ObservationVec};

use super::{DynamicsModel, ProposalPolicy};

fn mix(mut h: u64, v: u64) -> u64 {
    h ^= v;
    h = h.wrapping_mul(0x0000_0100_0000_01b3);
    h ^ (h >> 29)
}

fn hash_obs(seed: u64, obs: &ObservationVec) -> u64 {
    let mut h = mix(0xcbf2_9ce4_8422_2325, seed);
    for &v in obs.as_slice() {
        h = mix(h, v.to_bits());
    }
    h
}

/// Uniform f64 in [0, 1) from a hash.
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Proposes `k` fixed candidates per state with hash-derived priors.
#[derive(Debug, Clone)]
pub struct StubPolicy {
    pub seed: u64,
    pub chunk_h: usize,
}

impl ProposalPolicy for StubPolicy {
    fn propose(&self, obs: &ObservationVec, k: usize, _rng: &mut Stream) -> Result<CandidateSet> {
        let h0 = hash_obs(self.seed, obs);
        let mut chunks = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        for i in 0..k {
            let h = mix(h0, 1 + i as u64);
            let dx = 0.2 * unit(mix(h, 2)) - 0.1;
            let dy = 0.2 * unit(mix(h, 3)) - 0.1;
            let g = 2.0 * unit(mix(h, 4)) - 1.0;
            chunks.push(ActionChunk::new(vec![[dx, dy, g]; self.chunk_h]));
            weights.push(0.05 + unit(mix(h, 5)));
        }
        CandidateSet::from_weighted(chunks, &weights)
    }
}

/// Deterministic dynamics with rewards hashed from `(state, action)` into
/// `[0, 1]`.
#[derive(Debug, Clone)]
pub struct StubModel {
    pub seed: u64,
}

impl DynamicsModel for StubModel {
    fn rollout(
        &self,
        obs: &ObservationVec,
        action: &ActionChunk,
        _rng: &mut Stream,
    ) -> Result<(ObservationVec, f64)> {
        let mut h = hash_obs(self.seed, obs);
        for v in action.flatten() {
            h = mix(h, v.to_bits());
        }
        // Successor: a fresh hash-derived point in the observation space.
        let mut next = obs.as_slice().to_vec();
        for (i, v) in next.iter_mut().enumerate().take(obs.dim() - 1) {
            *v = unit(mix(h, 100 + i as u64));
        }
        let reward = unit(mix(h, 7));
        Ok((ObservationVec(next), reward))
    }
}

/// A one-decision bandit: fixed candidate actions whose rewards are looked
/// up by candidate index (the stub policy emits them in a deterministic
/// order). Used for hand-verifiable planning tests.
#[derive(Debug, Clone)]
pub struct BanditModel {
    /// Reward for candidate `i`, matched by the action's first component.
    pub rewards: Vec<f64>,
    pub chunk_h: usize,
}

/// Policy whose candidate `i` encodes its own index in `dx = i * 1e-3`.
#[derive(Debug, Clone)]
pub struct BanditPolicy {
    pub k: usize,
    pub chunk_h: usize,
    pub priors: Vec<f64>,
}

impl ProposalPolicy for BanditPolicy {
    fn propose(&self, _obs: &ObservationVec, k: usize, _rng: &mut Stream) -> Result<CandidateSet> {
        assert_eq!(k, self.k);
        let chunks: Vec<ActionChunk> = (0..k)
            .map(|i| ActionChunk::new(vec![[i as f64 * 1e-3, 0.0, 0.0]; self.chunk_h]))
            .collect();
        CandidateSet::from_weighted(chunks, &self.priors)
    }

    fn sample_one(&self, _obs: &ObservationVec, rng: &mut Stream) -> Result<ActionChunk> {
        use rand::Rng;
        let total: f64 = self.priors.iter().sum();
        let mut u: f64 = rng.random_range(0.0..total);
        let mut pick = self.k - 1;
        for (i, &p) in self.priors.iter().enumerate() {
            if u < p {
                pick = i;
                break;
            }
            u -= p;
        }
        Ok(ActionChunk::new(vec![[pick as f64 * 1e-3, 0.0, 0.0]; self.chunk_h]))
    }
}

impl BanditModel {
    fn index_of(&self, action: &ActionChunk) -> usize {
        (action.steps()[0][0] / 1e-3).round() as usize
    }
}

impl DynamicsModel for BanditModel {
    fn rollout(
        &self,
        obs: &ObservationVec,
        action: &ActionChunk,
        _rng: &mut Stream,
    ) -> Result<(ObservationVec, f64)> {
        Ok((obs.clone(), self.rewards[self.index_of(action)]))
    }
}
