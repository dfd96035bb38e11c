//! Run configuration: planner, model, environment, and training knobs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How candidate priors are assigned by the proposal policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Flat 1/K priors.
    Uniform,
    /// Priors proportional to local sample density (inverse mean distance to
    /// the two nearest other candidates).
    Density,
}

/// Immutable run configuration. Unknown keys in config files are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,

    // Planner.
    pub n_sim: usize,
    pub depth_d: usize,
    pub gamma: f64,
    pub c_puct: f64,
    pub k_candidates: usize,
    /// Discounted multi-step path backup; `false` recovers the bare
    /// `W += V` update (rewards credited only at leaves).
    pub discounted_backup: bool,

    // Diffusion proposal policy.
    pub diffusion_steps_t: usize,
    pub chunk_h: usize,
    pub prior_mode: PriorMode,

    // World model.
    pub lambda_reward: f64,
    pub beta_vq: f64,
    pub b_codes: usize,
    pub embed_dim: usize,
    pub task_embed_dim: usize,

    // Environment / evaluation protocol.
    pub n_objects: usize,
    pub max_steps: usize,
    pub variations: u32,
    pub eval_repeats: usize,

    // Dataset generation.
    pub demo_repeats: usize,
    pub exploration_ratio: f64,
    pub holdout_fraction: f64,

    // Training.
    pub policy_train_steps: usize,
    pub wm_train_steps: usize,
    pub policy_lr: f64,
    pub wm_lr: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub cosine_lr: bool,
    pub policy_hidden: Vec<usize>,
    pub dyn_hidden: Vec<usize>,
    pub rew_hidden: Vec<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            n_sim: 8,
            depth_d: 3,
            gamma: 0.9,
            c_puct: 1.0,
            k_candidates: 8,
            discounted_backup: true,
            diffusion_steps_t: 50,
            chunk_h: 4,
            prior_mode: PriorMode::Uniform,
            lambda_reward: 20.0,
            beta_vq: 0.25,
            b_codes: 16,
            embed_dim: 4,
            task_embed_dim: 4,
            n_objects: 2,
            max_steps: 30,
            variations: 24,
            eval_repeats: 3,
            demo_repeats: 6,
            exploration_ratio: 0.3,
            holdout_fraction: 0.1,
            policy_train_steps: 15000,
            wm_train_steps: 4500,
            policy_lr: 1e-3,
            wm_lr: 2e-3,
            weight_decay: 1e-4,
            grad_clip_norm: 30.0,
            batch_size: 48,
            cosine_lr: true,
            policy_hidden: vec![192, 192],
            dyn_hidden: vec![96, 96],
            rew_hidden: vec![64, 64],
        }
    }
}

impl Config {
    /// Parse a JSON config file. An empty file yields the defaults; missing
    /// fields take their defaults; unknown keys and out-of-range values are
    /// rejected.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Config> {
        let cfg: Config = if text.trim().is_empty() {
            Config::default()
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &str, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("field `{field}` {msg}")))
            }
        }
        check(self.gamma >= 0.0 && self.gamma < 1.0, "gamma", "must lie in [0, 1)")?;
        check(self.n_sim >= 1, "n_sim", "must be >= 1")?;
        check(self.depth_d >= 1, "depth_d", "must be >= 1")?;
        check(self.k_candidates >= 1, "k_candidates", "must be >= 1")?;
        check(self.lambda_reward >= 0.0, "lambda_reward", "must be >= 0")?;
        check(self.beta_vq >= 0.0, "beta_vq", "must be >= 0")?;
        check(self.c_puct >= 0.0, "c_puct", "must be >= 0")?;
        check(self.diffusion_steps_t >= 1, "diffusion_steps_t", "must be >= 1")?;
        check(self.chunk_h >= 1, "chunk_h", "must be >= 1")?;
        check(self.b_codes >= 2, "b_codes", "must be >= 2")?;
        check(self.embed_dim >= 1, "embed_dim", "must be >= 1")?;
        check(self.task_embed_dim >= 1, "task_embed_dim", "must be >= 1")?;
        check(self.n_objects >= 1, "n_objects", "must be >= 1")?;
        check(self.max_steps >= 1, "max_steps", "must be >= 1")?;
        check(self.variations >= 1, "variations", "must be >= 1")?;
        check(self.eval_repeats >= 1, "eval_repeats", "must be >= 1")?;
        check(self.demo_repeats >= 1, "demo_repeats", "must be >= 1")?;
        check(
            (0.0..=1.0).contains(&self.exploration_ratio),
            "exploration_ratio",
            "must lie in [0, 1]",
        )?;
        check(
            self.holdout_fraction > 0.0 && self.holdout_fraction <= 0.5,
            "holdout_fraction",
            "must lie in (0, 0.5]",
        )?;
        check(self.policy_lr > 0.0, "policy_lr", "must be > 0")?;
        check(self.wm_lr > 0.0, "wm_lr", "must be > 0")?;
        check(self.weight_decay >= 0.0, "weight_decay", "must be >= 0")?;
        check(self.grad_clip_norm > 0.0, "grad_clip_norm", "must be > 0")?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1")?;
        check(!self.policy_hidden.is_empty(), "policy_hidden", "must be non-empty")?;
        check(!self.dyn_hidden.is_empty(), "dyn_hidden", "must be non-empty")?;
        check(!self.rew_hidden.is_empty(), "rew_hidden", "must be non-empty")?;
        Ok(())
    }

    /// Observation dimensionality implied by this config's object count.
    pub fn obs_dim(&self) -> usize {
        6 + 2 * self.n_objects
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = Config::from_json("").unwrap();
        assert_eq!(cfg.n_sim, 8);
        assert_eq!(cfg.gamma, 0.9);
        assert_eq!(cfg.k_candidates, 8);
        assert_eq!(cfg.lambda_reward, 20.0);
    }

    #[test]
    fn out_of_range_gamma_rejected() {
        let err = Config::from_json(r#"{"gamma": 1.5}"#).unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
    }

    #[test]
    fn zero_lambda_is_the_ablation_arm() {
        let cfg = Config::from_json(r#"{"lambda_reward": 0}"#).unwrap();
        assert_eq!(cfg.lambda_reward, 0.0);
    }

    #[test]
    fn unknown_keys_rejected_by_name() {
        let err = Config::from_json(r#"{"n_simm": 4}"#).unwrap_err();
        assert!(err.to_string().contains("n_simm"), "{err}");
    }

    #[test]
    fn round_trip_preserves_config() {
        let cfg = Config { n_sim: 16, gamma: 0.5, ..Config::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(Config::from_json(&text).unwrap(), cfg);
    }
}
