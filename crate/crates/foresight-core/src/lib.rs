//! Search-guided decision making over learned generative dynamics, at desk scale.
//!
//! The crate wires together four pieces:
//!
//! * [`env`] — a deterministic 2D tabletop manipulation simulator with a
//!   scripted multi-modal expert and a flaky-grasp variant for
//!   failure-recovery studies;
//! * [`diffusion`] — a DDPM proposal policy over action chunks, emitting K
//!   diverse candidates with priors;
//! * [`worldmodel`] — a reward-augmented tokenized dynamics model (per-dimension
//!   vector quantization + autoregressive token prediction + reward head);
//! * [`mcts`] — a PUCT planner that searches over world-model rollouts and
//!   picks the max-visit root action.
//!
//! [`pipeline`] holds the experiment harness (data generation, training,
//! evaluation, ablations) used by the CLI and the acceptance suite.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod env;
pub mod error;
pub mod manifest;
pub mod mcts;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod types;
pub mod worldmodel;

pub use config::{Config, PriorMode};
pub use error::{Error, Result};
pub use rng::{rng_stream, Stream};
pub use types::{ActionChunk, ObservationVec, Trajectory, TrajectoryStep};
