//! Shared domain types: observations, action chunks, trajectories.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step displacement bound for `dx`/`dy`.
pub const ACTION_DELTA_LIMIT: f64 = 0.1;
/// Bound for the gripper command `g`.
pub const ACTION_GRIP_LIMIT: f64 = 1.0;

/// Flat numeric environment observation.
///
/// Layout: `[gripper_x, gripper_y, holding, obj0_x, obj0_y, ..., target_x,
/// target_y, task_id]`. All coordinates lie in `[0,1]`, `holding` is exactly
/// 0 or 1, and the flattened dimension is constant for a fixed task spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVec(pub Vec<f64>);

impl ObservationVec {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Number of objects encoded in the layout.
    pub fn n_objects(&self) -> usize {
        debug_assert!(self.0.len() >= 8 && self.0.len() % 2 == 0);
        (self.0.len() - 6) / 2
    }

    pub fn gripper(&self) -> [f64; 2] {
        [self.0[0], self.0[1]]
    }

    pub fn holding(&self) -> f64 {
        self.0[2]
    }

    pub fn object(&self, i: usize) -> [f64; 2] {
        [self.0[3 + 2 * i], self.0[4 + 2 * i]]
    }

    pub fn target(&self) -> [f64; 2] {
        let n = self.n_objects();
        [self.0[3 + 2 * n], self.0[4 + 2 * n]]
    }

    pub fn task_id(&self) -> usize {
        *self.0.last().expect("observation is never empty") as usize
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Length-H sequence of continuous sub-actions `(dx, dy, g)`.
///
/// `dx`/`dy` are clamped into `[-0.1, 0.1]` and `g` into `[-1, 1]` on
/// construction; H is fixed within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk(Vec<[f64; 3]>);

impl ActionChunk {
    pub fn new(steps: Vec<[f64; 3]>) -> Self {
        assert!(!steps.is_empty(), "chunk length H must be >= 1");
        let clamped = steps
            .into_iter()
            .map(|[dx, dy, g]| {
                [
                    dx.clamp(-ACTION_DELTA_LIMIT, ACTION_DELTA_LIMIT),
                    dy.clamp(-ACTION_DELTA_LIMIT, ACTION_DELTA_LIMIT),
                    g.clamp(-ACTION_GRIP_LIMIT, ACTION_GRIP_LIMIT),
                ]
            })
            .collect();
        ActionChunk(clamped)
    }

    pub fn zeros(h: usize) -> Self {
        ActionChunk::new(vec![[0.0; 3]; h])
    }

    /// Rebuild a chunk from a flat `[dx0, dy0, g0, dx1, ...]` vector, clamping.
    pub fn from_flat(h: usize, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), 3 * h, "flat chunk length mismatch");
        ActionChunk::new((0..h).map(|i| [flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]]).collect())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn h(&self) -> usize {
        self.0.len()
    }

    pub fn steps(&self) -> &[[f64; 3]] {
        &self.0
    }

    /// L-infinity distance between two chunks of equal length.
    pub fn linf_distance(&self, other: &ActionChunk) -> f64 {
        debug_assert_eq!(self.h(), other.h());
        self.0
            .iter()
            .zip(&other.0)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// One executed decision step of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub obs: ObservationVec,
    pub action: ActionChunk,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Episode header written as the first JSONL line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub task_id: usize,
    pub variation_id: u32,
}

/// Episode record: the unit of persistence and metrics.
///
/// Invariants: `done` is true only at the final step and `success` implies
/// `done`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn success(&self) -> bool {
        self.steps.last().is_some_and(|s| s.success)
    }

    /// Sum of chunk rewards discounted per decision step.
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| gamma.powi(i as i32) * s.reward)
            .sum()
    }

    pub fn check_invariants(&self) -> Result<()> {
        for (i, step) in self.steps.iter().enumerate() {
            let last = i + 1 == self.steps.len();
            if step.done != last {
                return Err(Error::Usage(format!(
                    "trajectory step {i}: done={} but is_last={last}",
                    step.done
                )));
            }
            if step.success && !step.done {
                return Err(Error::Usage(format!("trajectory step {i}: success without done")));
            }
        }
        Ok(())
    }

    /// Serialize as JSON lines: a header line followed by one step per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.meta)?;
        w.write_all(b"\n")?;
        for step in &self.steps {
            serde_json::to_writer(&mut w, step)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Usage("empty trajectory file".into()))??;
        let meta: TrajectoryMeta = serde_json::from_str(&header)?;
        let mut steps = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            steps.push(serde_json::from_str(&line)?);
        }
        Ok(Trajectory { meta, steps })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_clamps_on_construction() {
        let c = ActionChunk::new(vec![[0.5, -0.5, 3.0], [0.05, 0.0, -2.0]]);
        assert_eq!(c.steps()[0], [0.1, -0.1, 1.0]);
        assert_eq!(c.steps()[1], [0.05, 0.0, -1.0]);
    }

    #[test]
    fn chunk_flat_round_trip() {
        let c = ActionChunk::new(vec![[0.01, -0.02, 0.3], [0.04, 0.05, -0.6]]);
        let back = ActionChunk::from_flat(2, &c.flatten());
        assert_eq!(c, back);
    }

    #[test]
    fn observation_layout_accessors() {
        // 2 objects -> 10 dims
        let o = ObservationVec(vec![0.1, 0.2, 1.0, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 2.0]);
        assert_eq!(o.n_objects(), 2);
        assert_eq!(o.gripper(), [0.1, 0.2]);
        assert_eq!(o.holding(), 1.0);
        assert_eq!(o.object(1), [0.5, 0.6]);
        assert_eq!(o.target(), [0.7, 0.8]);
        assert_eq!(o.task_id(), 2);
    }

    #[test]
    fn trajectory_jsonl_round_trip() {
        let t = Trajectory {
            meta: TrajectoryMeta { seed: 3, task_id: 0, variation_id: 5 },
            steps: vec![TrajectoryStep {
                obs: ObservationVec(vec![0.0; 10]),
                action: ActionChunk::zeros(4),
                reward: 1.25,
                done: true,
                success: true,
            }],
        };
        t.check_invariants().unwrap();
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let back = Trajectory::read_jsonl(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(t, back);
    }
}
