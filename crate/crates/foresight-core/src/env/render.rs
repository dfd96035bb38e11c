//! 16x16 diagnostic raster of a world state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{dist, WorldState, OBJECT_RADIUS, TARGET_RADIUS};
use crate::error::Result;
use crate::types::ObservationVec;

pub const FRAME_SIZE: usize = 16;

/// Grayscale frame with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub w: usize,
    pub h: usize,
    pub px: Vec<f64>,
}

impl Frame {
    pub fn zeros(w: usize, h: usize) -> Self {
        Frame { w, h, px: vec![0.0; w * h] }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.px[row * self.w + col]
    }

    fn set(&mut self, row: usize, col: usize, v: f64) {
        self.px[row * self.w + col] = v;
    }

    /// Binary PGM (P5, maxval 255) bytes.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.w, self.h).into_bytes();
        out.extend(self.px.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// Deterministic raster: background 0, target ring 0.25, objects 0.5,
/// gripper 1.0 (painted in that order, later layers overwrite).
pub fn render(state: &WorldState) -> Frame {
    render_scene(state.gripper, &state.objects, state.target)
}

/// Render from an observation vector; the scene is fully recoverable from
/// the flattened layout.
pub fn render_obs(obs: &ObservationVec) -> Frame {
    let objects: Vec<[f64; 2]> = (0..obs.n_objects()).map(|i| obs.object(i)).collect();
    render_scene(obs.gripper(), &objects, obs.target())
}

fn render_scene(gripper: [f64; 2], objects: &[[f64; 2]], target: [f64; 2]) -> Frame {
    let n = FRAME_SIZE;
    let half_px = 0.5 / n as f64;
    let mut frame = Frame::zeros(n, n);
    for row in 0..n {
        for col in 0..n {
            let center = [(col as f64 + 0.5) / n as f64, (row as f64 + 0.5) / n as f64];
            if (dist(center, target) - TARGET_RADIUS).abs() <= half_px {
                frame.set(row, col, 0.25);
            }
            for &obj in objects {
                if dist(center, obj) <= OBJECT_RADIUS.max(half_px) {
                    frame.set(row, col, 0.5);
                }
            }
        }
    }
    let gc = pixel_of(gripper[0]);
    let gr = pixel_of(gripper[1]);
    frame.set(gr, gc, 1.0);
    frame
}

fn pixel_of(coord: f64) -> usize {
    ((coord * FRAME_SIZE as f64) as usize).min(FRAME_SIZE - 1)
}
