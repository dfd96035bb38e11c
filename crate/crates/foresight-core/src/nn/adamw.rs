//! Decoupled-weight-decay adaptive-moment optimizer with global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named view over one parameter buffer and its gradient.
pub struct ParamBlock<'a> {
    pub name: String,
    pub params: &'a mut [f64],
    pub grads: &'a [f64],
}

/// Optimizer state: first/second moment accumulators per parameter block,
/// step count, and the update hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip threshold.
    pub clip_norm: f64,
    pub step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, clip_norm: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            clip_norm,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update. Blocks must be passed in the same order every step;
    /// moment accumulators are allocated lazily on the first call.
    ///
    /// Gradients are first clipped jointly to `clip_norm` (global L2 norm),
    /// then each parameter takes the bias-corrected adaptive step plus
    /// decoupled weight decay. A non-finite gradient aborts the step and
    /// reports the offending block by name.
    pub fn step(&mut self, blocks: &mut [ParamBlock<'_>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = blocks.iter().map(|b| vec![0.0; b.params.len()]).collect();
            self.v = blocks.iter().map(|b| vec![0.0; b.params.len()]).collect();
        }
        if self.m.len() != blocks.len() {
            return Err(Error::Shape(format!(
                "optimizer saw {} blocks, expected {}",
                blocks.len(),
                self.m.len()
            )));
        }

        let mut sq_norm = 0.0;
        for block in blocks.iter() {
            if block.params.len() != block.grads.len() {
                return Err(Error::Shape(format!(
                    "block `{}`: {} params vs {} grads",
                    block.name,
                    block.params.len(),
                    block.grads.len()
                )));
            }
            for &g in block.grads {
                if !g.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite gradient in parameter block `{}`",
                        block.name
                    )));
                }
                sq_norm += g * g;
            }
        }
        let norm = sq_norm.sqrt();
        let clip_scale = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for (bi, block) in blocks.iter_mut().enumerate() {
            if self.m[bi].len() != block.params.len() {
                return Err(Error::Shape(format!(
                    "block `{}` changed size between steps",
                    block.name
                )));
            }
            let (m, v) = (&mut self.m[bi], &mut self.v[bi]);
            for (i, p) in block.params.iter_mut().enumerate() {
                let g = block.grads[i] * clip_scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
            }
        }
        Ok(())
    }
}
