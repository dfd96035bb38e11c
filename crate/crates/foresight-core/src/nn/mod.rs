//! Minimal differentiable function approximators.
//!
//! A plain multilayer perceptron with tanh hidden activations and an identity
//! output layer, a learned embedding table, a decoupled-weight-decay adaptive
//! optimizer with global-norm gradient clipping, and finite-difference
//! gradient checking. All math is in f64; parameter initialization draws
//! fan-in-scaled uniforms from a labeled RNG stream, so everything is
//! bit-reproducible.

mod adamw;
mod gradcheck;

pub use adamw::{AdamW, ParamBlock};
pub use gradcheck::{central_diff, max_rel_err, rel_err};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Row-major `(out_dim x in_dim)` weight matrix.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Multilayer perceptron. Hidden layers use tanh, the output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    pub layers: Vec<DenseLayer>,
}

/// Per-layer activations cached by [`Mlp::forward_cached`] for backprop.
pub struct MlpCache {
    /// `acts[0]` is the input; `acts[i+1]` the (post-activation) output of
    /// layer `i`.
    acts: Vec<Vec<f64>>,
}

/// Gradients with the same shapes as [`Mlp`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub dw: Vec<Vec<f64>>,
    pub db: Vec<Vec<f64>>,
}

impl Mlp {
    /// Zero-initialized network with the given layer dimensions.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|d| DenseLayer {
                w: vec![0.0; d[0] * d[1]],
                b: vec![0.0; d[1]],
                in_dim: d[0],
                out_dim: d[1],
            })
            .collect();
        Mlp { dims: dims.to_vec(), layers }
    }

    /// Fan-in-scaled uniform initialization from a labeled stream.
    pub fn init(dims: &[usize], rng: &mut Stream) -> Self {
        let mut net = Self::zeros(dims);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in &mut layer.w {
                *w = rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "mlp input has length {}, expected {}",
                x.len(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Pure forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut a = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer.affine(&a);
            if i + 1 < n {
                for v in &mut a {
                    *v = v.tanh();
                }
            }
        }
        Ok(a)
    }

    /// Forward pass retaining per-layer activations for [`Mlp::backward`].
    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut a = layer.affine(acts.last().unwrap());
            if i + 1 < n {
                for v in &mut a {
                    *v = v.tanh();
                }
            }
            acts.push(a);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, MlpCache { acts }))
    }

    /// Gradients of `upstream . forward(x)` w.r.t. every parameter and the
    /// input, given the cache from the matching forward pass.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if upstream.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient has length {}, expected {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        let n = self.layers.len();
        let mut grads = MlpGrads::zeros(self);
        let mut delta = upstream.to_vec();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            // delta currently holds dL/d(post-activation of layer i); fold in
            // the tanh derivative for hidden layers (output layer is linear).
            if i + 1 < n {
                for (d, a) in delta.iter_mut().zip(&cache.acts[i + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &cache.acts[i];
            let (dw, db) = (&mut grads.dw[i], &mut grads.db[i]);
            for (r, &dz) in delta.iter().enumerate() {
                db[r] += dz;
                let row = &mut dw[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (c, &xin) in input.iter().enumerate() {
                    row[c] += dz * xin;
                }
            }
            delta = layer.input_grad(&delta);
        }
        Ok((grads, delta))
    }
}

impl DenseLayer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.w[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            *o += acc;
        }
        out
    }

    fn input_grad(&self, delta: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (r, &dz) in delta.iter().enumerate() {
            let row = &self.w[r * self.in_dim..(r + 1) * self.in_dim];
            for (c, wv) in row.iter().enumerate() {
                dx[c] += wv * dz;
            }
        }
        dx
    }
}

impl MlpGrads {
    pub fn zeros(net: &Mlp) -> Self {
        MlpGrads {
            dw: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            db: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.dw.iter_mut().chain(self.db.iter_mut()) {
            for x in a.iter_mut() {
                *x *= s;
            }
        }
    }
}

/// Pair an MLP's layers with matching gradient buffers as named optimizer
/// blocks.
pub fn mlp_blocks<'a>(prefix: &str, mlp: &'a mut Mlp, grads: &'a MlpGrads) -> Vec<ParamBlock<'a>> {
    let mut out = Vec::with_capacity(2 * mlp.layers.len());
    for (i, (layer, (dw, db))) in
        mlp.layers.iter_mut().zip(grads.dw.iter().zip(&grads.db)).enumerate()
    {
        out.push(ParamBlock { name: format!("{prefix}.layer{i}.w"), params: &mut layer.w, grads: dw });
        out.push(ParamBlock { name: format!("{prefix}.layer{i}.b"), params: &mut layer.b, grads: db });
    }
    out
}

/// Learned lookup table: `rows` vectors of `dim` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub rows: usize,
    pub dim: usize,
    pub w: Vec<f64>,
}

impl Embedding {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Embedding { rows, dim, w: vec![0.0; rows * dim] }
    }

    pub fn init(rows: usize, dim: usize, rng: &mut Stream) -> Self {
        let mut e = Self::zeros(rows, dim);
        let bound = 1.0 / (dim as f64).sqrt();
        for w in &mut e.w {
            *w = rng.random_range(-bound..bound);
        }
        e
    }

    pub fn lookup(&self, row: usize) -> &[f64] {
        debug_assert!(row < self.rows, "embedding row {row} out of {}", self.rows);
        &self.w[row * self.dim..(row + 1) * self.dim]
    }

    /// Accumulate `grad` into the gradient buffer entry for `row`.
    pub fn accumulate(grads: &mut [f64], dim: usize, row: usize, grad: &[f64]) {
        let slot = &mut grads[row * dim..(row + 1) * dim];
        for (g, u) in slot.iter_mut().zip(grad) {
            *g += u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;

    #[test]
    fn zero_net_maps_everything_to_zero() {
        let net = Mlp::zeros(&[3, 5, 2]);
        let y = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut net = Mlp::zeros(&[1, 1]);
        net.layers[0].w[0] = 1.0;
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn affine_single_layer_by_hand() {
        // y = 2x + 1 at x=3 -> 7
        let mut net = Mlp::zeros(&[1, 1]);
        net.layers[0].w[0] = 2.0;
        net.layers[0].b[0] = 1.0;
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn linear_backward_by_hand() {
        // w=2, b=1, x=3, upstream=1 -> dW := x = 3, db := 1, dx := w = 2
        let mut net = Mlp::zeros(&[1, 1]);
        net.layers[0].w[0] = 2.0;
        net.layers[0].b[0] = 1.0;
        let (_, cache) = net.forward_cached(&[3.0]).unwrap();
        let (grads, dx) = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(grads.dw[0], vec![3.0]);
        assert_eq!(grads.db[0], vec![1.0]);
        assert_eq!(dx, vec![2.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = rng_stream(1, "nn-test");
        let net = Mlp::init(&[4, 8, 3], &mut rng);
        let x: Vec<f64> = (0..4).map(|i| 0.1 * i as f64).collect();
        let (_, cache) = net.forward_cached(&x).unwrap();
        let (grads, dx) = net.backward(&cache, &[0.0, 0.0, 0.0]).unwrap();
        assert!(grads.dw.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.db.iter().flatten().all(|&g| g == 0.0));
        assert!(dx.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let net = Mlp::zeros(&[3, 2]);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
        let (_, cache) = net.forward_cached(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_matches_finite_differences_on_repo_shapes() {
        // Every MLP shape family used in the crate, 100 random draws total.
        let shapes: [&[usize]; 4] = [&[2, 8, 1], &[10, 16, 16, 4], &[5, 12, 3], &[7, 9, 9, 2]];
        let mut rng = rng_stream(42, "nn-fdcheck");
        let mut draws = 0;
        'outer: loop {
            for dims in shapes {
                let net = Mlp::init(dims, &mut rng);
                let x: Vec<f64> =
                    (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
                let upstream: Vec<f64> =
                    (0..*dims.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
                check_grads(&net, &x, &upstream);
                draws += 1;
                if draws >= 100 {
                    break 'outer;
                }
            }
        }
    }

    fn check_grads(net: &Mlp, x: &[f64], upstream: &[f64]) {
        let (_, cache) = net.forward_cached(x).unwrap();
        let (grads, dx) = net.backward(&cache, upstream).unwrap();

        let scalar = |net: &Mlp, x: &[f64]| -> f64 {
            net.forward(x)
                .unwrap()
                .iter()
                .zip(upstream)
                .map(|(y, u)| y * u)
                .sum()
        };

        // Input gradient.
        let fd_dx = central_diff(
            |xs| scalar(net, xs),
            x,
            1e-5,
        );
        assert!(max_rel_err(&dx, &fd_dx) < 1e-4);

        // Parameter gradients, a few probes per layer.
        for (li, layer) in net.layers.iter().enumerate() {
            for wi in (0..layer.w.len()).step_by(layer.w.len().max(1) / 3 + 1) {
                let mut perturbed = net.clone();
                let h = 1e-5;
                perturbed.layers[li].w[wi] = layer.w[wi] + h;
                let up = scalar(&perturbed, x);
                perturbed.layers[li].w[wi] = layer.w[wi] - h;
                let down = scalar(&perturbed, x);
                let fd = (up - down) / (2.0 * h);
                assert!(rel_err(grads.dw[li][wi], fd) < 1e-4);
            }
        }
    }
}
