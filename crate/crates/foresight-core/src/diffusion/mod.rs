//! Diffusion proposal policy over action chunks.
//!
//! A DDPM whose denoiser is an MLP conditioned on the observation, a learned
//! task embedding, and a sinusoidal timestep embedding. Sampling runs the
//! ancestral reverse process; `propose` draws K candidates, de-duplicates
//! them within a small L-infinity ball, and attaches priors (uniform by
//! default, optionally density-weighted).

mod regression;

pub use regression::RegressionPolicy;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::PriorMode;
use crate::error::{Error, Result};
use crate::mcts::ProposalPolicy;
use crate::nn::{Embedding, Mlp, MlpGrads};
use crate::rng::Stream;
use crate::types::{ActionChunk, ObservationVec};

/// Sinusoidal timestep embedding plus the schedule's signal/noise scales
/// at t (the net otherwise has to rediscover the schedule from t alone).
pub const TIME_EMBED_DIM: usize = 10;
/// Per-component latent scaling: displacements live in [-0.1, 0.1] and are
/// stretched to near-unit range before noising, so the schedule's
/// signal-to-noise profile matches the data everywhere in the chain. The
/// action bounds map to +/-0.8 rather than +/-1: demonstrations saturate
/// the bounds constantly, and data sitting exactly on the sampler's clamp
/// boundary would get biased inward (overshoot past 0.8 is clipped back to
/// the bound on chunk construction instead).
const LATENT_SCALE: [f64; 3] = [8.0, 8.0, 0.8];

fn chunk_to_latent(chunk: &ActionChunk) -> Vec<f64> {
    chunk
        .steps()
        .iter()
        .flat_map(|s| s.iter().zip(&LATENT_SCALE).map(|(v, k)| v * k))
        .collect()
}

fn latent_to_chunk(h: usize, latent: &[f64]) -> ActionChunk {
    let scaled: Vec<f64> =
        latent.iter().enumerate().map(|(i, v)| v / LATENT_SCALE[i % 3]).collect();
    ActionChunk::from_flat(h, &scaled)
}
/// Relative-geometry features appended to the conditioning observation:
/// object-to-gripper and goal-to-object displacements. The controller the
/// data comes from is a function of exactly these differences, so exposing
/// them directly makes the conditional structure learnable at small scale.
pub fn geometry_features(obs: &ObservationVec) -> Vec<f64> {
    let g = obs.gripper();
    let t = obs.target();
    let norm = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
    let mut v = Vec::with_capacity(2 * obs.n_objects() + 10);
    for i in 0..obs.n_objects() {
        let o = obs.object(i);
        v.push(o[0] - g[0]);
        v.push(o[1] - g[1]);
    }
    let o0 = obs.object(0);
    v.push(t[0] - o0[0]);
    v.push(t[1] - o0[1]);
    let o1 = if obs.n_objects() > 1 { obs.object(1) } else { [0.0, 0.0] };
    if obs.n_objects() > 1 {
        v.push(o1[0] - o0[0]);
        v.push(o1[1] - o0[1]);
    } else {
        v.push(0.0);
        v.push(0.0);
    }
    // Distance scalars; the grasp and release triggers are thresholds on
    // exactly these, which the net would otherwise have to assemble from
    // the displacement pairs.
    v.push(norm([o0[0] - g[0], o0[1] - g[1]]));
    v.push(norm([t[0] - o0[0], t[1] - o0[1]]));
    v.push(if obs.n_objects() > 1 { norm([o1[0] - o0[0], o1[1] - o0[1]]) } else { 0.0 });
    // Scale the thresholds' neighborhood up so small differences are not
    // lost next to unit-scale inputs.
    let n = v.len();
    v.push(10.0 * v[n - 3]);
    v.push(10.0 * v[n - 2]);
    v.push(10.0 * v[n - 1]);
    v
}

/// Width of [`geometry_features`] for a given object count.
pub fn geometry_dim(n_objects: usize) -> usize {
    2 * n_objects + 10
}

/// Candidates closer than this (L-infinity) count as duplicates.
const DEDUP_DISTANCE: f64 = 1e-3;
/// Bounded re-sampling rounds before duplicates are permitted.
const DEDUP_ROUNDS: usize = 5;
/// Smoothing constant in the density-weighted prior.
const DENSITY_EPS: f64 = 1e-2;

/// Forward-process schedule: betas and the running alpha-bar products.
///
/// Invariants: `0 < beta_1 <= ... <= beta_T < 1`, so `alpha_bar` is strictly
/// decreasing from its implicit `alpha_bar_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Default linear-beta schedule. The range is chosen so the cumulative
    /// noise matches the usual thousand-step setting at small T:
    /// `alpha_bar_T ~ exp(-sum beta) ~ 1e-4`, making the `x_T ~ N(0, I)`
    /// sampling prior consistent with training.
    pub fn linear(t_steps: usize) -> Self {
        let hi = (18.0 / t_steps as f64).min(0.999);
        Self::from_betas(linspace(1e-3, hi, t_steps)).expect("default schedule is valid")
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("noise schedule must have T >= 1".into()));
        }
        let mut prev = 0.0;
        for &b in &betas {
            if !(b > 0.0 && b < 1.0) || b < prev {
                return Err(Error::Config(
                    "betas must be non-decreasing and lie in (0, 1)".into(),
                ));
            }
            prev = b;
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule { betas, alphas, alpha_bars })
    }

    pub fn t_steps(&self) -> usize {
        self.betas.len()
    }

    /// `alpha_bar_t` for `t` in `1..=T` (`alpha_bar_0` is 1 by definition).
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_steps() {
            return Err(Error::Usage(format!(
                "diffusion step t={t} outside 1..={}",
                self.t_steps()
            )));
        }
        Ok(())
    }
}

/// `x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`, elementwise.
pub fn forward_noise(
    schedule: &NoiseSchedule,
    x0: &[f64],
    t: usize,
    eps: &[f64],
) -> Result<Vec<f64>> {
    let ab = schedule.alpha_bar(t)?;
    if x0.len() != eps.len() {
        return Err(Error::Shape("x0 and eps lengths differ".into()));
    }
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect())
}

/// The denoising network: predicts the injected noise from the noisy chunk,
/// the timestep embedding, and the conditioning observation + task embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserNet {
    pub mlp: Mlp,
    pub task_embed: Embedding,
    pub chunk_h: usize,
    pub obs_dim: usize,
}

/// Gradients for every [`DenoiserNet`] parameter block.
pub struct DenoiserGrads {
    pub mlp: MlpGrads,
    pub task_embed: Vec<f64>,
}

impl DenoiserNet {
    pub fn init(
        chunk_h: usize,
        obs_dim: usize,
        n_tasks: usize,
        task_embed_dim: usize,
        hidden: &[usize],
        rng: &mut Stream,
    ) -> Self {
        let chunk_dim = 3 * chunk_h;
        let n_objects = (obs_dim - 6) / 2;
        let in_dim =
            chunk_dim + TIME_EMBED_DIM + obs_dim + geometry_dim(n_objects) + task_embed_dim;
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(chunk_dim);
        DenoiserNet {
            mlp: Mlp::init(&dims, rng),
            task_embed: Embedding::init(n_tasks, task_embed_dim, rng),
            chunk_h,
            obs_dim,
        }
    }

    pub fn chunk_dim(&self) -> usize {
        3 * self.chunk_h
    }

    fn input(
        &self,
        schedule: &NoiseSchedule,
        x_t: &[f64],
        t: usize,
        obs: &ObservationVec,
    ) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.mlp.in_dim());
        v.extend_from_slice(x_t);
        v.extend_from_slice(&time_embedding(schedule, t));
        v.extend_from_slice(obs.as_slice());
        v.extend_from_slice(&geometry_features(obs));
        v.extend_from_slice(self.task_embed.lookup(obs.task_id()));
        v
    }

    /// The network's clean-sample head: the MLP predicts the denoised
    /// latent chunk directly. Predicting the sample rather than the raw
    /// noise keeps the low-noise end of a short schedule well-conditioned
    /// (the equivalent noise prediction there is a steep function of `x_t`
    /// that a small MLP cannot carve).
    pub fn predict_x0(
        &self,
        schedule: &NoiseSchedule,
        x_t: &[f64],
        t: usize,
        obs: &ObservationVec,
    ) -> Result<Vec<f64>> {
        self.mlp.forward(&self.input(schedule, x_t, t, obs))
    }

    /// Predicted noise for a noisy chunk at step `t` under condition `obs`,
    /// derived from the clean-sample head through the exact forward-process
    /// identity `eps = (x_t - sqrt(ab) x0) / sqrt(1 - ab)`.
    pub fn predict(
        &self,
        schedule: &NoiseSchedule,
        x_t: &[f64],
        t: usize,
        obs: &ObservationVec,
    ) -> Result<Vec<f64>> {
        let v = self.predict_x0(schedule, x_t, t, obs)?;
        let ab = schedule.alpha_bar(t)?;
        Ok(x_t
            .iter()
            .zip(&v)
            .map(|(xt, x0)| (xt - ab.sqrt() * x0) / (1.0 - ab).sqrt())
            .collect())
    }

    pub fn zero_grads(&self) -> DenoiserGrads {
        DenoiserGrads {
            mlp: MlpGrads::zeros(&self.mlp),
            task_embed: vec![0.0; self.task_embed.w.len()],
        }
    }
}

/// Parameter-free timestep features: four sinusoid pairs plus the
/// schedule's `sqrt(alpha_bar_t)` and `sqrt(1 - alpha_bar_t)`.
pub fn time_embedding(schedule: &NoiseSchedule, t: usize) -> [f64; TIME_EMBED_DIM] {
    let mut e = [0.0; TIME_EMBED_DIM];
    let tf = t as f64;
    for i in 0..4 {
        let freq = 10f64.powi(-(i as i32));
        e[2 * i] = (tf * freq).sin();
        e[2 * i + 1] = (tf * freq).cos();
    }
    let ab = schedule.alpha_bars[t - 1];
    e[8] = ab.sqrt();
    e[9] = (1.0 - ab).sqrt();
    e
}

/// One-sample DDPM objective: draw `t` uniform in `[1, T]` and `eps` standard
/// normal, and return the squared error between `eps` and the net's
/// prediction at `forward_noise(x0, t, eps)`, with gradients for every
/// parameter block. The loss accumulates into `grads` so batches can share
/// one buffer.
pub fn ddpm_loss(
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    chunk: &ActionChunk,
    obs: &ObservationVec,
    rng: &mut Stream,
    grads: &mut DenoiserGrads,
) -> Result<f64> {
    let x0 = chunk_to_latent(chunk);
    let t = rng.random_range(1..=schedule.t_steps());
    let eps: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
    let x_t = forward_noise(schedule, &x0, t, &eps)?;

    let input = net.input(schedule, &x_t, t, obs);
    let (v, cache) = net.mlp.forward_cached(&input)?;
    let ab = schedule.alpha_bar(t)?;
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let pred: Vec<f64> =
        x_t.iter().zip(&v).map(|(xt, x0)| (xt - sa * x0) / sn).collect();
    let loss: f64 = pred.iter().zip(&eps).map(|(p, e)| (p - e) * (p - e)).sum();
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("non-finite ddpm loss at t={t}")));
    }

    // d(loss)/d(v) through the affine noise identity.
    let upstream: Vec<f64> =
        pred.iter().zip(&eps).map(|(p, e)| 2.0 * (p - e) * (-sa / sn)).collect();
    let (mlp_grads, d_input) = net.mlp.backward(&cache, &upstream)?;
    grads.mlp.add(&mlp_grads);
    let task_off = input.len() - net.task_embed.dim;
    Embedding::accumulate(
        &mut grads.task_embed,
        net.task_embed.dim,
        obs.task_id(),
        &d_input[task_off..],
    );
    Ok(loss)
}

/// Ancestral DDPM sampling: start from standard normal noise and iterate the
/// reverse process for T steps. Each step reconstructs the implied clean
/// sample from the predicted noise, clamps it to the latent bounds (at few
/// denoising steps the low-SNR end would otherwise amplify prediction error
/// by 1/sqrt(alpha_bar)), and draws the posterior-variance transition. The
/// final chunk is clamped into the action bounds on construction.
pub fn sample(
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    obs: &ObservationVec,
    rng: &mut Stream,
) -> Result<ActionChunk> {
    let dim = net.chunk_dim();
    let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    for t in (1..=schedule.t_steps()).rev() {
        let alpha = schedule.alphas[t - 1];
        let alpha_bar = schedule.alpha_bars[t - 1];
        let alpha_bar_prev = if t > 1 { schedule.alpha_bars[t - 2] } else { 1.0 };

        // Predicted clean sample, clamped to the latent range.
        let x0_hat: Vec<f64> = net
            .predict_x0(schedule, &x, t, obs)?
            .into_iter()
            .map(|x0| x0.clamp(-1.0, 1.0))
            .collect();
        if t == 1 {
            x = x0_hat;
            break;
        }

        // Posterior mean and variance of x_{t-1} given (x_t, x0_hat).
        let beta = schedule.betas[t - 1];
        let c0 = alpha_bar_prev.sqrt() * beta / (1.0 - alpha_bar);
        let ct = alpha.sqrt() * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar);
        let sigma = ((1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta).sqrt();
        for (i, xi) in x.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *xi = c0 * x0_hat[i] + ct * *xi + sigma * z;
        }
    }
    Ok(latent_to_chunk(net.chunk_h, &x))
}

/// One action chunk with its prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action: ActionChunk,
    pub prior: f64,
}

/// Exactly K candidates with normalized priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet(pub Vec<Candidate>);

impl CandidateSet {
    /// Build from chunks plus a prior weight per chunk; weights are
    /// normalized to sum to 1.
    pub fn from_weighted(chunks: Vec<ActionChunk>, weights: &[f64]) -> Result<CandidateSet> {
        if chunks.is_empty() || chunks.len() != weights.len() {
            return Err(Error::Shape("candidate/weight length mismatch".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Usage("candidate weights must be positive".into()));
        }
        Ok(CandidateSet(
            chunks
                .into_iter()
                .zip(weights)
                .map(|(action, &w)| Candidate { action, prior: w / total })
                .collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn priors(&self) -> Vec<f64> {
        self.0.iter().map(|c| c.prior).collect()
    }
}

/// Draw `k` diverse samples and attach priors.
///
/// Duplicates (within 1e-3 L-infinity) are re-sampled for up to five rounds,
/// after which they are permitted — the planner tolerates duplicates, they
/// just split visits.
pub fn propose(
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    obs: &ObservationVec,
    k: usize,
    prior_mode: PriorMode,
    rng: &mut Stream,
) -> Result<CandidateSet> {
    let mut chunks: Vec<ActionChunk> = Vec::with_capacity(k);
    for round in 0..DEDUP_ROUNDS {
        while chunks.len() < k {
            let c = sample(net, schedule, obs, rng)?;
            let dup = chunks.iter().any(|o| o.linf_distance(&c) < DEDUP_DISTANCE);
            if dup && round + 1 < DEDUP_ROUNDS {
                break;
            }
            chunks.push(c);
        }
        if chunks.len() == k {
            break;
        }
    }

    let weights = match prior_mode {
        PriorMode::Uniform => vec![1.0; k],
        PriorMode::Density => density_weights(&chunks),
    };
    CandidateSet::from_weighted(chunks, &weights)
}

/// Inverse mean distance to the two nearest other candidates; favors
/// candidates in dense sample regions.
fn density_weights(chunks: &[ActionChunk]) -> Vec<f64> {
    let flats: Vec<Vec<f64>> = chunks.iter().map(|c| c.flatten()).collect();
    flats
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut dists: Vec<f64> = flats
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| l2(a, b))
                .collect();
            dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
            dists.truncate(2);
            if dists.is_empty() {
                1.0
            } else {
                let mean = dists.iter().sum::<f64>() / dists.len() as f64;
                1.0 / (DENSITY_EPS + mean)
            }
        })
        .collect()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Trained proposal policy bundle used by the planner and the reactive
/// baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionPolicy {
    pub net: DenoiserNet,
    pub schedule: NoiseSchedule,
    pub prior_mode: PriorMode,
}

impl DiffusionPolicy {
    /// Single sample, executed without search: the reactive baseline.
    pub fn reactive(&self, obs: &ObservationVec, rng: &mut Stream) -> Result<ActionChunk> {
        sample(&self.net, &self.schedule, obs, rng)
    }
}

impl ProposalPolicy for DiffusionPolicy {
    fn propose(&self, obs: &ObservationVec, k: usize, rng: &mut Stream) -> Result<CandidateSet> {
        propose(&self.net, &self.schedule, obs, k, self.prior_mode, rng)
    }

    fn sample_one(&self, obs: &ObservationVec, rng: &mut Stream) -> Result<ActionChunk> {
        self.reactive(obs, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;

    fn test_obs() -> ObservationVec {
        ObservationVec(vec![0.5, 0.5, 0.0, 0.3, 0.3, 0.7, 0.7, 0.9, 0.9, 0.0])
    }

    fn small_net(rng: &mut Stream) -> DenoiserNet {
        DenoiserNet::init(4, 10, 3, 4, &[32], rng)
    }

    #[test]
    fn default_schedule_is_monotone_with_a_vanishing_terminal_alpha_bar() {
        let s = NoiseSchedule::linear(50);
        assert_eq!(s.t_steps(), 50);
        for w in s.alpha_bars.windows(2) {
            assert!(w[1] < w[0], "alpha_bar must be strictly decreasing");
        }
        assert!(s.alpha_bars[0] < 1.0);
        // The sampling prior is standard normal; the forward process has to
        // actually reach it.
        assert!(
            s.alpha_bars[49] < 1e-3,
            "terminal alpha_bar {} leaves signal in x_T",
            s.alpha_bars[49]
        );
    }

    #[test]
    fn thousand_step_range_schedule_is_monotone() {
        // The textbook beta range at its native horizon.
        let s = NoiseSchedule::from_betas(linspace(1e-4, 0.02, 1000)).unwrap();
        for w in s.alpha_bars.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(s.alpha_bars[999] < 1e-3);
    }

    #[test]
    fn forward_noise_matches_hand_arithmetic() {
        // alpha_bar = 0.25 via a single beta of 0.75: sqrt(0.25)*1.0 = 0.5
        let s = NoiseSchedule::from_betas(vec![0.75]).unwrap();
        let x = forward_noise(&s, &[1.0], 1, &[0.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn forward_noise_endpoints() {
        // beta ~ 0: x_t ~ x0. beta ~ 1: x_t ~ eps.
        let nearly_zero = NoiseSchedule::from_betas(vec![1e-14]).unwrap();
        let x = forward_noise(&nearly_zero, &[2.0], 1, &[5.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-6);

        let nearly_one = NoiseSchedule::from_betas(vec![1.0 - 1e-14]).unwrap();
        let x = forward_noise(&nearly_one, &[2.0], 1, &[5.0]).unwrap();
        assert!((x[0] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn forward_noise_rejects_t_out_of_range() {
        let s = NoiseSchedule::linear(10);
        assert!(forward_noise(&s, &[0.0], 0, &[0.0]).is_err());
        assert!(forward_noise(&s, &[0.0], 11, &[0.0]).is_err());
    }

    #[test]
    fn loss_matches_the_objective_formula_for_a_fixed_head() {
        // Zero out the MLP so the clean-sample head is exactly 0; then the
        // derived noise prediction is x_t / sqrt(1 - ab) and the loss must
        // equal |eps - x_t/sqrt(1-ab)|^2 for the drawn (t, eps). Reproduce
        // the draws with a cloned stream.
        let mut rng = rng_stream(3, "ddpm-test");
        let mut net = small_net(&mut rng);
        for layer in &mut net.mlp.layers {
            layer.w.iter_mut().for_each(|w| *w = 0.0);
            layer.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let schedule = NoiseSchedule::linear(10);
        let chunk = ActionChunk::new(vec![[0.05, -0.05, 0.5]; 4]);
        let obs = test_obs();

        let mut replay = rng.clone();
        let mut grads = net.zero_grads();
        let loss = ddpm_loss(&net, &schedule, &chunk, &obs, &mut rng, &mut grads).unwrap();

        let t: usize = replay.random_range(1..=schedule.t_steps());
        let eps: Vec<f64> = (0..12).map(|_| replay.sample(StandardNormal)).collect();
        let x0 = super::chunk_to_latent(&chunk);
        let ab = schedule.alpha_bar(t).unwrap();
        let expected: f64 = x0
            .iter()
            .zip(&eps)
            .map(|(x0i, e)| {
                let xt = ab.sqrt() * x0i + (1.0 - ab).sqrt() * e;
                let pred = xt / (1.0 - ab).sqrt();
                (e - pred) * (e - pred)
            })
            .sum();
        assert!((loss - expected).abs() < 1e-10, "{loss} vs {expected}");
    }

    #[test]
    fn oracle_head_reaches_zero_loss() {
        // A head that outputs exactly the clean latent makes the derived
        // noise prediction equal eps, so the loss must vanish.
        let mut rng = rng_stream(4, "ddpm-oracle");
        let mut net = small_net(&mut rng);
        let chunk = ActionChunk::new(vec![[0.03, -0.02, 1.0]; 4]);
        let x0 = super::chunk_to_latent(&chunk);
        for layer in &mut net.mlp.layers {
            layer.w.iter_mut().for_each(|w| *w = 0.0);
            layer.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let last = net.mlp.layers.len() - 1;
        net.mlp.layers[last].b.copy_from_slice(&x0);
        let schedule = NoiseSchedule::linear(10);
        let obs = test_obs();
        let mut grads = net.zero_grads();
        let loss =
            ddpm_loss(&net, &schedule, &chunk, &obs, &mut rng, &mut grads).unwrap();
        assert!(loss < 1e-20, "oracle head loss {loss}");
    }

    #[test]
    fn ddpm_gradients_match_finite_differences() {
        use crate::nn::rel_err;
        let mut rng = rng_stream(11, "ddpm-fd");
        let net = small_net(&mut rng);
        let schedule = NoiseSchedule::linear(10);
        let chunk = ActionChunk::new(vec![[0.05, -0.02, 0.5]; 4]);
        let obs = test_obs();

        // Freeze (t, eps) by replaying the same stream state for every probe.
        let base = rng.clone();
        let loss_with = |n: &DenoiserNet| -> f64 {
            let mut r = base.clone();
            let mut g = n.zero_grads();
            ddpm_loss(n, &schedule, &chunk, &obs, &mut r, &mut g).unwrap()
        };

        let mut r0 = base.clone();
        let mut grads = net.zero_grads();
        ddpm_loss(&net, &schedule, &chunk, &obs, &mut r0, &mut grads).unwrap();

        let h = 1e-5;
        // Probe a few MLP weights across layers.
        for li in 0..net.mlp.layers.len() {
            let len = net.mlp.layers[li].w.len();
            for wi in (0..len).step_by(len / 5 + 1) {
                let mut plus = net.clone();
                plus.mlp.layers[li].w[wi] += h;
                let mut minus = net.clone();
                minus.mlp.layers[li].w[wi] -= h;
                let fd = (loss_with(&plus) - loss_with(&minus)) / (2.0 * h);
                assert!(
                    rel_err(grads.mlp.dw[li][wi], fd) < 1e-4,
                    "layer {li} w[{wi}]: {} vs {fd}",
                    grads.mlp.dw[li][wi]
                );
            }
        }
        // And the conditioning task embedding.
        let row = obs.task_id() * net.task_embed.dim;
        for d in 0..net.task_embed.dim {
            let mut plus = net.clone();
            plus.task_embed.w[row + d] += h;
            let mut minus = net.clone();
            minus.task_embed.w[row + d] -= h;
            let fd = (loss_with(&plus) - loss_with(&minus)) / (2.0 * h);
            assert!(rel_err(grads.task_embed[row + d], fd) < 1e-4);
        }
    }

    #[test]
    fn sampling_is_deterministic_under_a_fixed_stream() {
        let mut rng = rng_stream(5, "sample-test");
        let net = small_net(&mut rng);
        let schedule = NoiseSchedule::linear(20);
        let obs = test_obs();
        let a = sample(&net, &schedule, &obs, &mut rng_stream(9, "draw")).unwrap();
        let b = sample(&net, &schedule, &obs, &mut rng_stream(9, "draw")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn propose_k1_has_prior_one_and_matches_sample_one() {
        let mut rng = rng_stream(6, "propose-test");
        let net = small_net(&mut rng);
        let policy = DiffusionPolicy {
            net,
            schedule: NoiseSchedule::linear(20),
            prior_mode: PriorMode::Uniform,
        };
        let obs = test_obs();
        let set = ProposalPolicy::propose(&policy, &obs, 1, &mut rng_stream(4, "p")).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.0[0].prior, 1.0);
        let single = policy.reactive(&obs, &mut rng_stream(4, "p")).unwrap();
        assert_eq!(set.0[0].action, single);
    }

    #[test]
    fn priors_normalize_for_any_k() {
        let mut rng = rng_stream(7, "priors-test");
        let net = small_net(&mut rng);
        let schedule = NoiseSchedule::linear(10);
        let obs = test_obs();
        for mode in [PriorMode::Uniform, PriorMode::Density] {
            for k in [1, 3, 8] {
                let set = propose(&net, &schedule, &obs, k, mode, &mut rng).unwrap();
                assert_eq!(set.len(), k);
                let total: f64 = set.priors().iter().sum();
                assert!((total - 1.0).abs() < 1e-12, "{mode:?} k={k}: {total}");
                assert!(set.priors().iter().all(|&p| p > 0.0));
            }
        }
    }
}
