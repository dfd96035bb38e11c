//! Quantitative evaluation: success rates, Fréchet distance between rollout
//! feature distributions (the video-distance analog, reported as "FD-traj"),
//! PSNR/SSIM on rendered frames, and reward-prediction error.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TransitionRecord;
use crate::env::{render_obs, Frame};
use crate::error::{Error, Result};
use crate::rng::rng_stream;
use crate::types::Trajectory;
use crate::worldmodel::{rollout, TokenSampling, WorldModel};

/// Gaussian moment summary of a feature set.
///
/// The covariance is symmetrized on construction; any tiny negative
/// eigenvalues from degenerate data are clamped to zero inside the square
/// roots rather than regularized away, keeping hand-computable cases exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    /// Row-major `d x d` covariance.
    pub cov: Vec<f64>,
    pub d: usize,
}

impl GaussianSummary {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::Shape(format!(
                "covariance has {} entries, expected {}",
                cov.len(),
                d * d
            )));
        }
        for r in 0..d {
            for c in 0..r {
                if (cov[r * d + c] - cov[c * d + r]).abs() > 1e-10 {
                    return Err(Error::Shape("covariance is not symmetric".into()));
                }
            }
        }
        Ok(GaussianSummary { mean, cov, d })
    }
}

/// Sample mean and (n-1)-normalized covariance of a feature set, symmetrized.
pub fn summarize_rollouts(features: &[Vec<f64>]) -> Result<GaussianSummary> {
    if features.is_empty() {
        return Err(Error::Usage("no feature vectors to summarize".into()));
    }
    let d = features[0].len();
    if features.len() < d + 1 {
        return Err(Error::Usage(format!(
            "need at least d+1 = {} samples for a {d}-dim summary, got {}",
            d + 1,
            features.len()
        )));
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; d];
    for f in features {
        if f.len() != d {
            return Err(Error::Shape("ragged feature vectors".into()));
        }
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![0.0; d * d];
    for f in features {
        for r in 0..d {
            let dr = f[r] - mean[r];
            for c in 0..d {
                cov[r * d + c] += dr * (f[c] - mean[c]);
            }
        }
    }
    for v in &mut cov {
        *v /= n - 1.0;
    }
    // Symmetrize against accumulation-order noise.
    for r in 0..d {
        for c in 0..r {
            let s = 0.5 * (cov[r * d + c] + cov[c * d + r]);
            cov[r * d + c] = s;
            cov[c * d + r] = s;
        }
    }
    GaussianSummary::new(mean, cov)
}

/// Squared Fréchet distance between two Gaussians:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2})`,
/// computed via symmetric PSD square roots by eigendecomposition. Negative
/// numerical residue within 1e-8 is clamped to zero.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.d != b.d {
        return Err(Error::Shape(format!("dimension mismatch: {} vs {}", a.d, b.d)));
    }
    let d = a.d;
    let mu_a = DVector::from_column_slice(&a.mean);
    let mu_b = DVector::from_column_slice(&b.mean);
    let sa = DMatrix::from_row_slice(d, d, &a.cov);
    let sb = DMatrix::from_row_slice(d, d, &b.cov);

    let sqrt_a = psd_sqrt(&sa);
    let inner = &sqrt_a * &sb * &sqrt_a;
    let cross = psd_sqrt(&inner);

    let mean_term = (mu_a - mu_b).norm_squared();
    let trace_term = sa.trace() + sb.trace() - 2.0 * cross.trace();
    let d2 = mean_term + trace_term;
    debug_assert!(d2 > -1e-6, "unexpectedly negative Frechet residue {d2}");
    Ok(d2.max(0.0))
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// (numerical noise on degenerate inputs) clamp to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = 0.5 * (m + m.transpose());
    let eig = sym.symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
        let root = lambda.max(0.0).sqrt();
        for r in 0..scaled.nrows() {
            scaled[(r, c)] *= root;
        }
    }
    &scaled * eig.eigenvectors.transpose()
}

/// Fraction of successful trajectories.
pub fn success_rate(trajectories: &[Trajectory]) -> Result<(f64, usize)> {
    if trajectories.is_empty() {
        return Err(Error::Usage("success_rate over an empty set".into()));
    }
    let hits = trajectories.iter().filter(|t| t.success()).count();
    Ok((hits as f64 / trajectories.len() as f64, trajectories.len()))
}

/// Peak signal-to-noise ratio with data range 1.0. Identical frames report
/// the +inf convention as a 99 dB sentinel.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    check_frames(a, b)?;
    let mse: f64 = a
        .px
        .iter()
        .zip(&b.px)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.px.len() as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 8;
const SSIM_STRIDE: usize = 4;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Structural similarity over 8x8 windows at stride 4 with the standard
/// stabilizing constants (data range 1.0).
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_frames(a, b)?;
    if a.w < SSIM_WINDOW || a.h < SSIM_WINDOW {
        return Err(Error::Shape("frame smaller than the SSIM window".into()));
    }
    let mut total = 0.0;
    let mut windows = 0usize;
    let mut row = 0;
    while row + SSIM_WINDOW <= a.h {
        let mut col = 0;
        while col + SSIM_WINDOW <= a.w {
            total += ssim_window(a, b, row, col);
            windows += 1;
            col += SSIM_STRIDE;
        }
        row += SSIM_STRIDE;
    }
    Ok(total / windows as f64)
}

fn ssim_window(a: &Frame, b: &Frame, row: usize, col: usize) -> f64 {
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut ma, mut mb) = (0.0, 0.0);
    for r in row..row + SSIM_WINDOW {
        for c in col..col + SSIM_WINDOW {
            ma += a.get(r, c);
            mb += b.get(r, c);
        }
    }
    ma /= n;
    mb /= n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for r in row..row + SSIM_WINDOW {
        for c in col..col + SSIM_WINDOW {
            let da = a.get(r, c) - ma;
            let db = b.get(r, c) - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
    }
    va /= n;
    vb /= n;
    cov /= n;
    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
}

fn check_frames(a: &Frame, b: &Frame) -> Result<()> {
    if a.w != b.w || a.h != b.h {
        return Err(Error::Shape(format!(
            "frame dimensions differ: {}x{} vs {}x{}",
            a.w, a.h, b.w, b.h
        )));
    }
    Ok(())
}

/// Per-task success row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuccess {
    pub task: String,
    pub arm: String,
    pub rate: f64,
    pub successes: usize,
    pub episodes: usize,
    pub stderr: f64,
}

impl TaskSuccess {
    pub fn from_trajectories(task: &str, arm: &str, trajs: &[Trajectory]) -> Result<TaskSuccess> {
        let (rate, episodes) = success_rate(trajs)?;
        let successes = (rate * episodes as f64).round() as usize;
        let stderr = if episodes > 1 {
            (rate * (1.0 - rate) / (episodes as f64 - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(TaskSuccess { task: task.into(), arm: arm.into(), rate, successes, episodes, stderr })
    }
}

/// Fidelity metrics for one world-model arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFidelity {
    pub arm: String,
    /// Fréchet distance between generated and ground-truth rollout-window
    /// features ("FD-traj": 4 consecutive observation vectors concatenated;
    /// a stand-in feature set — no pretrained video network is involved).
    pub fd_traj: f64,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    /// Only present for arms trained with a reward head (lambda > 0).
    pub reward_mse: Option<f64>,
}

/// Aggregate report: success tables from evaluation runs and/or fidelity
/// tables from ablations. LPIPS is omitted throughout (it would need a
/// pretrained perceptual network); reports carry this note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    /// Manifest id of the run that produced this report.
    #[serde(default)]
    pub manifest_id: String,
    pub success: Vec<TaskSuccess>,
    pub fidelity: Vec<ArmFidelity>,
    pub notes: Vec<String>,
}

/// Held-out episodes (transition sequences in execution order) shared by
/// both arms of an ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationEvalSet {
    pub episodes: Vec<Vec<TransitionRecord>>,
    /// Rollout window length for FD-traj features.
    pub window: usize,
}

/// Evaluate two world-model arms on one shared held-out set.
///
/// FD-traj chains `window` model rollouts per start state (stochastic token
/// sampling) and measures the Fréchet distance of the concatenated windows
/// against ground-truth windows; PSNR/SSIM compare rendered one-step greedy
/// predictions against rendered true next observations; reward MSE is
/// reported only for arms trained with a reward head. Stream labels depend
/// only on the window index, so comparing a model against itself yields
/// exactly identical metrics.
pub fn ablation_compare(
    name_a: &str,
    arm_a: &WorldModel,
    name_b: &str,
    arm_b: &WorldModel,
    eval: &AblationEvalSet,
    seed: u64,
) -> Result<EvalReport> {
    if arm_a.nets.obs_dim != arm_b.nets.obs_dim
        || arm_a.nets.b_max != arm_b.nets.b_max
        || arm_a.nets.chunk_h != arm_b.nets.chunk_h
    {
        return Err(Error::Usage("ablation arms have mismatched model shapes".into()));
    }
    if eval.episodes.is_empty() {
        return Err(Error::Usage("empty ablation evaluation set".into()));
    }

    let truth_features = ground_truth_windows(eval);
    let truth_summary = summarize_rollouts(&truth_features)?;

    let mut fidelity = Vec::new();
    for (name, arm) in [(name_a, arm_a), (name_b, arm_b)] {
        let features = model_windows(arm, eval, seed)?;
        let fd_traj = frechet_distance(&summarize_rollouts(&features)?, &truth_summary)?;
        let (psnr_mean, ssim_mean, reward_mse) = one_step_fidelity(arm, eval)?;
        fidelity.push(ArmFidelity {
            arm: name.to_string(),
            fd_traj,
            psnr_mean,
            ssim_mean,
            reward_mse: (arm.lambda_reward > 0.0).then_some(reward_mse),
        });
    }

    let ranked = if fidelity[0].fd_traj <= fidelity[1].fd_traj {
        format!("fd_traj ranking: {} <= {}", fidelity[0].arm, fidelity[1].arm)
    } else {
        format!("fd_traj ranking: {} <= {}", fidelity[1].arm, fidelity[0].arm)
    };
    Ok(EvalReport {
        manifest_id: String::new(),
        success: Vec::new(),
        fidelity,
        notes: vec![ranked, "lpips omitted: requires a pretrained perceptual network".into()],
    })
}

fn ground_truth_windows(eval: &AblationEvalSet) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for ep in &eval.episodes {
        if ep.len() < eval.window {
            continue;
        }
        for start in 0..=ep.len() - eval.window {
            let mut feat = Vec::new();
            for rec in &ep[start..start + eval.window] {
                feat.extend_from_slice(rec.next_obs.as_slice());
            }
            out.push(feat);
        }
    }
    out
}

fn model_windows(arm: &WorldModel, eval: &AblationEvalSet, seed: u64) -> Result<Vec<Vec<f64>>> {
    let jobs: Vec<(usize, usize)> = eval
        .episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| {
            if ep.len() < eval.window {
                Vec::new()
            } else {
                (0..=ep.len() - eval.window).map(|s| (e, s)).collect()
            }
        })
        .collect();
    jobs.par_iter()
        .map(|&(e, start)| {
            let ep = &eval.episodes[e];
            let mut rng = rng_stream(seed, &format!("fd-window/{e}/{start}"));
            let mut obs = ep[start].obs.clone();
            let mut feat = Vec::with_capacity(eval.window * obs.dim());
            for rec in &ep[start..start + eval.window] {
                let (next, _) = rollout(arm, &obs, &rec.action, TokenSampling::Stochastic, &mut rng)?;
                feat.extend_from_slice(next.as_slice());
                obs = next;
            }
            Ok(feat)
        })
        .collect()
}

fn one_step_fidelity(arm: &WorldModel, eval: &AblationEvalSet) -> Result<(f64, f64, f64)> {
    let records: Vec<&TransitionRecord> = eval.episodes.iter().flatten().collect();
    let stats: Vec<(f64, f64, f64)> = records
        .par_iter()
        .map(|rec| {
            let mut rng = rng_stream(0, "fidelity-greedy");
            let (pred, rhat) = rollout(arm, &rec.obs, &rec.action, TokenSampling::Greedy, &mut rng)?;
            let pred_frame = render_obs(&pred);
            let true_frame = render_obs(&rec.next_obs);
            let err = rhat - rec.reward;
            Ok((psnr(&pred_frame, &true_frame)?, ssim(&pred_frame, &true_frame)?, err * err))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = stats.len() as f64;
    let psnr_mean = stats.iter().map(|s| s.0).sum::<f64>() / n;
    let ssim_mean = stats.iter().map(|s| s.1).sum::<f64>() / n;
    let reward_mse = stats.iter().map(|s| s.2).sum::<f64>() / n;
    Ok((psnr_mean, ssim_mean, reward_mse))
}

impl EvalReport {
    /// CSV rows: success lines then fidelity lines, stable field formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if !self.success.is_empty() {
            out.push_str("kind,task,arm,rate,successes,episodes,stderr\n");
            for s in &self.success {
                out.push_str(&format!(
                    "success,{},{},{:.6},{},{},{:.6}\n",
                    s.task, s.arm, s.rate, s.successes, s.episodes, s.stderr
                ));
            }
        }
        if !self.fidelity.is_empty() {
            out.push_str("kind,arm,fd_traj,psnr,ssim,reward_mse\n");
            for f in &self.fidelity {
                out.push_str(&format!(
                    "fidelity,{},{:.6},{:.6},{:.6},{}\n",
                    f.arm,
                    f.fd_traj,
                    f.psnr_mean,
                    f.ssim_mean,
                    f.reward_mse.map_or("n/a".to_string(), |v| format!("{v:.6}")),
                ));
            }
        }
        out
    }

    /// Long-format CSV (`metric,arm,value`) for radar-style plotting.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("metric,arm,value\n");
        for f in &self.fidelity {
            out.push_str(&format!("fd_traj,{},{:.6}\n", f.arm, f.fd_traj));
            out.push_str(&format!("psnr,{},{:.6}\n", f.arm, f.psnr_mean));
            out.push_str(&format!("ssim,{},{:.6}\n", f.arm, f.ssim_mean));
            if let Some(mse) = f.reward_mse {
                out.push_str(&format!("reward_mse,{},{mse:.6}\n", f.arm));
            }
        }
        for s in &self.success {
            out.push_str(&format!("success_{},{},{:.6}\n", s.task, s.arm, s.rate));
        }
        out
    }
}

#[cfg(test)]
mod tests;
