//! Experiment harness: dataset generation, training both learned
//! components, evaluation, ablations, and report aggregation.
//!
//! Every function is deterministic given the config: all randomness derives
//! from `(config.seed, label)` streams whose labels encode the episode or
//! training role, so parallel and serial runs emit identical artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::checkpoint::{self, config_fingerprint};
use crate::config::Config;
use crate::dataset::{self, DatasetHeader, DemoRecord, TransitionRecord};
use crate::diffusion::{
    ddpm_loss, DenoiserGrads, DenoiserNet, DiffusionPolicy, NoiseSchedule, RegressionPolicy,
};
use crate::env::{scripted_expert, ExpertMode, Tabletop, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::manifest::ExperimentManifest;
use crate::mcts::{run_episode, DecisionMode, EpisodeTrace};
use crate::metrics::{AblationEvalSet, EvalReport, TaskSuccess};
use crate::nn::{mlp_blocks, AdamW, ParamBlock};
use crate::rng::{rng_stream, Stream};
use crate::types::{ActionChunk, Trajectory, TrajectoryMeta, TrajectoryStep};
use crate::worldmodel::{
    evaluate_holdout, fit_codebook, hybrid_train_step, HoldoutStats, TokenSampling, WorldModel,
    WorldModelNets,
};

/// Expert demonstration action noise for repeat passes beyond the first.
const DEMO_NOISE_STD: f64 = 0.005;
const LOG_EVERY: usize = 25;

fn task_spec(cfg: &Config, task: TaskKind, variation: u32, flaky: u32) -> TaskSpec {
    TaskSpec {
        task,
        n_objects: cfg.n_objects,
        variation_id: variation,
        flaky_grasps: flaky,
        max_steps: cfg.max_steps,
        chunk_h: cfg.chunk_h,
        shaping_gamma: cfg.gamma,
    }
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub demos: Vec<DemoRecord>,
    pub transitions: Vec<TransitionRecord>,
    pub expert_episodes: usize,
    pub random_episodes: usize,
}

/// Run the scripted expert (both modes) across tasks and variations, plus a
/// configured share of uniform-random-action episodes for world-model
/// coverage of off-expert states. Demo chunks come from expert episodes
/// only; transitions come from both.
pub fn gen_data(cfg: &Config) -> Result<GeneratedData> {
    struct ExpertJob {
        task: TaskKind,
        variation: u32,
        mode: ExpertMode,
        rep: usize,
    }
    let mut jobs = Vec::new();
    for task in TaskKind::ALL {
        for variation in 0..cfg.variations {
            for mode in ExpertMode::BOTH {
                for rep in 0..cfg.demo_repeats {
                    jobs.push(ExpertJob { task, variation, mode, rep });
                }
            }
        }
    }

    let expert: Vec<(Vec<DemoRecord>, Vec<TransitionRecord>)> = jobs
        .par_iter()
        .map(|job| {
            let env = Tabletop::new(task_spec(cfg, job.task, job.variation, 0))?;
            let label = format!(
                "gen-data/{}/v{}/{:?}/rep{}",
                job.task.name(),
                job.variation,
                job.mode,
                job.rep
            );
            let mut noise = rng_stream(cfg.seed, &label);
            let mut demos = Vec::new();
            let mut transitions = Vec::new();
            let mut state = env.reset()?;
            loop {
                let obs = env.observe(&state);
                let mut chunk = scripted_expert(&env, &state, job.mode);
                if job.rep > 0 {
                    chunk = jitter_chunk(&chunk, &mut noise);
                }
                let out = env.step(&state, &chunk)?;
                demos.push(DemoRecord { obs: obs.clone(), chunk: chunk.clone(), mode: job.mode });
                transitions.push(TransitionRecord {
                    obs,
                    action: chunk,
                    next_obs: env.observe(&out.state),
                    reward: out.reward,
                });
                if out.done {
                    break;
                }
                state = out.state;
            }
            Ok((demos, transitions))
        })
        .collect::<Result<Vec<_>>>()?;

    let expert_episodes = jobs.len();
    let ratio = cfg.exploration_ratio;
    let random_episodes = if ratio > 0.0 {
        ((ratio / (1.0 - ratio).max(1e-9)) * expert_episodes as f64).round() as usize
    } else {
        0
    };

    let random: Vec<Vec<TransitionRecord>> = (0..random_episodes)
        .into_par_iter()
        .map(|i| {
            let task = TaskKind::ALL[i % TaskKind::ALL.len()];
            let variation = (i / TaskKind::ALL.len()) as u32 % cfg.variations;
            let env = Tabletop::new(task_spec(cfg, task, variation, 0))?;
            let mut rng = rng_stream(cfg.seed, &format!("gen-data/random/{i}"));
            random_episode(&env, cfg, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut demos = Vec::new();
    let mut transitions = Vec::new();
    for (d, t) in expert {
        demos.extend(d);
        transitions.extend(t);
    }
    for t in random {
        transitions.extend(t);
    }
    Ok(GeneratedData { demos, transitions, expert_episodes, random_episodes })
}

fn jitter_chunk(chunk: &ActionChunk, rng: &mut Stream) -> ActionChunk {
    ActionChunk::new(
        chunk
            .steps()
            .iter()
            .map(|&[dx, dy, g]| {
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                [dx + DEMO_NOISE_STD * nx, dy + DEMO_NOISE_STD * ny, g]
            })
            .collect(),
    )
}

fn random_chunk(h: usize, rng: &mut Stream) -> ActionChunk {
    ActionChunk::new(
        (0..h)
            .map(|_| {
                [
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect(),
    )
}

fn random_episode(
    env: &Tabletop,
    cfg: &Config,
    rng: &mut Stream,
) -> Result<Vec<TransitionRecord>> {
    let mut out = Vec::new();
    let mut state = env.reset()?;
    loop {
        let obs = env.observe(&state);
        let chunk = random_chunk(cfg.chunk_h, rng);
        let step = env.step(&state, &chunk)?;
        out.push(TransitionRecord {
            obs,
            action: chunk,
            next_obs: env.observe(&step.state),
            reward: step.reward,
        });
        if step.done {
            break;
        }
        state = step.state;
    }
    Ok(out)
}

pub struct GenDataFiles {
    pub demos: PathBuf,
    pub transitions: PathBuf,
    pub manifest: ExperimentManifest,
}

pub fn cmd_gen_data(cfg: &Config, out_dir: &Path) -> Result<GenDataFiles> {
    std::fs::create_dir_all(out_dir)?;
    let data = gen_data(cfg)?;
    let header = |kind: &str| DatasetHeader {
        kind: kind.into(),
        seed: cfg.seed,
        chunk_h: cfg.chunk_h,
        n_objects: cfg.n_objects,
    };
    let demos = out_dir.join("demos.jsonl");
    let transitions = out_dir.join("transitions.jsonl");
    dataset::write_jsonl(&demos, &header("demos"), &data.demos)?;
    dataset::write_jsonl(&transitions, &header("transitions"), &data.transitions)?;

    let mut manifest = ExperimentManifest::new(cfg, BTreeMap::new());
    manifest.record_output("demos.jsonl", &demos)?;
    manifest.record_output("transitions.jsonl", &transitions)?;
    manifest.save(&out_dir.join("manifest-gen-data.json"))?;
    Ok(GenDataFiles { demos, transitions, manifest })
}

// ---------------------------------------------------------------------------
// Policy training
// ---------------------------------------------------------------------------

fn cosine_lr(base: f64, step: usize, total: usize, enabled: bool) -> f64 {
    if !enabled || total <= 1 {
        return base;
    }
    let progress = step as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

fn policy_blocks<'a>(net: &'a mut DenoiserNet, grads: &'a DenoiserGrads) -> Vec<ParamBlock<'a>> {
    let mut blocks = vec![ParamBlock {
        name: "policy.task_embed".into(),
        params: &mut net.task_embed.w,
        grads: &grads.task_embed,
    }];
    blocks.extend(mlp_blocks("policy", &mut net.mlp, &grads.mlp));
    blocks
}

/// Exponential-moving-average decay for the sampled policy weights.
const POLICY_EMA_DECAY: f64 = 0.999;

/// Train the denoiser on demonstration chunks. Returns the policy (with
/// EMA-averaged weights, which sample noticeably cleaner than the raw
/// optimizer iterates) and the logged loss curve `(step, mean batch loss)`.
pub fn train_policy(cfg: &Config, demos: &[DemoRecord]) -> Result<(DiffusionPolicy, Vec<(usize, f64)>)> {
    if demos.is_empty() {
        return Err(Error::Usage("no demonstration records".into()));
    }
    let obs_dim = demos[0].obs.dim();
    let schedule = NoiseSchedule::linear(cfg.diffusion_steps_t);
    let mut init = rng_stream(cfg.seed, "init-policy");
    let mut net = DenoiserNet::init(
        cfg.chunk_h,
        obs_dim,
        TaskKind::ALL.len(),
        cfg.task_embed_dim,
        &cfg.policy_hidden,
        &mut init,
    );
    // Bias-corrected EMA accumulator (starts at zero so the random init
    // never contaminates the average).
    let mut ema = net.clone();
    zero_net(&mut ema);
    let mut opt = AdamW::new(cfg.policy_lr, cfg.weight_decay, cfg.grad_clip_norm);
    let mut rng = rng_stream(cfg.seed, "train-policy");
    let mut curve = Vec::new();

    for step in 0..cfg.policy_train_steps {
        // Per-example sub-streams keep the batch parallel while the result
        // stays independent of worker scheduling.
        let draws: Vec<(usize, u64)> = (0..cfg.batch_size)
            .map(|_| (rng.random_range(0..demos.len()), rng.random::<u64>()))
            .collect();
        let per_example: Vec<(f64, DenoiserGrads)> = draws
            .par_iter()
            .map(|&(idx, sub_seed)| {
                let rec = &demos[idx];
                let mut r = rng_stream(sub_seed, "policy-example");
                let mut g = net.zero_grads();
                let loss = ddpm_loss(&net, &schedule, &rec.chunk, &rec.obs, &mut r, &mut g)?;
                Ok((loss, g))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grads = net.zero_grads();
        let mut loss_sum = 0.0;
        for (loss, g) in per_example {
            loss_sum += loss;
            grads.mlp.add(&g.mlp);
            for (a, b) in grads.task_embed.iter_mut().zip(&g.task_embed) {
                *a += b;
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        grads.mlp.scale(scale);
        grads.task_embed.iter_mut().for_each(|g| *g *= scale);
        opt.lr = cosine_lr(cfg.policy_lr, step, cfg.policy_train_steps, cfg.cosine_lr);
        opt.step(&mut policy_blocks(&mut net, &grads))?;
        ema_blend(&mut ema, &net, POLICY_EMA_DECAY);
        if step % LOG_EVERY == 0 || step + 1 == cfg.policy_train_steps {
            curve.push((step, loss_sum * scale));
        }
    }
    // Debias: the accumulator started at zero.
    let correction = 1.0 / (1.0 - POLICY_EMA_DECAY.powi(cfg.policy_train_steps as i32));
    scale_net(&mut ema, correction);
    Ok((DiffusionPolicy { net: ema, schedule, prior_mode: cfg.prior_mode }, curve))
}

fn for_each_param(net: &mut DenoiserNet, f: &mut dyn FnMut(&mut f64)) {
    for layer in net.mlp.layers.iter_mut() {
        layer.w.iter_mut().for_each(&mut *f);
        layer.b.iter_mut().for_each(&mut *f);
    }
    net.task_embed.w.iter_mut().for_each(f);
}

fn zero_net(net: &mut DenoiserNet) {
    for_each_param(net, &mut |p| *p = 0.0);
}

fn scale_net(net: &mut DenoiserNet, k: f64) {
    for_each_param(net, &mut |p| *p *= k);
}

fn ema_blend(ema: &mut DenoiserNet, net: &DenoiserNet, decay: f64) {
    let blend = |e: &mut [f64], n: &[f64]| {
        for (a, b) in e.iter_mut().zip(n) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    };
    for (el, nl) in ema.mlp.layers.iter_mut().zip(&net.mlp.layers) {
        blend(&mut el.w, &nl.w);
        blend(&mut el.b, &nl.b);
    }
    blend(&mut ema.task_embed.w, &net.task_embed.w);
}

/// Train the mean-regression baseline on the same demonstrations.
pub fn train_regression(
    cfg: &Config,
    demos: &[DemoRecord],
) -> Result<(RegressionPolicy, Vec<(usize, f64)>)> {
    if demos.is_empty() {
        return Err(Error::Usage("no demonstration records".into()));
    }
    let obs_dim = demos[0].obs.dim();
    let mut init = rng_stream(cfg.seed, "init-regression");
    let mut net = RegressionPolicy::init(
        cfg.chunk_h,
        obs_dim,
        TaskKind::ALL.len(),
        cfg.task_embed_dim,
        &cfg.policy_hidden,
        &mut init,
    );
    let mut opt = AdamW::new(cfg.policy_lr, cfg.weight_decay, cfg.grad_clip_norm);
    let mut rng = rng_stream(cfg.seed, "train-regression");
    let mut curve = Vec::new();
    for step in 0..cfg.policy_train_steps {
        let mut grads = net.zero_grads();
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batch_size {
            let rec = &demos[rng.random_range(0..demos.len())];
            loss_sum += net.mse_loss(&rec.obs, &rec.chunk, &mut grads)?;
        }
        let scale = 1.0 / cfg.batch_size as f64;
        grads.mlp.scale(scale);
        grads.task_embed.iter_mut().for_each(|g| *g *= scale);
        opt.lr = cosine_lr(cfg.policy_lr, step, cfg.policy_train_steps, cfg.cosine_lr);
        let mut blocks = vec![ParamBlock {
            name: "regression.task_embed".into(),
            params: &mut net.task_embed.w,
            grads: &grads.task_embed,
        }];
        blocks.extend(mlp_blocks("regression", &mut net.mlp, &grads.mlp));
        opt.step(&mut blocks)?;
        if step % LOG_EVERY == 0 || step + 1 == cfg.policy_train_steps {
            curve.push((step, loss_sum * scale));
        }
    }
    Ok((net, curve))
}

pub struct TrainPolicyFiles {
    pub checkpoint: PathBuf,
    pub policy: DiffusionPolicy,
    pub manifest: ExperimentManifest,
}

pub fn cmd_train_policy(cfg: &Config, demos_path: &Path, out_dir: &Path) -> Result<TrainPolicyFiles> {
    std::fs::create_dir_all(out_dir)?;
    let (header, demos): (_, Vec<DemoRecord>) = dataset::read_jsonl(demos_path)?;
    dataset::expect_kind(&header, "demos", demos_path)?;
    let (policy, curve) = train_policy(cfg, &demos)?;

    let ckpt = out_dir.join("policy.json");
    checkpoint::save_policy(&ckpt, &policy, cfg)?;
    let loss_csv = out_dir.join("policy-loss.csv");
    write_curve(&loss_csv, "step,loss", &curve)?;

    let mut inputs = BTreeMap::new();
    ExperimentManifest::add_input(&mut inputs, "demos.jsonl", demos_path)?;
    let mut manifest = ExperimentManifest::new(cfg, inputs);
    manifest.record_output("policy.json", &ckpt)?;
    manifest.record_output("policy-loss.csv", &loss_csv)?;
    manifest.save(&out_dir.join("manifest-train-policy.json"))?;
    Ok(TrainPolicyFiles { checkpoint: ckpt, policy, manifest })
}

fn write_curve(path: &Path, header: &str, curve: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for (step, loss) in curve {
        out.push_str(&format!("{step},{loss}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// World-model training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WmLossPoint {
    pub step: usize,
    pub video: f64,
    pub reward: f64,
    pub total: f64,
}

/// Fit the codebook and train dynamics + reward head under the hybrid loss
/// with the given reward weight. Initialization and batch order depend only
/// on the seed, so arms trained with different `lambda` values are matched
/// draw for draw.
pub fn train_worldmodel(
    cfg: &Config,
    transitions: &[TransitionRecord],
    lambda: f64,
) -> Result<(WorldModel, Vec<WmLossPoint>, HoldoutStats)> {
    if transitions.is_empty() {
        return Err(Error::Usage("no transition records".into()));
    }
    let obs_dim = transitions[0].obs.dim();
    let all_obs: Vec<_> = transitions
        .iter()
        .flat_map(|r| [r.obs.clone(), r.next_obs.clone()])
        .collect();
    let (codebook, _warnings) = fit_codebook(&all_obs, cfg.b_codes, cfg.beta_vq)?;

    // Deterministic holdout split.
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    let mut shuffle_rng = rng_stream(cfg.seed, "wm-holdout");
    for i in (1..order.len()).rev() {
        order.swap(i, shuffle_rng.random_range(0..=i));
    }
    let holdout_n = ((transitions.len() as f64 * cfg.holdout_fraction) as usize).max(1);
    let (holdout_idx, train_idx) = order.split_at(holdout_n);

    let mut init = rng_stream(cfg.seed, "init-wm");
    let mut nets = WorldModelNets::init(
        obs_dim,
        cfg.b_codes,
        cfg.chunk_h,
        TaskKind::ALL.len(),
        cfg.embed_dim,
        cfg.task_embed_dim,
        &cfg.dyn_hidden,
        &cfg.rew_hidden,
        &mut init,
    );
    let mut opt = AdamW::new(cfg.wm_lr, cfg.weight_decay, cfg.grad_clip_norm);
    let mut rng = rng_stream(cfg.seed, "train-wm");
    let mut curve = Vec::new();

    for step in 0..cfg.wm_train_steps {
        let batch: Vec<&TransitionRecord> = (0..cfg.batch_size)
            .map(|_| &transitions[train_idx[rng.random_range(0..train_idx.len())]])
            .collect();
        opt.lr = cosine_lr(cfg.wm_lr, step, cfg.wm_train_steps, cfg.cosine_lr);
        let losses = hybrid_train_step(&mut nets, &codebook, &batch, lambda, &mut opt)?;
        if step % LOG_EVERY == 0 || step + 1 == cfg.wm_train_steps {
            curve.push(WmLossPoint {
                step,
                video: losses.video,
                reward: losses.reward,
                total: losses.total,
            });
        }
    }

    let model = WorldModel { codebook, nets, lambda_reward: lambda, sampling: TokenSampling::Greedy };
    let holdout_records: Vec<&TransitionRecord> =
        holdout_idx.iter().map(|&i| &transitions[i]).collect();
    let stats = evaluate_holdout(&model, &holdout_records)?;
    Ok((model, curve, stats))
}

pub struct TrainWorldModelFiles {
    pub checkpoint: PathBuf,
    pub model: WorldModel,
    pub holdout: HoldoutStats,
    pub manifest: ExperimentManifest,
}

pub fn cmd_train_worldmodel(
    cfg: &Config,
    transitions_path: &Path,
    lambda: f64,
    out_name: &str,
    out_dir: &Path,
) -> Result<TrainWorldModelFiles> {
    std::fs::create_dir_all(out_dir)?;
    let (header, transitions): (_, Vec<TransitionRecord>) = dataset::read_jsonl(transitions_path)?;
    dataset::expect_kind(&header, "transitions", transitions_path)?;
    let (model, curve, holdout) = train_worldmodel(cfg, &transitions, lambda)?;

    // The arm's identity includes the reward weight it was trained with.
    let effective_cfg = Config { lambda_reward: lambda, ..cfg.clone() };
    let cfg = &effective_cfg;
    let stem = out_name.trim_end_matches(".json");
    let ckpt = out_dir.join(format!("{stem}.json"));
    checkpoint::save_worldmodel(&ckpt, &model, cfg)?;
    let codebook_path = out_dir.join(format!("{stem}-codebook.json"));
    checkpoint::save_codebook(&codebook_path, &model.codebook)?;
    let loss_csv = out_dir.join(format!("{stem}-loss.csv"));
    let mut out = String::from("step,video,reward,total\n");
    for p in &curve {
        out.push_str(&format!("{},{},{},{}\n", p.step, p.video, p.reward, p.total));
    }
    std::fs::write(&loss_csv, out)?;
    let holdout_path = out_dir.join(format!("{stem}-holdout.json"));
    std::fs::write(&holdout_path, serde_json::to_vec_pretty(&holdout)?)?;

    let mut inputs = BTreeMap::new();
    ExperimentManifest::add_input(&mut inputs, "transitions.jsonl", transitions_path)?;
    let mut manifest = ExperimentManifest::new(cfg, inputs);
    manifest.record_output(&format!("{stem}.json"), &ckpt)?;
    manifest.record_output(&format!("{stem}-codebook.json"), &codebook_path)?;
    manifest.record_output(&format!("{stem}-loss.csv"), &loss_csv)?;
    manifest.save(&out_dir.join(format!("manifest-train-{stem}.json")))?;
    Ok(TrainWorldModelFiles { checkpoint: ckpt, model, holdout, manifest })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub trajectories: Vec<Trajectory>,
    pub report: EvalReport,
    /// `(task, variation, repeat)`-keyed traces for search-arm episodes.
    pub traces: Vec<(TaskKind, u32, usize, EpisodeTrace)>,
}

/// Run `variations x eval_repeats` episodes per task with per-episode RNG
/// streams; episode order (and therefore every emitted artifact) is
/// canonical regardless of worker scheduling.
pub fn evaluate(
    cfg: &Config,
    policy: &DiffusionPolicy,
    model: &WorldModel,
    mode: DecisionMode,
    tasks: &[TaskKind],
    flaky: u32,
    want_traces: bool,
) -> Result<EvalOutcome> {
    let mut jobs = Vec::new();
    for &task in tasks {
        for variation in 0..cfg.variations {
            for rep in 0..cfg.eval_repeats {
                jobs.push((task, variation, rep));
            }
        }
    }
    let results: Vec<(Trajectory, Option<EpisodeTrace>)> = jobs
        .par_iter()
        .map(|&(task, variation, rep)| {
            let env = Tabletop::new(task_spec(cfg, task, variation, flaky))?;
            let label = format!(
                "eval/{}/{}/flaky{}/var{}/rep{}",
                mode.name(),
                task.name(),
                flaky,
                variation,
                rep
            );
            let mut rng = rng_stream(cfg.seed, &label);
            let meta =
                TrajectoryMeta { seed: cfg.seed, task_id: task.id(), variation_id: variation };
            run_episode(&env, policy, model, cfg, mode, meta, &mut rng, want_traces)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut trajectories = Vec::with_capacity(results.len());
    let mut traces = Vec::new();
    for ((task, variation, rep), (traj, trace)) in jobs.iter().zip(results) {
        if let Some(trace) = trace {
            traces.push((*task, *variation, *rep, trace));
        }
        trajectories.push(traj);
    }

    let mut success = Vec::new();
    for &task in tasks {
        let per_task: Vec<Trajectory> = trajectories
            .iter()
            .filter(|t| t.meta.task_id == task.id())
            .cloned()
            .collect();
        success.push(TaskSuccess::from_trajectories(task.name(), mode.name(), &per_task)?);
    }
    let report = EvalReport {
        manifest_id: String::new(),
        success,
        fidelity: Vec::new(),
        notes: vec![format!("mode={} flaky={flaky}", mode.name())],
    };
    Ok(EvalOutcome { trajectories, report, traces })
}

pub struct EvalFiles {
    pub dir: PathBuf,
    pub report: EvalReport,
    pub manifest: ExperimentManifest,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    cfg: &Config,
    policy_path: &Path,
    wm_path: &Path,
    mode: DecisionMode,
    tasks: &[TaskKind],
    flaky: u32,
    want_traces: bool,
    out_dir: &Path,
) -> Result<EvalFiles> {
    let (policy, _) = checkpoint::load_policy(policy_path)?;
    let (model, _) = checkpoint::load_worldmodel(wm_path)?;
    let outcome = evaluate(cfg, &policy, &model, mode, tasks, flaky, want_traces)?;

    let dir = out_dir.join(format!("eval-{}-flaky{}", mode.name(), flaky));
    let traj_dir = dir.join("trajectories");
    std::fs::create_dir_all(&traj_dir)?;

    let mut jobs = Vec::new();
    for &task in tasks {
        for variation in 0..cfg.variations {
            for rep in 0..cfg.eval_repeats {
                jobs.push((task, variation, rep));
            }
        }
    }
    for ((task, variation, rep), traj) in jobs.iter().zip(&outcome.trajectories) {
        let path = traj_dir.join(format!("{}-var{variation}-rep{rep}.jsonl", task.name()));
        traj.save(&path)?;
    }
    if !outcome.traces.is_empty() {
        let trace_dir = dir.join("traces");
        std::fs::create_dir_all(&trace_dir)?;
        for (task, variation, rep, trace) in &outcome.traces {
            let path = trace_dir.join(format!("{}-var{variation}-rep{rep}.jsonl", task.name()));
            write_trace(&path, trace)?;
        }
    }

    let mut inputs = BTreeMap::new();
    ExperimentManifest::add_input(&mut inputs, "policy.json", policy_path)?;
    ExperimentManifest::add_input(&mut inputs, "worldmodel.json", wm_path)?;
    let mut manifest = ExperimentManifest::new(cfg, inputs);

    let mut report = outcome.report;
    report.manifest_id = manifest.id.clone();
    let report_json = dir.join("report.json");
    std::fs::write(&report_json, serde_json::to_vec_pretty(&report)?)?;
    let report_csv = dir.join("report.csv");
    std::fs::write(&report_csv, report.to_csv())?;

    manifest.record_output("report.json", &report_json)?;
    manifest.record_output("report.csv", &report_csv)?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(EvalFiles { dir, report, manifest })
}

/// Search-trace JSONL: one line per simulation (path indices, backed-up
/// value, updated N/Q), plus one summary line per decision.
pub fn write_trace(path: &Path, trace: &EpisodeTrace) -> Result<()> {
    let mut out = String::new();
    for decision in trace {
        for sim in &decision.sims {
            let line = serde_json::json!({
                "step": decision.step,
                "sim": sim.sim,
                "path": sim.path,
                "value": sim.value,
                "n_after": sim.n_after,
                "q_after": sim.q_after,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "step": decision.step,
            "chosen": decision.chosen,
            "visits": decision.visits,
            "q_values": decision.q_values,
            "priors": decision.priors,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

/// Build the shared held-out episode set for ablations: expert episodes on
/// every task and variation (alternating modes, every third variation with
/// flaky grasps) plus a block of random-action episodes.
pub fn build_ablation_set(cfg: &Config) -> Result<AblationEvalSet> {
    struct Job {
        task: TaskKind,
        variation: u32,
        random: bool,
    }
    let mut jobs = Vec::new();
    for task in TaskKind::ALL {
        for variation in 0..cfg.variations {
            jobs.push(Job { task, variation, random: false });
        }
    }
    for variation in 0..cfg.variations / 2 {
        jobs.push(Job { task: TaskKind::PutOnTarget, variation, random: true });
    }

    let episodes: Vec<Vec<TransitionRecord>> = jobs
        .par_iter()
        .map(|job| {
            let flaky = if !job.random && job.variation % 3 == 0 { 2 } else { 0 };
            let env = Tabletop::new(task_spec(cfg, job.task, job.variation, flaky))?;
            if job.random {
                let mut rng = rng_stream(
                    cfg.seed,
                    &format!("ablate-eval/random/{}/v{}", job.task.name(), job.variation),
                );
                random_episode(&env, cfg, &mut rng)
            } else {
                let mode = if job.variation % 2 == 0 { ExpertMode::Left } else { ExpertMode::Right };
                let mut out = Vec::new();
                let mut state = env.reset()?;
                loop {
                    let obs = env.observe(&state);
                    let chunk = scripted_expert(&env, &state, mode);
                    let step = env.step(&state, &chunk)?;
                    out.push(TransitionRecord {
                        obs,
                        action: chunk,
                        next_obs: env.observe(&step.state),
                        reward: step.reward,
                    });
                    if step.done {
                        break;
                    }
                    state = step.state;
                }
                Ok(out)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationEvalSet { episodes, window: 4 })
}

pub struct AblateFiles {
    pub dir: PathBuf,
    pub report: EvalReport,
    pub manifest: ExperimentManifest,
}

pub fn cmd_ablate(
    cfg: &Config,
    wm_a_path: &Path,
    wm_b_path: &Path,
    out_dir: &Path,
) -> Result<AblateFiles> {
    let (wm_a, fp_a) = checkpoint::load_worldmodel(wm_a_path)?;
    let (wm_b, fp_b) = checkpoint::load_worldmodel(wm_b_path)?;
    // Arms must come from configs identical up to the reward weight.
    if fp_a != fp_b {
        let strip = |c: &Config| config_fingerprint(&Config { lambda_reward: 0.0, ..c.clone() });
        let (ma, mb) = (
            find_arm_config(wm_a_path)?.map(|c| strip(&c)),
            find_arm_config(wm_b_path)?.map(|c| strip(&c)),
        );
        if ma.is_none() || mb.is_none() || ma != mb {
            return Err(Error::Usage(
                "ablation arms were trained under different configs".into(),
            ));
        }
    }

    let eval = build_ablation_set(cfg)?;
    let name_a = arm_name(&wm_a);
    let name_b = arm_name(&wm_b);
    let report_core =
        crate::metrics::ablation_compare(&name_a, &wm_a, &name_b, &wm_b, &eval, cfg.seed)?;

    let dir = out_dir.join("ablate");
    std::fs::create_dir_all(&dir)?;
    let mut inputs = BTreeMap::new();
    ExperimentManifest::add_input(&mut inputs, "wm-a.json", wm_a_path)?;
    ExperimentManifest::add_input(&mut inputs, "wm-b.json", wm_b_path)?;
    let mut manifest = ExperimentManifest::new(cfg, inputs);

    let mut report = report_core;
    report.manifest_id = manifest.id.clone();
    let report_json = dir.join("report.json");
    std::fs::write(&report_json, serde_json::to_vec_pretty(&report)?)?;
    std::fs::write(dir.join("report.csv"), report.to_csv())?;
    std::fs::write(dir.join("report-long.csv"), report.to_long_csv())?;

    manifest.record_output("report.json", &report_json)?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(AblateFiles { dir, report, manifest })
}

fn arm_name(wm: &WorldModel) -> String {
    if wm.lambda_reward > 0.0 {
        format!("action+reward(lambda={})", wm.lambda_reward)
    } else {
        "action-only".to_string()
    }
}

/// Locate the training manifest written alongside a world-model checkpoint.
fn find_arm_config(ckpt: &Path) -> Result<Option<Config>> {
    let dir = ckpt.parent().unwrap_or_else(|| Path::new("."));
    let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("worldmodel");
    let manifest_path = dir.join(format!("manifest-train-{stem}.json"));
    if !manifest_path.exists() {
        return Ok(None);
    }
    Ok(Some(ExperimentManifest::load(&manifest_path)?.config))
}

// ---------------------------------------------------------------------------
// Report aggregation
// ---------------------------------------------------------------------------

/// Merge per-run success reports into one `methods x tasks (+ average)`
/// table. Runs with conflicting config fingerprints are refused unless
/// `force` is set.
pub fn merge_reports(run_dirs: &[PathBuf], force: bool) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(Error::Usage("no run directories given".into()));
    }
    let mut fingerprints: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for dir in run_dirs {
        let report: EvalReport =
            serde_json::from_slice(&std::fs::read(dir.join("report.json"))?)?;
        let manifest_path = dir.join("manifest.json");
        if manifest_path.exists() {
            let manifest = ExperimentManifest::load(&manifest_path)?;
            fingerprints.push(config_fingerprint(&manifest.config));
        }
        for s in &report.success {
            rows.entry(s.arm.clone()).or_default().insert(s.task.clone(), s.rate);
        }
    }
    if !force && fingerprints.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Usage(
            "runs have conflicting config fingerprints; pass force to merge anyway".into(),
        ));
    }

    let task_order: Vec<&str> = TaskKind::ALL
        .iter()
        .map(|t| t.name())
        .filter(|name| rows.values().any(|cols| cols.contains_key(*name)))
        .collect();
    let mut out = String::from("method");
    for t in &task_order {
        out.push(',');
        out.push_str(t);
    }
    out.push_str(",average\n");
    for (arm, cols) in &rows {
        out.push_str(arm);
        let mut present = Vec::new();
        for t in &task_order {
            out.push(',');
            match cols.get(*t) {
                Some(rate) => {
                    out.push_str(&format!("{rate:.6}"));
                    present.push(*rate);
                }
                None => out.push_str("n/a"),
            }
        }
        let avg = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        out.push_str(&format!(",{avg:.6}\n"));
    }
    Ok(out)
}

pub fn cmd_report(run_dirs: &[PathBuf], force: bool, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let table = merge_reports(run_dirs, force)?;
    let path = out_dir.join("summary.csv");
    std::fs::write(&path, table)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Convenience episode driver shared by tests and the recovery case study
// ---------------------------------------------------------------------------

/// Execute a fixed chunk sequence open-loop (repeating the last chunk once
/// the sequence is exhausted) and return the trajectory.
pub fn run_open_loop(env: &Tabletop, chunks: &[ActionChunk], meta: TrajectoryMeta) -> Result<Trajectory> {
    if chunks.is_empty() {
        return Err(Error::Usage("open-loop run needs at least one chunk".into()));
    }
    let mut state = env.reset()?;
    let mut steps = Vec::new();
    let mut i = 0usize;
    loop {
        let chunk = chunks[i.min(chunks.len() - 1)].clone();
        let obs = env.observe(&state);
        let out = env.step(&state, &chunk)?;
        steps.push(TrajectoryStep {
            obs,
            action: chunk,
            reward: out.reward,
            done: out.done,
            success: out.success,
        });
        if out.done {
            break;
        }
        state = out.state;
        i += 1;
    }
    Ok(Trajectory { meta, steps })
}
