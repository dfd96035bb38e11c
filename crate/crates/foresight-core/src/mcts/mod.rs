//! PUCT Monte Carlo Tree Search over learned proposals and dynamics.
//!
//! Each decision builds a fresh tree rooted at the current observation.
//! A simulation selects edges by PUCT score, expands a leaf through the
//! proposal policy (K children with priors), evaluates one unvisited child
//! with a single world-model rollout (leaf value = predicted reward), and
//! backs the discounted return up the path. After `n_sim` simulations the
//! max-visit root action is executed. A brute-force expectimax oracle over
//! the same interfaces is included for equivalence testing.

pub mod stubs;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::diffusion::CandidateSet;
use crate::env::Tabletop;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::types::{ActionChunk, ObservationVec, Trajectory, TrajectoryMeta, TrajectoryStep};

/// Proposal interface the planner expands with.
pub trait ProposalPolicy: Sync {
    fn propose(&self, obs: &ObservationVec, k: usize, rng: &mut Stream) -> Result<CandidateSet>;

    /// A single sampled action — the reactive baseline. Defaults to the
    /// first (and only) candidate of `propose(obs, 1, ..)`.
    fn sample_one(&self, obs: &ObservationVec, rng: &mut Stream) -> Result<ActionChunk> {
        let set = self.propose(obs, 1, rng)?;
        Ok(set.0.into_iter().next().expect("propose returns k candidates").action)
    }
}

/// One-step generative dynamics interface the planner evaluates with.
pub trait DynamicsModel: Sync {
    fn rollout(
        &self,
        obs: &ObservationVec,
        action: &ActionChunk,
        rng: &mut Stream,
    ) -> Result<(ObservationVec, f64)>;
}

/// Per-edge search statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    /// Visit count; never decreases.
    pub n: u64,
    /// Total backed-up value.
    pub w: f64,
    /// Mean value `w / n`; 0 by convention while unvisited.
    pub q: f64,
    /// Prior from the proposal policy, in (0, 1].
    pub p: f64,
}

impl EdgeStats {
    fn fresh(prior: f64) -> Self {
        EdgeStats { n: 0, w: 0.0, q: 0.0, p: prior }
    }
}

/// The PUCT score `Q + c * P * sqrt(sum_sibling_N) / (1 + N)`.
pub fn puct_score(edge: &EdgeStats, parent_total_n: u64, c_puct: f64) -> f64 {
    edge.q + c_puct * edge.p * (parent_total_n as f64).sqrt() / (1.0 + edge.n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub action: ActionChunk,
    pub stats: EdgeStats,
    /// World-model reward stored when the edge was first evaluated.
    pub reward: f64,
    pub child: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub obs: ObservationVec,
    pub depth: usize,
    pub expanded: bool,
    pub edges: Vec<Edge>,
}

/// Arena-allocated search tree owned by a single planning call.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn with_root(obs: ObservationVec) -> Self {
        Tree { nodes: vec![Node { obs, depth: 0, expanded: false, edges: Vec::new() }] }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }
}

/// Create the children of `node` from the proposal policy. Expanding an
/// already-expanded node is a usage error.
pub fn expand<P: ProposalPolicy>(
    tree: &mut Tree,
    node_idx: usize,
    policy: &P,
    k: usize,
    rng: &mut Stream,
) -> Result<()> {
    if tree.nodes[node_idx].expanded {
        return Err(Error::Usage(format!("node {node_idx} is already expanded")));
    }
    let obs = tree.nodes[node_idx].obs.clone();
    let candidates = policy.propose(&obs, k, rng)?;
    let node = &mut tree.nodes[node_idx];
    node.edges = candidates
        .0
        .into_iter()
        .map(|c| Edge { action: c.action, stats: EdgeStats::fresh(c.prior), reward: 0.0, child: None })
        .collect();
    node.expanded = true;
    Ok(())
}

/// Argmax-PUCT edge of an expanded node. Ties (including the all-unvisited
/// case, where every score is zero) resolve by highest prior, then lowest
/// index.
pub fn select_edge(node: &Node, c_puct: f64) -> usize {
    debug_assert!(node.expanded && !node.edges.is_empty());
    let total_n: u64 = node.edges.iter().map(|e| e.stats.n).sum();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_prior = f64::NEG_INFINITY;
    for (i, edge) in node.edges.iter().enumerate() {
        let score = puct_score(&edge.stats, total_n, c_puct);
        if score > best_score || (score == best_score && edge.stats.p > best_prior) {
            best = i;
            best_score = score;
            best_prior = edge.stats.p;
        }
    }
    best
}

/// Update path statistics after a simulation. With `discounted`, the edge at
/// depth `j` of an `L`-edge path receives
/// `G_j = sum_{i=j..L-1} gamma^(i-j) r_i + gamma^(L-j) * leaf_value`
/// built from the stored edge rewards; otherwise every edge receives the
/// bare leaf value.
pub fn backpropagate(
    tree: &mut Tree,
    path: &[(usize, usize)],
    leaf_value: f64,
    gamma: f64,
    discounted: bool,
) {
    debug_assert!(!path.is_empty());
    let mut g = leaf_value;
    for (step, &(node_idx, edge_idx)) in path.iter().enumerate().rev() {
        let edge = &mut tree.nodes[node_idx].edges[edge_idx];
        if discounted && step + 1 < path.len() {
            g = edge.reward + gamma * g;
        }
        let value = if discounted { g } else { leaf_value };
        edge.stats.n += 1;
        edge.stats.w += value;
        edge.stats.q = edge.stats.w / edge.stats.n as f64;
    }
}

/// Chosen action and root statistics of one planning call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub chosen_index: usize,
    pub chosen: ActionChunk,
    /// Root visit distribution, indexed like the root edges.
    pub visits: Vec<u64>,
    /// Root per-edge mean values.
    pub q_values: Vec<f64>,
    pub priors: Vec<f64>,
    pub simulations: usize,
}

/// One simulation's trace line: the edge path from the root, the backed-up
/// leaf value, and the updated path statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub sim: usize,
    pub path: Vec<usize>,
    pub value: f64,
    pub n_after: Vec<u64>,
    pub q_after: Vec<f64>,
}

/// Full outcome of a planning call, for tests and tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub result: PlanResult,
    pub tree: Tree,
    pub sims: Vec<SimRecord>,
}

/// Run exactly `n_sim` simulations from a fresh tree and return the
/// max-visit root action (ties by Q, then lowest index). The tree is never
/// reused across calls.
pub fn plan<P: ProposalPolicy, M: DynamicsModel>(
    root_obs: &ObservationVec,
    policy: &P,
    model: &M,
    cfg: &Config,
    rng: &mut Stream,
) -> Result<PlanResult> {
    Ok(plan_search(root_obs, policy, model, cfg, rng)?.result)
}

/// [`plan`] with the final tree and per-simulation records exposed.
pub fn plan_search<P: ProposalPolicy, M: DynamicsModel>(
    root_obs: &ObservationVec,
    policy: &P,
    model: &M,
    cfg: &Config,
    rng: &mut Stream,
) -> Result<SearchOutcome> {
    let mut tree = Tree::with_root(root_obs.clone());
    let mut sims = Vec::with_capacity(cfg.n_sim);

    for sim in 0..cfg.n_sim {
        if !tree.nodes[0].expanded {
            expand(&mut tree, 0, policy, cfg.k_candidates, rng)?;
        }
        let mut node_idx = 0usize;
        let mut path: Vec<(usize, usize)> = Vec::new();
        let leaf_value = loop {
            let edge_idx = select_edge(&tree.nodes[node_idx], cfg.c_puct);
            path.push((node_idx, edge_idx));
            let (child, depth, action) = {
                let node = &tree.nodes[node_idx];
                let edge = &node.edges[edge_idx];
                (edge.child, node.depth, edge.action.clone())
            };
            match child {
                None => {
                    // Unvisited edge: evaluate one world-model rollout and
                    // attach the decoded state as an unexpanded child.
                    let (next_obs, reward) =
                        model.rollout(&tree.nodes[node_idx].obs, &action, rng)?;
                    let child_idx = tree.nodes.len();
                    tree.nodes.push(Node {
                        obs: next_obs,
                        depth: depth + 1,
                        expanded: false,
                        edges: Vec::new(),
                    });
                    let edge = &mut tree.nodes[node_idx].edges[edge_idx];
                    edge.child = Some(child_idx);
                    edge.reward = reward;
                    break reward;
                }
                Some(child_idx) => {
                    let child_node = &tree.nodes[child_idx];
                    if child_node.expanded {
                        node_idx = child_idx;
                    } else if child_node.depth < cfg.depth_d {
                        expand(&mut tree, child_idx, policy, cfg.k_candidates, rng)?;
                        node_idx = child_idx;
                    } else {
                        // Depth cap: the stored one-step value is what a
                        // (deterministic) re-evaluation would return.
                        break tree.nodes[node_idx].edges[edge_idx].reward;
                    }
                }
            }
        };
        backpropagate(&mut tree, &path, leaf_value, cfg.gamma, cfg.discounted_backup);
        sims.push(SimRecord {
            sim,
            path: path.iter().map(|&(_, e)| e).collect(),
            value: leaf_value,
            n_after: path.iter().map(|&(n, e)| tree.nodes[n].edges[e].stats.n).collect(),
            q_after: path.iter().map(|&(n, e)| tree.nodes[n].edges[e].stats.q).collect(),
        });
    }

    let root = tree.root();
    let chosen_index = final_choice(root);
    let result = PlanResult {
        chosen_index,
        chosen: root.edges[chosen_index].action.clone(),
        visits: root.edges.iter().map(|e| e.stats.n).collect(),
        q_values: root.edges.iter().map(|e| e.stats.q).collect(),
        priors: root.edges.iter().map(|e| e.stats.p).collect(),
        simulations: cfg.n_sim,
    };
    Ok(SearchOutcome { result, tree, sims })
}

/// Max-visit root edge; ties resolve by max Q, then lowest index.
fn final_choice(root: &Node) -> usize {
    let mut best = 0;
    for (i, edge) in root.edges.iter().enumerate().skip(1) {
        let b = &root.edges[best].stats;
        let e = &edge.stats;
        if e.n > b.n || (e.n == b.n && e.q > b.q) {
            best = i;
        }
    }
    best
}

/// Exhaustive expectimax over the same interfaces: enumerate every
/// `K^depth` action path with greedy world-model rollouts, compute the
/// discounted return of each, and return the first action of the best path
/// (ties to the lowest index). Only meaningful with deterministic stub
/// components; the size cap guards against misuse.
pub fn brute_force_oracle<P: ProposalPolicy, M: DynamicsModel>(
    root_obs: &ObservationVec,
    policy: &P,
    model: &M,
    k: usize,
    depth: usize,
    gamma: f64,
    rng: &mut Stream,
) -> Result<(usize, f64)> {
    let paths = (k as f64).powi(depth as i32);
    if paths > 1e5 {
        return Err(Error::Usage(format!(
            "brute force size cap exceeded: {k}^{depth} = {paths} > 1e5"
        )));
    }
    fn best_value<P: ProposalPolicy, M: DynamicsModel>(
        obs: &ObservationVec,
        policy: &P,
        model: &M,
        k: usize,
        depth: usize,
        gamma: f64,
        rng: &mut Stream,
    ) -> Result<(usize, f64)> {
        let candidates = policy.propose(obs, k, rng)?;
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, cand) in candidates.0.iter().enumerate() {
            let (next, reward) = model.rollout(obs, &cand.action, rng)?;
            let value = if depth > 1 {
                reward + gamma * best_value(&next, policy, model, k, depth - 1, gamma, rng)?.1
            } else {
                reward
            };
            if value > best.1 {
                best = (i, value);
            }
        }
        Ok(best)
    }
    best_value(root_obs, policy, model, k, depth, gamma, rng)
}

/// Planner arm selector for episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMode {
    /// Full search: propose, simulate, select max visits.
    Storm,
    /// Execute a single policy sample per step.
    Reactive,
}

impl DecisionMode {
    pub fn name(self) -> &'static str {
        match self {
            DecisionMode::Storm => "storm",
            DecisionMode::Reactive => "reactive",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "storm" => Ok(DecisionMode::Storm),
            "reactive" => Ok(DecisionMode::Reactive),
            other => Err(Error::Usage(format!("unknown mode `{other}`"))),
        }
    }
}

/// One decision step in an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: usize,
    pub sims: Vec<SimRecord>,
    pub chosen: usize,
    pub visits: Vec<u64>,
    pub q_values: Vec<f64>,
    pub priors: Vec<f64>,
}

pub type EpisodeTrace = Vec<DecisionRecord>;

/// Roll one episode: observe, plan (or sample reactively), execute the
/// chosen chunk in the environment, repeat until done. Planning restarts
/// from scratch at every step.
pub fn run_episode<P: ProposalPolicy, M: DynamicsModel>(
    env: &Tabletop,
    policy: &P,
    model: &M,
    cfg: &Config,
    mode: DecisionMode,
    meta: TrajectoryMeta,
    rng: &mut Stream,
    want_trace: bool,
) -> Result<(Trajectory, Option<EpisodeTrace>)> {
    let mut state = env.reset()?;
    let mut steps = Vec::new();
    let mut trace: Option<EpisodeTrace> = want_trace.then(Vec::new);
    loop {
        let obs = env.observe(&state);
        let chunk = match mode {
            DecisionMode::Reactive => policy.sample_one(&obs, rng)?,
            DecisionMode::Storm => {
                let outcome = plan_search(&obs, policy, model, cfg, rng)?;
                if let Some(trace) = trace.as_mut() {
                    trace.push(DecisionRecord {
                        step: steps.len(),
                        sims: outcome.sims,
                        chosen: outcome.result.chosen_index,
                        visits: outcome.result.visits.clone(),
                        q_values: outcome.result.q_values.clone(),
                        priors: outcome.result.priors.clone(),
                    });
                }
                outcome.result.chosen
            }
        };
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
    }
    Ok((Trajectory { meta, steps }, trace))
}

#[cfg(test)]
mod tests;
