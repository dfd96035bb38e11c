//! Deterministic ground-truth tabletop environment.
//!
//! The world is a unit square seen from above. A point gripper moves by
//! clamped planar displacements and can grasp the nearest object within
//! reach; a held object tracks the gripper exactly. Tasks are "move object 0
//! somewhere": onto a target disc, into a wider zone, or onto object 1.
//! Reward is potential-based shaping plus a terminal bonus. The flaky-grasp
//! variant deterministically fails the first `n` grasp attempts, nudging the
//! object away — the regime used for failure-recovery studies.
//!
//! All dynamics are pure 64-bit arithmetic: `(state, action)` maps to a
//! bit-identical successor across runs and platforms.

mod expert;
mod render;

pub use expert::{scripted_expert, ExpertMode};
pub use render::{render, render_obs, Frame};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_stream;
use crate::types::{ActionChunk, ObservationVec};

use rand::Rng;

pub const OBJECT_RADIUS: f64 = 0.03;
pub const TARGET_RADIUS: f64 = 0.06;
/// Success radius for the put-in-zone task.
pub const ZONE_RADIUS: f64 = 0.12;
/// Center-distance tolerance for a completed stack.
pub const STACK_RADIUS: f64 = 0.045;
pub const GRASP_RADIUS: f64 = 0.05;
/// How far a failed (slippery) grasp pushes the object away from the gripper.
pub const GRASP_NUDGE: f64 = 0.02;
pub const SUCCESS_BONUS: f64 = 10.0;
/// Minimum distance of initial placements from the borders.
const PLACEMENT_MARGIN: f64 = 0.1;
/// Minimum center distance between initially placed objects.
const MIN_OBJECT_SEPARATION: f64 = 0.08;
/// Minimum initial distance between any object and the target center.
const MIN_TARGET_SEPARATION: f64 = 0.15;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PutOnTarget,
    Stack,
    PutInZone,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::PutOnTarget, TaskKind::Stack, TaskKind::PutInZone];

    pub fn id(self) -> usize {
        match self {
            TaskKind::PutOnTarget => 0,
            TaskKind::Stack => 1,
            TaskKind::PutInZone => 2,
        }
    }

    pub fn from_id(id: usize) -> Result<TaskKind> {
        Self::ALL
            .into_iter()
            .find(|t| t.id() == id)
            .ok_or_else(|| Error::Spec(format!("unknown task id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::PutOnTarget => "put_on_target",
            TaskKind::Stack => "stack",
            TaskKind::PutInZone => "put_in_zone",
        }
    }

    pub fn from_name(name: &str) -> Result<TaskKind> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| Error::Spec(format!("unknown task `{name}`")))
    }

    /// Distance at which the task predicate holds for object 0.
    pub fn success_radius(self) -> f64 {
        match self {
            TaskKind::PutOnTarget => TARGET_RADIUS,
            TaskKind::Stack => STACK_RADIUS,
            TaskKind::PutInZone => ZONE_RADIUS,
        }
    }
}

/// Everything that deterministically fixes an episode's dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskKind,
    pub n_objects: usize,
    /// Procedural variation index; deterministically fixes all initial poses.
    pub variation_id: u32,
    /// Number of initial grasp attempts that deterministically fail.
    pub flaky_grasps: u32,
    /// Episode length budget in chunks.
    pub max_steps: usize,
    pub chunk_h: usize,
    /// Discount used inside the potential-based shaping term.
    pub shaping_gamma: f64,
}

impl TaskSpec {
    pub fn new(task: TaskKind, variation_id: u32) -> Self {
        TaskSpec {
            task,
            n_objects: 2,
            variation_id,
            flaky_grasps: 0,
            max_steps: 30,
            chunk_h: 4,
            shaping_gamma: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let needed = if self.task == TaskKind::Stack { 2 } else { 1 };
        if self.n_objects < needed {
            return Err(Error::Spec(format!(
                "task `{}` needs at least {needed} objects, got {}",
                self.task.name(),
                self.n_objects
            )));
        }
        if self.max_steps == 0 || self.chunk_h == 0 {
            return Err(Error::Spec("max_steps and chunk_h must be >= 1".into()));
        }
        Ok(())
    }
}

/// Full simulator state. A value type; stepping returns a new state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub gripper: [f64; 2],
    /// Index of the held object, if any. At most one object is held and its
    /// position equals the gripper's at all times.
    pub holding: Option<usize>,
    pub objects: Vec<[f64; 2]>,
    pub target: [f64; 2],
    pub grasp_fail_counter: u32,
    /// Completed chunks.
    pub step_count: u32,
    pub task: TaskKind,
}

/// Outcome of executing one action chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: WorldState,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// The environment: a task spec plus the pure dynamics over [`WorldState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tabletop {
    pub spec: TaskSpec,
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

impl Tabletop {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Tabletop { spec })
    }

    /// Draw the initial state for this spec's variation. Placements are
    /// rejection-sampled from the `(variation_id, "env-init")` stream:
    /// pairwise non-overlapping, away from borders, and with the target far
    /// enough from every object that no task starts solved.
    pub fn reset(&self) -> Result<WorldState> {
        let mut rng = rng_stream(u64::from(self.spec.variation_id), "env-init");
        let mut draw = |ok: &dyn Fn([f64; 2]) -> bool| -> Result<[f64; 2]> {
            for _ in 0..PLACEMENT_ATTEMPTS {
                let p = [
                    rng.random_range(PLACEMENT_MARGIN..1.0 - PLACEMENT_MARGIN),
                    rng.random_range(PLACEMENT_MARGIN..1.0 - PLACEMENT_MARGIN),
                ];
                if ok(p) {
                    return Ok(p);
                }
            }
            Err(Error::Spec(format!(
                "placement failed after {PLACEMENT_ATTEMPTS} rejection samples \
                 (variation {})",
                self.spec.variation_id
            )))
        };

        let gripper = draw(&|_| true)?;
        let mut objects: Vec<[f64; 2]> = Vec::with_capacity(self.spec.n_objects);
        for _ in 0..self.spec.n_objects {
            let placed = objects.clone();
            let p = draw(&move |p| {
                placed.iter().all(|&q| dist(p, q) >= MIN_OBJECT_SEPARATION)
            })?;
            objects.push(p);
        }
        let placed = objects.clone();
        let target = draw(&move |p| {
            placed.iter().all(|&q| dist(p, q) >= MIN_TARGET_SEPARATION)
        })?;

        Ok(WorldState {
            gripper,
            holding: None,
            objects,
            target,
            grasp_fail_counter: self.spec.flaky_grasps,
            step_count: 0,
            task: self.spec.task,
        })
    }

    /// Task predicate: object 0 is at its goal and not held.
    pub fn is_success(&self, s: &WorldState) -> bool {
        let goal = self.goal_point(s);
        dist(s.objects[0], goal) <= self.spec.task.success_radius() && s.holding != Some(0)
    }

    pub fn is_done(&self, s: &WorldState) -> bool {
        self.is_success(s) || s.step_count as usize >= self.spec.max_steps
    }

    /// Where object 0 has to go for the current task.
    pub fn goal_point(&self, s: &WorldState) -> [f64; 2] {
        match self.spec.task {
            TaskKind::PutOnTarget | TaskKind::PutInZone => s.target,
            TaskKind::Stack => s.objects[1],
        }
    }

    /// Shaping potential: negative gripper-to-object distance while the task
    /// object is not held, plus negative object-to-goal distance.
    pub fn potential(&self, s: &WorldState) -> f64 {
        let obj = s.objects[0];
        let reach = if s.holding == Some(0) { 0.0 } else { dist(s.gripper, obj) };
        -reach - dist(obj, self.goal_point(s))
    }

    /// Execute one action chunk: apply each sub-action in order, accumulate
    /// per-sub-action shaping rewards, add the terminal bonus on success, and
    /// stop early once the task predicate holds.
    pub fn step(&self, s: &WorldState, chunk: &ActionChunk) -> Result<StepOutcome> {
        if self.is_done(s) {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let mut state = s.clone();
        let mut reward = 0.0;
        let mut success = false;
        for &sub in chunk.steps() {
            let before = self.potential(&state);
            apply_sub_action(&mut state, sub);
            let after = self.potential(&state);
            let mut r = self.spec.shaping_gamma * after - before;
            if self.is_success(&state) {
                r += SUCCESS_BONUS;
                success = true;
            }
            reward += r;
            if success {
                break;
            }
        }
        state.step_count += 1;
        let done = success || state.step_count as usize >= self.spec.max_steps;
        Ok(StepOutcome { state, reward, done, success })
    }

    /// Deterministic flattening of the state; full observability at this
    /// scale, so the belief state equals the observation.
    pub fn observe(&self, s: &WorldState) -> ObservationVec {
        let mut v = Vec::with_capacity(6 + 2 * s.objects.len());
        v.extend_from_slice(&s.gripper);
        v.push(if s.holding.is_some() { 1.0 } else { 0.0 });
        for obj in &s.objects {
            v.extend_from_slice(obj);
        }
        v.extend_from_slice(&s.target);
        v.push(s.task.id() as f64);
        ObservationVec(v)
    }
}

/// One sub-action: move the gripper by the clamped displacement (a held
/// object moves with it), then apply the gripper command. Closing near a
/// free object attaches it unless the flaky counter is still positive, in
/// which case the counter decrements and the object is nudged away. Opening
/// releases any held object in place.
fn apply_sub_action(state: &mut WorldState, [dx, dy, g]: [f64; 3]) {
    let dx = dx.clamp(-crate::types::ACTION_DELTA_LIMIT, crate::types::ACTION_DELTA_LIMIT);
    let dy = dy.clamp(-crate::types::ACTION_DELTA_LIMIT, crate::types::ACTION_DELTA_LIMIT);
    state.gripper[0] = (state.gripper[0] + dx).clamp(0.0, 1.0);
    state.gripper[1] = (state.gripper[1] + dy).clamp(0.0, 1.0);
    if let Some(i) = state.holding {
        state.objects[i] = state.gripper;
    }

    if g < 0.0 {
        if state.holding.is_none() {
            if let Some(i) = nearest_in_reach(state) {
                if state.grasp_fail_counter == 0 {
                    state.holding = Some(i);
                    state.objects[i] = state.gripper;
                } else {
                    state.grasp_fail_counter -= 1;
                    nudge_away(state, i);
                }
            }
        }
    } else {
        state.holding = None;
    }
}

fn nearest_in_reach(state: &WorldState) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &obj) in state.objects.iter().enumerate() {
        let d = dist(state.gripper, obj);
        if d <= GRASP_RADIUS && best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// The slippery grasp: push object `i` radially away from the gripper.
fn nudge_away(state: &mut WorldState, i: usize) {
    let obj = state.objects[i];
    let d = dist(state.gripper, obj);
    let dir = if d < 1e-12 {
        [1.0, 0.0]
    } else {
        [(obj[0] - state.gripper[0]) / d, (obj[1] - state.gripper[1]) / d]
    };
    state.objects[i] = [
        (obj[0] + GRASP_NUDGE * dir[0]).clamp(0.0, 1.0),
        (obj[1] + GRASP_NUDGE * dir[1]).clamp(0.0, 1.0),
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(task: TaskKind, variation: u32) -> Tabletop {
        Tabletop::new(TaskSpec::new(task, variation)).unwrap()
    }

    fn state_with(gripper: [f64; 2], objects: Vec<[f64; 2]>) -> WorldState {
        WorldState {
            gripper,
            holding: None,
            objects,
            target: [0.9, 0.9],
            grasp_fail_counter: 0,
            step_count: 0,
            task: TaskKind::PutOnTarget,
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let e = env(TaskKind::PutOnTarget, 3);
        assert_eq!(e.reset().unwrap(), e.reset().unwrap());
    }

    #[test]
    fn variations_differ() {
        let a = env(TaskKind::PutOnTarget, 0).reset().unwrap();
        let b = env(TaskKind::PutOnTarget, 1).reset().unwrap();
        assert_ne!(a.objects, b.objects);
    }

    #[test]
    fn flaky_counter_copied_from_spec() {
        let mut spec = TaskSpec::new(TaskKind::PutOnTarget, 0);
        spec.flaky_grasps = 2;
        let s = Tabletop::new(spec).unwrap().reset().unwrap();
        assert_eq!(s.grasp_fail_counter, 2);
    }

    #[test]
    fn reset_respects_margins_and_separation() {
        for v in 0..24 {
            let s = env(TaskKind::Stack, v).reset().unwrap();
            for &[x, y] in s.objects.iter().chain([s.target, s.gripper].iter()) {
                assert!((0.1..=0.9).contains(&x) && (0.1..=0.9).contains(&y));
            }
            assert!(dist(s.objects[0], s.objects[1]) >= MIN_OBJECT_SEPARATION);
            for &o in &s.objects {
                assert!(dist(o, s.target) >= MIN_TARGET_SEPARATION);
            }
        }
    }

    #[test]
    fn close_grasp_attaches_object() {
        let e = env(TaskKind::PutOnTarget, 0);
        let s = state_with([0.5, 0.5], vec![[0.52, 0.5], [0.2, 0.2]]);
        let out = e.step(&s, &ActionChunk::new(vec![[0.0, 0.0, -1.0]])).unwrap();
        assert_eq!(out.state.holding, Some(0));
        assert_eq!(out.state.objects[0], out.state.gripper);
    }

    #[test]
    fn flaky_grasp_fails_and_nudges() {
        let e = env(TaskKind::PutOnTarget, 0);
        let mut s = state_with([0.5, 0.5], vec![[0.52, 0.5], [0.2, 0.2]]);
        s.grasp_fail_counter = 1;
        let out = e.step(&s, &ActionChunk::new(vec![[0.0, 0.0, -1.0]])).unwrap();
        assert_eq!(out.state.holding, None);
        assert_eq!(out.state.grasp_fail_counter, 0);
        let d = dist(out.state.gripper, out.state.objects[0]);
        assert!(d > 0.02, "object should be nudged beyond 0.02, got {d}");
        assert!((d - 0.04).abs() < 1e-12);
    }

    #[test]
    fn gripper_clamps_at_border() {
        let e = env(TaskKind::PutOnTarget, 0);
        let s = state_with([0.95, 0.5], vec![[0.3, 0.3], [0.2, 0.2]]);
        // dx is clamped to 0.1 on construction; position clamps to 1.0.
        let out = e.step(&s, &ActionChunk::new(vec![[0.5, 0.0, 1.0]])).unwrap();
        assert_eq!(out.state.gripper[0], 1.0);
    }

    #[test]
    fn open_releases_in_place() {
        let e = env(TaskKind::PutOnTarget, 0);
        let mut s = state_with([0.5, 0.5], vec![[0.5, 0.5], [0.2, 0.2]]);
        s.holding = Some(0);
        let out = e.step(&s, &ActionChunk::new(vec![[0.05, 0.0, 1.0]])).unwrap();
        assert_eq!(out.state.holding, None);
        // moved with the gripper, then detached where it was
        assert_eq!(out.state.objects[0], [0.55, 0.5]);
    }

    #[test]
    fn stepping_a_done_state_is_a_usage_error() {
        let e = env(TaskKind::PutOnTarget, 0);
        let mut s = e.reset().unwrap();
        s.step_count = e.spec.max_steps as u32;
        let err = e.step(&s, &ActionChunk::zeros(4)).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn observe_projects_the_held_object_onto_the_gripper() {
        let e = env(TaskKind::PutOnTarget, 0);
        let mut s = state_with([0.4, 0.6], vec![[0.4, 0.6], [0.2, 0.2]]);
        s.holding = Some(0);
        let obs = e.observe(&s);
        assert_eq!(obs.holding(), 1.0);
        assert_eq!(obs.object(0), obs.gripper());
        let mut free = s.clone();
        free.holding = None;
        assert_eq!(e.observe(&free).holding(), 0.0);
    }

    #[test]
    fn observe_is_deterministic() {
        let e = env(TaskKind::Stack, 7);
        let s = e.reset().unwrap();
        assert_eq!(e.observe(&s), e.observe(&s));
    }

    #[test]
    fn success_requires_release() {
        let e = env(TaskKind::PutOnTarget, 0);
        let mut s = state_with([0.9, 0.9], vec![[0.9, 0.9], [0.2, 0.2]]);
        s.holding = Some(0);
        assert!(!e.is_success(&s));
        s.holding = None;
        assert!(e.is_success(&s));
    }

    #[test]
    fn shaping_telescopes_over_an_episode() {
        // Sum of shaping terms == gamma*phi(s_T) - phi(s_0)
        //                         + (gamma-1) * sum of intermediate phi, plus
        // terminal bonuses; assert the identity numerically per episode.
        let e = env(TaskKind::PutOnTarget, 5);
        let mut s = e.reset().unwrap();
        let gamma = e.spec.shaping_gamma;
        let mut total = 0.0;
        let mut phis = vec![e.potential(&s)];
        let mut bonus = 0.0;
        // Drive with the scripted expert so the episode terminates.
        while !e.is_done(&s) {
            let chunk = scripted_expert(&e, &s, ExpertMode::Left);
            // Re-derive the per-sub-action potentials independently.
            let out = e.step(&s, &chunk).unwrap();
            let mut sim = s.clone();
            for &sub in chunk.steps() {
                super::apply_sub_action(&mut sim, sub);
                phis.push(e.potential(&sim));
                if e.is_success(&sim) {
                    bonus += SUCCESS_BONUS;
                    break;
                }
            }
            total += out.reward;
            s = out.state;
        }
        let t = phis.len() - 1;
        let mid: f64 = phis[1..t].iter().sum();
        let expected = gamma * phis[t] - phis[0] + (gamma - 1.0) * mid + bonus;
        assert!((total - expected).abs() < 1e-9, "{total} vs {expected}");
    }
}
