//! Scratch probe: step-by-step reactive episode dump.

use foresight_core::checkpoint;
use foresight_core::env::{Tabletop, TaskKind, TaskSpec};
use foresight_core::rng::rng_stream;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (policy, _) = checkpoint::load_policy(std::path::Path::new(&args[1])).unwrap();
    let variation: u32 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);

    let env = Tabletop::new(TaskSpec::new(TaskKind::PutOnTarget, variation)).unwrap();
    let mut state = env.reset().unwrap();
    let mut rng = rng_stream(0, "probe-episode");
    let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    for step in 0..env.spec.max_steps {
        let obs = env.observe(&state);
        let chunk = policy.reactive(&obs, &mut rng).unwrap();
        let out = env.step(&state, &chunk).unwrap();
        println!(
            "step {step:>2}: grip=({:.2},{:.2}) obj=({:.2},{:.2}) d_go={:.3} d_ot={:.3} hold={} g_cmds={:?} r={:+.3}{}{}",
            state.gripper[0],
            state.gripper[1],
            state.objects[0][0],
            state.objects[0][1],
            d(state.gripper, state.objects[0]),
            d(state.objects[0], state.target),
            state.holding.is_some() as u8,
            chunk.steps().iter().map(|s| (s[2] * 10.0).round() / 10.0).collect::<Vec<_>>(),
            out.reward,
            if out.success { " SUCCESS" } else { "" },
            if out.done { " DONE" } else { "" },
        );
        if out.done {
            break;
        }
        state = out.state;
    }
}
