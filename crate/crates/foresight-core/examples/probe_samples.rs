//! Scratch probe: print sampled chunks next to demo chunks for one state.

use foresight_core::checkpoint;
use foresight_core::dataset::{read_jsonl, DemoRecord};
use foresight_core::env::{Tabletop, TaskKind, TaskSpec};
use foresight_core::rng::rng_stream;

fn fmt(c: &foresight_core::types::ActionChunk) -> String {
    c.steps()
        .iter()
        .map(|s| format!("({:+.2},{:+.2},{:+.1})", s[0], s[1], s[2]))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (policy, _) = checkpoint::load_policy(std::path::Path::new(&args[1])).unwrap();
    let (_, demos): (_, Vec<DemoRecord>) = read_jsonl(std::path::Path::new(&args[2])).unwrap();
    let variation: u32 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2);

    let env = Tabletop::new(TaskSpec::new(TaskKind::PutOnTarget, variation)).unwrap();
    let state = env.reset().unwrap();
    let obs = env.observe(&state);
    println!("obs: {:?}", obs.as_slice().iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());

    println!("-- demo chunks with obs within 0.05 --");
    let mut shown = 0;
    for rec in &demos {
        let d: f64 = rec
            .obs
            .as_slice()
            .iter()
            .zip(obs.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if d < 0.05 {
            println!("  [{:?}] {}", rec.mode, fmt(&rec.chunk));
            shown += 1;
            if shown >= 6 {
                break;
            }
        }
    }
    println!("-- 10 policy samples --");
    let mut rng = rng_stream(3, "probe-samples");
    for _ in 0..10 {
        let s = policy.reactive(&obs, &mut rng).unwrap();
        println!("  {}", fmt(&s));
    }
}
