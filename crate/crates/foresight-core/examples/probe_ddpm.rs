//! Scratch probe: DDPM sanity on degenerate and bimodal toy datasets.

use foresight_core::config::Config;
use foresight_core::dataset::DemoRecord;
use foresight_core::env::ExpertMode;
use foresight_core::pipeline::train_policy;
use foresight_core::rng::rng_stream;
use foresight_core::types::{ActionChunk, ObservationVec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let obs = ObservationVec(vec![0.5, 0.5, 0.0, 0.3, 0.3, 0.7, 0.7, 0.9, 0.9, 0.0]);

    // Degenerate: constant chunk.
    let target = ActionChunk::new(vec![[0.05, -0.03, 1.0]; 4]);
    let demos: Vec<DemoRecord> = (0..64)
        .map(|_| DemoRecord { obs: obs.clone(), chunk: target.clone(), mode: ExpertMode::Left })
        .collect();
    let cfg = Config { policy_train_steps: steps, ..Config::default() };
    let (policy, curve) = train_policy(&cfg, &demos).unwrap();
    let mut rng = rng_stream(1, "probe-const");
    let mut max_linf: f64 = 0.0;
    for _ in 0..50 {
        let s = policy.reactive(&obs, &mut rng).unwrap();
        max_linf = max_linf.max(s.linf_distance(&target));
    }
    println!("constant-data: max Linf over 50 samples = {max_linf:.4} (want <= 0.02)");
    println!("  final losses: {:?}", &curve[curve.len().saturating_sub(2)..]);

    // Bimodal: two chunks at +/- dy.
    let up = ActionChunk::new(vec![[0.08, 0.06, 1.0]; 4]);
    let down = ActionChunk::new(vec![[0.08, -0.06, 1.0]; 4]);
    let demos: Vec<DemoRecord> = (0..64)
        .map(|i| DemoRecord {
            obs: obs.clone(),
            chunk: if i % 2 == 0 { up.clone() } else { down.clone() },
            mode: if i % 2 == 0 { ExpertMode::Left } else { ExpertMode::Right },
        })
        .collect();
    let (policy, _) = train_policy(&cfg, &demos).unwrap();
    let mut rng = rng_stream(2, "probe-bimodal");
    let (mut n_up, mut n_down, mut n_other) = (0, 0, 0);
    for _ in 0..100 {
        let s = policy.reactive(&obs, &mut rng).unwrap();
        let du = s.linf_distance(&up);
        let dd = s.linf_distance(&down);
        if du.min(dd) > 0.04 {
            n_other += 1;
        } else if du < dd {
            n_up += 1;
        } else {
            n_down += 1;
        }
    }
    println!("bimodal-data: up {n_up}, down {n_down}, offmode {n_other} (want both >= 20, offmode small)");
}
