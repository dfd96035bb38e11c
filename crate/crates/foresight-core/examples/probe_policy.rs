//! Scratch probe: sample quality of the diffusion policy vs the expert.

use foresight_core::checkpoint;
use foresight_core::env::{scripted_expert, ExpertMode, Tabletop, TaskKind, TaskSpec};
use foresight_core::rng::rng_stream;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (policy, _) = checkpoint::load_policy(std::path::Path::new(&args[1])).unwrap();

    let mut total_best = 0.0;
    let mut spread_sum = 0.0;
    let mut n = 0;
    for variation in 0..8u32 {
        let env = Tabletop::new(TaskSpec::new(TaskKind::PutOnTarget, variation)).unwrap();
        let state = env.reset().unwrap();
        let obs = env.observe(&state);
        let left = scripted_expert(&env, &state, ExpertMode::Left).flatten();
        let right = scripted_expert(&env, &state, ExpertMode::Right).flatten();
        let mut rng = rng_stream(7, &format!("probe/{variation}"));
        let mut dists = Vec::new();
        let mut samples = Vec::new();
        for _ in 0..20 {
            let s = policy.reactive(&obs, &mut rng).unwrap().flatten();
            let d = l2(&s, &left).min(l2(&s, &right));
            dists.push(d);
            samples.push(s);
        }
        let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean: f64 = dists.iter().sum::<f64>() / dists.len() as f64;
        // sample spread: mean pairwise distance
        let mut spread = 0.0;
        let mut pairs = 0;
        for i in 0..samples.len() {
            for j in i + 1..samples.len() {
                spread += l2(&samples[i], &samples[j]);
                pairs += 1;
            }
        }
        spread /= pairs as f64;
        println!(
            "var {variation}: best-to-expert {best:.4}, mean {mean:.4}, spread {spread:.4}, expert L-R dist {:.4}",
            l2(&left, &right)
        );
        total_best += best;
        spread_sum += spread;
        n += 1;
    }
    println!(
        "avg best {:.4}, avg spread {:.4}",
        total_best / n as f64,
        spread_sum / n as f64
    );
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
