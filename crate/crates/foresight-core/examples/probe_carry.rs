//! Scratch probe: g-channel conditional correctness at carry states.

use foresight_core::checkpoint;
use foresight_core::dataset::{read_jsonl, DemoRecord};
use foresight_core::rng::rng_stream;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (policy, _) = checkpoint::load_policy(std::path::Path::new(&args[1])).unwrap();
    let (_, demos): (_, Vec<DemoRecord>) = read_jsonl(std::path::Path::new(&args[2])).unwrap();

    // Carry states: holding with the object still far from the target.
    let carry: Vec<&DemoRecord> = demos
        .iter()
        .filter(|r| {
            let far = {
                let o = r.obs.object(0);
                let t = r.obs.target();
                ((o[0] - t[0]).powi(2) + (o[1] - t[1]).powi(2)).sqrt() > 0.12
            };
            r.obs.holding() == 1.0 && far
        })
        .collect();
    println!("{} carry-state demo records", carry.len());

    // Demo conditional: fraction of sub-actions with g < 0.
    let mut demo_closed = 0usize;
    let mut demo_total = 0usize;
    for rec in &carry {
        for s in rec.chunk.steps() {
            demo_total += 1;
            if s[2] < 0.0 {
                demo_closed += 1;
            }
        }
    }
    println!("demo g<0 fraction at carry states: {:.3}", demo_closed as f64 / demo_total as f64);

    // Policy conditional at the same states.
    let mut rng = rng_stream(1, "probe-carry");
    let mut pol_closed = 0usize;
    let mut pol_total = 0usize;
    let mut first_sub_closed = 0usize;
    let mut n_states = 0usize;
    for rec in carry.iter().step_by(7).take(60) {
        n_states += 1;
        for _ in 0..10 {
            let s = policy.reactive(&rec.obs, &mut rng).unwrap();
            for sub in s.steps() {
                pol_total += 1;
                if sub[2] < 0.0 {
                    pol_closed += 1;
                }
            }
            if s.steps()[0][2] < 0.0 {
                first_sub_closed += 1;
            }
        }
    }
    println!(
        "policy g<0 fraction at carry states: {:.3} (first sub-action: {:.3}) over {n_states} states",
        pol_closed as f64 / pol_total as f64,
        first_sub_closed as f64 / (n_states * 10) as f64
    );
}
