//! Scratch probe: per-dimension and per-slice held-out token accuracy.

use foresight_core::checkpoint;
use foresight_core::dataset::{read_jsonl, TransitionRecord};
use foresight_core::worldmodel::encode;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = std::path::Path::new(&args[1]);
    let data = std::path::Path::new(&args[2]);
    let (wm, _) = checkpoint::load_worldmodel(ckpt).unwrap();
    let (_, records): (_, Vec<TransitionRecord>) = read_jsonl(data).unwrap();

    let d = wm.nets.obs_dim;
    // Slice: expert records move smoothly (small deltas); random records
    // have |g| drawn uniformly. Use task id + a crude action signature.
    let mut per_dim_hits = vec![0usize; d];
    let mut per_dim_total = vec![0usize; d];
    let mut by_task: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();

    // Use a deterministic 10% sample as "holdout-like" probe.
    for (i, rec) in records.iter().enumerate() {
        if i % 10 != 0 {
            continue;
        }
        let prev = encode(&rec.obs, &wm.codebook).unwrap();
        let next = encode(&rec.next_obs, &wm.codebook).unwrap();
        let task = rec.obs.task_id();
        for pos in 0..d {
            let logits = wm
                .nets
                .dyn_logits(&wm.codebook, &prev, &rec.action, task, &next.tokens, pos)
                .unwrap();
            let valid = wm.codebook.codes[pos].len();
            let mut best = 0;
            for j in 1..valid {
                if logits[j] > logits[best] {
                    best = j;
                }
            }
            let hit = best == next.tokens[pos];
            per_dim_total[pos] += 1;
            if hit {
                per_dim_hits[pos] += 1;
            }
            let e = by_task.entry(task).or_insert((0, 0));
            e.1 += 1;
            if hit {
                e.0 += 1;
            }
        }
    }
    println!("per-dimension accuracy:");
    let names = ["gx", "gy", "hold", "o0x", "o0y", "o1x", "o1y", "tx", "ty", "task"];
    for pos in 0..d {
        println!(
            "  {:>5}: {:.4} ({} codes)",
            names.get(pos).unwrap_or(&"?"),
            per_dim_hits[pos] as f64 / per_dim_total[pos] as f64,
            wm.codebook.codes[pos].len()
        );
    }
    for (task, (h, t)) in by_task {
        println!("task {task}: {:.4}", h as f64 / t as f64);
    }
}
