//! Scratch probe: sweep world-model training settings on one task slice.

use foresight_core::config::Config;
use foresight_core::dataset::TransitionRecord;
use foresight_core::env::TaskKind;
use foresight_core::pipeline::{gen_data, train_worldmodel};
use foresight_core::worldmodel::encode;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2500);
    let hidden: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(128);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let lambda: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(20.0);
    let only_task0: bool = args.get(5).map(|s| s == "task0").unwrap_or(false);

    let mut cfg = Config::default();
    cfg.wm_train_steps = steps;
    cfg.dyn_hidden = vec![hidden, hidden];
    cfg.wm_lr = lr;

    let data = gen_data(&cfg).unwrap();
    let transitions: Vec<TransitionRecord> = if only_task0 {
        data.transitions
            .into_iter()
            .filter(|r| r.obs.task_id() == TaskKind::PutOnTarget.id())
            .collect()
    } else {
        data.transitions
    };
    eprintln!("training on {} transitions", transitions.len());
    let t0 = std::time::Instant::now();
    let (wm, curve, holdout) = train_worldmodel(&cfg, &transitions, lambda).unwrap();
    eprintln!(
        "steps={steps} hidden={hidden} lr={lr} lambda={lambda} task0only={only_task0} \
         -> acc {:.4}, reward mse {:.4} in {:.0?}",
        holdout.token_accuracy,
        holdout.reward_mse,
        t0.elapsed()
    );
    let tail: Vec<_> = curve.iter().rev().take(3).collect();
    eprintln!("loss tail: {tail:?}");

    // Per-dim on a sample.
    let d = wm.nets.obs_dim;
    let mut hits = vec![0usize; d];
    let mut tot = vec![0usize; d];
    for (i, rec) in transitions.iter().enumerate() {
        if i % 17 != 0 {
            continue;
        }
        let prev = encode(&rec.obs, &wm.codebook).unwrap();
        let next = encode(&rec.next_obs, &wm.codebook).unwrap();
        for pos in 0..d {
            let logits = wm
                .nets
                .dyn_logits(&wm.codebook, &prev, &rec.action, rec.obs.task_id(), &next.tokens, pos)
                .unwrap();
            let valid = wm.codebook.codes[pos].len();
            let mut best = 0;
            for j in 1..valid {
                if logits[j] > logits[best] {
                    best = j;
                }
            }
            tot[pos] += 1;
            if best == next.tokens[pos] {
                hits[pos] += 1;
            }
        }
    }
    let names = ["gx", "gy", "hold", "o0x", "o0y", "o1x", "o1y", "tx", "ty", "task"];
    for pos in 0..d {
        eprint!("{}={:.3} ", names[pos], hits[pos] as f64 / tot[pos] as f64);
    }
    eprintln!();
}
