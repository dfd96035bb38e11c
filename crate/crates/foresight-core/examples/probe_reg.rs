//! Scratch probe: regression-baseline fit quality at reset states.

use foresight_core::config::Config;
use foresight_core::dataset::{read_jsonl, DemoRecord};
use foresight_core::env::{Tabletop, TaskKind, TaskSpec};
use foresight_core::pipeline::train_regression;

fn fmt(c: &foresight_core::types::ActionChunk) -> String {
    c.steps()
        .iter()
        .map(|s| format!("({:+.2},{:+.2},{:+.1})", s[0], s[1], s[2]))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (_, demos): (_, Vec<DemoRecord>) = read_jsonl(std::path::Path::new(&args[1])).unwrap();
    let cfg = Config::default();
    let (reg, curve) = train_regression(&cfg, &demos).unwrap();
    println!("final mse: {:?}", &curve[curve.len() - 2..]);
    for variation in [2u32, 5, 9] {
        let env = Tabletop::new(TaskSpec::new(TaskKind::PutOnTarget, variation)).unwrap();
        let state = env.reset().unwrap();
        let obs = env.observe(&state);
        println!("var {variation}: {}", fmt(&reg.predict(&obs).unwrap()));
    }
}
