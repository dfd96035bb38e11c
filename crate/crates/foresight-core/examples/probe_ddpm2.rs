//! Scratch probe: per-timestep clean-head error on real demo data, plus a
//! sampling-trajectory dump.

use foresight_core::checkpoint;
use foresight_core::dataset::{read_jsonl, DemoRecord};
use foresight_core::diffusion::forward_noise;
use foresight_core::rng::rng_stream;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (policy, _) = checkpoint::load_policy(std::path::Path::new(&args[1])).unwrap();
    let (_, demos): (_, Vec<DemoRecord>) = read_jsonl(std::path::Path::new(&args[2])).unwrap();
    let schedule = &policy.schedule;

    let to_latent = |c: &foresight_core::types::ActionChunk| -> Vec<f64> {
        c.steps().iter().flat_map(|s| [s[0] * 8.0, s[1] * 8.0, s[2] * 0.8]).collect()
    };

    let mut rng = rng_stream(5, "probe2");
    for &t in &[1usize, 5, 10, 15, 20, 25, 30, 40, 50] {
        let mut head_err = 0.0;
        let mut n = 0;
        for _ in 0..300 {
            let rec = &demos[rng.random_range(0..demos.len())];
            let x0 = to_latent(&rec.chunk);
            let eps: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
            let xt = forward_noise(schedule, &x0, t, &eps).unwrap();
            let v = policy.net.predict_x0(schedule, &xt, t, &rec.obs).unwrap();
            head_err += v.iter().zip(&x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            n += x0.len();
        }
        println!(
            "t={t:>2} abar={:.5}: clean-head mse/dim = {:.4}",
            schedule.alpha_bars[t - 1],
            head_err / n as f64
        );
    }

    // Sampling trajectory for one real observation: print |x| norm and the
    // running x0_hat to see whether the chain contracts.
    let rec = &demos[17];
    let mut x: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
    println!("target latent: {:?}", to_latent(&rec.chunk).iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    for t in (1..=schedule.t_steps()).rev() {
        let alpha = schedule.alphas[t - 1];
        let ab = schedule.alpha_bars[t - 1];
        let ab_prev = if t > 1 { schedule.alpha_bars[t - 2] } else { 1.0 };
        let x0_hat: Vec<f64> = policy
            .net
            .predict_x0(schedule, &x, t, &rec.obs)
            .unwrap()
            .into_iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        if t % 10 == 0 || t <= 3 {
            let norm = (x.iter().map(|v| v * v).sum::<f64>() / 12.0).sqrt();
            let x0n = (x0_hat.iter().map(|v| v * v).sum::<f64>() / 12.0).sqrt();
            println!("t={t:>2}: rms(x)={norm:.3} rms(x0_hat)={x0n:.3} x0_hat[0..3]={:?}", &x0_hat[..3].iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
        }
        if t == 1 {
            x = x0_hat;
            break;
        }
        let beta = schedule.betas[t - 1];
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = ((1.0 - ab_prev) / (1.0 - ab) * beta).sqrt();
        for (i, xi) in x.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *xi = c0 * x0_hat[i] + ct * *xi + sigma * z;
        }
    }
    println!("final latent:  {:?}", x.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
}
