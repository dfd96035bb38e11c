use super::*;
use crate::env::Frame;

fn gauss_1d(mu: f64, var: f64) -> GaussianSummary {
    GaussianSummary::new(vec![mu], vec![var]).unwrap()
}

#[test]
fn frechet_identical_gaussians_is_zero() {
    let a = GaussianSummary::new(vec![0.3, -0.7], vec![2.0, 0.5, 0.5, 1.0]).unwrap();
    assert!(frechet_distance(&a, &a).unwrap() < 1e-12);
}

#[test]
fn frechet_1d_hand_cases() {
    // (mu 0, var 1) vs (mu 1, var 1) -> (1)^2 + (1-1)^2 = 1
    let d = frechet_distance(&gauss_1d(0.0, 1.0), &gauss_1d(1.0, 1.0)).unwrap();
    assert!((d - 1.0).abs() < 1e-9);
    // (mu 0, var 0) vs (mu 0, var 4) -> (0-2)^2 = 4
    let d = frechet_distance(&gauss_1d(0.0, 0.0), &gauss_1d(0.0, 4.0)).unwrap();
    assert!((d - 4.0).abs() < 1e-9);
}

#[test]
fn frechet_is_symmetric_and_detects_inequality() {
    let a = GaussianSummary::new(vec![0.1, 0.2], vec![1.0, 0.2, 0.2, 0.8]).unwrap();
    let b = GaussianSummary::new(vec![0.4, -0.1], vec![0.5, 0.0, 0.0, 0.3]).unwrap();
    let ab = frechet_distance(&a, &b).unwrap();
    let ba = frechet_distance(&b, &a).unwrap();
    assert!((ab - ba).abs() < 1e-9);
    assert!(ab > 1e-8);
}

#[test]
fn frechet_matches_closed_forms_on_random_pairs() {
    // 100 random pairs: 1-D closed form (mu_a-mu_b)^2 + (sa-sb)^2 and the
    // 2-D closed form via tr((Sa^1/2 Sb Sa^1/2)^1/2) =
    // sqrt(tr(Sa Sb) + 2 sqrt(det Sa det Sb)).
    use rand::Rng;
    let mut rng = crate::rng::rng_stream(31, "frechet-oracle");
    for i in 0..100 {
        if i % 2 == 0 {
            let (ma, mb) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let (va, vb) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
            let got = frechet_distance(&gauss_1d(ma, va), &gauss_1d(mb, vb)).unwrap();
            let expected = (ma - mb) * (ma - mb) + (va.sqrt() - vb.sqrt()).powi(2);
            assert!((got - expected).abs() < 1e-6, "1d case {i}: {got} vs {expected}");
        } else {
            let rand_cov = |rng: &mut crate::rng::Stream| {
                // A A^T + diag is SPD.
                let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let d = rng.random_range(0.1..1.0);
                vec![
                    a[0] * a[0] + a[1] * a[1] + d,
                    a[0] * a[2] + a[1] * a[3],
                    a[0] * a[2] + a[1] * a[3],
                    a[2] * a[2] + a[3] * a[3] + d,
                ]
            };
            let ca = rand_cov(&mut rng);
            let cb = rand_cov(&mut rng);
            let mu_a = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let mu_b = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let a = GaussianSummary::new(mu_a.clone(), ca.clone()).unwrap();
            let b = GaussianSummary::new(mu_b.clone(), cb.clone()).unwrap();
            let got = frechet_distance(&a, &b).unwrap();

            let mean: f64 =
                mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y) * (x - y)).sum();
            let tr_a = ca[0] + ca[3];
            let tr_b = cb[0] + cb[3];
            let tr_ab = ca[0] * cb[0] + ca[1] * cb[2] + ca[2] * cb[1] + ca[3] * cb[3];
            let det_a = ca[0] * ca[3] - ca[1] * ca[2];
            let det_b = cb[0] * cb[3] - cb[1] * cb[2];
            let cross = (tr_ab + 2.0 * (det_a * det_b).sqrt()).sqrt();
            let expected = mean + tr_a + tr_b - 2.0 * cross;
            assert!((got - expected).abs() < 1e-6, "2d case {i}: {got} vs {expected}");
        }
    }
}

#[test]
fn summarize_constant_samples() {
    let features = vec![vec![0.7, -0.2]; 5];
    let s = summarize_rollouts(&features).unwrap();
    assert_eq!(s.mean, vec![0.7, -0.2]);
    assert!(s.cov.iter().all(|&v| v.abs() < 1e-15));
}

#[test]
fn summarize_two_samples_unbiased_variance() {
    // {0, 2} in 1-D: mean 1, variance (n-1 denominator) 2.
    let s = summarize_rollouts(&[vec![0.0], vec![2.0]]).unwrap();
    assert_eq!(s.mean, vec![1.0]);
    assert!((s.cov[0] - 2.0).abs() < 1e-12);
}

#[test]
fn summarize_is_permutation_invariant() {
    let a = summarize_rollouts(&[vec![0.1], vec![0.9], vec![0.4]]).unwrap();
    let b = summarize_rollouts(&[vec![0.4], vec![0.1], vec![0.9]]).unwrap();
    assert_eq!(a.mean, b.mean);
    for (x, y) in a.cov.iter().zip(&b.cov) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn summarize_rejects_too_few_samples() {
    let err = summarize_rollouts(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

fn flat_frame(v: f64) -> Frame {
    Frame { w: 16, h: 16, px: vec![v; 256] }
}

#[test]
fn psnr_identical_and_opposite_frames() {
    let a = flat_frame(0.0);
    assert_eq!(psnr(&a, &a).unwrap(), 99.0);
    // all-0 vs all-1: MSE = 1 -> 0 dB.
    assert!((psnr(&a, &flat_frame(1.0)).unwrap()).abs() < 1e-12);
}

#[test]
fn psnr_decreases_with_noise_amplitude() {
    use rand::Rng;
    let mut rng = crate::rng::rng_stream(5, "psnr-noise");
    let base = flat_frame(0.5);
    let noise: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut last = f64::INFINITY;
    for amp in [0.01, 0.03, 0.1, 0.3] {
        let mut noisy = base.clone();
        for (p, n) in noisy.px.iter_mut().zip(&noise) {
            *p = (*p + amp * n).clamp(0.0, 1.0);
        }
        let v = psnr(&base, &noisy).unwrap();
        assert!(v < last, "psnr must strictly decrease: {v} !< {last}");
        last = v;
    }
}

#[test]
fn ssim_self_is_exactly_one_and_symmetric() {
    use rand::Rng;
    let mut rng = crate::rng::rng_stream(6, "ssim");
    let a = Frame { w: 16, h: 16, px: (0..256).map(|_| rng.random_range(0.0..1.0)).collect() };
    let b = Frame { w: 16, h: 16, px: (0..256).map(|_| rng.random_range(0.0..1.0)).collect() };
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    let ab = ssim(&a, &b).unwrap();
    let ba = ssim(&b, &a).unwrap();
    assert!((ab - ba).abs() < 1e-12);
    assert!((-1.0..=1.0).contains(&ab));
}

#[test]
fn frame_dimension_mismatch_is_a_shape_error() {
    let a = flat_frame(0.0);
    let b = Frame { w: 8, h: 8, px: vec![0.0; 64] };
    assert!(matches!(psnr(&a, &b), Err(Error::Shape(_))));
    assert!(matches!(ssim(&a, &b), Err(Error::Shape(_))));
}

#[test]
fn success_rate_counts() {
    use crate::types::{ActionChunk, ObservationVec, TrajectoryMeta, TrajectoryStep};
    let traj = |success: bool| Trajectory {
        meta: TrajectoryMeta { seed: 0, task_id: 0, variation_id: 0 },
        steps: vec![TrajectoryStep {
            obs: ObservationVec(vec![0.0; 10]),
            action: ActionChunk::zeros(1),
            reward: 0.0,
            done: true,
            success,
        }],
    };
    let all: Vec<Trajectory> = (0..4).map(|_| traj(true)).collect();
    assert_eq!(success_rate(&all).unwrap(), (1.0, 4));
    let half: Vec<Trajectory> = (0..24).map(|i| traj(i % 2 == 0)).collect();
    assert_eq!(success_rate(&half).unwrap(), (0.5, 24));
    assert!(matches!(success_rate(&[]), Err(Error::Usage(_))));
}
