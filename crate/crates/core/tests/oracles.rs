//! Independent oracles for module-level examples that need Monte-Carlo runs,
//! brute-force solvers or full pipelines.

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use driftmark::attacks::{imprint_forgery, AttackSpec};
use driftmark::codec::{
    bit_accuracy, decode_message, detection_stat, encode_message, make_codebook, train_linear_coder, CoderTraining,
    Message,
};
use driftmark::eval::{calibrate_threshold, psnr, ExperimentConfig, Lab};
use driftmark::injection::{InjectionConfig, Preset, Window};
use driftmark::linalg::{cosine, dot, mean_squared_error, norm, scale, standard_normal_vec, sub};
use driftmark::oracle::{OracleSpec, ScoreOracle};
use driftmark::rng::{derive_seed, seeded};
use driftmark::sampler::{ddim_decode_from, ddim_invert, paired_sample, sample, SamplerKind};
use driftmark::schedule::ScheduleSpec;
use driftmark::vae::{make_vae, perturb_decoder};

/// Minimum-norm Δ with `a_i·Δ ≥ b_i` for two constraints, by enumerating
/// active sets and checking primal and dual feasibility.
fn qp_two_constraints(a: [&[f64]; 2], b: [f64; 2]) -> Vec<f64> {
    let d = a[0].len();
    let mut best: Option<Vec<f64>> = None;
    let feasible = |x: &[f64]| (0..2).all(|i| dot(a[i], x) >= b[i] - 1e-12);
    let mut consider = |x: Vec<f64>| {
        if feasible(&x) && best.as_ref().is_none_or(|bx| norm(&x) < norm(bx)) {
            best = Some(x);
        }
    };
    consider(vec![0.0; d]);
    for i in 0..2 {
        // Δ = μ a_i with a_i·Δ = b_i, μ ≥ 0
        let mu = b[i] / dot(a[i], a[i]);
        if mu >= 0.0 {
            consider(scale(mu, a[i]));
        }
    }
    // both active: Gram system G μ = b
    let g = [[dot(a[0], a[0]), dot(a[0], a[1])], [dot(a[1], a[0]), dot(a[1], a[1])]];
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let mu = [
        (b[0] * g[1][1] - g[0][1] * b[1]) / det,
        (g[0][0] * b[1] - g[1][0] * b[0]) / det,
    ];
    if mu[0] >= 0.0 && mu[1] >= 0.0 {
        let x: Vec<f64> = (0..d).map(|j| mu[0] * a[0][j] + mu[1] * a[1][j]).collect();
        consider(x);
    }
    best.expect("the constraints are always jointly feasible")
}

#[test]
fn imprint_matches_brute_force_qp() {
    let mut rng = seeded(41);
    let mut active_counts = [0usize; 3];
    for trial in 0..300u64 {
        let alpha = rng.random_range(0.1..1.5);
        let cb = make_codebook(4, 2, alpha, trial).unwrap();
        let v = make_vae(16, 4, 0.0, 1000 + trial).unwrap();
        let m = Message::random(&mut rng, 2);
        let x: Vec<f64> = standard_normal_vec(&mut rng, 16).iter().map(|e| e * alpha).collect();
        let budget = rng.random_range(0.2..2.5);
        let out = imprint_forgery(&x, &v, &cb, &m, budget).unwrap();

        let z = v.encode(&x).unwrap();
        let signed: Vec<Vec<f64>> = m.symbols().enumerate().map(|(i, s)| scale(s, cb.carrier(i))).collect();
        let b = [0, 1].map(|i| budget * alpha - dot(&signed[i], &z));
        let expect = qp_two_constraints([&signed[0], &signed[1]], b);
        let err = norm(&sub(&out.delta_z, &expect));
        assert!(err < 1e-8, "trial {trial}: closed form differs from QP by {err}");
        active_counts[b.iter().filter(|v| **v > 0.0).count()] += 1;
    }
    // the trials exercise every active-set size
    assert!(active_counts.iter().all(|c| *c >= 5), "{active_counts:?}");
}

#[test]
fn imprinted_margins_reach_the_budget() {
    let v = make_vae(64, 16, 0.0, 3).unwrap();
    let cb = make_codebook(16, 8, 0.5, 4).unwrap();
    let mut rng = seeded(5);
    let m = Message::random(&mut rng, 8);
    let x = standard_normal_vec(&mut rng, 64);
    let out = imprint_forgery(&x, &v, &cb, &m, 1.5).unwrap();
    let proj = cb.projections(&v.encode(&out.forged).unwrap()).unwrap();
    for (p, s) in proj.iter().zip(m.symbols()) {
        assert!(s * p >= 1.5 * 0.5 - 1e-10);
    }
    assert_eq!(decode_message(&v.encode(&out.forged).unwrap(), &cb).unwrap(), m);
}

#[test]
fn standard_normal_stays_standard_under_every_sampler() {
    let s = ScheduleSpec::scaled_linear(1000).build().unwrap();
    let o = ScoreOracle::standard_normal(4);
    let n = 10_000u64;
    for kind in SamplerKind::all_default() {
        let finals: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                sample(kind, &o, &s, 1000, None, derive_seed(77, &[i]))
                    .unwrap()
                    .final_latent()
                    .to_vec()
            })
            .collect();
        for j in 0..4 {
            let mean = finals.iter().map(|z| z[j]).sum::<f64>() / n as f64;
            let var = finals.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "{kind} coord {j}: mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "{kind} coord {j}: variance {var}");
        }
    }
}

#[test]
fn ddim_inversion_round_trip_on_mixture() {
    let s = ScheduleSpec::scaled_linear(50).build().unwrap();
    let o = OracleSpec::default().build().unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let z0 = sample(SamplerKind::DDIM, &o, &s, 50, None, seed)
            .unwrap()
            .final_latent()
            .to_vec();
        let z_t = ddim_invert(&o, &s, &z0, 50).unwrap();
        let back = ddim_decode_from(&o, &s, z_t, 50).unwrap();
        worst = worst.max(norm(&sub(&back, &z0)) / norm(&z0));
    }
    assert!(worst < 0.05, "worst relative round-trip error {worst}");
}

#[test]
fn sde_shift_is_colinear_with_residual() {
    let s = ScheduleSpec::scaled_linear(50).build().unwrap();
    let o = OracleSpec::default().build().unwrap();
    let mut rng = seeded(9);
    let raw = standard_normal_vec(&mut rng, o.dim());
    let delta = scale(1.0 / norm(&raw), &raw);
    let cfg = InjectionConfig::custom(delta.clone(), 1.0, Window::full(50)).unwrap();
    let total: f64 = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let (clean, wm) = paired_sample(SamplerKind::EmSde, &o, &s, 50, &cfg, seed).unwrap();
            cosine(&sub(&wm, &clean), &delta)
        })
        .sum();
    let mean = total / 100.0;
    assert!(mean > 0.9, "mean cosine {mean}");
}

#[test]
fn null_detection_stat_is_centred() {
    let (d, k, alpha) = (64, 32, 0.75);
    let cb = make_codebook(d, k, alpha, 11).unwrap();
    let m = Message::random(&mut seeded(12), k);
    let n = 100_000u64;
    let sum: f64 = (0..n)
        .into_par_iter()
        .map(|i| detection_stat(&standard_normal_vec(&mut seeded(derive_seed(13, &[i])), d), &m, &cb).unwrap())
        .sum();
    let mean = sum / n as f64;
    // each statistic has standard deviation 1/(α√k)
    let sd = 1.0 / (alpha * (k as f64).sqrt());
    assert!(mean.abs() < 4.0 * sd / (n as f64).sqrt(), "mean {mean}");
}

#[test]
fn gaussian_threshold_is_near_the_upper_percentile() {
    let mut rng = seeded(21);
    let stats = standard_normal_vec(&mut rng, 10_000);
    let th = calibrate_threshold(&stats, 0.01).unwrap();
    let z99 = Normal::standard().inverse_cdf(0.99);
    assert!((2.2..=2.5).contains(&th), "threshold {th}, quantile {z99}");
}

#[test]
fn watermark_survives_noiseless_vae_round_trip() {
    let v = make_vae(256, 64, 0.0, 2).unwrap();
    let cb = make_codebook(64, 32, 0.75, 1).unwrap();
    let o = OracleSpec {
        dim: 64,
        ..OracleSpec::default()
    }
    .build()
    .unwrap();
    let mut rng = seeded(3);
    for _ in 0..50 {
        let m = Message::random(&mut rng, 32);
        let z0 = o.sample_clean(&mut rng);
        let zw: Vec<f64> = z0
            .iter()
            .zip(encode_message(&m, &cb).unwrap())
            .map(|(a, b)| a + 3.0 * b)
            .collect();
        let x = v.decode(&zw, &mut rng).unwrap();
        let back = decode_message(&v.encode(&x).unwrap(), &cb).unwrap();
        assert_eq!(decode_message(&zw, &cb).unwrap(), back);
    }
}

#[test]
fn slightly_perturbed_decoder_keeps_the_watermark() {
    let lab = Lab::new(ExperimentConfig::default()).unwrap();
    let perturbed = perturb_decoder(&lab.vae, 0.05, 99).unwrap();
    let inj = lab.injection(Preset::R).unwrap();
    let accs: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let z = lab.paired(SamplerKind::DDIM, &inj, i).unwrap().z_wm;
            let x = perturbed.decode(&z, &mut seeded(derive_seed(5, &[i]))).unwrap();
            let m = decode_message(&lab.vae.encode(&x).unwrap(), &lab.codebook).unwrap();
            bit_accuracy(&lab.message, &m).unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!(mean >= 0.9, "bit accuracy through the perturbed decoder {mean}");
}

#[test]
fn decoder_fidelity_falls_with_perturbation_scale() {
    let v = make_vae(256, 64, 0.0, 2).unwrap();
    let o = OracleSpec {
        dim: 64,
        ..OracleSpec::default()
    }
    .build()
    .unwrap();
    let mut rng = seeded(8);
    let zs: Vec<Vec<f64>> = (0..100).map(|_| o.sample_clean(&mut rng)).collect();
    let mean_psnr = |s: f64| {
        let p = perturb_decoder(&v, s, 4).unwrap();
        zs.iter()
            .map(|z| psnr(&p.decode_clean(z).unwrap(), &v.decode_clean(z).unwrap()).unwrap())
            .sum::<f64>()
            / zs.len() as f64
    };
    let p: Vec<f64> = [0.01, 0.05, 0.1].iter().map(|s| mean_psnr(*s)).collect();
    assert!(p[0] > p[1] && p[1] > p[2], "{p:?}");
}

#[test]
fn reconstruction_gap_grows_with_noise_and_null_space() {
    let gap = |dd: usize, sigma: f64| {
        let v = make_vae(dd, 16, sigma, 6).unwrap();
        let mut rng = seeded(7);
        (0..400)
            .map(|_| {
                let x = standard_normal_vec(&mut rng, dd);
                let y = v.decode(&v.encode(&x).unwrap(), &mut rng).unwrap();
                let err = sub(&y, &x);
                dot(&err, &err)
            })
            .sum::<f64>()
            / 400.0
    };
    let by_sigma: Vec<f64> = [0.0, 0.1, 0.3].iter().map(|s| gap(64, *s)).collect();
    let by_dim: Vec<f64> = [16, 32, 64].iter().map(|dd| gap(*dd, 0.05)).collect();
    assert!(by_sigma[0] < by_sigma[1] && by_sigma[1] < by_sigma[2], "{by_sigma:?}");
    assert!(by_dim[0] < by_dim[1] && by_dim[1] < by_dim[2], "{by_dim:?}");
}

#[test]
fn reconstruction_target_is_closer_than_cover() {
    // Held-out covers carry content outside the decoder range; the
    // watermarked decode and the reconstruction share one noise draw.
    let v = make_vae(256, 64, 0.2, 2).unwrap();
    let o = OracleSpec {
        dim: 64,
        ..OracleSpec::default()
    }
    .build()
    .unwrap();
    let mut rng = seeded(31);
    let raw = standard_normal_vec(&mut rng, 64);
    let delta = scale(0.1 / norm(&raw), &raw);
    let (mut to_recon, mut to_cover) = (0.0, 0.0);
    let n = 1000;
    for i in 0..n {
        let x_o = v.decode(&o.sample_clean(&mut rng), &mut rng).unwrap();
        let z = v.encode(&x_o).unwrap();
        let noise_seed = derive_seed(32, &[i]);
        let x_r = v.decode(&z, &mut seeded(noise_seed)).unwrap();
        let zw: Vec<f64> = z.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let x_w = v.decode(&zw, &mut seeded(noise_seed)).unwrap();
        to_recon += mean_squared_error(&x_w, &x_r);
        to_cover += mean_squared_error(&x_w, &x_o);
    }
    let (to_recon, to_cover) = (to_recon / n as f64, to_cover / n as f64);
    eprintln!("MSE(x_w, x_r) = {to_recon:.3e}, MSE(x_w, x_o) = {to_cover:.3e}");
    assert!(to_recon < to_cover);
}

#[test]
fn single_rinse_keeps_most_bits() {
    let lab = Lab::new(ExperimentConfig::default()).unwrap();
    let inj = lab.injection(Preset::R).unwrap();
    let rinse = AttackSpec::rinse(1);
    let accs: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let x = lab.paired(SamplerKind::DDIM, &inj, i).unwrap().x_wm;
            let y = lab.attack(&x, &rinse, derive_seed(44, &[i])).unwrap();
            lab.read(&y).unwrap().0
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!(mean > 0.75, "rinse-1x bit accuracy {mean}");
}

fn coder_setup() -> (Vec<Vec<f64>>, Vec<Vec<f64>>, driftmark::vae::LinearVAE) {
    let o = OracleSpec {
        dim: 64,
        ..OracleSpec::default()
    }
    .build()
    .unwrap();
    let v = make_vae(256, 64, 0.05, 2).unwrap();
    let mut rng = seeded(61);
    let train = (0..512).map(|_| o.sample_clean(&mut rng)).collect();
    let held_out = (0..200).map(|_| o.sample_clean(&mut rng)).collect();
    (train, held_out, v)
}

fn coder_accuracy(coder: &driftmark::codec::LinearCoder, held_out: &[Vec<f64>]) -> f64 {
    let mut rng = seeded(62);
    let accs: Vec<f64> = held_out
        .iter()
        .map(|z| {
            let m = Message::random(&mut rng, coder.bits());
            let zw: Vec<f64> = z.iter().zip(coder.encode(&m).unwrap()).map(|(a, b)| a + b).collect();
            bit_accuracy(&m, &coder.decode(&zw).unwrap()).unwrap()
        })
        .collect();
    accs.iter().sum::<f64>() / accs.len() as f64
}

fn window_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn coder_learns_at_light_distortion_weight() {
    let (train, held_out, v) = coder_setup();
    let cfg = CoderTraining {
        lambda2: 0.01,
        ..CoderTraining::default()
    };
    let coder = train_linear_coder(&train, &v, &cfg).unwrap();
    let acc = coder_accuracy(&coder, &held_out);
    assert!(acc >= 0.99, "clean bit accuracy {acc}");
    let curve = &coder.loss_curve;
    assert!(window_mean(&curve[curve.len() - 100..]) < window_mean(&curve[..100]));
}

#[test]
fn coder_collapses_at_default_distortion_weight() {
    let (train, held_out, v) = coder_setup();
    let coder = train_linear_coder(&train, &v, &CoderTraining::default()).unwrap();
    let acc = coder_accuracy(&coder, &held_out);
    let curve = &coder.loss_curve;
    assert!(window_mean(&curve[curve.len() - 100..]) < window_mean(&curve[..100]));
    // the distortion penalty wins: residuals vanish and decoding is chance
    let residual = norm(&coder.encode(&Message::random(&mut seeded(1), 32)).unwrap());
    assert!(acc < 0.6 && residual < 0.1, "accuracy {acc}, residual norm {residual}");
}
