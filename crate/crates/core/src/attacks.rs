//! Distortion, regeneration and forgery attacks on toy images.
//!
//! Photometric and geometric attacks act on `R^D` vectors through fixed-basis
//! analogs: quantization stands in for JPEG, truncation in an orthonormal
//! cosine basis for blur/resize, and a zeroed contiguous block for cropping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{CodeBook, Message};
use crate::error::{check_len, invalid, Error, Result};
use crate::eval::psnr;
use crate::linalg::{norm, standard_normal_vec};
use crate::oracle::ScoreOracle;
use crate::rng::seeded;
use crate::sampler::{integrate, SamplerKind};
use crate::schedule::NoiseSchedule;
use crate::vae::{make_vae, LinearVAE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attack", rename_all = "kebab-case")]
pub enum AttackSpec {
    None,
    AdditiveNoise {
        sigma: f64,
    },
    Brightness {
        factor: f64,
    },
    Contrast {
        factor: f64,
    },
    /// JPEG analog.
    Quantize {
        levels: u64,
    },
    /// Blur/resize analog; `keep` is the retained fraction of the cosine basis.
    LowPass {
        keep: f64,
    },
    CropMask {
        keep: f64,
    },
    /// Round trip through a second, independently seeded autoencoder.
    VaeReencode {
        seed: u64,
    },
    Regenerate {
        strength: f64,
        sampler: SamplerKind,
        rinse: usize,
    },
    AverageForgery {
        n_pairs: usize,
    },
    ImprintForgery {
        budget: f64,
    },
}

impl AttackSpec {
    pub fn noise(sigma: f64) -> Self {
        AttackSpec::AdditiveNoise { sigma }
    }

    /// Regeneration at strength 0.2 with the deterministic sampler.
    pub fn rinse(n: usize) -> Self {
        AttackSpec::Regenerate {
            strength: 0.2,
            sampler: SamplerKind::DDIM,
            rinse: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AttackSpec::None => true,
            AttackSpec::AdditiveNoise { sigma } => sigma >= 0.0,
            AttackSpec::Brightness { factor } => factor > 0.0,
            AttackSpec::Contrast { factor } => factor >= 0.0,
            AttackSpec::Quantize { levels } => levels >= 2,
            AttackSpec::LowPass { keep } | AttackSpec::CropMask { keep } => keep > 0.0 && keep <= 1.0,
            AttackSpec::VaeReencode { .. } => true,
            AttackSpec::Regenerate {
                strength,
                sampler,
                rinse,
            } => {
                sampler.validate()?;
                strength > 0.0 && strength < 1.0 && rinse >= 1
            }
            AttackSpec::AverageForgery { n_pairs } => n_pairs >= 1,
            AttackSpec::ImprintForgery { budget } => budget > 0.0,
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("attack parameters out of range: {self:?}"))
        }
    }

    pub fn is_generative(&self) -> bool {
        matches!(
            self,
            AttackSpec::VaeReencode { .. }
                | AttackSpec::Regenerate { .. }
                | AttackSpec::AverageForgery { .. }
                | AttackSpec::ImprintForgery { .. }
        )
    }

    /// Short name used in result tables.
    pub fn label(&self) -> String {
        match *self {
            AttackSpec::None => "none".into(),
            AttackSpec::AdditiveNoise { sigma } => format!("noise({sigma})"),
            AttackSpec::Brightness { factor } => format!("brightness({factor})"),
            AttackSpec::Contrast { factor } => format!("contrast({factor})"),
            AttackSpec::Quantize { levels } => format!("quantize({levels})"),
            AttackSpec::LowPass { keep } => format!("lowpass({keep})"),
            AttackSpec::CropMask { keep } => format!("crop({keep})"),
            AttackSpec::VaeReencode { seed } => format!("vae-reencode({seed})"),
            AttackSpec::Regenerate {
                strength,
                sampler,
                rinse,
            } => {
                format!("rinse-{rinse}x({strength};{sampler})")
            }
            AttackSpec::AverageForgery { n_pairs } => format!("average-forgery({n_pairs})"),
            AttackSpec::ImprintForgery { budget } => format!("imprint-forgery({budget})"),
        }
    }
}

impl std::str::FromStr for AttackSpec {
    type Err = Error;

    /// Accepts JSON or the short forms `none`, `noise:σ`, `brightness:f`,
    /// `contrast:f`, `quantize:levels`, `lowpass:keep`, `crop:keep`,
    /// `vae-reencode:seed`, `rinse:n[:strength[:sampler]]`,
    /// `average-forgery:n`, `imprint-forgery:budget`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            let spec: AttackSpec = serde_json::from_str(s)?;
            spec.validate()?;
            return Ok(spec);
        }
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<f64> {
            let v = args
                .get(i)
                .ok_or_else(|| Error::InvalidParameter(format!("attack `{s}` is missing argument {}", i + 1)))?;
            v.parse()
                .map_err(|e| Error::InvalidParameter(format!("attack `{s}` argument `{v}`: {e}")))
        };
        let int = |i: usize| -> Result<u64> {
            let v = num(i)?;
            if v < 0.0 || v.fract() != 0.0 {
                return invalid(format!(
                    "attack `{s}` argument {} must be a non-negative integer",
                    i + 1
                ));
            }
            Ok(v as u64)
        };
        let spec = match name {
            "none" => AttackSpec::None,
            "noise" => AttackSpec::noise(num(0)?),
            "brightness" => AttackSpec::Brightness { factor: num(0)? },
            "contrast" => AttackSpec::Contrast { factor: num(0)? },
            "quantize" => AttackSpec::Quantize { levels: int(0)? },
            "lowpass" => AttackSpec::LowPass { keep: num(0)? },
            "crop" => AttackSpec::CropMask { keep: num(0)? },
            "vae-reencode" => AttackSpec::VaeReencode {
                seed: if args.is_empty() { 0 } else { int(0)? },
            },
            "rinse" => AttackSpec::Regenerate {
                rinse: int(0)? as usize,
                strength: if args.len() > 1 { num(1)? } else { 0.2 },
                sampler: match args.get(2) {
                    Some(k) => k.parse()?,
                    None => SamplerKind::DDIM,
                },
            },
            "average-forgery" => AttackSpec::AverageForgery {
                n_pairs: int(0)? as usize,
            },
            "imprint-forgery" => AttackSpec::ImprintForgery { budget: num(0)? },
            other => return invalid(format!("unknown attack `{other}`")),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Orthonormal DCT-II basis vector `k` of length `n`, evaluated at `i`.
fn dct_basis(n: usize, k: usize, i: usize) -> f64 {
    let scale = if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    };
    scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos()
}

fn low_pass(x: &[f64], keep: f64) -> Vec<f64> {
    let n = x.len();
    let kept = ((keep * n as f64).round() as usize).min(n);
    let mut out = vec![0.0; n];
    for k in 0..kept {
        let c: f64 = x.iter().enumerate().map(|(i, v)| v * dct_basis(n, k, i)).sum();
        for (i, o) in out.iter_mut().enumerate() {
            *o += c * dct_basis(n, k, i);
        }
    }
    out
}

/// Applies a non-generative distortion.
pub fn apply_distortion<R: Rng + ?Sized>(x: &[f64], spec: &AttackSpec, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let out = match *spec {
        AttackSpec::None => x.to_vec(),
        AttackSpec::AdditiveNoise { sigma } => {
            let eta = standard_normal_vec(rng, x.len());
            x.iter().zip(eta).map(|(v, e)| v + sigma * e).collect()
        }
        AttackSpec::Brightness { factor } => x.iter().map(|v| v * factor).collect(),
        AttackSpec::Contrast { factor } => {
            let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
            x.iter().map(|v| mean + factor * (v - mean)).collect()
        }
        AttackSpec::Quantize { levels } => {
            let steps = (levels - 1) as f64;
            x.iter()
                .map(|v| {
                    let idx = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * steps).round();
                    -1.0 + 2.0 * idx / steps
                })
                .collect()
        }
        AttackSpec::LowPass { keep } => low_pass(x, keep),
        AttackSpec::CropMask { keep } => {
            let kept = ((keep * x.len() as f64).round() as usize).min(x.len());
            let mut out = x.to_vec();
            out[kept..].iter_mut().for_each(|v| *v = 0.0);
            out
        }
        _ => return invalid(format!("{} is not a pixel distortion", spec.label())),
    };
    Ok(out)
}

/// Passes `x` through an independently seeded autoencoder of the same shape.
pub fn vae_reencode(x: &[f64], v: &LinearVAE, seed: u64) -> Result<Vec<f64>> {
    check_len(v.pixel_dim(), x.len())?;
    let other = make_vae(v.pixel_dim(), v.latent_dim(), 0.0, seed)?;
    other.reconstruct(x)
}

/// Regeneration: encode, re-noise to `t* = round(strength·T)`, denoise
/// without any watermark, decode; repeated `rinse` times with fresh noise.
#[allow(clippy::too_many_arguments)]
pub fn regenerate(
    x: &[f64],
    o: &ScoreOracle,
    s: &NoiseSchedule,
    v: &LinearVAE,
    strength: f64,
    sampler: SamplerKind,
    rinse: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&strength) {
        return invalid(format!("regeneration strength {strength} outside (0, 1)"));
    }
    check_len(v.pixel_dim(), x.len())?;
    check_len(o.dim(), v.latent_dim())?;
    let t_star = (strength * s.steps() as f64).round() as usize;
    let mut rng = seeded(seed);
    let mut x = x.to_vec();
    for _ in 0..rinse {
        let z = v.encode(&x)?;
        let z = if t_star == 0 {
            z
        } else {
            let z_t = s.forward_perturb(t_star, &z, &mut rng)?;
            let grid: Vec<usize> = (1..=t_star).rev().collect();
            let (states, _) = integrate(sampler, o, s, &grid, z_t, None, &mut rng)?;
            states.into_iter().last().expect("non-empty").z
        };
        x = v.decode(&z, &mut rng)?;
    }
    Ok(x)
}

/// Estimates the watermark residual as the mean latent difference over the
/// first `n` (watermarked, clean) image pairs.
pub fn average_forgery(pairs: &[(Vec<f64>, Vec<f64>)], v: &LinearVAE, n: usize) -> Result<Vec<f64>> {
    if pairs.is_empty() || n == 0 {
        return Err(Error::InsufficientData(
            "average forgery needs at least one pair".into(),
        ));
    }
    if n > pairs.len() {
        return invalid(format!("requested {n} pairs but only {} available", pairs.len()));
    }
    let mut acc = vec![0.0; v.latent_dim()];
    for (wm, clean) in &pairs[..n] {
        let zw = v.encode(wm)?;
        let zc = v.encode(clean)?;
        for ((a, w), c) in acc.iter_mut().zip(&zw).zip(&zc) {
            *a += w - c;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

/// Adds a latent residual to an image through the decoder: `x + dec·δ`.
pub fn imprint_residual(x: &[f64], v: &LinearVAE, residual: &[f64]) -> Result<Vec<f64>> {
    check_len(v.pixel_dim(), x.len())?;
    let dx = v.decode_clean(residual)?;
    Ok(x.iter().zip(&dx).map(|(a, b)| a + b).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprintResult {
    pub forged: Vec<f64>,
    pub delta_z: Vec<f64>,
    pub perturbation_norm: f64,
    pub psnr: f64,
}

/// Least-norm latent perturbation giving every carrier a signed margin of at
/// least `budget·α` for `m_target`, imprinted through the decoder.
///
/// With orthonormal carriers the constraints decouple, so the minimizer is
/// `Σ_i max(0, budget·α − s_i·u_i·z)·s_i·u_i`.
pub fn imprint_forgery(
    x_clean: &[f64],
    v: &LinearVAE,
    cb: &CodeBook,
    m_target: &Message,
    budget: f64,
) -> Result<ImprintResult> {
    if !(budget > 0.0) {
        return invalid(format!("imprint budget must be positive, got {budget}"));
    }
    check_len(cb.bits(), m_target.len())?;
    let z = v.encode(x_clean)?;
    let proj = cb.projections(&z)?;
    let target = budget * cb.amplitude();
    let mut delta_z = vec![0.0; cb.dim()];
    for (i, (p, s)) in proj.iter().zip(m_target.symbols()).enumerate() {
        let shortfall = (target - s * p).max(0.0);
        if shortfall > 0.0 {
            crate::linalg::axpy(shortfall * s, cb.carrier(i), &mut delta_z);
        }
    }
    let forged = imprint_residual(x_clean, v, &delta_z)?;
    Ok(ImprintResult {
        psnr: psnr(&forged, x_clean)?,
        perturbation_norm: norm(&delta_z),
        forged,
        delta_z,
    })
}

/// Everything a per-image attack may need.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub oracle: &'a ScoreOracle,
    pub schedule: &'a NoiseSchedule,
    pub vae: &'a LinearVAE,
}

/// Applies any per-image attack. Forgeries act on collections and are
/// rejected here.
pub fn apply_attack(x: &[f64], spec: &AttackSpec, ctx: &AttackContext<'_>, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    match *spec {
        AttackSpec::VaeReencode { seed: vae_seed } => vae_reencode(x, ctx.vae, vae_seed),
        AttackSpec::Regenerate {
            strength,
            sampler,
            rinse,
        } => regenerate(x, ctx.oracle, ctx.schedule, ctx.vae, strength, sampler, rinse, seed),
        AttackSpec::AverageForgery { .. } | AttackSpec::ImprintForgery { .. } => {
            invalid(format!("{} is a forgery, not a per-image attack", spec.label()))
        }
        _ => apply_distortion(x, spec, &mut seeded(seed)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_message, make_codebook};
    use crate::linalg::{dot, sub};
    use crate::oracle::OracleSpec;
    use crate::schedule::ScheduleSpec;

    fn image(n: usize, seed: u64) -> Vec<f64> {
        standard_normal_vec(&mut seeded(seed), n)
            .into_iter()
            .map(|v| 0.4 * v)
            .collect()
    }

    #[test]
    fn zero_parameter_distortions_are_identities() {
        let x = image(32, 1);
        let mut rng = seeded(0);
        assert_eq!(apply_distortion(&x, &AttackSpec::noise(0.0), &mut rng).unwrap(), x);
        assert_eq!(
            apply_distortion(&x, &AttackSpec::Brightness { factor: 1.0 }, &mut rng).unwrap(),
            x
        );
        assert_eq!(apply_distortion(&x, &AttackSpec::None, &mut rng).unwrap(), x);
        let c = apply_distortion(&x, &AttackSpec::Contrast { factor: 1.0 }, &mut rng).unwrap();
        assert!(x.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-15));
        let lp = apply_distortion(&x, &AttackSpec::LowPass { keep: 1.0 }, &mut rng).unwrap();
        assert!(x.iter().zip(&lp).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn fine_quantization_error_bound() {
        let x: Vec<f64> = image(64, 2).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let spec = AttackSpec::Quantize { levels: 1 << 24 };
        let q = apply_distortion(&x, &spec, &mut seeded(0)).unwrap();
        let worst = x.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 2.0 / (1u64 << 24) as f64);
        let coarse = apply_distortion(&[0.1, 0.9], &AttackSpec::Quantize { levels: 2 }, &mut seeded(0)).unwrap();
        assert_eq!(coarse, vec![1.0, 1.0]);
    }

    #[test]
    fn contrast_recenters_about_mean() {
        let out = apply_distortion(&[1.0, 3.0], &AttackSpec::Contrast { factor: 2.0 }, &mut seeded(0)).unwrap();
        assert_eq!(out, vec![0.0, 4.0]);
    }

    #[test]
    fn crop_and_low_pass_remove_energy() {
        let x = image(40, 3);
        let c = apply_distortion(&x, &AttackSpec::CropMask { keep: 0.75 }, &mut seeded(0)).unwrap();
        assert!(c[30..].iter().all(|v| *v == 0.0));
        assert_eq!(&c[..30], &x[..30]);
        let lp = apply_distortion(&x, &AttackSpec::LowPass { keep: 0.5 }, &mut seeded(0)).unwrap();
        // projection: residual orthogonal to the kept part
        let resid = sub(&x, &lp);
        assert!(dot(&resid, &lp).abs() < 1e-10);
        assert!(norm(&lp) < norm(&x));
    }

    #[test]
    fn distortions_are_seeded() {
        let x = image(16, 4);
        let spec = AttackSpec::noise(0.3);
        let a = apply_distortion(&x, &spec, &mut seeded(5)).unwrap();
        let b = apply_distortion(&x, &spec, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let x = image(8, 0);
        let mut rng = seeded(0);
        for spec in [
            AttackSpec::noise(-1.0),
            AttackSpec::Quantize { levels: 1 },
            AttackSpec::LowPass { keep: 0.0 },
            AttackSpec::CropMask { keep: 1.5 },
            AttackSpec::Brightness { factor: 0.0 },
        ] {
            assert!(apply_distortion(&x, &spec, &mut rng).is_err(), "{spec:?}");
        }
        assert!(apply_distortion(&x, &AttackSpec::rinse(1), &mut rng).is_err());
        assert!(AttackSpec::Regenerate {
            strength: 1.0,
            sampler: SamplerKind::DDIM,
            rinse: 1
        }
        .validate()
        .is_err());
    }

    #[test]
    fn degenerate_regeneration_is_a_vae_round_trip() {
        let s = ScheduleSpec::default().build().unwrap();
        let o = OracleSpec::default().build().unwrap();
        let v = make_vae(64, 16, 0.0, 1).unwrap();
        let x = image(64, 5);
        let out = regenerate(&x, &o, &s, &v, 0.001, SamplerKind::DDIM, 1, 3).unwrap();
        let want = v.reconstruct(&x).unwrap();
        assert!(out.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(regenerate(&x, &o, &s, &v, 1.0, SamplerKind::DDIM, 1, 3).is_err());
    }

    #[test]
    fn paired_differencing_recovers_residual_exactly() {
        let v = make_vae(40, 10, 0.0, 2).unwrap();
        let z = standard_normal_vec(&mut seeded(1), 10);
        let delta = standard_normal_vec(&mut seeded(2), 10);
        let clean = v.decode_clean(&z).unwrap();
        let wm = v.decode_clean(&crate::linalg::add(&z, &delta)).unwrap();
        let est = average_forgery(&[(wm, clean)], &v, 1).unwrap();
        assert!(est.iter().zip(&delta).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(average_forgery(&[], &v, 1).is_err());
    }

    #[test]
    fn imprint_is_a_no_op_on_already_marked_images() {
        let v = make_vae(48, 12, 0.0, 3).unwrap();
        let cb = make_codebook(12, 4, 0.5, 1).unwrap();
        let m = Message::random(&mut seeded(7), 4);
        let x = v.decode_clean(&encode_message(&m, &cb).unwrap()).unwrap();
        let out = imprint_forgery(&x, &v, &cb, &m, 1.0).unwrap();
        assert!(out.perturbation_norm < 1e-12);
        assert_eq!(out.psnr, 99.0);
    }

    #[test]
    fn imprint_norm_grows_with_budget() {
        let v = make_vae(48, 12, 0.0, 3).unwrap();
        let cb = make_codebook(12, 4, 0.5, 1).unwrap();
        let m = Message::random(&mut seeded(8), 4);
        let x = image(48, 9);
        let norms: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|b| imprint_forgery(&x, &v, &cb, &m, *b).unwrap().perturbation_norm)
            .collect();
        assert!(norms[0] <= norms[1] && norms[1] <= norms[2]);
        let forged = imprint_forgery(&x, &v, &cb, &m, 1.0).unwrap();
        let margins = cb.projections(&v.encode(&forged.forged).unwrap()).unwrap();
        for (p, s) in margins.iter().zip(m.symbols()) {
            assert!(s * p >= 0.5 - 1e-10);
        }
    }

    #[test]
    fn forgeries_are_not_per_image_attacks() {
        let s = ScheduleSpec::default().build().unwrap();
        let o = OracleSpec::default().build().unwrap();
        let v = make_vae(64, 16, 0.0, 1).unwrap();
        let ctx = AttackContext {
            oracle: &o,
            schedule: &s,
            vae: &v,
        };
        let x = image(64, 1);
        assert!(apply_attack(&x, &AttackSpec::AverageForgery { n_pairs: 3 }, &ctx, 0).is_err());
        let r = apply_attack(&x, &AttackSpec::VaeReencode { seed: 99 }, &ctx, 0).unwrap();
        assert_eq!(r.len(), 64);
    }

    #[test]
    fn short_attack_names() {
        assert_eq!("noise:0.25".parse::<AttackSpec>().unwrap(), AttackSpec::noise(0.25));
        assert_eq!("rinse:2".parse::<AttackSpec>().unwrap(), AttackSpec::rinse(2));
        assert_eq!(
            "rinse:4:0.3:pf-ode".parse::<AttackSpec>().unwrap(),
            AttackSpec::Regenerate {
                strength: 0.3,
                sampler: SamplerKind::PfOde,
                rinse: 4
            }
        );
        assert_eq!(
            "quantize:16".parse::<AttackSpec>().unwrap(),
            AttackSpec::Quantize { levels: 16 }
        );
        assert!("quantize:2.5".parse::<AttackSpec>().is_err());
        assert!("noise".parse::<AttackSpec>().is_err());
        assert!("blur:1".parse::<AttackSpec>().is_err());
        let json = r#"{"attack":"crop-mask","keep":0.5}"#;
        assert_eq!(json.parse::<AttackSpec>().unwrap(), AttackSpec::CropMask { keep: 0.5 });
    }

    #[test]
    fn attack_json_is_tagged() {
        let spec = AttackSpec::rinse(2);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"attack\":\"regenerate\""));
        assert_eq!(serde_json::from_str::<AttackSpec>(&json).unwrap(), spec);
    }
}
