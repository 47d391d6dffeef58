//! Reverse-process integrators driven by the exact score oracle.
//!
//! Every kind first forms the noise prediction ε̂ = −√(1−ᾱ_t)·score, applies
//! the injection (if any) in ε-space, and only then performs its own update.
//! The correction therefore has identical semantics for all kinds.

use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::injection::{corrected_eps, InjectionConfig};
use crate::linalg::{norm, standard_normal_vec};
use crate::oracle::{LatentState, ScoreOracle};
use crate::rng::seeded;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplerKind {
    Ddim { eta: f64 },
    Ancestral,
    EmSde,
    PfOde,
}

impl SamplerKind {
    pub const DDIM: SamplerKind = SamplerKind::Ddim { eta: 0.0 };

    pub fn all_default() -> Vec<SamplerKind> {
        vec![
            SamplerKind::DDIM,
            SamplerKind::Ancestral,
            SamplerKind::EmSde,
            SamplerKind::PfOde,
        ]
    }

    pub fn is_stochastic(&self) -> bool {
        match self {
            SamplerKind::Ddim { eta } => *eta > 0.0,
            SamplerKind::Ancestral | SamplerKind::EmSde => true,
            SamplerKind::PfOde => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SamplerKind::Ddim { eta } if !(0.0..=1.0).contains(eta) => {
                invalid(format!("DDIM eta {eta} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerKind::Ddim { eta } if *eta == 0.0 => write!(f, "ddim"),
            SamplerKind::Ddim { eta } => write!(f, "ddim:{eta}"),
            SamplerKind::Ancestral => write!(f, "ancestral"),
            SamplerKind::EmSde => write!(f, "em-sde"),
            SamplerKind::PfOde => write!(f, "pf-ode"),
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    /// Accepts `ddim`, `ddim:<eta>`, `ancestral`, `em-sde`, `pf-ode`.
    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "ddim" => SamplerKind::DDIM,
            "ancestral" => SamplerKind::Ancestral,
            "em-sde" => SamplerKind::EmSde,
            "pf-ode" => SamplerKind::PfOde,
            other => match other.strip_prefix("ddim:") {
                Some(eta) => SamplerKind::Ddim {
                    eta: eta
                        .parse()
                        .map_err(|e| Error::InvalidParameter(format!("eta `{eta}`: {e}")))?,
                },
                None => return invalid(format!("unknown sampler `{other}`")),
            },
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Everything one reverse step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub z_prev: Vec<f64>,
    /// Noise prediction actually used (after any correction).
    pub eps: Vec<f64>,
    /// Clean estimate implied by `eps`.
    pub z0_hat: Vec<f64>,
    /// Clean estimate implied by the uncorrected prediction.
    pub z0_hat_uncorrected: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub kind: SamplerKind,
    /// From t = T down to t = 0.
    pub states: Vec<LatentState>,
    pub seed: u64,
    pub injected: Option<InjectionConfig>,
    /// ‖ε̂‖₂ used at each step, aligned with `states[..len-1]`.
    pub eps_norms: Vec<f64>,
}

impl Trajectory {
    pub fn final_latent(&self) -> &[f64] {
        &self.states.last().expect("trajectory has at least one state").z
    }

    /// Writes `step,t,eps_norm[,z_0..]` rows.
    pub fn write_csv<W: Write>(&self, mut w: W, with_latents: bool) -> std::io::Result<()> {
        let dim = self.states[0].z.len();
        write!(w, "step,t,eps_norm")?;
        if with_latents {
            for i in 0..dim {
                write!(w, ",z_{i}")?;
            }
        }
        writeln!(w)?;
        for (i, st) in self.states.iter().enumerate() {
            let eps = self.eps_norms.get(i).map(|v| v.to_string()).unwrap_or_default();
            write!(w, "{i},{},{eps}", st.t)?;
            if with_latents {
                for v in &st.z {
                    write!(w, ",{v}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Descending timesteps `T = t_1 > … > t_n = 1`, evenly spaced and rounded.
pub fn step_grid(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return invalid(format!("cannot take {steps} steps on a {total}-step schedule"));
    }
    if steps == 1 {
        return Ok(vec![total]);
    }
    let span = (total - 1) as f64 / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| (total as f64 - span * i as f64).round() as usize)
        .collect())
}

fn beta_mass(s: &NoiseSchedule, t: usize, t_prev: usize) -> f64 {
    s.betas()[t_prev..t].iter().sum()
}

/// One reverse step with the Gaussian draw supplied by the caller.
///
/// `xi` is ignored by deterministic kinds and must otherwise have length d.
#[allow(clippy::too_many_arguments)]
pub fn step_with_noise(
    kind: SamplerKind,
    o: &ScoreOracle,
    s: &NoiseSchedule,
    z: &[f64],
    t: usize,
    t_prev: usize,
    cfg: Option<&InjectionConfig>,
    xi: &[f64],
) -> Result<StepOutput> {
    if t_prev >= t {
        return invalid(format!("reverse step needs t_prev < t, got {t_prev} >= {t}"));
    }
    kind.validate()?;
    check_len(o.dim(), z.len())?;
    if kind.is_stochastic() {
        check_len(o.dim(), xi.len())?;
    }
    let ab = s.alpha_bar(t)?;
    let ap = s.alpha_bar_or_one(t_prev)?;
    let (sa, sig) = (ab.sqrt(), (1.0 - ab).sqrt());

    let score_raw = o.score_at(z, ab);
    let eps_raw: Vec<f64> = score_raw.iter().map(|v| -sig * v).collect();
    let eps = match cfg {
        Some(c) => corrected_eps(&eps_raw, c, s, t)?,
        None => eps_raw.clone(),
    };
    let implied = |e: &[f64]| -> Vec<f64> { z.iter().zip(e).map(|(zi, ei)| (zi - sig * ei) / sa).collect() };
    let z0_hat = implied(&eps);
    let z0_hat_uncorrected = implied(&eps_raw);

    #[cfg(debug_assertions)]
    if let Some(c) = cfg.filter(|c| c.window().contains(t)) {
        for ((a, b), d) in z0_hat.iter().zip(&z0_hat_uncorrected).zip(c.delta()) {
            let want = c.lambda() * d;
            debug_assert!(
                (a - b - want).abs() <= 1e-9 * (1.0 + a.abs() + b.abs()),
                "clean-estimate shift {} != {want} at t={t}",
                a - b
            );
        }
    }

    let d = z.len();
    let mut z_prev = vec![0.0; d];
    match kind {
        SamplerKind::Ddim { eta } => {
            let sigma = if t_prev == 0 {
                0.0
            } else {
                eta * ((1.0 - ap) / (1.0 - ab)).sqrt() * (1.0 - ab / ap).sqrt()
            };
            let dir = (1.0 - ap - sigma * sigma).max(0.0).sqrt();
            let sp = ap.sqrt();
            for i in 0..d {
                z_prev[i] = sp * z0_hat[i] + dir * eps[i];
                if sigma > 0.0 {
                    z_prev[i] += sigma * xi[i];
                }
            }
        }
        SamplerKind::Ancestral => {
            let a_step = ab / ap;
            let b_step = 1.0 - a_step;
            let c0 = ap.sqrt() * b_step / (1.0 - ab);
            let ct = a_step.sqrt() * (1.0 - ap) / (1.0 - ab);
            let sd = ((1.0 - ap) / (1.0 - ab) * b_step).sqrt();
            for i in 0..d {
                z_prev[i] = c0 * z0_hat[i] + ct * z[i] + sd * xi[i];
            }
        }
        SamplerKind::EmSde | SamplerKind::PfOde => {
            // g²·Δt integrated over the step; equals β_t on the full grid
            let g2dt = beta_mass(s, t, t_prev);
            let (score_w, noise) = if kind == SamplerKind::EmSde {
                (1.0, g2dt.sqrt())
            } else {
                (0.5, 0.0)
            };
            for i in 0..d {
                let score = -eps[i] / sig;
                // z − [f − w·g²·score]Δt with f = −½β z
                z_prev[i] = z[i] + 0.5 * g2dt * z[i] + score_w * g2dt * score;
                if noise > 0.0 {
                    z_prev[i] += noise * xi[i];
                }
            }
        }
    }
    Ok(StepOutput {
        z_prev,
        eps,
        z0_hat,
        z0_hat_uncorrected,
    })
}

/// One reverse step drawing its noise from `rng` (stochastic kinds only).
#[allow(clippy::too_many_arguments)]
pub fn step<R: Rng + ?Sized>(
    kind: SamplerKind,
    o: &ScoreOracle,
    s: &NoiseSchedule,
    z: &[f64],
    t: usize,
    t_prev: usize,
    cfg: Option<&InjectionConfig>,
    rng: &mut R,
) -> Result<StepOutput> {
    let xi = if kind.is_stochastic() {
        standard_normal_vec(rng, o.dim())
    } else {
        Vec::new()
    };
    step_with_noise(kind, o, s, z, t, t_prev, cfg, &xi)
}

/// Runs the reverse process from `z_start` at grid point `grid[0]` to t = 0.
pub(crate) fn integrate<R: Rng + ?Sized>(
    kind: SamplerKind,
    o: &ScoreOracle,
    s: &NoiseSchedule,
    grid: &[usize],
    z_start: Vec<f64>,
    cfg: Option<&InjectionConfig>,
    rng: &mut R,
) -> Result<(Vec<LatentState>, Vec<f64>)> {
    let mut states = Vec::with_capacity(grid.len() + 1);
    let mut eps_norms = Vec::with_capacity(grid.len());
    let mut z = z_start;
    for (i, &t) in grid.iter().enumerate() {
        let t_prev = grid.get(i + 1).copied().unwrap_or(0);
        let out = step(kind, o, s, &z, t, t_prev, cfg, rng)?;
        eps_norms.push(norm(&out.eps));
        states.push(LatentState { z, t });
        z = out.z_prev;
    }
    states.push(LatentState { z, t: 0 });
    Ok((states, eps_norms))
}

/// Draws z_T ~ N(0, I) from `seed` and integrates to t = 0.
pub fn sample(
    kind: SamplerKind,
    o: &ScoreOracle,
    s: &NoiseSchedule,
    steps: usize,
    cfg: Option<&InjectionConfig>,
    seed: u64,
) -> Result<Trajectory> {
    kind.validate()?;
    if let Some(c) = cfg {
        c.validate_for(s)?;
        check_len(o.dim(), c.delta().len())?;
    }
    let grid = step_grid(s.steps(), steps)?;
    let mut rng = seeded(seed);
    let z_t = standard_normal_vec(&mut rng, o.dim());
    let (states, eps_norms) = integrate(kind, o, s, &grid, z_t, cfg, &mut rng)?;
    Ok(Trajectory {
        kind,
        states,
        seed,
        injected: cfg.cloned(),
        eps_norms,
    })
}

/// Clean and injected runs sharing every Gaussian draw; returns
/// `(z0_clean, z0_wm)`.
pub fn paired_sample(
    kind: SamplerKind,
    o: &ScoreOracle,
    s: &NoiseSchedule,
    steps: usize,
    cfg: &InjectionConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let clean = sample(kind, o, s, steps, None, seed)?;
    let wm = sample(kind, o, s, steps, Some(cfg), seed)?;
    Ok((clean.final_latent().to_vec(), wm.final_latent().to_vec()))
}

const INVERT_MAX_ITERS: usize = 200;

/// Solves the deterministic DDIM step for its input: finds z_t such that the
/// uncorrected η = 0 update from t lands on `z_prev`.
fn invert_ddim_step(o: &ScoreOracle, s: &NoiseSchedule, z_prev: &[f64], t: usize, t_prev: usize) -> Result<Vec<f64>> {
    let ab = s.alpha_bar(t)?;
    let ap = s.alpha_bar_or_one(t_prev)?;
    let (sa, sig) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (sp, sigp) = (ap.sqrt(), (1.0 - ap).sqrt());
    // z_prev = (sp/sa)·z_t + k·ε̂(z_t)
    let k = sigp - sp * sig / sa;
    let eps_of = |z: &[f64]| -> Vec<f64> { o.score_at(z, ab).into_iter().map(|v| -sig * v).collect() };
    let mut z_t: Vec<f64> = {
        let e = eps_of(z_prev);
        z_prev.iter().zip(&e).map(|(zp, ei)| sa / sp * (zp - k * ei)).collect()
    };
    let mut best = z_t.clone();
    let mut best_res = f64::INFINITY;
    for _ in 0..INVERT_MAX_ITERS {
        let e = eps_of(&z_t);
        let res: f64 = z_t
            .iter()
            .zip(&e)
            .zip(z_prev)
            .map(|((zt, ei), zp)| (sp / sa * zt + k * ei - zp).powi(2))
            .sum::<f64>()
            .sqrt();
        if res < best_res {
            best_res = res;
            best.clone_from(&z_t);
        }
        if res <= 1e-14 * (1.0 + norm(z_prev)) {
            break;
        }
        z_t = z_prev.iter().zip(&e).map(|(zp, ei)| sa / sp * (zp - k * ei)).collect();
    }
    Ok(best)
}

/// Maps a clean latent back to an estimate of z_T by inverting the
/// deterministic DDIM sampler step by step (t increasing). Uses the
/// uncorrected oracle.
pub fn ddim_invert(o: &ScoreOracle, s: &NoiseSchedule, z0: &[f64], steps: usize) -> Result<Vec<f64>> {
    check_len(o.dim(), z0.len())?;
    if steps == 0 {
        return Ok(z0.to_vec());
    }
    let grid = step_grid(s.steps(), steps)?;
    let mut z = z0.to_vec();
    let mut t_prev = 0;
    for &t in grid.iter().rev() {
        z = invert_ddim_step(o, s, &z, t, t_prev)?;
        t_prev = t;
    }
    Ok(z)
}

/// Deterministic DDIM sampling from a given z_T (no injection).
pub fn ddim_decode_from(o: &ScoreOracle, s: &NoiseSchedule, z_t: Vec<f64>, steps: usize) -> Result<Vec<f64>> {
    check_len(o.dim(), z_t.len())?;
    let grid = step_grid(s.steps(), steps)?;
    let mut unused = seeded(0);
    let (states, _) = integrate(SamplerKind::DDIM, o, s, &grid, z_t, None, &mut unused)?;
    Ok(states.last().expect("non-empty").z.clone())
}
