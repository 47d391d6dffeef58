//! Discrete variance-preserving noise schedules.
//!
//! Steps are indexed `1..=T`: `t = T` is pure noise and `t = 1` is the last
//! denoising step. Index `0` denotes the clean latent and has `ᾱ_0 = 1`,
//! which the samplers use for the final transition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::standard_normal_vec;

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Serialized form of a schedule. Derived arrays are rebuilt on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleSpec {
    /// Linear schedule whose β range is the usual 1e-4..0.02 over 1000 steps,
    /// rescaled so that `steps` steps destroy the same amount of signal.
    pub fn scaled_linear(steps: usize) -> Self {
        let scale = 1000.0 / steps.max(1) as f64;
        Self {
            kind: ScheduleKind::Linear,
            steps,
            beta_min: (1e-4 * scale).min(MAX_BETA),
            beta_max: (0.02 * scale).min(MAX_BETA),
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.kind, self.steps, self.beta_min, self.beta_max)
    }
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self::scaled_linear(50)
    }
}

/// Immutable VP schedule with precomputed β_t, α_t and ᾱ_t.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    spec: Option<ScheduleSpec>,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn build_schedule(kind: ScheduleKind, steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return invalid("schedule needs at least one step");
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return invalid(format!(
            "beta range must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        ));
    }
    let betas = match kind {
        ScheduleKind::Linear => {
            if steps == 1 {
                vec![beta_min]
            } else {
                let span = (beta_max - beta_min) / (steps - 1) as f64;
                (0..steps).map(|i| beta_min + span * i as f64).collect()
            }
        }
        ScheduleKind::Cosine => cosine_betas(steps),
    };
    let mut schedule = NoiseSchedule::from_betas(betas)?;
    schedule.spec = Some(ScheduleSpec {
        kind,
        steps,
        beta_min,
        beta_max,
    });
    Ok(schedule)
}

fn cosine_betas(steps: usize) -> Vec<f64> {
    let f = |t: f64| {
        let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    (1..=steps)
        .map(|t| (1.0 - f(t as f64) / f((t - 1) as f64)).min(MAX_BETA))
        .collect()
}

impl NoiseSchedule {
    /// Builds a schedule from explicit per-step variances. Such schedules have
    /// no compact spec and cannot be serialized.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return invalid("schedule needs at least one step");
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return invalid(format!("beta {b} outside (0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        if alpha_bars.last().is_some_and(|a| *a <= 0.0) {
            return invalid("cumulative signal underflowed to zero");
        }
        Ok(Self {
            spec: None,
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn spec(&self) -> Option<ScheduleSpec> {
        self.spec
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::StepOutOfRange { t, steps: self.steps() })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.betas[t - 1])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    /// ᾱ_t extended with ᾱ_0 = 1.
    pub fn alpha_bar_or_one(&self, t: usize) -> Result<f64> {
        if t == 0 {
            Ok(1.0)
        } else {
            self.alpha_bar(t)
        }
    }

    /// γ = λ·√ᾱ_t / √(1−ᾱ_t), the factor multiplying δ in the ε correction.
    pub fn modulation_coeff(&self, t: usize, lambda: f64) -> Result<f64> {
        if lambda < 0.0 {
            return invalid(format!("strength must be non-negative, got {lambda}"));
        }
        let ab = self.alpha_bar(t)?;
        Ok(lambda * ab.sqrt() / (1.0 - ab).sqrt())
    }

    /// −g²(t)·√ᾱ_t/(1−ᾱ_t) with g²(t) = β_t; multiply by δ for the drift shift.
    pub fn drift_correction_coeff(&self, t: usize) -> Result<f64> {
        let ab = self.alpha_bar(t)?;
        Ok(-self.betas[t - 1] * ab.sqrt() / (1.0 - ab))
    }

    /// Forward drift f(z, t) = −½β_t z.
    pub fn forward_drift(&self, z: &[f64], t: usize) -> Result<Vec<f64>> {
        let b = self.beta(t)?;
        Ok(z.iter().map(|v| -0.5 * b * v).collect())
    }

    /// Diffusion coefficient g(t) = √β_t.
    pub fn diffusion(&self, t: usize) -> Result<f64> {
        Ok(self.beta(t)?.sqrt())
    }

    /// Samples z_t = √ᾱ_t z0 + √(1−ᾱ_t) ε.
    pub fn forward_perturb<R: Rng + ?Sized>(&self, t: usize, z0: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check_step(t)?;
        let eps = standard_normal_vec(rng, z0.len());
        self.forward_perturb_with(t, z0, &eps)
    }

    /// Forward marginal with an explicit noise draw.
    pub fn forward_perturb_with(&self, t: usize, z0: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
        check_len(z0.len(), eps.len())?;
        let ab = self.alpha_bar(t)?;
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(z0.iter().zip(eps).map(|(z, e)| s * z + n * e).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let spec = self
            .spec
            .ok_or_else(|| Error::InvalidParameter("schedule built from raw betas has no spec".into()))?;
        Ok(serde_json::to_string_pretty(&spec)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: ScheduleSpec = serde_json::from_str(json)?;
        spec.build()
    }
}
