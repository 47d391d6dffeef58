//! Noise-prediction modulation.
//!
//! Inside the injection window the predicted noise is replaced by
//! `ε − λ·√ᾱ_t/√(1−ᾱ_t)·δ`, which moves the implied clean estimate ẑ₀ by
//! exactly `λ·δ` while leaving z_t untouched. Windows are inclusive bounds on
//! the reverse-loop index `t` (T first, 1 last).

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    /// Quality-oriented: partial window, reduced strength.
    Q,
    /// Robustness-oriented: full window, unit strength.
    R,
    #[serde(rename = "custom")]
    Custom,
}

impl Preset {
    pub fn label(&self) -> &'static str {
        match self {
            Preset::Q => "Q",
            Preset::R => "R",
            Preset::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Q" | "q" => Ok(Preset::Q),
            "R" | "r" => Ok(Preset::R),
            "custom" => Ok(Preset::Custom),
            other => invalid(format!("unknown preset `{other}`")),
        }
    }
}

/// Inclusive step interval `[start, end]` on the reverse-loop index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start == 0 || start > end {
            return invalid(format!("malformed window [{start}, {end}]"));
        }
        Ok(Self { start, end })
    }

    pub fn full(steps: usize) -> Self {
        Self { start: 1, end: steps }
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }

    /// Parses `a:b`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| crate::Error::InvalidParameter(format!("window `{s}` is not a:b")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| crate::Error::InvalidParameter(format!("window bound `{v}`: {e}")))
        };
        Self::new(parse(a)?, parse(b)?)
    }

    /// Reinterprets a window counted in loop iterations (1 = first step at
    /// t = T) as a window on `t`.
    pub fn from_iteration_order(&self, steps: usize) -> Result<Self> {
        if self.end > steps {
            return invalid(format!("window end {} exceeds {steps} steps", self.end));
        }
        Self::new(steps + 1 - self.end, steps + 1 - self.start)
    }
}

impl std::str::FromStr for Window {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigDoc", into = "ConfigDoc")]
pub struct InjectionConfig {
    delta: Vec<f64>,
    lambda: f64,
    window: Window,
    preset: Preset,
}

#[derive(Serialize, Deserialize)]
struct ConfigDoc {
    delta: Vec<f64>,
    lambda: f64,
    t_start: usize,
    t_end: usize,
    preset: Preset,
}

impl TryFrom<ConfigDoc> for InjectionConfig {
    type Error = crate::Error;

    fn try_from(doc: ConfigDoc) -> Result<Self> {
        let mut cfg = InjectionConfig::custom(doc.delta, doc.lambda, Window::new(doc.t_start, doc.t_end)?)?;
        cfg.preset = doc.preset;
        Ok(cfg)
    }
}

impl From<InjectionConfig> for ConfigDoc {
    fn from(c: InjectionConfig) -> Self {
        ConfigDoc {
            delta: c.delta,
            lambda: c.lambda,
            t_start: c.window.start,
            t_end: c.window.end,
            preset: c.preset,
        }
    }
}

impl InjectionConfig {
    pub fn custom(delta: Vec<f64>, lambda: f64, window: Window) -> Result<Self> {
        if delta.is_empty() {
            return invalid("watermark residual is empty");
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return invalid(format!("strength must be finite and non-negative, got {lambda}"));
        }
        Window::new(window.start, window.end)?;
        Ok(Self {
            delta,
            lambda,
            window,
            preset: Preset::Custom,
        })
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn preset(&self) -> Preset {
        self.preset
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let mut out = Self::custom(self.delta.clone(), lambda, self.window)?;
        out.preset = self.preset;
        Ok(out)
    }

    /// Checks the window against a schedule's range.
    pub fn validate_for(&self, s: &NoiseSchedule) -> Result<()> {
        if self.window.end > s.steps() {
            return invalid(format!(
                "window {} exceeds schedule with {} steps",
                self.window,
                s.steps()
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Builds the Q or R preset.
///
/// At 50 steps Q injects over `t ∈ [20, 45]` with λ = 0.85 and R over the whole
/// run with λ = 1. Other step counts scale the bounds proportionally, rounded
/// and clamped to `[1, T]`.
pub fn make_preset(kind: Preset, s: &NoiseSchedule, delta: Vec<f64>) -> Result<InjectionConfig> {
    let (lo, hi, lambda) = match kind {
        Preset::Q => (20.0, 45.0, 0.85),
        Preset::R => (0.0, 50.0, 1.0),
        Preset::Custom => return invalid("custom configurations have no preset window"),
    };
    let steps = s.steps();
    let scale = |b: f64| ((b * steps as f64 / 50.0).round() as usize).clamp(1, steps);
    let mut cfg = InjectionConfig::custom(delta, lambda, Window::new(scale(lo), scale(hi))?)?;
    cfg.preset = kind;
    Ok(cfg)
}

/// Applies the modulation to a noise prediction at step `t`.
pub fn corrected_eps(eps: &[f64], cfg: &InjectionConfig, s: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    check_len(cfg.delta.len(), eps.len())?;
    let gamma = s.modulation_coeff(t, cfg.lambda)?;
    if !cfg.window.contains(t) || gamma == 0.0 {
        return Ok(eps.to_vec());
    }
    Ok(eps.iter().zip(&cfg.delta).map(|(e, d)| e - gamma * d).collect())
}
