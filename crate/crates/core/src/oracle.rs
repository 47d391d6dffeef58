//! Gaussian-mixture data distributions with exact time-t marginals.
//!
//! Under the VP forward process a component N(μ, σ²I) becomes
//! N(√ᾱ μ, (ᾱσ² + 1 − ᾱ)I), so the marginal density, its score and the
//! posterior mean E[z₀ | z_t] are all available in closed form. The oracle
//! stands in for a trained ε-predictor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::linalg::{norm, standard_normal_vec};
use crate::rng::seeded;
use crate::schedule::NoiseSchedule;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OracleDoc", into = "OracleDoc")]
pub struct ScoreOracle {
    dim: usize,
    components: Vec<Component>,
}

#[derive(Serialize, Deserialize)]
struct OracleDoc {
    dim: usize,
    components: Vec<Component>,
}

impl TryFrom<OracleDoc> for ScoreOracle {
    type Error = crate::Error;

    fn try_from(doc: OracleDoc) -> Result<Self> {
        ScoreOracle::new(doc.dim, doc.components)
    }
}

impl From<ScoreOracle> for OracleDoc {
    fn from(o: ScoreOracle) -> Self {
        OracleDoc {
            dim: o.dim,
            components: o.components,
        }
    }
}

/// A latent together with its step index; `t = 0` is the clean latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub t: usize,
}

/// The three interchangeable model-output parameterizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    Score,
    Eps,
    Z0,
}

/// Compact recipe for a seeded isotropic mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub dim: usize,
    pub n_components: usize,
    pub mean_norm: f64,
    pub variance: f64,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            n_components: 3,
            mean_norm: 4.0,
            variance: 1.0,
            seed: 0,
        }
    }
}

impl OracleSpec {
    pub fn build(&self) -> Result<ScoreOracle> {
        if self.n_components == 0 {
            return invalid("mixture needs at least one component");
        }
        let mut rng = seeded(self.seed);
        let w = 1.0 / self.n_components as f64;
        let components = (0..self.n_components)
            .map(|_| {
                let mut mean = standard_normal_vec(&mut rng, self.dim);
                let n = norm(&mean);
                mean.iter_mut().for_each(|v| *v *= self.mean_norm / n);
                Component {
                    weight: w,
                    mean,
                    var: self.variance,
                }
            })
            .collect();
        ScoreOracle::new(self.dim, components)
    }
}

impl ScoreOracle {
    pub fn new(dim: usize, components: Vec<Component>) -> Result<Self> {
        if dim == 0 {
            return invalid("oracle dimension must be positive");
        }
        if components.is_empty() {
            return invalid("mixture needs at least one component");
        }
        for c in &components {
            check_len(dim, c.mean.len())?;
            if !(c.weight > 0.0) {
                return invalid(format!("component weight {} must be positive", c.weight));
            }
            if !(c.var > 0.0) {
                return invalid(format!("component variance {} must be positive", c.var));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("weights sum to {total}, expected 1"));
        }
        Ok(Self { dim, components })
    }

    /// Single N(0, I) component: its marginal is N(0, I) at every t.
    pub fn standard_normal(dim: usize) -> Self {
        Self {
            dim,
            components: vec![Component {
                weight: 1.0,
                mean: vec![0.0; dim],
                var: 1.0,
            }],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Log-weights of each component at `z` under the marginal with signal
    /// level `ab`, unnormalized, together with each marginal variance.
    fn component_logs(&self, z: &[f64], ab: f64) -> Vec<(f64, f64)> {
        let s = ab.sqrt();
        let d = self.dim as f64;
        self.components
            .iter()
            .map(|c| {
                let v = ab * c.var + 1.0 - ab;
                let sq: f64 = z.iter().zip(&c.mean).map(|(zi, mi)| (zi - s * mi).powi(2)).sum();
                (c.weight.ln() - 0.5 * d * (LN_2PI + v.ln()) - 0.5 * sq / v, v)
            })
            .collect()
    }

    fn responsibilities(&self, z: &[f64], ab: f64) -> Vec<(f64, f64)> {
        let logs = self.component_logs(z, ab);
        let max = logs.iter().map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<(f64, f64)> = logs.iter().map(|(l, v)| ((l - max).exp(), *v)).collect();
        let total: f64 = out.iter().map(|(r, _)| r).sum();
        out.iter_mut().for_each(|(r, _)| *r /= total);
        out
    }

    pub(crate) fn log_density_at(&self, z: &[f64], ab: f64) -> f64 {
        let logs = self.component_logs(z, ab);
        let max = logs.iter().map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
        max + logs.iter().map(|(l, _)| (l - max).exp()).sum::<f64>().ln()
    }

    pub(crate) fn score_at(&self, z: &[f64], ab: f64) -> Vec<f64> {
        let s = ab.sqrt();
        let mut out = vec![0.0; self.dim];
        for ((r, v), c) in self.responsibilities(z, ab).into_iter().zip(&self.components) {
            let k = r / v;
            for ((o, zi), mi) in out.iter_mut().zip(z).zip(&c.mean) {
                *o += k * (s * mi - zi);
            }
        }
        out
    }

    pub(crate) fn posterior_mean_at(&self, z: &[f64], ab: f64) -> Vec<f64> {
        let s = ab.sqrt();
        let mut out = vec![0.0; self.dim];
        for ((r, v), c) in self.responsibilities(z, ab).into_iter().zip(&self.components) {
            // E[z0 | z_t, k] = μ + σ²√ᾱ/v · (z − √ᾱ μ)
            let gain = c.var * s / v;
            for ((o, zi), mi) in out.iter_mut().zip(z).zip(&c.mean) {
                *o += r * (mi + gain * (zi - s * mi));
            }
        }
        out
    }

    /// log p_t(z) for the VP marginal at step `t`.
    pub fn log_density_t(&self, s: &NoiseSchedule, z: &[f64], t: usize) -> Result<f64> {
        check_len(self.dim, z.len())?;
        Ok(self.log_density_at(z, s.alpha_bar(t)?))
    }

    /// ∇_z log p_t(z).
    pub fn exact_score(&self, s: &NoiseSchedule, z: &[f64], t: usize) -> Result<Vec<f64>> {
        check_len(self.dim, z.len())?;
        Ok(self.score_at(z, s.alpha_bar(t)?))
    }

    /// E[z₀ | z_t = z] by Gaussian conditioning inside each component.
    pub fn posterior_mean(&self, s: &NoiseSchedule, z: &[f64], t: usize) -> Result<Vec<f64>> {
        check_len(self.dim, z.len())?;
        Ok(self.posterior_mean_at(z, s.alpha_bar(t)?))
    }

    /// Noise prediction ε̂ = −√(1−ᾱ_t)·score.
    pub fn eps_prediction(&self, s: &NoiseSchedule, z: &[f64], t: usize) -> Result<Vec<f64>> {
        let score = self.exact_score(s, z, t)?;
        let k = (1.0 - s.alpha_bar(t)?).sqrt();
        Ok(score.into_iter().map(|v| -k * v).collect())
    }

    /// Exact draw from the clean data distribution.
    pub fn sample_clean<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let sd = chosen.var.sqrt();
        standard_normal_vec(rng, self.dim)
            .into_iter()
            .zip(&chosen.mean)
            .map(|(e, m)| m + sd * e)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Converts `value` between score, ε and ẑ₀ parameterizations at `(z, t)`.
///
/// score = −ε/√(1−ᾱ_t) and ẑ₀ = (z − √(1−ᾱ_t)·ε)/√ᾱ_t; every other pair is a
/// composition of these two bijections.
pub fn reparameterize(
    z: &[f64],
    value: &[f64],
    s: &NoiseSchedule,
    t: usize,
    from: Parameterization,
    to: Parameterization,
) -> Result<Vec<f64>> {
    check_len(z.len(), value.len())?;
    let ab = s.alpha_bar(t)?;
    Ok(reparameterize_at(z, value, ab, from, to))
}

pub(crate) fn reparameterize_at(
    z: &[f64],
    value: &[f64],
    ab: f64,
    from: Parameterization,
    to: Parameterization,
) -> Vec<f64> {
    use Parameterization::*;
    let sig = (1.0 - ab).sqrt();
    let sa = ab.sqrt();
    if from == to {
        return value.to_vec();
    }
    let eps: Vec<f64> = match from {
        Eps => value.to_vec(),
        Score => value.iter().map(|v| -sig * v).collect(),
        Z0 => z.iter().zip(value).map(|(zi, x)| (zi - sa * x) / sig).collect(),
    };
    match to {
        Eps => eps,
        Score => eps.iter().map(|e| -e / sig).collect(),
        Z0 => z.iter().zip(&eps).map(|(zi, e)| (zi - sig * e) / sa).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::schedule::ScheduleSpec;

    fn schedule() -> NoiseSchedule {
        ScheduleSpec::default().build().unwrap()
    }

    fn symmetric_pair(mu: &[f64]) -> ScoreOracle {
        let neg: Vec<f64> = mu.iter().map(|v| -v).collect();
        ScoreOracle::new(
            mu.len(),
            vec![
                Component {
                    weight: 0.5,
                    mean: mu.to_vec(),
                    var: 1.0,
                },
                Component {
                    weight: 0.5,
                    mean: neg,
                    var: 1.0,
                },
            ],
        )
        .unwrap()
    }

    fn log_std_normal(z: &[f64]) -> f64 {
        -0.5 * z.len() as f64 * LN_2PI - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn standard_normal_marginal_is_stationary() {
        let s = schedule();
        let o = ScoreOracle::standard_normal(3);
        let z = [0.3, -1.2, 2.0];
        for t in [1, 17, 50] {
            let lp = o.log_density_t(&s, &z, t).unwrap();
            assert!((lp - log_std_normal(&z)).abs() < 1e-12);
            let score = o.exact_score(&s, &z, t).unwrap();
            for (a, b) in score.iter().zip(&z) {
                assert!((a + b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_pair_at_origin() {
        let s = schedule();
        let o = symmetric_pair(&[2.0, -1.0]);
        let t = 10;
        let ab = s.alpha_bar(t).unwrap();
        let v = ab + 1.0 - ab;
        let sq = ab * 5.0;
        let single = -LN_2PI - (v.ln()) - 0.5 * sq / v;
        let lp = o.log_density_t(&s, &[0.0, 0.0], t).unwrap();
        assert!((lp - single).abs() < 1e-12);
        let score = o.exact_score(&s, &[0.0, 0.0], t).unwrap();
        assert!(score.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn far_components_do_not_underflow() {
        let s = schedule();
        let o = symmetric_pair(&[400.0, 0.0]);
        let ab = s.alpha_bar(1).unwrap();
        let z = [400.0 * ab.sqrt(), 0.0];
        let lp = o.log_density_t(&s, &z, 1).unwrap();
        assert!(lp.is_finite());
        let pm = o.posterior_mean(&s, &z, 1).unwrap();
        assert!((pm[0] - 400.0).abs() < 1e-8);
    }

    #[test]
    fn score_matches_central_differences() {
        let s = schedule();
        let o = OracleSpec {
            dim: 4,
            ..OracleSpec::default()
        }
        .build()
        .unwrap();
        let mut rng = seeded(1);
        for t in [1, 5, 25, 50] {
            let z: Vec<f64> = standard_normal_vec(&mut rng, 4).iter().map(|v| 2.0 * v).collect();
            let score = o.exact_score(&s, &z, t).unwrap();
            let h = 1e-4;
            for i in 0..4 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let fd = (o.log_density_t(&s, &zp, t).unwrap() - o.log_density_t(&s, &zm, t).unwrap()) / (2.0 * h);
                assert!((fd - score[i]).abs() < 1e-4, "t={t} i={i} fd={fd} score={}", score[i]);
            }
        }
    }

    #[test]
    fn reparameterization_round_trips() {
        let s = schedule();
        let mut rng = seeded(4);
        let z = standard_normal_vec(&mut rng, 5);
        let eps = standard_normal_vec(&mut rng, 5);
        use Parameterization::*;
        let x0 = reparameterize(&z, &eps, &s, 12, Eps, Z0).unwrap();
        let back = reparameterize(&z, &x0, &s, 12, Z0, Eps).unwrap();
        for (a, b) in eps.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        let score = reparameterize(&z, &x0, &s, 12, Z0, Score).unwrap();
        let eps2 = reparameterize(&z, &score, &s, 12, Score, Eps).unwrap();
        for (a, b) in eps.iter().zip(&eps2) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(reparameterize(&z, &eps[..4], &s, 12, Eps, Z0).is_err());
    }

    #[test]
    fn standard_normal_parameterizations_by_hand() {
        let s = schedule();
        let o = ScoreOracle::standard_normal(2);
        let z = [1.5, -0.25];
        let t = 30;
        let ab = s.alpha_bar(t).unwrap();
        let score = o.exact_score(&s, &z, t).unwrap();
        let eps = reparameterize(&z, &score, &s, t, Parameterization::Score, Parameterization::Eps).unwrap();
        let x0 = reparameterize(&z, &eps, &s, t, Parameterization::Eps, Parameterization::Z0).unwrap();
        for i in 0..2 {
            assert!((eps[i] - (1.0 - ab).sqrt() * z[i]).abs() < 1e-14);
            assert!((x0[i] - ab.sqrt() * z[i]).abs() < 1e-12);
        }
        let pm = o.posterior_mean(&s, &z, t).unwrap();
        for i in 0..2 {
            assert!((pm[i] - ab.sqrt() * z[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn posterior_mean_agrees_with_tweedie() {
        let s = schedule();
        let o = OracleSpec::default().build().unwrap();
        let mut rng = seeded(9);
        for t in [1, 2, 10, 30, 50] {
            let z: Vec<f64> = standard_normal_vec(&mut rng, o.dim());
            let score = o.exact_score(&s, &z, t).unwrap();
            let tweedie = reparameterize(&z, &score, &s, t, Parameterization::Score, Parameterization::Z0).unwrap();
            let pm = o.posterior_mean(&s, &z, t).unwrap();
            for (a, b) in tweedie.iter().zip(&pm) {
                assert!((a - b).abs() < 1e-10, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn dimension_and_validity_checks() {
        let s = schedule();
        let o = ScoreOracle::standard_normal(3);
        assert!(o.exact_score(&s, &[0.0; 2], 1).is_err());
        assert!(o.log_density_t(&s, &[0.0; 4], 1).is_err());
        assert!(o.posterior_mean(&s, &[0.0; 3], 51).is_err());
        let bad = vec![Component {
            weight: 0.7,
            mean: vec![0.0],
            var: 1.0,
        }];
        assert!(ScoreOracle::new(1, bad).is_err());
        let bad = vec![Component {
            weight: 1.0,
            mean: vec![0.0],
            var: 0.0,
        }];
        assert!(ScoreOracle::new(1, bad).is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let o = OracleSpec::default().build().unwrap();
        let json = o.to_json().unwrap();
        assert_eq!(ScoreOracle::from_json(&json).unwrap(), o);
        let broken = r#"{"dim":1,"components":[{"weight":0.5,"mean":[0.0],"var":1.0}]}"#;
        assert!(ScoreOracle::from_json(broken).is_err());
    }
}
