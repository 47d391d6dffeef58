//! Detection statistics, parameter sweeps and the experiment matrix.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{apply_attack, average_forgery, imprint_forgery, imprint_residual, AttackContext, AttackSpec};
use crate::codec::{bit_accuracy, decode_message, detection_stat, encode_message, make_codebook, CodeBook, Message};
use crate::error::{check_len, invalid, Error, Result};
use crate::injection::{make_preset, InjectionConfig, Preset, Window};
use crate::oracle::{OracleSpec, ScoreOracle};
use crate::rng::{derive_seed, seeded};
use crate::sampler::{sample, SamplerKind, Trajectory};
use crate::schedule::{NoiseSchedule, ScheduleSpec};
use crate::vae::{LinearVAE, VaeSpec};

/// Reported when two images are identical.
pub const PSNR_CAP: f64 = 99.0;
const PIXEL_RANGE: f64 = 2.0;

pub fn psnr(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x.len(), y.len())?;
    let mse = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (PIXEL_RANGE * PIXEL_RANGE / mse).log10()).min(PSNR_CAP))
}

/// Empirical `(1 − fpr)` quantile of null statistics. A sample is flagged
/// when its statistic is strictly above the threshold.
pub fn calibrate_threshold(clean_stats: &[f64], fpr_target: f64) -> Result<f64> {
    if !(fpr_target > 0.0 && fpr_target < 1.0) {
        return invalid(format!("target false-positive rate {fpr_target} outside (0, 1)"));
    }
    let needed = (1.0 / fpr_target).ceil() as usize;
    if clean_stats.len() < needed {
        return Err(Error::InsufficientData(format!(
            "calibrating at FPR {fpr_target} needs at least {needed} clean statistics, got {}",
            clean_stats.len()
        )));
    }
    if clean_stats.iter().any(|v| v.is_nan()) {
        return invalid("clean statistics contain NaN");
    }
    let mut sorted = clean_stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (((1.0 - fpr_target) * n as f64) - 1e-9).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

pub fn tpr_at_fpr(wm_stats: &[f64], threshold: f64) -> Result<f64> {
    if wm_stats.is_empty() {
        return Err(Error::InsufficientData("no watermarked statistics".into()));
    }
    Ok(wm_stats.iter().filter(|v| **v > threshold).count() as f64 / wm_stats.len() as f64)
}

/// Fraction of null statistics at or below `stat`.
pub fn null_percentile(clean_stats: &[f64], stat: f64) -> f64 {
    if clean_stats.is_empty() {
        return f64::NAN;
    }
    clean_stats.iter().filter(|v| **v <= stat).count() as f64 / clean_stats.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub t: usize,
    pub gamma: f64,
    pub eps_norm_q: f64,
    pub eps_norm_r: f64,
}

/// Per-step modulation coefficient (λ = 1) next to the noise-prediction norms
/// of two injected runs.
pub fn diagnostics(s: &NoiseSchedule, traj_q: &Trajectory, traj_r: &Trajectory) -> Result<Vec<DiagnosticRow>> {
    let ts = |tr: &Trajectory| tr.states.iter().map(|st| st.t).collect::<Vec<_>>();
    if ts(traj_q) != ts(traj_r) || traj_q.eps_norms.len() != traj_r.eps_norms.len() {
        return invalid("trajectories use different step grids");
    }
    if traj_q.states.first().map(|st| st.t) > Some(s.steps()) {
        return invalid("trajectories do not belong to this schedule");
    }
    traj_q
        .eps_norms
        .iter()
        .zip(&traj_r.eps_norms)
        .zip(&traj_q.states)
        .map(|((q, r), st)| {
            Ok(DiagnosticRow {
                t: st.t,
                gamma: s.modulation_coeff(st.t, 1.0)?,
                eps_norm_q: *q,
                eps_norm_r: *r,
            })
        })
        .collect()
}

pub fn write_diagnostics_csv<W: Write>(rows: &[DiagnosticRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,gamma,eps_norm_Q,eps_norm_R")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.12e},{:.12e},{:.12e}",
            r.t, r.gamma, r.eps_norm_q, r.eps_norm_r
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecSpec {
    pub bits: usize,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for CodecSpec {
    fn default() -> Self {
        Self {
            bits: 32,
            amplitude: 0.75,
            seed: 1,
        }
    }
}

/// Window and strength used for [`Preset::Custom`] cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CustomInjection {
    pub window: Window,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schedule: ScheduleSpec,
    /// Sampling steps; defaults to the schedule length.
    pub steps: Option<usize>,
    pub oracle: OracleSpec,
    pub vae: VaeSpec,
    pub codec: CodecSpec,
    /// Hex payload; drawn from the master seed when absent.
    pub message: Option<String>,
    pub samplers: Vec<SamplerKind>,
    pub presets: Vec<Preset>,
    pub custom: Option<CustomInjection>,
    pub attacks: Vec<AttackSpec>,
    pub n_seeds: usize,
    pub fpr_target: f64,
    pub master_seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dim = 64;
        Self {
            schedule: ScheduleSpec::default(),
            steps: None,
            oracle: OracleSpec {
                dim,
                ..OracleSpec::default()
            },
            vae: VaeSpec::for_latent_dim(dim, 2),
            codec: CodecSpec::default(),
            message: None,
            samplers: SamplerKind::all_default(),
            presets: vec![Preset::Q, Preset::R],
            custom: None,
            attacks: vec![AttackSpec::None, AttackSpec::noise(0.25), AttackSpec::rinse(2)],
            n_seeds: 200,
            fpr_target: 0.01,
            master_seed: 0,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds < 2 {
            return invalid(format!("n_seeds must be at least 2, got {}", self.n_seeds));
        }
        if !(self.fpr_target > 0.0 && self.fpr_target < 1.0) {
            return invalid(format!("fpr_target {} outside (0, 1)", self.fpr_target));
        }
        if self.samplers.is_empty() || self.presets.is_empty() {
            return invalid("need at least one sampler and one preset");
        }
        if self.oracle.dim != self.vae.latent_dim {
            return invalid(format!(
                "oracle dimension {} differs from autoencoder latent dimension {}",
                self.oracle.dim, self.vae.latent_dim
            ));
        }
        if self.presets.contains(&Preset::Custom) && self.custom.is_none() {
            return invalid("custom preset requested without a custom window and strength");
        }
        for k in &self.samplers {
            k.validate()?;
        }
        for a in &self.attacks {
            a.validate()?;
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Attack list with the empty case mapped to a single unattacked cell.
    pub fn effective_attacks(&self) -> Vec<AttackSpec> {
        if self.attacks.is_empty() {
            vec![AttackSpec::None]
        } else {
            self.attacks.clone()
        }
    }
}

/// Paired clean and watermarked outputs of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedImage {
    pub z_clean: Vec<f64>,
    pub z_wm: Vec<f64>,
    /// Both decodes share one reconstruction-noise draw.
    pub x_clean: Vec<f64>,
    pub x_wm: Vec<f64>,
}

const TAG_SAMPLE: u64 = 1;
const TAG_DECODE: u64 = 2;
const TAG_ATTACK: u64 = 3;
const TAG_MESSAGE: u64 = 4;

/// Built components of an experiment.
#[derive(Debug, Clone)]
pub struct Lab {
    pub config: ExperimentConfig,
    pub schedule: NoiseSchedule,
    pub oracle: ScoreOracle,
    pub vae: LinearVAE,
    pub codebook: CodeBook,
    pub message: Message,
    pub delta: Vec<f64>,
}

impl Lab {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule.build()?;
        let oracle = config.oracle.build()?;
        let vae = config.vae.build()?;
        let codebook = make_codebook(
            config.oracle.dim,
            config.codec.bits,
            config.codec.amplitude,
            config.codec.seed,
        )?;
        let message = match &config.message {
            Some(hex) => Message::from_hex(hex, config.codec.bits)?,
            None => Message::random(
                &mut seeded(derive_seed(config.master_seed, &[TAG_MESSAGE])),
                config.codec.bits,
            ),
        };
        let delta = encode_message(&message, &codebook)?;
        Ok(Self {
            config,
            schedule,
            oracle,
            vae,
            codebook,
            message,
            delta,
        })
    }

    pub fn steps(&self) -> usize {
        self.config.steps.unwrap_or(self.schedule.steps())
    }

    pub fn injection(&self, preset: Preset) -> Result<InjectionConfig> {
        match preset {
            Preset::Custom => {
                let c = self
                    .config
                    .custom
                    .ok_or_else(|| Error::InvalidParameter("no custom injection configured".into()))?;
                InjectionConfig::custom(self.delta.clone(), c.lambda, c.window)
            }
            p => make_preset(p, &self.schedule, self.delta.clone()),
        }
    }

    fn context(&self) -> AttackContext<'_> {
        AttackContext {
            oracle: &self.oracle,
            schedule: &self.schedule,
            vae: &self.vae,
        }
    }

    /// Seed used for the `i`-th generation. Shared by every cell so that
    /// cells differ only in what they vary.
    pub fn sample_seed(&self, i: u64) -> u64 {
        derive_seed(self.config.master_seed, &[TAG_SAMPLE, i])
    }

    /// Generates the clean and injected samples of seed index `i` and decodes
    /// both with the same reconstruction noise.
    pub fn paired(&self, kind: SamplerKind, cfg: &InjectionConfig, i: u64) -> Result<PairedImage> {
        let seed = self.sample_seed(i);
        let clean = sample(kind, &self.oracle, &self.schedule, self.steps(), None, seed)?;
        let wm = sample(kind, &self.oracle, &self.schedule, self.steps(), Some(cfg), seed)?;
        let noise_seed = derive_seed(self.config.master_seed, &[TAG_DECODE, i]);
        let z_clean = clean.final_latent().to_vec();
        let z_wm = wm.final_latent().to_vec();
        Ok(PairedImage {
            x_clean: self.vae.decode(&z_clean, &mut seeded(noise_seed))?,
            x_wm: self.vae.decode(&z_wm, &mut seeded(noise_seed))?,
            z_clean,
            z_wm,
        })
    }

    /// Bit accuracy and detection statistic of an image.
    pub fn read(&self, x: &[f64]) -> Result<(f64, f64)> {
        let z = self.vae.encode(x)?;
        let decoded = decode_message(&z, &self.codebook)?;
        Ok((
            bit_accuracy(&self.message, &decoded)?,
            detection_stat(&z, &self.message, &self.codebook)?,
        ))
    }

    pub fn attack(&self, x: &[f64], spec: &AttackSpec, seed: u64) -> Result<Vec<f64>> {
        apply_attack(x, spec, &self.context(), seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub sampler: String,
    pub attack: String,
    pub preset: String,
    pub n: usize,
    pub bit_acc_mean: f64,
    pub bit_acc_se: f64,
    pub tpr: f64,
    pub stat_mean: f64,
    pub psnr_mean: f64,
    pub threshold: f64,
}

pub const CSV_HEADER: &str = "sampler,attack,preset,n,bit_acc_mean,bit_acc_se,tpr,stat_mean,psnr_mean";

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.4}",
            r.sampler, r.attack, r.preset, r.n, r.bit_acc_mean, r.bit_acc_se, r.tpr, r.stat_mean, r.psnr_mean
        )?;
    }
    Ok(())
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// What a cell measured before aggregation.
struct CellSamples {
    acc: Vec<f64>,
    wm_stats: Vec<f64>,
    clean_stats: Vec<f64>,
    psnr: Vec<f64>,
}

fn collect<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..n as u64).into_par_iter().map(f).collect()
}

fn measure_cell(lab: &Lab, pairs: &[PairedImage], attack: &AttackSpec, cell: u64) -> Result<CellSamples> {
    let master = lab.config.master_seed;
    let attack_seed = |i: u64, which: u64| derive_seed(master, &[TAG_ATTACK, cell, i, which]);
    let n = pairs.len();
    // (attacked watermarked or forged image, attacked clean image, fidelity reference)
    let images: Vec<(Vec<f64>, Vec<f64>, f64)> = match *attack {
        AttackSpec::AverageForgery { n_pairs } => {
            if n_pairs > n {
                return invalid(format!("average forgery needs {n_pairs} pairs, cell has {n}"));
            }
            // An adversary holds watermarked and unrelated clean images.
            let unpaired: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
                .map(|i| (pairs[i].x_wm.clone(), pairs[(i + 1) % n].x_clean.clone()))
                .collect();
            let est = average_forgery(&unpaired, &lab.vae, n_pairs)?;
            collect(n, |i| {
                let p = &pairs[i as usize];
                let forged = imprint_residual(&p.x_clean, &lab.vae, &est)?;
                Ok((psnr(&forged, &p.x_clean)?, forged, p.x_clean.clone()))
            })?
            .into_iter()
            .map(|(q, f, c)| (f, c, q))
            .collect()
        }
        AttackSpec::ImprintForgery { budget } => collect(n, |i| {
            let p = &pairs[i as usize];
            let out = imprint_forgery(&p.x_clean, &lab.vae, &lab.codebook, &lab.message, budget)?;
            Ok((out.forged, p.x_clean.clone(), out.psnr))
        })?,
        _ => collect(n, |i| {
            let p = &pairs[i as usize];
            Ok((
                lab.attack(&p.x_wm, attack, attack_seed(i, 0))?,
                lab.attack(&p.x_clean, attack, attack_seed(i, 1))?,
                psnr(&p.x_wm, &p.x_clean)?,
            ))
        })?,
    };
    let mut out = CellSamples {
        acc: Vec::with_capacity(n),
        wm_stats: Vec::with_capacity(n),
        clean_stats: Vec::with_capacity(n),
        psnr: Vec::with_capacity(n),
    };
    for (wm, clean, q) in &images {
        let (acc, stat) = lab.read(wm)?;
        out.acc.push(acc);
        out.wm_stats.push(stat);
        out.clean_stats.push(lab.read(clean)?.1);
        out.psnr.push(*q);
    }
    Ok(out)
}

/// Runs every sampler × attack × preset cell, calibrating a threshold per
/// cell on its own clean statistics.
///
/// For forgery attacks the "watermarked" column holds forged clean images, so
/// `tpr` is the rate at which forgeries pass detection and `psnr_mean` the
/// forgery's fidelity to its cover. For all other attacks `psnr_mean`
/// compares the unattacked watermarked and clean images.
pub fn run_suite(config: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let lab = Lab::new(config.clone())?;
    let attacks = config.effective_attacks();
    let mut records = Vec::new();
    let mut cell = 0u64;
    for &kind in &config.samplers {
        for &preset in &config.presets {
            let name = |a: &AttackSpec| format!("sampler={kind} preset={} attack={}", preset.label(), a.label());
            let in_cell = |a: &AttackSpec, e: Error| Error::Cell {
                cell: name(a),
                source: Box::new(e),
            };
            let inj = lab.injection(preset).map_err(|e| in_cell(&attacks[0], e))?;
            let pairs = collect(config.n_seeds, |i| lab.paired(kind, &inj, i)).map_err(|e| in_cell(&attacks[0], e))?;
            for attack in &attacks {
                let m = measure_cell(&lab, &pairs, attack, cell).map_err(|e| in_cell(attack, e))?;
                let threshold =
                    calibrate_threshold(&m.clean_stats, config.fpr_target).map_err(|e| in_cell(attack, e))?;
                let (acc, se) = mean_and_se(&m.acc);
                records.push(MetricsRecord {
                    sampler: kind.to_string(),
                    attack: attack.label(),
                    preset: preset.label().to_string(),
                    n: config.n_seeds,
                    bit_acc_mean: acc,
                    bit_acc_se: se,
                    tpr: tpr_at_fpr(&m.wm_stats, threshold).map_err(|e| in_cell(attack, e))?,
                    stat_mean: mean_and_se(&m.wm_stats).0,
                    psnr_mean: mean_and_se(&m.psnr).0,
                    threshold,
                });
                cell += 1;
            }
        }
    }
    Ok(records)
}

/// Runs the suite and writes its CSV to `config.output` when set.
pub fn run_suite_to_file(config: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let records = run_suite(config)?;
    if let Some(path) = &config.output {
        let io = |source| Error::Io {
            path: path.clone(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io)?;
        write_metrics_csv(&records, std::io::BufWriter::new(file)).map_err(io)?;
    }
    Ok(records)
}

/// Whether sweep windows count from the first reverse iteration instead of
/// naming `t` directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowOrientation {
    #[default]
    Timestep,
    Iteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Window as given.
    pub window: Window,
    /// Window on `t` after reorientation.
    pub applied: Window,
    pub lambda: f64,
    pub psnr: f64,
    pub tpr: f64,
    pub bit_acc: f64,
}

/// Window × strength grid on the first configured sampler. PSNR compares the
/// decoded watermarked sample with its clean twin.
pub fn sweep_ablation(
    grid: &[(Window, f64)],
    config: &ExperimentConfig,
    orientation: WindowOrientation,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return invalid("sweep grid is empty");
    }
    let lab = Lab::new(config.clone())?;
    let kind = config.samplers[0];
    let steps = lab.schedule.steps();
    // shared clean null: injection-free runs of the same seeds
    let null_inj = InjectionConfig::custom(lab.delta.clone(), 0.0, Window::full(steps))?;
    let null: Vec<f64> = collect(config.n_seeds, |i| {
        let p = lab.paired(kind, &null_inj, i)?;
        Ok(lab.read(&p.x_clean)?.1)
    })?;
    let threshold = calibrate_threshold(&null, config.fpr_target)?;
    grid.iter()
        .map(|&(window, lambda)| {
            let applied = match orientation {
                WindowOrientation::Timestep => window,
                WindowOrientation::Iteration => window.from_iteration_order(steps)?,
            };
            let cell = || format!("window={window} lambda={lambda}");
            let wrap = |e| Error::Cell {
                cell: cell(),
                source: Box::new(e),
            };
            let inj = InjectionConfig::custom(lab.delta.clone(), lambda, applied).map_err(wrap)?;
            inj.validate_for(&lab.schedule).map_err(wrap)?;
            let rows: Vec<(f64, f64, f64)> = collect(config.n_seeds, |i| {
                let p = lab.paired(kind, &inj, i)?;
                let (acc, stat) = lab.read(&p.x_wm)?;
                Ok((psnr(&p.x_wm, &p.x_clean)?, acc, stat))
            })
            .map_err(wrap)?;
            let stats: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let n = rows.len() as f64;
            Ok(SweepRow {
                window,
                applied,
                lambda,
                psnr: rows.iter().map(|r| r.0).sum::<f64>() / n,
                bit_acc: rows.iter().map(|r| r.1).sum::<f64>() / n,
                tpr: tpr_at_fpr(&stats, threshold)?,
            })
        })
        .collect()
}

/// The windows `[1, T]`, `[T/2, T]`, `[0.4T, 0.9T]` at λ ∈ {0.5, 1}.
pub fn default_sweep_grid(steps: usize) -> Result<Vec<(Window, f64)>> {
    let at = |f: f64| ((f * steps as f64).round() as usize).clamp(1, steps);
    let windows = [
        Window::full(steps),
        Window::new(at(0.5), steps)?,
        Window::new(at(0.4), at(0.9))?,
    ];
    Ok(windows.iter().flat_map(|w| [(*w, 0.5), (*w, 1.0)]).collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "window,t_start,t_end,lambda,psnr,tpr,bit_acc")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.4},{:.6},{:.6}",
            r.window, r.applied.start, r.applied.end, r.lambda, r.psnr, r.tpr, r.bit_acc
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub threshold: f64,
    pub tpr: f64,
    pub calibration_fpr: f64,
    pub held_out_fpr: f64,
    pub n_calibration: usize,
    pub n_watermarked: usize,
    pub n_held_out: usize,
}

/// Calibrates on `n` clean samples, then measures TPR on `n` watermarked and
/// FPR on `n` further clean samples, all from disjoint seeds.
pub fn detection_protocol(
    config: &ExperimentConfig,
    kind: SamplerKind,
    preset: Preset,
    n: usize,
) -> Result<DetectionReport> {
    let lab = Lab::new(config.clone())?;
    let inj = lab.injection(preset)?;
    let stats = |offset: u64, watermarked: bool| -> Result<Vec<f64>> {
        collect(n, |i| {
            let p = lab.paired(kind, &inj, offset + i)?;
            Ok(lab.read(if watermarked { &p.x_wm } else { &p.x_clean })?.1)
        })
    };
    let n64 = n as u64;
    let calibration = stats(0, false)?;
    let watermarked = stats(n64, true)?;
    let held_out = stats(2 * n64, false)?;
    let threshold = calibrate_threshold(&calibration, config.fpr_target)?;
    Ok(DetectionReport {
        threshold,
        tpr: tpr_at_fpr(&watermarked, threshold)?,
        calibration_fpr: tpr_at_fpr(&calibration, threshold)?,
        held_out_fpr: tpr_at_fpr(&held_out, threshold)?,
        n_calibration: n,
        n_watermarked: n,
        n_held_out: n,
    })
}
