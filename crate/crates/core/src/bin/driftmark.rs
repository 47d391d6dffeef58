use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use driftmark::attacks::AttackSpec;
use driftmark::codec::{bit_accuracy, decode_message, detection_stat};
use driftmark::eval::{
    calibrate_threshold, default_sweep_grid, detection_protocol, diagnostics, null_percentile, run_suite,
    sweep_ablation, write_diagnostics_csv, write_metrics_csv, write_sweep_csv, CustomInjection, ExperimentConfig, Lab,
    WindowOrientation,
};
use driftmark::injection::{InjectionConfig, Preset, Window};
use driftmark::sampler::{sample, SamplerKind};
use driftmark::{Error, Result};

#[derive(Parser)]
#[command(name = "driftmark", version, about = "Drift-correction watermarking laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a watermarked toy image
    Embed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inject: Inject,
        /// Payload as hex (defaults to the configured message)
        #[arg(long)]
        message: Option<String>,
        /// Also write the watermarked trajectory as CSV
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Decode the payload from an image and report the detection statistic
    Extract {
        #[command(flatten)]
        common: Common,
        /// Image file (one value per line, or a JSON array)
        #[arg(long)]
        input: PathBuf,
        /// Expected payload as hex
        #[arg(long)]
        message: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Apply a distortion or regeneration attack to an image
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// e.g. `noise:0.25`, `quantize:16`, `rinse:2`, or a JSON spec
        #[arg(long)]
        attack: AttackSpec,
    },
    /// Run the sampler × attack × preset matrix
    Suite {
        #[command(flatten)]
        common: Common,
        /// Restrict to these samplers
        #[arg(long)]
        sampler: Vec<SamplerKind>,
        /// Restrict to these presets
        #[arg(long)]
        preset: Vec<Preset>,
        #[arg(long)]
        n_seeds: Option<usize>,
    },
    /// Window × strength ablation
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Windows `a:b` (defaults to [1,T], [T/2,T], [0.4T,0.9T])
        #[arg(long)]
        window: Vec<Window>,
        /// Strengths (defaults to 0.5 and 1.0)
        #[arg(long)]
        lambda: Vec<f64>,
        #[arg(long)]
        sampler: Option<SamplerKind>,
        #[arg(long, value_enum, default_value = "timestep")]
        orientation: Orientation,
        #[arg(long)]
        n_seeds: Option<usize>,
    },
    /// Per-step modulation coefficient and noise-prediction norms of Q and R runs
    Diagnostics {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ddim")]
        sampler: SamplerKind,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Detection threshold from clean statistics or a fresh calibration run
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Clean statistics, one per line; without it a calibration run is made
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        fpr: Option<f64>,
        /// Samples in each of the calibration, watermarked and held-out sets
        #[arg(long, default_value_t = 350)]
        n: usize,
        #[command(flatten)]
        inject: Inject,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit JSON instead of CSV
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct Inject {
    #[arg(long, default_value = "R")]
    preset: Preset,
    #[arg(long, default_value = "ddim")]
    sampler: SamplerKind,
    /// Sampling steps
    #[arg(long)]
    steps: Option<usize>,
    /// Override the preset strength
    #[arg(long)]
    lambda: Option<f64>,
    /// Override the preset window, `a:b` on t
    #[arg(long)]
    window: Option<Window>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Orientation {
    Timestep,
    Iteration,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

/// For whole-experiment commands `--seed` replaces the master seed.
fn load_experiment(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn injection(lab: &Lab, inject: &Inject) -> Result<InjectionConfig> {
    let base = lab.injection(inject.preset)?;
    if inject.lambda.is_none() && inject.window.is_none() {
        return Ok(base);
    }
    InjectionConfig::custom(
        base.delta().to_vec(),
        inject.lambda.unwrap_or(base.lambda()),
        inject.window.unwrap_or(base.window()),
    )
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn emit(out: &Option<PathBuf>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let mut file = io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
            write(&mut file).and_then(|_| file.flush()).map_err(io_err(path))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            match write(&mut lock).and_then(|_| lock.flush()) {
                // the reader went away (e.g. `| head`)
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
                r => r.map_err(io_err(Path::new("<stdout>"))),
            }
        }
    }
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    emit(out, |w| writeln!(w, "{text}"))
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && *l != "value")
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| Error::InvalidParameter(format!("{}: `{l}`: {e}", path.display())))
        })
        .collect()
}

fn write_vector(w: &mut dyn Write, v: &[f64]) -> io::Result<()> {
    writeln!(w, "value")?;
    for x in v {
        writeln!(w, "{x:e}")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Embedded<'a> {
    seed: u64,
    sampler: String,
    window: String,
    lambda: f64,
    message: String,
    latent: &'a [f64],
    image: &'a [f64],
}

#[derive(Serialize)]
struct Extracted {
    message: String,
    bit_acc: Option<f64>,
    detection_stat: f64,
    detected: Option<bool>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Embed {
            common,
            inject,
            message,
            trajectory,
        } => {
            let mut cfg = load_config(&common)?;
            if message.is_some() {
                cfg.message = message;
            }
            cfg.steps = inject.steps.or(cfg.steps);
            let lab = Lab::new(cfg)?;
            let inj = injection(&lab, &inject)?;
            let seed = common.seed.unwrap_or(0);
            let pair = lab.paired(inject.sampler, &inj, seed)?;
            if let Some(path) = &trajectory {
                let tr = sample(
                    inject.sampler,
                    &lab.oracle,
                    &lab.schedule,
                    lab.steps(),
                    Some(&inj),
                    lab.sample_seed(seed),
                )?;
                emit(&Some(path.clone()), |w| tr.write_csv(w, true))?;
            }
            if common.json {
                emit_json(
                    &common.out,
                    &Embedded {
                        seed,
                        sampler: inject.sampler.to_string(),
                        window: inj.window().to_string(),
                        lambda: inj.lambda(),
                        message: lab.message.to_hex(),
                        latent: &pair.z_wm,
                        image: &pair.x_wm,
                    },
                )
            } else {
                emit(&common.out, |w| write_vector(w, &pair.x_wm))
            }
        }
        Command::Extract {
            common,
            input,
            message,
            threshold,
        } => {
            let mut cfg = load_config(&common)?;
            if message.is_some() {
                cfg.message = message;
            }
            let lab = Lab::new(cfg)?;
            let x = read_vector(&input)?;
            let z = lab.vae.encode(&x)?;
            let decoded = decode_message(&z, &lab.codebook)?;
            let stat = detection_stat(&z, &lab.message, &lab.codebook)?;
            let report = Extracted {
                message: decoded.to_hex(),
                bit_acc: Some(bit_accuracy(&lab.message, &decoded)?),
                detection_stat: stat,
                detected: threshold.map(|t| stat > t),
            };
            if common.json {
                return emit_json(&common.out, &report);
            }
            emit(&common.out, |w| {
                writeln!(w, "message,bit_acc,detection_stat,detected")?;
                let detected = report.detected.map(|d| d.to_string()).unwrap_or_default();
                writeln!(
                    w,
                    "{},{:.6},{:.6},{detected}",
                    report.message,
                    report.bit_acc.unwrap_or(f64::NAN),
                    report.detection_stat
                )
            })
        }
        Command::Attack { common, input, attack } => {
            let lab = Lab::new(load_config(&common)?)?;
            let x = read_vector(&input)?;
            let y = lab.attack(&x, &attack, common.seed.unwrap_or(0))?;
            if common.json {
                emit_json(&common.out, &y)
            } else {
                emit(&common.out, |w| write_vector(w, &y))
            }
        }
        Command::Suite {
            common,
            sampler,
            preset,
            n_seeds,
        } => {
            let mut cfg = load_experiment(&common)?;
            if !sampler.is_empty() {
                cfg.samplers = sampler;
            }
            if !preset.is_empty() {
                cfg.presets = preset;
            }
            cfg.n_seeds = n_seeds.unwrap_or(cfg.n_seeds);
            let out = common.out.clone().or(cfg.output.clone());
            let records = run_suite(&cfg)?;
            if common.json {
                emit_json(&out, &records)
            } else {
                emit(&out, |w| write_metrics_csv(&records, w))
            }
        }
        Command::Sweep {
            common,
            window,
            lambda,
            sampler,
            orientation,
            n_seeds,
        } => {
            let mut cfg = load_experiment(&common)?;
            if let Some(k) = sampler {
                cfg.samplers = vec![k];
            }
            cfg.n_seeds = n_seeds.unwrap_or(cfg.n_seeds);
            let steps = cfg.schedule.steps;
            let grid: Vec<(Window, f64)> = if window.is_empty() && lambda.is_empty() {
                default_sweep_grid(steps)?
            } else {
                let windows = if window.is_empty() {
                    vec![Window::full(steps)]
                } else {
                    window
                };
                let lambdas = if lambda.is_empty() { vec![0.5, 1.0] } else { lambda };
                windows
                    .iter()
                    .flat_map(|w| lambdas.iter().map(move |l| (*w, *l)))
                    .collect()
            };
            let orientation = match orientation {
                Orientation::Timestep => WindowOrientation::Timestep,
                Orientation::Iteration => WindowOrientation::Iteration,
            };
            let rows = sweep_ablation(&grid, &cfg, orientation)?;
            if common.json {
                emit_json(&common.out, &rows)
            } else {
                emit(&common.out, |w| write_sweep_csv(&rows, w))
            }
        }
        Command::Diagnostics { common, sampler, steps } => {
            let lab = Lab::new(load_config(&common)?)?;
            let steps = steps.unwrap_or(lab.steps());
            let seed = lab.sample_seed(common.seed.unwrap_or(0));
            let run = |preset| -> Result<_> {
                let inj = lab.injection(preset)?;
                sample(sampler, &lab.oracle, &lab.schedule, steps, Some(&inj), seed)
            };
            let rows = diagnostics(&lab.schedule, &run(Preset::Q)?, &run(Preset::R)?)?;
            if common.json {
                emit_json(&common.out, &rows)
            } else {
                emit(&common.out, |w| write_diagnostics_csv(&rows, w))
            }
        }
        Command::Calibrate {
            common,
            stats,
            fpr,
            n,
            inject,
        } => {
            let mut cfg = load_experiment(&common)?;
            cfg.fpr_target = fpr.unwrap_or(cfg.fpr_target);
            if let Some(path) = stats {
                let clean = read_vector(&path)?;
                let threshold = calibrate_threshold(&clean, cfg.fpr_target)?;
                let realized = 1.0 - null_percentile(&clean, threshold);
                if common.json {
                    return emit_json(
                        &common.out,
                        &serde_json::json!({ "threshold": threshold, "calibration_fpr": realized, "n": clean.len() }),
                    );
                }
                return emit(&common.out, |w| {
                    writeln!(w, "threshold,calibration_fpr,n")?;
                    writeln!(w, "{threshold:.6},{realized:.6},{}", clean.len())
                });
            }
            cfg.steps = inject.steps.or(cfg.steps);
            let mut preset = inject.preset;
            if inject.lambda.is_some() || inject.window.is_some() {
                let inj = injection(&Lab::new(cfg.clone())?, &inject)?;
                cfg.custom = Some(CustomInjection {
                    window: inj.window(),
                    lambda: inj.lambda(),
                });
                preset = Preset::Custom;
            }
            let report = detection_protocol(&cfg, inject.sampler, preset, n)?;
            if common.json {
                return emit_json(&common.out, &report);
            }
            emit(&common.out, |w| {
                writeln!(w, "threshold,tpr,calibration_fpr,held_out_fpr,n")?;
                writeln!(
                    w,
                    "{:.6},{:.6},{:.6},{:.6},{}",
                    report.threshold, report.tpr, report.calibration_fpr, report.held_out_fpr, n
                )
            })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("driftmark: {e}");
            ExitCode::FAILURE
        }
    }
}
