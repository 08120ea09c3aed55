use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emccd_pnr::correlation::Method;
use emccd_pnr_cli::commands::{self, CountInputs};
use emccd_pnr_cli::config::PipelineConfig;
use emccd_pnr_cli::error::{CliError, Result};
use emccd_pnr_cli::reproduce::{self, Scale};
use log::{error, info};

#[derive(Parser)]
#[command(name = "emccd-pnr", version, about = "EMCCD photon-number-resolving analysis pipeline")]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Dotted-path override such as `camera.width=64`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CountArgs {
    /// Correction image from `calibrate`.
    #[arg(long)]
    correction: PathBuf,
    /// Intensity map from `fit-photons`.
    #[arg(long)]
    intensity: PathBuf,
    /// Noise fit from `calibrate`; the config's noise section otherwise.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Mean photons per frame.
    #[arg(long, conflicts_with = "photon_fit")]
    mu_f: Option<f64>,
    /// Take mu_f from a `fit-photons` result.
    #[arg(long)]
    photon_fit: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a frame stack from the configured source.
    Simulate,
    /// Correction image and noise fit from a dark stack.
    Calibrate { dark: PathBuf },
    /// Intensity map and mu_f fit of an illuminated stack.
    FitPhotons {
        stack: PathBuf,
        #[arg(long)]
        correction: PathBuf,
        #[arg(long)]
        noise: Option<PathBuf>,
    },
    /// Photon-number frames and the threshold map.
    Count {
        stack: PathBuf,
        #[command(flatten)]
        inputs: CountArgs,
        /// kpT or <n>sigmaT; the cutoff's own photon range when absent.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Correlation maps and the SNR table.
    Correlate {
        /// Photon-counted stack, or a raw stack with the counting inputs.
        stack: PathBuf,
        #[arg(long)]
        correction: Option<PathBuf>,
        #[arg(long)]
        intensity: Option<PathBuf>,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        mu_f: Option<f64>,
        #[arg(long)]
        photon_fit: Option<PathBuf>,
        /// One method instead of `analysis.methods`.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Every acceptance metric in one run, written to summary.json.
    Reproduce {
        /// Run at the sizes the criteria are stated at.
        #[arg(long)]
        full: bool,
    },
}

fn init_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("--threads: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate => {
            for p in commands::simulate(&cfg, out)? {
                info!("wrote {}", p.display());
            }
        }
        Command::Calibrate { dark } => {
            let cal = commands::calibrate(&cfg, &dark, out)?;
            info!("noise fit: {:?}", cal.noise.params);
        }
        Command::FitPhotons { stack, correction, noise } => {
            let fit = commands::fit_photons(&cfg, &stack, &correction, noise.as_deref(), out)?;
            info!("mu_f = {:.3}, p_c = {:.6}", fit.result.mu_f, fit.result.p_c);
        }
        Command::Count { stack, inputs, method } => {
            let mu_f = commands::mu_f_of(inputs.mu_f, inputs.photon_fit.as_deref())?;
            let count_inputs = CountInputs {
                correction: &inputs.correction,
                intensity: &inputs.intensity,
                noise: inputs.noise.as_deref(),
                mu_f,
            };
            let p = commands::count(&cfg, &stack, &count_inputs, method, out)?;
            info!("wrote {}", p.display());
        }
        Command::Correlate {
            stack,
            correction,
            intensity,
            noise,
            mu_f,
            photon_fit,
            method,
        } => {
            let result = match (correction, intensity) {
                (Some(correction), Some(intensity)) => {
                    let mu_f = commands::mu_f_of(mu_f, photon_fit.as_deref())?;
                    let inputs = CountInputs {
                        correction: &correction,
                        intensity: &intensity,
                        noise: noise.as_deref(),
                        mu_f,
                    };
                    commands::correlate(&cfg, &stack, Some(&inputs), method, out)?
                }
                (None, None) => commands::correlate(&cfg, &stack, None, method, out)?,
                _ => return Err(CliError::config("--correction and --intensity go together")),
            };
            for r in &result.rows {
                info!("{} frames, {}: SNR {:.3}", r.n_frames, r.method, r.snr);
            }
        }
        Command::Reproduce { full } => {
            let scale = if full { Scale::FULL } else { Scale::DESK };
            let summary = reproduce::reproduce(out, cfg.seed, &scale)?;
            for c in &summary.criteria {
                println!("{}", c.line());
            }
            info!("wrote {}", out.join(reproduce::SUMMARY_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMCCD_PNR_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
