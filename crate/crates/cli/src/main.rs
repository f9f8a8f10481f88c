use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qpd_strat::circuits::InstanceSpec;
use qpd_strat::sampling::MeasurementModel;
use qpd_strat_cli::commands::{certify, dp_weights, enumerate, run_experiment};
use qpd_strat_cli::config::{load_instance, Design, ExperimentConfig};

#[derive(Parser)]
#[command(name = "qpd-strat", version, about = "Stratified sampling for product-form QPDs")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InstanceArgs {
    /// Experiment config whose instance is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Instance JSON file or inline JSON object.
    #[arg(long, conflicts_with = "config")]
    instance: Option<String>,
    /// Use the n=3, L=1 open-boundary PEC validation instance.
    #[arg(long, conflicts_with_all = ["config", "instance"])]
    golden: bool,
    /// Override the instance depth.
    #[arg(long = "L")]
    depth: Option<usize>,
}

impl InstanceArgs {
    fn resolve(&self) -> Result<InstanceSpec> {
        let mut spec = if let Some(path) = &self.config {
            ExperimentConfig::load(path)?.instance
        } else if let Some(arg) = &self.instance {
            load_instance(arg)?
        } else if self.golden {
            InstanceSpec::golden()
        } else {
            bail!("one of --config, --instance or --golden is required");
        };
        if let Some(depth) = self.depth {
            spec.depth = depth;
        }
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Counts-stratum weights and their concentration profile.
    DpWeights {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Cumulative-mass threshold for the profile summary.
        #[arg(long, default_value_t = 0.99)]
        q: f64,
        /// Write the weights CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the full concentration profile CSV here.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Exact variances by full enumeration.
    Enumerate {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Comma-separated measurement models.
        #[arg(long, default_value = "oracle,shots:1")]
        models: String,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-stratum counts moments CSV files with this prefix.
        #[arg(long)]
        moments: Option<PathBuf>,
    },
    /// Monte Carlo sweep over depths, designs, models and seeds.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Instance JSON file or inline JSON object (without --config).
        #[arg(long)]
        instance: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "K")]
        k: Option<usize>,
        /// Output CSV; ratios and errors go to sibling files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated designs.
        #[arg(long)]
        designs: Option<String>,
        /// Comma-separated measurement models.
        #[arg(long)]
        models: Option<String>,
        /// Bootstrap resamples.
        #[arg(long = "B")]
        b: Option<usize>,
        /// Single depth override.
        #[arg(long = "L")]
        depth: Option<usize>,
    },
    /// Residual allocation plan with its variance certificate.
    Certify {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long = "K")]
        k: usize,
        /// `counts` or `parity`.
        #[arg(long, default_value = "counts")]
        statistic: String,
        /// Outcome bound; defaults to the QPD 1-norm.
        #[arg(long)]
        bound: Option<f64>,
    },
}

fn parse_models(list: &str) -> Result<Vec<MeasurementModel>> {
    list.split(',').map(|m| m.parse::<MeasurementModel>().map_err(|e| anyhow::anyhow!("{e}"))).collect()
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => write_stdout(text),
    }
}

/// Writes to stdout, treating a closed pipe as success.
fn write_stdout(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.to_string_lossy();
    let stem = stem.strip_suffix(".csv").unwrap_or(&stem);
    PathBuf::from(format!("{stem}.{suffix}.csv"))
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::DpWeights { instance, q, out, profile } => {
            let spec = instance.resolve()?;
            let res = dp_weights(&spec, q)?;
            eprintln!("{}", res.preflight);
            eprintln!(
                "{} of {} strata ({:.4}%) carry {} of the mass",
                res.profile.t_q,
                res.profile.rows.len(),
                100.0 * res.profile.fraction(),
                q
            );
            emit(&res.weights_csv, out.as_deref())?;
            if let Some(path) = profile {
                emit(&res.profile.to_csv(), Some(&path))?;
            }
        }
        Command::Enumerate { instance, models, out, moments } => {
            let spec = instance.resolve()?;
            let report = enumerate(&spec, &parse_models(&models)?)?;
            eprintln!("enumerated {} configurations in {:.3} s", report.configurations, report.runtime);
            emit(&(serde_json::to_string_pretty(&report)? + "\n"), out.as_deref())?;
            if let Some(prefix) = moments {
                for (model, csv) in &report.moments_csv {
                    let path = format!("{}.{}.csv", prefix.display(), model.replace(':', "-"));
                    emit(csv, Some(Path::new(&path)))?;
                }
            }
        }
        Command::Run { config, instance, seed, k, out, designs, models, b, depth } => {
            let mut cfg = match (config, instance) {
                (Some(path), None) => ExperimentConfig::load(&path)?,
                (None, Some(arg)) => ExperimentConfig::new(load_instance(&arg)?),
                (Some(_), Some(_)) => bail!("--config and --instance are exclusive"),
                (None, None) => bail!("run needs --config or --instance"),
            };
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(designs) = designs {
                cfg.designs = designs.split(',').map(str::parse::<Design>).collect::<Result<_>>()?;
            }
            if let Some(models) = models {
                cfg.models = models.split(',').map(|m| m.trim().to_string()).collect();
            }
            if let Some(b) = b {
                cfg.b = b;
            }
            if let Some(depth) = depth {
                cfg.depths = vec![depth];
            }
            if let Some(out) = out {
                cfg.out = Some(out.to_string_lossy().into_owned());
            }
            let result = run_experiment(&cfg)?;
            let out = cfg.out.as_deref().map(Path::new);
            emit(&result.csv(), out)?;
            match out {
                Some(path) => emit(&result.ratios_csv(), Some(&sibling(path, "ratios")))?,
                None => eprint!("{}", result.ratios_csv()),
            }
            if !result.errors.is_empty() {
                match out {
                    Some(path) => emit(&result.errors_csv(), Some(&sibling(path, "errors")))?,
                    None => eprint!("{}", result.errors_csv()),
                }
                eprintln!("{} cell(s) failed", result.errors.len());
                return Ok(false);
            }
        }
        Command::Certify { instance, k, statistic, bound } => {
            let spec = instance.resolve()?;
            let cert = certify(&spec, k, &statistic, bound)?;
            write_stdout(&(serde_json::to_string_pretty(&cert)? + "\n"))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
