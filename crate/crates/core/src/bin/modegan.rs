use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use modegan::experiment::{self, ENCODER_FILE};
use modegan::{AutoEncoder, Benchmark, Error, ExperimentConfig, Result};

/// Mode-penalty GAN experiments on mixture-of-Gaussians benchmarks.
///
/// JSD values are reported in nats (natural log, upper bound ln 2).
#[derive(Parser)]
#[command(name = "modegan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Benchmark when no config file is given (ring8, grid25, random25, cube27).
    #[arg(long)]
    benchmark: Option<Benchmark>,
    /// Seed base; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long, value_name = "DIR", env = "MODEGAN_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    /// Maximum runs trained concurrently.
    #[arg(long)]
    parallel: Option<usize>,
    /// Overrides gan.lambda_p (0 trains the vanilla baseline).
    #[arg(long = "lambda-p", value_name = "REAL")]
    lambda_p: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain and freeze the autoencoder.
    PretrainAe(Common),
    /// Train `runs` seeds and write the batch report.
    Train {
        #[command(flatten)]
        common: Common,
        /// Frozen encoder checkpoint; pretrained on the fly when absent.
        #[arg(long, value_name = "PATH")]
        encoder: Option<PathBuf>,
    },
    /// Evaluate a sample dump (CSV with header) against the benchmark.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        samples: PathBuf,
    },
    /// Pretrain and train every listed benchmark, then write summary.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated benchmark list (default: all four).
        #[arg(long, value_delimiter = ',')]
        benchmarks: Vec<Benchmark>,
    },
    /// Paired runs with live penalty weights vs weights frozen at 1.
    AblateWeights {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        encoder: Option<PathBuf>,
    },
    /// Print the mode bank (encodings and weights) a run seed would use.
    DumpBank {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        encoder: Option<PathBuf>,
    },
}

fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, c.benchmark) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(b)) => ExperimentConfig::new(b),
        (None, None) => {
            return Err(Error::Usage(
                "either --config or --benchmark is required".into(),
            ))
        }
    };
    if let (Some(_), Some(b)) = (&c.config, c.benchmark) {
        cfg.benchmark = b;
    }
    if let Some(s) = c.seed {
        cfg.seed_base = s;
    }
    if let Some(r) = c.runs {
        cfg.runs = r;
    }
    if let Some(p) = c.parallel {
        cfg.parallel = p;
    }
    if let Some(l) = c.lambda_p {
        cfg.gan.lambda_p = l;
    }
    if c.out.is_some() {
        cfg.out_dir = c.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_root(cfg: &ExperimentConfig) -> PathBuf {
    experiment::resolve_out_root(cfg.out_dir.as_deref())
}

/// Explicit checkpoint, else the benchmark's default one, pretraining it if needed.
fn obtain_encoder(cfg: &ExperimentConfig, explicit: Option<&Path>) -> Result<AutoEncoder> {
    if let Some(path) = explicit {
        return experiment::load_encoder(path, cfg);
    }
    let dir = experiment::benchmark_dir(&out_root(cfg), cfg.benchmark);
    let path = dir.join(ENCODER_FILE);
    if !path.exists() {
        log::info!("no encoder at {}, pretraining one", path.display());
        experiment::cmd_pretrain_ae(cfg, &dir)?;
    }
    experiment::load_encoder(&path, cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    let out_err = |e: std::io::Error| Error::io(Path::new("<stdout>"), e);
    match cli.command {
        Command::PretrainAe(c) => {
            let cfg = resolve_config(&c)?;
            let dir = experiment::benchmark_dir(&out_root(&cfg), cfg.benchmark);
            let (ckpt, report) = experiment::cmd_pretrain_ae(&cfg, &dir)?;
            writeln!(
                stdout,
                "encoder {} final_mse {:.6e}",
                ckpt.display(),
                report.final_loss().unwrap_or(f64::NAN)
            )
            .map_err(out_err)?;
        }
        Command::Train { common, encoder } => {
            let cfg = resolve_config(&common)?;
            let ae = obtain_encoder(&cfg, encoder.as_deref())?;
            let batch = experiment::cmd_train(&cfg, Arc::new(ae), &out_root(&cfg))?;
            writeln!(stdout, "benchmark,seed,modes,hqs,jsd").map_err(out_err)?;
            for r in &batch.runs {
                if let Some(rep) = r.final_report() {
                    writeln!(
                        stdout,
                        "{},{},{},{:.4},{:.4}",
                        cfg.benchmark, r.seed, rep.modes_found, rep.hqs, rep.jsd
                    )
                    .map_err(out_err)?;
                }
            }
        }
        Command::Eval { common, samples } => {
            let cfg = resolve_config(&common)?;
            let rep = experiment::cmd_eval(&cfg, &samples)?;
            writeln!(stdout, "benchmark,modes,hqs,jsd").map_err(out_err)?;
            writeln!(
                stdout,
                "{},{},{},{}",
                cfg.benchmark, rep.modes_found, rep.hqs, rep.jsd
            )
            .map_err(out_err)?;
        }
        Command::Sweep { common, benchmarks } => {
            let cfg = resolve_config(&common)?;
            let list = if benchmarks.is_empty() {
                Benchmark::ALL.to_vec()
            } else {
                benchmarks
            };
            let root = out_root(&cfg);
            experiment::cmd_sweep(&cfg, &list, &root)?;
            writeln!(stdout, "summary {}", root.join("summary.csv").display()).map_err(out_err)?;
        }
        Command::AblateWeights { common, encoder } => {
            let cfg = resolve_config(&common)?;
            let ae = obtain_encoder(&cfg, encoder.as_deref())?;
            let ab = experiment::cmd_ablate_weights(&cfg, Arc::new(ae), &out_root(&cfg))?;
            let (on, off) = ab.median_steps();
            writeln!(
                stdout,
                "comparison {} median_on {} median_off {}",
                ab.comparison_csv.display(),
                on,
                off
            )
            .map_err(out_err)?;
        }
        Command::DumpBank { common, encoder } => {
            let cfg = resolve_config(&common)?;
            let ae = obtain_encoder(&cfg, encoder.as_deref())?;
            experiment::cmd_dump_bank(&cfg, &ae, cfg.seed_base, &mut stdout)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version go to stdout with status 0; every other parse
            // failure is a usage error.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
