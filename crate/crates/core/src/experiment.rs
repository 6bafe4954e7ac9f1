//! Experiment runner behind the CLI: pretraining, training batches,
//! standalone evaluation, sweeps, the penalty-weight ablation and bank dumps.
//!
//! Output layout under the output root:
//!
//! ```text
//! <root>/<benchmark>/encoder.ckpt, ae_loss.csv, config.txt
//! <root>/<benchmark>/<label>/seed_<seed>/config.txt, diagnostics.csv,
//!     metrics_long.csv, report.csv, samples.csv, checkpoints/
//! <root>/<benchmark>/<label>/report.csv          (one row per run + mean/std)
//! <root>/<benchmark>/ablation/comparison.csv     (seed,steps_on,steps_off)
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::autoencoder::{AutoEncoder, PretrainReport};
use crate::checkpoint::{self, NetRole};
use crate::config::ExperimentConfig;
use crate::data::{self, make_benchmark, Benchmark, GaussianMixture};
use crate::error::{Error, Result};
use crate::gan::{EvalPoint, GanConfig, RunSummary, TrainObserver, Trainer};
use crate::matrix::Matrix;
use crate::metrics::{self, aggregate_runs, Aggregate, EvalReport};
use crate::penalty::extract_mode_bank;
use crate::rng::SeededRng;

pub const ENCODER_FILE: &str = "encoder.ckpt";
pub const OUT_ENV: &str = "MODEGAN_OUT";

/// Target mixture and the fixed training set drawn from it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub mixture: Arc<GaussianMixture>,
    pub reals: Arc<Matrix>,
}

impl Dataset {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let root = SeededRng::new(cfg.mixture_seed);
        let mixture = make_benchmark(cfg.benchmark, &cfg.data, &mut root.fork(1))?;
        let reals = mixture.sample(cfg.n_train, &mut root.fork(2));
        Ok(Self {
            mixture: Arc::new(mixture),
            reals: Arc::new(reals),
        })
    }
}

/// Output root: explicit path, else `$MODEGAN_OUT`, else `./runs`.
pub fn resolve_out_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn benchmark_dir(root: &Path, benchmark: Benchmark) -> PathBuf {
    root.join(benchmark.name())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e.to_string()))
}

/// Pretrains and freezes the autoencoder on the training set (seeded by `seed_base`).
pub fn pretrain_encoder(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<(AutoEncoder, PretrainReport)> {
    let mut rng = SeededRng::new(cfg.seed_base);
    let mut ae = AutoEncoder::new(
        cfg.benchmark.dim(),
        &cfg.ae.hidden,
        cfg.ae.latent_dim,
        &mut rng,
    )?;
    let report = ae.pretrain(&dataset.reals, &cfg.ae.pretrain, &mut rng)?;
    ae.freeze();
    Ok((ae, report))
}

/// Pretrains the encoder and writes `encoder.ckpt`, `ae_loss.csv` and the
/// resolved config into `dir`.
pub fn cmd_pretrain_ae(cfg: &ExperimentConfig, dir: &Path) -> Result<(PathBuf, PretrainReport)> {
    cfg.validate()?;
    create_dir(dir)?;
    let dataset = Dataset::build(cfg)?;
    let (ae, report) = pretrain_encoder(cfg, &dataset)?;
    let ckpt = dir.join(ENCODER_FILE);
    checkpoint::save_autoencoder(&ckpt, &ae)?;
    let loss_path = dir.join("ae_loss.csv");
    let mut w = csv_writer(&loss_path)?;
    let io = csv_io(&loss_path);
    w.write_record(["epoch", "loss"]).map_err(&io)?;
    for (i, l) in report.losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()]).map_err(&io)?;
    }
    w.flush().map_err(|e| Error::io(&loss_path, e))?;
    write_config(cfg, dir)?;
    Ok((ckpt, report))
}

fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let path = dir.join("config.txt");
    fs::write(&path, cfg.to_text()).map_err(|e| Error::io(&path, e))
}

/// Loads a frozen encoder and checks it against the config's dimensions.
pub fn load_encoder(path: &Path, cfg: &ExperimentConfig) -> Result<AutoEncoder> {
    let ae = checkpoint::load_autoencoder(path)?;
    if !ae.is_frozen() {
        return Err(Error::Usage(format!(
            "encoder checkpoint {} is not frozen",
            path.display()
        )));
    }
    if ae.data_dim() != cfg.benchmark.dim() {
        return Err(Error::dims(
            "encoder checkpoint input vs benchmark dimension",
            cfg.benchmark.dim(),
            ae.data_dim(),
        ));
    }
    if ae.latent_dim() != cfg.ae.latent_dim {
        return Err(Error::dims(
            "encoder checkpoint latent_dim vs ae.latent_dim",
            cfg.ae.latent_dim,
            ae.latent_dim(),
        ));
    }
    Ok(ae)
}

pub fn run_label(gan: &GanConfig) -> &'static str {
    if gan.is_baseline() {
        "baseline"
    } else if !gan.update_weights {
        "weights_off"
    } else {
        "modegan"
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub dir: Option<PathBuf>,
    pub summary: RunSummary,
    pub encoder_checksum_before: [u8; 32],
    pub encoder_checksum_after: [u8; 32],
}

impl RunOutcome {
    pub fn final_report(&self) -> Option<&EvalReport> {
        self.summary.final_report()
    }
}

struct RunWriter {
    label: String,
    dir: PathBuf,
    diagnostics: csv::Writer<File>,
    long: csv::Writer<File>,
    checkpoint_every: usize,
}

impl RunWriter {
    fn open(dir: &Path, label: String, checkpoint_every: usize) -> Result<Self> {
        create_dir(&dir.join("checkpoints"))?;
        let diag_path = dir.join("diagnostics.csv");
        let long_path = dir.join("metrics_long.csv");
        let mut diagnostics = csv_writer(&diag_path)?;
        diagnostics
            .write_record([
                "step",
                "d_loss",
                "g_loss",
                "dist",
                "lambda_eff",
                "modes_found",
                "hqs",
                "jsd",
            ])
            .map_err(csv_io(&diag_path))?;
        diagnostics.flush().map_err(|e| Error::io(&diag_path, e))?;
        let mut long = csv_writer(&long_path)?;
        long.write_record(["step", "metric", "value", "run"])
            .map_err(csv_io(&long_path))?;
        long.flush().map_err(|e| Error::io(&long_path, e))?;
        Ok(Self {
            label,
            dir: dir.to_path_buf(),
            diagnostics,
            long,
            checkpoint_every,
        })
    }

    fn checkpoint(&self, trainer: &Trainer, tag: &str) -> Result<()> {
        let ckpt = self.dir.join("checkpoints");
        let model = trainer.model();
        checkpoint::save_net(
            &ckpt.join(format!("generator_{tag}.ckpt")),
            &model.generator,
            NetRole::Generator,
        )?;
        checkpoint::save_net(
            &ckpt.join(format!("discriminator_{tag}.ckpt")),
            &model.discriminator,
            NetRole::Discriminator,
        )
    }
}

impl TrainObserver for RunWriter {
    fn on_eval(&mut self, p: &EvalPoint, trainer: &Trainer) -> Result<()> {
        let diag_path = self.dir.join("diagnostics.csv");
        let long_path = self.dir.join("metrics_long.csv");
        let r = &p.report;
        self.diagnostics
            .write_record([
                p.step.to_string(),
                p.d_loss.to_string(),
                p.g_loss.to_string(),
                p.dist.to_string(),
                p.lambda_eff.to_string(),
                r.modes_found.to_string(),
                r.hqs.to_string(),
                r.jsd.to_string(),
            ])
            .map_err(csv_io(&diag_path))?;
        self.diagnostics
            .flush()
            .map_err(|e| Error::io(&diag_path, e))?;
        let metrics = [
            ("d_loss", p.d_loss),
            ("g_loss", p.g_loss),
            ("dist", p.dist),
            ("lambda_eff", p.lambda_eff),
            ("modes_found", r.modes_found as f64),
            ("hqs", r.hqs),
            ("jsd", r.jsd),
        ];
        for (name, value) in metrics {
            self.long
                .write_record([p.step.to_string(), name.into(), value.to_string(), self.label.clone()])
                .map_err(csv_io(&long_path))?;
        }
        self.long.flush().map_err(|e| Error::io(&long_path, e))?;
        if self.checkpoint_every > 0 && p.step % self.checkpoint_every == 0 {
            self.checkpoint(trainer, &format!("step{}", p.step))?;
        }
        Ok(())
    }
}

/// Trains run `index` of `cfg`. With `dir`, streams diagnostics and writes
/// checkpoints, the final report and the final generated samples there.
pub fn train_run(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    encoder: Arc<AutoEncoder>,
    gan: GanConfig,
    dir: Option<&Path>,
) -> Result<RunOutcome> {
    let seed = gan.seed;
    let label = run_label(&gan);
    let before = encoder.encoder_checksum();
    let mut trainer = Trainer::new(
        gan,
        dataset.mixture.clone(),
        dataset.reals.clone(),
        encoder.clone(),
        cfg.metrics,
    )?;
    let mut writer = match dir {
        Some(d) => {
            create_dir(d)?;
            let mut resolved = cfg.clone();
            resolved.gan = trainer.config().clone();
            resolved.seed_base = seed;
            resolved.runs = 1;
            write_config(&resolved, d)?;
            let w = RunWriter::open(d, format!("{label}_seed{seed}"), cfg.checkpoint_every)?;
            w.checkpoint(&trainer, "step0")?;
            Some(w)
        }
        None => None,
    };
    let result = match writer.as_mut() {
        Some(w) => trainer.train(w),
        None => trainer.train(&mut ()),
    };
    let summary = match result {
        Ok(s) => s,
        Err(e) => {
            if let Some(w) = &writer {
                // Best effort: the abort itself is the error worth reporting.
                let _ = w.checkpoint(&trainer, &format!("abort_step{}", trainer.step()));
            }
            return Err(e);
        }
    };
    if let (Some(w), Some(d)) = (&writer, dir) {
        if summary.steps_run > 0 {
            w.checkpoint(&trainer, "final")?;
        }
        if let Some(report) = summary.final_report() {
            write_reports(&d.join("report.csv"), cfg.benchmark, &[(seed, report.clone())])?;
            let samples = trainer.generate(trainer.config().eval_samples)?;
            let path = d.join("samples.csv");
            data::write_samples_csv(create_file(&path)?, &samples)?;
        }
    }
    Ok(RunOutcome {
        seed,
        dir: dir.map(Path::to_path_buf),
        summary,
        encoder_checksum_before: before,
        encoder_checksum_after: encoder.encoder_checksum(),
    })
}

/// Writes `benchmark,seed,modes,hqs,jsd` rows, plus `mean` and `std` rows
/// when there are at least two runs.
pub fn write_reports(
    path: &Path,
    benchmark: Benchmark,
    rows: &[(u64, EvalReport)],
) -> Result<Option<Aggregate>> {
    let mut w = csv_writer(path)?;
    let io = csv_io(path);
    w.write_record(["benchmark", "seed", "modes", "hqs", "jsd"])
        .map_err(&io)?;
    for (seed, r) in rows {
        w.write_record([
            benchmark.to_string(),
            seed.to_string(),
            r.modes_found.to_string(),
            r.hqs.to_string(),
            r.jsd.to_string(),
        ])
        .map_err(&io)?;
    }
    let agg = if rows.len() >= 2 {
        let reports: Vec<EvalReport> = rows.iter().map(|(_, r)| r.clone()).collect();
        let agg = aggregate_runs(&reports)?;
        for (name, pick) in [("mean", 0), ("std", 1)] {
            let v = |m: metrics::MeanStd| if pick == 0 { m.mean } else { m.std };
            w.write_record([
                benchmark.to_string(),
                name.to_string(),
                v(agg.modes).to_string(),
                v(agg.hqs).to_string(),
                v(agg.jsd).to_string(),
            ])
            .map_err(&io)?;
        }
        Some(agg)
    } else {
        None
    };
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(agg)
}

/// Runs `f(i)` for `i in 0..n` on at most `parallel` threads, preserving order.
fn run_indexed<T: Send>(
    n: usize,
    parallel: usize,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if parallel <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.min(n))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub label: &'static str,
    pub runs: Vec<RunOutcome>,
    pub aggregate: Option<Aggregate>,
    pub dir: PathBuf,
}

impl TrainBatch {
    pub fn reports(&self) -> Vec<EvalReport> {
        self.runs
            .iter()
            .filter_map(|r| r.final_report().cloned())
            .collect()
    }
}

/// Trains `cfg.runs` seeds against a frozen encoder, one directory per run,
/// and writes the batch report.
pub fn cmd_train(cfg: &ExperimentConfig, encoder: Arc<AutoEncoder>, root: &Path) -> Result<TrainBatch> {
    cfg.validate()?;
    let dataset = Dataset::build(cfg)?;
    let label = run_label(&cfg.gan);
    let dir = benchmark_dir(root, cfg.benchmark).join(label);
    create_dir(&dir)?;
    let runs = run_indexed(cfg.runs, cfg.parallel, |i| {
        let gan = cfg.run_gan_config(i);
        let run_dir = dir.join(format!("seed_{}", gan.seed));
        train_run(cfg, &dataset, encoder.clone(), gan, Some(&run_dir))
    })?;
    let rows: Vec<(u64, EvalReport)> = runs
        .iter()
        .filter_map(|r| r.final_report().map(|rep| (r.seed, rep.clone())))
        .collect();
    let aggregate = if rows.is_empty() {
        None
    } else {
        write_reports(&dir.join("report.csv"), cfg.benchmark, &rows)?
    };
    Ok(TrainBatch {
        label,
        runs,
        aggregate,
        dir,
    })
}

/// Evaluates an external sample dump against the benchmark.
pub fn cmd_eval(cfg: &ExperimentConfig, samples_path: &Path) -> Result<EvalReport> {
    let file = File::open(samples_path).map_err(|e| Error::io(samples_path, e))?;
    let samples = data::read_samples_csv(file, &samples_path.display().to_string())?;
    if samples.cols() != cfg.benchmark.dim() {
        return Err(Error::dims(
            "sample dump vs benchmark dimension",
            format!("{} ({} expects {})", cfg.benchmark.dim(), cfg.benchmark, cfg.benchmark.dim()),
            samples.cols(),
        ));
    }
    let dataset = Dataset::build(cfg)?;
    metrics::evaluate(&samples, &dataset.reals, &dataset.mixture, &cfg.metrics)
}

/// One seed of the penalty-weight ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub seed: u64,
    pub steps_on: Option<usize>,
    pub steps_off: Option<usize>,
    /// Whether both arms started from the same mode bank.
    pub same_bank: bool,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    pub comparison_csv: PathBuf,
}

/// Steps to full coverage, with runs that never got there ranked after
/// every run that did.
pub fn coverage_rank(steps: Option<usize>) -> f64 {
    steps.map_or(f64::INFINITY, |s| s as f64)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl Ablation {
    pub fn median_steps(&self) -> (f64, f64) {
        let mut on: Vec<f64> = self.rows.iter().map(|r| coverage_rank(r.steps_on)).collect();
        let mut off: Vec<f64> = self.rows.iter().map(|r| coverage_rank(r.steps_off)).collect();
        (median(&mut on), median(&mut off))
    }
}

/// Paired runs per seed: live penalty weights vs weights frozen at 1.
pub fn cmd_ablate_weights(
    cfg: &ExperimentConfig,
    encoder: Arc<AutoEncoder>,
    root: &Path,
) -> Result<Ablation> {
    cfg.validate()?;
    if cfg.gan.is_baseline() {
        return Err(Error::Config(
            "the weight ablation needs gan.lambda_p > 0".into(),
        ));
    }
    let dataset = Dataset::build(cfg)?;
    let dir = benchmark_dir(root, cfg.benchmark).join("ablation");
    create_dir(&dir)?;
    let rows = run_indexed(cfg.runs, cfg.parallel, |i| {
        let base = cfg.run_gan_config(i);
        let mut arms = Vec::with_capacity(2);
        for (arm, live) in [("weights_on", true), ("weights_off", false)] {
            let gan = GanConfig {
                update_weights: live,
                ..base.clone()
            };
            let run_dir = dir.join(arm).join(format!("seed_{}", gan.seed));
            let bank = Trainer::new(
                gan.clone(),
                dataset.mixture.clone(),
                dataset.reals.clone(),
                encoder.clone(),
                cfg.metrics,
            )?
            .bank()
            .modes()
            .clone();
            let out = train_run(cfg, &dataset, encoder.clone(), gan, Some(&run_dir))?;
            arms.push((out.summary.steps_to_full_coverage, bank));
        }
        Ok(AblationRow {
            seed: base.seed,
            steps_on: arms[0].0,
            steps_off: arms[1].0,
            same_bank: arms[0].1 == arms[1].1,
        })
    })?;
    let path = dir.join("comparison.csv");
    let mut w = csv_writer(&path)?;
    let io = csv_io(&path);
    w.write_record(["seed", "steps_on", "steps_off"]).map_err(&io)?;
    let fmt = |s: Option<usize>| s.map_or_else(|| "NA".to_string(), |v| v.to_string());
    for r in &rows {
        w.write_record([r.seed.to_string(), fmt(r.steps_on), fmt(r.steps_off)])
            .map_err(&io)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(Ablation {
        rows,
        comparison_csv: path.clone(),
    })
}

/// Pretrains an encoder and trains `cfg.runs` seeds for each benchmark,
/// then writes `<root>/summary.csv` (`benchmark,label,stat,modes,hqs,jsd`).
pub fn cmd_sweep(
    base: &ExperimentConfig,
    benchmarks: &[Benchmark],
    root: &Path,
) -> Result<Vec<TrainBatch>> {
    create_dir(root)?;
    let mut batches = Vec::new();
    for &b in benchmarks {
        let cfg = ExperimentConfig {
            benchmark: b,
            ..base.clone()
        };
        let bdir = benchmark_dir(root, b);
        let (ckpt, _) = cmd_pretrain_ae(&cfg, &bdir)?;
        let encoder = Arc::new(load_encoder(&ckpt, &cfg)?);
        batches.push(cmd_train(&cfg, encoder, root)?);
    }
    let path = root.join("summary.csv");
    let mut w = csv_writer(&path)?;
    let io = csv_io(&path);
    w.write_record(["benchmark", "label", "stat", "modes", "hqs", "jsd"])
        .map_err(&io)?;
    for (batch, &b) in batches.iter().zip(benchmarks) {
        let reports = batch.reports();
        let rows: Vec<(&str, f64, f64, f64)> = match &batch.aggregate {
            Some(a) => vec![
                ("mean", a.modes.mean, a.hqs.mean, a.jsd.mean),
                ("std", a.modes.std, a.hqs.std, a.jsd.std),
            ],
            None => reports
                .iter()
                .map(|r| ("single", r.modes_found as f64, r.hqs, r.jsd))
                .collect(),
        };
        for (stat, m, h, j) in rows {
            w.write_record([
                b.to_string(),
                batch.label.to_string(),
                stat.to_string(),
                m.to_string(),
                h.to_string(),
                j.to_string(),
            ])
            .map_err(&io)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(batches)
}

/// Extracts the mode bank run `seed` would use and writes it as CSV.
pub fn cmd_dump_bank(
    cfg: &ExperimentConfig,
    encoder: &AutoEncoder,
    seed: u64,
    out: impl Write,
) -> Result<()> {
    let dataset = Dataset::build(cfg)?;
    let root = SeededRng::new(seed);
    let bank = extract_mode_bank(
        &dataset.reals,
        cfg.gan.bank_size,
        encoder,
        cfg.gan.history_k,
        &mut root.fork(crate::gan::streams::BANK),
    )?;
    bank.write_csv(out)
}
