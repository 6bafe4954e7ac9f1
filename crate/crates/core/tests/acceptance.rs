//! Prints one PASS/FAIL line per acceptance criterion.
//!
//! Criteria 7-12 always run. Criteria 1-6 train the default configuration
//! (30k generator steps, five seeds per benchmark) and take hours on a single
//! core; they run with `MODEGAN_ACCEPTANCE=full` and print NOT RUN otherwise.
//! Run directories go under `$MODEGAN_OUT/acceptance` when that is set and a
//! temporary directory otherwise.
//!
//! The process exits non-zero when a property criterion (7-12) fails.
//! Experiment criteria report their outcome without failing the target.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use common::*;
use modegan::experiment::{self, Dataset, TrainBatch};
use modegan::gan::{self, TrainObserver};
use modegan::metrics::{jsd, Aggregate};
use modegan::penalty::{greedy_match, mode_distance_backward};
use modegan::*;

const LN2: f64 = std::f64::consts::LN_2;

struct Line {
    id: u8,
    pass: Option<bool>,
    detail: String,
}

impl Line {
    fn new(id: u8, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            id,
            pass: Some(pass),
            detail: detail.into(),
        }
    }

    fn not_run(id: u8) -> Self {
        Self {
            id,
            pass: None,
            detail: "set MODEGAN_ACCEPTANCE=full to train the benchmark runs".into(),
        }
    }

    fn print(&self) {
        let tag = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "NOT RUN",
        };
        println!("criterion {:>2}: {tag}  {}", self.id, self.detail);
    }
}

fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Draws instances until `want` are accepted; the check returns None for an
/// instance it rejects (kinks, coincident pairs).
fn gradient_family(want: usize, seed: u64, mut check: impl FnMut(&mut SeededRng) -> Option<f64>) -> (usize, f64) {
    let mut rng = SeededRng::new(seed);
    let mut accepted = 0;
    let mut worst: f64 = 0.0;
    let mut tries = 0;
    while accepted < want && tries < 50 * want {
        tries += 1;
        if let Some(e) = check(&mut rng) {
            accepted += 1;
            worst = worst.max(e);
        }
    }
    (accepted, worst)
}

fn criterion_7() -> Line {
    const N: usize = 120;
    let dense = gradient_family(N, 70, |rng| {
        let depth = 2 + rng.index(3);
        let widths: Vec<usize> = (0..depth).map(|_| 1 + rng.index(16)).collect();
        let tags: Vec<u8> = (0..depth - 1).map(|_| rng.index(5) as u8).collect();
        let mut net = random_net(&widths, &tags, rng);
        let batch = 1 + rng.index(5);
        let x = rng.normal_matrix(batch, widths[0]);
        let r = rng.normal_matrix(batch, widths[depth - 1]);
        let mut cache = ForwardCache::new();
        net.forward(&x, &mut cache).unwrap();
        if near_kink(&net, &cache) {
            return None;
        }
        let bp = net.backward(&cache, &r).unwrap();
        let np = numeric_param_grad(&mut net, |n| weighted_sum(&n.predict(&x).unwrap(), &r));
        let nx = numeric_input_grad(&x, |xp| weighted_sum(&net.predict(xp).unwrap(), &r));
        Some(max_rel(&flatten(&bp.params), &np).max(max_rel(bp.input.data(), &nx)))
    });
    let distance = gradient_family(N, 71, |rng| {
        let dim = 1 + rng.index(3);
        let (n_modes, n_gen) = (1 + rng.index(8), 1 + rng.index(8));
        let bank = weighted_bank(rng.normal_matrix(n_modes, dim), rng);
        let enc = rng.normal_matrix(n_gen, dim);
        let assignment = greedy_match(&bank, &enc).unwrap();
        if min_pair_distance(&assignment) <= 1e-3 {
            return None;
        }
        let analytic = mode_distance_backward(&bank, &assignment, &enc).unwrap();
        let numeric = numeric_input_grad(&enc, |e| fixed_pair_distance(&bank, &assignment, e));
        Some(max_rel(analytic.data(), &numeric))
    });
    let chain = gradient_family(N, 72, |rng| {
        let seed = rng.index(1 << 30) as u64;
        let n = 2 + rng.index(5);
        let model = small_gan(seed, 2, 2 + rng.index(7), activation(rng.index(4) as u8));
        let ae = tanh_autoencoder(rng);
        let bank = weighted_bank(rng.normal_matrix(n, 2), rng);
        let noise = rng.normal_matrix(n, 2);
        let mut cache = ForwardCache::new();
        model.generator.forward(&noise, &mut cache).unwrap();
        if near_kink(&model.generator, &cache) {
            return None;
        }
        let term = gan::distance_term(&model, &noise, &bank, &ae).unwrap();
        if min_pair_distance(&term.assignment) <= 1e-3 {
            return None;
        }
        let mut g = model.generator.clone();
        let numeric = numeric_param_grad(&mut g, |gen| {
            let enc = ae.encode(&gen.predict(&noise).unwrap()).unwrap();
            fixed_pair_distance(&bank, &term.assignment, &enc)
        });
        Some(max_rel(&flatten(&term.grads), &numeric))
    });
    let adversarial = gradient_family(N, 73, |rng| {
        let seed = rng.index(1 << 30) as u64;
        let batch = 1 + rng.index(6);
        let model = small_gan(seed, 2, 2 + rng.index(7), activation(rng.index(4) as u8));
        let reals = rng.normal_matrix(batch, 2);
        let noise = rng.normal_matrix(batch, 2);
        let fake = model.generator.predict(&noise).unwrap();
        let mut g_cache = ForwardCache::new();
        model.generator.forward(&noise, &mut g_cache).unwrap();
        let mut d_cache = ForwardCache::new();
        let mut kink = near_kink(&model.generator, &g_cache);
        for x in [&reals, &fake] {
            model.discriminator.forward(x, &mut d_cache).unwrap();
            kink |= near_kink(&model.discriminator, &d_cache);
        }
        if kink {
            return None;
        }
        let d = gan::d_loss(&model, &reals, &noise).unwrap();
        let mut disc = model.discriminator.clone();
        let nd = numeric_param_grad(&mut disc, |net| {
            let mut m = model.clone();
            m.discriminator = net.clone();
            gan::d_loss(&m, &reals, &noise).unwrap().loss
        });
        let (_, g) = gan::adversarial_term(&model, &noise).unwrap();
        let mut gen = model.generator.clone();
        let ng = numeric_param_grad(&mut gen, |net| {
            let mut m = model.clone();
            m.generator = net.clone();
            gan::adversarial_term(&m, &noise).unwrap().0
        });
        Some(max_rel(&flatten(&d.grads), &nd).max(max_rel(&flatten(&g), &ng)))
    });
    let families = [
        ("dense net", dense),
        ("mode distance", distance),
        ("generator through encoder", chain),
        ("adversarial losses", adversarial),
    ];
    let pass = families.iter().all(|(_, (n, e))| *n >= 100 && *e < TOL);
    let detail = families
        .iter()
        .map(|(name, (n, e))| format!("{name}: {n} instances, max rel err {e:.1e}"))
        .collect::<Vec<_>>()
        .join("; ");
    Line::new(7, pass, format!("{detail} (limit {TOL:e})"))
}

fn criterion_8() -> Line {
    let mut rng = SeededRng::new(8);
    let mut agree = 0;
    for instance in 0..50 {
        let dim = 1 + rng.index(3);
        let (n_modes, n_gen) = (1 + rng.index(6), 1 + rng.index(6));
        let (modes, gens) = if instance % 2 == 0 {
            (rng.normal_matrix(n_modes, dim), rng.normal_matrix(n_gen, dim))
        } else {
            (lattice_matrix(&mut rng, n_modes, dim), lattice_matrix(&mut rng, n_gen, dim))
        };
        let bank = ModeBank::new(modes.clone(), 5).unwrap();
        let got: Vec<(usize, usize)> = greedy_match(&bank, &gens)
            .unwrap()
            .pairs
            .iter()
            .map(|p| (p.generated, p.mode))
            .collect();
        if got == step_by_step(&to_rows(&modes), &to_rows(&gens)) {
            agree += 1;
        }
    }
    Line::new(8, agree == 50, format!("{agree}/50 instances equal the step-by-step oracle"))
}

fn criterion_9() -> Line {
    let mut rng = SeededRng::new(9);
    let mut worst_sym: f64 = 0.0;
    let mut in_bounds = true;
    for _ in 0..500 {
        let n = 1 + rng.index(40);
        let mut draw = || -> Vec<f64> {
            let v: Vec<f64> = (0..n)
                .map(|_| if rng.index(3) == 0 { 0.0 } else { rng.uniform(0.0, 1.0) })
                .collect();
            let s: f64 = v.iter().sum();
            if s == 0.0 {
                vec![1.0 / n as f64; n]
            } else {
                v.iter().map(|x| x / s).collect()
            }
        };
        let (p, q) = (draw(), draw());
        let (pq, qp) = (jsd(&p, &q).unwrap(), jsd(&q, &p).unwrap());
        worst_sym = worst_sym.max((pq - qp).abs());
        in_bounds &= (0.0..=LN2).contains(&pq);
    }
    let two_cell = jsd(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    let pass = worst_sym <= 1e-12 && in_bounds && (two_cell - 0.2158).abs() <= 1e-4;
    Line::new(
        9,
        pass,
        format!(
            "max asymmetry {worst_sym:.1e} over 500 pairs, bounds held: {in_bounds}, two-cell {two_cell:.6}"
        ),
    )
}

fn criterion_12() -> Line {
    let mut rng = SeededRng::new(12);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let k = 1 + rng.index(8);
        let mut bank = ModeBank::new(Matrix::zeros(1, 2), k).unwrap();
        let mut pushed = Vec::new();
        for _ in 0..1 + rng.index(30) {
            let d = rng.uniform(0.0, 10.0);
            pushed.push(d);
            bank.update_penalty_weights(&MatchAssignment {
                pairs: vec![MatchPair {
                    generated: 0,
                    mode: 0,
                    distance: d,
                }],
            })
            .unwrap();
            let window = &pushed[pushed.len().saturating_sub(k)..];
            if bank.weights()[0] != window.iter().sum::<f64>() / window.len() as f64 {
                mismatches += 1;
            }
        }
    }
    Line::new(12, mismatches == 0, format!("1000 push sequences, {mismatches} mismatching weights"))
}

/// Small but complete runs for the freeze and determinism criteria.
fn small_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Benchmark::Grid25);
    cfg.n_train = 2000;
    cfg.ae.hidden = vec![16];
    cfg.ae.pretrain.epochs = 5;
    cfg.gan = GanConfig {
        gen_hidden: vec![32, 32],
        disc_hidden: vec![32],
        batch_size: 64,
        bank_size: 100,
        total_g_steps: 300,
        eval_every: 50,
        eval_samples: 1000,
        ..GanConfig::default()
    };
    cfg
}

struct Checksums<'a>(&'a AutoEncoder, [u8; 32], bool);

impl TrainObserver for Checksums<'_> {
    fn on_step(&mut self, _d: &gan::StepDiagnostics) {
        self.2 &= self.0.encoder_checksum() == self.1;
    }
}

fn criteria_10_11(full_runs: &[&TrainBatch]) -> (Line, Line) {
    let cfg = small_experiment();
    let dataset = Dataset::build(&cfg).unwrap();
    let (ae, _) = experiment::pretrain_encoder(&cfg, &dataset).unwrap();
    let encoder = Arc::new(ae);
    let before = encoder.encoder_checksum();

    let mut trainer = gan::Trainer::new(
        cfg.run_gan_config(0),
        dataset.mixture.clone(),
        dataset.reals.clone(),
        encoder.clone(),
        cfg.metrics,
    )
    .unwrap();
    let mut watch = Checksums(&encoder, before, true);
    let summary = trainer.train(&mut watch).unwrap();
    let mut steady = watch.2 && encoder.encoder_checksum() == before;
    let mut checked = 1;
    for batch in full_runs {
        for run in &batch.runs {
            steady &= run.encoder_checksum_before == run.encoder_checksum_after;
            checked += 1;
        }
    }
    let freeze = Line::new(
        10,
        steady && summary.steps_run == cfg.gan.total_g_steps,
        format!("encoder checksum constant at every step of a complete run and across {checked} finished run(s)"),
    );

    let series = |seed: usize| {
        experiment::train_run(&cfg, &dataset, encoder.clone(), cfg.run_gan_config(seed), None)
            .unwrap()
            .summary
            .series
    };
    let (a, b, other) = (series(3), series(3), series(4));
    let determinism = Line::new(
        11,
        a == b && !a.is_empty() && a != other,
        format!(
            "two runs of seed 3 give identical series over {} evaluations; seed 4 differs: {}",
            a.len(),
            a != other
        ),
    );
    (freeze, determinism)
}

struct FullSuite {
    _tmp: Option<tempfile::TempDir>,
    root: PathBuf,
}

impl FullSuite {
    fn new() -> Self {
        match std::env::var_os(experiment::OUT_ENV) {
            Some(out) => Self {
                _tmp: None,
                root: PathBuf::from(out).join("acceptance"),
            },
            None => {
                let tmp = tempfile::tempdir().unwrap();
                let root = tmp.path().to_path_buf();
                Self { _tmp: Some(tmp), root }
            }
        }
    }

    fn encoder(&self, cfg: &ExperimentConfig) -> Arc<AutoEncoder> {
        let dir = experiment::benchmark_dir(&self.root, cfg.benchmark);
        let (path, report) = experiment::cmd_pretrain_ae(cfg, &dir).unwrap();
        eprintln!(
            "[{}] autoencoder MSE {:.2e}",
            cfg.benchmark,
            report.final_loss().unwrap_or(f64::NAN)
        );
        Arc::new(experiment::load_encoder(&path, cfg).unwrap())
    }

    fn train(&self, cfg: &ExperimentConfig, encoder: Arc<AutoEncoder>) -> TrainBatch {
        let started = std::time::Instant::now();
        let batch = experiment::cmd_train(cfg, encoder, &self.root).unwrap();
        eprintln!(
            "[{} {}] {} runs in {:.0}s",
            cfg.benchmark,
            batch.label,
            batch.runs.len(),
            started.elapsed().as_secs_f64()
        );
        for run in &batch.runs {
            if let Some(r) = run.final_report() {
                eprintln!(
                    "    seed {}: modes {} hqs {:.3} jsd {:.4}",
                    run.seed, r.modes_found, r.hqs, r.jsd
                );
            }
        }
        batch
    }
}

fn config(benchmark: Benchmark) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(benchmark);
    cfg.runs = 5;
    cfg.parallel = std::env::var("MODEGAN_ACCEPTANCE_PARALLEL")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);
    cfg
}

fn aggregate(batch: &TrainBatch) -> Aggregate {
    batch.aggregate.expect("five finished runs")
}

fn run_full(suite: &FullSuite) -> (Vec<Line>, Vec<TrainBatch>) {
    let mut lines = Vec::new();
    let mut batches = Vec::new();

    let ring_cfg = config(Benchmark::Ring8);
    let ring = suite.train(&ring_cfg, suite.encoder(&ring_cfg));
    let a = aggregate(&ring);
    lines.push(Line::new(
        1,
        a.modes.mean >= 7.5 && a.hqs.mean >= 0.80 && a.jsd.mean <= 0.12,
        format!(
            "ring8: mean modes {:.2} (>= 7.5), hqs {:.3} (>= 0.80), jsd {:.4} (<= 0.12)",
            a.modes.mean, a.hqs.mean, a.jsd.mean
        ),
    ));
    batches.push(ring);

    let grid_cfg = config(Benchmark::Grid25);
    let grid_encoder = suite.encoder(&grid_cfg);
    let grid = suite.train(&grid_cfg, grid_encoder.clone());
    let a = aggregate(&grid);
    let full = grid.reports().iter().filter(|r| r.modes_found == 25).count();
    lines.push(Line::new(
        2,
        full >= 4 && a.jsd.mean <= 0.15,
        format!(
            "grid25: all 25 modes in {full}/5 runs (>= 4), mean jsd {:.4} (<= 0.15)",
            a.jsd.mean
        ),
    ));
    batches.push(grid);

    let random_cfg = config(Benchmark::Random25);
    let random = suite.train(&random_cfg, suite.encoder(&random_cfg));
    let a = aggregate(&random);
    lines.push(Line::new(
        3,
        a.modes.mean >= 23.0 && a.hqs.mean >= 0.60,
        format!(
            "random25: mean modes {:.2} (>= 23), hqs {:.3} (>= 0.60)",
            a.modes.mean, a.hqs.mean
        ),
    ));
    batches.push(random);

    let cube_cfg = config(Benchmark::Cube27);
    let cube = suite.train(&cube_cfg, suite.encoder(&cube_cfg));
    let a = aggregate(&cube);
    lines.push(Line::new(
        4,
        a.modes.mean >= 25.0 && a.jsd.mean <= 0.25,
        format!(
            "cube27: mean modes {:.2} (>= 25), jsd {:.4} (<= 0.25)",
            a.modes.mean, a.jsd.mean
        ),
    ));
    batches.push(cube);

    let mut vanilla_cfg = config(Benchmark::Grid25);
    vanilla_cfg.gan.lambda_p = 0.0;
    let vanilla = suite.train(&vanilla_cfg, grid_encoder.clone());
    let a = aggregate(&vanilla);
    lines.push(Line::new(
        5,
        a.modes.mean <= 22.0,
        format!("grid25 with lambda_p = 0: mean modes {:.2} (<= 22)", a.modes.mean),
    ));
    batches.push(vanilla);

    let mut ablation_cfg = config(Benchmark::Grid25);
    ablation_cfg.gan.stop_at_full_coverage = true;
    let ablation = experiment::cmd_ablate_weights(&ablation_cfg, grid_encoder, &suite.root).unwrap();
    let (on, off) = ablation.median_steps();
    let fmt = |s: Option<usize>| s.map_or_else(|| "never".to_string(), |v| v.to_string());
    let rows = ablation
        .rows
        .iter()
        .map(|r| format!("seed {} {}/{}", r.seed, fmt(r.steps_on), fmt(r.steps_off)))
        .collect::<Vec<_>>()
        .join(", ");
    let same_bank = ablation.rows.iter().all(|r| r.same_bank);
    lines.push(Line::new(
        6,
        on < off && same_bank && ablation.rows.len() >= 5,
        format!("grid25 median steps to full coverage, live weights {on} vs frozen {off} ({rows})"),
    ));
    (lines, batches)
}

fn main() -> ExitCode {
    let full = std::env::var("MODEGAN_ACCEPTANCE").is_ok_and(|v| v == "full");
    let suite = full.then(FullSuite::new);
    let (mut lines, batches) = match &suite {
        Some(s) => run_full(s),
        None => ((1..=6).map(Line::not_run).collect(), Vec::new()),
    };
    lines.push(criterion_7());
    lines.push(criterion_8());
    lines.push(criterion_9());
    let refs: Vec<&TrainBatch> = batches.iter().collect();
    let (freeze, determinism) = criteria_10_11(&refs);
    lines.push(freeze);
    lines.push(determinism);
    lines.push(criterion_12());

    for line in &lines {
        line.print();
    }
    let property_failure = lines
        .iter()
        .any(|l| l.id >= 7 && l.pass == Some(false));
    if property_failure {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
