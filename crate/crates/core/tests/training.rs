use std::sync::Arc;

use modegan::gan::{self, streams, EvalPoint, GanModel, StepDiagnostics, TrainObserver, Trainer};
use modegan::*;

struct Fixture {
    mixture: Arc<GaussianMixture>,
    reals: Arc<Matrix>,
    encoder: Arc<AutoEncoder>,
}

fn fixture(benchmark: Benchmark) -> Fixture {
    let mixture =
        make_benchmark(benchmark, &BenchmarkParams::default(), &mut SeededRng::new(1)).unwrap();
    let reals = mixture.sample(2000, &mut SeededRng::new(2));
    let mut rng = SeededRng::new(3);
    let mut ae = AutoEncoder::new(benchmark.dim(), &[16], 2, &mut rng).unwrap();
    let cfg = PretrainConfig {
        epochs: 5,
        ..PretrainConfig::default()
    };
    ae.pretrain(&reals, &cfg, &mut rng).unwrap();
    ae.freeze();
    Fixture {
        mixture: Arc::new(mixture),
        reals: Arc::new(reals),
        encoder: Arc::new(ae),
    }
}

fn small_config(seed: u64, lambda_p: f64, steps: usize) -> GanConfig {
    GanConfig {
        gen_hidden: vec![16, 16],
        disc_hidden: vec![16],
        batch_size: 32,
        bank_size: 40,
        total_g_steps: steps,
        eval_every: 20,
        eval_samples: 400,
        lambda_p,
        seed,
        ..GanConfig::default()
    }
}

fn trainer(fx: &Fixture, cfg: GanConfig) -> Trainer {
    Trainer::new(
        cfg,
        fx.mixture.clone(),
        fx.reals.clone(),
        fx.encoder.clone(),
        MetricsConfig::default(),
    )
    .unwrap()
}

fn checksum(net: &DenseNet) -> [u8; 32] {
    net.checksum()
}

/// Plain non-saturating GAN loop written against the public loss functions,
/// drawing from the same named streams as the trainer.
fn vanilla_run(fx: &Fixture, cfg: &GanConfig, steps: usize) -> GanModel {
    let root = SeededRng::new(cfg.seed);
    let mut model = GanModel::new(fx.mixture.dim(), cfg, &mut root.fork(streams::INIT)).unwrap();
    let mut data = root.fork(streams::DATA);
    let mut noise = root.fork(streams::NOISE);
    for _ in 0..steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| data.index(fx.reals.rows())).collect();
        let batch = fx.reals.select_rows(&idx);
        let z = noise.normal_matrix(cfg.batch_size, cfg.noise_dim);
        let d = gan::d_loss(&model, &batch, &z).unwrap();
        model.d_opt.step(&mut model.discriminator, &d.grads).unwrap();
        let z = noise.normal_matrix(cfg.batch_size, cfg.noise_dim);
        let (_, g) = gan::adversarial_term(&model, &z).unwrap();
        model.g_opt.step(&mut model.generator, &g).unwrap();
    }
    model
}

#[test]
fn zero_lambda_is_bit_identical_to_vanilla_gan() {
    let fx = fixture(Benchmark::Ring8);
    let cfg = small_config(21, 0.0, 60);
    let mut t = trainer(&fx, cfg.clone());
    t.train(&mut ()).unwrap();
    let reference = vanilla_run(&fx, &cfg, 60);
    assert_eq!(t.model().generator, reference.generator);
    assert_eq!(t.model().discriminator, reference.discriminator);
}

#[test]
fn zero_lambda_loss_is_the_adversarial_term() {
    let fx = fixture(Benchmark::Ring8);
    let t = trainer(&fx, small_config(4, 3.0, 1));
    let z = SeededRng::new(9).normal_matrix(16, 2);
    let pen = SeededRng::new(10).normal_matrix(40, 2);
    let inputs = gan::PenaltyInputs {
        noise: &pen,
        bank: t.bank(),
        encoder: t.encoder(),
    };
    let plain = gan::g_loss(t.model(), &z, None, 0.0).unwrap();
    let off = gan::g_loss(t.model(), &z, Some(inputs), 0.0).unwrap();
    let (adv, grads) = gan::adversarial_term(t.model(), &z).unwrap();
    assert_eq!(plain.loss, adv);
    assert_eq!(off.loss, adv);
    assert_eq!(off.grads, grads);
}

#[test]
fn uninformative_discriminator_loss_values() {
    let fx = fixture(Benchmark::Ring8);
    let mut model = trainer(&fx, small_config(0, 3.0, 1)).model().clone();
    // Zero the output layer so D == sigmoid(0) == 0.5 everywhere.
    let n = model.discriminator.param_slices().len();
    for s in model.discriminator.param_slices_mut().into_iter().skip(n - 2) {
        s.fill(0.0);
    }
    let reals = fx.reals.select_rows(&[0, 1, 2, 3]);
    let z = SeededRng::new(1).normal_matrix(4, 2);
    let d = gan::d_loss(&model, &reals, &z).unwrap();
    assert!((d.loss - 1.3862943611198906).abs() < 1e-12);
    let (g, _) = gan::adversarial_term(&model, &z).unwrap();
    assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn encoder_checksum_is_constant_over_a_run() {
    let fx = fixture(Benchmark::Grid25);
    let before = fx.encoder.encoder_checksum();
    let mut t = trainer(&fx, small_config(5, 3.0, 80));
    t.train(&mut ()).unwrap();
    assert_eq!(t.encoder().encoder_checksum(), before);
    assert_eq!(fx.encoder.encoder_checksum(), before);
}

#[test]
fn each_phase_touches_only_its_own_network() {
    let fx = fixture(Benchmark::Ring8);
    let mut t = trainer(&fx, small_config(6, 3.0, 10));
    for _ in 0..5 {
        let (g0, d0) = (checksum(&t.model().generator), checksum(&t.model().discriminator));
        t.d_phase().unwrap();
        assert_eq!(checksum(&t.model().generator), g0);
        let d1 = checksum(&t.model().discriminator);
        assert_ne!(d1, d0);
        t.g_phase().unwrap();
        assert_eq!(checksum(&t.model().discriminator), d1);
        assert_ne!(checksum(&t.model().generator), g0);
    }
}

#[derive(Default)]
struct Recorder {
    steps: Vec<StepDiagnostics>,
    evals: Vec<EvalPoint>,
}

impl TrainObserver for Recorder {
    fn on_step(&mut self, d: &StepDiagnostics) {
        self.steps.push(*d);
    }

    fn on_eval(&mut self, p: &EvalPoint, _t: &Trainer) -> Result<()> {
        self.evals.push(p.clone());
        Ok(())
    }
}

#[test]
fn identical_config_and_seed_give_identical_series() {
    let fx = fixture(Benchmark::Grid25);
    let run = || {
        let mut rec = Recorder::default();
        let summary = trainer(&fx, small_config(8, 3.0, 60)).train(&mut rec).unwrap();
        (summary.series, rec.steps)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    let (c, _) = {
        let mut rec = Recorder::default();
        let s = trainer(&fx, small_config(9, 3.0, 60)).train(&mut rec).unwrap();
        (s.series, rec.steps)
    };
    assert_ne!(a, c);
}

#[test]
fn every_step_is_recorded_with_finite_values() {
    let fx = fixture(Benchmark::Cube27);
    let mut rec = Recorder::default();
    let summary = trainer(&fx, small_config(10, 3.0, 50)).train(&mut rec).unwrap();
    assert_eq!(rec.steps.len(), 50);
    for d in &rec.steps {
        assert!(d.d_loss.is_finite() && d.g_loss.is_finite() && d.dist.is_finite());
    }
    let steps: Vec<usize> = summary.series.iter().map(|p| p.step).collect();
    assert_eq!(steps, vec![20, 40, 50]);
}

#[test]
fn zero_steps_give_an_empty_series() {
    let fx = fixture(Benchmark::Ring8);
    let summary = trainer(&fx, small_config(1, 3.0, 0)).train(&mut ()).unwrap();
    assert_eq!(summary.steps_run, 0);
    assert!(summary.series.is_empty());
    assert!(summary.final_report().is_none());
}

#[test]
fn weights_change_only_on_penalty_steps_and_lambda_never_rises() {
    let fx = fixture(Benchmark::Ring8);
    // Tiny eval cadence so the switch can turn the penalty off mid-run.
    let cfg = GanConfig {
        eval_every: 5,
        penalty_patience: 1,
        ..small_config(12, 3.0, 120)
    };
    let mut t = trainer(&fx, cfg);
    let mut last_lambda = f64::INFINITY;
    for _ in 0..120 {
        let w0 = t.bank().weights().to_vec();
        let d = t.train_step().unwrap();
        let changed = t.bank().weights() != w0.as_slice();
        if changed {
            assert!(d.penalty_active);
        }
        if !d.penalty_active {
            assert!(!changed);
            assert_eq!(d.lambda_eff, 0.0);
        }
        assert!(d.lambda_eff <= last_lambda);
        last_lambda = d.lambda_eff;
        if t.step() % 5 == 0 {
            t.evaluate().unwrap();
        }
    }
}

#[test]
fn penalty_switches_off_after_patience_full_coverage_evals() {
    let fx = fixture(Benchmark::Ring8);
    let cfg = GanConfig {
        penalty_patience: 2,
        eval_samples: 4000,
        ..small_config(13, 3.0, 10)
    };
    let mut t = trainer(&fx, cfg);
    // The metric counts a mode with a single hit, so an evaluation on a wide
    // untrained generator may or may not be full; drive the switch directly
    // through evaluations and check it agrees with the reports.
    let mut streak = 0;
    for _ in 0..6 {
        let r = t.evaluate().unwrap();
        streak = if r.full_coverage() { streak + 1 } else { 0 };
        if streak >= 2 {
            assert_eq!(t.lambda_eff(), 0.0);
            return;
        }
        assert_eq!(t.lambda_eff(), 3.0);
    }
}

#[test]
fn unfrozen_encoder_and_bad_dimensions_are_rejected() {
    let fx = fixture(Benchmark::Ring8);
    let mut rng = SeededRng::new(0);
    let loose = AutoEncoder::new(2, &[4], 2, &mut rng).unwrap();
    let err = Trainer::new(
        small_config(0, 3.0, 1),
        fx.mixture.clone(),
        fx.reals.clone(),
        Arc::new(loose),
        MetricsConfig::default(),
    )
    .err()
    .unwrap();
    assert!(matches!(err, Error::Usage(_)));

    let cube = fixture(Benchmark::Cube27);
    let err = Trainer::new(
        small_config(0, 3.0, 1),
        fx.mixture.clone(),
        fx.reals.clone(),
        cube.encoder.clone(),
        MetricsConfig::default(),
    )
    .err()
    .unwrap();
    assert!(matches!(err, Error::Dimension { .. }));
}
