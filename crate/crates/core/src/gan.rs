//! Adversarial training with the mode-distance penalty.
//!
//! The discriminator minimizes `-[mean log D(x) + mean log(1 - D(G(z)))]`.
//! The generator minimizes `-mean log D(G(z)) + lambda * Dist`, where `Dist`
//! is the weighted mode distance between a dedicated batch of generated
//! samples, pushed through the frozen encoder, and the mode bank.

use std::sync::Arc;

use crate::adam::{AdamConfig, AdamState};
use crate::autoencoder::AutoEncoder;
use crate::data::GaussianMixture;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{self, EvalReport, MetricsConfig};
use crate::nn::{Activation, DenseNet, ForwardCache, Gradients, InitScheme};
use crate::penalty::{
    extract_mode_bank, greedy_match, mode_distance, mode_distance_backward, MatchAssignment,
    ModeBank, PenaltySwitch,
};
use crate::rng::SeededRng;

/// Clamp applied to discriminator outputs before taking logs.
pub const LOG_EPS: f64 = 1e-7;

/// Random stream ids forked from the run seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const PENALTY: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const BANK: u64 = 6;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub lambda_p: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub bank_size: usize,
    pub history_k: usize,
    pub d_steps_per_g: usize,
    pub total_g_steps: usize,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub seed: u64,
    pub penalty_patience: usize,
    /// Live penalty weights; `false` keeps every weight at 1.
    pub update_weights: bool,
    pub normalize_weights: bool,
    /// End the run at the first evaluation with every mode found.
    pub stop_at_full_coverage: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            noise_dim: 2,
            gen_hidden: vec![128, 128, 128],
            disc_hidden: vec![128, 128],
            hidden_activation: Activation::Relu,
            lambda_p: 3.0,
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            bank_size: 500,
            history_k: 5,
            d_steps_per_g: 1,
            total_g_steps: 30_000,
            eval_every: 500,
            eval_samples: 5000,
            seed: 0,
            penalty_patience: 3,
            update_weights: true,
            normalize_weights: false,
            stop_at_full_coverage: false,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("noise_dim", self.noise_dim),
            ("batch_size", self.batch_size),
            ("bank_size", self.bank_size),
            ("history_k", self.history_k),
            ("d_steps_per_g", self.d_steps_per_g),
            ("eval_every", self.eval_every),
            ("eval_samples", self.eval_samples),
            ("penalty_patience", self.penalty_patience),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("gan.{name} must be >= 1")));
        }
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            return Err(Error::Config(format!(
                "gan.lambda_p must be finite and >= 0, got {}",
                self.lambda_p
            )));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.lambda_p == 0.0
    }
}

/// Generator, discriminator and their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: DenseNet,
    pub discriminator: DenseNet,
    pub g_opt: AdamState,
    pub d_opt: AdamState,
}

impl GanModel {
    /// Generator `noise -> hidden -> data` (identity output) and
    /// discriminator `data -> hidden -> 1` (sigmoid output).
    pub fn new(data_dim: usize, cfg: &GanConfig, rng: &mut SeededRng) -> Result<Self> {
        let mut generator = DenseNet::mlp(
            cfg.noise_dim,
            &cfg.gen_hidden,
            data_dim,
            cfg.hidden_activation,
            Activation::Identity,
        )?;
        let mut discriminator = DenseNet::mlp(
            data_dim,
            &cfg.disc_hidden,
            1,
            cfg.hidden_activation,
            Activation::Sigmoid,
        )?;
        generator.init_params(InitScheme::Auto, rng);
        discriminator.init_params(InitScheme::Auto, rng);
        let g_opt = AdamState::new(&generator, cfg.adam())?;
        let d_opt = AdamState::new(&discriminator, cfg.adam())?;
        Ok(Self {
            generator,
            discriminator,
            g_opt,
            d_opt,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.generator.input_dim()
    }
}

/// `-mean log(clamp(p))` and its gradient with respect to `p`; clamped
/// entries have zero gradient.
fn neg_mean_log(p: &[f64], complement: bool) -> (f64, Vec<f64>) {
    let n = p.len() as f64;
    let mut loss = 0.0;
    let grad = p
        .iter()
        .map(|&v| {
            let c = v.clamp(LOG_EPS, 1.0 - LOG_EPS);
            let inside = c == v;
            if complement {
                loss -= (1.0 - c).ln();
                if inside {
                    1.0 / (n * (1.0 - c))
                } else {
                    0.0
                }
            } else {
                loss -= c.ln();
                if inside {
                    -1.0 / (n * c)
                } else {
                    0.0
                }
            }
        })
        .collect();
    (loss / n, grad)
}

#[derive(Debug, Clone)]
pub struct DLoss {
    pub loss: f64,
    pub grads: Gradients,
}

/// Discriminator loss on a real batch and `G(noise)`, with gradients for D.
pub fn d_loss(model: &GanModel, reals: &Matrix, noise: &Matrix) -> Result<DLoss> {
    let fake = model.generator.predict(noise)?;
    if reals.cols() != fake.cols() {
        return Err(Error::dims("d_loss real batch", fake.cols(), reals.cols()));
    }
    let n_real = reals.rows();
    let mut data = Vec::with_capacity(reals.data().len() + fake.data().len());
    data.extend_from_slice(reals.data());
    data.extend_from_slice(fake.data());
    let batch = Matrix::from_vec(n_real + fake.rows(), fake.cols(), data)?;

    let mut cache = ForwardCache::new();
    let out = model.discriminator.forward(&batch, &mut cache)?;
    let (loss_r, grad_r) = neg_mean_log(&out.data()[..n_real], false);
    let (loss_f, grad_f) = neg_mean_log(&out.data()[n_real..], true);
    let mut upstream = grad_r;
    upstream.extend(grad_f);
    let upstream = Matrix::from_vec(batch.rows(), 1, upstream)?;
    let bp = model.discriminator.backward(&cache, &upstream)?;
    Ok(DLoss {
        loss: loss_r + loss_f,
        grads: bp.params,
    })
}

/// Non-saturating adversarial term `-mean log D(G(noise))` and its generator
/// gradient. The discriminator only propagates.
pub fn adversarial_term(model: &GanModel, noise: &Matrix) -> Result<(f64, Gradients)> {
    let mut g_cache = ForwardCache::new();
    let mut d_cache = ForwardCache::new();
    let fake = model.generator.forward(noise, &mut g_cache)?;
    let d = model.discriminator.forward(&fake, &mut d_cache)?;
    let (loss, grad) = neg_mean_log(d.data(), false);
    let upstream = Matrix::from_vec(d.rows(), 1, grad)?;
    let d_fake = model.discriminator.backward_input(&d_cache, &upstream)?;
    let bp = model.generator.backward(&g_cache, &d_fake)?;
    Ok((loss, bp.params))
}

#[derive(Debug, Clone)]
pub struct DistanceTerm {
    pub distance: f64,
    pub grads: Gradients,
    pub assignment: MatchAssignment,
}

/// Mode distance of `G(noise)` against the bank through the frozen encoder,
/// with its generator gradient.
pub fn distance_term(
    model: &GanModel,
    noise: &Matrix,
    bank: &ModeBank,
    encoder: &AutoEncoder,
) -> Result<DistanceTerm> {
    let mut g_cache = ForwardCache::new();
    let mut e_cache = ForwardCache::new();
    let fake = model.generator.forward(noise, &mut g_cache)?;
    let enc = encoder.encode_cached(&fake, &mut e_cache)?;
    let assignment = greedy_match(bank, &enc)?;
    let distance = mode_distance(bank, &assignment)?;
    let d_enc = mode_distance_backward(bank, &assignment, &enc)?;
    let d_fake = encoder.encode_backward(&e_cache, &d_enc)?;
    let bp = model.generator.backward(&g_cache, &d_fake)?;
    Ok(DistanceTerm {
        distance,
        grads: bp.params,
        assignment,
    })
}

#[derive(Debug, Clone)]
pub struct GLoss {
    pub loss: f64,
    pub adversarial: f64,
    pub grads: Gradients,
    pub distance: Option<DistanceTerm>,
}

/// Penalty inputs for one generator update.
#[derive(Clone, Copy)]
pub struct PenaltyInputs<'a> {
    pub noise: &'a Matrix,
    pub bank: &'a ModeBank,
    pub encoder: &'a AutoEncoder,
}

/// Full generator objective. With `lambda_eff == 0` or no penalty inputs this
/// is exactly the non-saturating GAN generator loss.
pub fn g_loss(
    model: &GanModel,
    noise: &Matrix,
    penalty: Option<PenaltyInputs<'_>>,
    lambda_eff: f64,
) -> Result<GLoss> {
    let (adversarial, mut grads) = adversarial_term(model, noise)?;
    let mut loss = adversarial;
    let distance = match penalty {
        Some(p) if lambda_eff > 0.0 => {
            let term = distance_term(model, p.noise, p.bank, p.encoder)?;
            grads.add_scaled(&term.grads, lambda_eff)?;
            loss += lambda_eff * term.distance;
            Some(term)
        }
        _ => None,
    };
    Ok(GLoss {
        loss,
        adversarial,
        grads,
        distance,
    })
}

/// Losses from one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Mode distance this step (0 when the penalty was off).
    pub dist: f64,
    pub lambda_eff: f64,
    pub penalty_active: bool,
}

/// Evaluation snapshot; losses are averaged over the steps since the
/// previous snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub dist: f64,
    pub lambda_eff: f64,
    pub report: EvalReport,
}

/// Hooks invoked while [`Trainer::train`] runs.
pub trait TrainObserver {
    fn on_step(&mut self, _diag: &StepDiagnostics) {}

    fn on_eval(&mut self, _point: &EvalPoint, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps_run: usize,
    pub series: Vec<EvalPoint>,
    pub steps_to_full_coverage: Option<usize>,
}

impl RunSummary {
    pub fn final_report(&self) -> Option<&EvalReport> {
        self.series.last().map(|p| &p.report)
    }
}

/// State of one training run.
pub struct Trainer {
    cfg: GanConfig,
    model: GanModel,
    bank: ModeBank,
    encoder: Arc<AutoEncoder>,
    mixture: Arc<GaussianMixture>,
    reals: Arc<Matrix>,
    metrics: MetricsConfig,
    switch: PenaltySwitch,
    data_rng: SeededRng,
    noise_rng: SeededRng,
    penalty_rng: SeededRng,
    eval_rng: SeededRng,
    step: usize,
}

impl Trainer {
    pub fn new(
        cfg: GanConfig,
        mixture: Arc<GaussianMixture>,
        reals: Arc<Matrix>,
        encoder: Arc<AutoEncoder>,
        metrics: MetricsConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if !encoder.is_frozen() {
            return Err(Error::Usage(
                "GAN training requires a pretrained, frozen encoder".into(),
            ));
        }
        if encoder.data_dim() != mixture.dim() {
            return Err(Error::dims(
                "encoder input vs benchmark dimension",
                mixture.dim(),
                encoder.data_dim(),
            ));
        }
        if reals.cols() != mixture.dim() {
            return Err(Error::dims("training reals", mixture.dim(), reals.cols()));
        }
        let root = SeededRng::new(cfg.seed);
        let model = GanModel::new(mixture.dim(), &cfg, &mut root.fork(streams::INIT))?;
        let bank = extract_mode_bank(
            &reals,
            cfg.bank_size,
            &encoder,
            cfg.history_k,
            &mut root.fork(streams::BANK),
        )?
        .with_normalized_weights(cfg.normalize_weights);
        Ok(Self {
            switch: PenaltySwitch::new(cfg.penalty_patience),
            data_rng: root.fork(streams::DATA),
            noise_rng: root.fork(streams::NOISE),
            penalty_rng: root.fork(streams::PENALTY),
            eval_rng: root.fork(streams::EVAL),
            cfg,
            model,
            bank,
            encoder,
            mixture,
            reals,
            metrics,
            step: 0,
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.cfg
    }

    pub fn model(&self) -> &GanModel {
        &self.model
    }

    pub fn bank(&self) -> &ModeBank {
        &self.bank
    }

    pub fn encoder(&self) -> &AutoEncoder {
        &self.encoder
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn lambda_eff(&self) -> f64 {
        if self.switch.is_active() {
            self.cfg.lambda_p
        } else {
            0.0
        }
    }

    /// One discriminator update on a fresh real batch and noise batch.
    pub fn d_phase(&mut self) -> Result<f64> {
        let idx: Vec<usize> = (0..self.cfg.batch_size)
            .map(|_| self.data_rng.index(self.reals.rows()))
            .collect();
        let reals = self.reals.select_rows(&idx);
        let noise = self
            .noise_rng
            .normal_matrix(self.cfg.batch_size, self.cfg.noise_dim);
        let out = d_loss(&self.model, &reals, &noise)?;
        self.check_finite("d_loss", out.loss)?;
        self.model
            .d_opt
            .step(&mut self.model.discriminator, &out.grads)
            .map_err(|e| self.diverged(e.to_string()))?;
        Ok(out.loss)
    }

    /// One generator update; afterwards the penalty weights absorb this
    /// step's pair distances.
    pub fn g_phase(&mut self) -> Result<(GLoss, f64)> {
        let noise = self
            .noise_rng
            .normal_matrix(self.cfg.batch_size, self.cfg.noise_dim);
        let lambda_eff = self.lambda_eff();
        let penalty_noise = (lambda_eff > 0.0).then(|| {
            self.penalty_rng
                .normal_matrix(self.cfg.bank_size, self.cfg.noise_dim)
        });
        let penalty = penalty_noise.as_ref().map(|noise| PenaltyInputs {
            noise,
            bank: &self.bank,
            encoder: &self.encoder,
        });
        let out = g_loss(&self.model, &noise, penalty, lambda_eff)?;
        self.check_finite("g_loss", out.loss)?;
        self.model
            .g_opt
            .step(&mut self.model.generator, &out.grads)
            .map_err(|e| self.diverged(e.to_string()))?;
        if let (Some(term), true) = (&out.distance, self.cfg.update_weights) {
            self.bank.update_penalty_weights(&term.assignment)?;
        }
        Ok((out, lambda_eff))
    }

    pub fn train_step(&mut self) -> Result<StepDiagnostics> {
        let mut d_total = 0.0;
        for _ in 0..self.cfg.d_steps_per_g {
            d_total += self.d_phase()?;
        }
        let (g, lambda_eff) = self.g_phase()?;
        self.step += 1;
        Ok(StepDiagnostics {
            step: self.step,
            d_loss: d_total / self.cfg.d_steps_per_g as f64,
            g_loss: g.loss,
            dist: g.distance.as_ref().map_or(0.0, |t| t.distance),
            lambda_eff,
            penalty_active: lambda_eff > 0.0,
        })
    }

    /// Draws `n` generator samples from the evaluation stream.
    pub fn generate(&mut self, n: usize) -> Result<Matrix> {
        let z = self.eval_rng.normal_matrix(n, self.cfg.noise_dim);
        self.model.generator.predict(&z)
    }

    /// Evaluates `eval_samples` fresh samples and feeds the penalty switch.
    pub fn evaluate(&mut self) -> Result<EvalReport> {
        let gens = self.generate(self.cfg.eval_samples)?;
        if !gens.all_finite() {
            return Err(self.diverged("generator produced non-finite samples".into()));
        }
        let report = metrics::evaluate(&gens, &self.reals, &self.mixture, &self.metrics)?;
        self.switch.observe(&report);
        Ok(report)
    }

    /// Runs the remaining generator steps with periodic evaluation.
    pub fn train(&mut self, observer: &mut dyn TrainObserver) -> Result<RunSummary> {
        let mut series = Vec::new();
        let mut steps_to_full = None;
        let mut window = Window::default();
        while self.step < self.cfg.total_g_steps {
            let diag = self.train_step()?;
            observer.on_step(&diag);
            window.push(&diag);
            let last = self.step == self.cfg.total_g_steps;
            if self.step % self.cfg.eval_every == 0 || last {
                let report = self.evaluate()?;
                let point = window.finish(self.step, report);
                observer.on_eval(&point, self)?;
                let full = point.report.full_coverage();
                series.push(point);
                if full && steps_to_full.is_none() {
                    steps_to_full = Some(self.step);
                    if self.cfg.stop_at_full_coverage {
                        break;
                    }
                }
            }
        }
        Ok(RunSummary {
            steps_run: self.step,
            series,
            steps_to_full_coverage: steps_to_full,
        })
    }

    fn check_finite(&self, what: &str, v: f64) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(self.diverged(format!("{what} is {v}")))
        }
    }

    fn diverged(&self, detail: String) -> Error {
        Error::Diverged {
            phase: "step",
            index: self.step + 1,
            detail,
        }
    }
}

#[derive(Default)]
struct Window {
    n: usize,
    d: f64,
    g: f64,
    dist: f64,
    lambda: f64,
}

impl Window {
    fn push(&mut self, s: &StepDiagnostics) {
        self.n += 1;
        self.d += s.d_loss;
        self.g += s.g_loss;
        self.dist += s.dist;
        self.lambda = s.lambda_eff;
    }

    fn finish(&mut self, step: usize, report: EvalReport) -> EvalPoint {
        let n = self.n.max(1) as f64;
        let p = EvalPoint {
            step,
            d_loss: self.d / n,
            g_loss: self.g / n,
            dist: self.dist / n,
            lambda_eff: self.lambda,
            report,
        };
        *self = Window::default();
        p
    }
}
