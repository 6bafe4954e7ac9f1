//! Autoencoder pretraining and the frozen encoder used to measure mode
//! distances.

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Activation, DenseNet, ForwardCache, InitScheme};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoder {
    encoder: DenseNet,
    decoder: DenseNet,
    frozen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Starting step size. Decays geometrically to
    /// `learning_rate * final_lr_fraction` at the last epoch (a fraction of 0
    /// means a cosine down to zero).
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    /// Final reconstruction MSE above this is reported as not converged.
    pub loss_threshold: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            final_lr_fraction: 1e-4,
            loss_threshold: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Reconstruction MSE over the full training set after each epoch.
    pub losses: Vec<f64>,
    pub converged: bool,
}

impl PretrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

impl AutoEncoder {
    /// Encoder `data_dim -> hidden... -> latent_dim` with relu hidden layers
    /// and identity output; the decoder mirrors it.
    pub fn new(
        data_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut encoder =
            DenseNet::mlp(data_dim, hidden, latent_dim, Activation::Relu, Activation::Identity)?;
        let rev: Vec<usize> = hidden.iter().rev().copied().collect();
        let mut decoder =
            DenseNet::mlp(latent_dim, &rev, data_dim, Activation::Relu, Activation::Identity)?;
        encoder.init_params(InitScheme::Auto, rng);
        decoder.init_params(InitScheme::Auto, rng);
        Ok(Self {
            encoder,
            decoder,
            frozen: false,
        })
    }

    /// Pairs an encoder and decoder; the result is unfrozen.
    pub fn from_parts(encoder: DenseNet, decoder: DenseNet) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::dims(
                "AutoEncoder latent width",
                encoder.output_dim(),
                decoder.input_dim(),
            ));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(Error::dims(
                "AutoEncoder reconstruction width",
                encoder.input_dim(),
                decoder.output_dim(),
            ));
        }
        Ok(Self {
            encoder,
            decoder,
            frozen: false,
        })
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNet {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Permanently fixes the parameters.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn encoder_checksum(&self) -> [u8; 32] {
        self.encoder.checksum()
    }

    /// Minimizes reconstruction MSE with Adam (beta1 0.9).
    pub fn pretrain(
        &mut self,
        reals: &Matrix,
        cfg: &PretrainConfig,
        rng: &mut SeededRng,
    ) -> Result<PretrainReport> {
        if self.frozen {
            return Err(Error::Usage("cannot pretrain a frozen autoencoder".into()));
        }
        if reals.rows() == 0 {
            return Err(Error::Config("pretraining set is empty".into()));
        }
        if reals.cols() != self.data_dim() {
            return Err(Error::dims("pretrain data columns", self.data_dim(), reals.cols()));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(Error::Config("pretraining epochs and batch size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&cfg.final_lr_fraction) {
            return Err(Error::Config(format!(
                "ae.final_lr_fraction must be in [0, 1], got {}",
                cfg.final_lr_fraction
            )));
        }
        let adam = AdamConfig::standard(cfg.learning_rate);
        let mut enc_opt = AdamState::new(&self.encoder, adam)?;
        let mut dec_opt = AdamState::new(&self.decoder, adam)?;
        let mut enc_cache = ForwardCache::new();
        let mut dec_cache = ForwardCache::new();
        let mut order: Vec<usize> = (0..reals.rows()).collect();
        let mut losses = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            let lr = decayed_rate(cfg, epoch);
            enc_opt.config.learning_rate = lr;
            dec_opt.config.learning_rate = lr;
            shuffle(&mut order, rng);
            for chunk in order.chunks(cfg.batch_size) {
                let x = reals.select_rows(chunk);
                let z = self.encoder.forward(&x, &mut enc_cache)?;
                let recon = self.decoder.forward(&z, &mut dec_cache)?;
                let scale = 2.0 / x.data().len() as f64;
                let mut upstream = recon;
                for (u, t) in upstream.data_mut().iter_mut().zip(x.data()) {
                    *u = scale * (*u - t);
                }
                let dec = self.decoder.backward(&dec_cache, &upstream)?;
                let enc = self.encoder.backward(&enc_cache, &dec.input)?;
                let diverged = |e: Error| Error::Diverged {
                    phase: "epoch",
                    index: epoch,
                    detail: e.to_string(),
                };
                dec_opt.step(&mut self.decoder, &dec.params).map_err(diverged)?;
                enc_opt.step(&mut self.encoder, &enc.params).map_err(diverged)?;
            }
            let loss = self.reconstruction_mse(reals)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    phase: "epoch",
                    index: epoch,
                    detail: format!("reconstruction loss is {loss}"),
                });
            }
            losses.push(loss);
        }
        let converged = losses.last().is_some_and(|&l| l <= cfg.loss_threshold);
        if !converged {
            log::warn!(
                "autoencoder pretraining ended at MSE {:?}, above threshold {}",
                losses.last(),
                cfg.loss_threshold
            );
        }
        Ok(PretrainReport { losses, converged })
    }

    pub fn reconstruction_mse(&self, batch: &Matrix) -> Result<f64> {
        let recon = self.reconstruct(batch)?;
        if batch.is_empty() {
            return Ok(0.0);
        }
        let sse: f64 = recon
            .data()
            .iter()
            .zip(batch.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sse / batch.data().len() as f64)
    }

    pub fn reconstruct(&self, batch: &Matrix) -> Result<Matrix> {
        self.decode(&self.encode(batch)?)
    }

    /// Maps data rows to the encoded space.
    pub fn encode(&self, batch: &Matrix) -> Result<Matrix> {
        self.encoder.predict(batch)
    }

    pub fn decode(&self, latent: &Matrix) -> Result<Matrix> {
        self.decoder.predict(latent)
    }

    /// Encodes while recording activations for [`AutoEncoder::encode_backward`].
    /// Only a frozen autoencoder may sit inside a differentiated chain.
    pub fn encode_cached(&self, batch: &Matrix, cache: &mut ForwardCache) -> Result<Matrix> {
        self.require_frozen()?;
        self.encoder.forward(batch, cache)
    }

    /// Propagates dLoss/dEncoding back to dLoss/dInput. Parameters are never
    /// touched.
    pub fn encode_backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Matrix> {
        self.require_frozen()?;
        self.encoder.backward_input(cache, upstream)
    }

    fn require_frozen(&self) -> Result<()> {
        if !self.frozen {
            return Err(Error::Usage(
                "encoder must be pretrained and frozen before it is used in GAN training".into(),
            ));
        }
        Ok(())
    }
}

fn decayed_rate(cfg: &PretrainConfig, epoch: usize) -> f64 {
    let progress = if cfg.epochs > 1 {
        epoch as f64 / (cfg.epochs - 1) as f64
    } else {
        0.0
    };
    if cfg.final_lr_fraction == 0.0 {
        return cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    }
    cfg.learning_rate * cfg.final_lr_fraction.powf(progress)
}

fn shuffle(order: &mut [usize], rng: &mut SeededRng) {
    for i in (1..order.len()).rev() {
        let j = rng.index(i + 1);
        order.swap(i, j);
    }
}
