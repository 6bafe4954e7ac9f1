//! Experiment configuration in a flat `section.key = value` text format.
//!
//! ```text
//! # comments and blank lines are ignored
//! experiment.benchmark = grid25
//! gan.lambda_p = 3
//! gan.gen_hidden = 128,128,128
//! ```
//!
//! `experiment.benchmark` is required; every other key has a default.
//! Unknown or repeated keys are errors. [`ExperimentConfig::to_text`] writes
//! every key with its resolved value, and parsing that text gives back an
//! identical config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autoencoder::PretrainConfig;
use crate::data::{Benchmark, BenchmarkParams};
use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::metrics::MetricsConfig;
use crate::nn::Activation;

#[derive(Debug, Clone, PartialEq)]
pub struct AeConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub pretrain: PretrainConfig,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            latent_dim: 2,
            pretrain: PretrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub runs: usize,
    /// Run `i` uses seed `seed_base + i`; autoencoder pretraining uses `seed_base`.
    pub seed_base: u64,
    pub parallel: usize,
    /// Generator steps between checkpoints; 0 writes only the initial and final ones.
    pub checkpoint_every: usize,
    pub out_dir: Option<PathBuf>,
    /// Seeds the mixture geometry (random25) and the training set, shared by all runs.
    pub mixture_seed: u64,
    pub n_train: usize,
    pub data: BenchmarkParams,
    pub ae: AeConfig,
    /// `gan.seed` is not read from the file; it is derived per run.
    pub gan: GanConfig,
    pub metrics: MetricsConfig,
}

impl ExperimentConfig {
    pub fn new(benchmark: Benchmark) -> Self {
        Self {
            benchmark,
            runs: 1,
            seed_base: 0,
            parallel: 1,
            checkpoint_every: 10_000,
            out_dir: None,
            mixture_seed: 1234,
            n_train: 20_000,
            data: BenchmarkParams::default(),
            ae: AeConfig::default(),
            gan: GanConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("experiment.runs must be >= 1".into()));
        }
        if self.parallel == 0 {
            return Err(Error::Config("experiment.parallel must be >= 1".into()));
        }
        if self.n_train == 0 {
            return Err(Error::Config("data.n_train must be >= 1".into()));
        }
        if self.gan.bank_size > self.n_train {
            return Err(Error::Config(format!(
                "gan.bank_size {} exceeds data.n_train {}",
                self.gan.bank_size, self.n_train
            )));
        }
        if self.ae.latent_dim == 0 {
            return Err(Error::Config("ae.latent_dim must be >= 1".into()));
        }
        if self.metrics.hit_min == 0 {
            return Err(Error::Config("metrics.hit_min must be >= 1".into()));
        }
        if !(self.metrics.sigma_mult > 0.0) {
            return Err(Error::Config("metrics.sigma_mult must be > 0".into()));
        }
        self.gan.validate()
    }

    /// GAN config for run `index` of this experiment.
    pub fn run_gan_config(&self, index: usize) -> GanConfig {
        GanConfig {
            seed: self.seed_base + index as u64,
            ..self.gan.clone()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                source_name: source_name.into(),
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let key = key.trim().to_string();
            if entries
                .insert(key.clone(), (line, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    source_name: source_name.into(),
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        let mut r = Fields {
            entries,
            source_name,
        };
        let benchmark: Benchmark = r
            .take_raw("experiment.benchmark")
            .ok_or_else(|| {
                Error::Config(format!(
                    "{source_name}: missing required field `experiment.benchmark`"
                ))
            })
            .and_then(|(line, v)| {
                v.parse().map_err(|e: Error| Error::Parse {
                    source_name: source_name.into(),
                    line,
                    message: e.to_string(),
                })
            })?;
        let d = ExperimentConfig::new(benchmark);
        let cfg = ExperimentConfig {
            benchmark,
            runs: r.get("experiment.runs", d.runs)?,
            seed_base: r.get("experiment.seed_base", d.seed_base)?,
            parallel: r.get("experiment.parallel", d.parallel)?,
            checkpoint_every: r.get("experiment.checkpoint_every", d.checkpoint_every)?,
            out_dir: r.take_raw("experiment.out_dir").map(|(_, v)| PathBuf::from(v)),
            mixture_seed: r.get("data.mixture_seed", d.mixture_seed)?,
            n_train: r.get("data.n_train", d.n_train)?,
            data: BenchmarkParams {
                ring_radius: r.get("data.ring_radius", d.data.ring_radius)?,
                ring_std: r.get("data.ring_std", d.data.ring_std)?,
                grid_spacing: r.get("data.grid_spacing", d.data.grid_spacing)?,
                grid_std: r.get("data.grid_std", d.data.grid_std)?,
                random_half_width: r.get("data.random_half_width", d.data.random_half_width)?,
                random_std: r.get("data.random_std", d.data.random_std)?,
                random_concentration: r
                    .get("data.random_concentration", d.data.random_concentration)?,
                random_min_separation: r
                    .get("data.random_min_separation", d.data.random_min_separation)?,
                cube_spacing: r.get("data.cube_spacing", d.data.cube_spacing)?,
                cube_std: r.get("data.cube_std", d.data.cube_std)?,
            },
            ae: AeConfig {
                hidden: r.get_list("ae.hidden", &d.ae.hidden)?,
                latent_dim: r.get("ae.latent_dim", d.ae.latent_dim)?,
                pretrain: PretrainConfig {
                    epochs: r.get("ae.epochs", d.ae.pretrain.epochs)?,
                    batch_size: r.get("ae.batch_size", d.ae.pretrain.batch_size)?,
                    learning_rate: r.get("ae.learning_rate", d.ae.pretrain.learning_rate)?,
                    final_lr_fraction: r.get(
                        "ae.final_lr_fraction",
                        d.ae.pretrain.final_lr_fraction,
                    )?,
                    loss_threshold: r.get("ae.loss_threshold", d.ae.pretrain.loss_threshold)?,
                },
            },
            gan: GanConfig {
                noise_dim: r.get("gan.noise_dim", d.gan.noise_dim)?,
                gen_hidden: r.get_list("gan.gen_hidden", &d.gan.gen_hidden)?,
                disc_hidden: r.get_list("gan.disc_hidden", &d.gan.disc_hidden)?,
                hidden_activation: r.get_with("gan.hidden_activation", d.gan.hidden_activation, Activation::parse)?,
                lambda_p: r.get("gan.lambda_p", d.gan.lambda_p)?,
                learning_rate: r.get("gan.learning_rate", d.gan.learning_rate)?,
                beta1: r.get("gan.beta1", d.gan.beta1)?,
                beta2: r.get("gan.beta2", d.gan.beta2)?,
                epsilon: r.get("gan.epsilon", d.gan.epsilon)?,
                batch_size: r.get("gan.batch_size", d.gan.batch_size)?,
                bank_size: r.get("gan.bank_size", d.gan.bank_size)?,
                history_k: r.get("gan.history_k", d.gan.history_k)?,
                d_steps_per_g: r.get("gan.d_steps_per_g", d.gan.d_steps_per_g)?,
                total_g_steps: r.get("gan.total_g_steps", d.gan.total_g_steps)?,
                eval_every: r.get("gan.eval_every", d.gan.eval_every)?,
                eval_samples: r.get("gan.eval_samples", d.gan.eval_samples)?,
                seed: 0,
                penalty_patience: r.get("gan.penalty_patience", d.gan.penalty_patience)?,
                update_weights: r.get("gan.update_weights", d.gan.update_weights)?,
                normalize_weights: r.get("gan.normalize_weights", d.gan.normalize_weights)?,
                stop_at_full_coverage: r
                    .get("gan.stop_at_full_coverage", d.gan.stop_at_full_coverage)?,
            },
            metrics: MetricsConfig {
                sigma_mult: r.get("metrics.sigma_mult", d.metrics.sigma_mult)?,
                hit_min: r.get("metrics.hit_min", d.metrics.hit_min)?,
                bins: r.get_with("metrics.bins", d.metrics.bins, parse_bins)?,
            },
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("experiment.benchmark", self.benchmark.to_string());
        kv("experiment.runs", self.runs.to_string());
        kv("experiment.seed_base", self.seed_base.to_string());
        kv("experiment.parallel", self.parallel.to_string());
        kv("experiment.checkpoint_every", self.checkpoint_every.to_string());
        if let Some(dir) = &self.out_dir {
            kv("experiment.out_dir", dir.display().to_string());
        }
        kv("data.mixture_seed", self.mixture_seed.to_string());
        kv("data.n_train", self.n_train.to_string());
        let d = &self.data;
        kv("data.ring_radius", real(d.ring_radius));
        kv("data.ring_std", real(d.ring_std));
        kv("data.grid_spacing", real(d.grid_spacing));
        kv("data.grid_std", real(d.grid_std));
        kv("data.random_half_width", real(d.random_half_width));
        kv("data.random_std", real(d.random_std));
        kv("data.random_concentration", real(d.random_concentration));
        kv("data.random_min_separation", real(d.random_min_separation));
        kv("data.cube_spacing", real(d.cube_spacing));
        kv("data.cube_std", real(d.cube_std));
        kv("ae.hidden", list(&self.ae.hidden));
        kv("ae.latent_dim", self.ae.latent_dim.to_string());
        kv("ae.epochs", self.ae.pretrain.epochs.to_string());
        kv("ae.batch_size", self.ae.pretrain.batch_size.to_string());
        kv("ae.learning_rate", real(self.ae.pretrain.learning_rate));
        kv("ae.final_lr_fraction", real(self.ae.pretrain.final_lr_fraction));
        kv("ae.loss_threshold", real(self.ae.pretrain.loss_threshold));
        let g = &self.gan;
        kv("gan.noise_dim", g.noise_dim.to_string());
        kv("gan.gen_hidden", list(&g.gen_hidden));
        kv("gan.disc_hidden", list(&g.disc_hidden));
        kv("gan.hidden_activation", g.hidden_activation.to_string());
        kv("gan.lambda_p", real(g.lambda_p));
        kv("gan.learning_rate", real(g.learning_rate));
        kv("gan.beta1", real(g.beta1));
        kv("gan.beta2", real(g.beta2));
        kv("gan.epsilon", real(g.epsilon));
        kv("gan.batch_size", g.batch_size.to_string());
        kv("gan.bank_size", g.bank_size.to_string());
        kv("gan.history_k", g.history_k.to_string());
        kv("gan.d_steps_per_g", g.d_steps_per_g.to_string());
        kv("gan.total_g_steps", g.total_g_steps.to_string());
        kv("gan.eval_every", g.eval_every.to_string());
        kv("gan.eval_samples", g.eval_samples.to_string());
        kv("gan.penalty_patience", g.penalty_patience.to_string());
        kv("gan.update_weights", g.update_weights.to_string());
        kv("gan.normalize_weights", g.normalize_weights.to_string());
        kv("gan.stop_at_full_coverage", g.stop_at_full_coverage.to_string());
        kv("metrics.sigma_mult", real(self.metrics.sigma_mult));
        kv("metrics.hit_min", self.metrics.hit_min.to_string());
        kv(
            "metrics.bins",
            self.metrics
                .bins
                .map_or_else(|| "auto".to_string(), |b| b.to_string()),
        );
        s
    }
}

fn real(v: f64) -> String {
    // Debug formatting is the shortest representation that parses back exactly.
    format!("{v:?}")
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_bins(s: &str) -> Result<Option<usize>> {
    if s == "auto" {
        return Ok(None);
    }
    s.parse::<usize>()
        .ok()
        .filter(|&b| b > 0)
        .map(Some)
        .ok_or_else(|| Error::Config(format!("expected `auto` or a positive integer, found `{s}`")))
}

struct Fields<'a> {
    entries: BTreeMap<String, (usize, String)>,
    source_name: &'a str,
}

impl Fields<'_> {
    fn take_raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn get_with<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
        match self.take_raw(key) {
            None => Ok(default),
            Some((line, v)) => parse(&v).map_err(|e| Error::Parse {
                source_name: self.source_name.into(),
                line,
                message: format!("field `{key}`: {e}"),
            }),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        self.get_with(key, default, |s| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("cannot parse `{s}`")))
        })
    }

    fn get_list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        self.get_with(key, default.to_vec(), |s| {
            s.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&v| v > 0)
                        .ok_or_else(|| Error::Config(format!("bad layer width `{p}`")))
                })
                .collect()
        })
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(Error::Parse {
                source_name: self.source_name.into(),
                line,
                message: format!("unknown field `{key}`"),
            });
        }
        Ok(())
    }
}
