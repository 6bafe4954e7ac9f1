//! Coverage and distribution metrics: modes found, high-quality-sample ratio
//! and grid-histogram Jensen-Shannon divergence.

use crate::data::GaussianMixture;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const JSD_SMOOTHING: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    /// A sample is high quality within `sigma_mult` standard deviations of its nearest mean.
    pub sigma_mult: f64,
    /// High-quality hits needed before a mode counts as found.
    pub hit_min: usize,
    /// Histogram bins per axis; `None` picks 30 in 2D and 15 in 3D.
    pub bins: Option<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            sigma_mult: 3.0,
            hit_min: 1,
            bins: None,
        }
    }
}

impl MetricsConfig {
    pub fn bins_for(&self, dim: usize) -> usize {
        self.bins.unwrap_or(if dim <= 2 { 30 } else { 15 })
    }
}

/// One evaluation pass over a generated sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub modes_found: usize,
    pub hqs: f64,
    pub jsd: f64,
    pub per_mode_hits: Vec<usize>,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn max_modes(&self) -> usize {
        self.per_mode_hits.len()
    }

    pub fn full_coverage(&self) -> bool {
        self.modes_found == self.max_modes()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoverage {
    pub modes_found: usize,
    pub hqs: f64,
    pub per_mode_hits: Vec<usize>,
}

/// Counts high-quality samples per mixture component.
pub fn modes_and_hqs(
    samples: &Matrix,
    mix: &GaussianMixture,
    sigma_mult: f64,
    hit_min: usize,
) -> Result<ModeCoverage> {
    if samples.cols() != mix.dim() {
        return Err(Error::dims("modes_and_hqs samples", mix.dim(), samples.cols()));
    }
    let mut hits = vec![0usize; mix.n_components()];
    for row in samples.iter_rows() {
        let (c, d) = mix.nearest_mode(row)?;
        if d <= sigma_mult * mix.stds()[c] {
            hits[c] += 1;
        }
    }
    let hq: usize = hits.iter().sum();
    let hit_min = hit_min.max(1);
    Ok(ModeCoverage {
        modes_found: hits.iter().filter(|&&h| h >= hit_min).count(),
        hqs: if samples.rows() == 0 {
            0.0
        } else {
            hq as f64 / samples.rows() as f64
        },
        per_mode_hits: hits,
    })
}

/// Axis-aligned box shared by both histograms in a JSD comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GridBox {
    /// Bounding box of `points`, widened by `pad_frac` of its extent on each side.
    pub fn padded(points: &Matrix, pad_frac: f64) -> Result<Self> {
        if points.rows() == 0 || points.cols() == 0 {
            return Err(Error::Config("cannot bound an empty sample set".into()));
        }
        let d = points.cols();
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for row in points.iter_rows() {
            for (i, &v) in row.iter().enumerate() {
                lower[i] = lower[i].min(v);
                upper[i] = upper[i].max(v);
            }
        }
        for i in 0..d {
            let extent = upper[i] - lower[i];
            // Degenerate axis: give it unit width so the grid stays well defined.
            let pad = if extent > 0.0 { pad_frac * extent } else { 0.5 };
            lower[i] -= pad;
            upper[i] += pad;
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// Counts on a `bins^d` grid plus one overflow cell for out-of-box points.
#[derive(Debug, Clone, PartialEq)]
pub struct GridHistogram {
    pub bounds: GridBox,
    pub bins: usize,
    pub counts: Vec<u64>,
    pub overflow: u64,
}

impl GridHistogram {
    pub fn build(bounds: &GridBox, bins: usize, samples: &Matrix) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin per axis".into()));
        }
        let d = bounds.dim();
        if samples.cols() != d {
            return Err(Error::dims("GridHistogram samples", d, samples.cols()));
        }
        let cells = bins
            .checked_pow(d as u32)
            .filter(|&c| c <= 1 << 26)
            .ok_or_else(|| Error::Config(format!("{bins}^{d} histogram cells is too many")))?;
        let mut counts = vec![0u64; cells];
        let mut overflow = 0;
        'rows: for row in samples.iter_rows() {
            let mut cell = 0usize;
            for (a, &v) in row.iter().enumerate() {
                let (lo, hi) = (bounds.lower[a], bounds.upper[a]);
                if !(v >= lo && v <= hi) {
                    overflow += 1;
                    continue 'rows;
                }
                let idx = (((v - lo) / (hi - lo)) * bins as f64) as usize;
                cell = cell * bins + idx.min(bins - 1);
            }
            counts[cell] += 1;
        }
        Ok(Self {
            bounds: bounds.clone(),
            bins,
            counts,
            overflow,
        })
    }

    pub fn in_box(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts with the overflow cell appended.
    pub fn cells(&self) -> Vec<u64> {
        let mut c = self.counts.clone();
        c.push(self.overflow);
        c
    }
}

fn smoothed_distribution(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let n = total.max(1) as f64;
    let norm = 1.0 + JSD_SMOOTHING * counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 / n + JSD_SMOOTHING) / norm)
        .collect()
}

/// Jensen-Shannon divergence (natural log) between two probability vectors.
/// Terms are combined symmetrically so `jsd(p, q) == jsd(q, p)` bit for bit.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dims("jsd distributions", p.len(), q.len()));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        let term = |x: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
        let (ta, tb) = (term(a), term(b));
        // Sum in a fixed order so swapping p and q cannot change rounding.
        let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        total += lo + hi;
    }
    Ok((0.5 * total).clamp(0.0, std::f64::consts::LN_2))
}

/// JSD between two count vectors after normalization and additive smoothing.
pub fn jsd_counts(a: &[u64], b: &[u64]) -> Result<f64> {
    jsd(&smoothed_distribution(a), &smoothed_distribution(b))
}

/// JSD of two sample sets histogrammed in a fixed box.
pub fn jsd_in_box(bounds: &GridBox, bins: usize, a: &Matrix, b: &Matrix) -> Result<f64> {
    let ha = GridHistogram::build(bounds, bins, a)?;
    let hb = GridHistogram::build(bounds, bins, b)?;
    jsd_counts(&ha.cells(), &hb.cells())
}

/// JSD between real and generated samples on a grid over the real-data box
/// padded by 5%.
pub fn jsd_grid(reals: &Matrix, gens: &Matrix, bins: usize) -> Result<f64> {
    if reals.rows() == 0 || gens.rows() == 0 {
        return Err(Error::Config("jsd_grid needs nonempty sample sets".into()));
    }
    if reals.cols() != gens.cols() {
        return Err(Error::dims("jsd_grid sample width", reals.cols(), gens.cols()));
    }
    let bounds = GridBox::padded(reals, 0.05)?;
    jsd_in_box(&bounds, bins, reals, gens)
}

/// Full evaluation of generated samples against the mixture and a reference
/// set of real samples.
pub fn evaluate(
    gens: &Matrix,
    reals: &Matrix,
    mix: &GaussianMixture,
    cfg: &MetricsConfig,
) -> Result<EvalReport> {
    let cov = modes_and_hqs(gens, mix, cfg.sigma_mult, cfg.hit_min)?;
    let jsd = jsd_grid(reals, gens, cfg.bins_for(mix.dim()))?;
    Ok(EvalReport {
        modes_found: cov.modes_found,
        hqs: cov.hqs,
        jsd,
        per_mode_hits: cov.per_mode_hits,
        n_samples: gens.rows(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config(format!(
                "mean/std needs at least 2 values, got {}",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub runs: usize,
    pub modes: MeanStd,
    pub hqs: MeanStd,
    pub jsd: MeanStd,
}

pub fn aggregate_runs(reports: &[EvalReport]) -> Result<Aggregate> {
    let col = |f: fn(&EvalReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    Ok(Aggregate {
        runs: reports.len(),
        modes: MeanStd::of(&col(|r| r.modes_found as f64))?,
        hqs: MeanStd::of(&col(|r| r.hqs))?,
        jsd: MeanStd::of(&col(|r| r.jsd))?,
    })
}
