//! Synthetic mixture-of-Gaussians targets and sample dumps.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand_distr::{Dirichlet, Distribution};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SeededRng;

/// The four synthetic benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Benchmark {
    Ring8,
    Grid25,
    Random25,
    Cube27,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Ring8,
        Benchmark::Grid25,
        Benchmark::Random25,
        Benchmark::Cube27,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Ring8 => "ring8",
            Benchmark::Grid25 => "grid25",
            Benchmark::Random25 => "random25",
            Benchmark::Cube27 => "cube27",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Benchmark::Cube27 => 3,
            _ => 2,
        }
    }

    pub fn n_modes(self) -> usize {
        match self {
            Benchmark::Ring8 => 8,
            Benchmark::Grid25 | Benchmark::Random25 => 25,
            Benchmark::Cube27 => 27,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s.trim())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown benchmark `{s}` (expected ring8, grid25, random25 or cube27)"
                ))
            })
    }
}

/// Geometry of the benchmark constructors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkParams {
    pub ring_radius: f64,
    pub ring_std: f64,
    pub grid_spacing: f64,
    pub grid_std: f64,
    /// random25 means are drawn uniformly from `[-half_width, half_width]^2`.
    pub random_half_width: f64,
    pub random_std: f64,
    /// Symmetric Dirichlet concentration for random25 weights.
    pub random_concentration: f64,
    /// Minimum distance between random25 means (rejection sampled).
    pub random_min_separation: f64,
    pub cube_spacing: f64,
    pub cube_std: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            ring_radius: 2.0,
            ring_std: 0.02,
            grid_spacing: 2.0,
            grid_std: 0.05,
            random_half_width: 4.0,
            random_std: 0.05,
            random_concentration: 5.0,
            random_min_separation: 1.0,
            cube_spacing: 2.0,
            cube_std: 0.05,
        }
    }
}

/// Mixture of isotropic Gaussians. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    means: Vec<Vec<f64>>,
    stds: Vec<f64>,
    weights: Vec<f64>,
    /// Running sums of `weights`, for inverse-CDF component selection.
    cumulative: Vec<f64>,
}

impl GaussianMixture {
    /// Validates and normalizes the weights. A zero standard deviation is
    /// accepted and gives point masses.
    pub fn new(means: Vec<Vec<f64>>, stds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if stds.len() != k || weights.len() != k {
            return Err(Error::dims(
                "GaussianMixture::new component lists",
                k,
                format!("{} stds / {} weights", stds.len(), weights.len()),
            ));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::Config("component means must share a nonzero dimension".into()));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("component means must be finite".into()));
        }
        if stds.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("standard deviations must be finite and >= 0".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("weights sum to {total}, expected 1")));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self {
            dim,
            means,
            stds,
            weights,
            cumulative,
        })
    }

    pub fn equal_weights(means: Vec<Vec<f64>>, std: f64) -> Result<Self> {
        let k = means.len();
        Self::new(means, vec![std; k], vec![1.0 / k as f64; k])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Draws `n` samples: a component by weight, then isotropic noise around its mean.
    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Matrix {
        let mut out = Matrix::zeros(n, self.dim);
        for i in 0..n {
            let c = self.pick_component(rng);
            let (mean, std) = (&self.means[c], self.stds[c]);
            for (x, m) in out.row_mut(i).iter_mut().zip(mean) {
                *x = m + std * rng.normal();
            }
        }
        out
    }

    fn pick_component(&self, rng: &mut SeededRng) -> usize {
        let u = rng.uniform(0.0, 1.0);
        let i = self.cumulative.partition_point(|&c| c <= u);
        // Guard against the last running sum landing a hair below 1.
        i.min(self.means.len() - 1)
    }

    /// Index of the closest component mean and its Euclidean distance;
    /// ties go to the lowest index.
    pub fn nearest_mode(&self, point: &[f64]) -> Result<(usize, f64)> {
        if point.len() != self.dim {
            return Err(Error::dims("nearest_mode point", self.dim, point.len()));
        }
        let mut best = (0, f64::INFINITY);
        for (i, m) in self.means.iter().enumerate() {
            let d2 = squared_distance(point, m);
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        Ok((best.0, best.1.sqrt()))
    }

    /// Smallest Euclidean distance between two distinct component means.
    pub fn min_mean_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.means.len() {
            for j in i + 1..self.means.len() {
                best = best.min(squared_distance(&self.means[i], &self.means[j]).sqrt());
            }
        }
        best
    }
}

const RANDOM_COMPONENTS: usize = 25;

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lattice(axis: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for _ in 0..dim {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

fn centered_axis(count: usize, spacing: f64) -> Vec<f64> {
    let half = (count as f64 - 1.0) / 2.0;
    (0..count).map(|i| (i as f64 - half) * spacing).collect()
}

/// Builds one of the canonical benchmark mixtures. Only `random25` consumes
/// randomness.
pub fn make_benchmark(
    benchmark: Benchmark,
    params: &BenchmarkParams,
    rng: &mut SeededRng,
) -> Result<GaussianMixture> {
    match benchmark {
        Benchmark::Ring8 => {
            let means = (0..8)
                .map(|i| {
                    let theta = i as f64 * std::f64::consts::FRAC_PI_4;
                    vec![params.ring_radius * theta.cos(), params.ring_radius * theta.sin()]
                })
                .collect();
            GaussianMixture::equal_weights(means, params.ring_std)
        }
        Benchmark::Grid25 => GaussianMixture::equal_weights(
            lattice(&centered_axis(5, params.grid_spacing), 2),
            params.grid_std,
        ),
        Benchmark::Cube27 => GaussianMixture::equal_weights(
            lattice(&centered_axis(3, params.cube_spacing), 3),
            params.cube_std,
        ),
        Benchmark::Random25 => random_mixture(params, rng),
    }
}

fn random_mixture(params: &BenchmarkParams, rng: &mut SeededRng) -> Result<GaussianMixture> {
    let k = RANDOM_COMPONENTS;
    let w = params.random_half_width;
    let min_sep2 = params.random_min_separation.powi(2);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0usize;
    while means.len() < k {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config(format!(
                "cannot place {k} means with separation {} inside ±{w}",
                params.random_min_separation
            )));
        }
        let cand = vec![rng.uniform(-w, w), rng.uniform(-w, w)];
        if means.iter().all(|m| squared_distance(m, &cand) >= min_sep2) {
            means.push(cand);
        }
    }
    let dirichlet = Dirichlet::new([params.random_concentration; RANDOM_COMPONENTS])
        .map_err(|e| Error::Config(format!("invalid Dirichlet concentration: {e}")))?;
    let weights = dirichlet.sample(rng).to_vec();
    GaussianMixture::new(means, vec![params.random_std; k], weights)
}

/// Writes samples as CSV with header `x0,x1[,x2]` and 17 significant digits.
pub fn write_samples_csv<W: Write>(out: W, samples: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (0..samples.cols()).map(|i| format!("x{i}")).collect();
    w.write_record(&header).map_err(csv_err)?;
    for row in samples.iter_rows() {
        w.write_record(row.iter().map(|v| format!("{v:.16e}")))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Reads a sample dump. `source_name` labels errors, which carry the
/// 1-based line number of the offending row.
pub fn read_samples_csv<R: Read>(input: R, source_name: &str) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(parse_err(1, "empty file: missing header row".into()));
    }
    for (i, name) in header.iter().enumerate() {
        if name != format!("x{i}") {
            return Err(parse_err(1, format!("expected column `x{i}`, found `{name}`")));
        }
    }
    let dim = header.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() != dim {
            return Err(parse_err(
                line,
                format!("expected {dim} fields, found {}", record.len()),
            ));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{field}`")));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(2, "no samples after header".into()));
    }
    Matrix::from_vec(rows, dim, data)
}

fn csv_err(e: csv::Error) -> Error {
    Error::io("<csv output>", std::io::Error::other(e.to_string()))
}
