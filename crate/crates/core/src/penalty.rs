//! Mode bank, greedy generated-to-mode matching, the weighted mode distance
//! loss and its per-mode penalty weights.
//!
//! A fixed bank of encoded real samples stands in for the target modes. Each
//! iteration the generated encodings are matched to the bank greedily: the
//! generated sample farthest from the bank centroid picks its nearest
//! unmatched mode first, and so on until one side runs out. The loss is the
//! mean over pairs of `w_p * ||x_r - x_g||`, where `w_p` is the mean distance
//! the mode has seen over its last `k` matches, so modes the generator keeps
//! missing weigh more.

use std::collections::VecDeque;
use std::io::Write;

use crate::autoencoder::AutoEncoder;
use crate::data::squared_distance;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::EvalReport;
use crate::rng::SeededRng;

/// Encoded real samples standing in for the target modes, with per-mode
/// distance history and penalty weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBank {
    modes: Matrix,
    centroid: Vec<f64>,
    history: Vec<VecDeque<f64>>,
    weights: Vec<f64>,
    k: usize,
    normalize: bool,
}

/// One generated-to-mode pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub generated: usize,
    pub mode: usize,
    pub distance: f64,
}

/// Partial bijection between generated samples and bank modes, in the order
/// the pairs were formed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchAssignment {
    pub pairs: Vec<MatchPair>,
}

impl MatchAssignment {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().map(|p| p.distance)
    }
}

impl ModeBank {
    /// Bank over the given encoded modes; histories empty, weights 1.
    pub fn new(modes: Matrix, k: usize) -> Result<Self> {
        if modes.rows() == 0 || modes.cols() == 0 {
            return Err(Error::Config("mode bank needs at least one mode".into()));
        }
        if k == 0 {
            return Err(Error::Config("penalty history length k must be >= 1".into()));
        }
        if !modes.all_finite() {
            return Err(Error::NonFinite {
                path: "mode bank encodings".into(),
            });
        }
        let n = modes.rows();
        Ok(Self {
            centroid: modes.column_means(),
            history: vec![VecDeque::with_capacity(k); n],
            weights: vec![1.0; n],
            k,
            normalize: false,
            modes,
        })
    }

    /// When set, the loss uses `w_p / mean(w)` instead of the raw weights.
    pub fn with_normalized_weights(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn len(&self) -> usize {
        self.modes.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.rows() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.modes.cols()
    }

    pub fn modes(&self) -> &Matrix {
        &self.modes
    }

    pub fn centroid(&self) -> &[f64] {
        &self.centroid
    }

    pub fn history_len(&self) -> usize {
        self.k
    }

    pub fn history(&self, mode: usize) -> &VecDeque<f64> {
        &self.history[mode]
    }

    /// Raw per-mode penalty weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight the loss applies to `mode`.
    pub fn effective_weight(&self, mode: usize) -> f64 {
        let w = self.weights[mode];
        if !self.normalize {
            return w;
        }
        let mean = self.weights.iter().sum::<f64>() / self.weights.len() as f64;
        if mean > 0.0 {
            w / mean
        } else {
            w
        }
    }

    fn effective_weights(&self) -> Vec<f64> {
        (0..self.len()).map(|m| self.effective_weight(m)).collect()
    }

    /// Pushes this iteration's pair distances into each matched mode's
    /// history (evicting the oldest beyond `k`) and resets its weight to the
    /// history mean. Unmatched modes are left alone.
    pub fn update_penalty_weights(&mut self, assignment: &MatchAssignment) -> Result<()> {
        self.check_assignment(assignment)?;
        for p in &assignment.pairs {
            let h = &mut self.history[p.mode];
            h.push_back(p.distance);
            if h.len() > self.k {
                h.pop_front();
            }
            self.weights[p.mode] = h.iter().sum::<f64>() / h.len() as f64;
        }
        Ok(())
    }

    fn check_assignment(&self, assignment: &MatchAssignment) -> Result<()> {
        if let Some(p) = assignment.pairs.iter().find(|p| p.mode >= self.len()) {
            return Err(Error::Usage(format!(
                "assignment refers to mode {} of a {}-mode bank",
                p.mode,
                self.len()
            )));
        }
        Ok(())
    }

    /// Writes `m0,...,m{d-1},w` rows, one per mode.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.latent_dim()).map(|i| format!("m{i}")).collect();
        header.push("w".into());
        let io = |e: csv::Error| Error::io("<bank csv>", std::io::Error::other(e.to_string()));
        w.write_record(&header).map_err(io)?;
        for (row, weight) in self.modes.iter_rows().zip(&self.weights) {
            let fields = row.iter().chain(std::iter::once(weight)).map(|v| format!("{v:.16e}"));
            w.write_record(fields).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("<bank csv>", e))
    }
}

/// Encodes `n` real samples drawn uniformly without replacement.
pub fn extract_mode_bank(
    reals: &Matrix,
    n: usize,
    encoder: &AutoEncoder,
    k: usize,
    rng: &mut SeededRng,
) -> Result<ModeBank> {
    if !encoder.is_frozen() {
        return Err(Error::Usage(
            "mode bank must be extracted with a frozen encoder".into(),
        ));
    }
    if n == 0 || n > reals.rows() {
        return Err(Error::Config(format!(
            "bank size {n} must be between 1 and the {} available real samples",
            reals.rows()
        )));
    }
    let picked = rand::seq::index::sample(rng, reals.rows(), n).into_vec();
    let modes = encoder.encode(&reals.select_rows(&picked))?;
    ModeBank::new(modes, k)
}

/// Greedy matching: repeatedly take the unmatched generated encoding
/// farthest from the bank centroid and pair it with its nearest unmatched
/// mode. Ties go to the lowest index on both sides.
pub fn greedy_match(bank: &ModeBank, gen_encodings: &Matrix) -> Result<MatchAssignment> {
    if gen_encodings.rows() == 0 {
        return Err(Error::Config("greedy_match needs generated encodings".into()));
    }
    if gen_encodings.cols() != bank.latent_dim() {
        return Err(Error::dims(
            "greedy_match encodings",
            bank.latent_dim(),
            gen_encodings.cols(),
        ));
    }
    let centroid = bank.centroid();
    let mut order: Vec<(usize, f64)> = gen_encodings
        .iter_rows()
        .enumerate()
        .map(|(i, row)| (i, squared_distance(row, centroid)))
        .collect();
    // Stable sort keeps lower indices first among equal distances.
    order.sort_by(|a, b| b.1.total_cmp(&a.1));

    let n_pairs = gen_encodings.rows().min(bank.len());
    let mut taken = vec![false; bank.len()];
    let mut pairs = Vec::with_capacity(n_pairs);
    for &(g, _) in order.iter().take(n_pairs) {
        let x = gen_encodings.row(g);
        let mut best: Option<(usize, f64)> = None;
        for (m, mode) in bank.modes.iter_rows().enumerate() {
            if taken[m] {
                continue;
            }
            let d2 = squared_distance(x, mode);
            if best.is_none_or(|(_, b)| d2 < b) {
                best = Some((m, d2));
            }
        }
        let (m, d2) = best.expect("fewer pairs than modes");
        taken[m] = true;
        pairs.push(MatchPair {
            generated: g,
            mode: m,
            distance: d2.sqrt(),
        });
    }
    Ok(MatchAssignment { pairs })
}

/// Mean over pairs of `w_p * distance`. Weights enter as constants.
pub fn mode_distance(bank: &ModeBank, assignment: &MatchAssignment) -> Result<f64> {
    bank.check_assignment(assignment)?;
    if assignment.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = assignment
        .pairs
        .iter()
        .map(|p| bank.effective_weight(p.mode) * p.distance)
        .sum();
    Ok(total / assignment.len() as f64)
}

/// Gradient of [`mode_distance`] with respect to the generated encodings,
/// holding the assignment and the weights fixed. Each matched row gets
/// `w_p (x_g - x_r) / (||x_g - x_r|| * pairs)`; unmatched rows and coincident
/// pairs get zero.
pub fn mode_distance_backward(
    bank: &ModeBank,
    assignment: &MatchAssignment,
    gen_encodings: &Matrix,
) -> Result<Matrix> {
    bank.check_assignment(assignment)?;
    if gen_encodings.cols() != bank.latent_dim() {
        return Err(Error::dims(
            "mode_distance_backward encodings",
            bank.latent_dim(),
            gen_encodings.cols(),
        ));
    }
    let mut grad = Matrix::zeros(gen_encodings.rows(), gen_encodings.cols());
    if assignment.is_empty() {
        return Ok(grad);
    }
    let weights = bank.effective_weights();
    let n = assignment.len() as f64;
    for p in &assignment.pairs {
        if p.generated >= gen_encodings.rows() {
            return Err(Error::Usage(format!(
                "assignment refers to generated row {} of {}",
                p.generated,
                gen_encodings.rows()
            )));
        }
        let x = gen_encodings.row(p.generated);
        let r = bank.modes.row(p.mode);
        let dist = squared_distance(x, r).sqrt();
        if dist == 0.0 {
            continue;
        }
        let scale = weights[p.mode] / (dist * n);
        for ((g, xv), rv) in grad.row_mut(p.generated).iter_mut().zip(x).zip(r) {
            *g = scale * (xv - rv);
        }
    }
    Ok(grad)
}

/// Latch that disables the penalty once full coverage has held for
/// `patience` consecutive evaluations. It never re-activates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PenaltySwitch {
    patience: usize,
    streak: usize,
    active: bool,
}

impl PenaltySwitch {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            streak: 0,
            active: true,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Feeds one evaluation and returns whether the penalty stays on.
    pub fn observe(&mut self, report: &EvalReport) -> bool {
        self.observe_coverage(report.modes_found, report.max_modes())
    }

    pub fn observe_coverage(&mut self, modes_found: usize, max_modes: usize) -> bool {
        if !self.active {
            return false;
        }
        if modes_found >= max_modes {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        if self.streak >= self.patience {
            self.active = false;
        }
        self.active
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank_of(rows: &[[f64; 2]], k: usize) -> ModeBank {
        ModeBank::new(Matrix::from_rows(rows).unwrap(), k).unwrap()
    }

    #[test]
    fn self_matching_is_zero() {
        let rows = [[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5], [4.0, -1.0]];
        let bank = bank_of(&rows, 5);
        let gens = Matrix::from_rows(&rows).unwrap();
        let a = greedy_match(&bank, &gens).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.distances().all(|d| d == 0.0));
        assert_eq!(mode_distance(&bank, &a).unwrap(), 0.0);
    }

    #[test]
    fn hand_executed_example() {
        let bank = bank_of(&[[0.0, 0.0], [10.0, 0.0]], 5);
        assert_eq!(bank.centroid(), &[5.0, 0.0]);
        let gens = Matrix::from_rows(&[[9.0, 0.0], [0.0, 1.0]]).unwrap();
        let a = greedy_match(&bank, &gens).unwrap();
        assert_eq!(
            a.pairs,
            vec![
                MatchPair { generated: 1, mode: 0, distance: 1.0 },
                MatchPair { generated: 0, mode: 1, distance: 1.0 },
            ]
        );
        assert_eq!(mode_distance(&bank, &a).unwrap(), 1.0);
    }

    #[test]
    fn weighted_distance_arithmetic() {
        let mut bank = bank_of(&[[0.0, 0.0], [10.0, 0.0]], 5);
        bank.weights = vec![2.0, 0.0];
        let a = MatchAssignment {
            pairs: vec![
                MatchPair { generated: 0, mode: 0, distance: 3.0 },
                MatchPair { generated: 1, mode: 1, distance: 7.0 },
            ],
        };
        assert_eq!(mode_distance(&bank, &a).unwrap(), 3.0);
    }

    #[test]
    fn unit_vector_gradient() {
        let bank = bank_of(&[[0.0, 0.0]], 5);
        let gens = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let a = greedy_match(&bank, &gens).unwrap();
        let g = mode_distance_backward(&bank, &a, &gens).unwrap();
        assert!((g.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((g.get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn coincident_and_unmatched_rows_get_zero_gradient() {
        let bank = bank_of(&[[1.0, 1.0]], 5);
        let gens = Matrix::from_rows(&[[1.0, 1.0], [0.5, 0.5]]).unwrap();
        let a = greedy_match(&bank, &gens).unwrap();
        // (0.5, 0.5) is farther from the centroid and takes the only mode.
        assert_eq!(a.pairs[0].generated, 1);
        let g = mode_distance_backward(&bank, &a, &gens).unwrap();
        assert_eq!(g.row(0), &[0.0, 0.0]);

        let gens = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let a = greedy_match(&bank, &gens).unwrap();
        let g = mode_distance_backward(&bank, &a, &gens).unwrap();
        assert_eq!(g.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn weight_history_ring_buffer() {
        let mut bank = bank_of(&[[0.0, 0.0]], 3);
        let push = |bank: &mut ModeBank, d: f64| {
            let a = MatchAssignment {
                pairs: vec![MatchPair { generated: 0, mode: 0, distance: d }],
            };
            bank.update_penalty_weights(&a).unwrap();
        };
        push(&mut bank, 4.0);
        assert_eq!(bank.weights(), &[4.0]);
        push(&mut bank, 1.0);
        push(&mut bank, 1.0);
        push(&mut bank, 1.0);
        assert_eq!(bank.weights(), &[1.0]);

        let mut bank = bank_of(&[[0.0, 0.0]], 3);
        for d in [1.0, 2.0, 3.0] {
            push(&mut bank, d);
        }
        assert_eq!(bank.weights(), &[2.0]);

        let mut bank = bank_of(&[[0.0, 0.0]], 2);
        for d in [5.0, 1.0, 3.0] {
            push(&mut bank, d);
        }
        assert_eq!(bank.weights(), &[2.0]);
        assert_eq!(bank.history(0).len(), 2);
    }

    #[test]
    fn unmatched_modes_keep_stale_weights() {
        let mut bank = bank_of(&[[0.0, 0.0], [5.0, 5.0]], 4);
        let gens = Matrix::from_rows(&[[4.0, 4.0]]).unwrap();
        let a = greedy_match(&bank, &gens).unwrap();
        bank.update_penalty_weights(&a).unwrap();
        assert_eq!(bank.weights()[0], 1.0);
        assert!(bank.history(0).is_empty());
        assert!((bank.weights()[1] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn normalized_weights_have_unit_mean() {
        let mut bank = bank_of(&[[0.0, 0.0], [1.0, 0.0]], 4).with_normalized_weights(true);
        bank.weights = vec![1.0, 3.0];
        assert_eq!(bank.effective_weight(0), 0.5);
        assert_eq!(bank.effective_weight(1), 1.5);
    }

    #[test]
    fn switch_latches_off() {
        let mut s = PenaltySwitch::new(3);
        assert!(s.observe_coverage(7, 8));
        assert!(s.observe_coverage(8, 8));
        assert!(s.observe_coverage(8, 8));
        assert!(s.observe_coverage(7, 8));
        assert!(s.observe_coverage(8, 8));
        assert!(s.observe_coverage(8, 8));
        assert!(!s.observe_coverage(8, 8));
        assert!(!s.observe_coverage(1, 8));
        assert!(!s.is_active());
    }

    #[test]
    fn input_errors() {
        let bank = bank_of(&[[0.0, 0.0]], 1);
        assert!(greedy_match(&bank, &Matrix::zeros(0, 2)).is_err());
        assert!(greedy_match(&bank, &Matrix::zeros(2, 3)).is_err());
        assert!(ModeBank::new(Matrix::zeros(2, 2), 0).is_err());
        let bad = MatchAssignment {
            pairs: vec![MatchPair { generated: 0, mode: 3, distance: 1.0 }],
        };
        assert!(mode_distance(&bank, &bad).is_err());
    }

    #[test]
    fn bank_csv_layout() {
        let bank = bank_of(&[[0.5, -1.0]], 2);
        let mut buf = Vec::new();
        bank.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("m0,m1,w"));
        let fields: Vec<f64> = lines.next().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields, vec![0.5, -1.0, 1.0]);
    }
}
