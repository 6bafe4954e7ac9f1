//! Oracles and fixtures shared by several test targets.
#![allow(dead_code)]

use modegan::gan::GanModel;
use modegan::penalty::mode_distance;
use modegan::*;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn activation(tag: u8) -> Activation {
    match tag % 5 {
        0 => Activation::Tanh,
        1 => Activation::Sigmoid,
        2 => Activation::Identity,
        3 => Activation::LeakyRelu(0.2),
        _ => Activation::Relu,
    }
}

pub fn random_net(dims: &[usize], tags: &[u8], rng: &mut SeededRng) -> DenseNet {
    let acts: Vec<Activation> = tags.iter().map(|&t| activation(t)).collect();
    let mut net = DenseNet::new(dims, &acts).unwrap();
    net.init_params(InitScheme::Glorot, rng);
    // Nonzero biases so kinks are not all aligned at the origin.
    for layer in net.param_slices_mut().into_iter().skip(1).step_by(2) {
        for b in layer {
            *b = 0.3 * rng.normal();
        }
    }
    net
}

pub fn near_kink(net: &DenseNet, cache: &ForwardCache) -> bool {
    net.layers()
        .iter()
        .zip(cache.pre_activations())
        .any(|(layer, pre)| {
            matches!(layer.activation, Activation::Relu | Activation::LeakyRelu(_))
                && pre.data().iter().any(|z| z.abs() < 1e-3)
        })
}

pub fn flatten(g: &Gradients) -> Vec<f64> {
    g.slices().concat()
}

/// Central differences of `loss` over every parameter of `net`.
pub fn numeric_param_grad(net: &mut DenseNet, loss: impl Fn(&DenseNet) -> f64) -> Vec<f64> {
    let n_slices = net.param_slices().len();
    let mut out = Vec::new();
    for s in 0..n_slices {
        let len = net.param_slices()[s].len();
        for i in 0..len {
            let orig = net.param_slices()[s][i];
            net.param_slices_mut()[s][i] = orig + H;
            let up = loss(net);
            net.param_slices_mut()[s][i] = orig - H;
            let down = loss(net);
            net.param_slices_mut()[s][i] = orig;
            out.push((up - down) / (2.0 * H));
        }
    }
    out
}

pub fn numeric_input_grad(x: &Matrix, loss: impl Fn(&Matrix) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.data().len());
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + H;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - H;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * H));
    }
    out
}

pub fn weighted_sum(out: &Matrix, r: &Matrix) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Bank with distinct, non-unit weights from a fabricated history.
pub fn weighted_bank(modes: Matrix, rng: &mut SeededRng) -> ModeBank {
    let n = modes.rows();
    let mut bank = ModeBank::new(modes, 3).unwrap();
    let pairs = (0..n)
        .map(|m| MatchPair {
            generated: m,
            mode: m,
            distance: rng.uniform(0.2, 2.0),
        })
        .collect();
    bank.update_penalty_weights(&MatchAssignment { pairs }).unwrap();
    bank
}

/// `mode_distance` for `enc` with the assignment's pairing held fixed.
pub fn fixed_pair_distance(bank: &ModeBank, assignment: &MatchAssignment, enc: &Matrix) -> f64 {
    let pairs = assignment
        .pairs
        .iter()
        .map(|p| {
            let d: f64 = enc
                .row(p.generated)
                .iter()
                .zip(bank.modes().row(p.mode))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            MatchPair { distance: d, ..*p }
        })
        .collect();
    mode_distance(bank, &MatchAssignment { pairs }).unwrap()
}

pub fn min_pair_distance(a: &MatchAssignment) -> f64 {
    a.distances().fold(f64::INFINITY, f64::min)
}

pub fn small_gan(seed: u64, noise_dim: usize, hidden: usize, act: Activation) -> GanModel {
    let cfg = GanConfig {
        noise_dim,
        gen_hidden: vec![hidden, hidden],
        disc_hidden: vec![hidden],
        hidden_activation: act,
        ..GanConfig::default()
    };
    GanModel::new(2, &cfg, &mut SeededRng::new(seed)).unwrap()
}

pub fn tanh_autoencoder(rng: &mut SeededRng) -> AutoEncoder {
    let mut enc = DenseNet::mlp(2, &[6], 2, Activation::Tanh, Activation::Identity).unwrap();
    enc.init_params(InitScheme::Glorot, rng);
    let mut dec = DenseNet::mlp(2, &[6], 2, Activation::Tanh, Activation::Identity).unwrap();
    dec.init_params(InitScheme::Glorot, rng);
    let mut ae = AutoEncoder::from_parts(enc, dec).unwrap();
    ae.freeze();
    ae
}

/// Independent re-implementation of the matching procedure, one literal
/// step at a time: repeatedly take the farthest not-yet-used generated point
/// from the bank centroid, then pair it with the nearest unused bank point.
pub fn step_by_step(modes: &[Vec<f64>], gens: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let dim = modes[0].len();
    let mut centroid = vec![0.0; dim];
    for m in modes {
        for j in 0..dim {
            centroid[j] += m[j];
        }
    }
    for c in &mut centroid {
        *c /= modes.len() as f64;
    }
    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };

    let mut gen_used = vec![false; gens.len()];
    let mut mode_used = vec![false; modes.len()];
    let mut out = Vec::new();
    while out.len() < gens.len().min(modes.len()) {
        let mut far: Option<usize> = None;
        for g in 0..gens.len() {
            if gen_used[g] {
                continue;
            }
            match far {
                None => far = Some(g),
                Some(f) if sq(&gens[g], &centroid) > sq(&gens[f], &centroid) => far = Some(g),
                _ => {}
            }
        }
        let g = far.unwrap();
        gen_used[g] = true;
        let mut near: Option<usize> = None;
        for m in 0..modes.len() {
            if mode_used[m] {
                continue;
            }
            match near {
                None => near = Some(m),
                Some(n) if sq(&gens[g], &modes[m]) < sq(&gens[g], &modes[n]) => near = Some(m),
                _ => {}
            }
        }
        let m = near.unwrap();
        mode_used[m] = true;
        out.push((g, m));
    }
    out
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

/// Small-integer coordinates so exact ties occur often.
pub fn lattice_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.index(5) as f64 - 2.0).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

