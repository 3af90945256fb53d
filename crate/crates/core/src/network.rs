//! Two-layer ReLU network with a frozen second layer.
//!
//! `f(x) = sum_k s_k (kappa2 / sqrt(m)) relu(<b_k, x>)`, where the first half
//! of the neurons carry `s_k = +1` and the second half `s_k = -1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Dataset, TrainingSet};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, scaled};
use crate::record::{Record, RecordWriter};

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// Row-major `m x dim` first-layer weights; row `k` is `b_k`.
    pub weights: Vec<f64>,
    pub signs: Vec<f64>,
    pub kappa1: f64,
    pub kappa2: f64,
    pub m: usize,
    pub dim: usize,
    /// Continuous time reached so far.
    pub time: f64,
    /// Number of integration steps taken.
    pub step: u64,
}

/// Polar view of one neuron, `b = rho * w`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronView {
    pub rho: f64,
    /// `None` when the neuron is the zero vector.
    pub w: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NeuronPattern {
    /// Pre-activation on `x_plus` is strictly above the boundary tolerance.
    pub plus: bool,
    pub minus: bool,
    pub plus_boundary: bool,
    pub minus_boundary: bool,
}

impl NeuronPattern {
    pub fn living(&self) -> bool {
        self.plus || self.minus
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternMatrix {
    pub neurons: Vec<NeuronPattern>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarPoint {
    /// In `(-pi, pi]`, measured from `x_minus` towards `x_plus`.
    pub angle: Option<f64>,
    pub radius: f64,
}

pub fn sign_of(k: usize, m: usize) -> f64 {
    if k < m / 2 {
        1.0
    } else {
        -1.0
    }
}

/// Draws `b_k = (kappa1 / sqrt(m)) u_k` with `u_k` uniform on the sphere.
pub fn init(m: usize, dim: usize, kappa1: f64, kappa2: f64, seed: u64) -> Result<NetworkState> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::OddWidth(m));
    }
    if dim < 2 {
        return Err(Error::BadDimension(dim));
    }
    if !(kappa1 > 0.0 && kappa1 < kappa2 && kappa2 <= 1.0) {
        return Err(Error::BadScales { kappa1, kappa2 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = kappa1 / (m as f64).sqrt();
    let mut weights = Vec::with_capacity(m * dim);
    for _ in 0..m {
        let u = loop {
            let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&g);
            if n > 1e-12 {
                break scaled(scale / n, &g);
            }
        };
        weights.extend(u);
    }
    Ok(NetworkState {
        weights,
        signs: (0..m).map(|k| sign_of(k, m)).collect(),
        kappa1,
        kappa2,
        m,
        dim,
        time: 0.0,
        step: 0,
    })
}

impl NetworkState {
    /// Builds a state from explicit weights; used by analysis code and tests.
    pub fn from_weights(weights: Vec<f64>, m: usize, kappa1: f64, kappa2: f64) -> Self {
        let dim = weights.len() / m;
        assert_eq!(dim * m, weights.len(), "weights must be m x dim");
        NetworkState {
            weights,
            signs: (0..m).map(|k| sign_of(k, m)).collect(),
            kappa1,
            kappa2,
            m,
            dim,
            time: 0.0,
            step: 0,
        }
    }

    /// Second-layer magnitude `kappa2 / sqrt(m)`.
    pub fn scale(&self) -> f64 {
        self.kappa2 / (self.m as f64).sqrt()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.weights[k * self.dim..(k + 1) * self.dim]
    }

    pub fn neuron_view(&self, k: usize) -> NeuronView {
        let b = self.row(k);
        let rho = norm(b);
        let w = (rho > 0.0).then(|| scaled(1.0 / rho, b));
        NeuronView { rho, w }
    }

    pub fn default_boundary_tol(&self) -> f64 {
        1e-9 * self.kappa2
    }
}

pub fn predict(state: &NetworkState, x: &[f64]) -> f64 {
    let c = state.scale();
    (0..state.m)
        .map(|k| state.signs[k] * dot(state.row(k), x).max(0.0))
        .sum::<f64>()
        * c
}

pub fn predictions(state: &NetworkState, ts: &TrainingSet) -> Vec<f64> {
    ts.points.iter().map(|x| predict(state, x)).collect()
}

pub fn loss_from_predictions(ts: &TrainingSet, f: &[f64]) -> f64 {
    ts.weights
        .iter()
        .zip(&ts.labels)
        .zip(f)
        .map(|((w, y), fi)| w * (-y * fi).exp())
        .sum()
}

/// A margin of exactly zero counts as a mistake.
/// Weighted fraction of correctly classified points. Normalising by the
/// total weight makes full accuracy exactly 1 despite rounding in the sum.
pub fn accuracy_from_predictions(ts: &TrainingSet, f: &[f64]) -> f64 {
    let correct: f64 = ts
        .weights
        .iter()
        .zip(&ts.labels)
        .zip(f)
        .map(|((w, y), fi)| if y * fi > 0.0 { *w } else { 0.0 })
        .sum();
    correct / ts.weights.iter().sum::<f64>()
}

pub fn empirical_loss(state: &NetworkState, ds: &Dataset) -> f64 {
    let ts = TrainingSet::from_dataset(ds);
    loss_from_predictions(&ts, &predictions(state, &ts))
}

pub fn train_accuracy(state: &NetworkState, ds: &Dataset) -> f64 {
    let ts = TrainingSet::from_dataset(ds);
    accuracy_from_predictions(&ts, &predictions(state, &ts))
}

pub fn pattern_of(b: &[f64], ds: &Dataset, tol: f64) -> NeuronPattern {
    let ap = dot(b, &ds.x_plus);
    let am = dot(b, &ds.x_minus);
    NeuronPattern {
        plus: ap > tol,
        minus: am > tol,
        plus_boundary: ap.abs() <= tol,
        minus_boundary: am.abs() <= tol,
    }
}

pub fn patterns(state: &NetworkState, ds: &Dataset, boundary_tol: f64) -> PatternMatrix {
    PatternMatrix {
        neurons: (0..state.m)
            .map(|k| pattern_of(state.row(k), ds, boundary_tol))
            .collect(),
    }
}

pub fn polar_projection(state: &NetworkState, ds: &Dataset) -> Vec<PolarPoint> {
    let (e1, e2) = ds.plane_basis();
    (0..state.m)
        .map(|k| {
            let b = state.row(k);
            let (u, v) = (dot(b, &e1), dot(b, &e2));
            let radius = u.hypot(v);
            if radius <= 1e-12 * norm(b) || radius == 0.0 {
                PolarPoint {
                    angle: None,
                    radius: 0.0,
                }
            } else {
                PolarPoint {
                    angle: Some(v.atan2(u)),
                    radius,
                }
            }
        })
        .collect()
}

fn pattern_code(p: &NeuronPattern) -> String {
    let bit = |on: bool, boundary: bool| match (on, boundary) {
        (true, _) => '1',
        (false, true) => 'b',
        (false, false) => '0',
    };
    format!("{}{}", bit(p.plus, p.plus_boundary), bit(p.minus, p.minus_boundary))
}

/// Structured snapshot of the full state plus derived observables.
pub fn snapshot_record(state: &NetworkState, ds: &Dataset) -> String {
    let ts = TrainingSet::from_dataset(ds);
    let f = predictions(state, &ts);
    let pats = patterns(state, ds, state.default_boundary_tol());
    let codes: Vec<String> = pats.neurons.iter().map(pattern_code).collect();
    let mut w = RecordWriter::new();
    w.float("time", state.time)
        .raw("step", state.step)
        .raw("m", state.m)
        .raw("dim", state.dim)
        .float("kappa1", state.kappa1)
        .float("kappa2", state.kappa2)
        .float("f_plus", f[0])
        .float("f_minus", f[1])
        .float("loss", loss_from_predictions(&ts, &f))
        .float("accuracy", accuracy_from_predictions(&ts, &f))
        .raw("patterns", codes.join(","))
        .vec("weights", &state.weights);
    w.finish()
}

pub fn state_from_snapshot_record(text: &str) -> Result<NetworkState> {
    let r = Record::parse(text)?;
    let m: usize = r.require("m")?;
    let dim: usize = r.require("dim")?;
    let weights = r.require_vec("weights")?;
    if weights.len() != m * dim {
        return Err(Error::Parse(format!(
            "expected {} weights, found {}",
            m * dim,
            weights.len()
        )));
    }
    let mut state = NetworkState::from_weights(weights, m, r.require("kappa1")?, r.require("kappa2")?);
    state.time = r.require("time")?;
    state.step = r.require("step")?;
    Ok(state)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build, key_directions, DatasetSpec};
    use std::f64::consts::PI;

    fn ds() -> Dataset {
        build(DatasetSpec {
            delta: PI / 15.0,
            n_plus: 12,
            n_minus: 3,
            dim: 20,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn init_norms_are_exact() {
        let s = init(100, 20, 0.1, 1.0, 9).unwrap();
        for k in 0..100 {
            assert!((norm(s.row(k)) - 0.01).abs() < 1e-15);
        }
        assert_eq!(s, init(100, 20, 0.1, 1.0, 9).unwrap());
        assert_eq!(s.signs[49], 1.0);
        assert_eq!(s.signs[50], -1.0);
    }

    #[test]
    fn init_predictions_bounded_by_kappa_product() {
        let d = ds();
        for seed in 0..20 {
            let s = init(100, 20, 0.1, 1.0, seed).unwrap();
            assert!(predict(&s, &d.x_plus).abs() <= 0.1);
            assert!(predict(&s, &d.x_minus).abs() <= 0.1);
        }
    }

    #[test]
    fn init_rejects_bad_inputs() {
        assert!(matches!(init(3, 20, 0.1, 1.0, 0), Err(Error::OddWidth(3))));
        assert!(matches!(init(4, 20, 1.0, 1.0, 0), Err(Error::BadScales { .. })));
        assert!(matches!(init(4, 20, 0.1, 1.5, 0), Err(Error::BadScales { .. })));
        assert!(matches!(init(4, 20, 0.0, 1.0, 0), Err(Error::BadScales { .. })));
    }

    #[test]
    fn single_active_neuron() {
        let d = ds();
        let mut w = d.x_plus.clone();
        w.extend(crate::linalg::scaled(-1.0, &d.x_plus));
        let s = NetworkState::from_weights(w, 2, 0.1, 1.0);
        assert!((predict(&s, &d.x_plus) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dead_network_predicts_zero_and_loss_one() {
        let d = ds();
        let mu = key_directions(&d).mu;
        let mut w = Vec::new();
        for _ in 0..4 {
            w.extend(crate::linalg::scaled(-1.0, &mu));
        }
        let s = NetworkState::from_weights(w, 4, 0.1, 1.0);
        assert_eq!(predict(&s, &d.x_plus), 0.0);
        assert_eq!(predict(&s, &d.x_minus), 0.0);
        assert!((empirical_loss(&s, &d) - 1.0).abs() < 1e-15);
        let zero = NetworkState::from_weights(vec![0.0; 80], 4, 0.1, 1.0);
        assert_eq!(empirical_loss(&zero, &d), 1.0);
    }

    #[test]
    fn loss_and_accuracy_arithmetic() {
        let ts = TrainingSet {
            points: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            labels: vec![1.0, -1.0],
            weights: vec![0.5, 0.5],
        };
        let ln2 = 2f64.ln();
        assert!((loss_from_predictions(&ts, &[ln2, -ln2]) - 0.5).abs() < 1e-15);
        let ts4 = TrainingSet::from_dataset(&ds());
        assert!((accuracy_from_predictions(&ts4, &[1.0, 1.0]) - 0.8).abs() < 1e-15);
        assert_eq!(accuracy_from_predictions(&ts4, &[1.0, -1.0]), 1.0);
        assert_eq!(accuracy_from_predictions(&ts4, &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn pattern_examples() {
        let d = ds();
        let k = key_directions(&d);
        let mut w = k.x_plus_perp.clone();
        w.extend(crate::linalg::scaled(-1.0, &k.mu));
        w.extend(vec![0.0; 20]);
        w.extend(d.x_plus.clone());
        let s = NetworkState::from_weights(w, 4, 0.1, 1.0);
        let pm = patterns(&s, &d, 1e-9);
        let n = &pm.neurons;
        assert!(!n[0].plus && n[0].plus_boundary && n[0].minus && !n[0].minus_boundary);
        assert!(!n[1].plus && !n[1].minus && !n[1].plus_boundary && !n[1].minus_boundary);
        assert!(!n[2].plus && !n[2].minus && n[2].plus_boundary && n[2].minus_boundary);
        assert!(n[3].plus && n[3].minus);
    }

    #[test]
    fn polar_examples() {
        let d = ds();
        let (e1, e2) = d.plane_basis();
        // Orthogonal to the plane: Gram-Schmidt a third direction.
        let mut g: Vec<f64> = (0..20).map(|i| (i as f64 + 1.0).sin()).collect();
        for e in [&e1, &e2] {
            let c = dot(&g, e);
            crate::linalg::axpy(-c, e, &mut g);
        }
        let mut w = crate::linalg::scaled(2.0, &d.x_minus);
        w.extend(crate::linalg::scaled(3.0, &d.x_plus));
        w.extend(g);
        w.extend(vec![0.0; 20]);
        let s = NetworkState::from_weights(w, 4, 0.1, 1.0);
        let pp = polar_projection(&s, &d);
        assert!(pp[0].angle.unwrap().abs() < 1e-14 && (pp[0].radius - 2.0).abs() < 1e-14);
        assert!((pp[1].angle.unwrap() - d.delta()).abs() < 1e-14);
        assert!((pp[1].radius - 3.0).abs() < 1e-14);
        assert!(pp[2].angle.is_none() && pp[2].radius == 0.0);
        assert!(pp[3].angle.is_none());
    }

    #[test]
    fn snapshot_round_trip() {
        let d = ds();
        let mut s = init(10, 20, 0.1, 1.0, 4).unwrap();
        s.time = 1.25;
        s.step = 125;
        let back = state_from_snapshot_record(&snapshot_record(&s, &d)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn neuron_view_reconstructs() {
        let s = init(6, 20, 0.1, 1.0, 1).unwrap();
        for k in 0..6 {
            let v = s.neuron_view(k);
            let w = v.w.unwrap();
            for i in 0..20 {
                assert!((v.rho * w[i] - s.row(k)[i]).abs() < 1e-10);
            }
        }
        let z = NetworkState::from_weights(vec![0.0; 4], 2, 0.1, 1.0);
        assert!(z.neuron_view(0).w.is_none());
    }
}
