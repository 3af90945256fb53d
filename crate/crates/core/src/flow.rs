//! Gradient-flow integrator.
//!
//! Each neuron moves along `s_k (kappa2/sqrt(m)) sum_i y_i w_i e^{-y_i f_i}
//! sigma'(<b_k, x_i>) x_i`. The right-hand side jumps across the surfaces
//! `<b, x_i> = 0`; in `filippov` mode a neuron that is pushed into a surface
//! from both sides slides along it instead of chattering.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Dataset, TrainingSet};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::network::{
    accuracy_from_predictions, loss_from_predictions, polar_projection, NeuronPattern, NetworkState,
    PatternMatrix,
};
use crate::record::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    PlainGd,
    #[default]
    Filippov,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain_gd" => Ok(Mode::PlainGd),
            "filippov" => Ok(Mode::Filippov),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::PlainGd => "plain_gd",
            Mode::Filippov => "filippov",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Continuous-time increment per Euler step.
    pub eta: f64,
    pub t_max: f64,
    pub snapshot_stride: u64,
    /// Capture radius around a switching surface; `None` picks
    /// [`FlowConfig::default_sliding_tol`].
    pub sliding_tol: Option<f64>,
    pub mode: Mode,
    /// Times at which a full snapshot is forced at the nearest step.
    pub mark_times: Vec<f64>,
}

impl FlowConfig {
    pub fn new(eta: f64, t_max: f64) -> Self {
        FlowConfig {
            eta,
            t_max,
            snapshot_stride: 100,
            sliding_tol: None,
            mode: Mode::Filippov,
            mark_times: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config(format!("t_max must be non-negative, got {}", self.t_max)));
        }
        if let Some(tol) = self.sliding_tol {
            if !(tol >= 0.0) {
                return Err(Error::Config(format!("sliding_tol must be non-negative, got {tol}")));
            }
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Config("snapshot_stride must be positive".into()));
        }
        Ok(())
    }

    /// Sliding neurons sit on their surface to rounding error, and crossings
    /// are caught by the sign-change rule, so the band only needs to absorb
    /// rounding.
    pub fn default_sliding_tol(state: &NetworkState) -> f64 {
        1e-8 * state.kappa2
    }

    pub fn sliding_tol_for(&self, state: &NetworkState) -> f64 {
        self.sliding_tol
            .unwrap_or_else(|| Self::default_sliding_tol(state))
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_max / self.eta).round() as u64
    }
}

/// Precomputed geometry of the training points.
#[derive(Debug, Clone)]
struct Geometry {
    points: Vec<Vec<f64>>,
    labels: Vec<f64>,
    weights: Vec<f64>,
    lens: Vec<f64>,
    normals: Vec<Vec<f64>>,
    /// `cross[i * n + j] = <x_j, n_i>`.
    cross: Vec<f64>,
    plus_idx: usize,
    minus_idx: usize,
}

impl Geometry {
    fn new(ts: &TrainingSet, ds: &Dataset) -> Self {
        let n = ts.len();
        let lens: Vec<f64> = ts.points.iter().map(|x| norm(x)).collect();
        let normals: Vec<Vec<f64>> = ts
            .points
            .iter()
            .zip(&lens)
            .map(|(x, l)| x.iter().map(|v| v / l).collect())
            .collect();
        let mut cross = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cross[i * n + j] = dot(&ts.points[j], &normals[i]);
            }
        }
        let find = |target: &[f64], fallback: usize| {
            ts.points
                .iter()
                .position(|x| x.as_slice() == target)
                .unwrap_or(fallback)
        };
        Geometry {
            points: ts.points.clone(),
            labels: ts.labels.clone(),
            weights: ts.weights.clone(),
            lens,
            normals,
            cross,
            plus_idx: find(&ds.x_plus, 0),
            minus_idx: find(&ds.x_minus, 1.min(n - 1)),
        }
    }

    fn n(&self) -> usize {
        self.points.len()
    }

    /// `y_i w_i e^{-y_i f_i}`: the signed weight of point `i` in every field.
    fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.labels[i] * self.weights[i] * (-self.labels[i] * f[i]).exp())
            .collect()
    }
}

/// Gradient-flow field of every neuron at the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct PerNeuronField {
    /// Row-major `m x dim`, with `sigma'(0) = 0`.
    pub fields: Vec<f64>,
    /// `(p/(1+p)) e^{-f_+} x_+ - (1/(1+p)) e^{f_-} x_-`.
    pub f_plus: Vec<f64>,
    /// Neurons with a pre-activation within the boundary tolerance.
    pub boundary: Vec<bool>,
}

impl PerNeuronField {
    pub fn row(&self, k: usize) -> &[f64] {
        let d = self.f_plus.len();
        &self.fields[k * d..(k + 1) * d]
    }
}

pub fn vector_field(state: &NetworkState, ds: &Dataset) -> PerNeuronField {
    let ts = TrainingSet::from_dataset(ds);
    let geo = Geometry::new(&ts, ds);
    let a = preactivations(state, &geo);
    let f = outputs(state, &a, geo.n());
    let coef = geo.coefficients(&f);
    let tol = state.default_boundary_tol();
    let d = state.dim;
    let mut fields = vec![0.0; state.m * d];
    let mut boundary = vec![false; state.m];
    let n = geo.n();
    for k in 0..state.m {
        let ak = &a[k * n..(k + 1) * n];
        let sigma: Vec<bool> = ak.iter().map(|&v| v > 0.0).collect();
        field_into(&mut fields[k * d..(k + 1) * d], state.signs[k] * state.scale(), &coef, &sigma, &geo);
        boundary[k] = ak.iter().any(|v| v.abs() <= tol);
    }
    let mut f_plus = vec![0.0; d];
    field_into(&mut f_plus, 1.0, &coef, &[true, true], &geo);
    PerNeuronField {
        fields,
        f_plus,
        boundary,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlidingCase {
    /// Both sides push into the surface.
    SlideOnSurface,
    /// Both sides push towards the positive side.
    CrossSurface,
    /// Both sides push away from the surface.
    SlideReverse,
    /// Both sides push towards the negative side.
    CrossReverse,
    NotOnSurface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    /// `<b, x_+> = 0`
    Plus,
    /// `<b, x_-> = 0`
    Minus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingAnalysis {
    pub case: SlidingCase,
    pub surface: Option<Surface>,
    /// Normal component of the field on the negative side.
    pub f_n_minus: f64,
    /// Normal component of the field on the positive side.
    pub f_n_plus: f64,
    /// Convex combination with zero normal component (sliding cases only).
    pub sliding_field: Option<Vec<f64>>,
}

fn classify(f_n_minus: f64, f_n_plus: f64) -> SlidingCase {
    if f_n_minus > 0.0 && f_n_plus < 0.0 {
        SlidingCase::SlideOnSurface
    } else if f_n_minus < 0.0 && f_n_plus > 0.0 {
        SlidingCase::SlideReverse
    } else if f_n_minus >= 0.0 && f_n_plus >= 0.0 {
        SlidingCase::CrossSurface
    } else {
        SlidingCase::CrossReverse
    }
}

/// One-sided normal projections for neuron `k` on the surface of point `i`.
fn normal_projections(geo: &Geometry, coef: &[f64], sigma: &[bool], i: usize, sc: f64) -> (f64, f64) {
    let n = geo.n();
    let mut fm = 0.0;
    for j in 0..n {
        if j != i && sigma[j] {
            fm += coef[j] * geo.cross[i * n + j];
        }
    }
    let fm = sc * fm;
    (fm, fm + sc * coef[i] * geo.lens[i])
}

/// Classifies neuron `k` against whichever surface it is closest to, if
/// that surface lies within `tol`.
pub fn sliding_analysis(k: usize, state: &NetworkState, ds: &Dataset, tol: f64) -> Result<SlidingAnalysis> {
    let ts = TrainingSet::from_dataset(ds);
    let geo = Geometry::new(&ts, ds);
    let a = preactivations(state, &geo);
    let f = outputs(state, &a, 2);
    let coef = geo.coefficients(&f);
    let ak = &a[2 * k..2 * k + 2];
    let i = if ak[0].abs() <= ak[1].abs() { 0 } else { 1 };
    if ak[i].abs() > tol {
        return Ok(SlidingAnalysis {
            case: SlidingCase::NotOnSurface,
            surface: None,
            f_n_minus: 0.0,
            f_n_plus: 0.0,
            sliding_field: None,
        });
    }
    let btol = state.default_boundary_tol();
    let sigma = [ak[0] > btol, ak[1] > btol];
    let sc = state.signs[k] * state.scale();
    let (fm, fp) = normal_projections(&geo, &coef, &sigma, i, sc);
    if fm.abs() <= 1e-14 && fp.abs() <= 1e-14 {
        return Err(Error::DegenerateProjection { neuron: k });
    }
    let case = classify(fm, fp);
    let sliding_field = matches!(case, SlidingCase::SlideOnSurface | SlidingCase::SlideReverse).then(|| {
        let mut minus_side = sigma;
        minus_side[i] = false;
        let mut plus_side = sigma;
        plus_side[i] = true;
        let mut fminus = vec![0.0; state.dim];
        let mut fplus = vec![0.0; state.dim];
        field_into(&mut fminus, sc, &coef, &minus_side, &geo);
        field_into(&mut fplus, sc, &coef, &plus_side, &geo);
        let alpha = fm / (fm - fp);
        fplus
            .iter()
            .zip(&fminus)
            .map(|(p, q)| alpha * p + (1.0 - alpha) * q)
            .collect()
    });
    Ok(SlidingAnalysis {
        case,
        surface: Some(if i == 0 { Surface::Plus } else { Surface::Minus }),
        f_n_minus: fm,
        f_n_plus: fp,
        sliding_field,
    })
}

fn field_into(out: &mut [f64], sc: f64, coef: &[f64], sigma: &[bool], geo: &Geometry) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, x) in geo.points.iter().enumerate() {
        if sigma[i] {
            axpy(sc * coef[i], x, out);
        }
    }
}

fn preactivations(state: &NetworkState, geo: &Geometry) -> Vec<f64> {
    let n = geo.n();
    let mut a = vec![0.0; state.m * n];
    for k in 0..state.m {
        let b = state.row(k);
        for (i, x) in geo.points.iter().enumerate() {
            a[k * n + i] = dot(b, x);
        }
    }
    a
}

fn outputs(state: &NetworkState, a: &[f64], n: usize) -> Vec<f64> {
    let c = state.scale();
    let mut f = vec![0.0; n];
    for k in 0..state.m {
        for i in 0..n {
            f[i] += state.signs[k] * a[k * n + i].max(0.0);
        }
    }
    f.iter_mut().for_each(|v| *v *= c);
    f
}

/// Removes from `v` its components along the given unit normals.
fn project_out(v: &mut [f64], normals: &[&[f64]]) {
    match normals {
        [] => {}
        [nrm] => {
            let c = dot(v, nrm);
            axpy(-c, nrm, v);
        }
        _ => {
            let s = normals.len();
            let g = DMatrix::from_fn(s, s, |r, c| dot(normals[r], normals[c]));
            let rhs = DVector::from_fn(s, |r, _| dot(v, normals[r]));
            let coeffs = g
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(s));
            for (r, nrm) in normals.iter().enumerate() {
                axpy(-coeffs[r], nrm, v);
            }
        }
    }
}

/// Integrator state reused across steps.
struct Engine {
    geo: Geometry,
    mode: Mode,
    eta: f64,
    sliding_tol: f64,
    boundary_tol: f64,
    sigma: Vec<bool>,
    field: Vec<f64>,
    /// Surfaces the current neuron slides on.
    sliding: Vec<usize>,
    /// Pre-activations of the current neuron within the step.
    a: Vec<f64>,
    /// Side chosen for a surface the neuron sits on but crosses.
    side: Vec<Option<bool>>,
    rates: Vec<f64>,
    scratch: Vec<f64>,
    max_sliding_residual: f64,
}

fn sliding_normals<'a>(geo: &'a Geometry, sliding: &[usize], skip: Option<usize>) -> Vec<&'a [f64]> {
    sliding
        .iter()
        .filter(|&&j| Some(j) != skip)
        .map(|&j| geo.normals[j].as_slice())
        .collect()
}

/// Bound on surface events handled for one neuron within one step.
const MAX_EVENTS_PER_STEP: usize = 64;

impl Engine {
    fn new(geo: Geometry, config: &FlowConfig, state: &NetworkState) -> Self {
        let n = geo.n();
        Engine {
            geo,
            mode: config.mode,
            eta: config.eta,
            sliding_tol: config.sliding_tol_for(state),
            boundary_tol: state.default_boundary_tol(),
            sigma: vec![false; n],
            field: vec![0.0; state.dim],
            sliding: Vec::with_capacity(n),
            a: vec![0.0; n],
            side: vec![None; n],
            rates: vec![0.0; n],
            scratch: vec![0.0; state.dim],
            max_sliding_residual: 0.0,
        }
    }

    /// Advances every neuron by one Euler step given the pre-activations and
    /// outputs of the current state.
    fn advance(&mut self, state: &mut NetworkState, a: &[f64], f: &[f64]) -> Result<()> {
        let n = self.geo.n();
        let coef = self.geo.coefficients(f);
        let c = state.scale();
        for k in 0..state.m {
            let ak = &a[k * n..(k + 1) * n];
            if ak.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { time: state.time });
            }
            let sc = state.signs[k] * c;
            let b = state.row_mut(k);
            match self.mode {
                Mode::PlainGd => {
                    for i in 0..n {
                        self.sigma[i] = ak[i] > 0.0;
                    }
                    if self.sigma.iter().any(|&s| s) {
                        field_into(&mut self.field, sc, &coef, &self.sigma, &self.geo);
                        axpy(self.eta, &self.field, b);
                    }
                }
                Mode::Filippov => self.filippov_neuron(b, ak, sc, &coef),
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    time: state.time + self.eta,
                });
            }
        }
        Ok(())
    }

    fn is_near(&self, i: usize) -> bool {
        (self.a[i] / self.geo.lens[i]).abs() <= self.sliding_tol
    }

    /// Activation used for point `i` in the field: sliding surfaces count as
    /// inactive (the projection supplies the sliding component).
    fn fill_sigma(&mut self) {
        for i in 0..self.geo.n() {
            self.sigma[i] = if self.sliding.contains(&i) {
                false
            } else {
                self.side[i].unwrap_or(self.a[i] > self.boundary_tol)
            };
        }
    }

    /// One-sided normal components `(inactive side, active side)` of the
    /// field at surface `i`, with the other sliding constraints enforced.
    fn one_sided(&mut self, i: usize, sc: f64, coef: &[f64]) -> (f64, f64) {
        self.fill_sigma();
        self.sigma[i] = false;
        let mut off = std::mem::take(&mut self.field);
        field_into(&mut off, sc, coef, &self.sigma, &self.geo);
        let mut jump = std::mem::take(&mut self.scratch);
        jump.iter_mut()
            .zip(&self.geo.points[i])
            .for_each(|(v, x)| *v = sc * coef[i] * x);
        let normals = sliding_normals(&self.geo, &self.sliding, Some(i));
        project_out(&mut off, &normals);
        project_out(&mut jump, &normals);
        let nrm = &self.geo.normals[i];
        let fm = dot(&off, nrm);
        let fp = fm + dot(&jump, nrm);
        let others_silent = off.iter().all(|&v| v == 0.0);
        self.field = off;
        self.scratch = jump;
        if others_silent {
            // sigma'(0) = 0: a neuron with nothing else active stays put.
            (0.0, 0.0)
        } else {
            (fm, fp)
        }
    }

    /// Decides, for every surface the neuron sits on, whether it slides on
    /// it or which side it continues on. Returns true when `b` was moved.
    fn settle(&mut self, b: &mut [f64], sc: f64, coef: &[f64]) -> bool {
        let n = self.geo.n();
        let mut moved = false;
        for i in 0..n {
            let attached = self.sliding.contains(&i);
            if !attached && (self.side[i].is_some() || !self.is_near(i)) {
                continue;
            }
            let (fm, fp) = self.one_sided(i, sc, coef);
            match (classify(fm, fp), attached) {
                (SlidingCase::SlideOnSurface, true) => {}
                (SlidingCase::SlideOnSurface, false) => {
                    self.sliding.push(i);
                    let nrm = &self.geo.normals[i];
                    let d = dot(b, nrm);
                    axpy(-d, nrm, b);
                    self.a[i] = 0.0;
                    moved = true;
                }
                (case, _) => {
                    if attached {
                        self.sliding.retain(|&j| j != i);
                    }
                    self.side[i] = Some(match case {
                        SlidingCase::CrossSurface if fp > 0.0 => true,
                        SlidingCase::CrossReverse => false,
                        _ => self.a[i] > self.boundary_tol,
                    });
                }
            }
        }
        moved
    }

    /// Event-located step for one neuron: move to the first surface hit
    /// within the step, resolve the Filippov case there, continue.
    fn filippov_neuron(&mut self, b: &mut [f64], ak: &[f64], sc: f64, coef: &[f64]) {
        let n = self.geo.n();
        self.a.copy_from_slice(ak);
        self.side.iter_mut().for_each(|s| *s = None);
        self.sliding.clear();
        if !ak.iter().enumerate().any(|(i, &v)| v > self.boundary_tol || self.is_near(i)) {
            return;
        }
        let mut rem = self.eta;
        for event in 0..=MAX_EVENTS_PER_STEP {
            if self.settle(b, sc, coef) {
                for i in 0..n {
                    self.a[i] = dot(b, &self.geo.points[i]);
                }
                for &j in &self.sliding {
                    self.a[j] = 0.0;
                }
            }
            self.fill_sigma();
            field_into(&mut self.field, sc, coef, &self.sigma, &self.geo);
            let normals = sliding_normals(&self.geo, &self.sliding, None);
            project_out(&mut self.field, &normals);
            if self.field.iter().all(|&v| v == 0.0) {
                break;
            }
            let mut hit: Option<(usize, f64)> = None;
            for i in 0..n {
                let r = dot(&self.field, &self.geo.points[i]);
                self.rates[i] = r;
                if self.sliding.contains(&i) || event == MAX_EVENTS_PER_STEP {
                    continue;
                }
                let ai = self.a[i];
                let tau = if ai > 0.0 && r < 0.0 && self.side[i] != Some(true) {
                    ai / -r
                } else if ai < 0.0 && r > 0.0 && self.side[i] != Some(false) {
                    -ai / r
                } else {
                    continue;
                };
                if tau < rem && hit.is_none_or(|(_, t)| tau < t) {
                    hit = Some((i, tau));
                }
            }
            let h = hit.map_or(rem, |(_, t)| t);
            axpy(h, &self.field, b);
            for i in 0..n {
                self.a[i] += h * self.rates[i];
            }
            rem -= h;
            match hit {
                Some((i, _)) => {
                    self.a[i] = 0.0;
                    self.side[i] = None;
                }
                None => break,
            }
        }
        if !self.sliding.is_empty() {
            let normals = sliding_normals(&self.geo, &self.sliding, None);
            project_out(b, &normals);
            for nrm in &normals {
                self.max_sliding_residual = self.max_sliding_residual.max(dot(b, nrm).abs());
            }
        }
    }
}

/// Advances a state by a single step on the noiseless dataset.
pub fn step(state: &NetworkState, ds: &Dataset, config: &FlowConfig) -> Result<NetworkState> {
    let ts = TrainingSet::from_dataset(ds);
    let geo = Geometry::new(&ts, ds);
    let a = preactivations(state, &geo);
    let f = outputs(state, &a, geo.n());
    let mut next = state.clone();
    let mut engine = Engine::new(geo, config, state);
    engine.advance(&mut next, &a, &f)?;
    next.step += 1;
    next.time += config.eta;
    Ok(next)
}

/// Splits a neuron's field into its radial rate and tangential rate vector,
/// so that `field = radial * w + rho * tangential`.
pub fn decompose(b: &[f64], field: &[f64]) -> Result<(f64, Vec<f64>)> {
    let rho = norm(b);
    if rho == 0.0 {
        return Err(Error::ZeroNeuron);
    }
    let w: Vec<f64> = b.iter().map(|v| v / rho).collect();
    let radial = dot(field, &w);
    let tangential = field
        .iter()
        .zip(&w)
        .map(|(fv, wv)| (fv - radial * wv) / rho)
        .collect();
    Ok((radial, tangential))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataPoint {
    Plus,
    Minus,
}

impl fmt::Display for DataPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataPoint::Plus => "plus",
            DataPoint::Minus => "minus",
        })
    }
}

/// A neuron's activation on one of the two cluster points changed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternEvent {
    /// Midpoint of the bracketing step.
    pub time: f64,
    /// Index of the first step at which the change is visible.
    pub step: u64,
    pub neuron: usize,
    pub point: DataPoint,
    pub old: bool,
    pub new: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyEvent {
    pub time: f64,
    pub step: u64,
    pub old: f64,
    pub new: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub time: f64,
    pub f_plus: f64,
    pub f_minus: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub patterns: PatternMatrix,
    /// Present on stride, marked, initial and final snapshots.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub eta: f64,
    pub mode: Mode,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<PatternEvent>,
    pub accuracy_events: Vec<AccuracyEvent>,
    pub final_state: NetworkState,
    /// Largest distance of a sliding neuron from its surface after any step.
    pub max_sliding_residual: f64,
}

impl Trajectory {
    pub fn end_time(&self) -> f64 {
        self.final_state.time
    }

    /// Snapshot carrying weights whose time is closest to `t`.
    pub fn nearest_full_snapshot(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots
            .iter()
            .filter(|s| s.weights.is_some())
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
    }

    /// Rebuilds the network state stored in a full snapshot.
    pub fn state_at(&self, snap: &Snapshot) -> Option<NetworkState> {
        let w = snap.weights.as_ref()?;
        let mut s = self.final_state.clone();
        s.weights.clone_from(w);
        s.time = snap.time;
        s.step = snap.step;
        Some(s)
    }
}

/// What the observer sees after every step.
pub struct StepView<'a> {
    pub state: &'a NetworkState,
    /// Row-major `m x 2` pre-activations on `(x_+, x_-)`.
    pub cluster_preact: &'a [f64],
    pub f_plus: f64,
    pub f_minus: f64,
    pub accuracy: f64,
}

pub fn simulate(ds: &Dataset, state0: &NetworkState, config: &FlowConfig) -> Result<Trajectory> {
    simulate_on(&TrainingSet::from_dataset(ds), ds, state0, config, |_| false)
}

/// Integrates on an arbitrary weighted training set; activation patterns and
/// events refer to the two cluster points of `ds`. The observer runs after
/// every step and stops the run by returning `true`.
pub fn simulate_on(
    ts: &TrainingSet,
    ds: &Dataset,
    state0: &NetworkState,
    config: &FlowConfig,
    mut observer: impl FnMut(&StepView) -> bool,
) -> Result<Trajectory> {
    config.validate()?;
    let geo = Geometry::new(ts, ds);
    let n = geo.n();
    let (ip, im) = (geo.plus_idx, geo.minus_idx);
    let btol = state0.default_boundary_tol();
    let mut state = state0.clone();
    let t0 = state.time;
    let s0 = state.step;
    let n_steps = config.n_steps();
    let mut marks: Vec<u64> = config
        .mark_times
        .iter()
        .map(|t| ((t - t0) / config.eta).round().max(0.0) as u64)
        .collect();
    marks.sort_unstable();

    let mut engine = Engine::new(geo, config, &state);
    let mut a = preactivations(&state, &engine.geo);
    let mut f = outputs(&state, &a, n);
    let mut pats = cluster_patterns(&a, n, ip, im, btol);
    let mut acc = accuracy_from_predictions(ts, &f);
    let snap = |state: &NetworkState, f: &[f64], pats: &PatternMatrix, acc: f64, full: bool| Snapshot {
        step: state.step,
        time: state.time,
        f_plus: f[ip],
        f_minus: f[im],
        loss: loss_from_predictions(ts, f),
        accuracy: acc,
        patterns: pats.clone(),
        weights: full.then(|| state.weights.clone()),
    };
    let mut snapshots = vec![snap(&state, &f, &pats, acc, true)];
    let mut events = Vec::new();
    let mut accuracy_events = Vec::new();

    for j in 1..=n_steps {
        engine.advance(&mut state, &a, &f)?;
        state.step = s0 + j;
        state.time = t0 + j as f64 * config.eta;
        let mid = t0 + (j as f64 - 0.5) * config.eta;
        a = preactivations(&state, &engine.geo);
        f = outputs(&state, &a, n);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: state.time });
        }
        let new_pats = cluster_patterns(&a, n, ip, im, btol);
        let mut changed = false;
        for (k, (old, new)) in pats.neurons.iter().zip(&new_pats.neurons).enumerate() {
            for (point, o, nw) in [
                (DataPoint::Plus, old.plus, new.plus),
                (DataPoint::Minus, old.minus, new.minus),
            ] {
                if o != nw {
                    changed = true;
                    events.push(PatternEvent {
                        time: mid,
                        step: state.step,
                        neuron: k,
                        point,
                        old: o,
                        new: nw,
                    });
                }
            }
        }
        pats = new_pats;
        let new_acc = accuracy_from_predictions(ts, &f);
        if new_acc != acc {
            accuracy_events.push(AccuracyEvent {
                time: mid,
                step: state.step,
                old: acc,
                new: new_acc,
            });
            acc = new_acc;
        }
        let marked = marks.binary_search(&j).is_ok();
        let full = j % config.snapshot_stride == 0 || marked || j == n_steps;
        let cluster: Vec<f64> = if n == 2 && ip == 0 && im == 1 {
            Vec::new()
        } else {
            (0..state.m).flat_map(|k| [a[k * n + ip], a[k * n + im]]).collect()
        };
        let stop = observer(&StepView {
            state: &state,
            cluster_preact: if cluster.is_empty() { &a } else { &cluster },
            f_plus: f[ip],
            f_minus: f[im],
            accuracy: acc,
        });
        if full || changed || stop {
            snapshots.push(snap(&state, &f, &pats, acc, full || stop));
        }
        if stop {
            break;
        }
    }
    Ok(Trajectory {
        eta: config.eta,
        mode: config.mode,
        snapshots,
        events,
        accuracy_events,
        final_state: state,
        max_sliding_residual: engine.max_sliding_residual,
    })
}

fn cluster_patterns(a: &[f64], n: usize, ip: usize, im: usize, tol: f64) -> PatternMatrix {
    let m = a.len() / n;
    PatternMatrix {
        neurons: (0..m)
            .map(|k| {
                let (ap, am) = (a[k * n + ip], a[k * n + im]);
                NeuronPattern {
                    plus: ap > tol,
                    minus: am > tol,
                    plus_boundary: ap.abs() <= tol,
                    minus_boundary: am.abs() <= tol,
                }
            })
            .collect(),
    }
}

/// Snapshot table: `t, f_plus, f_minus, loss, acc`, then `angle_k, radius_k`
/// per neuron. Rows without stored weights leave the polar columns empty.
pub fn write_trajectory_csv<W: std::io::Write>(traj: &Trajectory, ds: &Dataset, out: W) -> Result<()> {
    let m = traj.final_state.m;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["t", "f_plus", "f_minus", "loss", "acc"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for k in 0..m {
        header.push(format!("angle_{k}"));
        header.push(format!("radius_{k}"));
    }
    w.write_record(&header)?;
    for s in &traj.snapshots {
        let mut row = vec![
            fmt_f64(s.time),
            fmt_f64(s.f_plus),
            fmt_f64(s.f_minus),
            fmt_f64(s.loss),
            fmt_f64(s.accuracy),
        ];
        match traj.state_at(s) {
            Some(state) => {
                for pt in polar_projection(&state, ds) {
                    row.push(pt.angle.map(fmt_f64).unwrap_or_default());
                    row.push(fmt_f64(pt.radius));
                }
            }
            None => row.extend(std::iter::repeat_n(String::new(), 2 * m)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One `event = t, step, neuron, data_point, old, new` line per event.
pub fn event_log(traj: &Trajectory) -> String {
    let mut out = String::from("# event = t, step, neuron, data_point, old, new\n");
    for e in &traj.events {
        out.push_str(&format!(
            "event = {}, {}, {}, {}, {}, {}\n",
            fmt_f64(e.time),
            e.step,
            e.neuron,
            e.point,
            u8::from(e.old),
            u8::from(e.new)
        ));
    }
    out
}
