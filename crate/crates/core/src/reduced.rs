//! Two-dimensional reduced dynamics of the outputs.
//!
//! While the activation patterns are frozen the network outputs obey closed
//! planar systems: `(U, V)` between `t_I` and `t_II`, `(I, J)` after `t_III`.
//! They serve as an oracle for the full simulator.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::phases::NeuronClassification;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedParams {
    pub delta: f64,
    /// `m_minus / m_plus`.
    pub alpha: f64,
    pub p: f64,
    pub kappa2: f64,
    pub m_plus: usize,
    pub m_minus: usize,
    pub m: usize,
}

impl ReducedParams {
    pub fn new(ds: &Dataset, cls: &NeuronClassification, kappa2: f64) -> Result<Self> {
        if cls.m_plus == 0 {
            return Err(Error::EmptyClass("K+"));
        }
        if cls.m_minus == 0 {
            return Err(Error::EmptyClass("K-"));
        }
        let m = cls.m_plus + cls.m_minus + cls.dead.len();
        Ok(ReducedParams {
            delta: ds.delta(),
            alpha: cls.alpha,
            p: ds.p(),
            kappa2,
            m_plus: cls.m_plus,
            m_minus: cls.m_minus,
            m,
        })
    }

    /// Same counts with `delta`, `p` and `kappa2` given directly.
    pub fn from_counts(delta: f64, p: f64, kappa2: f64, m_plus: usize, m_minus: usize, m: usize) -> Self {
        ReducedParams {
            delta,
            alpha: m_minus as f64 / m_plus as f64,
            p,
            kappa2,
            m_plus,
            m_minus,
            m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::AssumptionViolation(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.p * self.delta.cos() <= 1.0 {
            return Err(Error::AssumptionViolation(format!(
                "p cos(delta) = {} <= 1",
                self.p * self.delta.cos()
            )));
        }
        Ok(())
    }

    /// `alpha sin^2 delta`, the Phase II correction.
    pub fn eps_uv(&self) -> f64 {
        self.alpha * self.delta.sin().powi(2)
    }

    /// `(m_plus / m_minus) sin^2 delta`, the Phase IV correction.
    pub fn eps_ij(&self) -> f64 {
        self.m_plus as f64 / self.m_minus as f64 * self.delta.sin().powi(2)
    }

    fn share(&self, count: usize) -> f64 {
        self.kappa2 * self.kappa2 * count as f64 / self.m as f64
    }
}

pub fn uv_rhs(u: f64, v: f64, params: &ReducedParams) -> (f64, f64) {
    let c = params.delta.cos();
    (u * v * c - u * u, u * v * c - v * v * (1.0 + params.eps_uv()))
}

pub fn ij_rhs(i: f64, j: f64, params: &ReducedParams) -> (f64, f64) {
    let c = params.delta.cos();
    (i * j * c - i * i * (1.0 + params.eps_ij()), i * j * c - j * j)
}

/// `(U, V)` from the outputs `f_+`, `f_-`.
pub fn uv_from_network(f_plus: f64, f_minus: f64, params: &ReducedParams) -> (f64, f64) {
    let s = params.share(params.m_plus);
    let p = params.p;
    (s * p / (1.0 + p) * (-f_plus).exp(), s / (1.0 + p) * f_minus.exp())
}

/// `(I, J)` from the outputs `f_+`, `f_-`.
pub fn ij_from_network(f_plus: f64, f_minus: f64, params: &ReducedParams) -> (f64, f64) {
    let s = params.share(params.m_minus);
    let p = params.p;
    (s * p / (1.0 + p) * (-f_plus).exp(), s / (1.0 + p) * f_minus.exp())
}

/// Value of `V` at which `f_-` crosses zero.
pub fn plateau_threshold(params: &ReducedParams) -> f64 {
    params.share(params.m_plus) / (1.0 + params.p)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReducedTrajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl ReducedTrajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last(&self) -> (f64, f64, f64) {
        let n = self.t.len() - 1;
        (self.t[n], self.x[n], self.y[n])
    }

    fn push(&mut self, t: f64, x: f64, y: f64) {
        self.t.push(t);
        self.x.push(x);
        self.y.push(y);
    }

    /// CSV with header `t,<x_name>,<y_name>`.
    pub fn write_csv<W: std::io::Write>(&self, names: (&str, &str), out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", names.0, names.1])?;
        for k in 0..self.len() {
            w.write_record([
                crate::record::fmt_f64(self.t[k]),
                crate::record::fmt_f64(self.x[k]),
                crate::record::fmt_f64(self.y[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn rk4_step(rhs: &impl Fn(f64, f64) -> (f64, f64), x: f64, y: f64, h: f64) -> (f64, f64) {
    let (k1x, k1y) = rhs(x, y);
    let (k2x, k2y) = rhs(x + 0.5 * h * k1x, y + 0.5 * h * k1y);
    let (k3x, k3y) = rhs(x + 0.5 * h * k2x, y + 0.5 * h * k2y);
    let (k4x, k4y) = rhs(x + h * k3x, y + h * k3y);
    (
        x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
    )
}

/// Classical fixed-step RK4 from `t = 0` to `t_end`; the last step is
/// shortened to land on `t_end`.
pub fn rk4_integrate(
    rhs: impl Fn(f64, f64) -> (f64, f64),
    state0: (f64, f64),
    dt: f64,
    t_end: f64,
) -> Result<ReducedTrajectory> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let mut tr = ReducedTrajectory::default();
    let (mut x, mut y) = state0;
    tr.push(0.0, x, y);
    let n = (t_end / dt).ceil().max(0.0) as u64;
    for k in 1..=n {
        let t_prev = (k - 1) as f64 * dt;
        let t = (k as f64 * dt).min(t_end);
        (x, y) = rk4_step(&rhs, x, y, t - t_prev);
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite { time: t });
        }
        tr.push(t, x, y);
    }
    Ok(tr)
}

/// RK4 with `dt = 0.1 / max(x0, y0)`, doubled every time `x + y` has
/// decayed by another factor of ten.
pub fn rk4_integrate_scaled(
    rhs: impl Fn(f64, f64) -> (f64, f64),
    state0: (f64, f64),
    t_end: f64,
) -> Result<ReducedTrajectory> {
    let (mut x, mut y) = state0;
    let mut dt = 0.1 / x.max(y);
    let mut next_level = 0.1 * (x + y);
    let mut tr = ReducedTrajectory::default();
    let mut t = 0.0;
    tr.push(t, x, y);
    while t < t_end {
        let h = dt.min(t_end - t);
        (x, y) = rk4_step(&rhs, x, y, h);
        t = if h < dt { t_end } else { t + h };
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite { time: t });
        }
        tr.push(t, x, y);
        if x + y <= next_level {
            dt *= 2.0;
            next_level *= 0.1;
        }
    }
    Ok(tr)
}

/// Integrates with steps of at most `max_dt` and returns the state at each
/// requested time (sorted, measured from the start).
pub fn rk4_at_times(
    rhs: impl Fn(f64, f64) -> (f64, f64),
    state0: (f64, f64),
    times: &[f64],
    max_dt: f64,
) -> Result<Vec<(f64, f64)>> {
    let (mut x, mut y) = state0;
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        let span = target - t;
        if span > 0.0 {
            let n = (span / max_dt).ceil() as u64;
            let h = span / n as f64;
            for _ in 0..n {
                (x, y) = rk4_step(&rhs, x, y, h);
            }
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::NonFinite { time: target });
            }
            t = target;
        }
        out.push((x, y));
    }
    Ok(out)
}

/// Argument of the logarithmic term of the `(U, V)` first integral; the
/// validity region is where it is positive.
pub fn uv_log_argument(state: (f64, f64), params: &ReducedParams) -> f64 {
    let c = params.delta.cos();
    (1.0 + c) * state.0 / state.1 - (1.0 + c + params.eps_uv())
}

/// Residual of the conserved quantity of the `(U, V)` system relative to a
/// reference point; zero along exact trajectories.
pub fn uv_first_integral(state: (f64, f64), params: &ReducedParams, reference: (f64, f64)) -> Result<f64> {
    let c = params.delta.cos();
    let s2 = params.delta.sin().powi(2);
    let eps = params.eps_uv();
    let (u, v) = state;
    let (ur, vr) = reference;
    let z = u / v;
    let zr = ur / vr;
    let arg = uv_log_argument(state, params);
    let arg_r = uv_log_argument(reference, params);
    if !(arg > 0.0 && arg_r > 0.0 && u > 0.0 && v > 0.0) {
        return Err(Error::OutOfRegion);
    }
    let a = (1.0 + eps) / (1.0 + c + eps);
    let b = (s2 + eps) / ((1.0 + c + eps) * (1.0 + c));
    Ok((v / vr).ln() + a * (z / zr).ln() - b * (arg / arg_r).ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedTimeline {
    /// First time `U cos(delta) <= V (1 + alpha sin^2 delta)`.
    pub tau1: Option<f64>,
    /// First time `V` drops to the plateau threshold (`f_- = 0`).
    pub plateau_exit: Option<f64>,
}

fn first_crossing(t: &[f64], g: impl Fn(usize) -> f64) -> Option<f64> {
    if t.is_empty() {
        return None;
    }
    if g(0) <= 0.0 {
        return Some(t[0]);
    }
    (1..t.len()).find(|&k| g(k) <= 0.0).map(|k| {
        let (g0, g1) = (g(k - 1), g(k));
        t[k - 1] + (t[k] - t[k - 1]) * g0 / (g0 - g1)
    })
}

pub fn reduced_hitting_times(traj: &ReducedTrajectory, params: &ReducedParams) -> ReducedTimeline {
    let c = params.delta.cos();
    let eps = params.eps_uv();
    let thr = plateau_threshold(params);
    ReducedTimeline {
        tau1: first_crossing(&traj.t, |k| traj.x[k] * c - traj.y[k] * (1.0 + eps)),
        plateau_exit: first_crossing(&traj.t, |k| traj.y[k] - thr),
    }
}

/// Limit of `I / J`: `(1 + cos) / (1 + cos + (m_plus/m_minus) sin^2)`.
pub fn ratio_limit(params: &ReducedParams) -> f64 {
    let c = params.delta.cos();
    (1.0 + c) / (1.0 + c + params.eps_ij())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params(delta: f64, m_plus: usize, m_minus: usize) -> ReducedParams {
        ReducedParams::from_counts(delta, 4.0, 1.0, m_plus, m_minus, 100)
    }

    #[test]
    fn rhs_examples() {
        let z = params(0.0, 25, 14);
        assert_eq!(uv_rhs(1.0, 1.0, &z), (0.0, 0.0));
        assert_eq!(ij_rhs(1.0, 1.0, &z), (0.0, 0.0));
        let p = params(PI / 15.0, 25, 14);
        let c = (PI / 15.0).cos();
        let (du, _) = uv_rhs(2.0, 1.0, &p);
        assert!((du - (2.0 * c - 4.0)).abs() < 1e-15 && du < 0.0);
        let a0 = ReducedParams { alpha: 0.0, ..p };
        let (_, dv) = uv_rhs(0.7, 0.7, &a0);
        assert!((dv - 0.49 * (c - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn stationary_ratio_for_ij() {
        let p = params(PI / 15.0, 25, 14);
        let r = ratio_limit(&p);
        let (j, i) = (0.3, 0.3 * r);
        let (di, dj) = ij_rhs(i, j, &p);
        // d(i/j)/dt = (di j - i dj) / j^2
        assert!(((di * j - i * dj) / (j * j)).abs() < 1e-15);
        let (_, dj) = ij_rhs(0.2, 0.3, &p);
        assert!(0.2 * (PI / 15.0).cos() < 0.3 && dj < 0.0);
    }

    #[test]
    fn ratio_limit_tends_to_one() {
        assert!((ratio_limit(&params(1e-8, 25, 14)) - 1.0).abs() < 1e-12);
        let p = params(PI / 15.0, 20, 10);
        let r = ratio_limit(&p);
        assert!(r < (PI / 15.0).cos() && r > 0.9);
    }

    #[test]
    fn zero_field_is_constant() {
        let tr = rk4_integrate(|_, _| (0.0, 0.0), (1.0, 2.0), 0.1, 1.0).unwrap();
        assert!(tr.x.iter().all(|&x| x == 1.0) && tr.y.iter().all(|&y| y == 2.0));
        assert!((tr.last().0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rk4_is_fourth_order() {
        // x' = -y, y' = x: exact solution is a rotation.
        let err = |dt: f64| {
            let tr = rk4_integrate(|x, y| (-y, x), (1.0, 0.0), dt, 2.0).unwrap();
            let (_, x, y) = tr.last();
            ((x - 2f64.cos()).powi(2) + (y - 2f64.sin()).powi(2)).sqrt()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn uv_at_zero_output() {
        let p = params(PI / 15.0, 25, 14);
        let (u, v) = uv_from_network(0.0, 0.0, &p);
        assert!((u - 0.25 * 0.8).abs() < 1e-15 && (v - 0.25 * 0.2).abs() < 1e-15);
        assert!((u / v - 4.0).abs() < 1e-12);
        assert!((plateau_threshold(&p) - v).abs() < 1e-15);
    }

    #[test]
    fn first_integral_identity_and_region() {
        let p = params(PI / 15.0, 25, 14);
        let r = (0.2, 0.05);
        assert_eq!(uv_first_integral(r, &p, r).unwrap(), 0.0);
        let c = (PI / 15.0).cos();
        let z_edge = (1.0 + c + p.eps_uv()) / (1.0 + c);
        assert!(matches!(
            uv_first_integral((z_edge * 0.05, 0.05), &p, r),
            Err(Error::OutOfRegion)
        ));
    }

    #[test]
    fn first_integral_conserved_along_rk4() {
        let p = params(PI / 15.0, 25, 14);
        let s0 = uv_from_network(0.3, 0.1, &p);
        let dt = 1e-3 / s0.0;
        let tr = rk4_integrate(|u, v| uv_rhs(u, v, &p), s0, dt, 200.0).unwrap();
        // Past this point the log argument is dominated by cancellation.
        let conditioned = |k: usize| uv_log_argument((tr.x[k], tr.y[k]), &p) >= 1e-6;
        for k in (0..tr.len()).step_by(1000).filter(|&k| conditioned(k)) {
            let r = uv_first_integral((tr.x[k], tr.y[k]), &p, s0).unwrap();
            assert!(r.abs() <= 1e-8, "residual {r} at t={}", tr.t[k]);
        }
    }

    #[test]
    fn hitting_times_interpolate() {
        let p = params(PI / 15.0, 25, 14);
        let s0 = uv_from_network(0.3, 0.1, &p);
        let tr = rk4_integrate_scaled(|u, v| uv_rhs(u, v, &p), s0, 2000.0).unwrap();
        let h = reduced_hitting_times(&tr, &p);
        let (t1, te) = (h.tau1.unwrap(), h.plateau_exit.unwrap());
        assert!(t1 > 0.0 && t1 < te);
        let started = ReducedTrajectory {
            t: vec![0.0, 1.0],
            x: vec![1.0, 1.0],
            y: vec![1.0, 1.0],
        };
        assert_eq!(reduced_hitting_times(&started, &p).tau1, Some(0.0));
    }

    #[test]
    fn at_times_matches_dense_run() {
        let p = params(PI / 15.0, 25, 14);
        let s0 = uv_from_network(0.0, 0.0, &p);
        let pts = rk4_at_times(|u, v| uv_rhs(u, v, &p), s0, &[0.0, 5.0, 50.0], 0.01).unwrap();
        let tr = rk4_integrate(|u, v| uv_rhs(u, v, &p), s0, 0.01, 50.0).unwrap();
        let (_, x, y) = tr.last();
        assert_eq!(pts[0], s0);
        assert!((pts[2].0 - x).abs() < 1e-12 && (pts[2].1 - y).abs() < 1e-12);
    }

    #[test]
    fn params_validate() {
        assert!(params(PI / 15.0, 25, 14).validate().is_ok());
        assert!(params(PI / 15.0, 10, 14).validate().is_err());
        assert!(ReducedParams { p: 1.0, ..params(PI / 15.0, 25, 14) }.validate().is_err());
    }
}
