//! Closed-form predictions: time scalings, the limiting direction, its
//! unit-margin rescaling and a one-parameter family of feasible competitors.

pub mod fit;
pub mod kkt;

pub use fit::{scaling_fit, FitModel, FitResult};
pub use kkt::{kkt_residual, BoundarySelection, KktReport};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, lin2, norm, scaled};
use crate::network::{predict, NetworkState};
use crate::phases::{t_i, NeuronClassification};
use crate::record::RecordWriter;

/// Scaling expressions with all hidden constants set to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsReport {
    pub t_i_exact: f64,
    pub t_plat_scaling: f64,
    pub t_ii_scaling: f64,
    /// `1 + sqrt(kappa1 kappa2^3)`
    pub t_ii_pt_factor: f64,
    /// `1 + delta^2`
    pub t_iii_factor: f64,
    pub loss_at_t_ii_scaling: f64,
    /// `1 / (1 - alpha cos(delta))`
    pub p_exponent: f64,
    pub kappa2: f64,
    pub delta: f64,
    pub p: f64,
}

impl BoundsReport {
    /// `1 / (p^gamma + kappa2^2 delta^2 (t - t_iii))`
    pub fn phase4_loss_scaling(&self, t: f64, t_iii: f64) -> f64 {
        1.0 / (self.p.powf(self.p_exponent)
            + self.kappa2 * self.kappa2 * self.delta * self.delta * (t - t_iii).max(0.0))
    }

    pub fn to_record(&self) -> String {
        RecordWriter::new()
            .float("t_I", self.t_i_exact)
            .float("t_plat_scaling", self.t_plat_scaling)
            .float("t_II_scaling", self.t_ii_scaling)
            .float("t_II_pt_factor", self.t_ii_pt_factor)
            .float("t_III_factor", self.t_iii_factor)
            .float("loss_at_t_II_scaling", self.loss_at_t_ii_scaling)
            .float("p_exponent", self.p_exponent)
            .finish()
    }
}

pub fn time_scalings(kappa1: f64, kappa2: f64, p: f64, delta: f64, alpha: f64) -> BoundsReport {
    let gamma = 1.0 / (1.0 - alpha * delta.cos());
    let base = kappa2 * kappa2 * delta * delta;
    BoundsReport {
        t_i_exact: t_i(kappa1, kappa2),
        t_plat_scaling: p / base,
        t_ii_scaling: p.powf(gamma) / base,
        t_ii_pt_factor: 1.0 + (kappa1 * kappa2.powi(3)).sqrt(),
        t_iii_factor: 1.0 + delta * delta,
        loss_at_t_ii_scaling: p.powf(-gamma),
        p_exponent: gamma,
        kappa2,
        delta,
        p,
    }
}

fn require_classes(cls: &NeuronClassification) -> Result<()> {
    if cls.k_plus.is_empty() {
        return Err(Error::EmptyClass("K+"));
    }
    if cls.k_minus.is_empty() {
        return Err(Error::EmptyClass("K-"));
    }
    Ok(())
}

fn width(cls: &NeuronClassification) -> usize {
    cls.k_plus.len() + cls.k_minus.len() + cls.dead.len()
}

/// Unnormalized block directions `(x+ - cos x-, (1 + beta) x- - x+)`.
fn block_shapes(ds: &Dataset, cls: &NeuronClassification) -> (Vec<f64>, Vec<f64>) {
    let (s, c) = ds.delta().sin_cos();
    let beta = cls.m_plus as f64 * s * s / (cls.m_minus as f64 * (1.0 + c));
    let u = lin2(1.0, &ds.x_plus, -c, &ds.x_minus);
    let w = lin2(1.0 + beta, &ds.x_minus, -1.0, &ds.x_plus);
    (u, w)
}

fn stack(cls: &NeuronClassification, dim: usize, plus: &[f64], minus: &[f64]) -> Vec<f64> {
    let mut theta = vec![0.0; width(cls) * dim];
    for &k in &cls.k_plus {
        theta[k * dim..(k + 1) * dim].copy_from_slice(plus);
    }
    for &k in &cls.k_minus {
        theta[k * dim..(k + 1) * dim].copy_from_slice(minus);
    }
    theta
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergentDirection {
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    /// Row-major `m x dim`, unit norm.
    pub theta_bar: Vec<f64>,
    pub c: f64,
    pub m: usize,
}

impl ConvergentDirection {
    pub fn to_state(&self, kappa1: f64, kappa2: f64) -> NetworkState {
        NetworkState::from_weights(self.theta_bar.clone(), self.m, kappa1, kappa2)
    }
}

pub fn convergent_direction(ds: &Dataset, cls: &NeuronClassification) -> Result<ConvergentDirection> {
    require_classes(cls)?;
    let (u, w) = block_shapes(ds, cls);
    let sq = cls.m_plus as f64 * dot(&u, &u) + cls.m_minus as f64 * dot(&w, &w);
    let c = 1.0 / sq.sqrt();
    let (v_plus, v_minus) = (scaled(c, &u), scaled(c, &w));
    Ok(ConvergentDirection {
        theta_bar: stack(cls, ds.dim(), &v_plus, &v_minus),
        v_plus,
        v_minus,
        c,
        m: width(cls),
    })
}

/// The limiting direction rescaled to unit margins, with its KKT residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginCertificate {
    pub scaled_direction: Vec<f64>,
    /// Block scale: `K+` blocks are `q (x+ - cos x-)`.
    pub q: f64,
    pub m: usize,
    pub kappa2: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub kkt_stationarity_residual: f64,
    pub kkt_feasibility_slack: f64,
    pub kkt_complementarity: f64,
    pub norm_derivative_at_zero: f64,
}

impl MarginCertificate {
    pub fn to_record(&self) -> String {
        RecordWriter::new()
            .raw("m", self.m)
            .float("kappa2", self.kappa2)
            .float("q", self.q)
            .float("lambda_plus", self.lambda_plus)
            .float("lambda_minus", self.lambda_minus)
            .float("kkt_stationarity_residual", self.kkt_stationarity_residual)
            .float("kkt_feasibility_slack", self.kkt_feasibility_slack)
            .float("kkt_complementarity", self.kkt_complementarity)
            .float("norm_derivative_at_zero", self.norm_derivative_at_zero)
            .finish()
    }
}

/// `q` such that `(kappa2 / sqrt(m)) q (m-(1 - cos) + m+ sin^2 / (1 + cos)) = 1`.
fn unit_margin_q(ds: &Dataset, cls: &NeuronClassification, kappa2: f64) -> f64 {
    let (s, c) = ds.delta().sin_cos();
    let (mp, mm) = (cls.m_plus as f64, cls.m_minus as f64);
    let scale = kappa2 / (width(cls) as f64).sqrt();
    1.0 / (scale * (mm * (1.0 - c) + mp * s * s / (1.0 + c)))
}

pub fn margin_certificate(
    ds: &Dataset,
    cls: &NeuronClassification,
    kappa2: f64,
) -> Result<MarginCertificate> {
    require_classes(cls)?;
    let (u, w) = block_shapes(ds, cls);
    let q = unit_margin_q(ds, cls, kappa2);
    let theta = stack(cls, ds.dim(), &scaled(q, &u), &scaled(q, &w));
    let m = width(cls);
    let state = NetworkState::from_weights(theta.clone(), m, kappa2, kappa2);
    let rep = kkt_residual(&state, ds)?;
    let s2 = ds.delta().sin().powi(2);
    Ok(MarginCertificate {
        scaled_direction: theta,
        q,
        m,
        kappa2,
        lambda_plus: rep.lambda_plus,
        lambda_minus: rep.lambda_minus,
        kkt_stationarity_residual: rep.stationarity,
        kkt_feasibility_slack: rep.feasibility,
        kkt_complementarity: rep.complementarity,
        norm_derivative_at_zero: -(1.0 + cls.alpha) * s2 * 2.0 * cls.m_plus as f64 * q * q,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedPoint {
    pub theta: Vec<f64>,
    pub norm_sq: f64,
    pub f_plus: f64,
    pub f_minus: f64,
}

/// Moves `K+` mass onto `K-` blocks along `x+ - cos x-`.
pub fn perturbation_family(
    cert: &MarginCertificate,
    ds: &Dataset,
    cls: &NeuronClassification,
    epsilon: f64,
) -> PerturbedPoint {
    let (u, w) = block_shapes(ds, cls);
    let q = cert.q;
    let plus = scaled(q * (1.0 - epsilon), &u);
    let minus = lin2(q, &w, q * epsilon, &u);
    let theta = stack(cls, ds.dim(), &plus, &minus);
    let state = NetworkState::from_weights(theta, cert.m, cert.kappa2, cert.kappa2);
    PerturbedPoint {
        norm_sq: dot(&state.weights, &state.weights),
        f_plus: predict(&state, &ds.x_plus),
        f_minus: predict(&state, &ds.x_minus),
        theta: state.weights,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormDerivativeCheck {
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

impl NormDerivativeCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.analytic < 0.0 && self.finite_difference < 0.0 && self.relative_error <= tol
    }
}

/// Central difference of the squared norm along the family at zero.
pub fn norm_derivative_check(
    cert: &MarginCertificate,
    ds: &Dataset,
    cls: &NeuronClassification,
) -> NormDerivativeCheck {
    let h = 1e-6;
    let up = perturbation_family(cert, ds, cls, h).norm_sq;
    let dn = perturbation_family(cert, ds, cls, -h).norm_sq;
    let fd = (up - dn) / (2.0 * h);
    let a = cert.norm_derivative_at_zero;
    NormDerivativeCheck {
        analytic: a,
        finite_difference: fd,
        relative_error: ((fd - a) / a).abs(),
    }
}

/// Largest component of `v` outside `span{x+, x-}`.
pub fn out_of_plane(ds: &Dataset, v: &[f64]) -> f64 {
    let (e1, e2) = ds.plane_basis();
    let r = lin2(1.0, v, -dot(v, &e1), &e1);
    let r = lin2(1.0, &r, -dot(&r, &e2), &e2);
    norm(&r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ds(delta: f64, dim: usize) -> Dataset {
        Dataset::geometry(DatasetSpec {
            delta,
            n_plus: 4,
            n_minus: 1,
            dim,
            seed: 11,
        })
    }

    /// `m+` leading positives, `m-` leading negatives, rest dead.
    fn cls(m: usize, m_plus: usize, m_minus: usize) -> NeuronClassification {
        NeuronClassification::from_sets(
            (0..m_plus).collect(),
            (m / 2..m / 2 + m_minus).collect(),
            m,
        )
    }

    #[test]
    fn t_i_reference() {
        let b = time_scalings(0.1, 1.0, 4.0, PI / 15.0, 0.5);
        assert!((b.t_i_exact - 3.1622776601683795).abs() < 1e-12);
    }

    #[test]
    fn plateau_scaling_ratio() {
        let a = time_scalings(0.1, 1.0, 4.0, PI / 15.0, 0.5);
        let b = time_scalings(0.1, 1.0, 4.0, 0.75 * PI / 15.0, 0.5);
        assert!((b.t_plat_scaling / a.t_plat_scaling - 16.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn t_iii_factor_tends_to_one() {
        let f: Vec<f64> = [0.4, 0.2, 0.1, 0.05]
            .iter()
            .map(|&d| time_scalings(0.1, 1.0, 4.0, d, 0.5).t_iii_factor - 1.0)
            .collect();
        for w in f.windows(2) {
            assert!((w[0] / w[1] - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn phase4_scaling_decays_like_inverse_time() {
        let b = time_scalings(0.1, 1.0, 4.0, PI / 15.0, 0.5);
        let r = b.phase4_loss_scaling(1e9, 0.0) / b.phase4_loss_scaling(2e9, 0.0);
        assert!((r - 2.0).abs() < 1e-3);
        assert!(b.loss_at_t_ii_scaling > 0.0 && b.t_ii_scaling > b.t_plat_scaling);
    }

    #[test]
    fn direction_geometry() {
        let d = ds(PI / 15.0, 6);
        let cd = convergent_direction(&d, &cls(10, 3, 2)).unwrap();
        assert!(dot(&cd.v_plus, &d.x_minus).abs() < 1e-15);
        assert!(dot(&cd.v_plus, &d.x_plus) > 0.0);
        assert!(dot(&cd.v_minus, &d.x_plus) > 0.0);
        assert!(dot(&cd.v_minus, &d.x_minus) > 0.0);
        assert!((norm(&cd.theta_bar) - 1.0).abs() < 1e-14);
        assert!(out_of_plane(&d, &cd.v_plus) < 1e-12 && out_of_plane(&d, &cd.v_minus) < 1e-12);
        for k in [3, 4, 7, 8, 9] {
            assert!(cd.theta_bar[k * 6..(k + 1) * 6].iter().all(|&v| v == 0.0));
        }
        let st = cd.to_state(0.1, 1.0);
        let (fp, fm) = (predict(&st, &d.x_plus), predict(&st, &d.x_minus));
        assert!(fp > 0.0 && (fp + fm).abs() < 1e-14 * fp.max(1.0));
    }

    #[test]
    fn empty_classes_rejected() {
        let d = ds(PI / 15.0, 4);
        let c = NeuronClassification::from_sets(vec![0], vec![], 4);
        assert!(matches!(convergent_direction(&d, &c), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn certificate_closes_kkt() {
        let d = ds(PI / 15.0, 8);
        let c = cls(20, 6, 3);
        let cert = margin_certificate(&d, &c, 1.0).unwrap();
        assert!(cert.kkt_stationarity_residual <= 1e-12, "{}", cert.kkt_stationarity_residual);
        assert!(cert.kkt_feasibility_slack.abs() < 1e-12);
        assert!(cert.kkt_complementarity.abs() < 1e-12);
        let (s, co) = (PI / 15.0).sin_cos();
        let ratio = (1.0 + co) / (1.0 + co + 2.0 * s * s);
        assert!((cert.lambda_plus / cert.lambda_minus - ratio).abs() < 1e-12);
    }

    #[test]
    fn boundary_selection_matches_cosine_ratio() {
        let d = ds(PI / 15.0, 5);
        let c = cls(8, 2, 1);
        let cd = convergent_direction(&d, &c).unwrap();
        let rep = kkt_residual(&cd.to_state(0.1, 1.0), &d).unwrap();
        let g_expect = (PI / 15.0).cos() * rep.lambda_plus / rep.lambda_minus;
        let on_plus: Vec<f64> = rep
            .boundary
            .iter()
            .filter(|b| c.k_plus.contains(&b.neuron))
            .map(|b| b.g)
            .collect();
        assert_eq!(on_plus.len(), 2);
        assert!(on_plus.iter().all(|g| (g - g_expect).abs() < 1e-10));
    }

    #[test]
    fn perturbed_direction_is_not_stationary() {
        let d = ds(PI / 15.0, 20);
        let c = cls(100, 25, 14);
        let cd = convergent_direction(&d, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..cd.theta_bar.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let noise = scaled(0.1 / norm(&noise), &noise);
        let theta = lin2(1.0, &cd.theta_bar, 1.0, &noise);
        let rep = kkt_residual(&NetworkState::from_weights(theta, 100, 0.1, 1.0), &d).unwrap();
        assert!(rep.stationarity > 1e-3, "{}", rep.stationarity);
    }

    #[test]
    fn family_identity_and_margins() {
        let d = ds(PI / 15.0, 6);
        let c = cls(20, 6, 3);
        let cert = margin_certificate(&d, &c, 1.0).unwrap();
        let p0 = perturbation_family(&cert, &d, &c, 0.0);
        assert_eq!(p0.theta, cert.scaled_direction);
        assert!((p0.f_plus - 1.0).abs() < 1e-12 && (p0.f_minus + 1.0).abs() < 1e-12);
        // Independent evaluation: K- blocks pick up eps * sin^2 on x+ while the
        // K+ blocks lose the same amount, and both enter f+ with opposite signs.
        let s2 = (PI / 15.0).sin().powi(2);
        let scale = 1.0 / (20f64).sqrt();
        for eps in [1e-3, 1e-2, 0.1] {
            let pe = perturbation_family(&cert, &d, &c, eps);
            assert!((pe.f_minus + 1.0).abs() < 1e-12);
            let expect = 1.0 - eps * scale * cert.q * s2 * 9.0;
            assert!((pe.f_plus - expect).abs() < 1e-12, "{eps}: {} vs {expect}", pe.f_plus);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let d = ds(PI / 15.0, 6);
        let c = cls(100, 25, 14);
        let cert = margin_certificate(&d, &c, 1.0).unwrap();
        let chk = norm_derivative_check(&cert, &d, &c);
        assert!(chk.passes(1e-6), "{chk:?}");
        let s2 = (PI / 15.0).sin().powi(2);
        let over = cert.norm_derivative_at_zero / (2.0 * 25.0 * cert.q * cert.q);
        assert!((over + (1.0 + 14.0 / 25.0) * s2).abs() < 1e-14);
    }

    #[test]
    fn derivative_negative_on_grid() {
        for &(mp, mm) in &[(100usize, 26usize), (50, 30), (40, 39), (60, 15)] {
            for j in 1..12 {
                let delta = j as f64 * PI / 24.0;
                let d = ds(delta, 4);
                let m = 2 * (mp + mm) + 2;
                let c = cls(m, mp, mm);
                let cert = margin_certificate(&d, &c, 1.0).unwrap();
                let chk = norm_derivative_check(&cert, &d, &c);
                assert!(chk.analytic < 0.0 && chk.finite_difference < 0.0, "{mp} {mm} {delta}");
            }
        }
    }
}
