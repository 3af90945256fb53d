//! KKT residuals for the two-constraint max-margin problem.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::flow::DataPoint;
use crate::linalg::{axpy, dot, norm, scaled};
use crate::network::{predict, NetworkState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Gate {
    On,
    Off,
    Boundary,
}

/// Subgradient value chosen for a boundary pre-activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySelection {
    pub neuron: usize,
    pub point: DataPoint,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// Factor dividing `theta` to reach minimum margin 1.
    pub margin_scale: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// `|theta_hat - sum lambda_i y_i df_i| / |theta_hat|`.
    pub stationarity: f64,
    /// `min_i y_i f_i(theta_hat) - 1`; zero after rescaling.
    pub feasibility: f64,
    /// `sum lambda_i (y_i f_i(theta_hat) - 1)`.
    pub complementarity: f64,
    pub boundary: Vec<BoundarySelection>,
}

/// Orthonormal basis of `span(vs)`, dropping near-dependent vectors.
fn orthonormal(vs: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut r = v.to_vec();
        for q in &basis {
            let c = dot(q, &r);
            axpy(-c, q, &mut r);
        }
        let n = norm(&r);
        if n > 1e-12 * norm(v).max(f64::MIN_POSITIVE) {
            basis.push(scaled(1.0 / n, &r));
        }
    }
    basis
}

fn project_out(basis: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut r = v.to_vec();
    for q in basis {
        let c = dot(q, &r);
        axpy(-c, q, &mut r);
    }
    r
}

/// Minimizes `|r - l1 a - l2 d|^2` over `l1, l2 >= 0`.
fn nnls2(r: &[f64], a: &[f64], d: &[f64]) -> (f64, f64) {
    let (aa, ad, dd) = (dot(a, a), dot(a, d), dot(d, d));
    let (ra, rd) = (dot(r, a), dot(r, d));
    let cost = |l1: f64, l2: f64| {
        dot(r, r) - 2.0 * (l1 * ra + l2 * rd) + l1 * l1 * aa + 2.0 * l1 * l2 * ad + l2 * l2 * dd
    };
    let mut cands = vec![(0.0, 0.0)];
    if aa > 0.0 {
        cands.push(((ra / aa).max(0.0), 0.0));
    }
    if dd > 0.0 {
        cands.push((0.0, (rd / dd).max(0.0)));
    }
    let det = aa * dd - ad * ad;
    if det > 1e-14 * aa * dd {
        let l1 = (ra * dd - rd * ad) / det;
        let l2 = (rd * aa - ra * ad) / det;
        if l1 >= 0.0 && l2 >= 0.0 {
            cands.push((l1, l2));
        }
    }
    cands
        .into_iter()
        .min_by(|x, y| cost(x.0, x.1).total_cmp(&cost(y.0, y.1)))
        .expect("non-empty")
}

/// Rescales `theta` to unit minimum margin, fits the multipliers and the
/// boundary subgradients, and reports the three KKT residuals.
pub fn kkt_residual(theta: &NetworkState, ds: &Dataset) -> Result<KktReport> {
    let (fp, fm) = (predict(theta, &ds.x_plus), predict(theta, &ds.x_minus));
    let gamma = fp.min(-fm);
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Infeasible(gamma));
    }
    let dim = theta.dim;
    let th: Vec<f64> = scaled(1.0 / gamma, &theta.weights);
    let (marg_p, marg_m) = (fp / gamma, -fm / gamma);
    let c = theta.scale();
    let pts: [(&[f64], f64, DataPoint); 2] = [
        (&ds.x_plus, 1.0, DataPoint::Plus),
        (&ds.x_minus, -1.0, DataPoint::Minus),
    ];

    let gates: Vec<[Gate; 2]> = (0..theta.m)
        .map(|k| {
            let b = &th[k * dim..(k + 1) * dim];
            let tol = 1e-9 * norm(b);
            let g = |x: &[f64]| {
                let a = dot(b, x);
                if a > tol {
                    Gate::On
                } else if a < -tol {
                    Gate::Off
                } else {
                    Gate::Boundary
                }
            };
            [g(&ds.x_plus), g(&ds.x_minus)]
        })
        .collect();

    // Stationarity restricted to the complement of each block's boundary
    // points depends on the multipliers alone.
    let mut r_all = Vec::with_capacity(th.len());
    let mut a_all = Vec::with_capacity(th.len());
    let mut d_all = Vec::with_capacity(th.len());
    for k in 0..theta.m {
        let b = &th[k * dim..(k + 1) * dim];
        let sk = theta.signs[k] * c;
        let bd: Vec<&[f64]> = (0..2)
            .filter(|&i| gates[k][i] == Gate::Boundary)
            .map(|i| pts[i].0)
            .collect();
        let basis = orthonormal(&bd);
        r_all.extend(project_out(&basis, b));
        // Columns for lambda_plus and lambda_minus with their label signs.
        for (i, col) in [(0usize, &mut a_all), (1usize, &mut d_all)] {
            if gates[k][i] == Gate::On {
                col.extend(project_out(&basis, &scaled(sk * pts[i].1, pts[i].0)));
            } else {
                col.extend(std::iter::repeat(0.0).take(dim));
            }
        }
    }
    let (lp, lm) = nnls2(&r_all, &a_all, &d_all);
    let lambdas = [lp, lm];

    let mut boundary = Vec::new();
    let mut res_sq = 0.0;
    for k in 0..theta.m {
        let b = &th[k * dim..(k + 1) * dim];
        let sk = theta.signs[k] * c;
        let mut r = b.to_vec();
        for i in 0..2 {
            if gates[k][i] == Gate::On {
                axpy(-sk * pts[i].1 * lambdas[i], pts[i].0, &mut r);
            }
        }
        let bd: Vec<usize> = (0..2).filter(|&i| gates[k][i] == Gate::Boundary).collect();
        if !bd.is_empty() {
            let cols: Vec<Vec<f64>> = bd
                .iter()
                .map(|&i| scaled(sk * pts[i].1 * lambdas[i], pts[i].0))
                .collect();
            let gs = fit_unit_box(&r, &cols);
            for (j, &i) in bd.iter().enumerate() {
                axpy(-gs[j], &cols[j], &mut r);
                boundary.push(BoundarySelection {
                    neuron: k,
                    point: pts[i].2,
                    g: gs[j],
                });
            }
        }
        res_sq += dot(&r, &r);
    }
    let th_norm = norm(&th);
    Ok(KktReport {
        margin_scale: gamma,
        lambda_plus: lp,
        lambda_minus: lm,
        stationarity: res_sq.sqrt() / th_norm,
        feasibility: marg_p.min(marg_m) - 1.0,
        complementarity: lp * (marg_p - 1.0) + lm * (marg_m - 1.0),
        boundary,
    })
}

/// Least squares for at most two coefficients, each clamped to `[0, 1]`.
fn fit_unit_box(r: &[f64], cols: &[Vec<f64>]) -> Vec<f64> {
    let single = |r: &[f64], col: &[f64]| {
        let n = dot(col, col);
        if n > 0.0 {
            (dot(r, col) / n).clamp(0.0, 1.0)
        } else {
            0.0
        }
    };
    match cols {
        [a] => vec![single(r, a)],
        [a, d] => {
            let (aa, ad, dd) = (dot(a, a), dot(a, d), dot(d, d));
            let det = aa * dd - ad * ad;
            let free = (det > 1e-14 * aa * dd).then(|| {
                let (ra, rd) = (dot(r, a), dot(r, d));
                ((ra * dd - rd * ad) / det, (rd * aa - ra * ad) / det)
            });
            match free {
                Some((g1, g2)) if (0.0..=1.0).contains(&g1) && (0.0..=1.0).contains(&g2) => {
                    vec![g1, g2]
                }
                _ => {
                    // Coordinate sweeps converge for a 2x2 convex box problem.
                    let (mut g1, mut g2) = (0.0, 0.0);
                    for _ in 0..50 {
                        let mut r1 = r.to_vec();
                        axpy(-g2, d, &mut r1);
                        g1 = single(&r1, a);
                        let mut r2 = r.to_vec();
                        axpy(-g1, a, &mut r2);
                        g2 = single(&r2, d);
                    }
                    vec![g1, g2]
                }
            }
        }
        _ => Vec::new(),
    }
}
