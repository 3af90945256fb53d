//! Least-squares fits of hitting times against a sweep axis.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::record::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    /// `a / x^2 + b / x + c`
    InvSqPlusInv,
    /// `a x + b`
    Linear,
    /// `a x^1.5 + b`
    Power15,
    /// `a x^gamma + b` with `gamma` fitted
    FreePower,
}

impl FitModel {
    pub fn n_params(self) -> usize {
        match self {
            FitModel::InvSqPlusInv | FitModel::FreePower => 3,
            FitModel::Linear | FitModel::Power15 => 2,
        }
    }
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitModel::InvSqPlusInv => "inv_sq_plus_inv",
            FitModel::Linear => "linear",
            FitModel::Power15 => "power_1_5",
            FitModel::FreePower => "free_power",
        })
    }
}

impl FromStr for FitModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inv_sq_plus_inv" => Ok(FitModel::InvSqPlusInv),
            "linear" => Ok(FitModel::Linear),
            "power_1_5" => Ok(FitModel::Power15),
            "free_power" => Ok(FitModel::FreePower),
            other => Err(Error::Config(format!("unknown fit model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: FitModel,
    /// `(a, b, c)` or `(a, b)` in the order of the model formula.
    pub coefficients: Vec<f64>,
    pub gamma: Option<f64>,
    pub r_squared: f64,
}

impl FitResult {
    pub fn predict(&self, x: f64) -> f64 {
        let c = &self.coefficients;
        match self.model {
            FitModel::InvSqPlusInv => c[0] / (x * x) + c[1] / x + c[2],
            FitModel::Linear => c[0] * x + c[1],
            FitModel::Power15 => c[0] * x.powf(1.5) + c[1],
            FitModel::FreePower => c[0] * x.powf(self.gamma.unwrap_or(1.0)) + c[1],
        }
    }

    /// Largest `|prediction / sample - 1|` over the samples.
    pub fn max_relative_error(&self, samples: &[(f64, f64)]) -> f64 {
        samples
            .iter()
            .map(|&(x, t)| (self.predict(x) / t - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `model, coefficients..., gamma, r2` as CSV fields.
    pub fn csv_row(&self) -> Vec<String> {
        let mut row = vec![self.model.to_string()];
        let mut coeffs = self.coefficients.clone();
        coeffs.resize(3, f64::NAN);
        row.extend(coeffs.iter().map(|&c| if c.is_nan() { String::new() } else { fmt_f64(c) }));
        row.push(self.gamma.map(fmt_f64).unwrap_or_default());
        row.push(fmt_f64(self.r_squared));
        row
    }
}

fn ols(columns: &[Vec<f64>], t: &[f64]) -> (Vec<f64>, f64) {
    let n = t.len();
    let a = DMatrix::from_fn(n, columns.len(), |r, c| columns[c][r]);
    let y = DVector::from_column_slice(t);
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .expect("SVD with both factors computed");
    let resid = &y - &a * &coef;
    (coef.iter().copied().collect(), resid.norm_squared())
}

fn r_squared(ss_res: f64, t: &[f64]) -> f64 {
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let ss_tot: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= f64::EPSILON * mean.abs().max(1.0) {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

fn fit_power(samples: &[(f64, f64)], gamma: f64) -> (Vec<f64>, f64) {
    let xs: Vec<f64> = samples.iter().map(|s| s.0.powf(gamma)).collect();
    let ones = vec![1.0; samples.len()];
    let t: Vec<f64> = samples.iter().map(|s| s.1).collect();
    ols(&[xs, ones], &t)
}

/// Ordinary least squares on untransformed times.
pub fn scaling_fit(samples: &[(f64, f64)], model: FitModel) -> Result<FitResult> {
    if samples.len() < model.n_params() {
        return Err(Error::Underdetermined {
            needed: model.n_params(),
            got: samples.len(),
        });
    }
    let t: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let col = |f: &dyn Fn(f64) -> f64| samples.iter().map(|s| f(s.0)).collect::<Vec<f64>>();
    let (coefficients, ss, gamma) = match model {
        FitModel::InvSqPlusInv => {
            let (c, ss) = ols(&[col(&|x| 1.0 / (x * x)), col(&|x| 1.0 / x), col(&|_| 1.0)], &t);
            (c, ss, None)
        }
        FitModel::Linear => {
            let (c, ss) = fit_power(samples, 1.0);
            (c, ss, None)
        }
        FitModel::Power15 => {
            let (c, ss) = fit_power(samples, 1.5);
            (c, ss, None)
        }
        FitModel::FreePower => {
            let g = best_gamma(samples);
            let (c, ss) = fit_power(samples, g);
            (c, ss, Some(g))
        }
    };
    Ok(FitResult {
        model,
        coefficients,
        gamma,
        r_squared: r_squared(ss, &t),
    })
}

/// Grid scan over `[0.05, 6]` followed by golden-section refinement.
fn best_gamma(samples: &[(f64, f64)]) -> f64 {
    let sse = |g: f64| fit_power(samples, g).1;
    let grid: Vec<f64> = (1..=120).map(|i| 0.05 * i as f64).collect();
    let (mut best, mut best_val) = (grid[0], f64::INFINITY);
    for &g in &grid {
        let v = sse(g);
        if v < best_val {
            best = g;
            best_val = v;
        }
    }
    let (mut lo, mut hi) = ((best - 0.05).max(1e-3), best + 0.05);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut fc, mut fd) = (sse(c), sse(d));
    for _ in 0..100 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = sse(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = sse(d);
        }
    }
    0.5 * (lo + hi)
}
