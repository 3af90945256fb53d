//! The two-cluster dataset: `n_plus` copies of a positive point and
//! `n_minus` copies of a negative point separated by a small angle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::linalg::{dot, lin2, norm, normalized, scaled};
use crate::record::{Record, RecordWriter};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    /// Angle between the two cluster points, radians.
    pub delta: f64,
    pub n_plus: usize,
    pub n_minus: usize,
    pub dim: usize,
    /// Orients span{x+, x-} inside R^dim.
    pub seed: u64,
}

impl DatasetSpec {
    /// Class-imbalance ratio `n_plus / n_minus`.
    pub fn p(&self) -> f64 {
        self.n_plus as f64 / self.n_minus as f64
    }

    pub fn n(&self) -> usize {
        self.n_plus + self.n_minus
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::BadDimension(self.dim));
        }
        if self.n_plus == 0 || self.n_minus == 0 {
            return Err(Error::AssumptionViolation(
                "both classes need at least one sample".into(),
            ));
        }
        if !(self.delta > 0.0 && self.delta < std::f64::consts::FRAC_PI_2) {
            return Err(Error::AssumptionViolation(format!(
                "delta={} is outside (0, pi/2)",
                self.delta
            )));
        }
        let pc = self.p() * self.delta.cos();
        if pc <= 1.0 {
            return Err(Error::AssumptionViolation(format!(
                "p*cos(delta) = {pc} <= 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_plus: Vec<f64>,
    pub x_minus: Vec<f64>,
    pub spec: DatasetSpec,
}

/// Data-dependent directions used throughout the analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyDirections {
    /// Label-average direction `z / |z|`.
    pub mu: Vec<f64>,
    /// Unit vector in the plane orthogonal to `x_plus`, on the `x_minus` side.
    pub x_plus_perp: Vec<f64>,
    /// Unit vector in the plane orthogonal to `x_minus`, on the `x_plus` side.
    pub x_minus_perp: Vec<f64>,
    /// Unnormalized label average `(1/n) sum y_i x_i`.
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub point: Vec<f64>,
    /// +1 or -1.
    pub label: f64,
}

/// Builds the dataset, rejecting specs outside the `p cos(delta) > 1` regime.
pub fn build(spec: DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    Ok(Dataset::geometry(spec))
}

impl Dataset {
    /// Places `x_minus = e1` and `x_plus = cos(delta) e1 + sin(delta) e2` for a
    /// seeded orthonormal pair `(e1, e2)`. Skips the regime check, so it also
    /// serves degenerate geometry probes; use [`build`] for real experiments.
    pub fn geometry(spec: DatasetSpec) -> Dataset {
        let (e1, e2) = seeded_plane(spec.dim.max(2), spec.seed);
        let (s, c) = spec.delta.sin_cos();
        Dataset {
            x_plus: lin2(c, &e1, s, &e2),
            x_minus: e1,
            spec,
        }
    }

    pub fn dim(&self) -> usize {
        self.x_plus.len()
    }

    pub fn p(&self) -> f64 {
        self.spec.p()
    }

    pub fn delta(&self) -> f64 {
        self.spec.delta
    }

    /// Orthonormal in-plane basis `(x_minus, x_minus_perp)` used for polar
    /// projections; `x_plus` sits at angle `delta`.
    pub fn plane_basis(&self) -> (Vec<f64>, Vec<f64>) {
        (self.x_minus.clone(), key_directions(self).x_minus_perp)
    }

    pub fn to_record(&self) -> String {
        let mut w = RecordWriter::new();
        w.float("delta", self.spec.delta)
            .raw("n_plus", self.spec.n_plus)
            .raw("n_minus", self.spec.n_minus)
            .raw("dim", self.spec.dim)
            .raw("seed", self.spec.seed)
            .vec("x_plus", &self.x_plus)
            .vec("x_minus", &self.x_minus);
        w.finish()
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let r = Record::parse(text)?;
        let spec = DatasetSpec {
            delta: r.require("delta")?,
            n_plus: r.require("n_plus")?,
            n_minus: r.require("n_minus")?,
            dim: r.require("dim")?,
            seed: r.require("seed")?,
        };
        let x_plus = r.require_vec("x_plus")?;
        let x_minus = r.require_vec("x_minus")?;
        if x_plus.len() != spec.dim || x_minus.len() != spec.dim {
            return Err(Error::Parse("point length does not match dim".into()));
        }
        Ok(Dataset {
            x_plus,
            x_minus,
            spec,
        })
    }
}

fn seeded_plane(dim: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let g1: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let g2: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n1 = norm(&g1);
        if n1 < 1e-8 {
            continue;
        }
        let e1 = scaled(1.0 / n1, &g1);
        let r = lin2(1.0, &g2, -dot(&g2, &e1), &e1);
        let nr = norm(&r);
        if nr < 1e-8 {
            continue;
        }
        // Second Gram-Schmidt pass keeps <e1, e2> at rounding level.
        let r = normalized(&r);
        let e2 = normalized(&lin2(1.0, &r, -dot(&r, &e1), &e1));
        return (e1, e2);
    }
}

pub fn key_directions(ds: &Dataset) -> KeyDirections {
    let c = dot(&ds.x_plus, &ds.x_minus);
    let p = ds.p();
    let x_plus_perp = normalized(&lin2(1.0, &ds.x_minus, -c, &ds.x_plus));
    let x_minus_perp = normalized(&lin2(1.0, &ds.x_plus, -c, &ds.x_minus));
    let z = lin2(p / (1.0 + p), &ds.x_plus, -1.0 / (1.0 + p), &ds.x_minus);
    let mu = normalized(&z);
    KeyDirections {
        mu,
        x_plus_perp,
        x_minus_perp,
        z,
    }
}

/// Margin of the dataset, `sin(delta / 2)`.
pub fn margin(ds: &Dataset) -> f64 {
    (ds.spec.delta / 2.0).sin()
}

/// Rotates all but one copy of each cluster point inside span{x+, x-} by an
/// independent angle drawn from `Uniform[0, delta/4]`. Returns positives
/// first; index 0 of each class is the unperturbed point.
pub fn noisy_variant(ds: &Dataset, seed: u64) -> Vec<NoisySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quarter = ds.spec.delta / 4.0;
    let noise = Uniform::new_inclusive(0.0, quarter).expect("delta/4 is a valid range");
    let (e1, e2) = ds.plane_basis();
    let at_angle = |theta: f64| {
        let (s, c) = theta.sin_cos();
        lin2(c, &e1, s, &e2)
    };
    let mut out = Vec::with_capacity(ds.spec.n());
    for (count, base, label, exact) in [
        (ds.spec.n_plus, ds.spec.delta, 1.0, &ds.x_plus),
        (ds.spec.n_minus, 0.0, -1.0, &ds.x_minus),
    ] {
        for i in 0..count {
            let point = if i == 0 {
                exact.clone()
            } else {
                at_angle(base + noise.sample(&mut rng))
            };
            out.push(NoisySample { point, label });
        }
    }
    out
}


/// Weighted point set seen by the loss: `L = sum_i w_i exp(-y_i f(x_i))`.
///
/// The noiseless dataset collapses to two points weighted by class
/// frequency; the noisy variant keeps every sample at weight `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TrainingSet {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let p = ds.p();
        TrainingSet {
            points: vec![ds.x_plus.clone(), ds.x_minus.clone()],
            labels: vec![1.0, -1.0],
            weights: vec![p / (1.0 + p), 1.0 / (1.0 + p)],
        }
    }

    pub fn from_noisy(samples: &[NoisySample]) -> Self {
        let w = 1.0 / samples.len() as f64;
        TrainingSet {
            points: samples.iter().map(|s| s.point.clone()).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
            weights: vec![w; samples.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }
}
