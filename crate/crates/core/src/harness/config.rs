//! Experiment and sweep configuration as flat `key = value` text.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, Mode};
use crate::record::{fmt_f64, Record, RecordWriter};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Seed of the angular noise; `None` trains on the exact two clusters.
    pub noise_seed: Option<u64>,
    pub m: usize,
    pub kappa1: f64,
    pub kappa2: f64,
    pub init_seed: u64,
    pub flow: FlowConfig,
    /// Stop once `step >= factor * T_III` (in iterations).
    pub stop_after_t_iii: Option<f64>,
    pub analyze: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut flow = FlowConfig::new(0.01, 2000.0);
        flow.snapshot_stride = 100;
        ExperimentConfig {
            dataset: DatasetSpec {
                delta: std::f64::consts::PI / 15.0,
                n_plus: 12,
                n_minus: 3,
                dim: 20,
                seed: 0,
            },
            noise_seed: None,
            m: 100,
            kappa1: 0.1,
            kappa2: 1.0,
            init_seed: 2,
            flow,
            stop_after_t_iii: None,
            analyze: true,
            out_dir: None,
        }
    }
}

const RUN_KEYS: &[&str] = &[
    "dataset.delta",
    "dataset.n_plus",
    "dataset.n_minus",
    "dataset.dim",
    "dataset.seed",
    "dataset.noise_seed",
    "network.m",
    "network.kappa1",
    "network.kappa2",
    "network.seed",
    "flow.eta",
    "flow.t_max",
    "flow.snapshot_stride",
    "flow.mode",
    "flow.sliding_tol",
    "flow.stop_after_t_iii",
    "analysis.enabled",
    "output.dir",
];

const SWEEP_KEYS: &[&str] = &["sweep.axis", "sweep.values", "sweep.seeds"];

/// Reads `pi`, decimals and products or quotients of them, e.g. `4*pi/45`.
pub fn parse_real(s: &str) -> Result<f64> {
    let bad = || Error::Config(format!("cannot read `{s}` as a number"));
    let s = s.trim();
    if s.is_empty() {
        return Err(bad());
    }
    let mut value = 1.0;
    let mut op = '*';
    let mut token = String::new();
    let apply = |tok: &str, op: char, value: &mut f64| -> Result<()> {
        let t = tok.trim();
        let x = if t.eq_ignore_ascii_case("pi") {
            std::f64::consts::PI
        } else {
            t.parse::<f64>().map_err(|_| bad())?
        };
        match op {
            '*' => *value *= x,
            _ => *value /= x,
        }
        Ok(())
    };
    for ch in s.chars() {
        if ch == '*' || ch == '/' {
            apply(&token, op, &mut value)?;
            token.clear();
            op = ch;
        } else {
            token.push(ch);
        }
    }
    apply(&token, op, &mut value)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(bad())
    }
}

fn get_real(r: &Record, key: &str) -> Result<Option<f64>> {
    r.get_str(key).map(parse_real).transpose()
}

fn get_parsed<T: FromStr>(r: &Record, key: &str) -> Result<Option<T>> {
    r.get::<T>(key).map_err(|e| Error::Config(e.to_string()))
}

fn check_keys(r: &Record, allowed: &[&[&str]]) -> Result<()> {
    for k in r.keys() {
        if !allowed.iter().any(|set| set.contains(&k)) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let r = Record::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        check_keys(&r, &[RUN_KEYS, SWEEP_KEYS])?;
        Self::from_record(&r)
    }

    fn from_record(r: &Record) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        if let Some(v) = get_real(r, "dataset.delta")? {
            c.dataset.delta = v;
        }
        if let Some(v) = get_parsed(r, "dataset.n_plus")? {
            c.dataset.n_plus = v;
        }
        if let Some(v) = get_parsed(r, "dataset.n_minus")? {
            c.dataset.n_minus = v;
        }
        if let Some(v) = get_parsed(r, "dataset.dim")? {
            c.dataset.dim = v;
        }
        if let Some(v) = get_parsed(r, "dataset.seed")? {
            c.dataset.seed = v;
        }
        c.noise_seed = get_parsed(r, "dataset.noise_seed")?;
        if let Some(v) = get_parsed(r, "network.m")? {
            c.m = v;
        }
        if let Some(v) = get_real(r, "network.kappa1")? {
            c.kappa1 = v;
        }
        if let Some(v) = get_real(r, "network.kappa2")? {
            c.kappa2 = v;
        }
        if let Some(v) = get_parsed(r, "network.seed")? {
            c.init_seed = v;
        }
        if let Some(v) = get_real(r, "flow.eta")? {
            c.flow.eta = v;
        }
        if let Some(v) = get_real(r, "flow.t_max")? {
            c.flow.t_max = v;
        }
        if let Some(v) = get_parsed(r, "flow.snapshot_stride")? {
            c.flow.snapshot_stride = v;
        }
        if let Some(v) = get_parsed::<Mode>(r, "flow.mode")? {
            c.flow.mode = v;
        }
        c.flow.sliding_tol = get_real(r, "flow.sliding_tol")?;
        c.stop_after_t_iii = get_real(r, "flow.stop_after_t_iii")?;
        if let Some(v) = get_parsed(r, "analysis.enabled")? {
            c.analyze = v;
        }
        c.out_dir = r.get_str("output.dir").map(PathBuf::from);
        Ok(c)
    }

    /// Checks every component invariant without running anything.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.m < 2 || self.m % 2 != 0 {
            return Err(Error::OddWidth(self.m));
        }
        if !(self.kappa1 > 0.0 && self.kappa1 < self.kappa2 && self.kappa2 <= 1.0) {
            return Err(Error::BadScales {
                kappa1: self.kappa1,
                kappa2: self.kappa2,
            });
        }
        self.flow.validate()?;
        if let Some(f) = self.stop_after_t_iii {
            if !(f >= 1.0) {
                return Err(Error::Config(format!("flow.stop_after_t_iii must be >= 1, got {f}")));
            }
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_record(&self) -> String {
        let mut w = RecordWriter::new();
        w.float("dataset.delta", self.dataset.delta)
            .raw("dataset.n_plus", self.dataset.n_plus)
            .raw("dataset.n_minus", self.dataset.n_minus)
            .raw("dataset.dim", self.dataset.dim)
            .raw("dataset.seed", self.dataset.seed);
        if let Some(s) = self.noise_seed {
            w.raw("dataset.noise_seed", s);
        }
        w.raw("network.m", self.m)
            .float("network.kappa1", self.kappa1)
            .float("network.kappa2", self.kappa2)
            .raw("network.seed", self.init_seed)
            .float("flow.eta", self.flow.eta)
            .float("flow.t_max", self.flow.t_max)
            .raw("flow.snapshot_stride", self.flow.snapshot_stride)
            .raw("flow.mode", self.flow.mode);
        if let Some(t) = self.flow.sliding_tol {
            w.float("flow.sliding_tol", t);
        }
        if let Some(f) = self.stop_after_t_iii {
            w.float("flow.stop_after_t_iii", f);
        }
        w.raw("analysis.enabled", self.analyze);
        if let Some(d) = &self.out_dir {
            w.raw("output.dir", d.display());
        }
        w.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Delta,
    /// Class ratio; `n_minus` stays fixed and `n_plus = p * n_minus`.
    P,
    Kappa1,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Delta => "delta",
            SweepAxis::P => "p",
            SweepAxis::Kappa1 => "kappa1",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(SweepAxis::Delta),
            "p" => Ok(SweepAxis::P),
            "kappa1" => Ok(SweepAxis::Kappa1),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Per-run init seeds; `None` uses `base.init_seed + index`.
    pub seeds: Option<Vec<u64>>,
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let r = Record::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        check_keys(&r, &[RUN_KEYS, SWEEP_KEYS])?;
        let base = ExperimentConfig::from_record(&r)?;
        let axis: SweepAxis = r
            .get_str("sweep.axis")
            .ok_or_else(|| Error::Config("missing key `sweep.axis`".into()))?
            .parse()?;
        let values = r
            .get_str("sweep.values")
            .ok_or_else(|| Error::Config("missing key `sweep.values`".into()))?
            .split(',')
            .map(parse_real)
            .collect::<Result<Vec<_>>>()?;
        let seeds = r
            .get_str("sweep.seeds")
            .map(|s| {
                s.split(',')
                    .map(|t| t.trim().parse::<u64>().map_err(|_| Error::Config(format!("bad seed `{t}`"))))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let spec = SweepSpec {
            base,
            axis,
            values,
            seeds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::Config(format!(
                "a sweep needs at least 2 values, got {}",
                self.values.len()
            )));
        }
        if let Some(s) = &self.seeds {
            if s.len() != self.values.len() {
                return Err(Error::Config(format!(
                    "sweep.seeds has {} entries for {} values",
                    s.len(),
                    self.values.len()
                )));
            }
        }
        for i in 0..self.values.len() {
            self.run_config(i)?.validate()?;
        }
        Ok(())
    }

    pub fn seed(&self, index: usize) -> u64 {
        match &self.seeds {
            Some(s) => s[index],
            None => self.base.init_seed + index as u64,
        }
    }

    /// Config of run `index`, with output disabled.
    pub fn run_config(&self, index: usize) -> Result<ExperimentConfig> {
        let mut c = self.base.clone();
        c.out_dir = None;
        c.init_seed = self.seed(index);
        let v = self.values[index];
        match self.axis {
            SweepAxis::Delta => c.dataset.delta = v,
            SweepAxis::Kappa1 => c.kappa1 = v,
            SweepAxis::P => {
                let n_plus = v * c.dataset.n_minus as f64;
                if (n_plus - n_plus.round()).abs() > 1e-9 || n_plus < 1.0 {
                    return Err(Error::Config(format!(
                        "p = {} does not give an integer n_plus with n_minus = {}",
                        fmt_f64(v),
                        c.dataset.n_minus
                    )));
                }
                c.dataset.n_plus = n_plus.round() as usize;
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_expressions() {
        assert_eq!(parse_real("pi").unwrap(), std::f64::consts::PI);
        assert!((parse_real("4*pi/45").unwrap() - 4.0 * std::f64::consts::PI / 45.0).abs() < 1e-16);
        assert_eq!(parse_real(" 0.25 ").unwrap(), 0.25);
        assert!(parse_real("pie").is_err());
        assert!(parse_real("1/0").is_err());
    }

    #[test]
    fn record_round_trip() {
        let mut c = ExperimentConfig::default();
        c.noise_seed = Some(9);
        c.flow.mode = Mode::PlainGd;
        c.flow.sliding_tol = Some(1e-7);
        c.stop_after_t_iii = Some(4.0);
        c.out_dir = Some("out/run".into());
        assert_eq!(ExperimentConfig::parse(&c.to_record()).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        assert!(matches!(ExperimentConfig::parse("network.width = 4"), Err(Error::Config(_))));
    }

    #[test]
    fn scale_order_is_checked() {
        let c = ExperimentConfig::parse("network.kappa1 = 1\nnetwork.kappa2 = 0.5").unwrap();
        assert!(matches!(c.validate(), Err(Error::BadScales { .. })));
    }

    #[test]
    fn sweep_seeds_and_axes() {
        let s = SweepSpec::parse("sweep.axis = p\nsweep.values = 6, 8\nnetwork.seed = 5").unwrap();
        assert_eq!((s.seed(0), s.seed(1)), (5, 6));
        assert_eq!(s.run_config(1).unwrap().dataset.n_plus, 24);
        let s = SweepSpec::parse("sweep.axis = delta\nsweep.values = pi/15, pi/20\nsweep.seeds = 3,3").unwrap();
        assert_eq!(s.seed(1), 3);
        assert!(SweepSpec::parse("sweep.axis = delta\nsweep.values = pi/15").is_err());
        assert!(SweepSpec::parse("sweep.axis = p\nsweep.values = 6.5, 8").is_err());
    }
}
