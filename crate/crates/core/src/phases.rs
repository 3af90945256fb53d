//! Post-hoc phase analysis of a trajectory: neuron classes at the end of the
//! alignment phase, hitting times, accuracy plateaus and pattern tables.

use std::fmt;

use crate::dataset::{key_directions, Dataset};
use crate::error::{Error, Result};
use crate::flow::{DataPoint, Snapshot, Trajectory};
use crate::linalg::dot;
use crate::network::NetworkState;
use crate::record::{Record, RecordWriter};

/// End of the alignment phase, `10 sqrt(kappa1 / kappa2)`.
pub fn t_i(kappa1: f64, kappa2: f64) -> f64 {
    10.0 * (kappa1 / kappa2).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronClassification {
    pub k_plus: Vec<usize>,
    pub k_minus: Vec<usize>,
    pub dead: Vec<usize>,
    pub m_plus: usize,
    pub m_minus: usize,
    /// `m_minus / m_plus`; zero when `K+` is empty.
    pub alpha: f64,
}

impl NeuronClassification {
    pub fn from_sets(k_plus: Vec<usize>, k_minus: Vec<usize>, m: usize) -> Self {
        let dead = (0..m)
            .filter(|k| !k_plus.contains(k) && !k_minus.contains(k))
            .collect();
        let (m_plus, m_minus) = (k_plus.len(), k_minus.len());
        NeuronClassification {
            alpha: if m_plus == 0 { 0.0 } else { m_minus as f64 / m_plus as f64 },
            k_plus,
            k_minus,
            dead,
            m_plus,
            m_minus,
        }
    }
}

/// Snapshot closest to `t_I`.
pub fn t_i_snapshot(traj: &Trajectory) -> Result<&Snapshot> {
    let s = &traj.final_state;
    let ti = t_i(s.kappa1, s.kappa2);
    if traj.end_time() + 0.5 * traj.eta < ti {
        return Err(Error::HorizonTooShort {
            end: traj.end_time(),
            t_i: ti,
        });
    }
    Ok(traj
        .snapshots
        .iter()
        .min_by(|a, b| (a.time - ti).abs().total_cmp(&(b.time - ti).abs()))
        .expect("trajectory always holds the initial snapshot"))
}

/// Living neurons at `t_I`, split by output sign.
pub fn classify_at_t_i(traj: &Trajectory, _ds: &Dataset) -> Result<NeuronClassification> {
    let snap = t_i_snapshot(traj)?;
    let state = &traj.final_state;
    let mut k_plus = Vec::new();
    let mut k_minus = Vec::new();
    for (k, p) in snap.patterns.neurons.iter().enumerate() {
        if p.living() {
            if state.signs[k] > 0.0 {
                k_plus.push(k);
            } else {
                k_minus.push(k);
            }
        }
    }
    Ok(NeuronClassification::from_sets(k_plus, k_minus, state.m))
}

/// A detected time in continuous units and as an iteration index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitTime {
    pub time: f64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTimeline {
    pub t_i: HitTime,
    pub t_plat: Option<HitTime>,
    pub t_ii: Option<HitTime>,
    pub t_ii_pt: Option<HitTime>,
    pub t_iii: Option<HitTime>,
    pub eta: f64,
}

impl PhaseTimeline {
    pub fn is_complete(&self) -> bool {
        self.t_plat.is_some() && self.t_ii.is_some() && self.t_ii_pt.is_some() && self.t_iii.is_some()
    }

    /// `t_I < t_plat < t_II <= t_II_pt < t_III` over the times that exist.
    pub fn is_ordered(&self) -> bool {
        let seq = [Some(self.t_i), self.t_plat, self.t_ii, self.t_ii_pt, self.t_iii];
        let present: Vec<(usize, f64)> = seq
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.map(|h| (i, h.time)))
            .collect();
        present.windows(2).all(|w| {
            let ((i, a), (_, b)) = (w[0], w[1]);
            if i == 2 {
                a <= b
            } else {
                a < b
            }
        })
    }

    pub fn to_record(&self, cls: &NeuronClassification, table: Option<&PatternEvolutionSummary>) -> String {
        let mut w = RecordWriter::new();
        w.float("eta", self.eta);
        for (name, h) in [
            ("t_I", Some(self.t_i)),
            ("t_plat", self.t_plat),
            ("t_II", self.t_ii),
            ("t_II_pt", self.t_ii_pt),
            ("t_III", self.t_iii),
        ] {
            w.opt_float(&format!("{name}.time"), h.map(|h| h.time));
            match h {
                Some(h) => w.raw(&format!("{name}.iteration"), h.step),
                None => w.raw(&format!("{name}.iteration"), "absent"),
            };
        }
        w.raw("t_IV", "absent")
            .raw("m_plus", cls.m_plus)
            .raw("m_minus", cls.m_minus)
            .raw("m_dead", cls.dead.len())
            .float("alpha", cls.alpha);
        if let Some(t) = table {
            let row = |v: &[Level; 4]| v.iter().map(Level::to_string).collect::<Vec<_>>().join(",");
            w.raw("pattern.sgn_minus_over_k_plus", row(&t.sgn_minus_k_plus))
                .raw("pattern.sgn_plus_over_k_minus", row(&t.sgn_plus_k_minus))
                .raw("pattern.k_plus_flips_at_t_II", t.k_plus_flips_at_t_ii)
                .float("pattern.k_minus_spread_at_t_III", t.k_minus_spread_at_t_iii)
                .float("pattern.change_fraction_plus", t.change_fraction_plus)
                .float("pattern.change_fraction_minus", t.change_fraction_minus);
        }
        w.finish()
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let r = Record::parse(text)?;
        let hit = |name: &str| -> Result<Option<HitTime>> {
            let t = r.require_str(&format!("{name}.time"))?;
            if t == "absent" {
                return Ok(None);
            }
            Ok(Some(HitTime {
                time: t.parse().map_err(|_| Error::Parse(format!("bad {name}.time")))?,
                step: r.require(&format!("{name}.iteration"))?,
            }))
        };
        Ok(PhaseTimeline {
            t_i: hit("t_I")?.ok_or_else(|| Error::Parse("t_I must be present".into()))?,
            t_plat: hit("t_plat")?,
            t_ii: hit("t_II")?,
            t_ii_pt: hit("t_II_pt")?,
            t_iii: hit("t_III")?,
            eta: r.require("eta")?,
        })
    }
}

/// Activation bits of the tracked neurons, replayed through the event log.
struct Replay {
    plus: Vec<bool>,
    minus: Vec<bool>,
}

impl Replay {
    fn at(snap: &Snapshot) -> Self {
        Replay {
            plus: snap.patterns.neurons.iter().map(|p| p.plus).collect(),
            minus: snap.patterns.neurons.iter().map(|p| p.minus).collect(),
        }
    }
}

fn hit_time(eta: f64, t: f64) -> HitTime {
    HitTime {
        time: t,
        step: (t / eta).round() as u64,
    }
}

pub fn detect_timeline(traj: &Trajectory, _ds: &Dataset, cls: &NeuronClassification) -> Result<PhaseTimeline> {
    let snap = t_i_snapshot(traj)?;
    let state = &traj.final_state;
    let ti = t_i(state.kappa1, state.kappa2);
    let eta = traj.eta;
    let t_plat = traj
        .accuracy_events
        .iter()
        .find(|e| e.time > snap.time && e.new == 1.0)
        .map(|e| HitTime {
            time: e.time,
            step: e.step,
        });
    let after: Vec<_> = traj.events.iter().filter(|e| e.step > snap.step).collect();
    let living = |k: usize| cls.k_plus.contains(&k) || cls.k_minus.contains(&k);
    let t_ii = after.iter().find(|e| living(e.neuron)).map(|e| HitTime {
        time: e.time,
        step: e.step,
    });
    let mut rp = Replay::at(snap);
    let all_kp_off = |rp: &Replay| cls.k_plus.iter().all(|&k| !rp.minus[k]);
    let all_km_on = |rp: &Replay| cls.k_minus.iter().all(|&k| rp.plus[k]);
    let mut t_ii_pt = None;
    let mut t_iii = None;
    for e in &after {
        match e.point {
            DataPoint::Plus => rp.plus[e.neuron] = e.new,
            DataPoint::Minus => rp.minus[e.neuron] = e.new,
        }
        if t_ii_pt.is_none() && !cls.k_plus.is_empty() && all_kp_off(&rp) {
            t_ii_pt = Some(HitTime {
                time: e.time,
                step: e.step,
            });
        }
        if t_iii.is_none() && !cls.k_minus.is_empty() && all_km_on(&rp) {
            t_iii = Some(HitTime {
                time: e.time,
                step: e.step,
            });
        }
    }
    Ok(PhaseTimeline {
        t_i: hit_time(eta, ti),
        t_plat,
        t_ii,
        t_ii_pt,
        t_iii,
        eta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyProfile {
    pub plateau_value: f64,
    pub post_value: f64,
    /// `(time, accuracy)` pairs that break either plateau.
    pub violations: Vec<(f64, f64)>,
}

/// Accuracy must sit at `p/(1+p)` on `[t_I, t_plat)` and at 1 on
/// `(t_plat, t_III]`; every snapshot and every accuracy change is checked.
pub fn accuracy_profile(traj: &Trajectory, timeline: &PhaseTimeline, p: f64) -> AccuracyProfile {
    let plateau_value = p / (1.0 + p);
    let post_value = 1.0;
    let t_i = timeline.t_i.time;
    let t_plat = timeline.t_plat.map_or(f64::INFINITY, |h| h.time);
    let t_iii = timeline.t_iii.map_or(traj.end_time(), |h| h.time);
    let mut violations = Vec::new();
    let ti_snap = t_i_snapshot(traj).map(|s| s.time).unwrap_or(t_i);
    let start = ti_snap.min(t_i);
    let mut check = |t: f64, acc: f64| {
        if t >= start && t < t_plat {
            if (acc - plateau_value).abs() > 1e-12 {
                violations.push((t, acc));
            }
        } else if t > t_plat && t <= t_iii && (acc - post_value).abs() > 1e-12 {
            violations.push((t, acc));
        }
    };
    for s in &traj.snapshots {
        check(s.time, s.accuracy);
    }
    for e in &traj.accuracy_events {
        if e.time > start && e.time != t_plat {
            check(e.time, e.new);
        }
    }
    violations.sort_by(|a, b| a.0.total_cmp(&b.0));
    violations.dedup();
    AccuracyProfile {
        plateau_value,
        post_value,
        violations,
    }
}

/// Consecutive accuracy levels `(start time, level)` after `t_I`.
pub fn accuracy_levels(traj: &Trajectory) -> Vec<(f64, f64)> {
    let s = &traj.final_state;
    let ti = t_i(s.kappa1, s.kappa2);
    let start = traj
        .snapshots
        .iter()
        .rev()
        .find(|sn| sn.time <= ti)
        .map_or(0.0, |sn| sn.accuracy);
    let mut out = vec![(ti, start)];
    for e in traj.accuracy_events.iter().filter(|e| e.time > ti) {
        out.push((e.time, e.new));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondensationReport {
    pub k_plus_align_min: f64,
    pub k_plus_align_mean: f64,
    pub k_minus_align_min: f64,
    pub k_minus_align_mean: f64,
    pub k_plus_norm: (f64, f64),
    pub k_minus_norm: (f64, f64),
}

/// Alignment of `K+` with `mu` and of `K-` with `x_plus_perp`.
pub fn condensation_report(state: &NetworkState, ds: &Dataset, cls: &NeuronClassification) -> CondensationReport {
    let dirs = key_directions(ds);
    let stats = |set: &[usize], target: &[f64]| {
        let mut min_a = f64::INFINITY;
        let mut sum = 0.0;
        let mut nmin = f64::INFINITY;
        let mut nmax = 0.0f64;
        for &k in set {
            let v = state.neuron_view(k);
            let a = v.w.as_ref().map_or(0.0, |w| dot(w, target));
            min_a = min_a.min(a);
            sum += a;
            nmin = nmin.min(v.rho);
            nmax = nmax.max(v.rho);
        }
        let mean = if set.is_empty() { f64::NAN } else { sum / set.len() as f64 };
        (min_a, mean, (nmin, nmax))
    };
    let (pm, pa, pn) = stats(&cls.k_plus, &dirs.mu);
    let (mm, ma, mn) = stats(&cls.k_minus, &dirs.x_plus_perp);
    CondensationReport {
        k_plus_align_min: pm,
        k_plus_align_mean: pa,
        k_minus_align_min: mm,
        k_minus_align_mean: ma,
        k_plus_norm: pn,
        k_minus_norm: mn,
    }
}

impl CondensationReport {
    pub fn to_record(&self) -> String {
        let mut w = RecordWriter::new();
        w.float("k_plus.align_mu.min", self.k_plus_align_min)
            .float("k_plus.align_mu.mean", self.k_plus_align_mean)
            .float("k_minus.align_x_plus_perp.min", self.k_minus_align_min)
            .float("k_minus.align_x_plus_perp.mean", self.k_minus_align_mean)
            .float("k_plus.norm.min", self.k_plus_norm.0)
            .float("k_plus.norm.max", self.k_plus_norm.1)
            .float("k_minus.norm.min", self.k_minus_norm.0)
            .float("k_minus.norm.max", self.k_minus_norm.1);
        w.finish()
    }
}

/// Value of a pattern class over one interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    One,
    Zero,
    Mixed,
    /// The class or the interval is empty.
    Empty,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::One => "1",
            Level::Zero => "0",
            Level::Mixed => "mixed",
            Level::Empty => "empty",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternEvolutionSummary {
    /// Over `[t_I, t_II)`, `[t_II, t_II_pt)`, `[t_II_pt, t_III)`, `[t_III, end]`.
    pub sgn_minus_k_plus: [Level; 4],
    pub sgn_plus_k_minus: [Level; 4],
    /// `K+` neurons switched off on `x_-` at the `t_II` step.
    pub k_plus_flips_at_t_ii: usize,
    /// Time between the first and last `K-` reactivation on `x_+` that
    /// completes the set at `t_III`.
    pub k_minus_spread_at_t_iii: f64,
    /// Fraction of all neurons whose `sgn+` differs from its `t_I` value at
    /// the end of the run.
    pub change_fraction_plus: f64,
    pub change_fraction_minus: f64,
}

#[derive(Default, Clone, Copy)]
struct Seen {
    one: bool,
    zero: bool,
}

impl Seen {
    fn level(self) -> Level {
        match (self.one, self.zero) {
            (true, false) => Level::One,
            (false, true) => Level::Zero,
            (true, true) => Level::Mixed,
            (false, false) => Level::Empty,
        }
    }
}

pub fn pattern_table(traj: &Trajectory, timeline: &PhaseTimeline, cls: &NeuronClassification) -> Result<PatternEvolutionSummary> {
    let t_ii = timeline.t_ii.ok_or(Error::IncompleteTimeline("t_II"))?;
    let t_ii_pt = timeline.t_ii_pt.ok_or(Error::IncompleteTimeline("t_II_pt"))?;
    let t_iii = timeline.t_iii.ok_or(Error::IncompleteTimeline("t_III"))?;
    let snap = t_i_snapshot(traj)?;
    let bounds = [t_ii.step, t_ii_pt.step, t_iii.step];
    let interval = |step: u64| bounds.iter().filter(|&&b| step >= b).count();
    let mut rp = Replay::at(snap);
    let mut kp = [Seen::default(); 4];
    let mut km = [Seen::default(); 4];
    let observe = |rp: &Replay, i: usize, kp: &mut [Seen; 4], km: &mut [Seen; 4]| {
        for &k in &cls.k_plus {
            if rp.minus[k] {
                kp[i].one = true;
            } else {
                kp[i].zero = true;
            }
        }
        for &k in &cls.k_minus {
            if rp.plus[k] {
                km[i].one = true;
            } else {
                km[i].zero = true;
            }
        }
    };
    observe(&rp, 0, &mut kp, &mut km);
    let after: Vec<_> = traj.events.iter().filter(|e| e.step > snap.step).collect();
    let mut i = 0;
    while i < after.len() {
        let step = after[i].step;
        while i < after.len() && after[i].step == step {
            let e = after[i];
            match e.point {
                DataPoint::Plus => rp.plus[e.neuron] = e.new,
                DataPoint::Minus => rp.minus[e.neuron] = e.new,
            }
            i += 1;
        }
        observe(&rp, interval(step), &mut kp, &mut km);
    }
    let k_plus_flips_at_t_ii = traj
        .events
        .iter()
        .filter(|e| e.step == t_ii.step && e.point == DataPoint::Minus && !e.new && cls.k_plus.contains(&e.neuron))
        .count();
    let last_on: Vec<f64> = cls
        .k_minus
        .iter()
        .filter_map(|&k| {
            traj.events
                .iter()
                .filter(|e| e.neuron == k && e.point == DataPoint::Plus && e.new && e.step <= t_iii.step)
                .map(|e| e.time)
                .next_back()
        })
        .collect();
    let k_minus_spread_at_t_iii = last_on.iter().fold(0.0f64, |acc, &t| acc.max(t_iii.time - t));
    let end = traj.snapshots.last().expect("non-empty trajectory");
    let m = cls.k_plus.len() + cls.k_minus.len() + cls.dead.len();
    let diff = |f: fn(&crate::network::NeuronPattern) -> bool| {
        snap.patterns
            .neurons
            .iter()
            .zip(&end.patterns.neurons)
            .filter(|(a, b)| f(a) != f(b))
            .count() as f64
            / m as f64
    };
    Ok(PatternEvolutionSummary {
        sgn_minus_k_plus: kp.map(Seen::level),
        sgn_plus_k_minus: km.map(Seen::level),
        k_plus_flips_at_t_ii,
        k_minus_spread_at_t_iii,
        change_fraction_plus: diff(|p| p.plus),
        change_fraction_minus: diff(|p| p.minus),
    })
}
