//! Cross-module checks shared by `verify` and the acceptance suite.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::flow::{Snapshot, Trajectory};
use crate::linalg::cosine;
use crate::network::NetworkState;
use crate::phases::{t_i_snapshot, Level, NeuronClassification, PatternEvolutionSummary, PhaseTimeline};
use crate::reduced::{ij_from_network, ij_rhs, ratio_limit, rk4_at_times, uv_from_network, uv_rhs, ReducedParams};
use crate::theory::convergent_direction;

/// Largest relative deviation of `(x, y)` from an RK4 solution started at
/// the first snapshot, both sampled at the snapshot times.
fn oracle_error(
    snaps: &[&Snapshot],
    extract: impl Fn(f64, f64) -> (f64, f64),
    rhs: impl Fn(f64, f64) -> (f64, f64),
) -> Result<f64> {
    let first = snaps.first().ok_or(Error::IncompleteTimeline("oracle window"))?;
    let t0 = first.time;
    let s0 = extract(first.f_plus, first.f_minus);
    let times: Vec<f64> = snaps.iter().map(|s| s.time - t0).collect();
    let reference = rk4_at_times(rhs, s0, &times, 1e-2)?;
    Ok(snaps
        .iter()
        .zip(reference)
        .map(|(s, (xr, yr))| {
            let (x, y) = extract(s.f_plus, s.f_minus);
            ((x - xr) / xr).abs().max(((y - yr) / yr).abs())
        })
        .fold(0.0, f64::max))
}

/// `(U, V)` from the simulator against the reduced system on `[t_I, t_II)`.
pub fn uv_oracle_error(traj: &Trajectory, ds: &Dataset, cls: &NeuronClassification, timeline: &PhaseTimeline) -> Result<f64> {
    let params = ReducedParams::new(ds, cls, traj.final_state.kappa2)?;
    let start = t_i_snapshot(traj)?.step;
    let end = timeline.t_ii.ok_or(Error::IncompleteTimeline("t_II"))?.step;
    let snaps: Vec<&Snapshot> = traj.snapshots.iter().filter(|s| s.step >= start && s.step < end).collect();
    oracle_error(&snaps, |fp, fm| uv_from_network(fp, fm, &params), |u, v| uv_rhs(u, v, &params))
}

/// `(I, J)` from the simulator against the reduced system after `t_III`.
pub fn ij_oracle_error(traj: &Trajectory, ds: &Dataset, cls: &NeuronClassification, timeline: &PhaseTimeline) -> Result<f64> {
    let params = ReducedParams::new(ds, cls, traj.final_state.kappa2)?;
    let start = timeline.t_iii.ok_or(Error::IncompleteTimeline("t_III"))?.step;
    let snaps: Vec<&Snapshot> = traj.snapshots.iter().filter(|s| s.step >= start).collect();
    oracle_error(&snaps, |fp, fm| ij_from_network(fp, fm, &params), |i, j| ij_rhs(i, j, &params))
}

/// Dead neurons at `t_I` carry bit-identical weights at the end of the run.
pub fn dead_stay_dead(traj: &Trajectory, cls: &NeuronClassification) -> Result<bool> {
    let snap = t_i_snapshot(traj)?;
    let w0 = snap.weights.as_ref().ok_or(Error::IncompleteTimeline("weights at t_I"))?;
    let w1 = &traj.final_state.weights;
    let d = traj.final_state.dim;
    Ok(cls.dead.iter().all(|&k| w0[k * d..(k + 1) * d] == w1[k * d..(k + 1) * d]))
}

/// Minimum cosine of `K+` neurons with `v+` and of `K-` neurons with `v-`.
pub fn directional_alignment(state: &NetworkState, ds: &Dataset, cls: &NeuronClassification) -> Result<(f64, f64)> {
    let cd = convergent_direction(ds, cls)?;
    let min_cos = |set: &[usize], v: &[f64]| {
        set.iter().map(|&k| cosine(state.row(k), v)).fold(f64::INFINITY, f64::min)
    };
    Ok((min_cos(&cls.k_plus, &cd.v_plus), min_cos(&cls.k_minus, &cd.v_minus)))
}

/// `|p exp(-(f+ + f-)) - limit|` at the given outputs.
pub fn ratio_gap(f_plus: f64, f_minus: f64, ds: &Dataset, cls: &NeuronClassification, kappa2: f64) -> Result<f64> {
    let params = ReducedParams::new(ds, cls, kappa2)?;
    Ok((ds.p() * (-(f_plus + f_minus)).exp() - ratio_limit(&params)).abs())
}

/// Least-squares slope of `log loss` against `log(t - t_iii)` over the last
/// decade of `t - t_iii`.
pub fn final_decade_loss_slope(traj: &Trajectory, t_iii: f64) -> Option<f64> {
    let span = traj.end_time() - t_iii;
    if !(span > 0.0) {
        return None;
    }
    let pts: Vec<(f64, f64)> = traj
        .snapshots
        .iter()
        .filter(|s| s.time - t_iii >= 0.1 * span)
        .map(|s| ((s.time - t_iii).ln(), s.loss.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// `sgn-` over `K+` follows `(1, mixed, 0, 0)`, `sgn+` over `K-` follows
/// `(0, 0, 0, 1)`, one `K+` flip at `t_II`, `K-` spread within `2 eta`.
pub fn pattern_table_matches(t: &PatternEvolutionSummary, eta: f64) -> bool {
    use Level::*;
    t.sgn_minus_k_plus == [One, Mixed, Zero, Zero]
        && t.sgn_plus_k_minus == [Zero, Zero, Zero, One]
        && t.k_plus_flips_at_t_ii == 1
        && t.k_minus_spread_at_t_iii <= 2.0 * eta + 1e-12
}
