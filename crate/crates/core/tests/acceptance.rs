//! End-to-end acceptance criteria. Each test prints one status line straight
//! to stdout so the lines survive output capture.

use std::io::Write as _;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relu_gf::harness::checks::{
    dead_stay_dead, directional_alignment, final_decade_loss_slope, ij_oracle_error, pattern_table_matches,
    ratio_gap, uv_oracle_error,
};
use relu_gf::harness::{execute, run_sweep, ExperimentConfig, RunOutput, SweepSpec, Target};
use relu_gf::linalg::{lin2, norm, scaled};
use relu_gf::network::NetworkState;
use relu_gf::parallel::map_jobs;
use relu_gf::phases::t_i_snapshot;
use relu_gf::reduced::{rk4_integrate, uv_first_integral, uv_from_network, uv_log_argument, uv_rhs, ReducedParams};
use relu_gf::theory::{
    convergent_direction, kkt_residual, margin_certificate, norm_derivative_check, FitModel,
};

fn report(n: u32, name: &str, pass: bool, detail: String) {
    let line = format!("criterion {n:>2} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn reference_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.flow.t_max = 8000.0;
    c.stop_after_t_iii = Some(4.0);
    c
}

/// Reference run continued to `4 T_III`.
fn reference() -> &'static RunOutput {
    static RUN: OnceLock<RunOutput> = OnceLock::new();
    RUN.get_or_init(|| execute(&reference_config()).expect("reference run"))
}

/// Reference run continued to `101 T_III`, long enough for the loss to
/// settle into its asymptotic rate.
fn long_reference() -> &'static RunOutput {
    static RUN: OnceLock<RunOutput> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut c = reference_config();
        c.flow.t_max = 120_000.0;
        c.flow.snapshot_stride = 10_000;
        c.stop_after_t_iii = Some(101.0);
        execute(&c).expect("long reference run")
    })
}

fn fine_reference() -> &'static RunOutput {
    static RUN: OnceLock<RunOutput> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut c = reference_config();
        c.flow.eta = 0.0025;
        c.flow.snapshot_stride = 400;
        c.stop_after_t_iii = Some(1.2);
        execute(&c).expect("fine reference run")
    })
}

const SWEEP_COMMON: &str = "sweep.seeds = 2,2,2,2\nflow.t_max = 20000\nflow.stop_after_t_iii = 1\nflow.snapshot_stride = 1000\n";

fn delta_sweep() -> &'static relu_gf::harness::SweepOutcome {
    static OUT: OnceLock<relu_gf::harness::SweepOutcome> = OnceLock::new();
    OUT.get_or_init(|| {
        let text = format!(
            "sweep.axis = delta\nsweep.values = 4*pi/45, pi/15, 0.5625*4*pi/45, 0.421875*4*pi/45\n{SWEEP_COMMON}"
        );
        run_sweep(&SweepSpec::parse(&text).unwrap(), None).expect("delta sweep")
    })
}

fn p_sweep() -> &'static relu_gf::harness::SweepOutcome {
    static OUT: OnceLock<relu_gf::harness::SweepOutcome> = OnceLock::new();
    OUT.get_or_init(|| {
        let text = format!("sweep.axis = p\nsweep.values = 6, 8, 10, 12\n{SWEEP_COMMON}");
        run_sweep(&SweepSpec::parse(&text).unwrap(), None).expect("p sweep")
    })
}

fn count_runs() -> &'static Vec<RunOutput> {
    static RUNS: OnceLock<Vec<RunOutput>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let seeds: Vec<u64> = (0..20).collect();
        map_jobs(&seeds, None, |&seed| {
            let mut c = ExperimentConfig::default();
            c.m = 2000;
            c.init_seed = seed;
            c.flow.t_max = 3.3;
            execute(&c).expect("phase I run")
        })
    })
}

#[test]
fn criterion_01_plateau_exactness() {
    let out = reference();
    let a = out.analysis.as_ref().unwrap();
    let tl = &a.timeline;
    let pass = tl.t_plat.is_some() && tl.t_iii.is_some() && a.profile.violations.is_empty();
    report(
        1,
        "plateau_exactness",
        pass,
        format!(
            "plateau={} post={} violations={} t_plat={:?} t_III={:?}",
            a.profile.plateau_value,
            a.profile.post_value,
            a.profile.violations.len(),
            tl.t_plat.map(|h| h.step),
            tl.t_iii.map(|h| h.step)
        ),
    );
}

#[test]
fn criterion_02_delta_axis_scaling() {
    let o = delta_sweep();
    let realistic = [1.96e4, 3.68e4, 7.25e4, 12.87e4];
    let samples = o.samples(Target::TPlat);
    let fit = o.fit(Target::TPlat, FitModel::InvSqPlusInv);
    let fit_err = fit.map_or(f64::INFINITY, |f| f.max_relative_error(&samples));
    let band: Vec<f64> = o
        .rows
        .iter()
        .zip(realistic)
        .map(|(r, t)| r.t_plat.map_or(f64::INFINITY, |x| x as f64 / t - 1.0))
        .collect();
    let pass = samples.len() == 4 && fit_err <= 0.05 && band.iter().all(|d| d.abs() <= 0.30);
    report(
        2,
        "delta_axis_scaling",
        pass,
        format!(
            "t_plat={:?} fit_max_rel_err={fit_err:.4} deviation_from_table={:?}",
            samples.iter().map(|s| s.1).collect::<Vec<_>>(),
            band.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_03_p_axis_scaling() {
    let o = p_sweep();
    let r2 = o.fit(Target::TPlat, FitModel::Linear).map_or(f64::NAN, |f| f.r_squared);
    let gamma = o
        .fit(Target::TIii, FitModel::FreePower)
        .and_then(|f| f.gamma)
        .unwrap_or(f64::NAN);
    let pass = r2 >= 0.99 && (1.3..=1.7).contains(&gamma);
    report(
        3,
        "p_axis_scaling",
        pass,
        format!(
            "t_plat={:?} linear_r2={r2:.6} t_III={:?} free_power_gamma={gamma:.4}",
            o.samples(Target::TPlat).iter().map(|s| s.1).collect::<Vec<_>>(),
            o.samples(Target::TIii).iter().map(|s| s.1).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_04_neuron_counts() {
    let runs = count_runs();
    let mut ok = 0;
    let mut fracs = Vec::new();
    for r in runs {
        let c = &r.analysis.as_ref().unwrap().classification;
        let (fp, fm) = (c.m_plus as f64 / 2000.0, c.m_minus as f64 / 2000.0);
        fracs.push((fp, fm));
        if (0.21..=0.29).contains(&fp) && (0.075..=0.205).contains(&fm) {
            ok += 1;
        }
    }
    let (lo_p, hi_p) = fracs.iter().fold((1.0f64, 0.0f64), |a, f| (a.0.min(f.0), a.1.max(f.0)));
    let (lo_m, hi_m) = fracs.iter().fold((1.0f64, 0.0f64), |a, f| (a.0.min(f.1), a.1.max(f.1)));
    report(
        4,
        "neuron_counts",
        ok >= 19,
        format!("in_bounds={ok}/20 k_plus_frac=[{lo_p:.4},{hi_p:.4}] k_minus_frac=[{lo_m:.4},{hi_m:.4}]"),
    );
}

#[test]
fn criterion_05_pattern_table() {
    let out = reference();
    let a = out.analysis.as_ref().unwrap();
    let t = a.table.as_ref();
    let pass = t.is_some_and(|t| pattern_table_matches(t, out.trajectory.eta));
    report(
        5,
        "pattern_table",
        pass,
        t.map_or("timeline incomplete".into(), |t| {
            format!(
                "sgn_minus_k_plus={:?} sgn_plus_k_minus={:?} k_plus_flips={} k_minus_spread={}",
                t.sgn_minus_k_plus, t.sgn_plus_k_minus, t.k_plus_flips_at_t_ii, t.k_minus_spread_at_t_iii
            )
        }),
    );
}

#[test]
fn criterion_06_reduced_oracle() {
    let errs = |out: &RunOutput| {
        let a = out.analysis.as_ref().unwrap();
        let uv = uv_oracle_error(&out.trajectory, &out.dataset, &a.classification, &a.timeline).unwrap();
        let ij = ij_oracle_error(&out.trajectory, &out.dataset, &a.classification, &a.timeline).unwrap();
        (uv, ij)
    };
    let (uv1, ij1) = errs(reference());
    let (uv4, ij4) = errs(fine_reference());
    let pass = uv1 <= 1e-2 && ij1 <= 1e-2 && uv4 <= 2.5e-3 && ij4 <= 2.5e-3;
    report(
        6,
        "reduced_oracle",
        pass,
        format!("uv eta=0.01:{uv1:.3e} eta=0.0025:{uv4:.3e}; ij eta=0.01:{ij1:.3e} eta=0.0025:{ij4:.3e}"),
    );
}

#[test]
fn criterion_07_first_integral() {
    let out = reference();
    let a = out.analysis.as_ref().unwrap();
    let params = ReducedParams::new(&out.dataset, &a.classification, 1.0).unwrap();
    let snap = t_i_snapshot(&out.trajectory).unwrap();
    let start = uv_from_network(snap.f_plus, snap.f_minus, &params);
    let horizon = a.timeline.t_ii.unwrap().time - snap.time;
    let mut worst = 0.0f64;
    let mut evaluated = 0usize;
    let mut past_resolution = 0usize;
    for scale in [1.0, 1.5, 3.0] {
        let s0 = (start.0 * scale, start.1);
        let dt = 1e-3 / s0.0;
        let tr = rk4_integrate(|u, v| uv_rhs(u, v, &params), s0, dt, horizon).unwrap();
        for k in (0..tr.len()).step_by(500) {
            let st = (tr.x[k], tr.y[k]);
            // Below this the argument is lost to cancellation in U/V.
            if uv_log_argument(st, &params) < 1e-6 {
                past_resolution += 1;
                continue;
            }
            worst = worst.max(uv_first_integral(st, &params, s0).unwrap().abs());
            evaluated += 1;
        }
    }
    report(
        7,
        "first_integral",
        evaluated > 0 && worst <= 1e-8,
        format!("max_residual={worst:.3e} points={evaluated} beyond_float_resolution={past_resolution}"),
    );
}

#[test]
fn criterion_08_directional_convergence() {
    let out = reference();
    let a = out.analysis.as_ref().unwrap();
    let cls = &a.classification;
    let (cp, cm) = directional_alignment(&out.trajectory.final_state, &out.dataset, cls).unwrap();
    let last = out.trajectory.snapshots.last().unwrap();
    let gap = ratio_gap(last.f_plus, last.f_minus, &out.dataset, cls, 1.0).unwrap();
    let reached = a.timeline.t_iii.is_some_and(|h| out.trajectory.final_state.step >= 4 * h.step);
    let pass = reached && cp >= 0.99 && cm >= 0.99 && gap <= 1e-2;
    report(
        8,
        "directional_convergence",
        pass,
        format!("min_cos_plus={cp:.6} min_cos_minus={cm:.6} ratio_gap={gap:.3e} reached_4x={reached}"),
    );
}

#[test]
fn criterion_09_phase4_loss_rate() {
    let at = |out: &RunOutput| {
        let t3 = out.analysis.as_ref().unwrap().timeline.t_iii.unwrap().time;
        let span = (out.trajectory.end_time() - t3) / t3;
        (final_decade_loss_slope(&out.trajectory, t3).unwrap_or(f64::NAN), span)
    };
    let (short, short_span) = at(reference());
    let (slope, span) = at(long_reference());
    report(
        9,
        "phase4_loss_rate",
        (slope + 1.0).abs() <= 0.1,
        format!("slope={slope:.4} over t-T_III<={span:.0}T_III; at {short_span:.0}T_III slope={short:.4}"),
    );
}

#[test]
fn criterion_10_norm_derivative_refutation() {
    let out = reference();
    let cls = &out.analysis.as_ref().unwrap().classification;
    let ds = &out.dataset;
    let cert = margin_certificate(ds, cls, 1.0).unwrap();
    let chk = norm_derivative_check(&cert, ds, cls);
    let cd = convergent_direction(ds, cls).unwrap();
    let m = cd.m;
    let kkt = kkt_residual(&cd.to_state(0.1, 1.0), ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let noise: Vec<f64> = (0..cd.theta_bar.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let noise = scaled(0.1 * norm(&cd.theta_bar) / norm(&noise), &noise);
    let perturbed = NetworkState::from_weights(lin2(1.0, &cd.theta_bar, 1.0, &noise), m, 0.1, 1.0);
    let pert = kkt_residual(&perturbed, ds).map(|r| r.stationarity).unwrap_or(f64::INFINITY);
    let pass = chk.passes(1e-6) && kkt.stationarity <= 1e-9 && kkt.complementarity.abs() <= 1e-9 && pert > 1e-3;
    report(
        10,
        "norm_derivative_refutation",
        pass,
        format!(
            "analytic={:.10e} fd={:.10e} rel_err={:.2e} kkt={:.2e} perturbed_kkt={:.3e}",
            chk.analytic,
            chk.finite_difference,
            chk.relative_error,
            kkt.stationarity,
            pert
        ),
    );
}

fn euler_contraction() -> (f64, f64, f64) {
    let run = |eta: f64| {
        let mut c = ExperimentConfig::default();
        c.flow.eta = eta;
        c.flow.t_max = 50.0;
        c.flow.snapshot_stride = (1.0 / eta).round() as u64;
        c.analyze = false;
        execute(&c).unwrap().trajectory
    };
    let trs: Vec<_> = map_jobs(&[0.01, 0.005, 0.0025], None, |&e| run(e));
    let full = |i: usize| -> Vec<(f64, &Vec<f64>)> {
        trs[i]
            .snapshots
            .iter()
            .filter_map(|s| s.weights.as_ref().map(|w| (s.time, w)))
            .filter(|(t, _)| (t - t.round()).abs() < 1e-9)
            .collect()
    };
    let diff = |a: usize, b: usize| {
        let (sa, sb) = (full(a), full(b));
        sa.iter()
            .filter_map(|(t, wa)| {
                sb.iter()
                    .find(|(u, _)| (u - t).abs() < 1e-9)
                    .map(|(_, wb)| norm(&lin2(1.0, wa, -1.0, wb)))
            })
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (diff(0, 1), diff(1, 2));
    (e1, e2, e1 / e2)
}

#[test]
fn criterion_11_dynamics_invariants() {
    let mut dead_ok = true;
    let mut slide = 0.0f64;
    let mut runs = 0usize;
    for out in [reference(), fine_reference(), long_reference()].into_iter().chain(count_runs().iter()) {
        let a = out.analysis.as_ref().unwrap();
        dead_ok &= dead_stay_dead(&out.trajectory, &a.classification).unwrap();
        slide = slide.max(out.trajectory.max_sliding_residual);
        runs += 1;
    }
    for o in [delta_sweep(), p_sweep()] {
        for r in &o.rows {
            dead_ok &= r.dead_stayed == Some(true);
            slide = slide.max(r.max_sliding_residual);
            runs += 1;
        }
    }
    let (e1, e2, ratio) = euler_contraction();
    let pass = dead_ok && slide <= 1e-12 && (1.7..=2.3).contains(&ratio);
    report(
        11,
        "dynamics_invariants",
        pass,
        format!("runs={runs} dead_stays_dead={dead_ok} max_sliding_residual={slide:.3e} euler_errors=({e1:.3e},{e2:.3e}) ratio={ratio:.4}"),
    );
}
