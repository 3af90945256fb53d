//! Experiment driver: single runs, sweeps and the verification suite, plus
//! the on-disk artifact layout.

pub mod checks;
pub mod config;

use std::fs;
use std::path::Path;

pub use config::{parse_real, ExperimentConfig, SweepAxis, SweepSpec};

use crate::dataset::{build, noisy_variant, Dataset, TrainingSet};
use crate::error::{Error, Result};
use crate::flow::{event_log, simulate_on, write_trajectory_csv, StepView, Trajectory};
use crate::network::{init, snapshot_record};
use crate::parallel::map_jobs;
use crate::phases::{
    accuracy_profile, classify_at_t_i, condensation_report, detect_timeline, pattern_table, t_i, t_i_snapshot,
    AccuracyProfile, CondensationReport, NeuronClassification, PatternEvolutionSummary, PhaseTimeline,
};
use crate::record::{fmt_f64, RecordWriter};
use crate::theory::{margin_certificate, norm_derivative_check, scaling_fit, time_scalings, FitModel, FitResult};

/// Process exit code for an error from `run`.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parse(_)
        | Error::BadScales { .. }
        | Error::OddWidth(_)
        | Error::BadDimension(_)
        | Error::AssumptionViolation(_) => 2,
        Error::NonFinite { .. } | Error::DegenerateProjection { .. } => 3,
        _ => 1,
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub classification: NeuronClassification,
    pub timeline: PhaseTimeline,
    pub profile: AccuracyProfile,
    pub table: Option<PatternEvolutionSummary>,
    pub condensation: CondensationReport,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub trajectory: Trajectory,
    pub analysis: Option<Analysis>,
}

/// Stops a run a fixed multiple of the `K-` reactivation step after it
/// happens. `K-` is read off the pre-activations at the `t_I` step.
struct StopRule {
    factor: f64,
    t_i_step: u64,
    tol: f64,
    k_minus: Option<Vec<usize>>,
    stop_at: Option<u64>,
}

impl StopRule {
    fn observe(&mut self, v: &StepView) -> bool {
        let (m, step, pre) = (v.state.m, v.state.step, v.cluster_preact);
        if step == self.t_i_step {
            self.k_minus = Some((m / 2..m).filter(|&k| pre[2 * k] > self.tol || pre[2 * k + 1] > self.tol).collect());
        }
        if self.stop_at.is_none() {
            if let Some(km) = &self.k_minus {
                if !km.is_empty() && km.iter().all(|&k| pre[2 * k] > self.tol) {
                    self.stop_at = Some(((step as f64 * self.factor).ceil() as u64).max(step + 10));
                }
            }
        }
        self.stop_at.is_some_and(|s| step >= s)
    }
}

/// Simulates and analyzes one configuration without touching the disk.
pub fn execute(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let ds = build(config.dataset)?;
    let state0 = init(config.m, config.dataset.dim, config.kappa1, config.kappa2, config.init_seed)?;
    let ti = t_i(config.kappa1, config.kappa2);
    let mut flow = config.flow.clone();
    flow.mark_times.push(ti);
    let ts = match config.noise_seed {
        Some(seed) => TrainingSet::from_noisy(&noisy_variant(&ds, seed)),
        None => TrainingSet::from_dataset(&ds),
    };
    let mut stop = config.stop_after_t_iii.map(|factor| StopRule {
        factor,
        t_i_step: (ti / flow.eta).round() as u64,
        tol: state0.default_boundary_tol(),
        k_minus: None,
        stop_at: None,
    });
    let traj = simulate_on(&ts, &ds, &state0, &flow, |v| stop.as_mut().is_some_and(|s| s.observe(v)))?;
    let analysis = if config.analyze && t_i_snapshot(&traj).is_ok() {
        Some(analyze(&traj, &ds)?)
    } else {
        None
    };
    Ok(RunOutput {
        config: config.clone(),
        dataset: ds,
        trajectory: traj,
        analysis,
    })
}

pub fn analyze(traj: &Trajectory, ds: &Dataset) -> Result<Analysis> {
    let cls = classify_at_t_i(traj, ds)?;
    let timeline = detect_timeline(traj, ds, &cls)?;
    let profile = accuracy_profile(traj, &timeline, ds.p());
    let table = pattern_table(traj, &timeline, &cls).ok();
    let snap = t_i_snapshot(traj)?;
    let state = traj
        .state_at(snap)
        .ok_or(Error::IncompleteTimeline("weights at t_I"))?;
    Ok(Analysis {
        condensation: condensation_report(&state, ds, &cls),
        classification: cls,
        timeline,
        profile,
        table,
    })
}

fn absent_timeline(eta: f64) -> String {
    let mut w = RecordWriter::new();
    w.float("eta", eta);
    for name in ["t_I", "t_plat", "t_II", "t_II_pt", "t_III"] {
        w.raw(&format!("{name}.time"), "absent")
            .raw(&format!("{name}.iteration"), "absent");
    }
    w.raw("t_IV", "absent").finish()
}

/// Writes `config.txt`, `dataset.txt`, `trajectory.csv`, `events.txt`,
/// `timeline.txt`, `final_state.txt` and, after `t_I`, `condensation.txt`.
pub fn write_bundle(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), out.config.to_record())?;
    fs::write(dir.join("dataset.txt"), out.dataset.to_record())?;
    let f = fs::File::create(dir.join("trajectory.csv"))?;
    write_trajectory_csv(&out.trajectory, &out.dataset, std::io::BufWriter::new(f))?;
    fs::write(dir.join("events.txt"), event_log(&out.trajectory))?;
    fs::write(
        dir.join("final_state.txt"),
        snapshot_record(&out.trajectory.final_state, &out.dataset),
    )?;
    let timeline = match &out.analysis {
        Some(a) => {
            fs::write(dir.join("condensation.txt"), a.condensation.to_record())?;
            a.timeline.to_record(&a.classification, a.table.as_ref())
        }
        None => absent_timeline(out.trajectory.eta),
    };
    fs::write(dir.join("timeline.txt"), timeline)?;
    Ok(())
}

/// Runs, analyzes and writes the bundle to `config.out_dir` when set.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunOutput> {
    let out = execute(config)?;
    if let Some(dir) = &config.out_dir {
        write_bundle(&out, dir)?;
    }
    Ok(out)
}

/// Hitting times in iterations for one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub t_plat: Option<u64>,
    pub t_ii: Option<u64>,
    pub t_ii_pt: Option<u64>,
    pub t_iii: Option<u64>,
    pub m_plus: usize,
    pub m_minus: usize,
    pub alpha: f64,
    /// Dead neurons at `t_I` unchanged at the end of the run.
    pub dead_stayed: Option<bool>,
    pub max_sliding_residual: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    TPlat,
    TIi,
    TIii,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::TPlat => "t_plat",
            Target::TIi => "t_II",
            Target::TIii => "t_III",
        }
    }

    pub fn of(self, row: &SweepRow) -> Option<u64> {
        match self {
            Target::TPlat => row.t_plat,
            Target::TIi => row.t_ii,
            Target::TIii => row.t_iii,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepFit {
    pub target: Target,
    pub model: FitModel,
    /// `None` when fewer than three runs produced the target.
    pub fit: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub fits: Vec<SweepFit>,
}

impl SweepOutcome {
    pub fn fit(&self, target: Target, model: FitModel) -> Option<&FitResult> {
        self.fits
            .iter()
            .find(|f| f.target == target && f.model == model)
            .and_then(|f| f.fit.as_ref())
    }

    pub fn samples(&self, target: Target) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| target.of(r).map(|t| (r.value, t as f64)))
            .collect()
    }
}

fn fit_plan(axis: SweepAxis) -> Vec<(Target, FitModel)> {
    match axis {
        SweepAxis::Delta => vec![
            (Target::TPlat, FitModel::InvSqPlusInv),
            (Target::TIii, FitModel::InvSqPlusInv),
        ],
        SweepAxis::P => vec![
            (Target::TPlat, FitModel::Linear),
            (Target::TIii, FitModel::Power15),
            (Target::TIii, FitModel::FreePower),
            (Target::TIi, FitModel::FreePower),
        ],
        SweepAxis::Kappa1 => Vec::new(),
    }
}

fn sweep_row(spec: &SweepSpec, index: usize) -> SweepRow {
    let mut row = SweepRow {
        value: spec.values[index],
        seed: spec.seed(index),
        t_plat: None,
        t_ii: None,
        t_ii_pt: None,
        t_iii: None,
        m_plus: 0,
        m_minus: 0,
        alpha: f64::NAN,
        dead_stayed: None,
        max_sliding_residual: 0.0,
        error: None,
    };
    let result = spec.run_config(index).and_then(|c| execute(&c));
    match result {
        Ok(out) => match out.analysis {
            Some(a) => {
                row.dead_stayed = checks::dead_stay_dead(&out.trajectory, &a.classification).ok();
                row.max_sliding_residual = out.trajectory.max_sliding_residual;
                row.t_plat = a.timeline.t_plat.map(|h| h.step);
                row.t_ii = a.timeline.t_ii.map(|h| h.step);
                row.t_ii_pt = a.timeline.t_ii_pt.map(|h| h.step);
                row.t_iii = a.timeline.t_iii.map(|h| h.step);
                row.m_plus = a.classification.m_plus;
                row.m_minus = a.classification.m_minus;
                row.alpha = a.classification.alpha;
            }
            None => row.error = Some("horizon ends before t_I".into()),
        },
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every sweep point (in parallel when enabled) and fits the
/// hitting times. Rows keep axis order regardless of completion order.
pub fn run_sweep(spec: &SweepSpec, jobs: Option<usize>) -> Result<SweepOutcome> {
    spec.validate()?;
    let idx: Vec<usize> = (0..spec.values.len()).collect();
    let rows = map_jobs(&idx, jobs, |&i| sweep_row(spec, i));
    let mut outcome = SweepOutcome {
        axis: spec.axis,
        rows,
        fits: Vec::new(),
    };
    for (target, model) in fit_plan(spec.axis) {
        let samples = outcome.samples(target);
        let fit = if samples.len() >= 3 {
            scaling_fit(&samples, model).ok()
        } else {
            None
        };
        outcome.fits.push(SweepFit { target, model, fit });
    }
    Ok(outcome)
}

fn opt_u64(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `sweep.csv`: one row per axis value with measured times and the fitted
/// estimate next to each; `fits.csv`: one row per fit.
pub fn write_sweep(outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let estimate = |target: Target, x: f64| {
        outcome
            .fits
            .iter()
            .find(|f| f.target == target && f.fit.is_some())
            .and_then(|f| f.fit.as_ref())
            .map(|f| fmt_f64(f.predict(x)))
            .unwrap_or_default()
    };
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    w.write_record([
        outcome.axis.to_string().as_str(),
        "seed",
        "t_plat",
        "t_plat_fit",
        "t_II",
        "t_II_pt",
        "t_III",
        "t_III_fit",
        "m_plus",
        "m_minus",
        "alpha",
        "dead_stayed",
        "max_sliding_residual",
        "status",
    ])?;
    for r in &outcome.rows {
        w.write_record([
            fmt_f64(r.value),
            r.seed.to_string(),
            opt_u64(r.t_plat),
            estimate(Target::TPlat, r.value),
            opt_u64(r.t_ii),
            opt_u64(r.t_ii_pt),
            opt_u64(r.t_iii),
            estimate(Target::TIii, r.value),
            r.m_plus.to_string(),
            r.m_minus.to_string(),
            fmt_f64(r.alpha),
            r.dead_stayed.map(|b| b.to_string()).unwrap_or_default(),
            fmt_f64(r.max_sliding_residual),
            r.error.clone().unwrap_or_else(|| "ok".into()),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("fits.csv"))?;
    w.write_record(["target", "model", "a", "b", "c", "gamma", "r2"])?;
    for f in &outcome.fits {
        match &f.fit {
            Some(fit) => {
                let mut row = vec![f.target.name().to_string()];
                row.extend(fit.csv_row());
                w.write_record(&row)?;
            }
            None => {
                w.write_record([f.target.name(), &f.model.to_string(), "", "", "", "", "skipped"])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Classification with the given class sizes: the first `m_plus` positive
/// and the first `m_minus` negative neurons.
pub fn classification_from_counts(m: usize, m_plus: usize, m_minus: usize) -> Result<NeuronClassification> {
    if m % 2 != 0 {
        return Err(Error::OddWidth(m));
    }
    if m_plus > m / 2 || m_minus > m / 2 {
        return Err(Error::Config(format!("class sizes {m_plus}, {m_minus} exceed m/2 = {}", m / 2)));
    }
    Ok(NeuronClassification::from_sets(
        (0..m_plus).collect(),
        (m / 2..m / 2 + m_minus).collect(),
        m,
    ))
}

/// Bounds and margin certificate for `config`. Without explicit class
/// sizes the classification is measured by simulating up to `t_I`.
pub fn cmd_theory(config: &ExperimentConfig, counts: Option<(usize, usize)>) -> Result<String> {
    config.validate()?;
    let ds = build(config.dataset)?;
    let cls = match counts {
        Some((mp, mm)) => classification_from_counts(config.m, mp, mm)?,
        None => {
            let mut cfg = config.clone();
            cfg.analyze = false;
            cfg.stop_after_t_iii = None;
            cfg.noise_seed = None;
            cfg.flow.t_max = t_i(cfg.kappa1, cfg.kappa2) + 2.0 * cfg.flow.eta;
            let out = execute(&cfg)?;
            classify_at_t_i(&out.trajectory, &ds)?
        }
    };
    let bounds = time_scalings(config.kappa1, config.kappa2, ds.p(), ds.delta(), cls.alpha);
    let mut text = RecordWriter::new()
        .raw("m_plus", &cls.m_plus.to_string())
        .raw("m_minus", &cls.m_minus.to_string())
        .float("alpha", cls.alpha)
        .finish();
    text.push_str(&bounds.to_record());
    if cls.m_plus > 0 && cls.m_minus > 0 {
        text.push_str(&margin_certificate(&ds, &cls, config.kappa2)?.to_record());
    }
    Ok(text)
}

/// Rewrites the wide `trajectory.csv` (`angle_k, radius_k` columns) as
/// long-format rows `t, neuron, sign, angle, radius`. Rows without stored
/// weights are dropped. Returns the number of rows written.
pub fn export_polar<R: std::io::Read, W: std::io::Write>(trajectory: R, out: W) -> Result<usize> {
    let mut rd = csv::Reader::from_reader(trajectory);
    let header = rd.headers()?.clone();
    let m = header.iter().filter(|h| h.starts_with("radius_")).count();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    };
    let t_col = col("t")?;
    let cols: Vec<(usize, usize)> = (0..m)
        .map(|k| Ok((col(&format!("angle_{k}"))?, col(&format!("radius_{k}"))?)))
        .collect::<Result<_>>()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "neuron", "sign", "angle", "radius"])?;
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec?;
        for (k, &(ca, cr)) in cols.iter().enumerate() {
            let radius = &rec[cr];
            if radius.is_empty() {
                continue;
            }
            let sign = if k < m / 2 { "1" } else { "-1" };
            w.write_record([&rec[t_col], &k.to_string(), sign, &rec[ca], radius])?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name,
            pass,
            detail: detail.into(),
        }
    }

    fn from_result(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((pass, detail)) => Check::new(name, pass, detail),
            Err(e) => Check::new(name, false, e.to_string()),
        }
    }
}

/// One `name = pass|fail ; detail` line per check.
pub fn format_checks(checks: &[Check]) -> String {
    checks
        .iter()
        .map(|c| format!("{} = {} ; {}\n", c.name, if c.pass { "pass" } else { "fail" }, c.detail))
        .collect()
}

/// Runs the configuration to `4 T_III` (unless another factor is set) and
/// evaluates the cross-module checks on it.
pub fn cmd_verify(config: &ExperimentConfig) -> Result<Vec<Check>> {
    let mut cfg = config.clone();
    cfg.analyze = true;
    cfg.stop_after_t_iii.get_or_insert(4.0);
    let out = execute(&cfg)?;
    Ok(verify_run(&out))
}

pub fn verify_run(out: &RunOutput) -> Vec<Check> {
    let (ds, traj) = (&out.dataset, &out.trajectory);
    let Some(a) = &out.analysis else {
        return vec![Check::new("timeline", false, "horizon ends before t_I")];
    };
    let cls = &a.classification;
    let tl = &a.timeline;
    let kappa2 = traj.final_state.kappa2;
    let mut v = vec![
        Check::new(
            "timeline",
            tl.is_complete() && tl.is_ordered(),
            format!("complete={} ordered={}", tl.is_complete(), tl.is_ordered()),
        ),
        Check::new(
            "accuracy_plateaus",
            tl.t_plat.is_some() && tl.t_iii.is_some() && a.profile.violations.is_empty(),
            format!("violations={}", a.profile.violations.len()),
        ),
        Check::new(
            "pattern_table",
            a.table.as_ref().is_some_and(|t| checks::pattern_table_matches(t, traj.eta)),
            a.table.as_ref().map_or("incomplete timeline".to_string(), |t| {
                format!(
                    "k_plus_flips={} k_minus_spread={}",
                    t.k_plus_flips_at_t_ii,
                    fmt_f64(t.k_minus_spread_at_t_iii)
                )
            }),
        ),
        Check::from_result(
            "dead_stays_dead",
            checks::dead_stay_dead(traj, cls).map(|ok| (ok, format!("dead={}", cls.dead.len()))),
        ),
        Check::new(
            "sliding_on_surface",
            traj.max_sliding_residual <= 1e-12,
            format!("max_residual={}", fmt_f64(traj.max_sliding_residual)),
        ),
        Check::from_result(
            "reduced_uv_oracle",
            checks::uv_oracle_error(traj, ds, cls, tl).map(|e| (e <= 1e-2, format!("max_rel_err={}", fmt_f64(e)))),
        ),
        Check::from_result(
            "reduced_ij_oracle",
            checks::ij_oracle_error(traj, ds, cls, tl).map(|e| (e <= 1e-2, format!("max_rel_err={}", fmt_f64(e)))),
        ),
        Check::from_result(
            "directional_convergence",
            checks::directional_alignment(&traj.final_state, ds, cls).map(|(p, m)| {
                (
                    tl.t_iii.is_some() && p >= 0.99 && m >= 0.99,
                    format!("min_cos_plus={} min_cos_minus={}", fmt_f64(p), fmt_f64(m)),
                )
            }),
        ),
    ];
    let last = traj.snapshots.last().expect("initial snapshot");
    v.push(Check::from_result(
        "ratio_limit",
        checks::ratio_gap(last.f_plus, last.f_minus, ds, cls, kappa2)
            .map(|g| (tl.t_iii.is_some() && g <= 1e-2, format!("gap={}", fmt_f64(g)))),
    ));
    v.push(Check::from_result(
        "norm_derivative",
        margin_certificate(ds, cls, kappa2).map(|cert| {
            let chk = norm_derivative_check(&cert, ds, cls);
            (
                chk.passes(1e-6) && cert.kkt_stationarity_residual <= 1e-9,
                format!(
                    "analytic={} fd={} kkt={}",
                    fmt_f64(chk.analytic),
                    fmt_f64(chk.finite_difference),
                    fmt_f64(cert.kkt_stationarity_residual)
                ),
            )
        }),
    ));
    v
}
