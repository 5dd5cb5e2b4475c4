//! The min-over-rotation-cases prediction rule and the four evaluation
//! experiments.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tensornet::{write_checkpoint, Architecture, Checkpoint, FeatureMode, Network};

use crate::control::ControllerKind;
use crate::features::window_features;
use crate::quadsim::{simulate, FaultSchedule, FaultVector, Output, QuadParams, State, Trajectory, INPUT_DIM};
use crate::rng::substream;
use crate::symmetry::{canonicalize_window, case_for_motor, cases};
use crate::train::{generate_residuals, Scenario};
use crate::window::{slice_windows, TrajectoryWindow};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// A fault is declared when the smallest predicted effectiveness is below this.
    pub theta_tol: f64,
    /// Test trajectories per fault class; the initial states are shared by all classes.
    pub n_test_traj: usize,
    pub onset_step: usize,
    /// Evaluate every `overlap_stride`-th window end point.
    pub overlap_stride: usize,
    /// Allowed error of the level estimate.
    pub level_tolerance: f64,
    /// Overlap from which summaries pool windows.
    pub summary_min_overlap: usize,
    pub trained_motor: usize,
    /// Levels swept by the fault-level experiment.
    pub fault_levels: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            theta_tol: 0.2,
            n_test_traj: 2000,
            onset_step: 100,
            overlap_stride: 1,
            level_tolerance: 0.05,
            summary_min_overlap: 50,
            trained_motor: 2,
            fault_levels: (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_tol > 0.0 && self.theta_tol < 1.0) {
            return Err(Error::Config(format!("theta_tol {} outside (0, 1)", self.theta_tol)));
        }
        if self.n_test_traj == 0 || self.overlap_stride == 0 {
            return Err(Error::Config("n_test_traj and overlap_stride must be positive".into()));
        }
        if !(1..=INPUT_DIM).contains(&self.trained_motor) {
            return Err(Error::Config(format!("trained motor {} outside 1..=4", self.trained_motor)));
        }
        if self.fault_levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::Config(format!("fault levels outside [0, 1]: {:?}", self.fault_levels)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub fault_detected: bool,
    /// Isolated physical motor; present iff a fault is detected.
    pub motor: Option<usize>,
    pub min_score: f64,
    /// Rotation case achieving the minimum.
    pub case_index: usize,
    /// Physical motor at the minimum, whether or not it crosses the threshold.
    pub argmin_motor: usize,
}

/// Evaluates the network on the window canonicalized under every rotation case
/// and takes the global minimum over cases and roles. Ties go to the lowest
/// case index, then the lowest physical motor.
pub fn predict(net: &Network, window: &TrajectoryWindow, theta_tol: f64, params: &QuadParams) -> Result<Verdict> {
    let spec = net.spec();
    if window.len() != spec.t {
        return Err(Error::Shape(format!("window of {} samples for a {}-sample network", window.len(), spec.t)));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for case in cases() {
        let canon = canonicalize_window(window, case, params)?;
        let scores = net.forward(&window_features(&canon, spec.mode)?)?;
        for motor in 1..=INPUT_DIM {
            let s = scores[case.role_of(motor) - 1];
            if best.is_none_or(|(b, _, _)| s < b) {
                best = Some((s, case.n, motor));
            }
        }
    }
    let (min_score, case_index, argmin_motor) = best.expect("four cases");
    let fault_detected = min_score < theta_tol;
    Ok(Verdict { fault_detected, motor: fault_detected.then_some(argmin_motor), min_score, case_index, argmin_motor })
}

/// Whether the verdict detects and isolates the labelled fault (or reports
/// none for a healthy label).
pub fn detect_isolate_correct(v: &Verdict, label: &FaultVector) -> bool {
    match label.faulty_motor() {
        None => !v.fault_detected,
        Some(m) => v.motor == Some(m),
    }
}

/// Whether the minimum identifies the faulty motor and its level within
/// `tol`; a healthy label requires every predicted level within `tol` of one.
pub fn level_estimate_correct(v: &Verdict, label: &FaultVector, tol: f64) -> bool {
    match label.faulty_motor() {
        None => v.min_score >= 1.0 - tol,
        Some(m) => v.argmin_motor == m && (v.min_score - label.0[m - 1]).abs() <= tol,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    RotationCases,
    FaultLevels,
    ControllerShift,
    ParamPerturbation,
}

impl Experiment {
    pub const ALL: [Experiment; 4] =
        [Experiment::RotationCases, Experiment::FaultLevels, Experiment::ControllerShift, Experiment::ParamPerturbation];

    pub fn id(&self) -> &'static str {
        match self {
            Experiment::RotationCases => "rotation-cases",
            Experiment::FaultLevels => "fault-levels",
            Experiment::ControllerShift => "controller-shift",
            Experiment::ParamPerturbation => "param-perturbation",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL.into_iter().find(|e| e.id() == s).ok_or_else(|| {
            let known: Vec<_> = Experiment::ALL.iter().map(Experiment::id).collect();
            Error::Config(format!("unknown experiment `{s}` (expected one of {})", known.join(", ")))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    DetectIsolate,
    LevelEstimate,
}

/// One point of an accuracy curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: Experiment,
    pub network: String,
    pub checkpoint: String,
    pub mode: FeatureMode,
    pub architecture: String,
    pub controller: ControllerKind,
    pub param_set: String,
    /// Faulty physical motor, 0 for the no-fault class.
    pub motor: usize,
    pub level: f64,
    /// Rotation case mapping the faulty motor to the trained role, 0 for no fault.
    pub case_n: usize,
    pub overlap: usize,
    pub metric: Metric,
    pub correct: usize,
    pub windows: usize,
    pub accuracy: f64,
}

/// Key of a curve: every column except the overlap and the counts.
pub type CurveKey = (Experiment, String, String, ControllerKind, String, usize, String, Metric);

impl ReportRow {
    pub fn curve_key(&self) -> CurveKey {
        (
            self.experiment,
            self.network.clone(),
            self.checkpoint.clone(),
            self.controller,
            self.param_set.clone(),
            self.motor,
            format!("{}", self.level),
            self.metric,
        )
    }
}

/// Pooled accuracy of one curve over windows with large enough overlap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub experiment: Experiment,
    pub network: String,
    pub checkpoint: String,
    pub controller: ControllerKind,
    pub param_set: String,
    pub motor: usize,
    pub level: f64,
    pub metric: Metric,
    pub min_overlap: usize,
    pub correct: usize,
    pub windows: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn experiments(&self) -> Vec<Experiment> {
        let mut e: Vec<_> = self.rows.iter().map(|r| r.experiment).collect();
        e.sort();
        e.dedup();
        e
    }

    /// Pooled accuracy over the rows selected by `keep` with overlap at least `min_overlap`.
    pub fn pooled<F: Fn(&ReportRow) -> bool>(&self, min_overlap: usize, keep: F) -> Option<f64> {
        let (c, w) = self
            .rows
            .iter()
            .filter(|r| r.overlap >= min_overlap && keep(r))
            .fold((0, 0), |(c, w), r| (c + r.correct, w + r.windows));
        (w > 0).then(|| c as f64 / w as f64)
    }

    pub fn summarize(&self, min_overlap: usize) -> Vec<CurveSummary> {
        let mut groups: BTreeMap<CurveKey, CurveSummary> = BTreeMap::new();
        let mut order = Vec::new();
        for r in self.rows.iter().filter(|r| r.overlap >= min_overlap) {
            let key = r.curve_key();
            let entry = groups.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                CurveSummary {
                    experiment: r.experiment,
                    network: r.network.clone(),
                    checkpoint: r.checkpoint.clone(),
                    controller: r.controller,
                    param_set: r.param_set.clone(),
                    motor: r.motor,
                    level: r.level,
                    metric: r.metric,
                    min_overlap,
                    correct: 0,
                    windows: 0,
                    accuracy: 0.0,
                }
            });
            entry.correct += r.correct;
            entry.windows += r.windows;
        }
        order
            .into_iter()
            .map(|k| {
                let mut s = groups.remove(&k).expect("grouped key");
                s.accuracy = if s.windows > 0 { s.correct as f64 / s.windows as f64 } else { 0.0 };
                s
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r).map_err(csv_error)?;
        }
        if self.rows.is_empty() {
            wr.write_record(CSV_COLUMNS).map_err(csv_error)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
        if header != CSV_COLUMNS {
            return Err(Error::Format(format!("unexpected report columns {header:?}")));
        }
        let rows = rd.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>().map_err(csv_error)?;
        Ok(ExperimentReport { rows })
    }

    /// Row and curve counts plus every curve pooled from `min_overlap` on.
    pub fn summary_json(&self, min_overlap: usize) -> Result<String> {
        let summary = serde_json::json!({
            "experiments": self.experiments(),
            "rows": self.rows.len(),
            "curves": self.summarize(0).len(),
            "min_overlap": min_overlap,
            "summary": self.summarize(min_overlap),
        });
        Ok(serde_json::to_string_pretty(&summary)? + "\n")
    }

    /// Concatenates reports of one experiment; mixing experiments is an error.
    pub fn merge(reports: &[ExperimentReport]) -> Result<Self> {
        let mut ids: Vec<Experiment> = reports.iter().flat_map(|r| r.experiments()).collect();
        ids.sort();
        ids.dedup();
        if ids.len() > 1 {
            let names: Vec<_> = ids.iter().map(Experiment::id).collect();
            return Err(Error::Config(format!("cannot merge reports of different experiments: {}", names.join(", "))));
        }
        Ok(ExperimentReport { rows: reports.iter().flat_map(|r| r.rows.iter().cloned()).collect() })
    }
}

pub const CSV_COLUMNS: [&str; 15] = [
    "experiment",
    "network",
    "checkpoint",
    "mode",
    "architecture",
    "controller",
    "param_set",
    "motor",
    "level",
    "case_n",
    "overlap",
    "metric",
    "correct",
    "windows",
    "accuracy",
];

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("report csv: {e}"))
}

/// A network under evaluation with the name and digest its rows carry.
#[derive(Clone, Copy, Debug)]
pub struct NamedNet<'a> {
    pub name: &'a str,
    pub digest: &'a str,
    pub net: &'a Network,
}

/// SHA-256 of the network's checkpoint encoding (seed 0, no metadata).
pub fn network_digest(net: &Network) -> Result<String> {
    let mut bytes = Vec::new();
    let ckpt = Checkpoint { network: net.clone(), seed: 0, metadata: serde_json::Value::Null };
    write_checkpoint(&ckpt, &mut bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn architecture_name(net: &Network) -> &'static str {
    match net.architecture() {
        Architecture::Mlp(_) => "mlp",
        Architecture::Lstm(_) => "lstm",
    }
}

/// The test-time fault class: `None` is the no-fault class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultClass {
    pub motor: Option<usize>,
    pub level: f64,
}

impl FaultClass {
    pub fn healthy() -> Self {
        FaultClass { motor: None, level: 1.0 }
    }

    pub fn complete(motor: usize) -> Self {
        FaultClass { motor: Some(motor), level: 0.0 }
    }

    pub fn fault(&self) -> Result<FaultVector> {
        match self.motor {
            None => Ok(FaultVector::healthy()),
            Some(m) => FaultVector::single(m, self.level),
        }
    }
}

/// Rollouts of one fault class from the shared test initial states.
#[derive(Clone, Debug)]
pub struct TestSet {
    pub class: FaultClass,
    pub controller: ControllerKind,
    pub rollouts: Vec<(Trajectory, Option<Vec<Output>>)>,
}

/// Initial states shared by every class, controller and parameter set.
pub fn test_initial_states(cfg: &EvalConfig, scenario: &Scenario, seed: u64) -> Vec<State> {
    let mut rng = substream(seed, "test-ic", 0);
    (0..cfg.n_test_traj).map(|_| scenario.initial.sample(&mut rng)).collect()
}

pub fn generate_test_set(
    cfg: &EvalConfig,
    scenario: &Scenario,
    class: FaultClass,
    initial: &[State],
    with_residuals: bool,
) -> Result<TestSet> {
    let controller = scenario.design()?;
    let schedule = FaultSchedule { fault: class.fault()?, onset_step: cfg.onset_step };
    let mut rollouts = Vec::with_capacity(initial.len());
    for x0 in initial {
        let traj = simulate(x0, &controller, &schedule, &scenario.sim, &scenario.params)?;
        let resid = if with_residuals { Some(generate_residuals(&traj, &scenario.reference, &scenario.sim)?) } else { None };
        rollouts.push((traj, resid));
    }
    Ok(TestSet { class, controller: scenario.controller, rollouts })
}

/// Per-overlap counts `(windows, detect_isolate_correct, level_estimate_correct)`.
fn score(nn: &NamedNet, set: &TestSet, cfg: &EvalConfig, scenario: &Scenario) -> Result<BTreeMap<usize, [usize; 3]>> {
    let spec = nn.net.spec();
    let label = set.class.fault()?;
    let mut counts: BTreeMap<usize, [usize; 3]> = BTreeMap::new();
    for (traj, resid) in &set.rollouts {
        let resid = if spec.mode.uses_residuals() {
            Some(resid.as_deref().ok_or_else(|| Error::Shape("test set lacks residuals".into()))?)
        } else {
            None
        };
        let last = scenario.sim.horizon.min(traj.len().saturating_sub(1));
        for win in slice_windows(traj, resid, label, cfg.onset_step, spec.t, last)? {
            if win.onset_offset % cfg.overlap_stride != 0 {
                continue;
            }
            let v = predict(nn.net, &win, cfg.theta_tol, &scenario.reference)?;
            let c = counts.entry(win.onset_offset).or_default();
            c[0] += 1;
            c[1] += detect_isolate_correct(&v, &label) as usize;
            c[2] += level_estimate_correct(&v, &label, cfg.level_tolerance) as usize;
        }
    }
    Ok(counts)
}

fn curve_rows(
    experiment: Experiment,
    nn: &NamedNet,
    set: &TestSet,
    param_set: &str,
    cfg: &EvalConfig,
    scenario: &Scenario,
) -> Result<Vec<ReportRow>> {
    let case_n = match set.class.motor {
        Some(m) => case_for_motor(m)?.n,
        None => 0,
    };
    let mut rows = Vec::new();
    for (overlap, [windows, di, le]) in score(nn, set, cfg, scenario)? {
        for (metric, correct) in [(Metric::DetectIsolate, di), (Metric::LevelEstimate, le)] {
            rows.push(ReportRow {
                experiment,
                network: nn.name.to_owned(),
                checkpoint: nn.digest.to_owned(),
                mode: nn.net.spec().mode,
                architecture: architecture_name(nn.net).to_owned(),
                controller: set.controller,
                param_set: param_set.to_owned(),
                motor: set.class.motor.unwrap_or(0),
                level: set.class.level,
                case_n,
                overlap,
                metric,
                correct,
                windows,
                accuracy: correct as f64 / windows as f64,
            });
        }
    }
    Ok(rows)
}

fn run_classes(
    experiment: Experiment,
    nets: &[NamedNet],
    classes: &[FaultClass],
    param_set: &str,
    cfg: &EvalConfig,
    scenario: &Scenario,
    initial: &[State],
) -> Result<Vec<ReportRow>> {
    let residuals = nets.iter().any(|n| n.net.spec().mode.uses_residuals());
    let mut rows = Vec::new();
    for class in classes {
        let set = generate_test_set(cfg, scenario, *class, initial, residuals)?;
        for nn in nets {
            rows.extend(curve_rows(experiment, nn, &set, param_set, cfg, scenario)?);
        }
    }
    Ok(rows)
}

fn rotation_classes() -> Vec<FaultClass> {
    let mut c: Vec<_> = (1..=INPUT_DIM).map(FaultClass::complete).collect();
    c.push(FaultClass::healthy());
    c
}

/// Complete faults in each physical motor plus the no-fault class.
pub fn experiment_rotation_cases(nets: &[NamedNet], cfg: &EvalConfig, scenario: &Scenario, seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let initial = test_initial_states(cfg, scenario, seed);
    let rows = run_classes(Experiment::RotationCases, nets, &rotation_classes(), "training", cfg, scenario, &initial)?;
    Ok(ExperimentReport { rows })
}

/// Every configured level of the trained motor, networks side by side.
pub fn experiment_fault_levels(nets: &[NamedNet], cfg: &EvalConfig, scenario: &Scenario, seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let initial = test_initial_states(cfg, scenario, seed);
    let classes: Vec<FaultClass> = cfg
        .fault_levels
        .iter()
        .map(|&level| if level == 1.0 { FaultClass::healthy() } else { FaultClass { motor: Some(cfg.trained_motor), level } })
        .collect();
    let rows = run_classes(Experiment::FaultLevels, nets, &classes, "training", cfg, scenario, &initial)?;
    Ok(ExperimentReport { rows })
}

/// The rotation-case protocol on LQR and on CBF-QP closed-loop data.
pub fn experiment_controller_shift(nets: &[NamedNet], cfg: &EvalConfig, scenario: &Scenario, seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let initial = test_initial_states(cfg, scenario, seed);
    let mut rows = Vec::new();
    for controller in [ControllerKind::Lqr, ControllerKind::CbfQp] {
        let sc = Scenario { controller, ..scenario.clone() };
        rows.extend(run_classes(Experiment::ControllerShift, nets, &rotation_classes(), "training", cfg, &sc, &initial)?);
    }
    Ok(ExperimentReport { rows })
}

/// The rotation-case protocol on vehicles with the training parameters and
/// with both parameter columns of the reference table. The controller is
/// redesigned for each vehicle; residuals keep the scenario's reference model.
pub fn experiment_param_perturbation(
    nets: &[NamedNet],
    cfg: &EvalConfig,
    scenario: &Scenario,
    seed: u64,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let initial = test_initial_states(cfg, scenario, seed);
    let mut rows = Vec::new();
    for (name, params) in [
        ("training", scenario.params),
        ("table-nominal", QuadParams::table_nominal()),
        ("table-perturbed", QuadParams::table_perturbed()),
    ] {
        let sc = Scenario { params, ..scenario.clone() };
        rows.extend(run_classes(Experiment::ParamPerturbation, nets, &rotation_classes(), name, cfg, &sc, &initial)?);
    }
    Ok(ExperimentReport { rows })
}

pub fn run_experiment(
    experiment: Experiment,
    nets: &[NamedNet],
    cfg: &EvalConfig,
    scenario: &Scenario,
    seed: u64,
) -> Result<ExperimentReport> {
    match experiment {
        Experiment::RotationCases => experiment_rotation_cases(nets, cfg, scenario, seed),
        Experiment::FaultLevels => experiment_fault_levels(nets, cfg, scenario, seed),
        Experiment::ControllerShift => experiment_controller_shift(nets, cfg, scenario, seed),
        Experiment::ParamPerturbation => experiment_param_perturbation(nets, cfg, scenario, seed),
    }
}
