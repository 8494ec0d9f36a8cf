//! The `simulate`, `compare` and `genmesh` commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use ktran::decomp::{build_plan, run_superposed, SubtaskReport, TransitionPlan, DEFAULT_MAX_GROUPS};
use ktran::krylov::ErrorEstimator;
use ktran::netlist::{load, CircuitSystem};
use ktran::numkit::substitution_pairs;
use ktran::stepper::{
    be_reference, find_time, merge_times, merge_tolerance, BasisDiagnostics, InputPath, Method, SampleDiagnostics,
    SolverConfig, WaveformResult,
};

use crate::csvio::write_csv;
use crate::mesh::{generate_mesh, measure_stiffness, MeshSpec, MEASURE_LIMIT};
use crate::CliError;

/// Everything one simulation needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub netlist: PathBuf,
    pub solver: Method,
    pub h: Option<f64>,
    pub e_tol: f64,
    pub gamma: Option<f64>,
    pub m_max: usize,
    pub path: InputPath,
    pub estimator: ErrorEstimator,
    /// Overrides of the netlist's `.tran` span.
    pub t_start: Option<f64>,
    pub t_stop: Option<f64>,
    pub resolution: Option<f64>,
    pub max_groups: usize,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub diag: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(netlist: impl Into<PathBuf>, solver: Method) -> Self {
        Self {
            netlist: netlist.into(),
            solver,
            h: None,
            e_tol: 1e-6,
            gamma: None,
            m_max: 30,
            path: InputPath::Fp,
            estimator: ErrorEstimator::Empirical,
            t_start: None,
            t_stop: None,
            resolution: None,
            max_groups: DEFAULT_MAX_GROUPS,
            workers: 1,
            out: None,
            diag: None,
        }
    }

    fn config(&self, t_start: f64, t_stop: f64) -> SolverConfig {
        let mut c = SolverConfig::new(self.solver, t_start, t_stop);
        c.h = self.h;
        c.e_tol = self.e_tol;
        c.gamma = self.gamma;
        c.m_max = self.m_max;
        c.dense_cap = c.dense_cap.max(self.m_max + 1);
        c.path = self.path;
        c.estimator = self.estimator;
        c.resolution = self.resolution;
        c
    }

    /// Fixed-step methods gain nothing from superposition and run whole.
    fn plan(&self, sys: &CircuitSystem, t_start: f64, t_stop: f64) -> TransitionPlan {
        let cap = if self.solver.is_exponential() { self.max_groups.max(1) } else { 1 };
        build_plan(&sys.sources, t_start, t_stop, cap)
    }
}

/// Steps over the span for fixed-step solvers in `compare` when `h` is unset.
pub const COMPARE_STEPS: f64 = 1000.0;

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Parsed circuit and its simulated span.
pub fn load_circuit(
    path: &Path,
    t_start: Option<f64>,
    t_stop: Option<f64>,
) -> Result<(CircuitSystem, f64, f64), CliError> {
    let text = read_text(path)?;
    let (nl, sys) = load(&text).map_err(CliError::from_netlist)?;
    let tran = nl.tran;
    let t0 = t_start.or(tran.map(|t| t.t_start)).unwrap_or(0.0);
    let t1 = t_stop
        .or(tran.map(|t| t.t_stop))
        .ok_or_else(|| CliError::Parse("no `.tran` directive and no --tstop given".into()))?;
    if !(t1 > t0) {
        return Err(CliError::Parse(format!("empty span [{t0:e}, {t1:e}]")));
    }
    Ok((sys, t0, t1))
}

/// Diagnostics written next to the waveform.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunDiagnostics {
    pub solver: Method,
    pub t_start: f64,
    pub t_stop: f64,
    pub unknowns: usize,
    pub gamma: Option<f64>,
    pub e_tol: f64,
    pub samples: usize,
    pub m_avg: f64,
    pub m_peak: usize,
    /// Sum of the substitution pairs spent by every subtask.
    pub substitution_pairs: u64,
    /// The process-wide substitution counter over the run.
    pub counted_substitution_pairs: u64,
    pub factorizations: u64,
    pub wall_time: f64,
    /// Longest subtask, i.e. the run time with one worker per subtask.
    pub critical_path: f64,
    pub groups: Vec<SubtaskReport>,
    pub steps: Vec<SampleDiagnostics>,
    pub bases: Vec<BasisDiagnostics>,
    pub warnings: Vec<String>,
}

/// Outcome of `simulate`.
#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub result: WaveformResult,
    pub names: Vec<String>,
    pub csv: String,
    pub diagnostics: RunDiagnostics,
}

/// Run one solver (exponential methods decomposed over source groups) and
/// write the artifacts.
pub fn simulate(manifest: &RunManifest) -> Result<SimulateOutcome, CliError> {
    let (sys, t0, t1) = load_circuit(&manifest.netlist, manifest.t_start, manifest.t_stop)?;
    let config = manifest.config(t0, t1);
    config.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    let plan = manifest.plan(&sys, t0, t1);
    let before = substitution_pairs();
    let run = run_superposed(&sys, &plan, &config, manifest.workers)?;
    let counted = substitution_pairs() - before;
    let result = run.merged;
    let diagnostics = RunDiagnostics {
        solver: manifest.solver,
        t_start: t0,
        t_stop: t1,
        unknowns: sys.dim(),
        gamma: result.gamma,
        e_tol: manifest.e_tol,
        samples: result.len(),
        m_avg: result.m_avg(),
        m_peak: result.m_peak(),
        substitution_pairs: result.substitution_pairs,
        counted_substitution_pairs: counted,
        factorizations: result.factorizations,
        wall_time: result.wall_time,
        critical_path: run.critical_path,
        groups: run.subtasks,
        steps: result.samples.clone(),
        bases: result.bases.clone(),
        warnings: sys.warnings.iter().map(|w| w.to_string()).collect(),
    };
    let csv = write_csv(&result, &sys.unknown_names);
    if let Some(p) = &manifest.out {
        write_text(p, &csv)?;
    }
    if let Some(p) = &manifest.diag {
        let json = serde_json::to_string_pretty(&diagnostics).map_err(|e| CliError::Io(e.to_string()))?;
        write_text(p, &json)?;
    }
    Ok(SimulateOutcome { result, names: sys.unknown_names.clone(), csv, diagnostics })
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub solver: Method,
    /// Maximum error relative to the reference's peak magnitude, in percent.
    pub max_err_pct: f64,
    pub avg_err_pct: f64,
    pub m_avg: f64,
    pub m_peak: usize,
    pub substitution_pairs: u64,
    pub factorizations: u64,
    pub wall_time: f64,
    /// Wall-time speedup over the first fixed-step solver in the list (or the first solver).
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub unknowns: usize,
    pub stiffness: Option<f64>,
    pub reference_step: f64,
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>12} {:>12} {:>7} {:>5} {:>10} {:>6} {:>11} {:>8}",
            "solver", "Err(%)", "AvgErr(%)", "m_a", "m_p", "pairs", "LU", "wall(s)", "Spdp"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<8} {:>12.4e} {:>12.4e} {:>7.2} {:>5} {:>10} {:>6} {:>11.4e} {:>8.2}",
                r.solver.name(),
                r.max_err_pct,
                r.avg_err_pct,
                r.m_avg,
                r.m_peak,
                r.substitution_pairs,
                r.factorizations,
                r.wall_time,
                r.speedup
            );
        }
        s
    }
}

/// Run several solvers and score them against a fine-step backward-Euler
/// reference (with Richardson extrapolation) at the transition spots.
pub fn compare(
    manifest: &RunManifest,
    solvers: &[Method],
    reference_step: Option<f64>,
) -> Result<CompareReport, CliError> {
    if solvers.len() < 2 {
        return Err(CliError::Invalid("compare needs at least two solvers".into()));
    }
    let (sys, t0, t1) = load_circuit(&manifest.netlist, manifest.t_start, manifest.t_stop)?;
    let plan = build_plan(&sys.sources, t0, t1, manifest.max_groups.max(1));
    let mut runs = Vec::new();
    for &solver in solvers {
        let h = manifest.h.or((!solver.is_exponential()).then(|| (t1 - t0) / COMPARE_STEPS));
        let m = RunManifest { solver, h, ..manifest.clone() };
        let config = m.config(t0, t1);
        config.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
        runs.push(run_superposed(&sys, &m.plan(&sys, t0, t1), &config, manifest.workers)?.merged);
    }
    let all_times = merge_times(runs.iter().map(|r| r.times.as_slice()), t0, t1);
    let h_ref = reference_step.unwrap_or((t1 - t0) / 20_000.0);
    let reference = be_reference(&sys, &all_times, h_ref, true)?;
    let tol = merge_tolerance(t0, t1);
    let mut checkpoints = plan.gts.clone();
    checkpoints.extend([t0, t1]);
    let checkpoints = merge_times([checkpoints.as_slice()], t0, t1);
    let scale = reference.states.iter().map(|x| ktran::numkit::vecops::norm_inf(x)).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let base = solvers.iter().position(|m| !m.is_exponential()).unwrap_or(0);
    let base_wall = runs[base].wall_time;
    let rows = runs
        .iter()
        .zip(solvers)
        .map(|(r, &solver)| {
            let mut errs: Vec<f64> = r
                .times
                .iter()
                .zip(&r.states)
                .filter(|(t, _)| find_time(&checkpoints, **t, tol).is_some())
                .map(|(t, x)| {
                    let xr = reference.state_at(*t).expect("reference covers every output time");
                    ktran::numkit::vecops::max_abs_diff(x, xr) / scale
                })
                .collect();
            if errs.is_empty() {
                errs = r
                    .times
                    .iter()
                    .zip(&r.states)
                    .map(|(t, x)| ktran::numkit::vecops::max_abs_diff(x, reference.state_at(*t).unwrap()) / scale)
                    .collect();
            }
            let max = errs.iter().copied().fold(0.0, f64::max);
            let avg = errs.iter().sum::<f64>() / errs.len() as f64;
            CompareRow {
                solver,
                max_err_pct: 100.0 * max,
                avg_err_pct: 100.0 * avg,
                m_avg: r.m_avg(),
                m_peak: r.m_peak(),
                substitution_pairs: r.substitution_pairs,
                factorizations: r.factorizations,
                wall_time: r.wall_time,
                speedup: if r.wall_time > 0.0 { base_wall / r.wall_time } else { f64::INFINITY },
            }
        })
        .collect();
    let stiffness = if sys.dim() <= MEASURE_LIMIT { measure_stiffness(&sys).ok() } else { None };
    let report = CompareReport { unknowns: sys.dim(), stiffness, reference_step: h_ref, rows };
    if let Some(p) = &manifest.diag {
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
        write_text(p, &json)?;
    }
    Ok(report)
}

/// Outcome of `genmesh`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenmeshOutcome {
    pub netlist: String,
    /// Measured stiffness (only for meshes of up to [`MEASURE_LIMIT`] unknowns).
    pub measured: Option<f64>,
}

pub fn genmesh(spec: &MeshSpec, out: Option<&Path>) -> Result<GenmeshOutcome, CliError> {
    let netlist = generate_mesh(spec)?;
    let measured = if spec.n <= MEASURE_LIMIT {
        let (_, sys) = load(&netlist).map_err(CliError::from_netlist)?;
        Some(measure_stiffness(&sys)?)
    } else {
        None
    };
    if let Some(p) = out {
        write_text(p, &netlist)?;
    }
    Ok(GenmeshOutcome { netlist, measured })
}
