//! Superposition-based decomposition of a transient run.
//!
//! Every source waveform is cut into additive components — one per "bump"
//! of a PWL list, or the whole train of a periodic pulse. Components with the
//! same bump timing share their slope-change times, so they are grouped and
//! simulated together; each group only has to rebuild Krylov bases at its own
//! transition spots, and the other groups' spots become cheap snapshots.
//! Because the circuit is linear, the sum of the group responses is the
//! response to the full input.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::netlist::{CircuitSystem, Waveform};
use crate::numkit::substitution_pairs;
use crate::stepper::{merge_times, merge_tolerance, solve, SolverConfig, StepperError, WaveformResult};

/// Default cap on the number of groups.
pub const DEFAULT_MAX_GROUPS: usize = 100;

/// Bump timing on a 1 fs grid: delay, rise, width (flat top), fall and period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BumpFeature {
    pub delay_fs: i64,
    pub rise_fs: i64,
    pub width_fs: i64,
    pub fall_fs: i64,
    pub period_fs: i64,
}

fn femto(t: f64) -> i64 {
    (t * 1e15).round() as i64
}

impl BumpFeature {
    pub fn from_seconds(delay: f64, rise: f64, width: f64, fall: f64, period: f64) -> Self {
        Self {
            delay_fs: femto(delay.max(0.0)),
            rise_fs: femto(rise.max(0.0)),
            width_fs: femto(width.max(0.0)),
            fall_fs: femto(fall.max(0.0)),
            period_fs: femto(period.max(0.0)),
        }
    }

    /// `(delay, rise, width, fall, period)` in seconds.
    pub fn to_seconds(&self) -> [f64; 5] {
        [self.delay_fs, self.rise_fs, self.width_fs, self.fall_fs, self.period_fs].map(|v| v as f64 * 1e-15)
    }
}

/// One additive piece of a source waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputComponent {
    /// Index of the source (input column) this piece belongs to.
    pub source: usize,
    pub waveform: Waveform,
    /// `None` for a constant piece.
    pub feature: Option<BumpFeature>,
    pub lts: Vec<f64>,
}

/// Slope-change times of a waveform inside `[t_start, t_stop]`, periodic
/// pulse corners included.
pub fn extract_lts(waveform: &Waveform, t_start: f64, t_stop: f64) -> Vec<f64> {
    let tol = merge_tolerance(t_start, t_stop);
    crate::stepper::normalize_times(waveform.transition_spots(t_start, t_stop), t_start, t_stop, tol)
}

fn pwl_feature(pts: &[(f64, f64)]) -> BumpFeature {
    let n = pts.len();
    let t = |i: usize| pts[i].0;
    match n {
        0 | 1 => BumpFeature::from_seconds(pts.first().map_or(0.0, |p| p.0), 0.0, 0.0, 0.0, 0.0),
        2 => BumpFeature::from_seconds(t(0), t(1) - t(0), 0.0, 0.0, 0.0),
        _ => BumpFeature::from_seconds(t(0), t(1) - t(0), t(n - 2) - t(1), t(n - 1) - t(n - 2), 0.0),
    }
}

/// Split a PWL list into bumps: maximal excursions away from the initial
/// level. The initial level rides on the first piece; an excursion that never
/// returns becomes a final piece that holds its end level.
fn split_pwl(pts: &[(f64, f64)]) -> Vec<Vec<(f64, f64)>> {
    let base = pts[0].1;
    let mut pieces: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut i = 0;
    while i + 1 < pts.len() {
        if pts[i + 1].1 == base {
            i += 1;
            continue;
        }
        // Excursion starts at point i (on the base level).
        let start = i;
        let mut end = i + 1;
        while end < pts.len() && pts[end].1 != base {
            end += 1;
        }
        let stop = end.min(pts.len() - 1);
        pieces.push(pts[start..=stop].iter().map(|&(t, v)| (t, v - base)).collect());
        i = stop;
    }
    if pieces.is_empty() {
        return Vec::new();
    }
    if base != 0.0 {
        for p in pieces[0].iter_mut() {
            p.1 += base;
        }
    }
    pieces
}

/// Cut every source into additive components.
pub fn split_components(sources: &[Waveform], t_start: f64, t_stop: f64) -> Vec<InputComponent> {
    let mut out = Vec::new();
    for (s, w) in sources.iter().enumerate() {
        match w {
            Waveform::Dc(_) => out.push(InputComponent { source: s, waveform: w.clone(), feature: None, lts: Vec::new() }),
            Waveform::Pulse(p) => out.push(InputComponent {
                source: s,
                waveform: w.clone(),
                feature: Some(BumpFeature::from_seconds(p.delay, p.rise, p.width, p.fall, p.period)),
                lts: extract_lts(w, t_start, t_stop),
            }),
            Waveform::Pwl(pts) => {
                let pieces = split_pwl(pts);
                if pieces.is_empty() {
                    out.push(InputComponent {
                        source: s,
                        waveform: Waveform::Dc(pts[0].1),
                        feature: None,
                        lts: Vec::new(),
                    });
                }
                for piece in pieces {
                    let wf = Waveform::Pwl(piece);
                    let Waveform::Pwl(p) = &wf else { unreachable!() };
                    let feature = Some(pwl_feature(p));
                    let lts = extract_lts(&wf, t_start, t_stop);
                    out.push(InputComponent { source: s, waveform: wf, feature, lts });
                }
            }
        }
    }
    out
}

/// A set of components simulated together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    /// Indices into [`TransitionPlan::components`], ascending.
    pub components: Vec<usize>,
    /// Distinct features of the members (more than one after capacity merging).
    pub features: Vec<Option<BumpFeature>>,
    pub lts: Vec<f64>,
    /// GTS points outside this group's own LTS.
    pub snapshots: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionPlan {
    pub t_start: f64,
    pub t_stop: f64,
    pub num_sources: usize,
    /// LTS of each source.
    pub source_lts: Vec<Vec<f64>>,
    /// Union of every source's LTS.
    pub gts: Vec<f64>,
    pub components: Vec<InputComponent>,
    pub groups: Vec<Group>,
}

/// Number of points in exactly one of two sorted sets (tolerant matching).
fn symmetric_difference(a: &[f64], b: &[f64], tol: f64) -> usize {
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        if (a[i] - b[j]).abs() <= tol {
            common += 1;
            i += 1;
            j += 1;
        } else if a[i] < b[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    a.len() + b.len() - 2 * common
}

fn difference(a: &[f64], b: &[f64], tol: f64) -> Vec<f64> {
    a.iter().copied().filter(|&t| crate::stepper::find_time(b, t, tol).is_none()).collect()
}

/// Group the sources' components by bump feature, capped at `max_groups`.
///
/// Components with identical features share a group. While there are too
/// many groups, the smallest one (fewest components, then lowest index) is
/// folded into the group whose LTS differs from it in the fewest points
/// (ties to the lower index).
pub fn build_plan(sources: &[Waveform], t_start: f64, t_stop: f64, max_groups: usize) -> TransitionPlan {
    let tol = merge_tolerance(t_start, t_stop);
    let components = split_components(sources, t_start, t_stop);
    let source_lts: Vec<Vec<f64>> = sources.iter().map(|w| extract_lts(w, t_start, t_stop)).collect();
    let gts = merge_times(source_lts.iter().map(Vec::as_slice), t_start, t_stop);

    let mut groups: Vec<Group> = Vec::new();
    for (ci, comp) in components.iter().enumerate() {
        match groups.iter_mut().find(|g| g.features[0] == comp.feature) {
            Some(g) => g.components.push(ci),
            None => groups.push(Group {
                components: vec![ci],
                features: vec![comp.feature],
                lts: Vec::new(),
                snapshots: Vec::new(),
            }),
        }
    }
    let lts_of = |g: &Group| {
        merge_times(g.components.iter().map(|&c| components[c].lts.as_slice()), t_start, t_stop)
    };
    for g in groups.iter_mut() {
        g.lts = lts_of(g);
    }

    let cap = max_groups.max(1);
    while groups.len() > cap {
        let small = (0..groups.len()).min_by_key(|&i| (groups[i].components.len(), i)).expect("non-empty");
        let target = (0..groups.len())
            .filter(|&j| j != small)
            .min_by_key(|&j| (symmetric_difference(&groups[small].lts, &groups[j].lts, tol), j))
            .expect("at least two groups");
        let moved = groups.remove(small);
        let target = if target > small { target - 1 } else { target };
        let g = &mut groups[target];
        g.components.extend(moved.components);
        g.components.sort_unstable();
        for f in moved.features {
            if !g.features.contains(&f) {
                g.features.push(f);
            }
        }
        g.lts = lts_of(g);
    }
    // Order groups by their first component for a stable, readable layout.
    groups.sort_by_key(|g| g.components[0]);
    for g in groups.iter_mut() {
        // Use the GTS representative of every spot, so that subtasks sample
        // bit-identical times and their results can be summed row by row.
        for t in g.lts.iter_mut() {
            if let Some(i) = crate::stepper::find_time(&gts, *t, tol) {
                *t = gts[i];
            }
        }
        g.snapshots = difference(&gts, &g.lts, tol);
    }
    TransitionPlan { t_start, t_stop, num_sources: sources.len(), source_lts, gts, components, groups }
}

/// One independent simulation of the decomposed run.
#[derive(Debug, Clone)]
pub struct Subtask {
    pub group: usize,
    /// The circuit driven only by this group's components: one input column
    /// per component, zero for components of other groups.
    pub system: CircuitSystem,
    pub lts: Vec<f64>,
    pub snapshots: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecompError {
    #[error("plan does not match the circuit: {0}")]
    PlanMismatch(String),
    #[error("subtask {group} failed: {source}")]
    Subtask { group: usize, source: StepperError },
    #[error("subtask outputs are not aligned: {0}")]
    Misaligned(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl TransitionPlan {
    /// The circuit with one input column per component.
    fn expanded_system(&self, sys: &CircuitSystem) -> Result<CircuitSystem, DecompError> {
        if sys.num_sources() != self.num_sources {
            return Err(DecompError::PlanMismatch(format!(
                "plan has {} sources, circuit has {}",
                self.num_sources,
                sys.num_sources()
            )));
        }
        let cols: Vec<usize> = self.components.iter().map(|c| c.source).collect();
        let b = match &sys.b {
            Some(b) => Some(b.select_columns(&cols).map_err(|e| DecompError::PlanMismatch(e.to_string()))?),
            None => None,
        };
        let mut counts = vec![0usize; self.num_sources];
        let names = self
            .components
            .iter()
            .map(|c| {
                counts[c.source] += 1;
                format!("{}#{}", sys.source_names[c.source], counts[c.source])
            })
            .collect();
        Ok(CircuitSystem {
            b,
            sources: self.components.iter().map(|c| c.waveform.clone()).collect(),
            source_names: names,
            ..sys.clone()
        })
    }

    /// One subtask per group. A single-group plan runs the circuit unchanged.
    pub fn subtasks(&self, sys: &CircuitSystem) -> Result<Vec<Subtask>, DecompError> {
        if self.groups.len() == 1 {
            if sys.num_sources() != self.num_sources {
                return Err(DecompError::PlanMismatch("source count differs".into()));
            }
            let g = &self.groups[0];
            return Ok(vec![Subtask { group: 0, system: sys.clone(), lts: g.lts.clone(), snapshots: g.snapshots.clone() }]);
        }
        let expanded = self.expanded_system(sys)?;
        Ok(self
            .groups
            .iter()
            .enumerate()
            .map(|(gi, g)| {
                let sources = (0..self.components.len())
                    .map(|c| {
                        if g.components.binary_search(&c).is_ok() {
                            self.components[c].waveform.clone()
                        } else {
                            Waveform::Dc(0.0)
                        }
                    })
                    .collect();
                Subtask { group: gi, system: expanded.with_sources(sources), lts: g.lts.clone(), snapshots: g.snapshots.clone() }
            })
            .collect())
    }
}

/// Per-subtask summary of a decomposed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskReport {
    pub group: usize,
    pub lts_points: usize,
    pub snapshots: usize,
    pub bases: usize,
    pub m_avg: f64,
    pub m_peak: usize,
    pub substitution_pairs: u64,
    pub factorizations: u64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperposedResult {
    /// Sample-wise sum of the group responses.
    pub merged: WaveformResult,
    pub subtasks: Vec<SubtaskReport>,
    /// Longest single subtask: the run time with one worker per subtask.
    pub critical_path: f64,
}

/// Solve every subtask of `plan` on a pool of `workers` threads and superpose.
///
/// The merge sums group results in group order after all subtasks finish, so
/// the output does not depend on the worker count or on completion order.
pub fn run_superposed(
    sys: &CircuitSystem,
    plan: &TransitionPlan,
    config: &SolverConfig,
    workers: usize,
) -> Result<SuperposedResult, DecompError> {
    let clock = Instant::now();
    let tasks = plan.subtasks(sys)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DecompError::Pool(e.to_string()))?;
    let results: Vec<Result<WaveformResult, DecompError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                solve(&t.system, config, &t.lts, &plan.gts)
                    .map_err(|source| DecompError::Subtask { group: t.group, source })
            })
            .collect()
    });
    let results: Vec<WaveformResult> = results.into_iter().collect::<Result<_, _>>()?;

    let first = &results[0];
    let tol = merge_tolerance(config.t_start, config.t_stop);
    let mut merged = first.clone();
    for (gi, r) in results.iter().enumerate().skip(1) {
        if r.times.len() != first.times.len()
            || r.times.iter().zip(&first.times).any(|(a, b)| (a - b).abs() > tol)
        {
            return Err(DecompError::Misaligned(format!("group {gi} sampled different times")));
        }
        for (acc, x) in merged.states.iter_mut().zip(&r.states) {
            for (a, b) in acc.iter_mut().zip(x) {
                *a += b;
            }
        }
        merged.samples.extend_from_slice(&r.samples);
        merged.bases.extend_from_slice(&r.bases);
        merged.substitution_pairs += r.substitution_pairs;
        merged.factorizations += r.factorizations;
    }
    let reports: Vec<SubtaskReport> = tasks
        .iter()
        .zip(&results)
        .map(|(t, r)| SubtaskReport {
            group: t.group,
            lts_points: t.lts.len(),
            snapshots: t.snapshots.len(),
            bases: r.bases.len(),
            m_avg: r.m_avg(),
            m_peak: r.m_peak(),
            substitution_pairs: r.substitution_pairs,
            factorizations: r.factorizations,
            wall_time: r.wall_time,
        })
        .collect();
    let critical_path = reports.iter().map(|r| r.wall_time).fold(0.0, f64::max);
    merged.wall_time = clock.elapsed().as_secs_f64();
    Ok(SuperposedResult { merged, subtasks: reports, critical_path })
}

/// Values of the analytic cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupEstimate {
    /// Distributed run over the same exponential run without decomposition:
    /// `(K·m·T_bs + K(T_H+T_e) + T_serial) / (k·m·T_bs + K(T_H+T_e) + T_serial)`.
    pub distributed: f64,
    /// Distributed run over a fixed-step run of `N` steps:
    /// `(N·T_bs + T_serial) / (k·m·T_bs + K(T_H+T_e) + T_serial)`.
    pub versus_fixed: f64,
    /// Process-wide substitution pairs counted so far, for comparison.
    pub measured_pairs: u64,
}

/// Cost model of a decomposed run: `N` fixed steps, `K` global transition
/// spots, `k` local spots per subtask, Krylov dimension `m`, one substitution
/// pair costing `T_bs`, one small exponential plus evaluation costing
/// `T_H + T_e`, and `T_serial` for everything else (factorizations, ...).
#[allow(clippy::too_many_arguments)]
pub fn speedup_model(
    n: f64,
    big_k: f64,
    k: f64,
    m: f64,
    t_bs: f64,
    t_h: f64,
    t_e: f64,
    t_serial: f64,
) -> SpeedupEstimate {
    let denom = k * m * t_bs + big_k * (t_h + t_e) + t_serial;
    SpeedupEstimate {
        distributed: (big_k * m * t_bs + big_k * (t_h + t_e) + t_serial) / denom,
        versus_fixed: (n * t_bs + t_serial) / denom,
        measured_pairs: substitution_pairs(),
    }
}
