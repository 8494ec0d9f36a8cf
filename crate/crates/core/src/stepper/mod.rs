//! Transient integration: the exponential (Krylov) solver with adaptive
//! basis reuse, and fixed-step trapezoidal / backward-Euler baselines.

mod fixed;
mod matex;
mod times;

pub use fixed::{be_reference, solve_transient_be, solve_transient_tr};
pub use matex::{compute_input_terms, matex_step, solve_transient_matex, InputTerms, MatexEngine, StepOutput};
pub use times::{
    find_time, max_step, median_gap, merge_times, merge_tolerance, normalize_times, sample_times,
    TIME_MERGE_RELATIVE,
};

use serde::{Deserialize, Serialize};

use crate::krylov::{BasisCheck, ErrorEstimator, KrylovError, KrylovVariant};
use crate::netlist::{CircuitSystem, NetlistError};
use crate::numkit::{vecops, NumError, DEFAULT_EXPM_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Fixed-step trapezoidal rule.
    Tr,
    /// Fixed-step backward Euler.
    Be,
    /// Exponential integrator on the standard Krylov subspace.
    Mexp,
    /// Exponential integrator on the inverted Krylov subspace.
    Imatex,
    /// Exponential integrator on the shift-and-invert Krylov subspace.
    Rmatex,
}

impl Method {
    pub fn is_exponential(self) -> bool {
        matches!(self, Method::Mexp | Method::Imatex | Method::Rmatex)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Tr => "tr",
            Method::Be => "be",
            Method::Mexp => "mexp",
            Method::Imatex => "imatex",
            Method::Rmatex => "rmatex",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "tr" => Ok(Method::Tr),
            "be" => Ok(Method::Be),
            "mexp" => Ok(Method::Mexp),
            "imatex" => Ok(Method::Imatex),
            "rmatex" => Ok(Method::Rmatex),
            other => Err(format!("unknown solver `{other}` (expected tr, be, mexp, imatex or rmatex)")),
        }
    }
}

/// How the piecewise-linear input enters an exponential step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InputPath {
    /// Closed-form input terms from `G⁻¹` solves.
    #[default]
    Fp,
    /// Input carried by two extra states inside one larger exponential.
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub t_start: f64,
    pub t_stop: f64,
    /// Step for the fixed-step methods.
    pub h: Option<f64>,
    /// Error budget over the whole span (absolute, state ∞-norm scale).
    pub e_tol: f64,
    pub m_max: usize,
    /// Shift for the rational subspace; defaults to a tenth of the median sample gap.
    pub gamma: Option<f64>,
    pub path: InputPath,
    pub estimator: ErrorEstimator,
    pub dense_cap: usize,
    /// Record orthogonality / Arnoldi-relation residuals of every basis.
    pub verify_bases: bool,
    /// Extra uniformly spaced output samples.
    pub resolution: Option<f64>,
    /// Limit on step halvings when a basis cannot reach its first sample.
    pub max_splits: usize,
}

impl SolverConfig {
    pub fn new(method: Method, t_start: f64, t_stop: f64) -> Self {
        Self {
            method,
            t_start,
            t_stop,
            h: None,
            e_tol: 1e-6,
            m_max: 30,
            gamma: None,
            path: InputPath::Fp,
            estimator: ErrorEstimator::Empirical,
            dense_cap: DEFAULT_EXPM_CAP,
            verify_bases: false,
            resolution: None,
            max_splits: 40,
        }
    }

    pub fn fixed(method: Method, t_start: f64, t_stop: f64, h: f64) -> Self {
        Self { h: Some(h), ..Self::new(method, t_start, t_stop) }
    }

    pub fn validate(&self) -> Result<(), StepperError> {
        let bad = |m: &str| Err(StepperError::InvalidConfig(m.to_string()));
        if !(self.t_start.is_finite() && self.t_stop.is_finite() && self.t_stop > self.t_start) {
            return bad("need finite t_start < t_stop");
        }
        if self.method.is_exponential() {
            if !(self.e_tol > 0.0) {
                return bad("error budget must be positive");
            }
            if self.m_max == 0 {
                return bad("m_max must be at least 1");
            }
            if let Some(g) = self.gamma {
                if !(g > 0.0 && g.is_finite()) {
                    return bad("gamma must be positive");
                }
            }
            if self.resolution.is_some_and(|r| !(r > 0.0)) {
                return bad("resolution must be positive");
            }
        } else {
            match self.h {
                Some(h) if h > 0.0 && h.is_finite() => {}
                _ => return bad("fixed-step methods need a positive step h"),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepperError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot factor {matrix}: {source}")]
    Factorization { matrix: &'static str, source: NumError },
    #[error("no convergence at t = {t:e}: {source}")]
    NoConvergence { t: f64, source: KrylovError },
    #[error(transparent)]
    Krylov(#[from] KrylovError),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Numeric(#[from] NumError),
}

/// One output sample of an exponential run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub t: f64,
    /// Time of the basis anchor used for this sample.
    pub anchor: f64,
    pub m: usize,
    pub estimate: f64,
    /// Sample evaluated from a basis built for an earlier sample.
    pub reused: bool,
}

/// One Krylov basis built during a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisDiagnostics {
    pub anchor: f64,
    pub m: usize,
    /// Samples served by the basis.
    pub samples: usize,
    /// Anchor inserted because the basis could not reach the next sample.
    pub internal: bool,
    pub applications: usize,
    pub estimator: ErrorEstimator,
    pub check: Option<BasisCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformResult {
    pub method: Method,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub samples: Vec<SampleDiagnostics>,
    pub bases: Vec<BasisDiagnostics>,
    /// Forward/backward substitution pairs spent by this run.
    pub substitution_pairs: u64,
    pub factorizations: u64,
    pub wall_time: f64,
    pub gamma: Option<f64>,
}

impl WaveformResult {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean Krylov dimension over bases that did work (`m > 0`).
    pub fn m_avg(&self) -> f64 {
        let ms: Vec<usize> = self.bases.iter().map(|b| b.m).filter(|&m| m > 0).collect();
        if ms.is_empty() {
            0.0
        } else {
            ms.iter().sum::<usize>() as f64 / ms.len() as f64
        }
    }

    pub fn m_peak(&self) -> usize {
        self.bases.iter().map(|b| b.m).max().unwrap_or(0)
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// State at time `t` (within the merge tolerance).
    pub fn state_at(&self, t: f64) -> Option<&[f64]> {
        let (Some(&a), Some(&b)) = (self.times.first(), self.times.last()) else {
            return None;
        };
        find_time(&self.times, t, merge_tolerance(a, b)).map(|i| self.states[i].as_slice())
    }

    /// `max_t ‖x(t) − x_ref(t)‖∞ / max_t ‖x_ref(t)‖∞` over the sample times of
    /// `self`, all of which must be present in `reference`.
    pub fn relative_error(&self, reference: &WaveformResult) -> Option<f64> {
        let scale = reference.states.iter().map(|x| vecops::norm_inf(x)).fold(0.0, f64::max);
        let mut worst = 0.0f64;
        for (t, x) in self.times.iter().zip(&self.states) {
            let r = reference.state_at(*t)?;
            worst = worst.max(vecops::max_abs_diff(x, r));
        }
        Some(if scale > 0.0 { worst / scale } else { worst })
    }

    /// Largest absolute difference at shared sample times.
    pub fn max_abs_difference(&self, other: &WaveformResult) -> Option<f64> {
        let mut worst = 0.0f64;
        for (t, x) in self.times.iter().zip(&self.states) {
            worst = worst.max(vecops::max_abs_diff(x, other.state_at(*t)?));
        }
        Some(worst)
    }
}

/// Run the configured method. Exponential methods step through the given
/// anchor (`lts`) and sample (`gts`) sets; fixed-step methods ignore them.
pub fn solve(
    sys: &CircuitSystem,
    config: &SolverConfig,
    lts: &[f64],
    gts: &[f64],
) -> Result<WaveformResult, StepperError> {
    match config.method {
        Method::Tr => solve_transient_tr(sys, config),
        Method::Be => solve_transient_be(sys, config),
        _ => solve_transient_matex(sys, config, lts, gts),
    }
}

/// Slope-change times of every source of `sys` inside the span.
pub fn transition_spots(sys: &CircuitSystem, t_start: f64, t_stop: f64) -> Vec<f64> {
    let sets: Vec<Vec<f64>> = sys.sources.iter().map(|w| w.transition_spots(t_start, t_stop)).collect();
    merge_times(sets.iter().map(Vec::as_slice), t_start, t_stop)
}

/// Default shift: a tenth of the median gap between samples.
pub fn default_gamma(samples: &[f64]) -> f64 {
    median_gap(samples) / 10.0
}

pub(crate) fn variant_for(method: Method, gamma: f64) -> Option<KrylovVariant> {
    match method {
        Method::Mexp => Some(KrylovVariant::Standard),
        Method::Imatex => Some(KrylovVariant::Inverted),
        Method::Rmatex => Some(KrylovVariant::Rational { gamma }),
        _ => None,
    }
}
