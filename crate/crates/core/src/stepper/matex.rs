//! Exponential integration of `C ẋ = −G x + B u(t)` for piecewise-linear `u`.
//!
//! On a segment `[a, b]` where `u` is linear, with `w(t) = A⁻¹b(t) = −G⁻¹B u(t)`
//! and `θ(t) = A⁻¹w(t) = −G⁻¹C w(t)`, the exact solution is
//!
//! ```text
//! x(t) = e^{(t−a)A} (x(a) + F) − P(t),   F = w(a) + s,  P(t) = w(t) + s,
//! s = (θ(b) − θ(a)) / (b − a).
//! ```
//!
//! `w` and `θ` are linear on the segment, so only their end values need
//! solves. One Krylov basis built for `x(a) + F` serves every sample inside
//! the segment: each sample only rescales the small exponential.

use std::time::Instant;

use crate::krylov::{
    build_basis, ArnoldiOptions, AugmentedOperator, ErrorEstimator, KrylovBasis, KrylovError, KrylovOperator,
    KrylovVariant, SystemOperator, Tolerance,
};
use crate::netlist::CircuitSystem;
use crate::numkit::{lu_factorize, lu_factorize_ordered, vecops, LuFactors, SparseMatrix};

use super::times::{merge_tolerance, normalize_times, sample_times};
use super::{
    default_gamma, variant_for, BasisDiagnostics, InputPath, Method, SampleDiagnostics, SolverConfig, StepperError,
    WaveformResult,
};

/// Input terms of one exact step of length `h` from `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTerms {
    pub h: f64,
    pub w_start: Vec<f64>,
    pub w_end: Vec<f64>,
    /// `(θ(t+h) − θ(t)) / h`.
    pub slope_term: Vec<f64>,
}

impl InputTerms {
    /// Terms from `(w, θ)` pairs at both ends.
    pub fn between(start: (&[f64], &[f64]), end: (&[f64], &[f64]), h: f64) -> Self {
        let slope_term = end.1.iter().zip(start.1).map(|(b, a)| (b - a) / h).collect();
        Self { h, w_start: start.0.to_vec(), w_end: end.0.to_vec(), slope_term }
    }

    /// `F = A⁻¹b(t) + A⁻²(b(t+h) − b(t))/h`.
    pub fn f(&self) -> Vec<f64> {
        vecops::add(&self.w_start, &self.slope_term)
    }

    /// `P = A⁻¹b(t+h) + A⁻²(b(t+h) − b(t))/h`.
    pub fn p(&self) -> Vec<f64> {
        vecops::add(&self.w_end, &self.slope_term)
    }

    /// `P` at an intermediate offset `s ∈ [0, h]`.
    pub fn p_at(&self, s: f64) -> Vec<f64> {
        let frac = s / self.h;
        (0..self.w_start.len())
            .map(|i| self.w_start[i] + frac * (self.w_end[i] - self.w_start[i]) + self.slope_term[i])
            .collect()
    }
}

/// `(w(t), θ(t))` with two substitution pairs against `G`; free when `B u(t) = 0`.
fn w_theta(sys: &CircuitSystem, g_factors: &LuFactors, t: f64) -> Result<(Vec<f64>, Vec<f64>), StepperError> {
    let (bu, _) = sys.excitation(t);
    let n = sys.dim();
    if bu.iter().all(|&v| v == 0.0) {
        return Ok((vec![0.0; n], vec![0.0; n]));
    }
    let mut w = g_factors.solve(&bu)?;
    w.iter_mut().for_each(|e| *e = -*e);
    let mut theta = g_factors.solve(&sys.c.mul_vec(&w))?;
    theta.iter_mut().for_each(|e| *e = -*e);
    Ok((w, theta))
}

/// Input terms for a step `[t, t+h]` over which every input is linear.
pub fn compute_input_terms(
    sys: &CircuitSystem,
    g_factors: &LuFactors,
    t: f64,
    h: f64,
) -> Result<InputTerms, StepperError> {
    let (w0, th0) = w_theta(sys, g_factors, t)?;
    let (w1, th1) = w_theta(sys, g_factors, t + h)?;
    Ok(InputTerms::between((&w0, &th0), (&w1, &th1), h))
}

/// Factorizations and operators for one exponential run.
pub struct MatexEngine<'a> {
    sys: &'a CircuitSystem,
    variant: KrylovVariant,
    path: InputPath,
    opts: ArnoldiOptions,
    g_lu: LuFactors,
    c_lu: Option<LuFactors>,
    shifted_lu: Option<LuFactors>,
    shifted: Option<SparseMatrix>,
    factorizations: u64,
}

fn factor(matrix: &'static str, a: &SparseMatrix) -> Result<LuFactors, StepperError> {
    lu_factorize(a).map_err(|source| StepperError::Factorization { matrix, source })
}

/// Whether every off-diagonal entry of `a` lies in the symmetric pattern of `b`.
fn couplings_within(a: &SparseMatrix, b: &SparseMatrix) -> bool {
    a.triplets().into_iter().all(|(r, c, _)| r == c || b.get(r, c) != 0.0 || b.get(c, r) != 0.0)
}

impl<'a> MatexEngine<'a> {
    /// Factor `G` (always), `C` (standard subspace, or the residual
    /// estimator when `C` is nonsingular) and `C + γG` (rational subspace).
    pub fn new(sys: &'a CircuitSystem, config: &SolverConfig, gamma: f64) -> Result<Self, StepperError> {
        let variant = variant_for(config.method, gamma)
            .ok_or_else(|| StepperError::InvalidConfig(format!("{} is not an exponential method", config.method.name())))?;
        variant.validate()?;
        if config.path == InputPath::Augmented && variant == KrylovVariant::Inverted {
            return Err(KrylovError::Unsupported(
                "the augmented input path has a singular generator block and cannot use the inverted subspace".into(),
            )
            .into());
        }
        let mut factorizations = 1;
        let g_lu = factor("G", &sys.g)?;
        let mut c_lu = None;
        let mut shifted_lu = None;
        let mut shifted = None;
        match variant {
            KrylovVariant::Standard => {
                c_lu = Some(factor("C", &sys.c)?);
                factorizations += 1;
            }
            KrylovVariant::Rational { gamma } => {
                let m = sys.c.linear_combination(1.0, &sys.g, gamma)?;
                // The ordering ignores the diagonal, so G's serves whenever
                // C couples no pair of unknowns that G leaves apart.
                shifted_lu = Some(if couplings_within(&sys.c, &sys.g) {
                    lu_factorize_ordered(&m, g_lu.column_order())
                        .map_err(|source| StepperError::Factorization { matrix: "C + gamma*G", source })?
                } else {
                    factor("C + gamma*G", &m)?
                });
                shifted = Some(m);
                factorizations += 1;
            }
            KrylovVariant::Inverted => {}
        }
        if config.estimator == ErrorEstimator::Residual && c_lu.is_none() {
            // Singular C simply leaves the empirical estimator in charge.
            if let Ok(f) = lu_factorize(&sys.c) {
                c_lu = Some(f);
                factorizations += 1;
            }
        }
        let opts = ArnoldiOptions {
            m_max: config.m_max,
            estimator: config.estimator,
            dense_cap: config.dense_cap,
            verify: config.verify_bases,
        };
        Ok(Self { sys, variant, path: config.path, opts, g_lu, c_lu, shifted_lu, shifted, factorizations })
    }

    pub fn variant(&self) -> KrylovVariant {
        self.variant
    }

    pub fn path(&self) -> InputPath {
        self.path
    }

    pub fn options(&self) -> &ArnoldiOptions {
        &self.opts
    }

    pub fn factorizations(&self) -> u64 {
        self.factorizations
    }

    pub fn g_factors(&self) -> &LuFactors {
        &self.g_lu
    }

    /// Substitution pairs spent against this engine's factors so far.
    pub fn substitution_pairs(&self) -> u64 {
        self.g_lu.solve_count()
            + self.c_lu.as_ref().map_or(0, LuFactors::solve_count)
            + self.shifted_lu.as_ref().map_or(0, LuFactors::solve_count)
    }

    /// DC operating point at `t`.
    pub fn dc(&self, t: f64) -> Result<Vec<f64>, StepperError> {
        Ok(crate::netlist::dc_solve(self.sys, &self.g_lu, t)?)
    }

    pub fn input_terms(&self, t: f64, h: f64) -> Result<InputTerms, StepperError> {
        compute_input_terms(self.sys, &self.g_lu, t, h)
    }

    /// Operator of the unforced system for this variant.
    pub fn operator(&self) -> SystemOperator<'_> {
        match self.variant {
            KrylovVariant::Standard => SystemOperator::standard(self.c_lu.as_ref().expect("factored"), &self.sys.g),
            KrylovVariant::Inverted => {
                let op = SystemOperator::inverted(&self.g_lu, &self.sys.c);
                match &self.c_lu {
                    Some(c) => op.with_generator(c, &self.sys.g),
                    None => op,
                }
            }
            KrylovVariant::Rational { gamma } => {
                let op = SystemOperator::rational(gamma, self.shifted_lu.as_ref().expect("factored"), &self.sys.c)
                    .expect("validated shift")
                    .with_static_response(&self.g_lu, &self.sys.c);
                match &self.c_lu {
                    Some(c) => op.with_generator(c, &self.sys.g),
                    None => op,
                }
            }
        }
    }

    fn augmented(&self, b0: Vec<f64>, b1: Vec<f64>, tau: f64) -> Result<AugmentedOperator<'_>, StepperError> {
        match self.variant {
            KrylovVariant::Standard => Ok(AugmentedOperator::standard(
                self.c_lu.as_ref().expect("factored"),
                &self.sys.c,
                &self.sys.g,
                b0,
                b1,
                tau,
            )),
            KrylovVariant::Rational { gamma } => Ok(AugmentedOperator::rational(
                gamma,
                self.shifted_lu.as_ref().expect("factored"),
                &self.sys.c,
                &self.sys.g,
                b0,
                b1,
                tau,
            )?),
            KrylovVariant::Inverted => unreachable!("rejected at construction"),
        }
    }

    /// The shifted matrix `C + γG` (rational variant only).
    pub fn shifted_matrix(&self) -> Option<&SparseMatrix> {
        self.shifted.as_ref()
    }
}

/// Result of a single fresh exponential step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub x: Vec<f64>,
    pub basis: KrylovBasis,
    pub terms: InputTerms,
    pub estimate: f64,
}

/// One exact step of length `h` from `(t, x)` with a fresh basis and
/// absolute tolerance `eps`. The returned basis, anchored at `t`, reproduces
/// any intermediate point `t + s` as `basis.expm_action(s) − terms.p_at(s)`.
pub fn matex_step(
    engine: &MatexEngine<'_>,
    x: &[f64],
    t: f64,
    h: f64,
    eps: f64,
) -> Result<StepOutput, StepperError> {
    let terms = engine.input_terms(t, h)?;
    let v = vecops::add(x, &terms.f());
    let op = engine.operator();
    let out = build_basis(&op, &v, engine.options(), &[h], Tolerance::Absolute(eps))?;
    if !out.converged {
        return Err(StepperError::NoConvergence {
            t,
            source: KrylovError::NoConvergence { m_max: engine.options().m_max, estimate: out.estimates[0] },
        });
    }
    let y = out.basis.expm_action(h)?;
    let x_new = vecops::sub(&y, &terms.p());
    Ok(StepOutput { x: x_new, basis: out.basis.with_anchor(t), terms, estimate: out.estimates[0] })
}

struct Recorder {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    samples: Vec<SampleDiagnostics>,
    bases: Vec<BasisDiagnostics>,
}

struct Segment<'s> {
    op: &'s dyn KrylovOperator,
    /// Krylov start vector for an anchor at time `t` with state `x`.
    start: &'s dyn Fn(f64, &[f64]) -> Vec<f64>,
    /// State at time `t` from the exp action `y`.
    finish: &'s dyn Fn(f64, Vec<f64>) -> Vec<f64>,
}

fn run_segment(
    seg: &Segment<'_>,
    opts: &ArnoldiOptions,
    rate: f64,
    max_splits: usize,
    a: f64,
    x_a: Vec<f64>,
    targets: &[f64],
    rec: &mut Recorder,
) -> Result<Vec<f64>, StepperError> {
    let tol = Tolerance::PerUnitStep(rate);
    let mut anchor = a;
    let mut x = x_a;
    let mut remaining = targets;
    while !remaining.is_empty() {
        let v = (seg.start)(anchor, &x);
        let horizons: Vec<f64> = remaining.iter().map(|t| t - anchor).collect();
        let out = build_basis(seg.op, &v, opts, &horizons, tol)?;
        let k = if out.converged { remaining.len() } else { out.converged_prefix(&horizons, tol) };
        if k == 0 {
            // The basis cannot reach the next sample: insert an internal anchor.
            let mut h = horizons[0];
            let mut last = out.estimates[0];
            let mut splits = 0;
            loop {
                splits += 1;
                if splits > max_splits {
                    return Err(StepperError::NoConvergence {
                        t: anchor,
                        source: KrylovError::NoConvergence { m_max: opts.m_max, estimate: last },
                    });
                }
                h /= 2.0;
                let trial = build_basis(seg.op, &v, opts, &[h], tol)?;
                if trial.converged {
                    let y = trial.basis.expm_action(h)?;
                    rec.bases.push(BasisDiagnostics {
                        anchor,
                        m: trial.basis.m(),
                        samples: 0,
                        internal: true,
                        applications: trial.applications,
                        estimator: trial.basis.estimator(),
                        check: trial.basis.check(),
                    });
                    anchor += h;
                    x = (seg.finish)(anchor, y);
                    break;
                }
                last = trial.estimates[0];
            }
            continue;
        }
        rec.bases.push(BasisDiagnostics {
            anchor,
            m: out.basis.m(),
            samples: k,
            internal: false,
            applications: out.applications,
            estimator: out.basis.estimator(),
            check: out.basis.check(),
        });
        for i in 0..k {
            let y = out.basis.expm_action(horizons[i])?;
            let xi = (seg.finish)(remaining[i], y);
            rec.samples.push(SampleDiagnostics {
                t: remaining[i],
                anchor,
                m: out.basis.m(),
                estimate: out.estimates[i],
                reused: i > 0,
            });
            rec.times.push(remaining[i]);
            rec.states.push(xi);
        }
        anchor = remaining[k - 1];
        x = rec.states.last().expect("just pushed").clone();
        remaining = &remaining[k..];
    }
    Ok(x)
}

/// Exponential transient solve. Bases are built at `t_start` and at every
/// point of `lts` (where this run's inputs change slope) and reused for all
/// samples (`gts`, the endpoints, and the optional resolution grid) up to
/// the next such point.
pub fn solve_transient_matex(
    sys: &CircuitSystem,
    config: &SolverConfig,
    lts: &[f64],
    gts: &[f64],
) -> Result<WaveformResult, StepperError> {
    config.validate()?;
    if !config.method.is_exponential() {
        return Err(StepperError::InvalidConfig(format!("{} is not an exponential method", config.method.name())));
    }
    let clock = Instant::now();
    let (t0, t1) = (config.t_start, config.t_stop);
    let tol = merge_tolerance(t0, t1);
    let mut spots = gts.to_vec();
    spots.extend_from_slice(lts);
    let samples = sample_times(&spots, t0, t1, config.resolution);
    let gamma = config.gamma.unwrap_or_else(|| default_gamma(&samples));
    let engine = MatexEngine::new(sys, config, gamma)?;
    let opts = *engine.options();
    let rate = config.e_tol / (t1 - t0);

    let mut anchors = lts.to_vec();
    anchors.push(t0);
    let mut anchors = normalize_times(anchors, t0, t1, tol);
    anchors.retain(|&t| t < t1 - tol);
    anchors.push(t1);
    // Anchors are snapped onto the sample grid so segment ends coincide with samples.
    for a in anchors.iter_mut() {
        if let Some(i) = super::times::find_time(&samples, *a, tol) {
            *a = samples[i];
        }
    }

    let x0 = engine.dc(t0)?;
    let mut rec = Recorder { times: vec![t0], states: vec![x0.clone()], samples: Vec::new(), bases: Vec::new() };
    let mut x = x0;
    let n = sys.dim();
    let mut wt_a = match config.path {
        InputPath::Fp => Some(w_theta(sys, &engine.g_lu, t0)?),
        InputPath::Augmented => None,
    };

    for seg in anchors.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let lo = samples.partition_point(|&t| t <= a + tol);
        let hi = samples.partition_point(|&t| t <= b + tol);
        let targets = &samples[lo..hi];
        if targets.is_empty() {
            continue;
        }
        x = match config.path {
            InputPath::Fp => {
                let (w_a, th_a) = wt_a.take().expect("cached at previous segment end");
                let (w_b, th_b) = w_theta(sys, &engine.g_lu, b)?;
                let terms = InputTerms::between((&w_a, &th_a), (&w_b, &th_b), b - a);
                let op = engine.operator();
                let start = |t: f64, x: &[f64]| {
                    let p = terms.p_at(t - a);
                    vecops::add(x, &p)
                };
                let finish = |t: f64, y: Vec<f64>| {
                    let p = if t == b { terms.p() } else { terms.p_at(t - a) };
                    vecops::sub(&y, &p)
                };
                let seg = Segment { op: &op, start: &start, finish: &finish };
                let x_b = run_segment(&seg, &opts, rate, config.max_splits, a, x, targets, &mut rec)?;
                wt_a = Some((w_b, th_b));
                x_b
            }
            InputPath::Augmented => {
                let (b0, _) = sys.excitation(a);
                let (bb, _) = sys.excitation(b);
                let tau = b - a;
                let b1: Vec<f64> = bb.iter().zip(&b0).map(|(e, s)| (e - s) / tau).collect();
                if b0.iter().chain(&b1).all(|&v| v == 0.0) {
                    let op = engine.operator();
                    let start = |_: f64, x: &[f64]| x.to_vec();
                    let finish = |_: f64, y: Vec<f64>| y;
                    let seg = Segment { op: &op, start: &start, finish: &finish };
                    run_segment(&seg, &opts, rate, config.max_splits, a, x, targets, &mut rec)?
                } else {
                    let op = engine.augmented(b0, b1, tau)?;
                    let start = |t: f64, x: &[f64]| {
                        let mut z = x.to_vec();
                        z.push((t - a) / tau);
                        z.push(1.0);
                        z
                    };
                    let finish = |_: f64, mut y: Vec<f64>| {
                        y.truncate(n);
                        y
                    };
                    let seg = Segment { op: &op, start: &start, finish: &finish };
                    run_segment(&seg, &opts, rate, config.max_splits, a, x, targets, &mut rec)?
                }
            }
        };
    }

    Ok(WaveformResult {
        method: config.method,
        times: rec.times,
        states: rec.states,
        samples: rec.samples,
        bases: rec.bases,
        substitution_pairs: engine.substitution_pairs(),
        factorizations: engine.factorizations(),
        wall_time: clock.elapsed().as_secs_f64(),
        gamma: matches!(config.method, Method::Rmatex).then_some(gamma),
    })
}
