use std::collections::BTreeMap;

use crate::numkit::{
    dense_expm_capped, expm_and_phi1_first_column, vecops, DenseLu, DenseMatrix, NumError, DEFAULT_EXPM_CAP,
};

use super::{ErrorEstimator, KrylovError, KrylovOperator, KrylovVariant};

/// Relative size of `h_{j+1,j}` below which the subspace is declared invariant.
const BREAKDOWN_TOL: f64 = 1e-12;

/// Horizons checked while the basis is still growing; the full list is
/// checked once a candidate dimension passes.
const PROBE_HORIZONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArnoldiOptions {
    pub m_max: usize,
    pub estimator: ErrorEstimator,
    /// Largest Hessenberg block handed to the dense exponential.
    pub dense_cap: usize,
    /// Record orthogonality and Arnoldi-relation residuals for the basis.
    pub verify: bool,
}

impl Default for ArnoldiOptions {
    fn default() -> Self {
        Self {
            m_max: 30,
            estimator: ErrorEstimator::Empirical,
            dense_cap: DEFAULT_EXPM_CAP,
            verify: false,
        }
    }
}

/// Measured quality of a basis.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct BasisCheck {
    /// `max |[V v_next]ᵀ[V v_next] − I|`.
    pub orthogonality: f64,
    /// `‖M·V − V·H − h_next·v_next·e_mᵀ‖_F / ‖M·V‖_F`.
    pub relation: f64,
}

/// Orthonormal basis `V`, Hessenberg `H` of the variant operator, and the
/// data needed to evaluate and assess `β·V·e^{h·H_eff}·e₁`.
#[derive(Debug, Clone)]
pub struct KrylovBasis {
    dim: usize,
    v: Vec<Vec<f64>>,
    hraw: Option<DenseMatrix>,
    heff: Option<DenseMatrix>,
    h_next: f64,
    v_next: Option<Vec<f64>>,
    beta: f64,
    variant: KrylovVariant,
    anchor: f64,
    breakdown: bool,
    estimator: ErrorEstimator,
    /// Residual mode: `‖A·v_next‖` (inverted) or `‖(I − γA)·v_next‖/γ` (rational).
    next_norm: Option<f64>,
    /// Rational variant: `‖(G⁻¹C + γI)·v_next‖/γ`, scaling the empirical estimate.
    static_scale: Option<f64>,
    /// Inverted and rational variants: effective generator of dimension `m + 1`.
    ahead: Option<DenseMatrix>,
    dense_cap: usize,
    check: Option<BasisCheck>,
}

impl KrylovBasis {
    /// Krylov dimension `m`.
    pub fn m(&self) -> usize {
        self.v.len()
    }

    pub fn state_dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn hessenberg(&self) -> Option<&DenseMatrix> {
        self.hraw.as_ref()
    }

    pub fn generator(&self) -> Option<&DenseMatrix> {
        self.heff.as_ref()
    }

    pub fn h_next(&self) -> f64 {
        self.h_next
    }

    pub fn v_next(&self) -> Option<&[f64]> {
        self.v_next.as_deref()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn variant(&self) -> KrylovVariant {
        self.variant
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn with_anchor(mut self, t: f64) -> Self {
        self.anchor = t;
        self
    }

    /// The subspace is invariant: the exp action is exact within it.
    pub fn is_breakdown(&self) -> bool {
        self.breakdown
    }

    pub fn estimator(&self) -> ErrorEstimator {
        self.estimator
    }

    pub fn check(&self) -> Option<BasisCheck> {
        self.check
    }

    /// `β·V·e^{h·H_eff}·e₁`.
    pub fn expm_action(&self, h: f64) -> Result<Vec<f64>, KrylovError> {
        let mut out = vec![0.0; self.dim];
        let Some(heff) = &self.heff else {
            return Ok(out);
        };
        let e = dense_expm_capped(&heff.scaled(h), self.dense_cap)?;
        for (j, vj) in self.v.iter().enumerate() {
            vecops::axpy(self.beta * e[(j, 0)], vj, &mut out);
        }
        Ok(out)
    }

    /// Posterior error estimate at step length `h`.
    pub fn posterior_error(&self, h: f64) -> f64 {
        let (Some(hraw), Some(heff)) = (&self.hraw, &self.heff) else {
            return 0.0;
        };
        if self.breakdown {
            return 0.0;
        }
        let est = EstimateInput {
            variant: self.variant,
            estimator: self.estimator,
            hraw,
            heff,
            h_next: self.h_next,
            beta: self.beta,
            next_norm: self.next_norm,
            static_scale: self.static_scale,
            ahead: self.ahead.as_ref(),
            cap: self.dense_cap,
        };
        est.at(h)
    }
}

/// Number of quarterings of the step at which the rational residual is also taken.
const ENVELOPE_DEPTH: usize = 4;

struct EstimateInput<'a> {
    variant: KrylovVariant,
    estimator: ErrorEstimator,
    hraw: &'a DenseMatrix,
    heff: &'a DenseMatrix,
    h_next: f64,
    beta: f64,
    next_norm: Option<f64>,
    static_scale: Option<f64>,
    /// Effective generator of the basis one vector larger, when built.
    ahead: Option<&'a DenseMatrix>,
    cap: usize,
}

impl EstimateInput<'_> {
    /// Estimate at step `h`; non-finite results are reported as infinite.
    fn at(&self, h: f64) -> f64 {
        self.combine(self.parts(h), self.static_scale.unwrap_or(1.0))
    }

    /// The estimate at `h` split into the part the static scale multiplies
    /// and the part it does not, so one set of exponentials serves any scale.
    fn parts(&self, h: f64) -> (f64, f64) {
        match self.try_parts(h) {
            Ok((a, b)) if a.is_finite() && b.is_finite() => (a, b),
            _ => (f64::INFINITY, f64::INFINITY),
        }
    }

    fn combine(&self, (scaled, fixed): (f64, f64), scale: f64) -> f64 {
        (scaled * scale).max(fixed)
    }

    /// Whether the residual is the rational one weighted by the static scale.
    fn statically_scaled(&self) -> bool {
        matches!(self.variant, KrylovVariant::Rational { .. })
            && self.static_scale.is_some()
            && !(self.estimator == ErrorEstimator::Residual && self.next_norm.is_some())
    }

    fn try_parts(&self, h: f64) -> Result<(f64, f64), NumError> {
        if h == 0.0 || self.h_next == 0.0 || self.beta == 0.0 {
            return Ok((0.0, 0.0));
        }
        let m = self.hraw.nrows();
        if self.variant == KrylovVariant::Standard {
            // ∫₀ʰ ‖r(s)‖ ds with r(s) = β·h_next·v_next·e_mᵀ e^{sH} e₁.
            let (_, phi) = expm_and_phi1_first_column(&self.hraw.scaled(h), self.cap)?;
            return Ok((0.0, self.beta * h * self.h_next * phi[m - 1].abs()));
        }
        let scaled = self.statically_scaled();
        let needs_lu = scaled || (self.estimator == ErrorEstimator::Residual && self.next_norm.is_some());
        let lu = if needs_lu { Some(self.hraw.lu()?) } else { None };
        let e = dense_expm_capped(&self.heff.scaled(h), self.cap)?.column(0);
        let mut residual = self.residual_at(h, &e, lu.as_ref());
        if let KrylovVariant::Rational { gamma } = self.variant {
            residual = residual.max(self.early_residual(h, gamma, lu.as_ref())?);
        }
        let ahead = match self.ahead {
            // The residual estimates only see the end of the step. A basis that
            // has met nothing but the fast modes predicts a state that has all
            // but vanished at h, so its residual there is tiny even when the
            // slow content it never saw is not. The next Arnoldi vector weights
            // the slow modes up, so comparing with the one-larger basis exposes
            // exactly that case.
            Some(ahead) => {
                let large = dense_expm_capped(&ahead.scaled(h), self.cap)?.column(0);
                self.beta * distance_padded(&large, &e)
            }
            None => 0.0,
        };
        Ok(if scaled { (residual, ahead) } else { (0.0, residual.max(ahead)) })
    }

    /// Largest residual estimate at the steps h/4, h/16, … that are not
    /// shorter than the shift. Error made early in the step is carried to h
    /// by the slow modes with little damping, while the projected solution
    /// may already have decayed by h.
    fn early_residual(&self, h: f64, gamma: f64, lu: Option<&DenseLu>) -> Result<f64, NumError> {
        let levels = (1..=ENVELOPE_DEPTH).take_while(|&k| h / 4f64.powi(k as i32) >= gamma).count();
        if levels == 0 {
            return Ok(0.0);
        }
        // e^{τH} for the shortest step, squared twice per level upwards.
        let mut tau = h / 4f64.powi(levels as i32);
        let mut step = dense_expm_capped(&self.heff.scaled(tau), self.cap)?;
        let mut worst = 0.0f64;
        for level in 0..levels {
            if level > 0 {
                step = step.matmul(&step);
                step = step.matmul(&step);
                tau *= 4.0;
            }
            worst = worst.max(self.residual_at(tau, &step.column(0), lu));
        }
        Ok(worst)
    }

    /// Residual estimate from `e = e^{hH} e₁`. In the statically scaled
    /// case the scale itself is left out; `lu` factors the raw Hessenberg
    /// block whenever a branch needs it.
    fn residual_at(&self, h: f64, e: &[f64], lu: Option<&DenseLu>) -> f64 {
        let m = self.hraw.nrows();
        let last_of_solve = |lu: Option<&DenseLu>| lu.map_or(f64::INFINITY, |lu| lu.solve(e)[m - 1].abs());
        match (self.estimator, self.next_norm) {
            (ErrorEstimator::Residual, Some(norm)) => self.beta * h * self.h_next * norm * last_of_solve(lu),
            _ if self.statically_scaled() => {
                // The residual of the rational approximation points along
                // (C + γG)·v_next; its quasi-static effect on the state is
                // (G⁻¹C + γI)·v_next scaled by e_mᵀ H̃⁻¹ e^{hH} e₁ / γ.
                self.beta * self.h_next * last_of_solve(lu)
            }
            _ if self.variant == KrylovVariant::Inverted => {
                // The residual points along A·v_next; its quasi-static effect
                // on the state is v_next scaled by e_mᵀ H e^{hH} e₁.
                let he = self.heff.mul_vec(e);
                self.beta * self.h_next * he[m - 1].abs()
            }
            _ => self.beta * self.h_next * e[m - 1].abs(),
        }
    }
}

/// `‖a − b‖₂`, with the shorter vector padded by zeros.
fn distance_padded(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// The matrix whose exponential advances the state for a given variant:
/// `H` (standard), `H⁻¹` (inverted) or `(I − H⁻¹)/γ` (rational).
pub fn effective_generator_of(
    variant: KrylovVariant,
    hraw: &DenseMatrix,
) -> Result<DenseMatrix, KrylovError> {
    variant.validate()?;
    let invert = || {
        hraw.inverse().map_err(|e| {
            KrylovError::BasisDegenerate(format!("Hessenberg matrix not invertible: {e}"))
        })
    };
    match variant {
        KrylovVariant::Standard => Ok(hraw.clone()),
        KrylovVariant::Inverted => invert(),
        KrylovVariant::Rational { gamma } => {
            let inv = invert()?;
            Ok(DenseMatrix::identity(hraw.nrows())
                .add_scaled(-1.0, &inv)
                .scaled(1.0 / gamma))
        }
    }
}

pub fn effective_generator(basis: &KrylovBasis) -> Result<DenseMatrix, KrylovError> {
    match &basis.hraw {
        Some(h) => effective_generator_of(basis.variant, h),
        None => Err(KrylovError::BasisDegenerate("empty basis".into())),
    }
}

pub fn expm_action(basis: &KrylovBasis, h: f64) -> Result<Vec<f64>, KrylovError> {
    basis.expm_action(h)
}

pub fn posterior_error(basis: &KrylovBasis, h: f64) -> f64 {
    basis.posterior_error(h)
}

/// Error allowed for the exp action at a horizon `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    Absolute(f64),
    /// `rate · h`: an error budget that grows with the step length.
    PerUnitStep(f64),
}

impl Tolerance {
    pub fn at(&self, h: f64) -> f64 {
        match *self {
            Tolerance::Absolute(e) => e,
            Tolerance::PerUnitStep(rate) => rate * h,
        }
    }
}

/// A basis plus the estimate at each requested horizon.
#[derive(Debug, Clone)]
pub struct BasisOutcome {
    pub basis: KrylovBasis,
    pub estimates: Vec<f64>,
    /// Every horizon met the tolerance (or the subspace became invariant).
    pub converged: bool,
    /// Operator applications performed, including any beyond the returned dimension.
    pub applications: usize,
}

impl BasisOutcome {
    /// Number of leading horizons whose estimate is within tolerance.
    pub fn converged_prefix(&self, horizons: &[f64], tol: Tolerance) -> usize {
        self.estimates
            .iter()
            .zip(horizons)
            .take_while(|&(&e, &h)| e < tol.at(h) || e == 0.0)
            .count()
    }
}

/// Single-horizon Arnoldi with default options; fails if `eps` is not reached.
pub fn arnoldi(
    op: &dyn KrylovOperator,
    v: &[f64],
    m_max: usize,
    h: f64,
    eps: f64,
) -> Result<KrylovBasis, KrylovError> {
    let opts = ArnoldiOptions {
        m_max,
        ..Default::default()
    };
    arnoldi_with(op, v, &opts, &[h], eps)
}

/// Arnoldi that must satisfy `eps` at every horizon.
pub fn arnoldi_with(
    op: &dyn KrylovOperator,
    v: &[f64],
    opts: &ArnoldiOptions,
    horizons: &[f64],
    eps: f64,
) -> Result<KrylovBasis, KrylovError> {
    let out = build_basis(op, v, opts, horizons, Tolerance::Absolute(eps))?;
    if out.converged {
        Ok(out.basis)
    } else {
        let estimate = out.estimates.iter().copied().fold(0.0, f64::max);
        Err(KrylovError::NoConvergence {
            m_max: opts.m_max,
            estimate,
        })
    }
}

fn should_check(k: usize, m_max: usize) -> bool {
    if k <= 8 || k == m_max {
        return true;
    }
    let step = 1usize << (usize::BITS - 1 - k.leading_zeros()).saturating_sub(2);
    k % step == 0
}

fn probe_subset(horizons: &[f64]) -> Vec<f64> {
    let n = horizons.len();
    if n <= PROBE_HORIZONS {
        return horizons.to_vec();
    }
    let mut idx: Vec<usize> = (1..PROBE_HORIZONS)
        .map(|q| q * n / PROBE_HORIZONS - 1)
        .collect();
    idx.push(n - 1);
    idx.dedup();
    idx.into_iter().map(|i| horizons[i]).collect()
}

struct Process<'a> {
    op: &'a dyn KrylovOperator,
    opts: &'a ArnoldiOptions,
    variant: KrylovVariant,
    beta: f64,
    /// Orthonormal vectors `v_0 … v_j` (one more than completed columns unless broken down).
    v: Vec<Vec<f64>>,
    /// Column `j` of the Hessenberg matrix, length `j + 2`.
    h: Vec<Vec<f64>>,
    breakdown: bool,
    /// Per column: (‖relation residual‖², ‖M v_j‖²) when verifying.
    relation: Vec<(f64, f64)>,
    next_norms: BTreeMap<usize, Option<f64>>,
    static_scales: BTreeMap<usize, Option<f64>>,
    generators: BTreeMap<usize, Option<DenseMatrix>>,
}

impl Process<'_> {
    fn columns(&self) -> usize {
        self.h.len()
    }

    fn extend(&mut self) -> Result<(), KrylovError> {
        let j = self.h.len();
        let w0 = self.op.apply(&self.v[j])?;
        let w0_norm = vecops::norm2(&w0);
        if !w0_norm.is_finite() {
            return Err(NumError::NonFinite.into());
        }
        let mut w = w0.clone();
        let mut col = vec![0.0; j + 2];
        // Modified Gram–Schmidt, repeated once when cancellation is severe.
        let mut before = w0_norm;
        for pass in 0..2 {
            for (i, vi) in self.v.iter().enumerate() {
                let c = vecops::dot(&w, vi);
                col[i] += c;
                vecops::axpy(-c, vi, &mut w);
            }
            let after = vecops::norm2(&w);
            if pass == 0 && after > before / std::f64::consts::SQRT_2 {
                break;
            }
            before = after;
        }
        let hn = vecops::norm2(&w);
        col[j + 1] = hn;
        let broke = hn <= BREAKDOWN_TOL * w0_norm;
        if self.opts.verify {
            // Relation residual of this column: M v_j − Σ h_ij v_i − h_{j+1,j} v_{j+1}.
            let mut r = w0;
            for (i, vi) in self.v.iter().enumerate() {
                vecops::axpy(-col[i], vi, &mut r);
            }
            if !broke {
                vecops::axpy(-1.0, &w, &mut r);
            }
            self.relation
                .push((vecops::norm2(&r).powi(2), w0_norm * w0_norm));
        }
        if broke {
            col[j + 1] = 0.0;
            self.breakdown = true;
        } else {
            vecops::scale(1.0 / hn, &mut w);
            self.v.push(w);
        }
        self.h.push(col);
        Ok(())
    }

    fn hraw(&self, k: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(k, k);
        for j in 0..k {
            for i in 0..(j + 2).min(k) {
                m[(i, j)] = self.h[j][i];
            }
        }
        m
    }

    /// Effective generator of dimension `k`, or `None` if it cannot be formed.
    /// Written columns never change, so it is computed once per dimension.
    fn generator(&mut self, k: usize) -> Option<DenseMatrix> {
        if let Some(g) = self.generators.get(&k) {
            return g.clone();
        }
        let g = effective_generator_of(self.variant, &self.hraw(k)).ok();
        self.generators.insert(k, g.clone());
        g
    }

    fn h_next(&self, k: usize) -> f64 {
        self.h[k - 1][k]
    }

    /// Generator-dependent norm of `v_k` for the residual estimator.
    fn next_norm(&mut self, k: usize) -> Result<Option<f64>, KrylovError> {
        if self.opts.estimator != ErrorEstimator::Residual
            || self.variant == KrylovVariant::Standard
            || k >= self.v.len()
        {
            return Ok(None);
        }
        if let Some(n) = self.next_norms.get(&k) {
            return Ok(*n);
        }
        let vk = &self.v[k];
        let norm = match self.op.apply_generator(vk) {
            None => None,
            Some(av) => {
                let av = av?;
                Some(match self.variant {
                    KrylovVariant::Rational { gamma } => {
                        let z: Vec<f64> = vk.iter().zip(&av).map(|(v, a)| v / gamma - a).collect();
                        vecops::norm2(&z)
                    }
                    _ => vecops::norm2(&av),
                })
            }
        };
        self.next_norms.insert(k, norm);
        Ok(norm)
    }

    /// Rational variant with the empirical estimator: `‖(G⁻¹C + γI)·v_k‖/γ`,
    /// when the operator can apply `G⁻¹C`.
    fn static_scale(&mut self, k: usize) -> Result<Option<f64>, KrylovError> {
        let KrylovVariant::Rational { gamma } = self.variant else {
            return Ok(None);
        };
        if self.opts.estimator == ErrorEstimator::Residual || k >= self.v.len() {
            return Ok(None);
        }
        if let Some(s) = self.static_scales.get(&k) {
            return Ok(*s);
        }
        let vk = &self.v[k];
        let scale = match self.op.apply_static(vk) {
            None => None,
            Some(z) => {
                let mut z = z?;
                vecops::axpy(gamma, vk, &mut z);
                Some(vecops::norm2(&z) / gamma)
            }
        };
        self.static_scales.insert(k, scale);
        Ok(scale)
    }

    /// Whether every horizon's estimate at dimension `k` is within `tol`.
    /// Longest horizons, the likeliest to fail, are tried first.
    fn passes(&mut self, k: usize, horizons: &[f64], tol: Tolerance) -> Result<bool, KrylovError> {
        if self.breakdown && k == self.columns() {
            return Ok(true);
        }
        let hraw = self.hraw(k);
        let Some(heff) = self.generator(k) else {
            return Ok(false);
        };
        let next_norm = self.next_norm(k)?;
        let ahead = self.ahead(k)?;
        let rational = matches!(self.variant, KrylovVariant::Rational { .. });
        let deferred = rational && self.opts.estimator == ErrorEstimator::Empirical && self.op.has_static();
        let mut input = EstimateInput {
            variant: self.variant,
            estimator: self.opts.estimator,
            hraw: &hraw,
            heff: &heff,
            h_next: self.h_next(k),
            beta: self.beta,
            next_norm,
            // With a deferred scale, any value selects the scaled residual.
            static_scale: if deferred { Some(1.0) } else { self.static_scale(k)? },
            ahead: ahead.as_ref(),
            cap: self.opts.dense_cap,
        };
        let ok = |e: f64, h: f64| e < tol.at(h) || e == 0.0;
        if !deferred {
            return Ok(horizons.iter().rev().all(|&h| ok(input.at(h), h)));
        }
        // The scale is at least about one, so the unscaled value is a cheap
        // first test; the G solve is spent only if it passes.
        let mut parts = Vec::with_capacity(horizons.len());
        for &h in horizons.iter().rev() {
            let p = input.parts(h);
            if !ok(input.combine(p, 1.0), h) {
                return Ok(false);
            }
            parts.push((h, p));
        }
        match self.static_scale(k)? {
            Some(scale) => Ok(parts.iter().all(|&(h, p)| ok(input.combine(p, scale), h))),
            None => {
                input.static_scale = None;
                Ok(horizons.iter().rev().all(|&h| ok(input.at(h), h)))
            }
        }
    }

    fn uses_lookahead(&self) -> bool {
        self.variant != KrylovVariant::Standard && self.opts.estimator == ErrorEstimator::Empirical
    }

    /// Effective generator of dimension `k + 1` for the look-ahead
    /// comparison, extending the process by one column if needed.
    fn ahead(&mut self, k: usize) -> Result<Option<DenseMatrix>, KrylovError> {
        if !self.uses_lookahead() || (self.breakdown && k == self.columns()) {
            return Ok(None);
        }
        if self.columns() == k {
            if k >= self.op.dim() {
                return Ok(None);
            }
            self.extend()?;
        }
        Ok(self.generator(k + 1))
    }

    /// The basis of dimension `k` and the number of operator applications spent.
    fn finish(mut self, k: usize) -> Result<(KrylovBasis, usize), KrylovError> {
        let n = self.op.dim();
        let hraw = self.hraw(k);
        let heff = effective_generator_of(self.variant, &hraw)?;
        let broke = self.breakdown && k == self.columns();
        let next_norm = if broke { None } else { self.next_norm(k)? };
        let static_scale = if broke { None } else { self.static_scale(k)? };
        let ahead = if broke || !self.uses_lookahead() || self.columns() <= k {
            None
        } else {
            effective_generator_of(self.variant, &self.hraw(k + 1)).ok()
        };
        let applications = self.h.len()
            + self.next_norms.values().filter(|n| n.is_some()).count()
            + self.static_scales.values().filter(|n| n.is_some()).count();
        let estimator = match (self.opts.estimator, next_norm) {
            (ErrorEstimator::Residual, Some(_)) => ErrorEstimator::Residual,
            (ErrorEstimator::Residual, None) if self.variant == KrylovVariant::Standard => {
                ErrorEstimator::Residual
            }
            _ => ErrorEstimator::Empirical,
        };
        let check = if self.opts.verify {
            let (r2, m2) = self.relation[..k]
                .iter()
                .fold((0.0, 0.0), |(a, b), &(r, m)| (a + r, b + m));
            let mut vs: Vec<&Vec<f64>> = self.v[..k].iter().collect();
            if !broke {
                vs.push(&self.v[k]);
            }
            let mut orth = 0.0f64;
            for (i, a) in vs.iter().enumerate() {
                for (j, b) in vs.iter().enumerate().skip(i) {
                    let target = if i == j { 1.0 } else { 0.0 };
                    orth = orth.max((vecops::dot(a, b) - target).abs());
                }
            }
            Some(BasisCheck {
                orthogonality: orth,
                relation: if m2 > 0.0 { (r2 / m2).sqrt() } else { 0.0 },
            })
        } else {
            None
        };
        let h_next = if broke { 0.0 } else { self.h_next(k) };
        let v_next = if broke { None } else { Some(self.v[k].clone()) };
        self.v.truncate(k);
        Ok((
            KrylovBasis {
                dim: n,
                v: self.v,
                hraw: Some(hraw),
                heff: Some(heff),
                h_next,
                v_next,
                beta: self.beta,
                variant: self.variant,
                anchor: 0.0,
                breakdown: broke,
                estimator,
                next_norm,
                static_scale,
                ahead,
                dense_cap: self.opts.dense_cap,
                check,
            },
            applications,
        ))
    }
}

/// Grow a basis for `v` until the estimate at every horizon is below `eps`,
/// the subspace becomes invariant, or `m_max` is reached. The returned
/// dimension is the smallest one found to pass; dimensions are probed on a
/// coarsening schedule and then bisected.
pub fn build_basis(
    op: &dyn KrylovOperator,
    v: &[f64],
    opts: &ArnoldiOptions,
    horizons: &[f64],
    tol: Tolerance,
) -> Result<BasisOutcome, KrylovError> {
    let variant = op.variant();
    variant.validate()?;
    let n = op.dim();
    if v.len() != n {
        return Err(NumError::DimensionMismatch {
            expected: n,
            actual: v.len(),
        }
        .into());
    }
    if opts.m_max == 0 {
        return Err(KrylovError::BasisDegenerate(
            "m_max must be at least 1".into(),
        ));
    }
    let beta = vecops::norm2(v);
    if !beta.is_finite() {
        return Err(NumError::NonFinite.into());
    }
    if beta == 0.0 {
        let basis = KrylovBasis {
            dim: n,
            v: Vec::new(),
            hraw: None,
            heff: None,
            h_next: 0.0,
            v_next: None,
            beta: 0.0,
            variant,
            anchor: 0.0,
            breakdown: true,
            estimator: opts.estimator,
            next_norm: None,
            static_scale: None,
            ahead: None,
            dense_cap: opts.dense_cap,
            check: opts.verify.then(BasisCheck::default),
        };
        return Ok(BasisOutcome {
            basis,
            estimates: vec![0.0; horizons.len()],
            converged: true,
            applications: 0,
        });
    }
    let m_max = opts.m_max.min(n);
    let mut p = Process {
        op,
        opts,
        variant,
        beta,
        v: vec![v.iter().map(|x| x / beta).collect()],
        h: Vec::new(),
        breakdown: false,
        relation: Vec::new(),
        next_norms: BTreeMap::new(),
        static_scales: BTreeMap::new(),
        generators: BTreeMap::new(),
    };
    let probes = probe_subset(horizons);
    let mut last_fail = 0usize;
    let mut chosen = None;
    let mut k = 0;
    while k < m_max {
        if p.columns() == k {
            if p.breakdown {
                break;
            }
            p.extend()?;
        }
        k += 1;
        let exact = p.breakdown && k == p.columns();
        if !(exact || should_check(k, m_max)) {
            continue;
        }
        if !p.passes(k, &probes, tol)? {
            last_fail = k;
            continue;
        }
        // Smallest passing dimension in (last_fail, k].
        let (mut lo, mut hi) = (last_fail, k);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if p.passes(mid, &probes, tol)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if p.passes(hi, horizons, tol)? {
            chosen = Some(hi);
            break;
        }
        if hi != k && p.passes(k, horizons, tol)? {
            chosen = Some(k);
            break;
        }
        last_fail = k;
    }
    let (k, converged) = match chosen {
        Some(k) => (k, true),
        None => {
            let k = p.columns().min(m_max);
            (k, p.breakdown && k == p.columns())
        }
    };
    let (basis, applications) = p.finish(k)?;
    let estimates = horizons.iter().map(|&h| basis.posterior_error(h)).collect();
    Ok(BasisOutcome {
        basis,
        estimates,
        converged,
        applications,
    })
}

/// Independent check of a basis against its operator (costs `m` applications).
pub fn verify_basis(
    op: &dyn KrylovOperator,
    basis: &KrylovBasis,
) -> Result<BasisCheck, KrylovError> {
    let Some(hraw) = &basis.hraw else {
        return Ok(BasisCheck::default());
    };
    let m = basis.m();
    let mut r2 = 0.0;
    let mut m2 = 0.0;
    for j in 0..m {
        let mut r = op.apply(&basis.v[j])?;
        m2 += vecops::norm2(&r).powi(2);
        for i in 0..m {
            let hij = hraw[(i, j)];
            if hij != 0.0 {
                vecops::axpy(-hij, &basis.v[i], &mut r);
            }
        }
        if j == m - 1 {
            if let Some(vn) = &basis.v_next {
                vecops::axpy(-basis.h_next, vn, &mut r);
            }
        }
        r2 += vecops::norm2(&r).powi(2);
    }
    let mut vs: Vec<&Vec<f64>> = basis.v.iter().collect();
    if let Some(vn) = &basis.v_next {
        vs.push(vn);
    }
    let mut orth = 0.0f64;
    for (i, a) in vs.iter().enumerate() {
        for (j, b) in vs.iter().enumerate().skip(i) {
            let target = if i == j { 1.0 } else { 0.0 };
            orth = orth.max((vecops::dot(a, b) - target).abs());
        }
    }
    Ok(BasisCheck {
        orthogonality: orth,
        relation: if m2 > 0.0 { (r2 / m2).sqrt() } else { 0.0 },
    })
}
