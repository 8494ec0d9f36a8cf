//! Operators whose Krylov subspaces approximate `e^{hA}v` for `A = −C⁻¹G`.
//!
//! `A` itself is never formed. Each application costs one pair of
//! triangular substitutions against cached factors.

use crate::numkit::{LuFactors, NumError, SparseMatrix};

use super::{KrylovError, KrylovVariant};

/// Linear map driving an Arnoldi process.
pub trait KrylovOperator: Sync {
    fn dim(&self) -> usize;

    fn variant(&self) -> KrylovVariant;

    /// `M·v` for the variant's operator `M` (`A`, `A⁻¹` or `(I − γA)⁻¹`).
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, NumError>;

    /// `A·v` for the underlying generator, when factors of `C` are at hand.
    fn apply_generator(&self, _v: &[f64]) -> Option<Result<Vec<f64>, NumError>> {
        None
    }

    /// `G⁻¹C·v`, the quasi-static response to a `C·v` excitation, when
    /// factors of `G` are at hand.
    fn apply_static(&self, _v: &[f64]) -> Option<Result<Vec<f64>, NumError>> {
        None
    }

    fn has_static(&self) -> bool {
        false
    }
}

/// `M·v = s · X₁⁻¹ (X₂ v)` with a sign `s` per variant:
///
/// | variant  | X₁      | X₂ | s  |
/// |----------|---------|----|----|
/// | standard | C       | G  | −1 |
/// | inverted | G       | C  | −1 |
/// | rational | C + γG  | C  | +1 |
pub struct SystemOperator<'a> {
    variant: KrylovVariant,
    x1: &'a LuFactors,
    x2: &'a SparseMatrix,
    sign: f64,
    generator: Option<(&'a LuFactors, &'a SparseMatrix)>,
    static_response: Option<(&'a LuFactors, &'a SparseMatrix)>,
}

impl<'a> SystemOperator<'a> {
    pub fn standard(c_factors: &'a LuFactors, g: &'a SparseMatrix) -> Self {
        Self {
            variant: KrylovVariant::Standard,
            x1: c_factors,
            x2: g,
            sign: -1.0,
            generator: Some((c_factors, g)),
            static_response: None,
        }
    }

    pub fn inverted(g_factors: &'a LuFactors, c: &'a SparseMatrix) -> Self {
        Self {
            variant: KrylovVariant::Inverted,
            x1: g_factors,
            x2: c,
            sign: -1.0,
            generator: None,
            static_response: Some((g_factors, c)),
        }
    }

    pub fn rational(
        gamma: f64,
        shifted_factors: &'a LuFactors,
        c: &'a SparseMatrix,
    ) -> Result<Self, KrylovError> {
        let variant = KrylovVariant::Rational { gamma };
        variant.validate()?;
        Ok(Self {
            variant,
            x1: shifted_factors,
            x2: c,
            sign: 1.0,
            generator: None,
            static_response: None,
        })
    }

    /// Attach factors of `C` and the matrix `G` so that `A·v` is available for
    /// the residual-based estimators.
    pub fn with_generator(mut self, c_factors: &'a LuFactors, g: &'a SparseMatrix) -> Self {
        self.generator = Some((c_factors, g));
        self
    }

    /// Attach factors of `G` (with `C`) so that `G⁻¹C·v` is available to the
    /// rational variant's estimator.
    pub fn with_static_response(mut self, g_factors: &'a LuFactors, c: &'a SparseMatrix) -> Self {
        self.static_response = Some((g_factors, c));
        self
    }
}

impl KrylovOperator for SystemOperator<'_> {
    fn dim(&self) -> usize {
        self.x2.nrows()
    }

    fn variant(&self) -> KrylovVariant {
        self.variant
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, NumError> {
        let mut y = self.x1.solve(&self.x2.mul_vec(v))?;
        if self.sign != 1.0 {
            y.iter_mut().for_each(|e| *e *= self.sign);
        }
        Ok(y)
    }

    fn apply_generator(&self, v: &[f64]) -> Option<Result<Vec<f64>, NumError>> {
        let (c, g) = self.generator?;
        Some(c.solve(&g.mul_vec(v)).map(|mut y| {
            y.iter_mut().for_each(|e| *e = -*e);
            y
        }))
    }

    fn apply_static(&self, v: &[f64]) -> Option<Result<Vec<f64>, NumError>> {
        let (g, c) = self.static_response?;
        Some(g.solve(&c.mul_vec(v)))
    }

    fn has_static(&self) -> bool {
        self.static_response.is_some()
    }
}

/// Operator of the `(n+2)`-dimensional system that carries a ramp input
/// inside the state:
///
/// ```text
/// C x' = −G x + τ·b₁·p + b₀·q,   p' = q/τ,   q' = 0,
/// ```
///
/// with `b₀ = B·u(a)` and `b₁ = B·u'` on a segment starting at `a`. Starting
/// from `[x(a); 0; 1]`, the first `n` entries of the solution at `a + s` are
/// the forced response. `τ` only rescales the auxiliary states.
pub struct AugmentedOperator<'a> {
    variant: KrylovVariant,
    factors: &'a LuFactors,
    c: &'a SparseMatrix,
    g: &'a SparseMatrix,
    b0: Vec<f64>,
    b1: Vec<f64>,
    tau: f64,
}

impl<'a> AugmentedOperator<'a> {
    /// Standard variant; `factors` are those of `C`.
    pub fn standard(
        c_factors: &'a LuFactors,
        c: &'a SparseMatrix,
        g: &'a SparseMatrix,
        b0: Vec<f64>,
        b1: Vec<f64>,
        tau: f64,
    ) -> Self {
        Self {
            variant: KrylovVariant::Standard,
            factors: c_factors,
            c,
            g,
            b0,
            b1,
            tau,
        }
    }

    /// Rational variant; `factors` are those of `C + γG`.
    pub fn rational(
        gamma: f64,
        shifted_factors: &'a LuFactors,
        c: &'a SparseMatrix,
        g: &'a SparseMatrix,
        b0: Vec<f64>,
        b1: Vec<f64>,
        tau: f64,
    ) -> Result<Self, KrylovError> {
        let variant = KrylovVariant::Rational { gamma };
        variant.validate()?;
        Ok(Self {
            variant,
            factors: shifted_factors,
            c,
            g,
            b0,
            b1,
            tau,
        })
    }
}

impl KrylovOperator for AugmentedOperator<'_> {
    fn dim(&self) -> usize {
        self.c.nrows() + 2
    }

    fn variant(&self) -> KrylovVariant {
        self.variant
    }

    fn apply(&self, z: &[f64]) -> Result<Vec<f64>, NumError> {
        let n = self.c.nrows();
        if z.len() != n + 2 {
            return Err(NumError::DimensionMismatch {
                expected: n + 2,
                actual: z.len(),
            });
        }
        let (x, p, q) = (&z[..n], z[n], z[n + 1]);
        match self.variant {
            KrylovVariant::Standard => {
                let gx = self.g.mul_vec(x);
                let rhs: Vec<f64> = (0..n)
                    .map(|i| -gx[i] + self.tau * self.b1[i] * p + self.b0[i] * q)
                    .collect();
                let mut out = self.factors.solve(&rhs)?;
                out.push(q / self.tau);
                out.push(0.0);
                Ok(out)
            }
            KrylovVariant::Rational { gamma } => {
                // Block back-substitution with (C̃ + γG̃) y = C̃ z.
                let yq = q;
                let yp = p + gamma / self.tau * yq;
                let cx = self.c.mul_vec(x);
                let rhs: Vec<f64> = (0..n)
                    .map(|i| cx[i] + gamma * self.tau * self.b1[i] * yp + gamma * self.b0[i] * yq)
                    .collect();
                let mut out = self.factors.solve(&rhs)?;
                out.push(yp);
                out.push(yq);
                Ok(out)
            }
            KrylovVariant::Inverted => unreachable!("not constructible"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::lu_factorize;

    #[test]
    fn system_operators_agree_with_dense_forms() {
        // A = −C⁻¹G with C = diag(1, 2), G = [[3, -1], [-1, 2]]
        let c = SparseMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        let g = SparseMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 3.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0)],
        )
        .unwrap();
        let cf = lu_factorize(&c).unwrap();
        let gf = lu_factorize(&g).unwrap();
        let v = [1.0, -2.0];
        // A v = −[3+2, (−1−4)/2] = [−5, 2.5]
        let av = SystemOperator::standard(&cf, &g).apply(&v).unwrap();
        assert!((av[0] + 5.0).abs() < 1e-14 && (av[1] - 2.5).abs() < 1e-14);
        // A⁻¹(A v) = v
        let back = SystemOperator::inverted(&gf, &c).apply(&av).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-14 && (back[1] + 2.0).abs() < 1e-14);
        // (I − γA)⁻¹ (v − γ A v) = v
        let gamma = 0.3;
        let shifted = c.linear_combination(1.0, &g, gamma).unwrap();
        let sf = lu_factorize(&shifted).unwrap();
        let w: Vec<f64> = v.iter().zip(&av).map(|(a, b)| a - gamma * b).collect();
        let r = SystemOperator::rational(gamma, &sf, &c)
            .unwrap()
            .apply(&w)
            .unwrap();
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] + 2.0).abs() < 1e-14);
        assert!(SystemOperator::rational(0.0, &sf, &c).is_err());
    }

    #[test]
    fn augmented_rational_inverts_shifted_augmented_system() {
        let c = SparseMatrix::from_diagonal(&[2.0]).unwrap();
        let g = SparseMatrix::from_diagonal(&[1.0]).unwrap();
        let gamma = 0.5;
        let tau = 3.0;
        let (b0, b1) = (vec![0.7], vec![-0.2]);
        let cf = lu_factorize(&c).unwrap();
        let sf = lu_factorize(&c.linear_combination(1.0, &g, gamma).unwrap()).unwrap();
        let std_op = AugmentedOperator::standard(&cf, &c, &g, b0.clone(), b1.clone(), tau);
        let rat_op = AugmentedOperator::rational(gamma, &sf, &c, &g, b0, b1, tau).unwrap();
        // (I − γÃ) applied to the rational result gives back the input.
        let z = [0.4, -1.3, 0.9];
        let y = rat_op.apply(&z).unwrap();
        let ay = std_op.apply(&y).unwrap();
        for i in 0..3 {
            assert!((y[i] - gamma * ay[i] - z[i]).abs() < 1e-14, "component {i}");
        }
    }
}
