//! Matrix exponential by scaling and squaring with a degree-13 Padé approximant.

use super::{DenseMatrix, NumError};

/// Largest matrix accepted by [`dense_expm`].
pub const DEFAULT_EXPM_CAP: usize = 128;

const THETA_13: f64 = 5.371920351148152;

const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// `e^H` for a square `H` no larger than [`DEFAULT_EXPM_CAP`].
pub fn dense_expm(h: &DenseMatrix) -> Result<DenseMatrix, NumError> {
    dense_expm_capped(h, DEFAULT_EXPM_CAP)
}

pub fn dense_expm_capped(h: &DenseMatrix, cap: usize) -> Result<DenseMatrix, NumError> {
    if !h.is_square() {
        return Err(NumError::NotSquare {
            nrows: h.nrows(),
            ncols: h.ncols(),
        });
    }
    let n = h.nrows();
    if n > cap {
        return Err(NumError::DimensionCap { dim: n, cap });
    }
    if !h.is_finite() {
        return Err(NumError::NonFinite);
    }
    let norm = h.norm1();
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let a = if s > 0 {
        h.scaled(0.5f64.powi(s))
    } else {
        h.clone()
    };

    let b = &PADE_13;
    let id = DenseMatrix::identity(n);
    let a2 = a.matmul(&a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);

    let inner_u = a6
        .scaled(b[13])
        .add_scaled(b[11], &a4)
        .add_scaled(b[9], &a2);
    let u = a.matmul(
        &a6.matmul(&inner_u)
            .add_scaled(b[7], &a6)
            .add_scaled(b[5], &a4)
            .add_scaled(b[3], &a2)
            .add_scaled(b[1], &id),
    );
    let inner_v = a6
        .scaled(b[12])
        .add_scaled(b[10], &a4)
        .add_scaled(b[8], &a2);
    let v = a6
        .matmul(&inner_v)
        .add_scaled(b[6], &a6)
        .add_scaled(b[4], &a4)
        .add_scaled(b[2], &a2)
        .add_scaled(b[0], &id);

    let p = v.add_scaled(1.0, &u);
    let q = v.add_scaled(-1.0, &u);
    let mut r = q.solve_matrix(&p)?;
    for _ in 0..s {
        r = r.matmul(&r);
    }
    Ok(r)
}

/// First columns of `e^M` and `φ₁(M) = (e^M − I) M⁻¹`, from one exponential of
/// the bordered matrix `[[M, e₁], [0, 0]]`.
pub fn expm_and_phi1_first_column(
    m: &DenseMatrix,
    cap: usize,
) -> Result<(Vec<f64>, Vec<f64>), NumError> {
    let k = m.nrows();
    let mut aug = DenseMatrix::zeros(k + 1, k + 1);
    for i in 0..k {
        for j in 0..k {
            aug[(i, j)] = m[(i, j)];
        }
    }
    aug[(0, k)] = 1.0;
    let e = dense_expm_capped(&aug, cap + 1)?;
    let exp_col = (0..k).map(|i| e[(i, 0)]).collect();
    let phi_col = (0..k).map(|i| e[(i, k)]).collect();
    Ok((exp_col, phi_col))
}
