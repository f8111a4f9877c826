//! Dense complex linear-algebra helpers shared by the simulation modules.
//!
//! nalgebra's generic complex product is several times slower than its
//! real `f64` kernel, so the hot products split operands into real and
//! imaginary parts and run three real multiplications (Gauss' trick).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, TpeError};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;

fn split(m: &CMat) -> (RMat, RMat) {
    (m.map(|z| z.re), m.map(|z| z.im))
}

fn join(re: RMat, im: &RMat) -> CMat {
    re.zip_map(im, Complex64::new)
}

/// `a * b` for complex matrices.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "matmul dimension mismatch");
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    gauss_product(&ar, &ai, &br, &bi)
}

/// `aᴴ * b` for complex matrices.
pub fn adjoint_mul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.nrows(), b.nrows(), "adjoint_mul dimension mismatch");
    let ar = a.map(|z| z.re).transpose();
    let ai = a.map(|z| -z.im).transpose();
    let (br, bi) = split(b);
    gauss_product(&ar, &ai, &br, &bi)
}

fn gauss_product(ar: &RMat, ai: &RMat, br: &RMat, bi: &RMat) -> CMat {
    // (ar + i ai)(br + i bi): re = t1 - t2, im = t3 - t1 - t2
    let t1 = ar * br;
    let t2 = ai * bi;
    let t3 = (ar + ai) * (br + bi);
    let im = &t3 - &t1 - &t2;
    join(t1 - t2, &im)
}

/// Scales column `j` of `m` by `s[j]`.
pub fn scale_columns(m: &mut CMat, s: &[f64]) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= Complex64::new(s[j], 0.0);
    }
}

/// Squared Frobenius norm, i.e. `tr(m mᴴ)`.
pub fn frob2(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Hermitian eigendecomposition `m = V diag(λ) Vᴴ`; the input is symmetrized first.
pub fn hermitian_eigen(m: &CMat) -> (DVector<f64>, CMat) {
    let sym = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// `V diag(d) Vᴴ`.
pub fn reconstruct(vectors: &CMat, d: &[f64]) -> CMat {
    let mut scaled = vectors.clone();
    scale_columns(&mut scaled, d);
    matmul(&scaled, &vectors.adjoint())
}

/// Relative Hermitian defect `‖m − mᴴ‖ / max(‖m‖, 1)`.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let d = m - m.adjoint();
    frob2(&d).sqrt() / frob2(m).sqrt().max(1.0)
}

/// Symmetric eigendecomposition of a real matrix, symmetrized first.
pub fn symmetric_eigen(m: &RMat) -> (DVector<f64>, RMat) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Inverse square root of a real symmetric matrix whose eigenvalues below
/// `rel_floor · λ_max` are clamped up to that floor.
///
/// Fails when `λ_max ≤ 0` or when the most negative eigenvalue exceeds
/// `neg_tol · λ_max` in magnitude.
pub fn clamped_inv_sqrt(m: &RMat, rel_floor: f64, neg_tol: f64) -> Result<RMat> {
    let (vals, vecs) = symmetric_eigen(m);
    let max = vals.max();
    if !(max > 0.0) || !max.is_finite() {
        return Err(TpeError::Numeric(format!("matrix is not positive definite (largest eigenvalue {max:e})")));
    }
    let min = vals.min();
    if min < -neg_tol * max {
        return Err(TpeError::Numeric(format!(
            "matrix is indefinite beyond clamp threshold (eigenvalues {min:e} .. {max:e})"
        )));
    }
    let floor = rel_floor * max;
    let d = vals.map(|v| 1.0 / v.max(floor).sqrt());
    Ok(&vecs * RMat::from_diagonal(&d) * vecs.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(r: usize, c: usize, seed: u64) -> CMat {
        let mut s = seed;
        CMat::from_fn(r, c, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            Complex64::new(a, b)
        })
    }

    #[test]
    fn split_products_match_generic() {
        let a = sample(7, 5, 1);
        let b = sample(5, 3, 2);
        let c = sample(7, 3, 3);
        assert!((matmul(&a, &b) - &a * &b).norm() < 1e-13);
        assert!((adjoint_mul(&a, &c) - a.adjoint() * &c).norm() < 1e-13);
    }

    #[test]
    fn eigen_reconstruction() {
        let a = sample(6, 6, 4);
        let h = &a * a.adjoint();
        let (vals, vecs) = hermitian_eigen(&h);
        let back = reconstruct(&vecs, vals.as_slice());
        assert!((back - &h).norm() < 1e-12);
    }

    #[test]
    fn inv_sqrt_whitens() {
        let m = RMat::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let w = clamped_inv_sqrt(&m, 1e-12, 1e-8).unwrap();
        let id = &w * &m * &w;
        assert!((id - RMat::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn inv_sqrt_rejects_indefinite() {
        let m = RMat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(clamped_inv_sqrt(&m, 1e-12, 1e-8).is_err());
    }
}
