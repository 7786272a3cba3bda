//! Dense complex linear algebra on small matrices, backed by nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, ZdxError};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// All eigenvalues of a square complex matrix via the Schur form.
pub fn eigenvalues(m: &CMat) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    if n == 1 {
        return Ok(vec![m[(0, 0)]]);
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), 1e-15, 10_000)
        .ok_or_else(|| ZdxError::Numerical("Schur iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Unit vector `v` minimising `|m v|`, with the attained residual.
pub fn null_vector(m: &CMat) -> (CVec, f64) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let (idx, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let v = v_t.row(idx).transpose().map(|z| z.conj());
    (v, smin)
}

/// Right and left eigenvectors for eigenvalue `lambda`: `m r = λ r`, `lᵀ m = λ lᵀ`.
pub fn eigenvectors(m: &CMat, lambda: Complex64) -> (CVec, CVec) {
    let n = m.nrows();
    let shift = CMat::identity(n, n) * lambda;
    let (r, _) = null_vector(&(m - &shift));
    let (l, _) = null_vector(&(m.transpose() - &shift));
    (r, l)
}

/// Rank-one spectral projector `r lᵀ / (lᵀ r)` of a simple eigenvalue.
pub fn rank_one_projector(m: &CMat, lambda: Complex64) -> Result<CMat> {
    let (r, l) = eigenvectors(m, lambda);
    let denom = l.transpose() * &r;
    let denom = denom[(0, 0)];
    if denom.norm() < 1e-12 {
        return Err(ZdxError::Numerical(format!("eigenvalue {lambda} is not semisimple")));
    }
    Ok(&r * l.transpose() / denom)
}

pub fn solve(m: &CMat, b: &CVec) -> Result<CVec> {
    m.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| ZdxError::Numerical("singular linear system".into()))
}

pub fn solve_real(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    m.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| ZdxError::Numerical("singular linear system".into()))
}

/// Largest absolute entry.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn eigenvalues_of_a_rotation_and_a_stochastic_matrix() {
        let rot = CMat::from_row_slice(2, 2, &[c(0.0), c(-1.0), c(1.0), c(0.0)]);
        let mut ev = eigenvalues(&rot).unwrap();
        ev.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        assert!((ev[0] - Complex64::new(0.0, -1.0)).norm() < 1e-12);
        assert!((ev[1] - Complex64::new(0.0, 1.0)).norm() < 1e-12);

        let p = CMat::from_row_slice(
            3,
            3,
            &[c(0.2), c(0.5), c(0.3), c(0.3), c(0.2), c(0.5), c(0.5), c(0.3), c(0.2)],
        );
        let ev = eigenvalues(&p).unwrap();
        assert!(ev.iter().any(|z| (z - c(1.0)).norm() < 1e-12));
        // circulant: the other two are conjugate with modulus sqrt(0.07)
        for z in ev.iter().filter(|z| (*z - c(1.0)).norm() > 1e-6) {
            assert!((z.norm() - 0.07f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn projector_is_idempotent() {
        let p = CMat::from_row_slice(2, 2, &[c(0.9), c(0.1), c(0.4), c(0.6)]);
        let pi = rank_one_projector(&p, c(1.0)).unwrap();
        assert!(max_abs(&(&pi * &pi - &pi)) < 1e-12);
        // rows of Π_0 are the stationary law (0.8, 0.2)
        assert!((pi[(0, 0)] - c(0.8)).norm() < 1e-12);
        assert!((pi[(1, 1)] - c(0.2)).norm() < 1e-12);
    }
}
