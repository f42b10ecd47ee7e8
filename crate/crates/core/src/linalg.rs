//! Dense symmetric positive-definite helpers shared by the engines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Diagonal jitter added once when a factorization fails.
pub const JITTER: f64 = 1e-10;

/// Cholesky factorization with a single jittered retry.
pub fn cholesky_with_jitter(
    precision: DMatrix<f64>,
    stage: &'static str,
) -> Result<Cholesky<f64, Dyn>> {
    if precision.iter().any(|v| !v.is_finite()) {
        return Err(not_pd(&precision, stage));
    }
    match Cholesky::new(precision.clone()) {
        Some(c) => Ok(c),
        None => {
            let mut jittered = precision;
            for i in 0..jittered.nrows() {
                jittered[(i, i)] += JITTER;
            }
            let diag = (jittered.nrows() > 0).then(|| not_pd(&jittered, stage));
            Cholesky::new(jittered).ok_or_else(|| diag.expect("empty matrices always factor"))
        }
    }
}

fn not_pd(m: &DMatrix<f64>, stage: &'static str) -> Error {
    let d = m.diagonal();
    Error::NotPositiveDefinite {
        stage,
        min_diag: d.min(),
        max_diag: d.max(),
    }
}

/// Draw from `N(Q⁻¹ h, Q⁻¹)` given the precision `Q` and the linear term `h`.
pub fn sample_canonical<R: Rng + ?Sized>(
    precision: DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
    stage: &'static str,
) -> Result<DVector<f64>> {
    let dim = linear.len();
    if dim == 0 {
        return Ok(DVector::zeros(0));
    }
    let chol = cholesky_with_jitter(precision, stage)?;
    let mean = chol.solve(linear);
    let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let l = chol.l();
    let dev = l
        .tr_solve_lower_triangular(&z)
        .expect("cholesky factor has a nonzero diagonal");
    Ok(mean + dev)
}

/// `Aᵀ diag(d) A`.
pub fn weighted_gram(a: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (mut row, &w) in scaled.row_iter_mut().zip(d.iter()) {
        row *= w;
    }
    a.tr_mul(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn jitter_rescues_semidefinite() {
        // rank-one positive semidefinite matrix
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let m = &v * v.transpose();
        assert!(Cholesky::new(m.clone()).is_none());
        assert!(cholesky_with_jitter(m, "test").is_ok());
    }

    #[test]
    fn indefinite_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = cholesky_with_jitter(m, "test").unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { min_diag, .. } if min_diag < 0.0));
        assert!(err.is_numeric());
    }

    #[test]
    fn canonical_scalar_moments() {
        let mut rng = RngStream::new(1, 1);
        let q = DMatrix::from_element(1, 1, 4.0);
        let h = DVector::from_element(1, 2.0);
        let n = 40_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_canonical(q.clone(), &h, &mut rng, "t").unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 4.0 * (0.25f64 / n as f64).sqrt());
        assert!((var - 0.25).abs() < 0.01);
    }

    #[test]
    fn weighted_gram_matches_naive() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0]);
        let d = DVector::from_vec(vec![2.0, 1.0, 0.5]);
        let naive = a.transpose() * DMatrix::from_diagonal(&d) * &a;
        assert!((weighted_gram(&a, &d) - naive).abs().max() < 1e-14);
    }
}
