//! Next-generation propagation `r = diag(β)(diag(γ) − P)⁻¹ x`, evaluated by
//! a linear solve instead of forming the matrix.

use crate::error::{Error, Result};
use crate::linalg::{Lu, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct NgmSolve<T: Scalar = f64> {
    lu: Lu<T>,
    /// `u = (diag(γ) − P)⁻¹ x`.
    pub u: Vec<T>,
    pub output: Vec<T>,
}

impl<T: Scalar> NgmSolve<T> {
    /// Given `∂L/∂r`, returns `(∂L/∂β, ∂L/∂γ)`.
    pub fn backward(&self, g_r: &[T], beta: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let g_beta: Vec<T> = g_r.iter().zip(&self.u).map(|(&g, &u)| g * u).collect();
        let g_u: Vec<T> = g_r.iter().zip(beta).map(|(&g, &b)| g * b).collect();
        // ∂u/∂γ_k = −M⁻¹ e_k u_k, so ∂L/∂γ_k = −(M⁻ᵀ g_u)_k u_k.
        let v = self.lu.solve_transpose(&g_u)?;
        let g_gamma = v.iter().zip(&self.u).map(|(&v, &u)| -v * u).collect();
        Ok((g_beta, g_gamma))
    }
}

/// Solves `(diag(γ) − P) u = x` and returns `β ⊙ u` with the factorization.
///
/// Rejects inputs where `diag(γ) − P` is not strictly diagonally dominant.
pub fn ngm_solve<T: Scalar>(beta: &[T], gamma: &[T], propagation: &Matrix<T>, x: &[T]) -> Result<NgmSolve<T>> {
    let n = x.len();
    for len in [beta.len(), gamma.len(), propagation.rows(), propagation.cols()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, actual: len });
        }
    }
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        let mut off = T::zero();
        for j in 0..n {
            m[(i, j)] = -propagation[(i, j)];
            if i != j {
                off += propagation[(i, j)].abs();
            }
        }
        m[(i, i)] += gamma[i];
        if m[(i, i)] <= off {
            return Err(Error::GammaTooSmall { node: i });
        }
    }
    let lu = Lu::factor(&m)?;
    let u = lu.solve(x)?;
    let output = u.iter().zip(beta).map(|(&u, &b)| b * u).collect();
    Ok(NgmSolve { lu, u, output })
}

/// `K x` with `K = diag(β)(diag(γ) − P)⁻¹`.
pub fn ngm_propagate<T: Scalar>(beta: &[T], gamma: &[T], propagation: &Matrix<T>, x: &[T]) -> Result<Vec<T>> {
    Ok(ngm_solve(beta, gamma, propagation, x)?.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{row_normalize, AdjacencyMatrix, ZeroRowPolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_closed_form() {
        let r = ngm_propagate(&[0.5], &[0.25], &Matrix::zeros(1, 1), &[3.0]).unwrap();
        assert_eq!(r, vec![6.0]);
    }

    #[test]
    fn decoupled_nodes_are_elementwise() {
        let beta = [0.3f64, 1.2, 0.7];
        let gamma = [0.4, 2.0, 0.9];
        let x = [5.0, -1.0, 2.5];
        let r = ngm_propagate(&beta, &gamma, &Matrix::zeros(3, 3), &x).unwrap();
        for k in 0..3 {
            assert!((r[k] - beta[k] / gamma[k] * x[k]).abs() < 1e-10);
        }
        assert_eq!(ngm_propagate(&beta, &gamma, &Matrix::zeros(3, 3), &[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn small_gamma_rejected() {
        let p = crate::graph::MixingOperator::<f64>::identity(2);
        let err = ngm_propagate(&[1.0, 1.0], &[2.0, 0.5], p.matrix(), &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::GammaTooSmall { node: 1 }));
    }

    #[test]
    fn linear_in_x_and_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 5;
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    w[(i, j)] = rng.random_range(0.0..1.0);
                }
            }
        }
        let p = row_normalize(&AdjacencyMatrix::new(w).unwrap(), ZeroRowPolicy::SelfLoop);
        let beta: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let gamma: Vec<f64> = (0..n).map(|_| 1.05 + rng.random_range(0.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let r = ngm_propagate(&beta, &gamma, p.matrix(), &x).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| 3.5 * v).collect();
        let r2 = ngm_propagate(&beta, &gamma, p.matrix(), &scaled).unwrap();
        for k in 0..n {
            assert!((r2[k] - 3.5 * r[k]).abs() < 1e-10 * r2[k].abs().max(1.0));
        }
        // Neumann series oracle: (Γ − P)⁻¹ = Σ (Γ⁻¹P)^k Γ⁻¹.
        let mut term: Vec<f64> = x.iter().zip(&gamma).map(|(x, g)| x / g).collect();
        let mut u = term.clone();
        for _ in 0..400 {
            term = p.mix(&term).unwrap().iter().zip(&gamma).map(|(t, g)| t / g).collect();
            for k in 0..n {
                u[k] += term[k];
            }
        }
        for k in 0..n {
            assert!((beta[k] * u[k] - r[k]).abs() < 1e-10 * r[k].abs().max(1.0));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = crate::linalg::Matrix::from_rows(&[vec![0.2, 0.8, 0.0], vec![0.5, 0.0, 0.5], vec![0.0, 0.3, 0.7]]).unwrap();
        let beta = vec![0.4, 0.9, 0.2];
        let gamma = vec![1.3, 1.6, 1.1];
        let x = [2.0, 5.0, 1.0];
        let w = [0.5, -1.0, 2.0];
        let loss = |b: &[f64], g: &[f64]| -> f64 {
            ngm_propagate(b, g, &p, &x).unwrap().iter().zip(w).map(|(r, w)| w * r * r).sum()
        };
        let sol = ngm_solve(&beta, &gamma, &p, &x).unwrap();
        let g_r: Vec<f64> = sol.output.iter().zip(w).map(|(r, w)| 2.0 * w * r).collect();
        let (gb, gg) = sol.backward(&g_r, &beta).unwrap();
        let eps = 1e-6;
        for k in 0..3 {
            let mut bp = beta.clone();
            bp[k] += eps;
            let mut bm = beta.clone();
            bm[k] -= eps;
            assert!(((loss(&bp, &gamma) - loss(&bm, &gamma)) / (2.0 * eps) - gb[k]).abs() < 1e-6);
            let mut gp = gamma.clone();
            gp[k] += eps;
            let mut gm = gamma.clone();
            gm[k] -= eps;
            assert!(((loss(&beta, &gp) - loss(&beta, &gm)) / (2.0 * eps) - gg[k]).abs() < 1e-6);
        }
    }
}
