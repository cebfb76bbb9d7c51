//! Integrals of (matrix) exponentials used by the closed-form controls.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::latent_chain::matrix_exponential;

/// `ψ₂(τ, y) = ∫₀^τ e^{sy} ds = (e^{τy} - 1)/y`, equal to `τ` at `y = 0`.
pub fn psi2_scalar(tau: f64, y: f64) -> f64 {
    if y == 0.0 {
        tau
    } else {
        (tau * y).exp_m1() / y
    }
}

/// `ψ₃(τ, y) = ∫₀^τ (τ - s) e^{sy} ds`.
pub fn psi3_scalar(tau: f64, y: f64) -> f64 {
    let x = tau * y;
    if x.abs() < 0.1 {
        // τ² Σ xⁿ/(n+2)!
        let mut term = 0.5;
        let mut sum = 0.5;
        for n in 1..40 {
            term *= x / (n as f64 + 2.0);
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        tau * tau * sum
    } else {
        (x.exp_m1() - x) / (y * y)
    }
}

/// `ψ₁(τ, y) = ∫₀^τ e^{sy} sinh(γ(τ-s))/sinh(γτ) ds`, written as
/// `e^{τy}(ψ₂(τ, γ - y) - ψ₂(τ, -γ - y)) / (e^{τγ} - e^{-τγ})`.
/// The `γ = 0` limit is `ψ₃(τ, y)/τ`.
pub fn psi1_scalar(tau: f64, y: f64, gamma: f64) -> f64 {
    if tau == 0.0 {
        return 0.0;
    }
    if gamma == 0.0 {
        return psi3_scalar(tau, y) / tau;
    }
    (tau * y).exp() * (psi2_scalar(tau, gamma - y) - psi2_scalar(tau, -gamma - y))
        / (2.0 * (tau * gamma).sinh())
}

/// `Ψ₂(τ, Y) = ∫₀^τ e^{sY} ds`, the top-right block of `exp(τ[[Y, I], [0, 0]])`.
pub fn psi2_matrix(tau: f64, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let j = y.nrows();
    let mut m = DMatrix::zeros(2 * j, 2 * j);
    m.view_mut((0, 0), (j, j)).copy_from(y);
    m.view_mut((0, j), (j, j)).fill_diagonal(1.0);
    let e = matrix_exponential(&m, tau)?;
    Ok(e.view((0, j), (j, j)).into_owned())
}

/// `Ψ₃(τ, Y) = ∫₀^τ (τ - s) e^{sY} ds`.
pub fn psi3_matrix(tau: f64, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let j = y.nrows();
    let mut m = DMatrix::zeros(3 * j, 3 * j);
    m.view_mut((0, 0), (j, j)).copy_from(y);
    m.view_mut((0, j), (j, j)).fill_diagonal(1.0);
    m.view_mut((j, 2 * j), (j, j)).fill_diagonal(1.0);
    let e = matrix_exponential(&m, tau)?;
    Ok(e.view((0, 2 * j), (j, j)).into_owned())
}

/// Matrix analogue of [`psi1_scalar`].
pub fn psi1_matrix(tau: f64, y: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let j = y.nrows();
    if tau == 0.0 {
        return Ok(DMatrix::zeros(j, j));
    }
    if gamma == 0.0 {
        return Ok(psi3_matrix(tau, y)? / tau);
    }
    let id = DMatrix::<f64>::identity(j, j);
    let a = psi2_matrix(tau, &(&id * gamma - y))?;
    let b = psi2_matrix(tau, &(-&id * gamma - y))?;
    let e = matrix_exponential(y, tau)?;
    Ok(e * (a - b) / (2.0 * (tau * gamma).sinh()))
}
