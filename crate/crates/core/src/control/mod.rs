//! Optimal liquidation speeds under a latent alpha, with Almgren–Chriss and
//! TWAP baselines.
//!
//! The optimal speed has the feedback form `ν* = g(t)Q + h₁(t)/(2a)` where
//! `g = (2h₂ + β)/(2a)` and `h₁(t) = ∫_t^T w(t,u) E_t[drift_u] du`.

pub mod kernels;
mod value;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::latent_chain::validate_generator;

pub use kernels::{psi1_matrix, psi1_scalar, psi2_matrix, psi2_scalar, psi3_matrix, psi3_scalar};
pub use value::{h0_estimate, H0Estimate};

/// Terminal liquidation penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Finite(f64),
    /// Full liquidation is enforced at the horizon.
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// Temporary impact.
    pub a: f64,
    /// Jump size of the midprice.
    pub b: f64,
    /// Permanent impact.
    pub beta: f64,
    /// Running inventory penalty.
    pub phi: f64,
    pub alpha: Alpha,
    pub horizon: f64,
    /// Initial inventory 𝔑.
    pub n_init: f64,
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return invalid(format!(
                "temporary impact a must be positive, got {}",
                self.a
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return invalid("permanent impact beta must be non-negative");
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return invalid("running penalty phi must be non-negative");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return invalid("horizon must be positive");
        }
        if !self.b.is_finite() || !self.n_init.is_finite() {
            return invalid("jump size and initial inventory must be finite");
        }
        if let Alpha::Finite(alpha) = self.alpha {
            if !(alpha.is_finite() && alpha >= 0.0) {
                return invalid("terminal penalty alpha must be non-negative");
            }
            if alpha < 0.5 * self.beta {
                return invalid("terminal penalty must satisfy alpha >= beta/2");
            }
        }
        Ok(())
    }
}

/// Shape of the Riccati solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// `α - β/2 ≠ √(aφ)`, `γ > 0`: hyperbolic gain with constant `ζ`;
    /// `ζ - 1` is kept separately to avoid cancellation for large `α`.
    Hyperbolic { zeta: f64, zeta_m1: f64 },
    /// `α - β/2 = √(aφ)`: constant gain `-γ`.
    Exponential,
    /// `φ = 0`: gain `-1/(L + T - t)` with `L = a/(α - β/2)`.
    Linear { offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlConstants {
    pub gamma: f64,
    pub regime: Regime,
}

impl ControlConstants {
    pub fn new(params: &CostParams) -> Result<Self> {
        params.validate()?;
        let gamma = (params.phi / params.a).sqrt();
        let regime = match params.alpha {
            Alpha::Infinite if gamma == 0.0 => Regime::Linear { offset: 0.0 },
            Alpha::Infinite => Regime::Hyperbolic {
                zeta: 1.0,
                zeta_m1: 0.0,
            },
            Alpha::Finite(alpha) => {
                let big_a = alpha - 0.5 * params.beta;
                if gamma == 0.0 {
                    Regime::Linear {
                        offset: if big_a == 0.0 {
                            f64::INFINITY
                        } else {
                            params.a / big_a
                        },
                    }
                } else if (big_a - params.a * gamma).abs() < 1e-12 * alpha.max(1.0) {
                    Regime::Exponential
                } else {
                    let ag = params.a * gamma;
                    Regime::Hyperbolic {
                        zeta: (big_a + ag) / (big_a - ag),
                        zeta_m1: 2.0 * ag / (big_a - ag),
                    }
                }
            }
        };
        Ok(Self { gamma, regime })
    }

    /// `ζ - e^{-2γτ}` in the hyperbolic regime.
    fn denominator(&self, tau: f64) -> f64 {
        match self.regime {
            Regime::Hyperbolic { zeta_m1, .. } => zeta_m1 - (-2.0 * self.gamma * tau).exp_m1(),
            _ => 1.0,
        }
    }

    /// Inventory feedback gain `g(τ) = (2h₂ + β)/(2a)` at time-to-go `τ`.
    fn gain(&self, tau: f64) -> Option<f64> {
        match self.regime {
            Regime::Hyperbolic { zeta, .. } => {
                let den = self.denominator(tau);
                if den == 0.0 {
                    None
                } else {
                    Some(-self.gamma * (zeta + (-2.0 * self.gamma * tau).exp()) / den)
                }
            }
            Regime::Exponential => Some(-self.gamma),
            Regime::Linear { offset } => {
                if offset.is_infinite() {
                    Some(0.0)
                } else if offset + tau == 0.0 {
                    None
                } else {
                    Some(-1.0 / (offset + tau))
                }
            }
        }
    }

    /// `w(s)` for `s = u - t ∈ [0, τ]`.
    fn weight(&self, tau: f64, s: f64) -> Option<f64> {
        match self.regime {
            Regime::Hyperbolic { zeta, .. } => {
                let e = (-2.0 * self.gamma * tau).exp();
                let den = self.denominator(tau);
                if den == 0.0 {
                    return None;
                }
                Some((zeta * (-self.gamma * s).exp() - e * (self.gamma * s).exp()) / den)
            }
            Regime::Exponential => Some((-self.gamma * s).exp()),
            Regime::Linear { offset } => {
                if offset.is_infinite() {
                    Some(1.0)
                } else if offset + tau == 0.0 {
                    None
                } else {
                    Some((offset + tau - s) / (offset + tau))
                }
            }
        }
    }

    /// `∫₀^τ e^{sy} w(s) ds`.
    pub fn kernel_integral(&self, tau: f64, y: f64) -> f64 {
        if tau == 0.0 {
            return 0.0;
        }
        match self.regime {
            Regime::Hyperbolic { zeta, .. } => {
                let e = (-2.0 * self.gamma * tau).exp();
                (zeta * psi2_scalar(tau, y - self.gamma) - e * psi2_scalar(tau, y + self.gamma))
                    / self.denominator(tau)
            }
            Regime::Exponential => psi2_scalar(tau, y - self.gamma),
            Regime::Linear { offset } => {
                if offset.is_infinite() {
                    psi2_scalar(tau, y)
                } else {
                    (offset * psi2_scalar(tau, y) + psi3_scalar(tau, y)) / (offset + tau)
                }
            }
        }
    }

    /// `∫₀^τ e^{sY} w(s) ds`.
    pub fn kernel_integral_matrix(&self, tau: f64, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let j = y.nrows();
        if tau == 0.0 {
            return Ok(DMatrix::zeros(j, j));
        }
        let id = DMatrix::<f64>::identity(j, j);
        Ok(match self.regime {
            Regime::Hyperbolic { zeta, .. } => {
                let e = (-2.0 * self.gamma * tau).exp();
                (psi2_matrix(tau, &(y - &id * self.gamma))? * zeta
                    - psi2_matrix(tau, &(y + &id * self.gamma))? * e)
                    / self.denominator(tau)
            }
            Regime::Exponential => psi2_matrix(tau, &(y - &id * self.gamma))?,
            Regime::Linear { offset } => {
                if offset.is_infinite() {
                    psi2_matrix(tau, y)?
                } else {
                    (psi2_matrix(tau, y)? * offset + psi3_matrix(tau, y)?) / (offset + tau)
                }
            }
        })
    }
}

fn time_to_go(t: f64, params: &CostParams) -> Result<f64> {
    if !(t >= 0.0 && t <= params.horizon) {
        return Err(Error::TimeOutOfRange {
            t,
            horizon: params.horizon,
        });
    }
    Ok(params.horizon - t)
}

/// Solution of `h₂' = φ - (β + 2h₂)²/(4a)`, `h₂(T) = -α`.
pub fn h2(t: f64, params: &CostParams) -> Result<f64> {
    let consts = ControlConstants::new(params)?;
    let tau = time_to_go(t, params)?;
    let g = consts.gain(tau).ok_or(Error::SingularHorizon {
        t,
        horizon: params.horizon,
    })?;
    Ok(params.a * g - 0.5 * params.beta)
}

/// `∂ₜh₂ - φ + (β + 2h₂)²/(4a)` with a central difference of half-width `step`.
pub fn riccati_residual(t: f64, params: &CostParams, step: f64) -> Result<f64> {
    let d = (h2(t + step, params)? - h2(t - step, params)?) / (2.0 * step);
    let h = h2(t, params)?;
    Ok(d - params.phi + (params.beta + 2.0 * h).powi(2) / (4.0 * params.a))
}

/// Discount applied at time `u` to drift expected at time `u` when trading at `t`.
pub fn h1_weight(t: f64, u: f64, params: &CostParams) -> Result<f64> {
    let consts = ControlConstants::new(params)?;
    let tau = time_to_go(t, params)?;
    time_to_go(u, params)?;
    if u < t {
        return invalid("h1 weight needs t <= u");
    }
    consts.weight(tau, u - t).ok_or(Error::SingularHorizon {
        t,
        horizon: params.horizon,
    })
}

fn check_posterior(pi: &[f64], theta: &[f64]) -> Result<()> {
    if pi.len() != theta.len() || pi.is_empty() {
        return invalid("posterior and state values must have the same non-zero length");
    }
    Ok(())
}

/// `h₁` of the OU model with a constant latent level:
/// `κ(Σπ_jθ_j - F) ∫₀^τ e^{-κs} w(s) ds`.
pub fn h1_ou(
    t: f64,
    f: f64,
    pi: &[f64],
    theta: &[f64],
    kappa: f64,
    params: &CostParams,
) -> Result<f64> {
    check_posterior(pi, theta)?;
    if !(kappa >= 0.0) {
        return invalid("kappa must be non-negative");
    }
    let consts = ControlConstants::new(params)?;
    let tau = time_to_go(t, params)?;
    let mean: f64 = pi.iter().zip(theta).map(|(p, th)| p * th).sum();
    if kappa == 0.0 {
        return Ok(0.0);
    }
    Ok(kappa * (mean - f) * consts.kernel_integral(tau, -kappa))
}

/// Time-dependent pieces of the pure-jump `h₁`, so that
/// `h₁ = κ*(-F·scalar + π·vector)` with `κ* = bκ`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpH1Terms {
    pub scalar: f64,
    pub vector: Vec<f64>,
}

/// `I(τ, -κ*)` and `I_M(τ, C)θ - κ* C*⁻¹(I_M(τ, C) - I(τ, -κ*)I)θ`, where
/// `C* = C + κ*I` and `I`, `I_M` are the scalar and matrix kernel integrals.
pub fn h1_jump_terms(
    tau: f64,
    kappa_star: f64,
    theta: &[f64],
    generator: &DMatrix<f64>,
    consts: &ControlConstants,
) -> Result<JumpH1Terms> {
    let j = theta.len();
    if generator.nrows() != j {
        return invalid("generator does not match the state values");
    }
    let scalar = consts.kernel_integral(tau, -kappa_star);
    if kappa_star == 0.0 {
        return Ok(JumpH1Terms {
            scalar,
            vector: vec![0.0; j],
        });
    }
    let im = consts.kernel_integral_matrix(tau, generator)?;
    let th = nalgebra::DVector::from_column_slice(theta);
    let c_star = generator + DMatrix::<f64>::identity(j, j) * kappa_star;
    let lu = c_star.lu();
    let inner = &im * &th - &th * scalar;
    let solved = lu
        .solve(&inner)
        .ok_or_else(|| Error::Numerical("C + κ*I is singular".into()))?;
    let vector = (&im * &th - solved * kappa_star).iter().cloned().collect();
    Ok(JumpH1Terms { scalar, vector })
}

/// `h₁` of the mean-reverting pure-jump model, whose expected price drift is
/// `κ*(E[Θ_u] - E[F_u])` with `κ* = bκ`.
#[allow(clippy::too_many_arguments)]
pub fn h1_jump(
    t: f64,
    f: f64,
    pi: &[f64],
    theta: &[f64],
    kappa: f64,
    generator: &DMatrix<f64>,
    params: &CostParams,
) -> Result<f64> {
    check_posterior(pi, theta)?;
    validate_generator(generator)?;
    if !(kappa >= 0.0) {
        return invalid("kappa must be non-negative");
    }
    let kappa_star = params.b * kappa;
    if kappa_star == 0.0 {
        return Ok(0.0);
    }
    let consts = ControlConstants::new(params)?;
    let tau = time_to_go(t, params)?;
    let terms = h1_jump_terms(tau, kappa_star, theta, generator, &consts)?;
    let dot: f64 = pi.iter().zip(&terms.vector).map(|(p, v)| p * v).sum();
    Ok(kappa_star * (-f * terms.scalar + dot))
}

/// `ν* = (2h₂ + β)Q/(2a) + h₁/(2a)`.
pub fn optimal_speed(t: f64, q: f64, h1_value: f64, params: &CostParams) -> Result<f64> {
    let consts = ControlConstants::new(params)?;
    speed_with(&consts, t, q, h1_value, params)
}

pub(crate) fn speed_with(
    consts: &ControlConstants,
    t: f64,
    q: f64,
    h1_value: f64,
    params: &CostParams,
) -> Result<f64> {
    let tau = time_to_go(t, params)?;
    let g = consts.gain(tau).ok_or(Error::SingularHorizon {
        t,
        horizon: params.horizon,
    })?;
    Ok(g * q + h1_value / (2.0 * params.a))
}

/// Almgren–Chriss liquidation speed (no alpha term).
pub fn ac_speed(t: f64, q: f64, params: &CostParams) -> Result<f64> {
    optimal_speed(t, q, 0.0, params)
}

/// `-Q/(T - t)`.
pub fn twap_speed(t: f64, q: f64, horizon: f64) -> Result<f64> {
    if !(t >= 0.0 && t < horizon) {
        return Err(Error::SingularHorizon { t, horizon });
    }
    Ok(-q / (horizon - t))
}
