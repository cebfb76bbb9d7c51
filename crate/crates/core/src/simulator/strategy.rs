use nalgebra::DMatrix;

use crate::control::{
    h1_jump_terms, speed_with, twap_speed, ControlConstants, CostParams, JumpH1Terms,
};
use crate::error::{invalid, Result};
use crate::model::ModelSpec;

use super::TraderState;

/// Trading speed as a function of the information available at `t_k`.
pub trait Strategy: Sync {
    fn speed(&self, k: usize, state: &TraderState, pi: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoTrading;

impl Strategy for NoTrading {
    fn speed(&self, _k: usize, _state: &TraderState, _pi: &[f64]) -> Result<f64> {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Twap {
    pub horizon: f64,
}

impl Strategy for Twap {
    fn speed(&self, _k: usize, state: &TraderState, _pi: &[f64]) -> Result<f64> {
        twap_speed(state.t, state.q, self.horizon)
    }
}

/// Optimal speed with the alpha term switched off.
#[derive(Debug, Clone, Copy)]
pub struct AlmgrenChriss {
    consts: ControlConstants,
    params: CostParams,
}

impl AlmgrenChriss {
    pub fn new(params: &CostParams) -> Result<Self> {
        Ok(Self {
            consts: ControlConstants::new(params)?,
            params: *params,
        })
    }
}

impl Strategy for AlmgrenChriss {
    fn speed(&self, _k: usize, state: &TraderState, _pi: &[f64]) -> Result<f64> {
        speed_with(&self.consts, state.t, state.q, 0.0, &self.params)
    }
}

#[derive(Debug, Clone)]
enum AlphaTable {
    /// `h₁ = κ(π·θ - F)·kernel[k]`.
    Ou {
        kappa: f64,
        theta: Vec<f64>,
        kernel: Vec<f64>,
    },
    /// `h₁ = κ*(-F·scalar + π·vector)`.
    Jump {
        kappa_star: f64,
        terms: Vec<JumpH1Terms>,
    },
}

/// Feedback control with the filtered alpha term, tabulated on a time grid.
#[derive(Debug, Clone)]
pub struct OptimalStrategy {
    consts: ControlConstants,
    params: CostParams,
    table: AlphaTable,
}

impl OptimalStrategy {
    pub fn new(model: &ModelSpec, params: &CostParams, times: &[f64]) -> Result<Self> {
        model.validate()?;
        let consts = ControlConstants::new(params)?;
        let taus = times.iter().map(|t| (params.horizon - t).max(0.0));
        let table = match model {
            ModelSpec::Ou { chain, kappa, .. } => {
                if !chain.is_frozen() {
                    return invalid("the OU control assumes a constant latent level");
                }
                AlphaTable::Ou {
                    kappa: *kappa,
                    theta: chain.theta().to_vec(),
                    kernel: taus
                        .map(|tau| consts.kernel_integral(tau, -kappa))
                        .collect(),
                }
            }
            ModelSpec::Jump { chain, kappa, .. } => {
                let kappa_star = params.b * kappa;
                let generator: &DMatrix<f64> = chain.generator();
                let terms = taus
                    .map(|tau| h1_jump_terms(tau, kappa_star, chain.theta(), generator, &consts))
                    .collect::<Result<Vec<_>>>()?;
                AlphaTable::Jump { kappa_star, terms }
            }
        };
        Ok(Self {
            consts,
            params: *params,
            table,
        })
    }

    /// Tabulated `h₁` at grid index `k`.
    pub fn h1(&self, k: usize, f: f64, pi: &[f64]) -> Result<f64> {
        let dot = |v: &[f64]| -> Result<f64> {
            if v.len() != pi.len() {
                return invalid("posterior length does not match the model");
            }
            Ok(v.iter().zip(pi).map(|(a, b)| a * b).sum())
        };
        match &self.table {
            AlphaTable::Ou {
                kappa,
                theta,
                kernel,
            } => {
                let k_val = *kernel
                    .get(k)
                    .ok_or_else(|| crate::Error::InvalidArgument("step outside table".into()))?;
                Ok(kappa * (dot(theta)? - f) * k_val)
            }
            AlphaTable::Jump { kappa_star, terms } => {
                let t = terms
                    .get(k)
                    .ok_or_else(|| crate::Error::InvalidArgument("step outside table".into()))?;
                if *kappa_star == 0.0 {
                    return Ok(0.0);
                }
                Ok(kappa_star * (-f * t.scalar + dot(&t.vector)?))
            }
        }
    }
}

impl Strategy for OptimalStrategy {
    fn speed(&self, k: usize, state: &TraderState, pi: &[f64]) -> Result<f64> {
        let h1 = self.h1(k, state.f, pi)?;
        speed_with(&self.consts, state.t, state.q, h1, &self.params)
    }
}
