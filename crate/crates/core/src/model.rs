//! Price models driven by the latent chain.

use crate::error::{invalid, Result};
use crate::filtering::{FilterStepper, JumpFilter, OuFilter};
use crate::latent_chain::LatentChainSpec;

/// Unaffected midprice dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// `dF = κ(Θ - F)dt + σdW`.
    Ou {
        chain: LatentChainSpec,
        kappa: f64,
        sigma: f64,
    },
    /// `dF = b(dN⁺ - dN⁻)` with intensities `μ + κ(Θ - F)_±`; the jump size
    /// `b` lives in the cost parameters.
    Jump {
        chain: LatentChainSpec,
        mu: f64,
        kappa: f64,
    },
}

impl ModelSpec {
    pub fn chain(&self) -> &LatentChainSpec {
        match self {
            ModelSpec::Ou { chain, .. } | ModelSpec::Jump { chain, .. } => chain,
        }
    }

    pub fn kappa(&self) -> f64 {
        match self {
            ModelSpec::Ou { kappa, .. } | ModelSpec::Jump { kappa, .. } => *kappa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Ou { kappa, sigma, .. } => {
                if !(*kappa >= 0.0 && kappa.is_finite()) {
                    return invalid("kappa must be non-negative");
                }
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return invalid("sigma must be positive");
                }
            }
            ModelSpec::Jump { mu, kappa, .. } => {
                if !(*mu > 0.0 && mu.is_finite()) {
                    return invalid("mu must be positive");
                }
                if !(*kappa >= 0.0 && kappa.is_finite()) {
                    return invalid("kappa must be non-negative");
                }
            }
        }
        Ok(())
    }

    /// Fresh filter started from the chain prior.
    pub fn filter(&self) -> Result<Box<dyn FilterStepper>> {
        Ok(match self {
            ModelSpec::Ou {
                chain,
                kappa,
                sigma,
            } => Box::new(OuFilter::new(chain.clone(), *kappa, *sigma)?),
            ModelSpec::Jump { chain, mu, kappa } => {
                Box::new(JumpFilter::new(chain.clone(), *mu, *kappa)?)
            }
        })
    }
}
