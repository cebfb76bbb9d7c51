use rayon::prelude::*;

use crate::control::CostParams;
use crate::error::{invalid, Result};
use crate::latent_chain::LatentChainSpec;
use crate::model::ModelSpec;
use crate::simulator::{
    path_rng, run_strategy, simulate_market, time_grid, JumpScheme, NoTrading, OptimalStrategy,
};

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H0Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// `h₀(t) = E[∫_t^T h₁(u)² du]/(4a)`, starting from price `f` and posterior
/// `pi` at time `t`. The integral uses left Riemann sums on a grid of step
/// `dt`, and `h₁` is driven by the filtered posterior along each path.
#[allow(clippy::too_many_arguments)]
pub fn h0_estimate(
    t: f64,
    f: f64,
    pi: &[f64],
    model: &ModelSpec,
    params: &CostParams,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<H0Estimate> {
    if n_paths == 0 {
        return invalid("need at least one path");
    }
    if !(t >= 0.0 && t < params.horizon) {
        return invalid("h0 needs 0 <= t < T");
    }
    let chain = model.chain();
    let restarted = LatentChainSpec::new(
        chain.theta().to_vec(),
        chain.generator().clone(),
        pi.to_vec(),
    )?;
    let model = match model {
        ModelSpec::Ou { kappa, sigma, .. } => ModelSpec::Ou {
            chain: restarted,
            kappa: *kappa,
            sigma: *sigma,
        },
        ModelSpec::Jump { mu, kappa, .. } => ModelSpec::Jump {
            chain: restarted,
            mu: *mu,
            kappa: *kappa,
        },
    };
    let mut shifted = *params;
    shifted.horizon = params.horizon - t;
    let times = time_grid(shifted.horizon, dt)?;
    let strategy = OptimalStrategy::new(&model, &shifted, &times)?;
    let samples = (0..n_paths)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = path_rng(seed, i as u64);
            let market = simulate_market(
                &model,
                params.b,
                None,
                f,
                shifted.horizon,
                dt,
                JumpScheme::Exact,
                &mut rng,
            )?;
            let mut filter = model.filter()?;
            // The alpha term does not depend on inventory, so any strategy gives the same posteriors.
            let rec = run_strategy(&market, &NoTrading, &shifted, filter.as_mut())?;
            let mut acc = 0.0;
            for k in 0..market.n_steps() {
                let h1 = strategy.h1(k, rec.f[k], &rec.pi[k])?;
                acc += h1 * h1 * (market.times[k + 1] - market.times[k]);
            }
            Ok(acc / (4.0 * params.a))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(H0Estimate {
        mean,
        std_error: (var / n).sqrt(),
        n_paths,
    })
}
