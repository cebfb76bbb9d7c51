//! Market path simulation and strategy evaluation with price impact.

mod strategy;
mod study;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::control::{Alpha, CostParams};
use crate::error::{invalid, Error, Result};
use crate::filtering::{jump_intensities, FilterStepper, ObservationStep};
use crate::latent_chain::{sample_chain_path, ChainPath};
use crate::model::ModelSpec;

pub use strategy::{AlmgrenChriss, NoTrading, OptimalStrategy, Strategy, Twap};
pub use study::{
    monte_carlo_study, path_rng, Curve, Histogram, LatentScenario, OccupancyGrid, StudyConfig,
    StudySummary,
};

/// Number of uniform steps of size `dt` covering `[0, horizon]`.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return invalid("horizon and dt must be positive");
    }
    let k = (horizon / dt).round();
    if k < 1.0 || ((k * dt - horizon).abs() > 1e-9 * horizon) {
        return invalid(format!("horizon {horizon} is not a multiple of dt {dt}"));
    }
    Ok(k as usize)
}

pub fn time_grid(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    let k = step_count(horizon, dt)?;
    Ok((0..=k).map(|i| horizon * i as f64 / k as f64).collect())
}

/// Euler–Maruyama path of `dF = κ(θ - F)dt + σdW` on the uniform grid.
pub fn simulate_ou_path<R: Rng + ?Sized>(
    theta: f64,
    kappa: f64,
    sigma: f64,
    f0: f64,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return invalid("sigma must be non-negative");
    }
    let k = step_count(horizon, dt)?;
    let h = horizon / k as f64;
    let sd = sigma * h.sqrt();
    let mut out = Vec::with_capacity(k + 1);
    let mut f = f0;
    out.push(f);
    for _ in 0..k {
        let z: f64 = StandardNormal.sample(rng);
        f += kappa * (theta - f) * h + sd * z;
        out.push(f);
    }
    Ok(out)
}

/// How order arrivals are drawn within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JumpScheme {
    /// Event-by-event simulation; intensities are refreshed after every jump
    /// of the price or of the latent chain.
    #[default]
    Exact,
    /// At most one up and one down jump per step, with probabilities `λ±dt`
    /// frozen at the start of the step.
    Bernoulli,
}

/// Sampled pure-jump price path.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    pub prices: Vec<f64>,
    pub n_plus: Vec<u32>,
    pub n_minus: Vec<u32>,
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_jump_path<R: Rng + ?Sized>(
    latent: &ChainPath,
    theta: &[f64],
    mu: f64,
    kappa: f64,
    b: f64,
    f0: f64,
    dt: f64,
    scheme: JumpScheme,
    rng: &mut R,
) -> Result<JumpPath> {
    if !(mu > 0.0) || !(kappa >= 0.0) {
        return invalid("jump model requires mu > 0 and kappa >= 0");
    }
    if latent.states().iter().any(|&s| s >= theta.len()) {
        return invalid("latent path refers to an unknown state");
    }
    let horizon = latent.horizon();
    let times = time_grid(horizon, dt)?;
    let k = times.len() - 1;
    let mut ticks: i64 = 0;
    let price = |ticks: i64| f0 + b * ticks as f64;
    let mut prices = Vec::with_capacity(k + 1);
    let mut n_plus = Vec::with_capacity(k);
    let mut n_minus = Vec::with_capacity(k);
    prices.push(f0);
    for step in 0..k {
        let (mut up, mut down) = (0u32, 0u32);
        match scheme {
            JumpScheme::Bernoulli => {
                let th = theta[latent.state_at(times[step])?];
                let (lp, lm) = jump_intensities(mu, kappa, th, price(ticks));
                let h = times[step + 1] - times[step];
                for lam in [lp, lm] {
                    if lam * h >= 1.0 {
                        return Err(Error::StepSize(lam * h));
                    }
                }
                up = (rng.random::<f64>() < lp * h) as u32;
                down = (rng.random::<f64>() < lm * h) as u32;
            }
            JumpScheme::Exact => {
                let end = times[step + 1];
                let mut t = times[step];
                while t < end {
                    let th = theta[latent.state_at(t)?];
                    let boundary = latent.next_jump_after(t).map_or(end, |s| s.min(end));
                    let (lp, lm) =
                        jump_intensities(mu, kappa, th, price(ticks + up as i64 - down as i64));
                    let total = lp + lm;
                    let e: f64 = Exp1.sample(rng);
                    let wait = e / total;
                    if t + wait < boundary {
                        t += wait;
                        if rng.random::<f64>() * total < lp {
                            up += 1;
                        } else {
                            down += 1;
                        }
                    } else {
                        t = boundary;
                    }
                }
            }
        }
        ticks += up as i64 - down as i64;
        prices.push(price(ticks));
        n_plus.push(up);
        n_minus.push(down);
    }
    Ok(JumpPath {
        prices,
        n_plus,
        n_minus,
    })
}

/// Observable market data together with the latent path that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    pub times: Vec<f64>,
    pub prices: Vec<f64>,
    pub n_plus: Vec<u32>,
    pub n_minus: Vec<u32>,
    pub latent: ChainPath,
}

impl MarketPath {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn observation(&self, k: usize) -> ObservationStep {
        ObservationStep {
            dt: self.times[k + 1] - self.times[k],
            d_f: self.prices[k + 1] - self.prices[k],
            n_plus: self.n_plus[k],
            n_minus: self.n_minus[k],
        }
    }
}

/// Samples (or takes) a latent path and simulates the price on the grid.
#[allow(clippy::too_many_arguments)]
pub fn simulate_market<R: Rng + ?Sized>(
    model: &ModelSpec,
    b: f64,
    latent: Option<&ChainPath>,
    f0: f64,
    horizon: f64,
    dt: f64,
    scheme: JumpScheme,
    rng: &mut R,
) -> Result<MarketPath> {
    model.validate()?;
    let chain = model.chain();
    let latent = match latent {
        Some(p) => {
            if (p.horizon() - horizon).abs() > 1e-12 * horizon {
                return invalid("latent path horizon differs from the simulation horizon");
            }
            p.clone()
        }
        None => sample_chain_path(chain, horizon, rng)?,
    };
    let times = time_grid(horizon, dt)?;
    let k = times.len() - 1;
    let (prices, n_plus, n_minus) = match model {
        ModelSpec::Ou { kappa, sigma, .. } => {
            let h = horizon / k as f64;
            let sd = sigma * h.sqrt();
            let mut prices = Vec::with_capacity(k + 1);
            let mut f = f0;
            prices.push(f);
            for t in &times[..k] {
                let th = chain.theta()[latent.state_at(*t)?];
                let z: f64 = StandardNormal.sample(rng);
                f += kappa * (th - f) * h + sd * z;
                prices.push(f);
            }
            (prices, vec![0; k], vec![0; k])
        }
        ModelSpec::Jump { mu, kappa, .. } => {
            let p =
                simulate_jump_path(&latent, chain.theta(), *mu, *kappa, b, f0, dt, scheme, rng)?;
            (p.prices, p.n_plus, p.n_minus)
        }
    };
    Ok(MarketPath {
        times,
        prices,
        n_plus,
        n_minus,
        latent,
    })
}

/// Trader state between trades. The impacted midprice is `S = F + β(Q - 𝔑)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraderState {
    pub t: f64,
    pub f: f64,
    pub q: f64,
    pub x: f64,
    pub n_plus: u64,
    pub n_minus: u64,
}

impl TraderState {
    pub fn midprice(&self, beta: f64, n_init: f64) -> f64 {
        self.f + beta * (self.q - n_init)
    }
}

/// Full record of one strategy run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: Vec<f64>,
    pub f: Vec<f64>,
    pub s: Vec<f64>,
    pub q: Vec<f64>,
    pub x: Vec<f64>,
    /// Speed held over `[t_k, t_{k+1})`; one entry fewer than the state arrays.
    pub nu: Vec<f64>,
    /// Posterior available when trading at `t_k`.
    pub pi: Vec<Vec<f64>>,
    /// Cash after liquidating the remaining inventory at the horizon.
    pub terminal_value: f64,
    pub terminal_inventory: f64,
    pub liquidation_value_per_share: Option<f64>,
}

impl TrajectoryRecord {
    pub fn n_steps(&self) -> usize {
        self.nu.len()
    }
}

/// Runs `strategy` on a market path. Trading at `t_k` uses the posterior
/// built from observations up to `t_k`. With `α = ∞` the final step sells
/// the whole residual inventory, and anything left is booked at `S_T`.
pub fn run_strategy(
    market: &MarketPath,
    strategy: &dyn Strategy,
    params: &CostParams,
    filter: &mut dyn FilterStepper,
) -> Result<TrajectoryRecord> {
    params.validate()?;
    let k_steps = market.n_steps();
    let cap = k_steps + 1;
    let mut rec = TrajectoryRecord {
        t: Vec::with_capacity(cap),
        f: Vec::with_capacity(cap),
        s: Vec::with_capacity(cap),
        q: Vec::with_capacity(cap),
        x: Vec::with_capacity(cap),
        nu: Vec::with_capacity(k_steps),
        pi: Vec::with_capacity(cap),
        terminal_value: 0.0,
        terminal_inventory: 0.0,
        liquidation_value_per_share: None,
    };
    let mut state = TraderState {
        t: market.times[0],
        f: market.prices[0],
        q: params.n_init,
        x: 0.0,
        n_plus: 0,
        n_minus: 0,
    };
    let push = |rec: &mut TrajectoryRecord, st: &TraderState, pi: &[f64]| {
        rec.t.push(st.t);
        rec.f.push(st.f);
        rec.s.push(st.midprice(params.beta, params.n_init));
        rec.q.push(st.q);
        rec.x.push(st.x);
        rec.pi.push(pi.to_vec());
    };
    push(&mut rec, &state, filter.posterior());
    for k in 0..k_steps {
        let obs = market.observation(k);
        let nu = if params.alpha == Alpha::Infinite && k + 1 == k_steps {
            -state.q / obs.dt
        } else {
            strategy.speed(k, &state, filter.posterior())?
        };
        let s = state.midprice(params.beta, params.n_init);
        state.x -= nu * (s + params.a * nu) * obs.dt;
        state.q += nu * obs.dt;
        state.t = market.times[k + 1];
        state.f = market.prices[k + 1];
        state.n_plus += obs.n_plus as u64;
        state.n_minus += obs.n_minus as u64;
        if !(nu.is_finite() && state.x.is_finite() && state.q.is_finite()) {
            return Err(Error::SimulationDiverged(k));
        }
        filter.observe(market.prices[k], &obs)?;
        rec.nu.push(nu);
        push(&mut rec, &state, filter.posterior());
    }
    let s_t = state.midprice(params.beta, params.n_init);
    let penalty = match params.alpha {
        Alpha::Finite(alpha) => alpha * state.q,
        Alpha::Infinite => 0.0,
    };
    rec.terminal_value = state.x + state.q * (s_t - penalty);
    rec.terminal_inventory = state.q;
    rec.liquidation_value_per_share =
        (params.n_init != 0.0).then(|| rec.terminal_value / params.n_init);
    Ok(rec)
}

/// `(X* - X^AC)/X^AC × 10⁴`, in basis points.
pub fn excess_return(star: &TrajectoryRecord, ac: &TrajectoryRecord) -> Result<f64> {
    if ac.terminal_value == 0.0 {
        return Err(Error::UndefinedBaseline);
    }
    Ok((star.terminal_value - ac.terminal_value) / ac.terminal_value * 1e4)
}
