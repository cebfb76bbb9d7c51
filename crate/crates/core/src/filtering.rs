//! Posterior over the latent states from observed prices and order flow.
//!
//! The filter is carried as log unnormalised weights `log Λ^j`. Weights are
//! re-centred after every step so that the largest entry is zero; the
//! posterior is invariant to that shift.

use nalgebra::DMatrix;

use crate::calibration::hmm;
use crate::error::{invalid, Error, Result};
use crate::latent_chain::LatentChainSpec;

/// Log unnormalised filter weights at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    log_lambda: Vec<f64>,
    t: f64,
}

impl FilterState {
    /// `Λ_0 = π_0`; zero prior mass maps to `-inf`.
    pub fn from_prior(prior: &[f64], t: f64) -> Result<Self> {
        Self::from_log_weights(prior.iter().map(|p| p.ln()).collect(), t)
    }

    pub fn from_log_weights(log_lambda: Vec<f64>, t: f64) -> Result<Self> {
        if log_lambda.is_empty() {
            return invalid("filter needs at least one state");
        }
        if log_lambda.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::DegenerateFilter("non-finite filter weight".into()));
        }
        if log_lambda.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::DegenerateFilter(
                "all filter weights are zero".into(),
            ));
        }
        Ok(Self { log_lambda, t })
    }

    pub fn log_lambda(&self) -> &[f64] {
        &self.log_lambda
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn n_states(&self) -> usize {
        self.log_lambda.len()
    }

    pub fn posterior(&self) -> Result<Vec<f64>> {
        normalize(self)
    }

    fn recentred(mut log_lambda: Vec<f64>, t: f64) -> Result<Self> {
        let max = log_lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max.is_finite() {
            log_lambda.iter_mut().for_each(|v| *v -= max);
        }
        Self::from_log_weights(log_lambda, t)
    }
}

/// `π_j = Λ_j / Σ_i Λ_i`, evaluated with log-sum-exp.
pub fn normalize(state: &FilterState) -> Result<Vec<f64>> {
    let max = state
        .log_lambda
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateFilter(
            "filter weights cannot be normalised".into(),
        ));
    }
    let w: Vec<f64> = state.log_lambda.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Observables over one sampling interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationStep {
    pub dt: f64,
    pub d_f: f64,
    pub n_plus: u32,
    pub n_minus: u32,
}

impl ObservationStep {
    pub fn diffusive(dt: f64, d_f: f64) -> Self {
        Self {
            dt,
            d_f,
            n_plus: 0,
            n_minus: 0,
        }
    }

    pub fn jumps(dt: f64, b: f64, n_plus: u32, n_minus: u32) -> Self {
        Self {
            dt,
            d_f: b * (n_plus as f64 - n_minus as f64),
            n_plus,
            n_minus,
        }
    }
}

/// Exact unnormalised filter of the OU model with a constant latent level,
/// with both integrals replaced by left-point Riemann sums over the samples.
pub fn ou_filter_from_path(
    spec: &LatentChainSpec,
    kappa: f64,
    sigma: f64,
    times: &[f64],
    prices: &[f64],
) -> Result<FilterState> {
    let traj = ou_filter_trajectory(spec, kappa, sigma, times, prices)?;
    Ok(traj.into_iter().last().expect("trajectory is non-empty"))
}

/// Closed-form filter at every sample time of the path.
pub fn ou_filter_trajectory(
    spec: &LatentChainSpec,
    kappa: f64,
    sigma: f64,
    times: &[f64],
    prices: &[f64],
) -> Result<Vec<FilterState>> {
    if !spec.is_frozen() {
        return invalid("closed-form OU filter requires a constant latent state (C = 0)");
    }
    if !(sigma > 0.0) {
        return invalid(format!("sigma must be positive, got {sigma}"));
    }
    if times.len() != prices.len() || times.len() < 2 {
        return invalid("path needs at least two timestamped samples");
    }
    let theta = spec.theta();
    let inv_var = 1.0 / (sigma * sigma);
    // Running sums of ∫κ(θ_j - F)dF and ∫κ²(θ_j - F)²du per state.
    let mut stoch = vec![0.0; theta.len()];
    let mut quad = vec![0.0; theta.len()];
    let log_prior: Vec<f64> = spec.prior().iter().map(|p| p.ln()).collect();
    let mut out = Vec::with_capacity(times.len());
    out.push(FilterState::from_log_weights(log_prior.clone(), times[0])?);
    for k in 0..times.len() - 1 {
        let du = times[k + 1] - times[k];
        if !(du > 0.0) {
            return invalid("sample times must be strictly increasing");
        }
        let d_f = prices[k + 1] - prices[k];
        for j in 0..theta.len() {
            let drift = kappa * (theta[j] - prices[k]);
            stoch[j] += drift * d_f;
            quad[j] += drift * drift * du;
        }
        let log_lambda = (0..theta.len())
            .map(|j| log_prior[j] + inv_var * (stoch[j] - 0.5 * quad[j]))
            .collect();
        out.push(FilterState::from_log_weights(log_lambda, times[k + 1])?);
    }
    Ok(out)
}

/// Per-state coefficients of one filter step, evaluated at the left end of
/// the interval.
#[derive(Debug, Clone, Copy)]
pub struct StepCoefficients<'a> {
    /// Drift `A^j` of the unaffected midprice in each state.
    pub drift: &'a [f64],
    pub intensity_plus: &'a [f64],
    pub intensity_minus: &'a [f64],
    pub jump_size: f64,
    pub sigma: f64,
    pub generator: &'a DMatrix<f64>,
}

/// Regime-switching contribution `Σ_i (Λ_i/Λ_j) C_{i,j} Δ` for every state,
/// evaluated with the current weights.
///
/// Entries with zero weight cannot be advanced multiplicatively; for those the
/// additive Euler increment `log Σ_i Λ_i C_{i,j} Δ` is returned as the new log
/// weight and flagged with `true`.
fn coupling(log_lambda: &[f64], generator: &DMatrix<f64>, dt: f64) -> Result<Vec<(f64, bool)>> {
    let j_states = log_lambda.len();
    if generator.nrows() != j_states || generator.ncols() != j_states {
        return invalid("generator dimension does not match filter");
    }
    let mut out = Vec::with_capacity(j_states);
    for j in 0..j_states {
        let lj = log_lambda[j];
        if lj == f64::NEG_INFINITY {
            let terms: Vec<f64> = (0..j_states)
                .filter(|&i| i != j && generator[(i, j)] > 0.0)
                .map(|i| log_lambda[i] + (generator[(i, j)] * dt).ln())
                .collect();
            out.push((log_sum_exp(&terms), true));
            continue;
        }
        let mut x = 0.0;
        for i in 0..j_states {
            let c = generator[(i, j)];
            if c != 0.0 {
                x += (log_lambda[i] - lj).exp() * c * dt;
            }
        }
        if !x.is_finite() {
            return Err(Error::DegenerateFilter(format!(
                "regime coupling overflowed for state {j}"
            )));
        }
        out.push((x, false));
    }
    Ok(out)
}

fn log_intensity_term(intensity: f64, count: u32, state: usize) -> Result<f64> {
    if count == 0 {
        return Ok(0.0);
    }
    if !(intensity > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "non-positive intensity {intensity} in state {state} with {count} observed jumps"
        )));
    }
    Ok(count as f64 * intensity.ln())
}

/// One Euler step of the log of the unnormalised filter SDE.
///
/// For `σ > 0` the increment of `log Λ^j` is
/// `σ⁻²A^j(dF - b(dN⁺ - dN⁻)) - ½σ⁻²(A^j)²dt + dN⁺ log λ⁺ʲ + dN⁻ log λ⁻ʲ
///  - (λ⁺ʲ + λ⁻ʲ - 2)dt + Σ_i (Λ_i/Λ_j) C_{i,j} dt`.
/// With `σ = 0` the drift must vanish and the diffusive terms drop out.
#[allow(clippy::needless_range_loop)]
pub fn generic_filter_step(
    state: &FilterState,
    obs: &ObservationStep,
    coeffs: &StepCoefficients<'_>,
) -> Result<FilterState> {
    let j_states = state.n_states();
    if coeffs.drift.len() != j_states
        || coeffs.intensity_plus.len() != j_states
        || coeffs.intensity_minus.len() != j_states
    {
        return invalid("coefficient vectors must have one entry per state");
    }
    if !(obs.dt > 0.0) {
        return invalid("observation step needs dt > 0");
    }
    if coeffs.sigma < 0.0 {
        return invalid("sigma must be non-negative");
    }
    if coeffs.sigma == 0.0 && coeffs.drift.iter().any(|&a| a != 0.0) {
        return invalid("a pure-jump (sigma = 0) step requires zero drift");
    }
    let coupled = coupling(&state.log_lambda, coeffs.generator, obs.dt)?;
    let continuous = obs.d_f - coeffs.jump_size * (obs.n_plus as f64 - obs.n_minus as f64);
    let mut next = Vec::with_capacity(j_states);
    for j in 0..j_states {
        let mut incr = 0.0;
        if coeffs.sigma > 0.0 {
            let inv_var = 1.0 / (coeffs.sigma * coeffs.sigma);
            let a = coeffs.drift[j];
            incr += inv_var * a * continuous - 0.5 * inv_var * a * a * obs.dt;
        }
        let lp = coeffs.intensity_plus[j];
        let lm = coeffs.intensity_minus[j];
        incr += log_intensity_term(lp, obs.n_plus, j)?;
        incr += log_intensity_term(lm, obs.n_minus, j)?;
        incr -= (lp + lm - 2.0) * obs.dt;
        let (c, revived) = coupled[j];
        next.push(if revived {
            c + incr
        } else {
            state.log_lambda[j] + c + incr
        });
    }
    FilterState::recentred(next, state.t + obs.dt)
}

/// Mean-reverting pure-jump intensities `μ + κ(θ - F)_±`.
pub fn jump_intensities(mu: f64, kappa: f64, theta: f64, f: f64) -> (f64, f64) {
    let x = theta - f;
    (mu + kappa * x.max(0.0), mu + kappa * (-x).max(0.0))
}

/// Recursive filter of the mean-reverting pure-jump model. Multiplies each
/// `Λ^j` by `exp{2(1 - μ - (κ/2)|θ_j - F|)Δ + Σ_i (Λ_i/Λ_j) C_{i,j} Δ}` and by
/// the intensity factors raised to the observed jump counts.
pub fn jump_filter_step(
    state: &FilterState,
    obs: &ObservationStep,
    chain: &LatentChainSpec,
    mu: f64,
    kappa: f64,
    f_prev: f64,
) -> Result<FilterState> {
    if !(mu > 0.0) || !(kappa >= 0.0) {
        return invalid("pure-jump filter requires mu > 0 and kappa >= 0");
    }
    if !(obs.dt > 0.0) {
        return invalid("observation step needs dt > 0");
    }
    let theta = chain.theta();
    if theta.len() != state.n_states() {
        return invalid("chain and filter state disagree on the number of states");
    }
    let coupled = coupling(&state.log_lambda, chain.generator(), obs.dt)?;
    let mut next = Vec::with_capacity(theta.len());
    for (j, &th) in theta.iter().enumerate() {
        let (lp, lm) = jump_intensities(mu, kappa, th, f_prev);
        let mut incr = 2.0 * (1.0 - mu - 0.5 * kappa * (th - f_prev).abs()) * obs.dt;
        for (lam, n) in [(lp, obs.n_plus), (lm, obs.n_minus)] {
            if n > 0 {
                if lam <= 0.0 {
                    return Err(Error::DegenerateFilter(format!(
                        "zero intensity in state {j} with an observed jump"
                    )));
                }
                incr += n as f64 * lam.ln();
            }
        }
        let (c, revived) = coupled[j];
        next.push(if revived {
            c + incr
        } else {
            state.log_lambda[j] + c + incr
        });
    }
    FilterState::recentred(next, state.t + obs.dt)
}

fn poisson_pmf(count: u32, mean: f64) -> f64 {
    if count == 0 {
        return (-mean).exp();
    }
    if mean <= 0.0 {
        return 0.0;
    }
    let ln = count as f64 * mean.ln() - mean - ln_factorial(count);
    ln.exp()
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Discrete forward filter of the pure-jump model on a sampled slice: exact
/// `exp(ΔC)` transitions and Poisson count emissions with intensities frozen
/// at the left end of each interval. Returns the posterior after every step
/// (the first row is the prior).
pub fn forward_filter_posterior(
    chain: &LatentChainSpec,
    mu: f64,
    kappa: f64,
    prices: &[f64],
    steps: &[ObservationStep],
) -> Result<Vec<Vec<f64>>> {
    if prices.len() != steps.len() + 1 {
        return invalid("need one more price than observation steps");
    }
    if steps.is_empty() {
        return Ok(vec![chain.prior().to_vec()]);
    }
    let dt = steps[0].dt;
    if steps.iter().any(|s| (s.dt - dt).abs() > 1e-12 * dt) {
        return invalid("forward filter needs uniform sampling");
    }
    let j_states = chain.n_states();
    let emissions = DMatrix::from_fn(steps.len(), j_states, |n, j| {
        let (lp, lm) = jump_intensities(mu, kappa, chain.theta()[j], prices[n]);
        poisson_pmf(steps[n].n_plus, lp * dt) * poisson_pmf(steps[n].n_minus, lm * dt)
    });
    let transition = chain.transition_matrix(dt)?;
    let fwd = hmm::forward_pass(chain.prior(), &transition, &emissions)?;
    let mut out: Vec<Vec<f64>> = (0..steps.len())
        .map(|n| fwd.alpha.row(n).iter().cloned().collect())
        .collect();
    out.push(fwd.terminal.clone());
    Ok(out)
}

/// Sequential filter fed one observation at a time.
pub trait FilterStepper: Send {
    /// Incorporates the interval that started at price `f_prev`.
    fn observe(&mut self, f_prev: f64, obs: &ObservationStep) -> Result<()>;
    fn posterior(&self) -> &[f64];
}

/// Euler log-SDE filter of the OU model `dF = κ(Θ - F)dt + σdW`.
#[derive(Debug, Clone)]
pub struct OuFilter {
    chain: LatentChainSpec,
    kappa: f64,
    sigma: f64,
    state: FilterState,
    posterior: Vec<f64>,
    drift: Vec<f64>,
    ones: Vec<f64>,
}

impl OuFilter {
    pub fn new(chain: LatentChainSpec, kappa: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return invalid("OU filter needs sigma > 0");
        }
        let state = FilterState::from_prior(chain.prior(), 0.0)?;
        let posterior = normalize(&state)?;
        let j = chain.n_states();
        Ok(Self {
            chain,
            kappa,
            sigma,
            state,
            posterior,
            drift: vec![0.0; j],
            ones: vec![1.0; j],
        })
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }
}

impl FilterStepper for OuFilter {
    fn observe(&mut self, f_prev: f64, obs: &ObservationStep) -> Result<()> {
        for (a, th) in self.drift.iter_mut().zip(self.chain.theta()) {
            *a = self.kappa * (th - f_prev);
        }
        let coeffs = StepCoefficients {
            drift: &self.drift,
            intensity_plus: &self.ones,
            intensity_minus: &self.ones,
            jump_size: 0.0,
            sigma: self.sigma,
            generator: self.chain.generator(),
        };
        self.state = generic_filter_step(&self.state, obs, &coeffs)?;
        self.posterior = normalize(&self.state)?;
        Ok(())
    }

    fn posterior(&self) -> &[f64] {
        &self.posterior
    }
}

/// Recursive filter of the mean-reverting pure-jump model.
#[derive(Debug, Clone)]
pub struct JumpFilter {
    chain: LatentChainSpec,
    mu: f64,
    kappa: f64,
    state: FilterState,
    posterior: Vec<f64>,
}

impl JumpFilter {
    pub fn new(chain: LatentChainSpec, mu: f64, kappa: f64) -> Result<Self> {
        let state = FilterState::from_prior(chain.prior(), 0.0)?;
        let posterior = normalize(&state)?;
        Ok(Self {
            chain,
            mu,
            kappa,
            state,
            posterior,
        })
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }
}

impl FilterStepper for JumpFilter {
    fn observe(&mut self, f_prev: f64, obs: &ObservationStep) -> Result<()> {
        self.state = jump_filter_step(&self.state, obs, &self.chain, self.mu, self.kappa, f_prev)?;
        self.posterior = normalize(&self.state)?;
        Ok(())
    }

    fn posterior(&self) -> &[f64] {
        &self.posterior
    }
}
