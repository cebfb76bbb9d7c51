//! EM calibration of the censored mean-reverting pure-jump model with a
//! hidden Markov regime.
//!
//! Over each sampling interval the midprice moves by at most one tick. State
//! `j` has intensities `λ±ʲ = μ_j + κ_j(θ_j - F)_±`, evaluated at the price at
//! the start of the interval.

mod em;
pub mod hmm;
pub mod logm;
pub mod optim;
mod select;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::filtering::jump_intensities;
use crate::latent_chain::{sample_index, validate_probability};

pub use em::{em_step, fit_em, fit_states, initial_params, loglik, EmFit, EmOptions, EmStep};
pub use logm::{generator_from_transition, logm};
pub use select::{bic, icl, model_selection, n_params, viterbi_path, ModelSelectionRow};

/// Emission parameters of one latent state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpParams {
    pub mu: f64,
    pub kappa: f64,
    pub theta: f64,
}

impl JumpParams {
    pub fn intensities(&self, f: f64) -> (f64, f64) {
        jump_intensities(self.mu, self.kappa, self.theta, f)
    }
}

/// `Γ = (π₀, P, ψ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EMParams {
    pub pi0: Vec<f64>,
    pub transition: DMatrix<f64>,
    pub psi: Vec<JumpParams>,
}

impl EMParams {
    pub fn n_states(&self) -> usize {
        self.psi.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.psi.len();
        if j == 0 {
            return invalid("need at least one latent state");
        }
        validate_probability(&self.pi0, j, "initial distribution")?;
        if self.transition.nrows() != j || self.transition.ncols() != j {
            return invalid("transition matrix has the wrong size");
        }
        for r in 0..j {
            let row: Vec<f64> = self.transition.row(r).iter().cloned().collect();
            validate_probability(&row, j, "transition row")?;
        }
        for p in &self.psi {
            if !(p.mu > 0.0
                && p.mu.is_finite()
                && p.kappa >= 0.0
                && p.kappa.is_finite()
                && p.theta.is_finite())
            {
                return invalid("emission parameters need mu > 0, kappa >= 0 and finite theta");
            }
        }
        Ok(())
    }

    /// Relabels states so that `new state k = old state perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let j = perm.len();
        Self {
            pi0: perm.iter().map(|&p| self.pi0[p]).collect(),
            transition: DMatrix::from_fn(j, j, |a, b| self.transition[(perm[a], perm[b])]),
            psi: perm.iter().map(|&p| self.psi[p]).collect(),
        }
    }

    /// States ordered by decreasing base intensity `μ`.
    pub fn sorted_by_mu(&self) -> Self {
        let mut perm: Vec<usize> = (0..self.n_states()).collect();
        perm.sort_by(|&a, &b| self.psi[b].mu.total_cmp(&self.psi[a].mu));
        self.permuted(&perm)
    }
}

/// Censored emission probability of a move of `-1`, `0` or `+1` ticks when
/// the one-step jump probabilities are `1 - e^{-Δλ±}`.
pub fn emission_by_move(mv: i8, lambda_plus: f64, lambda_minus: f64, dt: f64) -> f64 {
    let pu = -(-dt * lambda_plus).exp_m1();
    let pd = -(-dt * lambda_minus).exp_m1();
    match mv {
        1 => (1.0 - pd) * pu,
        -1 => (1.0 - pu) * pd,
        _ => (1.0 - pu) * (1.0 - pd) + pu * pd,
    }
}

fn classify_move(d_f: f64, b: f64) -> Result<(i8, bool)> {
    let ticks = d_f / b;
    let r = ticks.round();
    if (ticks - r).abs() > 1e-6 {
        return Err(Error::DataFormat(format!(
            "price change {d_f} is not a multiple of the tick {b}"
        )));
    }
    let truncated = r.abs() > 1.0;
    Ok((r.clamp(-1.0, 1.0) as i8, truncated))
}

/// `f_ψ(F_next | F_prev, θ_j)` for increments in `{-b, 0, b}`.
pub fn emission_prob(f_next: f64, f_prev: f64, b: f64, psi: &JumpParams, dt: f64) -> Result<f64> {
    if !(b > 0.0) || !(dt > 0.0) {
        return invalid("tick size and dt must be positive");
    }
    let (mv, truncated) = classify_move(f_next - f_prev, b)?;
    if truncated {
        return Err(Error::DataFormat(format!(
            "increment {} exceeds one tick",
            f_next - f_prev
        )));
    }
    let (lp, lm) = psi.intensities(f_prev);
    Ok(emission_by_move(mv, lp, lm, dt))
}

/// Independent, uniformly sampled price paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dt: f64,
    b: f64,
    prices: Vec<Vec<f64>>,
    moves: Vec<Vec<i8>>,
    /// Index into `levels` of the price at the start of each step.
    level_idx: Vec<Vec<u32>>,
    levels: Vec<f64>,
    truncated: usize,
}

impl Dataset {
    /// Builds a dataset from `D` paths of `K + 1` prices each. Moves of more
    /// than one tick are truncated to one tick and counted.
    pub fn new(prices: Vec<Vec<f64>>, dt: f64, b: f64) -> Result<Self> {
        if !(dt > 0.0) || !(b > 0.0) {
            return Err(Error::DataFormat(
                "dt and tick size must be positive".into(),
            ));
        }
        if prices.is_empty() {
            return Err(Error::DataFormat("dataset has no paths".into()));
        }
        let len = prices[0].len();
        if len < 3 {
            return Err(Error::DataFormat(
                "each path needs at least three prices".into(),
            ));
        }
        let mut level_map: BTreeMap<u64, u32> = BTreeMap::new();
        let mut levels = Vec::new();
        let mut moves = Vec::with_capacity(prices.len());
        let mut level_idx = Vec::with_capacity(prices.len());
        let mut truncated = 0;
        for (d, path) in prices.iter().enumerate() {
            if path.len() != len {
                return Err(Error::DataFormat(format!(
                    "path {d} has {} prices, expected {len}",
                    path.len()
                )));
            }
            if path.iter().any(|f| !f.is_finite()) {
                return Err(Error::DataFormat(format!(
                    "path {d} has a non-finite price"
                )));
            }
            let mut mv = Vec::with_capacity(len - 1);
            let mut li = Vec::with_capacity(len - 1);
            for w in path.windows(2) {
                let (m, t) = classify_move(w[1] - w[0], b)?;
                truncated += t as usize;
                mv.push(m);
                let key = (w[0] + 0.0).to_bits();
                let idx = *level_map.entry(key).or_insert_with(|| {
                    levels.push(w[0]);
                    (levels.len() - 1) as u32
                });
                li.push(idx);
            }
            moves.push(mv);
            level_idx.push(li);
        }
        if truncated > 0 {
            log::warn!("{truncated} multi-tick increments truncated to one tick");
        }
        Ok(Self {
            dt,
            b,
            prices,
            moves,
            level_idx,
            levels,
            truncated,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn tick(&self) -> f64 {
        self.b
    }

    pub fn n_paths(&self) -> usize {
        self.prices.len()
    }

    /// Number of increments per path.
    pub fn n_steps(&self) -> usize {
        self.prices[0].len() - 1
    }

    pub fn prices(&self) -> &[Vec<f64>] {
        &self.prices
    }

    pub fn moves(&self, path: usize) -> &[i8] {
        &self.moves[path]
    }

    pub fn truncated_moves(&self) -> usize {
        self.truncated
    }

    pub(crate) fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub(crate) fn level_idx(&self, path: usize) -> &[u32] {
        &self.level_idx[path]
    }

    /// `K × J` emission table of one path.
    pub fn emissions(&self, path: usize, psi: &[JumpParams]) -> DMatrix<f64> {
        let table = self.emission_lookup(psi);
        self.emissions_from_lookup(path, &table, psi.len())
    }

    /// `table[(level·3 + move + 1)·J + j]`.
    pub(crate) fn emission_lookup(&self, psi: &[JumpParams]) -> Vec<f64> {
        let j = psi.len();
        let mut table = vec![0.0; self.levels.len() * 3 * j];
        for (l, &f) in self.levels.iter().enumerate() {
            for (s, p) in psi.iter().enumerate() {
                let (lp, lm) = p.intensities(f);
                for mv in -1i8..=1 {
                    table[(l * 3 + (mv + 1) as usize) * j + s] =
                        emission_by_move(mv, lp, lm, self.dt);
                }
            }
        }
        table
    }

    pub(crate) fn emissions_from_lookup(
        &self,
        path: usize,
        table: &[f64],
        j: usize,
    ) -> DMatrix<f64> {
        let k = self.n_steps();
        let mv = &self.moves[path];
        let li = &self.level_idx[path];
        DMatrix::from_fn(k, j, |n, s| {
            table[(li[n] as usize * 3 + (mv[n] + 1) as usize) * j + s]
        })
    }
}

/// Samples `d` paths of `k` steps from the censored model itself: the chain
/// moves with `P` between steps and each step has independent up and down
/// jumps with probabilities `1 - e^{-Δλ±}`.
pub fn simulate_censored_dataset<R: Rng + ?Sized>(
    params: &EMParams,
    dt: f64,
    b: f64,
    f0: f64,
    d: usize,
    k: usize,
    rng: &mut R,
) -> Result<Dataset> {
    params.validate()?;
    let j = params.n_states();
    let rows: Vec<Vec<f64>> = (0..j)
        .map(|r| params.transition.row(r).iter().cloned().collect())
        .collect();
    let mut prices = Vec::with_capacity(d);
    for _ in 0..d {
        let mut z = sample_index(&params.pi0, rng);
        let mut ticks: i64 = 0;
        let mut path = Vec::with_capacity(k + 1);
        path.push(f0);
        for _ in 0..k {
            let f = f0 + b * ticks as f64;
            let (lp, lm) = params.psi[z].intensities(f);
            let up = rng.random::<f64>() < -(-dt * lp).exp_m1();
            let down = rng.random::<f64>() < -(-dt * lm).exp_m1();
            ticks += up as i64 - down as i64;
            path.push(f0 + b * ticks as f64);
            z = sample_index(&rows[z], rng);
        }
        prices.push(path);
    }
    Dataset::new(prices, dt, b)
}
