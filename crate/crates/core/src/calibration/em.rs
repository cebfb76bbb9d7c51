use nalgebra::DMatrix;
use rayon::prelude::*;

use super::hmm::{forward_backward, forward_pass};
use super::optim::{nelder_mead, NelderMeadOptions};
use super::{emission_by_move, Dataset, EMParams, JumpParams};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop when the relative log-likelihood gain drops below this.
    pub rel_tol: f64,
    pub optimizer: NelderMeadOptions,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-8,
            optimizer: NelderMeadOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmStep {
    pub params: EMParams,
    /// Log-likelihood of the parameters the step started from.
    pub loglik: f64,
    /// Set when the optimiser failed to improve some state's `ψ`, which was
    /// then left unchanged.
    pub psi_not_improved: bool,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: EMParams,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub optimizer_warnings: usize,
}

/// `(level value, move, weight)` groups with positive weight.
type Groups = Vec<(f64, i8, f64)>;

struct Expectations {
    loglik: f64,
    gamma0: Vec<f64>,
    xi: DMatrix<f64>,
    /// Per state, summed smoothed weight of each `(level, move)` cell.
    cells: Vec<Vec<f64>>,
}

fn e_step(data: &Dataset, params: &EMParams) -> Result<Expectations> {
    let j = params.n_states();
    let lookup = data.emission_lookup(&params.psi);
    let n_cells = data.levels().len() * 3;
    let per_path = (0..data.n_paths())
        .into_par_iter()
        .map(|d| -> Result<Expectations> {
            let e = data.emissions_from_lookup(d, &lookup, j);
            let fb = forward_backward(&params.pi0, &params.transition, &e)?;
            let mut xi = DMatrix::zeros(j, j);
            for x in &fb.xi {
                xi += x;
            }
            let mut cells = vec![vec![0.0; n_cells]; j];
            let mv = data.moves(d);
            let li = data.level_idx(d);
            for n in 0..mv.len() {
                let c = li[n] as usize * 3 + (mv[n] + 1) as usize;
                for (s, cell) in cells.iter_mut().enumerate() {
                    cell[c] += fb.gamma[(n, s)];
                }
            }
            Ok(Expectations {
                loglik: fb.loglik,
                gamma0: fb.gamma.row(0).iter().cloned().collect(),
                xi,
                cells,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Expectations {
        loglik: 0.0,
        gamma0: vec![0.0; j],
        xi: DMatrix::zeros(j, j),
        cells: vec![vec![0.0; n_cells]; j],
    };
    for p in per_path {
        total.loglik += p.loglik;
        for s in 0..j {
            total.gamma0[s] += p.gamma0[s];
            for (a, b) in total.cells[s].iter_mut().zip(&p.cells[s]) {
                *a += b;
            }
        }
        total.xi += p.xi;
    }
    Ok(total)
}

fn groups_of(data: &Dataset, cells: &[f64]) -> Groups {
    let mut out = Vec::new();
    for (l, &f) in data.levels().iter().enumerate() {
        for mv in -1i8..=1 {
            let w = cells[l * 3 + (mv + 1) as usize];
            if w > 0.0 {
                out.push((f, mv, w));
            }
        }
    }
    out
}

fn neg_expected_loglik(groups: &Groups, psi: &JumpParams, dt: f64) -> f64 {
    let mut s = 0.0;
    for &(f, mv, w) in groups {
        let (lp, lm) = psi.intensities(f);
        s -= w * emission_by_move(mv, lp, lm, dt).ln();
    }
    s
}

fn to_x(p: &JumpParams) -> [f64; 3] {
    [p.mu.ln(), p.kappa.max(1e-300).ln(), p.theta]
}

fn from_x(x: &[f64]) -> JumpParams {
    JumpParams {
        mu: x[0].exp(),
        kappa: x[1].exp(),
        theta: x[2],
    }
}

/// Maximises the expected emission log-likelihood of one state. Returns the
/// previous parameters when no improvement is found.
fn update_psi(
    groups: &Groups,
    start: &JumpParams,
    dt: f64,
    b: f64,
    opts: NelderMeadOptions,
) -> (JumpParams, bool) {
    if groups.is_empty() {
        return (*start, true);
    }
    let f0 = neg_expected_loglik(groups, start, dt);
    let x0 = to_x(start);
    let steps = [0.1, 0.1, b.max(0.01 * start.theta.abs())];
    let m = nelder_mead(
        |x| {
            let p = from_x(x);
            if !(p.mu > 0.0 && p.mu.is_finite() && p.kappa.is_finite()) {
                return f64::INFINITY;
            }
            neg_expected_loglik(groups, &p, dt)
        },
        &x0,
        &steps,
        opts,
    );
    if m.value < f0 {
        (from_x(&m.x), false)
    } else {
        (*start, !(m.value <= f0))
    }
}

/// One EM iteration: closed-form `π₀` and `P`, numerical `ψ` per state.
pub fn em_step(data: &Dataset, params: &EMParams, opts: &EmOptions) -> Result<EmStep> {
    params.validate()?;
    let j = params.n_states();
    let ex = e_step(data, params)?;
    let d = data.n_paths() as f64;
    let pi0: Vec<f64> = ex.gamma0.iter().map(|g| g / d).collect();
    let mut transition = params.transition.clone();
    for r in 0..j {
        let row_sum: f64 = ex.xi.row(r).sum();
        if row_sum > 0.0 {
            for c in 0..j {
                transition[(r, c)] = ex.xi[(r, c)] / row_sum;
            }
        }
    }
    let mut psi = Vec::with_capacity(j);
    let mut warn = false;
    for s in 0..j {
        let groups = groups_of(data, &ex.cells[s]);
        let (p, w) = update_psi(
            &groups,
            &params.psi[s],
            data.dt(),
            data.tick(),
            opts.optimizer,
        );
        warn |= w;
        psi.push(p);
    }
    if warn {
        log::warn!("emission update did not improve for at least one state");
    }
    Ok(EmStep {
        params: EMParams {
            pi0,
            transition,
            psi,
        },
        loglik: ex.loglik,
        psi_not_improved: warn,
    })
}

pub fn loglik(data: &Dataset, params: &EMParams) -> Result<f64> {
    let lookup = data.emission_lookup(&params.psi);
    let j = params.n_states();
    let parts = (0..data.n_paths())
        .into_par_iter()
        .map(|d| {
            let e = data.emissions_from_lookup(d, &lookup, j);
            forward_pass(&params.pi0, &params.transition, &e).map(|f| f.loglik())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.iter().sum())
}

/// Iterates EM from `init` until the relative gain falls below `rel_tol` or
/// `max_iter` steps have run.
pub fn fit_em(data: &Dataset, init: &EMParams, opts: &EmOptions) -> Result<EmFit> {
    let mut params = init.clone();
    let mut trace = Vec::new();
    let mut warnings = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let step = em_step(data, &params, opts)?;
        iterations += 1;
        warnings += step.psi_not_improved as usize;
        if let Some(&prev) = trace.last() {
            let gain: f64 = step.loglik - prev;
            if gain.abs() <= opts.rel_tol * f64::abs(prev) {
                trace.push(step.loglik);
                converged = true;
                break;
            }
        }
        trace.push(step.loglik);
        params = step.params;
    }
    let ll = loglik(data, &params)?;
    if !converged {
        trace.push(ll);
    }
    Ok(EmFit {
        params,
        loglik: ll,
        loglik_trace: trace,
        iterations,
        converged,
        optimizer_warnings: warnings,
    })
}

fn single_state_start(data: &Dataset) -> JumpParams {
    let mut moves = 0usize;
    let mut total = 0usize;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut count = 0.0;
    for d in 0..data.n_paths() {
        moves += data.moves(d).iter().filter(|&&m| m != 0).count();
        total += data.moves(d).len();
        for &f in &data.prices()[d] {
            sum += f;
            sum2 += f * f;
            count += 1.0;
        }
    }
    let p = (moves as f64 / (2.0 * total as f64)).clamp(1e-6, 0.5);
    let mu = -(1.0 - p).ln() / data.dt();
    let mean = sum / count;
    let sd = (sum2 / count - mean * mean)
        .max(0.0)
        .sqrt()
        .max(data.tick());
    JumpParams {
        mu,
        kappa: mu / sd,
        theta: mean,
    }
}

/// Starting point for a `J`-state fit: a one-state fit whose `μ` and `κ` are
/// spread geometrically across states, a sticky transition matrix and a
/// uniform prior.
pub fn initial_params(data: &Dataset, j: usize, opts: &EmOptions) -> Result<EMParams> {
    if j == 0 {
        return invalid("need at least one latent state");
    }
    let start = single_state_start(data);
    let one = EMParams {
        pi0: vec![1.0],
        transition: DMatrix::from_element(1, 1, 1.0),
        psi: vec![start],
    };
    let base = fit_em(data, &one, opts)?.params.psi[0];
    if j == 1 {
        return Ok(EMParams {
            psi: vec![base],
            ..one
        });
    }
    let stay = 0.999;
    let transition = DMatrix::from_fn(j, j, |a, b| {
        if a == b {
            stay
        } else {
            (1.0 - stay) / (j - 1) as f64
        }
    });
    let psi = (0..j)
        .map(|s| {
            let spread = 0.7 * (1.0 - 2.0 * s as f64 / (j - 1) as f64);
            JumpParams {
                mu: base.mu * spread.exp(),
                kappa: base.kappa * spread.exp(),
                theta: base.theta,
            }
        })
        .collect();
    Ok(EMParams {
        pi0: vec![1.0 / j as f64; j],
        transition,
        psi,
    })
}

/// Initialises, fits and orders the states by decreasing `μ`.
pub fn fit_states(data: &Dataset, j: usize, opts: &EmOptions) -> Result<EmFit> {
    let init = initial_params(data, j, opts)?;
    let mut fit = fit_em(data, &init, opts)?;
    fit.params = fit.params.sorted_by_mu();
    Ok(fit)
}
