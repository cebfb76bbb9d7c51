use super::em::{loglik, EmFit, EmOptions};
use super::hmm::viterbi;
use super::{fit_states, Dataset, EMParams};
use crate::error::Result;

/// Free parameters of a `J`-state model: prior, transition rows and three
/// emission parameters per state.
pub fn n_params(j: usize) -> usize {
    (j - 1) + j * (j - 1) + 3 * j
}

/// `log L - (ν/2) log(K·D)`.
pub fn bic(loglik: f64, n_params: usize, k: usize, d: usize) -> f64 {
    loglik - 0.5 * n_params as f64 * ((k * d) as f64).ln()
}

/// Most likely latent sequence of one path.
pub fn viterbi_path(data: &Dataset, path: usize, params: &EMParams) -> Result<Vec<usize>> {
    let e = data.emissions(path, &params.psi);
    viterbi(&params.pi0, &params.transition, &e)
}

/// Emission log-likelihood along the Viterbi paths, penalised like the BIC.
pub fn icl(data: &Dataset, params: &EMParams) -> Result<f64> {
    let mut total = 0.0;
    for d in 0..data.n_paths() {
        let e = data.emissions(d, &params.psi);
        let z = viterbi(&params.pi0, &params.transition, &e)?;
        total += z
            .iter()
            .enumerate()
            .map(|(n, &s)| e[(n, s)].ln())
            .sum::<f64>();
    }
    Ok(total
        - 0.5
            * n_params(params.n_states()) as f64
            * ((data.n_steps() * data.n_paths()) as f64).ln())
}

#[derive(Debug, Clone)]
pub struct ModelSelectionRow {
    pub states: usize,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
    pub icl: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fit: EmFit,
}

/// Fits every state count in `states` and scores each fit.
pub fn model_selection(
    data: &Dataset,
    states: impl IntoIterator<Item = usize>,
    opts: &EmOptions,
) -> Result<Vec<ModelSelectionRow>> {
    let mut rows = Vec::new();
    for j in states {
        let fit = fit_states(data, j, opts)?;
        let ll = loglik(data, &fit.params)?;
        let np = n_params(j);
        rows.push(ModelSelectionRow {
            states: j,
            loglik: ll,
            n_params: np,
            bic: bic(ll, np, data.n_steps(), data.n_paths()),
            icl: icl(data, &fit.params)?,
            iterations: fit.iterations,
            converged: fit.converged,
            fit,
        });
    }
    Ok(rows)
}
