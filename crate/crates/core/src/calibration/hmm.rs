//! Scaled forward-backward, two-slice marginals and Viterbi decoding for a
//! discrete-time hidden Markov chain.
//!
//! `emissions[(n, i)]` is the density of the `n`-th observed increment given
//! that the chain sits in state `i` at the start of that increment. The chain
//! moves with `transition` between consecutive increments.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// Scaled forward variables.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `alpha[(n, i)] = P(Z_n = i | y_0..y_n)`, one row per increment.
    pub alpha: DMatrix<f64>,
    /// Scaling constants; `c[n] = p(y_{n+1} | y_0..y_n)`.
    pub c: Vec<f64>,
    /// Filtered distribution after the last increment.
    pub terminal: Vec<f64>,
}

impl Forward {
    pub fn loglik(&self) -> f64 {
        self.c.iter().map(|c| c.ln()).sum()
    }
}

/// Forward-backward output.
#[derive(Debug, Clone)]
pub struct FBResult {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    /// Smoothed marginals `P(Z_n = i | all data)`.
    pub gamma: DMatrix<f64>,
    /// `xi[n][(i, j)] = P(Z_n = i, Z_{n+1} = j | all data)`.
    pub xi: Vec<DMatrix<f64>>,
    pub c: Vec<f64>,
    pub loglik: f64,
}

fn check_dims(
    prior: Option<&[f64]>,
    transition: &DMatrix<f64>,
    emissions: &DMatrix<f64>,
) -> Result<()> {
    let j = emissions.ncols();
    if j == 0 {
        return invalid("emission table has no states");
    }
    if transition.nrows() != j || transition.ncols() != j {
        return invalid("transition matrix does not match the emission table");
    }
    if let Some(p) = prior {
        if p.len() != j {
            return invalid("prior does not match the emission table");
        }
    }
    if emissions.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return invalid("emission densities must be finite and non-negative");
    }
    Ok(())
}

pub fn forward_pass(
    prior: &[f64],
    transition: &DMatrix<f64>,
    emissions: &DMatrix<f64>,
) -> Result<Forward> {
    check_dims(Some(prior), transition, emissions)?;
    let (k, j) = emissions.shape();
    let mut alpha = DMatrix::zeros(k, j);
    let mut c = Vec::with_capacity(k);
    let mut current = prior.to_vec();
    let mut weighted = vec![0.0; j];
    for n in 0..k {
        for i in 0..j {
            alpha[(n, i)] = current[i];
            weighted[i] = current[i] * emissions[(n, i)];
        }
        let cn: f64 = weighted.iter().sum();
        if !(cn > 0.0) {
            return Err(Error::ImpossibleObservation { step: n });
        }
        c.push(cn);
        for (jj, out) in current.iter_mut().enumerate() {
            *out = (0..j)
                .map(|i| weighted[i] * transition[(i, jj)])
                .sum::<f64>()
                / cn;
        }
    }
    Ok(Forward {
        alpha,
        c,
        terminal: current,
    })
}

/// Backward variables scaled so that `Σ_i alpha[(n,i)] beta[(n,i)] = 1`.
pub fn backward_pass(
    transition: &DMatrix<f64>,
    emissions: &DMatrix<f64>,
    fwd: &Forward,
) -> Result<DMatrix<f64>> {
    check_dims(None, transition, emissions)?;
    let (k, j) = emissions.shape();
    let mut beta = DMatrix::zeros(k, j);
    let mut next = vec![1.0; j];
    let mut hat = vec![0.0; j];
    for n in (0..k).rev() {
        for (jj, h) in hat.iter_mut().enumerate() {
            let ahead: f64 = (0..j).map(|i| transition[(jj, i)] * next[i]).sum();
            *h = emissions[(n, jj)] * ahead;
        }
        let norm: f64 = (0..j).map(|i| hat[i] * fwd.alpha[(n, i)]).sum();
        if !(norm > 0.0) {
            return Err(Error::ImpossibleObservation { step: n });
        }
        for i in 0..j {
            next[i] = hat[i] / norm;
            beta[(n, i)] = next[i];
        }
    }
    Ok(beta)
}

pub fn forward_backward(
    prior: &[f64],
    transition: &DMatrix<f64>,
    emissions: &DMatrix<f64>,
) -> Result<FBResult> {
    let fwd = forward_pass(prior, transition, emissions)?;
    let beta = backward_pass(transition, emissions, &fwd)?;
    Ok(smoother_and_two_slice(fwd, beta, transition, emissions))
}

pub fn smoother_and_two_slice(
    fwd: Forward,
    beta: DMatrix<f64>,
    transition: &DMatrix<f64>,
    emissions: &DMatrix<f64>,
) -> FBResult {
    let (k, j) = emissions.shape();
    let gamma = fwd.alpha.component_mul(&beta);
    let mut xi = Vec::with_capacity(k.saturating_sub(1));
    for n in 0..k.saturating_sub(1) {
        let m = DMatrix::from_fn(j, j, |a, b| {
            fwd.alpha[(n, a)] * emissions[(n, a)] * transition[(a, b)] * beta[(n + 1, b)] / fwd.c[n]
        });
        xi.push(m);
    }
    let loglik = fwd.loglik();
    FBResult {
        alpha: fwd.alpha,
        beta,
        gamma,
        xi,
        c: fwd.c,
        loglik,
    }
}

/// Most likely state sequence. Ties go to the lowest state index.
pub fn viterbi(
    prior: &[f64],
    transition: &DMatrix<f64>,
    emissions: &DMatrix<f64>,
) -> Result<Vec<usize>> {
    check_dims(Some(prior), transition, emissions)?;
    let (k, j) = emissions.shape();
    if k == 0 {
        return Ok(Vec::new());
    }
    let log_p = transition.map(f64::ln);
    let mut delta: Vec<f64> = (0..j)
        .map(|i| prior[i].ln() + emissions[(0, i)].ln())
        .collect();
    let mut back = vec![0usize; k * j];
    let mut next = vec![0.0; j];
    for n in 1..k {
        for b in 0..j {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for a in 0..j {
                let v = delta[a] + log_p[(a, b)];
                if v > best {
                    best = v;
                    arg = a;
                }
            }
            next[b] = best + emissions[(n, b)].ln();
            back[n * j + b] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut best = f64::NEG_INFINITY;
    let mut state = 0;
    for (i, &d) in delta.iter().enumerate() {
        if d > best {
            best = d;
            state = i;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::ImpossibleObservation { step: k - 1 });
    }
    let mut path = vec![0; k];
    path[k - 1] = state;
    for n in (1..k).rev() {
        state = back[n * j + state];
        path[n - 1] = state;
    }
    Ok(path)
}

/// `log P(Z = path, y)` for a given state sequence.
pub fn complete_log_likelihood(
    prior: &[f64],
    transition: &DMatrix<f64>,
    emissions: &DMatrix<f64>,
    path: &[usize],
) -> f64 {
    if path.is_empty() {
        return 0.0;
    }
    let mut ll = prior[path[0]].ln();
    for (n, &z) in path.iter().enumerate() {
        ll += emissions[(n, z)].ln();
        if n + 1 < path.len() {
            ll += transition[(z, path[n + 1])].ln();
        }
    }
    ll
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn brute_paths(j: usize, k: usize) -> Vec<Vec<usize>> {
        (0..j.pow(k as u32))
            .map(|mut code| {
                (0..k)
                    .map(|_| {
                        let s = code % j;
                        code /= j;
                        s
                    })
                    .collect()
            })
            .collect()
    }

    fn example() -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let prior = vec![0.6, 0.3, 0.1];
        let p = DMatrix::from_row_slice(3, 3, &[0.8, 0.15, 0.05, 0.1, 0.7, 0.2, 0.3, 0.3, 0.4]);
        let e = DMatrix::from_row_slice(
            5,
            3,
            &[
                0.2, 0.5, 0.1, 0.9, 0.1, 0.3, 0.05, 0.4, 0.7, 0.3, 0.3, 0.3, 0.6, 0.01, 0.2,
            ],
        );
        (prior, p, e)
    }

    #[test]
    fn matches_enumeration() {
        let (prior, p, e) = example();
        let (k, j) = e.shape();
        let paths = brute_paths(j, k);
        let joint: Vec<f64> = paths
            .iter()
            .map(|z| complete_log_likelihood(&prior, &p, &e, z).exp())
            .collect();
        let total: f64 = joint.iter().sum();
        let fb = forward_backward(&prior, &p, &e).unwrap();
        assert_abs_diff_eq!(fb.loglik, total.ln(), epsilon = 1e-12);
        for n in 0..k {
            for i in 0..j {
                let m: f64 = paths
                    .iter()
                    .zip(&joint)
                    .filter(|(z, _)| z[n] == i)
                    .map(|(_, w)| w)
                    .sum();
                assert_abs_diff_eq!(fb.gamma[(n, i)], m / total, epsilon = 1e-12);
            }
        }
        for n in 0..k - 1 {
            for a in 0..j {
                for b in 0..j {
                    let m: f64 = paths
                        .iter()
                        .zip(&joint)
                        .filter(|(z, _)| z[n] == a && z[n + 1] == b)
                        .map(|(_, w)| w)
                        .sum();
                    assert_abs_diff_eq!(fb.xi[n][(a, b)], m / total, epsilon = 1e-12);
                }
            }
        }
        let best =
            paths.iter().zip(&joint).fold(
                (0.0, &paths[0]),
                |acc, (z, &w)| if w > acc.0 { (w, z) } else { acc },
            );
        assert_eq!(&viterbi(&prior, &p, &e).unwrap(), best.1);
    }

    #[test]
    fn normalisation_invariants() {
        let (prior, p, e) = example();
        let fb = forward_backward(&prior, &p, &e).unwrap();
        for n in 0..e.nrows() {
            let s: f64 = fb.gamma.row(n).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
            let a: f64 = fb.alpha.row(n).sum();
            assert_abs_diff_eq!(a, 1.0, epsilon = 1e-12);
        }
        for (n, x) in fb.xi.iter().enumerate() {
            assert_abs_diff_eq!(x.sum(), 1.0, epsilon = 1e-12);
            for a in 0..3 {
                assert_abs_diff_eq!(x.row(a).sum(), fb.gamma[(n, a)], epsilon = 1e-12);
                assert_abs_diff_eq!(x.column(a).sum(), fb.gamma[(n + 1, a)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn last_smoothed_marginal_uses_last_emission() {
        let (prior, p, e) = example();
        let fb = forward_backward(&prior, &p, &e).unwrap();
        let k = e.nrows() - 1;
        let z: f64 = (0..3).map(|i| fb.alpha[(k, i)] * e[(k, i)]).sum();
        for i in 0..3 {
            assert_abs_diff_eq!(
                fb.gamma[(k, i)],
                fb.alpha[(k, i)] * e[(k, i)] / z,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn impossible_observation_is_reported() {
        let (prior, p, mut e) = example();
        e.row_mut(2).fill(0.0);
        assert!(matches!(
            forward_pass(&prior, &p, &e),
            Err(Error::ImpossibleObservation { step: 2 })
        ));
    }

    #[test]
    fn viterbi_ties_prefer_lower_index() {
        let prior = vec![0.5, 0.5];
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let e = DMatrix::from_element(3, 2, 0.2);
        assert_eq!(viterbi(&prior, &p, &e).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn identity_transition_single_path() {
        let prior = vec![0.0, 1.0];
        let p = DMatrix::identity(2, 2);
        let e = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.4, 0.1]);
        let fb = forward_backward(&prior, &p, &e).unwrap();
        assert_abs_diff_eq!(fb.loglik, (0.2f64 * 0.1).ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(fb.gamma[(1, 1)], 1.0);
    }
}
