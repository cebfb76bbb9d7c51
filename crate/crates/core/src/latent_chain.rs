//! Hidden continuous-time Markov chain driving the latent alpha.
//!
//! Generators follow the row convention: `C[i][j] >= 0` for `i != j` is the
//! rate of jumping from state `i` to state `j` and every row sums to zero, so
//! that `P(Θ_t = θ_j | Θ_0 = θ_i) = exp(tC)[i][j]`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{invalid, Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// State values, generator and prior of the latent chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentChainSpec {
    theta: Vec<f64>,
    generator: DMatrix<f64>,
    prior: Vec<f64>,
}

impl LatentChainSpec {
    pub fn new(theta: Vec<f64>, generator: DMatrix<f64>, prior: Vec<f64>) -> Result<Self> {
        let j = theta.len();
        if j == 0 {
            return invalid("latent chain needs at least one state");
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return invalid("state values must be finite");
        }
        if generator.nrows() != j || generator.ncols() != j {
            return invalid(format!(
                "generator is {}x{}, expected {j}x{j}",
                generator.nrows(),
                generator.ncols()
            ));
        }
        validate_generator(&generator)?;
        validate_probability(&prior, j, "prior")?;
        Ok(Self {
            theta,
            generator,
            prior,
        })
    }

    /// A chain whose state never changes (`C = 0`).
    pub fn constant(theta: Vec<f64>, prior: Vec<f64>) -> Result<Self> {
        let j = theta.len();
        Self::new(theta, DMatrix::zeros(j, j), prior)
    }

    /// Symmetric two-state chain switching at `rate` in both directions.
    pub fn symmetric_two_state(theta: [f64; 2], rate: f64, prior: [f64; 2]) -> Result<Self> {
        let c = DMatrix::from_row_slice(2, 2, &[-rate, rate, rate, -rate]);
        Self::new(theta.to_vec(), c, prior.to_vec())
    }

    pub fn n_states(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn is_frozen(&self) -> bool {
        self.generator.iter().all(|&c| c == 0.0)
    }

    /// One-step transition matrix `exp(dt C)`.
    pub fn transition_matrix(&self, dt: f64) -> Result<DMatrix<f64>> {
        matrix_exponential(&self.generator, dt)
    }

    /// Relabels states so that new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let j = self.n_states();
        if perm.len() != j {
            return invalid("permutation length mismatch");
        }
        let theta = perm.iter().map(|&p| self.theta[p]).collect();
        let prior = perm.iter().map(|&p| self.prior[p]).collect();
        let generator = DMatrix::from_fn(j, j, |r, c| self.generator[(perm[r], perm[c])]);
        Self::new(theta, generator, prior)
    }
}

pub(crate) fn validate_generator(c: &DMatrix<f64>) -> Result<()> {
    for i in 0..c.nrows() {
        let mut sum = 0.0;
        let mut scale: f64 = 1.0;
        for j in 0..c.ncols() {
            let v = c[(i, j)];
            if !v.is_finite() {
                return invalid("generator entries must be finite");
            }
            if i != j && v < 0.0 {
                return invalid(format!("negative off-diagonal rate C[{i}][{j}] = {v}"));
            }
            sum += v;
            scale = scale.max(v.abs());
        }
        if sum.abs() > ROW_SUM_TOL * scale {
            return invalid(format!("generator row {i} sums to {sum}, expected 0"));
        }
    }
    Ok(())
}

pub(crate) fn validate_probability(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len {
        return invalid(format!("{what} has {} entries, expected {len}", p.len()));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return invalid(format!("{what} entries must be finite and non-negative"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL.max(1e-12 * len as f64) {
        return invalid(format!("{what} sums to {total}, expected 1"));
    }
    Ok(())
}

/// `exp(t M)` by scaling and squaring with a Padé core.
pub fn matrix_exponential(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return invalid("matrix exponential of a non-square matrix");
    }
    if !t.is_finite() || t < 0.0 {
        return invalid(format!("time must be finite and >= 0, got {t}"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return invalid("matrix exponential of a non-finite matrix");
    }
    if t == 0.0 || m.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::identity(m.nrows(), m.ncols()));
    }
    let out = (m * t).exp();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    Ok(out)
}

/// Piecewise-constant, right-continuous sample path of the latent chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    horizon: f64,
    jump_times: Vec<f64>,
    states: Vec<usize>,
}

impl ChainPath {
    pub fn new(horizon: f64, jump_times: Vec<f64>, states: Vec<usize>) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return invalid("horizon must be positive");
        }
        if states.len() != jump_times.len() + 1 {
            return invalid("need exactly one more state than jump times");
        }
        let mut prev = 0.0;
        for (k, &tau) in jump_times.iter().enumerate() {
            let ok = if k == 0 { tau >= 0.0 } else { tau > prev };
            if !ok || tau > horizon {
                return invalid("jump times must be strictly increasing inside [0, T]");
            }
            prev = tau;
        }
        if states.windows(2).any(|w| w[0] == w[1]) {
            return invalid("consecutive states must differ");
        }
        Ok(Self {
            horizon,
            jump_times,
            states,
        })
    }

    pub fn constant(state: usize, horizon: f64) -> Result<Self> {
        Self::new(horizon, Vec::new(), vec![state])
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn initial_state(&self) -> usize {
        self.states[0]
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Right-continuous lookup of the state at time `t`.
    pub fn state_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let idx = self.jump_times.partition_point(|&tau| tau <= t);
        Ok(self.states[idx])
    }

    /// First jump time strictly after `t`, if any.
    pub fn next_jump_after(&self, t: f64) -> Option<f64> {
        let idx = self.jump_times.partition_point(|&tau| tau <= t);
        self.jump_times.get(idx).copied()
    }
}

/// Draws an index from a discrete distribution.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = k;
            acc += w;
            if u < acc {
                return k;
            }
        }
    }
    last
}

/// Gillespie simulation of the chain on `[0, horizon]`.
pub fn sample_chain_path<R: Rng + ?Sized>(
    spec: &LatentChainSpec,
    horizon: f64,
    rng: &mut R,
) -> Result<ChainPath> {
    let initial = sample_index(spec.prior(), rng);
    sample_chain_path_from(spec, initial, 0.0, horizon, rng)
}

/// Gillespie simulation started from a known state at time `start`; jump times
/// are returned on the absolute clock.
pub fn sample_chain_path_from<R: Rng + ?Sized>(
    spec: &LatentChainSpec,
    initial: usize,
    start: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<ChainPath> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return invalid("horizon must be positive");
    }
    if initial >= spec.n_states() {
        return invalid("initial state out of range");
    }
    let c = spec.generator();
    let j = spec.n_states();
    let mut t = start;
    let mut state = initial;
    let mut jump_times = Vec::new();
    let mut states = vec![state];
    let mut rates = vec![0.0; j];
    loop {
        let exit = -c[(state, state)];
        if exit <= 0.0 {
            break;
        }
        let hold: f64 = Exp1.sample(rng);
        t += hold / exit;
        if t > horizon {
            break;
        }
        for (k, r) in rates.iter_mut().enumerate() {
            *r = if k == state { 0.0 } else { c[(state, k)] };
        }
        state = sample_index(&rates, rng);
        jump_times.push(t);
        states.push(state);
    }
    ChainPath::new(horizon, jump_times, states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn switching_generator() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-10.0, 10.0, 10.0, -10.0])
    }

    #[test]
    fn zero_matrix_exponentiates_to_identity() {
        let e = matrix_exponential(&DMatrix::zeros(2, 2), 1.0).unwrap();
        assert_eq!(e, DMatrix::identity(2, 2));
    }

    #[test]
    fn symmetric_generator_matches_eigen_oracle() {
        let t = 1.0 / 3600.0;
        let e = matrix_exponential(&switching_generator(), t).unwrap();
        let d = (-20.0 * t).exp();
        let expected = [
            0.5 * (1.0 + d),
            0.5 * (1.0 - d),
            0.5 * (1.0 - d),
            0.5 * (1.0 + d),
        ];
        for (k, v) in expected.iter().enumerate() {
            assert_abs_diff_eq!(e[(k / 2, k % 2)], *v, epsilon = 1e-15);
        }
    }

    #[test]
    fn transition_rows_sum_to_one() {
        let c = DMatrix::from_row_slice(3, 3, &[-0.3, 0.2, 0.1, 0.05, -0.05, 0.0, 1.0, 2.0, -3.0]);
        for &t in &[0.0, 0.5, 1.0, 3.7, 10.0] {
            let e = matrix_exponential(&c, t).unwrap();
            for i in 0..3 {
                assert_abs_diff_eq!(e.row(i).sum(), 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(
            matrix_exponential(&m, 1.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matrix_exponential(&DMatrix::zeros(2, 2), -1.0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(LatentChainSpec::new(vec![], DMatrix::zeros(0, 0), vec![]).is_err());
        let bad_row = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, 0.0]);
        assert!(LatentChainSpec::new(vec![1.0, 2.0], bad_row, vec![0.5, 0.5]).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        assert!(LatentChainSpec::new(vec![1.0, 2.0], neg, vec![0.5, 0.5]).is_err());
        assert!(LatentChainSpec::constant(vec![1.0, 2.0], vec![0.6, 0.6]).is_err());
        assert!(LatentChainSpec::constant(vec![1.0, f64::INFINITY], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn frozen_chain_never_jumps() {
        let spec = LatentChainSpec::constant(vec![4.85, 5.15], vec![0.5, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = [0usize; 2];
        for _ in 0..200 {
            let path = sample_chain_path(&spec, 1.0, &mut rng).unwrap();
            assert_eq!(path.n_jumps(), 0);
            seen[path.initial_state()] += 1;
        }
        assert!(seen[0] > 50 && seen[1] > 50);
    }

    #[test]
    fn degenerate_prior_fixes_start() {
        let spec =
            LatentChainSpec::new(vec![1.0, 2.0], switching_generator(), vec![1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            assert_eq!(
                sample_chain_path(&spec, 1.0, &mut rng)
                    .unwrap()
                    .initial_state(),
                0
            );
        }
    }

    #[test]
    fn absorbing_state_stops_jumping() {
        let c = DMatrix::from_row_slice(2, 2, &[-5.0, 5.0, 0.0, 0.0]);
        let spec = LatentChainSpec::new(vec![0.0, 1.0], c, vec![1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = sample_chain_path(&spec, 10.0, &mut rng).unwrap();
            assert!(p.n_jumps() <= 1);
        }
    }

    #[test]
    fn state_lookup_is_right_continuous() {
        let p = ChainPath::new(1.0, vec![0.5], vec![0, 1]).unwrap();
        assert_eq!(p.state_at(0.5).unwrap(), 1);
        assert_eq!(p.state_at(0.5 - 1e-12).unwrap(), 0);
        assert_eq!(p.state_at(0.0).unwrap(), 0);
        assert_eq!(p.state_at(1.0).unwrap(), 1);
        assert!(matches!(p.state_at(1.5), Err(Error::TimeOutOfRange { .. })));
        let flat = ChainPath::constant(1, 2.0).unwrap();
        assert_eq!(flat.state_at(1.3).unwrap(), 1);
    }

    #[test]
    fn chain_path_validation() {
        assert!(ChainPath::new(1.0, vec![0.5, 0.4], vec![0, 1, 0]).is_err());
        assert!(ChainPath::new(1.0, vec![0.5], vec![1, 1]).is_err());
        assert!(ChainPath::new(1.0, vec![1.5], vec![0, 1]).is_err());
    }

    #[test]
    fn permutation_relabels_everything() {
        let c = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 3.0, -3.0]);
        let spec = LatentChainSpec::new(vec![1.0, 2.0], c, vec![0.2, 0.8]).unwrap();
        let p = spec.permuted(&[1, 0]).unwrap();
        assert_eq!(p.theta(), &[2.0, 1.0]);
        assert_eq!(p.prior(), &[0.8, 0.2]);
        assert_eq!(p.generator()[(0, 1)], 3.0);
    }
}
