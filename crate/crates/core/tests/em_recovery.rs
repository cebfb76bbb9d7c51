use latent_alpha::calibration::{
    bic, em_step, fit_em, fit_states, icl, initial_params, loglik, n_params,
    simulate_censored_dataset, EMParams, EmOptions, JumpParams,
};
use latent_alpha::latent_chain::matrix_exponential;
use latent_alpha::simulator::path_rng;
use nalgebra::DMatrix;

fn two_state(kappa_scale: f64) -> EMParams {
    let c = DMatrix::from_row_slice(2, 2, &[-0.00792, 0.00792, 0.00245, -0.00245]);
    EMParams {
        pi0: vec![0.7969, 0.2031],
        transition: matrix_exponential(&c, 1.0).unwrap(),
        psi: vec![
            JumpParams {
                mu: 0.0899,
                kappa: 0.0897 * kappa_scale,
                theta: 0.02,
            },
            JumpParams {
                mu: 0.0183,
                kappa: 0.0100 * kappa_scale,
                theta: 0.0201,
            },
        ],
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

#[test]
fn loglik_never_decreases_over_fifty_iterations() {
    let truth = two_state(1.0);
    let data =
        simulate_censored_dataset(&truth, 1.0, 0.01, 0.0, 10, 3600, &mut path_rng(1, 0)).unwrap();
    let opts = EmOptions::default();
    let mut params = initial_params(&data, 2, &opts).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..50 {
        let step = em_step(&data, &params, &opts).unwrap();
        assert!(step.loglik >= prev - 1e-9, "{} < {prev}", step.loglik);
        prev = step.loglik;
        params = step.params;
    }
    assert!(loglik(&data, &params).unwrap() >= prev - 1e-9);
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn single_state_estimates_are_unbiased() {
    let truth = JumpParams {
        mu: 0.0334,
        kappa: 0.0748,
        theta: 0.02,
    };
    let gen = EMParams {
        pi0: vec![1.0],
        transition: DMatrix::from_element(1, 1, 1.0),
        psi: vec![truth],
    };
    let mut est = [Vec::new(), Vec::new(), Vec::new()];
    for seed in 0..20 {
        let data =
            simulate_censored_dataset(&gen, 1.0, 0.01, 0.0, 50, 3600, &mut path_rng(2, seed))
                .unwrap();
        let fit = fit_states(&data, 1, &EmOptions::default()).unwrap();
        assert!(fit.converged);
        let p = fit.params.psi[0];
        assert!(rel(p.mu, truth.mu) < 0.15, "seed {seed}: mu {}", p.mu);
        est[0].push(p.mu);
        est[1].push(p.kappa);
        est[2].push(p.theta);
    }
    for (name, (v, want)) in
        ["mu", "kappa", "theta"]
            .iter()
            .zip(est.iter().zip([truth.mu, truth.kappa, truth.theta]))
    {
        let (m, se) = mean_and_se(v);
        assert!(
            (m - want).abs() < 3.0 * se,
            "{name}: mean {m}, se {se}, truth {want}"
        );
    }
}

#[test]
fn two_state_fit_recovers_strongly_reverting_regimes() {
    let truth = two_state(100.0);
    for seed in 0..3 {
        let data =
            simulate_censored_dataset(&truth, 1.0, 0.01, 0.0, 50, 3600, &mut path_rng(3, seed))
                .unwrap();
        let fit = fit_states(&data, 2, &EmOptions::default()).unwrap();
        for (got, want) in fit.params.psi.iter().zip(&truth.psi) {
            assert!(
                rel(got.mu, want.mu) < 0.2,
                "seed {seed}: mu {} vs {}",
                got.mu,
                want.mu
            );
            assert!(
                rel(got.kappa, want.kappa) < 0.2,
                "seed {seed}: kappa {} vs {}",
                got.kappa,
                want.kappa
            );
        }
        assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        // the heuristic start reaches the optimum found from the truth
        let from_truth = fit_em(&data, &truth, &EmOptions::default()).unwrap();
        assert!(
            fit.loglik >= from_truth.loglik - 1e-3,
            "{} < {}",
            fit.loglik,
            from_truth.loglik
        );
    }
}

#[test]
fn relabelling_leaves_scores_unchanged() {
    let truth = two_state(10.0);
    let data =
        simulate_censored_dataset(&truth, 1.0, 0.01, 0.0, 5, 2000, &mut path_rng(4, 0)).unwrap();
    let swapped = truth.permuted(&[1, 0]);
    let (l1, l2) = (
        loglik(&data, &truth).unwrap(),
        loglik(&data, &swapped).unwrap(),
    );
    assert!((l1 - l2).abs() < 1e-9 * l1.abs());
    let np = n_params(2);
    assert_eq!(np, 1 + 2 + 6);
    assert_eq!(
        bic(l1, np, data.n_steps(), data.n_paths()),
        bic(l2, np, data.n_steps(), data.n_paths())
    );
    let (i1, i2) = (icl(&data, &truth).unwrap(), icl(&data, &swapped).unwrap());
    assert!((i1 - i2).abs() < 1e-9 * i1.abs());
}

#[test]
fn fit_from_truth_stays_near_truth() {
    let truth = two_state(10.0);
    let data =
        simulate_censored_dataset(&truth, 1.0, 0.01, 0.0, 20, 3600, &mut path_rng(5, 0)).unwrap();
    let fit = fit_em(&data, &truth, &EmOptions::default()).unwrap();
    assert!(fit.loglik >= loglik(&data, &truth).unwrap() - 1e-9);
    for (got, want) in fit.params.psi.iter().zip(&truth.psi) {
        assert!(rel(got.mu, want.mu) < 0.2);
    }
}
