use latent_alpha::control::{Alpha, CostParams};
use latent_alpha::latent_chain::ChainPath;
use latent_alpha::simulator::{
    monte_carlo_study, path_rng, run_strategy, simulate_jump_path, simulate_market,
    simulate_ou_path, AlmgrenChriss, JumpScheme, LatentScenario, OptimalStrategy, StudyConfig,
    Twap,
};
use latent_alpha::{LatentChainSpec, ModelSpec};

fn liquidation_costs(alpha: Alpha) -> CostParams {
    CostParams {
        a: 1e-5,
        b: 0.01,
        beta: 1e-3,
        phi: 2e-5,
        alpha,
        horizon: 1.0,
        n_init: 1e4,
    }
}

fn round_trip_costs() -> CostParams {
    CostParams {
        a: 1e-5,
        b: 0.01,
        beta: 1e-3,
        phi: 3e-6,
        alpha: Alpha::Infinite,
        horizon: 1.0,
        n_init: 0.0,
    }
}

fn ou_model(theta: [f64; 2], kappa: f64, sigma: f64) -> ModelSpec {
    ModelSpec::Ou {
        chain: LatentChainSpec::constant(theta.to_vec(), vec![0.5, 0.5]).unwrap(),
        kappa,
        sigma,
    }
}

fn jump_model(kappa: f64) -> ModelSpec {
    ModelSpec::Jump {
        chain: LatentChainSpec::symmetric_two_state([4.9, 5.1], 10.0, [0.5, 0.5]).unwrap(),
        mu: 481.0,
        kappa,
    }
}

fn study(model: ModelSpec, costs: CostParams, dt: f64, latent: LatentScenario) -> StudyConfig {
    StudyConfig {
        model,
        costs,
        f0: 5.0,
        dt,
        latent,
        jump_scheme: JumpScheme::Exact,
        grid_slices: 10,
        grid_bins: 8,
        histogram_bins: 8,
        sample_paths: 3,
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn book_value_changes_by_gains_minus_costs() {
    let costs = liquidation_costs(Alpha::Finite(0.1));
    let model = ou_model([4.85, 5.15], 2.0, 0.15);
    let dt = 1.0 / 600.0;
    let latent = ChainPath::constant(1, 1.0).unwrap();
    let times: Vec<f64> = (0..=600).map(|k| k as f64 / 600.0).collect();
    let star = OptimalStrategy::new(&model, &costs, &times).unwrap();
    let ac = AlmgrenChriss::new(&costs).unwrap();
    let twap = Twap { horizon: 1.0 };
    for seed in 0..5 {
        let mut rng = path_rng(11, seed);
        let market = simulate_market(
            &model,
            costs.b,
            Some(&latent),
            5.0,
            1.0,
            dt,
            JumpScheme::Exact,
            &mut rng,
        )
        .unwrap();
        for strategy in [&star as &dyn latent_alpha::simulator::Strategy, &ac, &twap] {
            let mut filter = model.filter().unwrap();
            let rec = run_strategy(&market, strategy, &costs, filter.as_mut()).unwrap();
            let k = rec.n_steps();
            assert_eq!(rec.q.len(), k + 1);
            assert_eq!(rec.pi.len(), k + 1);
            let mut gains = 0.0;
            for i in 0..k {
                let h = rec.t[i + 1] - rec.t[i];
                assert_eq!(rec.q[i + 1], rec.q[i] + rec.nu[i] * h);
                let ds = rec.s[i + 1] - rec.s[i];
                gains += rec.q[i + 1] * ds - costs.a * rec.nu[i] * rec.nu[i] * h;
                let s = rec.f[i] + costs.beta * (rec.q[i] - costs.n_init);
                assert!((rec.s[i] - s).abs() < 1e-12);
            }
            let book = |i: usize| rec.x[i] + rec.q[i] * rec.s[i];
            let change = book(k) - book(0);
            assert!(
                (change - gains).abs() < 1e-9 * (1.0 + gains.abs()),
                "{change} vs {gains}"
            );
        }
    }
}

#[test]
fn without_alpha_term_the_optimal_strategy_is_ac() {
    for model in [
        ou_model([4.85, 5.15], 0.0, 0.15),
        ou_model([4.85, 5.15], 0.0, 0.02),
    ] {
        let cfg = study(
            model,
            liquidation_costs(Alpha::Infinite),
            1.0 / 600.0,
            LatentScenario::Sampled,
        );
        let s = monte_carlo_study(&cfg, 20, 3).unwrap();
        assert_eq!(s.metric("mean_value_difference"), Some(0.0));
        assert_eq!(s.metric("mean_excess_return_bps"), Some(0.0));
        for name in ["nu", "q"] {
            let a = s
                .curves
                .iter()
                .find(|c| c.name == format!("{name}_mean"))
                .unwrap();
            let b = s
                .curves
                .iter()
                .find(|c| c.name == format!("{name}_ac_mean"))
                .unwrap();
            assert_eq!(a.values, b.values);
        }
    }
    let cfg = study(
        jump_model(0.0),
        round_trip_costs(),
        1.0 / 600.0,
        LatentScenario::Sampled,
    );
    let s = monte_carlo_study(&cfg, 20, 3).unwrap();
    assert_eq!(s.metric("mean_value_difference"), Some(0.0));
}

#[test]
fn studies_do_not_depend_on_the_thread_pool() {
    let cfg = study(
        ou_model([4.85, 5.15], 2.0, 0.15),
        liquidation_costs(Alpha::Infinite),
        1.0 / 360.0,
        LatentScenario::Sampled,
    );
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| monte_carlo_study(&cfg, 40, 9).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, monte_carlo_study(&cfg, 40, 9).unwrap());
}

#[test]
fn liquidation_completes_at_the_horizon() {
    let cfg = study(
        ou_model([4.85, 5.15], 2.0, 0.15),
        liquidation_costs(Alpha::Infinite),
        1.0 / 3600.0,
        LatentScenario::Sampled,
    );
    let s = monte_carlo_study(&cfg, 50, 1).unwrap();
    assert!(s.metric("max_abs_terminal_inventory").unwrap() <= 1e-6 * 1e4);
    let latent = ChainPath::new(1.0, vec![0.5], vec![1, 0]).unwrap();
    let cfg = study(
        jump_model(1077.0),
        round_trip_costs(),
        1.0 / 3600.0,
        LatentScenario::Fixed(latent),
    );
    let s = monte_carlo_study(&cfg, 20, 1).unwrap();
    assert!(s.metric("max_abs_terminal_inventory").unwrap() <= 1e-6);
}

#[test]
fn single_path_grids_hold_one_unit_per_slice() {
    let cfg = study(
        ou_model([4.85, 5.15], 2.0, 0.15),
        liquidation_costs(Alpha::Infinite),
        1.0 / 360.0,
        LatentScenario::Sampled,
    );
    let s = monte_carlo_study(&cfg, 1, 4).unwrap();
    assert_eq!(s.grids.len(), 4);
    for g in &s.grids {
        assert_eq!(g.counts.len(), 11);
        for slice in &g.counts {
            assert_eq!(slice.iter().sum::<u64>(), 1);
        }
    }
    for (name, v) in &s.metrics {
        if name.starts_with("fraction") {
            assert!((0.0..=1.0).contains(v), "{name} = {v}");
        }
    }
}

#[test]
fn ou_terminal_mean_matches_moment_formula() {
    let (theta, kappa, f0) = (5.15, 2.0, 5.0);
    let dt = 1.0 / 3600.0;
    let finals: Vec<f64> = (0..10_000)
        .map(|i| {
            let mut rng = path_rng(21, i);
            *simulate_ou_path(theta, kappa, 0.15, f0, 1.0, dt, &mut rng)
                .unwrap()
                .last()
                .unwrap()
        })
        .collect();
    let (m, se) = mean_se(&finals);
    let expected = theta + (f0 - theta) * (-kappa).exp();
    assert!(
        (m - expected).abs() < 3.0 * se,
        "{m} vs {expected} (se {se})"
    );
}

struct JumpRun {
    last: f64,
    total: f64,
    compensator: f64,
}

fn jump_runs(kappa: f64, theta: f64, seed: u64, n: u64) -> Vec<JumpRun> {
    let latent = ChainPath::constant(0, 1.0).unwrap();
    let dt = 1.0 / 3600.0;
    (0..n)
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let p = simulate_jump_path(
                &latent,
                &[theta],
                481.0,
                kappa,
                0.01,
                5.0,
                dt,
                JumpScheme::Exact,
                &mut rng,
            )
            .unwrap();
            let total = p.n_plus.iter().chain(&p.n_minus).map(|&c| c as f64).sum();
            let k = p.prices.len() - 1;
            let area: f64 = p.prices[..k].iter().map(|f| (theta - f).abs() * dt).sum();
            JumpRun {
                last: p.prices[k],
                total,
                compensator: 2.0 * 481.0 + kappa * area,
            }
        })
        .collect()
}

#[test]
fn driftless_jumps_form_a_symmetric_walk() {
    let runs = jump_runs(0.0, 5.1, 31, 10_000);
    let f: Vec<f64> = runs.iter().map(|r| r.last).collect();
    let (m, se) = mean_se(&f);
    assert!((m - 5.0).abs() < 3.0 * se, "{m} (se {se})");
    let n: Vec<f64> = runs.iter().map(|r| r.total).collect();
    let (m, se) = mean_se(&n);
    assert!((m - 2.0 * 481.0).abs() < 3.0 * se, "{m} (se {se})");
}

#[test]
fn jump_counts_match_their_compensator() {
    let runs = jump_runs(1077.0, 5.0, 51, 4000);
    let gap: Vec<f64> = runs.iter().map(|r| r.total - r.compensator).collect();
    let (m, se) = mean_se(&gap);
    assert!(m.abs() < 3.0 * se, "{m} (se {se})");
    let n: Vec<f64> = runs.iter().map(|r| r.total).collect();
    assert!(mean_se(&n).0 > 2.0 * 481.0);
}

#[test]
fn mean_reversion_holds_the_price_near_its_level() {
    let free = jump_runs(0.0, 5.0, 41, 2000);
    let pinned = jump_runs(1077.0, 5.0, 41, 2000);
    let spread =
        |r: &[JumpRun]| r.iter().map(|x| (x.last - 5.0).abs()).sum::<f64>() / r.len() as f64;
    assert!(spread(&pinned) < 0.5 * spread(&free));
}
