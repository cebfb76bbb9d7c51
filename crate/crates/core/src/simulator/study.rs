use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::CostParams;
use crate::error::{invalid, Error, Result};
use crate::latent_chain::ChainPath;
use crate::model::ModelSpec;

use super::{
    excess_return, run_strategy, simulate_market, step_count, time_grid, AlmgrenChriss, JumpScheme,
    OptimalStrategy, TrajectoryRecord,
};

/// Source of the latent path in a study.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentScenario {
    /// Every path uses the same latent trajectory.
    Fixed(ChainPath),
    /// Each path draws its own latent trajectory from the chain.
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub model: ModelSpec,
    pub costs: CostParams,
    pub f0: f64,
    pub dt: f64,
    pub latent: LatentScenario,
    pub jump_scheme: JumpScheme,
    /// Number of time slices recorded for grids and curves.
    pub grid_slices: usize,
    pub grid_bins: usize,
    pub histogram_bins: usize,
    /// Number of full trajectories kept for plotting.
    pub sample_paths: usize,
}

/// Counts of paths per (time slice, value bin).
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub name: String,
    pub times: Vec<f64>,
    pub edges: Vec<f64>,
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub name: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary {
    pub n_paths: usize,
    /// Ordered `(metric, value)` pairs.
    pub metrics: Vec<(String, f64)>,
    pub grids: Vec<OccupancyGrid>,
    pub histograms: Vec<Histogram>,
    pub curves: Vec<Curve>,
    /// Optimal-strategy trajectories of the first few paths.
    pub sample_paths: Vec<TrajectoryRecord>,
}

impl StudySummary {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

struct PathOutcome {
    star_value: f64,
    ac_value: f64,
    excess_bps: Option<f64>,
    max_abs_terminal_q: f64,
    terminal_pi_true: f64,
    nu: Vec<f64>,
    q: Vec<f64>,
    pi: Vec<Vec<f64>>,
    ac_nu: Vec<f64>,
    ac_q: Vec<f64>,
    record: Option<TrajectoryRecord>,
}

/// Per-path generator: the master seed with the path index as stream.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn slice_indices(k_steps: usize, slices: usize) -> Vec<usize> {
    let s = slices.max(1);
    (0..=s).map(|i| i * k_steps / s).collect()
}

fn one_path(
    cfg: &StudyConfig,
    star: &OptimalStrategy,
    ac: &AlmgrenChriss,
    slices: &[usize],
    seed: u64,
    index: usize,
) -> Result<PathOutcome> {
    let mut rng = path_rng(seed, index as u64);
    let latent = match &cfg.latent {
        LatentScenario::Fixed(p) => Some(p),
        LatentScenario::Sampled => None,
    };
    let market = simulate_market(
        &cfg.model,
        cfg.costs.b,
        latent,
        cfg.f0,
        cfg.costs.horizon,
        cfg.dt,
        cfg.jump_scheme,
        &mut rng,
    )?;
    let mut filter = cfg.model.filter()?;
    let rec = run_strategy(&market, star, &cfg.costs, filter.as_mut())?;
    let mut filter = cfg.model.filter()?;
    let rec_ac = run_strategy(&market, ac, &cfg.costs, filter.as_mut())?;
    let k_steps = rec.n_steps();
    let nu_at = |r: &TrajectoryRecord, k: usize| r.nu[k.min(k_steps - 1)];
    let true_state = market.latent.state_at(cfg.costs.horizon)?;
    let excess_bps = match excess_return(&rec, &rec_ac) {
        Ok(v) => Some(v),
        Err(Error::UndefinedBaseline) => None,
        Err(e) => return Err(e),
    };
    Ok(PathOutcome {
        star_value: rec.terminal_value,
        ac_value: rec_ac.terminal_value,
        excess_bps,
        max_abs_terminal_q: rec
            .terminal_inventory
            .abs()
            .max(rec_ac.terminal_inventory.abs()),
        terminal_pi_true: rec.pi[k_steps][true_state],
        nu: slices.iter().map(|&k| nu_at(&rec, k)).collect(),
        q: slices.iter().map(|&k| rec.q[k]).collect(),
        pi: slices.iter().map(|&k| rec.pi[k].clone()).collect(),
        ac_nu: slices.iter().map(|&k| nu_at(&rec_ac, k)).collect(),
        ac_q: slices.iter().map(|&k| rec_ac.q[k]).collect(),
        record: (index < cfg.sample_paths).then_some(rec),
    })
}

fn range_of(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        let pad = 1e-6 * lo.abs().max(1.0);
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect()
}

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let x = ((v - lo) / (hi - lo) * bins as f64).floor();
    (x.max(0.0) as usize).min(bins - 1)
}

fn histogram(name: &str, values: &[f64], bins: usize) -> Histogram {
    if values.is_empty() {
        return Histogram {
            name: name.into(),
            edges: Vec::new(),
            counts: Vec::new(),
        };
    }
    let (lo, hi) = range_of(values.iter().copied());
    let mut counts = vec![0; bins];
    for &v in values {
        counts[bin_of(v, lo, hi, bins)] += 1;
    }
    Histogram {
        name: name.into(),
        edges: edges(lo, hi, bins),
        counts,
    }
}

/// `series[path][slice]`.
fn grid(name: &str, times: &[f64], series: &[Vec<f64>], bins: usize) -> OccupancyGrid {
    let (lo, hi) = range_of(series.iter().flatten().copied());
    let mut counts = vec![vec![0; bins]; times.len()];
    for path in series {
        for (s, &v) in path.iter().enumerate() {
            counts[s][bin_of(v, lo, hi, bins)] += 1;
        }
    }
    OccupancyGrid {
        name: name.into(),
        times: times.to_vec(),
        edges: edges(lo, hi, bins),
        counts,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn curves(name: &str, times: &[f64], series: &[Vec<f64>]) -> [Curve; 2] {
    let n = series.len() as f64;
    let mean = (0..times.len())
        .map(|s| series.iter().map(|p| p[s]).sum::<f64>() / n)
        .collect();
    let med = (0..times.len())
        .map(|s| median(&mut series.iter().map(|p| p[s]).collect::<Vec<_>>()))
        .collect();
    [
        Curve {
            name: format!("{name}_mean"),
            times: times.to_vec(),
            values: mean,
        },
        Curve {
            name: format!("{name}_median"),
            times: times.to_vec(),
            values: med,
        },
    ]
}

fn fraction(values: impl Iterator<Item = bool>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for v in values {
        n += 1;
        hit += v as usize;
    }
    if n == 0 {
        f64::NAN
    } else {
        hit as f64 / n as f64
    }
}

/// Paired Monte Carlo comparison of the optimal strategy with Almgren–Chriss
/// on common market paths. Path `i` draws from stream `i` of the master seed,
/// so results do not depend on scheduling.
pub fn monte_carlo_study(cfg: &StudyConfig, n_paths: usize, seed: u64) -> Result<StudySummary> {
    if n_paths == 0 {
        return invalid("a study needs at least one path");
    }
    if cfg.grid_bins == 0 || cfg.histogram_bins == 0 {
        return invalid("bin counts must be positive");
    }
    cfg.costs.validate()?;
    let times = time_grid(cfg.costs.horizon, cfg.dt)?;
    let k_steps = step_count(cfg.costs.horizon, cfg.dt)?;
    let star = OptimalStrategy::new(&cfg.model, &cfg.costs, &times)?;
    let ac = AlmgrenChriss::new(&cfg.costs)?;
    let slices = slice_indices(k_steps, cfg.grid_slices);
    let slice_times: Vec<f64> = slices.iter().map(|&k| times[k]).collect();

    let outcomes = (0..n_paths)
        .into_par_iter()
        .map(|i| one_path(cfg, &star, &ac, &slices, seed, i))
        .collect::<Result<Vec<_>>>()?;

    let j_states = cfg.model.chain().n_states();
    let excess: Vec<f64> = outcomes.iter().filter_map(|o| o.excess_bps).collect();
    let diff: Vec<f64> = outcomes.iter().map(|o| o.star_value - o.ac_value).collect();
    let book0 = cfg.costs.n_init * cfg.f0;
    let profit: Vec<f64> = outcomes.iter().map(|o| o.star_value - book0).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut metrics = vec![
        ("n_paths".to_string(), n_paths as f64),
        (
            "fraction_beats_ac".into(),
            fraction(outcomes.iter().map(|o| o.star_value > o.ac_value)),
        ),
        (
            "fraction_positive_excess_return".into(),
            fraction(excess.iter().map(|&e| e > 0.0)),
        ),
        (
            "fraction_positive_profit".into(),
            fraction(profit.iter().map(|&p| p > 0.0)),
        ),
        (
            "mean_terminal_value".into(),
            mean(&outcomes.iter().map(|o| o.star_value).collect::<Vec<_>>()),
        ),
        (
            "mean_terminal_value_ac".into(),
            mean(&outcomes.iter().map(|o| o.ac_value).collect::<Vec<_>>()),
        ),
        ("mean_value_difference".into(), mean(&diff)),
        ("mean_profit".into(), mean(&profit)),
        (
            "mean_terminal_posterior_true_state".into(),
            mean(
                &outcomes
                    .iter()
                    .map(|o| o.terminal_pi_true)
                    .collect::<Vec<_>>(),
            ),
        ),
        (
            "max_abs_terminal_inventory".into(),
            outcomes
                .iter()
                .map(|o| o.max_abs_terminal_q)
                .fold(0.0, f64::max),
        ),
    ];
    if !excess.is_empty() {
        metrics.push(("mean_excess_return_bps".into(), mean(&excess)));
        metrics.push((
            "median_excess_return_bps".into(),
            median(&mut excess.clone()),
        ));
    }

    let nu: Vec<Vec<f64>> = outcomes.iter().map(|o| o.nu.clone()).collect();
    let q: Vec<Vec<f64>> = outcomes.iter().map(|o| o.q.clone()).collect();
    let ac_nu: Vec<Vec<f64>> = outcomes.iter().map(|o| o.ac_nu.clone()).collect();
    let ac_q: Vec<Vec<f64>> = outcomes.iter().map(|o| o.ac_q.clone()).collect();
    let mut grids = vec![
        grid("nu", &slice_times, &nu, cfg.grid_bins),
        grid("q", &slice_times, &q, cfg.grid_bins),
    ];
    let mut curve_list: Vec<Curve> = Vec::new();
    curve_list.extend(curves("nu", &slice_times, &nu));
    curve_list.extend(curves("q", &slice_times, &q));
    curve_list.extend(curves("nu_ac", &slice_times, &ac_nu));
    curve_list.extend(curves("q_ac", &slice_times, &ac_q));
    for j in 0..j_states {
        let pi: Vec<Vec<f64>> = outcomes
            .iter()
            .map(|o| o.pi.iter().map(|p| p[j]).collect())
            .collect();
        let name = format!("pi_{}", j + 1);
        grids.push(grid(&name, &slice_times, &pi, cfg.grid_bins));
        curve_list.extend(curves(&name, &slice_times, &pi));
    }
    let mut histograms = vec![histogram("value_difference", &diff, cfg.histogram_bins)];
    if !excess.is_empty() {
        histograms.push(histogram("excess_return_bps", &excess, cfg.histogram_bins));
    }
    let sample_paths = outcomes.into_iter().filter_map(|o| o.record).collect();
    Ok(StudySummary {
        n_paths,
        metrics,
        grids,
        histograms,
        curves: curve_list,
        sample_paths,
    })
}
