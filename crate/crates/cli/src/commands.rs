use std::path::{Path, PathBuf};

use latent_alpha::calibration::{model_selection, Dataset};
use latent_alpha::filtering::ObservationStep;
use latent_alpha::simulator::monte_carlo_study;
use latent_alpha::ModelSpec;

use crate::config::{parse_states, RunConfig};
use crate::io::{
    dataset_step, read_dataset, write_curves, write_dataset, write_filter, write_grid,
    write_histogram, write_model_selection, write_params, write_paths, write_summary, DayPath,
};
use crate::{CliError, CliResult};

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub states: Option<String>,
}

fn output_dir(cfg: &RunConfig, ov: &Overrides) -> CliResult<PathBuf> {
    let dir = ov
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

/// Runs the paired Monte Carlo study and writes its CSVs. Times in the
/// study files are in hours; `dataset.csv` holds the unaffected prices of
/// the sample paths with `t` in seconds.
pub fn cmd_simulate(cfg: &RunConfig, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    let study = cfg.study_config()?;
    let n_paths = ov.paths.unwrap_or(cfg.n_paths);
    let seed = ov.seed.unwrap_or(cfg.seed);
    let dir = output_dir(cfg, ov)?;
    log::info!("simulating {n_paths} paths with seed {seed}");
    let summary = monte_carlo_study(&study, n_paths, seed)?;

    let mut written = Vec::new();
    let mut emit = |name: String| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_summary(&emit("summary.csv".into()), &summary.metrics)?;
    for g in &summary.grids {
        write_grid(&emit(format!("grid_{}.csv", g.name)), g)?;
    }
    for h in &summary.histograms {
        write_histogram(&emit(format!("histogram_{}.csv", h.name)), h)?;
    }
    write_curves(&emit("curves.csv".into()), &summary.curves)?;
    write_paths(&emit("paths.csv".into()), &summary.sample_paths)?;
    let days: Vec<DayPath> = summary
        .sample_paths
        .iter()
        .enumerate()
        .map(|(d, r)| DayPath {
            day: d as u64,
            t: r.t.iter().map(|t| t * SECONDS_PER_HOUR).collect(),
            f: r.f.clone(),
        })
        .collect();
    write_dataset(&emit("dataset.csv".into()), &days)?;
    Ok(written)
}

fn observation(
    model: &ModelSpec,
    b: Option<f64>,
    day: &DayPath,
    k: usize,
) -> CliResult<ObservationStep> {
    let dt = (day.t[k + 1] - day.t[k]) / SECONDS_PER_HOUR;
    let df = day.f[k + 1] - day.f[k];
    Ok(match model {
        ModelSpec::Ou { .. } => ObservationStep::diffusive(dt, df),
        ModelSpec::Jump { .. } => {
            let b = b.ok_or_else(|| CliError::Config("missing key `b`".into()))?;
            let m = (df / b).round();
            if (df / b - m).abs() > 1e-6 {
                return Err(latent_alpha::Error::DataFormat(format!(
                    "day {}, t={}: price change {df} is not a multiple of the tick {b}",
                    day.day,
                    day.t[k + 1]
                ))
                .into());
            }
            let m = m as i64;
            ObservationStep::jumps(dt, b, m.max(0) as u32, (-m).max(0) as u32)
        }
    })
}

/// Runs the model's filter over each day of `data` and writes
/// `filter_day_<day>.csv`.
pub fn cmd_filter(cfg: &RunConfig, data: &Path, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    let model = cfg.model_spec()?;
    let days = read_dataset(data)?;
    let dir = output_dir(cfg, ov)?;
    let mut written = Vec::new();
    for day in &days {
        let mut filter = model.filter()?;
        let mut pi = vec![filter.posterior().to_vec()];
        for k in 0..day.t.len() - 1 {
            let obs = observation(&model, cfg.b, day, k)?;
            filter.observe(day.f[k], &obs)?;
            pi.push(filter.posterior().to_vec());
        }
        let path = dir.join(format!("filter_day_{}.csv", day.day));
        write_filter(&path, &day.t, &pi)?;
        written.push(path);
    }
    Ok(written)
}

/// Fits the censored jump model for each state count and writes
/// `params_J<j>.csv` plus `model_selection.csv`. Rates are per second.
pub fn cmd_calibrate(cfg: &RunConfig, data: &Path, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    let days = read_dataset(data)?;
    let dt = dataset_step(&days).ok_or_else(|| {
        latent_alpha::Error::DataFormat("every day has a single observation".into())
    })?;
    let prices: Vec<Vec<f64>> = days.into_iter().map(|d| d.f).collect();
    let dataset = Dataset::new(prices, dt, cfg.calibration_tick()?)?;
    let states = match &ov.states {
        Some(s) => parse_states(s)?,
        None => {
            if cfg.states_min == 0 || cfg.states_min > cfg.states_max {
                return Err(CliError::Config(
                    "need 1 <= states_min <= states_max".into(),
                ));
            }
            (cfg.states_min..=cfg.states_max).collect()
        }
    };
    let dir = output_dir(cfg, ov)?;
    log::info!(
        "calibrating {} days x {} steps for J in {states:?}",
        dataset.n_paths(),
        dataset.n_steps()
    );
    let rows = model_selection(&dataset, states, &cfg.em_options())?;
    let mut written = Vec::new();
    for r in &rows {
        if !r.converged {
            log::warn!(
                "EM for J={} stopped after {} iterations without converging",
                r.states,
                r.iterations
            );
        }
        let path = dir.join(format!("params_J{}.csv", r.states));
        write_params(&path, &r.fit.params, dt)?;
        written.push(path);
    }
    let path = dir.join("model_selection.csv");
    write_model_selection(&path, &rows)?;
    written.push(path);
    Ok(written)
}
