//! CSV formats. Floats are written with the shortest representation that
//! parses back to the same value, so every file round-trips exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use latent_alpha::calibration::{
    generator_from_transition, EMParams, JumpParams, ModelSelectionRow,
};
use latent_alpha::simulator::{Curve, Histogram, OccupancyGrid, TrajectoryRecord};
use nalgebra::DMatrix;

use crate::{CliError, CliResult};

pub fn fmt(x: f64) -> String {
    let m = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&m) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Writes a header and rows, then renames into place.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let to_io = |e: csv::Error| CliError::Io {
            path: tmp.clone(),
            source: e.into(),
        };
        w.write_record(header).map_err(to_io)?;
        for row in rows {
            w.write_record(row).map_err(to_io)?;
        }
        let mut inner = w.into_inner().map_err(|e| CliError::Io {
            path: tmp.clone(),
            source: e.into_error(),
        })?;
        inner.flush().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Header plus `(line, cells)` rows of a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(file);
        let header: Vec<String> = r
            .headers()
            .map_err(|e| csv_err(path, 1, e.to_string()))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if header.iter().all(|h| h.is_empty()) {
            return Err(csv_err(path, 1, "missing header"));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                csv_err(path, line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    pub fn expect_header(&self, expected: &[&str]) -> CliResult<()> {
        if self.header.len() < expected.len() || self.header[..expected.len()] != *expected {
            return Err(csv_err(
                &self.path,
                1,
                format!(
                    "expected header `{}`, found `{}`",
                    expected.join(","),
                    self.header.join(",")
                ),
            ));
        }
        Ok(())
    }

    pub fn float(&self, line: u64, cell: &str, column: &str) -> CliResult<f64> {
        cell.parse::<f64>().map_err(|_| {
            csv_err(
                &self.path,
                line,
                format!("column `{column}`: cannot parse \"{cell}\" as a number"),
            )
        })
    }

    pub fn uint(&self, line: u64, cell: &str, column: &str) -> CliResult<u64> {
        cell.parse::<u64>().map_err(|_| {
            csv_err(
                &self.path,
                line,
                format!("column `{column}`: cannot parse \"{cell}\" as a non-negative integer"),
            )
        })
    }

    /// All cells of every row as floats.
    pub fn floats(&self) -> CliResult<Vec<(u64, Vec<f64>)>> {
        self.rows
            .iter()
            .map(|(line, cells)| {
                let v = cells
                    .iter()
                    .zip(&self.header)
                    .map(|(c, h)| self.float(*line, c, h))
                    .collect::<CliResult<Vec<_>>>()?;
                Ok((*line, v))
            })
            .collect()
    }

    pub fn error(&self, line: u64, message: impl Into<String>) -> CliError {
        csv_err(&self.path, line, message)
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

// ---- summary ---------------------------------------------------------------

pub fn write_summary(path: &Path, metrics: &[(String, f64)]) -> CliResult<()> {
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|(n, v)| vec![n.clone(), fmt(*v)])
        .collect();
    write_table(path, &strings(&["metric", "value"]), &rows)
}

pub fn read_summary(path: &Path) -> CliResult<Vec<(String, f64)>> {
    let t = Table::read(path)?;
    t.expect_header(&["metric", "value"])?;
    t.rows
        .iter()
        .map(|(line, c)| Ok((c[0].clone(), t.float(*line, &c[1], "value")?)))
        .collect()
}

// ---- grids and histograms ---------------------------------------------------

pub fn write_grid(path: &Path, grid: &OccupancyGrid) -> CliResult<()> {
    let mut rows = Vec::new();
    for (s, &t) in grid.times.iter().enumerate() {
        for (b, &count) in grid.counts[s].iter().enumerate() {
            rows.push(vec![
                fmt(t),
                fmt(grid.edges[b]),
                fmt(grid.edges[b + 1]),
                count.to_string(),
            ]);
        }
    }
    write_table(path, &strings(&["t", "bin_lo", "bin_hi", "count"]), &rows)
}

pub fn read_grid(path: &Path, name: &str) -> CliResult<OccupancyGrid> {
    let t = Table::read(path)?;
    t.expect_header(&["t", "bin_lo", "bin_hi", "count"])?;
    let mut times: Vec<f64> = Vec::new();
    let mut edges: Vec<f64> = Vec::new();
    let mut counts: Vec<Vec<u64>> = Vec::new();
    for (line, c) in &t.rows {
        let time = t.float(*line, &c[0], "t")?;
        let lo = t.float(*line, &c[1], "bin_lo")?;
        let hi = t.float(*line, &c[2], "bin_hi")?;
        let count = t.uint(*line, &c[3], "count")?;
        if times.last() != Some(&time) {
            times.push(time);
            counts.push(Vec::new());
        }
        let b = counts.last().map_or(0, Vec::len);
        if times.len() == 1 {
            if b == 0 {
                edges.push(lo);
            }
            edges.push(hi);
        } else if edges.get(b) != Some(&lo) || edges.get(b + 1) != Some(&hi) {
            return Err(t.error(*line, "bin edges differ between time slices"));
        }
        counts.last_mut().expect("slice pushed above").push(count);
    }
    Ok(OccupancyGrid {
        name: name.to_string(),
        times,
        edges,
        counts,
    })
}

pub fn write_histogram(path: &Path, hist: &Histogram) -> CliResult<()> {
    let rows: Vec<Vec<String>> = hist
        .counts
        .iter()
        .enumerate()
        .map(|(b, c)| vec![fmt(hist.edges[b]), fmt(hist.edges[b + 1]), c.to_string()])
        .collect();
    write_table(path, &strings(&["bin_lo", "bin_hi", "count"]), &rows)
}

pub fn read_histogram(path: &Path, name: &str) -> CliResult<Histogram> {
    let t = Table::read(path)?;
    t.expect_header(&["bin_lo", "bin_hi", "count"])?;
    let mut edges = Vec::new();
    let mut counts = Vec::new();
    for (line, c) in &t.rows {
        let lo = t.float(*line, &c[0], "bin_lo")?;
        let hi = t.float(*line, &c[1], "bin_hi")?;
        if edges.is_empty() {
            edges.push(lo);
        } else if edges.last() != Some(&lo) {
            return Err(t.error(*line, "bins are not contiguous"));
        }
        edges.push(hi);
        counts.push(t.uint(*line, &c[2], "count")?);
    }
    Ok(Histogram {
        name: name.to_string(),
        edges,
        counts,
    })
}

// ---- curves and sample paths -------------------------------------------------

/// Curves sharing one time axis, one column each.
pub fn write_curves(path: &Path, curves: &[Curve]) -> CliResult<()> {
    let mut header = vec!["t".to_string()];
    header.extend(curves.iter().map(|c| c.name.clone()));
    let times = curves.first().map(|c| c.times.clone()).unwrap_or_default();
    let rows: Vec<Vec<String>> = times
        .iter()
        .enumerate()
        .map(|(s, &t)| {
            let mut row = vec![fmt(t)];
            row.extend(curves.iter().map(|c| fmt(c.values[s])));
            row
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn read_curves(path: &Path) -> CliResult<Vec<Curve>> {
    let t = Table::read(path)?;
    t.expect_header(&["t"])?;
    let rows = t.floats()?;
    let times: Vec<f64> = rows.iter().map(|(_, r)| r[0]).collect();
    Ok(t.header[1..]
        .iter()
        .enumerate()
        .map(|(i, name)| Curve {
            name: name.clone(),
            times: times.clone(),
            values: rows.iter().map(|(_, r)| r[i + 1]).collect(),
        })
        .collect())
}

fn pi_header(prefix: &[&str], j: usize) -> Vec<String> {
    let mut h = strings(prefix);
    h.extend((1..=j).map(|i| format!("pi_{i}")));
    h
}

/// One row per path and time; `nu` is empty on the final row of each path.
pub fn write_paths(path: &Path, records: &[TrajectoryRecord]) -> CliResult<()> {
    let j = records.first().map_or(0, |r| r.pi[0].len());
    let header = pi_header(&["path", "t", "F", "S", "Q", "X", "nu"], j);
    let mut rows = Vec::new();
    for (p, r) in records.iter().enumerate() {
        for k in 0..r.t.len() {
            let mut row = vec![
                p.to_string(),
                fmt(r.t[k]),
                fmt(r.f[k]),
                fmt(r.s[k]),
                fmt(r.q[k]),
                fmt(r.x[k]),
                r.nu.get(k).map(|v| fmt(*v)).unwrap_or_default(),
            ];
            row.extend(r.pi[k].iter().map(|v| fmt(*v)));
            rows.push(row);
        }
    }
    write_table(path, &header, &rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRow {
    pub path: u64,
    pub t: f64,
    pub f: f64,
    pub s: f64,
    pub q: f64,
    pub x: f64,
    pub nu: Option<f64>,
    pub pi: Vec<f64>,
}

pub fn read_paths(path: &Path) -> CliResult<Vec<PathRow>> {
    let t = Table::read(path)?;
    t.expect_header(&["path", "t", "F", "S", "Q", "X", "nu"])?;
    t.rows
        .iter()
        .map(|(line, c)| {
            let l = *line;
            Ok(PathRow {
                path: t.uint(l, &c[0], "path")?,
                t: t.float(l, &c[1], "t")?,
                f: t.float(l, &c[2], "F")?,
                s: t.float(l, &c[3], "S")?,
                q: t.float(l, &c[4], "Q")?,
                x: t.float(l, &c[5], "X")?,
                nu: if c[6].is_empty() {
                    None
                } else {
                    Some(t.float(l, &c[6], "nu")?)
                },
                pi: c[7..]
                    .iter()
                    .zip(&t.header[7..])
                    .map(|(v, h)| t.float(l, v, h))
                    .collect::<CliResult<_>>()?,
            })
        })
        .collect()
}

// ---- datasets and filter output -----------------------------------------------

/// One day of uniformly sampled prices; `t` in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DayPath {
    pub day: u64,
    pub t: Vec<f64>,
    pub f: Vec<f64>,
}

pub fn write_dataset(path: &Path, days: &[DayPath]) -> CliResult<()> {
    let rows: Vec<Vec<String>> = days
        .iter()
        .flat_map(|d| {
            d.t.iter()
                .zip(&d.f)
                .map(move |(t, f)| vec![d.day.to_string(), fmt(*t), fmt(*f)])
        })
        .collect();
    write_table(path, &strings(&["day", "t", "F"]), &rows)
}

/// Reads `day,t,F` rows. Days must be contiguous blocks with strictly
/// increasing, uniformly spaced times.
pub fn read_dataset(path: &Path) -> CliResult<Vec<DayPath>> {
    let t = Table::read(path)?;
    if t.header != ["day", "t", "F"] {
        return Err(t.error(
            1,
            format!("expected header `day,t,F`, found `{}`", t.header.join(",")),
        ));
    }
    if t.rows.is_empty() {
        return Err(t.error(1, "dataset has no rows"));
    }
    let mut days: Vec<DayPath> = Vec::new();
    let mut step: Option<f64> = None;
    for (line, c) in &t.rows {
        let day = t.uint(*line, &c[0], "day")?;
        let time = t.float(*line, &c[1], "t")?;
        let f = t.float(*line, &c[2], "F")?;
        if !time.is_finite() || !f.is_finite() {
            return Err(t.error(*line, "non-finite value"));
        }
        match days.last_mut() {
            Some(d) if d.day == day => {
                let dt = time - d.t[d.t.len() - 1];
                if !(dt > 0.0) {
                    return Err(t.error(*line, "times must increase within a day"));
                }
                let h = *step.get_or_insert(dt);
                if (dt - h).abs() > 1e-9 * h.max(1.0) {
                    return Err(t.error(*line, format!("non-uniform time step {dt}, expected {h}")));
                }
                d.t.push(time);
                d.f.push(f);
            }
            _ => {
                if days.iter().any(|d| d.day == day) {
                    return Err(t.error(*line, format!("rows of day {day} are not contiguous")));
                }
                days.push(DayPath {
                    day,
                    t: vec![time],
                    f: vec![f],
                });
            }
        }
    }
    Ok(days)
}

/// Sampling interval of a dataset in seconds.
pub fn dataset_step(days: &[DayPath]) -> Option<f64> {
    days.iter().find(|d| d.t.len() > 1).map(|d| d.t[1] - d.t[0])
}

pub fn write_filter(path: &Path, times: &[f64], pi: &[Vec<f64>]) -> CliResult<()> {
    let j = pi.first().map_or(0, Vec::len);
    let rows: Vec<Vec<String>> = times
        .iter()
        .zip(pi)
        .map(|(t, p)| {
            let mut row = vec![fmt(*t)];
            row.extend(p.iter().map(|v| fmt(*v)));
            row
        })
        .collect();
    write_table(path, &pi_header(&["t"], j), &rows)
}

pub fn read_filter(path: &Path) -> CliResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let t = Table::read(path)?;
    t.expect_header(&["t"])?;
    let rows = t.floats()?;
    Ok((
        rows.iter().map(|(_, r)| r[0]).collect(),
        rows.iter().map(|(_, r)| r[1..].to_vec()).collect(),
    ))
}

// ---- calibration reports --------------------------------------------------------

/// Fitted parameters per state. `P_*` is the one-step transition matrix and
/// `C_*` the generator `log P / dt`, both per second.
pub fn write_params(path: &Path, params: &EMParams, dt: f64) -> CliResult<()> {
    let j = params.n_states();
    let (c, clamped) = generator_from_transition(&params.transition, dt)?;
    if clamped {
        log::warn!("matrix logarithm had negative off-diagonal entries; clamped to zero");
    }
    let mut header = strings(&["state", "pi0", "mu", "kappa", "theta"]);
    header.extend((1..=j).map(|i| format!("P_{i}")));
    header.extend((1..=j).map(|i| format!("C_{i}")));
    let rows: Vec<Vec<String>> = (0..j)
        .map(|s| {
            let p = &params.psi[s];
            let mut row = vec![
                (s + 1).to_string(),
                fmt(params.pi0[s]),
                fmt(p.mu),
                fmt(p.kappa),
                fmt(p.theta),
            ];
            row.extend((0..j).map(|c2| fmt(params.transition[(s, c2)])));
            row.extend((0..j).map(|c2| fmt(c[(s, c2)])));
            row
        })
        .collect();
    write_table(path, &header, &rows)
}

/// Reads a parameter table back into EM parameters and the generator.
pub fn read_params(path: &Path) -> CliResult<(EMParams, DMatrix<f64>)> {
    let t = Table::read(path)?;
    t.expect_header(&["state", "pi0", "mu", "kappa", "theta"])?;
    let j = t.rows.len();
    if j == 0 || t.header.len() != 5 + 2 * j {
        return Err(t.error(1, format!("expected {} columns for {j} states", 5 + 2 * j)));
    }
    let rows = t.floats()?;
    let mut p = DMatrix::zeros(j, j);
    let mut c = DMatrix::zeros(j, j);
    let mut pi0 = Vec::with_capacity(j);
    let mut psi = Vec::with_capacity(j);
    for (s, (line, r)) in rows.iter().enumerate() {
        if r[0] != (s + 1) as f64 {
            return Err(t.error(*line, format!("expected state {}", s + 1)));
        }
        pi0.push(r[1]);
        psi.push(JumpParams {
            mu: r[2],
            kappa: r[3],
            theta: r[4],
        });
        for k in 0..j {
            p[(s, k)] = r[5 + k];
            c[(s, k)] = r[5 + j + k];
        }
    }
    let params = EMParams {
        pi0,
        transition: p,
        psi,
    };
    params.validate()?;
    Ok((params, c))
}

pub const MODEL_SELECTION_HEADER: [&str; 8] = [
    "states",
    "loglik",
    "n_params",
    "bic",
    "icl",
    "iterations",
    "converged",
    "optimizer_warnings",
];

pub fn write_model_selection(path: &Path, rows: &[ModelSelectionRow]) -> CliResult<()> {
    let out: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.states.to_string(),
                fmt(r.loglik),
                r.n_params.to_string(),
                fmt(r.bic),
                fmt(r.icl),
                r.iterations.to_string(),
                (r.converged as u8).to_string(),
                r.fit.optimizer_warnings.to_string(),
            ]
        })
        .collect();
    write_table(path, &strings(&MODEL_SELECTION_HEADER), &out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    pub states: u64,
    pub loglik: f64,
    pub n_params: u64,
    pub bic: f64,
    pub icl: f64,
    pub iterations: u64,
    pub converged: bool,
    pub optimizer_warnings: u64,
}

pub fn read_model_selection(path: &Path) -> CliResult<Vec<SelectionRecord>> {
    let t = Table::read(path)?;
    t.expect_header(&MODEL_SELECTION_HEADER)?;
    t.rows
        .iter()
        .map(|(line, c)| {
            let l = *line;
            let converged = match c[6].as_str() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(t.error(
                        l,
                        format!("column `converged`: expected 0 or 1, got \"{other}\""),
                    ))
                }
            };
            Ok(SelectionRecord {
                states: t.uint(l, &c[0], "states")?,
                loglik: t.float(l, &c[1], "loglik")?,
                n_params: t.uint(l, &c[2], "n_params")?,
                bic: t.float(l, &c[3], "bic")?,
                icl: t.float(l, &c[4], "icl")?,
                iterations: t.uint(l, &c[5], "iterations")?,
                converged,
                optimizer_warnings: t.uint(l, &c[7], "optimizer_warnings")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for x in [
            0.1,
            -0.0,
            1e-300,
            5e-324,
            1.0 / 3.0,
            123456789.123,
            f64::INFINITY,
            -2.5e17,
        ] {
            let back: f64 = fmt(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x}");
        }
        assert!(fmt(f64::NAN).parse::<f64>().unwrap().is_nan());
        assert_eq!(fmt(4.440892098500626e-16), "4.440892098500626e-16");
        assert_eq!(fmt(0.25), "0.25");
    }

    #[test]
    fn dataset_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "day,t,F\n0,0,5\n0,1,5.01\n0,2,abc\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        match &err {
            CliError::Csv { line, .. } => assert_eq!(*line, 4),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "day,t,F\n0,0,5\n0,1,5\n0,3,5\n").unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(CliError::Csv { line: 4, .. })
        ));
        std::fs::write(&path, "day,t,F\n0,0,5\n1,0,5\n0,1,5\n").unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(CliError::Csv { line: 4, .. })
        ));
        std::fs::write(&path, "day,t,F\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(CliError::Csv { .. })));
        std::fs::write(&path, "day,time,F\n0,0,5\n").unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(CliError::Csv { line: 1, .. })
        ));
    }

    #[test]
    fn grid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let grid = OccupancyGrid {
            name: "q".into(),
            times: vec![0.0, 0.5, 1.0],
            edges: vec![-1.0, 0.1, 1.0 / 3.0],
            counts: vec![vec![1, 2], vec![0, 3], vec![3, 0]],
        };
        write_grid(&path, &grid).unwrap();
        assert_eq!(read_grid(&path, "q").unwrap(), grid);
    }

    #[test]
    fn histogram_round_trip_including_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let h = Histogram {
            name: "x".into(),
            edges: vec![0.0, 0.7, 1.4000000000000001],
            counts: vec![5, 9],
        };
        write_histogram(&path, &h).unwrap();
        assert_eq!(read_histogram(&path, "x").unwrap(), h);
        let empty = Histogram {
            name: "x".into(),
            edges: vec![],
            counts: vec![],
        };
        write_histogram(&path, &empty).unwrap();
        assert_eq!(read_histogram(&path, "x").unwrap(), empty);
    }
}
