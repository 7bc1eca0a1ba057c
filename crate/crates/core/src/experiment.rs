//! Monte Carlo experiments: convergence traces, rate-target sweeps and
//! receive-antenna sweeps, written as CSV.
//!
//! Realizations run through [`Execution`]; rows come back in job order and
//! are written by a single writer, so output depends only on the spec.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{self, BeamformerSet, LinkEvaluator};
use crate::mmse::mmse_receivers;
use crate::sca::{self, IterateState, Mode, SolverOptions};
use crate::scenario::{ChannelSet, Scenario, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Convergence,
    SweepRate,
    SweepAntennas,
    Single,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::SweepRate => "sweep-rate",
            ExperimentKind::SweepAntennas => "sweep-antennas",
            ExperimentKind::Single => "single",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub scenario: ScenarioConfig,
    /// Rate targets in Mbit/s for `SweepRate`, receive antennas for `SweepAntennas`.
    pub grid: Vec<f64>,
    pub realizations: usize,
    pub seed_base: u64,
    pub modes: Vec<Mode>,
    pub solver: SolverOptions,
    pub execution: Execution,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, scenario: ScenarioConfig) -> Self {
        Self {
            kind,
            scenario,
            grid: Vec::new(),
            realizations: 20,
            seed_base: 0,
            modes: vec![Mode::Joint],
            solver: SolverOptions::default(),
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::Config("at least one realization is required".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        match self.kind {
            ExperimentKind::SweepRate | ExperimentKind::SweepAntennas if self.grid.is_empty() => {
                return Err(Error::Config(format!("{} needs a nonempty grid", self.kind.as_str())));
            }
            ExperimentKind::SweepRate => {
                if let Some(r) = self.grid.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
                    return Err(Error::Config(format!("invalid rate target {r}")));
                }
            }
            ExperimentKind::SweepAntennas => {
                if let Some(m) = self.grid.iter().find(|m| !(**m >= 1.0 && m.fract() == 0.0)) {
                    return Err(Error::Config(format!("invalid antenna count {m}")));
                }
            }
            _ => {}
        }
        self.solver.validate()?;
        // catches topology errors before any worker starts
        self.scenario.build()?;
        Ok(())
    }

    fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.realizations as u64).map(move |i| self.seed_base + i)
    }

    fn options(&self, mode: Mode) -> SolverOptions {
        SolverOptions {
            mode,
            execution: Execution::Sequential,
            ..self.solver
        }
    }
}

/// One output row. Unavailable values (infeasible points) are left empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment: &'static str,
    pub seed: u64,
    pub iter: usize,
    pub mode: &'static str,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub rate_target_mbps: f64,
    pub ee_mbit_per_joule: Option<f64>,
    pub sum_rate_mbps: Option<f64>,
    pub total_power_w: Option<f64>,
    pub active_unicast_streams: Option<usize>,
    pub status: String,
}

impl Row {
    pub fn is_feasible(&self) -> bool {
        self.ee_mbit_per_joule.is_some()
    }
}

/// Mean and standard deviation per (experiment, mode, M, N, rate target).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: &'static str,
    pub mode: &'static str,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub rate_target_mbps: f64,
    pub realizations: usize,
    pub infeasible: usize,
    pub mean_ee_mbit_per_joule: Option<f64>,
    pub std_ee_mbit_per_joule: Option<f64>,
    pub mean_active_unicast_streams: Option<f64>,
}

/// True metrics of final beamformers, recomputed with fresh MMSE receivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub ee: f64,
    pub sum_rate: f64,
    pub total_power: f64,
}

pub fn evaluate(scenario: &Scenario, channels: &ChannelSet, beams: &BeamformerSet) -> Result<Evaluation> {
    let n0 = scenario.radio.noise_power_w;
    let receivers = mmse_receivers(&scenario.topology, channels, beams, n0, Execution::Sequential)?;
    let eval = LinkEvaluator::new(&scenario.topology, channels, beams, &receivers, n0)?;
    let report = metrics::rates(&eval, &scenario.radio, &scenario.power);
    Ok(Evaluation {
        ee: report.energy_efficiency,
        sum_rate: report.sum_rate,
        total_power: report.total_power,
    })
}

fn final_row(experiment: ExperimentKind, scenario: &Scenario, channels: &ChannelSet, mode: Mode, state: &IterateState, threshold: f64) -> Result<Row> {
    let e = evaluate(scenario, channels, &state.beams)?;
    Ok(Row {
        ee_mbit_per_joule: Some(e.ee / 1e6),
        sum_rate_mbps: Some(e.sum_rate / 1e6),
        total_power_w: Some(e.total_power),
        active_unicast_streams: Some(sca::count_active_unicast_streams(state, scenario, threshold)),
        status: state.termination.as_str().to_string(),
        iter: state.iteration,
        ..blank_row(experiment, scenario, mode)
    })
}

fn blank_row(experiment: ExperimentKind, scenario: &Scenario, mode: Mode) -> Row {
    let topo = &scenario.topology;
    Row {
        experiment: experiment.as_str(),
        seed: scenario.seed,
        iter: 0,
        mode: mode.as_str(),
        m: topo.rx_antennas(0),
        n: topo.bs_antennas(0),
        rate_target_mbps: scenario.rate_targets_bps.first().copied().unwrap_or(0.0) / 1e6,
        ee_mbit_per_joule: None,
        sum_rate_mbps: None,
        total_power_w: None,
        active_unicast_streams: None,
        status: String::new(),
    }
}

fn infeasible_row(experiment: ExperimentKind, scenario: &Scenario, mode: Mode) -> Row {
    Row {
        status: "infeasible".into(),
        ..blank_row(experiment, scenario, mode)
    }
}

fn build(config: &ScenarioConfig, seed: u64) -> Result<(Scenario, ChannelSet)> {
    let scenario = config.with_seed(seed).build()?;
    let channels = scenario.channels();
    Ok((scenario, channels))
}

/// One row per (seed, mode, SCA iteration) of the EE trace; the initial
/// point is not a row.
pub fn run_convergence(spec: &ExperimentSpec) -> Result<Vec<Row>> {
    spec.validate()?;
    let jobs: Vec<(u64, Mode)> = spec.seeds().flat_map(|s| spec.modes.iter().map(move |&m| (s, m))).collect();
    let results = spec.execution.map(&jobs, |&(seed, mode)| -> Result<Vec<Row>> {
        let (scenario, channels) = build(&spec.scenario, seed)?;
        let state = sca::run(&scenario, &channels, &spec.options(mode)).map_err(|e| e.with_seed(seed))?;
        let mut rows: Vec<Row> = state
            .trace
            .iter()
            .filter(|t| t.iteration > 0)
            .map(|t| Row {
                iter: t.iteration,
                ee_mbit_per_joule: Some(t.ee / 1e6),
                sum_rate_mbps: Some(t.sum_rate / 1e6),
                total_power_w: Some(t.total_power),
                active_unicast_streams: Some(t.active_streams),
                status: t.solver_status.map_or("", |s| s.as_str()).to_string(),
                ..blank_row(ExperimentKind::Convergence, &scenario, mode)
            })
            .collect();
        if let Some(last) = rows.last_mut() {
            last.status = state.termination.as_str().to_string();
        }
        Ok(rows)
    });
    flatten(results)
}

/// Final point per (seed, mode) at the scenario's own settings.
pub fn run_single(spec: &ExperimentSpec) -> Result<Vec<Row>> {
    spec.validate()?;
    let jobs: Vec<(u64, Mode)> = spec.seeds().flat_map(|s| spec.modes.iter().map(move |&m| (s, m))).collect();
    let results = spec.execution.map(&jobs, |&(seed, mode)| -> Result<Vec<Row>> {
        let (scenario, channels) = build(&spec.scenario, seed)?;
        solve_point(ExperimentKind::Single, &scenario, &channels, &spec.options(mode), None).map(|(row, _)| vec![row])
    });
    flatten(results)
}

/// Solve one point; infeasibility becomes a flagged row, other errors propagate.
/// `warm` is an optional second starting point (feasible beams of a harder instance).
fn solve_point(
    kind: ExperimentKind,
    scenario: &Scenario,
    channels: &ChannelSet,
    options: &SolverOptions,
    warm: Option<&BeamformerSet>,
) -> Result<(Row, Option<IterateState>)> {
    let seed = scenario.seed;
    let cold = match sca::run(scenario, channels, options) {
        Ok(state) => Some(state),
        Err(e) if e.is_infeasible() => None,
        Err(e) => return Err(e.with_seed(seed)),
    };
    let warm = match warm.map(|b| sca::state_from_beams(scenario, channels, b.clone(), options)) {
        Some(Ok(start)) => Some(sca::run_from(start, scenario, channels, options).map_err(|e| e.with_seed(seed))?),
        Some(Err(e)) if e.is_infeasible() => None,
        Some(Err(e)) => return Err(e.with_seed(seed)),
        None => None,
    };
    let best = match (cold, warm) {
        (Some(c), Some(w)) => Some(if w.ee() > c.ee() { w } else { c }),
        (c, w) => c.or(w),
    };
    match best {
        Some(state) => Ok((final_row(kind, scenario, channels, options.mode, &state, options.active_stream_threshold)?, Some(state))),
        None => Ok((infeasible_row(kind, scenario, options.mode), None)),
    }
}

/// Final EE per (rate target, mode, seed). Each seed walks the grid from the
/// highest target down and also starts from the solution of the previous,
/// stricter target, which is feasible for the looser one.
pub fn run_sweep_rate(spec: &ExperimentSpec) -> Result<Vec<Row>> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..spec.grid.len()).collect();
    order.sort_by(|&a, &b| spec.grid[b].total_cmp(&spec.grid[a]));
    let jobs: Vec<(u64, Mode)> = spec.modes.iter().flat_map(|&m| spec.seeds().map(move |s| (s, m))).collect();
    let results = spec.execution.map(&jobs, |&(seed, mode)| -> Result<Vec<(usize, Row)>> {
        let mut rows = Vec::with_capacity(order.len());
        let mut previous: Option<BeamformerSet> = None;
        for &i in &order {
            let config = ScenarioConfig {
                rate_target_mbps: spec.grid[i],
                ..spec.scenario.clone()
            };
            let (scenario, channels) = build(&config, seed)?;
            let (row, state) = solve_point(ExperimentKind::SweepRate, &scenario, &channels, &spec.options(mode), previous.as_ref())?;
            if let Some(state) = state {
                previous = Some(state.beams);
            }
            rows.push((i, row));
        }
        Ok(rows)
    });
    let mut rows: Vec<(usize, usize, Row)> = Vec::new();
    for (job, r) in results.into_iter().enumerate() {
        rows.extend(r?.into_iter().map(|(i, row)| (i, job, row)));
    }
    // grid order, then mode, then seed
    rows.sort_by_key(|(i, job, _)| (*i, *job));
    Ok(rows.into_iter().map(|(_, _, row)| row).collect())
}

/// Final EE and active private streams per (M, mode, seed).
pub fn run_sweep_antennas(spec: &ExperimentSpec) -> Result<Vec<Row>> {
    spec.validate()?;
    let jobs: Vec<(usize, Mode, u64)> = spec
        .grid
        .iter()
        .flat_map(|&m| spec.modes.iter().flat_map(move |&mode| spec.seeds().map(move |s| (m as usize, mode, s))))
        .collect();
    let results = spec.execution.map(&jobs, |&(m, mode, seed)| -> Result<Vec<Row>> {
        let config = ScenarioConfig {
            rx_antennas: m,
            ..spec.scenario.clone()
        };
        let (scenario, channels) = build(&config, seed)?;
        solve_point(ExperimentKind::SweepAntennas, &scenario, &channels, &spec.options(mode), None).map(|(row, _)| vec![row])
    });
    flatten(results)
}

pub fn run(spec: &ExperimentSpec) -> Result<Vec<Row>> {
    match spec.kind {
        ExperimentKind::Convergence => run_convergence(spec),
        ExperimentKind::SweepRate => run_sweep_rate(spec),
        ExperimentKind::SweepAntennas => run_sweep_antennas(spec),
        ExperimentKind::Single => run_single(spec),
    }
}

fn flatten(results: Vec<Result<Vec<Row>>>) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Aggregate final rows; convergence rows contribute their last iteration only.
pub fn summarize(rows: &[Row]) -> Vec<SummaryRow> {
    let finals: Vec<&Row> = rows
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            r.experiment != ExperimentKind::Convergence.as_str()
                || rows.get(i + 1).is_none_or(|next| next.seed != r.seed || next.mode != r.mode || next.iter <= r.iter)
        })
        .map(|(_, r)| r)
        .collect();
    let mut out: Vec<SummaryRow> = Vec::new();
    let key = |r: &Row| (r.experiment, r.mode, r.m, r.n, r.rate_target_mbps.to_bits());
    let mut keys: Vec<_> = Vec::new();
    for r in &finals {
        if !keys.contains(&key(r)) {
            keys.push(key(r));
        }
    }
    for k in keys {
        let group: Vec<&&Row> = finals.iter().filter(|r| key(r) == k).collect();
        let ee: Vec<f64> = group.iter().filter_map(|r| r.ee_mbit_per_joule).collect();
        let active: Vec<f64> = group.iter().filter_map(|r| r.active_unicast_streams.map(|a| a as f64)).collect();
        let first = group[0];
        out.push(SummaryRow {
            experiment: first.experiment,
            mode: first.mode,
            m: first.m,
            n: first.n,
            rate_target_mbps: first.rate_target_mbps,
            realizations: group.len(),
            infeasible: group.len() - ee.len(),
            mean_ee_mbit_per_joule: mean(&ee),
            std_ee_mbit_per_joule: std_dev(&ee),
            mean_active_unicast_streams: mean(&active),
        });
    }
    out
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Sample standard deviation; zero for a single value.
fn std_dev(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    if v.len() < 2 {
        return Some(0.0);
    }
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

/// `results.csv` -> `results.summary.csv`.
pub fn summary_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    path.with_file_name(format!("{stem}.summary.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, iter: usize, ee: Option<f64>) -> Row {
        Row {
            experiment: "single",
            seed,
            iter,
            mode: "joint",
            m: 2,
            n: 4,
            rate_target_mbps: 1.0,
            ee_mbit_per_joule: ee,
            sum_rate_mbps: None,
            total_power_w: None,
            active_unicast_streams: ee.map(|_| 1),
            status: String::new(),
        }
    }

    #[test]
    fn summary_statistics() {
        let rows = vec![row(0, 3, Some(1.0)), row(1, 3, Some(3.0)), row(2, 0, None)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].realizations, 3);
        assert_eq!(s[0].infeasible, 1);
        assert_eq!(s[0].mean_ee_mbit_per_joule, Some(2.0));
        assert!((s[0].std_ee_mbit_per_joule.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn convergence_summary_uses_last_iteration() {
        let mut rows: Vec<Row> = (0..3).map(|i| row(0, i, Some(i as f64))).collect();
        rows.extend((0..2).map(|i| row(1, i, Some(10.0 + i as f64))));
        for r in &mut rows {
            r.experiment = "convergence";
        }
        let s = summarize(&rows);
        assert_eq!(s[0].realizations, 2);
        assert_eq!(s[0].mean_ee_mbit_per_joule, Some((2.0 + 11.0) / 2.0));
    }

    #[test]
    fn csv_header_is_fixed() {
        let mut buf = Vec::new();
        write_csv(&[row(0, 0, None)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "experiment,seed,iter,mode,M,N,rate_target_mbps,ee_mbit_per_joule,sum_rate_mbps,total_power_w,active_unicast_streams,status\n"
        ));
        assert!(text.contains("single,0,0,joint,2,4,1.0,,,,,"));
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::new(ExperimentKind::SweepRate, ScenarioConfig::default());
        assert!(spec.validate().is_err());
        spec.grid = vec![36.0];
        spec.realizations = 0;
        assert!(spec.validate().is_err());
        spec.realizations = 1;
        assert!(spec.validate().is_ok());
        spec.kind = ExperimentKind::SweepAntennas;
        spec.grid = vec![1.5];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn summary_file_name() {
        assert_eq!(summary_path(Path::new("/tmp/out.csv")), Path::new("/tmp/out.summary.csv"));
    }
}
