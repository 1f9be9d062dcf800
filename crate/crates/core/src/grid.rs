//! Scenario sweeps: every (UE count, loss, timer mode) cell is run for each
//! seed, pooled, and written to its own directory.
//!
//! Layout under the output directory:
//!
//! ```text
//! ues{n}_loss{p}_{mode}/ues.csv       per-UE outcomes, all seeds
//! ues{n}_loss{p}_{mode}/timers.csv    started/expired/stopped per timer
//! ues{n}_loss{p}_{mode}/summary.json  cell parameters and headline metrics
//! run_report.json                     cells written and cells that failed
//! ```

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, CellSummary, MetricsBundle, MetricsError};
use crate::nas_sim::{run_scenario, RunTrace, SimConfig, SimError};
use crate::timer_model::{
    size_registration_suite, EndpointWeights, ModelError, NodeLoadProfile, PathSpec,
    SizedTimerSuite,
};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot serialize summary: {0}")]
    Json(#[from] serde_json::Error),
}

/// Reference timer values for satellite access: MEO/GEO T3510, T3511 scaled
/// 1.8x from its terrestrial 10 s, T3550/T3560 scaled 1.8x from 6 s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedTimers {
    pub t3510: f64,
    pub t3511: f64,
    pub t3550: f64,
    pub t3560: f64,
}

impl Default for FixedTimers {
    fn default() -> Self {
        FixedTimers {
            t3510: 27.0,
            t3511: 18.0,
            t3550: 10.8,
            t3560: 10.8,
        }
    }
}

impl FixedTimers {
    pub fn suite(&self) -> SizedTimerSuite {
        SizedTimerSuite::fixed(self.t3510, self.t3511, self.t3550, self.t3560)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TimerMode {
    /// Sized from the path with the given endpoint weights.
    Adaptive { alpha: f64, beta: f64 },
    #[serde(rename = "3gpp")]
    Fixed3gpp(FixedTimers),
}

impl TimerMode {
    pub fn label(&self) -> &'static str {
        match self {
            TimerMode::Adaptive { .. } => "adaptive",
            TimerMode::Fixed3gpp(_) => "3gpp",
        }
    }
}

impl fmt::Display for TimerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioGrid {
    pub ue_counts: Vec<usize>,
    pub loss_probs: Vec<f64>,
    pub modes: Vec<TimerMode>,
    pub seeds: Vec<u64>,
    /// UE -> AMF path; the last node is the simulated AMF.
    pub path: PathSpec,
    /// Knobs shared by every cell. `num_ues`, `loss_probability`, `seed`
    /// and `amf` are overwritten per run.
    pub base: SimConfig,
    /// When set, adaptive sizing assumes the cell's whole UE population
    /// arrives within the burst window at the AMF.
    pub load_aware: bool,
}

/// Default sweep axes.
pub const DEFAULT_UE_COUNTS: [usize; 3] = [3000, 4000, 5000];
pub const DEFAULT_LOSS_PROBS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

pub fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}

/// One (UE count, loss, mode) combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellSpec {
    pub num_ues: usize,
    pub loss_probability: f64,
    pub mode: TimerMode,
}

impl CellSpec {
    pub fn dir_name(&self) -> String {
        format!(
            "ues{}_loss{}_{}",
            self.num_ues,
            self.loss_probability,
            self.mode.label()
        )
    }
}

/// Everything that determined a cell's results, written into its summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellParameters {
    pub num_ues: usize,
    pub loss_probability: f64,
    pub mode: TimerMode,
    pub timers: SizedTimerSuite,
    pub amf: NodeLoadProfile,
    pub sizing_amf: NodeLoadProfile,
    pub path_hops: usize,
    pub one_way_transit_s: f64,
    pub load_aware: bool,
    pub max_attempts: u32,
    pub burst_window: f64,
    pub background_load_fraction: f64,
    pub nas_retransmit_limit: u32,
    pub ue_processing_delay: f64,
    pub p_active: f64,
    pub p_idle: f64,
    pub horizon: f64,
}

/// Pooled results of one cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: CellSpec,
    pub parameters: CellParameters,
    pub traces: Vec<RunTrace>,
    pub metrics: MetricsBundle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedCell {
    pub cell: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub runs: usize,
    pub cells: Vec<String>,
    pub failed: Vec<FailedCell>,
}

impl ScenarioGrid {
    pub fn validate(&self) -> Result<(), GridError> {
        let invalid = |m: &str| Err(GridError::Invalid(m.to_string()));
        if self.ue_counts.is_empty() || self.loss_probs.is_empty() {
            return invalid("UE counts and loss probabilities must be nonempty");
        }
        if self.modes.is_empty() || self.seeds.is_empty() {
            return invalid("modes and seeds must be nonempty");
        }
        if self.loss_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return invalid("loss probabilities must lie in [0, 1]");
        }
        if self.ue_counts.contains(&0) {
            return invalid("UE counts must be positive");
        }
        for mode in &self.modes {
            match *mode {
                TimerMode::Adaptive { alpha, beta } => {
                    EndpointWeights::new(alpha, beta)?;
                }
                TimerMode::Fixed3gpp(t) => {
                    if [t.t3510, t.t3511, t.t3550, t.t3560]
                        .iter()
                        .any(|v| !(v.is_finite() && *v > 0.0))
                    {
                        return invalid("fixed timer values must be positive");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &num_ues in &self.ue_counts {
            for &loss_probability in &self.loss_probs {
                for &mode in &self.modes {
                    out.push(CellSpec {
                        num_ues,
                        loss_probability,
                        mode,
                    });
                }
            }
        }
        out
    }

    /// The AMF profile adaptive sizing sees for a cell.
    pub fn sizing_amf(&self, num_ues: usize) -> Result<NodeLoadProfile, ModelError> {
        let amf = *self.path.responder();
        if !self.load_aware {
            return Ok(amf);
        }
        let window = self.base.burst_window;
        if !(window > 0.0) {
            return Ok(amf);
        }
        NodeLoadProfile::new(
            amf.service_rate,
            amf.steady_arrival,
            amf.steady_arrival + num_ues as f64 / window,
            window,
        )
    }

    /// Timer suite a cell runs with.
    pub fn timers_for(&self, cell: &CellSpec) -> Result<SizedTimerSuite, ModelError> {
        match cell.mode {
            TimerMode::Fixed3gpp(t) => Ok(t.suite()),
            TimerMode::Adaptive { alpha, beta } => {
                let mut nodes = self.path.nodes().to_vec();
                *nodes.last_mut().expect("nonempty path") = self.sizing_amf(cell.num_ues)?;
                let path = PathSpec::new(nodes, self.path.link_delays().to_vec())?;
                size_registration_suite(&path, EndpointWeights::new(alpha, beta)?)
            }
        }
    }

    fn cell_parameters(&self, cell: &CellSpec) -> Result<CellParameters, GridError> {
        let b = &self.base;
        Ok(CellParameters {
            num_ues: cell.num_ues,
            loss_probability: cell.loss_probability,
            mode: cell.mode,
            timers: self.timers_for(cell)?,
            amf: *self.path.responder(),
            sizing_amf: self.sizing_amf(cell.num_ues)?,
            path_hops: self.path.hops(),
            one_way_transit_s: self.path.one_way_transit()?,
            load_aware: self.load_aware,
            max_attempts: b.max_attempts,
            burst_window: b.burst_window,
            background_load_fraction: b.background_load_fraction,
            nas_retransmit_limit: b.nas_retransmit_limit,
            ue_processing_delay: b.ue_processing_delay,
            p_active: b.energy.p_active,
            p_idle: b.energy.p_idle,
            horizon: b.horizon,
        })
    }

    fn config_for(&self, cell: &CellSpec, seed: u64) -> SimConfig {
        SimConfig {
            num_ues: cell.num_ues,
            loss_probability: cell.loss_probability,
            seed,
            amf: *self.path.responder(),
            ..self.base.clone()
        }
    }

    /// Runs one cell across every seed, sequentially.
    pub fn run_cell(&self, cell: &CellSpec) -> Result<CellResult, GridError> {
        let parameters = self.cell_parameters(cell)?;
        let traces = self
            .seeds
            .iter()
            .map(|&seed| run_scenario(&self.config_for(cell, seed), &parameters.timers, &self.path))
            .collect::<Result<Vec<_>, _>>()?;
        let metrics = metrics::reduce(&traces)?;
        Ok(CellResult {
            cell: *cell,
            parameters,
            traces,
            metrics,
        })
    }
}

/// Writes one cell's CSVs and summary into `out/<cell dir>`.
pub fn write_cell(out: &Path, result: &CellResult, seeds: &[u64]) -> Result<PathBuf, GridError> {
    let dir = out.join(result.cell.dir_name());
    fs::create_dir_all(&dir).map_err(|source| GridError::Io {
        path: dir.clone(),
        source,
    })?;
    let create = |name: &str| {
        let path = dir.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|source| GridError::Io { path, source })
    };
    metrics::write_ue_csv(&result.traces, create("ues.csv")?)?;
    metrics::write_timer_csv(&result.metrics, create("timers.csv")?)?;
    let summary = CellSummary::new(result.parameters.clone(), seeds.to_vec(), &result.metrics);
    serde_json::to_writer_pretty(create("summary.json")?, &summary)?;
    Ok(dir)
}

/// Runs every cell (in parallel when `workers > 1`) and writes artifacts.
///
/// Cells that fail are listed in the report; the rest are still written.
pub fn run_grid(grid: &ScenarioGrid, out: &Path, workers: usize) -> Result<RunReport, GridError> {
    grid.validate()?;
    fs::create_dir_all(out).map_err(|source| GridError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let cells = grid.cells();
    let run_one = |cell: &CellSpec| -> Result<(), GridError> {
        let result = grid.run_cell(cell)?;
        write_cell(out, &result, &grid.seeds)?;
        Ok(())
    };
    let outcomes: Vec<Result<(), GridError>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| GridError::Invalid(format!("worker pool: {e}")))?;
        use rayon::prelude::*;
        pool.install(|| cells.par_iter().map(run_one).collect())
    } else {
        cells.iter().map(run_one).collect()
    };

    let mut report = RunReport {
        runs: cells.len() * grid.seeds.len(),
        ..RunReport::default()
    };
    for (cell, outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(()) => report.cells.push(cell.dir_name()),
            Err(e) => report.failed.push(FailedCell {
                cell: cell.dir_name(),
                error: e.to_string(),
            }),
        }
    }
    let report_path = out.join("run_report.json");
    let file = File::create(&report_path).map_err(|source| GridError::Io {
        path: report_path,
        source,
    })?;
    serde_json::to_writer_pretty(BufWriter::new(file), &report)?;
    Ok(report)
}

/// Reads back every `summary.json` under `out`, ordered by cell directory.
pub fn read_summaries(out: &Path) -> Result<Vec<(String, serde_json::Value)>, GridError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GridError::Io { path, source }
    };
    let mut rows = Vec::new();
    for entry in fs::read_dir(out).map_err(io(out))? {
        let entry = entry.map_err(io(out))?;
        let summary = entry.path().join("summary.json");
        if summary.is_file() {
            let text = fs::read_to_string(&summary).map_err(io(&summary))?;
            rows.push((
                entry.file_name().to_string_lossy().into_owned(),
                serde_json::from_str(&text)?,
            ));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(rows)
}
