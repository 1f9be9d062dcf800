//! TOML run configuration.
//!
//! ```toml
//! snapshot = "leo_stress.json"   # relative to this file
//! origin = "ue"
//! responder = "amf"
//! out = "artifacts"
//! workers = 1
//! load_aware = true
//!
//! [grid]
//! ues = [3000, 4000, 5000]
//! loss = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
//! modes = ["adaptive", "3gpp"]
//! seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
//!
//! [adaptive]
//! alpha = 0.1
//! beta = 0.64
//!
//! [fixed]
//! t3510 = 27.0
//! t3511 = 18.0
//! t3550 = 10.8
//! t3560 = 10.8
//!
//! [sim]
//! max_attempts = 5
//! burst_window = 0.001
//! background_load_fraction = 0.8
//! nas_retransmit_limit = 4
//! ```

use std::path::{Path, PathBuf};

use nas_timer::grid::{default_seeds, FixedTimers, DEFAULT_LOSS_PROBS, DEFAULT_UE_COUNTS};
use nas_timer::nas_sim::{EnergyModel, SimConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub snapshot: PathBuf,
    pub origin: String,
    pub responder: String,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "yes")]
    pub load_aware: bool,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub adaptive: AdaptiveSection,
    #[serde(default)]
    pub fixed: FixedTimers,
    #[serde(default)]
    pub sim: SimSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("artifacts")
}

fn default_workers() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_ues")]
    pub ues: Vec<usize>,
    #[serde(default = "default_loss")]
    pub loss: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_ues() -> Vec<usize> {
    DEFAULT_UE_COUNTS.to_vec()
}

fn default_loss() -> Vec<f64> {
    DEFAULT_LOSS_PROBS.to_vec()
}

fn default_modes() -> Vec<String> {
    vec!["adaptive".into(), "3gpp".into()]
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            ues: default_ues(),
            loss: default_loss(),
            modes: default_modes(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSection {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        AdaptiveSection {
            alpha: 0.1,
            beta: 0.64,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub max_attempts: u32,
    pub burst_window: f64,
    pub background_load_fraction: f64,
    pub nas_retransmit_limit: u32,
    pub ue_processing_delay: f64,
    pub p_active: f64,
    pub p_idle: f64,
    pub horizon: f64,
    pub t3502: Option<f64>,
    pub queue_sample_interval: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSection {
            max_attempts: d.max_attempts,
            burst_window: d.burst_window,
            background_load_fraction: d.background_load_fraction,
            nas_retransmit_limit: d.nas_retransmit_limit,
            ue_processing_delay: d.ue_processing_delay,
            p_active: d.energy.p_active,
            p_idle: d.energy.p_idle,
            horizon: d.horizon,
            t3502: d.t3502,
            queue_sample_interval: d.queue_sample_interval,
        }
    }
}

impl SimSection {
    /// Base simulation config; per-run fields are filled in by the grid.
    pub fn to_sim_config(&self) -> SimConfig {
        SimConfig {
            max_attempts: self.max_attempts,
            burst_window: self.burst_window,
            background_load_fraction: self.background_load_fraction,
            nas_retransmit_limit: self.nas_retransmit_limit,
            ue_processing_delay: self.ue_processing_delay,
            energy: EnergyModel {
                p_active: self.p_active,
                p_idle: self.p_idle,
            },
            horizon: self.horizon,
            t3502: self.t3502,
            queue_sample_interval: self.queue_sample_interval,
            ..SimConfig::default()
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))?;
        if cfg.snapshot.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.snapshot = dir.join(&cfg.snapshot);
            }
        }
        Ok(cfg)
    }
}
