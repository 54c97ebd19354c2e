//! Run configuration; every run writes its config next to its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smart::problems::{PresetParams, Problem, ProblemSpec, PRESETS};
use smart::schedule::DelayMode;

use crate::error::CliError;

/// Largest delay a replay log can store.
pub const MAX_TAU: usize = u8::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sync,
    /// Deterministic engine with a scheduled delay pattern.
    Delay,
    /// Threaded executor with measured delays.
    Async,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum ProblemSource {
    File { path: PathBuf },
    Generated { spec: ProblemSpec, seed: u64 },
}

impl ProblemSource {
    pub fn load(&self) -> Result<Problem, CliError> {
        match self {
            ProblemSource::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                Ok(serde_json::from_str(&text)?)
            }
            ProblemSource::Generated { spec, seed } => Ok(spec.generate(*seed)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub mode: Mode,
    pub tau_p: usize,
    pub tau_d: usize,
    /// Pattern used in `delay` mode.
    pub delay_mode: DelayMode,
    /// Worker threads in `async` mode.
    pub workers: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { mode: Mode::Sync, tau_p: 0, tau_d: 0, delay_mode: DelayMode::ConstantMax, workers: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: String,
    #[serde(default)]
    pub params: PresetParams,
    pub problem: ProblemSource,
    pub seed: u64,
    pub iters: u64,
    /// Stop once the residual falls to this value.
    pub stop_resid: Option<f64>,
    /// Constant step size overriding the preset default.
    pub lambda: Option<f64>,
    /// Trace sampling period; 0 picks about 200 rows.
    #[serde(default)]
    pub stride: u64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !PRESETS.contains(&self.preset.as_str()) {
            return bad(format!("unknown preset {}; expected one of {}", self.preset, PRESETS.join(", ")));
        }
        if self.iters == 0 {
            return bad("iteration budget must be positive".into());
        }
        if let Some(t) = self.stop_resid {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("stop residual {t}"));
            }
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("step size {l}"));
            }
        }
        let s = &self.schedule;
        if s.tau_p > MAX_TAU || s.tau_d > MAX_TAU {
            return bad(format!("delays above {MAX_TAU} cannot be recorded"));
        }
        match s.mode {
            Mode::Sync if s.tau_p + s.tau_d > 0 => bad("sync mode runs without delays; use --mode delay".into()),
            Mode::Delay if s.delay_mode == DelayMode::Recorded => bad("recorded delays come from verify-replay".into()),
            Mode::Async if s.tau_d > 0 => bad("async mode reads the current dual table; --tau-d must be 0".into()),
            Mode::Async if s.workers == 0 => bad("at least one worker is required".into()),
            _ => Ok(()),
        }
    }

    /// Trace stride actually used.
    pub fn effective_stride(&self) -> u64 {
        if self.stride > 0 {
            self.stride
        } else {
            (self.iters / 200).max(1)
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
