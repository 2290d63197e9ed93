//! Run configuration: one JSON document describing a reproducible experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::ReplayOptions;
use crate::error::{Error, Result};
use crate::evaluation::{EvaluationConfig, Mode, Source};
use crate::navigator::{OffsetSchedule, Schedule};
use crate::registration::RegistrationConfig;
use crate::simulator::WorldConfig;
use crate::strategy::{StrategyConfig, StrategyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    /// Landmark tables, turnover and teaching.
    pub world: u64,
    /// Offsets, observation noise and odometry of the repeat traversals.
    pub run: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `seed` inside is ignored in favour of `seeds.world`.
    pub world: WorldConfig,
    pub strategies: Vec<StrategyConfig>,
    pub schedule: Schedule,
    pub mode: Mode,
    pub offsets: OffsetSchedule,
    /// Closed-loop start offset of every traversal.
    pub initial_offset_m: f64,
    pub registration: RegistrationConfig,
    pub evaluation: EvaluationConfig,
    pub seeds: Seeds,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: WorldConfig::default(),
            strategies: StrategyKind::ALL.into_iter().map(StrategyConfig::new).collect(),
            schedule: Schedule::default(),
            mode: Mode::OpenLoop,
            offsets: OffsetSchedule::default(),
            initial_offset_m: 0.0,
            registration: RegistrationConfig::default(),
            evaluation: EvaluationConfig::default(),
            seeds: Seeds::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::json("run configuration", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::json(format!("run configuration {}", path.display()), source),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.world_config().validate()?;
        self.schedule.validate()?;
        self.registration.validate()?;
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        for s in &self.strategies {
            s.validate()?;
        }
        let mut labels: Vec<String> = self.strategies.iter().map(StrategyConfig::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("strategy label {:?} used twice; set `name`", w[0])));
        }
        let e = &self.evaluation;
        if !(e.alpha > 0.0 && e.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} must lie in (0, 1)", e.alpha)));
        }
        if e.cdf_thresholds_px.is_empty() || e.cdf_thresholds_px.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("cdf thresholds must be a non-empty list of finite numbers".into()));
        }
        if let Some(p) = e.failure_penalty_px {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::Config(format!("failure penalty {p} must be non-negative")));
            }
        }
        if !self.initial_offset_m.is_finite() {
            return Err(Error::Config("initial offset must be finite".into()));
        }
        if let OffsetSchedule::Uniform { amplitude_m } = self.offsets {
            if !(amplitude_m.is_finite() && amplitude_m >= 0.0) {
                return Err(Error::Config("offset amplitude must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// The world configuration with the world seed applied.
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            seed: self.seeds.world,
            ..self.world.clone()
        }
    }

    pub fn replay_options(&self) -> ReplayOptions {
        ReplayOptions::from_world(&self.world)
    }

    pub fn simulation_source(&self) -> Source {
        Source::World {
            world: self.world_config(),
            mode: self.mode,
            offsets: self.offsets.clone(),
            initial_offset_m: self.initial_offset_m,
            run_seed: self.seeds.run,
        }
    }
}
