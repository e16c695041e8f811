//! Run configuration: the tracker settings plus training and evaluation
//! options, read from TOML with unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cftrack::bench::DEFAULT_PRECISION_PX;
use cftrack::localizer::PairSampling;
use cftrack::pipeline::TrackerConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub sampling: PairSampling,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            sampling: PairSampling::default(),
            steps: 2000,
            step_size: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Center-error threshold for precision, in pixels.
    pub precision_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            precision_threshold: DEFAULT_PRECISION_PX,
        }
    }
}

/// Everything a run depends on. `tracker.seed` is the only seed: tracking
/// and scorer training both draw from it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Trained scorer head; without one the tracker fits a head on the
    /// first frame. Relative paths resolve against the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head: Option<PathBuf>,
    pub tracker: TrackerConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("{}: cannot read config", path.display()))?;
        let mut config: RunConfig = parse_toml(path, &text)?;
        if let Some(h) = &config.head {
            if h.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.head = Some(base.join(h));
            }
        }
        config
            .validate()
            .with_context(|| format!("{}: invalid configuration", path.display()))?;
        Ok(config)
    }

    pub fn validate(&self) -> cftrack::Result<()> {
        self.tracker.validate()?;
        self.training.sampling.validate()?;
        let bad = |m: &str| Err(cftrack::Error::InvalidArgument(m.into()));
        if self.training.steps == 0 {
            return bad("training.steps must be at least 1");
        }
        if !(self.training.step_size > 0.0) {
            return bad("training.step_size must be positive");
        }
        if !(self.eval.precision_threshold >= 0.0) {
            return bad("eval.precision_threshold must be non-negative");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the effective configuration, so the run can be repeated from
    /// this file alone.
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())
            .with_context(|| format!("{}: cannot write config", path.display()))
    }
}

/// Parses TOML, reporting errors as `path:line:column: message`.
pub fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let location = match e.span() {
            Some(span) => {
                let before = &text[..span.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                format!("{}:{line}:{column}", path.display())
            }
            None => path.display().to_string(),
        };
        anyhow::anyhow!("{location}: {}", e.message())
    })
}
