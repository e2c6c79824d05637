use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use cfcurate_core::clients::{EndpointConfig, ReasoningConstraints};
use cfcurate_core::codec::LossPolicy;
use cfcurate_core::pipeline::{DatasetMixSpec, FilterConfig, LabelConfig, RolloutConfig};
use cfcurate_core::scenelab::LabelerConfig;

/// Everything a run needs, loaded from one TOML file. Flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub synth: SynthConfig,
    pub rollout: RolloutConfig,
    pub filter: FilterConfig,
    pub labeler: LabelerConfig,
    pub loss: LossPolicy,
    pub reasoning: ReasoningConstraints,
    pub label_cf: LabelCfConfig,
    pub mix: Option<DatasetMixSpec>,
    pub policy: PolicyBackend,
    pub teacher: TeacherBackend,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            output_dir: PathBuf::from("."),
            synth: SynthConfig::default(),
            rollout: RolloutConfig::default(),
            filter: FilterConfig::default(),
            labeler: LabelerConfig::default(),
            loss: LossPolicy::default(),
            reasoning: ReasoningConstraints::default(),
            label_cf: LabelCfConfig::default(),
            mix: None,
            policy: PolicyBackend::default(),
            teacher: TeacherBackend::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub suite: String,
    pub count: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            suite: "mixed".into(),
            count: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelCfConfig {
    pub round: u32,
    pub max_attempts: u32,
}

impl Default for LabelCfConfig {
    fn default() -> Self {
        Self {
            round: 1,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Upper edges of the minADE difficulty bands, in meters.
    pub bands: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bands: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyBackend {
    Mock {
        #[serde(default = "default_strength")]
        strength: f64,
    },
    Http(EndpointConfig),
}

fn default_strength() -> f64 {
    0.3
}

impl Default for PolicyBackend {
    fn default() -> Self {
        PolicyBackend::Mock {
            strength: default_strength(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherBackend {
    #[default]
    Stub,
    Http(EndpointConfig),
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn label_config(&self) -> LabelConfig {
        LabelConfig {
            filter: self.filter,
            constraints: self.reasoning.clone(),
            loss: self.loss,
            round: self.label_cf.round,
            include_route: self.rollout.include_route,
            max_attempts: self.label_cf.max_attempts,
        }
    }

    /// Resolves a relative output path against `output_dir`.
    pub fn output(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.output_dir.join(path)
        }
    }
}
