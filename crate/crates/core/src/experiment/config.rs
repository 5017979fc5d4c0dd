use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::abstraction::PsiComponents;
use crate::adm::AdmConfig;
use crate::agent::{Algorithm, TrainerConfig};
use crate::error::{Error, Result};
use crate::nets::OptimizerSpec;
use crate::pixelworld::{preset, WorldConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Named layout; ignored when `world` is given.
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sticky_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Fully specified custom world.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<WorldConfig>,
}

impl EnvConfig {
    pub fn resolve(&self) -> Result<WorldConfig> {
        let mut w = match &self.world {
            Some(w) => w.clone(),
            None => preset(&self.preset)?,
        };
        if let Some(p) = self.sticky_prob {
            w.sticky_prob = p;
        }
        if let Some(m) = self.max_steps {
            w.max_steps = m;
        }
        Ok(w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmSection {
    /// Without the model there is no localization and no (x, y) in the key.
    pub enabled: bool,
    pub model: AdmConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionConfig {
    /// Clustering threshold; calibrated from rendered frames when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub dim: usize,
    /// Frames are resized to this side before projection.
    pub projection_side: usize,
    pub calibration_frames: usize,
    pub psi: PsiComponents,
}

impl Default for AbstractionConfig {
    fn default() -> Self {
        Self {
            tau: None,
            dim: 64,
            projection_side: 18,
            calibration_frames: 200,
            psi: PsiComponents::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    /// Per-observation cluster assignments (clusters.csv).
    #[serde(default)]
    pub clusters: bool,
    /// Attention heatmaps of every step (attention.csv).
    #[serde(default)]
    pub attention: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub total_steps: u64,
    /// Iterations between rows of the evaluation CSVs.
    pub eval_every: u64,
    /// Iterations between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Relative paths resolve against the output root.
    pub output_dir: String,
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub adm: AdmSection,
    #[serde(default)]
    pub abstraction: AbstractionConfig,
    #[serde(default)]
    pub export: ExportConfig,
}

pub const CONFIG_PRESETS: [&str; 5] = [
    "corridor-localization",
    "four-rooms-coex",
    "four-rooms-a2c",
    "key-door-coex",
    "four-rooms-ppo",
];

impl ExperimentConfig {
    /// Named starting points for runs.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            name: name.to_string(),
            seed: 1,
            total_steps: 1_000_000,
            eval_every: 50,
            checkpoint_every: 0,
            output_dir: name.to_string(),
            env: EnvConfig {
                preset: "four-rooms-sparse".into(),
                sticky_prob: None,
                max_steps: None,
                world: None,
            },
            // The sparse goal pays once per episode, so the external reward is
            // weighted up against a bonus that pays on every step.
            trainer: TrainerConfig {
                beta_ext: 10.0,
                beta_bonus: 1.0,
                optimizer: OptimizerSpec {
                    learning_rate: 2e-3,
                    ..TrainerConfig::a2c().optimizer
                },
                ..TrainerConfig::a2c()
            },
            adm: AdmSection {
                enabled: true,
                model: AdmConfig::small(),
            },
            abstraction: AbstractionConfig::default(),
            export: ExportConfig::default(),
        };
        Ok(match name {
            "corridor-localization" => {
                let mut c = base;
                c.env.preset = "corridor".into();
                c.total_steps = 200_000;
                c.trainer.algorithm = Algorithm::Random;
                c.trainer.beta_bonus = 0.0;
                c.abstraction.psi.context = false;
                c.abstraction.psi.reward = false;
                c
            }
            "four-rooms-coex" => base,
            "four-rooms-a2c" => {
                let mut c = base;
                c.trainer.beta_bonus = 0.0;
                c.adm.enabled = false;
                c.abstraction.psi.position = false;
                c
            }
            "key-door-coex" => {
                let mut c = base;
                c.env.preset = "key-door".into();
                c
            }
            "four-rooms-ppo" => {
                let mut c = base;
                c.trainer = TrainerConfig::ppo();
                c.env.sticky_prob = Some(0.25);
                c
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown experiment preset `{other}` (known: {})",
                    CONFIG_PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if self.name.is_empty() {
            return bad("name must not be empty".into());
        }
        self.env.resolve()?;
        self.trainer.validate()?;
        self.adm.model.validate()?;
        if self.abstraction.psi.position && !self.adm.enabled {
            return bad("psi uses the position but the dynamics model is disabled".into());
        }
        if self.abstraction.tau.is_some_and(|t| !(t > 0.0)) {
            return bad("abstraction.tau must be positive".into());
        }
        if self.abstraction.dim == 0 || self.abstraction.projection_side == 0 {
            return bad("abstraction dim and projection_side must be positive".into());
        }
        if self.abstraction.tau.is_none() && self.abstraction.calibration_frames < 2 {
            return bad("tau calibration needs at least two frames".into());
        }
        if self.export.attention && !self.adm.enabled {
            return bad("attention export needs the dynamics model".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `path=value` overrides to a JSON config before parsing.
    /// Values parse as JSON, falling back to a plain string.
    pub fn from_value_with_overrides(mut value: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form path=value")))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, path, parsed)?;
        }
        let cfg: Self = serde_json::from_value(value)?;
        Ok(cfg)
    }
}

/// Sets a leaf by dotted path, creating intermediate objects.
pub fn set_path(root: &mut Value, path: &str, leaf: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("empty segment in override path `{path}`")));
        }
        let obj = match cur {
            Value::Object(m) => m,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().expect("just created")
            }
            _ => return Err(Error::Config(format!("override path `{path}` descends into a non-object"))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), leaf);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}
