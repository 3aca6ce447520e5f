//! Run configuration: a TOML file, overridden by command-line flags, with every
//! default written back out in the resolved snapshot.

use std::path::{Path, PathBuf};

use pointprobe::attack::{AttackConfig, Recipe};
use pointprobe::interaction::InteractionConfig;
use pointprobe::metrics::{FamilyConfig, MetricKind, ShapleyConfig};
use pointprobe::model::{AugmentFlags, ClassifierShape, ProtocolConfig, RewardKind, ShapeClass, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Set by `--out`; never part of the resolved snapshot.
    #[serde(skip)]
    pub out: PathBuf,
    pub data: DataConfig,
    pub oracle: OracleConfig,
    pub model: ModelConfig,
    pub analysis: AnalysisConfig,
    pub attack: AttackConfig,
    pub baseline: BaselineConfig,
    pub adversarial: AttackConfig,
    pub compare: CompareConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            oracle: OracleConfig::default(),
            model: ModelConfig::default(),
            analysis: AnalysisConfig::default(),
            attack: AttackConfig::default(),
            baseline: BaselineConfig::default(),
            adversarial: AttackConfig::training(),
            compare: CompareConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Directory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory read when `source = "directory"`.
    pub dir: Option<PathBuf>,
    pub classes: Vec<ShapeClass>,
    pub per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    /// Test clouds analysed or attacked, balanced over classes.
    pub clouds: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            dir: None,
            classes: ShapeClass::ALL.to_vec(),
            per_class: 50,
            test_per_class: 10,
            points: pointprobe::geometry::DEFAULT_POINTS,
            clouds: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub kind: OracleKind,
    /// Weight file for the built-in classifier.
    pub weights: Option<PathBuf>,
    /// Shell command speaking the line protocol.
    pub command: Option<String>,
    pub protocol: ProtocolConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            kind: OracleKind::Builtin,
            weights: None,
            command: None,
            protocol: ProtocolConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub point_dims: Vec<usize>,
    /// Hidden head widths; the input is the last point width and the output
    /// the class count.
    pub head_hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = ClassifierShape::standard(2);
        Self {
            point_dims: s.point_dims,
            head_hidden: s.head_dims[1..s.head_dims.len() - 1].to_vec(),
            train: TrainConfig {
                augment: AugmentFlags {
                    translation: true,
                    scale: true,
                    ..Default::default()
                },
                ..Default::default()
            },
        }
    }
}

impl ModelConfig {
    pub fn shape(&self, classes: usize) -> ClassifierShape {
        let mut head = vec![*self.point_dims.last().unwrap_or(&0)];
        head.extend(&self.head_hidden);
        head.push(classes);
        ClassifierShape {
            point_dims: self.point_dims.clone(),
            head_dims: head,
        }
    }
}

pub const SENSITIVITY_METRICS: [&str; 6] = ["rotation", "translation", "scale", "linearity", "planarity", "scattering"];
pub const OTHER_METRICS: [&str; 5] = ["smoothness", "correlation", "interaction", "sensitive-region", "bias"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub regions: usize,
    pub metrics: Vec<String>,
    pub reward: RewardKind,
    pub shapley: ShapleyConfig,
    pub family: FamilyConfig,
    /// Families whose attributions feed the non-smoothness table.
    pub smoothness_families: Vec<String>,
    /// Ball-query radius; twice the mean center spacing when absent.
    pub radius: Option<f64>,
    pub correlation_family: String,
    pub interaction: InteractionConfig,
    /// Clouds used for interaction profiles (the first ones analysed).
    pub interaction_clouds: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            regions: 32,
            metrics: SENSITIVITY_METRICS.iter().chain(&OTHER_METRICS).map(|s| s.to_string()).collect(),
            reward: RewardKind::ClassificationLogit,
            shapley: ShapleyConfig::default(),
            family: FamilyConfig::default(),
            smoothness_families: vec!["rotation".into(), "translation".into()],
            radius: None,
            correlation_family: "rotation".into(),
            interaction: InteractionConfig::default(),
            interaction_clouds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Random transforms per cloud for the attack baseline.
    pub samples: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { samples: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub recipes: Vec<Recipe>,
    pub metrics: Vec<String>,
    pub regions: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        let base = AugmentFlags {
            translation: true,
            scale: true,
            ..Default::default()
        };
        Self {
            recipes: vec![
                Recipe {
                    name: "baseline".into(),
                    augment: base,
                    adversarial: None,
                },
                Recipe {
                    name: "rotation-aug".into(),
                    augment: AugmentFlags {
                        rotation_random: true,
                        ..base
                    },
                    adversarial: None,
                },
                Recipe {
                    name: "no-translation-aug".into(),
                    augment: AugmentFlags {
                        translation: false,
                        ..base
                    },
                    adversarial: None,
                },
                Recipe {
                    name: "adversarial".into(),
                    augment: base,
                    adversarial: Some(AttackConfig::training()),
                },
            ],
            metrics: vec!["rotation".into(), "translation".into(), "scale".into()],
            regions: 16,
        }
    }
}

/// Flags that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub oracle_cmd: Option<String>,
    pub permutations: Option<usize>,
    pub regions: Option<usize>,
    pub metrics: Option<Vec<String>>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    pub fn load(path: Option<&Path>, over: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                toml::from_str::<RunConfig>(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = over.seed {
            cfg.seed = s;
        }
        if let Some(c) = &over.oracle_cmd {
            cfg.oracle.kind = OracleKind::External;
            cfg.oracle.command = Some(c.clone());
        }
        if let Some(m) = over.permutations {
            cfg.analysis.shapley.permutations = m;
        }
        if let Some(n) = over.regions {
            cfg.analysis.regions = n;
        }
        if let Some(m) = &over.metrics {
            cfg.analysis.metrics = m.clone();
        }
        if let Some(o) = &over.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        if self.data.classes.is_empty() || self.data.points == 0 {
            return bad("data needs at least one class and one point per cloud".into());
        }
        if self.data.source == DataSource::Directory && self.data.dir.is_none() {
            return bad("data.source = \"directory\" needs data.dir".into());
        }
        for m in &self.analysis.metrics {
            if !SENSITIVITY_METRICS.contains(&m.as_str()) && !OTHER_METRICS.contains(&m.as_str()) {
                return bad(format!("unknown metric {m:?}"));
            }
        }
        for m in self.analysis.smoothness_families.iter().chain([&self.analysis.correlation_family]).chain(&self.compare.metrics) {
            if m.parse::<MetricKind>().is_err() {
                return bad(format!("unknown transform family {m:?}"));
            }
        }
        if self.analysis.regions == 0 || self.analysis.regions > pointprobe::geometry::MAX_REGIONS {
            return bad(format!("regions must be in 1..={}", pointprobe::geometry::MAX_REGIONS));
        }
        if self.analysis.shapley.permutations == 0 {
            return bad("permutations must be at least 1".into());
        }
        if self.analysis.shapley.exact && self.analysis.regions > pointprobe::attribution::EXACT_LIMIT {
            return bad(format!("exact Shapley needs regions <= {}", pointprobe::attribution::EXACT_LIMIT));
        }
        if self.analysis.interaction.contexts == 0 {
            return bad("interaction.contexts must be at least 1".into());
        }
        if self.oracle.kind == OracleKind::External && self.oracle.command.is_none() {
            return bad("oracle.kind = \"external\" needs oracle.command".into());
        }
        if self.model.point_dims.first() != Some(&3) {
            return bad("model.point_dims must start at 3".into());
        }
        self.analysis.family.edit.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.attack.validate().map_err(|e| ConfigError(format!("attack: {e}")))?;
        self.adversarial.validate().map_err(|e| ConfigError(format!("adversarial: {e}")))?;
        Ok(())
    }

    pub fn metric_enabled(&self, name: &str) -> bool {
        self.analysis.metrics.iter().any(|m| m == name)
    }

    /// All defaults materialized.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.resolved_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(!text.contains("out ="));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[analysis]\nregons = 8").is_err());
        assert!(toml::from_str::<RunConfig>("[attack]\nstep = 0.1\n[baseline]\nsamples = 3").is_ok());
        assert!(toml::from_str::<RunConfig>("[data]\nclasses = [\"sphere\", \"blob\"]").is_err());
    }

    #[test]
    fn overrides_apply() {
        let over = Overrides {
            seed: Some(9),
            permutations: Some(7),
            regions: Some(8),
            metrics: Some(vec!["scale".into()]),
            ..Default::default()
        };
        let cfg = RunConfig::load(None, &over).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.analysis.shapley.permutations, 7);
        assert!(cfg.metric_enabled("scale") && !cfg.metric_enabled("rotation"));
        let bad = Overrides {
            metrics: Some(vec!["shear".into()]),
            ..Default::default()
        };
        assert!(RunConfig::load(None, &bad).is_err());
    }
}
