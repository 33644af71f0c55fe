//! Run configuration as read from JSON.

use std::fmt;
use std::path::{Path, PathBuf};

use fscil_core::benchmark::{toy_fscil_config, SyntheticStream, ToyBenchmarkConfig};
use fscil_core::classifier::fill_template;
use fscil_core::protocol::DEFAULT_TEMPLATE;
use fscil_core::trainer::{Ablation, OptimizerConfig};
use fscil_core::FscilConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Where the frozen backbone comes from: `"toy"` or `"adapter:<path>"`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Backbone {
    #[default]
    Toy,
    /// A saved bundle file.
    Adapter(PathBuf),
}

impl TryFrom<String> for Backbone {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s == "toy" {
            return Ok(Backbone::Toy);
        }
        match s.strip_prefix("adapter:") {
            Some(p) if !p.is_empty() => Ok(Backbone::Adapter(PathBuf::from(p))),
            _ => Err(format!("backbone must be \"toy\" or \"adapter:<path>\", got {s:?}")),
        }
    }
}

impl From<Backbone> for String {
    fn from(b: Backbone) -> String {
        b.to_string()
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backbone::Toy => f.write_str("toy"),
            Backbone::Adapter(p) => write!(f, "adapter:{}", p.display()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptInit {
    /// Language prompts start from the text tower's states for the
    /// template's prefix words.
    #[default]
    Template,
    Random,
}

/// A published split loaded from a manifest file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestStream {
    pub path: PathBuf,
    pub shot: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSpec {
    Synthetic(SyntheticStream),
    Manifest(ManifestStream),
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec::Synthetic(SyntheticStream::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionOptimizers {
    pub base: OptimizerConfig,
    pub incremental: OptimizerConfig,
}

impl Default for SessionOptimizers {
    /// Values tuned for the toy backbone.
    fn default() -> Self {
        let toy = toy_fscil_config();
        Self {
            base: toy.base_optimizer,
            incremental: toy.incremental_optimizer,
        }
    }
}

/// Cells of a hyperparameter grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "L_list")]
    pub lengths: Vec<usize>,
    #[serde(rename = "D_list")]
    pub depths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Name shown in reports; defaults to the ablation name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub backbone: Backbone,
    /// Backbone geometry, alignment and data rendering for the toy setup.
    #[serde(default)]
    pub toy: ToyBenchmarkConfig,
    #[serde(rename = "L")]
    pub length: usize,
    #[serde(rename = "D")]
    pub depth: usize,
    #[serde(default)]
    pub prompt_init: PromptInit,
    #[serde(default)]
    pub ablation: Ablation,
    /// Required unless the ablation is `zero_shot`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<SessionOptimizers>,
    #[serde(default = "default_logit_scale")]
    pub logit_scale: f64,
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default)]
    pub alpha_floor: f64,
    #[serde(default)]
    pub stream: StreamSpec,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

fn default_logit_scale() -> f64 {
    toy_fscil_config().logit_scale
}

fn default_template() -> String {
    DEFAULT_TEMPLATE.into()
}

impl RunConfig {
    /// Reads and validates a config file. Unreadable or malformed files are
    /// configuration errors.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.ablation.name().to_string())
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.length == 0 || self.depth == 0 {
            return bad("L and D must be at least 1".into());
        }
        if !(self.logit_scale > 0.0) || !self.logit_scale.is_finite() {
            return bad(format!("logit_scale must be positive, got {}", self.logit_scale));
        }
        if !(0.0..=1.0).contains(&self.alpha_floor) {
            return bad(format!("alpha_floor must be in [0, 1], got {}", self.alpha_floor));
        }
        fill_template(&self.template, "x")?;
        match (&self.optimizer, self.ablation.trains()) {
            (None, true) => {
                return bad(format!(
                    "ablation {} trains prompts and needs an optimizer section",
                    self.ablation.name()
                ))
            }
            (Some(o), true) => {
                o.base.validate()?;
                o.incremental.validate()?;
            }
            _ => {}
        }
        if let StreamSpec::Manifest(m) = &self.stream {
            if m.shot == 0 {
                return bad("manifest shot must be at least 1".into());
            }
        }
        if let Some(g) = &self.grid {
            if g.lengths.is_empty() || g.depths.is_empty() {
                return bad("grid L_list and D_list must not be empty".into());
            }
            if g.lengths.contains(&0) || g.depths.contains(&0) {
                return bad("grid entries must be at least 1".into());
            }
        }
        Ok(())
    }

    /// Method settings for the session loop.
    pub fn fscil_config(&self) -> FscilConfig {
        let optimizers = self.optimizer.clone().unwrap_or_default();
        FscilConfig {
            base_optimizer: optimizers.base,
            incremental_optimizer: optimizers.incremental,
            ablation: self.ablation,
            logit_scale: self.logit_scale,
            template: self.template.clone(),
            alpha_floor: self.alpha_floor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "L": 2, "D": 1,
        "optimizer": {
            "base": {"learning_rate": 0.01, "epochs": 2, "batch_size": 8},
            "incremental": {"learning_rate": 0.01}
        },
        "seeds": [0],
        "output_dir": "out"
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.backbone, Backbone::Toy);
        assert_eq!(c.ablation, Ablation::Full);
        assert_eq!(c.template, DEFAULT_TEMPLATE);
        assert_eq!(c.optimizer.as_ref().unwrap().base.epochs, 2);
        assert_eq!(c.optimizer.as_ref().unwrap().incremental.momentum, 0.9);
        assert_eq!(c.label(), "full");
    }

    #[test]
    fn render_parse_round_trip() {
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.backbone = Backbone::Adapter("weights/bundle.json".into());
        c.grid = Some(GridSpec {
            lengths: vec![1, 2],
            depths: vec![1, 3],
        });
        c.stream = StreamSpec::Manifest(ManifestStream {
            path: "split.json".into(),
            shot: 5,
            seed: 2,
        });
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn zero_shot_needs_no_optimizer() {
        let text = r#"{"L": 1, "D": 1, "ablation": "zero_shot", "seeds": [1], "output_dir": "o"}"#;
        assert!(RunConfig::parse(text).is_ok());
        let text = r#"{"L": 1, "D": 1, "ablation": "full", "seeds": [1], "output_dir": "o"}"#;
        assert!(matches!(RunConfig::parse(text), Err(CliError::Config(_))));
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            r#"{"L": 1, "D": 1, "ablation": "zero_shot", "seeds": [], "output_dir": "o"}"#,
            r#"{"L": 0, "D": 1, "ablation": "zero_shot", "seeds": [1], "output_dir": "o"}"#,
            r#"{"L": 1, "D": 1, "ablation": "sideways", "seeds": [1], "output_dir": "o"}"#,
            r#"{"L": 1, "D": 1, "ablation": "zero_shot", "seeds": [1], "output_dir": "o", "backbone": "gpu"}"#,
            r#"{"L": 1, "D": 1, "ablation": "zero_shot", "seeds": [1], "output_dir": "o", "template": "no slot"}"#,
            r#"{"L": 1, "D": 1, "ablation": "zero_shot", "seeds": [1], "output_dir": "o", "typo": 1}"#,
            "not json",
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn backbone_strings() {
        assert_eq!(Backbone::try_from("toy".to_string()).unwrap(), Backbone::Toy);
        assert_eq!(
            Backbone::try_from("adapter:/a/b.json".to_string()).unwrap(),
            Backbone::Adapter("/a/b.json".into())
        );
        assert!(Backbone::try_from("adapter:".to_string()).is_err());
        assert_eq!(Backbone::Adapter("x".into()).to_string(), "adapter:x");
    }
}
