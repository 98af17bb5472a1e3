use std::path::{Path, PathBuf};

use afinet::codes::{LogGaborParams, OrdinalParams};
use afinet::digest::digest_of;
use afinet::eval::{Regime, DEFAULT_FAR_LEVELS};
use afinet::iris::dataset::SynthSpec;
use afinet::model::{Aggregation, InitScheme, ModelConfig};
use afinet::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds model initialization and pair sampling.
    #[serde(default)]
    pub seed: u64,
    /// Default output directory when `--out` is not given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Exactly one of the two sources must be given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub synthetic: Option<SynthSpec>,
    /// Manifest CSV; relative paths resolve against the config file.
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    #[default]
    Desk,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    pub aggregation: Option<Aggregation>,
    pub init: Option<InitScheme>,
    pub vlad_alpha: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Loggabor,
    Ordinal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub regimes: Vec<Regime>,
    pub far_levels: Vec<f64>,
    /// Caps on sampled pairs; absent means all pairs.
    pub genuine_pairs: Option<usize>,
    pub impostor_pairs: Option<usize>,
    pub baselines: Vec<Baseline>,
    pub shift_range: usize,
    pub loggabor: LogGaborParams,
    pub ordinal: OrdinalParams,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            regimes: Regime::ALL.to_vec(),
            far_levels: DEFAULT_FAR_LEVELS.to_vec(),
            genuine_pairs: None,
            impostor_pairs: None,
            baselines: vec![Baseline::Loggabor],
            shift_range: 8,
            loggabor: LogGaborParams::default(),
            ordinal: OrdinalParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        config.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.dataset.synthetic, &self.dataset.manifest) {
            (Some(spec), None) => spec.validate()?,
            (None, Some(_)) => {}
            _ => {
                return Err(CliError::usage(
                    "[dataset] needs exactly one of `synthetic` or `manifest`",
                ))
            }
        }
        self.train.validate()?;
        if self.eval.regimes.is_empty() {
            return Err(CliError::usage("[eval] regimes is empty"));
        }
        if let Some(l) = self
            .eval
            .far_levels
            .iter()
            .find(|l| !(**l > 0.0 && **l < 1.0))
        {
            return Err(CliError::usage(format!(
                "[eval] FAR level {l} outside (0, 1)"
            )));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }

    pub fn model_config(
        &self,
        num_classes: usize,
        aggregation: Option<Aggregation>,
    ) -> ModelConfig {
        let m = &self.model;
        let mut config = match m.preset {
            Preset::Full => ModelConfig::full(),
            Preset::Desk => ModelConfig::desk(),
        }
        .with_classes(num_classes);
        if let Some(a) = aggregation.or(m.aggregation) {
            config.aggregation = a;
        }
        if let Some(i) = m.init {
            config.init = i;
        }
        if let Some(alpha) = m.vlad_alpha {
            config.vlad_alpha = alpha;
        }
        config
    }
}
