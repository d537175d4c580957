//! TOML configuration. Every section and field is optional; command-line
//! flags override whatever the file sets.
//!
//! ```toml
//! [simulate]
//! n = 8
//! dims = [64, 64, 64]
//! degrade = { n0 = 10000.0, noise_enabled = true }
//! anatomy = { ellipsoids = 10 }
//! [simulate.phantom]
//! dims = [32, 32, 32]
//! frequencies = [0.15, 0.2, 0.25, 0.3]
//! roi_len = 20
//!
//! [train]
//! learning_rate = 1e-4
//! batch_size = 4
//! patch_size = 128
//! iterations = 300000
//! loss = "l1"
//! lr_decay = "constant"
//! steps = 2000
//! net = { depth = 4, hidden = 8 }
//!
//! [infer]
//! steps = 2000
//! clip = true
//! variance = "beta"
//! mode = "xyz-all"
//! lambdas = [1.0, 1.0, 1.0]
//! axis_order = ["axial", "coronal", "sagittal"]
//! sync_last_chains = false
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use volsr::denoiser::{LayerSpec, LrDecay};
use volsr::diffusion::{InferenceVariance, LossNorm};
use volsr::joint3d::JointMode;
use volsr::schedule::DEFAULT_STEPS;
use volsr::simulate::{AnatomyParams, DegradeConfig};
use volsr::volume::Axis;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub simulate: SimulateSection,
    pub train: TrainSection,
    pub infer: InferSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n: usize,
    pub dims: [usize; 3],
    pub degrade: DegradeConfig,
    pub anatomy: AnatomyParams,
    pub phantom: PhantomSection,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            n: 8,
            dims: [64; 3],
            degrade: DegradeConfig::default(),
            anatomy: AnatomyParams::default(),
            phantom: PhantomSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub dims: [usize; 3],
    pub frequencies: Vec<f64>,
    pub roi_len: usize,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection {
            dims: [32; 3],
            frequencies: vec![0.15, 0.2, 0.25, 0.3],
            roi_len: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub iterations: usize,
    pub loss: LossNorm,
    pub lr_decay: LrDecay,
    /// Steps of the linear-beta training schedule.
    pub steps: usize,
    pub net: LayerSpec,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = volsr::denoiser::TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            patch_size: t.patch_size,
            iterations: t.iterations,
            loss: t.loss,
            lr_decay: t.lr_decay,
            steps: DEFAULT_STEPS,
            net: LayerSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub steps: usize,
    pub clip: bool,
    pub variance: InferenceVariance,
    pub mode: JointMode,
    pub lambdas: [f64; 3],
    pub axis_order: Vec<Axis>,
    pub sync_last_chains: bool,
}

impl Default for InferSection {
    fn default() -> Self {
        let j = volsr::joint3d::JointConfig::default();
        InferSection {
            steps: DEFAULT_STEPS,
            clip: true,
            variance: InferenceVariance::default(),
            mode: j.mode,
            lambdas: j.lambdas,
            axis_order: j.axis_order,
            sync_last_chains: j.sync_last_chains,
        }
    }
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path.display().to_string())
        } else {
            CliError::Core(volsr::Error::Io {
                path: path.into(),
                source: e,
            })
        }
    })?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: FileConfig = toml::from_str("").unwrap();
        assert_eq!(c, FileConfig::default());
        assert_eq!(c.train.learning_rate, 1e-4);
        assert_eq!(c.infer.steps, 2000);
    }

    #[test]
    fn documented_example_parses() {
        let doc = include_str!("config.rs");
        let example: String = doc
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let c: FileConfig = toml::from_str(&example).unwrap();
        assert_eq!(c.simulate.degrade.n0, 1e4);
        assert_eq!(c.infer.mode, JointMode::XyzAll);
        assert_eq!(c.train.net.hidden, 8);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[train]\nlearning_rat = 1.0").is_err());
        assert!(toml::from_str::<FileConfig>("[infer]\nmode = \"xyz-some\"").is_err());
    }
}
