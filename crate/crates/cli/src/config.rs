//! Experiment configuration files (TOML).
//!
//! ```toml
//! distance = 11
//! rounds = [10]
//! basis = "Z"            # Z | X
//! state = "plus"         # plus | minus
//! shots = 100000
//! seed = 7
//! modes = ["hard_calibrated", "soft"]
//! sub_distances = [3, 5, 7, 9, 11]   # optional; empty means the full code only
//! truncation_bits = [1, 2, 4, 8, 64] # required by sweep-truncation
//! confidence = 0.68                  # optional
//! workers = 4                        # optional; default is the available parallelism
//!
//! noise_file = "noise.toml"          # or an inline [noise] table
//!
//! readout_file = "model.bin"         # or an inline [readout] table:
//! [readout]
//! p_s = 0.01                         # mean soft flip of symmetric Gaussians
//! sigma = 1.0
//! [readout.leakage]                  # optional; enables outlier detection
//! outlier_fraction = 0.01
//! offset_q = 6.0                     # leaked-state displacement along Q, in sigma
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use softqec::code_model::{Basis, CodeSpec, LogicalState};
use softqec::measurement_model::{read_model, Covariance, IQPoint, LeakageModel, ReadoutModel, StateDensity};
use softqec::noise_model::NoiseParams;
use softqec::sampler::DecoderMode;

use crate::CliError;

fn default_confidence() -> f64 {
    softqec::analysis::DEFAULT_CONFIDENCE
}

fn default_outlier_fraction() -> f64 {
    softqec::measurement_model::DEFAULT_OUTLIER_FRACTION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakageConfig {
    #[serde(default = "default_outlier_fraction")]
    pub outlier_fraction: f64,
    /// Displacement of the leaked-state mean from the midpoint along Q, in units of sigma.
    #[serde(default)]
    pub offset_q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianReadout {
    pub p_s: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage: Option<LeakageConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub distance: usize,
    pub rounds: Vec<usize>,
    pub basis: Basis,
    pub state: LogicalState,
    pub shots: u64,
    pub seed: u64,
    pub modes: Vec<DecoderMode>,
    #[serde(default)]
    pub sub_distances: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_bits: Option<Vec<u32>>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<GaussianReadout>,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.message())))
    }

    /// Reads a config file, makes its paths absolute and validates it.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.noise_file, &mut self.readout_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn spec(&self, rounds: usize) -> Result<CodeSpec, CliError> {
        CodeSpec::new(self.distance, rounds, self.basis, self.state).map_err(|e| invalid("distance/rounds", e))
    }

    /// Checks every field and every referenced file before any compute starts.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.distance < 2 {
            return Err(invalid("distance", "must be >= 2"));
        }
        if self.rounds.is_empty() || self.rounds.contains(&0) {
            return Err(invalid("rounds", "need at least one round count, each >= 1"));
        }
        if self.shots == 0 {
            return Err(invalid("shots", "must be > 0"));
        }
        if self.modes.is_empty() {
            return Err(invalid("modes", "need at least one decoder mode"));
        }
        if let Some(&d) = self.sub_distances.iter().find(|&&d| d < 2 || d > self.distance) {
            return Err(invalid("sub_distances", format!("{d} outside [2, {}]", self.distance)));
        }
        if let Some(bits) = &self.truncation_bits {
            if bits.is_empty() {
                return Err(invalid("truncation_bits", "empty list"));
            }
            if let Some(b) = bits.iter().find(|&&b| !(1..=64).contains(&b)) {
                return Err(invalid("truncation_bits", format!("{b} outside 1..=64")));
            }
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(invalid("confidence", "must be in (0, 1)"));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers", "must be >= 1"));
        }
        self.noise_params()?;
        self.readout_model()?;
        Ok(())
    }

    pub fn noise_params(&self) -> Result<NoiseParams, CliError> {
        let noise = match (&self.noise_file, &self.noise) {
            (Some(_), Some(_)) => return Err(invalid("noise", "give either noise_file or [noise], not both")),
            (None, None) => return Err(invalid("noise", "missing noise_file or [noise]")),
            (None, Some(n)) => n.clone(),
            (Some(path), None) => {
                let text =
                    fs::read_to_string(path).map_err(|e| invalid("noise_file", format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| invalid("noise_file", e.message()))?
            }
        };
        noise.validate().map_err(|e| invalid("noise", e))?;
        Ok(noise)
    }

    pub fn readout_model(&self) -> Result<ReadoutModel, CliError> {
        match (&self.readout_file, &self.readout) {
            (Some(_), Some(_)) => Err(invalid("readout", "give either readout_file or [readout], not both")),
            (None, None) => Err(invalid("readout", "missing readout_file or [readout]")),
            (Some(path), None) => {
                let file = fs::File::open(path).map_err(|e| invalid("readout_file", format!("{}: {e}", path.display())))?;
                read_model(std::io::BufReader::new(file)).map_err(|e| invalid("readout_file", e))
            }
            (None, Some(g)) => {
                let model = ReadoutModel::symmetric_gaussian(g.p_s, g.sigma).map_err(|e| invalid("readout", e))?;
                let Some(leak) = &g.leakage else {
                    return Ok(model);
                };
                let (StateDensity::Gaussian(a), StateDensity::Gaussian(b)) = (&model.f0, &model.f1) else {
                    unreachable!("symmetric readout is Gaussian");
                };
                let mid = IQPoint::midpoint(a.mean, b.mean);
                let density = StateDensity::gaussian(
                    IQPoint::new(mid.i, mid.q + leak.offset_q * g.sigma),
                    Covariance::isotropic(g.sigma),
                )
                .map_err(|e| invalid("readout.leakage", e))?;
                model
                    .with_leakage(LeakageModel {
                        density,
                        outlier_fraction: leak.outlier_fraction,
                    })
                    .map_err(|e| invalid("readout.leakage", e))
            }
        }
    }
}
