//! The declarative run document shared by every subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use segsdf::extractor::GridSpec;
use segsdf::field_net::HeadVariant;
use segsdf::metrics::EvalConfig;
use segsdf::trainer::TrainConfig;

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// master seed; copied into `train.seed` and `eval.seed` on resolution
    pub seed: u64,
    pub precision: Precision,
    /// surface points drawn from the input mesh for fitting
    pub surface_samples: usize,
    /// grid resolution used by `synth`
    pub synth_resolution: usize,
    pub train: TrainConfig,
    /// write an intermediate checkpoint every this many iterations (0: never)
    pub checkpoint_every: usize,
    pub grid: GridSpec,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F64,
            surface_samples: 30_000,
            synth_resolution: 128,
            train: TrainConfig::default(),
            checkpoint_every: 0,
            grid: GridSpec::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Command-line overrides, applied after the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub resolution: Option<usize>,
    pub chunk_size: Option<usize>,
    pub tau: Option<f64>,
    pub head: Option<HeadVariant>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    /// Applies overrides, propagates the master seed and validates.
    /// `chunk_size` applies to the grid for extraction and to training
    /// otherwise, per `extraction`.
    pub fn resolve(mut self, o: &Overrides, extraction: bool) -> Result<Self, CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.iterations {
            self.train.iterations = n;
        }
        if let Some(r) = o.resolution {
            self.grid.resolution = r;
            self.synth_resolution = r;
        }
        if let Some(c) = o.chunk_size {
            if extraction {
                self.grid.chunk_size = c;
            } else {
                self.train.chunk_size = c;
            }
        }
        if let Some(t) = o.tau {
            self.eval.tau = t;
        }
        if let Some(h) = o.head {
            self.train.network.head = h;
        }
        self.train.seed = self.seed;
        self.eval.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: segsdf::Error| CliError::Usage(format!("invalid config: {e}"));
        if self.surface_samples == 0 {
            return Err(CliError::Usage("invalid config: surface_samples must be at least 1".into()));
        }
        if self.synth_resolution < 2 {
            return Err(CliError::Usage("invalid config: synth_resolution must be at least 2".into()));
        }
        // K comes from the mesh at fit time, so only the rest of the shape is checked here
        let mut train = self.train.clone();
        train.network.num_classes = train.network.num_classes.max(1);
        train.validate().map_err(usage)?;
        self.grid.validate().map_err(usage)?;
        self.eval.validate().map_err(usage)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
