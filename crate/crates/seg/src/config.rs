//! TOML run configuration shared by the CLI subcommands.
//!
//! ```toml
//! [train]
//! epochs = 20
//! batch_size = 4
//! task = { name = "rv", mode = "global" }
//!
//! [train.schedule]
//! lr_start = 1e-5
//! lr_peak = 1e-3
//!
//! [cv]
//! k = 10
//!
//! [service]
//! port = 8080
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cv::CvConfig;
use crate::service::ServiceConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub cv: CvConfig,
    pub service: ServiceConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_example_matches_preset() {
        let cfg = RunConfig::from_toml(include_str!("../../../configs/desk.toml")).unwrap();
        assert_eq!(cfg.train, TrainConfig::desk(octa_core::SegTask::global(octa_core::TaskName::Rv)));
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml("[train]\nepochs = 3\n[cv]\nk = 2\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.cv.k, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[train]\nepoch = 3\n").is_err());
    }
}
