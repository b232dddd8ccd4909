//! Samples, fields of view and segmentation tasks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grid::{Mask, Plane};
use crate::{Error, Result};

/// Full-depth en-face projection.
pub const LAYER_FULL: &str = "FULL";
/// Inner retina projection (ILM to OPL).
pub const LAYER_INNER: &str = "ILM_OPL";
/// Outer retina projection (OPL to BM).
pub const LAYER_OUTER: &str = "OPL_BM";

/// The three en-face projections stacked by default, in channel order.
pub const DEFAULT_LAYERS: [&str; 3] = [LAYER_FULL, LAYER_INNER, LAYER_OUTER];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Fov {
    #[serde(rename = "3M")]
    Fov3M,
    #[serde(rename = "6M")]
    Fov6M,
}

impl Fov {
    /// Pixel side of the en-face images for this field of view.
    pub fn side(self) -> usize {
        match self {
            Fov::Fov3M => 304,
            Fov::Fov6M => 400,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Fov::Fov3M => "3M",
            Fov::Fov6M => "6M",
        }
    }
}

impl fmt::Display for Fov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Fov {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "3M" | "FOV_3M" => Ok(Fov::Fov3M),
            "6M" | "FOV_6M" => Ok(Fov::Fov6M),
            _ => Err(Error::InvalidConfig(format!("unknown field of view `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskName {
    Rv,
    Faz,
    Capillary,
    Artery,
    Vein,
}

impl TaskName {
    pub const ALL: [TaskName; 5] = [
        TaskName::Rv,
        TaskName::Faz,
        TaskName::Capillary,
        TaskName::Artery,
        TaskName::Vein,
    ];

    /// Directory / wire name.
    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::Rv => "rv",
            TaskName::Faz => "faz",
            TaskName::Capillary => "capillary",
            TaskName::Artery => "artery",
            TaskName::Vein => "vein",
        }
    }

    /// The vessel class that competes with this one in local mode.
    pub fn opposing(self) -> Option<TaskName> {
        match self {
            TaskName::Artery => Some(TaskName::Vein),
            TaskName::Vein => Some(TaskName::Artery),
            _ => None,
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str() == lower)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown task `{s}`; expected one of RV, FAZ, capillary, artery, vein"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Global,
    Local,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Global => "global",
            Mode::Local => "local",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "global" => Ok(Mode::Global),
            "local" => Ok(Mode::Local),
            _ => Err(Error::InvalidConfig(format!("unknown mode `{s}`"))),
        }
    }
}

/// A segmentation target together with its prompting mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSegTask")]
pub struct SegTask {
    name: TaskName,
    mode: Mode,
}

#[derive(Deserialize)]
struct RawSegTask {
    name: TaskName,
    mode: Mode,
}

impl TryFrom<RawSegTask> for SegTask {
    type Error = Error;

    fn try_from(raw: RawSegTask) -> Result<Self> {
        SegTask::new(raw.name, raw.mode)
    }
}

impl SegTask {
    /// Local mode is only defined for the artery and vein tasks.
    pub fn new(name: TaskName, mode: Mode) -> Result<Self> {
        if mode == Mode::Local && name.opposing().is_none() {
            return Err(Error::LocalModeUnsupported(name.as_str()));
        }
        Ok(Self { name, mode })
    }

    pub fn global(name: TaskName) -> Self {
        Self {
            name,
            mode: Mode::Global,
        }
    }

    pub fn name(&self) -> TaskName {
        self.name
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl fmt::Display for SegTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.mode)
    }
}

/// Multi-depth en-face projections and per-task label masks for one eye.
#[derive(Debug, Clone, PartialEq)]
pub struct OctaSample {
    pub sample_id: String,
    pub fov: Fov,
    projections: Vec<(String, Plane)>,
    labels: BTreeMap<TaskName, Mask>,
}

impl OctaSample {
    pub fn new(
        sample_id: impl Into<String>,
        fov: Fov,
        projections: Vec<(String, Plane)>,
        labels: BTreeMap<TaskName, Mask>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        let corrupt = |reason: String| Error::CorruptSample {
            id: sample_id.clone(),
            reason,
        };
        let Some((_, first)) = projections.first() else {
            return Err(corrupt("no projections".to_string()));
        };
        let (w, h) = (first.width(), first.height());
        for (name, plane) in &projections {
            if plane.width() != w || plane.height() != h {
                return Err(corrupt(format!(
                    "projection {name} is {}x{}, expected {w}x{h}",
                    plane.width(),
                    plane.height()
                )));
            }
        }
        for (task, mask) in &labels {
            if mask.width() != w || mask.height() != h {
                return Err(corrupt(format!(
                    "label {task} is {}x{}, expected {w}x{h}",
                    mask.width(),
                    mask.height()
                )));
            }
            if !mask.is_binary() {
                return Err(corrupt(format!("label {task} is not binary")));
            }
        }
        Ok(Self {
            sample_id,
            fov,
            projections,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.projections[0].1.width()
    }

    pub fn height(&self) -> usize {
        self.projections[0].1.height()
    }

    pub fn projections(&self) -> &[(String, Plane)] {
        &self.projections
    }

    pub fn projection(&self, layer: &str) -> Option<&Plane> {
        self.projections
            .iter()
            .find(|(name, _)| name == layer)
            .map(|(_, p)| p)
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.projections.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn labels(&self) -> &BTreeMap<TaskName, Mask> {
        &self.labels
    }

    pub fn label(&self, task: TaskName) -> Option<&Mask> {
        self.labels.get(&task)
    }

    /// Rebuild with transformed planes. Shapes are the caller's responsibility
    /// and are re-validated.
    pub fn with_parts(
        &self,
        projections: Vec<(String, Plane)>,
        labels: BTreeMap<TaskName, Mask>,
    ) -> Result<Self> {
        Self::new(self.sample_id.clone(), self.fov, projections, labels)
    }
}
