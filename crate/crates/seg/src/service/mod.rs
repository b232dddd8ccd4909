//! Promptable segmentation sessions: encode an image once, decode many
//! point queries against the cached embedding.

mod http;
mod manifest;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use octa_core::stack::Image3;
use octa_core::standardize::{standardize_input, InputTransform};
use octa_core::{Mode, PromptPoint, PromptSet, PromptSource, SegTask, TaskName};
use serde::{Deserialize, Serialize};

use crate::imageio::{decode_png, encode_mask1};
use crate::model::{select_best, SegModel};
use crate::{Error, Result};

pub use http::{router, PredictRequest};
pub use manifest::{export, Manifest, ManifestEntry, MANIFEST_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub checkpoint_dir: Option<PathBuf>,
    pub port: u16,
    /// Idle time after which a session is dropped, in seconds.
    pub ttl_secs: u64,
    /// Maximum live sessions; the least recently used one is evicted.
    pub capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            checkpoint_dir: None,
            port: 8080,
            ttl_secs: 30 * 60,
            capacity: 64,
        }
    }
}

/// Failures surfaced to clients.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("{message}")]
    UnknownTask { message: String, known: Vec<String> },
    #[error("no model loaded for task {task}; available: {}", available.join(", "))]
    NoModel { task: String, available: Vec<String> },
    #[error("session {0} not found or expired")]
    SessionNotFound(String),
    #[error("point {index}: {reason}")]
    InvalidPoint { index: usize, reason: String },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        match e {
            Error::Decode(m) => ServiceError::Decode(m),
            Error::Core(octa_core::Error::InputTooSmall { .. }) => ServiceError::Decode(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

/// A loaded adapter serving one task.
#[derive(Debug)]
pub struct TaskModel {
    pub entry: ManifestEntry,
    pub model: SegModel,
}

#[derive(Debug)]
struct Session {
    task: SegTask,
    transform: InputTransform,
    embedding: crate::model::ImageEmbedding,
    encode_calls: usize,
    created_at: std::time::SystemTime,
}

struct Slot {
    session: Arc<Session>,
    last_used: Instant,
}

/// Wire form of a prompt point, in original image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    /// 1 = foreground, 0 = background.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub task: TaskName,
    pub mode: Mode,
    pub width: usize,
    pub height: usize,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Base64 1-bit grayscale PNG at the original image size.
    pub mask: String,
    pub width: usize,
    pub height: usize,
    pub confidence: f32,
    pub all_confidences: Vec<f32>,
    pub selected: usize,
    /// Set when the selected mask's confidence is below 0.5.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub task: TaskName,
    pub mode: Mode,
    pub checkpoint: String,
    pub sha256: String,
    pub model_config: crate::model::ModelConfig,
    pub lora_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models_loaded: bool,
    pub sessions: usize,
    pub encode_calls: u64,
}

/// Session store plus loaded models; shared by every request handler.
pub struct Engine {
    models: Vec<TaskModel>,
    sessions: Mutex<HashMap<String, Slot>>,
    ttl: Duration,
    capacity: usize,
    encodes: AtomicU64,
    predicts: AtomicUsize,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("models", &self.models.len())
            .field("ttl", &self.ttl)
            .field("capacity", &self.capacity)
            .finish_non_exhaustive()
    }
}

fn now_unix(t: std::time::SystemTime) -> u64 {
    t.duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl Engine {
    pub fn new(models: Vec<TaskModel>, config: &ServiceConfig) -> Result<Self> {
        if config.capacity == 0 {
            return Err(Error::Config("session capacity must be at least 1".into()));
        }
        Ok(Self {
            models,
            sessions: Mutex::new(HashMap::new()),
            ttl: Duration::from_secs(config.ttl_secs),
            capacity: config.capacity,
            encodes: AtomicU64::new(0),
            predicts: AtomicUsize::new(0),
        })
    }

    /// Load every model listed in the directory manifest. A missing directory
    /// yields an engine with no tasks.
    pub fn from_config(config: &ServiceConfig) -> Result<Self> {
        let models = match &config.checkpoint_dir {
            Some(dir) => manifest::load_models(dir)?,
            None => Vec::new(),
        };
        Self::new(models, config)
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn tasks(&self) -> Vec<TaskInfo> {
        self.models
            .iter()
            .map(|m| TaskInfo {
                task: m.entry.task.name(),
                mode: m.entry.task.mode(),
                checkpoint: m.entry.file.clone(),
                sha256: m.entry.sha256.clone(),
                model_config: m.model.config().clone(),
                lora_rank: m.model.lora_config().map_or(0, |l| l.rank),
            })
            .collect()
    }

    fn available(&self) -> Vec<String> {
        self.models.iter().map(|m| m.entry.task.to_string()).collect()
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            models_loaded: !self.models.is_empty(),
            sessions: self.session_count(),
            encode_calls: self.encode_calls(),
        }
    }

    /// Image encodes performed since start-up.
    pub fn encode_calls(&self) -> u64 {
        self.encodes.load(Ordering::SeqCst)
    }

    pub fn predict_calls(&self) -> usize {
        self.predicts.load(Ordering::SeqCst)
    }

    pub fn session_count(&self) -> usize {
        let mut sessions = self.sessions.lock().expect("session lock");
        self.expire(&mut sessions, Instant::now());
        sessions.len()
    }

    /// Encodes recorded for one session (always 1 for a live session).
    pub fn session_encode_calls(&self, id: &str) -> Option<usize> {
        self.sessions
            .lock()
            .expect("session lock")
            .get(id)
            .map(|s| s.session.encode_calls)
    }

    fn expire(&self, sessions: &mut HashMap<String, Slot>, now: Instant) {
        sessions.retain(|_, s| now.duration_since(s.last_used) < self.ttl);
    }

    fn resolve_task(&self, task: &str, mode: Option<&str>) -> Result<&TaskModel, ServiceError> {
        let name: TaskName = task.parse().map_err(|e: octa_core::Error| ServiceError::UnknownTask {
            message: e.to_string(),
            known: TaskName::ALL.iter().map(|t| t.as_str().to_string()).collect(),
        })?;
        let mode: Option<Mode> = mode
            .map(|m| m.parse().map_err(|e: octa_core::Error| ServiceError::BadRequest(e.to_string())))
            .transpose()?;
        let mut candidates = self
            .models
            .iter()
            .filter(|m| m.entry.task.name() == name && mode.is_none_or(|md| m.entry.task.mode() == md));
        // global first when the mode is left open
        let first = candidates.next();
        let pick = match (first, mode) {
            (Some(m), None) if m.entry.task.mode() != Mode::Global => {
                candidates.find(|c| c.entry.task.mode() == Mode::Global).or(Some(m))
            }
            (found, _) => found,
        };
        pick.ok_or_else(|| ServiceError::NoModel {
            task: match mode {
                Some(m) => format!("{name}:{m}"),
                None => name.to_string(),
            },
            available: self.available(),
        })
    }

    /// Decode, standardize and encode an image; the embedding is cached for
    /// the lifetime of the session.
    pub fn create_session(&self, image: &[u8], task: &str, mode: Option<&str>) -> Result<SessionInfo, ServiceError> {
        let tm = self.resolve_task(task, mode)?;
        let decoded = decode_png(image)?;
        let (width, height) = (decoded.width, decoded.height);
        let image = match decoded.planes.len() {
            1 => Image3::gray(decoded.planes.into_iter().next().expect("one plane")),
            _ => {
                let mut it = decoded.planes.into_iter();
                let planes = [it.next(), it.next(), it.next()].map(|p| p.expect("three planes"));
                Image3::new(planes).map_err(Error::from)?
            }
        };
        let input = standardize_input(&image, tm.model.config().input_side).map_err(Error::from)?;
        let embedding = tm.model.encode_image(&input)?;
        self.encodes.fetch_add(1, Ordering::SeqCst);
        let created_at = std::time::SystemTime::now();
        let session = Session {
            task: tm.entry.task,
            transform: input.transform,
            embedding,
            encode_calls: 1,
            created_at,
        };
        let id = uuid::Uuid::new_v4().simple().to_string();
        let now = Instant::now();
        let mut sessions = self.sessions.lock().expect("session lock");
        self.expire(&mut sessions, now);
        while sessions.len() >= self.capacity {
            let oldest = sessions
                .iter()
                .min_by_key(|(_, s)| s.last_used)
                .map(|(k, _)| k.clone())
                .expect("non-empty");
            sessions.remove(&oldest);
        }
        sessions.insert(
            id.clone(),
            Slot {
                session: Arc::new(session),
                last_used: now,
            },
        );
        Ok(SessionInfo {
            session_id: id,
            task: tm.entry.task.name(),
            mode: tm.entry.task.mode(),
            width,
            height,
            created_at: now_unix(created_at),
        })
    }

    pub fn delete_session(&self, id: &str) -> Result<(), ServiceError> {
        let mut sessions = self.sessions.lock().expect("session lock");
        self.expire(&mut sessions, Instant::now());
        sessions
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))
    }

    fn touch(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        let now = Instant::now();
        let mut sessions = self.sessions.lock().expect("session lock");
        self.expire(&mut sessions, now);
        let slot = sessions
            .get_mut(id)
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))?;
        slot.last_used = now;
        Ok(slot.session.clone())
    }

    /// Decode the cached embedding against `points` (original coordinates).
    pub fn predict(&self, id: &str, points: &[Point]) -> Result<Prediction, ServiceError> {
        let session = self.touch(id)?;
        let tm = self
            .models
            .iter()
            .find(|m| m.entry.task == session.task)
            .ok_or_else(|| ServiceError::Internal("session model vanished".into()))?;
        let set = to_model_points(points, &session.transform)?;
        let prompts = tm.model.encode_prompts(std::slice::from_ref(&set))?;
        let pred = tm.model.decode(&session.embedding, prompts.as_ref())?;
        self.predicts.fetch_add(1, Ordering::SeqCst);

        let confidences = pred
            .confidences
            .get(0)
            .and_then(|c| c.to_vec1::<f32>())
            .map_err(Error::from)?;
        let best = select_best(&confidences);
        let side = tm.model.config().input_side;
        let probs = candle_nn::ops::sigmoid(&pred.logits.get(0).and_then(|l| l.get(best)).map_err(Error::from)?)
            .and_then(|p| p.flatten_all())
            .and_then(|p| p.to_vec1::<f32>())
            .map_err(Error::from)?;
        let plane = octa_core::Grid::from_vec(side, side, probs).map_err(Error::from)?;
        let restored = session.transform.restore(&plane).map_err(Error::from)?;
        let mask = restored.map(|v| u8::from(v >= 0.5));
        let png = encode_mask1(&mask)?;
        Ok(Prediction {
            mask: base64::engine::general_purpose::STANDARD.encode(png),
            width: mask.width(),
            height: mask.height(),
            confidence: confidences[best],
            all_confidences: confidences.clone(),
            selected: best,
            low_confidence: confidences[best] < 0.5,
        })
    }

    /// Creation time of a live session, seconds since the Unix epoch.
    pub fn session_created_at(&self, id: &str) -> Option<u64> {
        self.sessions
            .lock()
            .expect("session lock")
            .get(id)
            .map(|s| now_unix(s.session.created_at))
    }
}

/// Validate points against the original image and map them into model space.
fn to_model_points(points: &[Point], transform: &InputTransform) -> Result<PromptSet, ServiceError> {
    let (w, h) = (transform.original_width as f64, transform.original_height as f64);
    let max = (transform.side - 1) as f64;
    let mut out = Vec::with_capacity(points.len());
    for (index, p) in points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite()) || p.x < 0.0 || p.y < 0.0 || p.x >= w || p.y >= h {
            return Err(ServiceError::InvalidPoint {
                index,
                reason: format!("({}, {}) lies outside the {}x{} image", p.x, p.y, w, h),
            });
        }
        if p.label > 1 {
            return Err(ServiceError::InvalidPoint {
                index,
                reason: format!("label {} is not 0 or 1", p.label),
            });
        }
        let (u, v) = transform.to_model(p.x.floor(), p.y.floor());
        out.push(PromptPoint {
            x: u.floor().clamp(0.0, max) as u32,
            y: v.floor().clamp(0.0, max) as u32,
            label: p.label,
            source: PromptSource::Manual,
        });
    }
    Ok(PromptSet { points: out })
}
