//! Videos and sessions on disk.
//!
//! ```text
//! <root>/<video_id>/frames/*.{png,jpg,jpeg,rgbp}   frame n is the n-th file by name
//! <root>/<video_id>/labels.csv                      optional, written by export
//! <root>/<video_id>/session.json                    event log
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use peoplecount_core::annotation::{AdjustEvent, AnnotationSession};
use peoplecount_core::dataset::{read_rgbp, LabelTable, FRAMES_DIR, LABELS_FILE};
use peoplecount_core::error::Error as CoreError;
use peoplecount_core::label::LabelMode;
use serde::Serialize;

pub const SESSION_FILE: &str = "session.json";
/// Frame spacing assumed when a video has no label table to take timestamps from.
pub const DEFAULT_FRAME_MS: u64 = 50;

const FRAME_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "rgbp"];

#[derive(Debug)]
pub enum StoreError {
    NotFound(String),
    Invalid(String),
    Io(String),
}

impl From<CoreError> for StoreError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Annotation(_) | CoreError::OutOfRange(_) | CoreError::Label(_) => {
                StoreError::Invalid(e.to_string())
            }
            other => StoreError::Io(other.to_string()),
        }
    }
}

pub type StoreResult<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct VideoSummary {
    pub id: String,
    pub frames: u64,
    pub has_labels: bool,
    pub has_session: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SessionView {
    #[serde(flatten)]
    pub session: AnnotationSession,
    /// Materialized count per frame, absent until the first-frame count is set.
    pub labels: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ExportSummary {
    pub path: PathBuf,
    pub rows: usize,
    /// Number of frames per exported count.
    pub histogram: BTreeMap<u32, usize>,
}

pub struct FrameBytes {
    pub content_type: &'static str,
    pub bytes: Vec<u8>,
}

pub struct Store {
    root: PathBuf,
    sessions: HashMap<String, AnnotationSession>,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            sessions: HashMap::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn video_dir(&self, id: &str) -> StoreResult<PathBuf> {
        let ok = !id.is_empty() && !id.starts_with('.') && !id.contains(['/', '\\']);
        let dir = self.root.join(id);
        if ok && dir.join(FRAMES_DIR).is_dir() {
            Ok(dir)
        } else {
            Err(StoreError::NotFound(format!("no video {id:?}")))
        }
    }

    fn frame_files(dir: &Path) -> StoreResult<Vec<PathBuf>> {
        let frames = dir.join(FRAMES_DIR);
        let mut files: Vec<PathBuf> = fs::read_dir(&frames)
            .map_err(|e| StoreError::Io(format!("{}: {e}", frames.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        Ok(files)
    }

    pub fn list(&self) -> StoreResult<Vec<VideoSummary>> {
        let entries = fs::read_dir(&self.root).map_err(|e| StoreError::Io(format!("{}: {e}", self.root.display())))?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(FRAMES_DIR).is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        ids.sort();
        ids.into_iter()
            .map(|id| {
                let dir = self.video_dir(&id)?;
                Ok(VideoSummary {
                    frames: Self::frame_files(&dir)?.len() as u64,
                    has_labels: dir.join(LABELS_FILE).is_file(),
                    has_session: self.sessions.contains_key(&id) || dir.join(SESSION_FILE).is_file(),
                    id,
                })
            })
            .collect()
    }

    pub fn frame(&self, id: &str, n: u64) -> StoreResult<FrameBytes> {
        let dir = self.video_dir(id)?;
        let files = Self::frame_files(&dir)?;
        let path = files
            .get(n as usize)
            .ok_or_else(|| StoreError::NotFound(format!("video {id:?} has {} frames, no frame {n}", files.len())))?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        let read = |p: &Path| fs::read(p).map_err(|e| StoreError::Io(format!("{}: {e}", p.display())));
        match ext.as_str() {
            "png" => Ok(FrameBytes {
                content_type: "image/png",
                bytes: read(path)?,
            }),
            "jpg" | "jpeg" => Ok(FrameBytes {
                content_type: "image/jpeg",
                bytes: read(path)?,
            }),
            _ => {
                let frame = read_rgbp(path, n, 0)?;
                let mut bytes = Vec::new();
                frame
                    .rgb
                    .to_image()
                    .write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
                    .map_err(|e| StoreError::Io(e.to_string()))?;
                Ok(FrameBytes {
                    content_type: "image/png",
                    bytes,
                })
            }
        }
    }

    /// Loads (or starts) the session of a video.
    fn session_mut(&mut self, id: &str) -> StoreResult<&mut AnnotationSession> {
        let dir = self.video_dir(id)?;
        if !self.sessions.contains_key(id) {
            let path = dir.join(SESSION_FILE);
            let s = if path.is_file() {
                AnnotationSession::load(&path)?
            } else {
                let frames = Self::frame_files(&dir)?.len() as u64;
                AnnotationSession::new(id, frames, LabelMode::AllPeople)
            };
            self.sessions.insert(id.to_string(), s);
        }
        Ok(self.sessions.get_mut(id).expect("inserted above"))
    }

    fn persist(&self, id: &str) -> StoreResult<()> {
        let dir = self.video_dir(id)?;
        self.sessions[id].save(&dir.join(SESSION_FILE))?;
        Ok(())
    }

    pub fn session(&mut self, id: &str) -> StoreResult<SessionView> {
        let s = self.session_mut(id)?.clone();
        let labels = s.initial.map(|_| s.materialize()).transpose()?;
        Ok(SessionView { session: s, labels })
    }

    /// Applies `f` to a copy of the session and keeps it only on success.
    fn update<T>(&mut self, id: &str, f: impl FnOnce(&mut AnnotationSession) -> StoreResult<T>) -> StoreResult<T> {
        let mut s = self.session_mut(id)?.clone();
        let out = f(&mut s)?;
        self.sessions.insert(id.to_string(), s);
        self.persist(id)?;
        Ok(out)
    }

    pub fn set_initial(&mut self, id: &str, count: i64, mode: Option<LabelMode>) -> StoreResult<SessionView> {
        self.update(id, |s| {
            if let Some(m) = mode {
                s.mode = m;
            }
            Ok(s.set_initial(count)?)
        })?;
        self.session(id)
    }

    pub fn adjust(&mut self, id: &str, frame: u64, delta: i8) -> StoreResult<AdjustEvent> {
        self.update(id, |s| Ok(s.adjust(frame, delta)?))
    }

    pub fn undo(&mut self, id: &str) -> StoreResult<AdjustEvent> {
        self.update(id, |s| Ok(s.undo()?))
    }

    pub fn label_at(&mut self, id: &str, frame: u64) -> StoreResult<u32> {
        let s = self.session_mut(id)?;
        if frame >= s.frame_count {
            return Err(StoreError::NotFound(format!("no frame {frame}")));
        }
        Ok(s.label_at(frame)?)
    }

    /// Writes `labels.csv` next to the frames. Rows already in the table keep
    /// their timestamps and the column the session does not edit.
    pub fn export(&mut self, id: &str) -> StoreResult<ExportSummary> {
        let dir = self.video_dir(id)?;
        let session = self.session_mut(id)?.clone();
        let path = dir.join(LABELS_FILE);
        let base = if path.is_file() {
            Some(LabelTable::read(&path)?)
        } else {
            None
        };
        let timestamps: Vec<u64> = (0..session.frame_count)
            .map(|k| {
                base.as_ref()
                    .and_then(|b| b.get(k))
                    .map_or(k * DEFAULT_FRAME_MS, |r| r.timestamp_ms)
            })
            .collect();
        let table = session.export(&timestamps, base.as_ref())?;
        table.write(&path)?;
        let mut histogram = BTreeMap::new();
        for r in table.rows() {
            let n = match session.mode {
                LabelMode::AllPeople => r.people_count,
                LabelMode::CustomersOnly => r.customer_count.unwrap_or_default(),
            };
            *histogram.entry(n).or_insert(0) += 1;
        }
        Ok(ExportSummary {
            path,
            rows: table.len(),
            histogram,
        })
    }
}
