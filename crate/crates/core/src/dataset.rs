//! On-disk formats and the dataset importer.
//!
//! * RGBP frames: `"RGBP"`, version byte, reserved byte, `u16` width and
//!   height (little-endian), then `height·width·4` bytes of R, G, B, P with
//!   P stored as 0 or 255.
//! * Label tables: CSV with header `frame_id,timestamp_ms,people_count,customer_count`.
//! * Sequence manifests: JSON listing every `T`-frame training sequence.
//!
//! The importer expects one directory per video under the dataset root:
//!
//! ```text
//! <root>/<video_id>/labels.csv
//! <root>/<video_id>/frames/<frame_id:06>.rgbp
//! ```

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{PChannel, RawFrame, RgbpFrame, RgbpSequence};
use crate::label::PeopleLabel;
use crate::window::{SequenceWindow, WindowEvent};

pub const RGBP_MAGIC: &[u8; 4] = b"RGBP";
pub const RGBP_VERSION: u8 = 1;
pub const RGBP_HEADER_LEN: usize = 10;
pub const LABELS_FILE: &str = "labels.csv";
pub const FRAMES_DIR: &str = "frames";
pub const LABEL_HEADER: &str = "frame_id,timestamp_ms,people_count,customer_count";

pub fn frame_file_name(frame_id: u64) -> String {
    format!("{frame_id:06}.rgbp")
}

pub fn encode_rgbp(frame: &RgbpFrame) -> Result<Vec<u8>> {
    let (w, h) = (frame.width(), frame.height());
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::Format(format!("{w}x{h} exceeds the u16 header fields")));
    }
    let mut out = Vec::with_capacity(RGBP_HEADER_LEN + w * h * 4);
    out.extend_from_slice(RGBP_MAGIC);
    out.push(RGBP_VERSION);
    out.push(0);
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    for (px, &p) in frame.rgb.pixels.chunks_exact(3).zip(&frame.p.bits) {
        out.extend_from_slice(px);
        out.push(if p != 0 { 255 } else { 0 });
    }
    Ok(out)
}

pub fn decode_rgbp(bytes: &[u8], index: u64, timestamp_ms: u64) -> Result<RgbpFrame> {
    if bytes.len() < RGBP_HEADER_LEN {
        return Err(Error::Format("truncated RGBP header".into()));
    }
    if &bytes[..4] != RGBP_MAGIC {
        return Err(Error::Format("bad RGBP magic".into()));
    }
    if bytes[4] != RGBP_VERSION {
        return Err(Error::Format(format!("unsupported RGBP version {}", bytes[4])));
    }
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let h = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload = &bytes[RGBP_HEADER_LEN..];
    if payload.len() != w * h * 4 {
        return Err(Error::Format(format!(
            "RGBP payload holds {} bytes, {w}x{h} needs {}",
            payload.len(),
            w * h * 4
        )));
    }
    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut bits = Vec::with_capacity(w * h);
    for px in payload.chunks_exact(4) {
        rgb.extend_from_slice(&px[..3]);
        bits.push(match px[3] {
            0 => 0,
            255 => 1,
            other => return Err(Error::Format(format!("P byte {other} is neither 0 nor 255"))),
        });
    }
    Ok(RgbpFrame {
        rgb: RawFrame::new(w, h, rgb, timestamp_ms, index)?,
        p: PChannel {
            width: w,
            height: h,
            bits,
        },
    })
}

pub fn write_rgbp(frame: &RgbpFrame, path: &Path) -> Result<()> {
    fs::write(path, encode_rgbp(frame)?).map_err(|e| Error::io(path, e))
}

pub fn read_rgbp(path: &Path, index: u64, timestamp_ms: u64) -> Result<RgbpFrame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rgbp(&bytes, index, timestamp_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub frame_id: u64,
    pub timestamp_ms: u64,
    pub people_count: u32,
    pub customer_count: Option<u32>,
}

impl LabelRow {
    pub fn label(&self) -> PeopleLabel {
        PeopleLabel {
            total_count: self.people_count,
            customer_count: self.customer_count,
        }
    }
}

/// Per-frame people counts of one video.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelTable {
    rows: Vec<LabelRow>,
}

impl LabelTable {
    pub fn new(rows: Vec<LabelRow>) -> Result<Self> {
        for pair in rows.windows(2) {
            if pair[1].frame_id <= pair[0].frame_id {
                return Err(Error::Label(format!(
                    "frame ids must be unique and ascending ({} then {})",
                    pair[0].frame_id, pair[1].frame_id
                )));
            }
        }
        for r in &rows {
            PeopleLabel::new(r.people_count, r.customer_count)
                .map_err(|e| Error::Label(format!("frame {}: {e}", r.frame_id)))?;
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[LabelRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, frame_id: u64) -> Option<&LabelRow> {
        self.rows
            .binary_search_by_key(&frame_id, |r| r.frame_id)
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(32 * (self.rows.len() + 1));
        s.push_str(LABEL_HEADER);
        s.push('\n');
        for r in &self.rows {
            let c = r.customer_count.map(|c| c.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.frame_id, r.timestamp_ms, r.people_count, c));
        }
        s
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header.join(",") != LABEL_HEADER {
            return Err(Error::Label(format!(
                "unexpected label header {:?}, want {LABEL_HEADER:?}",
                header.join(",")
            )));
        }
        let rows = rdr
            .deserialize::<LabelRow>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(f)
    }

    /// Frame ids with no gaps.
    pub fn is_contiguous(&self) -> bool {
        self.rows.windows(2).all(|p| p[1].frame_id == p[0].frame_id + 1)
    }
}

/// Fills the customer column; people counts are never touched.
pub fn relabel_customers(table: &LabelTable, edits: &[(u64, u32)]) -> Result<LabelTable> {
    let mut rows = table.rows.clone();
    for &(frame_id, customers) in edits {
        let i = rows
            .binary_search_by_key(&frame_id, |r| r.frame_id)
            .map_err(|_| Error::Label(format!("no label row for frame {frame_id}")))?;
        if customers > rows[i].people_count {
            return Err(Error::Label(format!(
                "frame {frame_id}: {customers} customers exceed {} people",
                rows[i].people_count
            )));
        }
        rows[i].customer_count = Some(customers);
    }
    LabelTable::new(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub id: u64,
    pub timestamp_ms: u64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSequence {
    pub id: String,
    pub video: String,
    pub frames: Vec<ManifestFrame>,
    pub label: PeopleLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub dataset_id: String,
    pub stride: usize,
    pub seq_len: usize,
    pub sequences: Vec<ManifestSequence>,
}

impl SequenceManifest {
    pub fn validate(&self) -> Result<()> {
        for s in &self.sequences {
            if s.frames.len() != self.seq_len {
                return Err(Error::Dataset(format!(
                    "sequence {} lists {} frames, expected {}",
                    s.id,
                    s.frames.len(),
                    self.seq_len
                )));
            }
            if s.frames.windows(2).any(|p| p[1].id != p[0].id + self.stride as u64) {
                return Err(Error::Dataset(format!(
                    "sequence {} frames are not {} apart",
                    s.id, self.stride
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    /// Number of sequences per people count.
    pub fn label_distribution(&self) -> BTreeMap<u32, usize> {
        let mut d = BTreeMap::new();
        for s in &self.sequences {
            *d.entry(s.label.total_count).or_default() += 1;
        }
        d
    }
}

fn list_video_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && path.join(LABELS_FILE).is_file() {
            out.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    Ok(out)
}

fn list_frame_ids(dir: &Path) -> Result<BTreeSet<u64>> {
    let mut ids = BTreeSet::new();
    if !dir.is_dir() {
        return Ok(ids);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("rgbp") {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| Error::Dataset(format!("unparseable frame file {}", path.display())))?;
        ids.insert(id);
    }
    Ok(ids)
}

/// Builds `T`-frame windows per video, labelled with the count of the last frame.
///
/// Kept frames are those whose offset from the video's first frame id is a
/// multiple of `stride`; no window crosses a video boundary.
pub fn import_dataset(root: &Path, stride: usize, seq_len: usize) -> Result<SequenceManifest> {
    let videos = list_video_dirs(root)?;
    if videos.is_empty() {
        return Err(Error::Dataset(format!(
            "no <video>/{LABELS_FILE} directories under {}",
            root.display()
        )));
    }
    let mut sequences = Vec::new();
    for (video, dir) in videos {
        let table = LabelTable::read(&dir.join(LABELS_FILE))?;
        if table.is_empty() {
            continue;
        }
        if !table.is_contiguous() {
            return Err(Error::Dataset(format!("video {video}: frame ids are not contiguous")));
        }
        let files = list_frame_ids(&dir.join(FRAMES_DIR))?;
        if let Some(id) = files.iter().find(|id| table.get(**id).is_none()) {
            return Err(Error::Dataset(format!("video {video}: frame {id} has no label")));
        }
        let first = table.rows()[0].frame_id;
        let mut win = SequenceWindow::new(seq_len, stride)?;
        for row in table.rows() {
            let offset = row.frame_id - first;
            if !win.is_kept(offset) {
                continue;
            }
            if !files.contains(&row.frame_id) {
                return Err(Error::Dataset(format!(
                    "video {video}: labelled frame {} has no frame file",
                    row.frame_id
                )));
            }
            let entry = (
                ManifestFrame {
                    id: row.frame_id,
                    timestamp_ms: row.timestamp_ms,
                    path: format!("{video}/{FRAMES_DIR}/{}", frame_file_name(row.frame_id)),
                },
                row.label(),
            );
            if let WindowEvent::Ready(frames) = win.push(offset, entry) {
                let label = frames.last().expect("non-empty window").1;
                let last_id = frames.last().unwrap().0.id;
                sequences.push(ManifestSequence {
                    id: format!("{video}/{last_id:06}"),
                    video: video.clone(),
                    frames: frames.into_iter().map(|(f, _)| f).collect(),
                    label,
                });
            }
        }
    }
    let manifest = SequenceManifest {
        dataset_id: root
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        stride,
        seq_len,
        sequences,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Random-access labelled sequences.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn label(&self, i: usize) -> PeopleLabel;
    fn sequence(&self, i: usize) -> Result<Cow<'_, RgbpSequence>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sequences that store frames in memory can be cached by trainers.
    fn in_memory(&self) -> bool {
        false
    }
}

/// Labelled sequences held in memory.
#[derive(Debug, Clone, Default)]
pub struct InMemoryDataset {
    pub sequences: Vec<RgbpSequence>,
}

impl InMemoryDataset {
    pub fn new(sequences: Vec<RgbpSequence>) -> Result<Self> {
        if let Some(i) = sequences.iter().position(|s| s.label.is_none()) {
            return Err(Error::Dataset(format!("sequence {i} has no label")));
        }
        Ok(Self { sequences })
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
        }
    }
}

impl SampleSource for InMemoryDataset {
    fn len(&self) -> usize {
        self.sequences.len()
    }

    fn label(&self, i: usize) -> PeopleLabel {
        self.sequences[i].label.expect("checked at construction")
    }

    fn sequence(&self, i: usize) -> Result<Cow<'_, RgbpSequence>> {
        Ok(Cow::Borrowed(&self.sequences[i]))
    }

    fn in_memory(&self) -> bool {
        true
    }
}

/// Sequences read lazily from RGBP files listed in a manifest.
#[derive(Debug, Clone)]
pub struct ManifestDataset {
    pub root: PathBuf,
    pub manifest: SequenceManifest,
}

impl ManifestDataset {
    pub fn open(root: &Path, manifest: SequenceManifest) -> Self {
        Self {
            root: root.to_path_buf(),
            manifest,
        }
    }
}

impl SampleSource for ManifestDataset {
    fn len(&self) -> usize {
        self.manifest.sequences.len()
    }

    fn label(&self, i: usize) -> PeopleLabel {
        self.manifest.sequences[i].label
    }

    fn sequence(&self, i: usize) -> Result<Cow<'_, RgbpSequence>> {
        let s = &self.manifest.sequences[i];
        let frames = s
            .frames
            .iter()
            .map(|f| read_rgbp(&self.root.join(&f.path), f.id, f.timestamp_ms))
            .collect::<Result<Vec<_>>>()?;
        Ok(Cow::Owned(RgbpSequence::new(
            frames,
            self.manifest.stride,
            Some(s.label),
        )?))
    }
}

/// Any sample source restricted to a list of indices.
pub struct Subset<'a, D: SampleSource + ?Sized> {
    pub inner: &'a D,
    pub indices: Vec<usize>,
}

impl<D: SampleSource + ?Sized> SampleSource for Subset<'_, D> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn label(&self, i: usize) -> PeopleLabel {
        self.inner.label(self.indices[i])
    }

    fn sequence(&self, i: usize) -> Result<Cow<'_, RgbpSequence>> {
        self.inner.sequence(self.indices[i])
    }

    fn in_memory(&self) -> bool {
        self.inner.in_memory()
    }
}
