//! Frame-stream processing: background maintenance, RGBP assembly and
//! rolling count predictions.

use std::io::Write;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::background::{BackgroundModel, ForegroundParams, DEFAULT_BETA, DEFAULT_ETA, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::frame::{
    assemble_rgbp, quantize, resample_to, RawFrame, RgbpFrame, DEFAULT_LAMBDA_C, DEFAULT_STRIDE, FRAME_HEIGHT,
    FRAME_WIDTH,
};
use crate::model::{frame_tensor, round_count, LrcnModel, Regressor, SeqInput};
use crate::window::{SequenceWindow, WindowEvent};

pub const DEFAULT_BG_INTERVAL_MS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub width: usize,
    pub height: usize,
    pub lambda_c: u8,
    pub eta: usize,
    pub tau: f64,
    pub beta: f64,
    /// Milliseconds between background samples.
    pub bg_interval_ms: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            lambda_c: DEFAULT_LAMBDA_C,
            eta: DEFAULT_ETA,
            tau: DEFAULT_TAU,
            beta: DEFAULT_BETA,
            bg_interval_ms: DEFAULT_BG_INTERVAL_MS,
        }
    }
}

/// Output of one ingested frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Processed {
    pub rgb: RawFrame,
    /// Whether this frame was added to the background model.
    pub sampled: bool,
    /// Present once the background model is initialised.
    pub rgbp: Option<RgbpFrame>,
}

/// Resampling, quantisation, background upkeep and foreground extraction.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    config: PreprocessConfig,
    background: BackgroundModel,
    foreground: ForegroundParams,
    next_sample_ms: Option<u64>,
    last_ms: Option<u64>,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> Result<Self> {
        if config.bg_interval_ms == 0 {
            return Err(Error::Config("background interval must be positive".into()));
        }
        let background = BackgroundModel::new(config.width, config.height, config.lambda_c, config.eta, config.tau)?;
        Ok(Self {
            foreground: ForegroundParams::with_beta(config.beta)?,
            background,
            config,
            next_sample_ms: None,
            last_ms: None,
        })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.config
    }

    pub fn background(&self) -> &BackgroundModel {
        &self.background
    }

    pub fn is_ready(&self) -> bool {
        self.background.is_initialized()
    }

    fn check_order(&mut self, ts: u64) -> Result<()> {
        if let Some(prev) = self.last_ms {
            if ts < prev {
                return Err(Error::OutOfOrder {
                    timestamp_ms: ts,
                    previous_ms: prev,
                });
            }
        }
        self.last_ms = Some(ts);
        Ok(())
    }

    fn due(&mut self, ts: u64) -> bool {
        let next = *self.next_sample_ms.get_or_insert(ts);
        if ts < next {
            return false;
        }
        let step = self.config.bg_interval_ms;
        let skipped = (ts - next) / step;
        self.next_sample_ms = Some(next + (skipped + 1) * step);
        true
    }

    fn resampled(&self, raw: &RawFrame) -> Result<RawFrame> {
        if raw.dims() == (self.config.width, self.config.height) {
            Ok(raw.clone())
        } else {
            resample_to(raw, self.config.width, self.config.height)
        }
    }

    /// Feeds the background model on the sampling cadence and, once it is
    /// initialised, returns the RGBP frame.
    pub fn process(&mut self, raw: &RawFrame) -> Result<Processed> {
        self.step(raw, true)
    }

    /// Like [`process`](Self::process), skipping foreground extraction unless `extract`.
    pub fn step(&mut self, raw: &RawFrame, extract: bool) -> Result<Processed> {
        self.check_order(raw.timestamp_ms)?;
        let rgb = self.resampled(raw)?;
        let q = quantize(&rgb, self.config.lambda_c)?;
        let sampled = self.due(raw.timestamp_ms);
        if sampled {
            self.background.ingest(q.clone())?;
        }
        let rgbp = if extract && self.background.is_initialized() {
            Some(self.extract(&rgb, &q)?)
        } else {
            None
        };
        Ok(Processed { rgb, sampled, rgbp })
    }

    /// Foreground against the current background, without sampling.
    pub fn extract(&self, rgb: &RawFrame, q: &crate::frame::QuantizedFrame) -> Result<RgbpFrame> {
        let p = self.background.foreground(q, &self.foreground)?;
        assemble_rgbp(rgb.clone(), p)
    }

    /// Samples the background on cadence and reports readiness only.
    pub fn warm(&mut self, raw: &RawFrame) -> Result<bool> {
        self.check_order(raw.timestamp_ms)?;
        if self.due(raw.timestamp_ms) {
            let rgb = self.resampled(raw)?;
            self.background.ingest(quantize(&rgb, self.config.lambda_c)?)?;
        }
        Ok(self.is_ready())
    }
}

/// Offline preprocessing of a finite clip: the background is first warmed on
/// the clip's own leading samples, then every frame is converted to RGBP
/// while later samples keep updating the model.
pub fn preprocess_clip(frames: &[RawFrame], config: &PreprocessConfig) -> Result<Vec<RgbpFrame>> {
    let mut warm = Preprocessor::new(config.clone())?;
    let mut warmed_until = None;
    for (i, f) in frames.iter().enumerate() {
        if warm.warm(f)? {
            warmed_until = Some(i);
            break;
        }
    }
    let Some(last_warm) = warmed_until else {
        return Err(Error::NotReady {
            ingested: warm.background().frames_ingested() as usize,
            required: config.eta,
        });
    };
    let mut out = Vec::with_capacity(frames.len());
    for f in &frames[..=last_warm] {
        let rgb = warm.resampled(f)?;
        let q = quantize(&rgb, config.lambda_c)?;
        out.push(warm.extract(&rgb, &q)?);
    }
    for f in &frames[last_warm + 1..] {
        out.push(warm.process(f)?.rgbp.expect("background initialised"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub timestamp_ms: u64,
    pub count: u32,
    pub raw_output: f64,
}

impl Prediction {
    /// `timestamp_ms,count,raw_output`
    pub fn log_line(&self) -> String {
        format!("{},{},{}", self.timestamp_ms, self.count, self.raw_output)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Latest {
    pub count: u32,
    pub timestamp_ms: u64,
    pub ready: bool,
}

/// Cheap handle for concurrent readers of the most recent prediction.
#[derive(Debug, Clone, Default)]
pub struct LatestHandle(Arc<RwLock<Latest>>);

impl LatestHandle {
    pub fn get(&self) -> Latest {
        *self.0.read().unwrap_or_else(|e| e.into_inner())
    }

    fn set(&self, v: Latest) {
        *self.0.write().unwrap_or_else(|e| e.into_inner()) = v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    /// One frame in `stride` enters the prediction window.
    pub stride: usize,
    pub seq_len: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            stride: DEFAULT_STRIDE,
            seq_len: 9,
        }
    }
}

/// Streaming predictor. Conv features of each kept frame are computed once
/// and reused by every window that contains the frame.
pub struct PipelineState {
    pre: Preprocessor,
    model: Arc<LrcnModel<f32>>,
    window: SequenceWindow<Arc<Vec<f32>>>,
    frames_seen: u64,
    latest: LatestHandle,
}

impl PipelineState {
    pub fn new(config: PipelineConfig, model: Arc<LrcnModel<f32>>) -> Result<Self> {
        if config.seq_len != model.config.seq_len {
            return Err(Error::Config(format!(
                "window of T={} frames but the model was trained with T={}",
                config.seq_len, model.config.seq_len
            )));
        }
        let p = &config.preprocess;
        if (p.width, p.height) != (model.config.input_width, model.config.input_height) {
            return Err(Error::Config(format!(
                "frames are resampled to {}x{} but the model reads {}x{}",
                p.width, p.height, model.config.input_width, model.config.input_height
            )));
        }
        Ok(Self {
            pre: Preprocessor::new(config.preprocess)?,
            window: SequenceWindow::new(config.seq_len, config.stride)?,
            model,
            frames_seen: 0,
            latest: LatestHandle::default(),
        })
    }

    pub fn latest_handle(&self) -> LatestHandle {
        self.latest.clone()
    }

    pub fn latest(&self) -> Latest {
        self.latest.get()
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.pre
    }

    /// Processes one frame; returns a prediction when a window completes.
    pub fn ingest_frame(&mut self, raw: &RawFrame) -> Result<Option<Prediction>> {
        let n = self.frames_seen;
        let kept = self.window.is_kept(n);
        let out = self.pre.step(raw, kept)?;
        self.frames_seen += 1;
        let Some(rgbp) = out.rgbp else { return Ok(None) };
        let features = Arc::new(self.model.frame_features(&frame_tensor::<f32>(&rgbp)));
        let WindowEvent::Ready(window) = self.window.push(n, features) else {
            return Ok(None);
        };
        let feats: Vec<Vec<f32>> = window.iter().map(|f| f.as_ref().clone()).collect();
        let y = self.model.forward_eval(SeqInput::Features(&feats))? as f64;
        let p = Prediction {
            timestamp_ms: raw.timestamp_ms,
            count: round_count(y),
            raw_output: y,
        };
        self.latest.set(Latest {
            count: p.count,
            timestamp_ms: p.timestamp_ms,
            ready: true,
        });
        Ok(Some(p))
    }
}

/// Writes prediction events as log lines.
pub fn write_events<W: Write>(mut w: W, events: &[Prediction]) -> std::io::Result<()> {
    for e in events {
        writeln!(w, "{}", e.log_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LrcnConfig;

    fn tiny_pre() -> PreprocessConfig {
        PreprocessConfig {
            width: 16,
            height: 12,
            eta: 5,
            ..PreprocessConfig::default()
        }
    }

    fn frame(t: u64, fps: u64) -> RawFrame {
        RawFrame::filled(16, 12, [90, 120, 150]).with_position(t, t * 1000 / fps)
    }

    #[test]
    fn cadence_at_20_fps() {
        let mut p = Preprocessor::new(tiny_pre()).unwrap();
        let sampled: Vec<u64> = (0..100)
            .filter(|&t| p.process(&frame(t, 20)).unwrap().sampled)
            .collect();
        assert_eq!(sampled, vec![0, 20, 40, 60, 80]);
        assert!(p.is_ready());
    }

    #[test]
    fn rejects_time_travel() {
        let mut p = Preprocessor::new(tiny_pre()).unwrap();
        p.process(&frame(10, 20)).unwrap();
        assert!(matches!(p.process(&frame(9, 20)), Err(Error::OutOfOrder { .. })));
    }

    #[test]
    fn static_scene_has_no_foreground() {
        let frames: Vec<RawFrame> = (0..120).map(|t| frame(t, 20)).collect();
        let out = preprocess_clip(&frames, &tiny_pre()).unwrap();
        assert_eq!(out.len(), 120);
        assert!(out.iter().all(|f| f.p.count_ones() == 0));
    }

    #[test]
    fn short_clip_is_not_ready() {
        let frames: Vec<RawFrame> = (0..30).map(|t| frame(t, 20)).collect();
        assert!(matches!(
            preprocess_clip(&frames, &tiny_pre()),
            Err(Error::NotReady { .. })
        ));
    }

    #[test]
    fn window_cadence_and_readiness() {
        let model = LrcnModel::<f32>::build(
            LrcnConfig {
                input_width: 16,
                input_height: 12,
                conv_layers: 1,
                filters: 2,
                kernel: 3,
                lstm_units: vec![3],
                seq_len: 3,
                ..LrcnConfig::default()
            },
            1,
        )
        .unwrap();
        let cfg = PipelineConfig {
            preprocess: tiny_pre(),
            stride: 5,
            seq_len: 3,
        };
        let mut state = PipelineState::new(cfg.clone(), Arc::new(model.clone())).unwrap();
        let handle = state.latest_handle();
        let mut emitted = Vec::new();
        for t in 0..120 {
            if let Some(p) = state.ingest_frame(&frame(t, 20)).unwrap() {
                emitted.push((t, p));
                assert_eq!(handle.get().timestamp_ms, p.timestamp_ms);
            } else if emitted.is_empty() {
                assert!(!handle.get().ready);
            }
        }
        // Ready at frame 80 (fifth sample); kept frames 80, 85, 90 fill T=3.
        assert_eq!(emitted[0].0, 90);
        assert!(emitted.windows(2).all(|w| w[1].0 == w[0].0 + 5));

        let bad = PipelineConfig { seq_len: 4, ..cfg };
        assert!(PipelineState::new(bad, Arc::new(model)).is_err());
    }
}
