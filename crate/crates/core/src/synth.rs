//! Synthetic indoor scenes with exact ground truth.
//!
//! A tiled floor texture is crossed by two-tone ellipse "people" walking
//! piecewise-linear paths with optional pauses. Uniform-coloured actors stand
//! in for staff. Furniture events recolour a region for good, and a slow
//! sinusoidal gain models lighting drift.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{InMemoryDataset, LabelRow, LabelTable};
use crate::error::{Error, Result};
use crate::frame::{PChannel, RawFrame, RgbpSequence, FRAME_HEIGHT, FRAME_WIDTH};
use crate::label::PeopleLabel;
use crate::pipeline::{preprocess_clip, PreprocessConfig};
use crate::window::window;

/// Largest colour component used for texture, actors and furniture.
pub const MAX_COLOR: u8 = 230;
/// Largest gain excursion; with [`MAX_COLOR`] pixels stay below 255.
pub const MAX_DRIFT: f64 = 0.1;
const TILE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FurnitureEvent {
    pub frame: usize,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    pub texture_seed: u64,
    pub actors: usize,
    /// Horizontal semi-axis range in pixels; the vertical one is twice as long.
    pub radius: (f32, f32),
    /// Walking speed range in pixels per frame.
    pub speed: (f32, f32),
    /// Chance of pausing at each waypoint.
    pub standstill_prob: f64,
    pub dwell_frames: (usize, usize),
    /// Keep every actor fully inside the frame for the whole clip.
    pub always_visible: bool,
    pub furniture: Vec<FurnitureEvent>,
    /// Peak relative gain change.
    pub drift_amplitude: f64,
    pub drift_period_frames: usize,
    /// Share of actors dressed in `uniform_color`.
    pub uniform_fraction: f64,
    pub uniform_color: [u8; 3],
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            frames: 200,
            fps: 20.0,
            texture_seed: 1,
            actors: 4,
            radius: (6.0, 10.0),
            speed: (0.5, 2.5),
            standstill_prob: 0.3,
            dwell_frames: (10, 60),
            always_visible: false,
            furniture: Vec::new(),
            drift_amplitude: 0.0,
            drift_period_frames: 2000,
            uniform_fraction: 0.0,
            uniform_color: [200, 30, 30],
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 || !(self.fps > 0.0) {
            return bad("scene needs a positive size and frame rate".into());
        }
        if !(self.radius.0 >= 1.0 && self.radius.0 <= self.radius.1) {
            return bad(format!("bad radius range {:?}", self.radius));
        }
        if !(self.speed.0 >= 0.0 && self.speed.0 <= self.speed.1) {
            return bad(format!("bad speed range {:?}", self.speed));
        }
        if self.dwell_frames.0 > self.dwell_frames.1 {
            return bad(format!("bad dwell range {:?}", self.dwell_frames));
        }
        if !(0.0..=1.0).contains(&self.standstill_prob) || !(0.0..=1.0).contains(&self.uniform_fraction) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if !(0.0..=MAX_DRIFT).contains(&self.drift_amplitude) || self.drift_period_frames == 0 {
            return bad(format!(
                "drift amplitude must lie in [0, {MAX_DRIFT}] with a positive period"
            ));
        }
        let colors = std::iter::once(self.uniform_color).chain(self.furniture.iter().map(|f| f.color));
        if colors.flatten().any(|c| c > MAX_COLOR) {
            return bad(format!("colour components above {MAX_COLOR} could clip under drift"));
        }
        if self.always_visible {
            let (rx, ry) = (self.radius.1, 2.0 * self.radius.1);
            if 2.0 * rx + 1.0 > self.width as f32 || 2.0 * ry + 1.0 > self.height as f32 {
                return bad("actors cannot stay fully visible in this frame size".into());
            }
        }
        for f in &self.furniture {
            if f.x + f.width > self.width || f.y + f.height > self.height {
                return bad(format!("furniture region {f:?} leaves the frame"));
            }
        }
        Ok(())
    }

    pub fn timestamp_ms(&self, t: usize) -> u64 {
        (t as f64 * 1000.0 / self.fps).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Actor {
    rx: f32,
    ry: f32,
    top: [u8; 3],
    bottom: [u8; 3],
    uniform: bool,
    path: Vec<(f32, f32)>,
}

impl Actor {
    /// Pixel bounding box `(x0, y0, x1, y1)` clipped to the frame, or `None`.
    fn bbox(&self, t: usize, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
        let (cx, cy) = self.path[t];
        let x0 = (cx - self.rx).ceil().max(0.0);
        let y0 = (cy - self.ry).ceil().max(0.0);
        let x1 = (cx + self.rx).floor().min(w as f32 - 1.0);
        let y1 = (cy + self.ry).floor().min(h as f32 - 1.0);
        (x0 <= x1 && y0 <= y1).then_some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }

    fn covers(&self, t: usize, x: usize, y: usize) -> bool {
        let (cx, cy) = self.path[t];
        let dx = (x as f32 - cx) / self.rx;
        let dy = (y as f32 - cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    fn color_at(&self, t: usize, y: usize) -> [u8; 3] {
        if self.uniform || (y as f32) < self.path[t].1 {
            self.top
        } else {
            self.bottom
        }
    }
}

/// Ground truth of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub count: u32,
    pub customers: u32,
    pub mask: PChannel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub counts: Vec<u32>,
    pub customers: Vec<u32>,
    pub masks: Vec<PChannel>,
}

/// A generated scene; frames are rendered on demand.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    texture: Vec<u8>,
    actors: Vec<Actor>,
}

fn random_color<R: Rng>(rng: &mut R, lo: u8) -> [u8; 3] {
    [0; 3].map(|_| rng.gen_range(lo..=MAX_COLOR))
}

fn tile_texture(w: usize, h: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tw, th) = (w.div_ceil(TILE), h.div_ceil(TILE));
    let tiles: Vec<[u8; 3]> = (0..tw * th).map(|_| [0; 3].map(|_| rng.gen_range(40..=200))).collect();
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            out.extend_from_slice(&tiles[(y / TILE) * tw + x / TILE]);
        }
    }
    out
}

fn walk<R: Rng>(rng: &mut R, c: &SceneConfig, rx: f32, ry: f32) -> Vec<(f32, f32)> {
    let (w, h) = (c.width as f32, c.height as f32);
    let (lo, hi) = if c.always_visible {
        ((rx, ry), (w - 1.0 - rx, h - 1.0 - ry))
    } else {
        ((-2.0 * rx, -2.0 * ry), (w - 1.0 + 2.0 * rx, h - 1.0 + 2.0 * ry))
    };
    let waypoint = |rng: &mut R| (rng.gen_range(lo.0..=hi.0), rng.gen_range(lo.1..=hi.1));
    let speed = rng.gen_range(c.speed.0..=c.speed.1);
    let mut pos = waypoint(rng);
    let mut target = waypoint(rng);
    let mut pause = 0usize;
    let mut path = Vec::with_capacity(c.frames);
    for _ in 0..c.frames {
        path.push(pos);
        if pause > 0 {
            pause -= 1;
            continue;
        }
        let (dx, dy) = (target.0 - pos.0, target.1 - pos.1);
        let dist = (dx * dx + dy * dy).sqrt();
        if dist <= speed {
            pos = target;
            target = waypoint(rng);
            if rng.gen_bool(c.standstill_prob) {
                pause = rng.gen_range(c.dwell_frames.0..=c.dwell_frames.1);
            }
        } else {
            pos = (pos.0 + dx / dist * speed, pos.1 + dy / dist * speed);
        }
    }
    path
}

impl Scene {
    pub fn new(config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n_uniform = (config.uniform_fraction * config.actors as f64).round() as usize;
        let actors = (0..config.actors)
            .map(|i| {
                let rx = rng.gen_range(config.radius.0..=config.radius.1);
                let ry = 2.0 * rx;
                let uniform = i < n_uniform;
                let (top, bottom) = if uniform {
                    (config.uniform_color, config.uniform_color)
                } else {
                    (random_color(&mut rng, 0), random_color(&mut rng, 0))
                };
                let path = walk(&mut rng, &config, rx, ry);
                Actor {
                    rx,
                    ry,
                    top,
                    bottom,
                    uniform,
                    path,
                }
            })
            .collect();
        Ok(Self {
            texture: tile_texture(config.width, config.height, config.texture_seed),
            config,
            actors,
        })
    }

    pub fn len(&self) -> usize {
        self.config.frames
    }

    pub fn is_empty(&self) -> bool {
        self.config.frames == 0
    }

    pub fn gain(&self, t: usize) -> f64 {
        let c = &self.config;
        1.0 + c.drift_amplitude * (2.0 * std::f64::consts::PI * t as f64 / c.drift_period_frames as f64).sin()
    }

    /// Empty-scene colours at frame `t` before the lighting gain.
    fn base_background(&self, t: usize) -> Vec<u8> {
        let w = self.config.width;
        let mut px = self.texture.clone();
        for f in self.config.furniture.iter().filter(|f| f.frame <= t) {
            for y in f.y..f.y + f.height {
                for x in f.x..f.x + f.width {
                    px[(y * w + x) * 3..][..3].copy_from_slice(&f.color);
                }
            }
        }
        px
    }

    fn apply_gain(&self, px: &mut [u8], t: usize) {
        let g = self.gain(t);
        if g != 1.0 {
            px.iter_mut()
                .for_each(|v| *v = (*v as f64 * g).round().clamp(0.0, 255.0) as u8);
        }
    }

    fn frame_of(&self, t: usize, pixels: Vec<u8>) -> RawFrame {
        let c = &self.config;
        RawFrame::new(c.width, c.height, pixels, c.timestamp_ms(t), t as u64).expect("sizes agree")
    }

    /// The scene at frame `t` with no actors.
    pub fn background(&self, t: usize) -> RawFrame {
        let mut px = self.base_background(t);
        self.apply_gain(&mut px, t);
        self.frame_of(t, px)
    }

    pub fn render(&self, t: usize) -> Result<(RawFrame, FrameTruth)> {
        if t >= self.config.frames {
            return Err(Error::OutOfRange(format!(
                "frame {t} of a {}-frame scene",
                self.config.frames
            )));
        }
        let (w, h) = (self.config.width, self.config.height);
        let mut px = self.base_background(t);
        let mut mask = vec![0u8; w * h];
        let (mut count, mut customers) = (0u32, 0u32);
        for a in &self.actors {
            let Some((x0, y0, x1, y1)) = a.bbox(t, w, h) else {
                continue;
            };
            let mut visible = false;
            for y in y0..=y1 {
                let color = a.color_at(t, y);
                for x in x0..=x1 {
                    if a.covers(t, x, y) {
                        visible = true;
                        mask[y * w + x] = 1;
                        px[(y * w + x) * 3..][..3].copy_from_slice(&color);
                    }
                }
            }
            if visible {
                count += 1;
                customers += u32::from(!a.uniform);
            }
        }
        self.apply_gain(&mut px, t);
        let truth = FrameTruth {
            count,
            customers,
            mask: PChannel::from_bits(w, h, mask)?,
        };
        Ok((self.frame_of(t, px), truth))
    }

    pub fn frames(&self) -> impl Iterator<Item = (RawFrame, FrameTruth)> + '_ {
        (0..self.config.frames).map(|t| self.render(t).expect("in range"))
    }
}

/// Renders every frame of a scene.
pub fn generate(config: SceneConfig) -> Result<(Vec<RawFrame>, GroundTruth)> {
    let scene = Scene::new(config)?;
    let mut frames = Vec::with_capacity(scene.len());
    let mut gt = GroundTruth::default();
    for (f, truth) in scene.frames() {
        frames.push(f);
        gt.counts.push(truth.count);
        gt.customers.push(truth.customers);
        gt.masks.push(truth.mask);
    }
    Ok((frames, gt))
}

/// Ground truth as a label table with frame ids `0..n`.
pub fn label_stream(gt: &GroundTruth, fps: f64) -> LabelTable {
    let rows = gt
        .counts
        .iter()
        .zip(&gt.customers)
        .enumerate()
        .map(|(t, (&people, &customers))| LabelRow {
            frame_id: t as u64,
            timestamp_ms: (t as f64 * 1000.0 / fps).round() as u64,
            people_count: people,
            customer_count: Some(customers),
        })
        .collect();
    LabelTable::new(rows).expect("ids ascend and customers never exceed people")
}

/// Preprocesses a whole scene and cuts it into labelled `T`-frame sequences.
pub fn labelled_sequences(
    scene: &Scene,
    preprocess: &PreprocessConfig,
    stride: usize,
    seq_len: usize,
) -> Result<InMemoryDataset> {
    let mut raw = Vec::with_capacity(scene.len());
    let mut truth = Vec::with_capacity(scene.len());
    for (f, t) in scene.frames() {
        raw.push(f);
        truth.push((t.count, t.customers));
    }
    let rgbp = preprocess_clip(&raw, preprocess)?;
    drop(raw);
    let sequences = window(&rgbp, seq_len, stride)?
        .into_iter()
        .map(|s| {
            let (people, customers) = truth[s.last().index() as usize];
            let label = PeopleLabel::new(people, Some(customers))?;
            RgbpSequence::new(s.frames, stride, Some(label))
        })
        .collect::<Result<Vec<_>>>()?;
    InMemoryDataset::new(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig {
            width: 80,
            height: 60,
            frames: 30,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn empty_scene_has_no_people() {
        let (frames, gt) = generate(SceneConfig { actors: 0, ..small() }).unwrap();
        assert_eq!(frames.len(), 30);
        assert!(gt.counts.iter().all(|&c| c == 0));
        assert!(gt.masks.iter().all(|m| m.count_ones() == 0));
    }

    #[test]
    fn always_visible_actors_are_counted() {
        let c = SceneConfig {
            actors: 3,
            always_visible: true,
            ..small()
        };
        let (_, gt) = generate(c).unwrap();
        assert!(gt.counts.iter().all(|&c| c == 3));
    }

    #[test]
    fn same_seed_same_stream() {
        let c = SceneConfig {
            drift_amplitude: 0.05,
            drift_period_frames: 20,
            ..small()
        };
        assert_eq!(generate(c.clone()).unwrap(), generate(c).unwrap());
    }

    #[test]
    fn mask_matches_rendered_pixels() {
        let scene = Scene::new(SceneConfig { actors: 5, ..small() }).unwrap();
        for t in 0..scene.len() {
            let (f, truth) = scene.render(t).unwrap();
            let bg = scene.background(t);
            for (i, &m) in truth.mask.bits.iter().enumerate() {
                if m == 0 {
                    assert_eq!(f.pixels[i * 3..i * 3 + 3], bg.pixels[i * 3..i * 3 + 3]);
                }
            }
        }
    }

    #[test]
    fn staff_are_not_customers() {
        let c = SceneConfig {
            actors: 4,
            always_visible: true,
            uniform_fraction: 0.5,
            ..small()
        };
        let (_, gt) = generate(c).unwrap();
        assert!(gt.customers.iter().all(|&c| c == 2));
    }

    #[test]
    fn label_stream_rows() {
        let gt = GroundTruth {
            counts: vec![2, 2, 3],
            customers: vec![1, 2, 2],
            masks: Vec::new(),
        };
        let t = label_stream(&gt, 20.0);
        let people: Vec<u32> = t.rows().iter().map(|r| r.people_count).collect();
        assert_eq!(people, vec![2, 2, 3]);
        assert_eq!(t.rows()[2].customer_count, Some(2));
        assert_eq!(t.rows()[1].timestamp_ms, 50);
        assert_eq!(LabelTable::from_csv_reader(t.to_csv_string().as_bytes()).unwrap(), t);
    }

    #[test]
    fn invalid_configs() {
        assert!(Scene::new(SceneConfig {
            drift_amplitude: 0.5,
            ..small()
        })
        .is_err());
        assert!(Scene::new(SceneConfig {
            uniform_color: [255, 0, 0],
            ..small()
        })
        .is_err());
        assert!(Scene::new(SceneConfig {
            width: 10,
            height: 10,
            always_visible: true,
            ..small()
        })
        .is_err());
    }
}
