//! Streaming per-pixel histogram background model.
//!
//! A ring buffer holds the last `eta` quantized frames and every pixel keeps a
//! histogram of the codes currently in the ring. Once `eta` frames have been
//! seen the background is the per-pixel mode; afterwards a pixel only adopts a
//! new mode when a single bin holds at least `tau·eta` samples, which keeps
//! people standing still out of the background.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::frame::{dequantize_code, levels, PChannel, QuantizedFrame};

pub const DEFAULT_ETA: usize = 100;
pub const DEFAULT_TAU: f64 = 0.8;
pub const DEFAULT_BETA: f64 = 0.1;
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForegroundParams {
    pub beta: f64,
    pub gray_weights: [f64; 3],
}

impl Default for ForegroundParams {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            gray_weights: LUMA_WEIGHTS,
        }
    }
}

impl ForegroundParams {
    pub fn with_beta(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {beta}")));
        }
        Ok(Self {
            beta,
            ..Self::default()
        })
    }

    /// Gray level of the absolute per-channel difference of two codes, in [0, 1].
    pub fn gray_difference(&self, a: u16, b: u16, lambda_c: u8) -> Result<f64> {
        let ca = dequantize_code(a, lambda_c)?;
        let cb = dequantize_code(b, lambda_c)?;
        Ok((0..3)
            .map(|c| self.gray_weights[c] * (ca[c] as f64 - cb[c] as f64).abs())
            .sum())
    }

    pub fn is_foreground(&self, a: u16, b: u16, lambda_c: u8) -> Result<bool> {
        Ok(self.gray_difference(a, b, lambda_c)? > self.beta)
    }
}

/// Smallest integer count satisfying `count >= tau·eta`.
///
/// Products that land within 1e-9 of an integer are snapped to it so that,
/// e.g., 0.8·100 gives a gate of exactly 80.
pub fn gate_count(tau: f64, eta: usize) -> u32 {
    let x = tau * eta as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as u32
    } else {
        x.ceil() as u32
    }
}

/// Most frequent code; ties go to the lowest code.
pub fn mode_of(counts: &[u16]) -> Result<u16> {
    let mut best = 0usize;
    let mut best_count = 0u16;
    for (code, &c) in counts.iter().enumerate() {
        if c > best_count {
            best = code;
            best_count = c;
        }
    }
    if best_count == 0 {
        return Err(Error::Empty("pixel histogram"));
    }
    Ok(best as u16)
}

/// Gated update: adopt the mode only when its bin holds at least `gate` samples.
#[inline]
pub fn update_pixel(counts: &[u16], prev_code: u16, gate: u32) -> u16 {
    let (mut best, mut best_count) = (0usize, 0u16);
    for (code, &c) in counts.iter().enumerate() {
        if c > best_count {
            best = code;
            best_count = c;
        }
    }
    if best_count as u32 >= gate && best_count > 0 {
        best as u16
    } else {
        prev_code
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSnapshot {
    pub background: Option<QuantizedFrame>,
    pub frames_ingested: u64,
}

impl BackgroundSnapshot {
    pub fn initialized(&self) -> bool {
        self.background.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct BackgroundModel {
    eta: usize,
    tau: f64,
    gate: u32,
    lambda_c: u8,
    width: usize,
    height: usize,
    ring: VecDeque<QuantizedFrame>,
    hist: Vec<u16>,
    background: Option<QuantizedFrame>,
    frames_ingested: u64,
}

impl BackgroundModel {
    pub fn new(width: usize, height: usize, lambda_c: u8, eta: usize, tau: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("background model needs non-empty frames".into()));
        }
        if !(2..=16).contains(&lambda_c) {
            return Err(Error::Config(format!("lambda_c must lie in 2..=16, got {lambda_c}")));
        }
        if eta == 0 || eta > u16::MAX as usize {
            return Err(Error::Config(format!("eta must lie in 1..=65535, got {eta}")));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
        }
        Ok(Self {
            eta,
            tau,
            gate: gate_count(tau, eta),
            lambda_c,
            width,
            height,
            ring: VecDeque::with_capacity(eta),
            hist: vec![0; width * height * levels(lambda_c)],
            background: None,
            frames_ingested: 0,
        })
    }

    pub fn eta(&self) -> usize {
        self.eta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn gate(&self) -> u32 {
        self.gate
    }

    pub fn lambda_c(&self) -> u8 {
        self.lambda_c
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn frames_ingested(&self) -> u64 {
        self.frames_ingested
    }

    pub fn ring_len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.background.is_some()
    }

    pub fn background(&self) -> Option<&QuantizedFrame> {
        self.background.as_ref()
    }

    pub fn histogram(&self, x: usize, y: usize) -> &[u16] {
        let l = levels(self.lambda_c);
        let o = (y * self.width + x) * l;
        &self.hist[o..o + l]
    }

    pub fn ring(&self) -> impl Iterator<Item = &QuantizedFrame> {
        self.ring.iter()
    }

    fn check(&self, q: &QuantizedFrame) -> Result<()> {
        if q.dims() != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                actual: q.dims(),
            });
        }
        if q.lambda_c != self.lambda_c {
            return Err(Error::Config(format!(
                "frame quantized with lambda_c={}, model uses {}",
                q.lambda_c, self.lambda_c
            )));
        }
        Ok(())
    }

    pub fn ingest(&mut self, q: QuantizedFrame) -> Result<()> {
        self.check(&q)?;
        let l = levels(self.lambda_c);
        let evicted = if self.ring.len() == self.eta {
            self.ring.pop_front()
        } else {
            None
        };
        if let Some(old) = &evicted {
            for (px, &code) in old.codes.iter().enumerate() {
                self.hist[px * l + code as usize] -= 1;
            }
        }
        for (px, &code) in q.codes.iter().enumerate() {
            self.hist[px * l + code as usize] += 1;
        }
        self.frames_ingested += 1;

        if self.frames_ingested == self.eta as u64 {
            let codes = self.hist.chunks_exact(l).map(mode_of).collect::<Result<Vec<_>>>()?;
            self.background = Some(QuantizedFrame {
                width: self.width,
                height: self.height,
                lambda_c: self.lambda_c,
                codes,
            });
        } else if let Some(bg) = self.background.as_mut() {
            // A pixel whose histogram did not change keeps its previous decision.
            let old = evicted.as_ref().expect("ring is full once initialized");
            for px in 0..q.codes.len() {
                if old.codes[px] != q.codes[px] {
                    let counts = &self.hist[px * l..(px + 1) * l];
                    bg.codes[px] = update_pixel(counts, bg.codes[px], self.gate);
                }
            }
        }
        self.ring.push_back(q);
        Ok(())
    }

    pub fn foreground(&self, q: &QuantizedFrame, params: &ForegroundParams) -> Result<PChannel> {
        self.check(q)?;
        let bg = self.background.as_ref().ok_or(Error::NotReady {
            ingested: self.frames_ingested as usize,
            required: self.eta,
        })?;
        let table = foreground_table(self.lambda_c, params)?;
        let l = levels(self.lambda_c);
        let bits = q
            .codes
            .iter()
            .zip(&bg.codes)
            .map(|(&a, &b)| table[a as usize * l + b as usize])
            .collect();
        Ok(PChannel {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn snapshot(&self) -> BackgroundSnapshot {
        BackgroundSnapshot {
            background: self.background.clone(),
            frames_ingested: self.frames_ingested,
        }
    }
}

/// λ×λ lookup of the foreground decision for every (frame code, background code) pair.
pub fn foreground_table(lambda_c: u8, params: &ForegroundParams) -> Result<Vec<u8>> {
    let l = levels(lambda_c);
    let colors = (0..l as u16)
        .map(|c| dequantize_code(c, lambda_c))
        .collect::<Result<Vec<_>>>()?;
    let mut table = vec![0u8; l * l];
    for (a, ca) in colors.iter().enumerate() {
        for (b, cb) in colors.iter().enumerate() {
            let gray: f64 = (0..3)
                .map(|c| params.gray_weights[c] * (ca[c] as f64 - cb[c] as f64).abs())
                .sum();
            table[a * l + b] = (gray > params.beta) as u8;
        }
    }
    Ok(table)
}
