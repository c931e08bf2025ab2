//! Raw, quantized and RGBP frame types and the per-frame preprocessing steps.
//!
//! Every captured frame is resampled to the network input size with bilinear
//! interpolation, then uniformly quantized per channel. Quantized frames feed
//! the background model only; RGBP frames keep the resampled (unquantized) RGB
//! and pair it with the binary foreground channel.

use crate::error::{Error, Result};
use crate::label::PeopleLabel;

pub const FRAME_WIDTH: usize = 400;
pub const FRAME_HEIGHT: usize = 225;
pub const DEFAULT_LAMBDA_C: u8 = 4;
pub const DEFAULT_STRIDE: usize = 5;

/// Row-major interleaved 8-bit RGB image with stream bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub timestamp_ms: u64,
    pub index: u64,
}

impl RawFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, timestamp_ms: u64, index: u64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidFrame(format!("zero-sized frame {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidFrame(format!(
                "pixel buffer holds {} bytes, expected {}",
                pixels.len(),
                width * height * 3
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            timestamp_ms,
            index,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            pixels,
            timestamp_ms: 0,
            index: 0,
        }
    }

    pub fn with_position(mut self, index: u64, timestamp_ms: u64) -> Self {
        self.index = index;
        self.timestamp_ms = timestamp_ms;
        self
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn from_image(img: &image::RgbImage, index: u64, timestamp_ms: u64) -> Result<Self> {
        Self::new(
            img.width() as usize,
            img.height() as usize,
            img.as_raw().clone(),
            timestamp_ms,
            index,
        )
    }

    pub fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedFrame {
    pub width: usize,
    pub height: usize,
    pub lambda_c: u8,
    pub codes: Vec<u16>,
}

impl QuantizedFrame {
    pub fn lambda(&self) -> usize {
        levels(self.lambda_c)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn code(&self, x: usize, y: usize) -> u16 {
        self.codes[y * self.width + x]
    }
}

/// Binary foreground mask, one byte per pixel holding 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PChannel {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<u8>,
}

impl PChannel {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "mask holds {} values, expected {}",
                bits.len(),
                width * height
            )));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidFrame(format!("non-binary mask value {b}")));
        }
        Ok(Self { width, height, bits })
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbpFrame {
    pub rgb: RawFrame,
    pub p: PChannel,
}

impl RgbpFrame {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }

    pub fn index(&self) -> u64 {
        self.rgb.index
    }

    pub fn timestamp_ms(&self) -> u64 {
        self.rgb.timestamp_ms
    }
}

/// `T` temporally ordered RGBP frames; the label, if any, is the count in the last frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbpSequence {
    pub frames: Vec<RgbpFrame>,
    pub stride: usize,
    pub label: Option<PeopleLabel>,
}

impl RgbpSequence {
    pub fn new(frames: Vec<RgbpFrame>, stride: usize, label: Option<PeopleLabel>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty("sequence frames"));
        }
        if stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        let (w, h) = (frames[0].width(), frames[0].height());
        for pair in frames.windows(2) {
            if pair[1].index() != pair[0].index() + stride as u64 {
                return Err(Error::InvalidFrame(format!(
                    "kept frames {} and {} are not {stride} apart",
                    pair[0].index(),
                    pair[1].index()
                )));
            }
            if pair[1].timestamp_ms() < pair[0].timestamp_ms() {
                return Err(Error::InvalidFrame("sequence timestamps go backwards".into()));
            }
        }
        if frames.iter().any(|f| f.width() != w || f.height() != h) {
            return Err(Error::InvalidFrame("sequence frames differ in size".into()));
        }
        Ok(Self { frames, stride, label })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn last(&self) -> &RgbpFrame {
        self.frames.last().expect("sequences are never empty")
    }
}

#[inline]
pub fn levels(lambda_c: u8) -> usize {
    let l = lambda_c as usize;
    l * l * l
}

fn check_lambda_c(lambda_c: u8) -> Result<()> {
    if !(2..=16).contains(&lambda_c) {
        return Err(Error::OutOfRange(format!(
            "lambda_c must lie in 2..=16, got {lambda_c}"
        )));
    }
    Ok(())
}

/// Bilinear resample to `width`×`height` with pixel-center alignment.
///
/// Source coordinates are `(x + 0.5)·scale − 0.5`, clamped to the image, so a
/// same-size resample is the identity.
pub fn resample_to(frame: &RawFrame, width: usize, height: usize) -> Result<RawFrame> {
    if frame.width == 0 || frame.height == 0 || width == 0 || height == 0 {
        return Err(Error::InvalidFrame(format!(
            "cannot resample {}x{} to {width}x{height}",
            frame.width, frame.height
        )));
    }
    if frame.pixels.len() != frame.width * frame.height * 3 {
        return Err(Error::InvalidFrame("pixel buffer length mismatch".into()));
    }
    if frame.width == width && frame.height == height {
        return Ok(frame.clone());
    }

    let taps = |src: usize, dst: usize| -> Vec<(usize, usize, f32)> {
        let scale = src as f32 / dst as f32;
        (0..dst)
            .map(|d| {
                let s = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f32);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f32)
            })
            .collect()
    };
    let xs = taps(frame.width, width);
    let ys = taps(frame.height, height);

    let stride = frame.width * 3;
    let src = &frame.pixels;
    let mut out = vec![0u8; width * height * 3];
    for (row, &(y0, y1, fy)) in out.chunks_exact_mut(width * 3).zip(&ys) {
        let r0 = &src[y0 * stride..(y0 + 1) * stride];
        let r1 = &src[y1 * stride..(y1 + 1) * stride];
        for (px, &(x0, x1, fx)) in row.chunks_exact_mut(3).zip(&xs) {
            for c in 0..3 {
                let a = r0[x0 * 3 + c] as f32;
                let b = r0[x1 * 3 + c] as f32;
                let d = r1[x0 * 3 + c] as f32;
                let e = r1[x1 * 3 + c] as f32;
                let top = a + (b - a) * fx;
                let bottom = d + (e - d) * fx;
                px[c] = (top + (bottom - top) * fy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RawFrame::new(width, height, out, frame.timestamp_ms, frame.index)
}

/// Resample to the 400×225 network input size.
pub fn resample(frame: &RawFrame) -> Result<RawFrame> {
    resample_to(frame, FRAME_WIDTH, FRAME_HEIGHT)
}

#[inline]
pub fn quantize_pixel(rgb: [u8; 3], lambda_c: u8) -> u16 {
    let l = lambda_c as u32;
    let bin = |v: u8| v as u32 * l / 256;
    (bin(rgb[0]) * l * l + bin(rgb[1]) * l + bin(rgb[2])) as u16
}

/// Per-channel bin `floor(v·λc/256)`, packed as `r·λc² + g·λc + b`.
pub fn quantize(frame: &RawFrame, lambda_c: u8) -> Result<QuantizedFrame> {
    check_lambda_c(lambda_c)?;
    let codes = frame
        .pixels
        .chunks_exact(3)
        .map(|p| quantize_pixel([p[0], p[1], p[2]], lambda_c))
        .collect();
    Ok(QuantizedFrame {
        width: frame.width,
        height: frame.height,
        lambda_c,
        codes,
    })
}

/// Bin triple of a code, in R, G, B order.
#[inline]
pub fn code_bins(code: u16, lambda_c: u8) -> [u16; 3] {
    let l = lambda_c as u16;
    [code / (l * l), (code / l) % l, code % l]
}

/// Normalized color of a quantization code: each channel is `bin/(λc−1)`.
pub fn dequantize_code(code: u16, lambda_c: u8) -> Result<[f32; 3]> {
    check_lambda_c(lambda_c)?;
    if code as usize >= levels(lambda_c) {
        return Err(Error::OutOfRange(format!(
            "code {code} outside 0..{}",
            levels(lambda_c)
        )));
    }
    let top = (lambda_c - 1) as f32;
    Ok(code_bins(code, lambda_c).map(|b| b as f32 / top))
}

/// Representative 8-bit color of a code (bin centre), used to round-trip codes to pixels.
pub fn code_to_rgb(code: u16, lambda_c: u8) -> [u8; 3] {
    let width = 256 / lambda_c as u32;
    code_bins(code, lambda_c).map(|b| (b as u32 * 256 / lambda_c as u32 + width / 2).min(255) as u8)
}

pub fn assemble_rgbp(rgb: RawFrame, p: PChannel) -> Result<RgbpFrame> {
    if rgb.dims() != (p.width, p.height) {
        return Err(Error::DimensionMismatch {
            expected: rgb.dims(),
            actual: (p.width, p.height),
        });
    }
    Ok(RgbpFrame { rgb, p })
}
