//! Fixed-stride sliding windows over a frame stream.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::frame::{RgbpFrame, RgbpSequence};

/// Outcome of pushing one raw frame into a [`SequenceWindow`].
#[derive(Debug, Clone, PartialEq)]
pub enum WindowEvent<T> {
    /// The frame index is not a multiple of the stride.
    Skipped,
    /// Kept, but fewer than `seq_len` kept frames are buffered.
    NotReady { buffered: usize },
    /// A full window ending at the newest kept frame, oldest first.
    Ready(Vec<T>),
}

/// Single-owner accumulator keeping raw indices `0, stride, 2·stride, …`.
///
/// A gap in kept indices (a dropped frame) restarts the window so that every
/// emitted sequence has exactly `stride` between consecutive indices.
#[derive(Debug, Clone)]
pub struct SequenceWindow<T> {
    seq_len: usize,
    stride: usize,
    buf: VecDeque<(u64, T)>,
}

impl<T: Clone> SequenceWindow<T> {
    pub fn new(seq_len: usize, stride: usize) -> Result<Self> {
        if seq_len == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "window needs seq_len >= 1 and stride >= 1, got {seq_len} and {stride}"
            )));
        }
        Ok(Self {
            seq_len,
            stride,
            buf: VecDeque::with_capacity(seq_len),
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn is_kept(&self, index: u64) -> bool {
        index % self.stride as u64 == 0
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    pub fn push(&mut self, index: u64, item: T) -> WindowEvent<T> {
        if !self.is_kept(index) {
            return WindowEvent::Skipped;
        }
        if let Some(&(last, _)) = self.buf.back() {
            if index != last + self.stride as u64 {
                self.buf.clear();
            }
        }
        if self.buf.len() == self.seq_len {
            self.buf.pop_front();
        }
        self.buf.push_back((index, item));
        if self.buf.len() == self.seq_len {
            WindowEvent::Ready(self.buf.iter().map(|(_, t)| t.clone()).collect())
        } else {
            WindowEvent::NotReady {
                buffered: self.buf.len(),
            }
        }
    }
}

/// All windows over an ordered run of RGBP frames.
pub fn window(frames: &[RgbpFrame], seq_len: usize, stride: usize) -> Result<Vec<RgbpSequence>> {
    let mut acc = SequenceWindow::new(seq_len, stride)?;
    let mut out = Vec::new();
    for f in frames {
        if let WindowEvent::Ready(fs) = acc.push(f.index(), f.clone()) {
            out.push(RgbpSequence::new(fs, stride, None)?);
        }
    }
    Ok(out)
}

/// Number of windows produced by `n` consecutive raw frames starting at index 0.
pub fn expected_window_count(n: usize, seq_len: usize, stride: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let kept = (n - 1) / stride + 1;
    (kept + 1).saturating_sub(seq_len)
}
