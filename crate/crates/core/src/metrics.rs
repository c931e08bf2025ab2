//! Counting accuracy measures.
//!
//! * `E`: mean of `|t − round(y)| / t` in percent, with the denominator set to 1 when `t = 0`.
//! * MAE on raw (unrounded) outputs.
//! * Relative frequency of each absolute counting error `|t − round(y)|`.
//!
//! Rounding is half away from zero with negative outputs clamped to 0, the
//! same rule used when serving predictions.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::dataset::SampleSource;
use crate::error::{Error, Result};
use crate::label::LabelMode;
use crate::model::{frame_tensor, round_count, Regressor, SeqInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "E")]
    pub e_percent: f64,
    pub mae: f64,
    /// `(absolute error, relative frequency)` pairs in ascending error order.
    pub abs_error_hist: Vec<(u32, f64)>,
    pub n: usize,
}

fn check(targets: &[u32], predictions: &[f64]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    if targets.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} targets but {} predictions",
            targets.len(),
            predictions.len()
        )));
    }
    Ok(())
}

#[inline]
fn abs_count_error(t: u32, y: f64) -> u32 {
    t.abs_diff(round_count(y))
}

pub fn relative_error_e(targets: &[u32], predictions: &[f64]) -> Result<f64> {
    check(targets, predictions)?;
    let sum: f64 = targets
        .iter()
        .zip(predictions)
        .map(|(&t, &y)| abs_count_error(t, y) as f64 / t.max(1) as f64)
        .sum();
    Ok(100.0 * sum / targets.len() as f64)
}

pub fn abs_error_hist(targets: &[u32], predictions: &[f64]) -> Result<BTreeMap<u32, f64>> {
    check(targets, predictions)?;
    let mut tally: BTreeMap<u32, usize> = BTreeMap::new();
    for (&t, &y) in targets.iter().zip(predictions) {
        *tally.entry(abs_count_error(t, y)).or_default() += 1;
    }
    let n = targets.len() as f64;
    Ok(tally.into_iter().map(|(k, c)| (k, c as f64 / n)).collect())
}

/// Mean absolute error of raw predictions.
pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let s: f64 = predictions.iter().zip(targets).map(|(y, t)| (y - t).abs()).sum();
    Ok(s / predictions.len() as f64)
}

impl EvalReport {
    pub fn from_predictions(targets: &[u32], predictions: &[f64]) -> Result<Self> {
        let e_percent = relative_error_e(targets, predictions)?;
        let t: Vec<f64> = targets.iter().map(|&t| t as f64).collect();
        Ok(Self {
            e_percent,
            mae: mae(predictions, &t)?,
            abs_error_hist: abs_error_hist(targets, predictions)?.into_iter().collect(),
            n: targets.len(),
        })
    }

    pub fn frequency(&self, abs_error: u32) -> f64 {
        self.abs_error_hist
            .iter()
            .find(|(k, _)| *k == abs_error)
            .map_or(0.0, |(_, f)| *f)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Plot-ready `abs_error,frequency` table.
    pub fn write_hist_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::from("abs_error,frequency\n");
        for (k, v) in &self.abs_error_hist {
            text.push_str(&format!("{k},{v}\n"));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Raw eval-mode outputs of `model` on every sample, in sample order.
pub fn predict_all<M, D>(model: &M, data: &D) -> Result<Vec<f64>>
where
    M: Regressor<f32>,
    D: SampleSource + ?Sized,
{
    let need = model.seq_len();
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let seq = data.sequence(i)?;
            if seq.len() < need {
                return Err(Error::Shape(format!(
                    "sample {i} holds {} frames, the model reads {need}",
                    seq.len()
                )));
            }
            let frames: Vec<Vec<f32>> = seq.frames[seq.len() - need..].iter().map(frame_tensor).collect();
            Ok(model.forward_eval(SeqInput::Frames(&frames))? as f64)
        })
        .collect()
}

/// Runs the model over a labelled set: MAE on raw outputs, `E` and the
/// error histogram on rounded outputs.
pub fn evaluate<M, D>(model: &M, data: &D, mode: LabelMode) -> Result<EvalReport>
where
    M: Regressor<f32>,
    D: SampleSource + ?Sized,
{
    if data.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let targets = crate::train::targets(data, mode)?;
    let predictions = predict_all(model, data)?;
    EvalReport::from_predictions(&targets, &predictions)
}
