//! Supervised training: stratified splits, MAE minimisation with Adam, early
//! stopping and the scratch / transfer / fine-tune strategies.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{SampleSource, Subset};
use crate::error::{Error, Result};
use crate::label::LabelMode;
use crate::metrics::{evaluate, EvalReport};
use crate::model::{frame_tensor, LrcnConfig, LrcnModel, Regressor, SeqInput};
use crate::nn::{Adam, AdamConfig, ConvStack, Gradients};

pub const FINE_TUNE_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Scratch,
    Transfer,
    FineTune,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(Self::Scratch),
            "transfer" => Ok(Self::Transfer),
            "fine_tune" | "fine-tune" => Ok(Self::FineTune),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected scratch, transfer or fine_tune)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Scratch => "scratch",
            Self::Transfer => "transfer",
            Self::FineTune => "fine_tune",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub fine_tune_learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Share of each count value that goes to training; the rest is the test set.
    pub split_fraction: f64,
    /// Share of the training part held out for early stopping.
    pub val_fraction: f64,
    /// Stop as soon as the monitored loss reaches this value.
    pub target_loss: Option<f64>,
    pub strategy: Strategy,
    pub label_mode: LabelMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            fine_tune_learning_rate: FINE_TUNE_LEARNING_RATE,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            split_fraction: 0.7,
            val_fraction: 0.1,
            target_loss: None,
            strategy: Strategy::Scratch,
            label_mode: LabelMode::AllPeople,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate > 0.0 && self.fine_tune_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !unit(self.split_fraction) {
            return Err(Error::Config(format!(
                "split fraction {} is outside (0, 1)",
                self.split_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} is outside [0, 1)",
                self.val_fraction
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and epoch budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub strategy: Strategy,
    pub epochs: Vec<EpochLog>,
    pub stopped_epoch: usize,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub trainable_params: usize,
    pub test: Option<EvalReport>,
    pub wall_clock_s: f64,
}

impl TrainReport {
    /// One `epoch,train_loss,val_loss` line per epoch; the validation column
    /// is empty when no holdout was used.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let v = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, v));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Per count value, `round(fraction·n)` samples go to the first part.
///
/// Returns sorted index lists; the result depends only on the labels, the
/// fraction and the seed.
pub fn stratified_split(labels: &[u32], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.is_empty() {
        return Err(Error::Empty("samples to split"));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("split fraction {fraction} is outside [0, 1]")));
    }
    let mut strata: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        strata.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for (_, mut idx) in strata {
        idx.shuffle(&mut rng);
        let k = (fraction * idx.len() as f64).round() as usize;
        first.extend_from_slice(&idx[..k]);
        second.extend_from_slice(&idx[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

/// Mean absolute error of raw predictions.
pub fn mae_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    crate::metrics::mae(predictions, targets)
}

/// Regression targets of every sample under `mode`.
pub fn targets(data: &(impl SampleSource + ?Sized), mode: LabelMode) -> Result<Vec<u32>> {
    (0..data.len())
        .map(|i| {
            data.label(i)
                .target(mode)
                .ok_or_else(|| Error::Label(format!("sample {i} has no customer count for customers-only training")))
        })
        .collect()
}

/// Model inputs of one sample: the frames the model reads, or their conv
/// features when the conv stack is frozen.
enum Prepared {
    Frames(Vec<Vec<f32>>),
    Features(Vec<Vec<f32>>),
}

impl Prepared {
    fn input(&self) -> SeqInput<'_, f32> {
        match self {
            Prepared::Frames(f) => SeqInput::Frames(f),
            Prepared::Features(f) => SeqInput::Features(f),
        }
    }
}

fn prepare<M: Regressor<f32>>(
    model: &M,
    data: &(impl SampleSource + ?Sized),
    i: usize,
    features: bool,
) -> Result<Prepared> {
    let seq = data.sequence(i)?;
    let need = model.seq_len();
    if seq.len() < need {
        return Err(Error::Shape(format!(
            "sample {i} holds {} frames, the model reads {need}",
            seq.len()
        )));
    }
    let frames: Vec<Vec<f32>> = seq.frames[seq.len() - need..].iter().map(frame_tensor).collect();
    Ok(if features {
        Prepared::Features(frames.iter().map(|f| model.frame_features(f)).collect())
    } else {
        Prepared::Frames(frames)
    })
}

/// Upper bound on cached frame tensors (1 GiB of `f32`).
const FRAME_CACHE_FLOATS: usize = 1 << 28;

/// Per-sample inputs, cached when the conv stack is frozen or the source is
/// already in memory.
struct Inputs<'a, D: SampleSource + ?Sized> {
    data: &'a D,
    cached: Option<Vec<Prepared>>,
}

impl<'a, D: SampleSource + ?Sized> Inputs<'a, D> {
    fn new<M: Regressor<f32>>(model: &M, data: &'a D) -> Result<Self> {
        let frozen = model.conv_frozen();
        let frame_floats = model.conv().input_len() * model.seq_len() * data.len();
        let cached = if frozen || (data.in_memory() && frame_floats <= FRAME_CACHE_FLOATS) {
            Some(
                (0..data.len())
                    .map(|i| prepare(model, data, i, frozen))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self { data, cached })
    }

    fn with<M: Regressor<f32>, T>(
        &self,
        model: &M,
        i: usize,
        f: impl FnOnce(SeqInput<'_, f32>) -> Result<T>,
    ) -> Result<T> {
        match &self.cached {
            Some(c) => f(c[i].input()),
            None => f(prepare(model, self.data, i, false)?.input()),
        }
    }
}

fn dropout_seed(seed: u64, epoch: usize, position: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (position as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

fn eval_loss<M: Regressor<f32>, D: SampleSource + ?Sized>(
    model: &M,
    inputs: &Inputs<'_, D>,
    targets: &[u32],
) -> Result<f64> {
    let mut sum = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let y = inputs.with(model, i, |x| model.forward_eval(x))? as f64;
        sum += (y - t as f64).abs();
    }
    Ok(sum / targets.len() as f64)
}

/// Minimises the MAE of `model` on `train`; early stopping watches `val`
/// (or the training loss when there is no holdout) and the best weights are
/// restored at the end.
///
/// Samples are processed one at a time in a seeded order so a fixed seed
/// always yields the same weights.
pub fn fit<M, D, V>(
    model: &mut M,
    train: &D,
    val: Option<&V>,
    config: &TrainConfig,
    learning_rate: f64,
) -> Result<TrainReport>
where
    M: Regressor<f32>,
    D: SampleSource + ?Sized,
    V: SampleSource + ?Sized,
{
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    let start = Instant::now();
    let train_targets = targets(train, config.label_mode)?;
    let val_set = match val {
        Some(v) if !v.is_empty() => Some((Inputs::new(model, v)?, targets(v, config.label_mode)?)),
        _ => None,
    };
    let inputs = Inputs::new(model, train)?;
    let trainable = model.trainable_mask();
    let mut adam = Adam::new(AdamConfig::with_learning_rate(learning_rate));
    let mut grads: Gradients<f32> = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut epochs = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            let scale = 1.0 / batch.len() as f32;
            for (k, &i) in batch.iter().enumerate() {
                let t = train_targets[i] as f32;
                let seed = dropout_seed(config.seed, epoch, b * config.batch_size + k);
                let y = inputs.with(model, i, |x| model.accumulate_abs_grad(x, t, scale, seed, &mut grads))?;
                loss_sum += (y - t).abs() as f64;
            }
            adam.step(model.params_mut(), &grads, &trainable);
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = match &val_set {
            Some((vi, vt)) => Some(eval_loss(model, vi, vt)?),
            None => None,
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Config(format!("loss diverged at epoch {epoch}")));
        }
        log::info!(
            "epoch {epoch}: train {train_loss:.4}{}",
            val_loss.map(|v| format!(" val {v:.4}")).unwrap_or_default()
        );
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, epoch, model.clone());
        }
        if config.target_loss.is_some_and(|t| monitored <= t) || epoch - best.1 >= config.patience {
            break;
        }
    }
    let stopped_epoch = epochs.last().map_or(0, |e| e.epoch);
    *model = best.2;
    Ok(TrainReport {
        strategy: config.strategy,
        epochs,
        stopped_epoch,
        best_epoch: best.1,
        trainable_params: model.count_trainable_params(),
        test: None,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Splits `data` into train/validation/test parts by count value.
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_dataset(data: &(impl SampleSource + ?Sized), config: &TrainConfig) -> Result<Splits> {
    let all = targets(data, config.label_mode)?;
    let (train_val, test) = stratified_split(&all, config.split_fraction, config.seed)?;
    let tv_labels: Vec<u32> = train_val.iter().map(|&i| all[i]).collect();
    let (val_local, train_local) = if config.val_fraction > 0.0 && !tv_labels.is_empty() {
        stratified_split(&tv_labels, config.val_fraction, config.seed.wrapping_add(1))?
    } else {
        (Vec::new(), (0..tv_labels.len()).collect())
    };
    Ok(Splits {
        train: train_local.iter().map(|&i| train_val[i]).collect(),
        val: val_local.iter().map(|&i| train_val[i]).collect(),
        test,
    })
}

fn train_on_splits<M, D>(
    model: &mut M,
    data: &D,
    splits: &Splits,
    config: &TrainConfig,
    learning_rate: f64,
) -> Result<TrainReport>
where
    M: Regressor<f32>,
    D: SampleSource + ?Sized,
{
    let train = Subset {
        inner: data,
        indices: splits.train.clone(),
    };
    let val = Subset {
        inner: data,
        indices: splits.val.clone(),
    };
    fit(model, &train, Some(&val), config, learning_rate)
}

fn attach_test<M, D>(report: &mut TrainReport, model: &M, data: &D, splits: &Splits, mode: LabelMode) -> Result<()>
where
    M: Regressor<f32>,
    D: SampleSource + ?Sized,
{
    if !splits.test.is_empty() {
        let test = Subset {
            inner: data,
            indices: splits.test.clone(),
        };
        report.test = Some(evaluate(model, &test, mode)?);
    }
    Ok(())
}

/// Full protocol for an already built model: stratified split, training with
/// early stopping on the holdout, evaluation on the test part.
pub fn train<M, D>(model: &mut M, data: &D, config: &TrainConfig) -> Result<TrainReport>
where
    M: Regressor<f32>,
    D: SampleSource + ?Sized,
{
    config.validate()?;
    let splits = split_dataset(data, config)?;
    let lr = match config.strategy {
        Strategy::FineTune => config.fine_tune_learning_rate,
        _ => config.learning_rate,
    };
    let mut report = train_on_splits(model, data, &splits, config, lr)?;
    attach_test(&mut report, model, data, &splits, config.label_mode)?;
    Ok(report)
}

/// Builds and trains an LRCN under `config.strategy`.
///
/// * scratch: random initialisation, every group trainable.
/// * transfer: conv weights copied from `base_conv` and frozen.
/// * fine_tune: the transfer run, then every group unfrozen and trained
///   further at the fine-tune learning rate. Epoch numbers continue across
///   both phases.
pub fn run_strategy<D>(
    model_config: &LrcnConfig,
    data: &D,
    base_conv: Option<&ConvStack<f32>>,
    config: &TrainConfig,
) -> Result<(LrcnModel<f32>, TrainReport)>
where
    D: SampleSource + ?Sized,
{
    config.validate()?;
    let mut cfg = model_config.clone();
    cfg.conv_frozen = false;
    let mut model = LrcnModel::<f32>::build(cfg, config.seed)?;
    if config.strategy != Strategy::Scratch {
        let base = base_conv.ok_or_else(|| {
            Error::Config(format!(
                "the {} strategy needs pretrained conv weights",
                config.strategy
            ))
        })?;
        model.transfer_conv_weights(base)?;
    }
    let splits = split_dataset(data, config)?;
    let mut report = train_on_splits(&mut model, data, &splits, config, config.learning_rate)?;
    if config.strategy == Strategy::FineTune {
        model.set_fine_tune();
        let tuned = train_on_splits(&mut model, data, &splits, config, config.fine_tune_learning_rate)?;
        let offset = report.stopped_epoch;
        report.epochs.extend(tuned.epochs.iter().map(|e| EpochLog {
            epoch: e.epoch + offset,
            ..*e
        }));
        report.stopped_epoch = offset + tuned.stopped_epoch;
        report.best_epoch = offset + tuned.best_epoch;
        report.trainable_params = tuned.trainable_params;
        report.wall_clock_s += tuned.wall_clock_s;
    }
    report.strategy = config.strategy;
    attach_test(&mut report, &model, data, &splits, config.label_mode)?;
    Ok((model, report))
}
