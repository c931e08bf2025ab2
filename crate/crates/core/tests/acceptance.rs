//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use peoplecount_core::annotation::AnnotationSession;
use peoplecount_core::background::{BackgroundModel, ForegroundParams};
use peoplecount_core::dataset::{InMemoryDataset, LabelTable, SampleSource};
use peoplecount_core::frame::{quantize, QuantizedFrame};
use peoplecount_core::label::LabelMode;
use peoplecount_core::metrics::{abs_error_hist, evaluate, relative_error_e};
use peoplecount_core::model::{frame_tensor, LrcnConfig, LrcnModel, Regressor, SeqInput};
use peoplecount_core::pipeline::{PipelineConfig, PipelineState, PreprocessConfig, Preprocessor};
use peoplecount_core::synth::{labelled_sequences, Scene, SceneConfig};
use peoplecount_core::train::{fit, TrainConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn param_counts() -> Outcome {
    let rows: [(&[usize], usize); 10] = [
        (&[250], 9_083_251),
        (&[1000], 39_333_001),
        (&[500], 18_666_501),
        (&[125], 4_479_126),
        (&[1000, 250], 40_583_251),
        (&[500, 250], 19_417_251),
        (&[500, 500], 20_668_501),
        (&[1000, 500], 42_334_501),
        (&[1000, 1000], 47_337_001),
        (&[250, 250], 9_584_251),
    ];
    let mut bad = Vec::new();
    for (units, want) in rows {
        let config = LrcnConfig {
            conv_frozen: true,
            ..LrcnConfig::with_units(units)
        };
        let got = LrcnModel::<f32>::zeros(config)
            .map_err(|e| e.to_string())?
            .count_trainable_params();
        if got != want {
            bad.push(format!("U={units:?}: {got} != {want}"));
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            "10/10 rows exact".into()
        } else {
            bad.join("; ")
        },
    )
}

/// Recomputes histograms and the gated background from the raw window at every step.
struct BatchOracle {
    lambda: usize,
    eta: usize,
    tau: (u64, u64),
    frames: Vec<Vec<u16>>,
    background: Option<Vec<u16>>,
}

impl BatchOracle {
    fn counts(&self, px: usize) -> Vec<u32> {
        let start = self.frames.len().saturating_sub(self.eta);
        let mut c = vec![0u32; self.lambda];
        for f in &self.frames[start..] {
            c[f[px] as usize] += 1;
        }
        c
    }

    fn push(&mut self, codes: Vec<u16>) {
        let n_px = codes.len();
        self.frames.push(codes);
        let n = self.frames.len();
        if n < self.eta {
            return;
        }
        let mut next = Vec::with_capacity(n_px);
        for px in 0..n_px {
            let c = self.counts(px);
            let best = *c.iter().max().unwrap();
            let mode = c.iter().position(|&v| v == best).unwrap() as u16;
            let v = match &self.background {
                None => mode,
                Some(prev) if best as u64 * self.tau.1 >= self.tau.0 * self.eta as u64 => {
                    let _ = prev;
                    mode
                }
                Some(prev) => prev[px],
            };
            next.push(v);
        }
        self.background = Some(next);
    }
}

fn background_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let taus = [(0.6, (3u64, 5u64)), (0.8, (4, 5)), (1.0, (1, 1))];
    let streams = 1000;
    let mut steps = 0usize;
    for s in 0..streams {
        let lambda_c: u8 = rng.gen_range(2..=4);
        let lambda = (lambda_c as usize).pow(3);
        let eta = rng.gen_range(5..=20);
        let (tau, ratio) = taus[rng.gen_range(0..3)];
        let len = rng.gen_range(eta..=4 * eta);
        let mut model = BackgroundModel::new(8, 8, lambda_c, eta, tau).map_err(|e| e.to_string())?;
        let mut oracle = BatchOracle {
            lambda,
            eta,
            tau: ratio,
            frames: Vec::new(),
            background: None,
        };
        let mut state: Vec<u16> = (0..64).map(|_| rng.gen_range(0..lambda as u16)).collect();
        let p_change = rng.gen_range(0.0..0.1);
        let p_noise = rng.gen_range(0.0..0.4);
        for _ in 0..len {
            let codes: Vec<u16> = state
                .iter_mut()
                .map(|st| {
                    if rng.gen_bool(p_change) {
                        *st = rng.gen_range(0..lambda as u16);
                    }
                    if rng.gen_bool(p_noise) {
                        rng.gen_range(0..lambda as u16)
                    } else {
                        *st
                    }
                })
                .collect();
            oracle.push(codes.clone());
            model
                .ingest(QuantizedFrame {
                    width: 8,
                    height: 8,
                    lambda_c,
                    codes,
                })
                .map_err(|e| e.to_string())?;
            steps += 1;
            let got = model.background().map(|b| b.codes.clone());
            if got != oracle.background {
                return Err(format!(
                    "stream {s}: background differs after {} frames",
                    oracle.frames.len()
                ));
            }
            for px in 0..64 {
                let h: Vec<u32> = model.histogram(px % 8, px / 8).iter().map(|&v| v as u32).collect();
                if h != oracle.counts(px) {
                    return Err(format!("stream {s}: histogram of pixel {px} differs"));
                }
            }
        }
    }
    Ok(format!("{streams} streams, {steps} steps identical"))
}

fn foreground_correctness() -> Outcome {
    let pre = PreprocessConfig::default();
    let warm = 2000;
    let eval = 400;
    let scene = Scene::new(SceneConfig {
        frames: warm + eval,
        actors: 6,
        seed: 7,
        ..SceneConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let params = ForegroundParams::with_beta(pre.beta).map_err(|e| e.to_string())?;
    let mut p = Preprocessor::new(pre.clone()).map_err(|e| e.to_string())?;
    let (mut hit, mut eligible, mut excluded) = (0usize, 0usize, 0usize);
    for t in 0..scene.len() {
        let (frame, truth) = scene.render(t).map_err(|e| e.to_string())?;
        let out = p.step(&frame, t >= warm).map_err(|e| e.to_string())?;
        if t < warm {
            continue;
        }
        let rgbp = out.rgbp.ok_or("background not initialised after warm-up")?;
        let qf = quantize(&frame, pre.lambda_c).map_err(|e| e.to_string())?;
        let qb = quantize(&scene.background(t), pre.lambda_c).map_err(|e| e.to_string())?;
        for (i, &m) in truth.mask.bits.iter().enumerate() {
            if m == 0 {
                continue;
            }
            if !params
                .is_foreground(qf.codes[i], qb.codes[i], pre.lambda_c)
                .map_err(|e| e.to_string())?
            {
                excluded += 1;
                continue;
            }
            eligible += 1;
            hit += rgbp.p.bits[i] as usize;
        }
    }
    let recall = hit as f64 / eligible.max(1) as f64;

    let empty = Scene::new(SceneConfig {
        frames: warm + 200,
        actors: 0,
        seed: 8,
        ..SceneConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut p = Preprocessor::new(pre).map_err(|e| e.to_string())?;
    let mut false_pos = 0usize;
    for t in 0..empty.len() {
        let (frame, _) = empty.render(t).map_err(|e| e.to_string())?;
        if let Some(rgbp) = p.step(&frame, t >= warm).map_err(|e| e.to_string())?.rgbp {
            false_pos += rgbp.p.count_ones();
        }
    }
    check(
        recall >= 0.9 && false_pos == 0 && eligible > 0,
        format!(
            "recall {:.4} over {eligible} sprite pixels ({excluded} camouflaged excluded); {false_pos} foreground pixels on the empty scene",
            recall
        ),
    )
}

fn gradient_check() -> Outcome {
    let config = LrcnConfig {
        input_width: 24,
        input_height: 16,
        conv_layers: 2,
        filters: 2,
        kernel: 3,
        lstm_units: vec![4, 3],
        seq_len: 3,
        ..LrcnConfig::default()
    };
    let mut model = LrcnModel::<f64>::build(config, 9).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for p in model.params_mut() {
        p.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
    }
    let n = 24 * 16;
    let frames: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            (0..4 * n)
                .map(|i| {
                    if i < 3 * n {
                        rng.gen::<f64>()
                    } else {
                        rng.gen_range(0..2) as f64
                    }
                })
                .collect()
        })
        .collect();
    let trace = model
        .trace(SeqInput::Frames(&frames), None, true)
        .map_err(|e| e.to_string())?;
    let mut grads = Vec::new();
    model
        .backward(&trace, 1.0, &mut grads, false)
        .map_err(|e| e.to_string())?;
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let h = 1e-5;
    let mut worst: (f64, String) = (0.0, String::new());
    for (g, name) in names.iter().enumerate() {
        let len = grads[g].len();
        let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
        for i in 0..len {
            let orig = model.params_mut()[g][i];
            model.params_mut()[g][i] = orig + h;
            let up = model.forward_frames(&frames).map_err(|e| e.to_string())?;
            model.params_mut()[g][i] = orig - h;
            let down = model.forward_frames(&frames).map_err(|e| e.to_string())?;
            model.params_mut()[g][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[g][i];
            diff += (analytic - numeric).powi(2);
            norm_a += analytic * analytic;
            norm_n += numeric * numeric;
        }
        let rel = diff.sqrt() / norm_a.sqrt().max(norm_n.sqrt()).max(1e-12);
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
        if !(rel < 1e-3) {
            return Err(format!("group {name}: relative error {rel:.2e}"));
        }
    }
    Ok(format!("{} groups, worst {:.2e} ({})", names.len(), worst.0, worst.1))
}

fn overfit_data() -> Result<InMemoryDataset, String> {
    let pre = PreprocessConfig {
        width: 100,
        height: 56,
        eta: 20,
        bg_interval_ms: 250,
        ..PreprocessConfig::default()
    };
    let mut sequences = Vec::new();
    for (k, actors) in [0, 2, 4, 6, 8].into_iter().enumerate() {
        let scene = Scene::new(SceneConfig {
            width: 100,
            height: 56,
            frames: 5 * 43 + 1,
            actors,
            radius: (3.0, 5.0),
            speed: (0.5, 2.0),
            seed: 10 + k as u64,
            texture_seed: 3,
            ..SceneConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let mut d = labelled_sequences(&scene, &pre, 5, 5).map_err(|e| e.to_string())?;
        d.sequences.truncate(40);
        sequences.extend(d.sequences);
    }
    InMemoryDataset::new(sequences).map_err(|e| e.to_string())
}

fn overfit() -> Outcome {
    let data = overfit_data()?;
    let mut spread = BTreeMap::new();
    for i in 0..data.len() {
        *spread.entry(data.label(i).total_count).or_insert(0usize) += 1;
    }
    let config = LrcnConfig {
        input_width: 100,
        input_height: 56,
        filters: 4,
        lstm_units: vec![32],
        seq_len: 5,
        ..LrcnConfig::default()
    };
    let mut model = LrcnModel::<f32>::build(config, 3).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        max_epochs: 200,
        patience: 200,
        target_loss: Some(0.5),
        ..TrainConfig::default()
    };
    let report = fit(&mut model, &data, Some(&data), &cfg, cfg.learning_rate).map_err(|e| e.to_string())?;
    let mae = evaluate(&model, &data, LabelMode::AllPeople)
        .map_err(|e| e.to_string())?
        .mae;
    check(
        data.len() == 200 && mae <= 0.5,
        format!(
            "{} sequences, counts {:?}..{:?}, training MAE {mae:.3} after {} epochs",
            data.len(),
            spread.keys().next().unwrap(),
            spread.keys().last().unwrap(),
            report.best_epoch
        ),
    )
}

fn oracle_round(y: f64) -> u32 {
    if y < 0.5 {
        0
    } else {
        (y + 0.5).floor() as u32
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut zero_targets = 0usize;
    for v in 0..1000 {
        let n = rng.gen_range(1..=60);
        let targets: Vec<u32> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0 } else { rng.gen_range(0..25) })
            .collect();
        let preds: Vec<f64> = targets
            .iter()
            .map(|&t| match rng.gen_range(0..4) {
                0 => t as f64,
                1 => rng.gen_range(-3..30) as f64 + 0.5,
                _ => rng.gen_range(-3.0..30.0),
            })
            .collect();
        zero_targets += targets.iter().filter(|&&t| t == 0).count();
        let mut sum = 0.0;
        let mut tally: BTreeMap<u32, usize> = BTreeMap::new();
        for (&t, &y) in targets.iter().zip(&preds) {
            let a = t.abs_diff(oracle_round(y));
            sum += a as f64 / if t == 0 { 1.0 } else { t as f64 };
            *tally.entry(a).or_default() += 1;
        }
        let e_oracle = 100.0 * sum / n as f64;
        let hist_oracle: BTreeMap<u32, f64> = tally.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect();
        let e = relative_error_e(&targets, &preds).map_err(|e| e.to_string())?;
        let hist = abs_error_hist(&targets, &preds).map_err(|e| e.to_string())?;
        if e != e_oracle {
            return Err(format!("vector {v}: E {e} != oracle {e_oracle}"));
        }
        if hist != hist_oracle {
            return Err(format!("vector {v}: histogram differs from the tally"));
        }
    }
    Ok(format!("1000 vectors identical ({zero_targets} zero targets)"))
}

fn latency() -> Outcome {
    let model = Arc::new(LrcnModel::<f32>::build(LrcnConfig::default(), 1).map_err(|e| e.to_string())?);
    let config = PipelineConfig::default();
    let scene = Scene::new(SceneConfig {
        frames: 2000 + 20 * 12,
        actors: 5,
        seed: 3,
        ..SceneConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let frames: Vec<_> = (0..scene.len())
        .map(|t| scene.render(t).map(|r| r.0))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut state = PipelineState::new(config, model.clone()).map_err(|e| e.to_string())?;
    let mut per_prediction = Vec::new();
    let mut busy = Duration::ZERO;
    let mut measured_from = None;
    for (t, f) in frames.iter().enumerate() {
        let start = Instant::now();
        let out = state.ingest_frame(f).map_err(|e| e.to_string())?;
        let took = start.elapsed();
        if out.is_some() {
            per_prediction.push(took);
            measured_from.get_or_insert(t);
        }
        if measured_from.is_some() {
            busy += took;
        }
    }
    let first = measured_from.ok_or("no prediction was emitted")?;
    let video_s = (frames.len() - first) as f64 / 20.0;
    let rate = per_prediction.len() as f64 / busy.as_secs_f64();
    let worst = per_prediction.iter().max().copied().unwrap_or_default();
    let mut sorted = per_prediction.clone();
    sorted.sort();
    let median = sorted[sorted.len() / 2];

    let seq_frames: Vec<Vec<f32>> = frames[..9]
        .iter()
        .map(|f| {
            let rgbp =
                peoplecount_core::frame::assemble_rgbp(f.clone(), peoplecount_core::frame::PChannel::empty(400, 225))
                    .unwrap();
            frame_tensor(&rgbp)
        })
        .collect();
    let start = Instant::now();
    model
        .forward_eval(SeqInput::Frames(&seq_frames))
        .map_err(|e| e.to_string())?;
    let full = start.elapsed();
    check(
        worst <= Duration::from_millis(250) && rate >= 4.0 && busy.as_secs_f64() <= video_s,
        format!(
            "{} predictions, median {:.1} ms, max {:.1} ms, {:.1} predictions/s of ingest time, {:.1} s busy for {:.1} s of video; uncached 9-frame forward {:.1} ms; {} worker thread(s)",
            per_prediction.len(),
            median.as_secs_f64() * 1e3,
            worst.as_secs_f64() * 1e3,
            rate,
            busy.as_secs_f64(),
            video_s,
            full.as_secs_f64() * 1e3,
            rayon::current_num_threads()
        ),
    )
}

/// Per-frame replay of an event list, used to accept or reject each operation.
fn replay(initial: i64, events: &[(u64, i8)], frames: u64) -> Vec<i64> {
    (0..frames)
        .map(|k| initial + events.iter().filter(|e| e.0 <= k).map(|e| e.1 as i64).sum::<i64>())
        .collect()
}

fn annotation_replay() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut accepted, mut rejected) = (0usize, 0usize);
    for s in 0..500 {
        let frames = rng.gen_range(1..120u64);
        let mode = if rng.gen_bool(0.5) {
            LabelMode::AllPeople
        } else {
            LabelMode::CustomersOnly
        };
        let mut session = AnnotationSession::new(format!("video{s}"), frames, mode);
        let mut initial: Option<i64> = None;
        let mut log: Vec<(u64, u64, i8)> = Vec::new();
        let mut seq = 0u64;
        for _ in 0..rng.gen_range(1..60) {
            let op = rng.gen_range(0..10);
            if op == 0 || initial.is_none() {
                let c = rng.gen_range(-1..4i64);
                let events: Vec<(u64, i8)> = log.iter().map(|e| (e.1, e.2)).collect();
                let ok = c >= 0 && replay(c, &events, frames).iter().all(|&v| v >= 0);
                if session.set_initial(c).is_ok() != ok {
                    return Err(format!("session {s}: set_initial({c}) disagrees with replay"));
                }
                if ok {
                    initial = Some(c);
                }
            } else if op == 1 {
                let latest = log.iter().enumerate().max_by_key(|(_, e)| e.0).map(|(i, _)| i);
                let ok = latest.is_some_and(|i| {
                    let rest: Vec<(u64, i8)> = log
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, e)| (e.1, e.2))
                        .collect();
                    replay(initial.unwrap(), &rest, frames).iter().all(|&v| v >= 0)
                });
                if session.undo().is_ok() != ok {
                    return Err(format!("session {s}: undo disagrees with replay"));
                }
                if ok {
                    log.remove(latest.unwrap());
                }
            } else {
                let frame = rng.gen_range(0..frames);
                let delta: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };
                let mut events: Vec<(u64, i8)> = log.iter().map(|e| (e.1, e.2)).collect();
                events.push((frame, delta));
                let ok = replay(initial.unwrap(), &events, frames).iter().all(|&v| v >= 0);
                if session.adjust(frame, delta).is_ok() != ok {
                    return Err(format!("session {s}: adjust({frame}, {delta}) disagrees with replay"));
                }
                if ok {
                    log.push((seq, frame, delta));
                    seq += 1;
                    accepted += 1;
                } else {
                    rejected += 1;
                }
            }
            if let Some(i) = initial {
                let events: Vec<(u64, i8)> = log.iter().map(|e| (e.1, e.2)).collect();
                let want: Vec<u32> = replay(i, &events, frames).into_iter().map(|v| v as u32).collect();
                if session.materialize().map_err(|e| e.to_string())? != want {
                    return Err(format!("session {s}: materialisation differs from replay"));
                }
            }
        }
        let json = session.to_json().map_err(|e| e.to_string())?;
        let restored = AnnotationSession::from_json(&json).map_err(|e| e.to_string())?;
        if restored != session || restored.to_json().map_err(|e| e.to_string())? != json {
            return Err(format!("session {s}: session round trip differs"));
        }
        let ts: Vec<u64> = (0..frames).map(|k| k * 50).collect();
        if initial.is_none() {
            if session.export(&ts, None).is_ok() {
                return Err(format!("session {s}: export without a first-frame count succeeded"));
            }
            continue;
        }
        let table = session.export(&ts, None).map_err(|e| e.to_string())?;
        let csv = table.to_csv_string();
        let back = LabelTable::from_csv_reader(csv.as_bytes()).map_err(|e| e.to_string())?;
        if back != table || back.to_csv_string() != csv {
            return Err(format!("session {s}: label table round trip differs"));
        }
    }
    Ok(format!(
        "500 sessions, {accepted} adjustments accepted, {rejected} rejected, round trips identical"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("parameter-count reproduction", param_counts),
        ("background-model oracle equivalence", background_oracle),
        ("foreground correctness", foreground_correctness),
        ("gradient check", gradient_check),
        ("overfit sanity", overfit),
        ("metric correctness", metric_oracles),
        ("latency envelope", latency),
        ("annotation materialisation", annotation_replay),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
