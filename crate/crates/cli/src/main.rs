use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use peoplecount_core::background::{DEFAULT_BETA, DEFAULT_ETA, DEFAULT_TAU};
use peoplecount_core::checkpoint::{load_lrcn, save_baseline, save_lrcn, AnyModel};
use peoplecount_core::dataset::{
    frame_file_name, import_dataset, write_rgbp, LabelRow, LabelTable, ManifestDataset, SampleSource, SequenceManifest,
    FRAMES_DIR, LABELS_FILE,
};
use peoplecount_core::error::{Error, Result};
use peoplecount_core::frame::{
    quantize, resample_to, RawFrame, DEFAULT_LAMBDA_C, DEFAULT_STRIDE, FRAME_HEIGHT, FRAME_WIDTH,
};
use peoplecount_core::label::LabelMode;
use peoplecount_core::metrics::evaluate;
use peoplecount_core::model::{BaselineConfig, BaselineModel, LrcnConfig};
use peoplecount_core::pipeline::{
    PipelineConfig, PipelineState, PreprocessConfig, Preprocessor, DEFAULT_BG_INTERVAL_MS,
};
use peoplecount_core::synth::{Scene, SceneConfig};
use peoplecount_core::train::{run_strategy, train, Strategy, TrainConfig};

const MANIFEST_FILE: &str = "manifest.json";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Parser)]
#[command(name = "peoplecount", version, about = "People counting from surveillance video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a directory of RGB images into RGBP frames.
    Preprocess(PreprocessArgs),
    /// Cut labelled RGBP videos into a sequence manifest.
    Import(ImportArgs),
    /// Render a synthetic shop scene with ground truth.
    Synth(SynthArgs),
    Train(TrainArgs),
    Evaluate(EvaluateArgs),
    /// Stream images through the background model and the network.
    Predict(PredictArgs),
    /// Run the labelling HTTP server.
    ServeAnnotation(ServeArgs),
}

#[derive(Args, Clone)]
struct BackgroundArgs {
    #[arg(long, default_value_t = DEFAULT_ETA)]
    eta: usize,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_C)]
    lambda_c: u8,
    #[arg(long, default_value_t = DEFAULT_BG_INTERVAL_MS)]
    bg_interval_ms: u64,
    /// Input frame rate; frame k is stamped k/fps seconds.
    #[arg(long, default_value_t = 20.0)]
    fps: f64,
}

impl BackgroundArgs {
    fn config(&self, width: usize, height: usize) -> PreprocessConfig {
        PreprocessConfig {
            width,
            height,
            lambda_c: self.lambda_c,
            eta: self.eta,
            tau: self.tau,
            beta: self.beta,
            bg_interval_ms: self.bg_interval_ms,
        }
    }

    fn timestamp_ms(&self, k: usize) -> u64 {
        (k as f64 * 1000.0 / self.fps).round() as u64
    }
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory of PNG/JPEG frames (or holding them in `frames/`), processed
    /// in file-name order. A `labels.csv` beside them is copied along.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    bg: BackgroundArgs,
    #[arg(long, default_value_t = FRAME_WIDTH)]
    width: usize,
    #[arg(long, default_value_t = FRAME_HEIGHT)]
    height: usize,
}

#[derive(Args)]
struct ImportArgs {
    /// Directory of `<video>/labels.csv` + `<video>/frames/*.rgbp`.
    #[arg(long)]
    input: PathBuf,
    /// Manifest path [default: <input>/manifest.json].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: usize,
    #[arg(long, default_value_t = 9)]
    seq_len: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2400)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    actors: usize,
    #[arg(long, default_value_t = FRAME_WIDTH)]
    width: usize,
    #[arg(long, default_value_t = FRAME_HEIGHT)]
    height: usize,
    #[arg(long, default_value_t = 20.0)]
    fps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Lrcn,
    Baseline,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root the manifest paths are relative to.
    #[arg(long)]
    data: PathBuf,
    /// [default: <data>/manifest.json]
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "all_people")]
    label_mode: LabelMode,
}

impl DataArgs {
    fn open(&self) -> Result<ManifestDataset> {
        let path = self.manifest.clone().unwrap_or_else(|| self.data.join(MANIFEST_FILE));
        Ok(ManifestDataset::open(&self.data, SequenceManifest::read(&path)?))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Where the trained weights go.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Trained network whose conv weights seed transfer and fine_tune.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Directory for the epoch log and the report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Arch::Lrcn)]
    model: Arch,
    #[arg(long, default_value = "scratch")]
    strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Must match the manifest when given.
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long, default_value_t = 3)]
    conv_layers: usize,
    #[arg(long, default_value_t = 8)]
    filters: usize,
    #[arg(long, default_value_t = 5)]
    kernel: usize,
    /// LSTM (or dense, for the baseline) widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "250")]
    units: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory for `report.json` and `abs_error_hist.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image directory, or `-` to read one image path per line from stdin.
    #[arg(long)]
    input: PathBuf,
    /// Event log [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    bg: BackgroundArgs,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: usize,
    /// Must match the checkpoint when given.
    #[arg(long)]
    seq_len: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    /// Directory of `<video>/frames/` folders.
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset(format!("no PNG or JPEG frames in {}", dir.display())));
    }
    Ok(files)
}

fn load_frame(path: &Path, index: u64, timestamp_ms: u64) -> Result<RawFrame> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_rgb8();
    RawFrame::from_image(&img, index, timestamp_ms)
}

fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let nested = a.input.join(FRAMES_DIR);
    let files = image_files(if nested.is_dir() { &nested } else { &a.input })?;
    let cfg = a.bg.config(a.width, a.height);
    let load = |k: usize| load_frame(&files[k], k as u64, a.bg.timestamp_ms(k));
    let mut pre = Preprocessor::new(cfg.clone())?;
    let mut warmed = None;
    for k in 0..files.len() {
        if pre.warm(&load(k)?)? {
            warmed = Some(k);
            break;
        }
    }
    let Some(last_warm) = warmed else {
        return Err(Error::NotReady {
            ingested: pre.background().frames_ingested() as usize,
            required: cfg.eta,
        });
    };
    let out = a.out.join(FRAMES_DIR);
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    // Frames seen while warming are converted against the first complete background.
    for k in 0..files.len() {
        let raw = load(k)?;
        let rgbp = if k <= last_warm {
            let rgb = resample_to(&raw, cfg.width, cfg.height)?;
            let q = quantize(&rgb, cfg.lambda_c)?;
            pre.extract(&rgb, &q)?
        } else {
            pre.process(&raw)?.rgbp.expect("background initialised")
        };
        write_rgbp(&rgbp, &out.join(frame_file_name(k as u64)))?;
    }
    let labels = a.input.join(LABELS_FILE);
    if labels.is_file() {
        let dst = a.out.join(LABELS_FILE);
        fs::copy(&labels, &dst).map_err(io_err(&dst))?;
    }
    eprintln!("{} RGBP frames in {}", files.len(), out.display());
    Ok(())
}

fn import(a: &ImportArgs) -> Result<()> {
    let manifest = import_dataset(&a.input, a.stride, a.seq_len)?;
    let out = a.out.clone().unwrap_or_else(|| a.input.join(MANIFEST_FILE));
    manifest.write(&out)?;
    println!("{} sequences -> {}", manifest.sequences.len(), out.display());
    for (count, n) in manifest.label_distribution() {
        println!("  count {count}: {n}");
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SceneConfig {
        width: a.width,
        height: a.height,
        frames: a.frames,
        fps: a.fps,
        actors: a.actors,
        seed: a.seed,
        ..SceneConfig::default()
    };
    let scene = Scene::new(cfg.clone())?;
    let frames = a.out.join(FRAMES_DIR);
    let masks = a.out.join("masks");
    for d in [&frames, &masks] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let mut rows = Vec::with_capacity(a.frames);
    for (t, (frame, truth)) in scene.frames().enumerate() {
        let name = format!("{t:06}.png");
        let save = |img: image::DynamicImage, p: PathBuf| {
            img.save(&p).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
        };
        save(frame.to_image().into(), frames.join(&name))?;
        let mask = image::GrayImage::from_fn(a.width as u32, a.height as u32, |x, y| {
            image::Luma([truth.mask.bits[y as usize * a.width + x as usize] * 255])
        });
        save(mask.into(), masks.join(&name))?;
        rows.push(LabelRow {
            frame_id: t as u64,
            timestamp_ms: cfg.timestamp_ms(t),
            people_count: truth.count,
            customer_count: Some(truth.customers),
        });
    }
    LabelTable::new(rows)?.write(&a.out.join(LABELS_FILE))?;
    println!("{} frames -> {}", a.frames, a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let data = a.data.open()?;
    let seq_len = data.manifest.seq_len;
    if let Some(t) = a.seq_len.filter(|&t| t != seq_len) {
        return Err(Error::Config(format!(
            "--seq-len {t} but the manifest holds {seq_len}-frame sequences"
        )));
    }
    if data.is_empty() {
        return Err(Error::Empty("manifest sequences"));
    }
    let first = data.sequence(0)?;
    let (width, height) = (first.last().width(), first.last().height());
    let config = TrainConfig {
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        strategy: a.strategy,
        label_mode: a.data.label_mode,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let report = match a.model {
        Arch::Lrcn => {
            let model_config = LrcnConfig {
                conv_layers: a.conv_layers,
                filters: a.filters,
                kernel: a.kernel,
                lstm_units: a.units.clone(),
                seq_len,
                input_width: width,
                input_height: height,
                ..LrcnConfig::default()
            };
            let base = a.base.as_deref().map(AnyModel::load).transpose()?;
            let (model, report) = run_strategy(&model_config, &data, base.as_ref().map(|m| m.conv()), &config)?;
            save_lrcn(&model, &a.checkpoint)?;
            report
        }
        Arch::Baseline => {
            if a.strategy != Strategy::Scratch {
                return Err(Error::Config("the baseline trains from scratch only".into()));
            }
            let bc = BaselineConfig {
                conv_layers: a.conv_layers,
                filters: a.filters,
                kernel: a.kernel,
                dense_units: a.units.clone(),
                input_width: width,
                input_height: height,
                ..BaselineConfig::default()
            };
            let mut model = BaselineModel::<f32>::build(bc, a.seed)?;
            let report = train(&mut model, &data, &config)?;
            save_baseline(&model, &a.checkpoint)?;
            report
        }
    };
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(io_err(out))?;
        report.write(&out.join("epochs.csv"))?;
        report.write_json(&out.join("report.json"))?;
    }
    println!(
        "stopped at epoch {} (best {}), {} trainable parameters",
        report.stopped_epoch, report.best_epoch, report.trainable_params
    );
    if let Some(t) = &report.test {
        println!("test E: {:.2}%  MAE: {:.4}", t.e_percent, t.mae);
    }
    println!("checkpoint: {}", a.checkpoint.display());
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let data = a.data.open()?;
    let report = match AnyModel::load(&a.checkpoint)? {
        AnyModel::Lrcn(m) => evaluate(&m, &data, a.data.label_mode)?,
        AnyModel::Baseline(m) => evaluate(&m, &data, a.data.label_mode)?,
    };
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let hist = a.out.join("abs_error_hist.csv");
    report.write_hist_csv(&hist)?;
    report.write_json(&a.out.join("report.json"))?;
    println!("E: {:.4}%", report.e_percent);
    println!("MAE: {:.4}", report.mae);
    println!("histogram: {}", hist.display());
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_lrcn(&a.checkpoint)?;
    if let Some(t) = a.seq_len.filter(|&t| t != model.config.seq_len) {
        return Err(Error::Config(format!(
            "--seq-len {t} but {} was trained on {}-frame sequences",
            a.checkpoint.display(),
            model.config.seq_len
        )));
    }
    let config = PipelineConfig {
        preprocess: a.bg.config(model.config.input_width, model.config.input_height),
        stride: a.stride,
        seq_len: model.config.seq_len,
    };
    let mut state = PipelineState::new(config, Arc::new(model))?;
    let mut sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(io_err(p))?)),
        None => Box::new(io::stdout().lock()),
    };
    let paths: Box<dyn Iterator<Item = io::Result<PathBuf>>> = if a.input.as_os_str() == "-" {
        Box::new(io::stdin().lock().lines().map(|l| l.map(|s| PathBuf::from(s.trim()))))
    } else {
        Box::new(image_files(&a.input)?.into_iter().map(Ok))
    };
    let mut events = 0usize;
    for (k, path) in paths.enumerate() {
        let path = path.map_err(io_err(Path::new("<stdin>")))?;
        if path.as_os_str().is_empty() {
            continue;
        }
        let raw = load_frame(&path, k as u64, a.bg.timestamp_ms(k))?;
        if let Some(p) = state.ingest_frame(&raw)? {
            writeln!(sink, "{}", p.log_line()).map_err(io_err(Path::new("<output>")))?;
            events += 1;
        }
    }
    sink.flush().map_err(io_err(Path::new("<output>")))?;
    if events == 0 {
        eprintln!("no predictions: the background model never finished warming up");
    }
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(io_err(&a.root))?;
    eprintln!("serving {} on http://{}", a.root.display(), a.addr);
    rt.block_on(peoplecount_annotate::serve(a.root.clone(), a.addr))
        .map_err(io_err(&a.root))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Import(a) => import(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict(a),
        Command::ServeAnnotation(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
