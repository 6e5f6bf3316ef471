use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mdn::eval::particles::{connected_components, size_report, Connectivity, SizeReport, DEFAULT_SIZE_BINS_UM};
use mdn::eval::report::{metrics_table, per_image_table, size_table, write_bar_chart, write_json};
use mdn::eval::evaluate_with;
use mdn::io::{read_image, read_mask, write_mask, write_rgb8};
use mdn::manifest::MANIFEST_FILE;
use mdn::segnet::{predict_mask_with, Checkpoint, EpochRecord, Pipeline, SegModelConfig, SegNet, TrainConfig, TrainOptions};
use mdn::synthgen::{generate_dataset, split_dataset, GenConfig};
use mdn::types::{validate_pair, DEFAULT_SCALE_UM_PER_PX};
use mdn::{DatasetManifest, Error, Provenance, Result, Split};

/// Overlay tint and opacity.
const OVERLAY_RGB: [f64; 3] = [0.0, 255.0, 255.0];
const OVERLAY_ALPHA: f64 = 0.5;

#[derive(Parser)]
#[command(name = "mdn", version, about = "Synthetic fluorescence microplastic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and split it into train and test.
    Generate(GenerateArgs),
    /// Train a model on the train split of a manifest.
    Train(TrainArgs),
    /// Predict masks for one image or a directory of images.
    Predict(PredictArgs),
    /// Score a checkpoint on a manifest split.
    Evaluate(EvaluateArgs),
    /// Count and size particles in masks.
    Report(ReportArgs),
    /// Tint mask pixels over an image.
    Overlay(OverlayArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Tile size for native-resolution inference [default: model input size]
    #[arg(long)]
    patch_size: Option<usize>,
    /// Resize every image to 256×256 instead of tiling.
    #[arg(long, conflicts_with = "patch_size")]
    resize_256: bool,
}

impl PipelineArgs {
    fn pipeline(&self, model: &SegNet<f32>) -> Pipeline {
        if self.resize_256 {
            Pipeline::Resize { size: 256 }
        } else {
            Pipeline::Tile {
                patch_size: self.patch_size.unwrap_or(model.config().input_size),
            }
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// GenConfig TOML file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: easy or hard.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_images: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
}

/// Combined training config file: `[train]` and `[model]` tables.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: SegModelConfig,
    train: TrainConfig,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// TOML with optional [train] and [model] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the checkpoint, history and echoed config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// An image file or a directory of PNG images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `{stem}_mask.png` predictions; ground-truth masks from
    /// the manifest are used when omitted.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to one split.
    #[arg(long)]
    split: Option<Split>,
    /// Comma-separated size-bin edges in micrometres.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZE_BINS_UM.to_vec())]
    bins: Vec<f64>,
    /// 4 or 8.
    #[arg(long, default_value_t = 8)]
    connectivity: u8,
}

#[derive(Args)]
struct OverlayArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn generate(args: GenerateArgs) -> Result<bool> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => GenConfig::from_toml(&read_text(path)?)?,
        (None, Some(name)) => GenConfig::preset(name)?,
        (None, None) => GenConfig::easy(),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(n) = args.n_images {
        cfg.n_images = n;
    }
    if let Some(f) = args.train_fraction {
        cfg.train_fraction = f;
    }
    cfg.validate()?;
    create_dir(&args.out)?;
    let manifest = generate_dataset(&cfg, &args.out)?;
    let manifest = split_dataset(&manifest, cfg.train_fraction, cfg.master_seed)?;
    let path = args.out.join(MANIFEST_FILE);
    manifest.save(&path)?;
    write_text(&args.out.join("gen_config.toml"), &cfg.to_toml())?;
    for split in [Split::Train, Split::Test] {
        for prov in [Provenance::Spiked, Provenance::Real] {
            let n = manifest.split(split).filter(|e| e.provenance == prov).count();
            if n > 0 {
                println!("{split}\t{prov}\t{n}");
            }
        }
    }
    println!("manifest\t{}", path.display());
    Ok(true)
}

fn train(args: TrainArgs) -> Result<bool> {
    let mut run = match &args.config {
        Some(path) => toml::from_str::<RunConfig>(&read_text(path)?).map_err(|e| Error::InvalidConfig(e.to_string()))?,
        None => RunConfig::default(),
    };
    let t = &mut run.train;
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = args.threshold {
        t.threshold = v;
    }
    run.train.validate()?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let model = SegNet::<f32>::new(run.model.clone(), run.train.seed)?;
    create_dir(&args.out)?;
    write_text(
        &args.out.join("train_config.toml"),
        &toml::to_string(&run).expect("config serializes"),
    )?;
    println!("parameters\t{}", model.parameter_count());
    let pipeline = args.pipeline.pipeline(&model);
    let mut print = |r: &EpochRecord| {
        let iou = r.val_iou.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!("epoch {:>3}  loss {:.6}  val_iou {iou}", r.epoch, r.train_loss);
    };
    let opts = TrainOptions {
        pipeline: Some(pipeline),
        on_epoch: Some(&mut print),
    };
    let (model, history) = mdn::segnet::train_with(model, &manifest, &run.train, opts)?;
    let ckpt_path = args.out.join("model.ckpt");
    Checkpoint::new(model, run.train, history.clone()).save(&ckpt_path)?;
    write_text(&args.out.join("history.csv"), &mdn::segnet::train::history_csv(&history))?;
    println!("checkpoint\t{}", ckpt_path.display());
    Ok(true)
}

fn png_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let rd = fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn predict(args: PredictArgs) -> Result<bool> {
    let model = Checkpoint::load(&args.checkpoint)?.model;
    let pipeline = args.pipeline.pipeline(&model);
    pipeline.check(&model)?;
    let files = png_files(&args.input)?;
    create_dir(&args.out)?;
    let mut ok = true;
    for file in files {
        let stem = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let result = read_image(&file, DEFAULT_SCALE_UM_PER_PX)
            .and_then(|img| predict_mask_with(&model, &img, args.threshold, pipeline))
            .and_then(|mask| {
                let out = args.out.join(format!("{stem}_mask.png"));
                write_mask(&out, &mask)?;
                Ok((out, mask.count_ones()))
            });
        match result {
            Ok((out, ones)) => println!("{}\t{}\t{ones}", file.display(), out.display()),
            Err(e) => {
                eprintln!("error: {}: {e}", file.display());
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn evaluate(args: EvaluateArgs) -> Result<bool> {
    let model = Checkpoint::load(&args.checkpoint)?.model;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let pipeline = args.pipeline.pipeline(&model);
    let eval = evaluate_with(&model, &manifest, args.split, args.threshold, pipeline)?;
    create_dir(&args.out)?;
    write_json(args.out.join("report.json"), &eval)?;
    let table = metrics_table(&eval);
    write_text(
        &args.out.join("report.txt"),
        &format!("{table}\n{}", per_image_table(&eval)),
    )?;
    write_bar_chart(args.out.join("metrics.png"), &eval)?;
    print!("{table}");
    Ok(true)
}

#[derive(Serialize)]
struct ImageParticles {
    image_path: String,
    mask_path: String,
    expected_particles: usize,
    overlaps: bool,
    detections: Vec<mdn::Detection>,
    sizes: SizeReport,
}

#[derive(Serialize)]
struct ParticleReport {
    scale_um_per_px: f64,
    connectivity: u8,
    images: Vec<ImageParticles>,
    total: SizeReport,
}

fn report(args: ReportArgs) -> Result<bool> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let conn = Connectivity::try_from(args.connectivity)?;
    let scale = manifest.scale_um_per_px;
    let mut total = size_report(&[], scale, &args.bins)?;
    let mut images = Vec::new();
    let mut ok = true;
    for entry in manifest.entries.iter().filter(|e| args.split.is_none_or(|s| e.split == s)) {
        let mask_path = match &args.masks {
            Some(dir) => {
                let stem = Path::new(&entry.image_path).file_stem().unwrap_or_default().to_string_lossy().into_owned();
                dir.join(format!("{stem}_mask.png"))
            }
            None => manifest.mask_path(entry),
        };
        let mask = match read_mask(&mask_path) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {e}");
                ok = false;
                continue;
            }
        };
        let detections = connected_components(&mask, conn, scale);
        let sizes = size_report(&detections, scale, &args.bins)?;
        total.merge(&sizes);
        images.push(ImageParticles {
            image_path: entry.image_path.clone(),
            mask_path: mask_path.display().to_string(),
            expected_particles: entry.particles.len(),
            overlaps: entry.overlaps,
            detections,
            sizes,
        });
    }
    create_dir(&args.out)?;
    let mut text = String::from("image\texpected\tdetected\tmean_feret_um\n");
    for img in &images {
        let n = img.detections.len();
        let mean = if n == 0 {
            0.0
        } else {
            img.detections.iter().map(|d| d.feret_um).sum::<f64>() / n as f64
        };
        text.push_str(&format!("{}\t{}\t{n}\t{mean:.1}\n", img.image_path, img.expected_particles));
    }
    text.push('\n');
    text.push_str(&size_table(&total));
    write_text(&args.out.join("particles.txt"), &text)?;
    let report = ParticleReport {
        scale_um_per_px: scale,
        connectivity: args.connectivity,
        images,
        total,
    };
    write_json(args.out.join("particles.json"), &report)?;
    print!("{}", size_table(&report.total));
    Ok(ok)
}

fn overlay(args: OverlayArgs) -> Result<bool> {
    let image = read_image(&args.image, DEFAULT_SCALE_UM_PER_PX)?;
    let mask = read_mask(&args.mask)?;
    validate_pair(&image, &mask)?;
    let mut px = image.to_rgb8();
    for (p, &m) in px.chunks_exact_mut(3).zip(mask.values()) {
        if m == 1 {
            for (c, tint) in p.iter_mut().zip(OVERLAY_RGB) {
                *c = ((1.0 - OVERLAY_ALPHA) * *c as f64 + OVERLAY_ALPHA * tint).round() as u8;
            }
        }
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_rgb8(&args.out, image.width(), image.height(), &px)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    mdn::runtime::tune_allocator();
    mdn::runtime::configure_workers();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
        Command::Overlay(a) => overlay(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
