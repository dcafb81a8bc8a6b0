//! Command-line entry point. Exit codes: 0 success, 1 usage error, 2
//! data/processing error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use octinspect::annotation::{
    load_labels_dir, load_predictions_dir, save_labels_dir, save_manifest, save_predictions_dir,
    DatasetManifest, VolumeEntry,
};
use octinspect::detector::{detect_volume, DetectorConfig};
use octinspect::experiment::{
    emit_report, evaluate_fold, make_loo_splits, save_run_metadata, EvalOptions, EvalReport, Fold,
    PredictionSource, ReportFormat, RunMetadata,
};
use octinspect::render::render_to_file;
use octinspect::synth::{generate, DefectSpec, SynthConfig};
use octinspect::volume::{import_slice_dir, load_ovf, save_ovf};
use octinspect::{Error, Result};

#[derive(Parser)]
#[command(
    name = "octinspect",
    version,
    about = "Defect inspection toolkit for OCT volumes"
)]
struct Cli {
    /// Worker threads for parallel stages; 1 keeps runs fully sequential.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stack a directory of PGM slices into an OVF volume.
    Convert {
        /// Directory of .pgm slice images (stacked in name order).
        slice_dir: PathBuf,
        /// Output .ovf path.
        out_ovf: PathBuf,
        /// Volume id stored in metadata; defaults to the output file stem.
        #[arg(long)]
        id: Option<String>,
    },
    /// Generate synthetic volumes with ground-truth labels.
    Synth(SynthArgs),
    /// Run the baseline detector over one volume.
    Detect(DetectArgs),
    /// Score one volume of a dataset.
    Eval(EvalArgs),
    /// Leave-one-out evaluation over a whole dataset.
    Loo(LooArgs),
    /// Render a slice with box overlays as a PPM image.
    Render(RenderArgs),
}

#[derive(Args)]
struct DetectorArgs {
    /// Residual threshold in per-slice sigmas.
    #[arg(long, default_value_t = DetectorConfig::default().z_thresh)]
    z_thresh: f64,
    /// Denoising median kernel (odd).
    #[arg(long, default_value_t = DetectorConfig::default().median_k)]
    median_k: u32,
    /// Background median kernel (odd).
    #[arg(long, default_value_t = DetectorConfig::default().bg_k)]
    bg_k: u32,
    /// Minimum component area in pixels.
    #[arg(long, default_value_t = DetectorConfig::default().min_area)]
    min_area: usize,
    /// Pixel connectivity: 4 or 8.
    #[arg(long, default_value_t = DetectorConfig::default().connectivity)]
    connectivity: u8,
    /// Surface-contact band in rows.
    #[arg(long, default_value_t = DetectorConfig::default().surface_band)]
    surface_band: u32,
    /// Axis ratio above which a component is a crack.
    #[arg(long, default_value_t = DetectorConfig::default().crack_elongation)]
    crack_elongation: f64,
    /// Surface-finder intensity threshold.
    #[arg(long, default_value_t = DetectorConfig::default().surface_theta)]
    surface_theta: f32,
}

impl DetectorArgs {
    fn config(&self) -> DetectorConfig {
        DetectorConfig {
            median_k: self.median_k,
            bg_k: self.bg_k,
            z_thresh: self.z_thresh,
            min_area: self.min_area,
            connectivity: self.connectivity,
            surface_band: self.surface_band,
            crack_elongation: self.crack_elongation,
            surface_theta: self.surface_theta,
        }
    }
}

#[derive(Args)]
struct EvalFlags {
    /// IoU gate for matching predictions to ground truth.
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    /// Require IoU strictly above the threshold.
    #[arg(long)]
    iou_strict: bool,
    /// 11-point interpolated AP instead of all-points AP.
    #[arg(long)]
    eleven_point_ap: bool,
    /// Measure per-slice inference time (forces sequential detection).
    #[arg(long)]
    timing: bool,
    /// Reject label boxes that are not square in pixels.
    #[arg(long)]
    force_square: bool,
}

impl EvalFlags {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            iou_threshold: self.iou_threshold,
            strict: self.iou_strict,
            eleven_point: self.eleven_point_ap,
            timing: self.timing,
            force_square: self.force_square,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
    Json,
}

impl FormatArg {
    fn format(self) -> ReportFormat {
        match self {
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }

    fn extension(self) -> &'static str {
        match self {
            FormatArg::Table => "txt",
            FormatArg::Csv => "csv",
            FormatArg::Json => "json",
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for volumes, labels and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// How many volumes to generate (ids v0, v1, ...).
    #[arg(long, default_value_t = 3)]
    volumes: usize,
    #[arg(long, default_value_t = 256)]
    width: u32,
    #[arg(long, default_value_t = 256)]
    height: u32,
    #[arg(long, default_value_t = 12)]
    depth: u32,
    /// Base seed; volume i uses seed + i.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Voids per volume.
    #[arg(long, default_value_t = 8)]
    voids: usize,
    /// Cracks per volume.
    #[arg(long, default_value_t = 0)]
    cracks: usize,
    /// Agglomerates per volume.
    #[arg(long, default_value_t = 0)]
    agglomerates: usize,
    /// Surface bumps per volume.
    #[arg(long, default_value_t = 0)]
    bumps: usize,
    /// Defect contrast magnitude (sign fixed per class).
    #[arg(long, default_value_t = 0.5)]
    contrast: f64,
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
    /// Multiplicative (speckle-like) noise instead of additive.
    #[arg(long)]
    speckle: bool,
    /// Dataset name recorded in the manifest.
    #[arg(long, default_value = "synthetic")]
    name: String,
}

#[derive(Args)]
struct DetectArgs {
    /// Input .ovf volume.
    #[arg(long)]
    volume: PathBuf,
    /// Output directory for prediction files and run.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Measure per-slice inference time (forces sequential detection).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    manifest: PathBuf,
    /// Volume id to evaluate.
    #[arg(long)]
    volume: String,
    /// Imported predictions root (<dir>/<volume_id>/slice_*.txt); the
    /// baseline detector runs when omitted.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    eval: EvalFlags,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    format: FormatArg,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LooArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for per-fold reports and the combined report.
    #[arg(long)]
    out: PathBuf,
    /// Imported predictions root; the baseline detector runs when omitted.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    eval: EvalFlags,
    /// Format of the combined report file (stdout always shows the table).
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    format: FormatArg,
}

#[derive(Args)]
struct RenderArgs {
    /// Input .ovf volume.
    #[arg(long)]
    volume: PathBuf,
    /// Slice index to render.
    #[arg(long)]
    z: u32,
    /// Output .ppm path.
    #[arg(long)]
    out: PathBuf,
    /// Labels directory to overlay in green.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Predictions directory to overlay in red.
    #[arg(long)]
    pred: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            2
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| Error::BadConfig(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Convert { slice_dir, out_ovf, id } => cmd_convert(&slice_dir, &out_ovf, id),
        Command::Synth(args) => cmd_synth(&args),
        Command::Detect(args) => cmd_detect(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Loo(args) => cmd_loo(&args),
        Command::Render(args) => cmd_render(&args),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".to_string())
}

fn cmd_convert(slice_dir: &Path, out_ovf: &Path, id: Option<String>) -> Result<i32> {
    let id = id.unwrap_or_else(|| file_stem(out_ovf));
    let volume = import_slice_dir(slice_dir, id)?;
    save_ovf(&volume, out_ovf)?;
    println!(
        "wrote {} ({}x{}x{}, {}-bit)",
        out_ovf.display(),
        volume.width(),
        volume.height(),
        volume.depth(),
        volume.bit_depth()
    );
    Ok(0)
}

fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut defects = Vec::new();
    if args.voids > 0 {
        defects.push(DefectSpec::default_voids(args.voids, args.contrast));
    }
    if args.cracks > 0 {
        defects.push(DefectSpec::default_cracks(args.cracks, args.contrast));
    }
    if args.agglomerates > 0 {
        defects.push(DefectSpec::default_agglomerates(args.agglomerates, args.contrast));
    }
    if args.bumps > 0 {
        defects.push(DefectSpec::default_bumps(args.bumps));
    }

    let mut entries = Vec::new();
    for i in 0..args.volumes {
        let id = format!("v{i}");
        let mut cfg = SynthConfig::new(&id, args.seed + i as u64, args.width, args.height, args.depth);
        cfg.noise_sigma = args.noise_sigma;
        cfg.speckle = args.speckle;
        cfg.defects = defects.clone();
        let output = generate(&cfg)?;

        let ovf_name = format!("{id}.ovf");
        let labels_name = format!("{id}_labels");
        save_ovf(&output.volume, args.out.join(&ovf_name))?;
        save_labels_dir(&output.annotations, args.out.join(&labels_name))?;
        let truth_path = args.out.join(format!("{id}_truth.json"));
        let mut truth = serde_json::to_string_pretty(&output.defects)
            .map_err(|e| Error::json(&truth_path, e))?;
        truth.push('\n');
        std::fs::write(&truth_path, truth).map_err(|e| Error::io(&truth_path, e))?;
        println!(
            "wrote {id}: {} defects, {} ground-truth boxes",
            output.defects.len(),
            output.annotations.len()
        );
        // Manifest paths stay relative so the dataset directory can move.
        entries.push(VolumeEntry {
            volume_id: id,
            volume_path: PathBuf::from(ovf_name),
            labels_dir: PathBuf::from(labels_name),
        });
    }
    let manifest = DatasetManifest {
        name: args.name.clone(),
        class_names: DatasetManifest::default_class_names(),
        volumes: entries,
    };
    save_manifest(&manifest, args.out.join("manifest.json"))?;
    Ok(0)
}

fn run_metadata(cfg: &DetectorConfig, inference_ms: Option<f64>) -> RunMetadata {
    let hyper = serde_json::json!({
        "z_thresh": cfg.z_thresh,
        "median_k": cfg.median_k,
        "bg_k": cfg.bg_k,
        "min_area": cfg.min_area,
        "connectivity": cfg.connectivity,
        "surface_band": cfg.surface_band,
        "crack_elongation": cfg.crack_elongation,
        "surface_theta": cfg.surface_theta,
    });
    RunMetadata {
        detector: "baseline-median".to_string(),
        hyperparameters: hyper.as_object().cloned().unwrap_or_default(),
        train_time_hours: None,
        inference_ms_per_slice: inference_ms,
    }
}

fn cmd_detect(args: &DetectArgs) -> Result<i32> {
    let cfg = args.detector.config();
    let volume = load_ovf(&args.volume)?;
    let detection = detect_volume(&volume, &cfg, args.timing)?;
    save_predictions_dir(&detection.predictions, &args.out)?;
    save_run_metadata(
        &run_metadata(&cfg, detection.inference_ms_per_slice),
        args.out.join("run.json"),
    )?;
    println!(
        "{} predictions across {} slices -> {}",
        detection.predictions.len(),
        volume.depth(),
        args.out.display()
    );
    Ok(0)
}

fn prediction_source(pred: &Option<PathBuf>, detector: &DetectorArgs) -> PredictionSource {
    match pred {
        Some(dir) => PredictionSource::ImportedDir(dir.clone()),
        None => PredictionSource::Baseline(detector.config()),
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let manifest = octinspect::annotation::load_manifest(&args.manifest)?;
    // Single-volume evaluation still carries the remaining volumes as the
    // train set so the report row reads like a fold.
    let entry = manifest.volume(&args.volume)?;
    let fold = Fold {
        train_volume_ids: manifest
            .volumes
            .iter()
            .filter(|v| v.volume_id != entry.volume_id)
            .map(|v| v.volume_id.clone())
            .collect(),
        eval_volume_id: args.volume.clone(),
    };
    let source = prediction_source(&args.pred, &args.detector);
    let report = evaluate_fold(&manifest, &fold, &source, &args.eval.options())?;
    let doc = emit_report(std::slice::from_ref(&report), args.format.format());
    print!("{doc}");
    if let Some(out) = &args.out {
        std::fs::write(out, &doc).map_err(|e| Error::io(out, e))?;
    }
    Ok(0)
}

fn cmd_loo(args: &LooArgs) -> Result<i32> {
    let manifest = octinspect::annotation::load_manifest(&args.manifest)?;
    let ids: Vec<String> = manifest
        .volumes
        .iter()
        .map(|v| v.volume_id.clone())
        .collect();
    let folds = make_loo_splits(&ids)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let source = prediction_source(&args.pred, &args.detector);
    let options = args.eval.options();

    let mut reports: Vec<EvalReport> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for fold in &folds {
        match evaluate_fold(&manifest, fold, &source, &options) {
            Ok(report) => {
                let path = args.out.join(format!("fold_{}.json", fold.eval_volume_id));
                let mut json = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::json(&path, e))?;
                json.push('\n');
                std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
                reports.push(report);
            }
            Err(e) => {
                let line = format!("FAILED {}: {e}", fold.label());
                eprintln!("{line}");
                failures.push(line);
            }
        }
    }

    if !reports.is_empty() {
        let combined = emit_report(&reports, args.format.format());
        let path = args.out.join(format!("report.{}", args.format.extension()));
        std::fs::write(&path, combined).map_err(|e| Error::io(&path, e))?;
        print!("{}", emit_report(&reports, ReportFormat::Table));
    }
    if !failures.is_empty() {
        let path = args.out.join("FAILED");
        let mut text = failures.join("\n");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        return Ok(2);
    }
    Ok(0)
}

fn cmd_render(args: &RenderArgs) -> Result<i32> {
    let volume = load_ovf(&args.volume)?;
    let gts = match &args.labels {
        Some(dir) => load_labels_dir(dir)?,
        None => Vec::new(),
    };
    let preds = match &args.pred {
        Some(dir) => load_predictions_dir(dir)?,
        None => Vec::new(),
    };
    render_to_file(&volume, args.z, &gts, &preds, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(0)
}
