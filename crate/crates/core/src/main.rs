use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scenedet::config::RunConfig;
use scenedet::detect::{build_scale_set, nms, sliding_window_detect, window_count, DetectionResponse};
use scenedet::error::{Error, Result};
use scenedet::eval::{compute_metrics, ScoredBox};
use scenedet::files;
use scenedet::gdm::{init_model, HardEntry, Learner, LearnerState};
use scenedet::imaging::{extract_patch, BoundingBox, FERN_PATCH_SIDE, HOG_PATCH_SIDE};
use scenedet::model::{ModelFile, PendingHard, MODEL_FORMAT_VERSION};
use scenedet::synthscene::{generate_sequence, SceneConfig};

#[derive(Parser)]
#[command(name = "scenedet", version, about = "Self-learning scene-specific object detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set nu=0.7. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the initial model from seed boxes on frame 0.
    Init {
        #[arg(long)]
        frames: PathBuf,
        /// Seed CSV: frame_index,x,y,w,h (frame_index must be 0).
        #[arg(long)]
        seeds: PathBuf,
        /// Output model file.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the online self-learning loop over a frame stream.
    Learn {
        #[arg(long)]
        frames: PathBuf,
        /// Input model (from init, or a checkpoint to resume).
        #[arg(long)]
        model: PathBuf,
        /// Output model; defaults to overwriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Progress CSV (one row per retrain iteration). Appended on resume.
        #[arg(long)]
        progress: Option<PathBuf>,
        /// Stop after this frame index (exclusive).
        #[arg(long)]
        end_frame: Option<usize>,
        /// Process at most this many frames in this invocation.
        #[arg(long)]
        max_frames: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Detect objects with a trained model.
    Detect {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Output detections CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also write every scored window (pre-NMS) to this CSV.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// First frame index to scan (inclusive).
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Last frame index to scan (exclusive); defaults to the stream end.
        #[arg(long)]
        end: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score detections against ground truth.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Metrics CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// ROC sweep CSV output.
        #[arg(long)]
        roc: Option<PathBuf>,
        /// Raw responses CSV for the ROC sweep; detections are used if omitted.
        #[arg(long)]
        responses: Option<PathBuf>,
        /// Frame count for FP-per-frame normalization; defaults to the
        /// number of distinct ground-truth frames.
        #[arg(long)]
        n_frames: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a synthetic test sequence with ground truth.
    Synth {
        /// Output directory for the PNG frames.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth CSV output.
        #[arg(long)]
        gt: PathBuf,
        /// Also write frame-0 ground truth as a seeds CSV.
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        frames: usize,
        #[arg(long, default_value_t = 320)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
        #[arg(long, default_value_t = 2)]
        objects: usize,
        #[arg(long, default_value_t = 36)]
        object_size: u32,
        #[arg(long, default_value_t = 2.0)]
        speed: f64,
        #[arg(long, default_value_t = 8.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        clutter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Load the config file (or defaults) and apply `--set key=value` overrides
/// through the TOML layer so types and unknown keys are checked uniformly.
fn resolve_config(args: &ConfigArgs, base: Option<RunConfig>) -> Result<RunConfig> {
    let cfg = match (&args.config, base) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(base)) => base,
        (None, None) => RunConfig::default(),
    };
    if args.set.is_empty() {
        return Ok(cfg);
    }
    let mut table = toml::Table::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    for kv in &args.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        let doc: toml::Table = toml::from_str(&format!("{key} = {value}"))
            .map_err(|e| Error::Config(format!("--set {kv:?}: {e}")))?;
        for (k, v) in doc {
            table.insert(k, v);
        }
    }
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn read_seed_boxes(path: &Path) -> Result<Vec<BoundingBox>> {
    let rows = files::read_seeds_csv(path)?;
    if rows.is_empty() {
        return Err(Error::NoSeeds);
    }
    for &(frame, _) in &rows {
        if frame != 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("seed boxes must reference frame 0, found frame {frame}"),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, b)| b).collect())
}

fn cmd_init(frames: &Path, seeds: &Path, model_out: &Path, cfg_args: &ConfigArgs) -> Result<()> {
    let cfg = resolve_config(cfg_args, None)?;
    let paths = files::list_frames(frames)?;
    let frame0 = files::load_frame_by_index(&paths, 0)?;
    let seed_boxes = read_seed_boxes(seeds)?;
    let model = init_model::<f64>(&cfg, &frame0, &seed_boxes)?;
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION,
        config: cfg,
        seeds: seed_boxes,
        model,
        state: LearnerState::fresh(),
        pending_hard: Vec::new(),
    };
    file.save(model_out)?;
    println!(
        "initialized model: theta = {}, {} seed boxes",
        file.model.boundary.theta,
        file.seeds.len()
    );
    Ok(())
}

/// Returns true when the learner converged.
fn cmd_learn(
    frames: &Path,
    model_in: &Path,
    model_out: &Path,
    progress_out: Option<&Path>,
    end_frame: Option<usize>,
    max_frames: Option<usize>,
    cfg_args: &ConfigArgs,
) -> Result<bool> {
    let file = ModelFile::load(model_in)?;
    let cfg = resolve_config(cfg_args, Some(file.config.clone()))?;
    let paths = files::list_frames(frames)?;
    if paths.len() < 2 {
        return Err(Error::EmptyStream);
    }
    let frame0 = files::load_frame_by_index(&paths, 0)?;
    let mut learner = Learner::new(cfg, file.model, file.state, &frame0, &file.seeds)?;

    // Re-fill the hard buffer of an interrupted run from its references.
    let mut cached: Option<(usize, scenedet::imaging::Frame)> = None;
    for pending in &file.pending_hard {
        if cached.as_ref().map(|(i, _)| *i) != Some(pending.frame_index) {
            let f = files::load_frame_by_index(&paths, pending.frame_index)?;
            cached = Some((pending.frame_index, f));
        }
        let frame = &cached.as_ref().unwrap().1;
        learner.buffer.entries.push(HardEntry {
            fern_patch: extract_patch(frame, &pending.bbox, FERN_PATCH_SIDE)?,
            hog_patch: extract_patch(frame, &pending.bbox, HOG_PATCH_SIDE)?,
            fern_score: pending.fern_score,
            frame_index: pending.frame_index,
            bbox: pending.bbox,
        });
    }

    // Frame 0 only seeds the initial set; learning starts at 1.
    let start = 1 + learner.state.frames_processed;
    let stop = end_frame.unwrap_or(paths.len()).min(paths.len());
    let mut budget = max_frames.unwrap_or(usize::MAX);
    // Stream the progress log frame by frame so an interrupted run still
    // leaves its trajectory behind.
    let mut logged = 0usize;
    for index in start..stop {
        if budget == 0 {
            break;
        }
        budget -= 1;
        let frame = files::load_frame_by_index(&paths, index)?;
        let keep_going = learner.process_frame(&frame)?;
        if let Some(path) = progress_out {
            append_progress(&learner.progress[logged..], path)?;
            logged = learner.progress.len();
        }
        if !keep_going {
            break;
        }
    }

    let pending_hard: Vec<PendingHard> = learner
        .buffer
        .entries
        .iter()
        .map(|e| PendingHard {
            frame_index: e.frame_index,
            bbox: e.bbox,
            fern_score: e.fern_score,
        })
        .collect();
    let converged = learner.converged();
    let out = ModelFile {
        version: MODEL_FORMAT_VERSION,
        config: file.config,
        seeds: file.seeds,
        model: learner.model,
        state: learner.state,
        pending_hard,
    };
    out.save(model_out)?;
    if let Some(path) = progress_out {
        append_progress(&learner.progress[logged..], path)?;
    }
    println!(
        "learned through frame {}: t = {}, theta = {}, converged = {converged}",
        out.state.frames_processed,
        out.state.iteration,
        out.model.boundary.theta
    );
    Ok(converged)
}

fn append_progress(rows: &[scenedet::gdm::ProgressRow], path: &Path) -> Result<()> {
    if path.exists() {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        for r in rows {
            writeln!(
                f,
                "{},{},{},{},{},{}",
                r.t, r.theta, r.zeta, r.n_hard, r.n_pos_pseudo, r.n_neg_pseudo
            )
            .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    } else {
        files::write_progress_csv(rows, path)
    }
}

fn cmd_detect(
    frames: &Path,
    model_path: &Path,
    out: &Path,
    raw: Option<&Path>,
    start: usize,
    end: Option<usize>,
    cfg_args: &ConfigArgs,
) -> Result<()> {
    let file = ModelFile::load(model_path)?;
    let cfg = resolve_config(cfg_args, Some(file.config.clone()))?;
    let paths = files::list_frames(frames)?;
    let stop = end.unwrap_or(paths.len()).min(paths.len());
    let scales = build_scale_set(&file.seeds[0], cfg.n_scales, cfg.scale_ratio)?;

    let mut detections: Vec<DetectionResponse<f64>> = Vec::new();
    let mut responses: Vec<DetectionResponse<f64>> = Vec::new();
    let mut expected_raw = 0usize;
    for index in start..stop {
        let frame = files::load_frame_by_index(&paths, index)?;
        expected_raw += window_count(frame.width, frame.height, &scales, cfg.stride_frac);
        let all = sliding_window_detect(&file.model, &frame, &scales, cfg.stride_frac)?;
        let hits: Vec<DetectionResponse<f64>> = all
            .iter()
            .filter(|r| r.is_detection())
            .copied()
            .collect();
        detections.extend(nms(&hits, cfg.nms_iou));
        if raw.is_some() {
            responses.extend(all);
        }
    }
    files::write_detections_csv(&detections, out)?;
    if let Some(raw_path) = raw {
        debug_assert_eq!(responses.len(), expected_raw);
        files::write_detections_csv(&responses, raw_path)?;
    }
    println!(
        "scanned frames {start}..{stop}: {} detections ({} windows/frame set)",
        detections.len(),
        expected_raw
    );
    Ok(())
}

fn cmd_eval(
    detections: &Path,
    gt: &Path,
    out: Option<&Path>,
    roc: Option<&Path>,
    responses: Option<&Path>,
    n_frames: Option<usize>,
    cfg_args: &ConfigArgs,
) -> Result<()> {
    let cfg = resolve_config(cfg_args, None)?;
    let dets = files::read_detections_csv(detections)?;
    let gt = files::read_gt_csv(gt)?;
    let resp: Vec<ScoredBox> = match responses {
        Some(path) => files::read_detections_csv(path)?,
        None => dets.clone(),
    };
    let frames = n_frames.unwrap_or_else(|| gt.per_frame.len().max(1));
    let metrics = compute_metrics(&dets, &resp, &gt, cfg.match_iou, frames);
    println!(
        "tp = {}, fp = {}, fn = {}",
        metrics.counts.tp, metrics.counts.fp, metrics.counts.fn_
    );
    println!(
        "precision = {:.4}, recall = {:.4}, F = {:.4}",
        metrics.precision, metrics.recall, metrics.f_measure
    );
    if let Some(path) = out {
        files::write_metrics_report(&metrics, path)?;
    }
    if let Some(path) = roc {
        files::write_roc_csv(&metrics.roc, path)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    out: &Path,
    gt_path: &Path,
    seeds: Option<&Path>,
    scene: SceneConfig,
) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (frames, gt) = generate_sequence(&scene)?;
    for (t, frame) in frames.iter().enumerate() {
        files::save_frame_png(frame, &out.join(format!("frame_{:06}.png", t + 1)))?;
    }
    files::write_gt_csv(&gt, gt_path)?;
    if let Some(seed_path) = seeds {
        let mut frame0 = scenedet::eval::GroundTruth::default();
        if let Some(boxes) = gt.per_frame.get(&0) {
            frame0.per_frame.insert(0, boxes.clone());
        }
        files::write_gt_csv(&frame0, seed_path)?;
    }
    println!("wrote {} frames to {}", frames.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Init { frames, seeds, model, cfg } => {
            cmd_init(&frames, &seeds, &model, &cfg)?;
            Ok(true)
        }
        Command::Learn {
            frames,
            model,
            out,
            progress,
            end_frame,
            max_frames,
            cfg,
        } => {
            let out = out.unwrap_or_else(|| model.clone());
            cmd_learn(
                &frames,
                &model,
                &out,
                progress.as_deref(),
                end_frame,
                max_frames,
                &cfg,
            )
        }
        Command::Detect {
            frames,
            model,
            out,
            raw,
            start,
            end,
            cfg,
        } => {
            cmd_detect(&frames, &model, &out, raw.as_deref(), start, end, &cfg)?;
            Ok(true)
        }
        Command::Eval {
            detections,
            gt,
            out,
            roc,
            responses,
            n_frames,
            cfg,
        } => {
            cmd_eval(
                &detections,
                &gt,
                out.as_deref(),
                roc.as_deref(),
                responses.as_deref(),
                n_frames,
                &cfg,
            )?;
            Ok(true)
        }
        Command::Synth {
            out,
            gt,
            seeds,
            frames,
            width,
            height,
            objects,
            object_size,
            speed,
            noise_sigma,
            clutter,
            seed,
        } => {
            let scene = SceneConfig {
                width,
                height,
                n_objects: objects,
                object_w: object_size,
                object_h: object_size,
                speed,
                clutter_density: clutter,
                noise_sigma,
                n_frames: frames,
                rng_seed: seed,
                ..SceneConfig::default()
            };
            cmd_synth(&out, &gt, seeds.as_deref(), scene)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        // Learner did not converge; the model was still written.
        Ok(false) => ExitCode::from(3),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
