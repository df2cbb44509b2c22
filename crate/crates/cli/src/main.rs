//! Command-line pipeline: synthesize scenarios, extract features, train,
//! score, evaluate, run leave-one-group-out ablations and flow-depth
//! sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use trajvad::eval::{concat_frames, evaluate, EvalReport};
use trajvad::flow::{FlowModel, ModelConfig, Variant};
use trajvad::preprocess::{segment_track, smooth_track, Window, DEFAULT_SMOOTH_RADIUS};
use trajvad::scoring::{aggregate_videos, score_segments};
use trajvad::synth::{generate, write_scenario, AnomalyKind, ScenarioConfig};
use trajvad::track_io::{
    self, load_model, parse_labels, parse_pose, parse_tracks, save_model, GroundTruth, ScoreRow,
    VideoMeta,
};
use trajvad::training::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "trajvad", version, about = "Trajectory-based video anomaly detection")]
struct Cli {
    /// Print per-stage wall time (ms per frame / per segment).
    #[arg(long, global = true)]
    time: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario (tracks, meta, labels, poses).
    Synth(SynthOpts),
    /// Extract per-frame window features to CSV.
    Extract(ExtractOpts),
    /// Train a model on normal tracks and write a checkpoint.
    Train(TrainOpts),
    /// Score test tracks with a trained checkpoint.
    Score(ScoreOpts),
    /// Evaluate a scores file against ground-truth labels.
    Eval(EvalOpts),
    /// Compare the full model against one with a feature group removed.
    Ablate(AblateOpts),
    /// Train and evaluate across several flow depths.
    SweepK(SweepOpts),
}

#[derive(Args)]
struct SynthOpts {
    /// Output directory for tracks.csv, meta.csv, labels.csv, pose.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    videos: usize,
    #[arg(long, default_value_t = 160)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    objects: usize,
    /// Fraction of objects per video carrying an anomaly.
    #[arg(long, default_value_t = 0.0)]
    anomaly_rate: f64,
    /// Comma-separated kinds: speed-spike, erratic, scale-burst,
    /// wrong-class, confidence-collapse.
    #[arg(long)]
    anomalies: Option<String>,
    /// Person/bicycle/car proportions, comma-separated.
    #[arg(long, default_value = "0.7,0.3,0.0")]
    class_mix: String,
    /// Also synthesize person poses.
    #[arg(long)]
    pose: bool,
    #[arg(long, default_value = "synth")]
    prefix: String,
}

#[derive(Args)]
struct DataOpts {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    /// Optional pose file to attach.
    #[arg(long)]
    pose_file: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractOpts {
    #[command(flatten)]
    data: DataOpts,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SMOOTH_RADIUS)]
    smooth_radius: usize,
    #[arg(long, default_value_t = 16)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args, Clone)]
struct ModelOpts {
    /// Flat key=value file merged below the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model variant: t (trajectory only) or p (pose-gated).
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_final: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    /// Trajectory-flow coupling layers.
    #[arg(long)]
    k: Option<usize>,
    /// Pose-flow coupling layers (variant p).
    #[arg(long)]
    k_pose: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    person_class: Option<usize>,
    /// Train without one feature group (state, temporal, geometric,
    /// pseudo_physical, perspective, confidence).
    #[arg(long)]
    mask_group: Option<String>,
    #[arg(long)]
    smooth_radius: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct TrainOpts {
    #[command(flatten)]
    data: DataOpts,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelOpts,
}

#[derive(Args)]
struct ScoreOpts {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataOpts,
    #[arg(long)]
    out: PathBuf,
    /// Override the checkpoint variant (t downgrades a pose model).
    #[arg(long)]
    variant: Option<String>,
    /// Gaussian temporal smoothing sigma in frames (off by default).
    #[arg(long)]
    smooth_sigma: Option<f64>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    smooth_radius: Option<usize>,
}

#[derive(Args)]
struct EvalOpts {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Require human-related metrics (error when masks are missing).
    #[arg(long)]
    hr: bool,
    /// Optional file for the machine-readable key=value block.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateOpts {
    /// Feature group to remove in the ablated run.
    #[arg(long)]
    group: String,
    #[command(flatten)]
    train_data: DataOpts,
    #[arg(long)]
    test_tracks: PathBuf,
    #[arg(long)]
    test_meta: PathBuf,
    #[arg(long)]
    test_pose_file: Option<PathBuf>,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    model: ModelOpts,
}

#[derive(Args)]
struct SweepOpts {
    /// Comma-separated flow depths, e.g. 6,10,14,18,22.
    #[arg(long)]
    values: String,
    #[command(flatten)]
    train_data: DataOpts,
    #[arg(long)]
    test_tracks: PathBuf,
    #[arg(long)]
    test_meta: PathBuf,
    #[arg(long)]
    test_pose_file: Option<PathBuf>,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    model: ModelOpts,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(o) => cmd_synth(o),
        Command::Extract(o) => cmd_extract(o, cli.time),
        Command::Train(o) => cmd_train(o, cli.time),
        Command::Score(o) => cmd_score(o, cli.time),
        Command::Eval(o) => cmd_eval(o),
        Command::Ablate(o) => cmd_ablate(o),
        Command::SweepK(o) => cmd_sweep(o),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("invalid {what} entry {p:?}: {e}"))
        })
        .collect()
}

fn cmd_synth(o: SynthOpts) -> Result<()> {
    let mix: Vec<f64> = parse_list(&o.class_mix, "class mix")?;
    if mix.len() != 3 {
        bail!("class mix needs exactly 3 proportions");
    }
    let anomalies: Vec<AnomalyKind> = match &o.anomalies {
        Some(s) => parse_list(s, "anomaly")?,
        None => trajvad::synth::default_catalogue(),
    };
    let cfg = ScenarioConfig {
        seed: o.seed,
        videos: o.videos,
        frames: o.frames,
        objects: o.objects,
        class_mix: [mix[0], mix[1], mix[2]],
        anomaly_rate: o.anomaly_rate,
        anomalies,
        with_pose: o.pose,
        video_prefix: o.prefix,
        ..ScenarioConfig::default()
    };
    let out = generate(&cfg).context("scenario generation failed")?;
    std::fs::create_dir_all(&o.out)
        .with_context(|| format!("cannot create {}", o.out.display()))?;
    write_scenario(&out, &o.out).context("writing scenario files failed")?;
    let anomalous: usize = out
        .ground_truth
        .iter()
        .map(|g| g.labels.iter().filter(|&&l| l == 1).count())
        .sum();
    let total: usize = out.ground_truth.iter().map(|g| g.labels.len()).sum();
    println!(
        "wrote {} detections, {} videos, {}/{} anomalous frames to {}",
        out.detections.len(),
        out.metas.len(),
        anomalous,
        total,
        o.out.display()
    );
    Ok(())
}

/// Parses, smooths and windows the input tracks.
fn load_windows(
    data: &DataOpts,
    smooth_radius: usize,
    window: usize,
    stride: usize,
) -> Result<(Vec<Window>, BTreeMap<String, VideoMeta>, usize)> {
    let (mut tracks, metas, mut report) = parse_tracks(&data.tracks, &data.meta)
        .context("parsing tracks failed")?;
    if let Some(pose) = &data.pose_file {
        parse_pose(pose, &mut tracks, &metas, &mut report).context("parsing poses failed")?;
    }
    let frames: usize = metas.values().map(|m| m.frame_count).sum();
    let mut windows = Vec::new();
    for track in &tracks {
        let smoothed = smooth_track(track, smooth_radius);
        windows.extend(segment_track(&smoothed, window, stride));
    }
    Ok((windows, metas, frames))
}

fn cmd_extract(o: ExtractOpts, time: bool) -> Result<()> {
    let t0 = Instant::now();
    let (windows, _, frames) =
        load_windows(&o.data, o.smooth_radius, o.window, o.stride)?;
    let mut out = String::new();
    out.push_str("video_id,track_id,part,start_frame,frame");
    for name in trajvad::features::FEATURE_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for w in &windows {
        let f = trajvad::features::compute_features(w).context("feature extraction failed")?;
        for (t, row) in f.rows().into_iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}",
                w.video_id,
                w.track_id,
                w.part,
                w.start_frame,
                w.start_frame + t
            ));
            for v in row {
                out.push(',');
                out.push_str(&track_io::fmt_f64(*v));
            }
            out.push('\n');
        }
    }
    std::fs::write(&o.out, out).with_context(|| format!("cannot write {}", o.out.display()))?;
    println!("extracted {} windows to {}", windows.len(), o.out.display());
    if time {
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        println!(
            "stage=preprocess ms_total={ms:.1} ms_per_frame={:.4}",
            ms / frames.max(1) as f64
        );
    }
    Ok(())
}

/// Reads a flat key=value config file.
fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("config line {} is not key=value", i + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct Resolved {
    model: ModelConfig,
    train: TrainConfig,
    mask_group: Option<String>,
    smooth_radius: usize,
    stride: usize,
}

/// Defaults < config file < flags.
fn resolve(o: &ModelOpts) -> Result<Resolved> {
    let file = match &o.config {
        Some(p) => read_kv(p)?,
        None => BTreeMap::new(),
    };
    fn pick<T: Clone + std::str::FromStr>(
        flag: &Option<T>,
        file: &BTreeMap<String, String>,
        key: &str,
        default: T,
    ) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v.clone());
        }
        match file.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("config key {key}={raw:?}: {e}")),
            None => Ok(default),
        }
    }

    let variant: Variant = pick(&o.variant, &file, "variant", "t".to_string())?
        .parse()
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let default_k = match variant {
        Variant::T => 6,
        Variant::P => 18,
    };
    let k = pick(&o.k, &file, "k", default_k)?;
    let model = ModelConfig {
        variant,
        window_len: pick(&o.window, &file, "window", 16)?,
        k_traj: k,
        k_pose: pick(&o.k_pose, &file, "k_pose", k)?,
        embed_dim: pick(&o.embed_dim, &file, "embed_dim", 3)?,
        num_classes: pick(&o.classes, &file, "classes", 80)?,
        mu0: pick(&o.mu0, &file, "mu0", 3.0)?,
        lambda: pick(&o.lambda, &file, "lambda", 1.0)?,
        hidden: pick(&o.hidden, &file, "hidden", 64)?,
        person_class: pick(&o.person_class, &file, "person_class", 0)?,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        batch_size: pick(&o.batch, &file, "batch", 64)?,
        epochs: pick(&o.epochs, &file, "epochs", 8)?,
        lr: pick(&o.lr, &file, "lr", 1e-2)?,
        lr_final: pick(&o.lr_final, &file, "lr_final", 1e-4)?,
        clip_norm: pick(&o.clip, &file, "clip", 10.0)?,
        seed: pick(&o.seed, &file, "seed", 0)?,
    };
    let mask_group = match &o.mask_group {
        Some(g) => Some(g.clone()),
        None => file.get("mask_group").cloned(),
    };
    Ok(Resolved {
        model,
        train,
        mask_group,
        smooth_radius: pick(&o.smooth_radius, &file, "smooth_radius", DEFAULT_SMOOTH_RADIUS)?,
        stride: pick(&o.stride, &file, "stride", 1)?,
    })
}

fn train_model(data: &DataOpts, r: &Resolved, time: bool) -> Result<FlowModel> {
    let t0 = Instant::now();
    let (windows, _, frames) =
        load_windows(data, r.smooth_radius, r.model.window_len, r.stride)?;
    if time {
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        println!(
            "stage=preprocess ms_total={ms:.1} ms_per_frame={:.4}",
            ms / frames.max(1) as f64
        );
    }
    let t1 = Instant::now();
    let (model, losses) = match &r.mask_group {
        Some(group) => trajvad::training::train_ablation(
            r.model.clone(),
            &r.train,
            &windows,
            group,
        )
        .context("ablation training failed")?,
        None => train(r.model.clone(), &r.train, &windows).context("training failed")?,
    };
    for (i, loss) in losses.iter().enumerate() {
        println!("epoch={} loss={loss:.6}", i + 1);
    }
    if time {
        let ms = t1.elapsed().as_secs_f64() * 1e3;
        println!(
            "stage=train ms_total={ms:.1} ms_per_segment={:.4}",
            ms / windows.len().max(1) as f64
        );
    }
    Ok(model)
}

fn cmd_train(o: TrainOpts, time: bool) -> Result<()> {
    let r = resolve(&o.model)?;
    let model = train_model(&o.data, &r, time)?;
    save_model(&model, &o.out).context("writing checkpoint failed")?;
    println!("wrote checkpoint {}", o.out.display());
    Ok(())
}

fn score_to_rows(
    model: &FlowModel,
    data: &DataOpts,
    smooth_radius: usize,
    stride: usize,
    smooth_sigma: Option<f64>,
    time: bool,
) -> Result<Vec<ScoreRow>> {
    let t0 = Instant::now();
    let (windows, metas, frames) =
        load_windows(data, smooth_radius, model.config.window_len, stride)?;
    if time {
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        println!(
            "stage=preprocess ms_total={ms:.1} ms_per_frame={:.4}",
            ms / frames.max(1) as f64
        );
    }
    let t1 = Instant::now();
    let segments = score_segments(model, &windows).context("scoring failed")?;
    if time {
        let ms = t1.elapsed().as_secs_f64() * 1e3;
        println!(
            "stage=inference ms_total={ms:.1} ms_per_segment={:.4}",
            ms / segments.len().max(1) as f64
        );
    }
    let series = aggregate_videos(&segments, &metas, smooth_sigma);
    let with_breakdown = model.config.variant == Variant::P;
    let mut by_key: BTreeMap<(String, usize), (f64, f64, Option<f64>, f64)> = BTreeMap::new();
    for s in &segments {
        for f in s.start_frame..s.start_frame + s.t_len {
            let e = by_key
                .entry((s.video_id.clone(), f))
                .or_insert((f64::NEG_INFINITY, 0.0, None, 0.0));
            if s.score > e.0 {
                *e = (s.score, s.traj, s.pose, s.gate);
            }
        }
    }
    let mut rows = Vec::new();
    for sr in &series {
        for (f, &score) in sr.scores.iter().enumerate() {
            let breakdown = if with_breakdown {
                by_key
                    .get(&(sr.video_id.clone(), f))
                    .map(|&(_, traj, pose, gate)| (traj, pose, gate))
                    .or(Some((score, None, 0.0)))
            } else {
                None
            };
            rows.push(ScoreRow {
                video_id: sr.video_id.clone(),
                frame_index: f,
                score,
                breakdown,
            });
        }
    }
    Ok(rows)
}

fn cmd_score(o: ScoreOpts, time: bool) -> Result<()> {
    let mut model = load_model(&o.model).context("loading checkpoint failed")?;
    if let Some(v) = &o.variant {
        let v: Variant = v.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
        match (v, model.config.variant) {
            (Variant::P, Variant::T) => bail!("checkpoint has no pose branch"),
            (v, _) => model.config.variant = v,
        }
    }
    let radius = o.smooth_radius.unwrap_or(DEFAULT_SMOOTH_RADIUS);
    let rows = score_to_rows(&model, &o.data, radius, o.stride, o.smooth_sigma, time)?;
    track_io::write_scores(&o.out, &rows).context("writing scores failed")?;
    println!("wrote {} frame scores to {}", rows.len(), o.out.display());
    Ok(())
}

fn eval_scores(rows: &[ScoreRow], gts: &[GroundTruth]) -> Result<EvalReport> {
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        series.entry(r.video_id.clone()).or_default().push(r.score);
    }
    let series: Vec<trajvad::scoring::FrameScoreSeries> = series
        .into_iter()
        .map(|(video_id, scores)| trajvad::scoring::FrameScoreSeries {
            covered: vec![true; scores.len()],
            video_id,
            scores,
        })
        .collect();
    let frames = concat_frames(&series, gts).context("aligning scores with labels failed")?;
    evaluate(&frames).map_err(|e| anyhow::anyhow!("evaluation failed: {e}"))
}

fn cmd_eval(o: EvalOpts) -> Result<()> {
    let rows = track_io::read_scores(&o.scores).context("reading scores failed")?;
    let gts = parse_labels(&o.labels).context("reading labels failed")?;
    let report = eval_scores(&rows, &gts)?;
    if o.hr && report.hr.is_none() {
        bail!("human-related metrics requested but the labels carry no mask");
    }
    print!("{}", report.key_values());
    print!("{}", report.table());
    if let Some(out) = &o.out {
        std::fs::write(out, report.key_values())
            .with_context(|| format!("cannot write {}", out.display()))?;
    }
    Ok(())
}

fn test_data(tracks: &Path, meta: &Path, pose: &Option<PathBuf>) -> DataOpts {
    DataOpts {
        tracks: tracks.to_path_buf(),
        meta: meta.to_path_buf(),
        pose_file: pose.clone(),
    }
}

fn train_score_eval(
    train_data: &DataOpts,
    test: &DataOpts,
    labels: &Path,
    r: &Resolved,
) -> Result<EvalReport> {
    let model = train_model(train_data, r, false)?;
    let rows = score_to_rows(&model, test, r.smooth_radius, 1, None, false)?;
    let gts = parse_labels(labels).context("reading labels failed")?;
    eval_scores(&rows, &gts)
}

fn cmd_ablate(o: AblateOpts) -> Result<()> {
    let full = resolve(&o.model)?;
    if full.mask_group.is_some() {
        bail!("--mask-group conflicts with ablate; use --group");
    }
    let mut ablated = resolve(&o.model)?;
    ablated.mask_group = Some(o.group.clone());
    let test = test_data(&o.test_tracks, &o.test_meta, &o.test_pose_file);

    let base = train_score_eval(&o.train_data, &test, &o.labels, &full)?;
    let drop = train_score_eval(&o.train_data, &test, &o.labels, &ablated)?;
    println!(
        "full auroc={:.6} ap={:.6}",
        base.auroc, base.ap
    );
    println!(
        "-{} auroc={:.6} ap={:.6}",
        o.group, drop.auroc, drop.ap
    );
    println!("delta_auroc={:.6}", drop.auroc - base.auroc);
    Ok(())
}

fn cmd_sweep(o: SweepOpts) -> Result<()> {
    let values: Vec<usize> = parse_list(&o.values, "k")?;
    if values.is_empty() {
        bail!("no k values given");
    }
    let test = test_data(&o.test_tracks, &o.test_meta, &o.test_pose_file);
    println!("{:>4} {:>10} {:>10}", "k", "auroc", "ap");
    for k in values {
        let mut r = resolve(&o.model)?;
        r.model.k_traj = k;
        let report = train_score_eval(&o.train_data, &test, &o.labels, &r)?;
        println!("{k:>4} {:>10.6} {:>10.6}", report.auroc, report.ap);
    }
    Ok(())
}
