use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use poseval::agreement::{annotation_spread, group_by_frame, model_vs_human_icc, parse_baseline, write_baseline};
use poseval::dataset::{
    build_training_subsets, select_interrater, split_dataset, stratify_frames, validate_split, StratificationPlan,
};
use poseval::latency::{measure_latency, BenchConfig, Endpoint, LinePredictor};
use poseval::metrics::{error_distribution, evaluate, MetricReport, PckConfig, DEFAULT_TAUS};
use poseval::model::{DatasetManifest, KeypointId, PoseAnnotation, Split};
use poseval::report::{generate_report, render, Efficiency, Format, ReportInputs, ReportKind};
use poseval::service::{http, read_roster, AnnotationService};
use poseval::stats::OrderStats;
use poseval::synthetic::{gen_scene, perturb_model, perturb_rater, NoiseProfile};
use poseval::table::{parse_annotations, parse_predictions, write_annotations, write_predictions};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Parser)]
#[command(name = "poseval", version, about = "Evaluate infant pose trackers against human annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stratify a frame pool and split it into train/validation/test by video.
    BuildDataset(BuildDataset),
    /// Check split atomicity and proportions; exits non-zero on violations.
    ValidateSplit {
        manifest: PathBuf,
    },
    /// Draw training subsets of the given sizes from the train split.
    Subsets {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute ME, PCK_h and PCK@Human95 for every model in a prediction table.
    Eval(Eval),
    /// Human annotation spread over the inter-rater frames.
    Agreement {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// ICC between each model's per-keypoint ME and the human spread.
    Icc {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
    },
    /// Render a result table.
    Report(Report),
    /// Measure predictor latency.
    Bench(Bench),
    /// Generate synthetic scenes, raters and models.
    #[command(subcommand)]
    Synth(Synth),
    /// Run the annotation service.
    Serve {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long)]
        roster: PathBuf,
    },
}

#[derive(Args)]
struct BuildDataset {
    /// Manifest listing the candidate pool (videos and frames).
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    total: usize,
    #[arg(long, default_value_t = 0.2)]
    challenging_share: f64,
    #[arg(long, default_value_t = 100)]
    interrater: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TAUS)]
    taus: Vec<f64>,
    /// Restrict evaluation to one split.
    #[arg(long)]
    split: Option<SplitArg>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct Report {
    /// table1 | table2 | table3 | fig4 | fig6
    #[arg(long)]
    kind: String,
    /// csv | txt | md
    #[arg(long, default_value = "txt")]
    format: String,
    /// Output of `eval`.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Output of `icc`.
    #[arg(long)]
    icc: Option<PathBuf>,
    /// JSON object mapping model id to declared resolution/params/flops/latency.
    #[arg(long)]
    efficiency: Option<PathBuf>,
    /// CSV with columns model,training_frames,me.
    #[arg(long)]
    sample_efficiency: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Bench {
    /// Shell command of a predictor speaking the line protocol on stdio.
    #[arg(long, conflicts_with = "socket", required_unless_present = "socket")]
    predictor: Option<String>,
    /// Address of a predictor listening on TCP.
    #[arg(long)]
    socket: Option<String>,
    /// Manifest whose frame image paths are sent to the predictor.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Per-batch timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
}

#[derive(Subcommand)]
enum Synth {
    /// Random skeletons, one ground-truth pose per frame.
    Scene {
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
        /// Number of frames (from the start) marked for inter-rater annotation.
        #[arg(long, default_value_t = 0)]
        interrater: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Simulated human raters on the inter-rater frames.
    Raters {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 10)]
        raters: usize,
        /// Per-axis jitter in pixels.
        #[arg(long, default_value_t = 5.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Simulated model predictions.
    Model {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        model_id: String,
        #[arg(long, default_value_t = 5.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        inversion_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        miss_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// One entry of the `eval` output.
#[derive(Serialize, Deserialize)]
struct Evaluation {
    report: MetricReport,
    distribution: Vec<(KeypointId, OrderStats)>,
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    DatasetManifest::from_json(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn read_annotations(path: &Path, manifest: &DatasetManifest) -> Result<Vec<PoseAnnotation>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_annotations(BufReader::new(file), Some(manifest)).with_context(|| format!("parsing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

/// Writes to the file if given, else stdout.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn build_dataset(args: BuildDataset) -> Result<()> {
    let pool = read_manifest(&args.pool)?;
    let plan = StratificationPlan {
        total_frames: args.total,
        challenging_share: args.challenging_share,
        seed: args.seed,
        ..Default::default()
    };
    let frames = stratify_frames(&pool.frames, &plan)?;
    let mut outcome = split_dataset(&frames, &pool.videos, &plan)?;
    for w in &outcome.warnings {
        eprintln!("warning: {}", serde_json::to_string(w)?);
    }
    if args.interrater > 0 {
        outcome.manifest.interrater_frames =
            select_interrater(&outcome.manifest.frames, args.interrater, &plan.setup_shares, args.seed)?;
    }
    std::fs::write(&args.output, outcome.manifest.to_json()?)?;
    Ok(())
}

fn eval(args: Eval) -> Result<()> {
    let mut manifest = read_manifest(&args.manifest)?;
    if let Some(split) = args.split {
        let split: Split = split.into();
        manifest.frames.retain(|f| manifest.splits.get(&f.frame_id) == Some(&split));
    }
    let keep: std::collections::HashSet<String> = manifest.frames.iter().map(|f| f.frame_id.clone()).collect();
    let gts: Vec<PoseAnnotation> =
        read_annotations(&args.gt, &manifest)?.into_iter().filter(|a| keep.contains(&a.frame_id)).collect();
    if gts.is_empty() {
        bail!("no ground truth in the selected frames");
    }
    let file = File::open(&args.predictions).with_context(|| format!("opening {}", args.predictions.display()))?;
    let sets = parse_predictions(BufReader::new(file), None)?;
    let baseline = args.baseline.as_deref().map(|p| -> Result<_> { Ok(parse_baseline(File::open(p)?)?) }).transpose()?;
    let config = PckConfig::new(args.taus)?;
    let mut out = Vec::new();
    for set in &sets {
        let report = evaluate(set, &gts, &manifest, baseline.as_ref(), &config)
            .with_context(|| format!("evaluating {}", set.model_id))?;
        if !report.degenerate_frames.is_empty() {
            eprintln!(
                "{}: {} frames without a usable head length were left out of PCK_h",
                set.model_id,
                report.degenerate_frames.len()
            );
        }
        let distribution = error_distribution(set, &gts, &manifest)?;
        out.push(Evaluation { report, distribution });
    }
    write_json(args.output.as_deref(), &out)
}

fn agreement(manifest: &Path, annotations: &Path, output: Option<&Path>) -> Result<()> {
    let manifest = read_manifest(manifest)?;
    let mut groups = group_by_frame(read_annotations(annotations, &manifest)?);
    if !manifest.interrater_frames.is_empty() {
        groups.retain(|f, _| manifest.interrater_frames.contains(f));
    }
    let baseline = annotation_spread(&groups, &manifest)?;
    write_baseline(sink(output)?, &baseline)?;
    Ok(())
}

fn icc(eval: &Path, baseline: &Path) -> Result<()> {
    let evals: Vec<Evaluation> = read_json(eval)?;
    let baseline = parse_baseline(File::open(baseline)?)?;
    let mut out = Vec::new();
    for e in evals {
        let r = model_vs_human_icc(&e.report.me.per_keypoint, &baseline.h_values())
            .with_context(|| format!("ICC for {}", e.report.model_id))?;
        out.push((e.report.model_id, r));
    }
    write_json(None, &out)
}

fn report(args: Report) -> Result<()> {
    let kind: ReportKind = args.kind.parse()?;
    let format: Format = args.format.parse()?;
    let mut inputs = ReportInputs::default();
    if let Some(p) = &args.eval {
        let evals: Vec<Evaluation> = read_json(p)?;
        for e in evals {
            inputs.distributions.push((e.report.model_id.clone(), e.distribution));
            inputs.reports.push(e.report);
        }
    }
    if let Some(p) = &args.efficiency {
        let eff: BTreeMap<String, Efficiency> = read_json(p)?;
        inputs.efficiency = inputs.reports.iter().map(|r| eff.get(&r.model_id).cloned().unwrap_or_default()).collect();
    }
    if let Some(p) = &args.baseline {
        inputs.baseline = Some(parse_baseline(File::open(p)?)?);
    }
    if let Some(p) = &args.icc {
        inputs.icc = read_json(p)?;
    }
    if let Some(p) = &args.sample_efficiency {
        let mut rdr = csv::Reader::from_path(p)?;
        for row in rdr.deserialize() {
            let (model, size, me): (String, usize, f64) = row?;
            inputs.sample_efficiency.push((model, size, me));
        }
    }
    let doc = generate_report(kind, &inputs)?;
    sink(args.output.as_deref())?.write_all(&render(&doc, format))?;
    Ok(())
}

fn bench(args: Bench) -> Result<()> {
    let manifest = read_manifest(&args.frames)?;
    let base = args.frames.parent().unwrap_or(Path::new("."));
    let frames: Vec<String> = manifest
        .frames
        .iter()
        .map(|f| match &f.image_path {
            Some(p) => base.join(p).display().to_string(),
            None => f.frame_id.clone(),
        })
        .collect();
    let config = BenchConfig {
        batch_size: args.batch,
        runs: args.runs,
        warmup_runs: args.warmup,
        timeout: Duration::from_secs_f64(args.timeout),
    };
    let endpoint = match (args.predictor, args.socket) {
        (Some(cmd), _) => Endpoint::Command(cmd),
        (None, Some(addr)) => Endpoint::Socket(addr),
        (None, None) => bail!("either --predictor or --socket is required"),
    };
    let mut predictor = LinePredictor::connect(&endpoint, config.timeout)?;
    let result = measure_latency(&frames, &config, &mut predictor)?;
    write_json(None, &result)
}

fn synth(cmd: Synth) -> Result<()> {
    match cmd {
        Synth::Scene { frames, width, height, interrater, seed, out_dir } => {
            let (mut manifest, gts) = gen_scene(frames, width, height, seed)?;
            manifest.interrater_frames = manifest.frames.iter().take(interrater).map(|f| f.frame_id.clone()).collect();
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("manifest.json"), manifest.to_json()?)?;
            write_annotations(File::create(out_dir.join("gt.csv"))?, &gts)?;
        }
        Synth::Raters { manifest, gt, raters, sigma, seed, output } => {
            let manifest = read_manifest(&manifest)?;
            let frames = manifest.frame_map();
            let profile = NoiseProfile::jitter(sigma, seed);
            let mut out = Vec::new();
            for g in read_annotations(&gt, &manifest)? {
                if !manifest.interrater_frames.is_empty() && !manifest.interrater_frames.contains(&g.frame_id) {
                    continue;
                }
                for r in 0..raters {
                    out.push(perturb_rater(&g, frames[g.frame_id.as_str()], &profile, &format!("rater{r:02}"))?);
                }
            }
            write_annotations(File::create(output)?, &out)?;
        }
        Synth::Model { manifest, gt, model_id, sigma, inversion_rate, miss_rate, seed, output } => {
            let manifest = read_manifest(&manifest)?;
            let gts = read_annotations(&gt, &manifest)?;
            let profile = NoiseProfile::jitter(sigma, seed).with_inversions(inversion_rate).with_misses(miss_rate);
            let preds = perturb_model(&gts, &manifest, &profile, &model_id)?;
            write_predictions(File::create(output)?, &[preds])?;
        }
    }
    Ok(())
}

fn serve(data_dir: PathBuf, listen: String, roster: PathBuf) -> Result<()> {
    let service = AnnotationService::open(&data_dir, read_roster(&roster)?)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&listen).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        http::serve(service, listener).await
    })?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::BuildDataset(args) => build_dataset(args),
        Command::ValidateSplit { manifest } => {
            let manifest = read_manifest(&manifest)?;
            let report = validate_split(&manifest, &Default::default());
            write_json(None, &report)?;
            if !report.is_clean() {
                std::process::exit(1);
            }
            Ok(())
        }
        Command::Subsets { manifest, sizes, seed } => {
            let manifest = read_manifest(&manifest)?;
            let train: Vec<_> = manifest.frames_in(Split::Train).cloned().collect();
            write_json(None, &build_training_subsets(&train, &sizes, seed)?)
        }
        Command::Eval(args) => eval(args),
        Command::Agreement { manifest, annotations, output } => agreement(&manifest, &annotations, output.as_deref()),
        Command::Icc { eval, baseline } => icc(&eval, &baseline),
        Command::Report(args) => report(args),
        Command::Bench(args) => bench(args),
        Command::Synth(cmd) => synth(cmd),
        Command::Serve { data_dir, listen, roster } => serve(data_dir, listen, roster),
    }
}
