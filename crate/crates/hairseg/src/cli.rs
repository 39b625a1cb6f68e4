//! Command-line front end.
//!
//! Exit status 0 on success, 2 for usage errors, 3 for validation errors and
//! 1 for runtime errors. Failures also print one JSON line on stderr:
//! `{"error":{"kind":...,"code":...,"message":...}}`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hairseg_core::fusion::combine;
use hairseg_core::guidance::{
    guided_reverse_step, BlendVariant, Denoiser, FixedNoise, GuidanceWeights, LossTerms,
    MaskPreservationLoss, NoiseSchedule, ZeroDenoiser, ZeroLoss,
};
use hairseg_core::planner::{plan_jobs, PlanConfig};
use hairseg_core::prompter::build_prompts;
use hairseg_core::rng::substream;
use hairseg_core::segclient::{ImageRef, MockBackend, PromptRequest, SegmentBackend};

use crate::client::{request_mask, HttpBackend, RetryPolicy, ENDPOINT_ENV};
use crate::config::{connectivity, BackendKind, PipelineConfig};
use crate::error::{Error, Result};
use crate::wire::{self, PromptFile, SegmentRequest, SegmentResponse};
use crate::{io, pipeline};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)");

#[derive(Debug, Parser)]
#[command(name = "hairseg", version = VERSION, about = "Label-free hair segmentation and mask-guided augmentation toolkit")]
struct Cli {
    /// JSON configuration; command-line flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE.json")]
    config: Option<PathBuf>,

    /// Reject mask files holding values other than 0 and 255.
    #[arg(long, global = true)]
    strict_masks: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize pseudo-labelled (image, mask) pairs on hairless patches.
    GenPseudo(GenPseudoArgs),
    /// Build positive and negative point prompts from a coarse mask.
    Prompts(PromptsArgs),
    /// Fuse a coarse and a prompted mask.
    Ensemble(EnsembleArgs),
    /// Score a directory of predicted masks against ground truth.
    Eval(EvalArgs),
    /// Plan severity-rebalancing translation jobs from a label index.
    PlanAugment(PlanArgs),
    /// Apply one masked guidance step to an image.
    BlendStep(BlendArgs),
    /// Ask a point-prompted segmenter for a mask.
    Segment(SegmentArgs),
    /// Prompts, segmentation and fusion for a whole directory of coarse masks.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct GenPseudoArgs {
    #[arg(long, value_name = "DIR")]
    patches: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct PromptsArgs {
    #[arg(long, value_name = "FILE")]
    mask: PathBuf,
    /// Box side length.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    iou: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    max_positives: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "FILE.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    /// Coarse mask.
    #[arg(long, value_name = "FILE")]
    mhat: PathBuf,
    /// Prompted mask.
    #[arg(long = "map", value_name = "FILE")]
    prompted: PathBuf,
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    connectivity: Option<u8>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pred_dir: PathBuf,
    #[arg(long, value_name = "DIR")]
    gt_dir: PathBuf,
    #[arg(long, value_name = "FILE.csv")]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long, value_name = "FILE.csv")]
    index: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "FILE.jsonl")]
    out: PathBuf,
    /// Skipped jobs; defaults to `<out>.skips.jsonl`.
    #[arg(long, value_name = "FILE.jsonl")]
    skips: Option<PathBuf>,
    /// Allow targets at or below the source severity.
    #[arg(long)]
    any_direction: bool,
    #[arg(long)]
    max_retries: Option<usize>,
    #[arg(long)]
    mask_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Verbatim,
    Renoise,
}

#[derive(Debug, Args)]
struct BlendArgs {
    #[arg(long, value_name = "FILE")]
    xt: PathBuf,
    #[arg(long, value_name = "FILE")]
    mask: PathBuf,
    #[arg(long)]
    alpha_bar: f64,
    /// Noise level the renoise variant steps down to.
    #[arg(long, default_value_t = 1.0)]
    alpha_bar_prev: f64,
    /// `zero`, or `file:EPS.png` for a fixed noise image.
    #[arg(long, default_value = "zero")]
    denoiser: String,
    /// Source image for the masked L2 preservation term.
    #[arg(long, value_name = "FILE")]
    source: Option<PathBuf>,
    /// Loss weights JSON; missing keys keep their defaults.
    #[arg(long, value_name = "FILE.json")]
    weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantArg::Verbatim)]
    variant: VariantArg,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long, value_name = "FILE", conflicts_with = "input", requires = "prompts")]
    image: Option<PathBuf>,
    /// Prompt file written by `prompts`.
    #[arg(long, value_name = "FILE.json")]
    prompts: Option<PathBuf>,
    /// File-exchange mode: a request body to forward.
    #[arg(long = "in", value_name = "REQ.json", required_unless_present = "image")]
    input: Option<PathBuf>,
    /// Mask file, or the response body in file-exchange mode.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Answer from this ground-truth mask instead of calling a service.
    #[arg(long, value_name = "FILE")]
    mock_gt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long, value_name = "DIR")]
    images: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    coarse: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    gt: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    min_area: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Mock,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("HAIRSEG_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = Error::usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    cfg.strict_masks |= cli.strict_masks;
    match cli.command {
        Command::GenPseudo(a) => gen_pseudo(a, cfg),
        Command::Prompts(a) => prompts(a, cfg),
        Command::Ensemble(a) => ensemble(a, cfg),
        Command::Eval(a) => eval(a, cfg),
        Command::PlanAugment(a) => plan_augment(a, cfg),
        Command::BlendStep(a) => blend_step(a, cfg),
        Command::Segment(a) => segment(a, cfg),
        Command::Pipeline(a) => run_pipeline(a, cfg),
    }
}

fn need<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::validation(format!("{what} is required")))
}

fn gen_pseudo(a: GenPseudoArgs, mut cfg: PipelineConfig) -> Result<()> {
    let seed = cfg.require_seed(a.seed)?;
    let patches = need(a.patches.or(cfg.paths.patches.take()), "--patches")?;
    let out = need(a.out.or(cfg.paths.out.take()), "--out")?;
    if let Some(n) = a.count {
        cfg.generator.count = n;
    }
    let workers = a.workers.unwrap_or(cfg.workers);
    let patches = pipeline::load_patches(&patches)?;
    let manifest = pipeline::gen_pseudo(&patches, &cfg.generator, seed, &out, workers)?;
    log::info!("wrote {} pairs to {}", manifest.pairs.len(), out.display());
    Ok(())
}

fn prompts(a: PromptsArgs, mut cfg: PipelineConfig) -> Result<()> {
    let seed = cfg.require_seed(a.seed)?;
    let p = &mut cfg.prompter;
    p.n = a.n.unwrap_or(p.n);
    p.iou = a.iou.unwrap_or(p.iou);
    p.negatives = a.negatives.unwrap_or(p.negatives);
    p.max_positives = a.max_positives.or(p.max_positives);
    cfg.validate()?;
    let mask = io::read_mask(&a.mask, cfg.strict_masks)?;
    let id = io::item_id(&a.mask).unwrap_or_default();
    let pc = cfg.prompter.for_item(seed, &id);
    let set = build_prompts(&mask, &pc).map_err(|e| Error::from(e).at(&a.mask))?;
    io::write_json(&a.out, &PromptFile::new(set, pc.box_size))
}

fn ensemble(a: EnsembleArgs, cfg: PipelineConfig) -> Result<()> {
    let conn = connectivity(a.connectivity.unwrap_or(cfg.fusion.connectivity))?;
    let coarse = io::read_mask(&a.mhat, cfg.strict_masks)?;
    let prompted = io::read_mask(&a.prompted, cfg.strict_masks)?;
    let fused = combine(&coarse, &prompted, a.min_area.unwrap_or(cfg.fusion.min_area), conn)?;
    io::write_mask(&a.out, &fused)
}

fn eval(a: EvalArgs, cfg: PipelineConfig) -> Result<()> {
    let rows = pipeline::evaluate_dirs(&a.pred_dir, &a.gt_dir, cfg.strict_masks, a.workers.unwrap_or(cfg.workers))?;
    io::atomic_write(&a.out, &wire::metrics_csv(&rows)?)
}

fn default_skips(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".skips.jsonl");
    out.with_file_name(name)
}

fn plan_augment(a: PlanArgs, mut cfg: PipelineConfig) -> Result<()> {
    let seed = cfg.require_seed(a.seed)?;
    let index_path = need(a.index.or(cfg.paths.index.take()), "--index")?;
    let section = &cfg.planner;
    let index = wire::read_index(&index_path)?;
    let ratios = hairseg_core::planner::Disease::ALL.map(|d| index.ratios(d, section.epsilon));
    let plan_cfg = PlanConfig {
        num_jobs: a.jobs.unwrap_or(section.jobs),
        higher_only: section.higher_only && !a.any_direction,
        max_retries: a.max_retries.unwrap_or(section.max_retries),
        diseases: section.diseases.clone(),
        mask_dir: a.mask_dir.unwrap_or_else(|| section.mask_dir.clone()),
    };
    let mut rng = substream(seed, "plan-augment", 0);
    let outcome = plan_jobs(&index, &ratios, &plan_cfg, &mut rng)?;
    for s in &outcome.skipped {
        log::debug!("job {} from {} ({}) skipped: {:?}", s.job_index, s.source_id, s.disease, s.reason);
    }
    if !outcome.skipped.is_empty() {
        log::warn!("{} of {} jobs skipped", outcome.skipped.len(), plan_cfg.num_jobs);
    }
    let skips = a.skips.unwrap_or_else(|| default_skips(&a.out));
    io::atomic_write(&skips, &wire::jsonl(&outcome.skipped)?)?;
    io::atomic_write(&a.out, &wire::jsonl(&outcome.jobs)?)
}

fn blend_step(a: BlendArgs, cfg: PipelineConfig) -> Result<()> {
    let xt = io::read_tensor(&a.xt)?;
    let mask = io::read_mask(&a.mask, cfg.strict_masks)?;
    let weights: GuidanceWeights = match &a.weights {
        Some(p) => io::read_json(p)?,
        None => cfg.guidance,
    };
    weights.validate()?;
    let schedule = NoiseSchedule::new(vec![1.0, a.alpha_bar_prev, a.alpha_bar])
        .map_err(|e| Error::validation(format!("--alpha-bar/--alpha-bar-prev: {e}")))?;
    let denoiser: Box<dyn Denoiser> = match a.denoiser.as_str() {
        "zero" => Box::new(ZeroDenoiser),
        other => match other.strip_prefix("file:") {
            Some(path) => Box::new(FixedNoise(io::read_tensor(Path::new(path))?)),
            None => return Err(Error::validation(format!("unknown denoiser {other:?}; use zero or file:EPS.png"))),
        },
    };
    let preserve = match &a.source {
        Some(p) => Some(MaskPreservationLoss::l2_only(io::read_tensor(p)?, mask.clone())),
        None => None,
    };
    let terms = LossTerms {
        style: Some(&ZeroLoss),
        content: Some(&ZeroLoss),
        mask: Some(match &preserve {
            Some(p) => p,
            None => &ZeroLoss,
        }),
        semantic: Some(&ZeroLoss),
        range: Some(&ZeroLoss),
    };
    let variant = match a.variant {
        VariantArg::Verbatim => BlendVariant::Verbatim,
        VariantArg::Renoise => BlendVariant::Renoise,
    };
    let out = guided_reverse_step(&xt, denoiser.as_ref(), &terms, &weights, &mask, &schedule, 2, variant)?;
    io::atomic_write(&a.out, &io::encode_tensor_png(&out)?)
}

fn segment(a: SegmentArgs, cfg: PipelineConfig) -> Result<()> {
    let request = match (&a.input, &a.image) {
        (Some(req), _) => io::read_json::<SegmentRequest>(req)?.to_request().map_err(|e| e.at(req))?,
        (None, Some(image)) => {
            let prompts_path = need(a.prompts.as_ref(), "--prompts")?;
            let prompts: PromptFile = io::read_json(prompts_path)?;
            let img = io::read_rgb(image)?;
            PromptRequest {
                image: ImageRef::Path(image.to_string_lossy().into_owned()),
                width: img.width(),
                height: img.height(),
                prompts: prompts.prompt_set(),
            }
        }
        (None, None) => return Err(Error::usage("either --in or --image is required")),
    };
    let retry = RetryPolicy {
        attempts: cfg.segmenter.attempts,
        base_delay: Duration::from_millis(cfg.segmenter.backoff_ms),
    };
    let reply = match &a.mock_gt {
        Some(gt) => {
            let mock = MockBackend::new(&io::read_mask(gt, cfg.strict_masks)?);
            request_mask(&mock as &dyn SegmentBackend, &request, retry)?
        }
        None => {
            let endpoint = a
                .endpoint
                .or(cfg.segmenter.endpoint)
                .or_else(|| std::env::var(ENDPOINT_ENV).ok())
                .ok_or_else(|| Error::validation(format!("no endpoint: pass --endpoint or set {ENDPOINT_ENV}")))?;
            let timeout = Duration::from_millis(a.timeout_ms.unwrap_or(cfg.segmenter.timeout_ms));
            request_mask(&HttpBackend::new(&endpoint, timeout), &request, retry)?
        }
    };
    if a.input.is_some() {
        io::write_json(&a.out, &SegmentResponse::from_response(&reply))
    } else {
        io::write_mask(&a.out, &reply.mask)
    }
}

fn run_pipeline(a: PipelineArgs, mut cfg: PipelineConfig) -> Result<()> {
    let p = &mut cfg.paths;
    p.images = a.images.or(p.images.take());
    p.coarse = a.coarse.or(p.coarse.take());
    p.ground_truth = a.gt.or(p.ground_truth.take());
    p.out = a.out.or(p.out.take());
    cfg.seed = a.seed.or(cfg.seed);
    cfg.workers = a.workers.unwrap_or(cfg.workers);
    cfg.fusion.min_area = a.min_area.unwrap_or(cfg.fusion.min_area);
    if let Some(b) = a.backend {
        cfg.segmenter.backend = match b {
            BackendArg::Http => BackendKind::Http,
            BackendArg::Mock => BackendKind::Mock,
        };
    }
    cfg.segmenter.endpoint = a.endpoint.or(cfg.segmenter.endpoint.take());
    cfg.segmenter.timeout_ms = a.timeout_ms.unwrap_or(cfg.segmenter.timeout_ms);
    let report = pipeline::run_pipeline(&cfg)?;
    if let Some(d) = report.mean_dice {
        log::info!("{} items, mean dice {d:.4}", report.items.len());
    }
    Ok(())
}
