//! Batch drivers behind the `gen-pseudo`, `eval` and `pipeline` commands.
//!
//! Per-item work runs on a bounded thread pool. Results are gathered in
//! item-id order, and every random draw comes from a stream keyed by the
//! root seed and the item, so outputs do not depend on scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use hairseg_core::fusion::{combine, evaluate, MaskPairEval};
use hairseg_core::prompter::build_prompts;
use hairseg_core::pseudogen::{gen_pair, GenConfig, Patch};
use hairseg_core::segclient::{ImageRef, MockBackend, PromptRequest, SegmentBackend};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{request_mask, Bounded, HttpBackend, RetryPolicy, ENDPOINT_ENV};
use crate::config::{connectivity, BackendKind, PipelineConfig};
use crate::error::{Error, Result};
use crate::io::{self, Role};
use crate::wire::{self, GenManifest, ManifestEntry, PromptFile};

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::runtime(format!("cannot start worker pool: {e}")))
}

pub fn image_name(index: usize) -> String {
    format!("img_{index:05}.png")
}

pub fn mask_name(index: usize) -> String {
    format!("msk_{index:05}.png")
}

/// Loads every image in `dir` as a patch, in id order.
pub fn load_patches(dir: &Path) -> Result<Vec<Patch>> {
    let listed = io::list_images(dir, Role::Image)?;
    if listed.is_empty() {
        return Err(Error::validation("no patch images found").at(dir));
    }
    listed
        .into_iter()
        .map(|(id, path)| Ok(Patch { id, image: io::read_rgb(&path)? }))
        .collect()
}

/// Writes `config.count` pairs and `manifest.json` into `out`.
pub fn gen_pseudo(patches: &[Patch], config: &GenConfig, seed: u64, out: &Path, workers: usize) -> Result<GenManifest> {
    config.validate()?;
    let entries: Vec<Result<ManifestEntry>> = pool(workers)?.install(|| {
        (0..config.count)
            .into_par_iter()
            .map(|index| {
                let pair = gen_pair(patches, config, seed, index)?;
                io::atomic_write(&out.join(image_name(index)), &io::encode_rgb_png(&pair.image))?;
                io::write_mask(&out.join(mask_name(index)), &pair.mask)?;
                Ok(ManifestEntry {
                    index,
                    image: image_name(index),
                    mask: mask_name(index),
                    seed: pair.seed,
                    patch_id: pair.provenance.patch_id,
                    curves: pair.provenance.curves,
                    noise: pair.provenance.noise,
                    circles: pair.provenance.circles,
                })
            })
            .collect()
    });
    let manifest = GenManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config: config.clone(),
        patches: patches.iter().map(|p| p.id.clone()).collect(),
        pairs: entries.into_iter().collect::<Result<_>>()?,
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Scores every ground-truth mask against the prediction with the same id.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, strict: bool, workers: usize) -> Result<Vec<(String, MaskPairEval)>> {
    let preds = io::list_images(pred_dir, Role::Mask)?;
    let gts = io::list_images(gt_dir, Role::Mask)?;
    if gts.is_empty() {
        return Err(Error::validation("no ground-truth masks found").at(gt_dir));
    }
    let pairs: Vec<(String, PathBuf, PathBuf)> = gts
        .into_iter()
        .map(|(id, gt)| match preds.get(&id) {
            Some(p) => Ok((id, p.clone(), gt)),
            None => Err(Error::validation(format!("no prediction for item {id}")).at(pred_dir)),
        })
        .collect::<Result<_>>()?;
    pool(workers)?.install(|| {
        pairs
            .par_iter()
            .map(|(id, p, g)| {
                let pred = io::read_mask(p, strict)?;
                let gt = io::read_mask(g, strict)?;
                let e = evaluate(&pred, &gt).map_err(|e| Error::from(e).at(p))?;
                Ok((id.clone(), e))
            })
            .collect()
    })
}

/// Per-item facts recorded in `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub id: String,
    pub positives: usize,
    pub negatives: usize,
    pub model: String,
    pub coarse_pixels: usize,
    pub prompted_pixels: usize,
    pub final_pixels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub toolkit_version: String,
    pub seed: u64,
    pub items: Vec<ItemSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_dice: Option<f64>,
}

enum Backend {
    Http(Bounded<HttpBackend>),
    Mock,
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::validation(format!("paths.{key} is required")))
}

/// Coarse mask → prompts → prompted mask → ensemble, for every item in
/// `paths.coarse`. Writes `prompts/`, `prompted/`, `masks/`, `summary.json`
/// and, with ground truth, `metrics.csv` under `paths.out`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let seed = cfg.require_seed(None)?;
    let coarse_dir = required(&cfg.paths.coarse, "coarse")?;
    let out = required(&cfg.paths.out, "out")?;
    let conn = connectivity(cfg.fusion.connectivity)?;
    let coarse = io::list_images(coarse_dir, Role::Mask)?;
    if coarse.is_empty() {
        return Err(Error::validation("no coarse masks found").at(coarse_dir));
    }
    let gt = match &cfg.paths.ground_truth {
        Some(d) => Some(io::list_images(d, Role::Mask)?),
        None => None,
    };
    let images = match &cfg.paths.images {
        Some(d) => Some(io::list_images(d, Role::Image)?),
        None => None,
    };
    let backend = match cfg.segmenter.backend {
        BackendKind::Mock => {
            if gt.is_none() {
                return Err(Error::validation("the mock backend needs paths.ground_truth"));
            }
            Backend::Mock
        }
        BackendKind::Http => {
            if images.is_none() {
                return Err(Error::validation("the http backend needs paths.images"));
            }
            let endpoint = cfg
                .segmenter
                .endpoint
                .clone()
                .or_else(|| std::env::var(ENDPOINT_ENV).ok())
                .ok_or_else(|| Error::validation(format!("no segmenter endpoint: set segmenter.endpoint or {ENDPOINT_ENV}")))?;
            let http = HttpBackend::new(&endpoint, Duration::from_millis(cfg.segmenter.timeout_ms));
            Backend::Http(Bounded::new(http, cfg.segmenter.max_in_flight))
        }
    };
    for id in coarse.keys() {
        let lookup = |m: &Option<BTreeMap<String, PathBuf>>, what: &str| -> Result<()> {
            match m {
                Some(m) if !m.contains_key(id) => Err(Error::validation(format!("no {what} for item {id}"))),
                _ => Ok(()),
            }
        };
        lookup(&gt, "ground-truth mask")?;
        if matches!(backend, Backend::Http(_)) {
            lookup(&images, "image")?;
        }
    }
    let retry = RetryPolicy {
        attempts: cfg.segmenter.attempts,
        base_delay: Duration::from_millis(cfg.segmenter.backoff_ms),
    };

    let process = |id: &String, coarse_path: &PathBuf| -> Result<(ItemSummary, Option<MaskPairEval>)> {
        let coarse_mask = io::read_mask(coarse_path, cfg.strict_masks)?;
        let prompt_cfg = cfg.prompter.for_item(seed, id);
        let prompts = build_prompts(&coarse_mask, &prompt_cfg).map_err(|e| Error::from(e).at(coarse_path))?;
        io::write_json(
            &out.join("prompts").join(format!("{id}.json")),
            &PromptFile::new(prompts.clone(), prompt_cfg.box_size),
        )?;
        let gt_mask = match &gt {
            Some(m) => Some(io::read_mask(&m[id], cfg.strict_masks)?),
            None => None,
        };
        let request = PromptRequest {
            image: match &images {
                Some(m) if m.contains_key(id) => ImageRef::Path(m[id].to_string_lossy().into_owned()),
                _ => ImageRef::Inline(Vec::new()),
            },
            width: coarse_mask.width(),
            height: coarse_mask.height(),
            prompts,
        };
        let reply = match &backend {
            Backend::Http(b) => request_mask(b, &request, retry),
            Backend::Mock => {
                let gt_mask = gt_mask.as_ref().expect("checked above");
                let mock = MockBackend::with_connectivity(gt_mask, conn);
                request_mask(&mock as &dyn SegmentBackend, &request, retry)
            }
        }
        .map_err(|e| Error::from(e).at(coarse_path))?;
        io::write_mask(&out.join("prompted").join(format!("{id}.png")), &reply.mask)?;
        let fused = combine(&coarse_mask, &reply.mask, cfg.fusion.min_area, conn)?;
        io::write_mask(&out.join("masks").join(format!("{id}.png")), &fused)?;
        let eval = match &gt_mask {
            Some(g) => Some(evaluate(&fused, g).map_err(|e| Error::from(e).at(coarse_path))?),
            None => None,
        };
        Ok((
            ItemSummary {
                id: id.clone(),
                positives: request.prompts.positives.len(),
                negatives: request.prompts.negatives.len(),
                model: reply.model,
                coarse_pixels: coarse_mask.count_ones(),
                prompted_pixels: reply.mask.count_ones(),
                final_pixels: fused.count_ones(),
                dice: eval.map(|e| e.dice),
            },
            eval,
        ))
    };

    let items: Vec<(String, PathBuf)> = coarse.into_iter().collect();
    let results: Vec<Result<(ItemSummary, Option<MaskPairEval>)>> =
        pool(cfg.workers)?.install(|| items.par_iter().map(|(id, p)| process(id, p)).collect());
    let mut summaries = Vec::with_capacity(results.len());
    let mut evals = Vec::new();
    for r in results {
        let (s, e) = r?;
        if let Some(e) = e {
            evals.push((s.id.clone(), e));
        }
        summaries.push(s);
    }
    let mean_dice = if evals.is_empty() {
        None
    } else {
        io::atomic_write(&out.join("metrics.csv"), &wire::metrics_csv(&evals)?)?;
        Some(evals.iter().map(|(_, e)| e.dice).sum::<f64>() / evals.len() as f64)
    };
    let report = PipelineReport {
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        items: summaries,
        mean_dice,
    };
    io::write_json(&out.join("summary.json"), &report)?;
    Ok(report)
}
