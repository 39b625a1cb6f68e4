//! On-disk and on-the-wire formats.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use hairseg_core::fusion::MaskPairEval;
use hairseg_core::planner::{LabelIndex, LabelRecord, SkippedJob, TranslationJob};
use hairseg_core::prompter::{Pixel, Point, PromptSet};
use hairseg_core::pseudogen::{Circle, CurveSpec, GenConfig, NoiseSpec};
use hairseg_core::segclient::{ImageRef, PromptRequest, PromptResponse};
use hairseg_core::SegError;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Output of the `prompts` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptFile {
    pub positives: Vec<Point>,
    pub negatives: Vec<Pixel>,
    /// Box side length used to find the positives.
    pub n: usize,
}

impl PromptFile {
    pub fn new(prompts: PromptSet, n: usize) -> Self {
        Self {
            positives: prompts.positives,
            negatives: prompts.negatives,
            n,
        }
    }

    pub fn prompt_set(&self) -> PromptSet {
        PromptSet {
            positives: self.positives.clone(),
            negatives: self.negatives.clone(),
        }
    }
}

/// Body of `POST /segment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image_png_b64: String,
    pub positives: Vec<Point>,
    pub negatives: Vec<Pixel>,
}

/// Reply to `POST /segment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask_png_b64: String,
    pub model: String,
}

impl SegmentRequest {
    /// Path images are read and re-encoded as PNG unless they already are PNG.
    pub fn from_request(req: &PromptRequest) -> Result<Self> {
        let bytes = match &req.image {
            ImageRef::Inline(bytes) => bytes.clone(),
            ImageRef::Path(p) => io::read_input(Path::new(p))?,
        };
        let png = if bytes.starts_with(b"\x89PNG") {
            bytes
        } else {
            io::encode_rgb_png(&io::decode_rgb(&bytes)?)
        };
        Ok(Self {
            image_png_b64: B64.encode(png),
            positives: req.prompts.positives.clone(),
            negatives: req.prompts.negatives.clone(),
        })
    }

    pub fn to_request(&self) -> Result<PromptRequest> {
        let png = B64
            .decode(&self.image_png_b64)
            .map_err(|e| Error::validation(format!("image_png_b64: {e}")))?;
        let img = io::decode_rgb(&png)?;
        Ok(PromptRequest {
            width: img.width(),
            height: img.height(),
            image: ImageRef::Inline(png),
            prompts: PromptSet {
                positives: self.positives.clone(),
                negatives: self.negatives.clone(),
            },
        })
    }
}

impl SegmentResponse {
    pub fn from_response(resp: &PromptResponse) -> Self {
        Self {
            mask_png_b64: B64.encode(io::encode_mask_png(&resp.mask)),
            model: resp.model.clone(),
        }
    }

    pub fn to_response(&self, latency_ms: Option<u64>) -> Result<PromptResponse, SegError> {
        let png = B64
            .decode(&self.mask_png_b64)
            .map_err(|e| SegError::BadResponse(format!("mask_png_b64: {e}")))?;
        let mask = io::decode_mask(&png, false).map_err(|e| SegError::BadResponse(e.message))?;
        Ok(PromptResponse {
            mask,
            model: self.model.clone(),
            latency_ms,
        })
    }
}

/// One generated pair and everything needed to redraw it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub image: String,
    pub mask: String,
    pub seed: u64,
    pub patch_id: String,
    pub curves: Vec<CurveSpec>,
    pub noise: NoiseSpec,
    pub circles: Vec<Circle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenManifest {
    pub toolkit_version: String,
    pub seed: u64,
    pub config: GenConfig,
    pub patches: Vec<String>,
    pub pairs: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexRow {
    id: String,
    dandruff: u8,
    sebum: u8,
    erythema: u8,
}

/// `id,dandruff,sebum,erythema` with severities 0 to 3.
pub fn parse_index(bytes: &[u8]) -> Result<LabelIndex> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "dandruff", "sebum", "erythema"] {
        return Err(Error::validation(format!(
            "index header must be id,dandruff,sebum,erythema, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for row in reader.deserialize::<IndexRow>() {
        let row = row?;
        records.push(LabelRecord {
            id: row.id,
            severities: [row.dandruff, row.sebum, row.erythema],
        });
    }
    Ok(LabelIndex::new(records)?)
}

pub fn read_index(path: &Path) -> Result<LabelIndex> {
    parse_index(&io::read_input(path)?).map_err(|e| e.at(path))
}

pub const METRICS_HEADER: [&str; 9] = [
    "id",
    "pixel_f1",
    "jaccard",
    "dice",
    "tp",
    "fp",
    "fn",
    "tn",
    "pixel_f1_macro",
];

fn score(v: f64) -> String {
    format!("{v:.6}")
}

/// Per-image rows in the given order, then a `macro` row of means.
pub fn metrics_csv(rows: &[(String, MaskPairEval)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    let mut sums = [0.0f64; 8];
    for (id, e) in rows {
        let values = [
            e.pixel_f1,
            e.jaccard,
            e.dice,
            e.tp as f64,
            e.fp as f64,
            e.fn_ as f64,
            e.tn as f64,
            e.pixel_f1_macro,
        ];
        for (s, v) in sums.iter_mut().zip(values) {
            *s += v;
        }
        w.write_record([
            id.clone(),
            score(e.pixel_f1),
            score(e.jaccard),
            score(e.dice),
            e.tp.to_string(),
            e.fp.to_string(),
            e.fn_.to_string(),
            e.tn.to_string(),
            score(e.pixel_f1_macro),
        ])?;
    }
    let n = rows.len().max(1) as f64;
    let mut last = vec!["macro".to_string()];
    last.extend(sums.iter().map(|s| score(s / n)));
    w.write_record(&last)?;
    w.into_inner().map_err(|e| Error::runtime(e.to_string()))
}

/// The `macro` row of a metrics file as `(pixel_f1, jaccard, dice, pixel_f1_macro)`.
pub fn read_macro_row(bytes: &[u8]) -> Result<(f64, f64, f64, f64)> {
    let mut reader = csv::Reader::from_reader(bytes);
    for rec in reader.records() {
        let rec = rec?;
        if rec.get(0) == Some("macro") {
            let f = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::validation("malformed macro row"))
            };
            return Ok((f(1)?, f(2)?, f(3)?, f(8)?));
        }
    }
    Err(Error::validation("metrics file has no macro row"))
}

pub fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Error::runtime(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn parse_plan(bytes: &[u8]) -> Result<Vec<TranslationJob>> {
    parse_jsonl(bytes)
}

pub fn parse_skips(bytes: &[u8]) -> Result<Vec<SkippedJob>> {
    parse_jsonl(bytes)
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::validation(e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
