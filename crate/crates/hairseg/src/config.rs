//! The `--config FILE.json` document.
//!
//! Every field is optional. Command-line flags override the file, and the
//! file overrides the built-in defaults. Unknown keys are rejected. The
//! document's JSON Schema ships as `schema/pipeline-config.schema.json`.

use std::path::{Path, PathBuf};

use hairseg_core::guidance::GuidanceWeights;
use hairseg_core::planner::{Disease, DEFAULT_EPSILON, DEFAULT_MAX_RETRIES};
use hairseg_core::prompter::PromptConfig;
use hairseg_core::pseudogen::GenConfig;
use hairseg_core::rng::derive_seed;
use hairseg_core::Connectivity;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA: &str = include_str!("../schema/pipeline-config.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// When present, must equal [`SCHEMA_VERSION`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    /// Root seed. Every randomized step needs one.
    pub seed: Option<u64>,
    /// Worker threads for per-image work.
    pub workers: usize,
    /// Reject mask files holding values other than 0 and 255.
    pub strict_masks: bool,
    pub paths: Paths,
    pub prompter: PrompterSection,
    pub fusion: FusionSection,
    pub planner: PlannerSection,
    pub segmenter: SegmenterSection,
    pub generator: GenConfig,
    pub guidance: GuidanceWeights,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: None,
            seed: None,
            workers: 1,
            strict_masks: false,
            paths: Paths::default(),
            prompter: PrompterSection::default(),
            fusion: FusionSection::default(),
            planner: PlannerSection::default(),
            segmenter: SegmenterSection::default(),
            generator: GenConfig::default(),
            guidance: GuidanceWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Scalp images, only needed by the HTTP backend.
    pub images: Option<PathBuf>,
    /// Coarse masks `M̂`, one per item.
    pub coarse: Option<PathBuf>,
    /// Ground-truth masks: scored against, and answered from by the mock backend.
    pub ground_truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Hairless patches for `gen-pseudo`.
    pub patches: Option<PathBuf>,
    /// Label index for `plan-augment`.
    pub index: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrompterSection {
    pub n: usize,
    pub iou: f64,
    pub negatives: usize,
    pub max_positives: Option<usize>,
}

impl Default for PrompterSection {
    fn default() -> Self {
        let d = PromptConfig::default();
        Self {
            n: d.box_size,
            iou: d.iou_threshold,
            negatives: d.num_negatives,
            max_positives: d.max_positives,
        }
    }
}

impl PrompterSection {
    /// Prompt settings for one item; its negatives come from a stream keyed
    /// by the item id.
    pub fn for_item(&self, root_seed: u64, id: &str) -> PromptConfig {
        PromptConfig {
            box_size: self.n,
            iou_threshold: self.iou,
            num_negatives: self.negatives,
            max_positives: self.max_positives,
            seed: derive_seed(root_seed, "prompts", id.as_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub min_area: usize,
    /// 4 or 8.
    pub connectivity: u8,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            min_area: 30,
            connectivity: 8,
        }
    }
}

pub fn connectivity(count: u8) -> Result<Connectivity> {
    Connectivity::from_count(count)
        .ok_or_else(|| Error::validation(format!("connectivity must be 4 or 8, got {count}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub jobs: usize,
    pub higher_only: bool,
    pub max_retries: usize,
    pub epsilon: f64,
    pub diseases: Vec<Disease>,
    pub mask_dir: String,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            jobs: 0,
            higher_only: true,
            max_retries: DEFAULT_MAX_RETRIES,
            epsilon: DEFAULT_EPSILON,
            diseases: Disease::ALL.to_vec(),
            mask_dir: "masks".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    /// Answers from the ground-truth masks; for testing.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterSection {
    pub backend: BackendKind,
    /// Base URL; falls back to the `HAIRSEG_SEGMENT_URL` environment variable.
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub attempts: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for SegmenterSection {
    fn default() -> Self {
        Self {
            backend: BackendKind::Http,
            endpoint: None,
            timeout_ms: crate::client::DEFAULT_TIMEOUT_MS,
            attempts: 3,
            backoff_ms: 200,
            max_in_flight: 4,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::from_json(&io::read_input(p)?).map_err(|e| e.at(p)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.schema_version {
            if v != SCHEMA_VERSION {
                return Err(Error::validation(format!(
                    "config schema version {v} is not supported (expected {SCHEMA_VERSION})"
                )));
            }
        }
        if self.workers == 0 {
            return Err(Error::validation("workers must be at least 1"));
        }
        if self.prompter.n < 2 {
            return Err(Error::validation("prompter.n must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.prompter.iou) {
            return Err(Error::validation("prompter.iou must lie in [0, 1]"));
        }
        connectivity(self.fusion.connectivity)?;
        if !(self.planner.epsilon > 0.0 && self.planner.epsilon.is_finite()) {
            return Err(Error::validation("planner.epsilon must be positive"));
        }
        if self.segmenter.attempts == 0 || self.segmenter.max_in_flight == 0 {
            return Err(Error::validation("segmenter.attempts and max_in_flight must be at least 1"));
        }
        self.generator.validate()?;
        self.guidance
            .validate()
            .map_err(|e| Error::validation(format!("guidance: {e}")))?;
        Ok(())
    }

    pub fn require_seed(&self, flag: Option<u64>) -> Result<u64> {
        flag.or(self.seed)
            .ok_or_else(|| Error::validation("a seed is required: pass --seed or set \"seed\" in the config"))
    }
}
