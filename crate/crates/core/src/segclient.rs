//! Boundary to external neural segmenters.
//!
//! Score maps from a pseudo-label-trained network are binarized into the
//! coarse mask; point-prompted masks come from any [`SegmentBackend`].
//! [`MockBackend`] answers prompts from a known ground truth and is what the
//! regression suites run against.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::SegError;
use crate::prompter::PromptSet;
use crate::raster::{label_components, BinaryMask, ComponentLabeling, Connectivity};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-pixel hair probability, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    scores: Vec<f64>,
}

impl ScoreMap {
    /// In strict mode any score outside `[0, 1]` (or NaN) is rejected.
    pub fn new(width: usize, height: usize, scores: Vec<f64>, strict: bool) -> Result<Self, SegError> {
        BinaryMask::new(width, height)?;
        if scores.len() != width * height {
            return Err(SegError::Mask(crate::error::MaskError::BufferLength {
                expected: width * height,
                actual: scores.len(),
            }));
        }
        if strict {
            if let Some((index, value)) = scores
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(SegError::ScoreOutOfRange {
                    index,
                    value: alloc::format!("{value}"),
                });
            }
        }
        Ok(Self {
            width,
            height,
            scores,
        })
    }

    /// 8-bit grey levels mapped to `[0, 1]`.
    pub fn from_u8(width: usize, height: usize, levels: &[u8]) -> Result<Self, SegError> {
        Self::new(
            width,
            height,
            levels.iter().map(|&v| f64::from(v) / 255.0).collect(),
            true,
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Hair wherever `score ≥ threshold`.
pub fn binarize(scores: &ScoreMap, threshold: f64) -> Result<BinaryMask, SegError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(SegError::InvalidThreshold(alloc::format!("{threshold}")));
    }
    let cells: Vec<u8> = scores.scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    Ok(BinaryMask::from_cells(scores.width, scores.height, &cells)?)
}

/// Where the backend finds the image to segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageRef {
    Path(String),
    /// Encoded image bytes (PNG on the wire).
    Inline(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    pub image: ImageRef,
    pub width: usize,
    pub height: usize,
    pub prompts: PromptSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptResponse {
    pub mask: BinaryMask,
    pub model: String,
    pub latency_ms: Option<u64>,
}

/// A point-prompted segmenter returning exactly one mask per request.
pub trait SegmentBackend {
    fn segment(&self, request: &PromptRequest) -> Result<PromptResponse, SegError>;
}

impl<T: SegmentBackend + ?Sized> SegmentBackend for &T {
    fn segment(&self, request: &PromptRequest) -> Result<PromptResponse, SegError> {
        (**self).segment(request)
    }
}

/// Rejects replies whose mask does not match the request's image size.
pub fn validate_response(request: &PromptRequest, response: &PromptResponse) -> Result<(), SegError> {
    if response.mask.width() != request.width || response.mask.height() != request.height {
        return Err(SegError::BadResponse(alloc::format!(
            "mask is {}x{} but image is {}x{}",
            response.mask.width(),
            response.mask.height(),
            request.width,
            request.height
        )));
    }
    Ok(())
}

/// Answers with the union of ground-truth components hit by a positive
/// prompt, minus any component hit by a negative prompt. Prompts are
/// snapped to the nearest pixel; prompts outside the image are ignored.
#[derive(Debug, Clone)]
pub struct MockBackend {
    labeling: ComponentLabeling,
}

impl MockBackend {
    pub fn new(ground_truth: &BinaryMask) -> Self {
        Self::with_connectivity(ground_truth, Connectivity::Eight)
    }

    pub fn with_connectivity(ground_truth: &BinaryMask, connectivity: Connectivity) -> Self {
        Self {
            labeling: label_components(ground_truth, connectivity),
        }
    }

    pub fn answer(&self, prompts: &PromptSet) -> BinaryMask {
        let (w, h) = (self.labeling.width(), self.labeling.height());
        let k = self.labeling.count();
        let mut selected = alloc::vec![false; k + 1];
        let mut vetoed = alloc::vec![false; k + 1];
        for p in &prompts.positives {
            if let Some(px) = p.to_pixel(w, h) {
                selected[self.labeling.label(px.row, px.col) as usize] = true;
            }
        }
        for n in &prompts.negatives {
            if n.row < h && n.col < w {
                vetoed[self.labeling.label(n.row, n.col) as usize] = true;
            }
        }
        self.labeling
            .select(|l| selected[l as usize] && !vetoed[l as usize])
    }
}

impl SegmentBackend for MockBackend {
    fn segment(&self, request: &PromptRequest) -> Result<PromptResponse, SegError> {
        if request.width != self.labeling.width() || request.height != self.labeling.height() {
            return Err(SegError::Backend(alloc::format!(
                "mock ground truth is {}x{}, request is {}x{}",
                self.labeling.width(),
                self.labeling.height(),
                request.width,
                request.height
            )));
        }
        Ok(PromptResponse {
            mask: self.answer(&request.prompts),
            model: String::from("mock"),
            latency_ms: Some(0),
        })
    }
}
