//! Automatic point prompts from a coarse hair mask.
//!
//! The mask is reduced to its morphological skeleton, an `n x n` box is
//! placed on every skeleton pixel, overlapping boxes are thinned out with
//! greedy NMS and each surviving box contributes the centroid of the hair
//! pixels it covers as a positive prompt. Negatives are drawn from the
//! background of the same mask.
//!
//! Centroids follow the `(i, j) = (row, col)` indexing of the mask: the
//! first coordinate of a mean point is the mean row.

use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;

use crate::error::PromptError;
use crate::raster::{dilate, erode, BinaryMask, StructuringElement};
use crate::rng::StreamRng;

/// The skeleton of a mask together with the layer extracted at each
/// erosion level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonRecord {
    skeleton: BinaryMask,
    layers: Vec<BinaryMask>,
}

impl SkeletonRecord {
    pub fn skeleton(&self) -> &BinaryMask {
        &self.skeleton
    }

    /// `layers()[t]` holds the pixels contributed after `t` erosions.
    pub fn layers(&self) -> &[BinaryMask] {
        &self.layers
    }

    pub fn iterations(&self) -> usize {
        self.layers.len()
    }

    /// Rebuilds the source mask as the union of each layer dilated once per
    /// erosion level it came from.
    pub fn reconstruct(&self, se: &StructuringElement) -> BinaryMask {
        let mut out = BinaryMask::new(self.skeleton.width(), self.skeleton.height())
            .expect("skeleton has positive dimensions");
        for (t, layer) in self.layers.iter().enumerate() {
            let mut grown = layer.clone();
            for _ in 0..t {
                grown = dilate(&grown, se);
            }
            out = out.or(&grown).expect("layers share the skeleton shape");
        }
        out
    }
}

/// Morphological skeleton: at each level the copy loses whatever its
/// opening cannot recover, and the copy is then eroded once more.
///
/// Requires an element whose erosion strictly shrinks every non-empty mask
/// under zero padding (true for the cross and any element with a non-zero
/// offset), otherwise the loop would not terminate.
pub fn skeletonize(mask: &BinaryMask, se: &StructuringElement) -> SkeletonRecord {
    let mut skeleton = BinaryMask::new(mask.width(), mask.height()).expect("valid mask");
    let mut layers = Vec::new();
    let mut copy = mask.clone();
    while !copy.is_empty() {
        let eroded = erode(&copy, se);
        let opened = dilate(&eroded, se);
        let layer = copy.minus(&opened).expect("same shape");
        skeleton = skeleton.or(&layer).expect("same shape");
        layers.push(layer);
        copy = eroded;
    }
    SkeletonRecord { skeleton, layers }
}

/// Axis-aligned box over pixel columns `x_min..x_max` and rows
/// `y_min..y_max` (maxima exclusive).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
    /// Number of hair pixels inside the box.
    pub score: f64,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, row: f64, col: f64) -> bool {
        row >= self.y_min as f64
            && row <= (self.y_max - 1) as f64
            && col >= self.x_min as f64
            && col <= (self.x_max - 1) as f64
    }

    fn intersection(&self, other: &Self) -> usize {
        let x0 = self.x_min.max(other.x_min);
        let x1 = self.x_max.min(other.x_max);
        let y0 = self.y_min.max(other.y_min);
        let y1 = self.y_max.min(other.y_max);
        if x0 >= x1 || y0 >= y1 {
            0
        } else {
            (x1 - x0) * (y1 - y0)
        }
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Descending score, then row-major position of the origin, then extent.
    fn selection_order(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.y_min.cmp(&other.y_min))
            .then(self.x_min.cmp(&other.x_min))
            .then(self.y_max.cmp(&other.y_max))
            .then(self.x_max.cmp(&other.x_max))
    }
}

/// Summed-area table for O(1) box counts.
struct Integral {
    width: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(mask: &BinaryMask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let stride = w + 1;
        let mut sums = alloc::vec![0u32; stride * (h + 1)];
        for r in 0..h {
            let mut row_sum = 0u32;
            for c in 0..w {
                row_sum += u32::from(mask.get(r, c));
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row_sum;
            }
        }
        Self { width: stride, sums }
    }

    fn count(&self, y0: usize, x0: usize, y1: usize, x1: usize) -> u32 {
        let s = |r: usize, c: usize| self.sums[r * self.width + c];
        s(y1, x1) + s(y0, x0) - s(y0, x1) - s(y1, x0)
    }
}

fn place(center: usize, n: usize, limit: usize) -> (usize, usize) {
    if n >= limit {
        return (0, limit);
    }
    let start = center.saturating_sub(n / 2).min(limit - n);
    (start, start + n)
}

/// One `n x n` box per skeleton pixel, shifted inside the image when it
/// would cross a border (side length kept whenever the image is at least
/// `n` wide/high). Boxes are scored by the hair pixels of `mask` they cover.
pub fn boxes_from_skeleton(
    mask: &BinaryMask,
    skeleton: &SkeletonRecord,
    n: usize,
) -> Result<Vec<BoundingBox>, PromptError> {
    if n < 2 {
        return Err(PromptError::BoxTooSmall(n));
    }
    let integral = Integral::new(mask);
    let boxes = skeleton
        .skeleton()
        .ones()
        .map(|(r, c)| {
            let (x_min, x_max) = place(c, n, mask.width());
            let (y_min, y_max) = place(r, n, mask.height());
            BoundingBox {
                x_min,
                y_min,
                x_max,
                y_max,
                score: f64::from(integral.count(y_min, x_min, y_max, x_max)),
            }
        })
        .collect();
    Ok(boxes)
}

/// Greedy non-maximum suppression. Survivors are returned in selection
/// order and no two of them overlap with IoU above `iou_threshold`.
pub fn nms(boxes: &[BoundingBox], iou_threshold: f64) -> Result<Vec<BoundingBox>, PromptError> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(PromptError::InvalidIouThreshold(iou_threshold));
    }
    let mut order: Vec<&BoundingBox> = boxes.iter().collect();
    order.sort_by(|a, b| a.selection_order(b));

    let mut kept: Vec<BoundingBox> = Vec::new();
    for candidate in order {
        if kept.iter().all(|k| k.iou(candidate) <= iou_threshold) {
            kept.push(*candidate);
        }
    }
    Ok(kept)
}

/// A real-valued prompt location.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point {
    pub row: f64,
    pub col: f64,
}

impl Point {
    /// Nearest pixel, or `None` outside a `width x height` grid.
    pub fn to_pixel(self, width: usize, height: usize) -> Option<Pixel> {
        let r = libm::round(self.row);
        let c = libm::round(self.col);
        if r < 0.0 || c < 0.0 || r >= height as f64 || c >= width as f64 {
            return None;
        }
        Some(Pixel {
            row: r as usize,
            col: c as usize,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl From<Pixel> for Point {
    fn from(p: Pixel) -> Self {
        Self {
            row: p.row as f64,
            col: p.col as f64,
        }
    }
}

/// Centroid of the set pixels of `mask` inside `bbox`.
pub fn mean_point(mask: &BinaryMask, bbox: &BoundingBox) -> Result<Point, PromptError> {
    let mut count = 0u64;
    let mut row_sum = 0u64;
    let mut col_sum = 0u64;
    for r in bbox.y_min..bbox.y_max.min(mask.height()) {
        for c in bbox.x_min..bbox.x_max.min(mask.width()) {
            if mask.get(r, c) {
                count += 1;
                row_sum += r as u64;
                col_sum += c as u64;
            }
        }
    }
    if count == 0 {
        return Err(PromptError::EmptyBox);
    }
    Ok(Point {
        row: row_sum as f64 / count as f64,
        col: col_sum as f64 / count as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PromptConfig {
    /// Side length `n` of the boxes placed on skeleton pixels.
    pub box_size: usize,
    pub iou_threshold: f64,
    pub num_negatives: usize,
    /// Keep at most this many positives (highest-scoring boxes first).
    pub max_positives: Option<usize>,
    pub seed: u64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            box_size: 10,
            iou_threshold: 0.3,
            num_negatives: 10,
            max_positives: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PromptSet {
    pub positives: Vec<Point>,
    pub negatives: Vec<Pixel>,
}

/// A surviving box and the positive prompt taken from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivePrompt {
    pub bbox: BoundingBox,
    pub point: Point,
}

/// Skeleton, boxes, NMS and centroids. Boxes without hair pixels are dropped.
pub fn positive_prompts(
    coarse: &BinaryMask,
    box_size: usize,
    iou_threshold: f64,
    max_positives: Option<usize>,
) -> Result<Vec<PositivePrompt>, PromptError> {
    if box_size < 2 {
        return Err(PromptError::BoxTooSmall(box_size));
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(PromptError::InvalidIouThreshold(iou_threshold));
    }
    let record = skeletonize(coarse, &StructuringElement::cross());
    let boxes = boxes_from_skeleton(coarse, &record, box_size)?;
    let kept = nms(&boxes, iou_threshold)?;
    let limit = max_positives.unwrap_or(usize::MAX);
    Ok(kept
        .into_iter()
        .filter_map(|bbox| mean_point(coarse, &bbox).ok().map(|point| PositivePrompt { bbox, point }))
        .take(limit)
        .collect())
}

/// `count` distinct background pixels, uniformly without replacement.
pub fn sample_negatives(
    coarse: &BinaryMask,
    count: usize,
    rng: &mut StreamRng,
) -> Result<Vec<Pixel>, PromptError> {
    let width = coarse.width();
    let background: Vec<usize> = coarse
        .cells()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == 0)
        .map(|(i, _)| i)
        .collect();
    if count > background.len() {
        return Err(PromptError::InsufficientBackground {
            requested: count,
            available: background.len(),
        });
    }
    Ok(index::sample(rng, background.len(), count)
        .into_iter()
        .map(|k| {
            let i = background[k];
            Pixel {
                row: i / width,
                col: i % width,
            }
        })
        .collect())
}

pub fn build_prompts(coarse: &BinaryMask, config: &PromptConfig) -> Result<PromptSet, PromptError> {
    let positives = positive_prompts(
        coarse,
        config.box_size,
        config.iou_threshold,
        config.max_positives,
    )?
    .into_iter()
    .map(|p| p.point)
    .collect();
    let mut rng = StreamRng::seed_from_u64(config.seed);
    let negatives = sample_negatives(coarse, config.num_negatives, &mut rng)?;
    Ok(PromptSet {
        positives,
        negatives,
    })
}
