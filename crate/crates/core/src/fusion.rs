//! Mask ensembling, overlap metrics and simple hair statistics.

use crate::error::MaskError;
use crate::prompter::skeletonize;
use crate::raster::{label_components, remove_small_components, BinaryMask, Connectivity, StructuringElement};

/// `M = clean(M̂ ∧ M_AP)`: the pixel-wise AND of the coarse and prompted
/// masks with components smaller than `min_area` removed.
pub fn combine(
    coarse: &BinaryMask,
    prompted: &BinaryMask,
    min_area: usize,
    connectivity: Connectivity,
) -> Result<BinaryMask, MaskError> {
    let both = coarse.and(prompted)?;
    Ok(remove_small_components(&both, min_area, connectivity))
}

/// Pixel confusion counts for the hair class plus the derived scores.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaskPairEval {
    /// F1 of the hair class.
    pub pixel_f1: f64,
    /// Mean of the hair-class and background-class F1.
    pub pixel_f1_macro: f64,
    pub jaccard: f64,
    pub dice: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// `2a / (2a + b)` with the empty-vs-empty case scored as a perfect match.
fn f1(hits: u64, misses: u64) -> f64 {
    let denom = 2 * hits + misses;
    if denom == 0 {
        1.0
    } else {
        (2 * hits) as f64 / denom as f64
    }
}

/// Scores `pred` against `gt`. When neither mask has a hair pixel every
/// metric is 1.
pub fn evaluate(pred: &BinaryMask, gt: &BinaryMask) -> Result<MaskPairEval, MaskError> {
    if !pred.same_shape(gt) {
        return Err(MaskError::DimensionMismatch {
            left: (pred.width(), pred.height()),
            right: (gt.width(), gt.height()),
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in pred.cells().iter().zip(gt.cells()) {
        match (p != 0, g != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let union = tp + fp + fn_;
    let jaccard = if union == 0 { 1.0 } else { tp as f64 / union as f64 };
    let dice = f1(tp, fp + fn_);
    let background_f1 = f1(tn, fp + fn_);
    Ok(MaskPairEval {
        pixel_f1: dice,
        pixel_f1_macro: 0.5 * (dice + background_f1),
        jaccard,
        dice,
        tp,
        fp,
        fn_,
        tn,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HairStats {
    /// 8-connected components of the skeleton.
    pub strand_count: usize,
    /// Hair area divided by skeleton length, in pixels.
    pub mean_thickness: f64,
    pub total_hair_area: usize,
    pub skeleton_length: usize,
}

pub fn hair_stats(mask: &BinaryMask) -> HairStats {
    let record = skeletonize(mask, &StructuringElement::cross());
    let skeleton_length = record.skeleton().count_ones();
    let total_hair_area = mask.count_ones();
    if skeleton_length == 0 {
        return HairStats::default();
    }
    HairStats {
        strand_count: label_components(record.skeleton(), Connectivity::Eight).count(),
        mean_thickness: total_hair_area as f64 / skeleton_length as f64,
        total_hair_area,
        skeleton_length,
    }
}
