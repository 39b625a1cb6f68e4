//! Binary masks and the morphology / connectivity primitives everything else
//! is built on.
//!
//! Pixels are addressed as `(row, col)`. Out-of-bounds neighbours always read
//! as background, so repeated erosion of any mask eventually empties it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::MaskError;

/// An `H x W` grid over `{0, 1}`, stored row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl core::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "BinaryMask {}x{} ({} set)", self.width, self.height, self.count_ones())?;
        if self.width * self.height <= 4096 {
            for r in 0..self.height {
                for c in 0..self.width {
                    f.write_str(if self.get(r, c) { "#" } else { "." })?;
                }
                f.write_str("\n")?;
            }
        }
        Ok(())
    }
}

impl BinaryMask {
    /// All-background mask.
    pub fn new(width: usize, height: usize) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::EmptyDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            bits: vec![0; width * height],
        })
    }

    pub fn filled(width: usize, height: usize) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        m.bits.fill(1);
        Ok(m)
    }

    /// Builds a mask from row-major cells. Any nonzero cell becomes 1.
    pub fn from_cells(width: usize, height: usize, cells: &[u8]) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        if cells.len() != width * height {
            return Err(MaskError::BufferLength {
                expected: width * height,
                actual: cells.len(),
            });
        }
        for (dst, &src) in m.bits.iter_mut().zip(cells) {
            *dst = u8::from(src != 0);
        }
        Ok(m)
    }

    /// Builds a mask with the given `(row, col)` pixels set; out-of-bounds
    /// points are ignored.
    pub fn from_points(
        width: usize,
        height: usize,
        points: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        for (r, c) in points {
            if r < height && c < width {
                m.set(r, c, true);
            }
        }
        Ok(m)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        for r in 0..height {
            for c in 0..width {
                if f(r, c) {
                    m.bits[r * width + c] = 1;
                }
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    /// Row-major cells, each exactly 0 or 1.
    #[inline]
    pub fn cells(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] != 0
    }

    /// Signed lookup with zero padding outside the grid.
    #[inline]
    pub fn get_padded(&self, row: isize, col: isize) -> bool {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            return false;
        }
        self.get(row as usize, col as usize)
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = u8::from(value);
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Set pixels as `(row, col)` in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_shape(&self, other: &Self) -> Result<(), MaskError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(MaskError::DimensionMismatch {
                left: (self.width, self.height),
                right: (other.width, other.height),
            })
        }
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u8, u8) -> u8) -> Result<Self, MaskError> {
        self.check_shape(other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn and(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_with(other, |a, b| a | b)
    }

    /// `self ∧ ¬other`.
    pub fn minus(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_with(other, |a, b| a & (1 - b))
    }

    /// True if every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.same_shape(other)
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a <= b)
    }
}

/// A flat structuring element given as `(dy, dx)` offsets around the origin.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StructuringElement {
    offsets: Vec<(isize, isize)>,
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self::cross()
    }
}

impl StructuringElement {
    /// The 5-offset cross (4-neighbourhood plus origin).
    pub fn cross() -> Self {
        Self {
            offsets: vec![(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)],
        }
    }

    /// 3x3 square (8-neighbourhood plus origin).
    pub fn square() -> Self {
        let mut offsets = Vec::with_capacity(9);
        for dy in -1..=1 {
            for dx in -1..=1 {
                offsets.push((dy, dx));
            }
        }
        Self { offsets }
    }

    /// All offsets with `dy² + dx² ≤ radius²`. Radius 0 is the identity element.
    pub fn disc(radius: usize) -> Self {
        let r = radius as isize;
        let mut offsets = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dy * dy + dx * dx <= r * r {
                    offsets.push((dy, dx));
                }
            }
        }
        Self { offsets }
    }

    pub fn from_offsets(offsets: impl IntoIterator<Item = (isize, isize)>) -> Result<Self, MaskError> {
        let mut offsets: Vec<_> = offsets.into_iter().collect();
        offsets.sort_unstable();
        offsets.dedup();
        if !offsets.contains(&(0, 0)) {
            return Err(MaskError::MissingOrigin);
        }
        Ok(Self { offsets })
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    /// Point reflection through the origin.
    pub fn reflected(&self) -> Self {
        Self {
            offsets: self.offsets.iter().map(|&(dy, dx)| (-dy, -dx)).collect(),
        }
    }
}

/// Output pixel is set iff every `p + o` is set, with zero padding.
pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut out = vec![0u8; w * h];
    let has_origin = se.offsets.contains(&(0, 0));
    for r in 0..h {
        for c in 0..w {
            if has_origin && !mask.get(r, c) {
                continue;
            }
            let hit = se
                .offsets
                .iter()
                .all(|&(dy, dx)| mask.get_padded(r as isize + dy, c as isize + dx));
            out[r * w + c] = u8::from(hit);
        }
    }
    BinaryMask { width: w, height: h, bits: out }
}

/// Output pixel is set iff some `p - o` is set.
pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut out = vec![0u8; w * h];
    for (r, c) in mask.ones() {
        for &(dy, dx) in &se.offsets {
            let (rr, cc) = (r as isize + dy, c as isize + dx);
            if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                out[rr as usize * w + cc as usize] = 1;
            }
        }
    }
    BinaryMask { width: w, height: h, bits: out }
}

/// Pixel adjacency used for component labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u8) -> Option<Self> {
        match n {
            4 => Some(Self::Four),
            8 => Some(Self::Eight),
            _ => None,
        }
    }

    pub fn count(self) -> u8 {
        match self {
            Self::Four => 4,
            Self::Eight => 8,
        }
    }

    fn neighbours(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Self::Four => &FOUR,
            Self::Eight => &EIGHT,
        }
    }
}

/// Connected-component labels. Label 0 is background; components are
/// numbered `1..=K` in row-major order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    /// `areas[k - 1]` is the pixel count of component `k`.
    areas: Vec<usize>,
}

impl ComponentLabeling {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.areas.len()
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Area of component `label` (1-based). Zero for background or unknown labels.
    pub fn area(&self, label: u32) -> usize {
        if label == 0 {
            return 0;
        }
        self.areas.get(label as usize - 1).copied().unwrap_or(0)
    }

    pub fn areas(&self) -> &[usize] {
        &self.areas
    }

    /// Mask of the pixels carrying any of the given labels.
    pub fn select(&self, mut keep: impl FnMut(u32) -> bool) -> BinaryMask {
        let mut lut = vec![false; self.areas.len() + 1];
        for (k, slot) in lut.iter_mut().enumerate().skip(1) {
            *slot = keep(k as u32);
        }
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| u8::from(lut[l as usize])).collect(),
        }
    }
}

pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentLabeling {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    let neighbours = connectivity.neighbours();

    for start in 0..w * h {
        if mask.bits[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        let mut area = 0usize;
        labels[start] = label;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            area += 1;
            let (r, c) = ((idx / w) as isize, (idx % w) as isize);
            for &(dy, dx) in neighbours {
                let (rr, cc) = (r + dy, c + dx);
                if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                    continue;
                }
                let n = rr as usize * w + cc as usize;
                if mask.bits[n] != 0 && labels[n] == 0 {
                    labels[n] = label;
                    stack.push(n);
                }
            }
        }
        areas.push(area);
    }

    ComponentLabeling {
        width: w,
        height: h,
        labels,
        areas,
    }
}

/// Keeps only the components whose area is at least `min_area`.
pub fn remove_small_components(
    mask: &BinaryMask,
    min_area: usize,
    connectivity: Connectivity,
) -> BinaryMask {
    if min_area == 0 {
        return mask.clone();
    }
    let labeling = label_components(mask, connectivity);
    labeling.select(|k| labeling.area(k) >= min_area)
}
