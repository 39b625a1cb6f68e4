//! Synthetic hair images and masks drawn on hairless scalp patches.
//!
//! Hairs are straight lines `y = a·x + b` or power curves
//! `y = a·(x − x₀)^p + y₀` (defined for `x ≥ x₀`), with `x` the column and `y`
//! the row. The analytic curve is sampled once per column and successive
//! samples are joined by integer line stepping, so every centerline is
//! 8-connected. Thickness comes from dilating the centerline with a disc of
//! radius `⌊thickness / 2⌋`.
//!
//! White circles imitate dandruff. They are painted after the strokes and
//! never enter the mask.

use alloc::string::String;
use alloc::vec::Vec;

use libm::{pow, round};
use rand::Rng;
use rand::SeedableRng;

use crate::error::SynthError;
use crate::raster::{dilate, BinaryMask, StructuringElement};
use crate::rng::{derive_seed, substream, StreamRng};

pub type Rgb = [u8; 3];

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Self, SynthError> {
        if width == 0 || height == 0 {
            return Err(SynthError::EmptyPatch);
        }
        Ok(Self {
            width,
            height,
            pixels: alloc::vec![color; width * height],
        })
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, SynthError> {
        if width == 0 || height == 0 {
            return Err(SynthError::EmptyPatch);
        }
        if pixels.len() != width * height {
            return Err(SynthError::Mask(crate::error::MaskError::BufferLength {
                expected: width * height,
                actual: pixels.len(),
            }));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Interleaved `RGBRGB…` bytes.
    pub fn from_raw(width: usize, height: usize, raw: &[u8]) -> Result<Self, SynthError> {
        if raw.len() != width * height * 3 {
            return Err(SynthError::Mask(crate::error::MaskError::BufferLength {
                expected: width * height * 3,
                actual: raw.len(),
            }));
        }
        Self::from_pixels(
            width,
            height,
            raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        )
    }

    pub fn to_raw(&self) -> Vec<u8> {
        self.pixels.iter().flatten().copied().collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> Rgb {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, color: Rgb) {
        self.pixels[row * self.width + col] = color;
    }

    fn paint(&mut self, footprint: &BinaryMask, color: Rgb) {
        for (r, c) in footprint.ones() {
            self.set(r, c, color);
        }
    }

    /// Pixels whose color differs from `other`.
    pub fn diff_mask(&self, other: &RgbImage) -> Result<BinaryMask, SynthError> {
        if self.width != other.width || self.height != other.height {
            return Err(SynthError::Mask(crate::error::MaskError::DimensionMismatch {
                left: (self.width, self.height),
                right: (other.width, other.height),
            }));
        }
        let cells: Vec<u8> = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| u8::from(a != b))
            .collect();
        Ok(BinaryMask::from_cells(self.width, self.height, &cells)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "lowercase"))]
pub enum CurveFamily {
    /// `y = slope · x + intercept`
    Linear { slope: f64, intercept: f64 },
    /// `y = scale · (x − x0)^exponent + y0` for `x ≥ x0`
    Power {
        scale: f64,
        exponent: f64,
        x0: f64,
        y0: f64,
    },
}

impl CurveFamily {
    fn eval(&self, x: f64) -> Option<f64> {
        match *self {
            CurveFamily::Linear { slope, intercept } => Some(slope * x + intercept),
            CurveFamily::Power {
                scale,
                exponent,
                x0,
                y0,
            } => {
                let dx = x - x0;
                if dx < 0.0 {
                    None
                } else {
                    Some(scale * pow(dx, exponent) + y0)
                }
            }
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        match *self {
            CurveFamily::Linear { slope, intercept } => {
                if !(slope.is_finite() && intercept.is_finite()) {
                    return Err(SynthError::InvalidCurve("non-finite coefficient"));
                }
            }
            CurveFamily::Power {
                scale,
                exponent,
                x0,
                y0,
            } => {
                if !(scale.is_finite() && x0.is_finite() && y0.is_finite() && exponent.is_finite()) {
                    return Err(SynthError::InvalidCurve("non-finite coefficient"));
                }
                if exponent <= 0.0 {
                    return Err(SynthError::InvalidCurve("power exponent must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurveSpec {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub family: CurveFamily,
    pub thickness: u32,
    pub color: Rgb,
}

impl CurveSpec {
    pub fn linear(slope: f64, intercept: f64, thickness: u32) -> Self {
        Self {
            family: CurveFamily::Linear { slope, intercept },
            thickness,
            color: [0, 0, 0],
        }
    }

    pub fn power(scale: f64, exponent: f64, x0: f64, y0: f64, thickness: u32) -> Self {
        Self {
            family: CurveFamily::Power {
                scale,
                exponent,
                x0,
                y0,
            },
            thickness,
            color: [0, 0, 0],
        }
    }

    pub fn with_color(mut self, color: Rgb) -> Self {
        self.color = color;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseSpec {
    pub num_circles: u32,
    pub radius_min: u32,
    pub radius_max: u32,
    pub color: Rgb,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            num_circles: 0,
            radius_min: 1,
            radius_max: 1,
            color: [250, 250, 250],
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.radius_min < 1 {
            return Err(SynthError::InvalidNoise("radius_min must be at least 1"));
        }
        if self.radius_min > self.radius_max {
            return Err(SynthError::InvalidNoise("radius_min exceeds radius_max"));
        }
        Ok(())
    }
}

/// One painted noise disc, `(row, col)` center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Circle {
    pub row: i64,
    pub col: i64,
    pub radius: u32,
    pub color: Rgb,
}

impl Circle {
    pub fn footprint(&self, width: usize, height: usize) -> BinaryMask {
        let r = i64::from(self.radius);
        let mut m = BinaryMask::new(width, height).expect("positive canvas");
        for dy in -r..=r {
            for dx in -r..=r {
                if dy * dy + dx * dx > r * r {
                    continue;
                }
                let (y, x) = (self.row + dy, self.col + dx);
                if y >= 0 && x >= 0 && (y as usize) < height && (x as usize) < width {
                    m.set(y as usize, x as usize, true);
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Provenance {
    pub patch_id: String,
    pub curves: Vec<CurveSpec>,
    pub noise: NoiseSpec,
    pub circles: Vec<Circle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPair {
    pub image: RgbImage,
    pub mask: BinaryMask,
    pub seed: u64,
    pub provenance: Provenance,
}

/// Grid pixels from `(x0, y0)` to `(x1, y1)` inclusive, one per step along
/// the major axis, minor coordinate rounded half up.
fn line_pixels(x0: i64, y0: i64, x1: i64, y1: i64, mut visit: impl FnMut(i64, i64)) {
    let (dx, dy) = (x1 - x0, y1 - y0);
    let n = dx.abs().max(dy.abs());
    if n == 0 {
        visit(x0, y0);
        return;
    }
    let step = |d: i64, k: i64| (2 * k * d + n).div_euclid(2 * n);
    for k in 0..=n {
        visit(x0 + step(dx, k), y0 + step(dy, k));
    }
}

/// One-pixel-wide centerline of the curve clipped to the canvas.
pub fn centerline(width: usize, height: usize, family: &CurveFamily) -> Result<BinaryMask, SynthError> {
    family.validate()?;
    let mut m = BinaryMask::new(width, height)?;
    // Samples far outside the canvas are pulled in to keep the stepping
    // bounded; the on-canvas part of each segment is unaffected.
    let lo = -(height as f64) - 1.0;
    let hi = 2.0 * height as f64 + 1.0;
    let mut prev: Option<(i64, i64)> = None;
    for x in 0..width as i64 {
        let Some(y) = family.eval(x as f64) else {
            prev = None;
            continue;
        };
        let y = round(y.clamp(lo, hi)) as i64;
        let from = prev.unwrap_or((x, y));
        line_pixels(from.0, from.1, x, y, |px, py| {
            if px >= 0 && py >= 0 && (px as usize) < width && (py as usize) < height {
                m.set(py as usize, px as usize, true);
            }
        });
        prev = Some((x, y));
    }
    if m.is_empty() {
        return Err(SynthError::CurveOutsideCanvas { width, height });
    }
    Ok(m)
}

/// Stroke footprint: the centerline dilated to the requested thickness.
pub fn render_curve(width: usize, height: usize, spec: &CurveSpec) -> Result<BinaryMask, SynthError> {
    if spec.thickness < 1 {
        return Err(SynthError::InvalidCurve("thickness must be at least 1"));
    }
    let line = centerline(width, height, &spec.family)?;
    let radius = (spec.thickness / 2) as usize;
    if radius == 0 {
        return Ok(line);
    }
    Ok(dilate(&line, &StructuringElement::disc(radius)))
}

/// Paints strokes then noise discs over `patch`; the mask holds stroke pixels only.
pub fn paint_pair(
    patch: &RgbImage,
    curves: &[CurveSpec],
    circles: &[Circle],
) -> Result<(RgbImage, BinaryMask), SynthError> {
    let (w, h) = (patch.width, patch.height);
    let mut image = patch.clone();
    let mut mask = BinaryMask::new(w, h)?;
    for spec in curves {
        let footprint = render_curve(w, h, spec)?;
        image.paint(&footprint, spec.color);
        mask = mask.or(&footprint)?;
    }
    for circle in circles {
        image.paint(&circle.footprint(w, h), circle.color);
    }
    Ok((image, mask))
}

fn draw_circles(noise: &NoiseSpec, width: usize, height: usize, rng: &mut StreamRng) -> Vec<Circle> {
    (0..noise.num_circles)
        .map(|_| Circle {
            row: rng.gen_range(0..height as i64),
            col: rng.gen_range(0..width as i64),
            radius: rng.gen_range(noise.radius_min..=noise.radius_max),
            color: noise.color,
        })
        .collect()
}

/// Draws noise positions from `seed` and paints the pair.
pub fn synth_pair(
    patch_id: &str,
    patch: &RgbImage,
    curves: &[CurveSpec],
    noise: &NoiseSpec,
    seed: u64,
) -> Result<PseudoPair, SynthError> {
    noise.validate()?;
    let mut rng = StreamRng::seed_from_u64(seed);
    let circles = draw_circles(noise, patch.width, patch.height, &mut rng);
    let (image, mask) = paint_pair(patch, curves, &circles)?;
    Ok(PseudoPair {
        image,
        mask,
        seed,
        provenance: Provenance {
            patch_id: String::from(patch_id),
            curves: curves.to_vec(),
            noise: *noise,
            circles,
        },
    })
}

/// Hair colors the generator jitters around: black, brown, blue, white.
pub const HAIR_COLORS: [Rgb; 4] = [[24, 20, 18], [96, 64, 38], [44, 62, 150], [236, 233, 228]];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GenConfig {
    pub count: usize,
    /// Inclusive range of strokes per image.
    pub curves_per_image: (u32, u32),
    /// Inclusive stroke thickness range in pixels.
    pub thickness: (u32, u32),
    /// Probability that a stroke is a power curve rather than a line.
    pub power_fraction: f64,
    /// Line slopes are drawn from `[-max_slope, max_slope]`.
    pub max_slope: f64,
    /// Power-curve exponents are drawn from this range.
    pub exponent: (f64, f64),
    /// Inclusive range of dandruff discs per image.
    pub noise_circles: (u32, u32),
    /// Inclusive disc radius range.
    pub noise_radius: (u32, u32),
    /// Per-channel uniform jitter around [`HAIR_COLORS`].
    pub color_jitter: u8,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            count: 3000,
            curves_per_image: (1, 4),
            thickness: (2, 6),
            power_fraction: 0.5,
            max_slope: 3.0,
            exponent: (0.5, 2.5),
            noise_circles: (0, 8),
            noise_radius: (1, 4),
            color_jitter: 12,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.count == 0 {
            return Err(SynthError::InvalidConfig("count must be at least 1"));
        }
        if self.curves_per_image.0 > self.curves_per_image.1 {
            return Err(SynthError::InvalidConfig("curves_per_image range is inverted"));
        }
        if self.thickness.0 < 1 || self.thickness.0 > self.thickness.1 {
            return Err(SynthError::InvalidConfig("thickness range must start at 1 or more"));
        }
        if !(0.0..=1.0).contains(&self.power_fraction) {
            return Err(SynthError::InvalidConfig("power_fraction must lie in [0, 1]"));
        }
        if !(self.max_slope.is_finite() && self.max_slope >= 0.0) {
            return Err(SynthError::InvalidConfig("max_slope must be finite and non-negative"));
        }
        if !(self.exponent.0 > 0.0 && self.exponent.0 <= self.exponent.1 && self.exponent.1.is_finite()) {
            return Err(SynthError::InvalidConfig("exponent range must be positive"));
        }
        if self.noise_circles.0 > self.noise_circles.1 {
            return Err(SynthError::InvalidConfig("noise_circles range is inverted"));
        }
        if self.noise_radius.0 < 1 || self.noise_radius.0 > self.noise_radius.1 {
            return Err(SynthError::InvalidConfig("noise_radius range must start at 1 or more"));
        }
        Ok(())
    }
}

/// A hairless scalp patch to draw on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub id: String,
    pub image: RgbImage,
}

fn jitter(base: Rgb, amount: u8, rng: &mut StreamRng) -> Rgb {
    let a = i16::from(amount);
    base.map(|v| (i16::from(v) + rng.gen_range(-a..=a)).clamp(0, 255) as u8)
}

fn random_curve(width: usize, height: usize, config: &GenConfig, rng: &mut StreamRng) -> CurveSpec {
    let (w, h) = (width as f64, height as f64);
    let family = if rng.gen_bool(config.power_fraction) {
        let x0 = rng.gen_range(0.0..w * 0.5);
        let y0 = rng.gen_range(0.0..h);
        let exponent = rng.gen_range(config.exponent.0..=config.exponent.1);
        let y_end = rng.gen_range(-0.5 * h..1.5 * h);
        let span = (w - 1.0 - x0).max(1.0);
        CurveFamily::Power {
            scale: (y_end - y0) / pow(span, exponent),
            exponent,
            x0,
            y0,
        }
    } else {
        let ax = rng.gen_range(0.0..w);
        let ay = rng.gen_range(0.0..h);
        let slope = rng.gen_range(-config.max_slope..=config.max_slope);
        CurveFamily::Linear {
            slope,
            intercept: ay - slope * ax,
        }
    };
    let base = HAIR_COLORS[rng.gen_range(0..HAIR_COLORS.len())];
    CurveSpec {
        family,
        thickness: rng.gen_range(config.thickness.0..=config.thickness.1),
        color: jitter(base, config.color_jitter, rng),
    }
}

/// Pair number `index` of a dataset; independent of every other index.
pub fn gen_pair(
    patches: &[Patch],
    config: &GenConfig,
    seed: u64,
    index: usize,
) -> Result<PseudoPair, SynthError> {
    if patches.is_empty() {
        return Err(SynthError::NoPatches);
    }
    let patch = &patches[index % patches.len()];
    let (w, h) = (patch.image.width, patch.image.height);
    let pair_seed = derive_seed(seed, "gen-pseudo", &(index as u64).to_le_bytes());
    let mut rng = substream(pair_seed, "curves", 0);

    let n_curves = rng.gen_range(config.curves_per_image.0..=config.curves_per_image.1);
    let mut curves = Vec::with_capacity(n_curves as usize);
    while curves.len() < n_curves as usize {
        let spec = random_curve(w, h, config, &mut rng);
        if centerline(w, h, &spec.family).is_ok() {
            curves.push(spec);
        }
    }
    let noise = NoiseSpec {
        num_circles: rng.gen_range(config.noise_circles.0..=config.noise_circles.1),
        radius_min: config.noise_radius.0,
        radius_max: config.noise_radius.1,
        color: jitter([246, 246, 244], 6, &mut rng),
    };
    synth_pair(&patch.id, &patch.image, &curves, &noise, pair_seed)
}

/// `config.count` pairs, patches used round-robin.
pub fn gen_dataset(patches: &[Patch], config: &GenConfig, seed: u64) -> Result<Vec<PseudoPair>, SynthError> {
    config.validate()?;
    if patches.is_empty() {
        return Err(SynthError::NoPatches);
    }
    (0..config.count)
        .map(|i| gen_pair(patches, config, seed, i))
        .collect()
}

/// Imitates a coarse segmenter: the clean mask grown by one cross dilation
/// plus `specks` small discs scattered uniformly.
pub fn simulate_coarse_mask(
    clean: &BinaryMask,
    specks: usize,
    radius: (u32, u32),
    rng: &mut StreamRng,
) -> BinaryMask {
    let (w, h) = (clean.width(), clean.height());
    let mut coarse = dilate(clean, &StructuringElement::cross());
    for _ in 0..specks {
        let circle = Circle {
            row: rng.gen_range(0..h as i64),
            col: rng.gen_range(0..w as i64),
            radius: rng.gen_range(radius.0..=radius.1),
            color: [255, 255, 255],
        };
        coarse = coarse.or(&circle.footprint(w, h)).expect("same canvas");
    }
    coarse
}
