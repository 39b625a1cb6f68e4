//! Guidance arithmetic for mask-preserving diffusion translation.
//!
//! Neural pieces (the noise predictor and the perceptual loss terms) are
//! injected through [`Denoiser`] and [`LossTermProvider`]; this module owns
//! the noise schedule, the clean-image estimate, the exact masked L2 term,
//! the weighted loss aggregation and the masked reverse-step blend.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, sqrt};

use crate::error::GuidanceError;
use crate::raster::BinaryMask;

/// Dense `channels x height x width` tensor (CHW order), values nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, GuidanceError> {
        if data.len() != channels * height * width {
            return Err(GuidanceError::ShapeMismatch {
                left: (channels, height, width),
                right: (data.len(), 1, 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GuidanceError::NonFinite);
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Interleaved 8-bit pixels (`channels` bytes per pixel) mapped to `[-1, 1]`.
    pub fn from_interleaved_u8(
        channels: usize,
        height: usize,
        width: usize,
        bytes: &[u8],
    ) -> Result<Self, GuidanceError> {
        if bytes.len() != channels * height * width {
            return Err(GuidanceError::ShapeMismatch {
                left: (channels, height, width),
                right: (bytes.len(), 1, 1),
            });
        }
        Ok(Self::from_fn(channels, height, width, |c, r, col| {
            f64::from(bytes[(r * width + col) * channels + c]) / 127.5 - 1.0
        }))
    }

    /// Inverse of [`Self::from_interleaved_u8`], rounding and clamping to `0..=255`.
    pub fn to_interleaved_u8(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.data.len()];
        for c in 0..self.channels {
            for r in 0..self.height {
                for col in 0..self.width {
                    let v = libm::round((self.get(c, r, col) + 1.0) * 127.5);
                    out[(r * self.width + col) * self.channels + c] = v.clamp(0.0, 255.0) as u8;
                }
            }
        }
        out
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f64) {
        self.data[(c * self.height + r) * self.width + col] = v;
    }

    fn check_same(&self, other: &Self) -> Result<(), GuidanceError> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(GuidanceError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            })
        }
    }

    fn check_mask(&self, mask: &BinaryMask) -> Result<(), GuidanceError> {
        if mask.width() == self.width && mask.height() == self.height {
            Ok(())
        } else {
            Err(GuidanceError::ShapeMismatch {
                left: self.shape(),
                right: (1, mask.height(), mask.width()),
            })
        }
    }

    /// `self + k * other`.
    pub fn add_scaled(&self, other: &Self, k: f64) -> Result<Self, GuidanceError> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&other.data) {
            *o += k * b;
        }
        Ok(out)
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= k);
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Cumulative signal-retention factors `ᾱ_0 = 1 ≥ ᾱ_1 ≥ … ≥ ᾱ_T > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(alpha_bar: Vec<f64>) -> Result<Self, GuidanceError> {
        if alpha_bar.len() < 2 {
            return Err(GuidanceError::InvalidSchedule("need at least one denoising step"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(GuidanceError::InvalidSchedule("alpha_bar[0] must equal 1"));
        }
        if alpha_bar.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(GuidanceError::InvalidSchedule("entries must lie in (0, 1]"));
        }
        if alpha_bar.windows(2).any(|w| w[1] > w[0]) {
            return Err(GuidanceError::InvalidSchedule("alpha_bar must be non-increasing"));
        }
        Ok(Self { alpha_bar })
    }

    /// Linear β schedule from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, GuidanceError> {
        if steps == 0 || !(0.0..1.0).contains(&beta_start) || !(0.0..1.0).contains(&beta_end) {
            return Err(GuidanceError::InvalidSchedule("bad linear beta range"));
        }
        let betas = (0..steps).map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        });
        Self::from_betas(betas)
    }

    /// The usual 1000-step DDPM preset (β from 1e-4 to 0.02).
    pub fn linear_default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid preset")
    }

    /// Squared-cosine schedule with offset `s`; betas are capped at 0.999 so
    /// every ᾱ stays strictly positive.
    pub fn cosine(steps: usize, s: f64) -> Result<Self, GuidanceError> {
        if steps == 0 || s < 0.0 {
            return Err(GuidanceError::InvalidSchedule("bad cosine parameters"));
        }
        let f = |t: usize| {
            let x = (t as f64 / steps as f64 + s) / (1.0 + s) * core::f64::consts::FRAC_PI_2;
            let c = cos(x);
            c * c
        };
        let betas = (1..=steps).map(|t| (1.0 - f(t) / f(t - 1)).clamp(0.0, 0.999));
        Self::from_betas(betas)
    }

    fn from_betas(betas: impl Iterator<Item = f64>) -> Result<Self, GuidanceError> {
        let mut alpha_bar = vec![1.0];
        let mut acc = 1.0;
        for b in betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Self::new(alpha_bar)
    }

    /// Number of denoising steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }
}

fn check_alpha(alpha_bar: f64) -> Result<(), GuidanceError> {
    if alpha_bar > 0.0 && alpha_bar <= 1.0 {
        Ok(())
    } else {
        Err(GuidanceError::NonPositiveAlpha(alpha_bar))
    }
}

/// Clean-image estimate `x_t/√ᾱ − √(1−ᾱ)·ε/√ᾱ`.
pub fn x0_hat(x_t: &ImageTensor, eps: &ImageTensor, alpha_bar: f64) -> Result<ImageTensor, GuidanceError> {
    check_alpha(alpha_bar)?;
    x_t.check_same(eps)?;
    let sa = sqrt(alpha_bar);
    let s1 = sqrt(1.0 - alpha_bar);
    let mut out = x_t.clone();
    for (o, &e) in out.data.iter_mut().zip(&eps.data) {
        *o = *o / sa - s1 * e / sa;
    }
    Ok(out)
}

/// Forward noising `√ᾱ·x0 + √(1−ᾱ)·ε`.
pub fn add_noise(x0: &ImageTensor, eps: &ImageTensor, alpha_bar: f64) -> Result<ImageTensor, GuidanceError> {
    check_alpha(alpha_bar)?;
    x0.check_same(eps)?;
    let sa = sqrt(alpha_bar);
    let s1 = sqrt(1.0 - alpha_bar);
    let mut out = x0.clone();
    for (o, &e) in out.data.iter_mut().zip(&eps.data) {
        *o = sa * *o + s1 * e;
    }
    Ok(out)
}

/// `‖(x_src − x0) ⊙ M‖₂` with the mask broadcast over channels.
pub fn masked_l2(x_src: &ImageTensor, x0: &ImageTensor, mask: &BinaryMask) -> Result<f64, GuidanceError> {
    x_src.check_same(x0)?;
    x_src.check_mask(mask)?;
    let plane = x_src.height * x_src.width;
    let sq: f64 = x_src
        .data
        .iter()
        .zip(&x0.data)
        .enumerate()
        .filter(|(i, _)| mask.cells()[i % plane] != 0)
        .map(|(_, (a, b))| (a - b) * (a - b))
        .sum();
    Ok(sqrt(sq))
}

/// Gradient of [`masked_l2`] with respect to `x0`; zero where the norm vanishes.
pub fn masked_l2_gradient(
    x_src: &ImageTensor,
    x0: &ImageTensor,
    mask: &BinaryMask,
) -> Result<ImageTensor, GuidanceError> {
    let norm = masked_l2(x_src, x0, mask)?;
    let mut grad = ImageTensor::zeros(x0.channels, x0.height, x0.width);
    if norm == 0.0 {
        return Ok(grad);
    }
    let plane = x0.height * x0.width;
    for (i, g) in grad.data.iter_mut().enumerate() {
        if mask.cells()[i % plane] != 0 {
            *g = (x0.data[i] - x_src.data[i]) / norm;
        }
    }
    Ok(grad)
}

/// A scalar loss and its gradient with respect to the candidate image.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: ImageTensor,
}

impl LossValue {
    pub fn zero_like(x: &ImageTensor) -> Self {
        Self {
            value: 0.0,
            gradient: ImageTensor::zeros(x.channels, x.height, x.width),
        }
    }

    fn accumulate(&mut self, other: &LossValue, weight: f64) -> Result<(), GuidanceError> {
        self.gradient.check_same(&other.gradient)?;
        self.value += weight * other.value;
        for (g, &o) in self.gradient.data.iter_mut().zip(&other.gradient.data) {
            *g += weight * o;
        }
        Ok(())
    }
}

/// A differentiable loss evaluated at a candidate clean image.
///
/// The returned gradient must have the candidate's shape.
pub trait LossTermProvider {
    fn evaluate(&self, candidate: &ImageTensor) -> Result<LossValue, GuidanceError>;
}

impl<T: LossTermProvider + ?Sized> LossTermProvider for &T {
    fn evaluate(&self, candidate: &ImageTensor) -> Result<LossValue, GuidanceError> {
        (**self).evaluate(candidate)
    }
}

impl<T: LossTermProvider + ?Sized> LossTermProvider for Box<T> {
    fn evaluate(&self, candidate: &ImageTensor) -> Result<LossValue, GuidanceError> {
        (**self).evaluate(candidate)
    }
}

/// Contributes nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroLoss;

impl LossTermProvider for ZeroLoss {
    fn evaluate(&self, candidate: &ImageTensor) -> Result<LossValue, GuidanceError> {
        Ok(LossValue::zero_like(candidate))
    }
}

fn checked(candidate: &ImageTensor, v: LossValue) -> Result<LossValue, GuidanceError> {
    candidate.check_same(&v.gradient)?;
    Ok(v)
}

/// Hair preservation: an injected perceptual distance on the masked images
/// plus the exact `‖(x_src − x) ⊙ M‖₂`.
pub struct MaskPreservationLoss<P = ZeroLoss> {
    pub source: ImageTensor,
    pub mask: BinaryMask,
    pub perceptual: P,
}

impl MaskPreservationLoss<ZeroLoss> {
    pub fn l2_only(source: ImageTensor, mask: BinaryMask) -> Self {
        Self {
            source,
            mask,
            perceptual: ZeroLoss,
        }
    }
}

impl<P: LossTermProvider> LossTermProvider for MaskPreservationLoss<P> {
    fn evaluate(&self, candidate: &ImageTensor) -> Result<LossValue, GuidanceError> {
        let mut out = checked(candidate, self.perceptual.evaluate(candidate)?)?;
        out.value += masked_l2(&self.source, candidate, &self.mask)?;
        let g = masked_l2_gradient(&self.source, candidate, &self.mask)?;
        out.accumulate(&LossValue { value: 0.0, gradient: g }, 1.0)?;
        Ok(out)
    }
}

/// Target style: an injected token-matching distance plus
/// `λ_mse · ‖x_trg − x‖₂`.
pub struct StyleLoss<P = ZeroLoss> {
    pub target: ImageTensor,
    pub lambda_mse: f64,
    pub token_distance: P,
}

impl<P: LossTermProvider> LossTermProvider for StyleLoss<P> {
    fn evaluate(&self, candidate: &ImageTensor) -> Result<LossValue, GuidanceError> {
        let mut out = checked(candidate, self.token_distance.evaluate(candidate)?)?;
        self.target.check_same(candidate)?;
        let sq: f64 = self
            .target
            .data
            .iter()
            .zip(&candidate.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let norm = sqrt(sq);
        out.value += self.lambda_mse * norm;
        if norm > 0.0 {
            for ((g, &t), &x) in out.gradient.data.iter_mut().zip(&self.target.data).zip(&candidate.data) {
                *g += self.lambda_mse * (x - t) / norm;
            }
        }
        Ok(out)
    }
}

/// Source structure: `λ_sim · ℓ_sim + λ_con · ℓ_con` over two injected terms.
pub struct ContentLoss<S = ZeroLoss, C = ZeroLoss> {
    pub lambda_sim: f64,
    pub lambda_con: f64,
    pub similarity: S,
    pub contrastive: C,
}

impl<S: LossTermProvider, C: LossTermProvider> LossTermProvider for ContentLoss<S, C> {
    fn evaluate(&self, candidate: &ImageTensor) -> Result<LossValue, GuidanceError> {
        let mut out = LossValue::zero_like(candidate);
        out.accumulate(&checked(candidate, self.similarity.evaluate(candidate)?)?, self.lambda_sim)?;
        out.accumulate(&checked(candidate, self.contrastive.evaluate(candidate)?)?, self.lambda_con)?;
        Ok(out)
    }
}

/// Loss weights. Defaults are the values used for 256x256 translation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GuidanceWeights {
    /// λ₁, style term.
    pub style: f64,
    /// λ₂, content term (its inner weights are `sim` and `con`).
    pub content: f64,
    /// λ₃, mask preservation term.
    pub mask: f64,
    /// λ₄, semantic divergence term.
    pub semantic: f64,
    /// λ₅, range term.
    pub range: f64,
    /// Weight of the pixel L2 inside the style term.
    pub mse: f64,
    /// Weight of the self-similarity part of the content term.
    pub sim: f64,
    /// Weight of the contrastive part of the content term.
    pub con: f64,
}

impl Default for GuidanceWeights {
    fn default() -> Self {
        Self {
            style: 2000.0,
            content: 1.0,
            mask: 1000.0,
            semantic: 100.0,
            range: 200.0,
            mse: 3000.0,
            sim: 1000.0,
            con: 200.0,
        }
    }
}

impl GuidanceWeights {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        let all = [
            self.style,
            self.content,
            self.mask,
            self.semantic,
            self.range,
            self.mse,
            self.sim,
            self.con,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(GuidanceError::Provider("weights must be finite and non-negative".into()))
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            style: self.style * k,
            content: self.content * k,
            mask: self.mask * k,
            semantic: self.semantic * k,
            range: self.range * k,
            mse: self.mse,
            sim: self.sim,
            con: self.con,
        }
    }
}

/// The five loss slots. Every slot must be filled; use [`ZeroLoss`] for
/// terms that should not contribute.
#[derive(Default)]
pub struct LossTerms<'a> {
    pub style: Option<&'a dyn LossTermProvider>,
    pub content: Option<&'a dyn LossTermProvider>,
    pub mask: Option<&'a dyn LossTermProvider>,
    pub semantic: Option<&'a dyn LossTermProvider>,
    pub range: Option<&'a dyn LossTermProvider>,
}

impl<'a> LossTerms<'a> {
    pub fn all(provider: &'a dyn LossTermProvider) -> Self {
        Self {
            style: Some(provider),
            content: Some(provider),
            mask: Some(provider),
            semantic: Some(provider),
            range: Some(provider),
        }
    }

    pub fn zero() -> LossTerms<'static> {
        LossTerms::all(&ZeroLoss)
    }
}

/// Weighted sum of the five terms and of their gradients.
pub fn total_loss(
    candidate: &ImageTensor,
    terms: &LossTerms<'_>,
    weights: &GuidanceWeights,
) -> Result<LossValue, GuidanceError> {
    let slots: [(&'static str, Option<&dyn LossTermProvider>, f64); 5] = [
        ("style", terms.style, weights.style),
        ("content", terms.content, weights.content),
        ("mask", terms.mask, weights.mask),
        ("semantic", terms.semantic, weights.semantic),
        ("range", terms.range, weights.range),
    ];
    let mut out = LossValue::zero_like(candidate);
    for (name, provider, weight) in slots {
        let provider = provider.ok_or(GuidanceError::MissingSlot(name))?;
        let term = checked(candidate, provider.evaluate(candidate)?)?;
        out.accumulate(&term, weight)?;
    }
    Ok(out)
}

/// Noise predictor `ε_θ(x_t, t)`.
pub trait Denoiser {
    fn predict_noise(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor, GuidanceError>;
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn predict_noise(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor, GuidanceError> {
        (**self).predict_noise(x_t, t)
    }
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_noise(&self, x_t: &ImageTensor, _t: usize) -> Result<ImageTensor, GuidanceError> {
        Ok(ImageTensor::zeros(x_t.channels, x_t.height, x_t.width))
    }
}

/// Always returns the same noise image.
#[derive(Debug, Clone)]
pub struct FixedNoise(pub ImageTensor);

impl Denoiser for FixedNoise {
    fn predict_noise(&self, x_t: &ImageTensor, _t: usize) -> Result<ImageTensor, GuidanceError> {
        x_t.check_same(&self.0)?;
        Ok(self.0.clone())
    }
}

/// How the unmasked branch of a reverse step is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BlendVariant {
    /// `x_{t-1} = x_t ⊙ M + (x̂₀ − g) ⊙ (1 − M)`.
    #[default]
    Verbatim,
    /// The guided estimate is pushed back to noise level `t − 1` with the
    /// predicted noise (deterministic DDIM step) before blending.
    Renoise,
}

/// One guided reverse step. Pixels under `mask` are copied from `x_t`
/// unchanged; the rest come from the guided clean estimate.
#[allow(clippy::too_many_arguments)]
pub fn guided_reverse_step(
    x_t: &ImageTensor,
    denoiser: &dyn Denoiser,
    terms: &LossTerms<'_>,
    weights: &GuidanceWeights,
    mask: &BinaryMask,
    schedule: &NoiseSchedule,
    t: usize,
    variant: BlendVariant,
) -> Result<ImageTensor, GuidanceError> {
    if t == 0 || t > schedule.steps() {
        return Err(GuidanceError::TimestepOutOfRange {
            t,
            max: schedule.steps(),
        });
    }
    x_t.check_mask(mask)?;
    let eps = denoiser.predict_noise(x_t, t)?;
    x_t.check_same(&eps)?;
    let estimate = x0_hat(x_t, &eps, schedule.alpha_bar(t))?;
    let guidance = total_loss(&estimate, terms, weights)?;
    let mut guided = estimate.add_scaled(&guidance.gradient, -1.0)?;
    if variant == BlendVariant::Renoise {
        guided = add_noise(&guided, &eps, schedule.alpha_bar(t - 1))?;
    }
    Ok(blend(x_t, &guided, mask))
}

/// `keep ⊙ M + other ⊙ (1 − M)` by selection, so masked values are bit-exact copies.
pub fn blend(keep: &ImageTensor, other: &ImageTensor, mask: &BinaryMask) -> ImageTensor {
    let plane = keep.height * keep.width;
    let mut out = other.clone();
    for (i, o) in out.data.iter_mut().enumerate() {
        if mask.cells()[i % plane] != 0 {
            *o = keep.data[i];
        }
    }
    out
}

/// Runs steps `t = T, …, 1` starting from `x_T`.
pub fn run_reverse(
    x_start: &ImageTensor,
    denoiser: &dyn Denoiser,
    terms: &LossTerms<'_>,
    weights: &GuidanceWeights,
    mask: &BinaryMask,
    schedule: &NoiseSchedule,
    variant: BlendVariant,
) -> Result<ImageTensor, GuidanceError> {
    let mut x = x_start.clone();
    for t in (1..=schedule.steps()).rev() {
        x = guided_reverse_step(&x, denoiser, terms, weights, mask, schedule, t, variant)?;
    }
    Ok(x)
}
