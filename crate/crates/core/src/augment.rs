//! Gradient-guided amplitude mixing plus pixel-space blending.
//!
//! For a labeled source image `x1` and a partner `x2`:
//!
//! 1. `G(u,v) = |∂L/∂A(x1)(u,v)|` over the low-frequency square Ω_r,
//! 2. `D = clip(sigmoid((G - μ) / (σ + ε)), d_min, d_max)`,
//! 3. `A_mix = (1 - D)·A(x1) + D·A(x2)` inside Ω_r, `A(x1)` outside,
//! 4. `x̂_f = F⁻¹(A_mix · exp(jP(x1)))`,
//! 5. `x̂_p = (1 - λ1)·x1 + λ1·x2`,
//! 6. `x̂ = (1 - λ2)·x̂_f + λ2·x̂_p`.
//!
//! The amplitude gradient is obtained by backpropagating to the pixels and
//! chaining through the inverse transform analytically: perturbing `A(u,v)`
//! alone moves the real reconstruction by
//! `(1/HW)·Re[exp(jP(u,v))·exp(+j2π(hu/H + wv/W))]`, so
//! `∂L/∂A(u,v) = (1/HW)·(cos P·Re ĝ + sin P·Im ĝ)` with `ĝ = fft2(∂L/∂x)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::rng::Stream;
use crate::spectral::{self, AmplitudePhase, FrequencyMask};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    UnifiedRatioV1,
    FrequencyOnly,
    PixelOnly,
    None,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::UnifiedRatioV1,
        Variant::FrequencyOnly,
        Variant::PixelOnly,
        Variant::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::UnifiedRatioV1 => "unified_ratio_v1",
            Variant::FrequencyOnly => "frequency_only",
            Variant::PixelOnly => "pixel_only",
            Variant::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Whether this variant needs a model gradient.
    pub fn uses_gradient(self) -> bool {
        matches!(self, Variant::Full | Variant::FrequencyOnly)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationConfig {
    /// Side of Ω_r as a fraction of the shorter image side.
    pub r: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub eps: f64,
    /// λ1 is drawn from Uniform(0, lambda1_max) per image.
    pub lambda1_max: f64,
    /// λ2 interval; equal ends mean a fixed weight.
    pub lambda2: (f64, f64),
    pub variant: Variant,
    /// The constant mixing strength used by `unified_ratio_v1`.
    pub unified_ratio: f64,
    pub per_channel_maps: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            r: 0.5,
            d_min: 0.1,
            d_max: 0.9,
            eps: 1e-6,
            lambda1_max: 0.5,
            lambda2: (0.5, 0.5),
            variant: Variant::Full,
            unified_ratio: 0.5,
            per_channel_maps: true,
        }
    }
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.r > 0.0 && self.r <= 1.0) {
            return bad(format!("r must lie in (0, 1], got {}", self.r));
        }
        if !(unit(self.d_min) && unit(self.d_max) && self.d_min <= self.d_max) {
            return bad(format!(
                "need 0 ≤ d_min ≤ d_max ≤ 1, got d_min = {}, d_max = {}",
                self.d_min, self.d_max
            ));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !unit(self.lambda1_max) {
            return bad(format!("lambda1_max must lie in [0, 1], got {}", self.lambda1_max));
        }
        let (lo, hi) = self.lambda2;
        if !(unit(lo) && unit(hi) && lo <= hi) {
            return bad(format!("lambda2 interval must lie in [0, 1], got {lo}..{hi}"));
        }
        if !unit(self.unified_ratio) {
            return bad(format!("unified_ratio must lie in [0, 1], got {}", self.unified_ratio));
        }
        Ok(())
    }
}

/// Values on a C×H×W frequency grid, meaningful only inside `mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub mask: FrequencyMask,
    /// Zero outside the mask.
    pub values: Vec<f64>,
}

impl SpectralMap {
    pub fn at(&self, channel: usize, u: usize, v: usize) -> f64 {
        self.values[(channel * self.height + u) * self.width + v]
    }

    /// Values inside the mask for one channel, in row-major bin order.
    pub fn defined(&self, channel: usize) -> Vec<f64> {
        self.mask
            .indices()
            .into_iter()
            .map(|(u, v)| self.at(channel, u, v))
            .collect()
    }
}

/// `G(u,v)`: absolute loss gradient with respect to the source amplitude.
pub type SensitivityMap = SpectralMap;
/// `D(u,v)`: per-frequency interpolation strength.
pub type MixingMap = SpectralMap;

fn check_mask(x: &Tensor, mask: &FrequencyMask) -> Result<(usize, usize, usize)> {
    let (c, h, w) = x.chw()?;
    if (mask.height, mask.width) != (h, w) {
        return Err(Error::Dimension(format!(
            "mask is {}×{} but the image is {h}×{w}",
            mask.height, mask.width
        )));
    }
    Ok((c, h, w))
}

/// Chains a pixel gradient through the polar reconstruction at phase `phase`.
fn sensitivity_from_pixel_gradient(
    pixel_grad: &Tensor,
    source: &AmplitudePhase,
    mask: &FrequencyMask,
) -> Result<SensitivityMap> {
    let (c, h, w) = pixel_grad.chw()?;
    let gs = spectral::fft2(pixel_grad)?;
    let norm = 1.0 / (h * w) as f64;
    let mut values = vec![0.0; c * h * w];
    for ch in 0..c {
        for (u, v) in mask.indices() {
            let i = (ch * h + u) * w + v;
            let p = source.phase[i];
            values[i] = (norm * (p.cos() * gs.re[i] + p.sin() * gs.im[i])).abs();
        }
    }
    Ok(SpectralMap {
        channels: c,
        height: h,
        width: w,
        mask: mask.clone(),
        values,
    })
}

/// Sensitivity map of `model` at the unmodified source image `x1`.
pub fn amplitude_gradient(
    model: &dyn Classifier,
    x1: &Tensor,
    label: usize,
    mask: &FrequencyMask,
) -> Result<SensitivityMap> {
    check_mask(x1, mask)?;
    let source = spectral::to_amp_phase(&spectral::fft2(x1)?);
    let (_, g) = model.loss_input_gradient(x1, label)?;
    sensitivity_from_pixel_gradient(&g, &source, mask)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Population mean and standard deviation, accumulated relative to the
/// first value so that a constant input yields exactly (value, 0).
fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let pivot = vals[0];
    let shift = vals.iter().map(|v| v - pivot).sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - pivot - shift).powi(2)).sum::<f64>() / n;
    (pivot + shift, var.sqrt())
}

/// Standardize → sigmoid → clip, with population statistics over the
/// defined bins (per channel or pooled across channels).
pub fn mixing_map(g: &SensitivityMap, cfg: &AugmentationConfig) -> MixingMap {
    let stats: Vec<(f64, f64)> = if cfg.per_channel_maps {
        (0..g.channels).map(|ch| mean_std(&g.defined(ch))).collect()
    } else {
        let pooled: Vec<f64> = (0..g.channels).flat_map(|ch| g.defined(ch)).collect();
        vec![mean_std(&pooled); g.channels]
    };
    let mut values = vec![0.0; g.values.len()];
    for (ch, &(mu, sigma)) in stats.iter().enumerate() {
        for (u, v) in g.mask.indices() {
            let i = (ch * g.height + u) * g.width + v;
            let z = (g.values[i] - mu) / (sigma + cfg.eps);
            values[i] = sigmoid(z).clamp(cfg.d_min, cfg.d_max);
        }
    }
    SpectralMap { values, ..g.clone() }
}

/// A constant mixing map over Ω_r.
pub fn uniform_map(channels: usize, mask: &FrequencyMask, value: f64) -> MixingMap {
    let (h, w) = (mask.height, mask.width);
    let mut values = vec![0.0; channels * h * w];
    for ch in 0..channels {
        for (u, v) in mask.indices() {
            values[(ch * h + u) * w + v] = value;
        }
    }
    SpectralMap {
        channels,
        height: h,
        width: w,
        mask: mask.clone(),
        values,
    }
}

/// Per-bin interpolation `(1 - D)·A1 + D·A2` inside `mask`, `A1` elsewhere.
pub fn amplitude_mix(a1: &[f64], a2: &[f64], d: &MixingMap, mask: &FrequencyMask) -> Result<Vec<f64>> {
    let n = d.channels * d.height * d.width;
    if a1.len() != n || a2.len() != n || d.values.len() != n {
        return Err(Error::Dimension(format!(
            "amplitude grids ({}, {}) and mixing map ({}) must all hold {n} bins",
            a1.len(),
            a2.len(),
            d.values.len()
        )));
    }
    if (mask.height, mask.width) != (d.height, d.width) {
        return Err(Error::Dimension(format!(
            "mask {}×{} does not match the {}×{} mixing map",
            mask.height, mask.width, d.height, d.width
        )));
    }
    let mut out = a1.to_vec();
    let plane = d.height * d.width;
    for ch in 0..d.channels {
        for (bin, &inside) in mask.bins().iter().enumerate() {
            if inside {
                let i = ch * plane + bin;
                out[i] = (1.0 - d.values[i]) * a1[i] + d.values[i] * a2[i];
            }
        }
    }
    Ok(out)
}

/// Frequency-path result with its intermediate maps.
#[derive(Clone, Debug)]
pub struct FrequencyAugment {
    pub image: Tensor,
    pub sensitivity: Option<SensitivityMap>,
    pub mixing: MixingMap,
}

/// Amplitude-mixed reconstruction `x̂_f`, clamped to [0, 1].
///
/// `Variant::UnifiedRatioV1` uses `D ≡ unified_ratio` and needs no model;
/// every other variant derives `D` from the model's sensitivity map.
pub fn freq_augment(
    x1: &Tensor,
    label: usize,
    x2: &Tensor,
    model: Option<&dyn Classifier>,
    cfg: &AugmentationConfig,
) -> Result<FrequencyAugment> {
    x1.expect_same_shape(x2)?;
    let (c, h, w) = x1.chw()?;
    let mask = spectral::low_freq_mask(h, w, cfg.r)?;
    let s1 = spectral::to_amp_phase(&spectral::fft2(x1)?);
    let s2 = spectral::to_amp_phase(&spectral::fft2(x2)?);
    let (sensitivity, mixing) = if cfg.variant == Variant::UnifiedRatioV1 {
        (None, uniform_map(c, &mask, cfg.unified_ratio))
    } else {
        let model = model.ok_or_else(|| {
            Error::Contract(format!(
                "variant {} needs a model for the sensitivity map",
                cfg.variant.name()
            ))
        })?;
        let (_, g) = model.loss_input_gradient(x1, label)?;
        let sens = sensitivity_from_pixel_gradient(&g, &s1, &mask)?;
        let d = mixing_map(&sens, cfg);
        (Some(sens), d)
    };
    let amplitude = amplitude_mix(&s1.amplitude, &s2.amplitude, &mixing, &mask)?;
    let mixed = AmplitudePhase { amplitude, ..s1 };
    let spec = spectral::from_amp_phase(&mixed)?.assume_conjugate_symmetric();
    let image = spectral::ifft2(&spec)?.clamp(0.0, 1.0);
    Ok(FrequencyAugment {
        image,
        sensitivity,
        mixing,
    })
}

fn check_ratio(name: &str, v: f64) -> Result<()> {
    if !unit(v) {
        return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// `(1 - λ1)·x1 + λ1·x2`.
pub fn pixel_mix(x1: &Tensor, x2: &Tensor, lambda1: f64) -> Result<Tensor> {
    check_ratio("lambda1", lambda1)?;
    x1.zip_with(x2, |a, b| ((1.0 - lambda1) * a + lambda1 * b).clamp(0.0, 1.0))
}

/// `(1 - λ2)·x̂_f + λ2·x̂_p`.
pub fn fuse(freq: &Tensor, pixel: &Tensor, lambda2: f64) -> Result<Tensor> {
    check_ratio("lambda2", lambda2)?;
    freq.zip_with(pixel, |a, b| ((1.0 - lambda2) * a + lambda2 * b).clamp(0.0, 1.0))
}

#[derive(Clone, Debug)]
pub struct AugmentOutput {
    pub image: Tensor,
    pub lambda1: f64,
    pub lambda2: f64,
    pub frequency: Option<FrequencyAugment>,
    pub pixel: Option<Tensor>,
}

/// Draws (λ1, λ2) from `rng`, always in that order.
pub fn draw_lambdas(cfg: &AugmentationConfig, rng: &mut Stream) -> (f64, f64) {
    let l1 = if cfg.lambda1_max > 0.0 {
        rng.gen_range(0.0..cfg.lambda1_max)
    } else {
        0.0
    };
    let (lo, hi) = cfg.lambda2;
    let l2 = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    (l1, l2)
}

/// One augmented image for the labeled source `x1`; the label stays `y(x1)`.
pub fn dgap_augment(
    x1: &Tensor,
    label: usize,
    x2: &Tensor,
    model: Option<&dyn Classifier>,
    cfg: &AugmentationConfig,
    rng: &mut Stream,
) -> Result<AugmentOutput> {
    let (lambda1, lambda2) = draw_lambdas(cfg, rng);
    augment_with(x1, label, x2, model, cfg, lambda1, lambda2)
}

/// [`dgap_augment`] with explicit mixing weights.
pub fn augment_with(
    x1: &Tensor,
    label: usize,
    x2: &Tensor,
    model: Option<&dyn Classifier>,
    cfg: &AugmentationConfig,
    lambda1: f64,
    lambda2: f64,
) -> Result<AugmentOutput> {
    x1.expect_same_shape(x2)?;
    let out = |image, frequency, pixel| AugmentOutput {
        image,
        lambda1,
        lambda2,
        frequency,
        pixel,
    };
    match cfg.variant {
        Variant::None => Ok(out(x1.clone(), None, None)),
        Variant::PixelOnly => {
            let p = pixel_mix(x1, x2, lambda1)?;
            Ok(out(p.clone(), None, Some(p)))
        }
        Variant::FrequencyOnly => {
            let f = freq_augment(x1, label, x2, model, cfg)?;
            Ok(out(f.image.clone(), Some(f), None))
        }
        Variant::Full | Variant::UnifiedRatioV1 => {
            let f = freq_augment(x1, label, x2, model, cfg)?;
            let p = pixel_mix(x1, x2, lambda1)?;
            let fused = fuse(&f.image, &p, lambda2)?;
            Ok(out(fused, Some(f), Some(p)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelSpec, ModelState, ScaledLoss};
    use crate::rng::stream;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_image(seed: u64, shape: [usize; 3]) -> Tensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&shape, |_| r.gen::<f64>())
    }

    fn model(seed: u64) -> ModelState {
        init_model(&ModelSpec::tiny_cnn(3, 16, 16, 3), seed).unwrap()
    }

    fn map_from(values: Vec<f64>, channels: usize, mask: &FrequencyMask) -> SpectralMap {
        SpectralMap {
            channels,
            height: mask.height,
            width: mask.width,
            mask: mask.clone(),
            values,
        }
    }

    #[test]
    fn zero_head_gives_zero_sensitivity() {
        let mut m = model(1);
        m.param_mut("head.weight").unwrap().data_mut().fill(0.0);
        let x = rand_image(2, [3, 16, 16]);
        let mask = spectral::low_freq_mask(16, 16, 0.5).unwrap();
        let g = amplitude_gradient(&m, &x, 0, &mask).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sensitivity_scales_with_loss() {
        let m = model(3);
        let x = rand_image(4, [3, 16, 16]);
        let mask = spectral::low_freq_mask(16, 16, 0.5).unwrap();
        let g = amplitude_gradient(&m, &x, 1, &mask).unwrap();
        let top = g.values.iter().cloned().fold(0.0, f64::max);
        for c in [2.5, 0.1, 10.0] {
            let scaled = ScaledLoss { inner: &m, scale: c };
            let gs = amplitude_gradient(&scaled, &x, 1, &mask).unwrap();
            for (a, b) in g.values.iter().zip(&gs.values) {
                assert!((c * a - b).abs() <= 1e-13 * c * top);
            }
        }
        // power-of-two scales commute with rounding, so the match is bitwise
        let gs = amplitude_gradient(&ScaledLoss { inner: &m, scale: 4.0 }, &x, 1, &mask).unwrap();
        assert!(g.values.iter().zip(&gs.values).all(|(a, b)| 4.0 * a == *b));
    }

    #[test]
    fn mask_size_mismatch_is_dimension_error() {
        let m = model(3);
        let mask = spectral::low_freq_mask(8, 8, 0.5).unwrap();
        assert!(matches!(
            amplitude_gradient(&m, &rand_image(1, [3, 16, 16]), 0, &mask),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn constant_sensitivity_maps_to_half() {
        let mask = spectral::low_freq_mask(8, 8, 0.5).unwrap();
        let g = uniform_map(2, &mask, 3.7);
        for (lo, hi, want) in [(0.0, 1.0, 0.5), (0.6, 0.9, 0.6), (0.1, 0.4, 0.4)] {
            let cfg = AugmentationConfig {
                d_min: lo,
                d_max: hi,
                ..Default::default()
            };
            let d = mixing_map(&g, &cfg);
            assert!((0..2).all(|c| d.defined(c).iter().all(|&v| v == want)));
        }
    }

    #[test]
    fn degenerate_clip_is_constant() {
        let mask = spectral::low_freq_mask(8, 8, 0.5).unwrap();
        let vals = (0..128).map(|i| (i as f64 * 0.77).sin().abs()).collect();
        let g = map_from(vals, 2, &mask);
        let cfg = AugmentationConfig {
            d_min: 0.3,
            d_max: 0.3,
            ..Default::default()
        };
        let d = mixing_map(&g, &cfg);
        assert!((0..2).all(|c| d.defined(c).iter().all(|&v| v == 0.3)));
    }

    #[test]
    fn mixing_map_step_by_step_reference() {
        // four defined bins holding G = 0, 1, 2, 3
        let mut bins = vec![false; 4];
        bins.iter_mut().for_each(|b| *b = true);
        let mask = FrequencyMask::from_bins(2, 2, bins).unwrap();
        let g = map_from(vec![0.0, 1.0, 2.0, 3.0], 1, &mask);
        let cfg = AugmentationConfig {
            d_min: 0.0,
            d_max: 1.0,
            eps: 1e-8,
            ..Default::default()
        };
        let d = mixing_map(&g, &cfg);
        let mu = 1.5;
        let sigma = (((0.0f64 - mu).powi(2) + (1.0f64 - mu).powi(2) + (2.0f64 - mu).powi(2) + (3.0f64 - mu).powi(2))
            / 4.0)
            .sqrt();
        for (i, gv) in [0.0, 1.0, 2.0, 3.0].iter().enumerate() {
            let z = (gv - mu) / (sigma + 1e-8);
            let want = 1.0 / (1.0 + (-z).exp());
            assert!((d.values[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pooled_statistics_span_channels() {
        let mask = FrequencyMask::from_bins(1, 2, vec![true, true]).unwrap();
        let g = map_from(vec![0.0, 1.0, 10.0, 11.0], 2, &mask);
        let per = mixing_map(
            &g,
            &AugmentationConfig {
                d_min: 0.0,
                d_max: 1.0,
                ..Default::default()
            },
        );
        let pooled = mixing_map(
            &g,
            &AugmentationConfig {
                d_min: 0.0,
                d_max: 1.0,
                per_channel_maps: false,
                ..Default::default()
            },
        );
        assert!((per.values[0] - per.values[2]).abs() < 1e-12);
        assert!(pooled.values[0] < 0.3 && pooled.values[2] > 0.7);
    }

    #[test]
    fn amplitude_mix_extremes() {
        let mask = spectral::low_freq_mask(4, 4, 0.5).unwrap();
        let a1: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let a2: Vec<f64> = (0..16).map(|i| 100.0 + i as f64).collect();
        let m0 = amplitude_mix(&a1, &a2, &uniform_map(1, &mask, 0.0), &mask).unwrap();
        assert_eq!(m0, a1);
        let m1 = amplitude_mix(&a1, &a2, &uniform_map(1, &mask, 1.0), &mask).unwrap();
        for (i, &inside) in mask.bins().iter().enumerate() {
            assert_eq!(m1[i], if inside { a2[i] } else { a1[i] });
        }
        assert!(amplitude_mix(&a1[..8], &a2, &uniform_map(1, &mask, 0.0), &mask).is_err());
    }

    #[test]
    fn ratio_parameters_are_checked() {
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(matches!(pixel_mix(&x, &x, 1.2), Err(Error::Parameter(_))));
        assert!(matches!(fuse(&x, &x, -0.1), Err(Error::Parameter(_))));
    }

    #[test]
    fn blending_reference_points() {
        let zero = Tensor::zeros(&[3, 4, 4]);
        let one = Tensor::full(&[3, 4, 4], 1.0);
        assert_eq!(pixel_mix(&zero, &one, 0.5).unwrap(), Tensor::full(&[3, 4, 4], 0.5));
        assert_eq!(pixel_mix(&zero, &one, 0.0).unwrap(), zero);
        assert_eq!(pixel_mix(&zero, &one, 1.0).unwrap(), one);
        assert_eq!(fuse(&zero, &one, 0.25).unwrap(), Tensor::full(&[3, 4, 4], 0.25));
    }

    #[test]
    fn config_validation() {
        assert!(AugmentationConfig::default().validate().is_ok());
        let bad = [
            AugmentationConfig {
                d_min: 0.9,
                d_max: 0.1,
                ..Default::default()
            },
            AugmentationConfig {
                eps: 0.0,
                ..Default::default()
            },
            AugmentationConfig {
                r: 0.0,
                ..Default::default()
            },
            AugmentationConfig {
                lambda2: (0.7, 0.2),
                ..Default::default()
            },
            AugmentationConfig {
                unified_ratio: 1.5,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn gradient_variants_need_a_model() {
        let x = rand_image(1, [3, 8, 8]);
        let cfg = AugmentationConfig::default();
        let mut r = stream(0, "a", 0);
        assert!(matches!(
            dgap_augment(&x, 0, &x, None, &cfg, &mut r),
            Err(Error::Contract(_))
        ));
        let v1 = AugmentationConfig {
            variant: Variant::UnifiedRatioV1,
            ..cfg
        };
        assert!(dgap_augment(&x, 0, &x, None, &v1, &mut r).is_ok());
    }
}
