//! Procedural multi-domain image benchmarks.
//!
//! Each image is a class shape (domain-independent geometry) rendered under a
//! domain style (label-independent): a band-limited noise texture at the
//! domain's own spatial frequency, a per-channel gain and offset, and a smooth
//! background ramp. A little white noise sits on top. Every example draws its
//! randomness from its own counter-derived stream, so generation order does
//! not matter.

pub mod image_io;
pub mod manifest;
mod pairs;

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::spectral::{self, ComplexSpectrum};
use crate::tensor::Tensor;

pub(crate) use pairs::partner_from_other_domain;
pub use pairs::{sample_pair, PairMode};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub image: Tensor,
    pub label: usize,
    pub domain: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Bars,
    Disk,
    Checker,
    Ring,
    Cross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Bars,
        ShapeKind::Disk,
        ShapeKind::Checker,
        ShapeKind::Ring,
        ShapeKind::Cross,
    ];
}

/// Label-independent appearance of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainStyle {
    /// Radius of the noise annulus, in cycles per image side.
    pub noise_freq: f64,
    /// Standard deviation of the band-limited texture.
    pub noise_power: f64,
    pub gain: [f64; 3],
    pub offset: [f64; 3],
    /// Direction of the background ramp, radians.
    pub ramp_angle: f64,
    /// Peak-to-peak height of the background ramp.
    pub ramp_height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainShiftSpec {
    pub classes: usize,
    pub side: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub train_per_cell: usize,
    pub test_per_cell: usize,
    pub unlabeled_per_domain: usize,
    /// Standard deviation of the per-pixel white noise.
    pub noise_floor: f64,
    /// Object intensity is drawn from this range.
    pub contrast: (f64, f64),
    /// Multiplier applied to every domain's texture power.
    pub style_strength: f64,
    pub styles: Vec<DomainStyle>,
}

impl Default for DomainShiftSpec {
    fn default() -> Self {
        DomainShiftSpec {
            classes: 3,
            side: 32,
            channels: 3,
            train_per_cell: 200,
            test_per_cell: 50,
            unlabeled_per_domain: 200,
            noise_floor: 0.03,
            contrast: (0.25, 0.45),
            style_strength: 1.0,
            styles: default_styles(),
        }
    }
}

/// Six domains: indices 0–3 are the default sources, 4–5 the targets.
pub fn default_styles() -> Vec<DomainStyle> {
    let s = |noise_freq, noise_power, gain, offset, ramp_angle: f64, ramp_height| DomainStyle {
        noise_freq,
        noise_power,
        gain,
        offset,
        ramp_angle,
        ramp_height,
    };
    vec![
        s(2.0, 0.06, [1.0, 0.9, 0.8], [0.05, 0.05, 0.05], 0.0, 0.10),
        s(4.0, 0.06, [0.8, 1.0, 0.9], [0.10, 0.05, 0.00], 1.6, 0.10),
        s(9.0, 0.06, [0.9, 0.8, 1.0], [0.00, 0.05, 0.10], 3.1, 0.10),
        s(12.0, 0.06, [1.0, 1.0, 1.0], [0.05, 0.00, 0.05], 4.7, 0.10),
        // targets: washed out, low contrast
        s(14.0, 0.08, [0.35, 0.40, 0.45], [0.40, 0.35, 0.30], 0.8, 0.10),
        s(15.0, 0.08, [0.45, 0.30, 0.35], [0.30, 0.45, 0.40], 2.4, 0.10),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub classes: usize,
    pub source_domains: Vec<usize>,
    pub target_domains: Vec<usize>,
    pub train: Vec<LabeledExample>,
    /// Target-domain images; labels are withheld from training code by convention.
    pub target_unlabeled: Vec<Tensor>,
    pub id_test: Vec<LabeledExample>,
    pub ood_test: Vec<LabeledExample>,
}

impl DatasetBundle {
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.train[0].image.shape();
        [s[0], s[1], s[2]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Unlabeled,
    IdTest,
    OodTest,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Unlabeled => "target_unlabeled",
            Split::IdTest => "id_test",
            Split::OodTest => "ood_test",
        }
    }

    fn stream_index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Unlabeled => 1,
            Split::IdTest => 2,
            Split::OodTest => 3,
        }
    }
}

impl DomainShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > ShapeKind::ALL.len() {
            return Err(Error::Spec(format!(
                "class count must be in 2..={}, got {}",
                ShapeKind::ALL.len(),
                self.classes
            )));
        }
        if self.side < 8 {
            return Err(Error::Spec(format!("image side must be ≥ 8, got {}", self.side)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Spec(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.train_per_cell == 0 || self.test_per_cell == 0 || self.unlabeled_per_domain == 0 {
            return Err(Error::Spec("per-cell counts must be ≥ 1".into()));
        }
        if self.noise_floor.is_nan()
            || self.noise_floor < 0.0
            || self.style_strength.is_nan()
            || self.style_strength < 0.0
        {
            return Err(Error::Spec("noise floor and style strength must be nonnegative".into()));
        }
        if !(self.contrast.0 > 0.0 && self.contrast.0 <= self.contrast.1) {
            return Err(Error::Spec(format!("bad contrast range {:?}", self.contrast)));
        }
        Ok(())
    }

    /// Renders one example. `index` identifies the example within its split
    /// and (class, domain) cell.
    pub fn render(&self, seed: u64, split: Split, class: usize, domain: usize, index: usize) -> Result<Tensor> {
        let style = self
            .styles
            .get(domain)
            .ok_or_else(|| Error::Spec(format!("no style for domain {domain}")))?;
        let key = ((split.stream_index() * 64 + class as u64) * 1024 + domain as u64) << 24 | index as u64;
        let mut r = rng::stream(seed, "example", key);
        let n = self.side;
        let shape = ShapeKind::ALL[class];
        let contrast = r.gen_range(self.contrast.0..=self.contrast.1);
        let object = render_shape(shape, n, &mut r);
        let texture = band_noise(n, style.noise_freq, &mut r)?;
        let texture_power = style.noise_power * self.style_strength;
        let (ca, sa) = (style.ramp_angle.cos(), style.ramp_angle.sin());
        let mut data = vec![0.0; self.channels * n * n];
        let gains: Vec<f64> = (0..self.channels)
            .map(|c| {
                if self.channels == 1 {
                    mean3(&style.gain)
                } else {
                    style.gain[c]
                }
            })
            .collect();
        let offsets: Vec<f64> = (0..self.channels)
            .map(|c| {
                if self.channels == 1 {
                    mean3(&style.offset)
                } else {
                    style.offset[c]
                }
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                let (y, x) = (i as f64 / (n - 1) as f64 - 0.5, j as f64 / (n - 1) as f64 - 0.5);
                let ramp = style.ramp_height * (x * ca + y * sa);
                let base = 0.35 + ramp + contrast * object[i * n + j] + texture_power * texture[i * n + j];
                for c in 0..self.channels {
                    let white: f64 = if self.noise_floor > 0.0 {
                        self.noise_floor * standard_normal(&mut r)
                    } else {
                        0.0
                    };
                    let v = gains[c] * base + offsets[c] + white;
                    data[(c * n + i) * n + j] = v.clamp(0.0, 1.0);
                }
            }
        }
        Tensor::new(vec![self.channels, n, n], data)
    }
}

fn mean3(v: &[f64; 3]) -> f64 {
    (v[0] + v[1] + v[2]) / 3.0
}

fn standard_normal(r: &mut Stream) -> f64 {
    // Box–Muller
    let u1: f64 = r.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Class geometry in [0, 1], with random placement and size.
fn render_shape(kind: ShapeKind, n: usize, r: &mut Stream) -> Vec<f64> {
    let nf = n as f64;
    let cy = r.gen_range(0.35..0.65) * nf;
    let cx = r.gen_range(0.35..0.65) * nf;
    let size = r.gen_range(0.22..0.30) * nf;
    let theta: f64 = r.gen_range(0.0..PI);
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (dy, dx) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
            let rad = (dy * dy + dx * dx).sqrt();
            let v = match kind {
                ShapeKind::Bars => {
                    let along = dx * theta.cos() + dy * theta.sin();
                    let inside = rad < size;
                    let stripe = (along / (size / 2.5) * PI).sin() > 0.0;
                    (inside && stripe) as u8 as f64
                }
                ShapeKind::Disk => (rad < size * 0.8) as u8 as f64,
                ShapeKind::Checker => {
                    let inside = dy.abs() < size * 0.8 && dx.abs() < size * 0.8;
                    let tile = size * 0.4;
                    let parity = ((dy / tile).floor() as i64 + (dx / tile).floor() as i64).rem_euclid(2);
                    (inside && parity == 0) as u8 as f64
                }
                ShapeKind::Ring => (rad < size && rad > size * 0.6) as u8 as f64,
                ShapeKind::Cross => {
                    let arm = size * 0.25;
                    let inside = (dy.abs() < arm && dx.abs() < size) || (dx.abs() < arm && dy.abs() < size);
                    inside as u8 as f64
                }
            };
            out[i * n + j] = v;
        }
    }
    out
}

/// Unit-variance real texture whose spectrum is confined to the annulus
/// `|f| ∈ [freq - 0.5, freq + 0.5)`, with random phases.
fn band_noise(n: usize, freq: f64, r: &mut Stream) -> Result<Vec<f64>> {
    let mut spec = ComplexSpectrum::zeros(1, n, n);
    let signed = |k: usize| if 2 * k > n { k as f64 - n as f64 } else { k as f64 };
    for u in 0..n {
        for v in 0..n {
            let (fu, fv) = (signed(u), signed(v));
            let rad = (fu * fu + fv * fv).sqrt();
            if rad < freq - 0.5 || rad >= freq + 0.5 {
                continue;
            }
            // fill each conjugate pair once from the lexicographically smaller bin
            let (cu, cv) = ((n - u) % n, (n - v) % n);
            if (cu, cv) < (u, v) {
                continue;
            }
            let phase: f64 = r.gen_range(-PI..PI);
            let i = u * n + v;
            let j = cu * n + cv;
            if i == j {
                spec.re[i] = phase.cos().signum();
            } else {
                spec.re[i] = phase.cos();
                spec.im[i] = phase.sin();
                spec.re[j] = phase.cos();
                spec.im[j] = -phase.sin();
            }
        }
    }
    let spec = spec.assume_conjugate_symmetric();
    let img = spectral::ifft2(&spec)?;
    let d = img.into_data();
    let var = d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
    if var == 0.0 {
        return Ok(d);
    }
    let s = var.sqrt();
    Ok(d.into_iter().map(|v| v / s).collect())
}

/// Generates train / target_unlabeled / id_test / ood_test splits.
pub fn generate_dataset(
    spec: &DomainShiftSpec,
    source_domains: &[usize],
    target_domains: &[usize],
    seed: u64,
) -> Result<DatasetBundle> {
    spec.validate()?;
    let src: BTreeSet<usize> = source_domains.iter().copied().collect();
    let tgt: BTreeSet<usize> = target_domains.iter().copied().collect();
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::Spec("need at least one source and one target domain".into()));
    }
    if src.len() != source_domains.len() || tgt.len() != target_domains.len() {
        return Err(Error::Spec("domain lists contain duplicates".into()));
    }
    if let Some(d) = src.intersection(&tgt).next() {
        return Err(Error::Spec(format!("domain {d} is both source and target")));
    }
    if let Some(&d) = src.union(&tgt).find(|&&d| d >= spec.styles.len()) {
        return Err(Error::Spec(format!(
            "domain {d} has no style ({} styles defined)",
            spec.styles.len()
        )));
    }
    let labeled = |split: Split, domains: &[usize], per: usize| -> Result<Vec<LabeledExample>> {
        let mut out = Vec::new();
        for &d in domains {
            for y in 0..spec.classes {
                for i in 0..per {
                    out.push(LabeledExample {
                        image: spec.render(seed, split, y, d, i)?,
                        label: y,
                        domain: d,
                    });
                }
            }
        }
        Ok(out)
    };
    let mut target_unlabeled = Vec::new();
    for &d in target_domains {
        // classes cycle so the unlabeled pool is balanced too
        for i in 0..spec.unlabeled_per_domain {
            target_unlabeled.push(spec.render(seed, Split::Unlabeled, i % spec.classes, d, i)?);
        }
    }
    Ok(DatasetBundle {
        classes: spec.classes,
        source_domains: source_domains.to_vec(),
        target_domains: target_domains.to_vec(),
        train: labeled(Split::Train, source_domains, spec.train_per_cell)?,
        target_unlabeled,
        id_test: labeled(Split::IdTest, source_domains, spec.test_per_cell)?,
        ood_test: labeled(Split::OodTest, target_domains, spec.test_per_cell)?,
    })
}

/// Mean spectral energy of `images` inside the annulus of `domain`'s texture.
pub fn band_energy(images: &[&Tensor], style: &DomainStyle) -> Result<f64> {
    let mut total = 0.0;
    for img in images {
        let (c, h, w) = img.chw()?;
        let ap = spectral::to_amp_phase(&spectral::fft2(img)?);
        let signed = |k: usize, n: usize| if 2 * k > n { k as f64 - n as f64 } else { k as f64 };
        for ch in 0..c {
            for u in 0..h {
                for v in 0..w {
                    let rad = (signed(u, h).powi(2) + signed(v, w).powi(2)).sqrt();
                    if rad >= style.noise_freq - 0.5 && rad < style.noise_freq + 0.5 {
                        total += ap.amplitude[(ch * h + u) * w + v].powi(2);
                    }
                }
            }
        }
    }
    Ok(total / images.len() as f64)
}
