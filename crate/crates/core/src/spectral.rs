//! 2-D discrete Fourier analysis of C×H×W images.
//!
//! Transforms run per channel: rows first, then columns. Power-of-two
//! lengths use an iterative radix-2 transform; other lengths fall back to a
//! direct O(n²) DFT. The forward transform is unnormalized with kernel
//! `exp(-j2π(hu/H + wv/W))`; the inverse carries the `1/(H·W)` factor.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Residue above which a reconstruction flagged conjugate-symmetric is rejected.
pub const IMAG_RESIDUE_LIMIT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Cx {
    re: f64,
    im: f64,
}

impl Cx {
    #[inline]
    fn mul(self, o: Cx) -> Cx {
        Cx {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
    #[inline]
    fn add(self, o: Cx) -> Cx {
        Cx {
            re: self.re + o.re,
            im: self.im + o.im,
        }
    }
    #[inline]
    fn sub(self, o: Cx) -> Cx {
        Cx {
            re: self.re - o.re,
            im: self.im - o.im,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        }
    }
}

/// Per-channel complex spectrum, stored as two C×H×W planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    /// Set when the spectrum is known to come from a real image (or from
    /// symmetric edits of one); the inverse transform then enforces a real result.
    pub conjugate_symmetric: bool,
}

/// Polar form of a spectrum: amplitude `A ≥ 0` and phase in `(-π, π]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudePhase {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub conjugate_symmetric: bool,
}

/// Boolean selection over an H×W frequency grid (unshifted indices).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyMask {
    pub height: usize,
    pub width: usize,
    bins: Vec<bool>,
}

impl ComplexSpectrum {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        let n = channels * height * width;
        ComplexSpectrum {
            channels,
            height,
            width,
            re: vec![0.0; n],
            im: vec![0.0; n],
            conjugate_symmetric: false,
        }
    }

    /// Marks the spectrum as the transform of a real signal.
    pub fn assume_conjugate_symmetric(mut self) -> Self {
        self.conjugate_symmetric = true;
        self
    }

    /// Largest deviation from `S(u,v) = conj(S(-u,-v))` over all bins.
    pub fn symmetry_defect(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let mut worst: f64 = 0.0;
        for c in 0..self.channels {
            for u in 0..h {
                for v in 0..w {
                    let i = (c * h + u) * w + v;
                    let j = (c * h + (h - u) % h) * w + (w - v) % w;
                    worst = worst
                        .max((self.re[i] - self.re[j]).abs())
                        .max((self.im[i] + self.im[j]).abs());
                }
            }
        }
        worst
    }

    /// `a·self + b·other`, elementwise.
    pub fn lincomb(&self, a: f64, other: &ComplexSpectrum, b: f64) -> Result<ComplexSpectrum> {
        if (self.channels, self.height, self.width) != (other.channels, other.height, other.width) {
            return Err(Error::Dimension("spectra of different sizes".into()));
        }
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| a * p + b * q).collect() };
        Ok(ComplexSpectrum {
            channels: self.channels,
            height: self.height,
            width: self.width,
            re: mix(&self.re, &other.re),
            im: mix(&self.im, &other.im),
            conjugate_symmetric: self.conjugate_symmetric && other.conjugate_symmetric,
        })
    }
}

impl FrequencyMask {
    pub fn from_bins(height: usize, width: usize, bins: Vec<bool>) -> Result<Self> {
        if bins.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask of {} bins does not cover a {height}×{width} grid",
                bins.len()
            )));
        }
        Ok(FrequencyMask { height, width, bins })
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.bins[u * self.width + v]
    }

    pub fn bins(&self) -> &[bool] {
        &self.bins
    }

    pub fn count(&self) -> usize {
        self.bins.iter().filter(|&&b| b).count()
    }

    /// Selected bins in row-major order.
    pub fn indices(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|u| (0..self.width).map(move |v| (u, v)))
            .filter(|&(u, v)| self.contains(u, v))
            .collect()
    }

    pub fn is_conjugate_symmetric(&self) -> bool {
        let (h, w) = (self.height, self.width);
        self.indices()
            .into_iter()
            .all(|(u, v)| self.contains((h - u) % h, (w - v) % w))
    }
}

/// Signed frequency of unshifted index `k` on an axis of length `n`,
/// folded into `(-n/2, n/2]`.
fn signed_freq(k: usize, n: usize) -> f64 {
    if 2 * k > n {
        k as f64 - n as f64
    } else {
        k as f64
    }
}

/// Low-frequency square Ω_r around the DC bin.
///
/// The side is `s = max(1, round(r·min(H, W)))`. A bin is selected when both
/// of its signed frequencies satisfy `|f| ≤ s/2`, which keeps the set closed
/// under `(u, v) ↦ (-u, -v)`. Odd `s` selects exactly `s²` bins; even `s`
/// below the grid side selects `(s+1)²`, since a conjugate-closed set of even
/// side cannot contain DC without also containing the Nyquist bin.
pub fn low_freq_mask(height: usize, width: usize, r: f64) -> Result<FrequencyMask> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Parameter(format!("mask fraction r must lie in (0, 1], got {r}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Dimension("mask grid must be nonempty".into()));
    }
    let side = ((r * height.min(width) as f64).round() as usize).max(1);
    let half = side as f64 / 2.0;
    let mut bins = vec![false; height * width];
    for u in 0..height {
        let fu = signed_freq(u, height).abs();
        for v in 0..width {
            let fv = signed_freq(v, width).abs();
            // at the Nyquist bin +n/2 and -n/2 coincide, so |f| = n/2 is
            // already symmetric
            bins[u * width + v] = fu <= half && fv <= half;
        }
    }
    FrequencyMask::from_bins(height, width, bins)
}

fn fft_in_place(buf: &mut [Cx], dir: Direction) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, dir);
    } else {
        let out = naive_dft(buf, dir);
        buf.copy_from_slice(&out);
    }
}

fn radix2(buf: &mut [Cx], dir: Direction) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = dir.sign();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // twiddles evaluated directly rather than by recurrence
        let tw: Vec<Cx> = (0..half)
            .map(|k| {
                let ang = sign * 2.0 * PI * k as f64 / len as f64;
                Cx {
                    re: ang.cos(),
                    im: ang.sin(),
                }
            })
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half].mul(tw[k]);
                buf[start + k] = a.add(b);
                buf[start + k + half] = a.sub(b);
            }
        }
        len <<= 1;
    }
}

fn naive_dft(input: &[Cx], dir: Direction) -> Vec<Cx> {
    let n = input.len();
    let sign = dir.sign();
    (0..n)
        .map(|k| {
            input.iter().enumerate().fold(Cx::default(), |acc, (t, &x)| {
                // reduce k·t mod n before scaling to keep the angle small
                let ang = sign * 2.0 * PI * ((k * t) % n) as f64 / n as f64;
                acc.add(x.mul(Cx {
                    re: ang.cos(),
                    im: ang.sin(),
                }))
            })
        })
        .collect()
}

/// Rows then columns of one H×W plane.
fn transform_plane(plane: &mut [Cx], h: usize, w: usize, dir: Direction) {
    for row in plane.chunks_exact_mut(w) {
        fft_in_place(row, dir);
    }
    let mut col = vec![Cx::default(); h];
    for v in 0..w {
        for u in 0..h {
            col[u] = plane[u * w + v];
        }
        fft_in_place(&mut col, dir);
        for u in 0..h {
            plane[u * w + v] = col[u];
        }
    }
}

/// Forward 2-D DFT of every channel of a C×H×W image.
pub fn fft2(image: &Tensor) -> Result<ComplexSpectrum> {
    let (c, h, w) = image.chw()?;
    let mut spec = ComplexSpectrum::zeros(c, h, w);
    let mut plane = vec![Cx::default(); h * w];
    for ch in 0..c {
        let src = &image.data()[ch * h * w..(ch + 1) * h * w];
        for (p, &x) in plane.iter_mut().zip(src) {
            *p = Cx { re: x, im: 0.0 };
        }
        transform_plane(&mut plane, h, w, Direction::Forward);
        let off = ch * h * w;
        for (i, p) in plane.iter().enumerate() {
            spec.re[off + i] = p.re;
            spec.im[off + i] = p.im;
        }
    }
    spec.conjugate_symmetric = true;
    Ok(spec)
}

/// Inverse 2-D DFT with `1/(H·W)` normalization; returns the real part
/// together with the largest imaginary residue.
pub fn ifft2_complex(spectrum: &ComplexSpectrum) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = (spectrum.channels, spectrum.height, spectrum.width);
    let n = c * h * w;
    if c == 0 || h == 0 || w == 0 || spectrum.re.len() != n || spectrum.im.len() != n {
        return Err(Error::Dimension(format!("spectrum buffers do not match {c}×{h}×{w}")));
    }
    let scale = 1.0 / (h * w) as f64;
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    let mut plane = vec![Cx::default(); h * w];
    for ch in 0..c {
        let off = ch * h * w;
        for (i, p) in plane.iter_mut().enumerate() {
            *p = Cx {
                re: spectrum.re[off + i],
                im: spectrum.im[off + i],
            };
        }
        transform_plane(&mut plane, h, w, Direction::Inverse);
        for (i, p) in plane.iter().enumerate() {
            re[off + i] = p.re * scale;
            im[off + i] = p.im * scale;
        }
    }
    Ok((Tensor::new(vec![c, h, w], re)?, Tensor::new(vec![c, h, w], im)?))
}

/// Inverse 2-D DFT returning a real image. Spectra flagged
/// conjugate-symmetric must reconstruct with imaginary residue below
/// [`IMAG_RESIDUE_LIMIT`]; otherwise the imaginary part is dropped as is.
pub fn ifft2(spectrum: &ComplexSpectrum) -> Result<Tensor> {
    let (re, im) = ifft2_complex(spectrum)?;
    if spectrum.conjugate_symmetric {
        let residue = im.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if residue > IMAG_RESIDUE_LIMIT || !residue.is_finite() {
            return Err(Error::Numeric(format!(
                "inverse transform of a conjugate-symmetric spectrum left imaginary residue {residue:e}"
            )));
        }
    }
    Ok(re)
}

pub fn to_amp_phase(spectrum: &ComplexSpectrum) -> AmplitudePhase {
    let amplitude = spectrum
        .re
        .iter()
        .zip(&spectrum.im)
        .map(|(r, i)| (r * r + i * i).sqrt())
        .collect();
    let phase = spectrum.re.iter().zip(&spectrum.im).map(|(r, i)| i.atan2(*r)).collect();
    AmplitudePhase {
        channels: spectrum.channels,
        height: spectrum.height,
        width: spectrum.width,
        amplitude,
        phase,
        conjugate_symmetric: spectrum.conjugate_symmetric,
    }
}

/// `S = A·exp(+jP)`.
pub fn from_amp_phase(ap: &AmplitudePhase) -> Result<ComplexSpectrum> {
    if ap.amplitude.len() != ap.phase.len() {
        return Err(Error::Dimension("amplitude and phase grids differ in size".into()));
    }
    if let Some(i) = ap.amplitude.iter().position(|&a| a.is_nan() || a < 0.0) {
        return Err(Error::Contract(format!(
            "amplitude must be nonnegative, entry {i} is {}",
            ap.amplitude[i]
        )));
    }
    let (re, im) = ap
        .amplitude
        .iter()
        .zip(&ap.phase)
        .map(|(a, p)| (a * p.cos(), a * p.sin()))
        .unzip();
    Ok(ComplexSpectrum {
        channels: ap.channels,
        height: ap.height,
        width: ap.width,
        re,
        im,
        conjugate_symmetric: ap.conjugate_symmetric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[c, h, w], |_| rng.gen::<f64>())
    }

    #[test]
    fn constant_image_is_dc_only() {
        let x = Tensor::full(&[1, 8, 8], 0.25);
        let ap = to_amp_phase(&fft2(&x).unwrap());
        assert!((ap.amplitude[0] - 0.25 * 64.0).abs() < 1e-9);
        assert!(ap.amplitude[1..].iter().all(|&a| a < 1e-9));
        assert_eq!(ap.phase[0], 0.0);
    }

    #[test]
    fn impulse_has_flat_amplitude() {
        let mut x = Tensor::zeros(&[1, 8, 4]);
        x.data_mut()[0] = 1.0;
        let ap = to_amp_phase(&fft2(&x).unwrap());
        assert!(ap.amplitude.iter().all(|&a| (a - 1.0).abs() < 1e-9));
    }

    #[test]
    fn radix2_and_naive_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Cx> = (0..16)
            .map(|_| Cx {
                re: rng.gen_range(-1.0..1.0),
                im: rng.gen_range(-1.0..1.0),
            })
            .collect();
        let mut fast = data.clone();
        radix2(&mut fast, Direction::Forward);
        let slow = naive_dft(&data, Direction::Forward);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a.re - b.re).abs() < 1e-9 && (a.im - b.im).abs() < 1e-9);
        }
    }

    #[test]
    fn non_power_of_two_round_trip() {
        let x = rand_image(6, 2, 6, 5);
        let y = ifft2(&fft2(&x).unwrap()).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-10);
    }

    #[test]
    fn real_image_spectrum_is_conjugate_symmetric() {
        let s = fft2(&rand_image(7, 3, 8, 6)).unwrap();
        assert!(s.symmetry_defect() < 1e-9);
    }

    #[test]
    fn linearity_of_inverse() {
        let s1 = fft2(&rand_image(8, 1, 8, 8)).unwrap();
        let s2 = fft2(&rand_image(9, 1, 8, 8)).unwrap();
        let (a, b) = (0.7, -1.3);
        let lhs = ifft2(&s1.lincomb(a, &s2, b).unwrap()).unwrap();
        let rhs = ifft2(&s1)
            .unwrap()
            .scaled(a)
            .add(&ifft2(&s2).unwrap().scaled(b))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn flagged_asymmetric_spectrum_is_rejected() {
        let mut s = fft2(&rand_image(10, 1, 8, 8)).unwrap();
        s.im[1] += 1.0;
        assert!(matches!(ifft2(&s), Err(Error::Numeric(_))));
        s.conjugate_symmetric = false;
        assert!(ifft2(&s).is_ok());
    }

    #[test]
    fn polar_hand_case_and_inverse_pair() {
        let mut s = ComplexSpectrum::zeros(1, 1, 2);
        s.re[1] = 3.0;
        s.im[1] = 4.0;
        let ap = to_amp_phase(&s);
        assert!((ap.amplitude[1] - 5.0).abs() < 1e-15);
        assert!((ap.phase[1] - 4f64.atan2(3.0)).abs() < 1e-15);

        let s = fft2(&rand_image(11, 2, 8, 8)).unwrap();
        let ap = to_amp_phase(&s);
        for i in 0..s.re.len() {
            let d = ap.amplitude[i].powi(2) - (s.re[i].powi(2) + s.im[i].powi(2));
            assert!(d.abs() < 1e-9);
        }
        let back = from_amp_phase(&ap).unwrap();
        for i in 0..s.re.len() {
            assert!((back.re[i] - s.re[i]).abs() < 1e-9 && (back.im[i] - s.im[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_amplitude_gives_zero_spectrum_and_negative_is_rejected() {
        let mut ap = AmplitudePhase {
            channels: 1,
            height: 2,
            width: 2,
            amplitude: vec![0.0; 4],
            phase: vec![0.3, -1.0, 2.0, 3.1],
            conjugate_symmetric: false,
        };
        let s = from_amp_phase(&ap).unwrap();
        assert!(s.re.iter().chain(&s.im).all(|&v| v == 0.0));
        ap.amplitude[2] = -1e-3;
        assert!(matches!(from_amp_phase(&ap), Err(Error::Contract(_))));
    }

    #[test]
    fn per_bin_polar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let amplitude: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..5.0)).collect();
        let phase: Vec<f64> = (0..48).map(|_| rng.gen_range(-PI..PI)).collect();
        let ap = AmplitudePhase {
            channels: 3,
            height: 4,
            width: 4,
            amplitude: amplitude.clone(),
            phase: phase.clone(),
            conjugate_symmetric: false,
        };
        let s = from_amp_phase(&ap).unwrap();
        for i in 0..48 {
            assert!((s.re[i] - amplitude[i] * phase[i].cos()).abs() < 1e-12);
            assert!((s.im[i] - amplitude[i] * phase[i].sin()).abs() < 1e-12);
        }
    }

    fn enumerate_mask(h: usize, w: usize, half: f64) -> usize {
        // independent count: walk centered coordinates
        let mut n = 0;
        for cu in 0..h {
            for cv in 0..w {
                let fu = cu as f64 - (h / 2) as f64;
                let fv = cv as f64 - (w / 2) as f64;
                // fold the most negative centered index onto +n/2
                let fu = if fu == -((h / 2) as f64) && h.is_multiple_of(2) {
                    -fu
                } else {
                    fu
                };
                let fv = if fv == -((w / 2) as f64) && w.is_multiple_of(2) {
                    -fv
                } else {
                    fv
                };
                if fu.abs() <= half && fv.abs() <= half {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn mask_sizes() {
        assert_eq!(low_freq_mask(8, 8, 1.0).unwrap().count(), 64);
        let m = low_freq_mask(8, 8, 0.05).unwrap();
        assert_eq!(m.indices(), vec![(0, 0)]);
        let m = low_freq_mask(8, 8, 0.375).unwrap(); // s = 3
        assert_eq!(m.count(), 9);
        let m = low_freq_mask(8, 8, 0.5).unwrap(); // s = 4 → 5×5
        assert_eq!(m.count(), enumerate_mask(8, 8, 2.0));
        assert_eq!(m.count(), 25);
        for (h, w, r) in [(8, 8, 0.5), (16, 16, 0.3), (7, 9, 0.6), (32, 32, 0.5), (6, 10, 1.0)] {
            let m = low_freq_mask(h, w, r).unwrap();
            assert!(m.is_conjugate_symmetric(), "{h}x{w} r={r}");
            assert!(m.contains(0, 0));
        }
    }

    #[test]
    fn mask_rejects_bad_fraction() {
        for r in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(matches!(low_freq_mask(8, 8, r), Err(Error::Parameter(_))));
        }
    }
}
