//! Numerical oracle suites shared by the module tests and the acceptance run.
//! Each returns the worst error it saw; callers compare against tolerances.

use super::{central_diff, max_abs, naive_dft, rel_err, rng, uniform};
use dgap::augment::{
    self, amplitude_gradient, amplitude_mix, augment_with, fuse, mixing_map, pixel_mix, uniform_map,
    AugmentationConfig, SpectralMap, Variant,
};
use dgap::autodiff::{Graph, NodeId};
use dgap::model::{init_model, Classifier, ModelSpec, ModelState};
use dgap::rng::Stream;
use dgap::spectral::{self, low_freq_mask, AmplitudePhase};
use dgap::Tensor;
use rand::Rng;

pub struct SpectralErrors {
    pub forward: f64,
    pub inverse: f64,
    pub round_trip: f64,
    pub parseval: f64,
}

/// fft2 / ifft2 against the naive double sum on random 8×8 and 16×16
/// three-channel images and random (non-symmetric) spectra.
pub fn spectral_suite() -> SpectralErrors {
    let mut r = rng("spectral-suite");
    let mut e = SpectralErrors {
        forward: 0.0,
        inverse: 0.0,
        round_trip: 0.0,
        parseval: 0.0,
    };
    for n in [8usize, 16] {
        for _ in 0..3 {
            let x = uniform(&[3, n, n], 0.0, 1.0, &mut r);
            let s = spectral::fft2(&x).unwrap();
            for ch in 0..3 {
                let plane = &x.data()[ch * n * n..(ch + 1) * n * n];
                let (re, im) = naive_dft(plane, &vec![0.0; n * n], n, n, -1.0);
                e.forward = e.forward.max(max_abs(&s.re[ch * n * n..(ch + 1) * n * n], &re));
                e.forward = e.forward.max(max_abs(&s.im[ch * n * n..(ch + 1) * n * n], &im));
            }
            let back = spectral::ifft2(&s).unwrap();
            e.round_trip = e.round_trip.max(back.max_abs_diff(&x));
            let energy: f64 = x.data().iter().map(|v| v * v).sum();
            let amp = spectral::to_amp_phase(&s);
            let spec_energy: f64 = amp.amplitude.iter().map(|a| a * a).sum::<f64>() / (n * n) as f64;
            e.parseval = e.parseval.max(((energy - spec_energy) / energy).abs());

            let mut z = spectral::ComplexSpectrum::zeros(1, n, n);
            for v in z.re.iter_mut().chain(z.im.iter_mut()) {
                *v = r.gen_range(-5.0..5.0);
            }
            let (got_re, got_im) = spectral::ifft2_complex(&z).unwrap();
            let (re, im) = naive_dft(&z.re, &z.im, n, n, 1.0);
            let k = 1.0 / (n * n) as f64;
            let re: Vec<f64> = re.iter().map(|v| v * k).collect();
            let im: Vec<f64> = im.iter().map(|v| v * k).collect();
            e.inverse = e
                .inverse
                .max(max_abs(got_re.data(), &re))
                .max(max_abs(got_im.data(), &im));
        }
    }
    e
}

/// Scalar probe `R · flatten(build(inputs))` and its gradients for each input.
pub fn probe(inputs: &[Tensor], proj: &Tensor, build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &ids);
    let flat = g.flatten(out);
    let r = g.leaf(proj.clone(), false);
    let s = g.matmul(r, flat).unwrap();
    let loss = g.sum(s);
    let value = g.value(loss).data()[0];
    let mut grads = g.backward(loss).unwrap();
    let gs = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    (value, gs)
}

/// Worst relative error of analytic gradients against central differences
/// (h = 1e-5) for a primitive applied to `inputs`.
pub fn check_primitive(inputs: Vec<Tensor>, out_len: usize, build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId) -> f64 {
    let mut r = rng("projection");
    let proj = uniform(&[1, out_len], -1.0, 1.0, &mut r);
    let (_, analytic) = probe(&inputs, &proj, build);
    let mut worst: f64 = 0.0;
    for (k, g) in analytic.iter().enumerate() {
        let numeric = central_diff(&inputs[k], 1e-5, |xk| {
            let mut ins = inputs.clone();
            ins[k] = xk.clone();
            probe(&ins, &proj, build).0
        });
        worst = worst.max(rel_err(g.data(), &numeric));
    }
    worst
}

/// Values in ±[0.05, 1], away from the relu kink.
pub fn off_kink(shape: &[usize], r: &mut Stream) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = r.gen_range(0.05..1.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Tiny CNN with random weights and small random biases.
pub fn random_cnn(side: usize, seed: u64) -> ModelState {
    let spec = ModelSpec {
        hidden: vec![4, 6],
        ..ModelSpec::tiny_cnn(3, side, side, 3)
    };
    let mut state = init_model(&spec, seed).unwrap();
    let mut r = dgap::rng::stream(seed, "test-biases", 0);
    for p in &mut state.params {
        if p.name.ends_with("bias") {
            p.value = uniform(p.value.shape(), -0.1, 0.1, &mut r);
        }
    }
    state
}

pub struct AutodiffErrors {
    pub primitives: f64,
    pub parameters: f64,
    pub input: f64,
}

/// Every primitive, then every parameter and the input of a tiny CNN.
pub fn autodiff_suite() -> AutodiffErrors {
    let mut r = rng("autodiff-suite");
    let mut prim: f64 = 0.0;
    let a = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let b = uniform(&[4, 2], -1.0, 1.0, &mut r);
    prim = prim.max(check_primitive(vec![a, b], 6, &|g, i| g.matmul(i[0], i[1]).unwrap()));
    let x = uniform(&[2, 5, 6], -1.0, 1.0, &mut r);
    let k = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    let bias = uniform(&[3], -1.0, 1.0, &mut r);
    prim = prim.max(check_primitive(vec![x.clone(), k, bias], 90, &|g, i| {
        g.conv2d(i[0], i[1], Some(i[2])).unwrap()
    }));
    prim = prim.max(check_primitive(vec![off_kink(&[2, 3, 4], &mut r)], 24, &|g, i| {
        g.relu(i[0])
    }));
    let odd = uniform(&[2, 5, 7], -1.0, 1.0, &mut r);
    prim = prim.max(check_primitive(vec![odd], 24, &|g, i| g.avgpool2(i[0]).unwrap()));
    let p = uniform(&[3, 2], -1.0, 1.0, &mut r);
    let q = uniform(&[3, 2], -1.0, 1.0, &mut r);
    prim = prim.max(check_primitive(vec![p.clone(), q], 6, &|g, i| {
        g.add(i[0], i[1]).unwrap()
    }));
    prim = prim.max(check_primitive(vec![p.clone()], 6, &|g, i| g.scale(i[0], -1.7)));
    prim = prim.max(check_primitive(vec![p.clone()], 6, &|g, i| g.flatten(i[0])));
    prim = prim.max(check_primitive(vec![p], 1, &|g, i| g.sum(i[0])));
    let z = uniform(&[5], -2.0, 2.0, &mut r);
    prim = prim.max(check_primitive(vec![z], 1, &|g, i| {
        g.softmax_cross_entropy(i[0], 2).unwrap()
    }));

    let state = random_cnn(8, 7);
    let x = uniform(&[3, 8, 8], 0.0, 1.0, &mut r);
    let label = 1;
    let g = state
        .loss_and_grads(&x, label, dgap::model::Trainable::All, true, 1.0)
        .unwrap();
    let mut parameters: f64 = 0.0;
    for (k, p) in state.params.iter().enumerate() {
        let numeric = central_diff(&p.value, 1e-5, |v| {
            let mut s = state.clone();
            s.params[k].value = v.clone();
            s.loss(&x, label).unwrap()
        });
        parameters = parameters.max(rel_err(g.params[k].as_ref().unwrap().data(), &numeric));
    }
    let numeric = central_diff(&x, 1e-5, |x| state.loss(x, label).unwrap());
    let input = rel_err(g.input.unwrap().data(), &numeric);
    AutodiffErrors {
        primitives: prim,
        parameters,
        input,
    }
}

/// Loss after replacing the amplitude of one bin, keeping every phase.
fn loss_with_amplitude(model: &dyn Classifier, ap: &AmplitudePhase, label: usize, index: usize, value: f64) -> f64 {
    let mut p = ap.clone();
    p.amplitude[index] = value;
    p.conjugate_symmetric = false;
    let s = spectral::from_amp_phase(&p).unwrap();
    let (re, _) = spectral::ifft2_complex(&s).unwrap();
    model.loss(&re, label).unwrap()
}

/// Worst relative error of G against amplitude finite differences over
/// `bins` random (channel, u, v) picks inside Ω_r of a random 16×16 input.
pub fn amplitude_gradient_suite(bins: usize) -> f64 {
    let mut r = rng("amplitude-suite");
    let model = random_cnn(16, 11);
    let x = uniform(&[3, 16, 16], 0.0, 1.0, &mut r);
    let label = 2;
    let mask = low_freq_mask(16, 16, 0.5).unwrap();
    let g = amplitude_gradient(&model, &x, label, &mask).unwrap();
    let ap = spectral::to_amp_phase(&spectral::fft2(&x).unwrap());
    let idx = mask.indices();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..bins {
        let ch = r.gen_range(0..3);
        let (u, v) = idx[r.gen_range(0..idx.len())];
        let i = (ch * 16 + u) * 16 + v;
        let a = ap.amplitude[i];
        let fd = (loss_with_amplitude(&model, &ap, label, i, a + h)
            - loss_with_amplitude(&model, &ap, label, i, a - h))
            / (2.0 * h);
        let got = g.at(ch, u, v);
        let err = (got - fd.abs()).abs() / got.max(fd.abs()).max(1e-300);
        worst = worst.max(err);
    }
    worst
}

/// Identity, degenerate-weight and mixing-map checks; `Err` describes the
/// first violation.
pub fn augment_suite(maps: usize) -> Result<(), String> {
    let mut r = rng("augment-suite");
    let model = random_cnn(16, 5);
    let x1 = uniform(&[3, 16, 16], 0.0, 1.0, &mut r);
    let x2 = uniform(&[3, 16, 16], 0.0, 1.0, &mut r);
    let m: &dyn Classifier = &model;

    for variant in Variant::ALL {
        let cfg = AugmentationConfig {
            variant,
            ..AugmentationConfig::default()
        };
        let mut s = dgap::rng::stream(1, "suite", 0);
        let out = augment::dgap_augment(&x1, 0, &x1, Some(m), &cfg, &mut s).map_err(|e| e.to_string())?;
        let d = out.image.max_abs_diff(&x1);
        if d > 1e-8 {
            return Err(format!("{}: self-mix moved the image by {d}", variant.name()));
        }
    }

    let exact = |a: &Tensor, b: &Tensor, what: &str| -> Result<(), String> {
        if a == b {
            Ok(())
        } else {
            Err(format!("{what}: not exact, off by {}", a.max_abs_diff(b)))
        }
    };
    exact(&pixel_mix(&x1, &x2, 0.0).unwrap(), &x1, "lambda1 = 0")?;
    exact(&pixel_mix(&x1, &x2, 1.0).unwrap(), &x2, "lambda1 = 1")?;
    let cfg = AugmentationConfig::default();
    let f = augment::freq_augment(&x1, 0, &x2, Some(m), &cfg).unwrap();
    let p = pixel_mix(&x1, &x2, 0.3).unwrap();
    exact(&fuse(&f.image, &p, 0.0).unwrap(), &f.image, "lambda2 = 0")?;
    exact(&fuse(&f.image, &p, 1.0).unwrap(), &p, "lambda2 = 1")?;
    let full_id = augment_with(&x1, 0, &x2, Some(m), &cfg, 0.0, 1.0).unwrap();
    exact(&full_id.image, &x1, "full with lambda1 = 0, lambda2 = 1")?;

    let mask = low_freq_mask(16, 16, 0.5).unwrap();
    let a1: Vec<f64> = (0..3 * 256).map(|_| r.gen_range(0.0..10.0)).collect();
    let a2: Vec<f64> = (0..3 * 256).map(|_| r.gen_range(0.0..10.0)).collect();
    if amplitude_mix(&a1, &a2, &uniform_map(3, &mask, 0.0), &mask).unwrap() != a1 {
        return Err("D = 0 must return A1".into());
    }
    let one = amplitude_mix(&a1, &a2, &uniform_map(3, &mask, 1.0), &mask).unwrap();
    for ch in 0..3 {
        for (bin, &inside) in mask.bins().iter().enumerate() {
            let i = ch * 256 + bin;
            let want = if inside { a2[i] } else { a1[i] };
            if one[i] != want {
                return Err(format!("D = 1 at bin {i}: {} vs {want}", one[i]));
            }
        }
    }
    let zero_cfg = AugmentationConfig {
        d_min: 0.0,
        d_max: 0.0,
        ..cfg.clone()
    };
    let fz = augment::freq_augment(&x1, 0, &x2, Some(m), &zero_cfg).unwrap();
    if fz.image.max_abs_diff(&x1) > 1e-8 {
        return Err("d_min = d_max = 0 must reconstruct x1".into());
    }

    for k in 0..maps {
        let ch = r.gen_range(1..=3);
        let n = r.gen_range(4..=12);
        let mask = low_freq_mask(n, n, r.gen_range(0.05..=1.0)).unwrap();
        let mut values = vec![0.0; ch * n * n];
        let spread = 10f64.powf(r.gen_range(-6.0..2.0));
        for c in 0..ch {
            for (u, v) in mask.indices() {
                values[(c * n + u) * n + v] = r.gen_range(0.0..spread);
            }
        }
        let g = SpectralMap {
            channels: ch,
            height: n,
            width: n,
            mask: mask.clone(),
            values,
        };
        let lo = r.gen_range(0.0..=1.0);
        let hi = if r.gen_bool(0.1) { lo } else { r.gen_range(lo..=1.0) };
        let mcfg = AugmentationConfig {
            d_min: lo,
            d_max: hi,
            per_channel_maps: r.gen_bool(0.5),
            ..cfg.clone()
        };
        let d = mixing_map(&g, &mcfg);
        for c in 0..ch {
            let (gv, dv) = (g.defined(c), d.defined(c));
            for (i, &di) in dv.iter().enumerate() {
                if !(lo <= di && di <= hi) {
                    return Err(format!("map {k}: D = {di} outside [{lo}, {hi}]"));
                }
                for (j, &dj) in dv.iter().enumerate() {
                    if gv[i] > gv[j] && di < dj {
                        return Err(format!("map {k}: monotonicity broken at bins {i}, {j}"));
                    }
                }
            }
        }
    }
    Ok(())
}
