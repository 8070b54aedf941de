#![allow(dead_code)]

pub mod suites;

use dgap::data::{DomainShiftSpec, LabeledExample};
use dgap::rng::{self, Stream};
use dgap::Tensor;
use rand::Rng;

pub fn rng(tag: &str) -> Stream {
    rng::stream(12345, tag, 0)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut Stream) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(x: &Tensor, h: f64, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// A small bundle spec that trains in seconds.
pub fn small_spec(side: usize, per_cell: usize) -> DomainShiftSpec {
    DomainShiftSpec {
        side,
        train_per_cell: per_cell,
        test_per_cell: per_cell / 2,
        unlabeled_per_domain: per_cell,
        ..DomainShiftSpec::default()
    }
}

/// Naive O(N⁴) DFT of one H×W plane; `sign` −1 forward, +1 inverse (unnormalized).
pub fn naive_dft(re: &[f64], im: &[f64], h: usize, w: usize, sign: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out_re = vec![0.0; h * w];
    let mut out_im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let t = sign * 2.0 * std::f64::consts::PI * ((y * u) as f64 / h as f64 + (x * v) as f64 / w as f64);
                    let (s, c) = t.sin_cos();
                    let (a, b) = (re[y * w + x], im[y * w + x]);
                    sr += a * c - b * s;
                    si += a * s + b * c;
                }
            }
            out_re[u * w + v] = sr;
            out_im[u * w + v] = si;
        }
    }
    (out_re, out_im)
}

pub fn labels_of(examples: &[LabeledExample]) -> Vec<usize> {
    examples.iter().map(|e| e.label).collect()
}

/// Config text for subcommands that finish in about a second.
pub const TINY_CONFIG: &str = "\
data.side = 8
data.train_per_cell = 6
data.test_per_cell = 3
data.unlabeled_per_domain = 4
model.hidden = 4,4
train.pretrain_epochs = 1
train.probe_epochs = 1
train.finetune_epochs = 1
train.batch_size = 8
train.seeds = 1,2,3
connectivity.pairs_per_category = 1
connectivity.probe_epochs = 1
connectivity.seeds = 1,2
preview.pairs = 2
";

/// Runs the command line in-process with `--config <dir>/tiny.cfg --out <dir>/<out>`.
pub fn run_cli(dir: &std::path::Path, out: &str, config: &str, args: &[&str]) -> i32 {
    let cfg = dir.join(format!("{out}.cfg"));
    std::fs::write(&cfg, config).unwrap();
    let mut argv = vec![
        "dgap".to_string(),
        "--config".into(),
        cfg.to_string_lossy().into_owned(),
        "--out".into(),
        dir.join(out).to_string_lossy().into_owned(),
    ];
    argv.extend(args.iter().map(|s| s.to_string()));
    dgap::cli::main_with_args(argv)
}

/// Relative path and contents of every file under `root` with one of `exts`.
pub fn files_with_ext(root: &std::path::Path, exts: &[&str]) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| exts.iter().any(|x| e == *x)) {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Config text that sets every key to a valid non-default value.
pub fn every_key_config() -> String {
    let mut s = String::from(
        "\
seed = 17
out = runs/x
data.classes = 4
data.side = 12
data.channels = 1
data.train_per_cell = 7
data.test_per_cell = 5
data.unlabeled_per_domain = 9
data.noise_floor = 0.045
data.contrast_min = 0.2
data.contrast_max = 0.5
data.style_strength = 0.75
data.source_domains = 1,2,3
data.target_domains = 0,5
model.kind = mlp
model.hidden = 9,5,3
augment.r = 0.375
augment.d_min = 0.15
augment.d_max = 0.85
augment.eps = 0.0000025
augment.lambda1_max = 0.6
augment.lambda2_min = 0.3
augment.lambda2_max = 0.7
augment.variant = unified_ratio_v1
augment.unified_ratio = 0.4
augment.per_channel_maps = false
train.pretrain_epochs = 3
train.probe_epochs = 4
train.finetune_epochs = 5
train.batch_size = 16
train.pretrain_lr = 0.011
train.probe_lr = 0.033
train.finetune_lr = 0.0025
train.optimizer = sgd
train.momentum = 0.5
train.augmented_fraction = 0.25
train.pair_mode = dg
train.seeds = 9,8
connectivity.pairs_per_category = 3
connectivity.include_rho = true
connectivity.probe_epochs = 6
connectivity.probe_lr = 0.07
connectivity.batch_size = 12
connectivity.momentum = 0.8
connectivity.train_fraction = 0.6
connectivity.variant = frequency_only
connectivity.seeds = 4,6
preview.pairs = 3
",
    );
    for i in 0..dgap::data::default_styles().len() {
        let f = i as f64;
        s.push_str(&format!(
            "data.style.{i}.noise_freq = {}\ndata.style.{i}.noise_power = {}\ndata.style.{i}.gain = 0.5,0.6,{}\n\
             data.style.{i}.offset = 0.01,{},0.03\ndata.style.{i}.ramp_angle = {}\ndata.style.{i}.ramp_height = {}\n",
            3.5 + f,
            0.01 * (f + 1.0),
            0.7 + 0.01 * f,
            0.02 + 0.001 * f,
            0.3 * f + 0.1,
            0.05 + 0.011 * f
        ));
    }
    s
}
