//! Command-line front end: subcommands, artifact writers and exit codes.
//!
//! Exit codes are 0 on success, 2 for configuration or usage errors and 3
//! for anything that goes wrong at run time. Every subcommand appends one
//! line to `provenance.log` in the output directory, with status
//! `incomplete` when it fails part way.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::augment::{self, SpectralMap, Variant};
use crate::config::RunConfig;
use crate::connectivity::{self, Augmenter, Category, ConnectivityReport};
use crate::data::{self, generate_dataset, image_io, manifest, DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::{self, init_model, ModelState};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::{self, RunRecord};

pub const CSV_HEADER: &str = "run_id,variant,seed,split,metric,value";
pub const CONNECTIVITY_HEADER: &str = "seed,dataset,category,pair,connectivity";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "dgap",
    version,
    about = "Gradient-guided amplitude and pixel augmentation lab"
)]
pub struct Cli {
    /// key = value configuration file; absent keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overrides `out` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent arms or pairs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the synthetic bundle to images plus a manifest.
    Generate,
    /// LP-FT with the configured augmentation; writes checkpoints and metrics.
    Train,
    /// Five-arm ablation over `train.seeds`.
    Ablation,
    /// Connectivity of the original and augmented source data.
    Connectivity,
    /// Dump augmentation intermediates for a few sampled pairs.
    Preview {
        /// Number of pairs, overrides `preview.pairs`.
        #[arg(long)]
        pairs: Option<usize>,
        /// Model used for the sensitivity maps; freshly initialized if absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Ablation => "ablation",
            Command::Connectivity => "connectivity",
            Command::Preview { .. } => "preview",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Resolves the configuration: file (or defaults), then flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::parse_file(p).map_err(|e| match e {
            Error::Io { source, .. } => Error::Config {
                line: 0,
                key: "--config".into(),
                message: format!("cannot read {}: {source}", p.display()),
            },
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    if let Command::Preview { pairs: Some(n), .. } = cli.command {
        cfg.preview_pairs = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(Error::Config {
            line: 0,
            key: "--jobs".into(),
            message: "expected a positive integer".into(),
        });
    }
    let cfg = resolve_config(cli)?;
    let out = PathBuf::from(&cfg.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    fs::write(out.join("config.txt"), cfg.serialize()).map_err(|e| Error::io(out.join("config.txt"), e))?;
    let result = match &cli.command {
        Command::Generate => cmd_generate(&cfg, &out),
        Command::Train => cmd_train(&cfg, &out),
        Command::Ablation => cmd_ablation(&cfg, &out, cli.jobs),
        Command::Connectivity => cmd_connectivity(&cfg, &out, cli.jobs),
        Command::Preview { checkpoint, .. } => cmd_preview(&cfg, &out, checkpoint.as_deref()),
    };
    append_provenance(&out, cli.command.name(), &cfg, result.as_ref().err())?;
    result
}

/// One line: command, config hash, master seed, version and status.
pub fn provenance_line(command: &str, cfg: &RunConfig, error: Option<&Error>) -> String {
    let mut line = format!(
        "{command} config_hash={} seed={} version={VERSION} status=",
        cfg.hash(),
        cfg.seed
    );
    match error {
        None => line.push_str("complete"),
        Some(e) => {
            let msg = e.to_string().replace(['\n', '"'], " ");
            write!(line, "incomplete error=\"{msg}\"").unwrap();
        }
    }
    line
}

fn append_provenance(out: &Path, command: &str, cfg: &RunConfig, error: Option<&Error>) -> Result<()> {
    let path = out.join("provenance.log");
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{}", provenance_line(command, cfg, error)).map_err(|e| Error::io(&path, e))
}

/// Rows of the `run_id,variant,seed,split,metric,value` schema, flushed per row.
pub struct CsvWriter {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = CsvWriter {
            path: path.to_path_buf(),
            inner: BufWriter::new(f),
        };
        w.line(header)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.inner, "{s}")
            .and_then(|_| self.inner.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn row(
        &mut self,
        run_id: &str,
        variant: &str,
        seed: &str,
        split: &str,
        metric: &str,
        value: f64,
    ) -> Result<()> {
        self.line(&format!("{run_id},{variant},{seed},{split},{metric},{value}"))
    }

    pub fn raw(&mut self, fields: &[&str]) -> Result<()> {
        self.line(&fields.join(","))
    }
}

/// Accuracy, macro-F1, per-class precision/recall/F1/support and the total.
pub fn metric_rows(m: &Metrics) -> Vec<(String, f64)> {
    let mut rows = vec![
        ("accuracy".to_string(), m.accuracy),
        ("macro_f1".to_string(), m.macro_f1),
    ];
    for c in &m.per_class {
        let k = c.class;
        rows.push((format!("precision_c{k}"), c.precision));
        rows.push((format!("recall_c{k}"), c.recall));
        rows.push((format!("f1_c{k}"), c.f1));
        rows.push((format!("support_c{k}"), c.support as f64));
    }
    rows.push(("total".to_string(), m.total as f64));
    rows
}

fn bundle_for(cfg: &RunConfig) -> Result<DatasetBundle> {
    generate_dataset(&cfg.data, &cfg.source_domains, &cfg.target_domains, cfg.seed)
}

fn io_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn image_ext(image: &Tensor) -> &'static str {
    if image.shape()[0] == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let bundle = bundle_for(cfg)?;
    let mut records = Vec::new();
    let mut write_split = |split: Split, examples: &[data::LabeledExample]| -> Result<()> {
        let dir = out.join("images").join(split.name());
        io_dir(&dir)?;
        let mut counter = std::collections::BTreeMap::new();
        for e in examples {
            let i = counter.entry((e.domain, e.label)).or_insert(0usize);
            let rel = format!(
                "images/{}/d{}_y{}_{:04}.{}",
                split.name(),
                e.domain,
                e.label,
                i,
                image_ext(&e.image)
            );
            *i += 1;
            image_io::write_image(&out.join(&rel), &e.image)?;
            records.push(manifest::ManifestRecord {
                path: rel,
                split: split.name().into(),
                label: Some(e.label),
                domain: e.domain,
            });
        }
        Ok(())
    };
    write_split(Split::Train, &bundle.train)?;
    write_split(Split::IdTest, &bundle.id_test)?;
    write_split(Split::OodTest, &bundle.ood_test)?;
    let dir = out.join("images").join(Split::Unlabeled.name());
    io_dir(&dir)?;
    let per = cfg.data.unlabeled_per_domain;
    for (i, img) in bundle.target_unlabeled.iter().enumerate() {
        let domain = bundle.target_domains[i / per];
        let rel = format!(
            "images/{}/d{}_{:04}.{}",
            Split::Unlabeled.name(),
            domain,
            i % per,
            image_ext(img)
        );
        image_io::write_image(&out.join(&rel), img)?;
        records.push(manifest::ManifestRecord {
            path: rel,
            split: Split::Unlabeled.name().into(),
            label: None,
            domain,
        });
    }
    let path = out.join("manifest.tsv");
    fs::write(&path, manifest::render(&records)).map_err(|e| Error::io(&path, e))
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let bundle = bundle_for(cfg)?;
    let tc = cfg.train_config();
    let spec = cfg.model_spec();
    let init = init_model(&spec, rng::derive_seed(cfg.seed, "model-init", 0))?;
    let res = train::lp_ft(&init, &bundle, &tc)?;
    model::save_checkpoint(&out.join("pretrained.ckpt"), &res.pretrained.state)?;
    model::save_checkpoint(&out.join("probed.ckpt"), &res.probed.state)?;
    model::save_checkpoint(&out.join("model.ckpt"), res.state())?;
    let variant = tc.augment.variant.name();
    let run_id = format!("{variant}-s{}", cfg.seed);
    let seed = cfg.seed.to_string();
    let mut w = CsvWriter::create(&out.join("metrics.csv"), CSV_HEADER)?;
    for (stage, losses) in [
        ("pretrain", &res.pretrained.epoch_losses),
        ("probe", &res.probed.epoch_losses),
        ("finetune", &res.finetuned.epoch_losses),
    ] {
        for (e, l) in losses.iter().enumerate() {
            w.row(&run_id, variant, &seed, "train", &format!("loss_{stage}_e{e}"), *l)?;
        }
    }
    for (split, set) in [("id_test", &bundle.id_test), ("ood_test", &bundle.ood_test)] {
        let m = crate::metrics::evaluate(res.state(), set)?;
        for (name, v) in metric_rows(&m) {
            w.row(&run_id, variant, &seed, split, &name, v)?;
        }
    }
    Ok(())
}

fn write_record(w: &mut CsvWriter, r: &RunRecord) -> Result<()> {
    let seed = r.seed.to_string();
    for (split, m) in [("id_test", &r.id_test), ("ood_test", &r.ood_test)] {
        w.row(&r.run_id, &r.variant, &seed, split, "accuracy", m.accuracy)?;
        w.row(&r.run_id, &r.variant, &seed, split, "macro_f1", m.macro_f1)?;
    }
    Ok(())
}

/// `ablation.csv`: four rows per (arm, seed) run, then `summary-<arm>` rows
/// with seed `all` holding `<metric>_mean` and `<metric>_std`.
pub fn cmd_ablation(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<()> {
    let bundle = bundle_for(cfg)?;
    let mut w = CsvWriter::create(&out.join("ablation.csv"), CSV_HEADER)?;
    let report = train::run_ablation(
        &bundle,
        &cfg.model_spec(),
        &cfg.train_config(),
        &cfg.ablation_seeds,
        jobs,
        &mut |r| write_record(&mut w, r),
    )?;
    for s in &report.summary {
        let id = format!("summary-{}", s.arm);
        w.row(&id, &s.arm, "all", &s.split, &format!("{}_mean", s.metric), s.mean)?;
        w.row(&id, &s.arm, "all", &s.split, &format!("{}_std", s.metric), s.std)?;
    }
    Ok(())
}

/// Stage-0 model of report seed `seed`, frozen for building augmentations.
pub fn connectivity_augmenter(cfg: &RunConfig, bundle: &DatasetBundle, seed: u64) -> Result<Augmenter> {
    let tc = train::seeded(&cfg.train_config(), seed);
    let init = init_model(&cfg.model_spec(), rng::derive_seed(seed, "model-init", 0))?;
    let stage0 = train::erm_train(&init, bundle, &tc)?;
    let mut config = cfg.augment.clone();
    config.variant = cfg.connectivity.variant;
    Ok(Augmenter {
        model: stage0.state,
        config,
        mode: tc.pair_mode,
    })
}

/// Original and augmented reports for one report seed.
pub fn connectivity_for_seed(
    cfg: &RunConfig,
    bundle: &DatasetBundle,
    seed: u64,
    jobs: usize,
) -> Result<(ConnectivityReport, ConnectivityReport)> {
    let original = connectivity::connectivity_report(bundle, None, &cfg.connectivity, seed, jobs)?;
    let aug = connectivity_augmenter(cfg, bundle, seed)?;
    let augmented = connectivity::connectivity_report(bundle, Some(&aug), &cfg.connectivity, seed, jobs)?;
    Ok((original, augmented))
}

/// Seed-averaged category means and the ratios α/γ, β/γ built from them.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledConnectivity {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// `None` when the pooled γ is zero.
    pub ratios: Option<(f64, f64)>,
}

pub fn pool_reports(reports: &[&ConnectivityReport]) -> PooledConnectivity {
    let mean = |c: Category| {
        let v: Vec<f64> = reports.iter().filter_map(|r| r.mean(c)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (alpha, beta, gamma) = (mean(Category::Alpha), mean(Category::Beta), mean(Category::Gamma));
    PooledConnectivity {
        alpha,
        beta,
        gamma,
        ratios: (gamma > 0.0).then(|| (alpha / gamma, beta / gamma)),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "withheld".to_string(), |x| x.to_string())
}

/// `connectivity.csv`: one row per pair, then per-seed summary rows
/// (`<category>_mean`, `alpha_over_gamma`, `beta_over_gamma`, `diverged`)
/// and pooled rows with seed `all`.
pub fn cmd_connectivity(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<()> {
    let bundle = bundle_for(cfg)?;
    let mut w = CsvWriter::create(&out.join("connectivity.csv"), CONNECTIVITY_HEADER)?;
    let mut reports = Vec::new();
    for &seed in &cfg.connectivity_seeds {
        let (orig, aug) = connectivity_for_seed(cfg, &bundle, seed, jobs)?;
        let s = seed.to_string();
        for (name, r) in [("original", &orig), ("augmented", &aug)] {
            for p in &r.pairs {
                let v = p.connectivity.map_or_else(|| "diverged".to_string(), |x| x.to_string());
                w.raw(&[&s, name, p.category.name(), &p.pair.label(), &v])?;
            }
            for m in &r.means {
                w.raw(&[
                    &s,
                    name,
                    &format!("{}_mean", m.category.name()),
                    "-",
                    &m.mean.to_string(),
                ])?;
            }
            w.raw(&[&s, name, "alpha_over_gamma", "-", &fmt_opt(r.ratios.map(|x| x.0))])?;
            w.raw(&[&s, name, "beta_over_gamma", "-", &fmt_opt(r.ratios.map(|x| x.1))])?;
            w.raw(&[&s, name, "diverged", "-", &r.diverged.to_string()])?;
        }
        reports.push((orig, aug));
    }
    let orig: Vec<&ConnectivityReport> = reports.iter().map(|r| &r.0).collect();
    let aug: Vec<&ConnectivityReport> = reports.iter().map(|r| &r.1).collect();
    for (name, pooled) in [("original", pool_reports(&orig)), ("augmented", pool_reports(&aug))] {
        for (cat, v) in [("alpha", pooled.alpha), ("beta", pooled.beta), ("gamma", pooled.gamma)] {
            w.raw(&["all", name, &format!("{cat}_mean"), "-", &v.to_string()])?;
        }
        w.raw(&[
            "all",
            name,
            "alpha_over_gamma",
            "-",
            &fmt_opt(pooled.ratios.map(|x| x.0)),
        ])?;
        w.raw(&[
            "all",
            name,
            "beta_over_gamma",
            "-",
            &fmt_opt(pooled.ratios.map(|x| x.1)),
        ])?;
    }
    Ok(())
}

/// Signed frequency of bin `k` on an axis of length `n`.
fn signed(k: usize, n: usize) -> i64 {
    if 2 * k > n {
        k as i64 - n as i64
    } else {
        k as i64
    }
}

/// Bins of the mask along one axis, sorted by signed frequency.
fn axis_bins(map: &SpectralMap, rows: bool) -> Vec<usize> {
    let mut ks: Vec<usize> = map
        .mask
        .indices()
        .into_iter()
        .map(|(u, v)| if rows { u } else { v })
        .collect();
    ks.sort_unstable();
    ks.dedup();
    let n = if rows { map.height } else { map.width };
    ks.sort_by_key(|&k| signed(k, n));
    ks
}

/// One channel of `map` over the bounding box of its mask, DC centered,
/// min-max normalized to [0, 1]. A constant channel maps to 0.5.
pub fn heatmap(map: &SpectralMap, channel: usize) -> Result<Tensor> {
    if channel >= map.channels {
        return Err(Error::Index(format!("channel {channel} of {}", map.channels)));
    }
    let (rows, cols) = (axis_bins(map, true), axis_bins(map, false));
    let mut vals = Vec::with_capacity(rows.len() * cols.len());
    for &u in &rows {
        for &v in &cols {
            vals.push(map.at(channel, u, v));
        }
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = if hi > lo {
        vals.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; vals.len()]
    };
    Tensor::new(vec![1, rows.len(), cols.len()], data)
}

/// `channel u v value` per defined bin, with signed frequencies.
pub fn text_grid(map: &SpectralMap) -> String {
    let mut s = String::from("# channel u v value\n");
    for ch in 0..map.channels {
        for &u in &axis_bins(map, true) {
            for &v in &axis_bins(map, false) {
                let (fu, fv) = (signed(u, map.height), signed(v, map.width));
                writeln!(s, "{ch} {fu} {fv} {}", map.at(ch, u, v)).unwrap();
            }
        }
    }
    s
}

fn write_map(dir: &Path, stem: &str, map: &SpectralMap) -> Result<()> {
    for ch in 0..map.channels {
        image_io::write_image(&dir.join(format!("{stem}_c{ch}.pgm")), &heatmap(map, ch)?)?;
    }
    let p = dir.join(format!("{stem}.txt"));
    fs::write(&p, text_grid(map)).map_err(|e| Error::io(&p, e))
}

/// Writes `pair<i>_{x1,x2,xf,xp,x}` images and the `g`/`d` maps under
/// `preview/`. Paths the variant skips fall back to `x1`; `g` is absent when
/// the variant uses no sensitivity map.
pub fn cmd_preview(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let bundle = bundle_for(cfg)?;
    let state: ModelState = match checkpoint {
        Some(p) => model::load_checkpoint(p)?,
        None => init_model(&cfg.model_spec(), rng::derive_seed(cfg.seed, "model-init", 0))?,
    };
    let dir = out.join("preview");
    io_dir(&dir)?;
    let model: &dyn model::Classifier = &state;
    let needs_model = cfg.augment.variant.uses_gradient();
    for i in 0..cfg.preview_pairs {
        let mut r = rng::stream(cfg.seed, "preview/pairs", i as u64);
        let (x1, x2) = data::sample_pair(&bundle, cfg.train.pair_mode, &mut r)?;
        let a = augment::dgap_augment(
            &x1.image,
            x1.label,
            x2,
            needs_model.then_some(model),
            &cfg.augment,
            &mut r,
        )?;
        let ext = image_ext(&x1.image);
        let freq = a.frequency.as_ref().map_or(&x1.image, |f| &f.image);
        let pix = a.pixel.as_ref().unwrap_or(&x1.image);
        for (name, img) in [
            ("x1", &x1.image),
            ("x2", x2),
            ("xf", freq),
            ("xp", pix),
            ("x", &a.image),
        ] {
            image_io::write_image(&dir.join(format!("pair{i}_{name}.{ext}")), img)?;
        }
        if let Some(f) = &a.frequency {
            if let Some(g) = &f.sensitivity {
                write_map(&dir, &format!("pair{i}_g"), g)?;
            }
            write_map(&dir, &format!("pair{i}_d"), &f.mixing)?;
        }
        debug_assert!(cfg.augment.variant != Variant::None || a.image == x1.image);
    }
    Ok(())
}
