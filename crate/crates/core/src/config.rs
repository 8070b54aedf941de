//! Plain-text `key = value` run configuration with dotted section prefixes.
//!
//! ```text
//! # comments start with '#'
//! seed = 7
//! augment.d_min = 0.2
//! train.seeds = 1,2,3
//! data.style.4.gain = 0.35,0.4,0.45
//! ```
//!
//! Every key has a default (see [`RunConfig::default`]); absent keys keep it.
//! [`RunConfig::serialize`] writes every key, so its output parses back to
//! the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::augment::{AugmentationConfig, Variant};
use crate::connectivity::ConnectivityConfig;
use crate::data::{DomainShiftSpec, DomainStyle, PairMode};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::train::{Optimizer, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: String,
    pub data: DomainShiftSpec,
    pub source_domains: Vec<usize>,
    pub target_domains: Vec<usize>,
    pub model_kind: ModelKind,
    pub model_hidden: Vec<usize>,
    pub augment: AugmentationConfig,
    pub train: TrainConfig,
    /// Seeds of the ablation arms.
    pub ablation_seeds: Vec<u64>,
    pub connectivity: ConnectivityConfig,
    pub connectivity_seeds: Vec<u64>,
    pub preview_pairs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: "out".into(),
            data: DomainShiftSpec::default(),
            source_domains: vec![0, 1, 2, 3],
            target_domains: vec![4, 5],
            model_kind: ModelKind::TinyCnn,
            model_hidden: vec![8, 16],
            augment: AugmentationConfig::default(),
            train: TrainConfig::default(),
            ablation_seeds: vec![1, 2, 3, 4, 5],
            connectivity: ConnectivityConfig::default(),
            connectivity_seeds: vec![1, 2, 3],
            preview_pairs: 4,
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, form: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("expected {form}, got `{v}`"))
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = parse_num(v, "a real number")?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("expected a finite real number, got `{v}`"))
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn parse_list<T: std::str::FromStr>(v: &str, form: &str) -> std::result::Result<Vec<T>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_num(p.trim(), form)).collect()
}

fn parse_triple(v: &str) -> std::result::Result<[f64; 3], String> {
    let vals: Vec<f64> = v
        .split(',')
        .map(|p| parse_f64(p.trim()))
        .collect::<std::result::Result<_, _>>()?;
    vals.try_into()
        .map_err(|_| format!("expected three comma-separated reals, got `{v}`"))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value; the error is the expected form.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        if let Some(rest) = key.strip_prefix("data.style.") {
            return self.set_style(rest, v);
        }
        let a = &mut self.augment;
        let t = &mut self.train;
        let c = &mut self.connectivity;
        let d = &mut self.data;
        match key {
            "seed" => self.seed = parse_num(v, "a nonnegative integer")?,
            "out" => self.out = v.to_string(),
            "data.classes" => d.classes = parse_num(v, "a positive integer")?,
            "data.side" => d.side = parse_num(v, "a positive integer")?,
            "data.channels" => d.channels = parse_num(v, "1 or 3")?,
            "data.train_per_cell" => d.train_per_cell = parse_num(v, "a positive integer")?,
            "data.test_per_cell" => d.test_per_cell = parse_num(v, "a positive integer")?,
            "data.unlabeled_per_domain" => d.unlabeled_per_domain = parse_num(v, "a positive integer")?,
            "data.noise_floor" => d.noise_floor = parse_f64(v)?,
            "data.contrast_min" => d.contrast.0 = parse_f64(v)?,
            "data.contrast_max" => d.contrast.1 = parse_f64(v)?,
            "data.style_strength" => d.style_strength = parse_f64(v)?,
            "data.source_domains" => self.source_domains = parse_list(v, "a comma-separated list of domain indices")?,
            "data.target_domains" => self.target_domains = parse_list(v, "a comma-separated list of domain indices")?,
            "model.kind" => {
                self.model_kind = ModelKind::parse(v).ok_or(format!("expected tiny_cnn or mlp, got `{v}`"))?
            }
            "model.hidden" => self.model_hidden = parse_list(v, "a comma-separated list of layer widths")?,
            "augment.r" => a.r = parse_f64(v)?,
            "augment.d_min" => a.d_min = parse_f64(v)?,
            "augment.d_max" => a.d_max = parse_f64(v)?,
            "augment.eps" => a.eps = parse_f64(v)?,
            "augment.lambda1_max" => a.lambda1_max = parse_f64(v)?,
            "augment.lambda2_min" => a.lambda2.0 = parse_f64(v)?,
            "augment.lambda2_max" => a.lambda2.1 = parse_f64(v)?,
            "augment.variant" => a.variant = parse_variant(v)?,
            "augment.unified_ratio" => a.unified_ratio = parse_f64(v)?,
            "augment.per_channel_maps" => a.per_channel_maps = parse_bool(v)?,
            "train.pretrain_epochs" => t.pretrain_epochs = parse_num(v, "a nonnegative integer")?,
            "train.probe_epochs" => t.probe_epochs = parse_num(v, "a nonnegative integer")?,
            "train.finetune_epochs" => t.finetune_epochs = parse_num(v, "a nonnegative integer")?,
            "train.batch_size" => t.batch_size = parse_num(v, "a positive integer")?,
            "train.pretrain_lr" => t.pretrain_lr = parse_f64(v)?,
            "train.probe_lr" => t.probe_lr = parse_f64(v)?,
            "train.finetune_lr" => t.finetune_lr = parse_f64(v)?,
            "train.optimizer" => {
                t.optimizer = Optimizer::parse(v).ok_or(format!("expected sgd or sgd_momentum, got `{v}`"))?
            }
            "train.momentum" => t.momentum = parse_f64(v)?,
            "train.augmented_fraction" => t.augmented_fraction = parse_f64(v)?,
            "train.pair_mode" => t.pair_mode = PairMode::parse(v).ok_or(format!("expected da or dg, got `{v}`"))?,
            "train.seeds" => self.ablation_seeds = parse_list(v, "a comma-separated list of seeds")?,
            "connectivity.pairs_per_category" => c.pairs_per_category = parse_num(v, "a positive integer")?,
            "connectivity.include_rho" => c.include_rho = parse_bool(v)?,
            "connectivity.probe_epochs" => c.probe_epochs = parse_num(v, "a nonnegative integer")?,
            "connectivity.probe_lr" => c.probe_lr = parse_f64(v)?,
            "connectivity.batch_size" => c.batch_size = parse_num(v, "a positive integer")?,
            "connectivity.momentum" => c.momentum = parse_f64(v)?,
            "connectivity.train_fraction" => c.train_fraction = parse_f64(v)?,
            "connectivity.variant" => c.variant = parse_variant(v)?,
            "connectivity.seeds" => self.connectivity_seeds = parse_list(v, "a comma-separated list of seeds")?,
            "preview.pairs" => self.preview_pairs = parse_num(v, "a positive integer")?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn set_style(&mut self, rest: &str, v: &str) -> std::result::Result<(), String> {
        let (idx, field) = rest.split_once('.').ok_or("unknown key")?;
        let idx: usize = idx.parse().map_err(|_| "unknown key")?;
        let n = self.data.styles.len();
        let st: &mut DomainStyle = self
            .data
            .styles
            .get_mut(idx)
            .ok_or(format!("style index must be below {n}"))?;
        match field {
            "noise_freq" => st.noise_freq = parse_f64(v)?,
            "noise_power" => st.noise_power = parse_f64(v)?,
            "gain" => st.gain = parse_triple(v)?,
            "offset" => st.offset = parse_triple(v)?,
            "ramp_angle" => st.ramp_angle = parse_f64(v)?,
            "ramp_height" => st.ramp_height = parse_f64(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let (a, t, c, d) = (&self.augment, &self.train, &self.connectivity, &self.data);
        let mut e: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("out".into(), self.out.clone()),
            ("data.classes".into(), d.classes.to_string()),
            ("data.side".into(), d.side.to_string()),
            ("data.channels".into(), d.channels.to_string()),
            ("data.train_per_cell".into(), d.train_per_cell.to_string()),
            ("data.test_per_cell".into(), d.test_per_cell.to_string()),
            ("data.unlabeled_per_domain".into(), d.unlabeled_per_domain.to_string()),
            ("data.noise_floor".into(), d.noise_floor.to_string()),
            ("data.contrast_min".into(), d.contrast.0.to_string()),
            ("data.contrast_max".into(), d.contrast.1.to_string()),
            ("data.style_strength".into(), d.style_strength.to_string()),
            ("data.source_domains".into(), join(&self.source_domains)),
            ("data.target_domains".into(), join(&self.target_domains)),
        ];
        for (i, s) in d.styles.iter().enumerate() {
            let p = format!("data.style.{i}");
            e.push((format!("{p}.noise_freq"), s.noise_freq.to_string()));
            e.push((format!("{p}.noise_power"), s.noise_power.to_string()));
            e.push((format!("{p}.gain"), join(&s.gain)));
            e.push((format!("{p}.offset"), join(&s.offset)));
            e.push((format!("{p}.ramp_angle"), s.ramp_angle.to_string()));
            e.push((format!("{p}.ramp_height"), s.ramp_height.to_string()));
        }
        let rest: Vec<(&str, String)> = vec![
            ("model.kind", self.model_kind.name().into()),
            ("model.hidden", join(&self.model_hidden)),
            ("augment.r", a.r.to_string()),
            ("augment.d_min", a.d_min.to_string()),
            ("augment.d_max", a.d_max.to_string()),
            ("augment.eps", a.eps.to_string()),
            ("augment.lambda1_max", a.lambda1_max.to_string()),
            ("augment.lambda2_min", a.lambda2.0.to_string()),
            ("augment.lambda2_max", a.lambda2.1.to_string()),
            ("augment.variant", a.variant.name().into()),
            ("augment.unified_ratio", a.unified_ratio.to_string()),
            ("augment.per_channel_maps", a.per_channel_maps.to_string()),
            ("train.pretrain_epochs", t.pretrain_epochs.to_string()),
            ("train.probe_epochs", t.probe_epochs.to_string()),
            ("train.finetune_epochs", t.finetune_epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.pretrain_lr", t.pretrain_lr.to_string()),
            ("train.probe_lr", t.probe_lr.to_string()),
            ("train.finetune_lr", t.finetune_lr.to_string()),
            ("train.optimizer", t.optimizer.name().into()),
            ("train.momentum", t.momentum.to_string()),
            ("train.augmented_fraction", t.augmented_fraction.to_string()),
            ("train.pair_mode", t.pair_mode.name().into()),
            ("train.seeds", join(&self.ablation_seeds)),
            ("connectivity.pairs_per_category", c.pairs_per_category.to_string()),
            ("connectivity.include_rho", c.include_rho.to_string()),
            ("connectivity.probe_epochs", c.probe_epochs.to_string()),
            ("connectivity.probe_lr", c.probe_lr.to_string()),
            ("connectivity.batch_size", c.batch_size.to_string()),
            ("connectivity.momentum", c.momentum.to_string()),
            ("connectivity.train_fraction", c.train_fraction.to_string()),
            ("connectivity.variant", c.variant.name().into()),
            ("connectivity.seeds", join(&self.connectivity_seeds)),
            ("preview.pairs", self.preview_pairs.to_string()),
        ];
        e.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        e
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut lines: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                key: content.to_string(),
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(first) = lines.get(key) {
                return Err(Error::Config {
                    line,
                    key: key.into(),
                    message: format!("duplicate key, first set on line {first}"),
                });
            }
            cfg.set(key, value).map_err(|message| Error::Config {
                line,
                key: key.into(),
                message,
            })?;
            lines.insert(key.to_string(), line);
        }
        cfg.validate_with(&lines)?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(&BTreeMap::new())
    }

    /// Cross-field checks. Errors name the offending keys; `line` is where
    /// the last of them was set (0 when all are defaults).
    fn validate_with(&self, lines: &BTreeMap<String, usize>) -> Result<()> {
        let fail = |keys: &[&str], message: String| {
            let line = keys.iter().filter_map(|k| lines.get(*k)).copied().max().unwrap_or(0);
            Err(Error::Config {
                line,
                key: keys.join(", "),
                message,
            })
        };
        let a = &self.augment;
        if a.d_min > a.d_max {
            return fail(
                &["augment.d_min", "augment.d_max"],
                format!(
                    "augment.d_min ({}) must not exceed augment.d_max ({})",
                    a.d_min, a.d_max
                ),
            );
        }
        if a.lambda2.0 > a.lambda2.1 {
            return fail(
                &["augment.lambda2_min", "augment.lambda2_max"],
                "augment.lambda2_min must not exceed augment.lambda2_max".into(),
            );
        }
        if let Err(e) = a.validate() {
            return fail(&["augment"], e.to_string());
        }
        let d = &self.data;
        if d.contrast.0 > d.contrast.1 {
            return fail(
                &["data.contrast_min", "data.contrast_max"],
                "data.contrast_min must not exceed data.contrast_max".into(),
            );
        }
        if let Err(e) = d.validate() {
            return fail(&["data"], e.to_string());
        }
        let domains = ["data.source_domains", "data.target_domains"];
        if self.source_domains.is_empty() || self.target_domains.is_empty() {
            return fail(&domains, "both domain lists need at least one entry".into());
        }
        if let Some(x) = self.source_domains.iter().find(|x| self.target_domains.contains(x)) {
            return fail(&domains, format!("domain {x} is listed as both source and target"));
        }
        if let Some(x) = self
            .source_domains
            .iter()
            .chain(&self.target_domains)
            .find(|&&x| x >= d.styles.len())
        {
            return fail(
                &domains,
                format!("domain {x} has no style (indices 0..{})", d.styles.len()),
            );
        }
        if let Err(e) = self.model_spec().validate() {
            return fail(&["model.kind", "model.hidden"], e.to_string());
        }
        if let Err(e) = self.train_config().validate() {
            return fail(&["train"], e.to_string());
        }
        if self.ablation_seeds.is_empty() {
            return fail(&["train.seeds"], "need at least one seed".into());
        }
        if let Err(e) = self.connectivity.validate() {
            return fail(&["connectivity"], e.to_string());
        }
        if self.connectivity_seeds.is_empty() {
            return fail(&["connectivity.seeds"], "need at least one seed".into());
        }
        if self.preview_pairs == 0 {
            return fail(&["preview.pairs"], "need at least one pair".into());
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        let d = &self.data;
        match self.model_kind {
            ModelKind::TinyCnn => ModelSpec {
                hidden: self.model_hidden.clone(),
                ..ModelSpec::tiny_cnn(d.channels, d.side, d.side, d.classes)
            },
            ModelKind::Mlp => {
                let mut m = ModelSpec::mlp(d.channels * d.side * d.side, self.model_hidden.clone(), d.classes);
                m.channels = d.channels;
                m.height = d.side;
                m.width = d.side;
                m
            }
        }
    }

    /// Training settings with the augmentation block and master seed folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            augment: self.augment.clone(),
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// First 16 hex digits of the SHA-256 of the serialized config.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.serialize().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_variant(v: &str) -> std::result::Result<Variant, String> {
    Variant::parse(v).ok_or_else(|| {
        let names: Vec<&str> = Variant::ALL.iter().map(|x| x.name()).collect();
        format!("expected one of {}, got `{v}`", names.join(", "))
    })
}
