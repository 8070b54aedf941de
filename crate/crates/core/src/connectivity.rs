//! Connectivity between class-domain groups: the test error of a binary
//! classifier trained from scratch to tell two groups apart.

use rand::seq::SliceRandom;

use crate::augment::{self, AugmentationConfig, Variant};
use crate::data::{DatasetBundle, LabeledExample, PairMode};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::model::{init_model, Classifier, ModelSpec, ModelState, Trainable};
use crate::rng;
use crate::train::{self, Optimizer, StagePlan, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    /// same class, same domain
    Rho,
    /// same class, different domains
    Alpha,
    /// different classes, same domain
    Beta,
    /// different classes, different domains
    Gamma,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Rho, Category::Alpha, Category::Beta, Category::Gamma];

    pub fn of(y1: usize, d1: usize, y2: usize, d2: usize) -> Category {
        match (y1 == y2, d1 == d2) {
            (true, true) => Category::Rho,
            (true, false) => Category::Alpha,
            (false, true) => Category::Beta,
            (false, false) => Category::Gamma,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Rho => "rho",
            Category::Alpha => "alpha",
            Category::Beta => "beta",
            Category::Gamma => "gamma",
        }
    }
}

/// Two (class, domain) coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassDomainPair {
    pub first: (usize, usize),
    pub second: (usize, usize),
}

impl ClassDomainPair {
    pub fn new(first: (usize, usize), second: (usize, usize)) -> Self {
        ClassDomainPair { first, second }
    }

    pub fn category(&self) -> Category {
        Category::of(self.first.0, self.first.1, self.second.0, self.second.1)
    }

    pub fn swapped(&self) -> Self {
        ClassDomainPair {
            first: self.second,
            second: self.first,
        }
    }

    /// `y1-d1:y2-d2`
    pub fn label(&self) -> String {
        format!("{}-{}:{}-{}", self.first.0, self.first.1, self.second.0, self.second.1)
    }
}

/// Binary task built from one pair: label 0 for `first`, 1 for `second`.
#[derive(Clone, Debug)]
pub struct PairDataset {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

/// Splits each coordinate's examples by `train_fraction` after a seeded
/// shuffle. A ρ pair (one coordinate on both sides) first halves the
/// coordinate into two disjoint groups.
pub fn build_pair_dataset(
    examples: &[LabeledExample],
    pair: &ClassDomainPair,
    train_fraction: f64,
    seed: u64,
) -> Result<PairDataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let members = |(y, d): (usize, usize)| -> Vec<&LabeledExample> {
        examples.iter().filter(|e| e.label == y && e.domain == d).collect()
    };
    let mut r = rng::stream(seed, "connectivity/split", 0);
    let mut groups = if pair.category() == Category::Rho {
        let mut all = members(pair.first);
        all.shuffle(&mut r);
        let half = all.len() / 2;
        let second = all.split_off(half);
        [all, second]
    } else {
        [members(pair.first), members(pair.second)]
    };
    let mut out = PairDataset {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (label, group) in groups.iter_mut().enumerate() {
        let coord = if label == 0 { pair.first } else { pair.second };
        if group.is_empty() {
            return Err(Error::Sampling(format!(
                "no examples for class {} in domain {}",
                coord.0, coord.1
            )));
        }
        group.shuffle(&mut r);
        let n_train = ((train_fraction * group.len() as f64).round() as usize).clamp(1, group.len().max(2) - 1);
        if n_train >= group.len() {
            return Err(Error::Sampling(format!(
                "class {} in domain {} has too few examples to split",
                coord.0, coord.1
            )));
        }
        for (i, e) in group.iter().enumerate() {
            let ex = LabeledExample {
                image: e.image.clone(),
                label,
                domain: e.domain,
            };
            if i < n_train {
                out.train.push(ex);
            } else {
                out.test.push(ex);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityConfig {
    /// Pairs sampled per category, or all when fewer exist.
    pub pairs_per_category: usize,
    pub include_rho: bool,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub train_fraction: f64,
    /// Variant used to materialize the augmented dataset.
    pub variant: Variant,
}

impl Default for ConnectivityConfig {
    fn default() -> Self {
        ConnectivityConfig {
            pairs_per_category: 10,
            include_rho: false,
            probe_epochs: 20,
            probe_lr: 0.02,
            batch_size: 32,
            momentum: 0.9,
            train_fraction: 0.5,
            variant: Variant::UnifiedRatioV1,
        }
    }
}

impl ConnectivityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_category == 0 {
            return Err(Error::Parameter("pairs_per_category must be ≥ 1".into()));
        }
        if self.probe_lr.is_nan()
            || self.probe_lr <= 0.0
            || self.batch_size == 0
            || !(0.0..1.0).contains(&self.momentum)
        {
            return Err(Error::Parameter(
                "probe needs a positive rate, batch size ≥ 1 and momentum in [0, 1)".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            optimizer: Optimizer::SgdMomentum,
            momentum: self.momentum,
            seed,
            ..TrainConfig::default()
        }
    }
}

/// Subtracts the per-channel mean of the training half from both halves.
fn center(data: &PairDataset) -> Result<PairDataset> {
    let (c, h, w) = data.train[0].image.chw()?;
    let plane = h * w;
    let mut mean = vec![0.0; c];
    for e in &data.train {
        for (ch, m) in mean.iter_mut().enumerate() {
            *m += e.image.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
        }
    }
    let n = (data.train.len() * plane) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let shift = |set: &[LabeledExample]| -> Vec<LabeledExample> {
        set.iter()
            .map(|e| {
                let mut image = e.image.clone();
                for (i, v) in image.data_mut().iter_mut().enumerate() {
                    *v -= mean[i / plane];
                }
                LabeledExample { image, ..e.clone() }
            })
            .collect()
    };
    Ok(PairDataset {
        train: shift(&data.train),
        test: shift(&data.test),
    })
}

/// Test error of a fresh tiny CNN trained on the binary pair task.
pub fn estimate_connectivity(data: &PairDataset, cfg: &ConnectivityConfig, seed: u64) -> Result<f64> {
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Contract(
            "pair dataset needs nonempty train and test halves".into(),
        ));
    }
    let (c, h, w) = data.train[0].image.chw()?;
    let data = center(data)?;
    let init = init_model(
        &ModelSpec::tiny_cnn(c, h, w, 2),
        rng::derive_seed(seed, "connectivity/init", 0),
    )?;
    let bundle = DatasetBundle {
        classes: 2,
        source_domains: Vec::new(),
        target_domains: Vec::new(),
        train: data.train.clone(),
        target_unlabeled: Vec::new(),
        id_test: Vec::new(),
        ood_test: Vec::new(),
    };
    let plan = StagePlan {
        name: "connectivity".into(),
        epochs: cfg.probe_epochs,
        lr: cfg.probe_lr,
        trainable: Trainable::All,
        augmentation: None,
    };
    let out = train::train_stage(&init, &bundle, &plan, &cfg.train_config(seed))?;
    Ok(1.0 - evaluate(&out.state, &data.test)?.accuracy)
}

/// Frozen model plus settings used to build the augmented dataset.
#[derive(Clone, Debug)]
pub struct Augmenter {
    pub model: ModelState,
    pub config: AugmentationConfig,
    pub mode: PairMode,
}

/// One augmentation per training example, labels and domains kept.
pub fn augmented_dataset(bundle: &DatasetBundle, aug: &Augmenter, seed: u64) -> Result<Vec<LabeledExample>> {
    use rand::Rng;
    let model: &dyn Classifier = &aug.model;
    let mut out = Vec::with_capacity(bundle.train.len());
    for (i, x1) in bundle.train.iter().enumerate() {
        let mut r = rng::stream(seed, "connectivity/augment", i as u64);
        let x2 = match aug.mode {
            PairMode::Da => {
                if bundle.target_unlabeled.is_empty() {
                    return Err(Error::Sampling("mode da needs unlabeled target images".into()));
                }
                &bundle.target_unlabeled[r.gen_range(0..bundle.target_unlabeled.len())]
            }
            PairMode::Dg => &crate::data::partner_from_other_domain(&bundle.train, x1.domain, &mut r)?.image,
        };
        let a = augment::dgap_augment(&x1.image, x1.label, x2, Some(model), &aug.config, &mut r)?;
        out.push(LabeledExample {
            image: a.image,
            label: x1.label,
            domain: x1.domain,
        });
    }
    Ok(out)
}

/// Every unordered pair of the category among the given coordinates.
pub fn all_pairs(coords: &[(usize, usize)], category: Category) -> Vec<ClassDomainPair> {
    let mut out = Vec::new();
    for (i, &a) in coords.iter().enumerate() {
        if category == Category::Rho {
            out.push(ClassDomainPair::new(a, a));
            continue;
        }
        for &b in &coords[i + 1..] {
            let p = ClassDomainPair::new(a, b);
            if p.category() == category {
                out.push(p);
            }
        }
    }
    out
}

/// Seeded subset of at most `budget` pairs per category.
pub fn sample_pairs(coords: &[(usize, usize)], category: Category, budget: usize, seed: u64) -> Vec<ClassDomainPair> {
    let mut pairs = all_pairs(coords, category);
    let mut r = rng::stream(seed, "connectivity/pairs", category as u64);
    pairs.shuffle(&mut r);
    pairs.truncate(budget);
    pairs
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairResult {
    pub pair: ClassDomainPair,
    pub category: Category,
    /// `None` when the probe diverged.
    pub connectivity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryMean {
    pub category: Category,
    pub mean: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityReport {
    pub pairs: Vec<PairResult>,
    pub means: Vec<CategoryMean>,
    /// (α/γ, β/γ); `None` when the γ mean is zero.
    pub ratios: Option<(f64, f64)>,
    /// Pairs whose probe diverged and were left out of the means.
    pub diverged: usize,
}

impl ConnectivityReport {
    pub fn mean(&self, category: Category) -> Option<f64> {
        self.means.iter().find(|m| m.category == category).map(|m| m.mean)
    }

    pub fn ratios_withheld(&self) -> bool {
        self.ratios.is_none()
    }
}

/// Connectivity of sampled pairs over the source train split, optionally
/// after replacing it with its augmented counterpart.
pub fn connectivity_report(
    bundle: &DatasetBundle,
    augmenter: Option<&Augmenter>,
    cfg: &ConnectivityConfig,
    seed: u64,
    jobs: usize,
) -> Result<ConnectivityReport> {
    cfg.validate()?;
    let examples = match augmenter {
        Some(a) => augmented_dataset(bundle, a, seed)?,
        None => bundle.train.clone(),
    };
    let mut coords: Vec<(usize, usize)> = examples.iter().map(|e| (e.label, e.domain)).collect();
    coords.sort_unstable();
    coords.dedup();
    let mut categories = vec![Category::Alpha, Category::Beta, Category::Gamma];
    if cfg.include_rho {
        categories.insert(0, Category::Rho);
    }
    let mut jobs_list: Vec<ClassDomainPair> = Vec::new();
    for &cat in &categories {
        let pairs = sample_pairs(&coords, cat, cfg.pairs_per_category, seed);
        if pairs.is_empty() {
            return Err(Error::Sampling(format!("no {} pairs in the dataset", cat.name())));
        }
        jobs_list.extend(pairs);
    }
    let indices: Vec<usize> = (0..jobs_list.len()).collect();
    let results = train::parallel_map(&indices, jobs, |i| {
        let pair = jobs_list[i];
        let pair_seed = rng::derive_seed(seed, "connectivity/pair", i as u64);
        let data = build_pair_dataset(&examples, &pair, cfg.train_fraction, pair_seed)?;
        let connectivity = match estimate_connectivity(&data, cfg, pair_seed) {
            Ok(v) => Some(v),
            Err(Error::Divergence { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(PairResult {
            pair,
            category: pair.category(),
            connectivity,
        })
    })?;
    let diverged = results.iter().filter(|r| r.connectivity.is_none()).count();
    let means: Vec<CategoryMean> = categories
        .iter()
        .map(|&cat| {
            let vals: Vec<f64> = results
                .iter()
                .filter(|r| r.category == cat)
                .filter_map(|r| r.connectivity)
                .collect();
            let mean = if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            CategoryMean {
                category: cat,
                mean,
                pairs: vals.len(),
            }
        })
        .collect();
    let get = |c| {
        means
            .iter()
            .find(|m| m.category == c)
            .map(|m| m.mean)
            .unwrap_or(f64::NAN)
    };
    let (alpha, beta, gamma) = (get(Category::Alpha), get(Category::Beta), get(Category::Gamma));
    let ratios = (gamma > 0.0).then(|| (alpha / gamma, beta / gamma));
    Ok(ConnectivityReport {
        pairs: results,
        means,
        ratios,
        diverged,
    })
}
