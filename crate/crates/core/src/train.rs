//! ERM, linear probing, fine-tuning with augmentation, and the ablation driver.
//!
//! All stages share one mini-batch loop ([`train_stage`]). Shuffling and
//! augmentation draw from separate named streams keyed by the stage name, so
//! switching augmentation off leaves the shuffling sequence untouched.

use rand::seq::SliceRandom;

use crate::augment::{self, AugmentationConfig, Variant};
use crate::data::{DatasetBundle, LabeledExample, PairMode};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Metrics};
use crate::model::{init_model, Classifier, ModelSpec, ModelState, Trainable};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    SgdMomentum,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::SgdMomentum => "sgd_momentum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(Optimizer::Sgd),
            "sgd_momentum" => Some(Optimizer::SgdMomentum),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Stage 0: ERM on source data, standing in for a pretrained encoder.
    pub pretrain_epochs: usize,
    pub probe_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub pretrain_lr: f64,
    pub probe_lr: f64,
    pub finetune_lr: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub augment: AugmentationConfig,
    /// Share of each batch replaced by augmented images.
    pub augmented_fraction: f64,
    pub pair_mode: PairMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_epochs: 10,
            probe_epochs: 10,
            finetune_epochs: 30,
            batch_size: 32,
            pretrain_lr: 0.02,
            probe_lr: 0.05,
            finetune_lr: 0.01,
            optimizer: Optimizer::SgdMomentum,
            momentum: 0.9,
            augment: AugmentationConfig::default(),
            augmented_fraction: 0.5,
            pair_mode: PairMode::Da,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        for (name, lr) in [
            ("pretrain_lr", self.pretrain_lr),
            ("probe_lr", self.probe_lr),
            ("finetune_lr", self.finetune_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.augmented_fraction) {
            return bad(format!(
                "augmented_fraction must lie in [0, 1], got {}",
                self.augmented_fraction
            ));
        }
        self.augment.validate()
    }
}

/// Augmentation applied inside a stage.
#[derive(Clone, Debug)]
pub struct AugmentPlan {
    pub config: AugmentationConfig,
    pub fraction: f64,
    pub mode: PairMode,
}

#[derive(Clone, Debug)]
pub struct StagePlan {
    /// Namespace of the stage's random streams.
    pub name: String,
    pub epochs: usize,
    pub lr: f64,
    pub trainable: Trainable,
    pub augmentation: Option<AugmentPlan>,
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub state: ModelState,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch gradient descent over the source train split.
pub fn train_stage(
    state: &ModelState,
    bundle: &DatasetBundle,
    plan: &StagePlan,
    cfg: &TrainConfig,
) -> Result<StageOutcome> {
    let train = &bundle.train;
    if train.is_empty() {
        return Err(Error::Contract("train split is empty".into()));
    }
    let mut state = state.clone();
    let mut velocity: Vec<Option<Tensor>> = vec![None; state.params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let mut epoch_losses = Vec::with_capacity(plan.epochs);
    for epoch in 0..plan.epochs {
        let mut shuffle = rng::stream(cfg.seed, &format!("{}/shuffle", plan.name), epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch_index = (epoch * batches_per_epoch + b) as u64;
            let inputs = batch_inputs(&state, bundle, idx, plan, cfg, batch_index)?;
            let (loss, grads) = batch_gradient(&state, &inputs, plan.trainable)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    stage: plan.name.clone(),
                    epoch,
                });
            }
            epoch_loss += loss * idx.len() as f64;
            apply_update(&mut state, &mut velocity, &grads, plan.lr, cfg)?;
        }
        epoch_losses.push(epoch_loss / train.len() as f64);
    }
    Ok(StageOutcome { state, epoch_losses })
}

/// Batch images with labels; the first `round(fraction·len)` slots are
/// replaced by augmentations computed against the batch-start model.
fn batch_inputs(
    state: &ModelState,
    bundle: &DatasetBundle,
    idx: &[usize],
    plan: &StagePlan,
    cfg: &TrainConfig,
    batch_index: u64,
) -> Result<Vec<(Tensor, usize)>> {
    let train = &bundle.train;
    let mut inputs: Vec<(Tensor, usize)> = idx.iter().map(|&i| (train[i].image.clone(), train[i].label)).collect();
    let Some(aug) = &plan.augmentation else {
        return Ok(inputs);
    };
    let k = (aug.fraction * idx.len() as f64).round() as usize;
    if k == 0 || aug.config.variant == Variant::None {
        return Ok(inputs);
    }
    let mut stream = rng::stream(cfg.seed, &format!("{}/augment", plan.name), batch_index);
    let model: Option<&dyn Classifier> = Some(state);
    for (slot, &i) in idx.iter().take(k).enumerate() {
        let x1 = &train[i];
        let x2 = partner(bundle, x1, aug.mode, &mut stream)?;
        let out = augment::dgap_augment(&x1.image, x1.label, x2, model, &aug.config, &mut stream)?;
        inputs[slot].0 = out.image;
    }
    Ok(inputs)
}

fn partner<'a>(
    bundle: &'a DatasetBundle,
    x1: &LabeledExample,
    mode: PairMode,
    stream: &mut rng::Stream,
) -> Result<&'a Tensor> {
    use rand::Rng;
    match mode {
        PairMode::Da => {
            if bundle.target_unlabeled.is_empty() {
                return Err(Error::Sampling("mode da needs unlabeled target images".into()));
            }
            Ok(&bundle.target_unlabeled[stream.gen_range(0..bundle.target_unlabeled.len())])
        }
        PairMode::Dg => Ok(&crate::data::partner_from_other_domain(&bundle.train, x1.domain, stream)?.image),
    }
}

/// Mean loss and mean parameter gradients over one batch, summed in batch order.
fn batch_gradient(
    state: &ModelState,
    inputs: &[(Tensor, usize)],
    trainable: Trainable,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut total = 0.0;
    let mut acc: Vec<Option<Tensor>> = vec![None; state.params.len()];
    for (x, y) in inputs {
        let g = state.loss_and_grads(x, *y, trainable, false, 1.0)?;
        total += g.loss;
        for (slot, gp) in acc.iter_mut().zip(g.params) {
            if let Some(gp) = gp {
                match slot {
                    Some(a) => a.add_assign(&gp)?,
                    None => *slot = Some(gp),
                }
            }
        }
    }
    let n = inputs.len() as f64;
    let acc = acc.into_iter().map(|g| g.map(|t| t.scaled(1.0 / n))).collect();
    Ok((total / n, acc))
}

fn apply_update(
    state: &mut ModelState,
    velocity: &mut [Option<Tensor>],
    grads: &[Option<Tensor>],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    for ((param, vel), grad) in state.params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        let Some(g) = grad else { continue };
        let step = match cfg.optimizer {
            Optimizer::Sgd => g.clone(),
            Optimizer::SgdMomentum => {
                let v = match vel.take() {
                    Some(v) => v.zip_with(g, |v, g| cfg.momentum * v + g)?,
                    None => g.clone(),
                };
                *vel = Some(v.clone());
                v
            }
        };
        for (p, s) in param.value.data_mut().iter_mut().zip(step.data()) {
            *p -= lr * s;
        }
    }
    Ok(())
}

fn erm_plan(cfg: &TrainConfig) -> StagePlan {
    StagePlan {
        name: "erm".into(),
        epochs: cfg.pretrain_epochs,
        lr: cfg.pretrain_lr,
        trainable: Trainable::All,
        augmentation: None,
    }
}

fn augment_plan(cfg: &TrainConfig) -> AugmentPlan {
    AugmentPlan {
        config: cfg.augment.clone(),
        fraction: cfg.augmented_fraction,
        mode: cfg.pair_mode,
    }
}

/// Plain ERM on the source split for `pretrain_epochs`.
pub fn erm_train(state: &ModelState, bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<StageOutcome> {
    train_stage(state, bundle, &erm_plan(cfg), cfg)
}

/// Same schedule as [`erm_train`], with augmented batches.
pub fn train_with_augmentation(state: &ModelState, bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<StageOutcome> {
    let plan = StagePlan {
        augmentation: Some(augment_plan(cfg)),
        ..erm_plan(cfg)
    };
    train_stage(state, bundle, &plan, cfg)
}

pub fn probe_plan(cfg: &TrainConfig) -> StagePlan {
    StagePlan {
        name: "probe".into(),
        epochs: cfg.probe_epochs,
        lr: cfg.probe_lr,
        trainable: Trainable::HeadOnly,
        augmentation: None,
    }
}

pub fn finetune_plan(cfg: &TrainConfig) -> StagePlan {
    StagePlan {
        name: "finetune".into(),
        epochs: cfg.finetune_epochs,
        lr: cfg.finetune_lr,
        trainable: Trainable::All,
        augmentation: Some(augment_plan(cfg)),
    }
}

#[derive(Clone, Debug)]
pub struct LpFtOutcome {
    pub pretrained: StageOutcome,
    pub probed: StageOutcome,
    pub finetuned: StageOutcome,
}

impl LpFtOutcome {
    pub fn state(&self) -> &ModelState {
        &self.finetuned.state
    }
}

/// Stage 0 ERM, stage 1 head-only probing, stage 2 augmented fine-tuning.
pub fn lp_ft(state: &ModelState, bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<LpFtOutcome> {
    let pretrained = erm_train(state, bundle, cfg)?;
    let probed = train_stage(&pretrained.state, bundle, &probe_plan(cfg), cfg)?;
    let finetuned = train_stage(&probed.state, bundle, &finetune_plan(cfg), cfg)?;
    Ok(LpFtOutcome {
        pretrained,
        probed,
        finetuned,
    })
}

/// Whether the window-averaged loss curve never rises over the final half.
pub fn smoothed_loss_nonincreasing(losses: &[f64], window: usize) -> bool {
    if losses.len() < window || window == 0 {
        return true;
    }
    let smooth: Vec<f64> = losses
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    let start = (losses.len() / 2).saturating_sub(window - 1).min(smooth.len() - 1);
    smooth[start..].windows(2).all(|w| w[1] <= w[0])
}

// ---- ablation ---------------------------------------------------------------

/// One arm of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    LpFt,
    PixelOnly,
    FrequencyOnly,
    UnifiedRatioV1,
    Full,
}

impl Arm {
    pub const ALL: [Arm; 5] = [
        Arm::LpFt,
        Arm::PixelOnly,
        Arm::FrequencyOnly,
        Arm::UnifiedRatioV1,
        Arm::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::LpFt => "lp_ft",
            Arm::PixelOnly => "pixel_only",
            Arm::FrequencyOnly => "frequency_only",
            Arm::UnifiedRatioV1 => "unified_ratio_v1",
            Arm::Full => "full",
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            Arm::LpFt => Variant::None,
            Arm::PixelOnly => Variant::PixelOnly,
            Arm::FrequencyOnly => Variant::FrequencyOnly,
            Arm::UnifiedRatioV1 => Variant::UnifiedRatioV1,
            Arm::Full => Variant::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub variant: String,
    pub seed: u64,
    /// Per-epoch training loss of the arm's fine-tuning stage.
    pub epoch_losses: Vec<f64>,
    pub id_test: Metrics,
    pub ood_test: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub split: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub records: Vec<RunRecord>,
    pub summary: Vec<ArmSummary>,
}

/// Per-seed configuration of an ablation run.
pub fn seeded(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

/// Everything one seed of the ablation produces.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub pretrained: ModelState,
    pub probed: ModelState,
    pub records: Vec<RunRecord>,
}

/// Runs stage 0 and stage 1 once for `seed`, then fine-tunes every arm from
/// the shared probed state.
pub fn run_seed(
    bundle: &DatasetBundle,
    spec: &ModelSpec,
    base: &TrainConfig,
    seed: u64,
    jobs: usize,
) -> Result<SeedRun> {
    let cfg = seeded(base, seed);
    let init = init_model(spec, rng::derive_seed(seed, "model-init", 0))?;
    let pretrained = erm_train(&init, bundle, &cfg)?;
    let probed = train_stage(&pretrained.state, bundle, &probe_plan(&cfg), &cfg)?;
    let run_arm = |arm: Arm| -> Result<RunRecord> {
        let mut arm_cfg = cfg.clone();
        arm_cfg.augment.variant = arm.variant();
        let out = train_stage(&probed.state, bundle, &finetune_plan(&arm_cfg), &arm_cfg)?;
        Ok(RunRecord {
            run_id: format!("{}-s{seed}", arm.name()),
            variant: arm.name().to_string(),
            seed,
            epoch_losses: out.epoch_losses,
            id_test: evaluate(&out.state, &bundle.id_test)?,
            ood_test: evaluate(&out.state, &bundle.ood_test)?,
        })
    };
    let records = parallel_map(&Arm::ALL, jobs, run_arm)?;
    Ok(SeedRun {
        pretrained: pretrained.state,
        probed: probed.state,
        records,
    })
}

/// Applies `f` to every item on up to `jobs` threads; results keep input order.
pub fn parallel_map<T: Sync + Copy, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(|&it| f(it)).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(|&it| f(it)).collect::<Result<Vec<R>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Five arms per seed. `on_record` sees each record as soon as its seed
/// finishes, so callers can flush partial results if a later seed fails.
pub fn run_ablation(
    bundle: &DatasetBundle,
    spec: &ModelSpec,
    base: &TrainConfig,
    seeds: &[u64],
    jobs: usize,
    on_record: &mut dyn FnMut(&RunRecord) -> Result<()>,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Parameter("ablation needs at least one seed".into()));
    }
    base.validate()?;
    let mut records = Vec::new();
    for &seed in seeds {
        for rec in run_seed(bundle, spec, base, seed, jobs)?.records {
            on_record(&rec)?;
            records.push(rec);
        }
    }
    let summary = summarize(&records);
    Ok(AblationReport { records, summary })
}

pub fn summarize(records: &[RunRecord]) -> Vec<ArmSummary> {
    let mut out = Vec::new();
    for arm in Arm::ALL {
        let rows: Vec<&RunRecord> = records.iter().filter(|r| r.variant == arm.name()).collect();
        if rows.is_empty() {
            continue;
        }
        for split in ["id_test", "ood_test"] {
            for metric in ["accuracy", "macro_f1"] {
                let vals: Vec<f64> = rows
                    .iter()
                    .map(|r| {
                        let m = if split == "id_test" { &r.id_test } else { &r.ood_test };
                        if metric == "accuracy" {
                            m.accuracy
                        } else {
                            m.macro_f1
                        }
                    })
                    .collect();
                let (mean, std) = mean_and_sample_std(&vals);
                out.push(ArmSummary {
                    arm: arm.name().into(),
                    split: split.into(),
                    metric: metric.into(),
                    mean,
                    std,
                });
            }
        }
    }
    out
}

pub fn mean_and_sample_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
