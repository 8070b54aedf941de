use rand::Rng;

use super::{DatasetBundle, LabeledExample};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Where the mixing partner `x2` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairMode {
    /// Domain adaptation: partner drawn from the unlabeled target pool.
    Da,
    /// Domain generalization: partner drawn from another source domain.
    Dg,
}

impl PairMode {
    pub fn name(self) -> &'static str {
        match self {
            PairMode::Da => "da",
            PairMode::Dg => "dg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "da" => Some(PairMode::Da),
            "dg" => Some(PairMode::Dg),
            _ => None,
        }
    }
}

/// Draws `x1` uniformly from the train split and a partner `x2` per `mode`.
pub fn sample_pair<'a>(
    bundle: &'a DatasetBundle,
    mode: PairMode,
    rng: &mut Stream,
) -> Result<(&'a LabeledExample, &'a Tensor)> {
    if bundle.train.is_empty() {
        return Err(Error::Sampling("train split is empty".into()));
    }
    match mode {
        PairMode::Da => {
            if bundle.target_unlabeled.is_empty() {
                return Err(Error::Sampling("mode da needs unlabeled target images".into()));
            }
            let x1 = &bundle.train[rng.gen_range(0..bundle.train.len())];
            let x2 = &bundle.target_unlabeled[rng.gen_range(0..bundle.target_unlabeled.len())];
            Ok((x1, x2))
        }
        PairMode::Dg => {
            let first = bundle.train[0].domain;
            if bundle.train.iter().all(|e| e.domain == first) {
                return Err(Error::Sampling("mode dg needs at least two source domains".into()));
            }
            let x1 = &bundle.train[rng.gen_range(0..bundle.train.len())];
            partner_from_other_domain(&bundle.train, x1.domain, rng).map(|x2| (x1, &x2.image))
        }
    }
}

pub(crate) fn partner_from_other_domain<'a>(
    pool: &'a [LabeledExample],
    domain: usize,
    rng: &mut Stream,
) -> Result<&'a LabeledExample> {
    let candidates = pool.iter().filter(|e| e.domain != domain).count();
    if candidates == 0 {
        return Err(Error::Sampling(format!("no example outside domain {domain}")));
    }
    let k = rng.gen_range(0..candidates);
    Ok(pool
        .iter()
        .filter(|e| e.domain != domain)
        .nth(k)
        .expect("k < candidates"))
}
