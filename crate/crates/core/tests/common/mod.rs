#![allow(dead_code)]

use loanlens_core::dataset::{
    generate_synthetic, prune_attributes, split, DEFAULT_BIAS_STRENGTH, DEFAULT_MAX_MISSING_RATE,
};
use loanlens_core::fairness::GroupSpec;
use loanlens_core::model::train;
use loanlens_core::{Dataset, ScoringModel, TrainConfig};

pub struct Pipeline {
    pub data: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    pub model: ScoringModel,
    pub group: GroupSpec,
}

/// generate -> prune -> 70/30 split -> train, all on one seed.
pub fn pipeline(n: usize, seed: u64, bias: f64) -> Pipeline {
    let raw = generate_synthetic(n, seed, bias).unwrap();
    let data = prune_attributes(&raw, DEFAULT_MAX_MISSING_RATE).unwrap();
    let (train_set, test) = split(&data, 0.7, seed).unwrap();
    let model = train(&train_set, &TrainConfig::default()).unwrap();
    let group = GroupSpec::new(data.attribute("nationality").unwrap(), "foreign").unwrap();
    Pipeline {
        data,
        train: train_set,
        test,
        model,
        group,
    }
}

pub fn default_pipeline(seed: u64) -> Pipeline {
    pipeline(1000, seed, DEFAULT_BIAS_STRENGTH)
}
