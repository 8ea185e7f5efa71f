use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, evaluate, AdamConfig, AdamState, Metrics, PreparedBag};
use crate::error::{KatError, Result};
use crate::model::{init_params, loss_and_gradient, KatConfig, KatParams, Mode};

/// Validation quantity watched for early stopping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValLoss,
    ValAccuracy,
    ValMacroAuc,
}

impl Monitor {
    /// Score where larger is better.
    fn score(self, m: &Metrics) -> f64 {
        match self {
            Monitor::ValLoss => -m.loss,
            Monitor::ValAccuracy => m.accuracy,
            Monitor::ValMacroAuc => m.macro_auc.unwrap_or(f64::NEG_INFINITY),
        }
    }
}

impl std::str::FromStr for Monitor {
    type Err = KatError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val_loss" => Ok(Monitor::ValLoss),
            "val_accuracy" => Ok(Monitor::ValAccuracy),
            "val_macro_auc" => Ok(Monitor::ValMacroAuc),
            _ => Err(KatError::Config(format!(
                "unknown monitor '{s}' (val_loss, val_accuracy, val_macro_auc)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    /// Bags per optimizer step; their gradients are averaged.
    pub batch_size: usize,
    /// Seeds parameter initialization, shuffling and dropout.
    pub seed: u64,
    pub monitor: Monitor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            max_epochs: 100,
            patience: 10,
            batch_size: 1,
            seed: 0,
            monitor: Monitor::ValLoss,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(KatError::Config(
                "patience, batch size and epoch budget must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's training bags, each taken before its step.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_auc: Option<f64>,
    pub val_weighted_auc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }
}

fn check_split(bags: &[PreparedBag], what: &str, config: &KatConfig) -> Result<()> {
    if bags.is_empty() {
        return Err(KatError::Data(format!("{what} split is empty")));
    }
    if let Some(b) = bags.iter().find(|b| b.label >= config.n_classes) {
        return Err(KatError::Data(format!(
            "bag {} has label {} but the model has {} classes",
            b.id, b.label, config.n_classes
        )));
    }
    Ok(())
}

/// Per-draw dropout generator, independent of how bags are scheduled.
fn dropout_rng(seed: u64, step: u64, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_mul(1 << 20).wrapping_add(slot as u64 + 1));
    rng
}

pub fn train(
    train: &[PreparedBag],
    val: &[PreparedBag],
    config: &KatConfig,
    tc: &TrainConfig,
) -> Result<(KatParams, History)> {
    train_with_observer(train, val, config, tc, |_| {})
}

/// Trains from a seeded initialization and returns the parameters of the
/// best monitored epoch. `observer` sees each epoch record as it is made.
pub fn train_with_observer(
    train: &[PreparedBag],
    val: &[PreparedBag],
    config: &KatConfig,
    tc: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<(KatParams, History)> {
    config.validate()?;
    tc.validate()?;
    check_split(train, "training", config)?;
    check_split(val, "validation", config)?;

    let mut params = init_params(config, tc.seed)?;
    let mut flat = params.to_flat();
    let mut state = AdamState::new(flat.len());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    shuffle_rng.set_stream(1);

    let mut history = History::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let dropout_seed = tc.seed ^ 0x5eed_d409;

    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            step += 1;
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let bag = &train[i];
                    let mut rng = dropout_rng(dropout_seed, step, slot);
                    loss_and_gradient(
                        &params,
                        &bag.features,
                        &bag.masks,
                        bag.label,
                        config,
                        &mut Mode::Train(&mut rng),
                    )
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; flat.len()];
            for (l, g) in &results {
                loss_sum += l;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam_step(&mut flat, &grad, &mut state, step, &tc.adam)?;
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(KatError::NonFinite(format!("parameters diverged at epoch {epoch}")));
            }
            params.load_flat(&flat)?;
        }

        let m = evaluate(&params, val, config)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: m.loss,
            val_accuracy: m.accuracy,
            val_macro_auc: m.macro_auc,
            val_weighted_auc: m.weighted_auc,
        };
        observer(&record);
        history.epochs.push(record);

        let score = tc.monitor.score(&m);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, flat.clone()));
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= tc.patience {
            history.stopped_early = true;
            break;
        }
    }

    let (_, best_flat) = best.expect("at least one epoch ran");
    params.load_flat(&best_flat)?;
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bag_io::{synth_dataset, SynthConfig};
    use crate::model::MaskSettings;
    use crate::train::prepare_bags;

    fn tiny() -> (Vec<PreparedBag>, KatConfig, TrainConfig) {
        let bags = synth_dataset(&SynthConfig {
            n_bags: 8,
            d_f: 8,
            side_min: 5,
            side_max: 7,
            motif_radius: 1.5,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let settings = MaskSettings {
            nk_bar: 8,
            anchor_seed: 1,
            deltas: vec![8.0, 11.0],
        };
        let prepared = prepare_bags(&bags, &settings).unwrap();
        let config = KatConfig::new(8, 8, 2, 2, 2);
        let tc = TrainConfig {
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            max_epochs: 200,
            patience: 200,
            batch_size: 2,
            seed: 11,
            monitor: Monitor::ValLoss,
        };
        (prepared, config, tc)
    }

    #[test]
    fn overfits_eight_bags() {
        let (bags, config, tc) = tiny();
        let (params, history) = train(&bags, &bags, &config, &tc).unwrap();
        let m = evaluate(&params, &bags, &config).unwrap();
        assert_eq!(m.accuracy, 1.0, "{}", history.to_json_lines());
    }

    #[test]
    fn history_is_reproducible_and_restores_best() {
        let (bags, config, mut tc) = tiny();
        tc.max_epochs = 15;
        tc.patience = 3;
        let (train_bags, val_bags) = bags.split_at(6);
        let (p1, h1) = train(train_bags, val_bags, &config, &tc).unwrap();
        let (p2, h2) = train(train_bags, val_bags, &config, &tc).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        let best = h1.best().unwrap();
        assert!(best.val_loss <= h1.epochs.last().unwrap().val_loss);
        let restored = evaluate(&p1, val_bags, &config).unwrap();
        assert_eq!(restored.loss, best.val_loss);
        assert_eq!(h1.to_json_lines().lines().count(), h1.epochs.len());
    }

    #[test]
    fn empty_split_is_a_data_error() {
        let (bags, config, tc) = tiny();
        assert!(matches!(train(&[], &bags, &config, &tc), Err(KatError::Data(_))));
        assert!(matches!(train(&bags, &[], &config, &tc), Err(KatError::Data(_))));
    }
}
