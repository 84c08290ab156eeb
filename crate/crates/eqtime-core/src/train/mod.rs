//! Deterministic training: Adam with clipping, early stopping on
//! validation loss, best-checkpoint restore, seed-replicated runs.

mod checkpoint;
mod optimizer;

pub use checkpoint::{Checkpoint, MetricsSnapshot};
pub use optimizer::Adam;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::autodiff::Tape;
use crate::data::{bucket_batches, derive_seed, DatasetSchema, DatasetSplit, Minibatch};
use crate::error::{Error, Result};
use crate::eval::{evaluate_macro_f1, evaluate_perplexity};
use crate::model::{compose_model, Model, ModelSpec, TaskSpec};
use crate::parallel::maybe_par_map;
use crate::transition::{TransitionMatrix, TypeVocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            patience: 5,
            seed: 0,
            batch_size: 32,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one seeded training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// Macro-F1 (multilabel) or perplexity (next-token) on the test split.
    pub test_metric: f64,
    pub metric_name: String,
    pub seed: u64,
    /// Informational only; excluded from all reports to keep them
    /// byte-identical across runs.
    pub wall_clock_secs: f64,
}

/// Everything a training run needs besides its seed.
pub struct TrainSetup<'a> {
    pub spec: &'a ModelSpec,
    pub transition: Option<&'a TransitionMatrix>,
    pub schema: &'a DatasetSchema,
    pub vocab: &'a TypeVocab,
    pub split: &'a DatasetSplit,
}

fn batch_weight(mb: &Minibatch) -> f64 {
    match &mb.targets {
        crate::data::BatchTargets::MultiLabel { labels, .. } => labels.len() as f64,
        crate::data::BatchTargets::Tokens { ids } => {
            let live = mb
                .batch
                .step_mask()
                .iter()
                .zip(ids)
                .filter(|(&m, &id)| m && id >= 0)
                .count();
            live as f64
        }
    }
}

fn dataset_loss(model: &Model, batches: &[Minibatch]) -> Result<f64> {
    let losses = maybe_par_map(batches, |mb| -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, mb, None)?;
        Ok((tape.value(loss).data()[0], batch_weight(mb)))
    });
    let mut total = 0.0;
    let mut weight = 0.0;
    for item in losses {
        let (l, w) = item?;
        total += l * w;
        weight += w;
    }
    if weight == 0.0 {
        return Err(Error::Training("empty evaluation split".into()));
    }
    Ok(total / weight)
}

/// Train one model to the best-validation checkpoint and score it on
/// the test split. Fully deterministic in (setup, config).
pub fn train(setup: &TrainSetup, config: &TrainConfig) -> Result<(RunResult, Model)> {
    config.validate()?;
    let started = Instant::now();
    let mut model = compose_model(setup.spec, setup.transition.cloned(), config.seed)?;
    let mut adam = Adam::new(
        model.params(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xD209));
    let val_batches = bucket_batches(
        &setup.split.validation,
        setup.schema,
        setup.vocab,
        config.batch_size,
        0,
    )?;

    let mut train_losses = Vec::with_capacity(config.epochs);
    let mut val_losses = Vec::with_capacity(config.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params().clone();
    let mut since_best = 0usize;
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let batches = bucket_batches(
            &setup.split.train,
            setup.schema,
            setup.vocab,
            config.batch_size,
            derive_seed(config.seed, 1 + epoch as u64),
        )?;
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for mb in &batches {
            step += 1;
            model.params_mut().zero_grads();
            let mut tape = Tape::new();
            let dropout = (model.spec.dropout > 0.0).then_some((model.spec.dropout, &mut dropout_rng));
            let loss = model.loss(&mut tape, mb, dropout)?;
            let loss_value = tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::Training(format!(
                    "loss diverged to {loss_value} at step {step} (epoch {epoch})"
                )));
            }
            tape.backward(loss)?;
            tape.accumulate_param_grads(model.params_mut());
            Adam::clip_global_norm(model.params_mut(), config.clip_norm);
            adam.step(model.params_mut());
            let w = batch_weight(mb);
            epoch_loss += loss_value * w;
            epoch_weight += w;
        }
        train_losses.push(epoch_loss / epoch_weight.max(1.0));

        let val_loss = dataset_loss(&model, &val_batches)?;
        val_losses.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best_params = model.params().clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }
    *model.params_mut() = best_params;

    let (metric_name, test_metric) = match model.spec.task {
        TaskSpec::MultiLabel { .. } => {
            let f1 = evaluate_macro_f1(
                &model,
                &setup.split.test,
                setup.schema,
                setup.vocab,
                config.batch_size,
            )?;
            ("macro_f1".to_string(), f1.macro_f1)
        }
        TaskSpec::NextToken { .. } => {
            let ppl = evaluate_perplexity(
                &model,
                &setup.split.test,
                setup.schema,
                setup.vocab,
                config.batch_size,
            )?;
            ("perplexity".to_string(), ppl.value)
        }
    };

    let result = RunResult {
        train_losses,
        val_losses,
        test_metric,
        metric_name,
        seed: config.seed,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((result, model))
}

/// Train one run per seed; runs are independent and fan out in parallel.
pub fn train_seeds(
    setup: &TrainSetup,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<(RunResult, Model)>> {
    let outcomes = maybe_par_map(seeds, |&seed| {
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        train(setup, &cfg)
    });
    outcomes.into_iter().collect()
}
