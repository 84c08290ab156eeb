//! Versioned model checkpoints with exact round-trips.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::autodiff::Parameter;
use crate::error::{Error, Result};
use crate::model::{compose_model, Model, ModelSpec};
use crate::persist;
use crate::transition::TransitionMatrix;

const FORMAT: &str = "checkpoint";
const VERSION: u32 = 1;

/// Metric snapshot stored with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub metric_name: String,
    pub test_metric: f64,
    pub best_val_loss: f64,
    pub seed: u64,
}

/// All state needed to reconstruct a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: Vec<Parameter>,
    pub transition: Option<TransitionMatrix>,
    pub metrics: MetricsSnapshot,
}

impl Checkpoint {
    pub fn from_model(model: &Model, metrics: MetricsSnapshot) -> Self {
        let params = model
            .params()
            .iter()
            .map(|p| {
                let mut p = p.clone();
                p.value.drop_grad();
                p
            })
            .collect();
        Checkpoint {
            spec: model.spec.clone(),
            params,
            transition: model.transition().cloned(),
            metrics,
        }
    }

    /// Rebuild the model and restore every parameter by name.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = compose_model(&self.spec, self.transition.clone(), 0)?;
        if model.params().len() != self.params.len() {
            return Err(Error::Persistence(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for stored in &self.params {
            let found = model
                .params_mut()
                .iter_mut()
                .find(|p| p.name == stored.name)
                .ok_or_else(|| {
                    Error::Persistence(format!("checkpoint parameter {:?} not in model", stored.name))
                })?;
            if found.value.shape() != stored.value.shape() {
                return Err(Error::Persistence(format!(
                    "parameter {:?} shape {:?} != {:?}",
                    stored.name,
                    stored.value.shape(),
                    found.value.shape()
                )));
            }
            let trainable = found.trainable;
            found.value = stored.value.clone();
            if trainable {
                found.value.ensure_grad();
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save(path, FORMAT, VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        persist::load(path, FORMAT, VERSION)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, TensorValue};
    use crate::layers::EqualTimeBatch;
    use crate::model::TaskSpec;

    #[test]
    fn round_trip_reproduces_logits_bitwise() {
        let spec = ModelSpec::from_combo("trans-lstm", 4, TaskSpec::MultiLabel { classes: 2 })
            .unwrap();
        let model = compose_model(&spec, None, 99).unwrap();
        let batch = EqualTimeBatch::new(
            TensorValue::new(vec![1, 2, 2, 4], (0..16).map(|i| i as f64 / 16.0).collect())
                .unwrap(),
            vec![true; 4],
            vec![true; 2],
            vec![0; 4],
        )
        .unwrap();
        let mut tape = Tape::new();
        let logits = model.forward(&mut tape, &batch, None).unwrap();
        let before = tape.value(logits).clone();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::from_model(
            &model,
            MetricsSnapshot {
                metric_name: "macro_f1".into(),
                test_metric: 0.5,
                best_val_loss: 1.0,
                seed: 99,
            },
        );
        ck.save(&path).unwrap();
        let restored = Checkpoint::load(&path).unwrap().to_model().unwrap();
        let mut tape2 = Tape::new();
        let logits2 = restored.forward(&mut tape2, &batch, None).unwrap();
        assert_eq!(before.data(), tape2.value(logits2).data());
    }

    #[test]
    fn corrupted_checkpoint_rejected() {
        let spec = ModelSpec::from_combo("avg-lstm", 2, TaskSpec::MultiLabel { classes: 1 })
            .unwrap();
        let model = compose_model(&spec, None, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        Checkpoint::from_model(
            &model,
            MetricsSnapshot {
                metric_name: "macro_f1".into(),
                test_metric: 0.0,
                best_val_loss: 0.0,
                seed: 1,
            },
        )
        .save(&path)
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("0.0", "0.5")).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::Persistence(_))
        ));
    }
}
