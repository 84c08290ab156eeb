//! Composition of equal-time layers with sequence backbones: the U-V
//! model family (avg/ds/lstm/trans over sets, LSTM/transformer over the
//! sequence), plus task heads.

mod backbone;

pub use backbone::{LstmBackbone, TransformerBackbone};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, TensorValue, ValueId};
use crate::data::{BatchTargets, Minibatch};
use crate::error::{Error, Result};
use crate::layers::{
    forward_equal_time, DeepSetLayer, EqualTimeBatch, EqualTimeLayer, InputEncoder, IterationRule,
    LstmSetConfig, LstmSetLayer, PoolKind, SetAttentionConfig, SetTransformerLayer,
};
use crate::nn::xavier;
use crate::transition::TransitionMatrix;

/// U: the equal-time layer choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EqualTimeKind {
    Average,
    DeepSet,
    LstmSet,
    SetTransformer,
    SetTransformerTransition,
}

/// V: the sequence backbone choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    Lstm,
    Transformer,
}

/// Task head shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskSpec {
    MultiLabel { classes: usize },
    NextToken { vocab: usize },
}

impl TaskSpec {
    pub fn head_dim(&self) -> usize {
        match self {
            TaskSpec::MultiLabel { classes } => *classes,
            TaskSpec::NextToken { vocab } => *vocab,
        }
    }
}

/// Declarative description of one composed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub equal_time: EqualTimeKind,
    pub backbone: BackboneKind,
    pub task: TaskSpec,
    /// Input/event representation width M.
    pub feature_dim: usize,
    /// When set, input vectors are rows of a trainable embedding table
    /// with this many rows (event-type vocabulary incl. the unknown
    /// slot); event features are ignored.
    #[serde(default)]
    pub embed_types: Option<usize>,

    // equal-time knobs
    #[serde(default = "default_set_heads")]
    pub set_heads: usize,
    #[serde(default = "default_one")]
    pub set_depth: usize,
    #[serde(default = "default_set_ff")]
    pub set_ff: usize,
    #[serde(default = "default_pool")]
    pub set_pool: PoolKind,
    #[serde(default = "default_hidden")]
    pub lstm_set_hidden: usize,
    #[serde(default = "default_attn_dim")]
    pub lstm_set_attn: usize,
    #[serde(default = "default_iterations")]
    pub lstm_set_iterations: IterationRule,
    #[serde(default)]
    pub lstm_set_init: f64,

    // backbone knobs
    #[serde(default = "default_hidden")]
    pub backbone_hidden: usize,
    #[serde(default = "default_one")]
    pub backbone_layers: usize,
    #[serde(default = "default_set_heads")]
    pub backbone_heads: usize,
    #[serde(default = "default_backbone_ff")]
    pub backbone_ff: usize,
    #[serde(default)]
    pub dropout: f64,
}

fn default_one() -> usize {
    1
}
fn default_set_heads() -> usize {
    2
}
fn default_set_ff() -> usize {
    32
}
fn default_pool() -> PoolKind {
    PoolKind::MaskedMean
}
fn default_hidden() -> usize {
    24
}
fn default_attn_dim() -> usize {
    16
}
fn default_backbone_ff() -> usize {
    48
}
fn default_iterations() -> IterationRule {
    IterationRule::LiveCount
}

impl ModelSpec {
    /// Build a spec from the U-V shorthand: `avg-lstm`, `ds-lstm`,
    /// `lstm-lstm`, `trans-lstm`, `trans-trans`, or `trans-trans-T`.
    pub fn from_combo(combo: &str, feature_dim: usize, task: TaskSpec) -> Result<Self> {
        let (equal_time, backbone) = match combo {
            "avg-lstm" => (EqualTimeKind::Average, BackboneKind::Lstm),
            "ds-lstm" => (EqualTimeKind::DeepSet, BackboneKind::Lstm),
            "lstm-lstm" => (EqualTimeKind::LstmSet, BackboneKind::Lstm),
            "trans-lstm" => (EqualTimeKind::SetTransformer, BackboneKind::Lstm),
            "trans-trans" => (EqualTimeKind::SetTransformer, BackboneKind::Transformer),
            "trans-trans-T" => (
                EqualTimeKind::SetTransformerTransition,
                BackboneKind::Transformer,
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown model combo {other:?} (expected avg-lstm, ds-lstm, lstm-lstm, \
                     trans-lstm, trans-trans, or trans-trans-T)"
                )));
            }
        };
        Ok(ModelSpec {
            equal_time,
            backbone,
            task,
            feature_dim,
            embed_types: None,
            set_heads: default_set_heads(),
            set_depth: 1,
            set_ff: default_set_ff(),
            set_pool: default_pool(),
            lstm_set_hidden: default_hidden(),
            lstm_set_attn: default_attn_dim(),
            lstm_set_iterations: default_iterations(),
            lstm_set_init: 0.0,
            backbone_hidden: default_hidden(),
            backbone_layers: 1,
            backbone_heads: default_set_heads(),
            backbone_ff: default_backbone_ff(),
            dropout: 0.0,
        })
    }

    pub fn combo_name(&self) -> String {
        let u = match self.equal_time {
            EqualTimeKind::Average => "avg",
            EqualTimeKind::DeepSet => "ds",
            EqualTimeKind::LstmSet => "lstm",
            EqualTimeKind::SetTransformer => "trans",
            EqualTimeKind::SetTransformerTransition => return "trans-trans-T".into(),
        };
        let v = match self.backbone {
            BackboneKind::Lstm => "lstm",
            BackboneKind::Transformer => "trans",
        };
        format!("{u}-{v}")
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        match self.task {
            TaskSpec::MultiLabel { classes } if classes < 1 => {
                return Err(Error::Config("multilabel task needs C >= 1".into()));
            }
            TaskSpec::NextToken { vocab } if vocab < 2 => {
                return Err(Error::Config("next-token task needs vocab >= 2".into()));
            }
            _ => {}
        }
        let set_attention = matches!(
            self.equal_time,
            EqualTimeKind::SetTransformer | EqualTimeKind::SetTransformerTransition
        );
        if set_attention && (self.set_heads == 0 || self.feature_dim % self.set_heads != 0) {
            return Err(Error::Config(format!(
                "set heads {} must divide feature_dim {}",
                self.set_heads, self.feature_dim
            )));
        }
        if matches!(self.backbone, BackboneKind::Transformer)
            && (self.backbone_heads == 0 || self.backbone_hidden % self.backbone_heads != 0)
        {
            return Err(Error::Config(format!(
                "backbone heads {} must divide hidden dim {}",
                self.backbone_heads, self.backbone_hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let Some(rows) = self.embed_types {
            if rows == 0 {
                return Err(Error::Config("embedding table needs rows".into()));
            }
        }
        Ok(())
    }
}

enum BackboneImpl {
    Lstm(LstmBackbone),
    Transformer(TransformerBackbone),
}

/// A composed, initialized model: parameters plus the wiring described
/// by its [`ModelSpec`].
pub struct Model {
    pub spec: ModelSpec,
    params: ParamSet,
    equal_time: EqualTimeLayer,
    backbone: BackboneImpl,
    encoder: InputEncoder,
    transition: Option<TransitionMatrix>,
}

/// Build the model described by `spec`, seeding all parameter init from
/// `seed`. The transition-biased variant requires a matrix.
pub fn compose_model(
    spec: &ModelSpec,
    transition: Option<TransitionMatrix>,
    seed: u64,
) -> Result<Model> {
    spec.validate()?;
    if spec.equal_time == EqualTimeKind::SetTransformerTransition && transition.is_none() {
        return Err(Error::Config(
            "trans-trans-T requires a transition matrix".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let m = spec.feature_dim;

    let encoder = match spec.embed_types {
        None => InputEncoder::Features,
        Some(rows) => {
            let table = ps.push("embed.table", xavier(&mut rng, rows, m), true)?;
            InputEncoder::TypeEmbedding(table)
        }
    };

    let equal_time = match spec.equal_time {
        EqualTimeKind::Average => EqualTimeLayer::Average,
        EqualTimeKind::DeepSet => {
            EqualTimeLayer::DeepSet(DeepSetLayer::new(&mut ps, "et", m, &mut rng)?)
        }
        EqualTimeKind::LstmSet => EqualTimeLayer::LstmSet(LstmSetLayer::new(
            &mut ps,
            "et",
            &LstmSetConfig {
                m,
                hidden: spec.lstm_set_hidden,
                attn_dim: spec.lstm_set_attn,
                iterations: spec.lstm_set_iterations,
                init_value: spec.lstm_set_init,
            },
            &mut rng,
        )?),
        EqualTimeKind::SetTransformer | EqualTimeKind::SetTransformerTransition => {
            let cfg = SetAttentionConfig {
                m,
                heads: spec.set_heads,
                depth: spec.set_depth,
                ff_dim: spec.set_ff,
                pool: spec.set_pool,
            };
            let with_bias = spec.equal_time == EqualTimeKind::SetTransformerTransition;
            let layer = SetTransformerLayer::new(&mut ps, "et", &cfg, with_bias, &mut rng)?;
            if with_bias {
                EqualTimeLayer::SetTransformerTransition(layer)
            } else {
                EqualTimeLayer::SetTransformer(layer)
            }
        }
    };

    let head_dim = spec.task.head_dim();
    let backbone = match spec.backbone {
        BackboneKind::Lstm => BackboneImpl::Lstm(LstmBackbone::new(
            &mut ps,
            "bb",
            m,
            spec.backbone_hidden,
            head_dim,
            &mut rng,
        )?),
        BackboneKind::Transformer => BackboneImpl::Transformer(TransformerBackbone::new(
            &mut ps,
            "bb",
            m,
            spec.backbone_hidden,
            spec.backbone_layers,
            spec.backbone_heads,
            spec.backbone_ff,
            head_dim,
            &mut rng,
        )?),
    };

    Ok(Model {
        spec: spec.clone(),
        params: ps,
        equal_time,
        backbone,
        encoder,
        transition,
    })
}

impl Model {
    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn transition(&self) -> Option<&TransitionMatrix> {
        self.transition.as_ref()
    }

    /// Logits: `[B, C]` for multilabel, `[B, T, V]` for next-token.
    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &EqualTimeBatch,
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<ValueId> {
        let reps = forward_equal_time(
            &self.equal_time,
            tape,
            &self.params,
            batch,
            &self.encoder,
            self.transition.as_ref(),
        )?;
        match &self.backbone {
            BackboneImpl::Lstm(bb) => bb.forward(tape, &self.params, &reps, batch, &self.spec.task),
            BackboneImpl::Transformer(bb) => {
                let dr = dropout.as_mut().map(|(r, rng)| (*r, &mut **rng));
                bb.forward(tape, &self.params, &reps, batch, &self.spec.task, dr)
            }
        }
    }

    /// Scalar training loss for one minibatch: mean binary cross-entropy
    /// (multilabel) or mean categorical cross-entropy over live steps.
    pub fn loss(
        &self,
        tape: &mut Tape,
        mb: &Minibatch,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<ValueId> {
        let logits = self.forward(tape, &mb.batch, dropout)?;
        match (&mb.targets, &self.spec.task) {
            (BatchTargets::MultiLabel { labels, classes }, TaskSpec::MultiLabel { classes: c }) => {
                if classes != c {
                    return Err(Error::Config(format!(
                        "batch has {classes} classes, model expects {c}"
                    )));
                }
                tape.bce_with_logits_mean(logits, labels)
            }
            (BatchTargets::Tokens { ids }, TaskSpec::NextToken { vocab }) => {
                let (b, t, _, _) = mb.batch.dims();
                let flat = tape.reshape(logits, vec![b * t, *vocab])?;
                let live: Vec<bool> = (0..b * t)
                    .map(|i| mb.batch.step_mask()[i] && ids[i] >= 0)
                    .collect();
                tape.softmax_xent_mean(flat, ids, &live)
            }
            _ => Err(Error::Config(
                "batch targets do not match the model task".into(),
            )),
        }
    }

    /// Predicted probabilities on a frozen model: sigmoid per class for
    /// multilabel `[B, C]`, softmax per live step for next-token
    /// `[B, T, V]`.
    pub fn predict_probs(&self, batch: &EqualTimeBatch) -> Result<TensorValue> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, batch, None)?;
        let value = tape.value(logits);
        match self.spec.task {
            TaskSpec::MultiLabel { .. } => {
                let data = value
                    .data()
                    .iter()
                    .map(|&x| 1.0 / (1.0 + (-x).exp()))
                    .collect();
                TensorValue::new(value.shape().to_vec(), data)
            }
            TaskSpec::NextToken { vocab } => {
                let mut data = value.data().to_vec();
                for row in data.chunks_mut(vocab) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut denom = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        denom += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= denom;
                    }
                }
                TensorValue::new(value.shape().to_vec(), data)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_batch(b: usize, t: usize, n: usize, m: usize) -> EqualTimeBatch {
        let mut events = vec![0.0; b * t * n * m];
        for (i, v) in events.iter_mut().enumerate() {
            *v = ((i * 13 % 7) as f64 - 3.0) / 10.0;
        }
        EqualTimeBatch::new(
            TensorValue::new(vec![b, t, n, m], events).unwrap(),
            vec![true; b * t * n],
            vec![true; b * t],
            vec![0; b * t * n],
        )
        .unwrap()
    }

    #[test]
    fn all_six_combos_compose_and_run() {
        let task = TaskSpec::MultiLabel { classes: 3 };
        let names = [
            "avg-lstm",
            "ds-lstm",
            "lstm-lstm",
            "trans-lstm",
            "trans-trans",
            "trans-trans-T",
        ];
        let vocab = crate::transition::TypeVocab::from_names(vec!["e000".into()]).unwrap();
        let k = vocab.total_types();
        let matrix =
            TransitionMatrix::from_probs(vec![1.0 / k as f64; k * k], vocab).unwrap();
        for name in names {
            let spec = ModelSpec::from_combo(name, 4, task).unwrap();
            assert_eq!(spec.combo_name(), name);
            let needs_matrix = name == "trans-trans-T";
            let model =
                compose_model(&spec, needs_matrix.then(|| matrix.clone()), 7).unwrap();
            let batch = toy_batch(2, 3, 2, 4);
            let mut tape = Tape::new();
            let logits = model.forward(&mut tape, &batch, None).unwrap();
            assert_eq!(tape.shape(logits), &[2, 3]);
            assert!(tape.value(logits).all_finite());
        }
    }

    #[test]
    fn transition_variant_without_matrix_is_a_config_error() {
        let spec = ModelSpec::from_combo(
            "trans-trans-T",
            4,
            TaskSpec::MultiLabel { classes: 1 },
        )
        .unwrap();
        assert!(matches!(compose_model(&spec, None, 0), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_combo_is_a_config_error() {
        assert!(matches!(
            ModelSpec::from_combo("gru-gru", 4, TaskSpec::MultiLabel { classes: 1 }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn next_token_logits_have_sequence_shape() {
        let spec = ModelSpec::from_combo("trans-trans", 4, TaskSpec::NextToken { vocab: 5 })
            .unwrap();
        let model = compose_model(&spec, None, 3).unwrap();
        let batch = toy_batch(2, 4, 2, 4);
        let mut tape = Tape::new();
        let logits = model.forward(&mut tape, &batch, None).unwrap();
        assert_eq!(tape.shape(logits), &[2, 4, 5]);
        let probs = model.predict_probs(&batch).unwrap();
        for row in probs.data().chunks(5) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = ModelSpec::from_combo("trans-trans", 8, TaskSpec::NextToken { vocab: 9 })
            .unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }
}
