//! Seeded synthetic corpora with a known ground-truth ordering.
//!
//! Event types follow a Markov chain (so the true transition matrix is
//! known) and features are type-conditioned Gaussians. Every sequence is
//! emitted twice: fully ordered (all singleton steps) and binned into
//! equal-time sets, with identical targets computed from the ordered
//! stream. Labels come from the mean-plus-std threshold rule applied to
//! a seeded functional that can be made sensitive to within-bin order
//! and within-bin composition.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};

use crate::data::{
    derive_seed, split_dataset, DatasetSchema, DatasetSplit, EventRecord,
    PartiallyOrderedSequence, SplitKind, Target, TimeStep,
};
use crate::data::labels::{threshold_labels, LabelStats};
use crate::error::{Error, Result};
use crate::transition::{TransitionMatrix, TypeVocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    MultiLabel { classes: usize },
    NextToken,
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub sequences: usize,
    pub k_types: usize,
    pub feature_dim: usize,
    /// Range of binned sequence lengths (inclusive).
    pub t_min: usize,
    pub t_max: usize,
    pub max_events_per_step: usize,
    /// Probability that a step holds more than one event.
    pub p_multi: f64,
    /// Binning threshold used for timestamps; 0 disables co-occurrence.
    pub bin_width: f64,
    /// Feature noise around the per-type mean.
    pub feature_noise: f64,
    /// Weight of the within-bin order-sensitive label term.
    pub order_weight: f64,
    /// Weight of the within-bin composition-sensitive label term.
    pub composition_weight: f64,
    pub task: SyntheticTask,
    pub split: (f64, f64, f64),
    pub split_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            sequences: 200,
            k_types: 4,
            feature_dim: 6,
            t_min: 4,
            t_max: 12,
            max_events_per_step: 4,
            p_multi: 0.4,
            bin_width: 1.0,
            feature_noise: 0.25,
            order_weight: 0.5,
            composition_weight: 1.0,
            task: SyntheticTask::MultiLabel { classes: 3 },
            split: (0.7, 0.15, 0.15),
            split_seed: 17,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.sequences == 0
            || self.k_types < 2
            || self.feature_dim == 0
            || self.t_min == 0
            || self.t_min > self.t_max
            || self.max_events_per_step == 0
            || !(0.0..=1.0).contains(&self.p_multi)
            || self.bin_width < 0.0
            || self.feature_noise < 0.0
        {
            return Err(Error::Config("invalid synthetic generator ranges".into()));
        }
        if let SyntheticTask::MultiLabel { classes } = self.task {
            if classes == 0 {
                return Err(Error::Config("need at least one class".into()));
            }
        }
        Ok(())
    }
}

/// Binned corpus, its fully ordered twin, and the generator ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub schema: DatasetSchema,
    pub binned: DatasetSplit,
    pub ordered: DatasetSplit,
    pub vocab: TypeVocab,
    pub true_matrix: TransitionMatrix,
}

struct GroundTruth {
    chain: Vec<f64>,
    type_means: Vec<Vec<f64>>,
    order_dirs: Vec<Vec<f64>>,
    comp_score_dirs: Vec<Vec<f64>>,
    comp_value_dirs: Vec<Vec<f64>>,
}

const ORDER_DECAY: f64 = 0.6;
const COMP_SHARPNESS: f64 = 2.0;

fn unit_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    v.into_iter().map(|x| x / norm).collect()
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let draw: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One generated sequence before target attachment.
struct RawSequence {
    // events in true order with their intended bin index
    types: Vec<usize>,
    features: Vec<Vec<f64>>,
    bin_of: Vec<usize>,
    bins: usize,
    timestamps: Vec<f64>,
    /// For next-token data: type of the first event of the hidden
    /// (T+1)-th bin, the target of the final step.
    next_after_end: usize,
}

fn generate_raw(cfg: &SyntheticConfig, truth: &GroundTruth, index: u64) -> RawSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index));
    let k = cfg.k_types;
    let bins = rng.gen_range(cfg.t_min..=cfg.t_max);
    let extra_bin = matches!(cfg.task, SyntheticTask::NextToken);
    let total_bins = bins + usize::from(extra_bin);

    let mut types = Vec::new();
    let mut features = Vec::new();
    let mut bin_of = Vec::new();
    let mut timestamps = Vec::new();
    let mut state = rng.gen_range(0..k);
    let mut now = 0.0;
    let mut next_after_end = 0;
    for b in 0..total_bins {
        let n = if cfg.bin_width <= 0.0 || rng.gen_range(0.0..1.0) >= cfg.p_multi {
            1
        } else {
            rng.gen_range(2..=cfg.max_events_per_step)
        };
        for j in 0..n {
            if b > 0 || j > 0 {
                state = sample_categorical(&mut rng, &truth.chain[state * k..(state + 1) * k]);
            }
            if j == 0 {
                // new bin: gap at or above the threshold
                now += cfg.bin_width * 1.5 + rng.gen_range(0.0..1.0) * cfg.bin_width + 0.1;
            } else {
                // same bin: gap strictly under the threshold
                now += cfg.bin_width * rng.gen_range(0.05..0.95);
            }
            if b == bins {
                // hidden final bin: only its first type matters
                if j == 0 {
                    next_after_end = state;
                }
                continue;
            }
            let feat: Vec<f64> = truth.type_means[state]
                .iter()
                .map(|&mu| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu + cfg.feature_noise * z
                })
                .collect();
            types.push(state);
            features.push(feat);
            bin_of.push(b);
            timestamps.push(now);
        }
    }
    RawSequence {
        types,
        features,
        bin_of,
        bins,
        timestamps,
        next_after_end,
    }
}

/// Label functional over the ordered stream: per class, a sum over bins
/// of an order-sensitive decayed projection plus a composition-sensitive
/// softmax pool. Both collapse to plain projections on singleton bins.
fn label_functionals(cfg: &SyntheticConfig, truth: &GroundTruth, raw: &RawSequence) -> Vec<f64> {
    let classes = match cfg.task {
        SyntheticTask::MultiLabel { classes } => classes,
        SyntheticTask::NextToken => return Vec::new(),
    };
    let mut z = vec![0.0; classes];
    for c in 0..classes {
        let d_c = &truth.order_dirs[c];
        let a_c = &truth.comp_score_dirs[c];
        let b_c = &truth.comp_value_dirs[c];
        for bin in 0..raw.bins {
            let members: Vec<usize> = (0..raw.types.len())
                .filter(|&i| raw.bin_of[i] == bin)
                .collect();
            let mut order_term = 0.0;
            for (pos, &i) in members.iter().enumerate() {
                let proj: f64 = raw.features[i].iter().zip(d_c).map(|(x, w)| x * w).sum();
                order_term += ORDER_DECAY.powi(pos as i32) * proj;
            }
            let scores: Vec<f64> = members
                .iter()
                .map(|&i| {
                    COMP_SHARPNESS
                        * raw.features[i]
                            .iter()
                            .zip(a_c)
                            .map(|(x, w)| x * w)
                            .sum::<f64>()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            let mut comp_term = 0.0;
            for (si, &i) in members.iter().enumerate() {
                let w = (scores[si] - max).exp() / denom;
                let val: f64 = raw.features[i].iter().zip(b_c).map(|(x, v)| x * v).sum();
                comp_term += w * val;
            }
            z[c] += cfg.order_weight * order_term + cfg.composition_weight * comp_term;
        }
    }
    z
}

fn type_name(t: usize) -> String {
    format!("e{t:03}")
}

fn build_twins(
    cfg: &SyntheticConfig,
    raw: &RawSequence,
    index: usize,
) -> (PartiallyOrderedSequence, PartiallyOrderedSequence) {
    let seq_id = format!("syn-{index:06}");
    let mut binned_steps: Vec<TimeStep> = (0..raw.bins).map(|_| TimeStep { events: vec![] }).collect();
    let mut ordered_steps = Vec::with_capacity(raw.types.len());
    for i in 0..raw.types.len() {
        let ev = EventRecord {
            timestamp: raw.timestamps[i],
            type_label: type_name(raw.types[i]),
            features: raw.features[i].clone(),
        };
        binned_steps[raw.bin_of[i]].events.push(ev.clone());
        ordered_steps.push(TimeStep { events: vec![ev] });
    }

    let (binned_target, ordered_target) = match cfg.task {
        SyntheticTask::MultiLabel { classes } => (
            Target::MultiLabel(vec![0; classes]),
            Target::MultiLabel(vec![0; classes]),
        ),
        SyntheticTask::NextToken => {
            // binned target t: type of the first event of bin t+1
            let mut first_of_bin = vec![raw.next_after_end; raw.bins + 1];
            for i in (0..raw.types.len()).rev() {
                first_of_bin[raw.bin_of[i]] = raw.types[i];
            }
            let binned: Vec<i64> = (0..raw.bins).map(|b| first_of_bin[b + 1] as i64).collect();
            // ordered target l: type of the next event in true order
            let mut ordered: Vec<i64> = raw.types[1..].iter().map(|&t| t as i64).collect();
            ordered.push(raw.next_after_end as i64);
            (Target::Tokens(binned), Target::Tokens(ordered))
        }
    };

    (
        PartiallyOrderedSequence {
            seq_id: seq_id.clone(),
            steps: binned_steps,
            target: binned_target,
        },
        PartiallyOrderedSequence {
            seq_id,
            steps: ordered_steps,
            target: ordered_target,
        },
    )
}

/// Generate the twin corpora described by `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let k = cfg.k_types;
    let mut master = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    let dirichlet = Dirichlet::new(&vec![1.5; k])
        .map_err(|e| Error::Config(format!("chain prior: {e}")))?;
    let mut chain = Vec::with_capacity(k * k);
    for _ in 0..k {
        chain.extend(dirichlet.sample(&mut master));
    }
    let classes = match cfg.task {
        SyntheticTask::MultiLabel { classes } => classes,
        SyntheticTask::NextToken => 0,
    };
    let truth = GroundTruth {
        type_means: (0..k)
            .map(|_| (0..cfg.feature_dim).map(|_| {
                let z: f64 = StandardNormal.sample(&mut master);
                z
            }).collect())
            .collect(),
        order_dirs: (0..classes).map(|_| unit_vec(&mut master, cfg.feature_dim)).collect(),
        comp_score_dirs: (0..classes).map(|_| unit_vec(&mut master, cfg.feature_dim)).collect(),
        comp_value_dirs: (0..classes).map(|_| unit_vec(&mut master, cfg.feature_dim)).collect(),
        chain,
    };

    let raws: Vec<RawSequence> = crate::parallel::maybe_par_map_range(cfg.sequences, |i| {
        generate_raw(cfg, &truth, i as u64)
    });
    let zs: Vec<Vec<f64>> = raws.iter().map(|r| label_functionals(cfg, &truth, r)).collect();

    let mut binned_all = Vec::with_capacity(cfg.sequences);
    let mut ordered_all = Vec::with_capacity(cfg.sequences);
    for (i, raw) in raws.iter().enumerate() {
        let (b, o) = build_twins(cfg, raw, i);
        binned_all.push(b);
        ordered_all.push(o);
    }

    let mut binned = split_dataset(binned_all, cfg.split, cfg.split_seed)?;
    let mut ordered = split_dataset(ordered_all, cfg.split, cfg.split_seed)?;

    if let SyntheticTask::MultiLabel { classes } = cfg.task {
        // thresholds from the training split only, applied everywhere
        let z_of = |id: &str| -> &Vec<f64> {
            let idx: usize = id.trim_start_matches("syn-").parse().unwrap();
            &zs[idx]
        };
        let mut stats = Vec::with_capacity(classes);
        for c in 0..classes {
            let train_z: Vec<f64> = binned.train.iter().map(|s| z_of(&s.seq_id)[c]).collect();
            stats.push(LabelStats::fit(&train_z, SplitKind::Train)?);
        }
        let relabel = |seqs: &mut Vec<PartiallyOrderedSequence>| -> Result<()> {
            for s in seqs.iter_mut() {
                let z = z_of(&s.seq_id);
                let mut label = Vec::with_capacity(classes);
                for c in 0..classes {
                    label.push(threshold_labels(&z[c..=c], &stats[c])?[0]);
                }
                s.target = Target::MultiLabel(label);
            }
            Ok(())
        };
        relabel(&mut binned.train)?;
        relabel(&mut binned.validation)?;
        relabel(&mut binned.test)?;
        relabel(&mut ordered.train)?;
        relabel(&mut ordered.validation)?;
        relabel(&mut ordered.test)?;
    }

    let vocab = TypeVocab::from_names((0..k).map(type_name).collect())?;
    let kk = vocab.total_types();
    let mut probs = vec![0.0; kk * kk];
    for i in 0..k {
        for j in 0..k {
            probs[i * kk + j] = truth.chain[i * k + j];
        }
    }
    for j in 0..kk {
        probs[(kk - 1) * kk + j] = 1.0 / kk as f64;
    }
    let true_matrix = TransitionMatrix::from_probs(probs, vocab.clone())?;

    let schema = match cfg.task {
        SyntheticTask::MultiLabel { classes } => DatasetSchema::multilabel(cfg.feature_dim, classes),
        SyntheticTask::NextToken => DatasetSchema::next_token(cfg.feature_dim, k),
    };
    Ok(SyntheticDataset {
        schema,
        binned,
        ordered,
        vocab,
        true_matrix,
    })
}
