//! Line-delimited dataset interchange format.
//!
//! First line: `{"schema": {"M": 8, "C": 3}}` (or `"vocab": 50` for
//! next-token data). Each following line is one sequence:
//! `{"seq_id": "...", "steps": [{"t": 0.0, "events": [{"type": "a",
//! "feat": [...]}]}], "label": [0,1,0]}` (or `"tokens": [...]`).

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::data::{DatasetSchema, EventRecord, PartiallyOrderedSequence, Target, TimeStep};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    schema: DatasetSchema,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventLine {
    #[serde(rename = "type")]
    type_label: String,
    feat: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepLine {
    t: f64,
    events: Vec<EventLine>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceLine {
    seq_id: String,
    steps: Vec<StepLine>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    label: Option<Vec<u8>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    tokens: Option<Vec<i64>>,
}

/// Load a schema-validated dataset; malformed lines are reported with
/// their line number.
pub fn load_jsonl_dataset(path: &Path) -> Result<(DatasetSchema, Vec<PartiallyOrderedSequence>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::Ingestion {
        line: 0,
        message: format!("cannot open {}: {e}", path.display()),
    })?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines.next().ok_or(Error::Ingestion {
        line: 0,
        message: "empty dataset file".into(),
    })?;
    let header = header?;
    let header: HeaderLine = serde_json::from_str(&header).map_err(|e| Error::Ingestion {
        line: 1,
        message: format!("bad schema header: {e}"),
    })?;
    let schema = header.schema;
    schema.validate().map_err(|e| Error::Ingestion {
        line: 1,
        message: e.to_string(),
    })?;

    let mut seqs = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SequenceLine = serde_json::from_str(&line).map_err(|e| Error::Ingestion {
            line: line_no,
            message: format!("bad record: {e}"),
        })?;
        seqs.push(validate_sequence(parsed, &schema, line_no)?);
    }
    if seqs.is_empty() {
        return Err(Error::Ingestion {
            line: 1,
            message: "dataset has a header but no sequences".into(),
        });
    }
    Ok((schema, seqs))
}

fn validate_sequence(
    parsed: SequenceLine,
    schema: &DatasetSchema,
    line: usize,
) -> Result<PartiallyOrderedSequence> {
    if parsed.steps.is_empty() {
        return Err(Error::Ingestion {
            line,
            message: format!("sequence {} has no steps", parsed.seq_id),
        });
    }
    let mut prev_t = f64::NEG_INFINITY;
    let mut steps = Vec::with_capacity(parsed.steps.len());
    for step in &parsed.steps {
        if step.t < prev_t {
            return Err(Error::Ingestion {
                line,
                message: format!(
                    "sequence {}: non-monotone timestamp {} after {prev_t}",
                    parsed.seq_id, step.t
                ),
            });
        }
        prev_t = step.t;
        if step.events.is_empty() {
            return Err(Error::Ingestion {
                line,
                message: format!("sequence {}: empty step", parsed.seq_id),
            });
        }
        let mut events = Vec::with_capacity(step.events.len());
        for ev in &step.events {
            if ev.feat.len() != schema.m {
                return Err(Error::Ingestion {
                    line,
                    message: format!(
                        "sequence {}: feature vector of length {} (schema M={})",
                        parsed.seq_id,
                        ev.feat.len(),
                        schema.m
                    ),
                });
            }
            if ev.feat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Ingestion {
                    line,
                    message: format!("sequence {}: non-finite feature", parsed.seq_id),
                });
            }
            events.push(EventRecord {
                timestamp: step.t,
                type_label: ev.type_label.clone(),
                features: ev.feat.clone(),
            });
        }
        steps.push(TimeStep { events });
    }

    let target = match (schema.classes, &parsed.label, &parsed.tokens) {
        (Some(c), Some(label), None) => {
            if label.len() != c {
                return Err(Error::Ingestion {
                    line,
                    message: format!(
                        "sequence {}: {} labels for C={c}",
                        parsed.seq_id,
                        label.len()
                    ),
                });
            }
            if label.iter().any(|&v| v > 1) {
                return Err(Error::Ingestion {
                    line,
                    message: format!("sequence {}: labels must be 0/1", parsed.seq_id),
                });
            }
            Target::MultiLabel(label.clone())
        }
        (None, None, Some(tokens)) => {
            if tokens.len() != steps.len() {
                return Err(Error::Ingestion {
                    line,
                    message: format!(
                        "sequence {}: {} tokens for {} steps",
                        parsed.seq_id,
                        tokens.len(),
                        steps.len()
                    ),
                });
            }
            Target::Tokens(tokens.clone())
        }
        _ => {
            return Err(Error::Ingestion {
                line,
                message: format!(
                    "sequence {}: target does not match the schema task",
                    parsed.seq_id
                ),
            });
        }
    };

    Ok(PartiallyOrderedSequence {
        seq_id: parsed.seq_id,
        steps,
        target,
    })
}

/// Write a dataset in the interchange format (deterministic bytes).
pub fn save_jsonl_dataset(
    path: &Path,
    schema: &DatasetSchema,
    seqs: &[PartiallyOrderedSequence],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = serde_json::to_string(&HeaderLine { schema: *schema })
        .map_err(|e| Error::Persistence(e.to_string()))?;
    writeln!(out, "{header}")?;
    for seq in seqs {
        let steps = seq
            .steps
            .iter()
            .map(|s| StepLine {
                t: s.events.first().map(|e| e.timestamp).unwrap_or(0.0),
                events: s
                    .events
                    .iter()
                    .map(|e| EventLine {
                        type_label: e.type_label.clone(),
                        feat: e.features.clone(),
                    })
                    .collect(),
            })
            .collect();
        let (label, tokens) = match &seq.target {
            Target::MultiLabel(l) => (Some(l.clone()), None),
            Target::Tokens(t) => (None, Some(t.clone())),
        };
        let line = serde_json::to_string(&SequenceLine {
            seq_id: seq.seq_id.clone(),
            steps,
            label,
            tokens,
        })
        .map_err(|e| Error::Persistence(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}
