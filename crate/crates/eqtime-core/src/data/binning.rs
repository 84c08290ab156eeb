//! Greedy gap-threshold binning of timestamped event streams.

use crate::data::{EventRecord, TimeStep};
use crate::error::{Error, Result};

/// Bin a time-sorted record stream into equal-time sets.
///
/// A record joins the current bin while its gap to the previous record
/// in that bin is under `tau`; otherwise it starts a new bin. Bins that
/// grow past `n_max` are split in arrival order; if more than `t_max`
/// bins remain, the oldest are dropped.
pub fn bin_event_stream(
    records: &[EventRecord],
    tau: f64,
    t_max: usize,
    n_max: usize,
) -> Result<Vec<TimeStep>> {
    if records.is_empty() {
        return Err(Error::Ingestion {
            line: 0,
            message: "empty event stream".into(),
        });
    }
    if tau < 0.0 {
        return Err(Error::Config(format!("binning threshold {tau} < 0")));
    }
    if t_max == 0 || n_max == 0 {
        return Err(Error::Config("t_max and n_max must be positive".into()));
    }
    if records.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Ingestion {
            line: 0,
            message: "records not sorted by timestamp".into(),
        });
    }

    let mut bins: Vec<Vec<EventRecord>> = Vec::new();
    let mut current: Vec<EventRecord> = vec![records[0].clone()];
    for rec in &records[1..] {
        let prev_ts = current.last().unwrap().timestamp;
        if rec.timestamp - prev_ts < tau {
            current.push(rec.clone());
        } else {
            bins.push(std::mem::take(&mut current));
            current.push(rec.clone());
        }
    }
    bins.push(current);

    // split oversized bins in arrival order
    let mut steps: Vec<TimeStep> = Vec::new();
    for bin in bins {
        for chunk in bin.chunks(n_max) {
            steps.push(TimeStep {
                events: chunk.to_vec(),
            });
        }
    }

    // truncate from the front: oldest steps dropped
    if steps.len() > t_max {
        steps.drain(..steps.len() - t_max);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ts: f64) -> EventRecord {
        EventRecord {
            timestamp: ts,
            type_label: "A".into(),
            features: vec![ts],
        }
    }

    fn sizes(steps: &[TimeStep]) -> Vec<usize> {
        steps.iter().map(|s| s.events.len()).collect()
    }

    #[test]
    fn gap_rule_groups_close_readings() {
        let steps = bin_event_stream(&[rec(0.0), rec(1.0), rec(10.0)], 2.0, 100, 100).unwrap();
        assert_eq!(sizes(&steps), vec![2, 1]);
    }

    #[test]
    fn wide_gaps_stay_singletons() {
        let steps = bin_event_stream(&[rec(0.0), rec(5.0), rec(10.0)], 2.0, 100, 100).unwrap();
        assert_eq!(sizes(&steps), vec![1, 1, 1]);
    }

    // Hand-traced: chained gaps of 1 merge all four, then n_max=2 splits
    // in arrival order into {0,1},{2,3}.
    #[test]
    fn oversized_bins_split_in_arrival_order() {
        let steps =
            bin_event_stream(&[rec(0.0), rec(1.0), rec(2.0), rec(3.0)], 2.0, 100, 2).unwrap();
        assert_eq!(sizes(&steps), vec![2, 2]);
        assert_eq!(steps[0].events[0].timestamp, 0.0);
        assert_eq!(steps[0].events[1].timestamp, 1.0);
        assert_eq!(steps[1].events[0].timestamp, 2.0);
    }

    #[test]
    fn long_sequences_truncate_from_front() {
        let recs: Vec<_> = (0..5).map(|i| rec(i as f64 * 10.0)).collect();
        let steps = bin_event_stream(&recs, 2.0, 3, 10).unwrap();
        assert_eq!(steps.len(), 3);
        assert_eq!(steps[0].events[0].timestamp, 20.0);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(
            bin_event_stream(&[], 1.0, 10, 10),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn unsorted_stream_is_an_error() {
        assert!(bin_event_stream(&[rec(5.0), rec(1.0)], 1.0, 10, 10).is_err());
    }

    #[test]
    fn rebinning_singletons_is_idempotent() {
        // all gaps >= tau: output equals input, and binning again changes nothing
        let recs: Vec<_> = (0..6).map(|i| rec(i as f64 * 3.0)).collect();
        let once = bin_event_stream(&recs, 2.0, 100, 100).unwrap();
        let flat: Vec<_> = once.iter().flat_map(|s| s.events.clone()).collect();
        let twice = bin_event_stream(&flat, 2.0, 100, 100).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn every_event_lands_in_exactly_one_bin() {
        let recs: Vec<_> = [0.0, 0.5, 0.9, 4.0, 4.1, 9.0, 9.05, 9.1, 20.0]
            .iter()
            .map(|&t| rec(t))
            .collect();
        let steps = bin_event_stream(&recs, 1.0, 100, 2).unwrap();
        let flat: Vec<f64> = steps
            .iter()
            .flat_map(|s| s.events.iter().map(|e| e.timestamp))
            .collect();
        let orig: Vec<f64> = recs.iter().map(|e| e.timestamp).collect();
        assert_eq!(flat, orig);
    }
}
