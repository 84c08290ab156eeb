//! Dense batch of partially ordered sequences with explicit masks.

use crate::autodiff::TensorValue;
use crate::error::{Error, Result};

/// Events `[B, T, N, M]` with event/step masks and event-type ids.
///
/// Invariants (checked at construction):
/// - a live event implies a live step, and every live step has at least
///   one live event;
/// - `type_ids` is -1 exactly where `event_mask` is false.
#[derive(Debug, Clone)]
pub struct EqualTimeBatch {
    events: TensorValue,
    event_mask: Vec<bool>,
    step_mask: Vec<bool>,
    type_ids: Vec<i64>,
    b: usize,
    t: usize,
    n: usize,
    m: usize,
}

impl EqualTimeBatch {
    pub fn new(
        events: TensorValue,
        event_mask: Vec<bool>,
        step_mask: Vec<bool>,
        type_ids: Vec<i64>,
    ) -> Result<Self> {
        let shape = events.shape();
        if shape.len() != 4 {
            return Err(Error::Dimension(format!(
                "events must be [B,T,N,M], got {shape:?}"
            )));
        }
        let (b, t, n, m) = (shape[0], shape[1], shape[2], shape[3]);
        if event_mask.len() != b * t * n {
            return Err(Error::Dimension("event_mask length mismatch".into()));
        }
        if step_mask.len() != b * t {
            return Err(Error::Dimension("step_mask length mismatch".into()));
        }
        if type_ids.len() != b * t * n {
            return Err(Error::Dimension("type_ids length mismatch".into()));
        }
        for bi in 0..b {
            for ti in 0..t {
                let step = step_mask[bi * t + ti];
                let mut live = 0;
                for j in 0..n {
                    let idx = (bi * t + ti) * n + j;
                    if event_mask[idx] {
                        live += 1;
                        if !step {
                            return Err(Error::Contract(format!(
                                "live event at padded step (b={bi}, t={ti}, j={j})"
                            )));
                        }
                        if type_ids[idx] < 0 {
                            return Err(Error::Contract(format!(
                                "live event without type id (b={bi}, t={ti}, j={j})"
                            )));
                        }
                    } else if type_ids[idx] != -1 {
                        return Err(Error::Contract(format!(
                            "padded event with type id (b={bi}, t={ti}, j={j})"
                        )));
                    }
                }
                if step && live == 0 {
                    return Err(Error::Contract(format!(
                        "live step without events (b={bi}, t={ti})"
                    )));
                }
            }
        }
        Ok(EqualTimeBatch {
            events,
            event_mask,
            step_mask,
            type_ids,
            b,
            t,
            n,
            m,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.b, self.t, self.n, self.m)
    }

    pub fn events(&self) -> &TensorValue {
        &self.events
    }

    pub fn step_mask(&self) -> &[bool] {
        &self.step_mask
    }

    pub fn event_mask(&self) -> &[bool] {
        &self.event_mask
    }

    pub fn type_ids(&self) -> &[i64] {
        &self.type_ids
    }

    pub fn step_live(&self, b: usize, t: usize) -> bool {
        self.step_mask[b * self.t + t]
    }

    /// Indices of live events within step (b, t), in stored order.
    pub fn live_events(&self, b: usize, t: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&j| self.event_mask[(b * self.t + t) * self.n + j])
            .collect()
    }

    pub fn live_count(&self, b: usize, t: usize) -> usize {
        (0..self.n)
            .filter(|&j| self.event_mask[(b * self.t + t) * self.n + j])
            .count()
    }

    pub fn event_features(&self, b: usize, t: usize, j: usize) -> &[f64] {
        let base = ((b * self.t + t) * self.n + j) * self.m;
        &self.events.data()[base..base + self.m]
    }

    pub fn event_type(&self, b: usize, t: usize, j: usize) -> i64 {
        self.type_ids[(b * self.t + t) * self.n + j]
    }

    /// Histogram of live-event counts per live step (index n-1 holds the
    /// number of steps with n events).
    pub fn cooccurrence_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.n];
        for b in 0..self.b {
            for t in 0..self.t {
                if self.step_live(b, t) {
                    hist[self.live_count(b, t) - 1] += 1;
                }
            }
        }
        hist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> (TensorValue, Vec<bool>, Vec<bool>, Vec<i64>) {
        (
            TensorValue::zeros(vec![1, 2, 2, 3]),
            vec![true, false, true, true],
            vec![true, true],
            vec![0, -1, 1, 0],
        )
    }

    #[test]
    fn valid_batch_accepted() {
        let (e, em, sm, ty) = base();
        let b = EqualTimeBatch::new(e, em, sm, ty).unwrap();
        assert_eq!(b.dims(), (1, 2, 2, 3));
        assert_eq!(b.live_events(0, 0), vec![0]);
        assert_eq!(b.live_events(0, 1), vec![0, 1]);
        assert_eq!(b.cooccurrence_histogram(), vec![1, 1]);
    }

    #[test]
    fn live_event_on_padded_step_rejected() {
        let (e, em, _, ty) = base();
        assert!(EqualTimeBatch::new(e, em, vec![true, false], ty).is_err());
    }

    #[test]
    fn live_step_without_events_rejected() {
        let (e, _, sm, _) = base();
        let em = vec![false, false, true, true];
        let ty = vec![-1, -1, 0, 0];
        assert!(EqualTimeBatch::new(e, em, sm, ty).is_err());
    }

    #[test]
    fn type_ids_must_match_mask() {
        let (e, em, sm, _) = base();
        // padded slot carrying a type id
        assert!(EqualTimeBatch::new(e.clone(), em.clone(), sm.clone(), vec![0, 5, 1, 0]).is_err());
        // live slot with sentinel
        assert!(EqualTimeBatch::new(e, em, sm, vec![-1, -1, 1, 0]).is_err());
    }
}
