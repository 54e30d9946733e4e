//! Accuracy/latency Pareto fronts.
//!
//! Higher accuracy and lower latency are both better. A front is kept sorted
//! by latency, which makes accuracy strictly increasing along it.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub arch_id: String,
    pub accuracy: f64,
    pub latency_ms: f64,
    #[serde(default)]
    pub tokens: Vec<usize>,
}

impl ParetoPoint {
    pub fn new(arch_id: impl Into<String>, accuracy: f64, latency_ms: f64) -> Self {
        ParetoPoint {
            arch_id: arch_id.into(),
            accuracy,
            latency_ms,
            tokens: Vec::new(),
        }
    }

    fn same_coords(&self, other: &ParetoPoint) -> bool {
        self.accuracy == other.accuracy && self.latency_ms == other.latency_ms
    }
}

/// True iff `a` is at least as good as `b` on both axes and strictly better
/// on one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.accuracy >= b.accuracy
        && a.latency_ms <= b.latency_ms
        && (a.accuracy > b.accuracy || a.latency_ms < b.latency_ms)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    points: Vec<ParetoPoint>,
}

impl ParetoFront {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[ParetoPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<ParetoPoint> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Adds a point if nothing on the front dominates it, dropping members it
    /// dominates. Returns whether the front changed.
    pub fn insert(&mut self, point: ParetoPoint) -> bool {
        debug_assert!(point.accuracy.is_finite() && point.latency_ms.is_finite());
        // First member with latency >= the new point's.
        let pos = self
            .points
            .partition_point(|q| q.latency_ms < point.latency_ms);
        // A dominator has latency <= ours and accuracy >= ours. Along the
        // front accuracy grows with latency, so the only candidates are the
        // member just before `pos` and the member at `pos` with equal latency.
        if let Some(q) = self.points.get(pos) {
            if q.latency_ms == point.latency_ms {
                if q.same_coords(&point) {
                    if point.arch_id < q.arch_id {
                        self.points[pos] = point;
                        return true;
                    }
                    return false;
                }
                if q.accuracy > point.accuracy {
                    return false;
                }
            }
        }
        if pos > 0 && self.points[pos - 1].accuracy >= point.accuracy {
            return false;
        }
        // Members at or after `pos` with accuracy <= ours are now dominated;
        // they form a contiguous run because accuracy increases.
        let end = pos
            + self.points[pos..]
                .iter()
                .take_while(|q| q.accuracy <= point.accuracy)
                .count();
        self.points.splice(pos..end, std::iter::once(point));
        true
    }

    /// The non-dominated subset of `points`, independent of their order.
    pub fn extract<I: IntoIterator<Item = ParetoPoint>>(points: I) -> Self {
        let mut all: Vec<ParetoPoint> = points.into_iter().collect();
        all.sort_by(|a, b| {
            a.latency_ms
                .total_cmp(&b.latency_ms)
                .then(b.accuracy.total_cmp(&a.accuracy))
                .then_with(|| a.arch_id.cmp(&b.arch_id))
        });
        let mut front: Vec<ParetoPoint> = Vec::new();
        for p in all {
            match front.last() {
                Some(last) if p.accuracy <= last.accuracy => {}
                _ => front.push(p),
            }
        }
        ParetoFront { points: front }
    }
}

/// Shorthand for [`ParetoFront::extract`].
pub fn extract_front<I: IntoIterator<Item = ParetoPoint>>(points: I) -> ParetoFront {
    ParetoFront::extract(points)
}

/// O(n²) reference filter: keeps every point nothing dominates, one
/// representative (smallest arch id) per coordinate pair, sorted by latency.
pub fn brute_force_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut keep: Vec<ParetoPoint> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let dominated = points.iter().any(|q| dominates(q, p));
        let shadowed = points
            .iter()
            .enumerate()
            .any(|(j, q)| j != i && q.same_coords(p) && (q.arch_id < p.arch_id || (q.arch_id == p.arch_id && j < i)));
        if !dominated && !shadowed {
            keep.push(p.clone());
        }
    }
    keep.sort_by(|a, b| a.latency_ms.partial_cmp(&b.latency_ms).unwrap_or(Ordering::Equal));
    keep
}
