//! Temporal neighbor sampling.
//!
//! A node's candidate neighbors are its past transactions in either
//! direction. They are ranked by month (latest first), then amount (largest
//! first), then exact timestamp, and the first `K` are kept.

use std::cmp::Ordering;

use crate::graph::{EdgeFeatureContext, EdgeFeatureLayout, NodeId, SnapshotSeries, EDGE_FEATURES, SECONDS_PER_MONTH};

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEntry {
    pub neighbor: NodeId,
    pub month: usize,
    pub timestamp: i64,
    pub amount: f64,
    /// Features of the aggregated edge carrying this event, in its month.
    pub features: [f64; EDGE_FEATURES],
    /// Elapsed time from the event to the start of the prediction month, in months.
    pub delta_months: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSample {
    pub node: NodeId,
    pub t: usize,
    pub entries: Vec<NeighborEntry>,
}

impl NeighborSample {
    pub fn is_cold_start(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
struct IndexedEvent {
    counterparty: NodeId,
    outgoing: bool,
    month: usize,
    timestamp: i64,
    amount: f64,
}

fn rank(a: &IndexedEvent, b: &IndexedEvent) -> Ordering {
    b.month
        .cmp(&a.month)
        .then(b.amount.total_cmp(&a.amount))
        .then(b.timestamp.cmp(&a.timestamp))
        .then(a.counterparty.cmp(&b.counterparty))
        .then(b.outgoing.cmp(&a.outgoing))
}

/// Per-node transaction history in ranking order, plus per-month edge
/// feature tables.
#[derive(Debug, Clone)]
pub struct EventIndex {
    per_node: Vec<Vec<IndexedEvent>>,
    contexts: Vec<EdgeFeatureContext>,
    month_starts: Vec<i64>,
}

impl EventIndex {
    pub fn new(series: &SnapshotSeries, layout: EdgeFeatureLayout) -> Self {
        let mut per_node: Vec<Vec<IndexedEvent>> = vec![Vec::new(); series.n_nodes()];
        for (e, &month) in series.events().iter().zip(series.event_months()) {
            per_node[e.src].push(IndexedEvent {
                counterparty: e.dst,
                outgoing: true,
                month,
                timestamp: e.timestamp,
                amount: e.amount,
            });
            if e.dst != e.src {
                per_node[e.dst].push(IndexedEvent {
                    counterparty: e.src,
                    outgoing: false,
                    month,
                    timestamp: e.timestamp,
                    amount: e.amount,
                });
            }
        }
        for events in &mut per_node {
            events.sort_by(rank);
        }
        Self {
            per_node,
            contexts: series
                .snapshots()
                .iter()
                .map(|s| EdgeFeatureContext::new(s, layout))
                .collect(),
            month_starts: (0..=series.len()).map(|t| series.month_start(t)).collect(),
        }
    }

    pub fn context(&self, t: usize) -> &EdgeFeatureContext {
        &self.contexts[t]
    }

    pub fn n_months(&self) -> usize {
        self.contexts.len()
    }
}

/// The top `k` past transactions of `node` strictly before month `t`.
pub fn sample_neighbors(index: &EventIndex, node: NodeId, t: usize, k: usize) -> NeighborSample {
    let events = &index.per_node[node];
    // events are sorted by month descending, so skip those at or after t
    let first = events.partition_point(|e| e.month >= t);
    let start_t = index.month_starts[t.min(index.month_starts.len() - 1)];
    let entries = events[first..]
        .iter()
        .take(k)
        .map(|e| {
            let (src, dst) = if e.outgoing { (node, e.counterparty) } else { (e.counterparty, node) };
            let features = index.contexts[e.month]
                .features(src, dst)
                .expect("every event has a positive aggregated edge");
            NeighborEntry {
                neighbor: e.counterparty,
                month: e.month,
                timestamp: e.timestamp,
                amount: e.amount,
                features,
                delta_months: (start_t - e.timestamp) as f64 / SECONDS_PER_MONTH,
            }
        })
        .collect();
    NeighborSample { node, t, entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{series_from_monthly, NodeUniverse};

    fn universe(n: usize) -> NodeUniverse {
        NodeUniverse::from_labels((0..n).map(|i| i.to_string()).collect()).unwrap()
    }

    #[test]
    fn keeps_all_when_under_cap_in_recency_order() {
        let s = series_from_monthly(universe(4), 2020 * 12, &[vec![(0, 1, 1.0)], vec![(2, 0, 1.0)], vec![(0, 3, 1.0)], vec![]]).unwrap();
        let idx = EventIndex::new(&s, EdgeFeatureLayout::Standard);
        let sample = sample_neighbors(&idx, 0, 3, 100);
        let got: Vec<_> = sample.entries.iter().map(|e| (e.neighbor, e.month)).collect();
        assert_eq!(got, vec![(3, 2), (2, 1), (1, 0)]);
        assert!(sample.entries.iter().all(|e| e.delta_months > 0.0));
    }

    #[test]
    fn same_month_ties_broken_by_amount() {
        let s = series_from_monthly(universe(3), 2020 * 12, &[vec![(0, 1, 9.0), (0, 2, 5.0)], vec![]]).unwrap();
        let idx = EventIndex::new(&s, EdgeFeatureLayout::Standard);
        let sample = sample_neighbors(&idx, 0, 1, 1);
        assert_eq!(sample.entries.len(), 1);
        assert_eq!(sample.entries[0].amount, 9.0);
    }

    #[test]
    fn cap_keeps_most_recent() {
        // 150 events of node 0 spread over 10 months, amounts distinct per month
        let mut months = vec![Vec::new(); 11];
        for k in 0..150usize {
            months[k % 10].push((0, 1 + k % 5, 1.0 + k as f64));
        }
        let s = series_from_monthly(universe(6), 2020 * 12, &months).unwrap();
        let idx = EventIndex::new(&s, EdgeFeatureLayout::Standard);
        let sample = sample_neighbors(&idx, 0, 10, 100);
        assert_eq!(sample.entries.len(), 100);
        // 15 events per month: the 100 kept are months 9..4 fully (90) plus the
        // 10 largest amounts of month 3
        let month3: Vec<f64> = sample.entries.iter().filter(|e| e.month == 3).map(|e| e.amount).collect();
        assert_eq!(month3.len(), 10);
        let mut all3: Vec<f64> = (0..150usize).filter(|k| k % 10 == 3).map(|k| 1.0 + k as f64).collect();
        all3.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(month3, all3[..10].to_vec());
        assert!(sample.entries.iter().all(|e| e.month >= 3));
        assert!(sample.entries.windows(2).all(|w| w[0].month >= w[1].month));
    }

    #[test]
    fn no_history_is_cold_start() {
        let s = series_from_monthly(universe(3), 2020 * 12, &[vec![(0, 1, 1.0)], vec![(2, 1, 1.0)]]).unwrap();
        let idx = EventIndex::new(&s, EdgeFeatureLayout::Standard);
        assert!(sample_neighbors(&idx, 2, 1, 10).is_cold_start());
        assert!(sample_neighbors(&idx, 0, 0, 10).is_cold_start());
    }
}
