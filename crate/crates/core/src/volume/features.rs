//! Three-month transactional features of a node, on the `ln(1 + x)` scale.

use ndarray::Array2;

use crate::error::{FlowError, Result};
use crate::graph::{NodeId, SnapshotSeries};

pub const WINDOW: usize = 3;
pub const N_FEATURES: usize = 13;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "sent_t-3",
    "sent_t-2",
    "sent_t-1",
    "recv_t-3",
    "recv_t-2",
    "recv_t-1",
    "diff_t-3",
    "diff_t-2",
    "diff_t-1",
    "dsent_t-2",
    "dsent_t-1",
    "drecv_t-2",
    "drecv_t-1",
];

/// Per-month sent and received totals of every node.
#[derive(Debug, Clone)]
pub struct FlowTotals {
    pub sent: Vec<Vec<f64>>,
    pub received: Vec<Vec<f64>>,
}

impl FlowTotals {
    pub fn new(series: &SnapshotSeries) -> Self {
        Self {
            sent: series.snapshots().iter().map(|s| s.out_flows()).collect(),
            received: series.snapshots().iter().map(|s| s.in_flows()).collect(),
        }
    }

    pub fn n_months(&self) -> usize {
        self.sent.len()
    }

    pub fn features(&self, i: NodeId, t: usize) -> Result<[f64; N_FEATURES]> {
        if t < WINDOW {
            return Err(FlowError::InvalidArgument(format!(
                "volume features need {WINDOW} prior months; t = {t}"
            )));
        }
        if t > self.n_months() {
            return Err(FlowError::InvalidArgument(format!(
                "month {t} beyond the {} available snapshots",
                self.n_months()
            )));
        }
        let mut s = [0.0; WINDOW];
        let mut r = [0.0; WINDOW];
        for k in 0..WINDOW {
            let m = t - WINDOW + k;
            s[k] = self.sent[m][i].ln_1p();
            r[k] = self.received[m][i].ln_1p();
        }
        Ok([
            s[0],
            s[1],
            s[2],
            r[0],
            r[1],
            r[2],
            s[0] - r[0],
            s[1] - r[1],
            s[2] - r[2],
            s[1] - s[0],
            s[2] - s[1],
            r[1] - r[0],
            r[2] - r[1],
        ])
    }

    /// Any sending or receiving in months `t-3..=t` (month `t` only if it exists).
    pub fn is_active_around(&self, i: NodeId, t: usize) -> bool {
        let hi = t.min(self.n_months() - 1);
        (t - WINDOW..=hi).any(|m| self.sent[m][i] > 0.0 || self.received[m][i] > 0.0)
    }
}

pub fn build_volume_features(series: &SnapshotSeries, i: NodeId, t: usize) -> Result<[f64; N_FEATURES]> {
    FlowTotals::new(series).features(i, t)
}

/// Feature rows of every node at month `t`.
pub fn feature_matrix(totals: &FlowTotals, t: usize) -> Result<Array2<f64>> {
    let n = totals.sent.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((n, N_FEATURES));
    for i in 0..n {
        let f = totals.features(i, t)?;
        for (c, v) in f.iter().enumerate() {
            out[[i, c]] = *v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{series_from_monthly, NodeUniverse};

    fn series(months: &[Vec<(usize, usize, f64)>]) -> SnapshotSeries {
        let u = NodeUniverse::from_labels((0..3).map(|i| i.to_string()).collect()).unwrap();
        series_from_monthly(u, 2022 * 12, months).unwrap()
    }

    #[test]
    fn silent_node_is_zero() {
        let s = series(&[vec![(0, 1, 1.0)], vec![(0, 1, 1.0)], vec![(0, 1, 1.0)], vec![(0, 1, 1.0)]]);
        assert_eq!(build_volume_features(&s, 2, 3).unwrap(), [0.0; N_FEATURES]);
    }

    #[test]
    fn hand_arithmetic() {
        let s = series(&[vec![(0, 1, 10.0)], vec![(0, 1, 20.0)], vec![(0, 1, 40.0)], vec![]]);
        let f = build_volume_features(&s, 0, 3).unwrap();
        let l = |x: f64| (1.0 + x).ln();
        assert_eq!(&f[..3], &[l(10.0), l(20.0), l(40.0)]);
        assert_eq!(&f[3..6], &[0.0; 3]);
        assert_eq!(&f[6..9], &f[..3]);
        assert_eq!(f[9], l(20.0) - l(10.0));
        assert_eq!(f[10], l(40.0) - l(20.0));
        assert!((f[9] - (21f64.ln() - 11f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn constant_activity_has_no_change() {
        let m = vec![(0, 1, 7.0), (1, 0, 3.0)];
        let s = series(&[m.clone(), m.clone(), m.clone(), m]);
        let f = build_volume_features(&s, 0, 3).unwrap();
        assert_eq!(&f[9..], &[0.0; 4]);
    }

    #[test]
    fn early_month_rejected() {
        let s = series(&[vec![(0, 1, 1.0)], vec![], vec![], vec![]]);
        assert!(build_volume_features(&s, 0, 2).is_err());
        assert!(build_volume_features(&s, 0, 4).is_ok());
        assert!(build_volume_features(&s, 0, 5).is_err());
    }
}
