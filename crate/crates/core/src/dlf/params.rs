use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hstree::HsTree;
use crate::embeddings::TimeEncoder;
use crate::graph::EDGE_FEATURES;

/// Layer widths of the attention model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Structural embedding width.
    pub d_x: usize,
    /// Hidden, key/query/value and output width.
    pub d: usize,
    /// Time encoding width.
    pub d_t: usize,
}

impl Dims {
    /// Width of one row of the attention input `[z; e; phi]`.
    pub fn row_width(&self) -> usize {
        self.d + EDGE_FEATURES + self.d_t
    }
}

/// Every learnable tensor of the ratio model. Also used, zero-initialized,
/// as the gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlfParams {
    pub dims: Dims,
    /// `d_x x d`, first layer `z = relu(x W_in + b_in)`.
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub time: TimeEncoder,
    /// `row_width x d` projections.
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    /// `(d + d_x) x d`
    pub w_0: Array2<f64>,
    pub b_0: Array1<f64>,
    /// `d x d`
    pub w_1: Array2<f64>,
    pub b_1: Array1<f64>,
    /// Per internal tree node (by slot): `children x d` scores and biases.
    pub tree_w: Vec<Array2<f64>>,
    pub tree_b: Vec<Array1<f64>>,
}

fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

impl DlfParams {
    pub fn init<R: Rng>(dims: Dims, tree: &HsTree, time_learnable: bool, rng: &mut R) -> Self {
        let m = dims.row_width();
        let d = dims.d;
        let widths = tree.slot_widths();
        Self {
            dims,
            w_in: xavier(dims.d_x, d, rng),
            b_in: Array1::zeros(d),
            time: TimeEncoder::new(dims.d_t, time_learnable),
            w_q: xavier(m, d, rng),
            w_k: xavier(m, d, rng),
            w_v: xavier(m, d, rng),
            w_0: xavier(d + dims.d_x, d, rng),
            b_0: Array1::zeros(d),
            w_1: xavier(d, d, rng),
            b_1: Array1::zeros(d),
            tree_w: widths.iter().map(|&c| xavier(c, d, rng)).collect(),
            tree_b: widths.iter().map(|&c| Array1::zeros(c)).collect(),
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, v| v.iter_mut().for_each(|x| *x = 0.0));
        z
    }

    /// Visits every tensor as a flat slice, in a fixed order.
    pub fn for_each(&self, mut f: impl FnMut(&str, &[f64])) {
        fn s(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        f("w_in", s(&self.w_in));
        f("b_in", self.b_in.as_slice().unwrap());
        f("time.freqs", &self.time.freqs);
        f("time.phases", &self.time.phases);
        f("w_q", s(&self.w_q));
        f("w_k", s(&self.w_k));
        f("w_v", s(&self.w_v));
        f("w_0", s(&self.w_0));
        f("b_0", self.b_0.as_slice().unwrap());
        f("w_1", s(&self.w_1));
        f("b_1", self.b_1.as_slice().unwrap());
        for (k, (w, b)) in self.tree_w.iter().zip(&self.tree_b).enumerate() {
            f(&format!("tree.{k}.w"), s(w));
            f(&format!("tree.{k}.b"), b.as_slice().unwrap());
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        f("w_in", self.w_in.as_slice_mut().expect("standard layout"));
        f("b_in", self.b_in.as_slice_mut().unwrap());
        f("time.freqs", &mut self.time.freqs);
        f("time.phases", &mut self.time.phases);
        f("w_q", self.w_q.as_slice_mut().unwrap());
        f("w_k", self.w_k.as_slice_mut().unwrap());
        f("w_v", self.w_v.as_slice_mut().unwrap());
        f("w_0", self.w_0.as_slice_mut().unwrap());
        f("b_0", self.b_0.as_slice_mut().unwrap());
        f("w_1", self.w_1.as_slice_mut().unwrap());
        f("b_1", self.b_1.as_slice_mut().unwrap());
        for (k, (w, b)) in self.tree_w.iter_mut().zip(&mut self.tree_b).enumerate() {
            f(&format!("tree.{k}.w"), w.as_slice_mut().unwrap());
            f(&format!("tree.{k}.b"), b.as_slice_mut().unwrap());
        }
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, v| n += v.len());
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.for_each(|_, v| out.extend_from_slice(v));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.for_each_mut(|_, v| {
            v.copy_from_slice(&flat[offset..offset + v.len()]);
            offset += v.len();
        });
    }

    /// `self += alpha * other`, element-wise over matching tensors.
    pub fn add_scaled(&mut self, alpha: f64, other: &DlfParams) {
        let flat = other.to_flat();
        let mut offset = 0;
        self.for_each_mut(|_, v| {
            for x in v.iter_mut() {
                *x += alpha * flat[offset];
                offset += 1;
            }
        });
    }

    pub fn scale(&mut self, alpha: f64) {
        self.for_each_mut(|_, v| v.iter_mut().for_each(|x| *x *= alpha));
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}
