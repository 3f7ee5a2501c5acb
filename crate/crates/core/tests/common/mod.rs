//! Independent reference implementations and fixtures shared by the
//! integration tests.
#![allow(dead_code)]

use flowcast_core::dlf::model::{grad, sample_loss};
use flowcast_core::dlf::{build_hs_tree, Dims, DlfParams, HsTree, NeighborEntry, NeighborSample};
use flowcast_core::embeddings::WarmupGraph;
use flowcast_core::graph::{month_key, series_from_monthly, NodeUniverse, SnapshotSeries, EDGE_FEATURES};
use flowcast_core::baselines::{edgebank_ratio, edgebank_tw_ratio, edgebank_tw_volume, edgebank_volume};
use flowcast_core::config::RunConfig;
use flowcast_core::dlf::{train, EventIndex};
use flowcast_core::pipeline::{embed, predict_month, variant_config, volume_first_month};
use flowcast_core::volume::{fit_volume_model, predict_volumes};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Monthly = Vec<Vec<(usize, usize, f64)>>;

pub fn first_month() -> i64 {
    month_key(1_577_836_800) // 2020-01
}

pub fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("v{i}")).collect()
}

pub fn series(n: usize, months: &Monthly) -> SnapshotSeries {
    let u = NodeUniverse::from_labels(labels(n)).unwrap();
    series_from_monthly(u, first_month(), months).unwrap()
}

/// Random monthly edges with at most one entry per ordered pair per month
/// and at least one edge in every month.
pub fn random_monthly<R: Rng>(rng: &mut R, n: usize, months: usize, density: f64) -> Monthly {
    (0..months)
        .map(|_| {
            let mut m = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random_bool(density) {
                        m.push((i, j, rng.random_range(0.5..100.0)));
                    }
                }
            }
            if m.is_empty() {
                m.push((0, 1, rng.random_range(0.5..100.0)));
            }
            m
        })
        .collect()
}

/// Dense `exp(-tau L)` column for `node` via scaling and squaring, with
/// `L = I - D^-1 A` built directly from the edge map.
pub fn dense_heat(graph: &WarmupGraph, reversed: bool, node: usize, tau: f64) -> Vec<f64> {
    let n = graph.n_nodes;
    let mut a = vec![vec![0.0; n]; n];
    for (&(s, d), &w) in &graph.edges {
        let (f, t) = if reversed { (d, s) } else { (s, d) };
        a[f][t] += w;
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        let deg: f64 = a[i].iter().sum();
        l[i][i] = 1.0;
        if deg > 0.0 {
            for j in 0..n {
                l[i][j] -= a[i][j] / deg;
            }
        }
    }
    let squarings = 10;
    let scale = -tau / f64::from(1u32 << squarings);
    let m: Vec<Vec<f64>> = l.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
    // exp(M) by a long Taylor series on the small matrix
    let mut e = identity(n);
    let mut term = identity(n);
    for k in 1..=30 {
        term = matmul(&term, &m);
        for r in term.iter_mut() {
            for v in r.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                e[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        e = matmul(&e, &e);
    }
    (0..n).map(|i| e[i][node]).collect()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for k in 0..b.len() {
            let aik = a[i][k];
            for j in 0..m {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Pairwise AUC: the share of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn brute_auc(labels: &[bool], scores: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, (&la, &sa)) in labels.iter().zip(scores).enumerate() {
        for (b, (&lb, &sb)) in labels.iter().zip(scores).enumerate() {
            if a == b || !la || lb {
                continue;
            }
            den += 1.0;
            if sa > sb {
                num += 1.0;
            } else if sa == sb {
                num += 0.5;
            }
        }
    }
    num / den
}

pub fn random_sample<R: Rng>(rng: &mut R, n: usize, k: usize) -> NeighborSample {
    NeighborSample {
        node: rng.random_range(0..n),
        t: 1,
        entries: (0..k)
            .map(|_| NeighborEntry {
                neighbor: rng.random_range(0..n),
                month: 0,
                timestamp: 0,
                amount: 1.0,
                features: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
                delta_months: rng.random_range(0.0..4.0),
            })
            .collect(),
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Dense loop-by-loop evaluation of the attention forward pass, reading the
/// parameter tensors by index.
pub fn dense_forward(p: &DlfParams, x: &Array2<f64>, s: &NeighborSample) -> Vec<f64> {
    let d = p.dims.d;
    let d_x = p.dims.d_x;
    let d_t = p.dims.d_t;
    let width = d + EDGE_FEATURES + d_t;
    let hidden = |node: usize| -> Vec<f64> {
        (0..d)
            .map(|c| relu(p.b_in[c] + (0..d_x).map(|r| x[[node, r]] * p.w_in[[r, c]]).sum::<f64>()))
            .collect()
    };
    let phi = |dt: f64| -> Vec<f64> { (0..d_t).map(|k| (dt * p.time.freqs[k] + p.time.phases[k]).cos()).collect() };
    let project = |h: &[f64], w: &Array2<f64>| -> Vec<f64> { (0..d).map(|c| (0..width).map(|r| h[r] * w[[r, c]]).sum()).collect() };

    let mut h0 = hidden(s.node);
    h0.extend(std::iter::repeat_n(0.0, EDGE_FEATURES));
    h0.extend(phi(0.0));
    let q = project(&h0, &p.w_q);

    let mut logits = Vec::new();
    let mut values = Vec::new();
    for e in &s.entries {
        let mut h = hidden(e.neighbor);
        h.extend(e.features);
        h.extend(phi(e.delta_months));
        let key = project(&h, &p.w_k);
        logits.push(q.iter().zip(&key).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt());
        values.push(project(&h, &p.w_v));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut zbar = vec![0.0; d];
    for (w, v) in exps.iter().zip(&values) {
        for c in 0..d {
            zbar[c] += w / z * v[c];
        }
    }
    let mut cat = zbar;
    cat.extend((0..d_x).map(|r| x[[s.node, r]]));
    let u: Vec<f64> = (0..d)
        .map(|c| relu(p.b_0[c] + (0..cat.len()).map(|r| cat[r] * p.w_0[[r, c]]).sum::<f64>()))
        .collect();
    (0..d).map(|c| p.b_1[c] + (0..d).map(|r| u[r] * p.w_1[[r, c]]).sum::<f64>()).collect()
}

/// Flat-softmax leaf probabilities of a depth-one tree, computed directly.
pub fn flat_softmax(w: &Array2<f64>, b: &[f64], z: &[f64]) -> Vec<f64> {
    let scores: Vec<f64> = (0..w.nrows())
        .map(|r| b[r] + (0..z.len()).map(|c| w[[r, c]] * z[c]).sum::<f64>())
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let t: f64 = e.iter().sum();
    e.iter().map(|v| v / t).collect()
}

/// Flat index view over every parameter coordinate.
pub fn n_coords(p: &DlfParams) -> usize {
    let mut n = 0;
    p.for_each(|_, v| n += v.len());
    n
}

pub fn coord(p: &DlfParams, k: usize) -> f64 {
    let mut seen = 0;
    let mut out = f64::NAN;
    p.for_each(|_, v| {
        if k >= seen && k < seen + v.len() {
            out = v[k - seen];
        }
        seen += v.len();
    });
    out
}

pub fn with_coord(p: &DlfParams, k: usize, value: f64) -> DlfParams {
    let mut q = p.clone();
    let mut seen = 0;
    q.for_each_mut(|_, v| {
        if k >= seen && k < seen + v.len() {
            v[k - seen] = value;
        }
        seen += v.len();
    });
    q
}

pub fn coord_name(p: &DlfParams, k: usize) -> String {
    let mut seen = 0;
    let mut out = String::new();
    p.for_each(|name, v| {
        if k >= seen && k < seen + v.len() {
            out = format!("{name}[{}]", k - seen);
        }
        seen += v.len();
    });
    out
}

/// Random problem for the model oracles: parameters over `tree`, node
/// embeddings, one neighbor sample and a soft target row.
pub struct ModelCase {
    pub params: DlfParams,
    pub tree: HsTree,
    pub x: Array2<f64>,
    pub sample: NeighborSample,
    pub target: Vec<(usize, f64)>,
}

pub fn model_case<R: Rng>(rng: &mut R, n: usize, dims: Dims, k: usize, depth: usize) -> ModelCase {
    let x = Array2::from_shape_fn((n, dims.d_x), |_| rng.random_range(-1.5..1.5));
    let tree = if depth == 1 {
        HsTree::flat(n)
    } else {
        build_hs_tree(&x, depth, 2.max((n as f64).sqrt().ceil() as usize), rng).unwrap()
    };
    let mut params = DlfParams::init(dims, &tree, true, rng);
    params.b_in.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    params.b_0.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    let sample = random_sample(rng, n, k);
    let mut weights: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { rng.random_range(0.1..1.0) } else { 0.0 }).collect();
    if weights.iter().all(|&w| w == 0.0) {
        weights[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = weights.iter().sum();
    let target = weights.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(j, &w)| (j, w / total)).collect();
    ModelCase { params, tree, x, sample, target }
}

/// Largest relative gap between the analytic gradient and central
/// differences with step `h`, with the name of the worst coordinate.
pub fn gradient_gap(case: &ModelCase, h: f64) -> (f64, String) {
    let ModelCase { params, tree, x, sample, target } = case;
    let batch = [(sample, target.as_slice())];
    let (_, analytic) = grad(params, tree, x, &batch).unwrap();
    let mut worst = (0.0, String::new());
    for k in 0..n_coords(params) {
        let v = coord(params, k);
        let up = sample_loss(&with_coord(params, k, v + h), tree, x, sample, target).unwrap();
        let down = sample_loss(&with_coord(params, k, v - h), tree, x, sample, target).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let a = coord(&analytic, k);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > worst.0 {
            worst = (rel, format!("{} analytic {a:e} numeric {numeric:e}", coord_name(params, k)));
        }
    }
    worst
}

/// Rebuilds the series with every month from `from` on replaced by fresh
/// random traffic and reports each month-`t` output that changed.
pub fn leakage_violations(seed: u64, n: usize, n_months: usize, t: usize, from: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let months = random_monthly(&mut rng, n, n_months, 0.3);
    let mut moved = months.clone();
    for m in &mut moved[from..] {
        *m = random_monthly(&mut rng, n, 1, 0.5).remove(0);
    }
    let a = series(n, &months);
    let b = series(n, &moved);

    let mut config = RunConfig::ci();
    config.seed = seed;
    config.dlf.epochs = 3;
    config.dlf.dim = 8;
    config.volume.n_estimators = 20;
    let config = config.finalize().unwrap();
    let mut bad = Vec::new();
    let mut same = |name: &str, eq: bool| {
        if !eq {
            bad.push(name.to_string());
        }
    };

    same("edgebank ratio", edgebank_ratio(&a, t).unwrap() == edgebank_ratio(&b, t).unwrap());
    same("edgebank_tw ratio", edgebank_tw_ratio(&a, t).unwrap() == edgebank_tw_ratio(&b, t).unwrap());
    same("edgebank volume", edgebank_volume(&a, t).unwrap() == edgebank_volume(&b, t).unwrap());
    same("edgebank_tw volume", edgebank_tw_volume(&a, t).unwrap() == edgebank_tw_volume(&b, t).unwrap());

    let ea = embed(&a, &config).unwrap();
    let eb = embed(&b, &config).unwrap();
    same("structural embedding", ea.values == eb.values);

    let tc = variant_config(&config, 2);
    let ma = train(&a, &ea, &tc, t).unwrap();
    let mb = train(&b, &eb, &tc, t).unwrap();
    same("trained ratio model", ma == mb);
    let ia = EventIndex::new(&a, tc.layout);
    let ib = EventIndex::new(&b, tc.layout);
    let pa = predict_month(&ma, &a, &ia, t, &config).unwrap();
    let pb = predict_month(&mb, &b, &ib, t, &config).unwrap();
    same("raw ratio prediction", pa.raw == pb.raw);
    same("mixed ratio prediction", pa.mixed.matrix == pb.mixed.matrix);

    let first = volume_first_month(&config);
    let va = fit_volume_model(&a, first, t, &config.volume).unwrap();
    let vb = fit_volume_model(&b, first, t, &config.volume).unwrap();
    same("volume model", va == vb);
    same("volume prediction", predict_volumes(&va, &a, t).unwrap() == predict_volumes(&vb, &b, t).unwrap());
    bad
}

/// Inverse-transform draws from a continuous Pareto law with density
/// proportional to `x^-alpha` on `[x_min, inf)`.
pub fn pareto<R: Rng>(rng: &mut R, n: usize, alpha: f64, x_min: f64) -> Vec<f64> {
    (0..n).map(|_| x_min * (1.0 - rng.random::<f64>()).powf(-1.0 / (alpha - 1.0))).collect()
}

/// Labels with at least one of each class and scores drawn from `levels`
/// distinct values, so ties are common.
pub fn auc_instance<R: Rng>(rng: &mut R, n: usize, levels: u32) -> (Vec<bool>, Vec<f64>) {
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    labels[0] = true;
    labels[n - 1] = false;
    let scores = (0..n).map(|_| f64::from(rng.random_range(0..levels)) / 7.0).collect();
    (labels, scores)
}

/// Regression problem with a smooth target plus noise.
pub fn regression_problem<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> (Array2<f64>, Vec<f64>) {
    let x: Array2<f64> = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0));
    let y = (0..rows)
        .map(|r| x[[r, 0]].sin() + 0.5 * x[[r, cols - 1]].powi(2) + rng.random_range(-0.1..0.1))
        .collect();
    (x, y)
}
