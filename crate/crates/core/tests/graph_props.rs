mod common;

use flowcast_core::baselines::edgebank_ratio;
use flowcast_core::embeddings::{structural_embed, warmup_graph, EmbeddingConfig};
use flowcast_core::graph::{ingest_edges, IngestConfig};
use flowcast_core::netstats::summarize;
use flowcast_core::{build_snapshots, recompose, TemporalEdge};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_monthly, series, Monthly};

fn monthly_strategy() -> impl Strategy<Value = (usize, Monthly)> {
    (3usize..9, 1usize..5, any::<u64>(), 0.15f64..0.7).prop_map(|(n, months, seed, density)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (n, random_monthly(&mut rng, n, months, density))
    })
}

fn csv_of(rows: &[(String, String, i64, f64)]) -> String {
    let mut s = String::from("src,dst,timestamp,amount\n");
    for (a, b, ts, amt) in rows {
        s.push_str(&format!("{a},{b},{ts},{amt}\n"));
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ratio_rows_are_stochastic((n, months) in monthly_strategy()) {
        let s = series(n, &months);
        for t in 0..s.len() {
            let dec = s.decomposition(t);
            for i in 0..n {
                if dec.w[i] > 0.0 {
                    prop_assert!((dec.ratios.row_sum(i) - 1.0).abs() < 1e-12);
                    prop_assert!(dec.ratios.row(i).iter().all(|&(_, p)| p > 0.0 && p <= 1.0));
                } else {
                    prop_assert!(dec.ratios.is_row_empty(i));
                }
            }
        }
    }

    #[test]
    fn decompose_then_recompose_round_trips((n, months) in monthly_strategy()) {
        let s = series(n, &months);
        for t in 0..s.len() {
            let dec = s.decomposition(t);
            let back = recompose(&dec.w, &dec.ratios, t).unwrap();
            let snap = s.snapshot(t);
            prop_assert_eq!(back.n_edges(), snap.n_edges());
            for (i, j, a) in snap.edges() {
                prop_assert!((back.get(i, j) - a).abs() <= 1e-12 * a.max(1.0));
            }
        }
    }

    /// Splitting transfers into several parts inside the same month leaves
    /// every snapshot unchanged.
    #[test]
    fn monthly_aggregation_ignores_splits((n, months) in monthly_strategy(), parts in 1usize..4) {
        let whole = series(n, &months);
        let mut edges = Vec::new();
        for e in whole.events() {
            for p in 0..parts {
                edges.push(TemporalEdge {
                    timestamp: e.timestamp + p as i64 * 3600,
                    amount: e.amount / parts as f64,
                    ..*e
                });
            }
        }
        edges.sort_by_key(|e| e.timestamp);
        let split = build_snapshots(&edges, whole.universe().clone()).unwrap();
        prop_assert_eq!(split.len(), whole.len());
        for t in 0..whole.len() {
            for (i, j, a) in whole.snapshot(t).edges() {
                prop_assert!((split.snapshot(t).get(i, j) - a).abs() <= 1e-9 * a);
            }
            prop_assert_eq!(split.snapshot(t).n_edges(), whole.snapshot(t).n_edges());
        }
    }

    /// Raising the activity floor never adds nodes or edges.
    #[test]
    fn ingestion_is_monotone_in_min_activity(seed in any::<u64>(), lo in 0usize..4, step in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let months = random_monthly(&mut rng, 8, 3, 0.25);
        let base = series(8, &months);
        let rows: Vec<(String, String, i64, f64)> = base
            .events()
            .iter()
            .map(|e| (format!("v{}", e.src), format!("v{}", e.dst), e.timestamp, e.amount))
            .collect();
        let text = csv_of(&rows);
        let run = |min_activity| {
            ingest_edges(text.as_bytes(), &IngestConfig { min_activity, ..IngestConfig::default() }).unwrap()
        };
        let a = run(lo);
        let b = run(lo + step);
        prop_assert!(b.universe.len() <= a.universe.len());
        prop_assert!(b.edges.len() <= a.edges.len());
    }

    /// Relabeling nodes permutes embeddings and baseline rows and leaves
    /// the summary statistics unchanged.
    #[test]
    fn node_relabeling_is_equivariant(seed in any::<u64>()) {
        let n = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let months = random_monthly(&mut rng, n, 5, 0.3);
        let perm: Vec<usize> = {
            use rand::seq::SliceRandom;
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        };
        let moved: Monthly = months
            .iter()
            .map(|m| m.iter().map(|&(s, d, a)| (perm[s], perm[d], a)).collect())
            .collect();
        let a = series(n, &months);
        let b = series(n, &moved);

        let sa = summarize(&a).unwrap();
        let sb = summarize(&b).unwrap();
        prop_assert_eq!(sa.n_edges, sb.n_edges);
        prop_assert!((sa.avg_sparsity - sb.avg_sparsity).abs() < 1e-15);
        prop_assert!((sa.avg_edge_persistence - sb.avg_edge_persistence).abs() < 1e-12);

        let cfg = EmbeddingConfig::default();
        let ea = structural_embed(&warmup_graph(&a, 3).unwrap(), &cfg).unwrap();
        let eb = structural_embed(&warmup_graph(&b, 3).unwrap(), &cfg).unwrap();
        for i in 0..n {
            for k in 0..cfg.dim {
                let (x, y) = (ea.values[[i, k]], eb.values[[perm[i], k]]);
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()), "node {} dim {}: {} vs {}", i, k, x, y);
            }
        }

        let ra = edgebank_ratio(&a, 4).unwrap();
        let rb = edgebank_ratio(&b, 4).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((ra.matrix.get(i, j) - rb.matrix.get(perm[i], perm[j])).abs() < 1e-12);
            }
        }
    }
}
