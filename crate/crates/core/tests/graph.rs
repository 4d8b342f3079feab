use std::collections::BTreeSet;

use proptest::prelude::*;
use trp_core::graph::{
    build_training_pairs, read_edge_list, read_feature_matrix, sample_neighbors, write_feature_matrix, Category, GraphError,
    Label, Pair, Snapshot, TemporalGraph,
};

fn nodes(ids: &[&str]) -> Vec<(String, Category)> {
    ids.iter().map(|s| (s.to_string(), Category::Other)).collect()
}

fn edges(list: &[(&str, &str)]) -> Vec<(String, String)> {
    list.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

fn ones(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

/// Four windows over nodes a..e:
/// G1: a-b            G2: + c, a-c, b-c
/// G3: + d, c-d       G4: + e, a-d, d-e
fn toy() -> TemporalGraph {
    let mut g = TemporalGraph::new(1);
    let steps: [(&[&str], &[(&str, &str)]); 4] = [
        (&["a", "b"], &[("a", "b")]),
        (&["c"], &[("a", "c"), ("b", "c")]),
        (&["d"], &[("c", "d")]),
        (&["e"], &[("a", "d"), ("d", "e")]),
    ];
    let mut total = 0;
    for (n, e) in steps {
        total += n.len();
        g.add_snapshot(Snapshot {
            new_nodes: nodes(n),
            new_edges: edges(e),
            features: ones(total),
        })
        .unwrap();
    }
    g
}

/// Label matrix over all five nodes at step t: 1 iff linked in the label window.
fn label_matrix(g: &TemporalGraph, t: usize) -> [[u8; 5]; 5] {
    let mut m = [[0u8; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            if let Some(p) = Pair::new(i, j) {
                if g.pair_label(t, p).unwrap() == Label::Positive {
                    m[i][j] = 1;
                }
            }
        }
    }
    m
}

#[test]
fn toy_sequence_label_matrices() {
    let g = toy();
    assert_eq!(g.len(), 4);
    g.check_monotone().unwrap();
    // Step t is labeled by G^{t+1}; the last step repeats the one before.
    let a1 = [[0, 1, 1, 0, 0], [1, 0, 1, 0, 0], [1, 1, 0, 0, 0], [0, 0, 0, 0, 0], [0, 0, 0, 0, 0]];
    let a2 = [[0, 1, 1, 0, 0], [1, 0, 1, 0, 0], [1, 1, 0, 1, 0], [0, 0, 1, 0, 0], [0, 0, 0, 0, 0]];
    let a3 = [[0, 1, 1, 1, 0], [1, 0, 1, 0, 0], [1, 1, 0, 1, 0], [1, 0, 1, 0, 1], [0, 0, 0, 1, 0]];
    assert_eq!(label_matrix(&g, 1), a1);
    assert_eq!(label_matrix(&g, 2), a2);
    assert_eq!(label_matrix(&g, 3), a3);
    assert_eq!(label_matrix(&g, 4), a3);
}

#[test]
fn empty_graph_plus_one_edge() {
    let mut g = TemporalGraph::new(1);
    g.add_snapshot(Snapshot {
        new_nodes: nodes(&["A", "B"]),
        new_edges: edges(&[("A", "B")]),
        features: ones(2),
    })
    .unwrap();
    assert_eq!(g.len(), 1);
    assert_eq!(g.window(1).node_count(), 2);
    assert_eq!(g.window(1).edge_count(), 1);
}

#[test]
fn window_without_new_edges_is_valid() {
    let mut g = toy().truncated(2);
    g.add_snapshot(Snapshot {
        new_nodes: vec![],
        new_edges: vec![],
        features: ones(3),
    })
    .unwrap();
    assert_eq!(g.window(3).edge_count(), g.window(2).edge_count());
    assert!(g.new_edges(3).is_empty());
}

#[test]
fn insertion_only_contract() {
    let mut g = toy().truncated(1);
    let err = g
        .add_snapshot(Snapshot {
            new_nodes: vec![],
            new_edges: edges(&[("a", "zz")]),
            features: ones(2),
        })
        .unwrap_err();
    assert!(matches!(err, GraphError::UnknownNode(_)), "{err:?}");
    assert_eq!(g.len(), 1, "a rejected snapshot leaves the graph untouched");

    // A full window that drops a-b is a removal.
    let err = g.add_full_window(&nodes(&["a", "b"]), &edges(&[]), ones(2)).unwrap_err();
    assert!(matches!(err, GraphError::Removal { .. }), "{err:?}");
    let err = g.add_full_window(&nodes(&["a"]), &edges(&[]), ones(1)).unwrap_err();
    assert!(matches!(err, GraphError::NodeRemoval { .. }), "{err:?}");
    g.add_full_window(&nodes(&["b", "a", "c"]), &edges(&[("b", "a"), ("a", "c")]), ones(3))
        .unwrap();
    assert_eq!(g.len(), 2);
}

#[test]
fn pair_label_range_is_checked() {
    let g = toy();
    let p = Pair::new(0, 1).unwrap();
    assert!(g.pair_label(0, p).is_err());
    assert!(g.pair_label(5, p).is_err());
}

fn star(degree: usize) -> TemporalGraph {
    let mut g = TemporalGraph::new(1);
    let ids: Vec<String> = (0..=degree).map(|i| format!("n{i}")).collect();
    g.add_snapshot(Snapshot {
        new_nodes: ids.iter().map(|s| (s.clone(), Category::Other)).collect(),
        new_edges: (1..=degree).map(|i| (ids[0].clone(), ids[i].clone())).collect(),
        features: ones(degree + 1),
    })
    .unwrap();
    g
}

#[test]
fn sampling_small_cases() {
    let g = toy();
    // In G3, a is linked to b and c only.
    let w3 = g.window(3);
    let s = sample_neighbors(w3, 0, 5, 1).unwrap();
    assert_eq!(s.len(), 5);
    assert!(s.iter().all(|v| [1, 2].contains(v)));
    let mut iso = TemporalGraph::new(1);
    iso.add_snapshot(Snapshot {
        new_nodes: nodes(&["x", "y"]),
        new_edges: vec![],
        features: ones(2),
    })
    .unwrap();
    assert!(sample_neighbors(iso.window(1), 0, 3, 0).unwrap().is_empty());
    assert!(sample_neighbors(iso.window(1), 7, 3, 0).is_err());
    assert!(sample_neighbors(iso.window(1), 0, 0, 0).is_err());
}

#[test]
fn sampling_is_uniform_without_replacement() {
    let g = star(100);
    let w = g.window(1);
    let mut counts = vec![0usize; 101];
    let draws = 10_000;
    for seed in 0..draws {
        let s = sample_neighbors(w, 0, 20, seed).unwrap();
        assert_eq!(s.len(), 20);
        assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 20, "no repeats when degree >= size");
        for v in s {
            counts[v] += 1;
        }
    }
    for (v, &c) in counts.iter().enumerate().skip(1) {
        let freq = c as f64 / draws as f64;
        assert!((freq - 0.2).abs() <= 0.02, "neighbour {v} drawn with frequency {freq}");
    }
}

#[test]
fn sampling_is_seeded() {
    let g = star(30);
    let a = sample_neighbors(g.window(1), 0, 7, 42).unwrap();
    let b = sample_neighbors(g.window(1), 0, 7, 42).unwrap();
    assert_eq!(a, b);
}

#[test]
fn training_pairs_examples() {
    // Path a-b-c at t, the next window adds a-c.
    let mut g = TemporalGraph::new(1);
    g.add_snapshot(Snapshot {
        new_nodes: nodes(&["a", "b", "c"]),
        new_edges: edges(&[("a", "b"), ("b", "c")]),
        features: ones(3),
    })
    .unwrap();
    g.add_snapshot(Snapshot {
        new_nodes: vec![],
        new_edges: edges(&[("a", "c")]),
        features: ones(3),
    })
    .unwrap();
    let tp = build_training_pairs(&g, 1, 0, 0).unwrap();
    assert!(tp.positives.iter().any(|s| s.pair == Pair::new(0, 2).unwrap() && s.observed));
    assert_eq!(tp.positives.len(), 3);
    assert!(tp.unlabeled.is_empty());
    // G^2 is complete, so no unlabeled pair exists whatever is asked.
    let tp = build_training_pairs(&g, 1, 10, 0).unwrap();
    assert!(tp.unlabeled.is_empty());
    assert!(tp.shortfall);

    let g = toy();
    let tp = build_training_pairs(&g, 2, 3, 9).unwrap();
    let all: Vec<Pair> = tp.positives.iter().chain(&tp.unlabeled).map(|s| s.pair).collect();
    assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), all.len(), "no pair twice");
    for s in &tp.unlabeled {
        assert!(!g.window(3).has_edge(s.pair.lo(), s.pair.hi()));
        assert!(!s.observed);
    }
    assert_eq!(tp, build_training_pairs(&g, 2, 3, 9).unwrap());
}

#[test]
fn edge_list_and_feature_files() {
    let text = "term_a\tterm_b\twindow\n# comment\nA\tB\t1\nB\tC\t2\n\nA\tC\t3\n";
    let recs = read_edge_list(text.as_bytes()).unwrap();
    assert_eq!(recs.len(), 3);
    let g = TemporalGraph::from_edge_records(&recs, None).unwrap();
    assert_eq!(g.len(), 3);
    assert_eq!(g.window(3).edge_count(), 3);
    let err = read_edge_list("A\tB\t1\nA\tB\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");

    let mut buf = Vec::new();
    write_feature_matrix(&mut buf, 2, &[1.0, -2.5, 0.125, 3.0]).unwrap();
    let (rows, dim, data) = read_feature_matrix(buf.as_slice()).unwrap();
    assert_eq!((rows, dim), (2, 2));
    assert_eq!(data, vec![1.0, -2.5, 0.125, 3.0]);
}

#[test]
fn snapshot_directory_round_trip() {
    let g = toy();
    let dir = tempfile::tempdir().unwrap();
    g.save(dir.path()).unwrap();
    let back = TemporalGraph::load(dir.path()).unwrap();
    assert_eq!(back, g);
    let first = std::fs::read(dir.path().join("graph.json")).unwrap();
    g.save(dir.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join("graph.json")).unwrap(), first);
}

/// Random insertion-only sequences: per window a few new nodes and edges.
fn random_graph() -> impl Strategy<Value = TemporalGraph> {
    prop::collection::vec((0usize..4, prop::collection::vec((0usize..64, 0usize..64), 0..8)), 1..6).prop_map(|steps| {
        let mut g = TemporalGraph::new(2);
        let mut n = 0;
        for (i, (new, raw)) in steps.into_iter().enumerate() {
            let new = if i == 0 { new.max(2) } else { new };
            let ids: Vec<(String, Category)> = (n..n + new).map(|k| (format!("v{k}"), Category::Other)).collect();
            n += new;
            let e: Vec<(String, String)> = raw
                .into_iter()
                .map(|(a, b)| (a % n, b % n))
                .filter(|(a, b)| a != b)
                .map(|(a, b)| (format!("v{a}"), format!("v{b}")))
                .collect();
            g.add_snapshot(Snapshot {
                new_nodes: ids,
                new_edges: e,
                features: (0..2 * n).map(|k| k as f64).collect(),
            })
            .unwrap();
        }
        g
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn windows_are_monotone(g in random_graph()) {
        g.check_monotone().unwrap();
        for t in 1..g.len() {
            let (a, b) = (g.window(t), g.window(t + 1));
            prop_assert!(a.node_count() <= b.node_count());
            for e in a.edges() {
                prop_assert!(b.has_edge(e.lo(), e.hi()));
            }
            for v in 0..a.node_count() {
                prop_assert_eq!(a.features(v).unwrap().len(), 2);
            }
        }
    }

    #[test]
    fn positive_labels_persist(g in random_graph()) {
        let n = g.window(g.len()).node_count();
        for i in 0..n {
            for j in i + 1..n {
                let p = Pair::new(i, j).unwrap();
                let mut seen = false;
                for t in 1..=g.len() {
                    let positive = g.pair_label(t, p).unwrap() == Label::Positive;
                    prop_assert!(!seen || positive, "pair {:?} lost its label at {}", p, t);
                    seen |= positive;
                }
                if g.len() >= 2 {
                    prop_assert_eq!(g.pair_label(g.len(), p).unwrap(), g.pair_label(g.len() - 1, p).unwrap());
                }
            }
        }
    }
}
