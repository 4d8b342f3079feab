use std::collections::BTreeSet;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trp_core::graph::{Category, Pair, TemporalGraph};
use trp_core::ingest::{
    build_graph, compute_lsi_features, context_features, extract_cooccurrence, split_by_windows, DocumentRecord, IngestConfig, Term,
    TermLexicon, tf_idf, WindowSpec,
};

fn lexicon(ids: &[&str]) -> TermLexicon {
    TermLexicon::new(
        ids.iter()
            .map(|id| Term {
                id: id.to_string(),
                surface: id.to_lowercase(),
                category: Category::Other,
                description: None,
            })
            .collect(),
    )
    .unwrap()
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn doc(id: &str, year: i32, title: &[&str], abs: &[&str]) -> DocumentRecord {
    DocumentRecord {
        id: id.into(),
        year,
        title_terms: strings(title),
        abstract_terms: strings(abs),
        ..Default::default()
    }
}

fn spec() -> WindowSpec {
    WindowSpec {
        start_year: 1940,
        interval: 10,
        windows: 3,
    }
}

fn pairs(edges: &[trp_core::ingest::Cooccurrence]) -> Vec<(String, String, i32)> {
    edges.iter().map(|e| (e.a.clone(), e.b.clone(), e.year)).collect()
}

fn edge_ids(g: &TemporalGraph, t: usize) -> BTreeSet<(String, String)> {
    g.window(t)
        .edges()
        .map(|p: Pair| {
            let (a, b) = (g.registry().id(p.lo()).to_string(), g.registry().id(p.hi()).to_string());
            if a < b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect()
}

#[test]
fn cooccurrence_examples() {
    let lex = lexicon(&["A", "B", "C", "D"]);
    let (e, _) = extract_cooccurrence(&[doc("1", 1947, &["A", "B"], &[])], &lex);
    assert_eq!(pairs(&e), vec![("A".into(), "B".into(), 1947)]);

    let (e, _) = extract_cooccurrence(&[doc("1", 1960, &[], &["C", "A", "B"])], &lex);
    assert_eq!(e.len(), 3);

    let (e, _) = extract_cooccurrence(&[doc("1", 1960, &["A", "B"], &["A", "A", "B"])], &lex);
    assert_eq!(pairs(&e), vec![("A".into(), "B".into(), 1960)]);

    // Paragraphs are separate fields: A and D never share one.
    let mut d = doc("1", 1960, &[], &[]);
    d.paragraph_terms = vec![strings(&["A", "B"]), strings(&["C", "D"])];
    let (e, unknown) = extract_cooccurrence(&[d], &lex);
    let got: Vec<(String, String)> = e.iter().map(|x| (x.a.clone(), x.b.clone())).collect();
    assert_eq!(got, vec![("A".into(), "B".into()), ("C".into(), "D".into())]);
    assert!(unknown.is_empty());
}

#[test]
fn window_examples() {
    let lex = lexicon(&["A", "B", "C", "D"]);
    let docs = [
        doc("1", 1947, &["A", "B"], &[]),
        doc("2", 1968, &["C", "D"], &[]),
        doc("3", 1955, &["A", "C"], &[]),
        doc("4", 1962, &["A", "C"], &[]),
        doc("5", 1975, &["B", "D"], &[]),
    ];
    let (edges, _) = extract_cooccurrence(&docs, &lex);
    let w = split_by_windows(&edges, &spec()).unwrap();
    let ab = ("A".to_string(), "B".to_string());
    let ac = ("A".to_string(), "C".to_string());
    let cd = ("C".to_string(), "D".to_string());
    assert_eq!(w.windows[0], vec![ab.clone()]);
    assert_eq!(w.windows[1], vec![ac.clone()]);
    assert_eq!(w.windows[2], vec![cd.clone()]);
    assert_eq!(pairs(&w.held_out), vec![("B".into(), "D".into(), 1975)]);

    let config = IngestConfig {
        windows: spec(),
        context_dim: 2,
        description_dim: 0,
        seed: 0,
    };
    let built = build_graph(&docs, &lex, &config).unwrap();
    let g = &built.graph;
    for t in 1..=3 {
        assert!(edge_ids(g, t).contains(&ab), "1947 edge missing at {t}");
    }
    assert!(!edge_ids(g, 1).contains(&ac));
    assert!(edge_ids(g, 2).contains(&ac));
    assert_eq!(edge_ids(g, 3).iter().filter(|e| **e == cd).count(), 1);
    assert!(!edge_ids(g, 2).contains(&cd));
    assert_eq!(built.report.held_out_edges, 1);
    assert_eq!(built.report.documents_after_last_window, 1);
}

#[test]
fn two_by_two_closed_form() {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
    let lsi = compute_lsi_features(&a, 1, 0);
    assert!((lsi.singular_values[0] - 2.0).abs() < 1e-12);
    // Column 0 is the first axis: coordinate 2 / sqrt(2 rows).
    assert!((lsi.features[(0, 0)] - 2.0 / 2f64.sqrt()).abs() < 1e-12);
    assert!(lsi.features[(1, 0)].abs() < 1e-12);
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| if rng.random_bool(0.6) { rng.random_range(0..5) as f64 } else { 0.0 })
}

#[test]
fn full_rank_reproduces_gram_matrix() {
    let a = random_matrix(9, 6, 1);
    let lsi = compute_lsi_features(&a, 6, 0);
    assert_eq!(lsi.diagnostic.effective_rank, 6);
    let gram = a.transpose() * &a / 9.0;
    let err = (&lsi.features * lsi.features.transpose() - gram).norm();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn excess_rank_is_zero_padded() {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    let lsi = compute_lsi_features(&a, 3, 0);
    assert_eq!(lsi.diagnostic.effective_rank, 1);
    assert_eq!(lsi.diagnostic.padded(), 2);
    assert!(lsi.features.columns(1, 2).iter().all(|&v| v == 0.0));
}

fn projector(f: &DMatrix<f64>) -> DMatrix<f64> {
    let q = f.clone().qr().q();
    &q * q.transpose()
}

#[test]
fn duplicated_documents_keep_features() {
    let a = random_matrix(7, 5, 2);
    let twice = DMatrix::from_fn(14, 5, |i, j| a[(i % 7, j)]);
    let f1 = compute_lsi_features(&a, 3, 0).features;
    let f2 = compute_lsi_features(&twice, 3, 0).features;
    assert!((&f1 - &f2).norm() < 1e-8);

    // One extra copy of a row changes the scale but not the span at full rank.
    let extra = DMatrix::from_fn(8, 5, |i, j| a[(i.min(6), j)]);
    let g1 = compute_lsi_features(&a, 5, 0).features;
    let g2 = compute_lsi_features(&extra, 5, 0).features;
    assert!((projector(&g1) - projector(&g2)).norm() < 1e-8);
}

#[test]
fn randomized_path_matches_dense_svd() {
    // Rank-4 matrix large enough for the randomized solver.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l = DMatrix::from_fn(600, 4, |_, _| rng.random_range(-1.0..1.0));
    let r = DMatrix::from_fn(4, 500, |_, _| rng.random_range(-1.0..1.0));
    let a = l * r;
    let lsi = compute_lsi_features(&a, 4, 11);
    assert!(lsi.diagnostic.randomized);

    let svd = a.clone().svd(false, true);
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let v_t: DMatrix<f64> = svd.v_t.unwrap();
    for (k, &c) in idx.iter().take(4).enumerate() {
        let s = svd.singular_values[c];
        assert!((lsi.singular_values[k] - s).abs() < 1e-8 * s);
        let row = v_t.row(c);
        let pivot = (0..500).max_by(|&x, &y| row[x].abs().total_cmp(&row[y].abs())).unwrap();
        let sign = row[pivot].signum();
        for j in 0..500 {
            let want = sign * row[j] * s / 600f64.sqrt();
            assert!((lsi.features[(j, k)] - want).abs() < 1e-8, "component {k}");
        }
    }
}

#[test]
fn tf_idf_weights() {
    let c = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 1.0, 0.0, 0.0]);
    let w = tf_idf(&c);
    assert_eq!(w[(0, 0)], 1.0);
    assert!((w[(0, 1)] - 2.0 * (2f64.ln() + 1.0)).abs() < 1e-15);
    assert_eq!(w[(0, 2)], 0.0);
}

#[test]
fn late_terms_have_zero_context_early() {
    let lex = lexicon(&["A", "B", "C", "LATE"]);
    let docs = [
        doc("1", 1945, &["A", "B"], &["C"]),
        doc("2", 1955, &["B", "C"], &[]),
        doc("3", 1965, &["LATE", "A"], &[]),
    ];
    for t in 1..=2 {
        let f = context_features(&docs, &lex, &spec(), t, 2, 0);
        assert!(f.row(3).iter().all(|&v| v == 0.0), "window {t}");
    }
    let f3 = context_features(&docs, &lex, &spec(), 3, 2, 0);
    assert!(f3.row(3).iter().any(|&v| v != 0.0));

    let config = IngestConfig {
        windows: spec(),
        context_dim: 2,
        description_dim: 0,
        seed: 0,
    };
    let g = build_graph(&docs, &lex, &config).unwrap().graph;
    let late = g.registry().get("LATE").unwrap();
    assert!(!g.window(2).contains(late));
    assert!(g.window(3).contains(late));
}

#[test]
fn quiet_window_keeps_features() {
    let lex = lexicon(&["A", "B", "C"]);
    let docs = [doc("1", 1945, &["A", "B"], &["C"]), doc("2", 1947, &["B", "C"], &[]), doc("3", 1961, &["A", "C"], &[])];
    let config = IngestConfig {
        windows: spec(),
        context_dim: 2,
        description_dim: 0,
        seed: 0,
    };
    let g = build_graph(&docs, &lex, &config).unwrap().graph;
    assert_eq!(g.window(1).feature_matrix(), g.window(2).feature_matrix());
    assert_ne!(g.window(2).feature_matrix(), g.window(3).feature_matrix());
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn shifting_context_moves_features() {
    // X appears with the "old" group in window 1, then only with the "new"
    // group. Its similarity to an old partner falls window after window.
    let lex = lexicon(&["X", "O1", "O2", "N1", "N2"]);
    let mut docs = Vec::new();
    for i in 0..6 {
        docs.push(doc(&format!("a{i}"), 1945, &["X", "O1"], &["O2"]));
        docs.push(doc(&format!("b{i}"), 1946, &["N1", "N2"], &[]));
    }
    for i in 0..6 {
        docs.push(doc(&format!("c{i}"), 1955, &["X", "N1"], &["N2"]));
        docs.push(doc(&format!("d{i}"), 1965, &["X", "N2"], &["N1"]));
        docs.push(doc(&format!("e{i}"), 1965, &["X", "N1"], &[]));
    }
    let sims: Vec<f64> = (1..=3)
        .map(|t| {
            let f = context_features(&docs, &lex, &spec(), t, 3, 0);
            cosine(f.row(0).transpose().as_slice(), f.row(1).transpose().as_slice())
        })
        .collect();
    assert!(sims[0] > sims[1] && sims[1] > sims[2], "{sims:?}");
}

fn random_docs(seed: u64, n: usize) -> Vec<DocumentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = ["A", "B", "C", "D", "E", "F", "Q"];
    (0..n)
        .map(|i| {
            let mut field = || -> Vec<String> { (0..rng.random_range(0..4)).map(|_| ids[rng.random_range(0..ids.len())].to_string()).collect() };
            let title = field();
            let abs = field();
            let para = vec![field(), field()];
            DocumentRecord {
                id: format!("d{i}"),
                year: rng.random_range(1930..1975),
                title_terms: title,
                abstract_terms: abs,
                paragraph_terms: para,
                ..Default::default()
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn document_order_is_irrelevant(seed in any::<u64>(), n in 1usize..25) {
        let lex = lexicon(&["A", "B", "C", "D", "E", "F"]);
        let docs = random_docs(seed, n);
        let mut shuffled = docs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let (a, ua) = extract_cooccurrence(&docs, &lex);
        let (b, ub) = extract_cooccurrence(&shuffled, &lex);
        prop_assert_eq!(a, b);
        prop_assert_eq!(ua, ub);
    }

    #[test]
    fn windows_accumulate(seed in any::<u64>(), n in 1usize..25) {
        let lex = lexicon(&["A", "B", "C", "D", "E", "F"]);
        let docs = random_docs(seed, n);
        let config = IngestConfig { windows: spec(), context_dim: 2, description_dim: 0, seed: 0 };
        let Ok(built) = build_graph(&docs, &lex, &config) else {
            // Every document fell after the last window.
            prop_assert!(docs.iter().all(|d| d.year >= 1970));
            return Ok(());
        };
        let (edges, _) = extract_cooccurrence(&docs, &lex);
        let mut prev: BTreeSet<(String, String)> = BTreeSet::new();
        for t in 1..=3 {
            let now = edge_ids(&built.graph, t);
            let fresh: BTreeSet<(String, String)> = edges
                .iter()
                .filter(|e| spec().window_of(e.year) == Some(t))
                .map(|e| (e.a.clone(), e.b.clone()))
                .collect();
            let want: BTreeSet<_> = prev.union(&fresh).cloned().collect();
            prop_assert_eq!(&now, &want);
            prev = now;
        }
    }

    #[test]
    fn lsi_ignores_row_order(seed in any::<u64>(), rows in 3usize..12, cols in 2usize..8) {
        let a = DMatrix::from_fn(rows, cols, {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            move |_, _| rng.random_range(0.0..3.0)
        });
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 7));
        let b = DMatrix::from_fn(rows, cols, |i, j| a[(order[i], j)]);
        let k = rows.min(cols);
        let fa = compute_lsi_features(&tf_idf(&a), k, 0).features;
        let fb = compute_lsi_features(&tf_idf(&b), k, 0).features;
        prop_assert!((fa - fb).norm() < 1e-8);
    }
}
