//! Co-occurrence graphs and LSI term features from term-annotated documents.

mod lsi;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::graph::{Category, GraphError, Snapshot, TemporalGraph};
use crate::seed;

pub use lsi::{compute_lsi_features, tf_idf, LsiDiagnostic, LsiFeatures, EXACT_SVD_LIMIT, OVERSAMPLE, POWER_ITERATIONS};

const LSI_CONTEXT: u64 = 1;
const LSI_DESCRIPTION: u64 = 2;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("invalid window spec: {0}")]
    Windows(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no document falls inside the configured windows")]
    NoDocuments,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn id_string<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Text(String),
        Number(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::Text(s) => s,
        Id::Number(n) => n.to_string(),
    })
}

/// One annotated document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    #[serde(deserialize_with = "id_string")]
    pub id: String,
    pub year: i32,
    #[serde(default)]
    pub title_terms: Vec<String>,
    #[serde(default)]
    pub abstract_terms: Vec<String>,
    #[serde(default)]
    pub paragraph_terms: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstract_text: Option<String>,
}

impl DocumentRecord {
    /// Title, abstract, then each paragraph.
    pub fn fields(&self) -> impl Iterator<Item = &[String]> {
        [self.title_terms.as_slice(), self.abstract_terms.as_slice()]
            .into_iter()
            .chain(self.paragraph_terms.iter().map(Vec::as_slice))
    }
}

/// Reads one JSON document per line; blank lines are ignored.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<DocumentRecord>, IngestError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str(&line).map_err(|e| IngestError::Corpus {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub id: String,
    pub surface: String,
    pub category: Category,
    pub description: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TermLexicon {
    terms: Vec<Term>,
    index: HashMap<String, usize>,
}

impl TermLexicon {
    pub fn new(terms: Vec<Term>) -> Result<Self, IngestError> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.id.clone(), i).is_some() {
                return Err(IngestError::Lexicon {
                    line: i + 1,
                    message: format!("duplicate term id `{}`", t.id),
                });
            }
        }
        Ok(Self { terms, index })
    }

    /// Reads `term_id<TAB>surface<TAB>category[<TAB>description]`. A first row
    /// starting with `term_id` is a header; `#` lines are comments.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, IngestError> {
        let mut terms = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if terms.is_empty() && seen.is_empty() && cols[0].trim() == "term_id" {
                continue;
            }
            if cols.len() < 3 || cols.len() > 4 {
                return Err(IngestError::Lexicon {
                    line: lineno,
                    message: format!("expected 3 or 4 tab-separated columns, found {}", cols.len()),
                });
            }
            let id = cols[0].trim();
            if id.is_empty() {
                return Err(IngestError::Lexicon {
                    line: lineno,
                    message: "empty term id".into(),
                });
            }
            if let Some(prev) = seen.insert(id.to_string(), lineno) {
                return Err(IngestError::Lexicon {
                    line: lineno,
                    message: format!("term id `{id}` already defined on line {prev}"),
                });
            }
            let category = cols[2].trim().parse().map_err(|e: GraphError| IngestError::Lexicon {
                line: lineno,
                message: e.to_string(),
            })?;
            let description = cols.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()).map(str::to_string);
            terms.push(Term {
                id: id.to_string(),
                surface: cols[1].trim().to_string(),
                category,
                description,
            });
        }
        Self::new(terms)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }
}

/// Consecutive windows of `interval` years. The first window also absorbs
/// every year before `start_year`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start_year: i32,
    pub interval: u32,
    pub windows: usize,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.interval == 0 {
            return Err(IngestError::Windows("interval must be at least one year".into()));
        }
        if self.windows == 0 {
            return Err(IngestError::Windows("need at least one window".into()));
        }
        Ok(())
    }

    /// Last year covered by window `t` (1-based).
    pub fn end_year(&self, t: usize) -> i32 {
        self.start_year + (t as i32) * self.interval as i32 - 1
    }

    /// 1-based window of `year`, or `None` past the last window.
    pub fn window_of(&self, year: i32) -> Option<usize> {
        if year < self.start_year {
            return Some(1);
        }
        let t = ((year - self.start_year) / self.interval as i32) as usize + 1;
        (t <= self.windows).then_some(t)
    }
}

/// A co-occurring term pair, `a < b`, dated by its document.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cooccurrence {
    pub a: String,
    pub b: String,
    pub year: i32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct DocTerms {
    /// Lexicon index to mention count.
    counts: BTreeMap<usize, usize>,
    pairs: BTreeSet<(usize, usize)>,
    unknown: Vec<String>,
}

fn doc_terms(doc: &DocumentRecord, lexicon: &TermLexicon) -> DocTerms {
    let mut out = DocTerms::default();
    for field in doc.fields() {
        let mut present = BTreeSet::new();
        for term in field {
            match lexicon.index(term) {
                Some(i) => {
                    *out.counts.entry(i).or_default() += 1;
                    present.insert(i);
                }
                None => out.unknown.push(term.clone()),
            }
        }
        let present: Vec<usize> = present.into_iter().collect();
        for (k, &a) in present.iter().enumerate() {
            for &b in &present[k + 1..] {
                out.pairs.insert((a, b));
            }
        }
    }
    out
}

/// Unordered pairs of distinct terms mentioned in the same field, once per
/// document, sorted. Unknown mentions are skipped and returned with counts.
pub fn extract_cooccurrence(docs: &[DocumentRecord], lexicon: &TermLexicon) -> (Vec<Cooccurrence>, BTreeMap<String, usize>) {
    let mut edges = Vec::new();
    let mut unknown = BTreeMap::new();
    for doc in docs {
        let terms = doc_terms(doc, lexicon);
        for u in terms.unknown {
            *unknown.entry(u).or_insert(0) += 1;
        }
        for (a, b) in terms.pairs {
            let (a, b) = (&lexicon.terms[a].id, &lexicon.terms[b].id);
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            edges.push(Cooccurrence {
                a: a.clone(),
                b: b.clone(),
                year: doc.year,
            });
        }
    }
    edges.sort();
    (edges, unknown)
}

/// Each pair dated by its earliest window. Pairs first seen after the last
/// window go to the held-out pool with their earliest year.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowedEdges {
    pub windows: Vec<Vec<(String, String)>>,
    pub held_out: Vec<Cooccurrence>,
}

pub fn split_by_windows(edges: &[Cooccurrence], spec: &WindowSpec) -> Result<WindowedEdges, IngestError> {
    spec.validate()?;
    let mut earliest: BTreeMap<(&str, &str), i32> = BTreeMap::new();
    for e in edges {
        let key = if e.a <= e.b { (e.a.as_str(), e.b.as_str()) } else { (e.b.as_str(), e.a.as_str()) };
        let y = earliest.entry(key).or_insert(e.year);
        *y = (*y).min(e.year);
    }
    let mut out = WindowedEdges {
        windows: vec![Vec::new(); spec.windows],
        held_out: Vec::new(),
    };
    for ((a, b), year) in earliest {
        match spec.window_of(year) {
            Some(t) => out.windows[t - 1].push((a.to_string(), b.to_string())),
            None => out.held_out.push(Cooccurrence {
                a: a.to_string(),
                b: b.to_string(),
                year,
            }),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub windows: WindowSpec,
    /// Width of the co-occurrence context block.
    pub context_dim: usize,
    /// Width of the lexicon description block.
    pub description_dim: usize,
    pub seed: u64,
}

impl IngestConfig {
    pub fn feature_dim(&self) -> usize {
        self.context_dim + self.description_dim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: usize,
    pub end_year: i32,
    pub documents: usize,
    pub nodes: usize,
    pub new_edges: usize,
    pub edges: usize,
    pub lsi: LsiDiagnostic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: usize,
    /// Documents dated after the last window.
    pub documents_after_last_window: usize,
    pub skipped_mentions: usize,
    pub unknown_terms: BTreeMap<String, usize>,
    pub held_out_edges: usize,
    pub windows: Vec<WindowReport>,
    pub description: Option<LsiDiagnostic>,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub graph: TemporalGraph,
    pub held_out: Vec<Cooccurrence>,
    pub report: IngestReport,
}

fn count_matrix(rows: &[&BTreeMap<usize, usize>], columns: &[usize]) -> DMatrix<f64> {
    let col_of: HashMap<usize, usize> = columns.iter().enumerate().map(|(j, &c)| (c, j)).collect();
    let mut m = DMatrix::zeros(rows.len(), columns.len());
    for (i, counts) in rows.iter().enumerate() {
        for (term, &c) in counts.iter() {
            if let Some(&j) = col_of.get(term) {
                m[(i, j)] = c as f64;
            }
        }
    }
    m
}

/// Context block over the documents visible by a window: tf-idf of term
/// mention counts, then LSI. One row per lexicon term; terms never
/// mentioned get zeros.
fn context_block(visible: &[&DocTerms], n_terms: usize, rank: usize, seed: u64) -> (DMatrix<f64>, LsiDiagnostic) {
    let used: Vec<&DocTerms> = visible.iter().copied().filter(|d| !d.counts.is_empty()).collect();
    let columns: Vec<usize> = used
        .iter()
        .flat_map(|d| d.counts.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let counts: Vec<&BTreeMap<usize, usize>> = used.iter().map(|d| &d.counts).collect();
    let lsi = compute_lsi_features(&tf_idf(&count_matrix(&counts, &columns)), rank, seed);
    let mut out = DMatrix::zeros(n_terms, rank);
    for (j, &term) in columns.iter().enumerate() {
        out.row_mut(term).copy_from(&lsi.features.row(j));
    }
    (out, lsi.diagnostic)
}

/// Lowercased alphanumeric tokens of at least two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

/// Description block: each description is a document over its words, and
/// a term's features are its description's LSI coordinates.
fn description_block(lexicon: &TermLexicon, rank: usize, seed: u64) -> (DMatrix<f64>, LsiDiagnostic) {
    let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
    let mut docs: Vec<(usize, BTreeMap<String, usize>)> = Vec::new();
    for (i, t) in lexicon.terms.iter().enumerate() {
        let Some(text) = &t.description else { continue };
        let mut counts = BTreeMap::new();
        for w in tokenize(text) {
            *counts.entry(w.clone()).or_insert(0) += 1;
            vocab.entry(w).or_insert(0);
        }
        if !counts.is_empty() {
            docs.push((i, counts));
        }
    }
    for (j, v) in vocab.values_mut().enumerate() {
        *v = j;
    }
    // Words are rows and descriptions columns, so columns get features.
    let mut m = DMatrix::zeros(docs.len(), vocab.len());
    for (i, (_, counts)) in docs.iter().enumerate() {
        for (w, &c) in counts {
            m[(i, vocab[w])] = c as f64;
        }
    }
    let lsi = compute_lsi_features(&tf_idf(&m).transpose(), rank, seed);
    let mut out = DMatrix::zeros(lexicon.len(), rank);
    for (j, (term, _)) in docs.iter().enumerate() {
        out.row_mut(*term).copy_from(&lsi.features.row(j));
    }
    (out, lsi.diagnostic)
}

/// Builds the windowed co-occurrence graph with per-window node features:
/// the context block is refit on the documents visible by each window and
/// concatenated with the fixed description block. A term becomes a node in
/// the window of its first mention.
pub fn build_graph(docs: &[DocumentRecord], lexicon: &TermLexicon, config: &IngestConfig) -> Result<Ingested, IngestError> {
    let spec = &config.windows;
    spec.validate()?;
    if config.feature_dim() == 0 {
        return Err(IngestError::Config("feature dimension must be positive".into()));
    }
    let parsed: Vec<DocTerms> = docs.iter().map(|d| doc_terms(d, lexicon)).collect();
    let windows: Vec<Option<usize>> = docs.iter().map(|d| spec.window_of(d.year)).collect();
    if windows.iter().all(Option::is_none) {
        return Err(IngestError::NoDocuments);
    }

    let mut unknown_terms = BTreeMap::new();
    for d in &parsed {
        for u in &d.unknown {
            *unknown_terms.entry(u.clone()).or_insert(0) += 1;
        }
    }
    let (edges, _) = extract_cooccurrence(docs, lexicon);
    let windowed = split_by_windows(&edges, spec)?;

    let mut first_mention: Vec<Option<usize>> = vec![None; lexicon.len()];
    for (d, w) in parsed.iter().zip(&windows) {
        let Some(w) = *w else { continue };
        for &term in d.counts.keys() {
            let e = &mut first_mention[term];
            *e = Some(e.map_or(w, |x| x.min(w)));
        }
    }

    let (description, description_diag) = if config.description_dim > 0 {
        let (m, d) = description_block(lexicon, config.description_dim, seed::derive(config.seed, &[LSI_DESCRIPTION]));
        (m, Some(d))
    } else {
        (DMatrix::zeros(lexicon.len(), 0), None)
    };

    let mut graph = TemporalGraph::new(config.feature_dim());
    let mut order: Vec<usize> = Vec::new();
    let mut reports = Vec::with_capacity(spec.windows);
    let mut total_edges = 0;
    for t in 1..=spec.windows {
        let visible: Vec<&DocTerms> = parsed
            .iter()
            .zip(&windows)
            .filter(|(_, w)| w.is_some_and(|w| w <= t))
            .map(|(d, _)| d)
            .collect();
        let (context, diag) = context_block(&visible, lexicon.len(), config.context_dim, seed::derive(config.seed, &[LSI_CONTEXT]));

        let new_nodes: Vec<usize> = (0..lexicon.len()).filter(|&i| first_mention[i] == Some(t)).collect();
        order.extend(&new_nodes);
        let mut features = Vec::with_capacity(order.len() * config.feature_dim());
        for &term in &order {
            features.extend(context.row(term).iter());
            features.extend(description.row(term).iter());
        }
        let new_edges = windowed.windows[t - 1].clone();
        total_edges += new_edges.len();
        reports.push(WindowReport {
            window: t,
            end_year: spec.end_year(t),
            documents: visible.len(),
            nodes: order.len(),
            new_edges: new_edges.len(),
            edges: total_edges,
            lsi: diag,
        });
        graph.add_snapshot(Snapshot {
            new_nodes: new_nodes
                .iter()
                .map(|&i| (lexicon.terms[i].id.clone(), lexicon.terms[i].category))
                .collect(),
            new_edges,
            features,
        })?;
    }

    let report = IngestReport {
        documents: docs.len(),
        documents_after_last_window: windows.iter().filter(|w| w.is_none()).count(),
        skipped_mentions: unknown_terms.values().sum(),
        unknown_terms,
        held_out_edges: windowed.held_out.len(),
        windows: reports,
        description: description_diag,
    };
    Ok(Ingested {
        graph,
        held_out: windowed.held_out,
        report,
    })
}

/// Context features of every lexicon term using only documents visible by
/// window `t`, in lexicon order.
pub fn context_features(docs: &[DocumentRecord], lexicon: &TermLexicon, spec: &WindowSpec, t: usize, rank: usize, seed: u64) -> DMatrix<f64> {
    let parsed: Vec<DocTerms> = docs
        .iter()
        .filter(|d| spec.window_of(d.year).is_some_and(|w| w <= t))
        .map(|d| doc_terms(d, lexicon))
        .collect();
    let visible: Vec<&DocTerms> = parsed.iter().collect();
    context_block(&visible, lexicon.len(), rank, seed::derive(seed, &[LSI_CONTEXT])).0
}
