//! Edge lists, feature matrices and snapshot directories.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Category, GraphError, Snapshot, TemporalGraph};

/// One row of an edge-list file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeRecord {
    pub a: String,
    pub b: String,
    /// 1-based window index.
    pub window: usize,
}

/// Reads `term_a<TAB>term_b<TAB>window` rows. A header whose third column is
/// not an integer is skipped; blank lines and `#` comments are ignored.
pub fn read_edge_list<R: BufRead>(reader: R) -> Result<Vec<EdgeRecord>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(GraphError::Format(format!(
                "line {lineno}: expected 3 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let window = match cols[2].parse::<usize>() {
            Ok(w) => w,
            Err(_) if out.is_empty() && lineno == 1 => continue,
            Err(_) => {
                return Err(GraphError::Format(format!(
                    "line {lineno}: window index `{}` is not a positive integer",
                    cols[2]
                )))
            }
        };
        if window == 0 {
            return Err(GraphError::Format(format!("line {lineno}: window indices start at 1")));
        }
        if cols[0].is_empty() || cols[1].is_empty() {
            return Err(GraphError::Format(format!("line {lineno}: empty term id")));
        }
        if cols[0] == cols[1] {
            return Err(GraphError::Format(format!("line {lineno}: self-loop on `{}`", cols[0])));
        }
        out.push(EdgeRecord {
            a: cols[0].to_string(),
            b: cols[1].to_string(),
            window,
        });
    }
    Ok(out)
}

/// Node order implied by an edge list: by first window, then by first
/// appearance in the file.
pub fn node_order(records: &[EdgeRecord]) -> Vec<(String, usize)> {
    let mut first: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut seq = 0;
    for r in records {
        for id in [&r.a, &r.b] {
            let e = first.entry(id.as_str()).or_insert((r.window, seq));
            if r.window < e.0 {
                e.0 = r.window;
            }
            seq += 1;
        }
    }
    let mut nodes: Vec<(&str, (usize, usize))> = first.into_iter().collect();
    nodes.sort_by_key(|&(_, (w, s))| (w, s));
    nodes.into_iter().map(|(id, (w, _))| (id.to_string(), w)).collect()
}

impl TemporalGraph {
    /// Builds a graph from edge records. `features[t-1]` holds the rows of
    /// window `t` in [`node_order`]; when absent every node gets the single
    /// feature `1.0`.
    pub fn from_edge_records(
        records: &[EdgeRecord],
        features: Option<(usize, Vec<Vec<f64>>)>,
    ) -> Result<Self, GraphError> {
        let windows = records.iter().map(|r| r.window).max().unwrap_or(0);
        if windows == 0 {
            return Err(GraphError::Format("edge list is empty".into()));
        }
        let order = node_order(records);
        let (dim, feats) = match features {
            Some((dim, f)) => {
                if f.len() != windows {
                    return Err(GraphError::Format(format!(
                        "{} feature matrices given for {windows} windows",
                        f.len()
                    )));
                }
                (dim, Some(f))
            }
            None => (1, None),
        };
        let mut by_window: BTreeMap<usize, Vec<(String, String)>> = BTreeMap::new();
        for r in records {
            by_window.entry(r.window).or_default().push((r.a.clone(), r.b.clone()));
        }
        let mut g = TemporalGraph::new(dim);
        let mut introduced = 0;
        for t in 1..=windows {
            let start = introduced;
            while introduced < order.len() && order[introduced].1 == t {
                introduced += 1;
            }
            let features = match &feats {
                Some(f) => f[t - 1].clone(),
                None => vec![1.0; introduced],
            };
            g.add_snapshot(Snapshot {
                new_nodes: order[start..introduced]
                    .iter()
                    .map(|(id, _)| (id.clone(), Category::Other))
                    .collect(),
                new_edges: by_window.remove(&t).unwrap_or_default(),
                features,
            })?;
        }
        Ok(g)
    }
}

/// Reads a text matrix: a header line `rows dim`, then `rows` lines of
/// `dim` whitespace-separated numbers.
pub fn read_feature_matrix<R: BufRead>(reader: R) -> Result<(usize, usize, Vec<f64>), GraphError> {
    let mut lines = reader.lines().enumerate();
    let (rows, dim) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(GraphError::Format("feature matrix: missing header".into()));
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<usize> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| GraphError::Format(format!("line {}: bad header `{line}`", i + 1)))?;
        match nums[..] {
            [r, d] if d > 0 => break (r, d),
            _ => return Err(GraphError::Format(format!("line {}: header must be `rows dim`", i + 1))),
        }
    };
    let mut data = Vec::with_capacity(rows * dim);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| GraphError::Format(format!("line {}: bad number `{tok}`", i + 1)))?;
            if !v.is_finite() {
                return Err(GraphError::Format(format!("line {}: non-finite value", i + 1)));
            }
            data.push(v);
        }
        if data.len() - before != dim {
            return Err(GraphError::Format(format!(
                "line {}: expected {dim} values, found {}",
                i + 1,
                data.len() - before
            )));
        }
    }
    if data.len() != rows * dim {
        return Err(GraphError::FeatureShape {
            rows,
            dim,
            actual: data.len(),
        });
    }
    Ok((rows, dim, data))
}

pub fn write_feature_matrix<W: Write>(mut w: W, dim: usize, data: &[f64]) -> std::io::Result<()> {
    writeln!(w, "{} {dim}", data.len() / dim)?;
    for row in data.chunks(dim) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SnapshotManifest {
    version: u32,
    feature_dim: usize,
    nodes: Vec<NodeEntry>,
    windows: Vec<WindowEntry>,
}

#[derive(Serialize, Deserialize)]
struct NodeEntry {
    id: String,
    category: Category,
}

#[derive(Serialize, Deserialize)]
struct WindowEntry {
    node_count: usize,
    /// Edges first present in this window, as index pairs.
    new_edges: Vec<(usize, usize)>,
    features: String,
}

impl TemporalGraph {
    /// Writes `graph.json` plus one little-endian `f64` block per window.
    pub fn save(&self, dir: &Path) -> Result<(), GraphError> {
        fs::create_dir_all(dir)?;
        let mut windows = Vec::with_capacity(self.len());
        for t in 1..=self.len() {
            let name = format!("features_{t:03}.bin");
            let bytes: Vec<u8> = self
                .window(t)
                .feature_matrix()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            fs::write(dir.join(&name), bytes)?;
            windows.push(WindowEntry {
                node_count: self.window(t).node_count(),
                new_edges: self.new_edges(t).iter().map(|p| (p.lo, p.hi)).collect(),
                features: name,
            });
        }
        let manifest = SnapshotManifest {
            version: SNAPSHOT_VERSION,
            feature_dim: self.feature_dim,
            nodes: (0..self.registry.len())
                .map(|i| NodeEntry {
                    id: self.registry.id(i).to_string(),
                    category: self.registry.category(i),
                })
                .collect(),
            windows,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| GraphError::Format(e.to_string()))?;
        fs::write(dir.join("graph.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, GraphError> {
        let text = fs::read_to_string(dir.join("graph.json"))?;
        let manifest: SnapshotManifest =
            serde_json::from_str(&text).map_err(|e| GraphError::Format(format!("graph.json: {e}")))?;
        if manifest.version != SNAPSHOT_VERSION {
            return Err(GraphError::Format(format!(
                "unsupported snapshot version {}",
                manifest.version
            )));
        }
        if manifest.feature_dim == 0 {
            return Err(GraphError::Format("feature dimension must be positive".into()));
        }
        let nodes: Vec<(String, Category)> = manifest.nodes.into_iter().map(|n| (n.id, n.category)).collect();
        let mut windows = Vec::with_capacity(manifest.windows.len());
        for w in manifest.windows {
            if w.features.contains('/') || w.features.contains('\\') || w.features.starts_with('.') {
                return Err(GraphError::Format(format!("bad feature file name `{}`", w.features)));
            }
            let bytes = fs::read(dir.join(&w.features))?;
            if bytes.len() % 8 != 0 {
                return Err(GraphError::Format(format!("{}: truncated", w.features)));
            }
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            windows.push((w.node_count, w.new_edges, data));
        }
        TemporalGraph::from_parts(manifest.feature_dim, nodes, windows)
    }
}
