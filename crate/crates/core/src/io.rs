//! Plain-text dataset formats.
//!
//! * Edge list: one `u v [w]` per line, 0-indexed, `#` starts a comment.
//! * Labels: headerless CSV, one integer class per line (row i = node i).
//! * Features: headerless CSV, one row of floats per node.
//! * Splits: headerless CSV, one `train,val,test` row of 0/1 flags per node;
//!   one file per split.
//!
//! Numbers are written with 17 significant digits so files round-trip
//! bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, GraphOptions, LabelVector, SplitMasks};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        file: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            file: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        file: path.to_path_buf(),
        source,
    })
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Meaningful lines with their 1-based numbers; comments and blanks dropped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let c = l.split('#').next().unwrap_or("").trim();
        (!c.is_empty()).then_some((i + 1, c))
    })
}

/// Parses an edge list. `n` defaults to one past the largest index.
pub fn parse_edge_list(text: &str, n: Option<usize>, file: &Path, opts: GraphOptions) -> Result<Graph> {
    let mut edges = Vec::new();
    let mut max_node = 0;
    for (line, c) in content_lines(text) {
        let toks: Vec<&str> = c.split_whitespace().collect();
        if !(2..=3).contains(&toks.len()) {
            return Err(parse_err(file, line, format!("expected `u v [w]`, got `{c}`")));
        }
        let u: usize = toks[0].parse().map_err(|_| parse_err(file, line, format!("bad node `{}`", toks[0])))?;
        let v: usize = toks[1].parse().map_err(|_| parse_err(file, line, format!("bad node `{}`", toks[1])))?;
        let w: f64 = match toks.get(2) {
            Some(t) => t.parse().map_err(|_| parse_err(file, line, format!("bad weight `{t}`")))?,
            None => 1.0,
        };
        if let Some(n) = n {
            if u >= n || v >= n {
                return Err(parse_err(file, line, format!("node {} out of range for n = {n}", u.max(v))));
            }
        }
        if u == v && !opts.allow_self_loops && !opts.drop_self_loops {
            return Err(parse_err(file, line, format!("self-loop at node {u}")));
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(parse_err(file, line, format!("weight {w} must be positive and finite")));
        }
        max_node = max_node.max(u).max(v);
        edges.push((u, v, w));
    }
    let n = n.unwrap_or(if edges.is_empty() { 0 } else { max_node + 1 });
    Graph::with_options(n, edges, opts).map_err(|e| Error::Inconsistent {
        file: file.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn read_edge_list(path: &Path, n: Option<usize>) -> Result<Graph> {
    parse_edge_list(&read_text(path)?, n, path, GraphOptions::default())
}

pub fn render_edge_list(g: &Graph) -> String {
    let unweighted = g.edges().iter().all(|&(_, _, w)| w == 1.0) && g.self_loops().is_empty();
    let mut out = String::new();
    writeln!(out, "# n={} m={}", g.n(), g.m()).unwrap();
    for &(u, v, w) in g.edges() {
        if unweighted {
            writeln!(out, "{u} {v}").unwrap();
        } else {
            writeln!(out, "{u} {v} {}", fmt17(w)).unwrap();
        }
    }
    for &(u, w) in g.self_loops() {
        writeln!(out, "{u} {u} {}", fmt17(w)).unwrap();
    }
    out
}

pub fn write_edge_list(g: &Graph, path: &Path) -> Result<()> {
    write_text(path, &render_edge_list(g))
}

pub fn parse_labels(text: &str, file: &Path) -> Result<LabelVector> {
    let mut labels = Vec::new();
    for (line, c) in content_lines(text) {
        let y: usize = c.parse().map_err(|_| parse_err(file, line, format!("bad label `{c}`")))?;
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(parse_err(file, 1, "no labels"));
    }
    Ok(LabelVector::from_labels(labels))
}

pub fn read_labels(path: &Path) -> Result<LabelVector> {
    parse_labels(&read_text(path)?, path)
}

pub fn render_labels(labels: &[usize]) -> String {
    labels.iter().map(|y| format!("{y}\n")).collect()
}

pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    write_text(path, &render_labels(labels))
}

pub fn parse_matrix(text: &str, file: &Path) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (line, c) in content_lines(text) {
        let vals: Vec<f64> = c
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(file, line, "non-numeric entry"))?;
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(parse_err(file, line, format!("row has {} columns, expected {w}", vals.len())))
            }
            _ => {}
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(file, line, "non-finite entry"));
        }
        data.extend(vals);
        rows += 1;
    }
    Array2::from_shape_vec((rows, width.unwrap_or(0)), data).map_err(|e| parse_err(file, 1, e.to_string()))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::new(parse_matrix(&read_text(path)?, path)?)
}

pub fn render_matrix(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|&x| fmt17(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix(m: &Array2<f64>, path: &Path) -> Result<()> {
    write_text(path, &render_matrix(m))
}

pub fn parse_split(text: &str, file: &Path) -> Result<SplitMasks> {
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (line, c) in content_lines(text) {
        let flags: Vec<&str> = c.split(',').map(str::trim).collect();
        if flags.len() != 3 {
            return Err(parse_err(file, line, "expected `train,val,test` flags"));
        }
        let mut bits = [false; 3];
        for (b, f) in bits.iter_mut().zip(&flags) {
            *b = match *f {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(file, line, format!("flag `{other}` is not 0 or 1"))),
            };
        }
        if bits.iter().filter(|&&b| b).count() > 1 {
            return Err(parse_err(file, line, "node in more than one split"));
        }
        train.push(bits[0]);
        val.push(bits[1]);
        test.push(bits[2]);
    }
    SplitMasks::new(train, val, test).map_err(|e| Error::Inconsistent {
        file: file.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn read_split(path: &Path) -> Result<SplitMasks> {
    parse_split(&read_text(path)?, path)
}

pub fn render_split(m: &SplitMasks) -> String {
    (0..m.len())
        .map(|i| format!("{},{},{}\n", m.train[i] as u8, m.val[i] as u8, m.test[i] as u8))
        .collect()
}

pub fn write_split(m: &SplitMasks, path: &Path) -> Result<()> {
    write_text(path, &render_split(m))
}

/// Split files: the path itself, or every `*.csv` in it (sorted by name)
/// when it is a directory.
pub fn split_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|source| Error::Io {
        file: path.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Inconsistent {
            file: path.to_path_buf(),
            msg: "no split files (*.csv) found".into(),
        });
    }
    Ok(files)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub splits: Vec<SplitMasks>,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetPaths {
    pub graph: PathBuf,
    pub features: Option<PathBuf>,
    pub labels: PathBuf,
    pub splits: Option<PathBuf>,
}

impl DatasetPaths {
    /// Every file that was read, in a stable order.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.graph.clone()];
        v.extend(self.features.clone());
        v.push(self.labels.clone());
        if let Some(s) = &self.splits {
            v.extend(split_files(s).unwrap_or_default());
        }
        v
    }
}

/// Loads and cross-checks a dataset. The node count comes from the labels.
/// Without a features file the identity is used.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let labels = read_labels(&paths.labels)?;
    let n = labels.len();
    let graph = read_edge_list(&paths.graph, Some(n))?;
    let features = match &paths.features {
        Some(p) => {
            let f = read_features(p)?;
            if f.n() != n {
                return Err(Error::Inconsistent {
                    file: p.clone(),
                    msg: format!("{} feature rows but {n} labels", f.n()),
                });
            }
            f
        }
        None => FeatureMatrix::new(Array2::eye(n))?,
    };
    let mut splits = Vec::new();
    if let Some(s) = &paths.splits {
        for file in split_files(s)? {
            let m = read_split(&file)?;
            if m.len() != n {
                return Err(Error::Inconsistent {
                    file,
                    msg: format!("{} split rows but {n} labels", m.len()),
                });
            }
            splits.push(m);
        }
    }
    Ok(Dataset {
        graph,
        features,
        labels,
        splits,
    })
}

/// Reads the WebKB text layout: `out1_graph_edges.txt` (header line, then
/// tab-separated `src dst` pairs) and `out1_node_feature_label.txt` (header
/// line, then `id<TAB>f1,f2,...<TAB>label`). Directed duplicates are merged
/// and self loops dropped. Split masks are expected as CSV files produced by
/// the documented converter script (`scripts/webkb_splits.py`).
pub fn read_webkb(dir: &Path) -> Result<(Graph, FeatureMatrix, LabelVector)> {
    let nodes_path = dir.join("out1_node_feature_label.txt");
    let text = read_text(&nodes_path)?;
    let mut rows: Vec<(usize, Vec<f64>, usize)> = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(parse_err(&nodes_path, line_no, "expected `id<TAB>features<TAB>label`"));
        }
        let id = parts[0].trim().parse().map_err(|_| parse_err(&nodes_path, line_no, "bad node id"))?;
        let feats = parts[1]
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err(&nodes_path, line_no, "bad feature value"))?;
        let y = parts[2].trim().parse().map_err(|_| parse_err(&nodes_path, line_no, "bad label"))?;
        rows.push((id, feats, y));
    }
    rows.sort_by_key(|r| r.0);
    let n = rows.len();
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(Error::Inconsistent {
            file: nodes_path,
            msg: "node ids must be 0..n-1".into(),
        });
    }
    let width = rows.first().map_or(0, |r| r.1.len());
    if let Some(r) = rows.iter().find(|r| r.1.len() != width) {
        return Err(Error::Inconsistent {
            file: nodes_path,
            msg: format!("node {} has {} features, expected {width}", r.0, r.1.len()),
        });
    }
    let x = Array2::from_shape_vec((n, width), rows.iter().flat_map(|r| r.1.clone()).collect())
        .expect("uniform widths");
    let labels = LabelVector::from_labels(rows.iter().map(|r| r.2).collect());

    let edges_path = dir.join("out1_graph_edges.txt");
    let text = read_text(&edges_path)?;
    let mut pairs = std::collections::BTreeSet::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            return Err(parse_err(&edges_path, idx + 1, "expected `src<TAB>dst`"));
        }
        let u: usize = toks[0].parse().map_err(|_| parse_err(&edges_path, idx + 1, "bad node id"))?;
        let v: usize = toks[1].parse().map_err(|_| parse_err(&edges_path, idx + 1, "bad node id"))?;
        if u >= n || v >= n {
            return Err(parse_err(&edges_path, idx + 1, format!("node {} out of range", u.max(v))));
        }
        if u != v {
            pairs.insert((u.min(v), u.max(v)));
        }
    }
    let graph = Graph::new(n, pairs)?;
    Ok((graph, FeatureMatrix::new(x)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn edge_list_with_comments_and_weights() {
        let g = parse_edge_list("# header\n0 1\n1 2 2.5 # heavy\n\n", None, Path::new("g.txt"), GraphOptions::default())
            .unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edges(), &[(0, 1, 1.0), (1, 2, 2.5)]);
    }

    #[test]
    fn edge_list_errors_name_line() {
        let e = parse_edge_list("0 1\n1 x\n", None, Path::new("g.txt"), GraphOptions::default()).unwrap_err();
        assert!(e.to_string().starts_with("g.txt:2:"), "{e}");
        let e = parse_edge_list("0 0\n", None, Path::new("g.txt"), GraphOptions::default()).unwrap_err();
        assert!(e.to_string().contains("self-loop"));
        assert!(parse_edge_list("0 5\n", Some(3), Path::new("g.txt"), GraphOptions::default()).is_err());
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = array![[0.1, 1.0 / 3.0], [-2.5e-300, 7.0]];
        let back = parse_matrix(&render_matrix(&m), Path::new("x.csv")).unwrap();
        assert_eq!(back, m);
        assert!(parse_matrix("1,2\n3\n", Path::new("x.csv")).is_err());
    }

    #[test]
    fn split_round_trip() {
        let m = SplitMasks::new(vec![true, false, false], vec![false, true, false], vec![false, false, true]).unwrap();
        assert_eq!(parse_split(&render_split(&m), Path::new("s.csv")).unwrap(), m);
        assert!(parse_split("1,1,0\n", Path::new("s.csv")).is_err());
    }
}
