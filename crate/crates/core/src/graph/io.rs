//! Text formats for graph domains.
//!
//! * edge list: `src dst` per line, `#` starts a comment line
//! * features: one CSV row of floats per node
//! * labels: one integer per line
//!
//! A domain named `source` in a directory is stored as `source.edges`,
//! `source.features.csv` and (optionally) `source.labels`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DomainGraph, GraphError};
use crate::autodiff::Tensor;

/// Parsed edge list after deduplication.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeList {
    pub edges: Vec<(usize, usize)>,
    pub self_loops_dropped: usize,
}

impl EdgeList {
    /// Largest endpoint plus one, or 0 for an empty list.
    pub fn implied_nodes(&self) -> usize {
        self.edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0)
    }
}

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), GraphError> {
    fs::write(path, text).map_err(|source| GraphError::Io { path: path.to_path_buf(), source })
}

/// Parses an edge list. Undirected duplicates collapse to their first
/// occurrence as `(min, max)`; self-loops are dropped and counted.
pub fn parse_edge_list(text: &str, origin: &str, num_nodes: Option<usize>) -> Result<EdgeList, GraphError> {
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    let mut self_loops_dropped = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |message: String| GraphError::Format { path: origin.to_string(), line: i + 1, message };
        if fields.len() != 2 {
            return Err(bad(format!("expected two node ids, got {line:?}")));
        }
        let mut ends = [0usize; 2];
        for (slot, field) in ends.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| bad(format!("not a node id: {field:?}")))?;
            if let Some(n) = num_nodes {
                if *slot >= n {
                    return Err(GraphError::Index {
                        path: origin.to_string(),
                        line: i + 1,
                        endpoint: *slot,
                        num_nodes: n,
                    });
                }
            }
        }
        let [u, v] = ends;
        if u == v {
            self_loops_dropped += 1;
            continue;
        }
        let e = (u.min(v), u.max(v));
        if seen.insert(e) {
            edges.push(e);
        }
    }
    if self_loops_dropped > 0 {
        log::warn!("{origin}: dropped {self_loops_dropped} self-loop(s)");
    }
    Ok(EdgeList { edges, self_loops_dropped })
}

pub fn load_edge_list(path: &Path, num_nodes: Option<usize>) -> Result<EdgeList, GraphError> {
    parse_edge_list(&read(path)?, &path.display().to_string(), num_nodes)
}

pub fn format_edge_list(edges: &[(usize, usize)]) -> String {
    let mut out = String::with_capacity(edges.len() * 10);
    for (u, v) in edges {
        let _ = writeln!(out, "{u} {v}");
    }
    out
}

pub fn save_edge_list(path: &Path, edges: &[(usize, usize)]) -> Result<(), GraphError> {
    write(path, &format_edge_list(edges))
}

pub fn parse_features(text: &str, origin: &str) -> Result<Tensor, GraphError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| GraphError::Format { path: origin.to_string(), line: i + 1, message };
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| bad(format!("not a number: {f:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(bad(format!("{} columns, expected {}", row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GraphError::Empty { path: origin.to_string() });
    }
    Ok(Tensor::from_rows(&rows)?)
}

pub fn load_features(path: &Path) -> Result<Tensor, GraphError> {
    parse_features(&read(path)?, &path.display().to_string())
}

pub fn format_features(features: &Tensor) -> String {
    let mut out = String::new();
    for r in 0..features.rows() {
        for (j, v) in features.row_slice(r).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_features(path: &Path, features: &Tensor) -> Result<(), GraphError> {
    write(path, &format_features(features))
}

/// Parses one label per line; with `num_classes` given, labels must lie
/// below it.
pub fn parse_labels(text: &str, origin: &str, num_classes: Option<usize>) -> Result<Vec<usize>, GraphError> {
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let label: usize = line.parse().map_err(|_| GraphError::Format {
            path: origin.to_string(),
            line: i + 1,
            message: format!("not a class id: {line:?}"),
        })?;
        if let Some(c) = num_classes {
            if label >= c {
                return Err(GraphError::LabelRange { node: labels.len(), label, num_classes: c });
            }
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(GraphError::Empty { path: origin.to_string() });
    }
    Ok(labels)
}

pub fn load_labels(path: &Path, num_classes: Option<usize>) -> Result<Vec<usize>, GraphError> {
    parse_labels(&read(path)?, &path.display().to_string(), num_classes)
}

pub fn format_labels(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn save_labels(path: &Path, labels: &[usize]) -> Result<(), GraphError> {
    write(path, &format_labels(labels))
}

/// File paths of a named domain inside `dir`.
#[derive(Clone, Debug)]
pub struct DomainFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
}

impl DomainFiles {
    pub fn new(dir: &Path, name: &str) -> Self {
        Self {
            edges: dir.join(format!("{name}.edges")),
            features: dir.join(format!("{name}.features.csv")),
            labels: dir.join(format!("{name}.labels")),
        }
    }
}

/// Loads a domain; the label file is optional. Without `num_classes` the
/// class count is inferred from the largest label.
pub fn load_domain(dir: &Path, name: &str, num_classes: Option<usize>) -> Result<DomainGraph, GraphError> {
    let files = DomainFiles::new(dir, name);
    let features = load_features(&files.features)?;
    let n = features.rows();
    let edges = load_edge_list(&files.edges, Some(n))?;
    let labels = if files.labels.exists() {
        let labels = load_labels(&files.labels, num_classes)?;
        if labels.len() != n {
            return Err(GraphError::Consistency(format!(
                "{}: {} labels but {} feature rows",
                files.labels.display(),
                labels.len(),
                n
            )));
        }
        Some(labels)
    } else {
        None
    };
    let classes = num_classes
        .or_else(|| labels.as_ref().map(|l| l.iter().max().map_or(1, |m| m + 1)))
        .unwrap_or(1);
    DomainGraph::new(n, edges.edges, features, labels, classes)
}

pub fn save_domain(dir: &Path, name: &str, graph: &DomainGraph, with_labels: bool) -> Result<(), GraphError> {
    let files = DomainFiles::new(dir, name);
    save_edge_list(&files.edges, graph.edges())?;
    save_features(&files.features, graph.features())?;
    if let (true, Some(labels)) = (with_labels, graph.labels()) {
        save_labels(&files.labels, labels)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_list() {
        let e = parse_edge_list("0 1\n1 2", "mem", None).unwrap();
        assert_eq!(e.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(e.self_loops_dropped, 0);
    }

    #[test]
    fn undirected_duplicates_collapse() {
        let e = parse_edge_list("0 1\n1 0", "mem", None).unwrap();
        assert_eq!(e.edges, vec![(0, 1)]);
    }

    #[test]
    fn self_loops_are_counted_and_dropped() {
        let e = parse_edge_list("# c\n2 2\n0 2\n", "mem", None).unwrap();
        assert_eq!(e.edges, vec![(0, 2)]);
        assert_eq!(e.self_loops_dropped, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_edge_list("0 1\n# x\n1 x\n", "mem", None).unwrap_err();
        assert!(matches!(err, GraphError::Format { line: 3, .. }), "{err}");
        let err = parse_edge_list("0 1 2\n", "mem", None).unwrap_err();
        assert!(matches!(err, GraphError::Format { line: 1, .. }));
    }

    #[test]
    fn endpoint_beyond_declared_nodes() {
        let err = parse_edge_list("0 1\n1 5\n", "mem", Some(5)).unwrap_err();
        assert!(matches!(err, GraphError::Index { line: 2, endpoint: 5, .. }));
    }

    #[test]
    fn features_parse_and_validate() {
        let f = parse_features("1.0,2.0\n3.0,4.0", "mem").unwrap();
        assert_eq!(f, Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        assert!(matches!(parse_features("", "mem"), Err(GraphError::Empty { .. })));
        assert!(matches!(parse_features("1,2\n3\n", "mem"), Err(GraphError::Format { line: 2, .. })));
    }

    #[test]
    fn labels_respect_class_count() {
        assert_eq!(parse_labels("0\n2\n1\n", "mem", Some(3)).unwrap(), vec![0, 2, 1]);
        assert!(matches!(parse_labels("0\n3\n", "mem", Some(3)), Err(GraphError::LabelRange { label: 3, .. })));
    }
}
