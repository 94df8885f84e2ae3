//! Graph domains, GCN adjacency normalization, file formats and the
//! synthetic shifted-graph generator.

mod csbm;
pub mod io;

use std::collections::HashSet;
use std::path::PathBuf;

use crate::autodiff::{AutodiffError, CsrMatrix, Tensor};
use crate::kv::KvError;

pub use csbm::{generate_csbm, CsbmSpec, DomainShift};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("{path}: line {line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("{path}: line {line}: endpoint {endpoint} out of range for {num_nodes} nodes")]
    Index { path: String, line: usize, endpoint: usize, num_nodes: usize },
    #[error("label {label} at node {node} is not below the class count {num_classes}")]
    LabelRange { node: usize, label: usize, num_classes: usize },
    #[error("{0}")]
    Consistency(String),
    #[error("{path}: no rows")]
    Empty { path: String },
    #[error("invalid spec field `{field}`: {message}")]
    Spec { field: &'static str, message: String },
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Tensor(#[from] AutodiffError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One graph domain: undirected edges, node features and optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl DomainGraph {
    /// Validates and builds a domain.
    ///
    /// Edges are stored once per undirected pair as `(min, max)`; duplicates
    /// and self-loops are rejected here (the file loader drops them instead).
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self, GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::Consistency("a graph needs at least one node".into()));
        }
        if !features.is_matrix() || features.rows() != num_nodes {
            return Err(GraphError::Consistency(format!(
                "feature matrix {:?} does not have {num_nodes} rows",
                features.shape()
            )));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut canonical = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::Consistency(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                return Err(GraphError::Consistency(format!("self-loop at node {u}")));
            }
            let e = (u.min(v), u.max(v));
            if !seen.insert(e) {
                return Err(GraphError::Consistency(format!("duplicate edge ({}, {})", e.0, e.1)));
            }
            canonical.push(e);
        }
        if let Some(labels) = &labels {
            if labels.len() != num_nodes {
                return Err(GraphError::Consistency(format!(
                    "{} labels for {num_nodes} nodes",
                    labels.len()
                )));
            }
            if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
                return Err(GraphError::LabelRange { node, label, num_classes });
            }
        }
        Ok(Self { num_nodes, edges: canonical, features, labels, num_classes })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Same graph with the labels removed.
    pub fn without_labels(&self) -> Self {
        Self { labels: None, ..self.clone() }
    }
}

/// Symmetric GCN propagation matrix `D^{-1/2}(A + I)D^{-1/2}` in coordinate
/// form, sorted by `(row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    num_nodes: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_csr(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.num_nodes, self.num_nodes, &self.entries)
            .expect("entries lie inside the matrix")
    }
}

pub fn normalize_adjacency(graph: &DomainGraph) -> NormalizedAdjacency {
    let n = graph.num_nodes();
    let mut degree = vec![1.0f64; n];
    for &(u, v) in graph.edges() {
        degree[u] += 1.0;
        degree[v] += 1.0;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut entries = Vec::with_capacity(n + 2 * graph.edges().len());
    for (i, d) in degree.iter().enumerate() {
        entries.push((i, i, 1.0 / d));
    }
    for &(u, v) in graph.edges() {
        let w = inv_sqrt[u] * inv_sqrt[v];
        entries.push((u, v, w));
        entries.push((v, u, w));
    }
    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    NormalizedAdjacency { num_nodes: n, entries }
}
