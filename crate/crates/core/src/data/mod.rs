//! Attributed graphs, datasets, TU flat-file IO, density splits and batching.

mod batch;
mod split;
mod tud;

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::EdgeList;
use crate::error::{arg, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub use batch::{batch_plan, make_batches, GraphBatch};
pub use split::{density_split, edge_density};
pub use tud::{load_tud_dataset, load_tud_dataset_with_schema, write_tud_dataset};

/// How raw TU node labels, node attributes and graph labels map to model inputs.
///
/// A model trained on one dataset must read its target data through the same
/// schema so feature columns and class indices line up.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    /// Raw node label values, ascending; value `k` of this list is one-hot column `k`.
    pub node_label_values: Vec<i64>,
    /// Number of continuous node attribute columns appended after the one-hot block.
    pub attribute_dim: usize,
    /// Raw graph label values, ascending; position is the class index.
    pub class_values: Vec<i64>,
}

impl FeatureSchema {
    pub fn feature_dim(&self) -> usize {
        self.node_label_values.len() + self.attribute_dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_values.len()
    }

    /// Schema without node labels: every node carries a single constant feature.
    pub fn plain(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            node_label_values: (0..feature_dim as i64).collect(),
            attribute_dim: 0,
            class_values: (0..num_classes as i64).collect(),
        }
    }

    pub fn class_index(&self, raw: i64) -> Option<usize> {
        self.class_values.binary_search(&raw).ok()
    }
}

/// Undirected attributed graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph<T> {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    node_features: Matrix<T>,
    label: Option<usize>,
    node_tags: Option<Vec<i64>>,
}

impl<T: Scalar> Graph<T> {
    /// Validates endpoints, drops self-loops and keeps each undirected edge once
    /// (first occurrence, stored as `(min, max)`).
    pub fn new(
        node_features: Matrix<T>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        label: Option<usize>,
    ) -> Result<Self> {
        let node_count = node_features.rows();
        if node_count == 0 {
            return Err(arg("graph needs at least one node"));
        }
        let mut seen = std::collections::HashSet::new();
        let mut kept = Vec::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(arg(format!(
                    "edge ({u}, {v}) out of range for {node_count} nodes"
                )));
            }
            if u == v {
                continue;
            }
            let e = (u.min(v), u.max(v));
            if seen.insert(e) {
                kept.push(e);
            }
        }
        Ok(Self {
            node_count,
            edges: kept,
            node_features,
            label,
            node_tags: None,
        })
    }

    /// Attaches the raw node labels the one-hot features were built from.
    pub fn with_node_tags(mut self, tags: Vec<i64>) -> Result<Self> {
        if tags.len() != self.node_count {
            return Err(arg("node tag count differs from node count"));
        }
        self.node_tags = Some(tags);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_features(&self) -> &Matrix<T> {
        &self.node_features
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn node_tags(&self) -> Option<&[i64]> {
        self.node_tags.as_deref()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn without_label(&self) -> Self {
        Self {
            label: None,
            ..self.clone()
        }
    }

    /// Same nodes and features with only the edges whose mask entry is set.
    pub fn with_edge_subset(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.edges.len(), "edge mask length mismatch");
        Self {
            edges: self
                .edges
                .iter()
                .zip(keep)
                .filter_map(|(&e, &k)| k.then_some(e))
                .collect(),
            ..self.clone()
        }
    }

    pub fn edge_list(&self) -> Rc<EdgeList> {
        Rc::new(EdgeList {
            node_count: self.node_count,
            edges: self.edges.clone(),
        })
    }
}

/// Ordered collection of graphs sharing one feature schema.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset<T> {
    pub name: String,
    pub graphs: Vec<Graph<T>>,
    pub schema: FeatureSchema,
}

impl<T: Scalar> GraphDataset<T> {
    pub fn new(name: impl Into<String>, graphs: Vec<Graph<T>>, schema: FeatureSchema) -> Result<Self> {
        let c = schema.num_classes();
        let d = schema.feature_dim();
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != d {
                return Err(arg(format!(
                    "graph {i} has feature dim {} but the schema has {d}",
                    g.feature_dim()
                )));
            }
            if let Some(y) = g.label {
                if y >= c {
                    return Err(arg(format!("graph {i} label {y} outside 0..{c}")));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            graphs,
            schema,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.schema.num_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.schema.feature_dim()
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.graphs.iter().map(Graph::label).collect()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.graphs.iter().all(|g| g.label.is_some())
    }

    /// Copy with every graph label removed.
    pub fn unlabeled(&self) -> Self {
        Self {
            name: self.name.clone(),
            graphs: self.graphs.iter().map(Graph::without_label).collect(),
            schema: self.schema.clone(),
        }
    }

    /// Sub-dataset with the given graph indices in order.
    pub fn subset(&self, idx: &[usize], name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            graphs: idx.iter().map(|&i| self.graphs[i].clone()).collect(),
            schema: self.schema.clone(),
        }
    }

    pub fn batch(&self, members: &[usize]) -> GraphBatch<T> {
        GraphBatch::new(self, members)
    }
}
