use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::EdgeList;
use crate::data::GraphDataset;
use crate::error::{arg, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Disjoint union of several graphs of one dataset.
#[derive(Clone, Debug)]
pub struct GraphBatch<T> {
    /// Dataset indices of the member graphs, in batch order.
    pub members: Vec<usize>,
    /// Concatenated node features, member by member.
    pub features: Matrix<T>,
    /// Batch position of the graph owning each node.
    pub membership: Vec<usize>,
    /// First node of each member in the concatenated node order.
    pub node_offsets: Vec<usize>,
    /// Edges in concatenated node ids.
    pub edges: Rc<EdgeList>,
}

impl<T: Scalar> GraphBatch<T> {
    pub fn new(dataset: &GraphDataset<T>, members: &[usize]) -> Self {
        let graphs: Vec<_> = members.iter().map(|&i| &dataset.graphs[i]).collect();
        let total: usize = graphs.iter().map(|g| g.node_count()).sum();
        let parts: Vec<&Matrix<T>> = graphs.iter().map(|g| g.node_features()).collect();
        let features = if parts.is_empty() {
            Matrix::zeros(0, dataset.feature_dim())
        } else {
            Matrix::vstack(&parts)
        };
        let mut membership = Vec::with_capacity(total);
        let mut node_offsets = Vec::with_capacity(graphs.len());
        let mut edges = Vec::new();
        let mut offset = 0;
        for (pos, g) in graphs.iter().enumerate() {
            node_offsets.push(offset);
            membership.extend(std::iter::repeat_n(pos, g.node_count()));
            edges.extend(g.edges().iter().map(|&(u, v)| (u + offset, v + offset)));
            offset += g.node_count();
        }
        Self {
            members: members.to_vec(),
            features,
            membership,
            node_offsets,
            edges: Rc::new(EdgeList {
                node_count: total,
                edges,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.membership.len()
    }

    /// Concatenated node ids of batch member `pos`.
    pub fn node_range(&self, pos: usize) -> std::ops::Range<usize> {
        let start = self.node_offsets[pos];
        let end = self
            .node_offsets
            .get(pos + 1)
            .copied()
            .unwrap_or(self.membership.len());
        start..end
    }
}

/// Shuffled index groups of size `batch_size`; a trailing group of one is
/// merged into the previous group.
pub fn batch_plan(len: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(arg("batch size must be at least 2"));
    }
    if len < 2 {
        return Err(arg("need at least 2 graphs to batch"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut groups: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if groups.len() > 1 && groups.last().is_some_and(|g| g.len() < 2) {
        let tail = groups.pop().expect("nonempty");
        groups.last_mut().expect("nonempty").extend(tail);
    }
    Ok(groups)
}

/// Deterministically shuffled batches covering the whole dataset once.
pub fn make_batches<T: Scalar>(
    dataset: &GraphDataset<T>,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<Vec<GraphBatch<T>>> {
    Ok(batch_plan(dataset.len(), batch_size, shuffle_seed)?
        .iter()
        .map(|members| dataset.batch(members))
        .collect())
}
