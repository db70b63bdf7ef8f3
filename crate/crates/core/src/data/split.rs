use crate::data::{Graph, GraphDataset};
use crate::error::{arg, Result};
use crate::scalar::Scalar;

/// Undirected edge density `2|E| / (|V| (|V| - 1))`; 0 for single-node graphs.
pub fn edge_density<T: Scalar>(g: &Graph<T>) -> f64 {
    let n = g.node_count();
    if n < 2 {
        return 0.0;
    }
    2.0 * g.edge_count() as f64 / (n as f64 * (n as f64 - 1.0))
}

/// Sorts graphs by ascending density (ties by original index) and cuts the
/// order into `parts` contiguous groups whose sizes differ by at most one.
/// Group 0 holds the sparsest graphs.
pub fn density_split<T: Scalar>(dataset: &GraphDataset<T>, parts: usize) -> Result<Vec<GraphDataset<T>>> {
    if parts < 2 {
        return Err(arg("density split needs at least 2 parts"));
    }
    if dataset.is_empty() {
        return Err(arg("cannot split an empty dataset"));
    }
    if parts > dataset.len() {
        return Err(arg(format!(
            "cannot split {} graphs into {parts} parts",
            dataset.len()
        )));
    }
    let densities: Vec<f64> = dataset.graphs.iter().map(edge_density).collect();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&a, &b| densities[a].total_cmp(&densities[b]).then(a.cmp(&b)));

    let base = dataset.len() / parts;
    let extra = dataset.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let size = base + usize::from(k < extra);
        out.push(dataset.subset(&order[start..start + size], format!("{}{k}", dataset.name)));
        start += size;
    }
    Ok(out)
}
