//! TU benchmark flat-file format.
//!
//! A dataset `DS` lives in a directory holding
//! `DS_A.txt` (one `u, v` pair per line, 1-indexed global node ids),
//! `DS_graph_indicator.txt` (graph id of node i on line i, 1-indexed),
//! `DS_graph_labels.txt` (one integer per graph) and
//! `DS_node_labels.txt` (one integer per node). An optional
//! `DS_node_attributes.txt` holds comma-separated floats per node.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{FeatureSchema, Graph, GraphDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

struct RawTud {
    name: String,
    edges: Vec<(usize, usize, usize)>,
    indicator: Vec<usize>,
    graph_labels: Vec<i64>,
    node_labels: Vec<i64>,
    attributes: Option<Vec<Vec<f64>>>,
}

fn dataset_name(dir: &Path) -> Result<String> {
    dir.file_name()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::Argument(format!("cannot infer dataset name from {}", dir.display())))
}

fn read(path: PathBuf) -> Result<(String, String)> {
    let file = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let text = fs::read_to_string(&path).map_err(|source| Error::Load { path, source })?;
    Ok((file, text))
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn format_err(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        file: file.to_owned(),
        line,
        message: message.into(),
    }
}

fn parse_int(file: &str, line: usize, s: &str) -> Result<i64> {
    s.trim()
        .parse::<i64>()
        .map_err(|_| format_err(file, line, format!("expected an integer, found {s:?}")))
}

fn read_raw(dir: &Path) -> Result<RawTud> {
    let name = dataset_name(dir)?;
    let path = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let (file, text) = read(path("graph_indicator"))?;
    let mut indicator = Vec::new();
    for (ln, l) in lines(&text) {
        let g = parse_int(&file, ln, l)?;
        if g < 1 {
            return Err(format_err(&file, ln, "graph ids are 1-indexed"));
        }
        indicator.push(g as usize - 1);
    }
    let num_nodes = indicator.len();
    let num_graphs = indicator.iter().max().map_or(0, |m| m + 1);
    if indicator.windows(2).any(|w| w[1] < w[0]) {
        return Err(format_err(&file, 0, "graph indicator is not sorted by graph id"));
    }

    let (file, text) = read(path("A"))?;
    let mut edges = Vec::new();
    for (ln, l) in lines(&text) {
        let mut parts = l.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format_err(&file, ln, "expected `u, v`"));
        };
        let (u, v) = (parse_int(&file, ln, a)?, parse_int(&file, ln, b)?);
        for x in [u, v] {
            if x < 1 || x as usize > num_nodes {
                return Err(format_err(
                    &file,
                    ln,
                    format!("node index {x} outside 1..={num_nodes}"),
                ));
            }
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        if indicator[u] != indicator[v] {
            return Err(format_err(&file, ln, "edge joins nodes of different graphs"));
        }
        edges.push((indicator[u], u, v));
    }

    let (file, text) = read(path("graph_labels"))?;
    let graph_labels = lines(&text)
        .map(|(ln, l)| parse_int(&file, ln, l))
        .collect::<Result<Vec<_>>>()?;
    if graph_labels.len() != num_graphs {
        return Err(format_err(
            &file,
            graph_labels.len(),
            format!("{} graph labels for {num_graphs} graphs", graph_labels.len()),
        ));
    }

    let (file, text) = read(path("node_labels"))?;
    let node_labels = lines(&text)
        .map(|(ln, l)| parse_int(&file, ln, l.split(',').next().unwrap_or(l)))
        .collect::<Result<Vec<_>>>()?;
    if node_labels.len() != num_nodes {
        return Err(format_err(
            &file,
            node_labels.len(),
            format!("{} node labels for {num_nodes} nodes", node_labels.len()),
        ));
    }

    let attr_path = path("node_attributes");
    let attributes = if attr_path.exists() {
        let (file, text) = read(attr_path)?;
        let mut rows = Vec::with_capacity(num_nodes);
        for (ln, l) in lines(&text) {
            let row = l
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| format_err(&file, ln, format!("expected a number, found {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                if Vec::len(first) != row.len() {
                    return Err(format_err(&file, ln, "ragged attribute row"));
                }
            }
            rows.push(row);
        }
        if rows.len() != num_nodes {
            return Err(format_err(
                &file,
                rows.len(),
                format!("{} attribute rows for {num_nodes} nodes", rows.len()),
            ));
        }
        Some(rows)
    } else {
        None
    };

    Ok(RawTud {
        name,
        edges,
        indicator,
        graph_labels,
        node_labels,
        attributes,
    })
}

fn derive_schema(raw: &RawTud) -> FeatureSchema {
    let node_label_values: BTreeSet<i64> = raw.node_labels.iter().copied().collect();
    let class_values: BTreeSet<i64> = raw.graph_labels.iter().copied().collect();
    FeatureSchema {
        node_label_values: node_label_values.into_iter().collect(),
        attribute_dim: raw
            .attributes
            .as_ref()
            .and_then(|a| a.first())
            .map_or(0, Vec::len),
        class_values: class_values.into_iter().collect(),
    }
}

/// Loads a TU dataset, deriving the feature schema from the files themselves.
///
/// Node labels become a one-hot block over the sorted distinct raw values,
/// followed by node attributes when present. Graph labels are remapped to
/// `0..C` by ascending raw value.
pub fn load_tud_dataset<T: Scalar>(dir: impl AsRef<Path>) -> Result<GraphDataset<T>> {
    let raw = read_raw(dir.as_ref())?;
    let schema = derive_schema(&raw);
    build(raw, schema)
}

/// Loads a TU dataset through an existing schema (e.g. the one a model was
/// trained with). Node labels outside the schema encode as all-zero one-hots;
/// missing attributes encode as zeros.
pub fn load_tud_dataset_with_schema<T: Scalar>(
    dir: impl AsRef<Path>,
    schema: &FeatureSchema,
) -> Result<GraphDataset<T>> {
    let raw = read_raw(dir.as_ref())?;
    build(raw, schema.clone())
}

fn build<T: Scalar>(raw: RawTud, schema: FeatureSchema) -> Result<GraphDataset<T>> {
    let num_graphs = raw.graph_labels.len();
    let label_file = format!("{}_graph_labels.txt", raw.name);
    if let Some(attrs) = &raw.attributes {
        let dim = attrs.first().map_or(0, Vec::len);
        if schema.attribute_dim != 0 && dim != schema.attribute_dim {
            return Err(Error::Format {
                file: format!("{}_node_attributes.txt", raw.name),
                line: 1,
                message: format!("{dim} attributes per node, schema expects {}", schema.attribute_dim),
            });
        }
    }

    // node ranges per graph; the indicator is sorted
    let mut first_node = vec![usize::MAX; num_graphs];
    let mut counts = vec![0usize; num_graphs];
    for (node, &g) in raw.indicator.iter().enumerate() {
        first_node[g] = first_node[g].min(node);
        counts[g] += 1;
    }
    let mut edges_of: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for &(g, u, v) in &raw.edges {
        edges_of[g].push((u - first_node[g], v - first_node[g]));
    }

    let onehot = schema.node_label_values.len();
    let mut graphs = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let n = counts[g];
        if n == 0 {
            return Err(Error::Format {
                file: format!("{}_graph_indicator.txt", raw.name),
                line: 0,
                message: format!("graph {} has no nodes", g + 1),
            });
        }
        let start = first_node[g];
        let tags: Vec<i64> = raw.node_labels[start..start + n].to_vec();
        let mut feats = Matrix::zeros(n, schema.feature_dim());
        for (i, &tag) in tags.iter().enumerate() {
            if let Ok(col) = schema.node_label_values.binary_search(&tag) {
                feats[(i, col)] = T::one();
            }
            if let (Some(attrs), true) = (&raw.attributes, schema.attribute_dim > 0) {
                for (k, &a) in attrs[start + i].iter().enumerate() {
                    feats[(i, onehot + k)] = T::of(a);
                }
            }
        }
        let raw_label = raw.graph_labels[g];
        let label = schema.class_index(raw_label).ok_or_else(|| Error::Format {
            file: label_file.clone(),
            line: g + 1,
            message: format!("graph label {raw_label} is not a known class"),
        })?;
        let graph = Graph::new(feats, edges_of[g].iter().copied(), Some(label))?.with_node_tags(tags)?;
        graphs.push(graph);
    }
    GraphDataset::new(raw.name, graphs, schema)
}

/// Writes `dataset` as TU flat files named after the last component of `dir`.
/// Edges are written in both directions, as in the public benchmark files.
/// Unlabeled graphs cannot be written.
pub fn write_tud_dataset<T: Scalar>(dataset: &GraphDataset<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let name = dataset_name(dir)?;
    let schema = &dataset.schema;
    let onehot = schema.node_label_values.len();

    let (mut a, mut ind, mut gl, mut nl, mut na) =
        (String::new(), String::new(), String::new(), String::new(), String::new());
    let mut offset = 0usize;
    for (gi, g) in dataset.graphs.iter().enumerate() {
        let label = g
            .label()
            .ok_or_else(|| Error::Argument(format!("graph {gi} is unlabeled and cannot be written")))?;
        writeln!(gl, "{}", schema.class_values[label]).expect("string write");
        for &(u, v) in g.edges() {
            writeln!(a, "{}, {}", offset + u + 1, offset + v + 1).expect("string write");
            writeln!(a, "{}, {}", offset + v + 1, offset + u + 1).expect("string write");
        }
        let feats = g.node_features();
        for i in 0..g.node_count() {
            writeln!(ind, "{}", gi + 1).expect("string write");
            let tag = match g.node_tags() {
                Some(tags) => tags[i],
                None => {
                    let col = (0..onehot).find(|&c| feats[(i, c)] == T::one()).ok_or_else(|| {
                        Error::Argument(format!("graph {gi} node {i} has no node label"))
                    })?;
                    schema.node_label_values[col]
                }
            };
            writeln!(nl, "{tag}").expect("string write");
            if schema.attribute_dim > 0 {
                let row: Vec<String> = (0..schema.attribute_dim)
                    .map(|k| format!("{:?}", feats[(i, onehot + k)].as_f64()))
                    .collect();
                writeln!(na, "{}", row.join(", ")).expect("string write");
            }
        }
        offset += g.node_count();
    }
    let write = |suffix: &str, body: &str| -> Result<()> {
        fs::write(dir.join(format!("{name}_{suffix}.txt")), body)?;
        Ok(())
    };
    write("A", &a)?;
    write("graph_indicator", &ind)?;
    write("graph_labels", &gl)?;
    write("node_labels", &nl)?;
    if schema.attribute_dim > 0 {
        write("node_attributes", &na)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn write_fixture(root: &Path) -> PathBuf {
        let dir = root.join("TOY");
        fs::create_dir_all(&dir).unwrap();
        // graph 1: triangle on nodes 1..3; graph 2: single edge on nodes 4..5
        fs::write(dir.join("TOY_A.txt"), "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n").unwrap();
        fs::write(dir.join("TOY_graph_indicator.txt"), "1\n1\n1\n2\n2\n").unwrap();
        fs::write(dir.join("TOY_graph_labels.txt"), "1\n-1\n").unwrap();
        fs::write(dir.join("TOY_node_labels.txt"), "0\n2\n0\n2\n5\n").unwrap();
        dir
    }

    #[test]
    fn loads_minimal_fixture() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_fixture(tmp.path());
        let ds: GraphDataset<f64> = load_tud_dataset(&dir).unwrap();
        assert_eq!(ds.name, "TOY");
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes(), 2);
        // -1 -> 0, 1 -> 1
        assert_eq!(ds.labels(), vec![Some(1), Some(0)]);
        assert_eq!(ds.graphs[0].edge_count(), 3);
        assert_eq!(ds.graphs[1].edge_count(), 1);
        assert_eq!(ds.feature_dim(), 3);
        assert_eq!(ds.graphs[1].node_features().row(1), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn attributes_follow_one_hot_block() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_fixture(tmp.path());
        fs::write(dir.join("TOY_node_attributes.txt"), "0.5, 1\n1, 2\n2, 3\n3, 4\n4, 5.25\n").unwrap();
        let ds: GraphDataset<f64> = load_tud_dataset(&dir).unwrap();
        assert_eq!(ds.feature_dim(), 5);
        assert_eq!(ds.graphs[1].node_features().row(1), &[0.0, 0.0, 1.0, 4.0, 5.25]);
    }

    #[test]
    fn missing_file_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_fixture(tmp.path());
        fs::remove_file(dir.join("TOY_node_labels.txt")).unwrap();
        let err = load_tud_dataset::<f64>(&dir).unwrap_err();
        assert!(err.to_string().contains("TOY_node_labels.txt"), "{err}");
    }

    #[test]
    fn dangling_node_reports_line() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_fixture(tmp.path());
        fs::write(dir.join("TOY_A.txt"), "1, 2\n2, 9\n").unwrap();
        match load_tud_dataset::<f64>(&dir).unwrap_err() {
            Error::Format { file, line, .. } => {
                assert_eq!(file, "TOY_A.txt");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn write_then_reload_is_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_fixture(tmp.path());
        fs::write(dir.join("TOY_node_attributes.txt"), "0.1, 1\n1, 2\n2, 3\n3, 4\n4, 5.25\n").unwrap();
        let ds: GraphDataset<f64> = load_tud_dataset(&dir).unwrap();
        let out = tmp.path().join("out").join("TOY");
        write_tud_dataset(&ds, &out).unwrap();
        let again: GraphDataset<f64> = load_tud_dataset(&out).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn schema_maps_unknown_labels_to_zero() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_fixture(tmp.path());
        let schema = FeatureSchema {
            node_label_values: vec![0, 2],
            attribute_dim: 0,
            class_values: vec![-1, 1],
        };
        let ds: GraphDataset<f64> = load_tud_dataset_with_schema(&dir, &schema).unwrap();
        assert_eq!(ds.graphs[1].node_features().row(1), &[0.0, 0.0]);
        let bad = FeatureSchema {
            class_values: vec![1, 2],
            ..schema
        };
        assert!(load_tud_dataset_with_schema::<f64>(&dir, &bad).is_err());
    }
}
