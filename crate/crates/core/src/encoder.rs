//! Graph convolutional classifier: message passing, mean readout and a softmax head.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax_rows, EdgeList, Tape, Var};
use crate::data::GraphBatch;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Fully connected layer `x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Scalar> Linear<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weight: Matrix::from_fn(inputs, outputs, |_, _| T::of(rng.gen_range(-limit..limit))),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(inputs, outputs),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> LinearVars {
        let (w, b) = if trainable {
            (tape.param(self.weight.clone()), tape.param(self.bias.clone()))
        } else {
            (tape.constant(self.weight.clone()), tape.constant(self.bias.clone()))
        };
        LinearVars { w, b }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl LinearVars {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let xw = tape.matmul(x, self.w);
        tape.add_row(xw, self.b)
    }
}

/// Two-layer perceptron with a rectifier between the layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            hidden: Linear::glorot(inputs, hidden, rng),
            output: Linear::glorot(hidden, outputs, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> MlpVars {
        MlpVars {
            hidden: self.hidden.bind(tape, trainable),
            output: self.output.bind(tape, trainable),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Matrix<T>)> {
        vec![
            (format!("{prefix}.hidden.weight"), &self.hidden.weight),
            (format!("{prefix}.hidden.bias"), &self.hidden.bias),
            (format!("{prefix}.output.weight"), &self.output.weight),
            (format!("{prefix}.output.bias"), &self.output.bias),
        ]
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Matrix<T>)> {
        vec![
            (format!("{prefix}.hidden.weight"), &mut self.hidden.weight),
            (format!("{prefix}.hidden.bias"), &mut self.hidden.bias),
            (format!("{prefix}.output.weight"), &mut self.output.weight),
            (format!("{prefix}.output.bias"), &mut self.output.bias),
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub hidden: LinearVars,
    pub output: LinearVars,
}

impl MlpVars {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let h = self.hidden.apply(tape, x);
        let h = tape.relu(h);
        self.output.apply(tape, h)
    }

    pub fn all(&self) -> Vec<Var> {
        vec![self.hidden.w, self.hidden.b, self.output.w, self.output.b]
    }
}

/// Convolution layers `d_f -> hidden -> ... -> hidden` and a linear head to `C` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub convs: Vec<Linear<T>>,
    pub head: Linear<T>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn new(
        feature_dim: usize,
        hidden: usize,
        layers: usize,
        num_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(layers >= 1, "encoder needs at least one layer");
        let mut convs = Vec::with_capacity(layers);
        let mut width = feature_dim;
        for _ in 0..layers {
            convs.push(Linear::glorot(width, hidden, rng));
            width = hidden;
        }
        Self {
            convs,
            head: Linear::glorot(hidden, num_classes, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.convs[0].inputs()
    }

    pub fn hidden_dim(&self) -> usize {
        self.head.inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.head.outputs()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> EncoderVars {
        EncoderVars {
            convs: self.convs.iter().map(|l| l.bind(tape, trainable)).collect(),
            head: self.head.bind(tape, trainable),
        }
    }

    pub fn named(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.convs.iter().enumerate() {
            out.push((format!("encoder.conv{i}.weight"), &l.weight));
            out.push((format!("encoder.conv{i}.bias"), &l.bias));
        }
        out.push(("encoder.head.weight".into(), &self.head.weight));
        out.push(("encoder.head.bias".into(), &self.head.bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.convs.iter_mut().enumerate() {
            out.push((format!("encoder.conv{i}.weight"), &mut l.weight));
            out.push((format!("encoder.conv{i}.bias"), &mut l.bias));
        }
        out.push(("encoder.head.weight".into(), &mut self.head.weight));
        out.push(("encoder.head.bias".into(), &mut self.head.bias));
        out
    }
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub convs: Vec<LinearVars>,
    pub head: LinearVars,
}

impl EncoderVars {
    /// Same order as [`EncoderParams::named`].
    pub fn all(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.convs.iter().flat_map(|l| [l.w, l.b]).collect();
        out.extend([self.head.w, self.head.b]);
        out
    }
}

/// Inverted dropout applied to hidden activations during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Message passing on the tape. `edge_weights` is an `edges x 1` column.
pub fn message_pass_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &EncoderVars,
    features: Var,
    edges: Rc<EdgeList>,
    edge_weights: Var,
    mut dropout: Option<Dropout<'_>>,
) -> Var {
    let mut h = features;
    let last = vars.convs.len() - 1;
    for (i, layer) in vars.convs.iter().enumerate() {
        let hw = tape.matmul(h, layer.w);
        let agg = tape.propagate(hw, edge_weights, edges.clone());
        h = tape.add_row(agg, layer.b);
        if i < last {
            h = tape.relu(h);
            if let Some(d) = dropout.as_mut() {
                if d.rate > 0.0 {
                    let (r, c) = tape.value(h).shape();
                    let keep = 1.0 - d.rate;
                    let mask = Matrix::from_fn(r, c, |_, _| {
                        if d.rng.gen::<f64>() < keep {
                            T::of(1.0 / keep)
                        } else {
                            T::zero()
                        }
                    });
                    let m = tape.constant(mask);
                    h = tape.mul(h, m);
                }
            }
        }
    }
    h
}

/// Node, graph and logit variables of one encoder pass over a batch.
#[derive(Clone, Copy, Debug)]
pub struct EncodedBatch {
    pub nodes: Var,
    pub graphs: Var,
    pub logits: Var,
}

/// Full forward pass (message passing, mean readout, head) on the tape.
pub fn encode_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &EncoderVars,
    batch: &GraphBatch<T>,
    edge_weights: Option<Var>,
    dropout: Option<Dropout<'_>>,
) -> EncodedBatch {
    let x = tape.constant(batch.features.clone());
    let w = edge_weights
        .unwrap_or_else(|| tape.constant(Matrix::filled(batch.edges.edges.len(), 1, T::one())));
    let nodes = message_pass_on_tape(tape, vars, x, batch.edges.clone(), w, dropout);
    let graphs = tape.segment_mean(nodes, &batch.membership, batch.len());
    let logits = vars.head.apply(tape, graphs);
    EncodedBatch {
        nodes,
        graphs,
        logits,
    }
}

/// Final-layer node embeddings of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings<T> {
    pub values: Matrix<T>,
    pub layers: usize,
}

/// One pooled embedding per batch member.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEmbedding<T>(pub Matrix<T>);

/// Row-stochastic class probabilities, one row per graph.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelDistribution<T>(pub Matrix<T>);

impl<T: Scalar> LabelDistribution<T> {
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.0.rows()).map(|r| argmax(self.0.row(r))).collect()
    }
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_features<T: Scalar>(batch: &GraphBatch<T>, params: &EncoderParams<T>) -> Result<()> {
    if batch.features.cols() != params.feature_dim() {
        return Err(Error::Config(format!(
            "batch has {} node features but the encoder expects {}",
            batch.features.cols(),
            params.feature_dim()
        )));
    }
    Ok(())
}

/// Symmetric-normalized graph convolutions with self-loops; rectifier between layers.
pub fn message_pass<T: Scalar>(batch: &GraphBatch<T>, params: &EncoderParams<T>) -> Result<NodeEmbeddings<T>> {
    check_features(batch, params)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let x = tape.constant(batch.features.clone());
    let w = tape.constant(Matrix::filled(batch.edges.edges.len(), 1, T::one()));
    let h = message_pass_on_tape(&mut tape, &vars, x, batch.edges.clone(), w, None);
    Ok(NodeEmbeddings {
        values: tape.value(h).clone(),
        layers: params.convs.len(),
    })
}

/// Per-graph mean of node embeddings.
pub fn readout<T: Scalar>(nodes: &NodeEmbeddings<T>, batch: &GraphBatch<T>) -> Result<GraphEmbedding<T>> {
    if nodes.values.rows() != batch.node_count() {
        return Err(Error::Config(format!(
            "{} node embeddings for a batch of {} nodes",
            nodes.values.rows(),
            batch.node_count()
        )));
    }
    let mut tape = Tape::new();
    let h = tape.constant(nodes.values.clone());
    let z = tape.segment_mean(h, &batch.membership, batch.len());
    Ok(GraphEmbedding(tape.value(z).clone()))
}

/// Linear head followed by a row softmax.
pub fn classify<T: Scalar>(z: &GraphEmbedding<T>, params: &EncoderParams<T>) -> Result<LabelDistribution<T>> {
    if z.0.cols() != params.head.inputs() {
        return Err(Error::Config(format!(
            "embedding width {} but the head expects {}",
            z.0.cols(),
            params.head.inputs()
        )));
    }
    let logits = z.0.matmul(&params.head.weight);
    let mut with_bias = logits;
    for r in 0..with_bias.rows() {
        for (o, &b) in with_bias.row_mut(r).iter_mut().zip(params.head.bias.row(0)) {
            *o += b;
        }
    }
    Ok(LabelDistribution(softmax_rows(&with_bias)))
}

/// Embeddings and class probabilities for a batch, without recording gradients.
pub fn predict<T: Scalar>(
    batch: &GraphBatch<T>,
    params: &EncoderParams<T>,
) -> Result<(GraphEmbedding<T>, LabelDistribution<T>)> {
    let nodes = message_pass(batch, params)?;
    let z = readout(&nodes, batch)?;
    let p = classify(&z, params)?;
    Ok((z, p))
}
