//! Subgraph extraction with Gumbel-Sigmoid edge sampling, a domain
//! discriminator and the KL consistency term between a graph and its subgraph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{sigmoid, Tape, Var};
use crate::data::{Graph, GraphBatch};
use crate::encoder::{encode_on_tape, Dropout, EncoderVars, LabelDistribution, Mlp, MlpVars, NodeEmbeddings};
use crate::error::{arg, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Floor inside the logarithms of the KL term.
pub const KL_FLOOR: f64 = 1e-12;

/// Edge scorer `[h_u ; h_v] -> logit`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorParams<T>(pub Mlp<T>);

impl<T: Scalar> ExtractorParams<T> {
    pub fn new(embedding_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self(Mlp::new(2 * embedding_dim, hidden, 1, rng))
    }
}

/// Domain discriminator on pooled graph embeddings; outputs a logit.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<T>(pub Mlp<T>);

impl<T: Scalar> DiscriminatorParams<T> {
    pub fn new(embedding_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self(Mlp::new(embedding_dim, hidden, 1, rng))
    }

    /// `D(z)` in `(0, 1)` for every row of `z`.
    pub fn probability(&self, z: &Matrix<T>) -> Vec<T> {
        let mut tape = Tape::new();
        let vars = self.0.bind(&mut tape, false);
        let x = tape.constant(z.clone());
        let l = vars.apply(&mut tape, x);
        tape.value(l).data().iter().map(|&v| sigmoid(v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLogits<T>(pub Vec<T>);

/// Hard keep mask and relaxed keep probability per undirected edge.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledAdjacency<T> {
    pub hard: Vec<bool>,
    pub soft: Vec<T>,
}

/// Symmetrized edge logits on the tape, one row per edge of `edges`.
pub fn edge_logits_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    extractor: &MlpVars,
    nodes: Var,
    edges: &[(usize, usize)],
) -> Var {
    let us: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let vs: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let hu = tape.gather_rows(nodes, &us);
    let hv = tape.gather_rows(nodes, &vs);
    let uv = tape.concat_cols(hu, hv);
    let vu = tape.concat_cols(hv, hu);
    let a = extractor.apply(tape, uv);
    let b = extractor.apply(tape, vu);
    let s = tape.add(a, b);
    tape.scale(s, T::of(0.5))
}

pub fn edge_logits<T: Scalar>(
    graph: &Graph<T>,
    nodes: &NodeEmbeddings<T>,
    extractor: &ExtractorParams<T>,
) -> Result<EdgeLogits<T>> {
    if nodes.values.rows() != graph.node_count() {
        return Err(arg(format!(
            "{} node embeddings for a graph of {} nodes",
            nodes.values.rows(),
            graph.node_count()
        )));
    }
    if nodes.values.cols() * 2 != extractor.0.hidden.inputs() {
        return Err(arg("embedding width does not match the extractor"));
    }
    if graph.edge_count() == 0 {
        return Ok(EdgeLogits(Vec::new()));
    }
    let mut tape = Tape::new();
    let vars = extractor.0.bind(&mut tape, false);
    let h = tape.constant(nodes.values.clone());
    let l = edge_logits_on_tape(&mut tape, &vars, h, graph.edges());
    Ok(EdgeLogits(tape.value(l).data().to_vec()))
}

/// Difference of two independent standard Gumbel draws (standard logistic).
pub fn gumbel_difference<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    let mut gumbel = || {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        -(-u.ln()).ln()
    };
    let g1 = gumbel();
    let g2 = gumbel();
    T::of(g1 - g2)
}

pub fn gumbel_noise<T: Scalar>(count: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    (0..count).map(|_| gumbel_difference(rng)).collect()
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(arg(format!("Gumbel-Sigmoid temperature must be positive, got {temperature}")))
    }
}

/// `sigmoid((l + g1 - g2) / temperature)` with the Gumbel pair given as its difference.
pub fn gumbel_sigmoid_with_noise<T: Scalar>(
    logits: &EdgeLogits<T>,
    noise: &[T],
    temperature: f64,
) -> Result<SampledAdjacency<T>> {
    check_temperature(temperature)?;
    if noise.len() != logits.0.len() {
        return Err(arg("one noise value per edge logit required"));
    }
    let t = T::of(temperature);
    let soft: Vec<T> = logits.0.iter().zip(noise).map(|(&l, &g)| sigmoid((l + g) / t)).collect();
    let half = T::of(0.5);
    let hard = soft.iter().map(|&s| s > half).collect();
    Ok(SampledAdjacency { hard, soft })
}

pub fn gumbel_sigmoid_sample<T: Scalar>(
    logits: &EdgeLogits<T>,
    temperature: f64,
    seed: u64,
) -> Result<SampledAdjacency<T>> {
    check_temperature(temperature)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = gumbel_noise(logits.0.len(), &mut rng);
    gumbel_sigmoid_with_noise(logits, &noise, temperature)
}

/// Keeps the masked-in edges. A graph whose edges are all dropped keeps the
/// single edge with the highest soft probability.
pub fn extract_subgraph<T: Scalar>(graph: &Graph<T>, mask: &SampledAdjacency<T>) -> Result<Graph<T>> {
    if mask.hard.len() != graph.edge_count() || mask.soft.len() != graph.edge_count() {
        return Err(arg("mask is not aligned with the edge list"));
    }
    let mut keep = mask.hard.clone();
    guard_empty(&mut keep, &mask.soft, 0..mask.hard.len());
    Ok(graph.with_edge_subset(&keep))
}

fn guard_empty<T: Scalar>(keep: &mut [bool], soft: &[T], range: std::ops::Range<usize>) {
    if range.is_empty() || keep[range.clone()].iter().any(|&k| k) {
        return;
    }
    let mut best = range.start;
    for e in range {
        if soft[e] > soft[best] {
            best = e;
        }
    }
    keep[best] = true;
}

/// How sampled edges weight the subgraph convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeRelaxation {
    /// Hard mask forward, soft gradient backward.
    StraightThrough,
    /// Soft probabilities in both passes.
    Soft,
}

/// Tape variables of one extraction pass over a batch.
#[derive(Clone, Debug)]
pub struct ExtractedBatch {
    pub logits: Var,
    pub soft: Var,
    pub weights: Var,
    pub hard: Vec<bool>,
    pub graphs: Var,
    pub class_logits: Var,
}

/// Scores the batch edges from `nodes` (node embeddings aligned with
/// `batch`), samples a subgraph per member and re-encodes it with the sampled
/// edge weights.
#[allow(clippy::too_many_arguments)]
pub fn extract_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    encoder: &EncoderVars,
    extractor: &MlpVars,
    batch: &GraphBatch<T>,
    nodes: Var,
    noise: &[T],
    temperature: f64,
    relaxation: EdgeRelaxation,
    dropout: Option<Dropout<'_>>,
) -> Result<ExtractedBatch> {
    check_temperature(temperature)?;
    let edges = &batch.edges.edges;
    if noise.len() != edges.len() {
        return Err(arg("one noise value per batch edge required"));
    }
    let (logits, soft, weights, hard) = if edges.is_empty() {
        let empty = tape.constant(Matrix::zeros(0, 1));
        (empty, empty, empty, Vec::new())
    } else {
        let logits = edge_logits_on_tape(tape, extractor, nodes, edges);
        let g = tape.constant(Matrix::from_vec(noise.len(), 1, noise.to_vec()));
        let shifted = tape.add(logits, g);
        let scaled = tape.scale(shifted, T::of(1.0 / temperature));
        let soft = tape.sigmoid(scaled);
        let soft_values = tape.value(soft).data().to_vec();
        let half = T::of(0.5);
        let mut hard: Vec<bool> = soft_values.iter().map(|&s| s > half).collect();
        let mut start = 0;
        while start < edges.len() {
            let owner = batch.membership[edges[start].0];
            let mut end = start;
            while end < edges.len() && batch.membership[edges[end].0] == owner {
                end += 1;
            }
            guard_empty(&mut hard, &soft_values, start..end);
            start = end;
        }
        let weights = match relaxation {
            EdgeRelaxation::Soft => soft,
            EdgeRelaxation::StraightThrough => {
                let frozen = tape.detach(soft);
                let delta = tape.sub(soft, frozen);
                let mask = Matrix::from_fn(hard.len(), 1, |r, _| if hard[r] { T::one() } else { T::zero() });
                let h = tape.constant(mask);
                tape.add(delta, h)
            }
        };
        (logits, soft, weights, hard)
    };
    let encoded = encode_on_tape(tape, encoder, batch, Some(weights), dropout);
    Ok(ExtractedBatch {
        logits,
        soft,
        weights,
        hard,
        graphs: encoded.graphs,
        class_logits: encoded.logits,
    })
}

/// Discriminator and extractor objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialObjectives<T> {
    /// `E[log d_h] + E[log(1 - d_f)]`, ascended by the discriminator.
    pub discriminator: T,
    /// `E[log(1 - d_f)]` (or `-E[log d_f]` when non-saturating), descended by the extractor.
    pub extractor: T,
}

fn mean<T: Scalar>(v: impl Iterator<Item = T>) -> T {
    let mut n = 0usize;
    let mut s = T::zero();
    for x in v {
        s += x;
        n += 1;
    }
    s / T::of_usize(n)
}

/// Objectives from discriminator probabilities on harmonic (`d_h`) and extracted (`d_f`) graphs.
pub fn adversarial_loss<T: Scalar>(d_h: &[T], d_f: &[T], non_saturating: bool) -> Result<AdversarialObjectives<T>> {
    if d_h.is_empty() || d_f.is_empty() {
        return Err(arg("adversarial loss needs harmonic and extracted samples"));
    }
    let real = mean(d_h.iter().map(|&d| d.ln()));
    let fake = mean(d_f.iter().map(|&d| (T::one() - d).ln()));
    let extractor = if non_saturating {
        -mean(d_f.iter().map(|&d| d.ln()))
    } else {
        fake
    };
    Ok(AdversarialObjectives {
        discriminator: real + fake,
        extractor,
    })
}

/// Discriminator objective on the tape, from real and fake embedding variables.
pub fn discriminator_objective_on_tape<T: Scalar>(tape: &mut Tape<T>, d: &MlpVars, real: Var, fake: Var) -> Var {
    let lr = d.apply(tape, real);
    let lf = d.apply(tape, fake);
    let log_real = tape.log_sigmoid(lr);
    let neg = tape.scale(lf, -T::one());
    let log_not_fake = tape.log_sigmoid(neg);
    let a = tape.mean(log_real);
    let b = tape.mean(log_not_fake);
    tape.add(a, b)
}

/// Extractor objective on the tape (to be minimized).
pub fn extractor_objective_on_tape<T: Scalar>(tape: &mut Tape<T>, d: &MlpVars, fake: Var, non_saturating: bool) -> Var {
    let lf = d.apply(tape, fake);
    if non_saturating {
        let l = tape.log_sigmoid(lf);
        let m = tape.mean(l);
        tape.scale(m, -T::one())
    } else {
        let neg = tape.scale(lf, -T::one());
        let l = tape.log_sigmoid(neg);
        tape.mean(l)
    }
}

/// `KL(p || q)` with the floor applied inside both logarithms.
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> T {
    let floor = T::of(KL_FLOOR);
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(floor).ln() - b.max(floor).ln()))
        .sum()
}

/// Mean `KL(p_sub || p)` over the rows.
pub fn invariant_loss<T: Scalar>(p_sub: &LabelDistribution<T>, p: &LabelDistribution<T>) -> Result<T> {
    if p_sub.0.shape() != p.0.shape() || p.0.rows() == 0 {
        return Err(arg("invariant loss needs two nonempty distributions of equal shape"));
    }
    Ok(mean((0..p.0.rows()).map(|r| kl_divergence(p_sub.0.row(r), p.0.row(r)))))
}

/// Mean row KL between the softmax of two logit variables.
pub fn invariant_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, sub_logits: Var, logits: Var) -> Var {
    let floor = T::of(KL_FLOOR);
    let ps = tape.softmax(sub_logits);
    let p = tape.softmax(logits);
    let lps = tape.log_floor(ps, floor);
    let lp = tape.log_floor(p, floor);
    let diff = tape.sub(lps, lp);
    let terms = tape.mul(ps, diff);
    let per_row = tape.row_sum(terms);
    tape.mean(per_row)
}

/// Weighted sum of the extractor-side adversarial term and the invariant term.
pub fn align_loss<T: Scalar>(adversarial: T, invariant: T, adv_weight: f64, inv_weight: f64) -> T {
    T::of(adv_weight) * adversarial + T::of(inv_weight) * invariant
}
