#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sfgda_core::align::{
    discriminator_objective_on_tape, extract_on_tape, extractor_objective_on_tape, invariant_loss_on_tape,
    EdgeRelaxation,
};
use sfgda_core::autodiff::{Tape, Var};
use sfgda_core::data::{FeatureSchema, Graph, GraphBatch, GraphDataset};
use sfgda_core::encoder::{encode_on_tape, EncoderParams, EncoderVars, Mlp, MlpVars};
use sfgda_core::matrix::Matrix;
use sfgda_core::seriation::SimilarityMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random Robinson similarity matrix: a sum of weighted interval blocks plus a
/// decaying band, so every row is non-increasing away from the diagonal.
pub fn robinson(n: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let gamma = rng.gen_range(0.2..1.5);
    let mut s = Matrix::from_fn(n, n, |i, j| 0.3 * (-gamma * (i as f64 - j as f64).abs()).exp());
    for _ in 0..rng.gen_range(1..=n) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(a..n);
        let w = rng.gen_range(0.05..1.0);
        for i in a..=b {
            for j in a..=b {
                s[(i, j)] += w;
            }
        }
    }
    s
}

pub fn permute(s: &Matrix<f64>, perm: &[usize]) -> Matrix<f64> {
    Matrix::from_fn(s.rows(), s.cols(), |i, j| s[(perm[i], perm[j])])
}

pub fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn banded(n: usize, beta: f64) -> SimilarityMatrix<f64> {
    SimilarityMatrix(Matrix::from_fn(n, n, |i, j| (-beta * (i as f64 - j as f64).abs()).exp()))
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Symmetric zero-diagonal Gaussian matrix rescaled to Frobenius norm `norm`.
pub fn symmetric_perturbation(n: usize, norm: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let x = normal(rng);
            d[(i, j)] = x;
            d[(j, i)] = x;
        }
    }
    let f = d.frobenius_norm();
    d.scale(norm / f)
}

/// Silhouette computed straight from its definition, one point at a time.
pub fn silhouette_reference(d: &Matrix<f64>, labels: &[usize]) -> Vec<f64> {
    let n = labels.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![0.0; n];
    for i in 0..n {
        let own = labels[i];
        let mates: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == own).collect();
        if mates.is_empty() {
            continue;
        }
        let a = mates.iter().map(|&j| d[(i, j)]).sum::<f64>() / mates.len() as f64;
        let mut b = f64::INFINITY;
        for c in (0..k).filter(|&c| c != own) {
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            if members.is_empty() {
                continue;
            }
            let m = members.iter().map(|&j| d[(i, j)]).sum::<f64>() / members.len() as f64;
            b = b.min(m);
        }
        let denom = a.max(b);
        out[i] = if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    out
}

/// Small random graphs with dense float features.
pub fn toy_dataset(graphs: usize, features: usize, seed: u64) -> GraphDataset<f64> {
    let mut r = rng(seed);
    let list = (0..graphs)
        .map(|i| {
            let n = r.gen_range(3..7);
            let x = Matrix::from_fn(n, features, |_, _| r.gen_range(-1.0..1.0));
            let mut edges: Vec<(usize, usize)> = (1..n).map(|u| (r.gen_range(0..u), u)).collect();
            edges.push((0, n - 1));
            Graph::new(x, edges, Some(i % 2)).unwrap()
        })
        .collect();
    GraphDataset::new("toy", list, FeatureSchema::plain(features, 2)).unwrap()
}

/// Parameters of every trainable module, flattened in a fixed order.
#[derive(Clone)]
pub struct ToyParams {
    pub encoder: EncoderParams<f64>,
    pub extractor: Mlp<f64>,
    pub discriminator: Mlp<f64>,
}

pub struct ToyVars {
    pub encoder: EncoderVars,
    pub extractor: MlpVars,
    pub discriminator: MlpVars,
}

impl ToyParams {
    pub fn new(features: usize, hidden: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let mut encoder = EncoderParams::new(features, hidden, 2, 2, &mut r);
        let mut extractor = Mlp::new(2 * hidden, hidden, 1, &mut r);
        let mut discriminator = Mlp::new(hidden, hidden, 1, &mut r);
        // Nonzero biases so their gradients are exercised too.
        for m in encoder
            .named_mut()
            .into_iter()
            .map(|(_, m)| m)
            .chain(extractor.named_mut("x").into_iter().map(|(_, m)| m))
            .chain(discriminator.named_mut("d").into_iter().map(|(_, m)| m))
        {
            for v in m.data_mut() {
                if *v == 0.0 {
                    *v = r.gen_range(-0.3..0.3);
                }
            }
        }
        Self {
            encoder,
            extractor,
            discriminator,
        }
    }

    pub fn bind(&self, tape: &mut Tape<f64>) -> ToyVars {
        ToyVars {
            encoder: self.encoder.bind(tape, true),
            extractor: self.extractor.bind(tape, true),
            discriminator: self.discriminator.bind(tape, true),
        }
    }

    /// `(group, tensor)` pairs in binding order.
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix<f64>)> {
        let mut out: Vec<(&'static str, &mut Matrix<f64>)> =
            self.encoder.named_mut().into_iter().map(|(_, m)| ("encoder", m)).collect();
        out.extend(self.extractor.named_mut("x").into_iter().map(|(_, m)| ("extractor", m)));
        out.extend(self.discriminator.named_mut("d").into_iter().map(|(_, m)| ("discriminator", m)));
        out
    }
}

impl ToyVars {
    pub fn all(&self) -> Vec<(&'static str, Var)> {
        let mut out: Vec<(&'static str, Var)> = self.encoder.all().into_iter().map(|v| ("encoder", v)).collect();
        out.extend(self.extractor.all().into_iter().map(|v| ("extractor", v)));
        out.extend(self.discriminator.all().into_iter().map(|v| ("discriminator", v)));
        out
    }
}

/// A loss built on a fresh tape from bound parameters.
pub type LossFn = fn(&mut Tape<f64>, &ToyVars, &ToyProblem) -> Var;

pub struct ToyProblem {
    pub batch: GraphBatch<f64>,
    pub labels: Vec<usize>,
    pub noise: Vec<f64>,
    pub real: Matrix<f64>,
    pub temperature: f64,
}

impl ToyProblem {
    pub fn new(graphs: usize, features: usize, hidden: usize, seed: u64) -> Self {
        let ds = toy_dataset(graphs, features, seed);
        let members: Vec<usize> = (0..graphs).collect();
        let batch = ds.batch(&members);
        let mut r = rng(seed ^ 0xABCD);
        let noise = (0..batch.edges.edges.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let real = Matrix::from_fn(graphs, hidden, |_, _| r.gen_range(-1.0..1.0));
        Self {
            labels: ds.labels().into_iter().map(|l| l.unwrap()).collect(),
            batch,
            noise,
            real,
            temperature: 0.5,
        }
    }
}

pub fn supervised(tape: &mut Tape<f64>, v: &ToyVars, p: &ToyProblem) -> Var {
    let enc = encode_on_tape(tape, &v.encoder, &p.batch, None, None);
    let lp = tape.log_softmax(enc.logits);
    let picked = tape.pick_per_row(lp, &p.labels);
    let m = tape.mean(picked);
    tape.scale(m, -1.0)
}

fn extracted(tape: &mut Tape<f64>, v: &ToyVars, p: &ToyProblem) -> (Var, Var, Var) {
    let enc = encode_on_tape(tape, &v.encoder, &p.batch, None, None);
    let ex = extract_on_tape(
        tape,
        &v.encoder,
        &v.extractor,
        &p.batch,
        enc.nodes,
        &p.noise,
        p.temperature,
        EdgeRelaxation::Soft,
        None,
    )
    .unwrap();
    (enc.logits, ex.class_logits, ex.graphs)
}

pub fn invariant(tape: &mut Tape<f64>, v: &ToyVars, p: &ToyProblem) -> Var {
    let (logits, sub, _) = extracted(tape, v, p);
    invariant_loss_on_tape(tape, sub, logits)
}

pub fn adversarial_extractor(tape: &mut Tape<f64>, v: &ToyVars, p: &ToyProblem) -> Var {
    let (_, _, fake) = extracted(tape, v, p);
    extractor_objective_on_tape(tape, &v.discriminator, fake, false)
}

pub fn adversarial_extractor_non_saturating(tape: &mut Tape<f64>, v: &ToyVars, p: &ToyProblem) -> Var {
    let (_, _, fake) = extracted(tape, v, p);
    extractor_objective_on_tape(tape, &v.discriminator, fake, true)
}

pub fn discriminator(tape: &mut Tape<f64>, v: &ToyVars, p: &ToyProblem) -> Var {
    let (_, _, fake) = extracted(tape, v, p);
    let real = tape.constant(p.real.clone());
    discriminator_objective_on_tape(tape, &v.discriminator, real, fake)
}

pub fn pseudo_label(tape: &mut Tape<f64>, v: &ToyVars, p: &ToyProblem) -> Var {
    use sfgda_core::pseudolabel::{pseudo_label_loss_on_tape, unfiltered, PseudoLabelNorm};
    let enc = encode_on_tape(tape, &v.encoder, &p.batch, None, None);
    let probs = sfgda_core::autodiff::softmax_rows(tape.value(enc.logits));
    let set = unfiltered(&sfgda_core::encoder::LabelDistribution(probs));
    pseudo_label_loss_on_tape(tape, enc.logits, &set, PseudoLabelNorm::Confident).unwrap()
}

pub const LOSSES: [(&str, LossFn); 6] = [
    ("supervised", supervised),
    ("pseudo-label", pseudo_label),
    ("invariant", invariant),
    ("extractor adversarial", adversarial_extractor),
    ("extractor adversarial (non-saturating)", adversarial_extractor_non_saturating),
    ("discriminator", discriminator),
];

fn loss_value(params: &ToyParams, problem: &ToyProblem, f: LossFn) -> f64 {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let l = f(&mut tape, &vars, problem);
    tape.scalar(l)
}

/// Largest relative error per parameter group between tape gradients and
/// central differences: `max |g - fd| / max(max |g|, max |fd|)`.
pub fn gradient_errors(params: &ToyParams, problem: &ToyProblem, f: LossFn) -> Vec<(&'static str, f64)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let loss = f(&mut tape, &vars, problem);
    let grads = tape.backward(loss);
    let analytic: Vec<(&'static str, Matrix<f64>)> = vars
        .all()
        .into_iter()
        .map(|(g, v)| {
            let (r, c) = tape.value(v).shape();
            (g, grads.get_or_zeros(v, r, c))
        })
        .collect();

    let h = 1e-6;
    let mut numeric: Vec<Vec<f64>> = Vec::new();
    let count = params.clone().tensors_mut().len();
    for t in 0..count {
        let len = analytic[t].1.data().len();
        let mut col = Vec::with_capacity(len);
        for e in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t].1.data_mut()[e] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].1.data_mut()[e] -= h;
            col.push((loss_value(&plus, problem, f) - loss_value(&minus, problem, f)) / (2.0 * h));
        }
        numeric.push(col);
    }

    let mut out = Vec::new();
    for group in ["encoder", "extractor", "discriminator"] {
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for (t, (g, a)) in analytic.iter().enumerate() {
            if *g != group {
                continue;
            }
            for (x, y) in a.data().iter().zip(&numeric[t]) {
                diff = diff.max((x - y).abs());
                scale = scale.max(x.abs()).max(y.abs());
            }
        }
        let err = if scale < 1e-9 { diff } else { diff / scale };
        out.push((group, err));
    }
    out
}

/// One descent-direction trial for the ranking loss on a random 6-graph batch
/// of embeddings, with the seriation ranking of the unperturbed batch held
/// fixed. Steps along the negative blackbox gradient with growing length until
/// the loss changes; the trial succeeds when that first change is a decrease.
/// Returns `None` for a zero gradient or if no step up to length 2 moves the loss.
pub fn ssr_descent_trial(seed: u64) -> Option<bool> {
    use sfgda_core::seriation::{similarity_matrix, ssr_loss, ssr_loss_value};
    let mut r = rng(seed);
    let z: Matrix<f64> = Matrix::from_fn(6, 4, |_, _| r.gen_range(-1.0..1.0));
    let out = ssr_loss(&z, 1.0).unwrap();
    let gn = out.grad_embeddings.frobenius_norm();
    if gn == 0.0 {
        return None;
    }
    let dir = out.grad_embeddings.scale(-1.0 / gn);
    let mut step = 1e-4;
    while step <= 2.0 {
        let moved = z.add(&dir.scale(step));
        let l = ssr_loss_value(&similarity_matrix(&moved).unwrap(), &out.ranking).unwrap();
        if (l - out.loss).abs() > 1e-12 {
            return Some(l < out.loss);
        }
        step *= 1.2;
    }
    None
}
