use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{
    discriminator_objective_on_tape, extract_on_tape, extractor_objective_on_tape, gumbel_noise,
    invariant_loss_on_tape, DiscriminatorParams, EdgeRelaxation,
};
use crate::autodiff::{softmax_rows, Tape, Var};
use crate::data::{batch_plan, GraphDataset};
use crate::encoder::{encode_on_tape, Dropout, LabelDistribution};
use crate::error::{Error, Result};
use crate::harmonic::{embed_dataset, partition_harmonic};
use crate::matrix::Matrix;
use crate::optim::Adam;
use crate::pseudolabel::{confident_filter, pseudo_label_loss_on_tape, unfiltered, PseudoLabelNorm};
use crate::scalar::Scalar;
use crate::seriation::{similarity_on_tape, ssr_loss_on_tape};

use super::config::AdaptConfig;
use super::derive_seed;
use super::model::ModelState;
use super::report::{EpochMetrics, MetricsReport};

const PRETRAIN: u64 = 1;
const ADAPT: u64 = 2;
const PARTITION: u64 = 3;
const BATCHES: u64 = 4;
const DROPOUT: u64 = 5;
const NOISE: u64 = 6;

const EVAL_CHUNK: usize = 256;

fn dropout_for(rate: f64, rng: &mut ChaCha8Rng) -> Option<Dropout<'_>> {
    (rate > 0.0).then_some(Dropout { rate, rng })
}

/// Supervised cross-entropy training of a fresh model on the labeled source set.
/// Returns the model and the mean loss of every epoch.
pub fn pretrain<T: Scalar>(source: &GraphDataset<T>, config: &AdaptConfig) -> Result<(ModelState<T>, Vec<f64>)> {
    config.validate()?;
    if !source.is_fully_labeled() {
        return Err(Error::Argument(format!("source dataset `{}` has unlabeled graphs", source.name)));
    }
    if source.len() < 2 {
        return Err(Error::Argument("source dataset needs at least 2 graphs".into()));
    }
    let mut model = ModelState::new(source.schema.clone(), config.clone())?;
    let mut opt = Adam::new(config.learning_rate, config.weight_decay);
    let labels: Vec<usize> = source.labels().into_iter().map(|l| l.expect("checked above")).collect();
    let mut history = Vec::with_capacity(config.pretrain_epochs);
    for epoch in 0..config.pretrain_epochs {
        let plan = batch_plan(source.len(), config.batch_size, derive_seed(config.seed, &[PRETRAIN, BATCHES, epoch as u64]))?;
        let mut total = 0.0;
        for (b, members) in plan.iter().enumerate() {
            let batch = source.batch(members);
            let y: Vec<usize> = members.iter().map(|&i| labels[i]).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[PRETRAIN, DROPOUT, epoch as u64, b as u64]));
            let mut tape = Tape::new();
            let vars = model.encoder.bind(&mut tape, true);
            let enc = encode_on_tape(&mut tape, &vars, &batch, None, dropout_for(config.dropout, &mut rng));
            let lp = tape.log_softmax(enc.logits);
            let picked = tape.pick_per_row(lp, &y);
            let m = tape.mean(picked);
            let loss = tape.scale(m, -T::one());
            total += tape.scalar(loss).as_f64();
            let grads = tape.backward(loss);
            let g: Vec<Matrix<T>> = vars.all().into_iter().map(|v| grad_of(&grads, v, &tape)).collect();
            opt.update(model.encoder.named_mut(), &g);
        }
        let mean = total / plan.len() as f64;
        log::debug!("pretrain epoch {epoch}: loss {mean:.4}");
        history.push(mean);
    }
    model.pretrained = true;
    Ok((model, history))
}

fn grad_of<T: Scalar>(grads: &crate::autodiff::Gradients<T>, v: Var, tape: &Tape<T>) -> Matrix<T> {
    let (r, c) = tape.value(v).shape();
    grads.get_or_zeros(v, r, c)
}

/// Fraction of graphs whose most probable class equals the label.
pub fn evaluate<T: Scalar>(model: &ModelState<T>, dataset: &GraphDataset<T>) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    if !dataset.is_fully_labeled() {
        return Err(Error::Argument(format!("dataset `{}` has unlabeled graphs", dataset.name)));
    }
    check_compatible(model, dataset)?;
    let (_, p) = embed_dataset(dataset, &model.encoder, EVAL_CHUNK)?;
    let hits = p
        .argmax()
        .into_iter()
        .zip(dataset.labels())
        .filter(|(pred, y)| Some(*pred) == *y)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

fn check_compatible<T: Scalar>(model: &ModelState<T>, dataset: &GraphDataset<T>) -> Result<()> {
    if dataset.feature_dim() != model.encoder.feature_dim() {
        return Err(Error::Config(format!(
            "dataset `{}` has {} node features but the model expects {}",
            dataset.name,
            dataset.feature_dim(),
            model.encoder.feature_dim()
        )));
    }
    Ok(())
}

fn discriminator_step<T: Scalar>(
    d: &mut DiscriminatorParams<T>,
    opt: &mut Adam<T>,
    real: Matrix<T>,
    fake: Matrix<T>,
) -> T {
    let mut tape = Tape::new();
    let vars = d.0.bind(&mut tape, true);
    let r = tape.constant(real);
    let f = tape.constant(fake);
    let obj = discriminator_objective_on_tape(&mut tape, &vars, r, f);
    let loss = tape.scale(obj, -T::one());
    let grads = tape.backward(loss);
    let g: Vec<Matrix<T>> = vars.all().into_iter().map(|v| grad_of(&grads, v, &tape)).collect();
    opt.update(d.0.named_mut("discriminator"), &g);
    tape.scalar(obj)
}

#[derive(Default)]
struct Running {
    sum: f64,
    count: usize,
}

impl Running {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

#[derive(Default)]
struct EpochStats {
    ssr: Running,
    sup: Running,
    adv: Running,
    disc: Running,
    inv: Running,
    total: Running,
    confident: usize,
}

/// Adapts a pretrained model to the unlabeled target set. Target labels, if
/// present, are read only to report per-epoch accuracy.
pub fn adapt<T: Scalar>(
    mut model: ModelState<T>,
    target: &GraphDataset<T>,
    config: &AdaptConfig,
) -> Result<(ModelState<T>, MetricsReport)> {
    config.validate()?;
    if !model.pretrained {
        return Err(Error::Argument("model has not been pretrained".into()));
    }
    check_compatible(&model, target)?;
    if target.len() < 2 {
        return Err(Error::Argument("target dataset needs at least 2 graphs".into()));
    }
    if config.hidden_dim != model.encoder.hidden_dim() || config.layers != model.encoder.convs.len() {
        log::warn!("hidden_dim/layers from the config differ from the model; the model's architecture is kept");
    }
    let mut config = config.clone();
    config.hidden_dim = model.encoder.hidden_dim();
    config.layers = model.encoder.convs.len();
    model.config = config.clone();
    model.optimizer.learning_rate = config.learning_rate;
    model.optimizer.weight_decay = config.weight_decay;
    model.disc_optimizer.learning_rate = config.learning_rate;
    model.disc_optimizer.weight_decay = config.weight_decay;

    let k = config.clusters.unwrap_or(model.num_classes());
    let labeled = target.is_fully_labeled();
    let mut report = MetricsReport::default();
    for _ in 0..config.adapt_epochs {
        let ep = model.epoch as u64;
        let metrics = adapt_epoch(&mut model, target, &config, k, ep)?;
        let accuracy = if labeled { Some(evaluate(&model, target)?) } else { None };
        log::info!(
            "epoch {ep}: ssr {:.4} sup {:.4} adv {:.4} inv {:.4} |H| {} |C| {}{}",
            metrics.ssr,
            metrics.sup,
            metrics.adv,
            metrics.inv,
            metrics.harmonic,
            metrics.confident,
            accuracy.map_or_else(String::new, |a| format!(" acc {a:.4}"))
        );
        report.epochs.push(EpochMetrics { accuracy, ..metrics });
        model.epoch += 1;
    }
    if labeled {
        report.accuracies.push(evaluate(&model, target)?);
    }
    Ok((model, report))
}

fn adapt_epoch<T: Scalar>(
    model: &mut ModelState<T>,
    target: &GraphDataset<T>,
    config: &AdaptConfig,
    k: usize,
    ep: u64,
) -> Result<EpochMetrics> {
    let n = target.len();
    let off = config.disable;
    let harmonic_mask = if off.partition {
        vec![true; n]
    } else {
        let outcome = partition_harmonic(target, &model.encoder, config.rho, k, derive_seed(config.seed, &[PARTITION, ep]))?;
        outcome.partition.harmonic_mask()
    };
    let harmonic_count = harmonic_mask.iter().filter(|&&h| h).count();
    if harmonic_count == 0 && off.align_active() {
        log::warn!("epoch {ep}: empty harmonic set, alignment skipped");
    }
    let plan = batch_plan(n, config.batch_size, derive_seed(config.seed, &[ADAPT, BATCHES, ep]))?;
    let mut stats = EpochStats::default();
    let norm = if config.harmonic_norm {
        PseudoLabelNorm::Harmonic
    } else {
        PseudoLabelNorm::Confident
    };
    for (b, members) in plan.iter().enumerate() {
        let batch = target.batch(members);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[ADAPT, DROPOUT, ep, b as u64]));
        let mut tape = Tape::new();
        let enc = model.encoder.bind(&mut tape, true);
        let ext = model.extractor.0.bind(&mut tape, true);
        let encoded = encode_on_tape(&mut tape, &enc, &batch, None, dropout_for(config.dropout, &mut drop_rng));
        let mut terms: Vec<Var> = Vec::new();

        if !off.ssr && config.ssr_weight > 0.0 {
            let s = similarity_on_tape(&mut tape, encoded.graphs);
            let (l, _) = ssr_loss_on_tape(&mut tape, s, config.lambda_bb)?;
            stats.ssr.push(tape.scalar(l).as_f64());
            terms.push(tape.scale(l, T::of(config.ssr_weight)));
        }

        let h_pos: Vec<usize> = (0..batch.len()).filter(|&p| harmonic_mask[members[p]]).collect();
        let i_pos: Vec<usize> = (0..batch.len()).filter(|&p| !harmonic_mask[members[p]]).collect();

        let sup_pos: Vec<usize> = if off.multiview { (0..batch.len()).collect() } else { h_pos.clone() };
        if config.sup_weight > 0.0 && !sup_pos.is_empty() {
            let logits = tape.gather_rows(encoded.logits, &sup_pos);
            let preds = LabelDistribution(softmax_rows(tape.value(logits)));
            let set = if off.multiview {
                unfiltered(&preds)
            } else {
                confident_filter(&preds, config.tau)?
            };
            stats.confident += set.len();
            if let Some(l) = pseudo_label_loss_on_tape(&mut tape, logits, &set, norm) {
                stats.sup.push(tape.scalar(l).as_f64());
                terms.push(tape.scale(l, T::of(config.sup_weight)));
            }
        }

        let align_on = off.align_active()
            && config.align_weight > 0.0
            && (config.adv_weight > 0.0 || config.inv_weight > 0.0)
            && !h_pos.is_empty()
            && !i_pos.is_empty();
        if align_on {
            let inh_members: Vec<usize> = i_pos.iter().map(|&p| members[p]).collect();
            let inh = target.batch(&inh_members);
            let rows: Vec<usize> = i_pos.iter().flat_map(|&p| batch.node_range(p)).collect();
            let nodes = tape.gather_rows(encoded.nodes, &rows);
            let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[ADAPT, NOISE, ep, b as u64]));
            let noise = gumbel_noise(inh.edges.edges.len(), &mut noise_rng);
            let ex = extract_on_tape(
                &mut tape,
                &enc,
                &ext,
                &inh,
                nodes,
                &noise,
                config.gumbel_temperature,
                EdgeRelaxation::StraightThrough,
                None,
            )?;
            let mut parts: Vec<Var> = Vec::new();
            if config.adv_weight > 0.0 {
                let real = tape.value(encoded.graphs).select_rows(&h_pos);
                let fake = tape.value(ex.graphs).clone();
                let d_obj = discriminator_step(&mut model.discriminator, &mut model.disc_optimizer, real, fake);
                stats.disc.push(d_obj.as_f64());
                let dv = model.discriminator.0.bind(&mut tape, false);
                let g = extractor_objective_on_tape(&mut tape, &dv, ex.graphs, config.non_saturating_gan);
                stats.adv.push(tape.scalar(g).as_f64());
                parts.push(tape.scale(g, T::of(config.adv_weight)));
            }
            if config.inv_weight > 0.0 {
                let orig = tape.gather_rows(encoded.logits, &i_pos);
                let kl = invariant_loss_on_tape(&mut tape, ex.class_logits, orig);
                stats.inv.push(tape.scalar(kl).as_f64());
                parts.push(tape.scale(kl, T::of(config.inv_weight)));
            }
            let mut align = parts[0];
            for &p in &parts[1..] {
                align = tape.add(align, p);
            }
            terms.push(tape.scale(align, T::of(config.align_weight)));
        }

        let Some((&first, rest)) = terms.split_first() else { continue };
        let mut total = first;
        for &t in rest {
            total = tape.add(total, t);
        }
        let total_value = tape.scalar(total);
        if !total_value.is_finite() {
            return Err(Error::Numerical(format!("non-finite adaptation loss at epoch {ep}, batch {b}")));
        }
        stats.total.push(total_value.as_f64());
        let grads = tape.backward(total);
        let vars: Vec<Var> = enc.all().into_iter().chain(ext.all()).collect();
        let mut named = model.encoder.named_mut();
        named.extend(model.extractor.0.named_mut("extractor"));
        let mut params = Vec::new();
        let mut g = Vec::new();
        for ((name, p), v) in named.into_iter().zip(vars) {
            if let Some(gv) = grads.get(v) {
                params.push((name, p));
                g.push(gv.clone());
            }
        }
        model.optimizer.update(params, &g);
    }
    Ok(EpochMetrics {
        run: 0,
        epoch: ep as usize,
        accuracy: None,
        ssr: stats.ssr.mean(),
        sup: stats.sup.mean(),
        adv: stats.adv.mean(),
        disc: stats.disc.mean(),
        inv: stats.inv.mean(),
        total: stats.total.mean(),
        harmonic: harmonic_count,
        confident: stats.confident,
        batches: plan.len(),
    })
}

/// Pretrain, evaluate the frozen model, adapt and evaluate again, once per
/// seed `config.seed + r`. Repeats run on separate threads.
pub fn run_benchmark<T: Scalar>(
    source: &GraphDataset<T>,
    target: &GraphDataset<T>,
    config: &AdaptConfig,
    repeats: usize,
) -> Result<MetricsReport> {
    if repeats == 0 {
        return Err(Error::Argument("repeats must be positive".into()));
    }
    if !target.is_fully_labeled() {
        return Err(Error::Argument("benchmark target needs labels for evaluation".into()));
    }
    let results: Vec<Result<MetricsReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..repeats)
            .map(|r| {
                let cfg = AdaptConfig {
                    seed: config.seed.wrapping_add(r as u64),
                    ..config.clone()
                };
                scope.spawn(move || -> Result<MetricsReport> {
                    let (model, _) = pretrain(source, &cfg)?;
                    let baseline = evaluate(&model, target)?;
                    let (_, mut report) = adapt(model, target, &cfg)?;
                    report.baseline_accuracies.push(baseline);
                    for e in &mut report.epochs {
                        e.run = r;
                    }
                    log::info!(
                        "run {r}: baseline {baseline:.4}, adapted {:.4}",
                        report.accuracies.first().copied().unwrap_or(f64::NAN)
                    );
                    Ok(report)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numerical("benchmark worker panicked".into()))))
            .collect()
    });
    let mut report = MetricsReport::default();
    for r in results {
        report.merge(r?);
    }
    Ok(report)
}

/// Pooled embeddings as CSV: `index,label,prediction,z0,...`.
pub fn embedding_csv<T: Scalar>(model: &ModelState<T>, dataset: &GraphDataset<T>) -> Result<String> {
    check_compatible(model, dataset)?;
    let (z, p) = embed_dataset(dataset, &model.encoder, EVAL_CHUNK)?;
    let pred = p.argmax();
    let mut out = String::from("index,label,prediction");
    for c in 0..z.cols() {
        let _ = write!(out, ",z{c}");
    }
    out.push('\n');
    for (i, g) in dataset.graphs.iter().enumerate() {
        let label = g.label().map_or_else(String::new, |l| dataset.schema.class_values[l].to_string());
        let _ = write!(out, "{i},{label},{}", dataset.schema.class_values[pred[i]]);
        for &v in z.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}
