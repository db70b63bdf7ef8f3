mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use sfgda_core::align::{extract_subgraph, gumbel_sigmoid_sample, kl_divergence, EdgeLogits, SampledAdjacency};
use sfgda_core::autodiff::sigmoid;
use sfgda_core::data::{batch_plan, density_split, edge_density, load_tud_dataset, write_tud_dataset, Graph};
use sfgda_core::encoder::{message_pass, predict, EncoderParams};
use sfgda_core::harmonic::{partition_harmonic, select_harmonic, silhouette};
use sfgda_core::matrix::Matrix;
use sfgda_core::pipeline::{adapt, pretrain};
use sfgda_core::synth::{generate, SynthSpec};
use sfgda_core::{AdaptConfig, Dataset64};

fn synth(graphs: usize, seed: u64, noise: f64) -> Dataset64 {
    generate(&SynthSpec {
        noise_edges: noise,
        ..SynthSpec::source(graphs, seed)
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tu_files_round_trip(graphs in 1usize..20, seed in any::<u64>(), noise in 0.0f64..0.6) {
        let ds = synth(graphs, seed, noise);
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("RT");
        write_tud_dataset(&ds, &first).unwrap();
        let loaded: Dataset64 = load_tud_dataset(&first).unwrap();
        for (a, b) in loaded.graphs.iter().zip(&ds.graphs) {
            prop_assert_eq!(a.edges(), b.edges());
            prop_assert_eq!(a.label(), b.label());
            prop_assert_eq!(a.node_tags(), b.node_tags());
        }
        let second = dir.path().join("RT2");
        write_tud_dataset(&loaded, &second).unwrap();
        let again: Dataset64 = load_tud_dataset(&second).unwrap();
        prop_assert_eq!(&again.graphs, &loaded.graphs);
        prop_assert_eq!(&again.schema, &loaded.schema);
    }

    #[test]
    fn density_split_partitions_in_density_order(graphs in 2usize..40, parts in 2usize..5, seed in any::<u64>()) {
        prop_assume!(parts <= graphs);
        let ds = synth(graphs, seed, 0.5);
        let groups = density_split(&ds, parts).unwrap();
        prop_assert_eq!(groups.len(), parts);
        prop_assert_eq!(groups.iter().map(|g| g.len()).sum::<usize>(), graphs);
        let mut seen: Vec<&Graph<f64>> = groups.iter().flat_map(|g| g.graphs.iter()).collect();
        for g in &ds.graphs {
            let pos = seen.iter().position(|s| *s == g);
            prop_assert!(pos.is_some());
            seen.remove(pos.unwrap());
        }
        for w in groups.windows(2) {
            let hi = w[0].graphs.iter().map(edge_density).fold(f64::MIN, f64::max);
            let lo = w[1].graphs.iter().map(edge_density).fold(f64::MAX, f64::min);
            prop_assert!(hi <= lo);
        }
    }

    #[test]
    fn batches_cover_every_graph_once(len in 2usize..300, size in 2usize..64, seed in any::<u64>()) {
        let plan = batch_plan(len, size, seed).unwrap();
        let mut all: Vec<usize> = plan.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        prop_assert!(plan.iter().all(|b| b.len() >= 2 || len < 2));
    }

    #[test]
    fn node_relabeling_permutes_embeddings(n in 2usize..10, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = Matrix::from_fn(n, 3, |_, _| r.gen_range(-1.0..1.0));
        let edges: Vec<(usize, usize)> = (1..n).map(|u| (r.gen_range(0..u), u)).collect();
        let perm = shuffled(n, &mut r);
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let x2 = Matrix::from_fn(n, 3, |i, c| x[(perm[i], c)]);
        let edges2: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (inv[u], inv[v])).collect();
        let params = EncoderParams::new(3, 5, 2, 2, &mut r);
        let one = |x: Matrix<f64>, e: Vec<(usize, usize)>| {
            let ds = Dataset64::new("p", vec![Graph::new(x, e, None).unwrap()], sfgda_core::FeatureSchema::plain(3, 2)).unwrap();
            let b = ds.batch(&[0]);
            (message_pass(&b, &params).unwrap().values, predict(&b, &params).unwrap())
        };
        let (h, (z, _)) = one(x, edges);
        let (h2, (z2, _)) = one(x2, edges2);
        for i in 0..n {
            for c in 0..5 {
                prop_assert!((h2[(i, c)] - h[(perm[i], c)]).abs() < 1e-12);
            }
        }
        prop_assert!(z.0.sub(&z2.0).max_abs() < 1e-12);
    }

    #[test]
    fn extraction_keeps_nodes_and_features(seed in any::<u64>(), keep in 0.0f64..1.0) {
        let ds = synth(1, seed, 0.4);
        let g = &ds.graphs[0];
        let mut r = rng(seed);
        let hard: Vec<bool> = (0..g.edge_count()).map(|_| r.gen_bool(keep)).collect();
        let soft = hard.iter().map(|&h| if h { 0.9 } else { 0.1 }).collect();
        let sub = extract_subgraph(g, &SampledAdjacency { hard: hard.clone(), soft }).unwrap();
        prop_assert_eq!(sub.node_count(), g.node_count());
        prop_assert_eq!(sub.node_features(), g.node_features());
        prop_assert!(sub.edges().iter().all(|e| g.edges().contains(e)));
        prop_assert!(sub.edge_count() >= 1);
    }

    #[test]
    fn kl_vanishes_exactly_on_equal_distributions(raw in prop::collection::vec(0.01f64..1.0, 2..6), shift in 0.001f64..0.5, at in 0usize..6) {
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        prop_assert!(kl_divergence(&p, &p).abs() < 1e-15);
        let i = at % p.len();
        let j = (i + 1) % p.len();
        let mut q = p.clone();
        let d = shift * q[i];
        q[i] -= d;
        q[j] += d;
        prop_assert!(kl_divergence(&p, &q) > 1e-9 * d * d);
    }

    #[test]
    fn silhouette_matches_definition(n in 2usize..120, k in 2usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let pts: Matrix<f64> = Matrix::from_fn(n, 2, |_, _| r.gen_range(-1.0..1.0));
        let mut labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let d = Matrix::from_fn(n, n, |i, j| ((pts[(i, 0)] - pts[(j, 0)]).powi(2) + (pts[(i, 1)] - pts[(j, 1)]).powi(2)).sqrt());
        let ours = silhouette(&d, &labels).unwrap();
        for (a, b) in ours.0.iter().zip(silhouette_reference(&d, &labels)) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn harmonic_share_tracks_ratio(scores in prop::collection::vec(-1.0f64..1.0, 1..200), ratio in 0.01f64..0.99) {
        let n = scores.len();
        let p = select_harmonic(&scores, ratio).unwrap();
        prop_assert_eq!(p.harmonic.len() + p.inharmonic.len(), n);
        prop_assert!((p.harmonic.len() as f64 / n as f64 - ratio).abs() <= 1.0 / n as f64);
        let worst_kept = p.harmonic.iter().map(|&i| scores[i]).fold(f64::MAX, f64::min);
        prop_assert!(p.inharmonic.iter().all(|&i| scores[i] <= worst_kept));
    }
}

#[test]
fn keep_rate_follows_logistic_law_at_any_temperature() {
    for temperature in [0.1, 1.0, 5.0] {
        for l in [-1.5, 0.0, 0.7] {
            let logits = EdgeLogits(vec![l]);
            let kept = (0..10_000u64)
                .filter(|&s| gumbel_sigmoid_sample(&logits, temperature, s ^ 0x5EED).unwrap().hard[0])
                .count();
            let freq = kept as f64 / 10_000.0;
            assert!((freq - sigmoid(l)).abs() <= 0.02, "t={temperature} l={l}: {freq}");
        }
    }
}

#[test]
fn partition_is_deterministic() {
    let ds = synth(60, 3, 0.2);
    let params = EncoderParams::new(ds.feature_dim(), 16, 2, 2, &mut ChaCha8Rng::seed_from_u64(1));
    let a = partition_harmonic(&ds, &params, 0.4, 2, 9).unwrap();
    let b = partition_harmonic(&ds, &params, 0.4, 2, 9).unwrap();
    assert_eq!(a.partition, b.partition);
    assert_eq!(a.clusters, b.clusters);
    assert_eq!(a.silhouettes.0, b.silhouettes.0);
    assert_eq!(a.partition.harmonic.len(), 24);
}

#[test]
fn predictions_stay_on_the_simplex_through_training() {
    let source = synth(40, 5, 0.05);
    let target = synth(40, 6, 0.3);
    let mut config = AdaptConfig {
        hidden_dim: 16,
        batch_size: 16,
        adapt_epochs: 1,
        learning_rate: 0.05,
        ..AdaptConfig::default()
    };
    for epochs in 1..=3 {
        config.pretrain_epochs = epochs;
        let (model, _) = pretrain(&source, &config).unwrap();
        let (model, _) = adapt(model, &target.unlabeled(), &config).unwrap();
        let (_, p) = predict(&target.batch(&(0..40).collect::<Vec<_>>()), &model.encoder).unwrap();
        for r in 0..p.0.rows() {
            let row = p.0.row(r);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
