use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sfgda_core::data::{FeatureSchema, Graph};
use sfgda_core::matrix::Matrix;
use sfgda_core::pipeline::{adapt, pretrain};
use sfgda_core::seriation::similarity_matrix;
use sfgda_core::{AdaptConfig, Dataset64};

// Timing tests must not compete with each other for cores.
static SERIAL: Mutex<()> = Mutex::new(());

fn fastest<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

/// R² of the least-squares fit `y = a + b x`.
fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

#[test]
fn similarity_cost_is_quadratic_in_graph_count() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let sizes = [250usize, 500, 1000];
    let times: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let z: Matrix<f64> = Matrix::from_fn(n, 64, |_, _| r.gen_range(-1.0..1.0));
            fastest(7, || {
                std::hint::black_box(similarity_matrix(&z).unwrap());
            })
        })
        .collect();
    let n2: Vec<f64> = sizes.iter().map(|&n| (n * n) as f64).collect();
    let fit = r_squared(&n2, &times);
    assert!(fit >= 0.95, "R² {fit:.4} for times {times:?}");
}

fn target_with_edges(per_graph: usize, seed: u64) -> Dataset64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let nodes = 24;
    let all: Vec<(usize, usize)> = (0..nodes).flat_map(|u| (u + 1..nodes).map(move |v| (u, v))).collect();
    let graphs = (0..64)
        .map(|i| {
            let mut pool = all.clone();
            let mut edges = Vec::with_capacity(per_graph);
            for _ in 0..per_graph {
                edges.push(pool.swap_remove(r.gen_range(0..pool.len())));
            }
            let x = Matrix::from_fn(nodes, 4, |_, _| r.gen_range(0.0..1.0));
            Graph::new(x, edges, Some(i % 2)).unwrap()
        })
        .collect();
    Dataset64::new("dense", graphs, FeatureSchema::plain(4, 2)).unwrap()
}

#[test]
fn epoch_time_is_linear_in_edge_count() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let config = AdaptConfig {
        pretrain_epochs: 2,
        adapt_epochs: 1,
        hidden_dim: 32,
        batch_size: 32,
        ..AdaptConfig::default()
    };
    let (model, _) = pretrain(&target_with_edges(30, 0), &config).unwrap();
    let counts = [40usize, 100, 160, 220, 276];
    let times: Vec<f64> = counts
        .iter()
        .map(|&m| {
            let ds = target_with_edges(m, 1).unlabeled();
            fastest(5, || {
                adapt(model.clone(), &ds, &config).unwrap();
            })
        })
        .collect();
    let edges: Vec<f64> = counts.iter().map(|&m| (64 * m) as f64).collect();
    let fit = r_squared(&edges, &times);
    assert!(fit >= 0.9, "R² {fit:.4} for times {times:?}");
    assert!(times[4] > times[0], "no growth with edges: {times:?}");
}
