use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sfgda_core::data::{density_split, load_tud_dataset, load_tud_dataset_with_schema, write_tud_dataset};
use sfgda_core::harmonic::partition_harmonic;
use sfgda_core::pipeline::{adapt, embedding_csv, evaluate, pretrain, run_benchmark};
use sfgda_core::seriation::{fiedler, laplacian, similarity_matrix, SimilarityMatrix};
use sfgda_core::{AdaptConfig, Dataset64, Matrix64, Model64};

#[derive(Parser)]
#[command(name = "sfgda", version, about = "Source-free domain adaptation for graph classifiers")]
struct Cli {
    /// Directory that holds TU datasets as `<dir>/<NAME>/<NAME>_A.txt` etc.
    #[arg(long, global = true, env = "SFGDA_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Tuning {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set rho=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Switch off components: ssr, partition, align, multiview. Repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    disable: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Tuning {
    fn resolve(&self, base: AdaptConfig) -> Result<AdaptConfig> {
        let mut c = base;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            c.apply_text(&text, &path.display().to_string())?;
        }
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').with_context(|| format!("expected KEY=VALUE, got `{kv}`"))?;
            c.set(k, v)?;
        }
        for name in &self.disable {
            c.disable.disable(name)?;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split a dataset into sub-datasets of increasing edge density.
    Split {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 2)]
        parts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on a labeled source dataset.
    Pretrain {
        #[arg(long)]
        source: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long)]
        dump_embeddings: Option<PathBuf>,
    },
    /// Adapt a pretrained model to an unlabeled target dataset.
    Adapt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
        /// Per-epoch metrics CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        dump_embeddings: Option<PathBuf>,
    },
    /// Accuracy of a model on a labeled dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        dump_embeddings: Option<PathBuf>,
    },
    /// Repeated pretrain/adapt/evaluate runs with a source-only baseline.
    Bench {
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Spectral seriation of a similarity matrix or of embedding rows (CSV).
    Seriate {
        #[arg(long)]
        input: PathBuf,
        /// Treat input rows as embeddings and use their cosine similarities.
        #[arg(long)]
        embeddings: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Harmonic/inharmonic split of a dataset under a model.
    Partition {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dataset_path(data_dir: &Path, name: &str) -> PathBuf {
    let p = PathBuf::from(name);
    if p.is_dir() {
        p
    } else {
        data_dir.join(name)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_matrix(path: &Path) -> Result<Matrix64> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(e) => bail!("{}:{}: {e}", path.display(), i + 1),
        }
    }
    if rows.is_empty() {
        bail!("{}: no numeric rows", path.display());
    }
    let width = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != width) {
        bail!("{}: row {} has {} columns, expected {width}", path.display(), bad + 1, rows[bad].len());
    }
    Ok(Matrix64::from_rows(&rows))
}

fn run(cli: Cli) -> Result<()> {
    let data_dir = cli.data_dir;
    match cli.command {
        Command::Split { dataset, parts, out } => {
            let ds: Dataset64 = load_tud_dataset(dataset_path(&data_dir, &dataset))?;
            for sub in density_split(&ds, parts)? {
                let dir = out.join(&sub.name);
                write_tud_dataset(&sub, &dir)?;
                println!("{}\t{} graphs", dir.display(), sub.len());
            }
        }
        Command::Pretrain {
            source,
            out,
            tuning,
            dump_embeddings,
        } => {
            let config = tuning.resolve(AdaptConfig::default())?;
            let ds: Dataset64 = load_tud_dataset(dataset_path(&data_dir, &source))?;
            let (model, losses) = pretrain(&ds, &config)?;
            model.save(&out)?;
            println!(
                "pretrained on {} ({} graphs): final loss {:.4}, train accuracy {:.4}",
                ds.name,
                ds.len(),
                losses.last().copied().unwrap_or(f64::NAN),
                evaluate(&model, &ds)?
            );
            if let Some(p) = dump_embeddings {
                emit(Some(&p), &embedding_csv(&model, &ds)?)?;
            }
        }
        Command::Adapt {
            model,
            target,
            out,
            tuning,
            metrics,
            dump_embeddings,
        } => {
            let m = Model64::load(&model)?;
            let config = tuning.resolve(m.config.clone())?;
            let ds: Dataset64 = load_tud_dataset_with_schema(dataset_path(&data_dir, &target), &m.schema)?;
            let (adapted, report) = adapt(m, &ds, &config)?;
            adapted.save(&out)?;
            match metrics {
                Some(p) => {
                    emit(Some(&p), &report.to_csv())?;
                    println!("{}", report.summary_line());
                }
                None => print!("{}", report.to_csv()),
            }
            if let Some(p) = dump_embeddings {
                emit(Some(&p), &embedding_csv(&adapted, &ds)?)?;
            }
        }
        Command::Eval {
            model,
            dataset,
            dump_embeddings,
        } => {
            let m = Model64::load(&model)?;
            let ds: Dataset64 = load_tud_dataset_with_schema(dataset_path(&data_dir, &dataset), &m.schema)?;
            println!("accuracy,{:.6}", evaluate(&m, &ds)?);
            if let Some(p) = dump_embeddings {
                emit(Some(&p), &embedding_csv(&m, &ds)?)?;
            }
        }
        Command::Bench {
            source,
            target,
            repeats,
            tuning,
            metrics,
        } => {
            let config = tuning.resolve(AdaptConfig::default())?;
            let src: Dataset64 = load_tud_dataset(dataset_path(&data_dir, &source))?;
            let tgt: Dataset64 = load_tud_dataset_with_schema(dataset_path(&data_dir, &target), &src.schema)?;
            let report = run_benchmark(&src, &tgt, &config, repeats)?;
            if let Some(p) = metrics {
                emit(Some(&p), &report.to_csv())?;
            }
            let (m, s) = report.final_accuracy();
            let (bm, bs) = report.baseline_accuracy();
            println!("task,{}->{}", src.name, tgt.name);
            println!("source-only,{:.2},{:.2}", 100.0 * bm, 100.0 * bs);
            println!("adapted,{:.2},{:.2}", 100.0 * m, 100.0 * s);
            println!("{}", report.summary_line());
        }
        Command::Seriate { input, embeddings, out } => {
            let m = read_matrix(&input)?;
            let s = if embeddings {
                similarity_matrix(&m)?
            } else {
                if !m.is_square() {
                    bail!("similarity matrix must be square, got {}x{}", m.rows(), m.cols());
                }
                if !m.is_symmetric(1e-9) {
                    bail!("similarity matrix must be symmetric");
                }
                SimilarityMatrix(m)
            };
            let (_, v) = fiedler(&laplacian(&s))?;
            let ranks = sfgda_core::seriation::ascending_ranks(&v);
            let mut text = String::from("index,rank,fiedler\n");
            for (i, (r, f)) in ranks.iter().zip(&v).enumerate() {
                text.push_str(&format!("{i},{r},{f}\n"));
            }
            emit(out.as_deref(), &text)?;
        }
        Command::Partition {
            model,
            dataset,
            rho,
            seed,
            out,
        } => {
            let m = Model64::load(&model)?;
            let ds: Dataset64 = load_tud_dataset_with_schema(dataset_path(&data_dir, &dataset), &m.schema)?;
            let rho = rho.unwrap_or(m.config.rho);
            let k = m.config.clusters.unwrap_or(m.num_classes());
            let outcome = partition_harmonic(&ds, &m.encoder, rho, k, seed.unwrap_or(m.config.seed))?;
            let mask = outcome.partition.harmonic_mask();
            let mut text = String::from("index,set,silhouette,cluster\n");
            for i in 0..ds.len() {
                let set = if mask[i] { "harmonic" } else { "inharmonic" };
                text.push_str(&format!("{i},{set},{},{}\n", outcome.silhouettes.0[i], outcome.clusters[i]));
            }
            emit(out.as_deref(), &text)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
