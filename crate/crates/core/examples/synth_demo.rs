//! Pretrain on a synthetic source, adapt to a shifted target and print per-epoch metrics.
//!
//! `cargo run --release --example synth_demo -- adapt_epochs=20 rho=0.3`

use sfgda_core::pipeline::{adapt, evaluate, pretrain};
use sfgda_core::synth::{generate, SynthSpec};
use sfgda_core::{AdaptConfig, Dataset64};

fn main() -> sfgda_core::Result<()> {
    let source: Dataset64 = generate(&SynthSpec::source(200, 1))?;
    let target: Dataset64 = generate(&SynthSpec::target(200, 2))?;
    let mut config = AdaptConfig {
        hidden_dim: 32,
        pretrain_epochs: 30,
        adapt_epochs: 10,
        batch_size: 64,
        learning_rate: 0.005,
        ..AdaptConfig::default()
    };
    for kv in std::env::args().skip(1) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| sfgda_core::Error::Argument(format!("expected key=value, got `{kv}`")))?;
        config.set(k, v)?;
    }

    let (model, _) = pretrain(&source, &config)?;
    println!(
        "source accuracy {:.3}, target accuracy before adaptation {:.3}",
        evaluate(&model, &source)?,
        evaluate(&model, &target)?
    );
    let (model, report) = adapt(model, &target.unlabeled(), &config)?;
    print!("{}", report.to_csv());
    println!("target accuracy after adaptation {:.3}", evaluate(&model, &target)?);
    Ok(())
}
