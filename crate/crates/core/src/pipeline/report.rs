use std::fmt::Write as _;

/// Losses and counts of one adaptation epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub run: usize,
    pub epoch: usize,
    /// Target accuracy after the epoch, when the target carries labels.
    pub accuracy: Option<f64>,
    pub ssr: f64,
    pub sup: f64,
    /// Extractor-side adversarial objective.
    pub adv: f64,
    /// Discriminator objective (ascended).
    pub disc: f64,
    pub inv: f64,
    pub total: f64,
    pub harmonic: usize,
    pub confident: usize,
    pub batches: usize,
}

/// Per-epoch rows plus final accuracies of one or more runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub epochs: Vec<EpochMetrics>,
    /// Final target accuracy of each run.
    pub accuracies: Vec<f64>,
    /// Accuracy of the frozen pretrained model of each run.
    pub baseline_accuracies: Vec<f64>,
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl MetricsReport {
    pub const HEADER: &'static str = "run,epoch,accuracy,ssr,sup,adv,disc,inv,total,harmonic,confident,batches";

    pub fn merge(&mut self, other: MetricsReport) {
        self.epochs.extend(other.epochs);
        self.accuracies.extend(other.accuracies);
        self.baseline_accuracies.extend(other.baseline_accuracies);
    }

    pub fn final_accuracy(&self) -> (f64, f64) {
        mean_std(&self.accuracies)
    }

    pub fn baseline_accuracy(&self) -> (f64, f64) {
        mean_std(&self.baseline_accuracies)
    }

    /// `summary,...` line with mean and standard deviation over runs.
    pub fn summary_line(&self) -> String {
        let (m, s) = self.final_accuracy();
        let (bm, bs) = self.baseline_accuracy();
        format!(
            "summary,runs={},accuracy_mean={m:.6},accuracy_std={s:.6},baseline_mean={bm:.6},baseline_std={bs:.6}",
            self.accuracies.len()
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(Self::HEADER);
        out.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
                e.run,
                e.epoch,
                opt(e.accuracy),
                e.ssr,
                e.sup,
                e.adv,
                e.disc,
                e.inv,
                e.total,
                e.harmonic,
                e.confident,
                e.batches
            );
        }
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }
}
