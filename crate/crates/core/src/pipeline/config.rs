use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Components that can be switched off for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Drop the seriation ranking loss.
    pub ssr: bool,
    /// Treat every target graph as harmonic; also drops alignment.
    pub partition: bool,
    /// Drop subgraph extraction, the discriminator and the KL term.
    pub align: bool,
    /// Pseudo-label every graph of the batch with no harmonic or confidence filter.
    pub multiview: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 4] = ["ssr", "partition", "align", "multiview"];

    pub fn disable(&mut self, name: &str) -> Result<()> {
        match name.trim() {
            "ssr" => self.ssr = true,
            "partition" => self.partition = true,
            "align" => self.align = true,
            "multiview" | "filter" => self.multiview = true,
            "" | "none" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown component `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn align_active(&self) -> bool {
        !self.align && !self.partition
    }

    fn names(&self) -> Vec<&'static str> {
        let flags = [self.ssr, self.partition, self.align, self.multiview];
        Self::NAMES
            .iter()
            .zip(flags)
            .filter_map(|(n, f)| f.then_some(*n))
            .collect()
    }
}

/// Hyperparameters of pretraining and adaptation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Fraction of target graphs treated as harmonic.
    pub rho: f64,
    /// Confidence threshold for pseudo-labels.
    pub tau: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub adapt_epochs: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Spectral clusters; `None` uses the class count.
    pub clusters: Option<usize>,
    pub ssr_weight: f64,
    pub sup_weight: f64,
    pub align_weight: f64,
    pub adv_weight: f64,
    pub inv_weight: f64,
    pub gumbel_temperature: f64,
    /// Interpolation strength of the blackbox ranking gradient.
    pub lambda_bb: f64,
    pub seed: u64,
    pub non_saturating_gan: bool,
    /// Average the pseudo-label loss over the harmonic count instead of the confident count.
    pub harmonic_norm: bool,
    pub dropout: f64,
    pub weight_decay: f64,
    pub disable: Ablations,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            rho: 0.4,
            tau: 0.95,
            learning_rate: 1e-3,
            batch_size: 128,
            pretrain_epochs: 100,
            adapt_epochs: 50,
            hidden_dim: 128,
            layers: 2,
            clusters: None,
            ssr_weight: 1.0,
            sup_weight: 1.0,
            align_weight: 1.0,
            adv_weight: 1.0,
            inv_weight: 1.0,
            gumbel_temperature: 0.5,
            lambda_bb: 1.0,
            seed: 0,
            non_saturating_gan: false,
            harmonic_norm: false,
            dropout: 0.0,
            weight_decay: 0.0,
            disable: Ablations::default(),
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl AdaptConfig {
    pub const KEYS: [&'static str; 22] = [
        "rho",
        "tau",
        "learning_rate",
        "batch_size",
        "pretrain_epochs",
        "adapt_epochs",
        "hidden_dim",
        "layers",
        "clusters",
        "ssr_weight",
        "sup_weight",
        "align_weight",
        "adv_weight",
        "inv_weight",
        "gumbel_temperature",
        "lambda_bb",
        "seed",
        "non_saturating_gan",
        "harmonic_norm",
        "dropout",
        "weight_decay",
        "disable",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "rho" => self.rho = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "adapt_epochs" | "epochs" => self.adapt_epochs = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "clusters" => {
                self.clusters = match value {
                    "auto" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "ssr_weight" => self.ssr_weight = parse(key, value)?,
            "sup_weight" => self.sup_weight = parse(key, value)?,
            "align_weight" => self.align_weight = parse(key, value)?,
            "adv_weight" => self.adv_weight = parse(key, value)?,
            "inv_weight" => self.inv_weight = parse(key, value)?,
            "gumbel_temperature" => self.gumbel_temperature = parse(key, value)?,
            "lambda_bb" => self.lambda_bb = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "non_saturating_gan" => self.non_saturating_gan = parse_bool(key, value)?,
            "harmonic_norm" => self.harmonic_norm = parse_bool(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "disable" => {
                self.disable = Ablations::default();
                for name in value.split(',') {
                    self.disable.disable(name)?;
                }
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(char::is_whitespace))
                .ok_or_else(|| Error::Format {
                    file: origin.to_string(),
                    line: i + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                })?;
            self.set(key, value).map_err(|e| Error::Format {
                file: origin.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text, "<config>")?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        let mut c = Self::default();
        c.apply_text(&text, &path.display().to_string())?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.gumbel_temperature > 0.0 && self.gumbel_temperature.is_finite()) {
            return bad(format!("gumbel_temperature must be positive, got {}", self.gumbel_temperature));
        }
        if !(self.lambda_bb > 0.0 && self.lambda_bb.is_finite()) {
            return bad(format!("lambda_bb must be positive, got {}", self.lambda_bb));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if self.hidden_dim == 0 || self.layers == 0 {
            return bad("hidden_dim and layers must be positive".into());
        }
        if self.clusters == Some(0) {
            return bad("clusters must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative".into());
        }
        for (k, w) in [
            ("ssr_weight", self.ssr_weight),
            ("sup_weight", self.sup_weight),
            ("align_weight", self.align_weight),
            ("adv_weight", self.adv_weight),
            ("inv_weight", self.inv_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{k} must be non-negative, got {w}"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for AdaptConfig {
    /// The same flat `key = value` text accepted by [`AdaptConfig::from_text`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rho = {}", self.rho)?;
        writeln!(f, "tau = {}", self.tau)?;
        writeln!(f, "learning_rate = {}", self.learning_rate)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "pretrain_epochs = {}", self.pretrain_epochs)?;
        writeln!(f, "adapt_epochs = {}", self.adapt_epochs)?;
        writeln!(f, "hidden_dim = {}", self.hidden_dim)?;
        writeln!(f, "layers = {}", self.layers)?;
        match self.clusters {
            Some(k) => writeln!(f, "clusters = {k}")?,
            None => writeln!(f, "clusters = auto")?,
        }
        writeln!(f, "ssr_weight = {}", self.ssr_weight)?;
        writeln!(f, "sup_weight = {}", self.sup_weight)?;
        writeln!(f, "align_weight = {}", self.align_weight)?;
        writeln!(f, "adv_weight = {}", self.adv_weight)?;
        writeln!(f, "inv_weight = {}", self.inv_weight)?;
        writeln!(f, "gumbel_temperature = {}", self.gumbel_temperature)?;
        writeln!(f, "lambda_bb = {}", self.lambda_bb)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "non_saturating_gan = {}", self.non_saturating_gan)?;
        writeln!(f, "harmonic_norm = {}", self.harmonic_norm)?;
        writeln!(f, "dropout = {}", self.dropout)?;
        writeln!(f, "weight_decay = {}", self.weight_decay)?;
        let names = self.disable.names();
        writeln!(f, "disable = {}", if names.is_empty() { "none".to_string() } else { names.join(",") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = AdaptConfig::default();
        assert_eq!((c.rho, c.tau, c.learning_rate), (0.4, 0.95, 1e-3));
        assert_eq!((c.batch_size, c.pretrain_epochs, c.hidden_dim, c.layers), (128, 100, 128, 2));
        assert_eq!(c.gumbel_temperature, 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn parses_flat_text() {
        let c = AdaptConfig::from_text(
            "# comment\nrho = 0.3\ntau 0.9\nnon_saturating_gan = yes\nadv_weight=0.5\ndisable = ssr, align\n\nclusters = 3\n",
        )
        .unwrap();
        assert_eq!(c.rho, 0.3);
        assert_eq!(c.tau, 0.9);
        assert!(c.non_saturating_gan);
        assert_eq!(c.adv_weight, 0.5);
        assert!(c.disable.ssr && c.disable.align && !c.disable.partition);
        assert_eq!(c.clusters, Some(3));
    }

    #[test]
    fn reports_line_of_bad_entries() {
        let e = AdaptConfig::from_text("rho = 0.3\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains(":2:"), "{e}");
        assert!(AdaptConfig::from_text("tau = 1.0").is_err());
        assert!(AdaptConfig::from_text("gumbel_temperature = 0").is_err());
        assert!(AdaptConfig::from_text("disable = everything").is_err());
    }

    #[test]
    fn display_round_trips() {
        let mut c = AdaptConfig::default();
        c.set("rho", "0.25").unwrap();
        c.set("disable", "multiview").unwrap();
        c.set("learning_rate", "0.0003").unwrap();
        assert_eq!(AdaptConfig::from_text(&c.to_string()).unwrap(), c);
    }
}
