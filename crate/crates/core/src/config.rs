//! Flat key-value run configuration, overridable by command-line flags.
//!
//! ```toml
//! corpus = "data/emasac.jsonl"
//! cs = "out/cache.json"
//! seed = 7
//! strategy = "coffee"
//! attributes = "xWant,oReact"
//! epochs = 30
//! d = 32
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, LanguageFilter};
use crate::error::{read_to_string, Error, Result};
use crate::extract::parse_selection;
use crate::fusion::FusionStrategy;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub lexicons: Option<PathBuf>,
    /// Endpoint URL or fixture file.
    pub comet: Option<String>,
    pub cs: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub strategy: Option<String>,
    pub attributes: Option<String>,
    pub filter: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub patience: Option<usize>,
    pub context_window: Option<usize>,
    pub min_count: Option<usize>,
    pub d: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub max_n: Option<usize>,
    pub max_m: Option<usize>,
    pub dropout: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Values set in `top` win.
    pub fn overlay(self, top: RunConfig) -> Self {
        let base = self;
        overlay!(base, top; corpus, lexicons, comet, cs, out, seed, strategy, attributes, filter, epochs,
            batch_size, lr, patience, context_window, min_count, d, layers, heads, max_n, max_m, dropout)
    }

    /// Referenced input files must exist. A `comet` value that is not a
    /// URL is treated as a fixture path.
    pub fn validate(&self) -> Result<()> {
        let mut inputs: Vec<&Path> = Vec::new();
        inputs.extend(self.corpus.as_deref());
        inputs.extend(self.lexicons.as_deref());
        if let Some(c) = &self.comet {
            if !is_url(c) {
                inputs.push(Path::new(c));
            }
        }
        for p in inputs {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        self.train_config()?;
        self.encoder_config()?;
        Ok(())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            lr: self.lr.unwrap_or(d.lr),
            seed: self.seed.unwrap_or(d.seed),
            patience: self.patience.unwrap_or(d.patience),
            strategy: match &self.strategy {
                Some(s) => s.parse()?,
                None => d.strategy,
            },
            attributes: match &self.attributes {
                Some(s) => parse_selection(s)?,
                None => d.attributes,
            },
            filter: match &self.filter {
                Some(s) => s.parse()?,
                None => d.filter,
            },
            context_window: self.context_window.unwrap_or(d.context_window),
            min_count: self.min_count.unwrap_or(d.min_count),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        let d = EncoderConfig::default();
        let cfg = EncoderConfig {
            d: self.d.unwrap_or(d.d),
            layers: self.layers.unwrap_or(d.layers),
            heads: self.heads.unwrap_or(d.heads),
            max_n: self.max_n.unwrap_or(d.max_n),
            max_m: self.max_m.unwrap_or(d.max_m),
            dropout: self.dropout.unwrap_or(d.dropout),
            seed: self.seed.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn strategy(&self) -> Result<FusionStrategy> {
        Ok(self.train_config()?.strategy)
    }

    pub fn filter(&self) -> Result<LanguageFilter> {
        Ok(self.train_config()?.filter)
    }
}

pub fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::EffectType;

    #[test]
    fn parse_and_resolve() {
        let c = RunConfig::parse(
            "seed = 7\nstrategy = \"dpa\"\nattributes = \"xWant\"\nd = 16\nheads = 2\n",
        )
        .unwrap();
        let t = c.train_config().unwrap();
        assert_eq!(
            (t.seed, t.strategy, t.attributes),
            (7, FusionStrategy::Dpa, vec![EffectType::XWant])
        );
        let e = c.encoder_config().unwrap();
        assert_eq!((e.d, e.heads, e.seed), (16, 2, 7));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::parse("sede = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[fusion]\nstrategy = \"dpa\""),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn overlay_prefers_top() {
        let base = RunConfig::parse("seed = 1\nepochs = 3").unwrap();
        let top = RunConfig {
            seed: Some(9),
            ..Default::default()
        };
        let m = base.overlay(top);
        assert_eq!((m.seed, m.epochs), (Some(9), Some(3)));
    }

    #[test]
    fn invalid_values() {
        assert!(matches!(
            RunConfig::parse("strategy = \"sum\"")
                .unwrap()
                .train_config(),
            Err(Error::Strategy(_))
        ));
        assert!(RunConfig::parse("d = 10\nheads = 4")
            .unwrap()
            .encoder_config()
            .is_err());
        let missing = RunConfig {
            corpus: Some("/nonexistent/corpus.jsonl".into()),
            ..Default::default()
        };
        assert!(matches!(missing.validate(), Err(Error::Config(_))));
        let url = RunConfig {
            comet: Some("http://localhost:1".into()),
            ..Default::default()
        };
        url.validate().unwrap();
    }
}
