//! Experiment settings from command-line flags, overridden by an optional config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use nlurank::decode::RejectionConfig;
use nlurank::experiment::ExperimentConfig;
use nlurank::reranker::{CeSign, TrainingScheme};
use nlurank::schema::SchemaSet;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Baseline,
    R1,
    R2,
    R3,
}

impl From<SchemeArg> for TrainingScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Baseline => TrainingScheme::Baseline,
            SchemeArg::R1 => TrainingScheme::R1,
            SchemeArg::R2 => TrainingScheme::R2,
            SchemeArg::R3 => TrainingScheme::R3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CeSignArg {
    Negated,
    AsPrinted,
}

/// Flags shared by every subcommand. Unset flags keep the built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory for all artifacts.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// TOML or JSON experiment config; its values override the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Domain schema file (TOML); the built-in three-domain benchmark when omitted.
    #[arg(long)]
    pub schemas: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub dev_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Intents kept per domain.
    #[arg(long)]
    pub ic_beam: Option<usize>,
    /// Slot sequences kept per domain.
    #[arg(long)]
    pub ner_beam: Option<usize>,
    #[arg(long)]
    pub n_best: Option<usize>,
    /// Comma-separated training schemes.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub schemes: Option<Vec<SchemeArg>>,
    /// Weight of the expected-SemER term in R3.
    #[arg(long)]
    pub k1: Option<f64>,
    /// Weight of the expected cross-entropy term in R3.
    #[arg(long)]
    pub k2: Option<f64>,
    /// Use the loss terms without dividing by their initial values.
    #[arg(long)]
    pub no_auto_scale: bool,
    #[arg(long, value_enum)]
    pub ce_sign: Option<CeSignArg>,
    /// Fit the weights only, without an additive offset.
    #[arg(long)]
    pub no_bias: bool,
    #[arg(long)]
    pub initial_step: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Share of the development split each domain draws in the desync experiment.
    #[arg(long)]
    pub desync_fraction: Option<f64>,
    /// Comma-separated grid of cross-entropy weights searched for R3.
    #[arg(long, value_delimiter = ',')]
    pub tune_ce_weights: Option<Vec<f64>>,
    /// Use the configured k1/k2 as given.
    #[arg(long)]
    pub no_tuning: bool,
    /// Share of the development split used for fitting during the search.
    #[arg(long)]
    pub tune_fit_fraction: Option<f64>,
    /// Reject the top hypothesis when its confidence is below this value.
    #[arg(long)]
    pub reject_below: Option<f64>,
}

impl CommonArgs {
    fn apply_flags(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($flag:ident => $($field:ident).+) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$($field).+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(train_size => train_size);
        set!(dev_size => dev_size);
        set!(test_size => test_size);
        set!(ic_beam => beams.ic);
        set!(ner_beam => beams.ner);
        set!(n_best => n_best);
        set!(k1 => loss.k1);
        set!(k2 => loss.k2);
        set!(initial_step => optimizer.initial_step);
        set!(max_iterations => optimizer.max_iterations);
        set!(tolerance => optimizer.tolerance);
        set!(desync_fraction => desync_fraction);
        set!(tune_ce_weights => tuning.ce_weights);
        set!(tune_fit_fraction => tuning.fit_fraction);
        if let Some(s) = &self.schemes {
            cfg.schemes = s.iter().map(|&s| s.into()).collect();
        }
        if let Some(sign) = self.ce_sign {
            cfg.loss.ce_sign = match sign {
                CeSignArg::Negated => CeSign::Negated,
                CeSignArg::AsPrinted => CeSign::AsPrinted,
            };
        }
        if self.no_auto_scale {
            cfg.loss.auto_scale = false;
        }
        if self.no_bias {
            cfg.optimizer.fit_bias = false;
        }
        if self.no_tuning {
            cfg.tuning.ce_weights.clear();
        }
        if let Some(t) = self.reject_below {
            cfg.rejection = Some(RejectionConfig {
                default_threshold: Some(t),
                ..Default::default()
            });
        }
    }

    /// Defaults, then flags, then the config file.
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        self.apply_flags(&mut cfg);
        if let Some(path) = &self.config {
            let overrides = read_config_file(path)?;
            let mut merged = serde_json::to_value(&cfg)?;
            merge(&mut merged, overrides);
            cfg = serde_json::from_value(merged)
                .with_context(|| format!("invalid settings in {}", path.display()))?;
        }
        Ok(cfg)
    }

    pub fn schema_set(&self) -> Result<SchemaSet> {
        match &self.schemas {
            Some(path) => SchemaSet::load(path).with_context(|| format!("loading schemas from {}", path.display())),
            None => Ok(SchemaSet::default_benchmark()),
        }
    }
}

fn read_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text)?,
        Some("toml") => toml::from_str(&text)?,
        _ => bail!("config file {} must end in .toml or .json", path.display()),
    };
    if !value.is_object() {
        bail!("config file {} must hold a table of settings", path.display());
    }
    Ok(value)
}

/// Recursively overwrites `base` with the entries of `overrides`; tables merge key by key.
fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}
