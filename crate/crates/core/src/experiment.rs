//! The end-to-end benchmark: corpus, components, re-rankers under every scheme, evaluation,
//! calibration, and the independent-subsample ("desync") variant.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{compare_schemes, ComparisonRow, ComparisonTable, SchemeRun};
use crate::components::{
    train_components, Beams, ComponentBank, ComponentTemperature, MiscalibrationConfig,
};
use crate::corpus::{generate_corpus, Utterance};
use crate::decode::{
    decode_hypotheses, domain_hypotheses, summarize, top_record, DecodeConfig, EvaluationReport,
    NBest, RejectionConfig, TopRecord,
};
use crate::error::{Error, Result};
use crate::hypothesis::Hypothesis;
use crate::maxent::MaxEntConfig;
use crate::metrics::{ie, semer};
use crate::reranker::{
    train, LabeledHypothesis, LossConfig, OptimizerConfig, RerankExample, TrainConfig,
    TrainedReranker, TrainingScheme, WeightVector,
};
use crate::schema::SchemaSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub beams: Beams,
    pub n_best: usize,
    pub schemes: Vec<TrainingScheme>,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub maxent: MaxEntConfig,
    pub miscalibration: MiscalibrationConfig,
    /// Share of the development split each domain draws in the desync experiment.
    pub desync_fraction: f64,
    pub tuning: TuningConfig,
    /// Optional confidence threshold below which the top hypothesis is rejected.
    pub rejection: Option<RejectionConfig>,
}

/// Grid search over the combined loss's cross-entropy weight, fitted on part of the
/// development split and scored by cross-domain SemER on the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    /// Candidate cross-entropy weights; the expected-SemER weight stays at one. Empty turns
    /// tuning off and the configured loss weights are used as given.
    pub ce_weights: Vec<f64>,
    pub fit_fraction: f64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            ce_weights: vec![0.25, 1.0, 4.0],
            fit_fraction: 0.8,
        }
    }
}

/// Overconfident intent classifiers and slot taggers (temperature 0.5) next to flattened
/// domain classifiers (temperature 4), so the summed log-probabilities under-weight domain
/// evidence when lists from different domains are merged.
pub fn default_miscalibration() -> MiscalibrationConfig {
    MiscalibrationConfig {
        all: ComponentTemperature {
            dc: 4.0,
            ic: 0.5,
            ner: 0.5,
        },
        domains: BTreeMap::new(),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            train_size: 20_000,
            dev_size: 4_000,
            test_size: 4_000,
            beams: Beams::default(),
            n_best: 5,
            schemes: TrainingScheme::ALL.to_vec(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            maxent: MaxEntConfig::default(),
            miscalibration: default_miscalibration(),
            desync_fraction: 0.9,
            tuning: TuningConfig::default(),
            rejection: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, schemas: &SchemaSet) -> Result<()> {
        if self.train_size == 0 || self.dev_size == 0 || self.test_size == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        if self.beams.ic == 0 || self.beams.ner == 0 || self.n_best == 0 {
            return Err(Error::Config("beams and n-best size must be positive".into()));
        }
        if !(self.desync_fraction > 0.0 && self.desync_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "desync fraction {} outside (0, 1]",
                self.desync_fraction
            )));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("no training schemes selected".into()));
        }
        let t = &self.tuning;
        if !t.ce_weights.is_empty() && !(t.fit_fraction > 0.0 && t.fit_fraction < 1.0) {
            return Err(Error::Config(format!(
                "tuning fit fraction {} outside (0, 1)",
                t.fit_fraction
            )));
        }
        if t.ce_weights.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::Config("tuning weights must be positive".into()));
        }
        self.miscalibration.validate(schemas)
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beams: self.beams,
            n_best: self.n_best,
            miscalibration: self.miscalibration.clone(),
            rejection: self.rejection.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningCandidate {
    pub k1: f64,
    pub k2: f64,
    /// Cross-domain top-1 SemER on the held-out part of the development split.
    pub semer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTuning {
    pub fit_size: usize,
    pub held_out_size: usize,
    pub candidates: Vec<TuningCandidate>,
    pub chosen: TuningCandidate,
}

impl LossTuning {
    /// `base` with the chosen loss weights.
    pub fn apply(&self, base: LossConfig) -> LossConfig {
        LossConfig {
            k1: self.chosen.k1,
            k2: self.chosen.k2,
            ..base
        }
    }
}

/// Picks the combined loss's weights on a seeded split of the development set. Returns
/// `None` when tuning is turned off. Ties go to the earlier candidate.
pub fn tune_loss(
    dev: &PreparedSet<'_>,
    cfg: &ExperimentConfig,
) -> Result<Option<LossTuning>> {
    let grid = &cfg.tuning.ce_weights;
    if grid.is_empty() {
        return Ok(None);
    }
    let n = dev.utterances.len();
    let fit_size = (n as f64 * cfg.tuning.fit_fraction).round() as usize;
    if fit_size == 0 || fit_size == n {
        return Err(Error::Config(format!(
            "development split of {n} is too small to tune on"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TUNING_STREAM);
    let mut order = sample(&mut rng, n, n).into_vec();
    let mut held_out = order.split_off(fit_size);
    order.sort_unstable();
    held_out.sort_unstable();

    let sets = rerank_training_sets(dev, Some(&order))?;
    let decode = cfg.decode_config();
    let mut candidates = Vec::with_capacity(grid.len());
    for &k2 in grid {
        let mut train_cfg = cfg.train_config();
        train_cfg.loss.k1 = 1.0;
        train_cfg.loss.k2 = k2;
        let weights = weights_of(&train_rerankers(TrainingScheme::R3, &sets, &train_cfg)?);
        let mut total = 0.0;
        for &i in &held_out {
            let u = &dev.utterances[i];
            let nb = decode_hypotheses(&u.id, &dev.hypotheses[i], &weights, &decode)?;
            total += top_record(u, &nb)?.semer;
        }
        candidates.push(TuningCandidate {
            k1: 1.0,
            k2,
            semer: total / held_out.len() as f64,
        });
    }
    let chosen = candidates
        .iter()
        .copied()
        .reduce(|best, c| if c.semer < best.semer { c } else { best })
        .expect("grid is non-empty");
    Ok(Some(LossTuning {
        fit_size,
        held_out_size: held_out.len(),
        candidates,
        chosen,
    }))
}

const TUNING_STREAM: u64 = 0x5eed_7c0f_fee1_dead;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// One seeded draw split into disjoint train / dev / test partitions.
pub fn generate_splits(schemas: &SchemaSet, cfg: &ExperimentConfig) -> Result<Splits> {
    cfg.validate(schemas)?;
    let mut all = generate_corpus(
        schemas,
        cfg.train_size + cfg.dev_size + cfg.test_size,
        cfg.seed,
        &cfg.miscalibration,
    )?;
    let test = all.split_off(cfg.train_size + cfg.dev_size);
    let dev = all.split_off(cfg.train_size);
    Ok(Splits {
        train: all,
        dev,
        test,
    })
}

/// Per-utterance, per-domain hypothesis lists, computed once and shared across schemes.
#[derive(Debug, Clone)]
pub struct PreparedSet<'a> {
    pub utterances: &'a [Utterance],
    pub hypotheses: Vec<Vec<(String, Vec<Hypothesis>)>>,
}

pub fn prepare<'a>(
    utterances: &'a [Utterance],
    schemas: &SchemaSet,
    bank: &ComponentBank,
    decode: &DecodeConfig,
) -> Result<PreparedSet<'a>> {
    let hypotheses = crate::par::map(utterances, |u| {
        domain_hypotheses(u, schemas, bank, decode.beams, &decode.miscalibration)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(PreparedSet {
        utterances,
        hypotheses,
    })
}

/// Labels every utterance's hypotheses from each domain against its truth.
pub fn rerank_training_sets(
    set: &PreparedSet<'_>,
    indices: Option<&[usize]>,
) -> Result<BTreeMap<String, Vec<RerankExample>>> {
    let mut out: BTreeMap<String, Vec<RerankExample>> = BTreeMap::new();
    let all: Vec<usize>;
    let indices = match indices {
        Some(i) => i,
        None => {
            all = (0..set.utterances.len()).collect();
            &all
        }
    };
    for &i in indices {
        let u = &set.utterances[i];
        for (domain, hyps) in &set.hypotheses[i] {
            let labeled = hyps
                .iter()
                .map(|h| {
                    let s = semer(h, &u.truth, &u.tokens);
                    Ok(LabeledHypothesis {
                        features: h.features,
                        semer: s,
                        ie: ie(s)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.entry(domain.clone()).or_default().push(RerankExample {
                utterance_id: u.id.clone(),
                in_domain: u.truth.domain == *domain,
                hyps: labeled,
            });
        }
    }
    Ok(out)
}

/// Trains one re-ranker per domain; domains train independently.
pub fn train_rerankers(
    scheme: TrainingScheme,
    sets: &BTreeMap<String, Vec<RerankExample>>,
    cfg: &TrainConfig,
) -> Result<BTreeMap<String, TrainedReranker>> {
    let items: Vec<(&String, &Vec<RerankExample>)> = sets.iter().collect();
    crate::par::map(&items, |(domain, examples)| train(scheme, domain, examples, cfg))
        .into_iter()
        .map(|r| r.map(|t| (t.domain.clone(), t)))
        .collect()
}

pub fn weights_of(rerankers: &BTreeMap<String, TrainedReranker>) -> BTreeMap<String, WeightVector> {
    rerankers
        .iter()
        .map(|(d, t)| (d.clone(), t.weights))
        .collect()
}

pub fn evaluate_prepared(
    set: &PreparedSet<'_>,
    weights: &BTreeMap<String, WeightVector>,
    decode: &DecodeConfig,
) -> Result<(EvaluationReport, Vec<NBest>, Vec<TopRecord>)> {
    let mut nbests = Vec::with_capacity(set.utterances.len());
    let mut records = Vec::with_capacity(set.utterances.len());
    for (u, per_domain) in set.utterances.iter().zip(&set.hypotheses) {
        let nb = decode_hypotheses(&u.id, per_domain, weights, decode)?;
        records.push(top_record(u, &nb)?);
        nbests.push(nb);
    }
    Ok((summarize(&records)?, nbests, records))
}

/// `100 * (baseline - scheme) / baseline`.
pub fn relative_improvement(baseline: f64, scheme: f64) -> Result<f64> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(Error::OutOfRange(format!(
            "relative improvement needs a positive baseline, got {baseline}"
        )));
    }
    Ok(100.0 * (baseline - scheme) / baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: TrainingScheme,
    pub rerankers: BTreeMap<String, TrainedReranker>,
    pub evaluation: EvaluationReport,
    /// Relative SemER improvement over the baseline in percent, when a baseline was run.
    pub relative_improvement: Option<f64>,
    #[serde(skip)]
    pub nbests: Vec<NBest>,
    #[serde(skip)]
    pub records: Vec<TopRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub seed: u64,
    /// Loss-weight search behind the R3 re-rankers, when R3 ran with tuning on.
    pub tuning: Option<LossTuning>,
    pub schemes: Vec<SchemeResult>,
    pub comparison: ComparisonTable,
}

impl BenchmarkResult {
    pub fn scheme(&self, scheme: TrainingScheme) -> Option<&SchemeResult> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }
}

/// Trained components plus the prepared dev and test sets.
pub struct Workbench {
    pub splits: Splits,
    pub components: ComponentBank,
}

impl Workbench {
    pub fn build(schemas: &SchemaSet, cfg: &ExperimentConfig) -> Result<Self> {
        let splits = generate_splits(schemas, cfg)?;
        let components = train_components(schemas, &splits.train, &cfg.maxent)?;
        Ok(Self { splits, components })
    }
}

pub fn run_schemes(
    schemas: &SchemaSet,
    cfg: &ExperimentConfig,
    bench: &Workbench,
) -> Result<BenchmarkResult> {
    let decode = cfg.decode_config();
    let dev = prepare(&bench.splits.dev, schemas, &bench.components, &decode)?;
    let test = prepare(&bench.splits.test, schemas, &bench.components, &decode)?;
    let sets = rerank_training_sets(&dev, None)?;
    let tuning = if cfg.schemes.contains(&TrainingScheme::R3) {
        tune_loss(&dev, cfg)?
    } else {
        None
    };
    let mut train_cfg = cfg.train_config();
    if let Some(t) = &tuning {
        train_cfg.loss = t.apply(train_cfg.loss);
    }

    let mut schemes = Vec::with_capacity(cfg.schemes.len());
    for &scheme in &cfg.schemes {
        let rerankers = train_rerankers(scheme, &sets, &train_cfg)?;
        let (evaluation, nbests, records) = evaluate_prepared(&test, &weights_of(&rerankers), &decode)?;
        schemes.push(SchemeResult {
            scheme,
            rerankers,
            evaluation,
            relative_improvement: None,
            nbests,
            records,
        });
    }
    if let Some(base) = schemes
        .iter()
        .find(|s| s.scheme == TrainingScheme::Baseline)
        .map(|s| s.evaluation.semer)
    {
        for s in &mut schemes {
            s.relative_improvement = relative_improvement(base, s.evaluation.semer).ok();
        }
    }
    let runs: Vec<SchemeRun> = schemes
        .iter()
        .map(|s| SchemeRun {
            scheme: s.scheme.to_string(),
            records: s.records.clone(),
        })
        .collect();
    Ok(BenchmarkResult {
        seed: cfg.seed,
        tuning,
        comparison: compare_schemes(&runs)?,
        schemes,
    })
}

pub fn run_benchmark(schemas: &SchemaSet, cfg: &ExperimentConfig) -> Result<BenchmarkResult> {
    let bench = Workbench::build(schemas, cfg)?;
    run_schemes(schemas, cfg, &bench)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesyncReport {
    pub seed: u64,
    pub fraction: f64,
    pub k1: f64,
    pub k2: f64,
    /// Development utterances drawn by each domain.
    pub sample_sizes: BTreeMap<String, usize>,
    pub full: EvaluationReport,
    pub desync: EvaluationReport,
    /// `100 * (desync - full) / full` SemER; positive means degradation.
    pub relative_semer_delta: f64,
    pub full_rerankers: BTreeMap<String, TrainedReranker>,
    pub desync_rerankers: BTreeMap<String, TrainedReranker>,
}

/// Each domain's re-ranker trained with R3 on its own random share of the development set;
/// components, loss settings and the test split are shared with the full-data R3 reference.
/// `reference` supplies already-trained full-data R3 re-rankers; they are trained here otherwise.
pub fn desync_experiment(
    schemas: &SchemaSet,
    cfg: &ExperimentConfig,
    bench: &Workbench,
    loss: LossConfig,
    reference: Option<&BTreeMap<String, TrainedReranker>>,
) -> Result<DesyncReport> {
    let decode = cfg.decode_config();
    let dev = prepare(&bench.splits.dev, schemas, &bench.components, &decode)?;
    let test = prepare(&bench.splits.test, schemas, &bench.components, &decode)?;
    let mut train_cfg = cfg.train_config();
    train_cfg.loss = loss;

    let full_rerankers = match reference {
        Some(r) => r.clone(),
        None => train_rerankers(TrainingScheme::R3, &rerank_training_sets(&dev, None)?, &train_cfg)?,
    };
    let (full, _, _) = evaluate_prepared(&test, &weights_of(&full_rerankers), &decode)?;

    let n_dev = bench.splits.dev.len();
    let take = ((n_dev as f64 * cfg.desync_fraction).round() as usize).clamp(1, n_dev);
    let mut sample_sizes = BTreeMap::new();
    let mut desync_sets = BTreeMap::new();
    for (k, domain) in schemas.names().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k as u64 + 1)));
        let mut idx = sample(&mut rng, n_dev, take).into_vec();
        idx.sort_unstable();
        let mut sets = rerank_training_sets(&dev, Some(&idx))?;
        let examples = sets
            .remove(domain)
            .ok_or_else(|| Error::Config(format!("no hypotheses for {domain}")))?;
        sample_sizes.insert(domain.to_string(), idx.len());
        desync_sets.insert(domain.to_string(), examples);
    }
    let desync_rerankers = train_rerankers(TrainingScheme::R3, &desync_sets, &train_cfg)?;
    let (desync, _, _) = evaluate_prepared(&test, &weights_of(&desync_rerankers), &decode)?;
    let relative_semer_delta = -relative_improvement(full.semer, desync.semer)?;

    Ok(DesyncReport {
        seed: cfg.seed,
        fraction: cfg.desync_fraction,
        k1: loss.k1,
        k2: loss.k2,
        sample_sizes,
        full,
        desync,
        relative_semer_delta,
        full_rerankers,
        desync_rerankers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummaryRow {
    pub scheme: String,
    pub semer: MeanStd,
    pub ie_rate: MeanStd,
    pub ece: MeanStd,
    pub relative_improvement: Option<MeanStd>,
}

/// One seed's per-scheme metrics, the input to the cross-seed summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
    /// Scheme -> relative SemER improvement over the baseline, in percent.
    pub relative_improvement: BTreeMap<String, f64>,
}

impl BenchmarkResult {
    pub fn metrics(&self) -> SeedMetrics {
        SeedMetrics {
            seed: self.seed,
            rows: self.comparison.rows.clone(),
            relative_improvement: self
                .schemes
                .iter()
                .filter_map(|s| s.relative_improvement.map(|v| (s.scheme.to_string(), v)))
                .collect(),
        }
    }
}

/// Mean and sample standard deviation of each scheme's metrics across seeds.
pub fn summarize_seeds(seeds: &[SeedMetrics]) -> Result<Vec<SeedSummaryRow>> {
    let first = seeds.first().ok_or(Error::EmptyInput("seed results"))?;
    first
        .rows
        .iter()
        .map(|row| {
            let rows: Vec<&ComparisonRow> = seeds
                .iter()
                .map(|m| {
                    m.rows
                        .iter()
                        .find(|r| r.scheme == row.scheme)
                        .ok_or_else(|| Error::Config(format!("scheme {} missing for seed {}", row.scheme, m.seed)))
                })
                .collect::<Result<_>>()?;
            let pick = |f: fn(&ComparisonRow) -> f64| MeanStd::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let rel: Option<Vec<f64>> = seeds
                .iter()
                .map(|m| m.relative_improvement.get(&row.scheme).copied())
                .collect();
            Ok(SeedSummaryRow {
                scheme: row.scheme.clone(),
                semer: pick(|r| r.semer),
                ie_rate: pick(|r| r.ie_rate),
                ece: pick(|r| r.ece),
                relative_improvement: rel.map(|v| MeanStd::of(&v)),
            })
        })
        .collect()
}
