//! Browser bindings for the re-ranker: SemER of two interpretations, scoring and merging of
//! per-domain hypothesis lists, and a small end-to-end benchmark with reliability curves.
//! Every entry point takes and returns JSON text.

use std::collections::BTreeMap;

use nlurank::calibration::{ReliabilityBin, Scope};
use nlurank::decode::merge_scored;
use nlurank::experiment::{run_benchmark, ExperimentConfig};
use nlurank::hypothesis::Hypothesis;
use nlurank::metrics::{ie, levenshtein, semer_sequences, SlotItem, SlotSequence};
use nlurank::reranker::{hypothesis_softmax, score, TrainingScheme, WeightVector};
use nlurank::schema::SchemaSet;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

pub type DemoResult<T> = std::result::Result<T, String>;

/// Parses `Intent type=value type=value`; underscores in values stand for spaces.
pub fn parse_interpretation(text: &str) -> DemoResult<SlotSequence> {
    let mut parts = text.split_whitespace();
    let intent = parts.next().ok_or("an interpretation needs an intent")?;
    if intent.contains('=') {
        return Err(format!("expected an intent before the slots, found {intent}"));
    }
    let mut items = vec![SlotItem::Intent(intent.to_string())];
    for part in parts {
        let (entity_type, value) = part
            .split_once('=')
            .filter(|(t, v)| !t.is_empty() && !v.is_empty())
            .ok_or_else(|| format!("slot {part} is not of the form type=value"))?;
        items.push(SlotItem::Slot {
            entity_type: entity_type.to_string(),
            value: value.replace('_', " "),
        });
    }
    Ok(SlotSequence { items })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemerResult {
    pub edits: usize,
    pub truth_length: usize,
    pub semer: f64,
    pub interpretation_error: u8,
}

pub fn semer(hypothesis: &str, truth: &str) -> DemoResult<SemerResult> {
    let h = parse_interpretation(hypothesis)?;
    let t = parse_interpretation(truth)?;
    let semer = semer_sequences(&h, &t);
    Ok(SemerResult {
        edits: levenshtein(&h.items, &t.items),
        truth_length: t.len(),
        semer,
        interpretation_error: ie(semer).map_err(|e| e.to_string())?,
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct DomainInput {
    pub domain: String,
    /// `(dc, ic, ner)` weights.
    pub weights: [f64; 3],
    #[serde(default)]
    pub bias: Option<f64>,
    pub hypotheses: Vec<HypothesisInput>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct HypothesisInput {
    pub label: String,
    /// `(dc, ic, ner)` log-probabilities.
    pub features: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
pub struct RerankInput {
    pub n_best: usize,
    pub domains: Vec<DomainInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedEntry {
    pub domain: String,
    pub label: String,
    pub score: f64,
    /// `σ(score)`, comparable across domains.
    pub confidence: f64,
    /// Softmax of the score within its own domain's list.
    pub within_domain: f64,
}

pub fn rerank(input: &RerankInput) -> DemoResult<Vec<RankedEntry>> {
    let mut per_domain = Vec::with_capacity(input.domains.len());
    let mut weights = BTreeMap::new();
    let mut within = BTreeMap::new();
    for d in &input.domains {
        let w = WeightVector::new(d.weights, d.bias);
        if !w.is_finite() {
            return Err(format!("weights for {} must be finite", d.domain));
        }
        if weights.insert(d.domain.clone(), w).is_some() {
            return Err(format!("domain {} appears twice", d.domain));
        }
        let hyps: Vec<Hypothesis> = d
            .hypotheses
            .iter()
            .enumerate()
            .map(|(index, h)| Hypothesis {
                domain: d.domain.clone(),
                intent: h.label.clone(),
                slots: Vec::new(),
                features: h.features,
                score: None,
                index,
            })
            .collect();
        if !hyps.is_empty() {
            let scores = hyps
                .iter()
                .map(|h| score(&w, &h.features))
                .collect::<nlurank::Result<Vec<f64>>>()
                .map_err(|e| e.to_string())?;
            within.insert(d.domain.clone(), hypothesis_softmax(&scores).map_err(|e| e.to_string())?);
        }
        per_domain.push((d.domain.clone(), hyps));
    }
    let merged = merge_scored(&per_domain, &weights, input.n_best).map_err(|e| e.to_string())?;
    Ok(merged
        .into_iter()
        .map(|e| RankedEntry {
            within_domain: within[&e.hypothesis.domain][e.hypothesis.index],
            domain: e.hypothesis.domain,
            label: e.hypothesis.intent,
            score: e.score,
            confidence: e.confidence,
        })
        .collect())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct BenchmarkInput {
    pub seed: u64,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub max_iterations: usize,
}

impl Default for BenchmarkInput {
    fn default() -> Self {
        Self {
            seed: 1,
            train_size: 900,
            dev_size: 300,
            test_size: 300,
            max_iterations: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub semer: f64,
    pub ece: f64,
    /// Domain -> `(dc, ic, ner)` weights and bias.
    pub weights: BTreeMap<String, ([f64; 3], Option<f64>)>,
    /// Cross-domain reliability bins.
    pub bins: Vec<ReliabilityBin>,
}

/// Generates a small corpus, trains components and every re-ranking scheme, and evaluates.
pub fn benchmark(input: &BenchmarkInput) -> DemoResult<Vec<SchemeSummary>> {
    let mut cfg = ExperimentConfig {
        seed: input.seed,
        train_size: input.train_size,
        dev_size: input.dev_size,
        test_size: input.test_size,
        schemes: vec![
            TrainingScheme::Baseline,
            TrainingScheme::R1,
            TrainingScheme::R2,
            TrainingScheme::R3,
        ],
        ..ExperimentConfig::default()
    };
    cfg.optimizer.max_iterations = input.max_iterations;
    let result = run_benchmark(&SchemaSet::default_benchmark(), &cfg).map_err(|e| e.to_string())?;
    result
        .schemes
        .iter()
        .map(|s| {
            let name = s.scheme.to_string();
            let row = result
                .comparison
                .row(&name)
                .ok_or_else(|| format!("no comparison row for {name}"))?;
            let cross = result.comparison.curves[&name]
                .iter()
                .find(|r| r.scope == Scope::CrossDomain)
                .ok_or("no cross-domain reliability curve")?;
            Ok(SchemeSummary {
                scheme: name,
                semer: row.semer,
                ece: row.ece,
                weights: s
                    .rerankers
                    .iter()
                    .map(|(d, t)| (d.clone(), (t.weights.w, t.weights.bias)))
                    .collect(),
                bins: cross.bins.clone(),
            })
        })
        .collect()
}

fn to_js<T: Serialize>(value: DemoResult<T>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

fn from_js<T: for<'de> Deserialize<'de>>(json: &str) -> DemoResult<T> {
    serde_json::from_str(json).map_err(|e| format!("invalid input: {e}"))
}

#[wasm_bindgen(js_name = semer)]
pub fn semer_js(hypothesis: &str, truth: &str) -> Result<String, JsError> {
    to_js(semer(hypothesis, truth))
}

#[wasm_bindgen(js_name = rerank)]
pub fn rerank_js(input: &str) -> Result<String, JsError> {
    to_js(from_js::<RerankInput>(input).and_then(|i| rerank(&i)))
}

#[wasm_bindgen(js_name = benchmark)]
pub fn benchmark_js(input: &str) -> Result<String, JsError> {
    to_js(from_js::<BenchmarkInput>(input).and_then(|i| benchmark(&i)))
}
