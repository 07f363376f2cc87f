//! Cross-domain decoding: per-domain hypothesis generation and scoring, then a global merge.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::components::{score_components, Beams, ComponentBank, MiscalibrationConfig};
use crate::corpus::{SlotChunk, Utterance};
use crate::error::{Error, Result};
use crate::hypothesis::{build_hypotheses, Hypothesis};
use crate::metrics::{ie, semer, semer_sequences, SlotSequence};
use crate::reranker::{sigmoid, WeightVector};
use crate::schema::SchemaSet;

/// Optional rejection of the top hypothesis when its confidence is too low.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionConfig {
    pub default_threshold: Option<f64>,
    /// Per-domain thresholds, applied according to the top hypothesis's domain.
    pub per_domain: BTreeMap<String, f64>,
}

impl RejectionConfig {
    pub fn threshold_for(&self, domain: &str) -> Option<f64> {
        self.per_domain.get(domain).copied().or(self.default_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beams: Beams,
    pub n_best: usize,
    pub miscalibration: MiscalibrationConfig,
    pub rejection: Option<RejectionConfig>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beams: Beams::default(),
            n_best: 5,
            miscalibration: MiscalibrationConfig::default(),
            rejection: None,
        }
    }
}

/// Everything needed to decode: schemas, trained components and one weight vector per domain.
#[derive(Debug, Clone, Copy)]
pub struct DecodeModels<'a> {
    pub schemas: &'a SchemaSet,
    pub components: &'a ComponentBank,
    pub weights: &'a BTreeMap<String, WeightVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestEntry {
    pub hypothesis: Hypothesis,
    pub score: f64,
    /// `σ(score)`.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBest {
    pub utterance_id: String,
    pub entries: Vec<NBestEntry>,
    pub rejected: bool,
}

impl NBest {
    pub fn top(&self) -> Option<&NBestEntry> {
        self.entries.first()
    }
}

/// Global order: score descending, then domain label, then hypothesis index.
pub fn entry_order(a: &NBestEntry, b: &NBestEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.hypothesis.domain.cmp(&b.hypothesis.domain))
        .then_with(|| a.hypothesis.index.cmp(&b.hypothesis.index))
}

/// Scores each domain's hypotheses with that domain's weights, merges them and keeps `n`.
pub fn merge_scored(
    per_domain: &[(String, Vec<Hypothesis>)],
    weights: &BTreeMap<String, WeightVector>,
    n: usize,
) -> Result<Vec<NBestEntry>> {
    if n == 0 {
        return Err(Error::Config("n-best size must be at least one".into()));
    }
    let mut entries = Vec::new();
    for (domain, hyps) in per_domain {
        let w = weights
            .get(domain)
            .ok_or_else(|| Error::NotTrained(format!("no re-ranker weights for {domain}")))?;
        for h in hyps {
            let score = w.dot(&h.features);
            let mut hypothesis = h.clone();
            hypothesis.score = Some(score);
            entries.push(NBestEntry {
                hypothesis,
                score,
                confidence: sigmoid(score),
            });
        }
    }
    entries.sort_by(entry_order);
    entries.truncate(n);
    Ok(entries)
}

/// Per-domain hypothesis lists for an utterance, in domain-name order.
pub fn domain_hypotheses(
    u: &Utterance,
    schemas: &SchemaSet,
    components: &ComponentBank,
    beams: Beams,
    miscalibration: &MiscalibrationConfig,
) -> Result<Vec<(String, Vec<Hypothesis>)>> {
    if schemas.is_empty() {
        return Err(Error::Config("no domains configured".into()));
    }
    schemas
        .domains()
        .iter()
        .map(|schema| {
            let t = miscalibration.for_domain(&schema.name);
            let cs = score_components(u, schema, components, beams, t)?;
            Ok((schema.name.clone(), build_hypotheses(&cs)?))
        })
        .collect()
}

fn apply_rejection(entries: &[NBestEntry], rejection: Option<&RejectionConfig>) -> bool {
    match (entries.first(), rejection) {
        (Some(top), Some(r)) => r
            .threshold_for(&top.hypothesis.domain)
            .is_some_and(|t| top.confidence < t),
        _ => false,
    }
}

/// Decodes from precomputed per-domain hypotheses.
pub fn decode_hypotheses(
    utterance_id: &str,
    per_domain: &[(String, Vec<Hypothesis>)],
    weights: &BTreeMap<String, WeightVector>,
    cfg: &DecodeConfig,
) -> Result<NBest> {
    if per_domain.is_empty() {
        return Err(Error::Config("no domains configured".into()));
    }
    let entries = merge_scored(per_domain, weights, cfg.n_best)?;
    let rejected = apply_rejection(&entries, cfg.rejection.as_ref());
    Ok(NBest {
        utterance_id: utterance_id.to_string(),
        entries,
        rejected,
    })
}

pub fn decode(u: &Utterance, models: DecodeModels<'_>, cfg: &DecodeConfig) -> Result<NBest> {
    let per_domain = domain_hypotheses(
        u,
        models.schemas,
        models.components,
        cfg.beams,
        &cfg.miscalibration,
    )?;
    decode_hypotheses(&u.id, &per_domain, models.weights, cfg)
}

/// The system output for one test utterance, scored against its annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopRecord {
    pub utterance_id: String,
    /// Domain of the top hypothesis.
    pub domain: String,
    pub confidence: f64,
    pub semer: f64,
    pub ie: u8,
    pub rejected: bool,
}

fn check_pairing(nbest_id: &str, u: &Utterance) -> Result<()> {
    if nbest_id != u.id {
        return Err(Error::Config(format!(
            "n-best for {nbest_id} paired with utterance {}",
            u.id
        )));
    }
    Ok(())
}

fn record(u: &Utterance, domain: &str, confidence: f64, semer_value: f64, rejected: bool) -> Result<TopRecord> {
    let value = if rejected { 1.0 } else { semer_value };
    Ok(TopRecord {
        utterance_id: u.id.clone(),
        domain: domain.to_string(),
        confidence,
        semer: value,
        ie: ie(value)?,
        rejected,
    })
}

/// Top-hypothesis correctness. A rejected utterance counts as an empty output: every
/// reference item is deleted, so its SemER is one.
pub fn top_record(u: &Utterance, nbest: &NBest) -> Result<TopRecord> {
    check_pairing(&nbest.utterance_id, u)?;
    let top = nbest.top().ok_or(Error::EmptyInput("n-best list"))?;
    let value = semer(&top.hypothesis, &u.truth, &u.tokens);
    record(u, &top.hypothesis.domain, top.confidence, value, nbest.rejected)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainBreakdown {
    pub count: usize,
    pub semer: f64,
    pub ie_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub utterances: usize,
    pub semer: f64,
    pub ie_rate: f64,
    pub rejected: usize,
    /// Keyed by the domain of the top hypothesis.
    pub per_domain: BTreeMap<String, DomainBreakdown>,
}

pub fn summarize(records: &[TopRecord]) -> Result<EvaluationReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let n = records.len() as f64;
    let mut per_domain: BTreeMap<String, (usize, f64, usize)> = BTreeMap::new();
    for r in records {
        let e = per_domain.entry(r.domain.clone()).or_default();
        e.0 += 1;
        e.1 += r.semer;
        e.2 += r.ie as usize;
    }
    Ok(EvaluationReport {
        utterances: records.len(),
        semer: records.iter().map(|r| r.semer).sum::<f64>() / n,
        ie_rate: records.iter().map(|r| r.ie as f64).sum::<f64>() / n,
        rejected: records.iter().filter(|r| r.rejected).count(),
        per_domain: per_domain
            .into_iter()
            .map(|(d, (c, s, e))| {
                (
                    d,
                    DomainBreakdown {
                        count: c,
                        semer: s / c as f64,
                        ie_rate: e as f64 / c as f64,
                    },
                )
            })
            .collect(),
    })
}

/// Decodes and scores every test utterance.
pub fn evaluate(
    test: &[Utterance],
    models: DecodeModels<'_>,
    cfg: &DecodeConfig,
) -> Result<(EvaluationReport, Vec<NBest>, Vec<TopRecord>)> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let nbests = crate::par::map(test, |u| decode(u, models, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let records = test
        .iter()
        .zip(&nbests)
        .map(|(u, nb)| top_record(u, nb))
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(&records)?, nbests, records))
}

/// One line of the n-best output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestRecord {
    pub utterance_id: String,
    pub rejected: bool,
    pub entries: Vec<NBestRecordEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestRecordEntry {
    pub domain: String,
    pub intent: String,
    pub slots: Vec<SlotChunk>,
    pub s: f64,
    pub r: f64,
}

impl From<&NBest> for NBestRecord {
    fn from(nb: &NBest) -> Self {
        Self {
            utterance_id: nb.utterance_id.clone(),
            rejected: nb.rejected,
            entries: nb
                .entries
                .iter()
                .map(|e| NBestRecordEntry {
                    domain: e.hypothesis.domain.clone(),
                    intent: e.hypothesis.intent.clone(),
                    slots: e.hypothesis.slots.clone(),
                    s: e.score,
                    r: e.confidence,
                })
                .collect(),
        }
    }
}

impl NBestRecord {
    /// Same as [`top_record`], from a stored n-best line.
    pub fn top_record(&self, u: &Utterance) -> Result<TopRecord> {
        check_pairing(&self.utterance_id, u)?;
        let top = self.entries.first().ok_or(Error::EmptyInput("n-best list"))?;
        let value = semer_sequences(
            &SlotSequence::new(&top.intent, &top.slots, &u.tokens),
            &SlotSequence::of_annotation(&u.truth, &u.tokens),
        );
        record(u, &top.domain, top.r, value, self.rejected)
    }
}
