//! Domain hypothesis lists: the beam-limited Cartesian product of IC and slot-tagger outputs.

use serde::{Deserialize, Serialize};

use crate::components::ComponentScores;
use crate::corpus::SlotChunk;
use crate::error::{Error, Result};

/// Number of component scores feeding the re-ranker: DC, IC, NER log-probabilities.
pub const FEATURE_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub domain: String,
    pub intent: String,
    pub slots: Vec<SlotChunk>,
    /// `(dc_logprob, ic_logprob, ner_logprob)`.
    pub features: [f64; FEATURE_DIM],
    /// Re-ranker score, unset until scored.
    pub score: Option<f64>,
    /// Position within the domain's hypothesis list.
    pub index: usize,
}

impl Hypothesis {
    pub fn log_prob_sum(&self) -> f64 {
        self.features.iter().sum()
    }
}

/// Pairs every intent with every slot sequence, intent-major. Component scores are copied
/// verbatim into each hypothesis's feature vector.
pub fn build_hypotheses(cs: &ComponentScores) -> Result<Vec<Hypothesis>> {
    if cs.ic.is_empty() {
        return Err(Error::EmptyInput("intent list"));
    }
    if cs.ner.is_empty() {
        return Err(Error::EmptyInput("slot sequence list"));
    }
    let mut out = Vec::with_capacity(cs.ic.len() * cs.ner.len());
    for (intent, ic_lp) in &cs.ic {
        for (slots, ner_lp) in &cs.ner {
            out.push(Hypothesis {
                domain: cs.domain.clone(),
                intent: intent.clone(),
                slots: slots.clone(),
                features: [cs.dc_logprob, *ic_lp, *ner_lp],
                score: None,
                index: out.len(),
            });
        }
    }
    Ok(out)
}

/// One line of a hypothesis dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub utterance_id: String,
    pub domain: String,
    pub index: usize,
    pub intent: String,
    pub slots: Vec<SlotChunk>,
    pub l: [f64; FEATURE_DIM],
    pub s: Option<f64>,
}

impl HypothesisRecord {
    pub fn new(utterance_id: &str, h: &Hypothesis) -> Self {
        Self {
            utterance_id: utterance_id.to_string(),
            domain: h.domain.clone(),
            index: h.index,
            intent: h.intent.clone(),
            slots: h.slots.clone(),
            l: h.features,
            s: h.score,
        }
    }
}
