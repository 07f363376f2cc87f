//! Per-domain stand-in recognizers: one-vs-all domain classifier, intent classifier and a
//! per-token slot tagger, all maximum-entropy models over n-gram features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{SlotChunk, Utterance};
use crate::error::{Error, Result};
use crate::features::{token_features, utterance_features};
use crate::maxent::{train_maxent, MaxEntConfig, MaxEntModel};
use crate::schema::{DomainSchema, SchemaSet, NULL_TAG};

const IN_DOMAIN: &str = "in";
const OUT_OF_DOMAIN: &str = "out";

/// Temperatures applied to one domain's component logits before normalization.
/// Values below one sharpen the distributions (overconfidence), above one flatten them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentTemperature {
    pub dc: f64,
    pub ic: f64,
    pub ner: f64,
}

impl Default for ComponentTemperature {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl ComponentTemperature {
    pub fn uniform(t: f64) -> Self {
        Self { dc: t, ic: t, ner: t }
    }
}

/// Per-domain score distortion of the synthetic world. The default leaves scores untouched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiscalibrationConfig {
    /// Applied to every domain without its own entry.
    pub all: ComponentTemperature,
    pub domains: BTreeMap<String, ComponentTemperature>,
}

impl MiscalibrationConfig {
    pub fn for_domain(&self, domain: &str) -> ComponentTemperature {
        self.domains.get(domain).copied().unwrap_or(self.all)
    }

    pub fn validate(&self, schemas: &SchemaSet) -> Result<()> {
        let all = self.all;
        for v in [all.dc, all.ic, all.ner] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("temperature {v} must be positive")));
            }
        }
        for (name, t) in &self.domains {
            if schemas.get(name).is_none() {
                return Err(Error::Config(format!("temperature for unknown domain {name}")));
            }
            for v in [t.dc, t.ic, t.ner] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("temperature {v} for {name} must be positive")));
                }
            }
        }
        Ok(())
    }

    /// Multiplies every temperature by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |t: &ComponentTemperature| ComponentTemperature {
            dc: t.dc * factor,
            ic: t.ic * factor,
            ner: t.ner * factor,
        };
        Self {
            all: scale(&self.all),
            domains: self.domains.iter().map(|(k, t)| (k.clone(), scale(t))).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Beams {
    pub ic: usize,
    pub ner: usize,
}

impl Default for Beams {
    fn default() -> Self {
        Self { ic: 3, ner: 3 }
    }
}

/// Log-probability outputs of one domain's components for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub domain: String,
    pub dc_logprob: f64,
    pub ic: Vec<(String, f64)>,
    pub ner: Vec<(Vec<SlotChunk>, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentModel {
    /// Domain with a single observed intent.
    Single(String),
    MaxEnt(MaxEntModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainComponents {
    pub domain: String,
    pub dc: MaxEntModel,
    pub ic: IntentModel,
    pub ner: MaxEntModel,
}

/// DC on the full corpus (one-vs-all); IC and the tagger on in-domain utterances only.
pub fn train_domain_components(
    schema: &DomainSchema,
    corpus: &[Utterance],
    cfg: &MaxEntConfig,
) -> Result<DomainComponents> {
    let dc_data: Vec<(Vec<String>, &str)> = corpus
        .iter()
        .map(|u| {
            let label = if u.truth.domain == schema.name { IN_DOMAIN } else { OUT_OF_DOMAIN };
            (utterance_features(&u.tokens), label)
        })
        .collect();
    let dc = train_maxent(&dc_data, cfg)
        .map_err(|e| Error::DegenerateTraining(format!("{} domain classifier: {e}", schema.name)))?
        .model;

    let in_domain: Vec<&Utterance> = corpus.iter().filter(|u| u.truth.domain == schema.name).collect();
    let ic_data: Vec<(Vec<String>, &str)> = in_domain
        .iter()
        .map(|u| (utterance_features(&u.tokens), u.truth.intent.as_str()))
        .collect();
    let mut intents: Vec<&str> = ic_data.iter().map(|(_, l)| *l).collect();
    intents.sort_unstable();
    intents.dedup();
    let ic = match intents.as_slice() {
        [] => unreachable!("dc training guarantees in-domain utterances"),
        [only] => IntentModel::Single(only.to_string()),
        _ => IntentModel::MaxEnt(train_maxent(&ic_data, cfg)?.model),
    };

    let mut ner_data: Vec<(Vec<String>, &str)> = Vec::new();
    for u in &in_domain {
        let tags = chunks_to_tags(&u.truth.slots, u.tokens.len());
        for (i, tag) in tags.into_iter().enumerate() {
            ner_data.push((token_features(&u.tokens, i), tag));
        }
    }
    let ner = train_maxent(&ner_data, cfg)
        .map_err(|e| Error::DegenerateTraining(format!("{} slot tagger: {e}", schema.name)))?
        .model;

    Ok(DomainComponents {
        domain: schema.name.clone(),
        dc,
        ic,
        ner,
    })
}

pub fn chunks_to_tags(slots: &[SlotChunk], len: usize) -> Vec<&str> {
    let mut tags = vec![NULL_TAG; len];
    for s in slots {
        for t in &mut tags[s.start..s.end] {
            *t = s.entity_type.as_str();
        }
    }
    tags
}

/// Maximal runs of one non-null tag become chunks.
pub fn tags_to_chunks<S: AsRef<str>>(tags: &[S]) -> Vec<SlotChunk> {
    let mut out: Vec<SlotChunk> = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        if tag == NULL_TAG {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.end == i && last.entity_type == tag => last.end = i + 1,
            _ => out.push(SlotChunk::new(tag, i, i + 1)),
        }
    }
    out
}

/// Exact `k` best label sequences under independent per-position log-probabilities.
/// Ties are broken towards lexicographically smaller label-index sequences.
pub fn k_best_sequences(per_position: &[Vec<f64>], k: usize) -> Vec<(Vec<usize>, f64)> {
    let mut beam: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    for dist in per_position {
        let mut next: Vec<(Vec<usize>, f64)> = Vec::with_capacity(beam.len() * dist.len());
        for (seq, score) in &beam {
            for (label, lp) in dist.iter().enumerate() {
                let mut s = seq.clone();
                s.push(label);
                next.push((s, score + lp));
            }
        }
        next.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        next.truncate(k);
        beam = next;
    }
    beam
}

impl DomainComponents {
    /// Scores `tokens` with this domain's components. IC and slot-tagger outputs are
    /// truncated to their beams; every value is a log-probability.
    pub fn score(
        &self,
        tokens: &[String],
        beams: Beams,
        temperature: ComponentTemperature,
    ) -> Result<ComponentScores> {
        if beams.ic == 0 || beams.ner == 0 {
            return Err(Error::Config("beam widths must be at least one".into()));
        }
        if tokens.is_empty() {
            return Err(Error::EmptyInput("utterance tokens"));
        }
        if !self.dc.is_trained() || !self.ner.is_trained() {
            return Err(Error::NotTrained(self.domain.clone()));
        }
        let bag = utterance_features(tokens);

        let dc = self.dc.log_probs(&bag, temperature.dc);
        let in_idx = self
            .dc
            .label_index(IN_DOMAIN)
            .ok_or_else(|| Error::NotTrained(format!("{} domain classifier labels", self.domain)))?;
        let dc_logprob = dc[in_idx].min(0.0);

        let mut ic: Vec<(String, f64)> = match &self.ic {
            IntentModel::Single(label) => vec![(label.clone(), 0.0)],
            IntentModel::MaxEnt(model) => model
                .labels()
                .iter()
                .cloned()
                .zip(model.log_probs(&bag, temperature.ic).into_iter().map(|v| v.min(0.0)))
                .collect(),
        };
        // Stable sort keeps label order for ties.
        ic.sort_by(|a, b| b.1.total_cmp(&a.1));
        ic.truncate(beams.ic);

        let per_token: Vec<Vec<f64>> = (0..tokens.len())
            .map(|i| self.ner.log_probs(&token_features(tokens, i), temperature.ner))
            .collect();
        let labels = self.ner.labels();
        let ner = k_best_sequences(&per_token, beams.ner)
            .into_iter()
            .map(|(seq, lp)| {
                let tags: Vec<&str> = seq.iter().map(|&i| labels[i].as_str()).collect();
                (tags_to_chunks(&tags), lp.min(0.0))
            })
            .collect();

        Ok(ComponentScores {
            domain: self.domain.clone(),
            dc_logprob,
            ic,
            ner,
        })
    }
}

/// Trained components for every domain of a schema set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentBank {
    pub domains: BTreeMap<String, DomainComponents>,
}

impl ComponentBank {
    pub fn get(&self, domain: &str) -> Result<&DomainComponents> {
        self.domains
            .get(domain)
            .ok_or_else(|| Error::NotTrained(format!("no components for domain {domain}")))
    }
}

/// Trains all domains' components; domains are independent and train concurrently.
pub fn train_components(
    schemas: &SchemaSet,
    corpus: &[Utterance],
    cfg: &MaxEntConfig,
) -> Result<ComponentBank> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("training corpus"));
    }
    let trained: Vec<Result<DomainComponents>> =
        crate::par::map(schemas.domains(), |s| train_domain_components(s, corpus, cfg));
    let domains = trained
        .into_iter()
        .map(|r| r.map(|c| (c.domain.clone(), c)))
        .collect::<Result<_>>()?;
    Ok(ComponentBank { domains })
}

/// Scores an utterance with `schema`'s components from `bank`.
pub fn score_components(
    u: &Utterance,
    schema: &DomainSchema,
    bank: &ComponentBank,
    beams: Beams,
    temperature: ComponentTemperature,
) -> Result<ComponentScores> {
    let models = bank.get(&schema.name)?;
    if let IntentModel::MaxEnt(ic) = &models.ic {
        if let Some(l) = ic.labels().iter().find(|l| !schema.has_intent(l)) {
            return Err(Error::Contract(format!("intent {l} not in schema {}", schema.name)));
        }
    }
    models.score(&u.tokens, beams, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn bank() -> (SchemaSet, ComponentBank) {
        let schemas = SchemaSet::default_benchmark();
        let corpus = generate_corpus(&schemas, 3000, 4, &MiscalibrationConfig::default()).unwrap();
        let bank = train_components(&schemas, &corpus, &MaxEntConfig::default()).unwrap();
        (schemas, bank)
    }

    #[test]
    fn tag_chunk_conversion() {
        let chunks = tags_to_chunks(&["O", "A", "A", "B", "O", "A"]);
        assert_eq!(
            chunks,
            vec![SlotChunk::new("A", 1, 3), SlotChunk::new("B", 3, 4), SlotChunk::new("A", 5, 6)]
        );
        assert_eq!(chunks_to_tags(&chunks, 6), vec!["O", "A", "A", "B", "O", "A"]);
    }

    #[test]
    fn k_best_matches_enumeration() {
        let per = vec![
            vec![0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()],
            vec![0.6f64.ln(), 0.4f64.ln()],
            vec![0.1f64.ln(), 0.9f64.ln()],
        ];
        let mut all = Vec::new();
        for a in 0..3 {
            for b in 0..2 {
                for c in 0..2 {
                    all.push((vec![a, b, c], per[0][a] + per[1][b] + per[2][c]));
                }
            }
        }
        all.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
        let best = k_best_sequences(&per, 5);
        assert_eq!(best.len(), 5);
        for (got, want) in best.iter().zip(&all) {
            assert_eq!(got.0, want.0);
            assert!((got.1 - want.1).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_widths_of_one() {
        let (schemas, bank) = bank();
        let u = Utterance {
            id: "x".into(),
            tokens: toks("play moana"),
            truth: crate::corpus::Annotation {
                domain: "Books".into(),
                intent: "ReadBookIntent".into(),
                slots: vec![SlotChunk::new("BookName", 1, 2)],
            },
        };
        let cs = score_components(
            &u,
            schemas.get("Books").unwrap(),
            &bank,
            Beams { ic: 1, ner: 1 },
            ComponentTemperature::default(),
        )
        .unwrap();
        assert_eq!(cs.ic.len(), 1);
        assert_eq!(cs.ner.len(), 1);
        assert!(cs.dc_logprob <= 0.0 && (0.0..=1.0).contains(&cs.dc_logprob.exp()));
    }

    #[test]
    fn scores_are_sorted_log_probabilities() {
        let (schemas, bank) = bank();
        for domain in schemas.domains() {
            for text in ["play moana", "tell me about adele", "pause", "go to chapter five"] {
                for t in [0.4, 1.0, 2.0] {
                    let cs = bank
                        .get(&domain.name)
                        .unwrap()
                        .score(&toks(text), Beams::default(), ComponentTemperature::uniform(t))
                        .unwrap();
                    assert!(cs.dc_logprob <= 0.0);
                    assert!(cs.ic.windows(2).all(|w| w[0].1 >= w[1].1));
                    assert!(cs.ner.windows(2).all(|w| w[0].1 >= w[1].1));
                    assert!(cs.ic.iter().all(|(_, lp)| *lp <= 0.0));
                    assert!(cs.ner.iter().all(|(_, lp)| *lp <= 0.0));
                    let mass: f64 = cs.ic.iter().map(|(_, lp)| lp.exp()).sum();
                    assert!(mass <= 1.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn full_intent_and_domain_distributions_normalize() {
        let (_, bank) = bank();
        for comps in bank.domains.values() {
            let bag = utterance_features(&toks("play the album frozen"));
            let dc: f64 = comps.dc.log_probs(&bag, 0.7).iter().map(|l| l.exp()).sum();
            assert!((dc - 1.0).abs() < 1e-9);
            if let IntentModel::MaxEnt(ic) = &comps.ic {
                let s: f64 = ic.log_probs(&bag, 1.3).iter().map(|l| l.exp()).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn carrier_only_and_unknown_utterances_get_null_tags() {
        let (_, bank) = bank();
        let music = bank.get("Music").unwrap();
        for text in ["pause the music", "qwerty zxcv"] {
            let cs = music
                .score(&toks(text), Beams::default(), ComponentTemperature::default())
                .unwrap();
            assert!(cs.ner[0].0.is_empty(), "{text}: {:?}", cs.ner[0]);
        }
    }

    #[test]
    fn components_recognize_clean_examples() {
        let (_, bank) = bank();
        let books = bank.get("Books").unwrap();
        let cs = books
            .score(&toks("go to chapter five"), Beams::default(), ComponentTemperature::default())
            .unwrap();
        assert_eq!(cs.ic[0].0, "GoToChapterIntent");
        assert_eq!(cs.ner[0].0, vec![SlotChunk::new("ChapterNumber", 3, 4)]);
        assert!(cs.dc_logprob.exp() > 0.5);
    }

    #[test]
    fn missing_domain_is_state_error() {
        let (schemas, mut bank) = bank();
        bank.domains.remove("Video");
        let u = generate_corpus(&schemas, 1, 1, &MiscalibrationConfig::default()).unwrap().remove(0);
        let r = score_components(
            &u,
            schemas.get("Video").unwrap(),
            &bank,
            Beams::default(),
            ComponentTemperature::default(),
        );
        assert!(matches!(r, Err(Error::NotTrained(_))));
    }

    #[test]
    fn sharper_temperature_raises_top_confidence() {
        let (_, bank) = bank();
        let music = bank.get("Music").unwrap();
        let t = toks("play the album frozen");
        let soft = music.score(&t, Beams::default(), ComponentTemperature::uniform(1.0)).unwrap();
        let sharp = music.score(&t, Beams::default(), ComponentTemperature::uniform(0.5)).unwrap();
        assert!(sharp.ic[0].1 >= soft.ic[0].1);
        assert!(sharp.ner[0].1 >= soft.ner[0].1);
    }

    #[test]
    fn miscalibration_validation() {
        let schemas = SchemaSet::default_benchmark();
        let mut m = MiscalibrationConfig::default();
        m.domains.insert("Nope".into(), ComponentTemperature::default());
        assert!(m.validate(&schemas).is_err());
        let mut m = MiscalibrationConfig::default();
        m.domains.insert("Music".into(), ComponentTemperature::uniform(0.0));
        assert!(m.validate(&schemas).is_err());
    }
}
