//! Annotated utterances, the seeded template generator and the JSONL corpus format.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::components::MiscalibrationConfig;
use crate::error::{Error, Result};
use crate::schema::{parse_template, SchemaSet, TemplatePart};

/// An entity chunk covering tokens `start..end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotChunk {
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

impl SlotChunk {
    pub fn new(entity_type: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            entity_type: entity_type.into(),
            start,
            end,
        }
    }

    pub fn surface(&self, tokens: &[String]) -> String {
        tokens[self.start..self.end].join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub domain: String,
    pub intent: String,
    pub slots: Vec<SlotChunk>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<String>,
    pub truth: Annotation,
}

/// Checks that `slots` are non-empty, in order, non-overlapping spans inside `len` tokens.
pub fn check_spans(slots: &[SlotChunk], len: usize) -> std::result::Result<(), String> {
    let mut cursor = 0;
    for slot in slots {
        if slot.start >= slot.end {
            return Err(format!("empty span {}..{}", slot.start, slot.end));
        }
        if slot.end > len {
            return Err(format!("span {}..{} exceeds {len} tokens", slot.start, slot.end));
        }
        if slot.start < cursor {
            return Err(format!("span {}..{} overlaps or is out of order", slot.start, slot.end));
        }
        cursor = slot.end;
    }
    Ok(())
}

impl Utterance {
    pub fn validate(&self, schemas: &SchemaSet) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::Utterance {
                id: self.id.clone(),
                reason,
            })
        };
        if self.tokens.is_empty() {
            return fail("no tokens".into());
        }
        if let Err(reason) = check_spans(&self.truth.slots, self.tokens.len()) {
            return fail(reason);
        }
        let Some(domain) = schemas.get(&self.truth.domain) else {
            return fail(format!("unknown domain {}", self.truth.domain));
        };
        if !domain.has_intent(&self.truth.intent) {
            return fail(format!("intent {} not in {}", self.truth.intent, domain.name));
        }
        if let Some(slot) = self
            .truth
            .slots
            .iter()
            .find(|s| !domain.has_entity_type(&s.entity_type))
        {
            return fail(format!("entity type {} not in {}", slot.entity_type, domain.name));
        }
        Ok(())
    }
}

/// Draws `n` utterances from the schemas' templates: uniform domain, intent, template and
/// gazetteer phrase. Phrases listed under several domains make the draws ambiguous.
///
/// The miscalibration settings are validated against the schemas here so a corpus is never
/// produced for a world whose scoring configuration would later be rejected.
pub fn generate_corpus(
    schemas: &SchemaSet,
    n: usize,
    seed: u64,
    skew: &MiscalibrationConfig,
) -> Result<Vec<Utterance>> {
    if n == 0 {
        return Err(Error::Config("corpus size must be positive".into()));
    }
    if schemas.is_empty() {
        return Err(Error::Config("empty schema set".into()));
    }
    skew.validate(schemas)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len().max(6);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let domain = &schemas.domains()[rng.gen_range(0..schemas.len())];
        let intent = &domain.intents[rng.gen_range(0..domain.intents.len())];
        let template = domain.templates[intent]
            .choose(&mut rng)
            .expect("validated: every intent has templates");

        let mut tokens = Vec::new();
        let mut slots = Vec::new();
        for part in parse_template(template) {
            match part {
                TemplatePart::Word(w) => tokens.push(w),
                TemplatePart::Slot(etype) => {
                    let phrase = domain.gazetteer[&etype]
                        .choose(&mut rng)
                        .expect("validated: slot types have phrases");
                    let start = tokens.len();
                    tokens.extend(phrase.split_whitespace().map(str::to_lowercase));
                    slots.push(SlotChunk::new(etype, start, tokens.len()));
                }
            }
        }
        out.push(Utterance {
            id: format!("utt-{i:0width$}"),
            tokens,
            truth: Annotation {
                domain: domain.name.clone(),
                intent: intent.clone(),
                slots,
            },
        });
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Reads a corpus file and validates every record against the schemas.
pub fn load_corpus(path: &Path, schemas: &SchemaSet) -> Result<Vec<Utterance>> {
    let corpus: Vec<Utterance> = read_jsonl(path)?;
    for u in &corpus {
        u.validate(schemas)?;
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let schemas = SchemaSet::default_benchmark();
        let skew = MiscalibrationConfig::default();
        let a = generate_corpus(&schemas, 10, 7, &skew).unwrap();
        let b = generate_corpus(&schemas, 10, 7, &skew).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
        let c = generate_corpus(&schemas, 10, 8, &skew).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_size_is_config_error() {
        let schemas = SchemaSet::default_benchmark();
        let r = generate_corpus(&schemas, 0, 1, &MiscalibrationConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn generated_utterances_are_valid() {
        let schemas = SchemaSet::default_benchmark();
        let corpus = generate_corpus(&schemas, 500, 3, &MiscalibrationConfig::default()).unwrap();
        let mut ids = std::collections::BTreeSet::new();
        for u in &corpus {
            u.validate(&schemas).unwrap();
            assert!(ids.insert(u.id.clone()));
        }
    }

    #[test]
    fn ambiguous_phrases_cross_domains() {
        let schemas = SchemaSet::default_benchmark();
        let corpus = generate_corpus(&schemas, 1000, 1, &MiscalibrationConfig::default()).unwrap();
        let in_gazetteer = |domain: &str, phrase: &str| {
            schemas
                .get(domain)
                .unwrap()
                .gazetteer
                .values()
                .any(|ps| ps.iter().any(|p| p == phrase))
        };
        let ambiguous = corpus.iter().filter(|u| {
            u.truth.slots.iter().any(|s| {
                let surface = s.surface(&u.tokens);
                in_gazetteer("Books", &surface) && in_gazetteer("Music", &surface)
            })
        });
        assert!(ambiguous.count() >= 1);
    }

    #[test]
    fn span_checks() {
        assert!(check_spans(&[SlotChunk::new("A", 0, 1), SlotChunk::new("B", 1, 3)], 3).is_ok());
        assert!(check_spans(&[SlotChunk::new("A", 0, 2), SlotChunk::new("B", 1, 3)], 3).is_err());
        assert!(check_spans(&[SlotChunk::new("A", 2, 2)], 3).is_err());
        assert!(check_spans(&[SlotChunk::new("A", 2, 4)], 3).is_err());
    }

    #[test]
    fn jsonl_field_order_is_stable() {
        let u = Utterance {
            id: "u1".into(),
            tokens: vec!["play".into(), "moana".into()],
            truth: Annotation {
                domain: "Books".into(),
                intent: "ReadBookIntent".into(),
                slots: vec![SlotChunk::new("BookName", 1, 2)],
            },
        };
        let text = serde_json::to_string(&u).unwrap();
        assert_eq!(
            text,
            r#"{"id":"u1","tokens":["play","moana"],"truth":{"domain":"Books","intent":"ReadBookIntent","slots":[{"entity_type":"BookName","start":1,"end":2}]}}"#
        );
    }
}
