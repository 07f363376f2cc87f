//! Semantic error rate and interpretation error of a hypothesis against its annotation.

use crate::corpus::{Annotation, SlotChunk};
use crate::error::{Error, Result};
use crate::hypothesis::Hypothesis;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotItem {
    Intent(String),
    Slot { entity_type: String, value: String },
}

/// Intent label followed by `(entity type, surface value)` chunks. The domain is not part
/// of the sequence: intents are already domain-specific.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSequence {
    pub items: Vec<SlotItem>,
}

impl SlotSequence {
    pub fn new(intent: &str, slots: &[SlotChunk], tokens: &[String]) -> Self {
        let mut items = Vec::with_capacity(slots.len() + 1);
        items.push(SlotItem::Intent(intent.to_string()));
        items.extend(slots.iter().map(|s| SlotItem::Slot {
            entity_type: s.entity_type.clone(),
            value: s.surface(tokens),
        }));
        Self { items }
    }

    pub fn of_annotation(truth: &Annotation, tokens: &[String]) -> Self {
        Self::new(&truth.intent, &truth.slots, tokens)
    }

    pub fn of_hypothesis(hyp: &Hypothesis, tokens: &[String]) -> Self {
        Self::new(&hyp.intent, &hyp.slots, tokens)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance between the sequences, normalized by the reference length. Can exceed one.
pub fn semer_sequences(hyp: &SlotSequence, truth: &SlotSequence) -> f64 {
    levenshtein(&hyp.items, &truth.items) as f64 / truth.len() as f64
}

pub fn semer(hyp: &Hypothesis, truth: &Annotation, tokens: &[String]) -> f64 {
    semer_sequences(
        &SlotSequence::of_hypothesis(hyp, tokens),
        &SlotSequence::of_annotation(truth, tokens),
    )
}

/// 0 when the SemER is exactly zero, 1 otherwise.
pub fn ie(semer_value: f64) -> Result<u8> {
    if semer_value.is_nan() || semer_value < 0.0 {
        return Err(Error::OutOfRange(format!("SemER must be non-negative, got {semer_value}")));
    }
    Ok(u8::from(semer_value != 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn hyp(intent: &str, slots: Vec<SlotChunk>) -> Hypothesis {
        Hypothesis {
            domain: "X".into(),
            intent: intent.into(),
            slots,
            features: [0.0; 3],
            score: None,
            index: 0,
        }
    }

    fn truth() -> Annotation {
        Annotation {
            domain: "Books".into(),
            intent: "ReadBookIntent".into(),
            slots: vec![SlotChunk::new("BookName", 1, 2)],
        }
    }

    #[test]
    fn exact_match_is_zero() {
        let t = toks("play moana");
        let h = hyp("ReadBookIntent", vec![SlotChunk::new("BookName", 1, 2)]);
        assert_eq!(semer(&h, &truth(), &t), 0.0);
    }

    #[test]
    fn wrong_domain_reading_costs_two() {
        let t = toks("play moana");
        let h = hyp("PlayMusicIntent", vec![SlotChunk::new("AlbumName", 1, 2)]);
        assert_eq!(semer(&h, &truth(), &t), 1.0);
    }

    #[test]
    fn missing_slot_costs_half() {
        let t = toks("play moana");
        assert_eq!(semer(&hyp("ReadBookIntent", vec![]), &truth(), &t), 0.5);
    }

    #[test]
    fn wrong_span_is_a_substitution() {
        let t = toks("play the hobbit");
        let truth = Annotation {
            domain: "Books".into(),
            intent: "ReadBookIntent".into(),
            slots: vec![SlotChunk::new("BookName", 1, 3)],
        };
        let h = hyp("ReadBookIntent", vec![SlotChunk::new("BookName", 2, 3)]);
        assert_eq!(semer(&h, &truth, &t), 0.5);
    }

    #[test]
    fn extra_slots_can_exceed_one() {
        let t = toks("pause a b c");
        let truth = Annotation {
            domain: "Music".into(),
            intent: "PauseMusicIntent".into(),
            slots: vec![],
        };
        let h = hyp(
            "PlayMusicIntent",
            vec![SlotChunk::new("SongName", 1, 2), SlotChunk::new("ArtistName", 3, 4)],
        );
        assert_eq!(semer(&h, &truth, &t), 3.0);
    }

    #[test]
    fn ie_values() {
        assert_eq!(ie(0.0).unwrap(), 0);
        assert_eq!(ie(0.5).unwrap(), 1);
        assert_eq!(ie(2.0).unwrap(), 1);
        assert!(ie(-0.1).is_err());
        assert!(ie(f64::NAN).is_err());
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein::<u8>(b"", b"abc"), 3);
        assert_eq!(levenshtein(b"abc", b"abc"), 0);
    }
}
