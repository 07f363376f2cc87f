//! N-gram feature extraction for the domain classifiers and the slot tagger.

const BOS: &str = "<s>";
const EOS: &str = "</s>";

fn padded(tokens: &[String], i: isize) -> &str {
    if i < 0 {
        BOS
    } else {
        tokens.get(i as usize).map_or(EOS, String::as_str)
    }
}

/// Unigrams and bigrams of the utterance, with sentence boundary sentinels on the bigrams.
pub fn utterance_features(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() * 2 + 1);
    for t in tokens {
        out.push(format!("u={t}"));
    }
    for i in 0..=tokens.len() as isize {
        out.push(format!("b={}|{}", padded(tokens, i - 1), padded(tokens, i)));
    }
    out
}

fn is_sentinel(t: &str) -> bool {
    t == BOS || t == EOS
}

/// Context features for tagging token `i`. Features built from sentinels alone are left
/// out, so a token with no known words around it falls back to the tag prior.
pub fn token_features(tokens: &[String], i: usize) -> Vec<String> {
    let i = i as isize;
    let (prev2, prev, cur, next) = (
        padded(tokens, i - 2),
        padded(tokens, i - 1),
        padded(tokens, i),
        padded(tokens, i + 1),
    );
    let mut out = vec![format!("w={cur}")];
    if !is_sentinel(prev) {
        out.push(format!("p={prev}"));
        out.push(format!("pp={prev2}|{prev}"));
    }
    if !is_sentinel(next) {
        out.push(format!("n={next}"));
    }
    out.push(format!("pw={prev}|{cur}"));
    out.push(format!("wn={cur}|{next}"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn unigrams_and_bigrams_with_sentinels() {
        let f = utterance_features(&toks("play moana"));
        assert_eq!(
            f,
            vec!["u=play", "u=moana", "b=<s>|play", "b=play|moana", "b=moana|</s>"]
        );
    }

    #[test]
    fn token_context() {
        let f = token_features(&toks("play moana"), 1);
        assert_eq!(f, vec!["w=moana", "p=play", "pp=<s>|play", "pw=play|moana", "wn=moana|</s>"]);
        let f = token_features(&toks("pause"), 0);
        assert_eq!(f, vec!["w=pause", "pw=<s>|pause", "wn=pause|</s>"]);
    }
}
