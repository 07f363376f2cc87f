//! Expected-SemER and expected cross-entropy losses for one utterance, with analytic
//! gradients through the hypothesis softmax and the sigmoid confidence.

use serde::{Deserialize, Serialize};

use super::{hypothesis_softmax, sigmoid, softplus, WeightVector};
use crate::error::{Error, Result};
use crate::hypothesis::FEATURE_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledHypothesis {
    pub features: [f64; FEATURE_DIM],
    pub semer: f64,
    pub ie: u8,
}

/// One utterance's hypotheses from a single domain, labeled against the utterance's truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankExample {
    pub utterance_id: String,
    /// Whether the utterance's true domain is the re-ranker's domain.
    pub in_domain: bool,
    pub hyps: Vec<LabeledHypothesis>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Gradient {
    pub w: [f64; FEATURE_DIM],
    pub bias: f64,
}

impl Gradient {
    pub(crate) fn add_scaled(&mut self, other: &Gradient, k: f64) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += k * b;
        }
        self.bias += k * other.bias;
    }

    pub fn norm(&self) -> f64 {
        (self.w.iter().map(|g| g * g).sum::<f64>() + self.bias * self.bias).sqrt()
    }
}

/// Which sign of the expected cross-entropy term is minimized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeSign {
    /// `-[(1-IE) log r + IE log(1-r)]`: a proper cross-entropy, bounded below by zero.
    #[default]
    Negated,
    /// `(1-IE) log r + IE log(1-r)` taken literally; unbounded below under minimization.
    AsPrinted,
}

/// Back-propagates `dL/ds` into the weight gradient.
fn chain(hyps: &[LabeledHypothesis], dl_ds: &[f64]) -> Gradient {
    let mut g = Gradient::default();
    for (h, d) in hyps.iter().zip(dl_ds) {
        for (gw, x) in g.w.iter_mut().zip(&h.features) {
            *gw += d * x;
        }
        g.bias += d;
    }
    g
}

fn scores(w: &WeightVector, hyps: &[LabeledHypothesis]) -> Vec<f64> {
    hyps.iter().map(|h| w.dot(&h.features)).collect()
}

/// `λ₁ Σᵢ pᵢ SemERᵢ` over an in-domain utterance's hypotheses.
pub fn esemer_loss(w: &WeightVector, ex: &RerankExample, lambda1: f64) -> Result<(f64, Gradient)> {
    if !ex.in_domain {
        return Err(Error::Contract(format!(
            "expected SemER is defined on in-domain utterances only ({})",
            ex.utterance_id
        )));
    }
    let p = hypothesis_softmax(&scores(w, &ex.hyps))?;
    let expected: f64 = p.iter().zip(&ex.hyps).map(|(p, h)| p * h.semer).sum();
    let dl_ds: Vec<f64> = p
        .iter()
        .zip(&ex.hyps)
        .map(|(p, h)| lambda1 * p * (h.semer - expected))
        .collect();
    Ok((lambda1 * expected, chain(&ex.hyps, &dl_ds)))
}

/// `λ₂ Σᵢ pᵢ CE(IEᵢ, σ(sᵢ))`, the correct class (IE = 0) being the positive target of `r`.
pub fn ece_loss(
    w: &WeightVector,
    ex: &RerankExample,
    lambda2: f64,
    sign: CeSign,
) -> Result<(f64, Gradient)> {
    let s = scores(w, &ex.hyps);
    let p = hypothesis_softmax(&s)?;
    let flip = match sign {
        CeSign::Negated => 1.0,
        CeSign::AsPrinted => -1.0,
    };
    // -log r = softplus(-s), -log(1 - r) = softplus(s).
    let ce: Vec<f64> = s
        .iter()
        .zip(&ex.hyps)
        .map(|(s, h)| {
            let v = if h.ie == 0 { softplus(-s) } else { softplus(*s) };
            flip * v
        })
        .collect();
    let expected: f64 = p.iter().zip(&ce).map(|(p, c)| p * c).sum();
    let dl_ds: Vec<f64> = s
        .iter()
        .zip(&ex.hyps)
        .zip(p.iter().zip(&ce))
        .map(|((s, h), (p, c))| {
            let target = if h.ie == 0 { 1.0 } else { 0.0 };
            let dce = flip * (sigmoid(*s) - target);
            lambda2 * p * ((c - expected) + dce)
        })
        .collect();
    Ok((lambda2 * expected, chain(&ex.hyps, &dl_ds)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example(hyps: Vec<LabeledHypothesis>) -> RerankExample {
        RerankExample {
            utterance_id: "u".into(),
            in_domain: true,
            hyps,
        }
    }

    fn lh(features: [f64; 3], semer: f64) -> LabeledHypothesis {
        LabeledHypothesis {
            features,
            semer,
            ie: u8::from(semer != 0.0),
        }
    }

    #[test]
    fn constant_semer_has_zero_gradient() {
        let ex = example(vec![lh([-0.1, -0.5, -2.0], 0.5), lh([-0.3, -0.2, -0.1], 0.5)]);
        let (loss, g) = esemer_loss(&WeightVector::uniform(), &ex, 0.25).unwrap();
        assert!((loss - 0.125).abs() < 1e-15);
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn single_hypothesis_esemer() {
        let ex = example(vec![lh([-0.1, -0.5, -2.0], 0.5)]);
        let (loss, g) = esemer_loss(&WeightVector::uniform(), &ex, 0.1).unwrap();
        assert!((loss - 0.05).abs() < 1e-15);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn out_of_domain_esemer_is_rejected() {
        let mut ex = example(vec![lh([-0.1, -0.5, -2.0], 1.0)]);
        ex.in_domain = false;
        assert!(matches!(
            esemer_loss(&WeightVector::uniform(), &ex, 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn ce_at_zero_score_is_log_two() {
        let zero = WeightVector::new([0.0; 3], None);
        for semer in [0.0, 1.0] {
            let ex = example(vec![lh([-1.0, -1.0, -1.0], semer)]);
            let (loss, _) = ece_loss(&zero, &ex, 0.2, CeSign::Negated).unwrap();
            assert!((loss - 0.2 * 2f64.ln()).abs() < 1e-15);
            let (printed, _) = ece_loss(&zero, &ex, 0.2, CeSign::AsPrinted).unwrap();
            assert!((printed + 0.2 * 2f64.ln()).abs() < 1e-15);
        }
        assert!(ece_loss(&zero, &example(vec![]), 1.0, CeSign::Negated).is_err());
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (WeightVector, RerankExample) {
        let w = WeightVector::new(
            [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
            Some(rng.gen_range(-1.0..1.0)),
        );
        let hyps = (0..n)
            .map(|_| {
                let semer = [0.0, 0.5, 1.0, 1.5][rng.gen_range(0..4)];
                lh(
                    [rng.gen_range(-3.0..0.0), rng.gen_range(-3.0..0.0), rng.gen_range(-3.0..0.0)],
                    semer,
                )
            })
            .collect();
        (w, example(hyps))
    }

    fn check_fd(f: impl Fn(&WeightVector) -> (f64, Gradient), w: &WeightVector) {
        let (_, g) = f(w);
        let h = 1e-6;
        let analytic = [g.w[0], g.w[1], g.w[2], g.bias];
        for (k, a) in analytic.iter().enumerate() {
            let (mut plus, mut minus) = (*w, *w);
            if k < 3 {
                plus.w[k] += h;
                minus.w[k] -= h;
            } else {
                plus.bias = Some(plus.bias.unwrap() + h);
                minus.bias = Some(minus.bias.unwrap() - h);
            }
            let fd = (f(&plus).0 - f(&minus).0) / (2.0 * h);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            assert!(err < 1e-5, "coord {k}: analytic {a} fd {fd}");
        }
    }

    #[test]
    fn esemer_gradient_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (w, ex) = random_instance(&mut rng, 4);
            check_fd(|w| esemer_loss(w, &ex, 0.3).unwrap(), &w);
        }
    }

    #[test]
    fn ece_gradient_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (w, ex) = random_instance(&mut rng, 5);
            check_fd(|w| ece_loss(w, &ex, 0.7, CeSign::Negated).unwrap(), &w);
            check_fd(|w| ece_loss(w, &ex, 0.7, CeSign::AsPrinted).unwrap(), &w);
        }
    }

    #[test]
    fn esemer_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (w, ex) = random_instance(&mut rng, 4);
            let mut shifted = w;
            shifted.bias = Some(w.bias.unwrap() + rng.gen_range(-50.0..50.0));
            let a = esemer_loss(&w, &ex, 1.0).unwrap().0;
            let b = esemer_loss(&shifted, &ex, 1.0).unwrap().0;
            assert!((a - b).abs() < 1e-12);
        }
    }
}
