//! Per-domain linear re-ranking of hypotheses.

mod file;
mod loss;
mod train;

pub use file::{TrainingMetadata, WeightFile, WEIGHT_FORMAT_VERSION};
pub use loss::{ece_loss, esemer_loss, CeSign, Gradient, LabeledHypothesis, RerankExample};
pub use train::{
    train, LossConfig, Objective, OptimizerConfig, TrainConfig, TrainedReranker, TrainingScheme,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{Hypothesis, FEATURE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: [f64; FEATURE_DIM],
    pub bias: Option<f64>,
}

impl WeightVector {
    /// Uniform weights: the score is the summed component log-probability.
    pub const fn uniform() -> Self {
        Self {
            w: [1.0; FEATURE_DIM],
            bias: None,
        }
    }

    pub fn new(w: [f64; FEATURE_DIM], bias: Option<f64>) -> Self {
        Self { w, bias }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite()) && self.bias.is_none_or(f64::is_finite)
    }

    pub(crate) fn dot(&self, l: &[f64; FEATURE_DIM]) -> f64 {
        let mut s = self.bias.unwrap_or(0.0);
        for (w, x) in self.w.iter().zip(l) {
            s += w * x;
        }
        s
    }
}

/// `wᵀl (+ bias)`.
pub fn score(w: &WeightVector, l: &[f64]) -> Result<f64> {
    let l: &[f64; FEATURE_DIM] = l.try_into().map_err(|_| Error::Shape {
        expected: FEATURE_DIM,
        got: l.len(),
    })?;
    Ok(w.dot(l))
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Softmax over one utterance's in-domain hypothesis scores, with max subtraction.
pub fn hypothesis_softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("hypothesis scores"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = p.iter().sum();
    for v in &mut p {
        *v /= z;
    }
    Ok(p)
}

/// Scores every hypothesis in place and returns the best; ties go to the lowest index.
pub fn top_hypothesis<'a>(w: &WeightVector, hyps: &'a mut [Hypothesis]) -> Result<&'a Hypothesis> {
    if hyps.is_empty() {
        return Err(Error::EmptyInput("hypothesis list"));
    }
    for h in hyps.iter_mut() {
        h.score = Some(w.dot(&h.features));
    }
    let best = (0..hyps.len()).fold(0, |best, i| {
        let (si, sb) = (hyps[i].score.unwrap(), hyps[best].score.unwrap());
        if si > sb || (si == sb && hyps[i].index < hyps[best].index) {
            i
        } else {
            best
        }
    });
    Ok(&hyps[best])
}
