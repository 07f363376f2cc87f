use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::loss::{CeSign, Gradient, RerankExample};
use super::WeightVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrainingScheme {
    /// Uniform weights, no training.
    Baseline,
    /// Expected SemER on in-domain utterances.
    R1,
    /// Expected cross-entropy on all utterances.
    R2,
    /// Weighted sum of both.
    R3,
}

impl TrainingScheme {
    pub const ALL: [TrainingScheme; 4] = [Self::Baseline, Self::R1, Self::R2, Self::R3];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Baseline => "Baseline",
            Self::R1 => "R1",
            Self::R2 => "R2",
            Self::R3 => "R3",
        }
    }
}

impl fmt::Display for TrainingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Self::Baseline),
            "r1" => Ok(Self::R1),
            "r2" => Ok(Self::R2),
            "r3" => Ok(Self::R3),
            _ => Err(Error::Config(format!("unknown training scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub k1: f64,
    pub k2: f64,
    /// Divide each loss term by its value at the initial weights.
    pub auto_scale: bool,
    pub ce_sign: CeSign,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            k1: 1.0,
            k2: 1.0,
            auto_scale: true,
            ce_sign: CeSign::Negated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub initial_step: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Learn an additive offset alongside the weights. It has no effect on the
    /// expected-SemER term, which is invariant to shifting all of an utterance's scores.
    pub fit_bias: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            max_iterations: 5000,
            tolerance: 1e-8,
            fit_bias: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    /// Recorded in the output; training itself is deterministic.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedReranker {
    pub domain: String,
    pub scheme: TrainingScheme,
    pub weights: WeightVector,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(skip)]
    pub objective_history: Vec<f64>,
}

/// `semer_coef · Σ E-SemER + ce_coef · Σ E-CE` over one domain's training examples, the
/// expected-SemER sum running over in-domain examples only.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub examples: &'a [RerankExample],
    pub lambda1: f64,
    pub lambda2: f64,
    pub semer_coef: f64,
    pub ce_coef: f64,
    pub ce_sign: CeSign,
}

impl Objective<'_> {
    /// Both loss terms and their gradients in one pass over the examples. Matches summing
    /// `esemer_loss` and `ece_loss` per example, without per-example allocation.
    fn terms(&self, w: &WeightVector, with_semer: bool, with_ce: bool) -> Result<(f64, Gradient, f64, Gradient)> {
        let (mut s_tot, mut gs, mut c_tot, mut gc) = (0.0, Gradient::default(), 0.0, Gradient::default());
        let flip = match self.ce_sign {
            CeSign::Negated => 1.0,
            CeSign::AsPrinted => -1.0,
        };
        // Per hypothesis: score, probability, CE value, dCE/ds.
        let mut buf: Vec<(f64, f64, f64, f64)> = Vec::new();
        for ex in self.examples {
            let semer_here = with_semer && ex.in_domain;
            if !semer_here && !with_ce {
                continue;
            }
            if ex.hyps.is_empty() {
                return Err(Error::EmptyInput("hypothesis scores"));
            }
            buf.clear();
            let mut max = f64::NEG_INFINITY;
            for h in &ex.hyps {
                let s = w.dot(&h.features);
                max = max.max(s);
                buf.push((s, 0.0, 0.0, 0.0));
            }
            let mut z = 0.0;
            for b in buf.iter_mut() {
                b.1 = (b.0 - max).exp();
                z += b.1;
            }
            let (mut e_semer, mut e_ce) = (0.0, 0.0);
            for (b, h) in buf.iter_mut().zip(&ex.hyps) {
                b.1 /= z;
                e_semer += b.1 * h.semer;
                if with_ce {
                    // softplus(s) = max(s, 0) + ln(1 + e^-|s|) and softplus(-s) = softplus(s) - s.
                    let a = (-b.0.abs()).exp();
                    let sp = b.0.max(0.0) + a.ln_1p();
                    let r = if b.0 >= 0.0 { 1.0 / (1.0 + a) } else { a / (1.0 + a) };
                    let (ce, dce) = if h.ie == 0 { (sp - b.0, r - 1.0) } else { (sp, r) };
                    b.2 = flip * ce;
                    b.3 = flip * dce;
                    e_ce += b.1 * b.2;
                }
            }
            if semer_here {
                s_tot += self.lambda1 * e_semer;
                for (b, h) in buf.iter().zip(&ex.hyps) {
                    let d = self.lambda1 * b.1 * (h.semer - e_semer);
                    for (g, x) in gs.w.iter_mut().zip(&h.features) {
                        *g += d * x;
                    }
                    gs.bias += d;
                }
            }
            if with_ce {
                c_tot += self.lambda2 * e_ce;
                for (b, h) in buf.iter().zip(&ex.hyps) {
                    let d = self.lambda2 * b.1 * ((b.2 - e_ce) + b.3);
                    for (g, x) in gc.w.iter_mut().zip(&h.features) {
                        *g += d * x;
                    }
                    gc.bias += d;
                }
            }
        }
        Ok((s_tot, gs, c_tot, gc))
    }

    /// Objective value and gradient at `w`.
    pub fn eval(&self, w: &WeightVector) -> Result<(f64, Gradient)> {
        let (s, gs, c, gc) = self.terms(w, self.semer_coef != 0.0, self.ce_coef != 0.0)?;
        let mut g = Gradient::default();
        let mut f = 0.0;
        if self.semer_coef != 0.0 {
            f += self.semer_coef * s;
            g.add_scaled(&gs, self.semer_coef);
        }
        if self.ce_coef != 0.0 {
            f += self.ce_coef * c;
            g.add_scaled(&gc, self.ce_coef);
        }
        Ok((f, g))
    }
}

fn term_scale(initial: f64) -> f64 {
    if initial.abs() > 1e-12 {
        initial.abs()
    } else {
        1.0
    }
}

/// Fits one domain's re-ranker by full-batch gradient descent with a backtracking step,
/// starting from uniform weights.
pub fn train(
    scheme: TrainingScheme,
    domain: &str,
    examples: &[RerankExample],
    cfg: &TrainConfig,
) -> Result<TrainedReranker> {
    let n_in = examples.iter().filter(|e| e.in_domain).count();
    let lambda1 = if n_in > 0 { 1.0 / n_in as f64 } else { 0.0 };
    let lambda2 = if examples.is_empty() { 0.0 } else { 1.0 / examples.len() as f64 };

    if scheme == TrainingScheme::Baseline {
        return Ok(TrainedReranker {
            domain: domain.to_string(),
            scheme,
            weights: WeightVector::uniform(),
            iterations: 0,
            converged: true,
            final_objective: 0.0,
            lambda1,
            lambda2,
            objective_history: Vec::new(),
        });
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput("re-ranker training set"));
    }
    if scheme == TrainingScheme::R1 && n_in == 0 {
        return Err(Error::DegenerateTraining(format!(
            "no in-domain utterances for {domain}"
        )));
    }
    let LossConfig { k1, k2, auto_scale, ce_sign } = cfg.loss;
    if !(k1 >= 0.0 && k2 >= 0.0 && k1 + k2 > 0.0) {
        return Err(Error::Config(format!("invalid loss weights k1={k1} k2={k2}")));
    }
    let opt = cfg.optimizer;
    if !(opt.initial_step > 0.0 && opt.tolerance >= 0.0) {
        return Err(Error::Config("invalid optimizer settings".into()));
    }

    let (k_semer, k_ce) = match scheme {
        TrainingScheme::R1 => (1.0, 0.0),
        TrainingScheme::R2 => (0.0, 1.0),
        TrainingScheme::R3 => (k1, k2),
        TrainingScheme::Baseline => unreachable!(),
    };
    let k_semer = if n_in == 0 { 0.0 } else { k_semer };
    // Only the cross-entropy term depends on the offset.
    let learn_bias = opt.fit_bias && k_ce != 0.0;
    let mut w = WeightVector::new([1.0; 3], learn_bias.then_some(0.0));

    let mut objective = Objective {
        examples,
        lambda1,
        lambda2,
        semer_coef: k_semer,
        ce_coef: k_ce,
        ce_sign,
    };
    if auto_scale {
        let (s0, _, c0, _) = objective.terms(&w, k_semer != 0.0, k_ce != 0.0)?;
        objective.semer_coef = k_semer / term_scale(s0);
        objective.ce_coef = k_ce / term_scale(c0);
    }

    let (mut f, mut g) = objective.eval(&w)?;
    let mut history = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    'outer: while iterations < opt.max_iterations {
        if g.norm() == 0.0 {
            converged = true;
            break;
        }
        let mut step = opt.initial_step;
        let (trial, ft, gt) = loop {
            let mut trial = w;
            for (x, d) in trial.w.iter_mut().zip(&g.w) {
                *x -= step * d;
            }
            if let Some(b) = trial.bias.as_mut() {
                *b -= step * g.bias;
            }
            let (ft, gt) = objective.eval(&trial)?;
            if ft.is_finite() && ft <= f {
                break (trial, ft, gt);
            }
            step *= 0.5;
            if step < 1e-30 {
                converged = true;
                break 'outer;
            }
        };
        iterations += 1;
        let delta = f - ft;
        w = trial;
        f = ft;
        g = gt;
        history.push(f);
        if delta < opt.tolerance {
            converged = true;
            break;
        }
    }
    if !w.is_finite() {
        return Err(Error::DegenerateTraining(format!("non-finite weights for {domain}")));
    }

    Ok(TrainedReranker {
        domain: domain.to_string(),
        scheme,
        weights: w,
        iterations,
        converged,
        final_objective: f,
        lambda1,
        lambda2,
        objective_history: history,
    })
}
