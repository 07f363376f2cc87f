//! Multinomial maximum-entropy (log-linear) classifier over sparse string features, fitted by
//! fixed-step full-batch gradient descent on the L2-regularized mean negative log-likelihood.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaxEntConfig {
    pub l2: f64,
    pub epochs: usize,
    pub step: f64,
}

impl Default for MaxEntConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 200,
            step: 0.5,
        }
    }
}

/// Sparse feature-count vector.
#[derive(Debug, Clone)]
pub(crate) struct Encoded {
    pub x: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params {
    /// Row-major `features x labels`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "MaxEntRepr", into = "MaxEntRepr")]
pub struct MaxEntModel {
    labels: Vec<String>,
    features: Vec<String>,
    index: HashMap<String, u32>,
    params: Params,
}

#[derive(Serialize, Deserialize)]
struct MaxEntRepr {
    labels: Vec<String>,
    features: Vec<String>,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<MaxEntRepr> for MaxEntModel {
    fn from(r: MaxEntRepr) -> Self {
        let index = r
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i as u32))
            .collect();
        Self {
            labels: r.labels,
            features: r.features,
            index,
            params: Params {
                w: r.weights,
                b: r.bias,
            },
        }
    }
}

impl From<MaxEntModel> for MaxEntRepr {
    fn from(m: MaxEntModel) -> Self {
        Self {
            labels: m.labels,
            features: m.features,
            weights: m.params.w,
            bias: m.params.b,
        }
    }
}

/// A trained model plus the objective value before each epoch and after the last one.
#[derive(Debug, Clone)]
pub struct MaxEntFit {
    pub model: MaxEntModel,
    pub loss_history: Vec<f64>,
}

pub(crate) fn encode<S: AsRef<str>>(bag: &[S], lookup: impl Fn(&str) -> Option<u32>) -> Encoded {
    let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
    for f in bag {
        *counts.entry(f.as_ref()).or_default() += 1.0;
    }
    let mut x: Vec<(u32, f64)> = counts
        .into_iter()
        .filter_map(|(f, c)| lookup(f).map(|i| (i, c)))
        .collect();
    x.sort_by_key(|&(i, _)| i);
    Encoded { x }
}

pub(crate) fn logits(params: &Params, n_labels: usize, x: &Encoded, out: &mut [f64]) {
    out.copy_from_slice(&params.b);
    for &(f, v) in &x.x {
        let row = &params.w[f as usize * n_labels..(f as usize + 1) * n_labels];
        for (o, w) in out.iter_mut().zip(row) {
            *o += v * w;
        }
    }
}

/// In-place log-softmax of `z / temperature`.
pub fn log_softmax_tempered(z: &mut [f64], temperature: f64) {
    for v in z.iter_mut() {
        *v /= temperature;
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in z.iter_mut() {
        *v -= lse;
    }
}

/// Mean negative log-likelihood plus `l2 / 2 * ||w||^2` (bias unregularized), and its gradient.
pub(crate) fn nll_and_grad(
    params: &Params,
    data: &[(Encoded, usize)],
    n_labels: usize,
    l2: f64,
) -> (f64, Params) {
    let mut grad = Params {
        w: vec![0.0; params.w.len()],
        b: vec![0.0; n_labels],
    };
    let mut z = vec![0.0; n_labels];
    let mut loss = 0.0;
    for (x, y) in data {
        logits(params, n_labels, x, &mut z);
        log_softmax_tempered(&mut z, 1.0);
        loss -= z[*y];
        for (k, lp) in z.iter_mut().enumerate() {
            *lp = lp.exp() - if k == *y { 1.0 } else { 0.0 };
        }
        for (gb, g) in grad.b.iter_mut().zip(&z) {
            *gb += g;
        }
        for &(f, v) in &x.x {
            let row = &mut grad.w[f as usize * n_labels..(f as usize + 1) * n_labels];
            for (gw, g) in row.iter_mut().zip(&z) {
                *gw += v * g;
            }
        }
    }
    let scale = 1.0 / data.len() as f64;
    loss *= scale;
    for g in grad.b.iter_mut() {
        *g *= scale;
    }
    for (g, w) in grad.w.iter_mut().zip(&params.w) {
        *g = *g * scale + l2 * w;
    }
    loss += 0.5 * l2 * params.w.iter().map(|w| w * w).sum::<f64>();
    (loss, grad)
}

/// Fits a multinomial log-linear model by full-batch gradient descent.
pub fn train_maxent<S: AsRef<str>, L: AsRef<str>>(
    examples: &[(Vec<S>, L)],
    cfg: &MaxEntConfig,
) -> Result<MaxEntFit> {
    if cfg.l2.is_nan() || cfg.l2 < 0.0 || cfg.step.is_nan() || cfg.step <= 0.0 {
        return Err(Error::Config(format!(
            "invalid maxent settings l2={} step={}",
            cfg.l2, cfg.step
        )));
    }
    let mut labels: Vec<String> = examples.iter().map(|(_, l)| l.as_ref().to_string()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::DegenerateTraining(format!(
            "need at least two distinct labels, found {}",
            labels.len()
        )));
    }

    let mut index: HashMap<String, u32> = HashMap::new();
    let mut features: Vec<String> = Vec::new();
    for (bag, _) in examples {
        for f in bag {
            if !index.contains_key(f.as_ref()) {
                index.insert(f.as_ref().to_string(), features.len() as u32);
                features.push(f.as_ref().to_string());
            }
        }
    }
    let data: Vec<(Encoded, usize)> = examples
        .iter()
        .map(|(bag, l)| {
            let y = labels.binary_search_by(|x| x.as_str().cmp(l.as_ref())).unwrap();
            (encode(bag, |f| index.get(f).copied()), y)
        })
        .collect();

    let k = labels.len();
    let mut params = Params {
        w: vec![0.0; features.len() * k],
        b: vec![0.0; k],
    };
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        let (loss, grad) = nll_and_grad(&params, &data, k, cfg.l2);
        history.push(loss);
        for (w, g) in params.w.iter_mut().zip(&grad.w) {
            *w -= cfg.step * g;
        }
        for (b, g) in params.b.iter_mut().zip(&grad.b) {
            *b -= cfg.step * g;
        }
    }
    history.push(nll_and_grad(&params, &data, k, cfg.l2).0);

    Ok(MaxEntFit {
        model: MaxEntModel {
            labels,
            features,
            index,
            params,
        },
        loss_history: history,
    })
}

impl MaxEntModel {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn is_trained(&self) -> bool {
        self.labels.len() >= 2 && self.params.b.len() == self.labels.len()
    }

    /// Raw scores per label; features unseen in training are ignored.
    pub fn logits<S: AsRef<str>>(&self, bag: &[S]) -> Vec<f64> {
        let x = encode(bag, |f| self.index.get(f).copied());
        let mut z = vec![0.0; self.labels.len()];
        logits(&self.params, self.labels.len(), &x, &mut z);
        z
    }

    /// Log-probabilities per label after dividing the logits by `temperature`.
    pub fn log_probs<S: AsRef<str>>(&self, bag: &[S], temperature: f64) -> Vec<f64> {
        let mut z = self.logits(bag);
        log_softmax_tempered(&mut z, temperature);
        z
    }

    pub fn predict<S: AsRef<str>>(&self, bag: &[S]) -> &str {
        let lp = self.logits(bag);
        let best = lp
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > lp[best] { i } else { best });
        &self.labels[best]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bag(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn separable_two_class_reaches_full_accuracy() {
        let examples = vec![
            (bag("a x"), "pos"),
            (bag("a y"), "pos"),
            (bag("a z"), "pos"),
            (bag("b x"), "neg"),
            (bag("b y"), "neg"),
            (bag("b z"), "neg"),
        ];
        let cfg = MaxEntConfig {
            l2: 0.0,
            ..Default::default()
        };
        let fit = train_maxent(&examples, &cfg).unwrap();
        let correct = examples
            .iter()
            .filter(|(b, l)| fit.model.predict(b) == *l)
            .count();
        assert_eq!(correct, examples.len());
    }

    #[test]
    fn uniform_noise_recovers_label_prior() {
        // Features carry no information; labels drawn with frequencies 0.6 / 0.3 / 0.1.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut examples = Vec::new();
        let mut counts = [0usize; 3];
        for _ in 0..2000 {
            let u: f64 = rng.gen();
            let y = if u < 0.6 { 0 } else if u < 0.9 { 1 } else { 2 };
            counts[y] += 1;
            let f = format!("f{}", rng.gen_range(0..5));
            examples.push((vec![f], ["a", "b", "c"][y]));
        }
        let cfg = MaxEntConfig {
            l2: 0.1,
            ..Default::default()
        };
        let fit = train_maxent(&examples, &cfg).unwrap();
        let n = examples.len() as f64;
        for f in 0..5 {
            let lp = fit.model.log_probs(&[format!("f{f}")], 1.0);
            for (k, c) in counts.iter().enumerate() {
                let p = lp[k].exp();
                let freq = *c as f64 / n;
                assert!((p - freq).abs() < 0.05, "f{f} label {k}: {p} vs {freq}");
            }
        }
    }

    #[test]
    fn single_label_is_degenerate() {
        let examples = vec![(bag("a"), "x"), (bag("b"), "x")];
        assert!(matches!(
            train_maxent(&examples, &MaxEntConfig::default()),
            Err(Error::DegenerateTraining(_))
        ));
    }

    #[test]
    fn loss_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let examples: Vec<(Vec<String>, String)> = (0..300)
            .map(|_| {
                let n = rng.gen_range(1..6);
                let b = (0..n).map(|_| format!("f{}", rng.gen_range(0..20))).collect();
                (b, format!("l{}", rng.gen_range(0..4)))
            })
            .collect();
        let fit = train_maxent(&examples, &MaxEntConfig::default()).unwrap();
        for pair in fit.loss_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn probabilities_normalize() {
        let examples = vec![(bag("a"), "x"), (bag("b"), "y"), (bag("c"), "z")];
        let fit = train_maxent(&examples, &MaxEntConfig::default()).unwrap();
        for t in [0.3, 1.0, 2.5] {
            let s: f64 = fit.model.log_probs(&bag("a b q"), t).iter().map(|l| l.exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let (nf, k) = (rng.gen_range(2..6), rng.gen_range(2..5));
            let data: Vec<(Encoded, usize)> = (0..rng.gen_range(3..10))
                .map(|_| {
                    let bag: Vec<u32> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..nf)).collect();
                    let x = encode(&bag.iter().map(|i| i.to_string()).collect::<Vec<_>>(), |f| {
                        f.parse().ok()
                    });
                    (x, rng.gen_range(0..k))
                })
                .collect();
            let params = Params {
                w: (0..nf as usize * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                b: (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            let l2 = 0.05;
            let (_, grad) = nll_and_grad(&params, &data, k, l2);
            let h = 1e-6;
            let analytic: Vec<f64> = grad.w.iter().chain(&grad.b).copied().collect();
            for (i, &a) in analytic.iter().enumerate() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                let nw = plus.w.len();
                if i < nw {
                    plus.w[i] += h;
                    minus.w[i] -= h;
                } else {
                    plus.b[i - nw] += h;
                    minus.b[i - nw] -= h;
                }
                let fd = (nll_and_grad(&plus, &data, k, l2).0 - nll_and_grad(&minus, &data, k, l2).0)
                    / (2.0 * h);
                let denom = a.abs().max(fd.abs()).max(1e-8);
                assert!(
                    (a - fd).abs() / denom < 1e-5 || (a - fd).abs() < 1e-9,
                    "coord {i}: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn serde_round_trip_preserves_predictions() {
        let examples = vec![(bag("a x"), "p"), (bag("b y"), "q")];
        let fit = train_maxent(&examples, &MaxEntConfig::default()).unwrap();
        let json = serde_json::to_string(&fit.model).unwrap();
        let back: MaxEntModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fit.model);
        assert_eq!(back.logits(&bag("a y")), fit.model.logits(&bag("a y")));
    }
}
