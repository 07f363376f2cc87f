//! Reliability diagrams over top-hypothesis confidences and the expected calibration error.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::decode::TopRecord;
use crate::error::{Error, Result};

pub const NUM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    CrossDomain,
    Domain(String),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::CrossDomain => f.write_str("all"),
            Scope::Domain(d) => f.write_str(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_confidence: Option<f64>,
    pub fraction_correct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub scope: Scope,
    pub total: usize,
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
}

fn bin_low(k: usize) -> f64 {
    k as f64 / NUM_BINS as f64
}

/// Bin `k` covers `[k/10, (k+1)/10)`; the last bin also holds 1.0.
pub fn bin_index(r: f64) -> usize {
    let mut k = ((r * NUM_BINS as f64).floor() as usize).min(NUM_BINS - 1);
    // Guard against rounding in `r * 10` near bin edges.
    if k > 0 && r < bin_low(k) {
        k -= 1;
    } else if k + 1 < NUM_BINS && r >= bin_low(k + 1) {
        k += 1;
    }
    k
}

/// Bins `(confidence, ie)` pairs; an entry is correct when `ie == 0`.
pub fn reliability(entries: &[(f64, u8)], scope: Scope) -> Result<ReliabilityReport> {
    let mut conf_sum = [0.0; NUM_BINS];
    let mut correct = [0usize; NUM_BINS];
    let mut counts = [0usize; NUM_BINS];
    for &(r, ie) in entries {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::OutOfRange(format!("confidence {r} outside [0, 1]")));
        }
        let k = bin_index(r);
        counts[k] += 1;
        conf_sum[k] += r;
        correct[k] += usize::from(ie == 0);
    }
    let total = entries.len();
    let mut ece = 0.0;
    let bins = (0..NUM_BINS)
        .map(|k| {
            let (mean_confidence, fraction_correct) = if counts[k] == 0 {
                (None, None)
            } else {
                let c = counts[k] as f64;
                let mean = conf_sum[k] / c;
                let frac = correct[k] as f64 / c;
                ece += c / total as f64 * (mean - frac).abs();
                (Some(mean), Some(frac))
            };
            ReliabilityBin {
                low: bin_low(k),
                high: bin_low(k + 1),
                count: counts[k],
                mean_confidence,
                fraction_correct,
            }
        })
        .collect();
    Ok(ReliabilityReport {
        scope,
        total,
        bins,
        ece,
    })
}

/// Cross-domain report plus one report per top-hypothesis domain.
pub fn reliability_by_scope(records: &[TopRecord]) -> Result<Vec<ReliabilityReport>> {
    let all: Vec<(f64, u8)> = records.iter().map(|r| (r.confidence, r.ie)).collect();
    let mut out = vec![reliability(&all, Scope::CrossDomain)?];
    let mut by_domain: BTreeMap<&str, Vec<(f64, u8)>> = BTreeMap::new();
    for r in records {
        by_domain.entry(&r.domain).or_default().push((r.confidence, r.ie));
    }
    for (d, entries) in by_domain {
        out.push(reliability(&entries, Scope::Domain(d.to_string()))?);
    }
    Ok(out)
}

/// Tab-separated curve data, one row per bin and scope. Empty bins print `nan`.
pub fn curves_tsv(reports: &[ReliabilityReport]) -> String {
    let mut out = String::from("scope\tbin_low\tbin_high\tcount\tmean_conf\tfrac_correct\n");
    let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
    for rep in reports {
        for b in &rep.bins {
            let _ = writeln!(
                out,
                "{}\t{:.1}\t{:.1}\t{}\t{}\t{}",
                rep.scope,
                b.low,
                b.high,
                b.count,
                fmt(b.mean_confidence),
                fmt(b.fraction_correct)
            );
        }
    }
    out
}

/// A scheme's top-hypothesis records on the shared test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRun {
    pub scheme: String,
    pub records: Vec<TopRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scheme: String,
    pub semer: f64,
    pub ie_rate: f64,
    pub ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// Scheme -> reliability reports (cross-domain first, then per domain).
    pub curves: BTreeMap<String, Vec<ReliabilityReport>>,
}

impl ComparisonTable {
    pub fn row(&self, scheme: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.scheme == scheme)
    }
}

pub fn compare_schemes(runs: &[SchemeRun]) -> Result<ComparisonTable> {
    let Some(first) = runs.first() else {
        return Err(Error::Config("no schemes to compare".into()));
    };
    if first.records.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    for run in runs {
        let same = run.records.len() == first.records.len()
            && run
                .records
                .iter()
                .zip(&first.records)
                .all(|(a, b)| a.utterance_id == b.utterance_id);
        if !same {
            return Err(Error::Config(format!(
                "scheme {} was evaluated on a different test set than {}",
                run.scheme, first.scheme
            )));
        }
    }
    let mut rows = Vec::with_capacity(runs.len());
    let mut curves = BTreeMap::new();
    for run in runs {
        let n = run.records.len() as f64;
        let reports = reliability_by_scope(&run.records)?;
        rows.push(ComparisonRow {
            scheme: run.scheme.clone(),
            semer: run.records.iter().map(|r| r.semer).sum::<f64>() / n,
            ie_rate: run.records.iter().map(|r| r.ie as f64).sum::<f64>() / n,
            ece: reports[0].ece,
        });
        curves.insert(run.scheme.clone(), reports);
    }
    Ok(ComparisonTable { rows, curves })
}
