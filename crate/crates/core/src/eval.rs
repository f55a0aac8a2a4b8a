//! Evaluation arithmetic: precision, recall, expected duplicates per report,
//! Wald intervals, Cohen's kappa and tabulated run summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub predicted: u64,
    pub pairs_compared: u64,
    pub reports_in_dataset: u64,
}

impl EvalCounts {
    pub fn check(&self) -> Result<()> {
        if self.predicted != self.true_positives + self.false_positives {
            return Err(Error::InvalidConfig(format!(
                "predicted {} != true positives {} + false positives {}",
                self.predicted, self.true_positives, self.false_positives
            )));
        }
        Ok(())
    }
}

pub fn precision(tp: u64, fp: u64) -> Result<f64> {
    if tp + fp == 0 {
        return Err(Error::Undefined("precision with no predicted pairs".into()));
    }
    Ok(tp as f64 / (tp + fp) as f64)
}

pub fn recall(tp: u64, fn_: u64) -> Result<f64> {
    if tp + fn_ == 0 {
        return Err(Error::Undefined("recall with no reference duplicates".into()));
    }
    Ok(tp as f64 / (tp + fn_) as f64)
}

/// True duplicates found per random pair, scaled to the N - 1 partners each
/// report has.
pub fn expected_duplicates_per_report(true_found: f64, pairs_compared: f64, n_reports: f64) -> Result<f64> {
    if !(pairs_compared > 0.0) {
        return Err(Error::Undefined("no pairs compared".into()));
    }
    if n_reports < 2.0 {
        return Err(Error::CorpusTooSmall {
            needed: 2,
            found: n_reports.max(0.0) as usize,
        });
    }
    Ok(true_found / pairs_compared * (n_reports - 1.0))
}

pub fn true_positives_per_billion(tp: f64, pairs_compared: f64) -> Result<f64> {
    if !(pairs_compared > 0.0) {
        return Err(Error::Undefined("no pairs compared".into()));
    }
    Ok(tp / pairs_compared * 1e9)
}

pub fn possible_pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Two-sided standard normal quantile for `confidence`.
pub fn z_value(confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence {confidence} outside (0, 1)")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + confidence / 2.0))
}

/// Wald interval clipped to [0, 1].
pub fn wald_ci(p_hat: f64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p_hat) || n == 0 {
        return Err(Error::InvalidConfig(format!("wald interval needs p in [0,1] and n >= 1, got p={p_hat} n={n}")));
    }
    let half = z_value(confidence)? * (p_hat * (1.0 - p_hat) / n as f64).sqrt();
    Ok(((p_hat - half).max(0.0), (p_hat + half).min(1.0)))
}

pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidConfig(format!(
            "label sequences differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Undefined("kappa of empty label sequences".into()));
    }
    let n = a.len() as f64;
    let mut agree = 0usize;
    let mut margins: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        agree += (x == y) as usize;
        margins.entry(x).or_default().0 += 1;
        margins.entry(y).or_default().1 += 1;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = margins.values().map(|(ca, cb)| (*ca as f64 / n) * (*cb as f64 / n)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::Undefined("kappa with chance agreement 1".into()));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Inputs for one precision-experiment row. Missing values are reported by
/// name when the table is assembled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRunSummary {
    pub model: String,
    pub n_reports: Option<f64>,
    pub pairs_compared: Option<f64>,
    pub predicted: Option<u64>,
    pub true_positives: Option<u64>,
    /// True positives plus otherwise-related pairs, when known.
    #[serde(default)]
    pub duplicates_or_related: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRow {
    pub model: String,
    pub n_reports: f64,
    pub pairs_compared: f64,
    pub predicted: u64,
    pub true_positives: u64,
    pub precision: f64,
    pub precision_ci: (f64, f64),
    pub precision_related: Option<f64>,
    pub tp_per_billion_pairs: f64,
    pub expected_per_report: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CountrySummary {
    pub country: String,
    pub model: String,
    pub n_reports: Option<u64>,
    pub remaining: Option<u64>,
    pub predicted_pairs: Option<u64>,
    pub sampled: Option<u64>,
    pub sampled_true: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountryRow {
    pub country: String,
    pub model: String,
    pub n_reports: u64,
    pub remaining: u64,
    pub possible_pairs: u64,
    pub predicted_pairs: u64,
    pub sampled_true: u64,
    pub sampled: u64,
    pub precision: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision_rows: Vec<PrecisionRow>,
    pub country_rows: Vec<CountryRow>,
}

fn require<T: Copy>(v: Option<T>, name: &str, owner: &str, missing: &mut Vec<String>) -> Option<T> {
    if v.is_none() {
        missing.push(format!("{owner}.{name}"));
    }
    v
}

pub fn assemble_table(runs: &[PrecisionRunSummary], countries: &[CountrySummary]) -> Result<EvalReport> {
    if runs.is_empty() && countries.is_empty() {
        return Err(Error::MissingInputs(vec!["runs".into()]));
    }
    let mut missing = Vec::new();
    let mut report = EvalReport::default();
    for r in runs {
        let n = require(r.n_reports, "n_reports", &r.model, &mut missing);
        let pairs = require(r.pairs_compared, "pairs_compared", &r.model, &mut missing);
        let predicted = require(r.predicted, "predicted", &r.model, &mut missing);
        let tp = require(r.true_positives, "true_positives", &r.model, &mut missing);
        let (Some(n), Some(pairs), Some(predicted), Some(tp)) = (n, pairs, predicted, tp) else {
            continue;
        };
        if tp > predicted {
            return Err(Error::InvalidConfig(format!("{}: more true positives than predictions", r.model)));
        }
        let p = precision(tp, predicted - tp)?;
        report.precision_rows.push(PrecisionRow {
            model: r.model.clone(),
            n_reports: n,
            pairs_compared: pairs,
            predicted,
            true_positives: tp,
            precision: p,
            precision_ci: wald_ci(p, predicted, 0.95)?,
            precision_related: r.duplicates_or_related.map(|x| x as f64 / predicted as f64),
            tp_per_billion_pairs: true_positives_per_billion(tp as f64, pairs)?,
            expected_per_report: expected_duplicates_per_report(tp as f64, pairs, n)?,
        });
    }
    for c in countries {
        let owner = format!("{}/{}", c.country, c.model);
        let n = require(c.n_reports, "n_reports", &owner, &mut missing);
        let remaining = require(c.remaining, "remaining", &owner, &mut missing);
        let predicted = require(c.predicted_pairs, "predicted_pairs", &owner, &mut missing);
        let (Some(n), Some(remaining), Some(predicted)) = (n, remaining, predicted) else {
            continue;
        };
        let sampled = c.sampled.unwrap_or(0);
        let sampled_true = c.sampled_true.unwrap_or(0);
        report.country_rows.push(CountryRow {
            country: c.country.clone(),
            model: c.model.clone(),
            n_reports: n,
            remaining,
            possible_pairs: possible_pairs(n),
            predicted_pairs: predicted,
            sampled_true,
            sampled,
            precision: (sampled > 0).then(|| sampled_true as f64 / sampled as f64),
        });
    }
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    Ok(report)
}

fn render(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(headers.to_vec(), &mut out);
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

impl EvalReport {
    /// Aligned plain-text rendering; values rounded for display only.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.precision_rows.is_empty() {
            let rows: Vec<Vec<String>> = self
                .precision_rows
                .iter()
                .map(|r| {
                    vec![
                        r.model.clone(),
                        format!("{:.1}", r.n_reports / 1e6),
                        format!("{:.1}", r.pairs_compared / 1e9),
                        r.predicted.to_string(),
                        r.true_positives.to_string(),
                        format!("{:.2}", r.precision),
                        format!("{:.2}", r.tp_per_billion_pairs),
                        format!("{:.2}", r.expected_per_report),
                    ]
                })
                .collect();
            out.push_str(&render(
                &[
                    "Model",
                    "N Reports (M)",
                    "N Random Pairs Compared (B)",
                    "Predicted Duplicates",
                    "True Positives",
                    "Precision",
                    "True Positives per Billion Pairs",
                    "True Duplicates Detected per Report",
                ],
                &rows,
            ));
        }
        if !self.country_rows.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            let rows: Vec<Vec<String>> = self
                .country_rows
                .iter()
                .map(|r| {
                    vec![
                        r.country.clone(),
                        r.model.clone(),
                        r.n_reports.to_string(),
                        r.remaining.to_string(),
                        format!("{:.1}", r.possible_pairs as f64 / 1e6),
                        r.predicted_pairs.to_string(),
                        format!("{}/{}", r.sampled_true, r.sampled),
                    ]
                })
                .collect();
            out.push_str(&render(
                &[
                    "Country",
                    "Model",
                    "N Reports",
                    "Remaining After Dedup",
                    "N Possible Pairs (M)",
                    "Predicted Duplicate Pairs",
                    "Precision",
                ],
                &rows,
            ));
        }
        out
    }
}
