//! Hit-miss log-likelihood-ratio weights.
//!
//! Under the hit-miss model a recorded value equals the true value with
//! probability `1 - alpha` ("hit") and is otherwise an independent draw from
//! the field's value distribution ("miss"). Weights compare two reports
//! describing the same case against two independent reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::{CategoricalFrequency, CountTable, FrequencyTables, ItemId};

/// Log-likelihood ratio for a categorical field.
///
/// Missing values on either side contribute 0; mismatches carry the same
/// penalty whatever the values are.
pub fn categorical_weight(
    a: Option<&str>,
    b: Option<&str>,
    freq: &CategoricalFrequency,
    alpha: f64,
) -> Result<f64> {
    let (Some(a), Some(b)) = (a, b) else {
        return Ok(0.0);
    };
    let fa = freq.frequency(a)?;
    if a == b {
        Ok(categorical_match(fa, alpha))
    } else {
        freq.frequency(b)?;
        Ok(categorical_mismatch(alpha))
    }
}

#[inline]
pub fn categorical_match(f: f64, alpha: f64) -> f64 {
    let hit = 1.0 - alpha;
    let dup = hit * hit * f + 2.0 * alpha * hit * f * f + alpha * alpha * f * f;
    (dup / (f * f)).ln()
}

#[inline]
pub fn categorical_mismatch(alpha: f64) -> f64 {
    (alpha * (2.0 - alpha)).ln()
}

/// Reward for an item listed on both reports, with reporting rate `f`.
#[inline]
pub fn vector_match_term(f: f64, alpha: f64) -> f64 {
    let present_if_true = 1.0 - alpha + alpha * f;
    let present_if_false = alpha * f;
    let dup = f * present_if_true * present_if_true + (1.0 - f) * present_if_false * present_if_false;
    (dup / (f * f)).ln()
}

/// Penalty for an item listed on exactly one report.
#[inline]
pub fn vector_mismatch_term(f: f64, alpha: f64) -> f64 {
    let present_if_true = 1.0 - alpha + alpha * f;
    let present_if_false = alpha * f;
    let dup = f * present_if_true * (1.0 - present_if_true)
        + (1.0 - f) * present_if_false * (1.0 - present_if_false);
    (dup / (f * (1.0 - f))).ln()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VectorWeight {
    pub match_sum: f64,
    pub mismatch_sum: f64,
}

impl VectorWeight {
    pub fn total(&self) -> f64 {
        self.match_sum + self.mismatch_sum
    }
}

/// Binary-vector weight over two sorted, deduplicated item lists. Items
/// present on both sides are appended to `matched`.
pub fn vector_weight(
    a: &[ItemId],
    b: &[ItemId],
    table: &CountTable,
    alpha: f64,
    matched: &mut Vec<ItemId>,
) -> VectorWeight {
    let mut w = VectorWeight::default();
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j == b.len() || (i < a.len() && a[i] < b[j]);
        let take_b = i == a.len() || (j < b.len() && b[j] < a[i]);
        if take_a {
            w.mismatch_sum += vector_mismatch_term(table.rate(a[i]), alpha);
            i += 1;
        } else if take_b {
            w.mismatch_sum += vector_mismatch_term(table.rate(b[j]), alpha);
            j += 1;
        } else {
            w.match_sum += vector_match_term(table.rate(a[i]), alpha);
            matched.push(a[i]);
            i += 1;
            j += 1;
        }
    }
    w
}

/// Country-aware binary-vector weight; items must be sorted and unique.
pub fn binary_vector_weight(
    items_a: &[ItemId],
    items_b: &[ItemId],
    tables: &FrequencyTables,
    alpha: f64,
    country_a: &str,
    country_b: &str,
) -> VectorWeight {
    let mut matched = Vec::new();
    vector_weight(items_a, items_b, tables.table_for(country_a, country_b), alpha, &mut matched)
}

/// Sum over unordered pairs of matched items of the positive part of
/// `ln(f_ij / (f_i f_j))`. Uncapped.
pub fn correlation_compensation(matched: &[ItemId], table: &CountTable) -> f64 {
    let mut raw = 0.0;
    for (k, &i) in matched.iter().enumerate() {
        let fi = table.rate(i);
        for &j in &matched[k + 1..] {
            let lift = table.pair_rate(i, j) / (fi * table.rate(j));
            if lift > 1.0 {
                raw += lift.ln();
            }
        }
    }
    raw
}

/// Components of the aggregated drug/event feature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DrugEventScore {
    pub drug_match: f64,
    pub drug_mismatch: f64,
    pub event_match: f64,
    pub event_mismatch: f64,
    pub compensation_raw: f64,
    pub compensation: f64,
    pub value: f64,
}

impl DrugEventScore {
    pub fn match_sum(&self) -> f64 {
        self.drug_match + self.event_match
    }

    pub fn mismatch_sum(&self) -> f64 {
        self.drug_mismatch + self.event_mismatch
    }
}

pub struct DrugEventInput<'a> {
    pub drugs: &'a [ItemId],
    pub events: &'a [ItemId],
}

/// Drug and event hit-miss weights summed, minus correlation compensation.
///
/// With `cap` set the compensation never exceeds the match reward, so the
/// compensated matched portion stays non-negative.
pub fn drug_event_score(
    a: DrugEventInput<'_>,
    b: DrugEventInput<'_>,
    table: &CountTable,
    alpha_drugs: f64,
    alpha_events: f64,
    cap: bool,
    scratch: &mut Vec<ItemId>,
) -> DrugEventScore {
    scratch.clear();
    let drug = vector_weight(a.drugs, b.drugs, table, alpha_drugs, scratch);
    let event = vector_weight(a.events, b.events, table, alpha_events, scratch);
    let raw = correlation_compensation(scratch, table);
    let match_sum = drug.match_sum + event.match_sum;
    let compensation = if cap { raw.min(match_sum.max(0.0)) } else { raw };
    DrugEventScore {
        drug_match: drug.match_sum,
        drug_mismatch: drug.mismatch_sum,
        event_match: event.match_sum,
        event_mismatch: event.mismatch_sum,
        compensation_raw: raw,
        compensation,
        value: match_sum + drug.mismatch_sum + event.mismatch_sum - compensation,
    }
}

/// Closed interval of whole days (ages, or dates as day indices).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DayInterval {
    pub lo: i64,
    pub hi: i64,
}

impl DayInterval {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidInterval(format!("[{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    /// 0 when the intervals overlap, else the gap in days between them.
    pub fn gap(&self, other: &DayInterval) -> u64 {
        if self.hi < other.lo {
            (other.lo - self.hi) as u64
        } else if other.hi < self.lo {
            (self.lo - other.hi) as u64
        } else {
            0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub pi_hit: f64,
    pub pi_near: f64,
    /// Mean of the geometric near-miss distribution over gaps of 1, 2, ... days.
    pub near_scale: f64,
}

impl MixtureParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.pi_hit)
            && (0.0..=1.0).contains(&self.pi_near)
            && self.pi_hit + self.pi_near <= 1.0 + 1e-12
            && self.near_scale >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("mixture parameters {self:?}")))
        }
    }

    fn near(&self, delta: u64) -> f64 {
        if delta == 0 {
            return 0.0;
        }
        let q = 1.0 / self.near_scale;
        q * (1.0 - q).powi((delta - 1).min(i32::MAX as u64) as i32)
    }
}

/// Number of log2-width bins; bin 0 holds exact overlaps.
const HIST_BINS: usize = 40;

/// Distribution of interval gaps between random (independent) report pairs,
/// binned as `{0}, {1}, {2,3}, {4..7}, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceHistogram {
    pub counts: Vec<u64>,
}

impl Default for IndependenceHistogram {
    fn default() -> Self {
        Self {
            counts: vec![0; HIST_BINS],
        }
    }
}

impl IndependenceHistogram {
    pub fn from_gaps(gaps: impl IntoIterator<Item = u64>) -> Self {
        let mut h = Self::default();
        for g in gaps {
            h.counts[Self::bin(g)] += 1;
        }
        h
    }

    fn bin(delta: u64) -> usize {
        if delta == 0 {
            0
        } else {
            ((64 - delta.leading_zeros()) as usize).min(HIST_BINS - 1)
        }
    }

    fn width(bin: usize) -> f64 {
        if bin == 0 {
            1.0
        } else {
            (1u64 << (bin - 1)) as f64
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Smoothed per-day probability of a gap of `delta` days.
    pub fn p_ind(&self, delta: u64) -> f64 {
        let bin = Self::bin(delta);
        let total = self.total() as f64 + 0.5 * self.counts.len() as f64;
        (self.counts[bin] as f64 + 0.5) / total / Self::width(bin)
    }
}

/// Log-likelihood ratio of the gap between two numeric intervals.
pub fn numeric_mixture_weight(
    a: Option<DayInterval>,
    b: Option<DayInterval>,
    params: &MixtureParams,
    hist: &IndependenceHistogram,
) -> Result<f64> {
    let (Some(a), Some(b)) = (a, b) else {
        return Ok(0.0);
    };
    DayInterval::new(a.lo, a.hi)?;
    DayInterval::new(b.lo, b.hi)?;
    Ok(mixture_weight_for_gap(a.gap(&b), params, hist))
}

#[inline]
pub fn mixture_weight_for_gap(delta: u64, params: &MixtureParams, hist: &IndependenceHistogram) -> f64 {
    let p_ind = hist.p_ind(delta);
    let hit = if delta == 0 { params.pi_hit } else { 0.0 };
    let p_dup = hit + params.pi_near * params.near(delta) + (1.0 - params.pi_hit - params.pi_near) * p_ind;
    (p_dup / p_ind).ln()
}

/// Parameters shared by every country.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitMissParams {
    pub alpha_sex: f64,
    pub alpha_country: f64,
    pub alpha_outcome: f64,
    pub alpha_drugs: f64,
    pub alpha_events: f64,
    pub age: MixtureParams,
    pub onset: MixtureParams,
    pub age_hist: IndependenceHistogram,
    pub onset_hist: IndependenceHistogram,
}

impl Default for HitMissParams {
    fn default() -> Self {
        Self {
            alpha_sex: 0.05,
            alpha_country: 0.05,
            alpha_outcome: 0.3,
            alpha_drugs: 0.1,
            alpha_events: 0.2,
            age: MixtureParams {
                pi_hit: 0.7,
                pi_near: 0.2,
                near_scale: 365.0,
            },
            onset: MixtureParams {
                pi_hit: 0.7,
                pi_near: 0.2,
                near_scale: 3.0,
            },
            age_hist: IndependenceHistogram::default(),
            onset_hist: IndependenceHistogram::default(),
        }
    }
}

impl HitMissParams {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [
            ("alpha_sex", self.alpha_sex),
            ("alpha_country", self.alpha_country),
            ("alpha_outcome", self.alpha_outcome),
            ("alpha_drugs", self.alpha_drugs),
            ("alpha_events", self.alpha_events),
        ] {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} = {a} not in (0, 1)")));
            }
        }
        self.age.validate()?;
        self.onset.validate()?;
        for h in [&self.age_hist, &self.onset_hist] {
            if h.counts.len() != HIST_BINS {
                return Err(Error::InvalidConfig("independence histogram bin count".into()));
            }
        }
        Ok(())
    }
}
