//! Blocking, pair feature vectors and the demographic gate.
//!
//! A missing value on either report contributes 0 to its feature; this holds
//! for every element of the vector.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dates::{eligible_embedding_dates, min_date, report_date_set, DateExtractor};
use crate::embedding::{build_date_vector, date_similarity, DateKernel, DateVector};
use crate::error::{Error, Result};
use crate::external::{externally_indicated_ids, PrefixWhitelist};
use crate::frequency::{FrequencyTables, ItemId};
use crate::hitmiss::{
    categorical_weight, drug_event_score, mixture_weight_for_gap, DayInterval, DrugEventInput,
    DrugEventScore, HitMissParams,
};
use crate::report::{Report, SenderIds, Sex};

pub const FEATURE_NAMES: [&str; 6] = [
    "sex",
    "age",
    "drug_ae",
    "onset",
    "date_embedding",
    "externally_indicated",
];

pub const SEX: usize = 0;
pub const AGE: usize = 1;
pub const DRUG_AE: usize = 2;
pub const ONSET: usize = 3;
pub const DATE_EMBEDDING: usize = 4;
pub const EXTERNAL: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; 6]);

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// A report reduced to what pair scoring needs, computed once per scan.
#[derive(Clone, Debug)]
pub struct PreparedReport {
    pub id: String,
    pub country: String,
    pub country_slot: Option<usize>,
    pub sex: Sex,
    pub age: Option<DayInterval>,
    pub outcome: Option<String>,
    pub onset: Option<DayInterval>,
    pub drugs: Vec<ItemId>,
    pub events: Vec<ItemId>,
    pub socs: Vec<u32>,
    pub dates: DateVector,
    pub ids: SenderIds,
    pub is_vaccine: bool,
}

pub struct Preparer<'a> {
    tables: &'a FrequencyTables,
    extractor: &'a DateExtractor,
    kernel: &'a DateKernel,
    socs: HashMap<String, u32>,
}

impl<'a> Preparer<'a> {
    pub fn new(tables: &'a FrequencyTables, extractor: &'a DateExtractor, kernel: &'a DateKernel) -> Self {
        Self {
            tables,
            extractor,
            kernel,
            socs: HashMap::new(),
        }
    }

    pub fn prepare(&mut self, report: &Report) -> Result<PreparedReport> {
        let vocab = self.tables.vocabulary();
        let mut socs: Vec<u32> = report
            .events
            .iter()
            .map(|e| {
                let next = self.socs.len() as u32;
                *self.socs.entry(e.soc.clone()).or_insert(next)
            })
            .collect();
        socs.sort_unstable();
        socs.dedup();
        let dates = report_date_set(report, self.extractor);
        let eligible = eligible_embedding_dates(&dates);
        let onset = report.earliest_onset().map(|d| DayInterval {
            lo: (d.start - min_date()).num_days(),
            hi: (d.end - min_date()).num_days(),
        });
        Ok(PreparedReport {
            id: report.id.clone(),
            country: report.country.clone(),
            country_slot: self.tables.country_slot(&report.country),
            sex: report.sex,
            age: report.age.map(|a| DayInterval { lo: a.lo, hi: a.hi }),
            outcome: report.outcome.clone(),
            onset,
            drugs: vocab.drug_ids(report)?,
            events: vocab.event_ids(report)?,
            socs,
            dates: build_date_vector(&eligible, self.kernel)?,
            ids: report.ids.clone(),
            is_vaccine: report.is_vaccine_report(),
        })
    }
}

#[inline]
fn sorted_intersect<T: Ord>(a: &[T], b: &[T]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Shares an active substance and a system organ class.
pub fn blocking_pass(a: &Report, b: &Report) -> bool {
    let subs = a.substances();
    let socs = a.socs();
    b.drugs.iter().any(|d| subs.contains(d.substance.as_str()))
        && b.events.iter().any(|e| socs.contains(e.soc.as_str()))
}

#[inline]
pub fn blocking_pass_prepared(a: &PreparedReport, b: &PreparedReport) -> bool {
    sorted_intersect(&a.drugs, &b.drugs) && sorted_intersect(&a.socs, &b.socs)
}

pub struct FeatureContext<'a> {
    pub tables: &'a FrequencyTables,
    pub params: &'a HitMissParams,
    pub whitelist: &'a PrefixWhitelist,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairFeatures {
    pub vector: FeatureVector,
    pub drug_event: DrugEventScore,
}

pub fn compute_features(
    a: &PreparedReport,
    b: &PreparedReport,
    ctx: &FeatureContext<'_>,
) -> Result<PairFeatures> {
    compute_features_with(a, b, ctx, &mut Vec::new())
}

/// As [`compute_features`], reusing `scratch` for matched items.
pub fn compute_features_with(
    a: &PreparedReport,
    b: &PreparedReport,
    ctx: &FeatureContext<'_>,
    scratch: &mut Vec<ItemId>,
) -> Result<PairFeatures> {
    let p = ctx.params;
    let sex = categorical_weight(a.sex.known(), b.sex.known(), &ctx.tables.sex, p.alpha_sex)?;
    let age = match (a.age, b.age) {
        (Some(x), Some(y)) => mixture_weight_for_gap(x.gap(&y), &p.age, &p.age_hist),
        _ => 0.0,
    };
    let onset = match (a.onset, b.onset) {
        (Some(x), Some(y)) => mixture_weight_for_gap(x.gap(&y), &p.onset, &p.onset_hist),
        _ => 0.0,
    };
    let table = ctx.tables.table_for_slots(a.country_slot, b.country_slot);
    let drug_event = drug_event_score(
        DrugEventInput {
            drugs: &a.drugs,
            events: &a.events,
        },
        DrugEventInput {
            drugs: &b.drugs,
            events: &b.events,
        },
        table,
        p.alpha_drugs,
        p.alpha_events,
        true,
        scratch,
    );
    let emb = date_similarity(&a.dates, &b.dates);
    let ext = externally_indicated_ids(&a.ids, &b.ids, ctx.whitelist) as f64;
    let vector = FeatureVector([sex, age, drug_event.value, onset, emb, ext]);
    if !vector.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "non-finite features for ({}, {}): {:?}",
            a.id, b.id, vector.0
        )));
    }
    Ok(PairFeatures { vector, drug_event })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub passed: bool,
    pub net: f64,
}

/// Rejects pairs whose weighted sex, age and date-embedding contributions
/// are negative in total. A net of exactly zero passes.
pub fn demographic_gate(c_sex: f64, c_age: f64, c_date_emb: f64) -> GateResult {
    let net = c_sex + c_age + c_date_emb;
    GateResult {
        passed: net >= 0.0,
        net,
    }
}
