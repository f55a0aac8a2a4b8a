//! Report data model, toy ontologies and corpus ingestion.
//!
//! Corpora are JSON Lines files with one report object per line. Codes are
//! checked against a closed-world [`Ontology`] at load time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ATC prefix identifying vaccines.
pub const VACCINE_ATC_PREFIX: &str = "J07";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
    #[default]
    Unknown,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
            Sex::Unknown => "unknown",
        }
    }

    /// The categorical value used by hit-miss models; unknown sex is missing.
    pub fn known(self) -> Option<&'static str> {
        match self {
            Sex::Unknown => None,
            s => Some(s.as_str()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrugRole {
    Suspected,
    Interacting,
    Concomitant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrugEntry {
    pub substance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atc: Option<String>,
    pub role: DrugRole,
}

impl DrugEntry {
    pub fn is_vaccine(&self) -> bool {
        matches!(self.role, DrugRole::Suspected | DrugRole::Interacting)
            && self
                .atc
                .as_deref()
                .is_some_and(|atc| atc.starts_with(VACCINE_ATC_PREFIX))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventEntry {
    pub pt: String,
    /// Derived from the ontology at load time; never read from the file.
    #[serde(skip)]
    pub soc: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DateSource {
    Structured,
    Narrative,
}

/// A calendar interval `[start, end]` expressing the uncertainty of a date.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DateInterval {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub source: DateSource,
}

impl DateInterval {
    pub fn new(start: NaiveDate, end: NaiveDate, source: DateSource) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidInterval(format!("{start} > {end}")));
        }
        Ok(Self { start, end, source })
    }

    pub fn day(date: NaiveDate, source: DateSource) -> Self {
        Self {
            start: date,
            end: date,
            source,
        }
    }

    pub fn uncertainty_days(&self) -> i64 {
        (self.end - self.start).num_days()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateKind {
    DrugStart,
    DrugEnd,
    EventOnset,
    EventEnd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StructuredDate {
    pub kind: DateKind,
    pub interval: DateInterval,
}

/// Sender case identifiers (E2B A.1.0.1, A.1.10.1, A.1.10.2, A.1.11.2).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenderIds {
    #[serde(rename = "a1_0_1", default, skip_serializing_if = "Option::is_none")]
    pub safety_report_id: Option<String>,
    #[serde(rename = "a1_10_1", default, skip_serializing_if = "Option::is_none")]
    pub regulator_case_id: Option<String>,
    #[serde(rename = "a1_10_2", default, skip_serializing_if = "Option::is_none")]
    pub other_case_id: Option<String>,
    #[serde(rename = "a1_11_2", default, skip_serializing_if = "Option::is_none")]
    pub previous_transmission_id: Option<String>,
}

/// Patient age as an uncertainty interval in whole days.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgeInterval {
    pub lo: i64,
    pub hi: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub id: String,
    pub country: String,
    pub sex: Sex,
    pub age: Option<AgeInterval>,
    pub outcome: Option<String>,
    pub drugs: Vec<DrugEntry>,
    pub events: Vec<EventEntry>,
    pub structured_dates: Vec<StructuredDate>,
    pub narrative: String,
    pub ids: SenderIds,
    is_vaccine: bool,
}

impl Report {
    pub fn is_vaccine_report(&self) -> bool {
        self.is_vaccine
    }

    /// Earliest adverse-event onset among structured dates.
    pub fn earliest_onset(&self) -> Option<DateInterval> {
        self.structured_dates
            .iter()
            .filter(|d| d.kind == DateKind::EventOnset)
            .map(|d| d.interval)
            .min_by_key(|d| (d.start, d.end))
    }

    pub fn substances(&self) -> BTreeSet<&str> {
        self.drugs.iter().map(|d| d.substance.as_str()).collect()
    }

    pub fn socs(&self) -> BTreeSet<&str> {
        self.events.iter().map(|e| e.soc.as_str()).collect()
    }

    pub fn to_record(&self) -> ReportRecord {
        ReportRecord {
            id: self.id.clone(),
            country: self.country.clone(),
            sex: self.sex,
            age_days_lo: self.age.map(|a| a.lo),
            age_days_hi: self.age.map(|a| a.hi),
            outcome: self.outcome.clone(),
            drugs: self.drugs.clone(),
            events: self
                .events
                .iter()
                .map(|e| EventRecord { pt: e.pt.clone() })
                .collect(),
            dates: self
                .structured_dates
                .iter()
                .map(|d| DateRecord {
                    start: d.interval.start,
                    end: d.interval.end,
                    kind: d.kind,
                })
                .collect(),
            narrative: self.narrative.clone(),
            ids: self.ids.clone(),
        }
    }
}

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRecord {
    pub id: String,
    pub country: String,
    #[serde(default)]
    pub sex: Sex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_days_lo: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_days_hi: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default)]
    pub drugs: Vec<DrugEntry>,
    #[serde(default)]
    pub events: Vec<EventRecord>,
    #[serde(default)]
    pub dates: Vec<DateRecord>,
    #[serde(default)]
    pub narrative: String,
    #[serde(default)]
    pub ids: SenderIds,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub pt: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRecord {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub kind: DateKind,
}

/// Stand-in for the drug and event dictionaries: substance → ATC codes and
/// preferred term → system organ class.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub drugs: BTreeMap<String, Vec<String>>,
    pub events: BTreeMap<String, String>,
}

impl Ontology {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn soc_of(&self, pt: &str) -> Result<&str> {
        self.events
            .get(pt)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownCode {
                kind: "preferred term",
                code: pt.to_string(),
            })
    }

    pub fn check_drug(&self, entry: &DrugEntry) -> Result<()> {
        let atcs = self.drugs.get(&entry.substance).ok_or_else(|| Error::UnknownCode {
            kind: "substance",
            code: entry.substance.clone(),
        })?;
        if let Some(atc) = &entry.atc {
            if !atcs.iter().any(|a| a == atc) {
                return Err(Error::UnknownCode {
                    kind: "ATC",
                    code: format!("{atc} (substance {})", entry.substance),
                });
            }
        }
        Ok(())
    }
}

/// Drops reports carrying blocklisted products, e.g. a vaccine family that
/// would otherwise dominate the corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionFilter {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub atc_codes: Vec<String>,
    #[serde(default)]
    pub substances: Vec<String>,
}

impl ExclusionFilter {
    pub fn excludes(&self, report: &Report) -> bool {
        self.enabled
            && report.drugs.iter().any(|d| {
                self.substances.iter().any(|s| *s == d.substance)
                    || d.atc
                        .as_deref()
                        .is_some_and(|atc| self.atc_codes.iter().any(|c| atc.starts_with(c.as_str())))
            })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    reports: Vec<Report>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(reports: Vec<Report>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(reports.len());
        for (i, r) in reports.iter().enumerate() {
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateReportId(r.id.clone()));
            }
        }
        Ok(Self { reports, by_id })
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Report> {
        self.by_id.get(id).map(|&i| &self.reports[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for r in &self.reports {
            serde_json::to_writer(&mut out, &r.to_record())?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Validates a record against the ontology and derives the computed fields.
pub fn report_from_record(record: ReportRecord, ontology: &Ontology) -> Result<Report> {
    if record.id.is_empty() {
        return Err(Error::InvalidConfig("empty report id".into()));
    }
    let age = match (record.age_days_lo, record.age_days_hi) {
        (None, None) => None,
        (Some(lo), Some(hi)) if lo <= hi && lo >= 0 => Some(AgeInterval { lo, hi }),
        (Some(lo), Some(hi)) => {
            return Err(Error::InvalidInterval(format!("age interval [{lo}, {hi}]")))
        }
        (Some(v), None) | (None, Some(v)) => Some(AgeInterval { lo: v, hi: v }),
    };
    for d in &record.drugs {
        ontology.check_drug(d)?;
    }
    let events = record
        .events
        .into_iter()
        .map(|e| {
            let soc = ontology.soc_of(&e.pt)?.to_string();
            Ok(EventEntry { pt: e.pt, soc })
        })
        .collect::<Result<Vec<_>>>()?;
    let structured_dates = record
        .dates
        .into_iter()
        .map(|d| {
            Ok(StructuredDate {
                kind: d.kind,
                interval: DateInterval::new(d.start, d.end, DateSource::Structured)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let is_vaccine = record.drugs.iter().any(DrugEntry::is_vaccine);
    Ok(Report {
        id: record.id,
        country: record.country,
        sex: record.sex,
        age,
        outcome: record.outcome,
        drugs: record.drugs,
        events,
        structured_dates,
        narrative: record.narrative,
        ids: record.ids,
        is_vaccine,
    })
}

/// Reads a JSON Lines corpus. Blank lines are ignored.
pub fn load_corpus(
    path: impl AsRef<Path>,
    ontology: &Ontology,
    exclusion: &ExclusionFilter,
) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), ontology, exclusion)
}

pub fn read_corpus(
    reader: impl BufRead,
    ontology: &Ontology,
    exclusion: &ExclusionFilter,
) -> Result<Corpus> {
    let mut reports = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ReportRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        let report = report_from_record(record, ontology).map_err(|e| match e {
            Error::InvalidInterval(m) | Error::InvalidConfig(m) => Error::MalformedLine {
                line: line_no,
                message: m,
            },
            other => other,
        })?;
        if !exclusion.excludes(&report) {
            reports.push(report);
        }
    }
    Corpus::new(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    DrugPair,
    VaccinePair,
}

pub fn classify_pair_kind(a: &Report, b: &Report) -> PairKind {
    if a.is_vaccine_report() || b.is_vaccine_report() {
        PairKind::VaccinePair
    } else {
        PairKind::DrugPair
    }
}
