//! Annotation state for reviewing the suspected pairs of one precision run:
//! per-annotator leasing, an append-only label log with idempotent replace
//! per (pair, annotator), running precision and inter-annotator agreement.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::dates::DateExtractor;
use crate::engine::{RunRecord, SuspectedPair};
use crate::error::{Error, Result};
use crate::eval::{cohen_kappa, wald_ci};
use crate::report::{Corpus, PairKind, ReportRecord};
use crate::svm::{Explanation, LabelledPair, PairLabel};

pub const DEFAULT_CONFIDENCE: f64 = 0.95;

/// The three review categories an annotator can assign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewLabel {
    NonDuplicate,
    PossibleDuplicate,
    OtherwiseRelated,
}

impl ReviewLabel {
    pub const ALL: [ReviewLabel; 3] = [
        ReviewLabel::NonDuplicate,
        ReviewLabel::PossibleDuplicate,
        ReviewLabel::OtherwiseRelated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReviewLabel::NonDuplicate => "non_duplicate",
            ReviewLabel::PossibleDuplicate => "possible_duplicate",
            ReviewLabel::OtherwiseRelated => "otherwise_related",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidLabel(s.to_string()))
    }

    /// Training label: only possible duplicates are positives.
    pub fn pair_label(self) -> PairLabel {
        match self {
            ReviewLabel::NonDuplicate => PairLabel::NonDuplicate,
            ReviewLabel::PossibleDuplicate => PairLabel::Duplicate,
            ReviewLabel::OtherwiseRelated => PairLabel::OtherwiseRelated,
        }
    }
}

/// One line of the annotation log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub id_a: String,
    pub id_b: String,
    pub label: ReviewLabel,
    pub annotator: String,
    pub timestamp: String,
    #[serde(default)]
    pub note: String,
    pub model_id: String,
}

/// Label submission as received from a client. The server fills in the
/// timestamp when absent and the model id from the run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSubmission {
    pub id_a: String,
    pub id_b: String,
    pub label: String,
    pub annotator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub note: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Labelled,
}

/// A date found in a narrative, with whether the other report of the pair
/// mentions the same interval.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeDate {
    pub start: usize,
    pub end: usize,
    pub raw: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub shared: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueueItem {
    pub id_a: String,
    pub id_b: String,
    pub position: u64,
    pub kind: PairKind,
    pub report_a: ReportRecord,
    pub report_b: ReportRecord,
    pub dates_a: Vec<NarrativeDate>,
    pub dates_b: Vec<NarrativeDate>,
    pub explanation: Explanation,
    pub model_id: String,
    pub status: ItemStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDetail {
    #[serde(flatten)]
    pub item: ReviewQueueItem,
    pub annotations: Vec<Annotation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaSummary {
    pub annotator_a: String,
    pub annotator_b: String,
    pub overlap: usize,
    pub kappa: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewStats {
    pub run_pairs: usize,
    pub labelled_pairs: usize,
    pub annotations: usize,
    pub annotators: Vec<String>,
    /// Resolved label per pair, counted.
    pub label_counts: BTreeMap<ReviewLabel, usize>,
    pub precision: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub confidence: f64,
    pub kappa: Option<KappaSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authoritative: Option<String>,
}

type PairKey = (String, String);

fn key(a: &str, b: &str) -> PairKey {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Final label of each annotated pair: the authoritative annotator's label
/// when present, otherwise the first submitted annotation.
pub fn resolve_labels<'a>(
    log: &'a [Annotation],
    authoritative: Option<&str>,
) -> BTreeMap<PairKey, &'a Annotation> {
    let mut out: BTreeMap<PairKey, &Annotation> = BTreeMap::new();
    for a in log {
        let k = key(&a.id_a, &a.id_b);
        match out.get(&k) {
            None => {
                out.insert(k, a);
            }
            Some(prev) => {
                let prev_auth = authoritative == Some(prev.annotator.as_str());
                if !prev_auth && authoritative == Some(a.annotator.as_str()) {
                    out.insert(k, a);
                }
            }
        }
    }
    out
}

/// Labelled pairs for retraining from an exported annotation log.
pub fn annotations_to_labelled(log: &[Annotation], authoritative: Option<&str>) -> Vec<LabelledPair> {
    resolve_labels(log, authoritative)
        .into_values()
        .map(|a| LabelledPair {
            id_a: a.id_a.clone(),
            id_b: a.id_b.clone(),
            label: a.label.pair_label(),
            source: "annotation".into(),
            annotator: a.annotator.clone(),
        })
        .collect()
}

/// Collapses a raw log to one entry per (pair, annotator), keeping the last
/// submission at the position of the first.
pub fn compact_log(raw: &[Annotation]) -> Vec<Annotation> {
    let mut slot: HashMap<(PairKey, String), usize> = HashMap::new();
    let mut out: Vec<Annotation> = Vec::new();
    for a in raw {
        let k = (key(&a.id_a, &a.id_b), a.annotator.clone());
        match slot.get(&k) {
            Some(&i) => out[i] = a.clone(),
            None => {
                slot.insert(k, out.len());
                out.push(a.clone());
            }
        }
    }
    out
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_annotations(path: impl AsRef<Path>, log: &[Annotation]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for a in log {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Review state for one run. Not internally synchronised; the service
/// serialises access.
pub struct ReviewSession {
    run: RunRecord,
    corpus: Corpus,
    extractor: DateExtractor,
    pair_index: HashMap<PairKey, usize>,
    raw_log: Vec<Annotation>,
    leases: HashMap<String, HashSet<usize>>,
    log_path: Option<PathBuf>,
    authoritative: Option<String>,
    confidence: f64,
}

impl ReviewSession {
    pub fn new(run: RunRecord, corpus: Corpus, extractor: DateExtractor) -> Result<Self> {
        let mut pair_index = HashMap::new();
        for (i, p) in run.suspected.iter().enumerate() {
            for id in [&p.id_a, &p.id_b] {
                if corpus.get(id).is_none() {
                    return Err(Error::UnknownReport(id.clone()));
                }
            }
            if pair_index.insert(key(&p.id_a, &p.id_b), i).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "run lists pair ({}, {}) more than once",
                    p.id_a, p.id_b
                )));
            }
        }
        Ok(Self {
            run,
            corpus,
            extractor,
            pair_index,
            raw_log: Vec::new(),
            leases: HashMap::new(),
            log_path: None,
            authoritative: None,
            confidence: DEFAULT_CONFIDENCE,
        })
    }

    /// Persists every accepted label by appending to `path`, after replaying
    /// the annotations already stored there.
    pub fn with_log(mut self, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if path.exists() {
            for a in read_annotations(&path)? {
                if !self.pair_index.contains_key(&key(&a.id_a, &a.id_b)) {
                    return Err(Error::UnknownPair(a.id_a, a.id_b));
                }
                self.raw_log.push(a);
            }
        }
        self.log_path = Some(path);
        Ok(self)
    }

    pub fn with_authoritative(mut self, annotator: Option<String>) -> Self {
        self.authoritative = annotator;
        self
    }

    pub fn with_confidence(mut self, confidence: f64) -> Result<Self> {
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::InvalidConfig(format!("confidence {confidence} outside (0, 1)")));
        }
        self.confidence = confidence;
        Ok(self)
    }

    pub fn run(&self) -> &RunRecord {
        &self.run
    }

    fn labelled_by(&self, pair: usize, annotator: &str) -> bool {
        let p = &self.run.suspected[pair];
        let k = key(&p.id_a, &p.id_b);
        self.raw_log
            .iter()
            .any(|a| a.annotator == annotator && key(&a.id_a, &a.id_b) == k)
    }

    fn any_label(&self, pair: usize) -> bool {
        let p = &self.run.suspected[pair];
        let k = key(&p.id_a, &p.id_b);
        self.raw_log.iter().any(|a| key(&a.id_a, &a.id_b) == k)
    }

    /// Leases the next pair this annotator has neither been served nor
    /// labelled. Each pair is served at most once per annotator.
    pub fn next_for(&mut self, annotator: &str) -> Result<Option<ReviewQueueItem>> {
        if annotator.trim().is_empty() {
            return Err(Error::InvalidConfig("annotator must not be empty".into()));
        }
        let served = self.leases.get(annotator);
        let next = (0..self.run.suspected.len())
            .find(|&i| !served.is_some_and(|s| s.contains(&i)) && !self.labelled_by(i, annotator));
        let Some(i) = next else {
            return Ok(None);
        };
        self.leases.entry(annotator.to_string()).or_default().insert(i);
        self.item(i).map(Some)
    }

    fn narrative_dates(&self, text: &str, country: &str, other: &[(NaiveDate, NaiveDate)]) -> Vec<NarrativeDate> {
        self.extractor
            .extract(text, country)
            .into_iter()
            .map(|m| NarrativeDate {
                start: m.span.0,
                end: m.span.1,
                raw: m.raw,
                from: m.interval.start,
                to: m.interval.end,
                shared: other.contains(&(m.interval.start, m.interval.end)),
            })
            .collect()
    }

    fn intervals(&self, text: &str, country: &str) -> Vec<(NaiveDate, NaiveDate)> {
        self.extractor
            .extract(text, country)
            .into_iter()
            .map(|m| (m.interval.start, m.interval.end))
            .collect()
    }

    fn item(&self, i: usize) -> Result<ReviewQueueItem> {
        let p: &SuspectedPair = &self.run.suspected[i];
        let a = self.corpus.get(&p.id_a).ok_or_else(|| Error::UnknownReport(p.id_a.clone()))?;
        let b = self.corpus.get(&p.id_b).ok_or_else(|| Error::UnknownReport(p.id_b.clone()))?;
        let ia = self.intervals(&a.narrative, &a.country);
        let ib = self.intervals(&b.narrative, &b.country);
        Ok(ReviewQueueItem {
            id_a: p.id_a.clone(),
            id_b: p.id_b.clone(),
            position: p.position,
            kind: p.kind,
            report_a: a.to_record(),
            report_b: b.to_record(),
            dates_a: self.narrative_dates(&a.narrative, &a.country, &ib),
            dates_b: self.narrative_dates(&b.narrative, &b.country, &ia),
            explanation: p.explanation.clone(),
            model_id: self.run.model_id.clone(),
            status: if self.any_label(i) {
                ItemStatus::Labelled
            } else {
                ItemStatus::Pending
            },
        })
    }

    pub fn pair(&self, id_a: &str, id_b: &str) -> Result<PairDetail> {
        let k = key(id_a, id_b);
        let &i = self
            .pair_index
            .get(&k)
            .ok_or_else(|| Error::UnknownPair(id_a.to_string(), id_b.to_string()))?;
        let annotations = self
            .export()
            .into_iter()
            .filter(|a| key(&a.id_a, &a.id_b) == k)
            .collect();
        Ok(PairDetail {
            item: self.item(i)?,
            annotations,
        })
    }

    /// Validates and records a label. Resubmitting for the same pair and
    /// annotator replaces the earlier label.
    pub fn submit(&mut self, s: LabelSubmission) -> Result<Annotation> {
        let label = ReviewLabel::parse(&s.label)?;
        if s.annotator.trim().is_empty() {
            return Err(Error::InvalidLabel("annotator must not be empty".into()));
        }
        let k = key(&s.id_a, &s.id_b);
        let &i = self
            .pair_index
            .get(&k)
            .ok_or_else(|| Error::UnknownPair(s.id_a.clone(), s.id_b.clone()))?;
        let p = &self.run.suspected[i];
        let annotation = Annotation {
            id_a: p.id_a.clone(),
            id_b: p.id_b.clone(),
            label,
            annotator: s.annotator,
            timestamp: s
                .timestamp
                .unwrap_or_else(|| Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)),
            note: s.note,
            model_id: self.run.model_id.clone(),
        };
        if let Some(path) = &self.log_path {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            serde_json::to_writer(&mut w, &annotation)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        self.leases.entry(annotation.annotator.clone()).or_default().insert(i);
        self.raw_log.push(annotation.clone());
        Ok(annotation)
    }

    /// The annotation log with one entry per (pair, annotator).
    pub fn export(&self) -> Vec<Annotation> {
        compact_log(&self.raw_log)
    }

    pub fn stats(&self) -> Result<ReviewStats> {
        let log = self.export();
        let resolved = resolve_labels(&log, self.authoritative.as_deref());
        let mut label_counts: BTreeMap<ReviewLabel, usize> = ReviewLabel::ALL.iter().map(|&l| (l, 0)).collect();
        for a in resolved.values() {
            *label_counts.entry(a.label).or_default() += 1;
        }
        let n = resolved.len() as u64;
        let (precision, ci_low, ci_high) = if n > 0 {
            let p = label_counts[&ReviewLabel::PossibleDuplicate] as f64 / n as f64;
            let (lo, hi) = wald_ci(p, n, self.confidence)?;
            (Some(p), Some(lo), Some(hi))
        } else {
            (None, None, None)
        };
        let annotators: Vec<String> = log
            .iter()
            .map(|a| a.annotator.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(ReviewStats {
            run_pairs: self.run.suspected.len(),
            labelled_pairs: resolved.len(),
            annotations: log.len(),
            kappa: best_overlap_kappa(&log, &annotators),
            annotators,
            label_counts,
            precision,
            ci_low,
            ci_high,
            confidence: self.confidence,
            authoritative: self.authoritative.clone(),
        })
    }
}

/// Cohen's kappa for the pair of annotators sharing the most labelled pairs
/// (ties broken by name). `kappa` is `None` when agreement is undefined.
pub fn best_overlap_kappa(log: &[Annotation], annotators: &[String]) -> Option<KappaSummary> {
    let mut by: BTreeMap<&str, BTreeMap<PairKey, ReviewLabel>> = BTreeMap::new();
    for a in log {
        by.entry(a.annotator.as_str())
            .or_default()
            .insert(key(&a.id_a, &a.id_b), a.label);
    }
    let mut best: Option<(usize, &str, &str)> = None;
    for (i, x) in annotators.iter().enumerate() {
        for y in &annotators[i + 1..] {
            let (lx, ly) = (&by[x.as_str()], &by[y.as_str()]);
            let overlap = lx.keys().filter(|k| ly.contains_key(*k)).count();
            if overlap > 0 && best.map_or(true, |(o, _, _)| overlap > o) {
                best = Some((overlap, x, y));
            }
        }
    }
    let (overlap, x, y) = best?;
    let (lx, ly) = (&by[x], &by[y]);
    let (mut va, mut vb) = (Vec::with_capacity(overlap), Vec::with_capacity(overlap));
    for (k, l) in lx {
        if let Some(m) = ly.get(k) {
            va.push(*l);
            vb.push(*m);
        }
    }
    Some(KappaSummary {
        annotator_a: x.to_string(),
        annotator_b: y.to_string(),
        overlap,
        kappa: cohen_kappa(&va, &vb).ok(),
    })
}
