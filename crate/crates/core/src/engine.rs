//! Corpus scans: exhaustive and indexed pair enumeration, seeded random-pair
//! streams, precision runs, duplicate-group clustering, and the
//! summation-scored baseline comparator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dates::DateExtractor;
use crate::embedding::DateKernel;
use crate::error::{Error, Result};
use crate::external::PrefixWhitelist;
use crate::features::{
    blocking_pass_prepared, compute_features_with, FeatureContext, PreparedReport, Preparer,
};
use crate::frequency::{FrequencyTables, ItemId};
use crate::hitmiss::{
    categorical_weight, drug_event_score, mixture_weight_for_gap, DrugEventInput, HitMissParams,
    IndependenceHistogram,
};
use crate::report::{Corpus, PairKind};
use crate::svm::{explain, BlockingFacts, ClassifierModel, Explanation, ModelKind, NamedValue};

pub const DEFAULT_BATCH_SIZE: u64 = 100_000_000;

/// Seeded stream of unordered pairs of distinct report indices, uniform over
/// all such pairs. Batch `k` draws from ChaCha stream `k`, so a run can resume
/// at any batch boundary and two consumers with the same seed see the same
/// pairs.
#[derive(Clone, Debug)]
pub struct RandomPairs {
    n: usize,
    seed: u64,
    batch_size: u64,
    batch: u64,
    in_batch: u64,
    rng: ChaCha8Rng,
}

impl RandomPairs {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        Self::with_batch_size(n, seed, DEFAULT_BATCH_SIZE)
    }

    pub fn with_batch_size(n: usize, seed: u64, batch_size: u64) -> Result<Self> {
        Self::resume(n, seed, batch_size, 0)
    }

    pub fn resume(n: usize, seed: u64, batch_size: u64, batch: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::CorpusTooSmall { needed: 2, found: n });
        }
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(Self {
            n,
            seed,
            batch_size,
            batch,
            in_batch: 0,
            rng: Self::batch_rng(seed, batch),
        })
    }

    fn batch_rng(seed: u64, batch: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(batch);
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn batch_size(&self) -> u64 {
        self.batch_size
    }

    /// Index of the batch the next pair comes from.
    pub fn batch(&self) -> u64 {
        self.batch
    }

    /// Pairs drawn so far, counted from the start of batch 0.
    pub fn position(&self) -> u64 {
        self.batch * self.batch_size + self.in_batch
    }

    pub fn next_pair(&mut self) -> (usize, usize) {
        if self.in_batch == self.batch_size {
            self.batch += 1;
            self.in_batch = 0;
            self.rng = Self::batch_rng(self.seed, self.batch);
            log::debug!("random pair stream seed {} entering batch {}", self.seed, self.batch);
        }
        self.in_batch += 1;
        let i = self.rng.gen_range(0..self.n);
        let mut j = self.rng.gen_range(0..self.n - 1);
        if j >= i {
            j += 1;
        }
        (i.min(j), i.max(j))
    }
}

impl Iterator for RandomPairs {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_pair())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BlockedOut,
    GatedOut,
    Classified,
}

/// Cheap per-pair outcome used inside scans.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub stage: Stage,
    pub score: f64,
    pub suspected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub id_a: String,
    pub id_b: String,
    pub kind: PairKind,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub suspected: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contributions: Vec<NamedValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_net: Option<f64>,
    pub model_id: String,
}

/// Something that classifies report pairs. Implementations are immutable
/// and shared across scan workers.
pub trait PairScorer: Sync {
    fn model_id(&self) -> String;

    fn outcome(
        &self,
        a: &PreparedReport,
        b: &PreparedReport,
        scratch: &mut Vec<ItemId>,
    ) -> Result<Outcome>;

    fn verdict(&self, a: &PreparedReport, b: &PreparedReport) -> Result<PairVerdict>;

    fn explanation(&self, a: &PreparedReport, b: &PreparedReport) -> Result<Explanation>;
}

pub fn pair_kind(a: &PreparedReport, b: &PreparedReport) -> PairKind {
    if a.is_vaccine || b.is_vaccine {
        PairKind::VaccinePair
    } else {
        PairKind::DrugPair
    }
}

fn ordered<'r>(a: &'r PreparedReport, b: &'r PreparedReport) -> (&'r PreparedReport, &'r PreparedReport) {
    if a.id <= b.id {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn blocking_facts(a: &PreparedReport, b: &PreparedReport, tables: &FrequencyTables) -> BlockingFacts {
    let shared_substances = a
        .drugs
        .iter()
        .filter(|d| b.drugs.binary_search(d).is_ok())
        .map(|d| tables.vocabulary().name(*d).to_string())
        .collect();
    let shared_socs = a.socs.iter().filter(|s| b.socs.binary_search(s).is_ok()).count();
    BlockingFacts {
        shared_substances,
        shared_socs,
    }
}

fn blocked_verdict(a: &PreparedReport, b: &PreparedReport, model_id: String) -> PairVerdict {
    let (a, b) = ordered(a, b);
    PairVerdict {
        id_a: a.id.clone(),
        id_b: b.id.clone(),
        kind: pair_kind(a, b),
        stage: Stage::BlockedOut,
        score: None,
        suspected: false,
        contributions: Vec::new(),
        intercept: None,
        gate_net: None,
        model_id,
    }
}

/// Two linear models, routed by pair kind.
pub struct ModelScorer<'a> {
    drug: &'a ClassifierModel,
    vaccine: &'a ClassifierModel,
    tables: &'a FrequencyTables,
    whitelist: &'a PrefixWhitelist,
    /// Forces the externally-indicated feature to 0 (masked recall).
    pub mask_external: bool,
}

impl<'a> ModelScorer<'a> {
    pub fn new(
        drug: &'a ClassifierModel,
        vaccine: &'a ClassifierModel,
        tables: &'a FrequencyTables,
        whitelist: &'a PrefixWhitelist,
    ) -> Result<Self> {
        drug.validate()?;
        vaccine.validate()?;
        if drug.kind != ModelKind::Drug || vaccine.kind != ModelKind::Vaccine {
            return Err(Error::ModelMismatch(format!(
                "expected drug and vaccine models, got {:?} and {:?}",
                drug.kind, vaccine.kind
            )));
        }
        Ok(Self {
            drug,
            vaccine,
            tables,
            whitelist,
            mask_external: false,
        })
    }

    pub fn model_for(&self, kind: PairKind) -> &ClassifierModel {
        match kind {
            PairKind::DrugPair => self.drug,
            PairKind::VaccinePair => self.vaccine,
        }
    }

    fn decision(
        &self,
        a: &PreparedReport,
        b: &PreparedReport,
        scratch: &mut Vec<ItemId>,
    ) -> Result<(PairKind, crate::svm::Decision)> {
        let kind = pair_kind(a, b);
        let model = self.model_for(kind);
        let ctx = FeatureContext {
            tables: self.tables,
            params: &model.hitmiss_params,
            whitelist: self.whitelist,
        };
        let mut fv = compute_features_with(a, b, &ctx, scratch)?.vector;
        if self.mask_external {
            fv.0[crate::features::EXTERNAL] = 0.0;
        }
        let gate = model.gate(&fv);
        Ok((kind, model.decide_unchecked(&fv, gate)))
    }
}

impl PairScorer for ModelScorer<'_> {
    fn model_id(&self) -> String {
        format!("svm[{}|{}]", self.drug.id(), self.vaccine.id())
    }

    fn outcome(
        &self,
        a: &PreparedReport,
        b: &PreparedReport,
        scratch: &mut Vec<ItemId>,
    ) -> Result<Outcome> {
        if !blocking_pass_prepared(a, b) {
            return Ok(Outcome {
                stage: Stage::BlockedOut,
                score: f64::NAN,
                suspected: false,
            });
        }
        let (_, d) = self.decision(a, b, scratch)?;
        Ok(Outcome {
            stage: if d.gate.passed {
                Stage::Classified
            } else {
                Stage::GatedOut
            },
            score: d.score,
            suspected: d.suspected,
        })
    }

    fn verdict(&self, a: &PreparedReport, b: &PreparedReport) -> Result<PairVerdict> {
        if !blocking_pass_prepared(a, b) {
            return Ok(blocked_verdict(a, b, self.model_id()));
        }
        let (a, b) = ordered(a, b);
        let (kind, d) = self.decision(a, b, &mut Vec::new())?;
        let e = explain(&d, None);
        Ok(PairVerdict {
            id_a: a.id.clone(),
            id_b: b.id.clone(),
            kind,
            stage: if d.gate.passed {
                Stage::Classified
            } else {
                Stage::GatedOut
            },
            score: Some(d.score),
            suspected: d.suspected,
            contributions: e.contributions,
            intercept: Some(d.intercept),
            gate_net: Some(d.gate.net),
            model_id: self.model_for(kind).id(),
        })
    }

    fn explanation(&self, a: &PreparedReport, b: &PreparedReport) -> Result<Explanation> {
        let (a, b) = ordered(a, b);
        let (_, d) = self.decision(a, b, &mut Vec::new())?;
        Ok(explain(&d, Some(blocking_facts(a, b, self.tables))))
    }
}

pub const BASELINE_FORMAT_VERSION: u32 = 1;

pub const BASELINE_FEATURES: [&str; 6] = ["sex", "age", "country", "onset", "outcome", "drugs_events"];

/// Summation-scored comparator: every hit-miss weight added up with global
/// rates and uncapped correlation compensation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub format_version: u32,
    pub params: HitMissParams,
    /// Mean score of known duplicate pairs.
    pub threshold: f64,
    pub gate_fields: Vec<String>,
    pub duplicates_used: usize,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl BaselineModel {
    /// Threshold set to the mean score of `duplicates` that pass blocking.
    pub fn fit(
        reports: &[PreparedReport],
        duplicates: &[(usize, usize)],
        tables: &FrequencyTables,
        params: HitMissParams,
    ) -> Result<Self> {
        let mut model = Self {
            format_version: BASELINE_FORMAT_VERSION,
            params,
            threshold: 0.0,
            gate_fields: vec!["age".into(), "sex".into(), "onset".into()],
            duplicates_used: 0,
            notes: vec![
                "patient initials unavailable; omitted from score and gate".into(),
                "global rates and uncapped correlation compensation".into(),
            ],
        };
        let scorer = BaselineScorer {
            model: &model,
            tables,
        };
        let mut scratch = Vec::new();
        let scores: Vec<f64> = duplicates
            .iter()
            .filter(|(a, b)| blocking_pass_prepared(&reports[*a], &reports[*b]))
            .map(|(a, b)| scorer.score(&reports[*a], &reports[*b], &mut scratch).map(|s| s.total))
            .collect::<Result<_>>()?;
        if scores.is_empty() {
            return Err(Error::NoPositives);
        }
        model.threshold = mean_threshold(&scores);
        model.duplicates_used = scores.len();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_reader(BufReader::new(file))?;
        if m.format_version != BASELINE_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: m.format_version,
                expected: BASELINE_FORMAT_VERSION,
            });
        }
        m.params.validate()?;
        Ok(m)
    }
}

pub fn mean_threshold(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineScore {
    pub parts: [f64; 6],
    pub total: f64,
    pub gate_net: f64,
}

impl BaselineScore {
    /// Strictly positive demographic net required.
    pub fn gate_passed(&self) -> bool {
        self.gate_net > 0.0
    }
}

pub struct BaselineScorer<'a> {
    pub model: &'a BaselineModel,
    pub tables: &'a FrequencyTables,
}

impl BaselineScorer<'_> {
    pub fn score(
        &self,
        a: &PreparedReport,
        b: &PreparedReport,
        scratch: &mut Vec<ItemId>,
    ) -> Result<BaselineScore> {
        let p = &self.model.params;
        let t = self.tables;
        let sex = categorical_weight(a.sex.known(), b.sex.known(), &t.sex, p.alpha_sex)?;
        let country = categorical_weight(Some(&a.country), Some(&b.country), &t.country, p.alpha_country)?;
        let outcome = categorical_weight(a.outcome.as_deref(), b.outcome.as_deref(), &t.outcome, p.alpha_outcome)?;
        let age = match (a.age, b.age) {
            (Some(x), Some(y)) => mixture_weight_for_gap(x.gap(&y), &p.age, &p.age_hist),
            _ => 0.0,
        };
        let onset = match (a.onset, b.onset) {
            (Some(x), Some(y)) => mixture_weight_for_gap(x.gap(&y), &p.onset, &p.onset_hist),
            _ => 0.0,
        };
        let de = drug_event_score(
            DrugEventInput {
                drugs: &a.drugs,
                events: &a.events,
            },
            DrugEventInput {
                drugs: &b.drugs,
                events: &b.events,
            },
            t.global(),
            p.alpha_drugs,
            p.alpha_events,
            false,
            scratch,
        );
        let parts = [sex, age, country, onset, outcome, de.value];
        Ok(BaselineScore {
            parts,
            total: parts.iter().sum(),
            gate_net: age + sex + onset,
        })
    }

    fn suspected(&self, s: &BaselineScore) -> bool {
        s.gate_passed() && s.total > self.model.threshold
    }
}

impl PairScorer for BaselineScorer<'_> {
    fn model_id(&self) -> String {
        "baseline".into()
    }

    fn outcome(
        &self,
        a: &PreparedReport,
        b: &PreparedReport,
        scratch: &mut Vec<ItemId>,
    ) -> Result<Outcome> {
        if !blocking_pass_prepared(a, b) {
            return Ok(Outcome {
                stage: Stage::BlockedOut,
                score: f64::NAN,
                suspected: false,
            });
        }
        let s = self.score(a, b, scratch)?;
        Ok(Outcome {
            stage: if s.gate_passed() {
                Stage::Classified
            } else {
                Stage::GatedOut
            },
            score: s.total,
            suspected: self.suspected(&s),
        })
    }

    fn verdict(&self, a: &PreparedReport, b: &PreparedReport) -> Result<PairVerdict> {
        if !blocking_pass_prepared(a, b) {
            return Ok(blocked_verdict(a, b, self.model_id()));
        }
        let (a, b) = ordered(a, b);
        let s = self.score(a, b, &mut Vec::new())?;
        Ok(PairVerdict {
            id_a: a.id.clone(),
            id_b: b.id.clone(),
            kind: pair_kind(a, b),
            stage: if s.gate_passed() {
                Stage::Classified
            } else {
                Stage::GatedOut
            },
            score: Some(s.total),
            suspected: self.suspected(&s),
            contributions: named(&s.parts),
            intercept: None,
            gate_net: Some(s.gate_net),
            model_id: self.model_id(),
        })
    }

    fn explanation(&self, a: &PreparedReport, b: &PreparedReport) -> Result<Explanation> {
        let (a, b) = ordered(a, b);
        let s = self.score(a, b, &mut Vec::new())?;
        Ok(Explanation {
            contributions: named(&s.parts),
            intercept: 0.0,
            threshold: self.model.threshold,
            score: s.total,
            gate_net: s.gate_net,
            gate_passed: s.gate_passed(),
            suspected: self.suspected(&s),
            blocking: Some(blocking_facts(a, b, self.tables)),
        })
    }
}

fn named(parts: &[f64; 6]) -> Vec<NamedValue> {
    BASELINE_FEATURES
        .iter()
        .zip(parts)
        .map(|(n, v)| NamedValue {
            name: n.to_string(),
            value: *v,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanStats {
    /// Unordered pairs covered by the scan, N(N-1)/2.
    pub pairs: u64,
    pub blocked_out: u64,
    /// Pairs that passed blocking; features were computed for exactly these.
    pub features_computed: u64,
    pub gated_out: u64,
    pub classified: u64,
    pub suspected: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    /// Every pair, including blocked ones. Enumerates all pairs.
    All,
    /// Pairs that passed blocking.
    NonBlocked,
    #[default]
    Suspected,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Check blocking on every pair.
    AllPairs,
    /// Enumerate only blocking candidates via a (substance, SOC) index.
    #[default]
    Indexed,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ScanOptions {
    pub emit: Emit,
    pub strategy: Strategy,
}

/// Suspected pair found by a precision run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuspectedPair {
    pub id_a: String,
    pub id_b: String,
    /// Zero-based position in the random-pair stream.
    pub position: u64,
    pub kind: PairKind,
    pub explanation: Explanation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model_id: String,
    pub seed: u64,
    pub batch_size: u64,
    pub n_reports: usize,
    pub stop_at: usize,
    pub pairs_consumed: u64,
    pub batches: u64,
    pub complete: bool,
    pub suspected: Vec<SuspectedPair>,
}

impl RunRecord {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub seed: u64,
    pub batch_size: u64,
    /// Stop after this many pairs even if `stop_at` is not reached.
    pub max_pairs: Option<u64>,
}

/// Rows handed to workers at a time; output is emitted in row order.
const ROW_BLOCK: usize = 64;
/// Pairs generated per parallel evaluation round of a precision run.
const STREAM_BLOCK: usize = 1 << 16;

/// Prepared corpus, sorted by report id.
pub struct Engine {
    reports: Vec<PreparedReport>,
    index: HashMap<String, usize>,
}

impl Engine {
    pub fn prepare(
        corpus: &Corpus,
        tables: &FrequencyTables,
        extractor: &DateExtractor,
        kernel: &DateKernel,
    ) -> Result<Self> {
        kernel.validate()?;
        let mut preparer = Preparer::new(tables, extractor, kernel);
        let mut reports = corpus
            .reports()
            .iter()
            .map(|r| preparer.prepare(r))
            .collect::<Result<Vec<_>>>()?;
        reports.sort_by(|a, b| a.id.cmp(&b.id));
        let index = reports
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        Ok(Self { reports, index })
    }

    pub fn reports(&self) -> &[PreparedReport] {
        &self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownReport(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<&PreparedReport> {
        Ok(&self.reports[self.index_of(id)?])
    }

    /// Indices of every report, in id order.
    pub fn all(&self) -> Vec<usize> {
        (0..self.reports.len()).collect()
    }

    pub fn country_subset(&self, country: &str) -> Vec<usize> {
        (0..self.reports.len())
            .filter(|&i| self.reports[i].country == country)
            .collect()
    }

    /// Evaluates every unordered pair of `subset` once, streaming verdicts to
    /// `sink` in sorted id-pair order. Blocked pairs are never featurized.
    pub fn scan_exhaustive(
        &self,
        subset: &[usize],
        scorer: &dyn PairScorer,
        opts: ScanOptions,
        mut sink: impl FnMut(PairVerdict) -> Result<()>,
    ) -> Result<ScanStats> {
        let mut subset = subset.to_vec();
        subset.sort_unstable();
        subset.dedup();
        let n = subset.len() as u64;
        let strategy = if opts.emit == Emit::All {
            Strategy::AllPairs
        } else {
            opts.strategy
        };
        let candidates = match strategy {
            Strategy::Indexed => Some(CandidateIndex::build(&self.reports, &subset)),
            Strategy::AllPairs => None,
        };
        let mut stats = ScanStats {
            pairs: n * n.saturating_sub(1) / 2,
            ..Default::default()
        };
        for block in subset.chunks(ROW_BLOCK * rayon::current_num_threads().max(1)) {
            let first = block.as_ptr() as usize - subset.as_ptr() as usize;
            let first = first / std::mem::size_of::<usize>();
            let rows: Vec<Result<(ScanStats, Vec<PairVerdict>)>> = (0..block.len())
                .into_par_iter()
                .map(|k| {
                    let row = first + k;
                    let others: Vec<usize> = match &candidates {
                        Some(idx) => idx.partners(row),
                        None => ((row + 1)..subset.len()).collect(),
                    };
                    self.scan_row(subset[row], others.iter().map(|&o| subset[o]), scorer, opts.emit)
                })
                .collect();
            for r in rows {
                let (s, verdicts) = r?;
                stats.blocked_out += s.blocked_out;
                stats.features_computed += s.features_computed;
                stats.gated_out += s.gated_out;
                stats.classified += s.classified;
                stats.suspected += s.suspected;
                for v in verdicts {
                    sink(v)?;
                }
            }
        }
        stats.blocked_out = stats.pairs - stats.features_computed;
        Ok(stats)
    }

    fn scan_row(
        &self,
        i: usize,
        partners: impl Iterator<Item = usize>,
        scorer: &dyn PairScorer,
        emit: Emit,
    ) -> Result<(ScanStats, Vec<PairVerdict>)> {
        let mut stats = ScanStats::default();
        let mut out = Vec::new();
        let mut scratch = Vec::new();
        let a = &self.reports[i];
        for j in partners {
            let b = &self.reports[j];
            let o = scorer.outcome(a, b, &mut scratch)?;
            match o.stage {
                Stage::BlockedOut => stats.blocked_out += 1,
                Stage::GatedOut => stats.gated_out += 1,
                Stage::Classified => stats.classified += 1,
            }
            if o.stage != Stage::BlockedOut {
                stats.features_computed += 1;
            }
            stats.suspected += o.suspected as u64;
            let wanted = match emit {
                Emit::All => true,
                Emit::NonBlocked => o.stage != Stage::BlockedOut,
                Emit::Suspected => o.suspected,
            };
            if wanted {
                out.push(scorer.verdict(a, b)?);
            }
        }
        Ok((stats, out))
    }

    /// Classifies stream pairs until `stop_at` distinct suspected pairs are
    /// found (or `max_pairs` is exhausted, leaving the record incomplete). A
    /// pair drawn again after it was recorded is consumed but not recorded.
    pub fn precision_run(
        &self,
        stream: StreamConfig,
        scorer: &dyn PairScorer,
        stop_at: usize,
    ) -> Result<RunRecord> {
        if stop_at == 0 {
            return Err(Error::InvalidConfig("stop_at must be at least 1".into()));
        }
        let mut pairs = RandomPairs::with_batch_size(self.len(), stream.seed, stream.batch_size)?;
        let limit = stream.max_pairs.unwrap_or(u64::MAX);
        let mut suspected = Vec::new();
        let mut found: HashSet<(usize, usize)> = HashSet::new();
        let mut consumed = 0u64;
        let mut last_batch = 0;
        while suspected.len() < stop_at && consumed < limit {
            let take = (limit - consumed).min(STREAM_BLOCK as u64) as usize;
            let block: Vec<(usize, usize)> = (0..take).map(|_| pairs.next_pair()).collect();
            if pairs.batch() != last_batch {
                log::info!(
                    "{}: batch {} reached after {} pairs",
                    scorer.model_id(),
                    pairs.batch(),
                    consumed
                );
                last_batch = pairs.batch();
            }
            let hits: Vec<Result<Option<usize>>> = block
                .par_iter()
                .enumerate()
                .map_init(Vec::new, |scratch, (k, &(i, j))| {
                    let o = scorer.outcome(&self.reports[i], &self.reports[j], scratch)?;
                    Ok(o.suspected.then_some(k))
                })
                .collect();
            let mut used = block.len();
            for h in hits {
                let Some(k) = h? else { continue };
                let (i, j) = block[k];
                if !found.insert((i, j)) {
                    continue;
                }
                let (a, b) = (&self.reports[i], &self.reports[j]);
                suspected.push(SuspectedPair {
                    id_a: a.id.clone(),
                    id_b: b.id.clone(),
                    position: consumed + k as u64,
                    kind: pair_kind(a, b),
                    explanation: scorer.explanation(a, b)?,
                });
                if suspected.len() == stop_at {
                    used = k + 1;
                    break;
                }
            }
            consumed += used as u64;
        }
        Ok(RunRecord {
            model_id: scorer.model_id(),
            seed: stream.seed,
            batch_size: stream.batch_size,
            n_reports: self.len(),
            stop_at,
            pairs_consumed: consumed,
            batches: consumed.div_ceil(stream.batch_size),
            complete: suspected.len() == stop_at,
            suspected,
        })
    }

    /// Gap histograms for age and onset from `n_pairs` random pairs.
    pub fn fit_independence(&self, seed: u64, n_pairs: usize) -> Result<(IndependenceHistogram, IndependenceHistogram)> {
        let stream = RandomPairs::new(self.len(), seed)?;
        let mut age = Vec::new();
        let mut onset = Vec::new();
        for (i, j) in stream.take(n_pairs) {
            let (a, b) = (&self.reports[i], &self.reports[j]);
            if let (Some(x), Some(y)) = (a.age, b.age) {
                age.push(x.gap(&y));
            }
            if let (Some(x), Some(y)) = (a.onset, b.onset) {
                onset.push(x.gap(&y));
            }
        }
        Ok((
            IndependenceHistogram::from_gaps(age),
            IndependenceHistogram::from_gaps(onset),
        ))
    }
}

/// Inverted index from (substance, SOC) to subset rows. Two reports pass
/// blocking exactly when their substance × SOC products intersect.
struct CandidateIndex {
    keys: Vec<Vec<u64>>,
    postings: HashMap<u64, Vec<usize>>,
}

impl CandidateIndex {
    fn build(reports: &[PreparedReport], subset: &[usize]) -> Self {
        let mut postings: HashMap<u64, Vec<usize>> = HashMap::new();
        let keys: Vec<Vec<u64>> = subset
            .iter()
            .map(|&i| {
                let r = &reports[i];
                let mut ks = Vec::with_capacity(r.drugs.len() * r.socs.len());
                for d in &r.drugs {
                    for s in &r.socs {
                        ks.push(((d.0 as u64) << 32) | *s as u64);
                    }
                }
                ks
            })
            .collect();
        for (row, ks) in keys.iter().enumerate() {
            for k in ks {
                postings.entry(*k).or_default().push(row);
            }
        }
        Self { keys, postings }
    }

    /// Rows after `row` sharing at least one key, ascending.
    fn partners(&self, row: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for k in &self.keys[row] {
            let list = &self.postings[k];
            let start = list.partition_point(|&r| r <= row);
            out.extend_from_slice(&list[start..]);
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub members: Vec<String>,
    pub representative: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub groups: Vec<DuplicateGroup>,
    pub remaining: usize,
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the suspected-pair graph. `remaining` is the
/// corpus size after keeping one representative per group.
pub fn cluster_groups<S: AsRef<str>>(pairs: &[(S, S)], n_total: usize) -> Clustering {
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    for (a, b) in pairs {
        for id in [a.as_ref(), b.as_ref()] {
            let next = ids.len();
            ids.entry(id).or_insert(next);
        }
    }
    let mut uf = UnionFind::new(ids.len());
    for (a, b) in pairs {
        uf.union(ids[a.as_ref()], ids[b.as_ref()]);
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (id, &k) in &ids {
        let root = uf.find(k);
        groups.entry(root).or_default().push(id.to_string());
    }
    let mut groups: Vec<DuplicateGroup> = groups
        .into_values()
        .filter(|m| m.len() >= 2)
        .map(|members| DuplicateGroup {
            representative: members[0].clone(),
            members,
        })
        .collect();
    groups.sort_by(|a, b| a.representative.cmp(&b.representative));
    let removed: usize = groups.iter().map(|g| g.members.len() - 1).sum();
    Clustering {
        groups,
        remaining: n_total.saturating_sub(removed),
    }
}
