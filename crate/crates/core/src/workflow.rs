//! Glue between ground truth, prepared corpora and model training, shared by
//! the command line and the test suites.

use crate::engine::{BaselineModel, Engine};
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::external::PrefixWhitelist;
use crate::features::{blocking_pass_prepared, FeatureContext};
use crate::frequency::FrequencyTables;
use crate::hitmiss::HitMissParams;
use crate::report::PairKind;
use crate::svm::{train, ClassifierModel, IndexedPair, LabelledPair, ModelKind, PairLabel, TrainConfig};
use crate::synth::{GroundTruth, Mechanism, TruthLabel, TruthPair};

/// Random pairs used to fit the independence histograms.
pub const DEFAULT_INDEPENDENCE_PAIRS: usize = 1_000_000;

/// Effective negatives per positive when training on a desk-scale corpus.
/// Larger ratios let unlabelled duplicates among the random negatives
/// dominate the fit, since duplicates are far denser in small corpora.
pub const DESK_NEGATIVE_RATIO: f64 = 1000.0;

/// Sampled negatives per positive; the remaining ratio is carried by weight.
pub const DESK_SAMPLE_CAP: usize = 200;

pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.6, 0.3, 0.1);
pub const DEFAULT_SPLIT_SEED: u64 = 7;
pub const DEFAULT_INDEPENDENCE_SEED: u64 = 1;

pub fn desk_train_config(kind: ModelKind, seed: u64) -> TrainConfig {
    TrainConfig {
        negative_ratio: DESK_NEGATIVE_RATIO,
        sample_cap: DESK_SAMPLE_CAP,
        seed,
        ..TrainConfig::new(kind)
    }
}

/// Default hit-miss parameters with age and onset histograms fitted on
/// random pairs of `engine`.
pub fn fit_params(engine: &Engine, seed: u64, n_pairs: usize) -> Result<HitMissParams> {
    let (age_hist, onset_hist) = engine.fit_independence(seed, n_pairs)?;
    let params = HitMissParams {
        age_hist,
        onset_hist,
        ..HitMissParams::default()
    };
    params.validate()?;
    Ok(params)
}

pub fn truth_to_labelled(pairs: &[TruthPair]) -> Vec<LabelledPair> {
    pairs
        .iter()
        .map(|p| LabelledPair {
            id_a: p.id_a.clone(),
            id_b: p.id_b.clone(),
            label: match p.label {
                TruthLabel::Duplicate => PairLabel::Duplicate,
                TruthLabel::OtherwiseRelated => PairLabel::OtherwiseRelated,
            },
            source: "ground_truth".into(),
            annotator: String::new(),
        })
        .collect()
}

/// Resolves labelled pairs to corpus indices. Pairs failing blocking are
/// returned separately, since no model can ever score them.
pub fn index_pairs(engine: &Engine, pairs: &[LabelledPair]) -> Result<(Vec<IndexedPair>, Vec<LabelledPair>)> {
    let mut usable = Vec::new();
    let mut blocked = Vec::new();
    for p in pairs {
        let a = engine.index_of(&p.id_a)?;
        let b = engine.index_of(&p.id_b)?;
        if blocking_pass_prepared(&engine.reports()[a], &engine.reports()[b]) {
            usable.push(IndexedPair { a, b, label: p.label });
        } else {
            blocked.push(p.clone());
        }
    }
    Ok((usable, blocked))
}

pub fn pair_kind_of(engine: &Engine, p: &IndexedPair) -> PairKind {
    let r = engine.reports();
    crate::engine::pair_kind(&r[p.a], &r[p.b])
}

/// Trains the model of `cfg.kind` on the labelled pairs of that kind.
pub fn train_kind(
    engine: &Engine,
    tables: &FrequencyTables,
    whitelist: &PrefixWhitelist,
    params: &HitMissParams,
    labelled: &[IndexedPair],
    cfg: &TrainConfig,
) -> Result<ClassifierModel> {
    let wanted = match cfg.kind {
        ModelKind::Drug => PairKind::DrugPair,
        ModelKind::Vaccine => PairKind::VaccinePair,
    };
    let own: Vec<IndexedPair> = labelled
        .iter()
        .copied()
        .filter(|p| pair_kind_of(engine, p) == wanted)
        .collect();
    let ctx = FeatureContext {
        tables,
        params,
        whitelist,
    };
    train(engine.reports(), &own, &ctx, cfg)
}

/// Baseline comparator with its threshold taken from the labelled
/// duplicates.
pub fn fit_baseline(
    engine: &Engine,
    tables: &FrequencyTables,
    params: &HitMissParams,
    labelled: &[IndexedPair],
) -> Result<BaselineModel> {
    let dups: Vec<(usize, usize)> = labelled
        .iter()
        .filter(|p| p.label == PairLabel::Duplicate)
        .map(|p| (p.a, p.b))
        .collect();
    if dups.is_empty() {
        return Err(Error::NoPositives);
    }
    BaselineModel::fit(engine.reports(), &dups, tables, params.clone())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallCount {
    pub found: usize,
    pub total: usize,
}

impl RecallCount {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.found as f64 / self.total as f64)
    }
}

/// Suspected pairs scored against planted ground truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthEvaluation {
    pub suspected: usize,
    pub duplicates: usize,
    pub otherwise_related: usize,
    pub precision: Option<f64>,
    /// Recall over detectable duplicates of the evaluated truth subset.
    pub recall: RecallCount,
    pub recall_by_mechanism: BTreeMap<Mechanism, RecallCount>,
}

fn ordered_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Precision is measured against every planted duplicate; recall only over
/// the detectable duplicates listed in `recall_over`.
pub fn evaluate_against_truth<S: AsRef<str>>(
    suspected: &[(S, S)],
    truth: &GroundTruth,
    recall_over: &[TruthPair],
) -> TruthEvaluation {
    let index = truth.index();
    let mut found: HashSet<(String, String)> = HashSet::new();
    let mut ev = TruthEvaluation::default();
    for (a, b) in suspected {
        let k = ordered_key(a.as_ref(), b.as_ref());
        if !found.insert(k.clone()) {
            continue;
        }
        ev.suspected += 1;
        match index.get(&k).map(|p| p.label) {
            Some(TruthLabel::Duplicate) => ev.duplicates += 1,
            Some(TruthLabel::OtherwiseRelated) => ev.otherwise_related += 1,
            None => {}
        }
    }
    ev.precision = (ev.suspected > 0).then(|| ev.duplicates as f64 / ev.suspected as f64);
    for p in recall_over
        .iter()
        .filter(|p| p.label == TruthLabel::Duplicate && !p.undetectable)
    {
        let hit = found.contains(&ordered_key(&p.id_a, &p.id_b));
        let m = ev.recall_by_mechanism.entry(p.mechanism).or_default();
        m.total += 1;
        m.found += hit as usize;
        ev.recall.total += 1;
        ev.recall.found += hit as usize;
    }
    ev
}
