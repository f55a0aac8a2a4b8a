//! Linear soft-margin SVM: training by dual coordinate descent, plus the
//! decision and explanation of a single pair.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::RandomPairs;
use crate::error::{Error, Result};
use crate::features::{
    blocking_pass_prepared, compute_features_with, demographic_gate, FeatureContext,
    FeatureVector, GateResult, PreparedReport, DATE_EMBEDDING, AGE, FEATURE_NAMES, SEX,
};
use crate::hitmiss::HitMissParams;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Drug,
    Vaccine,
}

impl ModelKind {
    pub fn matches_vaccine_pair(self, vaccine_pair: bool) -> bool {
        matches!(
            (self, vaccine_pair),
            (ModelKind::Vaccine, true) | (ModelKind::Drug, false)
        )
    }
}

/// Annotation categories for a labelled pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Duplicate,
    OtherwiseRelated,
    NonDuplicate,
}

impl PairLabel {
    /// Only duplicates form the positive class.
    pub fn svm_target(self) -> f64 {
        match self {
            PairLabel::Duplicate => 1.0,
            PairLabel::OtherwiseRelated | PairLabel::NonDuplicate => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelledPair {
    pub id_a: String,
    pub id_b: String,
    pub label: PairLabel,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub annotator: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingSample {
    pub x: [f64; 6],
    pub y: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub c: f64,
    /// Stop once `primal - dual <= tolerance * max(1, primal)`.
    pub tolerance: f64,
    pub max_epochs: usize,
    /// Constant appended to every sample so the intercept is learned as a
    /// weight (and regularized with it).
    pub bias_feature: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-6,
            max_epochs: 20_000,
            bias_feature: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub weights: [f64; 6],
    pub intercept: f64,
    pub alpha: Vec<f64>,
    pub epochs: usize,
    pub primal: f64,
    pub dual: f64,
    pub converged: bool,
    /// Dual objective `0.5 |w|^2 - sum(alpha)` after each epoch; minimized, so
    /// non-increasing.
    pub dual_history: Vec<f64>,
}

impl Solution {
    pub fn duality_gap(&self) -> f64 {
        self.primal - self.dual
    }
}

const DIM: usize = 7;

fn augmented(x: &[f64; 6], bias: f64) -> [f64; DIM] {
    [x[0], x[1], x[2], x[3], x[4], x[5], bias]
}

#[inline]
fn dot(a: &[f64; DIM], b: &[f64; DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Primal objective `0.5 |(w, b)|^2 + C * sum(weight_i * hinge_i)` with the
/// intercept folded in as a bias feature.
pub fn primal_objective(samples: &[TrainingSample], w: &[f64; 6], b: f64, cfg: &SolverConfig) -> f64 {
    let bw = b / cfg.bias_feature;
    let mut wa = [0.0; DIM];
    wa[..6].copy_from_slice(w);
    wa[6] = bw;
    let reg = 0.5 * dot(&wa, &wa);
    let loss: f64 = samples
        .iter()
        .map(|s| {
            let margin = s.y * dot(&wa, &augmented(&s.x, cfg.bias_feature));
            cfg.c * s.weight * (1.0 - margin).max(0.0)
        })
        .sum();
    reg + loss
}

/// Dual coordinate descent for the L1-loss (hinge) linear SVM.
pub fn solve(samples: &[TrainingSample], cfg: &SolverConfig) -> Result<Solution> {
    if !(cfg.c > 0.0) || !(cfg.bias_feature > 0.0) {
        return Err(Error::InvalidConfig("C and bias feature must be positive".into()));
    }
    if samples.iter().any(|s| !(s.weight > 0.0) || (s.y != 1.0 && s.y != -1.0)) {
        return Err(Error::InvalidConfig("samples need labels ±1 and positive weights".into()));
    }
    let xs: Vec<[f64; DIM]> = samples.iter().map(|s| augmented(&s.x, cfg.bias_feature)).collect();
    let qd: Vec<f64> = xs.iter().map(|x| dot(x, x)).collect();
    let upper: Vec<f64> = samples.iter().map(|s| cfg.c * s.weight).collect();
    let mut alpha = vec![0.0; samples.len()];
    let mut w = [0.0; DIM];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut epochs = 0;
    let mut converged = samples.is_empty();
    let (mut primal, mut dual) = (0.0, 0.0);

    while !converged && epochs < cfg.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            if qd[i] == 0.0 {
                continue;
            }
            let y = samples[i].y;
            let g = y * dot(&w, &xs[i]) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == upper[i] {
                g.max(0.0)
            } else {
                g
            };
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, upper[i]);
                let step = (alpha[i] - old) * y;
                for (wk, xk) in w.iter_mut().zip(&xs[i]) {
                    *wk += step * xk;
                }
            }
        }
        epochs += 1;
        let norm2 = dot(&w, &w);
        let loss: f64 = xs
            .iter()
            .zip(samples)
            .zip(&upper)
            .map(|((x, s), u)| u * (1.0 - s.y * dot(&w, x)).max(0.0))
            .sum();
        primal = 0.5 * norm2 + loss;
        dual = alpha.iter().sum::<f64>() - 0.5 * norm2;
        history.push(-dual);
        converged = primal - dual <= cfg.tolerance * primal.max(1.0);
    }

    let mut weights = [0.0; 6];
    weights.copy_from_slice(&w[..6]);
    Ok(Solution {
        weights,
        intercept: w[6] * cfg.bias_feature,
        alpha,
        epochs,
        primal,
        dual,
        converged,
        dual_history: history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub positives: usize,
    pub labelled_negatives: usize,
    pub sampled_negatives: usize,
    /// Target negatives per positive.
    pub negative_ratio: f64,
    /// Cap on explicitly sampled negatives per positive.
    pub sample_cap: usize,
    /// Weight applied to every negative so the effective ratio is reached.
    pub negative_class_weight: f64,
    pub seed: u64,
    pub solver_tolerance: f64,
    pub epochs: usize,
    pub duality_gap: f64,
    pub converged: bool,
    #[serde(default)]
    pub annotation_pairs_added: usize,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub format_version: u32,
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub threshold: f64,
    pub hitmiss_params: HitMissParams,
    pub metadata: TrainingMetadata,
}

impl ClassifierModel {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        if self.feature_names.len() != FEATURE_NAMES.len()
            || self.feature_names.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b)
        {
            return Err(Error::ModelMismatch(format!(
                "feature names {:?} differ from {:?}",
                self.feature_names, FEATURE_NAMES
            )));
        }
        if self.weights.len() != 6 || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::ModelMismatch("expected six finite weights".into()));
        }
        if !(self.c > 0.0) || !self.intercept.is_finite() || !self.threshold.is_finite() {
            return Err(Error::ModelMismatch("invalid C, intercept or threshold".into()));
        }
        self.hitmiss_params.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_reader(BufReader::new(file))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn id(&self) -> String {
        format!("{:?}-seed{}", self.kind, self.metadata.seed).to_lowercase()
    }

    #[inline]
    fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Demographic gate on the weighted sex, age and date-embedding values.
    pub fn gate(&self, fv: &FeatureVector) -> GateResult {
        demographic_gate(
            self.weight(SEX) * fv.0[SEX],
            self.weight(AGE) * fv.0[AGE],
            self.weight(DATE_EMBEDDING) * fv.0[DATE_EMBEDDING],
        )
    }

    pub fn decide(&self, fv: &FeatureVector, gate: GateResult) -> Result<Decision> {
        if self.feature_names.len() != 6
            || self.feature_names.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b)
        {
            return Err(Error::ModelMismatch("feature names differ".into()));
        }
        Ok(self.decide_unchecked(fv, gate))
    }

    /// [`Self::decide`] for a model already validated on load.
    #[inline]
    pub fn decide_unchecked(&self, fv: &FeatureVector, gate: GateResult) -> Decision {
        let mut contributions = [0.0; 6];
        for (i, c) in contributions.iter_mut().enumerate() {
            *c = self.weights[i] * fv.0[i];
        }
        let score = total_score(&contributions, self.intercept);
        Decision {
            contributions,
            intercept: self.intercept,
            threshold: self.threshold,
            score,
            gate,
            suspected: gate.passed && score > self.threshold,
        }
    }
}

/// Contributions summed in feature order, then the intercept.
#[inline]
pub fn total_score(contributions: &[f64], intercept: f64) -> f64 {
    contributions.iter().fold(0.0, |acc, c| acc + c) + intercept
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub contributions: [f64; 6],
    pub intercept: f64,
    pub threshold: f64,
    pub score: f64,
    pub gate: GateResult,
    pub suspected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockingFacts {
    pub shared_substances: Vec<String>,
    pub shared_socs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub contributions: Vec<NamedValue>,
    pub intercept: f64,
    pub threshold: f64,
    pub score: f64,
    pub gate_net: f64,
    pub gate_passed: bool,
    pub suspected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocking: Option<BlockingFacts>,
}

impl Explanation {
    /// Score recomputed from the record alone.
    pub fn total(&self) -> f64 {
        let c: Vec<f64> = self.contributions.iter().map(|c| c.value).collect();
        total_score(&c, self.intercept)
    }
}

pub fn explain(decision: &Decision, blocking: Option<BlockingFacts>) -> Explanation {
    Explanation {
        contributions: FEATURE_NAMES
            .iter()
            .zip(decision.contributions)
            .map(|(n, v)| NamedValue {
                name: n.to_string(),
                value: v,
            })
            .collect(),
        intercept: decision.intercept,
        threshold: decision.threshold,
        score: decision.score,
        gate_net: decision.gate.net,
        gate_passed: decision.gate.passed,
        suspected: decision.suspected,
        blocking,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub negative_ratio: f64,
    pub sample_cap: usize,
    pub seed: u64,
    pub c: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
    pub threshold: f64,
}

impl TrainConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            negative_ratio: 1e6,
            sample_cap: 1000,
            seed: 0,
            c: 1.0,
            tolerance: 1e-6,
            max_epochs: 20_000,
            threshold: 0.0,
        }
    }
}

/// A pair of report indices into the prepared corpus with its label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexedPair {
    pub a: usize,
    pub b: usize,
    pub label: PairLabel,
}

/// Fits one model from labelled pairs plus randomly sampled blocking-passing
/// pairs of the model's kind, which serve as negatives.
pub fn train(
    reports: &[PreparedReport],
    labelled: &[IndexedPair],
    ctx: &FeatureContext<'_>,
    cfg: &TrainConfig,
) -> Result<ClassifierModel> {
    if !(cfg.negative_ratio >= 0.0) || !(cfg.c > 0.0) {
        return Err(Error::InvalidConfig("negative ratio and C must be positive".into()));
    }
    let positives = labelled.iter().filter(|p| p.label == PairLabel::Duplicate).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut scratch = Vec::new();
    let mut samples = Vec::with_capacity(labelled.len());
    for p in labelled {
        let (a, b) = (&reports[p.a], &reports[p.b]);
        if !blocking_pass_prepared(a, b) {
            return Err(Error::PairFailsBlocking(a.id.clone(), b.id.clone()));
        }
        let f = compute_features_with(a, b, ctx, &mut scratch)?;
        samples.push(TrainingSample {
            x: f.vector.0,
            y: p.label.svm_target(),
            weight: 1.0,
        });
    }
    let labelled_negatives = samples.len() - positives;

    let target = cfg.negative_ratio * positives as f64;
    let wanted = ((target - labelled_negatives as f64).max(0.0))
        .min((cfg.sample_cap * positives) as f64) as usize;
    let mut sampled = 0;
    if wanted > 0 && reports.len() >= 2 {
        let known: HashSet<(usize, usize)> = labelled.iter().map(|p| (p.a.min(p.b), p.a.max(p.b))).collect();
        let mut stream = RandomPairs::new(reports.len(), cfg.seed)?;
        let max_draws = wanted.saturating_mul(2000).max(1_000_000);
        let mut draws = 0usize;
        while sampled < wanted && draws < max_draws {
            let (i, j) = stream.next_pair();
            draws += 1;
            let (a, b) = (&reports[i], &reports[j]);
            if known.contains(&(i, j))
                || !cfg.kind.matches_vaccine_pair(a.is_vaccine || b.is_vaccine)
                || !blocking_pass_prepared(a, b)
            {
                continue;
            }
            let f = compute_features_with(a, b, ctx, &mut scratch)?;
            samples.push(TrainingSample {
                x: f.vector.0,
                y: -1.0,
                weight: 1.0,
            });
            sampled += 1;
        }
    }
    let negatives = labelled_negatives + sampled;
    let negative_class_weight = if negatives > 0 {
        (target / negatives as f64).max(1.0)
    } else {
        1.0
    };
    for s in samples.iter_mut().filter(|s| s.y < 0.0) {
        s.weight = negative_class_weight;
    }

    let solver = SolverConfig {
        c: cfg.c,
        tolerance: cfg.tolerance,
        max_epochs: cfg.max_epochs,
        bias_feature: 1.0,
        seed: cfg.seed,
    };
    let sol = solve(&samples, &solver)?;
    let mut notes = vec![format!(
        "effective negative ratio {} realized as {sampled} sampled negatives weighted {negative_class_weight:.3}",
        cfg.negative_ratio
    )];
    if sampled < wanted {
        notes.push(format!("only {sampled} of {wanted} wanted blocking-passing negatives found"));
    }
    if !sol.converged {
        notes.push(format!("solver stopped at epoch cap with gap {:.3e}", sol.duality_gap()));
    }
    Ok(ClassifierModel {
        format_version: MODEL_FORMAT_VERSION,
        kind: cfg.kind,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        weights: sol.weights.to_vec(),
        intercept: sol.intercept,
        c: cfg.c,
        threshold: cfg.threshold,
        hitmiss_params: ctx.params.clone(),
        metadata: TrainingMetadata {
            positives,
            labelled_negatives,
            sampled_negatives: sampled,
            negative_ratio: cfg.negative_ratio,
            sample_cap: cfg.sample_cap,
            negative_class_weight,
            seed: cfg.seed,
            solver_tolerance: cfg.tolerance,
            epochs: sol.epochs,
            duality_gap: sol.duality_gap(),
            converged: sol.converged,
            annotation_pairs_added: 0,
            notes,
        },
    })
}
