#![allow(dead_code)]

use casematch::dates::DateExtractor;
use casematch::embedding::DateKernel;
use casematch::engine::{BaselineModel, Engine};
use casematch::external::PrefixWhitelist;
use casematch::frequency::{FrequencyTables, DEFAULT_MIN_COUNTRY_SUPPORT};
use casematch::hitmiss::HitMissParams;
use casematch::report::{read_corpus, Corpus, ExclusionFilter, Ontology};
use casematch::svm::{ClassifierModel, ModelKind, SolverConfig, TrainingSample};
use casematch::synth::{generate, holdout_split, Split, SynthConfig, SynthOutput, TruthLabel, TruthPair};
use casematch::workflow::{
    desk_train_config, fit_baseline, fit_params, index_pairs, train_kind, truth_to_labelled,
    DEFAULT_INDEPENDENCE_PAIRS, DEFAULT_INDEPENDENCE_SEED, DEFAULT_SPLIT_RATIOS, DEFAULT_SPLIT_SEED,
};
use serde_json::{json, Value};

/// Log-likelihood ratio of observing values `v` and `w` on two records of a
/// categorical field, by enumerating the latent true value and every
/// hit/miss branch of both records.
pub fn categorical_llr_bruteforce(freqs: &[f64], v: usize, w: usize, alpha: f64) -> f64 {
    let k = freqs.len();
    // P(record = x | truth = t), summing the hit branch and each miss draw.
    let record = |x: usize, t: usize| -> f64 {
        let mut p = 0.0;
        if x == t {
            p += 1.0 - alpha;
        }
        for (d, fd) in freqs.iter().enumerate() {
            if d == x {
                p += alpha * fd;
            }
        }
        p
    };
    let mut dup = 0.0;
    for t in 0..k {
        dup += freqs[t] * record(v, t) * record(w, t);
    }
    let mut ind = 0.0;
    for t1 in 0..k {
        for t2 in 0..k {
            ind += freqs[t1] * freqs[t2] * record(v, t1) * record(w, t2);
        }
    }
    (dup / ind).ln()
}

/// Same enumeration for one Bernoulli vector position with presence rate
/// `f`; `xa` and `xb` say whether each record lists the item.
pub fn bernoulli_llr_bruteforce(f: f64, alpha: f64, xa: bool, xb: bool) -> f64 {
    let prior = |t: bool| if t { f } else { 1.0 - f };
    let record = |x: bool, t: bool| -> f64 {
        let mut p = 0.0;
        if x == t {
            p += 1.0 - alpha;
        }
        for d in [false, true] {
            if d == x {
                p += alpha * prior(d);
            }
        }
        p
    };
    let mut dup = 0.0;
    for t in [false, true] {
        dup += prior(t) * record(xa, t) * record(xb, t);
    }
    let mut ind = 0.0;
    for t1 in [false, true] {
        for t2 in [false, true] {
            ind += prior(t1) * prior(t2) * record(xa, t1) * record(xb, t2);
        }
    }
    (dup / ind).ln()
}

fn augmented(s: &TrainingSample, bias: f64) -> [f64; 7] {
    let x = &s.x;
    [x[0], x[1], x[2], x[3], x[4], x[5], bias]
}

pub struct ReferenceSolution {
    pub weights: [f64; 6],
    pub intercept: f64,
    pub primal: f64,
    pub dual: f64,
    pub iterations: usize,
}

/// Accelerated projected gradient on the box-constrained hinge SVM dual,
/// iterated until its own duality gap certifies the optimum.
pub fn reference_svm(samples: &[TrainingSample], cfg: &SolverConfig, rel_gap: f64) -> ReferenceSolution {
    let n = samples.len();
    let z: Vec<[f64; 7]> = samples
        .iter()
        .map(|s| {
            let x = augmented(s, cfg.bias_feature);
            x.map(|v| v * s.y)
        })
        .collect();
    let upper: Vec<f64> = samples.iter().map(|s| cfg.c * s.weight).collect();
    let w_of = |alpha: &[f64]| -> [f64; 7] {
        let mut w = [0.0; 7];
        for (a, zi) in alpha.iter().zip(&z) {
            for d in 0..7 {
                w[d] += a * zi[d];
            }
        }
        w
    };
    let dot = |a: &[f64; 7], b: &[f64; 7]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    // Lipschitz constant of the dual gradient: largest eigenvalue of Z Z^T,
    // equal to that of the 7x7 matrix Z^T Z, found by power iteration.
    let mut gram = [[0.0; 7]; 7];
    for zi in &z {
        for r in 0..7 {
            for c in 0..7 {
                gram[r][c] += zi[r] * zi[c];
            }
        }
    }
    let mut v = [1.0; 7];
    let mut lambda = 1.0;
    for _ in 0..500 {
        let mut nv = [0.0; 7];
        for r in 0..7 {
            nv[r] = dot(&gram[r], &v);
        }
        let norm = dot(&nv, &nv).sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm / dot(&v, &v).sqrt();
        v = nv.map(|x| x / norm);
    }
    let step = 1.0 / (lambda * 1.01);
    let objectives = |alpha: &[f64]| -> (f64, f64, [f64; 7]) {
        let w = w_of(alpha);
        let dual = 0.5 * dot(&w, &w) - alpha.iter().sum::<f64>();
        let loss: f64 = z
            .iter()
            .zip(&upper)
            .map(|(zi, u)| u * (1.0 - dot(&w, zi)).max(0.0))
            .sum();
        (0.5 * dot(&w, &w) + loss, dual, w)
    };
    let mut alpha = vec![0.0; n];
    let mut y = alpha.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let wy = w_of(&y);
        let next: Vec<f64> = y
            .iter()
            .zip(&z)
            .zip(&upper)
            .map(|((yi, zi), u)| (yi - step * (dot(&wy, zi) - 1.0)).clamp(0.0, *u))
            .collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        y = next
            .iter()
            .zip(&alpha)
            .zip(&upper)
            .map(|((a1, a0), u)| (a1 + momentum * (a1 - a0)).clamp(0.0, *u))
            .collect();
        alpha = next;
        t = t_next;
        if iterations % 100 == 0 {
            let (primal, dual, w) = objectives(&alpha);
            if primal + dual <= rel_gap * primal.abs().max(1.0) || iterations >= 2_000_000 {
                let mut weights = [0.0; 6];
                weights.copy_from_slice(&w[..6]);
                return ReferenceSolution {
                    weights,
                    intercept: w[6] * cfg.bias_feature,
                    primal,
                    dual: -dual,
                    iterations,
                };
            }
        }
    }
}

/// Drugs D1-D3 and X1-X2, the vaccine V1, and events E1-E4 and Y1-Y3 spread
/// over three system organ classes.
pub fn small_ontology() -> Ontology {
    let mut o = Ontology::default();
    for d in ["D1", "D2", "D3", "X1", "X2"] {
        o.drugs.insert(d.into(), vec![]);
    }
    o.drugs.insert("V1".into(), vec!["J07BB01".into()]);
    for (pt, soc) in [("E1", "S1"), ("E2", "S1"), ("E3", "S2"), ("E4", "S2"), ("Y1", "S3"), ("Y2", "S3"), ("Y3", "S3")] {
        o.events.insert(pt.into(), soc.into());
    }
    o
}

/// JSON record with only the fields the fixture cares about.
pub fn record(id: &str, country: &str, drugs: &[&str], events: &[&str]) -> Value {
    let drugs: Vec<Value> = drugs
        .iter()
        .map(|d| {
            if d.starts_with('V') {
                json!({"substance": d, "atc": "J07BB01", "role": "suspected"})
            } else {
                json!({"substance": d, "role": "suspected"})
            }
        })
        .collect();
    let events: Vec<Value> = events.iter().map(|e| json!({ "pt": e })).collect();
    json!({"id": id, "country": country, "drugs": drugs, "events": events})
}

pub fn corpus_from(records: &[Value], ontology: &Ontology) -> Corpus {
    let text: Vec<String> = records.iter().map(|r| r.to_string()).collect();
    read_corpus(text.join("\n").as_bytes(), ontology, &ExclusionFilter::default()).unwrap()
}

/// The synthetic corpus run end to end with the desk defaults: tables,
/// fitted histograms, the held-out split, both classifiers and the baseline.
pub struct Pipeline {
    pub synth: SynthOutput,
    pub tables: FrequencyTables,
    pub engine: Engine,
    pub params: HitMissParams,
    pub split: Split,
    pub whitelist: PrefixWhitelist,
    pub drug: ClassifierModel,
    pub vaccine: ClassifierModel,
    pub baseline: BaselineModel,
}

impl Pipeline {
    pub fn build(cfg: &SynthConfig, train_seed: u64) -> Pipeline {
        let synth = generate(cfg).unwrap();
        let tables = FrequencyTables::build(&synth.corpus, &synth.ontology, DEFAULT_MIN_COUNTRY_SUPPORT).unwrap();
        let engine = Engine::prepare(&synth.corpus, &tables, &DateExtractor::default(), &DateKernel::default()).unwrap();
        let params = fit_params(&engine, DEFAULT_INDEPENDENCE_SEED, DEFAULT_INDEPENDENCE_PAIRS).unwrap();
        let split = holdout_split(&synth.truth, DEFAULT_SPLIT_RATIOS, DEFAULT_SPLIT_SEED).unwrap();
        let (train_pairs, _) = index_pairs(&engine, &truth_to_labelled(&split.train)).unwrap();
        let whitelist = PrefixWhitelist::default();
        let drug = train_kind(
            &engine,
            &tables,
            &whitelist,
            &params,
            &train_pairs,
            &desk_train_config(ModelKind::Drug, train_seed),
        )
        .unwrap();
        let vaccine = train_kind(
            &engine,
            &tables,
            &whitelist,
            &params,
            &train_pairs,
            &desk_train_config(ModelKind::Vaccine, train_seed),
        )
        .unwrap();
        let baseline = fit_baseline(&engine, &tables, &params, &train_pairs).unwrap();
        Pipeline {
            synth,
            tables,
            engine,
            params,
            split,
            whitelist,
            drug,
            vaccine,
            baseline,
        }
    }

    /// Detectable duplicates of the validation and test splits.
    pub fn held_out(&self) -> Vec<TruthPair> {
        self.split
            .validation
            .iter()
            .chain(&self.split.test)
            .filter(|p| p.label == TruthLabel::Duplicate && !p.undetectable)
            .cloned()
            .collect()
    }
}

/// Default profile shrunk to 2,000 reports with a proportional plan.
pub fn small_config(seed: u64) -> SynthConfig {
    let mut cfg = SynthConfig::default();
    cfg.seed = seed;
    cfg.n_reports = 2000;
    cfg.duplicates.followup = 40;
    cfg.duplicates.multi_reporter = 40;
    cfg.duplicates.literature = 20;
    cfg.duplicates.otherwise_related = 20;
    cfg
}
