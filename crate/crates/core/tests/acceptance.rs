//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances are pinned here and must not be loosened.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use casematch::dates::{eligible_embedding_dates, DateExtractor};
use casematch::embedding::{build_date_vector, date_similarity, DateKernel};
use casematch::engine::{
    BaselineScorer, Emit, ModelScorer, PairScorer, ScanOptions, StreamConfig, Strategy, DEFAULT_BATCH_SIZE,
};
use casematch::eval::{assemble_table, possible_pairs, CountrySummary, PrecisionRunSummary};
use casematch::features::demographic_gate;
use casematch::frequency::{CategoricalFrequency, FrequencyTables, Item};
use casematch::hitmiss::{
    categorical_match, categorical_mismatch, categorical_weight, drug_event_score, vector_match_term,
    vector_mismatch_term, DrugEventInput, HitMissParams,
};
use casematch::svm::{primal_objective, solve, SolverConfig, TrainingSample};
use casematch::synth::{Mechanism, SynthConfig};
use casematch::workflow::evaluate_against_truth;
use chrono::{Duration as Days, NaiveDate};
use common::{bernoulli_llr_bruteforce, categorical_llr_bruteforce, corpus_from, record, reference_svm, small_ontology, Pipeline};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within_budget(elapsed: Duration, budget: Duration) -> std::result::Result<(), String> {
    if elapsed > budget {
        Err(format!("took {elapsed:.2?}, budget {budget:?}"))
    } else {
        Ok(())
    }
}

fn formula_reproduction() -> Check {
    let start = Instant::now();
    let published = [
        ("2017", 26.9e6, 22.2e9, 41u64, 1.85, 0.05),
        ("drugs", 26.9e6, 20.5e9, 54, 2.63, 0.07),
        ("vaccines", 1.8e6, 3.2e9, 92, 28.75, 0.05),
    ];
    let runs: Vec<PrecisionRunSummary> = published
        .iter()
        .map(|(model, n, pairs, tp, ..)| PrecisionRunSummary {
            model: model.to_string(),
            n_reports: Some(*n),
            pairs_compared: Some(*pairs),
            predicted: Some(100),
            true_positives: Some(*tp),
            duplicates_or_related: None,
        })
        .collect();
    let countries: Vec<CountrySummary> = [("A", 19_042u64, 181.3), ("B", 4_363, 9.5), ("C", 1_004, 0.5)]
        .iter()
        .map(|(c, n, _)| CountrySummary {
            country: c.to_string(),
            model: "2025".into(),
            n_reports: Some(*n),
            remaining: Some(*n),
            predicted_pairs: Some(0),
            sampled: None,
            sampled_true: None,
        })
        .collect();
    let table = assemble_table(&runs, &countries).map_err(|e| e.to_string())?;
    for (row, (model, _, _, tp, per_billion, per_report)) in table.precision_rows.iter().zip(&published) {
        let want = *tp as f64 / 100.0;
        ensure!(row.precision == want, "{model}: precision {} != {want}", row.precision);
        ensure!(
            (row.tp_per_billion_pairs - per_billion).abs() <= 0.01,
            "{model}: TP per billion {} vs {per_billion}",
            row.tp_per_billion_pairs
        );
        ensure!(
            (row.expected_per_report - per_report).abs() <= 0.005,
            "{model}: expected per report {} vs {per_report}",
            row.expected_per_report
        );
    }
    for (row, (_, n, millions)) in table.country_rows.iter().zip([("A", 19_042u64, 181.3), ("B", 4_363, 9.5), ("C", 1_004, 0.5)]) {
        let got = row.possible_pairs as f64 / 1e6;
        ensure!(row.possible_pairs == possible_pairs(n), "possible pairs disagree for {n}");
        ensure!((got - millions).abs() <= 0.1, "{n} reports: {got} million pairs vs {millions}");
    }
    within_budget(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("3 precision rows and 3 country rows in {:.2?}", start.elapsed()))
}

fn hitmiss_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut worst_mismatch: f64 = 0.0;
    for cfg in 0..1000 {
        let alpha: f64 = rng.gen_range(0.001..0.999);
        let f: f64 = 10f64.powf(rng.gen_range(-3.0..-0.0005));
        let others = rng.gen_range(1..=4);
        let mut shares: Vec<f64> = (0..others).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = shares.iter().sum();
        shares.iter_mut().for_each(|s| *s *= (1.0 - f) / total);
        let mut freqs = vec![f];
        freqs.extend(&shares);

        let mut freq = CategoricalFrequency::default();
        freq.field = "field".into();
        let names: Vec<String> = (0..freqs.len()).map(|i| format!("v{i}")).collect();
        for (n, p) in names.iter().zip(&freqs) {
            freq.values.insert(n.clone(), *p);
        }

        let expected = categorical_llr_bruteforce(&freqs, 0, 0, alpha);
        let got = categorical_weight(Some(&names[0]), Some(&names[0]), &freq, alpha).map_err(|e| e.to_string())?;
        worst = worst.max((got - expected).abs()).max((categorical_match(f, alpha) - expected).abs());

        let closed = (alpha * (2.0 - alpha)).ln();
        for i in 0..freqs.len() {
            for j in 0..freqs.len() {
                if i == j {
                    continue;
                }
                let got = categorical_weight(Some(&names[i]), Some(&names[j]), &freq, alpha).map_err(|e| e.to_string())?;
                worst = worst.max((got - categorical_llr_bruteforce(&freqs, i, j, alpha)).abs());
                worst_mismatch = worst_mismatch.max((got - closed).abs()).max((categorical_mismatch(alpha) - closed).abs());
            }
        }

        let checks = [
            (vector_match_term(f, alpha), bernoulli_llr_bruteforce(f, alpha, true, true)),
            (vector_mismatch_term(f, alpha), bernoulli_llr_bruteforce(f, alpha, true, false)),
            (vector_mismatch_term(f, alpha), bernoulli_llr_bruteforce(f, alpha, false, true)),
        ];
        for (got, want) in checks {
            worst = worst.max((got - want).abs());
        }
        ensure!(worst <= 1e-9, "config {cfg} (f={f}, alpha={alpha}): deviation {worst:e}");
        ensure!(worst_mismatch <= 1e-12, "config {cfg}: mismatch deviates by {worst_mismatch:e}");
    }
    within_budget(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "1000 configs, max |Δ| {worst:.1e}, mismatch max |Δ| {worst_mismatch:.1e}, {:.2?}",
        start.elapsed()
    ))
}

fn gate_fixtures() -> Check {
    let cases = [((0.15, -0.46, 0.20), false), ((0.29, 0.30, 0.00), true), ((-0.53, 0.00, 0.25), false)];
    for ((s, a, e), pass) in cases {
        let g = demographic_gate(s, a, e);
        ensure!(g.passed == pass, "({s}, {a}, {e}) gave passed={} net={}", g.passed, g.net);
    }
    Ok("3 cases as printed".into())
}

#[derive(serde::Deserialize)]
struct Snippet {
    text: String,
    locale: String,
    expected: Vec<(NaiveDate, NaiveDate)>,
}

/// Cosine of the kernel-smoothed day vectors computed densely over a
/// window covering both sets.
fn dense_cosine(a: &[NaiveDate], b: &[NaiveDate], kernel: &[f64]) -> f64 {
    let origin = NaiveDate::from_ymd_opt(1999, 1, 1).unwrap();
    let half = (kernel.len() / 2) as i64;
    let len = 12_000usize;
    let smear = |dates: &[NaiveDate]| {
        let mut v = vec![0.0; len];
        for d in dates {
            let c = (*d - origin).num_days();
            for (k, w) in kernel.iter().enumerate() {
                v[(c + k as i64 - half) as usize] += w;
            }
        }
        v
    };
    let (va, vb) = (smear(a), smear(b));
    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn date_pipeline() -> Check {
    let start = Instant::now();
    let extractor = DateExtractor::default();
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/date_snippets.jsonl"))
        .map_err(|e| e.to_string())?;
    let snippets: Vec<Snippet> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure!(snippets.len() >= 50, "only {} snippets", snippets.len());
    for s in &snippets {
        let got: Vec<(NaiveDate, NaiveDate)> = extractor
            .extract(&s.text, &s.locale)
            .iter()
            .map(|m| (m.interval.start, m.interval.end))
            .collect();
        ensure!(got == s.expected, "{:?} ({}): got {got:?}, want {:?}", s.text, s.locale, s.expected);
    }

    let month = extractor.extract("Symptoms began in March 2021.", "DE");
    ensure!(month.len() == 1 && month[0].interval.uncertainty_days() > 7, "March 2021 not read as a month: {month:?}");
    ensure!(
        eligible_embedding_dates(month.iter().map(|m| &m.interval)).is_empty(),
        "March 2021 reached the embedding"
    );
    let jan = extractor.extract("Treatment started 2020-01-01, stopped 2020-01-02.", "DE");
    let eligible = eligible_embedding_dates(jan.iter().map(|m| &m.interval));
    let want: BTreeSet<NaiveDate> = [NaiveDate::from_ymd_opt(2020, 1, 2).unwrap()].into();
    ensure!(eligible == want, "Jan-1 exclusion: eligible {eligible:?}");

    let kernel = DateKernel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = NaiveDate::from_ymd_opt(2005, 1, 1).unwrap();
    let random_set = |rng: &mut ChaCha8Rng, span: i64| -> Vec<NaiveDate> {
        let n = rng.gen_range(1..=5);
        (0..n).map(|_| base + Days::days(rng.gen_range(0..span))).collect()
    };
    let mut zero_cases = 0;
    for _ in 0..10_000 {
        let span = if rng.gen_bool(0.5) { 60 } else { 3000 };
        let a = random_set(&mut rng, span);
        let b = random_set(&mut rng, span);
        let shift = rng.gen_range(-1500..1500);
        let va = build_date_vector(&a, &kernel).map_err(|e| e.to_string())?;
        let vb = build_date_vector(&b, &kernel).map_err(|e| e.to_string())?;
        let s = date_similarity(&va, &vb);
        ensure!((-1e-12..=1.0 + 1e-12).contains(&s), "similarity {s} out of range");
        ensure!((s - date_similarity(&vb, &va)).abs() <= 1e-12, "asymmetric similarity");
        let moved = |d: &Vec<NaiveDate>| -> Vec<NaiveDate> { d.iter().map(|x| *x + Days::days(shift)).collect() };
        let ma = build_date_vector(&moved(&a), &kernel).map_err(|e| e.to_string())?;
        let mb = build_date_vector(&moved(&b), &kernel).map_err(|e| e.to_string())?;
        ensure!((s - date_similarity(&ma, &mb)).abs() <= 1e-12, "similarity changes under a {shift}-day shift");
        ensure!((s - dense_cosine(&a, &b, &kernel.0)).abs() <= 1e-12, "sparse and dense cosines differ");
        let min_gap = a
            .iter()
            .flat_map(|x| b.iter().map(move |y| (*x - *y).num_days().abs()))
            .min()
            .unwrap();
        if min_gap > 7 {
            zero_cases += 1;
            ensure!(s == 0.0, "sets {min_gap} days apart have similarity {s}");
        }
    }
    ensure!(zero_cases > 1000, "only {zero_cases} far-apart pairs exercised");
    within_budget(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{} snippets exact, 10000 cosine pairs ({zero_cases} far apart), {:.2?}",
        snippets.len(),
        start.elapsed()
    ))
}

fn random_problem(rng: &mut ChaCha8Rng) -> (Vec<TrainingSample>, SolverConfig) {
    let n = rng.gen_range(8..=50);
    let truth: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
    let samples = (0..n)
        .map(|_| {
            let x: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-3.0..3.0));
            let score: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + rng.gen_range(-2.0..2.0);
            TrainingSample {
                x,
                y: if score >= 0.0 { 1.0 } else { -1.0 },
                weight: rng.gen_range(0.5..2.0),
            }
        })
        .collect();
    let cfg = SolverConfig {
        c: [0.05, 0.5, 5.0][rng.gen_range(0..3)],
        tolerance: 1e-10,
        max_epochs: 1_000_000,
        bias_feature: 1.0,
        seed: rng.gen(),
    };
    (samples, cfg)
}

fn svm_correctness() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let (samples, cfg) = random_problem(&mut rng);
        let sol = solve(&samples, &cfg).map_err(|e| e.to_string())?;
        let ours = primal_objective(&samples, &sol.weights, sol.intercept, &cfg);
        let reference = reference_svm(&samples, &cfg, 1e-9);
        let rel = (ours - reference.primal).abs() / reference.primal.abs().max(1e-12);
        worst = worst.max(rel);
        ensure!(rel <= 1e-4, "problem {k}: primal {ours} vs reference {}", reference.primal);
        let again = solve(&samples, &cfg).map_err(|e| e.to_string())?;
        ensure!(again == sol, "problem {k}: retraining with the same seed differs");
    }

    let mut samples = Vec::new();
    for i in 0..40 {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        let x: [f64; 6] = std::array::from_fn(|_| y * rng.gen_range(1.0..3.0) + rng.gen_range(-0.5..0.5));
        samples.push(TrainingSample { x, y, weight: 1.0 });
    }
    let cfg = SolverConfig {
        c: 10.0,
        ..SolverConfig::default()
    };
    let sol = solve(&samples, &cfg).map_err(|e| e.to_string())?;
    let correct = samples
        .iter()
        .filter(|s| {
            let score: f64 = s.x.iter().zip(&sol.weights).map(|(a, b)| a * b).sum::<f64>() + sol.intercept;
            score * s.y > 0.0
        })
        .count();
    ensure!(correct == samples.len(), "separable accuracy {correct}/{}", samples.len());
    within_budget(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("20 problems, worst relative primal gap {worst:.1e}, separable accuracy 1.0, {:.2?}", start.elapsed()))
}

struct Scan {
    suspected: Vec<(String, String)>,
    pairs: u64,
    elapsed: Duration,
}

fn scan(p: &Pipeline, scorer: &dyn PairScorer, subset: &[usize], strategy: Strategy) -> std::result::Result<Scan, String> {
    let start = Instant::now();
    let mut suspected = Vec::new();
    let options = ScanOptions {
        emit: Emit::Suspected,
        strategy,
    };
    let stats = p
        .engine
        .scan_exhaustive(subset, scorer, options, |v| {
            suspected.push((v.id_a, v.id_b));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(Scan {
        suspected,
        pairs: stats.pairs,
        elapsed: start.elapsed(),
    })
}

fn end_to_end(p: &Pipeline, build_time: Duration) -> Check {
    let start = Instant::now();
    let cfg = SynthConfig::default();
    ensure!(
        p.synth.corpus.len() == 10_000 && p.tables.country_reports().len() == 3,
        "corpus shape {} reports, {} countries",
        p.synth.corpus.len(),
        p.tables.country_reports().len()
    );
    ensure!(
        p.synth.truth.duplicates().count() == 500 && p.synth.truth.pairs.len() == 600,
        "planted {} pairs",
        p.synth.truth.pairs.len()
    );
    ensure!(cfg.countries.iter().any(|c| c.drug_skew > 1.0), "no skewed country");
    let held = p.held_out();
    let mut scorer = ModelScorer::new(&p.drug, &p.vaccine, &p.tables, &p.whitelist).map_err(|e| e.to_string())?;
    let all = p.engine.all();
    let full = scan(p, &scorer, &all, Strategy::Indexed)?;
    let ev = evaluate_against_truth(&full.suspected, &p.synth.truth, &held);
    let precision = ev.precision.unwrap_or(0.0);
    let recall = ev.recall.rate().unwrap_or(0.0);
    scorer.mask_external = true;
    let masked = scan(p, &scorer, &all, Strategy::Indexed)?;
    let mev = evaluate_against_truth(&masked.suspected, &p.synth.truth, &held);
    let rate = |e: &casematch::workflow::TruthEvaluation, m: Mechanism| {
        e.recall_by_mechanism.get(&m).and_then(|r| r.rate()).unwrap_or(0.0)
    };
    let (fu, fu_masked) = (rate(&ev, Mechanism::Followup), rate(&mev, Mechanism::Followup));
    let (mr, mr_masked) = (rate(&ev, Mechanism::MultiReporter), rate(&mev, Mechanism::MultiReporter));
    let summary = format!(
        "recall {}/{} = {recall:.3}, precision {}/{} = {precision:.3}, followup recall {fu:.3} -> {fu_masked:.3} masked, multi_reporter {mr:.3} -> {mr_masked:.3}",
        ev.recall.found, ev.recall.total, ev.duplicates, ev.suspected
    );
    ensure!(recall >= 0.80, "{summary}");
    ensure!(precision >= 0.80, "{summary}");
    ensure!(fu_masked < fu, "{summary}");
    ensure!((mr_masked - mr).abs() <= 0.05, "{summary}");
    let total = build_time + start.elapsed();
    within_budget(total, Duration::from_secs(600))?;
    Ok(format!("{summary}, {total:.2?} including training"))
}

fn skewed_country_direction(p: &Pipeline) -> Check {
    let start = Instant::now();
    let skewed = SynthConfig::default()
        .countries
        .iter()
        .max_by(|a, b| a.drug_skew.total_cmp(&b.drug_skew))
        .map(|c| c.name.clone())
        .unwrap();
    let subset = p.engine.country_subset(&skewed);
    let model = ModelScorer::new(&p.drug, &p.vaccine, &p.tables, &p.whitelist).map_err(|e| e.to_string())?;
    let baseline = BaselineScorer {
        model: &p.baseline,
        tables: &p.tables,
    };
    let ours = scan(p, &model, &subset, Strategy::Indexed)?;
    let theirs = scan(p, &baseline, &subset, Strategy::Indexed)?;
    let ev_ours = evaluate_against_truth(&ours.suspected, &p.synth.truth, &[]);
    let ev_theirs = evaluate_against_truth(&theirs.suspected, &p.synth.truth, &[]);
    let summary = format!(
        "{skewed}: baseline flags {} (precision {:.3}), model flags {} (precision {:.3})",
        ev_theirs.suspected,
        ev_theirs.precision.unwrap_or(0.0),
        ev_ours.suspected,
        ev_ours.precision.unwrap_or(0.0)
    );
    ensure!(ev_ours.suspected > 0, "{summary}");
    ensure!(ev_theirs.suspected >= 5 * ev_ours.suspected, "{summary}");
    ensure!(ev_theirs.precision.unwrap_or(0.0) < ev_ours.precision.unwrap_or(0.0), "{summary}");
    within_budget(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!("{summary}, {:.2?}", start.elapsed()))
}

fn determinism_throughput(p: &Pipeline) -> Check {
    let scorer = ModelScorer::new(&p.drug, &p.vaccine, &p.tables, &p.whitelist).map_err(|e| e.to_string())?;
    let stream = StreamConfig {
        seed: 42,
        batch_size: DEFAULT_BATCH_SIZE,
        max_pairs: None,
    };
    let first = p.engine.precision_run(stream, &scorer, 100).map_err(|e| e.to_string())?;
    let second = p.engine.precision_run(stream, &scorer, 100).map_err(|e| e.to_string())?;
    ensure!(first.complete && first.suspected.len() == 100, "run stopped at {}", first.suspected.len());
    ensure!(first == second, "precision runs differ");

    let all = p.engine.all();
    let full = scan(p, &scorer, &all, Strategy::AllPairs)?;
    let rate = full.pairs as f64 / full.elapsed.as_secs_f64();
    ensure!(full.pairs == 10_000 * 9_999 / 2, "scan covered {} pairs", full.pairs);
    ensure!(rate >= 1e6, "{rate:.0} blocking-checked pairs/s");
    Ok(format!(
        "2 identical runs of 100 suspects ({} pairs consumed), {:.1}M blocking-checked pairs/s",
        first.pairs_consumed,
        rate / 1e6
    ))
}

fn compensation_cap() -> Check {
    let ontology = small_ontology();
    let mut records = Vec::new();
    let mut next = 0;
    let mut push = |records: &mut Vec<serde_json::Value>, drugs: &[&str], events: &[&str]| {
        records.push(record(&format!("R{next:04}"), "DE", drugs, events));
        next += 1;
    };
    for _ in 0..5 {
        push(&mut records, &["X1", "X2"], &["Y1", "Y2", "Y3"]);
    }
    for drug in ["X1", "X2"] {
        for _ in 0..15 {
            push(&mut records, &[drug], &["E1"]);
        }
    }
    for event in ["Y1", "Y2", "Y3"] {
        for _ in 0..22 {
            push(&mut records, &["D1"], &[event]);
        }
    }
    while records.len() < 1000 {
        push(&mut records, &["D1"], &["E1"]);
    }
    let corpus = corpus_from(&records, &ontology);
    let tables = FrequencyTables::build(&corpus, &ontology, 1000).map_err(|e| e.to_string())?;
    let vocab = tables.vocabulary();
    let id = |item| vocab.id(item).unwrap();
    let drugs = vec![id(Item::Drug("X1")), id(Item::Drug("X2"))];
    let events = vec![id(Item::Event("Y1")), id(Item::Event("Y2")), id(Item::Event("Y3"))];
    let params = HitMissParams::default();
    let score = |cap: bool| {
        let side = || DrugEventInput {
            drugs: &drugs,
            events: &events,
        };
        drug_event_score(side(), side(), tables.global(), params.alpha_drugs, params.alpha_events, cap, &mut Vec::new())
    };
    let capped = score(true);
    let uncapped = score(false);
    let summary = format!(
        "drug +{:.2}, event +{:.2}, compensation -{:.2}; uncapped aggregate {:.2}, capped matched portion {:.2}",
        uncapped.drug_match,
        uncapped.event_match,
        uncapped.compensation_raw,
        uncapped.value,
        capped.match_sum() - capped.compensation
    );
    let near = |x: f64, scale: f64| (x / scale - 1.0).abs() <= 0.1;
    ensure!(
        near(uncapped.drug_match, 7.36) && near(uncapped.event_match, 9.95) && near(uncapped.compensation_raw, 22.19),
        "fixture off scale: {summary}"
    );
    ensure!(capped.match_sum() - capped.compensation >= 0.0, "{summary}");
    ensure!(uncapped.value < 0.0, "{summary}");
    Ok(summary)
}

fn run(name: &str, failures: &mut usize, check: impl FnOnce() -> Check) {
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(detail) => {
            *failures += 1;
            println!("FAIL {name}: {detail}");
        }
    }
}

fn main() -> ExitCode {
    let mut failures = 0;
    run("formula-reproduction", &mut failures, formula_reproduction);
    run("hit-miss-oracle", &mut failures, hitmiss_oracle);
    run("gate-fixtures", &mut failures, gate_fixtures);
    run("date-pipeline", &mut failures, date_pipeline);
    run("svm-correctness", &mut failures, svm_correctness);

    let start = Instant::now();
    let pipeline = catch_unwind(|| Pipeline::build(&SynthConfig::default(), 0));
    let build_time = start.elapsed();
    match &pipeline {
        Ok(p) => {
            run("end-to-end-synthetic", &mut failures, || end_to_end(p, build_time));
            run("skewed-country-direction", &mut failures, || skewed_country_direction(p));
            run("determinism-throughput", &mut failures, || determinism_throughput(p));
        }
        Err(_) => {
            for name in ["end-to-end-synthetic", "skewed-country-direction", "determinism-throughput"] {
                failures += 1;
                println!("FAIL {name}: synthetic pipeline could not be built");
            }
        }
    }
    run("compensation-cap", &mut failures, compensation_cap);

    println!("{} of 9 criteria passed", 9 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
