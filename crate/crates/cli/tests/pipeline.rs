use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use casematch::review::{Annotation, ReviewLabel};
use casematch::svm::ClassifierModel;
use casematch::engine::RunRecord;
use casematch::synth::SynthConfig;
use serde_json::Value;

fn casematch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_casematch")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = casematch(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(&stdout).unwrap_or(Value::String(stdout))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

struct Workspace {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Workspace {
    fn path(&self, name: &str) -> String {
        p(&self.dir, name)
    }
}

fn small_corpus() -> Workspace {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    let mut cfg = SynthConfig::default();
    cfg.n_reports = 2500;
    cfg.duplicates.followup = 50;
    cfg.duplicates.multi_reporter = 50;
    cfg.duplicates.literature = 25;
    cfg.duplicates.otherwise_related = 25;
    cfg.save(dir.join("config.json")).unwrap();
    let summary = ok(&["synth", "--config", &p(&dir, "config.json"), "--out", &p(&dir, "data")]);
    assert_eq!(summary["reports"], 2500);
    assert_eq!(summary["duplicates"], 125);
    Workspace { _tmp: tmp, dir }
}

#[test]
fn full_pipeline_through_the_binary() {
    let w = small_corpus();
    let corpus = w.path("data/corpus.jsonl");
    let ontology = w.path("data/ontology.json");
    let truth = w.path("data/truth.jsonl");
    let tables = w.path("tables.json");
    let input = ["--corpus", corpus.as_str(), "--ontology", ontology.as_str()];

    let stats = ok(&[&["stats"][..], &input, &["--out", &tables]].concat());
    assert_eq!(stats["reports"], 2500);

    let train = |target: &str, out: &str| {
        ok(&[
            &["train", target][..],
            &input,
            &["--tables", &tables, "--truth", &truth, "--split-seed", "7", "--independence-pairs", "200000", "--out", out],
        ]
        .concat())
    };
    let drug = w.path("drug.json");
    let vaccine = w.path("vaccine.json");
    let baseline = w.path("baseline.json");
    let summary = train("drug", &drug);
    assert_eq!(summary["metadata"]["negative_ratio"], 1000.0);
    train("vaccine", &vaccine);
    train("baseline", &baseline);
    let models = ["--tables", tables.as_str(), "--drug-model", drug.as_str(), "--vaccine-model", vaccine.as_str()];

    let verdicts = w.path("verdicts.jsonl");
    let scan = ok(&[&["scan", "exhaustive"][..], &input, &models, &["--out", &verdicts]].concat());
    let n = 2500u64;
    assert_eq!(scan["stats"]["pairs"], n * (n - 1) / 2);
    let suspected = scan["stats"]["suspected"].as_u64().unwrap();
    let lines = std::fs::read_to_string(&verdicts).unwrap().lines().count() as u64;
    assert_eq!(lines, suspected);

    let ev = ok(&["eval", "truth", "--truth", &truth, "--verdicts", &verdicts, "--split-seed", "7"]);
    assert_eq!(ev["suspected"], suspected);
    assert!(ev["precision"].as_f64().unwrap() > 0.5, "{ev}");

    let base_verdicts = w.path("baseline.jsonl");
    ok(&[&["scan", "exhaustive"][..], &input, &["--tables", &tables, "--baseline-model", &baseline, "--out", &base_verdicts]].concat());

    let run_path = w.path("run.json");
    let stream = ok(&[&["scan", "stream"][..], &input, &models, &["--stop-at", "20", "--seed", "5", "--out", &run_path]].concat());
    assert_eq!(stream["suspected"], 20);
    assert_eq!(stream["complete"], true);
    let run = RunRecord::load(&run_path).unwrap();
    assert_eq!(run.suspected.len(), 20);
    let again = w.path("run2.json");
    ok(&[&["scan", "stream"][..], &input, &models, &["--stop-at", "20", "--seed", "5", "--out", &again]].concat());
    assert_eq!(std::fs::read(&run_path).unwrap(), std::fs::read(&again).unwrap());

    let clusters = w.path("clusters.json");
    let c = ok(&["cluster", "--run", &run_path, "--out", &clusters]);
    let groups: Value = serde_json::from_str(&std::fs::read_to_string(&clusters).unwrap()).unwrap();
    let removed: u64 = groups["groups"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["members"].as_array().unwrap().len() as u64 - 1)
        .sum();
    assert_eq!(c["remaining"].as_u64().unwrap(), 2500 - removed);

    let annotations: Vec<String> = run
        .suspected
        .iter()
        .filter(|s| s.kind == casematch::report::PairKind::DrugPair)
        .map(|s| {
            serde_json::to_string(&Annotation {
                id_a: s.id_a.clone(),
                id_b: s.id_b.clone(),
                label: ReviewLabel::PossibleDuplicate,
                annotator: "ana".into(),
                timestamp: "2026-01-01T00:00:00Z".into(),
                note: String::new(),
                model_id: run.model_id.clone(),
            })
            .unwrap()
        })
        .collect();
    assert!(!annotations.is_empty());
    let log = w.path("labels.jsonl");
    std::fs::write(&log, annotations.join("\n") + "\n").unwrap();
    let retrained = w.path("drug2.json");
    ok(&[
        &["retrain", "drug", "--model", &drug, "--annotations", &log][..],
        &input,
        &["--tables", &tables, "--truth", &truth, "--split-seed", "7", "--out", &retrained],
    ]
    .concat());
    let model = ClassifierModel::load(&retrained).unwrap();
    assert_eq!(model.metadata.annotation_pairs_added, annotations.len());

    let table_input = w.path("table.json");
    std::fs::write(
        &table_input,
        r#"{"runs": [{"model": "drugs", "n_reports": 26.9e6, "pairs_compared": 20.5e9, "predicted": 100, "true_positives": 54}]}"#,
    )
    .unwrap();
    let text = ok(&["eval", "table", "--input", &table_input]);
    assert!(text.as_str().unwrap().contains("drugs"));
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    assert_eq!(casematch(&["--help"]).status.code(), Some(0));
    assert_eq!(casematch(&["scan", "stream", "--bogus"]).status.code(), Some(1));
    assert_eq!(casematch(&["frobnicate"]).status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let missing = casematch(&["stats", "--corpus", &p(dir, "none.jsonl"), "--ontology", &p(dir, "none.json"), "--out", &p(dir, "t.json")]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("none.json"));

    let mut cfg = SynthConfig::default();
    cfg.countries[0].share = 0.2;
    cfg.save(dir.join("bad.json")).unwrap();
    let bad = casematch(&["synth", "--config", &p(dir, "bad.json"), "--out", &p(dir, "out")]);
    assert_eq!(bad.status.code(), Some(1));

    std::fs::write(dir.join("ontology.json"), r#"{"drugs": {"A": []}, "events": {"P": "S"}}"#).unwrap();
    std::fs::write(
        dir.join("corpus.jsonl"),
        "{\"id\":\"1\",\"country\":\"DE\",\"drugs\":[{\"substance\":\"A\",\"role\":\"suspected\"}],\"events\":[{\"pt\":\"P\"}]}\n{not json}\n",
    )
    .unwrap();
    let malformed = casematch(&["stats", "--corpus", &p(dir, "corpus.jsonl"), "--ontology", &p(dir, "ontology.json"), "--out", &p(dir, "t.json")]);
    assert_eq!(malformed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&malformed.stderr).contains("line 2"));

    let no_labels = casematch(&["train", "drug", "--corpus", &p(dir, "corpus.jsonl"), "--ontology", &p(dir, "ontology.json"), "--tables", &p(dir, "t.json"), "--out", &p(dir, "m.json")]);
    assert_eq!(no_labels.status.code(), Some(1));
}
