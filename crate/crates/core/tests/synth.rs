mod common;

use std::collections::{BTreeMap, HashSet};

use casematch::external::{externally_indicated, PrefixWhitelist};
use casematch::features::blocking_pass;
use casematch::synth::{generate, holdout_split, Mechanism, SynthConfig, TruthLabel};
use common::small_config;

fn write_all(cfg: &SynthConfig, dir: &std::path::Path) -> Vec<Vec<u8>> {
    let out = generate(cfg).unwrap();
    out.corpus.save(dir.join("corpus.jsonl")).unwrap();
    out.ontology.save(dir.join("ontology.json")).unwrap();
    out.truth.save(dir.join("truth.jsonl")).unwrap();
    ["corpus.jsonl", "ontology.json", "truth.jsonl"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

#[test]
fn same_seed_gives_identical_bytes() {
    let cfg = small_config(5);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(write_all(&cfg, d1.path()), write_all(&cfg, d2.path()));
    let d3 = tempfile::tempdir().unwrap();
    assert_ne!(write_all(&small_config(6), d3.path())[0], write_all(&cfg, d1.path())[0]);
}

#[test]
fn default_profile_shape() {
    let cfg = SynthConfig::default();
    assert_eq!(cfg.n_reports, 10_000);
    assert_eq!(cfg.countries.len(), 3);
    let out = generate(&cfg).unwrap();
    assert_eq!(out.corpus.len(), 10_000);
    out.truth.check_against(&out.corpus).unwrap();
    let mut mechanisms: BTreeMap<Mechanism, usize> = BTreeMap::new();
    for p in &out.truth.pairs {
        *mechanisms.entry(p.mechanism).or_default() += 1;
    }
    assert_eq!(out.truth.duplicates().count(), 500);
    assert_eq!(mechanisms[&Mechanism::Followup], 200);
    assert_eq!(mechanisms[&Mechanism::MultiReporter], 200);
    assert_eq!(mechanisms[&Mechanism::Literature], 100);
    assert_eq!(out.truth.pairs.iter().filter(|p| p.label == TruthLabel::OtherwiseRelated).count(), 100);
    let mut per_country: BTreeMap<&str, usize> = BTreeMap::new();
    for r in out.corpus.reports() {
        *per_country.entry(r.country.as_str()).or_default() += 1;
    }
    for c in &cfg.countries {
        let share = per_country[c.name.as_str()] as f64 / 10_000.0;
        assert!((share - c.share).abs() < 0.03, "{}: {share}", c.name);
    }
}

#[test]
fn undetectable_flag_matches_blocking() {
    let out = generate(&small_config(2)).unwrap();
    for p in &out.truth.pairs {
        let a = out.corpus.get(&p.id_a).unwrap();
        let b = out.corpus.get(&p.id_b).unwrap();
        assert_eq!(p.undetectable, !blocking_pass(a, b), "{p:?}");
    }
}

#[test]
fn certain_id_links_mark_every_followup() {
    let mut cfg = small_config(4);
    cfg.perturbation.id_link_prob = 1.0;
    let out = generate(&cfg).unwrap();
    let wl = PrefixWhitelist::default();
    let mut followups = 0;
    for p in out.truth.pairs.iter().filter(|p| p.mechanism == Mechanism::Followup) {
        followups += 1;
        let (a, b) = (out.corpus.get(&p.id_a).unwrap(), out.corpus.get(&p.id_b).unwrap());
        assert_eq!(externally_indicated(a, b, &wl), 1, "{p:?}");
    }
    assert_eq!(followups, 40);

    cfg.perturbation.id_link_prob = 0.0;
    let out = generate(&cfg).unwrap();
    for p in out.truth.pairs.iter().filter(|p| p.mechanism == Mechanism::Followup) {
        let (a, b) = (out.corpus.get(&p.id_a).unwrap(), out.corpus.get(&p.id_b).unwrap());
        assert_eq!(externally_indicated(a, b, &wl), 0);
    }
}

#[test]
fn split_keeps_reports_on_one_side() {
    let out = generate(&small_config(1)).unwrap();
    let split = holdout_split(&out.truth, (0.6, 0.3, 0.1), 7).unwrap();
    assert_eq!(split.train.len() + split.validation.len() + split.test.len(), out.truth.pairs.len());
    let ids = |pairs: &[casematch::synth::TruthPair]| -> HashSet<String> {
        pairs.iter().flat_map(|p| [p.id_a.clone(), p.id_b.clone()]).collect()
    };
    let (t, v, s) = (ids(&split.train), ids(&split.validation), ids(&split.test));
    assert!(t.is_disjoint(&v) && t.is_disjoint(&s) && v.is_disjoint(&s));
    assert_eq!(split, holdout_split(&out.truth, (0.6, 0.3, 0.1), 7).unwrap());
    assert!(holdout_split(&out.truth, (0.6, 0.3, 0.3), 7).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = SynthConfig::default();
    cfg.countries[0].share = 0.9;
    assert!(generate(&cfg).is_err());
    let mut cfg = SynthConfig::default();
    cfg.n_reports = 500;
    assert!(generate(&cfg).is_err());
    let mut cfg = SynthConfig::default();
    cfg.perturbation.recode_rate = 1.5;
    assert!(generate(&cfg).is_err());
}
