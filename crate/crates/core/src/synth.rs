//! Synthetic corpora with planted ground-truth duplicates.
//!
//! Base reports are drawn per country from Zipf-like item popularity over a
//! country-specific permutation of a shared vocabulary, so country rates
//! diverge from the global ones. Duplicates copy a base report and perturb it
//! according to one of three mechanisms: unlinked follow-ups, independent
//! reporters of the same case, and literature reports filed under another
//! country.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::Normal;

use crate::error::{Error, Result};
use crate::report::{
    report_from_record, Corpus, DateKind, DateRecord, DrugEntry, DrugRole, EventRecord, Ontology,
    ReportRecord, SenderIds, Sex, VACCINE_ATC_PREFIX,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountryProfile {
    pub name: String,
    pub share: f64,
    /// Zipf exponent of substance popularity.
    pub drug_skew: f64,
    /// Zipf exponent of preferred-term popularity.
    pub event_skew: f64,
    /// Writes ambiguous numeric dates month first.
    pub month_first: bool,
    pub age_mean_years: f64,
    pub age_sd_years: f64,
    /// First possible onset date.
    pub onset_from: NaiveDate,
    /// Length of the onset window in days.
    pub onset_window_days: u32,
    pub drugs_per_report: (usize, usize),
    pub events_per_report: (usize, usize),
    /// Probability that the structured onset is known only to the month.
    pub month_onset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularySizes {
    pub substances: usize,
    pub vaccine_substances: usize,
    pub preferred_terms: usize,
    pub socs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuplicatePlan {
    pub followup: usize,
    pub multi_reporter: usize,
    pub literature: usize,
    pub otherwise_related: usize,
}

impl DuplicatePlan {
    pub fn duplicates(&self) -> usize {
        self.followup + self.multi_reporter + self.literature
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    /// Probability a follow-up cites the original's safety report id.
    pub id_link_prob: f64,
    /// Extra items a follow-up may add, drawn uniformly from 0 to this.
    pub followup_max_added_items: usize,
    /// Per-item probability that an independent reporter codes it differently.
    pub recode_rate: f64,
    /// Per-item probability that an independent reporter omits it.
    pub drop_item_rate: f64,
    /// Per-date probability of jitter for independent reporters.
    pub date_jitter_prob: f64,
    pub date_jitter_days: i64,
    pub drop_sex: f64,
    pub drop_age: f64,
    pub drop_outcome: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingRates {
    pub sex: f64,
    pub age: f64,
    pub outcome: f64,
    pub onset: f64,
    pub drug_start: f64,
    /// Probability that a present age is exact to the day rather than a year.
    pub exact_age: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Total corpus size including duplicates and related reports.
    pub n_reports: usize,
    pub countries: Vec<CountryProfile>,
    pub vocabulary: VocabularySizes,
    pub duplicates: DuplicatePlan,
    pub perturbation: Perturbation,
    pub missing: MissingRates,
    /// Fraction of base reports whose suspected product is a vaccine.
    pub vaccine_share: f64,
    /// Fraction of vaccine entries carrying their J07 ATC code.
    pub j07_fraction: f64,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid constant date")
}

impl Default for SynthConfig {
    fn default() -> Self {
        let country = |name: &str, share, skew, month_first, age_mean, age_sd, from, window| CountryProfile {
            name: name.into(),
            share,
            drug_skew: skew,
            event_skew: skew,
            month_first,
            age_mean_years: age_mean,
            age_sd_years: age_sd,
            onset_from: from,
            onset_window_days: window,
            drugs_per_report: (1, 4),
            events_per_report: (1, 4),
            month_onset: 0.05,
        };
        Self {
            seed: 0,
            n_reports: 10_000,
            countries: vec![
                country("DE", 0.53, 1.0, false, 55.0, 18.0, ymd(2012, 1, 1), 4000),
                country("US", 0.35, 1.0, true, 50.0, 20.0, ymd(2012, 1, 1), 4000),
                CountryProfile {
                    month_onset: 0.7,
                    ..country("EG", 0.12, 3.0, false, 4.0, 2.5, ymd(2019, 3, 1), 60)
                },
            ],
            vocabulary: VocabularySizes {
                substances: 400,
                vaccine_substances: 20,
                preferred_terms: 600,
                socs: 24,
            },
            duplicates: DuplicatePlan {
                followup: 200,
                multi_reporter: 200,
                literature: 100,
                otherwise_related: 100,
            },
            perturbation: Perturbation {
                id_link_prob: 0.6,
                followup_max_added_items: 2,
                recode_rate: 0.1,
                drop_item_rate: 0.1,
                date_jitter_prob: 0.2,
                date_jitter_days: 2,
                drop_sex: 0.1,
                drop_age: 0.1,
                drop_outcome: 0.3,
            },
            missing: MissingRates {
                sex: 0.1,
                age: 0.15,
                outcome: 0.3,
                onset: 0.1,
                drug_start: 0.4,
                exact_age: 0.3,
            },
            vaccine_share: 0.1,
            j07_fraction: 0.9,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_reader(BufReader::new(file))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.countries.is_empty() {
            return Err(Error::InvalidConfig("at least one country profile is required".into()));
        }
        let total: f64 = self.countries.iter().map(|c| c.share).sum();
        if (total - 1.0).abs() > 1e-9 || self.countries.iter().any(|c| !(c.share >= 0.0)) {
            return Err(Error::InvalidConfig(format!("country shares sum to {total}, not 1")));
        }
        let mut names = BTreeSet::new();
        for c in &self.countries {
            if c.name.is_empty() || !names.insert(&c.name) {
                return Err(Error::InvalidConfig(format!("bad or repeated country name {:?}", c.name)));
            }
            if !(c.drug_skew >= 0.0 && c.event_skew >= 0.0 && c.age_sd_years >= 0.0) {
                return Err(Error::InvalidConfig(format!("{}: skews and age spread must be non-negative", c.name)));
            }
            for (what, (lo, hi)) in [("drugs", c.drugs_per_report), ("events", c.events_per_report)] {
                if lo == 0 || lo > hi {
                    return Err(Error::InvalidConfig(format!("{}: {what} per report range ({lo}, {hi})", c.name)));
                }
            }
            check_prob(&format!("{}.month_onset", c.name), c.month_onset)?;
            if c.onset_window_days == 0 {
                return Err(Error::InvalidConfig(format!("{}: empty onset window", c.name)));
            }
        }
        let v = &self.vocabulary;
        if v.substances == 0 || v.preferred_terms == 0 || v.socs == 0 || v.socs > v.preferred_terms {
            return Err(Error::InvalidConfig("vocabulary sizes must be positive with socs <= terms".into()));
        }
        if self.vaccine_share > 0.0 && v.vaccine_substances == 0 {
            return Err(Error::InvalidConfig("vaccine share needs vaccine substances".into()));
        }
        let max_items = self
            .countries
            .iter()
            .map(|c| c.drugs_per_report.1.max(c.events_per_report.1))
            .max()
            .unwrap_or(0)
            + self.perturbation.followup_max_added_items;
        if max_items > v.substances.min(v.preferred_terms) {
            return Err(Error::InvalidConfig("vocabulary smaller than items per report".into()));
        }
        let p = &self.perturbation;
        let m = &self.missing;
        for (name, x) in [
            ("id_link_prob", p.id_link_prob),
            ("recode_rate", p.recode_rate),
            ("drop_item_rate", p.drop_item_rate),
            ("date_jitter_prob", p.date_jitter_prob),
            ("drop_sex", p.drop_sex),
            ("drop_age", p.drop_age),
            ("drop_outcome", p.drop_outcome),
            ("missing.sex", m.sex),
            ("missing.age", m.age),
            ("missing.outcome", m.outcome),
            ("missing.onset", m.onset),
            ("missing.drug_start", m.drug_start),
            ("missing.exact_age", m.exact_age),
            ("vaccine_share", self.vaccine_share),
            ("j07_fraction", self.j07_fraction),
        ] {
            check_prob(name, x)?;
        }
        if p.date_jitter_days < 0 {
            return Err(Error::InvalidConfig("date jitter must be non-negative".into()));
        }
        if self.duplicates.literature > 0 && self.countries.len() < 2 {
            return Err(Error::InvalidConfig("literature duplicates need two countries".into()));
        }
        let planted = self.duplicates.duplicates() + self.duplicates.otherwise_related;
        if planted * 2 > self.n_reports {
            return Err(Error::CorpusTooSmall {
                needed: planted * 2,
                found: self.n_reports,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthLabel {
    Duplicate,
    OtherwiseRelated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Followup,
    MultiReporter,
    Literature,
    SameEvent,
    SameReporter,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthPair {
    pub id_a: String,
    pub id_b: String,
    pub label: TruthLabel,
    pub mechanism: Mechanism,
    /// The pair fails blocking, so no blocking-based method can find it.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub undetectable: bool,
}

impl TruthPair {
    pub fn key(&self) -> (&str, &str) {
        (self.id_a.as_str(), self.id_b.as_str())
    }
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub pairs: Vec<TruthPair>,
}

impl GroundTruth {
    pub fn duplicates(&self) -> impl Iterator<Item = &TruthPair> {
        self.pairs.iter().filter(|p| p.label == TruthLabel::Duplicate)
    }

    pub fn label_of(&self, a: &str, b: &str) -> Option<TruthLabel> {
        let (x, y) = pair_key(a, b);
        self.pairs
            .iter()
            .find(|p| p.id_a == x && p.id_b == y)
            .map(|p| p.label)
    }

    /// Lookup table keyed by the ordered id pair.
    pub fn index(&self) -> HashMap<(String, String), &TruthPair> {
        self.pairs
            .iter()
            .map(|p| (pair_key(&p.id_a, &p.id_b), p))
            .collect()
    }

    pub fn check_against(&self, corpus: &Corpus) -> Result<()> {
        for p in &self.pairs {
            for id in [&p.id_a, &p.id_b] {
                if corpus.get(id).is_none() {
                    return Err(Error::UnknownReport(id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for p in &self.pairs {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let p: TruthPair = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: n + 1,
                message: e.to_string(),
            })?;
            pairs.push(p);
        }
        Ok(Self { pairs })
    }
}

pub struct SynthOutput {
    pub ontology: Ontology,
    pub corpus: Corpus,
    pub truth: GroundTruth,
}

struct Vocab {
    substances: Vec<String>,
    vaccines: Vec<String>,
    atc: HashMap<String, String>,
    pts: Vec<String>,
    soc_of: HashMap<String, String>,
}

fn build_vocab(v: &VocabularySizes, rng: &mut ChaCha8Rng) -> (Vocab, Ontology) {
    const ATC_GROUPS: [&str; 8] = ["A02BC", "B01AC", "C09AA", "L04AB", "M01AE", "N02BE", "N06AB", "R03AC"];
    let mut ontology = Ontology::default();
    let mut atc = HashMap::new();
    let substances: Vec<String> = (0..v.substances).map(|i| format!("substance-{i:04}")).collect();
    for (i, s) in substances.iter().enumerate() {
        let code = format!("{}{:02}", ATC_GROUPS[i % ATC_GROUPS.len()], i % 100);
        ontology.drugs.insert(s.clone(), vec![code.clone()]);
        atc.insert(s.clone(), code);
    }
    let vaccines: Vec<String> = (0..v.vaccine_substances).map(|i| format!("vaccine-{i:03}")).collect();
    for (i, s) in vaccines.iter().enumerate() {
        let code = format!("{VACCINE_ATC_PREFIX}{}{:02}", ["AH", "BB", "BK", "CA"][i % 4], i % 100);
        ontology.drugs.insert(s.clone(), vec![code.clone()]);
        atc.insert(s.clone(), code);
    }
    let socs: Vec<String> = (0..v.socs).map(|i| format!("soc-{i:02}")).collect();
    let pts: Vec<String> = (0..v.preferred_terms).map(|i| format!("term-{i:04}")).collect();
    let mut soc_of = HashMap::new();
    for (i, pt) in pts.iter().enumerate() {
        let soc = if i < socs.len() {
            socs[i].clone()
        } else {
            socs[rng.gen_range(0..socs.len())].clone()
        };
        ontology.events.insert(pt.clone(), soc.clone());
        soc_of.insert(pt.clone(), soc);
    }
    (
        Vocab {
            substances,
            vaccines,
            atc,
            pts,
            soc_of,
        },
        ontology,
    )
}

/// Zipf popularity over a country-specific permutation of `items`.
struct Popularity {
    order: Vec<usize>,
    dist: Option<WeightedIndex<f64>>,
}

impl Popularity {
    fn new(n: usize, skew: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let weights: Vec<f64> = (0..n).map(|r| 1.0 / ((r + 1) as f64).powf(skew)).collect();
        Self {
            order,
            dist: WeightedIndex::new(weights).ok(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        match &self.dist {
            Some(d) => self.order[d.sample(rng)],
            None => self.order[0],
        }
    }

    /// `k` distinct items.
    fn draw_distinct(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let k = k.min(self.order.len());
        let mut out: Vec<usize> = Vec::with_capacity(k);
        let mut attempts = 0;
        while out.len() < k {
            let x = if attempts < 1000 {
                self.draw(rng)
            } else {
                self.order[rng.gen_range(0..self.order.len())]
            };
            attempts += 1;
            if !out.contains(&x) {
                out.push(x);
            }
        }
        out
    }
}

struct CountryModel {
    drugs: Popularity,
    vaccines: Popularity,
    events: Popularity,
    age: Normal,
}

const OUTCOMES: [&str; 5] = ["recovered", "recovering", "not_recovered", "recovered_with_sequelae", "fatal"];
const OUTCOME_WEIGHTS: [f64; 5] = [0.45, 0.25, 0.18, 0.08, 0.04];
const SENDERS: [&str; 6] = ["HA", "MAH1", "MAH2", "MAH3", "MAH4", "MAH5"];

/// A report under construction, before ids are assigned.
#[derive(Clone, Debug)]
struct Draft {
    country: usize,
    sender: String,
    seq: u64,
    sex: Sex,
    age: Option<(i64, i64)>,
    outcome: Option<String>,
    drugs: Vec<DrugEntry>,
    events: Vec<String>,
    onset: Option<(NaiveDate, NaiveDate)>,
    drug_start: Option<NaiveDate>,
    event_end: Option<NaiveDate>,
    received: NaiveDate,
    previous: Option<(String, String, u64)>,
    narrative: Option<String>,
    followup_note: Option<NaiveDate>,
}

impl Draft {
    fn safety_report_id(&self, countries: &[CountryProfile]) -> String {
        format!("{}-{}-{:06}", countries[self.country].name, self.sender, self.seq)
    }
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    vocab: Vocab,
    models: Vec<CountryModel>,
    seq: u64,
}

#[derive(Clone, Copy)]
enum DateStyle {
    Iso,
    DayMonthYear,
    MonthDayYear,
    Numeric,
}

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October",
    "November", "December",
];

fn render_date(d: NaiveDate, style: DateStyle, month_first: bool) -> String {
    let month = MONTHS[d.month0() as usize];
    match style {
        DateStyle::Iso => d.format("%Y-%m-%d").to_string(),
        DateStyle::DayMonthYear => format!("{} {} {}", d.day(), month, d.year()),
        DateStyle::MonthDayYear => format!("{} {}, {}", month, d.day(), d.year()),
        DateStyle::Numeric if month_first => format!("{:02}/{:02}/{}", d.month(), d.day(), d.year()),
        DateStyle::Numeric => format!("{:02}/{:02}/{}", d.day(), d.month(), d.year()),
    }
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a SynthConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (vocab, _) = build_vocab(&cfg.vocabulary, &mut rng);
        let models = cfg
            .countries
            .iter()
            .map(|c| {
                Ok(CountryModel {
                    drugs: Popularity::new(vocab.substances.len(), c.drug_skew, &mut rng),
                    vaccines: Popularity::new(vocab.vaccines.len(), c.drug_skew, &mut rng),
                    events: Popularity::new(vocab.pts.len(), c.event_skew, &mut rng),
                    age: Normal::new(c.age_mean_years, c.age_sd_years.max(1e-9))
                        .map_err(|e| Error::InvalidConfig(format!("{}: age distribution: {e}", c.name)))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            rng,
            vocab,
            models,
            seq: 0,
        })
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn drug_entry(&mut self, substance: String, role: DrugRole, vaccine: bool) -> DrugEntry {
        let with_atc = if vaccine {
            self.chance(self.cfg.j07_fraction)
        } else {
            self.chance(0.5)
        };
        DrugEntry {
            atc: with_atc.then(|| self.vocab.atc[&substance].clone()),
            substance,
            role,
        }
    }

    fn draw_drug(&mut self, country: usize) -> String {
        let i = self.models[country].drugs.draw(&mut self.rng);
        self.vocab.substances[i].clone()
    }

    fn draw_event(&mut self, country: usize) -> String {
        let i = self.models[country].events.draw(&mut self.rng);
        self.vocab.pts[i].clone()
    }

    fn age_interval(&mut self, years: i64) -> (i64, i64) {
        if self.chance(self.cfg.missing.exact_age) {
            let d = years * 365 + self.rng.gen_range(0..365);
            (d, d)
        } else {
            (years * 365, years * 365 + 364)
        }
    }

    fn base(&mut self, country: usize) -> Draft {
        let profile = &self.cfg.countries[country];
        let m = self.cfg.missing.clone();
        let (dl, dh) = profile.drugs_per_report;
        let (el, eh) = profile.events_per_report;
        let onset_from = profile.onset_from;
        let window = profile.onset_window_days;
        let month_onset = profile.month_onset;
        let vaccine = self.chance(self.cfg.vaccine_share);
        let n_drugs = self.rng.gen_range(dl..=dh);
        let n_events = self.rng.gen_range(el..=eh);

        let mut drugs = Vec::with_capacity(n_drugs);
        if vaccine {
            let v = self.models[country].vaccines.draw(&mut self.rng);
            let name = self.vocab.vaccines[v].clone();
            drugs.push(self.drug_entry(name, DrugRole::Suspected, true));
        }
        let picks = self.models[country].drugs.draw_distinct(n_drugs, &mut self.rng);
        for (k, i) in picks.into_iter().enumerate() {
            if drugs.len() >= n_drugs {
                break;
            }
            let role = if k == 0 && !vaccine {
                DrugRole::Suspected
            } else {
                DrugRole::Concomitant
            };
            let name = self.vocab.substances[i].clone();
            drugs.push(self.drug_entry(name, role, false));
        }
        let events = self.models[country]
            .events
            .draw_distinct(n_events, &mut self.rng)
            .into_iter()
            .map(|i| self.vocab.pts[i].clone())
            .collect();

        let sex = if self.chance(m.sex) {
            Sex::Unknown
        } else if self.chance(0.5) {
            Sex::Female
        } else {
            Sex::Male
        };
        let age = if self.chance(m.age) {
            None
        } else {
            let years = self.models[country].age.sample(&mut self.rng).round().clamp(0.0, 99.0) as i64;
            Some(self.age_interval(years))
        };
        let outcome = if self.chance(m.outcome) {
            None
        } else {
            let d = WeightedIndex::new(OUTCOME_WEIGHTS).expect("static weights");
            Some(OUTCOMES[d.sample(&mut self.rng)].to_string())
        };
        let onset_day = onset_from + Duration::days(self.rng.gen_range(0..window) as i64);
        let onset = if self.chance(m.onset) {
            None
        } else if self.chance(month_onset) {
            let first = onset_day.with_day(1).expect("day 1 exists");
            let next = if first.month() == 12 {
                ymd(first.year() + 1, 1, 1)
            } else {
                ymd(first.year(), first.month() + 1, 1)
            };
            Some((first, next - Duration::days(1)))
        } else {
            Some((onset_day, onset_day))
        };
        let drug_start = (!self.chance(m.drug_start))
            .then(|| onset_day - Duration::days(self.rng.gen_range(0..30)));
        let event_end = self
            .chance(0.3)
            .then(|| onset_day + Duration::days(self.rng.gen_range(1..30)));
        let received = onset_day + Duration::days(self.rng.gen_range(5..60));
        let sender = SENDERS[self.rng.gen_range(0..SENDERS.len())].to_string();
        let seq = self.next_seq();
        Draft {
            country,
            sender,
            seq,
            sex,
            age,
            outcome,
            drugs,
            events,
            onset,
            drug_start,
            event_end,
            received,
            previous: None,
            narrative: None,
            followup_note: None,
        }
    }

    fn narrative(&mut self, d: &Draft) -> String {
        let month_first = self.cfg.countries[d.country].month_first;
        let styles = [
            DateStyle::Iso,
            DateStyle::DayMonthYear,
            DateStyle::MonthDayYear,
            DateStyle::Numeric,
        ];
        let pick = |rng: &mut ChaCha8Rng, date: NaiveDate| {
            render_date(date, *styles.choose(rng).expect("nonempty"), month_first)
        };
        let mut s = String::new();
        let who = match (d.age, d.sex) {
            (Some((lo, _)), Sex::Female) => format!("A {}-year-old woman", lo / 365),
            (Some((lo, _)), Sex::Male) => format!("A {}-year-old man", lo / 365),
            (Some((lo, _)), Sex::Unknown) => format!("A {}-year-old patient", lo / 365),
            (None, Sex::Female) => "A female patient".to_string(),
            (None, Sex::Male) => "A male patient".to_string(),
            (None, Sex::Unknown) => "A patient".to_string(),
        };
        let suspect = d.drugs.first().map(|x| x.substance.clone()).unwrap_or_default();
        match d.drug_start {
            Some(start) => s.push_str(&format!("{who} started {suspect} on {}. ", pick(&mut self.rng, start))),
            None => s.push_str(&format!("{who} was treated with {suspect}. ")),
        }
        let events = d.events.join(", ");
        match d.onset {
            Some((a, b)) if a == b => {
                s.push_str(&format!("On {} the patient developed {events}. ", pick(&mut self.rng, a)))
            }
            Some((a, _)) => s.push_str(&format!("In {} {} the patient developed {events}. ", MONTHS[a.month0() as usize], a.year())),
            None => s.push_str(&format!("The patient developed {events}. ")),
        }
        if let Some(end) = d.event_end {
            s.push_str(&format!("The event resolved on {}. ", pick(&mut self.rng, end)));
        }
        if let Some(note) = d.followup_note {
            s.push_str(&format!("Follow-up information received {}. ", pick(&mut self.rng, note)));
        }
        s.push_str(&format!("Report received {}.", pick(&mut self.rng, d.received)));
        s
    }

    fn followup(&mut self, base: &Draft) -> Draft {
        let mut d = base.clone();
        d.seq = self.next_seq();
        d.narrative = None;
        if self.chance(self.cfg.perturbation.id_link_prob) {
            d.previous = Some((base.sender.clone(), self.cfg.countries[base.country].name.clone(), base.seq));
        }
        let added = self.rng.gen_range(0..=self.cfg.perturbation.followup_max_added_items);
        for _ in 0..added {
            if self.chance(0.5) {
                let name = self.draw_drug(d.country);
                if !d.drugs.iter().any(|x| x.substance == name) {
                    let e = self.drug_entry(name, DrugRole::Concomitant, false);
                    d.drugs.push(e);
                }
            } else {
                let pt = self.draw_event(d.country);
                if !d.events.contains(&pt) {
                    d.events.push(pt);
                }
            }
        }
        let anchor = d.onset.map(|o| o.1).unwrap_or(d.received);
        if d.event_end.is_none() {
            d.event_end = Some(anchor + Duration::days(self.rng.gen_range(1..60)));
        }
        if self.chance(0.5) {
            d.outcome = Some("recovered".into());
        }
        let note = d.received + Duration::days(self.rng.gen_range(10..120));
        d.followup_note = Some(note);
        d.received = note;
        d
    }

    fn jitter(&mut self, date: NaiveDate) -> NaiveDate {
        let p = &self.cfg.perturbation;
        if p.date_jitter_days > 0 && self.rng.gen_bool(p.date_jitter_prob) {
            let mut shift = 0;
            while shift == 0 {
                shift = self.rng.gen_range(-p.date_jitter_days..=p.date_jitter_days);
            }
            date + Duration::days(shift)
        } else {
            date
        }
    }

    fn multi_reporter(&mut self, base: &Draft) -> Draft {
        let p = self.cfg.perturbation.clone();
        let mut d = base.clone();
        d.seq = self.next_seq();
        d.narrative = None;
        d.previous = None;
        let others: Vec<&str> = SENDERS.iter().copied().filter(|s| *s != base.sender).collect();
        d.sender = others[self.rng.gen_range(0..others.len())].to_string();

        let mut drugs = Vec::new();
        for (k, x) in base.drugs.iter().enumerate() {
            if k > 0 && self.chance(p.drop_item_rate) {
                continue;
            }
            if k > 0 && self.chance(p.recode_rate) {
                let name = self.draw_drug(d.country);
                if !drugs.iter().any(|y: &DrugEntry| y.substance == name) && !base.drugs.iter().any(|y| y.substance == name) {
                    let e = self.drug_entry(name, x.role, false);
                    drugs.push(e);
                    continue;
                }
            }
            drugs.push(x.clone());
        }
        d.drugs = drugs;
        let mut events = Vec::new();
        for (k, pt) in base.events.iter().enumerate() {
            if k > 0 && self.chance(p.drop_item_rate) {
                continue;
            }
            if self.chance(p.recode_rate) {
                let alt = self.draw_event(d.country);
                if !events.contains(&alt) && !base.events.contains(&alt) {
                    events.push(alt);
                    continue;
                }
            }
            events.push(pt.clone());
        }
        if events.is_empty() {
            events.push(base.events[0].clone());
        }
        d.events = events;

        d.onset = base.onset.map(|(a, b)| {
            if a == b {
                let j = self.jitter(a);
                (j, j)
            } else {
                (a, b)
            }
        });
        d.drug_start = base.drug_start.map(|x| self.jitter(x));
        d.event_end = base.event_end.map(|x| self.jitter(x));
        d.received = base.received + Duration::days(self.rng.gen_range(-5..30));
        if self.chance(p.drop_sex) {
            d.sex = Sex::Unknown;
        }
        if self.chance(p.drop_age) {
            d.age = None;
        } else if let Some((lo, hi)) = base.age {
            if lo == hi {
                d.age = Some(self.age_interval(lo / 365));
            }
        }
        if self.chance(p.drop_outcome) {
            d.outcome = None;
        }
        d
    }

    fn literature(&mut self, base: &Draft) -> Draft {
        let mut d = base.clone();
        d.seq = self.next_seq();
        d.previous = None;
        let n = self.cfg.countries.len();
        let mut c = self.rng.gen_range(0..n - 1);
        if c >= base.country {
            c += 1;
        }
        d.country = c;
        d.sender = "LIT".into();
        d.received = base.received + Duration::days(self.rng.gen_range(30..365));
        if self.chance(self.cfg.perturbation.drop_outcome) {
            d.outcome = None;
        }
        d
    }

    /// A different patient with the same suspected drug and event, around
    /// the same date.
    fn same_event(&mut self, base: &Draft) -> Draft {
        let mut d = self.base(base.country);
        d.sender = base.sender.clone();
        if let Some(first) = base.drugs.first() {
            d.drugs.retain(|x| x.substance != first.substance);
            d.drugs.insert(0, first.clone());
        }
        if !d.events.contains(&base.events[0]) {
            d.events[0] = base.events[0].clone();
        }
        if let Some((a, b)) = base.onset {
            let shift = Duration::days(self.rng.gen_range(-2..=2));
            d.onset = Some((a + shift, b + shift));
        }
        d.sex = match base.sex {
            Sex::Female => Sex::Male,
            Sex::Male => Sex::Female,
            Sex::Unknown => d.sex,
        };
        if let Some((lo, _)) = base.age {
            let years = lo / 365;
            let other = if years >= 30 { years - 20 - self.rng.gen_range(0..10) } else { years + 20 + self.rng.gen_range(0..10) };
            d.age = Some(self.age_interval(other));
        }
        d
    }

    /// Another patient reported by the same sender for the same drug.
    fn same_reporter(&mut self, base: &Draft) -> Draft {
        let mut d = self.same_event(base);
        let events = self.models[base.country]
            .events
            .draw_distinct(base.events.len() + 2, &mut self.rng);
        let mut fresh: Vec<String> = events
            .into_iter()
            .map(|i| self.vocab.pts[i].clone())
            .filter(|pt| !base.events.contains(pt))
            .collect();
        fresh.truncate(base.events.len().max(1));
        let shared_soc = self.vocab.soc_of[&base.events[0]].clone();
        let same_soc: Vec<String> = self
            .vocab
            .pts
            .iter()
            .filter(|pt| self.vocab.soc_of[*pt] == shared_soc && !base.events.contains(pt))
            .cloned()
            .collect();
        if let Some(pt) = same_soc.choose(&mut self.rng) {
            fresh[0] = pt.clone();
        } else {
            fresh[0] = base.events[0].clone();
        }
        d.events = fresh;
        if let Some((a, b)) = d.onset {
            let shift = Duration::days(self.rng.gen_range(60..400));
            d.onset = Some((a + shift, b + shift));
        }
        d
    }

    fn finish(&mut self, d: &mut Draft) {
        if d.narrative.is_none() {
            d.narrative = Some(self.narrative(d));
        }
    }

    fn record(&self, d: &Draft, id: String) -> ReportRecord {
        let countries = &self.cfg.countries;
        let mut dates = Vec::new();
        if let Some((a, b)) = d.onset {
            dates.push(DateRecord {
                start: a,
                end: b,
                kind: DateKind::EventOnset,
            });
        }
        if let Some(x) = d.drug_start {
            dates.push(DateRecord {
                start: x,
                end: x,
                kind: DateKind::DrugStart,
            });
        }
        if let Some(x) = d.event_end {
            dates.push(DateRecord {
                start: x,
                end: x,
                kind: DateKind::EventEnd,
            });
        }
        ReportRecord {
            id,
            country: countries[d.country].name.clone(),
            sex: d.sex,
            age_days_lo: d.age.map(|a| a.0),
            age_days_hi: d.age.map(|a| a.1),
            outcome: d.outcome.clone(),
            drugs: d.drugs.clone(),
            events: d.events.iter().map(|pt| EventRecord { pt: pt.clone() }).collect(),
            dates,
            narrative: d.narrative.clone().unwrap_or_default(),
            ids: SenderIds {
                safety_report_id: Some(d.safety_report_id(countries)),
                regulator_case_id: None,
                other_case_id: None,
                previous_transmission_id: d
                    .previous
                    .as_ref()
                    .map(|(sender, country, seq)| format!("{country}-{sender}-{seq:06}")),
            },
        }
    }

    fn blocking(&self, a: &Draft, b: &Draft) -> bool {
        let shared_drug = a.drugs.iter().any(|x| b.drugs.iter().any(|y| y.substance == x.substance));
        let socs: BTreeSet<&str> = a.events.iter().map(|pt| self.vocab.soc_of[pt].as_str()).collect();
        shared_drug && b.events.iter().any(|pt| socs.contains(self.vocab.soc_of[pt].as_str()))
    }
}

/// Splits `n` into parts proportional to `shares` by largest remainder.
fn apportion(n: usize, shares: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut parts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut left = n - parts.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        parts[i] += 1;
        left -= 1;
    }
    parts
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let plan = &cfg.duplicates;
    let n_base = cfg.n_reports - plan.duplicates() - plan.otherwise_related;
    let mut g = Generator::new(cfg)?;
    let (_, ontology) = {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        build_vocab(&cfg.vocabulary, &mut rng)
    };

    let shares: Vec<f64> = cfg.countries.iter().map(|c| c.share).collect();
    let mut drafts: Vec<Draft> = Vec::with_capacity(cfg.n_reports);
    for (country, count) in apportion(n_base, &shares).into_iter().enumerate() {
        for _ in 0..count {
            let d = g.base(country);
            drafts.push(d);
        }
    }
    let mut bases: Vec<usize> = (0..drafts.len()).collect();
    bases.shuffle(&mut g.rng);
    let mut bases = bases.into_iter();

    let mut planted: Vec<(usize, usize, TruthLabel, Mechanism)> = Vec::new();
    let jobs = [
        (plan.followup, Mechanism::Followup),
        (plan.multi_reporter, Mechanism::MultiReporter),
        (plan.literature, Mechanism::Literature),
        (plan.otherwise_related.div_ceil(2), Mechanism::SameEvent),
        (plan.otherwise_related / 2, Mechanism::SameReporter),
    ];
    for (count, mechanism) in jobs {
        for _ in 0..count {
            let b = bases.next().expect("validated: enough base reports");
            let base = drafts[b].clone();
            let (copy, label) = match mechanism {
                Mechanism::Followup => (g.followup(&base), TruthLabel::Duplicate),
                Mechanism::MultiReporter => (g.multi_reporter(&base), TruthLabel::Duplicate),
                Mechanism::Literature => (g.literature(&base), TruthLabel::Duplicate),
                Mechanism::SameEvent => (g.same_event(&base), TruthLabel::OtherwiseRelated),
                Mechanism::SameReporter => (g.same_reporter(&base), TruthLabel::OtherwiseRelated),
            };
            drafts.push(copy);
            planted.push((b, drafts.len() - 1, label, mechanism));
        }
    }

    // literature copies keep the original narrative text
    let mut narratives: HashMap<usize, String> = HashMap::new();
    for i in 0..drafts.len() {
        let mut d = drafts[i].clone();
        g.finish(&mut d);
        narratives.insert(i, d.narrative.clone().unwrap_or_default());
        drafts[i] = d;
    }
    for &(b, c, _, m) in &planted {
        if m == Mechanism::Literature {
            drafts[c].narrative = Some(narratives[&b].clone());
        }
    }

    let mut order: Vec<usize> = (0..drafts.len()).collect();
    order.shuffle(&mut g.rng);
    let mut ids = vec![String::new(); drafts.len()];
    for (rank, &i) in order.iter().enumerate() {
        ids[i] = format!("R{:06}", rank + 1);
    }
    let mut reports = Vec::with_capacity(drafts.len());
    for &i in &order {
        reports.push(report_from_record(g.record(&drafts[i], ids[i].clone()), &ontology)?);
    }
    let corpus = Corpus::new(reports)?;

    let mut pairs: Vec<TruthPair> = planted
        .iter()
        .map(|&(b, c, label, mechanism)| {
            let (id_a, id_b) = pair_key(&ids[b], &ids[c]);
            TruthPair {
                id_a,
                id_b,
                label,
                mechanism,
                undetectable: label == TruthLabel::Duplicate && !g.blocking(&drafts[b], &drafts[c]),
            }
        })
        .collect();
    pairs.sort_by(|a, b| (&a.id_a, &a.id_b).cmp(&(&b.id_a, &b.id_b)));
    Ok(SynthOutput {
        ontology,
        corpus,
        truth: GroundTruth { pairs },
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<TruthPair>,
    pub validation: Vec<TruthPair>,
    pub test: Vec<TruthPair>,
}

/// Seeded split in which pairs sharing a report always land together.
pub fn holdout_split(truth: &GroundTruth, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !(0.0..=1.0).contains(r))
        || ((r_train + r_val + r_test) - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidConfig(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let mut group_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut parent: Vec<usize> = Vec::new();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for p in &truth.pairs {
        for id in [p.id_a.as_str(), p.id_b.as_str()] {
            if !group_of.contains_key(id) {
                group_of.insert(id, parent.len());
                parent.push(parent.len());
            }
        }
        let (a, b) = (group_of[p.id_a.as_str()], group_of[p.id_b.as_str()]);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<&TruthPair>> = BTreeMap::new();
    for p in &truth.pairs {
        let root = find(&mut parent, group_of[p.id_a.as_str()]);
        groups.entry(root).or_default().push(p);
    }
    let mut groups: Vec<Vec<&TruthPair>> = groups.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total = truth.pairs.len() as f64;
    let train_target = r_train * total;
    let val_target = (r_train + r_val) * total;
    let mut split = Split::default();
    let mut placed = 0usize;
    for g in groups {
        let mid = placed as f64 + g.len() as f64 / 2.0;
        let bucket = if mid <= train_target && r_train > 0.0 {
            &mut split.train
        } else if mid <= val_target && r_val > 0.0 {
            &mut split.validation
        } else if r_test > 0.0 {
            &mut split.test
        } else if r_val > 0.0 {
            &mut split.validation
        } else {
            &mut split.train
        };
        placed += g.len();
        bucket.extend(g.into_iter().cloned());
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_reports: 600,
            duplicates: DuplicatePlan {
                followup: 20,
                multi_reporter: 20,
                literature: 10,
                otherwise_related: 10,
            },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        SynthConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_shares_rejected() {
        let mut cfg = small();
        cfg.countries[0].share = 0.9;
        assert!(generate(&cfg).is_err());
        let mut cfg = small();
        cfg.perturbation.recode_rate = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sizes_and_truth() {
        let out = generate(&small()).unwrap();
        assert_eq!(out.corpus.len(), 600);
        assert_eq!(out.truth.duplicates().count(), 50);
        assert_eq!(out.truth.pairs.len(), 60);
        out.truth.check_against(&out.corpus).unwrap();
    }

    #[test]
    fn empty_plan_empty_truth() {
        let mut cfg = small();
        cfg.duplicates = DuplicatePlan {
            followup: 0,
            multi_reporter: 0,
            literature: 0,
            otherwise_related: 0,
        };
        let out = generate(&cfg).unwrap();
        assert!(out.truth.pairs.is_empty());
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(10, &[0.5, 0.35, 0.15]), vec![5, 4, 1]);
        assert_eq!(apportion(7, &[1.0]), vec![7]);
    }

    #[test]
    fn split_ratios() {
        let pairs = (0..100)
            .map(|i| TruthPair {
                id_a: format!("A{i:03}"),
                id_b: format!("B{i:03}"),
                label: TruthLabel::Duplicate,
                mechanism: Mechanism::Followup,
                undetectable: false,
            })
            .collect();
        let truth = GroundTruth { pairs };
        let s = holdout_split(&truth, (0.6, 0.3, 0.1), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (60, 30, 10));
        let all = holdout_split(&truth, (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(all.train.len(), 100);
        assert_eq!(s, holdout_split(&truth, (0.6, 0.3, 0.1), 1).unwrap());
        assert!(holdout_split(&truth, (0.6, 0.3, 0.2), 1).is_err());
    }

    #[test]
    fn split_keeps_groups_together() {
        let p = |a: &str, b: &str| TruthPair {
            id_a: a.into(),
            id_b: b.into(),
            label: TruthLabel::Duplicate,
            mechanism: Mechanism::Followup,
            undetectable: false,
        };
        let truth = GroundTruth {
            pairs: vec![p("1", "2"), p("2", "3"), p("4", "5"), p("6", "7")],
        };
        for seed in 0..20 {
            let s = holdout_split(&truth, (0.5, 0.25, 0.25), seed).unwrap();
            for part in [&s.train, &s.validation, &s.test] {
                let has12 = part.iter().any(|x| x.id_a == "1");
                let has23 = part.iter().any(|x| x.id_a == "2");
                assert_eq!(has12, has23);
            }
        }
    }
}
