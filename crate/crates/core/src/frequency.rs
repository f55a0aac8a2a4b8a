//! Marginal and pairwise reporting frequencies, per country and global.
//!
//! Rates are smoothed as `(count + 0.5) / (N + 1)` so every log-ratio used by
//! the hit-miss models stays finite. Countries with fewer than
//! `min_country_support` reports carry no tables of their own and fall back
//! to the global rates.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{Corpus, Ontology, Report};

pub const TABLES_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MIN_COUNTRY_SUPPORT: u64 = 1000;

/// Dense index of a drug or event in the unified item space: drugs first,
/// then events, both in sorted code order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Item<'a> {
    Drug(&'a str),
    Event(&'a str),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    drugs: Vec<String>,
    events: Vec<String>,
    drug_index: HashMap<String, u32>,
    event_index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_ontology(ontology: &Ontology) -> Self {
        Self::new(
            ontology.drugs.keys().cloned().collect(),
            ontology.events.keys().cloned().collect(),
        )
    }

    fn new(drugs: Vec<String>, events: Vec<String>) -> Self {
        let drug_index = drugs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i as u32))
            .collect();
        let offset = drugs.len() as u32;
        let event_index = events
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), offset + i as u32))
            .collect();
        Self {
            drugs,
            events,
            drug_index,
            event_index,
        }
    }

    pub fn len(&self) -> usize {
        self.drugs.len() + self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id(&self, item: Item<'_>) -> Result<ItemId> {
        let found = match item {
            Item::Drug(code) => self.drug_index.get(code),
            Item::Event(code) => self.event_index.get(code),
        };
        found.map(|&i| ItemId(i)).ok_or_else(|| Error::UnknownCode {
            kind: match item {
                Item::Drug(_) => "substance",
                Item::Event(_) => "preferred term",
            },
            code: match item {
                Item::Drug(c) | Item::Event(c) => c.to_string(),
            },
        })
    }

    pub fn name(&self, id: ItemId) -> &str {
        let i = id.0 as usize;
        if i < self.drugs.len() {
            &self.drugs[i]
        } else {
            &self.events[i - self.drugs.len()]
        }
    }

    pub fn is_drug(&self, id: ItemId) -> bool {
        (id.0 as usize) < self.drugs.len()
    }

    /// Sorted, deduplicated drug ids of a report.
    pub fn drug_ids(&self, report: &Report) -> Result<Vec<ItemId>> {
        let mut ids = report
            .drugs
            .iter()
            .map(|d| self.id(Item::Drug(&d.substance)))
            .collect::<Result<Vec<_>>>()?;
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }

    /// Sorted, deduplicated event ids of a report.
    pub fn event_ids(&self, report: &Report) -> Result<Vec<ItemId>> {
        let mut ids = report
            .events
            .iter()
            .map(|e| self.id(Item::Event(&e.pt)))
            .collect::<Result<Vec<_>>>()?;
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }
}

#[inline]
fn pair_key(a: ItemId, b: ItemId) -> u64 {
    let (lo, hi) = if a.0 <= b.0 { (a.0, b.0) } else { (b.0, a.0) };
    ((lo as u64) << 32) | hi as u64
}

/// Item and co-occurrence counts over one population of reports.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    n: u64,
    item_counts: Vec<u32>,
    pair_counts: HashMap<u64, u32>,
    rates: Vec<f64>,
}

impl CountTable {
    fn empty(items: usize) -> Self {
        Self {
            n: 0,
            item_counts: vec![0; items],
            pair_counts: HashMap::new(),
            rates: Vec::new(),
        }
    }

    fn add(&mut self, items: &[ItemId]) {
        self.n += 1;
        for (k, &a) in items.iter().enumerate() {
            self.item_counts[a.0 as usize] += 1;
            for &b in &items[k + 1..] {
                *self.pair_counts.entry(pair_key(a, b)).or_insert(0) += 1;
            }
        }
    }

    fn finish(&mut self) {
        let denom = self.n as f64 + 1.0;
        self.rates = self
            .item_counts
            .iter()
            .map(|&c| (c as f64 + 0.5) / denom)
            .collect();
    }

    pub fn reports(&self) -> u64 {
        self.n
    }

    pub fn count(&self, item: ItemId) -> u32 {
        self.item_counts[item.0 as usize]
    }

    pub fn pair_count(&self, a: ItemId, b: ItemId) -> u32 {
        if a == b {
            return self.count(a);
        }
        self.pair_counts.get(&pair_key(a, b)).copied().unwrap_or(0)
    }

    /// Smoothed marginal rate of an item.
    #[inline]
    pub fn rate(&self, item: ItemId) -> f64 {
        self.rates[item.0 as usize]
    }

    /// Smoothed co-occurrence rate of two items.
    #[inline]
    pub fn pair_rate(&self, a: ItemId, b: ItemId) -> f64 {
        (self.pair_count(a, b) as f64 + 0.5) / (self.n as f64 + 1.0)
    }
}

/// Observed value frequencies of a categorical field (unsmoothed).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFrequency {
    pub field: String,
    pub values: BTreeMap<String, f64>,
}

impl CategoricalFrequency {
    pub fn from_values<'a>(field: &str, values: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut total = 0u64;
        for v in values {
            *counts.entry(v.to_string()).or_insert(0) += 1;
            total += 1;
        }
        let values = counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / total as f64))
            .collect();
        Self {
            field: field.to_string(),
            values,
        }
    }

    pub fn frequency(&self, value: &str) -> Result<f64> {
        self.values
            .get(value)
            .copied()
            .ok_or_else(|| Error::UnknownValue {
                field: self.field.clone(),
                value: value.to_string(),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TablesFile", into = "TablesFile")]
pub struct FrequencyTables {
    vocabulary: Vocabulary,
    min_country_support: u64,
    global: CountTable,
    /// Countries with enough support, sorted by code.
    countries: Vec<(String, CountTable)>,
    country_slots: HashMap<String, usize>,
    country_reports: BTreeMap<String, u64>,
    pub sex: CategoricalFrequency,
    pub country: CategoricalFrequency,
    pub outcome: CategoricalFrequency,
}

impl FrequencyTables {
    pub fn build(corpus: &Corpus, ontology: &Ontology, min_country_support: u64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let vocabulary = Vocabulary::from_ontology(ontology);
        let n_items = vocabulary.len();
        let mut global = CountTable::empty(n_items);
        let mut per_country: BTreeMap<String, CountTable> = BTreeMap::new();
        let mut items = Vec::new();
        for report in corpus.reports() {
            items.clear();
            items.extend(vocabulary.drug_ids(report)?);
            items.extend(vocabulary.event_ids(report)?);
            global.add(&items);
            per_country
                .entry(report.country.clone())
                .or_insert_with(|| CountTable::empty(n_items))
                .add(&items);
        }
        global.finish();
        let country_reports = per_country.iter().map(|(c, t)| (c.clone(), t.n)).collect();
        let countries: Vec<(String, CountTable)> = per_country
            .into_iter()
            .filter(|(_, t)| t.n >= min_country_support)
            .map(|(c, mut t)| {
                t.finish();
                (c, t)
            })
            .collect();
        let reports = corpus.reports();
        Ok(Self {
            country_slots: slots(&countries),
            vocabulary,
            min_country_support,
            global,
            countries,
            country_reports,
            sex: CategoricalFrequency::from_values(
                "sex",
                reports.iter().filter_map(|r| r.sex.known()),
            ),
            country: CategoricalFrequency::from_values(
                "country",
                reports.iter().map(|r| r.country.as_str()),
            ),
            outcome: CategoricalFrequency::from_values(
                "outcome",
                reports.iter().filter_map(|r| r.outcome.as_deref()),
            ),
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn min_country_support(&self) -> u64 {
        self.min_country_support
    }

    pub fn global(&self) -> &CountTable {
        &self.global
    }

    pub fn total_reports(&self) -> u64 {
        self.global.n
    }

    pub fn country_reports(&self) -> &BTreeMap<String, u64> {
        &self.country_reports
    }

    /// Slot of a country that has its own tables.
    pub fn country_slot(&self, country: &str) -> Option<usize> {
        self.country_slots.get(country).copied()
    }

    pub fn has_country_tables(&self, country: &str) -> bool {
        self.country_slots.contains_key(country)
    }

    /// The table used for a pair of reports from the given country slots.
    #[inline]
    pub fn table_for_slots(&self, a: Option<usize>, b: Option<usize>) -> &CountTable {
        match (a, b) {
            (Some(x), Some(y)) if x == y => &self.countries[x].1,
            _ => &self.global,
        }
    }

    pub fn table_for(&self, country_a: &str, country_b: &str) -> &CountTable {
        if country_a == country_b {
            if let Some(slot) = self.country_slot(country_a) {
                return &self.countries[slot].1;
            }
        }
        &self.global
    }

    /// Marginal rate of `item`, country-specific when both reports come from
    /// the same supported country.
    pub fn lookup_rate(&self, item: Item<'_>, country_a: &str, country_b: &str) -> Result<f64> {
        let id = self.vocabulary.id(item)?;
        Ok(self.table_for(country_a, country_b).rate(id))
    }

    pub fn pair_rate(
        &self,
        item_i: Item<'_>,
        item_j: Item<'_>,
        country_a: &str,
        country_b: &str,
    ) -> Result<f64> {
        let i = self.vocabulary.id(item_i)?;
        let j = self.vocabulary.id(item_j)?;
        Ok(self.table_for(country_a, country_b).pair_rate(i, j))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

fn slots(countries: &[(String, CountTable)]) -> HashMap<String, usize> {
    countries
        .iter()
        .enumerate()
        .map(|(i, (c, _))| (c.clone(), i))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CountTableFile {
    n: u64,
    items: Vec<u32>,
    /// `[i, j, count]` with `i < j`, sorted.
    pairs: Vec<[u32; 3]>,
}

impl From<&CountTable> for CountTableFile {
    fn from(t: &CountTable) -> Self {
        let mut pairs: Vec<[u32; 3]> = t
            .pair_counts
            .iter()
            .map(|(&k, &c)| [(k >> 32) as u32, k as u32, c])
            .collect();
        pairs.sort_unstable();
        Self {
            n: t.n,
            items: t.item_counts.clone(),
            pairs,
        }
    }
}

impl CountTableFile {
    fn into_table(self, n_items: usize) -> Result<CountTable> {
        if self.items.len() != n_items {
            return Err(Error::InvalidConfig(format!(
                "count table has {} items, vocabulary has {n_items}",
                self.items.len()
            )));
        }
        let mut t = CountTable {
            n: self.n,
            item_counts: self.items,
            pair_counts: self
                .pairs
                .into_iter()
                .map(|[i, j, c]| (pair_key(ItemId(i), ItemId(j)), c))
                .collect(),
            rates: Vec::new(),
        };
        t.finish();
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
struct TablesFile {
    format_version: u32,
    min_country_support: u64,
    drugs: Vec<String>,
    events: Vec<String>,
    global: CountTableFile,
    countries: BTreeMap<String, CountTableFile>,
    country_reports: BTreeMap<String, u64>,
    sex: CategoricalFrequency,
    country: CategoricalFrequency,
    outcome: CategoricalFrequency,
}

impl From<FrequencyTables> for TablesFile {
    fn from(t: FrequencyTables) -> Self {
        Self {
            format_version: TABLES_FORMAT_VERSION,
            min_country_support: t.min_country_support,
            drugs: t.vocabulary.drugs.clone(),
            events: t.vocabulary.events.clone(),
            global: (&t.global).into(),
            countries: t
                .countries
                .iter()
                .map(|(c, table)| (c.clone(), table.into()))
                .collect(),
            country_reports: t.country_reports,
            sex: t.sex,
            country: t.country,
            outcome: t.outcome,
        }
    }
}

impl TryFrom<TablesFile> for FrequencyTables {
    type Error = Error;

    fn try_from(f: TablesFile) -> Result<Self> {
        if f.format_version != TABLES_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: f.format_version,
                expected: TABLES_FORMAT_VERSION,
            });
        }
        let vocabulary = Vocabulary::new(f.drugs, f.events);
        let n = vocabulary.len();
        let countries = f
            .countries
            .into_iter()
            .map(|(c, t)| Ok((c, t.into_table(n)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            country_slots: slots(&countries),
            vocabulary,
            min_country_support: f.min_country_support,
            global: f.global.into_table(n)?,
            countries,
            country_reports: f.country_reports,
            sex: f.sex,
            country: f.country,
            outcome: f.outcome,
        })
    }
}
