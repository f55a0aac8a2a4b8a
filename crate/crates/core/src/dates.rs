//! Date mentions in free-text narratives.
//!
//! Patterns run in order; a later pattern never matches text already claimed
//! by an earlier one, so "20 July 2007" is not also read as "July 2007" or
//! "2007".

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{DateInterval, DateSource, Report};

pub fn min_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(1900, 1, 1).unwrap()
}

pub fn max_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2050, 12, 31).unwrap()
}

/// Embedding eligibility: at most this many days of uncertainty.
pub const MAX_EMBEDDING_UNCERTAINTY_DAYS: i64 = 7;

/// How a pattern's capture groups are read.
///
/// Groups are named: `y` year, `m` numeric month, `mon` month name, `d` day,
/// and `p1`/`p2` for the two leading fields of an ambiguous numeric date.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    /// `y`, `m`/`mon`, `d`: a single day.
    Day,
    /// `p1`, `p2`, `y`: day-first or month-first depending on locale.
    AmbiguousNumeric,
    /// `y`, `m`/`mon`: the whole month.
    Month,
    /// `y`: the whole year.
    Year,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub name: String,
    pub regex: String,
    pub kind: PatternKind,
}

const MONTH: &str = r"(?P<mon>jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)\.?";

/// The built-in pattern set, in priority order.
pub fn default_patterns() -> Vec<PatternSpec> {
    let p = |name: &str, regex: String, kind| PatternSpec {
        name: name.to_string(),
        regex,
        kind,
    };
    vec![
        p(
            "iso",
            r"\b(?P<y>\d{4})-(?P<m>\d{1,2})-(?P<d>\d{1,2})\b".into(),
            PatternKind::Day,
        ),
        p(
            "day_month_year",
            format!(r"(?i)\b(?P<d>\d{{1,2}})(?:st|nd|rd|th)?\s+(?:of\s+)?{MONTH},?\s+(?P<y>\d{{4}})\b"),
            PatternKind::Day,
        ),
        p(
            "month_day_year",
            format!(r"(?i)\b{MONTH}\s+(?P<d>\d{{1,2}})(?:st|nd|rd|th)?,?\s+(?P<y>\d{{4}})\b"),
            PatternKind::Day,
        ),
        p(
            "numeric",
            r"\b(?P<p1>\d{1,2})[/.](?P<p2>\d{1,2})[/.](?P<y>\d{4})\b".into(),
            PatternKind::AmbiguousNumeric,
        ),
        p(
            "month_year",
            format!(r"(?i)\b{MONTH}\s+(?P<y>\d{{4}})\b"),
            PatternKind::Month,
        ),
        p(
            "year",
            r"\b(?P<y>(?:19|20)\d{2})\b".into(),
            PatternKind::Year,
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DateMention {
    pub span: (usize, usize),
    pub raw: String,
    pub interval: DateInterval,
    pub pattern: String,
}

/// Countries whose numeric dates are read month-first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocaleConfig {
    pub month_first_countries: Vec<String>,
}

impl Default for LocaleConfig {
    fn default() -> Self {
        Self {
            month_first_countries: vec!["US".into()],
        }
    }
}

impl LocaleConfig {
    pub fn month_first(&self, country: &str) -> bool {
        self.month_first_countries.iter().any(|c| c == country)
    }
}

struct CompiledPattern {
    name: String,
    regex: Regex,
    kind: PatternKind,
}

pub struct DateExtractor {
    patterns: Vec<CompiledPattern>,
    locale: LocaleConfig,
}

impl Default for DateExtractor {
    fn default() -> Self {
        Self::new(default_patterns(), LocaleConfig::default()).expect("built-in patterns compile")
    }
}

impl DateExtractor {
    pub fn new(patterns: Vec<PatternSpec>, locale: LocaleConfig) -> Result<Self> {
        let patterns = patterns
            .into_iter()
            .map(|p| {
                let regex = Regex::new(&p.regex)
                    .map_err(|e| Error::InvalidConfig(format!("pattern {}: {e}", p.name)))?;
                let names: BTreeSet<&str> = regex.capture_names().flatten().collect();
                let has = |g: &str| names.contains(g);
                let ok = has("y")
                    && match p.kind {
                        PatternKind::Day => (has("m") || has("mon")) && has("d"),
                        PatternKind::AmbiguousNumeric => has("p1") && has("p2"),
                        PatternKind::Month => has("m") || has("mon"),
                        PatternKind::Year => true,
                    };
                if !ok {
                    return Err(Error::InvalidConfig(format!(
                        "pattern {} lacks capture groups for {:?}",
                        p.name, p.kind
                    )));
                }
                Ok(CompiledPattern {
                    name: p.name,
                    regex,
                    kind: p.kind,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { patterns, locale })
    }

    /// Loads an ordered pattern list from a JSON file.
    pub fn from_config(path: impl AsRef<Path>, locale: LocaleConfig) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let patterns: Vec<PatternSpec> = serde_json::from_reader(BufReader::new(file))?;
        Self::new(patterns, locale)
    }

    /// Best-effort extraction; impossible or out-of-range dates are skipped.
    /// Mentions are returned in text order with repeated intervals collapsed.
    pub fn extract(&self, narrative: &str, locale_hint: &str) -> Vec<DateMention> {
        let month_first = self.locale.month_first(locale_hint);
        let mut claimed: Vec<(usize, usize)> = Vec::new();
        let mut mentions = Vec::new();
        for p in &self.patterns {
            for caps in p.regex.captures_iter(narrative) {
                let m = caps.get(0).expect("group 0");
                let span = (m.start(), m.end());
                if claimed.iter().any(|&(s, e)| span.0 < e && s < span.1) {
                    continue;
                }
                // Invalid dates still claim their text: "31/02/2021" yields no year mention.
                claimed.push(span);
                if let Some(interval) = interpret(&caps, p.kind, month_first) {
                    mentions.push(DateMention {
                        span,
                        raw: m.as_str().to_string(),
                        interval,
                        pattern: p.name.clone(),
                    });
                }
            }
        }
        mentions.sort_by_key(|m| m.span);
        let mut seen = BTreeSet::new();
        mentions.retain(|m| seen.insert((m.interval.start, m.interval.end)));
        mentions
    }
}

fn month_from_name(name: &str) -> Option<u32> {
    let lower = name.to_ascii_lowercase();
    let idx = [
        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
    ]
    .iter()
    .position(|m| lower.starts_with(m))?;
    Some(idx as u32 + 1)
}

fn group<T: std::str::FromStr>(caps: &Captures<'_>, name: &str) -> Option<T> {
    caps.name(name)?.as_str().parse().ok()
}

fn month_of(caps: &Captures<'_>) -> Option<u32> {
    match caps.name("mon") {
        Some(m) => month_from_name(m.as_str()),
        None => group(caps, "m"),
    }
}

fn interpret(caps: &Captures<'_>, kind: PatternKind, month_first: bool) -> Option<DateInterval> {
    let year: i32 = group(caps, "y")?;
    let (start, end) = match kind {
        PatternKind::Day => {
            let d = NaiveDate::from_ymd_opt(year, month_of(caps)?, group(caps, "d")?)?;
            (d, d)
        }
        PatternKind::AmbiguousNumeric => {
            let p1: u32 = group(caps, "p1")?;
            let p2: u32 = group(caps, "p2")?;
            let (day, month) = if p1 > 12 && p2 <= 12 {
                (p1, p2)
            } else if p2 > 12 && p1 <= 12 {
                (p2, p1)
            } else if month_first {
                (p2, p1)
            } else {
                (p1, p2)
            };
            let d = NaiveDate::from_ymd_opt(year, month, day)?;
            (d, d)
        }
        PatternKind::Month => {
            let month = month_of(caps)?;
            let start = NaiveDate::from_ymd_opt(year, month, 1)?;
            let next = if month == 12 {
                NaiveDate::from_ymd_opt(year + 1, 1, 1)?
            } else {
                NaiveDate::from_ymd_opt(year, month + 1, 1)?
            };
            (start, next.pred_opt()?)
        }
        PatternKind::Year => (
            NaiveDate::from_ymd_opt(year, 1, 1)?,
            NaiveDate::from_ymd_opt(year, 12, 31)?,
        ),
    };
    if start < min_date() || end > max_date() {
        return None;
    }
    Some(DateInterval {
        start,
        end,
        source: DateSource::Narrative,
    })
}

/// Structured dates plus narrative mentions, deduplicated by interval.
pub fn report_date_set(report: &Report, extractor: &DateExtractor) -> Vec<DateInterval> {
    let mut set: BTreeSet<(NaiveDate, NaiveDate)> = BTreeSet::new();
    let mut out = Vec::new();
    let structured = report.structured_dates.iter().map(|d| d.interval);
    let narrative = extractor
        .extract(&report.narrative, &report.country)
        .into_iter()
        .map(|m| m.interval);
    for interval in structured.chain(narrative) {
        if set.insert((interval.start, interval.end)) {
            out.push(interval);
        }
    }
    out
}

/// Start days of intervals precise enough to embed: uncertainty of at most a
/// week, and never starting on the 1st of January.
pub fn eligible_embedding_dates<'a>(
    dates: impl IntoIterator<Item = &'a DateInterval>,
) -> BTreeSet<NaiveDate> {
    dates
        .into_iter()
        .filter(|d| d.uncertainty_days() <= MAX_EMBEDDING_UNCERTAINTY_DAYS)
        .filter(|d| !(d.start.month() == 1 && d.start.day() == 1))
        .map(|d| d.start)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn intervals(text: &str, locale: &str) -> Vec<(NaiveDate, NaiveDate)> {
        DateExtractor::default()
            .extract(text, locale)
            .into_iter()
            .map(|m| (m.interval.start, m.interval.end))
            .collect()
    }

    #[test]
    fn month_year_is_whole_month() {
        assert_eq!(
            intervals("onset in March 2021", "SE"),
            vec![(ymd(2021, 3, 1), ymd(2021, 3, 31))]
        );
    }

    #[test]
    fn day_month_year() {
        assert_eq!(
            intervals("admitted 20 July 2007.", "SE"),
            vec![(ymd(2007, 7, 20), ymd(2007, 7, 20))]
        );
    }

    #[test]
    fn impossible_date_skipped() {
        assert!(intervals("seen on 31/02/2021", "SE").is_empty());
    }

    #[test]
    fn locale_disambiguation() {
        assert_eq!(
            intervals("05/06/2020", "SE"),
            vec![(ymd(2020, 6, 5), ymd(2020, 6, 5))]
        );
        assert_eq!(
            intervals("05/06/2020", "US"),
            vec![(ymd(2020, 5, 6), ymd(2020, 5, 6))]
        );
        assert_eq!(
            intervals("13/06/2020", "US"),
            vec![(ymd(2020, 6, 13), ymd(2020, 6, 13))]
        );
    }

    #[test]
    fn out_of_range_skipped() {
        assert!(intervals("born 1850-03-02", "SE").is_empty());
        assert!(intervals("until 2051-01-05", "SE").is_empty());
    }

    #[test]
    fn repeated_mentions_collapse() {
        let got = intervals("2020-01-05 and again 5 January 2020", "SE");
        assert_eq!(got, vec![(ymd(2020, 1, 5), ymd(2020, 1, 5))]);
    }

    #[test]
    fn eligibility_rules() {
        let month = DateInterval::new(ymd(2021, 3, 1), ymd(2021, 3, 31), DateSource::Narrative).unwrap();
        let jan1 = DateInterval::day(ymd(2019, 1, 1), DateSource::Structured);
        let day = DateInterval::day(ymd(2007, 7, 20), DateSource::Structured);
        let week = DateInterval::new(ymd(2007, 7, 1), ymd(2007, 7, 8), DateSource::Structured).unwrap();
        let jan1_week =
            DateInterval::new(ymd(2019, 1, 1), ymd(2019, 1, 7), DateSource::Structured).unwrap();
        let got = eligible_embedding_dates(&[month, jan1, day, week, jan1_week]);
        assert_eq!(got.into_iter().collect::<Vec<_>>(), vec![ymd(2007, 7, 1), ymd(2007, 7, 20)]);
    }

    #[test]
    fn pattern_config_validation() {
        let bad = PatternSpec {
            name: "x".into(),
            regex: r"(?P<y>\d{4})".into(),
            kind: PatternKind::Day,
        };
        assert!(DateExtractor::new(vec![bad], LocaleConfig::default()).is_err());
        let broken = PatternSpec {
            name: "x".into(),
            regex: r"(".into(),
            kind: PatternKind::Year,
        };
        assert!(DateExtractor::new(vec![broken], LocaleConfig::default()).is_err());
    }
}
