//! Convolved day vectors and their cosine similarity.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dates::{max_date, min_date};
use crate::error::{Error, Result};

/// Kernel applied around each date, centred on the middle element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DateKernel(pub Vec<f64>);

impl Default for DateKernel {
    /// Triangular window over seven days.
    fn default() -> Self {
        Self(vec![0.25, 0.5, 0.75, 1.0, 0.75, 0.5, 0.25])
    }
}

impl DateKernel {
    pub fn validate(&self) -> Result<()> {
        if self.0.len() % 2 == 0 || self.0.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "date kernel needs odd length and positive weights".into(),
            ));
        }
        Ok(())
    }

    fn half_width(&self) -> i64 {
        (self.0.len() / 2) as i64
    }
}

pub fn day_index(date: NaiveDate) -> Result<u32> {
    if date < min_date() || date > max_date() {
        return Err(Error::InvalidInterval(format!("date {date} outside embedding range")));
    }
    Ok((date - min_date()).num_days() as u32)
}

/// Sparse day vector, sorted by day index; all stored magnitudes are > 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DateVector {
    entries: Vec<(u32, f64)>,
    norm: f64,
}

impl DateVector {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, day: u32) -> f64 {
        self.entries
            .binary_search_by_key(&day, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }
}

pub fn build_date_vector<'a>(
    dates: impl IntoIterator<Item = &'a NaiveDate>,
    kernel: &DateKernel,
) -> Result<DateVector> {
    let last = day_index(max_date())? as i64;
    let half = kernel.half_width();
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    for date in dates {
        let centre = day_index(*date)? as i64;
        for (k, w) in kernel.0.iter().enumerate() {
            let idx = centre + k as i64 - half;
            if (0..=last).contains(&idx) {
                *acc.entry(idx as u32).or_insert(0.0) += w;
            }
        }
    }
    let entries: Vec<(u32, f64)> = acc.into_iter().collect();
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    Ok(DateVector { entries, norm })
}

/// Cosine similarity; 0 when either vector is empty.
///
/// Walks the shorter vector and binary-searches the longer one.
pub fn date_similarity(a: &DateVector, b: &DateVector) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut dot = 0.0;
    let mut lo = 0;
    for &(day, v) in &small.entries {
        match large.entries[lo..].binary_search_by_key(&day, |e| e.0) {
            Ok(i) => {
                dot += v * large.entries[lo + i].1;
                lo += i + 1;
            }
            Err(i) => lo += i,
        }
        if lo >= large.entries.len() {
            break;
        }
    }
    (dot / (a.norm * b.norm)).clamp(0.0, 1.0)
}
