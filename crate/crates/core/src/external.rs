//! The "externally indicated" pair feature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{Report, SenderIds};

const DEFAULT_PREFIXES: [&str; 30] = [
    "DE-", "GB-", "FR-", "IT-", "NL-", "GR-", "BE-", "PT-", "CA-", "ES-", "PL-", "CZ-", "JP-",
    "US-", "DK-", "FI-", "AT-", "AU-", "SE-", "PHH", "RO-", "IE-", "CH-", "HU-", "NO-", "IN-",
    "SK-", "BR-", "HR-", "EG-",
];

/// Identifier prefixes that clearly delineate a country.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PrefixWhitelist(Vec<String>);

impl Default for PrefixWhitelist {
    fn default() -> Self {
        Self(DEFAULT_PREFIXES.iter().map(|p| p.to_string()).collect())
    }
}

impl TryFrom<Vec<String>> for PrefixWhitelist {
    type Error = Error;

    fn try_from(prefixes: Vec<String>) -> Result<Self> {
        if prefixes.is_empty() || prefixes.iter().any(String::is_empty) {
            return Err(Error::InvalidConfig(
                "prefix whitelist must be nonempty with nonempty entries".into(),
            ));
        }
        Ok(Self(prefixes))
    }
}

impl From<PrefixWhitelist> for Vec<String> {
    fn from(w: PrefixWhitelist) -> Self {
        w.0
    }
}

impl PrefixWhitelist {
    pub fn prefixes(&self) -> &[String] {
        &self.0
    }

    pub fn accepts(&self, id: &str) -> bool {
        self.0.iter().any(|p| id.starts_with(p.as_str()))
    }
}

fn links_to(from: &SenderIds, to: &SenderIds, whitelist: &PrefixWhitelist) -> bool {
    let Some(prev) = from.previous_transmission_id.as_deref() else {
        return false;
    };
    whitelist.accepts(prev)
        && [&to.safety_report_id, &to.regulator_case_id, &to.other_case_id]
            .into_iter()
            .flatten()
            .any(|id| id == prev)
}

/// 1 when either report's previous-transmission id exactly equals one of the
/// other report's case identifiers and carries a whitelisted prefix.
pub fn externally_indicated_ids(a: &SenderIds, b: &SenderIds, whitelist: &PrefixWhitelist) -> u8 {
    u8::from(links_to(a, b, whitelist) || links_to(b, a, whitelist))
}

pub fn externally_indicated(a: &Report, b: &Report, whitelist: &PrefixWhitelist) -> u8 {
    externally_indicated_ids(&a.ids, &b.ids, whitelist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prev: Option<&str>, own: Option<&str>) -> SenderIds {
        SenderIds {
            safety_report_id: own.map(String::from),
            previous_transmission_id: prev.map(String::from),
            ..Default::default()
        }
    }

    #[test]
    fn default_list_has_thirty_entries() {
        let w = PrefixWhitelist::default();
        assert_eq!(w.prefixes().len(), 30);
        assert!(w.accepts("PHH123"));
        assert!(!w.accepts("ZZ-1"));
    }

    #[test]
    fn linked_ids() {
        let w = PrefixWhitelist::default();
        let a = ids(Some("DE-XYZ-001"), None);
        let b = ids(None, Some("DE-XYZ-001"));
        assert_eq!(externally_indicated_ids(&a, &b, &w), 1);
        assert_eq!(externally_indicated_ids(&b, &a, &w), 1);
    }

    #[test]
    fn other_id_fields_match_too() {
        let w = PrefixWhitelist::default();
        let a = ids(Some("FR-9"), None);
        let b = SenderIds {
            other_case_id: Some("FR-9".into()),
            ..Default::default()
        };
        assert_eq!(externally_indicated_ids(&a, &b, &w), 1);
        let c = SenderIds {
            regulator_case_id: Some("FR-9".into()),
            ..Default::default()
        };
        assert_eq!(externally_indicated_ids(&c, &a, &w), 1);
    }

    #[test]
    fn non_whitelisted_prefix() {
        let w = PrefixWhitelist::default();
        let a = ids(Some("ZZ-123"), Some("ZZ-123"));
        let b = ids(Some("ZZ-123"), Some("ZZ-123"));
        assert_eq!(externally_indicated_ids(&a, &b, &w), 0);
    }

    #[test]
    fn previous_ids_are_not_compared_with_each_other() {
        let w = PrefixWhitelist::default();
        let a = ids(Some("DE-1"), None);
        let b = ids(Some("DE-1"), None);
        assert_eq!(externally_indicated_ids(&a, &b, &w), 0);
        assert_eq!(externally_indicated_ids(&ids(None, None), &ids(None, None), &w), 0);
    }

    #[test]
    fn exact_comparison() {
        let w = PrefixWhitelist::default();
        assert_eq!(
            externally_indicated_ids(&ids(Some("DE-abc"), None), &ids(None, Some("DE-ABC")), &w),
            0
        );
        assert_eq!(
            externally_indicated_ids(&ids(Some("DE-1"), None), &ids(None, Some("DE-1 ")), &w),
            0
        );
    }

    #[test]
    fn whitelist_validation() {
        assert!(serde_json::from_str::<PrefixWhitelist>("[]").is_err());
        assert!(serde_json::from_str::<PrefixWhitelist>(r#"["DE-", ""]"#).is_err());
        let w: PrefixWhitelist = serde_json::from_str(r#"["XX-"]"#).unwrap();
        assert!(w.accepts("XX-1"));
    }
}
