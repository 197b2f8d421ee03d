//! Questionnaire definitions, Likert scoring and severity thresholds.
//!
//! Instruments are plain data loaded from a small comma-separated format:
//!
//! ```text
//! #instrument phq8 threshold=10
//! item_id,subscale_id,min,max,reverse
//! p1,total,0,3,false
//! ```
//!
//! The metadata line may also carry `subscales=a|b|c` to declare the subscale
//! set and its order; rows referencing an undeclared subscale are rejected.
//! Without it the subscales are taken from the rows in order of first use.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INSTRUMENT_HEADER: &str = "item_id,subscale_id,min,max,reverse";
pub const RESPONSE_HEADER: &str = "subject_id,item_id,response";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstrumentError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate item_id `{item_id}`")]
    DuplicateItem { line: usize, item_id: String },
    #[error("line {line}: item `{item_id}` has min {min} >= max {max}")]
    EmptyRange {
        line: usize,
        item_id: String,
        min: i32,
        max: i32,
    },
    #[error("line {line}: item `{item_id}` references unknown subscale `{subscale_id}`")]
    UnknownSubscaleReference {
        line: usize,
        item_id: String,
        subscale_id: String,
    },
    #[error("instrument `{instrument_id}`: {message}")]
    Invalid {
        instrument_id: String,
        message: String,
    },
    #[error("item `{item_id}`: response {raw} outside [{min}, {max}]")]
    OutOfRange {
        item_id: String,
        raw: i32,
        min: i32,
        max: i32,
    },
    #[error("unknown subscale `{0}`")]
    UnknownSubscale(String),
    #[error("subject `{subject_id}`: missing response for item `{item_id}`")]
    MissingResponse { subject_id: String, item_id: String },
    #[error("subject `{subject_id}`: response for unknown item `{item_id}`")]
    UnknownItem { subject_id: String, item_id: String },
    #[error("line {line}: duplicate response for subject `{subject_id}` item `{item_id}`")]
    DuplicateResponse {
        line: usize,
        subject_id: String,
        item_id: String,
    },
    #[error("sheet for instrument `{found}` scored against `{expected}`")]
    InstrumentMismatch { expected: String, found: String },
    #[error("instrument `{0}` has no severity threshold")]
    NoThreshold(String),
    #[error("total {total} outside instrument range [{min}, {max}]")]
    TotalOutOfRange { total: i32, min: i32, max: i32 },
}

pub type Result<T> = std::result::Result<T, InstrumentError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemDefinition {
    pub item_id: String,
    pub subscale_id: String,
    pub min_response: i32,
    pub max_response: i32,
    pub reverse_scored: bool,
}

impl ItemDefinition {
    pub fn new(
        item_id: impl Into<String>,
        subscale_id: impl Into<String>,
        min_response: i32,
        max_response: i32,
        reverse_scored: bool,
    ) -> Self {
        Self {
            item_id: item_id.into(),
            subscale_id: subscale_id.into(),
            min_response,
            max_response,
            reverse_scored,
        }
    }

    pub fn contains(&self, raw: i32) -> bool {
        (self.min_response..=self.max_response).contains(&raw)
    }
}

/// Scores one raw response, reflecting it across the scale when the item is
/// reverse scored.
pub fn score_item(item: &ItemDefinition, raw: i32) -> Result<i32> {
    if !item.contains(raw) {
        return Err(InstrumentError::OutOfRange {
            item_id: item.item_id.clone(),
            raw,
            min: item.min_response,
            max: item.max_response,
        });
    }
    Ok(if item.reverse_scored {
        item.min_response + item.max_response - raw
    } else {
        raw
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Negative,
    Positive,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Negative => "negative",
            Severity::Positive => "positive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentDefinition {
    instrument_id: String,
    items: Vec<ItemDefinition>,
    subscale_ids: Vec<String>,
    severity_threshold: Option<i32>,
}

impl InstrumentDefinition {
    /// Builds a validated instrument.
    pub fn new(
        instrument_id: impl Into<String>,
        items: Vec<ItemDefinition>,
        subscale_ids: Vec<String>,
        severity_threshold: Option<i32>,
    ) -> Result<Self> {
        let instrument_id = instrument_id.into();
        let iid = instrument_id.clone();
        let invalid = move |message: String| InstrumentError::Invalid {
            instrument_id: iid.clone(),
            message,
        };
        if items.is_empty() {
            return Err(invalid("no items".into()));
        }
        let mut seen_subscales = HashSet::new();
        for s in &subscale_ids {
            if !seen_subscales.insert(s.as_str()) {
                return Err(invalid(format!("duplicate subscale `{s}`")));
            }
        }
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.item_id.as_str()) {
                return Err(invalid(format!("duplicate item_id `{}`", item.item_id)));
            }
            if item.min_response >= item.max_response {
                return Err(invalid(format!(
                    "item `{}` has min {} >= max {}",
                    item.item_id, item.min_response, item.max_response
                )));
            }
            if !seen_subscales.contains(item.subscale_id.as_str()) {
                return Err(invalid(format!(
                    "item `{}` references unknown subscale `{}`",
                    item.item_id, item.subscale_id
                )));
            }
        }
        let def = Self {
            instrument_id,
            items,
            subscale_ids,
            severity_threshold,
        };
        if let Some(t) = severity_threshold {
            let (lo, hi) = def.total_range();
            if t < lo || t > hi {
                return Err(invalid(format!(
                    "threshold {t} outside total range [{lo}, {hi}]"
                )));
            }
        }
        Ok(def)
    }

    pub fn instrument_id(&self) -> &str {
        &self.instrument_id
    }

    pub fn items(&self) -> &[ItemDefinition] {
        &self.items
    }

    pub fn subscale_ids(&self) -> &[String] {
        &self.subscale_ids
    }

    pub fn severity_threshold(&self) -> Option<i32> {
        self.severity_threshold
    }

    pub fn item(&self, item_id: &str) -> Option<&ItemDefinition> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn has_subscale(&self, subscale_id: &str) -> bool {
        self.subscale_ids.iter().any(|s| s == subscale_id)
    }

    /// Items of one subscale in instrument order.
    pub fn subscale_items<'a>(
        &'a self,
        subscale_id: &'a str,
    ) -> impl Iterator<Item = &'a ItemDefinition> + 'a {
        self.items.iter().filter(move |i| i.subscale_id == subscale_id)
    }

    pub fn subscale_range(&self, subscale_id: &str) -> Result<(i32, i32)> {
        if !self.has_subscale(subscale_id) {
            return Err(InstrumentError::UnknownSubscale(subscale_id.to_string()));
        }
        Ok(self
            .subscale_items(subscale_id)
            .fold((0, 0), |(lo, hi), i| (lo + i.min_response, hi + i.max_response)))
    }

    pub fn total_range(&self) -> (i32, i32) {
        self.items
            .iter()
            .fold((0, 0), |(lo, hi), i| (lo + i.min_response, hi + i.max_response))
    }

    /// Writes the instrument back in its file format.
    pub fn serialize(&self) -> String {
        let threshold = self
            .severity_threshold
            .map_or_else(|| "none".to_string(), |t| t.to_string());
        let mut out = format!(
            "#instrument {} threshold={} subscales={}\n{}\n",
            self.instrument_id,
            threshold,
            self.subscale_ids.join("|"),
            INSTRUMENT_HEADER
        );
        for i in &self.items {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i.item_id, i.subscale_id, i.min_response, i.max_response, i.reverse_scored
            ));
        }
        out
    }
}

fn malformed(line: usize, message: impl Into<String>) -> InstrumentError {
    InstrumentError::Malformed {
        line,
        message: message.into(),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "y" => Some(true),
        "false" | "0" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Parses and validates an instrument file. Errors carry 1-based line numbers.
pub fn load_instrument(source: &str) -> Result<InstrumentDefinition> {
    let mut lines = source
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());

    let (meta_line, meta) = lines
        .next()
        .ok_or_else(|| malformed(1, "empty instrument file"))?;
    let mut tokens = meta.split_whitespace();
    if tokens.next() != Some("#instrument") {
        return Err(malformed(meta_line, "expected `#instrument <id> threshold=<int|none>`"));
    }
    let instrument_id = tokens
        .next()
        .filter(|t| !t.contains('='))
        .ok_or_else(|| malformed(meta_line, "missing instrument id"))?
        .to_string();
    let mut threshold: Option<Option<i32>> = None;
    let mut declared: Option<Vec<String>> = None;
    for tok in tokens {
        match tok.split_once('=') {
            Some(("threshold", "none")) => threshold = Some(None),
            Some(("threshold", v)) => {
                let t = v
                    .parse()
                    .map_err(|_| malformed(meta_line, format!("bad threshold `{v}`")))?;
                threshold = Some(Some(t));
            }
            Some(("subscales", v)) => {
                declared = Some(v.split('|').map(str::to_string).collect());
            }
            _ => return Err(malformed(meta_line, format!("unrecognized metadata `{tok}`"))),
        }
    }
    let threshold = threshold.ok_or_else(|| malformed(meta_line, "missing threshold="))?;

    let (header_line, header) = lines
        .next()
        .ok_or_else(|| malformed(meta_line + 1, "missing header line"))?;
    if header.trim() != INSTRUMENT_HEADER {
        return Err(malformed(
            header_line,
            format!("expected header `{INSTRUMENT_HEADER}`"),
        ));
    }

    let mut items = Vec::new();
    let mut seen = HashSet::new();
    let mut derived: Vec<String> = Vec::new();
    for (line, row) in lines {
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != 5 {
            return Err(malformed(line, format!("expected 5 fields, found {}", cells.len())));
        }
        let item_id = cells[0].to_string();
        if item_id.is_empty() {
            return Err(malformed(line, "empty item_id"));
        }
        let subscale_id = cells[1].to_string();
        let min: i32 = cells[2]
            .parse()
            .map_err(|_| malformed(line, format!("bad min `{}`", cells[2])))?;
        let max: i32 = cells[3]
            .parse()
            .map_err(|_| malformed(line, format!("bad max `{}`", cells[3])))?;
        let reverse = parse_bool(cells[4])
            .ok_or_else(|| malformed(line, format!("bad reverse flag `{}`", cells[4])))?;
        if !seen.insert(item_id.clone()) {
            return Err(InstrumentError::DuplicateItem { line, item_id });
        }
        if min >= max {
            return Err(InstrumentError::EmptyRange {
                line,
                item_id,
                min,
                max,
            });
        }
        match &declared {
            Some(list) if !list.contains(&subscale_id) => {
                return Err(InstrumentError::UnknownSubscaleReference {
                    line,
                    item_id,
                    subscale_id,
                });
            }
            Some(_) => {}
            None => {
                if !derived.contains(&subscale_id) {
                    derived.push(subscale_id.clone());
                }
            }
        }
        items.push(ItemDefinition::new(item_id, subscale_id, min, max, reverse));
    }
    InstrumentDefinition::new(instrument_id, items, declared.unwrap_or(derived), threshold)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSheet {
    pub subject_id: String,
    pub instrument_id: String,
    pub responses: BTreeMap<String, i32>,
}

impl ResponseSheet {
    pub fn new(
        subject_id: impl Into<String>,
        instrument_id: impl Into<String>,
        responses: BTreeMap<String, i32>,
    ) -> Self {
        Self {
            subject_id: subject_id.into(),
            instrument_id: instrument_id.into(),
            responses,
        }
    }

    /// Checks completeness and range against `instrument`.
    pub fn validate(&self, instrument: &InstrumentDefinition) -> Result<()> {
        if self.instrument_id != instrument.instrument_id {
            return Err(InstrumentError::InstrumentMismatch {
                expected: instrument.instrument_id.clone(),
                found: self.instrument_id.clone(),
            });
        }
        for item in &instrument.items {
            let raw = self.response(&item.item_id)?;
            score_item(item, raw)?;
        }
        if let Some(extra) = self
            .responses
            .keys()
            .find(|k| instrument.item(k).is_none())
        {
            return Err(InstrumentError::UnknownItem {
                subject_id: self.subject_id.clone(),
                item_id: extra.clone(),
            });
        }
        Ok(())
    }

    fn response(&self, item_id: &str) -> Result<i32> {
        self.responses
            .get(item_id)
            .copied()
            .ok_or_else(|| InstrumentError::MissingResponse {
                subject_id: self.subject_id.clone(),
                item_id: item_id.to_string(),
            })
    }
}

fn check_sheet_instrument(instrument: &InstrumentDefinition, sheet: &ResponseSheet) -> Result<()> {
    if sheet.instrument_id != instrument.instrument_id {
        return Err(InstrumentError::InstrumentMismatch {
            expected: instrument.instrument_id.clone(),
            found: sheet.instrument_id.clone(),
        });
    }
    Ok(())
}

pub fn subscale_score(
    instrument: &InstrumentDefinition,
    sheet: &ResponseSheet,
    subscale_id: &str,
) -> Result<i32> {
    check_sheet_instrument(instrument, sheet)?;
    if !instrument.has_subscale(subscale_id) {
        return Err(InstrumentError::UnknownSubscale(subscale_id.to_string()));
    }
    instrument
        .subscale_items(subscale_id)
        .map(|item| score_item(item, sheet.response(&item.item_id)?))
        .sum()
}

pub fn total_score(instrument: &InstrumentDefinition, sheet: &ResponseSheet) -> Result<i32> {
    check_sheet_instrument(instrument, sheet)?;
    instrument
        .items
        .iter()
        .map(|item| score_item(item, sheet.response(&item.item_id)?))
        .sum()
}

/// Screens a total against the instrument's cut-off; the threshold itself
/// counts as positive.
pub fn classify_severity(instrument: &InstrumentDefinition, total: i32) -> Result<Severity> {
    let threshold = instrument
        .severity_threshold
        .ok_or_else(|| InstrumentError::NoThreshold(instrument.instrument_id.clone()))?;
    let (min, max) = instrument.total_range();
    if total < min || total > max {
        return Err(InstrumentError::TotalOutOfRange { total, min, max });
    }
    Ok(if total >= threshold {
        Severity::Positive
    } else {
        Severity::Negative
    })
}

/// Parses a `subject_id,item_id,response` file into one sheet per subject,
/// ordered by subject id. Sheets are not validated against an instrument.
pub fn load_response_sheets(source: &str, instrument_id: &str) -> Result<Vec<ResponseSheet>> {
    let mut lines = source
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (header_line, header) = lines.next().ok_or_else(|| malformed(1, "empty response file"))?;
    if header.trim() != RESPONSE_HEADER {
        return Err(malformed(header_line, format!("expected header `{RESPONSE_HEADER}`")));
    }
    let mut sheets: BTreeMap<String, BTreeMap<String, i32>> = BTreeMap::new();
    for (line, row) in lines {
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != 3 {
            return Err(malformed(line, format!("expected 3 fields, found {}", cells.len())));
        }
        let raw: i32 = cells[2]
            .parse()
            .map_err(|_| malformed(line, format!("bad response `{}`", cells[2])))?;
        let sheet = sheets.entry(cells[0].to_string()).or_default();
        if sheet.insert(cells[1].to_string(), raw).is_some() {
            return Err(InstrumentError::DuplicateResponse {
                line,
                subject_id: cells[0].to_string(),
                item_id: cells[1].to_string(),
            });
        }
    }
    Ok(sheets
        .into_iter()
        .map(|(subject, responses)| ResponseSheet::new(subject, instrument_id, responses))
        .collect())
}

/// Writes sheets in instrument item order, subjects in the given order.
pub fn save_response_sheets(instrument: &InstrumentDefinition, sheets: &[&ResponseSheet]) -> String {
    let mut out = format!("{RESPONSE_HEADER}\n");
    for sheet in sheets {
        for item in &instrument.items {
            if let Some(raw) = sheet.responses.get(&item.item_id) {
                out.push_str(&format!("{},{},{}\n", sheet.subject_id, item.item_id, raw));
            }
        }
    }
    out
}

pub mod fixtures {
    //! Bundled instrument definitions.
    use super::{load_instrument, InstrumentDefinition};

    pub const DERS_SOURCE: &str = include_str!("../fixtures/ders.csv");
    pub const PHQ8_SOURCE: &str = include_str!("../fixtures/phq8.csv");
    pub const PCLC_SOURCE: &str = include_str!("../fixtures/pclc.csv");

    pub fn ders() -> InstrumentDefinition {
        load_instrument(DERS_SOURCE).expect("bundled DERS fixture is valid")
    }

    pub fn phq8() -> InstrumentDefinition {
        load_instrument(PHQ8_SOURCE).expect("bundled PHQ-8 fixture is valid")
    }

    pub fn pclc() -> InstrumentDefinition {
        load_instrument(PCLC_SOURCE).expect("bundled PCL-C fixture is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn likert(id: &str, reverse: bool) -> ItemDefinition {
        ItemDefinition::new(id, "s", 1, 5, reverse)
    }

    fn five_item_subscale(reversed: [bool; 5]) -> InstrumentDefinition {
        let items = (0..5)
            .map(|i| likert(&format!("i{i}"), reversed[i]))
            .collect();
        InstrumentDefinition::new("t", items, vec!["s".into()], None).unwrap()
    }

    fn sheet(inst: &InstrumentDefinition, raws: &[i32]) -> ResponseSheet {
        let responses = inst
            .items()
            .iter()
            .zip(raws)
            .map(|(i, r)| (i.item_id.clone(), *r))
            .collect();
        ResponseSheet::new("subj", inst.instrument_id(), responses)
    }

    #[test]
    fn score_item_identity_reflection_and_range() {
        assert_eq!(score_item(&likert("a", false), 4).unwrap(), 4);
        assert_eq!(score_item(&likert("a", true), 4).unwrap(), 2);
        let err = score_item(&likert("q9", false), 6).unwrap_err();
        assert!(matches!(err, InstrumentError::OutOfRange { ref item_id, .. } if item_id == "q9"));
    }

    #[test]
    fn subscale_score_examples() {
        let plain = five_item_subscale([false; 5]);
        assert_eq!(subscale_score(&plain, &sheet(&plain, &[1; 5]), "s").unwrap(), 5);

        let mixed = five_item_subscale([false, true, false, false, true]);
        let s = sheet(&mixed, &[3, 2, 5, 1, 4]);
        assert_eq!(subscale_score(&mixed, &s, "s").unwrap(), 15);

        assert_eq!(
            subscale_score(&mixed, &s, "nope").unwrap_err(),
            InstrumentError::UnknownSubscale("nope".into())
        );
    }

    #[test]
    fn incomplete_sheet_is_rejected() {
        let plain = five_item_subscale([false; 5]);
        let mut s = sheet(&plain, &[1; 5]);
        s.responses.remove("i3");
        assert!(matches!(
            total_score(&plain, &s),
            Err(InstrumentError::MissingResponse { ref item_id, .. }) if item_id == "i3"
        ));
        assert!(s.validate(&plain).is_err());
    }

    #[test]
    fn phq8_totals_and_screening() {
        let phq = fixtures::phq8();
        assert_eq!(phq.severity_threshold(), Some(10));
        assert_eq!(total_score(&phq, &sheet(&phq, &[3; 8])).unwrap(), 24);
        assert_eq!(total_score(&phq, &sheet(&phq, &[0; 8])).unwrap(), 0);
        let mixed = sheet(&phq, &[1, 2, 0, 3, 1, 1, 2, 0]);
        assert_eq!(total_score(&phq, &mixed).unwrap(), 10);

        assert_eq!(classify_severity(&phq, 10).unwrap(), Severity::Positive);
        assert_eq!(classify_severity(&phq, 9).unwrap(), Severity::Negative);
        assert_eq!(classify_severity(&fixtures::pclc(), 30).unwrap(), Severity::Positive);
        assert!(matches!(
            classify_severity(&fixtures::ders(), 100),
            Err(InstrumentError::NoThreshold(_))
        ));
    }

    #[test]
    fn ders_fixture_shape() {
        let ders = fixtures::ders();
        assert_eq!(ders.items().len(), 36);
        assert_eq!(ders.subscale_ids().len(), 6);
        let counted: usize = ders
            .subscale_ids()
            .iter()
            .map(|s| ders.subscale_items(s).count())
            .sum();
        assert_eq!(counted, 36);
        assert_eq!(fixtures::pclc().items().len(), 17);
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        let dup = "#instrument x threshold=none\nitem_id,subscale_id,min,max,reverse\na,s,1,5,false\na,s,1,5,false\n";
        assert_eq!(
            load_instrument(dup).unwrap_err(),
            InstrumentError::DuplicateItem {
                line: 4,
                item_id: "a".into()
            }
        );
        let bad_range = "#instrument x threshold=none\nitem_id,subscale_id,min,max,reverse\na,s,5,5,false\n";
        assert!(matches!(
            load_instrument(bad_range),
            Err(InstrumentError::EmptyRange { line: 3, .. })
        ));
        let malformed_row = "#instrument x threshold=none\nitem_id,subscale_id,min,max,reverse\na,s,1\n";
        assert!(matches!(
            load_instrument(malformed_row),
            Err(InstrumentError::Malformed { line: 3, .. })
        ));
        let unknown = "#instrument x threshold=none subscales=s\nitem_id,subscale_id,min,max,reverse\na,s,1,5,false\nb,t,1,5,false\n";
        assert!(matches!(
            load_instrument(unknown),
            Err(InstrumentError::UnknownSubscaleReference { line: 4, .. })
        ));
        let threshold_out = "#instrument x threshold=50\nitem_id,subscale_id,min,max,reverse\na,s,0,3,false\n";
        assert!(matches!(
            load_instrument(threshold_out),
            Err(InstrumentError::Invalid { .. })
        ));
    }

    #[test]
    fn response_sheets_parse_and_reject_duplicates() {
        let src = "subject_id,item_id,response\ns2,p1,1\ns1,p1,3\ns1,p2,0\n";
        let sheets = load_response_sheets(src, "phq8").unwrap();
        assert_eq!(sheets.len(), 2);
        assert_eq!(sheets[0].subject_id, "s1");
        assert_eq!(sheets[0].responses["p1"], 3);
        let dup = "subject_id,item_id,response\ns1,p1,1\ns1,p1,2\n";
        assert!(matches!(
            load_response_sheets(dup, "phq8"),
            Err(InstrumentError::DuplicateResponse { line: 3, .. })
        ));
    }

    fn arb_instrument() -> impl Strategy<Value = InstrumentDefinition> {
        let item = (0i32..3, 1i32..6, any::<bool>(), 0usize..3);
        (prop::collection::vec(item, 1..12), prop::option::of(0i32..40)).prop_filter_map(
            "threshold out of range",
            |(specs, threshold)| {
                let subscales: Vec<String> = (0..3).map(|s| format!("sub{s}")).collect();
                let items = specs
                    .iter()
                    .enumerate()
                    .map(|(i, (min, span, rev, sub))| {
                        ItemDefinition::new(format!("it{i}"), subscales[*sub].clone(), *min, min + span, *rev)
                    })
                    .collect();
                InstrumentDefinition::new("gen", items, subscales, threshold).ok()
            },
        )
    }

    proptest! {
        #[test]
        fn reverse_scoring_is_an_involution(min in -3i32..3, span in 1i32..8, offset in 0i32..8) {
            let item = ItemDefinition::new("x", "s", min, min + span, true);
            let raw = min + offset % (span + 1);
            let once = score_item(&item, raw).unwrap();
            prop_assert_eq!(score_item(&item, once).unwrap(), raw);
        }

        #[test]
        fn serialize_round_trips(inst in arb_instrument()) {
            prop_assert_eq!(load_instrument(&inst.serialize()).unwrap(), inst);
        }

        #[test]
        fn scores_are_bounded_and_monotone(
            reversed in prop::array::uniform5(any::<bool>()),
            raws in prop::array::uniform5(1i32..=5),
            which in 0usize..5,
        ) {
            let inst = five_item_subscale(reversed);
            let s = sheet(&inst, &raws);
            let score = subscale_score(&inst, &s, "s").unwrap();
            prop_assert!((5..=25).contains(&score));
            if raws[which] < 5 {
                let mut bumped = raws;
                bumped[which] += 1;
                let after = subscale_score(&inst, &sheet(&inst, &bumped), "s").unwrap();
                if reversed[which] {
                    prop_assert!(after < score);
                } else {
                    prop_assert!(after > score);
                }
            }
        }

        #[test]
        fn screening_is_monotone(a in 0i32..=24, b in 0i32..=24) {
            let phq = fixtures::phq8();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(classify_severity(&phq, lo).unwrap() <= classify_severity(&phq, hi).unwrap());
        }
    }
}
