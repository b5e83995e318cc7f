use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary ejection-fraction label. `ReducedEF` is the positive class
/// everywhere in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EfLabel {
    ReducedEF,
    PreservedEF,
}

impl EfLabel {
    /// Spelling used in manifest and prediction CSV files.
    pub fn as_str(self) -> &'static str {
        match self {
            EfLabel::ReducedEF => "reduced",
            EfLabel::PreservedEF => "preserved",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reduced" => Ok(EfLabel::ReducedEF),
            "preserved" => Ok(EfLabel::PreservedEF),
            other => Err(Error::Invalid(format!(
                "unknown label `{other}` (expected `reduced` or `preserved`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
            Sex::Unknown => "",
        }
    }

    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Sex::Male,
            "f" | "female" => Sex::Female,
            _ => Sex::Unknown,
        }
    }
}

/// Race/ethnicity categories of the cohort summary table. Unrecognized source
/// strings fold into `Other`; empty strings map to `Unknown`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RaceEthnicity {
    AmericanIndianAlaskaNative,
    Asian,
    Black,
    HispanicLatino,
    Other,
    Unknown,
    UnableToObtain,
    MultipleRaceEthnicity,
    DeclinedToAnswer,
    WhiteCaucasian,
}

impl RaceEthnicity {
    pub const ALL: [RaceEthnicity; 10] = [
        RaceEthnicity::AmericanIndianAlaskaNative,
        RaceEthnicity::Asian,
        RaceEthnicity::Black,
        RaceEthnicity::HispanicLatino,
        RaceEthnicity::Other,
        RaceEthnicity::Unknown,
        RaceEthnicity::UnableToObtain,
        RaceEthnicity::MultipleRaceEthnicity,
        RaceEthnicity::DeclinedToAnswer,
        RaceEthnicity::WhiteCaucasian,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RaceEthnicity::AmericanIndianAlaskaNative => "american_indian_alaska_native",
            RaceEthnicity::Asian => "asian",
            RaceEthnicity::Black => "black",
            RaceEthnicity::HispanicLatino => "hispanic_latino",
            RaceEthnicity::Other => "other",
            RaceEthnicity::Unknown => "",
            RaceEthnicity::UnableToObtain => "unable_to_obtain",
            RaceEthnicity::MultipleRaceEthnicity => "multiple",
            RaceEthnicity::DeclinedToAnswer => "declined_to_answer",
            RaceEthnicity::WhiteCaucasian => "white",
        }
    }

    /// Human-readable name for rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            RaceEthnicity::AmericanIndianAlaskaNative => "American Indian/Alaska Native",
            RaceEthnicity::Asian => "Asian",
            RaceEthnicity::Black => "Black",
            RaceEthnicity::HispanicLatino => "Hispanic/Latino",
            RaceEthnicity::Other => "Other",
            RaceEthnicity::Unknown => "Unknown",
            RaceEthnicity::UnableToObtain => "Unable to Obtain",
            RaceEthnicity::MultipleRaceEthnicity => "Multiple Race/Ethnicity",
            RaceEthnicity::DeclinedToAnswer => "Declined to answer",
            RaceEthnicity::WhiteCaucasian => "White/Caucasian",
        }
    }

    /// Parse a source string; the boolean is true when the string was
    /// non-empty but unrecognized and therefore folded into `Other`.
    pub fn from_source(s: &str) -> (Self, bool) {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-', '/'], "_");
        if norm.is_empty() || norm == "unknown" {
            return (RaceEthnicity::Unknown, false);
        }
        for cat in RaceEthnicity::ALL {
            if !cat.as_str().is_empty() && norm == cat.as_str() {
                return (cat, false);
            }
        }
        match norm.as_str() {
            "white_caucasian" | "caucasian" => (RaceEthnicity::WhiteCaucasian, false),
            "hispanic" | "latino" => (RaceEthnicity::HispanicLatino, false),
            "multiple_race_ethnicity" => (RaceEthnicity::MultipleRaceEthnicity, false),
            "other" => (RaceEthnicity::Other, false),
            _ => (RaceEthnicity::Other, true),
        }
    }
}

/// One chest x-ray study with its patient identity, image reference, EF
/// label, and demographics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub study_id: String,
    pub patient_id: String,
    pub image_ref: String,
    pub label: EfLabel,
    pub age: Option<u32>,
    pub sex: Sex,
    pub race_ethnicity: RaceEthnicity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortManifest {
    records: Vec<CohortRecord>,
    pub provenance: String,
    pub created_at: DateTime<Utc>,
}

impl CohortManifest {
    /// Rejects duplicate study ids.
    pub fn new(records: Vec<CohortRecord>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.study_id.clone()) {
                return Err(Error::DuplicateStudy(r.study_id.clone()));
            }
        }
        Ok(Self {
            records,
            provenance: provenance.into(),
            created_at: Utc::now(),
        })
    }

    pub fn records(&self) -> &[CohortRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, study_id: &str) -> Option<&CohortRecord> {
        self.records.iter().find(|r| r.study_id == study_id)
    }

    /// (reduced, preserved) record counts.
    pub fn label_counts(&self) -> (usize, usize) {
        let reduced = self
            .records
            .iter()
            .filter(|r| r.label == EfLabel::ReducedEF)
            .count();
        (reduced, self.records.len() - reduced)
    }

    /// Distinct patient ids in first-appearance order.
    pub fn patient_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.patient_id.as_str()) {
                out.push(r.patient_id.clone());
            }
        }
        out
    }
}

/// ICD code sets defining the two labels. The sets must be disjoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcdLabelMap {
    reduced_codes: BTreeSet<String>,
    preserved_codes: BTreeSet<String>,
}

impl IcdLabelMap {
    pub fn new(
        reduced_codes: impl IntoIterator<Item = String>,
        preserved_codes: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let reduced: BTreeSet<String> = reduced_codes.into_iter().collect();
        let preserved: BTreeSet<String> = preserved_codes.into_iter().collect();
        if let Some(shared) = reduced.intersection(&preserved).next() {
            return Err(Error::Invalid(format!(
                "ICD code `{shared}` appears in both the reduced and preserved sets"
            )));
        }
        Ok(Self {
            reduced_codes: reduced,
            preserved_codes: preserved,
        })
    }

    pub fn reduced_codes(&self) -> &BTreeSet<String> {
        &self.reduced_codes
    }

    pub fn preserved_codes(&self) -> &BTreeSet<String> {
        &self.preserved_codes
    }

    /// Label implied by a study's code list: `Ok(Some(label))` for a clean
    /// match, `Ok(None)` when no code matches, `Err(())`-like conflict flag
    /// when both sets match.
    pub fn classify<'a>(
        &self,
        codes: impl IntoIterator<Item = &'a str>,
    ) -> CodeMatch {
        let mut hit_reduced = false;
        let mut hit_preserved = false;
        for c in codes {
            let c = c.trim();
            if self.reduced_codes.contains(c) {
                hit_reduced = true;
            }
            if self.preserved_codes.contains(c) {
                hit_preserved = true;
            }
        }
        match (hit_reduced, hit_preserved) {
            (true, true) => CodeMatch::Conflict,
            (true, false) => CodeMatch::Label(EfLabel::ReducedEF),
            (false, true) => CodeMatch::Label(EfLabel::PreservedEF),
            (false, false) => CodeMatch::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeMatch {
    Label(EfLabel),
    Conflict,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// Study → split map produced by `split_cohort`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    /// Requested (train, val, test) fractions.
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl SplitAssignment {
    pub fn studies_in(&self, split: Split) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|s| **s == split).count()
    }

    /// Realized (train, val, test) study fractions.
    pub fn realized_fractions(&self) -> (f64, f64, f64) {
        let n = self.assignment.len().max(1) as f64;
        (
            self.count(Split::Train) as f64 / n,
            self.count(Split::Val) as f64 / n,
            self.count(Split::Test) as f64 / n,
        )
    }
}

/// Count and percentage per category of one demographic facet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FacetSummary {
    /// (category name, count, percentage of the whole manifest).
    pub entries: Vec<(String, usize, f64)>,
}

impl FacetSummary {
    pub fn count_of(&self, name: &str) -> Option<usize> {
        self.entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, c, _)| *c)
    }

    pub fn percent_of(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, p)| *p)
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|(_, c, _)| c).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemographicsSummary {
    pub total: usize,
    pub by_race: FacetSummary,
    pub by_sex: FacetSummary,
    pub by_label: FacetSummary,
    pub age_median: Option<f64>,
    /// (first quartile, third quartile) of known ages.
    pub age_iqr: Option<(f64, f64)>,
    /// Records whose race string was unrecognized and folded into Other.
    pub unrecognized_race_count: usize,
}
