use crate::error::{Error, Result};

use super::types::{
    CodeMatch, CohortManifest, CohortRecord, DemographicsSummary, EfLabel, FacetSummary,
    IcdLabelMap, RaceEthnicity, Sex,
};

/// One row of source study/diagnosis/demographics metadata.
#[derive(Debug, Clone)]
pub struct MetadataRow {
    pub study_id: String,
    pub patient_id: String,
    pub image_ref: String,
    /// Diagnosis codes attached to the study.
    pub icd_codes: Vec<String>,
    pub age: Option<u32>,
    pub sex: Sex,
    pub race_ethnicity: RaceEthnicity,
}

/// Filter metadata rows down to studies whose code list matches exactly one
/// of the two label code sets. Studies matching both sets are excluded and
/// counted in the returned conflict tally.
pub fn build_cohort(
    rows: &[MetadataRow],
    icd_map: &IcdLabelMap,
) -> Result<(CohortManifest, usize)> {
    let mut records = Vec::new();
    let mut conflicts = 0usize;
    for row in rows {
        match icd_map.classify(row.icd_codes.iter().map(|c| c.as_str())) {
            CodeMatch::Label(label) => records.push(CohortRecord {
                study_id: row.study_id.clone(),
                patient_id: row.patient_id.clone(),
                image_ref: row.image_ref.clone(),
                label,
                age: row.age,
                sex: row.sex,
                race_ethnicity: row.race_ethnicity,
            }),
            CodeMatch::Conflict => conflicts += 1,
            CodeMatch::None => {}
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let manifest = CohortManifest::new(records, "built from metadata rows by ICD filter")?;
    Ok((manifest, conflicts))
}

/// Per-facet counts and percentages plus the age median and IQR.
pub fn summarize_demographics(manifest: &CohortManifest) -> Result<DemographicsSummary> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest(
            "cannot summarize demographics of an empty manifest".into(),
        ));
    }
    let total = manifest.len();
    let pct = |count: usize| 100.0 * count as f64 / total as f64;

    let by_race = FacetSummary {
        entries: RaceEthnicity::ALL
            .iter()
            .map(|cat| {
                let c = manifest
                    .records()
                    .iter()
                    .filter(|r| r.race_ethnicity == *cat)
                    .count();
                (cat.display_name().to_string(), c, pct(c))
            })
            .collect(),
    };

    let by_sex = FacetSummary {
        entries: [Sex::Male, Sex::Female, Sex::Unknown]
            .iter()
            .map(|sex| {
                let c = manifest.records().iter().filter(|r| r.sex == *sex).count();
                let name = match sex {
                    Sex::Male => "male",
                    Sex::Female => "female",
                    Sex::Unknown => "unknown",
                };
                (name.to_string(), c, pct(c))
            })
            .collect(),
    };

    let by_label = FacetSummary {
        entries: [EfLabel::ReducedEF, EfLabel::PreservedEF]
            .iter()
            .map(|l| {
                let c = manifest.records().iter().filter(|r| r.label == *l).count();
                (l.as_str().to_string(), c, pct(c))
            })
            .collect(),
    };

    let mut ages: Vec<f64> = manifest
        .records()
        .iter()
        .filter_map(|r| r.age.map(|a| a as f64))
        .collect();
    ages.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (age_median, age_iqr) = if ages.is_empty() {
        (None, None)
    } else {
        (
            Some(quantile(&ages, 0.5)),
            Some((quantile(&ages, 0.25), quantile(&ages, 0.75))),
        )
    };

    Ok(DemographicsSummary {
        total,
        by_race,
        by_sex,
        by_label,
        age_median,
        age_iqr,
        unrecognized_race_count: 0,
    })
}

/// Linear-interpolation quantile over a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(study: &str, patient: &str, codes: &[&str]) -> MetadataRow {
        MetadataRow {
            study_id: study.to_string(),
            patient_id: patient.to_string(),
            image_ref: format!("{study}.png"),
            icd_codes: codes.iter().map(|c| c.to_string()).collect(),
            age: Some(70),
            sex: Sex::Female,
            race_ethnicity: RaceEthnicity::WhiteCaucasian,
        }
    }

    fn map() -> IcdLabelMap {
        IcdLabelMap::new(
            ["I50.2".to_string(), "I50.21".to_string()],
            ["I50.3".to_string(), "I50.31".to_string()],
        )
        .unwrap()
    }

    #[test]
    fn filters_and_tallies_conflicts() {
        // 40 reduced, 50 preserved, 5 both-code, 5 neither.
        let mut rows = Vec::new();
        for i in 0..40 {
            rows.push(row(&format!("r{i}"), &format!("pr{i}"), &["I50.2"]));
        }
        for i in 0..50 {
            rows.push(row(&format!("p{i}"), &format!("pp{i}"), &["I50.3"]));
        }
        for i in 0..5 {
            rows.push(row(&format!("b{i}"), &format!("pb{i}"), &["I50.2", "I50.3"]));
        }
        for i in 0..5 {
            rows.push(row(&format!("n{i}"), &format!("pn{i}"), &["J18.9"]));
        }
        let (manifest, conflicts) = build_cohort(&rows, &map()).unwrap();
        assert_eq!(manifest.len(), 90);
        assert_eq!(conflicts, 5);
        assert_eq!(manifest.label_counts(), (40, 50));
    }

    #[test]
    fn filter_soundness() {
        let rows = vec![
            row("a", "pa", &["I50.2", "J18.9"]),
            row("b", "pb", &["I50.31"]),
        ];
        let icd = map();
        let (manifest, _) = build_cohort(&rows, &icd).unwrap();
        for r in manifest.records() {
            let source = rows.iter().find(|x| x.study_id == r.study_id).unwrap();
            let own = match r.label {
                EfLabel::ReducedEF => icd.reduced_codes(),
                EfLabel::PreservedEF => icd.preserved_codes(),
            };
            let other = match r.label {
                EfLabel::ReducedEF => icd.preserved_codes(),
                EfLabel::PreservedEF => icd.reduced_codes(),
            };
            assert!(source.icd_codes.iter().any(|c| own.contains(c)));
            assert!(!source.icd_codes.iter().any(|c| other.contains(c)));
        }
    }

    #[test]
    fn empty_result_is_an_error() {
        let rows = vec![row("a", "pa", &["J18.9"])];
        assert!(matches!(build_cohort(&rows, &map()), Err(Error::EmptyCohort)));
    }

    #[test]
    fn single_record_summary_is_100_percent() {
        let rows = vec![row("a", "pa", &["I50.2"])];
        let (manifest, _) = build_cohort(&rows, &map()).unwrap();
        let s = summarize_demographics(&manifest).unwrap();
        assert_eq!(s.total, 1);
        assert_eq!(s.by_race.count_of("White/Caucasian"), Some(1));
        assert!((s.by_race.percent_of("White/Caucasian").unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(s.by_sex.count_of("female"), Some(1));
    }

    #[test]
    fn empty_manifest_summary_is_an_error() {
        let manifest = CohortManifest::new(vec![], "empty").unwrap();
        assert!(summarize_demographics(&manifest).is_err());
    }

    #[test]
    fn facet_counts_conserve_total() {
        let mut rows = Vec::new();
        for i in 0..37 {
            rows.push(row(&format!("s{i}"), &format!("p{i}"), &["I50.2"]));
        }
        for i in 0..13 {
            rows.push(row(&format!("t{i}"), &format!("q{i}"), &["I50.3"]));
        }
        let (manifest, _) = build_cohort(&rows, &map()).unwrap();
        let s = summarize_demographics(&manifest).unwrap();
        assert_eq!(s.by_race.total(), s.total);
        assert_eq!(s.by_sex.total(), s.total);
        assert_eq!(s.by_label.total(), s.total);
        let pct_sum: f64 = s.by_race.entries.iter().map(|(_, _, p)| p).sum();
        assert!((pct_sum - 100.0).abs() < 0.5);
    }
}
