use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::types::{CohortManifest, Split, SplitAssignment};

/// Patient-grouped train/val/test split. Patients are shuffled with the
/// given seed and each patient's studies are assigned as a block to the
/// split with the largest remaining deficit, so no patient crosses splits.
pub fn split_cohort(
    manifest: &CohortManifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 {
        return Err(Error::Invalid("split fractions must be non-negative".into()));
    }
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "split fractions must sum to 1, got {}",
            ft + fv + fe
        )));
    }
    if manifest.is_empty() {
        return Err(Error::EmptyManifest("cannot split an empty manifest".into()));
    }

    // Group studies by patient.
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in manifest.records() {
        groups
            .entry(r.patient_id.clone())
            .or_default()
            .push(r.study_id.clone());
    }
    let active_splits = [ft, fv, fe].iter().filter(|f| **f > 0.0).count();
    if groups.len() < active_splits {
        return Err(Error::Invalid(format!(
            "only {} distinct patients for {} non-empty splits",
            groups.len(),
            active_splits
        )));
    }

    let mut patients: Vec<String> = groups.keys().cloned().collect();
    let mut rng = RngStream::derive(seed, "cohort-split");
    rng.shuffle(&mut patients);

    let total = manifest.len() as f64;
    let targets = [ft * total, fv * total, fe * total];
    let mut assigned = [0usize; 3];
    let mut assignment = BTreeMap::new();
    for patient in &patients {
        let studies = &groups[patient];
        // Largest remaining deficit wins; zero-fraction splits never win
        // because their deficit is never positive.
        let mut best = 0usize;
        let mut best_deficit = f64::NEG_INFINITY;
        for i in 0..3 {
            if targets[i] <= 0.0 {
                continue;
            }
            let deficit = targets[i] - assigned[i] as f64;
            if deficit > best_deficit {
                best_deficit = deficit;
                best = i;
            }
        }
        let split = Split::ALL[best];
        assigned[best] += studies.len();
        for s in studies {
            assignment.insert(s.clone(), split);
        }
    }

    Ok(SplitAssignment {
        assignment,
        fractions,
        seed,
    })
}

/// Leakage audit of a split assignment against its manifest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Patients whose studies appear in more than one split.
    pub cross_split_patients: Vec<String>,
    /// Image refs duplicated across different splits.
    pub cross_split_image_refs: Vec<String>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.cross_split_patients.is_empty() && self.cross_split_image_refs.is_empty()
    }
}

pub fn check_leakage(
    assignment: &SplitAssignment,
    manifest: &CohortManifest,
) -> Result<LeakageReport> {
    for study_id in assignment.assignment.keys() {
        if manifest.record(study_id).is_none() {
            return Err(Error::UnknownStudy(study_id.clone()));
        }
    }

    let mut patient_splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    let mut ref_splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    for r in manifest.records() {
        if let Some(split) = assignment.assignment.get(&r.study_id) {
            patient_splits
                .entry(r.patient_id.as_str())
                .or_default()
                .insert(*split);
            ref_splits
                .entry(r.image_ref.as_str())
                .or_default()
                .insert(*split);
        }
    }

    Ok(LeakageReport {
        cross_split_patients: patient_splits
            .iter()
            .filter(|(_, s)| s.len() > 1)
            .map(|(p, _)| p.to_string())
            .collect(),
        cross_split_image_refs: ref_splits
            .iter()
            .filter(|(_, s)| s.len() > 1)
            .map(|(r, _)| r.to_string())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{CohortRecord, EfLabel, RaceEthnicity, Sex};

    fn manifest(studies: &[(&str, &str)]) -> CohortManifest {
        let records = studies
            .iter()
            .map(|(study, patient)| CohortRecord {
                study_id: study.to_string(),
                patient_id: patient.to_string(),
                image_ref: format!("{study}.png"),
                label: EfLabel::ReducedEF,
                age: None,
                sex: Sex::Unknown,
                race_ethnicity: RaceEthnicity::Unknown,
            })
            .collect();
        CohortManifest::new(records, "test").unwrap()
    }

    fn many(n: usize) -> CohortManifest {
        let owned: Vec<(String, String)> = (0..n)
            .map(|i| (format!("s{i:05}"), format!("p{:05}", i)))
            .collect();
        let view: Vec<(&str, &str)> = owned
            .iter()
            .map(|(s, p)| (s.as_str(), p.as_str()))
            .collect();
        manifest(&view)
    }

    #[test]
    fn all_train_when_fraction_is_one() {
        let m = many(20);
        let a = split_cohort(&m, (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(a.count(Split::Train), 20);
        assert_eq!(a.count(Split::Val), 0);
        assert_eq!(a.count(Split::Test), 0);
    }

    #[test]
    fn reference_scale_test_split_size() {
        // 3,488 single-study patients with a 65-10-25 train-val-test
        // split: the test fraction of 0.25 yields ~872 studies.
        let m = many(3488);
        let a = split_cohort(&m, (0.65, 0.10, 0.25), 7).unwrap();
        let test = a.count(Split::Test) as i64;
        assert!((test - 872).abs() <= 2, "test split {test} != ~872");
    }

    #[test]
    fn multi_study_patient_never_splits() {
        let mut studies: Vec<(String, String)> = (0..40)
            .map(|i| (format!("s{i}"), format!("p{i}")))
            .collect();
        for i in 0..7 {
            studies.push((format!("px{i}"), "P".to_string()));
        }
        let view: Vec<(&str, &str)> = studies
            .iter()
            .map(|(s, p)| (s.as_str(), p.as_str()))
            .collect();
        let m = manifest(&view);
        for seed in 0..100 {
            let a = split_cohort(&m, (0.65, 0.10, 0.25), seed).unwrap();
            let splits: BTreeSet<Split> = (0..7)
                .map(|i| a.assignment[&format!("px{i}")])
                .collect();
            assert_eq!(splits.len(), 1, "patient P crossed splits at seed {seed}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let m = many(200);
        let a = split_cohort(&m, (0.65, 0.10, 0.25), 42).unwrap();
        let b = split_cohort(&m, (0.65, 0.10, 0.25), 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a.assignment).unwrap(),
            serde_json::to_string(&b.assignment).unwrap()
        );
        let c = split_cohort(&m, (0.65, 0.10, 0.25), 43).unwrap();
        assert_ne!(
            serde_json::to_string(&a.assignment).unwrap(),
            serde_json::to_string(&c.assignment).unwrap()
        );
    }

    #[test]
    fn bad_fractions_rejected() {
        let m = many(10);
        assert!(split_cohort(&m, (0.5, 0.2, 0.2), 0).is_err());
    }

    #[test]
    fn too_few_patients_rejected() {
        let m = manifest(&[("s1", "p1"), ("s2", "p1")]);
        assert!(split_cohort(&m, (0.65, 0.10, 0.25), 0).is_err());
    }

    #[test]
    fn clean_split_yields_clean_report() {
        let m = many(100);
        let a = split_cohort(&m, (0.65, 0.10, 0.25), 5).unwrap();
        let report = check_leakage(&a, &m).unwrap();
        assert!(report.is_clean());
    }

    #[test]
    fn corrupted_assignment_names_the_patient() {
        let studies: Vec<(String, String)> = (0..30)
            .map(|i| (format!("s{i}"), format!("p{}", i / 2)))
            .collect();
        let view: Vec<(&str, &str)> = studies
            .iter()
            .map(|(s, p)| (s.as_str(), p.as_str()))
            .collect();
        let m = manifest(&view);
        let mut a = split_cohort(&m, (0.65, 0.10, 0.25), 3).unwrap();
        // Move one study of patient p0 (owns s0, s1) to a different split.
        let current = a.assignment["s0"];
        let other = Split::ALL.iter().find(|s| **s != current).copied().unwrap();
        a.assignment.insert("s0".to_string(), other);
        let report = check_leakage(&a, &m).unwrap();
        assert_eq!(report.cross_split_patients, vec!["p0".to_string()]);
    }

    #[test]
    fn duplicate_ref_across_splits_is_reported() {
        let mut m = many(20);
        // Rebuild with two studies sharing one image_ref.
        let mut records = m.records().to_vec();
        let shared = "shared.png".to_string();
        records[0].image_ref = shared.clone();
        records[1].image_ref = shared.clone();
        m = CohortManifest::new(records, "test").unwrap();
        let mut a = split_cohort(&m, (0.65, 0.10, 0.25), 3).unwrap();
        a.assignment.insert("s00000".into(), Split::Train);
        a.assignment.insert("s00001".into(), Split::Test);
        let report = check_leakage(&a, &m).unwrap();
        assert!(report.cross_split_image_refs.contains(&shared));
    }

    #[test]
    fn assignment_with_unknown_study_is_an_error() {
        let m = many(10);
        let mut a = split_cohort(&m, (0.65, 0.10, 0.25), 3).unwrap();
        a.assignment.insert("ghost".into(), Split::Train);
        assert!(matches!(check_leakage(&a, &m), Err(Error::UnknownStudy(_))));
    }
}
