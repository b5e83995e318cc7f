//! CSV interchange formats: cohort manifests, split assignments, ICD label
//! maps, and raw study metadata.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::build::MetadataRow;
use super::types::{
    CohortManifest, CohortRecord, EfLabel, IcdLabelMap, RaceEthnicity, Sex, Split,
    SplitAssignment,
};

const MANIFEST_HEADER: [&str; 7] = [
    "study_id",
    "patient_id",
    "image_ref",
    "label",
    "age",
    "sex",
    "race_ethnicity",
];

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(false).from_reader(file))
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema {
            column: name.to_string(),
            source_name: path.display().to_string(),
        })
}

/// Write a manifest CSV (UTF-8, LF line endings).
pub fn write_manifest(manifest: &CohortManifest, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&MANIFEST_HEADER.join(","));
    out.push('\n');
    for r in manifest.records() {
        let age = r.age.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.study_id,
            r.patient_id,
            r.image_ref,
            r.label.as_str(),
            age,
            r.sex.as_str(),
            r.race_ethnicity.as_str()
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<CohortManifest> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let idx: Vec<usize> = MANIFEST_HEADER
        .iter()
        .map(|c| column_index(&headers, c, path))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let get = |i: usize| row.get(idx[i]).unwrap_or("").trim().to_string();
        let age_raw = get(4);
        let age = if age_raw.is_empty() {
            None
        } else {
            Some(age_raw.parse::<u32>().map_err(|_| {
                Error::Invalid(format!("bad age `{age_raw}` in {}", path.display()))
            })?)
        };
        records.push(CohortRecord {
            study_id: get(0),
            patient_id: get(1),
            image_ref: get(2),
            label: EfLabel::parse(&get(3))?,
            age,
            sex: Sex::parse(&get(5)),
            race_ethnicity: RaceEthnicity::from_source(&get(6)).0,
        });
    }
    CohortManifest::new(records, format!("read from {}", path.display()))
}

pub fn write_split(assignment: &SplitAssignment, path: &Path) -> Result<()> {
    let mut out = String::from("study_id,split\n");
    for (study, split) in &assignment.assignment {
        out.push_str(&format!("{study},{}\n", split.as_str()));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_split(path: &Path) -> Result<SplitAssignment> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let si = column_index(&headers, "study_id", path)?;
    let sp = column_index(&headers, "split", path)?;
    let mut assignment = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let study = row.get(si).unwrap_or("").trim().to_string();
        let split = Split::parse(row.get(sp).unwrap_or(""))?;
        assignment.insert(study, split);
    }
    Ok(SplitAssignment {
        assignment,
        fractions: (0.0, 0.0, 0.0),
        seed: 0,
    })
}

/// Two-column CSV `code,label` with label `reduced` or `preserved`.
pub fn read_icd_map(path: &Path) -> Result<IcdLabelMap> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let ci = column_index(&headers, "code", path)?;
    let li = column_index(&headers, "label", path)?;
    let mut reduced = Vec::new();
    let mut preserved = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let code = row.get(ci).unwrap_or("").trim().to_string();
        match EfLabel::parse(row.get(li).unwrap_or(""))? {
            EfLabel::ReducedEF => reduced.push(code),
            EfLabel::PreservedEF => preserved.push(code),
        }
    }
    IcdLabelMap::new(reduced, preserved)
}

/// Study metadata CSV with a semicolon-separated `icd_codes` column.
pub fn read_metadata_rows(path: &Path) -> Result<Vec<MetadataRow>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let cols = [
        "study_id",
        "patient_id",
        "image_ref",
        "icd_codes",
        "age",
        "sex",
        "race_ethnicity",
    ];
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| column_index(&headers, c, path))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let get = |i: usize| row.get(idx[i]).unwrap_or("").trim().to_string();
        let age_raw = get(4);
        rows.push(MetadataRow {
            study_id: get(0),
            patient_id: get(1),
            image_ref: get(2),
            icd_codes: get(3)
                .split(';')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect(),
            age: age_raw.parse::<u32>().ok(),
            sex: Sex::parse(&get(5)),
            race_ethnicity: RaceEthnicity::from_source(&get(6)).0,
        });
    }
    Ok(rows)
}

/// Write via a temp file then rename, so readers never observe partials.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{split_cohort, SyntheticParams};

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, _) = crate::cohort::generate_synthetic_cohort(
            &SyntheticParams::new(25, 0.8, 5),
            dir.path(),
        )
        .unwrap();
        let path = dir.path().join("manifest.csv");
        write_manifest(&manifest, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("study_id,patient_id,image_ref,label,age,sex,race_ethnicity\n"));
        assert!(!text.contains('\r'));
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.records(), manifest.records());
    }

    #[test]
    fn split_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, _) = crate::cohort::generate_synthetic_cohort(
            &SyntheticParams::new(40, 0.8, 5),
            dir.path(),
        )
        .unwrap();
        let a = split_cohort(&manifest, (0.65, 0.10, 0.25), 1).unwrap();
        let path = dir.path().join("split.csv");
        write_split(&a, &path).unwrap();
        let back = read_split(&path).unwrap();
        assert_eq!(back.assignment, a.assignment);
    }

    #[test]
    fn missing_column_names_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "study_id,patient_id\ns1,p1\n").unwrap();
        match read_manifest(&path) {
            Err(Error::Schema { column, .. }) => assert_eq!(column, "image_ref"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn icd_map_parses_and_rejects_overlap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("icd.csv");
        std::fs::write(&path, "code,label\nI50.2,reduced\nI50.3,preserved\n").unwrap();
        let map = read_icd_map(&path).unwrap();
        assert!(map.reduced_codes().contains("I50.2"));
        std::fs::write(&path, "code,label\nI50.2,reduced\nI50.2,preserved\n").unwrap();
        assert!(read_icd_map(&path).is_err());
    }
}
