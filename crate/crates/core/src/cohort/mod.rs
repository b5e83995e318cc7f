//! Cohort construction: ICD-code label filtering, demographics summaries,
//! leakage-free patient-level splits, and a synthetic desk-scale fixture.

mod build;
mod io;
mod split;
mod synthetic;
mod types;

pub use build::{build_cohort, summarize_demographics, MetadataRow};
pub use io::{
    read_icd_map, read_manifest, read_metadata_rows, read_split, write_atomic, write_manifest,
    write_split,
};
pub use split::{check_leakage, split_cohort, LeakageReport};
pub use synthetic::{
    central_region_mean, generate_synthetic_cohort, resolve_ref, threshold_oracle_accuracy,
    SyntheticParams, SyntheticTruth,
};
pub use types::{
    CohortManifest, CohortRecord, DemographicsSummary, EfLabel, FacetSummary, IcdLabelMap,
    RaceEthnicity, Sex, Split, SplitAssignment,
};
