//! Test-set scoring: per-class precision/recall/F1, confidence-bucket
//! counts, and demographic subgroup breakdowns. All metric arithmetic runs
//! in f64 regardless of the model's element type. The positive class is
//! ReducedEF throughout, and a study is called reduced iff P(ReducedEF)
//! exceeds 0.5 — a tie goes to PreservedEF.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortManifest, EfLabel};
use crate::error::{Error, Result};
use crate::imaging::to_nchw;
use crate::models::Model;
use crate::num::Scalar;
use crate::training::Sample;

pub const HIGH_CONFIDENCE: f64 = 0.9;
pub const LOW_CONFIDENCE: f64 = 0.1;
/// Below this many studies, a subgroup's metrics are flagged as unstable.
pub const LOW_SUPPORT: usize = 5;

/// One scored study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub study_id: String,
    /// P(ReducedEF).
    pub p_reduced: f64,
    pub predicted: EfLabel,
    pub truth: EfLabel,
}

impl PredictionRecord {
    pub fn new(study_id: impl Into<String>, p_reduced: f64, truth: EfLabel) -> Self {
        Self {
            study_id: study_id.into(),
            p_reduced,
            predicted: decide(p_reduced),
            truth,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.predicted == self.truth
    }
}

/// The decision rule: reduced iff p > 0.5.
pub fn decide(p_reduced: f64) -> EfLabel {
    if p_reduced > 0.5 {
        EfLabel::ReducedEF
    } else {
        EfLabel::PreservedEF
    }
}

/// Score a sample set with `model` (which must be in evaluation mode).
pub fn predict_samples<F: Scalar>(
    model: &Model<F>,
    samples: &[Sample<F>],
    batch_size: usize,
) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let images: Vec<_> = chunk.iter().map(|s| s.image.clone()).collect();
        let probs = model.predict_proba(&to_nchw(&images)?)?;
        for (p, s) in probs.iter().zip(chunk) {
            let p = p.as_f64();
            if !p.is_finite() {
                return Err(Error::NonFinite(format!(
                    "predicted probability for study {}",
                    s.study_id
                )));
            }
            records.push(PredictionRecord::new(s.study_id.clone(), p, s.label));
        }
    }
    Ok(records)
}

/// Confusion counts with ReducedEF as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }
}

pub fn confusion_counts(records: &[PredictionRecord]) -> Confusion {
    let mut c = Confusion {
        true_positive: 0,
        false_positive: 0,
        false_negative: 0,
        true_negative: 0,
    };
    for r in records {
        match (r.predicted, r.truth) {
            (EfLabel::ReducedEF, EfLabel::ReducedEF) => c.true_positive += 1,
            (EfLabel::ReducedEF, EfLabel::PreservedEF) => c.false_positive += 1,
            (EfLabel::PreservedEF, EfLabel::ReducedEF) => c.false_negative += 1,
            (EfLabel::PreservedEF, EfLabel::PreservedEF) => c.true_negative += 1,
        }
    }
    c
}

/// Precision/recall/F1 for one class. A zero denominator yields 0.0 with
/// the corresponding `undefined_*` flag set rather than NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of studies whose truth is this class.
    pub support: usize,
    pub undefined_precision: bool,
    pub undefined_recall: bool,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from_precision_recall(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn class_metrics(tp: usize, fp: usize, fn_: usize) -> ClassMetrics {
    let undefined_precision = tp + fp == 0;
    let undefined_recall = tp + fn_ == 0;
    let precision = if undefined_precision {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if undefined_recall {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = f1_from_precision_recall(precision, recall);
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
        undefined_precision,
        undefined_recall,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub reduced: ClassMetrics,
    pub preserved: ClassMetrics,
    pub accuracy: f64,
    pub misclassification_rate: f64,
    pub n: usize,
}

pub fn classification_report(records: &[PredictionRecord]) -> Result<ClassificationReport> {
    if records.is_empty() {
        return Err(Error::Invalid("no predictions to score".into()));
    }
    let c = confusion_counts(records);
    let reduced = class_metrics(c.true_positive, c.false_positive, c.false_negative);
    // The preserved class's metrics come from the mirrored confusion table.
    let preserved = class_metrics(c.true_negative, c.false_negative, c.false_positive);
    let n = c.total();
    let correct = c.true_positive + c.true_negative;
    let accuracy = correct as f64 / n as f64;
    Ok(ClassificationReport {
        reduced,
        preserved,
        accuracy,
        misclassification_rate: 1.0 - accuracy,
        n,
    })
}

/// Counts of extreme-probability predictions, overall and among errors.
/// Thresholds are strict and apply to the raw P(ReducedEF).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceBuckets {
    /// p > 0.9.
    pub high: usize,
    /// p < 0.1.
    pub low: usize,
    pub misclassified: usize,
    pub misclassified_high: usize,
    pub misclassified_low: usize,
}

pub fn confidence_buckets(records: &[PredictionRecord]) -> ConfidenceBuckets {
    let mut b = ConfidenceBuckets {
        high: 0,
        low: 0,
        misclassified: 0,
        misclassified_high: 0,
        misclassified_low: 0,
    };
    for r in records {
        let high = r.p_reduced > HIGH_CONFIDENCE;
        let low = r.p_reduced < LOW_CONFIDENCE;
        if high {
            b.high += 1;
        }
        if low {
            b.low += 1;
        }
        if !r.is_correct() {
            b.misclassified += 1;
            if high {
                b.misclassified_high += 1;
            }
            if low {
                b.misclassified_low += 1;
            }
        }
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    RaceEthnicity,
    Sex,
}

impl Facet {
    pub fn as_str(self) -> &'static str {
        match self {
            Facet::RaceEthnicity => "race_ethnicity",
            Facet::Sex => "sex",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "race" | "race_ethnicity" => Ok(Facet::RaceEthnicity),
            "sex" => Ok(Facet::Sex),
            other => Err(Error::Config(format!("unknown subgroup facet `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub name: String,
    pub n: usize,
    pub report: ClassificationReport,
    /// Set when n < 5; the row's metrics are too noisy to compare.
    pub low_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub facet: Facet,
    pub rows: Vec<SubgroupRow>,
}

/// Per-subgroup metrics over one demographic facet. Every prediction must
/// resolve to a manifest record for its demographics.
pub fn subgroup_report(
    records: &[PredictionRecord],
    manifest: &CohortManifest,
    facet: Facet,
) -> Result<SubgroupReport> {
    let mut groups: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        let rec = manifest
            .record(&r.study_id)
            .ok_or_else(|| Error::UnknownStudy(r.study_id.clone()))?;
        let key = match facet {
            Facet::RaceEthnicity => rec.race_ethnicity.display_name().to_string(),
            Facet::Sex => rec.sex.as_str().to_string(),
        };
        groups.entry(key).or_default().push(r.clone());
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (name, preds) in groups {
        let report = classification_report(&preds)?;
        rows.push(SubgroupRow {
            name,
            n: preds.len(),
            low_support: preds.len() < LOW_SUPPORT,
            report,
        });
    }
    Ok(SubgroupReport { facet, rows })
}

/// Everything the evaluation stage reports, JSON-serializable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub overall: ClassificationReport,
    pub buckets: ConfidenceBuckets,
    pub subgroups: Vec<SubgroupReport>,
}

pub fn evaluation_report(
    records: &[PredictionRecord],
    manifest: &CohortManifest,
    facets: &[Facet],
) -> Result<EvaluationReport> {
    let overall = classification_report(records)?;
    let buckets = confidence_buckets(records);
    let mut subgroups = Vec::with_capacity(facets.len());
    for facet in facets {
        subgroups.push(subgroup_report(records, manifest, *facet)?);
    }
    Ok(EvaluationReport {
        overall,
        buckets,
        subgroups,
    })
}

/// Write predictions as CSV: `study_id,p_reduced,predicted,truth`.
pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = String::from("study_id,p_reduced,predicted,truth\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.study_id,
            r.p_reduced,
            r.predicted.as_str(),
            r.truth.as_str()
        ));
    }
    crate::cohort::write_atomic(path, out.as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .clone();
    for col in ["study_id", "p_reduced", "predicted", "truth"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Schema {
                column: col.to_string(),
                source_name: path.display().to_string(),
            });
        }
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let field = |name: &str| -> &str {
            let idx = headers.iter().position(|h| h == name).unwrap();
            row.get(idx).unwrap_or("")
        };
        let p_reduced: f64 = field("p_reduced")
            .parse()
            .map_err(|_| Error::Invalid(format!("bad p_reduced `{}`", field("p_reduced"))))?;
        let predicted = EfLabel::parse(field("predicted"))?;
        let truth = EfLabel::parse(field("truth"))?;
        let record = PredictionRecord {
            study_id: field("study_id").to_string(),
            p_reduced,
            predicted,
            truth,
        };
        if record.predicted != decide(record.p_reduced) {
            return Err(Error::Invalid(format!(
                "study {}: predicted label contradicts p_reduced {}",
                record.study_id, record.p_reduced
            )));
        }
        records.push(record);
    }
    Ok(records)
}

/// Human-readable summary of the whole report.
pub fn render_report(report: &EvaluationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "n = {}   accuracy = {:.4}   misclassified = {:.1}%\n\n",
        report.overall.n,
        report.overall.accuracy,
        100.0 * report.overall.misclassification_rate
    ));
    out.push_str("class       precision  recall   f1      support\n");
    for (name, m) in [
        ("reduced", &report.overall.reduced),
        ("preserved", &report.overall.preserved),
    ] {
        out.push_str(&format!(
            "{name:<11} {:>9.2} {:>7.2} {:>6.2} {:>8}{}\n",
            m.precision,
            m.recall,
            m.f1,
            m.support,
            if m.undefined_precision || m.undefined_recall {
                "  (undefined terms -> 0)"
            } else {
                ""
            }
        ));
    }
    out.push_str(&format!(
        "\nconfidence: {} with p > {HIGH_CONFIDENCE}, {} with p < {LOW_CONFIDENCE}; \
         of the {} misclassified, {} had p > {HIGH_CONFIDENCE} and {} had p < {LOW_CONFIDENCE}\n",
        report.buckets.high,
        report.buckets.low,
        report.buckets.misclassified,
        report.buckets.misclassified_high,
        report.buckets.misclassified_low
    ));
    for sg in &report.subgroups {
        out.push_str(&format!("\nsubgroups by {}:\n", sg.facet.as_str()));
        out.push_str("group                      n   acc    reduced P/R/F1      preserved P/R/F1\n");
        for row in &sg.rows {
            out.push_str(&format!(
                "{:<24} {:>5}  {:.3}   {:.2}/{:.2}/{:.2}        {:.2}/{:.2}/{:.2}{}\n",
                row.name,
                row.n,
                row.report.accuracy,
                row.report.reduced.precision,
                row.report.reduced.recall,
                row.report.reduced.f1,
                row.report.preserved.precision,
                row.report.preserved.recall,
                row.report.preserved.f1,
                if row.low_support { "  (low support)" } else { "" }
            ));
        }
    }
    out
}
