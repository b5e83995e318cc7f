//! Desk-scale synthetic cohort: grayscale studies where the ReducedEF class
//! carries an enlarged, brighter central ellipse (a cardiomegaly surrogate)
//! whose strength is controlled by `class_signal`. The generator records its
//! own ground truth so tests can assert against it, and the planted feature
//! admits an analytic threshold oracle on the central-region mean intensity.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::types::{CohortManifest, CohortRecord, EfLabel, RaceEthnicity, Sex};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n: usize,
    pub class_signal: f64,
    pub seed: u64,
    /// Side length of the emitted square images.
    pub image_size: usize,
}

impl SyntheticParams {
    pub fn new(n: usize, class_signal: f64, seed: u64) -> Self {
        Self {
            n,
            class_signal,
            seed,
            image_size: 32,
        }
    }
}

/// Ground truth persisted by the generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub params: SyntheticParams,
    pub studies: Vec<StudyTruth>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyTruth {
    pub study_id: String,
    pub label: EfLabel,
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub intensity: f64,
}

const RACE_WEIGHTS: [(RaceEthnicity, f64); 10] = [
    (RaceEthnicity::WhiteCaucasian, 0.60),
    (RaceEthnicity::Black, 0.195),
    (RaceEthnicity::HispanicLatino, 0.054),
    (RaceEthnicity::Other, 0.048),
    (RaceEthnicity::Unknown, 0.041),
    (RaceEthnicity::Asian, 0.029),
    (RaceEthnicity::DeclinedToAnswer, 0.012),
    (RaceEthnicity::AmericanIndianAlaskaNative, 0.006),
    (RaceEthnicity::UnableToObtain, 0.006),
    (RaceEthnicity::MultipleRaceEthnicity, 0.003),
];

/// Emit `params.n` studies under `out_dir/images/`, plus `out_dir/truth.json`.
/// Image refs in the returned manifest are relative to `out_dir`.
pub fn generate_synthetic_cohort(
    params: &SyntheticParams,
    out_dir: &Path,
) -> Result<(CohortManifest, SyntheticTruth)> {
    if params.n < 10 {
        return Err(Error::Invalid(format!(
            "synthetic cohort needs n >= 10, got {}",
            params.n
        )));
    }
    if !(0.0..=1.0).contains(&params.class_signal) {
        return Err(Error::Invalid("class_signal must be in [0, 1]".into()));
    }
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let mut rng = RngStream::derive(params.seed, "synthetic-cohort");
    let size = params.image_size;
    let mut records = Vec::with_capacity(params.n);
    let mut truths = Vec::with_capacity(params.n);

    let mut study = 0usize;
    let mut patient = 0usize;
    while study < params.n {
        let patient_id = format!("P{patient:05}");
        patient += 1;
        // Most patients have a single study; some have several so that
        // patient-level splitting is exercised.
        let draw = rng.unit();
        let n_studies = if draw < 0.70 {
            1
        } else if draw < 0.90 {
            2
        } else {
            3
        }
        .min(params.n - study);
        let label = if rng.unit() < 0.5 {
            EfLabel::ReducedEF
        } else {
            EfLabel::PreservedEF
        };
        let age = Some(rng.uniform(45.0, 95.0) as u32);
        let sex = if rng.unit() < 0.453 { Sex::Female } else { Sex::Male };
        let race = sample_race(&mut rng);

        for _ in 0..n_studies {
            let study_id = format!("S{study:05}");
            let truth = render_study(&study_id, label, params, size, &mut rng);
            let rel_ref = format!("images/{study_id}.png");
            write_gray_png(&image_dir.join(format!("{study_id}.png")), size, &truth.1)?;
            records.push(CohortRecord {
                study_id: study_id.clone(),
                patient_id: patient_id.clone(),
                image_ref: rel_ref,
                label,
                age,
                sex,
                race_ethnicity: race,
            });
            truths.push(truth.0);
            study += 1;
        }
    }

    let manifest = CohortManifest::new(
        records,
        format!(
            "synthetic(n={}, class_signal={}, seed={})",
            params.n, params.class_signal, params.seed
        ),
    )?;
    let truth = SyntheticTruth {
        params: params.clone(),
        studies: truths,
    };
    let truth_path = out_dir.join("truth.json");
    let json = serde_json::to_string_pretty(&truth)
        .map_err(|e| Error::Invalid(format!("truth serialization: {e}")))?;
    fs::write(&truth_path, json).map_err(|e| Error::io(&truth_path, e))?;
    Ok((manifest, truth))
}

fn sample_race(rng: &mut RngStream) -> RaceEthnicity {
    let mut u = rng.unit();
    for (race, w) in RACE_WEIGHTS {
        if u < w {
            return race;
        }
        u -= w;
    }
    RaceEthnicity::WhiteCaucasian
}

/// Render one study; returns the truth record and the pixel buffer in [0,1].
fn render_study(
    study_id: &str,
    label: EfLabel,
    params: &SyntheticParams,
    size: usize,
    rng: &mut RngStream,
) -> (StudyTruth, Vec<f64>) {
    let s = size as f64;
    let signal = params.class_signal;
    let jitter = s / 16.0;
    let cx = s / 2.0 + rng.uniform(-jitter, jitter);
    let cy = s / 2.0 + rng.uniform(-jitter, jitter);
    let (radius_scale, intensity) = match label {
        EfLabel::ReducedEF => (0.16 + 0.10 * signal, 0.45 + 0.35 * signal),
        EfLabel::PreservedEF => (0.16, 0.45),
    };
    let rx = radius_scale * s * rng.uniform(0.95, 1.05);
    let ry = radius_scale * s * rng.uniform(0.95, 1.05) * 1.1;

    let mut pixels = vec![0.0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            let background = rng.uniform(0.05, 0.25);
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            let d = (dx * dx + dy * dy).sqrt();
            // Soft-edged ellipse over a noisy background.
            let w = ((1.08 - d) / 0.08).clamp(0.0, 1.0);
            let noise = rng.uniform(-0.03, 0.03);
            pixels[y * size + x] =
                (background * (1.0 - w) + intensity * w + noise).clamp(0.0, 1.0);
        }
    }
    (
        StudyTruth {
            study_id: study_id.to_string(),
            label,
            center: (cx, cy),
            radii: (rx, ry),
            intensity,
        },
        pixels,
    )
}

fn write_gray_png(path: &Path, size: usize, pixels: &[f64]) -> Result<()> {
    let buf: Vec<u8> = pixels
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let img = image::GrayImage::from_raw(size as u32, size as u32, buf)
        .expect("buffer size matches dimensions");
    img.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Mean intensity (in [0,1]) over the central half-width box of an image
/// file. Reads the file directly so the oracle does not depend on the
/// imaging pipeline.
pub fn central_region_mean(path: &Path) -> Result<f64> {
    let img = image::open(path)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    let (x0, x1) = (w / 4, 3 * w / 4);
    let (y0, y1) = (h / 4, 3 * h / 4);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in y0..y1 {
        for x in x0..x1 {
            sum += img.get_pixel(x, y).0[0] as f64 / 255.0;
            count += 1;
        }
    }
    Ok(sum / count.max(1) as f64)
}

/// Accuracy of the best single-threshold classifier on central-region mean
/// intensity over the manifest's images (threshold swept over midpoints).
pub fn threshold_oracle_accuracy(manifest: &CohortManifest, image_root: &Path) -> Result<f64> {
    let mut scored: Vec<(f64, EfLabel)> = Vec::with_capacity(manifest.len());
    for r in manifest.records() {
        let mean = central_region_mean(&resolve_ref(image_root, &r.image_ref))?;
        scored.push((mean, r.label));
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n = scored.len();
    let total_reduced = scored
        .iter()
        .filter(|(_, l)| *l == EfLabel::ReducedEF)
        .count();
    // Sweep thresholds: predict ReducedEF for mean > t. At cut k, studies
    // 0..k are predicted preserved.
    let mut best = 0usize;
    let mut reduced_below = 0usize;
    for k in 0..=n {
        let correct = (k - reduced_below) + (total_reduced - reduced_below);
        best = best.max(correct);
        if k < n && scored[k].1 == EfLabel::ReducedEF {
            reduced_below += 1;
        }
    }
    Ok(best as f64 / n as f64)
}

/// Join an image ref (relative or absolute) against a root directory.
pub fn resolve_ref(image_root: &Path, image_ref: &str) -> PathBuf {
    let p = Path::new(image_ref);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        image_root.join(p)
    }
}
