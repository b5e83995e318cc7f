//! Attribution: vanilla gradient saliency and Grad-CAM over the registered
//! last convolutional feature map, plus overlay rendering and error-case
//! selection. Maps are normalized to [0, 1] per image; a flat map is
//! returned as zeros with a degeneracy flag instead of dividing by zero.

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::cohort::EfLabel;
use crate::error::{Error, Result};
use crate::evaluation::PredictionRecord;
use crate::imaging::{resize_bilinear_array, Image};
use crate::models::Model;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    Saliency,
    GradCam,
}

impl AttributionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AttributionMethod::Saliency => "saliency",
            AttributionMethod::GradCam => "grad_cam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "saliency" => Ok(AttributionMethod::Saliency),
            "grad_cam" | "gradcam" => Ok(AttributionMethod::GradCam),
            other => Err(Error::Config(format!("unknown attribution method `{other}`"))),
        }
    }
}

/// One attribution map at input resolution.
#[derive(Debug, Clone)]
pub struct Attribution {
    pub method: AttributionMethod,
    pub target: EfLabel,
    /// Min-max normalized to [0, 1]; all zeros when degenerate.
    pub normalized: Array2<f64>,
    /// The values before normalization.
    pub raw: Array2<f64>,
    /// True when the raw map was constant and carries no signal.
    pub degenerate: bool,
}

fn normalize(raw: Array2<f64>, method: AttributionMethod, target: EfLabel) -> Attribution {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let degenerate = !(span.is_finite() && span > 0.0);
    let normalized = if degenerate {
        Array2::zeros(raw.dim())
    } else {
        raw.mapv(|v| (v - min) / span)
    };
    Attribution {
        method,
        target,
        normalized,
        raw,
        degenerate,
    }
}

/// Vanilla gradient saliency: |d score / d pixel|, reduced over channels by
/// the maximum.
pub fn saliency<F: Scalar>(
    model: &Model<F>,
    image: &Image<F>,
    target: EfLabel,
) -> Result<Attribution> {
    let pass = model.attribution_pass(image, target)?;
    let (c, h, w) = pass.input_gradient.dim();
    let raw = Array2::from_shape_fn((h, w), |(y, x)| {
        (0..c)
            .map(|ch| pass.input_gradient[[ch, y, x]].as_f64().abs())
            .fold(0.0, f64::max)
    });
    Ok(normalize(raw, AttributionMethod::Saliency, target))
}

pub struct GradCam {
    pub attribution: Attribution,
    /// The class-activation map at feature-map resolution, before ReLU's
    /// complement is discarded by upsampling — i.e. post-ReLU, pre-resize.
    pub coarse: Array2<f64>,
}

/// Grad-CAM: channel weights are the spatial means of the feature-map
/// gradient; the map is the ReLU of the weighted activation sum, upsampled
/// bilinearly to input resolution.
pub fn grad_cam<F: Scalar>(
    model: &Model<F>,
    image: &Image<F>,
    target: EfLabel,
) -> Result<GradCam> {
    let pass = model.attribution_pass(image, target)?;
    let (raw, coarse) = grad_cam_from_parts(
        &pass.last_conv_activations.mapv(|v| v.as_f64()),
        &pass.last_conv_gradient.mapv(|v| v.as_f64()),
        (image.height(), image.width()),
    );
    Ok(GradCam {
        attribution: normalize(raw, AttributionMethod::GradCam, target),
        coarse,
    })
}

/// The Grad-CAM reduction itself: per-channel weights are the spatial means
/// of `gradients`, the coarse map is the ReLU of the weighted activation
/// sum, and the raw output is its bilinear upsampling to `out_hw`. Returns
/// (upsampled raw map, coarse map).
pub fn grad_cam_from_parts(
    activations: &Array3<f64>,
    gradients: &Array3<f64>,
    out_hw: (usize, usize),
) -> (Array2<f64>, Array2<f64>) {
    let (c, fh, fw) = activations.dim();
    let area = (fh * fw) as f64;
    let weights: Vec<f64> = (0..c)
        .map(|ch| {
            let mut sum = 0.0;
            for y in 0..fh {
                for x in 0..fw {
                    sum += gradients[[ch, y, x]];
                }
            }
            sum / area
        })
        .collect();
    let coarse = Array2::from_shape_fn((fh, fw), |(y, x)| {
        let mut v = 0.0;
        for ch in 0..c {
            v += weights[ch] * activations[[ch, y, x]];
        }
        v.max(0.0)
    });
    let coarse3 = Array3::from_shape_fn((fh, fw, 1), |(y, x, _)| coarse[[y, x]]);
    let up = resize_bilinear_array(&coarse3, out_hw.0, out_hw.1);
    let raw = Array2::from_shape_fn(out_hw, |(y, x)| up[[y, x, 0]]);
    (raw, coarse)
}

pub fn compute_attribution<F: Scalar>(
    model: &Model<F>,
    image: &Image<F>,
    target: EfLabel,
    method: AttributionMethod,
) -> Result<Attribution> {
    match method {
        AttributionMethod::Saliency => saliency(model, image, target),
        AttributionMethod::GradCam => Ok(grad_cam(model, image, target)?.attribution),
    }
}

/// Misclassified studies ranked by confidence of the wrong call:
/// |p - 0.5| descending, ties broken by study id. At most `k` results.
pub fn select_error_cases(records: &[PredictionRecord], k: usize) -> Vec<PredictionRecord> {
    let mut errors: Vec<&PredictionRecord> =
        records.iter().filter(|r| !r.is_correct()).collect();
    errors.sort_by(|a, b| {
        let ca = (a.p_reduced - 0.5).abs();
        let cb = (b.p_reduced - 0.5).abs();
        cb.partial_cmp(&ca)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.study_id.cmp(&b.study_id))
    });
    errors.into_iter().take(k).cloned().collect()
}

/// Cases picked for figure rendering, one list per outcome group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSelection {
    pub correct: Vec<PredictionRecord>,
    pub false_positive: Vec<PredictionRecord>,
    pub false_negative: Vec<PredictionRecord>,
}

impl CaseSelection {
    pub fn total(&self) -> usize {
        self.correct.len() + self.false_positive.len() + self.false_negative.len()
    }
}

/// Up to `k` cases from each of the correct / false-positive /
/// false-negative groups, each ranked by |p - 0.5| descending with ties
/// broken by study id.
pub fn select_cases(records: &[PredictionRecord], k: usize) -> CaseSelection {
    let pick = |filter: &dyn Fn(&PredictionRecord) -> bool| {
        let mut group: Vec<&PredictionRecord> = records.iter().filter(|r| filter(r)).collect();
        group.sort_by(|a, b| {
            let ca = (a.p_reduced - 0.5).abs();
            let cb = (b.p_reduced - 0.5).abs();
            cb.partial_cmp(&ca)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.study_id.cmp(&b.study_id))
        });
        group.into_iter().take(k).cloned().collect::<Vec<_>>()
    };
    CaseSelection {
        correct: pick(&|r| r.is_correct()),
        false_positive: pick(&|r| {
            r.predicted == EfLabel::ReducedEF && r.truth == EfLabel::PreservedEF
        }),
        false_negative: pick(&|r| {
            r.predicted == EfLabel::PreservedEF && r.truth == EfLabel::ReducedEF
        }),
    }
}

/// Inferno-like colormap: dark violet through red-orange to bright yellow.
/// Anchors every eighth of the range, interpolated linearly.
pub fn colormap(v: f64) -> [f64; 3] {
    const ANCHORS: [[f64; 3]; 9] = [
        [0.001, 0.000, 0.014],
        [0.133, 0.047, 0.294],
        [0.329, 0.071, 0.431],
        [0.510, 0.133, 0.420],
        [0.690, 0.212, 0.333],
        [0.843, 0.337, 0.220],
        [0.945, 0.514, 0.098],
        [0.980, 0.729, 0.145],
        [0.988, 0.998, 0.645],
    ];
    let v = v.clamp(0.0, 1.0);
    let pos = v * (ANCHORS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(ANCHORS.len() - 2);
    let t = pos - i as f64;
    let lo = ANCHORS[i];
    let hi = ANCHORS[i + 1];
    [
        lo[0] + t * (hi[0] - lo[0]),
        lo[1] + t * (hi[1] - lo[1]),
        lo[2] + t * (hi[2] - lo[2]),
    ]
}

/// Three-panel figure: the grayscale input, the colormapped attribution,
/// and their blend at opacity `alpha`. Returned as H x 3W x 3 in [0, 1].
pub fn render_overlay<F: Scalar>(
    image: &Image<F>,
    attribution: &Attribution,
    alpha: f64,
) -> Result<Array3<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let (h, w) = (image.height(), image.width());
    if attribution.normalized.dim() != (h, w) {
        return Err(Error::Shape {
            expected: format!("{h}x{w} attribution"),
            got: format!("{:?}", attribution.normalized.dim()),
        });
    }
    let gray = image.to_gray();
    let mut out = Array3::zeros((h, 3 * w, 3));
    for y in 0..h {
        for x in 0..w {
            let g = gray[[y, x]].as_f64();
            let heat = colormap(attribution.normalized[[y, x]]);
            for c in 0..3 {
                out[[y, x, c]] = g;
                out[[y, w + x, c]] = heat[c];
                out[[y, 2 * w + x, c]] = (1.0 - alpha) * g + alpha * heat[c];
            }
        }
    }
    Ok(out)
}

pub fn save_overlay_png(path: &Path, overlay: &Array3<f64>) -> Result<()> {
    let (h, w, c) = overlay.dim();
    if c != 3 {
        return Err(Error::Shape {
            expected: "3-channel overlay".into(),
            got: format!("{c} channels"),
        });
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (overlay[[y, x, 0]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (overlay[[y, x, 1]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (overlay[[y, x, 2]].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    save_to(path, |p| img.save(p))
}

/// Sidecar metadata stored next to each attribution map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMeta {
    pub study_id: String,
    pub method: AttributionMethod,
    pub target: EfLabel,
    pub p_reduced: f64,
    pub truth: EfLabel,
    pub raw_min: f64,
    pub raw_max: f64,
    pub degenerate: bool,
    pub height: usize,
    pub width: usize,
}

impl AttributionMeta {
    pub fn new(record: &PredictionRecord, attribution: &Attribution) -> Self {
        let raw_min = attribution.raw.iter().copied().fold(f64::INFINITY, f64::min);
        let raw_max = attribution
            .raw
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let (height, width) = attribution.normalized.dim();
        Self {
            study_id: record.study_id.clone(),
            method: attribution.method,
            target: attribution.target,
            p_reduced: record.p_reduced,
            truth: record.truth,
            raw_min,
            raw_max,
            degenerate: attribution.degenerate,
            height,
            width,
        }
    }
}

/// Write the normalized map as 16-bit grayscale PNG plus a JSON sidecar at
/// `<path>.json`.
pub fn save_attribution(path: &Path, attribution: &Attribution, meta: &AttributionMeta) -> Result<()> {
    let (h, w) = attribution.normalized.dim();
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (attribution.normalized[[y, x]].clamp(0.0, 1.0) * 65535.0).round() as u16;
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    save_to(path, |p| img.save(p))?;
    let sidecar = path.with_extension("png.json");
    let json = serde_json::to_vec_pretty(meta)
        .map_err(|e| Error::Invalid(format!("sidecar serialization: {e}")))?;
    crate::cohort::write_atomic(&sidecar, &json)
}

fn save_to(
    path: &Path,
    f: impl FnOnce(&Path) -> std::result::Result<(), image::ImageError>,
) -> Result<()> {
    f(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
