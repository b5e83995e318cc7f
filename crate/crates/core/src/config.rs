//! Declarative run configuration (TOML) and the run manifest written into
//! every output directory. Parsing is fail-closed: unknown keys are
//! rejected at every nesting level. All stage seeds derive from the single
//! top-level seed, recorded in the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::SyntheticParams;
use crate::error::{Error, Result};
use crate::evaluation::Facet;
use crate::explain::AttributionMethod;
use crate::models::ModelConfig;
use crate::rng::derive_seed;
use crate::training::TrainConfig;

/// Environment variable overriding the default output root (`out/`).
pub const OUTPUT_ROOT_ENV: &str = "EFCXR_OUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    /// Root under which `<run_id>/` is created. Falls back to the
    /// `EFCXR_OUT_ROOT` environment variable, then to `out`.
    #[serde(default)]
    pub output_root: Option<PathBuf>,
    /// Master seed; every stage's randomness derives from it.
    #[serde(default)]
    pub seed: u64,
    pub cohort: CohortConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
}

/// Exactly one of `source` (real metadata) or `synthetic` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Study metadata CSV with a semicolon-separated `icd_codes` column.
    pub metadata_csv: PathBuf,
    /// `code,label` CSV mapping ICD codes to reduced/preserved.
    pub icd_map: PathBuf,
    /// Directory image_refs resolve against.
    pub image_root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub class_signal: f64,
    pub image_size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 200,
            class_signal: 1.0,
            image_size: 32,
        }
    }
}

impl SyntheticConfig {
    pub fn to_params(&self, seed: u64) -> SyntheticParams {
        SyntheticParams {
            n: self.n,
            class_signal: self.class_signal,
            seed,
            image_size: self.image_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.65,
            val_fraction: 0.10,
            test_fraction: 0.25,
        }
    }
}

impl SplitConfig {
    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.train_fraction, self.val_fraction, self.test_fraction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub batch_size: usize,
    pub subgroups: Vec<Facet>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            subgroups: vec![Facet::RaceEthnicity, Facet::Sex],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    /// Cases rendered per outcome group (correct / FP / FN).
    pub k: usize,
    /// Heatmap opacity in the blended panel.
    pub alpha: f64,
    pub methods: Vec<AttributionMethod>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            k: 6,
            alpha: 0.4,
            methods: vec![AttributionMethod::Saliency, AttributionMethod::GradCam],
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config render: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::Config(format!(
                "run_id `{}` must be non-empty and use only [A-Za-z0-9_-]",
                self.run_id
            )));
        }
        match (&self.cohort.source, &self.cohort.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "cohort.source and cohort.synthetic are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "one of cohort.source or cohort.synthetic is required".into(),
                ))
            }
            _ => {}
        }
        let (tr, va, te) = self.split.fractions();
        for (name, v) in [("train", tr), ("val", va), ("test", te)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "split.{name}_fraction {v} outside [0, 1]"
                )));
            }
        }
        if ((tr + va + te) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {}, expected 1",
                tr + va + te
            )));
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.evaluate.batch_size == 0 {
            return Err(Error::Config("evaluate.batch_size must be at least 1".into()));
        }
        if self.explain.k == 0 {
            return Err(Error::Config("explain.k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.explain.alpha) {
            return Err(Error::Config(format!(
                "explain.alpha {} outside [0, 1]",
                self.explain.alpha
            )));
        }
        if self.explain.methods.is_empty() {
            return Err(Error::Config("explain.methods must not be empty".into()));
        }
        Ok(())
    }

    /// Stage seeds, all derived from the master seed.
    pub fn stage_seeds(&self) -> BTreeMap<String, u64> {
        let mut seeds = BTreeMap::new();
        for stage in ["cohort", "split", "train", "model-init"] {
            seeds.insert(stage.to_string(), derive_seed(self.seed, stage, 0));
        }
        seeds
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage, 0)
    }

    pub fn output_dir(&self) -> PathBuf {
        let root = self
            .output_root
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        root.join(&self.run_id)
    }
}

/// Provenance record written into the run directory before any stage
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub created_at: DateTime<Utc>,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 hex digest per declared input file.
    pub input_digests: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: &RunConfig, input_digests: BTreeMap<String, String>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: Utc::now(),
            seeds: config.stage_seeds(),
            config: config.clone(),
            input_digests,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        crate::cohort::write_atomic(path, &json)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("manifest parse: {e}")))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BackboneKind;

    const MINIMAL: &str = r#"
run_id = "demo"
seed = 7

[cohort.synthetic]
n = 50

[model]
backbone = "tiny_conv"
pretrained = "none"
input_size = [32, 32]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.run_id, "demo");
        assert_eq!(cfg.cohort.synthetic.as_ref().unwrap().n, 50);
        assert_eq!(cfg.cohort.synthetic.as_ref().unwrap().class_signal, 1.0);
        assert_eq!(cfg.split.fractions(), (0.65, 0.10, 0.25));
        assert_eq!(cfg.train.initial_lr, 0.001);
        assert_eq!(cfg.train.plateau_patience, 5);
        assert_eq!(cfg.model.backbone, BackboneKind::TinyConv);
        assert_eq!(cfg.explain.k, 6);
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        for bad in [
            MINIMAL.replace("seed = 7", "seed = 7\nbogus = 1"),
            MINIMAL.replace("n = 50", "n = 50\nbogus = 1"),
            MINIMAL.replace(
                "input_size = [32, 32]",
                "input_size = [32, 32]\nbogus = 1",
            ),
            format!("{MINIMAL}\n[train]\nbogus = 1\n"),
        ] {
            assert!(RunConfig::from_toml_str(&bad).is_err(), "accepted: {bad}");
        }
    }

    #[test]
    fn cohort_source_is_exclusive_and_required() {
        let both = format!(
            "{MINIMAL}\n[cohort.source]\nmetadata_csv = \"m.csv\"\nicd_map = \"i.csv\"\nimage_root = \"imgs\"\n"
        );
        assert!(RunConfig::from_toml_str(&both).is_err());
        let neither = MINIMAL.replace("[cohort.synthetic]\nn = 50", "[cohort]");
        assert!(RunConfig::from_toml_str(&neither).is_err());
    }

    #[test]
    fn bad_fractions_rejected() {
        let bad = format!("{MINIMAL}\n[split]\ntrain_fraction = 0.9\n");
        assert!(RunConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let rendered = cfg.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&rendered).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn stage_seeds_derive_from_master_seed() {
        let a = RunConfig::from_toml_str(MINIMAL).unwrap();
        let b = RunConfig::from_toml_str(&MINIMAL.replace("seed = 7", "seed = 8")).unwrap();
        assert_eq!(a.stage_seeds(), a.stage_seeds());
        for (stage, seed) in a.stage_seeds() {
            assert_ne!(seed, b.stage_seeds()[&stage]);
        }
        assert_ne!(a.stage_seed("split"), a.stage_seed("train"));
    }

    #[test]
    fn run_manifest_round_trips() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let mut digests = BTreeMap::new();
        digests.insert("config.toml".to_string(), "ab".repeat(32));
        let manifest = RunManifest::new(&cfg, digests);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        manifest.write(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), manifest);
    }

    #[test]
    fn sha256_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
