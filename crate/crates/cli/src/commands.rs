//! The five pipeline stages. Every command loads the run config, locks the
//! run directory, records a run manifest (config snapshot, seeds, input
//! digests) before writing stage outputs, and releases the lock on exit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use efcxr_core::cohort::{
    self, check_leakage, generate_synthetic_cohort, read_icd_map, read_manifest,
    read_metadata_rows, read_split, split_cohort, write_manifest, write_split, CohortManifest,
    DemographicsSummary, SplitAssignment, Split,
};
use efcxr_core::config::{sha256_file, RunConfig, RunManifest};
use efcxr_core::evaluation::{
    evaluation_report, predict_samples, read_predictions, render_report, write_predictions, Facet,
};
use efcxr_core::explain::{
    compute_attribution, render_overlay, save_attribution, save_overlay_png, select_cases,
    AttributionMeta, AttributionMethod,
};
use efcxr_core::imaging::{load_and_normalize, AugmentationPolicy};
use efcxr_core::models::{load_checkpoint, save_checkpoint, BackboneKind, Model, ModelConfig};
use efcxr_core::training::{self, load_split_samples, write_history, Sample};
use efcxr_core::{Error, Result};

type Elem = efcxr_core::DefaultElem;

/// Holds the run-directory lock; removed on drop.
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Invalid(format!(
                "run directory `{}` is locked by another command; remove `{}` if stale",
                run_dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

struct RunContext {
    config: RunConfig,
    run_dir: PathBuf,
    config_path: PathBuf,
    _lock: LockGuard,
}

fn open_run(config_path: &Path, seed_override: Option<u64>) -> Result<RunContext> {
    if !config_path.is_file() {
        return Err(Error::Invalid(format!(
            "config file `{}` does not exist",
            config_path.display()
        )));
    }
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let run_dir = config.output_dir();
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let lock = LockGuard::acquire(&run_dir)?;
    Ok(RunContext {
        config,
        run_dir,
        config_path: config_path.to_path_buf(),
        _lock: lock,
    })
}

impl RunContext {
    /// Snapshot the config and write the run manifest; called before any
    /// stage output lands in the directory.
    fn record(&self, inputs: &[&Path]) -> Result<()> {
        let mut digests = BTreeMap::new();
        digests.insert(
            self.config_path.display().to_string(),
            sha256_file(&self.config_path)?,
        );
        for input in inputs {
            if input.is_file() {
                digests.insert(input.display().to_string(), sha256_file(input)?);
            }
        }
        fs::write(
            self.run_dir.join("config.toml"),
            self.config.to_toml_string()?,
        )
        .map_err(|e| Error::io(self.run_dir.join("config.toml"), e))?;
        RunManifest::new(&self.config, digests).write(&self.run_dir.join("run.json"))
    }

    fn require_file(&self, path: &Path, what: &str) -> Result<()> {
        if path.is_file() {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "missing {what}: `{}` (run the producing stage first)",
                path.display()
            )))
        }
    }

    /// Directory image_refs resolve against.
    fn image_root(&self) -> PathBuf {
        match &self.config.cohort.source {
            Some(source) => source.image_root.clone(),
            None => self.run_dir.clone(),
        }
    }

    fn load_samples(
        &self,
        model_config: &ModelConfig,
        split: Split,
    ) -> Result<(CohortManifest, SplitAssignment, Vec<Sample<Elem>>)> {
        let manifest_path = self.run_dir.join("manifest.csv");
        let split_path = self.run_dir.join("split.csv");
        self.require_file(&manifest_path, "cohort manifest")?;
        self.require_file(&split_path, "split file")?;
        let manifest = read_manifest(&manifest_path)?;
        let assignment = read_split(&split_path)?;
        let samples = load_split_samples(
            &manifest,
            &assignment,
            split,
            &self.image_root(),
            model_config.input_size,
            model_config.backbone.in_channels(),
        )?;
        Ok((manifest, assignment, samples))
    }
}

fn parse_synthetic_overrides(ctx: &mut RunContext, pairs: &[String]) -> Result<()> {
    let mut synthetic = ctx.config.cohort.synthetic.clone().unwrap_or_default();
    for pair in pairs {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("expected KEY=VALUE in --synthetic, got `{pair}`"))
        })?;
        let bad = |what: &str| Error::Config(format!("bad {what} `{value}` in --synthetic"));
        match key {
            "n" => synthetic.n = value.parse().map_err(|_| bad("n"))?,
            "class_signal" => {
                synthetic.class_signal = value.parse().map_err(|_| bad("class_signal"))?
            }
            "image_size" => synthetic.image_size = value.parse().map_err(|_| bad("image_size"))?,
            "seed" => ctx.config.seed = value.parse().map_err(|_| bad("seed"))?,
            other => return Err(Error::Config(format!("unknown --synthetic key `{other}`"))),
        }
    }
    ctx.config.cohort.synthetic = Some(synthetic);
    ctx.config.cohort.source = None;
    ctx.config.validate()
}

pub fn cohort_build(
    config_path: &Path,
    seed: Option<u64>,
    synthetic: Option<&[String]>,
) -> Result<()> {
    let mut ctx = open_run(config_path, seed)?;
    if let Some(pairs) = synthetic {
        parse_synthetic_overrides(&mut ctx, pairs)?;
    }

    let (manifest, conflicts) = if let Some(section) = ctx.config.cohort.synthetic.clone() {
        ctx.record(&[])?;
        let params = section.to_params(ctx.config.stage_seed("cohort"));
        let (manifest, _truth) = generate_synthetic_cohort(&params, &ctx.run_dir)?;
        (manifest, 0usize)
    } else {
        let source = ctx.config.cohort.source.clone().expect("validated source");
        ctx.require_file(&source.metadata_csv, "metadata CSV")?;
        ctx.require_file(&source.icd_map, "ICD label map")?;
        ctx.record(&[&source.metadata_csv, &source.icd_map])?;
        let rows = read_metadata_rows(&source.metadata_csv)?;
        let icd_map = read_icd_map(&source.icd_map)?;
        cohort::build_cohort(&rows, &icd_map)?
    };

    write_manifest(&manifest, &ctx.run_dir.join("manifest.csv"))?;
    let demographics = cohort::summarize_demographics(&manifest)?;
    let json = serde_json::to_vec_pretty(&demographics)
        .map_err(|e| Error::Invalid(format!("demographics serialization: {e}")))?;
    cohort::write_atomic(&ctx.run_dir.join("demographics.json"), &json)?;
    let table = render_demographics(&demographics, conflicts);
    cohort::write_atomic(&ctx.run_dir.join("demographics.txt"), table.as_bytes())?;

    let (reduced, preserved) = manifest.label_counts();
    println!(
        "cohort: {} studies ({reduced} reduced / {preserved} preserved), {conflicts} conflicting-code studies dropped",
        manifest.len()
    );
    print!("{table}");
    Ok(())
}

fn render_demographics(d: &DemographicsSummary, conflicts: usize) -> String {
    let mut out = String::new();
    out.push_str(&format!("total studies: {}\n", d.total));
    if conflicts > 0 {
        out.push_str(&format!("dropped for conflicting codes: {conflicts}\n"));
    }
    match (d.age_median, d.age_iqr) {
        (Some(median), Some((q1, q3))) => out.push_str(&format!(
            "age: median {median:.0} (IQR {q1:.0}-{q3:.0})\n"
        )),
        _ => out.push_str("age: unavailable\n"),
    }
    for (title, facet) in [
        ("label", &d.by_label),
        ("sex", &d.by_sex),
        ("race/ethnicity", &d.by_race),
    ] {
        out.push_str(&format!("\n{title}:\n"));
        for (name, count, pct) in &facet.entries {
            out.push_str(&format!("  {name:<28} {count:>6}  {pct:>5.1}%\n"));
        }
    }
    if d.unrecognized_race_count > 0 {
        out.push_str(&format!(
            "\nnote: {} records had unrecognized race strings (folded into Other)\n",
            d.unrecognized_race_count
        ));
    }
    out
}

pub fn split(config_path: &Path, seed: Option<u64>) -> Result<()> {
    let ctx = open_run(config_path, seed)?;
    let manifest_path = ctx.run_dir.join("manifest.csv");
    ctx.require_file(&manifest_path, "cohort manifest")?;
    ctx.record(&[&manifest_path])?;

    let manifest = read_manifest(&manifest_path)?;
    let assignment = split_cohort(
        &manifest,
        ctx.config.split.fractions(),
        ctx.config.stage_seed("split"),
    )?;
    let leakage = check_leakage(&assignment, &manifest)?;
    write_split(&assignment, &ctx.run_dir.join("split.csv"))?;
    let json = serde_json::to_vec_pretty(&leakage)
        .map_err(|e| Error::Invalid(format!("leakage serialization: {e}")))?;
    cohort::write_atomic(&ctx.run_dir.join("leakage.json"), &json)?;

    let (tr, va, te) = assignment.realized_fractions();
    println!(
        "split: {} train / {} val / {} test (realized {:.3}/{:.3}/{:.3})",
        assignment.count(Split::Train),
        assignment.count(Split::Val),
        assignment.count(Split::Test),
        tr,
        va,
        te
    );
    if !leakage.is_clean() {
        return Err(Error::Invalid(format!(
            "patient leakage across splits: {} patients, {} duplicated image refs",
            leakage.cross_split_patients.len(),
            leakage.cross_split_image_refs.len()
        )));
    }
    println!("leakage check: clean");
    Ok(())
}

pub fn train(
    config_path: &Path,
    seed: Option<u64>,
    arch: Option<&str>,
    augment: Option<&str>,
) -> Result<()> {
    let mut ctx = open_run(config_path, seed)?;
    if let Some(arch) = arch {
        let backbone = BackboneKind::parse(arch)?;
        ctx.config.model.backbone = backbone;
        ctx.config.model.input_size = backbone.default_input_size();
    }
    match augment {
        Some("on") => {
            ctx.config.train.augmentation.rotation_enabled = true;
            ctx.config.train.augmentation.crop_enabled = true;
        }
        Some("off") => ctx.config.train.augmentation = AugmentationPolicy::disabled(),
        _ => {}
    }
    ctx.config.train.seed = ctx.config.stage_seed("train");
    ctx.config.validate()?;

    let manifest_path = ctx.run_dir.join("manifest.csv");
    let split_path = ctx.run_dir.join("split.csv");
    ctx.record(&[&manifest_path, &split_path])?;

    let model_config = ctx.config.model.clone();
    let (_, _, train_set) = ctx.load_samples(&model_config, Split::Train)?;
    let (_, _, val_set) = ctx.load_samples(&model_config, Split::Val)?;
    println!(
        "training {} on {} studies ({} validation)",
        model_config.backbone.as_str(),
        train_set.len(),
        val_set.len()
    );

    let mut model: Model<Elem> =
        Model::build(&model_config, ctx.config.stage_seed("model-init"))?;
    let report = model.parameter_report();
    println!(
        "parameters: {} total, {} trainable{}",
        report.total,
        report.trainable,
        report.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default()
    );

    let best_path = ctx.run_dir.join("best.ckpt");
    let last_path = ctx.run_dir.join("last.ckpt");
    let history_path = ctx.run_dir.join("history.csv");
    let mut history = Vec::new();
    let result = training::train(
        &mut model,
        &train_set,
        &val_set,
        &ctx.config.train,
        |record, model, is_best| {
            println!(
                "epoch {:>3}: train {:.4}  val {:.4}  acc {:.3}  lr {}{}",
                record.epoch,
                record.train_loss,
                record.val_loss,
                record.val_acc,
                record.lr,
                if is_best { "  *" } else { "" }
            );
            if is_best {
                let extra = serde_json::json!({
                    "epoch": record.epoch,
                    "val_loss": record.val_loss,
                });
                save_checkpoint(&best_path, model, None, &extra)?;
            }
            history.push(record.clone());
            write_history(&history_path, &history)
        },
    );
    let output = match result {
        Ok(output) => output,
        Err(e) => {
            // Keep whatever history was written, but flag the run.
            cohort::write_atomic(
                &ctx.run_dir.join("ABORTED"),
                format!("{e}\n").as_bytes(),
            )?;
            return Err(e);
        }
    };
    let extra = serde_json::json!({
        "epoch": output.history.len(),
        "best_epoch": output.best_epoch,
        "best_val_loss": output.best_val_loss,
    });
    save_checkpoint(&last_path, &model, None, &extra)?;
    println!(
        "done: best epoch {} (val loss {:.4}); wrote {}, {}, {}",
        output.best_epoch,
        output.best_val_loss,
        history_path.display(),
        best_path.display(),
        last_path.display()
    );
    Ok(())
}

fn parse_facets(spec: &str) -> Result<Vec<Facet>> {
    spec.split(',')
        .map(|s| Facet::parse(s))
        .collect::<Result<Vec<_>>>()
}

pub fn evaluate(
    config_path: &Path,
    seed: Option<u64>,
    checkpoint: Option<&Path>,
    subgroups: Option<&str>,
) -> Result<()> {
    let mut ctx = open_run(config_path, seed)?;
    if let Some(spec) = subgroups {
        ctx.config.evaluate.subgroups = parse_facets(spec)?;
    }
    let checkpoint_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.run_dir.join("best.ckpt"));
    ctx.require_file(&checkpoint_path, "checkpoint")?;
    let manifest_path = ctx.run_dir.join("manifest.csv");
    let split_path = ctx.run_dir.join("split.csv");
    ctx.record(&[&manifest_path, &split_path, &checkpoint_path])?;

    let bundle = load_checkpoint::<Elem>(&checkpoint_path)?;
    let mut model = bundle.model;
    model.set_eval();
    let (manifest, _, test_set) = ctx.load_samples(model.config(), Split::Test)?;
    if test_set.is_empty() {
        return Err(Error::Invalid(
            "test split is empty; nothing to evaluate".into(),
        ));
    }

    let records = predict_samples(&model, &test_set, ctx.config.evaluate.batch_size)?;
    let report = evaluation_report(&records, &manifest, &ctx.config.evaluate.subgroups)?;
    write_predictions(&ctx.run_dir.join("predictions.csv"), &records)?;
    let json = serde_json::to_vec_pretty(&report)
        .map_err(|e| Error::Invalid(format!("metrics serialization: {e}")))?;
    cohort::write_atomic(&ctx.run_dir.join("metrics.json"), &json)?;
    let rendered = render_report(&report);
    cohort::write_atomic(&ctx.run_dir.join("metrics.txt"), rendered.as_bytes())?;
    print!("{rendered}");
    Ok(())
}

fn parse_methods(spec: &str) -> Result<Vec<AttributionMethod>> {
    spec.split(',')
        .map(AttributionMethod::parse)
        .collect::<Result<Vec<_>>>()
}

pub fn explain(
    config_path: &Path,
    seed: Option<u64>,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    k: Option<usize>,
    methods: Option<&str>,
) -> Result<()> {
    let mut ctx = open_run(config_path, seed)?;
    if let Some(k) = k {
        ctx.config.explain.k = k;
    }
    if let Some(spec) = methods {
        ctx.config.explain.methods = parse_methods(spec)?;
    }
    ctx.config.validate()?;
    let checkpoint_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.run_dir.join("best.ckpt"));
    let predictions_path = predictions
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.run_dir.join("predictions.csv"));
    ctx.require_file(&checkpoint_path, "checkpoint")?;
    ctx.require_file(&predictions_path, "predictions file")?;
    let manifest_path = ctx.run_dir.join("manifest.csv");
    ctx.require_file(&manifest_path, "cohort manifest")?;
    ctx.record(&[&manifest_path, &checkpoint_path, &predictions_path])?;

    let bundle = load_checkpoint::<Elem>(&checkpoint_path)?;
    let mut model = bundle.model;
    model.set_eval();
    let manifest = read_manifest(&manifest_path)?;
    let records = read_predictions(&predictions_path)?;
    let selection = select_cases(&records, ctx.config.explain.k);

    let figures_dir = ctx.run_dir.join("figures");
    fs::create_dir_all(&figures_dir).map_err(|e| Error::io(&figures_dir, e))?;
    let selection_json = serde_json::to_vec_pretty(&selection)
        .map_err(|e| Error::Invalid(format!("selection serialization: {e}")))?;
    cohort::write_atomic(&figures_dir.join("selection.json"), &selection_json)?;

    let image_root = ctx.image_root();
    let mut rendered = 0usize;
    let mut degenerate = 0usize;
    for (group, cases) in [
        ("correct", &selection.correct),
        ("false_positive", &selection.false_positive),
        ("false_negative", &selection.false_negative),
    ] {
        if cases.is_empty() {
            continue;
        }
        let group_dir = figures_dir.join(group);
        fs::create_dir_all(&group_dir).map_err(|e| Error::io(&group_dir, e))?;
        for case in cases {
            let record = manifest
                .record(&case.study_id)
                .ok_or_else(|| Error::UnknownStudy(case.study_id.clone()))?;
            let image = load_and_normalize::<Elem>(
                &cohort::resolve_ref(&image_root, &record.image_ref),
                model.config().input_size,
                model.config().backbone.in_channels(),
            )?;
            // Attribute the score the model actually asserted.
            let target = case.predicted;
            for method in &ctx.config.explain.methods {
                let attribution = compute_attribution(&model, &image, target, *method)?;
                if attribution.degenerate {
                    degenerate += 1;
                    eprintln!(
                        "warning: degenerate {} map for study {} (flat attribution)",
                        method.as_str(),
                        case.study_id
                    );
                }
                let stem = format!("{}.{}", case.study_id, method.as_str());
                let overlay = render_overlay(&image, &attribution, ctx.config.explain.alpha)?;
                save_overlay_png(&group_dir.join(format!("{stem}.png")), &overlay)?;
                let meta = AttributionMeta::new(case, &attribution);
                save_attribution(&group_dir.join(format!("{stem}.map.png")), &attribution, &meta)?;
                rendered += 1;
            }
        }
    }
    println!(
        "explain: {} composites across {} cases ({} correct / {} FP / {} FN), {} degenerate maps",
        rendered,
        selection.total(),
        selection.correct.len(),
        selection.false_positive.len(),
        selection.false_negative.len(),
        degenerate
    );
    Ok(())
}
