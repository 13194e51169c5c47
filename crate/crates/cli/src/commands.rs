use std::fs;
use std::path::{Path, PathBuf};

use eitphys::nets::{Model, Variant};
use eitphys::phantom::{
    build_dataset, read_dataset, split, write_dataset, Record, RecordKey, Split, TaskSpec,
};
use eitphys::sigproc::{align_records, segment_svg, MetricsReport, VisualRating};
use eitphys::training::{
    log_csv, model_config_for, report_from_scores, score_segments, test_segments, train, Checkpoint, TrainConfig,
    TrainData,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const DATASET_DIR: &str = "dataset";
pub const ALIGNED_DIR: &str = "aligned";
pub const RUNS_DIR: &str = "runs";
pub const PLOTS_DIR: &str = "plots";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "train_log.csv";
pub const PREDICTIONS_FILE: &str = "predictions.json";

/// Empties `dir` when `force` is set and refuses to touch a non-empty one otherwise.
fn prepare_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.is_dir() && fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.next().is_some() {
        if !force {
            return Err(CliError::Refused(format!("{} exists and is not empty (use --force to overwrite)", dir.display())));
        }
        fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn prepare_file(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Refused(format!("{} exists (use --force to overwrite)", path.display())));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn run_name(cfg: &ExperimentConfig, variant: Variant) -> String {
    format!("{}-{}", cfg.train.task, variant)
}

fn run_dir(cfg: &ExperimentConfig, variant: Variant) -> PathBuf {
    cfg.out.join(RUNS_DIR).join(run_name(cfg, variant))
}

pub fn generate(cfg: &ExperimentConfig, force: bool) -> Result<usize, CliError> {
    let dir = cfg.out.join(DATASET_DIR);
    prepare_dir(&dir, force)?;
    let ds = build_dataset(&cfg.cohort)?;
    write_dataset(&cfg.cohort, &ds.records, false, &dir)?;
    println!("generated {} records ({} patients) in {}", ds.records.len(), cfg.cohort.patients, dir.display());
    Ok(ds.records.len())
}

pub fn align(cfg: &ExperimentConfig, force: bool) -> Result<usize, CliError> {
    let src = cfg.out.join(DATASET_DIR);
    let (manifest, records) = read_dataset(&src)?;
    let dir = cfg.out.join(ALIGNED_DIR);
    prepare_dir(&dir, force)?;
    let mut aligned = Vec::with_capacity(records.len());
    for rec in &records {
        let a = align_records(rec)?;
        if let Some(info) = &a.alignment {
            log::info!("{}: lags {:?}, residual {:?}", a.name(), info.estimated, info.residual);
        }
        aligned.push(a);
    }
    write_dataset(&manifest.cohort, &aligned, true, &dir)?;
    println!("aligned {} records into {}", aligned.len(), dir.display());
    Ok(aligned.len())
}

/// Aligned records and the configured split over them.
fn load_aligned(cfg: &ExperimentConfig) -> Result<(Vec<Record>, Split), CliError> {
    let dir = cfg.out.join(ALIGNED_DIR);
    if !dir.join("manifest.json").is_file() {
        return Err(CliError::Refused(format!("{} holds no aligned dataset; run `generate` and `align` first", dir.display())));
    }
    let (manifest, records) = read_dataset(&dir)?;
    let keys: Vec<RecordKey> = records.iter().map(RecordKey::of).collect();
    let s = split(&keys, cfg.split, manifest.cohort.seed)?;
    Ok((records, s))
}

fn train_config(cfg: &ExperimentConfig, variant: Variant) -> TrainConfig {
    TrainConfig { variant, ..cfg.train.clone() }
}

pub fn train_all(cfg: &ExperimentConfig, force: bool) -> Result<(), CliError> {
    let (records, s) = load_aligned(cfg)?;
    log::info!("{} training and {} test records", s.train.len(), s.test.len());
    for variant in cfg.variants() {
        let tc = train_config(cfg, variant);
        let spec = tc.task_spec()?;
        let dir = run_dir(cfg, variant);
        prepare_dir(&dir, force)?;
        let model = Model::new(model_config_for(&cfg.model, &spec), tc.seed).map_err(|e| CliError::Config(e.to_string()))?;
        let held_out = if tc.eval_every > 0 { test_segments(&records, &s.test, &spec) } else { Vec::new() };
        let name = run_name(cfg, variant);
        let outcome = train(model, &TrainData::Records { records: &records, indices: &s.train }, &spec, &tc, &held_out, |row| {
            if row.step % 10 == 0 {
                log::info!("{name} step {} epoch {} lr {:.2e} loss {:.4}", row.step, row.epoch, row.lr, row.loss);
            }
        })?;
        write(&dir.join(LOG_FILE), log_csv(&outcome.history))?;
        Checkpoint::from_outcome(outcome, tc).save(&dir)?;
        println!("trained {name} into {}", dir.display());
    }
    Ok(())
}

/// One scored test segment as stored for plotting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Prediction {
    pub record: String,
    pub start: usize,
    pub rating: VisualRating,
    pub rmse: f64,
    pub dtw: f64,
    pub target: Vec<f64>,
    pub prediction: Vec<f64>,
}

#[derive(Serialize)]
struct RunSummary {
    name: String,
    variant: Variant,
    steps: usize,
    final_train_loss: Option<f64>,
    test_segments: usize,
}

#[derive(Serialize)]
struct Summary<'a> {
    task: String,
    split: String,
    train_records: usize,
    test_records: usize,
    runs: Vec<RunSummary>,
    metrics: &'a MetricsReport,
    config: &'a ExperimentConfig,
}

pub fn eval(cfg: &ExperimentConfig, force: bool) -> Result<MetricsReport, CliError> {
    let metrics_path = cfg.out.join(METRICS_FILE);
    let summary_path = cfg.out.join(SUMMARY_FILE);
    prepare_file(&metrics_path, force)?;
    prepare_file(&summary_path, force)?;
    let (records, s) = load_aligned(cfg)?;
    let split_name = match cfg.split {
        eitphys::phantom::SplitScheme::IntraPatient => "intra-patient",
        eitphys::phantom::SplitScheme::InterPatient => "inter-patient",
    };
    let mut report = MetricsReport::default();
    let mut runs = Vec::new();
    for variant in cfg.variants() {
        let dir = run_dir(cfg, variant);
        if !dir.join(eitphys::training::MODEL_FILE).is_file() {
            return Err(CliError::Refused(format!("{} holds no checkpoint; run `train` first", dir.display())));
        }
        let ckpt = Checkpoint::load(&dir)?;
        let spec = TaskSpec::new(cfg.train.task, variant)?;
        if ckpt.config.task != spec.task || ckpt.config.variant != variant {
            return Err(CliError::Config(format!(
                "checkpoint in {} was trained for {} {}, not {} {}",
                dir.display(),
                ckpt.config.task,
                ckpt.config.variant,
                spec.task,
                variant
            )));
        }
        let segments = test_segments(&records, &s.test, &spec);
        let scored = score_segments(&ckpt.model, &segments, &spec, cfg.eval_batch_size)?;
        let predictions: Vec<Prediction> = scored
            .iter()
            .map(|p| Prediction {
                record: records[p.record].name(),
                start: p.start,
                rating: p.score.rating,
                rmse: p.score.rmse,
                dtw: p.score.dtw,
                target: p.target.clone(),
                prediction: p.prediction.clone(),
            })
            .collect();
        write(&dir.join(PREDICTIONS_FILE), serde_json::to_vec(&predictions).expect("predictions serialize"))?;
        report.extend(report_from_scores(&scored, &spec, split_name));
        runs.push(RunSummary {
            name: run_name(cfg, variant),
            variant,
            steps: ckpt.history.len(),
            final_train_loss: ckpt.history.last().map(|r| r.loss),
            test_segments: segments.len(),
        });
    }
    write(&metrics_path, report.to_csv())?;
    let summary = Summary {
        task: cfg.train.task.to_string(),
        split: split_name.into(),
        train_records: s.train.len(),
        test_records: s.test.len(),
        runs,
        metrics: &report,
        config: cfg,
    };
    write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    print!("{}", report.to_csv());
    Ok(report)
}

/// One target-vs-prediction plot per rating class and run, from the first
/// test segment that received it.
pub fn report(cfg: &ExperimentConfig, force: bool) -> Result<usize, CliError> {
    let plots = cfg.out.join(PLOTS_DIR);
    prepare_dir(&plots, force)?;
    let unit = TaskSpec::new(cfg.train.task, cfg.train.variant).map(|s| s.primary().unit()).unwrap_or("");
    let mut written = 0;
    for variant in cfg.variants() {
        let name = run_name(cfg, variant);
        let path = run_dir(cfg, variant).join(PREDICTIONS_FILE);
        let text = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        let predictions: Vec<Prediction> =
            serde_json::from_slice(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        for (rating, label) in [(VisualRating::Plus, "plus"), (VisualRating::Circle, "circle"), (VisualRating::Minus, "minus")] {
            if let Some(p) = predictions.iter().find(|p| p.rating == rating) {
                let title = format!("{name} {} @ {}", p.record, p.start);
                write(&plots.join(format!("{name}-{label}.svg")), segment_svg(&title, unit, &p.target, &p.prediction, rating))?;
                written += 1;
            }
        }
    }
    println!("wrote {written} plots to {}", plots.display());
    Ok(written)
}

/// generate, align, train, eval and report in one go.
pub fn run(cfg: &ExperimentConfig, force: bool) -> Result<MetricsReport, CliError> {
    let config_path = cfg.out.join(CONFIG_FILE);
    prepare_file(&config_path, force)?;
    write(&config_path, cfg.to_toml())?;
    generate(cfg, force)?;
    align(cfg, force)?;
    train_all(cfg, force)?;
    let report = eval(cfg, force)?;
    self::report(cfg, force)?;
    Ok(report)
}
