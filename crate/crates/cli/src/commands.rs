use std::cell::RefCell;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mseg_core::cohort::{generate_study, plan_cohort, stratified_split, CohortManifest, ManifestEntry, Split};
use mseg_core::io::{
    export_overlay, load_checkpoint, load_study, read_json, read_probability_map, save_checkpoint, save_study, write_json,
    write_probability_map, Checkpoint,
};
use mseg_core::metrics::{aggregate_report, calibrate_threshold, evaluate_patient, Connectivity, EvalSettings, PatientEval, Report};
use mseg_core::model::{build_modified_googlenet, predict_prepared};
use mseg_core::pipeline::PreparedStudy;
use mseg_core::train::{EpochStats, FrameSet, StepLog, Trainer};
use mseg_core::{Dims, MultiSequenceStudy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{invalid, CliError, CliResult};
use crate::{EvaluateArgs, GenCohortArgs, InferArgs, ReportArgs, SplitArgs, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PHANTOM_CONFIG_FILE: &str = "phantom_config.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

pub fn epoch_checkpoint(out: &Path, epoch: usize) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:03}.ckpt"))
}

/// Probability map location for a study in batch inference output.
pub fn prob_path(dir: &Path, study_id: &str) -> PathBuf {
    dir.join(format!("{study_id}.msvol"))
}

pub fn parse_dims(s: &str) -> CliResult<Dims> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let nums: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some(&[nx, ny, nz]) if nx > 0 && ny > 0 && nz > 0 => Ok(Dims::new(nx, ny, nz)),
        _ => invalid(format!("--dims must look like 64x64x32, got {s:?}")),
    }
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_manifest(path: &Path) -> CliResult<CohortManifest> {
    if !path.is_file() {
        return invalid(format!("manifest {} does not exist", path.display()));
    }
    let m: CohortManifest = read_json(path)?;
    m.validate()?;
    Ok(m)
}

fn load_entry(manifest: &Path, e: &ManifestEntry) -> CliResult<MultiSequenceStudy> {
    Ok(load_study(manifest_dir(manifest).join(&e.path), &e.study_id)?)
}

/// Writes `n_per_group` phantoms per subgroup under `out_dir/studies` plus
/// the manifest; returns the manifest path.
pub fn gen_cohort(args: &GenCohortArgs) -> CliResult<PathBuf> {
    let mut cfg = RunConfig::load(args.config.as_deref())?.phantom;
    if args.n_per_group == 0 {
        return invalid("--n-per-group must be at least 1");
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &args.dims {
        cfg.dims = parse_dims(d)?;
    }
    cfg.validate()?;
    let plan = plan_cohort(&cfg, args.n_per_group)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let entries: Vec<ManifestEntry> = plan
        .par_iter()
        .map(|(id, n, g)| {
            let study = generate_study(&cfg, id, *n)?;
            let rel = format!("studies/{id}");
            save_study(args.out_dir.join(&rel), &study)?;
            Ok(ManifestEntry {
                study_id: id.clone(),
                path: rel,
                n_lesions: *n,
                subgroup: *g,
                split: None,
            })
        })
        .collect::<CliResult<_>>()?;
    write_json(args.out_dir.join(PHANTOM_CONFIG_FILE), &cfg)?;
    let path = args.out_dir.join(MANIFEST_FILE);
    write_json(&path, &CohortManifest { entries })?;
    eprintln!("wrote {} studies to {}", plan.len(), args.out_dir.display());
    Ok(path)
}

pub fn split(args: &SplitArgs) -> CliResult<CohortManifest> {
    let m = read_manifest(&args.manifest)?;
    if args.test_per_group == 0 {
        return invalid("--test-per-group must be at least 1");
    }
    let out = stratified_split(&m, args.test_per_group, args.dev_fraction, args.seed)?;
    let target = args.out.as_deref().unwrap_or(&args.manifest);
    write_json(target, &out)?;
    eprintln!(
        "split {}: {} train, {} dev, {} test",
        target.display(),
        out.count(Split::Train),
        out.count(Split::Dev),
        out.count(Split::Test)
    );
    Ok(out)
}

fn prepare_split(manifest_path: &Path, m: &CohortManifest, split: Split, size: usize) -> CliResult<FrameSet> {
    let entries: Vec<&ManifestEntry> = m.in_split(split).collect();
    let studies = entries
        .par_iter()
        .map(|e| Ok(PreparedStudy::new(&load_entry(manifest_path, e)?, size)?))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(FrameSet::new(studies)?)
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogRecord<'a> {
    Step(&'a StepLog),
    Epoch(&'a EpochStats),
}

#[derive(Deserialize)]
struct LogEpoch {
    epoch: usize,
}

/// Log lines from epochs up to `epoch`, for continuing a resumed log.
fn log_prefix(path: &Path, epoch: usize) -> CliResult<Vec<String>> {
    let Ok(f) = File::open(path) else {
        return Ok(Vec::new());
    };
    let mut keep = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let rec: LogEpoch = serde_json::from_str(&line)
            .map_err(|e| CliError::Runtime(format!("{}: bad log line: {e}", path.display())))?;
        if rec.epoch <= epoch {
            keep.push(line);
        }
    }
    Ok(keep)
}

/// Trains (or resumes) and returns the final trainer state.
pub fn train(args: &TrainArgs) -> CliResult<Trainer> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = args.slab_size {
        cfg.train.slab_size = v;
    }
    if let Some(v) = args.width {
        cfg.arch.width_multiplier = v;
    }
    cfg.train.validate()?;
    cfg.arch.validate()?;
    let m = read_manifest(&args.manifest)?;
    for (s, name) in [(Split::Train, "train"), (Split::Dev, "dev")] {
        if m.count(s) == 0 {
            return invalid(format!("manifest has no {name} cases; run `mseg split` first"));
        }
    }

    let mut trainer = match &args.resume {
        Some(path) => {
            let mut t = load_checkpoint(path)?.into_trainer()?;
            if let Some(v) = args.epochs {
                t.config.epochs = v;
            }
            t
        }
        None => Trainer::new(build_modified_googlenet(&cfg.arch, cfg.train.seed)?, cfg.train.clone())?,
    };
    let size = trainer.config.slab_size;
    let train_set = prepare_split(&args.manifest, &m, Split::Train, size)?;
    let dev_set = prepare_split(&args.manifest, &m, Split::Dev, size)?;
    if train_set.n_lesion_frames() == 0 {
        return invalid("training split has no slices with lesions");
    }

    fs::create_dir_all(args.out.join(CHECKPOINT_DIR)).map_err(|e| CliError::io(&args.out, e))?;
    let effective = RunConfig {
        arch: trainer.net.config().clone(),
        train: trainer.config.clone(),
        ..cfg
    };
    write_json(args.out.join(RUN_CONFIG_FILE), &effective)?;
    let log_path = args.out.join(TRAIN_LOG_FILE);
    let prefix = if args.resume.is_some() { log_prefix(&log_path, trainer.epoch)? } else { Vec::new() };
    let file = File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let log = RefCell::new((BufWriter::new(file), None::<std::io::Error>));
    {
        let mut l = log.borrow_mut();
        for line in &prefix {
            if let Err(e) = writeln!(l.0, "{line}") {
                l.1.get_or_insert(e);
            }
        }
    }
    let write_record = |rec: LogRecord| {
        let mut l = log.borrow_mut();
        let line = serde_json::to_string(&rec).expect("log records serialize");
        if let Err(e) = writeln!(l.0, "{line}") {
            l.1.get_or_insert(e);
        }
    };
    eprintln!(
        "training on {} slices ({} with lesions), {} dev slices",
        train_set.n_frames(),
        train_set.n_lesion_frames(),
        dev_set.n_frames()
    );
    trainer.fit(
        &train_set,
        Some(&dev_set),
        &mut |s| write_record(LogRecord::Step(s)),
        &mut |t, stats| {
            write_record(LogRecord::Epoch(stats));
            log.borrow_mut().0.flush().map_err(|e| mseg_core::Error::Io { path: log_path.clone(), source: e })?;
            save_checkpoint(epoch_checkpoint(&args.out, stats.epoch), t)?;
            save_checkpoint(args.out.join(MODEL_FILE), t)?;
            eprintln!(
                "epoch {}: loss {:.5}, dev loss {}",
                stats.epoch,
                stats.mean_loss,
                stats.dev_loss.map_or("-".into(), |d| format!("{d:.5}"))
            );
            Ok(())
        },
    )?;
    let (mut w, err) = log.into_inner();
    if let Some(e) = err {
        return Err(CliError::io(&log_path, e));
    }
    w.flush().map_err(|e| CliError::io(&log_path, e))?;
    save_checkpoint(args.out.join(MODEL_FILE), &trainer)?;
    Ok(trainer)
}

fn write_overlays(dir: &Path, study: &MultiSequenceStudy, probs: &mseg_core::ProbabilityMap, threshold: f32) -> CliResult<()> {
    for z in 0..study.dims().nz {
        export_overlay(dir.join(format!("z{z:03}.ppm")), study, probs, z, threshold)?;
    }
    Ok(())
}

/// Runs inference; returns the probability map paths written.
pub fn infer(args: &InferArgs) -> CliResult<Vec<PathBuf>> {
    if !(0.0..=1.0).contains(&args.overlay_threshold) {
        return invalid(format!("--overlay-threshold {} outside [0, 1]", args.overlay_threshold));
    }
    let jobs: Vec<(PathBuf, String, PathBuf, Option<PathBuf>)> = match (&args.study, &args.manifest) {
        (Some(dir), None) => {
            let out = args.out_prob.clone().ok_or_else(|| CliError::Validation("--study needs --out-prob".into()))?;
            let id = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "study".into());
            vec![(dir.clone(), id, out, args.overlay_dir.clone())]
        }
        (None, Some(manifest)) => {
            let out_dir = args.out_dir.clone().ok_or_else(|| CliError::Validation("--manifest needs --out-dir".into()))?;
            let m = read_manifest(manifest)?;
            let base = manifest_dir(manifest);
            let jobs: Vec<_> = m
                .entries
                .iter()
                .filter(|e| args.split.matches(e.split))
                .map(|e| {
                    (
                        base.join(&e.path),
                        e.study_id.clone(),
                        prob_path(&out_dir, &e.study_id),
                        args.overlay_dir.as_ref().map(|d| d.join(&e.study_id)),
                    )
                })
                .collect();
            if jobs.is_empty() {
                return invalid(format!("no studies in split {:?}", args.split));
            }
            jobs
        }
        _ => return invalid("give either --study with --out-prob or --manifest with --out-dir"),
    };
    if !args.checkpoint.is_file() {
        return invalid(format!("checkpoint {} does not exist", args.checkpoint.display()));
    }
    let ckpt: Checkpoint = load_checkpoint(&args.checkpoint)?;
    let size = ckpt.train.slab_size;
    let mut net = ckpt.network(None)?;
    let mut written = Vec::new();
    for (dir, id, out, overlay) in jobs {
        let study = load_study(&dir, &id)?;
        let prepared = PreparedStudy::new(&study, size)?;
        let probs = predict_prepared(&mut net, &prepared, &study)?;
        write_probability_map(&out, &probs)?;
        if let Some(o) = overlay {
            write_overlays(&o, &study, &probs, args.overlay_threshold)?;
        }
        written.push(out);
    }
    eprintln!("wrote {} probability maps", written.len());
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevThreshold {
    pub study_id: String,
    pub threshold: Option<f64>,
}

/// Output of `mseg evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub threshold: f64,
    /// True when `threshold` is the dev-split mean Youden threshold.
    pub calibrated: bool,
    pub dev_thresholds: Vec<DevThreshold>,
    pub connectivity: Connectivity,
    pub min_mm3: f64,
    pub patients: Vec<PatientEval>,
    pub warnings: Vec<String>,
}

fn evaluate_entries(
    manifest: &Path,
    entries: &[&ManifestEntry],
    probs_dir: &Path,
    settings: &EvalSettings,
) -> CliResult<Vec<PatientEval>> {
    for e in entries {
        let p = prob_path(probs_dir, &e.study_id);
        if !p.is_file() {
            return Err(CliError::Runtime(format!("missing probability map {}", p.display())));
        }
    }
    entries
        .par_iter()
        .map(|e| {
            let study = load_entry(manifest, e)?;
            let probs = read_probability_map(prob_path(probs_dir, &e.study_id))?;
            Ok(evaluate_patient(&e.study_id, e.subgroup, &probs, study.gt_mask(), study.brain_mask(), settings)?)
        })
        .collect()
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<Evaluation> {
    let mut cfg = RunConfig::load(args.config.as_deref())?.eval;
    if let Some(t) = args.threshold {
        cfg.threshold = Some(t);
    }
    if args.calibrate_dev {
        cfg.threshold = None;
    }
    if let Some(c) = args.connectivity {
        cfg.connectivity = Connectivity::from_count(c).ok_or_else(|| CliError::Validation(format!("--connectivity must be 6 or 26, got {c}")))?;
    }
    if let Some(v) = args.min_mm3 {
        cfg.min_mm3 = v;
    }
    cfg.validate()?;
    let m = read_manifest(&args.manifest)?;
    let selected: Vec<&ManifestEntry> = m.entries.iter().filter(|e| args.split.matches(e.split)).collect();
    if selected.is_empty() {
        return invalid(format!("no studies in split {:?}", args.split));
    }
    let mut settings = EvalSettings {
        threshold: cfg.threshold.unwrap_or(0.5),
        connectivity: cfg.connectivity,
        min_mm3: cfg.min_mm3,
    };
    let mut dev_thresholds = Vec::new();
    if cfg.threshold.is_none() {
        let dev: Vec<&ManifestEntry> = m.in_split(Split::Dev).collect();
        if dev.is_empty() {
            return invalid("calibration needs dev cases in the manifest; pass --threshold instead");
        }
        let evals = evaluate_entries(&args.manifest, &dev, &args.probs_dir, &settings)?;
        settings.threshold = calibrate_threshold(&evals).map_err(|e| CliError::Runtime(e.to_string()))?;
        dev_thresholds = evals
            .iter()
            .map(|e| DevThreshold {
                study_id: e.study_id.clone(),
                threshold: e.youden_threshold,
            })
            .collect();
    }
    let patients = evaluate_entries(&args.manifest, &selected, &args.probs_dir, &settings)?;
    let warnings: Vec<String> = patients
        .iter()
        .filter(|p| p.single_class())
        .map(|p| format!("{}: single-class ground truth in the brain; excluded from AUC statistics", p.study_id))
        .collect();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let out = Evaluation {
        threshold: settings.threshold,
        calibrated: cfg.threshold.is_none(),
        dev_thresholds,
        connectivity: settings.connectivity,
        min_mm3: settings.min_mm3,
        patients,
        warnings,
    };
    write_json(&args.out, &out)?;
    eprintln!("evaluated {} patients at threshold {:.4}", out.patients.len(), out.threshold);
    Ok(out)
}

pub fn report(args: &ReportArgs) -> CliResult<Report> {
    if !args.evals.is_file() {
        return invalid(format!("evaluation file {} does not exist", args.evals.display()));
    }
    let evals: Evaluation = read_json(&args.evals)?;
    let report = aggregate_report(&evals.patients)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    write_json(args.out.join(REPORT_JSON), &report)?;
    let text = report.to_text();
    fs::write(args.out.join(REPORT_TEXT), &text).map_err(|e| CliError::io(&args.out, e))?;
    print!("{text}");
    Ok(report)
}
