use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stressnet::data::{
    load_recording, prepare_subject, roundtrip_check, save_recording, subject_dirs, validate_manifest, Modality,
    SubjectRecording, ValidationReport,
};
use stressnet::eval::{aggregate, emit_report, run_sweep, SubjectModels, SweepReport};
use stressnet::finetune::Method;
use stressnet::pipeline::{pretrain_cohort, synth_cohort, PretextSummary};
use stressnet::pretext::{EncoderArtifact, EpochLog};

use crate::config::RunConfig;
use crate::CliError;

pub const CONFIG_ECHO: &str = "config.toml";
pub const PARTIAL_MARKER: &str = ".partial";

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| failure(format!("cannot write {}: {e}", path.display())))
}

/// Creates `dir`, refusing to reuse a non-empty one unless forced.
fn prepare_out(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{} exists and is not a directory", dir.display())));
        }
        let occupied = fs::read_dir(dir).map_err(failure)?.next().is_some();
        if occupied && !force {
            return Err(CliError::Failure(format!(
                "output directory {} is not empty (use --force to write into it)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| failure(format!("cannot create {}: {e}", dir.display())))
}

/// Writes the effective configuration next to the outputs it produced. The
/// output path itself is left out so identical runs give identical bytes.
fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let echo = RunConfig { out: None, ..cfg.clone() };
    write(&dir.join(CONFIG_ECHO), echo.to_toml()?)
}

/// Recordings from the configured interchange root, or the synthetic cohort.
fn load_cohort(cfg: &RunConfig) -> Result<Vec<SubjectRecording>, CliError> {
    match &cfg.data {
        Some(root) => {
            let dirs = subject_dirs(root)?;
            if dirs.is_empty() {
                return Err(failure(format!("no subject directories under {}", root.display())));
            }
            dirs.iter()
                .map(|d| load_recording(d).map_err(|e| failure(format!("{}: {e}", d.display()))))
                .collect()
        }
        None => Ok(synth_cohort(&cfg.pipeline.synth, cfg.seed())?),
    }
}

pub fn synth(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let recordings = load_cohort(&RunConfig { data: None, ..cfg.clone() })?;
    prepare_out(out, force)?;
    for rec in &recordings {
        let dir = out.join(&rec.subject_id);
        save_recording(rec, &dir)?;
        let report = validate_manifest(&dir)?;
        if !report.is_clean() {
            return Err(failure(report));
        }
        println!(
            "{}: {} samples at {} Hz, {} modalities, {} label events",
            rec.subject_id,
            rec.sample_count().unwrap_or(0),
            rec.sample_rate,
            rec.signals.len(),
            rec.label_events.len()
        );
    }
    echo_config(cfg, out)?;
    println!("wrote {} subjects to {}", recordings.len(), out.display());
    Ok(())
}

/// Pretraining record of one subject, stored next to its encoder artifacts.
#[derive(Debug, Serialize, Deserialize)]
pub struct PretrainLog {
    pub subject_id: String,
    /// Window indices read by any of the six pretraining runs, ascending.
    pub consumed: Vec<usize>,
    pub modalities: Vec<ModalityLog>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModalityLog {
    pub modality: Modality,
    pub epochs: Vec<EpochLog>,
}

pub fn pretrain_log_name(subject_id: &str) -> String {
    format!("pretrain_{subject_id}.json")
}

fn pretrain_all(cfg: &RunConfig, recordings: &[SubjectRecording]) -> Result<Vec<(SubjectModels, PretextSummary)>, CliError> {
    log::info!("pretraining {} subjects x {} modalities", recordings.len(), Modality::ALL.len());
    let results = pretrain_cohort(recordings, &cfg.pipeline)?;
    for (_, summary) in &results {
        for (m, epochs) in &summary.logs {
            for e in epochs {
                log::info!(
                    "{} {} epoch {}: train {:.6} validation {} best {:.6}",
                    summary.subject_id,
                    m,
                    e.epoch,
                    e.train_loss,
                    e.validation_loss.map_or("-".to_string(), |v| format!("{v:.6}")),
                    e.best_loss
                );
            }
        }
    }
    Ok(results)
}

fn save_encoders(dir: &Path, models: &SubjectModels, summary: &PretextSummary) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(failure)?;
    let mut paths = Vec::new();
    for enc in &models.encoders {
        paths.push(enc.save(dir)?);
    }
    let log = PretrainLog {
        subject_id: summary.subject_id.clone(),
        consumed: models.pretext_consumed.clone(),
        modalities: summary
            .logs
            .iter()
            .map(|(m, e)| ModalityLog {
                modality: *m,
                epochs: e.clone(),
            })
            .collect(),
    };
    let path = dir.join(pretrain_log_name(&summary.subject_id));
    write(&path, serde_json::to_string_pretty(&log).map_err(failure)? + "\n")?;
    Ok(paths)
}

pub fn pretrain(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let recordings = load_cohort(cfg)?;
    prepare_out(out, force)?;
    echo_config(cfg, out)?;
    let results = pretrain_all(cfg, &recordings)?;
    let mut written = 0;
    for (models, summary) in &results {
        written += save_encoders(out, models, summary)?.len();
        for enc in &models.encoders {
            let m = &enc.meta;
            println!(
                "{} {}: best epoch {}/{}, validation loss {:.6} (mean predictor {:.6})",
                m.subject_id, m.modality, m.best_epoch, m.epochs_run, m.final_loss, m.mean_predictor_loss
            );
        }
    }
    println!("wrote {written} encoder artifacts to {}", out.display());
    Ok(())
}

/// Rebuilds a subject's models from artifacts written by `pretrain`.
fn load_subject(cfg: &RunConfig, rec: &SubjectRecording, dir: &Path) -> Result<SubjectModels, CliError> {
    let p = &cfg.pipeline;
    let subject = prepare_subject(rec, p.pretext.segmentation, p.sweep.test_count, p.acc_input)?;
    let mut encoders = Vec::with_capacity(Modality::ALL.len());
    for m in Modality::ALL {
        let path = dir.join(EncoderArtifact::file_name(&subject.subject_id, m));
        if !path.is_file() {
            return Err(failure(format!(
                "missing {m} encoder for subject {}: {}",
                subject.subject_id,
                path.display()
            )));
        }
        let enc = EncoderArtifact::load(&path)?;
        let expected = p.pretext.arch.encoder_layers(subject.dataset(m).channels());
        let meta = &enc.meta;
        if meta.subject_id != subject.subject_id
            || meta.modality != m
            || meta.horizon != p.pretext.segmentation.horizon
            || enc.model.spec().layers != expected
        {
            return Err(failure(format!(
                "{} does not match the configured subject, modality, horizon or architecture",
                path.display()
            )));
        }
        encoders.push(enc);
    }
    let log_path = dir.join(pretrain_log_name(&subject.subject_id));
    let text = fs::read_to_string(&log_path)
        .map_err(|e| failure(format!("missing pretraining log {}: {e}", log_path.display())))?;
    let log: PretrainLog = serde_json::from_str(&text).map_err(|e| failure(format!("{}: {e}", log_path.display())))?;
    Ok(SubjectModels {
        subject,
        encoders,
        pretext_consumed: log.consumed,
    })
}

fn summarize(report: &SweepReport) {
    for method in Method::ALL {
        let rmses: Vec<f64> = report.rows.iter().filter(|r| r.method == method).map(|r| r.rmse).collect();
        if !rmses.is_empty() {
            println!(
                "{method}: {} rows, mean rmse {:.4}",
                rmses.len(),
                rmses.iter().sum::<f64>() / rmses.len() as f64
            );
        }
    }
    println!("{} aggregate rows", aggregate(&report.rows).len());
}

pub fn sweep(cfg: &RunConfig, force: bool, pretrain_first: bool) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let encoder_dir = match (&cfg.encoders, pretrain_first) {
        (Some(dir), false) => Some(dir.clone()),
        (None, true) => None,
        (Some(_), true) => {
            return Err(CliError::Usage("--pretrain and an encoder directory are mutually exclusive".into()))
        }
        (None, false) => {
            return Err(CliError::Usage(
                "sweep needs pretrained encoders: pass --encoders DIR or --pretrain".into(),
            ))
        }
    };
    let recordings = load_cohort(cfg)?;
    prepare_out(out, force)?;
    echo_config(cfg, out)?;
    let subjects = match encoder_dir {
        Some(dir) => recordings
            .iter()
            .map(|r| load_subject(cfg, r, &dir))
            .collect::<Result<Vec<_>, _>>()?,
        None => {
            let dir = out.join("encoders");
            pretrain_all(cfg, &recordings)?
                .into_iter()
                .map(|(models, summary)| save_encoders(&dir, &models, &summary).map(|_| models))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    let p = &cfg.pipeline;
    log::info!("sweeping {} cells", p.sweep.expected_rows(subjects.len()));
    let report = run_sweep(&subjects, &p.sweep, &p.finetune, &p.pretext.arch)?;
    let marker = out.join(PARTIAL_MARKER);
    if !report.rows.is_empty() {
        emit_report(&report, out)?;
    }
    if !report.failures.is_empty() {
        let mut text = format!(
            "{} of {} cells failed\n",
            report.failures.len(),
            p.sweep.expected_rows(subjects.len())
        );
        for f in &report.failures {
            text.push_str(f);
            text.push('\n');
        }
        write(&marker, &text)?;
        return Err(failure(text.trim_end()));
    }
    if marker.exists() {
        fs::remove_file(&marker).map_err(failure)?;
    }
    summarize(&report);
    if !report.audit.is_clean() {
        return Err(failure(format!("sweep audit failed: {:?}", report.audit)));
    }
    println!("wrote results to {}", out.display());
    Ok(())
}

fn reports_for(path: &Path, check: impl Fn(&Path) -> stressnet::Result<ValidationReport>) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("{} does not exist", path.display())));
    }
    let dirs = subject_dirs(path)?;
    if dirs.is_empty() {
        return Err(failure(format!("no subject directories (with manifest.json) under {}", path.display())));
    }
    let mut dirty = 0;
    for dir in &dirs {
        let report = check(dir)?;
        if report.is_clean() {
            println!("ok {}", dir.display());
        } else {
            dirty += 1;
            print!("{report}");
            if !report.to_string().ends_with('\n') {
                println!();
            }
        }
    }
    if dirty > 0 {
        return Err(failure(format!("{dirty} of {} subject directories have violations", dirs.len())));
    }
    Ok(())
}

pub fn validate(path: &Path) -> Result<(), CliError> {
    reports_for(path, |d| validate_manifest(d))
}

pub fn convert_check(path: &Path) -> Result<(), CliError> {
    reports_for(path, |d| roundtrip_check(d))
}
