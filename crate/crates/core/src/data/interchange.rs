//! Version-1 interchange directories: `manifest.json` plus one raw
//! little-endian `f32` file per modality, channel-interleaved.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labels::check_label_events;
use super::modality::{Modality, QuestionId};
use super::recording::{LabelEvent, SubjectRecording};
use crate::error::{Error, Result};
use crate::nn::Tensor2D;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INTERCHANGE_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityEntry {
    pub name: String,
    pub channels: u64,
    pub samples: u64,
    pub file: String,
}

/// On-disk manifest. Label events are `[start_sample, end_sample, question_id, likert]`
/// with a half-open sample span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u64,
    pub subject_id: String,
    pub sample_rate: f64,
    pub modalities: Vec<ModalityEntry>,
    pub label_events: Vec<(u64, u64, String, i64)>,
}

impl Manifest {
    pub fn describe(recording: &SubjectRecording) -> Self {
        Manifest {
            version: INTERCHANGE_VERSION,
            subject_id: recording.subject_id.clone(),
            sample_rate: recording.sample_rate as f64,
            modalities: recording
                .signals
                .iter()
                .map(|(m, s)| ModalityEntry {
                    name: m.name().to_string(),
                    channels: s.cols() as u64,
                    samples: s.rows() as u64,
                    file: m.file_name(),
                })
                .collect(),
            label_events: recording
                .label_events
                .iter()
                .map(|e| {
                    (
                        e.start_sample as u64,
                        e.end_sample as u64,
                        e.question.name().to_string(),
                        e.likert as i64,
                    )
                })
                .collect(),
        }
    }
}

/// Every problem found in one subject directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub path: PathBuf,
    pub subject_id: Option<String>,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let who = self.subject_id.as_deref().unwrap_or("<unknown subject>");
        if self.is_clean() {
            return write!(f, "{who} ({}): ok", self.path.display());
        }
        writeln!(f, "{who} ({}): {} violation(s)", self.path.display(), self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

fn write_f32s(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn save_recording(recording: &SubjectRecording, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest::describe(recording);
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    for (m, series) in &recording.signals {
        write_f32s(&dir.join(m.file_name()), series.data())?;
    }
    Ok(())
}

struct Checked {
    report: ValidationReport,
    manifest: Option<Manifest>,
    payloads: Vec<(Modality, usize, Vec<u8>)>,
}

fn check_dir(dir: &Path) -> Result<Checked> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut report = ValidationReport {
        path: dir.to_path_buf(),
        ..Default::default()
    };
    let mut payloads = Vec::new();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&manifest_path) {
        Ok(t) => t,
        Err(e) => {
            report.violations.push(format!("missing or unreadable {MANIFEST_FILE}: {e}"));
            return Ok(Checked {
                report,
                manifest: None,
                payloads,
            });
        }
    };
    let manifest: Manifest = match serde_json::from_str(&text) {
        Ok(m) => m,
        Err(e) => {
            report.violations.push(format!("{MANIFEST_FILE} does not parse: {e}"));
            return Ok(Checked {
                report,
                manifest: None,
                payloads,
            });
        }
    };
    let v = &mut report.violations;
    let sid = manifest.subject_id.clone();
    report.subject_id = Some(sid.clone());
    if manifest.version != INTERCHANGE_VERSION {
        v.push(format!(
            "unsupported interchange version {} (expected {INTERCHANGE_VERSION})",
            manifest.version
        ));
    }
    if !(manifest.sample_rate > 0.0 && manifest.sample_rate.is_finite()) {
        v.push(format!("sample_rate {} is not positive", manifest.sample_rate));
    }
    let mut seen = Vec::new();
    let mut counts = Vec::new();
    for entry in &manifest.modalities {
        let m = match entry.name.parse::<Modality>() {
            Ok(m) => m,
            Err(_) => {
                v.push(format!("unknown modality '{}'", entry.name));
                continue;
            }
        };
        if seen.contains(&m) {
            v.push(format!("modality {m} listed twice"));
            continue;
        }
        seen.push(m);
        if entry.channels as usize != m.channels() {
            v.push(format!(
                "modality {m} declares {} channels, expected {}",
                entry.channels,
                m.channels()
            ));
        }
        counts.push(entry.samples);
        let path = dir.join(&entry.file);
        match fs::read(&path) {
            Err(e) => v.push(format!("modality {m}: cannot read {}: {e}", entry.file)),
            Ok(bytes) => {
                let want = entry.samples * entry.channels * 4;
                if bytes.len() as u64 != want {
                    v.push(format!(
                        "modality {m}: length mismatch, {} holds {} bytes but manifest declares {} samples x {} channels ({want} bytes)",
                        entry.file,
                        bytes.len(),
                        entry.samples,
                        entry.channels
                    ));
                } else if read_f32s(&bytes).iter().any(|x| !x.is_finite()) {
                    v.push(format!("modality {m}: non-finite sample values"));
                } else {
                    payloads.push((m, entry.channels as usize, bytes));
                }
            }
        }
    }
    for m in Modality::ALL {
        if !seen.contains(&m) {
            v.push(format!("modality {m} missing from manifest"));
        }
    }
    let total = counts.first().copied();
    if counts.iter().any(|c| Some(*c) != total) {
        v.push(format!("modality sample counts differ: {counts:?}"));
    }
    let mut events = Vec::new();
    for (i, (start, end, q, likert)) in manifest.label_events.iter().enumerate() {
        let at = format!("subject {sid} event {i}");
        let question = match q.parse::<QuestionId>() {
            Ok(q) => Some(q),
            Err(_) => {
                v.push(format!("{at}: unknown question '{q}'"));
                None
            }
        };
        if !(1..=4).contains(likert) {
            v.push(format!("{at} ({q}): likert {likert} outside 1..=4"));
        }
        if start >= end {
            v.push(format!("{at} ({q}): empty span {start}..{end}"));
        }
        if let Some(n) = total {
            if *end > n {
                v.push(format!("{at} ({q}): span ends at {end}, past {n} samples"));
            }
        }
        if let (Some(question), true) = (question, (1..=4).contains(likert)) {
            events.push(LabelEvent {
                start_sample: *start as usize,
                end_sample: *end as usize,
                question,
                likert: *likert as u8,
            });
        }
    }
    if let Err(e) = check_label_events(&events) {
        v.push(format!("subject {sid}: {e}"));
    }
    Ok(Checked {
        report,
        manifest: Some(manifest),
        payloads,
    })
}

/// Reports every violation in a subject directory. Errors only when the
/// directory itself is absent.
pub fn validate_manifest(dir: impl AsRef<Path>) -> Result<ValidationReport> {
    Ok(check_dir(dir.as_ref())?.report)
}

pub fn load_recording(dir: impl AsRef<Path>) -> Result<SubjectRecording> {
    let checked = check_dir(dir.as_ref())?;
    if !checked.report.is_clean() {
        return Err(Error::Validation(checked.report.to_string()));
    }
    let manifest = checked.manifest.expect("clean report has a manifest");
    let mut signals: Vec<(Modality, Tensor2D)> = checked
        .payloads
        .into_iter()
        .map(|(m, c, bytes)| {
            let data = read_f32s(&bytes);
            (m, Tensor2D::from_vec(data.len() / c, c, data).unwrap())
        })
        .collect();
    signals.sort_by_key(|(m, _)| m.index());
    let label_events = manifest
        .label_events
        .iter()
        .map(|(s, e, q, l)| LabelEvent {
            start_sample: *s as usize,
            end_sample: *e as usize,
            question: q.parse().unwrap(),
            likert: *l as u8,
        })
        .collect();
    Ok(SubjectRecording {
        subject_id: manifest.subject_id,
        sample_rate: manifest.sample_rate as f32,
        signals,
        label_events,
    })
}

/// Validation plus a lossless-reload check: the loaded recording must
/// re-encode to the exact payload bytes and an equal manifest.
pub fn roundtrip_check(dir: impl AsRef<Path>) -> Result<ValidationReport> {
    let dir = dir.as_ref();
    let checked = check_dir(dir)?;
    let mut report = checked.report.clone();
    if !report.is_clean() {
        return Ok(report);
    }
    let rec = load_recording(dir)?;
    let on_disk = checked.manifest.expect("clean report has a manifest");
    let reencoded = Manifest::describe(&rec);
    if reencoded.sample_rate != on_disk.sample_rate {
        report.violations.push(format!(
            "sample_rate {} is not representable as float32",
            on_disk.sample_rate
        ));
    }
    if reencoded.label_events != on_disk.label_events {
        report.violations.push("label events do not survive a reload unchanged".to_string());
    }
    for (m, _, bytes) in &checked.payloads {
        let series = rec.signal(*m).expect("loaded recording has every modality");
        let same = series.data().len() * 4 == bytes.len()
            && series
                .data()
                .iter()
                .zip(bytes.chunks_exact(4))
                .all(|(v, b)| v.to_le_bytes() == b);
        if !same {
            report.violations.push(format!("modality {}: payload changes on reload", m.name()));
        }
    }
    Ok(report)
}

/// Subject directories (those holding a manifest) directly under `root`,
/// sorted by name. A root that is itself a subject directory yields itself.
pub fn subject_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    if root.join(MANIFEST_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}
