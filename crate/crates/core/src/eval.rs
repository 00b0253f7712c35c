//! The label-budget sweep: temporal holdout, seeded label subsets, both
//! training arms on identical draws and seeds, RMSE on a fixed test set, and
//! CSV/plot-data emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{PreparedSubject, QuestionId};
use crate::error::{Error, Result};
use crate::finetune::{
    finetune, fuse, train_supervised_baseline, FinetuneConfig, FinetuneOutcome, LabeledSubset,
    Method,
};
use crate::pretext::{EncoderArch, EncoderArtifact};
use crate::seed::{derive_seed, tag};

const DRAW_STREAM: u64 = 20;
const CELL_STREAM: u64 = 21;

/// Root mean squared error.
pub fn rmse(preds: &[f32], targets: &[f32]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::dim("rmse of zero values"));
    }
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
        .sum();
    Ok((sum / preds.len() as f64).sqrt())
}

/// `draws` subsets of `k` distinct elements of `eligible`, each sorted
/// ascending, each from its own derived seed.
pub fn draw_label_subsets(eligible: &[usize], k: usize, draws: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > eligible.len() {
        return Err(Error::validation(format!(
            "label budget {k} not within 1..={} eligible windows",
            eligible.len()
        )));
    }
    Ok((0..draws)
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[d as u64]));
            let mut pick: Vec<usize> = rand::seq::index::sample(&mut rng, eligible.len(), k)
                .into_iter()
                .map(|i| eligible[i])
                .collect();
            pick.sort_unstable();
            pick
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub budgets: Vec<usize>,
    pub subset_draws: usize,
    pub repeats: usize,
    pub test_count: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub questions: Vec<QuestionId>,
    /// Worker threads for independent cells; `None` uses every core.
    pub workers: Option<usize>,
    /// Fill `wall_ms`; off by default so reports are byte-reproducible.
    pub record_timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            budgets: vec![5, 10, 25, 50, 100],
            subset_draws: 10,
            repeats: 3,
            test_count: 910,
            seed: 0,
            methods: Method::ALL.to_vec(),
            questions: QuestionId::ALL.to_vec(),
            workers: None,
            record_timing: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return Err(Error::validation("budgets must be a non-empty list of positive counts"));
        }
        if self.subset_draws == 0 || self.repeats == 0 {
            return Err(Error::validation("subset_draws and repeats must be at least 1"));
        }
        if self.methods.is_empty() || self.questions.is_empty() {
            return Err(Error::validation("at least one method and one question are required"));
        }
        if self.workers == Some(0) {
            return Err(Error::validation("workers must be at least 1"));
        }
        Ok(())
    }

    pub fn expected_rows(&self, subjects: usize) -> usize {
        subjects
            * self.questions.len()
            * self.methods.len()
            * self.budgets.len()
            * self.subset_draws
            * self.repeats
    }
}

/// A subject's windows with its six pretrained encoders (fusion order).
#[derive(Debug, Clone)]
pub struct SubjectModels {
    pub subject: PreparedSubject,
    pub encoders: Vec<EncoderArtifact>,
    /// Every window index read by pretraining, ascending and distinct.
    pub pretext_consumed: Vec<usize>,
}

/// Labeled test windows for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub positions: Vec<usize>,
    pub labels: Vec<f32>,
    /// Test windows without a label for this question.
    pub excluded: usize,
    /// SHA-256 (hex) of the evaluated window indices.
    pub index_hash: String,
}

impl TestSet {
    pub fn new(subject: &PreparedSubject, question: QuestionId) -> Self {
        let mut positions = Vec::new();
        let mut labels = Vec::new();
        for pos in subject.test.clone() {
            if let Some(l) = subject.label(pos, question) {
                positions.push(pos);
                labels.push(l);
            }
        }
        let ecg = &subject.modalities[0].1;
        let indices: Vec<usize> = positions.iter().map(|&p| ecg.entry(p).index).collect();
        Self {
            excluded: subject.test.len() - positions.len(),
            index_hash: index_hash(&indices),
            positions,
            labels,
        }
    }

    /// RMSE of `predict` over the test windows.
    pub fn score(&self, mut predict: impl FnMut(usize) -> Result<f32>) -> Result<f64> {
        let preds = self
            .positions
            .iter()
            .map(|&p| predict(p))
            .collect::<Result<Vec<f32>>>()?;
        rmse(&preds, &self.labels)
    }
}

pub fn index_hash(indices: &[usize]) -> String {
    let mut h = Sha256::new();
    for &i in indices {
        h.update((i as u64).to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub subject: String,
    pub question: QuestionId,
    pub method: Method,
    pub k: usize,
    pub draw: usize,
    pub repeat: usize,
    pub rmse: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetSummary {
    pub subject: String,
    pub question: QuestionId,
    pub evaluated: usize,
    pub excluded: usize,
    pub index_hash: String,
}

/// Contract checks accumulated over every cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepAudit {
    /// Cells whose encoders were meant to stay frozen, and how many did not.
    pub freeze_checked: usize,
    pub freeze_violations: usize,
    /// Cells that read windows other than exactly their labeled subset.
    pub label_violations: usize,
    /// Window indices from the test split read by pretraining or fine-tuning.
    pub holdout_violations: usize,
    /// Cells evaluated on a test set other than their subject's.
    pub test_set_mismatches: usize,
}

impl SweepAudit {
    pub fn is_clean(&self) -> bool {
        self.freeze_violations == 0
            && self.label_violations == 0
            && self.holdout_violations == 0
            && self.test_set_mismatches == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub test_sets: Vec<TestSetSummary>,
    pub audit: SweepAudit,
    /// One message per cell that failed to train or evaluate.
    pub failures: Vec<String>,
}

struct Cell {
    subject: usize,
    question: QuestionId,
    method: Method,
    k: usize,
    draw: usize,
    repeat: usize,
    subset: Arc<LabeledSubset>,
    seed: u64,
}

struct CellResult {
    row: SweepRow,
    freeze: Option<bool>,
    label_ok: bool,
    holdout_reads: usize,
    hash: String,
}

/// Seed shared by both methods of one (subject, question, k, draw, repeat).
pub fn cell_seed(global: u64, subject_id: &str, question: QuestionId, k: usize, draw: usize, repeat: usize) -> u64 {
    derive_seed(
        global,
        &[CELL_STREAM, tag(subject_id), question.index() as u64, k as u64, draw as u64, repeat as u64],
    )
}

pub fn draw_seed(global: u64, subject_id: &str, question: QuestionId, k: usize) -> u64 {
    derive_seed(global, &[DRAW_STREAM, tag(subject_id), question.index() as u64, k as u64])
}

/// Runs every (subject, question, method, k, draw, repeat) cell.
pub fn run_sweep(
    subjects: &[SubjectModels],
    config: &SweepConfig,
    finetune_config: &FinetuneConfig,
    arch: &EncoderArch,
) -> Result<SweepReport> {
    config.validate()?;
    finetune_config.validate()?;
    let mut report = SweepReport::default();

    // Per-subject test sets and cached fused test representations for the
    // frozen-encoder arm.
    let mut tests: BTreeMap<(usize, QuestionId), TestSet> = BTreeMap::new();
    let mut fused_test: Vec<BTreeMap<usize, Vec<f32>>> = Vec::with_capacity(subjects.len());
    let mut cells = Vec::new();
    for (si, sm) in subjects.iter().enumerate() {
        let s = &sm.subject;
        if s.test.len() != config.test_count {
            return Err(Error::validation(format!(
                "subject {} holds out {} windows, the sweep expects {}",
                s.subject_id,
                s.test.len(),
                config.test_count
            )));
        }
        let consumed_test = sm.pretext_consumed.iter().filter(|&&i| i >= s.train.end).count();
        report.audit.holdout_violations += consumed_test;

        let mut cache = BTreeMap::new();
        if config.methods.contains(&Method::Ssl) {
            let positions: std::collections::BTreeSet<usize> = config
                .questions
                .iter()
                .flat_map(|&q| TestSet::new(s, q).positions)
                .collect();
            for pos in positions {
                cache.insert(pos, fuse(&sm.encoders, &s.bundle(pos))?);
            }
        }
        fused_test.push(cache);

        for &q in &config.questions {
            let test = TestSet::new(s, q);
            if test.positions.is_empty() {
                return Err(Error::validation(format!(
                    "subject {}: no labeled {q} windows in the test split",
                    s.subject_id
                )));
            }
            report.test_sets.push(TestSetSummary {
                subject: s.subject_id.clone(),
                question: q,
                evaluated: test.positions.len(),
                excluded: test.excluded,
                index_hash: test.index_hash.clone(),
            });
            if test.excluded > 0 {
                log::info!(
                    "subject {} {q}: {} unlabeled test windows excluded, {} evaluated",
                    s.subject_id,
                    test.excluded,
                    test.positions.len()
                );
            }
            let ecg = &s.modalities[0].1;
            let eligible: Vec<usize> = s.labeled_train(q).iter().map(|&p| ecg.entry(p).index).collect();
            for &k in &config.budgets {
                let draws = draw_label_subsets(&eligible, k, config.subset_draws, draw_seed(config.seed, &s.subject_id, q, k))
                    .map_err(|e| Error::validation(format!("subject {} {q}: {e}", s.subject_id)))?;
                for (d, indices) in draws.into_iter().enumerate() {
                    let subset = Arc::new(LabeledSubset::from_subject(s, q, &indices)?);
                    for r in 0..config.repeats {
                        let seed = cell_seed(config.seed, &s.subject_id, q, k, d, r);
                        for &method in &config.methods {
                            cells.push(Cell {
                                subject: si,
                                question: q,
                                method,
                                k,
                                draw: d,
                                repeat: r,
                                subset: Arc::clone(&subset),
                                seed,
                            });
                        }
                    }
                }
            }
            tests.insert((si, q), test);
        }
    }

    let run_cell = |cell: &Cell| -> Result<CellResult> {
        let sm = &subjects[cell.subject];
        let s = &sm.subject;
        let test = &tests[&(cell.subject, cell.question)];
        let started = Instant::now();
        let outcome: FinetuneOutcome = match cell.method {
            Method::Ssl => finetune(&s.subject_id, &sm.encoders, s, &cell.subset, finetune_config, cell.seed)?,
            Method::Supervised => {
                train_supervised_baseline(&s.subject_id, arch, s, &cell.subset, finetune_config, cell.seed)?
            }
        };
        let model = &outcome.model;
        let rmse = match cell.method {
            Method::Ssl => test.score(|p| model.predict_fused(&fused_test[cell.subject][&p]))?,
            Method::Supervised => test.score(|p| model.predict(&s.bundle(p)))?,
        };
        let wall_ms = if config.record_timing {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        let freeze = (cell.method == Method::Ssl).then(|| {
            let artifacts: Vec<[u8; 32]> = sm.encoders.iter().map(EncoderArtifact::digest).collect();
            outcome.encoders_unchanged() && outcome.encoder_digests_after == artifacts
        });
        let mut expected = cell.subset.indices.clone();
        expected.sort_unstable();
        let holdout_reads = outcome.trained_on.iter().filter(|&&i| i >= s.train.end).count();
        Ok(CellResult {
            row: SweepRow {
                subject: s.subject_id.clone(),
                question: cell.question,
                method: cell.method,
                k: cell.k,
                draw: cell.draw,
                repeat: cell.repeat,
                rmse,
                wall_ms,
            },
            freeze,
            label_ok: outcome.trained_on == expected,
            holdout_reads,
            hash: test.index_hash.clone(),
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<CellResult>> = pool.install(|| cells.par_iter().map(run_cell).collect());

    let subject_hash: BTreeMap<(String, QuestionId), String> = report
        .test_sets
        .iter()
        .map(|t| ((t.subject.clone(), t.question), t.index_hash.clone()))
        .collect();
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(r) => {
                if let Some(ok) = r.freeze {
                    report.audit.freeze_checked += 1;
                    report.audit.freeze_violations += usize::from(!ok);
                }
                report.audit.label_violations += usize::from(!r.label_ok);
                report.audit.holdout_violations += r.holdout_reads;
                if subject_hash[&(r.row.subject.clone(), r.row.question)] != r.hash {
                    report.audit.test_set_mismatches += 1;
                }
                report.rows.push(r.row);
            }
            Err(e) => report.failures.push(format!(
                "subject {} {} {} k={} draw={} repeat={}: {e}",
                subjects[cell.subject].subject.subject_id,
                cell.question,
                cell.method,
                cell.k,
                cell.draw,
                cell.repeat
            )),
        }
    }
    sort_rows(&mut report.rows);
    Ok(report)
}

fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        (&a.subject, a.question, a.method, a.k, a.draw, a.repeat)
            .cmp(&(&b.subject, b.question, b.method, b.k, b.draw, b.repeat))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub subject: String,
    pub question: QuestionId,
    pub method: Method,
    pub k: usize,
    pub mean_rmse: f64,
    /// Sample standard deviation; zero for a single row.
    pub std_rmse: f64,
    pub median_rmse: f64,
    pub n: usize,
}

pub fn aggregate(rows: &[SweepRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, QuestionId, Method, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.subject.clone(), r.question, r.method, r.k))
            .or_default()
            .push(r.rmse);
    }
    groups
        .into_iter()
        .map(|((subject, question, method, k), mut v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            v.sort_by(f64::total_cmp);
            let median = if n % 2 == 1 {
                v[n / 2]
            } else {
                (v[n / 2 - 1] + v[n / 2]) / 2.0
            };
            AggregateRow {
                subject,
                question,
                method,
                k,
                mean_rmse: mean,
                std_rmse: std,
                median_rmse: median,
                n,
            }
        })
        .collect()
}

pub const RESULTS_FILE: &str = "results.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const PLOT_DIR: &str = "plots";

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::State(format!("csv: {other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, `aggregate.csv` and one plot-data file per
/// subject and question under `plots/`. Returns the paths written.
pub fn emit_report(report: &SweepReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::Precondition("cannot emit an empty sweep report".into()));
    }
    let out = out_dir.as_ref();
    fs::create_dir_all(out.join(PLOT_DIR)).map_err(|e| Error::io(out, e))?;
    let mut rows = report.rows.clone();
    sort_rows(&mut rows);
    let mut written = vec![out.join(RESULTS_FILE), out.join(AGGREGATE_FILE)];
    write_csv(&written[0], &rows)?;
    let agg = aggregate(&rows);
    write_csv(&written[1], &agg)?;

    let mut plots: BTreeMap<(String, QuestionId), BTreeMap<usize, [Option<(f64, f64)>; 2]>> = BTreeMap::new();
    for a in &agg {
        let slot = match a.method {
            Method::Ssl => 0,
            Method::Supervised => 1,
        };
        plots
            .entry((a.subject.clone(), a.question))
            .or_default()
            .entry(a.k)
            .or_default()[slot] = Some((a.mean_rmse, a.std_rmse));
    }
    for ((subject, question), by_k) in plots {
        let mut text = String::from("# k mean_ssl std_ssl mean_sup std_sup\n");
        for (k, [ssl, sup]) in by_k {
            let cols = |v: Option<(f64, f64)>| match v {
                Some((m, s)) => format!("{m} {s}"),
                None => "nan nan".to_string(),
            };
            text.push_str(&format!("{k} {} {}\n", cols(ssl), cols(sup)));
        }
        let path = out.join(PLOT_DIR).join(format!("{subject}_{question}.dat"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a `results.csv` back.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::State(format!("csv: {e}")))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format { what: "results.csv", detail: e.to_string() }))
        .collect()
}
