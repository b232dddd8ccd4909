//! k-fold cross-validation and results tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use octa_core::folds::{make_folds, FoldSplit};
use octa_core::{Fov, Mode, OctaSample, TaskName};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{by_id, evaluate, mean_std, train_fold, EpochRecord, LabelPrompter, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub fold_seed: u64,
    pub eval_seed: u64,
    /// Prompt settings to evaluate each fold with (`true` = prompts on).
    pub prompt_settings: Vec<bool>,
    /// Train only the first `n` folds (all when unset).
    pub max_folds: Option<usize>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 10,
            fold_seed: 0,
            eval_seed: 0,
            prompt_settings: vec![false, true],
            max_folds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub task: TaskName,
    pub fov: Fov,
    pub prompts: bool,
    pub mode: Mode,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub jaccard_mean: f64,
    pub jaccard_std: f64,
    pub n_folds: usize,
    /// Folds that errored; their scores are excluded from the means.
    pub failed_folds: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultsRow>,
}

const TSV_HEADER: &str = "task\tfov\tprompts\tmode\tdice_mean\tdice_std\tjaccard_mean\tjaccard_std\tn_folds\tfailed_folds";

impl ResultsTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let failed: Vec<String> = r.failed_folds.iter().map(ToString::to_string).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
                r.task,
                r.fov,
                if r.prompts { "on" } else { "off" },
                r.mode,
                r.dice_mean,
                r.dice_std,
                r.jaccard_mean,
                r.jaccard_std,
                r.n_folds,
                if failed.is_empty() { "-".to_string() } else { failed.join(",") }
            );
        }
        out
    }

    /// Write `results.tsv` and `results.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tsv = dir.join("results.tsv");
        fs::write(&tsv, self.to_tsv()).map_err(|e| Error::io(tsv, e))?;
        let json = dir.join("results.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(json, e))
    }
}

/// Validation scores of one fold under one prompt setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub prompts: bool,
    pub dice: f64,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldLog {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub scores: Vec<FoldScore>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub table: ResultsTable,
    pub folds: Vec<FoldLog>,
}

fn pick<'a>(ids: &[String], lookup: &std::collections::BTreeMap<&str, &'a OctaSample>) -> Vec<OctaSample> {
    ids.iter().map(|id| (*lookup[id.as_str()]).clone()).collect()
}

fn run_fold(
    split: &FoldSplit<String>,
    lookup: &std::collections::BTreeMap<&str, &OctaSample>,
    train: &TrainConfig,
    cv: &CvConfig,
    out: Option<&Path>,
) -> Result<FoldLog> {
    let train_set = pick(&split.train_ids, lookup);
    let val_set = pick(&split.val_ids, lookup);
    let outcome = train_fold(&train_set, &val_set, train)?;
    let mut scores = Vec::new();
    for &prompts in &cv.prompt_settings {
        let summary = evaluate(&outcome.model, &val_set, train, prompts, cv.eval_seed, &mut LabelPrompter)?;
        scores.push(FoldScore {
            fold: split.fold_index,
            prompts,
            dice: summary.dice_mean,
            jaccard: summary.jaccard_mean,
        });
    }
    if let Some(dir) = out {
        let dir = fold_dir(dir, split.fold_index);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        outcome.checkpoint.save(&dir.join("adapter.safetensors"))?;
    }
    Ok(FoldLog {
        fold: split.fold_index,
        train_ids: split.train_ids.clone(),
        val_ids: split.val_ids.clone(),
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        scores,
        error: None,
    })
}

fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold_{fold:02}"))
}

fn write_fold_log(out: &Path, log: &FoldLog) -> Result<()> {
    let dir = fold_dir(out, log.fold);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("history.json");
    fs::write(&path, serde_json::to_string_pretty(log)?).map_err(|e| Error::io(path, e))
}

fn aggregate(dataset_fov: Fov, train: &TrainConfig, cv: &CvConfig, folds: &[FoldLog]) -> ResultsTable {
    let failed: Vec<usize> = folds.iter().filter(|f| f.error.is_some()).map(|f| f.fold).collect();
    let rows = cv
        .prompt_settings
        .iter()
        .map(|&prompts| {
            let scores: Vec<&FoldScore> = folds
                .iter()
                .flat_map(|f| f.scores.iter())
                .filter(|s| s.prompts == prompts)
                .collect();
            let dice: Vec<f64> = scores.iter().map(|s| s.dice).collect();
            let jac: Vec<f64> = scores.iter().map(|s| s.jaccard).collect();
            let (dice_mean, dice_std) = mean_std(&dice);
            let (jaccard_mean, jaccard_std) = mean_std(&jac);
            ResultsRow {
                task: train.task.name(),
                fov: dataset_fov,
                prompts,
                mode: train.task.mode(),
                dice_mean,
                dice_std,
                jaccard_mean,
                jaccard_std,
                n_folds: scores.len(),
                failed_folds: failed.clone(),
            }
        })
        .collect();
    ResultsTable { rows }
}

/// Train and evaluate every fold of one field-of-view subset. A failing fold
/// is logged with its error and the remaining folds still run; the table and
/// fold logs are flushed to `out` after every fold.
pub fn run_cv(dataset: &[OctaSample], train: &TrainConfig, cv: &CvConfig, out: Option<&Path>) -> Result<CvReport> {
    let fov = dataset
        .first()
        .map(|s| s.fov)
        .ok_or_else(|| Error::Config("empty dataset".into()))?;
    if let Some(other) = dataset.iter().find(|s| s.fov != fov) {
        return Err(Error::Config(format!(
            "cross-validation runs within one field of view; found {fov} and {}",
            other.fov
        )));
    }
    let ids: Vec<String> = dataset.iter().map(|s| s.sample_id.clone()).collect();
    let splits = make_folds(&ids, cv.k, cv.fold_seed)?;
    let lookup = by_id(dataset);
    let mut logs = Vec::new();
    for split in splits.iter().take(cv.max_folds.unwrap_or(cv.k)) {
        let log = run_fold(split, &lookup, train, cv, out).unwrap_or_else(|e| FoldLog {
            fold: split.fold_index,
            train_ids: split.train_ids.clone(),
            val_ids: split.val_ids.clone(),
            history: Vec::new(),
            best_epoch: None,
            scores: Vec::new(),
            error: Some(e.to_string()),
        });
        if let Some(dir) = out {
            write_fold_log(dir, &log)?;
            aggregate(fov, train, cv, &logs_with(&logs, &log)).write(dir)?;
        }
        logs.push(log);
    }
    Ok(CvReport {
        table: aggregate(fov, train, cv, &logs),
        folds: logs,
    })
}

fn logs_with(logs: &[FoldLog], next: &FoldLog) -> Vec<FoldLog> {
    let mut all = logs.to_vec();
    all.push(next.clone());
    all
}

/// Published comparison numbers, rendered for context only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportedRow {
    pub method: &'static str,
    pub task: TaskName,
    pub fov: Fov,
    pub dice: f64,
    pub jaccard: f64,
}

pub const REPORTED_NOTE: &str = "reported, not reproduced";

/// RV and FAZ results of earlier methods and of the LoRA-adapted model on
/// OCTA-500, as published. None of these numbers are produced by this crate.
pub fn reported_baselines() -> Vec<ReportedRow> {
    // (method, rv3 dice, rv3 jac, rv6 dice, rv6 jac, faz3 dice, faz3 jac, faz6 dice, faz6 jac)
    const ROWS: [(&str, [f64; 8]); 6] = [
        ("U-Net", [0.9068, 0.8301, 0.8876, 0.7987, 0.9747, 0.9585, 0.8770, 0.8124]),
        ("IPN", [0.9062, 0.8325, 0.8864, 0.7973, 0.9505, 0.9091, 0.8802, 0.7980]),
        ("IPN V2+", [0.9274, 0.8667, 0.8941, 0.8095, 0.9755, 0.9532, 0.9084, 0.8423]),
        ("FARGO", [0.9112, 0.8374, 0.8798, 0.7864, 0.9785, 0.9587, 0.8930, 0.8355]),
        ("Joint-Seg", [0.9113, 0.8378, 0.8972, 0.8117, 0.9843, 0.9693, 0.9051, 0.8424]),
        ("LoRA-adapted SAM", [0.9199, 0.8520, 0.8869, 0.7975, 0.9838, 0.9692, 0.9073, 0.8473]),
    ];
    let cells = [
        (TaskName::Rv, Fov::Fov3M),
        (TaskName::Rv, Fov::Fov6M),
        (TaskName::Faz, Fov::Fov3M),
        (TaskName::Faz, Fov::Fov6M),
    ];
    ROWS.iter()
        .flat_map(|(method, v)| {
            cells.iter().enumerate().map(move |(i, &(task, fov))| ReportedRow {
                method,
                task,
                fov,
                dice: v[2 * i],
                jaccard: v[2 * i + 1],
            })
        })
        .collect()
}

pub fn reported_baselines_tsv() -> String {
    let mut out = format!("# {REPORTED_NOTE}\nmethod\ttask\tfov\tdice\tjaccard\n");
    for r in reported_baselines() {
        let _ = writeln!(out, "{}\t{}\t{}\t{:.4}\t{:.4}", r.method, r.task, r.fov, r.dice, r.jaccard);
    }
    out
}
