use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sleepnet::eval::{aggregate_folds, overall_metrics, ConfusionMatrix, FoldResult, MetricsReport, OverallMetrics};
use sleepnet::pipeline::{PreparedRecording, StageClass};
use sleepnet::scoring::score_recording;

use super::data::{check_epoch_length, load_plan, load_recordings, model_from_checkpoint, read_fold_checkpoint, selected_folds};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::layout::{write_file, RunLayout};

pub const REPORT_SCHEMA: &str = "sleepnet.metrics.v1";

/// `reports/metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub k: usize,
    pub folds: Vec<FoldSummary>,
    /// Every evaluated fold's test epochs in one matrix.
    pub pooled: MetricsReport,
    /// Windows in which the decoder emitted EOD before the last epoch.
    pub premature_eod: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub subjects: Vec<String>,
    pub recordings: Vec<String>,
    pub epochs: usize,
    /// `None` when the fold has no test epochs.
    pub overall: Option<OverallMetrics>,
}

pub struct EvaluateOptions {
    pub folds: Vec<usize>,
}

pub fn run(config: &RunConfig, options: &EvaluateOptions) -> Result<EvaluationReport> {
    let layout = RunLayout::new(&config.output_dir);
    let recordings = load_recordings(&layout)?;
    let plan = load_plan(&layout)?;
    check_epoch_length(&recordings, &config.model)?;
    let folds = selected_folds(&options.folds, &plan)?;

    let mut results = Vec::with_capacity(folds.len());
    let mut summaries = Vec::with_capacity(folds.len());
    let mut predictions = String::from("fold\tsubject\trecording\tepoch\ttruth\tpredicted\n");
    let mut premature_eod = 0;
    for fold in folds {
        let path = layout.final_checkpoint(fold);
        let ckpt = read_fold_checkpoint(&path, fold, plan.k)?;
        let model = model_from_checkpoint(config.model.clone(), &ckpt, &path)?;
        let test: Vec<&PreparedRecording> = recordings.iter().filter(|r| plan.is_test(&r.subject_id, fold)).collect();
        let mut result = FoldResult {
            subjects: plan.test_subjects(fold).into_iter().map(str::to_owned).collect(),
            pred: Vec::new(),
            truth: Vec::new(),
        };
        for r in &test {
            let scored = score_recording(&model, &r.epochs, config.execution())?;
            premature_eod += scored.premature_eod;
            for e in &scored.epochs {
                let _ = writeln!(predictions, "{fold}\t{}\t{}\t{}\t{}\t{}", r.subject_id, r.recording_id, e.position, e.truth, e.predicted);
                result.pred.push(e.predicted);
                result.truth.push(e.truth);
            }
        }
        let overall = if result.pred.is_empty() {
            None
        } else {
            Some(overall_metrics(&ConfusionMatrix::from_labels(&result.pred, &result.truth)?)?)
        };
        summaries.push(FoldSummary {
            fold,
            subjects: result.subjects.clone(),
            recordings: test.iter().map(|r| r.recording_id.clone()).collect(),
            epochs: result.pred.len(),
            overall,
        });
        results.push(result);
    }
    let pooled = aggregate_folds(&results).map_err(|e| CliError::Data(format!("pooled evaluation: {e}")))?;
    let report = EvaluationReport { schema: REPORT_SCHEMA.into(), k: plan.k, folds: summaries, pooled, premature_eod };

    let dir = layout.reports_dir();
    write_file(&dir.join("metrics.json"), serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    write_file(&dir.join("metrics.txt"), report.pooled.to_table())?;
    write_file(&dir.join("confusion.tsv"), confusion_tsv(&report.pooled))?;
    write_file(&dir.join("predictions.tsv"), predictions)?;
    write_file(&layout.config(), config.to_toml())?;
    Ok(report)
}

/// Rows are expert labels, columns predictions.
pub fn confusion_tsv(report: &MetricsReport) -> String {
    let mut s = String::from("expert\\predicted");
    for c in StageClass::ALL {
        let _ = write!(s, "\t{c}");
    }
    s.push('\n');
    for (i, c) in StageClass::ALL.iter().enumerate() {
        let _ = write!(s, "{c}");
        for v in report.confusion.counts[i] {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    s
}
