//! Report files written by a study run.
//!
//! Layout under the output directory:
//!
//! ```text
//! report.json          full structured report
//! metrics.csv          phase,model,target,r2,rmse,mae,mape
//! repeat.csv           repeated-split mean±std per model and target
//! comparison.md        this run next to published literature values
//! residuals/M_T.csv    test residuals by sample position
//! scatter/M_T.csv      actual vs predicted for both partitions
//! pdp/M_T_F.{csv,json} partial dependence per feature
//! tuning/M_T.json      scaler, folds and every candidate's CV score
//! models/M_T.json      fitted model bundle
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentError, StudyReport, TaskOutcome, TaskReport, METRIC_NAMES};
use crate::dataset::Target;

/// A published result for the same prediction task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteratureRow {
    pub target: Target,
    pub model: String,
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    pub source: String,
}

const SRC_ANN3: &str = "Application of 3-algorithm ANN programming to predict the strength performance of \
hydrated-lime activated rice husk ash treated soil, Multiscale and Multidisciplinary Modeling, Experiments and \
Design 4 (2021) 259-274";
const SRC_ANN_FL: &str = "Comparative modeling of strength properties of hydrated-lime activated rice-husk-ash \
(HARHA) modified soft soil for pavement construction purposes by ANN and fuzzy logic, Jurnal Kejuruteraan 33(2) \
(2021) 365-384";

struct LitStatic {
    target: Target,
    model: &'static str,
    r2: f64,
    rmse: f64,
    mae: f64,
    source: &'static str,
}

const fn lit(target: Target, model: &'static str, r2: f64, rmse: f64, mae: f64, source: &'static str) -> LitStatic {
    LitStatic {
        target,
        model,
        r2,
        rmse,
        mae,
        source,
    }
}

const LITERATURE_STATIC: [LitStatic; 9] = [
    lit(Target::Cbr, "ANN", 0.9994, 1.1900, 0.1649, SRC_ANN3),
    lit(Target::Cbr, "ANN", 0.9987, 0.4346, 0.2987, SRC_ANN_FL),
    lit(Target::Cbr, "Fuzzy Logic", 0.9921, 0.5561, 0.3213, SRC_ANN_FL),
    lit(Target::Ucs, "ANN", 0.9350, 1.1900, 1.2700, SRC_ANN3),
    lit(Target::Ucs, "ANN", 0.9992, 0.5570, 1.3230, SRC_ANN_FL),
    lit(Target::Ucs, "Fuzzy Logic", 0.9981, 0.8152, 0.3145, SRC_ANN_FL),
    lit(Target::R, "ANN", 0.9900, 1.1900, 0.0380, SRC_ANN3),
    lit(Target::R, "ANN", 0.9970, 0.2545, 0.2033, SRC_ANN_FL),
    lit(Target::R, "Fuzzy Logic", 0.9810, 0.6251, 0.4852, SRC_ANN_FL),
];

/// Published literature values on the 121-sample soil dataset. These are
/// static reference numbers, not reproduced by this crate.
pub fn literature() -> Vec<LiteratureRow> {
    LITERATURE_STATIC
        .iter()
        .map(|l| LiteratureRow {
            target: l.target,
            model: l.model.to_string(),
            r2: l.r2,
            rmse: l.rmse,
            mae: l.mae,
            source: l.source.to_string(),
        })
        .collect()
}

fn stem(t: &TaskReport) -> String {
    format!("{}_{}", t.model.slug(), t.target.slug())
}

fn write(stage: &'static str, path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(stage, dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| ExperimentError::io(stage, path, e))
}

/// metrics.csv content: one train and one test row per task.
pub fn metrics_csv(study: &StudyReport) -> String {
    let mut out = String::from("phase,model,target,r2,rmse,mae,mape\n");
    for t in &study.tasks {
        for (phase, r) in [("train", &t.train), ("test", &t.test)] {
            let _ = writeln!(
                out,
                "{phase},{},{},{},{},{},{}",
                t.model.slug(),
                t.target.slug(),
                r.r2,
                r.rmse,
                r.mae,
                r.mape
            );
        }
    }
    out
}

pub fn residuals_csv(t: &TaskReport) -> String {
    let mut out = String::from("sample_index,row_id,actual,predicted,residual\n");
    let test = t.scatter.iter().filter(|p| p.phase == super::Phase::Test);
    for (i, (p, r)) in test.zip(&t.test.residuals).enumerate() {
        let _ = writeln!(out, "{i},{},{},{},{}", r.row_id, p.actual, p.predicted, r.error);
    }
    out
}

pub fn scatter_csv(t: &TaskReport) -> String {
    let mut out = String::from("phase,row_id,actual,predicted\n");
    for p in &t.scatter {
        let _ = writeln!(out, "{},{},{},{}", p.phase.name(), p.row_id, p.actual, p.predicted);
    }
    out
}

pub fn repeat_csv(study: &StudyReport) -> String {
    let mut out = String::from("model,target,runs");
    for m in METRIC_NAMES {
        let _ = write!(out, ",{m}");
    }
    out.push('\n');
    for r in &study.repeat {
        let _ = write!(out, "{},{},{}", r.model.slug(), r.target.slug(), r.runs.len());
        for m in METRIC_NAMES {
            let _ = write!(out, ",{}", r.formatted[m]);
        }
        out.push('\n');
    }
    out
}

/// comparison.md: this run's test metrics next to published values.
pub fn comparison_md(study: &StudyReport) -> String {
    let mut sources: Vec<&str> = Vec::new();
    for l in &study.literature {
        if !sources.contains(&l.source.as_str()) {
            sources.push(&l.source);
        }
    }
    let mut out = String::from("# Test-set comparison\n\n");
    if study.partial {
        out.push_str("**Partial run:** at least one task did not converge; see `failures` in report.json.\n\n");
    }
    for target in Target::ALL {
        let tasks: Vec<&TaskReport> = study.tasks.iter().filter(|t| t.target == target).collect();
        let lit: Vec<&LiteratureRow> = study.literature.iter().filter(|l| l.target == target).collect();
        if tasks.is_empty() && lit.is_empty() {
            continue;
        }
        let _ = writeln!(out, "## {}\n", target.name());
        out.push_str("| Origin | Model | R2 | RMSE | MAE | MAPE |\n|---|---|---|---|---|---|\n");
        for t in tasks {
            let r = &t.test;
            let _ = writeln!(
                out,
                "| this run (seed {}) | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                t.seed,
                t.model.slug(),
                r.r2,
                r.rmse,
                r.mae,
                r.mape
            );
        }
        for r in study.repeat.iter().filter(|r| r.target == target) {
            let f = &r.formatted;
            let _ = writeln!(
                out,
                "| this run, {} splits | {} | {} | {} | {} | {} |",
                r.runs.len(),
                r.model.slug(),
                f["r2"],
                f["rmse"],
                f["mae"],
                f["mape"]
            );
        }
        for l in lit {
            let _ = writeln!(
                out,
                "| literature [{}], not reproduced by this artifact | {} | {:.4} | {:.4} | {:.4} | - |",
                sources.iter().position(|s| *s == l.source).expect("source listed") + 1,
                l.model,
                l.r2,
                l.rmse,
                l.mae
            );
        }
        out.push('\n');
    }
    if !sources.is_empty() {
        out.push_str("Literature sources (values quoted, not reproduced by this artifact):\n\n");
        for (i, s) in sources.iter().enumerate() {
            let _ = writeln!(out, "{}. {s}", i + 1);
        }
    }
    out
}

/// Writes report.json, metrics.csv, repeat.csv, comparison.md and the
/// per-task residual, scatter and partial dependence files.
pub fn emit_report(study: &StudyReport, dir: impl AsRef<Path>) -> Result<(), ExperimentError> {
    let dir = dir.as_ref();
    let stage = "report";
    write(stage, &dir.join("report.json"), &study.to_json())?;
    write(stage, &dir.join("metrics.csv"), &metrics_csv(study))?;
    write(stage, &dir.join("comparison.md"), &comparison_md(study))?;
    if !study.repeat.is_empty() {
        write(stage, &dir.join("repeat.csv"), &repeat_csv(study))?;
    }
    for t in &study.tasks {
        let s = stem(t);
        write(stage, &dir.join("residuals").join(format!("{s}.csv")), &residuals_csv(t))?;
        write(stage, &dir.join("scatter").join(format!("{s}.csv")), &scatter_csv(t))?;
        for c in &t.pdp {
            let base = dir.join("pdp").join(format!("{s}_{}", c.feature));
            write(stage, &base.with_extension("csv"), &c.to_csv_string())?;
            let json = serde_json::to_string_pretty(c).expect("curve serializes") + "\n";
            write(stage, &base.with_extension("json"), &json)?;
        }
    }
    Ok(())
}

/// Writes tuning/M_T.json and models/M_T.json for one task.
pub fn write_task_artifacts(out: &TaskOutcome, dir: impl AsRef<Path>) -> Result<(), ExperimentError> {
    let dir = dir.as_ref();
    let s = stem(&out.report);
    let tuning = serde_json::to_string_pretty(&out.tuning).expect("tuning serializes") + "\n";
    write("tune", &dir.join("tuning").join(format!("{s}.json")), &tuning)?;
    let model = serde_json::to_string_pretty(&out.bundle).expect("model serializes") + "\n";
    write("train", &dir.join("models").join(format!("{s}.json")), &model)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literature_values() {
        let lit = literature();
        assert_eq!(lit.len(), 9);
        let cbr_ann: Vec<f64> = lit
            .iter()
            .filter(|l| l.target == Target::Cbr && l.model == "ANN")
            .map(|l| l.r2)
            .collect();
        assert_eq!(cbr_ann, vec![0.9994, 0.9987]);
        let r_fuzzy = lit.iter().find(|l| l.target == Target::R && l.model == "Fuzzy Logic").unwrap();
        assert_eq!((r_fuzzy.r2, r_fuzzy.rmse, r_fuzzy.mae), (0.9810, 0.6251, 0.4852));
    }
}
