//! Report documents written by the commands, and their table rendering.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::class_name;
use crate::error::{Error, Result};
use crate::training::metrics::ClassMetrics;
use crate::training::{Metrics, Provenance, SeedRecord};

/// Metrics as they appear in reports: per-class entries keyed by class name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub num_samples: u64,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

impl From<&Metrics> for MetricsReport {
    fn from(m: &Metrics) -> Self {
        Self {
            weighted_f1: m.weighted_f1,
            accuracy: m.accuracy,
            num_samples: m.num_samples,
            per_class: m
                .per_class
                .iter()
                .enumerate()
                .map(|(c, cm)| (class_name(c), cm.clone()))
                .collect(),
            confusion: m.confusion.clone(),
        }
    }
}

/// Test-set results under both inference conditions. `None` marks a
/// condition the model cannot be run in (an audio-only model has no
/// audio+video column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub audio_video: Option<MetricsReport>,
    pub audio: Option<MetricsReport>,
}

impl Inference {
    pub fn av_f1(&self) -> Option<f64> {
        self.audio_video.as_ref().map(|m| m.weighted_f1)
    }

    pub fn a_f1(&self) -> Option<f64> {
        self.audio.as_ref().map(|m| m.weighted_f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub loss_trace: Vec<f64>,
    pub val_f1_trace: Vec<f64>,
}

impl From<&Provenance> for TrainingSummary {
    fn from(p: &Provenance) -> Self {
        Self {
            epochs_run: p.epochs_run,
            best_epoch: p.best_epoch,
            best_val_f1: p.best_val_f1,
            loss_trace: p.loss_trace.clone(),
            val_f1_trace: p.val_f1_trace.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub command: String,
    pub mode: String,
    pub modalities: Vec<String>,
    pub config_hash: String,
    pub seeds: SeedRecord,
    pub parameter_fingerprint: String,
    pub inference: Inference,
    pub training: TrainingSummary,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub command: String,
    pub config_hash: String,
    pub seeds: SeedRecord,
    pub teacher_fingerprint: String,
    pub student_fingerprint: String,
    pub teacher: Inference,
    pub student: Inference,
    pub training: TrainingSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub command: String,
    pub modalities: Vec<String>,
    pub config_hash: String,
    pub seeds: SeedRecord,
    pub parameter_fingerprint: String,
    pub metrics: MetricsReport,
    pub timestamp: u64,
}

/// Mean and standard deviation over repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(Self { mean, std: var.sqrt(), n })
    }

    fn render(&self) -> String {
        if self.n > 1 {
            format!("{:.4} ± {:.4}", self.mean, self.std)
        } else {
            format!("{:.4}", self.mean)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub values: Vec<Option<Stat>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub grid: String,
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Table {
    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Mean of `column` in row `label`, if that cell has a value.
    pub fn value(&self, label: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.row(label)?.values.get(c).copied().flatten().map(|s| s.mean)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n| Model | {} |\n|---|", self.title, self.columns.join(" | "));
        out.push_str(&"---|".repeat(self.columns.len()));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = match &row.error {
                Some(e) => vec![format!("failed: {e}"); self.columns.len()],
                None => row
                    .values
                    .iter()
                    .map(|v| v.map(|s| s.render()).unwrap_or_else(|| "-".into()))
                    .collect(),
            };
            out.push_str(&format!("| {} | {} |\n", row.label, cells.join(" | ")));
        }
        for note in &self.notes {
            out.push_str(&format!("\n{note}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateReport {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<SeedRecord>,
    pub tables: Vec<Table>,
    pub timestamp: u64,
}

impl AblateReport {
    pub fn table(&self, grid: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.grid == grid)
    }
}

pub fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// AV and A inference columns, one row per trained model.
pub fn inference_table(grid: &str, title: &str, rows: Vec<(String, Result<Inference>)>) -> Table {
    Table {
        grid: grid.into(),
        title: title.into(),
        columns: vec!["AV inference".into(), "A inference".into()],
        rows: rows
            .into_iter()
            .map(|(label, r)| match r {
                Ok(inf) => TableRow {
                    label,
                    values: vec![inf.av_f1().and_then(|v| Stat::of(&[v])), inf.a_f1().and_then(|v| Stat::of(&[v]))],
                    error: None,
                },
                Err(e) => TableRow {
                    label,
                    values: vec![None, None],
                    error: Some(e.to_string()),
                },
            })
            .collect(),
        notes: Vec::new(),
    }
}

/// Renders every report JSON found under `dir` (recursively) as markdown.
pub fn render_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_json(dir, &mut files)?;
    files.sort();
    let mut out = String::new();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) else { continue };
        let section = match value.get("command").and_then(|c| c.as_str()) {
            Some("train") => serde_json::from_value::<TrainReport>(value).ok().map(|r| render_train(&r)),
            Some("distill") => serde_json::from_value::<DistillReport>(value).ok().map(|r| render_distill(&r)),
            Some("evaluate") => serde_json::from_value::<EvaluateReport>(value)
                .ok()
                .map(|r| format!("weighted F1 ({}): {:.4}\n", r.modalities.join("+"), r.metrics.weighted_f1)),
            Some("ablate") => serde_json::from_value::<AblateReport>(value)
                .ok()
                .map(|r| r.tables.iter().map(Table::to_markdown).collect::<Vec<_>>().join("\n")),
            _ => None,
        };
        if let Some(section) = section {
            out.push_str(&format!("## {}\n\n{section}\n", path.display()));
        }
    }
    if out.is_empty() {
        return Err(Error::validation("report", format!("no reports found under {}", dir.display())));
    }
    Ok(out)
}

fn collect_json(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "metrics.json" || n == "report.json") {
            out.push(path);
        }
    }
    Ok(())
}

fn fmt_f1(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

pub fn render_train(r: &TrainReport) -> String {
    format!(
        "| Model | AV inference | A inference |\n|---|---|---|\n| {} ({}) | {} | {} |\n",
        r.mode,
        r.modalities.join("+"),
        fmt_f1(r.inference.av_f1()),
        fmt_f1(r.inference.a_f1())
    )
}

pub fn render_distill(r: &DistillReport) -> String {
    let mut out = format!(
        "| | Teacher (AV) | Student (A) |\n|---|---|---|\n| weighted F1 | {} | {} |\n",
        fmt_f1(r.teacher.av_f1()),
        fmt_f1(r.student.a_f1())
    );
    if let Some(note) = &r.note {
        out.push_str(&format!("\n{note}\n"));
    }
    out
}
