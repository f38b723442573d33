//! The experiment commands as library functions. Each writes its artifacts
//! under `out` and returns the report it wrote.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::{
    inference_table, render_distill, render_train, timestamp, write_json, AblateReport, DistillReport, EvaluateReport, Inference,
    MetricsReport, Stat, Table, TableRow, TrainReport, TrainingSummary,
};
use crate::corpus::{generate_splits, read_dataset, write_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::network::{Modality, ModelConfig};
use crate::training::{self, checkpoint, Metrics, StudentConfig, TrainConfig, TrainMode, TrainedModel};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub force: bool,
    pub repeats: usize,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            force: false,
            repeats: 1,
        }
    }
}

const AV: [Modality; 2] = [Modality::Audio, Modality::Video];
const A: [Modality; 1] = [Modality::Audio];

fn modality_names(ms: &[Modality]) -> Vec<String> {
    ms.iter().map(|m| m.as_str().to_string()).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Refuses to overwrite any of `files` in `dir` unless `force` is set.
fn guard(dir: &Path, files: &[&str], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    if let Some(f) = files.iter().map(|f| dir.join(f)).find(|p| p.exists()) {
        return Err(Error::validation(
            "out",
            format!("{} already exists; pass --force to overwrite", f.display()),
        ));
    }
    Ok(())
}

fn split_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

/// Train / val / test splits: read from `data_dir` when set, otherwise
/// generated from the synthetic section.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<[Dataset; 3]> {
    match &cfg.data_dir {
        Some(dir) => Ok([
            read_dataset(split_file(dir, Split::Train))?,
            read_dataset(split_file(dir, Split::Val))?,
            read_dataset(split_file(dir, Split::Test))?,
        ]),
        None => generate_splits(&cfg.synth, cfg.splits.train, cfg.splits.val, cfg.splits.test),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: String,
    pub path: String,
    pub conversations: usize,
    pub utterances: usize,
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub audio_dim: usize,
    pub video_dim: usize,
    pub num_classes: usize,
    pub splits: Vec<SplitSummary>,
}

impl GenerateSummary {
    pub fn render(&self) -> String {
        let mut out = format!(
            "audio_dim {}, video_dim {}, {} classes\n",
            self.audio_dim, self.video_dim, self.num_classes
        );
        for s in &self.splits {
            let counts: Vec<String> = s.class_counts.iter().map(usize::to_string).collect();
            out.push_str(&format!(
                "{:<5} {:>4} conversations {:>5} utterances  classes [{}]  -> {}\n",
                s.split,
                s.conversations,
                s.utterances,
                counts.join(", "),
                s.path
            ));
        }
        out
    }
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<GenerateSummary> {
    cfg.validate()?;
    guard(out, &["train.jsonl", "val.jsonl", "test.jsonl"], force)?;
    create_dir(out)?;
    let splits = generate_splits(&cfg.synth, cfg.splits.train, cfg.splits.val, cfg.splits.test)?;
    let mut summaries = Vec::new();
    for ds in &splits {
        let split = ds.header.split.unwrap_or(Split::Train);
        let path = split_file(out, split);
        write_dataset(ds, &path)?;
        summaries.push(SplitSummary {
            split: split.to_string(),
            path: path.display().to_string(),
            conversations: ds.conversations.len(),
            utterances: ds.num_utterances(),
            class_counts: ds.class_counts(),
        });
    }
    Ok(GenerateSummary {
        audio_dim: cfg.synth.audio_dim,
        video_dim: cfg.synth.video_dim,
        num_classes: cfg.synth.num_classes,
        splits: summaries,
    })
}

/// Test metrics of `model` with all modalities and with audio alone, where
/// the model can be run that way.
pub fn infer(model: &TrainedModel, test: &Dataset) -> Result<(Option<Metrics>, Option<Metrics>)> {
    let c = model.config();
    let data = training::prepare(test, c, &model.graph)?;
    let av = if c.uses(Modality::Audio) && c.uses(Modality::Video) {
        Some(training::evaluate_prepared(&model.network, &data, &AV)?)
    } else {
        None
    };
    let a = if c.uses(Modality::Audio) {
        Some(training::evaluate_prepared(&model.network, &data, &A)?)
    } else {
        None
    };
    Ok((av, a))
}

fn inference_of(av: &Option<Metrics>, a: &Option<Metrics>) -> Inference {
    Inference {
        audio_video: av.as_ref().map(MetricsReport::from),
        audio: a.as_ref().map(MetricsReport::from),
    }
}

fn write_confusions(dir: &Path, entries: &[(&str, &Option<Metrics>)]) -> Result<()> {
    for (name, m) in entries {
        if let Some(m) = m {
            write_text(&dir.join(format!("confusion_{name}.csv")), &m.confusion_csv())?;
        }
    }
    Ok(())
}

const TRAIN_FILES: [&str; 2] = ["checkpoint.json", "metrics.json"];

fn train_into(
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
    splits: &[Dataset; 3],
    dir: &Path,
    force: bool,
) -> Result<(TrainedModel, TrainReport)> {
    guard(dir, &TRAIN_FILES, force)?;
    let [train_set, val, test] = splits;
    let model = training::train(train_set, val, train_cfg)?;
    let report = write_train_artifacts(cfg, train_cfg, &model, test, dir)?;
    Ok((model, report))
}

fn write_train_artifacts(
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
    model: &TrainedModel,
    test: &Dataset,
    dir: &Path,
) -> Result<TrainReport> {
    let (av, a) = infer(model, test)?;
    create_dir(dir)?;
    checkpoint::save(model, &dir.join("checkpoint.json"))?;
    let report = TrainReport {
        command: "train".into(),
        mode: train_cfg.mode.as_str().into(),
        modalities: modality_names(&train_cfg.model.modalities),
        config_hash: training::hash_json(&(cfg, train_cfg)),
        seeds: train_cfg.seed_record(),
        parameter_fingerprint: model.fingerprint(),
        inference: inference_of(&av, &a),
        training: TrainingSummary::from(&model.provenance),
        timestamp: timestamp(),
    };
    write_json(&report, &dir.join("metrics.json"))?;
    write_confusions(dir, &[("av", &av), ("a", &a)])?;
    write_text(&dir.join("report.md"), &render_train(&report))?;
    Ok(report)
}

/// Trains one model per repeat. With one repeat the artifacts go straight
/// into `opts.out`, otherwise into `repeat_<k>` subdirectories plus a
/// `summary.json` table.
pub fn cmd_train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<TrainReport>> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    if opts.repeats <= 1 {
        let (_, report) = train_into(cfg, &cfg.train_config(), &splits, &opts.out, opts.force)?;
        return Ok(vec![report]);
    }
    let mut reports = Vec::new();
    for k in 0..opts.repeats {
        let c = cfg.with_seeds(cfg.seeds.offset(k as u64));
        let (_, r) = train_into(&c, &c.train_config(), &splits, &opts.out.join(format!("repeat_{k}")), opts.force)?;
        reports.push(r);
    }
    let stat = |f: &dyn Fn(&TrainReport) -> Option<f64>| Stat::of(&reports.iter().filter_map(f).collect::<Vec<_>>());
    let table = Table {
        grid: "repeats".into(),
        title: format!("{} training over {} seeds", cfg.train.mode.as_str(), opts.repeats),
        columns: vec!["AV inference".into(), "A inference".into()],
        rows: vec![TableRow {
            label: format!("{} ({})", cfg.train.mode.as_str(), modality_names(&cfg.model.modalities).join("+")),
            values: vec![stat(&|r| r.inference.av_f1()), stat(&|r| r.inference.a_f1())],
            error: None,
        }],
        notes: Vec::new(),
    };
    write_json(&table, &opts.out.join("summary.json"))?;
    Ok(reports)
}

fn distill_into(
    cfg: &ExperimentConfig,
    teacher: &TrainedModel,
    student_cfg: &StudentConfig,
    splits: &[Dataset; 3],
    dir: &Path,
    force: bool,
) -> Result<(TrainedModel, DistillReport)> {
    guard(dir, &TRAIN_FILES, force)?;
    let [train_set, val, test] = splits;
    let student = training::distill(teacher, train_set, val, student_cfg)?;
    let (t_av, t_a) = infer(teacher, test)?;
    let (s_av, s_a) = infer(&student, test)?;
    create_dir(dir)?;
    checkpoint::save(&student, &dir.join("checkpoint.json"))?;
    let report = DistillReport {
        command: "distill".into(),
        config_hash: training::hash_json(&(cfg, student_cfg, teacher.fingerprint())),
        seeds: student.provenance.seeds,
        teacher_fingerprint: teacher.fingerprint(),
        student_fingerprint: student.fingerprint(),
        teacher: inference_of(&t_av, &t_a),
        student: inference_of(&s_av, &s_a),
        training: TrainingSummary::from(&student.provenance),
        note: (student_cfg.distill.alpha1 == 0.0).then(|| "no distillation signal (alpha1 = 0)".to_string()),
        timestamp: timestamp(),
    };
    write_json(&report, &dir.join("metrics.json"))?;
    write_confusions(dir, &[("teacher_av", &t_av), ("student_a", &s_a)])?;
    write_text(&dir.join("report.md"), &render_distill(&report))?;
    Ok((student, report))
}

pub fn cmd_distill(cfg: &ExperimentConfig, teacher_ckpt: &Path, opts: &RunOptions) -> Result<DistillReport> {
    cfg.validate()?;
    let teacher = checkpoint::load(teacher_ckpt)?;
    let splits = load_splits(cfg)?;
    let (_, report) = distill_into(cfg, &teacher, &cfg.student_config(), &splits, &opts.out, opts.force)?;
    Ok(report)
}

pub fn cmd_evaluate(checkpoint_path: &Path, dataset: &Path, modalities: &[Modality], opts: &RunOptions) -> Result<EvaluateReport> {
    guard(&opts.out, &["metrics.json"], opts.force)?;
    let model = checkpoint::load(checkpoint_path)?;
    let test = read_dataset(dataset)?;
    let metrics = training::evaluate(&model, &test, modalities)?;
    create_dir(&opts.out)?;
    let report = EvaluateReport {
        command: "evaluate".into(),
        modalities: modality_names(modalities),
        config_hash: model.provenance.config_hash.clone(),
        seeds: model.provenance.seeds,
        parameter_fingerprint: model.fingerprint(),
        metrics: MetricsReport::from(&metrics),
        timestamp: timestamp(),
    };
    write_json(&report, &opts.out.join("metrics.json"))?;
    write_text(&opts.out.join("confusion.csv"), &metrics.confusion_csv())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// Teacher/student pairs over context-encoder and graph-transformer depth.
    Depth,
    /// Audio baseline, audio+video baseline and masked training.
    Masking,
    /// The masking grid on self-loop-only graphs, plus masked audio-only.
    Disjoint,
}

impl Grid {
    pub const ALL: [Grid; 3] = [Grid::Depth, Grid::Masking, Grid::Disjoint];

    pub fn as_str(self) -> &'static str {
        match self {
            Grid::Depth => "depth",
            Grid::Masking => "masking",
            Grid::Disjoint => "disjoint",
        }
    }

    /// Comma-separated grid names; `all` selects every grid.
    pub fn parse_list(s: &str) -> Result<Vec<Grid>> {
        let mut grids = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "all" => grids.extend(Grid::ALL),
                "depth" => grids.push(Grid::Depth),
                "masking" => grids.push(Grid::Masking),
                "disjoint" => grids.push(Grid::Disjoint),
                other => return Err(Error::validation("grid", format!("unknown grid {other:?}"))),
            }
        }
        grids.dedup();
        if grids.is_empty() {
            return Err(Error::validation("grid", "empty grid"));
        }
        Ok(grids)
    }
}

/// Trained models keyed by training-config hash, so cells that share a
/// configuration (the depth teacher and the masking AV baseline) train once.
struct Cache<'a> {
    cfg: &'a ExperimentConfig,
    splits: &'a [Dataset; 3],
    out: &'a Path,
    force: bool,
    models: HashMap<String, (TrainedModel, TrainReport)>,
}

impl Cache<'_> {
    fn train(&mut self, train_cfg: &TrainConfig, cell: &str) -> Result<(TrainedModel, TrainReport)> {
        let key = train_cfg.hash();
        if let Some(hit) = self.models.get(&key) {
            return Ok(hit.clone());
        }
        let hit = train_into(self.cfg, train_cfg, self.splits, &self.out.join(cell), self.force)?;
        self.models.insert(key, hit.clone());
        Ok(hit)
    }
}

fn train_variant(base: &TrainConfig, mode: TrainMode, modalities: &[Modality], disjoint: bool) -> TrainConfig {
    let mut c = base.clone();
    c.mode = mode;
    c.model.modalities = modalities.to_vec();
    c.graph.disjoint = disjoint;
    c
}

fn single(v: Option<f64>) -> Option<Stat> {
    v.and_then(|v| Stat::of(&[v]))
}

fn merge_repeats(tables: Vec<Table>) -> Table {
    let mut merged = tables[0].clone();
    for (ri, row) in merged.rows.iter_mut().enumerate() {
        let runs: Vec<&TableRow> = tables.iter().map(|t| &t.rows[ri]).collect();
        row.error = runs.iter().find_map(|r| r.error.clone());
        row.values = (0..row.values.len())
            .map(|ci| Stat::of(&runs.iter().filter_map(|r| r.values[ci].map(|s| s.mean)).collect::<Vec<_>>()))
            .collect();
    }
    if tables.len() > 1 {
        merged.notes = vec![format!("mean ± std over {} seeds", tables.len())];
    }
    merged
}

fn depth_table(cache: &mut Cache<'_>, base: &TrainConfig, cell_prefix: &str) -> Table {
    let teacher_cfg = train_variant(base, TrainMode::Baseline, &AV, base.graph.disjoint);
    let teacher = cache.train(&teacher_cfg, &format!("{cell_prefix}teacher"));
    let s = base.model.seq_context_layers;
    let g = base.model.gnn_layers;
    let mut rows = Vec::new();
    let mut student_f1 = Vec::new();
    for (sc, gnn) in [(s, g), (2, g), (s, 3)] {
        let label = format!("SeqContext {sc}, GNN {gnn}");
        let result = teacher.as_ref().map_err(|e| Error::Config(format!("teacher failed: {e}"))).and_then(|(t, t_report)| {
            let student_cfg = StudentConfig {
                model: ModelConfig {
                    modalities: A.to_vec(),
                    seq_context_layers: sc,
                    gnn_layers: gnn,
                    ..t.config().clone()
                },
                ..cache.cfg.student_config()
            };
            let dir = cache.out.join(format!("{cell_prefix}student_sc{sc}_gnn{gnn}"));
            let (_, r) = distill_into(cache.cfg, t, &student_cfg, cache.splits, &dir, cache.force)?;
            Ok((t_report.inference.av_f1(), r.student.a_f1()))
        });
        match result {
            Ok((t, st)) => {
                student_f1.push(st);
                rows.push(TableRow {
                    label,
                    values: vec![single(t), single(st)],
                    error: None,
                })
            }
            Err(e) => {
                student_f1.push(None);
                rows.push(TableRow {
                    label,
                    values: vec![None, None],
                    error: Some(e.to_string()),
                })
            }
        }
    }
    let mut notes = Vec::new();
    if let [Some(full), Some(sc2), Some(g3)] = student_f1[..] {
        let (d_sc, d_g) = (full - sc2, full - g3);
        let order = if d_sc >= d_g { ">=" } else { "<" };
        notes.push(format!(
            "student drop from SeqContext reduction {d_sc:.4} {order} drop from GNN reduction {d_g:.4}"
        ));
    }
    Table {
        grid: Grid::Depth.as_str().into(),
        title: "Teacher (AV) vs distilled student (A) by depth".into(),
        columns: vec!["Teacher AV F1".into(), "Student A F1".into()],
        rows,
        notes,
    }
}

fn masking_table(cache: &mut Cache<'_>, base: &TrainConfig, disjoint: bool) -> Table {
    let prefix = if disjoint { "disjoint_" } else { "" };
    let mut cells = vec![
        ("baseline (A)", train_variant(base, TrainMode::Baseline, &A, disjoint), "baseline_a"),
        ("baseline (AV)", train_variant(base, TrainMode::Baseline, &AV, disjoint), "baseline_av"),
        ("masked (AV)", train_variant(base, TrainMode::Masked, &AV, disjoint), "masked_av"),
    ];
    if disjoint {
        cells.push(("masked (A)", train_variant(base, TrainMode::MaskedUnimodal, &A, disjoint), "masked_a"));
    }
    let rows = cells
        .into_iter()
        .map(|(label, c, cell)| {
            let r = cache.train(&c, &format!("{prefix}{cell}")).map(|(_, r)| r.inference);
            (label.to_string(), r)
        })
        .collect();
    let (grid, title) = if disjoint {
        (Grid::Disjoint, "Masked training with a disjoint utterance graph")
    } else {
        (Grid::Masking, "Masked training vs baselines")
    };
    inference_table(grid.as_str(), title, rows)
}

/// Runs the named grids, recording any failed cell in its table row.
pub fn cmd_ablate(cfg: &ExperimentConfig, grids: &[Grid], opts: &RunOptions) -> Result<AblateReport> {
    cfg.validate()?;
    if grids.is_empty() {
        return Err(Error::validation("grid", "empty grid"));
    }
    guard(&opts.out, &["report.json"], opts.force)?;
    let splits = load_splits(cfg)?;
    let repeats = opts.repeats.max(1);
    let mut per_grid: Vec<Vec<Table>> = vec![Vec::new(); grids.len()];
    let mut seeds = Vec::new();
    for k in 0..repeats {
        let c = cfg.with_seeds(cfg.seeds.offset(k as u64));
        let base = c.train_config();
        seeds.push(base.seed_record());
        let out = if repeats > 1 { opts.out.join(format!("repeat_{k}")) } else { opts.out.clone() };
        let mut cache = Cache {
            cfg: &c,
            splits: &splits,
            out: &out,
            force: opts.force,
            models: HashMap::new(),
        };
        for (gi, grid) in grids.iter().enumerate() {
            let base = TrainConfig {
                graph: crate::graph::GraphConfig {
                    disjoint: false,
                    ..base.graph
                },
                ..base.clone()
            };
            let table = match grid {
                Grid::Depth => depth_table(&mut cache, &base, "depth_"),
                Grid::Masking => masking_table(&mut cache, &base, false),
                Grid::Disjoint => masking_table(&mut cache, &base, true),
            };
            per_grid[gi].push(table);
        }
    }
    let report = AblateReport {
        command: "ablate".into(),
        config_hash: cfg.hash(),
        seeds,
        tables: per_grid.into_iter().map(merge_repeats).collect(),
        timestamp: timestamp(),
    };
    create_dir(&opts.out)?;
    write_json(&report, &opts.out.join("report.json"))?;
    let md: Vec<String> = report.tables.iter().map(Table::to_markdown).collect();
    write_text(&opts.out.join("report.md"), &md.join("\n"))?;
    Ok(report)
}
