//! Detection metrics and the train-on-X / test-on-Y experiment matrix.
//!
//! Cloudy is the positive class. The matrix has three test columns,
//! CloudSEN12 S2/RGB, SPARCS L8/RGB and SPARCS L8/B6-B4, and these rows:
//!
//! | row | method        | trained on (per column)            |
//! |-----|---------------|------------------------------------|
//! | 1   | text prompts  | zero-shot                          |
//! | 2a  | linear probe  | S2/RGB                             |
//! | 3a  | CoOp          | S2/RGB                             |
//! | 4a  | radar         | S2/RGB+SAR, CloudSEN12 column only |
//! | 2b  | linear probe  | L8/B6-B4, L8/RGB, L8/B6-B4         |
//! | 3b  | CoOp          | L8/B6-B4, L8/RGB, L8/B6-B4         |

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coop::{coop_prompt_pair, train_coop, CoopConfig};
use crate::encoder::Embedding;
use crate::ingest::{DatasetKind, LabelThresholds, Modality, Radiometry, Split};
use crate::pipeline::{labeled_pairs, EmbeddedScene};
use crate::probe::{fuse_radar_features, predict_probe, train_probe, TrainConfig};
use crate::tensorstore::{fnv1a64, TensorArchive};
use crate::tokenizer::Vocabulary;
use crate::verdict::Label;
use crate::zeroshot::{classify_zero_shot, PromptPair};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts with Clear treated as the positive class.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionCounts, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (p, l) in predictions.iter().zip(labels) {
        match (p, l) {
            (Label::Cloudy, Label::Cloudy) => c.tp += 1,
            (Label::Cloudy, Label::Clear) => c.fp += 1,
            (Label::Clear, Label::Clear) => c.tn += 1,
            (Label::Clear, Label::Cloudy) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Which ratios had a zero denominator. The matching value is NaN.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    pub tpr: bool,
    pub tnr: bool,
    pub precision: bool,
    pub f1: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.tpr || self.tnr || self.precision || self.f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tpr: f64,
    pub tnr: f64,
    pub precision: f64,
    pub f1: f64,
    pub degenerate: Degenerate,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (f64::NAN, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let (tpr, d_tpr) = ratio(c.tp, c.tp + c.fn_);
    let (tnr, d_tnr) = ratio(c.tn, c.tn + c.fp);
    let (precision, d_prec) = ratio(c.tp, c.tp + c.fp);
    let d_f1 = d_tpr || d_prec || precision + tpr == 0.0;
    let f1 = if d_f1 {
        f64::NAN
    } else {
        2.0 * precision * tpr / (precision + tpr)
    };
    Metrics {
        tpr,
        tnr,
        precision,
        f1,
        degenerate: Degenerate {
            tpr: d_tpr,
            tnr: d_tnr,
            precision: d_prec,
            f1: d_f1,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TextPrompts,
    LinearProbe,
    Coop,
    Radar,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::TextPrompts, Method::LinearProbe, Method::Coop, Method::Radar];

    pub fn tag(self) -> &'static str {
        match self {
            Method::TextPrompts => "text-prompts",
            Method::LinearProbe => "linear-probe",
            Method::Coop => "coop",
            Method::Radar => "radar",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Method::TextPrompts => "Text Prompts",
            Method::LinearProbe => "Linear Probe",
            Method::Coop => "CoOp",
            Method::Radar => "Radar",
        }
    }

    fn number(self) -> u8 {
        match self {
            Method::TextPrompts => 1,
            Method::LinearProbe => 2,
            Method::Coop => 3,
            Method::Radar => 4,
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Method>, String> {
        if s.trim() == "all" {
            return Ok(Method::ALL.to_vec());
        }
        s.split(',')
            .map(|t| match t.trim() {
                "text-prompts" | "zeroshot" | "zero-shot" => Ok(Method::TextPrompts),
                "linear-probe" | "probe" => Ok(Method::LinearProbe),
                "coop" => Ok(Method::Coop),
                "radar" => Ok(Method::Radar),
                other => Err(format!("unknown method `{other}`")),
            })
            .collect()
    }
}

/// One test column of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TestColumn {
    pub dataset: DatasetKind,
    pub modality: Modality,
}

pub const TEST_COLUMNS: [TestColumn; 3] = [
    TestColumn {
        dataset: DatasetKind::Cloudsen12,
        modality: Modality::S2Rgb,
    },
    TestColumn {
        dataset: DatasetKind::Sparcs,
        modality: Modality::L8Rgb,
    },
    TestColumn {
        dataset: DatasetKind::Sparcs,
        modality: Modality::L8B6B5B4,
    },
];

/// What a cell's model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrainSource {
    ZeroShot,
    Optical(DatasetKind, Modality),
    /// Optical modality fused with the SAR composite of the same scenes.
    Fused(DatasetKind, Modality),
}

impl TrainSource {
    pub fn tag(&self) -> String {
        match self {
            TrainSource::ZeroShot => "zero-shot".into(),
            TrainSource::Optical(_, m) => m.tag().into(),
            TrainSource::Fused(_, m) => format!("{m}+SAR"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowGroup {
    /// Zero-shot row.
    Base,
    /// Trained on Sentinel-2.
    A,
    /// Trained on Landsat-8.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub group: RowGroup,
    pub method: Method,
    pub train: TrainSource,
    pub test: TestColumn,
}

impl Cell {
    pub fn row_label(&self) -> String {
        let suffix = match self.group {
            RowGroup::Base => "",
            RowGroup::A => "a",
            RowGroup::B => "b",
        };
        format!("{}{suffix}. {}", self.method.number(), self.method.title())
    }

    pub fn applicable(&self) -> bool {
        match self.train {
            TrainSource::Fused(d, _) => self.test.dataset == d,
            _ => true,
        }
    }
}

/// Cells of the table for `methods`, in table order.
pub fn table_cells(methods: &[Method]) -> Vec<Cell> {
    let mut cells = Vec::new();
    let s2 = TrainSource::Optical(DatasetKind::Cloudsen12, Modality::S2Rgb);
    for &method in methods {
        for test in TEST_COLUMNS {
            let (group, train) = match method {
                Method::TextPrompts => (RowGroup::Base, TrainSource::ZeroShot),
                Method::Radar => (RowGroup::A, TrainSource::Fused(DatasetKind::Cloudsen12, Modality::S2Rgb)),
                _ => (RowGroup::A, s2),
            };
            cells.push(Cell {
                group,
                method,
                train,
                test,
            });
        }
        if matches!(method, Method::LinearProbe | Method::Coop) {
            for test in TEST_COLUMNS {
                let train_modality = if test.modality == Modality::L8Rgb {
                    Modality::L8Rgb
                } else {
                    Modality::L8B6B5B4
                };
                cells.push(Cell {
                    group: RowGroup::B,
                    method,
                    train: TrainSource::Optical(DatasetKind::Sparcs, train_modality),
                    test,
                });
            }
        }
    }
    cells.sort_by_key(|c| (c.group, c.method, c.test));
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok { counts: ConfusionCounts, metrics: Metrics },
    NotApplicable,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub row: String,
    pub method: Method,
    pub train_modality: String,
    pub test_dataset: String,
    pub test_modality: String,
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub outcome: CellOutcome,
    pub config_fingerprint: String,
    #[serde(skip)]
    pub cell: Option<Cell>,
}

impl MetricsReport {
    pub fn metrics(&self) -> Option<&Metrics> {
        match &self.outcome {
            CellOutcome::Ok { metrics, .. } => Some(metrics),
            _ => None,
        }
    }
}

/// Every parameter a reported number depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub prompts: [String; 2],
    pub probe: TrainConfig,
    pub coop: CoopConfig,
    pub radiometry: Radiometry,
    pub thresholds: LabelThresholds,
    pub model_id: String,
}

impl MatrixConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            seeds: vec![0],
            prompts: [
                crate::zeroshot::DEFAULT_POSITIVE_PROMPT.into(),
                crate::zeroshot::DEFAULT_NEGATIVE_PROMPT.into(),
            ],
            probe: TrainConfig::default(),
            coop: CoopConfig::default(),
            radiometry: Radiometry::default(),
            thresholds: LabelThresholds::default(),
            model_id: model_id.into(),
        }
    }

    /// Hex FNV-1a of the cell, seed and every setting that affects it.
    pub fn fingerprint(&self, cell: &Cell, seed: Option<u64>) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            cell: &'a Cell,
            seed: Option<u64>,
            prompts: &'a [String; 2],
            probe: &'a TrainConfig,
            coop: &'a CoopConfig,
            radiometry: &'a Radiometry,
            thresholds: &'a LabelThresholds,
            model_id: &'a str,
        }
        let key = Key {
            cell,
            seed,
            prompts: &self.prompts,
            probe: &self.probe,
            coop: &self.coop,
            radiometry: &self.radiometry,
            thresholds: &self.thresholds,
            model_id: &self.model_id,
        };
        let json = serde_json::to_vec(&key).expect("fingerprint key serializes");
        format!("{:016x}", fnv1a64(&json))
    }
}

/// Precomputed embeddings per dataset and modality.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    sets: BTreeMap<(DatasetKind, Modality), Vec<EmbeddedScene>>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dataset: DatasetKind, modality: Modality, scenes: Vec<EmbeddedScene>) {
        self.sets.insert((dataset, modality), scenes);
    }

    pub fn get(&self, dataset: DatasetKind, modality: Modality) -> Result<&[EmbeddedScene], String> {
        self.sets
            .get(&(dataset, modality))
            .map(Vec::as_slice)
            .ok_or_else(|| format!("no {} {modality} embeddings", dataset.display_name()))
    }

    /// Labeled samples of `split` for a training source, ordered by scene id.
    fn samples(&self, source: &TrainSource, split: Split) -> Result<Vec<(Vec<f32>, Label)>, String> {
        match *source {
            TrainSource::ZeroShot => Ok(Vec::new()),
            TrainSource::Optical(d, m) => Ok(labeled_pairs(self.get(d, m)?, split)),
            TrainSource::Fused(d, m) => {
                let optical = labeled_pairs_by_id(self.get(d, m)?, split);
                let sar = labeled_pairs_by_id(self.get(d, Modality::S1SarFc)?, split);
                let mut out = Vec::with_capacity(optical.len());
                for (id, (emb, label)) in &optical {
                    let Some((s, _)) = sar.get(id) else {
                        return Err(format!("scene `{id}` has no SAR embedding"));
                    };
                    out.push((fuse_radar_features(emb, s).map_err(|e| e.to_string())?, *label));
                }
                Ok(out)
            }
        }
    }
}

fn labeled_pairs_by_id(scenes: &[EmbeddedScene], split: Split) -> BTreeMap<String, (Embedding, Label)> {
    scenes
        .iter()
        .filter(|s| s.split == split)
        .filter_map(|s| s.label.map(|l| (s.id.clone(), (s.embedding.clone(), l))))
        .collect()
}

/// Trained classifier for a group of cells.
enum Classifier {
    Prompts(PromptPair),
    Probe(crate::probe::ProbeModel),
}

impl Classifier {
    fn predict(&self, x: &[f32]) -> Result<Label, String> {
        match self {
            Classifier::Prompts(p) => classify_zero_shot(&Embedding::new(x.to_vec()), p)
                .map(|v| v.label)
                .map_err(|e| e.to_string()),
            Classifier::Probe(m) => predict_probe(m, x).map(|v| v.label).map_err(|e| e.to_string()),
        }
    }
}

fn train_classifier(
    method: Method,
    source: &TrainSource,
    seed: u64,
    table: &EmbeddingTable,
    config: &MatrixConfig,
    vocab: &Vocabulary,
    archive: &TensorArchive,
) -> Result<Classifier, String> {
    match method {
        Method::TextPrompts => PromptPair::encode(&config.prompts[0], &config.prompts[1], vocab, archive)
            .map(Classifier::Prompts)
            .map_err(|e| e.to_string()),
        Method::LinearProbe | Method::Radar => {
            let data = table.samples(source, Split::Train)?;
            let cfg = TrainConfig { seed, ..config.probe };
            train_probe(&data, &cfg, &source.tag())
                .map(Classifier::Probe)
                .map_err(|e| e.to_string())
        }
        Method::Coop => {
            let data = table.samples(source, Split::Train)?;
            let cfg = CoopConfig {
                seed,
                ..config.coop.clone()
            };
            let ctx = train_coop(&data, &cfg, vocab, archive).map_err(|e| e.to_string())?;
            coop_prompt_pair(&ctx, archive)
                .map(Classifier::Prompts)
                .map_err(|e| e.to_string())
        }
    }
}

fn evaluate_cell(cell: &Cell, classifier: &Classifier, table: &EmbeddingTable) -> Result<(ConfusionCounts, Metrics), String> {
    let source = match cell.train {
        TrainSource::Fused(..) => TrainSource::Fused(cell.test.dataset, cell.test.modality),
        _ => TrainSource::Optical(cell.test.dataset, cell.test.modality),
    };
    let test = table.samples(&source, Split::Test)?;
    let mut preds = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for (x, l) in &test {
        preds.push(classifier.predict(x)?);
        labels.push(*l);
    }
    let counts = confusion(&preds, &labels).map_err(|e| e.to_string())?;
    Ok((counts, metrics(&counts)))
}

/// Runs every cell of the table for every seed. Cells that cannot be run are
/// reported as failed; cells outside the table's applicability are reported
/// as not applicable. Zero-shot cells do not depend on the seed and are
/// reported once.
pub fn run_experiment_matrix(
    table: &EmbeddingTable,
    config: &MatrixConfig,
    vocab: &Vocabulary,
    archive: &TensorArchive,
) -> Vec<MetricsReport> {
    let cells = table_cells(&config.methods);
    let mut jobs: Vec<(Method, TrainSource, Option<u64>)> = Vec::new();
    for c in &cells {
        if !c.applicable() {
            continue;
        }
        let seeds: Vec<Option<u64>> = if c.method == Method::TextPrompts {
            vec![None]
        } else {
            config.seeds.iter().copied().map(Some).collect()
        };
        for s in seeds {
            let job = (c.method, c.train, s);
            if !jobs.contains(&job) {
                jobs.push(job);
            }
        }
    }
    let trained: BTreeMap<(Method, TrainSource, Option<u64>), Result<Classifier, String>> = jobs
        .par_iter()
        .map(|&(m, src, seed)| {
            let r = train_classifier(m, &src, seed.unwrap_or(0), table, config, vocab, archive);
            ((m, src, seed), r)
        })
        .collect();

    let mut reports = Vec::new();
    for cell in cells {
        let seeds: Vec<Option<u64>> = if cell.method == Method::TextPrompts {
            vec![None]
        } else {
            config.seeds.iter().copied().map(Some).collect()
        };
        for seed in seeds {
            let outcome = if !cell.applicable() {
                CellOutcome::NotApplicable
            } else {
                match &trained[&(cell.method, cell.train, seed)] {
                    Err(reason) => CellOutcome::Failed { reason: reason.clone() },
                    Ok(classifier) => match evaluate_cell(&cell, classifier, table) {
                        Ok((counts, metrics)) => CellOutcome::Ok { counts, metrics },
                        Err(reason) => CellOutcome::Failed { reason },
                    },
                }
            };
            reports.push(MetricsReport {
                row: cell.row_label(),
                method: cell.method,
                train_modality: cell.train.tag(),
                test_dataset: cell.test.dataset.display_name().into(),
                test_modality: cell.test.modality.tag().into(),
                seed,
                outcome,
                config_fingerprint: config.fingerprint(&cell, seed),
                cell: Some(cell),
            });
        }
    }
    sort_reports(&mut reports);
    reports
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
}

fn column_index(r: &MetricsReport) -> usize {
    TEST_COLUMNS
        .iter()
        .position(|c| c.dataset.display_name() == r.test_dataset && c.modality.tag() == r.test_modality)
        .unwrap_or(TEST_COLUMNS.len())
}

fn row_rank(r: &MetricsReport) -> (u8, u8) {
    let group = match r.row.split('.').next().and_then(|s| s.chars().last()) {
        Some('a') => 1,
        Some('b') => 2,
        _ => 0,
    };
    (group, r.method as u8)
}

fn sort_reports(reports: &mut [MetricsReport]) {
    reports.sort_by(|a, b| {
        (row_rank(a), &a.train_modality, column_index(a), &a.test_modality, a.seed).cmp(&(
            row_rank(b),
            &b.train_modality,
            column_index(b),
            &b.test_modality,
            b.seed,
        ))
    });
}

fn fmt_value(v: f64, degenerate: bool) -> String {
    if degenerate {
        "deg".into()
    } else {
        format!("{v:.3}")
    }
}

/// Renders reports as pretty JSON or as a table with one row per method
/// variant and seed and three TPR/TNR/F1 column groups.
pub fn emit_report(reports: &[MetricsReport], format: ReportFormat) -> String {
    let mut sorted = reports.to_vec();
    sort_reports(&mut sorted);
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(&sorted).expect("reports serialize") + "\n",
        ReportFormat::Markdown => markdown(&sorted),
    }
}

/// Row rank, row label, seed, and the report for each test column.
type MarkdownRow<'a> = ((u8, u8), String, Option<u64>, Vec<Option<&'a MetricsReport>>);

fn markdown(reports: &[MetricsReport]) -> String {
    let multi_seed = {
        let mut seeds: Vec<Option<u64>> = reports.iter().filter_map(|r| r.seed.map(Some)).collect();
        seeds.sort();
        seeds.dedup();
        seeds.len() > 1
    };
    let mut rows: Vec<MarkdownRow> = Vec::new();
    for r in reports {
        let key = (row_rank(r), r.row.clone(), r.seed);
        let idx = match rows.iter().position(|(k, l, s, _)| (*k, l.clone(), *s) == key) {
            Some(i) => i,
            None => {
                rows.push((key.0, key.1, key.2, vec![None; TEST_COLUMNS.len()]));
                rows.len() - 1
            }
        };
        let col = column_index(r);
        if col < TEST_COLUMNS.len() {
            rows[idx].3[col] = Some(r);
        }
    }
    let mut out = String::new();
    out.push_str("| Method | Trained on |");
    for c in TEST_COLUMNS {
        for m in ["TPR", "TNR", "F1"] {
            let _ = write!(out, " {} {} {m} |", c.dataset.display_name(), c.modality);
        }
    }
    out.push('\n');
    out.push_str("|---|---|");
    out.push_str(&"---:|".repeat(3 * TEST_COLUMNS.len()));
    out.push('\n');
    for (_, label, seed, cols) in &rows {
        let mut trained: Vec<&str> = Vec::new();
        for r in cols.iter().flatten() {
            if !trained.contains(&r.train_modality.as_str()) {
                trained.push(&r.train_modality);
            }
        }
        let name = match (multi_seed, seed) {
            (true, Some(s)) => format!("{label} (seed {s})"),
            _ => label.clone(),
        };
        let _ = write!(out, "| {name} | {} |", trained.join(", "));
        for cell in cols {
            let vals: [String; 3] = match cell.map(|r| &r.outcome) {
                None => [""; 3].map(String::from),
                Some(CellOutcome::NotApplicable) => ["N/A"; 3].map(String::from),
                Some(CellOutcome::Failed { .. }) => ["failed"; 3].map(String::from),
                Some(CellOutcome::Ok { metrics: m, .. }) => [
                    fmt_value(m.tpr, m.degenerate.tpr),
                    fmt_value(m.tnr, m.degenerate.tnr),
                    fmt_value(m.f1, m.degenerate.f1),
                ],
            };
            for v in vals {
                let _ = write!(out, " {v} |");
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Clear as Cl, Cloudy as C};

    #[test]
    fn four_way_counts() {
        let c = confusion(&[C, C, Cl, Cl], &[C, Cl, C, Cl]).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 1, 1, 1));
        assert!(matches!(confusion(&[C], &[]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(confusion(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn worked_example() {
        let m = metrics(&ConfusionCounts {
            tp: 9,
            fp: 3,
            fn_: 1,
            tn: 7,
        });
        assert!((m.tpr - 0.9).abs() < 1e-12);
        assert!((m.tnr - 0.7).abs() < 1e-12);
        assert!((m.f1 - 0.8182).abs() < 1e-4);
        assert!(!m.degenerate.any());
    }

    #[test]
    fn degenerate_flags() {
        let m = metrics(&ConfusionCounts {
            tp: 0,
            fp: 2,
            fn_: 0,
            tn: 3,
        });
        assert!(m.tpr.is_nan() && m.degenerate.tpr && m.degenerate.f1);
        assert_eq!(m.tnr, 0.6);
    }

    #[test]
    fn table_layout() {
        let cells = table_cells(&Method::ALL);
        assert_eq!(cells.len(), 3 * 6);
        let radar: Vec<_> = cells.iter().filter(|c| c.method == Method::Radar).collect();
        assert_eq!(radar.iter().filter(|c| c.applicable()).count(), 1);
        let b_rows: Vec<_> = cells
            .iter()
            .filter(|c| c.group == RowGroup::B && c.method == Method::LinearProbe)
            .map(|c| c.train.tag())
            .collect();
        assert_eq!(b_rows, ["L8/B6-B4", "L8/RGB", "L8/B6-B4"]);
    }

    #[test]
    fn methods_parse() {
        assert_eq!(Method::parse_list("all").unwrap().len(), 4);
        assert_eq!(Method::parse_list("probe,coop").unwrap(), [Method::LinearProbe, Method::Coop]);
        assert!(Method::parse_list("svm").is_err());
    }
}
