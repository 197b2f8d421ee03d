//! Leave-one-subject-out evaluation, pooled error metrics, and the three
//! experiment grids (subscale estimation, self-report cascade, severity).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, DersSubscale, Target};
use crate::features::Modality;
use crate::models::{ForestConfig, SvmConfig};
use crate::pipeline::{
    estimate_severity_bypass, estimate_severity_self_report, estimate_severity_via_erd,
    estimate_subscales_direct, estimate_subscales_indirect, train_cascade_on_cohort, Approach,
    PipelineError, Preprocessing, Route, SubscaleEstimate,
};
use crate::scalar::{derive_seed, Scalar};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 subjects for leave-one-subject-out, got {0}")]
    TooFewSubjects(usize),
    #[error("duplicate subject id `{0}`")]
    DuplicateSubject(String),
    #[error("{predictions} predictions but {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("cannot score an empty list")]
    Empty,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("duplicate report row {0}")]
    DuplicateRow(String),
    #[error("report line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: String,
}

/// One fold per subject, in sorted id order.
pub fn loso_folds(subject_ids: &[String]) -> Result<Vec<Fold>> {
    let mut ids = subject_ids.to_vec();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(EvalError::DuplicateSubject(w[0].clone()));
    }
    if ids.len() < 2 {
        return Err(EvalError::TooFewSubjects(ids.len()));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, test)| Fold {
            train: ids.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| s.clone()).collect(),
            test: test.clone(),
        })
        .collect())
}

fn paired<T: Scalar>(predictions: &[T], truths: &[T]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let bad = predictions
        .iter()
        .zip(truths)
        .position(|(p, t)| !p.is_finite() || !t.is_finite());
    match bad {
        Some(i) => Err(EvalError::NonFinite(i)),
        None => Ok(()),
    }
}

pub fn rmse<T: Scalar>(predictions: &[T], truths: &[T]) -> Result<T> {
    paired(predictions, truths)?;
    let sse: T = predictions.iter().zip(truths).map(|(p, t)| (*p - *t) * (*p - *t)).sum();
    Ok((sse / T::from_usize_lossy(predictions.len())).sqrt())
}

pub fn mae<T: Scalar>(predictions: &[T], truths: &[T]) -> Result<T> {
    paired(predictions, truths)?;
    let sae: T = predictions.iter().zip(truths).map(|(p, t)| (*p - *t).abs()).sum();
    Ok(sae / T::from_usize_lossy(predictions.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DersTable,
    SelfreportCascade,
    SeverityCompare,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::DersTable => "ders_table",
            ExperimentKind::SelfreportCascade => "selfreport_cascade",
            ExperimentKind::SeverityCompare => "severity_compare",
        }
    }

    fn title(self) -> &'static str {
        match self {
            ExperimentKind::DersTable => "DERS subscale estimation (RMSE)",
            ExperimentKind::SelfreportCascade => "Severity from self-reported DERS subscales",
            ExperimentKind::SeverityCompare => "Severity estimation via ERD and bypassing it",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ders_table" | "ders" => Ok(ExperimentKind::DersTable),
            "selfreport_cascade" | "cascade" => Ok(ExperimentKind::SelfreportCascade),
            "severity_compare" | "severity" => Ok(ExperimentKind::SeverityCompare),
            other => Err(EvalError::InvalidSpec(format!("unknown experiment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "MAE")]
    Mae,
    #[serde(rename = "RMSE")]
    Rmse,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "MAE",
            Metric::Rmse => "RMSE",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MAE" => Ok(Metric::Mae),
            "RMSE" => Ok(Metric::Rmse),
            other => Err(EvalError::InvalidSpec(format!("unknown metric `{other}`"))),
        }
    }
}

/// Modality column used for rows computed from self-reports.
pub const SELF_REPORT: &str = "self_report";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub modalities: Vec<Modality>,
    pub approaches: Vec<Approach>,
    pub targets: Vec<Target>,
    pub master_seed: u64,
}

impl ExperimentSpec {
    /// Full grid for `kind`.
    pub fn full(kind: ExperimentKind, master_seed: u64) -> Self {
        let (modalities, approaches, targets) = match kind {
            ExperimentKind::DersTable => (
                Modality::ALL.to_vec(),
                vec![Approach::Indirect, Approach::Direct],
                vec![],
            ),
            ExperimentKind::SelfreportCascade => (vec![], vec![], Target::ALL.to_vec()),
            ExperimentKind::SeverityCompare => (Modality::ALL.to_vec(), vec![], Target::ALL.to_vec()),
        };
        Self { kind, modalities, approaches, targets, master_seed }
    }

    pub fn validate(&self) -> Result<()> {
        fn unique<X: Ord + fmt::Debug>(what: &str, xs: &[X]) -> Result<()> {
            let set: BTreeSet<&X> = xs.iter().collect();
            if set.len() != xs.len() {
                return Err(EvalError::InvalidSpec(format!("repeated {what} in {xs:?}")));
            }
            Ok(())
        }
        unique("modality", &self.modalities)?;
        unique("approach", &self.approaches)?;
        unique("target", &self.targets)?;
        let need = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(EvalError::InvalidSpec(format!("{}: {msg}", self.kind)))
            }
        };
        match self.kind {
            ExperimentKind::DersTable => {
                need(!self.modalities.is_empty(), "needs at least one modality")?;
                need(!self.approaches.is_empty(), "needs at least one approach")?;
                need(self.targets.is_empty(), "takes no targets")
            }
            ExperimentKind::SelfreportCascade => {
                need(!self.targets.is_empty(), "needs at least one target")?;
                need(self.modalities.is_empty(), "uses self-reports and takes no modality")?;
                need(self.approaches.is_empty(), "uses self-reports and takes no approach")
            }
            ExperimentKind::SeverityCompare => {
                need(!self.targets.is_empty(), "needs at least one target")?;
                need(!self.modalities.is_empty(), "needs at least one modality")?;
                need(self.approaches.is_empty(), "compares routes and takes no approach")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Parallelism {
    #[default]
    Sequential,
    /// Fold-level threads; 0 picks the rayon default.
    Threads(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RunSettings<T: Scalar> {
    pub forest: ForestConfig,
    pub svm: SvmConfig<T>,
    pub preprocessing: Preprocessing,
    pub parallelism: Parallelism,
}

impl<T: Scalar> Default for RunSettings<T> {
    fn default() -> Self {
        Self {
            forest: ForestConfig::default(),
            svm: SvmConfig::default(),
            preprocessing: Preprocessing::None,
            parallelism: Parallelism::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: ExperimentKind,
    /// Subscale id for subscale rows, `MDD`/`PTSD` otherwise.
    pub target: String,
    pub modality: String,
    /// Approach for subscale rows, route otherwise.
    pub route: String,
    pub metric: Metric,
    pub value: f64,
}

impl ReportRow {
    fn key(&self) -> (ExperimentKind, &str, &str, &str, Metric) {
        (self.kind, &self.target, &self.modality, &self.route, self.metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: ExperimentSpec,
    pub scalar: String,
    pub n_subjects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    rows: Vec<ReportRow>,
    provenance: Option<Provenance>,
}

impl EvaluationReport {
    /// Checks that values are finite and non-negative and keys are unique.
    pub fn new(rows: Vec<ReportRow>, provenance: Option<Provenance>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for row in &rows {
            if !row.value.is_finite() || row.value < 0.0 {
                return Err(EvalError::InvalidSpec(format!("metric value {} out of range", row.value)));
            }
            if !seen.insert(row.key()) {
                return Err(EvalError::DuplicateRow(format!("{:?}", row.key())));
            }
        }
        Ok(Self { rows, provenance })
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn value(&self, target: &str, modality: &str, route: &str, metric: Metric) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.target == target && r.modality == modality && r.route == route && r.metric == metric)
            .map(|r| r.value)
    }
}

/// Sort key of a report cell: kind-specific indices, then the metric.
type CellKey = (usize, usize, usize, Metric);

struct Cell {
    target: String,
    modality: String,
    route: String,
    metrics: &'static [Metric],
}

type FoldOutput<T> = Vec<(CellKey, Cell, T, T)>;

fn modality_index(m: Modality) -> usize {
    Modality::ALL.iter().position(|x| *x == m).unwrap_or(usize::MAX)
}

fn run_fold<T: Scalar>(
    cohort: &Cohort<T>,
    spec: &ExperimentSpec,
    settings: &RunSettings<T>,
    train: &[String],
    test: &str,
) -> Result<FoldOutput<T>> {
    let fold_seed = derive_seed(spec.master_seed, &["fold", test]);
    let forest = settings.forest.with_seed(fold_seed);
    let svm = settings.svm.with_seed(fold_seed);
    let prep = settings.preprocessing;
    let mut out = Vec::new();
    const RMSE_ONLY: &[Metric] = &[Metric::Rmse];
    const BOTH: &[Metric] = &[Metric::Mae, Metric::Rmse];

    match spec.kind {
        ExperimentKind::DersTable => {
            let truth = cohort.ders_scores(test).map_err(PipelineError::from)?;
            for &approach in &spec.approaches {
                for &modality in &spec.modalities {
                    let est: Vec<SubscaleEstimate<T>> = match approach {
                        Approach::Direct => estimate_subscales_direct(cohort, train, test, modality, &forest, prep)?,
                        Approach::Indirect => estimate_subscales_indirect(cohort, train, test, modality, &svm, prep)?,
                    };
                    for e in est {
                        let a = usize::from(approach == Approach::Direct);
                        out.push((
                            (e.subscale.index(), a, modality_index(modality), Metric::Rmse),
                            Cell {
                                target: e.subscale.id().to_string(),
                                modality: modality.as_str().to_string(),
                                route: approach.as_str().to_string(),
                                metrics: RMSE_ONLY,
                            },
                            e.estimated_score,
                            T::lit(f64::from(truth[e.subscale.index()])),
                        ));
                    }
                }
            }
        }
        ExperimentKind::SelfreportCascade => {
            for &target in &spec.targets {
                let cascade = train_cascade_on_cohort(cohort, train, target, &forest)?;
                let est = estimate_severity_self_report(&cascade, cohort, test)?;
                let truth = cohort.severity(test, target).map_err(PipelineError::from)?;
                out.push((
                    (target as usize, 0, 0, Metric::Mae),
                    Cell {
                        target: target.as_str().to_string(),
                        modality: SELF_REPORT.to_string(),
                        route: Route::SelfReportCascade.as_str().to_string(),
                        metrics: BOTH,
                    },
                    est.estimated_severity,
                    T::lit(f64::from(truth)),
                ));
            }
        }
        ExperimentKind::SeverityCompare => {
            let mut direct = BTreeMap::new();
            for &modality in &spec.modalities {
                direct.insert(modality, estimate_subscales_direct(cohort, train, test, modality, &forest, prep)?);
            }
            for &target in &spec.targets {
                let cascade = train_cascade_on_cohort(cohort, train, target, &forest)?;
                let truth = T::lit(f64::from(cohort.severity(test, target).map_err(PipelineError::from)?));
                for &modality in &spec.modalities {
                    let via = estimate_severity_via_erd(&cascade, &direct[&modality])?;
                    let bypass = estimate_severity_bypass(cohort, train, test, target, modality, &forest, prep)?;
                    for (r, est) in [(0, bypass), (1, via)] {
                        out.push((
                            (target as usize, modality_index(modality), r, Metric::Mae),
                            Cell {
                                target: target.as_str().to_string(),
                                modality: modality.as_str().to_string(),
                                route: est.route.as_str().to_string(),
                                metrics: BOTH,
                            },
                            est.estimated_severity,
                            truth,
                        ));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Runs every LOSO fold and pools the held-out predictions per cell.
pub fn run_experiment<T: Scalar>(
    cohort: &Cohort<T>,
    spec: &ExperimentSpec,
    settings: &RunSettings<T>,
) -> Result<EvaluationReport> {
    spec.validate()?;
    settings.forest.validate().map_err(PipelineError::from)?;
    settings.svm.validate().map_err(PipelineError::from)?;
    let folds = loso_folds(cohort.subject_ids())?;
    let work = |f: &Fold| run_fold(cohort, spec, settings, &f.train, &f.test);
    let outputs: Vec<FoldOutput<T>> = match settings.parallelism {
        Parallelism::Sequential => folds.iter().map(work).collect::<Result<_>>()?,
        Parallelism::Threads(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| EvalError::ThreadPool(e.to_string()))?
            .install(|| folds.par_iter().map(work).collect::<Result<_>>())?,
    };

    // folds arrive in sorted-subject order regardless of scheduling
    let mut pooled: BTreeMap<CellKey, (Cell, Vec<T>, Vec<T>)> = BTreeMap::new();
    for fold in outputs {
        for (key, cell, pred, truth) in fold {
            let entry = pooled.entry(key).or_insert_with(|| (cell, Vec::new(), Vec::new()));
            entry.1.push(pred);
            entry.2.push(truth);
        }
    }
    let mut rows = Vec::new();
    for (cell, preds, truths) in pooled.into_values() {
        for &metric in cell.metrics {
            let v = match metric {
                Metric::Mae => mae(&preds, &truths)?,
                Metric::Rmse => rmse(&preds, &truths)?,
            };
            rows.push(ReportRow {
                kind: spec.kind,
                target: cell.target.clone(),
                modality: cell.modality.clone(),
                route: cell.route.clone(),
                metric,
                value: v.to_f64_lossy(),
            });
        }
    }
    EvaluationReport::new(
        rows,
        Some(Provenance {
            spec: spec.clone(),
            scalar: T::NAME.to_string(),
            n_subjects: cohort.subject_ids().len(),
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Pretty,
    Csv,
}

pub const REPORT_HEADER: &str = "kind,target,modality,route,metric,value";

fn modality_label(m: &str) -> &str {
    match m {
        "audio" => "A",
        "video" => "V",
        "fused" => "AV",
        SELF_REPORT => "self-report",
        other => other,
    }
}

fn route_label(r: &str) -> &str {
    match r {
        "direct" => "Direct",
        "indirect" => "Indirect",
        "via_erd" => "Via ERD",
        "bypass" => "Bypass",
        "self_report_cascade" => "Self-report",
        other => other,
    }
}

fn table_labels(row: &ReportRow) -> (String, String) {
    match row.kind {
        ExperimentKind::DersTable => (
            DersSubscale::from_id(&row.target).map_or(row.target.clone(), |s| s.label().to_string()),
            format!("{} {}", route_label(&row.route), modality_label(&row.modality)),
        ),
        ExperimentKind::SelfreportCascade => (row.target.clone(), row.metric.to_string()),
        ExperimentKind::SeverityCompare => (
            format!("{} {}", row.target, modality_label(&row.modality)),
            format!("{} {}", route_label(&row.route), row.metric),
        ),
    }
}

fn first_seen(list: &mut Vec<String>, s: &str) {
    if !list.iter().any(|x| x == s) {
        list.push(s.to_string());
    }
}

fn render_pretty(report: &EvaluationReport) -> String {
    let mut kinds: Vec<ExperimentKind> = Vec::new();
    for r in report.rows() {
        if !kinds.contains(&r.kind) {
            kinds.push(r.kind);
        }
    }
    let mut out = String::new();
    for kind in kinds {
        let mut row_labels = Vec::new();
        let mut col_labels = Vec::new();
        let mut cells = BTreeMap::new();
        for r in report.rows().iter().filter(|r| r.kind == kind) {
            let (rl, cl) = table_labels(r);
            first_seen(&mut row_labels, &rl);
            first_seen(&mut col_labels, &cl);
            cells.insert((rl, cl), format!("{:.2}", r.value));
        }
        let w0 = row_labels.iter().map(String::len).max().unwrap_or(0);
        let widths: Vec<usize> = col_labels
            .iter()
            .map(|c| {
                row_labels
                    .iter()
                    .filter_map(|r| cells.get(&(r.clone(), c.clone())).map(String::len))
                    .chain([c.len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(kind.title());
        out.push('\n');
        let mut line = format!("{:w0$}", "");
        for (c, w) in col_labels.iter().zip(&widths) {
            line.push_str(&format!("  {c:>w$}"));
        }
        out.push_str(line.trim_end());
        out.push('\n');
        for r in &row_labels {
            let mut line = format!("{r:w0$}");
            for (c, w) in col_labels.iter().zip(&widths) {
                let v = cells.get(&(r.clone(), c.clone())).map_or("-", String::as_str);
                line.push_str(&format!("  {v:>w$}"));
            }
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

fn render_csv(report: &EvaluationReport) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in report.rows() {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6}\n",
            r.kind, r.target, r.modality, r.route, r.metric, r.value
        ));
    }
    out
}

pub fn render_report(report: &EvaluationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Pretty => render_pretty(report),
        ReportFormat::Csv => render_csv(report),
    }
}

/// Reads rows back from the CSV rendering.
pub fn parse_report_csv(source: &str) -> Result<EvaluationReport> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| EvalError::Parse { line: 1, message: e.to_string() })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != REPORT_HEADER {
        return Err(EvalError::Parse { line: 1, message: format!("expected header `{REPORT_HEADER}`") });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let err = |message: String| EvalError::Parse { line, message };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", rec.len())));
        }
        rows.push(ReportRow {
            kind: rec[0].parse().map_err(|e: EvalError| err(e.to_string()))?,
            target: rec[1].to_string(),
            modality: rec[2].to_string(),
            route: rec[3].to_string(),
            metric: rec[4].parse().map_err(|e: EvalError| err(e.to_string()))?,
            value: rec[5].parse().map_err(|_| err(format!("`{}` is not a number", &rec[5])))?,
        });
    }
    EvaluationReport::new(rows, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_cohort, SynthConfig};
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:02}")).collect()
    }

    #[test]
    fn folds_cover_subjects_once() {
        let folds = loso_folds(&ids(25)).unwrap();
        assert_eq!(folds.len(), 25);
        let tests: BTreeSet<&str> = folds.iter().map(|f| f.test.as_str()).collect();
        assert_eq!(tests.len(), 25);
        for f in &folds {
            assert_eq!(f.train.len(), 24);
            assert!(!f.train.contains(&f.test));
        }
        let two = loso_folds(&ids(2)).unwrap();
        assert_eq!(two.iter().map(|f| f.train.len()).collect::<Vec<_>>(), [1, 1]);
        assert!(matches!(loso_folds(&ids(1)), Err(EvalError::TooFewSubjects(1))));
        let dup = vec!["a".to_string(), "b".into(), "a".into()];
        assert!(matches!(loso_folds(&dup), Err(EvalError::DuplicateSubject(_))));
    }

    #[test]
    fn fold_order_is_sorted() {
        let shuffled = vec!["c".to_string(), "a".into(), "b".into()];
        let tests: Vec<String> = loso_folds(&shuffled).unwrap().into_iter().map(|f| f.test).collect();
        assert_eq!(tests, ["a", "b", "c"]);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0f64, 0.0], &[3.0, 4.0]).unwrap() - 3.535534).abs() < 1e-6);
        assert_eq!(mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 3.5);
        assert!(mae(&[0.0, 0.0], &[1.0, 3.0]).unwrap() <= rmse(&[0.0, 0.0], &[1.0, 3.0]).unwrap());
        let e = [2.5, -2.5, 2.5];
        let z = [0.0; 3];
        assert_eq!(rmse(&e, &z).unwrap(), 2.5);
        assert_eq!(mae(&e, &z).unwrap(), 2.5);
        assert!(matches!(rmse::<f64>(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(mae(&[f64::NAN], &[1.0]), Err(EvalError::NonFinite(0))));
    }

    proptest! {
        #[test]
        fn metrics_are_ordered_and_permutation_invariant(
            pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40),
            rot in 0usize..40,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let r = rmse(&p, &t).unwrap();
            let m = mae(&p, &t).unwrap();
            prop_assert!(m >= 0.0 && r >= m - 1e-9);
            let mut q = pairs.clone();
            q.rotate_left(rot % pairs.len());
            let (p2, t2): (Vec<f64>, Vec<f64>) = q.into_iter().unzip();
            prop_assert!((rmse(&p2, &t2).unwrap() - r).abs() < 1e-9);
            prop_assert!((mae(&p2, &t2).unwrap() - m).abs() < 1e-9);
        }
    }

    #[test]
    fn spec_validation() {
        for kind in [ExperimentKind::DersTable, ExperimentKind::SelfreportCascade, ExperimentKind::SeverityCompare] {
            ExperimentSpec::full(kind, 0).validate().unwrap();
        }
        let mut s = ExperimentSpec::full(ExperimentKind::SelfreportCascade, 0);
        s.modalities.push(Modality::Audio);
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::full(ExperimentKind::DersTable, 0);
        s.modalities.push(Modality::Audio);
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::full(ExperimentKind::SeverityCompare, 0);
        s.targets.clear();
        assert!(s.validate().is_err());
    }

    fn cohort(n: usize) -> Cohort<f64> {
        generate_cohort(&SynthConfig { n_subjects: n, seed: 11, ..SynthConfig::default() }).unwrap()
    }

    fn fast() -> RunSettings<f64> {
        RunSettings {
            forest: ForestConfig { n_trees: 3, ..ForestConfig::default() },
            ..RunSettings::default()
        }
    }

    #[test]
    fn cardinalities_and_order() {
        let c = cohort(6);
        let ders = run_experiment(&c, &ExperimentSpec::full(ExperimentKind::DersTable, 1), &fast()).unwrap();
        assert_eq!(ders.rows().len(), 36);
        assert_eq!(ders.rows()[0].target, "clarity");
        assert_eq!(ders.rows()[0].route, "indirect");
        assert_eq!(ders.rows()[35].target, "strategies");
        let cas = run_experiment(&c, &ExperimentSpec::full(ExperimentKind::SelfreportCascade, 1), &fast()).unwrap();
        assert_eq!(cas.rows().len(), 4);
        assert!(cas.rows().iter().all(|r| r.modality == SELF_REPORT));
        let sev = run_experiment(&c, &ExperimentSpec::full(ExperimentKind::SeverityCompare, 1), &fast()).unwrap();
        assert_eq!(sev.rows().len(), 24);
        for r in sev.rows() {
            assert!(r.value.is_finite() && r.value >= 0.0);
        }
    }

    #[test]
    fn parallel_runs_match_sequential() {
        let c = cohort(7);
        let spec = ExperimentSpec::full(ExperimentKind::SeverityCompare, 5);
        let a = run_experiment(&c, &spec, &fast()).unwrap();
        let b = run_experiment(&c, &spec, &fast()).unwrap();
        let p = run_experiment(&c, &spec, &RunSettings { parallelism: Parallelism::Threads(3), ..fast() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(render_report(&a, ReportFormat::Csv), render_report(&p, ReportFormat::Csv));
    }

    #[test]
    fn noise_free_bypass_is_close_to_via_erd() {
        let cfg = SynthConfig::default().noise_free();
        let c: Cohort<f64> = generate_cohort(&cfg).unwrap();
        let spec = ExperimentSpec {
            modalities: vec![Modality::Fused],
            ..ExperimentSpec::full(ExperimentKind::SeverityCompare, 2)
        };
        let rep = run_experiment(&c, &spec, &RunSettings::default()).unwrap();
        for t in ["MDD", "PTSD"] {
            let via = rep.value(t, "fused", "via_erd", Metric::Mae).unwrap();
            let by = rep.value(t, "fused", "bypass", Metric::Mae).unwrap();
            assert!(via.max(by) <= 2.0 * via.min(by), "{t}: via {via} bypass {by}");
        }
    }

    fn table2() -> EvaluationReport {
        let row = |t: &str, m, v| ReportRow {
            kind: ExperimentKind::SelfreportCascade,
            target: t.into(),
            modality: SELF_REPORT.into(),
            route: "self_report_cascade".into(),
            metric: m,
            value: v,
        };
        EvaluationReport::new(
            vec![
                row("MDD", Metric::Mae, 1.98),
                row("MDD", Metric::Rmse, 2.57),
                row("PTSD", Metric::Mae, 7.66),
                row("PTSD", Metric::Rmse, 9.28),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn rendering_fixture() {
        let r = table2();
        let pretty = render_report(&r, ReportFormat::Pretty);
        assert_eq!(
            pretty,
            "Severity from self-reported DERS subscales\n       MAE  RMSE\nMDD   1.98  2.57\nPTSD  7.66  9.28\n"
        );
        let csv = render_report(&r, ReportFormat::Csv);
        assert!(csv.starts_with(REPORT_HEADER));
        assert!(csv.contains("selfreport_cascade,MDD,self_report,self_report_cascade,MAE,1.980000\n"));
        assert_eq!(parse_report_csv(&csv).unwrap().rows(), r.rows());
    }

    #[test]
    fn empty_and_bad_reports() {
        let empty = EvaluationReport::new(vec![], None).unwrap();
        assert_eq!(render_report(&empty, ReportFormat::Csv), format!("{REPORT_HEADER}\n"));
        assert!(parse_report_csv(&format!("{REPORT_HEADER}\n")).unwrap().rows().is_empty());
        let mut rows = table2().rows().to_vec();
        rows.push(rows[0].clone());
        assert!(matches!(EvaluationReport::new(rows, None), Err(EvalError::DuplicateRow(_))));
        let mut rows = table2().rows().to_vec();
        rows[0].value = -1.0;
        assert!(EvaluationReport::new(rows, None).is_err());
        assert!(parse_report_csv("a,b\n").is_err());
        assert!(parse_report_csv(&format!("{REPORT_HEADER}\nders_table,x,audio,direct,RMSE,abc\n")).is_err());
    }
}
