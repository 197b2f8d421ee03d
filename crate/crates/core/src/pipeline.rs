//! Estimation procedures: DERS subscales from features (direct regression or
//! per-item response classification), and MDD/PTSD severity either through
//! the six subscale scores or straight from the features.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, CohortError, DersSubscale, Target, DERS_ID};
use crate::features::{aggregate_items, FeatureError, Modality, Standardizer};
use crate::instrument::{subscale_score, InstrumentDefinition, InstrumentError, ResponseSheet};
use crate::models::{
    predict_forest, predict_svm, train_forest, train_svm, ForestConfig, ForestModel, Label,
    ModelError, SvmConfig, SvmModel,
};
use crate::scalar::{derive_seed, Scalar};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("test subject `{0}` also appears in the training set")]
    Leakage(String),
    #[error("subject `{0}` is not in the cohort")]
    UnknownSubject(String),
    #[error("training set is empty")]
    EmptyTraining,
    #[error("cascade input has {found} subscale scores, expected 6")]
    CascadeDimension { found: usize },
    #[error("{inputs} cascade inputs but {targets} severities")]
    CascadeLength { inputs: usize, targets: usize },
    #[error("no estimate for subscale `{}`", .0.id())]
    MissingSubscale(DersSubscale),
    #[error("more than one estimate for subscale `{}`", .0.id())]
    DuplicateSubscale(DersSubscale),
    #[error("estimates span several subjects: {0:?}")]
    MixedSubjects(Vec<String>),
    #[error("unknown approach `{0}` (expected direct or indirect)")]
    UnknownApproach(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    Direct,
    Indirect,
}

impl Approach {
    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Direct => "direct",
            Approach::Indirect => "indirect",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(Approach::Direct),
            "indirect" => Ok(Approach::Indirect),
            other => Err(PipelineError::UnknownApproach(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    ViaErd,
    Bypass,
    SelfReportCascade,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::ViaErd => "via_erd",
            Route::Bypass => "bypass",
            Route::SelfReportCascade => "self_report_cascade",
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Optional feature scaling, fitted on the training rows of each model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    #[default]
    None,
    ZScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubscaleEstimate<T> {
    pub subject_id: String,
    pub subscale: DersSubscale,
    pub estimated_score: T,
    pub approach: Approach,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeverityEstimate<T> {
    pub subject_id: String,
    pub target: Target,
    pub estimated_severity: T,
    pub route: Route,
}

/// Rejects folds whose test subject is unknown or leaks into training.
pub fn check_fold<T: Scalar>(cohort: &Cohort<T>, train: &[String], test: &str) -> Result<()> {
    if train.is_empty() {
        return Err(PipelineError::EmptyTraining);
    }
    if train.iter().any(|s| s == test) {
        return Err(PipelineError::Leakage(test.to_string()));
    }
    for s in train.iter().map(String::as_str).chain([test]) {
        if !cohort.contains_subject(s) {
            return Err(PipelineError::UnknownSubject(s.to_string()));
        }
    }
    Ok(())
}

fn scale<T: Scalar>(prep: Preprocessing, train_x: &mut [Vec<T>], test_x: &mut Vec<T>) {
    if prep == Preprocessing::ZScore {
        if let Some(z) = Standardizer::fit(train_x) {
            for row in train_x.iter_mut() {
                *row = z.transform(row);
            }
            *test_x = z.transform(test_x);
        }
    }
}

/// One forest per subscale over the mean of that subscale's item vectors.
pub fn estimate_subscales_direct<T: Scalar>(
    cohort: &Cohort<T>,
    train: &[String],
    test: &str,
    modality: Modality,
    forest: &ForestConfig,
    prep: Preprocessing,
) -> Result<Vec<SubscaleEstimate<T>>> {
    check_fold(cohort, train, test)?;
    let table = cohort.features(modality);
    DersSubscale::CANONICAL
        .iter()
        .map(|&subscale| {
            let items = cohort.subscale_item_ids(subscale);
            let mut x = train
                .iter()
                .map(|s| aggregate_items(table, s, &items))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let y = train
                .iter()
                .map(|s| Ok(T::lit(f64::from(cohort.ders_scores(s)?[subscale.index()]))))
                .collect::<Result<Vec<T>>>()?;
            let mut probe = aggregate_items(table, test, &items)?;
            scale(prep, &mut x, &mut probe);
            let cfg = forest.with_seed(derive_seed(
                forest.seed,
                &["direct", modality.as_str(), subscale.id()],
            ));
            let model = train_forest(&x, &y, &cfg)?;
            Ok(SubscaleEstimate {
                subject_id: test.to_string(),
                subscale,
                estimated_score: predict_forest(&model, &probe)?,
                approach: Approach::Direct,
                modality,
            })
        })
        .collect()
}

/// Per-item response model: an SVM, or the single observed response when
/// the training labels are all equal.
#[derive(Debug, Clone, PartialEq)]
pub enum ItemClassifier<T: Scalar> {
    Constant(Label),
    Svm {
        model: SvmModel<T>,
        scaler: Option<Standardizer<T>>,
    },
}

impl<T: Scalar> ItemClassifier<T> {
    pub fn train(x: &[Vec<T>], labels: &[Label], svm: &SvmConfig<T>, prep: Preprocessing) -> Result<Self> {
        let distinct: BTreeSet<Label> = labels.iter().copied().collect();
        match distinct.len() {
            0 => Err(PipelineError::EmptyTraining),
            1 => Ok(ItemClassifier::Constant(labels[0])),
            _ => {
                let scaler = match prep {
                    Preprocessing::ZScore => Standardizer::fit(x),
                    Preprocessing::None => None,
                };
                let scaled;
                let x = match &scaler {
                    Some(z) => {
                        scaled = x.iter().map(|r| z.transform(r)).collect::<Vec<_>>();
                        &scaled
                    }
                    None => x,
                };
                Ok(ItemClassifier::Svm {
                    model: train_svm(x, labels, svm)?,
                    scaler,
                })
            }
        }
    }

    pub fn predict(&self, x: &[T]) -> Result<Label> {
        match self {
            ItemClassifier::Constant(l) => Ok(*l),
            ItemClassifier::Svm { model, scaler } => match scaler {
                Some(z) => Ok(predict_svm(model, &z.transform(x))?),
                None => Ok(predict_svm(model, x)?),
            },
        }
    }
}

/// Predicts the test subject's raw response to every DERS item.
pub fn predict_item_responses<T: Scalar>(
    cohort: &Cohort<T>,
    train: &[String],
    test: &str,
    modality: Modality,
    svm: &SvmConfig<T>,
    prep: Preprocessing,
) -> Result<BTreeMap<String, Label>> {
    check_fold(cohort, train, test)?;
    let table = cohort.features(modality);
    let mut out = BTreeMap::new();
    for item in cohort.ders().items() {
        let mut x = Vec::with_capacity(train.len());
        let mut labels = Vec::with_capacity(train.len());
        for s in train {
            x.push(table.row(s, &item.item_id)?.to_vec());
            let sheet = cohort
                .sheet(DERS_ID, s)
                .ok_or_else(|| PipelineError::UnknownSubject(s.clone()))?;
            labels.push(sheet.responses[&item.item_id]);
        }
        let cfg = svm.with_seed(derive_seed(svm.seed, &["indirect", modality.as_str(), &item.item_id]));
        let clf = ItemClassifier::train(&x, &labels, &cfg, prep)?;
        out.insert(item.item_id.clone(), clf.predict(table.row(test, &item.item_id)?)?);
    }
    Ok(out)
}

/// Scores predicted raw responses with the instrument's rules.
pub fn subscales_from_responses<T: Scalar>(
    ders: &InstrumentDefinition,
    subject_id: &str,
    responses: BTreeMap<String, Label>,
    modality: Modality,
) -> Result<Vec<SubscaleEstimate<T>>> {
    let sheet = ResponseSheet::new(subject_id, ders.instrument_id(), responses);
    DersSubscale::CANONICAL
        .iter()
        .map(|&subscale| {
            let score = subscale_score(ders, &sheet, subscale.id())?;
            Ok(SubscaleEstimate {
                subject_id: subject_id.to_string(),
                subscale,
                estimated_score: T::lit(f64::from(score)),
                approach: Approach::Indirect,
                modality,
            })
        })
        .collect()
}

pub fn estimate_subscales_indirect<T: Scalar>(
    cohort: &Cohort<T>,
    train: &[String],
    test: &str,
    modality: Modality,
    svm: &SvmConfig<T>,
    prep: Preprocessing,
) -> Result<Vec<SubscaleEstimate<T>>> {
    let responses = predict_item_responses(cohort, train, test, modality, svm, prep)?;
    subscales_from_responses(cohort.ders(), test, responses, modality)
}

/// Forest from the six subscale scores (canonical order) to a severity.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel<T: Scalar> {
    target: Target,
    forest: ForestModel<T>,
}

impl<T: Scalar> CascadeModel<T> {
    pub fn target(&self) -> Target {
        self.target
    }

    pub fn forest(&self) -> &ForestModel<T> {
        &self.forest
    }

    pub fn predict(&self, scores: &[T]) -> Result<T> {
        if scores.len() != 6 {
            return Err(PipelineError::CascadeDimension { found: scores.len() });
        }
        Ok(predict_forest(&self.forest, scores)?)
    }
}

pub fn train_cascade<T: Scalar>(
    subscale_scores: &[Vec<T>],
    severities: &[T],
    target: Target,
    forest: &ForestConfig,
) -> Result<CascadeModel<T>> {
    if subscale_scores.is_empty() {
        return Err(PipelineError::EmptyTraining);
    }
    if subscale_scores.len() != severities.len() {
        return Err(PipelineError::CascadeLength {
            inputs: subscale_scores.len(),
            targets: severities.len(),
        });
    }
    if let Some(bad) = subscale_scores.iter().find(|v| v.len() != 6) {
        return Err(PipelineError::CascadeDimension { found: bad.len() });
    }
    let cfg = forest.with_seed(derive_seed(forest.seed, &["cascade", target.as_str()]));
    Ok(CascadeModel {
        target,
        forest: train_forest(subscale_scores, severities, &cfg)?,
    })
}

fn self_reported<T: Scalar>(cohort: &Cohort<T>, subject: &str) -> Result<Vec<T>> {
    Ok(cohort
        .ders_scores(subject)?
        .iter()
        .map(|v| T::lit(f64::from(*v)))
        .collect())
}

/// Cascade fitted on the training subjects' self-reported subscale scores.
pub fn train_cascade_on_cohort<T: Scalar>(
    cohort: &Cohort<T>,
    train: &[String],
    target: Target,
    forest: &ForestConfig,
) -> Result<CascadeModel<T>> {
    let x = train
        .iter()
        .map(|s| self_reported(cohort, s))
        .collect::<Result<Vec<_>>>()?;
    let y = train
        .iter()
        .map(|s| Ok(T::lit(f64::from(cohort.severity(s, target)?))))
        .collect::<Result<Vec<T>>>()?;
    train_cascade(&x, &y, target, forest)
}

/// Cascade prediction from estimated subscales, reordered canonically.
pub fn estimate_severity_via_erd<T: Scalar>(
    model: &CascadeModel<T>,
    estimates: &[SubscaleEstimate<T>],
) -> Result<SeverityEstimate<T>> {
    let subjects: BTreeSet<&str> = estimates.iter().map(|e| e.subject_id.as_str()).collect();
    if subjects.len() > 1 {
        return Err(PipelineError::MixedSubjects(subjects.into_iter().map(String::from).collect()));
    }
    let mut slots: [Option<T>; 6] = [None; 6];
    for e in estimates {
        let slot = &mut slots[e.subscale.index()];
        if slot.is_some() {
            return Err(PipelineError::DuplicateSubscale(e.subscale));
        }
        *slot = Some(e.estimated_score);
    }
    let scores = DersSubscale::CANONICAL
        .iter()
        .map(|s| slots[s.index()].ok_or(PipelineError::MissingSubscale(*s)))
        .collect::<Result<Vec<T>>>()?;
    Ok(SeverityEstimate {
        subject_id: estimates[0].subject_id.clone(),
        target: model.target,
        estimated_severity: model.predict(&scores)?,
        route: Route::ViaErd,
    })
}

/// Cascade prediction from a subject's own self-reported subscale scores.
pub fn estimate_severity_self_report<T: Scalar>(
    model: &CascadeModel<T>,
    cohort: &Cohort<T>,
    subject: &str,
) -> Result<SeverityEstimate<T>> {
    Ok(SeverityEstimate {
        subject_id: subject.to_string(),
        target: model.target,
        estimated_severity: model.predict(&self_reported(cohort, subject)?)?,
        route: Route::SelfReportCascade,
    })
}

/// Severity straight from the mean of all of a subject's item vectors.
pub fn estimate_severity_bypass<T: Scalar>(
    cohort: &Cohort<T>,
    train: &[String],
    test: &str,
    target: Target,
    modality: Modality,
    forest: &ForestConfig,
    prep: Preprocessing,
) -> Result<SeverityEstimate<T>> {
    check_fold(cohort, train, test)?;
    let table = cohort.features(modality);
    let items: Vec<&str> = cohort.ders().items().iter().map(|i| i.item_id.as_str()).collect();
    let mut x = train
        .iter()
        .map(|s| aggregate_items(table, s, &items))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let y = train
        .iter()
        .map(|s| Ok(T::lit(f64::from(cohort.severity(s, target)?))))
        .collect::<Result<Vec<T>>>()?;
    let mut probe = aggregate_items(table, test, &items)?;
    scale(prep, &mut x, &mut probe);
    let cfg = forest.with_seed(derive_seed(
        forest.seed,
        &["bypass", target.as_str(), modality.as_str()],
    ));
    let model = train_forest(&x, &y, &cfg)?;
    Ok(SeverityEstimate {
        subject_id: test.to_string(),
        target,
        estimated_severity: predict_forest(&model, &probe)?,
        route: Route::Bypass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::{fixtures, ItemDefinition};
    use crate::synth::{generate_cohort, subject_id, SynthConfig};

    fn small_cohort(n: usize, seed: u64) -> Cohort<f64> {
        generate_cohort(&SynthConfig { n_subjects: n, seed, ..SynthConfig::default() }).unwrap()
    }

    #[test]
    fn leakage_is_rejected_everywhere() {
        let c = small_cohort(4, 1);
        let train: Vec<String> = c.subject_ids().to_vec();
        let test = train[0].clone();
        let f = ForestConfig::default();
        let p = Preprocessing::None;
        assert!(matches!(
            estimate_subscales_direct(&c, &train, &test, Modality::Audio, &f, p),
            Err(PipelineError::Leakage(_))
        ));
        assert!(matches!(
            estimate_subscales_indirect(&c, &train, &test, Modality::Audio, &SvmConfig::default(), p),
            Err(PipelineError::Leakage(_))
        ));
        assert!(matches!(
            estimate_severity_bypass(&c, &train, &test, Target::Mdd, Modality::Video, &f, p),
            Err(PipelineError::Leakage(_))
        ));
        assert!(matches!(
            estimate_subscales_direct(&c, &train[1..], "nobody", Modality::Audio, &f, p),
            Err(PipelineError::UnknownSubject(_))
        ));
    }

    #[test]
    fn single_training_subject_copies_its_scores() {
        let c = small_cohort(3, 2);
        let ids = c.subject_ids().to_vec();
        let train = vec![ids[0].clone()];
        let est = estimate_subscales_direct(&c, &train, &ids[1], Modality::Fused, &ForestConfig::default(), Preprocessing::None).unwrap();
        let truth = c.ders_scores(&ids[0]).unwrap();
        assert_eq!(est.len(), 6);
        for e in &est {
            assert_eq!(e.estimated_score, f64::from(truth[e.subscale.index()]));
            assert_eq!(e.approach, Approach::Direct);
        }
        let sev = estimate_severity_bypass(&c, &train, &ids[2], Target::Ptsd, Modality::Audio, &ForestConfig::default(), Preprocessing::None).unwrap();
        assert_eq!(sev.estimated_severity, f64::from(c.severity(&ids[0], Target::Ptsd).unwrap()));
    }

    #[test]
    fn indirect_scores_sum_predicted_responses() {
        // five non-reversed items all predicted 2
        let items = (0..5).map(|i| ItemDefinition::new(format!("i{i}"), "clarity", 1, 5, false));
        let mut all: Vec<ItemDefinition> = items.collect();
        for s in DersSubscale::CANONICAL.iter().skip(1) {
            all.push(ItemDefinition::new(format!("{}_x", s.id()), s.id(), 1, 5, false));
        }
        let ders = InstrumentDefinition::new(
            "ders",
            all.clone(),
            DersSubscale::CANONICAL.iter().map(|s| s.id().to_string()).collect(),
            None,
        )
        .unwrap();
        let responses: BTreeMap<String, Label> = all.iter().map(|i| (i.item_id.clone(), 2)).collect();
        let est: Vec<SubscaleEstimate<f64>> = subscales_from_responses(&ders, "s", responses, Modality::Audio).unwrap();
        assert_eq!(est[DersSubscale::Clarity.index()].estimated_score, 10.0);

        // reversed pattern (no, yes, no, no, yes) with raws (3,2,5,1,4) -> 15
        let reversed = [false, true, false, false, true];
        let mut all2 = all.clone();
        for (k, r) in reversed.iter().enumerate() {
            all2[k].reverse_scored = *r;
        }
        let ders2 = InstrumentDefinition::new(
            "ders",
            all2.clone(),
            DersSubscale::CANONICAL.iter().map(|s| s.id().to_string()).collect(),
            None,
        )
        .unwrap();
        let mut responses: BTreeMap<String, Label> = all2.iter().map(|i| (i.item_id.clone(), 1)).collect();
        for (k, raw) in [3, 2, 5, 1, 4].into_iter().enumerate() {
            responses.insert(format!("i{k}"), raw);
        }
        let est: Vec<SubscaleEstimate<f64>> = subscales_from_responses(&ders2, "s", responses, Modality::Audio).unwrap();
        assert_eq!(est[0].estimated_score, 15.0);
    }

    #[test]
    fn single_class_items_fall_back_to_constant() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let clf = ItemClassifier::train(&x, &[1, 1, 1], &SvmConfig::default(), Preprocessing::None).unwrap();
        assert_eq!(clf, ItemClassifier::Constant(1));
        assert_eq!(clf.predict(&[9.0]).unwrap(), 1);

        // a cohort where nobody moves off the minimum answers 1 everywhere
        let mut cfg = SynthConfig { n_subjects: 4, seed: 3, ..SynthConfig::default() }.noise_free();
        cfg.response_loading = 0.0;
        cfg.item_offset_spread = 0.0;
        cfg.instruments[0] = {
            let d = fixtures::ders();
            let items = d
                .items()
                .iter()
                .map(|i| ItemDefinition { min_response: 1, max_response: 2, reverse_scored: false, ..i.clone() })
                .collect();
            InstrumentDefinition::new("ders", items, d.subscale_ids().to_vec(), None).unwrap()
        };
        // centre 1.5 rounds to 2 for every item
        let c: Cohort<f64> = generate_cohort(&cfg).unwrap();
        let ids = c.subject_ids().to_vec();
        let pred = predict_item_responses(&c, &ids[1..], &ids[0], Modality::Audio, &SvmConfig::default(), Preprocessing::None).unwrap();
        assert!(pred.values().all(|v| *v == 2));
    }

    #[test]
    fn indirect_estimates_are_attainable_sums() {
        let c = small_cohort(8, 4);
        let ids = c.subject_ids().to_vec();
        let est = estimate_subscales_indirect(&c, &ids[1..], &ids[0], Modality::Video, &SvmConfig::default(), Preprocessing::ZScore).unwrap();
        for e in est {
            let (lo, hi) = c.ders().subscale_range(e.subscale.id()).unwrap();
            assert_eq!(e.estimated_score.fract(), 0.0);
            assert!(e.estimated_score >= f64::from(lo) && e.estimated_score <= f64::from(hi));
        }
    }

    #[test]
    fn direct_estimates_stay_in_training_range() {
        let c = small_cohort(10, 6);
        let ids = c.subject_ids().to_vec();
        let train = &ids[1..];
        let est = estimate_subscales_direct(&c, train, &ids[0], Modality::Audio, &ForestConfig::default(), Preprocessing::None).unwrap();
        for e in est {
            let vals: Vec<i32> = train.iter().map(|s| c.ders_scores(s).unwrap()[e.subscale.index()]).collect();
            let lo = f64::from(*vals.iter().min().unwrap());
            let hi = f64::from(*vals.iter().max().unwrap());
            assert!(e.estimated_score >= lo && e.estimated_score <= hi);
        }
    }

    #[test]
    fn cascade_contracts() {
        let x = vec![vec![1.0; 6], vec![2.0; 6]];
        let m = train_cascade(&x, &[3.0, 7.0], Target::Mdd, &ForestConfig::memorizing()).unwrap();
        assert_eq!(m.predict(&[2.0; 6]).unwrap(), 7.0);
        assert!(matches!(m.predict(&[1.0; 5]), Err(PipelineError::CascadeDimension { found: 5 })));
        assert!(matches!(
            train_cascade(&[vec![1.0; 5]], &[1.0], Target::Mdd, &ForestConfig::default()),
            Err(PipelineError::CascadeDimension { found: 5 })
        ));
        assert!(matches!(
            train_cascade::<f64>(&[], &[], Target::Mdd, &ForestConfig::default()),
            Err(PipelineError::EmptyTraining)
        ));
        let single = train_cascade(&[vec![4.0; 6]], &[11.0], Target::Ptsd, &ForestConfig::default()).unwrap();
        assert_eq!(single.predict(&[0.0; 6]).unwrap(), 11.0);
        assert_eq!(single.predict(&[100.0; 6]).unwrap(), 11.0);
    }

    fn estimates_from(scores: [f64; 6], subject: &str) -> Vec<SubscaleEstimate<f64>> {
        DersSubscale::CANONICAL
            .iter()
            .map(|&s| SubscaleEstimate {
                subject_id: subject.into(),
                subscale: s,
                estimated_score: scores[s.index()],
                approach: Approach::Direct,
                modality: Modality::Fused,
            })
            .collect()
    }

    #[test]
    fn via_erd_reorders_and_validates() {
        let c = small_cohort(12, 9);
        let ids = c.subject_ids().to_vec();
        let train = &ids[1..];
        let m = train_cascade_on_cohort(&c, train, Target::Mdd, &ForestConfig::memorizing()).unwrap();
        let s = &train[3];
        let own: Vec<f64> = c.ders_scores(s).unwrap().iter().map(|v| f64::from(*v)).collect();
        let fitted = m.predict(&own).unwrap();
        let mut est = estimates_from(own.clone().try_into().unwrap(), &ids[0]);
        let a = estimate_severity_via_erd(&m, &est).unwrap();
        assert_eq!(a.estimated_severity, fitted);
        assert_eq!(a.route, Route::ViaErd);
        est.reverse();
        est.swap(1, 4);
        assert_eq!(estimate_severity_via_erd(&m, &est).unwrap(), a);

        est.pop();
        assert!(matches!(estimate_severity_via_erd(&m, &est), Err(PipelineError::MissingSubscale(_))));
        let mut mixed = estimates_from([1.0; 6], "a");
        mixed[2].subject_id = "b".into();
        assert!(matches!(estimate_severity_via_erd(&m, &mixed), Err(PipelineError::MixedSubjects(_))));
        let mut dup = estimates_from([1.0; 6], "a");
        dup[0].subscale = DersSubscale::Goals;
        assert!(matches!(estimate_severity_via_erd(&m, &dup), Err(PipelineError::DuplicateSubscale(_))));
    }

    #[test]
    fn strategies_only_severity_is_learned() {
        let c = small_cohort(25, 21);
        let strat = DersSubscale::Strategies.index();
        let mut ids = c.subject_ids().to_vec();
        // forests cannot extrapolate, so hold out a mid-range subject
        ids.sort_by_key(|s| (c.ders_scores(s).unwrap()[strat], s.clone()));
        let test = ids.remove(ids.len() / 2);
        let x: Vec<Vec<f64>> = ids.iter().map(|s| self_reported(&c, s).unwrap()).collect();
        let y: Vec<f64> = x.iter().map(|v| v[strat]).collect();
        let m = train_cascade(&x, &y, Target::Ptsd, &ForestConfig::default()).unwrap();
        let got = m.predict(&self_reported(&c, &test).unwrap()).unwrap();
        let truth = f64::from(c.ders_scores(&test).unwrap()[strat]);
        assert!((got - truth).abs() <= 2.0, "{got} vs {truth}");
    }

    #[test]
    fn unknown_names_are_errors() {
        assert!("depression".parse::<Target>().is_err());
        assert!("sideways".parse::<Approach>().is_err());
        assert_eq!("PTSD".parse::<Target>().unwrap(), Target::Ptsd);
        assert_eq!(subject_id(0), "s001");
    }
}
