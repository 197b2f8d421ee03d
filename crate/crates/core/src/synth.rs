//! Seeded synthetic cohorts.
//!
//! Each subject draws a latent 6-vector (one coordinate per DERS subscale)
//! from a one-factor Gaussian model. Item responses are rounded, clamped
//! affine functions of their subscale's coordinate; every item response is
//! encoded into an audio and a video vector by an item-specific affine map;
//! severities are rounded, clamped affine combinations of the subscale
//! scores. Randomness is split into a cohort-level stream (item offsets and
//! feature maps) and one stream per subject, so growing the cohort never
//! changes earlier subjects.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, CohortError, DersSubscale, Target};
use crate::features::{quantize_sig9, FeatureError, FeatureSchema, FeatureTable, Modality};
use crate::instrument::{fixtures, score_item, subscale_score, InstrumentDefinition, ResponseSheet};
use crate::scalar::{derive_seed, Scalar};

pub const AUDIO_SCHEMA_SOURCE: &str = include_str!("../fixtures/audio_schema.txt");
pub const VIDEO_SCHEMA_SOURCE: &str = include_str!("../fixtures/video_schema.txt");

pub fn default_audio_schema() -> FeatureSchema {
    FeatureSchema::from_name_list(Modality::Audio, AUDIO_SCHEMA_SOURCE).expect("bundled audio schema")
}

pub fn default_video_schema() -> FeatureSchema {
    FeatureSchema::from_name_list(Modality::Video, VIDEO_SCHEMA_SOURCE).expect("bundled video schema")
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// `total = clamp(round(offset + weights . subscale_scores + noise))`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityWeights {
    /// Canonical subscale order.
    pub weights: [f64; 6],
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub seed: u64,
    /// Per-item response noise (scale points).
    pub response_noise: f64,
    /// Per-component feature noise.
    pub feature_noise: f64,
    /// Noise on severity totals (total-score points).
    pub severity_noise: f64,
    /// Loading of each subscale coordinate on the shared latent factor.
    pub shared_loadings: [f64; 6],
    /// Scale points per latent standard deviation.
    pub response_loading: f64,
    /// Half-width of the uniform per-item difficulty offset.
    pub item_offset_spread: f64,
    pub mdd: SeverityWeights,
    pub ptsd: SeverityWeights,
    /// `(copy, source)` subject indices: `copy` reuses `source`'s latent vector.
    pub latent_twins: Vec<(usize, usize)>,
    #[serde(skip, default = "default_instruments")]
    pub instruments: [InstrumentDefinition; 3],
    #[serde(skip, default = "default_audio_schema")]
    pub audio_schema: FeatureSchema,
    #[serde(skip, default = "default_video_schema")]
    pub video_schema: FeatureSchema,
}

fn default_instruments() -> [InstrumentDefinition; 3] {
    [fixtures::ders(), fixtures::phq8(), fixtures::pclc()]
}

impl Default for SynthConfig {
    fn default() -> Self {
        // five slopes map the 30..150 range of the non-Awareness subscales
        // onto the full PHQ-8 (0..24) and PCL-C (17..85) totals
        let phq = 24.0 / 120.0;
        let pcl = 68.0 / 120.0;
        Self {
            n_subjects: 25,
            seed: 0,
            response_noise: 0.6,
            feature_noise: 4.0,
            severity_noise: 1.5,
            shared_loadings: [0.7, 0.7, 0.7, 0.7, 0.1, 0.7],
            response_loading: 1.2,
            item_offset_spread: 0.4,
            mdd: SeverityWeights {
                weights: [phq, phq, phq, phq, 0.0, phq],
                offset: -30.0 * phq,
            },
            ptsd: SeverityWeights {
                weights: [pcl, pcl, pcl, pcl, 0.0, pcl],
                offset: 17.0 - 30.0 * pcl,
            },
            latent_twins: Vec::new(),
            instruments: default_instruments(),
            audio_schema: default_audio_schema(),
            video_schema: default_video_schema(),
        }
    }
}

impl SynthConfig {
    /// Same structure with every noise source switched off.
    pub fn noise_free(&self) -> Self {
        Self {
            response_noise: 0.0,
            feature_noise: 0.0,
            severity_noise: 0.0,
            ..self.clone()
        }
    }

    pub fn severity_weights(&self, target: Target) -> &SeverityWeights {
        match target {
            Target::Mdd => &self.mdd,
            Target::Ptsd => &self.ptsd,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_subjects < 2 {
            return bad(format!("n_subjects must be >= 2, got {}", self.n_subjects));
        }
        for (name, v) in [
            ("response_noise", self.response_noise),
            ("feature_noise", self.feature_noise),
            ("severity_noise", self.severity_noise),
            ("item_offset_spread", self.item_offset_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !self.response_loading.is_finite() {
            return bad("response_loading must be finite".into());
        }
        if let Some(l) = self.shared_loadings.iter().find(|l| !(l.abs() <= 1.0)) {
            return bad(format!("shared loading {l} outside [-1, 1]"));
        }
        for w in [&self.mdd, &self.ptsd] {
            if w.weights.iter().chain([&w.offset]).any(|x| !x.is_finite()) {
                return bad("severity weights must be finite".into());
            }
        }
        for &(copy, source) in &self.latent_twins {
            if copy >= self.n_subjects || source >= self.n_subjects || copy == source {
                return bad(format!("latent twin ({copy}, {source}) out of range"));
            }
            if self.latent_twins.iter().any(|&(c, _)| c == source) {
                return bad(format!("latent twin source {source} is itself a copy"));
            }
        }
        let ids: Vec<&str> = self.instruments.iter().map(|i| i.instrument_id()).collect();
        if ids != [crate::cohort::DERS_ID, crate::cohort::PHQ8_ID, crate::cohort::PCLC_ID] {
            return bad(format!("instruments must be [ders, phq8, pclc], got {ids:?}"));
        }
        for s in DersSubscale::CANONICAL {
            if !self.instruments[0].has_subscale(s.id()) {
                return bad(format!("DERS instrument lacks subscale `{}`", s.id()));
            }
        }
        if self.audio_schema.dimension() == 0 || self.video_schema.dimension() == 0 {
            return bad("feature schemas must be non-empty".into());
        }
        Ok(())
    }
}

pub fn subject_id(index: usize) -> String {
    format!("s{:03}", index + 1)
}

/// Item-level parameters shared by all subjects.
struct ItemMaps {
    /// Difficulty offset per DERS item.
    offsets: Vec<f64>,
    /// Per modality: feature slope sign*magnitude per component.
    slopes: [Vec<f64>; 2],
    /// Per modality, per item: item gain.
    gains: [Vec<f64>; 2],
    /// Per modality, per item, per component: intercept.
    intercepts: [Vec<Vec<f64>>; 2],
}

impl ItemMaps {
    fn draw(config: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["item-maps"]));
        let n_items = config.instruments[0].items().len();
        let spread = config.item_offset_spread;
        let offsets = (0..n_items)
            .map(|_| if spread > 0.0 { rng.random_range(-spread..=spread) } else { 0.0 })
            .collect();
        let mut per_modality = |dim: usize| {
            let slopes: Vec<f64> = (0..dim)
                .map(|_| {
                    let m: f64 = rng.random_range(0.5..1.5);
                    if rng.random::<bool>() { m } else { -m }
                })
                .collect();
            let gains: Vec<f64> = (0..n_items).map(|_| rng.random_range(0.8..1.2)).collect();
            let intercepts: Vec<Vec<f64>> = (0..n_items)
                .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            (slopes, gains, intercepts)
        };
        let (sa, ga, ia) = per_modality(config.audio_schema.dimension());
        let (sv, gv, iv) = per_modality(config.video_schema.dimension());
        Self {
            offsets,
            slopes: [sa, sv],
            gains: [ga, gv],
            intercepts: [ia, iv],
        }
    }
}

fn subject_rng(config: &SynthConfig, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["subject", &index.to_string()]))
}

fn draw_latent(config: &SynthConfig, rng: &mut ChaCha8Rng) -> [f64; 6] {
    let shared: f64 = StandardNormal.sample(rng);
    let mut z = [0.0; 6];
    for (k, slot) in z.iter_mut().enumerate() {
        let l = config.shared_loadings[k];
        let own: f64 = StandardNormal.sample(rng);
        *slot = l * shared + (1.0 - l * l).max(0.0).sqrt() * own;
    }
    z
}

fn noise(sd: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sd > 0.0 {
        Normal::new(0.0, sd).expect("valid sd").sample(rng)
    } else {
        0.0
    }
}

/// Splits a total over the items of an instrument, extra points going to a
/// random subset, and converts scored values back to raw responses.
fn distribute_total(
    inst: &InstrumentDefinition,
    total: i32,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<String, i32> {
    let items = inst.items();
    let mut scored: Vec<i32> = items.iter().map(|i| i.min_response).collect();
    let mut remaining = total - scored.iter().sum::<i32>();
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    while remaining > 0 {
        let mut moved = false;
        for &k in &order {
            if remaining == 0 {
                break;
            }
            if scored[k] < items[k].max_response {
                scored[k] += 1;
                remaining -= 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    items
        .iter()
        .zip(scored)
        .map(|(item, s)| {
            let raw = if item.reverse_scored {
                item.min_response + item.max_response - s
            } else {
                s
            };
            (item.item_id.clone(), raw)
        })
        .collect()
}

pub fn generate_cohort<T: Scalar>(config: &SynthConfig) -> Result<Cohort<T>, SynthError> {
    config.validate()?;
    let [ders, phq8, pclc] = &config.instruments;
    let maps = ItemMaps::draw(config);
    let twins: BTreeMap<usize, usize> = config.latent_twins.iter().copied().collect();
    let schemas = [&config.audio_schema, &config.video_schema];

    let mut sheets = Vec::new();
    let mut tables: [BTreeMap<(String, String), Vec<T>>; 2] = [BTreeMap::new(), BTreeMap::new()];
    let mut severities = BTreeMap::new();

    for index in 0..config.n_subjects {
        let sid = subject_id(index);
        let mut rng = subject_rng(config, index);
        let own_latent = draw_latent(config, &mut rng);
        let latent = match twins.get(&index) {
            Some(&source) => draw_latent(config, &mut subject_rng(config, source)),
            None => own_latent,
        };

        let mut responses = BTreeMap::new();
        let mut scored_items = Vec::with_capacity(ders.items().len());
        for (k, item) in ders.items().iter().enumerate() {
            let subscale = DersSubscale::from_id(&item.subscale_id).expect("validated DERS subscales");
            let centre = f64::from(item.min_response + item.max_response) / 2.0;
            let value = centre
                + config.response_loading * latent[subscale.index()]
                + maps.offsets[k]
                + noise(config.response_noise, &mut rng);
            let scored = (value.round() as i32).clamp(item.min_response, item.max_response);
            let raw = if item.reverse_scored {
                item.min_response + item.max_response - scored
            } else {
                scored
            };
            debug_assert_eq!(score_item(item, raw).ok(), Some(scored));
            responses.insert(item.item_id.clone(), raw);
            scored_items.push(scored);
        }
        let ders_sheet = ResponseSheet::new(&sid, ders.instrument_id(), responses);
        let mut subscales = [0.0; 6];
        for s in DersSubscale::CANONICAL {
            subscales[s.index()] = f64::from(subscale_score(ders, &ders_sheet, s.id()).map_err(CohortError::from)?);
        }

        for target in Target::ALL {
            let inst = if target == Target::Mdd { phq8 } else { pclc };
            let w = config.severity_weights(target);
            let linear: f64 = w.offset + w.weights.iter().zip(&subscales).map(|(a, b)| a * b).sum::<f64>();
            let (lo, hi) = inst.total_range();
            let total = ((linear + noise(config.severity_noise, &mut rng)).round() as i32).clamp(lo, hi);
            let responses = distribute_total(inst, total, &mut rng);
            sheets.push(ResponseSheet::new(&sid, inst.instrument_id(), responses));
            severities.insert((sid.clone(), target), total);
        }

        for (m, table) in tables.iter_mut().enumerate() {
            for (k, item) in ders.items().iter().enumerate() {
                let s = f64::from(scored_items[k]);
                let v: Vec<T> = (0..schemas[m].dimension())
                    .map(|j| {
                        let x = maps.slopes[m][j] * maps.gains[m][k] * s
                            + maps.intercepts[m][k][j]
                            + noise(config.feature_noise, &mut rng);
                        quantize_sig9(T::lit(x))
                    })
                    .collect();
                table.insert((sid.clone(), item.item_id.clone()), v);
            }
        }
        sheets.push(ders_sheet);
    }

    let [audio_rows, video_rows] = tables;
    let audio = FeatureTable::new(config.audio_schema.clone(), audio_rows)?;
    let video = FeatureTable::new(config.video_schema.clone(), video_rows)?;
    Ok(Cohort::new(
        config.instruments.clone(),
        sheets,
        audio,
        video,
        severities,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEntry {
    pub subscale: DersSubscale,
    pub target: Target,
    /// `None` when either column has zero variance.
    pub pearson: Option<f64>,
    pub configured_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortDiagnostics {
    pub correlations: Vec<CorrelationEntry>,
    /// Entries with a non-zero configured weight whose correlation is below
    /// the floor (or undefined).
    pub flagged: Vec<(DersSubscale, Target)>,
    /// Zero-variance columns by name.
    pub degenerate: Vec<String>,
}

impl CohortDiagnostics {
    pub fn correlation(&self, subscale: DersSubscale, target: Target) -> Option<f64> {
        self.correlations
            .iter()
            .find(|c| c.subscale == subscale && c.target == target)
            .and_then(|c| c.pearson)
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Empirical subscale-severity correlations, checked against the weights the
/// cohort was generated with.
pub fn validate_cohort_statistics<T: Scalar>(
    cohort: &Cohort<T>,
    config: &SynthConfig,
    floor: f64,
) -> Result<CohortDiagnostics, CohortError> {
    let subjects = cohort.subject_ids();
    let mut columns: Vec<Vec<f64>> = (0..6).map(|_| Vec::with_capacity(subjects.len())).collect();
    for s in subjects {
        for (col, v) in columns.iter_mut().zip(cohort.ders_scores(s)?) {
            col.push(f64::from(v));
        }
    }
    let mut degenerate = Vec::new();
    let is_constant = |c: &[f64]| c.iter().all(|v| *v == c[0]);
    for s in DersSubscale::CANONICAL {
        if is_constant(&columns[s.index()]) {
            degenerate.push(s.id().to_string());
        }
    }
    let mut correlations = Vec::new();
    let mut flagged = Vec::new();
    for target in Target::ALL {
        let sev: Vec<f64> = subjects
            .iter()
            .map(|s| cohort.severity(s, target).map(f64::from))
            .collect::<Result<_, _>>()?;
        if is_constant(&sev) {
            degenerate.push(format!("severity:{target}"));
        }
        for s in DersSubscale::CANONICAL {
            let r = pearson(&columns[s.index()], &sev);
            let w = config.severity_weights(target).weights[s.index()];
            if w != 0.0 && r.is_none_or(|r| r < floor) {
                flagged.push((s, target));
            }
            correlations.push(CorrelationEntry {
                subscale: s,
                target,
                pearson: r,
                configured_weight: w,
            });
        }
    }
    Ok(CohortDiagnostics {
        correlations,
        flagged,
        degenerate,
    })
}
