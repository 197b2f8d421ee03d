//! The unit of evaluation: subjects with their questionnaire sheets,
//! per-item feature tables and self-reported severities.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{fuse, load_feature_table_inferred, FeatureError, FeatureTable, Modality};
use crate::instrument::{
    load_instrument, load_response_sheets, save_response_sheets, subscale_score, total_score,
    InstrumentDefinition, InstrumentError, ResponseSheet,
};
use crate::scalar::Scalar;

pub const DERS_ID: &str = "ders";
pub const PHQ8_ID: &str = "phq8";
pub const PCLC_ID: &str = "pclc";

#[derive(Debug, Error)]
pub enum CohortError {
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        source: Box<CohortError>,
    },
    #[error("inconsistent cohort: {0}")]
    Inconsistent(String),
    #[error("unknown target `{0}` (expected MDD or PTSD)")]
    UnknownTarget(String),
}

pub type Result<T> = std::result::Result<T, CohortError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "MDD")]
    Mdd,
    #[serde(rename = "PTSD")]
    Ptsd,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Mdd, Target::Ptsd];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Mdd => "MDD",
            Target::Ptsd => "PTSD",
        }
    }

    /// Instrument whose total is this target's severity.
    pub fn instrument_id(self) -> &'static str {
        match self {
            Target::Mdd => PHQ8_ID,
            Target::Ptsd => PCLC_ID,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = CohortError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MDD" => Ok(Target::Mdd),
            "PTSD" => Ok(Target::Ptsd),
            _ => Err(CohortError::UnknownTarget(s.trim().to_string())),
        }
    }
}

/// The six DERS subscales in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DersSubscale {
    Clarity,
    Nonacceptance,
    Goals,
    Impulse,
    Awareness,
    Strategies,
}

impl DersSubscale {
    pub const CANONICAL: [DersSubscale; 6] = [
        DersSubscale::Clarity,
        DersSubscale::Nonacceptance,
        DersSubscale::Goals,
        DersSubscale::Impulse,
        DersSubscale::Awareness,
        DersSubscale::Strategies,
    ];

    pub fn id(self) -> &'static str {
        match self {
            DersSubscale::Clarity => "clarity",
            DersSubscale::Nonacceptance => "nonacceptance",
            DersSubscale::Goals => "goals",
            DersSubscale::Impulse => "impulse",
            DersSubscale::Awareness => "awareness",
            DersSubscale::Strategies => "strategies",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DersSubscale::Clarity => "Clarity",
            DersSubscale::Nonacceptance => "Non-acceptance",
            DersSubscale::Goals => "Goals",
            DersSubscale::Impulse => "Impulse",
            DersSubscale::Awareness => "Awareness",
            DersSubscale::Strategies => "Strategies",
        }
    }

    pub fn index(self) -> usize {
        Self::CANONICAL.iter().position(|s| *s == self).expect("canonical")
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::CANONICAL.into_iter().find(|s| s.id() == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort<T: Scalar> {
    subject_ids: Vec<String>,
    ders: InstrumentDefinition,
    phq8: InstrumentDefinition,
    pclc: InstrumentDefinition,
    sheets: BTreeMap<String, BTreeMap<String, ResponseSheet>>,
    audio: FeatureTable<T>,
    video: FeatureTable<T>,
    fused: FeatureTable<T>,
    severities: BTreeMap<(String, Target), i32>,
}

fn inconsistent(msg: impl Into<String>) -> CohortError {
    CohortError::Inconsistent(msg.into())
}

impl<T: Scalar> Cohort<T> {
    /// Assembles and cross-validates a cohort. Every subject needs a valid
    /// sheet for all three instruments, one feature row per DERS item in both
    /// modalities, and a severity per target equal to that instrument's total.
    pub fn new(
        instruments: [InstrumentDefinition; 3],
        sheets: Vec<ResponseSheet>,
        audio: FeatureTable<T>,
        video: FeatureTable<T>,
        severities: BTreeMap<(String, Target), i32>,
    ) -> Result<Self> {
        let [ders, phq8, pclc] = instruments;
        for (inst, id) in [(&ders, DERS_ID), (&phq8, PHQ8_ID), (&pclc, PCLC_ID)] {
            if inst.instrument_id() != id {
                return Err(inconsistent(format!(
                    "expected instrument `{id}`, got `{}`",
                    inst.instrument_id()
                )));
            }
        }
        let declared: BTreeSet<&str> = ders.subscale_ids().iter().map(String::as_str).collect();
        let canonical: BTreeSet<&str> = DersSubscale::CANONICAL.iter().map(|s| s.id()).collect();
        if declared != canonical {
            return Err(inconsistent(format!(
                "DERS subscales must be exactly {canonical:?}, found {declared:?}"
            )));
        }

        let mut by_instrument: BTreeMap<String, BTreeMap<String, ResponseSheet>> = BTreeMap::new();
        for sheet in sheets {
            let slot = by_instrument.entry(sheet.instrument_id.clone()).or_default();
            if slot.contains_key(&sheet.subject_id) {
                return Err(inconsistent(format!(
                    "two `{}` sheets for subject `{}`",
                    sheet.instrument_id, sheet.subject_id
                )));
            }
            slot.insert(sheet.subject_id.clone(), sheet);
        }
        let subject_ids: Vec<String> = by_instrument
            .get(DERS_ID)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default();
        if subject_ids.is_empty() {
            return Err(inconsistent("no DERS sheets"));
        }
        let subjects: BTreeSet<&str> = subject_ids.iter().map(String::as_str).collect();
        for inst in [&ders, &phq8, &pclc] {
            let m = by_instrument
                .get(inst.instrument_id())
                .ok_or_else(|| inconsistent(format!("no `{}` sheets", inst.instrument_id())))?;
            let have: BTreeSet<&str> = m.keys().map(String::as_str).collect();
            if have != subjects {
                return Err(inconsistent(format!(
                    "`{}` sheets cover {:?}, DERS sheets cover {:?}",
                    inst.instrument_id(),
                    have,
                    subjects
                )));
            }
            for sheet in m.values() {
                sheet.validate(inst)?;
            }
        }
        if let Some(extra) = by_instrument
            .keys()
            .find(|k| ![DERS_ID, PHQ8_ID, PCLC_ID].contains(&k.as_str()))
        {
            return Err(inconsistent(format!("sheets for unknown instrument `{extra}`")));
        }

        let expected_keys: BTreeSet<(String, String)> = subject_ids
            .iter()
            .flat_map(|s| ders.items().iter().map(move |i| (s.clone(), i.item_id.clone())))
            .collect();
        for (name, table) in [("audio", &audio), ("video", &video)] {
            let keys: BTreeSet<(String, String)> = table.keys().cloned().collect();
            if keys != expected_keys {
                let missing = expected_keys.difference(&keys).next();
                let extra = keys.difference(&expected_keys).next();
                return Err(inconsistent(format!(
                    "{name} features must have one row per (subject, DERS item); first missing {missing:?}, first extra {extra:?}"
                )));
            }
        }
        let fused = fuse(&audio, &video)?;

        for s in &subject_ids {
            for t in Target::ALL {
                let recorded = severities
                    .get(&(s.clone(), t))
                    .copied()
                    .ok_or_else(|| inconsistent(format!("no {t} severity for `{s}`")))?;
                let inst = if t == Target::Mdd { &phq8 } else { &pclc };
                let total = total_score(inst, &by_instrument[inst.instrument_id()][s])?;
                if total != recorded {
                    return Err(inconsistent(format!(
                        "{t} severity {recorded} for `{s}` differs from {} total {total}",
                        inst.instrument_id()
                    )));
                }
            }
        }
        if severities.len() != subject_ids.len() * Target::ALL.len() {
            return Err(inconsistent("severities for unknown subjects"));
        }

        Ok(Self {
            subject_ids,
            ders,
            phq8,
            pclc,
            sheets: by_instrument,
            audio,
            video,
            fused,
            severities,
        })
    }

    /// Sorted subject ids.
    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn contains_subject(&self, subject_id: &str) -> bool {
        self.subject_ids.binary_search_by(|s| s.as_str().cmp(subject_id)).is_ok()
    }

    pub fn ders(&self) -> &InstrumentDefinition {
        &self.ders
    }

    pub fn instrument(&self, instrument_id: &str) -> Option<&InstrumentDefinition> {
        match instrument_id {
            DERS_ID => Some(&self.ders),
            PHQ8_ID => Some(&self.phq8),
            PCLC_ID => Some(&self.pclc),
            _ => None,
        }
    }

    pub fn instruments(&self) -> [&InstrumentDefinition; 3] {
        [&self.ders, &self.phq8, &self.pclc]
    }

    pub fn sheet(&self, instrument_id: &str, subject_id: &str) -> Option<&ResponseSheet> {
        self.sheets.get(instrument_id)?.get(subject_id)
    }

    pub fn features(&self, modality: Modality) -> &FeatureTable<T> {
        match modality {
            Modality::Audio => &self.audio,
            Modality::Video => &self.video,
            Modality::Fused => &self.fused,
        }
    }

    /// Item ids of one DERS subscale in instrument order.
    pub fn subscale_item_ids(&self, subscale: DersSubscale) -> Vec<&str> {
        self.ders
            .subscale_items(subscale.id())
            .map(|i| i.item_id.as_str())
            .collect()
    }

    /// Self-reported DERS subscale scores in canonical order.
    pub fn ders_scores(&self, subject_id: &str) -> Result<[i32; 6]> {
        let sheet = self
            .sheet(DERS_ID, subject_id)
            .ok_or_else(|| inconsistent(format!("unknown subject `{subject_id}`")))?;
        let mut out = [0; 6];
        for (slot, s) in out.iter_mut().zip(DersSubscale::CANONICAL) {
            *slot = subscale_score(&self.ders, sheet, s.id())?;
        }
        Ok(out)
    }

    pub fn severity(&self, subject_id: &str, target: Target) -> Result<i32> {
        self.severities
            .get(&(subject_id.to_string(), target))
            .copied()
            .ok_or_else(|| inconsistent(format!("no {target} severity for `{subject_id}`")))
    }

    pub fn severities(&self) -> &BTreeMap<(String, Target), i32> {
        &self.severities
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| CohortError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CohortError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn in_file<R>(path: &Path, r: std::result::Result<R, impl Into<CohortError>>) -> Result<R> {
    r.map_err(|e| CohortError::InFile {
        path: path.to_path_buf(),
        source: Box::new(e.into()),
    })
}

pub const SEVERITY_HEADER: &str = "subject_id,target,total";

/// Writes the cohort directory layout: `instruments/`, `responses/`,
/// `features_<modality>.csv` and `severities.csv`.
pub fn save_cohort<T: Scalar>(cohort: &Cohort<T>, dir: &Path) -> Result<()> {
    let mkdir = |p: PathBuf| {
        fs::create_dir_all(&p).map_err(|source| CohortError::Io { path: p, source })
    };
    mkdir(dir.join("instruments"))?;
    mkdir(dir.join("responses"))?;
    for inst in cohort.instruments() {
        let id = inst.instrument_id();
        write(&dir.join("instruments").join(format!("{id}.csv")), &inst.serialize())?;
        let sheets: Vec<&ResponseSheet> = cohort.sheets[id].values().collect();
        write(
            &dir.join("responses").join(format!("{id}.csv")),
            &save_response_sheets(inst, &sheets),
        )?;
    }
    write(&dir.join("features_audio.csv"), &cohort.audio.save())?;
    write(&dir.join("features_video.csv"), &cohort.video.save())?;
    let mut sev = format!("{SEVERITY_HEADER}\n");
    for ((subject, target), total) in &cohort.severities {
        sev.push_str(&format!("{subject},{target},{total}\n"));
    }
    write(&dir.join("severities.csv"), &sev)
}

fn parse_severities(source: &str) -> Result<BTreeMap<(String, Target), i32>> {
    let mut lines = source.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == SEVERITY_HEADER => {}
        _ => return Err(inconsistent(format!("expected header `{SEVERITY_HEADER}`"))),
    }
    let mut out = BTreeMap::new();
    for (i, row) in lines {
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        let bad = || inconsistent(format!("line {}: malformed severity row `{row}`", i + 1));
        if cells.len() != 3 {
            return Err(bad());
        }
        let target: Target = cells[1].parse()?;
        let total: i32 = cells[2].parse().map_err(|_| bad())?;
        if out.insert((cells[0].to_string(), target), total).is_some() {
            return Err(inconsistent(format!(
                "line {}: duplicate severity for ({}, {target})",
                i + 1,
                cells[0]
            )));
        }
    }
    Ok(out)
}

/// Reads a directory written by [`save_cohort`].
pub fn load_cohort<T: Scalar>(dir: &Path) -> Result<Cohort<T>> {
    let mut instruments = Vec::new();
    let mut sheets = Vec::new();
    for id in [DERS_ID, PHQ8_ID, PCLC_ID] {
        let ipath = dir.join("instruments").join(format!("{id}.csv"));
        let inst = in_file(&ipath, load_instrument(&read(&ipath)?))?;
        if inst.instrument_id() != id {
            return Err(CohortError::InFile {
                path: ipath,
                source: Box::new(inconsistent(format!(
                    "declares instrument `{}`",
                    inst.instrument_id()
                ))),
            });
        }
        let rpath = dir.join("responses").join(format!("{id}.csv"));
        sheets.extend(in_file(&rpath, load_response_sheets(&read(&rpath)?, id))?);
        instruments.push(inst);
    }
    let apath = dir.join("features_audio.csv");
    let audio = in_file(&apath, load_feature_table_inferred(&read(&apath)?, Modality::Audio))?;
    let vpath = dir.join("features_video.csv");
    let video = in_file(&vpath, load_feature_table_inferred(&read(&vpath)?, Modality::Video))?;
    let spath = dir.join("severities.csv");
    let severities = in_file(&spath, parse_severities(&read(&spath)?))?;
    let instruments: [InstrumentDefinition; 3] = instruments.try_into().expect("three instruments");
    Cohort::new(instruments, sheets, audio, video, severities)
}
