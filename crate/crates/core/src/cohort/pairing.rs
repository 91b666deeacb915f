use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::records::{Diagnosis, Label, Modality, SubjectRecord};
use crate::error::{Error, Result};

pub const MAX_PAIR_GAP_DAYS: i64 = 365;
pub const CONVERSION_WINDOW_DAYS: i64 = 1095;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedSample {
    pub patient_id: String,
    pub mri_path: String,
    pub pet_path: String,
    pub date_gap_days: u32,
    pub label: Label,
}

/// An MRI/PET match before labeling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePair {
    pub mri: SubjectRecord,
    pub pet: SubjectRecord,
    pub gap_days: u32,
}

#[derive(Debug, Clone, Default)]
pub struct PairingOutcome {
    pub pairs: Vec<ImagePair>,
    /// Image records that ended up in no pair.
    pub unmatched: Vec<SubjectRecord>,
    /// Matched pairs dropped because the two visits disagree on diagnosis.
    pub conflicts: Vec<ImagePair>,
}

fn gap(a: NaiveDate, b: NaiveDate) -> i64 {
    (a - b).num_days().abs()
}

/// Greedy nearest-date matching per patient.
///
/// Candidate edges are every MRI/PET combination of one patient with a gap of
/// at most 365 days, taken in ascending `(gap, PET date, MRI date)` order; an
/// edge is kept when neither image is already used. Kept pairs whose visits
/// carry different diagnoses are then discarded.
pub fn pair_modalities(records: &[SubjectRecord]) -> PairingOutcome {
    let mut by_patient: BTreeMap<&str, Vec<&SubjectRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.has_image()) {
        by_patient.entry(&r.patient_id).or_default().push(r);
    }
    let mut out = PairingOutcome::default();
    for recs in by_patient.values() {
        let mris: Vec<&SubjectRecord> = recs.iter().copied().filter(|r| r.modality == Modality::MRI).collect();
        let pets: Vec<&SubjectRecord> = recs.iter().copied().filter(|r| r.modality == Modality::PET).collect();
        let mut edges = Vec::new();
        for (i, m) in mris.iter().enumerate() {
            for (j, p) in pets.iter().enumerate() {
                let g = gap(m.visit_date, p.visit_date);
                if g <= MAX_PAIR_GAP_DAYS {
                    edges.push((g, p.visit_date, m.visit_date, j, i));
                }
            }
        }
        edges.sort();
        let mut mri_used = vec![false; mris.len()];
        let mut pet_used = vec![false; pets.len()];
        for (g, _, _, j, i) in edges {
            if mri_used[i] || pet_used[j] {
                continue;
            }
            mri_used[i] = true;
            pet_used[j] = true;
            let pair = ImagePair {
                mri: mris[i].clone(),
                pet: pets[j].clone(),
                gap_days: g as u32,
            };
            if pair.mri.diagnosis == pair.pet.diagnosis {
                out.pairs.push(pair);
            } else {
                out.conflicts.push(pair);
            }
        }
        out.unmatched.extend(
            mris.iter()
                .zip(&mri_used)
                .filter(|(_, &u)| !u)
                .map(|(r, _)| (*r).clone()),
        );
        out.unmatched.extend(
            pets.iter()
                .zip(&pet_used)
                .filter(|(_, &u)| !u)
                .map(|(r, _)| (*r).clone()),
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MciOutcome {
    PMci,
    SMci,
    Excluded,
}

/// Classifies an MCI baseline by its follow-up. The earliest visit is the
/// baseline; AD at any visit within 1095 days makes the subject pMCI,
/// otherwise a follow-up reaching at least 1095 days makes it sMCI.
pub fn label_mci_outcome(visits: &[SubjectRecord]) -> Result<MciOutcome> {
    let baseline = visits
        .iter()
        .min_by_key(|v| v.visit_date)
        .ok_or(Error::EmptyInput("label_mci_outcome needs at least the baseline visit"))?;
    if baseline.diagnosis != Diagnosis::MCI {
        return Err(Error::Precondition(format!(
            "baseline visit of {} on {} is {:?}, not MCI",
            baseline.patient_id, baseline.visit_date, baseline.diagnosis
        )));
    }
    let t0 = baseline.visit_date;
    let converted = visits
        .iter()
        .any(|v| v.diagnosis == Diagnosis::AD && (v.visit_date - t0).num_days() <= CONVERSION_WINDOW_DAYS);
    if converted {
        return Ok(MciOutcome::PMci);
    }
    let span = visits.iter().map(|v| (v.visit_date - t0).num_days()).max().unwrap_or(0);
    Ok(if span >= CONVERSION_WINDOW_DAYS {
        MciOutcome::SMci
    } else {
        MciOutcome::Excluded
    })
}

#[derive(Debug, Clone, Default)]
pub struct CohortBuild {
    pub samples: Vec<PairedSample>,
    pub pairing: PairingOutcome,
    /// MCI pairs without enough follow-up.
    pub excluded: Vec<ImagePair>,
}

/// Pairs images and labels every pair. MCI pairs are labeled from the
/// patient's visits on or after the MRI date.
pub fn build_samples(records: &[SubjectRecord]) -> CohortBuild {
    let pairing = pair_modalities(records);
    let mut samples = Vec::new();
    let mut excluded = Vec::new();
    for p in &pairing.pairs {
        let label = match p.mri.diagnosis {
            Diagnosis::NL => Some(Label::NL),
            Diagnosis::AD => Some(Label::AD),
            Diagnosis::MCI => {
                let t0 = p.mri.visit_date;
                let mut visits: Vec<SubjectRecord> = records
                    .iter()
                    .filter(|r| r.patient_id == p.mri.patient_id && r.visit_date > t0)
                    .cloned()
                    .collect();
                visits.push(p.mri.clone());
                match label_mci_outcome(&visits) {
                    Ok(MciOutcome::PMci) => Some(Label::PMci),
                    Ok(MciOutcome::SMci) => Some(Label::SMci),
                    _ => None,
                }
            }
        };
        match label {
            Some(label) => samples.push(PairedSample {
                patient_id: p.mri.patient_id.clone(),
                mri_path: p.mri.image_path.clone(),
                pet_path: p.pet.image_path.clone(),
                date_gap_days: p.gap_days,
                label,
            }),
            None => excluded.push(p.clone()),
        }
    }
    CohortBuild {
        samples,
        pairing,
        excluded,
    }
}
