//! Cohort construction: modality pairing, MCI outcome labels, patient-level
//! splits, ROI modes, phantom cohorts and the ROI preprocessing pipeline.

mod manifest;
mod pairing;
mod phantom;
mod preprocess;
mod records;
mod split;

pub use manifest::{apply_roi_mode, resolve, CohortManifest, ModalityRois, Modes, MriMode, PetGrid};
pub use pairing::{
    build_samples, label_mci_outcome, pair_modalities, CohortBuild, ImagePair, MciOutcome, PairedSample,
    PairingOutcome, CONVERSION_WINDOW_DAYS, MAX_PAIR_GAP_DAYS,
};
pub use phantom::{
    generate_phantom_cohort, phantom_subject, PhantomConfig, PhantomSubject, PhantomTruth, Texture, SEVERITY,
};
pub use preprocess::{
    derive_template_center, preprocess, preprocess_sample, seg_path, xfm_path, PreprocessConfig, ProcessedSample,
};
pub use records::{
    read_clinical_csv, write_clinical_csv, Diagnosis, Label, Modality, SubjectRecord, Task, CLINICAL_HEADER,
};
pub use split::{apportion, split_by_patient, Split, DEFAULT_FRACTIONS};

use std::path::Path;

use crate::error::Result;

/// Builds a manifest from clinical records whose image paths are relative to
/// `images_dir`. The manifest stores the joined paths.
pub fn build_cohort(
    records: &[SubjectRecord],
    images_dir: &Path,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(CohortManifest, CohortBuild)> {
    let mut build = build_samples(records);
    for s in &mut build.samples {
        s.mri_path = resolve(images_dir, &s.mri_path).to_string_lossy().into_owned();
        s.pet_path = resolve(images_dir, &s.pet_path).to_string_lossy().into_owned();
    }
    let split = split_by_patient(&build.samples, fractions, seed)?;
    let manifest = CohortManifest {
        samples: build.samples.clone(),
        split,
        roi: None,
        modes: Modes {
            mri: MriMode::Raw,
            pet: PetGrid::Origin,
        },
    };
    Ok((manifest, build))
}
