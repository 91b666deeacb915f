//! ROI extraction for a cohort: template-center propagation, MRI crop, PET
//! alignment onto the Origin or Dilated grid.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{apply_roi_mode, resolve, CohortManifest, ModalityRois, Modes, MriMode, PetGrid};
use super::pairing::PairedSample;
use crate::error::{Error, Result};
use crate::volume::{
    average_frames, average_points, crop_roi, invert, label_centroid, normalize_intensity, parse_affine, read_frames,
    read_volume, resample, transform_point, write_volume, Affine, Grid, NormMethod, RoiSpec, Volume, IDENTITY,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub mri_mode: MriMode,
    pub pet_grid: PetGrid,
    /// `[x, y, z]` ROI size in voxels.
    pub roi_size: [usize; 3],
    pub normalize: Option<NormMethod>,
    /// Template-space ROI center; derived from the label sidecars when absent.
    pub template_center: Option<[f64; 3]>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            mri_mode: MriMode::Raw,
            pet_grid: PetGrid::Origin,
            roi_size: RoiSpec::DEFAULT_SIZE,
            normalize: None,
            template_center: None,
        }
    }
}

fn sidecar(image: &Path, suffix: &str) -> PathBuf {
    let name = image.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let stem = name
        .strip_suffix(".nii")
        .or_else(|| name.strip_suffix(".hdr"))
        .unwrap_or(name);
    image.with_file_name(format!("{stem}{suffix}"))
}

/// `<stem>.seg.nii` beside an image.
pub fn seg_path(image: &Path) -> PathBuf {
    sidecar(image, ".seg.nii")
}

/// `<stem>.xfm` beside an image.
pub fn xfm_path(image: &Path) -> PathBuf {
    sidecar(image, ".xfm")
}

fn read_xfm(image: &Path) -> Result<Option<Affine>> {
    let p = xfm_path(image);
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    parse_affine(&text).map(Some)
}

fn read_seg(image: &Path) -> Result<Option<Volume>> {
    let p = seg_path(image);
    if p.exists() {
        read_volume(&p).map(Some)
    } else {
        Ok(None)
    }
}

/// Mean of the label centroids mapped back to template space.
pub fn derive_template_center(manifest: &CohortManifest, base: &Path) -> Result<[f64; 3]> {
    let points: Vec<[f64; 3]> = manifest
        .samples
        .par_iter()
        .map(|s| {
            let mri = resolve(base, &s.mri_path);
            match (read_seg(&mri)?, read_xfm(&mri)?) {
                (Some(seg), Some(xfm)) => Ok(Some(transform_point(&invert(&xfm)?, label_centroid(&seg)?))),
                _ => Ok(None),
            }
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if points.is_empty() {
        return Err(Error::Data(
            "no MRI has both a .seg.nii and an .xfm sidecar; pass an explicit template center".into(),
        ));
    }
    average_points(&points)
}

fn same_spacing(v: &Volume, s: [f64; 3]) -> bool {
    (0..3).all(|i| (v.spacing()[i] - s[i]).abs() <= 1e-6 * s[i])
}

fn extract(v: &Volume, roi: &RoiSpec) -> Result<Volume> {
    if same_spacing(v, roi.spacing) {
        crop_roi(v, roi)
    } else {
        resample(v, &Grid::from_roi(roi, v.affine()), &IDENTITY)
    }
}

pub struct ProcessedSample {
    pub mri: Volume,
    pub pet: Volume,
}

/// Runs the ROI pipeline for one sample.
pub fn preprocess_sample(
    sample: &PairedSample,
    base: &Path,
    cfg: &PreprocessConfig,
    template_center: [f64; 3],
) -> Result<ProcessedSample> {
    let mri_path = resolve(base, &sample.mri_path);
    let mri = read_volume(&mri_path)?;
    let seg = read_seg(&mri_path)?;
    let center = match (read_xfm(&mri_path)?, &seg) {
        (Some(xfm), _) => transform_point(&xfm, template_center),
        (None, Some(seg)) => label_centroid(seg)?,
        (None, None) => template_center,
    };
    let roi = RoiSpec::new(center, cfg.roi_size, [1.0; 3]);
    let mri_roi = extract(&mri, &roi)?;
    let seg_roi = match &seg {
        Some(s) if same_spacing(s, roi.spacing) => Some(crop_roi(s, &roi)?),
        Some(s) => {
            let r = resample(s, &mri_roi.grid(), &IDENTITY)?;
            let bin = r.voxels().iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
            Some(r.with_voxels(bin)?)
        }
        None => None,
    };
    let mut mri_out = apply_roi_mode(&mri_roi, seg_roi.as_ref(), cfg.mri_mode)?;

    let pet_path = resolve(base, &sample.pet_path);
    let frames = read_frames(&pet_path)?;
    let pet = if frames.len() > 1 {
        average_frames(&frames, NormMethod::Zscore)?
    } else {
        frames
            .into_iter()
            .next()
            .ok_or(Error::EmptyInput("PET file has no frames"))?
    };
    let rigid = read_xfm(&pet_path)?.unwrap_or(IDENTITY);
    let target = match cfg.pet_grid {
        PetGrid::Origin => mri_roi.grid(),
        PetGrid::Dilated => {
            let c = mri_roi.voxel_to_world(cfg.roi_size.map(|s| (s / 2) as f64));
            Grid::from_roi(&RoiSpec::new(c, cfg.roi_size, [2.0; 3]), mri_roi.affine())
        }
    };
    let mut pet_out = resample(&pet, &target, &rigid)?;

    if let Some(method) = cfg.normalize {
        if cfg.mri_mode != MriMode::Bin {
            mri_out = normalize_intensity(&mri_out, method)?;
        }
        pet_out = normalize_intensity(&pet_out, method)?;
    }
    Ok(ProcessedSample {
        mri: mri_out,
        pet: pet_out,
    })
}

/// Preprocesses every sample into `out_dir/images` and writes
/// `out_dir/manifest.json`, returning the new manifest.
pub fn preprocess(
    manifest: &CohortManifest,
    manifest_dir: &Path,
    cfg: &PreprocessConfig,
    out_dir: &Path,
) -> Result<CohortManifest> {
    let template_center = match cfg.template_center {
        Some(c) => c,
        None => derive_template_center(manifest, manifest_dir)?,
    };
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let samples = manifest
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let p = preprocess_sample(s, manifest_dir, cfg, template_center)?;
            let mri_rel = format!("images/{}_{i:04}_mri.nii", s.patient_id);
            let pet_rel = format!("images/{}_{i:04}_pet.nii", s.patient_id);
            write_volume(&p.mri, out_dir.join(&mri_rel))?;
            write_volume(&p.pet, out_dir.join(&pet_rel))?;
            Ok(PairedSample {
                mri_path: mri_rel,
                pet_path: pet_rel,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pet_spacing = match cfg.pet_grid {
        PetGrid::Origin => [1.0; 3],
        PetGrid::Dilated => [2.0; 3],
    };
    let out = CohortManifest {
        samples,
        split: manifest.split.clone(),
        roi: Some(ModalityRois {
            mri: RoiSpec::new(template_center, cfg.roi_size, [1.0; 3]),
            pet: RoiSpec::new(template_center, cfg.roi_size, pet_spacing),
        }),
        modes: Modes {
            mri: cfg.mri_mode,
            pet: cfg.pet_grid,
        },
    };
    out.write(out_dir.join("manifest.json"))?;
    Ok(out)
}
