use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pairing::PairedSample;
use super::split::Split;
use crate::error::{Error, Result};
use crate::volume::{RoiSpec, Volume};

/// MRI dataset treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MriMode {
    /// Image as-is.
    Raw,
    /// Image multiplied by the binary structure mask.
    WithSeg,
    /// The binary mask itself.
    Bin,
}

impl FromStr for MriMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "").to_ascii_lowercase().as_str() {
            "raw" => Ok(MriMode::Raw),
            "withseg" => Ok(MriMode::WithSeg),
            "bin" => Ok(MriMode::Bin),
            other => Err(Error::Config(format!(
                "unknown MRI mode {other:?} (expected raw|withseg|bin)"
            ))),
        }
    }
}

impl fmt::Display for MriMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MriMode::Raw => "raw",
            MriMode::WithSeg => "with_seg",
            MriMode::Bin => "bin",
        })
    }
}

/// PET sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PetGrid {
    /// Resampled onto the MRI ROI grid.
    Origin,
    /// Same voxel count at twice the spacing, covering a larger field of view.
    Dilated,
}

impl FromStr for PetGrid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "origin" => Ok(PetGrid::Origin),
            "dilated" => Ok(PetGrid::Dilated),
            other => Err(Error::Config(format!(
                "unknown PET grid {other:?} (expected origin|dilated)"
            ))),
        }
    }
}

impl fmt::Display for PetGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PetGrid::Origin => "origin",
            PetGrid::Dilated => "dilated",
        })
    }
}

pub fn apply_roi_mode(image: &Volume, labels: Option<&Volume>, mode: MriMode) -> Result<Volume> {
    if mode == MriMode::Raw {
        return Ok(image.clone());
    }
    let labels = labels.ok_or(Error::MissingLabels("with_seg and bin modes need a label volume"))?;
    if labels.dims() != image.dims() {
        return Err(Error::shape(format!(
            "label dims {:?} differ from image dims {:?}",
            labels.dims(),
            image.dims()
        )));
    }
    if let Some(v) = labels.voxels().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Label(format!("label volume must be binary, found {v}")));
    }
    let voxels = match mode {
        MriMode::WithSeg => image.voxels().iter().zip(labels.voxels()).map(|(a, b)| a * b).collect(),
        _ => labels.voxels().to_vec(),
    };
    image.with_voxels(voxels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityRois {
    pub mri: RoiSpec,
    pub pet: RoiSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modes {
    pub mri: MriMode,
    pub pet: PetGrid,
}

/// The study cohort. Image paths are relative to the manifest's directory
/// unless absolute. `roi` is absent until the volumes have been preprocessed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub samples: Vec<PairedSample>,
    pub split: BTreeMap<String, Split>,
    pub roi: Option<ModalityRois>,
    pub modes: Modes,
}

impl CohortManifest {
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if !self.split.contains_key(&s.patient_id) {
                return Err(Error::Data(format!("patient {} has no split assignment", s.patient_id)));
            }
            if s.date_gap_days > 365 {
                return Err(Error::Data(format!(
                    "sample of {} has a {}-day gap",
                    s.patient_id, s.date_gap_days
                )));
            }
        }
        Ok(())
    }

    pub fn split_of(&self, sample: &PairedSample) -> Option<Split> {
        self.split.get(&sample.patient_id).copied()
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &PairedSample> {
        self.samples.iter().filter(move |s| self.split_of(s) == Some(split))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Resolves a manifest path entry against the manifest's directory.
pub fn resolve(base: &Path, entry: &str) -> std::path::PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Label;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, binary: bool) -> Volume {
        let dims = [5, 4, 3];
        let vox = (0..60)
            .map(|_| {
                if binary {
                    rng.random_range(0..2) as f32
                } else {
                    rng.random_range(-2.0..2.0)
                }
            })
            .collect();
        Volume::new(dims, [1.0; 3], crate::volume::IDENTITY, vox).unwrap()
    }

    #[test]
    fn roi_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = random_volume(&mut rng, false);
        let mask = random_volume(&mut rng, true);
        assert_eq!(apply_roi_mode(&img, None, MriMode::Raw).unwrap(), img);
        let ones = img.with_voxels(vec![1.0; 60]).unwrap();
        assert_eq!(apply_roi_mode(&img, Some(&ones), MriMode::WithSeg).unwrap(), img);

        let ws = apply_roi_mode(&img, Some(&mask), MriMode::WithSeg).unwrap();
        for i in 0..60 {
            assert_eq!(ws.voxels()[i], img.voxels()[i] * mask.voxels()[i]);
        }
        assert_eq!(apply_roi_mode(&ws, Some(&mask), MriMode::WithSeg).unwrap(), ws);
        assert_eq!(
            apply_roi_mode(&img, Some(&mask), MriMode::Bin).unwrap().voxels(),
            mask.voxels()
        );

        assert!(matches!(
            apply_roi_mode(&img, None, MriMode::Bin),
            Err(Error::MissingLabels(_))
        ));
        let small = Volume::zeros([2, 2, 2], [1.0; 3]).unwrap();
        assert!(matches!(
            apply_roi_mode(&img, Some(&small), MriMode::WithSeg),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            apply_roi_mode(&img, Some(&img), MriMode::Bin),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("withseg".parse::<MriMode>().unwrap(), MriMode::WithSeg);
        assert_eq!("with_seg".parse::<MriMode>().unwrap(), MriMode::WithSeg);
        assert_eq!("dilated".parse::<PetGrid>().unwrap(), PetGrid::Dilated);
        assert!("seg".parse::<MriMode>().is_err());
    }

    #[test]
    fn manifest_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = CohortManifest {
            samples: vec![PairedSample {
                patient_id: "P1".into(),
                mri_path: "a.nii".into(),
                pet_path: "b.nii".into(),
                date_gap_days: 12,
                label: Label::SMci,
            }],
            split: [("P1".to_string(), Split::Val)].into(),
            roi: Some(ModalityRois {
                mri: RoiSpec::fine([1.0, 2.0, 3.5]),
                pet: RoiSpec::dilated([1.0, 2.0, 3.5]),
            }),
            modes: Modes {
                mri: MriMode::WithSeg,
                pet: PetGrid::Dilated,
            },
        };
        let p = dir.path().join("m.json");
        m.write(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let keys: Vec<usize> = ["\"samples\"", "\"split\"", "\"roi\"", "\"modes\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert!(text.contains("\"sMCI\"") && text.contains("\"with_seg\""));
        assert_eq!(CohortManifest::read(&p).unwrap(), m);

        let mut bad = m.clone();
        bad.split.clear();
        assert!(bad.validate().is_err());
    }
}
