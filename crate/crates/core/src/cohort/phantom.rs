//! Synthetic MRI/PET cohorts with two ellipsoidal structures whose size and
//! PET uptake depend on the class.

use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::records::{write_clinical_csv, Diagnosis, Label, Modality, SubjectRecord};
use super::split::{apportion, check_fractions};
use crate::error::{Error, Result};
use crate::volume::{diagonal_affine, format_affine, translation, write_volume, Affine, Volume};

/// Fraction of `atrophy_delta` applied to each class, in [`Label::ALL`] order
/// (NL, sMCI, pMCI, AD).
pub const SEVERITY: [f64; 4] = [0.0, 0.25, 0.75, 1.0];

const CENTERS: [[f64; 3]; 2] = [[0.3, 0.5, 0.5], [0.7, 0.5, 0.5]];
const RADII: [f64; 3] = [0.12, 0.22, 0.25];

/// Class-dependent sinusoidal texture added to the whole MRI, structures included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    /// Amplitude for NL subjects.
    pub amplitude: f64,
    /// Relative amplitude loss at full severity.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub n_subjects: usize,
    /// NL, sMCI, pMCI, AD.
    pub class_mix: [f64; 4],
    /// `[x, y, z]` voxels at 1 mm.
    pub dims: [usize; 3],
    pub atrophy_delta: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Largest per-axis integer displacement of a subject's anatomy.
    pub max_shift: i64,
    /// Per-subject radius scale drawn from `1 ± radius_jitter`.
    pub radius_jitter: f64,
    pub texture: Option<Texture>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            n_subjects: 20,
            class_mix: [0.25; 4],
            dims: [32, 32, 16],
            atrophy_delta: 0.3,
            seed: 0,
            noise_sigma: 0.1,
            max_shift: 2,
            radius_jitter: 0.0,
            texture: None,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        check_fractions(&self.class_mix, "class mix")?;
        if self.n_subjects < 2 {
            return Err(Error::Config(format!(
                "need at least 2 subjects, got {}",
                self.n_subjects
            )));
        }
        if self.dims[0] < 16 || self.dims[1] < 16 || self.dims[2] < 8 {
            return Err(Error::Config(format!(
                "phantom dims {:?} below the 16x16x8 minimum",
                self.dims
            )));
        }
        if !(0.0..1.0).contains(&self.atrophy_delta) {
            return Err(Error::Config(format!(
                "atrophy delta {} outside [0, 1)",
                self.atrophy_delta
            )));
        }
        if !(0.0..1.0).contains(&self.radius_jitter) || self.noise_sigma < 0.0 || self.max_shift < 0 {
            return Err(Error::Config("jitter, noise and shift must be non-negative".into()));
        }
        Ok(())
    }

    /// Class of every subject: largest-remainder counts, then a seeded shuffle.
    pub fn classes(&self) -> Result<Vec<Label>> {
        self.validate()?;
        let counts = apportion(self.n_subjects, &self.class_mix);
        let mut classes: Vec<Label> = Label::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&l, n)| std::iter::repeat_n(l, n))
            .collect();
        classes.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        Ok(classes)
    }

    fn severity(label: Label) -> f64 {
        SEVERITY[Label::ALL.iter().position(|&l| l == label).unwrap()]
    }

    /// World affine shared by both modalities: 1 mm, centered on the field.
    pub fn affine(&self) -> Affine {
        let mut a = diagonal_affine([1.0; 3]);
        for (r, d) in self.dims.iter().enumerate() {
            a[r][3] = -(*d as f64) / 2.0;
        }
        a
    }

    /// Fixed anatomy center in world mm; every subject is this point moved
    /// by its own displacement.
    pub fn template_center(&self) -> [f64; 3] {
        let a = self.affine();
        std::array::from_fn(|r| a[r][3] + (self.dims[r] as f64 - 1.0) / 2.0)
    }
}

pub struct PhantomSubject {
    pub label: Label,
    pub mri: Volume,
    pub pet: Volume,
    pub seg: Volume,
    /// Template world to subject MRI world.
    pub mri_xfm: Affine,
    /// PET world to MRI world.
    pub pet_xfm: Affine,
    pub records: Vec<SubjectRecord>,
}

fn patient_id(i: usize) -> String {
    format!("PH{:04}", i + 1)
}

fn stem(i: usize) -> String {
    format!("sub-{:04}", i + 1)
}

fn ellipsoid_mask(dims: [usize; 3], shift: [i64; 3], scale: f64) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let centers = CENTERS.map(|c| std::array::from_fn::<f64, 3, _>(|a| c[a] * dims[a] as f64 - 0.5 + shift[a] as f64));
    let radii: [f64; 3] = std::array::from_fn(|a| RADII[a] * dims[a] as f64 * scale);
    let mut mask = vec![false; nx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64, y as f64, z as f64];
                mask[(z * ny + y) * nx + x] = centers
                    .iter()
                    .any(|c| (0..3).map(|a| ((p[a] - c[a]) / radii[a]).powi(2)).sum::<f64>() <= 1.0);
            }
        }
    }
    mask
}

fn texture_at(x: usize, y: usize, z: usize) -> f64 {
    let w = std::f64::consts::FRAC_PI_2;
    (w * x as f64).sin() * (w * y as f64).cos() + 0.5 * (w * z as f64).cos()
}

/// Generates subject `i` of the cohort; deterministic in `(cfg, i, label)`.
pub fn phantom_subject(cfg: &PhantomConfig, i: usize, label: Label) -> Result<PhantomSubject> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64 + 1);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let sev = PhantomConfig::severity(label) * cfg.atrophy_delta;
    let jitter = if cfg.radius_jitter > 0.0 {
        rng.random_range(1.0 - cfg.radius_jitter..=1.0 + cfg.radius_jitter)
    } else {
        1.0
    };
    let scale = (1.0 - sev) * jitter;
    let s = cfg.max_shift;
    let shift: [i64; 3] = std::array::from_fn(|_| rng.random_range(-s..=s));
    let pet_shift: [i64; 3] = std::array::from_fn(|_| rng.random_range(-1..=1));
    let pet_total: [i64; 3] = std::array::from_fn(|a| shift[a] + pet_shift[a]);

    let dims = cfg.dims;
    let mask = ellipsoid_mask(dims, shift, scale);
    let pet_mask = ellipsoid_mask(dims, pet_total, scale);
    let tex_amp = cfg
        .texture
        .map(|t| t.amplitude * (1.0 - PhantomConfig::severity(label) * t.delta))
        .unwrap_or(0.0);
    let [nx, ny, _] = dims;
    let mut mri = Vec::with_capacity(mask.len());
    for (idx, &m) in mask.iter().enumerate() {
        let mut base = if m { 1.0 } else { 0.0 };
        if tex_amp != 0.0 {
            base += tex_amp * texture_at(idx % nx, (idx / nx) % ny, idx / (nx * ny));
        }
        mri.push((base + noise.sample(&mut rng)) as f32);
    }
    let uptake = 1.0 - sev;
    let pet: Vec<f32> = pet_mask
        .iter()
        .map(|&m| ((if m { uptake } else { 0.0 }) + noise.sample(&mut rng)) as f32)
        .collect();
    let seg: Vec<f32> = mask.iter().map(|&m| m as u8 as f32).collect();

    let affine = cfg.affine();
    let vol = |v| Volume::new(dims, [1.0; 3], affine, v);

    let base = NaiveDate::from_ymd_opt(2005, 1, 1).unwrap() + Duration::days(rng.random_range(0..1500));
    let pet_date = base + Duration::days(rng.random_range(0..=90));
    let pid = patient_id(i);
    let st = stem(i);
    let dx = match label {
        Label::NL => Diagnosis::NL,
        Label::AD => Diagnosis::AD,
        Label::SMci | Label::PMci => Diagnosis::MCI,
    };
    let visit = |date, diagnosis, modality, image_path: String| SubjectRecord {
        patient_id: pid.clone(),
        visit_date: date,
        diagnosis,
        modality,
        image_path,
    };
    let mut records = vec![
        visit(base, dx, Modality::MRI, format!("{st}_mri.nii")),
        visit(pet_date, dx, Modality::PET, format!("{st}_pet.nii")),
    ];
    match label {
        Label::SMci => {
            for d in [400, 800, 1200] {
                records.push(visit(
                    base + Duration::days(d),
                    Diagnosis::MCI,
                    Modality::MRI,
                    String::new(),
                ));
            }
        }
        Label::PMci => {
            records.push(visit(
                base + Duration::days(365),
                Diagnosis::MCI,
                Modality::MRI,
                String::new(),
            ));
            let conv = rng.random_range(400..=1000);
            records.push(visit(
                base + Duration::days(conv),
                Diagnosis::AD,
                Modality::MRI,
                String::new(),
            ));
        }
        _ => {}
    }

    Ok(PhantomSubject {
        label,
        mri: vol(mri)?,
        pet: vol(pet)?,
        seg: vol(seg)?,
        mri_xfm: translation(shift.map(|v| v as f64)),
        pet_xfm: translation(pet_shift.map(|v| -v as f64)),
        records,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub config: PhantomConfig,
    pub subjects: Vec<(String, Label)>,
}

/// Writes `clinical.csv`, `phantom.json` and `images/` under `out_dir`.
/// Each MRI `sub-XXXX_mri.nii` has a `.seg.nii` mask and a `.xfm`
/// template-to-subject transform; each PET has a `.xfm` PET-to-MRI transform.
pub fn generate_phantom_cohort(cfg: &PhantomConfig, out_dir: impl AsRef<Path>) -> Result<PhantomTruth> {
    let out_dir = out_dir.as_ref();
    let classes = cfg.classes()?;
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let records: Vec<Vec<SubjectRecord>> = classes
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let s = phantom_subject(cfg, i, label)?;
            let st = stem(i);
            write_volume(&s.mri, images.join(format!("{st}_mri.nii")))?;
            write_volume(&s.seg, images.join(format!("{st}_mri.seg.nii")))?;
            write_volume(&s.pet, images.join(format!("{st}_pet.nii")))?;
            for (name, xfm) in [("mri", &s.mri_xfm), ("pet", &s.pet_xfm)] {
                let p = images.join(format!("{st}_{name}.xfm"));
                std::fs::write(&p, format_affine(xfm)).map_err(|e| Error::io(&p, e))?;
            }
            Ok(s.records)
        })
        .collect::<Result<_>>()?;
    let records: Vec<SubjectRecord> = records.into_iter().flatten().collect();
    write_clinical_csv(out_dir.join("clinical.csv"), &records)?;
    let truth = PhantomTruth {
        config: cfg.clone(),
        subjects: classes.iter().enumerate().map(|(i, &l)| (patient_id(i), l)).collect(),
    };
    let p = out_dir.join("phantom.json");
    let text = serde_json::to_string_pretty(&truth).map_err(|e| Error::Format(e.to_string()))? + "\n";
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::label_centroid;

    fn mask_count(v: &Volume) -> usize {
        v.voxels().iter().filter(|&&x| x != 0.0).count()
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = PhantomConfig::default();
        let a = phantom_subject(&cfg, 3, Label::AD).unwrap();
        let b = phantom_subject(&cfg, 3, Label::AD).unwrap();
        assert_eq!(a.mri, b.mri);
        assert_eq!(a.records, b.records);
        let c = phantom_subject(&cfg, 4, Label::AD).unwrap();
        assert_ne!(a.mri, c.mri);
    }

    #[test]
    fn atrophy_scales_mask_volume() {
        let cfg = PhantomConfig {
            dims: [64, 64, 32],
            ..Default::default()
        };
        let nl = mask_count(&phantom_subject(&cfg, 0, Label::NL).unwrap().seg) as f64;
        let ad = mask_count(&phantom_subject(&cfg, 1, Label::AD).unwrap().seg) as f64;
        let expected = 0.7f64.powi(3);
        assert!((ad / nl / expected - 1.0).abs() < 0.05, "ratio {}", ad / nl);

        let flat = PhantomConfig {
            atrophy_delta: 0.0,
            ..cfg
        };
        let nl = mask_count(&phantom_subject(&flat, 0, Label::NL).unwrap().seg);
        let ad = mask_count(&phantom_subject(&flat, 1, Label::AD).unwrap().seg);
        assert_eq!(nl, ad);
    }

    #[test]
    fn centroid_follows_the_transform() {
        let cfg = PhantomConfig::default();
        for i in 0..5 {
            let s = phantom_subject(&cfg, i, Label::ALL[i % 4]).unwrap();
            let c = label_centroid(&s.seg).unwrap();
            let expected = crate::volume::transform_point(&s.mri_xfm, cfg.template_center());
            for a in 0..3 {
                assert!((c[a] - expected[a]).abs() < 1e-9, "{c:?} vs {expected:?}");
            }
        }
    }

    #[test]
    fn class_mix_is_apportioned() {
        let cfg = PhantomConfig {
            n_subjects: 10,
            class_mix: [0.5, 0.0, 0.0, 0.5],
            ..Default::default()
        };
        let c = cfg.classes().unwrap();
        assert_eq!(c.iter().filter(|&&l| l == Label::NL).count(), 5);
        assert_eq!(c.iter().filter(|&&l| l == Label::AD).count(), 5);
        let bad = PhantomConfig {
            class_mix: [0.5, 0.5, 0.5, 0.0],
            ..cfg
        };
        assert!(matches!(bad.classes(), Err(Error::Config(_))));
    }
}
