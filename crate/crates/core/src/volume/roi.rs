use serde::{Deserialize, Serialize};

use super::{compose, translation, Volume};
use crate::error::{Error, Result};

/// Box of `size_voxels` around a world-space center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub center_world: [f64; 3],
    pub size_voxels: [usize; 3],
    pub spacing: [f64; 3],
}

impl RoiSpec {
    pub const DEFAULT_SIZE: [usize; 3] = [96, 96, 48];

    pub fn new(center_world: [f64; 3], size_voxels: [usize; 3], spacing: [f64; 3]) -> Self {
        Self {
            center_world,
            size_voxels,
            spacing,
        }
    }

    /// 1 mm box used for MRI and the Origin PET grid.
    pub fn fine(center_world: [f64; 3]) -> Self {
        Self::new(center_world, Self::DEFAULT_SIZE, [1.0; 3])
    }

    /// 2 mm box used for the Dilated PET grid.
    pub fn dilated(center_world: [f64; 3]) -> Self {
        Self::new(center_world, Self::DEFAULT_SIZE, [2.0; 3])
    }
}

/// Crops `roi.size_voxels` starting at `floor(center_voxel) - floor(size/2)`,
/// zero-padding where the box leaves the source grid.
pub fn crop_roi(v: &Volume, roi: &RoiSpec) -> Result<Volume> {
    let spacing = v.spacing();
    for i in 0..3 {
        if (spacing[i] - roi.spacing[i]).abs() > 1e-6 * roi.spacing[i].max(1.0) {
            return Err(Error::Precondition(format!(
                "roi spacing {:?} differs from volume spacing {spacing:?}; resample first",
                roi.spacing
            )));
        }
    }
    let cv = v.world_to_voxel(roi.center_world)?;
    let start: [i64; 3] = std::array::from_fn(|i| cv[i].floor() as i64 - (roi.size_voxels[i] / 2) as i64);
    let [ox, oy, oz] = roi.size_voxels;
    let mut out = Vec::with_capacity(ox * oy * oz);
    for z in 0..oz as i64 {
        for y in 0..oy as i64 {
            for x in 0..ox as i64 {
                out.push(v.get_or_zero(start[0] + x, start[1] + y, start[2] + z));
            }
        }
    }
    let affine = compose(v.affine(), &translation(start.map(|s| s as f64)));
    Volume::new(roi.size_voxels, spacing, affine, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMethod {
    Zscore,
    Minmax,
}

impl std::str::FromStr for NormMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" => Ok(Self::Zscore),
            "minmax" => Ok(Self::Minmax),
            other => Err(Error::Config(format!("unknown normalization {other:?}"))),
        }
    }
}

pub fn normalize_intensity(v: &Volume, method: NormMethod) -> Result<Volume> {
    let n = v.len() as f64;
    let vox = v.voxels();
    let out: Vec<f32> = match method {
        NormMethod::Zscore => {
            let mean = vox.iter().map(|&x| x as f64).sum::<f64>() / n;
            let var = vox
                .iter()
                .map(|&x| {
                    let d = x as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            if var <= 0.0 {
                return Err(Error::DegenerateInput("constant volume has zero variance".into()));
            }
            let sd = var.sqrt();
            vox.iter().map(|&x| ((x as f64 - mean) / sd) as f32).collect()
        }
        NormMethod::Minmax => {
            let (lo, hi) = vox.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
            if hi <= lo {
                return Err(Error::DegenerateInput("constant volume has zero range".into()));
            }
            let range = hi as f64 - lo as f64;
            vox.iter().map(|&x| ((x as f64 - lo as f64) / range) as f32).collect()
        }
    };
    v.with_voxels(out)
}

/// Normalizes each frame, then takes the voxelwise mean.
pub fn average_frames(frames: &[Volume], method: NormMethod) -> Result<Volume> {
    let first = frames
        .first()
        .ok_or(Error::EmptyInput("average_frames needs at least one frame"))?;
    let mut acc = vec![0.0f64; first.len()];
    for f in frames {
        if f.dims() != first.dims() {
            return Err(Error::shape(format!(
                "frame dims {:?} differ from {:?}",
                f.dims(),
                first.dims()
            )));
        }
        let norm = normalize_intensity(f, method)?;
        for (a, &x) in acc.iter_mut().zip(norm.voxels()) {
            *a += x as f64;
        }
    }
    let k = frames.len() as f64;
    first.with_voxels(acc.into_iter().map(|a| (a / k) as f32).collect())
}
