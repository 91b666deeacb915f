//! Scalar volumes with world geometry.
//!
//! A [`Volume`] stores voxels x-fastest, so the flat buffer of a volume with
//! dims `(X, Y, Z)` is exactly a row-major `[Z][Y][X]` array. That layout is
//! handed to the network as a `[C, D=Z, H=Y, W=X]` tensor without copying
//! axes around.

mod nifti;
mod resample;
mod roi;

pub use nifti::{read_frames, read_volume, write_volume};
pub use resample::{resample, sample_trilinear};
pub use roi::{average_frames, crop_roi, normalize_intensity, NormMethod, RoiSpec};

use crate::error::{Error, Result};

/// Homogeneous 4×4 matrix mapping voxel index (or world mm) to world mm.
pub type Affine = [[f64; 4]; 4];

pub const IDENTITY: Affine = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Affine,
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Affine, voxels: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Geometry(format!("dims must be positive, got {dims:?}")));
        }
        if !spacing.iter().all(|&s| s.is_finite() && s > 0.0) {
            return Err(Error::Geometry(format!("spacing must be positive, got {spacing:?}")));
        }
        if affine[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Geometry(format!(
                "affine bottom row must be (0,0,0,1), got {:?}",
                affine[3]
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        if voxels.len() != n {
            return Err(Error::shape(format!(
                "voxel count {} does not match dims {dims:?} ({n})",
                voxels.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            affine,
            voxels,
        })
    }

    /// Zero-filled volume with an axis-aligned affine built from `spacing`.
    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, diagonal_affine(spacing), vec![0.0; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    /// Voxel value with zero fill outside the grid.
    #[inline]
    pub fn get_or_zero(&self, x: i64, y: i64, z: i64) -> f32 {
        let [nx, ny, nz] = self.dims;
        if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
            0.0
        } else {
            self.get(x as usize, y as usize, z as usize)
        }
    }

    /// Same geometry, new voxel buffer.
    pub fn with_voxels(&self, voxels: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.affine, voxels)
    }

    pub fn grid(&self) -> Grid {
        Grid {
            dims: self.dims,
            affine: self.affine,
        }
    }

    /// World coordinate (mm) of a continuous voxel index.
    pub fn voxel_to_world(&self, ijk: [f64; 3]) -> [f64; 3] {
        transform_point(&self.affine, ijk)
    }

    pub fn world_to_voxel(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        Ok(transform_point(&invert(&self.affine)?, p))
    }
}

/// Output sampling grid for [`resample`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub affine: Affine,
}

impl Grid {
    pub fn new(dims: [usize; 3], affine: Affine) -> Self {
        Self { dims, affine }
    }

    /// Axis-aligned full-field grid, e.g. the 221×257×221 @ 1 mm template space.
    pub fn isotropic(dims: [usize; 3], spacing: f64, origin: [f64; 3]) -> Self {
        let mut affine = diagonal_affine([spacing; 3]);
        for (row, o) in affine.iter_mut().zip(origin) {
            row[3] = o;
        }
        Self { dims, affine }
    }

    /// ROI box sharing the orientation of `reference`, with voxel
    /// `floor(size / 2)` placed exactly on `roi.center_world`.
    pub fn from_roi(roi: &RoiSpec, reference: &Affine) -> Self {
        let mut affine = IDENTITY;
        for col in 0..3 {
            let norm = (0..3)
                .map(|r| reference[r][col] * reference[r][col])
                .sum::<f64>()
                .sqrt();
            for (r, row) in affine.iter_mut().take(3).enumerate() {
                let dir = if norm > 0.0 { reference[r][col] / norm } else { 0.0 };
                row[col] = dir * roi.spacing[col];
            }
        }
        let half = roi.size_voxels.map(|s| (s / 2) as f64);
        let offset = transform_point(&affine, half);
        for r in 0..3 {
            affine[r][3] = roi.center_world[r] - (offset[r] - affine[r][3]);
        }
        Self {
            dims: roi.size_voxels,
            affine,
        }
    }

    /// Voxel spacing implied by the affine's column norms.
    pub fn spacing(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for (col, out) in s.iter_mut().enumerate() {
            *out = (0..3)
                .map(|r| self.affine[r][col] * self.affine[r][col])
                .sum::<f64>()
                .sqrt();
        }
        s
    }
}

pub fn diagonal_affine(spacing: [f64; 3]) -> Affine {
    let mut a = IDENTITY;
    for i in 0..3 {
        a[i][i] = spacing[i];
    }
    a
}

pub fn translation(t: [f64; 3]) -> Affine {
    let mut a = IDENTITY;
    for i in 0..3 {
        a[i][3] = t[i];
    }
    a
}

/// `(affine · (p, 1))[0..3]`.
pub fn transform_point(affine: &Affine, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &affine[r];
        *o = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3];
    }
    out
}

pub fn compose(a: &Affine, b: &Affine) -> Affine {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(a: &Affine) -> Result<Affine> {
    let mut m = *a;
    let mut inv = IDENTITY;
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .expect("non-empty range");
        if m[pivot][col].abs() <= 1e-12 * scale {
            return Err(Error::Geometry("singular transform".into()));
        }
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let p = m[col][col];
        for j in 0..4 {
            m[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..4 {
            if i != col {
                let f = m[i][col];
                if f != 0.0 {
                    for j in 0..4 {
                        m[i][j] -= f * m[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// Componentwise mean of a non-empty point list.
pub fn average_points(points: &[[f64; 3]]) -> Result<[f64; 3]> {
    if points.is_empty() {
        return Err(Error::EmptyInput("average_points needs at least one point"));
    }
    let mut sum = [0.0; 3];
    for p in points {
        for i in 0..3 {
            sum[i] += p[i];
        }
    }
    let n = points.len() as f64;
    Ok(sum.map(|s| s / n))
}

/// Plain-text 4×4 matrix, one row per line, whitespace separated.
pub fn parse_affine(text: &str) -> Result<Affine> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::Format(format!("bad matrix entry {t:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != 16 && values.len() != 12 {
        return Err(Error::Format(format!(
            "expected 12 or 16 matrix entries, found {}",
            values.len()
        )));
    }
    let mut a = IDENTITY;
    for (i, v) in values.iter().enumerate() {
        a[i / 4][i % 4] = *v;
    }
    if a[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::Geometry("matrix bottom row must be 0 0 0 1".into()));
    }
    Ok(a)
}

pub fn format_affine(a: &Affine) -> String {
    a.iter()
        .map(|row| row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

/// Voxel-space centroid of all nonzero voxels, mapped to world mm.
pub fn label_centroid(labels: &Volume) -> Result<[f64; 3]> {
    let [nx, ny, _] = labels.dims;
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for (i, &v) in labels.voxels.iter().enumerate() {
        if v != 0.0 {
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / (nx * ny);
            sum[0] += x as f64;
            sum[1] += y as f64;
            sum[2] += z as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::DegenerateInput("label volume has no foreground".into()));
    }
    let c = sum.map(|s| s / count as f64);
    Ok(labels.voxel_to_world(c))
}
