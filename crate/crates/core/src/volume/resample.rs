use rayon::prelude::*;

use super::{compose, invert, transform_point, Grid, Volume};
use crate::error::Result;

/// Trilinear sample at a continuous voxel index. Neighbours outside the grid
/// contribute zero.
pub fn sample_trilinear(v: &Volume, p: [f64; 3]) -> f32 {
    let x0 = p[0].floor();
    let y0 = p[1].floor();
    let z0 = p[2].floor();
    let tx = p[0] - x0;
    let ty = p[1] - y0;
    let tz = p[2] - z0;
    let (xi, yi, zi) = (x0 as i64, y0 as i64, z0 as i64);
    let mut acc = 0.0f64;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - tz } else { tz };
        if wz == 0.0 {
            continue;
        }
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - ty } else { ty };
            if wy == 0.0 {
                continue;
            }
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - tx } else { tx };
                if wx == 0.0 {
                    continue;
                }
                let s = v.get_or_zero(xi + dx, yi + dy, zi + dz) as f64;
                acc += wx * wy * wz * s;
            }
        }
    }
    acc as f32
}

/// Resamples `v` onto `target`.
///
/// `world_transform` maps source world coordinates into target world
/// coordinates (e.g. a PET→MRI rigid registration), so each output voxel is
/// pulled from `inverse(world_transform) · target_world`.
pub fn resample(v: &Volume, target: &Grid, world_transform: &super::Affine) -> Result<Volume> {
    let to_source_world = invert(world_transform)?;
    let source_from_world = invert(v.affine())?;
    let map = compose(&source_from_world, &compose(&to_source_world, &target.affine));

    let [nx, ny, nz] = target.dims;
    let mut out = vec![0.0f32; nx * ny * nz];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(z, plane)| {
        for y in 0..ny {
            for x in 0..nx {
                let p = transform_point(&map, [x as f64, y as f64, z as f64]);
                plane[x + nx * y] = sample_trilinear(v, p);
            }
        }
    });
    Volume::new(target.dims, target.spacing(), target.affine, out)
}
