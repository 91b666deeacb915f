//! Little-endian NIfTI-1 subset: single-file `n+1` and header/image pair
//! `ni1`, datatypes u8 / i16 / f32, 3D volumes (4D only via [`read_frames`]).

use std::fs;
use std::path::{Path, PathBuf};

use super::{diagonal_affine, Affine, Volume, IDENTITY};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

struct Header {
    dim: [i16; 8],
    datatype: i16,
    pixdim: [f32; 8],
    vox_offset: f32,
    scl_slope: f32,
    scl_inter: f32,
    sform_code: i16,
    srow: [[f32; 4]; 3],
    single_file: bool,
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        return Err(Error::Format("gzip-compressed NIfTI is not supported".into()));
    }
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Corrupt(format!(
            "header truncated: {} of {HEADER_SIZE} bytes",
            bytes.len()
        )));
    }
    let sizeof_hdr = i32_at(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(Error::Format("big-endian NIfTI is not supported".into()));
        }
        return Err(Error::Format(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    let magic = &bytes[344..348];
    let single_file = match magic {
        b"n+1\0" => true,
        b"ni1\0" => false,
        _ => return Err(Error::Format(format!("bad magic {magic:?}"))),
    };
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = i16_at(bytes, 40 + 2 * i);
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = f32_at(bytes, 76 + 4 * i);
    }
    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = f32_at(bytes, 280 + 16 * r + 4 * c);
        }
    }
    Ok(Header {
        dim,
        datatype: i16_at(bytes, 70),
        pixdim,
        vox_offset: f32_at(bytes, 108),
        scl_slope: f32_at(bytes, 112),
        scl_inter: f32_at(bytes, 116),
        sform_code: i16_at(bytes, 254),
        srow,
        single_file,
    })
}

fn image_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("img")
}

fn load(path: &Path) -> Result<(Header, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&bytes)?;
    if header.single_file {
        Ok((header, bytes))
    } else {
        let img = image_path_for(path);
        let data = fs::read(&img).map_err(|e| Error::io(&img, e))?;
        Ok((header, data))
    }
}

/// Decodes `count` voxels starting at `offset`, applying scl_slope/scl_inter
/// when they describe a non-identity scaling.
fn decode(header: &Header, data: &[u8], offset: usize, count: usize) -> Result<Vec<f32>> {
    let width = match header.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::UnsupportedDtype(other)),
    };
    let needed = offset + count * width;
    if data.len() < needed {
        return Err(Error::Corrupt(format!(
            "payload truncated: need {needed} bytes, file has {}",
            data.len()
        )));
    }
    let payload = &data[offset..needed];
    let mut out: Vec<f32> = match header.datatype {
        DT_UINT8 => payload.iter().map(|&b| b as f32).collect(),
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    let slope = header.scl_slope;
    let inter = header.scl_inter;
    if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut out {
            *v = *v * slope + inter;
        }
    }
    Ok(out)
}

fn geometry(header: &Header) -> Result<([usize; 3], [f64; 3], Affine)> {
    let mut dims = [0usize; 3];
    for i in 0..3 {
        let d = header.dim[i + 1];
        if d < 1 {
            return Err(Error::Format(format!("dim[{}] = {d} is not positive", i + 1)));
        }
        dims[i] = d as usize;
    }
    let mut spacing = [1.0f64; 3];
    for i in 0..3 {
        let p = header.pixdim[i + 1].abs() as f64;
        spacing[i] = if p > 0.0 && p.is_finite() { p } else { 1.0 };
    }
    let affine = if header.sform_code > 0 {
        let mut a = IDENTITY;
        for r in 0..3 {
            for c in 0..4 {
                a[r][c] = header.srow[r][c] as f64;
            }
        }
        a
    } else {
        diagonal_affine(spacing)
    };
    Ok((dims, spacing, affine))
}

fn data_offset(header: &Header) -> usize {
    if header.single_file {
        (header.vox_offset.max(DATA_OFFSET as f32)) as usize
    } else {
        header.vox_offset.max(0.0) as usize
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (header, data) = load(path)?;
    if header.dim[0] != 3 {
        return Err(Error::Format(format!(
            "expected a 3D volume (dim[0]=3), found dim[0]={}",
            header.dim[0]
        )));
    }
    let (dims, spacing, affine) = geometry(&header)?;
    let count = dims.iter().product();
    let voxels = decode(&header, &data, data_offset(&header), count)?;
    Volume::new(dims, spacing, affine, voxels)
}

/// Reads a 3D volume as a single frame, or each frame of a 4D series.
pub fn read_frames(path: impl AsRef<Path>) -> Result<Vec<Volume>> {
    let path = path.as_ref();
    let (header, data) = load(path)?;
    let frames = match header.dim[0] {
        3 => 1,
        4 => header.dim[4].max(1) as usize,
        d => return Err(Error::Format(format!("expected dim[0] of 3 or 4, found {d}"))),
    };
    let (dims, spacing, affine) = geometry(&header)?;
    let per_frame: usize = dims.iter().product();
    let width = match header.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::UnsupportedDtype(other)),
    };
    let base = data_offset(&header);
    (0..frames)
        .map(|f| {
            let voxels = decode(&header, &data, base + f * per_frame * width, per_frame)?;
            Volume::new(dims, spacing, affine, voxels)
        })
        .collect()
}

/// Writes a single-file float32 NIfTI-1 with the affine stored as the sform.
pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = vec![0u8; DATA_OFFSET + v.len() * 4];
    let put_i16 = |b: &mut [u8], off: usize, x: i16| b[off..off + 2].copy_from_slice(&x.to_le_bytes());
    let put_f32 = |b: &mut [u8], off: usize, x: f32| b[off..off + 4].copy_from_slice(&x.to_le_bytes());

    buf[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dims = v.dims();
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Format(format!("dims {dims:?} exceed the NIfTI-1 limit")));
    }
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut buf, 40 + 2 * i, *d);
    }
    put_i16(&mut buf, 70, DT_FLOAT32);
    put_i16(&mut buf, 72, 32);
    let spacing = v.spacing();
    let pixdim = [
        1.0,
        spacing[0] as f32,
        spacing[1] as f32,
        spacing[2] as f32,
        1.0,
        0.0,
        0.0,
        0.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        put_f32(&mut buf, 76 + 4 * i, *p);
    }
    put_f32(&mut buf, 108, DATA_OFFSET as f32);
    put_f32(&mut buf, 112, 1.0);
    put_f32(&mut buf, 116, 0.0);
    // xyzt_units: mm
    buf[123] = 2;
    put_i16(&mut buf, 252, 0);
    put_i16(&mut buf, 254, 2);
    let a = v.affine();
    for r in 0..3 {
        for c in 0..4 {
            put_f32(&mut buf, 280 + 16 * r + 4 * c, a[r][c] as f32);
        }
    }
    buf[344..348].copy_from_slice(b"n+1\0");
    for (chunk, x) in buf[DATA_OFFSET..].chunks_exact_mut(4).zip(v.voxels()) {
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}
