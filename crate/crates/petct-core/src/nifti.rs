//! NIfTI-1 subset reader/writer
//!
//! Supports exactly what the pipeline needs: single-file `.nii`, 3-D volumes
//! (`dim[0] = 3`), datatypes uint8 / int16 / float32, axis-aligned geometry
//! (spacing from `pixdim`, origin from `qoffset_*`). Files are always written
//! little-endian with `vox_offset` 352; reads auto-detect byte order from
//! `sizeof_hdr`. Label masks are stored as uint8, everything else as float32.
//!
//! Anything outside the subset (other datatypes, 4-D, wrong magic) is a typed
//! error rather than a best-effort guess.

use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeGeometry, VolumeKind};

pub const HEADER_SIZE: usize = 348;
/// Offset of the first voxel in files we write (348-byte header + 4-byte
/// extension flag).
pub const DATA_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

// field offsets in the 348-byte header
const OFF_SIZEOF_HDR: usize = 0;
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_QFORM_CODE: usize = 252;
const OFF_QOFFSET_X: usize = 268;
const OFF_MAGIC: usize = 344;
const OFF_REGULAR: usize = 38;

fn err(msg: impl Into<String>) -> Error {
    Error::Nifti(msg.into())
}

fn i16_at(bytes: &[u8], off: usize, swap: bool) -> i16 {
    let raw = [bytes[off], bytes[off + 1]];
    if swap {
        i16::from_be_bytes(raw)
    } else {
        i16::from_le_bytes(raw)
    }
}

fn i32_at(bytes: &[u8], off: usize, swap: bool) -> i32 {
    let raw = [bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]];
    if swap {
        i32::from_be_bytes(raw)
    } else {
        i32::from_le_bytes(raw)
    }
}

fn f32_at(bytes: &[u8], off: usize, swap: bool) -> f32 {
    let raw = [bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]];
    if swap {
        f32::from_be_bytes(raw)
    } else {
        f32::from_le_bytes(raw)
    }
}

/// Parse a NIfTI-1 file from memory.
pub fn read_nifti_bytes(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < DATA_OFFSET {
        return Err(err(format!(
            "file too short: {} bytes, need at least {}",
            bytes.len(),
            DATA_OFFSET
        )));
    }

    // byte order: sizeof_hdr must read 348 either natively or swapped
    let swap = if i32_at(bytes, OFF_SIZEOF_HDR, false) == HEADER_SIZE as i32 {
        false
    } else if i32_at(bytes, OFF_SIZEOF_HDR, true) == HEADER_SIZE as i32 {
        true
    } else {
        return Err(err("bad header size (sizeof_hdr != 348 in either byte order)"));
    };

    if &bytes[OFF_MAGIC..OFF_MAGIC + 4] != MAGIC {
        return Err(err(format!(
            "bad magic {:?}, expected \"n+1\\0\"",
            &bytes[OFF_MAGIC..OFF_MAGIC + 4]
        )));
    }

    let ndim = i16_at(bytes, OFF_DIM, swap);
    if ndim != 3 {
        return Err(err(format!("dim[0] = {}, only 3-D volumes supported", ndim)));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let v = i16_at(bytes, OFF_DIM + 2 * (i + 1), swap);
        if v < 1 {
            return Err(err(format!("dim[{}] = {} is not positive", i + 1, v)));
        }
        *d = v as usize;
    }

    let datatype = i16_at(bytes, OFF_DATATYPE, swap);
    let bitpix = i16_at(bytes, OFF_BITPIX, swap);
    let expected_bitpix = match datatype {
        DT_UINT8 => 8,
        DT_INT16 => 16,
        DT_FLOAT32 => 32,
        other => {
            return Err(err(format!(
                "unsupported datatype code {} (supported: 2, 4, 16)",
                other
            )))
        }
    };
    if bitpix != expected_bitpix {
        return Err(err(format!(
            "bitpix {} inconsistent with datatype {} (expected {})",
            bitpix, datatype, expected_bitpix
        )));
    }

    let mut spacing = [0f32; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        let v = f32_at(bytes, OFF_PIXDIM + 4 * (i + 1), swap);
        if !(v > 0.0) || !v.is_finite() {
            return Err(err(format!("pixdim[{}] = {} is not a positive spacing", i + 1, v)));
        }
        *s = v;
    }

    let vox_offset = f32_at(bytes, OFF_VOX_OFFSET, swap);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 {
        return Err(err(format!("vox_offset {} below header size", vox_offset)));
    }
    let data_start = vox_offset as usize;

    let scl_slope = f32_at(bytes, OFF_SCL_SLOPE, swap);
    let scl_inter = f32_at(bytes, OFF_SCL_INTER, swap);
    // convention: slope 0 means "no scaling recorded", treat as identity
    let slope = if scl_slope == 0.0 { 1.0 } else { scl_slope };

    let origin = [
        f32_at(bytes, OFF_QOFFSET_X, swap),
        f32_at(bytes, OFF_QOFFSET_X + 4, swap),
        f32_at(bytes, OFF_QOFFSET_X + 8, swap),
    ];

    let n = dims[0] * dims[1] * dims[2];
    let elem = (expected_bitpix / 8) as usize;
    let need = data_start + n * elem;
    if bytes.len() < need {
        return Err(err(format!(
            "truncated payload: need {} bytes, file has {}",
            need,
            bytes.len()
        )));
    }

    let identity_scale = slope == 1.0 && scl_inter == 0.0;
    let scale = |raw: f32| -> f32 {
        if identity_scale {
            raw
        } else {
            raw * slope + scl_inter
        }
    };

    let mut voxels = Vec::with_capacity(n);
    match datatype {
        DT_UINT8 => {
            for i in 0..n {
                voxels.push(scale(bytes[data_start + i] as f32));
            }
        }
        DT_INT16 => {
            for i in 0..n {
                let raw = i16_at(bytes, data_start + 2 * i, swap);
                voxels.push(scale(raw as f32));
            }
        }
        DT_FLOAT32 => {
            for i in 0..n {
                voxels.push(scale(f32_at(bytes, data_start + 4 * i, swap)));
            }
        }
        _ => unreachable!(),
    }

    let mut geometry = VolumeGeometry::new(dims, spacing);
    geometry.ox = origin[0];
    geometry.oy = origin[1];
    geometry.oz = origin[2];

    // uint8 payloads are segmentation masks in this pipeline; Volume::new
    // enforces the {0,1,2} label alphabet
    let kind = if datatype == DT_UINT8 {
        VolumeKind::Label
    } else {
        VolumeKind::Continuous
    };
    Volume::new(geometry, kind, voxels)
}

/// Serialize a volume as a little-endian single-file NIfTI-1. Labels become
/// uint8, continuous volumes float32; `read_nifti_bytes` inverts this exactly.
pub fn write_nifti_bytes(v: &Volume) -> Result<Vec<u8>> {
    let g = &v.geometry;
    for d in g.dims() {
        if d > i16::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "dim {} exceeds NIfTI-1 i16 range",
                d
            )));
        }
    }

    let (datatype, bitpix): (i16, i16) = match v.kind {
        VolumeKind::Label => (DT_UINT8, 8),
        VolumeKind::Continuous => (DT_FLOAT32, 32),
    };

    let n = g.n_voxels();
    let mut out = vec![0u8; DATA_OFFSET + n * (bitpix as usize / 8)];

    let put_i16 = |buf: &mut [u8], off: usize, val: i16| {
        buf[off..off + 2].copy_from_slice(&val.to_le_bytes());
    };
    let put_i32 = |buf: &mut [u8], off: usize, val: i32| {
        buf[off..off + 4].copy_from_slice(&val.to_le_bytes());
    };
    let put_f32 = |buf: &mut [u8], off: usize, val: f32| {
        buf[off..off + 4].copy_from_slice(&val.to_le_bytes());
    };

    put_i32(&mut out, OFF_SIZEOF_HDR, HEADER_SIZE as i32);
    out[OFF_REGULAR] = b'r';

    put_i16(&mut out, OFF_DIM, 3);
    put_i16(&mut out, OFF_DIM + 2, g.nx as i16);
    put_i16(&mut out, OFF_DIM + 4, g.ny as i16);
    put_i16(&mut out, OFF_DIM + 6, g.nz as i16);
    for i in 4..8 {
        put_i16(&mut out, OFF_DIM + 2 * i, 1);
    }

    put_i16(&mut out, OFF_DATATYPE, datatype);
    put_i16(&mut out, OFF_BITPIX, bitpix);

    put_f32(&mut out, OFF_PIXDIM, 1.0); // qfac
    put_f32(&mut out, OFF_PIXDIM + 4, g.sx);
    put_f32(&mut out, OFF_PIXDIM + 8, g.sy);
    put_f32(&mut out, OFF_PIXDIM + 12, g.sz);

    put_f32(&mut out, OFF_VOX_OFFSET, DATA_OFFSET as f32);
    put_f32(&mut out, OFF_SCL_SLOPE, 1.0);
    put_f32(&mut out, OFF_SCL_INTER, 0.0);

    put_i16(&mut out, OFF_QFORM_CODE, 1); // axis-aligned, identity rotation
    put_f32(&mut out, OFF_QOFFSET_X, g.ox);
    put_f32(&mut out, OFF_QOFFSET_X + 4, g.oy);
    put_f32(&mut out, OFF_QOFFSET_X + 8, g.oz);

    out[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC);
    // bytes 348..352 stay zero: no header extensions

    match v.kind {
        VolumeKind::Label => {
            for (i, &val) in v.voxels.iter().enumerate() {
                out[DATA_OFFSET + i] = val as u8;
            }
        }
        VolumeKind::Continuous => {
            for (i, &val) in v.voxels.iter().enumerate() {
                out[DATA_OFFSET + 4 * i..DATA_OFFSET + 4 * i + 4]
                    .copy_from_slice(&val.to_le_bytes());
            }
        }
    }

    Ok(out)
}

pub fn read_nifti(path: impl AsRef<std::path::Path>) -> Result<Volume> {
    let bytes = std::fs::read(path)?;
    read_nifti_bytes(&bytes)
}

pub fn write_nifti(path: impl AsRef<std::path::Path>, v: &Volume) -> Result<()> {
    let bytes = write_nifti_bytes(v)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Rewrite a little-endian file produced by [`write_nifti_bytes`] as its
/// big-endian equivalent (every multi-byte header field and payload element
/// swapped). Exists to build byte-order fixtures for tests and golden files.
pub fn to_big_endian(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() < DATA_OFFSET {
        return Err(err("file too short to reinterpret"));
    }
    let mut out = bytes.to_vec();
    let swap2 = |buf: &mut [u8], off: usize| buf.swap(off, off + 1);
    let swap4 = |buf: &mut [u8], off: usize| {
        buf.swap(off, off + 3);
        buf.swap(off + 1, off + 2);
    };

    // i32 / f32 fields
    for off in [0usize, 32, 56, 60, 64, 108, 112, 116, 124, 128, 132, 136, 140, 144] {
        swap4(&mut out, off);
    }
    // pixdim[8], quaternion + qoffset, srow_x/y/z
    for i in 0..8 {
        swap4(&mut out, OFF_PIXDIM + 4 * i);
    }
    for i in 0..6 {
        swap4(&mut out, 256 + 4 * i);
    }
    for i in 0..12 {
        swap4(&mut out, 280 + 4 * i);
    }
    // i16 fields: session_error, dim[8], intent_code..slice_start, slice_end,
    // qform/sform codes
    for off in [36usize, 68, 70, 72, 74, 120, 252, 254] {
        swap2(&mut out, off);
    }
    for i in 0..8 {
        swap2(&mut out, OFF_DIM + 2 * i);
    }

    let datatype = i16_at(bytes, OFF_DATATYPE, false);
    let elem = match datatype {
        DT_UINT8 => 1usize,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(err(format!("unsupported datatype {} in fixture", other))),
    };
    let data_start = f32_at(bytes, OFF_VOX_OFFSET, false) as usize;
    if elem > 1 {
        let mut off = data_start;
        while off + elem <= out.len() {
            match elem {
                2 => swap2(&mut out, off),
                4 => swap4(&mut out, off),
                _ => unreachable!(),
            }
            off += elem;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_volume(kind: VolumeKind) -> Volume {
        let mut g = VolumeGeometry::new([2, 2, 2], [2.0, 2.0, 2.0]);
        g.ox = -10.5;
        g.oy = 3.25;
        g.oz = 0.0;
        let voxels = match kind {
            VolumeKind::Continuous => vec![0.0, 1.5, -2.25, 3.75, 100.0, -0.125, 7.0, 42.5],
            VolumeKind::Label => vec![0.0, 1.0, 2.0, 0.0, 1.0, 1.0, 2.0, 0.0],
        };
        Volume::new(g, kind, voxels).unwrap()
    }

    #[test]
    fn golden_header_layout() {
        let v = small_volume(VolumeKind::Continuous);
        let b = write_nifti_bytes(&v).unwrap();
        assert_eq!(b.len(), 352 + 8 * 4);
        assert_eq!(i32::from_le_bytes(b[0..4].try_into().unwrap()), 348);
        assert_eq!(i16::from_le_bytes(b[40..42].try_into().unwrap()), 3);
        assert_eq!(i16::from_le_bytes(b[42..44].try_into().unwrap()), 2);
        assert_eq!(i16::from_le_bytes(b[70..72].try_into().unwrap()), DT_FLOAT32);
        assert_eq!(i16::from_le_bytes(b[72..74].try_into().unwrap()), 32);
        assert_eq!(f32::from_le_bytes(b[80..84].try_into().unwrap()), 2.0);
        assert_eq!(f32::from_le_bytes(b[108..112].try_into().unwrap()), 352.0);
        assert_eq!(&b[344..348], b"n+1\0");
    }

    #[test]
    fn label_payload_is_uint8_at_352() {
        let g = VolumeGeometry::new([1, 1, 1], [1.0, 1.0, 1.0]);
        let v = Volume::new(g, VolumeKind::Label, vec![2.0]).unwrap();
        let b = write_nifti_bytes(&v).unwrap();
        assert_eq!(b.len(), 353);
        assert_eq!(b[352], 0x02);
        assert_eq!(i16::from_le_bytes(b[70..72].try_into().unwrap()), DT_UINT8);
    }

    #[test]
    fn round_trip_continuous_and_label() {
        for kind in [VolumeKind::Continuous, VolumeKind::Label] {
            let v = small_volume(kind);
            let back = read_nifti_bytes(&write_nifti_bytes(&v).unwrap()).unwrap();
            assert_eq!(back, v);
            // bit-level check, not just PartialEq
            for (a, b) in v.voxels.iter().zip(back.voxels.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn byte_swapped_file_reads_identically() {
        let v = small_volume(VolumeKind::Continuous);
        let le = write_nifti_bytes(&v).unwrap();
        let be = to_big_endian(&le).unwrap();
        assert_ne!(le, be);
        assert_eq!(read_nifti_bytes(&be).unwrap(), v);
    }

    #[test]
    fn int16_payload_is_supported() {
        // build an int16 file by hand from a float32 fixture
        let v = small_volume(VolumeKind::Continuous);
        let mut b = write_nifti_bytes(&v).unwrap();
        b.truncate(352);
        b[70..72].copy_from_slice(&DT_INT16.to_le_bytes());
        b[72..74].copy_from_slice(&16i16.to_le_bytes());
        let samples: [i16; 8] = [-500, 0, 13, 999, -32768, 32767, 40, 7];
        for s in samples {
            b.extend_from_slice(&s.to_le_bytes());
        }
        let vol = read_nifti_bytes(&b).unwrap();
        assert_eq!(vol.kind, VolumeKind::Continuous);
        for (a, b) in vol.voxels.iter().zip(samples.iter()) {
            assert_eq!(*a, *b as f32);
        }
    }

    #[test]
    fn scl_slope_zero_means_identity_slope() {
        let v = small_volume(VolumeKind::Continuous);
        let mut b = write_nifti_bytes(&v).unwrap();
        b[112..116].copy_from_slice(&0.0f32.to_le_bytes()); // scl_slope = 0
        b[116..120].copy_from_slice(&5.0f32.to_le_bytes()); // scl_inter = 5
        let back = read_nifti_bytes(&b).unwrap();
        for (raw, got) in v.voxels.iter().zip(back.voxels.iter()) {
            assert_eq!(*got, raw * 1.0 + 5.0);
        }
    }

    #[test]
    fn bad_header_size_is_rejected() {
        let v = small_volume(VolumeKind::Continuous);
        let mut b = write_nifti_bytes(&v).unwrap();
        b[0..4].copy_from_slice(&999i32.to_le_bytes());
        let e = read_nifti_bytes(&b).unwrap_err();
        assert!(e.to_string().contains("bad header size"), "{}", e);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let v = small_volume(VolumeKind::Continuous);
        let mut b = write_nifti_bytes(&v).unwrap();
        b[344..348].copy_from_slice(b"ni1\0");
        assert!(read_nifti_bytes(&b).is_err());
    }

    #[test]
    fn unsupported_datatype_is_rejected() {
        let v = small_volume(VolumeKind::Continuous);
        let mut b = write_nifti_bytes(&v).unwrap();
        b[70..72].copy_from_slice(&64i16.to_le_bytes()); // float64
        b[72..74].copy_from_slice(&64i16.to_le_bytes());
        let e = read_nifti_bytes(&b).unwrap_err();
        assert!(e.to_string().contains("datatype"), "{}", e);
    }

    #[test]
    fn four_dimensional_files_are_rejected() {
        let v = small_volume(VolumeKind::Continuous);
        let mut b = write_nifti_bytes(&v).unwrap();
        b[40..42].copy_from_slice(&4i16.to_le_bytes());
        assert!(read_nifti_bytes(&b).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let v = small_volume(VolumeKind::Continuous);
        let mut b = write_nifti_bytes(&v).unwrap();
        b.truncate(b.len() - 1);
        let e = read_nifti_bytes(&b).unwrap_err();
        assert!(e.to_string().contains("truncated"), "{}", e);
    }
}
