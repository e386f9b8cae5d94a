//! binary PGM (P5) slice export
//!
//! Axial slices go out as 8-bit graymaps: codec-free, bit-exact, viewable
//! everywhere. Caller is expected to hand in a volume already normalized to
//! [0,255] (see `preprocess::normalize_255`); values are rounded half-up and
//! clamped either way.

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Encode slice `z` (x → columns, y → rows, row 0 = y 0) as a P5 graymap.
pub fn export_slice_pgm(v: &Volume, z: usize) -> Result<Vec<u8>> {
    let g = &v.geometry;
    if z >= g.nz {
        return Err(Error::InvalidArgument(format!(
            "slice index {} out of range (nz = {})",
            z, g.nz
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", g.nx, g.ny).into_bytes();
    out.reserve(g.nx * g.ny);
    for y in 0..g.ny {
        for x in 0..g.nx {
            out.push(quantize(v.at(x, y, z)));
        }
    }
    Ok(out)
}

pub fn write_slice_pgm(path: impl AsRef<std::path::Path>, v: &Volume, z: usize) -> Result<()> {
    std::fs::write(path, export_slice_pgm(v, z)?)?;
    Ok(())
}

/// Round half-up, clamp to [0,255].
#[inline]
fn quantize(value: f32) -> u8 {
    let r = (value as f64 + 0.5).floor();
    r.clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{VolumeGeometry, VolumeKind};

    fn slice_volume(nx: usize, ny: usize, values: Vec<f32>) -> Volume {
        let g = VolumeGeometry::new([nx, ny, 1], [1.0, 1.0, 1.0]);
        Volume::new(g, VolumeKind::Continuous, values).unwrap()
    }

    #[test]
    fn identity_on_integral_values() {
        let v = slice_volume(2, 2, vec![0.0, 255.0, 128.0, 64.0]);
        let b = export_slice_pgm(&v, 0).unwrap();
        assert_eq!(&b[..12], b"P5\n2 2\n255\n\x00");
        assert_eq!(&b[11..], &[0u8, 255, 128, 64]);
    }

    #[test]
    fn rounds_half_up_and_clamps() {
        let v = slice_volume(4, 1, vec![127.5, -3.0, 260.0, 0.49]);
        let b = export_slice_pgm(&v, 0).unwrap();
        assert_eq!(&b[b.len() - 4..], &[128u8, 0, 255, 0]);
    }

    #[test]
    fn ramp_slice_payload() {
        let vals: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let v = slice_volume(4, 4, vals);
        let b = export_slice_pgm(&v, 0).unwrap();
        assert_eq!(&b[..11], b"P5\n4 4\n255\n");
        let expected: Vec<u8> = (0..16).collect();
        assert_eq!(&b[11..], &expected[..]);
    }

    #[test]
    fn z_out_of_range_errors() {
        let v = slice_volume(2, 2, vec![0.0; 4]);
        assert!(export_slice_pgm(&v, 1).is_err());
    }

    #[test]
    fn rows_are_y_major() {
        // 2 wide, 3 tall: payload must walk y=0 row first
        let g = VolumeGeometry::new([2, 3, 1], [1.0, 1.0, 1.0]);
        let mut v = Volume::filled(g, VolumeKind::Continuous, 0.0).unwrap();
        v.set(0, 0, 0, 10.0);
        v.set(1, 2, 0, 20.0);
        let b = export_slice_pgm(&v, 0).unwrap();
        let payload = &b[b.len() - 6..];
        assert_eq!(payload, &[10u8, 0, 0, 0, 0, 20]);
    }
}
