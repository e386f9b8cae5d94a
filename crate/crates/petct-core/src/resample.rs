//! volume resampling onto new grids
//!
//! Geometry convention: index 0 of source and target sit at the same physical
//! point, so the sample position for output index `j` along an axis with
//! source spacing `s` and target spacing `t` is the source-index coordinate
//! `j*t/s`. Continuous volumes are interpolated trilinearly with edge
//! clamping; label volumes use nearest neighbor (round half up per axis), so
//! the label alphabet survives any resampling.

use crate::error::Result;
use crate::volume::{Volume, VolumeGeometry, VolumeKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResampleSpec {
    pub spacing: [f32; 3],
}

impl Default for ResampleSpec {
    fn default() -> Self {
        ResampleSpec {
            spacing: [2.0, 2.0, 2.0],
        }
    }
}

/// Output size rule: `round(n*s/t)` half away from zero, floored at 1.
pub fn output_dims(dims: [usize; 3], src: [f32; 3], dst: [f32; 3]) -> [usize; 3] {
    let mut out = [1usize; 3];
    for i in 0..3 {
        let exact = dims[i] as f64 * src[i] as f64 / dst[i] as f64;
        out[i] = (exact.abs() + 0.5).floor().max(1.0) as usize;
    }
    out
}

/// Resample `v` to the target spacing of `spec`.
pub fn resample(v: &Volume, spec: &ResampleSpec) -> Result<Volume> {
    let g = &v.geometry;
    let dims = output_dims(g.dims(), g.spacing(), spec.spacing);
    let mut target = VolumeGeometry::new(dims, spec.spacing);
    target.ox = g.ox;
    target.oy = g.oy;
    target.oz = g.oz;
    Ok(resample_to_geometry(v, &target))
}

/// Resample `v` onto an explicit target grid (used by resample-by-spacing and
/// by postprocessing, which must land exactly on the original geometry).
pub fn resample_to_geometry(v: &Volume, target: &VolumeGeometry) -> Volume {
    let src = &v.geometry;
    let scale = [
        target.sx as f64 / src.sx as f64,
        target.sy as f64 / src.sy as f64,
        target.sz as f64 / src.sz as f64,
    ];
    let n = target.n_voxels();
    let mut voxels = vec![0f32; n];
    let nearest = v.kind == VolumeKind::Label;
    for z in 0..target.nz {
        let uz = z as f64 * scale[2];
        for y in 0..target.ny {
            let uy = y as f64 * scale[1];
            let row = (z * target.ny + y) * target.nx;
            for x in 0..target.nx {
                let ux = x as f64 * scale[0];
                voxels[row + x] = if nearest {
                    nearest_at(v, [ux, uy, uz])
                } else {
                    trilinear_at(v, [ux, uy, uz])
                };
            }
        }
    }
    Volume {
        geometry: *target,
        kind: v.kind,
        voxels,
    }
}

/// Nearest-neighbor lookup at a fractional source index (round half up,
/// clamped to the grid).
#[inline]
pub fn nearest_at(v: &Volume, u: [f64; 3]) -> f32 {
    let g = &v.geometry;
    let pick = |coord: f64, n: usize| -> usize {
        let r = (coord + 0.5).floor();
        r.clamp(0.0, (n - 1) as f64) as usize
    };
    v.at(pick(u[0], g.nx), pick(u[1], g.ny), pick(u[2], g.nz))
}

/// Trilinear interpolation with edge clamping at a fractional source index.
#[inline]
pub fn trilinear_at(v: &Volume, u: [f64; 3]) -> f32 {
    let g = &v.geometry;
    let prep = |coord: f64, n: usize| -> (usize, usize, f64) {
        let f = coord.floor();
        let frac = coord - f;
        let i0 = (f as isize).clamp(0, n as isize - 1) as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, frac)
    };
    let (x0, x1, fx) = prep(u[0], g.nx);
    let (y0, y1, fy) = prep(u[1], g.ny);
    let (z0, z1, fz) = prep(u[2], g.nz);

    let mut acc = 0f64;
    for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
        if wz == 0.0 && z0 != z1 {
            continue;
        }
        for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
            for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                let w = wz * wy * wx;
                if w != 0.0 {
                    acc += w * v.at(xi, yi, zi) as f64;
                }
            }
        }
    }
    acc as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeKind;

    fn vol(dims: [usize; 3], spacing: [f32; 3], kind: VolumeKind, voxels: Vec<f32>) -> Volume {
        Volume::new(VolumeGeometry::new(dims, spacing), kind, voxels).unwrap()
    }

    #[test]
    fn size_formula_doubles_on_half_spacing() {
        assert_eq!(
            output_dims([2, 2, 2], [4.0, 4.0, 4.0], [2.0, 2.0, 2.0]),
            [4, 4, 4]
        );
        // round half away from zero, floor at 1
        assert_eq!(output_dims([3, 1, 5], [1.0, 1.0, 1.0], [2.0, 4.0, 2.0]), [2, 1, 3]);
    }

    #[test]
    fn identity_resample_is_voxel_identical() {
        let voxels: Vec<f32> = (0..27).map(|i| (i as f32) * 1.37 - 5.0).collect();
        let v = vol([3, 3, 3], [1.5, 2.0, 2.5], VolumeKind::Continuous, voxels);
        let spec = ResampleSpec {
            spacing: [1.5, 2.0, 2.5],
        };
        let r = resample(&v, &spec).unwrap();
        assert_eq!(r.geometry, v.geometry);
        assert_eq!(r.voxels, v.voxels);
    }

    #[test]
    fn labels_stay_in_alphabet_and_use_nearest() {
        let v = vol(
            [2, 1, 1],
            [2.0, 2.0, 2.0],
            VolumeKind::Label,
            vec![1.0, 2.0],
        );
        let r = resample(
            &v,
            &ResampleSpec {
                spacing: [1.0, 1.0, 1.0],
            },
        )
        .unwrap();
        assert_eq!(r.geometry.dims(), [4, 2, 2]);
        for &x in &r.voxels {
            assert!(x == 0.0 || x == 1.0 || x == 2.0);
        }
        // x positions 0,0.5,1.0,1.5 → nearest source indices 0,1,1,2(clamped)
        assert_eq!(&r.voxels[0..4], &[1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn constant_volume_stays_constant() {
        let v = vol(
            [5, 4, 3],
            [1.0, 2.0, 3.0],
            VolumeKind::Continuous,
            vec![7.25; 60],
        );
        let r = resample(
            &v,
            &ResampleSpec {
                spacing: [0.7, 1.3, 2.1],
            },
        )
        .unwrap();
        for &x in &r.voxels {
            assert!((x - 7.25).abs() < 1e-6);
        }
    }

    #[test]
    fn trilinear_midpoint_averages() {
        let v = vol(
            [2, 1, 1],
            [2.0, 1.0, 1.0],
            VolumeKind::Continuous,
            vec![0.0, 10.0],
        );
        // halve spacing along x: dims 4, positions 0, 0.5, 1.0, 1.5
        let r = resample(
            &v,
            &ResampleSpec {
                spacing: [1.0, 1.0, 1.0],
            },
        )
        .unwrap();
        assert_eq!(r.voxels, vec![0.0, 5.0, 10.0, 10.0]);
    }
}
