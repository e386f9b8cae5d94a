//! map slice probabilities back to the original volume geometry
//!
//! The chain mirrors preprocessing in reverse: per-slice bicubic resize of
//! each class-probability channel to the resampled in-plane shape, stacking
//! into probability volumes, trilinear resampling onto the original geometry,
//! clamping to [0, 1], and a per-voxel argmax (ties toward the lower class).
//! Probabilities — never label integers — are interpolated, so no invalid
//! class can be manufactured.

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::Grid2;
use crate::resample::resample_to_geometry;
use crate::seg::model::{argmax3, SliceProbs};
use crate::volume::{Volume, VolumeGeometry, VolumeKind};

/// Catmull-Rom (a = -0.5) weights for the four samples at integer offsets
/// (-1, 0, 1, 2) around a fractional position `t` in [0, 1).
pub fn catmull_rom_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let near = |x: f64| ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0;
    let far = |x: f64| ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A;
    [far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)]
}

/// Bicubic resize (Catmull-Rom, half-pixel mapping, replicated borders).
pub fn resize_bicubic(src: &Grid2<f32>, width: usize, height: usize) -> Grid2<f32> {
    let mut out = Grid2::filled(width, height, 0f32);
    for y in 0..height {
        let sy = (y as f64 + 0.5) * src.height as f64 / height as f64 - 0.5;
        let y0 = sy.floor();
        let wy = catmull_rom_weights(sy - y0);
        for x in 0..width {
            let sx = (x as f64 + 0.5) * src.width as f64 / width as f64 - 0.5;
            let x0 = sx.floor();
            let wx = catmull_rom_weights(sx - x0);
            let mut acc = 0f64;
            for (dy, wyv) in wy.iter().enumerate() {
                let yi = y0 as isize + dy as isize - 1;
                let mut row = 0f64;
                for (dx, wxv) in wx.iter().enumerate() {
                    let xi = x0 as isize + dx as isize - 1;
                    row += wxv * src.at_clamped(xi, yi) as f64;
                }
                acc += wyv * row;
            }
            out.set(x, y, acc as f32);
        }
    }
    out
}

/// The three class-probability volumes on the original geometry, clamped to
/// [0, 1] (bicubic interpolation can overshoot).
pub fn probability_volumes(
    slice_probs: &[SliceProbs],
    resampled: &VolumeGeometry,
    original: &VolumeGeometry,
) -> Result<[Volume; 3]> {
    if slice_probs.len() != resampled.nz {
        return Err(Error::ShapeMismatch(format!(
            "{} probability slices for {} resampled z positions",
            slice_probs.len(),
            resampled.nz
        )));
    }
    let mut out = Vec::with_capacity(3);
    for c in 0..3usize {
        let slices = exec::map_indices(resampled.nz, |z| {
            resize_bicubic(&slice_probs[z].channel_grid(c), resampled.nx, resampled.ny)
        });
        let mut voxels = Vec::with_capacity(resampled.n_voxels());
        for s in &slices {
            voxels.extend_from_slice(&s.data);
        }
        let stacked = Volume {
            geometry: *resampled,
            kind: VolumeKind::Continuous,
            voxels,
        };
        let mut on_original = resample_to_geometry(&stacked, original);
        for v in on_original.voxels.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        out.push(on_original);
    }
    Ok([
        out.remove(0),
        out.remove(0),
        out.remove(0),
    ])
}

/// Full reconstruction: probabilities back to the original geometry, then a
/// per-voxel argmax into a label volume.
pub fn reconstruct_prediction(
    slice_probs: &[SliceProbs],
    resampled: &VolumeGeometry,
    original: &VolumeGeometry,
) -> Result<Volume> {
    let probs = probability_volumes(slice_probs, resampled, original)?;
    let n = original.n_voxels();
    let mut voxels = vec![0f32; n];
    for (i, v) in voxels.iter_mut().enumerate() {
        let p = [
            probs[0].voxels[i] as f64,
            probs[1].voxels[i] as f64,
            probs[2].voxels[i] as f64,
        ];
        *v = argmax3(p) as f32;
    }
    Volume::new(*original, VolumeKind::Label, voxels)
}
