//! slice extraction, balancing, splitting and augmentation
//!
//! Volumes arrive resampled to a common grid; this module normalizes them,
//! cuts axial slices, resizes everything to the model input size, balances
//! tumor-bearing against empty slices and provides the train-time geometric
//! augmentation. Resizes use half-pixel center alignment: destination pixel
//! `d` samples source coordinate `(d + 0.5) * n_src / n_dst - 0.5`.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::Grid2;
use crate::seeds::{self, STREAM_AUGMENT, STREAM_REBALANCE, STREAM_SPLIT};
use crate::seg::SegArch;
use crate::volume::{Volume, VolumeKind};

/// Model input side length; every extracted slice is resized to this square.
pub const SLICE_SIZE: usize = 256;

/// One axial training/evaluation sample: the per-architecture image channels
/// plus the class-label map, all at `SLICE_SIZE` squared.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSample {
    pub patient_id: String,
    pub z: usize,
    pub channels: Vec<Grid2<f32>>,
    pub label: Grid2<u8>,
}

impl SliceSample {
    pub fn has_tumor(&self) -> bool {
        self.label.data.iter().any(|&v| v > 0)
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

/// Rescale intensities to `[0, 255]` via `(v - min) / (max - min) * 255`.
/// A constant volume maps to all zeros.
pub fn normalize_255(v: &Volume) -> Volume {
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &x in &v.voxels {
        min = min.min(x);
        max = max.max(x);
    }
    let voxels = if max > min {
        let lo = min as f64;
        let span = max as f64 - lo;
        v.voxels
            .iter()
            .map(|&x| ((x as f64 - lo) / span * 255.0) as f32)
            .collect()
    } else {
        vec![0f32; v.voxels.len()]
    };
    Volume {
        geometry: v.geometry,
        kind: v.kind,
        voxels,
    }
}

fn src_coord(d: usize, n_src: usize, n_dst: usize) -> f64 {
    (d as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5
}

/// Bilinear resize with half-pixel mapping and replicated borders.
pub fn resize_bilinear(src: &Grid2<f32>, width: usize, height: usize) -> Grid2<f32> {
    let mut out = Grid2::filled(width, height, 0f32);
    for y in 0..height {
        let sy = src_coord(y, src.height, height).clamp(0.0, src.height as f64 - 1.0);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src.height - 1);
        let fy = sy - y0 as f64;
        for x in 0..width {
            let sx = src_coord(x, src.width, width).clamp(0.0, src.width as f64 - 1.0);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src.width - 1);
            let fx = sx - x0 as f64;
            let v00 = src.at(x0, y0) as f64;
            let v10 = src.at(x1, y0) as f64;
            let v01 = src.at(x0, y1) as f64;
            let v11 = src.at(x1, y1) as f64;
            let top = v00 + (v10 - v00) * fx;
            let bot = v01 + (v11 - v01) * fx;
            out.set(x, y, (top + (bot - top) * fy) as f32);
        }
    }
    out
}

/// Nearest-neighbor resize with half-pixel mapping (round half up, clamped).
pub fn resize_nearest(src: &Grid2<u8>, width: usize, height: usize) -> Grid2<u8> {
    let mut out = Grid2::filled(width, height, 0u8);
    for y in 0..height {
        let sy = (src_coord(y, src.height, height) + 0.5).floor();
        let yi = sy.clamp(0.0, src.height as f64 - 1.0) as usize;
        for x in 0..width {
            let sx = (src_coord(x, src.width, width) + 0.5).floor();
            let xi = sx.clamp(0.0, src.width as f64 - 1.0) as usize;
            out.set(x, y, src.at(xi, yi));
        }
    }
    out
}

fn image_slice(v: &Volume, z: usize) -> Grid2<f32> {
    let [nx, ny, _] = v.geometry.dims();
    let start = z * ny * nx;
    Grid2::from_data(nx, ny, v.voxels[start..start + ny * nx].to_vec())
}

fn label_slice(v: &Volume, z: usize) -> Grid2<u8> {
    let [nx, ny, _] = v.geometry.dims();
    let start = z * ny * nx;
    Grid2::from_data(
        nx,
        ny,
        v.voxels[start..start + ny * nx]
            .iter()
            .map(|&x| x as u8)
            .collect(),
    )
}

/// Cut every axial slice of a patient into a model-ready sample.
///
/// Channel layout per architecture: CT-only gets `[ct]`; early fusion gets
/// `[ct, pet, mean(ct, pet)]`, the mean taken elementwise after both resizes;
/// late fusion gets `[ct, pet]`. The label map is resized nearest-neighbor.
pub fn extract_slices(
    patient_id: &str,
    ct: &Volume,
    pet: Option<&Volume>,
    mask: &Volume,
    arch: SegArch,
) -> Result<Vec<SliceSample>> {
    ct.require_kind(VolumeKind::Continuous, "ct")?;
    mask.require_kind(VolumeKind::Label, "mask")?;
    ct.require_same_grid(mask, "ct vs mask")?;
    let pet = if arch.needs_pet() {
        let p = pet.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "architecture {} needs a PET volume",
                arch.label()
            ))
        })?;
        p.require_kind(VolumeKind::Continuous, "pet")?;
        ct.require_same_grid(p, "ct vs pet")?;
        Some(p)
    } else {
        None
    };

    let nz = ct.geometry.nz;
    let mut samples = Vec::with_capacity(nz);
    for z in 0..nz {
        let ct_r = resize_bilinear(&image_slice(ct, z), SLICE_SIZE, SLICE_SIZE);
        let channels = match arch {
            SegArch::CtOnly => vec![ct_r],
            SegArch::EarlyFusion | SegArch::LateFusion => {
                let pet_r =
                    resize_bilinear(&image_slice(pet.unwrap(), z), SLICE_SIZE, SLICE_SIZE);
                if arch == SegArch::EarlyFusion {
                    let mean = Grid2::from_data(
                        SLICE_SIZE,
                        SLICE_SIZE,
                        ct_r.data
                            .iter()
                            .zip(&pet_r.data)
                            .map(|(&a, &b)| (a + b) * 0.5)
                            .collect(),
                    );
                    vec![ct_r, pet_r, mean]
                } else {
                    vec![ct_r, pet_r]
                }
            }
        };
        let label = resize_nearest(&label_slice(mask, z), SLICE_SIZE, SLICE_SIZE);
        samples.push(SliceSample {
            patient_id: patient_id.to_string(),
            z,
            channels,
            label,
        });
    }
    Ok(samples)
}

/// Keep every tumor-bearing slice and a seeded without-replacement draw of
/// `min(#positives, #negatives)` empty slices, then shuffle the result.
pub fn rebalance(samples: Vec<SliceSample>, seed: u64) -> Vec<SliceSample> {
    let mut rng = seeds::stream_rng(seed, STREAM_REBALANCE, 0);
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for s in samples {
        if s.has_tumor() {
            positives.push(s);
        } else {
            negatives.push(s);
        }
    }
    negatives.shuffle(&mut rng);
    negatives.truncate(positives.len().min(negatives.len()));
    let mut out = positives;
    out.append(&mut negatives);
    out.shuffle(&mut rng);
    out
}

/// Keep only slices containing at least one pixel of class 1 or class 2.
pub fn validation_filter(samples: Vec<SliceSample>) -> Vec<SliceSample> {
    samples.into_iter().filter(|s| s.has_tumor()).collect()
}

/// Patient-level split: seeded shuffle, then the first `round(fraction * n)`
/// ids (clamped so both sides are non-empty) become the training set. Both
/// sides are returned sorted.
pub fn split_patients(ids: &[String], cfg: &SplitConfig) -> Result<(Vec<String>, Vec<String>)> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must be in (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    let n = ids.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} patient(s); need at least 2"
        )));
    }
    let mut shuffled = ids.to_vec();
    let mut rng = seeds::stream_rng(cfg.seed, STREAM_SPLIT, 0);
    shuffled.shuffle(&mut rng);
    let exact = cfg.train_fraction * n as f64;
    let n_train = ((exact + 0.5).floor() as usize).clamp(1, n - 1);
    let mut val = shuffled.split_off(n_train);
    let mut train = shuffled;
    train.sort();
    val.sort();
    Ok((train, val))
}

/// Apply one augmentation: optional horizontal flip, then rotation by
/// `angle_deg` about the slice center `((w-1)/2, (h-1)/2)`. Channels are
/// sampled bilinearly, labels nearest-neighbor; samples falling outside the
/// slice read as zero.
pub fn transform_slice(sample: &SliceSample, flip: bool, angle_deg: f64) -> SliceSample {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let channels = sample
        .channels
        .iter()
        .map(|g| {
            let mut out = Grid2::filled(g.width, g.height, 0f32);
            for_each_source(g.width, g.height, flip, sin, cos, |x, y, qx, qy| {
                out.set(x, y, bilinear_zero(g, qx, qy));
            });
            out
        })
        .collect();
    let mut label = Grid2::filled(sample.label.width, sample.label.height, 0u8);
    for_each_source(
        sample.label.width,
        sample.label.height,
        flip,
        sin,
        cos,
        |x, y, qx, qy| {
            label.set(x, y, nearest_zero(&sample.label, qx, qy));
        },
    );
    SliceSample {
        patient_id: sample.patient_id.clone(),
        z: sample.z,
        channels,
        label,
    }
}

/// Visit each destination pixel with its source coordinate under the inverse
/// of (flip, then rotate).
fn for_each_source(
    width: usize,
    height: usize,
    flip: bool,
    sin: f64,
    cos: f64,
    mut f: impl FnMut(usize, usize, f64, f64),
) {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    for y in 0..height {
        let dy = y as f64 - cy;
        for x in 0..width {
            let dx = x as f64 - cx;
            let mut qx = cos * dx + sin * dy + cx;
            let qy = -sin * dx + cos * dy + cy;
            if flip {
                qx = (width as f64 - 1.0) - qx;
            }
            f(x, y, qx, qy);
        }
    }
}

fn bilinear_zero(g: &Grid2<f32>, qx: f64, qy: f64) -> f32 {
    let x0 = qx.floor();
    let y0 = qy.floor();
    let fx = qx - x0;
    let fy = qy - y0;
    let mut acc = 0f64;
    for (yi, wy) in [(y0 as isize, 1.0 - fy), (y0 as isize + 1, fy)] {
        for (xi, wx) in [(x0 as isize, 1.0 - fx), (x0 as isize + 1, fx)] {
            let w = wy * wx;
            if w == 0.0 {
                continue;
            }
            let inside =
                xi >= 0 && yi >= 0 && (xi as usize) < g.width && (yi as usize) < g.height;
            if inside {
                acc += w * g.at(xi as usize, yi as usize) as f64;
            }
        }
    }
    acc as f32
}

fn nearest_zero(g: &Grid2<u8>, qx: f64, qy: f64) -> u8 {
    let xi = (qx + 0.5).floor();
    let yi = (qy + 0.5).floor();
    if xi >= 0.0 && yi >= 0.0 && (xi as usize) < g.width && (yi as usize) < g.height {
        g.at(xi as usize, yi as usize)
    } else {
        0
    }
}

/// Augment one sample: flip with probability 1/2, then a uniform rotation
/// angle in [-10, +10) degrees, both drawn from a stream keyed by
/// (seed, epoch, sample index) so the transform does not depend on batch
/// order or thread count.
pub fn augment_one(sample: &SliceSample, seed: u64, epoch: u64, index: usize) -> SliceSample {
    debug_assert!(index < (1usize << 32));
    debug_assert!(epoch < (1u64 << 32));
    let mut rng = seeds::stream_rng(seed, STREAM_AUGMENT, (epoch << 32) | index as u64);
    let flip = rng.gen_bool(0.5);
    let angle = rng.gen_range(-10.0..10.0);
    transform_slice(sample, flip, angle)
}

/// Train-time augmentation of a whole sample list (see [`augment_one`]).
pub fn augment(samples: &[SliceSample], seed: u64, epoch: u64) -> Vec<SliceSample> {
    exec::map_indices(samples.len(), |i| augment_one(&samples[i], seed, epoch, i))
}
