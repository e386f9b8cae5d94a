//! linear-softmax per-pixel segmentation models
//!
//! Three topologies over the hand-crafted pixel features:
//! - CT-only and early-fusion: one linear layer + softmax over 3 classes.
//! - Late-fusion: a linear+softmax stream per modality (CT, PET); the two
//!   3-probability outputs are concatenated into 6 values and fed to a final
//!   linear+softmax fusion layer. All stages train jointly end to end.
//!
//! Parameters live in one flat `theta` vector so the optimizer and the
//! serializer stay model-agnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::seg::pixel_features::{extract_pixel_features, PixelFeatureMap, FEATURES_PER_CHANNEL};
use crate::seg::SegArch;

pub const N_CLASSES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegModelParams {
    pub arch: SegArch,
    pub theta: Vec<f64>,
}

/// Flat layout per architecture (row-major weight blocks):
/// - CT-only:      `[W 3x4 | b 3]` = 15
/// - early fusion: `[W 3x12 | b 3]` = 39
/// - late fusion:  `[W_ct 3x4 | b_ct 3 | W_pet 3x4 | b_pet 3 | W_fuse 3x6 | b_fuse 3]` = 51
pub fn n_params(arch: SegArch) -> usize {
    match arch {
        SegArch::CtOnly => N_CLASSES * 4 + N_CLASSES,
        SegArch::EarlyFusion => N_CLASSES * 12 + N_CLASSES,
        SegArch::LateFusion => 2 * (N_CLASSES * 4 + N_CLASSES) + N_CLASSES * 6 + N_CLASSES,
    }
}

pub fn n_features(arch: SegArch) -> usize {
    arch.n_channels() * FEATURES_PER_CHANNEL
}

impl SegModelParams {
    pub fn zeros(arch: SegArch) -> Self {
        SegModelParams {
            arch,
            theta: vec![0.0; n_params(arch)],
        }
    }

    /// Training start state. Single-stage models start at exactly zero. The
    /// dual-stream model starts with zero streams but an identity-voting
    /// fusion block (output class c listens to each stream's class-c
    /// probability): with an all-zero fusion matrix the six fusion inputs are
    /// identical constants, every fusion row receives a uniform gradient and
    /// stays uniform, and the constant back-signal is annihilated by the
    /// stream softmax Jacobians — no gradient ever reaches the streams, for
    /// any data. The voting pattern breaks that symmetry while keeping the
    /// initial predictions uniform, exactly like the zero state.
    pub fn training_init(arch: SegArch) -> Self {
        let mut p = Self::zeros(arch);
        if arch == SegArch::LateFusion {
            let w_fuse = 2 * (N_CLASSES * 4 + N_CLASSES);
            for c in 0..N_CLASSES {
                p.theta[w_fuse + c * 6 + c] = 1.0;
                p.theta[w_fuse + c * 6 + N_CLASSES + c] = 1.0;
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != n_params(self.arch) {
            return Err(Error::ShapeMismatch(format!(
                "{} expects {} parameters, got {}",
                self.arch.label(),
                n_params(self.arch),
                self.theta.len()
            )));
        }
        Ok(())
    }
}

/// Numerically stable 3-way softmax.
pub fn softmax3(z: [f64; 3]) -> [f64; 3] {
    let m = z[0].max(z[1]).max(z[2]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp(), (z[2] - m).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax3(p: [f64; 3]) -> u8 {
    let mut best = 0usize;
    for c in 1..3 {
        if p[c] > p[best] {
            best = c;
        }
    }
    best as u8
}

/// Per-pixel class probabilities for one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceProbs {
    pub width: usize,
    pub height: usize,
    pub probs: Vec<[f64; 3]>,
}

impl SliceProbs {
    pub fn channel_grid(&self, c: usize) -> Grid2<f32> {
        Grid2::from_data(
            self.width,
            self.height,
            self.probs.iter().map(|p| p[c] as f32).collect(),
        )
    }

    pub fn argmax_labels(&self) -> Grid2<u8> {
        Grid2::from_data(
            self.width,
            self.height,
            self.probs.iter().map(|&p| argmax3(p)).collect(),
        )
    }
}

#[inline]
fn dense3(w: &[f64], b: &[f64], f: &[f64]) -> [f64; 3] {
    let n = f.len();
    let mut z = [b[0], b[1], b[2]];
    for (c, zc) in z.iter_mut().enumerate() {
        let row = &w[c * n..(c + 1) * n];
        let mut acc = 0f64;
        for i in 0..n {
            acc += row[i] * f[i];
        }
        *zc += acc;
    }
    z
}

/// Final-stage pre-softmax scores for one pixel's feature vector. Softmax is
/// strictly monotone, so the argmax of these logits (with the same tie rule)
/// equals the argmax of the probabilities.
pub fn logits_pixel(p: &SegModelParams, f: &[f32]) -> [f64; 3] {
    let mut fv = [0f64; 12];
    for (i, &x) in f.iter().enumerate() {
        fv[i] = x as f64;
    }
    let fv = &fv[..f.len()];
    match p.arch {
        SegArch::CtOnly | SegArch::EarlyFusion => {
            let nf = f.len();
            let w = &p.theta[..N_CLASSES * nf];
            let b = &p.theta[N_CLASSES * nf..];
            dense3(w, b, fv)
        }
        SegArch::LateFusion => {
            let t = &p.theta;
            let s_ct = softmax3(dense3(&t[0..12], &t[12..15], &fv[0..4]));
            let s_pet = softmax3(dense3(&t[15..27], &t[27..30], &fv[4..8]));
            let q = [s_ct[0], s_ct[1], s_ct[2], s_pet[0], s_pet[1], s_pet[2]];
            dense3(&t[30..48], &t[48..51], &q)
        }
    }
}

/// Forward pass for one pixel's feature vector.
pub fn forward_pixel(p: &SegModelParams, f: &[f32]) -> [f64; 3] {
    softmax3(logits_pixel(p, f))
}

/// Argmax labels straight from logits (skips the softmax for speed).
pub fn predict_labels(p: &SegModelParams, fmap: &PixelFeatureMap) -> Result<Grid2<u8>> {
    p.validate()?;
    if fmap.n_features != n_features(p.arch) {
        return Err(Error::ShapeMismatch(format!(
            "{} expects {} features per pixel, got {}",
            p.arch.label(),
            n_features(p.arch),
            fmap.n_features
        )));
    }
    Ok(Grid2::from_data(
        fmap.width,
        fmap.height,
        (0..fmap.n_pixels())
            .map(|px| argmax3(logits_pixel(p, fmap.features(px))))
            .collect(),
    ))
}

/// Forward pass over a whole feature map.
pub fn forward(p: &SegModelParams, fmap: &PixelFeatureMap) -> Result<SliceProbs> {
    p.validate()?;
    if fmap.n_features != n_features(p.arch) {
        return Err(Error::ShapeMismatch(format!(
            "{} expects {} features per pixel, got {}",
            p.arch.label(),
            n_features(p.arch),
            fmap.n_features
        )));
    }
    let probs = (0..fmap.n_pixels())
        .map(|px| forward_pixel(p, fmap.features(px)))
        .collect();
    Ok(SliceProbs {
        width: fmap.width,
        height: fmap.height,
        probs,
    })
}

/// Features + forward + argmax for one slice's channels.
pub fn predict_slice(
    p: &SegModelParams,
    channels: &[Grid2<f32>],
) -> Result<(SliceProbs, Grid2<u8>)> {
    if channels.len() != p.arch.n_channels() {
        return Err(Error::ShapeMismatch(format!(
            "{} expects {} channels, got {}",
            p.arch.label(),
            p.arch.n_channels(),
            channels.len()
        )));
    }
    let fmap = extract_pixel_features(channels);
    let probs = forward(p, &fmap)?;
    let labels = probs.argmax_labels();
    Ok((probs, labels))
}
