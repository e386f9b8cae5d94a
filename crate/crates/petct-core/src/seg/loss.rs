//! soft Dice loss (background channel skipped) and its analytic gradient
//!
//! For classes c in {1, 2} with one-hot ground truth g and predicted
//! probabilities p over a slice:
//!   Dice_c = (2 * sum(p_c * g_c) + eps) / (sum(p_c) + sum(g_c) + eps)
//!   loss   = 1 - (Dice_1 + Dice_2) / 2
//! The gradient flows through every pixel's probabilities, then through the
//! softmax stages of the model in a single backward pass (the late-fusion
//! topology chains through both stream softmaxes and the fusion layer).

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::seg::model::{forward_pixel, n_features, softmax3, SegModelParams, SliceProbs};
use crate::seg::pixel_features::PixelFeatureMap;
use crate::seg::SegArch;

/// Default Dice smoothing constant.
pub const DICE_EPS: f64 = 1.0;

struct DiceSums {
    /// per class in {1,2}: (overlap sum A_c, p-sum + g-count B_c)
    a: [f64; 2],
    b: [f64; 2],
}

fn dice_sums(probs: &SliceProbs, gt: &Grid2<u8>) -> DiceSums {
    let mut a = [0f64; 2];
    let mut p_sum = [0f64; 2];
    let mut g_cnt = [0f64; 2];
    for (p, &g) in probs.probs.iter().zip(&gt.data) {
        for c in 0..2usize {
            let pc = p[c + 1];
            p_sum[c] += pc;
            if g as usize == c + 1 {
                a[c] += pc;
                g_cnt[c] += 1.0;
            }
        }
    }
    DiceSums {
        a,
        b: [p_sum[0] + g_cnt[0], p_sum[1] + g_cnt[1]],
    }
}

fn loss_from_sums(s: &DiceSums, eps: f64) -> f64 {
    let d1 = (2.0 * s.a[0] + eps) / (s.b[0] + eps);
    let d2 = (2.0 * s.a[1] + eps) / (s.b[1] + eps);
    1.0 - (d1 + d2) / 2.0
}

/// Soft Dice loss of one slice.
pub fn dice_loss(probs: &SliceProbs, gt: &Grid2<u8>, eps: f64) -> Result<f64> {
    if probs.width != gt.width || probs.height != gt.height {
        return Err(Error::ShapeMismatch(format!(
            "probability map {}x{} vs label map {}x{}",
            probs.width, probs.height, gt.width, gt.height
        )));
    }
    Ok(loss_from_sums(&dice_sums(probs, gt), eps))
}

/// Loss plus the analytic gradient with respect to every model parameter.
///
/// Returns `(loss, grad)` with `grad.len() == params.theta.len()`. Pixels are
/// accumulated in index order, so the result is bit-stable.
pub fn backward(
    params: &SegModelParams,
    fmap: &PixelFeatureMap,
    gt: &Grid2<u8>,
    eps: f64,
) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    if fmap.n_features != n_features(params.arch) {
        return Err(Error::ShapeMismatch(format!(
            "{} expects {} features per pixel, got {}",
            params.arch.label(),
            n_features(params.arch),
            fmap.n_features
        )));
    }
    if fmap.width != gt.width || fmap.height != gt.height {
        return Err(Error::ShapeMismatch(format!(
            "feature map {}x{} vs label map {}x{}",
            fmap.width, fmap.height, gt.width, gt.height
        )));
    }

    // pass 1: forward probabilities
    let n_px = fmap.n_pixels();
    let mut probs = Vec::with_capacity(n_px);
    for px in 0..n_px {
        probs.push(forward_pixel(params, fmap.features(px)));
    }
    let slice = SliceProbs {
        width: fmap.width,
        height: fmap.height,
        probs,
    };
    let sums = dice_sums(&slice, gt);
    let loss = loss_from_sums(&sums, eps);

    // dL/dp_c(x) = -g_c(x)/(B_c+eps) + (2A_c+eps) / (2 (B_c+eps)^2), c in {1,2}
    let inv_b = [1.0 / (sums.b[0] + eps), 1.0 / (sums.b[1] + eps)];
    let k = [
        0.5 * (2.0 * sums.a[0] + eps) * inv_b[0] * inv_b[0],
        0.5 * (2.0 * sums.a[1] + eps) * inv_b[1] * inv_b[1],
    ];

    // pass 2: chain rule through the softmax stages, pixel by pixel
    let mut grad = vec![0f64; params.theta.len()];
    for px in 0..n_px {
        let f = fmap.features(px);
        let g_label = gt.data[px] as usize;
        let s = slice.probs[px];
        let mut u = [0f64; 3];
        for c in 1..3usize {
            let hit = if g_label == c { 1.0 } else { 0.0 };
            u[c] = -hit * inv_b[c - 1] + k[c - 1];
        }
        let gz = softmax_backprop(s, u);
        match params.arch {
            SegArch::CtOnly | SegArch::EarlyFusion => {
                let nf = fmap.n_features;
                for c in 0..3 {
                    let row = &mut grad[c * nf..(c + 1) * nf];
                    for i in 0..nf {
                        row[i] += gz[c] * f[i] as f64;
                    }
                }
                for c in 0..3 {
                    grad[3 * nf + c] += gz[c];
                }
            }
            SegArch::LateFusion => {
                let t = &params.theta;
                let mut fv = [0f64; 8];
                for i in 0..8 {
                    fv[i] = f[i] as f64;
                }
                // recompute the stream outputs feeding the fusion layer
                let s_ct = softmax3(dense3_arr(&t[0..12], &t[12..15], &fv[0..4]));
                let s_pet = softmax3(dense3_arr(&t[15..27], &t[27..30], &fv[4..8]));
                let q = [s_ct[0], s_ct[1], s_ct[2], s_pet[0], s_pet[1], s_pet[2]];

                // fusion layer
                for c in 0..3 {
                    for i in 0..6 {
                        grad[30 + c * 6 + i] += gz[c] * q[i];
                    }
                    grad[48 + c] += gz[c];
                }
                // gradient into the concatenated stream outputs
                let mut uq = [0f64; 6];
                for i in 0..6 {
                    let mut acc = 0f64;
                    for c in 0..3 {
                        acc += t[30 + c * 6 + i] * gz[c];
                    }
                    uq[i] = acc;
                }
                let gz_ct = softmax_backprop(s_ct, [uq[0], uq[1], uq[2]]);
                let gz_pet = softmax_backprop(s_pet, [uq[3], uq[4], uq[5]]);
                for c in 0..3 {
                    for i in 0..4 {
                        grad[c * 4 + i] += gz_ct[c] * fv[i];
                        grad[15 + c * 4 + i] += gz_pet[c] * fv[4 + i];
                    }
                    grad[12 + c] += gz_ct[c];
                    grad[27 + c] += gz_pet[c];
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Backprop through softmax: given s = softmax(z) and u = dL/ds, return
/// dL/dz_k = s_k (u_k - sum_j u_j s_j).
#[inline]
fn softmax_backprop(s: [f64; 3], u: [f64; 3]) -> [f64; 3] {
    let dot = u[0] * s[0] + u[1] * s[1] + u[2] * s[2];
    [s[0] * (u[0] - dot), s[1] * (u[1] - dot), s[2] * (u[2] - dot)]
}

#[inline]
fn dense3_arr(w: &[f64], b: &[f64], f: &[f64]) -> [f64; 3] {
    let n = f.len();
    let mut z = [b[0], b[1], b[2]];
    for (c, zc) in z.iter_mut().enumerate() {
        for i in 0..n {
            *zc += w[c * n + i] * f[i];
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    fn slice_probs(probs: Vec<[f64; 3]>) -> SliceProbs {
        SliceProbs {
            width: probs.len(),
            height: 1,
            probs,
        }
    }

    #[test]
    fn hand_worked_two_pixel_loss() {
        let probs = slice_probs(vec![[0.2, 0.8, 0.0], [0.6, 0.4, 0.0]]);
        let gt = Grid2::from_data(2, 1, vec![1u8, 0]);
        let loss = dice_loss(&probs, &gt, 1.0).unwrap();
        assert!((loss - 0.09375).abs() < 1e-12);
    }

    #[test]
    fn zero_overlap_without_smoothing_is_total_loss() {
        let probs = slice_probs(vec![[0.0, 0.0, 1.0]]);
        let gt = Grid2::from_data(1, 1, vec![1u8]);
        assert_eq!(dice_loss(&probs, &gt, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn hard_correct_prediction_has_zero_loss() {
        let probs = slice_probs(vec![
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
        ]);
        let gt = Grid2::from_data(3, 1, vec![1u8, 2, 0]);
        assert_eq!(dice_loss(&probs, &gt, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn loss_stays_in_unit_interval() {
        let mut rng = seeds::stream_rng(5, 0xD1CE, 0);
        for _ in 0..50 {
            let n = 6;
            let probs: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    let z = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                    softmax3(z)
                })
                .collect();
            let gt = Grid2::from_data(n, 1, (0..n).map(|_| rng.gen_range(0..3u8)).collect());
            let loss = dice_loss(&slice_probs(probs), &gt, 1.0).unwrap();
            assert!((0.0..1.0).contains(&loss));
        }
    }

    fn random_case(arch: SegArch, seed: u64) -> (SegModelParams, PixelFeatureMap, Grid2<u8>) {
        let mut rng = seeds::stream_rng(seed, 0x6ead, 0);
        let mut params = SegModelParams::zeros(arch);
        for t in params.theta.iter_mut() {
            *t = rng.gen_range(-1.0..1.0);
        }
        let nf = n_features(arch);
        let fmap = PixelFeatureMap {
            width: 4,
            height: 4,
            n_features: nf,
            data: (0..16 * nf).map(|_| rng.gen_range(0.0..1.0f32)).collect(),
        };
        let gt = Grid2::from_data(4, 4, (0..16).map(|_| rng.gen_range(0..3u8)).collect());
        (params, fmap, gt)
    }

    /// max relative error between the analytic gradient and central finite
    /// differences with h = 1e-4
    fn gradcheck(arch: SegArch, seed: u64) -> f64 {
        let (params, fmap, gt) = random_case(arch, seed);
        let (_, grad) = backward(&params, &fmap, &gt, 1.0).unwrap();
        let h = 1e-4;
        let mut worst = 0f64;
        for i in 0..params.theta.len() {
            let mut plus = params.clone();
            plus.theta[i] += h;
            let mut minus = params.clone();
            minus.theta[i] -= h;
            let lp = loss_of(&plus, &fmap, &gt);
            let lm = loss_of(&minus, &fmap, &gt);
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
        }
        worst
    }

    fn loss_of(params: &SegModelParams, fmap: &PixelFeatureMap, gt: &Grid2<u8>) -> f64 {
        let probs = crate::seg::model::forward(params, fmap).unwrap();
        dice_loss(&probs, gt, 1.0).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences_all_archs() {
        for (arch, seed) in [
            (SegArch::CtOnly, 7),
            (SegArch::EarlyFusion, 7),
            (SegArch::LateFusion, 7),
            (SegArch::EarlyFusion, 8),
        ] {
            let worst = gradcheck(arch, seed);
            assert!(worst < 1e-4, "{arch:?} worst rel err {worst}");
        }
    }

    #[test]
    fn zero_features_leave_weight_gradient_zero() {
        let (params, mut fmap, gt) = random_case(SegArch::CtOnly, 3);
        for v in fmap.data.iter_mut() {
            *v = 0.0;
        }
        let (_, grad) = backward(&params, &fmap, &gt, 1.0).unwrap();
        let nf = fmap.n_features;
        assert!(grad[..3 * nf].iter().all(|&g| g == 0.0));
        assert!(grad[3 * nf..].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn severed_fusion_stream_gets_no_gradient() {
        let (mut params, fmap, gt) = random_case(SegArch::LateFusion, 9);
        // zero the fusion weights reading the PET stream (columns 3..6)
        for c in 0..3 {
            for i in 3..6 {
                params.theta[30 + c * 6 + i] = 0.0;
            }
        }
        let (_, grad) = backward(&params, &fmap, &gt, 1.0).unwrap();
        // W_pet (15..27) and b_pet (27..30) receive nothing
        assert!(grad[15..30].iter().all(|&g| g == 0.0));
        // the CT stream still learns
        assert!(grad[..15].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn mismatched_shapes_error() {
        let probs = slice_probs(vec![[1.0, 0.0, 0.0]]);
        let gt = Grid2::from_data(2, 1, vec![0u8, 0]);
        assert!(dice_loss(&probs, &gt, 1.0).is_err());
    }
}
