//! training loop: zero init, Adam, per-epoch augmentation + shuffling,
//! validation-IoU checkpoint selection

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::Grid2;
use crate::preprocess::{augment_one, SliceSample};
use crate::seeds::{self, STREAM_SHUFFLE};
use crate::seg::adam::AdamState;
use crate::seg::loss;
use crate::seg::model::{predict_labels, SegModelParams};
use crate::seg::pixel_features::{extract_pixel_features, PixelFeatureMap};
use crate::seg::SegArch;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// learning rate for epochs 1..=lr_switch_epoch
    pub lr_initial: f64,
    /// learning rate afterwards
    pub lr_reduced: f64,
    pub lr_switch_epoch: usize,
    pub dice_eps: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            lr_initial: 1e-4,
            lr_reduced: 1e-5,
            lr_switch_epoch: 50,
            dice_eps: loss::DICE_EPS,
            augment: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: SegModelParams,
    pub epoch: usize,
    pub val_iou: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// mean per-slice training loss of the epoch; NaN for the epoch-0 row
    /// (no training happened yet, only the initial validation pass)
    pub train_loss: f64,
    pub val_iou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u32,
    arch: SegArch,
    epoch: usize,
    val_iou: f64,
    theta: Vec<f64>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CheckpointFile {
            schema_version: CHECKPOINT_SCHEMA,
            arch: self.params.arch,
            epoch: self.epoch,
            val_iou: self.val_iou,
            theta: self.params.theta.clone(),
        })
        .expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let file: CheckpointFile = serde_json::from_str(text)
            .map_err(|e| Error::Serialization(format!("checkpoint: {e}")))?;
        if file.schema_version != CHECKPOINT_SCHEMA {
            return Err(Error::Serialization(format!(
                "unsupported checkpoint schema {}",
                file.schema_version
            )));
        }
        let params = SegModelParams {
            arch: file.arch,
            theta: file.theta,
        };
        params.validate()?;
        Ok(Checkpoint {
            params,
            epoch: file.epoch,
            val_iou: file.val_iou,
        })
    }
}

/// Mean loss and mean gradient over a batch of slices. Per-slice work is
/// parallelizable; the reduction runs in slice order so results are
/// bit-stable regardless of thread count.
pub fn batch_gradient(
    params: &SegModelParams,
    samples: &[SliceSample],
    eps: f64,
) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_slice = exec::map_indices(samples.len(), |i| {
        let fmap = extract_pixel_features(&samples[i].channels);
        loss::backward(params, &fmap, &samples[i].label, eps)
    });
    let mut grad = vec![0f64; params.theta.len()];
    let mut loss_sum = 0f64;
    for r in per_slice {
        let (l, g) = r?;
        loss_sum += l;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    let scale = 1.0 / samples.len() as f64;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    Ok((loss_sum * scale, grad))
}

/// Pooled validation IoU: intersections and unions are accumulated over all
/// slices per class in {1, 2} (empty union counts as perfect), then averaged
/// over the two classes.
fn pooled_val_iou(params: &SegModelParams, val: &[(PixelFeatureMap, Grid2<u8>)]) -> f64 {
    let counts = exec::map_indices(val.len(), |i| {
        let (fmap, gt) = &val[i];
        let pred = predict_labels(params, fmap).expect("validated at train start");
        let mut inter = [0u64; 2];
        let mut union = [0u64; 2];
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            for c in 1..=2u8 {
                let pi = p == c;
                let gi = g == c;
                if pi && gi {
                    inter[(c - 1) as usize] += 1;
                }
                if pi || gi {
                    union[(c - 1) as usize] += 1;
                }
            }
        }
        (inter, union)
    });
    let mut inter = [0u64; 2];
    let mut union = [0u64; 2];
    for (i, u) in counts {
        for c in 0..2 {
            inter[c] += i[c];
            union[c] += u[c];
        }
    }
    let iou = |c: usize| {
        if union[c] == 0 {
            1.0
        } else {
            inter[c] as f64 / union[c] as f64
        }
    };
    (iou(0) + iou(1)) / 2.0
}

fn check_samples(arch: SegArch, samples: &[SliceSample], what: &str) -> Result<()> {
    for s in samples {
        if s.channels.len() != arch.n_channels() {
            return Err(Error::ShapeMismatch(format!(
                "{what} sample {}/z{} has {} channels, {} needs {}",
                s.patient_id,
                s.z,
                s.channels.len(),
                arch.label(),
                arch.n_channels()
            )));
        }
    }
    Ok(())
}

/// Train from [`SegModelParams::training_init`] and return the checkpoint
/// with the best validation mean IoU (ties keep the earlier epoch; the
/// untrained epoch-0 state is a candidate) plus the per-epoch metric log.
pub fn train(
    arch: SegArch,
    train_samples: &[SliceSample],
    val_samples: &[SliceSample],
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    if train_samples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    if !(cfg.lr_initial > 0.0 && cfg.lr_reduced > 0.0) {
        return Err(Error::InvalidArgument("learning rates must be > 0".into()));
    }
    check_samples(arch, train_samples, "train")?;
    check_samples(arch, val_samples, "validation")?;

    let val_feats: Vec<(PixelFeatureMap, Grid2<u8>)> = exec::map_indices(val_samples.len(), |i| {
        (
            extract_pixel_features(&val_samples[i].channels),
            val_samples[i].label.clone(),
        )
    });

    let mut params = SegModelParams::training_init(arch);
    let mut adam = AdamState::new(params.theta.len());
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let initial_iou = pooled_val_iou(&params, &val_feats);
    let mut best = Checkpoint {
        params: params.clone(),
        epoch: 0,
        val_iou: initial_iou,
    };
    log.push(EpochLog {
        epoch: 0,
        train_loss: f64::NAN,
        val_iou: initial_iou,
    });

    let n = train_samples.len();
    for epoch in 1..=cfg.epochs {
        let lr = if epoch <= cfg.lr_switch_epoch {
            cfg.lr_initial
        } else {
            cfg.lr_reduced
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeds::stream_rng(cfg.seed, STREAM_SHUFFLE, epoch as u64));
        let mut loss_sum = 0f64;
        for batch in order.chunks(cfg.batch_size) {
            let batch_samples: Vec<SliceSample> = exec::map_indices(batch.len(), |bi| {
                let idx = batch[bi];
                if cfg.augment {
                    augment_one(&train_samples[idx], cfg.seed, epoch as u64, idx)
                } else {
                    train_samples[idx].clone()
                }
            });
            let (batch_loss, grad) = batch_gradient(&params, &batch_samples, cfg.dice_eps)?;
            loss_sum += batch_loss * batch.len() as f64;
            adam.step(&mut params.theta, &grad, lr);
        }
        let val_iou = pooled_val_iou(&params, &val_feats);
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / n as f64,
            val_iou,
        });
        if val_iou > best.val_iou {
            best = Checkpoint {
                params: params.clone(),
                epoch,
                val_iou,
            };
        }
    }
    Ok(TrainOutput {
        checkpoint: best,
        log,
    })
}

/// Render the metric log as CSV.
pub fn metric_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_iou\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{}\n",
            row.epoch, row.train_loss, row.val_iou
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tiny separable dataset: class-1 pixels are bright, class-2 medium,
    /// background dark.
    fn toy_samples(n: usize, arch: SegArch) -> Vec<SliceSample> {
        (0..n)
            .map(|i| {
                let w = 8;
                let mut label = Grid2::filled(w, w, 0u8);
                let mut img = Grid2::filled(w, w, 5.0f32);
                for y in 0..w {
                    for x in 0..w {
                        if x < 3 {
                            label.set(x, y, 1);
                            img.set(x, y, 250.0 - (i % 2) as f32);
                        } else if x >= 6 {
                            label.set(x, y, 2);
                            img.set(x, y, 120.0 + (i % 3) as f32);
                        }
                    }
                }
                let channels = (0..arch.n_channels()).map(|_| img.clone()).collect();
                SliceSample {
                    patient_id: format!("t{i}"),
                    z: i,
                    channels,
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initial_checkpoint() {
        let samples = toy_samples(3, SegArch::CtOnly);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(SegArch::CtOnly, &samples, &samples, &cfg).unwrap();
        assert_eq!(out.checkpoint.epoch, 0);
        assert!(out.checkpoint.params.theta.iter().all(|&t| t == 0.0));
        assert_eq!(out.log.len(), 1);
        assert!(out.log[0].train_loss.is_nan());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let samples = toy_samples(6, SegArch::EarlyFusion);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 4,
            lr_initial: 0.05,
            lr_reduced: 0.01,
            lr_switch_epoch: 20,
            augment: false,
            seed: 42,
            ..TrainConfig::default()
        };
        let out = train(SegArch::EarlyFusion, &samples, &samples, &cfg).unwrap();
        let first = out.log[1].train_loss;
        let last = out.log[30].train_loss;
        assert!(
            last < first,
            "loss should fall: epoch1 {first} vs epoch30 {last}"
        );

        let again = train(SegArch::EarlyFusion, &samples, &samples, &cfg).unwrap();
        assert_eq!(out.checkpoint, again.checkpoint);
        assert_eq!(out.checkpoint.to_json(), again.checkpoint.to_json());
        // NaN in the epoch-0 row defeats PartialEq; the CSV text is exact
        assert_eq!(metric_log_csv(&out.log), metric_log_csv(&again.log));
    }

    #[test]
    fn checkpoint_is_argmax_of_logged_validation_iou() {
        let samples = toy_samples(5, SegArch::CtOnly);
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 2,
            lr_initial: 0.05,
            lr_reduced: 0.05,
            augment: true,
            seed: 9,
            ..TrainConfig::default()
        };
        let out = train(SegArch::CtOnly, &samples, &samples, &cfg).unwrap();
        let best_logged = out
            .log
            .iter()
            .cloned()
            .reduce(|a, b| if b.val_iou > a.val_iou { b } else { a })
            .unwrap();
        assert_eq!(out.checkpoint.epoch, best_logged.epoch);
        assert_eq!(out.checkpoint.val_iou, best_logged.val_iou);
    }

    #[test]
    fn metric_log_csv_layout() {
        let log = vec![
            EpochLog {
                epoch: 0,
                train_loss: f64::NAN,
                val_iou: 0.0,
            },
            EpochLog {
                epoch: 1,
                train_loss: 0.75,
                val_iou: 0.5,
            },
        ];
        let csv = metric_log_csv(&log);
        assert_eq!(csv, "epoch,train_loss,val_iou\n0,NaN,0\n1,0.75,0.5\n");
    }

    #[test]
    fn checkpoint_json_round_trip_and_schema_guard() {
        let ckpt = Checkpoint {
            params: SegModelParams::zeros(SegArch::LateFusion),
            epoch: 17,
            val_iou: 0.625,
        };
        let json = ckpt.to_json();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(back, ckpt);
        let bad = json.replace("\"schema_version\": 1", "\"schema_version\": 99");
        assert!(Checkpoint::from_json(&bad).is_err());
    }

    #[test]
    fn input_validation() {
        let cfg = TrainConfig::default();
        assert!(train(SegArch::CtOnly, &[], &[], &cfg).is_err());
        let wrong = toy_samples(2, SegArch::LateFusion);
        assert!(train(SegArch::CtOnly, &wrong, &[], &cfg).is_err());
    }
}
