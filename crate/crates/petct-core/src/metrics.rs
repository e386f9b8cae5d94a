//! scalar evaluation: Dice, aggregated Dice, IoU, RMSE, C-index, Pearson

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeKind, N_LABEL_CLASSES};

/// Cohort segmentation scores. `dice`/`iou` hold one `[class1, class2]` pair
/// per patient in input order; the aggregated Dice pools intersection and
/// size counts across the cohort before dividing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegScore {
    pub dice: Vec<[f64; 2]>,
    pub iou: Vec<[f64; 2]>,
    pub agg_dice: [f64; 2],
    pub mean_agg_dice: f64,
}

fn class_counts(pred: &Volume, gt: &Volume, c: u8) -> Result<(u64, u64, u64)> {
    pred.require_kind(VolumeKind::Label, "pred")?;
    gt.require_kind(VolumeKind::Label, "gt")?;
    pred.require_same_grid(gt, "pred vs gt")?;
    if c as usize >= N_LABEL_CLASSES {
        return Err(Error::InvalidArgument(format!("class {c} out of range")));
    }
    let cv = c as f32;
    let mut np = 0u64;
    let mut ng = 0u64;
    let mut ni = 0u64;
    for (&p, &g) in pred.voxels.iter().zip(&gt.voxels) {
        let pi = p == cv;
        let gi = g == cv;
        if pi {
            np += 1;
        }
        if gi {
            ng += 1;
        }
        if pi && gi {
            ni += 1;
        }
    }
    Ok((np, ng, ni))
}

/// Dice coefficient for one class: 2|P∩G| / (|P|+|G|); both sets empty → 1.
pub fn dice(pred: &Volume, gt: &Volume, c: u8) -> Result<f64> {
    let (np, ng, ni) = class_counts(pred, gt, c)?;
    Ok(if np + ng == 0 {
        1.0
    } else {
        2.0 * ni as f64 / (np + ng) as f64
    })
}

/// Intersection over union for one class; both sets empty → 1.
pub fn iou(pred: &Volume, gt: &Volume, c: u8) -> Result<f64> {
    let (np, ng, ni) = class_counts(pred, gt, c)?;
    let union = np + ng - ni;
    Ok(if union == 0 {
        1.0
    } else {
        ni as f64 / union as f64
    })
}

/// Cohort-level scores: per-patient Dice and IoU for classes 1 and 2, the
/// pooled (aggregated) Dice per class, and their two-class mean.
pub fn aggregated_dice(cohort: &[(&Volume, &Volume)]) -> Result<SegScore> {
    if cohort.is_empty() {
        return Err(Error::InvalidArgument("empty cohort".into()));
    }
    let mut per_dice = Vec::with_capacity(cohort.len());
    let mut per_iou = Vec::with_capacity(cohort.len());
    let mut inter = [0u64; 2];
    let mut size = [0u64; 2];
    for (pred, gt) in cohort {
        let mut d = [0f64; 2];
        let mut j = [0f64; 2];
        for c in 1..=2u8 {
            let (np, ng, ni) = class_counts(pred, gt, c)?;
            let k = (c - 1) as usize;
            inter[k] += ni;
            size[k] += np + ng;
            d[k] = if np + ng == 0 {
                1.0
            } else {
                2.0 * ni as f64 / (np + ng) as f64
            };
            let union = np + ng - ni;
            j[k] = if union == 0 {
                1.0
            } else {
                ni as f64 / union as f64
            };
        }
        per_dice.push(d);
        per_iou.push(j);
    }
    let agg = |k: usize| {
        if size[k] == 0 {
            1.0
        } else {
            2.0 * inter[k] as f64 / size[k] as f64
        }
    };
    let agg_dice = [agg(0), agg(1)];
    Ok(SegScore {
        dice: per_dice,
        iou: per_iou,
        agg_dice,
        mean_agg_dice: (agg_dice[0] + agg_dice[1]) / 2.0,
    })
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "rmse length mismatch {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty vectors".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Concordance index. A pair (i, j) is comparable when `t_i < t_j` and
/// patient i had the event; it is concordant when the model also predicts a
/// shorter survival for i (`s_i < s_j`); tied scores count half. With
/// `events` omitted, every observation counts as an event.
pub fn c_index(scores: &[f64], times: &[f64], events: Option<&[bool]>) -> Result<f64> {
    let n = scores.len();
    if times.len() != n || events.map_or(false, |e| e.len() != n) {
        return Err(Error::ShapeMismatch("c_index length mismatch".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "c_index needs at least 2 observations".into(),
        ));
    }
    let event = |i: usize| events.map_or(true, |e| e[i]);
    let mut comparable = 0u64;
    let mut concordant = 0f64;
    for i in 0..n {
        for j in 0..n {
            if i == j || !(times[i] < times[j]) || !event(i) {
                continue;
            }
            comparable += 1;
            if scores[i] < scores[j] {
                concordant += 1.0;
            } else if scores[i] == scores[j] {
                concordant += 0.5;
            }
        }
    }
    if comparable == 0 {
        return Err(Error::UndefinedMetric(
            "c_index has no comparable pairs".into(),
        ));
    }
    Ok(concordant / comparable as f64)
}

/// Status of one correlation cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrFlag {
    Ok,
    /// one of the columns is constant over the pairwise-complete rows;
    /// the value is reported as 0
    ZeroVariance,
    /// fewer than 2 pairwise-complete rows; the value is NaN
    Insufficient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrMatrix {
    pub values: Vec<Vec<f64>>,
    pub flags: Vec<Vec<CorrFlag>>,
}

/// Pairwise-complete Pearson correlation over optional-valued columns; the
/// diagonal is 1 by convention.
pub fn pearson_corr_matrix(cols: &[Vec<Option<f64>>]) -> Result<CorrMatrix> {
    let k = cols.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no columns".into()));
    }
    let n = cols[0].len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::ShapeMismatch("ragged columns".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least 2 rows".into(),
        ));
    }
    let mut values = vec![vec![0f64; k]; k];
    let mut flags = vec![vec![CorrFlag::Ok; k]; k];
    for a in 0..k {
        values[a][a] = 1.0;
        for b in (a + 1)..k {
            let (v, f) = pearson_pair(&cols[a], &cols[b]);
            values[a][b] = v;
            values[b][a] = v;
            flags[a][b] = f;
            flags[b][a] = f;
        }
    }
    Ok(CorrMatrix { values, flags })
}

fn pearson_pair(xs: &[Option<f64>], ys: &[Option<f64>]) -> (f64, CorrFlag) {
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter_map(|(x, y)| match (x, y) {
            (Some(a), Some(b)) => Some((*a, *b)),
            _ => None,
        })
        .collect();
    if pairs.len() < 2 {
        return (f64::NAN, CorrFlag::Insufficient);
    }
    let constant = |get: &dyn Fn(&(f64, f64)) -> f64| {
        let first = get(&pairs[0]);
        pairs.iter().all(|p| get(p) == first)
    };
    if constant(&|p| p.0) || constant(&|p| p.1) {
        return (0.0, CorrFlag::ZeroVariance);
    }
    let m = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / m;
    let mut sxy = 0f64;
    let mut sxx = 0f64;
    let mut syy = 0f64;
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    ((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0), CorrFlag::Ok)
}
