//! CART regression trees
//!
//! Greedy variance-reduction splitting. Candidate thresholds sit at the
//! midpoints between consecutive distinct present values of a feature; rows
//! with the feature missing are routed to the child that holds more present
//! rows (ties go left). A node splits only when the best candidate strictly
//! reduces the summed squared deviation and the node has at least two rows.

use rand_chacha::ChaCha8Rng;

use super::{check_training_inputs, partition_rows, sample_subset, MaxFeatures, TreeNode};
use crate::error::{Error, Result};
use crate::seeds::{self, STREAM_CART};
use crate::tabular::FeatureMatrix;

/// Fit one tree on every row of `x`.
///
/// `max_depth` counts split levels: `Some(0)` forces a single leaf, `None`
/// grows until nodes are pure or unsplittable. The seed only matters when
/// `mode` actually subsamples features.
pub fn fit_cart(
    x: &FeatureMatrix,
    y: &[f64],
    mode: MaxFeatures,
    max_depth: Option<usize>,
    seed: u64,
) -> Result<TreeNode> {
    check_training_inputs(x, y)?;
    let rows: Vec<usize> = (0..x.n_rows).collect();
    fit_cart_rows(x, y, &rows, mode, max_depth, seed)
}

/// Fit one tree on an explicit row multiset (bootstrap samples repeat
/// indices). Rows should be in a deterministic order; the order feeds the
/// floating-point accumulations.
pub fn fit_cart_rows(
    x: &FeatureMatrix,
    y: &[f64],
    rows: &[usize],
    mode: MaxFeatures,
    max_depth: Option<usize>,
    seed: u64,
) -> Result<TreeNode> {
    check_training_inputs(x, y)?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to fit a tree on".into()));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= x.n_rows) {
        return Err(Error::InvalidArgument(format!(
            "row index {bad} out of range ({} rows)",
            x.n_rows
        )));
    }
    let mut rng = seeds::stream_rng(seed, STREAM_CART, 0);
    Ok(grow(x, y, rows, 0, max_depth, mode, &mut rng))
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

fn grow(
    x: &FeatureMatrix,
    y: &[f64],
    rows: &[usize],
    depth: usize,
    max_depth: Option<usize>,
    mode: MaxFeatures,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let cover = rows.len() as f64;
    let first = y[rows[0]];
    if rows.iter().all(|&r| y[r] == first) {
        // exact purity guard: also sidesteps float noise in the gain sweep
        return TreeNode::Leaf {
            value: first,
            cover,
        };
    }
    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / cover;
    if rows.len() < 2 || max_depth.is_some_and(|d| depth >= d) {
        return TreeNode::Leaf { value: mean, cover };
    }
    match best_split(x, y, rows, mode, rng) {
        Some(c) => {
            let (l_rows, r_rows) = partition_rows(x, rows, c.feature, c.threshold, c.default_left);
            TreeNode::Split {
                feature: c.feature,
                threshold: c.threshold,
                default_left: c.default_left,
                cover,
                left: Box::new(grow(x, y, &l_rows, depth + 1, max_depth, mode, rng)),
                right: Box::new(grow(x, y, &r_rows, depth + 1, max_depth, mode, rng)),
            }
        }
        None => TreeNode::Leaf { value: mean, cover },
    }
}

/// Summed squared deviation from the mean, via the shifted-moment identity.
fn sse(sum: f64, sumsq: f64, n: f64) -> f64 {
    (sumsq - sum * sum / n).max(0.0)
}

fn best_split(
    x: &FeatureMatrix,
    y: &[f64],
    rows: &[usize],
    mode: MaxFeatures,
    rng: &mut ChaCha8Rng,
) -> Option<Candidate> {
    let n_features = x.n_cols();
    let pool: Vec<usize> = (0..n_features).collect();
    let feats = sample_subset(rng, &pool, mode.subset_size(n_features));

    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for &r in rows {
        sum += y[r];
        sumsq += y[r] * y[r];
    }
    let sse_parent = sse(sum, sumsq, rows.len() as f64);

    let mut best: Option<Candidate> = None;
    for &f in &feats {
        let mut present: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        let mut m_sum = 0.0;
        let mut m_sumsq = 0.0;
        let mut m_n = 0usize;
        for &r in rows {
            match x.cell(r, f) {
                Some(v) => present.push((v, y[r])),
                None => {
                    m_sum += y[r];
                    m_sumsq += y[r] * y[r];
                    m_n += 1;
                }
            }
        }
        if present.len() < 2 {
            continue;
        }
        present.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite feature values"));
        let mut p_sum = 0.0;
        let mut p_sumsq = 0.0;
        for &(_, t) in &present {
            p_sum += t;
            p_sumsq += t * t;
        }
        let p_n = present.len();

        let mut l_sum = 0.0;
        let mut l_sumsq = 0.0;
        for i in 0..p_n - 1 {
            let (v, t) = present[i];
            l_sum += t;
            l_sumsq += t * t;
            if v == present[i + 1].0 {
                continue;
            }
            let threshold = 0.5 * (v + present[i + 1].0);
            if !(v < threshold) {
                continue; // adjacent floats: midpoint collapsed onto the left value
            }
            let l_n = i + 1;
            let r_n = p_n - l_n;
            let default_left = l_n >= r_n;
            let (ls, lq, ln, rs, rq, rn) = if default_left {
                (
                    l_sum + m_sum,
                    l_sumsq + m_sumsq,
                    l_n + m_n,
                    p_sum - l_sum,
                    p_sumsq - l_sumsq,
                    r_n,
                )
            } else {
                (
                    l_sum,
                    l_sumsq,
                    l_n,
                    p_sum - l_sum + m_sum,
                    p_sumsq - l_sumsq + m_sumsq,
                    r_n + m_n,
                )
            };
            let gain = sse_parent - sse(ls, lq, ln as f64) - sse(rs, rq, rn as f64);
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Candidate {
                    gain,
                    feature: f,
                    threshold,
                    default_left,
                });
            }
        }
    }
    best.filter(|b| b.gain > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::rmse;

    fn matrix(rows: Vec<Vec<Option<f64>>>) -> FeatureMatrix {
        let cols = (0..rows[0].len()).map(|i| format!("f{i}")).collect();
        FeatureMatrix::from_rows(cols, rows).unwrap()
    }

    fn col(values: &[f64]) -> FeatureMatrix {
        matrix(values.iter().map(|&v| vec![Some(v)]).collect())
    }

    fn predictions(t: &TreeNode, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows).map(|r| t.route(x.row(r))).collect()
    }

    #[test]
    fn constant_targets_give_one_leaf() {
        let x = col(&[1.0, 2.0, 3.0, 4.0]);
        let y = [3.25; 4];
        let t = fit_cart(&x, &y, MaxFeatures::All, None, 0).unwrap();
        assert_eq!(
            t,
            TreeNode::Leaf {
                value: 3.25,
                cover: 4.0
            }
        );
    }

    #[test]
    fn step_targets_split_at_midpoint() {
        let x = col(&[1.0, 2.0, 3.0, 4.0]);
        let y = [0.0, 0.0, 10.0, 10.0];
        let t = fit_cart(&x, &y, MaxFeatures::All, None, 0).unwrap();
        match &t {
            TreeNode::Split {
                feature,
                threshold,
                default_left,
                left,
                right,
                ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 2.5);
                assert!(*default_left); // 2 vs 2 present rows, tie goes left
                assert_eq!(left.leaf_values(), vec![0.0]);
                assert_eq!(right.leaf_values(), vec![10.0]);
            }
            other => panic!("expected a split, got {other:?}"),
        }
        assert_eq!(predictions(&t, &x), vec![0.0, 0.0, 10.0, 10.0]);
    }

    #[test]
    fn distinct_rows_interpolate_exactly() {
        let values: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let x = col(&values);
        let y: Vec<f64> = (0..8).map(|i| (i * i) as f64 + 0.5).collect();
        let t = fit_cart(&x, &y, MaxFeatures::All, None, 0).unwrap();
        assert_eq!(predictions(&t, &x), y);
        assert_eq!(t.n_leaves(), 8);
    }

    #[test]
    fn depth_limits_are_respected() {
        let values: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let x = col(&values);
        let y: Vec<f64> = (0..8).map(|i| (i * i) as f64).collect();
        let stump = fit_cart(&x, &y, MaxFeatures::All, Some(1), 0).unwrap();
        assert_eq!(stump.depth(), 1);
        assert_eq!(stump.n_leaves(), 2);
        let root_only = fit_cart(&x, &y, MaxFeatures::All, Some(0), 0).unwrap();
        assert_eq!(root_only.depth(), 0);
    }

    #[test]
    fn missing_rows_follow_the_majority_child() {
        let x = matrix(vec![
            vec![Some(1.0)],
            vec![Some(2.0)],
            vec![Some(10.0)],
            vec![Some(11.0)],
            vec![None],
        ]);
        let y = [0.0, 0.0, 10.0, 10.0, 0.0];
        let t = fit_cart(&x, &y, MaxFeatures::All, None, 0).unwrap();
        match &t {
            TreeNode::Split {
                threshold,
                default_left,
                ..
            } => {
                assert_eq!(*threshold, 6.0);
                assert!(*default_left); // 2 vs 2 present rows: tie -> left
            }
            other => panic!("expected a split, got {other:?}"),
        }
        // the missing row lands with y = 0 rows, so both leaves stay pure
        assert_eq!(predictions(&t, &x), vec![0.0, 0.0, 10.0, 10.0, 0.0]);
        assert_eq!(t.route(&[None]), t.route(&[Some(1.5)]));
    }

    #[test]
    fn shift_equivariance() {
        let x = col(&[3.0, 1.0, 4.0, 1.5, 9.0, 2.0, 6.0]);
        let y = [2.0, -1.0, 5.0, 0.5, 12.0, 0.0, 7.5];
        let shifted: Vec<f64> = y.iter().map(|v| v + 1000.0).collect();
        let t0 = fit_cart(&x, &y, MaxFeatures::All, None, 0).unwrap();
        let t1 = fit_cart(&x, &shifted, MaxFeatures::All, None, 0).unwrap();
        for (a, b) in predictions(&t0, &x).iter().zip(predictions(&t1, &x)) {
            assert!((b - (a + 1000.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn feature_subsampling_is_seed_deterministic() {
        let rows: Vec<Vec<Option<f64>>> = (0..12)
            .map(|i| {
                let v = i as f64;
                vec![Some(v), Some((v * 7.0) % 5.0), Some(30.0 - v), Some(v * v % 11.0)]
            })
            .collect();
        let x = matrix(rows);
        let y: Vec<f64> = (0..12).map(|i| ((i * 13) % 7) as f64).collect();
        let a = fit_cart(&x, &y, MaxFeatures::Third, None, 42).unwrap();
        let b = fit_cart(&x, &y, MaxFeatures::Third, None, 42).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        // training RMSE is finite and the tree respects the feature count
        a.validate(4).unwrap();
        assert!(rmse(&predictions(&a, &x), &y).unwrap().is_finite());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let x = col(&[1.0, 2.0]);
        assert!(fit_cart(&x, &[1.0], MaxFeatures::All, None, 0).is_err());
        assert!(fit_cart(&x, &[1.0, f64::NAN], MaxFeatures::All, None, 0).is_err());
        let empty = FeatureMatrix::from_rows(vec!["f0".into()], vec![]).unwrap();
        assert!(fit_cart(&empty, &[], MaxFeatures::All, None, 0).is_err());
        let nan_cell = matrix(vec![vec![Some(f64::NAN)], vec![Some(1.0)]]);
        assert!(fit_cart(&nan_cell, &[0.0, 1.0], MaxFeatures::All, None, 0).is_err());
        assert!(fit_cart_rows(&x, &[0.0, 1.0], &[5], MaxFeatures::All, None, 0).is_err());
    }
}
