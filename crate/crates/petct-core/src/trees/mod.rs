//! regression trees: CART, random forest, gradient boosting
//!
//! One shared node type plus the split-search helpers; the three training
//! algorithms live in submodules. Every fit is a deterministic function of
//! (matrix, targets, config): feature subsets, bootstraps and row subsamples
//! come from dedicated seed streams, so identical inputs yield byte-identical
//! serialized models. Missing feature values are first-class — each split
//! stores a default direction for them.

pub mod cart;
pub mod forest;
pub mod gbt;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::FeatureMatrix;

/// Serialized tree-model layout version.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// One node of a regression tree.
///
/// `cover` is the amount of training mass that reached the node (row count
/// for CART/forest trees, hessian sum for boosted trees); attribution code
/// uses it to weight conditional expectations. Rows route left when the
/// feature value is strictly below the threshold; rows with the feature
/// missing follow `default_left`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
        cover: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        cover: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    /// Prediction for one row (`row[f] = None` marks a missing value).
    pub fn route(&self, row: &[Option<f64>]) -> f64 {
        match self {
            TreeNode::Leaf { value, .. } => *value,
            TreeNode::Split {
                feature,
                threshold,
                default_left,
                left,
                right,
                ..
            } => {
                let go_left = match row[*feature] {
                    Some(v) => v < *threshold,
                    None => *default_left,
                };
                if go_left {
                    left.route(row)
                } else {
                    right.route(row)
                }
            }
        }
    }

    pub fn cover(&self) -> f64 {
        match self {
            TreeNode::Leaf { cover, .. } => *cover,
            TreeNode::Split { cover, .. } => *cover,
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Number of split levels below this node (0 for a leaf).
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Leaf values in left-to-right order.
    pub fn leaf_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.push_leaf_values(&mut out);
        out
    }

    fn push_leaf_values(&self, out: &mut Vec<f64>) {
        match self {
            TreeNode::Leaf { value, .. } => out.push(*value),
            TreeNode::Split { left, right, .. } => {
                left.push_leaf_values(out);
                right.push_leaf_values(out);
            }
        }
    }

    /// Structural checks: finite thresholds/values, feature indices in range,
    /// positive cover.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        match self {
            TreeNode::Leaf { value, cover } => {
                if !value.is_finite() || !cover.is_finite() || *cover < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "leaf with value {value}, cover {cover}"
                    )));
                }
                Ok(())
            }
            TreeNode::Split {
                feature,
                threshold,
                cover,
                left,
                right,
                ..
            } => {
                if *feature >= n_features {
                    return Err(Error::InvalidArgument(format!(
                        "split on feature {feature} but the model has {n_features}"
                    )));
                }
                if !threshold.is_finite() || !cover.is_finite() || *cover < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "split with threshold {threshold}, cover {cover}"
                    )));
                }
                left.validate(n_features)?;
                right.validate(n_features)
            }
        }
    }
}

/// Size of the random feature subset inspected at each node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaxFeatures {
    All,
    Third,
    Sqrt,
}

impl MaxFeatures {
    pub fn subset_size(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Third => (n_features / 3).max(1),
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
        }
    }
}

/// Draw `k` items from `pool` without replacement, returned in ascending
/// order. When `k >= pool.len()` the pool is returned as-is and the RNG is
/// left untouched.
pub(crate) fn sample_subset(rng: &mut ChaCha8Rng, pool: &[usize], k: usize) -> Vec<usize> {
    if k >= pool.len() {
        return pool.to_vec();
    }
    let mut scratch = pool.to_vec();
    let (chosen, _) = scratch.partial_shuffle(rng, k);
    let mut out = chosen.to_vec();
    out.sort_unstable();
    out
}

/// Shared training-input validation: non-empty matrix, matching target
/// length, everything finite (cells may be missing, never NaN).
pub(crate) fn check_training_inputs(x: &FeatureMatrix, y: &[f64]) -> Result<()> {
    x.validate()?;
    if x.n_rows == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if x.n_cols() == 0 {
        return Err(Error::InvalidArgument("training matrix has no columns".into()));
    }
    if y.len() != x.n_rows {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} rows",
            y.len(),
            x.n_rows
        )));
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite target {bad}")));
    }
    for r in 0..x.n_rows {
        for cell in x.row(r).iter().flatten() {
            if !cell.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite feature value {cell} in row {r}"
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn check_predict_width(n_features: usize, width: usize) -> Result<()> {
    if width == n_features {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "prediction input has {width} features, model was trained with {n_features}"
        )))
    }
}

/// Split `rows` by `feature < threshold`, missing values following
/// `default_left`. Relative order is preserved, keeping later floating-point
/// accumulations deterministic.
pub(crate) fn partition_rows(
    x: &FeatureMatrix,
    rows: &[usize],
    feature: usize,
    threshold: f64,
    default_left: bool,
) -> (Vec<usize>, Vec<usize>) {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &r in rows {
        let go_left = match x.cell(r, feature) {
            Some(v) => v < threshold,
            None => default_left,
        };
        if go_left {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    (left, right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn leaf(value: f64, cover: f64) -> TreeNode {
        TreeNode::Leaf { value, cover }
    }

    fn demo_tree(default_left: bool) -> TreeNode {
        TreeNode::Split {
            feature: 0,
            threshold: 5.0,
            default_left,
            cover: 10.0,
            left: Box::new(leaf(1.0, 6.0)),
            right: Box::new(leaf(2.0, 4.0)),
        }
    }

    #[test]
    fn routing_and_missing_defaults() {
        let t = demo_tree(false);
        assert_eq!(t.route(&[Some(3.0)]), 1.0);
        assert_eq!(t.route(&[Some(5.0)]), 2.0); // threshold itself goes right
        assert_eq!(t.route(&[Some(7.0)]), 2.0);
        // a missing value behaves exactly like a value inside the default child
        assert_eq!(t.route(&[None]), t.route(&[Some(5.5)]));
        let t = demo_tree(true);
        assert_eq!(t.route(&[None]), t.route(&[Some(4.9)]));
        assert_eq!(t.n_leaves(), 2);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.leaf_values(), vec![1.0, 2.0]);
        assert_eq!(t.cover(), 10.0);
    }

    #[test]
    fn validate_catches_bad_structure() {
        assert!(demo_tree(true).validate(1).is_ok());
        assert!(demo_tree(true).validate(0).is_err()); // feature out of range
        let nan_split = TreeNode::Split {
            feature: 0,
            threshold: f64::NAN,
            default_left: true,
            cover: 2.0,
            left: Box::new(leaf(0.0, 1.0)),
            right: Box::new(leaf(1.0, 1.0)),
        };
        assert!(nan_split.validate(1).is_err());
        assert!(leaf(f64::INFINITY, 1.0).validate(1).is_err());
    }

    #[test]
    fn tree_json_round_trip() {
        let t = demo_tree(false);
        let json = serde_json::to_string(&t).unwrap();
        let back: TreeNode = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn subset_sizes() {
        assert_eq!(MaxFeatures::All.subset_size(14), 14);
        assert_eq!(MaxFeatures::Third.subset_size(14), 4);
        assert_eq!(MaxFeatures::Sqrt.subset_size(14), 3);
        assert_eq!(MaxFeatures::Third.subset_size(2), 1);
        assert_eq!(MaxFeatures::Sqrt.subset_size(1), 1);
        assert_eq!(MaxFeatures::Sqrt.subset_size(16), 4);
    }

    #[test]
    fn sample_subset_is_sorted_and_seeded() {
        let pool: Vec<usize> = (0..20).collect();
        let mut a = seeds::stream_rng(1, seeds::STREAM_CART, 0);
        let mut b = seeds::stream_rng(1, seeds::STREAM_CART, 0);
        let s1 = sample_subset(&mut a, &pool, 7);
        let s2 = sample_subset(&mut b, &pool, 7);
        assert_eq!(s1, s2);
        assert_eq!(s1.len(), 7);
        assert!(s1.windows(2).all(|w| w[0] < w[1]));
        // full-size request returns the pool untouched
        let s3 = sample_subset(&mut a, &pool, 20);
        assert_eq!(s3, pool);
    }
}
