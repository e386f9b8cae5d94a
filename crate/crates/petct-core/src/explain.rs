//! model explanations: exact path-dependent TreeSHAP plus reports
//!
//! Attributions use the conditional-expectation game defined by the trees
//! themselves: when a feature is "unknown", a split averages its children
//! weighted by training cover; when it is known, the row's branch is
//! followed (missing cells follow the stored default direction). The fast
//! path algorithm keeps, per path, the proportion of subsets flowing through
//! each unique feature; [`brute_force_shapley`] enumerates every feature
//! subset with the same value function and exists as the testing oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{pearson_corr_matrix, CorrMatrix};
use crate::model_select::SurvModel;
use crate::tabular::FeatureMatrix;
use crate::trees::TreeNode;

/// Per-row attribution: `phi0 + phi.sum()` equals the model prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub phi: Vec<f64>,
    pub phi0: f64,
}

impl Attribution {
    pub fn total(&self) -> f64 {
        self.phi0 + self.phi.iter().sum::<f64>()
    }
}

fn goes_left(row: &[Option<f64>], feature: usize, threshold: f64, default_left: bool) -> bool {
    match row[feature] {
        Some(v) => v < threshold,
        None => default_left,
    }
}

/// Cover-weighted expectation of a tree (the value of the empty coalition).
fn tree_expectation(node: &TreeNode) -> f64 {
    match node {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Split {
            cover, left, right, ..
        } => {
            (left.cover() * tree_expectation(left) + right.cover() * tree_expectation(right))
                / cover
        }
    }
}

/// One unique feature on the current root-to-node path.
#[derive(Clone, Copy)]
struct PathElement {
    /// -1 marks the dummy element planted at the root
    feature: isize,
    /// fraction of paths flowing here when the feature is unknown
    zero_fraction: f64,
    /// 1 when the row's value follows this branch, else 0
    one_fraction: f64,
    /// proportion of feature subsets of each size reaching the node
    pweight: f64,
}

/// Append one feature to the path and redistribute the subset weights.
fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: isize) {
    let d = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if d == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..d).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / (d + 1) as f64;
        path[i].pweight = zero_fraction * path[i].pweight * (d - i) as f64 / (d + 1) as f64;
    }
}

/// Remove the path element at `k`, exactly inverting [`extend`].
fn unwind(path: &mut Vec<PathElement>, k: usize) {
    let d = path.len() - 1;
    let one_fraction = path[k].one_fraction;
    let zero_fraction = path[k].zero_fraction;
    let mut next_one_portion = path[d].pweight;
    for i in (0..d).rev() {
        if one_fraction != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one_portion * (d + 1) as f64 / ((i + 1) as f64 * one_fraction);
            next_one_portion =
                tmp - path[i].pweight * zero_fraction * (d - i) as f64 / (d + 1) as f64;
        } else {
            path[i].pweight = path[i].pweight * (d + 1) as f64 / (zero_fraction * (d - i) as f64);
        }
    }
    for i in k..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

/// Total pweight the path would have after unwinding element `k`, without
/// mutating anything.
fn unwound_sum(path: &[PathElement], k: usize) -> f64 {
    let d = path.len() - 1;
    let one_fraction = path[k].one_fraction;
    let zero_fraction = path[k].zero_fraction;
    let mut next_one_portion = path[d].pweight;
    let mut total = 0.0;
    if one_fraction != 0.0 {
        for i in (0..d).rev() {
            let tmp = next_one_portion / ((i + 1) as f64 * one_fraction);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero_fraction * (d - i) as f64;
        }
    } else {
        for i in (0..d).rev() {
            total += path[i].pweight / (zero_fraction * (d - i) as f64);
        }
    }
    total * (d + 1) as f64
}

fn shap_recurse(
    node: &TreeNode,
    row: &[Option<f64>],
    parent_path: &[PathElement],
    parent_zero: f64,
    parent_one: f64,
    parent_feature: isize,
    phi: &mut [f64],
) {
    let mut path = parent_path.to_vec();
    extend(&mut path, parent_zero, parent_one, parent_feature);
    match node {
        TreeNode::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = &path[i];
                phi[el.feature as usize] += w * (el.one_fraction - el.zero_fraction) * value;
            }
        }
        TreeNode::Split {
            feature,
            threshold,
            default_left,
            cover,
            left,
            right,
        } => {
            let (hot, cold) = if goes_left(row, *feature, *threshold, *default_left) {
                (left, right)
            } else {
                (right, left)
            };
            let hot_zero = hot.cover() / cover;
            let cold_zero = cold.cover() / cover;
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            // a feature met twice on one path keeps a single path element
            if let Some(k) = path.iter().position(|e| e.feature == *feature as isize) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind(&mut path, k);
            }
            let f = *feature as isize;
            shap_recurse(hot, row, &path, hot_zero * incoming_zero, incoming_one, f, phi);
            shap_recurse(cold, row, &path, cold_zero * incoming_zero, 0.0, f, phi);
        }
    }
}

/// SHAP values of one tree (no base/averaging applied).
fn single_tree_shap(tree: &TreeNode, row: &[Option<f64>], n_features: usize) -> Vec<f64> {
    let mut phi = vec![0.0; n_features];
    shap_recurse(tree, row, &[], 1.0, 1.0, -1, &mut phi);
    phi
}

fn model_parts(model: &SurvModel) -> Result<(&[TreeNode], usize, f64, f64)> {
    // (trees, n_features, offset, per-tree scale)
    match model {
        SurvModel::Forest(m) => Ok((
            &m.trees,
            m.n_features,
            0.0,
            1.0 / m.trees.len() as f64,
        )),
        SurvModel::Boosted(m) => Ok((&m.trees, m.n_features, m.base_score, 1.0)),
        other => Err(Error::InvalidArgument(format!(
            "attributions need a tree ensemble, got {}",
            match other {
                SurvModel::Mean { .. } => "a constant model",
                _ => "an identity model",
            }
        ))),
    }
}

/// Exact path-dependent SHAP attribution of one row.
pub fn tree_shap(model: &SurvModel, row: &[Option<f64>]) -> Result<Attribution> {
    let (trees, n_features, offset, scale) = model_parts(model)?;
    if row.len() != n_features {
        return Err(Error::ShapeMismatch(format!(
            "row has {} features, model was trained with {n_features}",
            row.len()
        )));
    }
    let mut phi = vec![0.0; n_features];
    let mut expectation = 0.0;
    for tree in trees {
        for (p, t) in phi.iter_mut().zip(single_tree_shap(tree, row, n_features)) {
            *p += t * scale;
        }
        expectation += tree_expectation(tree) * scale;
    }
    Ok(Attribution {
        phi,
        phi0: offset + expectation,
    })
}

/// Attributions for every row of a matrix.
pub fn tree_shap_matrix(model: &SurvModel, x: &FeatureMatrix) -> Result<Vec<Attribution>> {
    let (_, n_features, _, _) = model_parts(model)?;
    if x.n_cols() != n_features {
        return Err(Error::ShapeMismatch(format!(
            "matrix has {} features, model was trained with {n_features}",
            x.n_cols()
        )));
    }
    x.validate()?;
    exec::try_map_indices(x.n_rows, |r| tree_shap(model, x.row(r)))
}

/// Conditional expectation of one tree given the coalition `mask` (bit `f`
/// set means feature `f` takes the row's value).
fn cond_value(node: &TreeNode, row: &[Option<f64>], mask: u32) -> f64 {
    match node {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Split {
            feature,
            threshold,
            default_left,
            cover,
            left,
            right,
        } => {
            if mask & (1 << *feature) != 0 {
                if goes_left(row, *feature, *threshold, *default_left) {
                    cond_value(left, row, mask)
                } else {
                    cond_value(right, row, mask)
                }
            } else {
                (left.cover() * cond_value(left, row, mask)
                    + right.cover() * cond_value(right, row, mask))
                    / cover
            }
        }
    }
}

/// Exact Shapley values by subset enumeration — the oracle for
/// [`tree_shap`]. Limited to 12 features.
pub fn brute_force_shapley(model: &SurvModel, row: &[Option<f64>]) -> Result<Attribution> {
    let (trees, n_features, offset, scale) = model_parts(model)?;
    if row.len() != n_features {
        return Err(Error::ShapeMismatch(format!(
            "row has {} features, model was trained with {n_features}",
            row.len()
        )));
    }
    if n_features > 12 {
        return Err(Error::InvalidArgument(format!(
            "subset enumeration over {n_features} features is intractable (limit 12)"
        )));
    }
    let n_masks = 1usize << n_features;
    let mut value = vec![0.0; n_masks];
    for (m, v) in value.iter_mut().enumerate() {
        let mut acc = 0.0;
        for tree in trees {
            acc += cond_value(tree, row, m as u32) * scale;
        }
        *v = offset + acc;
    }
    let mut fact = [1.0f64; 13];
    for i in 1..13 {
        fact[i] = fact[i - 1] * i as f64;
    }
    let d = n_features;
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in 0..n_masks {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = fact[s] * fact[d - s - 1] / fact[d];
            *p += weight * (value[mask | bit] - value[mask]);
        }
    }
    Ok(Attribution {
        phi,
        phi0: value[0],
    })
}

/// One row of the importance ranking (already sorted, rank 1 = largest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapSummaryRow {
    pub feature: String,
    pub sum_abs_shap: f64,
    pub mean_abs_shap: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub rows: Vec<ShapSummaryRow>,
    pub csv: String,
}

/// Rank features by total |SHAP| over a matrix of rows.
pub fn shap_summary(model: &SurvModel, x: &FeatureMatrix) -> Result<ShapSummary> {
    if x.n_rows == 0 {
        return Err(Error::InvalidArgument(
            "cannot summarize attributions over zero rows".into(),
        ));
    }
    let attributions = tree_shap_matrix(model, x)?;
    let d = x.n_cols();
    let mut sum_abs = vec![0.0; d];
    for a in &attributions {
        for (s, p) in sum_abs.iter_mut().zip(&a.phi) {
            *s += p.abs();
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        sum_abs[b]
            .partial_cmp(&sum_abs[a])
            .expect("finite attribution sums")
            .then(a.cmp(&b))
    });
    let n = x.n_rows as f64;
    let mut rows = Vec::with_capacity(d);
    let mut csv = String::from("feature,sum_abs_shap,mean_abs_shap,rank\n");
    for (rank0, &f) in order.iter().enumerate() {
        let row = ShapSummaryRow {
            feature: x.columns[f].clone(),
            sum_abs_shap: sum_abs[f],
            mean_abs_shap: sum_abs[f] / n,
            rank: rank0 + 1,
        };
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.feature, row.sum_abs_shap, row.mean_abs_shap, row.rank
        ));
        rows.push(row);
    }
    Ok(ShapSummary { rows, csv })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub labels: Vec<String>,
    pub matrix: CorrMatrix,
    pub csv: String,
}

const IMAGE_COLUMNS: [&str; 4] = ["Count0", "Count1", "Count2", "dim_z"];

/// Pearson matrix over a feature matrix plus its survival target, columns
/// ordered image features first, then clinical, target last.
pub fn correlation_report(m: &FeatureMatrix) -> Result<CorrelationReport> {
    let target = m.target.as_ref().ok_or_else(|| {
        Error::InvalidArgument("correlation report needs the survival target attached".into())
    })?;
    let mut labels: Vec<String> = Vec::with_capacity(m.n_cols() + 1);
    let mut column_order: Vec<usize> = Vec::with_capacity(m.n_cols());
    for name in IMAGE_COLUMNS {
        if let Some(c) = m.col_index(name) {
            labels.push(name.to_string());
            column_order.push(c);
        }
    }
    for (c, name) in m.columns.iter().enumerate() {
        if !IMAGE_COLUMNS.contains(&name.as_str()) {
            labels.push(name.clone());
            column_order.push(c);
        }
    }
    let mut columns: Vec<Vec<Option<f64>>> = column_order
        .iter()
        .map(|&c| m.column_values(c))
        .collect();
    columns.push(target.iter().map(|&v| Some(v)).collect());
    labels.push("RFS".to_string());

    let matrix = pearson_corr_matrix(&columns)?;
    let mut csv = String::new();
    for l in &labels {
        csv.push(',');
        csv.push_str(l);
    }
    csv.push('\n');
    for (i, l) in labels.iter().enumerate() {
        csv.push_str(l);
        for j in 0..labels.len() {
            csv.push_str(&format!(",{}", matrix.values[i][j]));
        }
        csv.push('\n');
    }
    Ok(CorrelationReport {
        labels,
        matrix,
        csv,
    })
}
