//! gradient-boosted regression trees (XGBoost-style, squared error)
//!
//! Boosting starts from the training-target mean. Each round fits one
//! depth-limited tree to the current residual gradients (g = pred - y,
//! h = 1), using the second-order gain
//! `0.5 * [G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)]` and leaf weights
//! `-G/(H+l)`, stored pre-scaled by the learning rate. Row subsampling is
//! per tree without replacement; column subsampling applies multiplicatively
//! per tree, per level and per node. Splits learn the default direction for
//! missing values by trying both sides and keeping the higher gain (ties go
//! left).

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_predict_width, check_training_inputs, partition_rows, sample_subset, TreeNode,
    MODEL_SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::seeds::{self, STREAM_GBT};
use crate::tabular::FeatureMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub colsample_bylevel: f64,
    pub colsample_bynode: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_estimators: 120,
            learning_rate: 0.05,
            max_depth: 4,
            subsample: 0.7,
            colsample_bytree: 0.6,
            colsample_bylevel: 0.8,
            colsample_bynode: 1.0,
            lambda: 1.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("learning_rate", self.learning_rate),
            ("subsample", self.subsample),
            ("colsample_bytree", self.colsample_bytree),
            ("colsample_bylevel", self.colsample_bylevel),
            ("colsample_bynode", self.colsample_bynode),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {v} is outside (0, 1]"
                )));
            }
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidArgument("max_depth must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda = {}", self.lambda)));
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "min_child_weight = {}",
                self.min_child_weight
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub config: GbtConfig,
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<TreeNode>,
}

#[derive(Serialize, Deserialize)]
struct GbtFile {
    schema_version: u32,
    #[serde(flatten)]
    model: GbtModel,
}

/// `max(1, round(frac * m))`, capped at `m`.
fn sampled_count(frac: f64, m: usize) -> usize {
    ((frac * m as f64).round() as usize).clamp(1, m.max(1))
}

pub fn fit_gbt(x: &FeatureMatrix, y: &[f64], cfg: &GbtConfig) -> Result<GbtModel> {
    cfg.validate()?;
    check_training_inputs(x, y)?;
    let n = x.n_rows;
    let d = x.n_cols();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..d).collect();
    for round in 0..cfg.n_estimators {
        let mut rng = seeds::stream_rng(cfg.seed, STREAM_GBT, round as u64);
        let rows = sample_subset(&mut rng, &all_rows, sampled_count(cfg.subsample, n));
        let tree_feats = sample_subset(&mut rng, &all_cols, sampled_count(cfg.colsample_bytree, d));
        let grad: Vec<f64> = (0..n).map(|i| pred[i] - y[i]).collect();
        let tree = grow_tree(x, &grad, rows, &tree_feats, cfg, &mut rng);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += tree.route(x.row(i));
        }
        trees.push(tree);
    }
    Ok(GbtModel {
        config: *cfg,
        n_features: d,
        base_score,
        trees,
    })
}

/// Flat build node; converted to the recursive representation at the end.
enum Built {
    Leaf {
        value: f64,
        cover: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        cover: f64,
        left: usize,
        right: usize,
    },
}

fn grow_tree(
    x: &FeatureMatrix,
    grad: &[f64],
    root_rows: Vec<usize>,
    tree_feats: &[usize],
    cfg: &GbtConfig,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let mut arena: Vec<Option<Built>> = vec![None];
    let mut level: Vec<(usize, Vec<usize>)> = vec![(0, root_rows)];
    for _ in 0..cfg.max_depth {
        if level.is_empty() {
            break;
        }
        let level_feats = sample_subset(
            rng,
            tree_feats,
            sampled_count(cfg.colsample_bylevel, tree_feats.len()),
        );
        let mut next = Vec::new();
        for (idx, rows) in level {
            let node_feats = sample_subset(
                rng,
                &level_feats,
                sampled_count(cfg.colsample_bynode, level_feats.len()),
            );
            match best_split(x, grad, &rows, &node_feats, cfg) {
                Some(s) => {
                    let (l_rows, r_rows) =
                        partition_rows(x, &rows, s.feature, s.threshold, s.default_left);
                    let li = arena.len();
                    arena.push(None);
                    let ri = arena.len();
                    arena.push(None);
                    arena[idx] = Some(Built::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        default_left: s.default_left,
                        cover: rows.len() as f64,
                        left: li,
                        right: ri,
                    });
                    next.push((li, l_rows));
                    next.push((ri, r_rows));
                }
                None => arena[idx] = Some(make_leaf(grad, &rows, cfg)),
            }
        }
        level = next;
    }
    for (idx, rows) in level {
        arena[idx] = Some(make_leaf(grad, &rows, cfg));
    }
    materialize(&arena, 0)
}

fn make_leaf(grad: &[f64], rows: &[usize], cfg: &GbtConfig) -> Built {
    let g: f64 = rows.iter().map(|&r| grad[r]).sum();
    let h = rows.len() as f64;
    Built::Leaf {
        value: cfg.learning_rate * (-g / (h + cfg.lambda)),
        cover: h,
    }
}

fn materialize(arena: &[Option<Built>], idx: usize) -> TreeNode {
    match arena[idx].as_ref().expect("every arena slot is finalized") {
        Built::Leaf { value, cover } => TreeNode::Leaf {
            value: *value,
            cover: *cover,
        },
        Built::Split {
            feature,
            threshold,
            default_left,
            cover,
            left,
            right,
        } => TreeNode::Split {
            feature: *feature,
            threshold: *threshold,
            default_left: *default_left,
            cover: *cover,
            left: Box::new(materialize(arena, *left)),
            right: Box::new(materialize(arena, *right)),
        },
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

fn best_split(
    x: &FeatureMatrix,
    grad: &[f64],
    rows: &[usize],
    feats: &[usize],
    cfg: &GbtConfig,
) -> Option<Candidate> {
    if rows.len() < 2 {
        return None;
    }
    let g_total: f64 = rows.iter().map(|&r| grad[r]).sum();
    let h_total = rows.len() as f64;
    let parent_score = g_total * g_total / (h_total + cfg.lambda);

    let mut best: Option<Candidate> = None;
    for &f in feats {
        let mut present: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        let mut g_miss = 0.0;
        let mut h_miss = 0.0;
        for &r in rows {
            match x.cell(r, f) {
                Some(v) => present.push((v, grad[r])),
                None => {
                    g_miss += grad[r];
                    h_miss += 1.0;
                }
            }
        }
        if present.len() < 2 {
            continue;
        }
        present.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite feature values"));
        let gp_total: f64 = present.iter().map(|&(_, g)| g).sum();
        let hp_total = present.len() as f64;

        let mut gl = 0.0;
        let mut hl = 0.0;
        for i in 0..present.len() - 1 {
            let (v, g) = present[i];
            gl += g;
            hl += 1.0;
            if v == present[i + 1].0 {
                continue;
            }
            let threshold = 0.5 * (v + present[i + 1].0);
            if !(v < threshold) {
                continue; // adjacent floats: midpoint collapsed onto the left value
            }
            let gr = gp_total - gl;
            let hr = hp_total - hl;
            // try the missing rows on each side; when nothing is missing the
            // two assignments coincide and the tie rule keeps left
            for miss_left in [true, false] {
                if h_miss == 0.0 && !miss_left {
                    continue;
                }
                let (gl2, hl2, gr2, hr2) = if miss_left {
                    (gl + g_miss, hl + h_miss, gr, hr)
                } else {
                    (gl, hl, gr + g_miss, hr + h_miss)
                };
                if hl2 < cfg.min_child_weight || hr2 < cfg.min_child_weight {
                    continue;
                }
                let gain = 0.5
                    * (gl2 * gl2 / (hl2 + cfg.lambda) + gr2 * gr2 / (hr2 + cfg.lambda)
                        - parent_score);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate {
                        gain,
                        feature: f,
                        threshold,
                        default_left: miss_left,
                    });
                }
            }
        }
    }
    best.filter(|b| b.gain > 0.0)
}

impl GbtModel {
    /// `base_score` plus the (already learning-rate-scaled) tree outputs.
    /// Trees accumulate in boosting order, bit-identical to the running
    /// predictions maintained during training.
    pub fn predict_row(&self, row: &[Option<f64>]) -> Result<f64> {
        check_predict_width(self.n_features, row.len())?;
        Ok(self
            .trees
            .iter()
            .fold(self.base_score, |acc, t| acc + t.route(row)))
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        check_predict_width(self.n_features, x.n_cols())?;
        x.validate()?;
        Ok(exec::map_indices(x.n_rows, |r| {
            self.trees
                .iter()
                .fold(self.base_score, |acc, t| acc + t.route(x.row(r)))
        }))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GbtFile {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<GbtModel> {
        let file: GbtFile = serde_json::from_str(json)?;
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported boosted-tree schema version {}",
                file.schema_version
            )));
        }
        file.model.config.validate()?;
        if !file.model.base_score.is_finite() {
            return Err(Error::Serialization(format!(
                "non-finite base score {}",
                file.model.base_score
            )));
        }
        for t in &file.model.trees {
            t.validate(file.model.n_features)?;
        }
        Ok(file.model)
    }
}
