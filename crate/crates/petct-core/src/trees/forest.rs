//! random forest regression
//!
//! Bagged CART trees with per-node feature subsampling. Tree `t` draws its
//! bootstrap from one seed stream and its split-search randomness from
//! another, both derived from the config seed, so the forest is reproducible
//! tree by tree and trees can be fit in parallel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cart::fit_cart_rows;
use super::{check_predict_width, check_training_inputs, MaxFeatures, TreeNode, MODEL_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::exec;
use crate::seeds::{self, STREAM_RF_BOOT, STREAM_RF_TREE};
use crate::tabular::FeatureMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_trees: 100,
            max_features: MaxFeatures::Third,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl RfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidArgument("forest needs at least one tree".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub config: RfConfig,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    schema_version: u32,
    #[serde(flatten)]
    model: RandomForestModel,
}

pub fn fit_random_forest(
    x: &FeatureMatrix,
    y: &[f64],
    cfg: &RfConfig,
) -> Result<RandomForestModel> {
    cfg.validate()?;
    check_training_inputs(x, y)?;
    let n = x.n_rows;
    let trees = exec::try_map_indices(cfg.n_trees, |t| {
        let rows: Vec<usize> = if cfg.bootstrap {
            let mut rng = seeds::stream_rng(cfg.seed, STREAM_RF_BOOT, t as u64);
            let mut drawn: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            drawn.sort_unstable();
            drawn
        } else {
            (0..n).collect()
        };
        let tree_seed = seeds::mix(cfg.seed, STREAM_RF_TREE, t as u64);
        fit_cart_rows(x, y, &rows, cfg.max_features, None, tree_seed)
    })?;
    Ok(RandomForestModel {
        config: *cfg,
        n_features: x.n_cols(),
        trees,
    })
}

impl RandomForestModel {
    /// Mean of the per-tree predictions.
    pub fn predict_row(&self, row: &[Option<f64>]) -> Result<f64> {
        check_predict_width(self.n_features, row.len())?;
        let sum: f64 = self.trees.iter().map(|t| t.route(row)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        check_predict_width(self.n_features, x.n_cols())?;
        x.validate()?;
        Ok(exec::map_indices(x.n_rows, |r| {
            let sum: f64 = self.trees.iter().map(|t| t.route(x.row(r))).sum();
            sum / self.trees.len() as f64
        }))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ForestFile {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<RandomForestModel> {
        let file: ForestFile = serde_json::from_str(json)?;
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported forest schema version {}",
                file.schema_version
            )));
        }
        file.model.config.validate()?;
        if file.model.trees.len() != file.model.config.n_trees {
            return Err(Error::Serialization(format!(
                "forest file has {} trees, config says {}",
                file.model.trees.len(),
                file.model.config.n_trees
            )));
        }
        for t in &file.model.trees {
            t.validate(file.model.n_features)?;
        }
        Ok(file.model)
    }
}
