//! k-fold cross-validation, grid search and final refit for the survival
//! regressors
//!
//! Folds come from one seeded shuffle so every config in a grid sees the same
//! partition; per-fold fits get their own derived seeds. Validation rows are
//! physically absent from the fit matrix — the training view is built from
//! complement indices only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rmse;
use crate::seeds::{self, STREAM_CV_FIT, STREAM_CV_FOLDS};
use crate::tabular::FeatureMatrix;
use crate::trees::forest::{fit_random_forest, RandomForestModel, RfConfig};
use crate::trees::gbt::{fit_gbt, GbtConfig, GbtModel};
use crate::trees::{check_training_inputs, MODEL_SCHEMA_VERSION};

/// A fittable survival-regression configuration. `Mean` and
/// `IdentityColumn` are trivial reference models: the first is a baseline,
/// the second an oracle hook for validating the CV plumbing itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SurvModelConfig {
    RandomForest(RfConfig),
    GradientBoost(GbtConfig),
    Mean,
    IdentityColumn(usize),
}

impl SurvModelConfig {
    /// Same config with the embedded RNG seed replaced (no-op for the
    /// seedless reference models).
    pub fn with_seed(&self, seed: u64) -> SurvModelConfig {
        match self {
            SurvModelConfig::RandomForest(c) => {
                SurvModelConfig::RandomForest(RfConfig { seed, ..*c })
            }
            SurvModelConfig::GradientBoost(c) => {
                SurvModelConfig::GradientBoost(GbtConfig { seed, ..*c })
            }
            other => other.clone(),
        }
    }

    pub fn fit(&self, x: &FeatureMatrix, y: &[f64]) -> Result<SurvModel> {
        match self {
            SurvModelConfig::RandomForest(c) => {
                Ok(SurvModel::Forest(fit_random_forest(x, y, c)?))
            }
            SurvModelConfig::GradientBoost(c) => Ok(SurvModel::Boosted(fit_gbt(x, y, c)?)),
            SurvModelConfig::Mean => {
                check_training_inputs(x, y)?;
                Ok(SurvModel::Mean {
                    value: y.iter().sum::<f64>() / y.len() as f64,
                })
            }
            SurvModelConfig::IdentityColumn(col) => {
                check_training_inputs(x, y)?;
                if *col >= x.n_cols() {
                    return Err(Error::InvalidArgument(format!(
                        "identity column {col} out of range ({} columns)",
                        x.n_cols()
                    )));
                }
                Ok(SurvModel::IdentityColumn { column: *col })
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            SurvModelConfig::RandomForest(c) => {
                format!("rf(n_trees={},{:?})", c.n_trees, c.max_features)
            }
            SurvModelConfig::GradientBoost(c) => format!(
                "gbt(n={},lr={},depth={})",
                c.n_estimators, c.learning_rate, c.max_depth
            ),
            SurvModelConfig::Mean => "mean".into(),
            SurvModelConfig::IdentityColumn(c) => format!("identity(col={c})"),
        }
    }
}

/// A fitted survival regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SurvModel {
    Forest(RandomForestModel),
    Boosted(GbtModel),
    Mean { value: f64 },
    IdentityColumn { column: usize },
}

#[derive(Serialize, Deserialize)]
struct SurvModelFile {
    schema_version: u32,
    model: SurvModel,
}

impl SurvModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            SurvModel::Forest(m) => m.predict(x),
            SurvModel::Boosted(m) => m.predict(x),
            SurvModel::Mean { value } => {
                x.validate()?;
                Ok(vec![*value; x.n_rows])
            }
            SurvModel::IdentityColumn { column } => {
                x.validate()?;
                if *column >= x.n_cols() {
                    return Err(Error::InvalidArgument(format!(
                        "identity column {column} out of range ({} columns)",
                        x.n_cols()
                    )));
                }
                (0..x.n_rows)
                    .map(|r| {
                        x.cell(r, *column).ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "identity model hit a missing value at row {r}"
                            ))
                        })
                    })
                    .collect()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SurvModel::Forest(m) => {
                m.config.validate()?;
                for t in &m.trees {
                    t.validate(m.n_features)?;
                }
                Ok(())
            }
            SurvModel::Boosted(m) => {
                m.config.validate()?;
                if !m.base_score.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "non-finite base score {}",
                        m.base_score
                    )));
                }
                for t in &m.trees {
                    t.validate(m.n_features)?;
                }
                Ok(())
            }
            SurvModel::Mean { value } => {
                if value.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!("non-finite mean {value}")))
                }
            }
            SurvModel::IdentityColumn { .. } => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SurvModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<SurvModel> {
        let file: SurvModelFile = serde_json::from_str(json)?;
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported survival-model schema version {}",
                file.schema_version
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }
}

/// Shuffle `0..n` and cut it into `k` folds; the first `n mod k` folds get
/// the extra row. Each fold is returned in ascending index order.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot cut {n} rows into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    let mut rng = seeds::stream_rng(seed, STREAM_CV_FOLDS, 0);
    order.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold: Vec<usize> = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
}

/// Run the fold loop with a caller-supplied fit-and-predict hook. The hook
/// sees only the complement rows' matrix and targets, plus the fold number
/// and the validation matrix; it returns validation predictions.
pub fn cross_validate_with<F>(
    folds: &[Vec<usize>],
    x: &FeatureMatrix,
    y: &[f64],
    fit_predict: F,
) -> Result<CvResult>
where
    F: Fn(&FeatureMatrix, &[f64], usize, &FeatureMatrix) -> Result<Vec<f64>>,
{
    check_training_inputs(x, y)?;
    if folds.is_empty() {
        return Err(Error::InvalidArgument("no folds".into()));
    }
    let mut fold_rmse = Vec::with_capacity(folds.len());
    for (f, fold) in folds.iter().enumerate() {
        let in_fold: std::collections::HashSet<usize> = fold.iter().copied().collect();
        let train_rows: Vec<usize> = (0..x.n_rows).filter(|r| !in_fold.contains(r)).collect();
        if train_rows.is_empty() || fold.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "fold {f} leaves an empty split ({} train rows, {} validation rows)",
                train_rows.len(),
                fold.len()
            )));
        }
        let x_train = x.select_rows(&train_rows);
        let y_train: Vec<f64> = train_rows.iter().map(|&r| y[r]).collect();
        let x_val = x.select_rows(fold);
        let y_val: Vec<f64> = fold.iter().map(|&r| y[r]).collect();
        let preds = fit_predict(&x_train, &y_train, f, &x_val)?;
        fold_rmse.push(rmse(&preds, &y_val)?);
    }
    let mean_rmse = fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64;
    Ok(CvResult {
        fold_rmse,
        mean_rmse,
    })
}

/// k-fold CV of one config: folds from the seed's fold stream, fold `f` fit
/// with its own derived seed.
pub fn cross_validate(
    cfg: &SurvModelConfig,
    x: &FeatureMatrix,
    y: &[f64],
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    let folds = kfold_indices(x.n_rows, k, seed)?;
    cross_validate_folds(cfg, &folds, x, y, seed)
}

fn cross_validate_folds(
    cfg: &SurvModelConfig,
    folds: &[Vec<usize>],
    x: &FeatureMatrix,
    y: &[f64],
    seed: u64,
) -> Result<CvResult> {
    cross_validate_with(folds, x, y, |x_train, y_train, fold, x_val| {
        let fitted = cfg
            .with_seed(seeds::mix(seed, STREAM_CV_FIT, fold as u64))
            .fit(x_train, y_train)?;
        fitted.predict(x_val)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub best_config: SurvModelConfig,
    pub per_config: Vec<CvResult>,
    /// CSV: config_id, fold, rmse, mean_rmse
    pub table_csv: String,
}

/// Evaluate every config on identical folds; lowest mean RMSE wins, ties go
/// to the earlier grid position.
pub fn grid_search(
    grid: &[SurvModelConfig],
    x: &FeatureMatrix,
    y: &[f64],
    k: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty config grid".into()));
    }
    let folds = kfold_indices(x.n_rows, k, seed)?;
    let mut per_config = Vec::with_capacity(grid.len());
    for cfg in grid {
        per_config.push(cross_validate_folds(cfg, &folds, x, y, seed)?);
    }
    let mut best_index = 0;
    for (i, r) in per_config.iter().enumerate() {
        if r.mean_rmse < per_config[best_index].mean_rmse {
            best_index = i;
        }
    }
    let mut table_csv = String::from("config_id,fold,rmse,mean_rmse\n");
    for (i, r) in per_config.iter().enumerate() {
        for (f, v) in r.fold_rmse.iter().enumerate() {
            table_csv.push_str(&format!("{i},{f},{v},{}\n", r.mean_rmse));
        }
    }
    Ok(GridSearchResult {
        best_index,
        best_config: grid[best_index].clone(),
        per_config,
        table_csv,
    })
}

/// Refit the chosen config on every row with the master seed.
pub fn final_fit(
    cfg: &SurvModelConfig,
    x: &FeatureMatrix,
    y: &[f64],
    seed: u64,
) -> Result<SurvModel> {
    cfg.with_seed(seed).fit(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    fn matrix(rows: Vec<Vec<Option<f64>>>) -> FeatureMatrix {
        let cols = (0..rows[0].len()).map(|i| format!("f{i}")).collect();
        FeatureMatrix::from_rows(cols, rows).unwrap()
    }

    fn toy(n: usize) -> (FeatureMatrix, Vec<f64>) {
        let y: Vec<f64> = (0..n).map(|i| ((i * 7) % 13) as f64).collect();
        let rows = (0..n)
            .map(|i| vec![Some(i as f64), Some(y[i])])
            .collect();
        (matrix(rows), y)
    }

    #[test]
    fn kfold_sizes_partition_and_determinism() {
        let folds = kfold_indices(23, 10, 5).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        let mut seen: Vec<usize> = folds.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        assert_eq!(folds, kfold_indices(23, 10, 5).unwrap());
        assert_ne!(folds, kfold_indices(23, 10, 6).unwrap());

        let singletons = kfold_indices(10, 10, 0).unwrap();
        assert!(singletons.iter().all(|f| f.len() == 1));
        assert!(kfold_indices(9, 10, 0).is_err());
        assert!(kfold_indices(5, 0, 0).is_err());
    }

    #[test]
    fn oracle_identity_model_scores_zero() {
        let (x, y) = toy(20);
        let cv = cross_validate(&SurvModelConfig::IdentityColumn(1), &x, &y, 5, 3).unwrap();
        assert_eq!(cv.mean_rmse, 0.0);
        assert!(cv.fold_rmse.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn constant_mean_model_hand_case() {
        let x = matrix(vec![
            vec![Some(1.0)],
            vec![Some(2.0)],
            vec![Some(3.0)],
            vec![Some(4.0)],
        ]);
        let y = [0.0, 0.0, 10.0, 10.0];
        let folds = vec![vec![0, 1], vec![2, 3]];
        let cv = cross_validate_with(&folds, &x, &y, |x_train, y_train, _, x_val| {
            SurvModelConfig::Mean.fit(x_train, y_train)?.predict(x_val)
        })
        .unwrap();
        assert_eq!(cv.fold_rmse, vec![10.0, 10.0]);
        assert_eq!(cv.mean_rmse, 10.0);
    }

    #[test]
    fn validation_rows_never_reach_the_fit() {
        let (x, y) = toy(17);
        let folds = kfold_indices(17, 4, 9).unwrap();
        let seen: RefCell<Vec<Vec<usize>>> = RefCell::new(Vec::new());
        cross_validate_with(&folds, &x, &y, |x_train, y_train, _, x_val| {
            // record which original rows are visible at fit time (column 0
            // carries the row index by construction)
            let ids: Vec<usize> = (0..x_train.n_rows)
                .map(|r| x_train.cell(r, 0).unwrap() as usize)
                .collect();
            seen.borrow_mut().push(ids);
            SurvModelConfig::Mean.fit(x_train, y_train)?.predict(x_val)
        })
        .unwrap();
        let seen = seen.into_inner();
        assert_eq!(seen.len(), folds.len());
        for (fold, train_ids) in folds.iter().zip(&seen) {
            assert_eq!(train_ids.len(), 17 - fold.len());
            for v in fold {
                assert!(!train_ids.contains(v), "validation row {v} leaked into the fit");
            }
        }
    }

    #[test]
    fn cv_is_seed_deterministic() {
        let (x, y) = toy(15);
        let cfg = SurvModelConfig::RandomForest(RfConfig {
            n_trees: 8,
            ..RfConfig::default()
        });
        let a = cross_validate(&cfg, &x, &y, 3, 7).unwrap();
        let b = cross_validate(&cfg, &x, &y, 3, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_search_prefers_the_oracle_and_breaks_ties_first() {
        let (x, y) = toy(12);
        let grid = vec![
            SurvModelConfig::Mean,
            SurvModelConfig::IdentityColumn(1),
            SurvModelConfig::Mean,
        ];
        let res = grid_search(&grid, &x, &y, 3, 1).unwrap();
        assert_eq!(res.best_index, 1);
        assert_eq!(res.best_config, SurvModelConfig::IdentityColumn(1));

        let tie = grid_search(&[SurvModelConfig::Mean, SurvModelConfig::Mean], &x, &y, 3, 1)
            .unwrap();
        assert_eq!(tie.best_index, 0);

        assert!(grid_search(&[], &x, &y, 3, 1).is_err());
    }

    #[test]
    fn cv_table_layout() {
        let (x, y) = toy(6);
        let grid = vec![SurvModelConfig::IdentityColumn(1), SurvModelConfig::Mean];
        let res = grid_search(&grid, &x, &y, 2, 0).unwrap();
        let lines: Vec<&str> = res.table_csv.trim_end().lines().collect();
        assert_eq!(lines[0], "config_id,fold,rmse,mean_rmse");
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert_eq!(lines[1], "0,0,0,0"); // oracle: rmse 0 on every fold
        assert!(lines[3].starts_with("1,0,"));
    }

    #[test]
    fn final_fit_matches_a_direct_fit() {
        let (x, y) = toy(10);
        let cfg = SurvModelConfig::GradientBoost(GbtConfig {
            n_estimators: 5,
            ..GbtConfig::default()
        });
        let a = final_fit(&cfg, &x, &y, 123).unwrap();
        let b = cfg.with_seed(123).fit(&x, &y).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(a.predict(&x).unwrap().iter().all(|p| p.is_finite()));

        let empty = FeatureMatrix::from_rows(vec!["f0".into()], vec![]).unwrap();
        assert!(final_fit(&cfg, &empty, &[], 0).is_err());
    }

    #[test]
    fn surv_model_json_round_trip() {
        let (x, y) = toy(8);
        for cfg in [
            SurvModelConfig::Mean,
            SurvModelConfig::IdentityColumn(0),
            SurvModelConfig::RandomForest(RfConfig {
                n_trees: 3,
                ..RfConfig::default()
            }),
            SurvModelConfig::GradientBoost(GbtConfig {
                n_estimators: 3,
                ..GbtConfig::default()
            }),
        ] {
            let model = cfg.fit(&x, &y).unwrap();
            let back = SurvModel::from_json(&model.to_json().unwrap()).unwrap();
            assert_eq!(back, model);
            assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
        }
        assert!(SurvModel::from_json("{\"schema_version\":9,\"model\":\"Mean\"}").is_err());
    }
}
