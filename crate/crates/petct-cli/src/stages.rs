//! Implementations of the pipeline subcommands. Each stage reads and writes
//! only through a [`Tracker`] so its manifest reflects exactly what happened.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use petct_core::explain::{correlation_report, shap_summary};
use petct_core::features::{build_feature_matrix, Approach, ImageFeatures};
use petct_core::metrics::{c_index, rmse};
use petct_core::model_select::{cross_validate, final_fit, SurvModel, SurvModelConfig};
use petct_core::nifti::{read_nifti_bytes, write_nifti_bytes};
use petct_core::phantom::generate_cohort;
use petct_core::pipeline::{predict_volume, prepare_seg_datasets, SegCase};
use petct_core::seg::train::{metric_log_csv, train, Checkpoint};
use petct_core::seg::SegArch;
use petct_core::tabular::{read_patient_csv, FeatureMatrix, PatientRecord};
use petct_core::volume::Volume;

use crate::config::Config;
use crate::manifest::Tracker;
use crate::CliError;

pub struct Env<'a> {
    pub config: &'a Config,
    pub seed: u64,
}

const ALL_ARCHES: [SegArch; 3] = [SegArch::CtOnly, SegArch::EarlyFusion, SegArch::LateFusion];
const ALL_APPROACHES: [Approach; 3] = [
    Approach::ClinicalOnly,
    Approach::WithImage,
    Approach::WithImageEgfr,
];

fn phantom_dir(t: &Tracker) -> PathBuf {
    t.root().join("phantom")
}

fn volume_path(t: &Tracker, sub: &str, id: &str, what: &str) -> PathBuf {
    t.root().join(sub).join(format!("{id}_{what}.nii"))
}

fn read_volume(t: &mut Tracker, sub: &str, id: &str, what: &str) -> Result<Volume, CliError> {
    let path = volume_path(t, sub, id, what);
    let bytes = t.read(&path)?;
    read_nifti_bytes(&bytes)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_volume(
    t: &mut Tracker,
    sub: &str,
    id: &str,
    what: &str,
    v: &Volume,
) -> Result<(), CliError> {
    let path = volume_path(t, sub, id, what);
    let bytes = write_nifti_bytes(v)?;
    t.write(&path, &bytes)
}

fn read_clinical(t: &mut Tracker) -> Result<Vec<PatientRecord>, CliError> {
    let path = phantom_dir(t).join("clinical.csv");
    let bytes = t.read(&path)?;
    Ok(read_patient_csv(&bytes)?)
}

fn read_features(t: &mut Tracker, approach: Approach) -> Result<FeatureMatrix, CliError> {
    let path = t
        .root()
        .join("features")
        .join(format!("{}.csv", approach.label()));
    let bytes = t.read(&path)?;
    Ok(FeatureMatrix::read_csv(&bytes)?)
}

fn surv_config(cfg: &Config, seed: u64) -> Result<SurvModelConfig, CliError> {
    Ok(match cfg.surv.model.as_str() {
        "gbt" => SurvModelConfig::GradientBoost(cfg.surv.gbt.to_core(seed)),
        "rf" => SurvModelConfig::RandomForest(cfg.surv.rf.to_core(seed)?),
        other => {
            return Err(CliError::Config(format!(
                "surv.model must be \"gbt\" or \"rf\", got {other:?}"
            )))
        }
    })
}

/// Generate the synthetic cohort: one CT/PET/mask triple per patient plus the
/// clinical table.
pub fn phantom(env: &Env, t: &mut Tracker) -> Result<(), CliError> {
    let cfg = env.config.phantom.to_core(env.seed);
    let (patients, csv) = generate_cohort(&cfg)?;
    eprintln!("[phantom] generated {} patients", patients.len());
    t.write(&phantom_dir(t).join("clinical.csv"), csv.as_bytes())?;
    for p in &patients {
        let id = &p.record.patient_id;
        write_volume(t, "phantom", id, "ct", &p.ct)?;
        write_volume(t, "phantom", id, "pet", &p.pet)?;
        write_volume(t, "phantom", id, "mask", &p.mask)?;
    }
    Ok(())
}

/// Resample every phantom volume onto the configured grid spacing.
pub fn resample_stage(env: &Env, t: &mut Tracker) -> Result<(), CliError> {
    let spec = env.config.resample.to_core();
    let records = read_clinical(t)?;
    for r in &records {
        let id = &r.patient_id;
        for what in ["ct", "pet", "mask"] {
            let v = read_volume(t, "phantom", id, what)?;
            let out = petct_core::resample::resample(&v, &spec)?;
            write_volume(t, "resampled", id, what, &out)?;
        }
    }
    eprintln!(
        "[resample] {} patients onto {:?} mm",
        records.len(),
        spec.spacing
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    schema_version: u32,
    train: Vec<String>,
    val: Vec<String>,
}

fn load_cases(t: &mut Tracker, arch: Option<SegArch>) -> Result<Vec<SegCase>, CliError> {
    let records = read_clinical(t)?;
    let needs_pet = arch.map_or(true, |a| a.needs_pet());
    records
        .iter()
        .map(|r| {
            let id = &r.patient_id;
            Ok(SegCase {
                patient_id: id.clone(),
                ct: read_volume(t, "phantom", id, "ct")?,
                pet: if needs_pet {
                    Some(read_volume(t, "phantom", id, "pet")?)
                } else {
                    None
                },
                mask: read_volume(t, "phantom", id, "mask")?,
            })
        })
        .collect()
}

/// Train one segmentation architecture and save its best checkpoint, the
/// per-epoch metric log, and the patient split.
pub fn train_seg(env: &Env, t: &mut Tracker, arch: SegArch) -> Result<(), CliError> {
    let cases = load_cases(t, Some(arch))?;
    let spec = env.config.resample.to_core();
    let split = env.config.split.to_core(env.seed);
    let ds = prepare_seg_datasets(&cases, arch, &spec, &split)?;
    eprintln!(
        "[train-seg] {}: {} train slices from {:?}, {} val slices from {:?}",
        arch.label(),
        ds.train_slices.len(),
        ds.train_patients,
        ds.val_slices.len(),
        ds.val_patients
    );
    let split_json = serde_json::to_string_pretty(&SplitFile {
        schema_version: 1,
        train: ds.train_patients.clone(),
        val: ds.val_patients.clone(),
    })
    .expect("split serialization");
    t.write(
        &t.root().join("models").join("split.json"),
        split_json.as_bytes(),
    )?;

    let train_cfg = env.config.train.to_core(env.seed);
    let out = train(arch, &ds.train_slices, &ds.val_slices, &train_cfg)?;
    eprintln!(
        "[train-seg] {}: best epoch {} with val IoU {:.4}",
        arch.label(),
        out.checkpoint.epoch,
        out.checkpoint.val_iou
    );
    let models = t.root().join("models");
    t.write(
        &models.join(format!("{}.checkpoint.json", arch.label())),
        out.checkpoint.to_json().as_bytes(),
    )?;
    t.write(
        &models.join(format!("{}.train_log.csv", arch.label())),
        metric_log_csv(&out.log).as_bytes(),
    )?;
    Ok(())
}

/// Predict masks for every patient with a trained checkpoint.
pub fn predict_seg(env: &Env, t: &mut Tracker, arch: SegArch) -> Result<(), CliError> {
    let ckpt_path = t
        .root()
        .join("models")
        .join(format!("{}.checkpoint.json", arch.label()));
    let ckpt = Checkpoint::from_json(&String::from_utf8_lossy(&t.read(&ckpt_path)?))?;
    if ckpt.params.arch != arch {
        return Err(CliError::Runtime(format!(
            "checkpoint {} holds {} parameters",
            ckpt_path.display(),
            ckpt.params.arch.label()
        )));
    }
    let spec = env.config.resample.to_core();
    let records = read_clinical(t)?;
    let sub = format!("predictions/{}", arch.label());
    for r in &records {
        let id = &r.patient_id;
        let ct = read_volume(t, "phantom", id, "ct")?;
        let pet = if arch.needs_pet() {
            Some(read_volume(t, "phantom", id, "pet")?)
        } else {
            None
        };
        let pred = predict_volume(&ckpt.params, &ct, pet.as_ref(), &spec)?;
        write_volume(t, &sub, id, "pred", &pred)?;
    }
    eprintln!("[predict-seg] {}: {} masks", arch.label(), records.len());
    Ok(())
}

/// Score each trained architecture on the held-out patients.
pub fn eval_seg(_env: &Env, t: &mut Tracker) -> Result<(), CliError> {
    let split_path = t.root().join("models").join("split.json");
    let split: SplitFile = serde_json::from_str(&String::from_utf8_lossy(&t.read(&split_path)?))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", split_path.display())))?;
    let mut csv = String::from("arch,n_patients,agg_dice_gtvp,agg_dice_gtvn,mean_agg_dice\n");
    let mut any = false;
    for arch in ALL_ARCHES {
        let sub = format!("predictions/{}", arch.label());
        if !volume_path(t, &sub, &split.val[0], "pred").exists() {
            continue;
        }
        any = true;
        let mut pairs = Vec::new();
        for id in &split.val {
            let pred = read_volume(t, &sub, id, "pred")?;
            let gt = read_volume(t, "phantom", id, "mask")?;
            pairs.push((pred, gt));
        }
        let borrowed: Vec<(&Volume, &Volume)> = pairs.iter().map(|(p, g)| (p, g)).collect();
        let score = petct_core::metrics::aggregated_dice(&borrowed)?;
        eprintln!(
            "[eval-seg] {}: mean aggregated dice {:.4} over {} held-out patients",
            arch.label(),
            score.mean_agg_dice,
            split.val.len()
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            arch.label(),
            split.val.len(),
            score.agg_dice[0],
            score.agg_dice[1],
            score.mean_agg_dice
        );
    }
    if !any {
        return Err(CliError::Runtime(
            "no predictions found; run predict-seg first".into(),
        ));
    }
    t.write(&t.root().join("reports").join("seg_report.csv"), csv.as_bytes())
}

fn image_features_for(
    env: &Env,
    t: &mut Tracker,
    records: &[PatientRecord],
) -> Result<Vec<ImageFeatures>, CliError> {
    let source = env.config.features.masks.as_str();
    let mask_sub = match source {
        "gt" => "phantom".to_string(),
        arch => format!("predictions/{arch}"),
    };
    let mask_kind = if source == "gt" { "mask" } else { "pred" };
    records
        .iter()
        .map(|r| {
            let id = &r.patient_id;
            let mask = read_volume(t, &mask_sub, id, mask_kind)?;
            let ct = read_volume(t, "phantom", id, "ct")?;
            Ok(ImageFeatures::from_volumes(&mask, &ct)?)
        })
        .collect()
}

/// Assemble the per-approach survival feature tables.
pub fn features(env: &Env, t: &mut Tracker, approach: Option<Approach>) -> Result<(), CliError> {
    let records = read_clinical(t)?;
    let image = image_features_for(env, t, &records)?;
    let kidney = env.config.kidney.to_core();
    let selection: Vec<Approach> = approach.map_or_else(|| ALL_APPROACHES.to_vec(), |a| vec![a]);
    for ap in selection {
        let m = build_feature_matrix(&records, Some(&image), ap, &kidney)?;
        let path = t
            .root()
            .join("features")
            .join(format!("{}.csv", ap.label()));
        t.write(&path, &m.write_csv()?)?;
        eprintln!(
            "[features] {}: {} rows x {} columns (masks: {})",
            ap.label(),
            m.n_rows,
            m.columns.len(),
            env.config.features.masks
        );
    }
    Ok(())
}

/// Cross-validate the configured survival model per approach.
pub fn cv(env: &Env, t: &mut Tracker, approach: Option<Approach>) -> Result<(), CliError> {
    let model_cfg = surv_config(env.config, env.seed)?;
    let selection: Vec<Approach> = approach.map_or_else(|| ALL_APPROACHES.to_vec(), |a| vec![a]);
    let mut csv = String::from("approach,fold,rmse,mean_rmse\n");
    for ap in selection {
        let m = read_features(t, ap)?;
        let y = m
            .target
            .clone()
            .ok_or_else(|| CliError::Runtime(format!("{} has no RFS column", ap.label())))?;
        let res = cross_validate(&model_cfg, &m, &y, env.config.cv.folds, env.seed)?;
        eprintln!(
            "[cv] {}: mean RMSE {:.3} over {} folds",
            ap.label(),
            res.mean_rmse,
            res.fold_rmse.len()
        );
        for (fold, v) in res.fold_rmse.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},{}", ap.label(), fold, v, res.mean_rmse);
        }
    }
    t.write(&t.root().join("reports").join("cv_table.csv"), csv.as_bytes())
}

/// Fit the survival model on the full table for one approach.
pub fn train_surv(env: &Env, t: &mut Tracker, approach: Approach) -> Result<(), CliError> {
    let model_cfg = surv_config(env.config, env.seed)?;
    let m = read_features(t, approach)?;
    let y = m
        .target
        .clone()
        .ok_or_else(|| CliError::Runtime(format!("{} has no RFS column", approach.label())))?;
    let model = final_fit(&model_cfg, &m, &y, env.seed)?;
    let path = t
        .root()
        .join("models")
        .join(format!("surv_{}.json", approach.label()));
    t.write(&path, model.to_json()?.as_bytes())?;
    eprintln!("[train-surv] {}: saved {}", approach.label(), path.display());
    Ok(())
}

fn read_surv_model(t: &mut Tracker, approach: Approach) -> Result<SurvModel, CliError> {
    let path = t
        .root()
        .join("models")
        .join(format!("surv_{}.json", approach.label()));
    let bytes = t.read(&path)?;
    Ok(SurvModel::from_json(&String::from_utf8_lossy(&bytes))?)
}

/// Predict RFS for every row of the feature table.
pub fn predict_surv(env: &Env, t: &mut Tracker, approach: Approach) -> Result<(), CliError> {
    let _ = env;
    let model = read_surv_model(t, approach)?;
    let m = read_features(t, approach)?;
    let pred = model.predict(&m)?;
    let ids = m
        .row_ids
        .clone()
        .unwrap_or_else(|| (0..m.n_rows).map(|i| i.to_string()).collect());
    let mut csv = String::from("patient_id,predicted_rfs\n");
    for (id, p) in ids.iter().zip(&pred) {
        let _ = writeln!(csv, "{id},{p}");
    }
    let path = t
        .root()
        .join("predictions")
        .join(format!("surv_{}.csv", approach.label()));
    t.write(&path, csv.as_bytes())?;
    eprintln!("[predict-surv] {}: {} rows", approach.label(), pred.len());
    Ok(())
}

/// SHAP feature attribution summary plus the feature/target correlation table.
pub fn explain(env: &Env, t: &mut Tracker, approach: Approach) -> Result<(), CliError> {
    let _ = env;
    let model = read_surv_model(t, approach)?;
    let m = read_features(t, approach)?;
    let summary = shap_summary(&model, &m)?;
    let reports = t.root().join("reports");
    t.write(
        &reports.join(format!("shap_{}.csv", approach.label())),
        summary.csv.as_bytes(),
    )?;
    let corr = correlation_report(&m)?;
    t.write(
        &reports.join(format!("correlation_{}.csv", approach.label())),
        corr.csv.as_bytes(),
    )?;
    if let Some(top) = summary.rows.first() {
        eprintln!(
            "[explain] {}: top feature {} (mean |phi| {:.3})",
            approach.label(),
            top.feature,
            top.mean_abs_shap
        );
    }
    Ok(())
}

/// Whole-cohort RMSE and C-index per approach with saved predictions.
pub fn eval_surv(env: &Env, t: &mut Tracker) -> Result<(), CliError> {
    let _ = env;
    let mut csv = String::from("approach,n,rmse,c_index\n");
    let mut any = false;
    for ap in ALL_APPROACHES {
        let pred_path = t
            .root()
            .join("predictions")
            .join(format!("surv_{}.csv", ap.label()));
        if !pred_path.exists() {
            continue;
        }
        any = true;
        let pred = read_prediction_csv(t, &pred_path)?;
        let m = read_features(t, ap)?;
        let y = m
            .target
            .clone()
            .ok_or_else(|| CliError::Runtime(format!("{} has no RFS column", ap.label())))?;
        if pred.len() != y.len() {
            return Err(CliError::Runtime(format!(
                "{}: {} predictions vs {} rows",
                ap.label(),
                pred.len(),
                y.len()
            )));
        }
        let e = rmse(&pred, &y)?;
        // predicted RFS is survival-ordered: larger prediction should pair
        // with later recurrence, which is what c_index scores directly
        let events = m.events.clone();
        let ci = c_index(&pred, &y, events.as_deref())?;
        eprintln!(
            "[eval-surv] {}: RMSE {:.3}, C-index {:.4} over {} patients",
            ap.label(),
            e,
            ci,
            y.len()
        );
        let _ = writeln!(csv, "{},{},{},{}", ap.label(), y.len(), e, ci);
    }
    if !any {
        return Err(CliError::Runtime(
            "no survival predictions found; run predict-surv first".into(),
        ));
    }
    t.write(&t.root().join("reports").join("surv_report.csv"), csv.as_bytes())
}

fn read_prediction_csv(t: &mut Tracker, path: &std::path::Path) -> Result<Vec<f64>, CliError> {
    let bytes = t.read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let field = line
            .rsplit(',')
            .next()
            .ok_or_else(|| CliError::Runtime(format!("{}: bad row {i}", path.display())))?;
        out.push(field.parse::<f64>().map_err(|e| {
            CliError::Runtime(format!("{} row {i}: {e}", path.display()))
        })?);
    }
    Ok(out)
}
