//! End-to-end glue: raw volumes to training sets, predictions, and scores.
//!
//! Everything here composes primitives from `resample`, `preprocess`, `seg`,
//! and `postprocess` so the CLI and integration tests share one code path.

use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{aggregated_dice, SegScore};
use crate::phantom::PhantomPatient;
use crate::postprocess::reconstruct_prediction;
use crate::preprocess::{
    extract_slices, normalize_255, rebalance, split_patients, validation_filter, SliceSample,
    SplitConfig,
};
use crate::resample::{resample, ResampleSpec};
use crate::seg::model::{predict_slice, SegModelParams, SliceProbs};
use crate::seg::SegArch;
use crate::volume::{Volume, VolumeGeometry, VolumeKind};

/// One patient's worth of input volumes for the segmentation pipeline.
#[derive(Debug, Clone)]
pub struct SegCase {
    pub patient_id: String,
    pub ct: Volume,
    pub pet: Option<Volume>,
    pub mask: Volume,
}

impl From<&PhantomPatient> for SegCase {
    fn from(p: &PhantomPatient) -> Self {
        SegCase {
            patient_id: p.record.patient_id.clone(),
            ct: p.ct.clone(),
            pet: Some(p.pet.clone()),
            mask: p.mask.clone(),
        }
    }
}

/// A case after resampling, intensity normalization, and slicing.
#[derive(Debug, Clone)]
pub struct PreparedCase {
    pub patient_id: String,
    pub slices: Vec<SliceSample>,
    pub resampled: VolumeGeometry,
    pub original: VolumeGeometry,
}

/// Resample a case onto the working grid, normalize intensities to 0..255,
/// and cut it into per-slice training samples.
pub fn prepare_case(case: &SegCase, arch: SegArch, spec: &ResampleSpec) -> Result<PreparedCase> {
    let ct_r = normalize_255(&resample(&case.ct, spec)?);
    let pet_r = match &case.pet {
        Some(p) => Some(normalize_255(&resample(p, spec)?)),
        None => None,
    };
    let mask_r = resample(&case.mask, spec)?;
    let slices = extract_slices(&case.patient_id, &ct_r, pet_r.as_ref(), &mask_r, arch)?;
    Ok(PreparedCase {
        patient_id: case.patient_id.clone(),
        slices,
        resampled: ct_r.geometry,
        original: case.ct.geometry,
    })
}

/// Patient-level split plus the slice pools derived from it.
///
/// Training slices are class-rebalanced; validation keeps only slices that
/// contain tumor so the epoch metric tracks foreground quality.
#[derive(Debug, Clone)]
pub struct SegDatasets {
    pub train_patients: Vec<String>,
    pub val_patients: Vec<String>,
    pub train_slices: Vec<SliceSample>,
    pub val_slices: Vec<SliceSample>,
}

/// Build train/validation slice pools from a cohort of cases.
pub fn prepare_seg_datasets(
    cases: &[SegCase],
    arch: SegArch,
    spec: &ResampleSpec,
    split: &SplitConfig,
) -> Result<SegDatasets> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("empty cohort".into()));
    }
    let ids: Vec<String> = cases.iter().map(|c| c.patient_id.clone()).collect();
    {
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(Error::InvalidArgument("duplicate patient ids".into()));
        }
    }
    let (train_ids, val_ids) = split_patients(&ids, split)?;
    let prepared = exec::try_map_indices(cases.len(), |i| prepare_case(&cases[i], arch, spec))?;
    let mut train_slices = Vec::new();
    let mut val_slices = Vec::new();
    for p in prepared {
        if train_ids.binary_search(&p.patient_id).is_ok() {
            train_slices.extend(p.slices);
        } else {
            val_slices.extend(p.slices);
        }
    }
    let train_slices = rebalance(train_slices, split.seed);
    let val_slices = validation_filter(val_slices);
    Ok(SegDatasets {
        train_patients: train_ids,
        val_patients: val_ids,
        train_slices,
        val_slices,
    })
}

/// Run the model over every slice of a volume and stitch the per-slice
/// probabilities back into a label mask on the original grid.
pub fn predict_volume(
    params: &SegModelParams,
    ct: &Volume,
    pet: Option<&Volume>,
    spec: &ResampleSpec,
) -> Result<Volume> {
    let original = ct.geometry;
    let ct_r = normalize_255(&resample(ct, spec)?);
    let pet_r = match pet {
        Some(p) => Some(normalize_255(&resample(p, spec)?)),
        None => None,
    };
    let resampled = ct_r.geometry;
    // Slicing needs a mask volume for labels; predictions never read them,
    // so an all-background stand-in keeps ground truth out of this path.
    let blank = Volume::new(
        resampled,
        VolumeKind::Label,
        vec![0.0; resampled.n_voxels()],
    )?;
    let slices = extract_slices("query", &ct_r, pet_r.as_ref(), &blank, params.arch)?;
    let probs: Vec<SliceProbs> = exec::try_map_indices(slices.len(), |i| {
        predict_slice(params, &slices[i].channels).map(|(p, _)| p)
    })?;
    reconstruct_prediction(&probs, &resampled, &original)
}

/// Predict the subset of `cases` named by `ids` and score the predictions
/// against their ground-truth masks.
pub fn evaluate_cases(
    params: &SegModelParams,
    cases: &[SegCase],
    ids: &[String],
    spec: &ResampleSpec,
) -> Result<SegScore> {
    let selected: Vec<&SegCase> = ids
        .iter()
        .map(|id| {
            cases
                .iter()
                .find(|c| &c.patient_id == id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown patient id {id}")))
        })
        .collect::<Result<_>>()?;
    let preds = exec::try_map_indices(selected.len(), |i| {
        predict_volume(params, &selected[i].ct, selected[i].pet.as_ref(), spec)
    })?;
    let pairs: Vec<(&Volume, &Volume)> = preds
        .iter()
        .zip(&selected)
        .map(|(p, c)| (p, &c.mask))
        .collect();
    aggregated_dice(&pairs)
}
