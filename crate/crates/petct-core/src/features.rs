//! survival feature engineering
//!
//! Three feature sets over the clinical table:
//! - approach 1: clinical covariates only
//! - approach 2: adds image features (per-class voxel counts of the
//!   predicted mask and the z extent of the original CT)
//! - approach 3: approach 2 without Alcohol, plus estimated GFR
//!   (Cockcroft-Gault) computed from age, weight, gender and an average
//!   serum creatinine per sex

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{FeatureMatrix, Gender, PatientRecord};
use crate::volume::{Volume, VolumeKind, N_LABEL_CLASSES};

/// Per-patient image-derived features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageFeatures {
    pub count0: u64,
    pub count1: u64,
    pub count2: u64,
    /// slice count of the patient's ORIGINAL (pre-resample) CT
    pub dim_z: usize,
}

impl ImageFeatures {
    pub fn from_volumes(mask: &Volume, original_ct: &Volume) -> Result<ImageFeatures> {
        let counts = mask_pixel_counts(mask)?;
        Ok(ImageFeatures {
            count0: counts[0],
            count1: counts[1],
            count2: counts[2],
            dim_z: z_dim(original_ct),
        })
    }
}

/// Exact per-class voxel counts of a label volume.
pub fn mask_pixel_counts(mask: &Volume) -> Result<[u64; 3]> {
    mask.require_kind(VolumeKind::Label, "mask")?;
    let mut counts = [0u64; N_LABEL_CLASSES];
    for &v in &mask.voxels {
        counts[v as usize] += 1;
    }
    Ok(counts)
}

/// Slice count along z. The caller must pass the original-geometry CT; a
/// resampled copy reports its own (different) nz.
pub fn z_dim(v: &Volume) -> usize {
    v.geometry.nz
}

/// Average serum creatinine (mg/dL) used when a per-patient value is absent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KidneyParams {
    pub scr_male: f64,
    pub scr_female: f64,
}

impl Default for KidneyParams {
    fn default() -> Self {
        KidneyParams {
            scr_male: 0.9,
            scr_female: 0.7,
        }
    }
}

impl KidneyParams {
    pub fn validate(&self) -> Result<()> {
        if self.scr_male > 0.0 && self.scr_female > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "serum creatinine averages must be positive".into(),
            ))
        }
    }
}

/// Cockcroft-Gault estimated glomerular filtration rate (mL/min):
/// `(140 - age) * weight / (72 * scr)`, times 0.85 for women.
pub fn egfr_cockcroft_gault(
    age: f64,
    weight: f64,
    gender: Gender,
    kp: &KidneyParams,
) -> Result<f64> {
    kp.validate()?;
    if age >= 140.0 {
        return Err(Error::InvalidArgument(format!(
            "age {age} makes the Cockcroft-Gault estimate nonpositive"
        )));
    }
    if weight <= 0.0 {
        return Err(Error::InvalidArgument(format!("weight {weight} kg")));
    }
    let scr = match gender {
        Gender::Male => kp.scr_male,
        Gender::Female => kp.scr_female,
    };
    let base = (140.0 - age) * weight / (72.0 * scr);
    Ok(match gender {
        Gender::Male => base,
        Gender::Female => base * 0.85,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Approach {
    ClinicalOnly,
    WithImage,
    WithImageEgfr,
}

impl Approach {
    pub fn label(self) -> &'static str {
        match self {
            Approach::ClinicalOnly => "approach1",
            Approach::WithImage => "approach2",
            Approach::WithImageEgfr => "approach3",
        }
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "approach1" => Ok(Approach::ClinicalOnly),
            "2" | "approach2" => Ok(Approach::WithImage),
            "3" | "approach3" => Ok(Approach::WithImageEgfr),
            other => Err(Error::InvalidArgument(format!(
                "unknown approach '{other}' (expected 1, 2 or 3)"
            ))),
        }
    }
}

const CLINICAL_COLUMNS: [&str; 10] = [
    "CenterID",
    "Gender",
    "Age",
    "Weight",
    "Tobacco",
    "Alcohol",
    "Performance_status",
    "HPV_status",
    "Surgery",
    "Chemotherapy",
];

/// Column names of one approach's feature matrix.
pub fn approach_columns(approach: Approach) -> Vec<String> {
    let mut cols: Vec<String> = CLINICAL_COLUMNS.iter().map(|s| s.to_string()).collect();
    match approach {
        Approach::ClinicalOnly => {}
        Approach::WithImage => {
            cols.extend(["Count0", "Count1", "Count2", "dim_z"].map(String::from));
        }
        Approach::WithImageEgfr => {
            cols.retain(|c| c != "Alcohol");
            cols.extend(["Count0", "Count1", "Count2", "dim_z", "eGFR"].map(String::from));
        }
    }
    cols
}

/// Assemble the feature matrix for one approach. Image features are required
/// (one per record, same order) for approaches 2 and 3. RFS becomes the
/// regression target when every record carries it; the Relapse indicator
/// rides along the same way. Missing clinical flags stay missing.
pub fn build_feature_matrix(
    records: &[PatientRecord],
    image: Option<&[ImageFeatures]>,
    approach: Approach,
    kp: &KidneyParams,
) -> Result<FeatureMatrix> {
    if approach != Approach::ClinicalOnly {
        let img = image.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{} requires image features",
                approach.label()
            ))
        })?;
        if img.len() != records.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} image feature rows for {} patients",
                img.len(),
                records.len()
            )));
        }
    }
    let columns = approach_columns(approach);
    let mut rows = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let mut row: Vec<Option<f64>> = vec![
            Some(r.center_id),
            Some(r.gender.encoded()),
            Some(r.age),
            Some(r.weight),
            r.tobacco,
            r.alcohol,
            r.performance_status,
            r.hpv_status,
            r.surgery,
            Some(r.chemotherapy),
        ];
        match approach {
            Approach::ClinicalOnly => {}
            Approach::WithImage | Approach::WithImageEgfr => {
                let f = &image.unwrap()[i];
                if approach == Approach::WithImageEgfr {
                    row.remove(5); // Alcohol
                }
                row.push(Some(f.count0 as f64));
                row.push(Some(f.count1 as f64));
                row.push(Some(f.count2 as f64));
                row.push(Some(f.dim_z as f64));
                if approach == Approach::WithImageEgfr {
                    row.push(Some(egfr_cockcroft_gault(r.age, r.weight, r.gender, kp)?));
                }
            }
        }
        rows.push(row);
    }
    let mut m = FeatureMatrix::from_rows(columns, rows)?;
    m.row_ids = Some(records.iter().map(|r| r.patient_id.clone()).collect());

    let with_rfs = records.iter().filter(|r| r.rfs.is_some()).count();
    if with_rfs == records.len() && !records.is_empty() {
        m.target = Some(records.iter().map(|r| r.rfs.unwrap()).collect());
    } else if with_rfs > 0 {
        return Err(Error::Tabular(format!(
            "RFS present on {with_rfs} of {} rows; must be all or none",
            records.len()
        )));
    }
    let with_event = records.iter().filter(|r| r.relapse.is_some()).count();
    if with_event == records.len() && !records.is_empty() {
        m.events = Some(records.iter().map(|r| r.relapse.unwrap() == 1.0).collect());
    }
    m.validate()?;
    Ok(m)
}
