//! deterministic synthetic CT/PET/mask/clinical cohort
//!
//! Each patient gets one ellipsoidal primary tumor (label 1) and one nodal
//! tumor (label 2) placed disjointly in physical space, imaged as:
//! - CT: soft-tissue baseline + `ct_tumor_contrast` inside either tumor
//! - PET: low background + `pet_tumor_contrast` inside the primary and half
//!   that uptake inside the nodal tumor (the two classes must differ on some
//!   modality for per-pixel models to separate them)
//! both with Gaussian voxel noise. Survival (RFS, days) follows a truncated
//! linear model of age, weight and total tumor volume with known
//! coefficients, so survival models have a learnable oracle signal.
//!
//! All randomness is derived from (master_seed, patient index) streams:
//! patients can be generated in parallel in any order and still match the
//! sequential output byte for byte.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::seeds::{self, STREAM_CLINICAL, STREAM_PHANTOM};
use crate::tabular::{write_patient_csv, Gender, PatientRecord};
use crate::volume::{Volume, VolumeGeometry, VolumeKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfsCoefficients {
    pub intercept: f64,
    pub age: f64,
    pub weight: f64,
    /// per mm^3 of total tumor volume
    pub tumor_volume: f64,
}

impl Default for RfsCoefficients {
    fn default() -> Self {
        RfsCoefficients {
            intercept: 1200.0,
            age: -4.0,
            weight: 2.0,
            tumor_volume: -0.04,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub n_patients: usize,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    /// per-axis radius range of the primary tumor, mm
    pub gtvp_radius_range: [f64; 2],
    /// per-axis radius range of the nodal tumor, mm
    pub gtvn_radius_range: [f64; 2],
    pub ct_tumor_contrast: f64,
    pub pet_tumor_contrast: f64,
    pub noise_sd: f64,
    pub rfs_coefficients: RfsCoefficients,
    pub rfs_noise_sd: f64,
    pub master_seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            n_patients: 12,
            dims: [64, 64, 32],
            spacing: [2.0, 2.0, 2.0],
            gtvp_radius_range: [8.0, 14.0],
            gtvn_radius_range: [6.0, 10.0],
            ct_tumor_contrast: 25.0,
            pet_tumor_contrast: 120.0,
            noise_sd: 10.0,
            rfs_coefficients: RfsCoefficients::default(),
            rfs_noise_sd: 60.0,
            master_seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        for r in [self.gtvp_radius_range, self.gtvn_radius_range] {
            if !(r[0] > 0.0 && r[1] >= r[0]) {
                return Err(Error::Phantom(format!("bad radius range {r:?}")));
            }
        }
        if self.dims.iter().any(|&d| d == 0) || self.spacing.iter().any(|&s| s <= 0.0) {
            return Err(Error::Phantom("degenerate grid".into()));
        }
        if self.ct_tumor_contrast < 0.0
            || self.pet_tumor_contrast < 0.0
            || self.noise_sd < 0.0
            || self.rfs_noise_sd < 0.0
        {
            return Err(Error::Phantom("negative contrast or noise".into()));
        }
        Ok(())
    }
}

pub const CT_BASELINE: f32 = 40.0;
pub const PET_BACKGROUND: f32 = 2.0;
/// PET uptake inside the nodal tumor, as a fraction of `pet_tumor_contrast`.
pub const PET_NODAL_FACTOR: f64 = 0.5;
const PLACEMENT_RETRIES: usize = 100;

#[derive(Clone, Debug)]
pub struct PhantomPatient {
    pub record: PatientRecord,
    pub ct: Volume,
    pub pet: Volume,
    pub mask: Volume,
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        let mut s = 0f64;
        for d in 0..3 {
            let t = (p[d] - self.center[d]) / self.radii[d];
            s += t * t;
        }
        s <= 1.0
    }

    fn max_radius(&self) -> f64 {
        self.radii[0].max(self.radii[1]).max(self.radii[2])
    }
}

fn draw_radii(rng: &mut impl Rng, range: [f64; 2]) -> [f64; 3] {
    [
        rng.gen_range(range[0]..=range[1]),
        rng.gen_range(range[0]..=range[1]),
        rng.gen_range(range[0]..=range[1]),
    ]
}

fn draw_center(
    rng: &mut impl Rng,
    field: [f64; 3],
    radii: [f64; 3],
    pad: [f64; 3],
) -> Result<[f64; 3]> {
    let mut c = [0f64; 3];
    for d in 0..3 {
        let lo = radii[d] + pad[d];
        let hi = field[d] - radii[d] - pad[d];
        if lo >= hi {
            return Err(Error::Phantom(format!(
                "tumor radius {:.1} mm cannot fit inside a {:.1} mm field",
                radii[d], field[d]
            )));
        }
        c[d] = rng.gen_range(lo..hi);
    }
    Ok(c)
}

fn disjoint(a: &Ellipsoid, b: &Ellipsoid) -> bool {
    let mut d2 = 0f64;
    for i in 0..3 {
        let t = a.center[i] - b.center[i];
        d2 += t * t;
    }
    // conservative: bounding spheres must not touch
    d2.sqrt() > a.max_radius() + b.max_radius()
}

/// Generate one patient (deterministic in `(cfg.master_seed, index)`).
pub fn generate_patient(cfg: &PhantomConfig, index: usize) -> Result<PhantomPatient> {
    cfg.validate()?;
    let geometry = VolumeGeometry::new(cfg.dims, cfg.spacing);
    let field = [
        cfg.dims[0] as f64 * cfg.spacing[0] as f64,
        cfg.dims[1] as f64 * cfg.spacing[1] as f64,
        cfg.dims[2] as f64 * cfg.spacing[2] as f64,
    ];
    let pad = [
        cfg.spacing[0] as f64,
        cfg.spacing[1] as f64,
        cfg.spacing[2] as f64,
    ];
    let mut rng = seeds::stream_rng(cfg.master_seed, STREAM_PHANTOM, index as u64);
    let radii_p = draw_radii(&mut rng, cfg.gtvp_radius_range);
    let radii_n = draw_radii(&mut rng, cfg.gtvn_radius_range);

    // bounded rejection sampling for disjoint placement
    let mut placed = None;
    for _ in 0..PLACEMENT_RETRIES {
        let gtvp = Ellipsoid {
            center: draw_center(&mut rng, field, radii_p, pad)?,
            radii: radii_p,
        };
        let gtvn = Ellipsoid {
            center: draw_center(&mut rng, field, radii_n, pad)?,
            radii: radii_n,
        };
        if disjoint(&gtvp, &gtvn) {
            placed = Some((gtvp, gtvn));
            break;
        }
    }
    let (gtvp, gtvn) = placed.ok_or_else(|| {
        Error::Phantom(format!(
            "could not place disjoint tumors within {PLACEMENT_RETRIES} attempts \
             (field {field:?}, radii {radii_p:?} / {radii_n:?})"
        ))
    })?;

    // rasterize: a voxel belongs to a tumor when its center lies inside
    let n = geometry.n_voxels();
    let mut mask = vec![0f32; n];
    let mut count = [0u64; 2];
    let mut i = 0;
    for z in 0..cfg.dims[2] {
        let pz = z as f64 * cfg.spacing[2] as f64;
        for y in 0..cfg.dims[1] {
            let py = y as f64 * cfg.spacing[1] as f64;
            for x in 0..cfg.dims[0] {
                let p = [x as f64 * cfg.spacing[0] as f64, py, pz];
                if gtvp.contains(p) {
                    mask[i] = 1.0;
                    count[0] += 1;
                } else if gtvn.contains(p) {
                    mask[i] = 2.0;
                    count[1] += 1;
                }
                i += 1;
            }
        }
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(Error::Phantom(
            "a tumor rasterized to zero voxels; enlarge radii or spacing".into(),
        ));
    }

    // imaging: CT then PET noise, fixed draw order
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Phantom(e.to_string()))?;
    let mut ct = Vec::with_capacity(n);
    for &m in &mask {
        let tumor = if m > 0.0 { cfg.ct_tumor_contrast } else { 0.0 };
        ct.push((CT_BASELINE as f64 + tumor + noise.sample(&mut rng)) as f32);
    }
    let mut pet = Vec::with_capacity(n);
    for &m in &mask {
        let uptake = match m as u8 {
            1 => cfg.pet_tumor_contrast,
            2 => cfg.pet_tumor_contrast * PET_NODAL_FACTOR,
            _ => 0.0,
        };
        pet.push((PET_BACKGROUND as f64 + uptake + noise.sample(&mut rng)) as f32);
    }

    // clinical covariates from an independent stream
    let mut crng = seeds::stream_rng(cfg.master_seed, STREAM_CLINICAL, index as u64);
    let gender = if crng.gen_bool(0.5) {
        Gender::Female
    } else {
        Gender::Male
    };
    let age = crng.gen_range(40.0..80.0f64).round();
    let weight = (crng.gen_range(50.0..110.0f64) * 10.0).round() / 10.0;
    let center_id = crng.gen_range(1..=3u32) as f64;
    let mut flag = |present_rate_miss: f64| -> Option<f64> {
        if crng.gen_bool(present_rate_miss) {
            None
        } else if crng.gen_bool(0.5) {
            Some(1.0)
        } else {
            Some(0.0)
        }
    };
    let tobacco = flag(0.15);
    let alcohol = flag(0.15);
    let performance_status = flag(0.15);
    let hpv_status = flag(0.15);
    let surgery = flag(0.15);
    let chemotherapy = if crng.gen_bool(0.5) { 1.0 } else { 0.0 };

    let voxel_volume = geometry.voxel_volume() as f64;
    let tumor_volume = (count[0] + count[1]) as f64 * voxel_volume;
    let k = &cfg.rfs_coefficients;
    let rfs_noise =
        Normal::new(0.0, cfg.rfs_noise_sd).map_err(|e| Error::Phantom(e.to_string()))?;
    let rfs_raw = k.intercept
        + k.age * age
        + k.weight * weight
        + k.tumor_volume * tumor_volume
        + rfs_noise.sample(&mut crng);
    let rfs = rfs_raw.round().max(1.0);

    let record = PatientRecord {
        patient_id: format!("PHANTOM-{index:03}"),
        center_id,
        gender,
        age,
        weight,
        tobacco,
        alcohol,
        performance_status,
        hpv_status,
        surgery,
        chemotherapy,
        rfs: Some(rfs),
        relapse: Some(1.0),
    };

    Ok(PhantomPatient {
        record,
        ct: Volume {
            geometry,
            kind: VolumeKind::Continuous,
            voxels: ct,
        },
        pet: Volume {
            geometry,
            kind: VolumeKind::Continuous,
            voxels: pet,
        },
        mask: Volume::new(geometry, VolumeKind::Label, mask)?,
    })
}

/// Generate the whole cohort plus the clinical CSV text.
pub fn generate_cohort(cfg: &PhantomConfig) -> Result<(Vec<PhantomPatient>, String)> {
    cfg.validate()?;
    let patients = exec::try_map_indices(cfg.n_patients, |i| generate_patient(cfg, i))?;
    let records: Vec<PatientRecord> = patients.iter().map(|p| p.record.clone()).collect();
    let csv = String::from_utf8(write_patient_csv(&records))
        .expect("patient CSV is always valid UTF-8");
    Ok((patients, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> PhantomConfig {
        PhantomConfig {
            n_patients: 3,
            dims: [32, 32, 20],
            spacing: [2.0, 2.0, 2.0],
            gtvp_radius_range: [6.0, 9.0],
            gtvn_radius_range: [5.0, 7.0],
            master_seed: 11,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn empty_cohort_is_header_only() {
        let cfg = PhantomConfig {
            n_patients: 0,
            ..small_cfg()
        };
        let (patients, csv) = generate_cohort(&cfg).unwrap();
        assert!(patients.is_empty());
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("PatientID,CenterID,Gender,"));
    }

    #[test]
    fn cohort_is_deterministic() {
        let cfg = small_cfg();
        let (a, csv_a) = generate_cohort(&cfg).unwrap();
        let (b, csv_b) = generate_cohort(&cfg).unwrap();
        assert_eq!(csv_a, csv_b);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.ct.voxels, pb.ct.voxels);
            assert_eq!(pa.pet.voxels, pb.pet.voxels);
            assert_eq!(pa.mask.voxels, pb.mask.voxels);
            assert_eq!(pa.record, pb.record);
        }
    }

    #[test]
    fn masks_have_both_tumor_classes_and_valid_labels() {
        let (patients, _) = generate_cohort(&small_cfg()).unwrap();
        for p in &patients {
            let mut seen = [0u64; 3];
            for &v in &p.mask.voxels {
                seen[v as usize] += 1;
            }
            assert!(seen[0] > 0 && seen[1] > 0 && seen[2] > 0, "{seen:?}");
            assert!(p.record.rfs.unwrap() >= 1.0);
            assert_eq!(p.record.relapse, Some(1.0));
        }
    }

    #[test]
    fn label1_count_tracks_analytic_ellipsoid_volume() {
        // default gtvp radii are >= 8 mm = 4 voxels at 2 mm spacing
        let cfg = PhantomConfig {
            n_patients: 1,
            master_seed: 5,
            ..PhantomConfig::default()
        };
        let p = generate_patient(&cfg, 0).unwrap();
        // the radii are the first three draws of the patient's geometry stream
        let mut rng = seeds::stream_rng(cfg.master_seed, STREAM_PHANTOM, 0);
        let radii = draw_radii(&mut rng, cfg.gtvp_radius_range);
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * radii[0] * radii[1] * radii[2]
            / p.mask.geometry.voxel_volume() as f64;
        let count = p.mask.voxels.iter().filter(|&&v| v == 1.0).count() as f64;
        let rel = (count - analytic).abs() / analytic;
        assert!(
            rel < 0.15,
            "count {count} vs analytic {analytic:.1} (rel {rel:.3})"
        );
    }

    #[test]
    fn pet_separates_tumor_better_than_ct() {
        let cfg = small_cfg(); // pet contrast 120 >> ct contrast 25
        let p = generate_patient(&cfg, 0).unwrap();
        let gap = |vol: &Volume, baseline_tumor: &dyn Fn(f32) -> bool| {
            let mut tumor = (0f64, 0u64);
            let mut bg = (0f64, 0u64);
            for (v, m) in vol.voxels.iter().zip(&p.mask.voxels) {
                if baseline_tumor(*m) {
                    tumor = (tumor.0 + *v as f64, tumor.1 + 1);
                } else {
                    bg = (bg.0 + *v as f64, bg.1 + 1);
                }
            }
            tumor.0 / tumor.1 as f64 - bg.0 / bg.1 as f64
        };
        let is_tumor = |m: f32| m > 0.0;
        let ct_gap = gap(&p.ct, &is_tumor) / cfg.noise_sd;
        let pet_gap = gap(&p.pet, &is_tumor) / cfg.noise_sd;
        assert!(
            pet_gap > ct_gap,
            "PET separability {pet_gap:.2} must beat CT {ct_gap:.2}"
        );
    }

    #[test]
    fn impossible_placement_errors() {
        let cfg = PhantomConfig {
            dims: [8, 8, 8],
            spacing: [1.0, 1.0, 1.0],
            gtvp_radius_range: [6.0, 6.0],
            gtvn_radius_range: [6.0, 6.0],
            ..small_cfg()
        };
        assert!(matches!(
            generate_patient(&cfg, 0),
            Err(Error::Phantom(_))
        ));
    }
}
