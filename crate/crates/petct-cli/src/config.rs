//! TOML run configuration. Every key has a default, so an empty file (or no
//! file at all) yields a complete, runnable configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use petct_core::features::KidneyParams;
use petct_core::phantom::{PhantomConfig, RfsCoefficients};
use petct_core::preprocess::SplitConfig;
use petct_core::resample::ResampleSpec;
use petct_core::seg::train::TrainConfig;
use petct_core::trees::forest::RfConfig;
use petct_core::trees::gbt::GbtConfig;
use petct_core::trees::MaxFeatures;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed; every stage derives its own streams from it.
    pub seed: u64,
    /// Worker threads for data-parallel stages; 0 = library default.
    pub workers: usize,
    pub phantom: PhantomSection,
    pub resample: ResampleSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub kidney: KidneySection,
    pub features: FeaturesSection,
    pub cv: CvSection,
    pub surv: SurvSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            workers: 0,
            phantom: PhantomSection::default(),
            resample: ResampleSection::default(),
            split: SplitSection::default(),
            train: TrainSection::default(),
            kidney: KidneySection::default(),
            features: FeaturesSection::default(),
            cv: CvSection::default(),
            surv: SurvSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub n_patients: usize,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub gtvp_radius_range: [f64; 2],
    pub gtvn_radius_range: [f64; 2],
    pub ct_tumor_contrast: f64,
    pub pet_tumor_contrast: f64,
    pub noise_sd: f64,
    pub rfs_noise_sd: f64,
    pub rfs_coefficients: RfsSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfsSection {
    pub intercept: f64,
    pub age: f64,
    pub weight: f64,
    pub tumor_volume: f64,
}

impl Default for RfsSection {
    fn default() -> Self {
        let c = RfsCoefficients::default();
        RfsSection {
            intercept: c.intercept,
            age: c.age,
            weight: c.weight,
            tumor_volume: c.tumor_volume,
        }
    }
}

impl Default for PhantomSection {
    fn default() -> Self {
        let c = PhantomConfig::default();
        PhantomSection {
            n_patients: c.n_patients,
            dims: c.dims,
            spacing: c.spacing,
            gtvp_radius_range: c.gtvp_radius_range,
            gtvn_radius_range: c.gtvn_radius_range,
            ct_tumor_contrast: c.ct_tumor_contrast,
            pet_tumor_contrast: c.pet_tumor_contrast,
            noise_sd: c.noise_sd,
            rfs_noise_sd: c.rfs_noise_sd,
            rfs_coefficients: RfsSection::default(),
        }
    }
}

impl PhantomSection {
    pub fn to_core(&self, seed: u64) -> PhantomConfig {
        PhantomConfig {
            n_patients: self.n_patients,
            dims: self.dims,
            spacing: self.spacing,
            gtvp_radius_range: self.gtvp_radius_range,
            gtvn_radius_range: self.gtvn_radius_range,
            ct_tumor_contrast: self.ct_tumor_contrast,
            pet_tumor_contrast: self.pet_tumor_contrast,
            noise_sd: self.noise_sd,
            rfs_coefficients: RfsCoefficients {
                intercept: self.rfs_coefficients.intercept,
                age: self.rfs_coefficients.age,
                weight: self.rfs_coefficients.weight,
                tumor_volume: self.rfs_coefficients.tumor_volume,
            },
            rfs_noise_sd: self.rfs_noise_sd,
            master_seed: seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResampleSection {
    pub spacing: [f32; 3],
}

impl Default for ResampleSection {
    fn default() -> Self {
        ResampleSection {
            spacing: ResampleSpec::default().spacing,
        }
    }
}

impl ResampleSection {
    pub fn to_core(&self) -> ResampleSpec {
        ResampleSpec {
            spacing: self.spacing,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train_fraction: SplitConfig::default().train_fraction,
        }
    }
}

impl SplitSection {
    pub fn to_core(&self, seed: u64) -> SplitConfig {
        SplitConfig {
            train_fraction: self.train_fraction,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_reduced: f64,
    pub lr_switch_epoch: usize,
    pub dice_eps: f64,
    pub augment: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainSection {
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr_initial: c.lr_initial,
            lr_reduced: c.lr_reduced,
            lr_switch_epoch: c.lr_switch_epoch,
            dice_eps: c.dice_eps,
            augment: c.augment,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_initial: self.lr_initial,
            lr_reduced: self.lr_reduced,
            lr_switch_epoch: self.lr_switch_epoch,
            dice_eps: self.dice_eps,
            augment: self.augment,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KidneySection {
    pub scr_male: f64,
    pub scr_female: f64,
}

impl Default for KidneySection {
    fn default() -> Self {
        let c = KidneyParams::default();
        KidneySection {
            scr_male: c.scr_male,
            scr_female: c.scr_female,
        }
    }
}

impl KidneySection {
    pub fn to_core(&self) -> KidneyParams {
        KidneyParams {
            scr_male: self.scr_male,
            scr_female: self.scr_female,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    /// Mask source for image features: "gt" (phantom ground truth) or
    /// "arch1"/"arch2"/"arch3" (segmentation predictions).
    pub masks: String,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection { masks: "gt".into() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSection {
    pub folds: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection { folds: 5 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurvSection {
    /// "gbt" or "rf"
    pub model: String,
    pub gbt: GbtSection,
    pub rf: RfSection,
}

impl Default for SurvSection {
    fn default() -> Self {
        SurvSection {
            model: "gbt".into(),
            gbt: GbtSection::default(),
            rf: RfSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtSection {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub colsample_bylevel: f64,
    pub colsample_bynode: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl Default for GbtSection {
    fn default() -> Self {
        let c = GbtConfig::default();
        GbtSection {
            n_estimators: c.n_estimators,
            learning_rate: c.learning_rate,
            max_depth: c.max_depth,
            subsample: c.subsample,
            colsample_bytree: c.colsample_bytree,
            colsample_bylevel: c.colsample_bylevel,
            colsample_bynode: c.colsample_bynode,
            lambda: c.lambda,
            min_child_weight: c.min_child_weight,
        }
    }
}

impl GbtSection {
    pub fn to_core(&self, seed: u64) -> GbtConfig {
        GbtConfig {
            n_estimators: self.n_estimators,
            learning_rate: self.learning_rate,
            max_depth: self.max_depth,
            subsample: self.subsample,
            colsample_bytree: self.colsample_bytree,
            colsample_bylevel: self.colsample_bylevel,
            colsample_bynode: self.colsample_bynode,
            lambda: self.lambda,
            min_child_weight: self.min_child_weight,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfSection {
    pub n_trees: usize,
    /// "all", "third", or "sqrt"
    pub max_features: String,
    pub bootstrap: bool,
}

impl Default for RfSection {
    fn default() -> Self {
        let c = RfConfig::default();
        RfSection {
            n_trees: c.n_trees,
            max_features: match c.max_features {
                MaxFeatures::All => "all".into(),
                MaxFeatures::Third => "third".into(),
                MaxFeatures::Sqrt => "sqrt".into(),
            },
            bootstrap: c.bootstrap,
        }
    }
}

impl RfSection {
    pub fn to_core(&self, seed: u64) -> Result<RfConfig, CliError> {
        let max_features = match self.max_features.as_str() {
            "all" => MaxFeatures::All,
            "third" => MaxFeatures::Third,
            "sqrt" => MaxFeatures::Sqrt,
            other => {
                return Err(CliError::Config(format!(
                    "surv.rf.max_features must be all/third/sqrt, got {other:?}"
                )))
            }
        };
        Ok(RfConfig {
            n_trees: self.n_trees,
            max_features,
            bootstrap: self.bootstrap,
            seed,
        })
    }
}

impl Config {
    /// Load from a TOML file; a missing `path` is a config error that names
    /// the path. `None` means "use the built-in defaults".
    pub fn load(path: Option<&std::path::Path>) -> Result<Config, CliError> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(CliError::Config(
                "split.train_fraction must be in (0, 1)".into(),
            ));
        }
        match self.surv.model.as_str() {
            "gbt" | "rf" => {}
            other => {
                return Err(CliError::Config(format!(
                    "surv.model must be \"gbt\" or \"rf\", got {other:?}"
                )))
            }
        }
        match self.features.masks.as_str() {
            "gt" | "arch1" | "arch2" | "arch3" => {}
            other => {
                return Err(CliError::Config(format!(
                    "features.masks must be gt/arch1/arch2/arch3, got {other:?}"
                )))
            }
        }
        if self.cv.folds < 2 {
            return Err(CliError::Config("cv.folds must be >= 2".into()));
        }
        Ok(())
    }

    /// Hash of the resolved configuration. Worker count is excluded: it may
    /// change parallel scheduling but never the artifacts.
    pub fn content_hash(&self) -> String {
        let mut canon = self.clone();
        canon.workers = 0;
        let json = serde_json::to_string(&canon).expect("config serialization cannot fail");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex(&h.finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_equals_defaults() {
        let cfg: Config = toml::from_str("").unwrap();
        assert_eq!(cfg.content_hash(), Config::default().content_hash());
        assert_eq!(cfg.phantom.n_patients, 12);
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.surv.gbt.n_estimators, 120);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("definitely_not_a_key = 1").is_err());
        assert!(toml::from_str::<Config>("[train]\nnope = 2").is_err());
    }

    #[test]
    fn workers_do_not_change_the_hash() {
        let mut a = Config::default();
        a.workers = 8;
        assert_eq!(a.content_hash(), Config::default().content_hash());
        let mut b = Config::default();
        b.seed = 1;
        assert_ne!(b.content_hash(), Config::default().content_hash());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = Config::default();
        c.surv.model = "svm".into();
        assert!(c.validate().is_err());
        let mut c = Config::default();
        c.split.train_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = Config::default();
        c.features.masks = "arch9".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn rf_section_parses_feature_modes() {
        let mut s = RfSection::default();
        s.max_features = "sqrt".into();
        assert_eq!(s.to_core(0).unwrap().max_features, MaxFeatures::Sqrt);
        s.max_features = "bogus".into();
        assert!(s.to_core(0).is_err());
    }
}
