//! per-pixel segmentation models over fused CT/PET slices

pub mod adam;
pub mod loss;
pub mod model;
pub mod pixel_features;
pub mod train;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SegArch {
    /// CT only, single channel.
    CtOnly,
    /// Early fusion: CT, PET and their elementwise mean as a third channel.
    EarlyFusion,
    /// Late fusion: separate CT and PET streams merged by a learned layer.
    LateFusion,
}

impl SegArch {
    pub fn n_channels(self) -> usize {
        match self {
            SegArch::CtOnly => 1,
            SegArch::EarlyFusion => 3,
            SegArch::LateFusion => 2,
        }
    }

    pub fn needs_pet(self) -> bool {
        !matches!(self, SegArch::CtOnly)
    }

    pub fn label(self) -> &'static str {
        match self {
            SegArch::CtOnly => "arch1",
            SegArch::EarlyFusion => "arch2",
            SegArch::LateFusion => "arch3",
        }
    }
}

impl std::str::FromStr for SegArch {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "arch1" | "ct" => Ok(SegArch::CtOnly),
            "2" | "arch2" | "early" => Ok(SegArch::EarlyFusion),
            "3" | "arch3" | "late" => Ok(SegArch::LateFusion),
            other => Err(crate::error::Error::InvalidArgument(format!(
                "unknown architecture '{other}' (expected 1, 2 or 3)"
            ))),
        }
    }
}
