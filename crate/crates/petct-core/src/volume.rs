//! 3-D scalar volumes on axis-aligned grids

use crate::error::{Error, Result};

/// Voxel grid layout: counts, spacing (mm) and origin offset (mm) per axis.
/// Orientation is axis-aligned by design; nothing downstream needs more than
/// shape and spacing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeGeometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub sx: f32,
    pub sy: f32,
    pub sz: f32,
    pub ox: f32,
    pub oy: f32,
    pub oz: f32,
}

impl VolumeGeometry {
    pub fn new(dims: [usize; 3], spacing: [f32; 3]) -> Self {
        VolumeGeometry {
            nx: dims[0],
            ny: dims[1],
            nz: dims[2],
            sx: spacing[0],
            sy: spacing[1],
            sz: spacing[2],
            ox: 0.0,
            oy: 0.0,
            oz: 0.0,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn spacing(&self) -> [f32; 3] {
        [self.sx, self.sy, self.sz]
    }

    pub fn origin(&self) -> [f32; 3] {
        [self.ox, self.oy, self.oz]
    }

    pub fn n_voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Voxel volume in mm^3.
    pub fn voxel_volume(&self) -> f64 {
        self.sx as f64 * self.sy as f64 * self.sz as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 1 || self.ny < 1 || self.nz < 1 {
            return Err(Error::InvalidArgument(format!(
                "geometry dims must be >= 1, got {:?}",
                self.dims()
            )));
        }
        for s in self.spacing() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "geometry spacing must be positive and finite, got {:?}",
                    self.spacing()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeKind {
    /// Arbitrary scalar field (CT, PET, probability maps).
    Continuous,
    /// Segmentation mask; voxels restricted to {0, 1, 2}.
    Label,
}

/// A scalar volume. Voxels are stored x-fastest (x, then y, then z), the same
/// order as the NIfTI payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub geometry: VolumeGeometry,
    pub kind: VolumeKind,
    pub voxels: Vec<f32>,
}

/// Labels a voxel may carry in a mask volume: background, GTVp, GTVn.
pub const LABEL_VALUES: [f32; 3] = [0.0, 1.0, 2.0];
pub const N_LABEL_CLASSES: usize = 3;

impl Volume {
    pub fn new(geometry: VolumeGeometry, kind: VolumeKind, voxels: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if voxels.len() != geometry.n_voxels() {
            return Err(Error::ShapeMismatch(format!(
                "voxel count {} does not match geometry {:?}",
                voxels.len(),
                geometry.dims()
            )));
        }
        let v = Volume {
            geometry,
            kind,
            voxels,
        };
        if kind == VolumeKind::Label {
            v.check_label_values()?;
        }
        Ok(v)
    }

    pub fn filled(geometry: VolumeGeometry, kind: VolumeKind, value: f32) -> Result<Self> {
        let n = geometry.n_voxels();
        Volume::new(geometry, kind, vec![value; n])
    }

    fn check_label_values(&self) -> Result<()> {
        for (i, &v) in self.voxels.iter().enumerate() {
            if !LABEL_VALUES.contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "label volume voxel {} holds {}, outside {{0,1,2}}",
                    i, v
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.geometry.nx && y < self.geometry.ny && z < self.geometry.nz);
        (z * self.geometry.ny + y) * self.geometry.nx + x
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f32) {
        let i = self.index(x, y, z);
        self.voxels[i] = value;
    }

    /// Exact grid equality (dims, spacing and origin all bit-equal).
    pub fn same_grid(&self, other: &Volume) -> bool {
        self.geometry == other.geometry
    }

    pub fn require_same_grid(&self, other: &Volume, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{}: {:?}/{:?} vs {:?}/{:?}",
                what,
                self.geometry.dims(),
                self.geometry.spacing(),
                other.geometry.dims(),
                other.geometry.spacing()
            )))
        }
    }

    pub fn require_kind(&self, kind: VolumeKind, what: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{}: expected {:?} volume, got {:?}",
                what, kind, self.kind
            )))
        }
    }
}
