//! Volumetric value types shared across the crate.
//!
//! All 3D fields use one linear order: x fastest, then y, then z. A voxel
//! `(x, y, z)` lives at `x + nx * (y + ny * z)`. Slices are [`Plane`]s of
//! `ny` rows by `nx` columns in the same row-major order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{connected_components, Connectivity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.nx;
        let y = (i / self.nx) % self.ny;
        (x, y, i / (self.nx * self.ny))
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidVolume(format!("zero dimension in {self:?}")));
        }
        Ok(())
    }
}

/// Voxel spacing in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Spacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Self {
        Spacing { sx, sy, sz }
    }

    pub fn isotropic(s: f64) -> Self {
        Spacing { sx: s, sy: s, sz: s }
    }

    pub fn voxel_volume(&self) -> f64 {
        self.sx * self.sy * self.sz
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }

    fn validate(&self) -> Result<()> {
        let ok = self
            .as_array()
            .iter()
            .all(|s| s.is_finite() && *s > 0.0);
        if !ok {
            return Err(Error::InvalidVolume(format!("spacing must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Volume in mm³ of `voxel_count` voxels at `spacing`.
pub fn component_volume_mm3(voxel_count: usize, spacing: Spacing) -> f64 {
    voxel_count as f64 * spacing.voxel_volume()
}

fn check_geometry(dims: Dims, spacing: Spacing, other_dims: Dims, other_spacing: Spacing) -> Result<()> {
    if dims != other_dims {
        return Err(Error::DimensionMismatch {
            expected: dims.as_array(),
            actual: other_dims.as_array(),
        });
    }
    if spacing != other_spacing {
        return Err(Error::SpacingMismatch {
            expected: spacing.as_array(),
            actual: other_spacing.as_array(),
        });
    }
    Ok(())
}

/// 3D scalar field with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: Dims,
    spacing: Spacing,
    values: Vec<f32>,
}

impl VoxelGrid {
    pub fn new(dims: Dims, spacing: Spacing, values: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if values.len() != dims.len() {
            return Err(Error::InvalidVolume(format!(
                "{} values for dims {:?}",
                values.len(),
                dims
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite value at voxel {i}")));
        }
        Ok(VoxelGrid { dims, spacing, values })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.dims.index(x, y, z)]
    }

    /// Axial slice `z` as a `ny × nx` plane.
    pub fn slice_z(&self, z: usize) -> Result<Plane> {
        if z >= self.dims.nz {
            return Err(Error::OutOfRange { index: z, len: self.dims.nz });
        }
        let n = self.dims.plane_len();
        Ok(Plane {
            width: self.dims.nx,
            height: self.dims.ny,
            values: self.values[z * n..(z + 1) * n].to_vec(),
        })
    }
}

/// Binary volume; stored as bytes that are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    dims: Dims,
    spacing: Spacing,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(dims: Dims, spacing: Spacing, values: Vec<u8>) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if values.len() != dims.len() {
            return Err(Error::InvalidVolume(format!(
                "{} mask values for dims {:?}",
                values.len(),
                dims
            )));
        }
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::InvalidVolume(format!(
                "mask value {} at voxel {i} is not binary",
                values[i]
            )));
        }
        Ok(BinaryMask { dims, spacing, values })
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        let mut values = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    values.push(u8::from(f(x, y, z)));
                }
            }
        }
        Self::new(dims, spacing, values)
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::new(dims, spacing, vec![0; dims.len()])
    }

    pub fn ones(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::new(dims, spacing, vec![1; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn is_set(&self, i: usize) -> bool {
        self.values[i] != 0
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    /// True when every set voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(&a, &b)| a == 0 || b != 0)
    }

    pub fn slice_z(&self, z: usize) -> Result<Vec<u8>> {
        if z >= self.dims.nz {
            return Err(Error::OutOfRange { index: z, len: self.dims.nz });
        }
        let n = self.dims.plane_len();
        Ok(self.values[z * n..(z + 1) * n].to_vec())
    }

    pub fn slice_has_any(&self, z: usize) -> bool {
        let n = self.dims.plane_len();
        self.values[z * n..(z + 1) * n].iter().any(|&v| v != 0)
    }

    pub fn check_matches(&self, dims: Dims, spacing: Spacing) -> Result<()> {
        check_geometry(self.dims, self.spacing, dims, spacing)
    }
}

/// Per-voxel lesion probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    dims: Dims,
    spacing: Spacing,
    values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(dims: Dims, spacing: Spacing, values: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if values.len() != dims.len() {
            return Err(Error::InvalidVolume(format!(
                "{} probabilities for dims {:?}",
                values.len(),
                dims
            )));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidVolume(format!(
                "probability {} at voxel {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(ProbabilityMap { dims, spacing, values })
    }

    /// Builds a map and zeroes every voxel outside `brain`.
    pub fn masked(values: Vec<f32>, brain: &BinaryMask) -> Result<Self> {
        let mut map = Self::new(brain.dims, brain.spacing, values)?;
        for (p, &m) in map.values.iter_mut().zip(&brain.values) {
            if m == 0 {
                *p = 0.0;
            }
        }
        Ok(map)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn as_grid(&self) -> VoxelGrid {
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            values: self.values.clone(),
        }
    }

    pub fn from_grid(grid: VoxelGrid) -> Result<Self> {
        Self::new(grid.dims, grid.spacing, grid.values)
    }

    pub fn check_matches(&self, dims: Dims, spacing: Spacing) -> Result<()> {
        check_geometry(self.dims, self.spacing, dims, spacing)
    }
}

/// Elementwise `grid * mask`.
pub fn apply_brain_mask(grid: &VoxelGrid, mask: &BinaryMask) -> Result<VoxelGrid> {
    mask.check_matches(grid.dims, grid.spacing)?;
    let values = grid
        .values
        .iter()
        .zip(&mask.values)
        .map(|(&v, &m)| if m != 0 { v } else { 0.0 })
        .collect();
    Ok(VoxelGrid {
        dims: grid.dims,
        spacing: grid.spacing,
        values,
    })
}

/// The four co-registered input sequences, in channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sequence {
    T1PreCube,
    T1PostCube,
    T1PostBravo,
    Flair,
}

impl Sequence {
    pub const ALL: [Sequence; 4] = [
        Sequence::T1PreCube,
        Sequence::T1PostCube,
        Sequence::T1PostBravo,
        Sequence::Flair,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Sequence::T1PreCube => "t1_pre_cube",
            Sequence::T1PostCube => "t1_post_cube",
            Sequence::T1PostBravo => "t1_post_bravo",
            Sequence::Flair => "flair",
        }
    }

    pub fn is_post_contrast(self) -> bool {
        matches!(self, Sequence::T1PostCube | Sequence::T1PostBravo)
    }
}

/// One patient: four sequences, brain mask and ground truth on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSequenceStudy {
    study_id: String,
    channels: [VoxelGrid; 4],
    brain_mask: BinaryMask,
    gt_mask: BinaryMask,
    n_lesions: usize,
}

impl MultiSequenceStudy {
    /// Validates the shared geometry, `gt ⊆ brain`, and counts lesions as
    /// 26-connected ground-truth components (at least one required).
    pub fn new(
        study_id: impl Into<String>,
        channels: [VoxelGrid; 4],
        brain_mask: BinaryMask,
        gt_mask: BinaryMask,
    ) -> Result<Self> {
        let dims = brain_mask.dims;
        let spacing = brain_mask.spacing;
        for ch in &channels {
            check_geometry(dims, spacing, ch.dims, ch.spacing)?;
        }
        gt_mask.check_matches(dims, spacing)?;
        if !gt_mask.is_subset_of(&brain_mask) {
            return Err(Error::InvalidVolume("ground truth extends outside the brain mask".into()));
        }
        let n_lesions = connected_components(&gt_mask, Connectivity::TwentySix).count();
        if n_lesions == 0 {
            return Err(Error::NoLesions(0));
        }
        Ok(MultiSequenceStudy {
            study_id: study_id.into(),
            channels,
            brain_mask,
            gt_mask,
            n_lesions,
        })
    }

    pub fn study_id(&self) -> &str {
        &self.study_id
    }

    pub fn channel(&self, seq: Sequence) -> &VoxelGrid {
        &self.channels[seq.index()]
    }

    pub fn channels(&self) -> &[VoxelGrid; 4] {
        &self.channels
    }

    pub fn brain_mask(&self) -> &BinaryMask {
        &self.brain_mask
    }

    pub fn gt_mask(&self) -> &BinaryMask {
        &self.gt_mask
    }

    pub fn n_lesions(&self) -> usize {
        self.n_lesions
    }

    pub fn dims(&self) -> Dims {
        self.brain_mask.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.brain_mask.spacing
    }
}

/// A 2D field of `height` rows by `width` columns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("plane"));
        }
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} plane",
                values.len()
            )));
        }
        Ok(Plane { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Plane {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

#[inline]
fn source_coord(dst: usize, scale: f64, len: usize) -> (usize, usize, f32) {
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, (src - lo as f64) as f32)
}

/// Bilinear resize with half-pixel centres, `src = (dst + 0.5) * scale - 0.5`,
/// clamped at the edges. Returns the input unchanged when it already has the
/// target size.
pub fn resize_bilinear(plane: &Plane, target_width: usize, target_height: usize) -> Result<Plane> {
    if plane.width == 0 || plane.height == 0 || plane.values.is_empty() {
        return Err(Error::Empty("plane"));
    }
    if target_width == 0 || target_height == 0 {
        return Err(Error::InvalidArgument("resize target must be non-empty".into()));
    }
    if plane.width == target_width && plane.height == target_height {
        return Ok(plane.clone());
    }
    let sx = plane.width as f64 / target_width as f64;
    let sy = plane.height as f64 / target_height as f64;
    let cols: Vec<_> = (0..target_width)
        .map(|x| source_coord(x, sx, plane.width))
        .collect();
    let mut out = Vec::with_capacity(target_width * target_height);
    for y in 0..target_height {
        let (y0, y1, fy) = source_coord(y, sy, plane.height);
        for &(x0, x1, fx) in &cols {
            let top = plane.get(x0, y0) * (1.0 - fx) + plane.get(x1, y0) * fx;
            let bottom = plane.get(x0, y1) * (1.0 - fx) + plane.get(x1, y1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(Plane {
        width: target_width,
        height: target_height,
        values: out,
    })
}
