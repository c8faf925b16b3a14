//! In-memory 3D volumes.
//!
//! Voxels are stored with x varying fastest, then y, then z. Spacing and
//! origin are in millimetres. Volumes are immutable once constructed.

use crate::error::{Error, Result};

pub type Dims = [usize; 3];

/// Voxel grid geometry shared by image and label volumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dims: Dims,
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: Dims, spacing: [f64; 3]) -> Result<Self> {
        Self::with_origin(dims, spacing, [0.0; 3])
    }

    pub fn with_origin(dims: Dims, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        if dims
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .is_none()
        {
            return Err(Error::InvalidVolume(format!(
                "dimensions {dims:?} overflow"
            )));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be finite and positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "origin must be finite, got {origin:?}"
            )));
        }
        Ok(Grid {
            dims,
            spacing,
            origin,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Same dims and spacing; origin is ignored.
    pub fn is_aligned_with(&self, other: &Grid) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }
}

/// An intensity image (Hounsfield-unit-like values).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    grid: Grid,
    data: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "expected {} samples for dims {:?}, got {}",
                grid.len(),
                grid.dims(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "non-finite intensity {} at voxel {:?}",
                data[i],
                grid.coords(i)
            )));
        }
        Ok(ScalarVolume { grid, data })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let [nx, ny, nz] = grid.dims();
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> Dims {
        self.grid.dims()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// A segmentation: 0 is background, organs are `1..=num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    grid: Grid,
    labels: Vec<u16>,
    num_classes: u16,
}

impl LabelVolume {
    pub fn new(grid: Grid, labels: Vec<u16>, num_classes: u16) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "expected {} labels for dims {:?}, got {}",
                grid.len(),
                grid.dims(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > num_classes) {
            return Err(Error::LabelDomain(format!(
                "label {bad} exceeds num_classes {num_classes}"
            )));
        }
        Ok(LabelVolume {
            grid,
            labels,
            num_classes,
        })
    }

    /// Builds a label volume whose class count is the largest label present.
    pub fn from_labels(grid: Grid, labels: Vec<u16>) -> Result<Self> {
        let max = labels.iter().copied().max().unwrap_or(0);
        Self::new(grid, labels, max)
    }

    pub fn filled(grid: Grid, label: u16, num_classes: u16) -> Result<Self> {
        Self::new(grid, vec![label; grid.len()], num_classes)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> Dims {
        self.grid.dims()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.labels[self.grid.index(x, y, z)]
    }

    /// Voxel count per label value, indexed `0..=num_classes`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes as usize + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn with_num_classes(self, num_classes: u16) -> Result<Self> {
        Self::new(self.grid, self.labels, num_classes)
    }

    pub fn into_labels(self) -> Vec<u16> {
        self.labels
    }
}

/// Either kind of volume, as produced by the readers.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    Label(LabelVolume),
}

impl Volume {
    pub fn grid(&self) -> &Grid {
        match self {
            Volume::Scalar(v) => v.grid(),
            Volume::Label(v) => v.grid(),
        }
    }
}

impl From<ScalarVolume> for Volume {
    fn from(v: ScalarVolume) -> Self {
        Volume::Scalar(v)
    }
}

impl From<LabelVolume> for Volume {
    fn from(v: LabelVolume) -> Self {
        Volume::Label(v)
    }
}
