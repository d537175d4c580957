//! Volume container, slicing geometry and intensity windowing.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`. Slices keep the same convention, with the
//! faster of the two remaining dimensions as the slice width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A spatial dimension of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    X,
    Y,
    Z,
}

impl Dim {
    pub fn index(self) -> usize {
        match self {
            Dim::X => 0,
            Dim::Y => 1,
            Dim::Z => 2,
        }
    }
}

/// Slicing orientation.
///
/// Axial slices are taken along z and lie in the x–y plane, coronal
/// slices along y (x–z plane) and sagittal slices along x (y–z plane).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Axial,
    Coronal,
    Sagittal,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Coronal, Axis::Sagittal];

    /// The dimension the slice index runs along.
    pub fn slicing_dim(self) -> Dim {
        match self {
            Axis::Axial => Dim::Z,
            Axis::Coronal => Dim::Y,
            Axis::Sagittal => Dim::X,
        }
    }

    /// In-slice dimensions as `(width, height)`; width is the fast one.
    pub fn in_plane_dims(self) -> (Dim, Dim) {
        match self {
            Axis::Axial => (Dim::X, Dim::Y),
            Axis::Coronal => (Dim::X, Dim::Z),
            Axis::Sagittal => (Dim::Y, Dim::Z),
        }
    }

    /// Which trained network handles slices of this orientation.
    pub fn plane(self) -> Plane {
        match self {
            Axis::Axial => Plane::InPlane,
            Axis::Coronal | Axis::Sagittal => Plane::ThroughPlane,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Axial => "axial",
            Axis::Coronal => "coronal",
            Axis::Sagittal => "sagittal",
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "axial" | "a" | "xy" => Ok(Axis::Axial),
            "coronal" | "c" | "xz" => Ok(Axis::Coronal),
            "sagittal" | "s" | "yz" => Ok(Axis::Sagittal),
            other => Err(Error::InvalidParameter(format!("unknown axis '{other}'"))),
        }
    }
}

/// In-plane (axial) versus through-plane (coronal/sagittal) slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Plane {
    InPlane,
    ThroughPlane,
}

impl Plane {
    pub fn name(self) -> &'static str {
        match self {
            Plane::InPlane => "in-plane",
            Plane::ThroughPlane => "through-plane",
        }
    }
}

impl std::str::FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "in-plane" | "in" | "inplane" => Ok(Plane::InPlane),
            "through-plane" | "through" | "throughplane" => Ok(Plane::ThroughPlane),
            other => Err(Error::InvalidParameter(format!("unknown plane '{other}'"))),
        }
    }
}

/// How out-of-range neighbours are resolved by filters and convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Zero,
    Periodic,
    #[default]
    Replicate,
}

impl Boundary {
    /// Map a possibly out-of-range coordinate onto `0..n`; `None` means zero.
    #[inline]
    pub fn resolve(self, i: isize, n: usize) -> Option<usize> {
        let n = n as isize;
        if (0..n).contains(&i) {
            return Some(i as usize);
        }
        match self {
            Boundary::Zero => None,
            Boundary::Periodic => Some(i.rem_euclid(n) as usize),
            Boundary::Replicate => Some(i.clamp(0, n - 1) as usize),
        }
    }
}

/// A dense 3D scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::DimensionMismatch(format!(
                "volume dims must be positive, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "data length {} does not match dims {dims:?} ({n} voxels)",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("voxel {i} is {}", data[i])));
        }
        Ok(Volume { dims, spacing, data })
    }

    pub fn filled(dims: [usize; 3], value: f64) -> Result<Self> {
        Volume::new(dims, [1.0; 3], vec![value; dims.iter().product()])
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume::new(dims, [1.0; 3], data)
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        self.spacing = spacing;
        Ok(self)
    }

    /// Replace the voxel values, keeping geometry.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Volume::new(self.dims, self.spacing, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn dim(&self, d: Dim) -> usize {
        self.dims[d.index()]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub fn same_dims(&self, other: &Volume) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Number of slices along `axis`.
    pub fn slice_count(&self, axis: Axis) -> usize {
        self.dim(axis.slicing_dim())
    }

    /// `(width, height)` of slices taken along `axis`.
    pub fn slice_shape(&self, axis: Axis) -> (usize, usize) {
        let (w, h) = axis.in_plane_dims();
        (self.dim(w), self.dim(h))
    }

    /// Linear voxel index of in-slice coordinate `(u, v)` of slice `k`.
    #[inline]
    fn slice_voxel(&self, axis: Axis, k: usize, u: usize, v: usize) -> usize {
        match axis {
            Axis::Axial => self.index(u, v, k),
            Axis::Coronal => self.index(u, k, v),
            Axis::Sagittal => self.index(k, u, v),
        }
    }

    /// Copy out slice `k` along `axis`.
    pub fn slice(&self, axis: Axis, k: usize) -> Slice2D {
        let (w, h) = self.slice_shape(axis);
        let mut data = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                data.push(self.data[self.slice_voxel(axis, k, u, v)]);
            }
        }
        Slice2D {
            width: w,
            height: h,
            data,
            axis,
            index: k,
        }
    }

    /// Copy a `w x h` window starting at in-slice `(u0, v0)` of slice `k`.
    pub fn patch(&self, axis: Axis, k: usize, u0: usize, v0: usize, w: usize, h: usize) -> Result<Slice2D> {
        let (sw, sh) = self.slice_shape(axis);
        if k >= self.slice_count(axis) || u0 + w > sw || v0 + h > sh || w == 0 || h == 0 {
            return Err(Error::DimensionMismatch(format!(
                "patch {w}x{h} at ({u0}, {v0}) of {axis} slice {k} exceeds {sw}x{sh}"
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for v in v0..v0 + h {
            for u in u0..u0 + w {
                data.push(self.data[self.slice_voxel(axis, k, u, v)]);
            }
        }
        Ok(Slice2D {
            width: w,
            height: h,
            data,
            axis,
            index: k,
        })
    }

    /// Overwrite slice `k` along `axis` with the given slice values.
    pub fn set_slice(&mut self, slice: &Slice2D) -> Result<()> {
        let axis = slice.axis;
        let (w, h) = self.slice_shape(axis);
        if (slice.width, slice.height) != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "slice {}x{} does not fit {axis} slices of {w}x{h}",
                slice.width, slice.height
            )));
        }
        if slice.index >= self.slice_count(axis) {
            return Err(Error::DimensionMismatch(format!(
                "slice index {} out of range for {axis} ({} slices)",
                slice.index,
                self.slice_count(axis)
            )));
        }
        for v in 0..h {
            for u in 0..w {
                let i = self.slice_voxel(axis, slice.index, u, v);
                self.data[i] = slice.data[u + w * v];
            }
        }
        Ok(())
    }
}

/// A 2D slice with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub axis: Axis,
    pub index: usize,
}

impl Slice2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>, axis: Axis, index: usize) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "slice {width}x{height} with {} values",
                data.len()
            )));
        }
        Ok(Slice2D {
            width,
            height,
            data,
            axis,
            index,
        })
    }

    /// A same-shaped slice with new values. Panics if the length differs.
    pub fn with_data(&self, data: Vec<f64>) -> Slice2D {
        assert_eq!(data.len(), self.data.len(), "slice data length mismatch");
        Slice2D {
            width: self.width,
            height: self.height,
            data,
            axis: self.axis,
            index: self.index,
        }
    }

    pub fn zeros_like(&self) -> Slice2D {
        self.with_data(vec![0.0; self.data.len()])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn check_shape(&self, other: &Slice2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "slice {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u + self.width * v]
    }
}

/// Split a volume into its ordered slices along `axis`.
pub fn extract_slices(vol: &Volume, axis: Axis) -> Vec<Slice2D> {
    (0..vol.slice_count(axis)).map(|k| vol.slice(axis, k)).collect()
}

/// Rebuild a volume from slices; slices are placed by their `index`, so
/// the input order does not matter.
pub fn assemble_slices(slices: &[Slice2D], axis: Axis) -> Result<Volume> {
    let first = slices
        .first()
        .ok_or_else(|| Error::DimensionMismatch("no slices to assemble".into()))?;
    let (w, h) = first.shape();
    let depth = slices.len();
    let mut seen = vec![false; depth];
    for s in slices {
        if s.axis != axis {
            return Err(Error::DimensionMismatch(format!(
                "slice for axis {} in {axis} assembly",
                s.axis
            )));
        }
        if s.shape() != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "slice {:?} differs from {:?}",
                s.shape(),
                (w, h)
            )));
        }
        if s.index >= depth || seen[s.index] {
            return Err(Error::DimensionMismatch(format!(
                "slice index {} duplicated or beyond {depth} slices",
                s.index
            )));
        }
        seen[s.index] = true;
    }
    if let Some(missing) = seen.iter().position(|&b| !b) {
        return Err(Error::MissingSliceIndex {
            axis: axis.to_string(),
            index: missing,
        });
    }
    let dims = match axis {
        Axis::Axial => [w, h, depth],
        Axis::Coronal => [w, depth, h],
        Axis::Sagittal => [depth, w, h],
    };
    let mut vol = Volume::filled(dims, 0.0)?;
    for s in slices {
        vol.set_slice(s)?;
    }
    Ok(vol)
}

/// Intensity window mapped onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::DegenerateRange { lo, hi });
        }
        Ok(Window { lo, hi })
    }

    /// The identity window.
    pub fn unit() -> Self {
        Window { lo: -1.0, hi: 1.0 }
    }

    #[inline]
    pub fn forward(&self, v: f64) -> f64 {
        (v - self.lo) * (2.0 / (self.hi - self.lo)) - 1.0
    }

    #[inline]
    pub fn inverse(&self, u: f64) -> f64 {
        (u + 1.0) * (0.5 * (self.hi - self.lo)) + self.lo
    }
}

/// Affinely map `[lo, hi]` onto `[-1, 1]`.
pub fn normalize(vol: &Volume, lo: f64, hi: f64) -> Result<Volume> {
    let w = Window::new(lo, hi)?;
    vol.with_data(vol.data.iter().map(|&v| w.forward(v)).collect())
}

/// Inverse of [`normalize`].
pub fn denormalize(vol: &Volume, lo: f64, hi: f64) -> Result<Volume> {
    let w = Window::new(lo, hi)?;
    vol.with_data(vol.data.iter().map(|&v| w.inverse(v)).collect())
}
