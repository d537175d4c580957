//! Synthetic phantoms and an image-domain HR -> LR degradation model.
//!
//! LR volumes are produced from HR volumes by a separable Gaussian blur,
//! a 3x3 detector crosstalk kernel applied to axial slices, and Poisson
//! noise on a log-attenuation surrogate. Output keeps a 1:1 voxel
//! correspondence with the input.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::denoiser::TrainingPair;
use crate::error::{Error, Result};
use crate::rng::{tags, RngStream};
use crate::volume::{Boundary, Dim, Plane, Volume};

/// Acquisition parameters of the simulated scanner, kept for the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanProvenance {
    pub lr_views: u32,
    pub hr_views: u32,
    pub kvp: f64,
    pub tube_ma: f64,
    pub rotation_s: f64,
}

impl Default for ScanProvenance {
    fn default() -> Self {
        ScanProvenance {
            lr_views: 1000,
            hr_views: 1300,
            kvp: 120.0,
            tube_ma: 400.0,
            rotation_s: 1.0,
        }
    }
}

/// LR/HR geometry ratios that set the blur width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    /// LR over HR detector pitch, in-plane.
    pub pitch_ratio_in_plane: f64,
    /// LR over HR detector pitch, along z.
    pub pitch_ratio_through_plane: f64,
    /// LR over HR focal spot size.
    pub focal_ratio: f64,
    /// Voxels of blur per unit of excess ratio.
    pub k: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            pitch_ratio_in_plane: 1.0 / 0.75,
            pitch_ratio_through_plane: 1.0 / 0.85,
            focal_ratio: 1.0 / 0.75,
            k: 2.0,
        }
    }
}

impl Geometry {
    /// `sigma = k * hypot(pitch_ratio - 1, focal_ratio - 1)` per axis.
    pub fn sigma(&self) -> [f64; 3] {
        let f = self.focal_ratio - 1.0;
        let s_in = self.k * (self.pitch_ratio_in_plane - 1.0).hypot(f);
        let s_th = self.k * (self.pitch_ratio_through_plane - 1.0).hypot(f);
        [s_in, s_in, s_th]
    }
}

/// Corner 0.0125, edge 0.0375, centre 0.8.
pub const DEFAULT_CROSSTALK: [[f64; 3]; 3] = [
    [0.0125, 0.0375, 0.0125],
    [0.0375, 0.8, 0.0375],
    [0.0125, 0.0375, 0.0125],
];

pub const IDENTITY_CROSSTALK: [[f64; 3]; 3] = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeConfig {
    /// Gaussian blur standard deviation per axis, in voxels.
    pub sigma: [f64; 3],
    /// Kernel over `[dy][dx]` applied to every axial slice.
    pub crosstalk: [[f64; 3]; 3],
    /// Photon count for a voxel of value 0.
    pub n0: f64,
    /// Attenuation constant `a` in `c = n0 * exp(-a v)`.
    pub attenuation: f64,
    pub noise_enabled: bool,
    pub boundary: Boundary,
    pub provenance: ScanProvenance,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig::from_geometry(&Geometry::default())
    }
}

impl DegradeConfig {
    pub fn from_geometry(g: &Geometry) -> Self {
        DegradeConfig {
            sigma: g.sigma(),
            crosstalk: DEFAULT_CROSSTALK,
            n0: 1.0e4,
            attenuation: 2.0,
            noise_enabled: true,
            boundary: Boundary::Replicate,
            provenance: ScanProvenance::default(),
        }
    }

    /// No blur, no crosstalk, no noise.
    pub fn identity() -> Self {
        DegradeConfig {
            sigma: [0.0; 3],
            crosstalk: IDENTITY_CROSSTALK,
            noise_enabled: false,
            ..DegradeConfig::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.sigma == [0.0; 3] && self.crosstalk == IDENTITY_CROSSTALK && !self.noise_enabled
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "blur sigma {:?} must be >= 0",
                self.sigma
            )));
        }
        let flat = self.crosstalk.iter().flatten();
        if flat.clone().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("crosstalk kernel must be nonnegative".into()));
        }
        let sum: f64 = flat.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "crosstalk kernel sums to {sum}, not 1"
            )));
        }
        if !(self.n0.is_finite() && self.n0 > 0.0) {
            return Err(Error::InvalidParameter(format!("n0 = {} must be > 0", self.n0)));
        }
        if !(self.attenuation.is_finite() && self.attenuation > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "attenuation {} must be > 0",
                self.attenuation
            )));
        }
        Ok(())
    }
}

/// Blur one line in place: `exp(-2 pi^2 sigma^2 f^2)` applied in the DFT
/// domain over `fft_len` samples.
fn blur_line(
    line: &mut [f64],
    buf: &mut Vec<Complex<f64>>,
    transfer: &[f64],
    fwd: &Arc<dyn Fft<f64>>,
    inv: &Arc<dyn Fft<f64>>,
    pad: usize,
    boundary: Boundary,
) {
    let n = line.len();
    let len = transfer.len();
    buf.clear();
    buf.extend((0..len).map(|i| {
        let v = boundary.resolve(i as isize - pad as isize, n).map_or(0.0, |j| line[j]);
        Complex::new(v, 0.0)
    }));
    fwd.process(buf);
    for (c, h) in buf.iter_mut().zip(transfer) {
        *c *= *h / len as f64;
    }
    inv.process(buf);
    for (i, v) in line.iter_mut().enumerate() {
        *v = buf[i + pad].re;
    }
}

/// Gaussian blur along one dimension. Periodic boundaries use the exact
/// circulant operator; the others pad by `4 sigma + 1` first.
pub fn gaussian_blur_axis(vol: &Volume, dim: Dim, sigma: f64, boundary: Boundary) -> Result<Volume> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("blur sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(vol.clone());
    }
    let dims = vol.dims();
    let n = dims[dim.index()];
    let pad = match boundary {
        Boundary::Periodic => 0,
        _ => (4.0 * sigma).ceil() as usize + 1,
    };
    let len = n + 2 * pad;
    let transfer: Vec<f64> = (0..len)
        .map(|k| {
            let f = k.min(len - k) as f64 / len as f64;
            (-2.0 * std::f64::consts::PI.powi(2) * sigma * sigma * f * f).exp()
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let stride = match dim {
        Dim::X => 1,
        Dim::Y => dims[0],
        Dim::Z => dims[0] * dims[1],
    };
    // lines are enumerated by their starting offset
    let starts: Vec<usize> = (0..vol.len()).filter(|&i| (i / stride) % n == 0).collect();
    let src = vol.data();
    let lines: Vec<Vec<f64>> = starts
        .par_iter()
        .map_init(Vec::new, |buf, &s| {
            let mut line: Vec<f64> = (0..n).map(|j| src[s + j * stride]).collect();
            blur_line(&mut line, buf, &transfer, &fwd, &inv, pad, boundary);
            line
        })
        .collect();
    let mut out = vec![0.0; vol.len()];
    for (s, line) in starts.iter().zip(lines) {
        for (j, v) in line.into_iter().enumerate() {
            out[s + j * stride] = v;
        }
    }
    vol.with_data(out)
}

/// Separable Gaussian blur with per-axis `sigma`.
pub fn gaussian_blur(vol: &Volume, sigma: [f64; 3], boundary: Boundary) -> Result<Volume> {
    let mut v = gaussian_blur_axis(vol, Dim::X, sigma[0], boundary)?;
    v = gaussian_blur_axis(&v, Dim::Y, sigma[1], boundary)?;
    gaussian_blur_axis(&v, Dim::Z, sigma[2], boundary)
}

/// 3x3 correlation of every axial slice with `kernel[dy][dx]`.
pub fn apply_crosstalk(vol: &Volume, kernel: &[[f64; 3]; 3], boundary: Boundary) -> Result<Volume> {
    if *kernel == IDENTITY_CROSSTALK {
        return Ok(vol.clone());
    }
    let [nx, ny, nz] = vol.dims();
    let src = vol.data();
    let slabs: Vec<Vec<f64>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut out = vec![0.0; nx * ny];
            for y in 0..ny {
                for x in 0..nx {
                    let mut acc = 0.0;
                    for (dy, row) in kernel.iter().enumerate() {
                        let Some(sy) = boundary.resolve(y as isize + dy as isize - 1, ny) else {
                            continue;
                        };
                        for (dx, w) in row.iter().enumerate() {
                            if let Some(sx) = boundary.resolve(x as isize + dx as isize - 1, nx) {
                                acc += w * src[(z * ny + sy) * nx + sx];
                            }
                        }
                    }
                    out[y * nx + x] = acc;
                }
            }
            out
        })
        .collect();
    vol.with_data(slabs.concat())
}

/// Poisson counting noise on `c = n0 exp(-a v)`, mapped back through
/// `v = -ln(max(k, 1/2) / n0) / a`. Slab `z` uses sub-stream `z`.
pub fn poisson_noise(vol: &Volume, n0: f64, a: f64, rng: &RngStream) -> Result<Volume> {
    let [nx, ny, nz] = vol.dims();
    let src = vol.data();
    let slabs: Vec<Vec<f64>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut r = rng.derive(z as u64).rng();
            src[z * nx * ny..(z + 1) * nx * ny]
                .iter()
                .map(|&v| {
                    let lambda = n0 * (-a * v).exp();
                    let k: f64 = Poisson::new(lambda)
                        .map_err(|e| Error::NonFinite(format!("Poisson rate {lambda}: {e}")))?
                        .sample(&mut r);
                    Ok(-(k.max(0.5) / n0).ln() / a)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    vol.with_data(slabs.concat())
}

/// HR -> LR: blur, then crosstalk, then (optionally) Poisson noise.
pub fn degrade(hr: &Volume, cfg: &DegradeConfig, rng: &RngStream) -> Result<Volume> {
    cfg.validate()?;
    if hr.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("degrade input".into()));
    }
    let mut v = gaussian_blur(hr, cfg.sigma, cfg.boundary)?;
    v = apply_crosstalk(&v, &cfg.crosstalk, cfg.boundary)?;
    if cfg.noise_enabled {
        v = poisson_noise(&v, cfg.n0, cfg.attenuation, &rng.derive(tags::DEGRADE))?;
    }
    Ok(v)
}

/// Half-open voxel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Roi {
    pub fn new(lo: [usize; 3], hi: [usize; 3]) -> Result<Self> {
        if (0..3).any(|d| lo[d] >= hi[d]) {
            return Err(Error::InvalidParameter(format!("empty ROI {lo:?}..{hi:?}")));
        }
        Ok(Roi { lo, hi })
    }

    pub fn whole(dims: [usize; 3]) -> Self {
        Roi { lo: [0; 3], hi: dims }
    }

    pub fn extent(&self, d: Dim) -> usize {
        self.hi[d.index()] - self.lo[d.index()]
    }

    pub fn fits(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|d| self.lo[d] < self.hi[d] && self.hi[d] <= dims[d])
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|d| (self.lo[d]..self.hi[d]).contains(&p[d]))
    }

    /// Grow by `m` voxels on every side, clipped to `dims`.
    pub fn dilate(&self, m: usize, dims: [usize; 3]) -> Roi {
        Roi {
            lo: self.lo.map(|v| v.saturating_sub(m)),
            hi: [0, 1, 2].map(|d| (self.hi[d] + m).min(dims[d])),
        }
    }
}

/// One square-wave group: bars varying along `dim` at `frequency`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarGroup {
    /// Cycles per voxel.
    pub frequency: f64,
    pub dim: Dim,
    /// Measurement box; the pattern is painted over `roi.dilate(margin)`
    /// with phase zero at `roi.lo[dim]`.
    pub roi: Roi,
}

impl BarGroup {
    /// Resolution family the group probes.
    pub fn plane(&self) -> Plane {
        match self.dim {
            Dim::Z => Plane::ThroughPlane,
            _ => Plane::InPlane,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarPhantomSpec {
    pub groups: Vec<BarGroup>,
    pub amplitude: f64,
    pub background: f64,
    pub margin: usize,
}

impl BarPhantomSpec {
    /// A layout with both bar families in one volume: in-plane groups
    /// (bars along x) fill the lower half in y, stacked in z; through-plane
    /// groups (bars along z) fill the upper half, stacked in x. Each ROI is
    /// `roi_len` long along its variation axis.
    pub fn standard(dims: [usize; 3], frequencies: &[f64], roi_len: usize) -> Result<Self> {
        let n = frequencies.len();
        let [nx, ny, nz] = dims;
        let margin = 1;
        if n == 0 || roi_len + 2 * margin > nx.min(nz) || nz / n < 2 * margin + 3 || nx / n < 2 * margin + 3 || ny < 12
        {
            return Err(Error::InvalidParameter(format!(
                "cannot lay out {n} bar groups of length {roi_len} in {dims:?}"
            )));
        }
        let half = ny / 2;
        let mut groups = Vec::with_capacity(2 * n);
        let x0 = (nx - roi_len) / 2;
        let z0 = (nz - roi_len) / 2;
        for (i, &f) in frequencies.iter().enumerate() {
            let (b0, b1) = (i * nz / n, (i + 1) * nz / n);
            groups.push(BarGroup {
                frequency: f,
                dim: Dim::X,
                roi: Roi::new([x0, 2, b0 + 2], [x0 + roi_len, half - 2, b1 - 2])?,
            });
        }
        for (i, &f) in frequencies.iter().enumerate() {
            let (b0, b1) = (i * nx / n, (i + 1) * nx / n);
            groups.push(BarGroup {
                frequency: f,
                dim: Dim::Z,
                roi: Roi::new([b0 + 2, half + 2, z0], [b1 - 2, ny - 2, z0 + roi_len])?,
            });
        }
        let spec = BarPhantomSpec {
            groups,
            amplitude: 1.0,
            background: -0.5,
            margin,
        };
        spec.validate(dims)?;
        Ok(spec)
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        for g in &self.groups {
            if !(g.frequency > 0.0 && g.frequency < 0.5) {
                return Err(Error::FrequencyOutOfRange(g.frequency));
            }
            if !g.roi.fits(dims) {
                return Err(Error::InvalidParameter(format!(
                    "ROI {:?} outside volume {dims:?}",
                    g.roi
                )));
            }
        }
        if !(self.amplitude.is_finite() && self.background.is_finite()) {
            return Err(Error::NonFinite("bar phantom levels".into()));
        }
        Ok(())
    }
}

/// Record of a generated bar phantom, consumed by the MTF harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub dims: [usize; 3],
    pub spec: BarPhantomSpec,
}

/// 1 on the first half of each period, 0 on the second.
#[inline]
pub fn square_wave(frequency: f64, offset: isize) -> f64 {
    let phase = (frequency * offset as f64 + 1e-9).rem_euclid(1.0);
    if phase < 0.5 {
        1.0
    } else {
        0.0
    }
}

pub fn gen_bar_phantom(spec: &BarPhantomSpec, dims: [usize; 3]) -> Result<(Volume, PhantomManifest)> {
    spec.validate(dims)?;
    let mut vol = Volume::filled(dims, spec.background)?;
    let mut data = vol.data().to_vec();
    for g in &spec.groups {
        let painted = g.roi.dilate(spec.margin, dims);
        let d = g.dim.index();
        for z in painted.lo[2]..painted.hi[2] {
            for y in painted.lo[1]..painted.hi[1] {
                for x in painted.lo[0]..painted.hi[0] {
                    let p = [x, y, z];
                    let on = square_wave(g.frequency, p[d] as isize - g.roi.lo[d] as isize);
                    data[vol.index(x, y, z)] = spec.background + spec.amplitude * on;
                }
            }
        }
    }
    vol = vol.with_data(data)?;
    Ok((
        vol,
        PhantomManifest {
            dims,
            spec: spec.clone(),
        },
    ))
}

/// Knobs for the anatomy-like training phantoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnatomyParams {
    /// Soft-edged ellipsoids inside the head.
    pub ellipsoids: usize,
    /// Sharp-edged boxes and spheres.
    pub inserts: usize,
    /// Thin sharp rods along random axes.
    pub rods: usize,
    /// Include the large outer ellipsoid.
    pub head: bool,
}

impl Default for AnatomyParams {
    fn default() -> Self {
        AnatomyParams {
            ellipsoids: 10,
            inserts: 12,
            rods: 6,
            head: true,
        }
    }
}

fn smooth_step(d: f64, width: f64) -> f64 {
    // d < 0 inside; logistic edge of the given width
    1.0 / (1.0 + (d / width).exp())
}

/// Sum of random smooth ellipsoids + sharp inserts, min-max mapped onto
/// `[-1, 1]`. A constant sum yields a volume of `-1`.
pub fn gen_anatomy_like(dims: [usize; 3], rng: &RngStream, params: &AnatomyParams) -> Result<Volume> {
    let mut r = rng.derive(tags::PHANTOM).rng();
    let n = dims.map(|d| d as f64);
    let centre = n.map(|v| (v - 1.0) / 2.0);
    let mut shapes: Vec<Box<dyn Fn([f64; 3]) -> f64 + Send + Sync>> = Vec::new();
    if params.head {
        let semi: [f64; 3] = [0, 1, 2].map(|d| n[d] * r.random_range(0.36..0.46));
        let c = centre;
        shapes.push(Box::new(move |p| {
            let q: f64 = (0..3).map(|d| ((p[d] - c[d]) / semi[d]).powi(2)).sum();
            smooth_step((q.sqrt() - 1.0) * semi[0], 0.6)
        }));
    }
    for _ in 0..params.ellipsoids {
        let c: [f64; 3] = [0, 1, 2].map(|d| centre[d] + n[d] * r.random_range(-0.25..0.25));
        let semi: [f64; 3] = [0, 1, 2].map(|d| n[d] * r.random_range(0.04..0.18));
        let amp = r.random_range(-0.6..0.6);
        let width = r.random_range(0.4..2.5);
        shapes.push(Box::new(move |p| {
            let q: f64 = (0..3).map(|d| ((p[d] - c[d]) / semi[d]).powi(2)).sum();
            amp * smooth_step(
                (q.sqrt() - 1.0) * semi.iter().copied().fold(f64::INFINITY, f64::min),
                width,
            )
        }));
    }
    for i in 0..params.inserts {
        let c: [f64; 3] = [0, 1, 2].map(|d| centre[d] + n[d] * r.random_range(-0.3..0.3));
        let amp = r.random_range(0.3..1.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
        if i % 2 == 0 {
            let h: [f64; 3] = [0, 1, 2].map(|d| r.random_range(1.0..(0.12 * n[d]).max(1.5)));
            shapes.push(Box::new(move |p| {
                if (0..3).all(|d| (p[d] - c[d]).abs() <= h[d]) {
                    amp
                } else {
                    0.0
                }
            }));
        } else {
            let rad = r.random_range(1.0..(0.08 * n[0]).max(1.5));
            shapes.push(Box::new(move |p| {
                let q: f64 = (0..3).map(|d| (p[d] - c[d]).powi(2)).sum();
                if q <= rad * rad {
                    amp
                } else {
                    0.0
                }
            }));
        }
    }
    for _ in 0..params.rods {
        let axis = r.random_range(0..3usize);
        let c: [f64; 3] = [0, 1, 2].map(|d| centre[d] + n[d] * r.random_range(-0.3..0.3));
        let rad = r.random_range(0.5..2.0);
        let amp = r.random_range(0.4..1.0);
        shapes.push(Box::new(move |p| {
            let q: f64 = (0..3).filter(|&d| d != axis).map(|d| (p[d] - c[d]).powi(2)).sum();
            if q <= rad * rad {
                amp
            } else {
                0.0
            }
        }));
    }
    let raw = Volume::from_fn(dims, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        shapes.iter().map(|s| s(p)).sum()
    })?;
    let (lo, hi) = raw.min_max();
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return Volume::filled(dims, -1.0);
    }
    let data = raw.data().iter().map(|v| 2.0 * (v - lo) / (hi - lo) - 1.0).collect();
    raw.with_data(data)
}

/// `n` anatomy-like HR volumes and their degraded LR counterparts.
/// Volume `i` uses sub-stream `i` of `seed`, so generation is parallel
/// and reproducible.
pub fn make_dataset(
    n: usize,
    dims: [usize; 3],
    params: &AnatomyParams,
    cfg: &DegradeConfig,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    cfg.validate()?;
    let root = RngStream::new(seed);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let s = root.derive(i as u64);
            let hr = gen_anatomy_like(dims, &s, params)?;
            let lr = degrade(&hr, cfg, &s)?;
            TrainingPair::new(lr, hr)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sinusoid(dims: [usize; 3], dim: Dim, f: f64) -> Volume {
        Volume::from_fn(dims, |x, y, z| (2.0 * PI * f * [x, y, z][dim.index()] as f64).cos()).unwrap()
    }

    fn dft_amplitude(line: &[f64], f: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, v) in line.iter().enumerate() {
            re += v * (2.0 * PI * f * n as f64).cos();
            im -= v * (2.0 * PI * f * n as f64).sin();
        }
        2.0 * re.hypot(im) / line.len() as f64
    }

    #[test]
    fn default_sigma_from_geometry() {
        let s = Geometry::default().sigma();
        let third = 1.0 / 3.0;
        assert!((s[0] - 2.0 * (third * third * 2.0f64).sqrt()).abs() < 1e-12);
        assert!((s[2] - 2.0 * ((0.15f64 / 0.85).powi(2) + third * third).sqrt()).abs() < 1e-12);
        let g = Geometry {
            focal_ratio: 1.0,
            ..Geometry::default()
        };
        assert!((g.sigma()[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        DegradeConfig::default().validate().unwrap();
        let mut c = DegradeConfig::default();
        c.sigma[1] = -0.1;
        assert!(c.validate().is_err());
        let mut c = DegradeConfig::default();
        c.crosstalk[0][0] += 0.1;
        assert!(c.validate().is_err());
        let mut c = DegradeConfig::default();
        c.n0 = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn identity_degradation_is_exact() {
        let hr = gen_anatomy_like([9, 8, 7], &RngStream::new(1), &AnatomyParams::default()).unwrap();
        let lr = degrade(&hr, &DegradeConfig::identity(), &RngStream::new(2)).unwrap();
        assert_eq!(lr, hr);
    }

    #[test]
    fn blur_attenuates_sinusoid_analytically() {
        for &sigma in &[0.5, 1.0, 2.0] {
            for &f in &[0.0625, 0.125, 0.25, 0.375] {
                let dims = [32, 3, 2];
                let v = sinusoid(dims, Dim::X, f);
                let b = gaussian_blur_axis(&v, Dim::X, sigma, Boundary::Periodic).unwrap();
                let line: Vec<f64> = (0..32).map(|x| b.get(x, 1, 1)).collect();
                let want = (-2.0 * PI * PI * sigma * sigma * f * f).exp();
                assert!(
                    (dft_amplitude(&line, f) - want).abs() < 0.01 * want.max(1e-3),
                    "{sigma} {f}"
                );
            }
        }
    }

    #[test]
    fn fft_blur_matches_direct_circular_convolution() {
        // kernel from a naive inverse DFT of the transfer function
        let n = 20;
        let sigma = 1.3;
        let h: Vec<f64> = (0..n)
            .map(|m| {
                (0..n)
                    .map(|k| {
                        let f = k.min(n - k) as f64 / n as f64;
                        (-2.0 * PI * PI * sigma * sigma * f * f).exp() * (2.0 * PI * (k * m) as f64 / n as f64).cos()
                    })
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        let v = Volume::new([2, n, 3], [1.0; 3], RngStream::new(5).normals(2 * n * 3)).unwrap();
        let b = gaussian_blur_axis(&v, Dim::Y, sigma, Boundary::Periodic).unwrap();
        for x in 0..2 {
            for z in 0..3 {
                for y in 0..n {
                    let want: f64 = (0..n).map(|j| h[(y + n - j) % n] * v.get(x, j, z)).sum();
                    assert!((b.get(x, y, z) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn degradation_preserves_flat_fields() {
        let v = Volume::filled([10, 9, 8], 0.37).unwrap();
        let cfg = DegradeConfig {
            noise_enabled: false,
            ..DegradeConfig::default()
        };
        for boundary in [Boundary::Replicate, Boundary::Periodic] {
            let lr = degrade(
                &v,
                &DegradeConfig {
                    boundary,
                    ..cfg.clone()
                },
                &RngStream::new(0),
            )
            .unwrap();
            assert!((lr.mean() - 0.37).abs() < 1e-10);
        }
    }

    #[test]
    fn crosstalk_commutes_with_blur_on_periodic_fields() {
        let v = Volume::new([8, 7, 6], [1.0; 3], RngStream::new(3).normals(336)).unwrap();
        let s = [0.8, 1.1, 0.6];
        let a = apply_crosstalk(
            &gaussian_blur(&v, s, Boundary::Periodic).unwrap(),
            &DEFAULT_CROSSTALK,
            Boundary::Periodic,
        )
        .unwrap();
        let b = gaussian_blur(
            &apply_crosstalk(&v, &DEFAULT_CROSSTALK, Boundary::Periodic).unwrap(),
            s,
            Boundary::Periodic,
        )
        .unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn poisson_variance_scales_inversely_with_counts() {
        let flat = Volume::filled([64, 64, 8], 0.0).unwrap();
        let var = |n0: f64| {
            let v = poisson_noise(&flat, n0, 2.0, &RngStream::new(11)).unwrap();
            let m = v.mean();
            v.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let (a, b) = (var(2000.0), var(4000.0));
        assert!((a / b - 2.0).abs() < 0.2, "{a} {b}");
        // delta method: var ~ 1 / (a^2 n0)
        assert!((a * 4.0 * 2000.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn noise_is_seeded() {
        let hr = gen_anatomy_like([8, 8, 8], &RngStream::new(1), &AnatomyParams::default()).unwrap();
        let cfg = DegradeConfig::default();
        assert_eq!(
            degrade(&hr, &cfg, &RngStream::new(4)).unwrap(),
            degrade(&hr, &cfg, &RngStream::new(4)).unwrap()
        );
        assert_ne!(
            degrade(&hr, &cfg, &RngStream::new(4)).unwrap(),
            degrade(&hr, &cfg, &RngStream::new(5)).unwrap()
        );
    }

    #[test]
    fn quarter_frequency_bars_are_two_on_two_off() {
        let spec = BarPhantomSpec {
            groups: vec![BarGroup {
                frequency: 0.25,
                dim: Dim::X,
                roi: Roi::new([0, 0, 0], [12, 1, 1]).unwrap(),
            }],
            amplitude: 1.0,
            background: 0.0,
            margin: 0,
        };
        let (v, m) = gen_bar_phantom(&spec, [12, 1, 1]).unwrap();
        assert_eq!(v.data(), &[1., 1., 0., 0., 1., 1., 0., 0., 1., 1., 0., 0.]);
        assert_eq!(m.spec.groups.len(), 1);
    }

    #[test]
    fn zero_amplitude_is_constant() {
        let mut spec = BarPhantomSpec::standard([32, 32, 32], &[0.15, 0.2, 0.25, 0.3], 20).unwrap();
        spec.amplitude = 0.0;
        let (v, _) = gen_bar_phantom(&spec, [32, 32, 32]).unwrap();
        assert!(v.data().iter().all(|&x| x == spec.background));
    }

    #[test]
    fn bars_peak_at_their_frequency() {
        let freqs = [0.15, 0.2, 0.25, 0.3];
        let spec = BarPhantomSpec::standard([32, 32, 32], &freqs, 20).unwrap();
        let (v, _) = gen_bar_phantom(&spec, [32, 32, 32]).unwrap();
        for g in &spec.groups {
            let d = g.dim.index();
            let len = g.roi.extent(g.dim);
            let mut p = g.roi.lo;
            let line: Vec<f64> = (0..len)
                .map(|i| {
                    p[d] = g.roi.lo[d] + i;
                    v.get(p[0], p[1], p[2])
                })
                .collect();
            let mean = line.iter().sum::<f64>() / len as f64;
            let centred: Vec<f64> = line.iter().map(|x| x - mean).collect();
            let peak = (1..len / 2)
                .max_by(|a, b| {
                    let fa = dft_amplitude(&centred, *a as f64 / len as f64);
                    let fb = dft_amplitude(&centred, *b as f64 / len as f64);
                    fa.total_cmp(&fb)
                })
                .unwrap();
            assert_eq!(peak, (g.frequency * len as f64).round() as usize);
        }
    }

    #[test]
    fn bar_spec_rejects_nyquist_and_outside_rois() {
        let mut spec = BarPhantomSpec::standard([32, 32, 32], &[0.1, 0.2], 20).unwrap();
        spec.groups[0].frequency = 0.5;
        assert!(matches!(
            gen_bar_phantom(&spec, [32, 32, 32]),
            Err(Error::FrequencyOutOfRange(_))
        ));
        let spec = BarPhantomSpec::standard([32, 32, 32], &[0.1, 0.2], 20).unwrap();
        assert!(gen_bar_phantom(&spec, [16, 32, 32]).is_err());
        for g in &spec.groups {
            assert!(
                spec.groups
                    .iter()
                    .filter(|h| h.roi.dilate(1, [32; 3]).contains(g.roi.lo))
                    .count()
                    == 1
            );
        }
    }

    #[test]
    fn anatomy_phantoms() {
        let p = AnatomyParams::default();
        let a = gen_anatomy_like([24, 24, 24], &RngStream::new(3), &p).unwrap();
        assert_eq!(a, gen_anatomy_like([24, 24, 24], &RngStream::new(3), &p).unwrap());
        let (lo, hi) = a.min_max();
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        let mut s = a.data().to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| s[((s.len() - 1) as f64 * p) as usize];
        assert!(q(0.95) - q(0.05) > 0.5, "{} {}", q(0.05), q(0.95));
        let none = AnatomyParams {
            ellipsoids: 0,
            inserts: 0,
            rods: 0,
            head: false,
        };
        let c = gen_anatomy_like([5, 5, 5], &RngStream::new(3), &none).unwrap();
        assert!(c.data().iter().all(|&v| v == c.data()[0]));
    }

    #[test]
    fn dataset_pairs() {
        assert!(
            make_dataset(0, [8, 8, 8], &AnatomyParams::default(), &DegradeConfig::default(), 1)
                .unwrap()
                .is_empty()
        );
        let a = make_dataset(2, [12, 12, 12], &AnatomyParams::default(), &DegradeConfig::default(), 1).unwrap();
        let b = make_dataset(2, [12, 12, 12], &AnatomyParams::default(), &DegradeConfig::default(), 1).unwrap();
        assert_eq!(a.len(), 2);
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.lr, q.lr);
            assert_eq!(p.hr, q.hr);
            let diff =
                p.lr.data()
                    .iter()
                    .zip(p.hr.data())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
            assert!(diff > 0.0);
        }
        assert_ne!(a[0].hr, a[1].hr);
    }
}
