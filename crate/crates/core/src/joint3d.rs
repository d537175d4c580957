//! Volumetric sampling from 2D slice denoisers.
//!
//! A reverse step along one axis denoises every slice of that orientation
//! independently. `XYZ-ALL` changes the axis every step so that one chain
//! of `T` sweeps touches all three orientations; `XYZ-LAST` runs one full
//! chain per orientation and merges the final volumes with weights
//! `(lambda_h, lambda_c, lambda_s)`.
//!
//! Step noise is a property of the volume, not of the slicing: the field
//! for step `t` is drawn z-slab by z-slab from sub-streams addressed by
//! `(t, z)`. Slicing the same field along any axis therefore gives
//! synchronised noise, and results never depend on worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::diffusion::{reverse_step_with_noise, slab_noise, DiffusionProcess};
use crate::error::{Error, Result};
use crate::rng::{tags, RngStream};
use crate::volume::{assemble_slices, Axis, Plane, Slice2D, Volume};

/// Sampling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum JointMode {
    /// Alternate the slicing axis every reverse step.
    XyzAll,
    /// Independent per-orientation chains merged at the end.
    XyzLast,
    /// One orientation only.
    TwoD(Axis),
}

impl JointMode {
    pub fn name(&self) -> String {
        match self {
            JointMode::XyzAll => "xyz-all".into(),
            JointMode::XyzLast => "xyz-last".into(),
            JointMode::TwoD(a) => format!("2d-{a}"),
        }
    }
}

impl From<JointMode> for String {
    fn from(m: JointMode) -> String {
        m.name()
    }
}

impl TryFrom<String> for JointMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::str::FromStr for JointMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz-all" | "ddpm-xyz-all" => Ok(JointMode::XyzAll),
            "xyz-last" | "ddpm-xyz-last" => Ok(JointMode::XyzLast),
            other => match other.strip_prefix("2d-") {
                Some(axis) => Ok(JointMode::TwoD(axis.parse()?)),
                None => Err(Error::InvalidParameter(format!("unknown mode '{other}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointConfig {
    /// Merge weights for the axial, coronal and sagittal results.
    pub lambdas: [f64; 3],
    /// Axis cycle for `XYZ-ALL`; step `t` uses `axis_order[(T - t) % len]`.
    pub axis_order: Vec<Axis>,
    pub mode: JointMode,
    /// Drive the three `XYZ-LAST` chains with one shared noise stream.
    pub sync_last_chains: bool,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            lambdas: [1.0; 3],
            axis_order: vec![Axis::Axial, Axis::Coronal, Axis::Sagittal],
            mode: JointMode::XyzAll,
            sync_last_chains: false,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambdas(self.lambdas)?;
        if self.axis_order.is_empty() {
            return Err(Error::InvalidParameter("axis order is empty".into()));
        }
        Ok(())
    }
}

fn check_lambdas(l: [f64; 3]) -> Result<()> {
    if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || l.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "merge weights {l:?} must be nonnegative and not all zero"
        )));
    }
    Ok(())
}

/// The two networks: one for axial slices, one shared by coronal and
/// sagittal slices.
#[derive(Clone, Copy)]
pub struct PlaneDenoisers<'a> {
    pub in_plane: &'a dyn Denoiser,
    pub through_plane: &'a dyn Denoiser,
}

impl<'a> PlaneDenoisers<'a> {
    pub fn new(in_plane: &'a dyn Denoiser, through_plane: &'a dyn Denoiser) -> Self {
        PlaneDenoisers {
            in_plane,
            through_plane,
        }
    }

    /// Use one plane-agnostic denoiser everywhere.
    pub fn shared(d: &'a dyn Denoiser) -> Self {
        PlaneDenoisers::new(d, d)
    }

    pub fn for_axis(&self, axis: Axis) -> &'a dyn Denoiser {
        match axis.plane() {
            Plane::InPlane => self.in_plane,
            Plane::ThroughPlane => self.through_plane,
        }
    }
}

/// Denoiser workload of a sampling run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    /// Individual 2D predictions.
    pub denoiser_calls: u64,
    /// Full passes over all slices of one orientation.
    pub sweeps: u64,
}

impl std::ops::AddAssign for CallCounts {
    fn add_assign(&mut self, o: CallCounts) {
        self.denoiser_calls += o.denoiser_calls;
        self.sweeps += o.sweeps;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub volume: Volume,
    pub counts: CallCounts,
    /// Axis used at each iteration, first iteration (t = T) first. For
    /// `XYZ-LAST` this lists one chain's axis per chain.
    pub axes: Vec<Axis>,
}

/// Voxelwise `(l_h v_h + l_c v_c + l_s v_s) / (l_h + l_c + l_s)`.
pub fn merge_weighted(v_h: &Volume, v_c: &Volume, v_s: &Volume, lambdas: [f64; 3]) -> Result<Volume> {
    v_h.same_dims(v_c)?;
    v_h.same_dims(v_s)?;
    check_lambdas(lambdas)?;
    let total: f64 = lambdas.iter().sum();
    let w = lambdas.map(|l| l / total);
    let data = v_h
        .data()
        .iter()
        .zip(v_c.data())
        .zip(v_s.data())
        .map(|((&h, &c), &s)| {
            let m = w[0] * h + w[1] * c + w[2] * s;
            // rounding can leave the convex combination a ulp outside its inputs
            m.clamp(h.min(c).min(s), h.max(c).max(s))
        })
        .collect();
    v_h.with_data(data)
}

/// Unit Gaussian field over a volume; slab `z` comes from sub-stream `(tag, z)`.
pub fn volume_noise(rng: &RngStream, tag: u64, dims: [usize; 3]) -> Vec<f64> {
    let slab = dims[0] * dims[1];
    (0..dims[2])
        .into_par_iter()
        .map(|z| slab_noise(rng, tag, z, slab))
        .collect::<Vec<_>>()
        .concat()
}

fn check_plane(denoiser: &dyn Denoiser, axis: Axis) -> Result<()> {
    match denoiser.plane() {
        Some(p) if p != axis.plane() => Err(Error::InvalidParameter(format!(
            "{} denoiser used on {axis} slices",
            p.name()
        ))),
        _ => Ok(()),
    }
}

/// Apply one reverse step to every slice of `vol_t` along `axis`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step_axis(
    process: &DiffusionProcess,
    vol_t: &Volume,
    axis: Axis,
    denoiser: &dyn Denoiser,
    x_vol: &Volume,
    t: usize,
    rng: &RngStream,
) -> Result<(Volume, CallCounts)> {
    vol_t.same_dims(x_vol)?;
    process.schedule.check_step(t)?;
    check_plane(denoiser, axis)?;
    let noise = if t > 1 && process.step_std(t) > 0.0 {
        Some(vol_t.with_data(volume_noise(rng, tags::STEP | t as u64, vol_t.dims()))?)
    } else {
        None
    };
    let n = vol_t.slice_count(axis);
    let slices: Vec<Slice2D> = (0..n)
        .into_par_iter()
        .map(|k| {
            let y = vol_t.slice(axis, k);
            let x = x_vol.slice(axis, k);
            let eps = noise.as_ref().map(|v| v.slice(axis, k).data).unwrap_or_default();
            reverse_step_with_noise(process, denoiser, &x, &y, t, &eps)
        })
        .collect::<Result<_>>()?;
    let out = assemble_slices(&slices, axis)?.with_spacing(vol_t.spacing())?;
    Ok((
        out,
        CallCounts {
            denoiser_calls: n as u64,
            sweeps: 1,
        },
    ))
}

fn run_chain(
    process: &DiffusionProcess,
    x_vol: &Volume,
    denoisers: PlaneDenoisers<'_>,
    rng: &RngStream,
    order: &[Axis],
) -> Result<SampleOutput> {
    if order.is_empty() {
        return Err(Error::InvalidParameter("axis order is empty".into()));
    }
    let steps = process.schedule.steps();
    let mut y = x_vol.with_data(volume_noise(rng, tags::INIT, x_vol.dims()))?;
    let mut counts = CallCounts::default();
    let mut axes = Vec::with_capacity(steps);
    for t in (1..=steps).rev() {
        let axis = order[(steps - t) % order.len()];
        let (next, c) = reverse_step_axis(process, &y, axis, denoisers.for_axis(axis), x_vol, t, rng)?;
        y = next;
        counts += c;
        axes.push(axis);
    }
    Ok(SampleOutput {
        volume: y,
        counts,
        axes,
    })
}

/// Alternating-axis joint inference: one sweep per reverse step.
pub fn sample_xyz_all(
    process: &DiffusionProcess,
    x_vol: &Volume,
    denoisers: PlaneDenoisers<'_>,
    rng: &RngStream,
    cfg: &JointConfig,
) -> Result<SampleOutput> {
    cfg.validate()?;
    run_chain(process, x_vol, denoisers, rng, &cfg.axis_order)
}

/// Slice-by-slice chain along a single axis.
pub fn sample_2d_only(
    process: &DiffusionProcess,
    x_vol: &Volume,
    axis: Axis,
    denoiser: &dyn Denoiser,
    rng: &RngStream,
) -> Result<SampleOutput> {
    run_chain(process, x_vol, PlaneDenoisers::shared(denoiser), rng, &[axis])
}

/// Stream driving chain `i` of `XYZ-LAST`.
pub fn last_chain_stream(rng: &RngStream, i: usize, sync: bool) -> RngStream {
    if sync {
        *rng
    } else {
        rng.derive(tags::CHAIN | i as u64)
    }
}

/// Three independent per-orientation chains, merged after the last step.
pub fn sample_xyz_last(
    process: &DiffusionProcess,
    x_vol: &Volume,
    denoisers: PlaneDenoisers<'_>,
    rng: &RngStream,
    cfg: &JointConfig,
) -> Result<SampleOutput> {
    cfg.validate()?;
    let chains: Vec<SampleOutput> = Axis::ALL
        .par_iter()
        .enumerate()
        .map(|(i, &axis)| {
            let stream = last_chain_stream(rng, i, cfg.sync_last_chains);
            sample_2d_only(process, x_vol, axis, denoisers.for_axis(axis), &stream)
        })
        .collect::<Result<_>>()?;
    let volume = merge_weighted(&chains[0].volume, &chains[1].volume, &chains[2].volume, cfg.lambdas)?;
    let mut counts = CallCounts::default();
    for c in &chains {
        counts += c.counts;
    }
    Ok(SampleOutput {
        volume,
        counts,
        axes: Axis::ALL.to_vec(),
    })
}

/// Dispatch on `cfg.mode`.
pub fn sample_volume(
    process: &DiffusionProcess,
    x_vol: &Volume,
    denoisers: PlaneDenoisers<'_>,
    rng: &RngStream,
    cfg: &JointConfig,
) -> Result<SampleOutput> {
    match cfg.mode {
        JointMode::XyzAll => sample_xyz_all(process, x_vol, denoisers, rng, cfg),
        JointMode::XyzLast => sample_xyz_last(process, x_vol, denoisers, rng, cfg),
        JointMode::TwoD(axis) => sample_2d_only(process, x_vol, axis, denoisers.for_axis(axis), rng),
    }
}
