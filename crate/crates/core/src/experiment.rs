//! The scaled-down end-to-end study: simulate, train both predictors,
//! super-resolve a held-out bar phantom with every sampler and measure
//! MTFs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::{train, ConvDenoiser, LayerSpec, TrainConfig, TrainReport};
use crate::diffusion::DiffusionProcess;
use crate::error::Result;
use crate::eval::{mtf_curve, MtfCurve};
use crate::joint3d::{
    last_chain_stream, merge_weighted, sample_2d_only, sample_xyz_all, CallCounts, JointConfig, PlaneDenoisers,
};
use crate::rng::{tags, RngStream};
use crate::schedule::{build_schedule, ScheduleKind, DEFAULT_STEPS};
use crate::simulate::{degrade, gen_bar_phantom, make_dataset, AnatomyParams, BarPhantomSpec, DegradeConfig};
use crate::volume::{Axis, Plane};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeskConfig {
    pub seed: u64,
    pub volumes: usize,
    pub volume_dims: [usize; 3],
    pub anatomy: AnatomyParams,
    pub degrade: DegradeConfig,
    pub net: LayerSpec,
    pub train: TrainConfig,
    /// Steps of the training schedule.
    pub train_steps: usize,
    /// Steps of the sampling schedule; the total noise budget is kept.
    pub inference_steps: usize,
    pub phantom_dims: [usize; 3],
    pub frequencies: Vec<f64>,
    pub roi_len: usize,
    pub joint: JointConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig {
            seed: 0,
            volumes: 8,
            volume_dims: [64; 3],
            anatomy: AnatomyParams::default(),
            degrade: DegradeConfig::default(),
            net: LayerSpec::desk(),
            train: TrainConfig::desk(),
            train_steps: DEFAULT_STEPS,
            inference_steps: 200,
            phantom_dims: [32; 3],
            frequencies: vec![0.15, 0.2, 0.25, 0.3],
            roi_len: 20,
            joint: JointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskResult {
    pub seed: u64,
    pub in_plane_report: TrainReport,
    pub through_plane_report: TrainReport,
    /// `(method, curve)`; methods are `lr`, `2d-axial`, `2d-coronal`,
    /// `2d-sagittal`, `xyz-all` and `xyz-last`.
    pub in_plane: Vec<MtfCurve>,
    pub through_plane: Vec<MtfCurve>,
    pub counts_xyz_all: CallCounts,
    pub counts_xyz_last: CallCounts,
    pub timings_s: Vec<(String, f64)>,
}

fn halves(r: &TrainReport) -> bool {
    let n = r.losses.len();
    let w = 500.min(n / 2);
    w > 0 && r.mean_loss(n - w..n) <= 0.5 * r.mean_loss(0..w)
}

impl DeskResult {
    pub fn curve(&self, plane: Plane, method: &str) -> &MtfCurve {
        let list = match plane {
            Plane::InPlane => &self.in_plane,
            Plane::ThroughPlane => &self.through_plane,
        };
        list.iter().find(|c| c.method == method).expect("method present")
    }

    /// Final 500-iteration mean loss at most half the first 500.
    pub fn loss_halved(&self) -> bool {
        halves(&self.in_plane_report) && halves(&self.through_plane_report)
    }

    fn dominates(&self, plane: Plane, method: &str, base: &str) -> bool {
        let a = self.curve(plane, method).modulations();
        let b = self.curve(plane, base).modulations();
        a.iter().zip(&b).all(|(x, y)| x >= y)
    }

    /// Every sampler beats LR on the plane its networks target.
    pub fn sr_beats_lr(&self) -> bool {
        let inp = ["2d-axial", "xyz-all", "xyz-last"];
        let thr = ["2d-coronal", "2d-sagittal", "xyz-all", "xyz-last"];
        inp.iter().all(|m| self.dominates(Plane::InPlane, m, "lr"))
            && thr.iter().all(|m| self.dominates(Plane::ThroughPlane, m, "lr"))
    }

    /// XYZ-ALL through-plane MTF at least the axial-only one at the two
    /// highest frequencies.
    pub fn xyz_all_beats_axial(&self) -> bool {
        let a = self.curve(Plane::ThroughPlane, "xyz-all").modulations();
        let b = self.curve(Plane::ThroughPlane, "2d-axial").modulations();
        let n = a.len();
        n >= 2 && (n - 2..n).all(|i| a[i] >= b[i])
    }
}

pub fn run_desk(cfg: &DeskConfig) -> Result<DeskResult> {
    let root = RngStream::new(cfg.seed);
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let pairs = make_dataset(cfg.volumes, cfg.volume_dims, &cfg.anatomy, &cfg.degrade, cfg.seed)?;
    lap("simulate", &mut timings);

    let train_schedule = build_schedule(ScheduleKind::linear_for_steps(cfg.train_steps), cfg.train_steps)?;
    let mut nets = Vec::new();
    let mut reports = Vec::new();
    for (i, plane) in [Plane::InPlane, Plane::ThroughPlane].into_iter().enumerate() {
        let mut net = ConvDenoiser::new(cfg.net, plane, cfg.seed.wrapping_add(i as u64))?;
        let tc = TrainConfig {
            seed: cfg.seed.wrapping_mul(31).wrapping_add(i as u64),
            ..cfg.train.clone()
        };
        reports.push(train(&mut net, &pairs, &train_schedule, &tc)?);
        nets.push(net);
    }
    lap("train", &mut timings);

    let spec = BarPhantomSpec::standard(cfg.phantom_dims, &cfg.frequencies, cfg.roi_len)?;
    let (hr, manifest) = gen_bar_phantom(&spec, cfg.phantom_dims)?;
    let lr = degrade(&hr, &cfg.degrade, &root.derive(tags::HELD_OUT))?;
    let steps = cfg.inference_steps;
    let process = DiffusionProcess::new(build_schedule(ScheduleKind::linear_for_steps(steps), steps)?);
    let den = PlaneDenoisers::new(&nets[0], &nets[1]);
    let infer = root.derive(tags::SAMPLE);

    let all = sample_xyz_all(&process, &lr, den, &infer, &cfg.joint)?;
    lap("xyz-all", &mut timings);
    // the XYZ-LAST chains double as the single-orientation baselines
    let mut chains = Vec::new();
    let mut counts_last = CallCounts::default();
    for (i, axis) in Axis::ALL.into_iter().enumerate() {
        let stream = last_chain_stream(&infer, i, cfg.joint.sync_last_chains);
        let out = sample_2d_only(&process, &lr, axis, den.for_axis(axis), &stream)?;
        counts_last += out.counts;
        chains.push(out.volume);
    }
    let last = merge_weighted(&chains[0], &chains[1], &chains[2], cfg.joint.lambdas)?;
    lap("xyz-last", &mut timings);

    let outputs = [
        ("lr", &lr),
        ("2d-axial", &chains[0]),
        ("2d-coronal", &chains[1]),
        ("2d-sagittal", &chains[2]),
        ("xyz-all", &all.volume),
        ("xyz-last", &last),
    ];
    let curves = |plane| {
        outputs
            .iter()
            .map(|(m, v)| mtf_curve(v, &manifest, &hr, plane, m))
            .collect::<Result<Vec<_>>>()
    };
    Ok(DeskResult {
        seed: cfg.seed,
        in_plane_report: reports.remove(0),
        through_plane_report: reports.remove(0),
        in_plane: curves(Plane::InPlane)?,
        through_plane: curves(Plane::ThroughPlane)?,
        counts_xyz_all: all.counts,
        counts_xyz_last: counts_last,
        timings_s: timings,
    })
}
