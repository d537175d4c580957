use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use volsr::denoiser::{train as train_net, ConvDenoiser, LayerSpec, TrainConfig};
use volsr::diffusion::DiffusionProcess;
use volsr::eval::{compare_report, fidelity_metrics, mtf_curve};
use volsr::io::{
    read_checkpoint, read_dataset, read_json, read_volume, write_atomic, write_checkpoint, write_dataset, write_json,
    write_volume, FileRecord, RunManifest, VolumeMeta, DATASET_MANIFEST,
};
use volsr::joint3d::{sample_volume, JointConfig, JointMode, PlaneDenoisers};
use volsr::rng::{tags, RngStream};
use volsr::schedule::{build_schedule, ScheduleKind};
use volsr::simulate::{degrade, gen_bar_phantom, make_dataset, BarPhantomSpec, PhantomManifest};
use volsr::volume::{denormalize, normalize, Axis, Plane};

use crate::{CliError, EvalArgs, Globals, InferArgs, SimulateArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.display().to_string()))
    }
}

fn require_volume(path: &Path) -> Result<()> {
    require(&path.with_extension("json"))?;
    require(&path.with_extension("raw"))
}

fn file_record(path: &Path) -> Result<FileRecord> {
    let bytes = std::fs::read(path).map_err(|e| volsr::Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(FileRecord {
        path: path.display().to_string(),
        sha256: volsr::io::sha256_hex(&bytes),
    })
}

fn config_err(e: volsr::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn triple<T: Copy>(v: &[T], flag: &str) -> Result<[T; 3]> {
    match v {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(CliError::Config(format!("--{flag} takes three comma-separated values"))),
    }
}

fn finish(mut manifest: RunManifest, g: &Globals, path: &Path, started: Instant) -> Result<()> {
    manifest.threads = g.threads;
    manifest
        .timings_s
        .insert("total".into(), started.elapsed().as_secs_f64());
    write_json(path, &manifest)?;
    Ok(())
}

pub fn simulate(g: &Globals, a: SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let mut sec = g.config.simulate.clone();
    if let Some(n) = a.n {
        sec.n = n;
    }
    if let Some(d) = &a.dims {
        sec.dims = triple(d, "dims")?;
    }
    if a.no_noise {
        sec.degrade.noise_enabled = false;
    }
    sec.degrade.validate().map_err(config_err)?;
    let out = a.out.clone().unwrap_or_else(|| g.output_dir.join("dataset"));

    let pairs = make_dataset(sec.n, sec.dims, &sec.anatomy, &sec.degrade, a.seed)?;
    let bars = if a.bars {
        let p = &sec.phantom;
        let spec = BarPhantomSpec::standard(p.dims, &p.frequencies, p.roi_len).map_err(config_err)?;
        let (hr, manifest) = gen_bar_phantom(&spec, p.dims).map_err(config_err)?;
        let lr = degrade(&hr, &sec.degrade, &RngStream::new(a.seed).derive(tags::HELD_OUT))?;
        Some((hr, lr, manifest))
    } else {
        None
    };
    let t_gen = started.elapsed().as_secs_f64();

    let dm = write_dataset(&out, &pairs, a.seed, &sec.degrade, &sec.anatomy)?;
    let mut run = RunManifest::new(
        "simulate",
        Some(a.seed),
        serde_json::to_value(&sec).map_err(volsr::Error::from)?,
    );
    for p in &dm.pairs {
        for r in [&p.lr, &p.hr] {
            run.outputs.push(FileRecord {
                path: out.join(&r.path).display().to_string(),
                sha256: r.sha256.clone(),
            });
        }
    }
    if let Some((hr, lr, manifest)) = bars {
        let meta = VolumeMeta {
            window: None,
            seed: Some(a.seed),
        };
        for (name, v) in [("bars_hr", &hr), ("bars_lr", &lr)] {
            let h = write_volume(v, &out.join(name), meta)?;
            run.outputs.push(FileRecord::volume(&out.join(name), &h));
        }
        write_json(&out.join("phantom.json"), &manifest)?;
    }
    run.timings_s.insert("generate".into(), t_gen);
    run.results = json!({ "pairs": dm.pairs.len(), "manifest": out.join(DATASET_MANIFEST) });
    finish(run, g, &out.join("run.json"), started)?;
    println!("wrote {} pairs to {}", dm.pairs.len(), out.display());
    Ok(())
}

pub fn train(g: &Globals, a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let manifest_path = if a.data.is_dir() {
        a.data.join(DATASET_MANIFEST)
    } else {
        a.data.clone()
    };
    require(&manifest_path)?;
    let plane: Plane = a.plane.parse().map_err(config_err)?;
    let sec = g.config.train.clone();
    let mut tc = TrainConfig {
        learning_rate: sec.learning_rate,
        batch_size: sec.batch_size,
        patch_size: sec.patch_size,
        iterations: sec.iterations,
        loss: sec.loss,
        lr_decay: sec.lr_decay,
        seed: a.seed,
    };
    let mut spec = sec.net;
    if a.desk {
        tc = TrainConfig {
            seed: a.seed,
            ..TrainConfig::desk()
        };
        spec = LayerSpec::desk();
    }
    if let Some(v) = a.iterations {
        tc.iterations = v;
    }
    if let Some(v) = a.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = a.patch_size {
        tc.patch_size = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    tc.validate().map_err(config_err)?;
    let kind = ScheduleKind::linear_for_steps(sec.steps);
    let schedule = build_schedule(kind, sec.steps).map_err(config_err)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| g.output_dir.join(format!("{}.ckpt", plane.name())));

    let (pairs, _) = read_dataset(&manifest_path)?;
    let mut net = ConvDenoiser::new(spec, plane, a.seed).map_err(config_err)?;
    let report = train_net(&mut net, &pairs, &schedule, &tc).map_err(|e| match e {
        volsr::Error::InvalidParameter(_) | volsr::Error::EmptyDataset => config_err(e),
        other => other.into(),
    })?;
    let n = report.losses.len();
    let w = 500.min(n);
    let training = json!({
        "config": tc,
        "schedule": kind,
        "steps": sec.steps,
        "dataset": manifest_path.display().to_string(),
        "loss_first": if w > 0 { report.mean_loss(0..w) } else { f64::NAN },
        "loss_last": if w > 0 { report.mean_loss(n - w..n) } else { f64::NAN },
    });
    let header = write_checkpoint(&out, &net, training.clone())?;
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    let loss_path = out.with_extension("loss.csv");
    write_atomic(&loss_path, csv.as_bytes())?;

    let mut run = RunManifest::new(
        "train",
        Some(a.seed),
        json!({ "train": tc, "net": spec, "steps": sec.steps }),
    );
    run.inputs.push(file_record(&manifest_path)?);
    run.outputs.push(FileRecord {
        path: out.display().to_string(),
        sha256: header.weights_sha256.clone(),
    });
    run.results = json!({ "checkpoint_id": header.id(), "plane": plane, "training": training });
    finish(run, g, &out.with_extension("run.json"), started)?;
    println!(
        "checkpoint {} ({}) written to {}",
        header.id(),
        plane.name(),
        out.display()
    );
    Ok(())
}

fn axes_of(mode: JointMode, order: &[Axis]) -> Vec<Axis> {
    match mode {
        JointMode::XyzAll => order.to_vec(),
        JointMode::XyzLast => Axis::ALL.to_vec(),
        JointMode::TwoD(a) => vec![a],
    }
}

pub fn infer(g: &Globals, a: InferArgs) -> Result<()> {
    let started = Instant::now();
    require_volume(&a.input)?;
    let mut sec = g.config.infer.clone();
    if let Some(m) = &a.mode {
        sec.mode = m.parse().map_err(config_err)?;
    }
    if let Some(s) = a.steps {
        sec.steps = s;
    }
    if let Some(l) = &a.lambdas {
        sec.lambdas = triple(l, "lambdas")?;
    }
    if let Some(o) = &a.axis_order {
        sec.axis_order = o
            .iter()
            .map(|s| s.parse())
            .collect::<volsr::Result<_>>()
            .map_err(config_err)?;
    }
    let joint = JointConfig {
        lambdas: sec.lambdas,
        axis_order: sec.axis_order.clone(),
        mode: sec.mode,
        sync_last_chains: sec.sync_last_chains,
    };
    joint.validate().map_err(config_err)?;
    let kind = ScheduleKind::linear_for_steps(sec.steps);
    let mut process =
        DiffusionProcess::new(build_schedule(kind, sec.steps).map_err(config_err)?).with_variance(sec.variance);
    if !sec.clip {
        process = process.without_clipping();
    }

    let planes: Vec<Plane> = axes_of(sec.mode, &sec.axis_order).iter().map(|a| a.plane()).collect();
    let load = |p: &Option<PathBuf>, plane: Plane| -> Result<Option<(ConvDenoiser, PathBuf, String)>> {
        if !planes.contains(&plane) {
            return Ok(None);
        }
        let Some(path) = p else {
            return Err(CliError::Config(format!(
                "mode {} needs the {} checkpoint",
                sec.mode.name(),
                plane.name()
            )));
        };
        require(path)?;
        let (net, h) = read_checkpoint(path)?;
        if net.trained_plane() != plane {
            return Err(CliError::Config(format!(
                "{} holds a {} denoiser",
                path.display(),
                net.trained_plane().name()
            )));
        }
        Ok(Some((net, path.clone(), h.weights_sha256)))
    };
    let in_plane = load(&a.in_plane, Plane::InPlane)?;
    let through = load(&a.through_plane, Plane::ThroughPlane)?;
    let (x, header) = read_volume(&a.input)?;
    let x = match header.window {
        Some([lo, hi]) => normalize(&x, lo, hi).map_err(config_err)?,
        None => x,
    };
    let load_s = started.elapsed().as_secs_f64();

    // an unused slot is never called; point it at the loaded net
    let nets: Vec<&ConvDenoiser> = [&in_plane, &through]
        .iter()
        .filter_map(|n| n.as_ref().map(|t| &t.0))
        .collect();
    let den = PlaneDenoisers::new(
        in_plane.as_ref().map_or(nets[0], |t| &t.0),
        through.as_ref().map_or(nets[0], |t| &t.0),
    );
    let t0 = Instant::now();
    let out = sample_volume(&process, &x, den, &RngStream::new(a.seed), &joint)?;
    let sample_s = t0.elapsed().as_secs_f64();
    let y = match header.window {
        Some([lo, hi]) => denormalize(&out.volume, lo, hi).map_err(config_err)?,
        None => out.volume,
    };

    let path = a
        .out
        .clone()
        .unwrap_or_else(|| g.output_dir.join(format!("sr_{}", sec.mode.name())));
    let h = write_volume(
        &y,
        &path,
        VolumeMeta {
            window: header.window,
            seed: Some(a.seed),
        },
    )?;
    let mut run = RunManifest::new(
        "infer",
        Some(a.seed),
        serde_json::to_value(&sec).map_err(volsr::Error::from)?,
    );
    run.inputs.push(FileRecord::volume(&a.input, &header));
    for (_, p, sha) in [&in_plane, &through].into_iter().flatten() {
        run.inputs.push(FileRecord {
            path: p.display().to_string(),
            sha256: sha.clone(),
        });
    }
    run.outputs.push(FileRecord::volume(&path, &h));
    run.timings_s.insert("load".into(), load_s);
    run.timings_s.insert("sample".into(), sample_s);
    run.results = json!({
        "mode": sec.mode,
        "steps": sec.steps,
        "schedule": kind,
        "lambdas": sec.lambdas,
        "axis_order": sec.axis_order,
        "checkpoints": {
            "in_plane": in_plane.as_ref().map(|t| t.2[..16].to_string()),
            "through_plane": through.as_ref().map(|t| t.2[..16].to_string()),
        },
        "denoiser_calls": out.counts.denoiser_calls,
        "sweeps": out.counts.sweeps,
    });
    finish(run, g, &path.with_extension("run.json"), started)?;
    println!(
        "{} sample written to {} ({} denoiser calls)",
        sec.mode.name(),
        path.with_extension("json").display(),
        out.counts.denoiser_calls
    );
    Ok(())
}

pub fn eval_mtf(g: &Globals, a: EvalArgs) -> Result<()> {
    let started = Instant::now();
    require(&a.phantom_manifest)?;
    require_volume(&a.reference)?;
    for p in &a.inputs {
        require_volume(p)?;
    }
    let labels: Vec<String> = match &a.labels {
        Some(l) if l.len() != a.inputs.len() => {
            return Err(CliError::Config(format!(
                "{} labels for {} inputs",
                l.len(),
                a.inputs.len()
            )));
        }
        Some(l) => l.clone(),
        None => a
            .inputs
            .iter()
            .map(|p| {
                p.file_stem()
                    .map_or("input".into(), |s| s.to_string_lossy().into_owned())
            })
            .collect(),
    };
    let manifest: PhantomManifest = read_json(&a.phantom_manifest)?;
    let (reference, rh) = read_volume(&a.reference)?;
    let inputs = a
        .inputs
        .iter()
        .map(|p| read_volume(p).map_err(CliError::from))
        .collect::<Result<Vec<_>>>()?;
    let out = a.out.clone().unwrap_or_else(|| g.output_dir.join("mtf"));

    let mut results = serde_json::Map::new();
    let mut tables = Vec::new();
    for plane in [Plane::InPlane, Plane::ThroughPlane] {
        if !manifest.spec.groups.iter().any(|gr| gr.plane() == plane) {
            continue;
        }
        let curves = inputs
            .iter()
            .zip(&labels)
            .map(|((v, _), l)| mtf_curve(v, &manifest, &reference, plane, l).map_err(config_err))
            .collect::<Result<Vec<_>>>()?;
        tables.push((plane, curves));
    }
    let mut fidelity = serde_json::Map::new();
    for ((v, _), l) in inputs.iter().zip(&labels) {
        let f = fidelity_metrics(v, &reference).map_err(config_err)?;
        fidelity.insert(
            l.clone(),
            json!({ "rmse": f.rmse, "psnr": if f.psnr.is_finite() { json!(f.psnr) } else { json!("inf") } }),
        );
    }
    let mut run = RunManifest::new("eval-mtf", None, json!({ "labels": labels }));
    run.inputs.push(file_record(&a.phantom_manifest)?);
    run.inputs.push(FileRecord::volume(&a.reference, &rh));
    for (p, (_, h)) in a.inputs.iter().zip(&inputs) {
        run.inputs.push(FileRecord::volume(p, h));
    }
    for (plane, curves) in &tables {
        let dir = out.join(plane.name());
        let table = compare_report(curves, &dir)?;
        println!("[{}]\n{table}", plane.name());
        results.insert(
            plane.name().into(),
            serde_json::to_value(curves).map_err(volsr::Error::from)?,
        );
        run.outputs.push(FileRecord {
            path: dir.join("comparison.csv").display().to_string(),
            sha256: volsr::io::sha256_hex(table.as_bytes()),
        });
    }
    results.insert("fidelity".into(), serde_json::Value::Object(fidelity));
    run.results = serde_json::Value::Object(results);
    finish(run, g, &out.join("run.json"), started)?;
    Ok(())
}
