//! On-disk formats.
//!
//! A volume is a pair of files: `<stem>.raw` holds little-endian `f32`
//! samples in x-fastest order, and `<stem>.json` is the header. The header
//! carries the SHA-256 of the payload, which is verified on every read.
//!
//! ```json
//! {
//!   "format": "volsr-volume", "version": 1,
//!   "dims": [nx, ny, nz], "spacing": [sx, sy, sz],
//!   "dtype": "float32-le", "order": "x-fastest",
//!   "window": [lo, hi] | null,
//!   "checksum": {"algorithm": "sha256", "value": "<hex>"},
//!   "creator": "volsr 0.1.0", "seed": 7 | null
//! }
//! ```
//!
//! Checkpoints are one file: the 8-byte magic `VSRCKPT1`, a little-endian
//! `u64` header length, a JSON [`CheckpointHeader`], then the parameters
//! as little-endian `f64`.
//!
//! Every file is written to a temporary sibling and renamed into place, so
//! a failed run never leaves a partial output behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::{ConvDenoiser, LayerSpec, TrainingPair};
use crate::error::{Error, Result};
use crate::simulate::{AnatomyParams, DegradeConfig};
use crate::volume::{Plane, Volume};

pub const VOLUME_FORMAT: &str = "volsr-volume";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VSRCKPT1";
pub const FORMAT_VERSION: u32 = 1;

pub fn creator() -> String {
    format!("volsr {}", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Malformed {
        path: path.into(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksum {
    pub algorithm: String,
    pub value: String,
}

impl Checksum {
    pub fn of(bytes: &[u8]) -> Self {
        Checksum {
            algorithm: "sha256".into(),
            value: sha256_hex(bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub format: String,
    pub version: u32,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: String,
    pub order: String,
    pub window: Option<[f64; 2]>,
    pub checksum: Checksum,
    pub creator: String,
    pub seed: Option<u64>,
}

/// Provenance stored alongside a volume.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VolumeMeta {
    pub window: Option<[f64; 2]>,
    pub seed: Option<u64>,
}

/// `(header, payload)` paths for a volume named by either file or stem.
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("raw"))
}

pub fn encode_f32(vol: &Volume) -> Vec<u8> {
    vol.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn write_volume(vol: &Volume, path: &Path, meta: VolumeMeta) -> Result<VolumeHeader> {
    let (hpath, ppath) = volume_paths(path);
    let payload = encode_f32(vol);
    let header = VolumeHeader {
        format: VOLUME_FORMAT.into(),
        version: FORMAT_VERSION,
        dims: vol.dims(),
        spacing: vol.spacing(),
        dtype: "float32-le".into(),
        order: "x-fastest".into(),
        window: meta.window,
        checksum: Checksum::of(&payload),
        creator: creator(),
        seed: meta.seed,
    };
    write_atomic(&ppath, &payload)?;
    write_json(&hpath, &header)?;
    Ok(header)
}

pub fn read_volume(path: &Path) -> Result<(Volume, VolumeHeader)> {
    let (hpath, ppath) = volume_paths(path);
    let header: VolumeHeader = read_json(&hpath)?;
    let bad = |reason: String| Error::Malformed {
        path: hpath.clone(),
        reason,
    };
    if header.format != VOLUME_FORMAT || header.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    if header.dtype != "float32-le" || header.order != "x-fastest" {
        return Err(bad(format!("unsupported layout {} / {}", header.dtype, header.order)));
    }
    if header.checksum.algorithm != "sha256" {
        return Err(bad(format!("unknown checksum algorithm {}", header.checksum.algorithm)));
    }
    let payload = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let n: usize = header.dims.iter().product();
    if payload.len() != 4 * n {
        return Err(Error::Malformed {
            path: ppath,
            reason: format!("{} bytes, header dims {:?} need {}", payload.len(), header.dims, 4 * n),
        });
    }
    let found = sha256_hex(&payload);
    if found != header.checksum.value {
        return Err(Error::ChecksumMismatch {
            path: ppath,
            expected: header.checksum.value.clone(),
            found,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let vol = Volume::new(header.dims, header.spacing, data).map_err(|e| bad(e.to_string()))?;
    Ok((vol, header))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    pub creator: String,
    pub spec: LayerSpec,
    pub plane: Plane,
    pub parameter_count: usize,
    /// SHA-256 of the parameter block; doubles as the checkpoint id.
    pub weights_sha256: String,
    /// Free-form training provenance (config, schedule, loss summary).
    pub training: serde_json::Value,
}

impl CheckpointHeader {
    pub fn id(&self) -> &str {
        &self.weights_sha256[..16]
    }
}

pub fn write_checkpoint(path: &Path, net: &ConvDenoiser, training: serde_json::Value) -> Result<CheckpointHeader> {
    let weights: Vec<u8> = net.parameters().iter().flat_map(|p| p.to_le_bytes()).collect();
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        creator: creator(),
        spec: *net.spec(),
        plane: net.trained_plane(),
        parameter_count: net.parameter_count(),
        weights_sha256: sha256_hex(&weights),
        training,
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + weights.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&weights);
    write_atomic(path, &bytes)?;
    Ok(header)
}

pub fn read_checkpoint(path: &Path) -> Result<(ConvDenoiser, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Malformed {
        path: path.into(),
        reason: reason.into(),
    };
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(hlen))
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(bad("unsupported checkpoint version"));
    }
    let weights = &bytes[16 + hlen..];
    if weights.len() != 8 * header.parameter_count {
        return Err(bad("parameter block length disagrees with header"));
    }
    let found = sha256_hex(weights);
    if found != header.weights_sha256 {
        return Err(Error::ChecksumMismatch {
            path: path.into(),
            expected: header.weights_sha256.clone(),
            found,
        });
    }
    let params: Vec<f64> = weights
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let net = ConvDenoiser::from_parameters(header.spec, header.plane, &params)?;
    Ok((net, header))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    /// Record a written volume by its header path and payload checksum.
    pub fn volume(path: &Path, header: &VolumeHeader) -> Self {
        FileRecord {
            path: path.with_extension("json").display().to_string(),
            sha256: header.checksum.value.clone(),
        }
    }
}

/// Written by every CLI run next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub creator: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Fully resolved configuration after flag overrides.
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub timings_s: BTreeMap<String, f64>,
    /// Command-specific results (call counts, checkpoint ids, curves).
    pub results: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.into(),
            creator: creator(),
            seed,
            threads: None,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_s: BTreeMap::new(),
            results: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub lr: FileRecord,
    pub hr: FileRecord,
}

/// Index of a simulated dataset; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub creator: String,
    pub seed: u64,
    pub dims: [usize; 3],
    pub degrade: DegradeConfig,
    pub anatomy: AnatomyParams,
    pub pairs: Vec<PairRecord>,
}

pub const DATASET_MANIFEST: &str = "dataset.json";

/// Write pairs as `pair_<i>_{lr,hr}` plus `dataset.json` into `dir`.
pub fn write_dataset(
    dir: &Path,
    pairs: &[TrainingPair],
    seed: u64,
    degrade: &DegradeConfig,
    anatomy: &AnatomyParams,
) -> Result<DatasetManifest> {
    let dims = pairs.first().map_or([0; 3], |p| p.hr.dims());
    let mut records = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let rec = |name: String, v: &Volume| -> Result<FileRecord> {
            let h = write_volume(
                v,
                &dir.join(&name),
                VolumeMeta {
                    window: None,
                    seed: Some(seed),
                },
            )?;
            Ok(FileRecord {
                path: format!("{name}.json"),
                sha256: h.checksum.value,
            })
        };
        records.push(PairRecord {
            lr: rec(format!("pair_{i:03}_lr"), &p.lr)?,
            hr: rec(format!("pair_{i:03}_hr"), &p.hr)?,
        });
    }
    let manifest = DatasetManifest {
        creator: creator(),
        seed,
        dims,
        degrade: degrade.clone(),
        anatomy: anatomy.clone(),
        pairs: records,
    };
    write_json(&dir.join(DATASET_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Load every pair of a dataset manifest, checking recorded checksums.
pub fn read_dataset(manifest_path: &Path) -> Result<(Vec<TrainingPair>, DatasetManifest)> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let load = |r: &FileRecord| -> Result<Volume> {
        let (v, h) = read_volume(&dir.join(&r.path))?;
        if h.checksum.value != r.sha256 {
            return Err(Error::ChecksumMismatch {
                path: dir.join(&r.path),
                expected: r.sha256.clone(),
                found: h.checksum.value,
            });
        }
        Ok(v)
    };
    let pairs = manifest
        .pairs
        .iter()
        .map(|p| TrainingPair::new(load(&p.lr)?, load(&p.hr)?))
        .collect::<Result<_>>()?;
    Ok((pairs, manifest))
}
