//! Resolution and fidelity measurements.
//!
//! Modulation at a frequency is the fundamental Fourier amplitude of the
//! ROI's mean line profile, divided by the same quantity on the reference
//! phantom. Square-wave harmonics never enter the single-bin estimate, and
//! the square/sine factor cancels in the ratio.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::{PhantomManifest, Roi};
use crate::volume::{Dim, Plane, Volume};

/// Mean profile of `roi` along `dim`, averaged over the two other axes.
pub fn roi_profile(vol: &Volume, roi: &Roi, dim: Dim) -> Result<Vec<f64>> {
    if !roi.fits(vol.dims()) {
        return Err(Error::InvalidParameter(format!(
            "ROI {roi:?} outside volume {:?}",
            vol.dims()
        )));
    }
    let d = dim.index();
    let len = roi.extent(dim);
    let mut sum = vec![0.0; len];
    let mut count = 0usize;
    for z in roi.lo[2]..roi.hi[2] {
        for y in roi.lo[1]..roi.hi[1] {
            for x in roi.lo[0]..roi.hi[0] {
                let p = [x, y, z];
                sum[p[d] - roi.lo[d]] += vol.get(x, y, z);
                count += 1;
            }
        }
    }
    let per = (count / len) as f64;
    Ok(sum.into_iter().map(|s| s / per).collect())
}

/// Amplitude of the `frequency` component of a mean-removed profile.
pub fn fundamental_amplitude(profile: &[f64], frequency: f64) -> f64 {
    let n = profile.len() as f64;
    let mean = profile.iter().sum::<f64>() / n;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, v) in profile.iter().enumerate() {
        let ph = 2.0 * std::f64::consts::PI * frequency * i as f64;
        re += (v - mean) * ph.cos();
        im -= (v - mean) * ph.sin();
    }
    2.0 * re.hypot(im) / n
}

fn check_measurement(roi: &Roi, frequency: f64, dim: Dim) -> Result<()> {
    if !(frequency > 0.0 && frequency < 0.5) {
        return Err(Error::FrequencyOutOfRange(frequency));
    }
    let len = roi.extent(dim);
    if (len as f64) * frequency < 3.0 - 1e-9 {
        return Err(Error::RoiTooSmall(format!(
            "{len} voxels hold {:.2} periods at {frequency} cycles/voxel, need 3",
            len as f64 * frequency
        )));
    }
    Ok(())
}

/// Contrast of `vol` at `frequency` along `dim`, relative to `reference`.
pub fn measure_modulation(vol: &Volume, roi: &Roi, frequency: f64, dim: Dim, reference: &Volume) -> Result<f64> {
    check_measurement(roi, frequency, dim)?;
    vol.same_dims(reference)?;
    let r = fundamental_amplitude(&roi_profile(reference, roi, dim)?, frequency);
    if r <= 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "reference has no contrast at {frequency} cycles/voxel in ROI {roi:?}"
        )));
    }
    Ok(fundamental_amplitude(&roi_profile(vol, roi, dim)?, frequency) / r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtfPoint {
    pub frequency: f64,
    pub modulation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfCurve {
    pub method: String,
    pub plane: Plane,
    pub points: Vec<MtfPoint>,
}

impl MtfCurve {
    pub fn new(method: impl Into<String>, plane: Plane, points: Vec<MtfPoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[0].frequency < w[1].frequency)) {
            return Err(Error::InvalidParameter(
                "MTF frequencies must be strictly increasing".into(),
            ));
        }
        if points
            .iter()
            .any(|p| !(p.modulation.is_finite() && p.modulation >= 0.0))
        {
            return Err(Error::NonFinite("MTF modulation".into()));
        }
        Ok(MtfCurve {
            method: method.into(),
            plane,
            points,
        })
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.frequency).collect()
    }

    pub fn modulations(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.modulation).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("frequency,{}\n", self.method);
        for p in &self.points {
            let _ = writeln!(s, "{},{}", p.frequency, p.modulation);
        }
        s
    }
}

/// One modulation per manifest group on `plane`, sorted by frequency.
pub fn mtf_curve(
    vol: &Volume,
    manifest: &PhantomManifest,
    reference: &Volume,
    plane: Plane,
    method: &str,
) -> Result<MtfCurve> {
    if vol.dims() != manifest.dims {
        return Err(Error::DimensionMismatch(format!(
            "volume {:?} vs phantom manifest {:?}",
            vol.dims(),
            manifest.dims
        )));
    }
    let mut points = manifest
        .spec
        .groups
        .iter()
        .filter(|g| g.plane() == plane)
        .map(|g| {
            Ok(MtfPoint {
                frequency: g.frequency,
                modulation: measure_modulation(vol, &g.roi, g.frequency, g.dim, reference)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    MtfCurve::new(method, plane, points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub rmse: f64,
    /// `20 log10(2 / rmse)` for data on `[-1, 1]`; `+inf` when equal.
    pub psnr: f64,
}

pub fn fidelity_metrics(a: &Volume, b: &Volume) -> Result<Fidelity> {
    a.same_dims(b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    let rmse = mse.sqrt();
    let psnr = if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (2.0 / rmse).log10()
    };
    Ok(Fidelity { rmse, psnr })
}

/// Merged table `frequency,<method>...`; all curves must share frequencies.
pub fn comparison_table(curves: &[MtfCurve]) -> Result<String> {
    let Some(first) = curves.first() else {
        return Err(Error::InvalidParameter("no curves to compare".into()));
    };
    let freqs = first.frequencies();
    for c in curves {
        if c.frequencies() != freqs {
            return Err(Error::DimensionMismatch(format!(
                "curve '{}' is sampled at different frequencies",
                c.method
            )));
        }
    }
    let mut s = String::from("frequency");
    for c in curves {
        s.push(',');
        s.push_str(&c.method);
    }
    s.push('\n');
    for (i, f) in freqs.iter().enumerate() {
        let _ = write!(s, "{f}");
        for c in curves {
            let _ = write!(s, ",{}", c.points[i].modulation);
        }
        s.push('\n');
    }
    Ok(s)
}

/// Write `mtf_<method>.csv` per curve and `comparison.csv`, in input order.
pub fn compare_report(curves: &[MtfCurve], out_dir: &Path) -> Result<String> {
    let table = comparison_table(curves)?;
    for c in curves {
        let name: String = c
            .method
            .chars()
            .map(|ch| {
                if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' {
                    ch
                } else {
                    '_'
                }
            })
            .collect();
        crate::io::write_atomic(&out_dir.join(format!("mtf_{name}.csv")), c.to_csv().as_bytes())?;
    }
    crate::io::write_atomic(&out_dir.join("comparison.csv"), table.as_bytes())?;
    Ok(table)
}
