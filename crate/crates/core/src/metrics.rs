//! The synaptic-cleft detection score (mean of average false-positive and
//! false-negative distances) and the Gaussian-PSF density simulation used for
//! whole-volume qualitative validation.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::{Volume, VoxelSize};
use crate::pyramid;
use crate::sdt::distance_field;

/// Cleft detection score between a predicted and a true binary labeling.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct CleftScore {
    /// Mean distance (nm) from predicted-positive voxels to the nearest true positive.
    pub fpd_nm: f64,
    /// Mean distance (nm) from true-positive voxels to the nearest predicted positive.
    pub fnd_nm: f64,
    /// Arithmetic mean of the two distances.
    pub cremi_score_nm: f64,
    pub n_pred_pos: u64,
    pub n_true_pos: u64,
}

impl CleftScore {
    /// True when one side has positives and the other is empty, which makes the
    /// corresponding distance infinite.
    pub fn degenerate(&self) -> bool {
        !self.fpd_nm.is_finite() || !self.fnd_nm.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MetricsError {
    RoiMismatch,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::RoiMismatch => {
                write!(f, "prediction, truth, and ignore mask must share one roi")
            }
        }
    }
}

impl core::error::Error for MetricsError {}

fn masked_positives(labels: &Volume<u8>, ignore: Option<&Volume<u8>>) -> Volume<u8> {
    match ignore {
        None => labels.map(|v| (v > 0) as u8),
        Some(m) => {
            let mut out = labels.map(|v| (v > 0) as u8);
            for (i, &ig) in m.data().iter().enumerate() {
                if ig > 0 {
                    out.data_mut()[i] = 0;
                }
            }
            out
        }
    }
}

/// Mean distance from each positive of `from` to the nearest positive of `to`.
///
/// By convention an empty `from` contributes 0; positives in `from` with an
/// empty `to` are infinitely far and yield `+inf`.
fn mean_nearest_distance(from: &Volume<u8>, to: &Volume<u8>, voxel_size: VoxelSize) -> f64 {
    let n_from = from.data().iter().filter(|&&v| v > 0).count() as u64;
    if n_from == 0 {
        return 0.0;
    }
    let n_to = to.data().iter().filter(|&&v| v > 0).count() as u64;
    if n_to == 0 {
        return f64::INFINITY;
    }
    let field = distance_field(to, voxel_size);
    let mut sum = 0.0f64;
    for (i, &v) in from.data().iter().enumerate() {
        if v > 0 {
            sum += field.data()[i];
        }
    }
    sum / n_from as f64
}

/// Scores a predicted binary labeling against ground truth.
///
/// Distances are center-to-center in physical nanometers, computed with one
/// distance transform per direction. Voxels under the optional ignore mask are
/// excluded from both positive sets.
pub fn cleft_score(
    pred: &Volume<u8>,
    truth: &Volume<u8>,
    voxel_size: VoxelSize,
    ignore: Option<&Volume<u8>>,
) -> Result<CleftScore, MetricsError> {
    if pred.roi() != truth.roi() {
        return Err(MetricsError::RoiMismatch);
    }
    if let Some(m) = ignore {
        if m.roi() != pred.roi() {
            return Err(MetricsError::RoiMismatch);
        }
    }
    let pred_pos = masked_positives(pred, ignore);
    let truth_pos = masked_positives(truth, ignore);
    let n_pred_pos = pred_pos.data().iter().filter(|&&v| v > 0).count() as u64;
    let n_true_pos = truth_pos.data().iter().filter(|&&v| v > 0).count() as u64;

    let fpd_nm = mean_nearest_distance(&pred_pos, &truth_pos, voxel_size);
    let fnd_nm = mean_nearest_distance(&truth_pos, &pred_pos, voxel_size);
    Ok(CleftScore {
        fpd_nm,
        fnd_nm,
        cremi_score_nm: (fpd_nm + fnd_nm) / 2.0,
        n_pred_pos,
        n_true_pos,
    })
}

/// Per-axis Gaussian taps truncated at four sigma, renormalized to unit sum.
fn gaussian_kernel(sigma_nm: f64, spacing_nm: f64) -> Vec<f64> {
    assert!(sigma_nm > 0.0, "sigma must be positive");
    let radius = libm::ceil(4.0 * sigma_nm / spacing_nm) as i64;
    let mut taps = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let d = i as f64 * spacing_nm;
        let w = libm::exp(-d * d / (2.0 * sigma_nm * sigma_nm));
        taps.push(w);
        sum += w;
    }
    for w in &mut taps {
        *w /= sum;
    }
    taps
}

fn convolve_axis(data: &mut [f64], shape: [usize; 3], axis: usize, taps: &[f64]) {
    let radius = (taps.len() / 2) as i64;
    let (nz, ny, nx) = (shape[0], shape[1], shape[2]);
    let stride = match axis {
        0 => ny * nx,
        1 => nx,
        _ => 1,
    };
    let len = shape[axis];
    let mut line = vec![0.0f64; len];
    let outer: Vec<(usize, usize)> = match axis {
        0 => (0..ny).flat_map(|y| (0..nx).map(move |x| (y, x))).collect(),
        1 => (0..nz).flat_map(|z| (0..nx).map(move |x| (z, x))).collect(),
        _ => (0..nz).flat_map(|z| (0..ny).map(move |y| (z, y))).collect(),
    };
    for (a, b) in outer {
        let base = match axis {
            0 => a * nx + b,
            1 => a * ny * nx + b,
            _ => a * ny * nx + b * nx,
        };
        for i in 0..len {
            line[i] = data[base + i * stride];
        }
        for i in 0..len {
            let mut acc = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                let j = i as i64 + t as i64 - radius;
                if j >= 0 && (j as usize) < len {
                    acc += w * line[j as usize];
                }
            }
            data[base + i * stride] = acc;
        }
    }
}

/// Separable Gaussian blur (values outside the volume are zero) followed by
/// mean-downsampling toward `output_voxel_size`.
///
/// Downscale factors are the per-axis ratio of the requested output voxel size
/// to the input's, rounded to the nearest integer and clamped to at least 1;
/// the achieved output voxel size is the input's multiplied by those factors.
pub fn psf_density(
    v: &Volume<f32>,
    sigma_nm: [f64; 3],
    output_voxel_size: VoxelSize,
) -> Volume<f32> {
    let in_vs = v.voxel_size().nm();
    let shape = [
        v.roi().shape[0] as usize,
        v.roi().shape[1] as usize,
        v.roi().shape[2] as usize,
    ];
    let mut data: Vec<f64> = v.data().iter().map(|&e| e as f64).collect();
    for axis in 0..3 {
        let taps = gaussian_kernel(sigma_nm[axis], in_vs[axis]);
        convolve_axis(&mut data, shape, axis, &taps);
    }
    let blurred = Volume::from_vec(
        v.roi(),
        v.voxel_size(),
        data.into_iter().map(|e| e as f32).collect(),
    );
    let out_vs = output_voxel_size.nm();
    let mut factors = [1u64; 3];
    for a in 0..3 {
        factors[a] = (libm::round(out_vs[a] / in_vs[a]) as i64).max(1) as u64;
    }
    pyramid::downscale(&blurred, factors)
}
