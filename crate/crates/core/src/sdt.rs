//! Signed Euclidean distance transforms of binary labels under anisotropic
//! voxel spacing, the tanh-squashed regression target, and its inverse
//! thresholding.
//!
//! Distances are exact (separable lower-envelope algorithm) and measured in
//! physical nanometers between voxel centers. The sign convention is positive
//! inside the foreground, so thresholding a prediction at zero recovers the
//! labels.

use alloc::vec;
use core::fmt;

use crate::geom::{Volume, VoxelSize};

/// Parameters of the squashed distance target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdtParams {
    /// Saturation scale `s` of `tanh(sedt / s)`, in nanometers.
    pub scale_s: f64,
    pub voxel_size: VoxelSize,
}

impl SdtParams {
    pub fn new(scale_s: f64, voxel_size: VoxelSize) -> Self {
        assert!(scale_s > 0.0, "scale must be positive");
        Self {
            scale_s,
            voxel_size,
        }
    }
}

impl Default for SdtParams {
    fn default() -> Self {
        Self::new(50.0, VoxelSize::default())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SdtError {
    /// The labels contain only one class; the signed transform is undefined.
    EmptyClass { missing_foreground: bool },
}

impl fmt::Display for SdtError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SdtError::EmptyClass { missing_foreground } => write!(
                f,
                "labels contain no {} voxel; signed distance is undefined",
                if *missing_foreground {
                    "foreground"
                } else {
                    "background"
                }
            ),
        }
    }
}

impl core::error::Error for SdtError {}

/// One-dimensional squared distance transform over samples spaced `w` apart.
///
/// `f` holds squared source values (`INFINITY` where no source); parabolas are
/// only erected over finite entries, so lines without sources stay infinite.
/// `v` (len n) and `z` (len n+1) are scratch.
fn dt_1d(f: &[f64], w: f64, d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let mut seeded = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !seeded {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            k = 0;
            seeded = true;
            continue;
        }
        let xq = q as f64 * w;
        loop {
            let p = v[k];
            let xp = p as f64 * w;
            // Abscissa where parabola q overtakes parabola p.
            let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    if !seeded {
        d[..n].fill(f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        let xq = q as f64 * w;
        while z[j + 1] < xq {
            j += 1;
        }
        let xp = v[j] as f64 * w;
        *out = (xq - xp) * (xq - xp) + f[v[j]];
    }
}

/// Squared physical distance of every voxel to the nearest positive voxel.
///
/// Voxels are treated as points at their centers; lines, planes, or whole
/// volumes without any positive voxel come out infinite.
pub fn distance_field_sq(mask: &Volume<u8>, voxel_size: VoxelSize) -> Volume<f64> {
    let roi = mask.roi();
    let mut field = mask.map(|m| if m > 0 { 0.0f64 } else { f64::INFINITY });
    let shape = roi.shape;
    let spacing = voxel_size.nm();

    // Pass order x, y, z; each pass runs the 1D transform over every line.
    let max_len = shape.iter().copied().max().unwrap_or(0) as usize;
    if max_len == 0 {
        return field;
    }
    let mut line = vec![0.0f64; max_len];
    let mut out = vec![0.0f64; max_len];
    let mut v = vec![0usize; max_len];
    let mut z = vec![0.0f64; max_len + 1];

    let (nz, ny, nx) = (
        shape[0] as usize,
        shape[1] as usize,
        shape[2] as usize,
    );
    let data = field.data_mut();

    // x lines (contiguous)
    for zi in 0..nz {
        for yi in 0..ny {
            let base = (zi * ny + yi) * nx;
            line[..nx].copy_from_slice(&data[base..base + nx]);
            dt_1d(&line[..nx], spacing[2], &mut out[..nx], &mut v, &mut z);
            data[base..base + nx].copy_from_slice(&out[..nx]);
        }
    }
    // y lines
    for zi in 0..nz {
        for xi in 0..nx {
            for yi in 0..ny {
                line[yi] = data[(zi * ny + yi) * nx + xi];
            }
            dt_1d(&line[..ny], spacing[1], &mut out[..ny], &mut v, &mut z);
            for yi in 0..ny {
                data[(zi * ny + yi) * nx + xi] = out[yi];
            }
        }
    }
    // z lines
    for yi in 0..ny {
        for xi in 0..nx {
            for zi in 0..nz {
                line[zi] = data[(zi * ny + yi) * nx + xi];
            }
            dt_1d(&line[..nz], spacing[0], &mut out[..nz], &mut v, &mut z);
            for zi in 0..nz {
                data[(zi * ny + yi) * nx + xi] = out[zi];
            }
        }
    }
    field
}

/// Physical distance of every voxel to the nearest positive voxel, in nm.
pub fn distance_field(mask: &Volume<u8>, voxel_size: VoxelSize) -> Volume<f64> {
    let mut sq = distance_field_sq(mask, voxel_size);
    for v in sq.data_mut() {
        *v = libm::sqrt(*v);
    }
    sq
}

/// Signed Euclidean distance transform in full `f64` precision.
///
/// Foreground voxels get the positive distance to the nearest background voxel
/// center; background voxels the negative distance to the nearest foreground
/// voxel center.
pub fn sedt_f64(labels: &Volume<u8>, voxel_size: VoxelSize) -> Result<Volume<f64>, SdtError> {
    let n_pos = labels.data().iter().filter(|&&v| v > 0).count() as u64;
    if n_pos == 0 {
        return Err(SdtError::EmptyClass {
            missing_foreground: true,
        });
    }
    if n_pos == labels.roi().num_voxels() {
        return Err(SdtError::EmptyClass {
            missing_foreground: false,
        });
    }
    let to_foreground = distance_field(labels, voxel_size);
    let inverted = labels.map(|v| (v == 0) as u8);
    let to_background = distance_field(&inverted, voxel_size);

    let mut out = to_background;
    for (i, &m) in labels.data().iter().enumerate() {
        if m == 0 {
            out.data_mut()[i] = -to_foreground.data()[i];
        }
    }
    Ok(out)
}

/// Signed Euclidean distance transform, rounded to the `f32` working precision.
pub fn sedt(labels: &Volume<u8>, voxel_size: VoxelSize) -> Result<Volume<f32>, SdtError> {
    Ok(sedt_f64(labels, voxel_size)?.map(|v| v as f32))
}

/// Largest f32 strictly below 1.0.
const ONE_MINUS_ULP: f32 = f32::from_bits(0x3f7f_ffff);

/// Squashed target `tanh(sedt / s)`, strictly inside `(-1, 1)`.
///
/// `tanh` never reaches 1 mathematically but rounds to it in floating point
/// for large arguments; saturated values are pulled back to the nearest
/// representable value inside the open interval so the documented range (and
/// thresholding at the interval edges) stays exact.
pub fn stdt(sedt_volume: &Volume<f32>, scale_s: f64) -> Volume<f32> {
    assert!(scale_s > 0.0, "scale must be positive");
    sedt_volume.map(|v| {
        (libm::tanh(v as f64 / scale_s) as f32).clamp(-ONE_MINUS_ULP, ONE_MINUS_ULP)
    })
}

/// Binary labels from a predicted squashed distance: positive iff value > `t`.
pub fn threshold_to_labels(stdt_volume: &Volume<f32>, t: f32) -> Volume<u8> {
    stdt_volume.map(|v| (v > t) as u8)
}
