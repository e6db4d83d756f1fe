//! Valid-convolution U-Net shape arithmetic: output/input size relations,
//! per-side context, and the physical field of view per layer.
//!
//! An [`ArchSpec`] describes the encoder levels (convolution kernels plus the
//! pooling factors to the next level); the decoder mirrors the encoder with
//! matching up-sampling factors, and its kernels default to the encoder's
//! unless overridden.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::geom::VoxelSize;

/// One encoder level: convolution kernels applied in sequence, then an
/// optional pooling step down to the next level (absent on the bottom level).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    /// Per-axis kernel extents `(kz, ky, kx)` of each convolution.
    pub convs: Vec<[u64; 3]>,
    /// Per-axis pooling factors to the next level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub down: Option<[u64; 3]>,
    /// Feature-map count; carried as metadata, ignored by the geometry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<u64>,
}

/// Geometry of a valid-convolution U-Net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub levels: Vec<Level>,
    /// Decoder kernels per non-bottom level (same indexing as `levels`);
    /// defaults to mirroring the encoder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_convs: Option<Vec<Vec<[u64; 3]>>>,
}

/// Field-of-view accounting for one layer of the network.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FovLayer {
    pub label: String,
    pub voxel_fov: [u64; 3],
    pub physical_fov_nm: [f64; 3],
    /// max(physical) / min(physical); 1.0 is perfectly isotropic.
    pub isotropy_ratio: f64,
}

/// Per-layer field-of-view report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FovReport {
    pub layers: Vec<FovLayer>,
}

pub const AXIS_NAMES: [&str; 3] = ["z", "y", "x"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UnetError {
    /// The spec itself is malformed.
    InvalidSpec(String),
    /// An intermediate shape became inadmissible during forward simulation.
    Inadmissible {
        stage: String,
        axis: usize,
        size: u64,
        detail: String,
    },
    /// Input minus output is odd on some axis, so no symmetric context exists.
    AsymmetricContext { axis: usize, difference: u64 },
}

impl fmt::Display for UnetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnetError::InvalidSpec(msg) => write!(f, "invalid architecture spec: {msg}"),
            UnetError::Inadmissible {
                stage,
                axis,
                size,
                detail,
            } => write!(
                f,
                "inadmissible shape at {stage}, axis {}: size {size} {detail}",
                AXIS_NAMES[*axis]
            ),
            UnetError::AsymmetricContext { axis, difference } => write!(
                f,
                "input exceeds output by odd {difference} on axis {}; no symmetric context",
                AXIS_NAMES[*axis]
            ),
        }
    }
}

impl core::error::Error for UnetError {}

/// A stage of the flattened encoder-bottom-decoder chain.
#[derive(Clone, Debug)]
enum Stage<'a> {
    Convs { label: String, kernels: &'a [[u64; 3]] },
    Down { label: String, factors: [u64; 3] },
    Up { factors: [u64; 3] },
}

impl ArchSpec {
    pub fn validate(&self) -> Result<(), UnetError> {
        if self.levels.is_empty() {
            return Err(UnetError::InvalidSpec("no levels".into()));
        }
        for (i, level) in self.levels.iter().enumerate() {
            let is_bottom = i + 1 == self.levels.len();
            if is_bottom && level.down.is_some() {
                return Err(UnetError::InvalidSpec(
                    "bottom level must not have a down factor".into(),
                ));
            }
            if !is_bottom && level.down.is_none() {
                return Err(UnetError::InvalidSpec(format!(
                    "level {i} is missing its down factor"
                )));
            }
            if let Some(d) = level.down {
                if d.contains(&0) {
                    return Err(UnetError::InvalidSpec(format!(
                        "level {i} has a zero down factor"
                    )));
                }
            }
            for k in &level.convs {
                if k.contains(&0) {
                    return Err(UnetError::InvalidSpec(format!(
                        "level {i} has a zero kernel extent"
                    )));
                }
            }
        }
        if let Some(dec) = &self.decoder_convs {
            if dec.len() != self.levels.len() - 1 {
                return Err(UnetError::InvalidSpec(format!(
                    "decoder_convs must list {} levels, got {}",
                    self.levels.len() - 1,
                    dec.len()
                )));
            }
            for (i, convs) in dec.iter().enumerate() {
                for k in convs {
                    if k.contains(&0) {
                        return Err(UnetError::InvalidSpec(format!(
                            "decoder level {i} has a zero kernel extent"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn decoder_kernels(&self, level: usize) -> &[[u64; 3]] {
        match &self.decoder_convs {
            Some(dec) => &dec[level],
            None => &self.levels[level].convs,
        }
    }

    fn stages(&self) -> Vec<Stage<'_>> {
        let n = self.levels.len();
        let mut stages = Vec::new();
        for (i, level) in self.levels.iter().enumerate() {
            let name = if i + 1 == n {
                format!("bottom (level {i})")
            } else {
                format!("encoder level {i}")
            };
            stages.push(Stage::Convs {
                label: name.clone(),
                kernels: &level.convs,
            });
            if let Some(f) = level.down {
                stages.push(Stage::Down {
                    label: format!("pool after level {i}"),
                    factors: f,
                });
            }
        }
        for i in (0..n - 1).rev() {
            let factors = self.levels[i].down.expect("validated non-bottom level");
            stages.push(Stage::Up { factors });
            stages.push(Stage::Convs {
                label: format!("decoder level {i}"),
                kernels: self.decoder_kernels(i),
            });
        }
        stages
    }
}

/// Output shape of the network for a given input shape.
///
/// Fails with the offending stage and axis when an intermediate shape drops
/// below one voxel or is not divisible by its pooling factor.
pub fn valid_output_shape(a: &ArchSpec, input_shape: [u64; 3]) -> Result<[u64; 3], UnetError> {
    a.validate()?;
    let mut s = input_shape;
    for stage in a.stages() {
        match stage {
            Stage::Convs { label, kernels } => {
                for (ci, k) in kernels.iter().enumerate() {
                    for axis in 0..3 {
                        let shrink = k[axis] - 1;
                        if s[axis] < shrink + 1 {
                            return Err(UnetError::Inadmissible {
                                stage: format!("{label}, conv {ci}"),
                                axis,
                                size: s[axis],
                                detail: format!("is too small for kernel {}", k[axis]),
                            });
                        }
                        s[axis] -= shrink;
                    }
                }
            }
            Stage::Down { label, factors } => {
                for axis in 0..3 {
                    if !s[axis].is_multiple_of(factors[axis]) || s[axis] == 0 {
                        return Err(UnetError::Inadmissible {
                            stage: label.clone(),
                            axis,
                            size: s[axis],
                            detail: format!("is not divisible by pool factor {}", factors[axis]),
                        });
                    }
                    s[axis] /= factors[axis];
                }
            }
            Stage::Up { factors, .. } => {
                for axis in 0..3 {
                    s[axis] *= factors[axis];
                }
            }
        }
    }
    Ok(s)
}

/// Minimal admissible input shape whose output covers `desired_output_shape`.
///
/// Walks the stage chain backwards with exact multiplication at pools and
/// ceiling division at upsampling steps, so the result is always admissible
/// and `valid_output_shape(a, result) >= desired` per axis (equal when the
/// divisibility works out). Desired components are clamped to at least 1.
pub fn required_input_shape(a: &ArchSpec, desired_output_shape: [u64; 3]) -> Result<[u64; 3], UnetError> {
    a.validate()?;
    let mut s = desired_output_shape.map(|d| d.max(1));
    for stage in a.stages().into_iter().rev() {
        match stage {
            Stage::Convs { kernels, .. } => {
                for k in kernels {
                    for axis in 0..3 {
                        s[axis] += k[axis] - 1;
                    }
                }
            }
            Stage::Down { factors, .. } => {
                for axis in 0..3 {
                    s[axis] *= factors[axis];
                }
            }
            Stage::Up { factors, .. } => {
                for axis in 0..3 {
                    s[axis] = s[axis].div_ceil(factors[axis]);
                }
            }
        }
    }
    Ok(s)
}

/// Symmetric per-side context: `(required_input - output) / 2` per axis.
pub fn context_per_side(a: &ArchSpec, output_shape: [u64; 3]) -> Result<[u64; 3], UnetError> {
    let input = required_input_shape(a, output_shape)?;
    let mut context = [0u64; 3];
    for axis in 0..3 {
        let diff = input[axis] - output_shape[axis].max(1);
        if !diff.is_multiple_of(2) {
            return Err(UnetError::AsymmetricContext {
                axis,
                difference: diff,
            });
        }
        context[axis] = diff / 2;
    }
    Ok(context)
}

/// Field of view per layer in voxels and physical nanometers.
///
/// Each convolution adds `(k - 1) * step` to the accumulated view; pooling
/// multiplies the step, upsampling divides it back.
pub fn physical_fov(a: &ArchSpec, voxel_size: VoxelSize) -> Result<FovReport, UnetError> {
    a.validate()?;
    let nm = voxel_size.nm();
    let mut step = [1u64; 3];
    let mut fov = [1u64; 3];
    let mut layers = Vec::new();
    let mut push = |label: String, fov: [u64; 3]| {
        let physical = [
            fov[0] as f64 * nm[0],
            fov[1] as f64 * nm[1],
            fov[2] as f64 * nm[2],
        ];
        let mut lo = physical[0];
        let mut hi = physical[0];
        for &p in &physical[1..] {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        layers.push(FovLayer {
            label,
            voxel_fov: fov,
            physical_fov_nm: physical,
            isotropy_ratio: hi / lo,
        });
    };
    push("input".into(), fov);
    for stage in a.stages() {
        match stage {
            Stage::Convs { label, kernels } => {
                for (ci, k) in kernels.iter().enumerate() {
                    for axis in 0..3 {
                        fov[axis] += (k[axis] - 1) * step[axis];
                    }
                    push(format!("{label}, conv {ci}"), fov);
                }
            }
            Stage::Down { factors, .. } => {
                for axis in 0..3 {
                    step[axis] *= factors[axis];
                }
            }
            Stage::Up { factors, .. } => {
                for axis in 0..3 {
                    debug_assert_eq!(step[axis] % factors[axis], 0);
                    step[axis] /= factors[axis];
                }
            }
        }
    }
    Ok(FovReport { layers })
}
