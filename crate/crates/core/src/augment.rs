//! Training-batch machinery: region sampling with rejection, ssTEM-style
//! augmentations, class-rebalanced loss weights, and the balanced L2 loss.
//!
//! Every operation is a pure function of its inputs and a seed; identical
//! seeds give bit-identical results across runs and thread counts.

use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::{read_region, Roi, Volume};

/// One training batch: raw intensities with context margin plus binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Intensities in `[0, 1]`; its roi is the labels roi grown by the context.
    pub raw: Volume<f32>,
    /// Binary cleft labels.
    pub labels: Volume<u8>,
    /// Optional auxiliary channel (e.g. neuron boundaries), same roi as labels.
    pub aux_labels: Option<Volume<u8>>,
    pub rng_seed: u64,
    /// Number of region draws needed before a batch was accepted.
    pub draws: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityConfig {
    /// Uniform multiplicative range `[lo, hi]`.
    pub scale: [f64; 2],
    /// Uniform additive range `[lo, hi]`.
    pub shift: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticConfig {
    /// Control-point spacing in voxels, in-plane `(y, x)`.
    pub control_spacing: [u64; 2],
    /// Standard deviation of the control-point jitter, in voxels.
    pub jitter_sigma: f64,
    /// Uniform in-plane rotation range `[lo, hi]` in radians.
    pub rotation: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionConfig {
    /// Probability that a z section is zeroed out entirely.
    pub missing_p: f64,
    /// Probability that a surviving section receives additive Gaussian noise.
    pub noisy_p: f64,
    pub noise_sigma: f64,
}

/// Augmentation parameters. The defaults are plausible working values, not
/// tuned ones; real pipelines should ship their own configuration file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Probability of swapping the y and x axes.
    pub transpose_xy: f64,
    pub intensity: IntensityConfig,
    pub elastic: ElasticConfig,
    pub section: SectionConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            transpose_xy: 0.5,
            intensity: IntensityConfig {
                scale: [0.9, 1.1],
                shift: [-0.1, 0.1],
            },
            elastic: ElasticConfig {
                control_spacing: [40, 40],
                jitter_sigma: 2.0,
                rotation: [-core::f64::consts::FRAC_PI_4, core::f64::consts::FRAC_PI_4],
            },
            section: SectionConfig {
                missing_p: 0.05,
                noisy_p: 0.05,
                noise_sigma: 0.05,
            },
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        use alloc::format;
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(AugmentError::InvalidConfig(format!(
                    "{name} must be a probability, got {p}"
                )))
            }
        };
        prob("transpose_xy", self.transpose_xy)?;
        prob("section.missing_p", self.section.missing_p)?;
        prob("section.noisy_p", self.section.noisy_p)?;
        let range = |name: &str, r: [f64; 2]| {
            if r[0] <= r[1] {
                Ok(())
            } else {
                Err(AugmentError::InvalidConfig(format!(
                    "{name} range is inverted: [{}, {}]",
                    r[0], r[1]
                )))
            }
        };
        range("intensity.scale", self.intensity.scale)?;
        range("intensity.shift", self.intensity.shift)?;
        range("elastic.rotation", self.elastic.rotation)?;
        if self.elastic.jitter_sigma < 0.0 || self.section.noise_sigma < 0.0 {
            return Err(AugmentError::InvalidConfig("sigma must be >= 0".into()));
        }
        if self.elastic.control_spacing.iter().any(|&s| s < 1) {
            return Err(AugmentError::InvalidConfig(
                "control spacing must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// No-op configuration; sampling applies no augmentation at all.
    pub fn disabled() -> Self {
        Self {
            transpose_xy: 0.0,
            intensity: IntensityConfig {
                scale: [1.0, 1.0],
                shift: [0.0, 0.0],
            },
            elastic: ElasticConfig {
                control_spacing: [40, 40],
                jitter_sigma: 0.0,
                rotation: [0.0, 0.0],
            },
            section: SectionConfig {
                missing_p: 0.0,
                noisy_p: 0.0,
                noise_sigma: 0.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AugmentError {
    /// The source labels cannot contain the requested shape.
    SourceTooSmall { axis: usize },
    /// The rejection-sampling draw budget ran out without an accepted batch.
    DrawBudgetExhausted { draws: u32 },
    /// Volumes passed to a loss do not share one roi.
    ShapeMismatch,
    /// A probability outside [0, 1], a negative sigma, or an inverted range.
    InvalidConfig(alloc::string::String),
}

impl fmt::Display for AugmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentError::SourceTooSmall { axis } => write!(
                f,
                "source labels are smaller than the requested shape on axis {}",
                crate::unet::AXIS_NAMES[*axis]
            ),
            AugmentError::DrawBudgetExhausted { draws } => {
                write!(f, "no batch accepted after {draws} draws")
            }
            AugmentError::ShapeMismatch => write!(f, "volumes must share one roi"),
            AugmentError::InvalidConfig(msg) => write!(f, "invalid augment config: {msg}"),
        }
    }
}

impl core::error::Error for AugmentError {}

/// Request for one batch draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRequest {
    /// Shape of the labels (output) region.
    pub labels_shape: [u64; 3],
    /// Per-side margin of raw context around the labels region.
    pub context: [u64; 3],
    /// Probability of rejecting a draw whose labels hold no positive voxel.
    pub rejection_probability: f64,
    /// Draw budget before giving up.
    pub max_draws: u32,
}

impl SampleRequest {
    pub fn new(labels_shape: [u64; 3], context: [u64; 3]) -> Self {
        Self {
            labels_shape,
            context,
            rejection_probability: 0.95,
            max_draws: 1000,
        }
    }
}

/// Source volumes a batch is cut from.
#[derive(Clone, Copy, Debug)]
pub struct SampleSources<'a> {
    pub raw: &'a Volume<f32>,
    pub labels: &'a Volume<u8>,
    pub aux_labels: Option<&'a Volume<u8>>,
}

/// Draws a uniformly random labels region, rejecting synapse-free draws with
/// the configured probability. Returns the accepted region and how many draws
/// it took.
pub fn draw_labels_roi<R: Rng>(
    labels: &Volume<u8>,
    shape: [u64; 3],
    rejection_probability: f64,
    max_draws: u32,
    rng: &mut R,
) -> Result<(Roi, u32), AugmentError> {
    let source = labels.roi();
    let mut max_offset = [0u64; 3];
    for a in 0..3 {
        if source.shape[a] < shape[a] {
            return Err(AugmentError::SourceTooSmall { axis: a });
        }
        max_offset[a] = source.shape[a] - shape[a];
    }
    let mut draws = 0u32;
    while draws < max_draws {
        draws += 1;
        let offset = [
            source.offset[0] + rng.gen_range(0..=max_offset[0]) as i64,
            source.offset[1] + rng.gen_range(0..=max_offset[1]) as i64,
            source.offset[2] + rng.gen_range(0..=max_offset[2]) as i64,
        ];
        let roi = Roi::new(offset, shape);
        let patch = read_region(labels, roi, 0u8);
        let has_positive = patch.data().iter().any(|&v| v > 0);
        if has_positive || !rng.gen_bool(rejection_probability) {
            return Ok((roi, draws));
        }
    }
    Err(AugmentError::DrawBudgetExhausted { draws })
}

/// Swaps the y and x axes (offset, shape, voxel size, and data).
pub fn transpose_xy<T: crate::geom::Element>(v: &Volume<T>) -> Volume<T> {
    let roi = v.roi();
    let out_roi = Roi::new(
        [roi.offset[0], roi.offset[2], roi.offset[1]],
        [roi.shape[0], roi.shape[2], roi.shape[1]],
    );
    let vs = v.voxel_size();
    let out_vs = crate::geom::VoxelSize::new(vs.z_nm, vs.x_nm, vs.y_nm);
    let mut out = Volume::zeros(out_roi, out_vs);
    for (p, value) in v.iter() {
        out.set([p[0], p[2], p[1]], value);
    }
    out
}

/// Dense in-plane displacement field over a 2D extent.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    pub extent: [u64; 2],
    /// Per-pixel displacement in voxels, row-major `(y, x)`.
    pub dy: Vec<f64>,
    pub dx: Vec<f64>,
}

/// Number of control nodes covering `extent` pixels at `spacing`.
pub fn control_node_count(extent: u64, spacing: u64) -> usize {
    assert!(spacing >= 1, "control spacing must be at least 1");
    ((extent.max(1) - 1) / spacing + 2) as usize
}

/// Bilinear interpolation of per-node control offsets onto a dense grid.
///
/// Control node `(i, j)` sits at pixel `(i * spacing_y, j * spacing_x)`.
pub fn displacement_from_controls(
    control_dy: &[f64],
    control_dx: &[f64],
    nodes: [usize; 2],
    spacing: [u64; 2],
    extent: [u64; 2],
) -> DisplacementField {
    assert_eq!(control_dy.len(), nodes[0] * nodes[1]);
    assert_eq!(control_dx.len(), nodes[0] * nodes[1]);
    let (ny, nx) = (extent[0] as usize, extent[1] as usize);
    let mut dy = Vec::with_capacity(ny * nx);
    let mut dx = Vec::with_capacity(ny * nx);
    for y in 0..ny {
        let cy = y as f64 / spacing[0] as f64;
        let iy = (cy as usize).min(nodes[0] - 2);
        let ty = cy - iy as f64;
        for x in 0..nx {
            let cx = x as f64 / spacing[1] as f64;
            let ix = (cx as usize).min(nodes[1] - 2);
            let tx = cx - ix as f64;
            let idx = |i: usize, j: usize| i * nodes[1] + j;
            let blend = |c: &[f64]| -> f64 {
                (1.0 - ty) * (1.0 - tx) * c[idx(iy, ix)]
                    + (1.0 - ty) * tx * c[idx(iy, ix + 1)]
                    + ty * (1.0 - tx) * c[idx(iy + 1, ix)]
                    + ty * tx * c[idx(iy + 1, ix + 1)]
            };
            dy.push(blend(control_dy));
            dx.push(blend(control_dx));
        }
    }
    DisplacementField { extent, dy, dx }
}

/// Gaussian-jittered control grid rendered to a dense field, plus an optional
/// rigid in-plane rotation about the extent center.
pub fn random_displacement_field<R: Rng>(
    extent: [u64; 2],
    control_spacing: [u64; 2],
    jitter_sigma: f64,
    rotation_radians: f64,
    rng: &mut R,
) -> DisplacementField {
    let nodes = [
        control_node_count(extent[0], control_spacing[0]),
        control_node_count(extent[1], control_spacing[1]),
    ];
    let normal = Normal::new(0.0, jitter_sigma).expect("sigma must be non-negative");
    let n = nodes[0] * nodes[1];
    let mut control_dy = Vec::with_capacity(n);
    let mut control_dx = Vec::with_capacity(n);
    for _ in 0..n {
        control_dy.push(normal.sample(rng));
        control_dx.push(normal.sample(rng));
    }
    let mut field =
        displacement_from_controls(&control_dy, &control_dx, nodes, control_spacing, extent);
    if rotation_radians != 0.0 {
        let (sin, cos) = (libm::sin(rotation_radians), libm::cos(rotation_radians));
        let cy = (extent[0].max(1) - 1) as f64 / 2.0;
        let cx = (extent[1].max(1) - 1) as f64 / 2.0;
        let mut i = 0usize;
        for y in 0..extent[0] {
            for x in 0..extent[1] {
                let ry = y as f64 - cy;
                let rx = x as f64 - cx;
                // Source coordinate under the inverse rotation.
                let sy = cos * ry + sin * rx + cy;
                let sx = -sin * ry + cos * rx + cx;
                field.dy[i] += sy - y as f64;
                field.dx[i] += sx - x as f64;
                i += 1;
            }
        }
    }
    field
}

fn sample_bilinear(section: &[f32], ny: usize, nx: usize, fy: f64, fx: f64) -> f32 {
    let fy = fy.clamp(0.0, (ny - 1) as f64);
    let fx = fx.clamp(0.0, (nx - 1) as f64);
    let iy = (fy as usize).min(ny.saturating_sub(2));
    let ix = (fx as usize).min(nx.saturating_sub(2));
    let ty = fy - iy as f64;
    let tx = fx - ix as f64;
    let at = |y: usize, x: usize| section[y * nx + x] as f64;
    if ny == 1 && nx == 1 {
        return section[0];
    }
    let (y1, x1) = ((iy + 1).min(ny - 1), (ix + 1).min(nx - 1));
    let v = (1.0 - ty) * (1.0 - tx) * at(iy, ix)
        + (1.0 - ty) * tx * at(iy, x1)
        + ty * (1.0 - tx) * at(y1, ix)
        + ty * tx * at(y1, x1);
    v as f32
}

fn nearest_index(f: f64, n: usize) -> usize {
    (libm::round(f).clamp(0.0, (n - 1) as f64)) as usize
}

/// Warps a volume in-plane by the displacement field (pull semantics: output
/// at `p` samples the input at `p + d(p)`).
///
/// `field_origin` locates the field's `(0, 0)` pixel in absolute `(y, x)`
/// coordinates so one field can warp volumes over nested regions coherently.
pub fn warp_linear(
    v: &Volume<f32>,
    field: &DisplacementField,
    field_origin: [i64; 2],
) -> Volume<f32> {
    let roi = v.roi();
    let (nz, ny, nx) = (
        roi.shape[0] as usize,
        roi.shape[1] as usize,
        roi.shape[2] as usize,
    );
    let fx_extent = field.extent[1] as usize;
    let mut out = Volume::zeros(roi, v.voxel_size());
    for z in 0..nz {
        let section = &v.data()[z * ny * nx..(z + 1) * ny * nx];
        for y in 0..ny {
            let gy = (roi.offset[1] + y as i64 - field_origin[0]) as usize;
            for x in 0..nx {
                let gx = (roi.offset[2] + x as i64 - field_origin[1]) as usize;
                let f = gy * fx_extent + gx;
                let value = sample_bilinear(
                    section,
                    ny,
                    nx,
                    y as f64 + field.dy[f],
                    x as f64 + field.dx[f],
                );
                out.data_mut()[z * ny * nx + y * nx + x] = value;
            }
        }
    }
    out
}

/// Nearest-neighbor variant of [`warp_linear`] for label volumes.
pub fn warp_nearest(
    v: &Volume<u8>,
    field: &DisplacementField,
    field_origin: [i64; 2],
) -> Volume<u8> {
    let roi = v.roi();
    let (nz, ny, nx) = (
        roi.shape[0] as usize,
        roi.shape[1] as usize,
        roi.shape[2] as usize,
    );
    let fx_extent = field.extent[1] as usize;
    let mut out = Volume::zeros(roi, v.voxel_size());
    for z in 0..nz {
        let section = &v.data()[z * ny * nx..(z + 1) * ny * nx];
        for y in 0..ny {
            let gy = (roi.offset[1] + y as i64 - field_origin[0]) as usize;
            for x in 0..nx {
                let gx = (roi.offset[2] + x as i64 - field_origin[1]) as usize;
                let f = gy * fx_extent + gx;
                let sy = nearest_index(y as f64 + field.dy[f], ny);
                let sx = nearest_index(x as f64 + field.dx[f], nx);
                out.data_mut()[z * ny * nx + y * nx + x] = section[sy * nx + sx];
            }
        }
    }
    out
}

/// In-plane elastic deformation: a jittered control grid interpolated to a
/// dense displacement field, then linear resampling. Displacements are zero
/// along z (section-preserving).
pub fn apply_elastic<R: Rng>(
    v: &Volume<f32>,
    control_spacing: [u64; 2],
    jitter_sigma: f64,
    rng: &mut R,
) -> Volume<f32> {
    let roi = v.roi();
    let extent = [roi.shape[1], roi.shape[2]];
    let field = random_displacement_field(extent, control_spacing, jitter_sigma, 0.0, rng);
    warp_linear(v, &field, [roi.offset[1], roi.offset[2]])
}

/// Per-section dropout and noise: each z section is zeroed with probability
/// `missing_p`, otherwise it receives additive Gaussian noise with probability
/// `noisy_p`. Values are clamped to `[0, 1]`.
pub fn apply_section_artifacts<R: Rng>(
    v: &Volume<f32>,
    missing_p: f64,
    noisy_p: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Volume<f32> {
    let mut out = v.clone();
    let roi = v.roi();
    let section_len = (roi.shape[1] * roi.shape[2]) as usize;
    let normal = Normal::new(0.0, noise_sigma).expect("sigma must be non-negative");
    for z in 0..roi.shape[0] as usize {
        let section = &mut out.data_mut()[z * section_len..(z + 1) * section_len];
        if rng.gen_bool(missing_p) {
            section.fill(0.0);
        } else if rng.gen_bool(noisy_p) {
            for value in section.iter_mut() {
                *value = (*value + normal.sample(rng) as f32).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Affine intensity change `v * scale + shift`, clamped to `[0, 1]`.
pub fn apply_intensity(v: &Volume<f32>, scale: f64, shift: f64) -> Volume<f32> {
    v.map(|e| ((e as f64 * scale + shift).clamp(0.0, 1.0)) as f32)
}

/// Draws one batch: a random region (with synapse-biased rejection), cut with
/// context margin from the raw source, then augmented in the fixed order
/// transpose, elastic, intensity, section artifacts.
pub fn sample_batch(
    sources: SampleSources<'_>,
    request: &SampleRequest,
    config: &AugmentConfig,
    seed: u64,
) -> Result<Batch, AugmentError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (labels_roi, draws) = draw_labels_roi(
        sources.labels,
        request.labels_shape,
        request.rejection_probability,
        request.max_draws,
        &mut rng,
    )?;
    let raw_roi = labels_roi.grow(request.context);
    let mut raw = read_region(sources.raw, raw_roi, 0.0f32);
    let mut labels = read_region(sources.labels, labels_roi, 0u8);
    let mut aux = sources
        .aux_labels
        .map(|a| read_region(a, labels_roi, 0u8));

    // Transpose: drawn unconditionally to keep the rng stream stable, applied
    // only when the in-plane geometry is symmetric.
    let do_transpose = rng.gen_bool(config.transpose_xy);
    if do_transpose
        && request.labels_shape[1] == request.labels_shape[2]
        && request.context[1] == request.context[2]
    {
        raw = transpose_xy(&raw);
        labels = transpose_xy(&labels);
        aux = aux.as_ref().map(transpose_xy);
    }

    // Elastic: one field over the raw extent warps all volumes coherently.
    let rotation = rng.gen_range(config.elastic.rotation[0]..=config.elastic.rotation[1]);
    if config.elastic.jitter_sigma > 0.0 || rotation != 0.0 {
        let raw_roi = raw.roi();
        let field = random_displacement_field(
            [raw_roi.shape[1], raw_roi.shape[2]],
            config.elastic.control_spacing,
            config.elastic.jitter_sigma,
            rotation,
            &mut rng,
        );
        let origin = [raw_roi.offset[1], raw_roi.offset[2]];
        raw = warp_linear(&raw, &field, origin);
        labels = warp_nearest(&labels, &field, origin);
        aux = aux.map(|a| warp_nearest(&a, &field, origin));
    }

    let scale = rng.gen_range(config.intensity.scale[0]..=config.intensity.scale[1]);
    let shift = rng.gen_range(config.intensity.shift[0]..=config.intensity.shift[1]);
    if scale != 1.0 || shift != 0.0 {
        raw = apply_intensity(&raw, scale, shift);
    }

    raw = apply_section_artifacts(
        &raw,
        config.section.missing_p,
        config.section.noisy_p,
        config.section.noise_sigma,
        &mut rng,
    );

    Ok(Batch {
        raw,
        labels,
        aux_labels: aux,
        rng_seed: seed,
        draws,
    })
}

/// Per-voxel loss weights that give both classes equal total mass:
/// positives get `N / 2P`, negatives `N / 2(N - P)`; single-class volumes get
/// uniform weight 1.
pub fn class_balance_weights(labels: &Volume<u8>) -> Volume<f32> {
    let n = labels.roi().num_voxels();
    let p = labels.data().iter().filter(|&&v| v > 0).count() as u64;
    if p == 0 || p == n {
        return Volume::filled(labels.roi(), labels.voxel_size(), 1.0f32);
    }
    let w_pos = (n as f64 / (2.0 * p as f64)) as f32;
    let w_neg = (n as f64 / (2.0 * (n - p) as f64)) as f32;
    labels.map(|v| if v > 0 { w_pos } else { w_neg })
}

/// Weighted mean squared error: `sum(w * (pred - target)^2) / sum(w)`.
pub fn balanced_l2_loss(
    pred: &Volume<f32>,
    target: &Volume<f32>,
    weights: &Volume<f32>,
) -> Result<f64, AugmentError> {
    if pred.roi() != target.roi() || pred.roi() != weights.roi() {
        return Err(AugmentError::ShapeMismatch);
    }
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..pred.data().len() {
        let w = weights.data()[i] as f64;
        let d = pred.data()[i] as f64 - target.data()[i] as f64;
        num += w * d * d;
        den += w;
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Plain mean squared error (uniform weights).
pub fn unbalanced_l2_loss(pred: &Volume<f32>, target: &Volume<f32>) -> Result<f64, AugmentError> {
    let ones = Volume::filled(pred.roi(), pred.voxel_size(), 1.0f32);
    balanced_l2_loss(pred, target, &ones)
}

/// Equal-weight combination of the cleft and auxiliary loss terms.
pub fn combined_loss(cleft_term: f64, aux_term: f64) -> f64 {
    (cleft_term + aux_term) / 2.0
}
