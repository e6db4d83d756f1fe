//! Subcommand implementations. Every command returns a JSON value for stdout;
//! human-readable progress goes to the log (stderr).

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{json, Value};

use voxmill_core::augment::{
    self, AugmentConfig, SampleRequest, SampleSources,
};
use voxmill_core::geom::{AnyVolume, ElementType, Roi, Volume, VoxelSize};
use voxmill_core::metrics::{self, CleftScore};
use voxmill_core::plan::{eta_seconds, plan_blocks, BlockPlan, MaskSpec};
use voxmill_core::pyramid;
use voxmill_core::sdt::{self, SdtParams};
use voxmill_core::unet::{self, ArchSpec};

use crate::config::{
    parse_range, parse_shape, parse_triple_f64, parse_triple_u64, GlobalConfig,
};
use crate::engine::{
    self, DiscardSink, DownscalePredictor, FixedDelayPredictor, IdentityPredictor,
    MemSource, Predictor, RunOptions, StdtOraclePredictor, StencilPredictor,
};
use crate::n5::{Compression, Dataset, DatasetAttributes};

/// A failed invocation, rendered as the one-line JSON error object.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub context: Value,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            context: Value::Null,
        }
    }

    pub fn with_context(mut self, context: Value) -> Self {
        self.context = context;
        self
    }

    pub fn to_json(&self) -> Value {
        json!({ "code": self.code, "message": self.message, "context": self.context })
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl From<crate::n5::StoreError> for CliError {
    fn from(e: crate::n5::StoreError) -> Self {
        use crate::n5::StoreError::*;
        let code = match &e {
            Io { .. } => "io",
            InvalidAttributes { .. } => "attributes",
            Chunk { .. } => "codec",
            OutOfBounds { .. } => "bounds",
            TypeMismatch { .. } => "type",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<engine::EngineError> for CliError {
    fn from(e: engine::EngineError) -> Self {
        use engine::EngineError::*;
        let code = match &e {
            Io { .. } => "io",
            Contract { .. } => "contract",
            Misaligned { .. } => "alignment",
            Journal { .. } => "journal",
            Unsupported(_) => "unsupported",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<unet::UnetError> for CliError {
    fn from(e: unet::UnetError) -> Self {
        CliError::new("arch", e.to_string())
    }
}

impl From<sdt::SdtError> for CliError {
    fn from(e: sdt::SdtError) -> Self {
        CliError::new("labels", e.to_string())
    }
}

impl From<metrics::MetricsError> for CliError {
    fn from(e: metrics::MetricsError) -> Self {
        CliError::new("shape", e.to_string())
    }
}

impl From<augment::AugmentError> for CliError {
    fn from(e: augment::AugmentError) -> Self {
        CliError::new("sampling", e.to_string())
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::new("usage", message)
}

const PRESET_DTU1: &str = include_str!("../presets/dtu1-like.json");
const PRESET_DTU2: &str = include_str!("../presets/dtu2-like.json");

/// Resolves `--arch` to a bundled preset name or a JSON file path.
pub fn load_arch(spec: &str) -> Result<ArchSpec, CliError> {
    let text = match spec {
        "dtu1-like" => PRESET_DTU1.to_string(),
        "dtu2-like" => PRESET_DTU2.to_string(),
        path => std::fs::read_to_string(path)
            .map_err(|e| CliError::new("io", format!("{path}: {e}")))?,
    };
    let arch: ArchSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::new("arch", format!("invalid architecture spec: {e}")))?;
    arch.validate()?;
    Ok(arch)
}

fn open_dataset(path: &Path, voxel_size: VoxelSize) -> Result<Dataset, CliError> {
    Ok(Dataset::open(path)?.with_voxel_size(voxel_size))
}

fn fraction_positive(v: &Volume<u8>) -> (u64, f64) {
    let n = v.data().iter().filter(|&&e| e > 0).count() as u64;
    let total = v.roi().num_voxels().max(1);
    (n, n as f64 / total as f64)
}

/// Intensities in [0, 1]: integer volumes are scaled by their type maximum,
/// float volumes pass through.
fn normalize_intensity(v: &AnyVolume) -> Volume<f32> {
    match v {
        AnyVolume::U8(v) => v.map(|e| e as f32 / u8::MAX as f32),
        AnyVolume::U16(v) => v.map(|e| e as f32 / u16::MAX as f32),
        AnyVolume::U32(v) => v.map(|e| (e as f64 / u32::MAX as f64) as f32),
        AnyVolume::U64(v) => v.map(|e| (e as f64 / u64::MAX as f64) as f32),
        AnyVolume::F32(v) => v.clone(),
        AnyVolume::F64(v) => v.map(|e| e as f32),
    }
}

fn parse_compression(text: &str) -> Result<Compression, CliError> {
    match text {
        "raw" => Ok(Compression::Raw),
        "gzip" => Ok(Compression::Gzip),
        other => Err(usage(format!("unknown compression {other:?} (raw|gzip)"))),
    }
}

fn clamp_chunks(chunks: [u64; 3], dims: [u64; 3]) -> [u64; 3] {
    [
        chunks[0].min(dims[0]),
        chunks[1].min(dims[1]),
        chunks[2].min(dims[2]),
    ]
}

/// Opens the output dataset if it exists (validating its geometry), creates
/// it otherwise.
fn open_or_create_output(
    path: &Path,
    dimensions: [u64; 3],
    chunk_size: [u64; 3],
    element_type: ElementType,
    compression: Compression,
    voxel_size: VoxelSize,
) -> Result<Dataset, CliError> {
    if path.join(crate::n5::ATTRIBUTES_FILE).exists() {
        let ds = open_dataset(path, voxel_size)?;
        let attrs = ds.attributes();
        if attrs.dimensions != dimensions || attrs.element_type != element_type {
            return Err(CliError::new(
                "attributes",
                format!(
                    "existing output {} has dimensions {:?} type {:?}, expected {:?} {:?}",
                    path.display(),
                    attrs.dimensions,
                    attrs.element_type,
                    dimensions,
                    element_type
                ),
            ));
        }
        return Ok(ds);
    }
    Ok(Dataset::create(
        path,
        DatasetAttributes::new(dimensions, chunk_size, element_type, compression),
    )?
    .with_voxel_size(voxel_size))
}

/// Parsed `--predictor` specification.
pub enum PredictorSpec {
    Identity,
    Box { radii: [u64; 3] },
    Gauss { radii: [u64; 3], sigma: [f64; 3] },
    StdtOracle { labels: PathBuf, scale: f64 },
}

impl PredictorSpec {
    /// Syntax: `identity` | `box:RZ,RY,RX` | `gauss:RZ,RY,RX@SZ,SY,SX` |
    /// `stdt-oracle:<labels dataset>[@SCALE]`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text == "identity" {
            return Ok(PredictorSpec::Identity);
        }
        if let Some(rest) = text.strip_prefix("box:") {
            return Ok(PredictorSpec::Box {
                radii: parse_triple_u64(rest).map_err(usage)?,
            });
        }
        if let Some(rest) = text.strip_prefix("gauss:") {
            let (radii, sigma) = rest
                .split_once('@')
                .ok_or_else(|| usage("gauss predictor needs RZ,RY,RX@SZ,SY,SX"))?;
            return Ok(PredictorSpec::Gauss {
                radii: parse_triple_u64(radii).map_err(usage)?,
                sigma: parse_triple_f64(sigma).map_err(usage)?,
            });
        }
        if let Some(rest) = text.strip_prefix("stdt-oracle:") {
            let (path, scale) = match rest.rsplit_once('@') {
                Some((path, scale)) => (
                    path,
                    scale
                        .parse::<f64>()
                        .map_err(|_| usage(format!("bad scale {scale:?}")))?,
                ),
                None => (rest, 50.0),
            };
            return Ok(PredictorSpec::StdtOracle {
                labels: PathBuf::from(path),
                scale,
            });
        }
        Err(usage(format!(
            "unknown predictor {text:?} (identity | box:.. | gauss:.. | stdt-oracle:..)"
        )))
    }

    /// Builds the predictor, raising its context to `context` when given
    /// (the block padding implied by `--arch`).
    pub fn build(
        &self,
        input_type: ElementType,
        voxel_size: VoxelSize,
        context: Option<[u64; 3]>,
    ) -> Result<Box<dyn Predictor>, CliError> {
        Ok(match self {
            PredictorSpec::Identity => {
                let mut p = IdentityPredictor::new(input_type);
                if let Some(c) = context {
                    p = p.with_context(c);
                }
                Box::new(p)
            }
            PredictorSpec::Box { radii } => {
                let p = StencilPredictor::box_filter(*radii);
                let p = match context {
                    Some(c) => p
                        .with_context(c)
                        .map_err(|e| CliError::new("contract", e.to_string()))?,
                    None => p,
                };
                Box::new(p)
            }
            PredictorSpec::Gauss { radii, sigma } => {
                let p = StencilPredictor::gaussian(*radii, *sigma);
                let p = match context {
                    Some(c) => p
                        .with_context(c)
                        .map_err(|e| CliError::new("contract", e.to_string()))?,
                    None => p,
                };
                Box::new(p)
            }
            PredictorSpec::StdtOracle { labels, scale } => {
                let ds = open_dataset(labels, voxel_size)?;
                let mut p =
                    StdtOraclePredictor::new(ds, SdtParams::new(*scale, voxel_size));
                if let Some(c) = context {
                    p = p.with_context(c);
                }
                Box::new(p)
            }
        })
    }
}

/// Loaded mask volume plus its full-resolution downscale factors.
type MaskData = (Volume<u8>, [u64; 3]);

fn load_mask(
    spec: Option<&(String, [u64; 3])>,
    voxel_size: VoxelSize,
) -> Result<Option<MaskData>, CliError> {
    match spec {
        None => Ok(None),
        Some((path, factors)) => {
            let ds = open_dataset(Path::new(path), voxel_size)?;
            let mask = ds.read_all()?.binarize(None);
            Ok(Some((mask, *factors)))
        }
    }
}

fn plans_json(plans: &[BlockPlan]) -> Value {
    serde_json::to_value(plans).expect("plans serialize")
}

#[allow(clippy::too_many_arguments)]
pub fn predict(
    input: &Path,
    output: &Path,
    predictor_spec: &str,
    arch: Option<&str>,
    blocks: &str,
    mask: Option<&str>,
    partition: Option<&str>,
    resume: Option<&Path>,
    fill: f64,
    out_chunks: Option<&str>,
    limit: Option<usize>,
    prefetch: usize,
    global: &GlobalConfig,
) -> Result<Value, CliError> {
    let block_shape = parse_shape(blocks).map_err(usage)?;
    let input_ds = open_dataset(input, global.voxel_size)?;
    let spec = PredictorSpec::parse(predictor_spec)?;

    // --arch pads input blocks by the network FOV and validates the block size.
    let arch_context = match arch {
        Some(a) => {
            let arch = load_arch(a)?;
            Some(unet::context_per_side(&arch, block_shape)?)
        }
        None => None,
    };
    let predictor = spec.build(
        input_ds.attributes().element_type,
        global.voxel_size,
        arch_context,
    )?;
    let contract = predictor.contract();

    let mask_ref = mask
        .map(|m| crate::config::parse_mask_ref(m).map_err(usage))
        .transpose()?;
    let mask_data = load_mask(mask_ref.as_ref(), global.voxel_size)?;
    let mask_spec = mask_data.as_ref().map(|(volume, factors)| MaskSpec {
        mask: volume,
        downscale_factors: *factors,
    });

    let all_plans = plan_blocks(
        input_ds.bounds(),
        block_shape,
        contract.context,
        mask_spec,
    );
    let blocks_total = all_plans.len();

    // Static partition for multi-machine runs: machine I of N takes the I-th
    // contiguous slice of the ordered plan list (block ids are preserved, so
    // per-machine journals stay consistent).
    let partition = partition
        .map(|p| crate::config::parse_partition(p).map_err(usage))
        .transpose()?;
    let plans: Vec<BlockPlan> = match partition {
        None => all_plans,
        Some((index, count)) => {
            let per = blocks_total.div_ceil(count);
            let start = (index * per).min(blocks_total);
            let end = ((index + 1) * per).min(blocks_total);
            all_plans[start..end].to_vec()
        }
    };
    let masked_in = plans.iter().filter(|p| p.masked_in).count();
    log::info!(
        "planned {blocks_total} blocks over {:?}; this partition holds {} ({masked_in} masked in)",
        input_ds.attributes().dimensions,
        plans.len(),
    );

    let chunk_size = match out_chunks {
        Some(c) => parse_shape(c).map_err(usage)?,
        None => block_shape,
    };
    let dims = input_ds.attributes().dimensions;
    let output_ds = open_or_create_output(
        output,
        dims,
        clamp_chunks(chunk_size, dims),
        contract.output_type,
        input_ds.attributes().compression,
        global.voxel_size,
    )?;

    let opts = RunOptions {
        n_workers: global.workers,
        prefetch,
        fill,
        journal: resume.map(Path::to_path_buf),
        limit,
    };
    let report = engine::run(&plans, predictor.as_ref(), &input_ds, &output_ds, &opts)?;
    Ok(json!({
        "output": output.display().to_string(),
        "blocks_total": blocks_total,
        "blocks_in_partition": plans.len(),
        "blocks_masked_in": masked_in,
        "partition": partition.map(|(i, n)| json!([i, n])),
        "context": contract.context,
        "report": report,
    }))
}

fn score_to_json(score: &CleftScore) -> Value {
    // Infinite distances (degenerate empty-truth case) render as null.
    let num = |v: f64| {
        if v.is_finite() {
            json!(v)
        } else {
            Value::Null
        }
    };
    json!({
        "fpd": num(score.fpd_nm),
        "fnd": num(score.fnd_nm),
        "cremi_score": num(score.cremi_score_nm),
        "n_pred_pos": score.n_pred_pos,
        "n_true_pos": score.n_true_pos,
    })
}

pub fn evaluate(
    pred: &Path,
    truth: &Path,
    ignore: Option<&Path>,
    ignore_label: Option<u64>,
    global: &GlobalConfig,
) -> Result<Value, CliError> {
    let pred_v = open_dataset(pred, global.voxel_size)?
        .read_all()?
        .binarize(None);
    let truth_v = open_dataset(truth, global.voxel_size)?
        .read_all()?
        .binarize(ignore_label);
    let ignore_v = ignore
        .map(|p| -> Result<Volume<u8>, CliError> {
            Ok(open_dataset(p, global.voxel_size)?.read_all()?.binarize(None))
        })
        .transpose()?;
    let score = metrics::cleft_score(&pred_v, &truth_v, global.voxel_size, ignore_v.as_ref())?;
    Ok(score_to_json(&score))
}

pub fn sedt_cmd(
    labels: &Path,
    output: &Path,
    ignore_label: Option<u64>,
    compression: &str,
    global: &GlobalConfig,
) -> Result<Value, CliError> {
    let labels_ds = open_dataset(labels, global.voxel_size)?;
    let binary = labels_ds.read_all()?.binarize(ignore_label);
    let field = sdt::sedt(&binary, global.voxel_size)?;
    let dims = labels_ds.attributes().dimensions;
    let out = open_or_create_output(
        output,
        dims,
        labels_ds.attributes().chunk_size,
        ElementType::F32,
        parse_compression(compression)?,
        global.voxel_size,
    )?;
    out.write_roi(&field)?;
    let (lo, hi) = field
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (n_fg, _) = fraction_positive(&binary);
    Ok(json!({
        "output": output.display().to_string(),
        "n_foreground": n_fg,
        "min_nm": lo,
        "max_nm": hi,
    }))
}

pub fn stdt_cmd(
    input: &Path,
    output: &Path,
    scale: f64,
    compression: &str,
    global: &GlobalConfig,
) -> Result<Value, CliError> {
    if scale <= 0.0 {
        return Err(usage(format!("scale must be positive, got {scale}")));
    }
    let input_ds = open_dataset(input, global.voxel_size)?;
    let field = input_ds.read_all()?.to_f32();
    let squashed = sdt::stdt(&field, scale);
    let out = open_or_create_output(
        output,
        input_ds.attributes().dimensions,
        input_ds.attributes().chunk_size,
        ElementType::F32,
        parse_compression(compression)?,
        global.voxel_size,
    )?;
    out.write_roi(&squashed)?;
    Ok(json!({
        "output": output.display().to_string(),
        "scale_nm": scale,
    }))
}

pub fn threshold_cmd(
    input: &Path,
    output: &Path,
    t: f64,
    compression: &str,
    global: &GlobalConfig,
) -> Result<Value, CliError> {
    let input_ds = open_dataset(input, global.voxel_size)?;
    let field = input_ds.read_all()?.to_f32();
    let labels = sdt::threshold_to_labels(&field, t as f32);
    let out = open_or_create_output(
        output,
        input_ds.attributes().dimensions,
        input_ds.attributes().chunk_size,
        ElementType::U8,
        parse_compression(compression)?,
        global.voxel_size,
    )?;
    out.write_roi(&labels)?;
    let (n, fraction) = fraction_positive(&labels);
    Ok(json!({
        "output": output.display().to_string(),
        "threshold": t,
        "n_positive": n,
        "fraction_positive": fraction,
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn sample_cmd(
    raw: &Path,
    labels: &Path,
    aux: Option<&Path>,
    shape: &str,
    context: &str,
    count: usize,
    output: &Path,
    augment_file: Option<&Path>,
    rejection: f64,
    max_draws: u32,
    global: &GlobalConfig,
) -> Result<Value, CliError> {
    let labels_shape = parse_shape(shape).map_err(usage)?;
    let context = parse_triple_u64(context).map_err(usage)?;
    let config: AugmentConfig = match augment_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?
        }
        None => AugmentConfig::default(),
    };
    config.validate()?;

    let raw_v = normalize_intensity(&open_dataset(raw, global.voxel_size)?.read_all()?);
    let labels_v = open_dataset(labels, global.voxel_size)?
        .read_all()?
        .binarize(None);
    let aux_v = aux
        .map(|p| -> Result<Volume<u8>, CliError> {
            Ok(open_dataset(p, global.voxel_size)?.read_all()?.binarize(None))
        })
        .transpose()?;

    let sources = SampleSources {
        raw: &raw_v,
        labels: &labels_v,
        aux_labels: aux_v.as_ref(),
    };
    let request = SampleRequest {
        labels_shape,
        context,
        rejection_probability: rejection,
        max_draws,
    };

    // Batches are written anchored at the origin for the consumer.
    fn write_batch_volume<T: crate::n5::N5Element>(
        dir: &Path,
        name: &str,
        v: &Volume<T>,
        voxel_size: VoxelSize,
    ) -> Result<(), CliError> {
        let shape = v.roi().shape;
        let ds = Dataset::create(
            dir.join(name),
            DatasetAttributes::new(shape, shape, T::TYPE, Compression::Gzip),
        )?
        .with_voxel_size(voxel_size);
        let rebased = Volume::from_vec(
            Roi::new([0, 0, 0], shape),
            voxel_size,
            v.data().to_vec(),
        );
        ds.write_roi(&rebased)?;
        Ok(())
    }

    let mut batches = Vec::new();
    for i in 0..count {
        let seed = global.seed.wrapping_add(i as u64);
        let batch = augment::sample_batch(sources, &request, &config, seed)?;
        let dir = output.join(format!("batch_{i:05}"));
        write_batch_volume(&dir, "raw", &batch.raw, global.voxel_size)?;
        write_batch_volume(&dir, "labels", &batch.labels, global.voxel_size)?;
        write_batch_volume(
            &dir,
            "weights",
            &augment::class_balance_weights(&batch.labels),
            global.voxel_size,
        )?;
        if let Some(aux) = &batch.aux_labels {
            write_batch_volume(&dir, "aux_labels", aux, global.voxel_size)?;
        }
        batches.push(json!({
            "dir": dir.display().to_string(),
            "seed": batch.rng_seed,
            "draws": batch.draws,
        }));
    }
    Ok(json!({ "batches": batches }))
}

#[allow(clippy::too_many_arguments)]
pub fn pyramid_cmd(
    input: &Path,
    levels: &str,
    output_root: Option<&Path>,
    reducer: &str,
    compression: &str,
    out_chunks: &str,
    prefetch: usize,
    global: &GlobalConfig,
) -> Result<Value, CliError> {
    let steps = crate::config::parse_level_factors(levels).map_err(usage)?;
    let compression = parse_compression(compression)?;
    let chunk = parse_shape(out_chunks).map_err(usage)?;
    let majority = match reducer {
        "mean" => false,
        "majority" => true,
        other => return Err(usage(format!("unknown reducer {other:?} (mean|majority)"))),
    };
    let root = match output_root {
        Some(r) => r.to_path_buf(),
        None => input
            .parent()
            .ok_or_else(|| usage("input dataset has no parent directory; pass --output-root"))?
            .to_path_buf(),
    };

    let schedule = pyramid::pyramid_schedule(&steps);
    let mut levels_json = vec![json!({
        "index": 0,
        "dataset": input.display().to_string(),
        "factors": [1, 1, 1],
        "cumulative_factors": [1, 1, 1],
        "voxel_size_nm": global.voxel_size.nm(),
    })];

    let mut prev = open_dataset(input, global.voxel_size)?;
    if majority && prev.attributes().element_type != ElementType::U8 {
        return Err(usage("the majority reducer requires a uint8 label dataset"));
    }
    for level in &schedule[1..] {
        let factors = level.step_factors;
        let out_bounds = pyramid::downscaled_roi(&prev.bounds(), factors);
        let dims = out_bounds.shape;
        let voxel_size = global.voxel_size.scaled(level.cumulative_factors);
        let dir = root.join(format!("s{}", level.index));
        let element_type = if majority {
            ElementType::U8
        } else {
            ElementType::F32
        };
        let out_ds = open_or_create_output(
            &dir,
            dims,
            clamp_chunks(chunk, dims),
            element_type,
            compression,
            voxel_size,
        )?;
        let block = out_ds.attributes().chunk_size;
        let plans = plan_blocks(out_bounds, block, [0, 0, 0], None);
        let predictor: Box<dyn Predictor> = if majority {
            Box::new(crate::engine::MajorityDownscalePredictor {
                factors,
                source_bounds: prev.bounds(),
            })
        } else {
            Box::new(DownscalePredictor {
                factors,
                source_bounds: prev.bounds(),
            })
        };
        let opts = RunOptions {
            n_workers: global.workers,
            prefetch,
            fill: 0.0,
            journal: None,
            limit: None,
        };
        engine::run(&plans, predictor.as_ref(), &prev, &out_ds, &opts)?;
        levels_json.push(json!({
            "index": level.index,
            "dataset": dir.display().to_string(),
            "factors": factors,
            "cumulative_factors": level.cumulative_factors,
            "voxel_size_nm": voxel_size.nm(),
        }));
        prev = out_ds;
    }
    Ok(json!({ "levels": levels_json }))
}

pub fn mask_cmd(
    input: &Path,
    output: &Path,
    range: &str,
    compression: &str,
    global: &GlobalConfig,
) -> Result<Value, CliError> {
    let (lo, hi) = parse_range(range).map_err(usage)?;
    let input_ds = open_dataset(input, global.voxel_size)?;
    let mask = pyramid::build_mask(&input_ds.read_all()?, lo, hi);
    let dims = input_ds.attributes().dimensions;
    let out = open_or_create_output(
        output,
        dims,
        input_ds.attributes().chunk_size,
        ElementType::U8,
        parse_compression(compression)?,
        global.voxel_size,
    )?;
    out.write_roi(&mask)?;
    let (n, fraction) = fraction_positive(&mask);
    Ok(json!({
        "output": output.display().to_string(),
        "range": [lo, hi],
        "n_positive": n,
        "fraction_positive": fraction,
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn plan_cmd(
    input: Option<&Path>,
    total: Option<&str>,
    offset: Option<&str>,
    blocks: &str,
    context: Option<&str>,
    arch: Option<&str>,
    mask: Option<&str>,
    global: &GlobalConfig,
) -> Result<Value, CliError> {
    let block_shape = parse_shape(blocks).map_err(usage)?;
    let total_roi = match (input, total) {
        (Some(path), None) => open_dataset(path, global.voxel_size)?.bounds(),
        (None, Some(shape)) => {
            let shape = parse_shape(shape).map_err(usage)?;
            let offset = match offset {
                Some(o) => crate::config::parse_triple_i64(o).map_err(usage)?,
                None => [0, 0, 0],
            };
            Roi::new(offset, shape)
        }
        _ => return Err(usage("pass exactly one of --input or --total")),
    };

    let mut fov_json = Value::Null;
    let context = match (context, arch) {
        (Some(c), None) => parse_triple_u64(c).map_err(usage)?,
        (None, Some(a)) => {
            let arch = load_arch(a)?;
            let report = unet::physical_fov(&arch, global.voxel_size)?;
            fov_json = serde_json::to_value(&report.layers).expect("fov serialize");
            unet::context_per_side(&arch, block_shape)?
        }
        (None, None) => [0, 0, 0],
        (Some(_), Some(_)) => return Err(usage("pass at most one of --context or --arch")),
    };

    let mask_ref = mask
        .map(|m| crate::config::parse_mask_ref(m).map_err(usage))
        .transpose()?;
    let mask_data = load_mask(mask_ref.as_ref(), global.voxel_size)?;
    let mask_spec = mask_data.as_ref().map(|(volume, factors)| MaskSpec {
        mask: volume,
        downscale_factors: *factors,
    });

    let plans = plan_blocks(total_roi, block_shape, context, mask_spec);
    let masked_in = plans.iter().filter(|p| p.masked_in).count();
    let total_voxels: u64 = plans
        .iter()
        .filter(|p| p.masked_in)
        .map(|p| p.output_roi.num_voxels())
        .sum();
    Ok(json!({
        "n_blocks": plans.len(),
        "n_masked_in": masked_in,
        "masked_in_voxels": total_voxels,
        "context": context,
        "fov_layers": fov_json,
        "blocks": plans_json(&plans),
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn bench_cmd(
    blocks_count: u64,
    block_shape: &str,
    delay_ms: f64,
    io_ms: f64,
    prefetch: usize,
    eta_voxels: f64,
    eta_rate: f64,
    global: &GlobalConfig,
) -> Result<Value, CliError> {
    let shape = parse_shape(block_shape).map_err(usage)?;
    if blocks_count == 0 {
        return Err(usage("blocks count must be >= 1"));
    }
    // Blocks laid out along x; content is irrelevant for the timing model.
    let total = Roi::new([0, 0, 0], [shape[0], shape[1], shape[2] * blocks_count]);
    let plans = plan_blocks(total, shape, [0, 0, 0], None);
    let source = MemSource {
        volume: AnyVolume::F32(Volume::zeros(
            Roi::new([0, 0, 0], [1, 1, 1]),
            global.voxel_size,
        )),
        delay: Duration::from_secs_f64(io_ms / 1000.0),
    };
    let sink = DiscardSink {
        delay: Duration::from_secs_f64(io_ms / 1000.0),
    };
    let predictor = FixedDelayPredictor {
        delay: Duration::from_secs_f64(delay_ms / 1000.0),
        value: 0.0,
    };
    let opts = RunOptions {
        n_workers: global.workers,
        prefetch,
        fill: 0.0,
        journal: None,
        limit: None,
    };
    let report = engine::run(&plans, &predictor, &source, &sink, &opts)?;
    let min_utilization = report
        .worker_utilization
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let eta = eta_seconds(eta_voxels, global.workers as f64, eta_rate);
    Ok(json!({
        "report": report,
        "delay_ms": delay_ms,
        "io_ms": io_ms,
        "min_utilization": min_utilization,
        "eta": {
            "total_voxels": eta_voxels,
            "workers": global.workers,
            "rate_voxels_per_second_per_worker": eta_rate,
            "seconds": eta,
            "days": eta / 86_400.0,
        },
    }))
}

pub fn density_cmd(
    input: &Path,
    output: &Path,
    sigma: &str,
    out_voxel: &str,
    compression: &str,
    global: &GlobalConfig,
) -> Result<Value, CliError> {
    let sigma = parse_triple_f64(sigma).map_err(usage)?;
    if sigma.iter().any(|&s| s <= 0.0) {
        return Err(usage(format!("sigma components must be positive: {sigma:?}")));
    }
    let ov = parse_triple_f64(out_voxel).map_err(usage)?;
    if ov.iter().any(|&v| v <= 0.0) {
        return Err(usage(format!("output voxel size must be positive: {ov:?}")));
    }
    let input_ds = open_dataset(input, global.voxel_size)?;
    let v = input_ds.read_all()?.to_f32().with_voxel_size(global.voxel_size);
    let sum_in: f64 = v.data().iter().map(|&e| e as f64).sum();
    let density = metrics::psf_density(&v, sigma, VoxelSize::new(ov[0], ov[1], ov[2]));
    let sum_out: f64 = density.data().iter().map(|&e| e as f64).sum();
    let dims = density.roi().shape;
    let out = open_or_create_output(
        output,
        dims,
        clamp_chunks([64, 64, 64], dims),
        ElementType::F32,
        parse_compression(compression)?,
        density.voxel_size(),
    )?;
    out.write_roi(&density)?;
    Ok(json!({
        "output": output.display().to_string(),
        "sigma_nm": sigma,
        "voxel_size_nm": density.voxel_size().nm(),
        "dimensions": dims,
        "sum_in": sum_in,
        "sum_out": sum_out,
    }))
}
