//! Parallel blockwise execution: a coordinator hands masked-in blocks to N
//! worker pipelines, each overlapping reads and writes with prediction via
//! its own prefetch and writeback threads. Completed block ids go to an
//! append-only journal so interrupted runs can resume.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::n5::{Dataset, StoreError};
use voxmill_core::geom::{copy_region, AnyVolume, ElementType, Roi, Volume, VoxelSize};
use voxmill_core::plan::BlockPlan;
use voxmill_core::pyramid;
use voxmill_core::sdt::{self, SdtParams};

/// What a predictor requires and produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictorContract {
    /// Per-axis input context beyond the output region (the network FOV half-width).
    pub context: [u64; 3],
    pub input_type: ElementType,
    pub output_type: ElementType,
    /// Output channels; the 3D dataset writer supports exactly one.
    pub channels: usize,
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("{0}")]
    Message(String),
}

/// A deterministic, pure block predictor. Output voxels may depend only on
/// inputs within the declared context of the output region.
pub trait Predictor: Send + Sync {
    fn contract(&self) -> PredictorContract;

    /// Input region required for an output region. Defaults to growing by the
    /// contract context; predictors with coordinate scaling override this.
    fn input_roi(&self, output_roi: &Roi) -> Roi {
        output_roi.grow(self.contract().context)
    }

    /// Computes the output over `output_roi` from an input covering
    /// [`Predictor::input_roi`]. The result must have exactly `output_roi`'s
    /// shape and the contract's output type.
    fn predict(&self, input: &AnyVolume, output_roi: &Roi) -> Result<AnyVolume, PredictError>;
}

/// Copies the input over the output region; context 0.
#[derive(Debug, Clone)]
pub struct IdentityPredictor {
    element_type: ElementType,
    context: [u64; 3],
}

impl IdentityPredictor {
    pub fn new(element_type: ElementType) -> Self {
        Self {
            element_type,
            context: [0; 3],
        }
    }

    /// Pads inputs by an extra context (e.g. a network FOV) without using it.
    pub fn with_context(mut self, context: [u64; 3]) -> Self {
        self.context = context;
        self
    }
}

impl Predictor for IdentityPredictor {
    fn contract(&self) -> PredictorContract {
        PredictorContract {
            context: self.context,
            input_type: self.element_type,
            output_type: self.element_type,
            channels: 1,
        }
    }

    fn predict(&self, input: &AnyVolume, output_roi: &Roi) -> Result<AnyVolume, PredictError> {
        Ok(input.read_region(*output_roi, 0.0))
    }
}

/// Separable stencil (box or Gaussian taps) with exact locality; the
/// reference predictor for block-size invariance checks.
#[derive(Debug, Clone)]
pub struct StencilPredictor {
    radii: [u64; 3],
    taps: [Vec<f64>; 3],
    context: [u64; 3],
}

impl StencilPredictor {
    pub fn box_filter(radii: [u64; 3]) -> Self {
        let taps = radii.map(|r| {
            let n = 2 * r as usize + 1;
            vec![1.0 / n as f64; n]
        });
        Self {
            radii,
            taps,
            context: radii,
        }
    }

    pub fn gaussian(radii: [u64; 3], sigma_voxels: [f64; 3]) -> Self {
        let mut taps: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for a in 0..3 {
            let r = radii[a] as i64;
            let mut axis = Vec::with_capacity((2 * r + 1) as usize);
            let mut sum = 0.0;
            for i in -r..=r {
                let w = (-((i * i) as f64) / (2.0 * sigma_voxels[a] * sigma_voxels[a])).exp();
                axis.push(w);
                sum += w;
            }
            for w in &mut axis {
                *w /= sum;
            }
            taps[a] = axis;
        }
        Self {
            radii,
            taps,
            context: radii,
        }
    }

    /// Raises the declared context above the stencil radii (inputs are padded
    /// further; the extra margin is read but unused).
    pub fn with_context(mut self, context: [u64; 3]) -> Result<Self, PredictError> {
        for a in 0..3 {
            if context[a] < self.radii[a] {
                return Err(PredictError::Message(format!(
                    "context {context:?} is smaller than the stencil radii {:?}",
                    self.radii
                )));
            }
        }
        self.context = context;
        Ok(self)
    }

    /// One separable pass along `axis`, shrinking the region by the radius.
    fn pass(&self, v: &Volume<f64>, axis: usize) -> Volume<f64> {
        let r = self.radii[axis] as i64;
        let taps = &self.taps[axis];
        let mut roi = v.roi();
        roi.offset[axis] += r;
        roi.shape[axis] -= 2 * r as u64;
        Volume::from_fn(roi, v.voxel_size(), |p| {
            let mut acc = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                let mut q = p;
                q[axis] += t as i64 - r;
                acc += w * v.get(q).expect("stencil window inside input");
            }
            acc
        })
    }
}

impl Predictor for StencilPredictor {
    fn contract(&self) -> PredictorContract {
        PredictorContract {
            context: self.context,
            input_type: ElementType::F32,
            output_type: ElementType::F32,
            channels: 1,
        }
    }

    fn predict(&self, input: &AnyVolume, output_roi: &Roi) -> Result<AnyVolume, PredictError> {
        let needed = output_roi.grow(self.radii);
        if !input.roi().contains_roi(&needed) {
            return Err(PredictError::Message(format!(
                "input {:?} does not cover the stencil window {:?}",
                input.roi(),
                needed
            )));
        }
        // Work on exactly the needed window so results are independent of any
        // extra padding the caller supplied.
        let work = input.to_f64();
        let w0 = voxmill_core::geom::read_region(&work, needed, 0.0);
        let z = self.pass(&w0, 0);
        let y = self.pass(&z, 1);
        let x = self.pass(&y, 2);
        debug_assert!(x.roi().same_voxels(output_roi));
        Ok(AnyVolume::F32(x.map(|e| e as f32)))
    }
}

/// Computes the squashed signed distance target from a colocated ground-truth
/// labels dataset, ignoring the engine-supplied input. Single-class regions
/// saturate to the corresponding sign. Used for end-to-end metric tests.
#[derive(Debug)]
pub struct StdtOraclePredictor {
    labels: Dataset,
    params: SdtParams,
    context: [u64; 3],
    ignore_value: Option<u64>,
}

impl StdtOraclePredictor {
    pub fn new(labels: Dataset, params: SdtParams) -> Self {
        Self {
            labels,
            params,
            context: [0; 3],
            ignore_value: None,
        }
    }

    pub fn with_context(mut self, context: [u64; 3]) -> Self {
        self.context = context;
        self
    }

    pub fn with_ignore_value(mut self, value: Option<u64>) -> Self {
        self.ignore_value = value;
        self
    }
}

/// Largest f32 strictly below 1, matching the squashed-target range.
const SATURATED: f32 = f32::from_bits(0x3f7f_ffff);

impl Predictor for StdtOraclePredictor {
    fn contract(&self) -> PredictorContract {
        PredictorContract {
            context: self.context,
            input_type: self.labels.attributes().element_type,
            output_type: ElementType::F32,
            channels: 1,
        }
    }

    fn predict(&self, _input: &AnyVolume, output_roi: &Roi) -> Result<AnyVolume, PredictError> {
        let grown = output_roi.grow(self.context);
        let labels = self
            .labels
            .read_roi(grown, 0.0)
            .map_err(|e| PredictError::Message(e.to_string()))?
            .binarize(self.ignore_value);
        let squashed = match sdt::sedt(&labels, self.params.voxel_size) {
            Ok(sedt) => sdt::stdt(&sedt, self.params.scale_s),
            // Single-class region: the target saturates everywhere.
            Err(_) => {
                let sign = if labels.data().first().copied().unwrap_or(0) > 0 {
                    SATURATED
                } else {
                    -SATURATED
                };
                Volume::filled(labels.roi(), labels.voxel_size(), sign)
            }
        };
        Ok(AnyVolume::F32(voxmill_core::geom::read_region(
            &squashed,
            *output_roi,
            0.0,
        )))
    }
}

/// Mean-pools blocks by fixed factors; output coordinates are input
/// coordinates divided by the factors (context 0, coordinate-scaling input).
#[derive(Debug, Clone)]
pub struct DownscalePredictor {
    pub factors: [u64; 3],
    /// Bounds of the source dataset. Pooling cells at the edge must average
    /// the truly in-bounds voxels only, not boundary fill.
    pub source_bounds: Roi,
}

impl Predictor for DownscalePredictor {
    fn contract(&self) -> PredictorContract {
        PredictorContract {
            context: [0; 3],
            input_type: ElementType::F32,
            output_type: ElementType::F32,
            channels: 1,
        }
    }

    fn input_roi(&self, output_roi: &Roi) -> Roi {
        Roi::new(
            [
                output_roi.offset[0] * self.factors[0] as i64,
                output_roi.offset[1] * self.factors[1] as i64,
                output_roi.offset[2] * self.factors[2] as i64,
            ],
            [
                output_roi.shape[0] * self.factors[0],
                output_roi.shape[1] * self.factors[1],
                output_roi.shape[2] * self.factors[2],
            ],
        )
    }

    fn predict(&self, input: &AnyVolume, output_roi: &Roi) -> Result<AnyVolume, PredictError> {
        let valid = input.roi().intersect(&self.source_bounds);
        let cropped = voxmill_core::geom::read_region(&input.to_f32(), valid, 0.0);
        let pooled = pyramid::downscale(&cropped, self.factors);
        if !pooled.roi().same_voxels(output_roi) {
            return Err(PredictError::Message(format!(
                "downscaled roi {:?} does not match the requested output {:?}",
                pooled.roi(),
                output_roi
            )));
        }
        Ok(AnyVolume::F32(pooled))
    }
}

/// Majority-vote pooling for label pyramids (same coordinate scaling as
/// [`DownscalePredictor`], uint8 in and out).
#[derive(Debug, Clone)]
pub struct MajorityDownscalePredictor {
    pub factors: [u64; 3],
    pub source_bounds: Roi,
}

impl Predictor for MajorityDownscalePredictor {
    fn contract(&self) -> PredictorContract {
        PredictorContract {
            context: [0; 3],
            input_type: ElementType::U8,
            output_type: ElementType::U8,
            channels: 1,
        }
    }

    fn input_roi(&self, output_roi: &Roi) -> Roi {
        DownscalePredictor {
            factors: self.factors,
            source_bounds: self.source_bounds,
        }
        .input_roi(output_roi)
    }

    fn predict(&self, input: &AnyVolume, output_roi: &Roi) -> Result<AnyVolume, PredictError> {
        let AnyVolume::U8(labels) = input else {
            return Err(PredictError::Message(format!(
                "majority pooling requires uint8 labels, got {:?}",
                input.element_type()
            )));
        };
        let valid = labels.roi().intersect(&self.source_bounds);
        let cropped = voxmill_core::geom::read_region(labels, valid, 0);
        let pooled = pyramid::downscale_labels(&cropped, self.factors);
        if !pooled.roi().same_voxels(output_roi) {
            return Err(PredictError::Message(format!(
                "downscaled roi {:?} does not match the requested output {:?}",
                pooled.roi(),
                output_roi
            )));
        }
        Ok(AnyVolume::U8(pooled))
    }
}

/// Sleeps for a fixed duration, then emits a constant block; models a
/// GPU-bound predictor for pipeline benchmarks.
#[derive(Debug, Clone)]
pub struct FixedDelayPredictor {
    pub delay: Duration,
    pub value: f32,
}

impl Predictor for FixedDelayPredictor {
    fn contract(&self) -> PredictorContract {
        PredictorContract {
            context: [0; 3],
            input_type: ElementType::F32,
            output_type: ElementType::F32,
            channels: 1,
        }
    }

    fn predict(&self, input: &AnyVolume, output_roi: &Roi) -> Result<AnyVolume, PredictError> {
        std::thread::sleep(self.delay);
        Ok(AnyVolume::F32(Volume::filled(
            *output_roi,
            input.voxel_size(),
            self.value,
        )))
    }
}

/// Where block inputs come from.
pub trait BlockSource: Sync {
    fn read_block(&self, roi: &Roi, fill: f64) -> Result<AnyVolume, StoreError>;
}

/// Where block outputs go.
pub trait BlockSink: Sync {
    fn write_block(&self, v: &AnyVolume) -> Result<(), StoreError>;

    /// Chunk grid (chunk size, dimensions) when the sink is chunked storage;
    /// used to verify that parallel writers cannot touch the same chunk.
    fn chunk_layout(&self) -> Option<([u64; 3], [u64; 3])> {
        None
    }
}

impl BlockSource for Dataset {
    fn read_block(&self, roi: &Roi, fill: f64) -> Result<AnyVolume, StoreError> {
        self.read_roi(*roi, fill)
    }
}

impl BlockSink for Dataset {
    fn write_block(&self, v: &AnyVolume) -> Result<(), StoreError> {
        self.write_roi_any(v)
    }

    fn chunk_layout(&self) -> Option<([u64; 3], [u64; 3])> {
        Some((self.attributes().chunk_size, self.attributes().dimensions))
    }
}

/// In-memory source with an optional artificial read delay.
#[derive(Debug)]
pub struct MemSource {
    pub volume: AnyVolume,
    pub delay: Duration,
}

impl BlockSource for MemSource {
    fn read_block(&self, roi: &Roi, fill: f64) -> Result<AnyVolume, StoreError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        Ok(self.volume.read_region(*roi, fill))
    }
}

/// In-memory sink accumulating disjoint block writes into one volume.
#[derive(Debug)]
pub struct MemSink {
    volume: Mutex<Volume<f32>>,
    pub delay: Duration,
}

impl MemSink {
    pub fn zeros(roi: Roi, voxel_size: VoxelSize) -> Self {
        Self {
            volume: Mutex::new(Volume::zeros(roi, voxel_size)),
            delay: Duration::ZERO,
        }
    }

    pub fn into_volume(self) -> Volume<f32> {
        self.volume.into_inner().expect("sink lock")
    }
}

impl BlockSink for MemSink {
    fn write_block(&self, v: &AnyVolume) -> Result<(), StoreError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let mut target = self.volume.lock().expect("sink lock");
        copy_region(&v.to_f32(), &mut target);
        Ok(())
    }
}

/// Sink that drops all data (benchmarks), with an optional write delay.
#[derive(Debug)]
pub struct DiscardSink {
    pub delay: Duration,
}

impl BlockSink for DiscardSink {
    fn write_block(&self, _v: &AnyVolume) -> Result<(), StoreError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("block {block_id}: {source}")]
    Io {
        block_id: u64,
        #[source]
        source: StoreError,
    },
    #[error("block {block_id}: predictor contract violation: {reason}")]
    Contract { block_id: u64, reason: String },
    #[error(
        "block {block_id} output {roi:?} is not aligned to the sink chunk grid {chunk:?} on axis {axis}"
    )]
    Misaligned {
        block_id: u64,
        roi: Roi,
        chunk: [u64; 3],
        axis: usize,
    },
    #[error("journal {path}: {source}")]
    Journal {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Unsupported(String),
}

/// Run configuration.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub n_workers: usize,
    /// Blocks buffered ahead per worker between pipeline stages.
    pub prefetch: usize,
    /// Fill value for inputs beyond the source bounds.
    pub fill: f64,
    /// Append-only journal of completed block ids; enables resume.
    pub journal: Option<PathBuf>,
    /// Process at most this many blocks this run (staged runs, smoke tests).
    pub limit: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            n_workers: 1,
            prefetch: 2,
            fill: 0.0,
            journal: None,
            limit: None,
        }
    }
}

/// Outcome accounting for one run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunReport {
    pub blocks_done: u64,
    /// Masked-out blocks that were never scheduled.
    pub blocks_skipped: u64,
    /// Blocks found complete in the journal and not recomputed.
    pub blocks_resumed: u64,
    pub voxels_written: u64,
    pub wall_seconds: f64,
    pub voxels_per_second: f64,
    /// Predictor-busy fraction of wall time, per worker.
    pub worker_utilization: Vec<f64>,
}

fn read_journal(path: &Path) -> Result<HashSet<u64>, EngineError> {
    let mut done = HashSet::new();
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => {
            return Err(EngineError::Journal {
                path: path.to_path_buf(),
                source: e,
            })
        }
    };
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| EngineError::Journal {
            path: path.to_path_buf(),
            source: e,
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id: u64 = line.parse().map_err(|_| EngineError::Journal {
            path: path.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("bad journal line {line:?}"),
            ),
        })?;
        done.insert(id);
    }
    Ok(done)
}

struct Journal {
    path: PathBuf,
    file: Mutex<fs::File>,
}

impl Journal {
    fn append(&self, block_id: u64) -> Result<(), EngineError> {
        let mut file = self.file.lock().expect("journal lock");
        writeln!(file, "{block_id}")
            .and_then(|_| file.flush())
            .map_err(|e| EngineError::Journal {
                path: self.path.clone(),
                source: e,
            })
    }
}

fn check_alignment(
    plan: &BlockPlan,
    chunk: [u64; 3],
    dimensions: [u64; 3],
) -> Result<(), EngineError> {
    let end = plan.output_roi.end();
    for axis in 0..3 {
        let offset = plan.output_roi.offset[axis];
        let aligned_start = offset >= 0 && (offset as u64).is_multiple_of(chunk[axis]);
        let e = end[axis] as u64;
        let aligned_end = e.is_multiple_of(chunk[axis]) || e == dimensions[axis];
        if !aligned_start || !aligned_end {
            return Err(EngineError::Misaligned {
                block_id: plan.block_id,
                roi: plan.output_roi,
                chunk,
                axis,
            });
        }
    }
    Ok(())
}

struct ErrorSlot(Mutex<Option<EngineError>>);

impl ErrorSlot {
    fn record(&self, e: EngineError, stop: &AtomicBool) {
        stop.store(true, Ordering::SeqCst);
        let mut slot = self.0.lock().expect("error slot");
        slot.get_or_insert(e);
    }
}

/// Runs every masked-in plan through the predictor: read the padded input,
/// predict, write the output region. The result is independent of the worker
/// count, the block completion order, and (for predictors honoring their
/// locality contract) the block shape.
pub fn run(
    plans: &[BlockPlan],
    predictor: &dyn Predictor,
    source: &dyn BlockSource,
    sink: &dyn BlockSink,
    opts: &RunOptions,
) -> Result<RunReport, EngineError> {
    if opts.n_workers == 0 {
        return Err(EngineError::Unsupported("n_workers must be >= 1".into()));
    }
    let contract = predictor.contract();
    if contract.channels != 1 {
        return Err(EngineError::Unsupported(format!(
            "the 3D dataset writer supports exactly one output channel, predictor declares {}",
            contract.channels
        )));
    }

    let done = match &opts.journal {
        Some(path) => read_journal(path)?,
        None => HashSet::new(),
    };
    let blocks_skipped = plans.iter().filter(|p| !p.masked_in).count() as u64;
    let blocks_resumed = plans
        .iter()
        .filter(|p| p.masked_in && done.contains(&p.block_id))
        .count() as u64;
    let mut work: Vec<&BlockPlan> = plans
        .iter()
        .filter(|p| p.masked_in && !done.contains(&p.block_id))
        .collect();
    if let Some(limit) = opts.limit {
        work.truncate(limit);
    }

    if opts.n_workers > 1 {
        if let Some((chunk, dimensions)) = sink.chunk_layout() {
            for plan in &work {
                check_alignment(plan, chunk, dimensions)?;
            }
        }
    }

    let journal = match &opts.journal {
        Some(path) => {
            let file = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| EngineError::Journal {
                    path: path.clone(),
                    source: e,
                })?;
            Some(Journal {
                path: path.clone(),
                file: Mutex::new(file),
            })
        }
        None => None,
    };

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let errors = ErrorSlot(Mutex::new(None));
    let started = Instant::now();

    let mut busy = vec![Duration::ZERO; opts.n_workers];
    let mut blocks_done = 0u64;
    let mut voxels_written = 0u64;

    std::thread::scope(|scope| {
        let mut predict_handles = Vec::new();
        let mut write_handles = Vec::new();
        for _ in 0..opts.n_workers {
            let (input_tx, input_rx) =
                mpsc::sync_channel::<(&BlockPlan, AnyVolume)>(opts.prefetch.max(1));
            let (output_tx, output_rx) =
                mpsc::sync_channel::<(&BlockPlan, AnyVolume)>(opts.prefetch.max(1));

            let work = &work;
            let next = &next;
            let stop = &stop;
            let errors = &errors;
            let journal = journal.as_ref();

            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= work.len() || stop.load(Ordering::SeqCst) {
                    break;
                }
                let plan = work[i];
                match source.read_block(&predictor.input_roi(&plan.output_roi), opts.fill) {
                    Ok(input) => {
                        if input_tx.send((plan, input)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        errors.record(
                            EngineError::Io {
                                block_id: plan.block_id,
                                source: e,
                            },
                            stop,
                        );
                        break;
                    }
                }
            });

            predict_handles.push(scope.spawn(move || {
                let mut busy = Duration::ZERO;
                for (plan, input) in input_rx {
                    let t = Instant::now();
                    let result = predictor.predict(&input, &plan.output_roi);
                    busy += t.elapsed();
                    match result {
                        Ok(output) => {
                            if output.roi() != plan.output_roi
                                || output.element_type() != contract.output_type
                            {
                                errors.record(
                                    EngineError::Contract {
                                        block_id: plan.block_id,
                                        reason: format!(
                                            "predictor returned {:?} {:?}, expected {:?} {:?}",
                                            output.element_type(),
                                            output.roi(),
                                            contract.output_type,
                                            plan.output_roi
                                        ),
                                    },
                                    stop,
                                );
                                break;
                            }
                            if output_tx.send((plan, output)).is_err() {
                                break;
                            }
                        }
                        Err(PredictError::Message(reason)) => {
                            errors.record(
                                EngineError::Contract {
                                    block_id: plan.block_id,
                                    reason,
                                },
                                stop,
                            );
                            break;
                        }
                    }
                }
                busy
            }));

            write_handles.push(scope.spawn(move || {
                let mut blocks = 0u64;
                let mut voxels = 0u64;
                for (plan, output) in output_rx {
                    match sink.write_block(&output) {
                        Ok(()) => {
                            if let Some(journal) = journal {
                                if let Err(e) = journal.append(plan.block_id) {
                                    errors.record(e, stop);
                                    break;
                                }
                            }
                            blocks += 1;
                            voxels += plan.output_roi.num_voxels();
                        }
                        Err(e) => {
                            errors.record(
                                EngineError::Io {
                                    block_id: plan.block_id,
                                    source: e,
                                },
                                stop,
                            );
                            break;
                        }
                    }
                }
                (blocks, voxels)
            }));
        }

        for (w, handle) in predict_handles.into_iter().enumerate() {
            busy[w] = handle.join().expect("predictor thread");
        }
        for handle in write_handles {
            let (blocks, voxels) = handle.join().expect("writer thread");
            blocks_done += blocks;
            voxels_written += voxels;
        }
    });

    if let Some(e) = errors.0.into_inner().expect("error slot") {
        return Err(e);
    }

    let wall = started.elapsed().as_secs_f64();
    let worker_utilization = busy
        .iter()
        .map(|b| if wall > 0.0 { b.as_secs_f64() / wall } else { 0.0 })
        .collect();
    Ok(RunReport {
        blocks_done,
        blocks_skipped,
        blocks_resumed,
        voxels_written,
        wall_seconds: wall,
        voxels_per_second: if wall > 0.0 {
            voxels_written as f64 / wall
        } else {
            0.0
        },
        worker_utilization,
    })
}
