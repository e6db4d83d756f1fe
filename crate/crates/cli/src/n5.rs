//! Filesystem-backed chunked volume storage: N5-compatible layout with a
//! big-endian chunk codec, per-dataset `attributes.json`, and atomic
//! per-chunk file replacement for conflict-free parallel writes.
//!
//! The public API uses `(z, y, x)` axis order like the rest of the toolkit;
//! on disk, dimensions and chunk paths follow the N5 convention of `x` first.
//! The store performs the reversal at this boundary.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use voxmill_core::geom::{copy_region, AnyVolume, Element, ElementType, Roi, Volume, VoxelSize};
use voxmill_core::with_any_volume;

pub const ATTRIBUTES_FILE: &str = "attributes.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    Raw,
    Gzip,
}

/// Dataset metadata; `dimensions` and `chunk_size` are `(z, y, x)` in the API.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetAttributes {
    pub dimensions: [u64; 3],
    pub chunk_size: [u64; 3],
    pub element_type: ElementType,
    pub compression: Compression,
}

impl DatasetAttributes {
    pub fn new(
        dimensions: [u64; 3],
        chunk_size: [u64; 3],
        element_type: ElementType,
        compression: Compression,
    ) -> Self {
        Self {
            dimensions,
            chunk_size,
            element_type,
            compression,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.dimensions.contains(&0) {
            return Err(format!("dimensions must be >= 1, got {:?}", self.dimensions));
        }
        if self.chunk_size.contains(&0) {
            return Err(format!("chunk size must be >= 1, got {:?}", self.chunk_size));
        }
        Ok(())
    }

    /// Dataset bounds as a region anchored at the origin.
    pub fn bounds(&self) -> Roi {
        Roi::new([0, 0, 0], self.dimensions)
    }

    /// Number of chunks per axis.
    pub fn grid_dimensions(&self) -> [u64; 3] {
        [
            self.dimensions[0].div_ceil(self.chunk_size[0]),
            self.dimensions[1].div_ceil(self.chunk_size[1]),
            self.dimensions[2].div_ceil(self.chunk_size[2]),
        ]
    }

    /// Region covered by the chunk at `grid` position `(z, y, x)`, truncated
    /// at the dataset edge.
    pub fn chunk_roi(&self, grid: [u64; 3]) -> Roi {
        let mut offset = [0i64; 3];
        let mut shape = [0u64; 3];
        for a in 0..3 {
            let start = grid[a] * self.chunk_size[a];
            offset[a] = start as i64;
            shape[a] = self.chunk_size[a].min(self.dimensions[a].saturating_sub(start));
        }
        Roi::new(offset, shape)
    }
}

fn data_type_name(t: ElementType) -> &'static str {
    match t {
        ElementType::U8 => "uint8",
        ElementType::U16 => "uint16",
        ElementType::U32 => "uint32",
        ElementType::U64 => "uint64",
        ElementType::F32 => "float32",
        ElementType::F64 => "float64",
    }
}

fn parse_data_type(name: &str) -> Option<ElementType> {
    Some(match name {
        "uint8" => ElementType::U8,
        "uint16" => ElementType::U16,
        "uint32" => ElementType::U32,
        "uint64" => ElementType::U64,
        "float32" => ElementType::F32,
        "float64" => ElementType::F64,
        _ => return None,
    })
}

/// On-disk form of `attributes.json`. Field order here is the canonical
/// serialization order; dimensions and blockSize are stored x,y,z.
#[derive(Serialize, Deserialize)]
struct AttributesFile {
    dimensions: Vec<u64>,
    #[serde(rename = "blockSize")]
    block_size: Vec<u64>,
    #[serde(rename = "dataType")]
    data_type: String,
    compression: CompressionFile,
}

#[derive(Serialize, Deserialize)]
struct CompressionFile {
    #[serde(rename = "type")]
    kind: String,
    // Readers accept (and ignore) extra fields like gzip's level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level: Option<i64>,
    #[serde(rename = "useZlib", default, skip_serializing_if = "Option::is_none")]
    use_zlib: Option<bool>,
}

fn reversed(a: [u64; 3]) -> Vec<u64> {
    vec![a[2], a[1], a[0]]
}

impl DatasetAttributes {
    /// Canonical UTF-8 serialization (byte-stable for a fixed field order).
    pub fn to_json(&self) -> String {
        let file = AttributesFile {
            dimensions: reversed(self.dimensions),
            block_size: reversed(self.chunk_size),
            data_type: data_type_name(self.element_type).to_string(),
            compression: CompressionFile {
                kind: match self.compression {
                    Compression::Raw => "raw".to_string(),
                    Compression::Gzip => "gzip".to_string(),
                },
                level: None,
                use_zlib: None,
            },
        };
        serde_json::to_string(&file).expect("attributes serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let file: AttributesFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.dimensions.len() != 3 || file.block_size.len() != 3 {
            return Err("only 3-dimensional datasets are supported".to_string());
        }
        let element_type = parse_data_type(&file.data_type)
            .ok_or_else(|| format!("unsupported dataType {:?}", file.data_type))?;
        let compression = match file.compression.kind.as_str() {
            "raw" => Compression::Raw,
            "gzip" => Compression::Gzip,
            other => return Err(format!("unsupported compression {other:?}")),
        };
        let attrs = DatasetAttributes {
            dimensions: [file.dimensions[2], file.dimensions[1], file.dimensions[0]],
            chunk_size: [file.block_size[2], file.block_size[1], file.block_size[0]],
            element_type,
            compression,
        };
        attrs.validate()?;
        Ok(attrs)
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("payload length {got} does not match chunk shape {shape:?} ({expected} elements)")]
    LengthMismatch {
        shape: [u32; 3],
        expected: usize,
        got: usize,
    },
    #[error("element type mismatch: dataset holds {dataset:?}, payload is {payload:?}")]
    TypeMismatch {
        dataset: ElementType,
        payload: ElementType,
    },
    #[error("chunk is truncated ({0} bytes)")]
    Truncated(usize),
    #[error("unsupported chunk mode {0}")]
    UnsupportedMode(u16),
    #[error("chunk declares {0} dimensions, expected 3")]
    BadDimensionCount(u16),
    #[error("chunk body holds {got} bytes, expected {expected}")]
    BodySize { expected: usize, got: usize },
    #[error("gzip: {0}")]
    Gzip(String),
}

/// One element of an N5 chunk payload, big-endian on disk.
pub trait N5Element: Element {
    fn write_be(self, out: &mut Vec<u8>);
    fn read_be(bytes: &[u8]) -> Self;
}

macro_rules! impl_n5_element {
    ($t:ty) => {
        impl N5Element for $t {
            fn write_be(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_be_bytes());
            }
            fn read_be(bytes: &[u8]) -> Self {
                <$t>::from_be_bytes(bytes.try_into().expect("sized read"))
            }
        }
    };
}

impl_n5_element!(u8);
impl_n5_element!(u16);
impl_n5_element!(u32);
impl_n5_element!(u64);
impl_n5_element!(f32);
impl_n5_element!(f64);

const CHUNK_MODE_DEFAULT: u16 = 0;

/// Encodes one chunk: 16-bit mode (0), 16-bit dimension count, 32-bit chunk
/// dimensions in on-disk (x, y, z) order, then big-endian elements in
/// x-fastest order, compressed per the dataset attributes. All header fields
/// are big-endian.
///
/// `chunk_shape` is given in on-disk (x, y, z) order; the x-fastest element
/// order coincides with the in-memory layout of a `(z, y, x)` volume, so the
/// payload is the volume buffer as-is.
pub fn encode_chunk<T: N5Element>(
    attrs: &DatasetAttributes,
    chunk_shape: [u32; 3],
    payload: &[T],
) -> Result<Vec<u8>, CodecError> {
    if T::TYPE != attrs.element_type {
        return Err(CodecError::TypeMismatch {
            dataset: attrs.element_type,
            payload: T::TYPE,
        });
    }
    let expected = chunk_shape.iter().map(|&d| d as usize).product::<usize>();
    if payload.len() != expected {
        return Err(CodecError::LengthMismatch {
            shape: chunk_shape,
            expected,
            got: payload.len(),
        });
    }
    let mut out = Vec::with_capacity(16 + std::mem::size_of_val(payload));
    out.extend_from_slice(&CHUNK_MODE_DEFAULT.to_be_bytes());
    out.extend_from_slice(&3u16.to_be_bytes());
    for d in chunk_shape {
        out.extend_from_slice(&d.to_be_bytes());
    }
    let mut body = Vec::with_capacity(std::mem::size_of_val(payload));
    for &v in payload {
        v.write_be(&mut body);
    }
    match attrs.compression {
        Compression::Raw => out.extend_from_slice(&body),
        Compression::Gzip => {
            let mut encoder = GzEncoder::new(&mut out, flate2::Compression::default());
            encoder
                .write_all(&body)
                .and_then(|_| encoder.finish().map(|_| ()))
                .map_err(|e| CodecError::Gzip(e.to_string()))?;
        }
    }
    Ok(out)
}

/// Decodes one chunk into its on-disk (x, y, z) shape and its payload.
pub fn decode_chunk<T: N5Element>(
    attrs: &DatasetAttributes,
    bytes: &[u8],
) -> Result<([u32; 3], Vec<T>), CodecError> {
    if T::TYPE != attrs.element_type {
        return Err(CodecError::TypeMismatch {
            dataset: attrs.element_type,
            payload: T::TYPE,
        });
    }
    if bytes.len() < 4 {
        return Err(CodecError::Truncated(bytes.len()));
    }
    let mode = u16::from_be_bytes(bytes[0..2].try_into().unwrap());
    if mode != CHUNK_MODE_DEFAULT {
        return Err(CodecError::UnsupportedMode(mode));
    }
    let ndim = u16::from_be_bytes(bytes[2..4].try_into().unwrap());
    if ndim != 3 {
        return Err(CodecError::BadDimensionCount(ndim));
    }
    if bytes.len() < 16 {
        return Err(CodecError::Truncated(bytes.len()));
    }
    let mut shape = [0u32; 3];
    for (i, s) in shape.iter_mut().enumerate() {
        *s = u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    }
    let body: Vec<u8> = match attrs.compression {
        Compression::Raw => bytes[16..].to_vec(),
        Compression::Gzip => {
            let mut decoder = GzDecoder::new(&bytes[16..]);
            let mut body = Vec::new();
            decoder
                .read_to_end(&mut body)
                .map_err(|e| CodecError::Gzip(e.to_string()))?;
            body
        }
    };
    let count = shape.iter().map(|&d| d as usize).product::<usize>();
    let elem = size_of::<T>();
    if body.len() != count * elem {
        return Err(CodecError::BodySize {
            expected: count * elem,
            got: body.len(),
        });
    }
    let mut payload = Vec::with_capacity(count);
    for i in 0..count {
        payload.push(T::read_be(&body[i * elem..(i + 1) * elem]));
    }
    Ok((shape, payload))
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid attributes at {path}: {reason}")]
    InvalidAttributes { path: PathBuf, reason: String },
    #[error("chunk {path}: {source}")]
    Chunk {
        path: PathBuf,
        #[source]
        source: CodecError,
    },
    #[error("roi {roi:?} exceeds dataset bounds {dimensions:?}")]
    OutOfBounds { roi: Roi, dimensions: [u64; 3] },
    #[error("element type mismatch: dataset holds {dataset:?}, volume is {volume:?}")]
    TypeMismatch {
        dataset: ElementType,
        volume: ElementType,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Handle to one on-disk dataset. Shareable across threads; concurrent reads
/// are always safe, concurrent writes are safe when the touched chunk sets
/// are disjoint.
#[derive(Debug, Clone)]
pub struct Dataset {
    dir: PathBuf,
    attrs: DatasetAttributes,
    voxel_size: VoxelSize,
}

impl Dataset {
    /// Creates the dataset directory and writes `attributes.json`.
    pub fn create(dir: impl Into<PathBuf>, attrs: DatasetAttributes) -> Result<Self, StoreError> {
        let dir = dir.into();
        attrs
            .validate()
            .map_err(|reason| StoreError::InvalidAttributes {
                path: dir.clone(),
                reason,
            })?;
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let path = dir.join(ATTRIBUTES_FILE);
        fs::write(&path, attrs.to_json()).map_err(|e| io_err(&path, e))?;
        Ok(Self {
            dir,
            attrs,
            voxel_size: VoxelSize::default(),
        })
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let path = dir.join(ATTRIBUTES_FILE);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let attrs =
            DatasetAttributes::from_json(&text).map_err(|reason| StoreError::InvalidAttributes {
                path: path.clone(),
                reason,
            })?;
        Ok(Self {
            dir,
            attrs,
            voxel_size: VoxelSize::default(),
        })
    }

    /// Physical voxel size attached to volumes read from this dataset (a
    /// runtime setting, not persisted in `attributes.json`).
    pub fn with_voxel_size(mut self, voxel_size: VoxelSize) -> Self {
        self.voxel_size = voxel_size;
        self
    }

    pub fn attributes(&self) -> &DatasetAttributes {
        &self.attrs
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn voxel_size(&self) -> VoxelSize {
        self.voxel_size
    }

    pub fn bounds(&self) -> Roi {
        self.attrs.bounds()
    }

    /// Chunk file path `<dataset>/<grid_x>/<grid_y>/<grid_z>`.
    pub fn chunk_path(&self, grid: [u64; 3]) -> PathBuf {
        self.dir
            .join(grid[2].to_string())
            .join(grid[1].to_string())
            .join(grid[0].to_string())
    }

    fn grid_range(&self, roi: &Roi) -> ([u64; 3], [u64; 3]) {
        let end = roi.end();
        let mut lo = [0u64; 3];
        let mut hi = [0u64; 3];
        for a in 0..3 {
            lo[a] = (roi.offset[a].max(0) as u64) / self.attrs.chunk_size[a];
            let last = (end[a].min(self.attrs.dimensions[a] as i64) - 1).max(0) as u64;
            hi[a] = last / self.attrs.chunk_size[a];
        }
        (lo, hi)
    }

    fn read_chunk<T: N5Element>(&self, grid: [u64; 3]) -> Result<Option<Volume<T>>, StoreError> {
        let path = self.chunk_path(grid);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path, e)),
        };
        let (shape_xyz, payload) =
            decode_chunk::<T>(&self.attrs, &bytes).map_err(|source| StoreError::Chunk {
                path: path.clone(),
                source,
            })?;
        let roi = Roi::new(
            [
                (grid[0] * self.attrs.chunk_size[0]) as i64,
                (grid[1] * self.attrs.chunk_size[1]) as i64,
                (grid[2] * self.attrs.chunk_size[2]) as i64,
            ],
            [
                shape_xyz[2] as u64,
                shape_xyz[1] as u64,
                shape_xyz[0] as u64,
            ],
        );
        Ok(Some(Volume::from_vec(roi, self.voxel_size, payload)))
    }

    fn write_chunk<T: N5Element>(&self, grid: [u64; 3], v: &Volume<T>) -> Result<(), StoreError> {
        let shape = v.roi().shape;
        let shape_xyz = [shape[2] as u32, shape[1] as u32, shape[0] as u32];
        let bytes =
            encode_chunk(&self.attrs, shape_xyz, v.data()).map_err(|source| StoreError::Chunk {
                path: self.chunk_path(grid),
                source,
            })?;
        let path = self.chunk_path(grid);
        let parent = path.parent().expect("chunk path has a parent");
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        // Atomic replace: write a temp file in the same directory, then rename.
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| io_err(parent, e))?;
        tmp.write_all(&bytes).map_err(|e| io_err(&path, e))?;
        tmp.persist(&path)
            .map_err(|e| io_err(&path, e.error))?;
        Ok(())
    }

    /// Reads `roi` (which may exceed the dataset bounds); missing chunks and
    /// out-of-bounds voxels come back as `fill`.
    pub fn read_roi_typed<T: N5Element>(&self, roi: Roi, fill: T) -> Result<Volume<T>, StoreError> {
        if T::TYPE != self.attrs.element_type {
            return Err(StoreError::TypeMismatch {
                dataset: self.attrs.element_type,
                volume: T::TYPE,
            });
        }
        let mut out = Volume::filled(roi, self.voxel_size, fill);
        let readable = roi.intersect(&self.bounds());
        if readable.is_empty() {
            return Ok(out);
        }
        let (lo, hi) = self.grid_range(&readable);
        for gz in lo[0]..=hi[0] {
            for gy in lo[1]..=hi[1] {
                for gx in lo[2]..=hi[2] {
                    if let Some(chunk) = self.read_chunk::<T>([gz, gy, gx])? {
                        copy_region(&chunk, &mut out);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Typed write with read-modify-write of partially covered chunks.
    ///
    /// Whole-chunk writes never read. Concurrent writers must touch disjoint
    /// chunk sets (the inference engine's chunk-aligned blocks guarantee
    /// this); unaligned writes are single-writer only.
    pub fn write_roi<T: N5Element>(&self, v: &Volume<T>) -> Result<(), StoreError> {
        if T::TYPE != self.attrs.element_type {
            return Err(StoreError::TypeMismatch {
                dataset: self.attrs.element_type,
                volume: T::TYPE,
            });
        }
        if v.roi().is_empty() {
            return Ok(());
        }
        if !self.bounds().contains_roi(&v.roi()) {
            return Err(StoreError::OutOfBounds {
                roi: v.roi(),
                dimensions: self.attrs.dimensions,
            });
        }
        let (lo, hi) = self.grid_range(&v.roi());
        for gz in lo[0]..=hi[0] {
            for gy in lo[1]..=hi[1] {
                for gx in lo[2]..=hi[2] {
                    let grid = [gz, gy, gx];
                    let chunk_roi = self.attrs.chunk_roi(grid);
                    let covered = v.roi().contains_roi(&chunk_roi);
                    let mut chunk = if covered {
                        Volume::filled(chunk_roi, self.voxel_size, T::ZERO)
                    } else {
                        match self.read_chunk::<T>(grid)? {
                            // Stored edge chunks may have truncated headers;
                            // rebuild on the canonical chunk roi.
                            Some(existing) => {
                                let mut base =
                                    Volume::filled(chunk_roi, self.voxel_size, T::ZERO);
                                copy_region(&existing, &mut base);
                                base
                            }
                            None => Volume::filled(chunk_roi, self.voxel_size, T::ZERO),
                        }
                    };
                    copy_region(v, &mut chunk);
                    self.write_chunk(grid, &chunk)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_roi(&self, roi: Roi, fill: f64) -> Result<AnyVolume, StoreError> {
        Ok(match self.attrs.element_type {
            ElementType::U8 => AnyVolume::U8(self.read_roi_typed(roi, fill as u8)?),
            ElementType::U16 => AnyVolume::U16(self.read_roi_typed(roi, fill as u16)?),
            ElementType::U32 => AnyVolume::U32(self.read_roi_typed(roi, fill as u32)?),
            ElementType::U64 => AnyVolume::U64(self.read_roi_typed(roi, fill as u64)?),
            ElementType::F32 => AnyVolume::F32(self.read_roi_typed(roi, fill as f32)?),
            ElementType::F64 => AnyVolume::F64(self.read_roi_typed(roi, fill)?),
        })
    }

    pub fn write_roi_any(&self, v: &AnyVolume) -> Result<(), StoreError> {
        with_any_volume!(v, inner => self.write_roi(inner))
    }

    /// Reads the full dataset into memory.
    pub fn read_all(&self) -> Result<AnyVolume, StoreError> {
        self.read_roi(self.bounds(), 0.0)
    }
}
