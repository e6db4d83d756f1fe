//! Global invocation settings and the small flag-syntax parsers shared by the
//! subcommands.

use std::path::Path;

use serde::Deserialize;

use voxmill_core::geom::VoxelSize;

pub const WORKERS_ENV: &str = "VOXMILL_WORKERS";

/// Settings every subcommand sees; resolution order is flag, then config
/// file, then environment, then the built-in default.
#[derive(Debug, Clone)]
pub struct GlobalConfig {
    pub seed: u64,
    pub voxel_size: VoxelSize,
    pub workers: usize,
    pub verbosity: u8,
}

/// Optional overrides loaded from `--config <file>` (JSON).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    /// `(z, y, x)` nanometers.
    pub voxel_size: Option<[f64; 3]>,
    pub workers: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text =
            std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

impl GlobalConfig {
    pub fn resolve(
        seed_flag: Option<u64>,
        voxel_size_flag: Option<[f64; 3]>,
        workers_flag: Option<usize>,
        file: &ConfigFile,
        verbosity: u8,
    ) -> Result<Self, String> {
        let seed = seed_flag.or(file.seed).unwrap_or(0);
        let vs = voxel_size_flag
            .or(file.voxel_size)
            .unwrap_or([40.0, 4.0, 4.0]);
        if vs.iter().any(|&v| v <= 0.0) {
            return Err(format!("voxel size components must be positive: {vs:?}"));
        }
        let env_workers = std::env::var(WORKERS_ENV)
            .ok()
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| format!("{WORKERS_ENV}={v:?} is not a worker count"))
            })
            .transpose()?;
        let workers = workers_flag
            .or(file.workers)
            .or(env_workers)
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            });
        if workers == 0 {
            return Err("worker count must be >= 1".to_string());
        }
        Ok(Self {
            seed,
            voxel_size: VoxelSize::new(vs[0], vs[1], vs[2]),
            workers,
            verbosity,
        })
    }
}

/// `ZxYxX` (e.g. `71x650x650`).
pub fn parse_shape(text: &str) -> Result<[u64; 3], String> {
    let parts: Vec<&str> = text.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("expected ZxYxX, got {text:?}"));
    }
    let mut out = [0u64; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p
            .trim()
            .parse()
            .map_err(|_| format!("bad component {p:?} in {text:?}"))?;
    }
    Ok(out)
}

/// `Z,Y,X` unsigned counts.
pub fn parse_triple_u64(text: &str) -> Result<[u64; 3], String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected Z,Y,X, got {text:?}"));
    }
    let mut out = [0u64; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p
            .trim()
            .parse()
            .map_err(|_| format!("bad component {p:?} in {text:?}"))?;
    }
    Ok(out)
}

/// `Z,Y,X` signed coordinates.
pub fn parse_triple_i64(text: &str) -> Result<[i64; 3], String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected Z,Y,X, got {text:?}"));
    }
    let mut out = [0i64; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p
            .trim()
            .parse()
            .map_err(|_| format!("bad component {p:?} in {text:?}"))?;
    }
    Ok(out)
}

/// `Z,Y,X` floats (nanometers).
pub fn parse_triple_f64(text: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected Z,Y,X, got {text:?}"));
    }
    let mut out = [0f64; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p
            .trim()
            .parse()
            .map_err(|_| format!("bad component {p:?} in {text:?}"))?;
    }
    Ok(out)
}

/// `lo:hi` intensity range.
pub fn parse_range(text: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| format!("expected lo:hi, got {text:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lo in {text:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad hi in {text:?}"))?;
    if lo > hi {
        return Err(format!("inverted range {text:?}"));
    }
    Ok((lo, hi))
}

/// `<dataset>:<fz,fy,fx>` mask reference.
pub fn parse_mask_ref(text: &str) -> Result<(String, [u64; 3]), String> {
    let (path, factors) = text
        .rsplit_once(':')
        .ok_or_else(|| format!("expected <dataset>:<fz,fy,fx>, got {text:?}"))?;
    Ok((path.to_string(), parse_triple_u64(factors)?))
}

/// `I/N` static partition selector (machine I of N).
pub fn parse_partition(text: &str) -> Result<(usize, usize), String> {
    let (i, n) = text
        .split_once('/')
        .ok_or_else(|| format!("expected I/N, got {text:?}"))?;
    let i: usize = i.trim().parse().map_err(|_| format!("bad index in {text:?}"))?;
    let n: usize = n.trim().parse().map_err(|_| format!("bad count in {text:?}"))?;
    if n == 0 || i >= n {
        return Err(format!("partition index must satisfy I < N, got {text:?}"));
    }
    Ok((i, n))
}

/// Whitespace-separated per-level factor triples, e.g. `"1,2,2 2,2,2"`.
pub fn parse_level_factors(text: &str) -> Result<Vec<[u64; 3]>, String> {
    let steps: Result<Vec<_>, _> = text.split_whitespace().map(parse_triple_u64).collect();
    let steps = steps?;
    if steps.is_empty() {
        return Err("no pyramid levels given".to_string());
    }
    if steps.iter().any(|f| f.iter().all(|&x| x == 1)) {
        return Err("a pyramid level with factors 1,1,1 is a no-op".to_string());
    }
    Ok(steps)
}
