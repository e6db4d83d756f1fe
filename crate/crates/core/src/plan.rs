//! Block planning for masked, parallel prediction: tile a region into
//! adjacent non-overlapping output blocks, grow each by the network context to
//! its overlapping input block, and gate blocks on a low-resolution mask.

use alloc::vec::Vec;

use serde::Serialize;

use crate::geom::{floor_div, Roi, Volume};

/// One unit of prediction work.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlockPlan {
    pub block_id: u64,
    /// Non-overlapping output region.
    pub output_roi: Roi,
    /// Output region grown by the context per side; input blocks overlap.
    pub input_roi: Roi,
    /// Whether the block's footprint touches the foreground mask.
    pub masked_in: bool,
}

/// Low-resolution foreground mask plus the per-axis factors that map
/// full-resolution coordinates into mask coordinates.
#[derive(Clone, Copy, Debug)]
pub struct MaskSpec<'a> {
    pub mask: &'a Volume<u8>,
    pub downscale_factors: [u64; 3],
}

impl MaskSpec<'_> {
    /// True when the footprint of `region` contains at least one positive
    /// mask voxel. Footprints outside the mask volume count as background.
    pub fn covers(&self, region: &Roi) -> bool {
        if region.is_empty() {
            return false;
        }
        let end = region.end();
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for a in 0..3 {
            lo[a] = floor_div(region.offset[a], self.downscale_factors[a]);
            hi[a] = floor_div(end[a] - 1, self.downscale_factors[a]);
        }
        for z in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    if self.mask.get([z, y, x]).unwrap_or(0) > 0 {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Tiles `total_roi` into adjacent output blocks in deterministic z-major
/// order (z slowest), truncating edge blocks, and marks each block against the
/// optional mask.
pub fn plan_blocks(
    total_roi: Roi,
    output_block_shape: [u64; 3],
    context: [u64; 3],
    mask: Option<MaskSpec<'_>>,
) -> Vec<BlockPlan> {
    assert!(
        output_block_shape.iter().all(|&s| s > 0),
        "block shape components must be positive"
    );
    let mut plans = Vec::new();
    if total_roi.is_empty() {
        return plans;
    }
    let counts = [
        total_roi.shape[0].div_ceil(output_block_shape[0]),
        total_roi.shape[1].div_ceil(output_block_shape[1]),
        total_roi.shape[2].div_ceil(output_block_shape[2]),
    ];
    let mut block_id = 0u64;
    for bz in 0..counts[0] {
        for by in 0..counts[1] {
            for bx in 0..counts[2] {
                let idx = [bz, by, bx];
                let mut offset = [0i64; 3];
                let mut shape = [0u64; 3];
                for a in 0..3 {
                    offset[a] = total_roi.offset[a] + (idx[a] * output_block_shape[a]) as i64;
                    let remaining = total_roi.shape[a] - idx[a] * output_block_shape[a];
                    shape[a] = output_block_shape[a].min(remaining);
                }
                let output_roi = Roi::new(offset, shape);
                let masked_in = match &mask {
                    None => true,
                    Some(m) => m.covers(&output_roi),
                };
                plans.push(BlockPlan {
                    block_id,
                    output_roi,
                    input_roi: output_roi.grow(context),
                    masked_in,
                });
                block_id += 1;
            }
        }
    }
    plans
}

/// Expected wall time of a run: `total_voxels / (n_workers * rate)`.
pub fn eta_seconds(total_voxels: f64, n_workers: f64, rate_voxels_per_second_per_worker: f64) -> f64 {
    assert!(
        total_voxels > 0.0 && n_workers > 0.0 && rate_voxels_per_second_per_worker > 0.0,
        "eta arguments must be positive"
    );
    total_voxels / (n_workers * rate_voxels_per_second_per_worker)
}
