//! Scale-pyramid reducers and the low-resolution foreground mask that gates
//! block planning.
//!
//! Pooling cells are anchored to the absolute voxel grid (cell `o` covers
//! input coordinates `[o*f, (o+1)*f)`), so blockwise and whole-volume
//! downscaling agree bit for bit.

use alloc::vec;
use alloc::vec::Vec;

use crate::geom::{floor_div, AnyVolume, Roi, Volume};

/// One level of a scale pyramid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PyramidLevel {
    pub index: usize,
    /// Downscale factors from the previous level.
    pub step_factors: [u64; 3],
    /// Cumulative downscale factors from level 0.
    pub cumulative_factors: [u64; 3],
}

/// Expands per-step factors into levels with cumulative factors.
///
/// Level 0 is always the identity `(1, 1, 1)`.
pub fn pyramid_schedule(steps: &[[u64; 3]]) -> Vec<PyramidLevel> {
    let mut levels = vec![PyramidLevel {
        index: 0,
        step_factors: [1, 1, 1],
        cumulative_factors: [1, 1, 1],
    }];
    let mut cumulative = [1u64; 3];
    for (i, step) in steps.iter().enumerate() {
        assert!(step.iter().all(|&f| f >= 1), "factors must be >= 1");
        for a in 0..3 {
            cumulative[a] *= step[a];
        }
        levels.push(PyramidLevel {
            index: i + 1,
            step_factors: *step,
            cumulative_factors: cumulative,
        });
    }
    levels
}

/// Output region covered by `input` after downscaling by `factors`.
pub fn downscaled_roi(input: &Roi, factors: [u64; 3]) -> Roi {
    if input.is_empty() {
        return Roi::EMPTY;
    }
    let end = input.end();
    let mut offset = [0i64; 3];
    let mut shape = [0u64; 3];
    for a in 0..3 {
        let lo = floor_div(input.offset[a], factors[a]);
        let hi = floor_div(end[a] - 1, factors[a]) + 1;
        offset[a] = lo;
        shape[a] = (hi - lo) as u64;
    }
    Roi::new(offset, shape)
}

/// Mean pooling over factor-sized cells; edge cells average the in-bounds
/// voxels only. The output voxel size is the input's multiplied by `factors`.
pub fn downscale(v: &Volume<f32>, factors: [u64; 3]) -> Volume<f32> {
    assert!(factors.iter().all(|&f| f >= 1), "factors must be >= 1");
    let out_roi = downscaled_roi(&v.roi(), factors);
    let mut out = Volume::zeros(out_roi, v.voxel_size().scaled(factors));
    let in_roi = v.roi();
    let out_end = out_roi.end();
    for oz in out_roi.offset[0]..out_end[0] {
        for oy in out_roi.offset[1]..out_end[1] {
            for ox in out_roi.offset[2]..out_end[2] {
                let cell = Roi::new(
                    [
                        oz * factors[0] as i64,
                        oy * factors[1] as i64,
                        ox * factors[2] as i64,
                    ],
                    factors,
                )
                .intersect(&in_roi);
                let mut sum = 0.0f64;
                let end = cell.end();
                for z in cell.offset[0]..end[0] {
                    for y in cell.offset[1]..end[1] {
                        let i = v.index_of([z, y, cell.offset[2]]).unwrap();
                        for dx in 0..cell.shape[2] as usize {
                            sum += v.data()[i + dx] as f64;
                        }
                    }
                }
                out.set([oz, oy, ox], (sum / cell.num_voxels() as f64) as f32);
            }
        }
    }
    out
}

/// Majority-vote pooling for label volumes; ties pick the smaller value.
pub fn downscale_labels(v: &Volume<u8>, factors: [u64; 3]) -> Volume<u8> {
    assert!(factors.iter().all(|&f| f >= 1), "factors must be >= 1");
    let out_roi = downscaled_roi(&v.roi(), factors);
    let mut out = Volume::zeros(out_roi, v.voxel_size().scaled(factors));
    let in_roi = v.roi();
    let out_end = out_roi.end();
    let mut histogram = [0u32; 256];
    for oz in out_roi.offset[0]..out_end[0] {
        for oy in out_roi.offset[1]..out_end[1] {
            for ox in out_roi.offset[2]..out_end[2] {
                let cell = Roi::new(
                    [
                        oz * factors[0] as i64,
                        oy * factors[1] as i64,
                        ox * factors[2] as i64,
                    ],
                    factors,
                )
                .intersect(&in_roi);
                histogram.fill(0);
                let end = cell.end();
                for z in cell.offset[0]..end[0] {
                    for y in cell.offset[1]..end[1] {
                        let i = v.index_of([z, y, cell.offset[2]]).unwrap();
                        for dx in 0..cell.shape[2] as usize {
                            histogram[v.data()[i + dx] as usize] += 1;
                        }
                    }
                }
                let winner = histogram
                    .iter()
                    .enumerate()
                    .max_by_key(|&(value, &count)| (count, core::cmp::Reverse(value)))
                    .map(|(value, _)| value as u8)
                    .unwrap_or(0);
                out.set([oz, oy, ox], winner);
            }
        }
    }
    out
}

/// Foreground mask: positive where the value lies inside `[lo, hi]`.
pub fn build_mask(v: &AnyVolume, lo: f64, hi: f64) -> Volume<u8> {
    let f = v.to_f64();
    f.map(|e| (e >= lo && e <= hi) as u8)
}

/// Mask footprint of a full-resolution region in mask coordinates.
pub fn mask_footprint(region: &Roi, factors: [u64; 3]) -> Roi {
    downscaled_roi(region, factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::VoxelSize;

    #[test]
    fn constant_stays_constant() {
        let v = Volume::filled(Roi::new([0, 0, 0], [4, 6, 9]), VoxelSize::default(), 3.5f32);
        let d = downscale(&v, [2, 3, 4]);
        assert!(d.data().iter().all(|&e| e == 3.5));
        assert_eq!(d.roi().shape, [2, 2, 3]);
    }

    #[test]
    fn mean_of_cell() {
        let v = Volume::from_fn(
            Roi::new([0, 0, 0], [2, 2, 2]),
            VoxelSize::default(),
            |[z, y, x]| (z * 4 + y * 2 + x) as f32,
        );
        let d = downscale(&v, [2, 2, 2]);
        assert_eq!(d.data(), &[3.5]);
    }

    #[test]
    fn voxel_size_scales_to_half_micron() {
        let v = Volume::filled(
            Roi::new([0, 0, 0], [13, 128, 128]),
            VoxelSize::default(),
            0.0f32,
        );
        let d = downscale(&v, [13, 128, 128]);
        let nm = d.voxel_size().nm();
        assert_eq!(nm, [520.0, 512.0, 512.0]);
    }

    #[test]
    fn majority_vote_with_tie_break() {
        let v = Volume::from_vec(
            Roi::new([0, 0, 0], [1, 2, 2]),
            VoxelSize::default(),
            alloc::vec![1u8, 1, 2, 2],
        );
        assert_eq!(downscale_labels(&v, [1, 2, 2]).data(), &[1]);
        let w = Volume::from_vec(
            Roi::new([0, 0, 0], [1, 2, 2]),
            VoxelSize::default(),
            alloc::vec![2u8, 2, 2, 0],
        );
        assert_eq!(downscale_labels(&w, [1, 2, 2]).data(), &[2]);
    }

    #[test]
    fn mask_range_limits() {
        let v = AnyVolume::U8(Volume::from_vec(
            Roi::new([0, 0, 0], [1, 1, 4]),
            VoxelSize::default(),
            alloc::vec![0u8, 50, 100, 200],
        ));
        assert_eq!(build_mask(&v, 0.0, 255.0).data(), &[1, 1, 1, 1]);
        assert_eq!(build_mask(&v, 300.0, 400.0).data(), &[0, 0, 0, 0]);
        assert_eq!(build_mask(&v, 40.0, 150.0).data(), &[0, 1, 1, 0]);
    }

    #[test]
    fn mask_is_monotone_in_the_range() {
        let v = AnyVolume::F32(Volume::from_fn(
            Roi::new([0, 0, 0], [2, 4, 4]),
            VoxelSize::default(),
            |[z, y, x]| (z * 16 + y * 4 + x) as f32 * 7.3,
        ));
        let narrow = build_mask(&v, 50.0, 120.0);
        let wide = build_mask(&v, 30.0, 200.0);
        for (n, w) in narrow.data().iter().zip(wide.data()) {
            assert!(*n <= *w, "widening the range must never remove positives");
        }
    }

    #[test]
    fn schedule_cumulative_factors() {
        let levels = pyramid_schedule(&[[1, 2, 2], [2, 2, 2], [2, 4, 4]]);
        assert_eq!(levels[0].cumulative_factors, [1, 1, 1]);
        assert_eq!(levels[1].cumulative_factors, [1, 2, 2]);
        assert_eq!(levels[2].cumulative_factors, [2, 4, 4]);
        assert_eq!(levels[3].cumulative_factors, [4, 16, 16]);
    }
}
