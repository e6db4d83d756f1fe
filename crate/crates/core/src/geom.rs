//! Core geometric types: voxel sizes, regions, and dense volumes.
//!
//! Coordinates are signed so that regions grown by a network context may
//! extend below zero; readers clamp at access time via [`read_region`] fill.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Physical extent of one voxel in nanometers, axis order `(z, y, x)`.
///
/// All components are strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelSize {
    pub z_nm: f64,
    pub y_nm: f64,
    pub x_nm: f64,
}

impl VoxelSize {
    pub fn new(z_nm: f64, y_nm: f64, x_nm: f64) -> Self {
        assert!(
            z_nm > 0.0 && y_nm > 0.0 && x_nm > 0.0,
            "voxel size components must be positive, got ({z_nm}, {y_nm}, {x_nm})"
        );
        Self { z_nm, y_nm, x_nm }
    }

    pub fn nm(&self) -> [f64; 3] {
        [self.z_nm, self.y_nm, self.x_nm]
    }

    /// Voxel size after downscaling by integer factors per axis.
    pub fn scaled(&self, factors: [u64; 3]) -> Self {
        Self::new(
            self.z_nm * factors[0] as f64,
            self.y_nm * factors[1] as f64,
            self.x_nm * factors[2] as f64,
        )
    }
}

impl Default for VoxelSize {
    /// 40 nm sections at 4x4 nm in-plane resolution, the ssTEM default.
    fn default() -> Self {
        Self::new(40.0, 4.0, 4.0)
    }
}

/// Axis-aligned voxel-coordinate region: signed offset plus shape, `(z, y, x)`.
///
/// Empty regions (any shape component zero) are representable and valid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roi {
    pub offset: [i64; 3],
    pub shape: [u64; 3],
}

impl Roi {
    pub const EMPTY: Roi = Roi {
        offset: [0; 3],
        shape: [0; 3],
    };

    pub fn new(offset: [i64; 3], shape: [u64; 3]) -> Self {
        Self { offset, shape }
    }

    /// Exclusive upper corner per axis.
    pub fn end(&self) -> [i64; 3] {
        [
            self.offset[0] + self.shape[0] as i64,
            self.offset[1] + self.shape[1] as i64,
            self.offset[2] + self.shape[2] as i64,
        ]
    }

    pub fn num_voxels(&self) -> u64 {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn is_empty(&self) -> bool {
        self.shape.contains(&0)
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        let end = self.end();
        (0..3).all(|a| p[a] >= self.offset[a] && p[a] < end[a])
    }

    pub fn contains_roi(&self, other: &Roi) -> bool {
        other.is_empty() || self.intersect(other).same_voxels(other)
    }

    /// Grows the region by `context` voxels on every side per axis.
    pub fn grow(&self, context: [u64; 3]) -> Roi {
        let mut offset = self.offset;
        let mut shape = self.shape;
        for a in 0..3 {
            offset[a] -= context[a] as i64;
            shape[a] += 2 * context[a];
        }
        Roi { offset, shape }
    }

    /// Maximal region contained in both; [`Roi::EMPTY`] when disjoint.
    pub fn intersect(&self, other: &Roi) -> Roi {
        let mut offset = [0i64; 3];
        let mut shape = [0u64; 3];
        let (ae, be) = (self.end(), other.end());
        for a in 0..3 {
            let lo = self.offset[a].max(other.offset[a]);
            let hi = ae[a].min(be[a]);
            if hi <= lo {
                return Roi::EMPTY;
            }
            offset[a] = lo;
            shape[a] = (hi - lo) as u64;
        }
        Roi { offset, shape }
    }

    /// Set equality: all empty regions describe the same (empty) voxel set.
    pub fn same_voxels(&self, other: &Roi) -> bool {
        (self.is_empty() && other.is_empty()) || self == other
    }

    pub fn translated(&self, by: [i64; 3]) -> Roi {
        Roi {
            offset: [
                self.offset[0] + by[0],
                self.offset[1] + by[1],
                self.offset[2] + by[2],
            ],
            shape: self.shape,
        }
    }
}

/// Element types a volume (or chunked dataset) can hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementType {
    U8,
    U16,
    U32,
    U64,
    F32,
    F64,
}

impl ElementType {
    pub fn size_bytes(&self) -> usize {
        match self {
            ElementType::U8 => 1,
            ElementType::U16 => 2,
            ElementType::U32 => 4,
            ElementType::U64 => 8,
            ElementType::F32 => 4,
            ElementType::F64 => 8,
        }
    }
}

/// A scalar volumes can be made of.
pub trait Element:
    Copy + PartialEq + PartialOrd + core::fmt::Debug + Send + Sync + 'static
{
    const TYPE: ElementType;
    const ZERO: Self;
    fn to_f64(self) -> f64;
    /// Lossy conversion used for fills and cross-type casts; saturates integers.
    fn from_f64(v: f64) -> Self;
}

macro_rules! impl_int_element {
    ($t:ty, $et:expr) => {
        impl Element for $t {
            const TYPE: ElementType = $et;
            const ZERO: Self = 0;
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn from_f64(v: f64) -> Self {
                v as $t
            }
        }
    };
}

impl_int_element!(u8, ElementType::U8);
impl_int_element!(u16, ElementType::U16);
impl_int_element!(u32, ElementType::U32);
impl_int_element!(u64, ElementType::U64);

impl Element for f32 {
    const TYPE: ElementType = ElementType::F32;
    const ZERO: Self = 0.0;
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    const TYPE: ElementType = ElementType::F64;
    const ZERO: Self = 0.0;
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Dense 3D volume over a [`Roi`], row-major with `z` slowest and `x` fastest.
///
/// Volumes are immutable values once built; they are `Send + Sync` and may be
/// freely shared or transferred between threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    roi: Roi,
    voxel_size: VoxelSize,
    data: Vec<T>,
}

impl<T: Element> Volume<T> {
    pub fn filled(roi: Roi, voxel_size: VoxelSize, value: T) -> Self {
        Self {
            roi,
            voxel_size,
            data: vec![value; roi.num_voxels() as usize],
        }
    }

    pub fn zeros(roi: Roi, voxel_size: VoxelSize) -> Self {
        Self::filled(roi, voxel_size, T::ZERO)
    }

    /// Wraps an existing buffer; `data.len()` must equal `roi.num_voxels()`.
    pub fn from_vec(roi: Roi, voxel_size: VoxelSize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len() as u64,
            roi.num_voxels(),
            "volume buffer length must match roi shape {:?}",
            roi.shape
        );
        Self {
            roi,
            voxel_size,
            data,
        }
    }

    /// Builds a volume by evaluating `f` at every absolute voxel coordinate.
    pub fn from_fn(roi: Roi, voxel_size: VoxelSize, mut f: impl FnMut([i64; 3]) -> T) -> Self {
        let mut data = Vec::with_capacity(roi.num_voxels() as usize);
        let end = roi.end();
        for z in roi.offset[0]..end[0] {
            for y in roi.offset[1]..end[1] {
                for x in roi.offset[2]..end[2] {
                    data.push(f([z, y, x]));
                }
            }
        }
        Self {
            roi,
            voxel_size,
            data,
        }
    }

    pub fn roi(&self) -> Roi {
        self.roi
    }

    pub fn voxel_size(&self) -> VoxelSize {
        self.voxel_size
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Linear index of an absolute coordinate, if inside the volume.
    pub fn index_of(&self, p: [i64; 3]) -> Option<usize> {
        if !self.roi.contains(p) {
            return None;
        }
        let rel = [
            (p[0] - self.roi.offset[0]) as u64,
            (p[1] - self.roi.offset[1]) as u64,
            (p[2] - self.roi.offset[2]) as u64,
        ];
        Some(((rel[0] * self.roi.shape[1] + rel[1]) * self.roi.shape[2] + rel[2]) as usize)
    }

    pub fn get(&self, p: [i64; 3]) -> Option<T> {
        self.index_of(p).map(|i| self.data[i])
    }

    pub fn set(&mut self, p: [i64; 3], value: T) {
        let i = self
            .index_of(p)
            .expect("set() coordinate outside volume roi");
        self.data[i] = value;
    }

    /// Iterates `(absolute coordinate, value)` in memory order.
    pub fn iter(&self) -> impl Iterator<Item = ([i64; 3], T)> + '_ {
        let roi = self.roi;
        self.data.iter().enumerate().map(move |(i, &v)| {
            let i = i as u64;
            let x = i % roi.shape[2];
            let y = (i / roi.shape[2]) % roi.shape[1];
            let z = i / (roi.shape[2] * roi.shape[1]);
            (
                [
                    roi.offset[0] + z as i64,
                    roi.offset[1] + y as i64,
                    roi.offset[2] + x as i64,
                ],
                v,
            )
        })
    }

    pub fn map<U: Element>(&self, mut f: impl FnMut(T) -> U) -> Volume<U> {
        Volume {
            roi: self.roi,
            voxel_size: self.voxel_size,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Returns the same volume with a different nominal voxel size.
    pub fn with_voxel_size(mut self, voxel_size: VoxelSize) -> Self {
        self.voxel_size = voxel_size;
        self
    }
}

/// Copies every voxel of `src` that falls inside `dst` (row-run copies).
pub fn copy_region<T: Element>(src: &Volume<T>, dst: &mut Volume<T>) {
    let inter = src.roi().intersect(&dst.roi());
    if inter.is_empty() {
        return;
    }
    let end = inter.end();
    let run = inter.shape[2] as usize;
    for z in inter.offset[0]..end[0] {
        for y in inter.offset[1]..end[1] {
            let p = [z, y, inter.offset[2]];
            let si = src.index_of(p).unwrap();
            let di = dst.index_of(p).unwrap();
            let (s, d) = (si..si + run, di..di + run);
            dst.data[d].copy_from_slice(&src.data()[s]);
        }
    }
}

/// Reads `roi` out of `v`: voxels inside `v` are copied, the rest get `fill`.
pub fn read_region<T: Element>(v: &Volume<T>, roi: Roi, fill: T) -> Volume<T> {
    let mut out = Volume::filled(roi, v.voxel_size(), fill);
    copy_region(v, &mut out);
    out
}

/// A volume of any supported element type, for typed storage round-trips.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    U8(Volume<u8>),
    U16(Volume<u16>),
    U32(Volume<u32>),
    U64(Volume<u64>),
    F32(Volume<f32>),
    F64(Volume<f64>),
}

/// Runs an expression with the typed volume bound to `$v`.
#[macro_export]
macro_rules! with_any_volume {
    ($any:expr, $v:ident => $body:expr) => {
        match $any {
            $crate::geom::AnyVolume::U8($v) => $body,
            $crate::geom::AnyVolume::U16($v) => $body,
            $crate::geom::AnyVolume::U32($v) => $body,
            $crate::geom::AnyVolume::U64($v) => $body,
            $crate::geom::AnyVolume::F32($v) => $body,
            $crate::geom::AnyVolume::F64($v) => $body,
        }
    };
}

impl AnyVolume {
    pub fn element_type(&self) -> ElementType {
        match self {
            AnyVolume::U8(_) => ElementType::U8,
            AnyVolume::U16(_) => ElementType::U16,
            AnyVolume::U32(_) => ElementType::U32,
            AnyVolume::U64(_) => ElementType::U64,
            AnyVolume::F32(_) => ElementType::F32,
            AnyVolume::F64(_) => ElementType::F64,
        }
    }

    pub fn roi(&self) -> Roi {
        with_any_volume!(self, v => v.roi())
    }

    pub fn voxel_size(&self) -> VoxelSize {
        with_any_volume!(self, v => v.voxel_size())
    }

    pub fn filled(element_type: ElementType, roi: Roi, voxel_size: VoxelSize, fill: f64) -> Self {
        match element_type {
            ElementType::U8 => AnyVolume::U8(Volume::filled(roi, voxel_size, u8::from_f64(fill))),
            ElementType::U16 => {
                AnyVolume::U16(Volume::filled(roi, voxel_size, u16::from_f64(fill)))
            }
            ElementType::U32 => {
                AnyVolume::U32(Volume::filled(roi, voxel_size, u32::from_f64(fill)))
            }
            ElementType::U64 => {
                AnyVolume::U64(Volume::filled(roi, voxel_size, u64::from_f64(fill)))
            }
            ElementType::F32 => {
                AnyVolume::F32(Volume::filled(roi, voxel_size, f32::from_f64(fill)))
            }
            ElementType::F64 => AnyVolume::F64(Volume::filled(roi, voxel_size, fill)),
        }
    }

    /// [`read_region`] with a fill value given as `f64` and cast to the element type.
    pub fn read_region(&self, roi: Roi, fill: f64) -> AnyVolume {
        match self {
            AnyVolume::U8(v) => AnyVolume::U8(read_region(v, roi, u8::from_f64(fill))),
            AnyVolume::U16(v) => AnyVolume::U16(read_region(v, roi, u16::from_f64(fill))),
            AnyVolume::U32(v) => AnyVolume::U32(read_region(v, roi, u32::from_f64(fill))),
            AnyVolume::U64(v) => AnyVolume::U64(read_region(v, roi, u64::from_f64(fill))),
            AnyVolume::F32(v) => AnyVolume::F32(read_region(v, roi, f32::from_f64(fill))),
            AnyVolume::F64(v) => AnyVolume::F64(read_region(v, roi, fill)),
        }
    }

    /// Numeric cast to `f32`.
    pub fn to_f32(&self) -> Volume<f32> {
        with_any_volume!(self, v => v.map(|e| e.to_f64() as f32))
    }

    /// Numeric cast to `f64`.
    pub fn to_f64(&self) -> Volume<f64> {
        with_any_volume!(self, v => v.map(|e| e.to_f64()))
    }

    /// Binary labels: nonzero is positive, except an optional reserved value
    /// treated as unannotated (negative).
    pub fn binarize(&self, ignore_value: Option<u64>) -> Volume<u8> {
        match self {
            AnyVolume::U8(v) => binarize_int(v, ignore_value),
            AnyVolume::U16(v) => binarize_int(v, ignore_value),
            AnyVolume::U32(v) => binarize_int(v, ignore_value),
            AnyVolume::U64(v) => binarize_int(v, ignore_value),
            AnyVolume::F32(v) => v.map(|e| (e != 0.0) as u8),
            AnyVolume::F64(v) => v.map(|e| (e != 0.0) as u8),
        }
    }
}

fn binarize_int<T: Element>(v: &Volume<T>, ignore_value: Option<u64>) -> Volume<u8> {
    v.map(|e| {
        let raw = e.to_f64() as u64;
        (raw != 0 && Some(raw) != ignore_value) as u8
    })
}

/// Floor division, correct for negative numerators.
pub fn floor_div(a: i64, b: u64) -> i64 {
    a.div_euclid(b as i64)
}

/// Ceiling division for unsigned counts.
pub fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grow_examples() {
        let r = Roi::new([0, 0, 0], [8, 32, 32]);
        assert_eq!(
            r.grow([4, 16, 16]),
            Roi::new([-4, -16, -16], [16, 64, 64])
        );
        assert_eq!(r.grow([0, 0, 0]), r);
        let empty = Roi::new([3, 1, 2], [0, 5, 5]);
        assert_eq!(empty.grow([1, 1, 1]).shape, [2, 7, 7]);
    }

    #[test]
    fn intersect_examples() {
        let a = Roi::new([0, 0, 0], [10, 10, 10]);
        let b = Roi::new([5, 5, 5], [10, 10, 10]);
        assert_eq!(a.intersect(&b), Roi::new([5, 5, 5], [5, 5, 5]));
        assert_eq!(a.intersect(&a), a);
        let far = Roi::new([100, 100, 100], [2, 2, 2]);
        assert!(a.intersect(&far).is_empty());
    }

    #[test]
    fn read_region_inside_and_outside() {
        let v = Volume::from_fn(
            Roi::new([0, 0, 0], [4, 4, 4]),
            VoxelSize::default(),
            |[z, y, x]| (z * 16 + y * 4 + x) as u32,
        );
        let inner = read_region(&v, Roi::new([1, 1, 1], [2, 2, 2]), 0);
        assert_eq!(inner.get([1, 1, 1]), Some(21));
        assert_eq!(inner.get([2, 2, 2]), Some(42));

        let outside = read_region(&v, Roi::new([10, 10, 10], [2, 2, 2]), 7);
        assert!(outside.data().iter().all(|&e| e == 7));
    }

    #[test]
    fn read_region_corner_straddle_matches_membership() {
        // Brute-force per-voxel membership oracle.
        let ones = Volume::filled(Roi::new([0, 0, 0], [4, 4, 4]), VoxelSize::default(), 1u8);
        let r = Roi::new([-2, -2, -2], [4, 4, 4]);
        let out = read_region(&ones, r, 0u8);
        for (p, value) in out.iter() {
            let expect = if ones.roi().contains(p) { 1 } else { 0 };
            assert_eq!(value, expect, "at {p:?}");
        }
    }

    #[test]
    fn binarize_respects_ignore_value() {
        let v = AnyVolume::U64(Volume::from_vec(
            Roi::new([0, 0, 0], [1, 1, 4]),
            VoxelSize::default(),
            alloc::vec![0, 3, u64::MAX, 9],
        ));
        let plain = v.binarize(None);
        assert_eq!(plain.data(), &[0, 1, 1, 1]);
        let masked = v.binarize(Some(u64::MAX));
        assert_eq!(masked.data(), &[0, 1, 0, 1]);
    }

    #[test]
    fn floor_div_negative() {
        assert_eq!(floor_div(-1, 13), -1);
        assert_eq!(floor_div(-13, 13), -1);
        assert_eq!(floor_div(-14, 13), -2);
        assert_eq!(floor_div(12, 13), 0);
    }
}
