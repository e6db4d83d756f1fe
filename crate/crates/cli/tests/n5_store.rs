//! On-disk store behavior: round trips, edge chunks, concurrency, bounds.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use voxmill::n5::{decode_chunk, Compression, Dataset, DatasetAttributes};
use voxmill_core::geom::{read_region, AnyVolume, ElementType, Roi, Volume, VoxelSize};

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("tempdir")
}

fn random_volume_u16(rng: &mut StdRng, roi: Roi) -> Volume<u16> {
    Volume::from_fn(roi, VoxelSize::default(), |_| rng.gen())
}

#[test]
fn write_then_read_whole_dataset_all_types() {
    let dir = tempdir();
    for (i, element_type) in [
        ElementType::U8,
        ElementType::U16,
        ElementType::U32,
        ElementType::U64,
        ElementType::F32,
        ElementType::F64,
    ]
    .into_iter()
    .enumerate()
    {
        for compression in [Compression::Raw, Compression::Gzip] {
            let attrs = DatasetAttributes::new([5, 6, 7], [2, 3, 4], element_type, compression);
            let ds = Dataset::create(
                dir.path().join(format!("ds{i}_{compression:?}")),
                attrs,
            )
            .unwrap();
            let mut rng = StdRng::seed_from_u64(77 + i as u64);
            let source: Volume<f64> = Volume::from_fn(ds.bounds(), VoxelSize::default(), |_| {
                rng.gen_range(0.0..200.0f64).floor()
            });
            let typed = match element_type {
                ElementType::U8 => AnyVolume::U8(source.map(|v| v as u8)),
                ElementType::U16 => AnyVolume::U16(source.map(|v| v as u16)),
                ElementType::U32 => AnyVolume::U32(source.map(|v| v as u32)),
                ElementType::U64 => AnyVolume::U64(source.map(|v| v as u64)),
                ElementType::F32 => AnyVolume::F32(source.map(|v| v as f32)),
                ElementType::F64 => AnyVolume::F64(source.clone()),
            };
            ds.write_roi_any(&typed).unwrap();
            let back = ds.read_roi(ds.bounds(), 0.0).unwrap();
            assert_eq!(back, typed, "{element_type:?} {compression:?}");
        }
    }
}

#[test]
fn read_of_never_written_region_is_fill() {
    let dir = tempdir();
    let ds = Dataset::create(
        dir.path().join("empty"),
        DatasetAttributes::new([8, 8, 8], [4, 4, 4], ElementType::U16, Compression::Raw),
    )
    .unwrap();
    let v = ds
        .read_roi_typed(Roi::new([0, 0, 0], [8, 8, 8]), 42u16)
        .unwrap();
    assert!(v.data().iter().all(|&e| e == 42));
}

#[test]
fn unaligned_write_preserves_surroundings() {
    let dir = tempdir();
    let ds = Dataset::create(
        dir.path().join("rmw"),
        DatasetAttributes::new([8, 8, 8], [4, 4, 4], ElementType::U16, Compression::Gzip),
    )
    .unwrap();
    let base = Volume::filled(ds.bounds(), VoxelSize::default(), 7u16);
    ds.write_roi(&base).unwrap();
    // Off-grid write straddling chunk boundaries.
    let patch = Volume::filled(
        Roi::new([2, 2, 2], [3, 3, 3]),
        VoxelSize::default(),
        1000u16,
    );
    ds.write_roi(&patch).unwrap();
    let back = ds.read_roi_typed(ds.bounds(), 0u16).unwrap();
    for (p, value) in back.iter() {
        let expect = if patch.roi().contains(p) { 1000 } else { 7 };
        assert_eq!(value, expect, "at {p:?}");
    }
}

#[test]
fn edge_chunks_store_truncated_headers() {
    let dir = tempdir();
    // 5 along z with chunk 4: the second z-chunk holds only one section.
    let ds = Dataset::create(
        dir.path().join("edge"),
        DatasetAttributes::new([5, 4, 4], [4, 4, 4], ElementType::U8, Compression::Raw),
    )
    .unwrap();
    let v = Volume::from_fn(ds.bounds(), VoxelSize::default(), |[z, y, x]| {
        (z * 25 + y * 5 + x) as u8
    });
    ds.write_roi(&v).unwrap();

    let bytes = std::fs::read(ds.chunk_path([1, 0, 0])).unwrap();
    let (shape_xyz, payload) = decode_chunk::<u8>(ds.attributes(), &bytes).unwrap();
    assert_eq!(shape_xyz, [4, 4, 1], "truncated edge chunk dims (x,y,z)");
    assert_eq!(payload.len(), 16);
    // The sole section is z == 4.
    assert_eq!(payload[0], 100);
}

#[test]
fn out_of_bounds_write_is_rejected() {
    let dir = tempdir();
    let ds = Dataset::create(
        dir.path().join("oob"),
        DatasetAttributes::new([4, 4, 4], [4, 4, 4], ElementType::U8, Compression::Raw),
    )
    .unwrap();
    let v = Volume::filled(Roi::new([2, 0, 0], [4, 4, 4]), VoxelSize::default(), 1u8);
    assert!(matches!(
        ds.write_roi(&v),
        Err(voxmill::n5::StoreError::OutOfBounds { .. })
    ));
}

#[test]
fn reads_beyond_bounds_match_in_memory_read_region() {
    let dir = tempdir();
    let ds = Dataset::create(
        dir.path().join("pad"),
        DatasetAttributes::new([6, 6, 6], [4, 4, 4], ElementType::U16, Compression::Gzip),
    )
    .unwrap();
    let mut rng = StdRng::seed_from_u64(5);
    let v = random_volume_u16(&mut rng, ds.bounds());
    ds.write_roi(&v).unwrap();
    for _ in 0..20 {
        let roi = Roi::new(
            [
                rng.gen_range(-6..8),
                rng.gen_range(-6..8),
                rng.gen_range(-6..8),
            ],
            [
                rng.gen_range(1..8),
                rng.gen_range(1..8),
                rng.gen_range(1..8),
            ],
        );
        let from_store = ds.read_roi_typed(roi, 9u16).unwrap();
        let oracle = read_region(&v, roi, 9u16);
        assert_eq!(from_store, oracle, "roi {roi:?}");
    }
}

#[test]
fn concurrent_disjoint_writes_match_sequential() {
    let dir = tempdir();
    let attrs = DatasetAttributes::new([8, 16, 16], [4, 4, 4], ElementType::U16, Compression::Gzip);
    let parallel = Dataset::create(dir.path().join("par"), attrs).unwrap();
    let serial = Dataset::create(dir.path().join("ser"), attrs).unwrap();

    // Chunk-aligned disjoint tiles.
    let mut tiles = Vec::new();
    let mut rng = StdRng::seed_from_u64(11);
    for bz in 0..2 {
        for by in 0..4 {
            for bx in 0..4 {
                let roi = Roi::new([bz * 4, by * 4, bx * 4], [4, 4, 4]);
                tiles.push(random_volume_u16(&mut rng, roi));
            }
        }
    }
    for t in &tiles {
        serial.write_roi(t).unwrap();
    }
    std::thread::scope(|scope| {
        for chunk in tiles.chunks(8) {
            let parallel = &parallel;
            scope.spawn(move || {
                for t in chunk {
                    parallel.write_roi(t).unwrap();
                }
            });
        }
    });

    // Concurrent readers while nothing mutates: all agree with the oracle.
    let expected = serial.read_roi(serial.bounds(), 0.0).unwrap();
    std::thread::scope(|scope| {
        for _ in 0..4 {
            let parallel = &parallel;
            let expected = &expected;
            scope.spawn(move || {
                let got = parallel.read_roi(parallel.bounds(), 0.0).unwrap();
                assert_eq!(&got, expected);
            });
        }
    });
}

#[test]
fn chunk_files_live_at_x_y_z_paths() {
    let dir = tempdir();
    let ds = Dataset::create(
        dir.path().join("paths"),
        DatasetAttributes::new([2, 4, 6], [2, 2, 2], ElementType::U8, Compression::Raw),
    )
    .unwrap();
    let v = Volume::filled(ds.bounds(), VoxelSize::default(), 1u8);
    ds.write_roi(&v).unwrap();
    // Grid position (z=0, y=1, x=2) lives at <dataset>/2/1/0.
    assert!(dir.path().join("paths").join("2").join("1").join("0").exists());
    assert_eq!(ds.chunk_path([0, 1, 2]), dir.path().join("paths/2/1/0"));
}
