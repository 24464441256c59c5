mod common;

use nalgebra::Vector3;
use pointmap::align::{align_free, align_pinhole, AlignConfig, AlignMode};
use pointmap::geometry::ImageSize;
use pointmap::io::{
    cloud_from_pointmap, decode_pmap, encode_pmap, pair_from_records, pair_to_records, parse_ply, poses_from_json,
    poses_to_json, read_aln, read_json, read_pmap, write_aln, write_json, write_ply, FormatError, IoError, PlyFormat,
    PmapRecord, PoseList,
};
use pointmap::oracle::{predict_pair, NoiseModel};
use pointmap::pointmap::{ConfidenceMap, Pointmap};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use common::{oracle_graph, random_pose, rng};

/// A record whose values are all exactly representable in `f32`.
fn random_record(r: &mut ChaCha8Rng, w: usize, h: usize, conf: bool, color: bool) -> PmapRecord {
    let size = ImageSize::new(w, h).unwrap();
    let points = Pointmap::from_fn(size, |_, _| {
        let p = Vector3::from_fn(|_, _| r.random_range(-1e4f32..1e4) as f64);
        (r.random::<f64>() > 0.2).then_some(p)
    });
    PmapRecord {
        points,
        confidence: conf.then(|| {
            ConfidenceMap::new(
                size,
                (0..size.len()).map(|_| r.random_range(1.0f32..50.0) as f64).collect(),
            )
            .unwrap()
        }),
        colors: color.then(|| (0..size.len()).map(|_| r.random()).collect()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pmap_round_trip_is_bitwise(
        seed in any::<u64>(), w in 1usize..20, h in 1usize..20, conf: bool, color: bool, count in 1usize..4,
    ) {
        let mut r = rng(seed);
        let records: Vec<_> = (0..count).map(|_| random_record(&mut r, w, h, conf, color)).collect();
        let bytes = encode_pmap(&records);
        let back = decode_pmap(&bytes).unwrap();
        prop_assert_eq!(encode_pmap(&back), bytes);
        for (a, b) in records.iter().zip(&back) {
            prop_assert_eq!(a.points.valid(), b.points.valid());
            for (k, p) in a.points.iter_valid() {
                prop_assert_eq!(p.map(f64::to_bits), b.points.point(k).map(f64::to_bits));
            }
            prop_assert_eq!(&a.confidence, &b.confidence);
            prop_assert_eq!(&a.colors, &b.colors);
        }
    }

    #[test]
    fn truncated_pmap_reports_lengths(seed in any::<u64>(), cut in 1usize..200) {
        let mut r = rng(seed);
        let bytes = encode_pmap(&[random_record(&mut r, 4, 3, true, false)]);
        let keep = bytes.len().saturating_sub(cut);
        match decode_pmap(&bytes[..keep]) {
            Err(FormatError::Truncated { expected, actual, .. }) => prop_assert!(actual < expected),
            Err(FormatError::BadMagic { offset: 0, .. }) => prop_assert!(keep < 4),
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }
}

#[test]
fn pmap_files_round_trip_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _) = oracle_graph(8, 2, &NoiseModel::default(), 0);
    let pair = predict_pair(&scene, 0, 1, &NoiseModel::default(), 0).unwrap();
    let path = dir.path().join("pair_0_1.pmap");
    pointmap::io::write_pmap(&path, &pair_to_records(&pair)).unwrap();
    let back = pair_from_records(read_pmap(&path).unwrap()).unwrap();
    // Stored as f32.
    for (a, b) in [(&pair.view1, &back.view1), (&pair.view2, &back.view2)] {
        assert_eq!(a.points.valid(), b.points.valid());
        for (k, p) in a.points.iter_valid() {
            assert!((p - b.points.point(k)).norm() <= 1e-6 * p.norm().max(1.0));
        }
    }
    let single = dir.path().join("view.pmap");
    pointmap::io::write_pmap(&single, &[PmapRecord::points_only(pair.view1.points.clone())]).unwrap();
    let err = pair_from_records(read_pmap(&single).unwrap()).unwrap_err();
    assert!(matches!(err, IoError::Content(_)));
    assert!(matches!(
        read_pmap(&dir.path().join("missing.pmap")),
        Err(IoError::Io { .. })
    ));
}

#[test]
fn ply_export_skips_invalid_and_unconfident_pixels() {
    let mut r = rng(2);
    let rec = random_record(&mut r, 9, 7, true, true);
    let conf = rec.confidence.as_ref().unwrap();
    let cloud = cloud_from_pointmap(&rec.points, Some(conf), 10.0, rec.colors.as_deref());
    let expected = rec.points.iter_valid().filter(|(k, _)| conf.weight(*k) >= 10.0).count();
    assert_eq!(cloud.points.len(), expected);
    assert_eq!(cloud.colors.as_ref().unwrap().len(), expected);

    let dir = tempfile::tempdir().unwrap();
    for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
        let path = dir.path().join("cloud.ply");
        write_ply(&path, &cloud, format).unwrap();
        assert_eq!(parse_ply(&std::fs::read(&path).unwrap()).unwrap(), cloud);
    }
}

#[test]
fn pose_json_round_trip_is_exact() {
    let mut r = rng(8);
    let poses: Vec<_> = (0..6).map(|_| random_pose(&mut r)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("poses.json");
    write_json(&path, &poses_to_json(&poses)).unwrap();
    let list: PoseList = read_json(&path).unwrap();
    assert_eq!(list, poses_to_json(&poses));
    for (a, b) in poses.iter().zip(poses_from_json(&list)) {
        assert!(a.rotation.angle_to(&b.rotation) < 1e-15);
        assert_eq!(a.translation, b.translation);
    }
}

#[test]
fn alignment_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, graph) = oracle_graph(8, 3, &NoiseModel::default(), 1);
    let cfg = AlignConfig {
        iterations: 5,
        ..AlignConfig::default()
    };
    let results = [
        align_pinhole(&graph, &cfg).unwrap(),
        align_free(
            &graph,
            &AlignConfig {
                mode: AlignMode::FreePointmaps,
                ..cfg
            },
        )
        .unwrap(),
    ];
    for res in results {
        let path = dir.path().join("result.aln");
        write_aln(&path, &res).unwrap();
        assert_eq!(read_aln(&path).unwrap(), res);
    }
}
