use proptest::prelude::*;
use t2t::ingest::features::{
    encode_feature_binary, feature_csv_string, load_feature_matrix, parse_feature_csv, read_feature_binary,
    write_feature_binary, write_feature_csv, FEATURE_MAGIC,
};
use t2t::ingest::{
    detections_to_json, ground_truth_to_json, load_detections, load_ground_truth, parse_detections,
    parse_ground_truth, write_detections, write_ground_truth,
};
use t2t::{Error, FeatureMatrix};

const GT: &str = r#"{
  "images": [{"id": 1, "file_name": "a.jpg", "width": 64, "height": 48, "license": 3}],
  "annotations": [
    {"id": "g1", "image_id": 1, "bbox": [1.5, 2, 10, 20], "category_id": 1, "iscrowd": 0},
    {"id": "g2", "image_id": 1, "bbox": [30, 4, 5.25, 6]}
  ],
  "categories": [{"id": 1, "name": "person"}],
  "info": {"year": 2024}
}"#;

const DETS: &str = r#"[
  {"detection_id": "d1", "image_id": 1, "bbox": [1, 2, 10, 20], "score": 0.9, "category_id": 1},
  {"detection_id": "d2", "image_id": 1, "bbox": [31, 4, 5, 6], "score": 0.05}
]"#;

fn values(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn ground_truth_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("gt.json");
    std::fs::write(&a, GT).unwrap();
    let set = load_ground_truth(&a).unwrap();
    assert_eq!(set.len(), 2);
    let b = dir.path().join("gt2.json");
    write_ground_truth(&set, &b).unwrap();
    assert_eq!(values(&std::fs::read_to_string(&b).unwrap()), values(GT));
    assert_eq!(load_ground_truth(&b).unwrap(), set);
}

#[test]
fn detections_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("d.json");
    std::fs::write(&a, DETS).unwrap();
    let set = load_detections(&a).unwrap();
    let b = dir.path().join("d2.json");
    write_detections(&set, &b).unwrap();
    assert_eq!(values(&std::fs::read_to_string(&b).unwrap()), values(DETS));
}

#[test]
fn missing_file_names_path() {
    let err = load_ground_truth("/nonexistent/gt.json").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/gt.json"));
}

fn matrix() -> FeatureMatrix {
    FeatureMatrix::new(2, vec![0.0, 1.0, 2.5, -3.0, 4.0, 5.0, 6.0, 7.0], vec!["a".into(), "b".into(), "c".into(), "d".into()])
        .unwrap()
}

#[test]
fn binary_feature_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.bin");
    write_feature_binary(&matrix(), &p).unwrap();
    let m = load_feature_matrix(&p).unwrap();
    assert_eq!((m.rows(), m.dim()), (4, 2));
    assert_eq!(m, matrix());
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..8], FEATURE_MAGIC);
    for cut in [9, 24, 30, bytes.len() - 1] {
        let err = read_feature_binary(&bytes[..cut], "f.bin").unwrap_err();
        assert!(matches!(err, Error::Truncated { .. } | Error::Parse { .. }), "cut {cut}: {err}");
    }
}

#[test]
fn csv_feature_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.csv");
    write_feature_csv(&matrix(), &p).unwrap();
    assert_eq!(load_feature_matrix(&p).unwrap(), matrix());
    assert!(matches!(parse_feature_csv("a,1,2\nb,3\n", "r.csv"), Err(Error::Parse { .. })));
    let err = parse_feature_csv("a,1,2\nb,NaN,3\n", "n.csv").unwrap_err();
    assert!(err.to_string().contains('b'), "{err}");
}

fn any_matrix() -> impl Strategy<Value = FeatureMatrix> {
    (1usize..6, 1usize..8).prop_flat_map(|(dim, rows)| {
        prop::collection::vec(-1e6f32..1e6f32, dim * rows).prop_map(move |v| {
            FeatureMatrix::new(dim, v.into_iter().map(f64::from).collect(), (0..rows).map(|i| format!("row-{i}")).collect())
                .unwrap()
        })
    })
}

proptest! {
    #[test]
    fn feature_formats_round_trip(m in any_matrix()) {
        let bin = encode_feature_binary(&m).unwrap();
        prop_assert_eq!(&read_feature_binary(&bin, "m").unwrap(), &m);
        prop_assert_eq!(&parse_feature_csv(&feature_csv_string(&m), "m").unwrap(), &m);
    }

    #[test]
    fn binary_reader_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let mut framed = FEATURE_MAGIC.to_vec();
        framed.extend_from_slice(&bytes);
        let _ = read_feature_binary(&framed, "fuzz");
        let _ = read_feature_binary(&bytes, "fuzz");
    }

    /// Mutated annotation files are either rejected or produce records that
    /// satisfy every invariant.
    #[test]
    fn loaders_only_accept_valid_records(
        x in -5.0f64..5.0, w in -2.0f64..5.0, h in -2.0f64..5.0,
        score in -0.5f64..1.5, dup in any::<bool>(),
    ) {
        let gt = format!(
            r#"{{"images":[{{"id":1,"file_name":"a","width":1,"height":1}}],
               "annotations":[{{"id":1,"image_id":1,"bbox":[{x},0,{w},{h}]}}]}}"#
        );
        if let Ok(set) = parse_ground_truth(&gt, "fuzz") {
            for g in set.instances() {
                prop_assert!(g.bbox.width() > 0.0 && g.bbox.height() > 0.0);
            }
            prop_assert_eq!(parse_ground_truth(&ground_truth_to_json(&set), "again").unwrap(), set);
        } else {
            prop_assert!(w <= 0.0 || h <= 0.0);
        }
        let second = if dup { "d1" } else { "d2" };
        let dets = format!(
            r#"[{{"detection_id":"d1","image_id":1,"bbox":[0,0,1,1],"score":{score}}},
                {{"detection_id":"{second}","image_id":1,"bbox":[0,0,1,1],"score":0.5}}]"#
        );
        match parse_detections(&dets, "fuzz") {
            Ok(set) => {
                prop_assert!(!dup);
                prop_assert!(set.iter().all(|d| (0.0..=1.0).contains(&d.score)));
                prop_assert_eq!(parse_detections(&detections_to_json(&set), "again").unwrap(), set);
            }
            Err(_) => prop_assert!(dup || !(0.0..=1.0).contains(&score)),
        }
    }
}
