mod common;

use std::io::Write;

use promptscope_core::embedding::EmbeddingVector;
use promptscope_core::provider::import::{
    default_ids_path, export_jsonl, export_raw, import_embeddings, ImportError, ImportFormat, ImportOptions,
};
use promptscope_core::provider::{EmbeddingProvider, ProviderError, StubProvider};
use promptscope_core::store::ImageRecord;

fn records(seed: u64, n: usize, dim: usize) -> Vec<ImageRecord> {
    let mut rng = common::rng(seed);
    (0..n)
        .map(|i| {
            let uri = if i % 3 == 0 { String::new() } else { format!("frames/{i}.jpg") };
            ImageRecord::new(format!("rec-{i}"), uri, EmbeddingVector::new(common::gaussian(&mut rng, dim)).unwrap())
        })
        .collect()
}

#[test]
fn raw_round_trip_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("m.f32");
    let originals = records(30, 1000, 32);
    let mut m = Vec::new();
    let mut ids = Vec::new();
    export_raw(&originals, 32, &mut m, &mut ids).unwrap();
    std::fs::write(&matrix, &m).unwrap();
    std::fs::write(default_ids_path(&matrix), &ids).unwrap();

    let report = import_embeddings(&matrix, ImportFormat::RawMatrix, &ImportOptions::default()).unwrap();
    assert!(report.skipped.is_empty());
    assert_eq!(report.dim, Some(32));
    assert_eq!(report.records.len(), 1000);
    for (a, b) in originals.iter().zip(&report.records) {
        assert!(a.bit_eq(b));
    }
    let (mut m2, mut ids2) = (Vec::new(), Vec::new());
    export_raw(&report.records, 32, &mut m2, &mut ids2).unwrap();
    assert_eq!(m, m2);
    assert_eq!(ids, ids2);
}

#[test]
fn jsonl_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.jsonl");
    let originals: Vec<ImageRecord> = records(31, 200, 17)
        .into_iter()
        .map(|r| r.with_tag("weather", "fog"))
        .collect();
    let mut out = Vec::new();
    export_jsonl(&originals, &mut out).unwrap();
    std::fs::write(&path, &out).unwrap();
    let report = import_embeddings(&path, ImportFormat::JsonLines, &ImportOptions::default()).unwrap();
    assert_eq!(report.records.len(), 200);
    for (a, b) in originals.iter().zip(&report.records) {
        assert!(a.bit_eq(b));
    }
}

#[test]
fn lenient_import_skips_bad_lines_strict_stops() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, r#"{{"id":"a","embedding":[1,0,0]}}"#).unwrap();
    writeln!(f, r#"{{"id":"b","embedding":[1,0]}}"#).unwrap();
    writeln!(f, r#"{{"id":"a","embedding":[0,1,0]}}"#).unwrap();
    writeln!(f, r#"{{"id":"z","embedding":[0,0,0]}}"#).unwrap();
    writeln!(f, "not json").unwrap();
    writeln!(f, r#"{{"id":"c","uri":"c.png","embedding":[0,0,2]}}"#).unwrap();
    drop(f);

    let report = import_embeddings(&path, ImportFormat::JsonLines, &ImportOptions::default()).unwrap();
    let ids: Vec<_> = report.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["a", "c"]);
    let lines: Vec<_> = report.skipped.iter().map(|e| e.line()).collect();
    assert_eq!(lines, [Some(2), Some(3), Some(4), Some(5)]);
    assert!(matches!(report.skipped[0], ImportError::DimensionMismatch { expected: 3, actual: 2, .. }));
    assert!(matches!(report.skipped[1], ImportError::DuplicateId { .. }));
    assert!(matches!(report.skipped[2], ImportError::InvalidVector { .. }));

    let strict = ImportOptions {
        strict: true,
        ..Default::default()
    };
    let err = import_embeddings(&path, ImportFormat::JsonLines, &strict).unwrap_err();
    assert_eq!(err.line(), Some(2));
}

#[test]
fn stub_batch_equals_singles() {
    let stub = StubProvider::new(64).unwrap();
    let texts: Vec<String> = ["fog", "night", "rain", "snow", "clear", "fog"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let batch = stub.embed_text(&texts).unwrap();
    for (t, v) in texts.iter().zip(&batch) {
        let single = stub.embed_text(std::slice::from_ref(t)).unwrap();
        assert_eq!(&single[0], v);
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }
    assert_eq!(batch[0], batch[5]);
    assert_ne!(batch[0], batch[1]);
    // Text and image inputs with equal bytes land on different vectors.
    let img = stub.embed_image(b"fog", "image/png").unwrap();
    assert_ne!(img, batch[0]);
    assert_eq!(stub.embed_text(&[]), Err(ProviderError::EmptyBatch));
    assert_eq!(stub.embed_text(&["ok".into(), " ".into()]), Err(ProviderError::EmptyText(1)));
    assert!(matches!(stub.embed_image(b"x", "text/plain"), Err(ProviderError::UnsupportedMediaType(_))));
}

#[test]
fn stub_is_stable_across_instances() {
    let a = StubProvider::new(16).unwrap().embed_text(&["carriage".into()]).unwrap();
    let b = StubProvider::new(16).unwrap().embed_text(&["carriage".into()]).unwrap();
    assert_eq!(a, b);
}
