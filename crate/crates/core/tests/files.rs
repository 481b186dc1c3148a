use std::io::Write;
use std::path::Path;

use comatch_core::corpus::{
    gen_synthetic, load_corpus, load_decision_log, load_json, save_corpus, save_decision_log, save_json,
    GeneratorSpec,
};
use comatch_core::embedding::{export_embeddings, import_embeddings};
use comatch_core::Error;

fn small() -> comatch_core::corpus::SyntheticData {
    let spec = GeneratorSpec { pairs: 6, records_per_prototype: 40, dimension: 12, ..GeneratorSpec::elam_like() };
    gen_synthetic(&spec, 11).unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::File::create(path).unwrap().write_all(text.as_bytes()).unwrap();
}

const PAIR: &str = r#"{"source":{"doc_id":"a","sentences":[{"text":"x","label":1}]},"target":{"doc_id":"b","sentences":[{"text":"y","label":0}]},"relation":2}"#;

#[test]
fn corpus_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/pairs.jsonl");
    let data = small();
    save_corpus(&data.pairs, &path).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), data.pairs);
}

#[test]
fn corpus_wire_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    write(&path, &format!("{PAIR}\n\n"));
    let pairs = load_corpus(&path).unwrap();
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0].source.sentences[0].true_label, Some(1));
    assert_eq!(pairs[0].target.sentences[0].doc_id, "b");
    assert_eq!(pairs[0].true_relation, Some(2));
    save_corpus(&pairs, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{PAIR}\n"));
}

#[test]
fn corpus_missing_sentences_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    write(&path, &format!("{PAIR}\n{}\n", r#"{"source":{"doc_id":"a"},"target":{"doc_id":"b","sentences":[]}}"#));
    match load_corpus(&path) {
        Err(Error::Format { line: Some(2), message }) => assert!(message.contains("sentences"), "{message}"),
        other => panic!("expected format error on line 2, got {other:?}"),
    }
}

#[test]
fn corpus_rejects_trailing_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    write(&path, &format!("{PAIR} x\n"));
    assert!(matches!(load_corpus(&path), Err(Error::Format { line: Some(1), .. })));
}

#[test]
fn corpus_invariant_violation_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    write(&path, &PAIR.replace(r#""doc_id":"b""#, r#""doc_id":"a""#));
    match load_corpus(&path) {
        Err(Error::Validation(report)) => assert!(report.violations[0].path.starts_with("line 1")),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn empty_corpus_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    write(&path, "");
    assert!(load_corpus(&path).unwrap().is_empty());
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(load_corpus(Path::new("/nonexistent/pairs.jsonl")), Err(Error::Io { .. })));
}

#[test]
fn decision_log_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let data = small();
    save_decision_log(&data.log, &path).unwrap();
    let back = load_decision_log(&path).unwrap();
    assert_eq!(back.dimension, data.log.dimension);
    assert_eq!(back.category_set, data.log.category_set);
    assert_eq!(back.records.len(), data.log.records.len());
    for (a, b) in back.records.iter().zip(&data.log.records) {
        assert_eq!(a.sentence_ref, b.sentence_ref);
        assert_eq!(a.embedding, b.embedding);
        assert_eq!(a.human_label, b.human_label);
        for (x, y) in a.machine_probs.iter().zip(&b.machine_probs) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

const HEADER: &str = r#"{"dimension":2,"categories":["Not Key","Key"]}"#;

#[test]
fn decision_log_probs_must_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let rec = r#"{"doc_id":"h","index":0,"embedding":[0.1,0.2],"human_label":1,"machine_probs":[0.3,0.6]}"#;
    write(&path, &format!("{HEADER}\n{rec}\n"));
    match load_decision_log(&path) {
        Err(Error::Validation(report)) => {
            assert_eq!(report.violations.len(), 1);
            assert!(report.violations[0].path.starts_with("line 2"));
            assert!(report.violations[0].message.contains("sum"));
        }
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn decision_log_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let ok = r#"{"doc_id":"h","index":0,"embedding":[0.1,0.2],"human_label":1,"machine_probs":[0.4,0.6]}"#;
    let bad = r#"{"doc_id":"h","index":1,"embedding":[0.1,0.2,0.3],"human_label":0,"machine_probs":[0.4,0.6]}"#;
    write(&path, &format!("{HEADER}\n{ok}\n{bad}\n"));
    assert!(matches!(load_decision_log(&path), Err(Error::Format { line: Some(3), .. })));
}

#[test]
fn decision_log_needs_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    write(&path, "\n");
    assert!(matches!(load_decision_log(&path), Err(Error::Format { .. })));
}

#[test]
fn embeddings_and_truth_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = small();
    let emb = dir.path().join("embeddings.jsonl");
    export_embeddings(&emb, &data.embeddings).unwrap();
    assert_eq!(import_embeddings(&emb, 12).unwrap(), data.embeddings);
    assert!(matches!(import_embeddings(&emb, 13), Err(Error::Format { line: Some(1), .. })));

    let truth = dir.path().join("truth.json");
    save_json(&data.truth, &truth).unwrap();
    let back: comatch_core::corpus::SyntheticTruth = load_json(&truth).unwrap();
    assert_eq!(back, data.truth);
}
