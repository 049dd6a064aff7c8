//! Benchmark modes over the five-paper corpus with a scripted generator.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use scholarag_core::corpus::{load_corpus, IngestMode};
use scholarag_core::evalkit::{load_dataset, run_benchmark, BenchMode};
use scholarag_core::generate::ScriptedBackend;
use scholarag_core::pipeline::build_index;
use scholarag_core::{Corpus, HashEmbedder, Pipeline, VectorIndex};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

async fn pipeline(script: &str, empty_index: bool) -> Pipeline {
    let embedder = Arc::new(HashEmbedder::new(384));
    let corpus = load_corpus(&fixtures().join("corpus5"), IngestMode::Strict).unwrap();
    let (corpus, index) = if empty_index {
        (Corpus::empty(), VectorIndex::new(384))
    } else {
        let index = build_index(&corpus, embedder.as_ref(), 800).await.unwrap();
        (corpus, index)
    };
    let llm = ScriptedBackend::from_file(&fixtures().join("bench").join(script)).unwrap();
    Pipeline::new(Arc::new(corpus), Arc::new(index), embedder).with_llm(Arc::new(llm))
}

#[tokio::test]
async fn orig_mode_with_gold_script_is_perfect() {
    let started = Instant::now();
    let data = load_dataset(&fixtures().join("bench/pubmedqa5.jsonl")).unwrap();
    let p = pipeline("gold_script.jsonl", false).await;
    let out = run_benchmark(&p, &data, BenchMode::Orig, 3).await.unwrap();
    assert_eq!(out.report.aggregate_f64("accuracy"), Some(1.0));
    assert_eq!(out.report.aggregate["errors"], 0);
    assert_eq!(out.report.aggregate["ungrounded"], 0);
    let ids: Vec<&str> = out.traces.iter().map(|t| t.id.as_str()).collect();
    assert_eq!(ids, ["q1", "q2", "q3", "q4", "q5"]);
    for t in &out.traces {
        let a = t.answer.as_ref().unwrap();
        assert_eq!(a.citations.iter().copied().collect::<Vec<_>>(), vec![1]);
    }
    assert!(started.elapsed() < Duration::from_secs(10));
}

#[tokio::test]
async fn zero_mode_with_one_error_scores_point_eight() {
    let data = load_dataset(&fixtures().join("bench/pubmedqa5.jsonl")).unwrap();
    let p = pipeline("one_error_script.jsonl", false).await;
    let out = run_benchmark(&p, &data, BenchMode::ZeroContext, 2)
        .await
        .unwrap();
    assert!((out.report.aggregate_f64("accuracy").unwrap() - 0.8).abs() < 1e-12);
    assert_eq!(out.report.aggregate["ungrounded"], 5);
    for t in &out.traces {
        let a = t.answer.as_ref().unwrap();
        assert!(a.evidence.is_empty() && a.citations.is_empty());
        assert_eq!(a.dropped_markers, vec![1]);
    }
}

#[tokio::test]
async fn retrieval_over_empty_index_is_all_ungrounded() {
    let data = load_dataset(&fixtures().join("bench/pubmedqa5.jsonl")).unwrap();
    let p = pipeline("gold_script.jsonl", true).await;
    let out = run_benchmark(&p, &data, BenchMode::Retrieval, 4)
        .await
        .unwrap();
    assert_eq!(out.report.aggregate["examples"], 5);
    assert_eq!(out.report.aggregate["errors"], 0);
    assert_eq!(out.report.aggregate["ungrounded"], 5);
    assert!(out
        .traces
        .iter()
        .all(|t| t.answer.as_ref().is_some_and(|a| a.ungrounded)));
}

#[tokio::test]
async fn retrieval_over_corpus_cites_real_papers() {
    let data = load_dataset(&fixtures().join("bench/pubmedqa5.jsonl")).unwrap();
    let p = pipeline("gold_script.jsonl", false).await;
    let out = run_benchmark(&p, &data, BenchMode::Retrieval, 4)
        .await
        .unwrap();
    assert_eq!(out.report.aggregate["ungrounded"], 0);
    for t in &out.traces {
        let a = t.answer.as_ref().unwrap();
        assert!(a.bibliography.iter().any(|b| b.cited), "{}", t.id);
    }
}
