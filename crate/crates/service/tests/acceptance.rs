//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test -p scholarag-service --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use axum::routing::get;
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use scholarag_core::compose::{
    compose_prompt, ComposeOptions, EvidenceKind, EvidenceSet, EvidenceSource, InstructionSet,
};
use scholarag_core::corpus::{chunk_document, load_corpus, IngestMode};
use scholarag_core::embedding::{EmbeddingVector, HashEmbedder};
use scholarag_core::evalkit::{
    citation_prf, label_metrics, rouge_n, smog_index, CitationJudgment, LabeledPrediction, Verdict,
};
use scholarag_core::generate::extract_citations;
use scholarag_core::kgfact::{
    build_query, extract_entities, select_template, KgEngine, KgValue, SparqlClient,
    SparqlClientConfig, TemplateCatalog, RESULTS_MEDIA_TYPE,
};
use scholarag_core::pipeline::build_index;
use scholarag_core::router::{
    rule_precheck, KeywordClassifier, Router, RuleTable, TaskLabel, Trigger,
};
use scholarag_core::vindex::{EntryMetadata, IndexEntry, VectorIndex};
use serde_json::Value;
use tokio::runtime::Runtime;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

// ---- vector index -------------------------------------------------------

fn random_vector(rng: &mut StdRng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn random_index(seed: u64, n: usize, dim: usize) -> (VectorIndex, Vec<(String, Vec<f32>)>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut index = VectorIndex::new(dim);
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let v = random_vector(&mut rng, dim);
        let id = format!("c{i:05}");
        let metadata = EntryMetadata {
            paper_id: format!("p{}", i % 13),
            title: format!("Paper {}", i % 13),
            authors: vec![],
            venue: None,
            year: None,
            section_path: "Body".into(),
            text: format!("chunk {i}"),
        };
        index
            .add(IndexEntry {
                chunk_id: id.clone(),
                vector: EmbeddingVector::new(v.clone()).unwrap(),
                metadata,
            })
            .unwrap();
        raw.push((id, v));
    }
    index.freeze();
    (index, raw)
}

fn brute_force(raw: &[(String, Vec<f32>)], q: &[f32], k: usize) -> Vec<(String, f64)> {
    let norm = |v: &[f32]| v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let qn = norm(q);
    let mut all: Vec<(String, f64)> = raw
        .iter()
        .map(|(id, v)| {
            let dot: f64 = v
                .iter()
                .zip(q)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            (id.clone(), dot / (norm(v) * qn))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn vindex_exactness() -> Outcome {
    let started = Instant::now();
    let (index, raw) = random_index(7, 1000, 384);
    let build = started.elapsed();
    let mut rng = StdRng::seed_from_u64(99);
    let mut searched = Duration::ZERO;
    let mut max_err = 0.0f64;
    for qi in 0..50 {
        let q = random_vector(&mut rng, 384);
        let qv = EmbeddingVector::new(q.clone()).unwrap();
        for k in [1, 8, 50] {
            let t = Instant::now();
            let hits = index.search(&qv, k).map_err(|e| e.to_string())?;
            searched += t.elapsed();
            let expected = brute_force(&raw, &q, k);
            ensure!(
                hits.len() == expected.len(),
                "query {qi} k={k}: {} hits, expected {}",
                hits.len(),
                expected.len()
            );
            for (rank, (hit, (id, score))) in hits.iter().zip(&expected).enumerate() {
                ensure!(
                    &hit.chunk_id == id,
                    "query {qi} k={k} rank {}: {} vs {id}",
                    rank + 1,
                    hit.chunk_id
                );
                max_err = max_err.max((hit.score - score).abs());
            }
        }
    }
    ensure!(max_err <= 1e-6, "max score error {max_err:e}");
    let total = build + searched;
    ensure!(total < Duration::from_secs(5), "took {total:?}");
    Ok(format!(
        "150 searches identical, max score error {max_err:.1e}, {} ms",
        total.as_millis()
    ))
}

// ---- chunker ------------------------------------------------------------

fn chunker_contract() -> Outcome {
    let corpus =
        load_corpus(&fixtures().join("corpus20"), IngestMode::Strict).map_err(|e| e.to_string())?;
    ensure!(corpus.len() == 20, "corpus has {} documents", corpus.len());
    let mut chunks_seen = 0;
    for min_chars in [100, 800, 2000] {
        for doc in corpus.papers() {
            let chunks = chunk_document(doc, min_chars);
            chunks_seen += chunks.len();
            for (section, path) in doc.sections.iter().zip(doc.section_paths()) {
                let mine: Vec<_> = chunks.iter().filter(|c| c.section_path == path).collect();
                let joined: String = mine.iter().map(|c| c.text.as_str()).collect();
                ensure!(
                    joined == section.body,
                    "{} / {path} at {min_chars}: concatenation differs",
                    doc.paper_id
                );
                if let Some((_, head)) = mine.split_last() {
                    for c in head {
                        ensure!(
                            c.char_len >= min_chars,
                            "{} has {} chars < {min_chars}",
                            c.chunk_id,
                            c.char_len
                        );
                    }
                }
            }
        }
    }
    Ok(format!("20 documents x 3 sizes, {chunks_seen} chunks"))
}

// ---- router -------------------------------------------------------------

fn router_fixture(rt: &Runtime) -> Outcome {
    let rows: Vec<(TaskLabel, bool, String)> = read(&fixtures().join("router_queries.tsv"))?
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let mut f = l.splitn(3, '\t');
            let label = TaskLabel::parse(f.next().unwrap()).unwrap();
            let identifier = f.next().unwrap() == "yes";
            (label, identifier, f.next().unwrap().to_string())
        })
        .collect();
    ensure!(rows.len() == 40, "fixture has {} rows", rows.len());
    for label in TaskLabel::ALL {
        let n = rows.iter().filter(|r| r.0 == label).count();
        ensure!(n == 10, "{label} has {n} rows");
    }

    let rules = RuleTable::default();
    let identifiers: Vec<_> = rows.iter().filter(|r| r.1).collect();
    for (_, _, q) in &identifiers {
        let hit = rule_precheck(q, &rules)
            .filter(|d| d.label == TaskLabel::KGFact && d.trigger == Trigger::RulePreCheck);
        ensure!(hit.is_some(), "identifier query not pre-checked: {q:?}");
    }

    let router = Router::default();
    let rest: Vec<_> = rows.iter().filter(|r| !r.1).collect();
    let mut correct = 0;
    for (label, _, q) in &rest {
        if rt.block_on(router.route(q)).decision.label == *label {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / rest.len() as f64;
    ensure!(accuracy >= 0.9, "classifier accuracy {accuracy:.3} < 0.9");

    let classifier = KeywordClassifier::default();
    let mut fallbacks = 0;
    for (_, _, q) in &rest {
        let (_, conf) = classifier.classify_sync(q);
        let threshold = conf + 1e-9;
        if threshold > 1.0 {
            continue;
        }
        let strict = Router::new(
            RuleTable::parse(""),
            std::sync::Arc::new(KeywordClassifier::default()),
            threshold,
        );
        let d = rt.block_on(strict.route(q)).decision;
        ensure!(
            d.label == TaskLabel::GeneralQA && d.trigger == Trigger::Fallback,
            "below threshold went to {}: {q:?}",
            d.label
        );
        fallbacks += 1;
    }
    Ok(format!(
        "pre-check {}/{}, classifier {correct}/{} ({:.0}%), {fallbacks} below-threshold cases on GeneralQA",
        identifiers.len(),
        identifiers.len(),
        rest.len(),
        accuracy * 100.0
    ))
}

// ---- KG templates -------------------------------------------------------

async fn h_index_mock() -> std::net::SocketAddr {
    let app = axum::Router::new().route(
        "/sparql",
        get(|headers: axum::http::HeaderMap| async move {
            let accept = headers.get("accept").and_then(|v| v.to_str().ok()).unwrap_or_default().to_string();
            if accept != RESULTS_MEDIA_TYPE {
                return (axum::http::StatusCode::BAD_REQUEST, [("content-type", "text/plain")], String::new());
            }
            let body = r#"{"head":{"vars":["author","institutionName","hIndex"]},"results":{"bindings":[
              {"author":{"type":"uri","value":"https://semopenalex.org/author/A1"},
               "institutionName":{"type":"literal","value":"Example University"},
               "hIndex":{"type":"literal","datatype":"http://www.w3.org/2001/XMLSchema#integer","value":"42"}}]}}"#;
            (axum::http::StatusCode::OK, [("content-type", RESULTS_MEDIA_TYPE)], body.to_string())
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

fn kg_templates(rt: &Runtime) -> Outcome {
    let catalog = TemplateCatalog::builtin();
    let rules = RuleTable::default();
    let mut covered = BTreeSet::new();
    for line in read(&fixtures().join("kg/queries.tsv"))?
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
    {
        let (id, q) = line.split_once('\t').ok_or("bad queries.tsv line")?;
        let entities = extract_entities(q, &rules, &[]);
        let t = select_template(q, &entities, &catalog).map_err(|e| format!("{q:?}: {e}"))?;
        ensure!(
            t.template_id == id,
            "{q:?} selected {} instead of {id}",
            t.template_id
        );
        let sparql = build_query(t, &entities.slots_for(t)).map_err(|e| e.to_string())?;
        let golden = read(&fixtures().join(format!("kg/golden/{id}.rq")))?;
        ensure!(sparql == golden, "{id}: expansion differs from golden file");
        covered.insert(id.to_string());
    }
    ensure!(
        covered.len() == 18 && catalog.len() == 18,
        "covered {} of {}",
        covered.len(),
        catalog.len()
    );

    let answer = rt.block_on(async {
        let addr = h_index_mock().await;
        let engine = KgEngine {
            catalog: catalog.clone(),
            rules: rules.clone(),
            client: SparqlClient::new(SparqlClientConfig {
                endpoint: format!("http://{addr}/sparql"),
                ..Default::default()
            }),
        };
        engine.answer("What is the h-index of Jane Doe?", &[]).await
    });
    let answer = answer.map_err(|e| format!("mock execution: {e}"))?;
    ensure!(answer.bindings.len() == 1, "{} rows", answer.bindings.len());
    let row = &answer.bindings[0];
    ensure!(
        row.get("hIndex") == Some(&KgValue::Integer(42)),
        "hIndex = {:?}",
        row.get("hIndex")
    );
    ensure!(
        row.get("author") == Some(&KgValue::Iri("https://semopenalex.org/author/A1".into())),
        "author = {:?}",
        row.get("author")
    );
    ensure!(
        row.get("institutionName") == Some(&KgValue::String("Example University".into())),
        "institutionName mistyped"
    );
    Ok("18/18 templates selected, 18 golden files match, typed row round-trip".into())
}

// ---- prompt structure ---------------------------------------------------

fn random_string(rng: &mut StdRng, alphabet: &[char], min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

fn prompt_structure() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2024);
    let letters: Vec<char> = ('a'..='z').chain('A'..='Z').collect();
    let query_chars: Vec<char> = letters
        .iter()
        .copied()
        .chain(['0', '7', ' ', ',', '?', '\u{e9}'])
        .collect();
    let body_chars: Vec<char> = ('a'..='z')
        .chain([' ', '.', '\u{3b1}', '\u{4e2d}'])
        .collect();
    let tasks = [
        TaskLabel::GeneralQA,
        TaskLabel::Simplification,
        TaskLabel::Summarization,
    ];
    let kinds = [
        EvidenceKind::TextChunk,
        EvidenceKind::PaperFullText,
        EvidenceKind::InlineText,
    ];
    let instructions = InstructionSet::default();
    for case in 0..200 {
        let task = *tasks.choose(&mut rng).unwrap();
        let query = format!(
            "{}{}?",
            letters.choose(&mut rng).unwrap(),
            random_string(&mut rng, &query_chars, 0, 60)
        );
        let m = rng.random_range(0..8usize);
        let items: Vec<_> = (0..m)
            .map(|i| {
                let title = rng
                    .random_bool(0.5)
                    .then(|| format!("Title {}", random_string(&mut rng, &letters, 2, 20)));
                let source = EvidenceSource {
                    title,
                    paper_id: Some(format!("p{}", i % 3)),
                    ..Default::default()
                };
                (
                    *kinds.choose(&mut rng).unwrap(),
                    format!(
                        "payload#{i}# {}",
                        random_string(&mut rng, &body_chars, 1, 80)
                    ),
                    source,
                )
            })
            .collect();
        let instruction = instructions.get(task).to_string();
        let p = compose_prompt(
            &query,
            EvidenceSet::new(task, items.clone()),
            &instructions,
            ComposeOptions::default(),
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        ensure!(
            p.text.starts_with(&instruction) && p.text.len() > instruction.len(),
            "case {case}: instruction not a strict prefix"
        );
        ensure!(
            p.text.ends_with(&query) && p.text.len() > query.len(),
            "case {case}: query not a strict suffix"
        );
        for (_, payload, _) in &items {
            let n = p.text.matches(payload.as_str()).count();
            ensure!(n == 1, "case {case}: payload appears {n} times");
        }
        let refs: Vec<u32> = p.evidence.items().iter().map(|i| i.ref_no).collect();
        ensure!(
            refs == (1..=m as u32).collect::<Vec<_>>(),
            "case {case}: references {refs:?}"
        );
        let mut pos = 0;
        for n in 1..=m {
            let at = p.text[pos..].find(&format!("[{n}] payload#{}#", n - 1));
            ensure!(at.is_some(), "case {case}: reference {n} out of order");
            pos += at.unwrap();
        }
    }
    Ok("200 randomized cases".into())
}

// ---- citation fuzz ------------------------------------------------------

/// Hand scanner for `[n]` and `[n, m, ...]` markers with 1 to 9 ASCII digits.
fn scan_markers(text: &str) -> Vec<u32> {
    let c: Vec<char> = text.chars().collect();
    let ws = |mut j: usize| {
        while j < c.len() && c[j].is_whitespace() {
            j += 1;
        }
        j
    };
    let number = |j: usize| {
        let mut e = j;
        while e < c.len() && c[e].is_ascii_digit() {
            e += 1;
        }
        (e > j && e - j <= 9).then(|| {
            (
                c[j..e].iter().collect::<String>().parse::<u32>().unwrap(),
                e,
            )
        })
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < c.len() {
        if c[i] == '[' {
            if let Some((n, mut j)) = number(ws(i + 1)) {
                let mut nums = vec![n];
                loop {
                    let k = ws(j);
                    match (c.get(k), number(ws(k + 1))) {
                        (Some(','), Some((n, e))) => {
                            nums.push(n);
                            j = e;
                        }
                        _ => break,
                    }
                }
                let k = ws(j);
                if c.get(k) == Some(&']') {
                    out.extend(nums);
                    i = k + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

fn citation_fuzz() -> Outcome {
    let atoms = [
        "[",
        "]",
        ",",
        " ",
        "\n",
        "0",
        "1",
        "2",
        "3",
        "7",
        "9",
        "12",
        "1234567890",
        "\u{663}",
        "x",
        "see",
        "[1]",
        "[2, 3]",
        "[ 4 ]",
        "[1][5]",
        "[10]",
        "[-1]",
        "[1.5]",
        "(6)",
        "\u{ff3b}1\u{ff3d}",
        "[99999999999]",
    ];
    let mut rng = StdRng::seed_from_u64(31337);
    let mut markers = 0usize;
    for case in 0..10_000 {
        let n = rng.random_range(0..40);
        let text: String = (0..n).map(|_| *atoms.choose(&mut rng).unwrap()).collect();
        let m = rng.random_range(0..12usize);
        let got = std::panic::catch_unwind(|| extract_citations(&text, m))
            .map_err(|_| format!("case {case}: extractor panicked on {text:?}"))?;
        ensure!(
            got.citations.iter().all(|&c| c >= 1 && c as usize <= m),
            "case {case}: {:?} outside 1..={m}",
            got.citations
        );
        let expected: BTreeSet<u32> = scan_markers(&text)
            .into_iter()
            .filter(|&c| c >= 1 && c as usize <= m)
            .collect();
        ensure!(
            got.citations == expected,
            "case {case}: {:?} vs scanner {expected:?} on {text:?}",
            got.citations
        );
        markers += expected.len();
    }
    Ok(format!(
        "10000 outputs, {markers} in-range citations, all agree with scanner"
    ))
}

// ---- metric oracles -----------------------------------------------------

fn metric_oracles() -> Outcome {
    let p = citation_prf(&CitationJudgment::new(["a", "b"], ["b", "c"]));
    ensure!(
        (p.precision, p.recall, p.f1) == (0.5, 0.5, 0.5),
        "citation_prf = {p:?}"
    );

    let r1 = rouge_n("the cat sat", "the dog sat", 1).f1;
    ensure!((r1 - 2.0 / 3.0).abs() <= 1e-9, "ROUGE-1 F1 = {r1}");

    let text = "The information was clear. ".repeat(30);
    let smog = smog_index(&[text.as_str()]).map_err(|e| e.to_string())?;
    ensure!((smog - 8.8418).abs() <= 1e-3, "SMOG = {smog}");

    use Verdict::*;
    let preds = [(Yes, Yes), (No, Yes), (No, No), (Maybe, Maybe)].map(|(p, g)| LabeledPrediction {
        predicted: Some(p),
        gold: g,
    });
    let macro_f1 = label_metrics(&preds).map_err(|e| e.to_string())?.macro_f1;
    ensure!((macro_f1 - 0.7778).abs() <= 1e-4, "macro-F1 = {macro_f1}");
    Ok(format!(
        "prf (0.5, 0.5, 0.5), rouge1 {r1:.10}, SMOG {smog:.4}, macro-F1 {macro_f1:.4}"
    ))
}

// ---- end to end ---------------------------------------------------------

fn eval_run(
    mode: &str,
    script: &str,
    corpus: Option<&Path>,
    out: &Path,
) -> Result<BTreeMap<String, Value>, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_scholarag"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("SCHOLARAG_")) {
        cmd.env_remove(k);
    }
    cmd.env("RUST_LOG", "error")
        .args([
            "--set",
            &format!(
                "llm.script={}",
                fixtures().join("bench").join(script).display()
            ),
        ])
        .args(["--set", "kg.enabled=false"]);
    if let Some(c) = corpus {
        cmd.args(["--set", &format!("corpus.path={}", c.display())]);
    }
    let dataset = fixtures().join("bench/pubmedqa5.jsonl");
    let o = cmd
        .args(["eval", "run", "--mode", mode, "--dataset"])
        .arg(&dataset)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        o.status.success(),
        "eval run --mode {mode} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report: Value = serde_json::from_str(&read(out)?).map_err(|e| e.to_string())?;
    serde_json::from_value(report["aggregate"].clone()).map_err(|e| e.to_string())
}

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus5 = fixtures().join("corpus5");
    let num = |agg: &BTreeMap<String, Value>, k: &str| {
        agg.get(k).and_then(Value::as_f64).unwrap_or(f64::NAN)
    };

    let orig = eval_run(
        "orig",
        "gold_script.jsonl",
        Some(&corpus5),
        &dir.path().join("orig.json"),
    )?;
    ensure!(
        num(&orig, "accuracy") == 1.0,
        "orig accuracy {}",
        num(&orig, "accuracy")
    );

    let zero = eval_run(
        "zero",
        "one_error_script.jsonl",
        Some(&corpus5),
        &dir.path().join("zero.json"),
    )?;
    ensure!(
        (num(&zero, "accuracy") - 0.8).abs() < 1e-12,
        "zero accuracy {}",
        num(&zero, "accuracy")
    );

    let empty = eval_run(
        "retrieval",
        "gold_script.jsonl",
        None,
        &dir.path().join("retrieval.json"),
    )?;
    ensure!(
        num(&empty, "examples") == 5.0,
        "retrieval ran {} examples",
        num(&empty, "examples")
    );
    ensure!(
        num(&empty, "errors") == 0.0,
        "retrieval had {} errors",
        num(&empty, "errors")
    );
    ensure!(
        num(&empty, "ungrounded") == 5.0,
        "{} of 5 ungrounded",
        num(&empty, "ungrounded")
    );

    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "orig 1.0, zero 0.8, empty-index retrieval 5/5 ungrounded, {} ms",
        elapsed.as_millis()
    ))
}

// ---- persistence --------------------------------------------------------

fn persistence(rt: &Runtime) -> Outcome {
    let (index, _) = random_index(3, 500, 384);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("index.bin");
    index.save(&path).map_err(|e| e.to_string())?;
    let loaded = VectorIndex::load(&path).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..50 {
        let q = EmbeddingVector::new(random_vector(&mut rng, 384)).unwrap();
        for k in [1, 8, 50] {
            ensure!(
                loaded.search(&q, k).ok() == index.search(&q, k).ok(),
                "loaded index answers differently at k={k}"
            );
        }
    }

    let embedder = HashEmbedder::new(384);
    let mut images = Vec::new();
    for _ in 0..2 {
        let corpus = load_corpus(&fixtures().join("corpus20"), IngestMode::Strict)
            .map_err(|e| e.to_string())?;
        let index = rt
            .block_on(build_index(&corpus, &embedder, 800))
            .map_err(|e| e.to_string())?;
        let out = dir.path().join(format!("reingest{}.bin", images.len()));
        index.save(&out).map_err(|e| e.to_string())?;
        images.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure!(images[0] == images[1], "re-ingest produced different bytes");
    Ok(format!(
        "150 searches preserved, re-ingest identical ({} bytes)",
        images[0].len()
    ))
}

fn main() -> ExitCode {
    let rt = Runtime::new().expect("tokio runtime");
    let criteria: Vec<Criterion> = vec![
        ("vector index exactness", Box::new(vindex_exactness)),
        ("chunker contract", Box::new(chunker_contract)),
        ("router fixture suite", Box::new(|| router_fixture(&rt))),
        ("KG template coverage", Box::new(|| kg_templates(&rt))),
        ("prompt structure property", Box::new(prompt_structure)),
        ("citation soundness fuzz", Box::new(citation_fuzz)),
        ("metric oracles", Box::new(metric_oracles)),
        ("end-to-end benchmark modes", Box::new(end_to_end)),
        ("persistence round trips", Box::new(|| persistence(&rt))),
    ];
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("[FAIL] {name}: {reason}");
            }
        }
    }
    std::panic::set_hook(default_hook);
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
