use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use qgen_core::expansion::{build_expanded_query, ExpansionConfig, ExpansionMode};
use qgen_core::generation::{
    cache_load, cache_store, generate_for_topic, stub_generate, CacheBackend, CorpusModel,
    GeneratedSet, GenerationParams, GeneratorBackend, HttpBackend, NgramOrder, StubBackend,
};
use qgen_core::ranking::{score_all, ScoringModel};
use qgen_core::{Document, Error, InvertedIndex, TokenizationConfig, Tokenizer, Topic};

fn tok() -> Tokenizer {
    Tokenizer::new(TokenizationConfig::default()).unwrap()
}

#[test]
fn unigram_stub_matches_fitted_frequencies() {
    let model = CorpusModel::fit([tok().tokenize("oil oil price")], NgramOrder::Unigram).unwrap();
    let params = GenerationParams {
        n_texts: 5000,
        length: 3,
        temperature: 1.0,
        top_p: 1.0,
        top_k: 0,
        rng_seed: Some(99),
    };
    let texts = stub_generate(&["oil".to_string()], &params, &model, false).unwrap();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in &texts {
        let toks = tok().tokenize(text);
        assert_eq!(toks.len(), 3);
        assert_eq!(toks[0], "oil");
        for t in &toks[1..] {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    let total = 10_000.0;
    assert_eq!(counts.values().sum::<usize>(), 10_000);
    assert!((counts["oil"] as f64 / total - 2.0 / 3.0).abs() < 0.02, "{counts:?}");
    assert!((counts["price"] as f64 / total - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
}

#[test]
fn default_parameters_give_a_hundred_bounded_texts() {
    let model = CorpusModel::fit([tok().tokenize("oil price rises as crude stocks fall and oil demand grows")], NgramOrder::Bigram).unwrap();
    let backend = StubBackend::new(model, tok());
    let params = GenerationParams {
        rng_seed: Some(7),
        ..Default::default()
    };
    let set = generate_for_topic(&backend, &Topic::new("701", "U.S. oil industry history"), &params).unwrap();
    assert_eq!(set.texts.len(), 100);
    assert!(set.texts.iter().all(|t| tok().tokenize(t).len() <= 512));
    assert_eq!(set.seed_text, "U.S. oil industry history");
}

fn fixture() -> (InvertedIndex, Vec<Topic>, StubBackend) {
    let texts = [
        ("d1", "oil price rises as crude stocks fall"),
        ("d2", "gas station coffee prices"),
        ("d3", "crude oil export tariff"),
        ("d4", "coffee export growth"),
    ];
    let docs: Vec<Document> = texts.iter().map(|(id, t)| Document::new(*id, *t, &tok())).collect();
    let index = InvertedIndex::build(&docs, &TokenizationConfig::default()).unwrap();
    let model = CorpusModel::fit(docs.iter().map(|d| d.tokens.clone()), NgramOrder::Bigram).unwrap();
    let topics = vec![Topic::new("1", "oil price"), Topic::new("2", "coffee export")];
    (index, topics, StubBackend::new(model, tok()))
}

fn pipeline(backend: &dyn GeneratorBackend, index: &InvertedIndex, topics: &[Topic], params: &GenerationParams) -> Vec<(GeneratedSet, Vec<String>)> {
    topics
        .iter()
        .map(|topic| {
            let set = generate_for_topic(backend, topic, params).unwrap();
            let q = build_expanded_query(topic, &set, &ExpansionConfig::default(), &tok()).unwrap();
            let hits = score_all(index, &q, &ScoringModel::default(), 1000);
            (set, hits.into_iter().map(|h| h.doc_id).collect())
        })
        .collect()
}

#[test]
fn stub_and_cache_backends_are_interchangeable() {
    let (index, topics, stub) = fixture();
    let params = GenerationParams {
        n_texts: 12,
        length: 20,
        rng_seed: Some(3),
        ..Default::default()
    };
    let live = pipeline(&stub, &index, &topics, &params);
    let dir = tempfile::tempdir().unwrap();
    for (set, _) in &live {
        cache_store(set, dir.path()).unwrap();
    }
    let replayed = pipeline(&CacheBackend::new(dir.path()), &index, &topics, &params);
    for ((a, ra), (b, rb)) in live.iter().zip(&replayed) {
        assert_eq!(a.texts, b.texts);
        assert_eq!(ra, rb);
        assert!(!ra.is_empty());
    }
}

#[test]
fn full_expansion_equals_concatenated_raw_query() {
    let (_, topics, stub) = fixture();
    let params = GenerationParams {
        n_texts: 7,
        length: 15,
        rng_seed: Some(5),
        ..Default::default()
    };
    for topic in &topics {
        let set = generate_for_topic(&stub, topic, &params).unwrap();
        let full = build_expanded_query(topic, &set, &ExpansionConfig::default(), &tok()).unwrap();
        let raw = qgen_core::WeightedQuery::from_tokens(tok().tokenize(&set.texts.join(" ")));
        assert_eq!(full.terms(), raw.terms());
        let k = full.len();
        let top = build_expanded_query(topic, &set, &ExpansionConfig::new(ExpansionMode::TopKFrequency { k }), &tok()).unwrap();
        assert_eq!(top.terms(), full.terms());
    }
}

#[test]
fn cache_directory_of_one_hundred_files() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("701");
    std::fs::create_dir(&q).unwrap();
    let params = GenerationParams::default();
    let meta = serde_json::json!({
        "query_id": "701",
        "seed_text": "U.S. oil industry history",
        "backend_tag": "external",
        "params": params,
        "n_stored": 100,
    });
    std::fs::write(q.join("meta.json"), meta.to_string()).unwrap();
    for i in 0..100 {
        std::fs::write(q.join(format!("{i:03}.txt")), format!("text number {i}")).unwrap();
    }
    let loaded = cache_load("701", dir.path(), Some(&params)).unwrap();
    assert_eq!(loaded.set.texts.len(), 100);
    assert_eq!(loaded.set.texts[42], "text number 42");
    assert!(loaded.mismatches.is_empty());
    assert!(matches!(cache_load("702", dir.path(), None), Err(Error::NotFound(_))));
}

/// Minimal HTTP server answering each connection with the next scripted
/// `(status, body)` and recording request bodies.
struct Mock {
    endpoint: String,
    bodies: Arc<Mutex<Vec<String>>>,
}

fn mock(script: Vec<(u16, String)>) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&bodies);
    thread::spawn(move || {
        for (status, reply) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            seen.lock().unwrap().push(String::from_utf8(body).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    Mock { endpoint, bodies }
}

fn client(endpoint: &str) -> HttpBackend {
    HttpBackend::new(endpoint).with_backoff(Duration::from_millis(5))
}

fn params(n: usize) -> GenerationParams {
    GenerationParams {
        n_texts: n,
        rng_seed: Some(1),
        ..Default::default()
    }
}

fn ok_body(texts: &[&str]) -> String {
    serde_json::json!({ "texts": texts, "model_tag": "gpt2", "elapsed_ms": 5 }).to_string()
}

#[test]
fn http_texts_pass_through_untouched() {
    let texts = ["  Oil, PRICE!\n", "ünïcode  text"];
    let m = mock(vec![(200, ok_body(&texts))]);
    let got = client(&m.endpoint).generate("1", "oil", &params(2)).unwrap();
    assert_eq!(got, texts);
    let sent: serde_json::Value = serde_json::from_str(&m.bodies.lock().unwrap()[0]).unwrap();
    let keys: Vec<&str> = sent.as_object().unwrap().keys().map(String::as_str).collect();
    let mut keys = keys;
    keys.sort_unstable();
    assert_eq!(keys, ["length", "n", "rng_seed", "seed", "temperature", "top_k", "top_p"]);
    assert_eq!(sent["seed"], "oil");
    assert_eq!(sent["n"], 2);
}

#[test]
fn http_gives_up_after_three_server_errors() {
    let m = mock(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into()), (200, ok_body(&["late"]))]);
    let err = client(&m.endpoint).generate("1", "oil", &params(1)).unwrap_err();
    assert!(err.is_backend(), "{err}");
    assert_eq!(m.bodies.lock().unwrap().len(), 3);
}

#[test]
fn http_recovers_from_transient_overload() {
    let m = mock(vec![(503, "{}".into()), (429, "{}".into()), (200, ok_body(&["fine"]))]);
    assert_eq!(client(&m.endpoint).generate("1", "oil", &params(1)).unwrap(), ["fine"]);
}

#[test]
fn http_client_error_is_not_retried() {
    let m = mock(vec![(400, r#"{"detail":"bad"}"#.into()), (200, ok_body(&["x"]))]);
    assert!(client(&m.endpoint).generate("1", "oil", &params(1)).is_err());
    assert_eq!(m.bodies.lock().unwrap().len(), 1);
}

#[test]
fn http_count_mismatch_and_bad_schema_are_errors() {
    let m = mock(vec![(200, ok_body(&["only one"]))]);
    match client(&m.endpoint).generate("1", "oil", &params(2)) {
        Err(Error::Backend { produced, .. }) => assert_eq!(produced, 1),
        other => panic!("unexpected {other:?}"),
    }
    let m = mock(vec![(200, r#"{"texts":"nope"}"#.into())]);
    assert!(client(&m.endpoint).generate("1", "oil", &params(1)).unwrap_err().is_backend());
}

#[test]
fn http_unreachable_endpoint_is_a_backend_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = client(&format!("http://127.0.0.1:{port}")).generate("1", "oil", &params(1)).unwrap_err();
    assert!(err.is_backend());
}
