use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Duration;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use xmap_core::corpus::{write_corpus_jsonl, SplitSpec};
use xmap_core::embedder::EmbedderSpec;
use xmap_core::embedding::{read_embeddings, write_embeddings};
use xmap_core::knn::{build_index, load_index, save_index, sq_l2, Metric};
use xmap_core::mapper::{load_model, save_model};
use xmap_core::synthetic::{planted_task, PlantedTask};
use xmap_service::{router, AppState, Engine};

fn xmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmap"))
        .args(args)
        .env("XMAP_LOG", "error")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_string()
    }
}

/// Noiseless planted corpus with the planted map saved as the model, so
/// the model retrieves every pair exactly.
fn oracle_fixture(count: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let (corpus, net) = planted_task(&PlantedTask {
        count,
        input_dim: 6,
        output_dim: 4,
        planted_hidden: vec![8],
        noise_sigma: 0.0,
        seed: 11,
    })
    .unwrap();
    write_corpus_jsonl(corpus.entries(), root.join("corpus.jsonl")).unwrap();
    write_embeddings(corpus.nl_vectors(), root.join("nl.emb")).unwrap();
    write_embeddings(corpus.code_vectors(), root.join("code.emb")).unwrap();
    save_model(&net, root.join("model.map1")).unwrap();
    let ids: Vec<String> = corpus.ids().map(String::from).collect();
    let index = build_index(corpus.code_vectors().clone(), ids.clone(), Metric::SquaredL2).unwrap();
    save_index(&index, root.join("code.idx1")).unwrap();
    let mut sorted = ids.clone();
    sorted.sort();
    let split = SplitSpec {
        train_ids: sorted[..count / 2].to_vec(),
        valid_ids: sorted[count / 2..count * 3 / 4].to_vec(),
        test_ids: sorted[count * 3 / 4..].to_vec(),
        seed: 0,
    };
    split.write(root.join("split.json")).unwrap();
    Fixture { _dir: dir, root }
}

#[test]
fn help_lists_defaults() {
    let o = xmap(&["train", "--help"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for needle in ["--lr", "[default: 0.00001]", "--batch", "[default: 16]", "[default: 10]", "[default: 500]"] {
        assert!(text.contains(needle), "missing {needle}:\n{text}");
    }
    let eval = stdout(&xmap(&["eval", "--help"]));
    assert!(eval.contains("[default: 999]"));
    let pairs = stdout(&xmap(&["sample-pairs", "--help"]));
    assert!(pairs.contains("[default: 150]"));
    assert_eq!(code(&xmap(&["--version"])), 0);
    assert_eq!(code(&xmap(&["frobnicate"])), 1);
}

#[test]
fn embed_writes_one_row_per_line() {
    let f = oracle_fixture(10);
    let o = xmap(&["embed", "--corpus", &f.path("corpus.jsonl"), "--field", "doc", "--dim", "64", "--out", &f.path("doc.emb")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_embeddings(f.path("doc.emb")).unwrap();
    assert_eq!((m.count(), m.dim()), (10, 64));

    let o = xmap(&["embed", "--corpus", &f.path("corpus.jsonl"), "--field", "doc", "--dim", "64"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--out"));

    std::fs::write(f.path("bad.jsonl"), "{\"id\": \"a\", \"doc\": \"x\"}\nnot json\n").unwrap();
    let o = xmap(&["embed", "--corpus", &f.path("bad.jsonl"), "--field", "doc", "--dim", "8", "--out", &f.path("x.emb")]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!Path::new(&f.path("x.emb")).exists());
}

/// Answers every request with 384-dim vectors.
fn wrong_dim_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let req: Value = serde_json::from_slice(&body).unwrap();
            let n = req["texts"].as_array().unwrap().len();
            let payload = json!({"dim": 384, "vectors": vec![vec![0.1f32; 384]; n]}).to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    format!("http://{addr}")
}

#[test]
fn embed_endpoint_dim_mismatch_is_runtime_failure() {
    let f = oracle_fixture(10);
    let url = wrong_dim_server();
    let o = xmap(&[
        "embed", "--corpus", &f.path("corpus.jsonl"), "--field", "code", "--dim", "768", "--endpoint", &url,
        "--model", "codebert", "--out", &f.path("code768.emb"),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("batch 0") && err.contains("768") && err.contains("384"), "{err}");
}

#[test]
fn split_sizes_and_validation() {
    let f = oracle_fixture(10);
    let o = xmap(&["split", "--corpus", &f.path("corpus.jsonl"), "--seed", "7", "--out", &f.path("s.json")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = SplitSpec::read(f.path("s.json")).unwrap();
    assert_eq!((s.train_ids.len(), s.valid_ids.len(), s.test_ids.len()), (8, 1, 1));
    let o = xmap(&["split", "--corpus", &f.path("corpus.jsonl"), "--train", "0.7", "--out", &f.path("s2.json")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_flags_and_dims() {
    let f = oracle_fixture(40);
    let common = |extra: &[&str]| {
        let mut args = vec![
            "train".to_string(),
            "--corpus".into(), f.path("corpus.jsonl"),
            "--nl-emb".into(), f.path("nl.emb"),
            "--code-emb".into(), f.path("code.emb"),
            "--split".into(), f.path("split.json"),
            "--out-model".into(), f.path("trained.map1"),
            "--hidden".into(), "8".into(),
            "--lr".into(), "1e-3".into(),
            "--max-epochs".into(), "3".into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        args
    };
    let run = |extra: &[&str]| {
        let args = common(extra);
        xmap(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let o = run(&["--batch", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--batch"), "{}", stderr(&o));
    let o = run(&["--batch", "4", "--input-dim", "1024"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = run(&["--batch", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (net, cfg) = load_model(f.path("trained.map1")).unwrap();
    assert_eq!((cfg.input_dim, cfg.hidden_dims.clone(), cfg.output_dim), (6, vec![8], 4));
    assert_eq!(net.param_count(), 6 * 8 + 8 + 8 * 4 + 4);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(f.path("trained.map1.report.json")).unwrap()).unwrap();
    assert_eq!(report["epochs_run"], 3);
}

#[test]
fn index_matches_embeddings() {
    let f = oracle_fixture(20);
    let o = xmap(&["index", "--corpus", &f.path("corpus.jsonl"), "--code-emb", &f.path("code.emb"), "--metric", "cosine", "--out", &f.path("c.idx1")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let idx = load_index(f.path("c.idx1")).unwrap();
    assert_eq!((idx.len(), idx.dim(), idx.metric()), (20, 4, Metric::Cosine));
    let o = xmap(&["index", "--corpus", &f.path("corpus.jsonl"), "--code-emb", &f.path("nl.emb"), "--metric", "manhattan", "--out", &f.path("d.idx1")]);
    assert_eq!(code(&o), 1);
}

fn search_args<'a>(paths: &'a [String; 3], extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["search", "--model", &paths[0], "--index", &paths[1], "--corpus", &paths[2]];
    args.extend_from_slice(extra);
    args
}

#[test]
fn search_stored_vector_and_errors() {
    let f = oracle_fixture(30);
    let paths = [f.path("model.map1"), f.path("code.idx1"), f.path("corpus.jsonl")];
    let nl = read_embeddings(f.path("nl.emb")).unwrap();
    let v: Vec<String> = nl.row(12).iter().map(|x| x.to_string()).collect();
    let v = v.join(",");
    let o = xmap(&search_args(&paths, &["--query-vec", &v, "-n", "3"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let body: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(body["hits"][0]["id"], "s000012");
    assert_eq!(body["hits"][0]["distance"], 0.0);
    assert_eq!(body["hits"].as_array().unwrap().len(), 3);

    let o = xmap(&search_args(&paths, &["--query-vec", &v, "-n", "0"]));
    assert_eq!(code(&o), 1);
    let o = xmap(&search_args(&paths, &["--query-vec", "1,2,3", "-n", "3"]));
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = xmap(&search_args(&paths, &["--query-text", "merge two sorted lists"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let body: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(body["hits"].as_array().unwrap().len(), 10);
    let o = xmap(&search_args(&paths, &["--query-text", "x", "--query-vec", &v]));
    assert_eq!(code(&o), 1);
}

#[tokio::test]
async fn search_output_equals_service_response() {
    let f = oracle_fixture(30);
    let paths = [f.path("model.map1"), f.path("code.idx1"), f.path("corpus.jsonl")];
    let engine = Engine::load(&paths[0], &paths[1], &paths[2], EmbedderSpec::hash(6, 0)).unwrap();
    let app = router(AppState::new(engine, 100, Duration::from_secs(10)));
    let nl = read_embeddings(f.path("nl.emb")).unwrap();
    for (row, n) in [(0usize, 5usize), (7, 30), (29, 1)] {
        let vector = nl.row(row).to_vec();
        let req = Request::post("/search")
            .header("content-type", "application/json")
            .body(Body::from(json!({"vector": vector, "n": n}).to_string()))
            .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let service = resp.into_body().collect().await.unwrap().to_bytes();

        let arg = serde_json::to_string(&vector).unwrap();
        let n_arg = n.to_string();
        let o = xmap(&search_args(&paths, &["--query-vec", &arg, "-n", &n_arg]));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_eq!(stdout(&o).trim_end().as_bytes(), &service[..]);
    }
    let text_req = Request::post("/search")
        .header("content-type", "application/json")
        .body(Body::from(json!({"query": "open a socket", "n": 4}).to_string()))
        .unwrap();
    let service = app.oneshot(text_req).await.unwrap().into_body().collect().await.unwrap().to_bytes();
    let o = xmap(&search_args(&paths, &["--query-text", "open a socket", "-n", "4"]));
    assert_eq!(stdout(&o).trim_end().as_bytes(), &service[..]);
}

#[test]
fn eval_oracle_and_pool_errors() {
    let f = oracle_fixture(80);
    let base = |k: &str| {
        vec![
            "eval".to_string(), "--model".into(), f.path("model.map1"), "--corpus".into(), f.path("corpus.jsonl"),
            "--nl-emb".into(), f.path("nl.emb"), "--code-emb".into(), f.path("code.emb"), "--split".into(),
            f.path("split.json"), "--distractors".into(), k.to_string(),
        ]
    };
    let run = |args: Vec<String>| xmap(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let o = run(base("19"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("100.000%"), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["mrr"], 1.0);
    assert_eq!(report["per_query"].as_array().unwrap().len(), 20);

    let mut with_baseline = base("19");
    with_baseline.push("--baseline".into());
    let o = run(with_baseline);
    assert!(stderr(&o).contains("random baseline: 17.988%"), "{}", stderr(&o));

    let o = run(base("20"));
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn baseline_matches_harmonic_formula() {
    let o = xmap(&["baseline"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["candidates"], 1000);
    assert!((v["mrr"].as_f64().unwrap() - 0.007485470860550345).abs() < 1e-15);
    assert!(stderr(&o).contains("0.748%"));
}

#[test]
fn correlate_and_sample_pairs() {
    let f = oracle_fixture(40);
    let emb = f.path("code.emb");
    let corpus = f.path("corpus.jsonl");
    let o = xmap(&["sample-pairs", "--emb", &emb, "--corpus", &corpus, "--out", &f.path("pairs.csv")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pairs = std::fs::read_to_string(f.path("pairs.csv")).unwrap();
    let rows: Vec<&str> = pairs.lines().collect();
    assert_eq!(rows[0], "id_a,id_b,distance");
    assert!(rows.len() > 3 && rows.len() <= 41);

    // Scores equal to negated L2 distances correlate perfectly negatively.
    let m = read_embeddings(&emb).unwrap();
    let mut csv = String::from("id_a,id_b,score\n");
    for (a, b) in [(0, 1), (2, 9), (3, 4), (5, 30), (6, 7)] {
        let d = sq_l2(m.row(a), m.row(b)).sqrt();
        csv.push_str(&format!("s{a:06},s{b:06},{}\n", -d));
    }
    std::fs::write(f.path("scores.csv"), &csv).unwrap();
    let o = xmap(&["correlate", "--scores", &f.path("scores.csv"), "--emb", &emb, "--corpus", &corpus]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((report["r"].as_f64().unwrap() + 1.0).abs() < 1e-9);
    assert_eq!(report["n"], 5);

    let ids: String = (0..40).map(|i| format!("s{i:06}\n")).collect();
    std::fs::write(f.path("ids.txt"), ids).unwrap();
    std::fs::write(f.path("two.csv"), "id_a,id_b,score\ns000000,s000001,1\ns000002,s000003,2\n").unwrap();
    let o = xmap(&["correlate", "--scores", &f.path("two.csv"), "--emb", &emb, "--ids", &f.path("ids.txt")]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    std::fs::write(f.path("unknown.csv"), "id_a,id_b,score\ns000000,zzz,1\n").unwrap();
    let o = xmap(&["correlate", "--scores", &f.path("unknown.csv"), "--emb", &emb, "--ids", &f.path("ids.txt")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("zzz"));
    let o = xmap(&["correlate", "--scores", &f.path("two.csv"), "--emb", &emb]);
    assert_eq!(code(&o), 1);
}

#[test]
fn serve_fails_fast_on_missing_index() {
    let f = oracle_fixture(10);
    let o = xmap(&[
        "serve", "--bind", "127.0.0.1:0", "--model", &f.path("model.map1"), "--index", &f.path("missing.idx1"),
        "--corpus", &f.path("corpus.jsonl"),
    ]);
    assert_ne!(code(&o), 0);
}
