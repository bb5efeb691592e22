use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use d2qmm_core::corpus_io::{format_run, load_corpus, load_topics, CorpusFormat};
use d2qmm_core::pipeline::{index_expanded, retrieve, unfiltered_expansion, RetrievalSettings};
use d2qmm_core::{mock_generator, MockGeneratorConfig};
use serde_json::Value;

fn d2qmm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d2qmm"))
        .current_dir(dir)
        .env_remove("D2QMM_CONFIG")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = d2qmm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_record(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).expect("last stderr line is JSON")
}

/// Small fixture written by `demo-fixture`.
fn fixture() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["demo-fixture", "--out", "fx", "--docs", "200", "--topic-count", "40"],
    );
    let conf = dir.path().join("fx/d2qmm.conf");
    (dir, conf)
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn unfiltered_chain_matches_in_process_expansion() {
    let (dir, conf) = fixture();
    let d = dir.path();
    let conf = conf.to_str().unwrap();
    ok(d, &["filter", "--config", conf, "--p", "1", "--out", "e.jsonl"]);
    ok(d, &["index", "--config", conf, "--expanded", "e.jsonl", "--out", "idx"]);
    ok(d, &["search", "--config", conf, "--index", "idx", "--out", "run.txt"]);

    let corpus = load_corpus(&d.join("fx/corpus.tsv"), CorpusFormat::Tsv).unwrap();
    let topics = load_topics(&d.join("fx/topics.tsv")).unwrap();
    let mock: MockGeneratorConfig = serde_json::from_str(&read(d.join("fx/mock.json"))).unwrap();
    let generator = mock_generator(mock).unwrap();
    let settings = RetrievalSettings::default();
    let index = index_expanded(&unfiltered_expansion(&corpus, &generator, 8), &settings).unwrap();
    let expected = format_run(&retrieve(&index, &topics, settings.k), "d2qmm");
    assert_eq!(read(d.join("run.txt")), expected);
}

#[test]
fn filtered_chain_evaluates_and_compares() {
    let (dir, conf) = fixture();
    let d = dir.path();
    let conf = conf.to_str().unwrap();
    ok(d, &["score", "--config", conf, "--out", "s.jsonl"]);
    ok(d, &["filter", "--config", conf, "--scores", "s.jsonl", "--p", "0.5", "--out", "e.jsonl"]);
    ok(d, &["index", "--config", conf, "--expanded", "e.jsonl", "--out", "idx"]);
    ok(d, &["search", "--config", conf, "--index", "idx", "--out", "run.txt"]);
    ok(d, &["index", "--config", conf, "--out", "base"]);
    ok(d, &["search", "--config", conf, "--index", "base", "--out", "base.txt"]);
    ok(d, &["evaluate", "--config", conf, "--run", "run.txt", "--baseline", "base.txt", "--out", "ev.json"]);

    let report: Value = serde_json::from_str(&read(d.join("ev.json"))).unwrap();
    assert_eq!(report["judged_queries"], 40);
    let rr = report["rr_at_10"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rr));
    assert!(report["baseline"]["paired_t_test_rr_at_10"]["p_value"].is_number());

    let provenance: Value = serde_json::from_str(&read(d.join("run.txt.provenance.json"))).unwrap();
    assert_eq!(provenance["command"], "search");
    assert!(provenance["config_hash"].is_string());
    assert!(provenance["tokenizer_hash"].is_string());
    let filter: Value = serde_json::from_str(&read(d.join("e.jsonl.provenance.json"))).unwrap();
    assert_eq!(filter["scored_pairs"], 200 * 8);
}

#[test]
fn evaluate_refuses_mixed_tokenizers_unless_forced() {
    let (dir, conf) = fixture();
    let d = dir.path();
    let conf = conf.to_str().unwrap();
    ok(d, &["index", "--config", conf, "--out", "plain"]);
    ok(d, &["index", "--config", conf, "--stem", "on", "--out", "stemmed"]);
    ok(d, &["search", "--config", conf, "--index", "plain", "--out", "a.txt"]);
    ok(d, &["search", "--config", conf, "--index", "stemmed", "--out", "b.txt"]);

    let args = ["evaluate", "--config", conf, "--run", "a.txt", "--baseline", "b.txt"];
    let refused = d2qmm(d, &args);
    assert!(!refused.status.success());
    assert_eq!(error_record(&refused)["error"]["kind"], "tokenizer_mismatch");

    let mut forced = args.to_vec();
    forced.push("--force");
    ok(d, &forced);

    // Querying an index with a different explicit tokenizer is refused too.
    let out = d2qmm(
        d,
        &["search", "--config", conf, "--index", "stemmed", "--stem", "off", "--out", "c.txt"],
    );
    assert_eq!(error_record(&out)["error"]["kind"], "tokenizer_mismatch");
}

#[test]
fn sweep_emits_one_row_per_cell() {
    let (dir, conf) = fixture();
    let d = dir.path();
    let conf = conf.to_str().unwrap();
    ok(
        d,
        &["sweep", "--config", conf, "--n-values", "4,8", "--p-values", "0,0.3,0.5,1", "--out", "sw"],
    );
    let csv = read(d.join("sw/sweep.csv"));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("n,p,t,indexed_tokens,index_bytes,rr_at_10,ndcg_at_10,mrt_ms")
    );
    assert_eq!(lines.count(), 8);
    assert_eq!(read(d.join("sw/plot.tsv")).lines().count(), 8);
    ok(d, &["budget", "--input", "sw/budget.csv", "--out", "budget.json"]);
    let report: Value = serde_json::from_str(&read(d.join("budget.json"))).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 8);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let (dir, conf) = fixture();
    let d = dir.path();
    let conf = conf.to_str().unwrap();
    for threads in ["1", "4"] {
        let tag = format!("t{threads}");
        ok(d, &["score", "--config", conf, "--threads", threads, "--out", &format!("{tag}.s")]);
        ok(
            d,
            &["filter", "--config", conf, "--threads", threads, "--scores", &format!("{tag}.s"),
              "--p", "0.3", "--out", &format!("{tag}.e")],
        );
        ok(
            d,
            &["index", "--config", conf, "--threads", threads, "--expanded", &format!("{tag}.e"),
              "--out", &format!("{tag}.idx")],
        );
        ok(
            d,
            &["search", "--config", conf, "--threads", threads, "--index", &format!("{tag}.idx"),
              "--out", &format!("{tag}.run")],
        );
    }
    for ext in ["s", "e", "run"] {
        assert_eq!(read(d.join(format!("t1.{ext}"))), read(d.join(format!("t4.{ext}"))), "{ext}");
    }
    for section in ["header.bin", "lexicon.bin", "postings.bin", "blocks.bin", "doctable.bin"] {
        let a = std::fs::read(d.join("t1.idx").join(section)).unwrap();
        let b = std::fs::read(d.join("t4.idx").join(section)).unwrap();
        assert_eq!(a, b, "{section}");
    }
}

#[test]
fn flags_override_config_file() {
    let (dir, conf) = fixture();
    let d = dir.path();
    std::fs::write(d.join("fx/p0.conf"), format!("{}p = 0\n", read(&conf))).unwrap();
    // p = 0 needs no scores.
    ok(d, &["filter", "--config", "fx/p0.conf", "--out", "zero.jsonl"]);
    assert!(read(d.join("zero.jsonl")).contains("\"queries_retained\":[]"));
    let out = d2qmm(d, &["filter", "--config", "fx/p0.conf", "--p", "0.5", "--out", "half.jsonl"]);
    assert!(!out.status.success(), "p = 0.5 without scores must fail");
    let message = error_record(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(message.contains("scores"), "{message}");
}

#[test]
fn config_from_environment() {
    let (dir, conf) = fixture();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_d2qmm"))
        .current_dir(d)
        .env("D2QMM_CONFIG", &conf)
        .env("RUST_LOG", "warn")
        .args(["filter", "--p", "1", "--out", "e.jsonl"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(d.join("e.jsonl")).lines().count(), 200);
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let missing = d2qmm(d, &["index", "--corpus", "nope.tsv", "--out", "idx"]);
    assert_eq!(missing.status.code(), Some(1));
    let record = error_record(&missing);
    assert_eq!(record["error"]["kind"], "io");
    assert_eq!(record["error"]["command"], "index");

    let unknown = d2qmm(d, &["index", "--colour", "blue"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert_eq!(error_record(&unknown)["error"]["kind"], "usage");

    std::fs::write(d.join("c.tsv"), "d1\tsome text\nd1\tagain\n").unwrap();
    let dup = d2qmm(d, &["index", "--corpus", "c.tsv", "--out", "idx"]);
    assert_eq!(error_record(&dup)["error"]["kind"], "duplicate");

    std::fs::write(d.join("good.tsv"), "d1\tsome text\nd2\tmore text\n").unwrap();
    let negative = d2qmm(d, &["expand", "--corpus", "good.tsv", "--n=-1", "--out", "q.jsonl"]);
    assert_eq!(negative.status.code(), Some(1));
    assert!(error_record(&negative)["error"]["message"].as_str().unwrap().contains("`n`"));

    let bad_p = d2qmm(
        d,
        &["filter", "--corpus", "good.tsv", "--n", "2", "--p", "1.5", "--out", "x"],
    );
    assert_eq!(error_record(&bad_p)["error"]["kind"], "invalid_config");
}

#[test]
fn expand_reproduces_fixture_queries() {
    let (dir, conf) = fixture();
    let d = dir.path();
    let conf = conf.to_str().unwrap();
    // Without a query file the mock config drives generation.
    let text = read(conf).replace("queries = queries.jsonl\n", "");
    std::fs::write(d.join("fx/mock-only.conf"), text).unwrap();
    ok(d, &["expand", "--config", "fx/mock-only.conf", "--out", "q.jsonl"]);
    assert_eq!(read(d.join("q.jsonl")), read(d.join("fx/queries.jsonl")));
    assert!(d.join("q.jsonl.timing.json").exists());
}
