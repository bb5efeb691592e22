//! Acceptance suite. Every criterion runs inside one test so the report is
//! printed as a single block; run with `--nocapture` to see it.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use d2qmm_core::corpus_io::format_run;
use d2qmm_core::eval::{
    evaluate_run, ndcg_at_10, rr_at_10, sweep, sweep_csv, EvalOptions, SweepConfig,
};
use d2qmm_core::expansion::{file_generator, generate_all, mock_generator};
use d2qmm_core::filtering::{compute_threshold, ThresholdSelector};
use d2qmm_core::fixture::{DemoFixture, FixtureConfig};
use d2qmm_core::index::Hit;
use d2qmm_core::pipeline::{
    baseline_index, index_expanded, retrieve, run_pipeline, unfiltered_expansion,
    RetrievalSettings,
};
use d2qmm_core::{
    build_index, external_scorer, filter_expand, lexical_scorer, Bm25Params, Corpus, Document,
    FilterConfig, GeneratedQuerySet, InvertedIndex, Qrels, QueryMap, Run, ScoredPair,
    TokenizerConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    check(elapsed.as_secs() < limit_secs, || {
        format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn fixture() -> DemoFixture {
    DemoFixture::generate(FixtureConfig::default())
}

fn identity_chain() -> Outcome {
    let start = Instant::now();
    let f = fixture();
    let n = f.config.n;
    let generator = mock_generator(f.mock.clone()).map_err(|e| e.to_string())?;
    let settings = RetrievalSettings::default();
    let scorer = lexical_scorer(&f.corpus, &settings.tokenizer, settings.params)
        .map_err(|e| e.to_string())?;
    let run_at = |p: f64| -> Result<String, String> {
        let config = FilterConfig::proportion(p, n).map_err(|e| e.to_string())?;
        let out = run_pipeline(&f.corpus, &generator, &scorer, &config, &settings, &f.topics)
            .map_err(|e| e.to_string())?;
        Ok(format_run(&out.run, "d2qmm"))
    };
    let baseline = baseline_index(&f.corpus, &settings).map_err(|e| e.to_string())?;
    let baseline_run = format_run(&retrieve(&baseline, &f.topics, settings.k), "d2qmm");
    let unfiltered = index_expanded(&unfiltered_expansion(&f.corpus, &generator, n), &settings)
        .map_err(|e| e.to_string())?;
    let unfiltered_run = format_run(&retrieve(&unfiltered, &f.topics, settings.k), "d2qmm");

    check(run_at(0.0)? == baseline_run, || "p=0 run differs from plain BM25".into())?;
    check(run_at(1.0)? == unfiltered_run, || {
        "p=1 run differs from unfiltered expansion".into()
    })?;
    check(baseline_run != unfiltered_run, || "expansion had no effect".into())?;
    within(start.elapsed(), 30)?;
    Ok(format!(
        "{} run lines compared, {:.1}s",
        baseline_run.lines().count(),
        start.elapsed().as_secs_f64()
    ))
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Corpus, QueryMap, Vec<ScoredPair>) {
    let docs = rng.gen_range(1..=50usize);
    let mut corpus = Vec::new();
    let mut queries = QueryMap::new();
    let mut pairs = Vec::new();
    for d in 0..docs {
        let doc_id = format!("d{d}");
        corpus.push(Document::new(&doc_id, format!("text {d}")));
        let qn = rng.gen_range(0..=8usize);
        let qs: Vec<String> = (0..qn).map(|i| format!("q{d}x{i}")).collect();
        for i in 0..qn {
            // Coarse scores so ties are common.
            let score = f64::from(rng.gen_range(-20i32..=20)) / 4.0;
            pairs.push(ScoredPair {
                doc_id: doc_id.clone(),
                query_index: i,
                score,
            });
        }
        queries.insert(
            doc_id.clone(),
            GeneratedQuerySet {
                doc_id,
                queries: qs,
            },
        );
    }
    (Corpus::from_documents(corpus).unwrap(), queries, pairs)
}

fn retention_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut compared = 0usize;
    for case in 0..500 {
        let (corpus, queries, pairs) = random_instance(&mut rng);
        let t = match case % 5 {
            0 => f64::INFINITY,
            1 => f64::NEG_INFINITY,
            2 if !pairs.is_empty() => pairs[rng.gen_range(0..pairs.len())].score,
            _ => f64::from(rng.gen_range(-22i32..=22)) / 4.0 + 0.125,
        };
        let generator = file_generator(queries.clone());
        let scorer = external_scorer(pairs.iter().cloned());
        let got = filter_expand(&corpus, &generator, &scorer, t, 8).map_err(|e| e.to_string())?;

        let mut score_of = BTreeMap::new();
        for p in &pairs {
            score_of.insert((p.doc_id.as_str(), p.query_index), p.score);
        }
        for (doc, expanded) in corpus.iter().zip(&got) {
            let brute: Vec<&String> = queries[&doc.doc_id]
                .queries
                .iter()
                .enumerate()
                .filter(|(i, _)| score_of[&(doc.doc_id.as_str(), *i)] >= t)
                .map(|(_, q)| q)
                .collect();
            let kept: Vec<&String> = expanded.retained_queries.iter().collect();
            check(expanded.doc_id == doc.doc_id && kept == brute, || {
                format!("case {case}, doc {}: {kept:?} != {brute:?}", doc.doc_id)
            })?;
            compared += 1;
        }
    }
    within(start.elapsed(), 60)?;
    Ok(format!("500 corpora, {compared} documents, exact"))
}

fn quantile_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checks = 0usize;
    for case in 0..1000 {
        let len = rng.gen_range(1..=300usize);
        let levels = rng.gen_range(1..=64i32);
        let scores: Vec<f64> = (0..len)
            .map(|_| f64::from(rng.gen_range(-levels..=levels)) / 8.0)
            .collect();
        let factor = rng.gen_range(1e-3..1e3);
        let scaled: Vec<f64> = scores.iter().map(|s| s * factor).collect();
        for tenths in 1..=9u64 {
            let p = tenths as f64 / 10.0;
            let t = compute_threshold(&scores, p).map_err(|e| e.to_string())?;
            let target = (tenths * len as u64).div_ceil(10) as usize;
            let retained = scores.iter().filter(|&&s| s >= t).count();
            let ties = scores.iter().filter(|&&s| s == t).count();
            check(target <= retained && retained <= target + ties, || {
                format!("case {case}, p={p}: R={retained}, target={target}, ties={ties}")
            })?;

            // Streaming selection with forced spills agrees.
            let mut selector = ThresholdSelector::with_spill_limit(17);
            for &s in &scores {
                selector.push(s).map_err(|e| e.to_string())?;
            }
            let streamed = selector.threshold(p).map_err(|e| e.to_string())?;
            check(streamed == t, || format!("case {case}, p={p}: streamed {streamed} != {t}"))?;

            let ts = compute_threshold(&scaled, p).map_err(|e| e.to_string())?;
            let same = scores
                .iter()
                .zip(&scaled)
                .all(|(&a, &b)| (a >= t) == (b >= ts));
            check(same, || format!("case {case}, p={p}: scaling by {factor} changed the set"))?;
            checks += 1;
        }
    }
    Ok(format!("1000 multisets x 9 proportions = {checks} checks"))
}

fn random_index(rng: &mut ChaCha8Rng) -> (InvertedIndex, Vec<String>) {
    let vocab: Vec<String> = (0..rng.gen_range(3..=40)).map(|i| format!("w{i}")).collect();
    let docs = rng.gen_range(1..=400usize);
    let mut corpus = Vec::with_capacity(docs);
    for d in 0..docs {
        let text = if d > 0 && rng.gen_bool(0.05) {
            // Duplicate texts force exact score ties.
            let prev: &Document = &corpus[rng.gen_range(0..d)];
            prev.text.clone()
        } else {
            let len = rng.gen_range(0..=30);
            (0..len)
                .map(|_| {
                    // Skewed draw so some lists are long and some short.
                    let r = rng.gen_range(0.0f64..1.0).powi(2);
                    vocab[(r * vocab.len() as f64) as usize].as_str()
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        corpus.push(Document::new(format!("doc{:03}", (d * 7919) % 1000), text));
    }
    let block_size = [1usize, 2, 3, 4, 8, 16, 128][rng.gen_range(0..7)];
    let params = Bm25Params {
        k1: rng.gen_range(0.1..2.0),
        b: rng.gen_range(0.0..=1.0),
    };
    let index = build_index(&corpus, &TokenizerConfig::plain(), params, block_size).unwrap();
    (index, vocab)
}

fn bmw_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut instances = 0usize;
    let mut hits_compared = 0usize;
    for case in 0..400 {
        let (index, vocab) = random_index(&mut rng);
        for &k in &[1usize, 10, 1000] {
            let qlen = rng.gen_range(1..=6);
            let mut query: Vec<String> = (0..qlen)
                .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
                .collect();
            if rng.gen_bool(0.1) {
                query.push("absent".into());
            }
            let a = index.search_bmw(&query, k).hits;
            let b = index.search_exhaustive(&query, k).hits;
            let same_order = a.len() == b.len()
                && a.iter().zip(&b).all(|(x, y)| {
                    x.doc_id == y.doc_id && (x.score - y.score).abs() <= 1e-9
                });
            check(same_order, || {
                format!("case {case}, k={k}, query {query:?}: bmw {a:?} vs exhaustive {b:?}")
            })?;
            instances += 1;
            hits_compared += a.len();
        }
    }
    within(start.elapsed(), 300)?;
    Ok(format!(
        "{instances} instances, {hits_compared} hits, {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn block_max_audit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut audited = 0usize;
    for _ in 0..200 {
        let (index, _) = random_index(&mut rng);
        index.audit().map_err(|e| e.to_string())?;
        audited += 1;
    }
    let f = fixture();
    let generator = mock_generator(f.mock.clone()).map_err(|e| e.to_string())?;
    let settings = RetrievalSettings::default();
    let scorer = lexical_scorer(&f.corpus, &settings.tokenizer, settings.params)
        .map_err(|e| e.to_string())?;
    scorer.stats().audit().map_err(|e| e.to_string())?;
    audited += 1;
    for block_size in [1usize, 7, 128] {
        for p in [0.0, 0.3, 1.0] {
            let config = FilterConfig::proportion(p, f.config.n).map_err(|e| e.to_string())?;
            let s = RetrievalSettings {
                block_size,
                ..settings.clone()
            };
            let out = run_pipeline(&f.corpus, &generator, &scorer, &config, &s, &f.topics)
                .map_err(|e| e.to_string())?;
            out.index.audit().map_err(|e| e.to_string())?;
            audited += 1;
        }
    }
    Ok(format!("{audited} indexes audited"))
}

fn oracle_rr(ranked: &[String], grades: &BTreeMap<String, u32>) -> f64 {
    for (i, d) in ranked.iter().enumerate() {
        if i >= 10 {
            break;
        }
        if grades.get(d).copied().unwrap_or(0) >= 1 {
            return 1.0 / (i as f64 + 1.0);
        }
    }
    0.0
}

fn oracle_ndcg(ranked: &[String], grades: &BTreeMap<String, u32>) -> f64 {
    let mut dcg = 0.0;
    for (i, d) in ranked.iter().take(10).enumerate() {
        let g = grades.get(d).copied().unwrap_or(0) as f64;
        dcg += g * std::f64::consts::LN_2 / ((i + 2) as f64).ln();
    }
    // Ideal ordering by repeated selection of the largest remaining grade.
    let mut pool: Vec<u32> = grades.values().copied().collect();
    let mut idcg = 0.0;
    for i in 0..10 {
        let Some((j, &g)) = pool.iter().enumerate().max_by_key(|&(_, g)| *g) else {
            break;
        };
        idcg += g as f64 * std::f64::consts::LN_2 / ((i + 2) as f64).ln();
        pool.swap_remove(j);
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn metric_oracle() -> Outcome {
    let tol = 1e-6;
    let grades = |pairs: &[(&str, u32)]| -> BTreeMap<String, u32> {
        pairs.iter().map(|&(d, g)| (d.to_string(), g)).collect()
    };
    let ideal = ndcg_at_10(&["a", "b"], &grades(&[("a", 3), ("b", 0)]));
    check(ideal == 1.0, || format!("ideal ordering gave {ideal}"))?;
    let second = ndcg_at_10(&["x", "a"], &grades(&[("a", 1)]));
    check((second - 0.6309).abs() <= 1e-4, || format!("rank-2 example gave {second}"))?;
    let zero = ndcg_at_10(&["a", "b"], &grades(&[("a", 0), ("b", 0)]));
    check(zero == 0.0, || format!("all-zero example gave {zero}"))?;
    let rr = rr_at_10(&["x", "y", "a"], &grades(&[("a", 1)]), 1);
    check(rr == 1.0 / 3.0, || format!("rank-3 RR gave {rr}"))?;
    let rr = rr_at_10(&["x", "a", "y", "z", "b"], &grades(&[("a", 1), ("b", 1)]), 1);
    check(rr == 0.5, || format!("first-match RR gave {rr}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut queries = 0usize;
    for case in 0..100 {
        let mut run = Run::new();
        let mut qrels = Qrels::default();
        let mut expected = Vec::new();
        for q in 0..rng.gen_range(1..=20) {
            let qid = format!("q{q}");
            let pool: Vec<String> = (0..rng.gen_range(1..=40)).map(|d| format!("d{d}")).collect();
            let mut judged = BTreeMap::new();
            for d in &pool {
                if rng.gen_bool(0.4) {
                    let g = rng.gen_range(0..=3);
                    qrels.insert(&qid, d, g);
                    judged.insert(d.clone(), g);
                }
            }
            if judged.is_empty() {
                continue;
            }
            let mut ranked = pool.clone();
            for i in (1..ranked.len()).rev() {
                ranked.swap(i, rng.gen_range(0..=i));
            }
            ranked.truncate(rng.gen_range(0..=ranked.len()));
            expected.push((qid.clone(), oracle_rr(&ranked, &judged), oracle_ndcg(&ranked, &judged)));
            let hits = ranked
                .iter()
                .enumerate()
                .map(|(i, d)| Hit::new(d, 100.0 - i as f64))
                .collect();
            run.insert(qid, hits);
        }
        if expected.is_empty() {
            continue;
        }
        let report = evaluate_run(&run, &qrels, EvalOptions::default()).map_err(|e| e.to_string())?;
        for (qid, rr, ndcg) in &expected {
            let m = &report.per_query[qid];
            check((m.rr_at_10 - rr).abs() <= tol && (m.ndcg_at_10 - ndcg).abs() <= tol, || {
                format!("case {case}, {qid}: got {m:?}, oracle rr={rr} ndcg={ndcg}")
            })?;
            queries += 1;
        }
        let mean_rr = expected.iter().map(|e| e.1).sum::<f64>() / expected.len() as f64;
        let mean_ndcg = expected.iter().map(|e| e.2).sum::<f64>() / expected.len() as f64;
        check(
            (report.mean_rr_at_10 - mean_rr).abs() <= tol
                && (report.mean_ndcg_at_10 - mean_ndcg).abs() <= tol,
            || format!("case {case}: mean mismatch"),
        )?;
    }
    Ok(format!("hand examples exact, 100 fixtures / {queries} queries within {tol:e}"))
}

fn directional_effectiveness() -> Outcome {
    let f = fixture();
    let n = f.config.n;
    let generator = mock_generator(f.mock.clone()).map_err(|e| e.to_string())?;
    let settings = RetrievalSettings::default();
    let scorer = lexical_scorer(&f.corpus, &settings.tokenizer, settings.params)
        .map_err(|e| e.to_string())?;
    let at = |p: f64| -> Result<(f64, u64), String> {
        let config = FilterConfig::proportion(p, n).map_err(|e| e.to_string())?;
        let out = run_pipeline(&f.corpus, &generator, &scorer, &config, &settings, &f.topics)
            .map_err(|e| e.to_string())?;
        let report =
            evaluate_run(&out.run, &f.qrels, EvalOptions::default()).map_err(|e| e.to_string())?;
        Ok((report.mean_rr_at_10, out.index.indexed_token_count()))
    };
    let (rr_half, tokens_half) = at(0.5)?;
    let (rr_full, tokens_full) = at(1.0)?;
    check(rr_half > rr_full, || format!("RR@10 p=0.5 {rr_half:.4} <= p=1 {rr_full:.4}"))?;
    check(tokens_half < tokens_full, || {
        format!("tokens p=0.5 {tokens_half} >= p=1 {tokens_full}")
    })?;
    Ok(format!(
        "RR@10 {rr_half:.4} > {rr_full:.4}, tokens {tokens_half} < {tokens_full}"
    ))
}

fn sweep_config() -> SweepConfig {
    SweepConfig {
        n_values: vec![8],
        p_values: (0..=10).map(|i| i as f64 / 10.0).collect(),
        settings: RetrievalSettings::default(),
        eval: EvalOptions::default(),
        latency: None,
    }
}

fn monotone_storage() -> Outcome {
    let f = fixture();
    let generator = mock_generator(f.mock.clone()).map_err(|e| e.to_string())?;
    let config = sweep_config();
    let scorer = lexical_scorer(&f.corpus, &config.settings.tokenizer, config.settings.params)
        .map_err(|e| e.to_string())?;
    let outcome = sweep(&f.corpus, &generator, &scorer, &f.topics, &f.qrels, &config);
    check(outcome.failures.is_empty(), || format!("{:?}", outcome.failures))?;
    check(outcome.rows.len() == 11, || format!("{} rows", outcome.rows.len()))?;
    for w in outcome.rows.windows(2) {
        check(
            w[0].indexed_tokens <= w[1].indexed_tokens && w[0].index_bytes <= w[1].index_bytes,
            || {
                format!(
                    "p={} -> p={}: tokens {} -> {}, bytes {} -> {}",
                    w[0].p, w[1].p, w[0].indexed_tokens, w[1].indexed_tokens, w[0].index_bytes,
                    w[1].index_bytes
                )
            },
        )?;
    }
    let first = &outcome.rows[0];
    let last = &outcome.rows[10];
    Ok(format!(
        "tokens {}..{}, bytes {}..{}",
        first.indexed_tokens, last.indexed_tokens, first.index_bytes, last.index_bytes
    ))
}

fn full_execution(f: &DemoFixture) -> Result<(String, String, Vec<u8>, String), String> {
    let generator = mock_generator(f.mock.clone()).map_err(|e| e.to_string())?;
    let mut config = sweep_config();
    config.p_values = vec![0.0, 0.25, 0.5, 1.0];
    let scorer = lexical_scorer(&f.corpus, &config.settings.tokenizer, config.settings.params)
        .map_err(|e| e.to_string())?;
    let filter = FilterConfig::proportion(0.5, f.config.n).map_err(|e| e.to_string())?;
    let out = run_pipeline(&f.corpus, &generator, &scorer, &filter, &config.settings, &f.topics)
        .map_err(|e| e.to_string())?;
    let run = format_run(&out.run, "d2qmm");
    let index_bytes: Vec<u8> = out.index.to_sections().into_iter().flat_map(|(_, b)| b).collect();
    let csv = sweep_csv(
        &sweep(&f.corpus, &generator, &scorer, &f.topics, &f.qrels, &config).rows,
    );
    let queries = serde_json::to_string(&generate_all(&f.corpus, &generator, f.config.n).sets)
        .map_err(|e| e.to_string())?;
    Ok((run, csv, index_bytes, queries))
}

fn determinism() -> Outcome {
    let f = fixture();
    let mut outputs = Vec::new();
    for threads in [1usize, 4, 1, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        outputs.push((threads, pool.install(|| full_execution(&f))?));
    }
    let (_, reference) = &outputs[0];
    for (threads, out) in &outputs[1..] {
        check(out.0 == reference.0, || format!("run file differs at {threads} threads"))?;
        check(out.1 == reference.1, || format!("sweep CSV differs at {threads} threads"))?;
        check(out.2 == reference.2, || format!("index bytes differ at {threads} threads"))?;
        check(out.3 == reference.3, || format!("queries differ at {threads} threads"))?;
    }
    Ok(format!(
        "4 executions at 1/4 threads identical (run {} B, csv {} B, index {} B)",
        reference.0.len(),
        reference.1.len(),
        reference.2.len()
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("identity chain", identity_chain),
        ("retention rule oracle", retention_oracle),
        ("quantile correctness", quantile_correctness),
        ("BMW == exhaustive", bmw_equivalence),
        ("block-max audit", block_max_audit),
        ("metric oracle", metric_oracle),
        ("directional effectiveness", directional_effectiveness),
        ("monotone storage", monotone_storage),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, criterion) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(criterion)
            .unwrap_or_else(|e| Err(format!("panicked: {e:?}")));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {secs:>6.1}s  {detail}"),
            Err(reason) => {
                println!("FAIL  {name:<26} {secs:>6.1}s  {reason}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
