use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::corpus_io::{Qrels, Run};
use crate::error::{Error, Result};

pub const CUTOFF: usize = 10;

/// Reciprocal rank of the first document within the top 10 whose grade is at
/// least `rel_threshold`; 0 when there is none.
pub fn rr_at_10<S: AsRef<str>>(
    ranked: &[S],
    judgements: &BTreeMap<String, u32>,
    rel_threshold: u32,
) -> f64 {
    ranked
        .iter()
        .take(CUTOFF)
        .position(|d| judgements.get(d.as_ref()).is_some_and(|&g| g >= rel_threshold))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// nDCG@10 with linear gains: `Σ grade_i / log2(i + 1)` normalised by the
/// same sum over the ideal ordering of all judged grades. 0 when the ideal
/// gain is 0.
pub fn ndcg_at_10<S: AsRef<str>>(ranked: &[S], judgements: &BTreeMap<String, u32>) -> f64 {
    let discount = |i: usize| ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(CUTOFF)
        .enumerate()
        .map(|(i, d)| f64::from(judgements.get(d.as_ref()).copied().unwrap_or(0)) / discount(i))
        .sum();
    let mut ideal: Vec<u32> = judgements.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(CUTOFF)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / discount(i))
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub rr_at_10: f64,
    pub ndcg_at_10: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EvalOptions {
    /// Minimum grade counted as relevant by RR@10.
    pub rel_threshold: u32,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { rel_threshold: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub mean_rr_at_10: f64,
    pub mean_ndcg_at_10: f64,
    /// Queries with judgements; all of them are evaluated.
    pub judged_queries: usize,
    /// Judged queries with no results in the run (scored 0).
    pub missing_from_run: usize,
    /// Run queries without judgements (ignored).
    pub unjudged_in_run: usize,
}

/// Evaluates every judged query. Judged queries absent from the run score 0;
/// run queries without judgements are excluded and counted. Repeated
/// documents within one ranking are counted once, at their first position.
pub fn evaluate_run(run: &Run, qrels: &Qrels, options: EvalOptions) -> Result<EvalReport> {
    let overlap = qrels.query_ids().filter(|q| run.contains_key(*q)).count();
    if overlap == 0 {
        return Err(Error::Eval(
            "run and qrels share no query ids".to_string(),
        ));
    }
    let mut per_query = BTreeMap::new();
    let mut missing = 0;
    for (qid, judgements) in qrels.iter() {
        let ranked: Vec<&str> = match run.get(qid) {
            Some(hits) => {
                let mut seen = HashSet::new();
                hits.iter()
                    .map(|h| h.doc_id.as_str())
                    .filter(|d| seen.insert(*d))
                    .collect()
            }
            None => {
                missing += 1;
                Vec::new()
            }
        };
        per_query.insert(
            qid.to_string(),
            QueryMetrics {
                rr_at_10: rr_at_10(&ranked, judgements, options.rel_threshold),
                ndcg_at_10: ndcg_at_10(&ranked, judgements),
            },
        );
    }
    let count = per_query.len() as f64;
    let mean_rr_at_10 = per_query.values().map(|m| m.rr_at_10).sum::<f64>() / count;
    let mean_ndcg_at_10 = per_query.values().map(|m| m.ndcg_at_10).sum::<f64>() / count;
    Ok(EvalReport {
        judged_queries: per_query.len(),
        missing_from_run: missing,
        unjudged_in_run: run.keys().filter(|q| qrels.for_query(q).is_none()).count(),
        per_query,
        mean_rr_at_10,
        mean_ndcg_at_10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::Hit;

    fn judged(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn rr_examples() {
        let ranking = ["a", "b", "c", "d", "e"];
        assert_eq!(rr_at_10(&ranking, &judged(&[("c", 1)]), 1), 1.0 / 3.0);
        assert_eq!(rr_at_10(&ranking, &judged(&[("z", 1)]), 1), 0.0);
        assert_eq!(rr_at_10(&ranking, &judged(&[("b", 1), ("e", 1)]), 1), 0.5);
        assert_eq!(rr_at_10(&ranking, &judged(&[("b", 1), ("e", 2)]), 2), 0.2);
        let long: Vec<String> = (0..20).map(|i| format!("d{i}")).collect();
        assert_eq!(rr_at_10(&long, &judged(&[("d10", 1)]), 1), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_10(&["a", "b"], &judged(&[("a", 3), ("b", 0)])), 1.0);
        let v = ndcg_at_10(&["x", "a"], &judged(&[("a", 1)]));
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_10(&["a", "b"], &judged(&[("a", 0), ("b", 0)])), 0.0);
    }

    #[test]
    fn mean_over_queries() {
        let mut qrels = Qrels::default();
        qrels.insert("q1", "a", 1);
        qrels.insert("q2", "b", 1);
        let mut run = Run::new();
        run.insert("q1".into(), vec![Hit::new("a", 2.0)]);
        run.insert("q2".into(), vec![Hit::new("c", 2.0)]);
        run.insert("q3".into(), vec![Hit::new("c", 2.0)]);
        let r = evaluate_run(&run, &qrels, EvalOptions::default()).unwrap();
        assert_eq!(r.mean_rr_at_10, 0.5);
        assert_eq!(r.judged_queries, 2);
        assert_eq!(r.unjudged_in_run, 1);
    }

    #[test]
    fn disjoint_ids_are_an_error() {
        let mut qrels = Qrels::default();
        qrels.insert("q1", "a", 1);
        let mut run = Run::new();
        run.insert("other".into(), vec![Hit::new("a", 1.0)]);
        assert!(evaluate_run(&run, &qrels, EvalOptions::default()).is_err());
    }
}
