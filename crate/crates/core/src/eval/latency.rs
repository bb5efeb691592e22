use std::time::Instant;

use serde::Serialize;

use crate::corpus_io::TopicSet;
use crate::error::{Error, Result};
use crate::index::InvertedIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatencyProtocol {
    pub warmup: usize,
    pub repetitions: usize,
}

impl Default for LatencyProtocol {
    fn default() -> Self {
        Self {
            warmup: 1,
            repetitions: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicTiming {
    pub query_id: String,
    /// One wall time per timed repetition, in milliseconds.
    pub runs_ms: Vec<f64>,
}

impl TopicTiming {
    pub fn mean_ms(&self) -> f64 {
        self.runs_ms.iter().sum::<f64>() / self.runs_ms.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub per_topic: Vec<TopicTiming>,
    /// Mean over topics of each topic's mean time.
    pub mean_response_ms: f64,
    pub query_count: usize,
    /// Untimed warm-up executions per topic.
    pub warmup: usize,
}

impl LatencyReport {
    pub fn mean_display(&self) -> String {
        format!("{:.1}", self.mean_response_ms)
    }
}

/// Times top-`k` retrieval (query analysis included) for every topic, one
/// query at a time on the calling thread.
pub fn measure_latency(
    index: &InvertedIndex,
    topics: &TopicSet,
    k: usize,
    protocol: LatencyProtocol,
) -> Result<LatencyReport> {
    if topics.is_empty() {
        return Err(Error::Eval("latency measurement needs at least one topic".into()));
    }
    if protocol.repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
    }
    let mut per_topic = Vec::with_capacity(topics.len());
    for topic in topics.topics() {
        for _ in 0..protocol.warmup {
            std::hint::black_box(index.search(&topic.text, k));
        }
        let runs_ms = (0..protocol.repetitions)
            .map(|_| {
                let start = Instant::now();
                std::hint::black_box(index.search(&topic.text, k));
                start.elapsed().as_secs_f64() * 1e3
            })
            .collect();
        per_topic.push(TopicTiming {
            query_id: topic.query_id.clone(),
            runs_ms,
        });
    }
    let mean_response_ms =
        per_topic.iter().map(TopicTiming::mean_ms).sum::<f64>() / per_topic.len() as f64;
    Ok(LatencyReport {
        query_count: per_topic.len(),
        per_topic,
        mean_response_ms,
        warmup: protocol.warmup,
    })
}
