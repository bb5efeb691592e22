//! Index-time compute budget comparison.
//!
//! Every configuration is paired with the unfiltered configuration (p = 1)
//! whose total generation + filtering time is closest to its own, so that a
//! filtered index can be compared against spending the same compute on
//! generating more queries instead.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetEntry {
    pub n: usize,
    /// Retained proportion; 1 means unfiltered.
    pub p: f64,
    pub generation: Option<f64>,
    pub filtering: Option<f64>,
    pub effectiveness: f64,
}

impl BudgetEntry {
    pub fn total(&self) -> Option<f64> {
        Some(self.generation? + self.filtering?)
    }

    pub fn is_unfiltered(&self) -> bool {
        self.p >= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub config: BudgetEntry,
    pub total: Option<f64>,
    /// Unfiltered configuration with the closest total time.
    pub matched: Option<BudgetEntry>,
    /// `config.effectiveness - matched.effectiveness`.
    pub delta: Option<f64>,
    /// `(matched - config) / config` effectiveness, e.g. -0.04 for "-4%".
    pub relative_delta: Option<f64>,
    /// Total time of the cheapest unfiltered configuration at least as
    /// effective as this one, divided by this configuration's total.
    pub cost_ratio_to_match: Option<f64>,
}

impl BudgetRow {
    pub fn comparable(&self) -> bool {
        self.matched.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub rows: Vec<BudgetRow>,
}

fn by_total(a: &(f64, &BudgetEntry), b: &(f64, &BudgetEntry)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.n.cmp(&b.1.n))
}

pub fn budget_report(entries: &[BudgetEntry]) -> Result<BudgetReport> {
    for e in entries {
        if !(0.0..=1.0).contains(&e.p) {
            return Err(Error::InvalidConfig(format!("p = {} out of range", e.p)));
        }
        for v in [e.generation, e.filtering].into_iter().flatten() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("bad timing {v} for n = {}", e.n)));
            }
        }
    }
    let mut baselines: Vec<(f64, &BudgetEntry)> = entries
        .iter()
        .filter(|e| e.is_unfiltered())
        .filter_map(|e| Some((e.total()?, e)))
        .collect();
    baselines.sort_by(by_total);

    let rows = entries
        .iter()
        .map(|config| {
            let total = config.total();
            // Closest total; on equal distance the cheaper one, which keeps
            // the pairing monotone in the configuration's total.
            let matched = total.and_then(|t| {
                baselines
                    .iter()
                    .min_by(|a, b| {
                        (a.0 - t)
                            .abs()
                            .total_cmp(&(b.0 - t).abs())
                            .then_with(|| by_total(a, b))
                    })
                    .map(|(_, e)| (*e).clone())
            });
            let delta = matched
                .as_ref()
                .map(|m| config.effectiveness - m.effectiveness);
            let relative_delta = matched
                .as_ref()
                .filter(|_| config.effectiveness != 0.0)
                .map(|m| (m.effectiveness - config.effectiveness) / config.effectiveness);
            let cost_ratio_to_match = total.filter(|&t| t > 0.0).and_then(|t| {
                baselines
                    .iter()
                    .find(|(_, e)| e.effectiveness >= config.effectiveness)
                    .map(|(bt, _)| bt / t)
            });
            BudgetRow {
                config: config.clone(),
                total,
                matched,
                delta,
                relative_delta,
                cost_ratio_to_match,
            }
        })
        .collect();
    Ok(BudgetReport { rows })
}
