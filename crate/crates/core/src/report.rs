//! Machine-readable analysis reports.
//!
//! JSON carries everything; CSV carries the per-rank table, whose `rank` and
//! `variance_fraction` columns double as scree-plot data. Field lists are fixed
//! by [`REPORT_FIELDS`] and [`RANK_FIELDS`].

use serde::{Deserialize, Serialize};

use crate::sigtest::{format_p_value, SpectrumTestResult};
use crate::vbpca::QCost;

pub const REPORT_FIELDS: [&str; 10] = [
    "dataset",
    "n",
    "p",
    "q",
    "w",
    "ranks",
    "cumulative_variance_w",
    "cumulative_variance_w_plus_1",
    "q_scan",
    "config",
];

pub const RANK_FIELDS: [&str; 11] = [
    "rank",
    "eigenvalue",
    "normalized",
    "variance_fraction",
    "raw_p",
    "raw_p_display",
    "adjusted_p",
    "significant",
    "null_q05",
    "null_q50",
    "null_q95",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub eigenvalue: f64,
    pub normalized: f64,
    /// `λ_r` over the trace of `X̂X̂ᵀ`.
    pub variance_fraction: f64,
    /// Absent for ranks the sequential test never reached.
    pub raw_p: Option<f64>,
    pub raw_p_display: Option<String>,
    pub adjusted_p: Option<f64>,
    pub significant: bool,
    pub null_q05: f64,
    pub null_q50: f64,
    pub null_q95: f64,
}

/// Settings echoed into the report. Worker count is deliberately absent: it
/// does not change the result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub alpha: f64,
    pub null_samples: usize,
    pub seed: u64,
    pub iters: usize,
    pub q_min: usize,
    pub q_max: usize,
    pub missing_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub dataset: String,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub w: usize,
    pub ranks: Vec<RankRow>,
    pub cumulative_variance_w: f64,
    /// Absent when `w = q`.
    pub cumulative_variance_w_plus_1: Option<f64>,
    pub q_scan: Vec<QCost>,
    pub config: ConfigEcho,
}

impl AnalysisReport {
    /// Builds the report from a test result; `total_variance` is the trace of `X̂X̂ᵀ`.
    pub fn new(
        dataset: impl Into<String>,
        shape: (usize, usize),
        test: &SpectrumTestResult,
        total_variance: f64,
        q_scan: Vec<QCost>,
        config: ConfigEcho,
    ) -> Self {
        let q = test.spectrum.q();
        let fraction = |l: f64| if total_variance > 0.0 { l / total_variance } else { 0.0 };
        let ranks: Vec<RankRow> = (0..q)
            .map(|r| {
                let nq = test.null_quantiles[r];
                RankRow {
                    rank: r + 1,
                    eigenvalue: test.spectrum.lambdas[r],
                    normalized: test.spectrum.normalized[r],
                    variance_fraction: fraction(test.spectrum.lambdas[r]),
                    raw_p: test.raw_p.get(r).copied(),
                    raw_p_display: test.raw_p_display(r),
                    adjusted_p: test.adjusted_p.get(r).copied(),
                    significant: r < test.w,
                    null_q05: nq.q05,
                    null_q50: nq.q50,
                    null_q95: nq.q95,
                }
            })
            .collect();
        let cumulative = |k: usize| ranks[..k].iter().map(|r| r.variance_fraction).sum::<f64>();
        AnalysisReport {
            dataset: dataset.into(),
            n: shape.0,
            p: shape.1,
            q,
            w: test.w,
            cumulative_variance_w: cumulative(test.w),
            cumulative_variance_w_plus_1: (test.w < q).then(|| cumulative(test.w + 1)),
            ranks,
            q_scan,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// The per-rank table.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut out = RANK_FIELDS.join(",") + "\n";
        for r in &self.ranks {
            let fields = [
                r.rank.to_string(),
                r.eigenvalue.to_string(),
                r.normalized.to_string(),
                r.variance_fraction.to_string(),
                opt(r.raw_p),
                r.raw_p_display.clone().unwrap_or_default(),
                opt(r.adjusted_p),
                r.significant.to_string(),
                r.null_q05.to_string(),
                r.null_q50.to_string(),
                r.null_q95.to_string(),
            ];
            out += &(fields.join(",") + "\n");
        }
        out
    }

    /// Raw p-value of `rank` (1-based) as shown to users.
    pub fn p_display(&self, rank: usize) -> Option<String> {
        let r = self.ranks.get(rank.checked_sub(1)?)?;
        r.raw_p.map(|p| format_p_value(p, self.config.null_samples))
    }
}
