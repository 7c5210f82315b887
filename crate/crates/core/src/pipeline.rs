//! End-to-end analysis: preprocessing, choice of `q`, posterior reconstruction
//! and the significance test, plus the synthetic validation sweep.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::ingest::{preprocess, Dataset, DEFAULT_MISSING_THRESHOLD};
use crate::numlin::MaskedMatrix;
use crate::report::{AnalysisReport, ConfigEcho};
use crate::sigtest::{test_reconstruction, SigTestConfig, DEFAULT_ALPHA, DEFAULT_NULL_SAMPLES};
use crate::synthgen::{generate, scenario_grid_replicates, Scenario, SyntheticSpec};
use crate::vbpca::{reconstruct, select_q, VbpcaConfig, DEFAULT_MAX_ITERS};

/// Default upper end of the `q̃` scan when none is given.
pub const DEFAULT_Q_CAP: usize = 60;

/// Column means may deviate from zero by this much relative to the largest entry.
const CENTERING_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub alpha: f64,
    pub null_samples: usize,
    pub iters: usize,
    pub seed: u64,
    pub q_min: usize,
    /// Defaults to `min(n, p, 60)`.
    pub q_max: Option<usize>,
    pub missing_threshold: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            alpha: DEFAULT_ALPHA,
            null_samples: DEFAULT_NULL_SAMPLES,
            iters: DEFAULT_MAX_ITERS,
            seed: 0,
            q_min: 2,
            q_max: None,
            missing_threshold: DEFAULT_MISSING_THRESHOLD,
        }
    }
}

impl AnalysisConfig {
    pub fn sig_config(&self) -> SigTestConfig {
        SigTestConfig {
            n_null_samples: self.null_samples,
            alpha: self.alpha,
            seed: self.seed,
        }
    }

    pub fn vbpca_config(&self, n_components: usize) -> VbpcaConfig {
        VbpcaConfig {
            max_iters: self.iters,
            ..VbpcaConfig::new(n_components, self.seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sig_config().validate()?;
        if self.iters == 0 {
            return Err(Error::config("iters must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.missing_threshold) {
            return Err(Error::config(format!(
                "missing threshold must be in [0, 1], got {}",
                self.missing_threshold
            )));
        }
        Ok(())
    }

    pub fn q_range(&self, n: usize, p: usize) -> RangeInclusive<usize> {
        let hi = self.q_max.unwrap_or(n.min(p).min(DEFAULT_Q_CAP));
        self.q_min..=hi
    }
}

/// Errors unless every column's observed mean is zero up to round-off.
pub fn check_centered(x: &MaskedMatrix) -> Result<()> {
    let tol = CENTERING_TOL * x.data().max_abs().max(f64::MIN_POSITIVE);
    for (j, m) in x.column_means().into_iter().enumerate() {
        if !(m.abs() <= tol) {
            return Err(Error::data(format!("column {j} is not centered (mean {m})")));
        }
    }
    Ok(())
}

/// Runs the test on a preprocessed (centered) matrix.
pub fn analyze_matrix(x: &MaskedMatrix, dataset: &str, cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    cfg.validate()?;
    check_centered(x)?;
    let (n, p) = x.shape();
    let range = cfg.q_range(n, p);
    let selection = select_q(x, range.clone(), &cfg.vbpca_config(*range.start()))?;
    let recon = reconstruct(&selection.model)?;
    let test = test_reconstruction(&recon, selection.q, &cfg.sig_config())?;
    let echo = ConfigEcho {
        alpha: cfg.alpha,
        null_samples: cfg.null_samples,
        seed: cfg.seed,
        iters: cfg.iters,
        q_min: *range.start(),
        q_max: *range.end(),
        missing_threshold: cfg.missing_threshold,
    };
    Ok(AnalysisReport::new(
        dataset,
        (n, p),
        &test,
        recon.x_mean.frobenius_sq(),
        selection.table,
        echo,
    ))
}

/// Preprocesses a freshly loaded dataset and analyzes it. Returns the processed
/// dataset alongside the report.
pub fn analyze_dataset(raw: &Dataset, dataset: &str, cfg: &AnalysisConfig) -> Result<(Dataset, AnalysisReport)> {
    cfg.validate()?;
    let ds = preprocess(raw, cfg.missing_threshold)?;
    let report = analyze_matrix(&ds.matrix, dataset, cfg)?;
    Ok((ds, report))
}

/// Generates `spec` and runs the full pipeline on it.
pub fn analyze_synthetic(spec: &SyntheticSpec, cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    let raw = Dataset::from_matrix(generate(spec)?, format!("synthetic-{}", spec.seed));
    let id = format!("synthetic {}x{} w={} seed={}", spec.n_rows, spec.n_cols, spec.n_significant, spec.seed);
    Ok(analyze_dataset(&raw, &id, cfg)?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRun {
    pub spec: SyntheticSpec,
    pub q: usize,
    pub w_estimate: usize,
}

/// Summary of one `(n, p, w)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub scenario: String,
    pub n: usize,
    pub p: usize,
    pub w: usize,
    pub replicates: usize,
    pub mean_w: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub max_w: usize,
}

/// Mean and two-sided 95% Student-t interval of the estimates. A single
/// estimate gives a zero-width interval.
pub fn mean_ci95(estimates: &[usize]) -> Result<(f64, f64, f64)> {
    let r = estimates.len();
    if r == 0 {
        return Err(Error::config("no estimates to summarize"));
    }
    let mean = estimates.iter().sum::<usize>() as f64 / r as f64;
    if r == 1 {
        return Ok((mean, mean, mean));
    }
    let var = estimates.iter().map(|&e| (e as f64 - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (r - 1) as f64)
        .map_err(|e| Error::config(e.to_string()))?
        .inverse_cdf(0.975);
    let half = t * (var / r as f64).sqrt();
    Ok((mean, mean - half, mean + half))
}

/// Runs the pipeline on `replicates` datasets for every grid cell of `scenario`.
/// `on_run` sees each run as it finishes.
pub fn run_validation(
    scenario: Scenario,
    replicates: usize,
    base_seed: u64,
    cfg: &AnalysisConfig,
    mut on_run: impl FnMut(&ValidationRun),
) -> Result<(Vec<ValidationRun>, Vec<ValidationRow>)> {
    if replicates == 0 {
        return Err(Error::config("replicates must be at least 1"));
    }
    cfg.validate()?;
    let mut runs = Vec::new();
    for spec in scenario_grid_replicates(scenario, base_seed, replicates) {
        let report = analyze_synthetic(&spec, cfg)?;
        let run = ValidationRun {
            spec,
            q: report.q,
            w_estimate: report.w,
        };
        on_run(&run);
        runs.push(run);
    }
    let mut rows = Vec::new();
    for cell in runs.chunks(replicates) {
        let s = &cell[0].spec;
        let estimates: Vec<usize> = cell.iter().map(|r| r.w_estimate).collect();
        let (mean_w, ci_low, ci_high) = mean_ci95(&estimates)?;
        rows.push(ValidationRow {
            scenario: scenario.to_string(),
            n: s.n_rows,
            p: s.n_cols,
            w: s.n_significant,
            replicates,
            mean_w,
            ci_low,
            ci_high,
            max_w: estimates.iter().copied().max().unwrap_or(0),
        });
    }
    Ok((runs, rows))
}

pub fn validation_csv(rows: &[ValidationRow]) -> String {
    let mut out = String::from("scenario,n,p,w,replicates,mean_w,ci_low,ci_high,max_w\n");
    for r in rows {
        out += &format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.scenario, r.n, r.p, r.w, r.replicates, r.mean_w, r.ci_low, r.ci_high, r.max_w
        );
    }
    out
}
