//! Significance test for the number of principal components.
//!
//! The eigenvalues `λ_1 ≥ … ≥ λ_q` of `X̂X̂ᵀ` are normalized as
//! `ℓ_r = (q − r)·λ_r / Σ_{s=r}^{q−1} λ_s` (so `ℓ_q = 0`). A null distribution for
//! each `ℓ_r` comes from matrices whose entries are drawn independently from the
//! elementwise posterior `N(X̂_ij, Σ_X(i,j))`. Ranks are tested in order with
//! Holm step-down adjustment over `m = q` hypotheses, stopping at the first rank
//! that is not significant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{fill_standard_normal, sym_eigvals, Matrix, RngStream};
use crate::vbpca::PosteriorReconstruction;

pub const DEFAULT_NULL_SAMPLES: usize = 2000;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const MIN_NULL_SAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Leading eigenvalues, descending.
    pub lambdas: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl Spectrum {
    pub fn from_lambdas(lambdas: Vec<f64>) -> Self {
        let normalized = normalize_eigenvalues(&lambdas);
        Spectrum {
            lambdas,
            normalized,
        }
    }

    pub fn q(&self) -> usize {
        self.lambdas.len()
    }
}

/// `ℓ_r = (q − r)·λ_r / Σ_{s=r}^{q−1} λ_s` for 1-based `r`. A zero denominator gives 0.
pub fn normalize_eigenvalues(lambdas: &[f64]) -> Vec<f64> {
    let q = lambdas.len();
    let mut out = vec![0.0; q];
    // The sum for rank r runs up to q−1, so λ_q never enters any denominator.
    let mut tail = 0.0;
    for t in (0..q.saturating_sub(1)).rev() {
        tail += lambdas[t];
        let weight = (q - 1 - t) as f64;
        out[t] = if tail > 0.0 {
            weight * lambdas[t] / tail
        } else {
            0.0
        };
    }
    out
}

/// Top-`q` eigenvalues of `x·xᵀ` and their normalization.
///
/// The eigenvalues come from the smaller of `x·xᵀ` and `xᵀ·x`, which share every
/// nonzero eigenvalue.
pub fn spectrum_of(x: &Matrix, q: usize) -> Result<Spectrum> {
    let max_q = x.rows().min(x.cols());
    if q == 0 || q > max_q {
        return Err(Error::config(format!(
            "q = {q} must be in [1, {max_q}] for a {}x{} matrix",
            x.rows(),
            x.cols()
        )));
    }
    let mut lambdas = sym_eigvals(&x.compact_gram())?;
    lambdas.truncate(q);
    for l in &mut lambdas {
        // Gram spectra are nonnegative; anything left below zero is round-off.
        *l = l.max(0.0);
    }
    Ok(Spectrum::from_lambdas(lambdas))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigTestConfig {
    pub n_null_samples: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl SigTestConfig {
    pub fn new(seed: u64) -> Self {
        SigTestConfig {
            n_null_samples: DEFAULT_NULL_SAMPLES,
            alpha: DEFAULT_ALPHA,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_null_samples < MIN_NULL_SAMPLES {
            return Err(Error::config(format!(
                "at least {MIN_NULL_SAMPLES} null samples are required, got {}",
                self.n_null_samples
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Draws `cfg.n_null_samples` matrices with independent entries
/// `N(x_mean(i,j), x_var(i,j))` and returns the top-`q` normalized spectrum of each.
///
/// Sample `k` uses stream `k` of `cfg.seed`, so the output is independent of how
/// samples are spread over threads.
pub fn sample_null_spectra(
    recon: &PosteriorReconstruction,
    q: usize,
    cfg: &SigTestConfig,
) -> Result<Vec<Spectrum>> {
    recon.validate()?;
    let (n, p) = recon.shape();
    let sd: Vec<f64> = recon.x_var.as_slice().iter().map(|v| v.sqrt()).collect();
    (0..cfg.n_null_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(cfg.seed, k as u64).rng();
            let mut draw = vec![0.0; n * p];
            fill_standard_normal(&mut rng, &mut draw);
            for ((z, &mu), &s) in draw.iter_mut().zip(recon.x_mean.as_slice()).zip(&sd) {
                *z = mu + s * *z;
            }
            spectrum_of(&Matrix::from_vec(n, p, draw)?, q)
        })
        .collect()
}

/// Holm step-down adjustment of p-values listed in testing order, over a family of
/// `m ≥ raw_p.len()` hypotheses: `adj[r] = max_{s≤r} min(1, (m − s + 1)·raw[s])`.
pub fn holm_bonferroni(raw_p: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < raw_p.len() {
        return Err(Error::Input(format!(
            "family size {m} is smaller than the {} p-values given",
            raw_p.len()
        )));
    }
    if let Some(bad) = raw_p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Input(format!("p-value {bad} is outside [0, 1]")));
    }
    let mut running: f64 = 0.0;
    Ok(raw_p
        .iter()
        .enumerate()
        .map(|(s, &p)| {
            running = running.max(((m - s) as f64 * p).min(1.0));
            running
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullQuantiles {
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTestResult {
    pub spectrum: Spectrum,
    /// Raw p-values of the tested ranks, in rank order.
    pub raw_p: Vec<f64>,
    pub adjusted_p: Vec<f64>,
    pub w: usize,
    /// Quantiles of the null normalized eigenvalue at every rank `1..=q`.
    pub null_quantiles: Vec<NullQuantiles>,
    pub n_null_samples: usize,
    pub alpha: f64,
}

impl SpectrumTestResult {
    /// Human-readable raw p-value of a tested rank (0-based), `"< 1/N"` when no null sample exceeded it.
    pub fn raw_p_display(&self, rank: usize) -> Option<String> {
        self.raw_p
            .get(rank)
            .map(|&p| format_p_value(p, self.n_null_samples))
    }
}

/// Formats a Monte Carlo p-value; zero is shown as the resolution bound `< 1/N`.
pub fn format_p_value(p: f64, n_samples: usize) -> String {
    if p == 0.0 {
        format!("< {}", 1.0 / n_samples as f64)
    } else {
        format!("{p}")
    }
}

/// Highest rank that can be tested for a spectrum of length `q`.
///
/// `ℓ_q` is identically zero and `ℓ_{q−1}` identically one, for the data and for
/// every null sample alike, so neither carries information.
pub fn max_testable_rank(q: usize) -> usize {
    q.saturating_sub(2)
}

/// Sequential test: rank `r` is tested only if every earlier rank was significant.
pub fn estimate_w(
    spectrum: &Spectrum,
    null_spectra: &[Spectrum],
    cfg: &SigTestConfig,
) -> Result<SpectrumTestResult> {
    let q = spectrum.q();
    if q < 2 {
        return Err(Error::config(format!("need at least 2 eigenvalues, got {q}")));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    if null_spectra.is_empty() {
        return Err(Error::config("no null spectra supplied"));
    }
    if let Some(bad) = null_spectra.iter().find(|s| s.q() != q) {
        return Err(Error::shape(format!(
            "null spectrum has {} eigenvalues, observed has {q}",
            bad.q()
        )));
    }
    let n_null = null_spectra.len();

    let mut raw_p = Vec::new();
    let mut adjusted_p = Vec::new();
    let mut w = 0;
    for r in 0..max_testable_rank(q) {
        let observed = spectrum.normalized[r];
        let exceed = null_spectra
            .iter()
            .filter(|s| s.normalized[r] > observed)
            .count();
        raw_p.push(exceed as f64 / n_null as f64);
        adjusted_p = holm_bonferroni(&raw_p, q)?;
        if adjusted_p[r] < cfg.alpha {
            w += 1;
        } else {
            break;
        }
    }

    let null_quantiles = (0..q)
        .map(|r| {
            let mut vals: Vec<f64> = null_spectra.iter().map(|s| s.normalized[r]).collect();
            vals.sort_by(f64::total_cmp);
            NullQuantiles {
                q05: quantile_sorted(&vals, 0.05),
                q50: quantile_sorted(&vals, 0.50),
                q95: quantile_sorted(&vals, 0.95),
            }
        })
        .collect();

    Ok(SpectrumTestResult {
        spectrum: spectrum.clone(),
        raw_p,
        adjusted_p,
        w,
        null_quantiles,
        n_null_samples: n_null,
        alpha: cfg.alpha,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Full test from a posterior reconstruction: observed spectrum of the mean, null
/// sampling, and sequential Holm testing.
pub fn test_reconstruction(
    recon: &PosteriorReconstruction,
    q: usize,
    cfg: &SigTestConfig,
) -> Result<SpectrumTestResult> {
    cfg.validate()?;
    let spectrum = spectrum_of(&recon.x_mean, q)?;
    let nulls = sample_null_spectra(recon, q, cfg)?;
    estimate_w(&spectrum, &nulls, cfg)
}
