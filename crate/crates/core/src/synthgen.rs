//! Synthetic data with a known number of dominant components.
//!
//! `X = (A·Y)ᵀ` with `Y` (`d×n`, `d = min(n, p)`) drawn with independent Gaussian
//! rows: the first `w` rows have variances `strong_var_base − strong_var_step·k`
//! for `k = 0..w`, the remaining `d − w` rows share `weak_var`. Loadings `A`
//! (`p×d`) are i.i.d. `N(0, loading_var)`. There is no bias and no separate noise
//! term; the weak rows form the noise floor.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{fill_standard_normal, mix_seed, streams, MaskedMatrix, Matrix, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_significant: usize,
    pub weak_var: f64,
    pub strong_var_base: f64,
    pub strong_var_step: f64,
    pub loading_var: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n_rows: usize, n_cols: usize, n_significant: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_rows,
            n_cols,
            n_significant,
            weak_var: 0.001,
            strong_var_base: 1.0,
            strong_var_step: 0.03,
            loading_var: 0.00015,
            seed,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.n_rows.min(self.n_cols)
    }

    /// Variance of each latent component, strong ones first.
    pub fn component_variances(&self) -> Vec<f64> {
        (0..self.latent_dim())
            .map(|k| {
                if k < self.n_significant {
                    self.strong_var_base - self.strong_var_step * k as f64
                } else {
                    self.weak_var
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.latent_dim();
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::config("synthetic data needs at least one row and column"));
        }
        if self.n_significant >= d {
            return Err(Error::config(format!(
                "n_significant = {} must be below min(n, p) = {d}",
                self.n_significant
            )));
        }
        for (name, v) in [
            ("weak_var", self.weak_var),
            ("strong_var_base", self.strong_var_base),
            ("strong_var_step", self.strong_var_step),
            ("loading_var", self.loading_var),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_significant > 0 {
            let weakest =
                self.strong_var_base - self.strong_var_step * (self.n_significant - 1) as f64;
            if weakest <= self.weak_var {
                return Err(Error::config(format!(
                    "weakest significant variance {weakest} does not exceed weak_var {}",
                    self.weak_var
                )));
            }
        }
        Ok(())
    }
}

/// Draws a fully observed `n×p` dataset from `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<MaskedMatrix> {
    spec.validate()?;
    let (n, p, d) = (spec.n_rows, spec.n_cols, spec.latent_dim());

    let mut y = vec![0.0; d * n];
    fill_standard_normal(
        &mut RngStream::new(spec.seed, streams::SYNTH_COMPONENTS).rng(),
        &mut y,
    );
    for (row, var) in y.chunks_mut(n).zip(spec.component_variances()) {
        let sd = var.sqrt();
        row.iter_mut().for_each(|v| *v *= sd);
    }
    let y = Matrix::from_vec(d, n, y)?;

    let mut a = vec![0.0; p * d];
    fill_standard_normal(
        &mut RngStream::new(spec.seed, streams::SYNTH_LOADINGS).rng(),
        &mut a,
    );
    let sd = spec.loading_var.sqrt();
    a.iter_mut().for_each(|v| *v *= sd);
    let a = Matrix::from_vec(p, d, a)?;

    let x = a.matmul(&y)?.transpose();
    MaskedMatrix::fully_observed(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// 150 rows, varying column count.
    I,
    /// 150 columns, varying row count.
    II,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::I => "i",
            Scenario::II => "ii",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(Scenario::I),
            "ii" | "2" => Ok(Scenario::II),
            other => Err(Error::config(format!("unknown scenario '{other}' (expected i or ii)"))),
        }
    }
}

pub const GRID_FIXED_DIM: usize = 150;
pub const GRID_VARYING_DIMS: [usize; 7] = [15, 30, 35, 40, 45, 50, 55];
pub const GRID_SIGNIFICANT: [usize; 4] = [2, 4, 6, 8];

/// The 28 `(size, w)` cells of a validation scenario, seeded from `base_seed` and
/// the cell position.
pub fn scenario_grid(scenario: Scenario, base_seed: u64) -> Vec<SyntheticSpec> {
    scenario_grid_replicates(scenario, base_seed, 1)
}

/// Like [`scenario_grid`] with `replicates` consecutive specs per cell.
pub fn scenario_grid_replicates(
    scenario: Scenario,
    base_seed: u64,
    replicates: usize,
) -> Vec<SyntheticSpec> {
    let scenario_tag = match scenario {
        Scenario::I => 0u64,
        Scenario::II => 1u64 << 40,
    };
    let mut specs = Vec::with_capacity(GRID_VARYING_DIMS.len() * GRID_SIGNIFICANT.len() * replicates);
    for (di, &dim) in GRID_VARYING_DIMS.iter().enumerate() {
        for (wi, &w) in GRID_SIGNIFICANT.iter().enumerate() {
            for r in 0..replicates {
                let (n, p) = match scenario {
                    Scenario::I => (GRID_FIXED_DIM, dim),
                    Scenario::II => (dim, GRID_FIXED_DIM),
                };
                let position = scenario_tag | ((di as u64) << 32) | ((wi as u64) << 24) | r as u64;
                specs.push(SyntheticSpec::new(n, p, w, mix_seed(base_seed, position)));
            }
        }
    }
    specs
}
