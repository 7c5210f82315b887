//! Variational Bayesian PCA for incomplete data.
//!
//! The model is `Xᵀ ≈ A·Y + M`: `A` is the `p×q` loading matrix, `Y` the `q×n`
//! component matrix and `M` stacks `n` copies of the bias vector `m`. Rows of `A`,
//! columns of `Y` and entries of `m` get independent Gaussian posteriors, updated
//! cyclically. The noise variance and the per-component prior variances of `A`
//! (automatic relevance determination) are point estimates. Missing entries are
//! excluded from every sufficient statistic.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{
    dot, fill_standard_normal, frobenius_sq_masked, spd_inverse, streams, sym_eigen,
    MaskedMatrix, Matrix, RngStream,
};

pub const DEFAULT_MAX_ITERS: usize = 80;
pub const DEFAULT_CONV_TOL: f64 = 1e-6;
/// Hyperparameters stay broad for this many iterations, so with the default
/// iteration budget they are never re-estimated.
pub const DEFAULT_BROAD_PRIOR_ITERS: usize = 100;

const INIT_VAR: f64 = 1e-2;
/// Prior variance used while hyperparameters are held broad.
const BROAD_PRIOR_VAR: f64 = 1e3;
/// Noise and prior variances never drop below this fraction of the data scale.
const VAR_FLOOR_REL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VbpcaConfig {
    /// Number of components `q̃`.
    pub n_components: usize,
    pub max_iters: usize,
    /// Stop once the relative change of the reconstruction cost falls below this.
    pub conv_tol: f64,
    pub seed: u64,
    /// Iterations run with broad priors before the ARD and bias prior variances
    /// start being re-estimated.
    pub broad_prior_iters: usize,
    /// Re-express the factors in their principal basis after every Y update.
    pub rotate_to_pca: bool,
}

impl VbpcaConfig {
    pub fn new(n_components: usize, seed: u64) -> Self {
        VbpcaConfig {
            n_components,
            max_iters: DEFAULT_MAX_ITERS,
            conv_tol: DEFAULT_CONV_TOL,
            seed,
            broad_prior_iters: DEFAULT_BROAD_PRIOR_ITERS,
            rotate_to_pca: true,
        }
    }

    pub fn with_components(&self, n_components: usize) -> Self {
        VbpcaConfig {
            n_components,
            ..self.clone()
        }
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let max_q = n.min(p);
        if self.n_components == 0 || self.n_components > max_q {
            return Err(Error::config(format!(
                "n_components must be in [1, {max_q}] for a {n}x{p} matrix, got {}",
                self.n_components
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        if !(self.conv_tol >= 0.0) {
            return Err(Error::config("conv_tol must be nonnegative"));
        }
        Ok(())
    }
}

/// Posterior of a fitted VBPCA model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VbpcaModel {
    /// `p×q` posterior means of the loadings; row `j` is `Â_j`.
    pub a_mean: Matrix,
    /// Posterior covariance of each loading row (`p` blocks of `q×q`).
    pub a_cov: Vec<Matrix>,
    /// `q×n` posterior means of the components; column `i` is `Ŷ_i`.
    pub y_mean: Matrix,
    /// Posterior covariance of each component column (`n` blocks of `q×q`).
    pub y_cov: Vec<Matrix>,
    pub m_mean: Vec<f64>,
    pub m_var: Vec<f64>,
    pub noise_var: f64,
    /// Prior variance of each loading column.
    pub a_prior_var: Vec<f64>,
    pub m_prior_var: f64,
    /// Masked squared reconstruction error at initialization and after every iteration.
    pub cost_trace: Vec<f64>,
}

impl VbpcaModel {
    pub fn n_components(&self) -> usize {
        self.a_mean.cols()
    }

    pub fn n_rows(&self) -> usize {
        self.y_mean.cols()
    }

    pub fn n_cols(&self) -> usize {
        self.a_mean.rows()
    }

    pub fn iterations(&self) -> usize {
        self.cost_trace.len().saturating_sub(1)
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("cost trace is never empty")
    }

    /// Posterior mean reconstruction `(ÂŶ + M̂)ᵀ`, `n×p`.
    pub fn mean_reconstruction(&self) -> Matrix {
        let (n, p) = (self.n_rows(), self.n_cols());
        let y = self.y_mean.transpose();
        Matrix::from_fn(n, p, |i, j| dot(self.a_mean.row(j), y.row(i)) + self.m_mean[j])
    }

    fn check_consistency(&self) -> Result<()> {
        let q = self.n_components();
        let (n, p) = (self.n_rows(), self.n_cols());
        let ok = self.y_mean.rows() == q
            && self.a_cov.len() == p
            && self.y_cov.len() == n
            && self.m_mean.len() == p
            && self.m_var.len() == p
            && self
                .a_cov
                .iter()
                .chain(&self.y_cov)
                .all(|c| c.shape() == (q, q));
        if ok {
            Ok(())
        } else {
            Err(Error::shape("inconsistent posterior block dimensions"))
        }
    }
}

/// Elementwise posterior mean and variance of the reconstructed data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReconstruction {
    pub x_mean: Matrix,
    pub x_var: Matrix,
}

impl PosteriorReconstruction {
    pub fn shape(&self) -> (usize, usize) {
        self.x_mean.shape()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_mean.shape() != self.x_var.shape() {
            return Err(Error::shape("reconstruction mean and variance differ in shape"));
        }
        if !self.x_mean.is_finite() {
            return Err(Error::data("reconstruction mean has non-finite entries"));
        }
        if self.x_var.as_slice().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::data("reconstruction variance must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Posterior mean `X̂` and elementwise variance `Σ_X` of `AY + M` under the fitted posterior.
///
/// For sample `i` and feature `j`:
/// `Σ_X(i,j) = Â_j Σ_{Y_i} Â_jᵀ + Ŷ_iᵀ Σ_{A_j} Ŷ_i + Σ_{ℓ,k} [Σ_{Y_i} ⊙ Σ_{A_j}]_{ℓk} + Σ_{m,j}`.
pub fn reconstruct(model: &VbpcaModel) -> Result<PosteriorReconstruction> {
    model.check_consistency()?;
    let (n, p) = (model.n_rows(), model.n_cols());
    let y = model.y_mean.transpose();
    let mut x_mean = Matrix::zeros(n, p);
    let mut x_var = Matrix::zeros(n, p);
    for i in 0..n {
        let yi = y.row(i);
        let sy = &model.y_cov[i];
        for j in 0..p {
            let aj = model.a_mean.row(j);
            let sa = &model.a_cov[j];
            let hadamard: f64 = sy
                .as_slice()
                .iter()
                .zip(sa.as_slice())
                .map(|(u, v)| u * v)
                .sum();
            x_mean[(i, j)] = dot(aj, yi) + model.m_mean[j];
            let var = sy.quad_form(aj) + sa.quad_form(yi) + hadamard + model.m_var[j];
            // Round-off can leave a PSD quadratic form a hair below zero.
            x_var[(i, j)] = var.max(0.0);
        }
    }
    Ok(PosteriorReconstruction { x_mean, x_var })
}

/// Missing-entry bookkeeping used to form masked Gram sums cheaply.
struct MaskIndex {
    missing_in_row: Vec<Vec<usize>>,
    missing_in_col: Vec<Vec<usize>>,
    observed_in_col: Vec<usize>,
    observed_total: usize,
}

impl MaskIndex {
    fn new(data: &MaskedMatrix) -> Self {
        let (n, p) = data.shape();
        let mut missing_in_row = vec![Vec::new(); n];
        let mut missing_in_col = vec![Vec::new(); p];
        for i in 0..n {
            for j in 0..p {
                if !data.is_observed(i, j) {
                    missing_in_row[i].push(j);
                    missing_in_col[j].push(i);
                }
            }
        }
        let observed_in_col = missing_in_col.iter().map(|m| n - m.len()).collect();
        MaskIndex {
            missing_in_row,
            missing_in_col,
            observed_in_col,
            observed_total: data.observed_count(),
        }
    }
}

/// Per-row posterior covariances stored once per distinct block. Fully observed
/// rows all share a single block, which keeps the per-iteration cost at `O(q³)`
/// for them instead of `O(n·q²)`.
#[derive(Clone, Debug)]
struct Blocks {
    unique: Vec<Matrix>,
    index: Vec<usize>,
}

impl Blocks {
    fn uniform(block: Matrix, len: usize) -> Self {
        Blocks {
            unique: vec![block],
            index: vec![0; len],
        }
    }

    fn with_capacity(len: usize) -> Self {
        Blocks {
            unique: Vec::new(),
            index: Vec::with_capacity(len),
        }
    }

    fn get(&self, k: usize) -> &Matrix {
        &self.unique[self.index[k]]
    }

    /// Appends a new distinct block and returns its id.
    fn push_new(&mut self, block: Matrix) -> usize {
        self.unique.push(block);
        let id = self.unique.len() - 1;
        self.index.push(id);
        id
    }

    fn push_existing(&mut self, id: usize) {
        self.index.push(id);
    }

    fn multiplicities(&self) -> Vec<usize> {
        let mut counts = vec![0; self.unique.len()];
        for &u in &self.index {
            counts[u] += 1;
        }
        counts
    }

    fn sum(&self) -> Matrix {
        let q = self.unique.first().map_or(0, Matrix::rows);
        let mut acc = Matrix::zeros(q, q);
        for (block, count) in self.unique.iter().zip(self.multiplicities()) {
            acc.add_assign(&block.scaled(count as f64));
        }
        acc
    }

    fn try_map(&self, f: impl Fn(&Matrix) -> Result<Matrix>) -> Result<Blocks> {
        Ok(Blocks {
            unique: self.unique.iter().map(f).collect::<Result<_>>()?,
            index: self.index.clone(),
        })
    }

    fn expand(&self) -> Vec<Matrix> {
        self.index.iter().map(|&u| self.unique[u].clone()).collect()
    }
}

/// `Σ_k (v_k v_kᵀ + C_k)` over the indices `k` not listed in `skip`, given the full total.
///
/// When most indices are skipped the sum is built directly instead of by subtraction.
fn masked_second_moment(
    total: &Matrix,
    vecs: &Matrix,
    covs: Option<&Blocks>,
    skip: &[usize],
) -> Matrix {
    let count = vecs.rows();
    let add = |acc: &mut Matrix, k: usize, sign: f64| {
        acc.add_outer(vecs.row(k), sign);
        if let Some(c) = covs {
            if sign > 0.0 {
                acc.add_assign(c.get(k));
            } else {
                acc.sub_assign(c.get(k));
            }
        }
    };
    if skip.len() * 2 <= count {
        let mut acc = total.clone();
        for &k in skip {
            add(&mut acc, k, -1.0);
        }
        acc
    } else {
        let q = total.rows();
        let mut acc = Matrix::zeros(q, q);
        let mut s = skip.iter().peekable();
        for k in 0..count {
            if s.peek() == Some(&&k) {
                s.next();
                continue;
            }
            add(&mut acc, k, 1.0);
        }
        acc
    }
}

fn second_moment(vecs: &Matrix, covs: Option<&Blocks>) -> Matrix {
    let mut acc = vecs.gram_cols();
    if let Some(c) = covs {
        acc.add_assign(&c.sum());
    }
    acc
}

/// Solves one block of the factor update: given the masked second moment `g` of the
/// other factor, returns (`v·(g + v·P)⁻¹`, `(g + v·P)⁻¹`) where `P = diag(precision)`.
fn posterior_block(g: &Matrix, noise_var: f64, precision: &[f64]) -> Result<(Matrix, Matrix)> {
    let mut psi = g.clone();
    for (k, &prec) in precision.iter().enumerate() {
        psi[(k, k)] += noise_var * prec;
    }
    psi.symmetrize();
    let inv = spd_inverse(&psi)?;
    Ok((inv.scaled(noise_var), inv))
}

struct State {
    /// `p×q`, row `j` = `a_j`.
    a: Matrix,
    a_cov: Blocks,
    /// `n×q`, row `i` = `y_i`.
    y: Matrix,
    y_cov: Blocks,
    m: Vec<f64>,
    m_var: Vec<f64>,
    noise_var: f64,
    a_prior: Vec<f64>,
    m_prior: f64,
}

/// Fits VBPCA with `cfg.n_components` components to `data`.
pub fn fit(data: &MaskedMatrix, cfg: &VbpcaConfig) -> Result<VbpcaModel> {
    let (n, p) = data.shape();
    cfg.validate(n, p)?;
    let counts = data.column_observed_counts();
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::data(format!("column {j} has no observed entries")));
    }
    let q = cfg.n_components;
    let idx = MaskIndex::new(data);
    let x = data.data();

    let col_means = data.column_means();
    let nobs = idx.observed_total as f64;
    let mean_sq = x.frobenius_sq() / nobs;
    let centered_var = {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..p {
                if data.is_observed(i, j) {
                    let d = x[(i, j)] - col_means[j];
                    s += d * d;
                }
            }
        }
        s / nobs
    };
    let scale = if mean_sq > 0.0 { mean_sq } else { 1.0 };
    let floor = VAR_FLOOR_REL * scale;

    let mut rng = RngStream::new(cfg.seed, streams::VBPCA_INIT + q as u64).rng();
    let mut init = vec![0.0; (p + n) * q];
    fill_standard_normal(&mut rng, &mut init);
    let init_sd = INIT_VAR.sqrt();
    let (a_init, y_init) = init.split_at(p * q);
    let mut st = State {
        a: Matrix::from_vec(p, q, a_init.iter().map(|z| z * init_sd).collect())?,
        a_cov: Blocks::uniform(Matrix::identity(q).scaled(INIT_VAR), p),
        y: Matrix::from_vec(n, q, y_init.iter().map(|z| z * init_sd).collect())?,
        y_cov: Blocks::uniform(Matrix::identity(q).scaled(INIT_VAR), n),
        m: col_means,
        m_var: vec![0.0; p],
        noise_var: centered_var.max(floor),
        a_prior: vec![BROAD_PRIOR_VAR * scale; q],
        m_prior: BROAD_PRIOR_VAR * scale,
    };

    let mut cost_trace = vec![masked_cost(data, &st)];
    for iter in 1..=cfg.max_iters {
        if iter > cfg.broad_prior_iters {
            update_priors(&mut st, floor);
        }
        update_bias(data, &idx, &mut st);
        update_components(data, &idx, &mut st).map_err(|e| at_iteration(e, iter))?;
        if cfg.rotate_to_pca {
            rotate_to_pca(&mut st).map_err(|e| at_iteration(e, iter))?;
        }
        let trace_a = update_loadings(data, &idx, &mut st).map_err(|e| at_iteration(e, iter))?;
        update_noise(data, &idx, &mut st, trace_a, floor);

        let cost = masked_cost(data, &st);
        if !cost.is_finite() || !st.noise_var.is_finite() {
            return Err(Error::numerical(iter, "VBPCA cost diverged"));
        }
        let prev = *cost_trace.last().unwrap();
        cost_trace.push(cost);
        let rel = (prev - cost).abs() / prev.max(f64::MIN_POSITIVE);
        if rel < cfg.conv_tol {
            break;
        }
    }

    Ok(VbpcaModel {
        a_mean: st.a,
        a_cov: st.a_cov.expand(),
        y_mean: st.y.transpose(),
        y_cov: st.y_cov.expand(),
        m_mean: st.m,
        m_var: st.m_var,
        noise_var: st.noise_var,
        a_prior_var: st.a_prior,
        m_prior_var: st.m_prior,
        cost_trace,
    })
}

fn at_iteration(e: Error, iter: usize) -> Error {
    match e {
        Error::Numerical { message, .. } => Error::numerical(iter, message),
        other => other,
    }
}

fn masked_cost(data: &MaskedMatrix, st: &State) -> f64 {
    let (n, p) = data.shape();
    let xhat = Matrix::from_fn(n, p, |i, j| dot(st.a.row(j), st.y.row(i)) + st.m[j]);
    frobenius_sq_masked(data, &xhat).expect("shapes agree by construction")
}

fn update_priors(st: &mut State, floor: f64) {
    let p = st.a.rows() as f64;
    for (k, prior) in st.a_prior.iter_mut().enumerate() {
        let s: f64 = (0..st.a.rows())
            .map(|j| st.a[(j, k)] * st.a[(j, k)] + st.a_cov.get(j)[(k, k)])
            .sum();
        *prior = (s / p).max(floor);
    }
    let s: f64 = st.m.iter().zip(&st.m_var).map(|(m, v)| m * m + v).sum();
    st.m_prior = (s / p).max(floor);
}

fn update_bias(data: &MaskedMatrix, idx: &MaskIndex, st: &mut State) {
    let (n, p) = data.shape();
    let x = data.data();
    let mut sums = vec![0.0; p];
    for i in 0..n {
        let yi = st.y.row(i);
        for (j, s) in sums.iter_mut().enumerate() {
            if data.is_observed(i, j) {
                *s += x[(i, j)] - dot(st.a.row(j), yi);
            }
        }
    }
    let shrink = st.noise_var / st.m_prior;
    for j in 0..p {
        let denom = idx.observed_in_col[j] as f64 + shrink;
        st.m[j] = sums[j] / denom;
        st.m_var[j] = st.noise_var / denom;
    }
}

/// Residual `x_ij − m_j` with zeros at missing entries, `n×p`.
fn centered_residual(data: &MaskedMatrix, m: &[f64]) -> Matrix {
    let (n, p) = data.shape();
    let x = data.data();
    Matrix::from_fn(n, p, |i, j| {
        if data.is_observed(i, j) {
            x[(i, j)] - m[j]
        } else {
            0.0
        }
    })
}

fn update_components(data: &MaskedMatrix, idx: &MaskIndex, st: &mut State) -> Result<()> {
    let (n, _) = data.shape();
    let q = st.a.cols();
    let r = centered_residual(data, &st.m);
    let total = second_moment(&st.a, Some(&st.a_cov));
    let unit = vec![1.0; q];
    let mut covs = Blocks::with_capacity(n);
    let mut shared: Option<(usize, Matrix)> = None;
    for i in 0..n {
        let skip = &idx.missing_in_row[i];
        let own;
        let inv = if skip.is_empty() {
            match &shared {
                Some((id, _)) => covs.push_existing(*id),
                None => {
                    let (cov, inv) = posterior_block(&total, st.noise_var, &unit)?;
                    shared = Some((covs.push_new(cov), inv));
                }
            }
            &shared.as_ref().expect("shared block set above").1
        } else {
            let g = masked_second_moment(&total, &st.a, Some(&st.a_cov), skip);
            let (cov, inv) = posterior_block(&g, st.noise_var, &unit)?;
            covs.push_new(cov);
            own = inv;
            &own
        };
        let mut b = vec![0.0; q];
        for (j, &rij) in r.row(i).iter().enumerate() {
            if rij != 0.0 {
                for (bk, &ajk) in b.iter_mut().zip(st.a.row(j)) {
                    *bk += rij * ajk;
                }
            }
        }
        st.y.row_mut(i).copy_from_slice(&inv.mul_vec(&b));
    }
    st.y_cov = covs;
    Ok(())
}

/// Returns `Σ_j tr(Σ_{A_j} Σ_{i∈O_j}(y_i y_iᵀ + Σ_{Y_i}))`, needed by the noise update.
fn update_loadings(data: &MaskedMatrix, idx: &MaskIndex, st: &mut State) -> Result<f64> {
    let (_, p) = data.shape();
    let q = st.a.cols();
    let r = centered_residual(data, &st.m);
    let total = second_moment(&st.y, Some(&st.y_cov));
    let precision: Vec<f64> = st.a_prior.iter().map(|v| 1.0 / v).collect();

    // Σ_i y_i r_ij for every j at once: Yᵀ-weighted columns of the residual.
    let mut b = Matrix::zeros(p, q);
    for i in 0..r.rows() {
        let yi = st.y.row(i);
        for (j, &rij) in r.row(i).iter().enumerate() {
            if rij != 0.0 {
                for (bk, &yik) in b.row_mut(j).iter_mut().zip(yi) {
                    *bk += rij * yik;
                }
            }
        }
    }

    let mut covs = Blocks::with_capacity(p);
    let mut shared: Option<(usize, Matrix)> = None;
    for j in 0..p {
        let skip = &idx.missing_in_col[j];
        let own;
        let inv = if skip.is_empty() {
            match &shared {
                Some((id, _)) => covs.push_existing(*id),
                None => {
                    let (cov, inv) = posterior_block(&total, st.noise_var, &precision)?;
                    shared = Some((covs.push_new(cov), inv));
                }
            }
            &shared.as_ref().expect("shared block set above").1
        } else {
            let g = masked_second_moment(&total, &st.y, Some(&st.y_cov), skip);
            let (cov, inv) = posterior_block(&g, st.noise_var, &precision)?;
            covs.push_new(cov);
            own = inv;
            &own
        };
        st.a.row_mut(j).copy_from_slice(&inv.mul_vec(b.row(j)));
    }
    // tr(Σ_A (Φ − vP)) with Σ_A = v Φ⁻¹ reduces to v·(q − Σ_k Σ_A[k,k]·P_k).
    let mut trace_sum = 0.0;
    for (cov, count) in covs.unique.iter().zip(covs.multiplicities()) {
        let prior_part: f64 = (0..q).map(|k| cov[(k, k)] * precision[k]).sum();
        trace_sum += count as f64 * st.noise_var * (q as f64 - prior_part);
    }
    st.a_cov = covs;
    Ok(trace_sum)
}

fn update_noise(data: &MaskedMatrix, idx: &MaskIndex, st: &mut State, trace_a: f64, floor: f64) {
    let (n, p) = data.shape();
    let x = data.data();
    let mut sse = 0.0;
    let mut bias_var = 0.0;
    for i in 0..n {
        let yi = st.y.row(i);
        for j in 0..p {
            if data.is_observed(i, j) {
                let e = x[(i, j)] - dot(st.a.row(j), yi) - st.m[j];
                sse += e * e;
                bias_var += st.m_var[j];
            }
        }
    }
    let total_a = second_moment(&st.a, None);
    let mut trace_y = 0.0;
    let mut full_rows = vec![0usize; st.y_cov.unique.len()];
    for i in 0..n {
        let skip = &idx.missing_in_row[i];
        if skip.is_empty() {
            full_rows[st.y_cov.index[i]] += 1;
        } else {
            let g = masked_second_moment(&total_a, &st.a, None, skip);
            trace_y += st.y_cov.get(i).trace_product(&g);
        }
    }
    for (block, count) in st.y_cov.unique.iter().zip(full_rows) {
        if count > 0 {
            trace_y += count as f64 * block.trace_product(&total_a);
        }
    }
    let v = (sse + bias_var + trace_y + trace_a) / idx.observed_total as f64;
    st.noise_var = v.max(floor);
}

/// Re-expresses `A`, `Y` in the basis where the components are white and the
/// loadings orthogonal and sorted by variance. `A·Y` and every posterior moment of
/// the product are unchanged; the mean of `Y` is moved into the bias.
fn rotate_to_pca(st: &mut State) -> Result<()> {
    let n = st.y.rows();
    let p = st.a.rows();
    let q = st.a.cols();

    let mut mean_y = vec![0.0; q];
    for i in 0..n {
        for (mk, &yk) in mean_y.iter_mut().zip(st.y.row(i)) {
            *mk += yk;
        }
    }
    for mk in &mut mean_y {
        *mk /= n as f64;
    }
    for j in 0..p {
        st.m[j] += dot(st.a.row(j), &mean_y);
    }
    for i in 0..n {
        for (yk, mk) in st.y.row_mut(i).iter_mut().zip(&mean_y) {
            *yk -= mk;
        }
    }

    let mut cov_y = second_moment(&st.y, Some(&st.y_cov)).scaled(1.0 / n as f64);
    cov_y.symmetrize();
    let eig_y = sym_eigen(&cov_y)?;
    let sqrt_d: Vec<f64> = eig_y
        .values
        .iter()
        .map(|&d| d.max(f64::MIN_POSITIVE).sqrt())
        .collect();
    // RA = V_Y · diag(√d)
    let ra = eig_y.vectors.matmul(&Matrix::from_diag(&sqrt_d))?;
    let ra_t = ra.transpose();
    let mut a = st.a.matmul(&ra)?;
    let mut a_cov = congruence_all(&st.a_cov, &ra_t)?;

    let mut cov_a = second_moment(&a, Some(&a_cov)).scaled(1.0 / p as f64);
    cov_a.symmetrize();
    let eig_a = sym_eigen(&cov_a)?;
    let va = &eig_a.vectors;
    let va_t = va.transpose();
    a = a.matmul(va)?;
    a_cov = congruence_all(&a_cov, &va_t)?;

    // R = V_Aᵀ · diag(1/√d) · V_Yᵀ
    let inv_sqrt: Vec<f64> = sqrt_d.iter().map(|s| 1.0 / s).collect();
    let r = va_t
        .matmul(&Matrix::from_diag(&inv_sqrt))?
        .matmul(&eig_y.vectors.transpose())?;
    let mut y = Matrix::zeros(n, q);
    for i in 0..n {
        y.row_mut(i).copy_from_slice(&r.mul_vec(st.y.row(i)));
    }
    st.y_cov = congruence_all(&st.y_cov, &r)?;

    if !(a.is_finite() && y.is_finite()) {
        return Err(Error::numerical(0, "rotation produced non-finite factors"));
    }
    st.a = a;
    st.a_cov = a_cov;
    st.y = y;
    Ok(())
}

/// `T·C·Tᵀ` for every block.
fn congruence_all(blocks: &Blocks, t: &Matrix) -> Result<Blocks> {
    let t_t = t.transpose();
    blocks.try_map(|c| {
        let mut rotated = t.matmul(c)?.matmul(&t_t)?;
        rotated.symmetrize();
        Ok(rotated)
    })
}

/// Reconstruction cost for one candidate component count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QCost {
    pub q: usize,
    /// Masked squared Frobenius error of the posterior mean reconstruction.
    pub cost: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct QSelection {
    pub q: usize,
    pub table: Vec<QCost>,
    /// The fitted model at the selected `q`.
    pub model: VbpcaModel,
}

/// Fits one model per `q̃` in `q_range` and returns the one minimizing the masked
/// reconstruction error, ties going to the smaller `q̃`.
///
/// Fits run in parallel; each uses its own random stream, so the result does not
/// depend on the thread count.
pub fn select_q(
    data: &MaskedMatrix,
    q_range: RangeInclusive<usize>,
    base_cfg: &VbpcaConfig,
) -> Result<QSelection> {
    let (n, p) = data.shape();
    let (lo, hi) = (*q_range.start(), *q_range.end());
    if lo > hi {
        return Err(Error::config(format!("empty q range [{lo}, {hi}]")));
    }
    let max_q = n.min(p);
    if lo < 2 || hi > max_q {
        return Err(Error::config(format!(
            "q range [{lo}, {hi}] must lie within [2, {max_q}]"
        )));
    }

    type Acc = (Vec<QCost>, Option<(QCost, VbpcaModel)>);
    fn keep_best(best: Option<(QCost, VbpcaModel)>, cand: (QCost, VbpcaModel)) -> Option<(QCost, VbpcaModel)> {
        match best {
            Some(b) if (b.0.cost, b.0.q) <= (cand.0.cost, cand.0.q) => Some(b),
            _ => Some(cand),
        }
    }
    let (mut table, best) = (lo..=hi)
        .into_par_iter()
        .map(|q| {
            let model = fit(data, &base_cfg.with_components(q))?;
            let entry = QCost {
                q,
                cost: model.final_cost(),
                iterations: model.iterations(),
            };
            Ok((entry, model))
        })
        .try_fold(
            || (Vec::new(), None),
            |(mut table, best): Acc, item: Result<(QCost, VbpcaModel)>| {
                let (entry, model) = item?;
                table.push(entry.clone());
                Ok::<Acc, Error>((table, keep_best(best, (entry, model))))
            },
        )
        .try_reduce(
            || (Vec::new(), None),
            |(mut t1, b1), (t2, b2)| {
                t1.extend(t2);
                let best = match b2 {
                    Some(c) => keep_best(b1, c),
                    None => b1,
                };
                Ok((t1, best))
            },
        )?;
    table.sort_by_key(|e| e.q);
    let (best_entry, model) = best.expect("q range is nonempty");
    Ok(QSelection {
        q: best_entry.q,
        table,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(a: f64, sa: f64, y: f64, sy: f64, m: f64, sm: f64) -> VbpcaModel {
        let one = |v: f64| Matrix::from_vec(1, 1, vec![v]).unwrap();
        VbpcaModel {
            a_mean: one(a),
            a_cov: vec![one(sa)],
            y_mean: one(y),
            y_cov: vec![one(sy)],
            m_mean: vec![m],
            m_var: vec![sm],
            noise_var: 1.0,
            a_prior_var: vec![1.0],
            m_prior_var: 1.0,
            cost_trace: vec![0.0],
        }
    }

    #[test]
    fn scalar_posterior_variance() {
        let r = reconstruct(&scalar_model(2.0, 0.5, 3.0, 0.25, 0.0, 0.1)).unwrap();
        assert!((r.x_var[(0, 0)] - 5.725).abs() < 1e-12);
        assert_eq!(r.x_mean[(0, 0)], 6.0);
    }

    #[test]
    fn zero_covariances_give_zero_variance() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0, -1.0, 2.0, 0.0], vec![0.5, 0.5, 0.0, 1.0]]).unwrap();
        let m = vec![0.1, 0.2, 0.3];
        let model = VbpcaModel {
            a_mean: a.clone(),
            a_cov: vec![Matrix::zeros(2, 2); 3],
            y_mean: y.clone(),
            y_cov: vec![Matrix::zeros(2, 2); 4],
            m_mean: m.clone(),
            m_var: vec![0.0; 3],
            noise_var: 1.0,
            a_prior_var: vec![1.0; 2],
            m_prior_var: 1.0,
            cost_trace: vec![0.0],
        };
        let r = reconstruct(&model).unwrap();
        assert!(r.x_var.as_slice().iter().all(|&v| v == 0.0));
        let ay = a.matmul(&y).unwrap();
        let expect = Matrix::from_fn(4, 3, |i, j| ay[(j, i)] + m[j]);
        assert_eq!(r.x_mean, expect);
    }

    #[test]
    fn reconstruct_rejects_inconsistent_blocks() {
        let mut model = scalar_model(1.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        model.y_cov.clear();
        assert!(matches!(reconstruct(&model), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        let data = MaskedMatrix::fully_observed(Matrix::zeros(5, 3)).unwrap();
        assert!(matches!(fit(&data, &VbpcaConfig::new(4, 0)), Err(Error::Config(_))));
        assert!(matches!(fit(&data, &VbpcaConfig::new(0, 0)), Err(Error::Config(_))));
        let mut cfg = VbpcaConfig::new(2, 0);
        cfg.max_iters = 0;
        assert!(matches!(fit(&data, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn all_missing_column_rejected() {
        let data = Matrix::from_rows(&[vec![1.0, f64::NAN], vec![2.0, f64::NAN], vec![0.0, f64::NAN]]).unwrap();
        let data = MaskedMatrix::from_nan(data).unwrap();
        assert!(matches!(fit(&data, &VbpcaConfig::new(1, 0)), Err(Error::Data(_))));
    }

    #[test]
    fn select_q_range_errors() {
        let data = MaskedMatrix::fully_observed(Matrix::identity(4)).unwrap();
        let cfg = VbpcaConfig::new(2, 0);
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert!(matches!(select_q(&data, empty, &cfg), Err(Error::Config(_))));
        assert!(matches!(select_q(&data, 1..=3, &cfg), Err(Error::Config(_))));
        assert!(matches!(select_q(&data, 2..=5, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn masked_second_moment_both_paths() {
        let vecs = Matrix::from_fn(6, 2, |i, j| (i * 2 + j) as f64 * 0.1 - 0.3);
        let mut covs = Blocks::with_capacity(6);
        for k in 0..6 {
            covs.push_new(Matrix::identity(2).scaled(k as f64));
        }
        let total = second_moment(&vecs, Some(&covs));
        for skip in [vec![], vec![1], vec![0, 2, 3, 5], vec![0, 1, 2, 3, 4, 5]] {
            let got = masked_second_moment(&total, &vecs, Some(&covs), &skip);
            let mut expect = Matrix::zeros(2, 2);
            for k in (0..6).filter(|k| !skip.contains(k)) {
                expect.add_outer(vecs.row(k), 1.0);
                expect.add_assign(covs.get(k));
            }
            for (a, b) in got.as_slice().iter().zip(expect.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
