//! Batch structured mean field variational Bayes.
//!
//! For each kappa atom the conditional mean field problem is solved by
//! coordinate ascent over q(alpha | kappa), q(beta, u | kappa),
//! q(a | kappa) and q(sigma^2 | kappa); the converged per-atom lower bounds
//! then weight the atoms in the mixture posterior.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, NbvbError, Result};
use crate::model::{AtomGrid, DesignBlocks, Hyperparams};
use crate::posterior::{AtomComponent, MixturePosterior};
use crate::specfun::{lambda_jj_unchecked, ln_gamma, log_cosh_half_unchecked};

/// Starting values for one per-atom coordinate ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct InitState {
    /// mu_{q(1/sigma_j^2)} per random-effect block, all positive.
    pub recip_sigma2: Vec<f64>,
    /// Pólya-Gamma tilts, one per observation, all positive.
    pub c_alpha: DVector<f64>,
}

impl InitState {
    /// All reciprocal moments and tilts equal to one.
    pub fn unit(n: usize, r: usize) -> Self {
        Self {
            recip_sigma2: vec![1.0; r],
            c_alpha: DVector::from_element(n, 1.0),
        }
    }
}

impl From<&PerAtomFit> for InitState {
    fn from(fit: &PerAtomFit) -> Self {
        Self {
            recip_sigma2: fit.vc.recip_sigma2.clone(),
            c_alpha: fit.c_alpha.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Relative ELBO change threshold, |delta| / (1 + |elbo|).
    pub tol: f64,
    pub max_iter: usize,
    /// Explicit starting state; overrides warm starts for every atom.
    pub init: Option<InitState>,
    /// Seed each atom from the previous atom's converged state. When off,
    /// atoms are fitted independently and in parallel.
    pub warm_start: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            init: None,
            warm_start: true,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return domain(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return domain("max_iter must be at least 1");
        }
        Ok(())
    }
}

/// Parameters of q(sigma_j^2 | kappa) and q(a_j | kappa) for every block.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub lam_sigma2: Vec<f64>,
    pub lam_a: Vec<f64>,
    pub recip_sigma2: Vec<f64>,
    pub recip_a: Vec<f64>,
}

impl VarianceComponents {
    fn with_recip_sigma2(recip_sigma2: Vec<f64>) -> Self {
        let r = recip_sigma2.len();
        Self {
            lam_sigma2: vec![0.0; r],
            lam_a: vec![0.0; r],
            recip_sigma2,
            recip_a: vec![0.0; r],
        }
    }

    /// The per-block q(a_j) then q(sigma_j^2) updates.
    pub(crate) fn update(
        &mut self,
        mu: &DVector<f64>,
        sigma: &DMatrix<f64>,
        p: usize,
        blocks: &[usize],
        s_sigma: f64,
    ) {
        let inv_s2 = 1.0 / (s_sigma * s_sigma);
        let mut start = p;
        for (j, &k) in blocks.iter().enumerate() {
            let (sq, tr) = block_moments(mu, sigma, start, k);
            self.lam_a[j] = self.recip_sigma2[j] + inv_s2;
            self.recip_a[j] = 1.0 / self.lam_a[j];
            self.lam_sigma2[j] = self.recip_a[j] + 0.5 * (sq + tr);
            self.recip_sigma2[j] = (k as f64 + 1.0) / (2.0 * self.lam_sigma2[j]);
            start += k;
        }
    }
}

/// ||mu_j||^2 and tr(Sigma_j) for the block starting at `start` of size `k`.
fn block_moments(mu: &DVector<f64>, sigma: &DMatrix<f64>, start: usize, k: usize) -> (f64, f64) {
    let sq = mu.rows(start, k).norm_squared();
    let tr = (start..start + k).map(|i| sigma[(i, i)]).sum();
    (sq, tr)
}

/// Precision-matrix prior diagonal: sigma_beta^{-2} for fixed effects, then
/// each block's reciprocal-variance moment.
pub(crate) fn prior_precision_diag(
    p: usize,
    blocks: &[usize],
    sigma_beta: f64,
    recip_sigma2: &[f64],
) -> Vec<f64> {
    let mut diag = vec![1.0 / (sigma_beta * sigma_beta); p];
    for (&k, &rs) in blocks.iter().zip(recip_sigma2) {
        diag.extend(std::iter::repeat_n(rs, k));
    }
    diag
}

/// Everything the lower bound needs besides the variance components.
pub(crate) struct ElboParts<'a> {
    pub kappa: f64,
    pub mu: &'a DVector<f64>,
    pub sigma: &'a DMatrix<f64>,
    pub log_det_sigma: f64,
    pub cty: &'a DVector<f64>,
    pub ct1: &'a DVector<f64>,
    /// (y + kappa 1)^T log cosh(c / 2)
    pub weighted_log_cosh: f64,
}

/// The lower bound l_q(kappa), without kappa-free constants.
pub(crate) fn elbo_core(
    parts: &ElboParts<'_>,
    vc: &VarianceComponents,
    h: &Hyperparams,
    p: usize,
    blocks: &[usize],
) -> f64 {
    let ElboParts {
        kappa,
        mu,
        sigma,
        log_det_sigma,
        cty,
        ct1,
        weighted_log_cosh,
    } = *parts;
    let lin: f64 = mu
        .iter()
        .zip(cty.iter().zip(ct1.iter()))
        .map(|(m, (a, b))| m * (a - kappa * b))
        .sum();
    let (beta_sq, beta_tr) = block_moments(mu, sigma, 0, p);
    let sb2 = h.sigma_beta() * h.sigma_beta();
    let mut elbo =
        0.5 * lin - weighted_log_cosh - (beta_sq + beta_tr) / (2.0 * sb2) + 0.5 * log_det_sigma;
    let inv_s2 = 1.0 / (h.s_sigma() * h.s_sigma());
    let mut start = p;
    for (j, &k) in blocks.iter().enumerate() {
        let (sq, tr) = block_moments(mu, sigma, start, k);
        elbo += vc.recip_sigma2[j] * (vc.lam_sigma2[j] - vc.recip_a[j] - 0.5 * sq - 0.5 * tr)
            + vc.recip_a[j] * (vc.lam_a[j] - inv_s2)
            - 0.5 * (k as f64 + 1.0) * vc.lam_sigma2[j].ln()
            - vc.lam_a[j].ln();
        start += k;
    }
    elbo
}

/// The kappa-dependent terms turning l_q(kappa) into l(kappa).
pub(crate) fn marginal_offset(kappa: f64, n: f64, y_sum: f64, lgamma_sum: f64) -> f64 {
    lgamma_sum + n * (0.5 * kappa * kappa.ln() - std::f64::consts::LN_2 * kappa - ln_gamma(kappa))
        - 0.5 * kappa.ln() * y_sum
}

/// Converged (or iteration-capped) variational state for one kappa atom.
#[derive(Debug, Clone, PartialEq)]
pub struct PerAtomFit {
    pub kappa: f64,
    /// Mean of q(beta, u | kappa).
    pub mu: DVector<f64>,
    /// Covariance of q(beta, u | kappa).
    pub sigma: DMatrix<f64>,
    pub log_det_sigma: f64,
    /// Pólya-Gamma tilts c_{q(alpha | kappa)}.
    pub c_alpha: DVector<f64>,
    pub vc: VarianceComponents,
    /// Lower bound l_q(kappa).
    pub elbo: f64,
    /// Approximate marginal log-likelihood l(kappa).
    pub marginal: f64,
    pub iterations: usize,
    pub converged: bool,
    /// l_q(kappa) after each iteration.
    pub elbo_trace: Vec<f64>,
}

impl PerAtomFit {
    /// E_q[alpha_i | kappa] = 2 (y_i + kappa) lambda_jj(c_i) at the stored tilts.
    pub fn alpha_means(&self, y: &[u64]) -> DVector<f64> {
        DVector::from_iterator(
            y.len(),
            y.iter()
                .zip(self.c_alpha.iter())
                .map(|(&yi, &c)| 2.0 * (yi as f64 + self.kappa) * lambda_jj_unchecked(c)),
        )
    }

    pub fn component(&self, log_prior: f64) -> AtomComponent {
        AtomComponent {
            kappa: self.kappa,
            log_prior,
            mu: self.mu.clone(),
            sigma: self.sigma.clone(),
            log_det_sigma: self.log_det_sigma,
            vc: self.vc.clone(),
            elbo: self.elbo,
            marginal: self.marginal,
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}

/// Design-level quantities reused across iterations and atoms.
struct Precomputed {
    y: DVector<f64>,
    cty: DVector<f64>,
    ct1: DVector<f64>,
    y_sum: f64,
}

impl Precomputed {
    fn new(d: &DesignBlocks) -> Self {
        let y = d.y_f64();
        let c = d.c();
        let cty = c.tr_mul(&y);
        let ct1 = DVector::from_iterator(c.ncols(), c.column_iter().map(|col| col.sum()));
        let y_sum = y.sum();
        Self { y, cty, ct1, y_sum }
    }
}

/// Runs the per-atom coordinate ascent for a single kappa.
pub fn fit_single_atom(
    d: &DesignBlocks,
    h: &Hyperparams,
    kappa: f64,
    opts: &FitOptions,
) -> Result<PerAtomFit> {
    opts.validate()?;
    if !(kappa > 0.0 && kappa.is_finite()) {
        return domain(format!("kappa must be positive, got {kappa}"));
    }
    let init = match &opts.init {
        Some(init) => init.clone(),
        None => InitState::unit(d.n(), d.block_sizes().len()),
    };
    fit_atom_from(d, &Precomputed::new(d), h, kappa, opts, init)
}

fn validate_init(d: &DesignBlocks, init: &InitState) -> Result<()> {
    if init.c_alpha.len() != d.n() || init.recip_sigma2.len() != d.block_sizes().len() {
        return domain("initial state dimensions do not match the design");
    }
    if init.c_alpha.iter().any(|&c| !(c > 0.0 && c.is_finite()))
        || init
            .recip_sigma2
            .iter()
            .any(|&v| !(v > 0.0 && v.is_finite()))
    {
        return domain("initial tilts and reciprocal moments must be positive");
    }
    Ok(())
}

fn fit_atom_from(
    d: &DesignBlocks,
    pre: &Precomputed,
    h: &Hyperparams,
    kappa: f64,
    opts: &FitOptions,
    init: InitState,
) -> Result<PerAtomFit> {
    validate_init(d, &init)?;
    let c = d.c();
    let n = d.n();
    let p = d.p();
    let blocks = d.block_sizes();
    let log_kappa = kappa.ln();

    let mut c_alpha = init.c_alpha;
    let mut vc = VarianceComponents::with_recip_sigma2(init.recip_sigma2);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last: Option<(DVector<f64>, DMatrix<f64>, f64, f64)> = None;

    for iteration in 1..=opts.max_iter {
        let mu_alpha = DVector::from_iterator(
            n,
            pre.y
                .iter()
                .zip(c_alpha.iter())
                .map(|(&yi, &ci)| 2.0 * (yi + kappa) * lambda_jj_unchecked(ci)),
        );
        let prior_diag = prior_precision_diag(p, blocks, h.sigma_beta(), &vc.recip_sigma2);

        let mut weighted = c.clone();
        for (mut row, &w) in weighted.row_iter_mut().zip(mu_alpha.iter()) {
            row *= w;
        }
        let mut precision = c.tr_mul(&weighted);
        for (i, v) in prior_diag.iter().enumerate() {
            precision[(i, i)] += v;
        }
        let chol = symmetrize(precision)
            .cholesky()
            .ok_or(NbvbError::NotPositiveDefinite { kappa, iteration })?;
        let log_det_sigma = -2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        let sigma = symmetrize(chol.inverse());

        let rhs = 0.5 * (&pre.cty - kappa * &pre.ct1) + log_kappa * c.tr_mul(&mu_alpha);
        let mu = chol.solve(&rhs);

        // diag(C Sigma C^T)_i = ||L^{-1} c_i||^2
        let whitened = chol
            .l()
            .solve_lower_triangular(&c.transpose())
            .ok_or(NbvbError::NotPositiveDefinite { kappa, iteration })?;
        let eta = c * &mu;
        for i in 0..n {
            let quad = whitened.column(i).norm_squared();
            let centred = eta[i] - log_kappa;
            c_alpha[i] = (quad + centred * centred).sqrt();
        }

        vc.update(&mu, &sigma, p, blocks, h.s_sigma());

        let weighted_log_cosh: f64 = pre
            .y
            .iter()
            .zip(c_alpha.iter())
            .map(|(&yi, &ci)| (yi + kappa) * log_cosh_half_unchecked(ci))
            .sum();
        let parts = ElboParts {
            kappa,
            mu: &mu,
            sigma: &sigma,
            log_det_sigma,
            cty: &pre.cty,
            ct1: &pre.ct1,
            weighted_log_cosh,
        };
        let elbo = elbo_core(&parts, &vc, h, p, blocks);
        if !elbo.is_finite() {
            return Err(NbvbError::NotPositiveDefinite { kappa, iteration });
        }
        let previous = trace.last().copied();
        trace.push(elbo);
        last = Some((mu, sigma, log_det_sigma, elbo));
        if let Some(prev) = previous {
            if (elbo - prev).abs() / (1.0 + elbo.abs()) < opts.tol {
                converged = true;
                break;
            }
        }
    }

    let (mu, sigma, log_det_sigma, elbo) = last.expect("max_iter >= 1");
    let lgamma_sum: f64 = pre.y.iter().map(|&yi| ln_gamma(yi + kappa)).sum();
    let marginal = elbo + marginal_offset(kappa, n as f64, pre.y_sum, lgamma_sum);
    Ok(PerAtomFit {
        kappa,
        mu,
        sigma,
        log_det_sigma,
        c_alpha,
        vc,
        elbo,
        marginal,
        iterations: trace.len(),
        converged,
        elbo_trace: trace,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Re-evaluates l_q(kappa) from a fitted state, independently of the
/// engine's cached intermediates.
pub fn compute_elbo(state: &PerAtomFit, d: &DesignBlocks, h: &Hyperparams) -> Result<f64> {
    let m = d.dim();
    if state.mu.len() != m || state.sigma.shape() != (m, m) || state.c_alpha.len() != d.n() {
        return domain("fitted state dimensions do not match the design");
    }
    if state.vc.recip_sigma2.len() != d.block_sizes().len() {
        return domain("variance component count does not match the block count");
    }
    let chol =
        state.sigma.clone().cholesky().ok_or_else(|| {
            NbvbError::Domain("stored covariance is not positive definite".into())
        })?;
    let log_det_sigma = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let pre = Precomputed::new(d);
    let weighted_log_cosh: f64 = d
        .y()
        .iter()
        .zip(state.c_alpha.iter())
        .map(|(&yi, &ci)| (yi as f64 + state.kappa) * log_cosh_half_unchecked(ci))
        .sum();
    let parts = ElboParts {
        kappa: state.kappa,
        mu: &state.mu,
        sigma: &state.sigma,
        log_det_sigma,
        cty: &pre.cty,
        ct1: &pre.ct1,
        weighted_log_cosh,
    };
    Ok(elbo_core(&parts, &state.vc, h, d.p(), d.block_sizes()))
}

/// Fits every atom of the grid, in ascending kappa order.
pub fn fit_atoms(
    d: &DesignBlocks,
    h: &Hyperparams,
    g: &AtomGrid,
    opts: &FitOptions,
) -> Result<Vec<PerAtomFit>> {
    opts.validate()?;
    let pre = Precomputed::new(d);
    let default_init = || InitState::unit(d.n(), d.block_sizes().len());
    if let Some(init) = &opts.init {
        return g
            .atoms()
            .iter()
            .map(|&k| fit_atom_from(d, &pre, h, k, opts, init.clone()))
            .collect();
    }
    if opts.warm_start {
        let mut fits: Vec<PerAtomFit> = Vec::with_capacity(g.len());
        for &kappa in g.atoms() {
            let init = fits
                .last()
                .map(InitState::from)
                .unwrap_or_else(default_init);
            fits.push(fit_atom_from(d, &pre, h, kappa, opts, init)?);
        }
        Ok(fits)
    } else {
        g.atoms()
            .par_iter()
            .map(|&k| fit_atom_from(d, &pre, h, k, opts, default_init()))
            .collect()
    }
}

/// Fits the whole grid and combines the atoms into the mixture posterior.
pub fn fit_batch(
    d: &DesignBlocks,
    h: &Hyperparams,
    g: &AtomGrid,
    opts: &FitOptions,
) -> Result<MixturePosterior> {
    let fits = fit_atoms(d, h, g, opts)?;
    MixturePosterior::from_fits(&fits, g, d.p(), d.block_sizes().to_vec())
}
