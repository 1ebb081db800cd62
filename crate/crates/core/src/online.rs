//! Online structured mean field variational Bayes.
//!
//! After a batch warm-up fit the raw data are dropped; each new observation
//! updates fixed-size accumulators and triggers one pass of the Gaussian and
//! variance-component updates for every retained kappa atom.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::batch::{
    elbo_core, fit_atoms, marginal_offset, prior_precision_diag, ElboParts, FitOptions,
    VarianceComponents,
};
use crate::error::{domain, NbvbError, Result};
use crate::model::{AtomGrid, DesignBlocks, Hyperparams};
use crate::posterior::{kappa_pmf, AtomComponent, MixturePosterior};
use crate::specfun::{lambda_jj_unchecked, ln_gamma, log_cosh_half_unchecked};

/// Accumulators that depend on kappa through the tilts c(alpha | kappa).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomStats {
    pub kappa: f64,
    /// 1^T log Gamma(y + kappa)
    pub lgamma_sum: f64,
    /// C^T lambda(c)
    #[serde(with = "crate::serde_util::vector")]
    pub c_lam: DVector<f64>,
    /// C^T (y . lambda(c))
    #[serde(with = "crate::serde_util::vector")]
    pub c_ylam: DVector<f64>,
    /// C^T diag(lambda(c)) C
    #[serde(with = "crate::serde_util::matrix")]
    pub c_lam_c: DMatrix<f64>,
    /// C^T diag(y . lambda(c)) C
    #[serde(with = "crate::serde_util::matrix")]
    pub c_ylam_c: DMatrix<f64>,
    /// 1^T log cosh(c / 2)
    pub logcosh_sum: f64,
    /// y^T log cosh(c / 2)
    pub y_logcosh: f64,
}

impl AtomStats {
    fn empty(kappa: f64, m: usize) -> Self {
        Self {
            kappa,
            lgamma_sum: 0.0,
            c_lam: DVector::zeros(m),
            c_ylam: DVector::zeros(m),
            c_lam_c: DMatrix::zeros(m, m),
            c_ylam_c: DMatrix::zeros(m, m),
            logcosh_sum: 0.0,
            y_logcosh: 0.0,
        }
    }

    /// Adds one observation with response `y`, design row `row` and tilt `c`.
    pub fn absorb(&mut self, y: u64, row: &DVector<f64>, c: f64) {
        let yf = y as f64;
        let lam = lambda_jj_unchecked(c);
        let lc = log_cosh_half_unchecked(c);
        self.lgamma_sum += ln_gamma(yf + self.kappa);
        self.c_lam.axpy(lam, row, 1.0);
        self.c_ylam.axpy(yf * lam, row, 1.0);
        self.c_lam_c.ger(lam, row, row, 1.0);
        self.c_ylam_c.ger(yf * lam, row, row, 1.0);
        self.logcosh_sum += lc;
        self.y_logcosh += yf * lc;
    }
}

/// The streaming store: kappa-free totals plus per-atom accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuffStats {
    pub n: u64,
    /// y^T 1
    pub y_sum: f64,
    /// C^T 1
    #[serde(with = "crate::serde_util::vector")]
    pub c_sum: DVector<f64>,
    /// C^T y
    #[serde(with = "crate::serde_util::vector")]
    pub cy: DVector<f64>,
    pub per_atom: Vec<AtomStats>,
}

impl SuffStats {
    fn absorb_totals(&mut self, y: u64, row: &DVector<f64>) {
        self.n += 1;
        self.y_sum += y as f64;
        self.c_sum += row;
        self.cy.axpy(y as f64, row, 1.0);
    }
}

/// Current q(beta, u | kappa) and variance-component parameters of one atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomState {
    pub kappa: f64,
    pub log_prior: f64,
    #[serde(with = "crate::serde_util::vector")]
    pub mu: DVector<f64>,
    #[serde(with = "crate::serde_util::matrix")]
    pub sigma: DMatrix<f64>,
    pub log_det_sigma: f64,
    pub vc: VarianceComponents,
    pub warm_iterations: usize,
    pub warm_converged: bool,
}

/// Moments of log kappa under the warm-up kappa posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupSummary {
    pub mean_log_kappa: f64,
    pub sd_log_kappa: f64,
    pub n_warm: u64,
    pub initial_atoms: Vec<f64>,
    /// True when every warm-up atom fit met the tolerance.
    pub all_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    /// Width multiplier of the retained log-kappa interval.
    pub tau: f64,
    /// Reduction stops when it would leave fewer atoms than this.
    pub floor: usize,
    /// Solve for the Gaussian factor every `thin`-th observation.
    pub thin: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            tau: 3.5,
            floor: 5,
            thin: 1,
        }
    }
}

impl OnlineConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return domain(format!("tau must be positive, got {}", self.tau));
        }
        if self.floor == 0 || self.thin == 0 {
            return domain("floor and thin must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineState {
    hyper: Hyperparams,
    p: usize,
    block_sizes: Vec<usize>,
    config: OnlineConfig,
    warm: WarmupSummary,
    stats: SuffStats,
    per_atom: Vec<AtomState>,
    since_solve: u64,
}

/// Fits the warm-up batch and seeds the streaming store from it.
pub fn warmup(
    d_warm: &DesignBlocks,
    h: &Hyperparams,
    g: &AtomGrid,
    opts: &FitOptions,
    config: OnlineConfig,
) -> Result<OnlineState> {
    config.validate()?;
    if d_warm.n() == 0 {
        return domain("warm-up data must be nonempty");
    }
    let fits = fit_atoms(d_warm, h, g, opts)?;
    let posterior =
        MixturePosterior::from_fits(&fits, g, d_warm.p(), d_warm.block_sizes().to_vec())?;
    let pmf = kappa_pmf(&posterior);

    let c = d_warm.c();
    let m = d_warm.dim();
    let y = d_warm.y();
    let rows: Vec<DVector<f64>> = c.row_iter().map(|r| r.transpose()).collect();
    let mut stats = SuffStats {
        n: 0,
        y_sum: 0.0,
        c_sum: DVector::zeros(m),
        cy: DVector::zeros(m),
        per_atom: Vec::with_capacity(fits.len()),
    };
    for (&yi, row) in y.iter().zip(&rows) {
        stats.absorb_totals(yi, row);
    }
    let mut per_atom = Vec::with_capacity(fits.len());
    for (fit, &log_prior) in fits.iter().zip(g.log_prior()) {
        let mut acc = AtomStats::empty(fit.kappa, m);
        for ((&yi, row), &ci) in y.iter().zip(&rows).zip(fit.c_alpha.iter()) {
            acc.absorb(yi, row, ci);
        }
        stats.per_atom.push(acc);
        per_atom.push(AtomState {
            kappa: fit.kappa,
            log_prior,
            mu: fit.mu.clone(),
            sigma: fit.sigma.clone(),
            log_det_sigma: fit.log_det_sigma,
            vc: fit.vc.clone(),
            warm_iterations: fit.iterations,
            warm_converged: fit.converged,
        });
    }
    let warm = WarmupSummary {
        mean_log_kappa: pmf.mean_log,
        sd_log_kappa: pmf.sd_log,
        n_warm: d_warm.n() as u64,
        initial_atoms: g.atoms().to_vec(),
        all_converged: fits.iter().all(|f| f.converged),
    };
    Ok(OnlineState {
        hyper: *h,
        p: d_warm.p(),
        block_sizes: d_warm.block_sizes().to_vec(),
        config,
        warm,
        stats,
        per_atom,
        since_solve: 0,
    })
}

impl OnlineState {
    pub fn stats(&self) -> &SuffStats {
        &self.stats
    }

    pub fn warm(&self) -> &WarmupSummary {
        &self.warm
    }

    pub fn config(&self) -> &OnlineConfig {
        &self.config
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn dim(&self) -> usize {
        self.p + self.block_sizes.iter().sum::<usize>()
    }

    pub fn per_atom(&self) -> &[AtomState] {
        &self.per_atom
    }

    pub fn active_atoms(&self) -> Vec<f64> {
        self.per_atom.iter().map(|a| a.kappa).collect()
    }

    /// Number of stored floating-point values; depends on the retained atom
    /// count and the coefficient dimension only.
    pub fn stored_floats(&self) -> usize {
        let m = self.dim();
        let r = self.block_sizes.len();
        let per_atom = 2 * m + 2 * m * m + 4 + (m + m * m + 2 + 4 * r) + 2;
        2 * m + 2 + self.per_atom.len() * per_atom + self.warm.initial_atoms.len()
    }

    /// Half-width of the retained log-kappa interval at the current n.
    pub fn reduction_half_width(&self) -> f64 {
        let ratio = self.warm.n_warm as f64 / self.stats.n.max(1) as f64;
        self.config.tau * self.warm.sd_log_kappa * ratio.sqrt()
    }

    /// Drops atoms outside the shrinking log-kappa interval, unless that
    /// would leave fewer than `floor` atoms.
    pub fn reduce_atoms(&mut self) {
        let half = self.reduction_half_width();
        let centre = self.warm.mean_log_kappa;
        let keep: Vec<bool> = self
            .per_atom
            .iter()
            .map(|a| (a.kappa.ln() - centre).abs() <= half)
            .collect();
        let kept = keep.iter().filter(|&&k| k).count();
        if kept < self.config.floor || kept == keep.len() {
            return;
        }
        let mut flags = keep.iter();
        self.per_atom.retain(|_| *flags.next().unwrap());
        let mut flags = keep.iter();
        self.stats.per_atom.retain(|_| *flags.next().unwrap());
    }

    /// Tilt for a new observation under the current q(beta, u | kappa).
    fn new_tilt(atom: &AtomState, row: &DVector<f64>) -> f64 {
        let quad = (&atom.sigma * row).dot(row);
        let centred = atom.mu.dot(row) - atom.kappa.ln();
        (quad.max(0.0) + centred * centred).sqrt()
    }

    /// Absorbs one observation and refreshes every retained atom.
    pub fn update_one(&mut self, y_new: u64, c_new: &[f64]) -> Result<()> {
        self.update_logged(y_new, c_new).map(|_| ())
    }

    /// As `update_one`, returning the tilt computed for each retained atom.
    pub fn update_logged(&mut self, y_new: u64, c_new: &[f64]) -> Result<Vec<(f64, f64)>> {
        let m = self.dim();
        if c_new.len() != m {
            return domain(format!(
                "design row has {} entries, expected {m}",
                c_new.len()
            ));
        }
        if c_new.iter().any(|v| !v.is_finite()) {
            return domain("design row contains non-finite values");
        }
        let row = DVector::from_column_slice(c_new);
        let mut next = self.clone();
        next.stats.absorb_totals(y_new, &row);
        next.reduce_atoms();
        next.since_solve += 1;
        let solve = next.since_solve >= next.config.thin;
        if solve {
            next.since_solve = 0;
        }
        let observation = next.stats.n;
        let mut tilts = Vec::with_capacity(next.per_atom.len());
        let OnlineState {
            hyper,
            p,
            block_sizes,
            stats,
            per_atom,
            ..
        } = &mut next;
        for (atom, acc) in per_atom.iter_mut().zip(stats.per_atom.iter_mut()) {
            let c = Self::new_tilt(atom, &row);
            tilts.push((atom.kappa, c));
            acc.absorb(y_new, &row, c);
            if solve {
                solve_atom(atom, acc, &stats.cy, &stats.c_sum, hyper, *p, block_sizes).map_err(
                    |_| NbvbError::OnlineNotPositiveDefinite {
                        kappa: atom.kappa,
                        observation,
                    },
                )?;
            }
        }
        *self = next;
        Ok(tilts)
    }

    /// Per-atom (l_q(kappa), l(kappa)) evaluated from the accumulators.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.per_atom
            .iter()
            .zip(&self.stats.per_atom)
            .map(|(atom, acc)| {
                let parts = ElboParts {
                    kappa: atom.kappa,
                    mu: &atom.mu,
                    sigma: &atom.sigma,
                    log_det_sigma: atom.log_det_sigma,
                    cty: &self.stats.cy,
                    ct1: &self.stats.c_sum,
                    weighted_log_cosh: acc.y_logcosh + atom.kappa * acc.logcosh_sum,
                };
                let elbo = elbo_core(&parts, &atom.vc, &self.hyper, self.p, &self.block_sizes);
                (
                    elbo,
                    elbo + marginal_offset(
                        atom.kappa,
                        self.stats.n as f64,
                        self.stats.y_sum,
                        acc.lgamma_sum,
                    ),
                )
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| NbvbError::Snapshot(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let state: Self =
            serde_json::from_str(s).map_err(|e| NbvbError::Snapshot(e.to_string()))?;
        state.check()?;
        Ok(state)
    }

    fn check(&self) -> Result<()> {
        let m = self.dim();
        let bad = |msg: &str| Err(NbvbError::Snapshot(msg.to_string()));
        if self.per_atom.len() != self.stats.per_atom.len() || self.per_atom.is_empty() {
            return bad("atom state and accumulator counts differ");
        }
        if self.stats.c_sum.len() != m || self.stats.cy.len() != m {
            return bad("accumulator dimension mismatch");
        }
        for (a, s) in self.per_atom.iter().zip(&self.stats.per_atom) {
            if a.kappa != s.kappa
                || a.mu.len() != m
                || a.sigma.shape() != (m, m)
                || s.c_lam.len() != m
                || s.c_lam_c.shape() != (m, m)
                || s.c_ylam_c.shape() != (m, m)
                || a.vc.lam_sigma2.len() != self.block_sizes.len()
            {
                return bad("per-atom dimension mismatch");
            }
        }
        self.config
            .validate()
            .or_else(|_| bad("invalid online configuration"))
    }
}

fn solve_atom(
    atom: &mut AtomState,
    acc: &AtomStats,
    cy: &DVector<f64>,
    c_sum: &DVector<f64>,
    h: &Hyperparams,
    p: usize,
    blocks: &[usize],
) -> std::result::Result<(), ()> {
    let kappa = atom.kappa;
    let mut precision = 2.0 * &acc.c_ylam_c + (2.0 * kappa) * &acc.c_lam_c;
    for (i, v) in prior_precision_diag(p, blocks, h.sigma_beta(), &atom.vc.recip_sigma2)
        .iter()
        .enumerate()
    {
        precision[(i, i)] += v;
    }
    let precision = (&precision + precision.transpose()) * 0.5;
    let chol = precision.cholesky().ok_or(())?;
    let log_det_sigma = -2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let inv = chol.inverse();
    let sigma = (&inv + inv.transpose()) * 0.5;
    let rhs = 0.5 * (cy - kappa * c_sum) + (2.0 * kappa.ln()) * (&acc.c_ylam + kappa * &acc.c_lam);
    let mu = chol.solve(&rhs);
    if !log_det_sigma.is_finite() || mu.iter().any(|v| !v.is_finite()) {
        return Err(());
    }
    atom.vc.update(&mu, &sigma, p, blocks, h.s_sigma());
    atom.mu = mu;
    atom.sigma = sigma;
    atom.log_det_sigma = log_det_sigma;
    Ok(())
}

/// The current mixture posterior over the retained atoms.
pub fn snapshot_posterior(s: &OnlineState) -> Result<MixturePosterior> {
    let components = s
        .per_atom
        .iter()
        .zip(s.bounds())
        .map(|(a, (elbo, marginal))| AtomComponent {
            kappa: a.kappa,
            log_prior: a.log_prior,
            mu: a.mu.clone(),
            sigma: a.sigma.clone(),
            log_det_sigma: a.log_det_sigma,
            vc: a.vc.clone(),
            elbo,
            marginal,
            iterations: a.warm_iterations,
            converged: a.warm_converged,
        })
        .collect();
    MixturePosterior::from_components(components, s.p, s.block_sizes.clone())
}
