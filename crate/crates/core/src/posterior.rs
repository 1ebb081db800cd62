//! The kappa mixture posterior and the summaries read off it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::batch::{PerAtomFit, VarianceComponents};
use crate::error::{domain, Result};
use crate::model::AtomGrid;
use crate::specfun::ln_gamma;

/// Gaussian and Inverse-Gamma parameters conditional on one retained atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomComponent {
    pub kappa: f64,
    pub log_prior: f64,
    #[serde(with = "crate::serde_util::vector")]
    pub mu: DVector<f64>,
    #[serde(with = "crate::serde_util::matrix")]
    pub sigma: DMatrix<f64>,
    pub log_det_sigma: f64,
    pub vc: VarianceComponents,
    pub elbo: f64,
    pub marginal: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Normalized weights over kappa with per-atom components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePosterior {
    weights: Vec<f64>,
    components: Vec<AtomComponent>,
    p: usize,
    block_sizes: Vec<usize>,
    basis_meta: Option<Vec<SplineBasis>>,
}

/// Normalizes log weights with the log-sum-exp shift.
pub fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = log_w.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / total).collect()
}

impl MixturePosterior {
    /// Weights each component by exp(log prior + marginal), normalized.
    pub fn from_components(
        components: Vec<AtomComponent>,
        p: usize,
        block_sizes: Vec<usize>,
    ) -> Result<Self> {
        if components.is_empty() {
            return domain("a mixture needs at least one component");
        }
        let m = p + block_sizes.iter().sum::<usize>();
        for c in &components {
            if c.mu.len() != m
                || c.sigma.shape() != (m, m)
                || c.vc.lam_sigma2.len() != block_sizes.len()
            {
                return domain("component dimensions do not match the block structure");
            }
            if !(c.marginal + c.log_prior).is_finite() {
                return domain(format!("non-finite log weight at kappa = {}", c.kappa));
            }
        }
        let log_w: Vec<f64> = components
            .iter()
            .map(|c| c.log_prior + c.marginal)
            .collect();
        let weights = normalize_log_weights(&log_w);
        Ok(Self {
            weights,
            components,
            p,
            block_sizes,
            basis_meta: None,
        })
    }

    pub fn from_fits(
        fits: &[PerAtomFit],
        g: &AtomGrid,
        p: usize,
        block_sizes: Vec<usize>,
    ) -> Result<Self> {
        if fits.len() != g.len() {
            return domain("one fit per atom is required");
        }
        let components = fits
            .iter()
            .zip(g.log_prior())
            .map(|(f, &lp)| f.component(lp))
            .collect();
        Self::from_components(components, p, block_sizes)
    }

    pub fn with_basis_meta(mut self, bases: Vec<SplineBasis>) -> Self {
        self.basis_meta = Some(bases);
        self
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[AtomComponent] {
        &self.components
    }

    pub fn atoms(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.kappa).collect()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.p + self.block_sizes.iter().sum::<usize>()
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn basis_meta(&self) -> Option<&[SplineBasis]> {
        self.basis_meta.as_deref()
    }

    /// The same mixture with its components listed in the given order.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.components.len()];
        if order.len() != seen.len()
            || order
                .iter()
                .any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true))
        {
            return domain("order must be a permutation of the components");
        }
        Ok(Self {
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            components: order.iter().map(|&i| self.components[i].clone()).collect(),
            p: self.p,
            block_sizes: self.block_sizes.clone(),
            basis_meta: self.basis_meta.clone(),
        })
    }

    fn live(&self) -> impl Iterator<Item = (f64, &AtomComponent)> {
        self.weights
            .iter()
            .copied()
            .zip(&self.components)
            .filter(|(w, _)| *w > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaPmf {
    pub atoms: Vec<f64>,
    pub probs: Vec<f64>,
    pub mean: f64,
    pub mean_log: f64,
    pub sd_log: f64,
}

pub fn kappa_pmf(m: &MixturePosterior) -> KappaPmf {
    let atoms = m.atoms();
    let probs = m.weights.clone();
    let mean = atoms.iter().zip(&probs).map(|(k, w)| k * w).sum();
    let mean_log: f64 = atoms.iter().zip(&probs).map(|(k, w)| k.ln() * w).sum();
    let var_log: f64 = atoms
        .iter()
        .zip(&probs)
        .map(|(k, w)| w * (k.ln() - mean_log).powi(2))
        .sum();
    KappaPmf {
        atoms,
        probs,
        mean,
        mean_log,
        sd_log: var_log.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Response-scale summary: exponentiated eta endpoints, the lognormal
/// mixture mean, and exp of the eta mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseSummary {
    pub mean: f64,
    pub exp_eta_mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// A univariate Gaussian mixture (weight, mean, sd).
#[derive(Debug, Clone)]
pub struct GaussianMixture1 {
    parts: Vec<(f64, f64, f64)>,
}

impl GaussianMixture1 {
    pub fn new(parts: Vec<(f64, f64, f64)>) -> Self {
        Self { parts }
    }

    pub fn mean(&self) -> f64 {
        self.parts.iter().map(|(w, m, _)| w * m).sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.parts
            .iter()
            .map(|&(w, m, s)| {
                let c = if s > 0.0 {
                    std_normal_cdf((x - m) / s)
                } else if x >= m {
                    1.0
                } else {
                    0.0
                };
                w * c
            })
            .sum()
    }

    /// Quantile by bisection on the CDF, to an absolute width of 1e-10.
    pub fn quantile(&self, prob: f64) -> f64 {
        let mut lo = self
            .parts
            .iter()
            .map(|(_, m, s)| m - 40.0 * s)
            .fold(f64::INFINITY, f64::min)
            - 1e-9;
        let mut hi = self
            .parts
            .iter()
            .map(|(_, m, s)| m + 40.0 * s)
            .fold(f64::NEG_INFINITY, f64::max)
            + 1e-9;
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo < 1e-10 {
                break;
            }
            if self.cdf(mid) < prob {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return domain(format!("credible level must lie in (0, 1), got {level}"));
    }
    Ok(())
}

fn row_mixture(m: &MixturePosterior, row: &DVector<f64>) -> GaussianMixture1 {
    GaussianMixture1::new(
        m.live()
            .map(|(w, c)| {
                let var = (&c.sigma * row).dot(row);
                (w, row.dot(&c.mu), var.max(0.0).sqrt())
            })
            .collect(),
    )
}

fn check_rows(m: &MixturePosterior, rows: &DMatrix<f64>) -> Result<()> {
    if rows.ncols() != m.dim() {
        return domain(format!(
            "prediction rows have {} columns, expected {}",
            rows.ncols(),
            m.dim()
        ));
    }
    Ok(())
}

/// Pointwise mean and equal-tailed credible bounds of c^T (beta, u).
pub fn linear_predictor_summary(
    m: &MixturePosterior,
    rows: &DMatrix<f64>,
    level: f64,
) -> Result<Vec<PredictorSummary>> {
    check_level(level)?;
    check_rows(m, rows)?;
    let alpha = 0.5 * (1.0 - level);
    Ok(rows
        .row_iter()
        .map(|r| {
            let mix = row_mixture(m, &r.transpose());
            PredictorSummary {
                mean: mix.mean(),
                lower: mix.quantile(alpha),
                upper: mix.quantile(1.0 - alpha),
            }
        })
        .collect())
}

pub fn response_summary(
    m: &MixturePosterior,
    rows: &DMatrix<f64>,
    level: f64,
) -> Result<Vec<ResponseSummary>> {
    check_level(level)?;
    check_rows(m, rows)?;
    let alpha = 0.5 * (1.0 - level);
    Ok(rows
        .row_iter()
        .map(|r| {
            let mix = row_mixture(m, &r.transpose());
            let mean = mix
                .parts
                .iter()
                .map(|(w, mu, s)| w * (mu + 0.5 * s * s).exp())
                .sum();
            ResponseSummary {
                mean,
                exp_eta_mean: mix.mean().exp(),
                lower: mix.quantile(alpha).exp(),
                upper: mix.quantile(1.0 - alpha).exp(),
            }
        })
        .collect())
}

fn check_block(m: &MixturePosterior, block: usize) -> Result<f64> {
    match m.block_sizes.get(block) {
        Some(&k) => Ok(0.5 * (k as f64 + 1.0)),
        None => domain(format!(
            "block index {block} out of range for {} blocks",
            m.block_sizes.len()
        )),
    }
}

/// Mixture density of sigma_j^2 (zero-based block index) at each grid point.
pub fn sigma2_density(m: &MixturePosterior, block: usize, grid: &[f64]) -> Result<Vec<f64>> {
    let shape = check_block(m, block)?;
    if grid.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return domain("sigma^2 grid points must be positive and finite");
    }
    let lg = ln_gamma(shape);
    Ok(grid
        .iter()
        .map(|&x| {
            let terms: Vec<f64> = m
                .live()
                .map(|(w, c)| {
                    let rate = c.vc.lam_sigma2[block];
                    w.ln() + shape * rate.ln() - lg - (shape + 1.0) * x.ln() - rate / x
                })
                .collect();
            let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                0.0
            } else {
                max.exp() * terms.iter().map(|t| (t - max).exp()).sum::<f64>()
            }
        })
        .collect())
}

/// Mixture CDF of sigma_j^2.
pub fn sigma2_cdf(m: &MixturePosterior, block: usize, x: f64) -> Result<f64> {
    let shape = check_block(m, block)?;
    if !(x > 0.0) {
        return Ok(0.0);
    }
    Ok(m.live()
        .map(|(w, c)| w * statrs::function::gamma::gamma_ur(shape, c.vc.lam_sigma2[block] / x))
        .sum())
}

/// Mixture quantile of sigma_j^2, by bisection in log scale.
pub fn sigma2_quantile(m: &MixturePosterior, block: usize, prob: f64) -> Result<f64> {
    let shape = check_block(m, block)?;
    if !(prob > 0.0 && prob < 1.0) {
        return domain("probability must lie in (0, 1)");
    }
    let centre = m
        .live()
        .map(|(w, c)| w * c.vc.lam_sigma2[block] / shape)
        .sum::<f64>();
    let (mut lo, mut hi) = (centre.ln() - 1.0, centre.ln() + 1.0);
    while sigma2_cdf(m, block, lo.exp())? > prob {
        lo -= 2.0 * (hi - lo);
    }
    while sigma2_cdf(m, block, hi.exp())? < prob {
        hi += 2.0 * (hi - lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-13 {
            break;
        }
        if sigma2_cdf(m, block, mid.exp())? < prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Geometric grid between the 1e-8 and 1 - 1e-8 quantiles of sigma_j^2.
pub fn sigma2_grid(m: &MixturePosterior, block: usize, size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return domain("grid needs at least two points");
    }
    let lo = sigma2_quantile(m, block, 1e-8)?.ln();
    let hi = sigma2_quantile(m, block, 1.0 - 1e-8)?.ln();
    let step = (hi - lo) / (size - 1) as f64;
    Ok((0..size).map(|i| (lo + step * i as f64).exp()).collect())
}

/// A density tabulated on an increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedDensity {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 2 {
            return domain("grid and values need equal length of at least two");
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|v| !v.is_finite()) {
            return domain("grid must be finite and strictly increasing");
        }
        if values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return domain("density values must be nonnegative and finite");
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn trapezoid(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.grid
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, v)| 0.5 * (x[1] - x[0]) * (f(v[0]) + f(v[1])))
            .sum()
    }

    pub fn integral(&self) -> f64 {
        self.trapezoid(|v| v)
    }
}

/// 100 (1 - total variation distance), integrated by the trapezoid rule.
pub fn accuracy_score(f: &TabulatedDensity, g: &TabulatedDensity) -> Result<f64> {
    if f.grid != g.grid {
        return domain("densities must share the same grid");
    }
    for (name, d) in [("first", f), ("second", g)] {
        let total = d.integral();
        if (total - 1.0).abs() > 1e-3 {
            return domain(format!("{name} density integrates to {total}, not 1"));
        }
    }
    let diff = TabulatedDensity {
        grid: f.grid.clone(),
        values: f
            .values
            .iter()
            .zip(&g.values)
            .map(|(a, b)| (a - b).abs())
            .collect(),
    };
    Ok((100.0 * (1.0 - 0.5 * diff.integral())).clamp(0.0, 100.0))
}

/// Discrete version: the sum over a common support replaces the integral.
pub fn accuracy_score_discrete(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() || f.is_empty() {
        return domain("pmfs must share a nonempty support");
    }
    for (name, d) in [("first", f), ("second", g)] {
        if d.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return domain(format!("{name} pmf has a negative or non-finite entry"));
        }
        let total: f64 = d.iter().sum();
        if (total - 1.0).abs() > 1e-3 {
            return domain(format!("{name} pmf sums to {total}, not 1"));
        }
    }
    let tv: f64 = f.iter().zip(g).map(|(a, b)| (a - b).abs()).sum();
    Ok((100.0 * (1.0 - 0.5 * tv)).clamp(0.0, 100.0))
}
