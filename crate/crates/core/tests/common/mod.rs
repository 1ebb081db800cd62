#![allow(dead_code)]

use nalgebra::DMatrix;
use nbvb_core::{
    assemble_design, simulate_dataset, AtomGrid, DesignBlocks, MeanLink, Scenario, SplineBasis,
    SplineTerm,
};

/// Two-term additive design: n observations, 15 interior knots per term.
pub fn additive_design(n: usize, seed: u64) -> DesignBlocks {
    additive_design_knots(n, 15, seed)
}

pub fn additive_design_knots(n: usize, knots: usize, seed: u64) -> DesignBlocks {
    let sim = simulate_dataset(Scenario::Additive2Term, n, 3.8, MeanLink::Exp, seed).unwrap();
    let terms: Vec<SplineTerm> = sim
        .covariates
        .iter()
        .map(|c| SplineTerm {
            covariate: c,
            num_interior_knots: knots,
            boundary: None,
        })
        .collect();
    let cols: Vec<&[f64]> = sim.covariates.iter().map(|c| c.as_slice()).collect();
    assemble_design(sim.y, &cols, &terms).unwrap().0
}

/// One-term design on [0, 1] with a fixed boundary, suitable for streaming.
pub fn nonpar_design(n: usize, kappa: f64, knots: usize, seed: u64) -> (DesignBlocks, SplineBasis) {
    let sim = simulate_dataset(Scenario::Nonpar1Term, n, kappa, MeanLink::Exp, seed).unwrap();
    let x = &sim.covariates[0];
    let term = SplineTerm {
        covariate: x,
        num_interior_knots: knots,
        boundary: Some((0.0, 1.0)),
    };
    let (d, mut bases) = assemble_design(sim.y.clone(), &[x], &[term]).unwrap();
    (d, bases.remove(0))
}

/// Geometric grid from kappa/10 to 10 kappa with prior exp(-kappa/100).
pub fn decade_grid(kappa_true: f64, size: usize) -> AtomGrid {
    AtomGrid::geometric(kappa_true / 10.0, kappa_true * 10.0, size, 100.0).unwrap()
}

/// Rows [1, x, z(x)] on a regular grid over [0, 1].
pub fn curve_rows(basis: &SplineBasis, points: usize) -> DMatrix<f64> {
    let grid: Vec<f64> = (0..points)
        .map(|i| i as f64 / (points - 1) as f64)
        .collect();
    let z = basis.evaluate(&grid).unwrap();
    let mut rows = DMatrix::zeros(points, 2 + z.ncols());
    for (i, &x) in grid.iter().enumerate() {
        rows[(i, 0)] = 1.0;
        rows[(i, 1)] = x;
    }
    rows.view_mut((0, 2), (points, z.ncols())).copy_from(&z);
    rows
}

pub fn row(d: &DesignBlocks, i: usize) -> Vec<f64> {
    d.c().row(i).iter().copied().collect()
}

/// Intercept-only, no random effects: every update is a scalar recursion,
/// written out line by line without the library's linear algebra.
pub struct ScalarOracle {
    pub mu: f64,
    pub sigma: f64,
    pub c: Vec<f64>,
    pub elbo: f64,
    pub marginal: f64,
    pub iterations: usize,
}

pub fn scalar_oracle(
    y: &[u64],
    kappa: f64,
    sigma_beta: f64,
    tol: f64,
    max_iter: usize,
) -> ScalarOracle {
    let lam = |x: f64| {
        if x == 0.0 {
            0.125
        } else {
            (x / 2.0).tanh() / (4.0 * x)
        }
    };
    let logcosh = |x: f64| (x / 2.0).cosh().ln();
    let n = y.len() as f64;
    let sum_y: f64 = y.iter().map(|&v| v as f64).sum();
    let mut c = vec![1.0; y.len()];
    let (mut mu, mut sigma, mut elbo) = (0.0, 0.0, f64::NAN);
    let mut prev = f64::NAN;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let mut sum_alpha = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            sum_alpha += 2.0 * (yi as f64 + kappa) * lam(c[i]);
        }
        sigma = 1.0 / (sum_alpha + 1.0 / (sigma_beta * sigma_beta));
        mu = sigma * (0.5 * (sum_y - kappa * n) + kappa.ln() * sum_alpha);
        for ci in c.iter_mut() {
            *ci = (sigma + (mu - kappa.ln()).powi(2)).sqrt();
        }
        let mut lc = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            lc += (yi as f64 + kappa) * logcosh(c[i]);
        }
        elbo = 0.5 * mu * (sum_y - kappa * n)
            - lc
            - (mu * mu + sigma) / (2.0 * sigma_beta * sigma_beta)
            + 0.5 * sigma.ln();
        if it > 1 && (elbo - prev).abs() / (1.0 + elbo.abs()) < tol {
            break;
        }
        prev = elbo;
    }
    let lg = statrs::function::gamma::ln_gamma;
    let lgamma_sum: f64 = y.iter().map(|&v| lg(v as f64 + kappa)).sum();
    let marginal =
        elbo + lgamma_sum + n * (0.5 * kappa * kappa.ln() - kappa * 2f64.ln() - lg(kappa))
            - 0.5 * kappa.ln() * sum_y;
    ScalarOracle {
        mu,
        sigma,
        c,
        elbo,
        marginal,
        iterations,
    }
}
