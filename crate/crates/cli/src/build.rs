//! Turning command-line model options and a data table into library objects.

use std::collections::HashMap;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use nbvb_core::{
    AtomGrid, CovariateSpec, DesignBlocks, FitOptions, Hyperparams, ModelSpec, SplineBasis,
};

use crate::args::ModelArgs;

pub fn parse_domain(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("domain must be LO,HI, got '{text}'");
    }
    let lo: f64 = parts[0]
        .parse()
        .with_context(|| format!("bad domain bound '{}'", parts[0]))?;
    let hi: f64 = parts[1]
        .parse()
        .with_context(|| format!("bad domain bound '{}'", parts[1]))?;
    if !(lo < hi) {
        bail!("domain lower bound must be below the upper bound");
    }
    Ok((lo, hi))
}

fn spline_knots(args: &ModelArgs, names: &[String]) -> Result<Vec<Option<usize>>> {
    let mut explicit = HashMap::new();
    for spec in &args.splines {
        let (name, k) = spec
            .split_once('=')
            .with_context(|| format!("spline spec '{spec}' is not NAME=K"))?;
        let k: usize = k
            .trim()
            .parse()
            .with_context(|| format!("bad knot count in '{spec}'"))?;
        explicit.insert(name.trim().to_string(), k);
    }
    for name in explicit.keys().chain(&args.linear) {
        if !names.contains(name) {
            bail!("covariate '{name}' is not a column of the input");
        }
    }
    Ok(names
        .iter()
        .map(|n| {
            if args.linear.contains(n) {
                None
            } else {
                Some(explicit.get(n).copied().unwrap_or(args.knots))
            }
        })
        .collect())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn hyperparams(args: &ModelArgs) -> Result<Hyperparams> {
    Ok(Hyperparams::new(args.sigma_beta, args.s_sigma)?)
}

pub fn atom_grid(args: &ModelArgs) -> Result<AtomGrid> {
    Ok(AtomGrid::geometric(
        args.kappa_lo,
        args.kappa_hi,
        args.kappa_size,
        args.prior_rate,
    )?)
}

pub fn fit_options(args: &ModelArgs) -> FitOptions {
    FitOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        init: None,
        warm_start: !args.no_warm_start,
    }
}

/// Builds bases from the given columns and describes the additive model.
pub fn model_spec(
    args: &ModelArgs,
    names: &[String],
    columns: &[Vec<f64>],
    domain: Option<(f64, f64)>,
) -> Result<ModelSpec> {
    let knots = spline_knots(args, names)?;
    let mut covariates = Vec::with_capacity(names.len());
    for ((name, col), k) in names.iter().zip(columns).zip(knots) {
        let spline = match k {
            Some(k) => Some(
                SplineBasis::build_with_boundary(col, k, domain)
                    .with_context(|| format!("building the spline basis for '{name}'"))?,
            ),
            None => None,
        };
        covariates.push(CovariateSpec {
            name: name.clone(),
            median: median(col),
            spline,
        });
    }
    Ok(ModelSpec {
        response: args.response.clone(),
        covariates,
        hyper: hyperparams(args)?,
    })
}

/// The design for observed data under a model description.
pub fn design(spec: &ModelSpec, columns: &[Vec<f64>], y: Vec<u64>) -> Result<DesignBlocks> {
    let cols: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
    let c = spec.design_rows(&cols)?;
    let p = spec.p();
    let x: DMatrix<f64> = c.columns(0, p).into_owned();
    let z: DMatrix<f64> = c.columns(p, c.ncols() - p).into_owned();
    Ok(DesignBlocks::new(y, x, z, spec.block_sizes())?)
}
