//! Summary tables shared by the fit, stream and summarize commands.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nbvb_core::posterior::sigma2_grid;
use nbvb_core::{kappa_pmf, linear_predictor_summary, response_summary, sigma2_density, Snapshot};

use crate::args::SummaryArgs;

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the kappa pmf, per-atom report, fitted curves and sigma^2 densities.
pub fn write_tables(snap: &Snapshot, out: &Path, opts: SummaryArgs) -> Result<()> {
    if opts.grid_points < 2 {
        bail!("grid_points must be at least 2");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let post = &snap.posterior;

    let pmf = kappa_pmf(post);
    write_csv(
        &out.join("kappa_pmf.csv"),
        &["kappa", "probability"],
        pmf.atoms.iter().zip(&pmf.probs).map(|(&k, &p)| vec![k, p]),
    )?;

    let mut w = csv::Writer::from_path(out.join("report.csv"))?;
    w.write_record([
        "kappa",
        "log_prior",
        "elbo",
        "marginal",
        "weight",
        "iterations",
        "converged",
    ])?;
    for (c, wt) in post.components().iter().zip(post.weights()) {
        w.write_record([
            format!("{:?}", c.kappa),
            format!("{:?}", c.log_prior),
            format!("{:?}", c.elbo),
            format!("{:?}", c.marginal),
            format!("{:?}", wt),
            c.iterations.to_string(),
            c.converged.to_string(),
        ])?;
    }
    w.flush()?;

    let medians: Vec<f64> = snap.model.covariates.iter().map(|c| c.median).collect();
    let mut block = 0;
    for (j, cov) in snap.model.covariates.iter().enumerate() {
        let Some(basis) = &cov.spline else { continue };
        let (lo, hi) = basis.boundary();
        let n = opts.grid_points;
        let grid: Vec<f64> = (0..n)
            .map(|i| {
                if i + 1 == n {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        let columns: Vec<Vec<f64>> = medians
            .iter()
            .enumerate()
            .map(|(k, &m)| if k == j { grid.clone() } else { vec![m; n] })
            .collect();
        let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
        let rows = snap.model.design_rows(&refs)?;
        let eta = linear_predictor_summary(post, &rows, opts.level)?;
        let resp = response_summary(post, &rows, opts.level)?;
        write_csv(
            &out.join(format!("curve_{}.csv", cov.name)),
            &[
                "x",
                "eta_mean",
                "eta_lower",
                "eta_upper",
                "exp_mean",
                "exp_lower",
                "exp_upper",
                "exp_of_eta_mean",
            ],
            grid.iter().zip(eta.iter().zip(&resp)).map(|(&x, (e, r))| {
                vec![
                    x,
                    e.mean,
                    e.lower,
                    e.upper,
                    r.mean,
                    r.lower,
                    r.upper,
                    r.exp_eta_mean,
                ]
            }),
        )?;

        let s_grid = sigma2_grid(post, block, opts.grid_points)?;
        let dens = sigma2_density(post, block, &s_grid)?;
        write_csv(
            &out.join(format!("sigma2_{}.csv", cov.name)),
            &["sigma2", "density"],
            s_grid.iter().zip(&dens).map(|(&s, &d)| vec![s, d]),
        )?;
        block += 1;
    }
    Ok(())
}
