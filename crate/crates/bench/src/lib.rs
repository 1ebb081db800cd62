//! Shared fixtures for the benchmarks.

use nalgebra::DMatrix;
use nbvb_core::{
    assemble_design, simulate_dataset, AtomGrid, DesignBlocks, MeanLink, Scenario, SplineBasis,
    SplineTerm,
};

/// Two-covariate additive design with `knots` interior knots per term.
pub fn additive_design(n: usize, knots: usize, seed: u64) -> DesignBlocks {
    let sim =
        simulate_dataset(Scenario::Additive2Term, n, 3.8, MeanLink::Exp, seed).expect("simulation");
    let terms: Vec<SplineTerm> = sim
        .covariates
        .iter()
        .map(|c| SplineTerm {
            covariate: c,
            num_interior_knots: knots,
            boundary: None,
        })
        .collect();
    let cols: Vec<&[f64]> = sim.covariates.iter().map(Vec::as_slice).collect();
    assemble_design(sim.y, &cols, &terms).expect("design").0
}

/// One-covariate design on the fixed domain [0, 1], as used for streaming.
pub fn stream_design(n: usize, kappa: f64, knots: usize, seed: u64) -> (DesignBlocks, SplineBasis) {
    let sim =
        simulate_dataset(Scenario::Nonpar1Term, n, kappa, MeanLink::Exp, seed).expect("simulation");
    let x = &sim.covariates[0];
    let term = SplineTerm {
        covariate: x,
        num_interior_knots: knots,
        boundary: Some((0.0, 1.0)),
    };
    let (d, mut bases) = assemble_design(sim.y.clone(), &[x], &[term]).expect("design");
    (d, bases.remove(0))
}

/// Geometric atom grid spanning two decades around `kappa`.
pub fn grid_around(kappa: f64, size: usize) -> AtomGrid {
    AtomGrid::geometric(kappa / 10.0, kappa * 10.0, size, 100.0).expect("grid")
}

/// Rows `[1, x, z(x)]` on a regular grid over [0, 1].
pub fn curve_rows(basis: &SplineBasis, points: usize) -> DMatrix<f64> {
    let xs: Vec<f64> = (0..points)
        .map(|i| i as f64 / (points - 1) as f64)
        .collect();
    let z = basis.evaluate(&xs).expect("basis");
    DMatrix::from_fn(points, 2 + z.ncols(), |i, j| match j {
        0 => 1.0,
        1 => xs[i],
        _ => z[(i, j - 2)],
    })
}
