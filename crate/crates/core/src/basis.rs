//! Canonical O'Sullivan penalized-spline bases.
//!
//! Cubic B-splines on quantile knots are mapped through the spectral
//! decomposition of their integrated squared second-derivative penalty, so the
//! resulting columns carry an identity penalty and exclude the penalty's null
//! space (constants and linears). Models pair these columns with an explicit
//! intercept and linear term.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{NbvbError, Result};

const DEGREE: usize = 3;
const BOUNDARY_PAD: f64 = 1e-8;
const EIGEN_FLOOR: f64 = 1e-10;

/// A fitted canonical spline basis: knots plus the B-spline-to-canonical map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    interior_knots: Vec<f64>,
    boundary: (f64, f64),
    /// (num_interior + 4) x K map from raw B-spline values to canonical columns.
    #[serde(with = "crate::serde_util::matrix")]
    transform: DMatrix<f64>,
}

impl SplineBasis {
    /// Builds the basis with boundary knots just outside the range of `x`.
    pub fn build(x: &[f64], num_interior_knots: usize) -> Result<Self> {
        Self::build_with_boundary(x, num_interior_knots, None)
    }

    /// Builds the basis, optionally fixing the boundary knots. An explicit
    /// boundary must contain every value of `x`.
    pub fn build_with_boundary(
        x: &[f64],
        num_interior_knots: usize,
        boundary: Option<(f64, f64)>,
    ) -> Result<Self> {
        if num_interior_knots == 0 {
            return Err(NbvbError::Construction(
                "at least one interior knot is required".into(),
            ));
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(NbvbError::Domain(format!(
                "non-finite covariate value {bad}"
            )));
        }
        let mut distinct = x.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < num_interior_knots + 4 {
            return Err(NbvbError::Construction(format!(
                "{} distinct covariate values cannot support {} interior knots (need {})",
                distinct.len(),
                num_interior_knots,
                num_interior_knots + 4
            )));
        }
        let xmin = distinct[0];
        let xmax = distinct[distinct.len() - 1];
        let (lo, hi) = match boundary {
            Some((lo, hi)) => {
                if !(lo.is_finite() && hi.is_finite() && lo <= xmin && hi >= xmax && lo < hi) {
                    return Err(NbvbError::Construction(format!(
                        "boundary [{lo}, {hi}] does not contain the data range [{xmin}, {xmax}]"
                    )));
                }
                (lo, hi)
            }
            None => {
                let pad = BOUNDARY_PAD * (xmax - xmin);
                (xmin - pad, xmax + pad)
            }
        };

        let interior_knots: Vec<f64> = (1..=num_interior_knots)
            .map(|i| quantile_sorted(&distinct, i as f64 / (num_interior_knots + 1) as f64))
            .collect();
        if interior_knots.windows(2).any(|w| w[0] >= w[1])
            || interior_knots[0] <= lo
            || interior_knots[num_interior_knots - 1] >= hi
        {
            return Err(NbvbError::Construction(
                "quantile knots are not strictly inside the boundary".into(),
            ));
        }

        let knots = full_knot_vector(&interior_knots, lo, hi);
        let omega = penalty_matrix(&knots);
        let transform = canonical_transform(omega)?;
        Ok(Self {
            interior_knots,
            boundary: (lo, hi),
            transform,
        })
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    /// Number of canonical basis columns, K = interior knots + 2.
    pub fn num_basis(&self) -> usize {
        self.transform.ncols()
    }

    /// Evaluates the canonical basis at each `x`, one row per value.
    pub fn evaluate(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let raw = self.raw_design(x)?;
        Ok(raw * &self.transform)
    }

    /// Raw cubic B-spline design (before the canonical transform).
    pub fn raw_design(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (lo, hi) = self.boundary;
        let knots = full_knot_vector(&self.interior_knots, lo, hi);
        let nraw = knots.len() - DEGREE - 1;
        let mut out = DMatrix::zeros(x.len(), nraw);
        for (i, &xi) in x.iter().enumerate() {
            if !(xi >= lo && xi <= hi) {
                return Err(NbvbError::Extrapolation { x: xi, lo, hi });
            }
            let span = find_span(&knots, xi);
            let vals = bspline_values(&knots, xi, span, 0);
            for (j, v) in vals.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }

    /// The penalty matrix of the raw B-splines, integral of B'' B''^T.
    pub fn raw_penalty(&self) -> DMatrix<f64> {
        let (lo, hi) = self.boundary;
        penalty_matrix(&full_knot_vector(&self.interior_knots, lo, hi))
    }
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn full_knot_vector(interior: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut knots = Vec::with_capacity(interior.len() + 2 * (DEGREE + 1));
    knots.extend(std::iter::repeat_n(lo, DEGREE + 1));
    knots.extend_from_slice(interior);
    knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
    knots
}

/// Index `s` of the non-degenerate knot interval `[t_s, t_{s+1})` holding `x`;
/// the right boundary belongs to the last interval.
fn find_span(knots: &[f64], x: f64) -> usize {
    let last = knots.len() - DEGREE - 2;
    if x >= knots[last + 1] {
        return last;
    }
    // upper bound among t_3..t_last+1
    let mut s = DEGREE;
    while s < last && knots[s + 1] <= x {
        s += 1;
    }
    s
}

#[inline]
fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Values (deriv = 0) or derivatives of order `deriv` of all cubic B-splines
/// at `x`, taking `x` as lying in knot interval `span`.
fn bspline_values(knots: &[f64], x: f64, span: usize, deriv: usize) -> Vec<f64> {
    let m = knots.len();
    // levels[d] holds the degree-d basis functions, m - 1 - d of them
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(DEGREE + 1);
    let mut n0 = vec![0.0; m - 1];
    n0[span] = 1.0;
    levels.push(n0);
    for d in 1..=DEGREE {
        let prev = &levels[d - 1];
        let cur: Vec<f64> = (0..m - 1 - d)
            .map(|i| {
                ratio(x - knots[i], knots[i + d] - knots[i]) * prev[i]
                    + ratio(knots[i + d + 1] - x, knots[i + d + 1] - knots[i + 1]) * prev[i + 1]
            })
            .collect();
        levels.push(cur);
    }
    if deriv == 0 {
        return levels.pop().unwrap();
    }
    // differentiate: start from degree (DEGREE - deriv) values and raise degree
    let mut cur = levels[DEGREE - deriv].clone();
    for d in (DEGREE - deriv + 1)..=DEGREE {
        cur = (0..m - 1 - d)
            .map(|i| {
                d as f64
                    * (ratio(cur[i], knots[i + d] - knots[i])
                        - ratio(cur[i + 1], knots[i + d + 1] - knots[i + 1]))
            })
            .collect();
    }
    cur
}

/// Integral of B''(x) B''(x)^T over the boundary interval. B'' is piecewise
/// linear, so Simpson's rule on each knot interval is exact.
fn penalty_matrix(knots: &[f64]) -> DMatrix<f64> {
    let nraw = knots.len() - DEGREE - 1;
    let mut omega = DMatrix::zeros(nraw, nraw);
    for span in DEGREE..(knots.len() - DEGREE - 1) {
        let (a, b) = (knots[span], knots[span + 1]);
        let h = b - a;
        if h <= 0.0 {
            continue;
        }
        let pts = [(a, 1.0), (0.5 * (a + b), 4.0), (b, 1.0)];
        for &(x, w) in &pts {
            let d2 = bspline_values(knots, x, span, 2);
            let scale = w * h / 6.0;
            for i in 0..nraw {
                if d2[i] == 0.0 {
                    continue;
                }
                for j in 0..nraw {
                    omega[(i, j)] += scale * d2[i] * d2[j];
                }
            }
        }
    }
    omega
}

fn canonical_transform(omega: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let nraw = omega.nrows();
    let k = nraw - 2;
    let sym = 0.5 * (&omega + omega.transpose());
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..nraw).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let dmax = eig.eigenvalues[order[0]];
    if !(dmax > 0.0) {
        return Err(NbvbError::Construction(
            "penalty matrix has no positive eigenvalues".into(),
        ));
    }
    let floor = EIGEN_FLOOR * dmax;
    let mut transform = DMatrix::zeros(nraw, k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(idx).clone_owned();
        // fix the sign so the largest-magnitude entry is positive
        let pivot = v
            .iter()
            .copied()
            .fold(0.0_f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
        if pivot < 0.0 {
            v.neg_mut();
        }
        let d = eig.eigenvalues[idx].max(floor);
        transform.set_column(col, &(v / d.sqrt()));
    }
    Ok(transform)
}
