//! Model objects: priors, the kappa atom grid, design blocks and simulators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::error::{domain, NbvbError, Result};

/// Prior scales: `beta ~ N(0, sigma_beta^2 I)` and `sigma_j ~ Half-Cauchy(s_sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    sigma_beta: f64,
    s_sigma: f64,
}

impl Hyperparams {
    pub fn new(sigma_beta: f64, s_sigma: f64) -> Result<Self> {
        if !(sigma_beta > 0.0 && sigma_beta.is_finite() && s_sigma > 0.0 && s_sigma.is_finite()) {
            return domain(format!(
                "hyperparameters must be positive and finite, got sigma_beta={sigma_beta}, s_sigma={s_sigma}"
            ));
        }
        Ok(Self {
            sigma_beta,
            s_sigma,
        })
    }

    pub fn sigma_beta(&self) -> f64 {
        self.sigma_beta
    }

    pub fn s_sigma(&self) -> f64 {
        self.s_sigma
    }
}

impl Default for Hyperparams {
    /// Vague defaults: `N(0, 1e5)` fixed effects and `Half-Cauchy(1e5)` scales.
    fn default() -> Self {
        Self {
            sigma_beta: 1e5_f64.sqrt(),
            s_sigma: 1e5,
        }
    }
}

/// Finite support of the discrete kappa prior with unnormalized log weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomGrid {
    atoms: Vec<f64>,
    log_prior: Vec<f64>,
}

impl AtomGrid {
    pub fn new(atoms: Vec<f64>, log_prior: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return domain("atom grid must hold at least one atom");
        }
        if atoms.len() != log_prior.len() {
            return domain(format!(
                "{} atoms but {} log prior weights",
                atoms.len(),
                log_prior.len()
            ));
        }
        if atoms.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return domain("atoms must be positive and finite");
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) {
            return domain("atoms must be strictly ascending");
        }
        if log_prior.iter().any(|v| !v.is_finite()) {
            return domain("log prior weights must be finite");
        }
        Ok(Self { atoms, log_prior })
    }

    /// Geometric sequence from `lo` to `hi` inclusive with `log p(kappa) = -kappa / rate`.
    pub fn geometric(lo: f64, hi: f64, size: usize, rate: f64) -> Result<Self> {
        if size == 0 {
            return domain("atom grid size must be at least 1");
        }
        if !(lo > 0.0
            && hi > 0.0
            && rate > 0.0
            && lo.is_finite()
            && hi.is_finite()
            && rate.is_finite())
        {
            return domain(format!(
                "grid bounds and rate must be positive, got lo={lo}, hi={hi}, rate={rate}"
            ));
        }
        let atoms = if size == 1 {
            if lo != hi {
                return domain("a single-atom grid needs lo == hi");
            }
            vec![lo]
        } else {
            if lo >= hi {
                return domain(format!("grid requires lo < hi, got lo={lo}, hi={hi}"));
            }
            let step = (hi / lo).ln() / (size - 1) as f64;
            let mut atoms: Vec<f64> = (0..size).map(|i| lo * (step * i as f64).exp()).collect();
            atoms[size - 1] = hi;
            atoms
        };
        let log_prior = atoms.iter().map(|a| -a / rate).collect();
        Self::new(atoms, log_prior)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Adds a constant to every log prior weight.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            atoms: self.atoms.clone(),
            log_prior: self.log_prior.iter().map(|v| v + delta).collect(),
        }
    }

    /// Keeps the atoms whose index passes `keep`.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let (atoms, log_prior) = self
            .atoms
            .iter()
            .zip(&self.log_prior)
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, (a, l))| (*a, *l))
            .unzip();
        Self::new(atoms, log_prior)
    }
}

/// Response, fixed-effects design X and random-effects design Z with its
/// block partition. `C = [X Z]` is materialized once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignBlocks {
    y: Vec<u64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    block_sizes: Vec<usize>,
    c: DMatrix<f64>,
}

impl DesignBlocks {
    pub fn new(
        y: Vec<u64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        block_sizes: Vec<usize>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return domain("design needs at least one observation");
        }
        if x.nrows() != n || z.nrows() != n {
            return domain(format!(
                "row mismatch: y has {n}, X has {}, Z has {}",
                x.nrows(),
                z.nrows()
            ));
        }
        if x.ncols() == 0 {
            return domain("X needs at least one column");
        }
        if block_sizes.contains(&0) {
            return domain("random-effect blocks must be nonempty");
        }
        if block_sizes.iter().sum::<usize>() != z.ncols() {
            return domain(format!(
                "block sizes sum to {} but Z has {} columns",
                block_sizes.iter().sum::<usize>(),
                z.ncols()
            ));
        }
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return domain("design entries must be finite");
        }
        let mut c = DMatrix::zeros(n, x.ncols() + z.ncols());
        c.view_mut((0, 0), (n, x.ncols())).copy_from(&x);
        c.view_mut((0, x.ncols()), (n, z.ncols())).copy_from(&z);
        Ok(Self {
            y,
            x,
            z,
            block_sizes,
            c,
        })
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Combined design `[X Z]`.
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of fixed effects p.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Total coefficient dimension p + sum K_j.
    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn y_f64(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.y.iter().map(|&v| v as f64))
    }

    /// Rows `range` as a new design.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n() {
            return domain("row slice out of range");
        }
        Self::new(
            self.y[start..start + len].to_vec(),
            self.x.rows(start, len).into_owned(),
            self.z.rows(start, len).into_owned(),
            self.block_sizes.clone(),
        )
    }

    /// Applies a row permutation: output row i is input row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n() {
            return domain("permutation length mismatch");
        }
        let y = perm.iter().map(|&i| self.y[i]).collect();
        let x = self.x.select_rows(perm);
        let z = self.z.select_rows(perm);
        Self::new(y, x, z, self.block_sizes.clone())
    }
}

/// One penalized-spline term for [`assemble_design`].
#[derive(Debug, Clone, Copy)]
pub struct SplineTerm<'a> {
    pub covariate: &'a [f64],
    pub num_interior_knots: usize,
    /// Optional fixed boundary for the basis.
    pub boundary: Option<(f64, f64)>,
}

/// Builds `X = [1 | columns]` and `Z` from one canonical basis per spline term.
pub fn assemble_design(
    y: Vec<u64>,
    x_columns: &[&[f64]],
    spline_terms: &[SplineTerm<'_>],
) -> Result<(DesignBlocks, Vec<SplineBasis>)> {
    let n = y.len();
    if x_columns.iter().any(|c| c.len() != n) {
        return domain("fixed-effect column length differs from the response length");
    }
    if spline_terms.iter().any(|t| t.covariate.len() != n) {
        return domain("spline covariate length differs from the response length");
    }
    let p = 1 + x_columns.len();
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x_columns[j - 1][i] });

    let mut bases = Vec::with_capacity(spline_terms.len());
    let mut blocks = Vec::with_capacity(spline_terms.len());
    for term in spline_terms {
        let basis = SplineBasis::build_with_boundary(
            term.covariate,
            term.num_interior_knots,
            term.boundary,
        )?;
        blocks.push(basis.evaluate(term.covariate)?);
        bases.push(basis);
    }
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut z = DMatrix::zeros(n, total);
    let mut col = 0;
    for b in &blocks {
        z.view_mut((0, col), (n, b.ncols())).copy_from(b);
        col += b.ncols();
    }
    let block_sizes = blocks.iter().map(|b| b.ncols()).collect();
    Ok((DesignBlocks::new(y, x, z, block_sizes)?, bases))
}

/// Simulation designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Two-covariate additive model with `exp{eta_1(x1) + eta_2(x2)}` mean.
    Additive2Term,
    /// One-covariate bump function of mixed normal densities.
    Nonpar1Term,
}

impl std::str::FromStr for Scenario {
    type Err = NbvbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive_2term" | "additive2" => Ok(Self::Additive2Term),
            "nonpar_1term" | "nonpar1" => Ok(Self::Nonpar1Term),
            other => domain(format!("unknown scenario '{other}'")),
        }
    }
}

/// How the simulated linear predictor maps to the Negative Binomial mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanLink {
    /// mean = exp(eta)
    #[default]
    Exp,
    /// mean = eta; fails if eta is not positive at a drawn covariate
    Identity,
}

/// Normal density with mean `m` and standard deviation `s`.
pub fn normal_pdf(x: f64, m: f64, s: f64) -> f64 {
    let z = (x - m) / s;
    (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

/// First additive component, `cos(4 pi x) + 2x`.
pub fn eta_additive_1(x: f64) -> f64 {
    (4.0 * std::f64::consts::PI * x).cos() + 2.0 * x
}

/// Second additive component.
pub fn eta_additive_2(x: f64) -> f64 {
    0.4 * normal_pdf(x, 0.38, 0.08) - 1.02 * x + 0.018 * x * x + 0.08 * normal_pdf(x, 0.75, 0.03)
}

/// Bump function of the one-term scenario.
pub fn eta_nonpar(x: f64) -> f64 {
    0.3 * normal_pdf(x, 0.2, 0.08) - 0.3 * normal_pdf(x, 0.65, 0.23)
        + 0.4 * normal_pdf(x, 0.45, 0.08)
}

/// Simulated data: covariate columns (named) and counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub covariate_names: Vec<String>,
    pub covariates: Vec<Vec<f64>>,
    pub y: Vec<u64>,
}

impl SimulatedData {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

impl Scenario {
    pub fn covariate_names(&self) -> Vec<String> {
        match self {
            Scenario::Additive2Term => vec!["x1".into(), "x2".into()],
            Scenario::Nonpar1Term => vec!["x".into()],
        }
    }

    /// True linear predictor components, one per covariate.
    pub fn eta_components(&self, covariate: usize, x: f64) -> f64 {
        match (self, covariate) {
            (Scenario::Additive2Term, 0) => eta_additive_1(x),
            (Scenario::Additive2Term, _) => eta_additive_2(x),
            (Scenario::Nonpar1Term, _) => eta_nonpar(x),
        }
    }

    pub fn default_n(&self) -> usize {
        match self {
            Scenario::Additive2Term => 500,
            Scenario::Nonpar1Term => 1000,
        }
    }
}

/// Draws a dataset with Uniform(0,1) covariates and Gamma-Poisson NB responses.
pub fn simulate_dataset(
    scenario: Scenario,
    n: usize,
    kappa_true: f64,
    link: MeanLink,
    seed: u64,
) -> Result<SimulatedData> {
    if n == 0 {
        return domain("n must be at least 1");
    }
    if !(kappa_true > 0.0 && kappa_true.is_finite()) {
        return domain(format!("kappa_true must be positive, got {kappa_true}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = scenario.covariate_names();
    let ncov = names.len();
    let mut covariates = vec![Vec::with_capacity(n); ncov];
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xs: Vec<f64> = (0..ncov).map(|_| rng.gen::<f64>()).collect();
        let eta: f64 = xs
            .iter()
            .enumerate()
            .map(|(j, &x)| scenario.eta_components(j, x))
            .sum();
        let mu = match link {
            MeanLink::Exp => eta.exp(),
            MeanLink::Identity => eta,
        };
        if !(mu > 0.0 && mu.is_finite()) {
            return domain(format!(
                "mean {mu} at covariates {xs:?} is not positive under the identity link"
            ));
        }
        y.push(draw_negative_binomial(&mut rng, mu, kappa_true)?);
        for (col, x) in covariates.iter_mut().zip(xs) {
            col.push(x);
        }
    }
    Ok(SimulatedData {
        covariate_names: names,
        covariates,
        y,
    })
}

/// Gamma-Poisson mixture draw with mean `mu` and shape `kappa`.
pub fn draw_negative_binomial<R: Rng + ?Sized>(rng: &mut R, mu: f64, kappa: f64) -> Result<u64> {
    let gamma =
        Gamma::new(kappa, mu / kappa).map_err(|e| NbvbError::Domain(format!("gamma: {e}")))?;
    let rate: f64 = gamma.sample(rng);
    if rate <= 0.0 {
        return Ok(0);
    }
    let pois = Poisson::new(rate).map_err(|e| NbvbError::Domain(format!("poisson: {e}")))?;
    Ok(pois.sample(rng) as u64)
}
