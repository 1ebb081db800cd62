//! Scalar special functions and Pólya-Gamma utilities.
//!
//! Everything here is pure. The series sampler is a test oracle for the
//! Pólya-Gamma mean identity and is never called by the fitting code.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Default number of series terms used by [`pg_sample_series`] callers.
pub const PG_DEFAULT_TRUNCATION: usize = 10_000;

const LN_2: f64 = std::f64::consts::LN_2;
const TAYLOR_CUTOFF: f64 = 1e-4;

/// Parameters of a Pólya-Gamma(b, c) law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgParams {
    b: f64,
    c: f64,
}

impl PgParams {
    pub fn new(b: f64, c: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return domain(format!(
                "Polya-Gamma shape must be positive and finite, got {b}"
            ));
        }
        if !c.is_finite() {
            return domain(format!("Polya-Gamma tilt must be finite, got {c}"));
        }
        Ok(Self { b, c })
    }

    pub fn shape(&self) -> f64 {
        self.b
    }

    pub fn tilt(&self) -> f64 {
        self.c
    }
}

/// Jaakkola-Jordan function `tanh(x/2) / (4x)`, with value 1/8 at zero.
pub fn lambda_jj(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return domain(format!("lambda_jj requires a finite argument, got {x}"));
    }
    Ok(lambda_jj_unchecked(x))
}

/// [`lambda_jj`] without the finiteness check, for hot loops over values that
/// are finite by construction.
#[inline]
pub fn lambda_jj_unchecked(x: f64) -> f64 {
    let ax = x.abs();
    if ax < TAYLOR_CUTOFF {
        0.125 - ax * ax / 96.0
    } else {
        (0.5 * ax).tanh() / (4.0 * ax)
    }
}

/// `log cosh(x/2)`, overflow free.
pub fn log_cosh_half(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return domain(format!("log_cosh_half requires a finite argument, got {x}"));
    }
    Ok(log_cosh_half_unchecked(x))
}

#[inline]
pub fn log_cosh_half_unchecked(x: f64) -> f64 {
    let ax = x.abs();
    0.5 * ax - LN_2 + (-ax).exp().ln_1p()
}

/// Natural log of the gamma function for positive arguments.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Negative Binomial log-pmf with mean `mu` and shape `kappa`.
pub fn nb_log_pmf(y: u64, mu: f64, kappa: f64) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return domain(format!("Negative Binomial mean must be positive, got {mu}"));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return domain(format!(
            "Negative Binomial shape must be positive, got {kappa}"
        ));
    }
    let yf = y as f64;
    let log_norm = ln_gamma(yf + kappa) - ln_gamma(kappa) - ln_gamma(yf + 1.0);
    // log(kappa/(kappa+mu)) and log(mu/(kappa+mu)) via log1p for stability
    let log_p0 = -(mu / kappa).ln_1p();
    let log_p1 = if y == 0 {
        0.0
    } else {
        yf * -(kappa / mu).ln_1p()
    };
    Ok(log_norm + kappa * log_p0 + log_p1)
}

/// Mean of a Pólya-Gamma(b, c) variable, `2 b lambda_jj(c)`.
pub fn pg_mean(p: PgParams) -> f64 {
    2.0 * p.b * lambda_jj_unchecked(p.c)
}

/// One draw from the truncated infinite-sum representation of PG(b, c).
///
/// Deterministic in `seed`. Intended for Monte Carlo checks only.
pub fn pg_sample_series(p: PgParams, truncation: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = PgSeriesSampler::new(p, truncation)?;
    Ok(sampler.sample(&mut rng))
}

/// Reusable truncated-series PG sampler; precomputes the term denominators.
#[derive(Debug, Clone)]
pub struct PgSeriesSampler {
    gamma: Gamma<f64>,
    weights: Vec<f64>,
}

impl PgSeriesSampler {
    pub fn new(p: PgParams, truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return domain("Polya-Gamma series truncation must be at least 1");
        }
        let gamma = Gamma::new(p.b, 1.0)
            .map_err(|e| crate::NbvbError::Domain(format!("gamma sampler: {e}")))?;
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let shift = p.c * p.c / (4.0 * pi2);
        let weights = (1..=truncation)
            .map(|k| {
                let h = k as f64 - 0.5;
                1.0 / (2.0 * pi2 * (h * h + shift))
            })
            .collect();
        Ok(Self { gamma, weights })
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.weights
            .iter()
            .map(|w| w * self.gamma.sample(rng))
            .sum()
    }
}
