//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs sequentially in a single process so the memory criterion
//! sees a quiet heap.

mod common;

use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use nbvb_core::posterior::std_normal_cdf;
use nbvb_core::specfun::{PgParams, PgSeriesSampler, PG_DEFAULT_TRUNCATION};
use nbvb_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Shared across criteria 1 and 5: twenty full-grid fits of the two-term design.
fn additive_fits() -> Vec<(Vec<PerAtomFit>, MixturePosterior)> {
    let h = Hyperparams::default();
    let g = decade_grid(3.8, 50);
    (0..20)
        .map(|seed| {
            let d = additive_design(500, 1000 + seed);
            let fits = fit_atoms(&d, &h, &g, &FitOptions::default()).unwrap();
            let post =
                MixturePosterior::from_fits(&fits, &g, d.p(), d.block_sizes().to_vec()).unwrap();
            (fits, post)
        })
        .collect()
}

fn elbo_monotonicity(fits: &[(Vec<PerAtomFit>, MixturePosterior)], seconds: f64) -> Outcome {
    let mut worst = 0.0f64;
    let mut traces = 0;
    for (atoms, _) in fits {
        for fit in atoms {
            traces += 1;
            for w in fit.elbo_trace.windows(2) {
                worst = worst.max((w[0] - w[1]) / w[0].abs());
            }
        }
    }
    outcome(
        worst <= 1e-8 && seconds < 300.0,
        format!("{traces} traces, worst relative decrease {worst:.2e}, {seconds:.1} s"),
    )
}

fn init_invariance() -> Outcome {
    let h = Hyperparams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let d = additive_design(500, 2000 + seed);
        for kappa in [0.5, 1.5, 3.8, 10.0, 30.0] {
            let marginals: Vec<f64> = (0..3)
                .map(|_| {
                    let init = InitState {
                        recip_sigma2: (0..2)
                            .map(|_| 10f64.powf(rng.gen_range(-2.0..2.0)))
                            .collect(),
                        c_alpha: DVector::from_iterator(
                            d.n(),
                            (0..d.n()).map(|_| rng.gen_range(0.05..5.0)),
                        ),
                    };
                    // converge well past the default tolerance so the spread reflects the optimum
                    let opts = FitOptions {
                        init: Some(init),
                        tol: 1e-12,
                        max_iter: 5000,
                        ..Default::default()
                    };
                    fit_single_atom(&d, &h, kappa, &opts).unwrap().marginal
                })
                .collect();
            let hi = marginals.iter().cloned().fold(f64::MIN, f64::max);
            let lo = marginals.iter().cloned().fold(f64::MAX, f64::min);
            worst = worst.max(hi - lo);
        }
    }
    outcome(
        worst < 1e-6,
        format!("largest spread of l(kappa) {worst:.2e}"),
    )
}

fn tiny_oracle() -> Outcome {
    let h = Hyperparams::default();
    let cases: [&[u64]; 3] = [&[4], &[0, 1, 2], &[0, 3, 1, 7, 2, 0, 0, 12, 5, 1]];
    let mut worst = 0.0f64;
    for y in cases {
        let n = y.len();
        let d = DesignBlocks::new(
            y.to_vec(),
            DMatrix::from_element(n, 1, 1.0),
            DMatrix::zeros(n, 0),
            vec![],
        )
        .unwrap();
        for kappa in [0.3, 1.0, 3.8, 25.0] {
            let fit = fit_single_atom(&d, &h, kappa, &FitOptions::default()).unwrap();
            let o = scalar_oracle(y, kappa, h.sigma_beta(), 1e-10, 500);
            let mut diffs = vec![
                (fit.mu[0] - o.mu).abs(),
                (fit.sigma[(0, 0)] - o.sigma).abs(),
                (fit.elbo - o.elbo).abs(),
                (fit.marginal - o.marginal).abs(),
                (fit.iterations as f64 - o.iterations as f64).abs(),
            ];
            diffs.extend(fit.c_alpha.iter().zip(&o.c).map(|(a, b)| (a - b).abs()));
            worst = diffs.into_iter().fold(worst, f64::max);
        }
    }
    outcome(
        worst <= 1e-10,
        format!("largest parameter difference {worst:.2e}"),
    )
}

fn pg_moment_oracle() -> Outcome {
    let d = additive_design(500, 4000);
    let fit = fit_single_atom(&d, &Hyperparams::default(), 3.8, &FitOptions::default()).unwrap();
    let alpha = fit.alpha_means(d.y());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let i = rng.gen_range(0..d.n());
        let p = PgParams::new(d.y()[i] as f64 + fit.kappa, fit.c_alpha[i]).unwrap();
        let sampler = PgSeriesSampler::new(p, PG_DEFAULT_TRUNCATION).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let se = (var / draws.len() as f64).sqrt();
        worst = worst.max((alpha[i] - mean).abs() / se);
    }
    outcome(
        worst < 4.0,
        format!("largest |engine - Monte Carlo| = {worst:.2} standard errors"),
    )
}

fn kappa_recovery(fits: &[(Vec<PerAtomFit>, MixturePosterior)]) -> Outcome {
    let means: Vec<f64> = fits.iter().map(|(_, post)| kappa_pmf(post).mean).collect();
    let hits = means.iter().filter(|&&m| (1.9..=7.6).contains(&m)).count();
    let lo = means.iter().cloned().fold(f64::MAX, f64::min);
    let hi = means.iter().cloned().fold(f64::MIN, f64::max);
    outcome(
        hits * 5 >= 4 * means.len(),
        format!("{hits}/20 posterior means in [1.9, 7.6], range [{lo:.2}, {hi:.2}]"),
    )
}

fn speed() -> Outcome {
    let d = additive_design(500, 6000);
    let start = Instant::now();
    fit_batch(
        &d,
        &Hyperparams::default(),
        &decade_grid(3.8, 50),
        &FitOptions::default(),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(secs <= 10.0, format!("{secs:.2} s for 50 atoms at n = 500"))
}

fn online_equals_batch_at_warmup() -> Outcome {
    let h = Hyperparams::default();
    let g = decade_grid(5.0, 50);
    let (d, _) = nonpar_design(100, 5.0, 35, 7000);
    let state = warmup(&d, &h, &g, &FitOptions::default(), OnlineConfig::default()).unwrap();
    let online = snapshot_posterior(&state).unwrap();
    let batch = fit_batch(&d, &h, &g, &FitOptions::default()).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in online.components().iter().zip(batch.components()) {
        worst = worst
            .max((a.marginal - b.marginal).abs())
            .max((&a.mu - &b.mu).amax());
    }
    for (a, b) in online.weights().iter().zip(batch.weights()) {
        worst = worst.max((a - b).abs());
    }
    let same_atoms = online.atoms() == batch.atoms();
    outcome(
        same_atoms && worst <= 1e-8,
        format!("largest difference {worst:.2e}"),
    )
}

fn online_tracking() -> Outcome {
    let h = Hyperparams::default();
    let g = decade_grid(5.0, 50);
    let (d, basis) = nonpar_design(1000, 5.0, 35, 8000);
    let batch = fit_batch(&d, &h, &g, &FitOptions::default()).unwrap();
    let cfg = OnlineConfig {
        tau: 3.5,
        floor: 5,
        thin: 1,
    };
    let mut state = warmup(
        &d.slice_rows(0, 100).unwrap(),
        &h,
        &g,
        &FitOptions::default(),
        cfg,
    )
    .unwrap();
    for i in 100..1000 {
        state.update_one(d.y()[i], &row(&d, i)).unwrap();
    }
    let online = snapshot_posterior(&state).unwrap();
    let rows = curve_rows(&basis, 201);
    let b = response_summary(&batch, &rows, 0.95).unwrap();
    let o = response_summary(&online, &rows, 0.95).unwrap();
    let num = b
        .iter()
        .zip(&o)
        .map(|(x, y)| (x.mean - y.mean).abs())
        .fold(0.0, f64::max);
    let den = b.iter().map(|x| x.mean.abs()).fold(0.0, f64::max);
    let rel = num / den;
    outcome(
        rel <= 0.15,
        format!(
            "relative sup-norm {rel:.4} with {} atoms retained",
            state.active_atoms().len()
        ),
    )
}

fn accuracy_scores() -> Outcome {
    let grid: Vec<f64> = (0..=20000)
        .map(|i| -10.0 + 21.0 * i as f64 / 20000.0)
        .collect();
    let dens =
        |m: f64| -> Vec<f64> { grid.iter().map(|&x| model::normal_pdf(x, m, 1.0)).collect() };
    let f = TabulatedDensity::new(grid.clone(), dens(0.0)).unwrap();
    let g = TabulatedDensity::new(grid.clone(), dens(1.0)).unwrap();
    let same = accuracy_score(&f, &f).unwrap();
    let shifted = accuracy_score(&f, &g).unwrap();
    let closed = 100.0 * (1.0 - (2.0 * std_normal_cdf(0.5) - 1.0));
    let pmf = [0.1, 0.25, 0.4, 0.25];
    let discrete = accuracy_score_discrete(&pmf, &pmf).unwrap();
    outcome(
        same == 100.0 && (shifted - 61.71).abs() <= 0.05 && discrete == 100.0,
        format!(
            "identical {same}, shifted {shifted:.4} (closed form {closed:.4}), discrete {discrete}"
        ),
    )
}

fn resident_bytes() -> Option<u64> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * 4096)
}

fn memory_bound() -> Outcome {
    let h = Hyperparams::default();
    let g = decade_grid(5.0, 50);
    let (d, _) = nonpar_design(10_100, 5.0, 35, 9000);
    let rows: Vec<Vec<f64>> = (0..d.n()).map(|i| row(&d, i)).collect();
    let mut state = warmup(
        &d.slice_rows(0, 100).unwrap(),
        &h,
        &g,
        &FitOptions::default(),
        OnlineConfig::default(),
    )
    .unwrap();
    let Some(before) = resident_bytes() else {
        return outcome(false, "resident set size unavailable".into());
    };
    for (y, row) in d.y()[100..10_100].iter().zip(&rows[100..10_100]) {
        state.update_one(*y, row).unwrap();
    }
    let after = resident_bytes().unwrap();
    let growth = after as f64 / before as f64 - 1.0;
    outcome(
        growth <= 0.05,
        format!(
            "RSS {:.1} MiB -> {:.1} MiB ({:+.2}%)",
            before as f64 / 1048576.0,
            after as f64 / 1048576.0,
            100.0 * growth
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        println!(
            "{} [{name}] {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        results.push((name, o));
    };

    // memory first, while the heap is smallest
    run("10 streaming memory bound", &mut memory_bound);
    let start = Instant::now();
    let fits = additive_fits();
    let fit_secs = start.elapsed().as_secs_f64();
    run("1 ELBO monotonicity", &mut || {
        elbo_monotonicity(&fits, fit_secs)
    });
    run("2 initialization invariance", &mut init_invariance);
    run("3 tiny-instance oracle", &mut tiny_oracle);
    run("4 Polya-Gamma moment oracle", &mut pg_moment_oracle);
    run("5 kappa recovery", &mut || kappa_recovery(&fits));
    run("6 speed", &mut speed);
    run(
        "7 online equals batch at warm-up",
        &mut online_equals_batch_at_warmup,
    );
    run("8 online tracking at end of stream", &mut online_tracking);
    run("9 accuracy score", &mut accuracy_scores);

    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, o)| !o.pass)
        .map(|(n, _)| *n)
        .collect();
    println!(
        "{} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
