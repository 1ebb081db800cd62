use std::fs::{self, File};
use std::io::{self, BufReader, Read};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use nbvb_core::model::SimulatedData;
use nbvb_core::{
    fit_atoms, kappa_pmf, simulate_dataset, snapshot_posterior, warmup, MeanLink, MixturePosterior,
    OnlineConfig, OnlineState, Scenario, Snapshot, SnapshotKind,
};
use serde_json::json;

use crate::args::{FitArgs, LinkArg, ScenarioArg, SimulateArgs, StreamArgs, SummarizeArgs};
use crate::build;
use crate::data::{csv_reader, line_of, read_table, Layout};
use crate::tables::write_tables;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let scenario = match args.scenario {
        ScenarioArg::Additive2Term => Scenario::Additive2Term,
        ScenarioArg::Nonpar1Term => Scenario::Nonpar1Term,
    };
    let link = match args.link {
        LinkArg::Exp => MeanLink::Exp,
        LinkArg::Identity => MeanLink::Identity,
    };
    let n = args.n.unwrap_or_else(|| scenario.default_n());
    let SimulatedData {
        covariate_names,
        covariates,
        y,
    } = simulate_dataset(scenario, n, args.kappa, link, args.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut w = csv::Writer::from_path(args.out.join("data.csv"))?;
    let mut header = covariate_names.clone();
    header.push("y".into());
    w.write_record(&header)?;
    for (i, yi) in y.iter().enumerate() {
        let mut rec: Vec<String> = covariates.iter().map(|c| format!("{:?}", c[i])).collect();
        rec.push(yi.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(args.out.join("truth.csv"))?;
    let mut header = vec!["x".to_string()];
    header.extend(covariate_names.iter().map(|n| format!("eta_{n}")));
    w.write_record(&header)?;
    for i in 0..=200 {
        let x = i as f64 / 200.0;
        let mut rec = vec![format!("{x:?}")];
        rec.extend(
            (0..covariate_names.len()).map(|j| format!("{:?}", scenario.eta_components(j, x))),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    info!("wrote {n} rows to {}", args.out.display());
    Ok(())
}

fn report_json(post: &MixturePosterior, n: usize, seconds: f64) -> serde_json::Value {
    let pmf = kappa_pmf(post);
    json!({
        "n": n,
        "atoms": post.components().len(),
        "all_converged": post.components().iter().all(|c| c.converged),
        "kappa_mean": pmf.mean,
        "log_kappa_mean": pmf.mean_log,
        "log_kappa_sd": pmf.sd_log,
        "wall_clock_seconds": seconds,
    })
}

pub fn fit(args: FitArgs) -> Result<()> {
    let file =
        File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let table = read_table(BufReader::new(file), &args.model.response)?;
    let domain = args
        .model
        .domain
        .as_deref()
        .map(build::parse_domain)
        .transpose()?;
    let spec = build::model_spec(&args.model, &table.covariate_names, &table.columns, domain)?;
    let n = table.y.len();
    let design = build::design(&spec, &table.columns, table.y)?;
    let grid = build::atom_grid(&args.model)?;

    let start = Instant::now();
    let fits = fit_atoms(
        &design,
        &spec.hyper,
        &grid,
        &build::fit_options(&args.model),
    )?;
    let seconds = start.elapsed().as_secs_f64();
    for f in fits.iter().filter(|f| !f.converged) {
        warn!(
            "atom kappa = {} stopped at max_iter without meeting the tolerance",
            f.kappa
        );
    }
    let post =
        MixturePosterior::from_fits(&fits, &grid, design.p(), design.block_sizes().to_vec())?
            .with_basis_meta(spec.bases());
    let snap = Snapshot::new(SnapshotKind::Batch, spec, post, None);

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_text(&args.out.join("snapshot.json"), &snap.to_json()?)?;
    write_tables(&snap, &args.out, args.summary)?;
    let report = report_json(&snap.posterior, n, seconds);
    write_text(
        &args.out.join("report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    info!("fitted {} atoms in {seconds:.2} s", fits.len());
    Ok(())
}

pub fn summarize(args: SummarizeArgs) -> Result<()> {
    let text = fs::read_to_string(&args.snapshot)
        .with_context(|| format!("reading {}", args.snapshot.display()))?;
    let snap = Snapshot::from_json(&text)?;
    write_tables(&snap, &args.out, args.summary)
}

struct Streamer<'a> {
    args: &'a StreamArgs,
    spec: nbvb_core::ModelSpec,
    state: OnlineState,
    last_emitted: Option<u64>,
}

impl Streamer<'_> {
    fn emit(&mut self) -> Result<()> {
        let n = self.state.stats().n;
        let post = snapshot_posterior(&self.state)?.with_basis_meta(self.spec.bases());
        let snap = Snapshot::new(
            SnapshotKind::Online,
            self.spec.clone(),
            post,
            Some(self.state.clone()),
        );
        write_tables(
            &snap,
            &self.args.out.join(format!("summary_{n:08}")),
            self.args.summary,
        )?;
        write_text(&self.args.out.join("state.json"), &snap.to_json()?)?;
        self.last_emitted = Some(n);
        info!(
            "n = {n}: {} atoms retained",
            self.state.active_atoms().len()
        );
        Ok(())
    }

    fn absorb(&mut self, y: u64, xs: &[f64]) -> Result<()> {
        let cols: Vec<&[f64]> = xs.iter().map(std::slice::from_ref).collect();
        let row = self.spec.design_rows(&cols)?;
        self.state
            .update_one(y, row.row(0).transpose().as_slice())?;
        if self.state.stats().n.is_multiple_of(self.args.every) {
            self.emit()?;
        }
        Ok(())
    }
}

pub fn stream(args: StreamArgs) -> Result<()> {
    if args.every == 0 {
        bail!("--every must be at least 1");
    }
    let source: Box<dyn Read> = if args.input == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(BufReader::new(
            File::open(&args.input).with_context(|| format!("opening {}", args.input))?,
        ))
    };
    let mut reader = csv_reader(source);
    let layout = Layout::from_headers(
        reader.headers().context("reading header")?,
        &args.model.response,
    )?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut records = reader.records();
    let mut next_row = |strict: bool| -> Result<Option<(u64, Vec<f64>)>> {
        for record in records.by_ref() {
            let parsed = record.map_err(anyhow::Error::from).and_then(|r| {
                let line = line_of(&r);
                layout.parse(&r).with_context(|| format!("line {line}"))
            });
            match parsed {
                Ok(row) => return Ok(Some(row)),
                Err(e) if strict => return Err(e),
                Err(e) => warn!("skipping malformed input: {e:#}"),
            }
        }
        Ok(None)
    };

    let mut streamer = if let Some(path) = &args.resume {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let snap = Snapshot::from_json(&text)?;
        let names: Vec<String> = snap
            .model
            .covariates
            .iter()
            .map(|c| c.name.clone())
            .collect();
        if names != layout.covariate_names {
            bail!(
                "input covariates {:?} do not match the saved model {:?}",
                layout.covariate_names,
                names
            );
        }
        let Some(state) = snap.online else {
            bail!("{} holds no online state", path.display())
        };
        Streamer {
            args: &args,
            spec: snap.model,
            state,
            last_emitted: None,
        }
    } else {
        if args.n_warm == 0 {
            bail!("--n-warm must be at least 1");
        }
        let mut columns = vec![Vec::with_capacity(args.n_warm); layout.covariate_names.len()];
        let mut y = Vec::with_capacity(args.n_warm);
        while y.len() < args.n_warm {
            let Some((yi, xs)) = next_row(args.strict)? else {
                bail!(
                    "stream ended after {} rows, before the {}-row warm-up",
                    y.len(),
                    args.n_warm
                )
            };
            y.push(yi);
            for (c, x) in columns.iter_mut().zip(xs) {
                c.push(x);
            }
        }
        let domain = build::parse_domain(args.model.domain.as_deref().unwrap_or("0,1"))?;
        let spec = build::model_spec(&args.model, &layout.covariate_names, &columns, Some(domain))?;
        let design = build::design(&spec, &columns, y)?;
        let config = OnlineConfig {
            tau: args.tau,
            floor: args.floor,
            thin: args.thin,
        };
        let state = warmup(
            &design,
            &spec.hyper,
            &build::atom_grid(&args.model)?,
            &build::fit_options(&args.model),
            config,
        )?;
        if !state.warm().all_converged {
            warn!("some warm-up atom fits stopped at max_iter; consider a larger --n-warm");
        }
        let mut s = Streamer {
            args: &args,
            spec,
            state,
            last_emitted: None,
        };
        s.emit()?;
        s
    };

    while let Some((yi, xs)) = next_row(args.strict)? {
        match streamer.absorb(yi, &xs) {
            Ok(()) => {}
            Err(e)
                if !args.strict
                    && e.downcast_ref::<nbvb_core::NbvbError>()
                        .is_some_and(is_row_error) =>
            {
                warn!("skipping observation: {e:#}");
            }
            Err(e) => return Err(e),
        }
    }
    if streamer.last_emitted != Some(streamer.state.stats().n) {
        streamer.emit()?;
    }
    Ok(())
}

fn is_row_error(e: &nbvb_core::NbvbError) -> bool {
    matches!(
        e,
        nbvb_core::NbvbError::Extrapolation { .. } | nbvb_core::NbvbError::Domain(_)
    )
}
