use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nbvb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbvb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = nbvb(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn simulate_is_deterministic_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--seed", "9", "--out", p(&a)]);
    ok(&["simulate", "--seed", "9", "--out", p(&b)]);
    for f in ["data.csv", "truth.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let (header, rows) = read_rows(&a.join("data.csv"));
    assert_eq!(header, ["x1", "x2", "y"]);
    assert_eq!(rows.len(), 500);
    assert!(rows.iter().all(|r| r[2] >= 0.0 && r[2].fract() == 0.0));
    let (_, truth) = read_rows(&a.join("truth.csv"));
    assert_eq!(truth.len(), 201);
    assert_eq!(truth[0][0], 0.0);
    assert_eq!(truth[200][0], 1.0);
}

#[test]
fn fit_outputs_and_summarize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let fit = dir.path().join("fit");
    let again = dir.path().join("again");
    let narrow = dir.path().join("narrow");
    ok(&["simulate", "--seed", "3", "--out", p(&sim)]);
    ok(&["fit", "-i", p(&sim.join("data.csv")), "-o", p(&fit)]);

    let report = csv::Reader::from_path(fit.join("report.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(report, 50);
    let (_, pmf) = read_rows(&fit.join("kappa_pmf.csv"));
    assert!((pmf.iter().map(|r| r[1]).sum::<f64>() - 1.0).abs() < 1e-12);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit.join("report.json")).unwrap()).unwrap();
    assert!(json["wall_clock_seconds"].as_f64().unwrap() > 0.0);

    ok(&[
        "summarize",
        "-s",
        p(&fit.join("snapshot.json")),
        "-o",
        p(&again),
    ]);
    for f in [
        "kappa_pmf.csv",
        "report.csv",
        "curve_x1.csv",
        "curve_x2.csv",
        "sigma2_x1.csv",
        "sigma2_x2.csv",
    ] {
        assert_eq!(
            fs::read(fit.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }

    ok(&[
        "summarize",
        "-s",
        p(&fit.join("snapshot.json")),
        "-o",
        p(&narrow),
        "--level",
        "0.5",
    ]);
    let (header, wide) = read_rows(&fit.join("curve_x1.csv"));
    let (_, tight) = read_rows(&narrow.join("curve_x1.csv"));
    assert_eq!(wide.len(), 201);
    let (lo, hi) = (
        header.iter().position(|h| h == "eta_lower").unwrap(),
        header.iter().position(|h| h == "eta_upper").unwrap(),
    );
    for (w, t) in wide.iter().zip(&tight) {
        assert!(w[lo] < t[lo] && t[hi] < w[hi]);
    }
}

#[test]
fn fit_is_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--seed", "4", "--n", "150", "--out", p(&sim)]);
    let args = |out: &Path| {
        vec![
            "fit".to_string(),
            "-i".into(),
            p(&sim.join("data.csv")).into(),
            "-o".into(),
            p(out).into(),
            "--knots".into(),
            "6".into(),
            "--kappa-size".into(),
            "10".into(),
        ]
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let v = args(out);
        ok(&v.iter().map(String::as_str).collect::<Vec<_>>());
    }
    for f in [
        "snapshot.json",
        "kappa_pmf.csv",
        "report.csv",
        "curve_x1.csv",
        "sigma2_x2.csv",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("snap.json");
    fs::write(&snap, r#"{"format":"nbvb-snapshot","version":"0.9"}"#).unwrap();
    let out = nbvb(&["summarize", "-s", p(&snap), "-o", p(&dir.path().join("o"))]);
    assert!(!out.status.success());
    let line: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["kind"], "snapshot");
    assert!(line["error"].as_str().unwrap().contains("incompatible"));

    let data = dir.path().join("bad.csv");
    fs::write(&data, "x,y\n0.1,1\n0.2,2.5\n").unwrap();
    let out = nbvb(&["fit", "-i", p(&data), "-o", p(&dir.path().join("f"))]);
    assert!(!out.status.success());
    let line: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    let msg = line["error"].as_str().unwrap();
    assert!(msg.contains("line 3") && msg.contains("integer"), "{msg}");
}

fn prefix(src: &Path, dst: &Path, skip: usize, take: usize) {
    let text = fs::read_to_string(src).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let body: Vec<&str> = lines.skip(skip).take(take).collect();
    fs::write(dst, format!("{header}\n{}\n", body.join("\n"))).unwrap();
}

#[test]
fn stream_at_warmup_matches_fit_on_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&[
        "simulate",
        "--scenario",
        "nonpar_1term",
        "--kappa",
        "5",
        "--n",
        "300",
        "--seed",
        "5",
        "--out",
        p(&sim),
    ]);
    let warm = dir.path().join("warm.csv");
    prefix(&sim.join("data.csv"), &warm, 0, 100);
    let common = [
        "--knots",
        "12",
        "--kappa-lo",
        "0.5",
        "--kappa-hi",
        "50",
        "--kappa-size",
        "20",
        "--domain",
        "0,1",
    ];
    let fit = dir.path().join("fit");
    let st = dir.path().join("st");
    let mut fit_args = vec!["fit", "-i", p(&warm), "-o", p(&fit)];
    fit_args.extend(common);
    ok(&fit_args);
    let data = sim.join("data.csv");
    let mut st_args = vec!["stream", "-i", p(&data), "-o", p(&st), "--n-warm", "100"];
    st_args.extend(common);
    ok(&st_args);

    let at_warm = st.join("summary_00000100");
    for f in ["kappa_pmf.csv", "curve_x.csv"] {
        let (ha, a) = read_rows(&fit.join(f));
        let (hb, b) = read_rows(&at_warm.join(f));
        assert_eq!(ha, hb);
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0), "{f}: {x} vs {y}");
            }
        }
    }
    for n in [150, 200, 250, 300] {
        assert!(st
            .join(format!("summary_{n:08}"))
            .join("kappa_pmf.csv")
            .exists());
    }
}

#[test]
fn stream_resume_and_stdin_match_single_pass() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&[
        "simulate",
        "--scenario",
        "nonpar_1term",
        "--kappa",
        "10",
        "--n",
        "400",
        "--seed",
        "6",
        "--out",
        p(&sim),
    ]);
    let data = sim.join("data.csv");
    let opts = [
        "--knots",
        "10",
        "--kappa-lo",
        "1",
        "--kappa-hi",
        "100",
        "--kappa-size",
        "15",
        "--every",
        "100",
    ];

    let full = dir.path().join("full");
    let mut args = vec!["stream", "-i", p(&data), "-o", p(&full)];
    args.extend(opts);
    ok(&args);

    let head = dir.path().join("head.csv");
    let tail = dir.path().join("tail.csv");
    prefix(&data, &head, 0, 250);
    prefix(&data, &tail, 250, 150);
    let part = dir.path().join("part");
    let mut args = vec!["stream", "-i", p(&head), "-o", p(&part)];
    args.extend(opts);
    ok(&args);
    let state = part.join("state.json");
    let mut args = vec![
        "stream",
        "-i",
        p(&tail),
        "-o",
        p(&part),
        "--resume",
        p(&state),
    ];
    args.extend(opts);
    ok(&args);
    for f in ["kappa_pmf.csv", "curve_x.csv", "report.csv"] {
        let a = fs::read(full.join("summary_00000400").join(f)).unwrap();
        assert_eq!(
            a,
            fs::read(part.join("summary_00000400").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(
        fs::read(full.join("state.json")).unwrap(),
        fs::read(part.join("state.json")).unwrap()
    );

    let piped = dir.path().join("piped");
    let mut args = vec!["stream", "-i", "-", "-o", p(&piped)];
    args.extend(opts);
    let out = Command::new(env!("CARGO_BIN_EXE_nbvb"))
        .args(&args)
        .stdin(fs::File::open(&data).unwrap())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(full.join("state.json")).unwrap(),
        fs::read(piped.join("state.json")).unwrap()
    );
}

#[test]
fn stream_malformed_lines_skip_or_abort() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&[
        "simulate",
        "--scenario",
        "nonpar_1term",
        "--kappa",
        "5",
        "--n",
        "150",
        "--seed",
        "7",
        "--out",
        p(&sim),
    ]);
    let mut text = fs::read_to_string(sim.join("data.csv")).unwrap();
    text.push_str("0.5,oops\n1.7,3\n0.25,2\n");
    let data = dir.path().join("data.csv");
    fs::write(&data, text).unwrap();
    let opts = ["--knots", "8", "--kappa-size", "10", "--n-warm", "100"];

    let lenient = dir.path().join("lenient");
    let mut args = vec!["stream", "-i", p(&data), "-o", p(&lenient)];
    args.extend(opts);
    ok(&args);
    let snap: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(lenient.join("state.json")).unwrap()).unwrap();
    // the non-integer response and the out-of-domain covariate are skipped
    assert_eq!(snap["online"]["stats"]["n"], 151);

    let strict = dir.path().join("strict");
    let mut args = vec!["stream", "-i", p(&data), "-o", p(&strict), "--strict"];
    args.extend(opts);
    let out = nbvb(&args);
    assert!(!out.status.success());
    let line: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(
        line["error"].as_str().unwrap().contains("line 152"),
        "{line}"
    );
}
