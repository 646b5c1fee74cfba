use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use serde_json::Value;
use smoothlab::cli::{run, Cli};
use smoothlab::io::{stage_samples, Staged};
use smoothlab::models::ModelSpec;
use smoothlab::wbp::Population;
use smoothlab::Error;

const LOGNORMAL: &str = "family=similarity\nd=2\nt.mu=-0.9241962407465937\nt.sigma=0.6797779934458726\n\
                         q.dist=gaussian\nq.mean=0,0\nq.scale=1\n";

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn smoothlab(args: &str) -> smoothlab::Result<smoothlab::cli::Outcome> {
    let cli = Cli::try_parse_from(std::iter::once("smoothlab").chain(args.split_whitespace())).unwrap();
    run(&cli)
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// spectrum, simulate, tails and constants on a small lognormal model.
fn pipeline(root: &Path, cfg: &Path, threads: usize) {
    let c = cfg.display();
    let r = root.display();
    smoothlab(&format!("spectrum --config {c} --out {r}/spec --pool 4000 --grid 16 --s-hi 4 --step 0.2 --threads {threads}"))
        .unwrap();
    smoothlab(&format!("simulate --config {c} --out {r}/sim --population 8192 --sweeps 20 --threads {threads}")).unwrap();
    smoothlab(&format!(
        "tails --config {c} --out {r}/tails --samples {r}/sim --exponents {r}/spec/exponents.json --k 200 --threads {threads}"
    ))
    .unwrap();
    smoothlab(&format!(
        "constants --config {c} --out {r}/const --samples {r}/sim --exponents {r}/spec/exponents.json \
         --pool 4000 --grid 16 --goldie 2 --threads {threads}"
    ))
    .unwrap();
}

#[test]
fn outputs_are_byte_identical_across_reruns_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.cfg", LOGNORMAL);
    let runs: Vec<PathBuf> = [1, 3, 3].iter().enumerate().map(|(i, t)| {
        let root = dir.path().join(format!("run{i}"));
        pipeline(&root, &cfg, *t);
        root
    }).collect();
    for stage in ["spec", "sim", "tails", "const"] {
        // manifests record the thread count and output directory, which
        // stay out of the hash
        let m: Vec<Value> = runs.iter().map(|r| json(&r.join(stage).join("manifest.json"))).collect();
        assert!(m.iter().all(|x| x["hash"] == m[0]["hash"]));
        assert_ne!(m[0]["threads"], m[1]["threads"]);
        let mut bytes: Vec<_> = runs.iter().map(|r| read_dir_bytes(&r.join(stage))).collect();
        for b in &mut bytes {
            b.remove("manifest.json");
        }
        assert_eq!(bytes[1], bytes[2], "{stage}: rerun differs");
        assert_eq!(bytes[0], bytes[1], "{stage}: thread count changed the outputs");
    }
    // every JSON output references its manifest
    for (stage, file) in [("spec", "exponents.json"), ("tails", "tails.json"), ("const", "constants.json")] {
        let out = json(&runs[0].join(stage).join(file));
        let man = json(&runs[0].join(stage).join("manifest.json"));
        assert_eq!(out["manifest_hash"], man["hash"], "{stage}");
    }
}

#[test]
fn config_errors_leave_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "family=maxwell\nd=3\nbogus=1\n");
    let out = dir.path().join("out");
    let err = smoothlab(&format!("spectrum --config {} --out {}", cfg.display(), out.display())).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists());

    let status = Process::new(env!("CARGO_BIN_EXE_smoothlab"))
        .args(["spectrum", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn samples_from_another_model_are_a_provenance_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.cfg", LOGNORMAL);
    let other = write_config(dir.path(), "o.cfg", "family=similarity\nd=2\nt.mu=-0.5\nt.sigma=0.5\n");
    let r = dir.path().display();
    smoothlab(&format!("simulate --config {} --out {r}/sim --population 2048 --sweeps 2", other.display())).unwrap();
    let err = smoothlab(&format!("tails --config {} --out {r}/t --samples {r}/sim --beta 3", cfg.display())).unwrap_err();
    assert!(matches!(err, Error::Provenance(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
    assert!(!dir.path().join("t").exists());

    let status = Process::new(env!("CARGO_BIN_EXE_smoothlab"))
        .args(["tails", "--config", cfg.to_str().unwrap(), "--samples"])
        .arg(dir.path().join("sim"))
        .args(["--beta", "3", "--out"])
        .arg(dir.path().join("t"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn zero_start_without_immigration_stays_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.cfg", "family=maxwell\nd=3\n");
    let r = dir.path().display();
    smoothlab(&format!("simulate --config {} --out {r}/sim --population 1000 --sweeps 3 --init zero", cfg.display())).unwrap();
    let bytes = fs::read(dir.path().join("sim/samples.f64")).unwrap();
    assert_eq!(bytes.len(), 1000 * 3 * 8);
    assert!(bytes.iter().all(|b| *b == 0));
}

#[test]
fn maxwell_diagnostics_keep_identity_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.cfg", "family=maxwell\nd=3\n");
    let r = dir.path().display();
    smoothlab(&format!("simulate --config {} --out {r}/sim --population 20000 --sweeps 10", cfg.display())).unwrap();
    let text = fs::read_to_string(dir.path().join("sim/diagnostics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "generation,cov_residual_id,cov_se,radial_median,flagged");
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[1] <= 3.0 * v[2], "generation {}: residual {} se {}", v[0], v[1], v[2]);
        rows += 1;
    }
    assert_eq!(rows, 10);
}

#[test]
fn pareto_dump_gives_hill_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = "family=similarity\nd=1\nt.dist=const\nt.c=0.5\nrotation=identity\n";
    let cfg = write_config(dir.path(), "m.cfg", text);
    let spec = ModelSpec::parse(text).unwrap();
    let n = 200_000;
    // exact Pareto(3) quantiles at the midpoints of n equal cells
    let data: Vec<f64> = (0..n).map(|i| (1.0 - (i as f64 + 0.5) / n as f64).powf(-1.0 / 3.0)).collect();
    let mut pop = Population::from_data(&spec, data, 0);
    pop.generation = 50;
    let mut staged = Staged::new();
    stage_samples(&mut staged, &pop, "synthetic").unwrap();
    staged.commit(&dir.path().join("sim")).unwrap();
    let r = dir.path().display();
    smoothlab(&format!("tails --config {} --out {r}/t --samples {r}/sim --beta 3", cfg.display())).unwrap();
    let out = json(&dir.path().join("t/tails.json"));
    let hill = out["radial"]["hill"]["index"].as_f64().unwrap();
    assert!((hill - 3.0).abs() < 0.05, "{hill}");
    let plateau = out["radial"]["plateau_level"][0].as_f64().unwrap();
    assert!((plateau - 1.0).abs() < 0.05, "{plateau}");
}

#[test]
fn beta_flag_far_from_report_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.cfg", LOGNORMAL);
    let (c, r) = (cfg.display(), dir.path().display());
    smoothlab(&format!("spectrum --config {c} --out {r}/spec --pool 4000 --grid 16 --s-hi 4 --step 0.2 --no-se")).unwrap();
    smoothlab(&format!("simulate --config {c} --out {r}/sim --population 4096 --sweeps 5")).unwrap();
    let base = format!("tails --config {c} --out {r}/t --samples {r}/sim --exponents {r}/spec/exponents.json --k 100");
    let quiet = smoothlab(&base).unwrap_or_else(|e| panic!("{e}"));
    assert!(quiet.warnings.iter().all(|w| !w.contains("--beta")));
    let loud = smoothlab(&format!("{base} --beta 2.5")).unwrap();
    assert!(loud.warnings.iter().any(|w| w.contains("--beta 2.5")), "{:?}", loud.warnings);
    assert!(loud.warnings.iter().any(|w| w.contains("burn-in")));
}

#[test]
fn validate_reports_failures_as_content() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("maxwell.cfg", "family=maxwell\nd=3\n", true, ""),
        ("n1.cfg", "family=maxwell\nd=3\nN=1\n", false, "N > 1"),
        (
            "skew.cfg",
            "family=similarity\nd=2\nrotation=fixed\nrotation.matrix=1,0.5,0,1\n",
            false,
            "not orthogonal",
        ),
    ];
    for (name, text, pass, needle) in cases {
        let cfg = write_config(dir.path(), name, text);
        let out = dir.path().join(name.replace(".cfg", ""));
        let outcome = smoothlab(&format!("validate --config {} --out {}", cfg.display(), out.display())).unwrap();
        let report = json(&out.join("validate.json"));
        assert_eq!(report["pass"].as_bool(), Some(pass), "{name}: {:?}", outcome.lines);
        if !pass {
            assert!(outcome.lines.iter().any(|l| l.starts_with("FAIL") && l.contains(needle)), "{:?}", outcome.lines);
        }
    }
}
