use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dlsjm::pipeline::{hash_file, Manifest};

fn dlsjm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlsjm")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 30 x 8 responses where everyone answers item 1 correctly.
fn toy_csv(dir: &Path) -> PathBuf {
    let mut r = ChaCha8Rng::seed_from_u64(30);
    let mut text = (1..=8).map(|i| format!("q{i}")).collect::<Vec<_>>().join(",") + "\n";
    for _ in 0..30 {
        let row: Vec<&str> = (0..8)
            .map(|i| if i == 0 || r.random_bool(0.55) { "1" } else { "0" })
            .collect();
        text += &(row.join(",") + "\n");
    }
    let path = dir.join("toy.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn parse_all(path: &Path) -> usize {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let width = rdr.headers().unwrap().len();
    let mut rows = 0;
    for rec in rdr.records() {
        assert_eq!(rec.unwrap().len(), width, "{}", path.display());
        rows += 1;
    }
    rows
}

#[test]
fn fit_smoke_run_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let input = toy_csv(tmp.path());
    let run = tmp.path().join("run");
    let out = dlsjm(&[
        "fit", s(&input), "--seed", "4", "--iterations", "2000", "--burn-in", "500", "--adapt-window", "50", "-o",
        s(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    for f in ["person_dist.csv", "item_dist.csv", "beta_summary.csv", "theta_summary.csv", "log_posterior.csv"] {
        assert!(parse_all(&run.join(f)) > 0, "{f}");
    }
    assert_eq!(parse_all(&run.join("person_dist.csv")), 30);
    assert_eq!(parse_all(&run.join("item_dist.csv")), 8);
    assert_eq!(parse_all(&run.join("log_posterior.csv")), 150);
    assert_eq!(parse_all(&run.join("clusters_person.csv")), 30);
    assert_eq!(parse_all(&run.join("clusters_item.csv")), 8);
    assert!(parse_all(&run.join("traces/diagnostics.csv")) > 0);
    let header = std::fs::read_to_string(run.join("item_dist.csv")).unwrap();
    assert!(header.starts_with(",q1,q2"), "item labels come from the header");

    let manifest: Manifest =
        serde_json::from_reader(std::fs::File::open(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "fit");
    assert_eq!(manifest.config.seed, Some(4));
    assert_eq!(manifest.config.sampler.n_iterations, 2000);
    assert_eq!(manifest.inputs[0].hash, hash_file(&input).unwrap());
    assert_eq!(manifest.acceptance_rates.len(), 6);
    assert!(manifest.wall_clock_seconds > 0.0);

    let out = dlsjm(&["report", s(&run)]);
    assert!(out.status.success());
    let html = std::fs::read_to_string(run.join("report.html")).unwrap();
    assert_eq!(html.matches("<svg").count(), 4);
    assert!(html.contains("Acceptance rates"));

    // the cached input reloads and re-clusters with another cluster count
    let out = dlsjm(&["cluster", s(&run), "--seed", "1", "--g-person", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let labels = std::fs::read_to_string(run.join("clusters_person.csv")).unwrap();
    assert!(labels.lines().skip(1).all(|l| l.ends_with(",1") || l.ends_with(",2")));
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let input = toy_csv(tmp.path());
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 9\n[sampler]\nn_iterations = 700\nburn_in = 200\nadapt_window = 50\nthin = 5\n[clustering]\ng_person = 2\n",
    )
    .unwrap();
    let run = tmp.path().join("run");
    let out = dlsjm(&["--config", s(&cfg), "fit", s(&input), "--thin", "10", "-o", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Manifest =
        serde_json::from_reader(std::fs::File::open(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config.seed, Some(9));
    assert_eq!(manifest.config.sampler.n_iterations, 700);
    assert_eq!(manifest.config.sampler.thin, 10);
    assert_eq!(manifest.config.clustering.g_person, 2);
    assert_eq!(parse_all(&run.join("log_posterior.csv")), 50);
}

#[test]
fn exit_codes_distinguish_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "1,0\n0,2\n1,1\n").unwrap();
    let out = dlsjm(&["fit", s(&bad), "--seed", "1", "-o", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-binary"));

    let empty_item = tmp.path().join("empty.csv");
    std::fs::write(&empty_item, "1,0\n0,0\n1,0\n").unwrap();
    let out = dlsjm(&["fit", s(&empty_item), "--seed", "1", "-o", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));

    let input = toy_csv(tmp.path());
    let out = dlsjm(&["fit", s(&input), "-o", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    let cfg = tmp.path().join("typo.toml");
    std::fs::write(&cfg, "sed = 3\n").unwrap();
    let out = dlsjm(&["--config", s(&cfg), "simulate", "-o", s(&tmp.path().join("s"))]);
    assert_eq!(out.status.code(), Some(2));

    // demanding 99% acceptance from every block trips the guard
    let strict = tmp.path().join("strict.toml");
    std::fs::write(&strict, "[guard]\nmin_acceptance = 0.99\n").unwrap();
    let run = tmp.path().join("guarded");
    let out = dlsjm(&[
        "--config", s(&strict), "fit", s(&input), "--seed", "2", "--iterations", "400", "--burn-in", "100",
        "--adapt-window", "50", "-o", s(&run),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(run.join("manifest.json").exists(), "outputs are written before the guard reports");
}

#[test]
fn simulate_and_baseline_write_their_files() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let out = dlsjm(&["simulate", "--seed", "5", "--per-class", "8", "--rho", "0", "-o", s(&sim)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(parse_all(&sim.join("responses.csv")), 24);
    assert_eq!(parse_all(&sim.join("truth.csv")), 24);

    let base = tmp.path().join("base");
    let out = dlsjm(&["baseline", s(&sim.join("responses.csv")), "--seed", "2", "--classes", "2", "-o", s(&base)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(parse_all(&base.join("mixture_classes.csv")), 24);
    let params: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(base.join("mixture_params.json")).unwrap()).unwrap();
    assert_eq!(params["g"], 2);
}

#[test]
fn help_lists_every_subcommand() {
    let out = dlsjm(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["fit", "simulate", "study", "cluster", "baseline", "report"] {
        assert!(text.contains(cmd), "{cmd}");
    }
    assert!(text.contains("Exit codes"));
}

#[test]
fn tiny_study_writes_one_table_per_method() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("study");
    let out = dlsjm(&[
        "study", "--seed", "3", "--replicates", "1", "--condition", "0.9", "0.8", "--per-class", "10",
        "--iterations", "600", "--burn-in", "100", "--adapt-window", "50", "-o", s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(out_dir.join("table3.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6, "three true classes for each of two methods");
    assert!(rows.iter().filter(|r| &r[2] == "dlsjm").count() == 3);
    assert_eq!(parse_all(&out_dir.join("replicates.csv")), 1);
}
