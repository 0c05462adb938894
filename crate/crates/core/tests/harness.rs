use std::path::Path;
use std::process::Command;

use modfl_core::harness::{
    compare, parse_config, parse_csv, plot_svg, read_csv, run, DatasetKind, ExperimentConfig, Framework, MetricRow,
    CSV_HEADER,
};
use modfl_core::Error;

fn tiny(framework: Framework) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(framework, DatasetKind::Synthetic, 4, 3, 2, 99);
    c.num_op_groups = 2;
    c.samples_per_dataset = 216;
    c
}

fn row(round: usize, framework: &str, arch: &str, value: f64) -> MetricRow {
    MetricRow {
        round,
        framework: framework.into(),
        arch: arch.into(),
        cohort: "mean".into(),
        metric: "accuracy".into(),
        value,
    }
}

#[test]
fn run_writes_complete_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Framework::ModFl);
    let out = run(&cfg, dir.path()).unwrap();

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows = parse_csv(&csv).unwrap();
    // 2 archs x (3 mean metrics + 2 clients) series per round
    let series = 2 * (3 + 2);
    assert_eq!(csv.lines().count(), cfg.rounds * series + 1);
    assert_eq!(rows.len(), cfg.rounds * series);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["seed"], "99");
    assert_eq!(manifest["rounds_completed"], 2);
    assert_eq!(manifest["summary"].as_array().unwrap().len(), 2);

    let rerun = parse_config(&dir.path().join("config.toml")).unwrap();
    assert_eq!(rerun, cfg);
    let summary = std::fs::read_to_string(dir.path().join("summary.md")).unwrap();
    assert!(summary.contains("| modfl | synth_lo | 4 | 3 |"), "{summary}");
    assert_eq!(out.summary[0].accuracy, out.metrics[1].cohort_mean["synth_hi"]);
}

#[test]
fn same_seed_gives_identical_csv_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = tiny(Framework::FedPer);
    run(&cfg, a.path()).unwrap();
    run(&cfg, b.path()).unwrap();
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn failed_run_is_marked_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(Framework::ModFl, DatasetKind::CifarStl, 18, 3, 1, 1);
    let missing = dir.path().join("nowhere");
    cfg.data_paths.cifar10 = Some(missing.clone());
    cfg.data_paths.stl10 = Some(missing);
    let err = run(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "incomplete");
    assert!(manifest["error"].as_str().unwrap().contains("nowhere"));
    assert!(dir.path().join("config.toml").exists());
}

#[test]
fn plot_has_one_curve_per_framework_and_arch() {
    let mut rows = Vec::new();
    for fw in ["modfl", "fedper"] {
        for arch in ["synth_lo", "synth_hi"] {
            for r in 1..=4 {
                rows.push(row(r, fw, arch, 0.1 * r as f64));
            }
        }
    }
    rows.push(MetricRow {
        cohort: "client_0".into(),
        ..row(1, "modfl", "synth_lo", 0.9)
    });
    let svg = plot_svg(&rows).unwrap();
    assert!(svg.starts_with("<svg"));
    let curves: Vec<&str> = svg.lines().filter(|l| l.contains(r#"class="curve""#)).collect();
    assert_eq!(curves.len(), 4);
    for c in curves {
        let points = c.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        assert_eq!(points.split(' ').count(), 4);
    }
    assert!(svg.contains("Communication round") && svg.contains("Test accuracy"));
    assert!(svg.contains("fedper synth_hi"));
}

#[test]
fn plot_rejects_files_without_data() {
    assert!(parse_csv(&format!("{CSV_HEADER}\n")).is_err());
    let only_clients = vec![MetricRow {
        cohort: "client_0".into(),
        ..row(1, "modfl", "synth_lo", 0.5)
    }];
    assert!(plot_svg(&only_clients).is_err());
}

#[test]
fn compare_with_itself_is_zero_and_swapping_negates() {
    let a: Vec<MetricRow> = (1..=3).map(|r| row(r, "modfl", "synth_lo", 0.2 * r as f64)).collect();
    let b: Vec<MetricRow> = (1..=3).map(|r| row(r, "fedper", "synth_lo", 0.15 * r as f64 + 0.01)).collect();
    let same = compare(&a, &a).unwrap();
    assert!(same.per_round.iter().all(|d| d.delta == 0.0));
    let ab = compare(&a, &b).unwrap();
    let ba = compare(&b, &a).unwrap();
    for (x, y) in ab.per_round.iter().zip(&ba.per_round) {
        assert_eq!(x.delta, -y.delta);
    }
    assert_eq!(ab.final_delta["synth_lo"], -ba.final_delta["synth_lo"]);
}

#[test]
fn compare_matches_hand_computed_deltas() {
    // A: 0.50 0.60 0.75   B: 0.40 0.65 0.70
    let a = vec![row(1, "modfl", "x", 0.5), row(2, "modfl", "x", 0.6), row(3, "modfl", "x", 0.75)];
    let b = vec![row(1, "fedper", "x", 0.4), row(2, "fedper", "x", 0.65), row(3, "fedper", "x", 0.7)];
    let c = compare(&a, &b).unwrap();
    let deltas: Vec<f64> = c.per_round.iter().map(|d| d.delta).collect();
    let expected = [0.1, -0.05, 0.05];
    for (d, e) in deltas.iter().zip(expected) {
        assert!((d - e).abs() < 1e-12, "{d} vs {e}");
    }
    assert_eq!(c.final_round, 3);
    assert!((c.final_delta["x"] - 0.05).abs() < 1e-12);
}

#[test]
fn compare_rejects_mismatched_grids() {
    let a = vec![row(1, "modfl", "x", 0.5), row(2, "modfl", "x", 0.6)];
    let b = vec![row(1, "fedper", "x", 0.4)];
    assert!(matches!(compare(&a, &b), Err(Error::Comparison(_))));
    let c = vec![row(1, "fedper", "y", 0.4), row(2, "fedper", "y", 0.4)];
    assert!(matches!(compare(&a, &c), Err(Error::Comparison(_))));
}

fn modfl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_modfl")).args(args).output().unwrap()
}

const CONFIG: &str = r#"
framework = "fedavg"
dataset = "synthetic"
clients = 4
labels_per_group = 9
rounds = 1
seed = 5
samples_per_dataset = 216
"#;

#[test]
fn cli_run_plot_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("run");
    let o = modfl(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "8", "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(parse_config(&out.join("config.toml")).unwrap().seed, 8);
    let csv = out.join("metrics.csv");
    let rows = read_csv(&csv).unwrap();
    assert!(rows.iter().any(|r| r.cohort == "global"));

    let svg = dir.path().join("f.svg");
    let o = modfl(&["plot", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&svg).unwrap().contains("fedavg synth_lo"));

    let o = modfl(&["compare", csv.to_str().unwrap(), csv.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("delta +0.00 points"));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, CONFIG.replace("clients = 4", "clients = 5")).unwrap();
    assert_eq!(modfl(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(modfl(&["bogus"]).status.code(), Some(1));

    let csv = dir.path().join("m.csv");
    std::fs::write(&csv, format!("{CSV_HEADER}\n1,modfl,x,mean,accuracy,0.5\n1,modfl,x,mean\n")).unwrap();
    let o = modfl(&["plot", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let stl = dir.path().join("stl.toml");
    std::fs::write(
        &stl,
        "framework = \"modfl\"\ndataset = \"cifar_stl\"\nclients = 18\nlabels_per_group = 3\nrounds = 1\nseed = 1\n\
         [data_paths]\ncifar10 = \"/nonexistent\"\nstl10 = \"/nonexistent\"\n",
    )
    .unwrap();
    let o = modfl(&["partition", "--dry-run", "--config", stl.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn cli_partition_dry_run_and_check_grad() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let o = modfl(&["partition", "--dry-run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("client,arch,config_group,op_group,train,test"));
    assert_eq!(text.lines().filter(|l| l.contains(",synth_")).count(), 4);

    let o = modfl(&["check-grad", "--instances", "2"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("PASS").count(), 6);
}
