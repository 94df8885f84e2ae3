use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn adalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adalign"))
        .args(args)
        .env_remove("ADALIGN_OUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(output: &Output) {
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 10] = ["--epochs", "3", "--frequencies", "64", "--components", "2", "--hidden-dim", "8", "--emb-dim", "4"];

/// Writes a small canonical-style spec and synthesizes it into `dir/data`.
fn synth_small(dir: &Path, extra: &str) -> std::path::PathBuf {
    let spec = dir.join("small.spec");
    fs::write(&spec, format!("nodes_per_domain = 60\nseed = 3\n{extra}")).unwrap();
    let data = dir.join("data");
    ok(&adalign(&["synth", "--spec", p(&spec), "--out-dir", p(&data)]));
    data
}

fn train_small(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", p(data), "--out-dir", p(out)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    adalign(&args)
}

fn column_means(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().map(|l| l.split(',').map(|v| v.trim().parse().unwrap()).collect()).collect();
    (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64).collect()
}

#[test]
fn synth_is_deterministic_and_applies_the_shift() {
    let dir = TempDir::new().unwrap();
    let data = synth_small(dir.path(), "shift.rotation_degrees = 0\nshift.delta_p_out = 0\n");
    for file in ["source.edges", "source.features.csv", "source.labels", "target.edges", "target.features.csv", "target.labels", "spec.kv", "manifest.txt"] {
        assert!(data.join(file).exists(), "{file}");
    }
    let again = dir.path().join("again");
    ok(&adalign(&["synth", "--spec", p(&dir.path().join("small.spec")), "--out-dir", p(&again)]));
    for file in ["source.features.csv", "target.edges", "target.labels"] {
        assert_eq!(fs::read(data.join(file)).unwrap(), fs::read(again.join(file)).unwrap());
    }
    // canonical translation is +3 on feature 0 and nothing elsewhere
    let (s, t) = (column_means(&data.join("source.features.csv")), column_means(&data.join("target.features.csv")));
    assert!((t[0] - s[0] - 3.0).abs() < 0.5, "{} vs {}", t[0], s[0]);
    assert!((t[5] - s[5]).abs() < 0.5);
}

#[test]
fn synth_rejects_invalid_specs_as_usage_errors() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("bad.spec");
    fs::write(&spec, "p_in = 1.5\n").unwrap();
    let out = adalign(&["synth", "--spec", p(&spec), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p_in"));
}

#[test]
fn train_eval_and_export_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = synth_small(dir.path(), "");
    let run = dir.path().join("run");
    ok(&train_small(&data, &run, &[]));
    let log = fs::read_to_string(run.join("metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let last = log.lines().last().unwrap();
    let final_f1 = last.split(' ').find_map(|kv| kv.strip_prefix("micro_f1:")).unwrap();

    let eval_dir = dir.path().join("eval");
    let ckpt_before = fs::read(run.join("model.ckpt")).unwrap();
    let out = adalign(&["eval", "--checkpoint", p(&run.join("model.ckpt")), "--data", p(&data), "--out-dir", p(&eval_dir), "--report-frequencies", "256"]);
    ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains(&format!("micro_f1:{final_f1} ")), "{stdout} vs {final_f1}");
    assert!(stdout.contains("nsd:") && stdout.contains("mmd:"));
    assert_eq!(fs::read_to_string(eval_dir.join("eval.txt")).unwrap(), stdout);
    assert_eq!(fs::read(run.join("model.ckpt")).unwrap(), ckpt_before);

    let csv = dir.path().join("curves.csv");
    ok(&adalign(&["export-curves", p(&run.join("metrics.log")), p(&csv)]));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0], "epoch,l_source,l_align,micro_f1,macro_f1,clamp_active,wall_ms");
    for (row, line) in rows[1..].iter().zip(log.lines()) {
        let values: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        let logged: Vec<f64> = line.split(' ').map(|kv| kv.split_once(':').unwrap().1.parse().unwrap()).collect();
        for (a, b) in values.iter().zip(&logged) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn training_is_reproducible_and_manifests_record_the_config() {
    let dir = TempDir::new().unwrap();
    let data = synth_small(dir.path(), "");
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&train_small(&data, &a, &[]));
    ok(&train_small(&data, &b, &[]));
    ok(&train_small(&data, &c, &["--sampler", "random"]));
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());

    let manifest = |dir: &Path| fs::read_to_string(dir.join("manifest.txt")).unwrap();
    let config_lines = |text: &str| text.lines().filter(|l| l.starts_with("config.")).map(str::to_string).collect::<Vec<_>>();
    let (ma, mc) = (manifest(&a), manifest(&c));
    assert!(ma.contains("config.epochs = 3\n") && ma.contains("config.kappa = 0.7\n"));
    assert!(ma.contains("artifact.model.ckpt = sha256:"));
    let differing: Vec<_> = config_lines(&ma).into_iter().zip(config_lines(&mc)).filter(|(x, y)| x != y).collect();
    assert_eq!(differing, vec![("config.sampler = adaptive".to_string(), "config.sampler = random".to_string())]);
    assert!(!ma.contains("time") && !ma.contains("date"));
}

#[test]
fn flags_override_config_file_values() {
    let dir = TempDir::new().unwrap();
    let data = synth_small(dir.path(), "");
    let config = dir.path().join("run.cfg");
    fs::write(&config, "kappa = 0.2\nlambda = 0.5\n").unwrap();
    let run = dir.path().join("run");
    ok(&train_small(&data, &run, &["--config", p(&config), "--lambda", "0"]));
    let manifest = fs::read_to_string(run.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config.kappa = 0.2\n"));
    assert!(manifest.contains("config.lambda = 0\n"));
    assert!(manifest.contains("input.config = "));
    // the alignment loss is still logged without alignment training
    let log = fs::read_to_string(run.join("metrics.log")).unwrap();
    assert!(log.lines().all(|l| l.contains("l_align:")));
}

#[test]
fn out_dir_can_come_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("small.spec");
    fs::write(&spec, "nodes_per_domain = 30\n").unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_adalign"))
        .args(["synth", "--spec", p(&spec)])
        .env("ADALIGN_OUT_DIR", &target)
        .output()
        .unwrap();
    ok(&out);
    assert!(target.join("source.edges").exists());
}

#[test]
fn bad_config_values_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let data = synth_small(dir.path(), "");
    let run = dir.path().join("run");
    assert_eq!(train_small(&data, &run, &["--kappa", "2"]).status.code(), Some(2));
    assert_eq!(train_small(&data, &run, &["--sampler", "sideways"]).status.code(), Some(2));
    let config = dir.path().join("bad.cfg");
    fs::write(&config, "learning_rate = 1\n").unwrap();
    assert_eq!(train_small(&data, &run, &["--config", p(&config)]).status.code(), Some(2));
}

#[test]
fn missing_inputs_are_runtime_failures() {
    let dir = TempDir::new().unwrap();
    let out = train_small(&dir.path().join("nowhere"), &dir.path().join("run"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn eval_rejects_mismatched_dimensions() {
    let dir = TempDir::new().unwrap();
    let data = synth_small(dir.path(), "");
    let run = dir.path().join("run");
    ok(&train_small(&data, &run, &[]));
    let narrow = dir.path().join("narrow");
    let spec = dir.path().join("narrow.spec");
    fs::write(
        &spec,
        "nodes_per_domain = 40\nfeature_dim = 4\nclass_mean.0 = -1,0,0,0\nclass_mean.1 = 1,0,0,0\nshift.translation = 1,0,0,0\n",
    )
    .unwrap();
    ok(&adalign(&["synth", "--spec", p(&spec), "--out-dir", p(&narrow)]));
    let out = adalign(&["eval", "--checkpoint", p(&run.join("model.ckpt")), "--data", p(&narrow), "--out-dir", p(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("feature columns"));
}

#[test]
fn verify_runs_named_suites_and_rejects_unknown_ones() {
    let out = adalign(&["verify", "decomposition", "cf"]);
    ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("suite decomposition: pass"));
    assert!(stdout.contains("suite cf: pass"));
    assert_eq!(adalign(&["verify", "everything"]).status.code(), Some(2));
}

#[test]
fn export_handles_empty_and_malformed_logs() {
    let dir = TempDir::new().unwrap();
    let (log, csv) = (dir.path().join("empty.log"), dir.path().join("out.csv"));
    fs::write(&log, "").unwrap();
    ok(&adalign(&["export-curves", p(&log), p(&csv)]));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1);
    fs::write(&log, "epoch:0 l_source:0.5 l_align:0.1 micro_f1:na macro_f1:na clamp_active:0 wall_ms:1\nnot a record\n").unwrap();
    let out = adalign(&["export-curves", p(&log), p(&csv)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
