use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use sfdm_core::config::{self, Config};
use sfdm_core::denoiser::Denoiser;
use sfdm_core::signal::{self, SyntheticCorpusSpec};
use sfdm_core::trainer::validation_mae;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sfdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfdm")).args(args).output().expect("spawn sfdm")
}

fn ok(args: &[&str]) -> String {
    let out = sfdm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy_corpus(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth-data", "--spec", s(&configs().join("toy-corpus.spec")), "--out", s(&data)]);
    data
}

fn toy_cfg() -> PathBuf {
    configs().join("toy.cfg")
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn shipped_desk_spec_matches_the_built_in_corpus() {
    let text = std::fs::read_to_string(configs().join("desk-corpus.spec")).unwrap();
    assert_eq!(config::parse_corpus_spec(&text).unwrap(), SyntheticCorpusSpec::desk_default());
}

#[test]
fn shipped_configs_parse_and_validate() {
    for name in ["toy.cfg", "desk.cfg"] {
        let cfg = Config::parse(&std::fs::read_to_string(configs().join(name)).unwrap()).unwrap();
        cfg.validate().unwrap();
    }
}

#[test]
fn synth_data_is_deterministic_and_loads_back() {
    let tmp = tempfile::tempdir().unwrap();
    let spec_path = configs().join("toy-corpus.spec");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth-data", "--spec", s(&spec_path), "--out", s(&a)]);
    ok(&["synth-data", "--spec", s(&spec_path), "--out", s(&b)]);

    let spec = config::parse_corpus_spec(&std::fs::read_to_string(&spec_path).unwrap()).unwrap();
    let recs = signal::load_csv_dir(&a).unwrap();
    assert_eq!(recs.len(), spec.n_subjects);
    for rec in &recs {
        let name = format!("{}.csv", rec.subject_id);
        assert_eq!(read(&a.join(&name)), read(&b.join(&name)));
        assert_eq!(rec.len(), spec.n_classes() * spec.windows_per_class_per_subject * spec.window);
    }
}

#[test]
fn train_dm_checkpoint_reproduces_its_validation_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_corpus(tmp.path());
    let ckpt = tmp.path().join("dm.sfdm");
    let start = Instant::now();
    let stdout = ok(&["train-dm", "--config", s(&toy_cfg()), "--data", s(&data), "--out", s(&ckpt)]);
    assert!(start.elapsed().as_secs() < 60);

    let cfg = Config::parse(&std::fs::read_to_string(toy_cfg()).unwrap()).unwrap();
    assert!(stdout.contains(&cfg.fingerprint()));

    let log = std::fs::read_to_string(tmp.path().join("dm.sfdm.ndjson")).unwrap();
    let best = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["val_metric"].as_f64().unwrap())
        .fold(f64::INFINITY, f64::min);

    let dm = Denoiser::from_checkpoint(&read(&ckpt)).unwrap();
    let windows = signal::window_all(&signal::load_csv_dir(&data).unwrap(), cfg.window, cfg.stride()).unwrap();
    let sets = signal::subject_split(&windows, &cfg.split, cfg.seed).unwrap();
    let again = validation_mae(&dm, &sets.val, &cfg.schedule().unwrap(), &cfg.dm_train(), cfg.n_classes).unwrap();
    assert_eq!(again, best);
}

#[test]
fn corrupted_csv_exits_3_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_corpus(tmp.path());
    let file = data.join("s02.csv");
    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = "s02,0.08,oops,0.1,0.2,0".into();
    std::fs::write(&file, lines.join("\n") + "\n").unwrap();

    let out = sfdm(&["train-dm", "--config", s(&toy_cfg()), "--data", s(&data), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("s02.csv:5"), "{err}");
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_corpus(tmp.path());
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "train.bach=8\n").unwrap();
    let out = sfdm(&["train-dm", "--config", s(&bad), "--data", s(&data), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.bach"));
}

#[test]
fn generate_rows_per_class_and_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_corpus(tmp.path());
    let ckpt = tmp.path().join("dm.sfdm");
    ok(&["train-dm", "--config", s(&toy_cfg()), "--data", s(&data), "--out", s(&ckpt)]);

    let gen = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "generate", "--ckpt", s(&ckpt), "--data", s(&data), "--per-class", "5", "--out", s(&out),
            "--config", s(&toy_cfg()), "--seed", seed,
        ]);
        std::fs::read_to_string(out).unwrap()
    };
    let a = gen("a.ndjson", "3");
    assert_eq!(a, gen("b.ndjson", "3"));
    assert_ne!(a, gen("c.ndjson", "4"));

    let mut lines = a.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["W"], 64);
    assert_eq!(header["n_c"], 3);
    assert_eq!(header["mode"], "stat");
    assert_eq!(header["seed"], 3);
    let rows: Vec<serde_json::Value> = lines.map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 15);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row["class"], (i / 5) as u64);
        assert_eq!(row["values"].as_array().unwrap().len(), 64);
    }
}

#[test]
fn generate_warns_and_skips_absent_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_corpus(tmp.path());
    let ckpt = tmp.path().join("dm.sfdm");
    ok(&["train-dm", "--config", s(&toy_cfg()), "--data", s(&data), "--out", s(&ckpt)]);

    // Relabel every class-2 sample as class 1.
    for rec in std::fs::read_dir(&data).unwrap() {
        let path = rec.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap().replace(",2\n", ",1\n");
        std::fs::write(&path, text).unwrap();
    }
    let out_file = tmp.path().join("g.ndjson");
    let out = sfdm(&[
        "generate", "--ckpt", s(&ckpt), "--data", s(&data), "--per-class", "2", "--out", s(&out_file),
        "--config", s(&toy_cfg()),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[2]"));
    assert_eq!(std::fs::read_to_string(out_file).unwrap().lines().count(), 1 + 4);
}

#[test]
fn train_clf_and_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_corpus(tmp.path());
    let (dm, clf, base) = (tmp.path().join("dm.sfdm"), tmp.path().join("c.sfcl"), tmp.path().join("b.sfcl"));
    let cfg = s(&toy_cfg()).to_string();
    ok(&["train-dm", "--config", &cfg, "--data", s(&data), "--out", s(&dm)]);
    ok(&["train-clf", "--config", &cfg, "--data", s(&data), "--dm", s(&dm), "--out", s(&clf)]);
    ok(&["train-clf", "--config", &cfg, "--data", s(&data), "--baseline", "--out", s(&base)]);
    assert!(tmp.path().join("c.sfcl.pretrain.ndjson").exists());

    let metrics = tmp.path().join("m.json");
    let stdout = ok(&["eval", "--config", &cfg, "--data", s(&data), "--ckpt", s(&clf), "--out", s(&metrics)]);
    assert!(stdout.contains("macro F1"));
    let m: serde_json::Value = serde_json::from_slice(&read(&metrics)).unwrap();
    let acc = m["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // Default config uses W=200; the checkpoint was trained at 64.
    let out = sfdm(&["eval", "--data", s(&data), "--ckpt", s(&clf)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window 64"));
}

#[test]
fn train_clf_rejects_a_denoiser_of_another_width() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_corpus(tmp.path());
    let dm = tmp.path().join("dm.sfdm");
    ok(&["train-dm", "--config", s(&toy_cfg()), "--data", s(&data), "--out", s(&dm)]);
    let wide = tmp.path().join("wide.cfg");
    std::fs::write(&wide, std::fs::read_to_string(toy_cfg()).unwrap().replace("data.window=64", "data.window=32"))
        .unwrap();
    let out = sfdm(&["train-clf", "--config", s(&wide), "--data", s(&data), "--dm", s(&dm), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn experiment_writes_a_five_by_four_table() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_corpus(tmp.path());
    let out = tmp.path().join("exp");
    let stdout = ok(&["experiment", "--config", s(&toy_cfg()), "--data", s(&data), "--out", s(&out)]);

    let cfg = Config::parse(&std::fs::read_to_string(toy_cfg()).unwrap()).unwrap();
    assert!(stdout.contains(&cfg.fingerprint()));

    let mut table = csv::Reader::from_path(out.join("table.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = table.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5 * 4);
    let header = table.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap_or_else(|| panic!("{name} in {header:?}"));
    for r in &rows {
        assert_eq!(&r[col("runs")], "3");
        let std: f64 = r[col("macro_f1_std")].parse().unwrap();
        let mean: f64 = r[col("macro_f1_mean")].parse().unwrap();
        assert!((0.0..=1.0).contains(&mean) && std >= 0.0);
    }
    let md = std::fs::read_to_string(out.join("table.md")).unwrap();
    assert_eq!(md.matches('±').count(), 5 * 4 * 2);
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 5 * 4 * 3);
    assert!(out.join("overlay.ndjson").exists());
}

#[test]
fn labeled_fraction_flag_narrows_the_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_corpus(tmp.path());
    let out = tmp.path().join("exp");
    ok(&[
        "experiment", "--config", s(&toy_cfg()), "--data", s(&data), "--out", s(&out), "--labeled-fraction", "0.2",
    ]);
    let config_txt = std::fs::read_to_string(out.join("config.txt")).unwrap();
    let cfg = Config::parse(&config_txt).unwrap();
    assert_eq!(cfg.proportions, [0.2]);
    assert_eq!(cfg.split.labeled_fraction, 0.2);
    let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4);
}
