use std::path::Path;

use scdnn::cli::{run, RunManifest};

fn exec(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = run(std::iter::once("scdnn").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn synth(dir: &Path, name: &str, n: &str, length: &str) -> String {
    let path = dir.join(name).display().to_string();
    let (code, text) = exec(&[
        "synth",
        "--n",
        n,
        "--classes",
        "3",
        "--length",
        length,
        "--seed",
        "4",
        "--out",
        &path,
    ]);
    assert_eq!(code, 0, "{text}");
    path
}

fn train_tiny(data: &str, out_dir: &Path, extra: &[&str]) -> RunManifest {
    let out = out_dir.display().to_string();
    let mut args = vec![
        "train",
        "--data",
        data,
        "--out-dir",
        &out,
        "--widths",
        "4,8",
        "--epochs",
        "2",
        "--lr-drop-epoch",
        "2",
        "--batch-size",
        "8",
        "--lr",
        "1e-2",
    ];
    args.extend_from_slice(extra);
    let (code, text) = exec(&args);
    assert_eq!(code, 0, "{text}");
    RunManifest::parse(&std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap()).unwrap()
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.ecgb", "200", "128");
    let b = synth(dir.path(), "b.ecgb", "200", "128");
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let ds = scdnn::data::read_ecgb(&a).unwrap();
    assert_eq!(ds.len(), 600);
    assert_eq!(ds.class_supports(), vec![200, 200, 200]);
}

#[test]
fn synth_rejects_a_single_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.ecgb").display().to_string();
    let (code, _) = exec(&["synth", "--classes", "1", "--out", &out]);
    assert_eq!(code, 2);
    assert!(!dir.path().join("x.ecgb").exists());
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.ecgb", "10", "64");

    let full = train_tiny(&data, &dir.path().join("full"), &[]);
    let none = train_tiny(&data, &dir.path().join("none"), &["--satse-blocks", "0"]);
    assert_eq!(full.get("status"), Some("completed"));
    let count = |m: &RunManifest| m.get("parameter_count").unwrap().parse::<usize>().unwrap();
    assert!(count(&full) > count(&none));
    assert_eq!(full.get("dataset_sha256"), none.get("dataset_sha256"));
    for file in ["model.scdn", "trace.csv", "metrics_val.txt"] {
        assert!(dir.path().join("full").join(file).exists(), "{file}");
    }

    let model = dir.path().join("full/model.scdn").display().to_string();
    let (code, first) = exec(&["eval", "--model", &model, "--data", &data]);
    assert_eq!(code, 0, "{first}");
    let (_, second) = exec(&["eval", "--model", &model, "--data", &data, "--split", "test"]);
    assert_eq!(first, second);
    assert!(first.contains("macro_f1"), "{first}");
}

#[test]
fn fixed_phi_trace_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.ecgb", "6", "64");
    train_tiny(&data, &dir.path().join("run"), &["--fixed-phi", "0.2"]);
    let csv = std::fs::read_to_string(dir.path().join("run/trace.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let phi1 = header.iter().position(|c| *c == "phi1").unwrap();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row.split(',').nth(phi1), Some("0.2"));
    }
}

#[test]
fn gradcheck_exit_codes() {
    let (code, text) = exec(&["gradcheck", "--param", "phi", "--param", "gamma"]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("PASS"));
    let (code, text) = exec(&["gradcheck", "--param", "weight_im", "--tolerance", "1e-14"]);
    assert_eq!(code, 1, "{text}");
    assert!(text.contains("FAIL"));
    let (code, _) = exec(&["gradcheck", "--param", "no_such_param"]);
    assert_eq!(code, 2);
}

#[test]
fn ablate_prints_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.ecgb", "6", "64");
    let table = dir.path().join("table.txt");
    let table_arg = table.display().to_string();
    let (code, text) = exec(&[
        "ablate",
        "--axis",
        "satse-count",
        "--values",
        "0,2",
        "--data",
        &data,
        "--widths",
        "4,8",
        "--epochs",
        "1",
        "--lr-drop-epoch",
        "1",
        "--batch-size",
        "8",
        "--repeats",
        "2",
        "--out",
        &table_arg,
    ]);
    assert_eq!(code, 0, "{text}");
    assert_eq!(text.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(&table).unwrap(), text);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let (code, _) = exec(&["bogus"]);
    assert_eq!(code, 2);
}
