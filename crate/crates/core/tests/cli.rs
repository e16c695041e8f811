use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cftrack::bench::{load_sequence, read_json, ResultDocument};
use cftrack::features::FeatureConfig;
use cftrack::{center_error, BoundingBox};
use tempfile::TempDir;

fn cftrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cftrack"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cftrack(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = cftrack(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a synth spec and renders it into `dir/name`.
fn synth(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let spec = dir.join(format!("{name}.toml"));
    let text =
        format!("width = 160\nheight = 120\nstart_x = 40\nstart_y = 40\nnoise = 2.0\n{body}");
    fs::write(&spec, text).unwrap();
    let out = dir.join("data").join(name);
    ok(&["synth", "--spec", p(&spec), "--out", p(&out)]);
    out
}

#[test]
fn synth_writes_an_otb_directory_that_loads_back() {
    let tmp = TempDir::new().unwrap();
    let seq = synth(tmp.path(), "still", "frames = 10\n");
    assert_eq!(fs::read_dir(seq.join("img")).unwrap().count(), 10);
    let gt = fs::read_to_string(seq.join("groundtruth_rect.txt")).unwrap();
    assert_eq!(gt.lines().count(), 10);
    let loaded = load_sequence(&seq).unwrap();
    assert_eq!(loaded.len(), 10);
    let first = BoundingBox::new(40.0, 40.0, 32.0, 32.0).unwrap();
    assert!(loaded.ground_truth().iter().all(|b| *b == first));
}

#[test]
fn synth_jump_schedule_appears_in_ground_truth() {
    let tmp = TempDir::new().unwrap();
    let seq = synth(
        tmp.path(),
        "jump",
        "frames = 25\n[motion]\nkind = \"jump\"\ndx = 8.0\ndy = -2.0\nevery = 10\n",
    );
    let gt = load_sequence(&seq).unwrap();
    for (i, b) in gt.ground_truth().iter().enumerate() {
        let n = (i / 10) as f64;
        assert_eq!(
            (b.x(), b.y()),
            (40.0 + 8.0 * n, 40.0 - 2.0 * n),
            "frame {i}"
        );
    }
}

#[test]
fn invalid_spec_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("bad.toml");
    fs::write(&spec, "frames = 0\n").unwrap();
    let err = fails(&[
        "synth",
        "--spec",
        p(&spec),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert!(err.contains("frames"), "{err}");

    fs::write(&spec, "frames = 3\ncolour = 1\n").unwrap();
    let err = fails(&[
        "synth",
        "--spec",
        p(&spec),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert!(
        err.contains("bad.toml:2:") && err.contains("colour"),
        "{err}"
    );
}

#[test]
fn track_static_fixture_is_stable_and_reproducible() {
    let tmp = TempDir::new().unwrap();
    let seq = synth(tmp.path(), "still", "frames = 12\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["track", "--seq", p(&seq), "--out", p(&a), "--seed", "5"]);
    ok(&["track", "--seq", p(&seq), "--out", p(&b), "--seed", "5"]);
    let doc_a = fs::read(a.join("still.json")).unwrap();
    assert_eq!(doc_a, fs::read(b.join("still.json")).unwrap());
    assert!(a.join("still.timing.json").is_file());

    let doc: ResultDocument = read_json(&a.join("still.json")).unwrap();
    let gt = load_sequence(&seq).unwrap().ground_truth()[0];
    let fc = FeatureConfig::default();
    let cell = fc.search_factor * gt.mean_side() / fc.grid_side(&gt) as f64;
    for (i, bx) in doc.predicted().unwrap().iter().enumerate() {
        assert!(center_error(bx, &gt) < cell, "frame {i}");
    }

    // The effective config reproduces the run on its own.
    let c = tmp.path().join("c");
    ok(&[
        "track",
        "--config",
        p(&a.join("config.toml")),
        "--seq",
        p(&seq),
        "--out",
        p(&c),
    ]);
    assert_eq!(doc_a, fs::read(c.join("still.json")).unwrap());
}

#[test]
fn track_missing_ground_truth_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("empty");
    fs::create_dir_all(seq.join("img")).unwrap();
    let err = fails(&["track", "--seq", p(&seq), "--out", p(&tmp.path().join("o"))]);
    assert!(err.contains(p(&seq)), "{err}");
}

#[test]
fn bad_config_reports_file_and_line() {
    let tmp = TempDir::new().unwrap();
    let seq = synth(tmp.path(), "still", "frames = 2\n");
    let config = tmp.path().join("run.toml");
    fs::write(&config, "[tracker]\nn_proposals = 4\nn_propsals = 5\n").unwrap();
    let err = fails(&[
        "track",
        "--config",
        p(&config),
        "--seq",
        p(&seq),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert!(err.contains("run.toml:3:"), "{err}");
}

fn write_sequence_gt(dir: &Path, boxes: &[[f64; 4]]) {
    fs::create_dir_all(dir).unwrap();
    let text: String = boxes
        .iter()
        .map(|b| format!("{},{},{},{}\n", b[0] + 1.0, b[1] + 1.0, b[2], b[3]))
        .collect();
    fs::write(dir.join("groundtruth_rect.txt"), text).unwrap();
}

fn write_result(dir: &Path, name: &str, boxes: &[[f64; 4]]) {
    fs::create_dir_all(dir).unwrap();
    let doc = ResultDocument {
        name: name.into(),
        frames: boxes.len(),
        boxes: boxes.to_vec(),
        low_confidence: vec![false; boxes.len()],
        metrics: None,
    };
    fs::write(
        dir.join(format!("{name}.json")),
        serde_json::to_string(&doc).unwrap(),
    )
    .unwrap();
}

#[test]
fn eval_reports_precision_and_curves() {
    let tmp = TempDir::new().unwrap();
    let (data, results) = (tmp.path().join("data"), tmp.path().join("results"));
    let truth: Vec<[f64; 4]> = (0..4)
        .map(|i| [10.0 + i as f64, 20.0, 30.0, 30.0])
        .collect();
    write_sequence_gt(&data.join("exact"), &truth);
    write_result(&results, "exact", &truth);
    // Center errors 5, 15, 25 and 35 px.
    write_sequence_gt(&data.join("offset"), &truth);
    let shifted: Vec<[f64; 4]> = truth
        .iter()
        .zip([5.0, 15.0, 25.0, 35.0])
        .map(|(b, d)| [b[0] + d, b[1], b[2], b[3]])
        .collect();
    write_result(&results, "offset", &shifted);

    let table = ok(&["eval", "--results", p(&results), "--data", p(&data)]);
    assert!(
        table.contains("exact") && table.contains("offset"),
        "{table}"
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(results.join("eval.json")).unwrap()).unwrap();
    let seqs = report["sequences"].as_array().unwrap();
    assert_eq!(seqs[0]["name"], "exact");
    assert_eq!(seqs[0]["precision"], 1.0);
    assert_eq!(seqs[1]["precision"], 0.5);
    assert_eq!(report["mean_precision"], 0.75);

    let curves = fs::read_to_string(results.join("curves.csv")).unwrap();
    let mut lines = curves.lines();
    assert_eq!(lines.next(), Some("sequence,threshold,success"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("exact,")).count(), 21);
    assert_eq!(rows.iter().filter(|r| r.starts_with("offset,")).count(), 21);
    assert_eq!(rows[0], "exact,0.00,1");
    assert_eq!(rows[20], "exact,1.00,0");
}

#[test]
fn eval_lists_missing_results() {
    let tmp = TempDir::new().unwrap();
    let (data, results) = (tmp.path().join("data"), tmp.path().join("results"));
    let truth = [[1.0, 1.0, 5.0, 5.0]];
    write_sequence_gt(&data.join("here"), &truth);
    write_sequence_gt(&data.join("gone"), &truth);
    write_sequence_gt(&data.join("lost"), &truth);
    write_result(&results, "here", &truth);
    let err = fails(&["eval", "--results", p(&results), "--data", p(&data)]);
    assert!(
        err.contains("gone.json") && err.contains("lost.json") && !err.contains("here.json"),
        "{err}"
    );
}

#[test]
fn train_scorer_is_deterministic_and_hash_checked() {
    let tmp = TempDir::new().unwrap();
    synth(
        tmp.path(),
        "walk",
        "frames = 20\nseed = 3\n[motion]\nkind = \"linear\"\ndx = 2.0\ndy = 1.0\n",
    );
    let data = tmp.path().join("data");
    let config = tmp.path().join("train.toml");
    fs::write(
        &config,
        "[training]\nsteps = 400\n[training.sampling]\nframe_pairs = 8\n",
    )
    .unwrap();
    let (h1, h2) = (tmp.path().join("h1.json"), tmp.path().join("h2.json"));
    let log = ok(&[
        "train-scorer",
        "--config",
        p(&config),
        "--data",
        p(&data),
        "--out",
        p(&h1),
    ]);
    ok(&[
        "train-scorer",
        "--config",
        p(&config),
        "--data",
        p(&data),
        "--out",
        p(&h2),
    ]);
    assert_eq!(fs::read(&h1).unwrap(), fs::read(&h2).unwrap());
    assert!(tmp.path().join("h1.config.toml").is_file());

    let loss = |key: &str| -> f64 {
        let line = log.lines().find(|l| l.starts_with(key)).unwrap();
        line[key.len()..].trim().parse().unwrap()
    };
    assert!(loss("final loss:") < loss("initial loss:"), "{log}");

    // Tracking with the head works under the same features and is refused
    // under different ones.
    let seq = data.join("walk");
    let run = tmp.path().join("run.toml");
    fs::write(&run, format!("head = {:?}\n", p(&h1))).unwrap();
    ok(&[
        "track",
        "--config",
        p(&run),
        "--seq",
        p(&seq),
        "--out",
        p(&tmp.path().join("o1")),
    ]);
    fs::write(
        &run,
        format!(
            "head = {:?}\n[tracker.features]\nfine_cell_size = 2\n",
            p(&h1)
        ),
    )
    .unwrap();
    let err = fails(&[
        "track",
        "--config",
        p(&run),
        "--seq",
        p(&seq),
        "--out",
        p(&tmp.path().join("o2")),
    ]);
    assert!(err.contains("hash mismatch"), "{err}");
}

#[test]
fn train_scorer_rejects_empty_dataset() {
    let tmp = TempDir::new().unwrap();
    let err = fails(&[
        "train-scorer",
        "--data",
        p(tmp.path()),
        "--out",
        p(&tmp.path().join("h.json")),
    ]);
    assert!(err.contains("no sequences"), "{err}");
}
