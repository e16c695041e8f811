use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cftrack::bench::{
    list_sequences, load_sequence, read_json, run_many, success_curve, synth_sequence, write_json,
    Metrics, ResultDocument, Sequence, SynthSpec, TimingDocument, GROUND_TRUTH_FILE,
    SUCCESS_THRESHOLDS,
};
use cftrack::localizer::{
    load_head, sample_training_pairs, save_head, train_head_with_report, FrameFeatures,
};
use serde::Serialize;

use super::config::{parse_toml, RunConfig};

pub const CONFIG_FILE: &str = "config.toml";
pub const EVAL_FILE: &str = "eval.json";
pub const CURVES_FILE: &str = "curves.csv";

/// `dir` itself when it is a sequence, otherwise its sequence subdirectories.
fn sequence_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(GROUND_TRUTH_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    if !dir.is_dir() {
        bail!("{}: missing {GROUND_TRUTH_FILE}", dir.display());
    }
    let dirs = list_sequences(dir)?;
    if dirs.is_empty() {
        bail!(
            "{}: no sequences (directories holding {GROUND_TRUTH_FILE})",
            dir.display()
        );
    }
    Ok(dirs)
}

fn load_all(dir: &Path) -> Result<Vec<Sequence>> {
    sequence_dirs(dir)?
        .iter()
        .map(|d| load_sequence(d).map_err(Into::into))
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("{}: cannot create directory", dir.display()))
}

fn result_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

fn timing_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.timing.json"))
}

pub fn track(config: &RunConfig, seq: &Path, out: &Path) -> Result<()> {
    config.validate()?;
    let seqs = load_all(seq)?;
    let head = config
        .head
        .as_deref()
        .map(|p| load_head(p, &config.tracker.features))
        .transpose()?;
    create_dir(out)?;
    config.write(&out.join(CONFIG_FILE))?;
    let results = run_many(&seqs, &config.tracker, head.as_ref());
    for (s, r) in seqs.iter().zip(results) {
        let r = r.with_context(|| format!("tracking {}", s.name))?;
        let doc = ResultDocument::new(
            &s.name,
            &r,
            Some(s.ground_truth()),
            config.eval.precision_threshold,
        )?;
        write_json(&result_path(out, &s.name), &doc)?;
        let timing = TimingDocument::new(&s.name, &r);
        write_json(&timing_path(out, &s.name), &timing)?;
        let m = doc.metrics.as_ref().expect("ground truth given");
        let fps = timing.fps.map_or("-".to_string(), |f| format!("{f:.1}"));
        println!(
            "{}: auc {:.4} precision {:.4} fps {fps}",
            s.name, m.auc, m.precision
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SequenceReport {
    name: String,
    #[serde(flatten)]
    metrics: Metrics,
    fps: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    sequences: Vec<SequenceReport>,
    mean_auc: f64,
    mean_precision: f64,
    mean_iou: f64,
    /// Mean over sequences that have a timing document.
    mean_fps: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = v.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

pub fn eval(config: &RunConfig, results: &Path, data: &Path, out: &Path) -> Result<()> {
    let dirs = sequence_dirs(data)?;
    let names: Vec<String> = dirs
        .iter()
        .map(|d| {
            d.file_name().map_or_else(
                || d.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            )
        })
        .collect();
    let missing: Vec<String> = names
        .iter()
        .filter(|n| !result_path(results, n).is_file())
        .map(|n| result_path(results, n).display().to_string())
        .collect();
    if !missing.is_empty() {
        bail!(
            "missing results for {} sequence(s):\n  {}",
            missing.len(),
            missing.join("\n  ")
        );
    }

    let threshold = config.eval.precision_threshold;
    let mut reports = Vec::new();
    let mut curves = String::from("sequence,threshold,success\n");
    for (dir, name) in dirs.iter().zip(&names) {
        let truth = cftrack::bench::read_ground_truth(&dir.join(GROUND_TRUTH_FILE))?;
        let doc: ResultDocument = read_json(&result_path(results, name))?;
        let predicted = doc.predicted()?;
        let metrics = Metrics::compute(&predicted, &truth, threshold)
            .with_context(|| format!("{}", result_path(results, name).display()))?;
        for (k, s) in success_curve(&predicted, &truth)?.iter().enumerate() {
            let t = k as f64 / (SUCCESS_THRESHOLDS - 1) as f64;
            writeln!(curves, "{name},{t:.2},{s}").unwrap();
        }
        let timing = timing_path(results, name);
        let fps = if timing.is_file() {
            read_json::<TimingDocument>(&timing)?.fps
        } else {
            None
        };
        reports.push(SequenceReport {
            name: name.clone(),
            metrics,
            fps,
        });
    }

    let report = EvalReport {
        mean_auc: mean(reports.iter().map(|r| r.metrics.auc)).unwrap_or(0.0),
        mean_precision: mean(reports.iter().map(|r| r.metrics.precision)).unwrap_or(0.0),
        mean_iou: mean(reports.iter().map(|r| r.metrics.mean_iou)).unwrap_or(0.0),
        mean_fps: mean(reports.iter().filter_map(|r| r.fps)),
        sequences: reports,
    };
    print!("{}", table(&report, threshold));
    create_dir(out)?;
    write_json(&out.join(EVAL_FILE), &report)?;
    let curves_path = out.join(CURVES_FILE);
    fs::write(&curves_path, curves)
        .with_context(|| format!("{}: cannot write", curves_path.display()))?;
    Ok(())
}

fn table(report: &EvalReport, threshold: f64) -> String {
    let width = report
        .sequences
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(0)
        .max(8);
    let fps = |f: Option<f64>| f.map_or("-".to_string(), |f| format!("{f:.1}"));
    let pr = format!("Pr@{threshold}");
    let mut s = format!(
        "{:<width$}  {:>6}  {:>8}  {:>8}  {:>7}\n",
        "sequence", "AUC", pr, "meanIoU", "FPS"
    );
    for r in &report.sequences {
        let m = &r.metrics;
        writeln!(
            s,
            "{:<width$}  {:>6.4}  {:>8.4}  {:>8.4}  {:>7}",
            r.name,
            m.auc,
            m.precision,
            m.mean_iou,
            fps(r.fps)
        )
        .unwrap();
    }
    writeln!(
        s,
        "{:<width$}  {:>6.4}  {:>8.4}  {:>8.4}  {:>7}",
        "mean",
        report.mean_auc,
        report.mean_precision,
        report.mean_iou,
        fps(report.mean_fps)
    )
    .unwrap();
    s
}

pub fn train_scorer(config: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    config.validate()?;
    let seqs = load_all(data)?;
    let features = &config.tracker.features;
    let tc = &config.training;
    let mut pairs = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        let source = FrameFeatures::new(s, features.clone())?;
        let seed = config.tracker.seed.wrapping_add(i as u64);
        let p = sample_training_pairs(s.ground_truth(), &source, &tc.sampling, seed)
            .with_context(|| format!("sampling pairs from {}", s.name))?;
        pairs.extend(p);
    }
    let (head, report) = train_head_with_report(&pairs, tc.steps, tc.step_size)?;
    println!("pairs: {}", pairs.len());
    println!("initial loss: {:.6e}", report.initial_loss());
    println!("final loss: {:.6e}", report.final_loss());
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_head(out, &head, features)?;
    config.write(&out.with_extension("config.toml"))?;
    Ok(())
}

pub fn synth(spec: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(spec)
        .with_context(|| format!("{}: cannot read spec", spec.display()))?;
    let spec_value: SynthSpec = parse_toml(spec, &text)?;
    let seq =
        synth_sequence(&spec_value).with_context(|| format!("{}: invalid spec", spec.display()))?;
    create_dir(out)?;
    seq.save(out)?;
    println!("{}: {} frames", out.display(), seq.len());
    Ok(())
}
