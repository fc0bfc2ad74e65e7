use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcg_core::eval::{auc_roc, binary_metrics};
use pcg_core::formats::manifest::{self, Split};
use pcg_core::formats::report::ReportLine;
use pcg_core::formats::{checkpoint, feature_cache, report};
use pcg_core::model::{init_model, ModelConfig};
use pcg_core::Label;
use tempfile::TempDir;

fn pcg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcg"))
        .args(args)
        .env_remove("PCG_CACHE_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pcg(args);
    assert!(
        out.status.success(),
        "pcg {args:?} failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_with_ext(&p, ext));
        } else if p.to_str().unwrap().ends_with(ext) {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn simulate_counts_and_reproduces() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "simulate",
            "--per-cell",
            "10",
            "--channels",
            "identity,resonant",
            "--seed",
            "4",
            "--out",
            s(out),
        ]);
    }
    let wavs = files_with_ext(&a.join("wav"), ".wav");
    assert_eq!(wavs.len(), 40);
    let m = manifest::parse(&fs::read_to_string(a.join("manifest.csv")).unwrap()).unwrap();
    assert_eq!(m.rows.len(), 40);
    for w in &wavs {
        let other = b.join("wav").join(w.file_name().unwrap());
        assert_eq!(fs::read(w).unwrap(), fs::read(other).unwrap());
    }
    assert_eq!(
        fs::read(a.join("manifest.csv")).unwrap(),
        fs::read(b.join("manifest.csv")).unwrap()
    );
}

#[test]
fn simulate_records_snr_text_verbatim() {
    let tmp = TempDir::new().unwrap();
    ok(&[
        "simulate",
        "--per-cell",
        "3",
        "--channels",
        "identity",
        "--snrs",
        "0,10,inf",
        "--out",
        s(tmp.path()),
    ]);
    let m = manifest::parse(&fs::read_to_string(tmp.path().join("manifest.csv")).unwrap()).unwrap();
    let snrs: Vec<&str> = m.rows.iter().map(|r| r.extra["snr_db"].as_str()).collect();
    assert_eq!(snrs, ["0", "10", "inf", "0", "10", "inf"]);
}

#[test]
fn extract_three_cycles_then_nothing_to_do() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&[
        "simulate",
        "--per-cell",
        "1",
        "--channels",
        "identity",
        "--duration",
        "8",
        "--out",
        s(dir),
    ]);
    let full = manifest::parse(&fs::read_to_string(dir.join("manifest.csv")).unwrap()).unwrap();
    let row = &full.rows[0];
    fs::write(dir.join("r.onsets"), "0\n2500\n5000\n").unwrap();
    let csv = format!(
        "path,label,domain,split,patient_id,onsets\n{},{},{},train,p1,r.onsets\n",
        row.path, row.label, row.domain
    );
    let man = dir.join("one.csv");
    fs::write(&man, csv).unwrap();
    let cache = dir.join("cache");

    let first = ok(&["extract", "--manifest", s(&man), "--cache-dir", s(&cache)]);
    assert!(
        first.starts_with("1 written, 0 up to date, 0 failed, 3 cycles"),
        "{first}"
    );
    let feats = files_with_ext(&cache, ".pcgf");
    assert_eq!(feats.len(), 3);
    for f in &feats {
        let bytes = fs::read(f).unwrap();
        let c = feature_cache::decode(&bytes).unwrap();
        assert_eq!(c.values.dim(), (39, 246));
        assert_eq!(c.kind.to_string(), "Fbank&MFCC13");
        assert_eq!(feature_cache::encode(&c), bytes);
    }
    let before: Vec<_> = feats
        .iter()
        .map(|f| fs::metadata(f).unwrap().modified().unwrap())
        .collect();
    let second = ok(&["extract", "--manifest", s(&man), "--cache-dir", s(&cache)]);
    assert!(
        second.starts_with("0 written, 1 up to date, 0 failed, 3 cycles"),
        "{second}"
    );
    let after: Vec<_> = feats
        .iter()
        .map(|f| fs::metadata(f).unwrap().modified().unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn extract_reports_unreadable_audio() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.wav"), b"not a wav").unwrap();
    fs::write(
        dir.join("m.csv"),
        "path,label,domain,split,patient_id\nbad.wav,normal,a,train,p\n",
    )
    .unwrap();
    let out = pcg(&["extract", "--manifest", s(&dir.join("m.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("1 failed"));
}

#[test]
fn train_and_evaluate_on_a_clean_corpus() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&[
        "simulate",
        "--per-cell",
        "24",
        "--channels",
        "identity,resonant",
        "--snrs",
        "inf",
        "--murmur-level",
        "0.8",
        "--seed",
        "2",
        "--out",
        s(dir),
    ]);
    let cfg = write_config(dir, "features = \"MFCC13\"\n[train]\nepochs = 30\nseed = 1\n");
    let man = dir.join("manifest.csv");
    let common = ["--manifest", s(&man), "--config", s(&cfg)];
    ok(&[&["extract"], &common[..]].concat());
    let ckpt = dir.join("model.pcgm");
    ok(&[&["train", "--out", s(&ckpt)], &common[..]].concat());
    assert!(ckpt.is_file());
    let log = fs::read_to_string(dir.join("model.log.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(log.lines().count(), 30);
    assert!(last["train_acc"].as_f64().unwrap() >= 0.95, "{last}");

    let rep = dir.join("report");
    let text = ok(&[&["evaluate", "--checkpoint", s(&ckpt), "--out", s(&rep)], &common[..]].concat());
    assert!(text.contains("identity") && text.contains("resonant"), "{text}");
    let lines = report::parse_lines(&fs::read_to_string(rep.with_extension("jsonl")).unwrap()).unwrap();
    let records = report::parse_records(&fs::read_to_string(rep.with_extension("jsonl")).unwrap()).unwrap();
    let m = manifest::parse(&fs::read_to_string(&man).unwrap()).unwrap();
    assert_eq!(records.len(), m.split(Split::Test).count());

    // Recount every metric from the per-recording decisions.
    let truths: Vec<Label> = records.iter().map(|r| r.truth).collect();
    let preds: Vec<Label> = records.iter().map(|r| r.predicted).collect();
    let scores: Vec<f64> = records.iter().map(|r| r.p_abnormal).collect();
    let bm = binary_metrics(&truths, &preds).unwrap();
    let mut want: BTreeMap<String, Option<f64>> = BTreeMap::from([
        ("sensitivity".into(), bm.sensitivity),
        ("specificity".into(), bm.specificity),
        ("macc".into(), bm.macc),
        ("f1".into(), bm.f1),
        ("accuracy".into(), bm.accuracy),
        ("auc".into(), auc_roc(&truths, &scores).ok()),
    ]);
    let mut domains = 0;
    for line in &lines {
        match line {
            ReportLine::Metric { name, value } => {
                if let Some(w) = want.remove(name) {
                    assert_eq!(*value, w, "{name}");
                }
            }
            ReportLine::Domain { domain, n, correct, .. } => {
                domains += 1;
                let mine: Vec<_> = records.iter().filter(|r| &r.domain == domain).collect();
                assert_eq!(*n, mine.len());
                assert_eq!(*correct, mine.iter().filter(|r| r.truth == r.predicted).count());
            }
            ReportLine::Recording { .. } => {}
        }
    }
    assert!(want.is_empty(), "metrics missing from report: {want:?}");
    assert_eq!(domains, 2);
}

#[test]
fn zero_epochs_write_the_initialization() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["simulate", "--per-cell", "2", "--channels", "identity", "--out", s(dir)]);
    let cfg = write_config(dir, "features = \"MFCC13\"\n[train]\nepochs = 0\n");
    let man = dir.join("manifest.csv");
    ok(&["extract", "--manifest", s(&man), "--config", s(&cfg)]);
    let ckpt = dir.join("init.pcgm");
    ok(&[
        "train",
        "--manifest",
        s(&man),
        "--config",
        s(&cfg),
        "--seed",
        "8",
        "--out",
        s(&ckpt),
    ]);
    let want = init_model::<f32>(&ModelConfig::reduced(13, 246, 16, [16, 32, 64, 128]).unwrap(), 8).unwrap();
    assert_eq!(checkpoint::decode(&fs::read(&ckpt).unwrap()).unwrap(), want);
}

#[test]
fn runaway_learning_rate_exits_with_divergence() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["simulate", "--per-cell", "4", "--channels", "identity", "--out", s(dir)]);
    let cfg = write_config(
        dir,
        "features = \"MFCC13\"\n[train]\nepochs = 5\nbatch_size = 8\nbase_lr = 1e30\nmax_lr = 1e30\n[model]\nwidths = [4, 4, 4, 4]\n",
    );
    let man = dir.join("manifest.csv");
    ok(&["extract", "--manifest", s(&man), "--config", s(&cfg)]);
    let out = pcg(&[
        "train",
        "--manifest",
        s(&man),
        "--config",
        s(&cfg),
        "--out",
        s(&dir.join("m.pcgm")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    assert!(!dir.join("m.pcgm").exists());
}

#[test]
fn train_without_cache_names_extract() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["simulate", "--per-cell", "1", "--channels", "identity", "--out", s(dir)]);
    let out = pcg(&[
        "train",
        "--manifest",
        s(&dir.join("manifest.csv")),
        "--out",
        s(&dir.join("m.pcgm")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pcg extract"));
}

fn write_report(path: &Path, correct: &[bool]) {
    let lines: Vec<ReportLine> = correct
        .iter()
        .enumerate()
        .map(|(i, &c)| ReportLine::Recording {
            id: format!("r{i:02}"),
            domain: "a".into(),
            truth: Label::Abnormal,
            predicted: if c { Label::Abnormal } else { Label::Normal },
            p_abnormal: if c { 0.9 } else { 0.1 },
        })
        .collect();
    fs::write(path, report::to_jsonl(&lines)).unwrap();
}

fn p_value(text: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with("chi2")).unwrap();
    line.split_whitespace().last().unwrap().parse().unwrap()
}

#[test]
fn compare_reports() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a.jsonl"), tmp.path().join("b.jsonl"));
    // 5 recordings only A gets right, 15 only B, 10 both.
    let ca: Vec<bool> = (0..30).map(|i| !(5..20).contains(&i)).collect();
    let cb: Vec<bool> = (0..30).map(|i| i >= 5).collect();
    write_report(&a, &ca);
    write_report(&b, &cb);
    let ab = ok(&["compare", s(&a), s(&b)]);
    let ba = ok(&["compare", s(&b), s(&a)]);
    assert!((p_value(&ab) - 0.0441).abs() < 2e-4, "{ab}");
    assert_eq!(p_value(&ab), p_value(&ba));
    assert!(
        ab.contains("b (A right, B wrong) 5") && ab.contains("c (A wrong, B right) 15"),
        "{ab}"
    );
    assert!(
        ab.contains("significant at 0.05") && !ab.contains("not significant"),
        "{ab}"
    );

    let same = pcg(&["compare", s(&a), s(&a)]);
    assert_eq!(same.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&same.stderr).contains("no discordant pairs"));
}

#[test]
fn compare_names_mismatched_recordings() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a.jsonl"), tmp.path().join("b.jsonl"));
    write_report(&a, &[true, false, true]);
    write_report(&b, &[true, false]);
    let out = pcg(&["compare", s(&a), s(&b)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("r02"));
}

#[test]
fn physionet_layout_to_manifest() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    for (subset, recs) in [("training-a", "a0001,-1\na0002,1\n"), ("training-e", "e0001,-1\n")] {
        fs::create_dir(root.join(subset)).unwrap();
        fs::write(root.join(subset).join("REFERENCE.csv"), recs).unwrap();
    }
    fs::write(root.join("test.txt"), "a0002\n").unwrap();
    ok(&["physionet", "--root", s(root), "--test-list", s(&root.join("test.txt"))]);
    let m = manifest::parse(&fs::read_to_string(root.join("manifest.csv")).unwrap()).unwrap();
    assert_eq!(m.rows.len(), 3);
    assert_eq!(m.rows[1].path, "training-a/a0002.wav");
    assert_eq!((m.rows[1].label, m.rows[1].split), (Label::Abnormal, Split::Test));
    assert_eq!(m.rows[2].domain, "e");

    fs::write(root.join("bad.txt"), "zz9999\n").unwrap();
    let out = pcg(&["physionet", "--root", s(root), "--test-list", s(&root.join("bad.txt"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    assert_eq!(pcg(&[]).status.code(), Some(1));
    assert_eq!(pcg(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pcg(&["--help"]).status.code(), Some(0));
    assert_eq!(pcg(&["extract"]).status.code(), Some(1));
    assert_eq!(
        pcg(&["extract", "--manifest", "/nonexistent/m.csv"]).status.code(),
        Some(2)
    );
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[train]\nlearning_rate = 3\n");
    assert_eq!(
        pcg(&["extract", "--manifest", "m.csv", "--config", s(&cfg)])
            .status
            .code(),
        Some(1)
    );
}
