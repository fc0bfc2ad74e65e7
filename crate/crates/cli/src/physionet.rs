//! Manifest builder for the PhysioNet/CinC 2016 training set layout:
//! `training-<x>/REFERENCE.csv` lists `record,label` with `-1` for normal
//! and `1` for abnormal, next to `<record>.wav`. The subset letter becomes
//! the domain. The public release has no patient identifiers, so each
//! record stands for its own patient.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use pcg_core::formats::manifest::{Manifest, ManifestRow, Split};
use pcg_core::{Error, Label};

use crate::CliError;

/// Parses one `REFERENCE.csv`.
pub fn parse_reference(text: &str) -> Result<Vec<(String, Label)>, Error> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |why: &str| Error::format("reference file", format!("line {}: {why}: {line:?}", i + 1));
        let (name, label) = line.split_once(',').ok_or_else(|| bad("expected `record,label`"))?;
        let name = name.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(bad("bad record name"));
        }
        let label = match label.trim() {
            "-1" => Label::Normal,
            "1" => Label::Abnormal,
            _ => return Err(bad("label must be -1 or 1")),
        };
        out.push((name.to_string(), label));
    }
    Ok(out)
}

/// Record names, one per line; `#` starts a comment.
pub fn parse_record_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.trim_end_matches(".wav").to_string())
        .collect()
}

/// Scans `root` for `training-*` subsets. Records named in `test` go to the
/// test split; every listed name must exist. Paths are relative to `root`,
/// or joined onto `prefix` when given.
pub fn build_manifest(root: &Path, test: &BTreeSet<String>, prefix: Option<&Path>) -> Result<Manifest, CliError> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut subsets: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .filter(|n| n.starts_with("training-"))
        .collect();
    subsets.sort();
    if subsets.is_empty() {
        return Err(CliError::Data(format!(
            "no training-* folders under {}",
            root.display()
        )));
    }
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for subset in &subsets {
        let domain = subset.trim_start_matches("training-").to_string();
        let ref_path = root.join(subset).join("REFERENCE.csv");
        let text = std::fs::read_to_string(&ref_path).map_err(|e| Error::io(&ref_path, e))?;
        for (name, label) in parse_reference(&text)? {
            seen.insert(name.clone());
            rows.push(ManifestRow {
                path: match prefix {
                    Some(p) => p
                        .join(subset)
                        .join(format!("{name}.wav"))
                        .to_string_lossy()
                        .into_owned(),
                    None => format!("{subset}/{name}.wav"),
                },
                label,
                domain: domain.clone(),
                split: if test.contains(&name) {
                    Split::Test
                } else {
                    Split::Train
                },
                patient_id: name,
                extra: BTreeMap::new(),
            });
        }
    }
    let missing: Vec<&String> = test.difference(&seen).collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!(
            "{} test records not found in any REFERENCE.csv, e.g. {}",
            missing.len(),
            missing[0]
        )));
    }
    let m = Manifest {
        extra_columns: Vec::new(),
        rows,
    };
    m.validate()?;
    Ok(m)
}
