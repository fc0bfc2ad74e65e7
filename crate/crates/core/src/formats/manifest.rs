//! Corpus manifest: CSV with header `path,label,domain,split,patient_id`,
//! optionally followed by free-form metadata columns.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::Label;

pub const REQUIRED_COLUMNS: [&str; 5] = ["path", "label", "domain", "split", "patient_id"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::param(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub label: Label,
    pub domain: String,
    pub split: Split,
    pub patient_id: String,
    /// Metadata columns in header order.
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub extra_columns: Vec<String>,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Unique paths, no patient in both splits, non-empty identifiers.
    pub fn validate(&self) -> Result<()> {
        let mut paths = BTreeSet::new();
        let mut patient_split: HashMap<&str, Split> = HashMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            let line = i + 2;
            if r.path.trim().is_empty() || r.domain.trim().is_empty() || r.patient_id.trim().is_empty() {
                return Err(Error::format(
                    "manifest",
                    format!("line {line}: empty path, domain or patient"),
                ));
            }
            if !paths.insert(r.path.as_str()) {
                return Err(Error::format(
                    "manifest",
                    format!("line {line}: duplicate path {}", r.path),
                ));
            }
            if let Some(prev) = patient_split.insert(&r.patient_id, r.split) {
                if prev != r.split {
                    return Err(Error::format(
                        "manifest",
                        format!("patient {} appears in both train and test", r.patient_id),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
        header.extend(self.extra_columns.iter().map(String::as_str));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.path.clone(),
                r.label.to_string(),
                r.domain.clone(),
                r.split.to_string(),
                r.patient_id.clone(),
            ];
            for c in &self.extra_columns {
                rec.push(r.extra.get(c).cloned().unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format("manifest", e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::format("manifest", e.to_string()))
    }
}

/// Parses and validates a manifest.
pub fn parse(text: &str) -> Result<Manifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < REQUIRED_COLUMNS.len() || header[..REQUIRED_COLUMNS.len()] != REQUIRED_COLUMNS {
        return Err(Error::format(
            "manifest",
            format!("header must start with {}", REQUIRED_COLUMNS.join(",")),
        ));
    }
    let extra_columns = header[REQUIRED_COLUMNS.len()..].to_vec();
    let mut seen = BTreeSet::new();
    if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(Error::format("manifest", format!("duplicate column {dup}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(Error::format(
                "manifest",
                format!("line {line}: {} fields, header has {}", rec.len(), header.len()),
            ));
        }
        let field_err = |e: Error| Error::format("manifest", format!("line {line}: {e}"));
        rows.push(ManifestRow {
            path: rec[0].to_string(),
            label: rec[1].parse().map_err(field_err)?,
            domain: rec[2].to_string(),
            split: rec[3].parse().map_err(field_err)?,
            patient_id: rec[4].to_string(),
            extra: extra_columns
                .iter()
                .zip(rec.iter().skip(REQUIRED_COLUMNS.len()))
                .map(|(k, v)| (k.clone(), v.to_string()))
                .collect(),
        });
    }
    let m = Manifest { extra_columns, rows };
    m.validate()?;
    Ok(m)
}
