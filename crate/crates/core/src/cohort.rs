//! Scan-manifest ingestion and cohort distribution tables (age group,
//! manufacturer, sex).
//!
//! The manifest is a UTF-8 CSV with header `scan_id,age,sex,manufacturer`
//! (column order free, extra columns ignored). Bad rows are reported and
//! skipped; the remaining rows are kept.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "unknown")]
    Unknown,
}

impl std::str::FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Ok(Sex::Male),
            "f" | "female" => Ok(Sex::Female),
            "" | "u" | "unknown" | "o" | "other" => Ok(Sex::Unknown),
            _ => Err(Error::arg(format!("unrecognised sex {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_id: String,
    pub age: u32,
    pub sex: Sex,
    pub manufacturer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum RowErrorKind {
    EmptyId,
    DuplicateId(String),
    BadAge(String),
    BadSex(String),
    Malformed(String),
}

impl std::fmt::Display for RowErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowErrorKind::EmptyId => write!(f, "empty scan_id"),
            RowErrorKind::DuplicateId(id) => write!(f, "duplicate scan_id {id:?}"),
            RowErrorKind::BadAge(a) => write!(f, "invalid age {a:?}"),
            RowErrorKind::BadSex(s) => write!(f, "invalid sex {s:?}"),
            RowErrorKind::Malformed(m) => write!(f, "malformed row: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub kind: RowErrorKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<ScanRecord>,
    pub errors: Vec<RowError>,
}

impl Manifest {
    /// Fail on the first row error.
    pub fn strict(self) -> Result<Vec<ScanRecord>> {
        match self.errors.first() {
            Some(e) => Err(Error::Manifest(format!("line {}: {}", e.line, e.kind))),
            None => Ok(self.records),
        }
    }
}

const COLUMNS: [&str; 4] = ["scan_id", "age", "sex", "manufacturer"];

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::at_path(path, e))?;
    parse_manifest(file)
}

pub fn parse_manifest(input: impl Read) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Manifest(format!("unreadable header: {e}")))?
        .clone();
    let mut index = [0usize; 4];
    for (slot, name) in index.iter_mut().zip(COLUMNS) {
        *slot = header
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                Error::Manifest(format!(
                    "missing column {name:?}; expected header {}",
                    COLUMNS.join(",")
                ))
            })?;
    }

    let mut manifest = Manifest::default();
    let mut seen = BTreeSet::new();
    for (n, row) in reader.records().enumerate() {
        let line = n as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(line);
                manifest.errors.push(RowError {
                    line,
                    kind: RowErrorKind::Malformed(e.to_string()),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(line);
        let field = |i: usize| row.get(index[i]);
        let (Some(id), Some(age), Some(sex), Some(manufacturer)) = (field(0), field(1), field(2), field(3)) else {
            manifest.errors.push(RowError {
                line,
                kind: RowErrorKind::Malformed(format!("expected at least {} fields, found {}", index.iter().max().unwrap() + 1, row.len())),
            });
            continue;
        };
        let kind = if id.is_empty() {
            Some(RowErrorKind::EmptyId)
        } else if seen.contains(id) {
            Some(RowErrorKind::DuplicateId(id.to_string()))
        } else {
            None
        };
        if let Some(kind) = kind {
            manifest.errors.push(RowError { line, kind });
            continue;
        }
        let Ok(age_years) = age.parse::<u32>() else {
            manifest.errors.push(RowError {
                line,
                kind: RowErrorKind::BadAge(age.to_string()),
            });
            continue;
        };
        let Ok(sex) = sex.parse::<Sex>() else {
            manifest.errors.push(RowError {
                line,
                kind: RowErrorKind::BadSex(sex.to_string()),
            });
            continue;
        };
        seen.insert(id.to_string());
        manifest.records.push(ScanRecord {
            scan_id: id.to_string(),
            age: age_years,
            sex,
            manufacturer: manufacturer.to_string(),
        });
    }
    Ok(manifest)
}

pub const AGE_GROUPS: [&str; 5] = ["Under 18", "18–40", "41–60", "61–75", "Over 75"];
pub const MANUFACTURERS: [&str; 4] = ["GE Healthcare", "Siemens", "Philips Healthcare", "Other Manufacturers"];

/// Index into [`AGE_GROUPS`]; each named upper edge is inclusive.
pub fn age_group(age: u32) -> usize {
    match age {
        0..=17 => 0,
        18..=40 => 1,
        41..=60 => 2,
        61..=75 => 3,
        _ => 4,
    }
}

/// Index into [`MANUFACTURERS`]; unlisted vendors fold into the last entry.
pub fn manufacturer_group(name: &str) -> usize {
    let n = name.trim().to_ascii_lowercase();
    if n == "ge" || n.starts_with("ge ") || n.starts_with("ge_") || n.contains("general electric") {
        0
    } else if n.contains("siemens") {
        1
    } else if n.contains("philips") {
        2
    } else {
        3
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bin {
    pub label: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub total: u64,
    pub age_groups: Vec<Bin>,
    pub manufacturers: Vec<Bin>,
    pub sex: Vec<Bin>,
}

pub fn summarize(records: &[ScanRecord]) -> CohortSummary {
    let mut age = [0u64; 5];
    let mut maker = [0u64; 4];
    let mut sex = [0u64; 3];
    for r in records {
        age[age_group(r.age)] += 1;
        maker[manufacturer_group(&r.manufacturer)] += 1;
        sex[match r.sex {
            Sex::Male => 0,
            Sex::Female => 1,
            Sex::Unknown => 2,
        }] += 1;
    }
    let bins = |labels: &[&str], counts: &[u64]| {
        labels
            .iter()
            .zip(counts)
            .map(|(l, &c)| Bin {
                label: l.to_string(),
                count: c,
            })
            .collect()
    };
    CohortSummary {
        total: records.len() as u64,
        age_groups: bins(&AGE_GROUPS, &age),
        manufacturers: bins(&MANUFACTURERS, &maker),
        sex: bins(&["Male", "Female", "Unknown"], &sex),
    }
}

/// `1234567` → `"1,234,567"`.
pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn table(out: &mut String, caption: &str, head: &str, rows: &[(&str, u64)]) {
    let w0 = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain([head.chars().count(), "Total".len()])
        .max()
        .unwrap_or(0);
    let total: u64 = rows.iter().map(|(_, c)| c).sum();
    let count_head = "Number of Scans";
    let pad = |s: &str| format!("{s}{}", " ".repeat(w0 - s.chars().count()));
    let _ = writeln!(out, "{caption}");
    let _ = writeln!(out, "{}  {count_head}", pad(head));
    let _ = writeln!(out, "{}  {}", "-".repeat(w0), "-".repeat(count_head.len()));
    for (label, count) in rows {
        let _ = writeln!(out, "{}  {}", pad(label), thousands(*count));
    }
    let _ = writeln!(out, "{}  {}", pad("Total"), thousands(total));
}

fn rows(bins: &[Bin]) -> Vec<(&str, u64)> {
    bins.iter().map(|b| (b.label.as_str(), b.count)).collect()
}

/// Plain-text rendering of the three cohort tables. The unknown-sex row is
/// shown only when non-zero.
pub fn render_text(s: &CohortSummary) -> String {
    let mut out = String::new();
    table(&mut out, "Scans distribution based on Age Group", "Age Group", &rows(&s.age_groups));
    out.push('\n');
    table(
        &mut out,
        "Scans distribution based on Manufacturer Type",
        "Manufacturer",
        &rows(&s.manufacturers),
    );
    out.push('\n');
    let sex: Vec<_> = s
        .sex
        .iter()
        .filter(|b| b.label != "Unknown" || b.count > 0)
        .map(|b| (b.label.as_str(), b.count))
        .collect();
    table(&mut out, "Scans distribution based on Gender Distribution", "Gender", &sex);
    out
}

pub fn render_json(s: &CohortSummary) -> Result<String> {
    Ok(serde_json::to_string_pretty(s)? + "\n")
}
