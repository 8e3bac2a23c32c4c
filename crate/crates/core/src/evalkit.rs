//! Segmentation and measurement evaluation: Dice, voxelwise precision/recall,
//! MSE of measurements, the weighted Dice + cross-entropy loss, and rendering
//! of the three result tables (Dice per structure, MSE per level, precision
//! and recall per segment).
//!
//! Conventions:
//! * Dice of two empty masks is 1.0.
//! * Precision or recall with a zero denominator is undefined (`None`).
//! * Multi-scan reports average per-scan values without weighting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autoplan::LossWeights;
use crate::error::{Error, Result};
use crate::morpho::{LevelPair, MeasurementReport};
use crate::volgrid::{Grid, LabelMap, Mask, SpineRegion, Structure, Vertebra};

pub const METRICS_SCHEMA: &str = "spinemorph.metrics/1";
pub const SOFT_DICE_EPS: f64 = 1e-5;
pub const LOG_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &Mask, gt: &Mask) -> Result<Self> {
        if pred.geometry().dims != gt.geometry().dims {
            return Err(Error::arg(format!(
                "prediction dims {:?} differ from ground truth {:?}",
                pred.geometry().dims,
                gt.geometry().dims
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2 TP / (2 TP + FP + FN)`, 1.0 when both sets are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    /// Percent.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| 100.0 * self.tp as f64 / d as f64)
    }

    /// Percent.
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| 100.0 * self.tp as f64 / d as f64)
    }
}

pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, gt)?.dice())
}

/// `(precision %, recall %)`; `None` marks an undefined value.
pub fn precision_recall(pred: &Mask, gt: &Mask) -> Result<(Option<f64>, Option<f64>)> {
    let c = ConfusionCounts::from_masks(pred, gt)?;
    Ok((c.precision(), c.recall()))
}

/// Mean squared difference, mm².
pub fn mse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::arg(format!(
            "mse: {} predictions for {} ground-truth values",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::arg("mse of an empty list"));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok(sum / pred.len() as f64)
}

/// Per-class probability grids over a shared voxel grid.
#[derive(Debug, Clone)]
pub struct ProbMaps {
    /// Label value of each class, in class order.
    pub classes: Vec<u16>,
    /// `probs[c][voxel]`.
    pub probs: Vec<Vec<f64>>,
}

/// `w_dice * (1 - mean soft Dice) + w_ce * mean(-ln p[gt])`.
///
/// Soft Dice per class is `2 sum(p g) / (sum(p) + sum(g) + 1e-5)`, averaged
/// over all listed classes; probabilities are clamped to `[1e-7, 1]` inside
/// the logarithm.
pub fn composite_loss(maps: &ProbMaps, gt: &LabelMap, weights: LossWeights) -> Result<f64> {
    let n = gt.data().len();
    if maps.classes.is_empty() || maps.classes.len() != maps.probs.len() {
        return Err(Error::arg("one probability grid per class is required"));
    }
    if maps.probs.iter().any(|p| p.len() != n) {
        return Err(Error::arg("probability grids do not match the label map"));
    }
    let class_of: BTreeMap<u16, usize> = maps.classes.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    if class_of.len() != maps.classes.len() {
        return Err(Error::arg("duplicate class labels"));
    }
    let mut inter = vec![0f64; maps.classes.len()];
    let mut psum = vec![0f64; maps.classes.len()];
    let mut gsum = vec![0f64; maps.classes.len()];
    let mut ce = 0f64;
    for (v, &label) in gt.data().iter().enumerate() {
        let c = *class_of
            .get(&label)
            .ok_or_else(|| Error::arg(format!("ground-truth label {label} has no probability class")))?;
        let mut mass = 0f64;
        for (k, grid) in maps.probs.iter().enumerate() {
            let p = grid[v];
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::arg(format!("probability {p} outside [0, 1] at voxel {v}")));
            }
            mass += p;
            psum[k] += p;
        }
        if (mass - 1.0).abs() > 1e-5 {
            return Err(Error::arg(format!("probabilities sum to {mass} at voxel {v}")));
        }
        let p = maps.probs[c][v];
        inter[c] += p;
        gsum[c] += 1.0;
        ce -= p.clamp(LOG_CLAMP, 1.0).ln();
    }
    let soft: f64 = (0..maps.classes.len())
        .map(|k| 2.0 * inter[k] / (psum[k] + gsum[k] + SOFT_DICE_EPS))
        .sum::<f64>()
        / maps.classes.len() as f64;
    Ok(weights.dice * (1.0 - soft) + weights.ce * ce / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceRow {
    pub region: String,
    pub structure: String,
    pub dice: f64,
    pub n_scans: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub region: String,
    pub item: String,
    pub mse_mm2: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallRow {
    pub group: String,
    pub segment: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub n_scans: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub n_scans: usize,
    pub dice: Vec<DiceRow>,
    pub disc_height_mse: Vec<MseRow>,
    pub ap_diameter_mse: Vec<MseRow>,
    pub precision_recall: Vec<PrecisionRecallRow>,
    /// MSE over every measured level of every scan.
    pub aggregate_disc_height_mse: Option<f64>,
    pub aggregate_ap_diameter_mse: Option<f64>,
    /// Levels present in the ground truth but not measured in the prediction.
    pub missing_measurements: usize,
    pub conventions: Vec<String>,
}

impl MetricsReport {
    pub fn empty() -> Self {
        MetricsReport {
            schema: METRICS_SCHEMA.into(),
            n_scans: 0,
            dice: Vec::new(),
            disc_height_mse: Vec::new(),
            ap_diameter_mse: Vec::new(),
            precision_recall: Vec::new(),
            aggregate_disc_height_mse: None,
            aggregate_ap_diameter_mse: None,
            missing_measurements: 0,
            conventions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.dice {
            if !(0.0..=1.0).contains(&r.dice) {
                return Err(Error::arg(format!("dice {} outside [0, 1]", r.dice)));
            }
        }
        for r in self.disc_height_mse.iter().chain(&self.ap_diameter_mse) {
            if r.mse_mm2.is_nan() || r.mse_mm2 < 0.0 {
                return Err(Error::arg(format!("negative MSE {}", r.mse_mm2)));
            }
        }
        for r in &self.precision_recall {
            for v in [r.precision, r.recall].into_iter().flatten() {
                if !(0.0..=100.0).contains(&v) {
                    return Err(Error::arg(format!("percentage {v} outside [0, 100]")));
                }
            }
        }
        Ok(())
    }

    fn rounded(&self) -> MetricsReport {
        let mut r = self.clone();
        for d in &mut r.dice {
            d.dice = round6(d.dice);
        }
        for m in r.disc_height_mse.iter_mut().chain(r.ap_diameter_mse.iter_mut()) {
            m.mse_mm2 = round6(m.mse_mm2);
        }
        for p in &mut r.precision_recall {
            p.precision = p.precision.map(round6);
            p.recall = p.recall.map(round6);
        }
        r.aggregate_disc_height_mse = r.aggregate_disc_height_mse.map(round6);
        r.aggregate_ap_diameter_mse = r.aggregate_ap_diameter_mse.map(round6);
        r
    }
}

fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Six decimals, trailing zeros trimmed down to one decimal ("0.9", "1.0").
pub fn format_trimmed(x: f64) -> String {
    let mut s = format!("{:.6}", round6(x));
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    s
}

/// Two fixed decimals, as used for percentages.
pub fn format_percent(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.2}"),
        None => "undefined".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "table" | "table-text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::arg(format!("unknown report format {s:?} (text, json, csv)"))),
        }
    }
}

pub fn render_report(report: &MetricsReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Text => Ok(render_text(report)),
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&report.rounded())? + "\n"),
        ReportFormat::Csv => render_csv(report),
    }
}

/// Left-aligned columns separated by two spaces; `group_col` is blanked on
/// rows repeating the previous value.
fn text_table(out: &mut String, title: &str, header: &[&str], rows: &[Vec<String>], group_col: Option<usize>) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i + 1 == cells.len() {
                s.push_str(c);
            } else {
                s.push_str(c);
                s.extend(std::iter::repeat(' ').take(w - c.chars().count() + 2));
            }
        }
        s.trim_end().to_string()
    };
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{}", line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>()));
    let _ = writeln!(out, "{}", line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
    let mut prev: Option<&str> = None;
    for r in rows {
        let mut cells = r.clone();
        if let Some(g) = group_col {
            if prev == Some(r[g].as_str()) {
                cells[g] = String::new();
            }
            prev = Some(r[g].as_str());
        }
        let _ = writeln!(out, "{}", line(&cells));
    }
}

fn render_text(r: &MetricsReport) -> String {
    let mut out = String::new();
    let dice_rows: Vec<Vec<String>> = r
        .dice
        .iter()
        .map(|d| vec![d.region.clone(), d.structure.clone(), format_trimmed(d.dice)])
        .collect();
    text_table(
        &mut out,
        "Dice Coefficient Measurement",
        &["Region", "Vertebra", "Dice Coefficient"],
        &dice_rows,
        Some(0),
    );
    out.push('\n');

    let mse_rows: Vec<Vec<String>> = r
        .disc_height_mse
        .iter()
        .map(|m| vec![m.region.clone(), m.item.clone(), format!("{} mm²", format_trimmed(m.mse_mm2))])
        .collect();
    text_table(&mut out, "MSE values", &["Region", "Vertebra", "MSE (Disc Height)"], &mse_rows, Some(0));
    let ap_rows: Vec<Vec<String>> = r
        .ap_diameter_mse
        .iter()
        .map(|m| vec![m.region.clone(), m.item.clone(), format!("{} mm²", format_trimmed(m.mse_mm2))])
        .collect();
    text_table(&mut out, "", &["Region", "Measurement", "MSE"], &ap_rows, Some(0));
    out.push('\n');

    let mut pr_rows: Vec<Vec<String>> = Vec::new();
    let mut last_group: Option<&str> = None;
    for p in &r.precision_recall {
        if last_group != Some(p.group.as_str()) {
            pr_rows.push(vec![p.group.clone(), String::new(), String::new(), String::new()]);
            last_group = Some(p.group.as_str());
        }
        pr_rows.push(vec![
            String::new(),
            p.segment.clone(),
            format_percent(p.precision),
            format_percent(p.recall),
        ]);
    }
    text_table(
        &mut out,
        "Performance Metrics for Cervical, Lumbar & Spinal Canal",
        &["Spine", "Segment", "Precision (%)", "Recall (%)"],
        &pr_rows,
        None,
    );

    let mut footer = Vec::new();
    if let Some(m) = r.aggregate_disc_height_mse {
        footer.push(format!("Aggregate disc height MSE: {} mm²", format_trimmed(m)));
    }
    if let Some(m) = r.aggregate_ap_diameter_mse {
        footer.push(format!("Aggregate AP diameter MSE: {} mm²", format_trimmed(m)));
    }
    if r.missing_measurements > 0 {
        footer.push(format!("Unmeasured ground-truth levels: {}", r.missing_measurements));
    }
    if r.n_scans > 0 {
        footer.push(format!("Scans: {}", r.n_scans));
    }
    footer.extend(r.conventions.iter().map(|c| format!("Note: {c}")));
    if !footer.is_empty() {
        out.push('\n');
        for f in footer {
            out.push_str(&f);
            out.push('\n');
        }
    }
    out
}

fn render_csv(r: &MetricsReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["table", "region", "item", "metric", "value", "n"])?;
    let opt = |v: Option<f64>| v.map(format_trimmed).unwrap_or_default();
    for d in &r.dice {
        w.write_record(["dice", &d.region, &d.structure, "dice", &format_trimmed(d.dice), &d.n_scans.to_string()])?;
    }
    for m in &r.disc_height_mse {
        w.write_record(["mse", &m.region, &m.item, "disc_height_mse_mm2", &format_trimmed(m.mse_mm2), &m.n.to_string()])?;
    }
    for m in &r.ap_diameter_mse {
        w.write_record(["mse", &m.region, &m.item, "ap_diameter_mse_mm2", &format_trimmed(m.mse_mm2), &m.n.to_string()])?;
    }
    for p in &r.precision_recall {
        let n = p.n_scans.to_string();
        w.write_record(["precision_recall", &p.group, &p.segment, "precision_pct", &opt(p.precision), &n])?;
        w.write_record(["precision_recall", &p.group, &p.segment, "recall_pct", &opt(p.recall), &n])?;
    }
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Per-label confusion counts from a single pass over two label maps.
pub fn confusion_by_label(pred: &LabelMap, gt: &LabelMap) -> Result<BTreeMap<u16, ConfusionCounts>> {
    if pred.geometry().dims != gt.geometry().dims {
        return Err(Error::arg(format!(
            "prediction dims {:?} differ from ground truth {:?}",
            pred.geometry().dims,
            gt.geometry().dims
        )));
    }
    let mut tp = vec![0u64; 1 << 16];
    let mut fp = vec![0u64; 1 << 16];
    let mut fn_ = vec![0u64; 1 << 16];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if p == g {
            tp[p as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[g as usize] += 1;
        }
    }
    let total = pred.data().len() as u64;
    let mut out = BTreeMap::new();
    for l in 1..(1usize << 16) {
        if tp[l] + fp[l] + fn_[l] > 0 {
            let c = ConfusionCounts {
                tp: tp[l],
                fp: fp[l],
                fn_: fn_[l],
                tn: total - tp[l] - fp[l] - fn_[l],
            };
            out.insert(l as u16, c);
        }
    }
    Ok(out)
}

fn region_name(s: Structure) -> &'static str {
    match s {
        Structure::Vertebra(v) => v.region().display_name(),
        Structure::Canal => "Spinal canal",
    }
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn value(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Collects per-scan results and produces a [`MetricsReport`].
///
/// Scans must be added in a fixed order (the CLI sorts by scan id) for the
/// floating point sums to be reproducible.
#[derive(Default)]
pub struct EvalAccumulator {
    n_scans: usize,
    dice: BTreeMap<u8, (Structure, Mean)>,
    pr: BTreeMap<u8, (String, String, Mean, Mean, usize)>,
    disc_sq: BTreeMap<LevelPair, Mean>,
    ap_sq: BTreeMap<SpineRegion, (Vertebra, Vertebra, Mean)>,
    all_disc: Mean,
    all_ap: Mean,
    missing: usize,
}

/// Sort key placing vertebrae in anatomical order and the canal last.
fn structure_key(s: Structure) -> u8 {
    match s {
        Structure::Vertebra(v) => v.ordinal(),
        Structure::Canal => u8::MAX,
    }
}

impl EvalAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one scan. Label maps must share a grid; measurement reports are
    /// optional and compared level by level.
    pub fn add_scan(
        &mut self,
        pred: &LabelMap,
        gt: &LabelMap,
        pred_meas: Option<&MeasurementReport>,
        gt_meas: Option<&MeasurementReport>,
    ) -> Result<()> {
        let counts = confusion_by_label(pred, gt)?;
        let scheme = gt.scheme();
        for (&label, c) in &counts {
            let Some(structure) = scheme.structure(label) else {
                continue;
            };
            let e = self
                .dice
                .entry(structure_key(structure))
                .or_insert_with(|| (structure, Mean::default()));
            e.1.add(c.dice());
        }

        // Voxelwise precision/recall per level segment (union of both
        // vertebrae) and for the canal.
        let gt_levels = crate::morpho::pair_levels(gt);
        for pair in &gt_levels {
            let ids: Vec<u16> = [pair.upper(), pair.lower()]
                .into_iter()
                .filter_map(|v| scheme.id_of(Structure::Vertebra(v)))
                .collect();
            let mut c = ConfusionCounts::default();
            for (&p, &g) in pred.data().iter().zip(gt.data()) {
                match (ids.contains(&p), ids.contains(&g)) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
            self.add_pr(
                pair.upper().ordinal(),
                pair.upper().region().display_name(),
                &pair.to_string(),
                &c,
            );
        }
        if let Some(canal) = scheme.canal_id() {
            if let Some(c) = counts.get(&canal) {
                self.add_pr(u8::MAX, "Spinal Canal", "AP diameter", c);
            }
        }

        if let Some(gm) = gt_meas {
            for gl in &gm.levels {
                let pl = pred_meas.and_then(|p| p.level(gl.level));
                let region = gl.level.upper().region();
                if let Some(g) = gl.disc_height_mm {
                    match pl.and_then(|p| p.disc_height_mm) {
                        Some(p) => {
                            let sq = (p - g) * (p - g);
                            self.disc_sq.entry(gl.level).or_default().add(sq);
                            self.all_disc.add(sq);
                        }
                        None => self.missing += 1,
                    }
                }
                if let Some(g) = gl.canal_ap_diameter_mm {
                    match pl.and_then(|p| p.canal_ap_diameter_mm) {
                        Some(p) => {
                            let sq = (p - g) * (p - g);
                            let e = self.ap_sq.entry(region).or_insert_with(|| {
                                (gl.level.upper(), gl.level.lower(), Mean::default())
                            });
                            e.0 = e.0.min(gl.level.upper());
                            e.1 = e.1.max(gl.level.lower());
                            e.2.add(sq);
                            self.all_ap.add(sq);
                        }
                        None => self.missing += 1,
                    }
                }
            }
        }
        self.n_scans += 1;
        Ok(())
    }

    fn add_pr(&mut self, key: u8, group: &str, segment: &str, c: &ConfusionCounts) {
        let e = self
            .pr
            .entry(key)
            .or_insert_with(|| (group.to_string(), segment.to_string(), Mean::default(), Mean::default(), 0));
        if let Some(p) = c.precision() {
            e.2.add(p);
        }
        if let Some(r) = c.recall() {
            e.3.add(r);
        }
        e.4 += 1;
    }

    pub fn finish(&self) -> MetricsReport {
        let dice = self
            .dice
            .values()
            .map(|(s, m)| DiceRow {
                region: region_name(*s).into(),
                structure: match s {
                    Structure::Canal => "-".into(),
                    other => other.to_string(),
                },
                dice: m.value().unwrap_or(1.0),
                n_scans: m.n,
            })
            .collect();
        let disc_height_mse = self
            .disc_sq
            .iter()
            .map(|(pair, m)| MseRow {
                region: pair.upper().region().display_name().into(),
                item: pair.to_string(),
                mse_mm2: m.value().unwrap_or(0.0),
                n: m.n,
            })
            .collect();
        let ap_diameter_mse = self
            .ap_sq
            .values()
            .map(|(first, last, m)| MseRow {
                region: "Spinal canal".into(),
                item: format!("AP Diameter ({first} - {last})"),
                mse_mm2: m.value().unwrap_or(0.0),
                n: m.n,
            })
            .collect();
        let precision_recall = self
            .pr
            .values()
            .map(|(g, s, p, r, n)| PrecisionRecallRow {
                group: g.clone(),
                segment: s.clone(),
                precision: p.value(),
                recall: r.value(),
                n_scans: *n,
            })
            .collect();
        MetricsReport {
            schema: METRICS_SCHEMA.into(),
            n_scans: self.n_scans,
            dice,
            disc_height_mse,
            ap_diameter_mse,
            precision_recall,
            aggregate_disc_height_mse: self.all_disc.value(),
            aggregate_ap_diameter_mse: self.all_ap.value(),
            missing_measurements: self.missing,
            conventions: vec![
                "dice of two empty masks is 1.0".into(),
                "precision/recall with a zero denominator is undefined".into(),
                "precision/recall are voxelwise; a level segment is the union of its two vertebrae".into(),
                "per-structure values are computed per scan and averaged without weighting".into(),
            ],
        }
    }
}
