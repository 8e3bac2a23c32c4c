//! Disc height and spinal canal AP diameter from a canonical (RAS) label map.
//!
//! Disc height for a level pair is the median, over axial columns `(x, y)`
//! holding both vertebrae, of the number of empty voxel layers between the
//! inferior endplate of the upper vertebra and the superior endplate of the
//! lower one, times the z spacing. The canal AP diameter is the y-extent of
//! the largest canal component in the axial slice at the middle of the disc
//! space.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::postseg::{largest_component, Connectivity};
use crate::volgrid::{Grid, LabelMap, Mask, Structure, Vertebra};

pub const ALGORITHM_VERSION: &str = "spinemorph-morpho/1";
pub const DEFAULT_MIN_COLUMNS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasureError {
    #[error("label map must be in canonical RAS orientation, found {0}")]
    NotCanonical(String),
    #[error("{0} is not present in the label map")]
    StructureAbsent(Structure),
    #[error("{upper} and {lower} are not adjacent vertebrae")]
    NotAdjacent { upper: Vertebra, lower: Vertebra },
    #[error("only {columns} overlapping axial columns, need {required}")]
    InsufficientOverlap { columns: usize, required: usize },
    #[error("inconsistent segmentation: vertebrae interpenetrate (median gap {median_gap_voxels} voxels)")]
    InconsistentSegmentation { median_gap_voxels: i64 },
    #[error("label scheme has no spinal canal entry")]
    NoCanalLabel,
    #[error("no canal voxels in axial slice {z}")]
    NoCanalAtLevel { z: usize },
}

/// Two anatomically adjacent vertebrae naming a disc space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelPair {
    upper: Vertebra,
    lower: Vertebra,
}

impl LevelPair {
    /// Accepts either argument order; the anatomically superior vertebra
    /// becomes `upper`.
    pub fn new(a: Vertebra, b: Vertebra) -> Result<Self, MeasureError> {
        let (upper, lower) = if a < b { (a, b) } else { (b, a) };
        if lower.ordinal() != upper.ordinal() + 1 {
            return Err(MeasureError::NotAdjacent { upper, lower });
        }
        Ok(LevelPair { upper, lower })
    }

    pub fn upper(&self) -> Vertebra {
        self.upper
    }

    pub fn lower(&self) -> Vertebra {
        self.lower
    }
}

impl fmt::Display for LevelPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.upper, self.lower)
    }
}

impl std::str::FromStr for LevelPair {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| crate::Error::arg(format!("level must look like L4-L5, got {s:?}")))?;
        Ok(LevelPair::new(a.trim().parse()?, b.trim().parse()?)?)
    }
}

impl Serialize for LevelPair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LevelPair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasureParams {
    pub min_columns: usize,
    /// Used when isolating the largest canal component.
    pub connectivity: Connectivity,
}

impl Default for MeasureParams {
    fn default() -> Self {
        MeasureParams {
            min_columns: DEFAULT_MIN_COLUMNS,
            connectivity: Connectivity::TwentySix,
        }
    }
}

fn require_canonical(lm: &LabelMap) -> Result<(), MeasureError> {
    let o = lm.geometry().orientation;
    if o.is_canonical() {
        Ok(())
    } else {
        Err(MeasureError::NotCanonical(o.to_string()))
    }
}

/// Scheme-adjacent vertebra pairs with both labels present, superior first.
pub fn pair_levels(lm: &LabelMap) -> Vec<LevelPair> {
    let present = lm.labels_present();
    let verts = lm.scheme().vertebrae();
    verts
        .windows(2)
        .filter(|w| present.contains(&w[0].id) && present.contains(&w[1].id))
        .filter_map(|w| {
            let a = w[0].name.vertebra()?;
            let b = w[1].name.vertebra()?;
            LevelPair::new(a, b).ok()
        })
        .collect()
}

/// Per-column (min_z, max_z) of one label plus the label's mean z.
struct ColumnExtents {
    cols: Vec<Option<(usize, usize)>>,
    mean_z: f64,
}

fn column_extents(lm: &LabelMap, label: u16) -> Option<ColumnExtents> {
    let [nx, ny, nz] = lm.geometry().dims;
    let data = lm.data();
    let mut cols = vec![None; nx * ny];
    let mut zsum = 0f64;
    let mut n = 0usize;
    for k in 0..nz {
        let slice = &data[k * nx * ny..(k + 1) * nx * ny];
        for (c, &l) in slice.iter().enumerate() {
            if l == label {
                zsum += k as f64;
                n += 1;
                cols[c] = match cols[c] {
                    None => Some((k, k)),
                    Some((lo, _)) => Some((lo, k)),
                };
            }
        }
    }
    (n > 0).then(|| ColumnExtents {
        cols,
        mean_z: zsum / n as f64,
    })
}

/// Lower-midpoint median of a non-empty slice.
fn lower_median(values: &mut [i64]) -> i64 {
    values.sort_unstable();
    values[(values.len() - 1) / 2]
}

/// Full disc-space measurement for one level.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscMeasurement {
    pub height_mm: f64,
    /// Median gap in voxel layers.
    pub gap_voxels: i64,
    /// Overlapping columns with a non-negative gap.
    pub columns: usize,
    /// Axial slice in the middle of the disc space.
    pub mid_slice: usize,
}

pub fn measure_disc(lm: &LabelMap, pair: LevelPair, params: &MeasureParams) -> Result<DiscMeasurement, MeasureError> {
    require_canonical(lm)?;
    let scheme = lm.scheme();
    let id = |v: Vertebra| {
        scheme
            .id_of(Structure::Vertebra(v))
            .ok_or(MeasureError::StructureAbsent(Structure::Vertebra(v)))
    };
    let a = column_extents(lm, id(pair.upper)?)
        .ok_or(MeasureError::StructureAbsent(Structure::Vertebra(pair.upper)))?;
    let b = column_extents(lm, id(pair.lower)?)
        .ok_or(MeasureError::StructureAbsent(Structure::Vertebra(pair.lower)))?;
    // Whichever body sits higher along +z is treated as the upper one.
    let (up, down) = if a.mean_z >= b.mean_z { (&a, &b) } else { (&b, &a) };

    let mut gaps = Vec::new();
    let mut mids = Vec::new();
    for (u, d) in up.cols.iter().zip(&down.cols) {
        if let (Some((u_min, _)), Some((_, d_max))) = (u, d) {
            let gap = *u_min as i64 - *d_max as i64 - 1;
            gaps.push(gap);
            if gap >= 0 {
                mids.push(*u_min + *d_max);
            }
        }
    }
    if gaps.len() < params.min_columns {
        return Err(MeasureError::InsufficientOverlap {
            columns: gaps.len(),
            required: params.min_columns,
        });
    }
    let median_all = lower_median(&mut gaps.clone());
    if median_all < 0 {
        return Err(MeasureError::InconsistentSegmentation {
            median_gap_voxels: median_all,
        });
    }
    let mut good: Vec<i64> = gaps.into_iter().filter(|&g| g >= 0).collect();
    if good.len() < params.min_columns {
        return Err(MeasureError::InsufficientOverlap {
            columns: good.len(),
            required: params.min_columns,
        });
    }
    let gap_voxels = lower_median(&mut good);
    // mids hold u_min + d_max, so the mean midpoint is sum / (2 n).
    let mid = mids.iter().map(|&m| m as f64).sum::<f64>() / (2.0 * mids.len() as f64);
    Ok(DiscMeasurement {
        height_mm: gap_voxels as f64 * lm.geometry().spacing[2],
        gap_voxels,
        columns: good.len(),
        mid_slice: (mid + 0.5).floor() as usize,
    })
}

/// Median vertical gap between two adjacent vertebrae, in mm.
pub fn disc_height(lm: &LabelMap, pair: LevelPair) -> Result<f64, MeasureError> {
    measure_disc(lm, pair, &MeasureParams::default()).map(|m| m.height_mm)
}

/// Largest canal component of the map.
pub fn canal_mask(lm: &LabelMap, connectivity: Connectivity) -> Result<Mask, MeasureError> {
    let canal = lm.scheme().canal_id().ok_or(MeasureError::NoCanalLabel)?;
    Ok(largest_component(lm, canal, connectivity))
}

/// AP (y) extent of `mask` in slice `z`, in mm.
pub fn ap_extent_in_slice(mask: &Mask, z: usize) -> Result<f64, MeasureError> {
    let g = mask.geometry();
    let [nx, ny, nz] = g.dims;
    if z >= nz {
        return Err(MeasureError::NoCanalAtLevel { z });
    }
    let slice = &mask.data()[z * nx * ny..(z + 1) * nx * ny];
    let mut range: Option<(usize, usize)> = None;
    for (c, &on) in slice.iter().enumerate() {
        if on {
            let y = c / nx;
            range = Some(match range {
                None => (y, y),
                Some((lo, hi)) => (lo.min(y), hi.max(y)),
            });
        }
    }
    let (lo, hi) = range.ok_or(MeasureError::NoCanalAtLevel { z })?;
    Ok((hi - lo + 1) as f64 * g.spacing[1])
}

/// Spinal canal AP diameter in axial slice `at_z`, in mm.
pub fn canal_ap_diameter(lm: &LabelMap, at_z: usize) -> Result<f64, MeasureError> {
    require_canonical(lm)?;
    let mask = canal_mask(lm, Connectivity::TwentySix)?;
    ap_extent_in_slice(&mask, at_z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMeasurement {
    pub level: LevelPair,
    #[serde(default)]
    pub disc_height_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disc_height_error: Option<String>,
    #[serde(default)]
    pub canal_slice: Option<usize>,
    #[serde(default)]
    pub canal_ap_diameter_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canal_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spacing_mm: [f64; 3],
    pub orientation: String,
    pub algorithm: String,
    pub disc_height_method: String,
    pub canal_method: String,
    pub min_overlap_columns: usize,
    pub connectivity: Connectivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementReport {
    pub schema: String,
    pub units: String,
    pub levels: Vec<LevelMeasurement>,
    pub provenance: Provenance,
}

pub const REPORT_SCHEMA: &str = "spinemorph.measurement/1";

impl MeasurementReport {
    pub fn level(&self, pair: LevelPair) -> Option<&LevelMeasurement> {
        self.levels.iter().find(|l| l.level == pair)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per level.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "level",
            "upper",
            "lower",
            "disc_height_mm",
            "canal_slice",
            "canal_ap_diameter_mm",
            "note",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for l in &self.levels {
            let note = [l.disc_height_error.as_deref(), l.canal_error.as_deref()]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join("; ");
            w.write_record([
                l.level.to_string(),
                l.level.upper().to_string(),
                l.level.lower().to_string(),
                opt(l.disc_height_mm),
                l.canal_slice.map(|z| z.to_string()).unwrap_or_default(),
                opt(l.canal_ap_diameter_mm),
                note,
            ])?;
        }
        w.flush()?;
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        out.write_all(self.to_csv()?.as_bytes())?;
        Ok(())
    }
}

/// Measure every adjacent level. Per-level failures are recorded in the
/// report, never returned as errors. Non-canonical input is reoriented first.
pub fn measure_all(lm: &LabelMap) -> MeasurementReport {
    measure_all_with(lm, &MeasureParams::default())
}

pub fn measure_all_with(lm: &LabelMap, params: &MeasureParams) -> MeasurementReport {
    let canonical;
    let lm = if lm.geometry().orientation.is_canonical() {
        lm
    } else {
        canonical = lm.to_canonical();
        &canonical
    };
    let canal = canal_mask(lm, params.connectivity);
    let levels = pair_levels(lm)
        .into_iter()
        .map(|pair| {
            let mut entry = LevelMeasurement {
                level: pair,
                disc_height_mm: None,
                disc_height_error: None,
                canal_slice: None,
                canal_ap_diameter_mm: None,
                canal_error: None,
            };
            match measure_disc(lm, pair, params) {
                Ok(disc) => {
                    entry.disc_height_mm = Some(disc.height_mm);
                    entry.canal_slice = Some(disc.mid_slice);
                    match canal
                        .as_ref()
                        .map_err(Clone::clone)
                        .and_then(|m| ap_extent_in_slice(m, disc.mid_slice))
                    {
                        Ok(ap) => entry.canal_ap_diameter_mm = Some(ap),
                        Err(e) => entry.canal_error = Some(e.to_string()),
                    }
                }
                Err(e) => {
                    entry.canal_error = Some(format!("no disc slice: {e}"));
                    entry.disc_height_error = Some(e.to_string());
                }
            }
            entry
        })
        .collect();
    MeasurementReport {
        schema: REPORT_SCHEMA.to_string(),
        units: "mm".to_string(),
        levels,
        provenance: Provenance {
            spacing_mm: lm.geometry().spacing,
            orientation: lm.geometry().orientation.to_string(),
            algorithm: format!("{ALGORITHM_VERSION} ({})", crate::VERSION),
            disc_height_method: "median per-column vertical gap over the overlapping axial footprint (volumetric)"
                .to_string(),
            canal_method: "y-extent of the largest canal component in the axial slice at mid disc space".to_string(),
            min_overlap_columns: params.min_columns,
            connectivity: params.connectivity,
        },
    }
}
