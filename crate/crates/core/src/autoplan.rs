//! Dataset fingerprint and segmentation plan.
//!
//! The plan carries fixed values: 1.25 mm isotropic target spacing,
//! 128x128x64 patches, batch size 2, Dice/CE weights 0.7/0.3, initial
//! learning rate 0.01 with polynomial decay, 3x3x3 kernels, feature maps
//! 32 to 320, and removal of components smaller than 50 voxels. The
//! fingerprint is recorded alongside them and does not alter them.
//!
//! Deterministic statistics: medians take the lower midpoint for even counts,
//! percentile `q` of `n` sorted values is element `floor(q / 100 * (n - 1))`,
//! and foreground intensities are sorted before any summation, so the
//! fingerprint does not depend on volume order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postseg::Connectivity;
use crate::volgrid::{Grid, LabelMap, Volume};

pub const PLAN_SCHEMA: &str = "spinemorph.segplan/1";

/// Lower-midpoint median.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

/// Lower-rank percentile of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let idx = ((q / 100.0) * (sorted.len() - 1) as f64).floor() as usize;
    Some(sorted[idx.min(sorted.len() - 1)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub n_volumes: usize,
    pub spacings: Vec<[f64; 3]>,
    pub dims: Vec<[usize; 3]>,
    pub median_spacing: [f64; 3],
    pub median_dims: [usize; 3],
    pub foreground_voxels: usize,
    pub foreground_p00_5: f64,
    pub foreground_p99_5: f64,
    pub foreground_mean: f64,
    pub foreground_std: f64,
}

/// Aggregate spacing, shape and foreground intensity statistics.
///
/// Foreground is every non-zero mask voxel when masks are given, otherwise
/// every voxel.
pub fn fingerprint(volumes: &[Volume], masks: Option<&[LabelMap]>) -> Result<DatasetFingerprint> {
    if volumes.is_empty() {
        return Err(Error::arg("fingerprint needs at least one volume"));
    }
    if let Some(m) = masks {
        if m.len() != volumes.len() {
            return Err(Error::arg(format!(
                "{} masks given for {} volumes",
                m.len(),
                volumes.len()
            )));
        }
    }
    let mut fg = Vec::new();
    for (i, v) in volumes.iter().enumerate() {
        match masks {
            Some(ms) => {
                let m = &ms[i];
                if m.geometry().dims != v.geometry().dims {
                    return Err(Error::arg(format!("mask {i} does not match volume dims")));
                }
                fg.extend(
                    v.data()
                        .iter()
                        .zip(m.data())
                        .filter(|(_, &l)| l != 0)
                        .map(|(&x, _)| x as f64),
                );
            }
            None => fg.extend(v.data().iter().map(|&x| x as f64)),
        }
    }
    if fg.is_empty() {
        return Err(Error::arg("masks select no foreground voxels"));
    }
    fg.sort_by(f64::total_cmp);
    let (mean, std, _) = crate::prep::mean_std(fg.iter().copied());

    let spacings: Vec<[f64; 3]> = volumes.iter().map(|v| v.geometry().spacing).collect();
    let dims: Vec<[usize; 3]> = volumes.iter().map(|v| v.geometry().dims).collect();
    let mut median_spacing = [0.0; 3];
    let mut median_dims = [0usize; 3];
    for a in 0..3 {
        let mut s: Vec<f64> = spacings.iter().map(|s| s[a]).collect();
        median_spacing[a] = lower_median(&mut s).expect("non-empty");
        let mut d: Vec<f64> = dims.iter().map(|d| d[a] as f64).collect();
        median_dims[a] = lower_median(&mut d).expect("non-empty") as usize;
    }

    Ok(DatasetFingerprint {
        n_volumes: volumes.len(),
        spacings,
        dims,
        median_spacing,
        median_dims,
        foreground_voxels: fg.len(),
        foreground_p00_5: percentile_sorted(&fg, 0.5).expect("non-empty"),
        foreground_p99_5: percentile_sorted(&fg, 99.5).expect("non-empty"),
        foreground_mean: mean,
        foreground_std: std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dice: f64,
    pub ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { dice: 0.7, ce: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRate {
    pub initial: f64,
    pub schedule: String,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMaps {
    pub min: u32,
    pub max: u32,
}

/// Settings of the measurement regression network, kept for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNetwork {
    pub input_patch: [u32; 3],
    pub conv_blocks: u32,
    pub kernel_size: [u32; 3],
    pub conv_stride: [u32; 3],
    pub pool_size: [u32; 3],
    pub loss: String,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: u32,
    pub optimizer: String,
    pub adam_betas: [f64; 2],
    pub dropout: f64,
}

impl Default for MeasurementNetwork {
    fn default() -> Self {
        MeasurementNetwork {
            input_patch: [64, 64, 32],
            conv_blocks: 5,
            kernel_size: [3, 3, 3],
            conv_stride: [1, 1, 1],
            pool_size: [2, 2, 2],
            loss: "mse".into(),
            learning_rate: 0.001,
            lr_decay_factor: 0.9,
            lr_decay_every_epochs: 10,
            optimizer: "adam".into(),
            adam_betas: [0.9, 0.999],
            dropout: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFingerprint {
    pub n_volumes: usize,
    pub median_spacing: [f64; 3],
    pub median_dims: [usize; 3],
    pub foreground_p00_5: f64,
    pub foreground_p99_5: f64,
    pub foreground_mean: f64,
    pub foreground_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegPlan {
    pub schema: String,
    pub target_spacing_mm: [f64; 3],
    pub patch_size: [u32; 3],
    pub batch_size: u32,
    pub loss_weights: LossWeights,
    pub learning_rate: LearningRate,
    pub kernel_size: [u32; 3],
    pub feature_maps: FeatureMaps,
    pub normalization: String,
    pub min_component_voxels: usize,
    pub connectivity: Connectivity,
    /// Values recorded from the source configuration only; never executed.
    pub recorded_only: Vec<String>,
    pub assumptions: Vec<String>,
    pub measurement_network: MeasurementNetwork,
    pub fingerprint: PlanFingerprint,
}

/// Build the plan. A pure function of the fingerprint.
pub fn make_plan(fp: &DatasetFingerprint) -> SegPlan {
    SegPlan {
        schema: PLAN_SCHEMA.into(),
        target_spacing_mm: [1.25; 3],
        patch_size: [128, 128, 64],
        batch_size: 2,
        loss_weights: LossWeights::default(),
        learning_rate: LearningRate {
            initial: 0.01,
            schedule: "polynomial".into(),
            exponent: 0.9,
        },
        kernel_size: [3, 3, 3],
        feature_maps: FeatureMaps { min: 32, max: 320 },
        normalization: "zscore".into(),
        min_component_voxels: 50,
        connectivity: Connectivity::TwentySix,
        recorded_only: vec![
            "patch_size".into(),
            "batch_size".into(),
            "learning_rate".into(),
            "kernel_size".into(),
            "feature_maps".into(),
            "measurement_network".into(),
        ],
        assumptions: vec![
            "target spacing applied uniformly to cervical, dorsal and lumbar scans".into(),
            "polynomial decay exponent 0.9 is a convention; the schedule is not executed".into(),
            "connectivity 26 for component analysis".into(),
        ],
        measurement_network: MeasurementNetwork::default(),
        fingerprint: PlanFingerprint {
            n_volumes: fp.n_volumes,
            median_spacing: fp.median_spacing,
            median_dims: fp.median_dims,
            foreground_p00_5: fp.foreground_p00_5,
            foreground_p99_5: fp.foreground_p99_5,
            foreground_mean: fp.foreground_mean,
            foreground_std: fp.foreground_std,
        },
    }
}

impl SegPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::arg(format!("invalid plan: {m}")));
        if self.schema != PLAN_SCHEMA {
            return bad(&format!("schema {:?}", self.schema));
        }
        if self.target_spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("target spacing must be positive");
        }
        if self.patch_size.contains(&0) || self.batch_size == 0 || self.kernel_size.contains(&0) {
            return bad("sizes must be positive");
        }
        let w = self.loss_weights;
        if !(w.dice >= 0.0 && w.ce >= 0.0) || (w.dice + w.ce - 1.0).abs() > 1e-9 {
            return bad("loss weights must be non-negative and sum to 1");
        }
        if self.min_component_voxels == 0 {
            return bad("min_component_voxels must be >= 1");
        }
        if self.learning_rate.initial.is_nan() || self.learning_rate.initial <= 0.0 {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    /// Canonical JSON: fixed key order, shortest round-trip floats, trailing newline.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: SegPlan = serde_json::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }
}
