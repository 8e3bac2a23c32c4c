//! Synthetic spine phantoms with exact ground truth, and a threshold
//! segmenter that stands in for a trained network.
//!
//! Geometry (RAS, origin at voxel 0, voxel centres at `index * spacing`):
//! vertebral bodies are elliptic cylinders stacked along z, most superior on
//! top, separated by the requested gaps. The gap space between two bodies
//! has the same cross-section and carries the disc intensity. The canal is
//! an elliptic tube spanning the whole stack, posterior (-y) to the bodies.
//! A voxel belongs to a z-interval `[lo, hi)` when its centre does, and to an
//! ellipse when its normalised radius is strictly below 1.
//!
//! Noise: a ChaCha8 stream seeded with `seed` (`ChaCha8Rng::seed_from_u64`).
//! Voxels are visited in linear order (x fastest) and consume standard
//! normal deviates from Box-Muller pairs: `u1 = (a >> 11 + 1) / 2^53`,
//! `u2 = (b >> 11) / 2^53` from two `next_u64` draws, giving
//! `r cos(2 pi u2)` then `r sin(2 pi u2)` with `r = sqrt(-2 ln u1)`. The voxel
//! value is `f32(mean + sigma * z)`. With `sigma == 0` no draws are made.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morpho::{self, MeasurementReport, DEFAULT_MIN_COLUMNS};
use crate::postseg::{cc_label_mask, Connectivity};
use crate::volgrid::{Geometry, Grid, LabelMap, LabelScheme, Mask, Structure, Vertebra, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueIntensities {
    pub background: f64,
    pub body: f64,
    pub disc: f64,
    pub canal: f64,
}

impl Default for TissueIntensities {
    fn default() -> Self {
        TissueIntensities {
            background: 10.0,
            body: 90.0,
            disc: 150.0,
            canal: 240.0,
        }
    }
}

impl TissueIntensities {
    fn all(&self) -> [f64; 4] {
        [self.background, self.body, self.disc, self.canal]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// Most superior vertebra; the stack continues inferiorly.
    pub first_vertebra: Vertebra,
    pub n_vertebrae: usize,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Lateral (x) and antero-posterior (y) half-axes of each body.
    pub body_half_axes_mm: [f64; 2],
    pub body_height_mm: f64,
    /// Gap below each vertebra except the last, superior first.
    pub disc_gaps_mm: Vec<f64>,
    pub canal_ap_half_axis_mm: f64,
    pub canal_lateral_half_axis_mm: f64,
    /// Distance from body centre to canal centre along -y.
    pub canal_posterior_offset_mm: f64,
    pub intensities: TissueIntensities,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// L1 to S1 with graded gaps.
    pub fn lumbar() -> Self {
        PhantomSpec {
            first_vertebra: "L1".parse().expect("valid name"),
            n_vertebrae: 6,
            dims: [32, 36, 128],
            spacing_mm: [1.0; 3],
            body_half_axes_mm: [12.0, 9.0],
            body_height_mm: 12.0,
            disc_gaps_mm: vec![8.0, 9.0, 10.0, 11.0, 12.0],
            canal_ap_half_axis_mm: 5.0,
            canal_lateral_half_axis_mm: 7.0,
            canal_posterior_offset_mm: 16.0,
            intensities: TissueIntensities::default(),
            noise_sigma: 5.0,
            seed: 1,
        }
    }

    /// C2 to C7.
    pub fn cervical() -> Self {
        PhantomSpec {
            first_vertebra: "C2".parse().expect("valid name"),
            n_vertebrae: 6,
            dims: [24, 32, 80],
            spacing_mm: [1.0; 3],
            body_half_axes_mm: [8.0, 6.0],
            body_height_mm: 8.0,
            disc_gaps_mm: vec![4.0, 5.0, 5.0, 6.0, 6.0],
            canal_ap_half_axis_mm: 6.5,
            canal_lateral_half_axis_mm: 9.0,
            canal_posterior_offset_mm: 14.0,
            intensities: TissueIntensities::default(),
            noise_sigma: 5.0,
            seed: 1,
        }
    }

    /// Same physical field of view at a new isotropic spacing.
    pub fn with_spacing(mut self, spacing: f64) -> Self {
        for a in 0..3 {
            let extent = self.dims[a] as f64 * self.spacing_mm[a];
            self.dims[a] = (extent / spacing).ceil() as usize;
            self.spacing_mm[a] = spacing;
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Deterministic family of specs alternating lumbar and cervical presets,
    /// spacings 1.0 and 1.25 mm, with gaps and canal sizes varied per item.
    pub fn sweep(count: usize, seed: u64) -> Vec<PhantomSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick = |lo: f64, hi: f64| {
            // Half-millimetre grid between lo and hi inclusive.
            let steps = ((hi - lo) * 2.0).round() as u64 + 1;
            lo + (rng.next_u64() % steps) as f64 * 0.5
        };
        (0..count)
            .map(|i| {
                let mut spec = if i % 2 == 0 {
                    PhantomSpec::lumbar()
                } else {
                    PhantomSpec::cervical()
                };
                let (glo, ghi, clo, chi) = if i % 2 == 0 {
                    (6.0, 12.0, 4.0, 6.0)
                } else {
                    (3.5, 6.5, 5.0, 6.5)
                };
                for g in &mut spec.disc_gaps_mm {
                    *g = pick(glo, ghi);
                }
                spec.canal_ap_half_axis_mm = pick(clo, chi);
                // Keep one empty row between canal and bodies at any spacing.
                spec.canal_posterior_offset_mm =
                    spec.body_half_axes_mm[1] + spec.canal_ap_half_axis_mm + 2.0;
                // Leave room in z for the widest gaps.
                spec.dims[2] += 8;
                spec.dims[1] += 4;
                spec.seed = seed.wrapping_mul(1000).wrapping_add(i as u64);
                if (i / 2) % 2 == 1 {
                    spec = spec.with_spacing(1.25);
                }
                spec
            })
            .collect()
    }

    pub fn vertebrae(&self) -> Result<Vec<Vertebra>> {
        self.first_vertebra.run(self.n_vertebrae)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vertebrae < 2 {
            return Err(Error::arg("a phantom needs at least two vertebrae"));
        }
        self.vertebrae()?;
        if self.disc_gaps_mm.len() + 1 != self.n_vertebrae {
            return Err(Error::arg(format!(
                "{} gaps given for {} vertebrae",
                self.disc_gaps_mm.len(),
                self.n_vertebrae
            )));
        }
        let positives = [
            self.body_half_axes_mm[0],
            self.body_half_axes_mm[1],
            self.body_height_mm,
            self.canal_ap_half_axis_mm,
            self.canal_lateral_half_axis_mm,
            self.canal_posterior_offset_mm,
        ];
        if positives
            .iter()
            .chain(&self.disc_gaps_mm)
            .chain(&self.spacing_mm)
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::arg("geometric phantom parameters must be positive and finite"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::arg("noise sigma must be finite and non-negative"));
        }
        let means = self.intensities.all();
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::arg("tissue intensities must be finite"));
        }
        for i in 0..4 {
            for j in i + 1..4 {
                if (means[i] - means[j]).abs() < 4.0 * self.noise_sigma {
                    return Err(Error::arg(format!(
                        "tissue means {} and {} are closer than 4 sigma ({})",
                        means[i], means[j], self.noise_sigma
                    )));
                }
            }
        }
        let clearance = self.canal_posterior_offset_mm - self.body_half_axes_mm[1] - self.canal_ap_half_axis_mm;
        if clearance < self.spacing_mm[1] {
            return Err(Error::arg(format!(
                "canal must clear the bodies by at least one voxel (clearance {clearance} mm)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub labels: LabelMap,
    /// Constructed disc gaps and canal diameters, exactly as specified.
    pub measurements: MeasurementReport,
    pub spec: PhantomSpec,
}

/// Physical placement derived from a spec.
struct Layout {
    xc: f64,
    y_body: f64,
    y_canal: f64,
    /// `[lo, hi)` z-interval of each body, superior first.
    bodies: Vec<(f64, f64)>,
    stack: (f64, f64),
}

fn layout(spec: &PhantomSpec) -> Result<Layout> {
    let [nx, ny, nz] = spec.dims;
    let [sx, sy, sz] = spec.spacing_mm;
    let height = spec.n_vertebrae as f64 * spec.body_height_mm + spec.disc_gaps_mm.iter().sum::<f64>();
    let z_room = nz as f64 * sz;
    if height > z_room - 2.0 * sz {
        return Err(Error::arg(format!(
            "stack height {height} mm exceeds the grid ({z_room} mm with a one-voxel margin each end)"
        )));
    }
    let z_bottom = -0.5 * sz + sz * (((z_room - height) / 2.0) / sz).floor();
    let top = z_bottom + height;
    let mut bodies = Vec::with_capacity(spec.n_vertebrae);
    let mut hi = top;
    for i in 0..spec.n_vertebrae {
        bodies.push((hi - spec.body_height_mm, hi));
        hi -= spec.body_height_mm;
        if i < spec.disc_gaps_mm.len() {
            hi -= spec.disc_gaps_mm[i];
        }
    }

    let half_width = spec.body_half_axes_mm[0].max(spec.canal_lateral_half_axis_mm);
    if 2.0 * half_width > (nx as f64 - 2.0) * sx {
        return Err(Error::arg("phantom is wider than the grid"));
    }
    let xc = 0.5 * (nx as f64 - 1.0) * sx;

    let ay = spec.body_half_axes_mm[1];
    let ca = spec.canal_ap_half_axis_mm;
    let off = spec.canal_posterior_offset_mm;
    let span = ay + off + ca;
    if span > (ny as f64 - 2.0) * sy {
        return Err(Error::arg("phantom is deeper than the grid"));
    }
    let ymid = 0.5 * (ny as f64 - 1.0) * sy;
    let raw_canal = ymid - 0.5 * (ay - off - ca) - off;
    // Centre the canal on a voxel edge or centre so its AP run is symmetric.
    let run = (2.0 * ca / sy).round() as i64;
    let y_canal = if run % 2 == 0 {
        ((raw_canal / sy).floor() + 0.5) * sy
    } else {
        (raw_canal / sy).round() * sy
    };
    let y_body = y_canal + off;
    if y_canal - ca < 0.5 * sy || y_body + ay > (ny as f64 - 1.5) * sy {
        return Err(Error::arg("phantom does not fit the grid in y"));
    }
    Ok(Layout {
        xc,
        y_body,
        y_canal,
        bodies,
        stack: (z_bottom, top),
    })
}

fn in_interval(z: f64, (lo, hi): (f64, f64), eps: f64) -> bool {
    z >= lo - eps && z < hi - eps
}

fn in_ellipse(dx: f64, dy: f64, a: f64, b: f64) -> bool {
    (dx / a).powi(2) + (dy / b).powi(2) < 1.0
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tissue {
    Background,
    Body(usize),
    Disc,
    Canal,
}

fn tissue_map(spec: &PhantomSpec, lay: &Layout) -> Vec<Tissue> {
    let [nx, ny, nz] = spec.dims;
    let [sx, sy, sz] = spec.spacing_mm;
    let eps = 1e-6 * sz;
    let [bx, by] = spec.body_half_axes_mm;
    let mut out = vec![Tissue::Background; nx * ny * nz];
    for k in 0..nz {
        let z = k as f64 * sz;
        let body = lay.bodies.iter().position(|&iv| in_interval(z, iv, eps));
        let in_stack = in_interval(z, lay.stack, eps);
        if !in_stack {
            continue;
        }
        for j in 0..ny {
            let y = j as f64 * sy;
            for i in 0..nx {
                let x = i as f64 * sx;
                let dx = x - lay.xc;
                let t = if in_ellipse(dx, y - lay.y_body, bx, by) {
                    match body {
                        Some(b) => Tissue::Body(b),
                        None => Tissue::Disc,
                    }
                } else if in_ellipse(
                    dx,
                    y - lay.y_canal,
                    spec.canal_lateral_half_axis_mm,
                    spec.canal_ap_half_axis_mm,
                ) {
                    Tissue::Canal
                } else {
                    Tissue::Background
                };
                out[i + nx * (j + ny * k)] = t;
            }
        }
    }
    out
}

/// Standard normal deviates in the documented Box-Muller order.
struct Gaussian {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Gaussian {
    fn new(seed: u64) -> Self {
        Gaussian {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let scale = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * scale;
        let u2 = (self.rng.next_u64() >> 11) as f64 * scale;
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Build the image and its exact ground truth.
pub fn generate(spec: &PhantomSpec) -> Result<(Volume, GroundTruth)> {
    spec.validate()?;
    let lay = layout(spec)?;
    let geometry = Geometry::new(spec.dims, spec.spacing_mm, [0.0; 3])?;
    let tissues = tissue_map(spec, &lay);

    let scheme = LabelScheme::shared_standard();
    let vertebrae = spec.vertebrae()?;
    let ids: Vec<u16> = vertebrae
        .iter()
        .map(|v| scheme.id_of(Structure::Vertebra(*v)).expect("standard scheme covers every vertebra"))
        .collect();
    let canal = scheme.canal_id().expect("standard scheme has a canal");

    let labels: Vec<u16> = tissues
        .iter()
        .map(|t| match t {
            Tissue::Body(b) => ids[*b],
            Tissue::Canal => canal,
            _ => 0,
        })
        .collect();
    let column_count = {
        let [nx, ny, _] = spec.dims;
        let mut best = 0;
        for k in 0..geometry.dims[2] {
            let slice = &labels[k * nx * ny..(k + 1) * nx * ny];
            best = best.max(slice.iter().filter(|&&l| l != 0 && l != canal).count());
        }
        best
    };
    if column_count < DEFAULT_MIN_COLUMNS {
        return Err(Error::arg(format!(
            "body cross-section covers {column_count} voxels, fewer than {DEFAULT_MIN_COLUMNS}"
        )));
    }
    let label_map = LabelMap::new(geometry, labels, scheme)?;

    let means = spec.intensities;
    let mut noise = (spec.noise_sigma > 0.0).then(|| Gaussian::new(spec.seed));
    let data: Vec<f32> = tissues
        .iter()
        .map(|t| {
            let mean = match t {
                Tissue::Background => means.background,
                Tissue::Body(_) => means.body,
                Tissue::Disc => means.disc,
                Tissue::Canal => means.canal,
            };
            match noise.as_mut() {
                Some(g) => (mean + spec.noise_sigma * g.next()) as f32,
                None => mean as f32,
            }
        })
        .collect();
    let volume = Volume::new(geometry, data)?;

    let mut measurements = morpho::measure_all(&label_map);
    if measurements.levels.len() != spec.disc_gaps_mm.len() {
        return Err(Error::arg(format!(
            "phantom produced {} measurable levels, expected {}",
            measurements.levels.len(),
            spec.disc_gaps_mm.len()
        )));
    }
    for (level, &gap) in measurements.levels.iter_mut().zip(&spec.disc_gaps_mm) {
        level.disc_height_mm = Some(gap);
        level.disc_height_error = None;
        level.canal_ap_diameter_mm = Some(2.0 * spec.canal_ap_half_axis_mm);
        level.canal_error = None;
    }
    Ok((
        volume,
        GroundTruth {
            labels: label_map,
            measurements,
            spec: spec.clone(),
        },
    ))
}

/// Intensity ranges and naming for [`segment_baseline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Half-open `[lo, hi)` intensity range of vertebral bodies.
    pub body_range: [f64; 2],
    pub canal_range: [f64; 2],
    pub first_vertebra: Vertebra,
    pub n_vertebrae: usize,
    /// Body-class components smaller than this are ignored.
    pub min_component_voxels: usize,
    pub connectivity: Connectivity,
}

impl BaselineConfig {
    /// Ranges bounded by the midpoints between neighbouring tissue means.
    pub fn for_spec(spec: &PhantomSpec) -> Self {
        let means = spec.intensities;
        let mut sorted = means.all();
        sorted.sort_by(f64::total_cmp);
        let range = |m: f64| {
            let pos = sorted.iter().position(|&s| s == m).expect("mean is in the list");
            let lo = if pos == 0 {
                f64::NEG_INFINITY
            } else {
                0.5 * (sorted[pos - 1] + m)
            };
            let hi = if pos + 1 == sorted.len() {
                f64::INFINITY
            } else {
                0.5 * (sorted[pos + 1] + m)
            };
            [lo, hi]
        };
        BaselineConfig {
            body_range: range(means.body),
            canal_range: range(means.canal),
            first_vertebra: spec.first_vertebra,
            n_vertebrae: spec.n_vertebrae,
            min_component_voxels: 50,
            connectivity: Connectivity::TwentySix,
        }
    }
}

fn threshold(v: &Volume, [lo, hi]: [f64; 2]) -> Mask {
    let data = v
        .data()
        .iter()
        .map(|&x| {
            let x = x as f64;
            x >= lo && x < hi
        })
        .collect();
    Mask::new(*v.geometry(), data).expect("same geometry")
}

/// Threshold segmentation: body-class components named superior to
/// inferior by descending z-centroid, canal as the largest canal-class
/// component.
pub fn segment_baseline(v: &Volume, cfg: &BaselineConfig) -> Result<LabelMap> {
    if !v.geometry().orientation.is_canonical() {
        return Err(Error::Orientation(format!(
            "baseline segmentation needs RAS input, got {}",
            v.geometry().orientation
        )));
    }
    let scheme = LabelScheme::shared_standard();
    let names = cfg.first_vertebra.run(cfg.n_vertebrae)?;

    let bodies = cc_label_mask(&threshold(v, cfg.body_range), cfg.connectivity);
    let mut kept: Vec<_> = bodies
        .table
        .components
        .iter()
        .filter(|c| c.voxels >= cfg.min_component_voxels)
        .collect();
    if kept.len() != names.len() {
        let sizes: Vec<String> = kept.iter().map(|c| c.voxels.to_string()).collect();
        return Err(Error::Labeling {
            found: kept.len(),
            expected: names.len(),
            detail: format!(
                "body-class components with at least {} voxels: [{}]",
                cfg.min_component_voxels,
                sizes.join(", ")
            ),
        });
    }
    kept.sort_by(|a, b| b.centroid[2].total_cmp(&a.centroid[2]).then(a.id.cmp(&b.id)));
    let mut label_of = vec![0u16; bodies.table.len() + 1];
    for (c, name) in kept.iter().zip(&names) {
        label_of[c.id as usize] = scheme
            .id_of(Structure::Vertebra(*name))
            .expect("standard scheme covers every vertebra");
    }
    let mut data: Vec<u16> = bodies.ids.iter().map(|&id| label_of[id as usize]).collect();

    let canal = cc_label_mask(&threshold(v, cfg.canal_range), cfg.connectivity);
    if let Some(best) = canal.table.largest_of(1) {
        let canal_id = scheme.canal_id().expect("standard scheme has a canal");
        for (d, &id) in data.iter_mut().zip(&canal.ids) {
            if id == best.id && *d == 0 {
                *d = canal_id;
            }
        }
    }
    LabelMap::new(*v.geometry(), data, scheme)
}
