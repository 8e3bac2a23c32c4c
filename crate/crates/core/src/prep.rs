//! Image standardization: isotropic resampling, z-score intensity
//! normalization and window width / window center (WW/WC) rescaling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volgrid::{Geometry, Grid, LabelMap, Mask, Volume};

/// Std-dev below which z-scoring zero-fills instead of dividing.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    width: f64,
    center: f64,
}

impl WindowSpec {
    pub fn new(width: f64, center: f64) -> Result<Self> {
        if !width.is_finite() || !center.is_finite() {
            return Err(Error::arg("window width and center must be finite"));
        }
        if width <= 0.0 {
            return Err(Error::arg(format!("window width must be > 0, got {width}")));
        }
        Ok(WindowSpec { width, center })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    /// Map one intensity into `[0, 1]`.
    pub fn apply(&self, x: f64) -> f64 {
        let low = self.center - self.width / 2.0;
        ((x - low) / self.width).clamp(0.0, 1.0)
    }
}

impl std::str::FromStr for WindowSpec {
    type Err = Error;

    /// `"WW:WC"`, e.g. `"200:300"`.
    fn from_str(s: &str) -> Result<Self> {
        let (w, c) = s
            .split_once(':')
            .ok_or_else(|| Error::arg(format!("window must be WW:WC, got {s:?}")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::arg(format!("bad window number {t:?}")))
        };
        WindowSpec::new(parse(w)?, parse(c)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    /// For intensity images.
    Trilinear,
    /// Required for label maps.
    Nearest,
}

fn round_half_up(x: f64) -> f64 {
    // The small bias keeps exact halves from falling to the lower side
    // after floating point error.
    (x + 0.5 + 1e-9).floor()
}

/// `max(1, round_half_up(dim * spacing / target))` per axis.
pub fn output_dims(geometry: &Geometry, target: [f64; 3]) -> [usize; 3] {
    let mut out = [1usize; 3];
    for a in 0..3 {
        let n = round_half_up(geometry.dims[a] as f64 * geometry.spacing[a] / target[a]);
        out[a] = (n as usize).max(1);
    }
    out
}

fn check_target(target: [f64; 3]) -> Result<()> {
    if target.iter().all(|t| t.is_finite() && *t > 0.0) {
        Ok(())
    } else {
        Err(Error::arg(format!("target spacing must be positive, got {target:?}")))
    }
}

/// Output geometry: same origin and orientation, new dims and spacing.
pub fn resampled_geometry(geometry: &Geometry, target: [f64; 3]) -> Result<Geometry> {
    check_target(target)?;
    Geometry::with_orientation(
        output_dims(geometry, target),
        target,
        geometry.origin,
        geometry.orientation,
    )
}

/// Per-axis interpolation stencil: lower index, upper index, upper weight.
fn stencil(n_in: usize, in_spacing: f64, n_out: usize, out_spacing: f64) -> Vec<(usize, usize, f64)> {
    let last = (n_in - 1) as f64;
    (0..n_out)
        .map(|o| {
            let c = (o as f64 * out_spacing / in_spacing).clamp(0.0, last);
            let lo = c.floor();
            let i0 = lo as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, c - lo)
        })
        .collect()
}

fn nearest_index(n_in: usize, in_spacing: f64, n_out: usize, out_spacing: f64) -> Vec<usize> {
    let last = (n_in - 1) as f64;
    (0..n_out)
        .map(|o| {
            let c = (o as f64 * out_spacing / in_spacing).clamp(0.0, last);
            round_half_up(c).min(last) as usize
        })
        .collect()
}

fn resample_nearest<T: Copy + Send + Sync>(src: &Geometry, data: &[T], dst: &Geometry) -> Vec<T> {
    let idx: Vec<Vec<usize>> = (0..3)
        .map(|a| nearest_index(src.dims[a], src.spacing[a], dst.dims[a], dst.spacing[a]))
        .collect();
    let [nx, ny, _] = dst.dims;
    let mut out = vec![data[0]; dst.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slice)| {
        let sk = idx[2][k];
        for j in 0..ny {
            let sj = idx[1][j];
            for i in 0..nx {
                slice[i + nx * j] = data[src.linear(idx[0][i], sj, sk)];
            }
        }
    });
    out
}

fn resample_trilinear(src: &Geometry, data: &[f32], dst: &Geometry) -> Vec<f32> {
    let st: Vec<Vec<(usize, usize, f64)>> = (0..3)
        .map(|a| stencil(src.dims[a], src.spacing[a], dst.dims[a], dst.spacing[a]))
        .collect();
    let [nx, ny, _] = dst.dims;
    let at = |i: usize, j: usize, k: usize| data[src.linear(i, j, k)] as f64;
    let mut out = vec![0f32; dst.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slice)| {
        let (z0, z1, fz) = st[2][k];
        for j in 0..ny {
            let (y0, y1, fy) = st[1][j];
            for i in 0..nx {
                let (x0, x1, fx) = st[0][i];
                let c00 = at(x0, y0, z0) * (1.0 - fx) + at(x1, y0, z0) * fx;
                let c10 = at(x0, y1, z0) * (1.0 - fx) + at(x1, y1, z0) * fx;
                let c01 = at(x0, y0, z1) * (1.0 - fx) + at(x1, y0, z1) * fx;
                let c11 = at(x0, y1, z1) * (1.0 - fx) + at(x1, y1, z1) * fx;
                let c0 = c00 * (1.0 - fy) + c10 * fy;
                let c1 = c01 * (1.0 - fy) + c11 * fy;
                slice[i + nx * j] = (c0 * (1.0 - fz) + c1 * fz) as f32;
            }
        }
    });
    out
}

/// Resampling onto a new voxel spacing, origin preserved. Output voxel `o`
/// samples input continuous coordinate `o * target / spacing`, clamped to the
/// grid edge.
pub trait Resample: Sized {
    fn resample(&self, target: [f64; 3], mode: ResampleMode) -> Result<Self>;
}

impl Resample for Volume {
    fn resample(&self, target: [f64; 3], mode: ResampleMode) -> Result<Self> {
        let dst = resampled_geometry(self.geometry(), target)?;
        let data = match mode {
            ResampleMode::Trilinear => resample_trilinear(self.geometry(), self.data(), &dst),
            ResampleMode::Nearest => resample_nearest(self.geometry(), self.data(), &dst),
        };
        Volume::new(dst, data)
    }
}

impl Resample for LabelMap {
    fn resample(&self, target: [f64; 3], mode: ResampleMode) -> Result<Self> {
        if mode != ResampleMode::Nearest {
            return Err(Error::arg("label maps can only be resampled with nearest-neighbour"));
        }
        let dst = resampled_geometry(self.geometry(), target)?;
        let data = resample_nearest(self.geometry(), self.data(), &dst);
        LabelMap::new(dst, data, self.scheme().clone())
    }
}

/// Result of [`zscore`].
#[derive(Debug, Clone)]
pub struct ZScored {
    pub volume: Volume,
    pub mean: f64,
    /// Population standard deviation over the normalization region.
    pub std: f64,
    /// Set when `std < DEGENERATE_STD`; the output is then all zeros.
    pub degenerate: bool,
}

/// Mean and population standard deviation, summed in a fixed order.
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}

/// `(v - mean) / std` over the whole volume, with statistics taken from the
/// masked voxels (or all voxels when no mask is given).
pub fn zscore(v: &Volume, mask: Option<&Mask>) -> Result<ZScored> {
    let data = v.data();
    let (mean, std, n) = match mask {
        Some(m) => {
            if m.geometry().dims != v.geometry().dims {
                return Err(Error::arg("z-score mask does not match volume dims"));
            }
            let sel = data
                .iter()
                .zip(m.data())
                .filter(|(_, &b)| b)
                .map(|(&x, _)| x as f64);
            let stats = mean_std(sel);
            if stats.2 < 2 {
                return Err(Error::arg(format!(
                    "z-score mask selects {} voxels, need at least 2",
                    stats.2
                )));
            }
            stats
        }
        None => mean_std(data.iter().map(|&x| x as f64)),
    };
    debug_assert!(n >= 1);
    let degenerate = std < DEGENERATE_STD;
    let out: Vec<f32> = if degenerate {
        vec![0.0; data.len()]
    } else {
        data.iter().map(|&x| ((x as f64 - mean) / std) as f32).collect()
    };
    Ok(ZScored {
        volume: v.with_data(out)?,
        mean,
        std,
        degenerate,
    })
}

/// `clamp((x - (WC - WW/2)) / WW, 0, 1)` voxelwise.
pub fn window(v: &Volume, spec: &WindowSpec) -> Volume {
    let out = v.data().iter().map(|&x| spec.apply(x as f64) as f32).collect();
    v.with_data(out).expect("windowing preserves geometry")
}
