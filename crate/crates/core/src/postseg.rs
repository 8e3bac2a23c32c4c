//! Post-processing of predicted label maps: 3D connected components and
//! small-component removal.
//!
//! Components are computed per label value; voxels of different labels never
//! join. Component ids start at 1 and follow the linear scan order (x fastest)
//! of each component's first voxel, independent of any parallelism.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{Geometry, Grid, LabelMap, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Faces, edges and corners.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn count(self) -> u8 {
        match self {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }

    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::arg(format!("connectivity must be 6 or 26, got {n}"))),
        }
    }
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::arg(format!("connectivity must be 6 or 26, got {s:?}")))?;
        Connectivity::try_from(n)
    }
}

impl Serialize for Connectivity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.count())
    }
}

impl<'de> Deserialize<'de> for Connectivity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let n = u8::deserialize(d)?;
        Connectivity::try_from(n).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: u32,
    pub label: u16,
    pub voxels: usize,
    /// Inclusive voxel bounding box.
    pub bbox_min: [usize; 3],
    pub bbox_max: [usize; 3],
    /// Mean voxel index.
    pub centroid: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTable {
    pub connectivity: Connectivity,
    pub components: Vec<Component>,
}

impl ComponentTable {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn of_label(&self, label: u16) -> impl Iterator<Item = &Component> {
        self.components.iter().filter(move |c| c.label == label)
    }

    /// Largest component of a label; ties go to the smaller id.
    pub fn largest_of(&self, label: u16) -> Option<&Component> {
        self.of_label(label)
            .fold(None, |best: Option<&Component>, c| match best {
                Some(b) if b.voxels >= c.voxels => Some(b),
                _ => Some(c),
            })
    }
}

/// Component table plus a per-voxel component id map (0 = background).
#[derive(Debug, Clone)]
pub struct Components {
    pub table: ComponentTable,
    pub ids: Vec<u32>,
}

fn label_grid(geometry: &Geometry, labels: &[u16], connectivity: Connectivity) -> Components {
    let dims = geometry.dims;
    let offsets = connectivity.offsets();
    let mut ids = vec![0u32; labels.len()];
    let mut components = Vec::new();
    let mut stack = Vec::new();

    for seed in 0..labels.len() {
        let label = labels[seed];
        if label == 0 || ids[seed] != 0 {
            continue;
        }
        let id = components.len() as u32 + 1;
        ids[seed] = id;
        stack.push(seed);
        let mut count = 0usize;
        let mut sum = [0f64; 3];
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        while let Some(cur) = stack.pop() {
            let c = geometry.coords(cur);
            count += 1;
            for a in 0..3 {
                sum[a] += c[a] as f64;
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            for off in &offsets {
                let n = [
                    c[0] as isize + off[0],
                    c[1] as isize + off[1],
                    c[2] as isize + off[2],
                ];
                if (0..3).any(|a| n[a] < 0 || n[a] >= dims[a] as isize) {
                    continue;
                }
                let lin = geometry.linear(n[0] as usize, n[1] as usize, n[2] as usize);
                if labels[lin] == label && ids[lin] == 0 {
                    ids[lin] = id;
                    stack.push(lin);
                }
            }
        }
        components.push(Component {
            id,
            label,
            voxels: count,
            bbox_min: lo,
            bbox_max: hi,
            centroid: sum.map(|s| s / count as f64),
        });
    }
    Components {
        table: ComponentTable {
            connectivity,
            components,
        },
        ids,
    }
}

/// Connected components of every label in a label map.
pub fn cc_label(lm: &LabelMap, connectivity: Connectivity) -> Components {
    label_grid(lm.geometry(), lm.data(), connectivity)
}

/// Connected components of a binary mask; all components carry label 1.
pub fn cc_label_mask(mask: &Mask, connectivity: Connectivity) -> Components {
    let labels: Vec<u16> = mask.data().iter().map(|&b| b as u16).collect();
    label_grid(mask.geometry(), &labels, connectivity)
}

/// Set every component with fewer than `min_voxels` voxels to background.
pub fn filter_small(lm: &LabelMap, min_voxels: usize, connectivity: Connectivity) -> LabelMap {
    filter_small_with_report(lm, min_voxels, connectivity).0
}

/// [`filter_small`] that also returns the components found before filtering.
pub fn filter_small_with_report(
    lm: &LabelMap,
    min_voxels: usize,
    connectivity: Connectivity,
) -> (LabelMap, ComponentTable) {
    let comps = cc_label(lm, connectivity);
    let keep: Vec<bool> = std::iter::once(false)
        .chain(comps.table.components.iter().map(|c| c.voxels >= min_voxels))
        .collect();
    let data = lm
        .data()
        .iter()
        .zip(&comps.ids)
        .map(|(&l, &id)| if keep[id as usize] { l } else { 0 })
        .collect();
    let out = lm.with_data(data).expect("filtering only removes labels");
    (out, comps.table)
}

/// Mask of the largest component of `label`. Empty when the label is absent.
pub fn largest_component(lm: &LabelMap, label: u16, connectivity: Connectivity) -> Mask {
    let mask = lm.mask_of(label);
    let comps = cc_label_mask(&mask, connectivity);
    match comps.table.largest_of(1) {
        Some(best) => {
            let id = best.id;
            Mask::new(*lm.geometry(), comps.ids.iter().map(|&c| c == id).collect())
                .expect("same geometry")
        }
        None => Mask::empty(*lm.geometry()),
    }
}
