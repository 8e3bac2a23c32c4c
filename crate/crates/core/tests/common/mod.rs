//! Shared fixtures and strategies for the integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use spinemorph::volgrid::AxisCode;
use spinemorph::{Geometry, LabelMap, LabelScheme, Orientation, Structure};

/// All 48 signed axis permutations.
pub fn all_orientations() -> Vec<Orientation> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::new();
    for p in perms {
        for signs in 0..8u8 {
            let codes = [0, 1, 2].map(|a| AxisCode::from_axis_sign(p[a], signs & (1 << a) != 0));
            out.push(Orientation::new(codes).unwrap());
        }
    }
    out
}

pub fn orientation() -> impl Strategy<Value = Orientation> {
    prop::sample::select(all_orientations())
}

pub fn geometry(max_dim: usize) -> impl Strategy<Value = Geometry> {
    (
        prop::array::uniform3(1..=max_dim),
        prop::array::uniform3(0.25f64..3.0),
        prop::array::uniform3(-50.0f64..50.0),
        orientation(),
    )
        .prop_map(|(d, s, o, or)| Geometry::with_orientation(d, s, o, or).unwrap())
}

/// Label map with labels drawn from `labels` (0 included as background).
pub fn label_map(max_dim: usize, labels: Vec<u16>) -> impl Strategy<Value = LabelMap> {
    geometry(max_dim).prop_flat_map(move |g| {
        let choices = labels.clone();
        prop::collection::vec(prop::sample::select(choices), g.len()).prop_map(move |data| {
            LabelMap::new(g, data, LabelScheme::shared_standard()).unwrap()
        })
    })
}

pub fn id(name: &str) -> u16 {
    let s: Structure = name.parse().unwrap();
    LabelScheme::standard().id_of(s).unwrap()
}

/// Boxes spanning the full x/y footprint stacked along z from the top;
/// `layout` is (label, thickness) read top down, label 0 is a gap.
pub fn stack(nxy: usize, spacing: [f64; 3], origin: [f64; 3], layout: &[(u16, usize)]) -> LabelMap {
    let nz: usize = layout.iter().map(|(_, t)| t).sum();
    let g = Geometry::new([nxy, nxy, nz], spacing, origin).unwrap();
    let mut data = vec![0u16; g.len()];
    let mut top = nz;
    for &(label, t) in layout {
        for k in top - t..top {
            for c in 0..nxy * nxy {
                data[k * nxy * nxy + c] = label;
            }
        }
        top -= t;
    }
    LabelMap::new(g, data, LabelScheme::shared_standard()).unwrap()
}
