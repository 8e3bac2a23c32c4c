//! Volumetric data model: grids, physical geometry, anatomical orientation and
//! label schemes.
//!
//! Voxel data is stored in a single linear buffer with x varying fastest and
//! z slowest: `linear = i + nx * (j + ny * k)`. World coordinates are in
//! millimetres in a Right/Anterior/Superior frame; `origin` is the world
//! position of voxel `(0, 0, 0)`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One letter of an anatomical axis code.
///
/// Each names the direction an array axis *points toward* as its index grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AxisCode {
    R,
    L,
    A,
    P,
    S,
    I,
}

impl AxisCode {
    /// World axis this code runs along (0 = left/right, 1 = post/ant, 2 = inf/sup).
    pub fn world_axis(self) -> usize {
        match self {
            AxisCode::R | AxisCode::L => 0,
            AxisCode::A | AxisCode::P => 1,
            AxisCode::S | AxisCode::I => 2,
        }
    }

    /// +1 when the code points along the positive RAS direction.
    pub fn sign(self) -> f64 {
        match self {
            AxisCode::R | AxisCode::A | AxisCode::S => 1.0,
            _ => -1.0,
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        Some(match c.to_ascii_uppercase() {
            'R' => AxisCode::R,
            'L' => AxisCode::L,
            'A' => AxisCode::A,
            'P' => AxisCode::P,
            'S' => AxisCode::S,
            'I' => AxisCode::I,
            _ => return None,
        })
    }

    pub fn as_char(self) -> char {
        match self {
            AxisCode::R => 'R',
            AxisCode::L => 'L',
            AxisCode::A => 'A',
            AxisCode::P => 'P',
            AxisCode::S => 'S',
            AxisCode::I => 'I',
        }
    }

    /// Code for a world axis and direction sign.
    pub fn from_axis_sign(axis: usize, positive: bool) -> Self {
        match (axis, positive) {
            (0, true) => AxisCode::R,
            (0, false) => AxisCode::L,
            (1, true) => AxisCode::A,
            (1, false) => AxisCode::P,
            (_, true) => AxisCode::S,
            (_, false) => AxisCode::I,
        }
    }
}

/// Axis-code triple describing how the three array axes map onto anatomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Orientation(pub [AxisCode; 3]);

impl Orientation {
    pub const CANONICAL: Orientation = Orientation([AxisCode::R, AxisCode::A, AxisCode::S]);

    pub fn new(codes: [AxisCode; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for c in codes {
            let a = c.world_axis();
            if seen[a] {
                return Err(Error::Orientation(format!(
                    "axis codes {} are not a signed permutation",
                    Orientation(codes)
                )));
            }
            seen[a] = true;
        }
        Ok(Orientation(codes))
    }

    pub fn is_canonical(&self) -> bool {
        *self == Self::CANONICAL
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 3 {
            return Err(Error::Orientation(format!("expected three axis codes, got {s:?}")));
        }
        let mut codes = [AxisCode::R; 3];
        for (slot, c) in codes.iter_mut().zip(&chars) {
            *slot = AxisCode::from_char(*c)
                .ok_or_else(|| Error::Orientation(format!("unknown axis code {c:?} in {s:?}")))?;
        }
        Orientation::new(codes)
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.0 {
            write!(f, "{}", c.as_char())?;
        }
        Ok(())
    }
}

/// Shape and physical placement of a voxel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    /// Millimetres per voxel along each array axis.
    pub spacing: [f64; 3],
    /// World position (mm, RAS) of voxel `(0, 0, 0)`.
    pub origin: [f64; 3],
    pub orientation: Orientation,
}

impl Geometry {
    /// Canonically oriented geometry.
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        Self::with_orientation(dims, spacing, origin, Orientation::CANONICAL)
    }

    pub fn with_orientation(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        orientation: Orientation,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::arg(format!("all dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::arg(format!("spacing must be positive and finite, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::arg(format!("origin must be finite, got {origin:?}")));
        }
        dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(dims[2]))
            .ok_or_else(|| Error::arg(format!("grid {dims:?} is too large")))?;
        Ok(Geometry {
            dims,
            spacing,
            origin,
            orientation,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, linear: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [linear % nx, (linear / nx) % ny, linear / (nx * ny)]
    }

    pub fn contains(&self, index: [usize; 3]) -> bool {
        index.iter().zip(&self.dims).all(|(i, d)| i < d)
    }

    /// Physical extent per axis (`dim * spacing`).
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    /// Same dims, spacing and orientation (origin may differ).
    pub fn same_grid(&self, other: &Geometry) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.orientation == other.orientation
    }

    pub fn voxel_to_world(&self, index: [usize; 3]) -> Result<[f64; 3]> {
        if !self.contains(index) {
            return Err(Error::Bounds {
                index,
                dims: self.dims,
            });
        }
        let mut world = self.origin;
        for (a, code) in self.orientation.0.iter().enumerate() {
            world[code.world_axis()] += code.sign() * index[a] as f64 * self.spacing[a];
        }
        Ok(world)
    }

    /// Continuous voxel coordinates of a world point. Never fails; the result
    /// may lie outside the grid.
    pub fn world_to_voxel(&self, point: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (a, code) in self.orientation.0.iter().enumerate() {
            let w = code.world_axis();
            out[a] = code.sign() * (point[w] - self.origin[w]) / self.spacing[a];
        }
        out
    }
}

/// Anything living on a voxel grid.
pub trait Grid {
    fn geometry(&self) -> &Geometry;

    fn voxel_to_world(&self, index: [usize; 3]) -> Result<[f64; 3]> {
        self.geometry().voxel_to_world(index)
    }

    fn world_to_voxel(&self, point: [f64; 3]) -> [f64; 3] {
        self.geometry().world_to_voxel(point)
    }
}

/// Scalar intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::arg(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite intensity at voxel {pos}")));
        }
        Ok(Volume { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Result<Self> {
        Volume::new(geometry, vec![value; geometry.len()])
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, index: [usize; 3]) -> Option<f32> {
        self.geometry
            .contains(index)
            .then(|| self.data[self.geometry.linear(index[0], index[1], index[2])])
    }

    /// Same geometry, new intensities.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Volume::new(self.geometry, data)
    }

    /// Reorient using the volume's own recorded orientation.
    pub fn to_canonical(&self) -> Volume {
        reorient_to_canonical(self, self.geometry.orientation)
    }
}

impl Grid for Volume {
    fn geometry(&self) -> &Geometry {
        &self.geometry
    }
}

/// Integer label grid bound to a [`LabelScheme`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    geometry: Geometry,
    data: Vec<u16>,
    scheme: Arc<LabelScheme>,
}

impl LabelMap {
    pub fn new(geometry: Geometry, data: Vec<u16>, scheme: Arc<LabelScheme>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::arg(format!(
                "label data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        let mut checked = [false; 1 << 16];
        for &l in &data {
            if !checked[l as usize] {
                if l != 0 && scheme.structure(l).is_none() {
                    return Err(Error::UnknownLabel { label: l });
                }
                checked[l as usize] = true;
            }
        }
        Ok(LabelMap {
            geometry,
            data,
            scheme,
        })
    }

    pub fn empty(geometry: Geometry, scheme: Arc<LabelScheme>) -> Self {
        LabelMap {
            data: vec![0; geometry.len()],
            geometry,
            scheme,
        }
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }

    pub fn scheme(&self) -> &Arc<LabelScheme> {
        &self.scheme
    }

    pub fn get(&self, index: [usize; 3]) -> Option<u16> {
        self.geometry
            .contains(index)
            .then(|| self.data[self.geometry.linear(index[0], index[1], index[2])])
    }

    pub fn with_data(&self, data: Vec<u16>) -> Result<Self> {
        LabelMap::new(self.geometry, data, Arc::clone(&self.scheme))
    }

    /// Distinct non-background labels present, ascending.
    pub fn labels_present(&self) -> BTreeSet<u16> {
        let mut seen = vec![false; 1 << 16];
        for &l in &self.data {
            seen[l as usize] = true;
        }
        (1..=u16::MAX).filter(|&l| seen[l as usize]).collect()
    }

    pub fn mask_of(&self, label: u16) -> Mask {
        Mask {
            geometry: self.geometry,
            data: self.data.iter().map(|&l| l == label).collect(),
        }
    }

    /// All non-zero voxels.
    pub fn foreground(&self) -> Mask {
        Mask {
            geometry: self.geometry,
            data: self.data.iter().map(|&l| l != 0).collect(),
        }
    }

    pub fn to_canonical(&self) -> LabelMap {
        reorient_labels_to_canonical(self, self.geometry.orientation)
    }

    /// Replace geometry, keeping voxel data. Dims must agree.
    pub fn with_geometry(&self, geometry: Geometry) -> Result<Self> {
        if geometry.dims != self.geometry.dims {
            return Err(Error::arg("geometry dims differ from label data"));
        }
        Ok(LabelMap {
            geometry,
            data: self.data.clone(),
            scheme: Arc::clone(&self.scheme),
        })
    }
}

impl Grid for LabelMap {
    fn geometry(&self) -> &Geometry {
        &self.geometry
    }
}

/// Boolean voxel set on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    geometry: Geometry,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(geometry: Geometry, data: Vec<bool>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::arg("mask length does not match geometry"));
        }
        Ok(Mask { geometry, data })
    }

    pub fn empty(geometry: Geometry) -> Self {
        Mask {
            data: vec![false; geometry.len()],
            geometry,
        }
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.geometry.dims != other.geometry.dims {
            return Err(Error::arg("mask dims differ"));
        }
        Ok(Mask {
            geometry: self.geometry,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        })
    }
}

impl Grid for Mask {
    fn geometry(&self) -> &Geometry {
        &self.geometry
    }
}

/// Spinal region of a vertebra. `Dorsal` is the thoracic spine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpineRegion {
    Cervical,
    Dorsal,
    Lumbar,
    Sacral,
}

impl SpineRegion {
    pub fn prefix(self) -> char {
        match self {
            SpineRegion::Cervical => 'C',
            SpineRegion::Dorsal => 'D',
            SpineRegion::Lumbar => 'L',
            SpineRegion::Sacral => 'S',
        }
    }

    pub fn count(self) -> u8 {
        match self {
            SpineRegion::Cervical => 7,
            SpineRegion::Dorsal => 12,
            SpineRegion::Lumbar => 5,
            SpineRegion::Sacral => 1,
        }
    }

    /// Row heading used in evaluation tables.
    pub fn display_name(self) -> &'static str {
        match self {
            SpineRegion::Cervical => "Cervical Spine",
            SpineRegion::Dorsal => "Dorsal Spine",
            SpineRegion::Lumbar => "Lumbar Spine",
            SpineRegion::Sacral => "Sacral Spine",
        }
    }
}

/// A named vertebra, C1 through S1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vertebra {
    region: SpineRegion,
    number: u8,
}

impl Vertebra {
    pub fn new(region: SpineRegion, number: u8) -> Result<Self> {
        if number == 0 || number > region.count() {
            return Err(Error::arg(format!(
                "{}{number} is not a vertebra",
                region.prefix()
            )));
        }
        Ok(Vertebra { region, number })
    }

    pub fn region(&self) -> SpineRegion {
        self.region
    }

    pub fn number(&self) -> u8 {
        self.number
    }

    /// Position in the superior-to-inferior ordering (C1 = 0 ... S1 = 24).
    pub fn ordinal(&self) -> u8 {
        let before: u8 = match self.region {
            SpineRegion::Cervical => 0,
            SpineRegion::Dorsal => 7,
            SpineRegion::Lumbar => 19,
            SpineRegion::Sacral => 24,
        };
        before + self.number - 1
    }

    pub fn from_ordinal(ord: u8) -> Option<Self> {
        let (region, base) = match ord {
            0..=6 => (SpineRegion::Cervical, 0),
            7..=18 => (SpineRegion::Dorsal, 7),
            19..=23 => (SpineRegion::Lumbar, 19),
            24 => (SpineRegion::Sacral, 24),
            _ => return None,
        };
        Some(Vertebra {
            region,
            number: ord - base + 1,
        })
    }

    /// Every vertebra from C1 to S1 in anatomical order.
    pub fn all() -> impl Iterator<Item = Vertebra> {
        (0..25).filter_map(Vertebra::from_ordinal)
    }

    /// The `n` vertebrae starting at `self`, going inferiorly.
    pub fn run(self, n: usize) -> Result<Vec<Vertebra>> {
        (0..n)
            .map(|d| {
                u8::try_from(self.ordinal() as usize + d)
                    .ok()
                    .and_then(Vertebra::from_ordinal)
                    .ok_or_else(|| Error::arg(format!("{n} vertebrae starting at {self} run past S1")))
            })
            .collect()
    }
}

impl PartialOrd for Vertebra {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Superior before inferior.
impl Ord for Vertebra {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ordinal().cmp(&other.ordinal())
    }
}

impl fmt::Display for Vertebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.region.prefix(), self.number)
    }
}

impl FromStr for Vertebra {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        let region = match chars.next().map(|c| c.to_ascii_uppercase()) {
            Some('C') => SpineRegion::Cervical,
            Some('D') | Some('T') => SpineRegion::Dorsal,
            Some('L') => SpineRegion::Lumbar,
            Some('S') => SpineRegion::Sacral,
            _ => return Err(Error::arg(format!("unknown vertebra name {s:?}"))),
        };
        let number: u8 = chars
            .as_str()
            .parse()
            .map_err(|_| Error::arg(format!("unknown vertebra name {s:?}")))?;
        Vertebra::new(region, number)
    }
}

/// A labelled spinal structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    Vertebra(Vertebra),
    Canal,
}

impl Structure {
    pub fn vertebra(&self) -> Option<Vertebra> {
        match self {
            Structure::Vertebra(v) => Some(*v),
            Structure::Canal => None,
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Structure::Vertebra(v) => v.fmt(f),
            Structure::Canal => f.write_str("CANAL"),
        }
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("canal") {
            Ok(Structure::Canal)
        } else {
            s.parse().map(Structure::Vertebra)
        }
    }
}

impl Serialize for Structure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Structure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for Vertebra {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Vertebra {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeEntry {
    pub id: u16,
    pub name: Structure,
}

/// Mapping between label ids and spinal structures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelScheme {
    entries: Vec<SchemeEntry>,
    /// Vertebra entries sorted superior to inferior.
    vertebrae: Vec<SchemeEntry>,
}

impl LabelScheme {
    pub fn new(entries: Vec<SchemeEntry>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for e in &entries {
            if e.id == 0 {
                return Err(Error::arg("label id 0 is reserved for background"));
            }
            if !ids.insert(e.id) {
                return Err(Error::arg(format!("duplicate label id {}", e.id)));
            }
            if !names.insert(e.name.to_string()) {
                return Err(Error::arg(format!("structure {} listed twice", e.name)));
            }
        }
        let mut vertebrae: Vec<SchemeEntry> = entries
            .iter()
            .filter(|e| matches!(e.name, Structure::Vertebra(_)))
            .copied()
            .collect();
        vertebrae.sort_by_key(|e| e.name.vertebra().map(|v| v.ordinal()));
        Ok(LabelScheme { entries, vertebrae })
    }

    /// C1..C7 = 1..7, D1..D12 = 8..19, L1..L5 = 20..24, S1 = 25, canal = 26.
    pub fn standard() -> Self {
        let mut entries: Vec<SchemeEntry> = Vertebra::all()
            .map(|v| SchemeEntry {
                id: v.ordinal() as u16 + 1,
                name: Structure::Vertebra(v),
            })
            .collect();
        entries.push(SchemeEntry {
            id: 26,
            name: Structure::Canal,
        });
        LabelScheme::new(entries).expect("standard scheme is valid")
    }

    pub fn shared_standard() -> Arc<LabelScheme> {
        Arc::new(Self::standard())
    }

    pub fn entries(&self) -> &[SchemeEntry] {
        &self.entries
    }

    /// Vertebra entries in superior-to-inferior order.
    pub fn vertebrae(&self) -> &[SchemeEntry] {
        &self.vertebrae
    }

    pub fn structure(&self, id: u16) -> Option<Structure> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.name)
    }

    pub fn id_of(&self, name: Structure) -> Option<u16> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    pub fn canal_id(&self) -> Option<u16> {
        self.id_of(Structure::Canal)
    }

    pub fn max_id(&self) -> u16 {
        self.entries.iter().map(|e| e.id).max().unwrap_or(0)
    }
}

impl Serialize for LabelScheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.entries.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelScheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<SchemeEntry>::deserialize(d)?;
        LabelScheme::new(entries).map_err(serde::de::Error::custom)
    }
}

/// Per-output-axis source axis and flip needed to bring `source` to RAS.
fn canonical_mapping(source: Orientation) -> ([usize; 3], [bool; 3]) {
    let mut perm = [0usize; 3];
    let mut flip = [false; 3];
    for (a, code) in source.0.iter().enumerate() {
        let out = code.world_axis();
        perm[out] = a;
        flip[out] = code.sign() < 0.0;
    }
    (perm, flip)
}

fn reorient_buffer<T: Copy>(geometry: &Geometry, data: &[T], source: Orientation) -> (Geometry, Vec<T>) {
    let (perm, flip) = canonical_mapping(source);
    let src_dims = geometry.dims;
    let dims = [src_dims[perm[0]], src_dims[perm[1]], src_dims[perm[2]]];
    let spacing = [
        geometry.spacing[perm[0]],
        geometry.spacing[perm[1]],
        geometry.spacing[perm[2]],
    ];
    let mut origin = geometry.origin;
    for out in 0..3 {
        if flip[out] {
            origin[out] -= (dims[out] - 1) as f64 * spacing[out];
        }
    }
    let out_geom = Geometry {
        dims,
        spacing,
        origin,
        orientation: Orientation::CANONICAL,
    };
    if source.is_canonical() {
        return (out_geom, data.to_vec());
    }
    let mut out = Vec::with_capacity(data.len());
    let mut src = [0usize; 3];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                for (axis, o) in [i, j, k].into_iter().enumerate() {
                    src[perm[axis]] = if flip[axis] { dims[axis] - 1 - o } else { o };
                }
                out.push(data[geometry.linear(src[0], src[1], src[2])]);
            }
        }
    }
    (out_geom, out)
}

/// Permute and flip voxel data stored in `source` orientation into RAS.
///
/// The volume's recorded orientation is ignored; `source` is authoritative.
pub fn reorient_to_canonical(v: &Volume, source: Orientation) -> Volume {
    let (geometry, data) = reorient_buffer(&v.geometry, &v.data, source);
    Volume { geometry, data }
}

pub fn reorient_labels_to_canonical(lm: &LabelMap, source: Orientation) -> LabelMap {
    let (geometry, data) = reorient_buffer(&lm.geometry, &lm.data, source);
    LabelMap {
        geometry,
        data,
        scheme: Arc::clone(&lm.scheme),
    }
}
