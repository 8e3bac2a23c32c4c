//! Reader and writer for single-file, uncompressed, little-endian NIfTI-1.
//!
//! Supported subset:
//!
//! * `sizeof_hdr = 348`, magic `"n+1\0"`, `vox_offset >= 352`
//! * `dim[0] = 3`, datatypes 2 (u8), 4 (i16) and 16 (f32)
//! * `scl_slope`/`scl_inter` applied on read; a slope of 0 (or non-finite)
//!   is treated as 1
//! * origin and axis directions from the sform when `sform_code > 0`,
//!   otherwise origin `(0, 0, 0)` and RAS axes; the qform is ignored
//! * the sform must be axis aligned, oblique affines are rejected
//!
//! Everything read is reoriented to canonical RAS. Writes always produce the
//! same canonical header layout, so `write(read(write(v)))` is byte-stable.

use std::path::Path;
use std::sync::Arc;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::volgrid::{AxisCode, Geometry, Grid, LabelMap, LabelScheme, Orientation, Volume};

pub const HEADER_SIZE: usize = 348;
/// Header plus the four extension-flag bytes.
pub const DEFAULT_VOX_OFFSET: usize = 352;
pub const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
pub const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, thiserror::Error)]
pub enum NiftiError {
    #[error("gzip-compressed NIfTI is not supported")]
    Compressed,
    #[error("two-file NIfTI (.hdr/.img, magic \"ni1\") is not supported")]
    TwoFileForm,
    #[error("bad magic {0:?}, expected \"n+1\"")]
    BadMagic([u8; 4]),
    #[error("big-endian NIfTI headers are not supported")]
    BigEndian,
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated file: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("oblique or degenerate sform affine is not supported")]
    Oblique,
    #[error("non-finite value in payload at voxel {0}")]
    NonFinite(usize),
    #[error("voxel value {value} is not a valid label")]
    InvalidLabel { value: f64 },
    #[error("label {label} does not fit datatype {datatype:?}")]
    LabelOverflow { label: u16, datatype: Datatype },
    #[error("label maps need an integer datatype, got {0:?}")]
    LabelDatatype(Datatype),
    #[error("value {value} cannot be stored losslessly as {datatype:?} (enable quantization)")]
    Lossy { value: f32, datatype: Datatype },
}

/// Supported on-disk voxel types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    F32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::F32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Datatype::U8),
            4 => Some(Datatype::I16),
            16 => Some(Datatype::F32),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::F32 => 4,
        }
    }

    fn range(self) -> (f64, f64) {
        match self {
            Datatype::U8 => (0.0, 255.0),
            Datatype::I16 => (-32768.0, 32767.0),
            Datatype::F32 => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

impl std::str::FromStr for Datatype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "u8" | "uint8" | "2" => Ok(Datatype::U8),
            "i16" | "int16" | "4" => Ok(Datatype::I16),
            "f32" | "float32" | "16" => Ok(Datatype::F32),
            _ => Err(Error::arg(format!("unknown datatype {s:?} (u8, i16, f32)"))),
        }
    }
}

/// The header fields this codec reads and writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dims: [usize; 3],
    pub datatype: Datatype,
    pub pixdim: [f32; 3],
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub sform_code: i16,
    pub srow: [[f32; 4]; 3],
}

impl NiftiHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, NiftiError> {
        if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
            return Err(NiftiError::Compressed);
        }
        if bytes.len() < HEADER_SIZE {
            return Err(NiftiError::Truncated {
                expected: HEADER_SIZE,
                actual: bytes.len(),
            });
        }
        let sizeof_hdr = LittleEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]);
        if sizeof_hdr != HEADER_SIZE as i32 {
            if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
                return Err(NiftiError::BigEndian);
            }
            return Err(NiftiError::BadHeader(format!("sizeof_hdr = {sizeof_hdr}")));
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[offsets::MAGIC..offsets::MAGIC + 4]);
        if &magic == MAGIC_PAIR {
            return Err(NiftiError::TwoFileForm);
        }
        if &magic != MAGIC_SINGLE {
            return Err(NiftiError::BadMagic(magic));
        }

        let mut dim = [0i16; 8];
        LittleEndian::read_i16_into(&bytes[offsets::DIM..offsets::DIM + 16], &mut dim);
        if dim[0] != 3 {
            return Err(NiftiError::BadHeader(format!("dim[0] = {}, expected 3", dim[0])));
        }
        if dim[1..4].iter().any(|&d| d < 1) {
            return Err(NiftiError::BadHeader(format!("non-positive dims {:?}", &dim[1..4])));
        }
        let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

        let code = LittleEndian::read_i16(&bytes[offsets::DATATYPE..]);
        let datatype = Datatype::from_code(code).ok_or(NiftiError::UnsupportedDatatype(code))?;
        let bitpix = LittleEndian::read_i16(&bytes[offsets::BITPIX..]);
        if bitpix as usize != datatype.bytes() * 8 {
            return Err(NiftiError::BadHeader(format!(
                "bitpix {bitpix} does not match datatype {code}"
            )));
        }

        let mut pix = [0f32; 8];
        LittleEndian::read_f32_into(&bytes[offsets::PIXDIM..offsets::PIXDIM + 32], &mut pix);
        let pixdim = [pix[1], pix[2], pix[3]];
        if pixdim.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(NiftiError::BadHeader(format!("non-positive pixdim {pixdim:?}")));
        }

        let vox = LittleEndian::read_f32(&bytes[offsets::VOX_OFFSET..]);
        if !(vox.is_finite() && vox >= DEFAULT_VOX_OFFSET as f32 && vox.fract() == 0.0) {
            return Err(NiftiError::BadHeader(format!("vox_offset = {vox}")));
        }

        let sform_code = LittleEndian::read_i16(&bytes[offsets::SFORM_CODE..]);
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            let at = offsets::SROW_X + 16 * r;
            LittleEndian::read_f32_into(&bytes[at..at + 16], row);
        }

        Ok(NiftiHeader {
            dims,
            datatype,
            pixdim,
            vox_offset: vox as usize,
            scl_slope: LittleEndian::read_f32(&bytes[offsets::SCL_SLOPE..]),
            scl_inter: LittleEndian::read_f32(&bytes[offsets::SCL_INTER..]),
            sform_code,
            srow,
        })
    }

    /// Canonical 352-byte serialization (header plus zero extension flag).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = vec![0u8; DEFAULT_VOX_OFFSET];
        LittleEndian::write_i32(&mut b[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
        let dim: [i16; 8] = [
            3,
            self.dims[0] as i16,
            self.dims[1] as i16,
            self.dims[2] as i16,
            1,
            1,
            1,
            1,
        ];
        LittleEndian::write_i16_into(&dim, &mut b[offsets::DIM..offsets::DIM + 16]);
        LittleEndian::write_i16(&mut b[offsets::DATATYPE..], self.datatype.code());
        LittleEndian::write_i16(&mut b[offsets::BITPIX..], (self.datatype.bytes() * 8) as i16);
        let pix: [f32; 8] = [
            1.0,
            self.pixdim[0],
            self.pixdim[1],
            self.pixdim[2],
            0.0,
            0.0,
            0.0,
            0.0,
        ];
        LittleEndian::write_f32_into(&pix, &mut b[offsets::PIXDIM..offsets::PIXDIM + 32]);
        LittleEndian::write_f32(&mut b[offsets::VOX_OFFSET..], self.vox_offset as f32);
        LittleEndian::write_f32(&mut b[offsets::SCL_SLOPE..], self.scl_slope);
        LittleEndian::write_f32(&mut b[offsets::SCL_INTER..], self.scl_inter);
        // NIFTI_UNITS_MM
        b[offsets::XYZT_UNITS] = 2;
        let descrip = b"spinemorph";
        b[offsets::DESCRIP..offsets::DESCRIP + descrip.len()].copy_from_slice(descrip);
        LittleEndian::write_i16(&mut b[offsets::QFORM_CODE..], 0);
        LittleEndian::write_i16(&mut b[offsets::SFORM_CODE..], self.sform_code);
        for (r, row) in self.srow.iter().enumerate() {
            let at = offsets::SROW_X + 16 * r;
            LittleEndian::write_f32_into(row, &mut b[at..at + 16]);
        }
        b[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(MAGIC_SINGLE);
        b
    }

    fn geometry(&self) -> Result<Geometry> {
        let spacing = self.pixdim.map(|p| p as f64);
        if self.sform_code <= 0 {
            return Geometry::new(self.dims, spacing, [0.0; 3]);
        }
        let mut codes = [AxisCode::R; 3];
        for (col, code) in codes.iter_mut().enumerate() {
            let nonzero: Vec<usize> = (0..3).filter(|&r| self.srow[r][col] != 0.0).collect();
            if nonzero.len() != 1 || !self.srow[nonzero[0]][col].is_finite() {
                return Err(NiftiError::Oblique.into());
            }
            let r = nonzero[0];
            *code = AxisCode::from_axis_sign(r, self.srow[r][col] > 0.0);
        }
        let orientation = Orientation::new(codes).map_err(|_| NiftiError::Oblique)?;
        let origin = [
            self.srow[0][3] as f64,
            self.srow[1][3] as f64,
            self.srow[2][3] as f64,
        ];
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(NiftiError::BadHeader("non-finite sform offset".into()).into());
        }
        Geometry::with_orientation(self.dims, spacing, origin, orientation)
    }

    fn for_geometry(geometry: &Geometry, datatype: Datatype, scl_slope: f32, scl_inter: f32) -> Result<Self> {
        if geometry.dims.iter().any(|&d| d > i16::MAX as usize) {
            return Err(Error::arg(format!(
                "dims {:?} exceed the NIfTI-1 limit of {}",
                geometry.dims,
                i16::MAX
            )));
        }
        let mut srow = [[0f32; 4]; 3];
        for (a, code) in geometry.orientation.0.iter().enumerate() {
            srow[code.world_axis()][a] = (code.sign() * geometry.spacing[a]) as f32;
        }
        for (r, row) in srow.iter_mut().enumerate() {
            row[3] = geometry.origin[r] as f32;
        }
        Ok(NiftiHeader {
            dims: geometry.dims,
            datatype,
            pixdim: geometry.spacing.map(|s| s as f32),
            vox_offset: DEFAULT_VOX_OFFSET,
            scl_slope,
            scl_inter,
            sform_code: 1,
            srow,
        })
    }

    fn effective_scaling(&self) -> (f64, f64) {
        let slope = if self.scl_slope == 0.0 || !self.scl_slope.is_finite() {
            1.0
        } else {
            self.scl_slope as f64
        };
        let inter = if self.scl_inter.is_finite() {
            self.scl_inter as f64
        } else {
            0.0
        };
        (slope, inter)
    }
}

/// Parse header and payload into stored geometry plus scaled values.
fn decode_raw(bytes: &[u8]) -> Result<(Geometry, Vec<f64>)> {
    let header = NiftiHeader::parse(bytes)?;
    let geometry = header.geometry()?;
    let n = geometry.len();
    let width = header.datatype.bytes();
    let needed = n
        .checked_mul(width)
        .and_then(|p| p.checked_add(header.vox_offset))
        .ok_or_else(|| NiftiError::BadHeader("payload size overflows".into()))?;
    if bytes.len() < needed {
        return Err(NiftiError::Truncated {
            expected: needed,
            actual: bytes.len(),
        }
        .into());
    }
    let payload = &bytes[header.vox_offset..needed];
    let (slope, inter) = header.effective_scaling();
    let raw: Vec<f64> = match header.datatype {
        Datatype::U8 => payload.iter().map(|&b| b as f64).collect(),
        Datatype::I16 => payload.chunks_exact(2).map(|c| LittleEndian::read_i16(c) as f64).collect(),
        Datatype::F32 => payload.chunks_exact(4).map(|c| LittleEndian::read_f32(c) as f64).collect(),
    };
    let values = if slope == 1.0 && inter == 0.0 {
        raw
    } else {
        raw.into_iter().map(|r| r * slope + inter).collect()
    };
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(NiftiError::NonFinite(pos).into());
    }
    Ok((geometry, values))
}

/// Decode an in-memory `.nii` image into a canonical volume.
pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let (geometry, values) = decode_raw(bytes)?;
    let data: Vec<f32> = values.into_iter().map(|v| v as f32).collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(NiftiError::NonFinite(pos).into());
    }
    Ok(Volume::new(geometry, data)?.to_canonical())
}

/// Decode an in-memory `.nii` label image. Every voxel must hold a
/// non-negative integer defined in `scheme`.
pub fn decode_labels(bytes: &[u8], scheme: Arc<LabelScheme>) -> Result<LabelMap> {
    let (geometry, values) = decode_raw(bytes)?;
    let data = values
        .into_iter()
        .map(|v| {
            if v.fract() == 0.0 && (0.0..=u16::MAX as f64).contains(&v) {
                Ok(v as u16)
            } else {
                Err(NiftiError::InvalidLabel { value: v })
            }
        })
        .collect::<Result<Vec<u16>, _>>()?;
    Ok(LabelMap::new(geometry, data, scheme)?.to_canonical())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::at_path(path, e))?;
    decode_volume(&bytes)
}

pub fn read_labels(path: &Path, scheme: Arc<LabelScheme>) -> Result<LabelMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::at_path(path, e))?;
    decode_labels(&bytes, scheme)
}

/// How to store a [`Volume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    pub datatype: Datatype,
    /// Allow linear slope/intercept quantization for integer datatypes.
    pub quantize: bool,
}

impl WriteOptions {
    pub fn new(datatype: Datatype) -> Self {
        WriteOptions {
            datatype,
            quantize: false,
        }
    }

    pub fn quantized(datatype: Datatype) -> Self {
        WriteOptions {
            datatype,
            quantize: true,
        }
    }
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions::new(Datatype::F32)
    }
}

fn push_value(out: &mut Vec<u8>, datatype: Datatype, stored: f64) {
    match datatype {
        Datatype::U8 => out.push(stored as u8),
        Datatype::I16 => out.extend_from_slice(&(stored as i16).to_le_bytes()),
        Datatype::F32 => out.extend_from_slice(&(stored as f32).to_le_bytes()),
    }
}

pub fn encode_volume(v: &Volume, opts: WriteOptions) -> Result<Vec<u8>> {
    let dt = opts.datatype;
    let data = v.data();
    let (slope, inter) = match (dt, opts.quantize) {
        (Datatype::F32, _) => (1.0f32, 0.0f32),
        (_, false) => {
            let (lo, hi) = dt.range();
            if let Some(&bad) = data
                .iter()
                .find(|&&x| x.fract() != 0.0 || (x as f64) < lo || (x as f64) > hi)
            {
                return Err(NiftiError::Lossy { value: bad, datatype: dt }.into());
            }
            (1.0, 0.0)
        }
        (_, true) => {
            let (min, max) = data
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                    (a.min(x as f64), b.max(x as f64))
                });
            let (lo, hi) = dt.range();
            if max > min {
                let slope = ((max - min) / (hi - lo)) as f32;
                let inter = (min - lo * slope as f64) as f32;
                (slope, inter)
            } else {
                (1.0, (min - lo) as f32)
            }
        }
    };
    let header = NiftiHeader::for_geometry(v.geometry(), dt, slope, inter)?;
    let mut out = header.to_bytes();
    out.reserve(data.len() * dt.bytes());
    let (lo, hi) = dt.range();
    for &x in data {
        let stored = if dt == Datatype::F32 {
            x as f64
        } else {
            ((x as f64 - inter as f64) / slope as f64).round().clamp(lo, hi)
        };
        push_value(&mut out, dt, stored);
    }
    Ok(out)
}

pub fn encode_labels(lm: &LabelMap, datatype: Datatype) -> Result<Vec<u8>> {
    if datatype == Datatype::F32 {
        return Err(NiftiError::LabelDatatype(datatype).into());
    }
    let (_, hi) = datatype.range();
    if let Some(&bad) = lm.data().iter().find(|&&l| l as f64 > hi) {
        return Err(NiftiError::LabelOverflow { label: bad, datatype }.into());
    }
    let header = NiftiHeader::for_geometry(lm.geometry(), datatype, 1.0, 0.0)?;
    let mut out = header.to_bytes();
    out.reserve(lm.data().len() * datatype.bytes());
    for &l in lm.data() {
        push_value(&mut out, datatype, l as f64);
    }
    Ok(out)
}

pub fn write_volume(v: &Volume, path: &Path, opts: WriteOptions) -> Result<()> {
    let bytes = encode_volume(v, opts)?;
    atomic_write(path, &bytes)
}

pub fn write_labels(lm: &LabelMap, path: &Path, datatype: Datatype) -> Result<()> {
    let bytes = encode_labels(lm, datatype)?;
    atomic_write(path, &bytes)
}

/// Smallest integer datatype holding every label of the scheme.
pub fn label_datatype_for(scheme: &LabelScheme) -> Datatype {
    if scheme.max_id() <= 255 {
        Datatype::U8
    } else {
        Datatype::I16
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Structure;

    fn small_volume(values: Vec<f32>) -> Volume {
        let g = Geometry::new([2, 3, 2], [1.0, 1.0, 2.5], [-3.0, 4.5, 10.0]).unwrap();
        Volume::new(g, values).unwrap()
    }

    /// Hand-built header bytes, independent of `NiftiHeader::to_bytes`.
    fn fixture_header(dims: [i16; 3], pixdim: [f32; 3], datatype: i16, bitpix: i16) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        b[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dim = [3i16, dims[0], dims[1], dims[2], 1, 1, 1, 1];
        for (i, d) in dim.iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        b[70..72].copy_from_slice(&datatype.to_le_bytes());
        b[72..74].copy_from_slice(&bitpix.to_le_bytes());
        let pix = [1.0f32, pixdim[0], pixdim[1], pixdim[2]];
        for (i, p) in pix.iter().enumerate() {
            b[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        b[108..112].copy_from_slice(&352f32.to_le_bytes());
        b[344..348].copy_from_slice(b"n+1\0");
        b
    }

    #[test]
    fn reads_constructed_fixture() {
        let mut bytes = fixture_header([64, 64, 64], [1.0, 1.0, 2.5], 16, 32);
        bytes.resize(352 + 64 * 64 * 64 * 4, 0);
        let v = decode_volume(&bytes).unwrap();
        assert_eq!(v.geometry().dims, [64, 64, 64]);
        assert_eq!(v.geometry().spacing, [1.0, 1.0, 2.5]);
        assert_eq!(v.geometry().origin, [0.0; 3]);
    }

    #[test]
    fn scl_slope_zero_means_identity() {
        let mut bytes = fixture_header([2, 1, 1], [1.0; 3], 2, 8);
        bytes.extend_from_slice(&[3, 7]);
        assert_eq!(decode_volume(&bytes).unwrap().data(), &[3.0, 7.0]);
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(decode_volume(&bytes).unwrap().data(), &[7.0, 15.0]);
    }

    #[test]
    fn float_round_trip_is_bit_identical() {
        let vals: Vec<f32> = (0..12).map(|i| (i as f32).sin() * 1234.567).collect();
        let v = small_volume(vals);
        let back = decode_volume(&encode_volume(&v, WriteOptions::default()).unwrap()).unwrap();
        assert_eq!(back.geometry(), v.geometry());
        let a: Vec<u32> = v.data().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn lossy_integer_write_requires_quantization() {
        let mut vals = vec![0.0f32; 12];
        vals[3] = 300.5;
        let v = small_volume(vals);
        assert!(matches!(
            encode_volume(&v, WriteOptions::new(Datatype::I16)),
            Err(Error::Nifti(NiftiError::Lossy { .. }))
        ));
        let bytes = encode_volume(&v, WriteOptions::quantized(Datatype::I16)).unwrap();
        let back = decode_volume(&bytes).unwrap();
        assert!((back.data()[3] - 300.5).abs() < 0.01);
        assert!(back.data()[0].abs() < 0.01);
    }

    #[test]
    fn u8_out_of_range_is_lossy() {
        let mut vals = vec![0.0f32; 12];
        vals[0] = 256.0;
        assert!(encode_volume(&small_volume(vals), WriteOptions::new(Datatype::U8)).is_err());
    }

    #[test]
    fn label_round_trip_u8() {
        let g = Geometry::new([13, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let lm = LabelMap::new(g, (0..13).collect(), LabelScheme::shared_standard()).unwrap();
        let bytes = encode_labels(&lm, Datatype::U8).unwrap();
        let back = decode_labels(&bytes, LabelScheme::shared_standard()).unwrap();
        assert_eq!(back.data(), lm.data());
    }

    #[test]
    fn label_overflow_and_float_rejected() {
        let scheme = Arc::new(
            LabelScheme::new(vec![crate::volgrid::SchemeEntry {
                id: 300,
                name: Structure::Canal,
            }])
            .unwrap(),
        );
        let g = Geometry::new([2, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let lm = LabelMap::new(g, vec![0, 300], scheme.clone()).unwrap();
        assert!(matches!(
            encode_labels(&lm, Datatype::U8),
            Err(Error::Nifti(NiftiError::LabelOverflow { label: 300, .. }))
        ));
        assert!(encode_labels(&lm, Datatype::I16).is_ok());
        assert!(matches!(
            encode_labels(&lm, Datatype::F32),
            Err(Error::Nifti(NiftiError::LabelDatatype(_)))
        ));
        assert_eq!(label_datatype_for(&scheme), Datatype::I16);
    }

    #[test]
    fn non_integer_label_rejected() {
        let v = small_volume(vec![0.5; 12]);
        let bytes = encode_volume(&v, WriteOptions::default()).unwrap();
        assert!(matches!(
            decode_labels(&bytes, LabelScheme::shared_standard()),
            Err(Error::Nifti(NiftiError::InvalidLabel { .. }))
        ));
    }

    #[test]
    fn rejects_malformed_headers() {
        let good = encode_volume(&small_volume(vec![1.0; 12]), WriteOptions::default()).unwrap();

        let mut pair = good.clone();
        pair[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(decode_volume(&pair), Err(Error::Nifti(NiftiError::TwoFileForm))));

        let mut magic = good.clone();
        magic[344..348].copy_from_slice(b"abc\0");
        assert!(matches!(decode_volume(&magic), Err(Error::Nifti(NiftiError::BadMagic(_)))));

        let mut be = good.clone();
        be[0..4].copy_from_slice(&348i32.to_be_bytes());
        assert!(matches!(decode_volume(&be), Err(Error::Nifti(NiftiError::BigEndian))));

        assert!(matches!(
            decode_volume(&good[..200]),
            Err(Error::Nifti(NiftiError::Truncated { .. }))
        ));
        assert!(matches!(
            decode_volume(&good[..good.len() - 1]),
            Err(Error::Nifti(NiftiError::Truncated { .. }))
        ));

        let mut dt = good.clone();
        dt[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(
            decode_volume(&dt),
            Err(Error::Nifti(NiftiError::UnsupportedDatatype(64)))
        ));

        assert!(matches!(
            decode_volume(&[0x1f, 0x8b, 0, 0]),
            Err(Error::Nifti(NiftiError::Compressed))
        ));
    }

    #[test]
    fn oblique_sform_rejected() {
        let mut bytes = encode_volume(&small_volume(vec![1.0; 12]), WriteOptions::default()).unwrap();
        // srow_x[1] = 0.3 makes column 1 touch two world axes.
        bytes[284..288].copy_from_slice(&0.3f32.to_le_bytes());
        assert!(matches!(decode_volume(&bytes), Err(Error::Nifti(NiftiError::Oblique))));
    }

    #[test]
    fn flipped_sform_is_reoriented() {
        let g = Geometry::with_orientation([3, 1, 1], [2.0, 1.0, 1.0], [10.0, 0.0, 0.0], "LAS".parse().unwrap())
            .unwrap();
        let v = Volume::new(g, vec![1.0, 2.0, 3.0]).unwrap();
        let back = decode_volume(&encode_volume(&v, WriteOptions::default()).unwrap()).unwrap();
        assert!(back.geometry().orientation.is_canonical());
        assert_eq!(back.data(), &[3.0, 2.0, 1.0]);
        assert_eq!(back.geometry().origin, [6.0, 0.0, 0.0]);
    }

    #[test]
    fn second_write_is_byte_stable() {
        let v = small_volume((0..12).map(|i| i as f32 * 0.1).collect());
        let first = encode_volume(&v, WriteOptions::default()).unwrap();
        let second = encode_volume(&decode_volume(&first).unwrap(), WriteOptions::default()).unwrap();
        let third = encode_volume(&decode_volume(&second).unwrap(), WriteOptions::default()).unwrap();
        assert_eq!(second, third);
    }
}
