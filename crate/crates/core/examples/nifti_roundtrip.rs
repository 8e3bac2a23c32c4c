//! Write a volume as float and quantized int16 NIfTI, then read both back.

use spinemorph::niftiio::{decode_volume, encode_volume, Datatype, WriteOptions};
use spinemorph::{Geometry, Grid, Volume};

fn main() -> spinemorph::Result<()> {
    let g = Geometry::new([8, 8, 4], [0.75, 0.75, 2.5], [-3.0, 4.0, 12.0])?;
    let v = Volume::new(g, (0..g.len()).map(|i| (i as f32).sin() * 400.0).collect())?;

    let f32_bytes = encode_volume(&v, WriteOptions::default())?;
    let back = decode_volume(&f32_bytes)?;
    println!("f32: {} bytes, exact = {}", f32_bytes.len(), back.data() == v.data());

    let i16_bytes = encode_volume(&v, WriteOptions::quantized(Datatype::I16))?;
    let q = decode_volume(&i16_bytes)?;
    let worst = v.data().iter().zip(q.data()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
    println!("i16: {} bytes, worst quantization error {worst:.4}", i16_bytes.len());
    println!("spacing {:?}, origin {:?}", q.geometry().spacing, q.geometry().origin);
    Ok(())
}
