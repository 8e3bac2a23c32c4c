//! Reorient a small LPS volume to RAS and show that world positions survive.

use spinemorph::volgrid::reorient_to_canonical;
use spinemorph::{Geometry, Grid, Orientation, Volume};

fn main() -> spinemorph::Result<()> {
    let lps: Orientation = "LPS".parse()?;
    let g = Geometry::with_orientation([3, 2, 2], [1.0, 2.0, 3.0], [10.0, -5.0, 0.0], lps)?;
    let v = Volume::new(g, (0..12).map(|x| x as f32).collect())?;
    let ras = reorient_to_canonical(&v, lps);
    println!("source {} dims {:?}", v.geometry().orientation, v.geometry().dims);
    println!("canonical {} dims {:?}", ras.geometry().orientation, ras.geometry().dims);
    let corner = v.geometry().voxel_to_world([0, 0, 0])?;
    let back = ras.geometry().world_to_voxel(corner);
    println!("voxel (0,0,0) at {corner:?} is canonical voxel {back:?}");
    Ok(())
}
