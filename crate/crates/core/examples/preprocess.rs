//! Resample a phantom to isotropic spacing, then z-score and window it.

use spinemorph::phantom::{generate, PhantomSpec};
use spinemorph::prep::{window, zscore, Resample, ResampleMode, WindowSpec};
use spinemorph::Grid;

fn main() -> spinemorph::Result<()> {
    let (image, _) = generate(&PhantomSpec::cervical().with_spacing(0.8))?;
    let iso = image.resample([1.25; 3], ResampleMode::Trilinear)?;
    println!("dims {:?} -> {:?}", image.geometry().dims, iso.geometry().dims);

    let z = zscore(&iso, None)?;
    println!("z-score: mean {:.3}, std {:.3}, degenerate {}", z.mean, z.std, z.degenerate);

    let w = window(&iso, &WindowSpec::new(240.0, 120.0)?);
    let max = w.data().iter().copied().fold(f32::MIN, f32::max);
    println!("windowed 240:120, max {max:.3}");
    Ok(())
}
