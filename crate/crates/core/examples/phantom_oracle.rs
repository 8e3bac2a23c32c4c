//! Compare measured values against the analytic phantom geometry.

use spinemorph::morpho::measure_all;
use spinemorph::phantom::{generate, segment_baseline, BaselineConfig, PhantomSpec};

fn main() -> spinemorph::Result<()> {
    let mut worst = 0f64;
    for spec in PhantomSpec::sweep(6, 1) {
        let (image, gt) = generate(&spec)?;
        let pred = segment_baseline(&image, &BaselineConfig::for_spec(&spec))?;
        let report = measure_all(&pred);
        let sz = spec.spacing_mm[2];
        let sy = spec.spacing_mm[1];
        for (m, t) in report.levels.iter().zip(&gt.measurements.levels) {
            let dz = (m.disc_height_mm.unwrap_or(f64::NAN) - t.disc_height_mm.unwrap_or(f64::NAN)).abs() / sz;
            let dy = (m.canal_ap_diameter_mm.unwrap_or(f64::NAN) - t.canal_ap_diameter_mm.unwrap_or(f64::NAN)).abs() / sy;
            worst = worst.max(dz).max(dy);
        }
        println!("seed {} first {} spacing {:?}: {} levels", spec.seed, spec.first_vertebra, spec.spacing_mm, report.levels.len());
    }
    println!("worst error {worst:.2} voxels");
    Ok(())
}
