//! Measure disc heights and canal diameters on phantom ground truth.

use spinemorph::morpho::measure_all;
use spinemorph::phantom::{generate, PhantomSpec};

fn main() -> spinemorph::Result<()> {
    let (_, gt) = generate(&PhantomSpec::lumbar())?;
    let measured = measure_all(&gt.labels);
    println!("level    disc mm (truth)   AP mm (truth)");
    for (m, t) in measured.levels.iter().zip(&gt.measurements.levels) {
        let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!(
            "{:<8} {:>7} ({:>5})   {:>6} ({:>5})",
            m.level.to_string(),
            f(m.disc_height_mm),
            f(t.disc_height_mm),
            f(m.canal_ap_diameter_mm),
            f(t.canal_ap_diameter_mm)
        );
    }
    print!("{}", measured.to_csv()?);
    Ok(())
}
