//! Segment noisy phantoms with the baseline and render the metric tables.

use spinemorph::evalkit::{render_report, EvalAccumulator, ReportFormat};
use spinemorph::morpho::measure_all;
use spinemorph::phantom::{generate, segment_baseline, BaselineConfig, PhantomSpec};

fn main() -> spinemorph::Result<()> {
    let mut acc = EvalAccumulator::new();
    for spec in PhantomSpec::sweep(4, 7) {
        let (image, gt) = generate(&spec)?;
        let pred = segment_baseline(&image, &BaselineConfig::for_spec(&spec))?;
        let meas = measure_all(&pred);
        acc.add_scan(&pred, &gt.labels, Some(&meas), Some(&gt.measurements))?;
    }
    let report = acc.finish();
    print!("{}", render_report(&report, ReportFormat::Text)?);
    Ok(())
}
