//! Run the batch pipeline on a directory of generated phantoms.

use spinemorph::autoplan::{fingerprint, make_plan};
use spinemorph::cli::{pipeline, write_phantom, PipelineOptions};
use spinemorph::evalkit::{render_report, ReportFormat};
use spinemorph::phantom::{generate, PhantomSpec};

fn main() -> spinemorph::Result<()> {
    let tmp = tempfile::tempdir()?;
    let scans = tmp.path().join("scans");
    let specs = PhantomSpec::sweep(3, 2);
    for (i, spec) in specs.iter().enumerate() {
        write_phantom(spec, &scans.join(format!("phantom_{i:03}")))?;
    }
    let (first, _) = generate(&specs[0])?;
    let plan = make_plan(&fingerprint(&[first], None)?);
    let out = tmp.path().join("out");
    let report = pipeline(&scans, &out, &PipelineOptions::new(plan))?;
    let mut names: Vec<String> = std::fs::read_dir(&out)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    println!("{}", names.join("\n"));
    if let Some(r) = report {
        print!("{}", render_report(&r, ReportFormat::Text)?);
    }
    Ok(())
}
