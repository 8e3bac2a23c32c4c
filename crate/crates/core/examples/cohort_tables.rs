//! Summarize a small manifest into the three cohort tables.

use spinemorph::cohort::{parse_manifest, render_text, summarize};

const MANIFEST: &str = "\
scan_id,age,sex,manufacturer
s001,15,F,GE MEDICAL SYSTEMS
s002,34,M,SIEMENS
s003,52,F,Philips Medical Systems
s004,67,M,Canon Medical Systems
s005,81,F,GE MEDICAL SYSTEMS
s006,44,unknown,SIEMENS
s007,abc,M,SIEMENS
";

fn main() -> spinemorph::Result<()> {
    let manifest = parse_manifest(MANIFEST.as_bytes())?;
    for e in &manifest.errors {
        println!("skipped line {}: {:?}", e.line, e.kind);
    }
    print!("{}", render_text(&summarize(&manifest.records)));
    Ok(())
}
