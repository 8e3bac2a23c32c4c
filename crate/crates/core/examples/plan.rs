//! Fingerprint two phantoms and print the resulting segmentation plan.

use spinemorph::autoplan::{fingerprint, make_plan};
use spinemorph::phantom::{generate, PhantomSpec};

fn main() -> spinemorph::Result<()> {
    let (a, ga) = generate(&PhantomSpec::lumbar())?;
    let (b, gb) = generate(&PhantomSpec::cervical().with_spacing(1.25))?;
    let fp = fingerprint(&[a, b], Some(&[ga.labels, gb.labels]))?;
    let plan = make_plan(&fp);
    plan.validate()?;
    println!("{}", plan.to_json()?);
    Ok(())
}
