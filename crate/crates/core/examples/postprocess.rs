//! Drop connected components smaller than the plan threshold.

use spinemorph::postseg::{filter_small_with_report, Connectivity};
use spinemorph::{Geometry, LabelMap, LabelScheme};

fn main() -> spinemorph::Result<()> {
    let g = Geometry::new([20, 20, 20], [1.0; 3], [0.0; 3])?;
    let mut data = vec![0u16; g.len()];
    // A 4x4x4 body block and a 2x2x2 speck of the same label.
    for k in 2..6 {
        for j in 2..6 {
            for i in 2..6 {
                data[g.linear(i, j, k)] = 20;
            }
        }
    }
    for k in 12..14 {
        for j in 12..14 {
            for i in 12..14 {
                data[g.linear(i, j, k)] = 20;
            }
        }
    }
    let lm = LabelMap::new(g, data, LabelScheme::shared_standard())?;
    let (kept, table) = filter_small_with_report(&lm, 50, Connectivity::TwentySix);
    for c in &table.components {
        println!("component {} label {} voxels {} kept {}", c.id, c.label, c.voxels, c.voxels >= 50);
    }
    println!("foreground {} -> {}", lm.foreground().count(), kept.foreground().count());
    Ok(())
}
