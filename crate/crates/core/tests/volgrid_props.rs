mod common;

use proptest::prelude::*;
use spinemorph::volgrid::{reorient_labels_to_canonical, reorient_to_canonical};
use spinemorph::{Grid, Volume};

fn volume() -> impl Strategy<Value = Volume> {
    common::geometry(6).prop_flat_map(|g| {
        prop::collection::vec(-1000.0f32..1000.0, g.len()).prop_map(move |d| Volume::new(g, d).unwrap())
    })
}

proptest! {
    #[test]
    fn reorientation_preserves_extent_and_values(v in volume()) {
        let c = reorient_to_canonical(&v, v.geometry().orientation);
        prop_assert!(c.geometry().orientation.is_canonical());
        let mut before = v.geometry().extent();
        let mut after = c.geometry().extent();
        before.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        prop_assert_eq!(before, after);
        let mut a: Vec<u32> = v.data().iter().map(|x| x.to_bits()).collect();
        let mut b: Vec<u32> = c.data().iter().map(|x| x.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn reorientation_keeps_world_positions(v in volume()) {
        let c = v.to_canonical();
        // Every source voxel value sits at the same world point afterwards.
        let g = v.geometry();
        for lin in 0..g.len() {
            let idx = g.coords(lin);
            let w = v.voxel_to_world(idx).unwrap();
            let ci = c.world_to_voxel(w).map(|x| x.round() as usize);
            prop_assert_eq!(c.get(ci), v.get(idx));
        }
    }

    #[test]
    fn world_voxel_round_trip(g in common::geometry(8)) {
        for lin in 0..g.len() {
            let idx = g.coords(lin);
            let back = g.world_to_voxel(g.voxel_to_world(idx).unwrap());
            for a in 0..3 {
                prop_assert!((back[a] - idx[a] as f64).abs() * g.spacing[a] <= 1e-9);
            }
        }
    }

    #[test]
    fn label_set_never_grows(lm in common::label_map(6, vec![0, 1, 20, 26])) {
        let before = lm.labels_present();
        let c = reorient_labels_to_canonical(&lm, lm.geometry().orientation);
        prop_assert!(c.labels_present().is_subset(&before));
        prop_assert_eq!(lm.to_canonical().labels_present(), before);
    }
}
