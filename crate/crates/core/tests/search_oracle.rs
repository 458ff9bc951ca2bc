//! The coarse-to-fine plane search agrees with exhaustive search when the
//! score field has a single basin.

use std::time::{Duration, Instant};

use viewplan_core::phantom::{compact_instance, CompactSpec};
use viewplan_core::prescribe::{brute_force_plane, grid_search_plane, seed_segment, SearchResult};

/// Lattice points of two results differ by at most one step per axis,
/// counting the seam identities of the angle chart.
fn within_one_cell(a: &SearchResult, b: &SearchResult) -> bool {
    let (pa, ta, fa) = (
        a.p_index as i64,
        a.trace.last().unwrap().theta,
        a.trace.last().unwrap().phi,
    );
    let (pb, tb, fb) = (
        b.p_index as i64,
        b.trace.last().unwrap().theta,
        b.trace.last().unwrap().phi,
    );
    let cyclic = |d: i64| d.rem_euclid(180).min((-d).rem_euclid(180));
    [(ta, fa), (180 - ta, fa - 180), (180 - ta, fa + 180)]
        .iter()
        .any(|&(t, f)| (pa - pb).abs() <= 1 && cyclic(t - tb) <= 1 && (f - fb).abs() <= 1)
}

#[test]
fn grid_search_matches_brute_force_on_compact_instances() {
    let spec = CompactSpec::default();
    for seed in 0..2 {
        let views = compact_instance(seed, &spec).unwrap().views;
        let seg = seed_segment(&views).unwrap();
        let t0 = Instant::now();
        let grid = grid_search_plane(&views, &seg).unwrap();
        let brute = brute_force_plane(&views, &seg, 1, 1).unwrap();
        assert!(t0.elapsed() < Duration::from_secs(60));
        assert!(grid.score <= brute.score, "seed {seed}");
        assert!(
            within_one_cell(&grid, &brute),
            "seed {seed}: grid {:?} brute {:?}",
            (grid.p_index, &grid.trace.last()),
            (brute.p_index, &brute.trace.last())
        );
    }
}
