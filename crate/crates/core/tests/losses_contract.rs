use approx::assert_abs_diff_eq;
use ndarray::Array2;
use viewplan_core::losses::{l2_heatmap_loss, stacked_loss, HeatmapBatch, StackWeights};

#[test]
fn l2_is_zero_only_for_equal_batches() {
    let a = Array2::from_shape_fn((4, 5), |(r, c)| (r * 5 + c) as f64 / 20.0);
    let same = HeatmapBatch::new(vec![a.clone(), a.clone()], vec![a.clone(), a.clone()]).unwrap();
    assert_eq!(l2_heatmap_loss(&same), 0.0);
    let mut b = a.clone();
    b[[3, 1]] += 1e-6;
    let diff = HeatmapBatch::new(vec![a.clone(), a.clone()], vec![a, b]).unwrap();
    assert!(l2_heatmap_loss(&diff) > 0.0);
}

#[test]
fn weights_halve_towards_the_first_output() {
    for n in 1..8 {
        let w = StackWeights::new(n);
        let w = w.as_slice();
        assert_eq!(w[n - 1], 1.0);
        for i in 0..n - 1 {
            assert_eq!(w[i], w[i + 1] / 2.0);
        }
    }
}

#[test]
fn two_output_example() {
    assert_abs_diff_eq!(stacked_loss(&[0.3, 0.1]).unwrap(), 0.166667, epsilon = 1e-6);
}
