mod support;

use flowline::etf::compute_etf;
use flowline::fdog::{
    alpha_to_params, fdog_response, render_with_lcm_passes, render_with_params, threshold_response, Response,
    ANCHOR_LEVELS,
};
use flowline::fixtures::{step_edge, textured, two_edges};
use flowline::measure::{ink_components, mean_stroke_width};
use flowline::{render_line_drawing, render_with_lcm, EtfParams, FlowField, ImageBuf, LineControlMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{dense_response, random_gray};

fn uniform_field(w: usize, h: usize, t: [f64; 2]) -> FlowField {
    FlowField::new(w, h, vec![t; w * h], vec![1.0; w * h]).unwrap()
}

#[test]
fn streamline_response_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..12 {
        let img = random_gray(16, 16, case);
        let alpha = rng.gen_range(0.0..=1.0);
        let p = alpha_to_params(alpha).unwrap();
        let field_t = if case % 4 == 0 {
            None
        } else {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Some([a.cos(), a.sin()])
        };
        let field = match field_t {
            Some(t) => uniform_field(16, 16, t),
            None => FlowField::zeros(16, 16),
        };
        let fast = fdog_response(&img, &field, &p).unwrap();
        let slow = dense_response(&img, field_t, p.sigma_c, p.sigma_m, p.rho);
        let worst = fast.data.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "case {case}: max |dH| = {worst}");
    }
}

#[test]
fn constant_images_render_white() {
    for value in [0.0, 0.5, 1.0] {
        let img = ImageBuf::filled(24, 24, 3, value).unwrap();
        let field = compute_etf(&img, &EtfParams::default()).unwrap();
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let d = render_line_drawing(&img, &field, alpha).unwrap();
            assert_eq!(d.ink_count(), 0, "value {value}, alpha {alpha}");
        }
        let zero = LineControlMatrix::constant(24, 24, 0.0).unwrap();
        assert_eq!(render_with_lcm(&img, &field, &zero).unwrap().ink_count(), 0);
    }
}

#[test]
fn constant_response_is_positive() {
    let img = ImageBuf::filled(12, 12, 1, 0.5).unwrap();
    let field = uniform_field(12, 12, [0.0, 1.0]);
    let r = fdog_response(&img, &field, &alpha_to_params(0.5).unwrap()).unwrap();
    assert!(r.data.iter().all(|&h| h > 0.0));
}

#[test]
fn step_edge_response_is_negative_beside_the_edge() {
    let img = step_edge(32, 32);
    let field = uniform_field(32, 32, [0.0, 1.0]);
    let r = fdog_response(&img, &field, &alpha_to_params(0.5).unwrap()).unwrap();
    for y in 0..32 {
        assert!(r.data[y * 32 + 15] < 0.0);
    }
}

#[test]
fn step_edge_is_inked() {
    let img = step_edge(32, 32);
    let field = compute_etf(&img, &EtfParams::default()).unwrap();
    let d = render_line_drawing(&img, &field, 0.5).unwrap();
    let covered = (0..32).filter(|&y| (13..=18).any(|x| d.is_ink(x, y))).count();
    assert!(covered as f64 >= 0.95 * 32.0, "{covered} of 32 rows");
}

#[test]
fn stroke_width_grows_with_alpha() {
    let img = step_edge(48, 48);
    let field = compute_etf(&img, &EtfParams::default()).unwrap();
    let widths: Vec<f64> = ANCHOR_LEVELS
        .iter()
        .map(|&a| mean_stroke_width(&render_line_drawing(&img, &field, a).unwrap(), 0..48, 0..48))
        .collect();
    assert!(widths.windows(2).all(|w| w[0] <= w[1]), "{widths:?}");
    assert!(widths[4] > widths[0], "{widths:?}");
}

#[test]
fn texture_detail_drops_with_alpha() {
    let img = textured(64, 64);
    let field = compute_etf(&img, &EtfParams::default()).unwrap();
    let counts: Vec<usize> = ANCHOR_LEVELS
        .iter()
        .map(|&a| ink_components(&render_line_drawing(&img, &field, a).unwrap()))
        .collect();
    let inversions = counts.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "{counts:?}");
    assert!(counts[4] < counts[0], "{counts:?}");
}

#[test]
fn split_lcm_controls_each_half() {
    let img = two_edges(64, 48);
    let field = compute_etf(&img, &EtfParams::default()).unwrap();
    let lcm = LineControlMatrix::from_fn(64, 48, |x, _| if x < 32 { 0.1 } else { 0.9 }).unwrap();
    let d = render_with_lcm(&img, &field, &lcm).unwrap();
    let left = mean_stroke_width(&d, 0..32, 0..48);
    let right = mean_stroke_width(&d, 32..64, 0..48);
    assert!(left > 0.0 && left < right, "left {left}, right {right}");
}

#[test]
fn anchor_valued_lcm_equals_global_render() {
    let img = textured(40, 40);
    let field = compute_etf(&img, &EtfParams::default()).unwrap();
    for &a in &ANCHOR_LEVELS {
        let lcm = LineControlMatrix::constant(40, 40, a).unwrap();
        assert_eq!(render_with_lcm(&img, &field, &lcm).unwrap(), render_line_drawing(&img, &field, a).unwrap());
    }
    let near = LineControlMatrix::constant(40, 40, 0.3 + 5e-10).unwrap();
    assert_eq!(render_with_lcm(&img, &field, &near).unwrap(), render_line_drawing(&img, &field, 0.3).unwrap());
}

#[test]
fn lcm_between_anchors_blends_neighbours() {
    let img = two_edges(48, 32);
    let field = compute_etf(&img, &EtfParams::default()).unwrap();
    let lo = render_line_drawing(&img, &field, 0.3).unwrap();
    let hi = render_line_drawing(&img, &field, 0.5).unwrap();
    // Values off the anchors but nearer one side follow that side, since a
    // blend with weight below one half rounds back to it.
    let mut alpha = vec![0.34; 48 * 32];
    alpha[0] = 0.1;
    let d = render_with_lcm(&img, &field, &LineControlMatrix::new(48, 32, alpha).unwrap()).unwrap();
    for i in 1..48 * 32 {
        if lo.data()[i] == hi.data()[i] {
            assert_eq!(d.data()[i], lo.data()[i]);
        }
    }
}

#[test]
fn lcm_dimension_mismatch_is_an_error() {
    let img = step_edge(16, 16);
    let field = compute_etf(&img, &EtfParams::default()).unwrap();
    let lcm = LineControlMatrix::constant(8, 16, 0.5).unwrap();
    assert!(render_with_lcm_passes(&img, &field, &lcm, Some(1)).is_err());
    assert!(LineControlMatrix::new(2, 1, vec![0.2, 1.2]).is_err());
    assert!(render_line_drawing(&img, &field, 1.5).is_err());
    assert!(fdog_response(&img.to_grayscale(), &FlowField::zeros(8, 8), &alpha_to_params(0.5).unwrap()).is_err());
}

#[test]
fn threshold_examples() {
    let r = Response { width: 3, height: 1, data: vec![0.5, -3.0, -0.1] };
    assert_eq!(threshold_response(&r, 0.5).data(), &[1.0, 0.0, 1.0]);
}

#[test]
fn more_passes_never_remove_ink_on_the_edge() {
    let img = step_edge(32, 32);
    let field = compute_etf(&img, &EtfParams::default()).unwrap();
    let p = alpha_to_params(0.5).unwrap();
    let one = render_with_params(&img, &field, &p.with_passes(1)).unwrap();
    let two = render_with_params(&img, &field, &p.with_passes(2)).unwrap();
    assert!(two.ink_count() >= one.ink_count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn drawings_are_binary(w in 4usize..20, h in 4usize..20, alpha in 0.0f64..=1.0, seed: u64) {
        let img = random_gray(w, h, seed);
        let field = compute_etf(&img, &EtfParams::default()).unwrap();
        prop_assert!(render_line_drawing(&img, &field, alpha).unwrap().is_binary());
    }
}
