mod support;

use std::time::Instant;

use flowline::etf::{etf_init, etf_refine, sobel_gradients, visualize_field, visualize_field_with_arrows, Gradients};
use flowline::fixtures::{disk, rotate90, shapes_photo, step_edge};
use flowline::{compute_etf, EtfParams, FlowField, ImageBuf};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{naive_refine, random_field, random_gray};

#[test]
fn refine_matches_naive_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let w = rng.gen_range(16..=32);
        let h = rng.gen_range(16..=32);
        let field = random_field(w, h, 0.15, case);
        let params = EtfParams {
            kernel_radius: rng.gen_range(1..=6),
            eta: rng.gen_range(0.5..3.0),
            iterations: 1,
        };
        let fast = etf_refine(&field, &params).unwrap();
        let slow = naive_refine(&field, params.kernel_radius, params.eta);
        for (a, b) in fast.tangents().iter().zip(&slow) {
            assert!((a[0] - b[0]).abs() < 1e-5 && (a[1] - b[1]).abs() < 1e-5, "case {case}: {a:?} vs {b:?}");
        }
        assert_eq!(fast.magnitude(), field.magnitude());
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn sobel_examples() {
    let flat = ImageBuf::filled(6, 5, 1, 0.4).unwrap();
    let g = sobel_gradients(&flat).unwrap();
    assert!(g.magnitude.iter().all(|&m| m == 0.0));

    let delta = 0.05;
    let ramp = ImageBuf::from_fn(8, 6, |x, _| x as f64 * delta);
    let g = sobel_gradients(&ramp).unwrap();
    for y in 1..5 {
        for x in 1..7 {
            let [gx, gy] = g.gradient[y * 8 + x];
            assert!((gx - 8.0 * delta).abs() < 1e-12 && gy.abs() < 1e-12);
        }
    }

    let img = random_gray(7, 7, 3);
    let t = ImageBuf::from_fn(7, 7, |x, y| img.get(y, x, 0));
    let (a, b) = (sobel_gradients(&img).unwrap(), sobel_gradients(&t).unwrap());
    for y in 0..7 {
        for x in 0..7 {
            let ga = a.gradient[y * 7 + x];
            let gb = b.gradient[x * 7 + y];
            assert!((ga[0] - gb[1]).abs() < 1e-12 && (ga[1] - gb[0]).abs() < 1e-12);
        }
    }
    assert!(sobel_gradients(&ImageBuf::filled(2, 5, 1, 0.0).unwrap()).is_err());
}

#[test]
fn init_examples() {
    let grad = Gradients {
        width: 3,
        height: 1,
        gradient: vec![[1.0, 0.0], [0.0, 0.0], [3.0, 4.0]],
        magnitude: vec![1.0, 0.0, 5.0],
    };
    let f = etf_init(&grad);
    let t = f.tangents();
    assert!((t[0][0]).abs() < 1e-12 && (t[0][1] - 1.0).abs() < 1e-12);
    assert_eq!(t[1], [0.0, 0.0]);
    assert!((t[2][0] + 0.8).abs() < 1e-12 && (t[2][1] - 0.6).abs() < 1e-12);
    assert_eq!(f.magnitude(), &[0.2, 0.0, 1.0]);
}

#[test]
fn refine_examples() {
    let (a, b) = (0.6f64, 0.8f64);
    let uniform = FlowField::new(9, 9, vec![[a, b]; 81], vec![0.5; 81]).unwrap();
    let out = etf_refine(&uniform, &EtfParams::default()).unwrap();
    assert!(out.tangents().iter().all(|t| (t[0] - a).abs() < 1e-6 && (t[1] - b).abs() < 1e-6));

    let mut tangents = vec![[0.0, 0.0]; 25];
    tangents[12] = [0.0, 1.0];
    tangents[13] = [0.0, -1.0];
    let f = FlowField::new(5, 5, tangents, vec![0.5; 25]).unwrap();
    let out = etf_refine(&f, &EtfParams { kernel_radius: 2, ..Default::default() }).unwrap();
    let t = out.tangent(2, 2);
    assert!(t[0].abs() < 1e-12 && (t[1] - 1.0).abs() < 1e-12);
}

#[test]
fn constant_image_gives_zero_field() {
    let f = compute_etf(&ImageBuf::filled(16, 12, 3, 0.7).unwrap(), &EtfParams::default()).unwrap();
    assert!(f.tangents().iter().all(|t| *t == [0.0, 0.0]));
    assert!(f.magnitude().iter().all(|&m| m == 0.0));
}

#[test]
fn step_edge_tangents_are_vertical() {
    let f = compute_etf(&step_edge(32, 32), &EtfParams::default()).unwrap();
    for y in 0..32 {
        for x in 15..=16 {
            assert!(f.tangent(x, y)[1].abs() > 0.99, "({x}, {y}): {:?}", f.tangent(x, y));
        }
    }
}

#[test]
fn disk_boundary_tangents_are_circular() {
    let (size, r) = (48, 12.0);
    let f = compute_etf(&disk(size, r), &EtfParams::default()).unwrap();
    let c = (size as f64 - 1.0) / 2.0;
    let mut checked = 0;
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let d = dx.hypot(dy);
            if (d - r).abs() > 0.75 {
                continue;
            }
            let t = f.tangent(x, y);
            let radial = (t[0] * dx + t[1] * dy) / d;
            assert!(radial.abs() < 0.1, "({x}, {y}): {t:?}");
            checked += 1;
        }
    }
    assert!(checked > 50);
}

/// Mean `|t₁·t₂|` between the field of a rotated image and the rotated field.
fn rotation_alignment(img: &ImageBuf) -> f64 {
    let p = EtfParams::default();
    let f = compute_etf(img, &p).unwrap();
    let fr = compute_etf(&rotate90(img), &p).unwrap();
    let (w, h) = (f.width(), f.height());
    let (mut sum, mut n) = (0.0, 0);
    for y in 0..h {
        for x in 0..w {
            if f.magnitude_at(x, y) <= 0.1 {
                continue;
            }
            // (x, y) moves to (y, w - 1 - x); vectors turn as (a, b) -> (b, -a).
            let t = f.tangent(x, y);
            let moved = [t[1], -t[0]];
            let u = fr.tangent(y, w - 1 - x);
            sum += (moved[0] * u[0] + moved[1] * u[1]).abs();
            n += 1;
        }
    }
    sum / n as f64
}

#[test]
fn rotation_equivariance() {
    for seed in 0..3 {
        assert!(rotation_alignment(&shapes_photo(40, seed)) > 0.99);
    }
    assert!(rotation_alignment(&random_gray(24, 20, 5)) > 0.99);
}

#[test]
fn visualization_examples() {
    let zero = FlowField::zeros(4, 3);
    assert!(visualize_field(&zero).data().iter().all(|&v| v == 0.0));

    let up = FlowField::new(4, 4, vec![[0.0, 1.0]; 16], vec![1.0; 16]).unwrap();
    let img = visualize_field(&up);
    let first: Vec<f64> = (0..3).map(|c| img.get(0, 0, c)).collect();
    assert!((0..16).all(|i| (0..3).all(|c| img.get(i % 4, i / 4, c) == first[c])));

    let f = random_field(10, 8, 0.1, 9);
    assert_eq!(visualize_field(&f), visualize_field(&f.negated()));
    let arrows = visualize_field_with_arrows(&f, 4);
    assert_eq!((arrows.width(), arrows.height(), arrows.channels()), (10, 8, 3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn refined_tangents_are_unit_or_zero(w in 3usize..14, h in 3usize..14, radius in 1usize..5, iterations in 0usize..4, seed: u64) {
        let img = random_gray(w, h, seed);
        let f = compute_etf(&img, &EtfParams { kernel_radius: radius, eta: 1.0, iterations }).unwrap();
        for t in f.tangents() {
            let n = t[0].hypot(t[1]);
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
        }
        prop_assert!(f.magnitude().iter().all(|m| (0.0..=1.0).contains(m)));
    }
}
