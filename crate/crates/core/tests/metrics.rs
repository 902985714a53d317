mod support;

use flowline::io::save_image;
use flowline::metrics::{
    diff_map, evaluate_batch, evaluate_pair, fft2d, fft_distance, psnr, spectrum_image, ssim, BatchReport,
};
use flowline::{Error, ImageBuf, LineDrawing};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{naive_dft, naive_fft_distance, random_gray};

/// SSIM evaluated window by window with a 2-D Gaussian.
fn naive_ssim(a: &ImageBuf, b: &ImageBuf) -> f64 {
    let (w, h) = (a.width(), a.height());
    let mut k = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.0001, 0.0009);
    let mut sum = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, row) in k.iter().enumerate() {
                for (j, kv) in row.iter().enumerate() {
                    let wt = kv / total;
                    let (p, q) = (a.get(x0 + j, y0 + i, 0), b.get(x0 + j, y0 + i, 0));
                    ma += wt * p;
                    mb += wt * q;
                    saa += wt * p * p;
                    sbb += wt * q * q;
                    sab += wt * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

#[test]
fn ssim_matches_window_oracle() {
    for seed in 0..4 {
        let a = random_gray(17, 14, seed);
        let b = random_gray(17, 14, seed + 100);
        assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn ssim_and_psnr_fixtures() {
    let zero = ImageBuf::filled(32, 32, 1, 0.0).unwrap();
    let one = ImageBuf::filled(32, 32, 1, 1.0).unwrap();
    assert!((ssim(&zero, &one).unwrap() - 9.999e-5).abs() < 1e-7);
    assert_eq!(psnr(&zero, &zero).unwrap(), f64::INFINITY);
    assert!(psnr(&zero, &one).unwrap().abs() < 1e-12);
    let base = random_gray(20, 20, 1);
    let shifted = ImageBuf::new(
        20,
        20,
        1,
        base.data().iter().map(|&v| if v > 0.5 { v - 1.0 / 255.0 } else { v + 1.0 / 255.0 }).collect(),
    )
    .unwrap();
    assert!((psnr(&base, &shifted).unwrap() - 48.1308).abs() < 1e-3);
}

#[test]
fn psnr_decreases_with_noise_amplitude() {
    let base = ImageBuf::filled(16, 16, 1, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pattern: Vec<f64> = (0..256).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let mut last = f64::INFINITY;
    for amp in [0.01, 0.05, 0.1, 0.2, 0.4] {
        let noisy = ImageBuf::new(16, 16, 1, pattern.iter().map(|s| 0.5 + amp * s).collect()).unwrap();
        let p = psnr(&base, &noisy).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn fft_matches_direct_dft() {
    for (w, h) in [(8, 8), (6, 5), (7, 12)] {
        let img = random_gray(w, h, (w * h) as u64);
        let fast = fft2d(&img).unwrap();
        let slow = naive_dft(img.data(), w, h);
        for v in 0..h {
            for u in 0..w {
                let (re, im) = slow[v * w + u];
                let c = fast.get(u, v);
                assert!((c.re - re).abs() < 1e-9 && (c.im - im).abs() < 1e-9);
            }
        }
        let other = random_gray(w, h, 77);
        let fd = fft_distance(&img, &other).unwrap();
        assert!((fd - naive_fft_distance(img.data(), other.data(), w, h)).abs() < 1e-9);
    }
}

#[test]
fn fft_examples() {
    let c = ImageBuf::filled(6, 4, 1, 0.25).unwrap();
    let s = fft2d(&c).unwrap();
    assert!((s.get(0, 0).re - 0.25 * 24.0).abs() < 1e-12);
    assert!(s.data.iter().skip(1).all(|z| z.norm() < 1e-12));

    let delta = ImageBuf::from_fn(5, 5, |x, y| if x == 0 && y == 0 { 1.0 } else { 0.0 });
    assert!(fft2d(&delta).unwrap().data.iter().all(|z| (z.re - 1.0).abs() < 1e-12 && z.im.abs() < 1e-12));

    let (a, b) = (random_gray(8, 8, 1), random_gray(8, 8, 2));
    let sum = ImageBuf::from_clamped(8, 8, 1, a.data().iter().zip(b.data()).map(|(p, q)| (p + q) / 2.0).collect()).unwrap();
    let (fa, fb, fs) = (fft2d(&a).unwrap(), fft2d(&b).unwrap(), fft2d(&sum).unwrap());
    for i in 0..64 {
        assert!((fs.data[i] - (fa.data[i] + fb.data[i]) / 2.0).norm() < 1e-9);
    }
}

#[test]
fn fft_distance_of_offset_is_the_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (w, h) in [(8, 8), (9, 7), (16, 3)] {
        let base: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.25..0.75)).collect();
        for k in [0.1, -0.2, 0.25] {
            let a = ImageBuf::new(w, h, 1, base.clone()).unwrap();
            let b = ImageBuf::new(w, h, 1, base.iter().map(|v| v + k).collect()).unwrap();
            assert!((fft_distance(&a, &b).unwrap() - f64::abs(k)).abs() < 1e-9);
        }
    }
}

#[test]
fn fft_distance_triangle_inequality() {
    for seed in 0..100 {
        let a = random_gray(9, 7, 3 * seed);
        let b = random_gray(9, 7, 3 * seed + 1);
        let c = random_gray(9, 7, 3 * seed + 2);
        let ab = fft_distance(&a, &b).unwrap();
        let bc = fft_distance(&b, &c).unwrap();
        let ac = fft_distance(&a, &c).unwrap();
        assert!(ac <= ab + bc + 1e-9);
        assert!((ab - fft_distance(&b, &a).unwrap()).abs() < 1e-12);
        assert_eq!(fft_distance(&a, &a).unwrap(), 0.0);
    }
}

#[test]
fn spectrum_image_properties() {
    let c = ImageBuf::filled(8, 6, 1, 0.5).unwrap();
    let s = spectrum_image(&c).unwrap();
    let bright: Vec<usize> = (0..48).filter(|&i| s.data()[i] > 1e-9).collect();
    assert_eq!(bright, vec![3 * 8 + 4]);

    for (w, h) in [(8, 8), (9, 9)] {
        let s = spectrum_image(&random_gray(w, h, 5)).unwrap();
        assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // The DC bin sits at (w/2, h/2); for odd sizes the spectrum is
        // symmetric about that pixel, for even sizes about it as well once
        // the unpaired Nyquist row and column are left out.
        let (cx, cy) = ((w / 2) as isize, (h / 2) as isize);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (mx, my) = (2 * cx - x, 2 * cy - y);
                if mx < 0 || my < 0 || mx >= w as isize || my >= h as isize {
                    continue;
                }
                let p = s.get(x as usize, y as usize, 0);
                let q = s.get(mx as usize, my as usize, 0);
                assert!((p - q).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn diff_map_marks_misses_and_noise() {
    let gt = LineDrawing::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let pred = LineDrawing::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let m = diff_map(&gt, &pred).unwrap();
    let px = |i: usize| [m.get(i % 2, i / 2, 0), m.get(i % 2, i / 2, 1), m.get(i % 2, i / 2, 2)];
    assert_eq!(px(0), [1.0, 0.0, 0.0]);
    assert_eq!(px(1), [0.0, 0.0, 1.0]);
    assert_eq!(px(2), [1.0, 1.0, 1.0]);
    assert_eq!(px(3), [1.0, 1.0, 1.0]);
    assert!(diff_map(&gt, &LineDrawing::blank(3, 2)).is_err());
}

#[test]
fn batch_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    for (i, name) in ["b.png", "a.png"].iter().enumerate() {
        let img = random_gray(16, 16, i as u64);
        save_image(&img, pred.join(name)).unwrap();
        save_image(&img, gt.join(name)).unwrap();
    }
    let report = evaluate_batch(&pred, &gt).unwrap();
    assert_eq!(report.records.iter().map(|r| r.file.as_str()).collect::<Vec<_>>(), ["a.png", "b.png"]);
    assert!((report.aggregate.ssim - 1.0).abs() < 1e-9);
    assert_eq!(report.aggregate.psnr, f64::INFINITY);
    assert_eq!(report.aggregate.fft_distance, 0.0);
    assert!(report.to_table().contains("FID: not supported"));

    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"psnr\":\"inf\""));
    let back: BatchReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);

    let other = random_gray(16, 16, 9);
    save_image(&other, pred.join("a.png")).unwrap();
    let single = evaluate_batch(&pred, &gt).unwrap();
    let direct = evaluate_pair(&flowline::io::load_image(pred.join("a.png")).unwrap(), &flowline::io::load_image(gt.join("a.png")).unwrap()).unwrap();
    assert_eq!(single.records[0].report, direct);

    std::fs::remove_file(gt.join("b.png")).unwrap();
    match evaluate_batch(&pred, &gt) {
        Err(Error::Unmatched(msg)) => assert!(msg.contains("b.png")),
        other => panic!("expected an unmatched-file error, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_is_symmetric_and_bounded(seed: u64) {
        let (a, b) = (random_gray(12, 12, seed), random_gray(12, 12, seed ^ 0xabcdef));
        let s = ssim(&a, &b).unwrap();
        prop_assert!(s <= 1.0 + 1e-12);
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }
}
