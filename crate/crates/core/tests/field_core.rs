use flowline::io::{decode_flo, decode_image, encode_flo, encode_png, load_image, read_flo, save_drawing, save_image, write_flo, FLO_MAGIC};
use flowline::{Error, FlowField, ImageBuf, LineDrawing};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(w: usize, h: usize, seed: u64) -> FlowField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tangents = Vec::new();
    let mut mags = Vec::new();
    for _ in 0..w * h {
        if rng.gen_bool(0.2) {
            tangents.push([0.0, 0.0]);
        } else {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            tangents.push([a.cos(), a.sin()]);
        }
        mags.push(rng.gen_range(0.0..1.0));
    }
    FlowField::new(w, h, tangents, mags).unwrap()
}

#[test]
fn white_png_loads_as_ones() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("white.png");
    image::GrayImage::from_pixel(2, 2, image::Luma([255])).save(&p).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
    assert!(img.data().iter().all(|&v| v == 1.0));
}

#[test]
fn gray_128_is_scaled_by_255() {
    let mut bytes = Vec::new();
    image::GrayImage::from_pixel(1, 1, image::Luma([128]))
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .unwrap();
    let img = decode_image(&bytes).unwrap();
    assert!((img.data()[0] - 128.0 / 255.0).abs() < 1e-12);
}

#[test]
fn truncated_and_missing_files_error() {
    let png = encode_png(&ImageBuf::filled(8, 8, 3, 0.3).unwrap()).unwrap();
    assert!(matches!(decode_image(&png[..png.len() / 2]), Err(Error::Decode(_))));
    assert!(matches!(load_image("/nonexistent/x.png"), Err(Error::Io { .. })));
}

#[test]
fn png_round_trip_cases() {
    let dir = tempfile::tempdir().unwrap();
    let zeros = ImageBuf::filled(5, 3, 3, 0.0).unwrap();
    save_image(&zeros, dir.path().join("z.png")).unwrap();
    assert_eq!(load_image(dir.path().join("z.png")).unwrap(), zeros);

    let half = ImageBuf::filled(4, 4, 1, 0.5).unwrap();
    save_image(&half, dir.path().join("h.png")).unwrap();
    let back = load_image(dir.path().join("h.png")).unwrap();
    assert!(back.data().iter().all(|v| (v - 0.5).abs() <= 1.0 / 510.0));

    assert!(save_image(&half, dir.path().join("missing/dir/h.png")).is_err());
}

#[test]
fn drawing_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = LineDrawing::new(3, 2, vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    save_drawing(&d, dir.path().join("d.png")).unwrap();
    let back = LineDrawing::from_image(&load_image(dir.path().join("d.png")).unwrap(), 0.5);
    assert_eq!(back, d);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn png_round_trip_within_half_step(w in 1usize..9, h in 1usize..9, c in prop::sample::select(vec![1usize, 3]), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = ImageBuf::new(w, h, c, (0..w * h * c).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap();
        let back = decode_image(&encode_png(&img).unwrap()).unwrap();
        prop_assert_eq!(back.channels(), c);
        for (a, b) in img.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn grayscale_is_idempotent(w in 1usize..6, h in 1usize..6, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = ImageBuf::new(w, h, 3, (0..w * h * 3).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap();
        let g = img.to_grayscale();
        prop_assert_eq!(g.to_grayscale(), g);
    }

    #[test]
    fn resize_keeps_range_and_shape(w in 1usize..8, h in 1usize..8, nw in 1usize..12, nh in 1usize..12, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = ImageBuf::new(w, h, 1, (0..w * h).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap();
        let r = img.resize(nw, nh).unwrap();
        prop_assert_eq!((r.width(), r.height()), (nw, nh));
        prop_assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn flo_round_trip_is_bit_exact(w in 1usize..10, h in 1usize..10, seed: u64) {
        let f = random_field(w, h, seed);
        let (v, m) = encode_flo(&f);
        let back = decode_flo(&v, Some(&m)).unwrap();
        let (v2, m2) = encode_flo(&back);
        prop_assert_eq!(v, v2);
        prop_assert_eq!(m, m2);
    }
}

#[test]
fn resize_examples() {
    let img = ImageBuf::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
    assert_eq!(img.resize(3, 1).unwrap().data(), &[0.0, 0.5, 1.0]);
    let c = ImageBuf::filled(5, 7, 1, 0.5).unwrap();
    assert!(c.resize(13, 2).unwrap().data().iter().all(|&v| v == 0.5));
    assert_eq!(c.resize(5, 7).unwrap(), c);
    assert!(c.resize(0, 3).is_err());
}

#[test]
fn grayscale_examples() {
    let white = ImageBuf::new(1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
    assert!((white.to_grayscale().data()[0] - 1.0).abs() < 1e-12);
    let red = ImageBuf::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
    assert!((red.to_grayscale().data()[0] - 0.299).abs() < 1e-12);
    let gray = ImageBuf::new(2, 1, 1, vec![0.2, 0.7]).unwrap();
    assert_eq!(gray.to_grayscale(), gray);
}

#[test]
fn flo_file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let f = random_field(8, 8, 7);
    let p = dir.path().join("f.flo");
    write_flo(&f, &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], &FLO_MAGIC.to_le_bytes());
    let back = read_flo(&p).unwrap();
    let p2 = dir.path().join("g.flo");
    write_flo(&back, &p2).unwrap();
    assert_eq!(std::fs::read(&p2).unwrap(), bytes);

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(&0.0f32.to_le_bytes());
    assert!(matches!(decode_flo(&bad, None), Err(Error::BadMagic(_))));

    let mut short = Vec::new();
    short.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    short.extend_from_slice(&4i32.to_le_bytes());
    short.extend_from_slice(&4i32.to_le_bytes());
    short.extend(std::iter::repeat_n(0u8, 3 * 8));
    assert!(matches!(decode_flo(&short, None), Err(Error::SizeMismatch { .. })));
}

#[test]
fn field_invariants_are_enforced() {
    assert!(FlowField::new(1, 1, vec![[0.5, 0.0]], vec![0.0]).is_err());
    assert!(FlowField::new(1, 1, vec![[1.0, 0.0]], vec![1.5]).is_err());
    assert!(FlowField::new(1, 1, vec![[1.0 + 5e-5, 0.0]], vec![1.0]).is_ok());
    assert!(ImageBuf::new(1, 1, 1, vec![1.5]).is_err());
    assert!(ImageBuf::new(1, 1, 4, vec![0.0; 4]).is_err());
}

#[test]
fn dimensions_come_from_the_header() {
    let png = encode_png(&ImageBuf::filled(7, 3, 1, 0.2).unwrap()).unwrap();
    assert_eq!(flowline::io::image_dimensions(&png).unwrap(), (7, 3));
    assert!(flowline::io::image_dimensions(b"not an image").is_err());
}
