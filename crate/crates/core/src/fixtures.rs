//! Synthetic test images used by the examples, tests and the guide.

use crate::raster::ImageBuf;

/// Black left half, white right half. The edge lies between columns
/// `width / 2 - 1` and `width / 2`.
pub fn step_edge(width: usize, height: usize) -> ImageBuf {
    ImageBuf::from_fn(width, height, |x, _| if x < width / 2 { 0.0 } else { 1.0 })
}

/// Black disk of `radius` centred in a white square.
pub fn disk(size: usize, radius: f64) -> ImageBuf {
    let c = (size as f64 - 1.0) / 2.0;
    ImageBuf::from_fn(size, size, |x, y| {
        let d = (x as f64 - c).hypot(y as f64 - c);
        if d <= radius {
            0.0
        } else {
            1.0
        }
    })
}

/// Black vertical band over the middle half: one edge at `width / 4` and one
/// at `3 * width / 4`, so each half of the image holds exactly one edge.
pub fn two_edges(width: usize, height: usize) -> ImageBuf {
    ImageBuf::from_fn(width, height, |x, _| {
        if x >= width / 4 && x < 3 * width / 4 {
            0.0
        } else {
            1.0
        }
    })
}

/// Low-contrast checkerboard (4-pixel cells, 0.45 / 0.55) in the left half,
/// a black band and then white in the right half. Fine filters pick up every
/// cell; coarse ones average the texture away and keep only the band edge.
pub fn textured(width: usize, height: usize) -> ImageBuf {
    const CELL: usize = 4;
    ImageBuf::from_fn(width, height, |x, y| {
        if x < width / 2 {
            if ((x / CELL) + (y / CELL)).is_multiple_of(2) {
                0.45
            } else {
                0.55
            }
        } else if x < 3 * width / 4 {
            0.0
        } else {
            1.0
        }
    })
}

/// Rotates an image by 90° counterclockwise (as displayed, y pointing down):
/// source pixel `(x, y)` lands at `(y, width - 1 - x)`.
pub fn rotate90(img: &ImageBuf) -> ImageBuf {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut data = vec![0.0; w * h * c];
    for y in 0..h {
        for x in 0..w {
            let (nx, ny) = (y, w - 1 - x);
            for ch in 0..c {
                data[(ny * h + nx) * c + ch] = img.get(x, y, ch);
            }
        }
    }
    ImageBuf::new(h, w, c, data).expect("rotation preserves sample count")
}

/// Seeded RGB "photograph": a flat background with a few overlapping
/// rectangles and disks in random colours.
pub fn shapes_photo(size: usize, seed: u64) -> ImageBuf {
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut colour = || [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    let background = colour();
    let fills: Vec<[f64; 3]> = (0..4).map(|_| colour()).collect();
    let s = size as f64;
    let shapes: Vec<(bool, [f64; 4])> = (0..4)
        .map(|_| {
            let round = rng.gen_bool(0.5);
            let cx = rng.gen_range(0.15..0.85) * s;
            let cy = rng.gen_range(0.15..0.85) * s;
            let a = rng.gen_range(0.1..0.3) * s;
            let b = rng.gen_range(0.1..0.3) * s;
            (round, [cx, cy, a, b])
        })
        .collect();
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut c = background;
            for ((round, [cx, cy, a, b]), fill) in shapes.iter().zip(&fills) {
                let inside = if *round {
                    (px - cx).hypot(py - cy) <= *a
                } else {
                    (px - cx).abs() <= *a && (py - cy).abs() <= *b
                };
                if inside {
                    c = *fill;
                }
            }
            data.extend_from_slice(&c);
        }
    }
    ImageBuf::new(size, size, 3, data).expect("colours are in range")
}
