//! Measurements on line drawings: stroke width and stroke count.

use std::ops::Range;

use crate::raster::LineDrawing;

/// Mean length of horizontal ink runs inside a window. Runs are clipped to
/// the window. Returns 0 when the window holds no ink.
pub fn mean_stroke_width(d: &LineDrawing, xs: Range<usize>, ys: Range<usize>) -> f64 {
    let mut total = 0usize;
    let mut runs = 0usize;
    for y in ys {
        let mut run = 0usize;
        for x in xs.clone() {
            if d.is_ink(x, y) {
                run += 1;
            } else if run > 0 {
                total += run;
                runs += 1;
                run = 0;
            }
        }
        if run > 0 {
            total += run;
            runs += 1;
        }
    }
    if runs == 0 {
        0.0
    } else {
        total as f64 / runs as f64
    }
}

/// Number of 8-connected ink components.
pub fn ink_components(d: &LineDrawing) -> usize {
    let (w, h) = (d.width(), d.height());
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..w * h {
        if seen[start] || !d.is_ink(start % w, start / w) {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && d.is_ink(nx as usize, ny as usize) {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}
