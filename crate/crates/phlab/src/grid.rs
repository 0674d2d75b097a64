//! Exact traversal of straight segments across a square grid on the torus.
//!
//! A segment is given by a wrapped start point, a unit direction in the
//! plane, and a length (possibly much larger than 1, wrapping many times).
//! The traversal visits every grid cell the segment passes through, with the
//! exact sub-length spent inside, by merging the two arithmetic progressions
//! of x- and y-boundary crossing times.

/// Visit `(cell_index, sub_length)` for each cell crossed by the segment.
/// Cells use the half-open convention `[i/n, (i+1)/n) × [j/n, (j+1)/n)` and
/// are indexed `j * n + i`.
pub(crate) fn traverse_segment(
    n: usize,
    start: (f64, f64),
    dir: (f64, f64),
    len: f64,
    visit: &mut dyn FnMut(usize, f64),
) {
    debug_assert!(len >= 0.0);
    if len == 0.0 {
        return;
    }
    let nf = n as f64;
    let (x0, y0) = (start.0 - start.0.floor(), start.1 - start.1.floor());
    let (dx, dy) = dir;

    let mut i = ((x0 * nf).floor() as i64).clamp(0, n as i64 - 1);
    let mut j = ((y0 * nf).floor() as i64).clamp(0, n as i64 - 1);

    // Next crossing times along each axis, advanced by fixed steps.
    let (mut tx, step_x, si) = if dx > 0.0 {
        let boundary = (i + 1) as f64 / nf;
        (((boundary - x0) / dx).max(0.0), 1.0 / (nf * dx), 1i64)
    } else if dx < 0.0 {
        let boundary = i as f64 / nf;
        (((x0 - boundary) / -dx).max(0.0), 1.0 / (nf * -dx), -1i64)
    } else {
        (f64::INFINITY, f64::INFINITY, 0i64)
    };
    let (mut ty, step_y, sj) = if dy > 0.0 {
        let boundary = (j + 1) as f64 / nf;
        (((boundary - y0) / dy).max(0.0), 1.0 / (nf * dy), 1i64)
    } else if dy < 0.0 {
        let boundary = j as f64 / nf;
        (((y0 - boundary) / -dy).max(0.0), 1.0 / (nf * -dy), -1i64)
    } else {
        (f64::INFINITY, f64::INFINITY, 0i64)
    };

    let wrap = |k: i64| -> i64 { k.rem_euclid(n as i64) };
    let mut t = 0.0f64;
    loop {
        let cell = (wrap(j) as usize) * n + wrap(i) as usize;
        let next = tx.min(ty);
        if next >= len {
            visit(cell, len - t);
            return;
        }
        visit(cell, next - t);
        t = next;
        if tx <= ty {
            i += si;
            tx += step_x;
        }
        if ty <= next {
            j += sj;
            ty += step_y;
        }
    }
}
