//! Brute-force coverage painter for a pair of dilated 3x3 convolutions.
//!
//! The second convolution's taps sit at -r2, 0, r2 on each axis. The first
//! convolution's range (the span of its own taps at -r1, 0, r1) is centered in
//! every gap between adjacent second-stage taps. The pair covers when every
//! pixel of the second convolution's span is painted exactly once.

pub const GRID: usize = 33;

/// Per-axis paint counts over `GRID` cells centered at `GRID / 2`.
fn paint_axis(r1: usize, r2: usize) -> Option<Vec<u32>> {
    let c = (GRID / 2) as isize;
    let (r1, r2) = (r1 as isize, r2 as isize);
    let mut counts = vec![0u32; GRID];
    let second = [-r2, 0, r2];
    let first = [-r1, 0, r1];
    for t in second {
        counts[(c + t) as usize] += 1;
    }
    for pair in second.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if (a + b) % 2 != 0 {
            return None;
        }
        let mid = (a + b) / 2;
        let lo = first.iter().min().unwrap();
        let hi = first.iter().max().unwrap();
        for off in *lo..=*hi {
            let p = c + mid + off;
            if !(0..GRID as isize).contains(&p) {
                return None;
            }
            counts[p as usize] += 1;
        }
    }
    Some(counts)
}

/// Paints the 2-D grid and reports whether the span is covered exactly once.
pub fn covers(r1: usize, r2: usize) -> bool {
    let Some(axis) = paint_axis(r1, r2) else {
        return false;
    };
    let c = GRID / 2;
    let mut grid = vec![[0u32; GRID]; GRID];
    for (y, row) in grid.iter_mut().enumerate() {
        for (x, cell) in row.iter_mut().enumerate() {
            *cell = axis[y] * axis[x];
        }
    }
    (c - r2..=c + r2).all(|y| (c - r2..=c + r2).all(|x| grid[y][x] == 1))
}
