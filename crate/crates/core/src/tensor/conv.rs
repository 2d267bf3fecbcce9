//! One-dimensional correlation along an image axis with reflect padding.

/// Mirror an out-of-range index back into `0..n` without repeating the edge
/// sample (`-1 -> 1`, `n -> n-2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Along a row (the last axis).
    Horizontal,
    /// Along a column (the second-to-last axis).
    Vertical,
}

/// Correlate each `h x w` plane of `input` with `kernel` along `axis`.
///
/// Output sample `o` is `sum_t kernel[t] * input[reflect(o + origin + t)]`.
/// With `adjoint` set the transpose map is applied instead, which is the
/// gradient of the forward map.
pub fn conv1d(
    input: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    origin: isize,
    axis: Axis,
    adjoint: bool,
) -> Vec<f64> {
    assert_eq!(input.len(), planes * h * w);
    let mut out = vec![0.0; input.len()];
    let (len, stride) = match axis {
        Axis::Horizontal => (w, 1),
        Axis::Vertical => (h, w),
    };
    // Precompute the reflected source index for every (position, tap).
    let taps: Vec<usize> = (0..len)
        .flat_map(|o| {
            kernel
                .iter()
                .enumerate()
                .map(move |(t, _)| reflect_index(o as isize + origin + t as isize, len))
        })
        .collect();
    for p in 0..planes {
        let base = p * h * w;
        let lines = match axis {
            Axis::Horizontal => h,
            Axis::Vertical => w,
        };
        for line in 0..lines {
            let start = match axis {
                Axis::Horizontal => base + line * w,
                Axis::Vertical => base + line,
            };
            for o in 0..len {
                let oi = start + o * stride;
                for (t, &k) in kernel.iter().enumerate() {
                    let si = start + taps[o * kernel.len() + t] * stride;
                    if adjoint {
                        out[si] += k * input[oi];
                    } else {
                        out[oi] += k * input[si];
                    }
                }
            }
        }
    }
    out
}
