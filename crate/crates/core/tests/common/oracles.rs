//! Brute-force reference maximizers, independent of the KKT enumeration.

/// Points `lo, lo + step, ...` up to and including `hi`.
pub fn grid(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / step).floor() as usize;
    (0..=n).map(move |k| lo + k as f64 * step).chain(std::iter::once(hi))
}

pub fn grid_max_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    grid(lo, hi, step).map(|u| (f(u), u)).fold((f64::NEG_INFINITY, lo), |best, c| if c.0 > best.0 { c } else { best })
}

/// Exact maximum of `a·t² + b·t` over `[lo, hi]`.
pub fn exact_max_1d(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    let f = |t: f64| a * t * t + b * t;
    let mut best = f(lo).max(f(hi));
    if a < 0.0 {
        let t = -b / (2.0 * a);
        if t > lo && t < hi {
            best = best.max(f(t));
        }
    }
    best
}

/// Half-plane `n·u + offset >= 0` in two dimensions.
pub type Cut = ([f64; 2], f64);

/// Maximum of `uᵀQu + q·u + c` over a box cut by half-planes: a grid over
/// `u0` and the exact one-dimensional maximum over `u1` at each grid value.
pub fn grid_max_2d(q_mat: [[f64; 2]; 2], q: [f64; 2], c: f64, lo: [f64; 2], hi: [f64; 2], cuts: &[Cut], step: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for u0 in grid(lo[0], hi[0], step) {
        let (mut l1, mut h1) = (lo[1], hi[1]);
        let mut empty = false;
        for (n, off) in cuts {
            let rest = n[0] * u0 + off;
            if n[1] > 0.0 {
                l1 = l1.max(-rest / n[1]);
            } else if n[1] < 0.0 {
                h1 = h1.min(-rest / n[1]);
            } else if rest < 0.0 {
                empty = true;
            }
        }
        if empty || l1 > h1 {
            continue;
        }
        let a = q_mat[1][1];
        let b = (q_mat[0][1] + q_mat[1][0]) * u0 + q[1];
        let base = q_mat[0][0] * u0 * u0 + q[0] * u0 + c;
        best = best.max(base + exact_max_1d(a, b, l1, h1));
    }
    best
}
