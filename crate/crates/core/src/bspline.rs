//! Cubic B-spline interpolation with mirror-symmetric boundaries.
//!
//! Samples are first converted to spline coefficients by the causal and
//! anticausal recursive prefilter, after which any fractional position is
//! evaluated from four coefficients per axis. The interpolant passes exactly
//! through the samples and reproduces cubic polynomials.

use std::ops::{Add, Mul, Sub};

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;

/// Initialization tolerance of the recursive prefilter.
pub const PREFILTER_TOLERANCE: f64 = 1e-12;

const POLE: f64 = -0.267_949_192_431_122_7; // sqrt(3) - 2
const GAIN: f64 = 6.0;

/// Values the prefilter and evaluator operate on.
pub trait SplineValue:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
}

impl SplineValue for f64 {}
impl SplineValue for Complex64 {}

/// Cubic B-spline basis weights for the coefficients at `i-1, i, i+1, i+2`
/// given the fractional offset `t = x - i` in `[0, 1)`.
#[inline(always)]
pub fn weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let omt = 1.0 - t;
    [
        omt * omt * omt / 6.0,
        (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0,
        (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0,
        t3 / 6.0,
    ]
}

/// Folds an integer index into `[0, n)` by whole-sample mirroring.
#[inline]
pub fn mirror_index(k: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = k.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

/// Converts samples to cubic B-spline coefficients in place.
pub fn prefilter_in_place<T: SplineValue>(c: &mut [T]) {
    let n = c.len();
    if n < 2 {
        return;
    }
    for v in c.iter_mut() {
        *v = *v * GAIN;
    }
    c[0] = causal_init(c);
    for k in 1..n {
        c[k] = c[k] + c[k - 1] * POLE;
    }
    c[n - 1] = (c[n - 1] + c[n - 2] * POLE) * (POLE / (POLE * POLE - 1.0));
    for k in (0..n - 1).rev() {
        c[k] = (c[k + 1] - c[k]) * POLE;
    }
}

fn causal_init<T: SplineValue>(c: &[T]) -> T {
    let n = c.len();
    let horizon = (PREFILTER_TOLERANCE.ln() / POLE.abs().ln()).ceil() as usize;
    if horizon < n {
        let mut zk = POLE;
        let mut sum = c[0];
        for v in c.iter().take(horizon).skip(1) {
            sum = sum + *v * zk;
            zk *= POLE;
        }
        sum
    } else {
        // Exact sum over the mirrored, periodized signal.
        let zn = POLE.powi(n as i32 - 1);
        let iz = 1.0 / POLE;
        let mut z2n = zn * zn * iz;
        let mut zk = POLE;
        let mut sum = c[0] + c[n - 1] * zn;
        for v in c.iter().take(n - 1).skip(1) {
            sum = sum + *v * (zk + z2n);
            zk *= POLE;
            z2n *= iz;
        }
        sum * (1.0 / (1.0 - zn * zn))
    }
}

/// Prefiltered 1-D signal, padded so evaluation needs no index folding.
#[derive(Debug, Clone)]
pub struct Spline1<T> {
    /// Coefficients for indices `-1 ..= n + 1`.
    padded: Vec<T>,
    len: usize,
}

impl<T: SplineValue> Spline1<T> {
    pub fn new(samples: &[T]) -> Self {
        let mut c = samples.to_vec();
        prefilter_in_place(&mut c);
        let n = c.len();
        let mut padded = Vec::with_capacity(n + 3);
        if n == 0 {
            return Self { padded, len: 0 };
        }
        padded.push(c[mirror_index(-1, n)]);
        padded.extend_from_slice(&c);
        padded.push(c[mirror_index(n as isize, n)]);
        padded.push(c[mirror_index(n as isize + 1, n)]);
        Self { padded, len: n }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Value at fractional sample position `x`, or `None` outside `[0, n-1]`.
    #[inline(always)]
    pub fn eval(&self, x: f64) -> Option<T> {
        if !(x >= 0.0 && x <= (self.len as f64 - 1.0)) {
            return None;
        }
        let i = x.floor();
        let t = x - i;
        let i = i as usize;
        let w = weights(t);
        // padded[i] holds coefficient i - 1
        let c = &self.padded[i..i + 4];
        Some(c[0] * w[0] + c[1] * w[1] + c[2] * w[2] + c[3] * w[3])
    }

    /// Raw padded coefficients; `coefficients()[k]` is coefficient `k - 1`.
    pub fn padded_coefficients(&self) -> &[T] {
        &self.padded
    }
}

/// Prefiltered image for 2-D cubic B-spline sampling with mirror extension.
#[derive(Debug, Clone)]
pub struct Spline2 {
    coeffs: Array2<f64>,
}

impl Spline2 {
    pub fn new(image: ArrayView2<'_, f64>) -> Self {
        let mut coeffs = image.to_owned();
        let mut buf = Vec::new();
        for axis in [Axis(0), Axis(1)] {
            for mut lane in coeffs.lanes_mut(axis) {
                buf.clear();
                buf.extend(lane.iter().copied());
                prefilter_in_place(&mut buf);
                for (dst, src) in lane.iter_mut().zip(&buf) {
                    *dst = *src;
                }
            }
        }
        Self { coeffs }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs.dim()
    }

    /// Value at fractional (row, col); positions outside the image are
    /// mirror-extended.
    pub fn eval(&self, row: f64, col: f64) -> f64 {
        let (nr, nc) = self.coeffs.dim();
        let ri = row.floor();
        let ci = col.floor();
        let wr = weights(row - ri);
        let wc = weights(col - ci);
        let ri = ri as isize;
        let ci = ci as isize;
        let interior = ri >= 1 && ci >= 1 && ri + 2 < nr as isize && ci + 2 < nc as isize;
        let mut acc = 0.0;
        if interior {
            let (r0, c0) = (ri as usize - 1, ci as usize - 1);
            for (a, wa) in wr.iter().enumerate() {
                let row = self.coeffs.row(r0 + a);
                let s = row[c0] * wc[0] + row[c0 + 1] * wc[1] + row[c0 + 2] * wc[2]
                    + row[c0 + 3] * wc[3];
                acc += wa * s;
            }
        } else {
            for (a, wa) in wr.iter().enumerate() {
                let r = mirror_index(ri - 1 + a as isize, nr);
                let mut s = 0.0;
                for (b, wb) in wc.iter().enumerate() {
                    let c = mirror_index(ci - 1 + b as isize, nc);
                    s += wb * self.coeffs[[r, c]];
                }
                acc += wa * s;
            }
        }
        acc
    }
}
