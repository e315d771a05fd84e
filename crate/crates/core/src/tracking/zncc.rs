//! Zero-normalized cross-correlation surfaces.
//!
//! Lags are `[row, col]` pairs; a positive lag pairs `a[p]` with `b[p + lag]`,
//! so content that moves down and right between the two windows peaks at a
//! positive lag.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// ZNCC values over a rectangle of integer lags.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSurface {
    /// `values[[i, j]]` is the correlation at lag `lag_min + [i, j]`.
    pub values: Array2<f64>,
    pub lag_min: [isize; 2],
    pub peak_lag: [isize; 2],
}

impl CorrelationSurface {
    pub fn from_values(values: Array2<f64>, lag_min: [isize; 2]) -> Self {
        let (i, j) = argmax_lowest(&values);
        Self {
            peak_lag: [lag_min[0] + i as isize, lag_min[1] + j as isize],
            values,
            lag_min,
        }
    }

    pub fn value_at(&self, lag: [isize; 2]) -> Option<f64> {
        let i = lag[0] - self.lag_min[0];
        let j = lag[1] - self.lag_min[1];
        if i < 0 || j < 0 {
            return None;
        }
        self.values.get((i as usize, j as usize)).copied()
    }

    pub fn peak_value(&self) -> f64 {
        self.value_at(self.peak_lag).unwrap_or(f64::NAN)
    }

    /// Peak position as an index into `values`.
    pub fn peak_index(&self) -> (usize, usize) {
        (
            (self.peak_lag[0] - self.lag_min[0]) as usize,
            (self.peak_lag[1] - self.lag_min[1]) as usize,
        )
    }
}

/// Index of the maximum, ties resolved towards the lowest row, then column.
/// NaN entries are ignored.
pub fn argmax_lowest(values: &Array2<f64>) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_v = f64::NEG_INFINITY;
    for ((i, j), &v) in values.indexed_iter() {
        if v > best_v {
            best_v = v;
            best = (i, j);
        }
    }
    best
}

/// Smallest integer `>= n` with no prime factor above 5.
pub fn fft_size(n: usize) -> usize {
    let mut k = n.max(1);
    loop {
        let mut r = k;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return k;
        }
        k += 1;
    }
}

/// Rectangle sums of `v - offset` and its square.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    sum: Array2<f64>,
    sum_sq: Array2<f64>,
}

impl IntegralImage {
    pub fn new(img: ArrayView2<'_, f64>, offset: f64) -> Self {
        let (h, w) = img.dim();
        let mut sum = Array2::zeros((h + 1, w + 1));
        let mut sum_sq = Array2::zeros((h + 1, w + 1));
        for i in 0..h {
            let mut row = 0.0;
            let mut row_sq = 0.0;
            for j in 0..w {
                let v = img[[i, j]] - offset;
                row += v;
                row_sq += v * v;
                sum[[i + 1, j + 1]] = sum[[i, j + 1]] + row;
                sum_sq[[i + 1, j + 1]] = sum_sq[[i, j + 1]] + row_sq;
            }
        }
        Self { sum, sum_sq }
    }

    /// `(Σv, Σv²)` over rows `r0..r0+h`, columns `c0..c0+w`.
    #[inline]
    pub fn rect(&self, r0: usize, c0: usize, h: usize, w: usize) -> (f64, f64) {
        let (r1, c1) = (r0 + h, c0 + w);
        let s = self.sum[[r1, c1]] - self.sum[[r0, c1]] - self.sum[[r1, c0]] + self.sum[[r0, c0]];
        let q = self.sum_sq[[r1, c1]] - self.sum_sq[[r0, c1]] - self.sum_sq[[r1, c0]]
            + self.sum_sq[[r0, c0]];
        (s, q)
    }
}

fn mean(v: ArrayView2<'_, f64>) -> f64 {
    v.sum() / v.len() as f64
}

/// Variance below this fraction of the raw second moment counts as flat.
const FLAT: f64 = 1e-13;

#[inline]
fn ratio(num: f64, var_a: f64, raw_a: f64, var_b: f64, raw_b: f64) -> f64 {
    if var_a <= FLAT * raw_a || var_b <= FLAT * raw_b || var_a <= 0.0 || var_b <= 0.0 {
        0.0
    } else {
        num / (var_a * var_b).sqrt()
    }
}

/// Reusable FFT plans and buffers for correlation.
pub struct ZnccEngine {
    planner: FftPlanner<f64>,
    buf: Vec<Complex64>,
    tmp: Vec<Complex64>,
    prod: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Default for ZnccEngine {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for ZnccEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ZnccEngine").finish_non_exhaustive()
    }
}

struct Plans {
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
}

impl ZnccEngine {
    pub fn new() -> Self {
        Self {
            planner: FftPlanner::new(),
            buf: Vec::new(),
            tmp: Vec::new(),
            prod: Vec::new(),
            scratch: Vec::new(),
        }
    }

    fn plans(&mut self, n: usize, m: usize) -> Plans {
        Plans {
            rows: self.planner.plan_fft_forward(m),
            cols: self.planner.plan_fft_forward(n),
            rows_inv: self.planner.plan_fft_inverse(m),
            cols_inv: self.planner.plan_fft_inverse(n),
        }
    }

    /// Circular cross-correlation `c[k] = Σ_p a[p] b[p + k]` of two real
    /// arrays zero-padded to `n × m`. Returned row-major, `n × m`.
    fn correlate(&mut self, a: ArrayView2<'_, f64>, a_off: f64, b: ArrayView2<'_, f64>, b_off: f64, n: usize, m: usize) -> &[Complex64] {
        let plans = self.plans(n, m);
        let len = n * m;
        self.buf.clear();
        self.buf.resize(len, Complex64::new(0.0, 0.0));
        for ((i, j), v) in a.indexed_iter() {
            self.buf[i * m + j].re = v - a_off;
        }
        for ((i, j), v) in b.indexed_iter() {
            self.buf[i * m + j].im = v - b_off;
        }
        self.tmp.resize(len, Complex64::new(0.0, 0.0));
        self.prod.resize(len, Complex64::new(0.0, 0.0));

        let scratch_len = [&plans.rows, &plans.cols, &plans.rows_inv, &plans.cols_inv]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        self.scratch.resize(scratch_len, Complex64::new(0.0, 0.0));

        plans.rows.process_with_scratch(&mut self.buf, &mut self.scratch);
        transpose(&self.buf, &mut self.tmp, n, m);
        plans.cols.process_with_scratch(&mut self.tmp, &mut self.scratch);

        // Transposed layout: index = kc * n + kr. Split the packed spectrum
        // into the spectra of `a` and `b` and form conj(A)·B.
        let half_i = Complex64::new(0.0, -0.5);
        for kc in 0..m {
            let nc = (m - kc) % m;
            for kr in 0..n {
                let nr = (n - kr) % n;
                let z = self.tmp[kc * n + kr];
                let zc = self.tmp[nc * n + nr].conj();
                let sa = (z + zc) * 0.5;
                let sb = (z - zc) * half_i;
                self.prod[kc * n + kr] = sa.conj() * sb;
            }
        }

        plans.cols_inv.process_with_scratch(&mut self.prod, &mut self.scratch);
        transpose(&self.prod, &mut self.buf, m, n);
        plans.rows_inv.process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / len as f64;
        for v in &mut self.buf {
            *v *= scale;
        }
        &self.buf
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

fn check_pair(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, max_lag: [usize; 2]) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidParameter(format!(
            "windows differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (h, w) = a.dim();
    if h == 0 || w == 0 || max_lag[0] >= h || max_lag[1] >= w {
        return Err(Error::InvalidParameter(format!(
            "lag range ±{:?} too large for {h}×{w} windows",
            max_lag
        )));
    }
    for (name, v) in [("first", a), ("second", b)] {
        let mu = mean(v);
        let var: f64 = v.iter().map(|x| (x - mu) * (x - mu)).sum();
        let raw: f64 = v.iter().map(|x| x * x).sum();
        if !(var > FLAT * raw) {
            return Err(Error::Degenerate(format!("{name} window has zero variance")));
        }
    }
    Ok(())
}

/// ZNCC between two equally sized windows for every lag within
/// `±max_lag`, each lag normalized over its own overlap region.
pub fn zncc_surface(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, max_lag: [usize; 2]) -> Result<CorrelationSurface> {
    ZnccEngine::new().surface(a, b, max_lag)
}

impl ZnccEngine {
    /// See [`zncc_surface`].
    pub fn surface(&mut self, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, max_lag: [usize; 2]) -> Result<CorrelationSurface> {
        check_pair(a, b, max_lag)?;
        let (h, w) = a.dim();
        let [mz, mx] = max_lag;
        let (ma, mb) = (mean(a), mean(b));
        let ia = IntegralImage::new(a, ma);
        let ib = IntegralImage::new(b, mb);
        let n = fft_size(h + mz);
        let m = fft_size(w + mx);
        let corr = self.correlate(a, ma, b, mb, n, m);
        let values = Array2::from_shape_fn((2 * mz + 1, 2 * mx + 1), |(i, j)| {
            let dz = i as isize - mz as isize;
            let dx = j as isize - mx as isize;
            let rows = h - dz.unsigned_abs();
            let cols = w - dx.unsigned_abs();
            let (ar, br) = if dz >= 0 { (0, dz as usize) } else { ((-dz) as usize, 0) };
            let (ac, bc) = if dx >= 0 { (0, dx as usize) } else { ((-dx) as usize, 0) };
            let (sa, qa) = ia.rect(ar, ac, rows, cols);
            let (sb, qb) = ib.rect(br, bc, rows, cols);
            let cnt = (rows * cols) as f64;
            let cr = dz.rem_euclid(n as isize) as usize;
            let cc = dx.rem_euclid(m as isize) as usize;
            let sab = corr[cr * m + cc].re;
            ratio(sab - sa * sb / cnt, qa - sa * sa / cnt, qa, qb - sb * sb / cnt, qb)
        });
        Ok(CorrelationSurface::from_values(values, [-(mz as isize), -(mx as isize)]))
    }
}

/// Direct evaluation of [`zncc_surface`] by explicit sums over each overlap.
pub fn zncc_surface_direct(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, max_lag: [usize; 2]) -> Result<CorrelationSurface> {
    check_pair(a, b, max_lag)?;
    let (h, w) = a.dim();
    let [mz, mx] = max_lag;
    let values = Array2::from_shape_fn((2 * mz + 1, 2 * mx + 1), |(i, j)| {
        let dz = i as isize - mz as isize;
        let dx = j as isize - mx as isize;
        let mut pa = Vec::new();
        let mut pb = Vec::new();
        for r in 0..h as isize {
            for c in 0..w as isize {
                let (rb, cb) = (r + dz, c + dx);
                if rb >= 0 && cb >= 0 && rb < h as isize && cb < w as isize {
                    pa.push(a[[r as usize, c as usize]]);
                    pb.push(b[[rb as usize, cb as usize]]);
                }
            }
        }
        direct_zncc(&pa, &pb)
    });
    Ok(CorrelationSurface::from_values(values, [-(mz as isize), -(mx as isize)]))
}

fn direct_zncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut ra = 0.0;
    let mut rb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        ra += x * x;
        rb += y * y;
    }
    ratio(num, va, ra, vb, rb)
}
