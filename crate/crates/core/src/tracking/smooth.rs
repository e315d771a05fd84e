//! Robust unsupervised smoothing of gridded data by penalized least squares
//! in the discrete cosine domain, with the smoothing level chosen by
//! generalized cross-validation and outliers down-weighted by bisquare
//! iterations. Cells with zero weight are treated as missing and filled in.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothOptions {
    pub robust: bool,
    /// Fixed smoothing parameter; `None` selects it by cross-validation.
    pub s: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        Self {
            robust: true,
            s: None,
            tol: 1e-3,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Smoothed {
    pub components: Vec<Array2<f64>>,
    pub s: f64,
    pub converged: bool,
}

const H_MIN: f64 = 1e-6;
const H_MAX: f64 = 0.99;
const BISQUARE: f64 = 4.685;
const ROBUST_STEPS: usize = 3;

/// Orthonormal 2-D DCT-II by dense transform matrices.
struct Dct2 {
    rows: Array2<f64>,
    cols: Array2<f64>,
}

fn dct_matrix(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(k, i)| {
        let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos()
    })
}

impl Dct2 {
    fn new(shape: (usize, usize)) -> Self {
        Self {
            rows: dct_matrix(shape.0),
            cols: dct_matrix(shape.1),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.rows.dot(x).dot(&self.cols.t())
    }

    fn inverse(&self, x: &Array2<f64>) -> Array2<f64> {
        self.rows.t().dot(x).dot(&self.cols)
    }
}

fn s_bounds(ndims: usize) -> (f64, f64) {
    let f = |h: f64| {
        let h = h.powf(2.0 / ndims as f64);
        let t = (1.0 + (1.0 + 8.0 * h).sqrt()) / 4.0 / h;
        (t * t - 1.0) / 16.0
    };
    (f(H_MAX), f(H_MIN))
}

fn leverage(s: f64, ndims: usize) -> f64 {
    let h = (1.0 + 16.0 * s).sqrt();
    ((1.0 + h).sqrt() / 2f64.sqrt() / h).powi(ndims as i32)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn golden_min(f: &mut impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

/// Fills zero-weight cells with the value of the nearest weighted cell
/// (breadth-first, 4-connected).
fn nearest_fill(y: &Array2<f64>, known: &Array2<bool>) -> Array2<f64> {
    let (h, w) = y.dim();
    let mut out = y.clone();
    let mut seen = known.clone();
    let mut queue: std::collections::VecDeque<(usize, usize)> =
        known.indexed_iter().filter(|(_, k)| **k).map(|(p, _)| p).collect();
    while let Some((i, j)) = queue.pop_front() {
        let v = out[[i, j]];
        let mut visit = |a: usize, b: usize| {
            if !seen[[a, b]] {
                seen[[a, b]] = true;
                out[[a, b]] = v;
                queue.push_back((a, b));
            }
        };
        if i > 0 {
            visit(i - 1, j);
        }
        if i + 1 < h {
            visit(i + 1, j);
        }
        if j > 0 {
            visit(i, j - 1);
        }
        if j + 1 < w {
            visit(i, j + 1);
        }
    }
    out
}

/// Smooths the components of a gridded vector field with one shared
/// smoothing level. `weights` are non-negative; zero marks missing cells.
pub fn smoothn(components: &[Array2<f64>], weights: &Array2<f64>, options: &SmoothOptions) -> Result<Smoothed> {
    let shape = weights.dim();
    if components.is_empty() || components.iter().any(|c| c.dim() != shape) {
        return Err(Error::InvalidParameter("components and weights must share one shape".into()));
    }
    let finite = Zip::from(weights).map_collect(|w| *w > 0.0 && w.is_finite());
    let finite = components.iter().fold(finite, |acc, c| {
        Zip::from(&acc).and(c).map_collect(|a, v| *a && v.is_finite())
    });
    let nof = finite.iter().filter(|f| **f).count();
    if nof == 0 {
        return Err(Error::Empty("every cell is missing".into()));
    }
    let noe = weights.len();
    let ndims = [shape.0, shape.1].iter().filter(|n| **n > 1).count();
    if ndims == 0 {
        return Ok(Smoothed {
            components: components.to_vec(),
            s: 0.0,
            converged: true,
        });
    }

    let wmax = weights
        .iter()
        .zip(finite.iter())
        .filter(|(_, f)| **f)
        .fold(0.0f64, |m, (w, _)| m.max(*w));
    let w0 = Zip::from(weights).and(&finite).map_collect(|w, f| if *f { w / wmax } else { 0.0 });
    let y: Vec<Array2<f64>> = components
        .iter()
        .map(|c| Zip::from(c).and(&finite).map_collect(|v, f| if *f { *v } else { 0.0 }))
        .collect();

    let dct = Dct2::new(shape);
    let lambda = {
        let ev = |i: usize, n: usize| 2.0 * (1.0 - (std::f64::consts::PI * i as f64 / n as f64).cos());
        Array2::from_shape_fn(shape, |(i, j)| ev(i, shape.0) + ev(j, shape.1))
    };
    let gamma_for = |s: f64| lambda.mapv(|l| 1.0 / (1.0 + s * l * l));

    let (s_min, s_max) = s_bounds(ndims);
    let mut is_weighted = w0.iter().any(|w| *w < 1.0);
    let relax = if is_weighted { 1.75 } else { 1.0 };

    let mut z: Vec<Array2<f64>> = if is_weighted {
        y.iter()
            .map(|c| {
                let filled = nearest_fill(c, &finite);
                let mut d = dct.forward(&filled);
                let keep = ((shape.0 as f64 / 10.0).ceil() as usize, (shape.1 as f64 / 10.0).ceil() as usize);
                for ((i, j), v) in d.indexed_iter_mut() {
                    if i >= keep.0 || j >= keep.1 {
                        *v = 0.0;
                    }
                }
                dct.inverse(&d)
            })
            .collect()
    } else {
        vec![Array2::zeros(shape); y.len()]
    };

    let mut s = options.s.unwrap_or(1.0);
    if let Some(fixed) = options.s {
        if !(fixed >= 0.0) {
            return Err(Error::InvalidParameter(format!("smoothing level must be non-negative, got {fixed}")));
        }
    }
    let mut gamma = gamma_for(s);
    let mut wtot = w0.clone();
    let mut converged = true;
    let steps = if options.robust { ROBUST_STEPS } else { 1 };

    for step in 0..steps {
        let aow = wtot.sum() / noe as f64;
        let mut tol = f64::INFINITY;
        let mut nit = 0usize;
        let mut z0 = z.clone();
        while tol > options.tol && nit < options.max_iter {
            nit += 1;
            let dcty: Vec<Array2<f64>> = y
                .iter()
                .zip(&z)
                .map(|(yc, zc)| {
                    let mixed = Zip::from(&wtot).and(yc).and(zc).map_collect(|w, yv, zv| w * (yv - zv) + zv);
                    dct.forward(&mixed)
                })
                .collect();
            if options.s.is_none() && nit.is_power_of_two() {
                let mut gcv = |p: f64| {
                    let g = gamma_for(10f64.powf(p));
                    let rss: f64 = if aow > 0.9 {
                        dcty.iter()
                            .map(|d| Zip::from(d).and(&g).fold(0.0, |acc, dv, gv| acc + (dv * (gv - 1.0)).powi(2)))
                            .sum()
                    } else {
                        dcty.iter()
                            .zip(&y)
                            .map(|(d, yc)| {
                                let yhat = dct.inverse(&(d * &g));
                                Zip::from(&wtot)
                                    .and(yc)
                                    .and(&yhat)
                                    .and(&finite)
                                    .fold(0.0, |acc, w, yv, hv, f| if *f { acc + w * (yv - hv).powi(2) } else { acc })
                            })
                            .sum()
                    };
                    let trh = g.sum();
                    rss / nof as f64 / (1.0 - trh / noe as f64).powi(2)
                };
                let p = golden_min(&mut gcv, s_min.log10(), s_max.log10(), 0.1);
                s = 10f64.powf(p);
                gamma = gamma_for(s);
            }
            for (zc, d) in z.iter_mut().zip(&dcty) {
                let next = dct.inverse(&(d * &gamma));
                Zip::from(&mut *zc).and(&next).for_each(|a, b| *a = relax * b + (1.0 - relax) * *a);
            }
            tol = if is_weighted {
                let num: f64 = z.iter().zip(&z0).map(|(a, b)| (a - b).mapv(|v| v * v).sum()).sum();
                let den: f64 = z.iter().map(|a| a.mapv(|v| v * v).sum()).sum();
                if den > 0.0 {
                    (num / den).sqrt()
                } else {
                    num.sqrt()
                }
            } else {
                0.0
            };
            z0.clone_from(&z);
        }
        converged &= nit < options.max_iter || tol <= options.tol;

        if options.robust && step + 1 < steps {
            let h = leverage(s, ndims);
            let mut resid = Array2::<f64>::zeros(shape);
            for (yc, zc) in y.iter().zip(&z) {
                Zip::from(&mut resid).and(yc).and(zc).for_each(|r, a, b| *r += (a - b) * (a - b));
            }
            resid.mapv_inplace(f64::sqrt);
            let mut vals: Vec<f64> = resid
                .iter()
                .zip(finite.iter())
                .filter(|(_, f)| **f)
                .map(|(r, _)| *r)
                .collect();
            let scale = vals.iter().fold(0.0f64, |m, r| m.max(*r));
            let med = median(&mut vals);
            for v in vals.iter_mut() {
                *v = (*v - med).abs();
            }
            let mad = median(&mut vals);
            let flat = !(mad > 1e-12 * scale);
            let robust = Zip::from(&resid).and(&finite).map_collect(|r, f| {
                if !*f {
                    0.0
                } else if flat {
                    1.0
                } else {
                    let u = (r / (1.4826 * mad) / (1.0 - h).sqrt()).abs() / BISQUARE;
                    if u < 1.0 {
                        (1.0 - u * u).powi(2)
                    } else {
                        0.0
                    }
                }
            });
            wtot = &w0 * &robust;
            is_weighted = true;
        }
    }
    Ok(Smoothed {
        components: z,
        s,
        converged,
    })
}
