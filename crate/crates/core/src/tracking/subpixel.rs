//! Gaussian peak regression on correlation surfaces.

use serde::{Deserialize, Serialize};

use super::zncc::CorrelationSurface;

/// How the fractional part of a peak was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakFit {
    /// Least-squares 2-D Gaussian on the 3×3 neighborhood.
    Gaussian2d,
    /// Independent three-point Gaussians along each axis.
    Gaussian1d,
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubpixelPeak {
    /// `[row, col]` lag.
    pub lag: [f64; 2],
    pub fit: PeakFit,
    /// Peak on the surface border; the lag is the integer argmax.
    pub saturated: bool,
}

/// Sub-sample offset of a 3×3 neighborhood `n[row][col]` centered on its
/// maximum, from the six-coefficient quadratic fitted to the log values.
pub fn gaussian_2d_offset(n: &[[f64; 3]; 3]) -> Option<[f64; 2]> {
    if n.iter().flatten().any(|v| !(*v > 0.0)) {
        return None;
    }
    // x runs along columns, y along rows, both in {-1, 0, 1}.
    let (mut s, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (r, row) in n.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let l = v.ln();
            let x = c as f64 - 1.0;
            let y = r as f64 - 1.0;
            s += l;
            sx += x * l;
            sy += y * l;
            sxx += x * x * l;
            syy += y * y * l;
            sxy += x * y * l;
        }
    }
    let c1 = sx / 6.0;
    let c2 = sy / 6.0;
    let c4 = sxy / 4.0;
    let p = (sxx + syy - 4.0 * s / 3.0) / 2.0;
    let d = (sxx - syy) / 2.0;
    let c3 = (p + d) / 2.0;
    let c5 = (p - d) / 2.0;
    let det = 4.0 * c3 * c5 - c4 * c4;
    if !(c3 < 0.0 && c5 < 0.0 && det > 0.0) {
        return None;
    }
    let x = (c4 * c2 - 2.0 * c5 * c1) / det;
    let y = (c4 * c1 - 2.0 * c3 * c2) / det;
    if !(x.abs() <= 1.0 && y.abs() <= 1.0) {
        return None;
    }
    Some([y, x])
}

/// Three-point Gaussian offset for samples `(left, center, right)`.
pub fn gaussian_1d_offset(l: f64, c: f64, r: f64) -> Option<f64> {
    if !(l > 0.0 && c > 0.0 && r > 0.0) {
        return None;
    }
    let (ll, lc, lr) = (l.ln(), c.ln(), r.ln());
    let den = 2.0 * (ll - 2.0 * lc + lr);
    if !(den < 0.0) {
        return None;
    }
    let off = (ll - lr) / den;
    (off.abs() <= 1.0).then_some(off)
}

/// Refines the integer argmax of `surface`.
pub fn subpixel_peak(surface: &CorrelationSurface) -> SubpixelPeak {
    let (i, j) = surface.peak_index();
    let (h, w) = surface.values.dim();
    let base = [surface.peak_lag[0] as f64, surface.peak_lag[1] as f64];
    if i == 0 || j == 0 || i + 1 >= h || j + 1 >= w {
        return SubpixelPeak {
            lag: base,
            fit: PeakFit::Integer,
            saturated: true,
        };
    }
    let v = &surface.values;
    let mut n = [[0.0; 3]; 3];
    for (a, row) in n.iter_mut().enumerate() {
        for (b, x) in row.iter_mut().enumerate() {
            *x = v[[i + a - 1, j + b - 1]];
        }
    }
    if let Some(off) = gaussian_2d_offset(&n) {
        return SubpixelPeak {
            lag: [base[0] + off[0], base[1] + off[1]],
            fit: PeakFit::Gaussian2d,
            saturated: false,
        };
    }
    let dz = gaussian_1d_offset(n[0][1], n[1][1], n[2][1]);
    let dx = gaussian_1d_offset(n[1][0], n[1][1], n[1][2]);
    let fit = if dz.is_some() || dx.is_some() {
        PeakFit::Gaussian1d
    } else {
        PeakFit::Integer
    };
    SubpixelPeak {
        lag: [base[0] + dz.unwrap_or(0.0), base[1] + dx.unwrap_or(0.0)],
        fit,
        saturated: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Samples `exp(-q(p - c))` for a positive-definite quadratic form.
    fn gaussian_surface(center: [f64; 2], a: f64, b: f64, cross: f64) -> CorrelationSurface {
        let values = Array2::from_shape_fn((7, 7), |(i, j)| {
            let y = i as f64 - 3.0 - center[0];
            let x = j as f64 - 3.0 - center[1];
            (-(a * x * x + b * y * y + cross * x * y)).exp()
        });
        CorrelationSurface::from_values(values, [-3, -3])
    }

    #[test]
    fn exact_on_isotropic_gaussian() {
        let s = gaussian_surface([0.30, -0.20], 0.4, 0.4, 0.0);
        let p = subpixel_peak(&s);
        assert_eq!(p.fit, PeakFit::Gaussian2d);
        assert!((p.lag[0] - 0.30).abs() < 1e-6 && (p.lag[1] + 0.20).abs() < 1e-6);
    }

    #[test]
    fn cross_term_is_handled() {
        // center given as (x, y) = (0.4, 0.1)
        let s = gaussian_surface([0.1, 0.4], 0.5, 0.15, 0.3);
        let p = subpixel_peak(&s);
        assert!((p.lag[1] - 0.4).abs() < 1e-3 && (p.lag[0] - 0.1).abs() < 1e-3, "{:?}", p.lag);
    }

    #[test]
    fn symmetric_neighborhood_gives_zero_offset() {
        let n = [[0.5, 0.6, 0.5], [0.7, 1.0, 0.7], [0.5, 0.6, 0.5]];
        let off = gaussian_2d_offset(&n).unwrap();
        assert!(off[0].abs() < 1e-15 && off[1].abs() < 1e-15);
    }

    #[test]
    fn fallbacks() {
        // Negative corner forbids the 2-D fit; the axes are still usable.
        let mut values = Array2::from_elem((3, 3), 0.5);
        values[[1, 1]] = 1.0;
        values[[0, 0]] = -0.2;
        values[[1, 2]] = 0.8;
        let p = subpixel_peak(&CorrelationSurface::from_values(values.clone(), [-1, -1]));
        assert_eq!(p.fit, PeakFit::Gaussian1d);
        assert_eq!(p.lag[0], 0.0);
        assert!(p.lag[1] > 0.0);

        values[[0, 1]] = -0.1;
        values[[1, 0]] = -0.1;
        values[[1, 2]] = -0.1;
        let p = subpixel_peak(&CorrelationSurface::from_values(values, [-1, -1]));
        assert_eq!(p.fit, PeakFit::Integer);
        assert_eq!(p.lag, [0.0, 0.0]);
    }

    #[test]
    fn border_peak_is_saturated() {
        let mut values = Array2::from_elem((5, 5), 0.1);
        values[[0, 3]] = 0.9;
        let p = subpixel_peak(&CorrelationSurface::from_values(values, [-2, -2]));
        assert!(p.saturated);
        assert_eq!(p.lag, [-2.0, 1.0]);
    }
}
