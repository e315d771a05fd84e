//! Image deformation by a displacement field.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::DisplacementField;
use crate::beamform::EnvelopeImage;
use crate::bspline::Spline2;
use crate::config::ImageGrid;
use crate::error::{Error, Result};

/// Bracketing index and weight of `v` on an increasing axis, clamped to the
/// end nodes.
fn bracket(axis: &[f64], v: f64) -> (usize, usize, f64) {
    let n = axis.len();
    if n == 1 || v <= axis[0] {
        return (0, 0, 0.0);
    }
    if v >= axis[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = axis.partition_point(|a| *a <= v).min(n - 1);
    let lo = hi - 1;
    let t = (v - axis[lo]) / (axis[hi] - axis[lo]);
    (lo, hi, t)
}

/// Bilinear interpolation of a field component sampled on `(zs, xs)` nodes,
/// clamped outside the node hull.
pub fn bilinear(values: ArrayView2<'_, f64>, zs: &[f64], xs: &[f64], z: f64, x: f64) -> f64 {
    let (r0, r1, tr) = bracket(zs, z);
    let (c0, c1, tc) = bracket(xs, x);
    let top = values[[r0, c0]] * (1.0 - tc) + values[[r0, c1]] * tc;
    let bottom = values[[r1, c0]] * (1.0 - tc) + values[[r1, c1]] * tc;
    top * (1.0 - tr) + bottom * tr
}

/// Field components in pixels at every pixel of `grid`: `(u_z / dz, u_x / dx)`.
pub fn densify(field: &DisplacementField, grid: &ImageGrid) -> (Array2<f64>, Array2<f64>) {
    let cols: Vec<(usize, usize, f64)> = (0..grid.nx).map(|j| bracket(&field.centers_x, grid.x(j))).collect();
    let rows: Vec<(usize, usize, f64)> = (0..grid.nz).map(|i| bracket(&field.centers_z, grid.z(i))).collect();
    let interp = |u: &Array2<f64>, scale: f64| {
        Array2::from_shape_fn(grid.shape(), |(i, j)| {
            let (r0, r1, tr) = rows[i];
            let (c0, c1, tc) = cols[j];
            let top = u[[r0, c0]] * (1.0 - tc) + u[[r0, c1]] * tc;
            let bottom = u[[r1, c0]] * (1.0 - tc) + u[[r1, c1]] * tc;
            (top * (1.0 - tr) + bottom * tr) / scale
        })
    };
    (interp(&field.u_z, grid.dz), interp(&field.u_x, grid.dx))
}

/// `out[p] = img(p + u(p))` with `u` in pixels, sampled by cubic B-spline
/// with mirror extension.
pub fn warp_pixels(img: ArrayView2<'_, f64>, u_z: &Array2<f64>, u_x: &Array2<f64>) -> Array2<f64> {
    let spline = Spline2::new(img);
    let (h, w) = img.dim();
    let mut out = Array2::zeros((h, w));
    out.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = spline.eval(i as f64 + u_z[[i, j]], j as f64 + u_x[[i, j]]);
            }
        });
    out
}

/// Resamples `img` at `x + u(x)`; the field is densified bilinearly.
pub fn warp_image(img: &EnvelopeImage, field: &DisplacementField) -> Result<EnvelopeImage> {
    field.validate()?;
    if img.pixels.dim() != img.grid.shape() {
        return Err(Error::GridMismatch("image does not match its grid".into()));
    }
    let (uz, ux) = densify(field, &img.grid);
    // Interpolation can undershoot slightly; envelopes stay non-negative.
    let pixels = warp_pixels(img.pixels.view(), &uz, &ux).mapv(|v| v.max(0.0));
    Ok(EnvelopeImage {
        pixels,
        grid: img.grid,
    })
}
