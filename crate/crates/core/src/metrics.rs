//! Relative endpoint errors and their aggregates.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::phantom::rotate_offset;
use crate::tracking::{DisplacementField, FieldKind, FieldMeta};

/// `‖estimate − truth‖ / ‖truth‖`, or `None` when the truth is zero.
pub fn repe(estimate: [f64; 2], truth: [f64; 2]) -> Option<f64> {
    let t = truth[0].hypot(truth[1]);
    if !(t > 0.0) {
        return None;
    }
    Some((estimate[0] - truth[0]).hypot(estimate[1] - truth[1]) / t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanError {
    pub value: f64,
    pub n_valid: usize,
    pub n_skipped: usize,
}

/// Mean REPE over the pairs whose truth is non-zero.
pub fn mrepe(pairs: &[([f64; 2], [f64; 2])]) -> Result<MeanError> {
    let values: Vec<f64> = pairs.iter().filter_map(|(e, t)| repe(*e, *t)).collect();
    if values.is_empty() {
        return Err(Error::Empty("no pair with a non-zero reference".into()));
    }
    Ok(MeanError {
        value: values.iter().sum::<f64>() / values.len() as f64,
        n_valid: values.len(),
        n_skipped: pairs.len() - values.len(),
    })
}

/// Per-cell relative errors; cells outside `mask` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeMap {
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
    pub centers_x: Vec<f64>,
    pub centers_z: Vec<f64>,
}

impl RepeMap {
    /// REPE of every cell of `estimate` against `truth`; zero-truth cells are
    /// left out of the mask.
    pub fn from_fields(estimate: &DisplacementField, truth: &DisplacementField) -> Result<Self> {
        if estimate.shape() != truth.shape() {
            return Err(Error::GridMismatch("estimate and reference differ in shape".into()));
        }
        let mut values = Array2::zeros(estimate.shape());
        let mut mask = Array2::from_elem(estimate.shape(), false);
        for ((i, j), v) in values.indexed_iter_mut() {
            let e = [estimate.u_x[[i, j]], estimate.u_z[[i, j]]];
            let t = [truth.u_x[[i, j]], truth.u_z[[i, j]]];
            if let Some(r) = repe(e, t) {
                *v = r;
                mask[[i, j]] = r.is_finite();
            }
        }
        Ok(Self {
            values,
            mask,
            centers_x: estimate.centers_x.clone(),
            centers_z: estimate.centers_z.clone(),
        })
    }

    /// Cell-wise mean over maps on one grid; a cell is kept when at least one
    /// map defines it.
    pub fn average(maps: &[RepeMap]) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::Empty("no maps to average".into()))?;
        let shape = first.values.dim();
        let mut sum = Array2::<f64>::zeros(shape);
        let mut count = Array2::<f64>::zeros(shape);
        for m in maps {
            if m.values.dim() != shape {
                return Err(Error::GridMismatch("maps differ in shape".into()));
            }
            Zip::from(&mut sum)
                .and(&mut count)
                .and(&m.values)
                .and(&m.mask)
                .for_each(|s, c, v, k| {
                    if *k {
                        *s += v;
                        *c += 1.0;
                    }
                });
        }
        Ok(Self {
            values: Zip::from(&sum).and(&count).map_collect(|s, c| if *c > 0.0 { s / c } else { 0.0 }),
            mask: count.mapv(|c| c > 0.0),
            centers_x: first.centers_x.clone(),
            centers_z: first.centers_z.clone(),
        })
    }

    /// Same values with the mask narrowed to `region`.
    pub fn restricted(&self, region: &Array2<bool>) -> Result<Self> {
        if region.dim() != self.mask.dim() {
            return Err(Error::GridMismatch("region differs in shape".into()));
        }
        let mut out = self.clone();
        Zip::from(&mut out.mask).and(region).for_each(|m, r| *m &= *r);
        Ok(out)
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Mean over masked cells.
    pub fn mean(&self) -> Result<f64> {
        let n = self.count();
        if n == 0 {
            return Err(Error::Empty("no cell inside the mask".into()));
        }
        let s: f64 = Zip::from(&self.values)
            .and(&self.mask)
            .fold(0.0, |acc, v, m| if *m { acc + v } else { acc });
        Ok(s / n as f64)
    }

    /// Stores the map in the displacement-field container: `u_x` holds the
    /// error, `u_z` is zero and the validity plane is the mask.
    pub fn to_field(&self) -> DisplacementField {
        DisplacementField {
            u_x: self.values.clone(),
            u_z: Array2::zeros(self.values.dim()),
            centers_x: self.centers_x.clone(),
            centers_z: self.centers_z.clone(),
            valid: self.mask.clone(),
            meta: FieldMeta {
                kind: FieldKind::ErrorMap,
                ..FieldMeta::default()
            },
        }
    }
}

/// Fraction of masked cells whose value is at most `threshold`.
pub fn rve(map: &RepeMap, threshold: f64) -> Result<f64> {
    let n = map.count();
    if n == 0 {
        return Err(Error::Empty("no cell inside the mask".into()));
    }
    let ok = Zip::from(&map.values)
        .and(&map.mask)
        .fold(0usize, |acc, v, m| acc + usize::from(*m && *v <= threshold));
    Ok(ok as f64 / n as f64)
}

/// Exact displacement of a rigid rotation by `ω·Δt` about `center` at each
/// grid node: `R(ωΔt)(p − c) − (p − c)`.
pub fn analytic_rotation_field(
    center: [f64; 2],
    angular_velocity: f64,
    frame_interval: f64,
    centers_x: &[f64],
    centers_z: &[f64],
) -> DisplacementField {
    let angle = angular_velocity * frame_interval;
    let mut f = DisplacementField::zeros(centers_x.to_vec(), centers_z.to_vec());
    for (i, z) in centers_z.iter().enumerate() {
        for (j, x) in centers_x.iter().enumerate() {
            let (dx, dz) = (x - center[0], z - center[1]);
            let (rx, rz) = rotate_offset(dx, dz, angle);
            f.u_x[[i, j]] = rx - dx;
            f.u_z[[i, j]] = rz - dz;
        }
    }
    f.meta.kind = FieldKind::Truth;
    f
}

/// Nodes with `inner_margin ≤ |p − center| ≤ radius − outer_margin`.
pub fn zone_mask(
    centers_x: &[f64],
    centers_z: &[f64],
    center: [f64; 2],
    radius: f64,
    inner_margin: f64,
    outer_margin: f64,
) -> Result<Array2<bool>> {
    if !(inner_margin >= 0.0 && outer_margin >= 0.0) {
        return Err(Error::InvalidParameter("margins must be non-negative".into()));
    }
    let outer = radius - outer_margin;
    if !(inner_margin < outer) {
        return Err(Error::Empty(format!(
            "annulus [{inner_margin}, {outer}] is empty"
        )));
    }
    let mask = Array2::from_shape_fn((centers_z.len(), centers_x.len()), |(i, j)| {
        let r = (centers_x[j] - center[0]).hypot(centers_z[i] - center[1]);
        r >= inner_margin && r <= outer
    });
    if !mask.iter().any(|m| *m) {
        return Err(Error::Empty("no grid node inside the zone".into()));
    }
    Ok(mask)
}
