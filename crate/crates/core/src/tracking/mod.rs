//! Multi-pass block matching between two envelope frames.
//!
//! Every pass tiles the first frame into overlapping square windows, finds
//! each window's best ZNCC match in the second frame after it has been
//! deformed by the running estimate, refines the peak by Gaussian
//! regression and adds the residual to the running estimate, which is then
//! cleaned by robust smoothing. Windows shrink from pass to pass.

pub mod smooth;
pub mod subpixel;
pub mod warp;
pub mod zncc;

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::EnvelopeImage;
use crate::config::ImageGrid;
use crate::error::{Error, Result};
use smooth::{smoothn, SmoothOptions};
use subpixel::subpixel_peak;
use zncc::ZnccEngine;

pub use smooth::Smoothed;
pub use subpixel::{PeakFit, SubpixelPeak};
pub use warp::warp_image;
pub use zncc::zncc_surface;

/// Block-matching schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingParams {
    /// Square window side per pass, meters, strictly decreasing.
    pub pass_window_sizes: Vec<f64>,
    pub overlap_fraction: f64,
    /// Search margin in pixels per pass. When absent, the first pass
    /// searches half a window in every direction and later passes a quarter.
    #[serde(default)]
    pub search_margin: Option<Vec<usize>>,
    /// Smooth the accumulated field after the last pass too.
    #[serde(default = "yes")]
    pub smooth_final_pass: bool,
    #[serde(default = "yes")]
    pub robust_smoothing: bool,
}

fn yes() -> bool {
    true
}

impl TrackingParams {
    /// Four passes of 4, 2.5, 2 and 1.5 mm windows with 65% overlap.
    pub fn standard() -> Self {
        Self {
            pass_window_sizes: vec![4.0e-3, 2.5e-3, 2.0e-3, 1.5e-3],
            overlap_fraction: 0.65,
            search_margin: None,
            smooth_final_pass: true,
            robust_smoothing: true,
        }
    }

    pub fn passes(&self) -> usize {
        self.pass_window_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.pass_window_sizes;
        if w.is_empty() {
            return Err(Error::InvalidParameter("at least one pass is required".into()));
        }
        if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("window sizes must be positive".into()));
        }
        if w.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::InvalidParameter("window sizes must strictly decrease".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::InvalidParameter(format!(
                "overlap fraction {} outside [0, 1)",
                self.overlap_fraction
            )));
        }
        if let Some(m) = &self.search_margin {
            if m.len() != w.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} search margins for {} passes",
                    m.len(),
                    w.len()
                )));
            }
        }
        Ok(())
    }

    /// Window side in pixels for a pass: the odd count closest to
    /// `size / spacing`, at least 3.
    pub fn window_pixels(size: f64, spacing: f64) -> usize {
        let k = ((size / spacing - 1.0) / 2.0).round().max(1.0) as usize;
        2 * k + 1
    }

    fn margin(&self, pass: usize, window: usize) -> usize {
        match &self.search_margin {
            Some(m) => m[pass],
            None if pass == 0 => window / 2,
            None => ((window as f64) * 0.25).round().max(1.0) as usize,
        }
    }
}

/// What the two planes of a [`DisplacementField`] hold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Estimated displacement in meters.
    #[default]
    Displacement,
    /// Reference displacement in meters.
    Truth,
    /// `u_x` holds a relative error, `u_z` the number of samples averaged.
    ErrorMap,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub kind: FieldKind,
    #[serde(default)]
    pub frame_a: Option<String>,
    #[serde(default)]
    pub frame_b: Option<String>,
    #[serde(default)]
    pub params: Option<TrackingParams>,
    /// Grid of the frames the field was estimated on.
    #[serde(default)]
    pub image_grid: Option<ImageGrid>,
}

/// Vector field on a separable grid of window centers.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub u_x: Array2<f64>,
    pub u_z: Array2<f64>,
    pub centers_x: Vec<f64>,
    pub centers_z: Vec<f64>,
    pub valid: Array2<bool>,
    pub meta: FieldMeta,
}

impl DisplacementField {
    pub fn zeros(centers_x: Vec<f64>, centers_z: Vec<f64>) -> Self {
        let shape = (centers_z.len(), centers_x.len());
        Self {
            u_x: Array2::zeros(shape),
            u_z: Array2::zeros(shape),
            centers_x,
            centers_z,
            valid: Array2::from_elem(shape, true),
            meta: FieldMeta::default(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.centers_z.len(), self.centers_x.len())
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::Empty("field has no cells".into()));
        }
        if self.u_x.dim() != shape || self.u_z.dim() != shape || self.valid.dim() != shape {
            return Err(Error::GridMismatch("field planes differ in shape".into()));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|p| p[1] > p[0]);
        if !increasing(&self.centers_x) || !increasing(&self.centers_z) {
            return Err(Error::InvalidParameter("field centers must increase".into()));
        }
        Ok(())
    }

    /// Bilinear (clamped) resampling onto other centers.
    pub fn resample(&self, centers_x: &[f64], centers_z: &[f64]) -> (Array2<f64>, Array2<f64>) {
        let shape = (centers_z.len(), centers_x.len());
        let at = |u: &Array2<f64>| {
            Array2::from_shape_fn(shape, |(i, j)| {
                warp::bilinear(u.view(), &self.centers_z, &self.centers_x, centers_z[i], centers_x[j])
            })
        };
        (at(&self.u_x), at(&self.u_z))
    }

    /// One `x,z,u_x,u_z,valid` line per cell after a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,z,u_x,u_z,valid\n");
        for (i, z) in self.centers_z.iter().enumerate() {
            for (j, x) in self.centers_x.iter().enumerate() {
                out.push_str(&format!(
                    "{x:e},{z:e},{:e},{:e},{}\n",
                    self.u_x[[i, j]],
                    self.u_z[[i, j]],
                    u8::from(self.valid[[i, j]])
                ));
            }
        }
        out
    }
}

/// Window placement along one axis: top-left indices and center indices.
fn tile(n: usize, window: usize, step: usize) -> Result<Vec<usize>> {
    if window > n {
        return Err(Error::InvalidParameter(format!(
            "window of {window} px larger than the {n} px image"
        )));
    }
    let count = (n - window) / step + 1;
    let slack = (n - window) - (count - 1) * step;
    Ok((0..count).map(|k| slack / 2 + k * step).collect())
}

/// Outcome of matching one window.
#[derive(Debug, Clone, Copy)]
struct Match {
    lag: [f64; 2],
    valid: bool,
}

fn match_window(
    engine: &mut ZnccEngine,
    a: &Array2<f64>,
    b: &Array2<f64>,
    top_left: [usize; 2],
    size: [usize; 2],
    margin: usize,
) -> Match {
    let [r0, c0] = top_left;
    let [wh, ww] = size;
    let wa = a.slice(s![r0..r0 + wh, c0..c0 + ww]);
    let wb = b.slice(s![r0..r0 + wh, c0..c0 + ww]);
    let lags = [margin.min(wh - 1), margin.min(ww - 1)];
    let invalid = Match {
        lag: [0.0, 0.0],
        valid: false,
    };
    let Ok(surface) = engine.surface(wa, wb, lags) else {
        return invalid;
    };
    if !surface.peak_value().is_finite() {
        return invalid;
    }
    let peak = subpixel_peak(&surface);
    if peak.saturated {
        return invalid;
    }
    Match {
        lag: peak.lag,
        valid: true,
    }
}

/// Displacement of `frame_b` relative to `frame_a` on the last pass's
/// window-center grid.
pub fn track(frame_a: &EnvelopeImage, frame_b: &EnvelopeImage, params: &TrackingParams) -> Result<DisplacementField> {
    let mut passes = track_passes(frame_a, frame_b, params)?;
    Ok(passes.pop().expect("at least one pass"))
}

/// Accumulated estimate after each pass, each on its own window-center grid.
pub fn track_passes(
    frame_a: &EnvelopeImage,
    frame_b: &EnvelopeImage,
    params: &TrackingParams,
) -> Result<Vec<DisplacementField>> {
    params.validate()?;
    let grid = frame_a.grid;
    if !grid.approx_eq(&frame_b.grid) || frame_a.pixels.dim() != frame_b.pixels.dim() {
        return Err(Error::GridMismatch("frames are on different grids".into()));
    }
    if frame_a.pixels.dim() != grid.shape() {
        return Err(Error::GridMismatch("frame does not match its grid".into()));
    }
    let a = &frame_a.pixels;
    let mut history: Vec<DisplacementField> = Vec::with_capacity(params.passes());

    for (pass, &size) in params.pass_window_sizes.iter().enumerate() {
        let wh = TrackingParams::window_pixels(size, grid.dz);
        let ww = TrackingParams::window_pixels(size, grid.dx);
        let step_z = ((wh as f64) * (1.0 - params.overlap_fraction)).round().max(1.0) as usize;
        let step_x = ((ww as f64) * (1.0 - params.overlap_fraction)).round().max(1.0) as usize;
        let rows = tile(grid.nz, wh, step_z)?;
        let cols = tile(grid.nx, ww, step_x)?;
        let margin = params.margin(pass, wh.max(ww));
        let centers_z: Vec<f64> = rows.iter().map(|r| grid.z(r + wh / 2)).collect();
        let centers_x: Vec<f64> = cols.iter().map(|c| grid.x(c + ww / 2)).collect();
        let shape = (rows.len(), cols.len());

        let (pred_x, pred_z, warped) = match history.last() {
            None => (Array2::zeros(shape), Array2::zeros(shape), None),
            Some(prev) => {
                let (px, pz) = prev.resample(&centers_x, &centers_z);
                let (dz, dx) = warp::densify(prev, &grid);
                (px, pz, Some(warp::warp_pixels(frame_b.pixels.view(), &dz, &dx)))
            }
        };
        let b = warped.as_ref().unwrap_or(&frame_b.pixels);

        let cells: Vec<(usize, usize)> = (0..shape.0).flat_map(|i| (0..shape.1).map(move |j| (i, j))).collect();
        let matches: Vec<Match> = cells
            .par_iter()
            .map_init(ZnccEngine::new, |engine, &(i, j)| {
                match_window(engine, a, b, [rows[i], cols[j]], [wh, ww], margin)
            })
            .collect();

        let mut field = DisplacementField::zeros(centers_x, centers_z);
        for (&(i, j), m) in cells.iter().zip(&matches) {
            field.valid[[i, j]] = m.valid;
            let (rz, rx) = if m.valid { (m.lag[0], m.lag[1]) } else { (0.0, 0.0) };
            field.u_z[[i, j]] = pred_z[[i, j]] + rz * grid.dz;
            field.u_x[[i, j]] = pred_x[[i, j]] + rx * grid.dx;
        }
        if !field.valid.iter().any(|v| *v) {
            return Err(Error::Degenerate(format!("no window could be matched in pass {}", pass + 1)));
        }
        let last = pass + 1 == params.passes();
        if !last || params.smooth_final_pass {
            smooth_field_in_place(&mut field, params.robust_smoothing)?;
        }
        field.meta = FieldMeta {
            kind: FieldKind::Displacement,
            params: Some(params.clone()),
            image_grid: Some(grid),
            ..FieldMeta::default()
        };
        history.push(field);
    }
    Ok(history)
}

fn smooth_field_in_place(field: &mut DisplacementField, robust: bool) -> Result<()> {
    let weights = field.valid.mapv(|v| if v { 1.0 } else { 0.0 });
    let options = SmoothOptions {
        robust,
        ..SmoothOptions::default()
    };
    let out = smoothn(&[field.u_x.clone(), field.u_z.clone()], &weights, &options)?;
    let mut it = out.components.into_iter();
    field.u_x = it.next().expect("two components");
    field.u_z = it.next().expect("two components");
    Ok(())
}

/// Robust smoothing of a field; invalid cells are filled in and the
/// validity mask is kept as it was.
pub fn smooth_field(field: &DisplacementField) -> Result<DisplacementField> {
    field.validate()?;
    let mut out = field.clone();
    smooth_field_in_place(&mut out, true)?;
    Ok(out)
}

const FIELD_MAGIC: &[u8; 4] = b"PWDF";
const FIELD_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    nz: usize,
    nx: usize,
    meta: FieldMeta,
}

/// Little-endian: magic `PWDF`, version u32, header length u32, JSON header
/// (shape and metadata), then four row-major f32 planes `u_x, u_z, x, z`
/// and an LSB-first validity bitmask.
pub fn write_field(path: &Path, field: &DisplacementField) -> Result<()> {
    field.validate()?;
    let (nz, nx) = field.shape();
    let header = serde_json::to_vec(&FieldHeader {
        nz,
        nx,
        meta: field.meta.clone(),
    })
    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(FIELD_MAGIC)?;
    w.write_u32::<LittleEndian>(FIELD_VERSION)?;
    w.write_u32::<LittleEndian>(header.len() as u32)?;
    w.write_all(&header)?;
    for v in field.u_x.iter().chain(field.u_z.iter()) {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    for _ in 0..nz {
        for x in &field.centers_x {
            w.write_f32::<LittleEndian>(*x as f32)?;
        }
    }
    for z in &field.centers_z {
        for _ in 0..nx {
            w.write_f32::<LittleEndian>(*z as f32)?;
        }
    }
    let mut bytes = vec![0u8; (nz * nx).div_ceil(8)];
    for (k, v) in field.valid.iter().enumerate() {
        if *v {
            bytes[k / 8] |= 1 << (k % 8);
        }
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<DisplacementField> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("magic", "file too short"))?;
    if &magic != FIELD_MAGIC {
        return Err(Error::format("magic", "not a displacement field file"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::format("version", "truncated"))?;
    if version != FIELD_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let len = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::format("header_length", "truncated"))? as usize;
    if len > 1 << 20 {
        return Err(Error::format("header_length", format!("implausible length {len}")));
    }
    let mut raw = vec![0u8; len];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format("header", "truncated"))?;
    let header: FieldHeader =
        serde_json::from_slice(&raw).map_err(|e| Error::format("header", e.to_string()))?;
    let (nz, nx) = (header.nz, header.nx);
    if nz == 0 || nx == 0 || nz.saturating_mul(nx) > 1 << 28 {
        return Err(Error::format("header", format!("implausible shape {nz}×{nx}")));
    }
    let n = nz * nx;
    let mut planes = vec![0f32; 4 * n];
    r.read_f32_into::<LittleEndian>(&mut planes)
        .map_err(|_| Error::format("planes", "truncated"))?;
    let mut bits = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut bits)
        .map_err(|_| Error::format("valid", "truncated"))?;
    let plane = |k: usize| Array2::from_shape_fn((nz, nx), |(i, j)| f64::from(planes[k * n + i * nx + j]));
    let x = plane(2);
    let z = plane(3);
    Ok(DisplacementField {
        u_x: plane(0),
        u_z: plane(1),
        centers_x: x.row(0).to_vec(),
        centers_z: z.column(0).to_vec(),
        valid: Array2::from_shape_fn((nz, nx), |(i, j)| {
            let k = i * nx + j;
            bits[k / 8] >> (k % 8) & 1 == 1
        }),
        meta: header.meta,
    })
}
