//! Backprojection delay-and-sum reconstruction of plane-wave acquisitions,
//! coherent compounding, envelope detection and the single-frame enhancer
//! plug-in.
//!
//! Channel data are turned into analytic signals first, so interpolating the
//! delayed samples with cubic B-splines directly yields complex (IQ) pixels.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{to_analytic, AnalyticChannelData};
use crate::bspline::Spline1;
use crate::config::{ImageGrid, ProbeConfig};
use crate::error::{Error, Result};
use crate::simulate::{plane_wave_delay, ChannelData};

/// Complex image on a Cartesian grid, `[nz × nx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IQImage {
    pub pixels: Array2<Complex64>,
    pub grid: ImageGrid,
}

/// Non-negative magnitude image, `[nz × nx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeImage {
    pub pixels: Array2<f64>,
    pub grid: ImageGrid,
}

impl IQImage {
    pub fn zeros(grid: ImageGrid) -> Self {
        Self {
            pixels: Array2::zeros(grid.shape()),
            grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_shape(self.pixels.dim(), &self.grid)?;
        if self.pixels.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidParameter("IQ image holds non-finite pixels".into()));
        }
        Ok(())
    }

    pub fn envelope(&self) -> EnvelopeImage {
        EnvelopeImage {
            pixels: self.pixels.mapv(|v| v.norm()),
            grid: self.grid,
        }
    }
}

impl EnvelopeImage {
    pub fn validate(&self) -> Result<()> {
        check_shape(self.pixels.dim(), &self.grid)?;
        if self.pixels.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("envelope must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn check_shape(dim: (usize, usize), grid: &ImageGrid) -> Result<()> {
    if dim != grid.shape() {
        return Err(Error::GridMismatch(format!(
            "pixels are {}×{}, grid is {}×{}",
            dim.0, dim.1, grid.nz, grid.nx
        )));
    }
    Ok(())
}

/// Receive aperture options. Without an F-number every element contributes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DasOptions {
    /// Accept element `e` for pixel `p` iff `|x_p - x_e| <= z / (2 F#)`.
    pub f_number: Option<f64>,
}

/// Delay-and-sum image of one transmit using default options.
pub fn das_reconstruct(data: &ChannelData, probe: &ProbeConfig, grid: &ImageGrid) -> Result<IQImage> {
    das_reconstruct_with(data, probe, grid, &DasOptions::default())
}

pub fn das_reconstruct_with(
    data: &ChannelData,
    probe: &ProbeConfig,
    grid: &ImageGrid,
    options: &DasOptions,
) -> Result<IQImage> {
    data.check_probe(probe)?;
    let analytic = to_analytic(data)?;
    das_reconstruct_analytic(&analytic, probe, grid, options)
}

/// Delay-and-sum of analytic channel data.
///
/// Each element's trace is sampled at `τ = (z cos β + x sin β)/c + |p − e|/c`
/// by cubic B-spline interpolation; delays outside the record contribute
/// nothing. Pixels are equalized by the sum of the weights that contributed.
pub fn das_reconstruct_analytic(
    data: &AnalyticChannelData,
    probe: &ProbeConfig,
    grid: &ImageGrid,
    options: &DasOptions,
) -> Result<IQImage> {
    probe.validate()?;
    grid.validate()?;
    if data.samples.ncols() != probe.element_count {
        return Err(Error::ProbeMismatch(format!(
            "{} channels for a {}-element probe",
            data.samples.ncols(),
            probe.element_count
        )));
    }
    if (data.fs - probe.sampling_frequency).abs() > 1e-9 * probe.sampling_frequency {
        return Err(Error::ProbeMismatch(format!(
            "sampled at {} Hz, probe samples at {} Hz",
            data.fs, probe.sampling_frequency
        )));
    }
    if let Some(f) = options.f_number {
        if !(f > 0.0) {
            return Err(Error::InvalidParameter(format!("f-number must be positive, got {f}")));
        }
    }

    let splines: Vec<Spline1<Complex64>> = data
        .samples
        .axis_iter(Axis(1))
        .into_par_iter()
        .map(|col| Spline1::new(&col.to_vec()))
        .collect();
    let elements = probe.element_positions();
    let c = probe.sound_speed;
    let fs = data.fs;
    let xs: Vec<f64> = (0..grid.nx).map(|i| grid.x(i)).collect();
    let half_aperture_ratio = options.f_number.map(|f| 1.0 / (2.0 * f));

    let mut pixels = Array2::<Complex64>::zeros(grid.shape());
    pixels
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(row, mut out)| {
            let z = grid.z(row);
            let z2 = z * z;
            let tx_index: Vec<f64> = xs
                .iter()
                .map(|&x| (plane_wave_delay(x, z, data.tx_angle, c) - data.t0) * fs)
                .collect();
            let mut acc = vec![Complex64::new(0.0, 0.0); xs.len()];
            let mut weight = vec![0.0f64; xs.len()];
            let mut delay = vec![0.0f64; xs.len()];
            let reach = half_aperture_ratio.map(|r| r * z);
            let k = fs / c;
            for (spline, &xe) in splines.iter().zip(&elements) {
                let cols = match reach {
                    Some(reach) => {
                        let lo = xs.partition_point(|&x| x < xe - reach);
                        let hi = xs.partition_point(|&x| x <= xe + reach);
                        lo..hi
                    }
                    None => 0..xs.len(),
                };
                let start = cols.start;
                for ((d, &x), &t) in delay[cols.clone()].iter_mut().zip(&xs[cols.clone()]).zip(&tx_index[cols.clone()]) {
                    let dx = x - xe;
                    *d = t + (dx * dx + z2).sqrt() * k;
                }
                for (off, &f) in delay[cols.clone()].iter().enumerate() {
                    if let Some(v) = spline.eval(f) {
                        acc[start + off] += v;
                        weight[start + off] += 1.0;
                    }
                }
            }
            for (col, px) in out.iter_mut().enumerate() {
                *px = if weight[col] > 0.0 {
                    acc[col] / weight[col]
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
        });
    Ok(IQImage {
        pixels,
        grid: *grid,
    })
}

/// Pixel-wise mean of images sharing one grid.
pub fn compound(images: &[IQImage]) -> Result<IQImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::Empty("no images to compound".into()))?;
    let mut sum = first.pixels.clone();
    for img in &images[1..] {
        if !img.grid.approx_eq(&first.grid) || img.pixels.dim() != sum.dim() {
            return Err(Error::GridMismatch("compounded images differ in grid".into()));
        }
        sum += &img.pixels;
    }
    let n = images.len() as f64;
    sum.mapv_inplace(|v| v / n);
    Ok(IQImage {
        pixels: sum,
        grid: first.grid,
    })
}

/// Modulus followed by axial decimation by two: rows 0, 2, 4, … are kept and
/// an odd trailing row is dropped (see [`ImageGrid::axially_decimated`]).
pub fn envelope_on_tracking_grid(iq: &IQImage) -> Result<EnvelopeImage> {
    iq.validate()?;
    let grid = iq.grid.axially_decimated();
    let pixels = Array2::from_shape_fn(grid.shape(), |(r, c)| iq.pixels[[2 * r, c]].norm());
    Ok(EnvelopeImage { pixels, grid })
}

/// Single-frame image enhancer applied between reconstruction and tracking.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnhancerHook {
    #[default]
    Identity,
    /// Runs `program [args..] <input> <output>`; both paths hold IQ image
    /// files. A nonzero exit status is a failure.
    ExternalCommand {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default)]
        io_format: IoPrecision,
    },
}

impl EnhancerHook {
    /// Parses a whitespace-separated command line into an external hook.
    pub fn from_command_line(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Enhancer("empty enhancer command".into()))?;
        Ok(Self::ExternalCommand {
            program: PathBuf::from(program),
            args: parts.map(str::to_owned).collect(),
            io_format: IoPrecision::F64,
        })
    }
}

pub fn enhance(img: &IQImage, hook: &EnhancerHook) -> Result<IQImage> {
    match hook {
        EnhancerHook::Identity => Ok(img.clone()),
        EnhancerHook::ExternalCommand {
            program,
            args,
            io_format,
        } => {
            let dir = scratch_dir()?;
            let input = dir.join("input.iq");
            let output = dir.join("output.iq");
            let result = (|| {
                write_iq_image(&input, img, *io_format)?;
                let status = Command::new(program)
                    .args(args)
                    .arg(&input)
                    .arg(&output)
                    .status()
                    .map_err(|e| Error::Enhancer(format!("cannot run {}: {e}", program.display())))?;
                if !status.success() {
                    return Err(Error::Enhancer(format!(
                        "{} exited with {status}",
                        program.display()
                    )));
                }
                let out = read_iq_image(&output)
                    .map_err(|e| Error::Enhancer(format!("unreadable enhancer output: {e}")))?;
                if !out.grid.approx_eq(&img.grid) {
                    return Err(Error::GridMismatch(format!(
                        "enhancer returned {}×{} pixels for a {}×{} input",
                        out.grid.nz, out.grid.nx, img.grid.nz, img.grid.nx
                    )));
                }
                Ok(IQImage {
                    pixels: out.pixels,
                    grid: img.grid,
                })
            })();
            let _ = fs::remove_dir_all(&dir);
            result
        }
    }
}

fn scratch_dir() -> Result<PathBuf> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let dir = std::env::temp_dir().join(format!("pwspeckle-enhance-{}-{n}", std::process::id()));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Sample precision of image files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoPrecision {
    #[default]
    F32,
    F64,
}

const IMAGE_MAGIC: &[u8; 4] = b"PWIM";
const IMAGE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
enum DType {
    ComplexF32 = 1,
    RealF32 = 2,
    ComplexF64 = 3,
    RealF64 = 4,
}

impl DType {
    fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            1 => Self::ComplexF32,
            2 => Self::RealF32,
            3 => Self::ComplexF64,
            4 => Self::RealF64,
            t => return Err(Error::format("dtype", format!("unknown dtype tag {t}"))),
        })
    }

    fn is_complex(self) -> bool {
        matches!(self, Self::ComplexF32 | Self::ComplexF64)
    }

    fn is_f64(self) -> bool {
        matches!(self, Self::ComplexF64 | Self::RealF64)
    }
}

fn write_header(w: &mut impl Write, grid: &ImageGrid, dtype: DType) -> Result<()> {
    w.write_all(IMAGE_MAGIC)?;
    w.write_u32::<LittleEndian>(IMAGE_VERSION)?;
    w.write_u32::<LittleEndian>(dtype as u32)?;
    w.write_u64::<LittleEndian>(grid.nz as u64)?;
    w.write_u64::<LittleEndian>(grid.nx as u64)?;
    for v in [grid.x_min, grid.x_max, grid.z_min, grid.z_max, grid.dx, grid.dz] {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(ImageGrid, DType)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("magic", "file too short"))?;
    if &magic != IMAGE_MAGIC {
        return Err(Error::format("magic", "not an image file"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != IMAGE_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let dtype = DType::from_tag(r.read_u32::<LittleEndian>()?)?;
    let nz = r.read_u64::<LittleEndian>()? as usize;
    let nx = r.read_u64::<LittleEndian>()? as usize;
    if nz == 0 || nx == 0 || nz.saturating_mul(nx) > 1 << 30 {
        return Err(Error::format("nz", format!("implausible shape {nz}×{nx}")));
    }
    let mut ext = [0f64; 6];
    r.read_f64_into::<LittleEndian>(&mut ext)?;
    let grid = ImageGrid {
        x_min: ext[0],
        x_max: ext[1],
        z_min: ext[2],
        z_max: ext[3],
        dx: ext[4],
        dz: ext[5],
        nx,
        nz,
    };
    grid.validate()
        .map_err(|e| Error::format("grid", e.to_string()))?;
    Ok((grid, dtype))
}

fn read_values(r: &mut impl Read, count: usize, f64_samples: bool) -> Result<Vec<f64>> {
    if f64_samples {
        let mut v = vec![0f64; count];
        r.read_f64_into::<LittleEndian>(&mut v)
            .map_err(|_| Error::format("pixels", "truncated pixel block"))?;
        Ok(v)
    } else {
        let mut v = vec![0f32; count];
        r.read_f32_into::<LittleEndian>(&mut v)
            .map_err(|_| Error::format("pixels", "truncated pixel block"))?;
        Ok(v.into_iter().map(f64::from).collect())
    }
}

fn write_value(w: &mut impl Write, v: f64, precision: IoPrecision) -> Result<()> {
    match precision {
        IoPrecision::F32 => w.write_f32::<LittleEndian>(v as f32)?,
        IoPrecision::F64 => w.write_f64::<LittleEndian>(v)?,
    }
    Ok(())
}

/// Little-endian: magic `PWIM`, version u32, dtype tag u32 (1 complex f32,
/// 2 real f32, 3 complex f64, 4 real f64), nz u64, nx u64, then
/// `x_min, x_max, z_min, z_max, dx, dz` as f64, then row-major pixels
/// (`re, im` pairs for complex).
pub fn write_iq_image(path: &Path, img: &IQImage, precision: IoPrecision) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let dtype = match precision {
        IoPrecision::F32 => DType::ComplexF32,
        IoPrecision::F64 => DType::ComplexF64,
    };
    write_header(&mut w, &img.grid, dtype)?;
    for v in img.pixels.iter() {
        write_value(&mut w, v.re, precision)?;
        write_value(&mut w, v.im, precision)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_iq_image(path: &Path) -> Result<IQImage> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let (grid, dtype) = read_header(&mut r)?;
    if !dtype.is_complex() {
        return Err(Error::format("dtype", "expected a complex (IQ) image"));
    }
    let v = read_values(&mut r, 2 * grid.len(), dtype.is_f64())?;
    let pixels = Array2::from_shape_fn(grid.shape(), |(i, j)| {
        let k = 2 * (i * grid.nx + j);
        Complex64::new(v[k], v[k + 1])
    });
    Ok(IQImage { pixels, grid })
}

pub fn write_envelope_image(path: &Path, img: &EnvelopeImage, precision: IoPrecision) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let dtype = match precision {
        IoPrecision::F32 => DType::RealF32,
        IoPrecision::F64 => DType::RealF64,
    };
    write_header(&mut w, &img.grid, dtype)?;
    for v in img.pixels.iter() {
        write_value(&mut w, *v, precision)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an envelope file; an IQ file is accepted and converted to its
/// modulus.
pub fn read_envelope_image(path: &Path) -> Result<EnvelopeImage> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let (grid, dtype) = read_header(&mut r)?;
    if dtype.is_complex() {
        drop(r);
        return Ok(read_iq_image(path)?.envelope());
    }
    let v = read_values(&mut r, grid.len(), dtype.is_f64())?;
    let pixels = Array2::from_shape_vec(grid.shape(), v)
        .map_err(|e| Error::format("pixels", e.to_string()))?;
    Ok(EnvelopeImage { pixels, grid })
}

/// `a·x + b·y` for images on one grid.
pub fn combine(x: &IQImage, a: f64, y: &IQImage, b: f64) -> Result<IQImage> {
    if x.pixels.dim() != y.pixels.dim() {
        return Err(Error::GridMismatch("images differ in shape".into()));
    }
    let mut pixels = x.pixels.clone();
    Zip::from(&mut pixels)
        .and(&y.pixels)
        .for_each(|p, q| *p = *p * a + *q * b);
    Ok(IQImage {
        pixels,
        grid: x.grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::make_image_grid;
    use crate::phantom::{MotionLaw, Scatterer, ScattererPhantom};
    use crate::simulate::{simulate_channel_data, PulseModel};

    fn small_probe() -> ProbeConfig {
        let mut p = ProbeConfig::ge9ld();
        p.element_count = 64;
        p.aperture = 63.0 * p.pitch;
        p
    }

    fn point_data(probe: &ProbeConfig, x: f64, z: f64, angle: f64) -> ChannelData {
        let ph = ScattererPhantom::new(
            vec![Scatterer {
                position: [x, 0.0, z],
                amplitude: 1.0,
                group: None,
            }],
            MotionLaw::Static,
        );
        let pulse = PulseModel::for_probe(probe);
        simulate_channel_data(&ph, probe, angle, &pulse, (0.0, 2.2 * z / probe.sound_speed + 10e-6))
            .unwrap()
    }

    fn argmax(img: &IQImage) -> (usize, usize) {
        let mut best = (0, 0, -1.0);
        for ((r, c), v) in img.pixels.indexed_iter() {
            if v.norm() > best.2 {
                best = (r, c, v.norm());
            }
        }
        (best.0, best.1)
    }

    #[test]
    fn zero_data_gives_zero_image() {
        let probe = small_probe();
        let grid = make_image_grid(&probe, (5e-3, 8e-3), 0.125, 0.25).unwrap();
        let data = ChannelData {
            samples: Array2::zeros((300, 64)),
            t0: 0.0,
            fs: probe.sampling_frequency,
            tx_angle: 0.0,
        };
        let img = das_reconstruct(&data, &probe, &grid).unwrap();
        assert!(img.pixels.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn constant_analytic_signal_reconstructs_constant() {
        let probe = small_probe();
        let grid = make_image_grid(&probe, (5e-3, 8e-3), 0.125, 0.25).unwrap();
        let v = Complex64::new(0.3, -1.2);
        let data = AnalyticChannelData {
            samples: Array2::from_elem((400, 64), v),
            t0: 0.0,
            fs: probe.sampling_frequency,
            tx_angle: 0.0,
        };
        for opts in [DasOptions::default(), DasOptions { f_number: Some(1.0) }] {
            let img = das_reconstruct_analytic(&data, &probe, &grid, &opts).unwrap();
            for p in img.pixels.iter() {
                assert!((p - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn point_is_localized() {
        let probe = small_probe();
        let grid = make_image_grid(&probe, (15e-3, 25e-3), 0.125, 0.25).unwrap();
        let data = point_data(&probe, 1.0e-3, 20e-3, 0.0);
        let img = das_reconstruct(&data, &probe, &grid).unwrap();
        let (r, c) = argmax(&img);
        assert!((grid.x(c) - 1.0e-3).abs() <= grid.dx);
        assert!((grid.z(r) - 20e-3).abs() <= 2.0 * grid.dz);
    }

    #[test]
    fn fs_mismatch_rejected() {
        let probe = small_probe();
        let grid = make_image_grid(&probe, (5e-3, 8e-3), 0.125, 0.25).unwrap();
        let data = ChannelData {
            samples: Array2::zeros((300, 64)),
            t0: 0.0,
            fs: 10e6,
            tx_angle: 0.0,
        };
        assert!(matches!(
            das_reconstruct(&data, &probe, &grid),
            Err(Error::ProbeMismatch(_))
        ));
    }

    #[test]
    fn decimated_grid_matches_decimated_image() {
        let probe = small_probe();
        let grid = make_image_grid(&probe, (18e-3, 22e-3), 0.125, 0.25).unwrap();
        let data = point_data(&probe, 0.0, 20e-3, 0.0);
        let full = das_reconstruct(&data, &probe, &grid).unwrap();
        let env = envelope_on_tracking_grid(&full).unwrap();
        let direct = das_reconstruct(&data, &probe, &grid.axially_decimated())
            .unwrap()
            .envelope();
        assert_eq!(env.grid.shape(), direct.grid.shape());
        let scale = env.pixels.iter().fold(0.0f64, |m, v| m.max(*v));
        for (a, b) in env.pixels.iter().zip(direct.pixels.iter()) {
            assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn compound_rules() {
        let grid = ImageGrid::from_counts(0.0, 1e-3, 1e-4, 1e-4, 5, 4);
        let img = IQImage {
            pixels: Array2::from_shape_fn((4, 5), |(r, c)| Complex64::new(r as f64, -(c as f64))),
            grid,
        };
        let same = compound(&[img.clone(), img.clone(), img.clone()]).unwrap();
        for (a, b) in same.pixels.iter().zip(img.pixels.iter()) {
            assert!((a - b).norm() < 1e-15);
        }
        let neg = IQImage {
            pixels: img.pixels.mapv(|v| -v),
            grid,
        };
        assert!(compound(&[img.clone(), neg])
            .unwrap()
            .pixels
            .iter()
            .all(|v| v.norm() == 0.0));
        assert!(compound(&[]).is_err());
        let other = IQImage::zeros(ImageGrid::from_counts(0.0, 1e-3, 1e-4, 1e-4, 5, 3));
        assert!(compound(&[img, other]).is_err());
    }

    #[test]
    fn envelope_decimation() {
        let grid = ImageGrid::from_counts(0.0, 1e-3, 1e-4, 0.5e-4, 3, 7);
        let img = IQImage {
            pixels: Array2::from_elem((7, 3), Complex64::new(3.0, 4.0)),
            grid,
        };
        let env = envelope_on_tracking_grid(&img).unwrap();
        assert_eq!(env.pixels.dim(), (3, 3));
        assert!(env.pixels.iter().all(|v| (*v - 5.0).abs() < 1e-15));
        let env1 = envelope_on_tracking_grid(&compound(&[img.clone()]).unwrap()).unwrap();
        assert_eq!(env1, env);
    }

    #[test]
    fn identity_enhancer_is_bit_identical() {
        let grid = ImageGrid::from_counts(0.0, 1e-3, 1e-4, 1e-4, 4, 3);
        let img = IQImage {
            pixels: Array2::from_shape_fn((3, 4), |(r, c)| Complex64::new(0.1 * r as f64, 1.0 / (c + 1) as f64)),
            grid,
        };
        assert_eq!(enhance(&img, &EnhancerHook::Identity).unwrap(), img);
    }

    #[cfg(unix)]
    #[test]
    fn external_enhancer_copy_and_failures() {
        let grid = ImageGrid::from_counts(0.0, 1e-3, 1e-4, 1e-4, 4, 3);
        let img = IQImage {
            pixels: Array2::from_shape_fn((3, 4), |(r, c)| Complex64::new(0.1 * r as f64, 1.0 / (c + 1) as f64)),
            grid,
        };
        let copy = EnhancerHook::from_command_line("cp").unwrap();
        assert_eq!(enhance(&img, &copy).unwrap(), img);

        let fail = EnhancerHook::from_command_line("false").unwrap();
        assert!(matches!(enhance(&img, &fail), Err(Error::Enhancer(_))));

        // A hook that answers with a differently sized image.
        let dir = tempfile::tempdir().unwrap();
        let wrong = dir.path().join("wrong.iq");
        write_iq_image(&wrong, &IQImage::zeros(ImageGrid::from_counts(0.0, 1e-3, 1e-4, 1e-4, 5, 3)), IoPrecision::F64)
            .unwrap();
        let script = dir.path().join("wrong.sh");
        fs::write(&script, format!("#!/bin/sh\ncp {} \"$2\"\n", wrong.display())).unwrap();
        let hook = EnhancerHook::from_command_line(&format!("sh {}", script.display())).unwrap();
        let err = enhance(&img, &hook).unwrap_err();
        assert!(err.to_string().contains("grid mismatch"), "{err}");
    }

    #[test]
    fn image_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = ImageGrid::from_counts(-1e-3, 1e-3, 1e-4, 2e-4, 4, 3);
        let img = IQImage {
            pixels: Array2::from_shape_fn((3, 4), |(r, c)| Complex64::new(r as f64 - 0.5, c as f64 * 0.25)),
            grid,
        };
        let p = dir.path().join("a.iq");
        write_iq_image(&p, &img, IoPrecision::F32).unwrap();
        assert_eq!(read_iq_image(&p).unwrap(), img);
        let env = img.envelope();
        let q = dir.path().join("a.env");
        write_envelope_image(&q, &env, IoPrecision::F64).unwrap();
        assert_eq!(read_envelope_image(&q).unwrap(), env);
        assert!(read_iq_image(&q).is_err());
        assert_eq!(read_envelope_image(&p).unwrap(), read_iq_image(&p).unwrap().envelope());
    }
}
