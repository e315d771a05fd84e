//! Far-field pulse-echo simulation of plane-wave transmits.
//!
//! Every scatterer contributes one delayed, weighted copy of the two-way
//! pulse per element. The transmit wavefront is an ideal steered plane wave;
//! on receive each element has a soft `sinc` directivity and `1/r` spreading.
//! Attenuation is neglected.
//!
//! Echoes are deposited as fractional-delay impulses on an oversampled time
//! axis (cubic Lagrange weights) and then convolved with the sampled two-way
//! pulse, which evaluates the same sum as placing each pulse individually.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ProbeConfig;
use crate::error::{Error, Result};
use crate::phantom::ScattererPhantom;

/// Raw echo samples of one transmit, `[n_time × n_elements]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelData {
    pub samples: Array2<f64>,
    /// Time of the first sample, relative to the transmit event.
    pub t0: f64,
    pub fs: f64,
    pub tx_angle: f64,
}

impl ChannelData {
    pub fn n_time(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_elements(&self) -> usize {
        self.samples.ncols()
    }

    pub fn check_probe(&self, probe: &ProbeConfig) -> Result<()> {
        if self.n_elements() != probe.element_count {
            return Err(Error::ProbeMismatch(format!(
                "{} channels for a {}-element probe",
                self.n_elements(),
                probe.element_count
            )));
        }
        if (self.fs - probe.sampling_frequency).abs() > 1e-9 * probe.sampling_frequency {
            return Err(Error::ProbeMismatch(format!(
                "sampled at {} Hz, probe samples at {} Hz",
                self.fs, probe.sampling_frequency
            )));
        }
        Ok(())
    }

    /// `a·self + b·other`; both must share timing and shape.
    pub fn linear_combination(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.samples.dim() != other.samples.dim() || self.t0 != other.t0 || self.fs != other.fs {
            return Err(Error::InvalidParameter("channel data layouts differ".into()));
        }
        Ok(Self {
            samples: &self.samples * a + &other.samples * b,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    /// Cosine carrier under a Gaussian envelope.
    #[default]
    GaussianModulatedSinusoid,
}

/// One-way excitation; the echo waveform is its autoconvolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseModel {
    pub center_frequency: f64,
    /// −6 dB bandwidth over center frequency.
    pub fractional_bandwidth: f64,
    #[serde(default)]
    pub kind: PulseKind,
}

impl PulseModel {
    pub fn for_probe(probe: &ProbeConfig) -> Self {
        Self {
            center_frequency: probe.transmit_frequency,
            fractional_bandwidth: probe.fractional_bandwidth,
            kind: PulseKind::GaussianModulatedSinusoid,
        }
    }

    /// Standard deviation of the one-way Gaussian envelope in seconds.
    pub fn sigma(&self) -> f64 {
        // −6 dB half-width of a Gaussian spectrum is σ_f·sqrt(2 ln 2).
        let sigma_f =
            self.fractional_bandwidth * self.center_frequency / (2.0 * (2.0 * 2f64.ln()).sqrt());
        1.0 / (2.0 * PI * sigma_f)
    }

    pub fn one_way(&self, t: f64) -> f64 {
        let s = self.sigma();
        (-t * t / (2.0 * s * s)).exp() * (2.0 * PI * self.center_frequency * t).cos()
    }

    /// Two-way pulse sampled at `fs` on `-k..=k`, normalized to unit peak.
    /// Returns the taps and `k`.
    pub fn two_way_taps(&self, fs: f64) -> (Vec<f64>, usize) {
        let half_one = (4.5 * self.sigma() * fs).ceil() as isize;
        let one: Vec<f64> = (-half_one..=half_one).map(|k| self.one_way(k as f64 / fs)).collect();
        let n = one.len();
        let mut two = vec![0.0; 2 * n - 1];
        for (i, a) in one.iter().enumerate() {
            for (j, b) in one.iter().enumerate() {
                two[i + j] += a * b;
            }
        }
        let peak = two.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for v in &mut two {
            *v /= peak;
        }
        (two, n - 1)
    }
}

/// Simulation resolution knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// Oversampling of the deposition time axis relative to `fs`.
    pub oversampling: usize,
    /// Apply element directivity on receive.
    pub directivity: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            oversampling: 4,
            directivity: true,
        }
    }
}

/// Transmit delay of a steered plane wave reaching `(x, z)`.
#[inline]
pub fn plane_wave_delay(x: f64, z: f64, angle: f64, sound_speed: f64) -> f64 {
    (z * angle.cos() + x * angle.sin()) / sound_speed
}

/// Receive time window `[0, (2 z_max + L) / c]` that covers every echo from
/// depths up to `z_max` plus the pulse tail.
pub fn default_time_window(probe: &ProbeConfig, z_max: f64, pulse: &PulseModel) -> (f64, f64) {
    let tail = 6.5 * pulse.sigma();
    (0.0, (2.0 * z_max + probe.aperture) / probe.sound_speed + tail)
}

struct DirectivityTable {
    values: Vec<f64>,
    scale: f64,
}

impl DirectivityTable {
    const SEGMENTS: usize = 8192;

    fn new(element_width: f64, wavelength: f64) -> Self {
        let k = PI * element_width / wavelength;
        let values = (0..=Self::SEGMENTS)
            .map(|i| {
                let u = -1.0 + 2.0 * i as f64 / Self::SEGMENTS as f64;
                let a = k * u;
                if a.abs() < 1e-12 {
                    1.0
                } else {
                    a.sin() / a
                }
            })
            .collect();
        Self {
            values,
            scale: Self::SEGMENTS as f64 / 2.0,
        }
    }

    #[inline(always)]
    fn at(&self, sin_theta: f64) -> f64 {
        let f = (sin_theta + 1.0) * self.scale;
        let i = (f as usize).min(Self::SEGMENTS - 1);
        let t = f - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }
}

/// Per-transmit channel data of `phantom` for a plane wave steered by
/// `tx_angle`, sampled at the probe rate over `time_window`.
///
/// Echoes whose pulse lies outside the window are truncated.
pub fn simulate_channel_data(
    phantom: &ScattererPhantom,
    probe: &ProbeConfig,
    tx_angle: f64,
    pulse: &PulseModel,
    time_window: (f64, f64),
) -> Result<ChannelData> {
    simulate_channel_data_with(phantom, probe, tx_angle, pulse, time_window, SimulationOptions::default())
}

pub fn simulate_channel_data_with(
    phantom: &ScattererPhantom,
    probe: &ProbeConfig,
    tx_angle: f64,
    pulse: &PulseModel,
    time_window: (f64, f64),
    options: SimulationOptions,
) -> Result<ChannelData> {
    probe.validate()?;
    phantom.validate()?;
    let (t0, t1) = time_window;
    if !(t1 > t0) {
        return Err(Error::InvalidParameter(format!("empty time window [{t0}, {t1}]")));
    }
    let fs = probe.sampling_frequency;
    let os = options.oversampling.max(1);
    let fs_os = fs * os as f64;
    let n_time = ((t1 - t0) * fs).ceil() as usize + 1;
    let (taps, half) = pulse.two_way_taps(fs_os);
    // Deposition buffer index m ↔ time t0 + (m - half)/fs_os.
    let buf_len = (n_time - 1) * os + 2 * half + 1;

    let c = probe.sound_speed;
    let directivity = DirectivityTable::new(probe.element_width, probe.wavelength());
    let use_directivity = options.directivity;

    struct Prepared {
        x: f64,
        yz2: f64,
        /// Deposition index of the transmit delay.
        tx_index: f64,
        amplitude: f64,
    }
    let prepared: Vec<Prepared> = phantom
        .scatterers
        .iter()
        .map(|s| {
            let [x, y, z] = s.position;
            Prepared {
                x,
                yz2: y * y + z * z,
                tx_index: (plane_wave_delay(x, z, tx_angle, c) - t0) * fs_os + half as f64,
                amplitude: s.amplitude,
            }
        })
        .collect();
    let rx_scale = fs_os / c;

    let elements = probe.element_positions();
    let columns: Vec<Vec<f64>> = elements
        .par_iter()
        .map(|&xe| {
            let mut buf = vec![0.0; buf_len];
            let upper = (buf_len - 3) as f64;
            for s in &prepared {
                let dx = s.x - xe;
                let r = (dx * dx + s.yz2).sqrt();
                let f = s.tx_index + r * rx_scale;
                if !(f >= 1.0 && f < upper) {
                    continue;
                }
                let mut w = s.amplitude / r;
                if use_directivity {
                    w *= directivity.at(dx / r);
                }
                let i = f.floor();
                let t = f - i;
                let i = i as usize;
                let tm1 = t - 1.0;
                let tm2 = t - 2.0;
                let tp1 = t + 1.0;
                buf[i - 1] -= w * t * tm1 * tm2 / 6.0;
                buf[i] += w * tp1 * tm1 * tm2 / 2.0;
                buf[i + 1] -= w * tp1 * t * tm2 / 2.0;
                buf[i + 2] += w * tp1 * t * tm1 / 6.0;
            }
            (0..n_time)
                .map(|n| {
                    let center = n * os + half;
                    let window = &buf[center - half..=center + half];
                    // y(t_n) = Σ_j buf[center - j] h(j)
                    window.iter().rev().zip(&taps).map(|(b, h)| b * h).sum()
                })
                .collect()
        })
        .collect();

    let mut samples = Array2::zeros((n_time, elements.len()));
    for (e, col) in columns.iter().enumerate() {
        for (n, v) in col.iter().enumerate() {
            samples[[n, e]] = *v;
        }
    }
    Ok(ChannelData {
        samples,
        t0,
        fs,
        tx_angle,
    })
}

const CHANNEL_MAGIC: &[u8; 4] = b"PWCD";
const CHANNEL_VERSION: u32 = 1;

/// Little-endian: magic `PWCD`, version u32, n_time u64, n_elements u64,
/// fs f64, t0 f64, tx_angle f64, then f32 samples in time-major order.
pub fn write_channel_data(path: &Path, data: &ChannelData) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CHANNEL_MAGIC)?;
    w.write_u32::<LittleEndian>(CHANNEL_VERSION)?;
    w.write_u64::<LittleEndian>(data.n_time() as u64)?;
    w.write_u64::<LittleEndian>(data.n_elements() as u64)?;
    w.write_f64::<LittleEndian>(data.fs)?;
    w.write_f64::<LittleEndian>(data.t0)?;
    w.write_f64::<LittleEndian>(data.tx_angle)?;
    for v in data.samples.iter() {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_channel_data(path: &Path) -> Result<ChannelData> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("magic", "file too short"))?;
    if &magic != CHANNEL_MAGIC {
        return Err(Error::format("magic", "not a channel-data file"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHANNEL_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let n_time = r.read_u64::<LittleEndian>()? as usize;
    let n_elements = r.read_u64::<LittleEndian>()? as usize;
    if n_time == 0 || n_elements == 0 || n_time.saturating_mul(n_elements) > 1 << 31 {
        return Err(Error::format("n_time", format!("implausible shape {n_time}×{n_elements}")));
    }
    let fs = r.read_f64::<LittleEndian>()?;
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::format("fs", format!("invalid sampling frequency {fs}")));
    }
    let t0 = r.read_f64::<LittleEndian>()?;
    if !t0.is_finite() {
        return Err(Error::format("t0", "not finite"));
    }
    let tx_angle = r.read_f64::<LittleEndian>()?;
    if !tx_angle.is_finite() {
        return Err(Error::format("tx_angle", "not finite"));
    }
    let mut raw = vec![0f32; n_time * n_elements];
    r.read_f32_into::<LittleEndian>(&mut raw)
        .map_err(|_| Error::format("samples", "truncated sample block"))?;
    let samples = Array2::from_shape_vec((n_time, n_elements), raw.into_iter().map(f64::from).collect())
        .map_err(|e| Error::format("samples", e.to_string()))?;
    Ok(ChannelData {
        samples,
        t0,
        fs,
        tx_angle,
    })
}
