//! Probe geometry, steered plane-wave sequence planning and image grids.
//!
//! All quantities are SI (meters, seconds, hertz, radians). Wavelengths are
//! always derived from the sound speed and a frequency; they are never stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-array transducer and acquisition constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub element_count: usize,
    pub pitch: f64,
    pub element_width: f64,
    /// Lateral span of the array, center of first element to center of last.
    pub aperture: f64,
    pub center_frequency: f64,
    pub transmit_frequency: f64,
    pub sampling_frequency: f64,
    pub sound_speed: f64,
    pub elevation_focus: f64,
    pub fractional_bandwidth: f64,
}

impl ProbeConfig {
    /// 192-element linear array sampled at four times its 5.208 MHz transmit
    /// frequency. The element width is nominal.
    pub fn ge9ld() -> Self {
        Self {
            element_count: 192,
            pitch: 230e-6,
            element_width: 207e-6,
            aperture: 43.93e-3,
            center_frequency: 5.3e6,
            transmit_frequency: 5.208e6,
            sampling_frequency: 20.833e6,
            sound_speed: 1540.0,
            elevation_focus: 28e-3,
            fractional_bandwidth: 0.75,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProbe(msg));
        if self.element_count < 2 {
            return bad(format!("element_count {} < 2", self.element_count));
        }
        for (name, v) in [
            ("pitch", self.pitch),
            ("element_width", self.element_width),
            ("aperture", self.aperture),
            ("center_frequency", self.center_frequency),
            ("transmit_frequency", self.transmit_frequency),
            ("sampling_frequency", self.sampling_frequency),
            ("sound_speed", self.sound_speed),
            ("fractional_bandwidth", self.fractional_bandwidth),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.elevation_focus.is_finite() && self.elevation_focus >= 0.0) {
            return bad(format!("elevation_focus {}", self.elevation_focus));
        }
        let span = self.element_count as f64 * self.pitch;
        if (self.aperture - span).abs() > self.pitch * (1.0 + 1e-9) {
            return bad(format!(
                "aperture {} inconsistent with {} elements at pitch {}",
                self.aperture, self.element_count, self.pitch
            ));
        }
        if self.sampling_frequency < 2.0 * self.transmit_frequency {
            return bad(format!(
                "sampling frequency {} below twice the transmit frequency {}",
                self.sampling_frequency, self.transmit_frequency
            ));
        }
        if self.wavelength() >= self.aperture || self.center_wavelength() >= self.aperture {
            return bad("wavelength not smaller than aperture".into());
        }
        Ok(())
    }

    /// Wavelength at the transmit frequency.
    pub fn wavelength(&self) -> f64 {
        self.sound_speed / self.transmit_frequency
    }

    /// Wavelength at the transducer center frequency.
    pub fn center_wavelength(&self) -> f64 {
        self.sound_speed / self.center_frequency
    }

    /// Lateral position of element `index`; the array is centered on x = 0.
    pub fn element_x(&self, index: usize) -> f64 {
        let spacing = self.aperture / (self.element_count - 1) as f64;
        (index as f64 - (self.element_count - 1) as f64 / 2.0) * spacing
    }

    pub fn element_positions(&self) -> Vec<f64> {
        (0..self.element_count).map(|e| self.element_x(e)).collect()
    }
}

/// Steering angle spacing `arcsin(λ/L)`.
///
/// The wavelength is taken at the probe's center frequency, which is the
/// convention that reproduces the published 0.38° spacing and the 87-angle
/// reference sequence for the 192-element array.
pub fn plan_angle_spacing(probe: &ProbeConfig) -> f64 {
    (probe.center_wavelength() / probe.aperture).asin()
}

/// Ordered steering angles of a compounded acquisition and its timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringSequence {
    pub angles: Vec<f64>,
    pub prf: f64,
}

impl SteeringSequence {
    pub fn count(&self) -> usize {
        self.angles.len()
    }

    pub fn frame_rate(&self) -> f64 {
        self.prf / self.angles.len() as f64
    }

    /// Time between the first transmits of two consecutive frames.
    pub fn frame_interval(&self) -> f64 {
        self.angles.len() as f64 / self.prf
    }
}

/// Plans `n_angles` steered plane waves in the alternate order
/// `(-β_M, β_M, -β_{M-1}, β_{M-1}, ..., -β_1, β_1, 0)`.
pub fn plan_sequence(probe: &ProbeConfig, n_angles: usize, prf: f64) -> Result<SteeringSequence> {
    if n_angles == 0 || n_angles % 2 == 0 {
        return Err(Error::InvalidSequence(format!(
            "number of angles must be odd and positive, got {n_angles}"
        )));
    }
    if !(prf.is_finite() && prf > 0.0) {
        return Err(Error::InvalidSequence(format!("prf must be positive, got {prf}")));
    }
    let spacing = plan_angle_spacing(probe);
    let half = (n_angles - 1) / 2;
    let mut angles = Vec::with_capacity(n_angles);
    for n in (1..=half).rev() {
        let beta = n as f64 * spacing;
        angles.push(-beta);
        angles.push(beta);
    }
    angles.push(0.0);
    Ok(SteeringSequence { angles, prf })
}

/// Number of angles `L / (λ F#)` of a reference compounding sequence,
/// rounded to the nearest integer and then up to the next odd one.
pub fn reference_angle_count(probe: &ProbeConfig, f_number: f64) -> Result<usize> {
    if !(f_number.is_finite() && f_number > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "f-number must be positive, got {f_number}"
        )));
    }
    Ok(odd_at_least_one(
        probe.aperture / (probe.center_wavelength() * f_number),
    ))
}

fn odd_at_least_one(value: f64) -> usize {
    let n = value.round().max(1.0) as usize;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// Cartesian pixel grid; pixel centers sit on the grid nodes and both
/// endpoints are nodes. Rows run along depth (`z`), columns laterally (`x`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub dx: f64,
    pub dz: f64,
    pub nx: usize,
    pub nz: usize,
}

impl ImageGrid {
    /// Builds the smallest grid with the given spacing whose nodes start at
    /// the minima and cover the requested maxima. The stored maxima are the
    /// last nodes.
    pub fn covering(x_range: (f64, f64), z_range: (f64, f64), dx: f64, dz: f64) -> Result<Self> {
        if !(dx > 0.0 && dz > 0.0 && dx.is_finite() && dz.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacings must be positive: dx={dx}, dz={dz}")));
        }
        let count = |lo: f64, hi: f64, d: f64, axis: &str| -> Result<usize> {
            if !(lo.is_finite() && hi.is_finite()) || hi < lo {
                return Err(Error::InvalidGrid(format!("{axis} range [{lo}, {hi}] not increasing")));
            }
            Ok(((hi - lo) / d - 1e-9).ceil().max(0.0) as usize + 1)
        };
        let nx = count(x_range.0, x_range.1, dx, "x")?;
        let nz = count(z_range.0, z_range.1, dz, "z")?;
        Ok(Self::from_counts(x_range.0, z_range.0, dx, dz, nx, nz))
    }

    pub fn from_counts(x_min: f64, z_min: f64, dx: f64, dz: f64, nx: usize, nz: usize) -> Self {
        Self {
            x_min,
            x_max: x_min + (nx.max(1) - 1) as f64 * dx,
            z_min,
            z_max: z_min + (nz.max(1) - 1) as f64 * dz,
            dx,
            dz,
            nx,
            nz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.nz == 0 {
            return Err(Error::InvalidGrid("empty grid".into()));
        }
        if !(self.dx > 0.0 && self.dz > 0.0) {
            return Err(Error::InvalidGrid("non-positive spacing".into()));
        }
        let tol = 1e-9 * (self.dx + self.dz);
        if (self.x_min + (self.nx - 1) as f64 * self.dx - self.x_max).abs() > tol * self.nx as f64
            || (self.z_min + (self.nz - 1) as f64 * self.dz - self.z_max).abs()
                > tol * self.nz as f64
        {
            return Err(Error::InvalidGrid("extents inconsistent with counts".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn x(&self, col: usize) -> f64 {
        self.x_min + col as f64 * self.dx
    }

    #[inline]
    pub fn z(&self, row: usize) -> f64 {
        self.z_min + row as f64 * self.dz
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nz, self.nx)
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The grid made of every second row (rows 0, 2, 4, ...), i.e. the grid
    /// of an axially decimated image. An odd trailing row is dropped.
    pub fn axially_decimated(&self) -> Self {
        let nz = self.nz.div_ceil(2).max(1);
        let nz = if self.nz > 1 && self.nz % 2 == 1 { nz - 1 } else { nz };
        Self::from_counts(self.x_min, self.z_min, self.dx, 2.0 * self.dz, self.nx, nz.max(1))
    }

    /// Same nodes within a tolerance of a thousandth of a pixel.
    pub fn approx_eq(&self, other: &Self) -> bool {
        let close = |a: f64, b: f64, d: f64| (a - b).abs() <= 1e-3 * d;
        self.nx == other.nx
            && self.nz == other.nz
            && close(self.x_min, other.x_min, self.dx)
            && close(self.z_min, other.z_min, self.dz)
            && close(self.dx, other.dx, self.dx)
            && close(self.dz, other.dz, self.dz)
    }
}

/// Grid spanning the aperture laterally and `depth_range` axially, with
/// spacings given as fractions of the transmit wavelength.
pub fn make_image_grid(
    probe: &ProbeConfig,
    depth_range: (f64, f64),
    axial_fraction: f64,
    lateral_fraction: f64,
) -> Result<ImageGrid> {
    if !(axial_fraction > 0.0 && lateral_fraction > 0.0) {
        return Err(Error::InvalidGrid(format!(
            "wavelength fractions must be positive: axial={axial_fraction}, lateral={lateral_fraction}"
        )));
    }
    if !(depth_range.0 > 0.0) {
        return Err(Error::InvalidGrid(format!("depth must be positive, got {}", depth_range.0)));
    }
    let lambda = probe.wavelength();
    let half = probe.aperture / 2.0;
    ImageGrid::covering(
        (-half, half),
        depth_range,
        lambda * lateral_fraction,
        lambda * axial_fraction,
    )
}
