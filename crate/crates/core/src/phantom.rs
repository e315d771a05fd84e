//! Point-scatterer phantoms and the motion applied between transmit events.
//!
//! Coordinates: `x` lateral, `y` elevation, `z` depth (positive into the
//! medium). In-plane rotations act on `(x, z)`; a positive angular velocity
//! turns counter-clockwise on an image displayed with depth pointing down.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::ProbeConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// `[x, y, z]` in meters.
    pub position: [f64; 3],
    pub amplitude: f64,
    /// Index of the rotor (cylinder) this scatterer moves with.
    pub group: Option<u32>,
}

/// Rigid in-plane rotation of one group of scatterers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotor {
    /// `[x, z]` center of rotation.
    pub center: [f64; 2],
    /// rad/s, counter-clockwise positive.
    pub angular_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionLaw {
    Static,
    /// Each scatterer turns about the rotor selected by its `group`;
    /// scatterers without a group stay put.
    RigidRotation { rotors: Vec<Rotor> },
    /// Uniform in-plane translation, `[vx, vz]` in m/s.
    Translation { velocity: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScattererPhantom {
    pub scatterers: Vec<Scatterer>,
    pub motion: MotionLaw,
}

/// Rotates the offset `(dx, dz)` by `angle` (counter-clockwise on screen).
#[inline]
pub fn rotate_offset(dx: f64, dz: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * dx + s * dz, -s * dx + c * dz)
}

impl ScattererPhantom {
    pub fn new(scatterers: Vec<Scatterer>, motion: MotionLaw) -> Self {
        Self { scatterers, motion }
    }

    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scatterers.is_empty() {
            return Err(Error::InvalidPhantom("no scatterers".into()));
        }
        for (i, s) in self.scatterers.iter().enumerate() {
            if !s.amplitude.is_finite() || s.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidPhantom(format!("scatterer {i} is not finite")));
            }
        }
        if let MotionLaw::RigidRotation { rotors } = &self.motion {
            if let Some(s) = self
                .scatterers
                .iter()
                .find(|s| s.group.is_some_and(|g| g as usize >= rotors.len()))
            {
                return Err(Error::InvalidPhantom(format!(
                    "scatterer group {:?} has no rotor",
                    s.group
                )));
            }
        }
        Ok(())
    }

    /// Union of two phantoms; the motion law of `self` is kept.
    pub fn merged(&self, other: &Self) -> Self {
        let mut scatterers = self.scatterers.clone();
        scatterers.extend_from_slice(&other.scatterers);
        Self::new(scatterers, self.motion.clone())
    }
}

/// Applies the phantom's motion law over `dt` seconds.
pub fn advance_motion(phantom: &ScattererPhantom, dt: f64) -> Result<ScattererPhantom> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be non-negative, got {dt}")));
    }
    let mut out = phantom.clone();
    if dt == 0.0 {
        return Ok(out);
    }
    match &phantom.motion {
        MotionLaw::Static => {}
        MotionLaw::RigidRotation { rotors } => {
            for s in &mut out.scatterers {
                let Some(g) = s.group else { continue };
                let rotor = rotors.get(g as usize).ok_or_else(|| {
                    Error::InvalidPhantom(format!("scatterer group {g} has no rotor"))
                })?;
                let [cx, cz] = rotor.center;
                let (dx, dz) = rotate_offset(
                    s.position[0] - cx,
                    s.position[2] - cz,
                    rotor.angular_velocity * dt,
                );
                s.position[0] = cx + dx;
                s.position[2] = cz + dz;
            }
        }
        MotionLaw::Translation { velocity } => {
            for s in &mut out.scatterers {
                s.position[0] += velocity[0] * dt;
                s.position[2] += velocity[1] * dt;
            }
        }
    }
    Ok(out)
}

/// −6 dB extent of the point-spread function used to size scatterer counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionCell {
    pub axial: f64,
    pub lateral: f64,
    pub elevation: f64,
}

impl ResolutionCell {
    /// Axial `c / (2 B)`, lateral `λ z / L` at `reference_depth`, and the
    /// given elevation extent.
    pub fn for_probe(probe: &ProbeConfig, reference_depth: f64, elevation: f64) -> Self {
        let bandwidth_hz = probe.fractional_bandwidth * probe.transmit_frequency;
        Self {
            axial: probe.sound_speed / (2.0 * bandwidth_hz),
            lateral: probe.wavelength() * reference_depth / probe.aperture,
            elevation,
        }
    }

    pub fn volume(&self) -> f64 {
        self.axial * self.lateral * self.elevation
    }
}

/// Cylinder whose axis runs along elevation, filled with random scatterers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub label: String,
    /// `[x, z]` of the axis.
    pub center: [f64; 2],
    pub radius: f64,
    pub height: f64,
    /// Mean scatterer magnitude relative to the 0 dB reference.
    pub amplitude_db: f64,
}

impl Cylinder {
    pub fn volume(&self) -> f64 {
        PI * self.radius * self.radius * self.height
    }

    pub fn mean_magnitude(&self) -> f64 {
        10f64.powf(self.amplitude_db / 20.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeLaw {
    /// Zero-mean normal amplitudes scaled so `E|a|` equals the zone mean.
    #[default]
    Normal,
    /// Fixed magnitude with a random sign.
    ConstantMagnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub cylinders: Vec<Cylinder>,
    /// Scatterers per resolution cell.
    pub density: f64,
    pub cell: ResolutionCell,
    pub angular_velocity: f64,
    #[serde(default)]
    pub amplitude_law: AmplitudeLaw,
}

/// `round(density · V / V_cell)`.
pub fn scatterer_count(density: f64, volume: f64, cell_volume: f64) -> usize {
    (density * volume / cell_volume).round() as usize
}

/// Fills each cylinder with uniformly placed scatterers; all cylinders rotate
/// about their own axes with the same angular velocity.
pub fn build_rotating_cylinder_phantom(spec: &PhantomSpec, seed: u64) -> Result<ScattererPhantom> {
    if !(spec.density > 0.0 && spec.density.is_finite()) {
        return Err(Error::InvalidPhantom(format!("density must be positive, got {}", spec.density)));
    }
    let cell_volume = spec.cell.volume();
    if !(cell_volume > 0.0) {
        return Err(Error::InvalidPhantom("resolution cell has no volume".into()));
    }
    if spec.cylinders.is_empty() {
        return Err(Error::InvalidPhantom("no cylinders".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scatterers = Vec::new();
    let mut rotors = Vec::with_capacity(spec.cylinders.len());
    for (g, cyl) in spec.cylinders.iter().enumerate() {
        if !(cyl.radius > 0.0 && cyl.height > 0.0) {
            return Err(Error::InvalidPhantom(format!("cylinder {} has zero volume", cyl.label)));
        }
        if cyl.center[1] - cyl.radius <= 0.0 {
            return Err(Error::InvalidPhantom(format!(
                "cylinder {} extends above the probe surface",
                cyl.label
            )));
        }
        let count = scatterer_count(spec.density, cyl.volume(), cell_volume);
        let mean = cyl.mean_magnitude();
        let normal = Normal::new(0.0, mean * (PI / 2.0).sqrt()).expect("finite sigma");
        scatterers.reserve(count);
        for _ in 0..count {
            let r = cyl.radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * PI * rng.random::<f64>();
            let y = cyl.height * (rng.random::<f64>() - 0.5);
            let amplitude = match spec.amplitude_law {
                AmplitudeLaw::Normal => normal.sample(&mut rng),
                AmplitudeLaw::ConstantMagnitude => {
                    if rng.random::<bool>() {
                        mean
                    } else {
                        -mean
                    }
                }
            };
            scatterers.push(Scatterer {
                position: [cyl.center[0] + r * phi.cos(), y, cyl.center[1] + r * phi.sin()],
                amplitude,
                group: Some(g as u32),
            });
        }
        rotors.push(Rotor {
            center: cyl.center,
            angular_velocity: spec.angular_velocity,
        });
    }
    Ok(ScattererPhantom::new(scatterers, MotionLaw::RigidRotation { rotors }))
}

/// Uniformly filled box `[x0, x1] × [y0, y1] × [z0, z1]` with normal
/// amplitudes of unit mean magnitude.
pub fn speckle_block(
    x_range: (f64, f64),
    y_range: (f64, f64),
    z_range: (f64, f64),
    count: usize,
    motion: MotionLaw,
    seed: u64,
) -> ScattererPhantom {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (PI / 2.0).sqrt()).expect("finite sigma");
    let lerp = |r: (f64, f64), u: f64| r.0 + (r.1 - r.0) * u;
    let scatterers = (0..count)
        .map(|_| Scatterer {
            position: [
                lerp(x_range, rng.random()),
                lerp(y_range, rng.random()),
                lerp(z_range, rng.random()),
            ],
            amplitude: normal.sample(&mut rng),
            group: None,
        })
        .collect();
    ScattererPhantom::new(scatterers, motion)
}

const TABLE_MAGIC: &[u8; 4] = b"PWSC";
const TABLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PhantomHeader {
    format: String,
    version: u32,
    count: usize,
    motion: MotionLaw,
}

fn sibling(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<stem>.json` (motion law and count) and `<stem>.scat`, a
/// little-endian table of `x, y, z, amplitude` (f64) and `group` (i64, −1
/// for none) per scatterer.
pub fn write_phantom(stem: &Path, phantom: &ScattererPhantom) -> Result<()> {
    let header = PhantomHeader {
        format: "pwspeckle-phantom".into(),
        version: TABLE_VERSION,
        count: phantom.len(),
        motion: phantom.motion.clone(),
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(sibling(stem, ".json"), json)?;
    let mut w = BufWriter::new(fs::File::create(sibling(stem, ".scat"))?);
    w.write_all(TABLE_MAGIC)?;
    w.write_u32::<LittleEndian>(TABLE_VERSION)?;
    w.write_u64::<LittleEndian>(phantom.len() as u64)?;
    for s in &phantom.scatterers {
        for v in s.position {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_f64::<LittleEndian>(s.amplitude)?;
        w.write_i64::<LittleEndian>(s.group.map_or(-1, i64::from))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_phantom(stem: &Path) -> Result<ScattererPhantom> {
    let text = fs::read_to_string(sibling(stem, ".json"))?;
    let header: PhantomHeader =
        serde_json::from_str(&text).map_err(|e| Error::format("header", e.to_string()))?;
    let mut r = BufReader::new(fs::File::open(sibling(stem, ".scat"))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TABLE_MAGIC {
        return Err(Error::format("magic", "not a scatterer table"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != TABLE_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let count = r.read_u64::<LittleEndian>()? as usize;
    if count != header.count {
        return Err(Error::format(
            "count",
            format!("table holds {count} scatterers, header says {}", header.count),
        ));
    }
    let mut scatterers = Vec::with_capacity(count);
    for _ in 0..count {
        let x = r.read_f64::<LittleEndian>()?;
        let y = r.read_f64::<LittleEndian>()?;
        let z = r.read_f64::<LittleEndian>()?;
        let amplitude = r.read_f64::<LittleEndian>()?;
        let g = r.read_i64::<LittleEndian>()?;
        scatterers.push(Scatterer {
            position: [x, y, z],
            amplitude,
            group: u32::try_from(g).ok(),
        });
    }
    let phantom = ScattererPhantom::new(scatterers, header.motion);
    phantom.validate()?;
    Ok(phantom)
}
