//! Rotating-cylinder experiment: every reconstruction method and
//! displacement regime is run on independent scatterer realizations, the
//! estimated inter-frame motion is compared with the exact rotation and the
//! errors are summarized per cylinder.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{
    compound, das_reconstruct_analytic, enhance, DasOptions, EnhancerHook, EnvelopeImage, IQImage,
};
use crate::analytic::to_analytic;
use crate::config::{make_image_grid, plan_sequence, ImageGrid, ProbeConfig, SteeringSequence};
use crate::error::{Error, Result};
use crate::metrics::{analytic_rotation_field, rve, zone_mask, RepeMap};
use crate::phantom::{
    advance_motion, build_rotating_cylinder_phantom, AmplitudeLaw, Cylinder, PhantomSpec, ResolutionCell,
    ScattererPhantom,
};
use crate::simulate::{default_time_window, simulate_channel_data, PulseModel};
use crate::tracking::{track, write_field, DisplacementField, FieldKind, TrackingParams};

/// Image reconstruction method under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Coherent compounding of `n` steered plane waves.
    Das(usize),
    /// One plane wave per frame passed through the enhancer hook.
    Enhanced,
}

impl Method {
    pub fn n_angles(&self) -> usize {
        match self {
            Method::Das(n) => *n,
            Method::Enhanced => 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Das(n) => write!(f, "das_{n}"),
            Method::Enhanced => f.write_str("enhanced"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "enhanced" {
            return Ok(Method::Enhanced);
        }
        let n = s
            .strip_prefix("das_")
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected das_<n> or enhanced)")))?;
        if n == 0 || n % 2 == 0 {
            return Err(Error::Config(format!("method `{s}` needs an odd number of angles")));
        }
        Ok(Method::Das(n))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Range of inter-frame displacements; the maximum is reached at the
/// evaluation radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Small,
    Large,
}

impl Regime {
    /// `(min, max)` inter-frame displacement in meters.
    pub fn displacement_range(&self) -> (f64, f64) {
        match self {
            Regime::Small => (3.3e-6, 60e-6),
            Regime::Large => (33e-6, 600e-6),
        }
    }

    pub fn max_displacement(&self) -> f64 {
        self.displacement_range().1
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Small => "small",
            Regime::Large => "large",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Regime::Small),
            "large" => Ok(Regime::Large),
            _ => Err(Error::Config(format!("unknown regime `{s}` (expected small or large)"))),
        }
    }
}

/// Angular velocity that moves a point at `radius` by `displacement`
/// (chord length) during `frame_interval`.
pub fn angular_velocity_for(displacement: f64, radius: f64, frame_interval: f64) -> Result<f64> {
    if !(radius > 0.0 && frame_interval > 0.0 && displacement >= 0.0 && displacement <= 2.0 * radius) {
        return Err(Error::InvalidParameter(format!(
            "no rotation moves radius {radius} by {displacement} in {frame_interval} s"
        )));
    }
    Ok(2.0 * (displacement / (2.0 * radius)).asin() / frame_interval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    pub prf: f64,
}

impl Default for SequenceSection {
    fn default() -> Self {
        Self { prf: 9000.0 }
    }
}

/// Reconstruction grid as fractions of the wavelength; frames are
/// reconstructed directly on its axially decimated version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub depth_range: [f64; 2],
    #[serde(default = "default_axial_fraction")]
    pub axial_fraction: f64,
    #[serde(default = "default_lateral_fraction")]
    pub lateral_fraction: f64,
}

fn default_axial_fraction() -> f64 {
    0.125
}

fn default_lateral_fraction() -> f64 {
    0.25
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            depth_range: [1e-3, 45e-3],
            axial_fraction: default_axial_fraction(),
            lateral_fraction: default_lateral_fraction(),
        }
    }
}

impl GridSection {
    pub fn reconstruction_grid(&self, probe: &ProbeConfig) -> Result<ImageGrid> {
        make_image_grid(
            probe,
            (self.depth_range[0], self.depth_range[1]),
            self.axial_fraction,
            self.lateral_fraction,
        )
    }

    pub fn tracking_grid(&self, probe: &ProbeConfig) -> Result<ImageGrid> {
        Ok(self.reconstruction_grid(probe)?.axially_decimated())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderSection {
    pub label: String,
    /// `[x, z]` in meters.
    pub center: [f64; 2],
    pub amplitude_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    /// Scatterers per resolution cell.
    pub density: f64,
    #[serde(default)]
    pub amplitude_law: AmplitudeLaw,
    pub radius: f64,
    pub height: f64,
    /// Elevation extent of the resolution cell.
    pub cell_elevation: f64,
    /// Depth at which the lateral cell size is evaluated; defaults to the
    /// elevation focus.
    #[serde(default)]
    pub reference_depth: Option<f64>,
    pub cylinders: Vec<CylinderSection>,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let cyl = |label: &str, x: f64, z: f64, db: f64| CylinderSection {
            label: label.into(),
            center: [x, z],
            amplitude_db: db,
        };
        Self {
            density: 10.0,
            amplitude_law: AmplitudeLaw::Normal,
            radius: 6.86e-3,
            height: 1e-3,
            cell_elevation: 1e-3,
            reference_depth: None,
            cylinders: vec![
                cyl("A", -10e-3, 15e-3, 20.0),
                cyl("B", -6e-3, 31e-3, -20.0),
                cyl("C", 10e-3, 31e-3, -20.0),
                cyl("D", 14e-3, 15e-3, 0.0),
            ],
        }
    }
}

impl PhantomSection {
    pub fn cylinders(&self) -> Vec<Cylinder> {
        self.cylinders
            .iter()
            .map(|c| Cylinder {
                label: c.label.clone(),
                center: c.center,
                radius: self.radius,
                height: self.height,
                amplitude_db: c.amplitude_db,
            })
            .collect()
    }

    pub fn spec(&self, probe: &ProbeConfig, angular_velocity: f64) -> PhantomSpec {
        let depth = self.reference_depth.unwrap_or(probe.elevation_focus);
        PhantomSpec {
            cylinders: self.cylinders(),
            density: self.density,
            cell: ResolutionCell::for_probe(probe, depth, self.cell_elevation),
            angular_velocity,
            amplitude_law: self.amplitude_law,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub methods: Vec<Method>,
    pub regimes: Vec<Regime>,
    pub realizations: usize,
    /// Radius at which the regime's maximum displacement occurs.
    pub evaluation_radius: f64,
    /// Central zone left out of the evaluation.
    pub inner_margin: f64,
    /// Border left out of the evaluation.
    pub outer_margin: f64,
    pub rve_threshold: f64,
    /// Realizations processed at once.
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub f_number: Option<f64>,
    /// Command line of an external enhancer; identity when absent.
    #[serde(default)]
    pub enhancer: Option<String>,
}

fn one() -> usize {
    1
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            methods: vec![Method::Das(1), Method::Das(9), Method::Das(15), Method::Enhanced],
            regimes: vec![Regime::Small, Regime::Large],
            realizations: 5,
            evaluation_radius: 6.5e-3,
            inner_margin: 0.36e-3,
            outer_margin: 0.36e-3,
            rve_threshold: 1.0,
            workers: 1,
            f_number: None,
            enhancer: None,
        }
    }
}

/// Full experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "ProbeConfig::ge9ld")]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub sequence: SequenceSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub phantom: PhantomSection,
    #[serde(default = "TrackingParams::standard")]
    pub tracking: TrackingParams,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            probe: ProbeConfig::ge9ld(),
            sequence: SequenceSection::default(),
            grid: GridSection::default(),
            phantom: PhantomSection::default(),
            tracking: TrackingParams::standard(),
            experiment: ExperimentSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        self.tracking.validate()?;
        if !(self.sequence.prf.is_finite() && self.sequence.prf > 0.0) {
            return Err(Error::Config(format!("prf must be positive, got {}", self.sequence.prf)));
        }
        self.grid.tracking_grid(&self.probe)?.validate()?;
        let e = &self.experiment;
        if e.realizations == 0 {
            return Err(Error::Config("at least one realization is required".into()));
        }
        if e.methods.is_empty() || e.regimes.is_empty() {
            return Err(Error::Config("methods and regimes must not be empty".into()));
        }
        if e.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(e.rve_threshold > 0.0) {
            return Err(Error::Config("rve_threshold must be positive".into()));
        }
        if !(e.evaluation_radius > 0.0 && e.evaluation_radius <= self.phantom.radius) {
            return Err(Error::Config("evaluation radius must lie inside the cylinders".into()));
        }
        if !(e.inner_margin >= 0.0 && e.outer_margin >= 0.0 && e.inner_margin < self.phantom.radius - e.outer_margin) {
            return Err(Error::Config("evaluation margins leave no annulus".into()));
        }
        let mut labels: Vec<&str> = self.phantom.cylinders.iter().map(|c| c.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("cylinder labels must be unique".into()));
        }
        if let Some(f) = e.f_number {
            if !(f > 0.0) {
                return Err(Error::Config(format!("f_number must be positive, got {f}")));
            }
        }
        Ok(())
    }

    pub fn enhancer_hook(&self) -> Result<EnhancerHook> {
        match &self.experiment.enhancer {
            Some(cmd) => EnhancerHook::from_command_line(cmd),
            None => Ok(EnhancerHook::Identity),
        }
    }

    /// Angular velocity and frame interval of `method` under `regime`.
    pub fn motion(&self, method: Method, regime: Regime) -> Result<(f64, f64)> {
        let interval = method.n_angles() as f64 / self.sequence.prf;
        let omega = angular_velocity_for(regime.max_displacement(), self.experiment.evaluation_radius, interval)?;
        Ok((omega, interval))
    }
}

/// What to run and where to put the results.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub config: ExperimentConfig,
    pub output_dir: PathBuf,
    /// Leaves wall-clock timings out of the outputs.
    pub deterministic: bool,
    pub enhancer: EnhancerHook,
}

impl ExperimentSpec {
    pub fn new(config: ExperimentConfig, output_dir: impl Into<PathBuf>) -> Result<Self> {
        let enhancer = config.enhancer_hook()?;
        Ok(Self {
            config,
            output_dir: output_dir.into(),
            deterministic: false,
            enhancer,
        })
    }
}

/// Everything needed to turn a phantom into frames.
#[derive(Debug, Clone)]
pub struct Acquisition {
    pub probe: ProbeConfig,
    pub grid: ImageGrid,
    pub pulse: PulseModel,
    pub time_window: (f64, f64),
    pub das: DasOptions,
}

impl Acquisition {
    pub fn new(probe: ProbeConfig, grid: ImageGrid, f_number: Option<f64>) -> Self {
        let pulse = PulseModel::for_probe(&probe);
        let time_window = default_time_window(&probe, grid.z_max, &pulse);
        Self {
            probe,
            grid,
            pulse,
            time_window,
            das: DasOptions { f_number },
        }
    }

    /// IQ image of one transmit with the phantom in its current position.
    pub fn transmit(&self, phantom: &ScattererPhantom, angle: f64) -> Result<IQImage> {
        let data = simulate_channel_data(phantom, &self.probe, angle, &self.pulse, self.time_window)?;
        das_reconstruct_analytic(&to_analytic(&data)?, &self.probe, &self.grid, &self.das)
    }

    /// `frames` consecutive compounded frames. Transmit `t` fires at `t/prf`
    /// and sees the phantom moved by that time.
    pub fn frames(&self, phantom: &ScattererPhantom, sequence: &SteeringSequence, frames: usize) -> Result<Vec<IQImage>> {
        let n = sequence.count();
        (0..frames)
            .map(|f| {
                let images = sequence
                    .angles
                    .iter()
                    .enumerate()
                    .map(|(k, &angle)| {
                        let t = (f * n + k) as f64 / sequence.prf;
                        self.transmit(&advance_motion(phantom, t)?, angle)
                    })
                    .collect::<Result<Vec<_>>>()?;
                compound(&images)
            })
            .collect()
    }
}

/// Exact inter-frame displacement at every node: each node follows the
/// cylinder that contains it, nodes outside every cylinder get zero.
pub fn rotation_truth(
    cylinders: &[Cylinder],
    angular_velocity: f64,
    frame_interval: f64,
    centers_x: &[f64],
    centers_z: &[f64],
) -> DisplacementField {
    let mut truth = DisplacementField::zeros(centers_x.to_vec(), centers_z.to_vec());
    truth.meta.kind = FieldKind::Truth;
    for cyl in cylinders {
        let f = analytic_rotation_field(cyl.center, angular_velocity, frame_interval, centers_x, centers_z);
        for (i, z) in centers_z.iter().enumerate() {
            for (j, x) in centers_x.iter().enumerate() {
                if (x - cyl.center[0]).hypot(z - cyl.center[1]) <= cyl.radius {
                    truth.u_x[[i, j]] = f.u_x[[i, j]];
                    truth.u_z[[i, j]] = f.u_z[[i, j]];
                }
            }
        }
    }
    truth
}

/// One realization of one method under one regime.
#[derive(Debug, Clone)]
pub struct RealizationResult {
    pub method: Method,
    pub regime: Regime,
    pub realization: usize,
    pub estimate: DisplacementField,
    pub repe: RepeMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: String,
    pub regime: String,
    pub realization: usize,
    pub reason: String,
}

/// Aggregate error of one zone for one method and regime. Metrics are
/// `None` when no realization completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub zone: String,
    pub method: String,
    pub regime: String,
    pub mrepe: Option<f64>,
    pub rve: Option<f64>,
    pub n_valid: usize,
    pub realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub method: String,
    pub regime: String,
    pub frame_rate: f64,
    pub frame_interval: f64,
    pub angular_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub realizations: usize,
    pub requested: usize,
    pub completed: usize,
    pub conditions: Vec<Condition>,
    pub failures: Vec<Failure>,
    pub rows: Vec<MetricsRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

impl ExperimentReport {
    pub fn row(&self, zone: &str, method: Method, regime: Regime) -> Option<&MetricsRow> {
        let (m, r) = (method.to_string(), regime.to_string());
        self.rows.iter().find(|row| row.zone == zone && row.method == m && row.regime == r)
    }

    pub fn to_tsv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        let mut out = String::from("zone\tmethod\tregime\tmrepe\trve\tn_valid\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.zone,
                r.method,
                r.regime,
                fmt(r.mrepe),
                fmt(r.rve),
                r.n_valid
            ));
        }
        out
    }
}

fn field_path(dir: &Path, method: Method, regime: Regime, k: usize) -> PathBuf {
    dir.join("fields").join(format!("{method}_{regime}_r{k:03}.pwdf"))
}

/// Runs every method of one realization under one regime. Single-plane-wave
/// frames are shared between the methods that use them.
fn run_unit(
    spec: &ExperimentSpec,
    acquisition: &Acquisition,
    regime: Regime,
    k: usize,
) -> Vec<std::result::Result<RealizationResult, Failure>> {
    let config = &spec.config;
    let seed = config.seed.wrapping_add(k as u64);
    let mut cache: BTreeMap<usize, Vec<IQImage>> = BTreeMap::new();
    let mut out = Vec::new();
    for &method in &config.experiment.methods {
        let result = (|| -> Result<RealizationResult> {
            let n = method.n_angles();
            let (omega, interval) = config.motion(method, regime)?;
            if !cache.contains_key(&n) {
                let phantom = build_rotating_cylinder_phantom(&config.phantom.spec(&config.probe, omega), seed)?;
                let sequence = plan_sequence(&config.probe, n, config.sequence.prf)?;
                cache.insert(n, acquisition.frames(&phantom, &sequence, 2)?);
            }
            let frames = &cache[&n];
            let envelopes = frames
                .iter()
                .map(|f| -> Result<EnvelopeImage> {
                    Ok(match method {
                        Method::Enhanced => enhance(f, &spec.enhancer)?.envelope(),
                        Method::Das(_) => f.envelope(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut estimate = track(&envelopes[0], &envelopes[1], &config.tracking)?;
            estimate.meta.frame_a = Some(format!("{method}_{regime}_r{k:03}_f0"));
            estimate.meta.frame_b = Some(format!("{method}_{regime}_r{k:03}_f1"));
            let truth = rotation_truth(
                &config.phantom.cylinders(),
                omega,
                interval,
                &estimate.centers_x,
                &estimate.centers_z,
            );
            let repe = RepeMap::from_fields(&estimate, &truth)?;
            write_field(&field_path(&spec.output_dir, method, regime, k), &estimate)?;
            Ok(RealizationResult {
                method,
                regime,
                realization: k,
                estimate,
                repe,
            })
        })();
        out.push(result.map_err(|e| {
            warn!("{method} {regime} realization {k} failed: {e}");
            Failure {
                method: method.to_string(),
                regime: regime.to_string(),
                realization: k,
                reason: e.to_string(),
            }
        }));
    }
    out
}

/// Runs the full method × regime × realization matrix and writes
/// `fields/`, `maps/`, `metrics.tsv` and `summary.json` under the output
/// directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let config = &spec.config;
    config.validate()?;
    let start = Instant::now();
    let dir = &spec.output_dir;
    fs::create_dir_all(dir.join("fields"))?;
    fs::create_dir_all(dir.join("maps"))?;

    let grid = config.grid.tracking_grid(&config.probe)?;
    let acquisition = Acquisition::new(config.probe, grid, config.experiment.f_number);
    let e = &config.experiment;

    let mut conditions = Vec::new();
    for &regime in &e.regimes {
        for &method in &e.methods {
            let (omega, interval) = config.motion(method, regime)?;
            conditions.push(Condition {
                method: method.to_string(),
                regime: regime.to_string(),
                frame_rate: 1.0 / interval,
                frame_interval: interval,
                angular_velocity: omega,
            });
        }
    }

    let units: Vec<(Regime, usize)> = e
        .regimes
        .iter()
        .flat_map(|&r| (0..e.realizations).map(move |k| (r, k)))
        .collect();
    let run = |&(regime, k): &(Regime, usize)| {
        info!("regime {regime}, realization {}/{}", k + 1, e.realizations);
        run_unit(spec, &acquisition, regime, k)
    };
    let results: Vec<_> = if e.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(e.workers)
            .build()
            .map_err(|err| Error::Config(format!("cannot start {} workers: {err}", e.workers)))?;
        pool.install(|| units.par_iter().map(run).collect())
    } else {
        units.iter().map(run).collect()
    };
    let simulated = start.elapsed().as_secs_f64();

    let mut failures = Vec::new();
    let mut done: BTreeMap<(Regime, Method), Vec<RealizationResult>> = BTreeMap::new();
    for r in results.into_iter().flatten() {
        match r {
            Ok(r) => done.entry((r.regime, r.method)).or_default().push(r),
            Err(f) => failures.push(f),
        }
    }

    let mut rows = Vec::new();
    for &regime in &e.regimes {
        for &method in &e.methods {
            let runs = done.get(&(regime, method)).map(Vec::as_slice).unwrap_or(&[]);
            let maps: Vec<RepeMap> = runs.iter().map(|r| r.repe.clone()).collect();
            let averaged = if maps.is_empty() { None } else { Some(RepeMap::average(&maps)?) };
            if let Some(avg) = &averaged {
                write_field(&dir.join("maps").join(format!("{method}_{regime}_repe.pwdf")), &avg.to_field())?;
            }
            for cyl in config.phantom.cylinders() {
                let mut row = MetricsRow {
                    zone: cyl.label.clone(),
                    method: method.to_string(),
                    regime: regime.to_string(),
                    mrepe: None,
                    rve: None,
                    n_valid: 0,
                    realizations: runs.len(),
                };
                if let Some(avg) = &averaged {
                    let mask = zone_mask(
                        &avg.centers_x,
                        &avg.centers_z,
                        cyl.center,
                        cyl.radius,
                        e.inner_margin,
                        e.outer_margin,
                    )?;
                    let zone = avg.restricted(&mask)?;
                    row.n_valid = zone.count();
                    if row.n_valid > 0 {
                        row.mrepe = Some(zone.mean()?);
                        row.rve = Some(rve(&zone, e.rve_threshold)?);
                    }
                }
                rows.push(row);
            }
        }
    }

    let requested = e.methods.len() * e.regimes.len() * e.realizations;
    let timings = (!spec.deterministic).then(|| {
        BTreeMap::from([
            ("pipeline_s".to_string(), simulated),
            ("total_s".to_string(), start.elapsed().as_secs_f64()),
        ])
    });
    let report = ExperimentReport {
        seed: config.seed,
        realizations: e.realizations,
        requested,
        completed: requested - failures.len(),
        conditions,
        failures,
        rows,
        timings,
    };
    fs::write(dir.join("metrics.tsv"), report.to_tsv())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(report)
}
