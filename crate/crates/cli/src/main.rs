use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use pwspeckle::beamform::{
    compound, das_reconstruct_with, enhance, envelope_on_tracking_grid, write_envelope_image, write_iq_image,
    DasOptions, IQImage, IoPrecision,
};
use pwspeckle::config::plan_sequence;
use pwspeckle::harness::{rotation_truth, run_experiment, ExperimentConfig, ExperimentSpec, Method, Regime};
use pwspeckle::metrics::{rve, zone_mask, RepeMap};
use pwspeckle::phantom::{advance_motion, build_rotating_cylinder_phantom, read_phantom, write_phantom};
use pwspeckle::simulate::{default_time_window, read_channel_data, simulate_channel_data, write_channel_data, PulseModel};
use pwspeckle::tracking::{read_field, track, write_field, TrackingParams};

#[derive(Parser)]
#[command(name = "pwspeckle", version, about = "Plane-wave simulation, beamforming and speckle tracking")]
struct Cli {
    /// Base random seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Leave timings out of the outputs so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,
    /// External image enhancer, run as `<command> <input> <output>`.
    #[arg(long, global = true)]
    enhancer: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamSet {
    /// Four passes of 4, 2.5, 2 and 1.5 mm windows with 65% overlap.
    Standard,
    /// The `[tracking]` section of the config.
    Config,
}

#[derive(Subcommand)]
enum Command {
    /// Build the four-cylinder phantom.
    Phantom {
        /// Output stem; writes `<stem>.json` and `<stem>.scat`.
        #[arg(long)]
        out: PathBuf,
        /// Method whose frame interval sets the rotation speed.
        #[arg(long, default_value = "das_1")]
        method: Method,
        #[arg(long, default_value = "small")]
        regime: Regime,
        /// Realization index added to the seed.
        #[arg(long, default_value_t = 0)]
        realization: u64,
    },
    /// Simulate channel data for consecutive frames of a steered sequence.
    Simulate {
        /// Phantom stem written by `phantom`.
        phantom: PathBuf,
        /// Output directory; one `tx_NNNN.chd` per transmit.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        angles: usize,
        #[arg(long, default_value_t = 2)]
        frames: usize,
    },
    /// Reconstruct IQ images from channel data files.
    Beamform {
        inputs: Vec<PathBuf>,
        /// Output image, or a directory when several inputs are not compounded.
        #[arg(long)]
        out: PathBuf,
        /// Average all inputs into one image.
        #[arg(long)]
        compound: bool,
        /// Also write the envelope on the tracking grid.
        #[arg(long)]
        envelope: Option<PathBuf>,
        /// Receive aperture limited to |x_p − x_e| ≤ z/(2F).
        #[arg(long)]
        f_number: Option<f64>,
        /// Store samples as 64-bit floats.
        #[arg(long)]
        f64: bool,
    },
    /// Estimate the displacement field between two envelope frames.
    Track {
        frame_a: PathBuf,
        frame_b: PathBuf,
        #[arg(long, value_enum, default_value = "standard")]
        params: ParamSet,
        #[arg(long)]
        out: PathBuf,
        /// Also write the field as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Per-zone error of a field against a reference or the exact rotation.
    Metrics {
        field: PathBuf,
        /// Reference field; by default the rotation of the configured phantom.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value = "das_1")]
        method: Method,
        #[arg(long, default_value = "small")]
        regime: Regime,
        /// Write the REPE map here.
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Run the rotating-cylinder experiment matrix.
    Experiment {
        #[arg(long, default_value = "experiment")]
        out: PathBuf,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(cmd) = &cli.enhancer {
        config.experiment.enhancer = Some(cmd.clone());
    }
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = load_config(&cli)?;
    let probe = config.probe;
    match &cli.command {
        Command::Phantom {
            out,
            method,
            regime,
            realization,
        } => {
            let (omega, _) = config.motion(*method, *regime)?;
            let spec = config.phantom.spec(&probe, omega);
            let phantom = build_rotating_cylinder_phantom(&spec, config.seed.wrapping_add(*realization))?;
            write_phantom(out, &phantom).with_context(|| format!("writing {}", out.display()))?;
            println!("{} scatterers, angular velocity {omega:.6} rad/s", phantom.len());
        }
        Command::Simulate {
            phantom,
            out,
            angles,
            frames,
        } => {
            let phantom = read_phantom(phantom).with_context(|| format!("reading {}", phantom.display()))?;
            let sequence = plan_sequence(&probe, *angles, config.sequence.prf)?;
            let grid = config.grid.reconstruction_grid(&probe)?;
            let pulse = PulseModel::for_probe(&probe);
            let window = default_time_window(&probe, grid.z_max, &pulse);
            fs::create_dir_all(out)?;
            let n = sequence.count();
            for t in 0..n * frames {
                let moved = advance_motion(&phantom, t as f64 / sequence.prf)?;
                let data = simulate_channel_data(&moved, &probe, sequence.angles[t % n], &pulse, window)?;
                let path = out.join(format!("tx_{t:04}.chd"));
                write_channel_data(&path, &data)?;
                info!("wrote {}", path.display());
            }
        }
        Command::Beamform {
            inputs,
            out,
            compound: compounded,
            envelope,
            f_number,
            f64,
        } => {
            if inputs.is_empty() {
                bail!("no channel data given");
            }
            let grid = config.grid.reconstruction_grid(&probe)?;
            let options = DasOptions { f_number: *f_number };
            let hook = config.enhancer_hook()?;
            let precision = if *f64 { IoPrecision::F64 } else { IoPrecision::F32 };
            let images = inputs
                .iter()
                .map(|p| -> Result<IQImage> {
                    let data = read_channel_data(p).with_context(|| format!("reading {}", p.display()))?;
                    Ok(das_reconstruct_with(&data, &probe, &grid, &options)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let outputs: Vec<(PathBuf, IQImage)> = if *compounded || images.len() == 1 {
                vec![(out.clone(), compound(&images)?)]
            } else {
                if envelope.is_some() {
                    bail!("--envelope needs a single output image");
                }
                fs::create_dir_all(out)?;
                inputs
                    .iter()
                    .zip(images)
                    .map(|(p, img)| (out.join(p.with_extension("iq").file_name().expect("file name")), img))
                    .collect()
            };
            for (path, img) in outputs {
                let img = enhance(&img, &hook)?;
                write_iq_image(&path, &img, precision)?;
                if let Some(env_path) = envelope {
                    write_envelope_image(env_path, &envelope_on_tracking_grid(&img)?, precision)?;
                }
            }
        }
        Command::Track {
            frame_a,
            frame_b,
            params,
            out,
            csv,
        } => {
            let read = |p: &Path| {
                pwspeckle::beamform::read_envelope_image(p).with_context(|| format!("reading {}", p.display()))
            };
            let (a, b) = (read(frame_a)?, read(frame_b)?);
            let params = match params {
                ParamSet::Standard => TrackingParams::standard(),
                ParamSet::Config => config.tracking.clone(),
            };
            let mut field = track(&a, &b, &params)?;
            field.meta.frame_a = Some(frame_a.display().to_string());
            field.meta.frame_b = Some(frame_b.display().to_string());
            write_field(out, &field)?;
            if let Some(csv) = csv {
                fs::write(csv, field.to_csv())?;
            }
            let (nz, nx) = field.shape();
            println!("{nz}×{nx} vectors, {} valid", field.valid.iter().filter(|v| **v).count());
        }
        Command::Metrics {
            field,
            truth,
            method,
            regime,
            map,
        } => {
            let estimate = read_field(field).with_context(|| format!("reading {}", field.display()))?;
            let truth = match truth {
                Some(p) => read_field(p).with_context(|| format!("reading {}", p.display()))?,
                None => {
                    let (omega, interval) = config.motion(*method, *regime)?;
                    rotation_truth(
                        &config.phantom.cylinders(),
                        omega,
                        interval,
                        &estimate.centers_x,
                        &estimate.centers_z,
                    )
                }
            };
            let repe = RepeMap::from_fields(&estimate, &truth)?;
            if let Some(p) = map {
                write_field(p, &repe.to_field())?;
            }
            let e = &config.experiment;
            println!("zone\tmrepe\trve\tn_valid");
            for cyl in config.phantom.cylinders() {
                let mask = zone_mask(
                    &repe.centers_x,
                    &repe.centers_z,
                    cyl.center,
                    cyl.radius,
                    e.inner_margin,
                    e.outer_margin,
                );
                let zone = match mask {
                    Ok(m) => repe.restricted(&m)?,
                    Err(_) => {
                        println!("{}\tnan\tnan\t0", cyl.label);
                        continue;
                    }
                };
                match (zone.mean(), rve(&zone, e.rve_threshold)) {
                    (Ok(m), Ok(r)) => println!("{}\t{m:.6}\t{r:.6}\t{}", cyl.label, zone.count()),
                    _ => println!("{}\tnan\tnan\t0", cyl.label),
                }
            }
        }
        Command::Experiment {
            out,
            realizations,
            workers,
        } => {
            let mut config = config;
            if let Some(n) = realizations {
                config.experiment.realizations = *n;
            }
            if let Some(n) = workers {
                config.experiment.workers = *n;
            }
            let mut spec = ExperimentSpec::new(config, out)?;
            spec.deterministic = cli.deterministic;
            let report = run_experiment(&spec)?;
            print!("{}", report.to_tsv());
            println!("{}/{} realizations completed", report.completed, report.requested);
            if report.completed != report.requested {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
