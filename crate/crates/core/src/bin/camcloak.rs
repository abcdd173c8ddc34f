use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use camcloak::cli_io::{self, Config, DumpFormat, GeometryKind};
use camcloak::dispersion::{band_energy, isofrequency_contour, WaveVector};
use camcloak::{Error, Result};

#[derive(Parser)]
#[command(name = "camcloak", version, about = "Cavity-array cloaking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeometryArg {
    Uniform,
    Cloak,
    Hole,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Binary,
}

#[derive(Subcommand)]
enum Command {
    /// Write the (transformed) lattice of a config as a text file.
    BuildLattice {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        geometry: Option<GeometryArg>,
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Band energies as `kx,ky,E`: an isofrequency contour with --energy, the
    /// full zone on a samples x samples grid otherwise.
    Dispersion {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        energy: Option<f64>,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propagate a scenario and write one dump per interval.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides CAMCLOAK_OUTPUT_DIR and output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<FormatArg>,
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        geometry: Option<GeometryArg>,
    },
    /// Residual of a test run against a reference run outside radius.
    Compare {
        test: PathBuf,
        reference: PathBuf,
        /// Region center as `x,y`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        center: [f64; 2],
        #[arg(long)]
        radius: f64,
    },
    /// Per-bond inter-site permittivity as `i,j,midpoint_r,length_m,eps_b`.
    Permittivity {
        #[arg(long)]
        lattice: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write `nan` for bonds no admissible eps_b reaches instead of failing.
        #[arg(long)]
        allow_unreachable: bool,
    },
}

fn parse_point(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [x, y] => Ok([x.trim().parse().map_err(|e| format!("{e}"))?, y.trim().parse().map_err(|e| format!("{e}"))?]),
        _ => Err(format!("expected `x,y`, got `{s}`")),
    }
}

fn load(config: Option<&PathBuf>) -> Result<Config> {
    config.map(|p| cli_io::load_config(p)).unwrap_or_else(|| Ok(Config::default()))
}

fn adjust(cfg: &mut Config, geometry: Option<GeometryArg>, paper_scale: bool) {
    if paper_scale {
        cfg.apply_paper_scale();
    }
    if let Some(g) = geometry {
        cfg.set_geometry(match g {
            GeometryArg::Uniform => GeometryKind::Uniform,
            GeometryArg::Cloak => GeometryKind::Cloak,
            GeometryArg::Hole => GeometryKind::Hole,
        });
    }
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => cli_io::write_text(p, text),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io { path: "<stdout>".into(), source: e }),
            _ => Ok(()),
        },
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildLattice { config, geometry, paper_scale, out } => {
            let mut cfg = load(config.as_ref())?;
            adjust(&mut cfg, geometry, paper_scale);
            cfg.validate()?;
            let lat = cfg.lattice_spec().build()?;
            cli_io::write_lattice(&lat, &out)?;
            info!("{} sites, {} bonds -> {}", lat.len(), lat.bonds().len(), out.display());
        }
        Command::Dispersion { config, energy, samples, out } => {
            let cfg = load(config.as_ref())?;
            let p = cfg.band()?;
            let mut text = String::from("kx,ky,E\n");
            match energy {
                Some(e0) => {
                    for k in isofrequency_contour(e0, &p, samples)? {
                        text.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", k.kx, k.ky, band_energy(k, &p)));
                    }
                }
                None => {
                    if samples == 0 {
                        return Err(Error::Config("--samples: must be positive".into()));
                    }
                    let step = 2.0 * std::f64::consts::PI / samples as f64;
                    for a in 0..samples {
                        for b in 0..samples {
                            let k = WaveVector::new(-std::f64::consts::PI + (a as f64 + 0.5) * step, -std::f64::consts::PI + (b as f64 + 0.5) * step, 1.0);
                            text.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", k.kx, k.ky, band_energy(k, &p)));
                        }
                    }
                }
            }
            emit(out.as_ref(), &text)?;
        }
        Command::Evolve { config, out, format, paper_scale, geometry } => {
            let mut cfg = cli_io::load_config(&config)?;
            adjust(&mut cfg, geometry, paper_scale);
            let scenario = cfg.scenario()?;
            let format = match format {
                Some(FormatArg::Csv) => DumpFormat::Csv,
                Some(FormatArg::Binary) => DumpFormat::Binary,
                None => cfg.output.format,
            };
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            let summary = cli_io::run_to_dir(&scenario, &dir, format)?;
            info!("{} dumps to t = {} -> {}", summary.dumps, summary.t_final, dir.display());
        }
        Command::Compare { test, reference, center, radius } => {
            let report = cli_io::compare_dirs(&test, &reference, center, radius)?;
            emit(None, &report.to_text())?;
        }
        Command::Permittivity { lattice, config, out, allow_unreachable } => {
            let cfg = load(config.as_ref())?;
            let lat = cli_io::read_lattice(&lattice)?;
            let map = cli_io::design_permittivity(&lat, &cfg)?;
            let unreachable = map.unreachable();
            if !unreachable.is_empty() {
                if !allow_unreachable {
                    return Err(Error::UnreachableBonds(unreachable));
                }
                warn!("{} bonds have no admissible eps_b; written as nan", unreachable.len());
            }
            info!("baseline eps_b = {}", map.baseline);
            emit(out.as_ref(), &cli_io::encode_permittivity_csv(&map))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
