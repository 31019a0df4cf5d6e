//! `geolens`: magnify regions of an image with geometric lenses.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use geolens_core::pipeline::{
    execute, write_artifacts, BaselineConfig, LensConfig, PipelineConfig, Stage, StageError,
};
use geolens_core::raster::load_image;
use geolens_core::{BoundaryMode, ProfileKind, RadialLensKind, Vec2};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Profile {
    Gaussian,
    Sphere,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Boundary {
    Fixed,
    Free,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Baseline {
    Fisheye,
    Bifocal,
    Zoomin,
}

/// Magnify regions of an image with geometric focus+context lenses.
///
/// Without `--config` or `--lens`, one Gaussian lens is centered on the
/// image with a radius of 16% of its shorter side.
#[derive(Debug, Parser)]
#[command(name = "geolens", version)]
struct Args {
    /// Input image (PNG or binary PPM).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output image; artifacts are written next to it.
    #[arg(long)]
    output: Option<PathBuf>,
    /// TOML scenario file. Command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mesh vertex rows and columns.
    #[arg(long, num_args = 2, value_names = ["ROWS", "COLS"])]
    mesh: Option<Vec<usize>>,
    /// Circular lens at `X Y` with radius `R`. Repeat for more lenses.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "R"], action = clap::ArgAction::Append)]
    lens: Vec<f64>,
    /// Lens height for `--lens` lenses; defaults to each radius.
    #[arg(long)]
    h0: Option<f64>,
    /// Blend between rigid (0) and fully stretched (1) triangle metrics.
    #[arg(long)]
    alpha: Option<f64>,
    /// Relative energy change that stops the flattening.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    #[arg(long, value_enum)]
    boundary: Option<Boundary>,
    /// Write `<output>.heatmap.png` with per-triangle distortion.
    #[arg(long)]
    emit_heatmap: bool,
    /// Write `<output>.energy.csv` with the per-iteration energy.
    #[arg(long)]
    emit_energy_csv: bool,
    /// Also render a radial lens with the same footprint and report its
    /// distortion.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Suppress the stage summary.
    #[arg(long, short)]
    quiet: bool,
}

fn config_error(message: impl Into<String>) -> StageError {
    StageError {
        stage: Stage::Config,
        source: geolens_core::LensError::Config(message.into()),
    }
}

fn run(args: Args) -> Result<String, StageError> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::load(path).map_err(|source| StageError {
            stage: Stage::Config,
            source,
        })?,
        None => {
            let mut c = PipelineConfig::default_scenario(1, 1);
            c.lenses.clear();
            c
        }
    };
    if let Some(input) = &args.input {
        config.input = input.clone();
    }
    if let Some(output) = &args.output {
        config.output = output.clone();
    }
    if config.input.as_os_str().is_empty() || config.output.as_os_str().is_empty() {
        return Err(config_error("--input and --output are required without a config file"));
    }

    let texture = load_image(&config.resolve(&config.input)).map_err(|source| StageError {
        stage: Stage::Load,
        source,
    })?;

    if !args.lens.is_empty() {
        config.lenses = args
            .lens
            .chunks(3)
            .map(|c| LensConfig::circle(Vec2::new(c[0], c[1]), c[2], args.h0.unwrap_or(c[2])))
            .collect();
    } else if config.lenses.is_empty() {
        let mut d = PipelineConfig::default_scenario(texture.width(), texture.height()).lenses;
        if let Some(h0) = args.h0 {
            d[0].h0 = h0;
        }
        config.lenses = d;
    }
    if let Some(m) = &args.mesh {
        config.mesh.rows = m[0];
        config.mesh.cols = m[1];
    }
    if let Some(a) = args.alpha {
        config.solver.alpha = a;
    }
    if let Some(e) = args.epsilon {
        config.solver.epsilon = e;
    }
    if let Some(p) = args.profile {
        let kind = match p {
            Profile::Gaussian => ProfileKind::Gaussian,
            Profile::Sphere => ProfileKind::Sphere,
        };
        for l in &mut config.lenses {
            l.profile = kind;
        }
    }
    if let Some(b) = args.boundary {
        config.solver.boundary = match b {
            Boundary::Fixed => BoundaryMode::FixedRectangle,
            Boundary::Free => BoundaryMode::Free,
        };
    }
    config.emit.heatmap |= args.emit_heatmap;
    config.emit.energy_csv |= args.emit_energy_csv;
    if let Some(b) = args.baseline {
        config.baseline = Some(BaselineConfig {
            kind: match b {
                Baseline::Fisheye => RadialLensKind::Fisheye,
                Baseline::Bifocal => RadialLensKind::Bifocal,
                Baseline::Zoomin => RadialLensKind::ZoomIn,
            },
            magnification: None,
        });
    }

    let out = execute(&config, &texture, None)?;
    write_artifacts(&config, &out).map_err(|source| StageError {
        stage: Stage::Write,
        source,
    })?;
    if !out.flatten.report.flipped_triangles.is_empty() {
        log::warn!(
            "{} triangles flipped; lower h0 or raise alpha",
            out.flatten.report.flipped_triangles.len()
        );
    }
    Ok(out.summary())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let quiet = args.quiet;
    match run(args) {
        Ok(summary) => {
            if !quiet {
                print!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("geolens: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
