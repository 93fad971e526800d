use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::{error, info};

use voxtone::halftone::FilterKind;
use voxtone::pipeline::{run_job, GridChoice, JobConfig, DEFAULT_CHUNK_SLICES, DEFAULT_LAYERS};

/// Halftone a textured mesh into per-slice material images.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    /// Watertight OBJ mesh.
    #[arg(long)]
    mesh: PathBuf,
    /// Texture image (PNG or PPM); without it vertex colors are used.
    #[arg(long)]
    texture: Option<PathBuf>,
    /// Uniform sRGB color R,G,B in [0,1] when the mesh has no colors.
    #[arg(long, value_parser = parse_triple)]
    color: Option<[f64; 3]>,
    /// Printer resolution X,Y,Z in dots per inch.
    #[arg(long, default_value = "600,600,900", value_parser = parse_triple)]
    dpi: [f64; 3],
    #[arg(long, default_value_t = DEFAULT_LAYERS)]
    layers: usize,
    /// Slices classified per batch.
    #[arg(long, default_value_t = DEFAULT_CHUNK_SLICES)]
    chunk: usize,
    /// fs, ostromoukhov or zhoufang.
    #[arg(long, default_value = "fs")]
    filter: FilterKind,
    /// Filter table file, overrides --filter.
    #[arg(long)]
    filter_table: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Color separation table.
    #[arg(long)]
    lut: Option<PathBuf>,
    /// Scale for the yellow channel (printed with dyed support).
    #[arg(long, default_value_t = 0.3)]
    yellow_scale: f64,
    #[arg(long)]
    out: PathBuf,
    /// Write metrics.tsv.
    #[arg(long)]
    metrics: bool,
    /// Write distance, traversal order and per-layer halftone PGMs.
    #[arg(long)]
    debug_dumps: bool,
    /// Halftone layers one after another.
    #[arg(long)]
    serial: bool,
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p}: {e}"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let a = Args::parse();
    let mut cfg = JobConfig::new(&a.mesh, &a.out).with_yellow_scale(a.yellow_scale);
    cfg.texture = a.texture;
    cfg.constant_rgb = a.color;
    cfg.grid = GridChoice::Dpi(a.dpi);
    cfg.layers = a.layers;
    cfg.chunk_slices = a.chunk;
    cfg.filter = a.filter;
    cfg.filter_table = a.filter_table;
    cfg.seed = a.seed;
    cfg.lut = a.lut;
    cfg.metrics = a.metrics;
    cfg.debug_dumps = a.debug_dumps;
    cfg.parallel_layers = !a.serial;
    match run_job(&cfg) {
        Ok(r) => {
            info!("wrote {} slices, {} inside voxels, peak {} resident slices", r.slices_written, r.inside_voxels, r.peak_resident_slices);
            if let Some(t) = &r.tone {
                info!("material-tonal RMSE per channel (white last): {:?}", t.rmse);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
