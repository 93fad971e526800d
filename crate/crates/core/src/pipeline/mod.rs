//! Job configuration, the streaming slice loop, output writers and tone
//! metrics.

mod engine;
pub mod metrics;
pub mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use engine::run;
pub use metrics::{tone_metrics, SliceTone, SliceToneBuilder, ToneReport};
pub use output::{
    palette, read_indexed_png, read_manifest, slice_file_name, write_indexed_png, DigestSink, DirectorySink, MemorySink,
    SliceOutput, SliceSink,
};

use crate::colorsep::{SeparationLut, TonalPolicy, TonalVector, SUPPORT_CHANNEL};
use crate::error::{Error, Result};
use crate::field::DEFAULT_MASK_BUDGET;
use crate::grid::{GridSpec, VoxelCoord};
use crate::halftone::{FilterKind, FilterTable, HalftoneStats};
use crate::voxelize::{ColorSpace, Mesh, SampleOptions, TextureImage};

pub const DEFAULT_DPI: [f64; 3] = [600.0, 600.0, 900.0];
pub const DEFAULT_LAYERS: usize = 12;
pub const DEFAULT_CHUNK_SLICES: usize = 100;

/// Tonal value of a surface voxel computed directly from its coordinate.
pub type TonalFn = Arc<dyn Fn(VoxelCoord) -> TonalVector + Send + Sync>;

/// Surface color input of a job.
#[derive(Clone)]
pub enum ColorInput {
    Texture(Arc<TextureImage>),
    VertexColors,
    /// Uniform sRGB color, separated through the LUT.
    ConstantRgb([f64; 3]),
    /// Uniform tonal vector, no separation.
    ConstantTonal(TonalVector),
    TonalFn(TonalFn),
}

impl fmt::Debug for ColorInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColorInput::Texture(t) => write!(f, "Texture({}x{})", t.width(), t.height()),
            ColorInput::VertexColors => f.write_str("VertexColors"),
            ColorInput::ConstantRgb(c) => write!(f, "ConstantRgb({c:?})"),
            ColorInput::ConstantTonal(t) => write!(f, "ConstantTonal({:?})", t.as_slice()),
            ColorInput::TonalFn(_) => f.write_str("TonalFn"),
        }
    }
}

/// A fully resolved in-memory job.
#[derive(Debug, Clone)]
pub struct Job {
    pub mesh: Mesh,
    pub spec: GridSpec,
    pub color: ColorInput,
    pub lut: SeparationLut,
    pub layers: usize,
    pub chunk_slices: usize,
    pub filter: FilterTable,
    pub seed: u64,
    pub policy: TonalPolicy,
    pub metrics: bool,
    /// Halftone layers on the rayon pool; output is identical either way.
    pub parallel_layers: bool,
    /// Instrumented traversal and quantization checks.
    pub audit: bool,
    pub debug_dir: Option<PathBuf>,
    pub mask_budget: usize,
    pub sample: SampleOptions,
}

impl Job {
    /// Defaults: naive CMY separation, 12 layers, Floyd-Steinberg, seed 0,
    /// identity policy, metrics on.
    pub fn new(mesh: Mesh, spec: GridSpec, color: ColorInput) -> Self {
        Self {
            mesh,
            spec,
            color,
            lut: SeparationLut::naive(),
            layers: DEFAULT_LAYERS,
            chunk_slices: DEFAULT_CHUNK_SLICES,
            filter: FilterTable::floyd_steinberg(),
            seed: 0,
            policy: TonalPolicy::identity(),
            metrics: true,
            parallel_layers: true,
            audit: false,
            debug_dir: None,
            mask_budget: DEFAULT_MASK_BUDGET,
            sample: SampleOptions::default(),
        }
    }

    pub fn channels(&self) -> usize {
        match &self.color {
            ColorInput::ConstantTonal(t) => t.channels(),
            ColorInput::TonalFn(f) => f(VoxelCoord::new(0, 0, 0)).channels(),
            _ => self.lut.channels(),
        }
    }
}

/// Grid at the given resolution around the mesh bounding box.
pub fn grid_for_mesh(mesh: &Mesh, dpi: [f64; 3]) -> Result<GridSpec> {
    let (lo, hi) = mesh.bounds().ok_or_else(|| Error::InvalidMesh("mesh has no vertices".into()))?;
    GridSpec::covering(lo, hi, GridSpec::pitch_from_dpi(dpi))
}

/// Where the grid comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GridChoice {
    Dpi([f64; 3]),
    Spec(GridSpec),
}

/// File-based job description, as used by the command line.
#[derive(Debug, Clone)]
pub struct JobConfig {
    pub mesh: PathBuf,
    /// Texture image; without it vertex colors are used, then `constant_rgb`.
    pub texture: Option<PathBuf>,
    pub constant_rgb: Option<[f64; 3]>,
    pub grid: GridChoice,
    pub layers: usize,
    pub chunk_slices: usize,
    pub filter: FilterKind,
    /// Overrides `filter` with a table file.
    pub filter_table: Option<PathBuf>,
    pub seed: u64,
    pub policy: TonalPolicy,
    pub lut: Option<PathBuf>,
    pub out: PathBuf,
    pub metrics: bool,
    pub debug_dumps: bool,
    pub parallel_layers: bool,
}

impl JobConfig {
    pub fn new(mesh: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            mesh: mesh.into(),
            texture: None,
            constant_rgb: None,
            grid: GridChoice::Dpi(DEFAULT_DPI),
            layers: DEFAULT_LAYERS,
            chunk_slices: DEFAULT_CHUNK_SLICES,
            filter: FilterKind::Fs,
            filter_table: None,
            seed: 0,
            policy: TonalPolicy::default(),
            lut: None,
            out: out.into(),
            metrics: false,
            debug_dumps: false,
            parallel_layers: true,
        }
    }

    /// Scale for the support-printed channel, keeping the default layer-0
    /// exclusion.
    pub fn with_yellow_scale(mut self, scale: f64) -> Self {
        self.policy = self.policy.with_scale(SUPPORT_CHANNEL, scale);
        self
    }

    /// Load every input and resolve the grid.
    pub fn load(&self) -> Result<Job> {
        let mesh = Mesh::load_obj(&self.mesh)?;
        let spec = match &self.grid {
            GridChoice::Dpi(dpi) => grid_for_mesh(&mesh, *dpi)?,
            GridChoice::Spec(s) => *s,
        };
        let color = match (&self.texture, self.constant_rgb) {
            (Some(p), _) => ColorInput::Texture(Arc::new(TextureImage::load(p, ColorSpace::Srgb)?)),
            (None, _) if mesh.vertex_colors.is_some() => ColorInput::VertexColors,
            (None, Some(c)) => ColorInput::ConstantRgb(c),
            (None, None) => return Err(Error::MissingColorSource),
        };
        let mut job = Job::new(mesh, spec, color);
        if let Some(p) = &self.lut {
            job.lut = SeparationLut::load(p)?;
        }
        job.filter = match &self.filter_table {
            Some(p) => FilterTable::load(p)?,
            None => self.filter.table(),
        };
        job.layers = self.layers;
        job.chunk_slices = self.chunk_slices;
        job.seed = self.seed;
        job.policy = self.policy.clone();
        job.metrics = self.metrics;
        job.parallel_layers = self.parallel_layers;
        job.debug_dir = self.debug_dumps.then(|| self.out.join("debug"));
        Ok(job)
    }
}

/// Summary of a finished job.
#[derive(Debug, Clone, Default)]
pub struct JobReport {
    pub slices_written: usize,
    /// Inside voxels, all of which received a non-exterior material.
    pub inside_voxels: u64,
    /// Voxels per material code over the whole job.
    pub totals: Vec<u64>,
    pub layer_sizes: Vec<u64>,
    pub halftone: HalftoneStats,
    pub normal_fallbacks: u64,
    /// Between-layer voxels with no layer voxel in reach.
    pub unresolved_fill: u64,
    pub tone: Option<ToneReport>,
    pub halo_slices: usize,
    pub peak_resident_slices: usize,
    pub warnings: Vec<String>,
}

/// Run a file-based job: slice PNGs and `manifest.tsv` in `out`, plus
/// `metrics.tsv` when metrics are enabled.
pub fn run_job(config: &JobConfig) -> Result<JobReport> {
    let job = config.load()?;
    let mut sink = DirectorySink::create(&config.out, job.channels())?;
    let report = run(&job, &mut sink)?;
    if let Some(tone) = &report.tone {
        write_metrics(&config.out.join("metrics.tsv"), tone)?;
    }
    Ok(report)
}

pub fn write_metrics(path: &Path, tone: &ToneReport) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    tone.write_tsv(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
}
