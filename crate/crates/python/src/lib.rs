//! Python module `voxtone_py`.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use voxtone::colorsep::{self, TonalPolicy, TonalVector, SUPPORT_CHANNEL};
use voxtone::field;
use voxtone::grid::{self, VoxelClass};
use voxtone::halftone::FilterKind;
use voxtone::pipeline::{self, ColorInput, GridChoice, JobConfig, MemorySink};
use voxtone::voxelize::{self, Voxelizer};
use voxtone::Error;

create_exception!(voxtone_py, VoxtoneError, PyRuntimeError);

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => VoxtoneError::new_err(e.to_string()),
    }
}

#[pyclass(from_py_object, module = "voxtone_py")]
#[derive(Clone, Copy)]
struct GridSpec(grid::GridSpec);

#[pymethods]
impl GridSpec {
    #[new]
    #[pyo3(signature = (dims, pitch, origin = [0.0; 3]))]
    fn new(dims: [usize; 3], pitch: [f64; 3], origin: [f64; 3]) -> PyResult<Self> {
        grid::GridSpec::new(dims, pitch, origin).map(Self).map_err(err)
    }

    /// Grid around a mesh at a printer resolution in dots per inch.
    #[staticmethod]
    #[pyo3(signature = (mesh, dpi = pipeline::DEFAULT_DPI))]
    fn for_mesh(mesh: &Mesh, dpi: [f64; 3]) -> PyResult<Self> {
        pipeline::grid_for_mesh(&mesh.0, dpi).map(Self).map_err(err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.0.dims
    }

    #[getter]
    fn pitch(&self) -> [f64; 3] {
        self.0.pitch
    }

    #[getter]
    fn origin(&self) -> [f64; 3] {
        self.0.origin
    }

    fn slice_z(&self, s: usize) -> f64 {
        self.0.slice_z(s)
    }

    fn __repr__(&self) -> String {
        format!("GridSpec(dims={:?}, pitch={:?}, origin={:?})", self.0.dims, self.0.pitch, self.0.origin)
    }
}

#[pyclass(from_py_object, module = "voxtone_py")]
#[derive(Clone)]
struct Mesh(voxelize::Mesh);

#[pymethods]
impl Mesh {
    #[new]
    fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> PyResult<Self> {
        voxelize::Mesh::new(vertices, triangles).map(Self).map_err(err)
    }

    #[staticmethod]
    fn cuboid(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self(voxelize::Mesh::cuboid(lo, hi))
    }

    #[staticmethod]
    #[pyo3(signature = (center, radius, segments = 64, rings = 32))]
    fn uv_sphere(center: [f64; 3], radius: f64, segments: usize, rings: usize) -> Self {
        Self(voxelize::Mesh::uv_sphere(center, radius, segments, rings))
    }

    #[staticmethod]
    #[pyo3(signature = (center, major, minor, major_segments = 64, minor_segments = 32))]
    fn torus(center: [f64; 3], major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> Self {
        Self(voxelize::Mesh::torus(center, major, minor, major_segments, minor_segments))
    }

    #[staticmethod]
    fn load_obj(path: PathBuf) -> PyResult<Self> {
        voxelize::Mesh::load_obj(&path).map(Self).map_err(err)
    }

    fn write_obj(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path)?;
        self.0.write_obj(std::io::BufWriter::new(f))?;
        Ok(())
    }

    fn with_vertex_colors(&self, colors: Vec<[f64; 3]>) -> PyResult<Self> {
        self.0.clone().with_vertex_colors(colors).map(Self).map_err(err)
    }

    fn translated(&self, d: [f64; 3]) -> Self {
        Self(self.0.clone().translated(d))
    }

    fn merged(&self, other: &Mesh) -> Self {
        Self(self.0.clone().merged(&other.0))
    }

    #[getter]
    fn n_vertices(&self) -> usize {
        self.0.vertices.len()
    }

    #[getter]
    fn n_triangles(&self) -> usize {
        self.0.triangles.len()
    }

    fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        self.0.bounds()
    }
}

#[pyclass(skip_from_py_object, module = "voxtone_py", get_all)]
#[derive(Clone)]
struct JobReport {
    slices_written: usize,
    inside_voxels: u64,
    totals: Vec<u64>,
    layer_sizes: Vec<u64>,
    normal_fallbacks: u64,
    unresolved_fill: u64,
    halo_slices: usize,
    peak_resident_slices: usize,
    warnings: Vec<String>,
    /// Per colored channel, then white; `None` without metrics.
    rmse: Option<Vec<f64>>,
    traversal_visits: u64,
    traversal_members: u64,
}

#[pymethods]
impl JobReport {
    fn __repr__(&self) -> String {
        format!("JobReport(slices_written={}, inside_voxels={}, rmse={:?})", self.slices_written, self.inside_voxels, self.rmse)
    }
}

impl From<pipeline::JobReport> for JobReport {
    fn from(r: pipeline::JobReport) -> Self {
        Self {
            slices_written: r.slices_written,
            inside_voxels: r.inside_voxels,
            totals: r.totals,
            layer_sizes: r.layer_sizes,
            normal_fallbacks: r.normal_fallbacks,
            unresolved_fill: r.unresolved_fill,
            halo_slices: r.halo_slices,
            peak_resident_slices: r.peak_resident_slices,
            warnings: r.warnings,
            rmse: r.tone.map(|t| t.rmse),
            traversal_visits: r.halftone.traversal.visits,
            traversal_members: r.halftone.traversal.members,
        }
    }
}

/// An in-memory job. Exactly one of `tonal`, `rgb` or `texture` selects
/// the color; with none, vertex colors are used.
#[pyclass(module = "voxtone_py")]
struct Job {
    mesh: voxelize::Mesh,
    spec: grid::GridSpec,
    color: ColorInput,
    #[pyo3(get, set)]
    layers: usize,
    #[pyo3(get, set)]
    chunk_slices: usize,
    /// `fs`, `ostromoukhov` or `zhoufang`.
    #[pyo3(get, set)]
    filter: String,
    #[pyo3(get, set)]
    seed: u64,
    /// Scale of the support-printed channel; `None` for no tonal policy.
    #[pyo3(get, set)]
    yellow_scale: Option<f64>,
    #[pyo3(get, set)]
    parallel_layers: bool,
    #[pyo3(get, set)]
    audit: bool,
    #[pyo3(get, set)]
    metrics: bool,
}

impl Job {
    fn build(&self) -> PyResult<pipeline::Job> {
        let mut job = pipeline::Job::new(self.mesh.clone(), self.spec, self.color.clone());
        job.layers = self.layers;
        job.chunk_slices = self.chunk_slices;
        job.filter = self.filter.parse::<FilterKind>().map_err(err)?.table();
        job.seed = self.seed;
        job.policy = match self.yellow_scale {
            Some(s) => TonalPolicy::default().with_scale(SUPPORT_CHANNEL, s),
            None => TonalPolicy::identity(),
        };
        job.parallel_layers = self.parallel_layers;
        job.audit = self.audit;
        job.metrics = self.metrics;
        Ok(job)
    }
}

#[pymethods]
impl Job {
    #[new]
    #[pyo3(signature = (mesh, spec, tonal = None, rgb = None, texture = None))]
    fn new(mesh: &Mesh, spec: &GridSpec, tonal: Option<Vec<f64>>, rgb: Option<[f64; 3]>, texture: Option<PathBuf>) -> PyResult<Self> {
        let color = match (tonal, rgb, texture) {
            (Some(t), None, None) => {
                if t.is_empty() || t.len() > colorsep::MAX_CHANNELS {
                    return Err(PyValueError::new_err("tonal vector needs 1 to 4 channels"));
                }
                ColorInput::ConstantTonal(TonalVector::from_slice(&t))
            }
            (None, Some(c), None) => ColorInput::ConstantRgb(c),
            (None, None, Some(p)) => ColorInput::Texture(std::sync::Arc::new(
                voxelize::TextureImage::load(&p, voxelize::ColorSpace::Srgb).map_err(err)?,
            )),
            (None, None, None) => ColorInput::VertexColors,
            _ => return Err(PyValueError::new_err("give at most one of tonal, rgb, texture")),
        };
        Ok(Self {
            mesh: mesh.0.clone(),
            spec: spec.0,
            color,
            layers: pipeline::DEFAULT_LAYERS,
            chunk_slices: pipeline::DEFAULT_CHUNK_SLICES,
            filter: "fs".into(),
            seed: 0,
            yellow_scale: None,
            parallel_layers: true,
            audit: false,
            metrics: true,
        })
    }

    /// Write slice PNGs and the manifest (and metrics.tsv with metrics on)
    /// to `out_dir`.
    fn run(&self, py: Python<'_>, out_dir: PathBuf) -> PyResult<JobReport> {
        let job = self.build()?;
        let channels = job.channels();
        let r = py
            .detach(move || -> voxtone::Result<pipeline::JobReport> {
                let mut sink = pipeline::DirectorySink::create(&out_dir, channels)?;
                let r = pipeline::run(&job, &mut sink)?;
                if let Some(t) = &r.tone {
                    pipeline::write_metrics(&out_dir.join("metrics.tsv"), t)?;
                }
                Ok(r)
            })
            .map_err(err)?;
        Ok(r.into())
    }

    /// Run keeping every slice in memory: `(report, slices)` where each
    /// slice is `nx * ny` material codes, row-major.
    fn run_in_memory<'py>(&self, py: Python<'py>) -> PyResult<(JobReport, Vec<Bound<'py, PyBytes>>)> {
        let job = self.build()?;
        let (r, sink) = py
            .detach(move || {
                let mut sink = MemorySink::default();
                pipeline::run(&job, &mut sink).map(|r| (r, sink))
            })
            .map_err(err)?;
        let slices = sink.slices.iter().map(|s| PyBytes::new(py, s.materials.as_slice())).collect();
        Ok((r.into(), slices))
    }
}

/// File-based job, as the command line runs it.
#[pyfunction]
#[pyo3(signature = (mesh, out, texture = None, rgb = None, dpi = pipeline::DEFAULT_DPI, layers = 12, chunk = 100,
                    filter = "fs", seed = 0, yellow_scale = 0.3, lut = None, metrics = false, debug_dumps = false))]
#[allow(clippy::too_many_arguments)]
fn run_job(
    py: Python<'_>,
    mesh: PathBuf,
    out: PathBuf,
    texture: Option<PathBuf>,
    rgb: Option<[f64; 3]>,
    dpi: [f64; 3],
    layers: usize,
    chunk: usize,
    filter: &str,
    seed: u64,
    yellow_scale: f64,
    lut: Option<PathBuf>,
    metrics: bool,
    debug_dumps: bool,
) -> PyResult<JobReport> {
    let mut cfg = JobConfig::new(mesh, out).with_yellow_scale(yellow_scale);
    cfg.texture = texture;
    cfg.constant_rgb = rgb;
    cfg.grid = GridChoice::Dpi(dpi);
    cfg.layers = layers;
    cfg.chunk_slices = chunk;
    cfg.filter = filter.parse().map_err(err)?;
    cfg.seed = seed;
    cfg.lut = lut;
    cfg.metrics = metrics;
    cfg.debug_dumps = debug_dumps;
    py.detach(move || pipeline::run_job(&cfg)).map(Into::into).map_err(err)
}

/// Expected material fractions (channels, then white) for mean coverages.
#[pyfunction]
fn demichel_fractions(tonal: Vec<f64>) -> PyResult<Vec<f64>> {
    if tonal.is_empty() || tonal.len() > colorsep::MAX_CHANNELS {
        return Err(PyValueError::new_err("tonal vector needs 1 to 4 channels"));
    }
    Ok(colorsep::demichel_fractions(&TonalVector::from_slice(&tonal)))
}

/// L1 distance to the nearest empty voxel of a row-major slice mask:
/// `(phi, grad)`.
#[pyfunction]
fn distance_to_empty(nx: usize, ny: usize, inside: Vec<bool>) -> PyResult<(Vec<u32>, Vec<[i32; 2]>)> {
    if inside.len() != nx * ny {
        return Err(PyValueError::new_err(format!("expected {} values, got {}", nx * ny, inside.len())));
    }
    let class = grid::Plane::from_vec(nx, ny, inside.into_iter().map(|b| if b { VoxelClass::Interior } else { VoxelClass::Exterior }).collect());
    let d = field::distance_to_empty(&class);
    Ok((d.phi.into_vec(), d.grad.into_vec()))
}

/// Voxel classes of slice `s` (0 exterior, 1 interior, 2 surface).
#[pyfunction]
fn classify_slice<'py>(py: Python<'py>, mesh: &Mesh, spec: &GridSpec, s: usize) -> PyResult<Bound<'py, PyBytes>> {
    let vox = Voxelizer::new(&mesh.0, &spec.0).map_err(err)?;
    let plane = vox.classify_slice(s).map_err(err)?;
    let bytes: Vec<u8> = plane.as_slice().iter().map(|&c| c as u8).collect();
    Ok(PyBytes::new(py, &bytes))
}

/// `(nx, ny, codes)` of a slice image.
#[pyfunction]
fn read_slice<'py>(py: Python<'py>, path: PathBuf) -> PyResult<(usize, usize, Bound<'py, PyBytes>)> {
    let p = pipeline::read_indexed_png(&path).map_err(err)?;
    Ok((p.nx(), p.ny(), PyBytes::new(py, p.as_slice())))
}

#[pymodule]
fn voxtone_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("VoxtoneError", m.py().get_type::<VoxtoneError>())?;
    m.add_class::<GridSpec>()?;
    m.add_class::<Mesh>()?;
    m.add_class::<Job>()?;
    m.add_class::<JobReport>()?;
    m.add_function(wrap_pyfunction!(run_job, m)?)?;
    m.add_function(wrap_pyfunction!(demichel_fractions, m)?)?;
    m.add_function(wrap_pyfunction!(distance_to_empty, m)?)?;
    m.add_function(wrap_pyfunction!(classify_slice, m)?)?;
    m.add_function(wrap_pyfunction!(read_slice, m)?)?;
    Ok(())
}
