use std::io::Write;
use std::path::Path;

use log::{debug, warn};
use rayon::prelude::*;

use super::metrics::{SliceToneBuilder, ToneReport};
use super::output::{SliceOutput, SliceSink};
use super::{ColorInput, Job, JobReport};
use crate::error::{Error, Result};
use crate::field::{
    build_distance_mask, distance_to_empty, extract_layers_slice, normal_at, sweep_slice, write_distance_pgm,
    DistanceSlice, DistanceToEmptyPlane, LayerParams, LayerPlane, SurfaceSlice, SurfaceTonals, FALLBACK_NORMAL,
    NO_LAYER,
};
use crate::grid::{ClassPlane, GridSpec, Plane, SliceChunk, VoxelCoord};
use crate::halftone::{compose_slice, white, FillSearch, HalftoneConfig, LayerHalftoner, LayerVoxel, Material, EXTERIOR};
use crate::traverse::{write_order_pgm, LayerSliceView};
use crate::voxelize::{ColorSource, Voxelizer};

/// Everything resident for one slice. Fields fill in as the slice passes
/// through the stages and are dropped once no later stage needs them.
#[derive(Debug)]
struct Slot {
    class: ClassPlane,
    surf: Option<SurfaceTonals>,
    dist: Option<DistanceSlice>,
    labels: Option<LayerPlane>,
    normals: Option<Plane<Option<[f64; 3]>>>,
    dte: Option<DistanceToEmptyPlane>,
    layer_mat: Option<Plane<Material>>,
    rank: Option<Plane<u32>>,
}

/// Frontiers: every slice below `n_*` has finished that stage.
#[derive(Debug, Default, Clone, Copy)]
struct Frontier {
    class: usize,
    dist: usize,
    labels: usize,
    halftone: usize,
    out: usize,
}

fn mesh_meets_grid(job: &Job) -> bool {
    let Some((lo, hi)) = job.mesh.bounds() else { return false };
    let s = &job.spec;
    (0..3).all(|a| {
        let g0 = s.origin[a];
        let g1 = g0 + s.dims[a] as f64 * s.pitch[a];
        hi[a] >= g0 && lo[a] <= g1
    })
}

/// Run a job slice by slice, handing finished slices to `sink` in order.
///
/// Only a window of slices is resident: a batch of `chunk_slices` freshly
/// classified slices plus the halo the later stages still need.
pub fn run(job: &Job, sink: &mut dyn SliceSink) -> Result<JobReport> {
    if job.layers == 0 || job.layers >= NO_LAYER as usize - 1 {
        return Err(Error::Config(format!("layer count must be in 1..=253, got {}", job.layers)));
    }
    let channels = job.channels();
    if channels == 0 || channels > crate::colorsep::MAX_CHANNELS {
        return Err(Error::Config(format!("channel count must be in 1..=4, got {channels}")));
    }
    job.mesh.validate()?;
    let spec = job.spec;
    let params = LayerParams::for_grid(&spec, job.layers)?;
    let mask = build_distance_mask(&spec, params.d_max(), job.mask_budget)?;
    let search = FillSearch::new(&spec, FillSearch::default_radius(&spec));
    let (hz, rz) = (mask.z_reach(), search.z_reach());
    let halo = hz + rz + 2;
    if job.chunk_slices < halo.min(spec.nz()) {
        return Err(Error::Config(format!("chunk of {} slices is below the halo of {halo} slices", job.chunk_slices)));
    }

    let mut report = JobReport {
        halo_slices: halo,
        totals: vec![0; channels + 2],
        layer_sizes: vec![0; job.layers],
        ..Default::default()
    };
    if !mesh_meets_grid(job) {
        let msg = "mesh does not intersect the grid; no slices written".to_string();
        warn!("{msg}");
        report.warnings.push(msg);
        sink.finish()?;
        return Ok(report);
    }
    if let Some(dir) = &job.debug_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let vox = Voxelizer::new(&job.mesh, &spec)?;
    let cfg = HalftoneConfig {
        table: job.filter.clone(),
        policy: job.policy.clone(),
        seed: job.seed,
        channels,
        audit: job.audit,
    };
    let (nx, ny, nz) = (spec.nx(), spec.ny(), spec.nz());
    let mut halftoners: Vec<LayerHalftoner> = (0..job.layers).map(|l| LayerHalftoner::new(l as u8, nx, ny, &cfg)).collect();
    let mut win: SliceChunk<Slot> = SliceChunk::new(0, halo);
    let mut f = Frontier::default();
    let mut clamps = 0u64;
    let mut tones = Vec::new();
    // a stage may run up to `reach` slices behind the previous one
    let ready = |prev: usize, reach: usize| if prev >= nz { nz } else { prev.saturating_sub(reach) };

    while f.out < nz {
        // classify, sample and separate one batch
        if f.class < nz {
            let end = (f.class + job.chunk_slices).min(nz);
            let batch = (f.class..end)
                .into_par_iter()
                .map(|s| surface_slice(job, &vox, s, channels))
                .collect::<Result<Vec<_>>>()?;
            for (class, surf, c) in batch {
                clamps += c;
                win.push(Slot { class, surf: Some(surf), dist: None, labels: None, normals: None, dte: None, layer_mat: None, rank: None });
            }
            f.class = end;
        }
        report.peak_resident_slices = report.peak_resident_slices.max(win.slice_count());

        // distance sweep
        let lim = ready(f.class, hz);
        if lim > f.dist {
            let w = &win;
            let dists: Vec<DistanceSlice> = (f.dist..lim)
                .into_par_iter()
                .map(|z| {
                    sweep_slice(&spec, z, &mask, channels, |s| {
                        let slot = w.get(s)?;
                        Some(SurfaceSlice { class: &slot.class, tonal: slot.surf.as_ref()? })
                    })
                })
                .collect();
            for d in dists {
                let z = d.z;
                win.get_mut(z).expect("resident").dist = Some(d);
            }
            f.dist = lim;
            for (s, slot) in win.iter_mut() {
                if s + hz < f.dist {
                    slot.surf = None;
                }
            }
        }

        // layer labels, normals and distance-to-empty
        let lim = ready(f.dist, 1);
        if lim > f.labels {
            let w = &win;
            let done: Vec<_> = (f.labels..lim).into_par_iter().map(|s| label_slice(&spec, w, s, params)).collect();
            for (s, (labels, normals, dte, fallbacks)) in (f.labels..lim).zip(done) {
                report.normal_fallbacks += fallbacks;
                let slot = win.get_mut(s).expect("resident");
                slot.labels = Some(labels);
                slot.normals = Some(normals);
                slot.dte = Some(dte);
            }
            f.labels = lim;
        }

        // halftone every layer; slices in order within a layer
        let lim = ready(f.labels, 1);
        if lim > f.halftone {
            let range = f.halftone..lim;
            let w = &win;
            let per_layer = |h: &mut LayerHalftoner| -> Vec<Vec<LayerVoxel>> {
                range
                    .clone()
                    .map(|s| {
                        let slot = w.get(s).expect("resident");
                        let view = LayerSliceView {
                            spec: &spec,
                            layer: h.layer,
                            labels: slot.labels.as_ref().expect("labels"),
                            labels_next: w.get(s + 1).and_then(|n| n.labels.as_ref()),
                            dte: slot.dte.as_ref().expect("dte"),
                            normals: slot.normals.as_ref().expect("normals"),
                        };
                        let mut out = Vec::new();
                        h.process_slice(s, &view, &slot.dist.as_ref().expect("dist").tonal, &cfg, &mut out);
                        out
                    })
                    .collect()
            };
            let results: Vec<Vec<Vec<LayerVoxel>>> = if job.parallel_layers {
                halftoners.par_iter_mut().map(per_layer).collect()
            } else {
                halftoners.iter_mut().map(per_layer).collect()
            };
            for (i, s) in range.clone().enumerate() {
                let mut mat = Plane::filled(nx, ny, EXTERIOR);
                let mut rank = job.debug_dir.is_some().then(|| Plane::filled(nx, ny, u32::MAX));
                for (l, layer) in results.iter().enumerate() {
                    report.layer_sizes[l] += layer[i].len() as u64;
                    for v in &layer[i] {
                        *mat.get_mut(v.cell.0, v.cell.1) = v.material;
                        if let Some(r) = rank.as_mut() {
                            *r.get_mut(v.cell.0, v.cell.1) = v.rank;
                        }
                    }
                }
                if let Some(dir) = &job.debug_dir {
                    dump_layers(dir, s, &results, i, nx, ny, channels)?;
                }
                let slot = win.get_mut(s).expect("resident");
                slot.layer_mat = Some(mat);
                slot.rank = rank;
                slot.normals = None;
                slot.dte = None;
            }
            f.halftone = lim;
        }

        // fill between layers, metrics, write
        let lim = ready(f.halftone, rz);
        if lim > f.out {
            let w = &win;
            let composed: Vec<_> = (f.out..lim)
                .into_par_iter()
                .map(|z| {
                    compose_slice(
                        z,
                        &w.get(z).expect("resident").class,
                        |s| w.get(s).and_then(|t| t.labels.as_ref()),
                        |s| w.get(s).and_then(|t| t.layer_mat.as_ref()),
                        &search,
                        channels,
                    )
                })
                .collect();
            for (z, c) in (f.out..lim).zip(composed) {
                let slot = win.get(z).expect("resident");
                let dist = slot.dist.as_ref().expect("dist");
                report.unresolved_fill += c.unresolved;
                if job.metrics {
                    let mut b = SliceToneBuilder::new(z, channels);
                    for y in 0..ny {
                        for x in 0..nx {
                            let d = *dist.d.get(x, y);
                            if !slot.class.get(x, y).is_inside() || d >= params.d_max() {
                                continue;
                            }
                            let src = match *c.source_layer.get(x, y) {
                                NO_LAYER => ((d / params.tau) as usize).min(job.layers - 1),
                                l => l as usize,
                            };
                            b.add(*c.materials.get(x, y), &job.policy.apply(*dist.tonal.get(x, y), src));
                        }
                    }
                    tones.extend(b.finish());
                }
                if let Some(dir) = &job.debug_dir {
                    write_distance_pgm(&dir.join(format!("distance_{z:06}.pgm")), &dist.d, params.d_max())?;
                    if let Some(r) = &slot.rank {
                        write_order_pgm(&dir.join(format!("order_{z:06}.pgm")), r)?;
                    }
                }
                let out = SliceOutput::new(z, spec.slice_z(z), c.materials, channels + 2);
                let white_code = white(channels) as usize;
                for (t, h) in report.totals.iter_mut().zip(&out.histogram) {
                    *t += h;
                }
                report.inside_voxels += out.histogram[1..=white_code].iter().sum::<u64>();
                sink.write_slice(out)?;
                report.slices_written += 1;
            }
            f.out = lim;
        }

        let keep_from = [f.dist.saturating_sub(hz), f.labels.saturating_sub(1), f.halftone, f.out.saturating_sub(rz)]
            .into_iter()
            .min()
            .unwrap_or(0);
        win.evict_below(keep_from);
        debug!("frontiers {f:?}, resident {}..{}", win.first_slice(), win.end_slice());
    }
    sink.finish()?;

    for h in &halftoners {
        report.halftone.merge(&h.stats);
    }
    if job.metrics {
        let mut tone = ToneReport::from_slices(tones, channels);
        tone.clamps = clamps;
        tone.dropped = report.halftone.dropped;
        tone.disagreements = report.halftone.multi_fire;
        report.tone = Some(tone);
    }
    if report.unresolved_fill > 0 {
        let msg = format!("{} between-layer voxels had no layer voxel in reach and were set to white", report.unresolved_fill);
        warn!("{msg}");
        report.warnings.push(msg);
    }
    Ok(report)
}

/// Classification and surface tonals of slice `s`, plus LUT clamp count.
fn surface_slice(job: &Job, vox: &Voxelizer<'_>, s: usize, channels: usize) -> Result<(ClassPlane, SurfaceTonals, u64)> {
    let class = vox.classify_slice(s)?;
    let mut surf = SurfaceTonals::new(class.nx());
    let mut clamps = 0;
    let mut from_colors = |source: ColorSource<'_>, surf: &mut SurfaceTonals| -> Result<()> {
        let colors = vox.sample_surface_colors(source, &class, s, job.sample)?;
        for y in 0..class.ny() {
            for x in 0..class.nx() {
                if let Some(c) = colors.get(x, y) {
                    surf.push(x, y, job.lut.separate(*c, &mut clamps));
                }
            }
        }
        Ok(())
    };
    match &job.color {
        ColorInput::Texture(t) => from_colors(ColorSource::Texture(t), &mut surf)?,
        ColorInput::VertexColors => from_colors(ColorSource::VertexColors, &mut surf)?,
        ColorInput::ConstantRgb(c) => from_colors(ColorSource::Constant(*c), &mut surf)?,
        ColorInput::ConstantTonal(t) => each_surface(&class, |x, y| surf.push(x, y, t.clamped())),
        ColorInput::TonalFn(f) => each_surface(&class, |x, y| surf.push(x, y, f(VoxelCoord::new(x, y, s)).clamped())),
    }
    debug_assert!(surf.is_empty() || surf.get(0, 0).map_or(true, |t| t.channels() == channels));
    Ok((class, surf, clamps))
}

fn each_surface(class: &ClassPlane, mut f: impl FnMut(usize, usize)) {
    for y in 0..class.ny() {
        for x in 0..class.nx() {
            if class.get(x, y).is_surface() {
                f(x, y);
            }
        }
    }
}

type Labeled = (LayerPlane, Plane<Option<[f64; 3]>>, DistanceToEmptyPlane, u64);

fn label_slice(spec: &GridSpec, win: &SliceChunk<Slot>, s: usize, params: LayerParams) -> Labeled {
    let at = |k: Option<usize>| k.and_then(|k| win.get(k));
    let slots = [at(s.checked_sub(1)), at(Some(s)), at(Some(s + 1)).filter(|_| s + 1 < spec.nz())];
    let d = slots.map(|t| t.and_then(|t| t.dist.as_ref()).map(|d| &d.d));
    let c = slots.map(|t| t.map(|t| &t.class));
    let labels = extract_layers_slice(d, c, params);
    let mut normals = Plane::filled(spec.nx(), spec.ny(), None);
    let mut fallbacks = 0;
    for y in 0..spec.ny() {
        for x in 0..spec.nx() {
            if (*labels.get(x, y) as usize) < params.layers {
                let n = normal_at(spec, x, y, d, c, params.d_null()).unwrap_or_else(|| {
                    fallbacks += 1;
                    FALLBACK_NORMAL
                });
                *normals.get_mut(x, y) = Some(n);
            }
        }
    }
    let dte = distance_to_empty(c[1].expect("resident"));
    (labels, normals, dte, fallbacks)
}

fn dump_layers(dir: &Path, s: usize, results: &[Vec<Vec<LayerVoxel>>], i: usize, nx: usize, ny: usize, channels: usize) -> Result<()> {
    let scale = 255 / (channels + 1);
    for (l, layer) in results.iter().enumerate() {
        if layer[i].is_empty() {
            continue;
        }
        let mut buf = Plane::filled(nx, ny, 0u8);
        for v in &layer[i] {
            *buf.get_mut(v.cell.0, v.cell.1) = (v.material as usize * scale) as u8;
        }
        let path = dir.join(format!("halftone_l{l:02}_{s:06}.pgm"));
        let mut bytes = format!("P5\n{nx} {ny}\n255\n").into_bytes();
        bytes.write_all(buf.as_slice()).expect("write to vec");
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorsep::TonalVector;
    use crate::pipeline::{DigestSink, MemorySink};
    use crate::voxelize::Mesh;

    fn cube_job(n: usize, chunk: usize) -> Job {
        let spec = GridSpec::new([n + 4; 3], [1.0; 3], [0.0; 3]).unwrap();
        let mesh = Mesh::cuboid([2.0; 3], [2.0 + n as f64; 3]);
        let mut job = Job::new(mesh, spec, ColorInput::ConstantTonal(TonalVector::splat(3, 0.5)));
        job.layers = 3;
        job.chunk_slices = chunk;
        job
    }

    #[test]
    fn cube_interior_fully_assigned() {
        let job = cube_job(10, 100);
        let mut sink = MemorySink::default();
        let r = run(&job, &mut sink).unwrap();
        assert_eq!(r.slices_written, 14);
        assert_eq!(r.inside_voxels, 1000);
        let total: u64 = r.totals.iter().sum();
        assert_eq!(total, 14 * 14 * 14);
        for s in &sink.slices {
            assert_eq!(s.histogram.iter().sum::<u64>(), 14 * 14);
        }
        assert_eq!(r.unresolved_fill, 0);
    }

    #[test]
    fn chunking_and_layer_parallelism_do_not_change_output() {
        let digest = |chunk: usize, par: bool| {
            let mut job = cube_job(12, chunk);
            job.parallel_layers = par;
            let mut sink = DigestSink::default();
            run(&job, &mut sink).unwrap();
            sink.digest()
        };
        let full = digest(100, true);
        assert_eq!(digest(8, true), full);
        assert_eq!(digest(100, false), full);
    }

    #[test]
    fn chunk_below_halo_is_rejected() {
        let job = cube_job(10, 1);
        assert!(matches!(run(&job, &mut MemorySink::default()), Err(Error::Config(_))));
    }

    #[test]
    fn disjoint_grid_writes_nothing() {
        let mut job = cube_job(4, 100);
        job.mesh = job.mesh.translated([100.0, 0.0, 0.0]);
        let mut sink = MemorySink::default();
        let r = run(&job, &mut sink).unwrap();
        assert_eq!(r.slices_written, 0);
        assert!(sink.slices.is_empty());
        assert_eq!(r.warnings.len(), 1);
    }
}
