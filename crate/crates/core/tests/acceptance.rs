//! Acceptance criteria 1-9. Each test prints one PASS/FAIL line.
//!
//! Tests take a shared lock so the allocation counter used by criterion 8
//! only sees one job at a time.

use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use voxtone::colorsep::{demichel_fractions, TonalPolicy, TonalVector};
use voxtone::field::{
    build_distance_mask, d_null, distance_to_empty, extract_layers, sweep_transfer, LayerParams, BETWEEN_LAYERS, NO_LAYER,
};
use voxtone::grid::{ClassPlane, GridSpec, Plane, VoxelClass, WINDOW26};
use voxtone::halftone::FilterTable;
use voxtone::pipeline::{grid_for_mesh, run, ColorInput, DigestSink, DirectorySink, Job, MemorySink, DEFAULT_DPI};
use voxtone::voxelize::{Mesh, Voxelizer};

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, l: Layout) -> *mut u8 {
        let p = System.alloc(l);
        if !p.is_null() {
            let now = CURRENT.fetch_add(l.size(), Ordering::Relaxed) + l.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, p: *mut u8, l: Layout) {
        System.dealloc(p, l);
        CURRENT.fetch_sub(l.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, p: *mut u8, l: Layout, new_size: usize) -> *mut u8 {
        let q = System.realloc(p, l, new_size);
        if !q.is_null() {
            if new_size >= l.size() {
                let now = CURRENT.fetch_add(new_size - l.size(), Ordering::Relaxed) + new_size - l.size();
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(l.size() - new_size, Ordering::Relaxed);
            }
        }
        q
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn pitch() -> [f64; 3] {
    GridSpec::pitch_from_dpi(DEFAULT_DPI)
}

/// Sphere whose radius is `r` voxels along x.
fn sphere(r: f64) -> Mesh {
    let p = pitch();
    Mesh::uv_sphere([0.0; 3], r * p[0], 96, 48)
}

fn bits_corr(a: &[bool], b: &[bool]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().filter(|&&v| v).count() as f64 / n;
    let mb = b.iter().filter(|&&v| v).count() as f64 / n;
    let mut cov = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x as u8 as f64 - ma) * (y as u8 as f64 - mb);
    }
    cov /= n;
    cov / (ma * (1.0 - ma) * mb * (1.0 - mb)).sqrt()
}

// ---------------------------------------------------------------- 1

/// Plain 2D serpentine Floyd-Steinberg, taps renormalized over the ones
/// that land inside the image.
fn reference_serpentine_fs(img: &[f64], n: usize) -> Vec<bool> {
    let taps = [(1i64, 0i64, 7.0 / 16.0), (-1, 1, 3.0 / 16.0), (0, 1, 5.0 / 16.0), (1, 1, 1.0 / 16.0)];
    let mut err = vec![0.0f64; n * n];
    let mut out = vec![false; n * n];
    for y in 0..n {
        let dir: i64 = if y % 2 == 0 { 1 } else { -1 };
        let xs: Vec<usize> = if dir == 1 { (0..n).collect() } else { (0..n).rev().collect() };
        for x in xs {
            let i = y * n + x;
            let gt = img[i] + err[i];
            let h = gt > 0.5;
            out[i] = h;
            let res = h as u8 as f64 - gt;
            let inb: Vec<(usize, f64)> = taps
                .iter()
                .filter_map(|&(df, dr, w)| {
                    let (ux, uy) = (x as i64 + dir * df, y as i64 + dr);
                    (ux >= 0 && uy >= 0 && ux < n as i64 && uy < n as i64).then(|| (uy as usize * n + ux as usize, w))
                })
                .collect();
            let sum: f64 = inb.iter().map(|t| t.1).sum();
            for (j, w) in inb {
                err[j] -= (w / sum) * res;
            }
        }
    }
    out
}

#[test]
fn criterion_1_flat_plate_matches_2d_serpentine() {
    let _g = serial();
    let t0 = Instant::now();
    let n = 256;
    let p = pitch();
    let spec = GridSpec::new([n + 2, n + 2, 3], p, [0.0; 3]).unwrap();
    let mesh = Mesh::cuboid([p[0], p[1], p[2]], [(n + 1) as f64 * p[0], (n + 1) as f64 * p[1], 2.0 * p[2]]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img: Arc<Vec<f64>> = Arc::new(
        (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64, (i / n) as f64);
                (0.45 * x / n as f64 + 0.35 * y / n as f64 + 0.2 * rng.gen::<f64>()).clamp(0.0, 1.0)
            })
            .collect(),
    );
    let im = img.clone();
    let tonal = move |v: voxtone::grid::VoxelCoord| {
        let (x, y) = (v.x.wrapping_sub(1), v.y.wrapping_sub(1));
        TonalVector::from_slice(&[if x < n && y < n { im[y * n + x] } else { 0.0 }])
    };
    let mut job = Job::new(mesh, spec, ColorInput::TonalFn(Arc::new(tonal)));
    job.layers = 1;
    job.filter = FilterTable::floyd_steinberg();
    job.policy = TonalPolicy::identity();
    job.audit = true;
    let mut sink = MemorySink::default();
    let r = run(&job, &mut sink).unwrap();

    let expected = reference_serpentine_fs(&img, n);
    let plate = &sink.slices[1].materials;
    let mut mismatches = 0;
    for y in 0..n {
        for x in 0..n {
            let want = if expected[y * n + x] { 1 } else { 2 };
            if *plate.get(x + 1, y + 1) != want {
                mismatches += 1;
            }
        }
    }
    let others_empty = [0, 2].iter().all(|&s| sink.slices[s].materials.as_slice().iter().all(|&m| m == 0));
    let elapsed = t0.elapsed();
    let pass = mismatches == 0 && others_empty && r.halftone.traversal.serpentine_components == 1 && elapsed < Duration::from_secs(5);
    report(1, pass, format!("{mismatches} mismatching voxels of {}, {elapsed:.2?}", n * n));
    assert_eq!(mismatches, 0);
    assert!(others_empty);
    assert_eq!(r.halftone.traversal.serpentine_components, 1);
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
}

// ---------------------------------------------------------------- 2

/// Union of random ellipsoids; surface = inside with a 26-neighbor outside.
fn random_shape(spec: &GridSpec, rng: &mut impl Rng) -> Vec<ClassPlane> {
    let (nx, ny, nz) = (spec.nx(), spec.ny(), spec.nz());
    let blobs: Vec<([f64; 3], [f64; 3])> = (0..rng.gen_range(1..=4))
        .map(|_| {
            let c = [rng.gen_range(6.0..nx as f64 - 6.0), rng.gen_range(6.0..ny as f64 - 6.0), rng.gen_range(6.0..nz as f64 - 6.0)];
            let r = [rng.gen_range(3.0..11.0), rng.gen_range(3.0..11.0), rng.gen_range(3.0..11.0)];
            (c, r)
        })
        .collect();
    let inside = |x: i64, y: i64, z: i64| {
        blobs.iter().any(|(c, r)| {
            let q = [(x as f64 - c[0]) / r[0], (y as f64 - c[1]) / r[1], (z as f64 - c[2]) / r[2]];
            q[0] * q[0] + q[1] * q[1] + q[2] * q[2] <= 1.0
        })
    };
    let in_grid = |x: i64, y: i64, z: i64| x >= 0 && y >= 0 && z >= 0 && x < nx as i64 && y < ny as i64 && z < nz as i64;
    (0..nz)
        .map(|z| {
            let mut p = Plane::filled(nx, ny, VoxelClass::Exterior);
            for y in 0..ny {
                for x in 0..nx {
                    let (xi, yi, zi) = (x as i64, y as i64, z as i64);
                    if !inside(xi, yi, zi) {
                        continue;
                    }
                    let touches = WINDOW26.iter().any(|o| {
                        let (u, v, w) = (xi + o[0], yi + o[1], zi + o[2]);
                        !in_grid(u, v, w) || !inside(u, v, w)
                    });
                    *p.get_mut(x, y) = if touches { VoxelClass::Surface } else { VoxelClass::Interior };
                }
            }
            p
        })
        .collect()
}

#[test]
fn criterion_2_distance_field_matches_brute_force() {
    let _g = serial();
    let t0 = Instant::now();
    let p = pitch();
    let spec = GridSpec::new([32; 3], p, [0.0; 3]).unwrap();
    let d_max = 6.0 * p[2];
    let mask = build_distance_mask(&spec, d_max, 1 << 22).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut d_bad, mut g_bad, mut checked, mut ties) = (0usize, 0usize, 0usize, 0usize);
    for _ in 0..10 {
        let classes = random_shape(&spec, &mut rng);
        let tonals: Vec<Plane<TonalVector>> = (0..32)
            .map(|_| Plane::from_vec(32, 32, (0..1024).map(|_| TonalVector::from_slice(&[rng.gen(), rng.gen(), rng.gen()])).collect()))
            .collect();
        let field = sweep_transfer(&spec, &classes, &tonals, &mask, 3);
        let surface: Vec<[usize; 3]> = (0..32)
            .flat_map(|z| (0..32).flat_map(move |y| (0..32).map(move |x| [x, y, z])))
            .filter(|v| classes[v[2]].get(v[0], v[1]).is_surface())
            .collect();
        let per_voxel: Vec<(usize, usize, usize)> = (0..32 * 32 * 32usize)
            .into_par_iter()
            .map(|i| {
                let v = [i % 32, (i / 32) % 32, i / 1024];
                let mut best = f64::INFINITY;
                let mut who = Vec::new();
                for u in &surface {
                    let fx = (u[0] as f64 - v[0] as f64) * p[0];
                    let fy = (u[1] as f64 - v[1] as f64) * p[1];
                    let fz = (u[2] as f64 - v[2] as f64) * p[2];
                    let d = (fx * fx + fy * fy + fz * fz).sqrt();
                    if d < best {
                        best = d;
                        who.clear();
                        who.push(*u);
                    } else if d == best {
                        who.push(*u);
                    }
                }
                let want = if best <= d_max { best } else { d_null(d_max) };
                let got = field.d(voxtone::grid::VoxelCoord::new(v[0], v[1], v[2]));
                let d_bad = (got != want) as usize;
                let (mut g_bad, mut tie) = (0, 0);
                if best <= d_max {
                    if who.len() == 1 {
                        let u = who[0];
                        let want_g = *tonals[u[2]].get(u[0], u[1]);
                        g_bad = (field.tonal(voxtone::grid::VoxelCoord::new(v[0], v[1], v[2])) != want_g) as usize;
                    } else {
                        tie = 1;
                    }
                }
                (d_bad, g_bad, tie)
            })
            .collect();
        for (a, b, c) in per_voxel {
            d_bad += a;
            g_bad += b;
            ties += c;
        }
        checked += 32 * 32 * 32;
    }
    let elapsed = t0.elapsed();
    let pass = d_bad == 0 && g_bad == 0 && elapsed < Duration::from_secs(60);
    report(2, pass, format!("{checked} voxels, {d_bad} distance and {g_bad} tone mismatches, {ties} ties skipped, {elapsed:.2?}"));
    assert_eq!(d_bad, 0);
    assert_eq!(g_bad, 0);
    assert!(elapsed < Duration::from_secs(60));
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_distance_to_empty_matches_brute_force() {
    let _g = serial();
    let n = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for k in 0..20 {
        // mix of random fill densities and blobby shapes
        let density = 0.3 + 0.65 * (k as f64 / 19.0);
        let blobs: Vec<(f64, f64, f64)> =
            (0..6).map(|_| (rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64), rng.gen_range(4.0..24.0))).collect();
        let cells: Vec<VoxelClass> = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64, (i / n) as f64);
                let in_blob = blobs.iter().any(|&(cx, cy, r)| (x - cx).powi(2) + (y - cy).powi(2) < r * r);
                let keep = if k % 2 == 0 { in_blob && rng.gen::<f64>() < density.max(0.97) } else { rng.gen::<f64>() < density };
                if keep {
                    VoxelClass::Interior
                } else {
                    VoxelClass::Exterior
                }
            })
            .collect();
        let class = Plane::from_vec(n, n, cells);
        let dte = distance_to_empty(&class);
        let empties: Vec<(i64, i64)> = (0..n * n)
            .filter(|&i| !class.as_slice()[i].is_inside())
            .map(|i| ((i % n) as i64, (i / n) as i64))
            .collect();
        for y in 0..n as i64 {
            for x in 0..n as i64 {
                let want = if !class.get(x as usize, y as usize).is_inside() {
                    0
                } else {
                    let frame = (x + 1).min(y + 1).min(n as i64 - x).min(n as i64 - y);
                    empties.iter().map(|&(u, v)| (u - x).abs() + (v - y).abs()).min().unwrap_or(i64::MAX).min(frame)
                };
                if dte.phi(x as usize, y as usize) as i64 != want {
                    bad += 1;
                }
            }
        }
    }
    report(3, bad == 0, format!("{bad} mismatches over 20 slices of {n}x{n}"));
    assert_eq!(bad, 0);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_4_tone_preservation_on_sphere() {
    let _g = serial();
    let t0 = Instant::now();
    let mesh = sphere(60.0);
    let spec = grid_for_mesh(&mesh, DEFAULT_DPI).unwrap();
    let mut job = Job::new(mesh, spec, ColorInput::ConstantTonal(TonalVector::splat(3, 0.3)));
    job.layers = 12;
    job.filter = FilterTable::zhou_fang();
    job.policy = TonalPolicy::identity();
    let r = run(&job, &mut DigestSink::default()).unwrap();
    let tone = r.tone.unwrap();
    let elapsed = t0.elapsed();
    let ok = tone.rmse.iter().all(|&e| e < 0.03);
    let pass = ok && elapsed < Duration::from_secs(300);
    report(
        4,
        pass,
        format!(
            "grid {:?}, RMSE C {:.4} M {:.4} Y {:.4} W {:.4} over {} slices, {elapsed:.1?}",
            spec.dims,
            tone.rmse[0],
            tone.rmse[1],
            tone.rmse[2],
            tone.rmse[3],
            tone.slices.len()
        ),
    );
    assert!(ok, "rmse {:?}", tone.rmse);
    assert!(elapsed < Duration::from_secs(300));
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_traversal_visits_every_layer_voxel_once() {
    let _g = serial();
    let p = pitch();
    let r = 20.0 * p[0];
    let shapes = [
        ("sphere", sphere(20.0)),
        ("torus", Mesh::torus([0.0; 3], 1.6 * r, 0.6 * r, 64, 32)),
        (
            "two components",
            Mesh::uv_sphere([0.0, 0.0, 0.0], 0.7 * r, 64, 32).merged(&Mesh::uv_sphere([1.8 * r, 0.0, 0.9 * r], 0.6 * r, 64, 32)),
        ),
    ];
    let mut lines = Vec::new();
    let mut all_ok = true;
    for (name, mesh) in shapes {
        let spec = grid_for_mesh(&mesh, DEFAULT_DPI).unwrap();
        let mut job = Job::new(mesh, spec, ColorInput::ConstantTonal(TonalVector::splat(3, 0.4)));
        job.layers = 6;
        job.audit = true;
        job.metrics = false;
        let rep = run(&job, &mut DigestSink::default()).unwrap();
        let t = rep.halftone.traversal;
        let layer_voxels: u64 = rep.layer_sizes.iter().sum();
        let ok = t.audit_clean() && t.visits == t.members && t.members == layer_voxels && layer_voxels > 0;
        all_ok &= ok;
        lines.push(format!(
            "{name}: {} voxels, {} double, {} to visited, {} to other, {} serpentine",
            t.visits, t.double_visits, t.to_visited, t.to_foreign, t.serpentine_components
        ));
        if name == "two components" {
            // the smaller sphere is born and dies while the other is present
            all_ok &= t.serpentine_components > 0;
        }
    }
    report(5, all_ok, lines.join("; "));
    assert!(all_ok, "{lines:?}");
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_layers_partition_the_shell() {
    let _g = serial();
    let mesh = sphere(24.0);
    let spec = grid_for_mesh(&mesh, DEFAULT_DPI).unwrap();
    let layers = 12;
    let params = LayerParams::for_grid(&spec, layers).unwrap();
    let vox = Voxelizer::new(&mesh, &spec).unwrap();
    let classes: Vec<ClassPlane> = (0..spec.nz()).map(|s| vox.classify_slice(s).unwrap()).collect();
    let tonals = vec![Plane::filled(spec.nx(), spec.ny(), TonalVector::zeros(1)); spec.nz()];
    let mask = build_distance_mask(&spec, params.d_max(), 1 << 22).unwrap();
    let field = sweep_transfer(&spec, &classes, &tonals, &mask, 1);
    let set = extract_layers(&field, &classes, params);

    let (nx, ny, nz) = (spec.nx() as i64, spec.ny() as i64, spec.nz() as i64);
    let class_at = |x: i64, y: i64, z: i64| {
        (x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz).then(|| *classes[z as usize].get(x as usize, y as usize))
    };
    let d_at = |x: i64, y: i64, z: i64| {
        (x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz).then(|| field.d(voxtone::grid::VoxelCoord::new(x as usize, y as usize, z as usize)))
    };
    let mut sets: Vec<HashSet<(i64, i64, i64)>> = vec![HashSet::new(); layers];
    let mut between = HashSet::new();
    let mut shell = HashSet::new();
    let mut violations = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let c = class_at(x, y, z).unwrap();
                let d = d_at(x, y, z).unwrap();
                let inside = c.is_inside();
                if inside && d < params.d_max() {
                    shell.insert((x, y, z));
                }
                let l = set.label(x as usize, y as usize, z as usize);
                match l {
                    NO_LAYER => {}
                    BETWEEN_LAYERS => {
                        between.insert((x, y, z));
                    }
                    l => {
                        sets[l as usize].insert((x, y, z));
                    }
                }
                // layer conditions evaluated directly
                let nb = || WINDOW26.iter().map(|o| (x + o[0], y + o[1], z + o[2]));
                let touches_outside = nb().any(|(u, v, w)| !class_at(u, v, w).is_some_and(|c| c.is_inside()));
                let min_nb = nb().filter_map(|(u, v, w)| d_at(u, v, w)).fold(f64::INFINITY, f64::min);
                let satisfied: Vec<usize> = (0..layers)
                    .filter(|&k| {
                        inside
                            && d < params.d_max()
                            && if k == 0 { touches_outside } else { !touches_outside && params.level(k) <= d && min_nb < params.level(k) }
                    })
                    .collect();
                let want = satisfied.first().map(|&k| k as u8);
                let got = (l < BETWEEN_LAYERS).then_some(l);
                if want != got {
                    violations += 1;
                }
                if l == 0 && !touches_outside {
                    violations += 1;
                }
            }
        }
    }
    let mut overlaps = 0;
    for a in 0..layers {
        for b in a + 1..layers {
            overlaps += sets[a].intersection(&sets[b]).count();
        }
        overlaps += sets[a].intersection(&between).count();
    }
    let mut union: HashSet<_> = between.clone();
    for s in &sets {
        union.extend(s.iter().copied());
    }
    let covers = union == shell;
    let nonempty = sets.iter().all(|s| !s.is_empty());
    let pass = overlaps == 0 && covers && violations == 0 && nonempty;
    let sizes: Vec<usize> = sets.iter().map(|s| s.len()).collect();
    report(6, pass, format!("layer sizes {sizes:?}, {} between, {overlaps} overlaps, {violations} rule violations", between.len()));
    assert!(pass);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_adjacent_layers_are_decorrelated() {
    let _g = serial();
    let p = pitch();
    let (n, layers) = (104usize, 12usize);
    let thick = layers + 6;
    let spec = GridSpec::new([n + 2, n + 2, thick + 2], p, [0.0; 3]).unwrap();
    let mesh = Mesh::cuboid([p[0], p[1], p[2]], [(n + 1) as f64 * p[0], (n + 1) as f64 * p[1], (thick + 1) as f64 * p[2]]);
    let mut job = Job::new(mesh, spec, ColorInput::ConstantTonal(TonalVector::from_slice(&[0.5])));
    job.layers = layers;
    job.filter = FilterTable::zhou_fang();
    job.policy = TonalPolicy::identity();
    job.seed = 7;
    let mut sink = MemorySink::default();
    run(&job, &mut sink).unwrap();
    // layer k sits k slices below the top face, away from the side walls
    let top = thick;
    let margin = 2 + (layers as f64 * p[2] / p[0]).ceil() as usize;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut worst: f64 = 0.0;
    for k in 0..layers - 1 {
        let (s0, s1) = (&sink.slices[top - k].materials, &sink.slices[top - k - 1].materials);
        let (mut la, mut lb) = (Vec::new(), Vec::new());
        for y in 1 + margin..=n - margin {
            for x in 1 + margin..=n - margin {
                la.push(*s0.get(x, y) == 1);
                lb.push(*s1.get(x, y) == 1);
            }
        }
        worst = worst.max(bits_corr(&la, &lb).abs());
        a.extend(la);
        b.extend(lb);
    }
    let c = bits_corr(&a, &b);
    let pass = c.abs() < 0.05 && a.len() >= 10_000;
    report(7, pass, format!("correlation {c:.4} over {} pairs, worst layer pair {worst:.4}", a.len()));
    assert!(pass);
}

// ---------------------------------------------------------------- 8

fn tree_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn peak_bytes_for_column(slices: usize) -> usize {
    let p = pitch();
    let n = 48;
    let spec = GridSpec::new([n + 2, n + 2, slices + 2], p, [0.0; 3]).unwrap();
    let mesh = Mesh::cuboid([p[0], p[1], p[2]], [(n + 1) as f64 * p[0], (n + 1) as f64 * p[1], (slices + 1) as f64 * p[2]]);
    let mut job = Job::new(mesh, spec, ColorInput::ConstantTonal(TonalVector::splat(3, 0.3)));
    job.chunk_slices = 64;
    job.metrics = false;
    job.filter = FilterTable::zhou_fang();
    let base = CURRENT.load(Ordering::SeqCst);
    PEAK.store(base, Ordering::SeqCst);
    let mut sink = DigestSink::default();
    run(&job, &mut sink).unwrap();
    PEAK.load(Ordering::SeqCst) - base
}

#[test]
fn criterion_8_deterministic_and_streaming() {
    let _g = serial();
    let mesh = sphere(44.0);
    let spec = grid_for_mesh(&mesh, DEFAULT_DPI).unwrap();
    let nz = spec.nz();
    assert!(nz > 128, "model must span several chunks");
    let color = ColorInput::TonalFn(Arc::new(|v: voxtone::grid::VoxelCoord| {
        let f = |k: usize, m: usize| (k % m) as f64 / (m - 1) as f64;
        TonalVector::from_slice(&[f(v.x, 37), f(v.y, 23), f(v.z, 53)])
    }));
    let runs = [(nz, true), (128, true), (64, true), (64, false)];
    let tmp = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for (i, &(chunk, par)) in runs.iter().enumerate() {
        let mut job = Job::new(mesh.clone(), spec, color.clone());
        job.chunk_slices = chunk;
        job.parallel_layers = par;
        job.filter = FilterTable::zhou_fang();
        job.policy = TonalPolicy::default();
        job.seed = 1234;
        let dir = tmp.path().join(format!("run{i}"));
        let mut sink = DirectorySink::create(&dir, 3).unwrap();
        run(&job, &mut sink).unwrap();
        trees.push(tree_bytes(&dir));
    }
    let identical = trees.iter().all(|t| *t == trees[0]);
    let files = trees[0].len();

    let small = peak_bytes_for_column(150);
    let large = peak_bytes_for_column(300);
    let growth = large as f64 / small as f64 - 1.0;
    let pass = identical && files == nz + 1 && growth < 0.10;
    report(
        8,
        pass,
        format!("{files} files identical over chunks {{full,128,64}} and serial layers: {identical}; peak {small} -> {large} bytes ({:+.1}%)", growth * 100.0),
    );
    assert!(identical);
    assert_eq!(files, nz + 1);
    assert!(growth < 0.10, "peak grew {growth}");
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_demichel_matches_monte_carlo() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vectors: Vec<TonalVector> = (0..1000)
        .map(|_| {
            let n = rng.gen_range(1..=4);
            TonalVector::from_slice(&(0..n).map(|_| rng.gen::<f64>()).collect::<Vec<_>>())
        })
        .collect();
    let results: Vec<(f64, f64)> = vectors
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let f = demichel_fractions(t);
            let sum_err = (f.iter().sum::<f64>() - 1.0).abs();
            let n = t.channels();
            let thresholds: Vec<u32> = t.as_slice().iter().map(|&g| (g * 4294967296.0).min(4294967295.0) as u32).collect();
            let mut mc = vec![0.0; n + 1];
            let mut r = ChaCha8Rng::seed_from_u64(1000 + i as u64);
            let samples = 1_000_000;
            let mut on = [false; 4];
            for _ in 0..samples {
                let mut k = 0;
                for c in 0..n {
                    on[c] = r.gen::<u32>() < thresholds[c];
                    k += on[c] as usize;
                }
                if k == 0 {
                    mc[n] += 1.0;
                } else {
                    let share = 1.0 / k as f64;
                    for c in 0..n {
                        if on[c] {
                            mc[c] += share;
                        }
                    }
                }
            }
            let dev = f.iter().zip(&mc).map(|(a, b)| (a - b / samples as f64).abs()).fold(0.0, f64::max);
            (sum_err, dev)
        })
        .collect();
    let max_sum = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let max_dev = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let pass = max_sum < 1e-12 && max_dev < 0.003;
    report(9, pass, format!("max |sum - 1| {max_sum:.2e}, max Monte-Carlo deviation {max_dev:.5}"));
    assert!(pass);
}
