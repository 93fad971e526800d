//! Distance field, tonal transfer into the shell, layer extraction, normals
//! and the in-slice distance-to-empty.

mod dte;
mod layers;
mod mask;
mod normals;
mod sweep;

use std::io::Write;
use std::path::Path;

pub use dte::{distance_to_empty, DistanceToEmptyPlane};
pub use layers::{extract_layers, extract_layers_slice, LayerParams, LayerPlane, LayerSet, Window3, BETWEEN_LAYERS, NO_LAYER};
pub use mask::{build_distance_mask, DistanceMask, MaskEntry, DEFAULT_MASK_BUDGET};
pub use normals::{normal_at, normals, FALLBACK_NORMAL};
pub use sweep::{d_null, sweep_slice, sweep_transfer, DistanceField, DistanceSlice, SurfaceSlice, SurfaceTonals, NO_SOURCE};

use crate::error::{Error, Result};
use crate::grid::Plane;

/// 16-bit binary PGM of a distance plane: `round(255 d / d_max)`, with
/// truncated voxels written as 65535.
pub fn write_distance_pgm(path: &Path, d: &Plane<f64>, d_max: f64) -> Result<()> {
    let mut buf = Vec::with_capacity(d.as_slice().len() * 2 + 32);
    write!(buf, "P5\n{} {}\n65535\n", d.nx(), d.ny()).expect("write to vec");
    for &v in d.as_slice() {
        let q: u16 = if v > d_max { u16::MAX } else { (255.0 * v / d_max).round() as u16 };
        buf.extend_from_slice(&q.to_be_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorsep::TonalVector;
    use crate::grid::{ClassPlane, GridSpec, VoxelClass, VoxelCoord};
    use crate::voxelize::{Mesh, Voxelizer};

    fn unit(n: [usize; 3]) -> GridSpec {
        GridSpec::new(n, [1.0; 3], [0.0; 3]).unwrap()
    }

    fn empty_volume(spec: &GridSpec) -> (Vec<ClassPlane>, Vec<Plane<TonalVector>>) {
        let c = vec![ClassPlane::filled(spec.nx(), spec.ny(), VoxelClass::Exterior); spec.nz()];
        let t = vec![Plane::filled(spec.nx(), spec.ny(), TonalVector::zeros(1)); spec.nz()];
        (c, t)
    }

    #[test]
    fn single_source_stamps_ball() {
        let spec = unit([9, 9, 9]);
        let (mut c, mut t) = empty_volume(&spec);
        *c[4].get_mut(4, 4) = VoxelClass::Surface;
        *t[4].get_mut(4, 4) = TonalVector::from_slice(&[0.7]);
        let mask = build_distance_mask(&spec, 2.0, 1000).unwrap();
        let f = sweep_transfer(&spec, &c, &t, &mask, 1);
        for z in 0..9 {
            for y in 0..9 {
                for x in 0..9 {
                    let v = VoxelCoord::new(x, y, z);
                    let dist = spec.offset_distance(x as i64 - 4, y as i64 - 4, z as i64 - 4);
                    if dist <= 2.0 {
                        assert_eq!(f.d(v), dist);
                        assert_eq!(f.tonal(v).get(0), 0.7);
                    } else {
                        assert_eq!(f.d(v), 4.0);
                        assert_eq!(f.slices[z].source.get(x, y), &NO_SOURCE);
                    }
                }
            }
        }
    }

    #[test]
    fn tie_goes_to_lower_scan_key() {
        let spec = unit([9, 3, 3]);
        let (mut c, mut t) = empty_volume(&spec);
        *c[1].get_mut(2, 1) = VoxelClass::Surface;
        *t[1].get_mut(2, 1) = TonalVector::from_slice(&[0.25]);
        *c[1].get_mut(6, 1) = VoxelClass::Surface;
        *t[1].get_mut(6, 1) = TonalVector::from_slice(&[0.75]);
        let mask = build_distance_mask(&spec, 3.0, 1000).unwrap();
        let f = sweep_transfer(&spec, &c, &t, &mask, 1);
        let mid = VoxelCoord::new(4, 1, 1);
        assert_eq!(f.d(mid), 2.0);
        assert_eq!(f.tonal(mid).get(0), 0.25);
    }

    #[test]
    fn distance_to_empty_examples() {
        let all_ext = ClassPlane::filled(6, 6, VoxelClass::Exterior);
        assert!(distance_to_empty(&all_ext).phi.as_slice().iter().all(|&p| p == 0));

        let mut sq = ClassPlane::filled(9, 9, VoxelClass::Exterior);
        for y in 2..7 {
            for x in 2..7 {
                *sq.get_mut(x, y) = VoxelClass::Interior;
            }
        }
        let dte = distance_to_empty(&sq);
        assert_eq!(dte.phi(4, 4), 3);
        assert_eq!(dte.phi(2, 4), 1);
        assert_eq!(dte.grad(2, 4), [2, 0]);
    }

    #[test]
    fn slice_border_counts_as_empty() {
        let full = ClassPlane::filled(5, 5, VoxelClass::Interior);
        let dte = distance_to_empty(&full);
        assert_eq!(dte.phi(0, 0), 1);
        assert_eq!(dte.phi(2, 2), 3);
    }

    fn slab(spec: &GridSpec, lo: [f64; 3], hi: [f64; 3]) -> Vec<ClassPlane> {
        let mesh = Mesh::cuboid(lo, hi);
        let vox = Voxelizer::new(&mesh, spec).unwrap();
        (0..spec.nz()).map(|s| vox.classify_slice(s).unwrap()).collect()
    }

    #[test]
    fn slab_layers_are_voxel_sheets() {
        // 20x20x12 slab inside a padded grid, isotropic pitch equal to tau
        let spec = unit([24, 24, 16]);
        let classes = slab(&spec, [2.0, 2.0, 2.0], [22.0, 22.0, 14.0]);
        let tonals = vec![Plane::filled(24, 24, TonalVector::zeros(1)); 16];
        let params = LayerParams::new(4, 1.0).unwrap();
        let mask = build_distance_mask(&spec, params.d_max(), 100_000).unwrap();
        let field = sweep_transfer(&spec, &classes, &tonals, &mask, 1);
        let layers = extract_layers(&field, &classes, params);
        for z in 2..14 {
            for y in 2..22 {
                for x in 2..22 {
                    // depth of the voxel below the nearest face, in voxels
                    let depth = [x - 2, 21 - x, y - 2, 21 - y, z - 2, 13 - z].into_iter().min().unwrap();
                    let expect = if depth < 4 { depth as u8 } else { NO_LAYER };
                    assert_eq!(layers.label(x, y, z), expect, "at {x},{y},{z}");
                }
            }
        }
    }

    #[test]
    fn slab_face_normals() {
        let spec = unit([12, 12, 12]);
        let classes = slab(&spec, [2.0; 3], [10.0; 3]);
        let tonals = vec![Plane::filled(12, 12, TonalVector::zeros(1)); 12];
        let params = LayerParams::new(3, 1.0).unwrap();
        let mask = build_distance_mask(&spec, params.d_max(), 100_000).unwrap();
        let field = sweep_transfer(&spec, &classes, &tonals, &mask, 1);
        let layers = extract_layers(&field, &classes, params);
        let (n, _) = normals(&spec, &field, &classes, &layers);
        let top = n[9].get(5, 5).unwrap();
        let bottom = n[2].get(5, 5).unwrap();
        for (a, b) in top.iter().zip([0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in bottom.iter().zip([0.0, 0.0, -1.0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sweep_matches_brute_force_on_random_sources() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let spec = GridSpec::new([20, 18, 16], [0.5, 0.6, 0.8], [0.0; 3]).unwrap();
        let (mut c, mut t) = empty_volume(&spec);
        let mut surf = Vec::new();
        for _ in 0..60 {
            let v = VoxelCoord::new(rng.gen_range(0..20), rng.gen_range(0..18), rng.gen_range(0..16));
            *c[v.z].get_mut(v.x, v.y) = VoxelClass::Surface;
            *t[v.z].get_mut(v.x, v.y) = TonalVector::from_slice(&[rng.gen::<f64>()]);
            surf.push(v);
        }
        surf.sort_by_key(|v| spec.scan_key(*v));
        surf.dedup();
        let d_max = 2.1;
        let mask = build_distance_mask(&spec, d_max, 100_000).unwrap();
        let f = sweep_transfer(&spec, &c, &t, &mask, 1);
        for z in 0..16 {
            for y in 0..18 {
                for x in 0..20 {
                    let mut best: Option<(f64, VoxelCoord)> = None;
                    for s in &surf {
                        let dist = spec.offset_distance(x as i64 - s.x as i64, y as i64 - s.y as i64, z as i64 - s.z as i64);
                        if dist <= d_max && best.map_or(true, |(bd, _)| dist < bd) {
                            best = Some((dist, *s));
                        }
                    }
                    let v = VoxelCoord::new(x, y, z);
                    match best {
                        Some((bd, s)) => {
                            assert_eq!(f.d(v), bd);
                            assert_eq!(f.tonal(v).get(0), t[s.z].get(s.x, s.y).get(0));
                        }
                        None => assert_eq!(f.d(v), d_null(d_max)),
                    }
                }
            }
        }
    }

    #[test]
    fn distance_to_empty_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (nx, ny) = (64usize, 64usize);
        let cells: Vec<VoxelClass> = (0..nx * ny)
            .map(|_| if rng.gen_bool(0.9) { VoxelClass::Interior } else { VoxelClass::Exterior })
            .collect();
        let plane = ClassPlane::from_vec(nx, ny, cells);
        let dte = distance_to_empty(&plane);
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                let mut best = (x + 1).min(y + 1).min(nx as i64 - x).min(ny as i64 - y);
                for v in 0..ny as i64 {
                    for u in 0..nx as i64 {
                        if !plane.get(u as usize, v as usize).is_inside() {
                            best = best.min((u - x).abs() + (v - y).abs());
                        }
                    }
                }
                assert_eq!(dte.phi(x as usize, y as usize) as i64, best, "at {x},{y}");
            }
        }
    }

    #[test]
    fn sphere_layers_partition_shell_and_normals_point_out() {
        let spec = unit([48, 48, 48]);
        let mesh = Mesh::uv_sphere([24.0; 3], 20.0, 64, 32);
        let vox = Voxelizer::new(&mesh, &spec).unwrap();
        let classes: Vec<ClassPlane> = (0..48).map(|s| vox.classify_slice(s).unwrap()).collect();
        let tonals = vec![Plane::filled(48, 48, TonalVector::zeros(1)); 48];
        let params = LayerParams::new(12, 1.0).unwrap();
        let mask = build_distance_mask(&spec, params.d_max(), 100_000).unwrap();
        let field = sweep_transfer(&spec, &classes, &tonals, &mask, 1);
        let layers = extract_layers(&field, &classes, params);
        let (n, _) = normals(&spec, &field, &classes, &layers);
        // (angle sum, count) for the surface sheet and for layers >= 2
        let mut surface = (0.0, 0usize);
        let mut deep = (0.0, 0usize);
        for z in 0..48 {
            for y in 0..48 {
                for x in 0..48 {
                    let inside = classes[z].get(x, y).is_inside();
                    let shell = inside && field.slices[z].d.get(x, y) < &params.d_max();
                    let l = layers.label(x, y, z);
                    assert_eq!(shell, l != NO_LAYER, "at {x},{y},{z}");
                    if (l as usize) >= params.layers {
                        continue;
                    }
                    let c = spec.center(VoxelCoord::new(x, y, z));
                    let r: Vec<f64> = (0..3).map(|i| c[i] - 24.0).collect();
                    let len = r.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let nv = n[z].get(x, y).unwrap();
                    let cos = (0..3).map(|i| nv[i] * r[i] / len).sum::<f64>();
                    let e = cos.clamp(-1.0, 1.0).acos().to_degrees();
                    let acc = if l == 0 { &mut surface } else if l >= 2 { &mut deep } else { continue };
                    acc.0 += e;
                    acc.1 += 1;
                }
            }
        }
        assert!(layers.layer_sizes().iter().all(|&s| s > 0));
        // the surface sheet sits on a zero plateau two voxels thick, which
        // quantizes central differences; deeper sheets see a smooth field
        let mean = |a: (f64, usize)| a.0 / a.1 as f64;
        assert!(mean(surface) < 30.0, "surface mean angular error {}", mean(surface));
        assert!(mean(deep) < 10.0, "deep mean angular error {}", mean(deep));
    }

    #[test]
    fn distance_pgm_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pgm");
        let plane = Plane::from_vec(2, 1, vec![0.5, 9.0]);
        write_distance_pgm(&p, &plane, 1.0).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n2 1\n65535\n"));
        let tail = &bytes[bytes.len() - 4..];
        assert_eq!(tail, &[0, 128, 255, 255]);
    }
}
