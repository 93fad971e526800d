//! Mesh voxelization: per-slice interior/surface classification by parity
//! ray casting, and color sampling onto surface voxels.

pub mod mesh;
pub mod texture;

pub use mesh::Mesh;
pub use texture::{ColorSpace, MipLevel, TextureImage};

use mesh::{cross, dot, sub};

use crate::error::{Error, Result};
use crate::grid::{ClassPlane, GridSpec, Plane, VoxelClass, VoxelCoord, WINDOW26};

/// Where surface colors come from.
#[derive(Debug, Clone, Copy)]
pub enum ColorSource<'a> {
    Texture(&'a TextureImage),
    VertexColors,
    /// Uniform color, bypasses mesh attributes.
    Constant([f64; 3]),
}

/// Per-slice colors, defined exactly on surface voxels.
pub type SurfaceColorField = Plane<Option<[f64; 3]>>;

#[derive(Debug, Clone, Copy, Default)]
pub struct SampleOptions {
    /// Force a mip level instead of the footprint-derived one.
    pub lod_override: Option<f64>,
}

/// Sorted z-crossings of the vertical line through every column center.
#[derive(Debug, Clone)]
struct ColumnCrossings {
    nx: usize,
    offsets: Vec<u32>,
    z: Vec<f64>,
}

impl ColumnCrossings {
    fn build(mesh: &Mesh, spec: &GridSpec, eps: f64) -> Result<Self> {
        let (nx, ny) = (spec.nx(), spec.ny());
        let mut lists: Vec<Vec<f64>> = vec![Vec::new(); nx * ny];
        // Irrational-ish direction for the origin perturbation.
        let (ex, ey) = (eps * 0.5377, eps * 0.8431);
        for ti in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.triangle(ti);
            let area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            if area2 == 0.0 {
                continue;
            }
            let xmin = a[0].min(b[0]).min(c[0]);
            let xmax = a[0].max(b[0]).max(c[0]);
            let ymin = a[1].min(b[1]).min(c[1]);
            let ymax = a[1].max(b[1]).max(c[1]);
            let ix0 = (((xmin - spec.origin[0]) / spec.pitch[0]) - 0.5).floor().max(0.0) as usize;
            let ix1 = ((((xmax - spec.origin[0]) / spec.pitch[0]) - 0.5).ceil().max(0.0) as usize).min(nx.saturating_sub(1));
            let iy0 = (((ymin - spec.origin[1]) / spec.pitch[1]) - 0.5).floor().max(0.0) as usize;
            let iy1 = ((((ymax - spec.origin[1]) / spec.pitch[1]) - 0.5).ceil().max(0.0) as usize).min(ny.saturating_sub(1));
            if xmax < spec.origin[0] || ymax < spec.origin[1] {
                continue;
            }
            for iy in iy0..=iy1 {
                let py = spec.origin[1] + (iy as f64 + 0.5) * spec.pitch[1] + ey;
                for ix in ix0..=ix1 {
                    let px = spec.origin[0] + (ix as f64 + 0.5) * spec.pitch[0] + ex;
                    let w0 = (b[0] - px) * (c[1] - py) - (b[1] - py) * (c[0] - px);
                    let w1 = (c[0] - px) * (a[1] - py) - (c[1] - py) * (a[0] - px);
                    let w2 = (a[0] - px) * (b[1] - py) - (a[1] - py) * (b[0] - px);
                    let inside = if area2 > 0.0 { w0 > 0.0 && w1 > 0.0 && w2 > 0.0 } else { w0 < 0.0 && w1 < 0.0 && w2 < 0.0 };
                    if inside {
                        let z = (w0 * a[2] + w1 * b[2] + w2 * c[2]) / area2;
                        lists[iy * nx + ix].push(z);
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(nx * ny + 1);
        let mut z = Vec::new();
        offsets.push(0);
        for (i, mut l) in lists.into_iter().enumerate() {
            // +z and -z casts disagree exactly when the total is odd
            if l.len() % 2 == 1 {
                return Err(Error::NonWatertightMesh { x: i % nx, y: i / nx });
            }
            l.sort_by(f64::total_cmp);
            z.extend_from_slice(&l);
            offsets.push(z.len() as u32);
        }
        Ok(Self { nx, offsets, z })
    }

    /// Parity of crossings strictly above `zc` along the column.
    #[inline]
    fn inside(&self, x: usize, y: usize, zc: f64) -> bool {
        let i = y * self.nx + x;
        let col = &self.z[self.offsets[i] as usize..self.offsets[i + 1] as usize];
        let below = col.partition_point(|&z| z <= zc);
        (col.len() - below) % 2 == 1
    }
}

/// Mesh prepared for slice-by-slice classification and color lookup.
#[derive(Debug, Clone)]
pub struct Voxelizer<'m> {
    mesh: &'m Mesh,
    spec: GridSpec,
    crossings: ColumnCrossings,
    /// `(zmin, zmax, triangle)` sorted by `zmin`.
    by_zmin: Vec<(f64, f64, u32)>,
    max_z_extent: f64,
}

impl<'m> Voxelizer<'m> {
    pub fn new(mesh: &'m Mesh, spec: &GridSpec) -> Result<Self> {
        mesh.validate()?;
        let diag = mesh
            .bounds()
            .map(|(lo, hi)| ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt())
            .unwrap_or(1.0);
        let crossings = ColumnCrossings::build(mesh, spec, 1e-9 * diag.max(f64::MIN_POSITIVE))?;
        let mut by_zmin: Vec<(f64, f64, u32)> = (0..mesh.triangles.len())
            .map(|i| {
                let [a, b, c] = mesh.triangle(i);
                (a[2].min(b[2]).min(c[2]), a[2].max(b[2]).max(c[2]), i as u32)
            })
            .collect();
        by_zmin.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.2.cmp(&q.2)));
        let max_z_extent = by_zmin.iter().map(|t| t.1 - t.0).fold(0.0, f64::max);
        Ok(Self { mesh, spec: *spec, crossings, by_zmin, max_z_extent })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    /// Triangles whose z-extent overlaps `[lo, hi]`, in index order.
    pub fn triangles_in_z(&self, lo: f64, hi: f64) -> Vec<u32> {
        let end = self.by_zmin.partition_point(|t| t.0 <= hi);
        let start = self.by_zmin.partition_point(|t| t.0 < lo - self.max_z_extent);
        let mut out: Vec<u32> = self.by_zmin[start..end].iter().filter(|t| t.1 >= lo).map(|t| t.2).collect();
        out.sort_unstable();
        out
    }

    /// Voxel centers of slice `s` with odd crossing parity.
    pub fn interior_plane(&self, s: usize) -> Plane<bool> {
        let (nx, ny) = (self.spec.nx(), self.spec.ny());
        let zc = self.spec.slice_z(s);
        let mut data = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                data.push(self.crossings.inside(x, y, zc));
            }
        }
        Plane::from_vec(nx, ny, data)
    }

    /// Label slice `s`: Interior by parity; Surface if interior and either a
    /// 26-neighbor is exterior (or off-grid) or the cell meets a triangle.
    pub fn classify_slice(&self, s: usize) -> Result<ClassPlane> {
        if s >= self.spec.nz() {
            return Err(Error::Config(format!("slice {s} out of range 0..{}", self.spec.nz())));
        }
        let (nx, ny) = (self.spec.nx(), self.spec.ny());
        let below = (s > 0).then(|| self.interior_plane(s - 1));
        let here = self.interior_plane(s);
        let above = (s + 1 < self.spec.nz()).then(|| self.interior_plane(s + 1));
        let layers = [below.as_ref(), Some(&here), above.as_ref()];
        let inside_at = |x: i64, y: i64, dz: i64| -> bool {
            match layers[(dz + 1) as usize] {
                Some(p) => p.get_signed(x, y).copied().unwrap_or(false),
                None => false,
            }
        };
        let mut plane = ClassPlane::filled(nx, ny, VoxelClass::Exterior);
        for y in 0..ny {
            for x in 0..nx {
                if !*here.get(x, y) {
                    continue;
                }
                let touches_outside = WINDOW26.iter().any(|&[dx, dy, dz]| !inside_at(x as i64 + dx, y as i64 + dy, dz));
                *plane.get_mut(x, y) = if touches_outside { VoxelClass::Surface } else { VoxelClass::Interior };
            }
        }
        self.mark_triangle_cells(s, &mut plane);
        Ok(plane)
    }

    fn mark_triangle_cells(&self, s: usize, plane: &mut ClassPlane) {
        let p = self.spec.pitch;
        let zc = self.spec.slice_z(s);
        let half = [0.5 * p[0] * (1.0 - 1e-9), 0.5 * p[1] * (1.0 - 1e-9), 0.5 * p[2] * (1.0 - 1e-9)];
        for ti in self.triangles_in_z(zc - 0.5 * p[2], zc + 0.5 * p[2]) {
            let tri = self.mesh.triangle(ti as usize);
            let (x0, x1) = self.cell_range(0, tri);
            let (y0, y1) = self.cell_range(1, tri);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if *plane.get(x, y) != VoxelClass::Interior {
                        continue;
                    }
                    let c = self.spec.center(VoxelCoord::new(x, y, s));
                    if tri_box_overlap(c, half, tri) {
                        *plane.get_mut(x, y) = VoxelClass::Surface;
                    }
                }
            }
        }
    }

    fn cell_range(&self, axis: usize, tri: [[f64; 3]; 3]) -> (usize, usize) {
        let n = self.spec.dims[axis];
        let lo = tri[0][axis].min(tri[1][axis]).min(tri[2][axis]);
        let hi = tri[0][axis].max(tri[1][axis]).max(tri[2][axis]);
        let to_idx = |v: f64| ((v - self.spec.origin[axis]) / self.spec.pitch[axis]).floor();
        let a = to_idx(lo).clamp(0.0, (n - 1) as f64) as usize;
        let b = to_idx(hi).clamp(0.0, (n - 1) as f64) as usize;
        (a, b)
    }

    /// Color at the closest mesh point for every surface voxel of slice `s`.
    pub fn sample_surface_colors(
        &self,
        source: ColorSource<'_>,
        class_plane: &ClassPlane,
        s: usize,
        opts: SampleOptions,
    ) -> Result<SurfaceColorField> {
        let (nx, ny) = (class_plane.nx(), class_plane.ny());
        let mut out = Plane::filled(nx, ny, None);
        match source {
            ColorSource::Texture(_) if !self.mesh.has_uv() => return Err(Error::MissingColorSource),
            ColorSource::VertexColors if self.mesh.vertex_colors.is_none() => return Err(Error::MissingColorSource),
            ColorSource::Constant(c) => {
                for y in 0..ny {
                    for x in 0..nx {
                        if class_plane.get(x, y).is_surface() {
                            *out.get_mut(x, y) = Some(c);
                        }
                    }
                }
                return Ok(out);
            }
            _ => {}
        }
        let p = self.spec.pitch;
        let reach = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let zc = self.spec.slice_z(s);
        let mut bucket = self.triangles_in_z(zc - reach, zc + reach);
        if bucket.is_empty() {
            bucket = (0..self.mesh.triangles.len() as u32).collect();
        }
        let tris: Vec<([[f64; 3]; 3], [f64; 3], [f64; 3])> = bucket
            .iter()
            .map(|&t| {
                let tri = self.mesh.triangle(t as usize);
                let mut lo = tri[0];
                let mut hi = tri[0];
                for v in &tri[1..] {
                    for a in 0..3 {
                        lo[a] = lo[a].min(v[a]);
                        hi[a] = hi[a].max(v[a]);
                    }
                }
                (tri, lo, hi)
            })
            .collect();
        let voxel_size = (p[0] * p[1] * p[2]).cbrt();
        for y in 0..ny {
            for x in 0..nx {
                if !class_plane.get(x, y).is_surface() {
                    continue;
                }
                let q = self.spec.center(VoxelCoord::new(x, y, s));
                let mut best = (f64::INFINITY, 0usize, [0.0; 3]);
                for (k, (tri, lo, hi)) in tris.iter().enumerate() {
                    let mut box_d2 = 0.0;
                    for a in 0..3 {
                        let d = (lo[a] - q[a]).max(q[a] - hi[a]).max(0.0);
                        box_d2 += d * d;
                    }
                    if box_d2 >= best.0 {
                        continue;
                    }
                    let (pt, bary) = closest_point_on_triangle(q, *tri);
                    let d = sub(pt, q);
                    let d2 = dot(d, d);
                    if d2 < best.0 {
                        best = (d2, k, bary);
                    }
                }
                let ti = bucket[best.1] as usize;
                let bary = best.2;
                let color = match source {
                    ColorSource::VertexColors => {
                        let cols = self.mesh.vertex_colors.as_ref().expect("checked above");
                        let t = self.mesh.triangles[ti];
                        let mut c = [0.0; 3];
                        for k in 0..3 {
                            for ch in 0..3 {
                                c[ch] += bary[k] * cols[t[k] as usize][ch];
                            }
                        }
                        c
                    }
                    ColorSource::Texture(tex) => {
                        let t = self.mesh.tex_triangles[ti];
                        let uv = t.map(|i| self.mesh.tex_coords[i as usize]);
                        let u = bary[0] * uv[0][0] + bary[1] * uv[1][0] + bary[2] * uv[2][0];
                        let v = bary[0] * uv[0][1] + bary[1] * uv[1][1] + bary[2] * uv[2][1];
                        let lod = opts.lod_override.unwrap_or_else(|| {
                            level_of_detail(self.mesh.triangle(ti), uv, tex.width(), tex.height(), voxel_size)
                        });
                        tex.sample(u, v, lod)
                    }
                    ColorSource::Constant(_) => unreachable!(),
                };
                *out.get_mut(x, y) = Some(color);
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper building a [`Voxelizer`] for a single slice.
pub fn classify_slice(mesh: &Mesh, spec: &GridSpec, s: usize) -> Result<ClassPlane> {
    Voxelizer::new(mesh, spec)?.classify_slice(s)
}

/// `log2` of how many level-0 texels one voxel spans on this triangle.
pub fn level_of_detail(tri: [[f64; 3]; 3], uv: [[f64; 2]; 3], width: usize, height: usize, voxel_size: f64) -> f64 {
    let n = cross(sub(tri[1], tri[0]), sub(tri[2], tri[0]));
    let world_area = 0.5 * dot(n, n).sqrt();
    let du1 = [(uv[1][0] - uv[0][0]) * width as f64, (uv[1][1] - uv[0][1]) * height as f64];
    let du2 = [(uv[2][0] - uv[0][0]) * width as f64, (uv[2][1] - uv[0][1]) * height as f64];
    let texel_area = 0.5 * (du1[0] * du2[1] - du1[1] * du2[0]).abs();
    if world_area <= 0.0 || texel_area <= 0.0 {
        return 0.0;
    }
    let texels_per_mm = (texel_area / world_area).sqrt();
    (texels_per_mm * voxel_size).max(1e-12).log2().max(0.0)
}

/// Closest point on a triangle and its barycentric coordinates.
pub fn closest_point_on_triangle(p: [f64; 3], tri: [[f64; 3]; 3]) -> ([f64; 3], [f64; 3]) {
    let [a, b, c] = tri;
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (lerp3(a, ab, v), [1.0 - v, v, 0.0]);
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (lerp3(a, ac, w), [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (lerp3(b, sub(c, b), w), [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let pt = [a[0] + ab[0] * v + ac[0] * w, a[1] + ab[1] * v + ac[1] * w, a[2] + ab[2] * v + ac[2] * w];
    (pt, [1.0 - v - w, v, w])
}

#[inline]
fn lerp3(a: [f64; 3], d: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + d[0] * t, a[1] + d[1] * t, a[2] + d[2] * t]
}

/// Separating-axis triangle/box overlap test.
pub fn tri_box_overlap(center: [f64; 3], half: [f64; 3], tri: [[f64; 3]; 3]) -> bool {
    let v = tri.map(|p| sub(p, center));
    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];
    // 9 edge cross-axis tests
    for edge in &e {
        for axis in 0..3 {
            let mut a = [0.0; 3];
            a[axis] = 1.0;
            let ax = cross(a, *edge);
            let p = v.map(|q| dot(q, ax));
            let r = half[0] * ax[0].abs() + half[1] * ax[1].abs() + half[2] * ax[2].abs();
            let lo = p[0].min(p[1]).min(p[2]);
            let hi = p[0].max(p[1]).max(p[2]);
            if lo > r || hi < -r {
                return false;
            }
        }
    }
    for axis in 0..3 {
        let lo = v[0][axis].min(v[1][axis]).min(v[2][axis]);
        let hi = v[0][axis].max(v[1][axis]).max(v[2][axis]);
        if lo > half[axis] || hi < -half[axis] {
            return false;
        }
    }
    let n = cross(e[0], e[1]);
    let d = dot(n, v[0]);
    let r = half[0] * n[0].abs() + half[1] * n[1].abs() + half[2] * n[2].abs();
    d.abs() <= r
}
