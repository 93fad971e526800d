//! Triangle meshes: OBJ subset I/O and a few watertight primitives.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Watertight, outward-oriented triangle mesh in mm.
///
/// Texture coordinates are stored per triangle corner (`tex_triangles`
/// indexes `tex_coords`), which is what OBJ provides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub tex_coords: Vec<[f64; 2]>,
    pub tex_triangles: Vec<[u32; 3]>,
    pub vertex_colors: Option<Vec<[f64; 3]>>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let m = Self { vertices, triangles, ..Default::default() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len() as u32;
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= nv)) {
            return Err(Error::InvalidMesh(format!("triangle {t:?} indexes past {nv} vertices")));
        }
        if !self.tex_triangles.is_empty() {
            if self.tex_triangles.len() != self.triangles.len() {
                return Err(Error::InvalidMesh("texture corner count differs from triangle count".into()));
            }
            let nt = self.tex_coords.len() as u32;
            if self.tex_triangles.iter().any(|t| t.iter().any(|&i| i >= nt)) {
                return Err(Error::InvalidMesh("texture index out of range".into()));
            }
        }
        if let Some(c) = &self.vertex_colors {
            if c.len() != self.vertices.len() {
                return Err(Error::InvalidMesh("one vertex color per vertex required".into()));
            }
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        Ok(())
    }

    pub fn has_uv(&self) -> bool {
        !self.tex_triangles.is_empty()
    }

    pub fn with_vertex_colors(mut self, colors: Vec<[f64; 3]>) -> Result<Self> {
        self.vertex_colors = Some(colors);
        self.validate()?;
        Ok(self)
    }

    pub fn with_constant_color(self, rgb: [f64; 3]) -> Self {
        let n = self.vertices.len();
        Self { vertex_colors: Some(vec![rgb; n]), ..self }
    }

    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(mut lo, mut hi), v| {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
            (lo, hi)
        }))
    }

    pub fn triangle(&self, i: usize) -> [[f64; 3]; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]]
    }

    /// Signed enclosed volume; positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    pub fn translated(mut self, d: [f64; 3]) -> Self {
        for v in &mut self.vertices {
            for a in 0..3 {
                v[a] += d[a];
            }
        }
        self
    }

    /// Concatenate two meshes (e.g. two disjoint components).
    pub fn merged(mut self, other: &Mesh) -> Self {
        let off = self.vertices.len() as u32;
        let toff = self.tex_coords.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| t.map(|i| i + off)));
        self.tex_coords.extend_from_slice(&other.tex_coords);
        self.tex_triangles.extend(other.tex_triangles.iter().map(|t| t.map(|i| i + toff)));
        self.vertex_colors = match (self.vertex_colors.take(), &other.vertex_colors) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            _ => None,
        };
        self
    }

    /// Axis-aligned box.
    pub fn cuboid(lo: [f64; 3], hi: [f64; 3]) -> Self {
        let v = |i: usize| {
            [
                if i & 1 == 0 { lo[0] } else { hi[0] },
                if i & 2 == 0 { lo[1] } else { hi[1] },
                if i & 4 == 0 { lo[2] } else { hi[2] },
            ]
        };
        let vertices = (0..8).map(v).collect();
        let triangles = vec![
            [0, 2, 1], [1, 2, 3], // -z
            [4, 5, 6], [5, 7, 6], // +z
            [0, 1, 4], [1, 5, 4], // -y
            [2, 6, 3], [3, 6, 7], // +y
            [0, 4, 2], [2, 4, 6], // -x
            [1, 3, 5], [3, 7, 5], // +x
        ];
        Self { vertices, triangles, ..Default::default() }
    }

    /// Latitude/longitude sphere with shared poles.
    pub fn uv_sphere(center: [f64; 3], radius: f64, segments: usize, rings: usize) -> Self {
        let segments = segments.max(3);
        let rings = rings.max(2);
        let mut vertices = vec![[center[0], center[1], center[2] + radius]];
        for r in 1..rings {
            let theta = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..segments {
                let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                vertices.push([
                    center[0] + radius * theta.sin() * phi.cos(),
                    center[1] + radius * theta.sin() * phi.sin(),
                    center[2] + radius * theta.cos(),
                ]);
            }
        }
        vertices.push([center[0], center[1], center[2] - radius]);
        let south = (vertices.len() - 1) as u32;
        let ring = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
        let mut triangles = Vec::new();
        for s in 0..segments {
            triangles.push([0, ring(1, s), ring(1, s + 1)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b) = (ring(r, s), ring(r, s + 1));
                let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
        for s in 0..segments {
            triangles.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
        }
        Self { vertices, triangles, ..Default::default() }
    }

    /// Torus around the z axis.
    pub fn torus(center: [f64; 3], major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> Self {
        let nu = major_segments.max(3);
        let nv = minor_segments.max(3);
        let mut vertices = Vec::with_capacity(nu * nv);
        for i in 0..nu {
            let u = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
            for j in 0..nv {
                let v = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
                let r = major + minor * v.cos();
                vertices.push([center[0] + r * u.cos(), center[1] + r * u.sin(), center[2] + minor * v.sin()]);
            }
        }
        let idx = |i: usize, j: usize| ((i % nu) * nv + j % nv) as u32;
        let mut triangles = Vec::with_capacity(2 * nu * nv);
        for i in 0..nu {
            for j in 0..nv {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        Self { vertices, triangles, ..Default::default() }
    }

    /// Read the OBJ subset: `v x y z [r g b]`, `vt u v`, triangular `f`.
    pub fn read_obj(reader: impl BufRead) -> Result<Self> {
        let what = "OBJ";
        let mut mesh = Mesh::default();
        let mut colors: Vec<[f64; 3]> = Vec::new();
        let mut any_color = false;
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::parse(what, lineno, e.to_string()))?;
            let line = line.split('#').next().unwrap_or("").trim();
            let mut it = line.split_whitespace();
            let Some(tag) = it.next() else { continue };
            let rest: Vec<&str> = it.collect();
            let nums = |toks: &[&str]| -> Result<Vec<f64>> {
                toks.iter()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::parse(what, lineno, format!("bad number {t}"))))
                    .collect()
            };
            match tag {
                "v" => {
                    let vals = nums(&rest)?;
                    match vals.len() {
                        3 | 4 => {
                            mesh.vertices.push([vals[0], vals[1], vals[2]]);
                            colors.push([1.0; 3]);
                        }
                        6 => {
                            mesh.vertices.push([vals[0], vals[1], vals[2]]);
                            colors.push([vals[3], vals[4], vals[5]]);
                            any_color = true;
                        }
                        _ => return Err(Error::parse(what, lineno, "vertex needs 3 or 6 values")),
                    }
                }
                "vt" => {
                    let vals = nums(&rest)?;
                    if vals.len() < 2 {
                        return Err(Error::parse(what, lineno, "vt needs 2 values"));
                    }
                    mesh.tex_coords.push([vals[0], vals[1]]);
                }
                "f" => {
                    if rest.len() != 3 {
                        return Err(Error::parse(what, lineno, "only triangular faces are supported"));
                    }
                    let mut v = [0u32; 3];
                    let mut t = [0u32; 3];
                    let mut has_t = 0;
                    for (k, tok) in rest.iter().enumerate() {
                        let mut parts = tok.split('/');
                        let vi = parts.next().unwrap_or("");
                        v[k] = resolve_index(vi, mesh.vertices.len()).ok_or_else(|| Error::parse(what, lineno, format!("bad vertex index {vi}")))?;
                        if let Some(ti) = parts.next().filter(|s| !s.is_empty()) {
                            t[k] = resolve_index(ti, mesh.tex_coords.len()).ok_or_else(|| Error::parse(what, lineno, format!("bad texture index {ti}")))?;
                            has_t += 1;
                        }
                    }
                    match has_t {
                        0 => {}
                        3 => mesh.tex_triangles.push(t),
                        _ => return Err(Error::parse(what, lineno, "face mixes corners with and without vt")),
                    }
                    mesh.triangles.push(v);
                }
                _ => {}
            }
        }
        if !mesh.tex_triangles.is_empty() && mesh.tex_triangles.len() != mesh.triangles.len() {
            return Err(Error::InvalidMesh("some faces lack texture coordinates".into()));
        }
        if any_color {
            mesh.vertex_colors = Some(colors);
        }
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_obj(std::io::BufReader::new(f))
    }

    pub fn write_obj(&self, mut w: impl Write) -> std::io::Result<()> {
        for (i, v) in self.vertices.iter().enumerate() {
            match &self.vertex_colors {
                Some(c) => writeln!(w, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[i][0], c[i][1], c[i][2])?,
                None => writeln!(w, "v {} {} {}", v[0], v[1], v[2])?,
            }
        }
        for t in &self.tex_coords {
            writeln!(w, "vt {} {}", t[0], t[1])?;
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if self.has_uv() {
                let u = self.tex_triangles[i];
                writeln!(w, "f {}/{} {}/{} {}/{}", t[0] + 1, u[0] + 1, t[1] + 1, u[1] + 1, t[2] + 1, u[2] + 1)?;
            } else {
                writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
            }
        }
        Ok(())
    }
}

fn resolve_index(tok: &str, count: usize) -> Option<u32> {
    let i: i64 = tok.parse().ok()?;
    let idx = if i > 0 { i - 1 } else if i < 0 { count as i64 + i } else { return None };
    (0..count as i64).contains(&idx).then_some(idx as u32)
}

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
