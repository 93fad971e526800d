//! Voxel grid model: grid geometry, per-slice planes and neighborhood queries.
//!
//! A slice is the set of voxels sharing one `z` index. Everything downstream
//! stores per-slice data as dense row-major planes (`y * nx + x`).

use crate::error::{Error, Result};

/// Regular voxel grid covering the build box.
///
/// Voxel `(x, y, z)` spans `[origin + coord * pitch, origin + (coord + 1) * pitch)`;
/// distances between voxels are measured between centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    /// mm per voxel along each axis.
    pub pitch: [f64; 3],
    /// mm, lower corner of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], pitch: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("grid dims must be positive, got {dims:?}")));
        }
        if pitch.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Config(format!("grid pitch must be positive, got {pitch:?}")));
        }
        Ok(Self { dims, pitch, origin })
    }

    /// Pitch in mm from a printer resolution in dots per inch.
    pub fn pitch_from_dpi(dpi: [f64; 3]) -> [f64; 3] {
        dpi.map(|d| 25.4 / d)
    }

    /// Grid covering `[lo, hi]` with one voxel of exterior padding on every side.
    pub fn covering(lo: [f64; 3], hi: [f64; 3], pitch: [f64; 3]) -> Result<Self> {
        let mut dims = [0usize; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            let span = (hi[a] - lo[a]).max(0.0);
            let n = (span / pitch[a]).ceil() as usize + 2;
            dims[a] = n.max(1);
            // center the shape inside the padded box
            origin[a] = lo[a] - 0.5 * (n as f64 * pitch[a] - span);
        }
        Self::new(dims, pitch, origin)
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn voxel_count(&self) -> usize {
        self.plane_len() * self.dims[2]
    }

    /// Smallest pitch over the three axes (layer thickness).
    pub fn min_pitch(&self) -> f64 {
        self.pitch.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_pitch(&self) -> f64 {
        self.pitch.iter().copied().fold(0.0, f64::max)
    }

    pub fn center(&self, v: VoxelCoord) -> [f64; 3] {
        [
            self.origin[0] + (v.x as f64 + 0.5) * self.pitch[0],
            self.origin[1] + (v.y as f64 + 0.5) * self.pitch[1],
            self.origin[2] + (v.z as f64 + 0.5) * self.pitch[2],
        ]
    }

    /// Center z of slice `s` in mm.
    pub fn slice_z(&self, s: usize) -> f64 {
        self.origin[2] + (s as f64 + 0.5) * self.pitch[2]
    }

    pub fn contains(&self, v: VoxelCoord) -> bool {
        v.x < self.dims[0] && v.y < self.dims[1] && v.z < self.dims[2]
    }

    /// Global scan-order key: ascending z, then y, then x.
    #[inline]
    pub fn scan_key(&self, v: VoxelCoord) -> u64 {
        ((v.z as u64 * self.dims[1] as u64) + v.y as u64) * self.dims[0] as u64 + v.x as u64
    }

    pub fn coord_of_key(&self, key: u64) -> VoxelCoord {
        let nx = self.dims[0] as u64;
        let ny = self.dims[1] as u64;
        VoxelCoord::new((key % nx) as usize, ((key / nx) % ny) as usize, (key / (nx * ny)) as usize)
    }

    /// Physical distance between voxel centers separated by an integer offset.
    #[inline]
    pub fn offset_distance(&self, dx: i64, dy: i64, dz: i64) -> f64 {
        let fx = dx as f64 * self.pitch[0];
        let fy = dy as f64 * self.pitch[1];
        let fz = dz as f64 * self.pitch[2];
        (fx * fx + fy * fy + fz * fz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelCoord {
    pub x: usize,
    pub y: usize,
    /// Slice index.
    pub z: usize,
}

impl VoxelCoord {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }

    /// Offset by a signed delta, `None` if any component goes negative.
    pub fn offset(self, dx: i64, dy: i64, dz: i64) -> Option<Self> {
        let x = self.x as i64 + dx;
        let y = self.y as i64 + dy;
        let z = self.z as i64 + dz;
        (x >= 0 && y >= 0 && z >= 0).then(|| Self::new(x as usize, y as usize, z as usize))
    }
}

/// Exterior = outside the shape; Surface voxels are also interior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(u8)]
pub enum VoxelClass {
    #[default]
    Exterior = 0,
    Interior = 1,
    Surface = 2,
}

impl VoxelClass {
    /// Member of the shape (interior or surface).
    #[inline]
    pub fn is_inside(self) -> bool {
        !matches!(self, VoxelClass::Exterior)
    }

    #[inline]
    pub fn is_surface(self) -> bool {
        matches!(self, VoxelClass::Surface)
    }
}

/// Dense row-major 2D array over one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    nx: usize,
    ny: usize,
    data: Vec<T>,
}

impl<T: Clone> Plane<T> {
    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        Self { nx, ny, data: vec![value; nx * ny] }
    }
}

impl<T> Plane<T> {
    pub fn from_vec(nx: usize, ny: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), nx * ny, "plane data length mismatch");
        Self { nx, ny, data }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.nx + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.nx + x]
    }

    /// Signed lookup; `None` outside the plane.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> Option<&T> {
        if x < 0 || y < 0 || x >= self.nx as i64 || y >= self.ny as i64 {
            None
        } else {
            Some(&self.data[y as usize * self.nx + x as usize])
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Plane<U> {
        Plane { nx: self.nx, ny: self.ny, data: self.data.iter().map(f).collect() }
    }

    pub fn byte_size(&self) -> usize {
        self.data.len() * std::mem::size_of::<T>()
    }
}

pub type ClassPlane = Plane<VoxelClass>;

/// Offsets of the 3x3x3 window without the center, in scan order.
pub const WINDOW26: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut i = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[i] = [dx, dy, dz];
                    i += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

/// In-slice ring of 8 offsets, in scan order.
pub const RING8: [[i64; 2]; 8] =
    [[-1, -1], [0, -1], [1, -1], [-1, 0], [1, 0], [-1, 1], [0, 1], [1, 1]];

/// All in-bounds voxels of the 3x3x3 window around `v`, excluding `v`.
pub fn neighbors26(v: VoxelCoord, spec: &GridSpec) -> Vec<VoxelCoord> {
    WINDOW26
        .iter()
        .filter_map(|&[dx, dy, dz]| v.offset(dx, dy, dz))
        .filter(|u| spec.contains(*u))
        .collect()
}

/// Surface voxels among the 8 in-slice neighbors of `v`.
pub fn in_slice_neighbors(v: VoxelCoord, class_plane: &ClassPlane) -> Vec<VoxelCoord> {
    RING8
        .iter()
        .filter_map(|&[dx, dy]| {
            let x = v.x as i64 + dx;
            let y = v.y as i64 + dy;
            class_plane
                .get_signed(x, y)
                .filter(|c| c.is_surface())
                .map(|_| VoxelCoord::new(x as usize, y as usize, v.z))
        })
        .collect()
}

/// Resident window of consecutive slices.
///
/// The window holds `slices[i]` for slice index `first_slice + i`. Stages push
/// at the top and evict from the bottom so that the footprint depends on the
/// window length only, never on `nz`.
#[derive(Debug)]
pub struct SliceChunk<T> {
    first_slice: usize,
    halo_slices: usize,
    slices: std::collections::VecDeque<T>,
}

impl<T> SliceChunk<T> {
    pub fn new(first_slice: usize, halo_slices: usize) -> Self {
        Self { first_slice, halo_slices, slices: Default::default() }
    }

    pub fn first_slice(&self) -> usize {
        self.first_slice
    }

    pub fn halo_slices(&self) -> usize {
        self.halo_slices
    }

    pub fn slice_count(&self) -> usize {
        self.slices.len()
    }

    /// One past the highest resident slice.
    pub fn end_slice(&self) -> usize {
        self.first_slice + self.slices.len()
    }

    pub fn push(&mut self, slice: T) {
        self.slices.push_back(slice);
    }

    pub fn get(&self, s: usize) -> Option<&T> {
        s.checked_sub(self.first_slice).and_then(|i| self.slices.get(i))
    }

    pub fn get_mut(&mut self, s: usize) -> Option<&mut T> {
        s.checked_sub(self.first_slice).and_then(move |i| self.slices.get_mut(i))
    }

    /// Drop every slice below `s`.
    pub fn evict_below(&mut self, s: usize) {
        while self.first_slice < s && !self.slices.is_empty() {
            self.slices.pop_front();
            self.first_slice += 1;
        }
        if self.slices.is_empty() && self.first_slice < s {
            self.first_slice = s;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &T)> {
        self.slices.iter().enumerate().map(move |(i, t)| (self.first_slice + i, t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &mut T)> {
        let first = self.first_slice;
        self.slices.iter_mut().enumerate().map(move |(i, t)| (first + i, t))
    }
}
