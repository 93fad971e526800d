use rayon::prelude::*;

use super::mask::DistanceMask;
use crate::colorsep::TonalVector;
use crate::grid::{ClassPlane, GridSpec, Plane, VoxelCoord};

/// Marker for voxels with no surface voxel within `d_max`.
pub const NO_SOURCE: u64 = u64::MAX;

/// Truncated distance, nearest surface voxel and transferred tonal values
/// for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSlice {
    pub z: usize,
    /// mm; `d_null` beyond `d_max`.
    pub d: Plane<f64>,
    /// Scan key of the nearest surface voxel, or [`NO_SOURCE`].
    pub source: Plane<u64>,
    /// Tonal value of the nearest surface voxel (zero where there is none).
    pub tonal: Plane<TonalVector>,
}

impl DistanceSlice {
    pub fn nearest_surface(&self, spec: &GridSpec, x: usize, y: usize) -> Option<VoxelCoord> {
        let k = *self.source.get(x, y);
        (k != NO_SOURCE).then(|| spec.coord_of_key(k))
    }
}

/// Tonal values of the surface voxels of one slice, sorted by in-slice
/// index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceTonals {
    nx: usize,
    entries: Vec<(u32, TonalVector)>,
}

impl SurfaceTonals {
    pub fn new(nx: usize) -> Self {
        Self { nx, entries: Vec::new() }
    }

    /// Pushes must come in increasing `(y, x)` order.
    pub fn push(&mut self, x: usize, y: usize, t: TonalVector) {
        let i = (y * self.nx + x) as u32;
        debug_assert!(self.entries.last().map_or(true, |e| e.0 < i));
        self.entries.push((i, t));
    }

    pub fn get(&self, x: usize, y: usize) -> Option<TonalVector> {
        let i = (y * self.nx + x) as u32;
        self.entries.binary_search_by_key(&i, |e| e.0).ok().map(|k| self.entries[k].1)
    }

    pub fn from_plane(class: &ClassPlane, tonal: &Plane<TonalVector>) -> Self {
        let mut out = Self::new(class.nx());
        for y in 0..class.ny() {
            for x in 0..class.nx() {
                if class.get(x, y).is_surface() {
                    out.push(x, y, *tonal.get(x, y));
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn byte_size(&self) -> usize {
        self.entries.len() * std::mem::size_of::<(u32, TonalVector)>()
    }
}

/// Surface classification and tonal values of one source slice.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSlice<'a> {
    pub class: &'a ClassPlane,
    pub tonal: &'a SurfaceTonals,
}

/// Value written where no surface voxel lies within `d_max`.
pub fn d_null(d_max: f64) -> f64 {
    2.0 * d_max
}

/// Compute distances and tonal transfer for target slice `z`.
///
/// Every surface voxel stamps the mask onto the target slice; a target keeps
/// the smallest `(distance, scan key)` pair, so ties go to the surface voxel
/// that comes first in z, y, x order regardless of evaluation order.
/// `source(s)` must return the surface data of slice `s` for every slice within
/// the mask's z reach of `z`.
pub fn sweep_slice<'a>(
    spec: &GridSpec,
    z: usize,
    mask: &DistanceMask,
    channels: usize,
    source: impl Fn(usize) -> Option<SurfaceSlice<'a>>,
) -> DistanceSlice {
    let (nx, ny) = (spec.nx(), spec.ny());
    let null = d_null(mask.d_max());
    let mut d = vec![null; nx * ny];
    let mut src = vec![NO_SOURCE; nx * ny];
    for (dz, entries) in mask.by_dz() {
        let sz = z as i64 - *dz as i64;
        if sz < 0 || sz >= spec.nz() as i64 {
            continue;
        }
        let sz = sz as usize;
        let Some(surf) = source(sz) else { continue };
        for y in 0..ny {
            for x in 0..nx {
                if !surf.class.get(x, y).is_surface() {
                    continue;
                }
                let key = spec.scan_key(VoxelCoord::new(x, y, sz));
                for e in entries {
                    let tx = x as i64 + e.offset[0] as i64;
                    let ty = y as i64 + e.offset[1] as i64;
                    if tx < 0 || ty < 0 || tx >= nx as i64 || ty >= ny as i64 {
                        continue;
                    }
                    let i = ty as usize * nx + tx as usize;
                    if e.dist < d[i] || (e.dist == d[i] && key < src[i]) {
                        d[i] = e.dist;
                        src[i] = key;
                    }
                }
            }
        }
    }
    let zero = TonalVector::zeros(channels);
    let tonal = src
        .iter()
        .map(|&k| {
            if k == NO_SOURCE {
                return zero;
            }
            let u = spec.coord_of_key(k);
            source(u.z).and_then(|s| s.tonal.get(u.x, u.y)).unwrap_or(zero)
        })
        .collect();
    DistanceSlice {
        z,
        d: Plane::from_vec(nx, ny, d),
        source: Plane::from_vec(nx, ny, src),
        tonal: Plane::from_vec(nx, ny, tonal),
    }
}

/// Whole-volume distance field.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub slices: Vec<DistanceSlice>,
    pub d_max: f64,
}

impl DistanceField {
    pub fn d_null(&self) -> f64 {
        d_null(self.d_max)
    }

    pub fn d(&self, v: VoxelCoord) -> f64 {
        *self.slices[v.z].d.get(v.x, v.y)
    }

    pub fn tonal(&self, v: VoxelCoord) -> TonalVector {
        *self.slices[v.z].tonal.get(v.x, v.y)
    }

    pub fn d_planes(&self) -> Vec<&Plane<f64>> {
        self.slices.iter().map(|s| &s.d).collect()
    }
}

/// Sweep the mask over every surface voxel of an in-memory volume.
pub fn sweep_transfer(
    spec: &GridSpec,
    classes: &[ClassPlane],
    tonals: &[Plane<TonalVector>],
    mask: &DistanceMask,
    channels: usize,
) -> DistanceField {
    assert_eq!(classes.len(), spec.nz());
    assert_eq!(tonals.len(), spec.nz());
    let sparse: Vec<SurfaceTonals> = classes.par_iter().zip(tonals).map(|(c, t)| SurfaceTonals::from_plane(c, t)).collect();
    let slices = (0..spec.nz())
        .into_par_iter()
        .map(|z| sweep_slice(spec, z, mask, channels, |s| Some(SurfaceSlice { class: &classes[s], tonal: &sparse[s] })))
        .collect();
    DistanceField { slices, d_max: mask.d_max() }
}
