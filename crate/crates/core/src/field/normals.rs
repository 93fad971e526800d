use super::layers::{LayerSet, Window3};
use super::sweep::DistanceField;
use crate::grid::{ClassPlane, GridSpec, Plane, VoxelClass};

/// Normal used where the signed distance has no gradient.
pub const FALLBACK_NORMAL: [f64; 3] = [0.0, 0.0, 1.0];

/// Outward unit normal at `v` from central differences of the signed
/// distance (negative inside). Truncated (`d_null`) or off-grid neighbors
/// fall back to one-sided differences. Returns `None` on a zero gradient.
pub fn normal_at(
    spec: &GridSpec,
    x: usize,
    y: usize,
    d: Window3<'_, f64>,
    class: Window3<'_, VoxelClass>,
    d_null: f64,
) -> Option<[f64; 3]> {
    let signed = |dx: i64, dy: i64, dz: i64| -> Option<f64> {
        let p = d[(dz + 1) as usize]?;
        let c = class[(dz + 1) as usize]?;
        let (ux, uy) = (x as i64 + dx, y as i64 + dy);
        let du = *p.get_signed(ux, uy)?;
        if du >= d_null {
            return None;
        }
        let inside = c.get_signed(ux, uy)?.is_inside();
        Some(if inside { -du } else { du })
    };
    let center = signed(0, 0, 0)?;
    let mut g = [0.0; 3];
    for axis in 0..3 {
        let mut step = [0i64; 3];
        step[axis] = 1;
        let plus = signed(step[0], step[1], step[2]);
        let minus = signed(-step[0], -step[1], -step[2]);
        let h = spec.pitch[axis];
        g[axis] = match (plus, minus) {
            (Some(p), Some(m)) => (p - m) / (2.0 * h),
            (Some(p), None) => (p - center) / h,
            (None, Some(m)) => (center - m) / h,
            (None, None) => 0.0,
        };
    }
    let len = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    (len > 0.0).then(|| g.map(|c| c / len))
}

/// Normals on every layer voxel of an in-memory volume, plus the number of
/// voxels that needed the fallback.
pub fn normals(spec: &GridSpec, field: &DistanceField, classes: &[ClassPlane], layers: &LayerSet) -> (Vec<Plane<Option<[f64; 3]>>>, usize) {
    let mut fallback = 0;
    let mut out = Vec::with_capacity(classes.len());
    for z in 0..classes.len() {
        let d = [z.checked_sub(1).map(|s| &field.slices[s].d), Some(&field.slices[z].d), field.slices.get(z + 1).map(|s| &s.d)];
        let c = [z.checked_sub(1).map(|s| &classes[s]), Some(&classes[z]), classes.get(z + 1)];
        let mut plane = Plane::filled(spec.nx(), spec.ny(), None);
        for y in 0..spec.ny() {
            for x in 0..spec.nx() {
                if (layers.label(x, y, z) as usize) >= layers.params.layers {
                    continue;
                }
                let n = normal_at(spec, x, y, d, c, field.d_null()).unwrap_or_else(|| {
                    fallback += 1;
                    FALLBACK_NORMAL
                });
                *plane.get_mut(x, y) = Some(n);
            }
        }
        out.push(plane);
    }
    (out, fallback)
}
