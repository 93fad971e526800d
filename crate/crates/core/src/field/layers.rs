use super::sweep::{d_null, DistanceField};
use crate::error::{Error, Result};
use crate::grid::{ClassPlane, GridSpec, Plane, WINDOW26};

/// Label for shell voxels that satisfy no layer test.
pub const BETWEEN_LAYERS: u8 = 254;
/// Label for voxels outside the shell (exterior, or `d >= d_max`).
pub const NO_LAYER: u8 = 255;

pub type LayerPlane = Plane<u8>;

/// Layer count and thickness; `d_max = layers * tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerParams {
    pub layers: usize,
    pub tau: f64,
}

impl LayerParams {
    pub fn new(layers: usize, tau: f64) -> Result<Self> {
        if layers == 0 || layers >= BETWEEN_LAYERS as usize {
            return Err(Error::Config(format!("layer count must be in 1..{BETWEEN_LAYERS}, got {layers}")));
        }
        if !(tau > 0.0) {
            return Err(Error::Config(format!("layer thickness must be positive, got {tau}")));
        }
        Ok(Self { layers, tau })
    }

    /// `L` layers, each one voxel of the finest axis thick.
    pub fn for_grid(spec: &GridSpec, layers: usize) -> Result<Self> {
        Self::new(layers, spec.min_pitch())
    }

    #[inline]
    pub fn d_max(&self) -> f64 {
        self.layers as f64 * self.tau
    }

    #[inline]
    pub fn level(&self, l: usize) -> f64 {
        l as f64 * self.tau
    }

    pub fn d_null(&self) -> f64 {
        d_null(self.d_max())
    }
}

/// Three consecutive planes centered on one slice; `None` off the grid.
pub type Window3<'a, T> = [Option<&'a Plane<T>>; 3];

/// Assign layer labels to slice `z`.
///
/// A shell voxel `v` (inside, `d(v) < d_max`) belongs to layer 0 if a
/// 26-neighbor lies outside the shape; otherwise to the smallest `l >= 1`
/// with `l * tau <= d(v)` and some 26-neighbor closer than `l * tau`.
pub fn extract_layers_slice(d: Window3<'_, f64>, class: Window3<'_, crate::grid::VoxelClass>, params: LayerParams) -> LayerPlane {
    let here_d = d[1].expect("center distance plane required");
    let here_c = class[1].expect("center class plane required");
    let (nx, ny) = (here_d.nx(), here_d.ny());
    let d_max = params.d_max();
    let mut out = LayerPlane::filled(nx, ny, NO_LAYER);
    for y in 0..ny {
        for x in 0..nx {
            if !here_c.get(x, y).is_inside() {
                continue;
            }
            let dv = *here_d.get(x, y);
            if dv >= d_max {
                continue;
            }
            let mut touches_outside = false;
            let mut min_nb = f64::INFINITY;
            for &[dx, dy, dz] in &WINDOW26 {
                let (ux, uy) = (x as i64 + dx, y as i64 + dy);
                let cls = class[(dz + 1) as usize].and_then(|p| p.get_signed(ux, uy));
                match cls {
                    Some(c) if c.is_inside() => {}
                    _ => touches_outside = true,
                }
                if let Some(du) = d[(dz + 1) as usize].and_then(|p| p.get_signed(ux, uy)) {
                    min_nb = min_nb.min(*du);
                }
            }
            let label = if touches_outside {
                0
            } else {
                (1..params.layers)
                    .find(|&l| {
                        let dl = params.level(l);
                        dl <= dv && min_nb < dl
                    })
                    .map(|l| l as u8)
                    .unwrap_or(BETWEEN_LAYERS)
            };
            *out.get_mut(x, y) = label;
        }
    }
    out
}

/// Layer labels for a whole in-memory volume.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSet {
    pub planes: Vec<LayerPlane>,
    pub params: LayerParams,
}

impl LayerSet {
    pub fn label(&self, x: usize, y: usize, z: usize) -> u8 {
        *self.planes[z].get(x, y)
    }

    /// Voxel count per layer index.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.params.layers];
        for p in &self.planes {
            for &l in p.as_slice() {
                if (l as usize) < self.params.layers {
                    sizes[l as usize] += 1;
                }
            }
        }
        sizes
    }
}

pub fn extract_layers(field: &DistanceField, classes: &[ClassPlane], params: LayerParams) -> LayerSet {
    let nz = classes.len();
    let planes = (0..nz)
        .map(|z| {
            let d = [
                z.checked_sub(1).map(|s| &field.slices[s].d),
                Some(&field.slices[z].d),
                field.slices.get(z + 1).map(|s| &s.d),
            ];
            let c = [z.checked_sub(1).map(|s| &classes[s]), Some(&classes[z]), classes.get(z + 1)];
            extract_layers_slice(d, c, params)
        })
        .collect();
    LayerSet { planes, params }
}
