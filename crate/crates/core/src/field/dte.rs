use crate::grid::{ClassPlane, Plane};

/// In-slice L1 distance to the nearest non-interior voxel, with its
/// central-difference gradient (numerators, i.e. twice the slope).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceToEmptyPlane {
    pub phi: Plane<u32>,
    pub grad: Plane<[i32; 2]>,
}

impl DistanceToEmptyPlane {
    #[inline]
    pub fn phi(&self, x: usize, y: usize) -> u32 {
        *self.phi.get(x, y)
    }

    #[inline]
    pub fn grad(&self, x: usize, y: usize) -> [i32; 2] {
        *self.grad.get(x, y)
    }
}

/// Exact L1 distance transform of one slice by a forward and a backward
/// raster pass. Non-interior voxels and the frame around the slice are the
/// sources (distance 0).
pub fn distance_to_empty(class: &ClassPlane) -> DistanceToEmptyPlane {
    let (nx, ny) = (class.nx(), class.ny());
    let mut phi = Plane::from_vec(
        nx,
        ny,
        class.as_slice().iter().map(|c| if c.is_inside() { u32::MAX } else { 0 }).collect(),
    );
    let at = |p: &Plane<u32>, x: i64, y: i64| p.get_signed(x, y).copied().unwrap_or(0);
    for y in 0..ny {
        for x in 0..nx {
            let cur = *phi.get(x, y);
            if cur == 0 {
                continue;
            }
            let best = at(&phi, x as i64 - 1, y as i64).min(at(&phi, x as i64, y as i64 - 1)).saturating_add(1);
            *phi.get_mut(x, y) = cur.min(best);
        }
    }
    for y in (0..ny).rev() {
        for x in (0..nx).rev() {
            let cur = *phi.get(x, y);
            if cur == 0 {
                continue;
            }
            let best = at(&phi, x as i64 + 1, y as i64).min(at(&phi, x as i64, y as i64 + 1)).saturating_add(1);
            *phi.get_mut(x, y) = cur.min(best);
        }
    }
    let mut grad = Plane::filled(nx, ny, [0i32; 2]);
    for y in 0..ny {
        for x in 0..nx {
            let (xi, yi) = (x as i64, y as i64);
            let gx = at(&phi, xi + 1, yi) as i64 - at(&phi, xi - 1, yi) as i64;
            let gy = at(&phi, xi, yi + 1) as i64 - at(&phi, xi, yi - 1) as i64;
            *grad.get_mut(x, y) = [gx as i32, gy as i32];
        }
    }
    DistanceToEmptyPlane { phi, grad }
}
