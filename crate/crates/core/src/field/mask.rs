use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// One lattice offset of the distance mask with its physical length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskEntry {
    pub offset: [i32; 3],
    pub dist: f64,
}

/// Every integer offset within `d_max` (physical), sorted by distance and
/// then by scan order of the offset.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMask {
    entries: Vec<MaskEntry>,
    d_max: f64,
    /// Entries regrouped by z offset: `(dz, entries)` with dz ascending.
    by_dz: Vec<(i32, Vec<MaskEntry>)>,
}

/// Default cap on mask size.
pub const DEFAULT_MASK_BUDGET: usize = 4_000_000;

pub fn build_distance_mask(spec: &GridSpec, d_max: f64, budget: usize) -> Result<DistanceMask> {
    if !(d_max > 0.0) || !d_max.is_finite() {
        return Err(Error::Config(format!("d_max must be positive, got {d_max}")));
    }
    let reach = spec.pitch.map(|p| (d_max / p).floor() as i64);
    let boxed = (2 * reach[0] + 1) as u128 * (2 * reach[1] + 1) as u128 * (2 * reach[2] + 1) as u128;
    let mut entries = Vec::new();
    for k in -reach[2]..=reach[2] {
        for j in -reach[1]..=reach[1] {
            for i in -reach[0]..=reach[0] {
                let dist = spec.offset_distance(i, j, k);
                if dist <= d_max {
                    if entries.len() == budget {
                        // estimate the full count for the error message
                        let count = (boxed as f64 * std::f64::consts::PI / 6.0) as usize;
                        return Err(Error::MaskTooLarge { count: count.max(budget + 1), budget });
                    }
                    entries.push(MaskEntry { offset: [i as i32, j as i32, k as i32], dist });
                }
            }
        }
    }
    // stable sort keeps scan order among equal distances
    entries.sort_by(|a, b| a.dist.total_cmp(&b.dist));
    let mut by_dz: Vec<(i32, Vec<MaskEntry>)> = Vec::new();
    for dz in -reach[2] as i32..=reach[2] as i32 {
        let group: Vec<MaskEntry> = entries.iter().filter(|e| e.offset[2] == dz).copied().collect();
        if !group.is_empty() {
            by_dz.push((dz, group));
        }
    }
    Ok(DistanceMask { entries, d_max, by_dz })
}

impl DistanceMask {
    pub fn entries(&self) -> &[MaskEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Largest |dz| present.
    pub fn z_reach(&self) -> usize {
        self.by_dz.iter().map(|(dz, _)| dz.unsigned_abs() as usize).max().unwrap_or(0)
    }

    pub fn by_dz(&self) -> &[(i32, Vec<MaskEntry>)] {
        &self.by_dz
    }
}
