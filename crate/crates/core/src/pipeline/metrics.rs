use std::io::Write;

use crate::colorsep::{demichel_fractions, TonalVector};
use crate::grid::Plane;
use crate::halftone::Material;

/// Actual and expected material fractions of one slice, over inside voxels
/// closer than `d_max` to the surface. Entries are per colored channel, then
/// white.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTone {
    pub slice: usize,
    pub voxels: u64,
    pub actual: Vec<f64>,
    pub expected: Vec<f64>,
}

/// Accumulates one slice's shell voxels.
#[derive(Debug, Clone)]
pub struct SliceToneBuilder {
    slice: usize,
    counts: Vec<u64>,
    tonal_sum: Vec<f64>,
    voxels: u64,
}

impl SliceToneBuilder {
    pub fn new(slice: usize, channels: usize) -> Self {
        Self { slice, counts: vec![0; channels + 1], tonal_sum: vec![0.0; channels], voxels: 0 }
    }

    /// `material` is a code in `1..=T+1`; `tonal` the effective tone there.
    pub fn add(&mut self, material: Material, tonal: &TonalVector) {
        let channels = self.tonal_sum.len();
        let idx = (material as usize).saturating_sub(1).min(channels);
        self.counts[idx] += 1;
        for (s, v) in self.tonal_sum.iter_mut().zip(tonal.as_slice()) {
            *s += v;
        }
        self.voxels += 1;
    }

    /// `None` when the slice has no qualifying voxels.
    pub fn finish(self) -> Option<SliceTone> {
        if self.voxels == 0 {
            return None;
        }
        let n = self.voxels as f64;
        let mean = TonalVector::from_slice(&self.tonal_sum.iter().map(|s| s / n).collect::<Vec<_>>());
        Some(SliceTone {
            slice: self.slice,
            voxels: self.voxels,
            actual: self.counts.iter().map(|&c| c as f64 / n).collect(),
            expected: demichel_fractions(&mean),
        })
    }
}

/// Per-slice fractions and their RMSE across slices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToneReport {
    pub slices: Vec<SliceTone>,
    /// Per colored channel, then white.
    pub rmse: Vec<f64>,
    /// LUT inputs outside the lattice that were clamped.
    pub clamps: u64,
    /// Channel decisions whose error had nowhere to go.
    pub dropped: u64,
    /// Voxels where more than one channel fired but only one was printed.
    pub disagreements: u64,
    pub shell_voxels: u64,
}

impl ToneReport {
    pub fn from_slices(slices: Vec<SliceTone>, channels: usize) -> Self {
        let mut rmse = vec![0.0; channels + 1];
        if !slices.is_empty() {
            for (m, r) in rmse.iter_mut().enumerate() {
                let ss: f64 = slices.iter().map(|s| (s.actual[m] - s.expected[m]).powi(2)).sum();
                *r = (ss / slices.len() as f64).sqrt();
            }
        }
        let shell_voxels = slices.iter().map(|s| s.voxels).sum();
        Self { slices, rmse, shell_voxels, ..Default::default() }
    }

    /// Share of shell voxels whose halftone vector named more channels than
    /// the one printed.
    pub fn disagreement_rate(&self) -> f64 {
        if self.shell_voxels == 0 {
            0.0
        } else {
            self.disagreements as f64 / self.shell_voxels as f64
        }
    }

    pub fn max_rmse(&self) -> f64 {
        self.rmse.iter().copied().fold(0.0, f64::max)
    }

    /// `slice, channel, actual, expected, error` rows; channel `T` is white.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "slice\tchannel\tactual\texpected\terror")?;
        for s in &self.slices {
            for m in 0..s.actual.len() {
                writeln!(w, "{}\t{}\t{:.6}\t{:.6}\t{:.6}", s.slice, m, s.actual[m], s.expected[m], s.actual[m] - s.expected[m])?;
            }
        }
        Ok(())
    }
}

/// Tone report of an in-memory result. `tonal` holds the effective
/// (policy-applied) tone of every shell voxel.
pub fn tone_metrics(
    materials: &[Plane<Material>],
    tonal: &[Plane<TonalVector>],
    d: &[Plane<f64>],
    d_max: f64,
    channels: usize,
) -> ToneReport {
    let slices = materials
        .iter()
        .zip(tonal)
        .zip(d)
        .enumerate()
        .filter_map(|(s, ((m, t), dp))| {
            let mut b = SliceToneBuilder::new(s, channels);
            for i in 0..m.as_slice().len() {
                let code = m.as_slice()[i];
                if code != 0 && dp.as_slice()[i] < d_max {
                    b.add(code, &t.as_slice()[i]);
                }
            }
            b.finish()
        })
        .collect();
    ToneReport::from_slices(slices, channels)
}
