//! Color separation: input colors to per-material tonal values, plus the
//! Demichel overprint model used to predict material fractions.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Upper bound on colored material channels.
pub const MAX_CHANNELS: usize = 4;

/// Per-channel coverage request in `[0, 1]`; white is implicit.
#[derive(Clone, Copy, PartialEq)]
pub struct TonalVector {
    vals: [f64; MAX_CHANNELS],
    len: u8,
}

impl TonalVector {
    pub fn zeros(channels: usize) -> Self {
        assert!((1..=MAX_CHANNELS).contains(&channels), "channel count {channels} out of range");
        Self { vals: [0.0; MAX_CHANNELS], len: channels as u8 }
    }

    pub fn from_slice(vals: &[f64]) -> Self {
        let mut t = Self::zeros(vals.len());
        t.vals[..vals.len()].copy_from_slice(vals);
        t
    }

    pub fn splat(channels: usize, v: f64) -> Self {
        let mut t = Self::zeros(channels);
        t.vals[..channels].fill(v);
        t
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.len as usize
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.vals[..self.len as usize]
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.vals[..self.len as usize]
    }

    #[inline]
    pub fn get(&self, c: usize) -> f64 {
        self.as_slice()[c]
    }

    #[inline]
    pub fn set(&mut self, c: usize, v: f64) {
        self.as_mut_slice()[c] = v;
    }

    pub fn clamped(mut self) -> Self {
        for v in self.as_mut_slice() {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }
}

impl fmt::Debug for TonalVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

/// sRGB transfer function, encoded to linear.
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Monotone per-channel tone curve sampled at 256 evenly spaced inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationCurve {
    samples: Vec<f64>,
}

impl LinearizationCurve {
    pub const SAMPLES: usize = 256;

    pub fn identity() -> Self {
        Self { samples: (0..Self::SAMPLES).map(|i| i as f64 / 255.0).collect() }
    }

    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() != Self::SAMPLES {
            return Err(Error::Config(format!(
                "linearization curve needs {} samples, got {}",
                Self::SAMPLES,
                samples.len()
            )));
        }
        if samples.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("linearization curve is not monotone".into()));
        }
        if samples[0] != 0.0 || samples[Self::SAMPLES - 1] != 1.0 {
            return Err(Error::Config("linearization curve must run from 0 to 1".into()));
        }
        Ok(Self { samples })
    }

    pub fn apply(&self, t: f64) -> f64 {
        let x = t.clamp(0.0, 1.0) * 255.0;
        let i = (x.floor() as usize).min(254);
        let f = x - i as f64;
        self.samples[i] * (1.0 - f) + self.samples[i + 1] * f
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Mapping {
    /// `1 - linear(rgb)` per channel, computed analytically.
    Naive,
    /// `n^3` lattice over the input cube, `(r, g, b)` lexicographic with `b` fastest.
    Lattice { n: usize, nodes: Vec<TonalVector> },
}

/// Color to tonal lookup: a 3D lattice followed by per-channel linearization.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationLut {
    channels: usize,
    mapping: Mapping,
    curves: Vec<LinearizationCurve>,
}

/// Lattice size used for measured characterization data.
pub const DEFAULT_LATTICE: usize = 8;

impl Default for SeparationLut {
    fn default() -> Self {
        Self::naive()
    }
}

impl SeparationLut {
    /// Built-in CMY separation: complement of linearized sRGB.
    pub fn naive() -> Self {
        Self { channels: 3, mapping: Mapping::Naive, curves: vec![LinearizationCurve::identity(); 3] }
    }

    /// The naive separation sampled onto an `n^3` lattice.
    pub fn naive_lattice(n: usize) -> Result<Self> {
        Self::from_fn(n, 3, |rgb| {
            TonalVector::from_slice(&[
                1.0 - srgb_to_linear(rgb[0]),
                1.0 - srgb_to_linear(rgb[1]),
                1.0 - srgb_to_linear(rgb[2]),
            ])
        })
    }

    pub fn from_fn(n: usize, channels: usize, mut f: impl FnMut([f64; 3]) -> TonalVector) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("lattice size must be at least 2, got {n}")));
        }
        let step = 1.0 / (n - 1) as f64;
        let mut nodes = Vec::with_capacity(n * n * n);
        for r in 0..n {
            for g in 0..n {
                for b in 0..n {
                    nodes.push(f([r as f64 * step, g as f64 * step, b as f64 * step]));
                }
            }
        }
        Self::from_lattice(n, channels, nodes)
    }

    pub fn from_lattice(n: usize, channels: usize, nodes: Vec<TonalVector>) -> Result<Self> {
        if !(1..=MAX_CHANNELS).contains(&channels) {
            return Err(Error::Config(format!("channel count {channels} out of range")));
        }
        if nodes.len() != n * n * n || nodes.iter().any(|t| t.channels() != channels) {
            return Err(Error::Config("lattice node count or width mismatch".into()));
        }
        Ok(Self {
            channels,
            mapping: Mapping::Lattice { n, nodes },
            curves: vec![LinearizationCurve::identity(); channels],
        })
    }

    pub fn with_curves(mut self, curves: Vec<LinearizationCurve>) -> Result<Self> {
        if curves.len() != self.channels {
            return Err(Error::Config("one linearization curve per channel required".into()));
        }
        self.curves = curves;
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Map a color to tonal values. Out-of-range inputs are clamped and
    /// counted in `clamps`.
    pub fn separate(&self, color: [f64; 3], clamps: &mut u64) -> TonalVector {
        let mut c = color;
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            *clamps += 1;
            c = c.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        }
        let mut t = match &self.mapping {
            Mapping::Naive => TonalVector::from_slice(&[
                1.0 - srgb_to_linear(c[0]),
                1.0 - srgb_to_linear(c[1]),
                1.0 - srgb_to_linear(c[2]),
            ]),
            Mapping::Lattice { n, nodes } => trilinear(*n, nodes, self.channels, c),
        };
        for (ch, curve) in self.curves.iter().enumerate() {
            let v = t.get(ch);
            t.set(ch, curve.apply(v));
        }
        t.clamped()
    }

    /// Parse the text LUT format: `LUT n T`, `n^3` node lines, then optionally
    /// `T` lines of 256 linearization samples.
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let what = "LUT";
        let mut lines = reader
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty() && !s.trim_start().starts_with('#')).unwrap_or(true));
        let (lineno, header) = lines.next().ok_or_else(|| Error::parse(what, 0, "empty file"))?;
        let header = header.map_err(|e| Error::parse(what, lineno, e.to_string()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "LUT" {
            return Err(Error::parse(what, lineno, "expected header `LUT n T`"));
        }
        let n: usize = parts[1].parse().map_err(|_| Error::parse(what, lineno, "bad lattice size"))?;
        let channels: usize = parts[2].parse().map_err(|_| Error::parse(what, lineno, "bad channel count"))?;
        if !(1..=MAX_CHANNELS).contains(&channels) {
            return Err(Error::parse(what, lineno, "channel count out of range"));
        }
        let mut nodes = Vec::with_capacity(n * n * n);
        for _ in 0..n * n * n {
            let (lineno, line) = lines.next().ok_or_else(|| Error::parse(what, 0, "truncated lattice"))?;
            let line = line.map_err(|e| Error::parse(what, lineno, e.to_string()))?;
            let vals = parse_reals(&line).map_err(|m| Error::parse(what, lineno, m))?;
            if vals.len() != channels {
                return Err(Error::parse(what, lineno, format!("expected {channels} values")));
            }
            nodes.push(TonalVector::from_slice(&vals));
        }
        let mut lut = Self::from_lattice(n, channels, nodes)?;
        let mut curves = Vec::new();
        for (lineno, line) in lines {
            let line = line.map_err(|e| Error::parse(what, lineno, e.to_string()))?;
            let vals = parse_reals(&line).map_err(|m| Error::parse(what, lineno, m))?;
            curves.push(LinearizationCurve::new(vals).map_err(|e| Error::parse(what, lineno, e.to_string()))?);
        }
        if !curves.is_empty() {
            lut = lut.with_curves(curves)?;
        }
        Ok(lut)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }

    /// Write in the text LUT format. The naive mapping is written as its
    /// `8^3` lattice sampling.
    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        let sampled;
        let (n, nodes) = match &self.mapping {
            Mapping::Lattice { n, nodes } => (*n, nodes),
            Mapping::Naive => {
                sampled = Self::naive_lattice(DEFAULT_LATTICE).expect("valid lattice");
                match sampled.mapping {
                    Mapping::Lattice { ref nodes, .. } => (DEFAULT_LATTICE, nodes),
                    Mapping::Naive => unreachable!(),
                }
            }
        };
        writeln!(w, "LUT {} {}", n, self.channels)?;
        for t in nodes {
            let row: Vec<String> = t.as_slice().iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        if self.curves.iter().any(|c| *c != LinearizationCurve::identity()) {
            for c in &self.curves {
                let row: Vec<String> = c.samples().iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }
}

fn parse_reals(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s}")))
        .collect()
}

fn trilinear(n: usize, nodes: &[TonalVector], channels: usize, c: [f64; 3]) -> TonalVector {
    let scale = (n - 1) as f64;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let x = c[a] * scale;
        let i = (x.floor() as usize).min(n - 2);
        base[a] = i;
        frac[a] = x - i as f64;
    }
    let idx = |r: usize, g: usize, b: usize| (r * n + g) * n + b;
    let mut out = TonalVector::zeros(channels);
    for corner in 0..8 {
        let dr = corner >> 2 & 1;
        let dg = corner >> 1 & 1;
        let db = corner & 1;
        let w = (if dr == 1 { frac[0] } else { 1.0 - frac[0] })
            * (if dg == 1 { frac[1] } else { 1.0 - frac[1] })
            * (if db == 1 { frac[2] } else { 1.0 - frac[2] });
        if w == 0.0 {
            continue;
        }
        let node = &nodes[idx(base[0] + dr, base[1] + dg, base[2] + db)];
        for ch in 0..channels {
            let v = out.get(ch) + w * node.get(ch);
            out.set(ch, v);
        }
    }
    out
}

/// Layer- and channel-dependent restriction of a channel's tonal value.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelExclusion {
    pub channel: usize,
    /// Layers (inclusive range) where the channel is soft-thresholded.
    pub layers: std::ops::RangeInclusive<usize>,
    /// Values below this are zeroed.
    pub threshold: f64,
}

/// Per-channel scaling and per-layer soft thresholds applied before halftoning.
#[derive(Debug, Clone, PartialEq)]
pub struct TonalPolicy {
    pub scales: [f64; MAX_CHANNELS],
    pub exclusions: Vec<ChannelExclusion>,
}

/// Channel printed with the support material (yellow in CMY order).
pub const SUPPORT_CHANNEL: usize = 2;

impl Default for TonalPolicy {
    /// Yellow printed with dyed support: scaled to 0.3 and kept out of layer 0.
    fn default() -> Self {
        Self::identity().with_scale(SUPPORT_CHANNEL, 0.3).with_exclusion(ChannelExclusion {
            channel: SUPPORT_CHANNEL,
            layers: 0..=0,
            threshold: 1.0,
        })
    }
}

impl TonalPolicy {
    pub fn identity() -> Self {
        Self { scales: [1.0; MAX_CHANNELS], exclusions: Vec::new() }
    }

    pub fn with_scale(mut self, channel: usize, scale: f64) -> Self {
        self.scales[channel] = scale.clamp(0.0, 1.0);
        self
    }

    pub fn with_exclusion(mut self, ex: ChannelExclusion) -> Self {
        self.exclusions.push(ex);
        self
    }

    pub fn is_identity(&self) -> bool {
        self.scales.iter().all(|&s| s == 1.0) && self.exclusions.is_empty()
    }

    pub fn apply(&self, g: TonalVector, layer: usize) -> TonalVector {
        let mut out = g;
        for ch in 0..g.channels() {
            out.set(ch, g.get(ch) * self.scales[ch]);
        }
        for ex in &self.exclusions {
            if ex.channel < out.channels() && ex.layers.contains(&layer) && out.get(ex.channel) < ex.threshold {
                out.set(ex.channel, 0.0);
            }
        }
        out
    }
}

/// Expected material fractions for mean tonal values `t`: one entry per
/// colored channel followed by white. Overlapping coverage is split equally
/// among the overlapping channels.
pub fn demichel_fractions(t: &TonalVector) -> Vec<f64> {
    let n = t.channels();
    let vals = t.as_slice();
    let mut out = vec![0.0; n + 1];
    for subset in 0u32..(1 << n) {
        let mut p = 1.0;
        for (j, &v) in vals.iter().enumerate() {
            p *= if subset >> j & 1 == 1 { v } else { 1.0 - v };
        }
        let size = subset.count_ones();
        if size == 0 {
            out[n] = p;
            continue;
        }
        let share = p / size as f64;
        for (j, o) in out.iter_mut().enumerate().take(n) {
            if subset >> j & 1 == 1 {
                *o += share;
            }
        }
    }
    out
}
