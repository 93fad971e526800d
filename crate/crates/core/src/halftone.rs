//! Per-layer, per-channel error diffusion over the traversal order, threshold
//! modulation, single-material assignment and filling of skipped voxels.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::colorsep::{TonalPolicy, TonalVector, MAX_CHANNELS};
use crate::error::{Error, Result};
use crate::field::{LayerPlane, BETWEEN_LAYERS, NO_LAYER};
use crate::grid::{ClassPlane, GridSpec, Plane};
use crate::traverse::{Cell, Filter2D, LayerSliceView, Tap, TraversalState, TraversalStats};

/// Material code: 0 exterior, `1..=T` colored channels, `T + 1` white.
pub type Material = u8;
pub const EXTERIOR: Material = 0;

pub fn channel_material(channel: usize) -> Material {
    channel as Material + 1
}

pub fn white(channels: usize) -> Material {
    channels as Material + 1
}

/// Binary halftone decision per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HalftoneVector {
    bits: u8,
    channels: u8,
}

impl HalftoneVector {
    pub fn empty(channels: usize) -> Self {
        assert!(channels <= MAX_CHANNELS);
        Self { bits: 0, channels: channels as u8 }
    }

    pub fn from_bits(channels: usize, bits: &[bool]) -> Self {
        let mut h = Self::empty(channels);
        for (c, &b) in bits.iter().enumerate() {
            h.set(c, b);
        }
        h
    }

    pub fn get(&self, c: usize) -> bool {
        self.bits & (1 << c) != 0
    }

    pub fn set(&mut self, c: usize, on: bool) {
        if on {
            self.bits |= 1 << c;
        } else {
            self.bits &= !(1 << c);
        }
    }

    pub fn channels(&self) -> usize {
        self.channels as usize
    }

    pub fn count_ones(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn is_zero(&self) -> bool {
        self.bits == 0
    }
}

/// Rotating priority among channels that fire at the same voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TieBreaker {
    c: [u32; MAX_CHANNELS],
    channels: usize,
}

impl TieBreaker {
    pub fn new(channels: usize) -> Self {
        Self { c: [0; MAX_CHANNELS], channels }
    }

    pub fn from_counts(c: &[u32]) -> Self {
        let mut t = Self::new(c.len());
        t.c[..c.len()].copy_from_slice(c);
        t
    }

    pub fn counts(&self) -> &[u32] {
        &self.c[..self.channels]
    }

    pub fn reset(&mut self) {
        self.c = [0; MAX_CHANNELS];
    }
}

/// Material for a halftone vector. White if no channel fires; otherwise the
/// firing channel with the largest tie count (lowest index on ties), whose
/// count resets while every other channel's count grows by one.
pub fn assign_material(h: HalftoneVector, tie: &mut TieBreaker) -> Material {
    if h.is_zero() {
        return white(tie.channels);
    }
    let winner = (0..tie.channels).filter(|&c| h.get(c)).fold(None, |best: Option<usize>, c| match best {
        Some(b) if tie.c[b] >= tie.c[c] => Some(b),
        _ => Some(c),
    });
    let winner = winner.expect("nonzero halftone vector");
    for c in 0..tie.channels {
        if c == winner {
            tie.c[c] = 0;
        } else {
            tie.c[c] += 1;
        }
    }
    channel_material(winner)
}

/// Quantize one channel: `g~ = g + a`, fire iff `g~ > t`. Returns the bit
/// and the residual `h - g~` that receivers subtract, weighted.
#[inline]
pub fn diffuse_step(g: f64, a: f64, t: f64) -> (bool, f64) {
    let gt = g + a;
    let h = gt > t;
    (h, (h as u8 as f64) - gt)
}

/// Uniform `[0, 1)` value keyed by `(seed, slice, layer, x, y, channel)`.
pub fn keyed_uniform(seed: u64, s: usize, layer: u8, x: usize, y: usize, channel: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((s as u64) << 16) | ((layer as u64) << 8) | channel as u64);
    rng.set_word_pos(((y as u128) << 33) | ((x as u128) << 1));
    rng.gen::<f64>()
}

/// `t = 0.5 + sigma * (r - 0.5)` with keyed uniform `r`.
pub fn modulated_threshold(sigma: f64, seed: u64, s: usize, layer: u8, x: usize, y: usize, channel: usize) -> f64 {
    if sigma == 0.0 {
        return 0.5;
    }
    0.5 + sigma * (keyed_uniform(seed, s, layer, x, y, channel) - 0.5)
}

/// Built-in filter families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterKind {
    #[default]
    Fs,
    Ostromoukhov,
    ZhouFang,
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fs" | "floyd-steinberg" => Ok(FilterKind::Fs),
            "ostromoukhov" => Ok(FilterKind::Ostromoukhov),
            "zhoufang" | "zhou-fang" => Ok(FilterKind::ZhouFang),
            other => Err(Error::Config(format!("unknown filter '{other}' (expected fs, ostromoukhov or zhoufang)"))),
        }
    }
}

impl FilterKind {
    pub fn table(self) -> FilterTable {
        match self {
            FilterKind::Fs => FilterTable::floyd_steinberg(),
            FilterKind::Ostromoukhov => FilterTable::ostromoukhov(),
            FilterKind::ZhouFang => FilterTable::zhou_fang(),
        }
    }
}

/// Tone-indexed filters plus an optional tone-indexed modulation strength.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTable {
    pub name: String,
    levels: Vec<Filter2D>,
    sigma: Option<Vec<f64>>,
}

const TONE_LEVELS: usize = 256;

/// Keyframed 3-element table: right, down-left and down weights, mirrored
/// around mid-gray.
fn three_tap_table(name: &str, keys: &[(usize, [f64; 3])]) -> Vec<Filter2D> {
    (0..TONE_LEVELS)
        .map(|level| {
            let k = level.min(TONE_LEVELS - 1 - level);
            let i = keys.iter().rposition(|kf| kf.0 <= k).unwrap_or(0);
            let (k0, w0) = keys[i];
            let w = match keys.get(i + 1) {
                Some(&(k1, w1)) => {
                    let t = (k - k0) as f64 / (k1 - k0) as f64;
                    [0, 1, 2].map(|j| w0[j] + t * (w1[j] - w0[j]))
                }
                None => w0,
            };
            let sum: f64 = w.iter().sum();
            Filter2D::new(vec![
                Tap { df: 1.0, dr: 0.0, w: w[0] / sum },
                Tap { df: -1.0, dr: 1.0, w: w[1] / sum },
                Tap { df: 0.0, dr: 1.0, w: w[2] / sum },
            ])
            .unwrap_or_else(|e| panic!("built-in table {name}: {e}"))
        })
        .collect()
}

impl FilterTable {
    pub fn new(name: impl Into<String>, levels: Vec<Filter2D>, sigma: Option<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("filter table has no levels".into()));
        }
        if let Some(s) = &sigma {
            if s.is_empty() || s.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config("modulation strengths must lie in [0, 1]".into()));
            }
        }
        Ok(Self { name: name.into(), levels, sigma })
    }

    pub fn floyd_steinberg() -> Self {
        Self { name: "fs".into(), levels: vec![Filter2D::floyd_steinberg()], sigma: None }
    }

    /// Tone-adaptive 3-element filter. The coefficients are a smooth
    /// placeholder with the published table's shape; load the published
    /// table with [`FilterTable::load`].
    pub fn ostromoukhov() -> Self {
        let keys = [(0, [0.722, 0.0, 0.278]), (32, [0.50, 0.14, 0.36]), (64, [0.44, 0.22, 0.34]), (128, [0.42, 0.29, 0.29])];
        Self { name: "ostromoukhov".into(), levels: three_tap_table("ostromoukhov", &keys), sigma: None }
    }

    /// Tone-dependent coefficients with threshold modulation. Coefficients
    /// and strengths are placeholders; load the published values with
    /// [`FilterTable::load`].
    pub fn zhou_fang() -> Self {
        let keys = [(0, [0.722, 0.0, 0.278]), (32, [0.48, 0.16, 0.36]), (64, [0.42, 0.25, 0.33]), (128, [0.40, 0.30, 0.30])];
        let sigma = (0..TONE_LEVELS)
            .map(|level| {
                let g = level as f64 / (TONE_LEVELS - 1) as f64;
                0.9 * (4.0 * g * (1.0 - g)).min(1.0)
            })
            .collect();
        Self { name: "zhoufang".into(), levels: three_tap_table("zhoufang", &keys), sigma: Some(sigma) }
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    fn index(n: usize, g: f64) -> usize {
        ((g.clamp(0.0, 1.0) * (n - 1) as f64).round() as usize).min(n - 1)
    }

    /// Level index for tone `g`.
    pub fn level_of(&self, g: f64) -> usize {
        Self::index(self.levels.len(), g)
    }

    pub fn level(&self, i: usize) -> &Filter2D {
        &self.levels[i]
    }

    pub fn for_tone(&self, g: f64) -> &Filter2D {
        &self.levels[self.level_of(g)]
    }

    /// Modulation strength for tone `g`; zero for unmodulated tables.
    pub fn sigma(&self, g: f64) -> f64 {
        self.sigma.as_ref().map_or(0.0, |s| s[Self::index(s.len(), g)])
    }

    /// Text format: `FILTER <name> <levels>`, then per level a count followed
    /// by that many `df dr weight` triples; optionally `SIGMA <n>` and `n`
    /// strengths. Tokens may be split over lines freely; `#` starts a comment.
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut tokens: Vec<(usize, String)> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::parse("filter table", i + 1, e.to_string()))?;
            let body = line.split('#').next().unwrap_or("");
            tokens.extend(body.split_whitespace().map(|t| (i + 1, t.to_string())));
        }
        let mut it = tokens.into_iter();
        let mut last_line = 1;
        let mut next = |what: &str| -> Result<(usize, String)> {
            let t = it.next().ok_or_else(|| Error::parse("filter table", last_line, format!("unexpected end, expected {what}")))?;
            last_line = t.0;
            Ok(t)
        };
        fn num<T: std::str::FromStr>(t: (usize, String), what: &str) -> Result<T> {
            t.1.parse().map_err(|_| Error::parse("filter table", t.0, format!("bad {what} '{}'", t.1)))
        }
        let head = next("FILTER")?;
        if head.1 != "FILTER" {
            return Err(Error::parse("filter table", head.0, "expected FILTER header"));
        }
        let name = next("name")?.1;
        let n: usize = num(next("level count")?, "level count")?;
        let mut levels = Vec::with_capacity(n);
        for _ in 0..n {
            let count: usize = num(next("element count")?, "element count")?;
            let mut taps = Vec::with_capacity(count);
            for _ in 0..count {
                let df = num(next("df")?, "df")?;
                let dr = num(next("dr")?, "dr")?;
                let w = num(next("weight")?, "weight")?;
                taps.push(Tap { df, dr, w });
            }
            levels.push(Filter2D::new(taps)?);
        }
        let sigma = match next("SIGMA or end") {
            Err(_) => None,
            Ok(t) if t.1 == "SIGMA" => {
                let m: usize = num(next("strength count")?, "strength count")?;
                Some((0..m).map(|_| num(next("strength")?, "strength")).collect::<Result<Vec<f64>>>()?)
            }
            Ok(t) => return Err(Error::parse("filter table", t.0, format!("unexpected token '{}'", t.1))),
        };
        Self::new(name, levels, sigma)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "FILTER {} {}", self.name, self.levels.len())?;
        for f in &self.levels {
            writeln!(w, "{}", f.taps().len())?;
            for t in f.taps() {
                writeln!(w, "{} {} {}", t.df, t.dr, t.w)?;
            }
        }
        if let Some(s) = &self.sigma {
            writeln!(w, "SIGMA {}", s.len())?;
            for v in s {
                writeln!(w, "{v}")?;
            }
        }
        Ok(())
    }
}

/// Settings shared by all layers of a job.
#[derive(Debug, Clone)]
pub struct HalftoneConfig {
    pub table: FilterTable,
    pub policy: TonalPolicy,
    pub seed: u64,
    pub channels: usize,
    /// Check traversal and quantization invariants while running.
    pub audit: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HalftoneStats {
    pub voxels: u64,
    /// Channel decisions whose filter mapping came back empty.
    pub dropped: u64,
    /// Voxels where more than one channel fired.
    pub multi_fire: u64,
    pub max_abs_error: f64,
    /// Audit: decisions violating `h = 1 <=> g~ > t`.
    pub quantization_violations: u64,
    pub traversal: TraversalStats,
}

impl HalftoneStats {
    pub fn merge(&mut self, o: &HalftoneStats) {
        self.voxels += o.voxels;
        self.dropped += o.dropped;
        self.multi_fire += o.multi_fire;
        self.max_abs_error = self.max_abs_error.max(o.max_abs_error);
        self.quantization_violations += o.quantization_violations;
        self.traversal.merge(&o.traversal);
    }
}

/// Result for one layer voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerVoxel {
    pub cell: Cell,
    pub rank: u32,
    pub h: HalftoneVector,
    pub material: Material,
}

/// Error-diffusion state of one layer, advanced one slice at a time.
#[derive(Debug, Clone)]
pub struct LayerHalftoner {
    pub layer: u8,
    traversal: TraversalState,
    err: Plane<[f64; MAX_CHANNELS]>,
    err_next: Plane<[f64; MAX_CHANNELS]>,
    tie: TieBreaker,
    pub stats: HalftoneStats,
}

impl LayerHalftoner {
    pub fn new(layer: u8, nx: usize, ny: usize, cfg: &HalftoneConfig) -> Self {
        let mut traversal = TraversalState::new(nx, ny);
        traversal.audit = cfg.audit;
        Self {
            layer,
            traversal,
            err: Plane::filled(nx, ny, [0.0; MAX_CHANNELS]),
            err_next: Plane::filled(nx, ny, [0.0; MAX_CHANNELS]),
            tie: TieBreaker::new(cfg.channels),
            stats: HalftoneStats::default(),
        }
    }

    pub fn byte_size(&self) -> usize {
        self.traversal.byte_size() + self.err.byte_size() + self.err_next.byte_size()
    }

    /// Halftone this layer's voxels of slice `s` in traversal order, then
    /// advance the carried state to `s + 1`.
    pub fn process_slice(&mut self, s: usize, view: &LayerSliceView<'_>, tonal: &Plane<TonalVector>, cfg: &HalftoneConfig, out: &mut Vec<LayerVoxel>) {
        let layer = self.layer;
        let channels = cfg.channels;
        self.tie.reset();
        let Self { traversal, err, err_next, tie, stats, .. } = self;
        let mut mapped: Vec<(usize, Vec<(usize, f64)>)> = Vec::with_capacity(channels);
        traversal.traverse_slice(view, |visit| {
            let (x, y) = visit.cell;
            let g = cfg.policy.apply(*tonal.get(x, y), layer as usize);
            let a = *err.get(x, y);
            let mut h = HalftoneVector::empty(channels);
            let mut received = 0u32;
            mapped.clear();
            for ch in 0..channels {
                let gc = g.get(ch);
                let t = modulated_threshold(cfg.table.sigma(gc), cfg.seed, s, layer, x, y, ch);
                let (bit, residual) = diffuse_step(gc, a[ch], t);
                if cfg.audit && bit != (gc + a[ch] > t) {
                    stats.quantization_violations += 1;
                }
                h.set(ch, bit);
                let level = cfg.table.level_of(gc);
                let pos = match mapped.iter().position(|m| m.0 == level) {
                    Some(p) => p,
                    None => {
                        mapped.push((level, visit.map(cfg.table.level(level))));
                        mapped.len() - 1
                    }
                };
                let m = &mapped[pos].1;
                if m.is_empty() {
                    stats.dropped += 1;
                }
                for &(i, w) in m {
                    let tgt = visit.target(i);
                    let plane = if tgt.next { &mut *err_next } else { &mut *err };
                    let cell = plane.get_mut(tgt.x, tgt.y);
                    cell[ch] -= w * residual;
                    stats.max_abs_error = stats.max_abs_error.max(cell[ch].abs());
                    received |= 1 << i;
                }
            }
            if h.count_ones() > 1 {
                stats.multi_fire += 1;
            }
            stats.voxels += 1;
            let material = assign_material(h, tie);
            out.push(LayerVoxel { cell: visit.cell, rank: visit.rank as u32, h, material });
            received
        });
        std::mem::swap(err, err_next);
        err_next.as_mut_slice().fill([0.0; MAX_CHANNELS]);
        traversal.advance();
        stats.traversal = traversal.stats;
    }
}

/// Offsets searched for the nearest layer voxel of a skipped voxel, nearest
/// first and in scan order among equals.
#[derive(Debug, Clone, PartialEq)]
pub struct FillSearch {
    offsets: Vec<[i64; 3]>,
    z_reach: usize,
}

impl FillSearch {
    /// Radius that always reaches past one skipped sheet.
    pub fn default_radius(spec: &GridSpec) -> f64 {
        2.0 * spec.max_pitch()
    }

    pub fn new(spec: &GridSpec, radius: f64) -> Self {
        let reach = |p: f64| (radius / p).floor() as i64;
        let (rx, ry, rz) = (reach(spec.pitch[0]), reach(spec.pitch[1]), reach(spec.pitch[2]));
        let mut offs: Vec<([i64; 3], f64)> = Vec::new();
        for dz in -rz..=rz {
            for dy in -ry..=ry {
                for dx in -rx..=rx {
                    let d = spec.offset_distance(dx, dy, dz);
                    if (dx, dy, dz) != (0, 0, 0) && d <= radius {
                        offs.push(([dx, dy, dz], d));
                    }
                }
            }
        }
        // stable sort keeps (dz, dy, dx) order, which is scan order of the target
        offs.sort_by(|a, b| a.1.total_cmp(&b.1));
        Self { offsets: offs.into_iter().map(|o| o.0).collect(), z_reach: rz.max(0) as usize }
    }

    pub fn z_reach(&self) -> usize {
        self.z_reach
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Materials of one finished slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedSlice {
    pub materials: Plane<Material>,
    /// Layer whose halftone a voxel carries: its own, or that of the voxel
    /// it copied; [`NO_LAYER`] elsewhere.
    pub source_layer: Plane<u8>,
    /// Skipped voxels with no layer voxel in reach (set to white).
    pub unresolved: u64,
}

/// Final materials of slice `z`: exterior 0, layer voxels their halftoned
/// material, skipped (between-layers) voxels the material of the nearest
/// layer voxel, everything else inside white.
///
/// `layer_materials(s)` and `labels(s)` must be available for every slice
/// within `search.z_reach()` of `z` that exists.
pub fn compose_slice<'a>(
    z: usize,
    class: &ClassPlane,
    labels: impl Fn(usize) -> Option<&'a LayerPlane>,
    layer_materials: impl Fn(usize) -> Option<&'a Plane<Material>>,
    search: &FillSearch,
    channels: usize,
) -> ComposedSlice {
    let (nx, ny) = (class.nx(), class.ny());
    let here = labels(z).expect("labels of the composed slice");
    let mats = layer_materials(z).expect("layer materials of the composed slice");
    let white = white(channels);
    let mut materials = Plane::filled(nx, ny, EXTERIOR);
    let mut source_layer = Plane::filled(nx, ny, NO_LAYER);
    let mut unresolved = 0;
    for y in 0..ny {
        for x in 0..nx {
            if !class.get(x, y).is_inside() {
                continue;
            }
            let l = *here.get(x, y);
            let (m, src) = match l {
                NO_LAYER => (white, NO_LAYER),
                BETWEEN_LAYERS => {
                    let found = search.offsets.iter().find_map(|o| {
                        let sz = z as i64 + o[2];
                        if sz < 0 {
                            return None;
                        }
                        let (ux, uy) = (x as i64 + o[0], y as i64 + o[1]);
                        let lab = *labels(sz as usize)?.get_signed(ux, uy)?;
                        if lab >= BETWEEN_LAYERS {
                            return None;
                        }
                        Some((*layer_materials(sz as usize)?.get_signed(ux, uy)?, lab))
                    });
                    found.unwrap_or_else(|| {
                        unresolved += 1;
                        (white, NO_LAYER)
                    })
                }
                _ => (*mats.get(x, y), l),
            };
            *materials.get_mut(x, y) = m;
            *source_layer.get_mut(x, y) = src;
        }
    }
    ComposedSlice { materials, source_layer, unresolved }
}
