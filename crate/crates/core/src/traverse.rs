//! Slice-by-slice traversal of one layer's voxels and mapping of 2D
//! error-diffusion filters into each voxel's tangent frame.

use crate::error::{Error, Result};
use crate::field::{DistanceToEmptyPlane, LayerPlane, FALLBACK_NORMAL};
use crate::grid::{GridSpec, Plane, RING8};

/// In-slice cell `(x, y)`.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Winding {
    Ccw,
    Cw,
}

impl Winding {
    pub fn reversed(self) -> Self {
        match self {
            Winding::Ccw => Winding::Cw,
            Winding::Cw => Winding::Ccw,
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalized(a: [f64; 3]) -> Option<[f64; 3]> {
    let len = dot(a, a).sqrt();
    (len > 1e-12).then(|| a.map(|c| c / len))
}

/// Orthonormal triad at a voxel, in index space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame {
    pub n: [f64; 3],
    pub f: [f64; 3],
    pub r: [f64; 3],
}

impl TangentFrame {
    /// `forward` is projected onto the plane normal to `n`; `r = n x f`,
    /// negated for clockwise winding. `None` if `forward` is parallel to `n`.
    pub fn new(n: [f64; 3], forward: [f64; 3], winding: Winding) -> Option<Self> {
        let n = normalized(n)?;
        let k = dot(forward, n);
        let f = normalized([forward[0] - k * n[0], forward[1] - k * n[1], forward[2] - k * n[2]])?;
        let mut r = cross(n, f);
        if winding == Winding::Cw {
            r = r.map(|c| -c);
        }
        Some(Self { n, f, r })
    }

    /// Tangent-plane coordinates `(along f, along r)` of an offset.
    pub fn project(&self, o: [f64; 3]) -> [f64; 2] {
        [dot(o, self.f), dot(o, self.r)]
    }
}

/// Physical normal to index space, where offsets are measured in voxels.
pub fn index_space_normal(spec: &GridSpec, n: [f64; 3]) -> [f64; 3] {
    let m = [n[0] * spec.pitch[0], n[1] * spec.pitch[1], n[2] * spec.pitch[2]];
    normalized(m).unwrap_or(FALLBACK_NORMAL)
}

/// One filter element: offset along the forward and lateral axes and weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub df: f64,
    pub dr: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filter2D {
    taps: Vec<Tap>,
}

impl Filter2D {
    pub fn new(taps: Vec<Tap>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Config("filter needs at least one element".into()));
        }
        if taps.iter().any(|t| !(t.w >= 0.0) || !t.df.is_finite() || !t.dr.is_finite()) {
            return Err(Error::Config("filter weights must be nonnegative and offsets finite".into()));
        }
        let sum: f64 = taps.iter().map(|t| t.w).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("filter weights sum to {sum}, expected 1")));
        }
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn floyd_steinberg() -> Self {
        let t = |df, dr, w: f64| Tap { df, dr, w: w / 16.0 };
        Self { taps: vec![t(1.0, 0.0, 7.0), t(-1.0, 1.0, 3.0), t(0.0, 1.0, 5.0), t(1.0, 1.0, 1.0)] }
    }
}

/// Candidates that keep the walk turning the same way around the slice:
/// the z component of `(u - v) x grad` is `>= 0` for CCW and `<= 0` for CW.
/// A zero gradient keeps everything.
pub fn candidate_filter(v: Cell, unvisited: &[Cell], grad: [i32; 2], winding: Winding) -> Vec<Cell> {
    if grad == [0, 0] {
        return unvisited.to_vec();
    }
    unvisited
        .iter()
        .copied()
        .filter(|&(x, y)| {
            let dx = x as i64 - v.0 as i64;
            let dy = y as i64 - v.1 as i64;
            let z = dx * grad[1] as i64 - dy * grad[0] as i64;
            match winding {
                Winding::Ccw => z >= 0,
                Winding::Cw => z <= 0,
            }
        })
        .collect()
}

fn cos_turn(prev: [i64; 2], mv: [i64; 2]) -> f64 {
    let d = (prev[0] * mv[0] + prev[1] * mv[1]) as f64;
    let l = (((prev[0] * prev[0] + prev[1] * prev[1]) * (mv[0] * mv[0] + mv[1] * mv[1])) as f64).sqrt();
    d / l
}

/// Next voxel of a walk: largest distance-to-empty on down-facing surfaces,
/// smallest otherwise. Ties prefer the smallest turn from `prev`, then the
/// smallest `(y, x)`.
pub fn next_voxel(v: Cell, cands: &[Cell], phi: impl Fn(Cell) -> u32, n_z: f64, prev: Option<[i64; 2]>) -> Option<Cell> {
    let score = |c: Cell| -> i64 {
        let p = phi(c) as i64;
        if n_z < 0.0 {
            p
        } else {
            -p
        }
    };
    let best = cands.iter().map(|&c| score(c)).max()?;
    let mut tied: Vec<Cell> = cands.iter().copied().filter(|&c| score(c) == best).collect();
    tied.sort_by(|a, b| {
        let turn = |c: &Cell| match prev {
            Some(p) => -cos_turn(p, [c.0 as i64 - v.0 as i64, c.1 as i64 - v.1 as i64]),
            None => 0.0,
        };
        turn(a).total_cmp(&turn(b)).then((a.1, a.0).cmp(&(b.1, b.0)))
    });
    tied.first().copied()
}

/// Per-voxel data consulted when choosing a start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartCandidate {
    pub cell: Cell,
    pub error_count: u32,
    pub phi: u32,
    pub n_z: f64,
}

/// Start of the next walk: restrict to the largest error count, then take
/// the largest distance-to-empty on down-facing voxels and the smallest on
/// the others, ties to the smallest `(y, x)`.
pub fn select_start(cands: &[StartCandidate]) -> Option<Cell> {
    let top = cands.iter().map(|c| c.error_count).max()?;
    let key = |c: &StartCandidate| if c.n_z < 0.0 { c.phi as i64 } else { -(c.phi as i64) };
    cands
        .iter()
        .filter(|c| c.error_count == top)
        .min_by(|a, b| key(b).cmp(&key(a)).then((a.cell.1, a.cell.0).cmp(&(b.cell.1, b.cell.0))))
        .map(|c| c.cell)
}

/// Winding opposite to the traversal direction that last diffused error
/// into the start voxel; CCW when unknown.
pub fn start_winding(last_in: [f32; 2], grad: [i32; 2]) -> Winding {
    let z = -(last_in[0] as f64) * grad[1] as f64 + (last_in[1] as f64) * grad[0] as f64;
    if z < 0.0 {
        Winding::Cw
    } else {
        Winding::Ccw
    }
}

/// Row axis of a serpentine scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanAxis {
    /// Rows run along x and advance in y.
    #[default]
    X,
    Y,
}

/// Boustrophedon order over `cells`: rows ascending, the first row running
/// toward +axis and each following row reversing. Also returns the row
/// direction (+1 / -1) of each cell.
pub fn serpentine_scan(cells: &[Cell], axis: ScanAxis) -> Vec<(Cell, i8)> {
    let (row_of, col_of): (fn(&Cell) -> usize, fn(&Cell) -> usize) = match axis {
        ScanAxis::X => (|c| c.1, |c| c.0),
        ScanAxis::Y => (|c| c.0, |c| c.1),
    };
    let mut sorted = cells.to_vec();
    sorted.sort_by_key(|c| (row_of(c), col_of(c)));
    sorted.dedup();
    let mut out = Vec::with_capacity(sorted.len());
    let mut forward = true;
    for row in sorted.chunk_by(|a, b| row_of(a) == row_of(b)) {
        if forward {
            out.extend(row.iter().map(|&c| (c, 1)));
        } else {
            out.extend(row.iter().rev().map(|&c| (c, -1)));
        }
        forward = !forward;
    }
    out
}

/// Match filter elements to neighbor offsets by symmetric closest points in
/// the tangent plane, within 1.5 voxels. Returns `(neighbor index, weight)`
/// pairs with renormalized weights, in filter order; empty if nothing matches.
pub fn map_filter(frame: &TangentFrame, filter: &Filter2D, neighbors: &[[i64; 3]]) -> Vec<(usize, f64)> {
    const RADIUS: f64 = 1.5;
    let proj: Vec<[f64; 2]> = neighbors.iter().map(|o| frame.project(o.map(|c| c as f64))).collect();
    let taps = filter.taps();
    let d2 = |t: &Tap, p: [f64; 2]| (t.df - p[0]).powi(2) + (t.dr - p[1]).powi(2);
    let nearest_nb = |t: &Tap| -> Option<usize> {
        (0..proj.len()).min_by(|&a, &b| d2(t, proj[a]).total_cmp(&d2(t, proj[b])))
    };
    let nearest_tap = |p: [f64; 2]| -> Option<usize> {
        (0..taps.len()).min_by(|&a, &b| d2(&taps[a], p).total_cmp(&d2(&taps[b], p)))
    };
    let mut matched = Vec::new();
    for (ti, t) in taps.iter().enumerate() {
        let Some(ni) = nearest_nb(t) else { break };
        if nearest_tap(proj[ni]) == Some(ti) && d2(t, proj[ni]) <= RADIUS * RADIUS && t.w > 0.0 {
            matched.push((ni, t.w));
        }
    }
    let sum: f64 = matched.iter().map(|m| m.1).sum();
    if sum <= 0.0 {
        return Vec::new();
    }
    for m in &mut matched {
        m.1 /= sum;
    }
    matched
}

/// Receiver of a diffusion step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub x: usize,
    pub y: usize,
    /// In slice `s + 1` rather than `s`.
    pub next: bool,
}

/// One visited voxel: its frame and the offsets of the voxels that may
/// receive error (unvisited same-layer voxels of the slice, and same-layer
/// voxels of the slice above).
#[derive(Debug, Clone, Copy)]
pub struct Visit<'a> {
    pub cell: Cell,
    pub rank: usize,
    pub frame: TangentFrame,
    pub neighbors: &'a [[i64; 3]],
}

impl Visit<'_> {
    pub fn target(&self, i: usize) -> Target {
        let o = self.neighbors[i];
        Target { x: (self.cell.0 as i64 + o[0]) as usize, y: (self.cell.1 as i64 + o[1]) as usize, next: o[2] == 1 }
    }

    /// `(neighbor index, weight)` pairs of `filter` mapped at this voxel.
    pub fn map(&self, filter: &Filter2D) -> Vec<(usize, f64)> {
        map_filter(&self.frame, filter, self.neighbors)
    }
}

/// Read-only inputs of one layer in one slice.
#[derive(Debug, Clone, Copy)]
pub struct LayerSliceView<'a> {
    pub spec: &'a GridSpec,
    pub layer: u8,
    pub labels: &'a LayerPlane,
    pub labels_next: Option<&'a LayerPlane>,
    pub dte: &'a DistanceToEmptyPlane,
    /// Physical unit normals; `None` falls back to +z.
    pub normals: &'a Plane<Option<[f64; 3]>>,
}

impl LayerSliceView<'_> {
    fn member(&self, x: i64, y: i64) -> bool {
        self.labels.get_signed(x, y) == Some(&self.layer)
    }

    fn member_next(&self, x: i64, y: i64) -> bool {
        self.labels_next.and_then(|p| p.get_signed(x, y)) == Some(&self.layer)
    }

    fn normal(&self, c: Cell) -> [f64; 3] {
        self.normals.get(c.0, c.1).unwrap_or(FALLBACK_NORMAL)
    }
}

/// Counters from traversals; the audit fields stay zero in a correct run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraversalStats {
    pub members: u64,
    pub visits: u64,
    pub walks: u64,
    pub serpentine_components: u64,
    pub reversals: u64,
    /// Visits whose filter mapping came back empty.
    pub dropped: u64,
    /// Audit: voxels visited more than once.
    pub double_visits: u64,
    /// Audit: weight sent to an already visited voxel.
    pub to_visited: u64,
    /// Audit: weight sent outside the layer or below the current slice.
    pub to_foreign: u64,
}

impl TraversalStats {
    pub fn merge(&mut self, o: &TraversalStats) {
        self.members += o.members;
        self.visits += o.visits;
        self.walks += o.walks;
        self.serpentine_components += o.serpentine_components;
        self.reversals += o.reversals;
        self.dropped += o.dropped;
        self.double_visits += o.double_visits;
        self.to_visited += o.to_visited;
        self.to_foreign += o.to_foreign;
    }

    pub fn audit_clean(&self) -> bool {
        self.members == self.visits && self.double_visits == 0 && self.to_visited == 0 && self.to_foreign == 0
    }
}

/// Traversal bookkeeping of one layer, carried from slice to slice.
#[derive(Debug, Clone)]
pub struct TraversalState {
    visited: Plane<bool>,
    count: Plane<u32>,
    last_in: Plane<[f32; 2]>,
    next_count: Plane<u32>,
    next_last_in: Plane<[f32; 2]>,
    pub audit: bool,
    pub stats: TraversalStats,
}

impl TraversalState {
    pub fn new(nx: usize, ny: usize) -> Self {
        Self {
            visited: Plane::filled(nx, ny, false),
            count: Plane::filled(nx, ny, 0),
            last_in: Plane::filled(nx, ny, [0.0; 2]),
            next_count: Plane::filled(nx, ny, 0),
            next_last_in: Plane::filled(nx, ny, [0.0; 2]),
            audit: false,
            stats: TraversalStats::default(),
        }
    }

    /// Error receipts from the previous slice.
    pub fn error_count(&self, x: usize, y: usize) -> u32 {
        *self.count.get(x, y)
    }

    pub fn last_in_direction(&self, x: usize, y: usize) -> [f32; 2] {
        *self.last_in.get(x, y)
    }

    /// Move to the following slice: receipts for `s + 1` become current.
    pub fn advance(&mut self) {
        std::mem::swap(&mut self.count, &mut self.next_count);
        std::mem::swap(&mut self.last_in, &mut self.next_last_in);
        self.next_count.as_mut_slice().fill(0);
        self.next_last_in.as_mut_slice().fill([0.0; 2]);
        self.visited.as_mut_slice().fill(false);
    }

    pub fn byte_size(&self) -> usize {
        self.visited.byte_size() + 2 * (self.count.byte_size() + self.last_in.byte_size())
    }

    /// Traverse the layer's voxels in the current slice, calling `visit` once
    /// per voxel in traversal order.
    ///
    /// `visit` returns a bit mask over `Visit::neighbors` of the voxels that
    /// actually received error; receipts in the slice above are counted.
    pub fn traverse_slice(&mut self, view: &LayerSliceView<'_>, mut visit: impl FnMut(Visit<'_>) -> u32) {
        let (nx, ny) = (view.labels.nx(), view.labels.ny());
        let mut remaining: Vec<Cell> = Vec::new();
        for y in 0..ny {
            for x in 0..nx {
                if *view.labels.get(x, y) == view.layer {
                    remaining.push((x, y));
                }
            }
        }
        self.stats.members += remaining.len() as u64;
        let mut left = remaining.len();
        let mut rank = 0usize;
        let mut offsets = Vec::with_capacity(17);
        while left > 0 {
            let starts: Vec<StartCandidate> = remaining
                .iter()
                .filter(|c| !*self.visited.get(c.0, c.1))
                .map(|&cell| StartCandidate {
                    cell,
                    error_count: *self.count.get(cell.0, cell.1),
                    phi: view.dte.phi(cell.0, cell.1),
                    n_z: view.normal(cell)[2],
                })
                .collect();
            remaining.retain(|c| !*self.visited.get(c.0, c.1));
            let Some(start) = select_start(&starts) else { break };
            let comp = self.component(view, start);
            let birth = comp.iter().all(|c| *self.count.get(c.0, c.1) == 0);
            let death = comp.iter().all(|c| {
                RING8.iter().chain(std::iter::once(&[0, 0])).all(|o| !view.member_next(c.0 as i64 + o[0], c.1 as i64 + o[1]))
            });
            if birth || death {
                self.stats.serpentine_components += 1;
                for (cell, dir) in serpentine_scan(&comp, ScanAxis::X) {
                    // a plain 2D scan: the frame lies in the slice, whatever the normal
                    let d = dir as f64;
                    let frame = TangentFrame { n: [0.0, 0.0, d], f: [d, 0.0, 0.0], r: [0.0, 1.0, 0.0] };
                    self.visit_one(view, cell, frame, rank, &mut offsets, &mut visit);
                    rank += 1;
                    left -= 1;
                }
                continue;
            }
            self.stats.walks += 1;
            let grad0 = view.dte.grad(start.0, start.1);
            let mut winding = start_winding(*self.last_in.get(start.0, start.1), grad0);
            if candidate_filter(start, &self.unvisited_ring(view, start), grad0, winding).is_empty() {
                winding = winding.reversed();
                self.stats.reversals += 1;
            }
            let mut v = start;
            let mut prev: Option<[i64; 2]> = None;
            loop {
                let grad = view.dte.grad(v.0, v.1);
                let n_phys = view.normal(v);
                let cands = candidate_filter(v, &self.unvisited_ring(view, v), grad, winding);
                let next = next_voxel(v, &cands, |c| view.dte.phi(c.0, c.1), n_phys[2], prev);
                let mv = match (next, prev) {
                    (Some(w), _) => [w.0 as i64 - v.0 as i64, w.1 as i64 - v.1 as i64],
                    (None, Some(p)) => p,
                    (None, None) => tangent_of(grad, winding),
                };
                let n = index_space_normal(view.spec, n_phys);
                let frame = TangentFrame::new(n, [mv[0] as f64, mv[1] as f64, 0.0], winding)
                    .or_else(|| TangentFrame::new(n, [0.0, 0.0, 1.0], winding))
                    .expect("a horizontal and the vertical direction cannot both be parallel to the normal");
                self.visit_one(view, v, frame, rank, &mut offsets, &mut visit);
                rank += 1;
                left -= 1;
                match next {
                    Some(w) => {
                        prev = Some([w.0 as i64 - v.0 as i64, w.1 as i64 - v.1 as i64]);
                        v = w;
                    }
                    None => break,
                }
            }
        }
    }

    fn unvisited_ring(&self, view: &LayerSliceView<'_>, v: Cell) -> Vec<Cell> {
        RING8
            .iter()
            .filter_map(|o| {
                let (x, y) = (v.0 as i64 + o[0], v.1 as i64 + o[1]);
                (view.member(x, y) && !*self.visited.get(x as usize, y as usize)).then_some((x as usize, y as usize))
            })
            .collect()
    }

    /// 8-connected unvisited layer voxels reachable from `start`.
    fn component(&self, view: &LayerSliceView<'_>, start: Cell) -> Vec<Cell> {
        let mut seen = std::collections::HashSet::from([start]);
        let mut stack = vec![start];
        let mut out = Vec::new();
        while let Some(c) = stack.pop() {
            out.push(c);
            for u in self.unvisited_ring(view, c) {
                if seen.insert(u) {
                    stack.push(u);
                }
            }
        }
        out
    }

    fn visit_one(
        &mut self,
        view: &LayerSliceView<'_>,
        cell: Cell,
        frame: TangentFrame,
        rank: usize,
        offsets: &mut Vec<[i64; 3]>,
        visit: &mut impl FnMut(Visit<'_>) -> u32,
    ) {
        if *self.visited.get(cell.0, cell.1) {
            self.stats.double_visits += 1;
        }
        *self.visited.get_mut(cell.0, cell.1) = true;
        self.stats.visits += 1;
        offsets.clear();
        for o in RING8 {
            let (x, y) = (cell.0 as i64 + o[0], cell.1 as i64 + o[1]);
            if view.member(x, y) && !*self.visited.get(x as usize, y as usize) {
                offsets.push([o[0], o[1], 0]);
            }
        }
        for o in RING8.iter().chain(std::iter::once(&[0, 0])) {
            if view.member_next(cell.0 as i64 + o[0], cell.1 as i64 + o[1]) {
                offsets.push([o[0], o[1], 1]);
            }
        }
        let v = Visit { cell, rank, frame, neighbors: offsets };
        let received = visit(v);
        if received == 0 {
            self.stats.dropped += 1;
        }
        for i in (0..offsets.len()).filter(|i| received & (1 << i) != 0) {
            let t = v.target(i);
            if self.audit {
                if t.next {
                    if !view.member_next(t.x as i64, t.y as i64) {
                        self.stats.to_foreign += 1;
                    }
                } else if !view.member(t.x as i64, t.y as i64) {
                    self.stats.to_foreign += 1;
                } else if *self.visited.get(t.x, t.y) {
                    self.stats.to_visited += 1;
                }
            }
            if t.next {
                *self.next_count.get_mut(t.x, t.y) += 1;
                *self.next_last_in.get_mut(t.x, t.y) = [frame.f[0] as f32, frame.f[1] as f32];
            }
        }
    }
}

/// In-slice direction along the level lines of `grad` for the given winding.
fn tangent_of(grad: [i32; 2], winding: Winding) -> [i64; 2] {
    if grad == [0, 0] {
        return [1, 0];
    }
    let t = [grad[1] as i64, -(grad[0] as i64)];
    match winding {
        Winding::Ccw => t,
        Winding::Cw => [-t[0], -t[1]],
    }
}

/// 8-bit PGM of visit ranks (`rank` plane, `u32::MAX` = not visited) scaled
/// to 1..=255; unvisited voxels are 0.
pub fn write_order_pgm(path: &std::path::Path, rank: &Plane<u32>) -> Result<()> {
    let max = rank.as_slice().iter().filter(|&&r| r != u32::MAX).max().copied().unwrap_or(0) as f64;
    let mut buf = format!("P5\n{} {}\n255\n", rank.nx(), rank.ny()).into_bytes();
    for &r in rank.as_slice() {
        buf.push(if r == u32::MAX { 0 } else if max == 0.0 { 255 } else { 1 + (254.0 * r as f64 / max).round() as u8 });
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
