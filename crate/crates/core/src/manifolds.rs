//! Strong unstable and stable leaves, stable holonomy, and the two
//! resolution-level tests built on them (stability probe, saturation check).
//!
//! Leaves are graphs over straight base leaves. A node over the base point
//! `x₀ + t·v` is computed by the graph transform: pull `t` back `n` steps
//! (`A^{-n}(x₀ + t v) = x_{−n} + t μ^{−n} v`), start at the reference fiber,
//! and push forward. Fibers are tracked as offsets `ℓ` from a reference orbit
//! using the system's difference primitives, so nodes keep full relative
//! precision however close the pulled-back points are to the reference.
//!
//! Reference orbits (periodic anchors or float backward orbits) are
//! pseudo-orbits; each link's residual enters both the reference and the
//! tracked point identically and is not propagated.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::circle::{invert_monotone, periodic_orbits, solve_increasing, OrbitClass};
use crate::circle::{DEFAULT_MAX_PERIOD, DEFAULT_MULTIPLIER_TOL};
use crate::error::{Error, Result};
use crate::limitsets::{CellSet, Grid3};
use crate::seed::{self, Stream};
use crate::skew::{composite_fiber_map, Invertible, PointX, SkewSystem};
use crate::torus::{circle_distance, wrap, LeafKind, TorusPoint};

/// A periodic point of `F` sitting over a periodic base point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiberPeriodicPoint {
    pub base: TorusPoint,
    pub fiber: f64,
    /// Period of `base` under `A`.
    pub base_period: usize,
    /// Period of `fiber` under the composite fiber map over `base`.
    pub fiber_period: usize,
    pub class: OrbitClass,
    pub multiplier: f64,
    /// `F^j(base, fiber)` for `j < base_period · fiber_period`.
    #[serde(skip)]
    pub orbit: Vec<PointX>,
}

impl FiberPeriodicPoint {
    pub fn point(&self) -> PointX {
        PointX {
            base: self.base,
            fiber: self.fiber,
        }
    }

    pub fn period(&self) -> usize {
        self.orbit.len()
    }

    /// Largest circle distance between `F^{period}` of the point and the point.
    pub fn closing_error<S: SkewSystem + ?Sized>(&self, system: &S) -> f64 {
        let last = self.orbit[self.orbit.len() - 1];
        let back = system.fiber_lift(last.base, last.fiber);
        circle_distance(back, self.fiber)
    }
}

/// All periodic points of `g_p = f_{A^{k−1}p} ∘ ⋯ ∘ f_p` as points of `X`.
pub fn fiberwise_periodic_points<S: SkewSystem + ?Sized>(
    system: &S,
    p: TorusPoint,
    k: usize,
) -> Result<Vec<FiberPeriodicPoint>> {
    let base_orbit = system.base().base_orbit(p, k as u32)?;
    let g = composite_fiber_map(system, p, k)?;
    let ms = periodic_orbits(&g, DEFAULT_MAX_PERIOD, DEFAULT_MULTIPLIER_TOL)?;
    let mut out = Vec::new();
    for o in &ms.orbits {
        for &y in &o.points {
            let mut orbit = Vec::with_capacity(k * o.period);
            let mut v = y;
            for _ in 0..o.period {
                for &x in &base_orbit {
                    orbit.push(PointX { base: x, fiber: v });
                    v = wrap(system.fiber_lift(x, v));
                }
            }
            out.push(FiberPeriodicPoint {
                base: base_orbit[0],
                fiber: y,
                base_period: k,
                fiber_period: o.period,
                class: o.class,
                multiplier: o.multiplier,
                orbit,
            });
        }
    }
    out.sort_by(|a, b| a.fiber.total_cmp(&b.fiber));
    Ok(out)
}

/// Points `F^{−m}(x₀)` for `m ≥ 0`, as a cycle or a finite list.
#[derive(Debug, Clone)]
pub struct BackwardOrbit {
    points: Vec<PointX>,
    cyclic: bool,
}

impl BackwardOrbit {
    /// Backward orbit of a periodic point from its forward orbit `F^j`, `j < P`.
    pub fn periodic(forward: &[PointX]) -> Self {
        let n = forward.len();
        BackwardOrbit {
            points: (0..n).map(|m| forward[(n - m) % n]).collect(),
            cyclic: true,
        }
    }

    /// Forward orbit of a periodic point read as the backward orbit of `F⁻¹`.
    pub fn periodic_reversed(forward: &[PointX]) -> Self {
        BackwardOrbit {
            points: forward.to_vec(),
            cyclic: true,
        }
    }

    /// Float backward orbit of an arbitrary point, `depth + 1` points.
    pub fn iterate<S: SkewSystem + ?Sized>(system: &S, x0: PointX, depth: usize) -> Self {
        let mut points = Vec::with_capacity(depth + 1);
        let mut p = x0;
        points.push(p);
        for _ in 0..depth {
            p = system.step_inverse(p);
            points.push(p);
        }
        BackwardOrbit {
            points,
            cyclic: false,
        }
    }

    #[inline]
    pub fn at(&self, m: usize) -> PointX {
        if self.cyclic {
            self.points[m % self.points.len()]
        } else {
            self.points[m]
        }
    }

    pub fn max_depth(&self) -> usize {
        if self.cyclic {
            usize::MAX
        } else {
            self.points.len() - 1
        }
    }

    pub fn origin(&self) -> PointX {
        self.points[0]
    }
}

/// Fiber offset after pushing `ℓ = 0` at depth `n` forward to time 0.
pub fn graph_transform_chain<S: SkewSystem + ?Sized>(
    system: &S,
    reference: &BackwardOrbit,
    t: f64,
    n: usize,
) -> f64 {
    let base = system.base();
    let inv_mu = 1.0 / base.mu_u();
    let v = base.v_u();
    let mut ell = 0.0;
    for m in (1..=n).rev() {
        let r = reference.at(m);
        let d = t * inv_mu.powi(m as i32);
        let dx = [d * v[0], d * v[1]];
        ell = system.fiber_base_variation(r.base, dx, r.fiber + ell)
            + system.fiber_increment(r.base, r.fiber, ell);
    }
    ell
}

/// Graph-transform limit over `x₀ + t·v_u`: `(offset ℓ, depth used)`.
///
/// Depth starts where `|t|·λ_u^{−n} ≤ 10⁻³` and grows until two depths agree
/// to `node_tol / 20`.
pub fn unstable_offset<S: SkewSystem + ?Sized>(
    system: &S,
    reference: &BackwardOrbit,
    t: f64,
    node_tol: f64,
    depth_cap: usize,
) -> Result<(f64, usize)> {
    if t == 0.0 {
        return Ok((0.0, 0));
    }
    let cap = depth_cap.min(reference.max_depth());
    let lam = system.base().lambda_u();
    let mut n = ((t.abs() / 1e-3).ln() / lam.ln()).ceil().max(1.0) as usize;
    n = n.min(cap.saturating_sub(2)).max(1);
    let mut prev = graph_transform_chain(system, reference, t, n);
    let mut residual = f64::INFINITY;
    while n + 2 <= cap {
        n += 2;
        let cur = graph_transform_chain(system, reference, t, n);
        residual = (cur - prev).abs();
        if residual <= 0.05 * node_tol {
            return Ok((cur, n));
        }
        prev = cur;
    }
    Err(Error::NoConvergence {
        what: "unstable graph transform",
        residual,
        depth: n,
    })
}

/// One node of a leaf graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeafNode {
    /// Arclength along the base leaf from the anchor.
    pub t: f64,
    pub point: PointX,
    /// Unwrapped fiber coordinate, continuous in `t`.
    pub lift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeafParams {
    pub arclength_cap: f64,
    /// Largest allowed cover distance between consecutive nodes.
    pub max_seg: f64,
    pub node_tol: f64,
    pub depth_cap: usize,
}

impl Default for LeafParams {
    fn default() -> Self {
        LeafParams {
            arclength_cap: 2.0,
            max_seg: 1.0 / 128.0,
            node_tol: 1e-8,
            depth_cap: 200,
        }
    }
}

impl LeafParams {
    /// Defaults with `max_seg = 1/(4·n_base)`.
    pub fn for_grid(grid: Grid3) -> Self {
        LeafParams {
            max_seg: 1.0 / (4.0 * grid.n_base as f64),
            ..LeafParams::default()
        }
    }
}

/// `W^u` or `W^s` of a fiberwise periodic point as a graph over its base leaf.
#[derive(Debug, Clone, Serialize)]
pub struct LeafGraph {
    pub anchor: FiberPeriodicPoint,
    pub kind: LeafKind,
    pub nodes: Vec<LeafNode>,
    /// Largest graph-transform depth used by any node.
    pub convergence_n: usize,
    pub params: LeafParams,
}

impl LeafGraph {
    pub fn cells(&self, grid: Grid3) -> CellSet {
        CellSet::from_indices(grid, self.nodes.iter().map(|n| grid.cell_of(&n.point)))
    }

    pub fn extent(&self) -> (f64, f64) {
        (
            self.nodes.first().map_or(0.0, |n| n.t),
            self.nodes.last().map_or(0.0, |n| n.t),
        )
    }
}

/// Computes nodes of one leaf for a fixed system, reference and direction.
struct LeafBuilder<'a, S: ?Sized> {
    system: &'a S,
    reference: BackwardOrbit,
    origin: PointX,
    dir: [f64; 2],
    params: LeafParams,
}

impl<S: SkewSystem + ?Sized> LeafBuilder<'_, S> {
    fn node(&self, t: f64) -> Result<(LeafNode, usize)> {
        let (ell, depth) =
            unstable_offset(self.system, &self.reference, t, self.params.node_tol, self.params.depth_cap)?;
        let lift = self.origin.fiber + ell;
        Ok((
            LeafNode {
                t,
                point: PointX {
                    base: self.origin.base.translate([t * self.dir[0], t * self.dir[1]]),
                    fiber: wrap(lift),
                },
                lift,
            },
            depth,
        ))
    }

    /// Nodes covering `[t0, t1]` (increasing), subdivided until consecutive
    /// cover distance ≤ `max_seg`.
    fn segment(&self, t0: f64, t1: f64) -> Result<(Vec<LeafNode>, usize)> {
        let h = self.params.max_seg;
        let n = (((t1 - t0) / h).ceil() as usize).max(1);
        let ts: Vec<f64> = (0..=n).map(|i| t0 + (t1 - t0) * i as f64 / n as f64).collect();
        let computed: Result<Vec<(LeafNode, usize)>> = ts.par_iter().map(|&t| self.node(t)).collect();
        let computed = computed?;
        let mut depth = computed.iter().map(|c| c.1).max().unwrap_or(0);
        let mut nodes: Vec<LeafNode> = computed.into_iter().map(|c| c.0).collect();
        loop {
            let gaps: Vec<usize> = (0..nodes.len() - 1)
                .filter(|&i| {
                    let (a, b) = (nodes[i], nodes[i + 1]);
                    (b.t - a.t).hypot(b.lift - a.lift) > h && b.t - a.t > 1e-12
                })
                .collect();
            if gaps.is_empty() {
                break;
            }
            let mids: Result<Vec<(LeafNode, usize)>> = gaps
                .par_iter()
                .map(|&i| self.node(0.5 * (nodes[i].t + nodes[i + 1].t)))
                .collect();
            let mids = mids?;
            let mut merged = Vec::with_capacity(nodes.len() + mids.len());
            let mut gi = 0;
            for (i, node) in nodes.iter().enumerate() {
                merged.push(*node);
                if gi < gaps.len() && gaps[gi] == i {
                    merged.push(mids[gi].0);
                    depth = depth.max(mids[gi].1);
                    gi += 1;
                }
            }
            nodes = merged;
        }
        Ok((nodes, depth))
    }
}

fn builder_for<'a, S: SkewSystem + ?Sized>(
    system: &'a S,
    reference: BackwardOrbit,
    params: LeafParams,
) -> LeafBuilder<'a, S> {
    LeafBuilder {
        system,
        origin: reference.origin(),
        reference,
        dir: system.base().v_u(),
        params,
    }
}

fn graph_from_builder<S: SkewSystem + ?Sized>(
    b: &LeafBuilder<'_, S>,
    anchor: &FiberPeriodicPoint,
    kind: LeafKind,
) -> Result<LeafGraph> {
    let half = 0.5 * b.params.arclength_cap;
    let (nodes, depth) = if half > 0.0 {
        b.segment(-half, half)?
    } else {
        let (n, d) = b.node(0.0)?;
        (vec![n], d)
    };
    Ok(LeafGraph {
        anchor: anchor.clone(),
        kind,
        nodes,
        convergence_n: depth,
        params: b.params,
    })
}

/// `W^u(anchor)` (graph transform of `F`) or `W^s(anchor)` (graph transform of `F⁻¹`),
/// centered at the anchor with total arclength `params.arclength_cap`.
pub fn leaf_graph<S: Invertible>(
    system: &S,
    anchor: &FiberPeriodicPoint,
    kind: LeafKind,
    params: LeafParams,
) -> Result<LeafGraph> {
    match kind {
        LeafKind::Unstable => {
            let b = builder_for(system, BackwardOrbit::periodic(&anchor.orbit), params);
            graph_from_builder(&b, anchor, kind)
        }
        LeafKind::Stable => {
            let inv = system.inverse_system();
            let b = builder_for(&inv, BackwardOrbit::periodic_reversed(&anchor.orbit), params);
            graph_from_builder(&b, anchor, kind)
        }
    }
}

/// Node of `W^u(anchor)` over `anchor.base + t·v_u`.
pub fn unstable_node<S: SkewSystem + ?Sized>(
    system: &S,
    anchor: &FiberPeriodicPoint,
    t: f64,
    params: LeafParams,
) -> Result<LeafNode> {
    let b = builder_for(system, BackwardOrbit::periodic(&anchor.orbit), params);
    Ok(b.node(t)?.0)
}

/// Grid surrogate of the closure of a leaf.
#[derive(Debug, Clone)]
pub struct ClosureEstimate {
    pub cells: CellSet,
    /// Arclength explored on each side of the anchor.
    pub extent: f64,
    /// Whether growth stopped by stalling rather than by exhausting the budget.
    pub converged: bool,
    pub budget: f64,
}

impl ClosureEstimate {
    pub fn require_converged(&self) -> Result<&CellSet> {
        if self.converged {
            Ok(&self.cells)
        } else {
            Err(Error::BudgetExhausted {
                budget: self.budget,
            })
        }
    }
}

/// Grow `graph` outward on both sides until `stall_length` further arclength
/// adds no new cell on either side, or total arclength reaches `budget`.
pub fn closure_estimate<S: Invertible>(
    system: &S,
    graph: &LeafGraph,
    grid: Grid3,
    stall_length: f64,
    budget: f64,
) -> Result<ClosureEstimate> {
    match graph.kind {
        LeafKind::Unstable => {
            let b = builder_for(system, BackwardOrbit::periodic(&graph.anchor.orbit), graph.params);
            grow_closure(&b, graph, grid, stall_length, budget)
        }
        LeafKind::Stable => {
            let inv = system.inverse_system();
            let b = builder_for(&inv, BackwardOrbit::periodic_reversed(&graph.anchor.orbit), graph.params);
            grow_closure(&b, graph, grid, stall_length, budget)
        }
    }
}

fn grow_closure<S: SkewSystem + ?Sized>(
    b: &LeafBuilder<'_, S>,
    graph: &LeafGraph,
    grid: Grid3,
    stall_length: f64,
    budget: f64,
) -> Result<ClosureEstimate> {
    let mut cells = graph.cells(grid);
    let (lo, hi) = graph.extent();
    let mut extent = hi.max(-lo);
    let mut last_new = [extent, extent];
    let chunk = (256.0 * b.params.max_seg).max(0.25);
    let mut active = [stall_length > 0.0; 2];
    while active.iter().any(|&a| a) {
        if 2.0 * extent >= budget {
            return Ok(ClosureEstimate {
                cells,
                extent,
                converged: false,
                budget,
            });
        }
        let next = extent + chunk;
        for side in 0..2 {
            if !active[side] {
                continue;
            }
            let (mut seg, _) = if side == 0 {
                b.segment(extent, next)?
            } else {
                b.segment(-next, -extent)?
            };
            if side == 1 {
                seg.reverse();
            }
            let newest = seg
                .iter()
                .filter(|n| cells.insert(grid.cell_of(&n.point)))
                .map(|n| n.t.abs())
                .reduce(f64::max);
            if let Some(t) = newest {
                if t > last_new[side] {
                    last_new[side] = t;
                }
            }
            if next - last_new[side] >= stall_length {
                active[side] = false;
            }
        }
        extent = next;
    }
    Ok(ClosureEstimate {
        cells,
        extent,
        converged: true,
        budget,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolonomyParams {
    pub depth_cap: usize,
    pub tol: f64,
    /// Largest integer translate searched when locating `z` on the stable leaf.
    pub shift_cap: i64,
}

impl Default for HolonomyParams {
    fn default() -> Self {
        HolonomyParams {
            depth_cap: 300,
            tol: 1e-10,
            shift_cap: 50,
        }
    }
}

/// Result of a stable-holonomy computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Holonomy {
    /// Fiber value over `p` on the stable leaf of `z`.
    pub y: f64,
    /// Stable coordinate of `base(z)` relative to `p`.
    pub s: f64,
    pub depth: usize,
    /// `dist(F^30(p, y), F^30(z))` from an independent forward iteration.
    pub verification: f64,
}

/// Base orbit of `p` for `n` steps, exact when `p` is periodic with small period.
fn base_orbit_prefix<S: SkewSystem + ?Sized>(system: &S, p: TorusPoint, n: usize) -> Vec<TorusPoint> {
    let a = system.base();
    for k in 1..=24u32 {
        if let Ok(cycle) = a.base_orbit(p, k) {
            return (0..n).map(|j| cycle[j % cycle.len()]).collect();
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut x = p;
    for _ in 0..n {
        out.push(x);
        x = a.apply(x);
    }
    out
}

/// `Λ(y) = (H_z^N)^{−1}(H_p^N(y))`: the fiber over `z` whose `N`-th image meets the
/// `N`-th image of `(p, y)`, with its derivative.
fn holonomy_map<S: SkewSystem + ?Sized>(
    system: &S,
    orbit: &[TorusPoint],
    deltas: &[[f64; 2]],
    y: f64,
) -> (f64, f64) {
    let n = deltas.len();
    let mut v = Vec::with_capacity(n);
    let mut log_d = 0.0;
    let mut vj = y;
    for &x in orbit.iter().take(n) {
        v.push(vj);
        log_d += system.fiber_derivative(x, vj).ln();
        vj = system.fiber_lift(x, vj);
    }
    let mut ell = 0.0;
    for j in (0..n).rev() {
        let (x, dx, vj) = (orbit[j], deltas[j], v[j]);
        let xz = x.translate(dx);
        let bv0 = system.fiber_base_variation(x, dx, vj);
        let target = ell;
        let phi = |e: f64| {
            (
                system.fiber_base_variation(x, dx, vj + e) + system.fiber_increment(x, vj, e),
                system.fiber_derivative(xz, vj + e),
            )
        };
        let guess = (target - bv0) / system.fiber_derivative(x, vj);
        let width = 2.0 * (guess.abs() + (target - bv0).abs()) + 1e-300;
        let (mut lo, mut hi) = (guess - width, guess + width);
        let mut grow = 0;
        while phi(lo).0 > target && grow < 60 {
            lo -= (hi - lo) * 2.0;
            grow += 1;
        }
        while phi(hi).0 < target && grow < 120 {
            hi += (hi - lo) * 2.0;
            grow += 1;
        }
        ell = solve_increasing(phi, target, lo, hi);
        log_d -= system.fiber_derivative(xz, vj + ell).ln();
    }
    (y + ell, log_d.exp())
}

/// The fiber value `y` over `p` with `(p, y)` on the stable leaf of `z`.
///
/// For trial `y` the orbit of `(p, y)` is computed forward `N` steps; the
/// fiber above `z` meeting it at time `N` is found backward with the
/// difference primitives. This is a degree-one increasing function of `y`,
/// inverted at `fiber(z)`; `N` grows by 10 until successive answers agree to `tol`.
pub fn stable_holonomy<S: SkewSystem + ?Sized>(
    system: &S,
    z: PointX,
    p: TorusPoint,
    params: HolonomyParams,
) -> Result<Holonomy> {
    let a = system.base();
    let s = a
        .stable_coordinate(p, z.base, params.shift_cap)
        .ok_or(Error::NotOnStableLeaf)?;
    let cap = params.depth_cap.max(10);
    let orbit = base_orbit_prefix(system, p, cap.max(30) + 1);
    let mu = a.mu_s();
    let vs = a.v_s();
    let deltas_all: Vec<[f64; 2]> = (0..=cap)
        .map(|j| {
            let d = s * mu.powi(j as i32);
            [d * vs[0], d * vs[1]]
        })
        .collect();
    let solve = |n: usize| {
        invert_monotone(|y| holonomy_map(system, &orbit, &deltas_all[..n], y), z.fiber)
    };
    let mut n = 10;
    let mut prev = solve(n);
    loop {
        if n + 10 > cap {
            return Err(Error::NoConvergence {
                what: "stable holonomy",
                residual: f64::NAN,
                depth: n,
            });
        }
        n += 10;
        let cur = solve(n);
        if (cur - prev).abs() < params.tol {
            let y = wrap(cur);
            let verification = forward_gap(system, &orbit, &deltas_all, y, z.fiber, 30);
            return Ok(Holonomy {
                y,
                s,
                depth: n,
                verification,
            });
        }
        prev = cur;
    }
}

/// Chebyshev distance between `F^n(p, y)` and `F^n(z)`, fibers iterated directly
/// in absolute coordinates over the analytic base positions.
fn forward_gap<S: SkewSystem + ?Sized>(
    system: &S,
    orbit: &[TorusPoint],
    deltas: &[[f64; 2]],
    y: f64,
    yz: f64,
    n: usize,
) -> f64 {
    let (mut a, mut b) = (y, yz);
    for j in 0..n {
        a = wrap(system.fiber_lift(orbit[j], a));
        b = wrap(system.fiber_lift(orbit[j].translate(deltas[j]), b));
    }
    let d = deltas[n];
    circle_distance(a, b).max(d[0].abs()).max(d[1].abs())
}

/// Point-to-set distance for the closed union of a cell set's boxes, with a
/// per-cell precomputed inside/outside/ambiguous classification for one `eps`.
pub struct Neighborhood {
    grid: Grid3,
    eps: f64,
    class: Vec<u8>,
    candidates: Vec<Vec<u32>>,
    slot: Vec<u32>,
}

const INSIDE: u8 = 0;
const OUTSIDE: u8 = 1;
const AMBIGUOUS: u8 = 2;

/// Distance from `p` to the closed box of cell `idx` under the flat metric.
fn box_distance(grid: Grid3, idx: usize, p: &PointX) -> f64 {
    let c = grid.center(idx);
    let h = grid.spacing();
    let b = c.base.delta_to(p.base);
    let f = crate::torus::circle_delta(c.fiber, p.fiber);
    let d0 = (b[0].abs() - 0.5 * h[0]).max(0.0);
    let d1 = (b[1].abs() - 0.5 * h[1]).max(0.0);
    let d2 = (f.abs() - 0.5 * h[2]).max(0.0);
    (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
}

impl Neighborhood {
    pub fn new(set: &CellSet, eps: f64) -> Self {
        let grid = set.grid();
        let h = grid.spacing();
        let hd = 0.5 * grid.cell_diagonal();
        let centers = center_distance_field(set);
        let mut class = vec![OUTSIDE; grid.n_cells()];
        let mut slot = vec![u32::MAX; grid.n_cells()];
        let mut candidates = Vec::new();
        let reach = eps + 2.0 * hd;
        let r = [
            ((reach / h[0]).ceil() as isize).min(grid.n_base as isize / 2),
            ((reach / h[1]).ceil() as isize).min(grid.n_base as isize / 2),
            ((reach / h[2]).ceil() as isize).min(grid.n_fiber as isize / 2),
        ];
        for c in 0..grid.n_cells() {
            let dc = centers[c];
            class[c] = if set.contains(c) || dc + hd <= eps {
                INSIDE
            } else if dc - 2.0 * hd > eps {
                OUTSIDE
            } else {
                AMBIGUOUS
            };
            if class[c] == AMBIGUOUS {
                let (i, j, k) = grid.coords(c);
                let mut list = Vec::new();
                let nb = grid.n_base as isize;
                let nf = grid.n_fiber as isize;
                let mut seen = std::collections::HashSet::new();
                for di in -r[0]..=r[0] {
                    for dj in -r[1]..=r[1] {
                        for dk in -r[2]..=r[2] {
                            let m = grid.index(
                                (i as isize + di).rem_euclid(nb) as usize,
                                (j as isize + dj).rem_euclid(nb) as usize,
                                (k as isize + dk).rem_euclid(nf) as usize,
                            );
                            if set.contains(m) && seen.insert(m) {
                                list.push(m as u32);
                            }
                        }
                    }
                }
                slot[c] = candidates.len() as u32;
                candidates.push(list);
            }
        }
        Neighborhood {
            grid,
            eps,
            class,
            candidates,
            slot,
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Whether `p` lies within `eps` of the set.
    #[inline]
    pub fn contains(&self, p: &PointX) -> bool {
        let c = self.grid.cell_of(p);
        match self.class[c] {
            INSIDE => true,
            OUTSIDE => false,
            _ => self.candidates[self.slot[c] as usize]
                .iter()
                .any(|&m| box_distance(self.grid, m as usize, p) <= self.eps),
        }
    }
}

/// Distance from each cell center to the nearest member center.
fn center_distance_field(set: &CellSet) -> Vec<f64> {
    crate::limitsets::distance_to_centers(set)
}

/// Distance from `p` to the closed union of the set's cells (exact, brute force).
pub fn distance_to_cells(set: &CellSet, p: &PointX) -> f64 {
    set.members()
        .map(|m| box_distance(set.grid(), m, p))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeParams {
    pub eps_list: Vec<f64>,
    pub n_steps: usize,
    pub n_boundary_samples: usize,
    pub delta_min: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams {
            eps_list: vec![0.02, 0.05, 0.1],
            n_steps: 100_000,
            n_boundary_samples: 32,
            delta_min: 1e-6,
        }
    }
}

/// Outcome of the stability probe at one `eps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub eps: f64,
    /// Largest tested `delta` with no escape found, if any.
    pub delta_found: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_start: Option<PointX>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub escape_step: Option<usize>,
    pub rounds: usize,
}

/// Seeded point within `delta` of a random member center.
fn probe_sample(set: &CellSet, members: &[usize], delta: f64, rng: &mut impl Rng) -> PointX {
    let c = set.grid().center(members[rng.random_range(0..members.len())]);
    loop {
        let v: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        if v[0] * v[0] + v[1] * v[1] + v[2] * v[2] <= 1.0 {
            return PointX::new(
                c.base.x1 + delta * v[0],
                c.base.x2 + delta * v[1],
                c.fiber + delta * v[2],
            );
        }
    }
}

/// Search for `delta` such that orbits started within `delta` of `K`'s centers
/// stay within `eps` of `K` (closed cells) for `n_steps` steps.
///
/// `delta` halves from `eps` down to `delta_min`. Each `(eps, round)` pair
/// draws its own seed stream, so the samples of a round do not depend on
/// `n_steps`. A report without `delta_found` carries an escaping orbit.
pub fn lyapunov_stability_probe<S: SkewSystem + ?Sized>(
    system: &S,
    k: &CellSet,
    params: &ProbeParams,
    seed: u64,
) -> Vec<ProbeReport> {
    assert!(!k.is_empty(), "stability probe needs a nonempty set");
    let members: Vec<usize> = k.members().collect();
    params
        .eps_list
        .iter()
        .enumerate()
        .map(|(ei, &eps)| {
            let hood = Neighborhood::new(k, eps);
            let mut delta = eps;
            let mut round = 0usize;
            loop {
                let mut rng = seed::rng(seed, Stream::ProbeRound, ((ei as u64) << 32) | round as u64);
                let starts: Vec<PointX> = (0..params.n_boundary_samples)
                    .map(|_| probe_sample(k, &members, delta, &mut rng))
                    .collect();
                let escapes: Vec<Option<usize>> = starts
                    .par_iter()
                    .map(|&s| {
                        let mut p = s;
                        for n in 1..=params.n_steps {
                            p = system.step(p);
                            if !hood.contains(&p) {
                                return Some(n);
                            }
                        }
                        None
                    })
                    .collect();
                round += 1;
                let first = escapes.iter().position(|e| e.is_some());
                match first {
                    None => {
                        return ProbeReport {
                            eps,
                            delta_found: Some(delta),
                            witness_start: None,
                            escape_step: None,
                            rounds: round,
                        }
                    }
                    Some(i) if delta * 0.5 < params.delta_min => {
                        return ProbeReport {
                            eps,
                            delta_found: None,
                            witness_start: Some(starts[i]),
                            escape_step: escapes[i],
                            rounds: round,
                        }
                    }
                    Some(_) => delta *= 0.5,
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaturationParams {
    pub n_probe: usize,
    pub leaf_arclength: f64,
    pub fatten: usize,
}

impl Default for SaturationParams {
    fn default() -> Self {
        SaturationParams {
            n_probe: 200,
            leaf_arclength: 5.0,
            fatten: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub probe: usize,
    pub t: f64,
    pub point: PointX,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationReport {
    pub n_probe: usize,
    pub n_points: usize,
    pub n_violations: usize,
    /// Probes with at least one violating point.
    pub n_probes_violated: usize,
    /// First few violating points.
    pub examples: Vec<Violation>,
}

impl SaturationReport {
    pub fn saturated(&self) -> bool {
        self.n_violations == 0
    }
}

/// Unstable segments of length `leaf_arclength` through seeded member-cell
/// centers, checked against the set fattened by `fatten` cells.
pub fn saturation_check<S: SkewSystem + ?Sized>(
    system: &S,
    set: &CellSet,
    params: &SaturationParams,
    leaf: LeafParams,
    seed: u64,
) -> Result<SaturationReport> {
    assert!(!set.is_empty(), "saturation check needs a nonempty set");
    let grid = set.grid();
    let members: Vec<usize> = set.members().collect();
    let fat = set.fattened(params.fatten);
    let half = 0.5 * params.leaf_arclength;
    let per_probe: Result<Vec<(usize, Vec<Violation>)>> = (0..params.n_probe)
        .map(|i| {
            let mut rng = seed::rng(seed, Stream::SaturationProbe, i as u64);
            let c = grid.center(members[rng.random_range(0..members.len())]);
            let reference = BackwardOrbit::iterate(system, c, leaf.depth_cap);
            let b = builder_for(system, reference, leaf);
            let (nodes, _) = b.segment(-half, half)?;
            let bad = nodes
                .iter()
                .filter(|n| !fat.contains_point(&n.point))
                .map(|n| Violation {
                    probe: i,
                    t: n.t,
                    point: n.point,
                })
                .collect();
            Ok((nodes.len(), bad))
        })
        .collect();
    let per_probe = per_probe?;
    let n_points = per_probe.iter().map(|p| p.0).sum();
    let n_violations = per_probe.iter().map(|p| p.1.len()).sum();
    let n_probes_violated = per_probe.iter().filter(|p| !p.1.is_empty()).count();
    let examples = per_probe
        .into_iter()
        .flat_map(|p| p.1)
        .take(20)
        .collect();
    Ok(SaturationReport {
        n_probe: params.n_probe,
        n_points,
        n_violations,
        n_probes_violated,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::CircleMap;
    use crate::skew::{CoeffTarget, FiberFamily, Modulation, SkewProduct};
    use crate::torus::ToralAutomorphism;
    use std::sync::OnceLock;

    fn product_ns() -> SkewProduct {
        SkewProduct::product(ToralAutomorphism::cat(), CircleMap::sine(0.0, 0.08)).unwrap()
    }

    fn modulated_ns() -> SkewProduct {
        static NS: OnceLock<SkewProduct> = OnceLock::new();
        NS.get_or_init(|| {
            let fam = FiberFamily::new(
                CircleMap::sine(0.0, 0.08),
                vec![
                    Modulation { target: CoeffTarget::C0, m: [1, 0], amp: 0.01, phase: 0.0 },
                    Modulation { target: CoeffTarget::C0, m: [0, 1], amp: 0.01, phase: 0.0 },
                ],
            )
            .unwrap();
            SkewProduct::new(ToralAutomorphism::cat(), fam)
        })
        .clone()
    }

    fn anchor(sys: &SkewProduct, class: OrbitClass) -> FiberPeriodicPoint {
        fiberwise_periodic_points(sys, TorusPoint::ORIGIN, 1)
            .unwrap()
            .into_iter()
            .find(|a| a.class == class)
            .unwrap()
    }

    #[test]
    fn product_fixed_points() {
        let pts = fiberwise_periodic_points(&product_ns(), TorusPoint::ORIGIN, 1).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!((pts[0].fiber, pts[0].class), (0.0, OrbitClass::Repeller));
        assert!((pts[1].fiber - 0.5).abs() < 1e-12 && pts[1].class == OrbitClass::Attractor);
        for p in &pts {
            assert!(p.closing_error(&product_ns()) < 1e-9);
        }
    }

    #[test]
    fn inverse_attractors_are_repellers() {
        let f = modulated_ns();
        let g = f.inverse_system();
        let fw = fiberwise_periodic_points(&f, TorusPoint::ORIGIN, 1).unwrap();
        let bw = fiberwise_periodic_points(&g, TorusPoint::ORIGIN, 1).unwrap();
        for (a, b) in fw.iter().zip(&bw) {
            assert!((a.fiber - b.fiber).abs() < 1e-9);
            assert_ne!(a.class, b.class);
        }
    }

    #[test]
    fn period_two_base_point() {
        let f = modulated_ns();
        let q = f
            .base()
            .periodic_points(2)
            .into_iter()
            .find(|p| p.minimal_period == 2)
            .unwrap()
            .point;
        let pts = fiberwise_periodic_points(&f, q, 2).unwrap();
        assert!(pts.iter().any(|p| p.class == OrbitClass::Attractor));
        for p in &pts {
            assert_eq!(p.period(), 2 * p.fiber_period);
            assert!(p.closing_error(&f) < 1e-9);
        }
    }

    #[test]
    fn rotation_fibers_are_not_morse_smale() {
        let f = SkewProduct::product(ToralAutomorphism::cat(), CircleMap::rotation(0.618_033_988_7)).unwrap();
        assert!(matches!(
            fiberwise_periodic_points(&f, TorusPoint::ORIGIN, 1),
            Err(Error::NoPeriodicOrbits { .. })
        ));
    }

    #[test]
    fn product_unstable_leaf_is_level() {
        let f = product_ns();
        let a = anchor(&f, OrbitClass::Attractor);
        let g = leaf_graph(&f, &a, LeafKind::Unstable, LeafParams::default()).unwrap();
        assert!(g.nodes.iter().all(|n| n.lift == 0.5));
        let s = leaf_graph(&f, &a, LeafKind::Stable, LeafParams::default()).unwrap();
        assert!(s.nodes.iter().all(|n| n.lift == 0.5));
    }

    #[test]
    fn leaf_nodes_lie_on_base_leaf_and_are_dense() {
        let f = modulated_ns();
        let a = anchor(&f, OrbitClass::Attractor);
        let params = LeafParams { arclength_cap: 3.0, ..LeafParams::default() };
        for kind in [LeafKind::Unstable, LeafKind::Stable] {
            let g = leaf_graph(&f, &a, kind, params).unwrap();
            let v = f.base().direction(kind);
            for w in g.nodes.windows(2) {
                assert!((w[1].t - w[0].t).hypot(w[1].lift - w[0].lift) <= params.max_seg + 1e-15);
            }
            for n in &g.nodes {
                let expected = a.base.translate([n.t * v[0], n.t * v[1]]);
                assert!(n.point.base.distance(expected) < 1e-9);
            }
        }
    }

    #[test]
    fn unstable_leaf_is_invariant() {
        let f = modulated_ns();
        let a = anchor(&f, OrbitClass::Attractor);
        let params = LeafParams::default();
        let mu = f.base().mu_u();
        for i in 0..40 {
            let t = -0.3 + 0.015 * i as f64;
            let node = unstable_node(&f, &a, t, params).unwrap();
            let image = f.step(node.point);
            let next = unstable_node(&f, &a, mu * t, params).unwrap();
            assert!(image.distance(&next.point) < params.node_tol, "t={t}");
            assert!((node.lift - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn stable_leaf_is_invariant() {
        let f = modulated_ns();
        let r = anchor(&f, OrbitClass::Repeller);
        let params = LeafParams { arclength_cap: 1.0, ..LeafParams::default() };
        let g = leaf_graph(&f, &r, LeafKind::Stable, params).unwrap();
        let mu = f.base().mu_s();
        // F maps W^s(r) into itself, contracting t by μ_s.
        let inv = f.inverse_system();
        let reference = BackwardOrbit::periodic_reversed(&r.orbit);
        for n in g.nodes.iter().step_by(16) {
            let image = f.step(n.point);
            let (ell, _) = unstable_offset(&inv, &reference, mu * n.t, 1e-8, 200).unwrap();
            assert!(circle_distance(image.fiber, wrap(r.fiber + ell)) < 1e-8);
        }
    }

    #[test]
    fn graph_transform_contracts_at_domination_rate() {
        let f = modulated_ns();
        let a = anchor(&f, OrbitClass::Repeller);
        let reference = BackwardOrbit::periodic(&a.orbit);
        let cert = f.cached_certificate();
        let bound = cert.upper_bound / cert.lambda_u + 0.05;
        let t = 0.7;
        let vals: Vec<f64> = (4..30).map(|n| graph_transform_chain(&f, &reference, t, n)).collect();
        let diffs: Vec<f64> = vals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        for w in diffs.windows(2).skip(3) {
            if w[0] > 1e-14 {
                assert!(w[1] / w[0] <= bound, "ratio {}", w[1] / w[0]);
            }
        }
    }

    #[test]
    fn product_closure_fills_sheet() {
        let f = product_ns();
        let a = anchor(&f, OrbitClass::Attractor);
        let grid = Grid3::cubic(32);
        let g = leaf_graph(&f, &a, LeafKind::Unstable, LeafParams::for_grid(grid)).unwrap();
        let c = closure_estimate(&f, &g, grid, 20.0, 4000.0).unwrap();
        let cells = c.require_converged().unwrap();
        let sheet = CellSet::from_indices(grid, (0..32).flat_map(|i| (0..32).map(move |j| grid.index(i, j, 16))));
        assert_eq!(cells, &sheet);
        assert!(g.cells(grid).is_subset(cells));
        let none = closure_estimate(&f, &g, grid, 0.0, 4000.0).unwrap();
        assert_eq!(none.cells, g.cells(grid));
        let tight = closure_estimate(&f, &g, grid, 20.0, 10.0).unwrap();
        assert!(matches!(tight.require_converged(), Err(Error::BudgetExhausted { .. })));
    }

    #[test]
    fn holonomy_in_product_is_vertical() {
        let f = product_ns();
        let a = f.base();
        let hs = a.homoclinic_points(TorusPoint::ORIGIN, 1.0, 3, 50).unwrap();
        for h in &hs {
            let z = PointX { base: h.point, fiber: 0.3 };
            let r = stable_holonomy(&f, z, TorusPoint::ORIGIN, HolonomyParams::default()).unwrap();
            assert!((r.y - 0.3).abs() < 1e-12);
            let z0 = PointX { base: h.point, fiber: 0.0 };
            let r0 = stable_holonomy(&f, z0, TorusPoint::ORIGIN, HolonomyParams::default()).unwrap();
            assert!(circle_distance(r0.y, 0.0) < 1e-12);
        }
        let off = PointX::new(0.1234, 0.4321, 0.2);
        assert!(matches!(
            stable_holonomy(&f, off, TorusPoint::ORIGIN, HolonomyParams::default()),
            Err(Error::NotOnStableLeaf)
        ));
    }

    #[test]
    fn modulated_holonomy_shadows() {
        let f = modulated_ns();
        let a = f.base();
        let hs = a.homoclinic_points(TorusPoint::ORIGIN, 1.0, 3, 50).unwrap();
        for h in &hs {
            for y in [0.1, 0.45, 0.8] {
                let z = PointX { base: h.point, fiber: y };
                let r = stable_holonomy(&f, z, TorusPoint::ORIGIN, HolonomyParams::default()).unwrap();
                assert!(r.verification < 1e-6, "verification {}", r.verification);
            }
        }
        // two points on one stable leaf: both land on the same fiber value
        let s = 0.37;
        let vs = a.v_s();
        let z1 = PointX { base: TorusPoint::new(s * vs[0], s * vs[1]), fiber: 0.6 };
        let r1 = stable_holonomy(&f, z1, TorusPoint::ORIGIN, HolonomyParams::default()).unwrap();
        let far = PointX { base: TorusPoint::new(-0.2 * vs[0], -0.2 * vs[1]), fiber: 0.0 };
        let y_far = {
            // find the fiber over `far` whose holonomy matches r1.y
            let target = r1.y;
            crate::circle::invert_monotone(
                |u| {
                    let r = stable_holonomy(&f, PointX { base: far.base, fiber: wrap(u) }, TorusPoint::ORIGIN, HolonomyParams::default()).unwrap();
                    let lifted = r.y + (u - wrap(u));
                    let lifted = if lifted - u > 0.5 { lifted - 1.0 } else if u - lifted > 0.5 { lifted + 1.0 } else { lifted };
                    (lifted, 1.0)
                },
                target,
            )
        };
        let mut p = z1;
        let mut q = PointX { base: far.base, fiber: wrap(y_far) };
        // distance of the two fiber orbits over the analytic base positions
        for j in 0..30 {
            let d1 = s * a.mu_s().powi(j);
            let d2 = -0.2 * a.mu_s().powi(j);
            p = PointX { base: TorusPoint::new(d1 * vs[0], d1 * vs[1]), fiber: wrap(f.fiber_lift(p.base, p.fiber)) };
            q = PointX { base: TorusPoint::new(d2 * vs[0], d2 * vs[1]), fiber: wrap(f.fiber_lift(q.base, q.fiber)) };
        }
        assert!(circle_distance(p.fiber, q.fiber) < 1e-6);
    }

    fn sheet(grid: Grid3, k: usize) -> CellSet {
        CellSet::from_indices(grid, (0..grid.n_base).flat_map(|i| (0..grid.n_base).map(move |j| grid.index(i, j, k))))
    }

    #[test]
    fn probe_examples() {
        let f = product_ns();
        let grid = Grid3::cubic(32);
        let params = ProbeParams { eps_list: vec![0.05], n_steps: 2_000, n_boundary_samples: 16, delta_min: 1e-6 };
        let att = lyapunov_stability_probe(&f, &sheet(grid, 16), &params, 1);
        assert_eq!(att[0].delta_found, Some(0.05));
        let rep = lyapunov_stability_probe(&f, &sheet(grid, 0).union(&sheet(grid, 31)), &params, 1);
        assert_eq!(rep[0].delta_found, None);
        assert!(rep[0].witness_start.is_some() && rep[0].escape_step.is_some());
        let full = lyapunov_stability_probe(&f, &CellSet::full(grid), &params, 1);
        assert_eq!(full[0].delta_found, Some(0.05));
    }

    #[test]
    fn probe_is_monotone_in_time() {
        let f = modulated_ns();
        let grid = Grid3::cubic(16);
        // a thin set around the attractor sheet: only part of the contracting region
        let k = sheet(grid, 8);
        let mut last = f64::INFINITY;
        for n_steps in [1, 10, 100, 1000] {
            let params = ProbeParams { eps_list: vec![0.05], n_steps, n_boundary_samples: 16, delta_min: 1e-4 };
            let r = lyapunov_stability_probe(&f, &k, &params, 3);
            let d = r[0].delta_found.unwrap_or(0.0);
            assert!(d <= last);
            last = d;
        }
    }

    #[test]
    fn neighborhood_matches_brute_force() {
        let grid = Grid3::cubic(16);
        let set = CellSet::from_indices(grid, [grid.index(3, 4, 5), grid.index(10, 2, 15), grid.index(0, 0, 8)]);
        let mut rng = seed::rng(9, Stream::Misc, 0);
        for eps in [0.02, 0.05, 0.1] {
            let hood = Neighborhood::new(&set, eps);
            for _ in 0..3000 {
                let p = PointX::new(rng.random(), rng.random(), rng.random());
                assert_eq!(hood.contains(&p), distance_to_cells(&set, &p) <= eps);
            }
        }
    }

    #[test]
    fn saturation_of_full_grid_and_product_sheet() {
        let f = product_ns();
        let grid = Grid3::cubic(16);
        let params = SaturationParams { n_probe: 10, leaf_arclength: 2.0, fatten: 0 };
        let full = saturation_check(&f, &CellSet::full(grid), &params, LeafParams::for_grid(grid), 4).unwrap();
        assert!(full.saturated());
        let s = sheet(grid, 8);
        let r = saturation_check(&f, &s, &params, LeafParams::for_grid(grid), 4).unwrap();
        assert!(r.saturated());
        let half = CellSet::from_indices(grid, s.members().filter(|&c| grid.coords(c).0 < 8));
        let r = saturation_check(&f, &half, &params, LeafParams::for_grid(grid), 4).unwrap();
        assert!(r.n_violations > 0);
    }
}
