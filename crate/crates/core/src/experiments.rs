//! Verification suites: each binds estimators into checks with a status,
//! the exact parameters used, and the metrics observed.

use crate::circle::OrbitClass;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::limitsets::{
    box_measure, hausdorff_distance, joint_estimates, nonwandering_estimate, CellSet, Grid3,
    JointEstimate, NonwanderingParams, SamplingParams,
};
use crate::manifolds::{
    closure_estimate, fiberwise_periodic_points, leaf_graph, lyapunov_stability_probe,
    saturation_check, stable_holonomy, unstable_node, FiberPeriodicPoint, LeafParams,
};
use crate::seed::{self, Stream};
use crate::skew::{Invertible, PointX, SkewProduct, SkewSystem};
use crate::torus::{circle_distance, LeafKind, TorusPoint};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn from_bool(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    /// Fail dominates inconclusive, which dominates pass.
    pub fn and(self, other: Status) -> Status {
        match (self, other) {
            (Status::Fail, _) | (_, Status::Fail) => Status::Fail,
            (Status::Inconclusive, _) | (_, Status::Inconclusive) => Status::Inconclusive,
            _ => Status::Pass,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 2,
            Status::Inconclusive => 3,
        }
    }
}

/// Outcome of the two-resolution measure test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    ZeroMeasure,
    Full,
    Inconclusive,
}

/// Data written next to a report.
#[derive(Debug, Clone)]
pub enum ArtifactData {
    Cells(CellSet),
    Table { header: String, rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub data: ArtifactData,
}

/// One check of a suite.
#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    pub name: String,
    pub status: Status,
    pub params: Value,
    pub metrics: Map<String, Value>,
    /// File names relative to the run directory, filled in when written.
    pub artifacts: Vec<String>,
    #[serde(skip)]
    pub data: Vec<Artifact>,
}

impl Entry {
    pub fn new(name: &str, params: Value) -> Entry {
        Entry {
            name: name.into(),
            status: Status::Pass,
            params,
            metrics: Map::new(),
            artifacts: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Insert a metric; floats that may be non-finite go through [`Entry::insert_num`].
    pub fn metric(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).expect("metric serializes");
        self.metrics.insert(key.into(), v);
        self
    }

    pub fn cells(&mut self, name: &str, set: &CellSet) -> &mut Self {
        self.data.push(Artifact {
            name: name.into(),
            data: ArtifactData::Cells(set.clone()),
        });
        self
    }

    pub fn table(&mut self, name: &str, header: &str, rows: Vec<Vec<f64>>) -> &mut Self {
        self.data.push(Artifact {
            name: name.into(),
            data: ArtifactData::Table {
                header: header.into(),
                rows,
            },
        });
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.metrics.get(key)
    }
}

/// A number as a metric value; non-finite values become marker strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("+inf")
    } else {
        json!("-inf")
    }
}

/// Result of a suite: deterministic given system, config and seed.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub status: Status,
    pub system: Value,
    pub seed: u64,
    pub config: Value,
    pub entries: Vec<Entry>,
}

impl SuiteReport {
    pub fn new(suite: &str, system: &SkewProduct, config: &RunConfig) -> SuiteReport {
        let mut snapshot = serde_json::to_value(config).expect("config serializes");
        if let Some(m) = snapshot.as_object_mut() {
            m.remove("system");
            m.remove("out");
        }
        SuiteReport {
            suite: suite.into(),
            status: Status::Pass,
            system: serde_json::to_value(system).expect("system serializes"),
            seed: config.seed,
            config: snapshot,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: Entry) {
        self.status = self.status.and(entry.status);
        self.entries.push(entry);
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }
}

fn repellers(points: &[FiberPeriodicPoint]) -> Vec<&FiberPeriodicPoint> {
    points.iter().filter(|p| p.class == OrbitClass::Repeller).collect()
}

fn attractors(points: &[FiberPeriodicPoint]) -> Vec<&FiberPeriodicPoint> {
    points.iter().filter(|p| p.class == OrbitClass::Attractor).collect()
}

/// Partial-hyperbolicity certificate as a check.
pub fn certificate_entry<S: SkewSystem + ?Sized>(system: &S, grid_n: usize) -> Entry {
    let cert = system.certificate(grid_n);
    let mut e = Entry::new("certificate", json!({ "grid_n": cert.grid_n }));
    e.status = Status::from_bool(cert.passes());
    e.metric("inf_deriv", cert.inf_deriv)
        .metric("sup_deriv", cert.sup_deriv)
        .metric("lower_bound", cert.lower_bound)
        .metric("upper_bound", cert.upper_bound)
        .metric("lambda_s", cert.lambda_s)
        .metric("lambda_u", cert.lambda_u)
        .metric("stable_margin", cert.stable_margin())
        .metric("unstable_margin", cert.unstable_margin())
        .metric("violated_side", cert.violated_side());
    e
}

/// Distance from the stable holonomy of a point of `W^u(r)` to the repellers of `g_p`.
///
/// For each repeller `r` over `p`, the first `candidates` homoclinic points
/// `z_B` of `p` are tried; the point `z` of `W^u(r)` over `z_B` is carried to
/// the fiber over `p` along its stable leaf, and the largest resulting distance
/// to the repeller set is kept. Passes when every repeller keeps more than
/// `repeller_margin`.
pub fn assumption1_check<S: SkewSystem + ?Sized>(
    system: &S,
    p: TorusPoint,
    k: usize,
    config: &RunConfig,
) -> Result<Entry> {
    let candidates = 3;
    let margin = config.thresholds.repeller_margin;
    let leaf = LeafParams {
        node_tol: config.manifold.node_tol,
        depth_cap: config.manifold.depth_cap,
        ..LeafParams::default()
    };
    let hol = config.manifold.holonomy;
    let mut e = Entry::new(
        "assumption1",
        json!({
            "base_point": [p.x1, p.x2], "period": k, "candidates": candidates,
            "repeller_margin": margin, "holonomy": hol, "node_tol": leaf.node_tol,
        }),
    );
    let points = match fiberwise_periodic_points(system, p, k) {
        Err(Error::NoPeriodicOrbits { .. }) => Vec::new(),
        other => other?,
    };
    let reps = repellers(&points);
    let rep_fibers: Vec<f64> = reps.iter().map(|r| r.fiber).collect();
    if reps.is_empty() {
        e.metric("vacuous", true).metric("n_repellers", 0);
        return Ok(e);
    }
    let homoclinic = system
        .base()
        .homoclinic_points(p, 1.0, candidates, hol.shift_cap)?;
    let mut rows = Vec::new();
    let mut per_repeller = Vec::new();
    let mut min_distance = f64::INFINITY;
    for r in &reps {
        let mut best: Option<(f64, Value)> = None;
        for h in &homoclinic {
            let node = unstable_node(system, r, h.t, leaf)?;
            let y = stable_holonomy(system, node.point, p, hol)?;
            let d = rep_fibers
                .iter()
                .map(|&f| circle_distance(y.y, f))
                .fold(f64::INFINITY, f64::min);
            rows.push(vec![r.fiber, h.point.x1, h.point.x2, node.point.fiber, y.y, d]);
            let detail = json!({
                "repeller": r.fiber, "z_base": [h.point.x1, h.point.x2], "t": h.t,
                "z_fiber": node.point.fiber, "y": y.y, "distance": d,
                "holonomy_depth": y.depth, "verification": y.verification,
            });
            if best.as_ref().is_none_or(|(bd, _)| d > *bd) {
                best = Some((d, detail));
            }
        }
        let (d, detail) = best.expect("at least one homoclinic point");
        min_distance = min_distance.min(d);
        per_repeller.push(detail);
    }
    e.status = Status::from_bool(min_distance > margin);
    e.metric("n_repellers", reps.len())
        .metric("min_distance", min_distance)
        .metric("per_repeller", per_repeller)
        .table(
            "holonomy",
            "repeller,z_x1,z_x2,z_y,y,distance",
            rows,
        );
    Ok(e)
}

/// Closures of the unstable leaves of the attractors over `p`, matched
/// against each sample's statistical set.
pub fn attractor_decomposition<S: Invertible>(
    system: &S,
    p: TorusPoint,
    k: usize,
    config: &RunConfig,
    joint: &JointEstimate,
) -> Result<Entry> {
    let grid = joint.grid;
    let leaf = config.leaf_params(grid);
    let tol = config.thresholds.coincidence_cells * grid.cell_diagonal();
    let mut e = Entry::new(
        "decomposition",
        json!({
            "base_point": [p.x1, p.x2], "period": k, "grid": grid, "leaf": leaf,
            "stall_length": config.manifold.stall_length, "budget": config.manifold.budget,
            "tolerance": tol,
        }),
    );
    let points = fiberwise_periodic_points(system, p, k)?;
    let atts = attractors(&points);
    let mut closures = Vec::with_capacity(atts.len());
    let mut converged = true;
    for a in &atts {
        let graph = leaf_graph(system, a, LeafKind::Unstable, leaf)?;
        let c = closure_estimate(
            system,
            &graph,
            grid,
            config.manifold.stall_length,
            config.manifold.budget,
        )?;
        converged &= c.converged;
        closures.push(c);
    }
    let mut matched: Vec<usize> = Vec::new();
    let mut max_match = 0.0f64;
    for s in &joint.statistical.per_sample {
        let (best, d) = closures
            .iter()
            .enumerate()
            .map(|(i, c)| (i, hausdorff_distance(s, &c.cells)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((usize::MAX, f64::INFINITY));
        max_match = max_match.max(d);
        if best != usize::MAX && !matched.contains(&best) {
            matched.push(best);
        }
    }
    matched.sort_unstable();
    let mut union = CellSet::empty(grid);
    for &i in &matched {
        union.union_with(&closures[i].cells);
    }
    let union_distance = hausdorff_distance(&union, &joint.statistical.union);
    let pairwise: Vec<Value> = (0..closures.len())
        .flat_map(|i| (i + 1..closures.len()).map(move |j| (i, j)))
        .map(|(i, j)| {
            json!({
                "i": i, "j": j,
                "hausdorff": num(hausdorff_distance(&closures[i].cells, &closures[j].cells)),
                "intersection": closures[i].cells.intersection(&closures[j].cells).len(),
            })
        })
        .collect();
    e.status = if !converged {
        Status::Inconclusive
    } else {
        Status::from_bool(max_match <= tol && union_distance <= tol)
    };
    e.metric("attractors", atts.iter().map(|a| a.fiber).collect::<Vec<_>>())
        .metric(
            "closures",
            closures
                .iter()
                .map(|c| json!({ "cells": c.cells.len(), "extent": c.extent, "converged": c.converged }))
                .collect::<Vec<_>>(),
        )
        .metric("matched", &matched)
        .insert_num("max_match_distance", max_match)
        .insert_num("union_distance", union_distance)
        .metric("pairwise", pairwise);
    for (i, c) in closures.iter().enumerate() {
        e.cells(&format!("closure{i}"), &c.cells);
    }
    Ok(e)
}

impl Entry {
    /// Insert a float metric that may be infinite.
    pub fn insert_num(&mut self, key: &str, x: f64) -> &mut Self {
        self.metrics.insert(key.into(), num(x));
        self
    }
}

/// Everything the Theorem A suite computed, for reuse by later checks.
#[derive(Debug, Clone)]
pub struct TheoremA {
    pub report: SuiteReport,
    pub branch: Branch,
    /// Joint estimates on the coarse and the refined grid.
    pub coarse: Option<JointEstimate>,
    pub fine: Option<JointEstimate>,
}

/// Dichotomy rule on the occupied fractions at two resolutions.
pub fn classify_branch(coarse: f64, fine: f64, config: &RunConfig) -> Branch {
    let t = &config.thresholds;
    if coarse >= t.full_min && fine >= t.full_min {
        Branch::Full
    } else if coarse > 0.0 && (fine == 0.0 || coarse / fine >= t.shrink_min) {
        Branch::ZeroMeasure
    } else {
        Branch::Inconclusive
    }
}

fn sampling_entry_params(config: &RunConfig, grids: &[Grid3]) -> Value {
    json!({ "orbit": config.orbit, "grids": grids, "seed": config.seed })
}

/// Coincidence, containment, stability, dichotomy and saturation.
pub fn theorem_a_suite(system: &SkewProduct, config: &RunConfig) -> Result<TheoremA> {
    let mut report = SuiteReport::new("theorem-a", system, config);
    let cert = certificate_entry(system, crate::skew::DEFAULT_CERT_GRID);
    let cert_ok = cert.status == Status::Pass;
    report.push(cert);
    if !cert_ok {
        return Ok(TheoremA {
            report,
            branch: Branch::Inconclusive,
            coarse: None,
            fine: None,
        });
    }
    let (coarse, fine) = two_resolution_estimates(system, config);
    let grids = [coarse.grid, fine.grid];
    let grid = coarse.grid;
    let stat = &coarse.statistical.union;

    let tol = config.thresholds.coincidence_cells * grid.cell_diagonal();
    let mut e = Entry::new("coincidence", {
        let mut p = sampling_entry_params(config, &grids[..1]);
        p["tolerance"] = json!(tol);
        p
    });
    let d = hausdorff_distance(stat, &coarse.milnor.union);
    e.status = Status::from_bool(d <= tol);
    e.insert_num("hausdorff", d)
        .metric("statistical", stat.summary())
        .metric("milnor", coarse.milnor.union.summary())
        .cells("statistical", stat)
        .cells("milnor", &coarse.milnor.union);
    report.push(e);

    report.push(containment_entry(&[&coarse, &fine], config));

    let mut e = Entry::new("stability", json!({ "probe": config.probe, "grid": grid,
        "delta_ratio_min": config.thresholds.delta_ratio_min, "seed": config.seed }));
    if stat.is_empty() {
        e.status = Status::Inconclusive;
        e.metric("reason", "empty statistical estimate");
    } else {
        let probes = lyapunov_stability_probe(system, stat, &config.probe, config.seed);
        let ok = probes.iter().all(|r| {
            r.delta_found
                .is_some_and(|d| d >= config.thresholds.delta_ratio_min * r.eps)
        });
        e.status = Status::from_bool(ok);
        e.metric("probes", &probes);
    }
    report.push(e);

    let (branch, e) = dichotomy_entry(&coarse, &fine, config);
    report.push(e);

    let leaf = config.leaf_params(grid);
    let mut e = Entry::new("saturation", json!({ "saturation": config.saturation, "leaf": leaf,
        "grid": grid, "seed": config.seed }));
    if stat.is_empty() {
        e.status = Status::Inconclusive;
        e.metric("reason", "empty statistical estimate");
    } else {
        let r = saturation_check(system, stat, &config.saturation, leaf, config.seed)?;
        e.status = Status::from_bool(r.saturated());
        e.metric("report", &r);
    }
    report.push(e);

    Ok(TheoremA {
        report,
        branch,
        coarse: Some(coarse),
        fine: Some(fine),
    })
}

/// Occupied fractions of the statistical estimate at two resolutions, classified.
pub fn dichotomy_entry(coarse: &JointEstimate, fine: &JointEstimate, config: &RunConfig) -> (Branch, Entry) {
    let (fc, ff) = (
        box_measure(&coarse.statistical.union),
        box_measure(&fine.statistical.union),
    );
    let branch = classify_branch(fc, ff, config);
    let mut e = Entry::new(
        "dichotomy",
        json!({ "grids": [coarse.grid, fine.grid], "orbit": config.orbit,
            "shrink_min": config.thresholds.shrink_min, "full_min": config.thresholds.full_min }),
    );
    e.status = match branch {
        Branch::Inconclusive => Status::Inconclusive,
        _ => Status::Pass,
    };
    e.metric("fraction_coarse", fc)
        .metric("fraction_fine", ff)
        .insert_num("shrink", if ff > 0.0 { fc / ff } else { f64::INFINITY })
        .metric("branch", branch)
        .cells("statistical_fine", &fine.statistical.union);
    (branch, e)
}

/// Joint estimates on the coarse and refined grids from one set of orbits.
pub fn two_resolution_estimates<S: SkewSystem + ?Sized>(
    system: &S,
    config: &RunConfig,
) -> (JointEstimate, JointEstimate) {
    let grids = [config.coarse_grid(), config.fine_grid()];
    let mut joint = joint_estimates(system, &config.orbit, &grids, config.seed);
    let fine = joint.pop().expect("two grids");
    (joint.pop().expect("two grids"), fine)
}

/// Cellwise containment of statistical in Milnor estimates sharing orbit data.
pub fn containment_entry(joints: &[&JointEstimate], config: &RunConfig) -> Entry {
    let grids: Vec<Grid3> = joints.iter().map(|j| j.grid).collect();
    let mut e = Entry::new("containment", sampling_entry_params(config, &grids));
    let per_grid: Vec<Value> = joints
        .iter()
        .map(|j| {
            json!({
                "grid": j.grid,
                "contained": j.contained(),
                "excess": j.statistical.union.difference(&j.milnor.union).len(),
                "samples_contained": j.samples_contained(),
                "samples": j.statistical.per_sample.len(),
            })
        })
        .collect();
    e.status = Status::from_bool(joints.iter().all(|j| j.contained()));
    e.metric("per_grid", per_grid);
    e
}

/// Lifted fiber value over the probe base point of the continued attractor's
/// unstable graph for `F_b = R_b ∘ F`, checked to rise by at least `b`.
pub fn perturbation_scan(
    system: &SkewProduct,
    anchor: &FiberPeriodicPoint,
    b_values: &[f64],
    t_probe: f64,
    leaf: LeafParams,
    slack: f64,
) -> Result<Entry> {
    assert!(
        b_values.first() == Some(&0.0) && b_values.windows(2).all(|w| w[0] < w[1]),
        "b values ascend from 0"
    );
    let p = anchor.base;
    let k = anchor.base_period;
    let mut e = Entry::new(
        "perturbation",
        json!({ "anchor": anchor.point(), "b_values": b_values, "t_probe": t_probe,
            "leaf": leaf, "slack": slack }),
    );
    let mut prev_fiber = anchor.fiber;
    let mut anchor_lift = anchor.fiber;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(b_values.len());
    let (mut monotone, mut rises) = (true, true);
    for &b in b_values {
        let sys_b = system.add_fiber_rotation(b);
        let lost = || Error::ContinuationLost { b };
        let points = fiberwise_periodic_points(&sys_b, p, k).map_err(|err| match err {
            Error::NotMorseSmale { .. } | Error::NoPeriodicOrbits { .. } => lost(),
            other => other,
        })?;
        let next = attractors(&points)
            .into_iter()
            .filter(|a| a.fiber_period == anchor.fiber_period)
            .min_by(|a, c| {
                circle_distance(a.fiber, prev_fiber).total_cmp(&circle_distance(c.fiber, prev_fiber))
            })
            .ok_or_else(lost)?;
        let step = signed_circle_step(prev_fiber, next.fiber);
        if step.abs() > 0.25 {
            return Err(lost());
        }
        anchor_lift += step;
        prev_fiber = next.fiber;
        let node = unstable_node(&sys_b, next, t_probe, leaf)?;
        let z = anchor_lift + (node.lift - next.fiber);
        if let Some(last) = rows.last() {
            monotone &= z >= last[2];
        }
        let z0 = rows.first().map_or(z, |r| r[2]);
        rises &= z - z0 >= b - slack;
        rows.push(vec![b, anchor_lift, z, z - z0]);
    }
    e.status = Status::from_bool(monotone && rises);
    let min_excess = rows
        .iter()
        .map(|r| r[3] - r[0])
        .fold(f64::INFINITY, f64::min);
    e.metric("z_hat", rows.iter().map(|r| r[2]).collect::<Vec<_>>())
        .metric("anchor_lift", rows.iter().map(|r| r[1]).collect::<Vec<_>>())
        .metric("min_excess", min_excess)
        .metric("monotone", monotone)
        .table("scan", "b,anchor,z_hat,increment", rows);
    Ok(e)
}

/// `to − from` as the representative in `[−0.5, 0.5)`.
fn signed_circle_step(from: f64, to: f64) -> f64 {
    (to - from + 0.5).rem_euclid(1.0) - 0.5
}

fn auxiliary_sampling(config: &RunConfig) -> SamplingParams {
    SamplingParams {
        n_samples: config.auxiliary.n_samples,
        n_steps: config.auxiliary.n_steps,
        ..config.orbit
    }
}

fn statistical_union<S: SkewSystem + ?Sized>(
    system: &S,
    params: &SamplingParams,
    grid: Grid3,
    seed: u64,
) -> CellSet {
    joint_estimates(system, params, &[grid], seed)
        .pop()
        .expect("one grid")
        .statistical
        .union
}

/// Nonwandering surrogate for the zero-measure branch, dense orbit for the full one.
pub fn corollary_b_check(system: &SkewProduct, config: &RunConfig, branch: Branch) -> Entry {
    let grid = config.nonwandering_grid();
    let nw = &config.nonwandering;
    let mut e = Entry::new(
        "corollary_b",
        json!({ "branch": branch, "grid": grid, "nonwandering": nw, "auxiliary": config.auxiliary,
            "nw_max": config.thresholds.nw_max, "dense_min": config.thresholds.dense_min,
            "seed": config.seed }),
    );
    match branch {
        Branch::ZeroMeasure => {
            let params = NonwanderingParams {
                samples_per_cell: nw.samples_per_cell,
                horizon: nw.horizon,
                include_inverse: nw.include_inverse,
            };
            let omega = nonwandering_estimate(system, grid, &params, config.seed);
            let aux = auxiliary_sampling(config);
            let fwd = statistical_union(system, &aux, grid, config.seed);
            let bwd = statistical_union(&system.inverse_system(), &aux, grid, config.seed);
            let allowed = fwd.union(&bwd).fattened(nw.fatten);
            let outside = omega.difference(&allowed);
            let fraction = box_measure(&omega);
            e.status = Status::from_bool(fraction < config.thresholds.nw_max && outside.is_empty());
            e.metric("nonwandering", omega.summary())
                .metric("fraction", fraction)
                .metric("outside", outside.len())
                .metric("attractor", fwd.summary())
                .metric("repeller", bwd.summary())
                .cells("nonwandering", &omega)
                .cells("allowed", &allowed);
        }
        Branch::Full => {
            let visited = dense_orbit_cells(system, grid, nw.dense_steps, config.seed);
            let fraction = box_measure(&visited);
            e.status = Status::from_bool(fraction >= config.thresholds.dense_min);
            e.metric("fraction", fraction).cells("visited", &visited);
        }
        Branch::Inconclusive => {
            e.status = Status::Inconclusive;
            e.metric("reason", "no branch identified");
        }
    }
    e
}

/// Cells visited by one seeded orbit of `n_steps` steps.
pub fn dense_orbit_cells<S: SkewSystem + ?Sized>(
    system: &S,
    grid: Grid3,
    n_steps: usize,
    seed: u64,
) -> CellSet {
    let mut rng = seed::rng(seed, Stream::DenseOrbit, 0);
    let mut p = PointX::new(rng.random(), rng.random(), rng.random());
    let mut visited = CellSet::empty(grid);
    visited.insert(grid.cell_of(&p));
    for _ in 0..n_steps {
        p = system.step(p);
        visited.insert(grid.cell_of(&p));
    }
    visited
}

/// Statistical attractor estimates of `F` and `F⁻¹` compared.
pub fn inverse_system_suite<S: Invertible>(system: &S, config: &RunConfig, branch: Branch) -> Entry {
    let grid = config.coarse_grid();
    let aux = auxiliary_sampling(config);
    let tol = config.thresholds.coincidence_cells * grid.cell_diagonal();
    let mut e = Entry::new(
        "inverse",
        json!({ "grid": grid, "auxiliary": config.auxiliary, "branch": branch,
            "tolerance": tol, "seed": config.seed }),
    );
    let fwd = statistical_union(system, &aux, grid, config.seed);
    let bwd = statistical_union(&system.inverse_system(), &aux, grid, config.seed);
    let both = fwd.intersection(&bwd);
    let either = fwd.union(&bwd);
    let jaccard = if either.is_empty() {
        0.0
    } else {
        both.len() as f64 / either.len() as f64
    };
    e.metric("forward", fwd.summary())
        .metric("inverse", bwd.summary())
        .metric("intersection_fraction", box_measure(&both))
        .metric("jaccard", jaccard)
        .cells("forward", &fwd)
        .cells("inverse", &bwd);
    e.status = match branch {
        Branch::Full => {
            let full = CellSet::full(grid);
            let (df, db) = (hausdorff_distance(&fwd, &full), hausdorff_distance(&bwd, &full));
            e.insert_num("forward_to_full", df).insert_num("inverse_to_full", db);
            Status::from_bool(df <= tol && db <= tol)
        }
        Branch::ZeroMeasure => Status::Pass,
        Branch::Inconclusive => Status::Inconclusive,
    };
    e
}

/// Fiberwise periodic points over the configured base point.
pub fn base_point_orbits<S: SkewSystem + ?Sized>(
    system: &S,
    config: &RunConfig,
) -> Result<Vec<FiberPeriodicPoint>> {
    fiberwise_periodic_points(system, config.base_point.torus_point(), config.base_point.period)
}
