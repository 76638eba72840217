//! Acceptance criteria, one test per criterion. The heavy suite runs are shared.

use attractorlab::circle::CircleMap;
use attractorlab::config::RunConfig;
use attractorlab::experiments::{
    self, assumption1_check, corollary_b_check, perturbation_scan, theorem_a_suite, Branch, Status,
    TheoremA,
};
use attractorlab::io;
use attractorlab::limitsets::{joint_estimates, CellSet, SamplingParams};
use attractorlab::manifolds::{lyapunov_stability_probe, saturation_check, ProbeParams, SaturationParams};
use attractorlab::presets;
use attractorlab::skew::{Invertible, PointX, SkewProduct, SkewSystem};
use attractorlab::torus::{circle_distance, ToralAutomorphism, TorusPoint};
use attractorlab::{Error, OrbitClass, ViolatedSide};
use rand::{Rng, SeedableRng};
use std::f64::consts::PI;
use std::sync::OnceLock;

fn report(criterion: u32, ok: bool, detail: String) {
    println!("criterion {criterion:>2}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn ns() -> &'static RunConfig {
    static CFG: OnceLock<RunConfig> = OnceLock::new();
    CFG.get_or_init(presets::ns)
}

fn ns_run() -> &'static TheoremA {
    static RUN: OnceLock<TheoremA> = OnceLock::new();
    RUN.get_or_init(|| theorem_a_suite(ns().system().unwrap(), ns()).unwrap())
}

fn rot_run() -> &'static (RunConfig, TheoremA) {
    static RUN: OnceLock<(RunConfig, TheoremA)> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = presets::rot();
        let run = theorem_a_suite(cfg.system().unwrap(), &cfg).unwrap();
        (cfg, run)
    })
}

fn metric(run: &TheoremA, entry: &str, key: &str) -> serde_json::Value {
    run.report.entry(entry).unwrap().get(key).unwrap().clone()
}

#[test]
fn criterion_01_certificate() {
    let cat = ToralAutomorphism::cat();
    let ok_sys = SkewProduct::product(cat.clone(), CircleMap::sine(0.0, 0.08)).unwrap();
    let cert = ok_sys.cached_certificate();
    let lo_err = (cert.inf_deriv - (1.0 - 0.16 * PI)).abs();
    let hi_err = (cert.sup_deriv - (1.0 + 0.16 * PI)).abs();
    let bad_sys = SkewProduct::product(cat, CircleMap::sine(0.0, 0.12)).unwrap();
    let bad = bad_sys.cached_certificate();
    let err = bad_sys.certify().unwrap_err();
    let ok = ok_sys.certify().is_ok()
        && lo_err <= 1e-6
        && hi_err <= 1e-6
        && !bad.passes()
        && bad.violated_side() == Some(ViolatedSide::Stable)
        && matches!(err, Error::CertificateFailed { side: ViolatedSide::Stable, .. });
    report(
        1,
        ok,
        format!("range errors {lo_err:.1e}/{hi_err:.1e}, a1=0.12 side {:?}", bad.violated_side()),
    );
}

/// Fixed points of `M^k` on the torus by lattice enumeration: integer vectors
/// `n` with `(M^k − I)^{-1} n ∈ [0,1)²`, in exact integer arithmetic.
fn lattice_count(m: [[i64; 2]; 2], k: u32) -> usize {
    let mut p = [[1i64, 0], [0, 1]];
    for _ in 0..k {
        p = [
            [p[0][0] * m[0][0] + p[0][1] * m[1][0], p[0][0] * m[0][1] + p[0][1] * m[1][1]],
            [p[1][0] * m[0][0] + p[1][1] * m[1][0], p[1][0] * m[0][1] + p[1][1] * m[1][1]],
        ];
    }
    let b = [[p[0][0] - 1, p[0][1]], [p[1][0], p[1][1] - 1]];
    let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
    let adj = [[b[1][1], -b[0][1]], [-b[1][0], b[0][0]]];
    // image of the unit square under b bounds the candidate n
    let xs = [0, b[0][0], b[0][1], b[0][0] + b[0][1]];
    let ys = [0, b[1][0], b[1][1], b[1][0] + b[1][1]];
    let in_unit = |v: i64| {
        if det > 0 {
            0 <= v && v < det
        } else {
            det < v && v <= 0
        }
    };
    let mut count = 0;
    for n1 in *xs.iter().min().unwrap()..=*xs.iter().max().unwrap() {
        for n2 in *ys.iter().min().unwrap()..=*ys.iter().max().unwrap() {
            let u = adj[0][0] * n1 + adj[0][1] * n2;
            let v = adj[1][0] * n1 + adj[1][1] * n2;
            if in_unit(u) && in_unit(v) {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn criterion_02_periodic_point_counts() {
    let cat = ToralAutomorphism::cat();
    let oracle: Vec<usize> = (1..=6).map(|k| lattice_count(cat.matrix(), k)).collect();
    let counted: Vec<usize> = (1..=6).map(|k| cat.periodic_points(k).len()).collect();
    let ok = oracle == counted && counted == [1, 5, 16, 45, 121, 320];
    report(2, ok, format!("counts {counted:?}, lattice oracle {oracle:?}"));
}

#[test]
fn criterion_03_coincidence() {
    let run = ns_run();
    let e = run.report.entry("coincidence").unwrap();
    let d = e.get("hausdorff").unwrap().as_f64().unwrap();
    let grid = run.coarse.as_ref().unwrap().grid;
    let tol = 2.0 * grid.cell_diagonal();
    let ok = grid.n_base == 32
        && ns().orbit.n_steps == 10_000_000
        && ns().orbit.n_samples == 64
        && d <= tol
        && e.status == Status::Pass;
    report(3, ok, format!("hausdorff {d:.5} <= {tol:.5}"));
}

#[test]
fn criterion_04_dichotomy() {
    let run = ns_run();
    let fc = metric(run, "dichotomy", "fraction_coarse").as_f64().unwrap();
    let ff = metric(run, "dichotomy", "fraction_fine").as_f64().unwrap();
    let (_, rot) = rot_run();
    let rc = metric(rot, "dichotomy", "fraction_coarse").as_f64().unwrap();
    let rf = metric(rot, "dichotomy", "fraction_fine").as_f64().unwrap();
    let ok = fc < 0.1
        && fc / ff >= 1.5
        && run.branch == Branch::ZeroMeasure
        && rc >= 0.95
        && rf >= 0.95
        && rot.branch == Branch::Full;
    report(
        4,
        ok,
        format!("NS {fc:.4} -> {ff:.4} (x{:.2}); ROT {rc:.4}, {rf:.4}", fc / ff),
    );
}

#[test]
fn criterion_05_stability_probe() {
    let run = ns_run();
    let sys = ns().system().unwrap();
    let stat = &run.coarse.as_ref().unwrap().statistical.union;
    let params = ProbeParams {
        eps_list: vec![0.02, 0.05, 0.1],
        n_steps: 100_000,
        ..ProbeParams::default()
    };
    let att = lyapunov_stability_probe(sys, stat, &params, ns().seed);
    let att_ok = att
        .iter()
        .all(|r| r.delta_found.is_some_and(|d| d >= r.eps / 4.0));
    // repeller sheet: statistical attractor of the inverse system
    let aux = SamplingParams {
        n_samples: 16,
        n_steps: 1_000_000,
        ..ns().orbit
    };
    let rep = joint_estimates(&sys.inverse_system(), &aux, &[stat.grid()], ns().seed)
        .pop()
        .unwrap()
        .statistical
        .union;
    let esc = lyapunov_stability_probe(sys, &rep, &params, ns().seed);
    let esc_ok = esc
        .iter()
        .all(|r| r.delta_found.is_none() && r.witness_start.is_some());
    let deltas: Vec<Option<f64>> = att.iter().map(|r| r.delta_found).collect();
    let steps: Vec<Option<usize>> = esc.iter().map(|r| r.escape_step).collect();
    report(
        5,
        att_ok && esc_ok,
        format!("attractor deltas {deltas:?}; repeller escape steps {steps:?}"),
    );
}

#[test]
fn criterion_06_saturation() {
    let run = ns_run();
    let sys = ns().system().unwrap();
    let stat = &run.coarse.as_ref().unwrap().statistical.union;
    let params = SaturationParams {
        n_probe: 200,
        leaf_arclength: 5.0,
        fatten: 1,
    };
    let leaf = ns().leaf_params(stat.grid());
    let full = saturation_check(sys, stat, &params, leaf, ns().seed).unwrap();
    let g = stat.grid();
    let half = CellSet::from_indices(g, stat.members().filter(|&c| g.coords(c).0 < g.n_base / 2));
    let control = saturation_check(sys, &half, &params, leaf, ns().seed).unwrap();
    let ok = full.n_violations == 0 && control.n_violations >= 1;
    report(
        6,
        ok,
        format!(
            "{} violations on {} points; half-sheet control {} violations",
            full.n_violations, full.n_points, control.n_violations
        ),
    );
}

#[test]
fn criterion_07_containment() {
    let runs = [ns_run(), &rot_run().1];
    let mut detail = Vec::new();
    let mut ok = true;
    for run in runs {
        for j in [run.coarse.as_ref().unwrap(), run.fine.as_ref().unwrap()] {
            ok &= j.contained() && j.samples_contained() == j.statistical.per_sample.len();
            detail.push(format!(
                "{}^3 excess {}",
                j.grid.n_base,
                j.statistical.union.difference(&j.milnor.union).len()
            ));
        }
        ok &= run.report.entry("containment").unwrap().status == Status::Pass;
    }
    report(7, ok, detail.join(", "));
}

#[test]
fn criterion_08_monotone_graph_motion() {
    let cfg = presets::ns_product();
    let sys = cfg.system().unwrap();
    let anchor = experiments::base_point_orbits(sys, &cfg)
        .unwrap()
        .into_iter()
        .find(|p| p.class == OrbitClass::Attractor)
        .unwrap();
    let b_values: Vec<f64> = (0..=5).map(|i| 0.002 * i as f64).collect();
    let leaf = cfg.leaf_params(cfg.coarse_grid());
    let e = perturbation_scan(sys, &anchor, &b_values, cfg.perturbation.t_probe, leaf, 1e-6).unwrap();
    let z: Vec<f64> = serde_json::from_value(e.get("z_hat").unwrap().clone()).unwrap();
    let mut ok = e.status == Status::Pass;
    let mut worst = f64::INFINITY;
    for (b, zb) in b_values.iter().zip(&z) {
        worst = worst.min(zb - z[0] - b);
        ok &= zb - z[0] >= b - 1e-6;
        // the product's anchor moves as 0.5 + asin(b/0.08)/2π and the graph is level
        ok &= (zb - (0.5 + (b / 0.08).asin() / (2.0 * PI))).abs() < 1e-9;
    }
    report(8, ok, format!("min (z_b - z_0 - b) = {worst:.3e}"));
}

#[test]
fn criterion_09_assumption1() {
    let product = presets::ns_product();
    let p = assumption1_check(product.system().unwrap(), TorusPoint::ORIGIN, 1, &product).unwrap();
    let dp = p.get("min_distance").unwrap().as_f64().unwrap();
    let m = assumption1_check(ns().system().unwrap(), TorusPoint::ORIGIN, 1, ns()).unwrap();
    let dm = m.get("min_distance").unwrap().as_f64().unwrap();
    let ok = p.status == Status::Fail && dp < 1e-9 && m.status == Status::Pass && dm > 5e-3;
    report(9, ok, format!("product distance {dp:.2e}, modulated distance {dm:.4}"));
}

#[test]
fn criterion_10_corollary_b() {
    let run = ns_run();
    let e = corollary_b_check(ns().system().unwrap(), ns(), run.branch);
    let frac = e.get("fraction").unwrap().as_f64().unwrap();
    let outside = e.get("outside").unwrap().as_u64().unwrap();
    let (rot_cfg, _) = rot_run();
    let r = corollary_b_check(rot_cfg.system().unwrap(), rot_cfg, Branch::Full);
    let dense = r.get("fraction").unwrap().as_f64().unwrap();
    let ok = ns().nonwandering_grid().n_base == 16
        && frac < 0.2
        && outside == 0
        && e.status == Status::Pass
        && dense >= 0.95;
    report(
        10,
        ok,
        format!("NS nonwandering {frac:.4} ({outside} cells outside); ROT orbit fills {dense:.4}"),
    );
}

#[test]
fn criterion_11_determinism() {
    let a = ns_run();
    let b = theorem_a_suite(ns().system().unwrap(), ns()).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut reports = [a.report.clone(), b.report];
    let bytes: Vec<Vec<u8>> = reports
        .iter_mut()
        .zip(&dirs)
        .map(|(r, d)| std::fs::read(io::write_report(d.path(), r).unwrap()).unwrap())
        .collect();
    let ok = bytes[0] == bytes[1];
    report(11, ok, format!("report.json {} bytes, identical: {ok}", bytes[0].len()));
}

#[test]
fn criterion_12_inverse_round_trips() {
    let sys = ns().system().unwrap();
    let inv = sys.inverse_system();
    let back = inv.inverse_system();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    let dist = |a: PointX, b: PointX| {
        circle_distance(a.base.x1, b.base.x1)
            .max(circle_distance(a.base.x2, b.base.x2))
            .max(circle_distance(a.fiber, b.fiber))
    };
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = PointX::new(rng.random(), rng.random(), rng.random());
        worst = worst
            .max(dist(sys.step_inverse(sys.step(p)), p))
            .max(dist(sys.step(sys.step_inverse(p)), p))
            .max(dist(inv.step(sys.step(p)), p))
            .max(dist(sys.step(inv.step(p)), p))
            .max(dist(back.step(p), sys.step(p)));
    }
    report(12, worst < 1e-9, format!("worst round-trip error {worst:.2e}"));
}
