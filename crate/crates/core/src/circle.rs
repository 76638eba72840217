//! Orientation-preserving circle diffeomorphisms described by their lifts.
//!
//! A [`CircleMap`] is a degree-one lift `h(y) = y + c0 + Σ a_k sin 2πky + b_k cos 2πky`.
//! The [`Lift`] trait abstracts over anything that behaves like such a lift
//! (inverses and compositions included), so periodic-orbit analysis works on
//! fiber maps of composite or inverted systems without re-expanding coefficients.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{circle_distance, wrap};

/// Grid used by the diffeomorphism certificate.
pub const DIFFEO_GRID: usize = 4096;
/// Grid used to bracket periodic points.
pub const BRACKET_GRID: usize = 8192;
pub const DEFAULT_MULTIPLIER_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_PERIOD: usize = 8;

/// A degree-one, orientation-preserving lift of a circle map.
pub trait Lift {
    /// The lift `ŷ ↦ h(ŷ)` on the real line.
    fn lift(&self, y: f64) -> f64;

    /// `h'(y)`.
    fn derivative(&self, y: f64) -> f64;

    /// The unique `ŷ` with `h(ŷ) = target`.
    fn lift_inverse(&self, target: f64) -> f64 {
        invert_monotone(|u| (self.lift(u), self.derivative(u)), target)
    }

    /// `h(y + d) − h(y)`; implementors override this when it can be evaluated
    /// without cancellation for small `d`.
    fn increment(&self, y: f64, d: f64) -> f64 {
        self.lift(y + d) - self.lift(y)
    }

    fn eval(&self, y: f64) -> f64 {
        wrap(self.lift(y))
    }

    fn invert(&self, y: f64) -> f64 {
        wrap(self.lift_inverse(y))
    }
}

impl<L: Lift + ?Sized> Lift for &L {
    fn lift(&self, y: f64) -> f64 {
        (**self).lift(y)
    }
    fn derivative(&self, y: f64) -> f64 {
        (**self).derivative(y)
    }
    fn lift_inverse(&self, target: f64) -> f64 {
        (**self).lift_inverse(target)
    }
    fn increment(&self, y: f64, d: f64) -> f64 {
        (**self).increment(y, d)
    }
}

/// Solve `h(u) = target` for an increasing degree-one `h` given as `u ↦ (h(u), h'(u))`.
///
/// Degree one pins the root to a unit bracket: with `d = h(target) − target`, the
/// root lies in `[target − ⌊d⌋ − 1, target − ⌊d⌋]`.
pub fn invert_monotone(f: impl Fn(f64) -> (f64, f64), target: f64) -> f64 {
    let (h0, _) = f(target);
    let shift = (h0 - target).floor();
    let (lo, hi) = (target - shift - 1.0, target - shift);
    let guess = 2.0 * target - h0;
    let start = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
    solve_increasing_from(f, target, lo, hi, start)
}

/// Root of `φ(u) = target` for increasing `φ` with `φ(lo) ≤ target ≤ φ(hi)`.
///
/// Newton steps are taken while they stay inside the shrinking bracket,
/// bisection otherwise; stops at a relative step of a few ulp.
pub fn solve_increasing(f: impl Fn(f64) -> (f64, f64), target: f64, lo: f64, hi: f64) -> f64 {
    solve_increasing_from(f, target, lo, hi, 0.5 * (lo + hi))
}

/// [`solve_increasing`] started at `start ∈ [lo, hi]`.
pub fn solve_increasing_from(
    f: impl Fn(f64) -> (f64, f64),
    target: f64,
    mut lo: f64,
    mut hi: f64,
    start: f64,
) -> f64 {
    let mut u = start;
    let mut best = (f64::INFINITY, u);
    for _ in 0..300 {
        let (fu, du) = f(u);
        let r = fu - target;
        if r.abs() < best.0 {
            best = (r.abs(), u);
        }
        if r == 0.0 {
            return u;
        }
        if r < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let newton = u - r / du;
        let next = if du > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - u).abs() <= 4.0 * f64::EPSILON * u.abs() || next <= lo || next >= hi {
            let (fn_, _) = f(next);
            return if (fn_ - target).abs() < best.0 { next } else { best.1 };
        }
        u = next;
    }
    best.1
}

/// One trigonometric term `a sin 2πky + b cos 2πky`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u32, f64, f64)", into = "(u32, f64, f64)")]
pub struct Harmonic {
    pub k: u32,
    pub a: f64,
    pub b: f64,
}

impl From<(u32, f64, f64)> for Harmonic {
    fn from((k, a, b): (u32, f64, f64)) -> Self {
        Harmonic { k, a, b }
    }
}

impl From<Harmonic> for (u32, f64, f64) {
    fn from(h: Harmonic) -> Self {
        (h.k, h.a, h.b)
    }
}

/// A circle diffeomorphism given by a finite trigonometric-polynomial lift.
///
/// Serialized as `{"c0": r, "coeffs": [[k, a_k, b_k], …]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleMap {
    pub c0: f64,
    #[serde(default)]
    pub coeffs: Vec<Harmonic>,
}

impl CircleMap {
    /// Build and certify a lift; fails unless `h' > 0` with margin.
    pub fn new(c0: f64, coeffs: Vec<Harmonic>) -> Result<Self> {
        let map = CircleMap { c0, coeffs };
        map.check_diffeomorphism()?;
        Ok(map)
    }

    /// Rigid rotation `R_b`.
    pub fn rotation(b: f64) -> Self {
        CircleMap {
            c0: b,
            coeffs: Vec::new(),
        }
    }

    /// `y ↦ y + c0 + a sin 2πy`, the basic north–south family.
    pub fn sine(c0: f64, a: f64) -> Self {
        CircleMap {
            c0,
            coeffs: vec![Harmonic { k: 1, a, b: 0.0 }],
        }
    }

    /// Upper bound on `|h''|` from the coefficients.
    pub fn second_derivative_bound(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|h| (TAU * h.k as f64).powi(2) * h.a.hypot(h.b))
            .sum()
    }

    /// `(min h', max h')` on the certificate grid, and the Lipschitz slack
    /// `sup|h''| · (half grid spacing)` that turns grid values into bounds.
    pub fn derivative_bounds(&self) -> (f64, f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..DIFFEO_GRID {
            let d = self.derivative(i as f64 / DIFFEO_GRID as f64);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let slack = self.second_derivative_bound() * 0.5 / DIFFEO_GRID as f64;
        (lo, hi, slack)
    }

    /// Certify `h' > 0` everywhere: grid minimum minus slack must be positive.
    pub fn check_diffeomorphism(&self) -> Result<()> {
        let (lo, _, slack) = self.derivative_bounds();
        if lo - slack > 0.0 && self.c0.is_finite() {
            Ok(())
        } else {
            Err(Error::NotDiffeomorphism {
                min_bound: lo - slack,
            })
        }
    }

    /// `R_b ∘ f`: the lift `h + b`.
    pub fn add_rotation(&self, b: f64) -> CircleMap {
        CircleMap {
            c0: self.c0 + b,
            coeffs: self.coeffs.clone(),
        }
    }

    /// `(h(y), h'(y))` sharing one `sin_cos` per harmonic.
    #[inline]
    pub fn lift_and_derivative(&self, y: f64) -> (f64, f64) {
        let (mut v, mut d) = (y + self.c0, 1.0);
        for h in &self.coeffs {
            let w = TAU * h.k as f64;
            let (s, c) = (w * y).sin_cos();
            v += h.a * s + h.b * c;
            d += w * (h.a * c - h.b * s);
        }
        (v, d)
    }
}

impl Lift for CircleMap {
    #[inline]
    fn lift(&self, y: f64) -> f64 {
        let mut v = y + self.c0;
        for h in &self.coeffs {
            let (s, c) = (TAU * h.k as f64 * y).sin_cos();
            v += h.a * s + h.b * c;
        }
        v
    }

    #[inline]
    fn derivative(&self, y: f64) -> f64 {
        let mut d = 1.0;
        for h in &self.coeffs {
            let w = TAU * h.k as f64;
            let (s, c) = (w * y).sin_cos();
            d += w * (h.a * c - h.b * s);
        }
        d
    }

    fn lift_inverse(&self, target: f64) -> f64 {
        if self.coeffs.is_empty() {
            return target - self.c0;
        }
        invert_monotone(|u| self.lift_and_derivative(u), target)
    }

    #[inline]
    fn increment(&self, y: f64, d: f64) -> f64 {
        let mut v = d;
        for h in &self.coeffs {
            let w = TAU * h.k as f64;
            let (sm, cm) = (w * (y + 0.5 * d)).sin_cos();
            let sh = (0.5 * w * d).sin();
            // sin(A+B) − sin A = 2 cos(A + B/2) sin(B/2); cos(A+B) − cos A = −2 sin(A + B/2) sin(B/2)
            v += 2.0 * sh * (h.a * cm - h.b * sm);
        }
        v
    }
}

/// The inverse of a lift, as a lift.
#[derive(Debug, Clone)]
pub struct Inverted<L>(pub L);

impl<L: Lift> Lift for Inverted<L> {
    fn lift(&self, y: f64) -> f64 {
        self.0.lift_inverse(y)
    }
    fn derivative(&self, y: f64) -> f64 {
        1.0 / self.0.derivative(self.0.lift_inverse(y))
    }
    fn lift_inverse(&self, target: f64) -> f64 {
        self.0.lift(target)
    }
}

/// `maps[n−1] ∘ ⋯ ∘ maps[0]`, evaluated by chaining.
#[derive(Debug, Clone)]
pub struct CompositeMap<L> {
    maps: Vec<L>,
}

impl<L: Lift> CompositeMap<L> {
    /// `maps` are applied in order: `maps[0]` first.
    pub fn new(maps: Vec<L>) -> Self {
        assert!(!maps.is_empty(), "composition of an empty list");
        CompositeMap { maps }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[L] {
        &self.maps
    }
}

impl<L: Lift> Lift for CompositeMap<L> {
    fn lift(&self, y: f64) -> f64 {
        self.maps.iter().fold(y, |v, m| m.lift(v))
    }

    fn derivative(&self, y: f64) -> f64 {
        let mut v = y;
        let mut d = 1.0;
        for m in &self.maps {
            d *= m.derivative(v);
            v = m.lift(v);
        }
        d
    }

    fn lift_inverse(&self, target: f64) -> f64 {
        self.maps.iter().rev().fold(target, |v, m| m.lift_inverse(v))
    }

    fn increment(&self, y: f64, d: f64) -> f64 {
        let mut v = y;
        let mut dv = d;
        for m in &self.maps {
            let step = m.increment(v, dv);
            v = m.lift(v);
            dv = step;
        }
        dv
    }
}

pub fn compose<L: Lift>(maps: Vec<L>) -> CompositeMap<L> {
    CompositeMap::new(maps)
}

/// Dynamical type of a hyperbolic periodic orbit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitClass {
    Attractor,
    Repeller,
}

/// One periodic orbit of a circle map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircleOrbit {
    pub period: usize,
    /// Orbit points on the circle, starting from the smallest.
    pub points: Vec<f64>,
    /// Lift displacement: `h^period(y) = y + winding`.
    pub winding: i64,
    pub multiplier: f64,
    pub class: OrbitClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MorseSmaleData {
    pub orbits: Vec<CircleOrbit>,
    pub certified: bool,
}

impl MorseSmaleData {
    /// Every periodic point with its class and multiplier, sorted by position.
    pub fn points(&self) -> Vec<(f64, OrbitClass, f64, usize)> {
        let mut out: Vec<_> = self
            .orbits
            .iter()
            .flat_map(|o| o.points.iter().map(move |&y| (y, o.class, o.multiplier, o.period)))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    pub fn attractors(&self) -> Vec<f64> {
        self.class_points(OrbitClass::Attractor)
    }

    pub fn repellers(&self) -> Vec<f64> {
        self.class_points(OrbitClass::Repeller)
    }

    fn class_points(&self, class: OrbitClass) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .orbits
            .iter()
            .filter(|o| o.class == class)
            .flat_map(|o| o.points.iter().copied())
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Attractors and repellers alternate around the circle.
    pub fn alternates(&self) -> bool {
        let pts = self.points();
        let n = pts.len();
        n.is_multiple_of(2) && (0..n).all(|i| pts[i].1 != pts[(i + 1) % n].1)
    }

    /// Rotation number `winding / period` shared by all orbits.
    pub fn rotation_number(&self) -> Option<(i64, usize)> {
        self.orbits.first().map(|o| (o.winding, o.period))
    }
}

fn lift_power<L: Lift>(map: &L, y: f64, q: usize) -> f64 {
    (0..q).fold(y, |v, _| map.lift(v))
}

fn bisect_root<L: Lift>(map: &L, q: usize, k: f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = |y: f64| lift_power(map, y, q) - y - k;
    let mut glo = g(lo);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm < 0.0) == (glo < 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Find all periodic orbits of period `≤ max_period` and classify them.
///
/// For each period `q` and each integer `k` in the range of `h^q(y) − y`, zeros
/// of `h^q(y) − y − k` are bracketed by sign changes on an 8192-point grid and
/// refined by bisection. Roots closer together than one grid cell can be
/// missed; sign-less touching zeros are caught by a grid test on `|G| ≈ 0`.
pub fn periodic_orbits<L: Lift>(
    map: &L,
    max_period: usize,
    multiplier_tol: f64,
) -> Result<MorseSmaleData> {
    assert!(max_period >= 1);
    let n = BRACKET_GRID;
    let ys: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let mut orbits: Vec<CircleOrbit> = Vec::new();
    // Points already attributed to an orbit (circle positions).
    let mut claimed: Vec<f64> = Vec::new();

    for q in 1..=max_period {
        let g: Vec<f64> = ys.iter().map(|&y| lift_power(map, y, q) - y).collect();
        let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
        let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let kmin = (gmin - 1e-12).ceil() as i64;
        let kmax = (gmax + 1e-12).floor() as i64;
        for k in kmin..=kmax {
            let kf = k as f64;
            let mut roots = Vec::new();
            for i in 0..n {
                let (a, b) = (g[i] - kf, g[i + 1] - kf);
                if a == 0.0 {
                    roots.push(ys[i]);
                } else if (a < 0.0) != (b < 0.0) && b != 0.0 {
                    roots.push(bisect_root(map, q, kf, ys[i], ys[i + 1]));
                } else if a.abs() < 1e-12 {
                    // touching zero without a sign change
                    roots.push(ys[i]);
                }
            }
            for y in roots {
                let y = wrap(y);
                if claimed.iter().any(|&c| circle_distance(c, y) < 1e-7) {
                    continue;
                }
                let mut pts = Vec::with_capacity(q);
                let mut v = y;
                let mut mult = 1.0;
                for _ in 0..q {
                    pts.push(wrap(v));
                    mult *= map.derivative(v);
                    v = map.lift(v);
                }
                // skip points whose minimal period is a proper divisor of q
                let minimal = (1..q).all(|d| circle_distance(pts[d % q], y) > 1e-9);
                if !minimal {
                    continue;
                }
                if (mult - 1.0).abs() <= multiplier_tol {
                    return Err(Error::NotMorseSmale { y, multiplier: mult });
                }
                claimed.extend(pts.iter().copied());
                pts.sort_by(f64::total_cmp);
                orbits.push(CircleOrbit {
                    period: q,
                    points: pts,
                    winding: k,
                    multiplier: mult,
                    class: if mult < 1.0 {
                        OrbitClass::Attractor
                    } else {
                        OrbitClass::Repeller
                    },
                });
            }
        }
    }
    if orbits.is_empty() {
        return Err(Error::NoPeriodicOrbits { max_period });
    }
    orbits.sort_by(|a, b| a.points[0].total_cmp(&b.points[0]));
    Ok(MorseSmaleData {
        orbits,
        certified: true,
    })
}

/// Rotation number estimate with a rigorous error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RotationNumber {
    /// Lift rotation number (not reduced mod 1).
    pub value: f64,
    /// `|value − ρ| ≤ error_bound`; zero for exact rationals.
    pub error_bound: f64,
    /// `(winding, period)` when a hyperbolic periodic orbit certifies a rational value.
    pub exact: Option<(i64, usize)>,
}

/// `ρ = lim (h^n(0) − 0)/n`.
///
/// A Morse–Smale certificate gives the exact rational `winding/period`.
/// Otherwise `h^n(0)/n` is returned with the bound `|h^n(0) − nρ| < 1`,
/// taking `n = max(n_iter, ⌈1/tol⌉)` (capped at 10⁸) so the bound meets `tol`.
pub fn rotation_number<L: Lift>(map: &L, n_iter: usize, tol: f64) -> RotationNumber {
    if let Ok(ms) = periodic_orbits(map, DEFAULT_MAX_PERIOD, DEFAULT_MULTIPLIER_TOL) {
        if let Some((w, q)) = ms.rotation_number() {
            return RotationNumber {
                value: w as f64 / q as f64,
                error_bound: 0.0,
                exact: Some((w, q)),
            };
        }
    }
    let need = if tol > 0.0 { (1.0 / tol).ceil() } else { 1e8 };
    let n = (n_iter as f64).max(need).min(1e8) as usize;
    let mut y = 0.0;
    // Keep the running lift small: h(y + m) = h(y) + m.
    let mut whole = 0.0f64;
    for _ in 0..n {
        y = map.lift(y);
        let f = y.floor();
        whole += f;
        y -= f;
    }
    RotationNumber {
        value: (whole + y) / n as f64,
        error_bound: 1.0 / n as f64,
        exact: None,
    }
}
