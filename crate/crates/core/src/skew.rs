//! Skew products `F(x, y) = (A x, f_x(y))` over a toral automorphism.
//!
//! Every estimator in the crate is generic over [`SkewSystem`], which exposes
//! the base map and the fiber lifts. Besides plain evaluation, a system
//! provides two difference primitives,
//!
//! * `fiber_increment(x, y, d) = h_x(y + d) − h_x(y)`,
//! * `fiber_base_variation(x, dx, y) = h_{x+dx}(y) − h_x(y)`,
//!
//! which stay accurate when `d` or `dx` is far below the resolution of a
//! coordinate in `[0, 1)`. Invariant-manifold and holonomy computations track
//! points as offsets from a reference orbit and rely on these.
//!
//! Coordinates are reduced with `floor`; a step adds at most 4 ulp of
//! reduction error to each coordinate.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::circle::{invert_monotone, solve_increasing, CircleMap, CompositeMap, Harmonic, Lift};
use crate::error::{Error, Result, ViolatedSide};
use crate::torus::{wrap, ToralAutomorphism, TorusPoint};

/// Default grid for the partial-hyperbolicity certificate.
pub const DEFAULT_CERT_GRID: usize = 64;

/// A point of `T² × S¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointX {
    pub base: TorusPoint,
    pub fiber: f64,
}

impl PointX {
    pub fn new(x1: f64, x2: f64, y: f64) -> Self {
        PointX {
            base: TorusPoint::new(x1, x2),
            fiber: wrap(y),
        }
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.base.x1, self.base.x2, self.fiber]
    }

    /// Chebyshev (max-coordinate) distance on the torus.
    pub fn distance(&self, other: &PointX) -> f64 {
        let d = self.base.delta_to(other.base);
        d[0].abs()
            .max(d[1].abs())
            .max(crate::torus::circle_distance(self.fiber, other.fiber))
    }
}

/// Grid bounds on the fiber derivative and the verdict they support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    pub grid_n: usize,
    /// Minimum of `∂_y h_x(y)` over the grid.
    pub inf_deriv: f64,
    /// Maximum of `∂_y h_x(y)` over the grid.
    pub sup_deriv: f64,
    /// Certified lower bound on `∂_y h` everywhere.
    pub lower_bound: f64,
    /// Certified upper bound on `∂_y h` everywhere.
    pub upper_bound: f64,
    pub lambda_s: f64,
    pub lambda_u: f64,
}

impl Certificate {
    pub fn stable_margin(&self) -> f64 {
        self.lower_bound - self.lambda_s
    }

    pub fn unstable_margin(&self) -> f64 {
        self.lambda_u - self.upper_bound
    }

    pub fn violated_side(&self) -> Option<ViolatedSide> {
        if self.lower_bound.is_nan() || self.lower_bound <= 0.0 {
            Some(ViolatedSide::Orientation)
        } else if self.stable_margin() <= 0.0 {
            Some(ViolatedSide::Stable)
        } else if self.unstable_margin() <= 0.0 {
            Some(ViolatedSide::Unstable)
        } else {
            None
        }
    }

    pub fn passes(&self) -> bool {
        self.violated_side().is_none()
    }

    /// `Ok(self)` when certified, otherwise the violated side with its margin.
    pub fn into_result(self) -> Result<Certificate> {
        match self.violated_side() {
            None => Ok(self),
            Some(side) => Err(Error::CertificateFailed {
                side,
                margin: match side {
                    ViolatedSide::Orientation => self.lower_bound,
                    ViolatedSide::Stable => self.stable_margin(),
                    ViolatedSide::Unstable => self.unstable_margin(),
                },
            }),
        }
    }

    /// The certificate of the inverse system, derived without re-sampling.
    ///
    /// Fiber derivatives of `F⁻¹` are reciprocals of those of `F`, and `A⁻¹`
    /// has the same pair of rates.
    pub fn inverted(&self) -> Certificate {
        Certificate {
            grid_n: self.grid_n,
            inf_deriv: 1.0 / self.sup_deriv,
            sup_deriv: 1.0 / self.inf_deriv,
            lower_bound: 1.0 / self.upper_bound,
            upper_bound: if self.lower_bound > 0.0 {
                1.0 / self.lower_bound
            } else {
                f64::INFINITY
            },
            lambda_s: self.lambda_s,
            lambda_u: self.lambda_u,
        }
    }
}

/// A skew product over a toral automorphism with circle fibers.
pub trait SkewSystem: Send + Sync {
    fn base(&self) -> &ToralAutomorphism;

    /// The lift of the fiber map above `x`.
    fn fiber_lift(&self, x: TorusPoint, y: f64) -> f64;

    fn fiber_derivative(&self, x: TorusPoint, y: f64) -> f64;

    fn fiber_lift_inverse(&self, x: TorusPoint, target: f64) -> f64 {
        invert_monotone(
            |u| (self.fiber_lift(x, u), self.fiber_derivative(x, u)),
            target,
        )
    }

    /// `h_x(y + d) − h_x(y)`.
    fn fiber_increment(&self, x: TorusPoint, y: f64, d: f64) -> f64 {
        self.fiber_lift(x, y + d) - self.fiber_lift(x, y)
    }

    /// `h_{x+dx}(y) − h_x(y)` for a displacement `dx` on the cover.
    fn fiber_base_variation(&self, x: TorusPoint, dx: [f64; 2], y: f64) -> f64 {
        self.fiber_lift(x.translate(dx), y) - self.fiber_lift(x, y)
    }

    fn certificate(&self, grid_n: usize) -> Certificate;

    fn step(&self, pt: PointX) -> PointX {
        PointX {
            base: self.base().apply(pt.base),
            fiber: wrap(self.fiber_lift(pt.base, pt.fiber)),
        }
    }

    fn step_inverse(&self, pt: PointX) -> PointX {
        let x = self.base().apply_inverse(pt.base);
        PointX {
            base: x,
            fiber: wrap(self.fiber_lift_inverse(x, pt.fiber)),
        }
    }

    fn step_dir(&self, pt: PointX, inverse: bool) -> PointX {
        if inverse {
            self.step_inverse(pt)
        } else {
            self.step(pt)
        }
    }
}

/// Systems whose inverse is itself a [`SkewSystem`].
pub trait Invertible: SkewSystem + Sized {
    type Inv: SkewSystem + Invertible<Inv = Self>;

    fn inverse_system(&self) -> Self::Inv;
}

impl<S: SkewSystem + ?Sized> SkewSystem for &S {
    fn base(&self) -> &ToralAutomorphism {
        (**self).base()
    }
    fn fiber_lift(&self, x: TorusPoint, y: f64) -> f64 {
        (**self).fiber_lift(x, y)
    }
    fn fiber_derivative(&self, x: TorusPoint, y: f64) -> f64 {
        (**self).fiber_derivative(x, y)
    }
    fn fiber_lift_inverse(&self, x: TorusPoint, target: f64) -> f64 {
        (**self).fiber_lift_inverse(x, target)
    }
    fn fiber_increment(&self, x: TorusPoint, y: f64, d: f64) -> f64 {
        (**self).fiber_increment(x, y, d)
    }
    fn fiber_base_variation(&self, x: TorusPoint, dx: [f64; 2], y: f64) -> f64 {
        (**self).fiber_base_variation(x, dx, y)
    }
    fn certificate(&self, grid_n: usize) -> Certificate {
        (**self).certificate(grid_n)
    }
    fn step(&self, pt: PointX) -> PointX {
        (**self).step(pt)
    }
    fn step_inverse(&self, pt: PointX) -> PointX {
        (**self).step_inverse(pt)
    }
}

/// The fiber map of a system above a fixed base point, as a circle lift.
#[derive(Clone, Copy)]
pub struct FiberAt<'a, S: ?Sized> {
    pub system: &'a S,
    pub x: TorusPoint,
}

impl<S: SkewSystem + ?Sized> Lift for FiberAt<'_, S> {
    fn lift(&self, y: f64) -> f64 {
        self.system.fiber_lift(self.x, y)
    }
    fn derivative(&self, y: f64) -> f64 {
        self.system.fiber_derivative(self.x, y)
    }
    fn lift_inverse(&self, target: f64) -> f64 {
        self.system.fiber_lift_inverse(self.x, target)
    }
    fn increment(&self, y: f64, d: f64) -> f64 {
        self.system.fiber_increment(self.x, y, d)
    }
}

impl<S: ?Sized> fmt::Debug for FiberAt<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiberAt").field("x", &self.x).finish()
    }
}

pub fn fiber_at<S: SkewSystem + ?Sized>(system: &S, x: TorusPoint) -> FiberAt<'_, S> {
    FiberAt { system, x }
}

/// `g_p = f_{A^{k−1}p} ∘ ⋯ ∘ f_p`, the fiber map of `F^k` above a `k`-periodic `p`.
pub fn composite_fiber_map<S: SkewSystem + ?Sized>(
    system: &S,
    p: TorusPoint,
    k: usize,
) -> Result<CompositeMap<FiberAt<'_, S>>> {
    let orbit = system.base().base_orbit(p, k as u32)?;
    Ok(CompositeMap::new(
        orbit.into_iter().map(|x| fiber_at(system, x)).collect(),
    ))
}

/// Streaming orbit `F^{burn_in}(pt), …, F^{burn_in + n_steps − 1}(pt)`.
pub struct Orbit<'a, S: ?Sized> {
    system: &'a S,
    current: PointX,
    remaining: usize,
    inverse: bool,
}

impl<S: SkewSystem + ?Sized> Iterator for Orbit<'_, S> {
    type Item = PointX;

    fn next(&mut self) -> Option<PointX> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let out = self.current;
        if self.remaining > 0 {
            self.current = self.system.step_dir(out, self.inverse);
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

pub fn orbit<S: SkewSystem + ?Sized>(
    system: &S,
    pt: PointX,
    n_steps: usize,
    burn_in: usize,
) -> Orbit<'_, S> {
    orbit_dir(system, pt, n_steps, burn_in, false)
}

pub fn orbit_dir<S: SkewSystem + ?Sized>(
    system: &S,
    pt: PointX,
    n_steps: usize,
    burn_in: usize,
    inverse: bool,
) -> Orbit<'_, S> {
    let mut current = pt;
    for _ in 0..burn_in {
        current = system.step_dir(current, inverse);
    }
    Orbit {
        system,
        current,
        remaining: n_steps,
        inverse,
    }
}

/// Average of `log ∂_y h` along an orbit segment.
pub fn fiber_lyapunov<S: SkewSystem + ?Sized>(system: &S, pt: PointX, n_steps: usize) -> f64 {
    let mut p = pt;
    let mut acc = 0.0;
    for _ in 0..n_steps {
        acc += system.fiber_derivative(p.base, p.fiber).ln();
        p = system.step(p);
    }
    acc / n_steps as f64
}

/// Which coefficient of the fiber template a modulation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoeffTarget {
    C0,
    Sin(u32),
    Cos(u32),
}

impl fmt::Display for CoeffTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoeffTarget::C0 => write!(f, "c0"),
            CoeffTarget::Sin(k) => write!(f, "a_{k}"),
            CoeffTarget::Cos(k) => write!(f, "b_{k}"),
        }
    }
}

impl std::str::FromStr for CoeffTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "c0" {
            return Ok(CoeffTarget::C0);
        }
        let bad = || format!("invalid coefficient target `{s}` (expected \"c0\", \"a_<k>\" or \"b_<k>\")");
        let (kind, k) = s.split_once('_').ok_or_else(bad)?;
        let k: u32 = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match kind {
            "a" => Ok(CoeffTarget::Sin(k)),
            "b" => Ok(CoeffTarget::Cos(k)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for CoeffTarget {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CoeffTarget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One base harmonic `amp · cos(2π(m·x) + phase)` added to a coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modulation {
    pub target: CoeffTarget,
    pub m: [i64; 2],
    pub amp: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy)]
enum Basis {
    One,
    Sin(f64),
    Cos(f64),
}

impl Basis {
    #[inline]
    fn value(self, y: f64) -> f64 {
        match self {
            Basis::One => 1.0,
            Basis::Sin(w) => (w * y).sin(),
            Basis::Cos(w) => (w * y).cos(),
        }
    }

    #[inline]
    fn derivative(self, y: f64) -> f64 {
        match self {
            Basis::One => 0.0,
            Basis::Sin(w) => w * (w * y).cos(),
            Basis::Cos(w) => -w * (w * y).sin(),
        }
    }

    /// `basis(y + d) − basis(y)` without cancellation.
    #[inline]
    fn increment(self, y: f64, d: f64) -> f64 {
        match self {
            Basis::One => 0.0,
            Basis::Sin(w) => 2.0 * (w * (y + 0.5 * d)).cos() * (0.5 * w * d).sin(),
            Basis::Cos(w) => -2.0 * (w * (y + 0.5 * d)).sin() * (0.5 * w * d).sin(),
        }
    }

    fn frequency(self) -> f64 {
        match self {
            Basis::One => 0.0,
            Basis::Sin(w) | Basis::Cos(w) => w,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CompiledModulation {
    m: [f64; 2],
    amp: f64,
    phase: f64,
    basis: Basis,
}

impl CompiledModulation {
    #[inline]
    fn angle(&self, x: TorusPoint) -> f64 {
        TAU * (self.m[0] * x.x1 + self.m[1] * x.x2) + self.phase
    }

    #[inline]
    fn weight(&self, x: TorusPoint) -> f64 {
        self.amp * self.angle(x).cos()
    }

    /// `weight(x + dx) − weight(x)` via `cos(θ+δ) − cos θ = −2 sin(θ + δ/2) sin(δ/2)`.
    #[inline]
    fn weight_variation(&self, x: TorusPoint, dx: [f64; 2]) -> f64 {
        let delta = TAU * (self.m[0] * dx[0] + self.m[1] * dx[1]);
        -2.0 * self.amp * (self.angle(x) + 0.5 * delta).sin() * (0.5 * delta).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FiberFamilyRepr {
    c0: f64,
    #[serde(default)]
    coeffs: Vec<Harmonic>,
    #[serde(default)]
    modulation: Vec<Modulation>,
}

/// The family `x ↦ f_x`: a template [`CircleMap`] whose coefficients are
/// modulated by integer harmonics on the base.
///
/// JSON form: `{"c0": r, "coeffs": [[k, a, b], …], "modulation": [{"target": "c0", "m": [1, 0], "amp": r, "phase": r}, …]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "FiberFamilyRepr", into = "FiberFamilyRepr")]
pub struct FiberFamily {
    template: CircleMap,
    modulation: Vec<Modulation>,
    compiled: Vec<CompiledModulation>,
}

impl PartialEq for FiberFamily {
    fn eq(&self, other: &Self) -> bool {
        self.template == other.template && self.modulation == other.modulation
    }
}

impl TryFrom<FiberFamilyRepr> for FiberFamily {
    type Error = Error;
    fn try_from(r: FiberFamilyRepr) -> Result<Self> {
        FiberFamily::new(
            CircleMap {
                c0: r.c0,
                coeffs: r.coeffs,
            },
            r.modulation,
        )
    }
}

impl From<FiberFamily> for FiberFamilyRepr {
    fn from(f: FiberFamily) -> Self {
        FiberFamilyRepr {
            c0: f.template.c0,
            coeffs: f.template.coeffs,
            modulation: f.modulation,
        }
    }
}

/// Base and fiber resolution of the orientation check run at construction.
const VALIDATION_BASE_GRID: usize = 128;
const VALIDATION_FIBER_GRID: usize = 512;

impl FiberFamily {
    /// Build a family and certify that every `f_x` is an orientation-preserving
    /// diffeomorphism (grid minimum of `∂_y h` minus its Lipschitz slack is positive).
    pub fn new(template: CircleMap, modulation: Vec<Modulation>) -> Result<Self> {
        for (field, v) in std::iter::once(("fiber.c0", template.c0))
            .chain(template.coeffs.iter().flat_map(|h| [("fiber.coeffs", h.a), ("fiber.coeffs", h.b)]))
            .chain(modulation.iter().flat_map(|m| [("fiber.modulation.amp", m.amp), ("fiber.modulation.phase", m.phase)]))
        {
            if !v.is_finite() {
                return Err(Error::Validation {
                    field: field.into(),
                    value: v.to_string(),
                    range: "a finite number".into(),
                });
            }
        }
        if let Some(h) = template.coeffs.iter().find(|h| h.k == 0) {
            return Err(Error::Validation {
                field: "fiber.coeffs".into(),
                value: format!("[{}, {}, {}]", h.k, h.a, h.b),
                range: "harmonic index k >= 1".into(),
            });
        }
        let compiled = modulation
            .iter()
            .map(|m| CompiledModulation {
                m: [m.m[0] as f64, m.m[1] as f64],
                amp: m.amp,
                phase: m.phase,
                basis: match m.target {
                    CoeffTarget::C0 => Basis::One,
                    CoeffTarget::Sin(k) => Basis::Sin(TAU * k as f64),
                    CoeffTarget::Cos(k) => Basis::Cos(TAU * k as f64),
                },
            })
            .collect();
        let fam = FiberFamily {
            template,
            modulation,
            compiled,
        };
        let (lo, _) = fam.derivative_extrema(VALIDATION_BASE_GRID, VALIDATION_FIBER_GRID);
        let bound = lo - fam.derivative_slack(VALIDATION_BASE_GRID, VALIDATION_FIBER_GRID);
        if bound > 0.0 {
            Ok(fam)
        } else {
            Err(Error::NotDiffeomorphism { min_bound: bound })
        }
    }

    /// A family with no base dependence.
    pub fn constant(map: CircleMap) -> Result<Self> {
        FiberFamily::new(map, Vec::new())
    }

    pub fn template(&self) -> &CircleMap {
        &self.template
    }

    pub fn modulation(&self) -> &[Modulation] {
        &self.modulation
    }

    pub fn is_constant(&self) -> bool {
        self.compiled.iter().all(|m| m.amp == 0.0 || m.m == [0.0, 0.0])
    }

    /// The same family with the template's `c0` shifted by `b`.
    pub fn add_rotation(&self, b: f64) -> FiberFamily {
        FiberFamily {
            template: self.template.add_rotation(b),
            modulation: self.modulation.clone(),
            compiled: self.compiled.clone(),
        }
    }

    /// The circle map `f_x` with modulated coefficients materialized.
    pub fn map_at(&self, x: TorusPoint) -> CircleMap {
        let mut map = self.template.clone();
        for (m, c) in self.modulation.iter().zip(&self.compiled) {
            let w = c.weight(x);
            match m.target {
                CoeffTarget::C0 => map.c0 += w,
                CoeffTarget::Sin(k) | CoeffTarget::Cos(k) => {
                    let idx = match map.coeffs.iter().position(|h| h.k == k) {
                        Some(i) => i,
                        None => {
                            map.coeffs.push(Harmonic { k, a: 0.0, b: 0.0 });
                            map.coeffs.len() - 1
                        }
                    };
                    if matches!(m.target, CoeffTarget::Sin(_)) {
                        map.coeffs[idx].a += w;
                    } else {
                        map.coeffs[idx].b += w;
                    }
                }
            }
        }
        map
    }

    #[inline]
    pub fn lift(&self, x: TorusPoint, y: f64) -> f64 {
        let mut v = self.template.lift(y);
        for c in &self.compiled {
            v += c.weight(x) * c.basis.value(y);
        }
        v
    }

    /// `h_x⁻¹(target)`, with the base-dependent weights evaluated once.
    pub fn lift_inverse(&self, x: TorusPoint, target: f64) -> f64 {
        if self.compiled.is_empty() {
            return self.template.lift_inverse(target);
        }
        self.map_at(x).lift_inverse(target)
    }

    #[inline]
    pub fn derivative(&self, x: TorusPoint, y: f64) -> f64 {
        let mut d = self.template.derivative(y);
        for c in &self.compiled {
            if !matches!(c.basis, Basis::One) {
                d += c.weight(x) * c.basis.derivative(y);
            }
        }
        d
    }

    #[inline]
    pub fn increment(&self, x: TorusPoint, y: f64, dy: f64) -> f64 {
        let mut v = self.template.increment(y, dy);
        for c in &self.compiled {
            if !matches!(c.basis, Basis::One) {
                v += c.weight(x) * c.basis.increment(y, dy);
            }
        }
        v
    }

    #[inline]
    pub fn base_variation(&self, x: TorusPoint, dx: [f64; 2], y: f64) -> f64 {
        self.compiled
            .iter()
            .map(|c| c.weight_variation(x, dx) * c.basis.value(y))
            .sum()
    }

    /// Coefficient-wise `sup |a|` bounds: `(harmonic frequency, amplitude bound)` per term.
    fn amplitude_bounds(&self) -> Vec<(f64, f64)> {
        let mut terms: Vec<(f64, f64)> = self
            .template
            .coeffs
            .iter()
            .map(|h| (TAU * h.k as f64, h.a.abs() + h.b.abs()))
            .collect();
        for c in &self.compiled {
            terms.push((c.basis.frequency(), c.amp.abs()));
        }
        terms
    }

    /// Lipschitz slack turning grid extrema of `∂_y h` on an `nb² × nf` grid into bounds.
    ///
    /// `sup|∂²_y h| · (1/nf)/2 + (sup|∂_{x1}∂_y h| + sup|∂_{x2}∂_y h|) · (1/nb)/2`.
    pub fn derivative_slack(&self, nb: usize, nf: usize) -> f64 {
        let lyy: f64 = self.amplitude_bounds().iter().map(|(w, a)| w * w * a).sum();
        let mut lx = [0.0f64; 2];
        for c in &self.compiled {
            let w = c.basis.frequency();
            for (l, m) in lx.iter_mut().zip(c.m) {
                *l += c.amp.abs() * TAU * m.abs() * w;
            }
        }
        0.5 * lyy / nf as f64 + 0.5 * (lx[0] + lx[1]) / nb as f64
    }

    /// `(min, max)` of `∂_y h_x(y)` over the grid `x ∈ (Z/nb)², y ∈ Z/nf`.
    pub fn derivative_extrema(&self, nb: usize, nf: usize) -> (f64, f64) {
        let ys: Vec<f64> = (0..nf).map(|k| k as f64 / nf as f64).collect();
        let template: Vec<f64> = ys.iter().map(|&y| self.template.derivative(y)).collect();
        let tables: Vec<Vec<f64>> = self
            .compiled
            .iter()
            .filter(|c| !matches!(c.basis, Basis::One))
            .map(|c| ys.iter().map(|&y| c.basis.derivative(y)).collect())
            .collect();
        let varying: Vec<&CompiledModulation> = self
            .compiled
            .iter()
            .filter(|c| !matches!(c.basis, Basis::One))
            .collect();
        if varying.is_empty() {
            let lo = template.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = template.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            return (lo, hi);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut weights = vec![0.0; varying.len()];
        for i in 0..nb {
            for j in 0..nb {
                let x = TorusPoint::new(i as f64 / nb as f64, j as f64 / nb as f64);
                for (w, c) in weights.iter_mut().zip(&varying) {
                    *w = c.weight(x);
                }
                for k in 0..nf {
                    let mut d = template[k];
                    for (w, t) in weights.iter().zip(&tables) {
                        d += w * t[k];
                    }
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
            }
        }
        (lo, hi)
    }
}

/// `F(x, y) = (A x, f_x(y))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SkewProductRepr", into = "SkewProductRepr")]
pub struct SkewProduct {
    base: ToralAutomorphism,
    fibers: FiberFamily,
    cert: OnceLock<Certificate>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkewProductRepr {
    base_matrix: ToralAutomorphism,
    fiber: FiberFamily,
}

impl TryFrom<SkewProductRepr> for SkewProduct {
    type Error = Error;
    fn try_from(r: SkewProductRepr) -> Result<Self> {
        Ok(SkewProduct::new(r.base_matrix, r.fiber))
    }
}

impl From<SkewProduct> for SkewProductRepr {
    fn from(s: SkewProduct) -> Self {
        SkewProductRepr {
            base_matrix: s.base,
            fiber: s.fibers,
        }
    }
}

impl PartialEq for SkewProduct {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base && self.fibers == other.fibers
    }
}

impl SkewProduct {
    pub fn new(base: ToralAutomorphism, fibers: FiberFamily) -> Self {
        SkewProduct {
            base,
            fibers,
            cert: OnceLock::new(),
        }
    }

    /// A product system: the same fiber map above every base point.
    pub fn product(base: ToralAutomorphism, map: CircleMap) -> Result<Self> {
        Ok(SkewProduct::new(base, FiberFamily::constant(map)?))
    }

    pub fn fibers(&self) -> &FiberFamily {
        &self.fibers
    }

    pub fn fiber_map_at(&self, x: TorusPoint) -> CircleMap {
        self.fibers.map_at(x)
    }

    /// `F_b`: every fiber map replaced by `R_b ∘ f_x`.
    pub fn add_fiber_rotation(&self, b: f64) -> SkewProduct {
        let out = SkewProduct::new(self.base.clone(), self.fibers.add_rotation(b));
        // Rotating fibers leaves every fiber derivative unchanged.
        if let Some(c) = self.cert.get() {
            let _ = out.cert.set(*c);
        }
        out
    }

    /// Certificate at the default grid, computed once.
    pub fn cached_certificate(&self) -> Certificate {
        *self.cert.get_or_init(|| self.certificate(DEFAULT_CERT_GRID))
    }

    /// Cached certificate as a result: `CertificateFailed` outside the verifiable class.
    pub fn certify(&self) -> Result<Certificate> {
        self.cached_certificate().into_result()
    }
}

/// Grid-based partial-hyperbolicity certificate; `grid_n ≥ 64`.
pub fn partial_hyperbolicity_certificate<S: SkewSystem + ?Sized>(
    system: &S,
    grid_n: usize,
) -> Result<Certificate> {
    system.certificate(grid_n).into_result()
}

impl SkewSystem for SkewProduct {
    fn base(&self) -> &ToralAutomorphism {
        &self.base
    }

    #[inline]
    fn fiber_lift(&self, x: TorusPoint, y: f64) -> f64 {
        self.fibers.lift(x, y)
    }

    #[inline]
    fn fiber_derivative(&self, x: TorusPoint, y: f64) -> f64 {
        self.fibers.derivative(x, y)
    }

    fn fiber_lift_inverse(&self, x: TorusPoint, target: f64) -> f64 {
        self.fibers.lift_inverse(x, target)
    }

    #[inline]
    fn fiber_increment(&self, x: TorusPoint, y: f64, d: f64) -> f64 {
        self.fibers.increment(x, y, d)
    }

    #[inline]
    fn fiber_base_variation(&self, x: TorusPoint, dx: [f64; 2], y: f64) -> f64 {
        self.fibers.base_variation(x, dx, y)
    }

    fn certificate(&self, grid_n: usize) -> Certificate {
        let n = grid_n.max(DEFAULT_CERT_GRID);
        let (inf, sup) = self.fibers.derivative_extrema(n, n);
        let slack = self.fibers.derivative_slack(n, n);
        Certificate {
            grid_n: n,
            inf_deriv: inf,
            sup_deriv: sup,
            lower_bound: inf - slack,
            upper_bound: sup + slack,
            lambda_s: self.base.lambda_s(),
            lambda_u: self.base.lambda_u(),
        }
    }
}

impl Invertible for SkewProduct {
    type Inv = Inverse<SkewProduct>;

    fn inverse_system(&self) -> Inverse<SkewProduct> {
        Inverse::new(self.clone())
    }
}

/// `F⁻¹(x, y) = (A⁻¹x, f_{A⁻¹x}⁻¹(y))` as a system over `A⁻¹`.
///
/// The fiber map above `x` is `g_x = f_{x'}⁻¹` with `x' = A⁻¹x`; difference
/// primitives are solved from those of the inner system.
#[derive(Debug, Clone)]
pub struct Inverse<S> {
    inner: S,
    base: ToralAutomorphism,
}

impl<S: SkewSystem> Inverse<S> {
    pub fn new(inner: S) -> Self {
        let base = inner.base().inverse();
        Inverse { inner, base }
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: SkewSystem + Clone + Invertible<Inv = Inverse<S>>> Invertible for Inverse<S> {
    type Inv = S;

    fn inverse_system(&self) -> S {
        self.inner.clone()
    }
}

impl<S: SkewSystem> SkewSystem for Inverse<S> {
    fn base(&self) -> &ToralAutomorphism {
        &self.base
    }

    fn fiber_lift(&self, x: TorusPoint, y: f64) -> f64 {
        self.inner.fiber_lift_inverse(self.base.apply(x), y)
    }

    fn fiber_derivative(&self, x: TorusPoint, y: f64) -> f64 {
        let xp = self.base.apply(x);
        1.0 / self
            .inner
            .fiber_derivative(xp, self.inner.fiber_lift_inverse(xp, y))
    }

    fn fiber_lift_inverse(&self, x: TorusPoint, target: f64) -> f64 {
        self.inner.fiber_lift(self.base.apply(x), target)
    }

    fn fiber_increment(&self, x: TorusPoint, y: f64, d: f64) -> f64 {
        if d == 0.0 {
            return 0.0;
        }
        let xp = self.base.apply(x);
        let u = self.inner.fiber_lift_inverse(xp, y);
        // `e` with f(u + e) − f(u) = d; `inc(u, e) − e` oscillates by less than 1.
        solve_increasing(
            |e| {
                (
                    self.inner.fiber_increment(xp, u, e),
                    self.inner.fiber_derivative(xp, u + e),
                )
            },
            d,
            d - 1.0,
            d + 1.0,
        )
    }

    fn fiber_base_variation(&self, x: TorusPoint, dx: [f64; 2], y: f64) -> f64 {
        if dx == [0.0, 0.0] {
            return 0.0;
        }
        let xp = self.base.apply(x);
        let dxp = self.base.act_on_vector(dx);
        let xq = xp.translate(dxp);
        let u = self.inner.fiber_lift_inverse(xp, y);
        // `e` with f_{x'+dx'}(u + e) = f_{x'}(u).
        let phi = |e: f64| {
            (
                self.inner.fiber_base_variation(xp, dxp, u + e) + self.inner.fiber_increment(xp, u, e),
                self.inner.fiber_derivative(xq, u + e),
            )
        };
        let (mut lo, mut hi) = (-1.0, 1.0);
        while phi(lo).0 > 0.0 {
            lo *= 2.0;
        }
        while phi(hi).0 < 0.0 {
            hi *= 2.0;
        }
        solve_increasing(phi, 0.0, lo, hi)
    }

    fn certificate(&self, grid_n: usize) -> Certificate {
        self.inner.certificate(grid_n).inverted()
    }

    fn step(&self, pt: PointX) -> PointX {
        self.inner.step_inverse(pt)
    }

    fn step_inverse(&self, pt: PointX) -> PointX {
        self.inner.step(pt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn modulated(a1: f64) -> SkewProduct {
        let fam = FiberFamily::new(
            CircleMap::sine(0.0, a1),
            vec![
                Modulation { target: CoeffTarget::C0, m: [1, 0], amp: 0.01, phase: 0.0 },
                Modulation { target: CoeffTarget::C0, m: [0, 1], amp: 0.01, phase: 0.0 },
            ],
        )
        .unwrap();
        SkewProduct::new(ToralAutomorphism::cat(), fam)
    }

    fn rich() -> SkewProduct {
        static RICH: OnceLock<SkewProduct> = OnceLock::new();
        RICH.get_or_init(build_rich).clone()
    }

    fn build_rich() -> SkewProduct {
        let fam = FiberFamily::new(
            CircleMap::new(0.13, vec![Harmonic { k: 1, a: 0.05, b: 0.01 }]).unwrap(),
            vec![
                Modulation { target: CoeffTarget::C0, m: [1, 0], amp: 0.02, phase: 0.3 },
                Modulation { target: CoeffTarget::Sin(1), m: [1, -1], amp: 0.01, phase: 1.1 },
                Modulation { target: CoeffTarget::Cos(2), m: [0, 2], amp: 0.005, phase: -0.4 },
            ],
        )
        .unwrap();
        SkewProduct::new(ToralAutomorphism::cat(), fam)
    }

    fn product_ns() -> SkewProduct {
        SkewProduct::product(ToralAutomorphism::cat(), CircleMap::sine(0.0, 0.08)).unwrap()
    }

    #[test]
    fn product_fixed_point() {
        let f = product_ns();
        let p = PointX::new(0.0, 0.0, 0.5);
        assert_eq!(f.step(p).base, p.base);
        assert_abs_diff_eq!(f.step(p).fiber, 0.5, epsilon = 1e-15);
        let o: Vec<_> = orbit(&f, p, 5, 0).collect();
        assert!(o.iter().all(|q| q.distance(&p) < 1e-15));
        assert_eq!(orbit(&f, p, 1, 0).collect::<Vec<_>>(), vec![p]);
    }

    #[test]
    fn fibers_contract_to_attractor_in_product() {
        let f = product_ns();
        let p = PointX::new(0.123, 0.456, 0.2);
        let o: Vec<_> = orbit(&f, p, 100, 1000).collect();
        assert!(o.iter().all(|q| (q.fiber - 0.5).abs() < 1e-6));
    }

    #[test]
    fn step_base_is_base_map() {
        let f = rich();
        let p = PointX::new(0.31, 0.77, 0.4);
        assert_eq!(f.step(p).base, f.base().apply(p.base));
        let q = PointX { fiber: 0.9, ..p };
        assert_eq!(f.step(q).base, f.step(p).base);
    }

    #[test]
    fn fiber_map_at_product_is_constant() {
        let f = product_ns();
        let m = f.fiber_map_at(TorusPoint::new(0.3, 0.1));
        assert_eq!(m, f.fiber_map_at(TorusPoint::new(0.9, 0.6)));
        let g = rich();
        let x = TorusPoint::new(0.37, 0.61);
        let m = g.fiber_map_at(x);
        for y in [0.0, 0.2, 0.75] {
            assert_abs_diff_eq!(m.lift(y), g.fiber_lift(x, y), epsilon = 1e-15);
            assert_abs_diff_eq!(m.derivative(y), g.fiber_derivative(x, y), epsilon = 1e-14);
        }
    }

    #[test]
    fn composite_maps() {
        let f = rich();
        let p = TorusPoint::ORIGIN;
        let g1 = composite_fiber_map(&f, p, 1).unwrap();
        assert_eq!(g1.lift(0.3), f.fiber_lift(p, 0.3));
        let q = f
            .base()
            .periodic_points(2)
            .into_iter()
            .find(|pp| pp.minimal_period == 2)
            .unwrap()
            .point;
        let g2 = composite_fiber_map(&f, q, 2).unwrap();
        let aq = f.base().apply(q);
        for y in [0.1, 0.6] {
            let direct = f.fiber_lift(aq, f.fiber_lift(q, y));
            assert_abs_diff_eq!(g2.lift(y), direct, epsilon = 1e-12);
        }
        assert!(matches!(
            composite_fiber_map(&f, TorusPoint::new(0.1, 0.2), 2),
            Err(Error::NotPeriodic { .. })
        ));
    }

    #[test]
    fn certificate_examples() {
        let c = modulated(0.08).certify().unwrap();
        assert_abs_diff_eq!(c.inf_deriv, 1.0 - 0.16 * PI, epsilon = 1e-6);
        assert_abs_diff_eq!(c.sup_deriv, 1.0 + 0.16 * PI, epsilon = 1e-6);
        let bad = modulated(0.12).certificate(64);
        assert_abs_diff_eq!(bad.inf_deriv, 1.0 - 0.24 * PI, epsilon = 1e-6);
        assert!(matches!(
            bad.into_result(),
            Err(Error::CertificateFailed { side: ViolatedSide::Stable, .. })
        ));
        let rot = SkewProduct::product(ToralAutomorphism::cat(), CircleMap::rotation(0.3)).unwrap();
        let c = rot.certify().unwrap();
        assert_eq!((c.inf_deriv, c.sup_deriv), (1.0, 1.0));
        let inv = modulated(0.08).inverse_system().certificate(64);
        assert!(inv.passes());
        assert_abs_diff_eq!(inv.sup_deriv, 1.0 / (1.0 - 0.16 * PI), epsilon = 1e-6);
    }

    #[test]
    fn certificate_bounds_hold_off_grid() {
        let f = rich();
        let c = f.certificate(64);
        for i in 0..20_000u64 {
            let h = crate::seed::splitmix64(i);
            let x = TorusPoint::new((h & 0xffff) as f64 / 65536.0, ((h >> 16) & 0xffff) as f64 / 65536.0);
            let y = ((h >> 32) & 0xffff_ffff) as f64 / 4294967296.0;
            let d = f.fiber_derivative(x, y);
            assert!(d >= c.lower_bound && d <= c.upper_bound);
        }
    }

    #[test]
    fn fiber_rotation_family() {
        let f = rich();
        assert_eq!(f.add_fiber_rotation(0.0), f);
        let fb = f.add_fiber_rotation(0.037);
        let x = TorusPoint::new(0.2, 0.9);
        assert_eq!(fb.fiber_map_at(x), f.fiber_map_at(x).add_rotation(0.037));
        assert_eq!(fb.certificate(64), f.certificate(64));
    }

    #[test]
    fn rejects_orientation_reversing_family() {
        let r = FiberFamily::new(
            CircleMap::sine(0.0, 0.14),
            vec![Modulation { target: CoeffTarget::Sin(1), m: [1, 0], amp: 0.03, phase: 0.0 }],
        );
        assert!(matches!(r, Err(Error::NotDiffeomorphism { .. })));
    }

    #[test]
    fn orientation_on_grid() {
        let f = rich();
        for i in 0..64 {
            for j in 0..64 {
                let x = TorusPoint::new(i as f64 / 64.0, j as f64 / 64.0);
                for k in 0..256 {
                    assert!(f.fiber_derivative(x, k as f64 / 256.0) > 0.0);
                }
            }
        }
    }

    #[test]
    fn lyapunov_within_certificate() {
        let f = modulated(0.08);
        let c = f.cached_certificate();
        for s in 0..4 {
            let p = PointX::new(0.1 + 0.2 * s as f64, 0.37, 0.05 * s as f64);
            let l = fiber_lyapunov(&f, p, 20_000);
            assert!(l >= c.inf_deriv.ln() && l <= c.sup_deriv.ln());
        }
    }

    #[test]
    fn inverse_roles_swap() {
        use crate::circle::{periodic_orbits, OrbitClass};
        let f = modulated(0.08);
        let g = f.inverse_system();
        let p = TorusPoint::ORIGIN;
        let fw = periodic_orbits(&composite_fiber_map(&f, p, 1).unwrap(), 8, 1e-4).unwrap();
        let bw = periodic_orbits(&composite_fiber_map(&g, p, 1).unwrap(), 8, 1e-4).unwrap();
        let mut rf = fw.repellers();
        let mut ab = bw.attractors();
        rf.sort_by(f64::total_cmp);
        ab.sort_by(f64::total_cmp);
        assert_eq!(rf.len(), ab.len());
        for (a, b) in rf.iter().zip(&ab) {
            assert!(crate::torus::circle_distance(*a, *b) < 1e-9);
        }
        assert!(bw.orbits.iter().any(|o| o.class == OrbitClass::Repeller));
    }

    #[test]
    fn json_round_trip() {
        let f = rich();
        let s = serde_json::to_string(&f).unwrap();
        let g: SkewProduct = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
        let t: CoeffTarget = "b_3".parse().unwrap();
        assert_eq!(t, CoeffTarget::Cos(3));
        assert!("q_1".parse::<CoeffTarget>().is_err());
        assert!("a_0".parse::<CoeffTarget>().is_err());
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0..1.0f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn step_round_trip(x1 in unit(), x2 in unit(), y in unit()) {
            let f = rich();
            let p = PointX::new(x1, x2, y);
            prop_assert!(f.step_inverse(f.step(p)).distance(&p) < 1e-10);
            let g = f.inverse_system();
            prop_assert!(g.step(f.step(p)).distance(&p) < 1e-10);
            let h = g.inverse_system();
            prop_assert!(h.step(p).distance(&f.step(p)) < 1e-9);
        }

        #[test]
        fn increments_match_differences(x1 in unit(), x2 in unit(), y in unit(), d in -0.5..0.5f64) {
            let f = rich();
            let x = TorusPoint::new(x1, x2);
            let direct = f.fiber_lift(x, y + d) - f.fiber_lift(x, y);
            prop_assert!((f.fiber_increment(x, y, d) - direct).abs() < 1e-13);
            let g = f.inverse_system();
            let direct = g.fiber_lift(x, y + d) - g.fiber_lift(x, y);
            prop_assert!((g.fiber_increment(x, y, d) - direct).abs() < 1e-12);
        }

        #[test]
        fn base_variations_match_differences(x1 in unit(), x2 in unit(), y in unit(),
                                             d1 in -0.3..0.3f64, d2 in -0.3..0.3f64) {
            let f = rich();
            let x = TorusPoint::new(x1, x2);
            let dx = [d1, d2];
            let direct = f.fiber_lift(x.translate(dx), y) - f.fiber_lift(x, y);
            prop_assert!((f.fiber_base_variation(x, dx, y) - direct).abs() < 1e-13);
            let g = f.inverse_system();
            let direct = g.fiber_lift(x.translate(dx), y) - g.fiber_lift(x, y);
            prop_assert!((g.fiber_base_variation(x, dx, y) - direct).abs() < 1e-12);
        }

        #[test]
        fn tiny_differences_are_relative(x1 in unit(), x2 in unit(), y in unit(), s in 1e-14..1e-10f64) {
            let f = rich();
            let x = TorusPoint::new(x1, x2);
            let r = f.fiber_increment(x, y, s) / s;
            prop_assert!((r - f.fiber_derivative(x, y)).abs() < 1e-6);
            let g = f.inverse_system();
            let r = g.fiber_increment(x, y, s) / s;
            prop_assert!((r - g.fiber_derivative(x, y)).abs() < 1e-6);
        }
    }
}
