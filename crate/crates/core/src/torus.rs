//! Linear Anosov maps of the 2-torus.
//!
//! Everything here is exact linear algebra: leaves are straight lines of
//! irrational slope, periodic points are rational points found with integer
//! arithmetic, and homoclinic points are intersections of two covering lines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduce `v` into `[0, 1)`.
///
/// `v - floor(v)` is exact for `|v| < 2^52`; the only rounding happens when a
/// tiny negative `v` rounds up to `1.0`, which is mapped to `0.0`. The reduced
/// value is therefore within one ulp of the true residue.
#[inline]
pub fn wrap(v: f64) -> f64 {
    let r = v - v.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed distance from `a` to `b` on the circle, in `[-0.5, 0.5)`.
#[inline]
pub fn circle_delta(a: f64, b: f64) -> f64 {
    let d = b - a;
    d - (d + 0.5).floor()
}

#[inline]
pub fn circle_distance(a: f64, b: f64) -> f64 {
    circle_delta(a, b).abs()
}

/// A point of `T² = R²/Z²`, always reduced into `[0,1)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub x1: f64,
    pub x2: f64,
}

impl TorusPoint {
    pub fn new(x1: f64, x2: f64) -> Self {
        TorusPoint {
            x1: wrap(x1),
            x2: wrap(x2),
        }
    }

    pub const ORIGIN: TorusPoint = TorusPoint { x1: 0.0, x2: 0.0 };

    /// `self + v` for a displacement `v` in the universal cover.
    #[inline]
    pub fn translate(self, v: [f64; 2]) -> Self {
        TorusPoint::new(self.x1 + v[0], self.x2 + v[1])
    }

    /// Shortest cover displacement from `self` to `other` (each component in `[-0.5,0.5)`).
    #[inline]
    pub fn delta_to(self, other: TorusPoint) -> [f64; 2] {
        [
            circle_delta(self.x1, other.x1),
            circle_delta(self.x2, other.x2),
        ]
    }

    /// Flat torus distance: the minimum over integer translates of the Euclidean distance.
    #[inline]
    pub fn distance(self, other: TorusPoint) -> f64 {
        let d = self.delta_to(other);
        d[0].hypot(d[1])
    }
}

/// Which invariant foliation of the base a leaf belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafKind {
    Stable,
    Unstable,
}

/// A hyperbolic unimodular integer matrix acting on `T²`, with its eigen-data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[i64; 2]; 2]", into = "[[i64; 2]; 2]")]
pub struct ToralAutomorphism {
    matrix: [[i64; 2]; 2],
    inverse: [[i64; 2]; 2],
    det: i64,
    mu_u: f64,
    mu_s: f64,
    v_u: [f64; 2],
    v_s: [f64; 2],
}

impl TryFrom<[[i64; 2]; 2]> for ToralAutomorphism {
    type Error = Error;
    fn try_from(m: [[i64; 2]; 2]) -> Result<Self> {
        ToralAutomorphism::new(m)
    }
}

impl From<ToralAutomorphism> for [[i64; 2]; 2] {
    fn from(a: ToralAutomorphism) -> Self {
        a.matrix
    }
}

fn unit_eigenvector(m: &[[i64; 2]; 2], mu: f64) -> [f64; 2] {
    let (a, b, c, d) = (m[0][0] as f64, m[0][1] as f64, m[1][0] as f64, m[1][1] as f64);
    // Both rows of (M - μI) annihilate the eigenvector; use the better conditioned one.
    let r1 = [b, mu - a];
    let r2 = [mu - d, c];
    let v = if r1[0].hypot(r1[1]) >= r2[0].hypot(r2[1]) {
        r1
    } else {
        r2
    };
    let n = v[0].hypot(v[1]);
    let mut v = [v[0] / n, v[1] / n];
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        v = [-v[0], -v[1]];
    }
    v
}

impl ToralAutomorphism {
    /// Certify `matrix` as a linear Anosov map: `|det| = 1` and no eigenvalue of modulus one.
    pub fn new(matrix: [[i64; 2]; 2]) -> Result<Self> {
        let [[a, b], [c, d]] = matrix;
        let det = a * d - b * c;
        if det.abs() != 1 {
            return Err(Error::NotUnimodular { det });
        }
        let tr = a + d;
        let disc = tr * tr - 4 * det;
        // det = 1: hyperbolic iff |tr| > 2. det = -1: iff tr != 0.
        if disc <= 0 || (det == -1 && tr == 0) || (det == 1 && tr.abs() <= 2) {
            return Err(Error::NotHyperbolic);
        }
        let sq = (disc as f64).sqrt();
        let trf = tr as f64;
        let mu_u = if tr >= 0 {
            (trf + sq) / 2.0
        } else {
            (trf - sq) / 2.0
        };
        let mu_s = det as f64 / mu_u;
        let inverse = [[d * det, -b * det], [-c * det, a * det]];
        Ok(ToralAutomorphism {
            matrix,
            inverse,
            det,
            mu_u,
            mu_s,
            v_u: unit_eigenvector(&matrix, mu_u),
            v_s: unit_eigenvector(&matrix, mu_s),
        })
    }

    /// The cat map `[[2,1],[1,1]]`.
    pub fn cat() -> Self {
        Self::new([[2, 1], [1, 1]]).expect("cat map is Anosov")
    }

    pub fn matrix(&self) -> [[i64; 2]; 2] {
        self.matrix
    }

    pub fn inverse_matrix(&self) -> [[i64; 2]; 2] {
        self.inverse
    }

    pub fn det(&self) -> i64 {
        self.det
    }

    /// Expansion rate `|μ_u| > 1`.
    pub fn lambda_u(&self) -> f64 {
        self.mu_u.abs()
    }

    /// Contraction rate `|μ_s| < 1`.
    pub fn lambda_s(&self) -> f64 {
        self.mu_s.abs()
    }

    /// Signed unstable eigenvalue.
    pub fn mu_u(&self) -> f64 {
        self.mu_u
    }

    /// Signed stable eigenvalue.
    pub fn mu_s(&self) -> f64 {
        self.mu_s
    }

    pub fn v_u(&self) -> [f64; 2] {
        self.v_u
    }

    pub fn v_s(&self) -> [f64; 2] {
        self.v_s
    }

    pub fn direction(&self, kind: LeafKind) -> [f64; 2] {
        match kind {
            LeafKind::Stable => self.v_s,
            LeafKind::Unstable => self.v_u,
        }
    }

    /// The signed eigenvalue belonging to `kind`.
    pub fn eigenvalue(&self, kind: LeafKind) -> f64 {
        match kind {
            LeafKind::Stable => self.mu_s,
            LeafKind::Unstable => self.mu_u,
        }
    }

    /// `A⁻¹` as an automorphism in its own right (stable and unstable data swap).
    pub fn inverse(&self) -> ToralAutomorphism {
        ToralAutomorphism::new(self.inverse).expect("inverse of an Anosov map is Anosov")
    }

    #[inline]
    fn act(m: &[[i64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
        [
            m[0][0] as f64 * v[0] + m[0][1] as f64 * v[1],
            m[1][0] as f64 * v[0] + m[1][1] as f64 * v[1],
        ]
    }

    /// Linear action on a cover displacement (no reduction).
    #[inline]
    pub fn act_on_vector(&self, v: [f64; 2]) -> [f64; 2] {
        Self::act(&self.matrix, v)
    }

    #[inline]
    pub fn act_inverse_on_vector(&self, v: [f64; 2]) -> [f64; 2] {
        Self::act(&self.inverse, v)
    }

    #[inline]
    pub fn apply(&self, pt: TorusPoint) -> TorusPoint {
        let v = Self::act(&self.matrix, [pt.x1, pt.x2]);
        TorusPoint::new(v[0], v[1])
    }

    #[inline]
    pub fn apply_inverse(&self, pt: TorusPoint) -> TorusPoint {
        let v = Self::act(&self.inverse, [pt.x1, pt.x2]);
        TorusPoint::new(v[0], v[1])
    }

    /// Matrix action mod 1, or the action of the integer inverse when `inverse` is set.
    pub fn apply_dir(&self, pt: TorusPoint, inverse: bool) -> TorusPoint {
        if inverse {
            self.apply_inverse(pt)
        } else {
            self.apply(pt)
        }
    }

    /// Integer power `M^k` (`k ≥ 0`).
    pub fn power(&self, k: u32) -> [[i128; 2]; 2] {
        let m = self.matrix.map(|r| r.map(|v| v as i128));
        let mut acc = [[1i128, 0], [0, 1]];
        for _ in 0..k {
            acc = mat_mul(&acc, &m);
        }
        acc
    }

    /// `|det(M^k - I)|`, the number of points fixed by `A^k`.
    pub fn periodic_count(&self, k: u32) -> u64 {
        let p = self.power(k);
        let det = (p[0][0] - 1) * (p[1][1] - 1) - p[0][1] * p[1][0];
        det.unsigned_abs() as u64
    }

    /// All solutions of `(A^k − I)x ∈ Z²`, each tagged with its exact minimal period.
    ///
    /// Solutions are rational with denominator `D = |det(A^k − I)|`; for each
    /// numerator `i` the first row of the congruence `(A^k − I)(i, j) ≡ 0 mod D`
    /// is solved for `j` and the second row checked.
    pub fn periodic_points(&self, k: u32) -> Vec<PeriodicPoint> {
        assert!(k >= 1, "period must be at least 1");
        let p = self.power(k);
        let b = [[p[0][0] - 1, p[0][1]], [p[1][0], p[1][1] - 1]];
        let d = (b[0][0] * b[1][1] - b[0][1] * b[1][0]).abs();
        let mut out = Vec::with_capacity(d as usize);
        let g = gcd(b[0][1].rem_euclid(d), d);
        let step = d / g;
        let coef = (b[0][1].rem_euclid(d) / g).rem_euclid(step);
        let inv = mod_inverse(coef, step);
        for i in 0..d {
            let rhs = (-b[0][0] * i).rem_euclid(d);
            if rhs % g != 0 {
                continue;
            }
            let j0 = ((rhs / g) * inv).rem_euclid(step);
            let mut j = j0;
            while j < d {
                if (b[1][0] * i + b[1][1] * j).rem_euclid(d) == 0 {
                    let numer = [i as i64, j as i64];
                    let denom = d as i64;
                    out.push(PeriodicPoint {
                        point: TorusPoint::new(i as f64 / d as f64, j as f64 / d as f64),
                        numer,
                        denom,
                        minimal_period: self.minimal_period(numer, denom, k),
                    });
                }
                j += step;
            }
        }
        out
    }

    /// Exact image of the rational point `numer / denom`.
    pub fn apply_rational(&self, numer: [i64; 2], denom: i64) -> [i64; 2] {
        let m = &self.matrix;
        let a = (m[0][0] as i128 * numer[0] as i128 + m[0][1] as i128 * numer[1] as i128)
            .rem_euclid(denom as i128);
        let b = (m[1][0] as i128 * numer[0] as i128 + m[1][1] as i128 * numer[1] as i128)
            .rem_euclid(denom as i128);
        [a as i64, b as i64]
    }

    fn minimal_period(&self, numer: [i64; 2], denom: i64, k: u32) -> u32 {
        let mut cur = numer;
        for d in 1..=k {
            cur = self.apply_rational(cur, denom);
            if cur == numer && k.is_multiple_of(d) {
                return d;
            }
        }
        k
    }

    /// The exact base orbit `p, Ap, …, A^{k−1}p` of a `k`-periodic point.
    ///
    /// `p` is matched (to 1e-9) against the rational solutions of `A^k p = p`, so
    /// the returned orbit carries no accumulated rounding.
    pub fn base_orbit(&self, p: TorusPoint, k: u32) -> Result<Vec<TorusPoint>> {
        let not_periodic = Error::NotPeriodic {
            x1: p.x1,
            x2: p.x2,
            period: k as usize,
        };
        if k == 0 {
            return Err(not_periodic);
        }
        let hit = self
            .periodic_points(k)
            .into_iter()
            .find(|q| q.point.distance(p) <= 1e-9)
            .ok_or(not_periodic)?;
        let mut numer = hit.numer;
        let mut orbit = Vec::with_capacity(k as usize);
        for _ in 0..k {
            orbit.push(TorusPoint::new(
                numer[0] as f64 / hit.denom as f64,
                numer[1] as f64 / hit.denom as f64,
            ));
            numer = self.apply_rational(numer, hit.denom);
        }
        Ok(orbit)
    }

    /// Straight leaf segment `pt + t·v` of total length `arclength`, centered at `pt`.
    pub fn leaf_segment(
        &self,
        pt: TorusPoint,
        kind: LeafKind,
        arclength: f64,
        n_points: usize,
    ) -> Vec<LeafSample> {
        let v = self.direction(kind);
        if arclength <= 0.0 || n_points <= 1 {
            return vec![LeafSample { t: 0.0, point: pt }];
        }
        (0..n_points)
            .map(|i| {
                let t = -arclength / 2.0 + arclength * i as f64 / (n_points - 1) as f64;
                LeafSample {
                    t,
                    point: pt.translate([t * v[0], t * v[1]]),
                }
            })
            .collect()
    }

    /// Points of `W^u(p) \ {p}` lying on the local stable segment of radius
    /// `local_radius` through `p`, sorted by unstable arclength from `p`.
    ///
    /// Each intersection solves `t·v_u − s·v_s = m` for an integer shift `m`
    /// with `|m_i| ≤ shift_cap`; only hits with `|t| ≤ shift_cap − local_radius`
    /// are kept, which makes the sorted prefix complete.
    pub fn homoclinic_points(
        &self,
        p: TorusPoint,
        local_radius: f64,
        count: usize,
        shift_cap: i64,
    ) -> Result<Vec<HomoclinicPoint>> {
        let (u, s) = (self.v_u, self.v_s);
        // [u, -s] (t, s)^T = m
        let det = u[0] * (-s[1]) - (-s[0]) * u[1];
        let horizon = shift_cap as f64 - local_radius;
        let mut hits = Vec::new();
        for m1 in -shift_cap..=shift_cap {
            for m2 in -shift_cap..=shift_cap {
                if m1 == 0 && m2 == 0 {
                    continue;
                }
                let (m1f, m2f) = (m1 as f64, m2 as f64);
                let t = (m1f * (-s[1]) - (-s[0]) * m2f) / det;
                let sc = (u[0] * m2f - u[1] * m1f) / det;
                if sc.abs() <= local_radius && t.abs() <= horizon {
                    hits.push(HomoclinicPoint {
                        point: p.translate([sc * s[0], sc * s[1]]),
                        t,
                        s: sc,
                        shift: [m1, m2],
                    });
                }
            }
        }
        hits.sort_by(|a, b| a.t.abs().total_cmp(&b.t.abs()).then(a.t.total_cmp(&b.t)));
        if hits.len() < count || hits.is_empty() {
            return Err(Error::NoneFound { shift_cap });
        }
        hits.truncate(count);
        Ok(hits)
    }

    /// Stable coordinate `s` with `x = p + s·v_s (mod 1)`, searching integer
    /// shifts up to `shift_cap`; `None` if `x` is not on the stable line of `p`
    /// within that horizon (tolerance 1e-9).
    pub fn stable_coordinate(
        &self,
        p: TorusPoint,
        x: TorusPoint,
        shift_cap: i64,
    ) -> Option<f64> {
        let d = p.delta_to(x);
        let (u, s) = (self.v_u, self.v_s);
        // d + m = s·v_s  ⇔  the v_u-component of d + m vanishes.
        let det = s[0] * u[1] - s[1] * u[0];
        let mut best: Option<f64> = None;
        for m1 in -shift_cap..=shift_cap {
            for m2 in -shift_cap..=shift_cap {
                let w = [d[0] + m1 as f64, d[1] + m2 as f64];
                let along_u = (s[0] * w[1] - s[1] * w[0]) / det;
                if along_u.abs() <= 1e-9 {
                    let sc = w[0] * s[0] + w[1] * s[1];
                    if best.is_none_or(|b| sc.abs() < b.abs()) {
                        best = Some(sc);
                    }
                }
            }
        }
        best
    }
}

fn mat_mul(a: &[[i128; 2]; 2], b: &[[i128; 2]; 2]) -> [[i128; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Inverse of `a` modulo `m` (`gcd(a, m) = 1`); `0` when `m = 1`.
fn mod_inverse(a: i128, m: i128) -> i128 {
    if m == 1 {
        return 0;
    }
    let (mut old_r, mut r) = (a.rem_euclid(m), m);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    debug_assert_eq!(old_r, 1);
    old_s.rem_euclid(m)
}

/// A solution of `A^k x = x` with its exact rational representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodicPoint {
    pub point: TorusPoint,
    pub numer: [i64; 2],
    pub denom: i64,
    pub minimal_period: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafSample {
    pub t: f64,
    pub point: TorusPoint,
}

/// A point of `W^u(p) ∩ W^s_loc(p)`.
///
/// `t` is its unstable coordinate (`p + t·v_u` in the cover) and `s` its stable
/// coordinate (`p + s·v_s` after the integer shift `shift`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomoclinicPoint {
    pub point: TorusPoint,
    pub t: f64,
    pub s: f64,
    pub shift: [i64; 2],
}
