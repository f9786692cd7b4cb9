//! Compact groups (finite, tori, SO(3)) with Haar quadrature, exponential,
//! adjoint action, and smooth right actions on manifolds.
//!
//! Conventions:
//! - Actions are right actions, written `m·g`, so `(m·g)·h = m·(gh)`.
//! - A circle angle `θ` rotates coordinate pairs counterclockwise, hence
//!   `ι(1) = (-y, x)` at `(x, y)`.
//! - SO(3) acts on `R^3` by `v·g = gᵀ v`; `so(3) ≅ R^3` via `ξ̂ v = ξ × v`, and
//!   `Ad_g ξ = g ξ`.
//! - Tangent vectors of `G` at `g` are written `g·η` with `η` in the Lie algebra.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::geometry::{Config, Manifold};
use crate::report::{max_abs, VerificationReport};
use crate::Rng;

pub type LieAlgebraVector = DVector<f64>;

/// A finite group given by its Cayley table, `table[a][b] = a·b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGroup {
    pub name: String,
    pub element_names: Vec<String>,
    table: Vec<Vec<usize>>,
    inverse: Vec<usize>,
    identity: usize,
    /// Optional permutation representation on `{0..degree}`, with
    /// `perm(a·b) = perm(a) ∘ perm(b)`.
    permutations: Option<Vec<Vec<usize>>>,
}

impl FiniteGroup {
    /// Validates closure, identity, inverses and (exhaustively) associativity.
    pub fn from_table(
        name: impl Into<String>,
        element_names: Vec<String>,
        table: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = table.len();
        if n == 0 {
            return Err(Error::group("empty Cayley table"));
        }
        if element_names.len() != n {
            return Err(Error::group(format!(
                "{} element names for a table of order {n}",
                element_names.len()
            )));
        }
        for (a, row) in table.iter().enumerate() {
            if row.len() != n {
                return Err(Error::group(format!("row {a} has {} entries, expected {n}", row.len())));
            }
            if let Some(&bad) = row.iter().find(|&&c| c >= n) {
                return Err(Error::group(format!("row {a} references element {bad} outside 0..{n}")));
            }
        }
        let identity = (0..n)
            .find(|&e| (0..n).all(|x| table[e][x] == x && table[x][e] == x))
            .ok_or_else(|| Error::group("Cayley table has no identity element"))?;
        let mut inverse = vec![usize::MAX; n];
        for a in 0..n {
            inverse[a] = (0..n)
                .find(|&b| table[a][b] == identity && table[b][a] == identity)
                .ok_or_else(|| {
                    Error::group(format!("element {} has no inverse", element_names[a]))
                })?;
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if table[table[a][b]][c] != table[a][table[b][c]] {
                        return Err(Error::group(format!(
                            "Cayley table is not associative at ({}, {}, {})",
                            element_names[a], element_names[b], element_names[c]
                        )));
                    }
                }
            }
        }
        Ok(FiniteGroup {
            name: name.into(),
            element_names,
            table,
            inverse,
            identity,
            permutations: None,
        })
    }

    /// Cyclic group `C_n`, element `k` acting on `{0..n}` by the shift `i ↦ i + k`.
    pub fn cyclic(n: usize) -> Self {
        let names = (0..n).map(|k| format!("r{k}")).collect();
        let table = (0..n).map(|a| (0..n).map(|b| (a + b) % n).collect()).collect();
        let mut g = FiniteGroup::from_table(format!("C{n}"), names, table).expect("cyclic table");
        g.permutations = Some((0..n).map(|k| (0..n).map(|i| (i + k) % n).collect()).collect());
        g
    }

    /// `S_3` as permutations of `{0, 1, 2}` with `a·b = a ∘ b`.
    pub fn symmetric3() -> Self {
        let perms: Vec<Vec<usize>> = vec![
            vec![0, 1, 2],
            vec![1, 0, 2],
            vec![0, 2, 1],
            vec![2, 1, 0],
            vec![1, 2, 0],
            vec![2, 0, 1],
        ];
        let names = ["e", "(01)", "(12)", "(02)", "(012)", "(021)"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let index = |p: &Vec<usize>| perms.iter().position(|q| q == p).expect("closed");
        let table = perms
            .iter()
            .map(|a| {
                perms
                    .iter()
                    .map(|b| index(&(0..3).map(|i| a[b[i]]).collect()))
                    .collect()
            })
            .collect();
        let mut g = FiniteGroup::from_table("S3", names, table).expect("S3 table");
        g.permutations = Some(perms);
        g
    }

    pub fn order(&self) -> usize {
        self.table.len()
    }

    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.table[a][b]
    }

    pub fn inv(&self, a: usize) -> usize {
        self.inverse[a]
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn permutations(&self) -> Option<&[Vec<usize>]> {
        self.permutations.as_deref()
    }

    pub fn is_abelian(&self) -> bool {
        let n = self.order();
        (0..n).all(|a| (0..n).all(|b| self.table[a][b] == self.table[b][a]))
    }

    /// Elements commuting with everything.
    pub fn center(&self) -> Vec<usize> {
        let n = self.order();
        (0..n)
            .filter(|&a| (0..n).all(|b| self.table[a][b] == self.table[b][a]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompactGroup {
    Finite(Arc<FiniteGroup>),
    /// `T^k`, elements are angle vectors in `[0, 2π)^k`.
    Torus(usize),
    So3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupElement {
    Finite(usize),
    Torus(Vec<f64>),
    So3(Matrix3<f64>),
}

/// Quadrature orders for Haar averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaarConfig {
    /// Trapezoid nodes per torus angle.
    pub torus_nodes: usize,
    /// Gauss-Legendre nodes in the SO(3) Euler angle β.
    pub so3_beta: usize,
    /// Trapezoid nodes in the SO(3) Euler angle α.
    pub so3_alpha: usize,
    /// Trapezoid nodes in the SO(3) Euler angle γ.
    pub so3_gamma: usize,
}

impl Default for HaarConfig {
    fn default() -> Self {
        HaarConfig {
            torus_nodes: 64,
            so3_beta: 16,
            so3_alpha: 32,
            so3_gamma: 32,
        }
    }
}

impl HaarConfig {
    pub fn validate(&self) -> Result<()> {
        let min = [self.torus_nodes, self.so3_beta, self.so3_alpha, self.so3_gamma]
            .into_iter()
            .min()
            .unwrap_or(0);
        if min < 4 {
            return Err(Error::group(format!("quadrature order {min} is below the minimum of 4")));
        }
        Ok(())
    }

    pub fn doubled(&self) -> Self {
        HaarConfig {
            torus_nodes: 2 * self.torus_nodes,
            so3_beta: 2 * self.so3_beta,
            so3_alpha: 2 * self.so3_alpha,
            so3_gamma: 2 * self.so3_gamma,
        }
    }
}

pub const BUILTIN_GROUPS: [&str; 7] = ["C2", "C3", "C4", "S3", "circle", "torus2", "so3"];

impl fmt::Display for CompactGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl CompactGroup {
    pub fn builtin(name: &str) -> Result<Self> {
        Ok(match name {
            "C2" => CompactGroup::Finite(Arc::new(FiniteGroup::cyclic(2))),
            "C3" => CompactGroup::Finite(Arc::new(FiniteGroup::cyclic(3))),
            "C4" => CompactGroup::Finite(Arc::new(FiniteGroup::cyclic(4))),
            "S3" => CompactGroup::Finite(Arc::new(FiniteGroup::symmetric3())),
            "circle" => CompactGroup::Torus(1),
            "torus2" => CompactGroup::Torus(2),
            "so3" => CompactGroup::So3,
            other => {
                return Err(Error::group(format!(
                    "unknown group `{other}` (catalog: {})",
                    BUILTIN_GROUPS.join(", ")
                )))
            }
        })
    }

    pub fn finite(g: FiniteGroup) -> Self {
        CompactGroup::Finite(Arc::new(g))
    }

    pub fn name(&self) -> String {
        match self {
            CompactGroup::Finite(g) => g.name.clone(),
            CompactGroup::Torus(1) => "circle".into(),
            CompactGroup::Torus(k) => format!("torus{k}"),
            CompactGroup::So3 => "so3".into(),
        }
    }

    pub fn lie_dim(&self) -> usize {
        match self {
            CompactGroup::Finite(_) => 0,
            CompactGroup::Torus(k) => *k,
            CompactGroup::So3 => 3,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, CompactGroup::Finite(_))
    }

    pub fn is_abelian(&self) -> bool {
        match self {
            CompactGroup::Finite(g) => g.is_abelian(),
            CompactGroup::Torus(_) => true,
            CompactGroup::So3 => false,
        }
    }

    pub fn identity(&self) -> GroupElement {
        match self {
            CompactGroup::Finite(g) => GroupElement::Finite(g.identity()),
            CompactGroup::Torus(k) => GroupElement::Torus(vec![0.0; *k]),
            CompactGroup::So3 => GroupElement::So3(Matrix3::identity()),
        }
    }

    pub fn mul(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        match (self, a, b) {
            (CompactGroup::Finite(g), GroupElement::Finite(x), GroupElement::Finite(y)) => {
                GroupElement::Finite(g.mul(*x, *y))
            }
            (CompactGroup::Torus(_), GroupElement::Torus(x), GroupElement::Torus(y)) => {
                GroupElement::Torus(x.iter().zip(y).map(|(p, q)| wrap_angle(p + q)).collect())
            }
            (CompactGroup::So3, GroupElement::So3(x), GroupElement::So3(y)) => {
                GroupElement::So3(x * y)
            }
            _ => panic!("group element does not belong to {self}"),
        }
    }

    pub fn inv(&self, a: &GroupElement) -> GroupElement {
        match (self, a) {
            (CompactGroup::Finite(g), GroupElement::Finite(x)) => GroupElement::Finite(g.inv(*x)),
            (CompactGroup::Torus(_), GroupElement::Torus(x)) => {
                GroupElement::Torus(x.iter().map(|p| wrap_angle(-p)).collect())
            }
            (CompactGroup::So3, GroupElement::So3(x)) => GroupElement::So3(x.transpose()),
            _ => panic!("group element does not belong to {self}"),
        }
    }

    /// `exp(t ξ)`.
    pub fn exp(&self, xi: &LieAlgebraVector, t: f64) -> Result<GroupElement> {
        self.check_algebra(xi)?;
        match self {
            CompactGroup::Finite(_) => Err(self.no_algebra("exp")),
            CompactGroup::Torus(_) => Ok(GroupElement::Torus(
                xi.iter().map(|x| wrap_angle(t * x)).collect(),
            )),
            CompactGroup::So3 => Ok(GroupElement::So3(so3_exp(&Vector3::new(
                t * xi[0],
                t * xi[1],
                t * xi[2],
            )))),
        }
    }

    /// `Ad_g ξ`.
    pub fn ad(&self, g: &GroupElement, xi: &LieAlgebraVector) -> Result<LieAlgebraVector> {
        self.check_algebra(xi)?;
        match (self, g) {
            (CompactGroup::Finite(_), _) => Err(self.no_algebra("Ad")),
            (CompactGroup::Torus(_), GroupElement::Torus(_)) => Ok(xi.clone()),
            (CompactGroup::So3, GroupElement::So3(r)) => {
                let v = r * Vector3::new(xi[0], xi[1], xi[2]);
                Ok(DVector::from_column_slice(v.as_slice()))
            }
            _ => Err(Error::group(format!("element does not belong to {self}"))),
        }
    }

    fn no_algebra(&self, what: &str) -> Error {
        Error::group(format!("{what} is unsupported for the finite group {self} (Lie algebra is 0)"))
    }

    fn check_algebra(&self, xi: &LieAlgebraVector) -> Result<()> {
        if xi.len() != self.lie_dim() {
            return Err(Error::group(format!(
                "Lie algebra vector of length {} for {self} (dimension {})",
                xi.len(),
                self.lie_dim()
            )));
        }
        Ok(())
    }

    /// Flat coordinates: `[index]`, angles, or the 9 matrix entries row-major.
    /// These are the values bound to `g1, g2, ...` in expressions.
    pub fn coordinates(&self, g: &GroupElement) -> Vec<f64> {
        match g {
            GroupElement::Finite(i) => vec![*i as f64],
            GroupElement::Torus(a) => a.clone(),
            GroupElement::So3(r) => {
                let mut out = Vec::with_capacity(9);
                for i in 0..3 {
                    for j in 0..3 {
                        out.push(r[(i, j)]);
                    }
                }
                out
            }
        }
    }

    pub fn coordinate_len(&self) -> usize {
        match self {
            CompactGroup::Finite(_) => 1,
            CompactGroup::Torus(k) => *k,
            CompactGroup::So3 => 9,
        }
    }

    pub fn from_coordinates(&self, c: &[f64]) -> Result<GroupElement> {
        if c.len() != self.coordinate_len() {
            return Err(Error::group(format!(
                "{} coordinates for {self}, expected {}",
                c.len(),
                self.coordinate_len()
            )));
        }
        let g = match self {
            CompactGroup::Finite(g) => {
                let i = c[0].round();
                if (c[0] - i).abs() > 1e-9 || i < 0.0 || i as usize >= g.order() {
                    return Err(Error::group(format!("{} is not an element index of {self}", c[0])));
                }
                GroupElement::Finite(i as usize)
            }
            CompactGroup::Torus(_) => GroupElement::Torus(c.iter().map(|a| wrap_angle(*a)).collect()),
            CompactGroup::So3 => GroupElement::So3(Matrix3::from_row_slice(c)),
        };
        Ok(g)
    }

    /// Finite: 0 or 1. Torus: largest wrapped angle difference. SO(3): rotation angle of `a⁻¹b`.
    pub fn distance(&self, a: &GroupElement, b: &GroupElement) -> f64 {
        match (a, b) {
            (GroupElement::Finite(x), GroupElement::Finite(y)) => {
                if x == y {
                    0.0
                } else {
                    1.0
                }
            }
            (GroupElement::Torus(x), GroupElement::Torus(y)) => x
                .iter()
                .zip(y)
                .map(|(p, q)| angle_diff(*p, *q).abs())
                .fold(0.0, f64::max),
            (GroupElement::So3(x), GroupElement::So3(y)) => {
                // ‖R1 - R2‖_F = 2√2 sin(θ/2); stays accurate near θ = 0.
                let chord = (x - y).norm() / (2.0 * std::f64::consts::SQRT_2);
                2.0 * chord.clamp(0.0, 1.0).asin()
            }
            _ => f64::INFINITY,
        }
    }

    /// Deviation of an element from its defining constraints.
    pub fn element_residual(&self, g: &GroupElement) -> f64 {
        match (self, g) {
            (CompactGroup::Finite(f), GroupElement::Finite(i)) => {
                if *i < f.order() {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            (CompactGroup::Torus(k), GroupElement::Torus(a)) => {
                if a.len() != *k {
                    return f64::INFINITY;
                }
                a.iter()
                    .map(|x| if (0.0..TAU).contains(x) { 0.0 } else { x.abs() })
                    .fold(0.0, f64::max)
            }
            (CompactGroup::So3, GroupElement::So3(r)) => {
                let orth = (r.transpose() * r - Matrix3::identity()).amax();
                orth.max((r.determinant() - 1.0).abs())
            }
            _ => f64::INFINITY,
        }
    }

    /// Maps an element back onto the group: wraps angles, re-orthonormalizes rotations.
    pub fn canonicalize(&self, g: &GroupElement) -> GroupElement {
        match g {
            GroupElement::Torus(a) => GroupElement::Torus(a.iter().map(|x| wrap_angle(*x)).collect()),
            GroupElement::So3(r) => GroupElement::So3(orthonormalize(r)),
            other => other.clone(),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> GroupElement {
        match self {
            CompactGroup::Finite(g) => GroupElement::Finite(rng.random_range(0..g.order())),
            CompactGroup::Torus(k) => {
                GroupElement::Torus((0..*k).map(|_| rng.random_range(0.0..TAU)).collect())
            }
            CompactGroup::So3 => {
                let axis = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let angle = rng.random_range(0.0..PI);
                let axis = if axis.norm() < 1e-6 { Vector3::z() } else { axis.normalize() };
                GroupElement::So3(so3_exp(&(axis * angle)))
            }
        }
    }

    /// Every element of a finite group; `None` for Lie groups.
    pub fn elements(&self) -> Option<Vec<GroupElement>> {
        match self {
            CompactGroup::Finite(g) => Some((0..g.order()).map(GroupElement::Finite).collect()),
            _ => None,
        }
    }

    /// Nodes and weights of the Haar rule; weights sum to 1.
    pub fn haar_rule(&self, cfg: &HaarConfig) -> Result<Vec<(GroupElement, f64)>> {
        cfg.validate()?;
        Ok(match self {
            CompactGroup::Finite(g) => {
                let w = 1.0 / g.order() as f64;
                (0..g.order()).map(|i| (GroupElement::Finite(i), w)).collect()
            }
            CompactGroup::Torus(k) => {
                let n = cfg.torus_nodes;
                let total = n.pow(*k as u32);
                let w = 1.0 / total as f64;
                (0..total)
                    .map(|mut idx| {
                        let mut angles = vec![0.0; *k];
                        for a in angles.iter_mut() {
                            *a = TAU * (idx % n) as f64 / n as f64;
                            idx /= n;
                        }
                        (GroupElement::Torus(angles), w)
                    })
                    .collect()
            }
            CompactGroup::So3 => {
                let (bx, bw) = gauss_legendre(cfg.so3_beta);
                let (na, ng) = (cfg.so3_alpha, cfg.so3_gamma);
                let mut rule = Vec::with_capacity(na * ng * bx.len());
                for a in 0..na {
                    let alpha = TAU * a as f64 / na as f64;
                    for (x, wx) in bx.iter().zip(&bw) {
                        let beta = 0.5 * PI * (x + 1.0);
                        let wb = 0.5 * PI * wx * beta.sin();
                        for c in 0..ng {
                            let gamma = TAU * c as f64 / ng as f64;
                            let w = (TAU / na as f64) * (TAU / ng as f64) * wb / (8.0 * PI * PI);
                            rule.push((GroupElement::So3(euler_zxz(alpha, beta, gamma)), w));
                        }
                    }
                }
                rule
            }
        })
    }

    /// `∫_G F(g) dg` by the configured rule. Terms are evaluated in parallel and
    /// summed in node order.
    pub fn haar_average<F>(&self, cfg: &HaarConfig, f: F) -> Result<DVector<f64>>
    where
        F: Fn(&GroupElement) -> Result<DVector<f64>> + Sync,
    {
        let rule = self.haar_rule(cfg)?;
        haar_sum(&rule, f)
    }
}

/// Weighted sum over a precomputed rule, in node order.
pub fn haar_sum<F>(rule: &[(GroupElement, f64)], f: F) -> Result<DVector<f64>>
where
    F: Fn(&GroupElement) -> Result<DVector<f64>> + Sync,
{
    let terms = rule
        .par_iter()
        .map(|(g, w)| f(g).map(|v| v * *w))
        .collect::<Result<Vec<_>>>()?;
    let mut iter = terms.into_iter();
    let mut acc = iter.next().ok_or_else(|| Error::group("empty quadrature rule"))?;
    for t in iter {
        if t.len() != acc.len() {
            return Err(Error::group("integrand changed length across the group"));
        }
        acc += t;
    }
    Ok(acc)
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// `a - b` reduced to `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues' formula for `exp(v̂)`.
pub fn so3_exp(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-6 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(v);
    Matrix3::identity() + k * a + k * k * b
}

/// `Rz(α) Rx(β) Rz(γ)`.
pub fn euler_zxz(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    let rz = |t: f64| Matrix3::new(t.cos(), -t.sin(), 0.0, t.sin(), t.cos(), 0.0, 0.0, 0.0, 1.0);
    let rx = Matrix3::new(
        1.0,
        0.0,
        0.0,
        0.0,
        beta.cos(),
        -beta.sin(),
        0.0,
        beta.sin(),
        beta.cos(),
    );
    rz(alpha) * rx * rz(gamma)
}

/// Nearest rotation via the polar decomposition.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut q = u * vt;
    if q.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        q = u * d * vt;
    }
    q
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = x;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// How a group acts on the ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionKind {
    /// Every point fixed.
    Trivial,
    /// Finite group: `m·g = M_g m`, requires `M_{gh} = M_h M_g`.
    FiniteMatrix(Vec<DMatrix<f64>>),
    /// Torus: each `(angle, a, b)` rotates coordinates `(a, b)` by that angle.
    TorusRotation(Vec<(usize, usize, usize)>),
    /// SO(3): `v·g = gᵀ v` on consecutive coordinate triples.
    So3Blocks,
    /// Finite group: one component list per element.
    FiniteExpr(Vec<Vec<Expr>>),
    /// Lie group: components in `x1..xn` and group coordinates `g1..gk`.
    LieExpr(Vec<Expr>),
}

/// A smooth right action of a compact group on an embedded manifold.
#[derive(Debug, Clone)]
pub struct SmoothAction {
    pub group: CompactGroup,
    pub manifold: Manifold,
    pub kind: ActionKind,
    pub cfg: Config,
}

impl SmoothAction {
    pub fn new(group: CompactGroup, manifold: Manifold, kind: ActionKind) -> Result<Self> {
        let n = manifold.ambient_dim();
        match (&group, &kind) {
            (_, ActionKind::Trivial) => {}
            (CompactGroup::Finite(g), ActionKind::FiniteMatrix(ms)) => {
                if ms.len() != g.order() || ms.iter().any(|m| m.shape() != (n, n)) {
                    return Err(Error::group(format!(
                        "need {} matrices of size {n}x{n} for {group}",
                        g.order()
                    )));
                }
            }
            (CompactGroup::Finite(g), ActionKind::FiniteExpr(es)) => {
                if es.len() != g.order() || es.iter().any(|c| c.len() != n) {
                    return Err(Error::group(format!(
                        "need {} component lists of length {n} for {group}",
                        g.order()
                    )));
                }
            }
            (CompactGroup::Torus(k), ActionKind::TorusRotation(pairs)) => {
                for &(angle, a, b) in pairs {
                    if angle >= *k || a >= n || b >= n || a == b {
                        return Err(Error::group(format!(
                            "rotation (angle {angle}, coords {a}, {b}) does not fit {group} on R^{n}"
                        )));
                    }
                }
            }
            (CompactGroup::So3, ActionKind::So3Blocks) => {
                if !n.is_multiple_of(3) || n == 0 {
                    return Err(Error::group(format!("SO(3) block action needs R^(3k), got R^{n}")));
                }
            }
            (CompactGroup::Torus(_) | CompactGroup::So3, ActionKind::LieExpr(es)) => {
                if es.len() != n {
                    return Err(Error::group(format!("action needs {n} components, got {}", es.len())));
                }
            }
            _ => {
                return Err(Error::group(format!("action kind does not apply to {group}")));
            }
        }
        Ok(SmoothAction {
            group,
            manifold,
            kind,
            cfg: Config::default(),
        })
    }

    pub fn with_config(mut self, cfg: Config) -> Self {
        self.cfg = cfg;
        self
    }

    /// `C2` acting on `R^n` (or a submanifold) by `m·σ = -m`.
    pub fn sign(manifold: Manifold) -> Result<Self> {
        let n = manifold.ambient_dim();
        let ms = vec![DMatrix::identity(n, n), -DMatrix::identity(n, n)];
        SmoothAction::new(CompactGroup::builtin("C2")?, manifold, ActionKind::FiniteMatrix(ms))
    }

    /// A finite group with a permutation representation of degree `n` acting on
    /// `R^n` by `(m·g)_i = m_{g(i)}`.
    pub fn permutation(group: CompactGroup, manifold: Manifold) -> Result<Self> {
        let n = manifold.ambient_dim();
        let perms = match &group {
            CompactGroup::Finite(g) => g
                .permutations()
                .ok_or_else(|| Error::group(format!("{group} has no permutation representation")))?
                .to_vec(),
            _ => return Err(Error::group("permutation actions need a finite group")),
        };
        if perms.iter().any(|p| p.len() != n) {
            return Err(Error::group(format!("{group} permutes {} points, ambient is R^{n}", perms[0].len())));
        }
        let ms = perms
            .iter()
            .map(|p| DMatrix::from_fn(n, n, |i, j| if p[i] == j { 1.0 } else { 0.0 }))
            .collect();
        SmoothAction::new(group, manifold, ActionKind::FiniteMatrix(ms))
    }

    /// `C_n` rotating each listed coordinate pair by `2πk/n`.
    pub fn cyclic_rotation(group: CompactGroup, manifold: Manifold, pairs: &[(usize, usize)]) -> Result<Self> {
        let order = match &group {
            CompactGroup::Finite(g) => g.order(),
            _ => return Err(Error::group("cyclic rotation needs a finite group")),
        };
        let n = manifold.ambient_dim();
        let ms = (0..order)
            .map(|k| {
                let a = TAU * k as f64 / order as f64;
                let mut m = DMatrix::identity(n, n);
                for &(i, j) in pairs {
                    m[(i, i)] = a.cos();
                    m[(i, j)] = -a.sin();
                    m[(j, i)] = a.sin();
                    m[(j, j)] = a.cos();
                }
                m
            })
            .collect();
        SmoothAction::new(group, manifold, ActionKind::FiniteMatrix(ms))
    }

    pub fn torus_rotation(k: usize, manifold: Manifold, pairs: Vec<(usize, usize, usize)>) -> Result<Self> {
        SmoothAction::new(CompactGroup::Torus(k), manifold, ActionKind::TorusRotation(pairs))
    }

    pub fn so3_linear(manifold: Manifold) -> Result<Self> {
        SmoothAction::new(CompactGroup::So3, manifold, ActionKind::So3Blocks)
    }

    pub fn ambient_dim(&self) -> usize {
        self.manifold.ambient_dim()
    }

    pub fn is_linear(&self) -> bool {
        matches!(
            self.kind,
            ActionKind::Trivial
                | ActionKind::FiniteMatrix(_)
                | ActionKind::TorusRotation(_)
                | ActionKind::So3Blocks
        )
    }

    /// The matrix of `m ↦ m·g` for linear actions.
    pub fn matrix(&self, g: &GroupElement) -> Option<DMatrix<f64>> {
        let n = self.ambient_dim();
        match (&self.kind, g) {
            (ActionKind::Trivial, _) => Some(DMatrix::identity(n, n)),
            (ActionKind::FiniteMatrix(ms), GroupElement::Finite(i)) => ms.get(*i).cloned(),
            (ActionKind::TorusRotation(pairs), GroupElement::Torus(angles)) => {
                let mut m = DMatrix::identity(n, n);
                for &(k, a, b) in pairs {
                    let r = nalgebra::Matrix2::new(
                        angles[k].cos(),
                        -angles[k].sin(),
                        angles[k].sin(),
                        angles[k].cos(),
                    );
                    let block = nalgebra::Matrix2::new(m[(a, a)], m[(a, b)], m[(b, a)], m[(b, b)]);
                    let out = r * block;
                    m[(a, a)] = out[(0, 0)];
                    m[(a, b)] = out[(0, 1)];
                    m[(b, a)] = out[(1, 0)];
                    m[(b, b)] = out[(1, 1)];
                }
                Some(m)
            }
            (ActionKind::So3Blocks, GroupElement::So3(r)) => {
                let mut m = DMatrix::zeros(n, n);
                for blk in 0..n / 3 {
                    m.view_mut((3 * blk, 3 * blk), (3, 3)).copy_from(&r.transpose());
                }
                Some(m)
            }
            _ => None,
        }
    }

    /// `m·g`.
    pub fn act(&self, m: &DVector<f64>, g: &GroupElement) -> Result<DVector<f64>> {
        if m.len() != self.ambient_dim() {
            return Err(Error::group(format!(
                "point of length {} for an action on R^{}",
                m.len(),
                self.ambient_dim()
            )));
        }
        if let Some(mat) = self.matrix(g) {
            return Ok(mat * m);
        }
        match (&self.kind, g) {
            (ActionKind::FiniteExpr(es), GroupElement::Finite(i)) => {
                let b = Bindings::point(m.as_slice());
                let vals = es[*i]
                    .iter()
                    .map(|e| e.eval(&b))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Ok(DVector::from_vec(vals))
            }
            (ActionKind::LieExpr(es), _) => {
                let gc = self.group.coordinates(g);
                let b = Bindings::with_group(m.as_slice(), &gc);
                let vals = es
                    .iter()
                    .map(|e| e.eval(&b))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Ok(DVector::from_vec(vals))
            }
            _ => Err(Error::group(format!("element does not belong to {}", self.group))),
        }
    }

    /// Columns `ι(m, e_j)` for the Lie algebra basis; `n x 0` for finite groups.
    pub fn inf_matrix(&self, m: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.ambient_dim();
        let k = self.group.lie_dim();
        match &self.kind {
            _ if k == 0 => Ok(DMatrix::zeros(n, 0)),
            ActionKind::Trivial => Ok(DMatrix::zeros(n, k)),
            ActionKind::TorusRotation(pairs) => {
                let mut out = DMatrix::zeros(n, k);
                for &(angle, a, b) in pairs {
                    out[(a, angle)] -= m[b];
                    out[(b, angle)] += m[a];
                }
                Ok(out)
            }
            ActionKind::So3Blocks => {
                let mut out = DMatrix::zeros(n, 3);
                for blk in 0..n / 3 {
                    let v = Vector3::new(m[3 * blk], m[3 * blk + 1], m[3 * blk + 2]);
                    for (j, e) in [Vector3::x(), Vector3::y(), Vector3::z()].iter().enumerate() {
                        let c = v.cross(e);
                        for r in 0..3 {
                            out[(3 * blk + r, j)] = c[r];
                        }
                    }
                }
                Ok(out)
            }
            _ => {
                let h = self.cfg.fd_step;
                let mut out = DMatrix::zeros(n, k);
                for j in 0..k {
                    let e = DVector::from_fn(k, |i, _| if i == j { 1.0 } else { 0.0 });
                    let plus = self.act(m, &self.group.exp(&e, h)?)?;
                    let minus = self.act(m, &self.group.exp(&e, -h)?)?;
                    out.set_column(j, &((plus - minus) / (2.0 * h)));
                }
                if self.manifold.codim() > 0 {
                    out = self.manifold.tangent_projector(m, &self.cfg)? * out;
                }
                Ok(out)
            }
        }
    }

    /// `ι(m, ξ)`, the derivative of `t ↦ m·exp(tξ)` at 0.
    pub fn inf_action(&self, m: &DVector<f64>, xi: &LieAlgebraVector) -> Result<DVector<f64>> {
        if self.group.lie_dim() == 0 {
            return Ok(DVector::zeros(self.ambient_dim()));
        }
        if xi.len() != self.group.lie_dim() {
            return Err(Error::group(format!(
                "Lie algebra vector of length {} for {}",
                xi.len(),
                self.group
            )));
        }
        Ok(self.inf_matrix(m)? * xi)
    }

    /// Pushforward of `v ∈ T_m M` by `a(·, g)`: matrix product for linear
    /// actions, projected Jacobian otherwise.
    pub fn tangent_action(
        &self,
        m: &DVector<f64>,
        v: &DVector<f64>,
        g: &GroupElement,
    ) -> Result<DVector<f64>> {
        match self.matrix(g) {
            Some(mat) => Ok(mat * v),
            None => self.tangent_action_jacobian(m, v, g),
        }
    }

    /// The Jacobian route for [`Self::tangent_action`], used for every
    /// non-linear action and as a cross-check for linear ones.
    pub fn tangent_action_jacobian(
        &self,
        m: &DVector<f64>,
        v: &DVector<f64>,
        g: &GroupElement,
    ) -> Result<DVector<f64>> {
        let h = self.cfg.fd_step;
        let n = self.ambient_dim();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut plus = m.clone();
            let mut minus = m.clone();
            plus[j] += h;
            minus[j] -= h;
            jac.set_column(j, &((self.act(&plus, g)? - self.act(&minus, g)?) / (2.0 * h)));
        }
        let w = jac * v;
        if self.manifold.codim() == 0 {
            return Ok(w);
        }
        let target = self.act(m, g)?;
        Ok(self.manifold.tangent_project(&target, &w, &self.cfg)?.vector)
    }

    /// Samples the action laws `m·e = m`, `(m·g)·h = m·(gh)` and that `m·g`
    /// stays on the manifold.
    pub fn check_laws(&self, rng: &mut Rng, samples: usize, radius: f64) -> Result<VerificationReport> {
        let mut report = VerificationReport::new(format!("action of {} on {}", self.group, self.manifold));
        let e = self.group.identity();
        let (mut unit, mut assoc, mut on) = (0.0f64, 0.0f64, 0.0f64);
        let mut worst = None;
        for _ in 0..samples {
            let m = self.manifold.sample_one(rng, radius, &self.cfg)?;
            let g = self.group.sample(rng);
            let h = self.group.sample(rng);
            unit = max_abs(unit, (self.act(&m, &e)? - &m).amax());
            let mg = self.act(&m, &g)?;
            let lhs = self.act(&mg, &h)?;
            let rhs = self.act(&m, &self.group.mul(&g, &h))?;
            let r = (lhs - rhs).amax();
            if !(r <= assoc) {
                worst = Some(format!("m = {:?}, g = {:?}, h = {:?}", m.as_slice(), g, h));
            }
            assoc = max_abs(assoc, r);
            on = max_abs(on, self.manifold.constraint_residual(&mg)?);
        }
        let tol = 1e-9;
        report.check("action_unit", unit, tol);
        let c = report.check("action_associativity", assoc, tol);
        if let Some(w) = worst {
            c.with_detail(w);
        }
        report.check("action_preserves_manifold", on, self.cfg.on_manifold_tol.max(tol));
        Ok(report)
    }

    /// Errors naming the first failing law.
    pub fn validate(&self, rng: &mut Rng, samples: usize, radius: f64) -> Result<()> {
        let report = self.check_laws(rng, samples, radius)?;
        match report.checks.iter().find(|c| !c.passed) {
            None => Ok(()),
            Some(c) => Err(Error::group(format!(
                "action law `{}` violated (residual {:.3e}){}",
                c.name,
                c.max_residual,
                c.detail.as_ref().map(|d| format!(" at {d}")).unwrap_or_default()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use nalgebra::dvector;

    #[test]
    fn builtin_catalog() {
        for name in BUILTIN_GROUPS {
            CompactGroup::builtin(name).unwrap();
        }
        let err = CompactGroup::builtin("sl2").unwrap_err().to_string();
        assert!(err.contains("so3") && err.contains("C2"));
    }

    #[test]
    fn cayley_table_validation_names_the_triple() {
        let names: Vec<String> = ["e", "a", "b"].iter().map(|s| s.to_string()).collect();
        // b·b = a breaks associativity with the rest of the table.
        let table = vec![vec![0, 1, 2], vec![1, 0, 2], vec![2, 2, 0]];
        let err = FiniteGroup::from_table("bad", names, table).unwrap_err().to_string();
        assert!(err.contains("not associative") || err.contains("inverse"), "{err}");
    }

    #[test]
    fn s3_is_nonabelian_with_trivial_center() {
        let g = FiniteGroup::symmetric3();
        assert!(!g.is_abelian());
        assert_eq!(g.center(), vec![0]);
        assert_eq!(FiniteGroup::cyclic(2).center().len(), 2);
    }

    #[test]
    fn exp_examples() {
        let circle = CompactGroup::Torus(1);
        match circle.exp(&dvector![1.0], PI).unwrap() {
            GroupElement::Torus(a) => assert!((a[0] - PI).abs() < 1e-15),
            _ => unreachable!(),
        }
        let so3 = CompactGroup::So3;
        match so3.exp(&dvector![0.0, 0.0, 1.0], PI / 2.0).unwrap() {
            GroupElement::So3(r) => {
                // Rodrigues oracle: rotation by 90° about z.
                let oracle = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
                assert!((r - oracle).amax() < 1e-12);
                assert!((r[(0, 1)] + 1.0).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
        for g in [circle.clone(), so3.clone(), CompactGroup::Torus(2)] {
            let xi = DVector::from_element(g.lie_dim(), 0.7);
            assert_eq!(g.distance(&g.exp(&xi, 0.0).unwrap(), &g.identity()), 0.0);
        }
        assert!(CompactGroup::builtin("C2").unwrap().exp(&dvector![], 1.0).is_err());
    }

    #[test]
    fn ad_examples() {
        let t2 = CompactGroup::Torus(2);
        let g = t2.sample(&mut seeded_rng(1));
        assert_eq!(t2.ad(&g, &dvector![0.3, -1.0]).unwrap(), dvector![0.3, -1.0]);
        let so3 = CompactGroup::So3;
        let g = so3.exp(&dvector![0.0, 0.0, 1.0], PI / 2.0).unwrap();
        let v = so3.ad(&g, &dvector![1.0, 0.0, 0.0]).unwrap();
        assert!((v - dvector![0.0, 1.0, 0.0]).amax() < 1e-12);
        let xi = dvector![0.2, 0.5, -0.1];
        assert_eq!(so3.ad(&so3.identity(), &xi).unwrap(), xi);
    }

    #[test]
    fn ad_matches_conjugation_of_hat() {
        let so3 = CompactGroup::So3;
        let mut rng = seeded_rng(2);
        for _ in 0..10 {
            let g = so3.sample(&mut rng);
            let r = match &g {
                GroupElement::So3(r) => *r,
                _ => unreachable!(),
            };
            let xi = Vector3::new(0.3, -0.2, 0.9);
            let conj = vee(&(r * hat(&xi) * r.transpose()));
            let ad = so3.ad(&g, &DVector::from_column_slice(xi.as_slice())).unwrap();
            assert!((DVector::from_column_slice(conj.as_slice()) - ad).amax() < 1e-12);
        }
    }

    #[test]
    fn haar_normalization_and_means() {
        let one = |_: &GroupElement| Ok(dvector![1.0]);
        for name in BUILTIN_GROUPS {
            let g = CompactGroup::builtin(name).unwrap();
            let avg = g.haar_average(&HaarConfig::default(), one).unwrap();
            assert!((avg[0] - 1.0).abs() < 1e-13, "{name}");
        }
        let c2 = CompactGroup::builtin("C2").unwrap();
        let avg = c2
            .haar_average(&HaarConfig::default(), |g| match g {
                GroupElement::Finite(0) => Ok(dvector![1.0]),
                _ => Ok(dvector![3.0]),
            })
            .unwrap();
        assert_eq!(avg[0], 2.0);
    }

    #[test]
    fn so3_mean_rotation_vanishes() {
        let so3 = CompactGroup::So3;
        let mean = |cfg: &HaarConfig| {
            so3.haar_average(cfg, |g| Ok(DVector::from_vec(so3.coordinates(g))))
                .unwrap()
        };
        let base = mean(&HaarConfig::default());
        let fine = mean(&HaarConfig::default().doubled());
        assert!(base.amax() < 1e-8);
        assert!((base - fine).amax() < 1e-8);
    }

    #[test]
    fn quadrature_order_gate() {
        let cfg = HaarConfig {
            torus_nodes: 3,
            ..HaarConfig::default()
        };
        assert!(CompactGroup::Torus(1).haar_rule(&cfg).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((integral - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn circle_infinitesimal_action_is_counterclockwise() {
        let a = SmoothAction::torus_rotation(1, Manifold::euclidean(2), vec![(0, 0, 1)]).unwrap();
        let v = a.inf_action(&dvector![0.3, 0.7], &dvector![1.0]).unwrap();
        assert!((v - dvector![-0.7, 0.3]).amax() < 1e-15);
        let c2 = SmoothAction::sign(Manifold::euclidean(2)).unwrap();
        assert_eq!(c2.inf_action(&dvector![1.0, 2.0], &dvector![]).unwrap(), dvector![0.0, 0.0]);
    }

    #[test]
    fn so3_infinitesimal_action_matches_finite_differences() {
        let a = SmoothAction::so3_linear(Manifold::euclidean(3)).unwrap();
        let m = dvector![1.0, 0.0, 0.0];
        let xi = dvector![0.0, 0.0, 1.0];
        let closed = a.inf_action(&m, &xi).unwrap();
        let h = 1e-5;
        let fd = (a.act(&m, &a.group.exp(&xi, h).unwrap()).unwrap()
            - a.act(&m, &a.group.exp(&xi, -h).unwrap()).unwrap())
            / (2.0 * h);
        assert!((&closed - fd).amax() < 1e-8);
        assert!((closed - dvector![0.0, -1.0, 0.0]).amax() < 1e-15);
    }

    #[test]
    fn tangent_action_routes_agree() {
        let mut rng = seeded_rng(5);
        let a = SmoothAction::so3_linear(Manifold::sphere(3, 1.0)).unwrap();
        for _ in 0..5 {
            let m = a.manifold.sample_one(&mut rng, 1.0, &a.cfg).unwrap();
            let v = a.manifold.tangent_project(&m, &dvector![0.3, -0.4, 0.8], &a.cfg).unwrap().vector;
            let g = a.group.sample(&mut rng);
            let h = a.group.sample(&mut rng);
            let direct = a.tangent_action(&m, &v, &g).unwrap();
            let jac = a.tangent_action_jacobian(&m, &v, &g).unwrap();
            assert!((&direct - &jac).amax() < 1e-10);
            let twice = a.tangent_action(&a.act(&m, &g).unwrap(), &direct, &h).unwrap();
            let once = a.tangent_action(&m, &v, &a.group.mul(&g, &h)).unwrap();
            assert!((twice - once).amax() < 1e-8);
            assert_eq!(a.tangent_action(&m, &v, &a.group.identity()).unwrap(), v);
        }
    }

    #[test]
    fn builtin_actions_satisfy_laws() {
        let mut rng = seeded_rng(9);
        let s3 = CompactGroup::builtin("S3").unwrap();
        let actions = vec![
            SmoothAction::sign(Manifold::euclidean(1)).unwrap(),
            SmoothAction::permutation(s3, Manifold::euclidean(3)).unwrap(),
            SmoothAction::cyclic_rotation(CompactGroup::builtin("C4").unwrap(), Manifold::euclidean(2), &[(0, 1)]).unwrap(),
            SmoothAction::torus_rotation(1, Manifold::torus(2), vec![(0, 0, 1), (0, 2, 3)]).unwrap(),
            SmoothAction::torus_rotation(2, Manifold::euclidean(4), vec![(0, 0, 1), (1, 2, 3)]).unwrap(),
            SmoothAction::so3_linear(Manifold::sphere(3, 1.0)).unwrap(),
        ];
        for a in actions {
            let r = a.check_laws(&mut rng, 20, 2.0).unwrap();
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn left_action_is_rejected() {
        // m·g := g m (a left action) breaks the right-action law for S3.
        let s3 = CompactGroup::builtin("S3").unwrap();
        let perms = match &s3 {
            CompactGroup::Finite(g) => g.permutations().unwrap().to_vec(),
            _ => unreachable!(),
        };
        let ms = perms
            .iter()
            .map(|p| DMatrix::from_fn(3, 3, |i, j| if p[j] == i { 1.0 } else { 0.0 }))
            .collect();
        let a = SmoothAction::new(s3, Manifold::euclidean(3), ActionKind::FiniteMatrix(ms)).unwrap();
        let err = a.validate(&mut seeded_rng(1), 40, 1.0).unwrap_err().to_string();
        assert!(err.contains("action_associativity"), "{err}");
    }

    #[test]
    fn expression_action_matches_builtin_rotation() {
        let es = vec![
            crate::parse("cos(g1)*x1 - sin(g1)*x2").unwrap(),
            crate::parse("sin(g1)*x1 + cos(g1)*x2").unwrap(),
        ];
        let a = SmoothAction::new(CompactGroup::Torus(1), Manifold::euclidean(2), ActionKind::LieExpr(es)).unwrap();
        let v = a.inf_action(&dvector![0.3, 0.7], &dvector![1.0]).unwrap();
        assert!((v - dvector![-0.7, 0.3]).amax() < 1e-9);
    }
}
