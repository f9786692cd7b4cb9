//! Vector fields on groupoids and the `(X, Y)` presentation on action groupoids.
//!
//! A vector field on `M ⋊ G` is a pair: `X` a vector field on `M`, and
//! `Y: M x G -> 𝔤` with
//!
//! ```text
//! X(m·g)   = X(m)·g + ι(m·g, Y(m, g))
//! Y(m, gh) = Ad_{h⁻¹} Y(m, g) + Y(m·g, h)
//! ```
//!
//! An arrow `(X, Y) -> (X', Y')` is a function `ψ: M -> 𝔤` with
//! `X' = X + ιψ` and `Y(m, g) + ψ(m·g) = Ad_{g⁻¹} ψ(m) + Y'(m, g)`.
//! Averaging over Haar measure produces `(X̃, 0)` together with such a `ψ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::geometry::{concat, SmoothMap};
use crate::groupoid::{LieGroupoid, Presentation};
use crate::groups::{haar_sum, GroupElement, HaarConfig, SmoothAction};
use crate::report::{max_abs, VerificationReport};
use crate::Rng;

type PointFn = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;
type CocycleFn = Arc<dyn Fn(&DVector<f64>, &GroupElement) -> Result<DVector<f64>> + Send + Sync>;

/// A groupoid morphism `X: Γ -> TΓ` in the coordinates of [`crate::groupoid::tangent_groupoid`].
#[derive(Clone, Debug)]
pub struct GroupoidVectorField {
    pub name: String,
    pub x0: SmoothMap,
    pub x1: SmoothMap,
}

/// The zero section on both levels.
pub fn zero_field(gpd: &LieGroupoid) -> Result<GroupoidVectorField> {
    let (n0, n1) = (gpd.object_dim, gpd.arrow_dim);
    let (x0, x1) = match &gpd.presentation {
        Presentation::Finite(_) => (SmoothMap::identity(n0), SmoothMap::identity(n1)),
        Presentation::Action(action) => {
            let (n, c, k) = (action.ambient_dim(), action.group.coordinate_len(), action.group.lie_dim());
            let x0 = SmoothMap::from_fn(n, 2 * n, move |m| Ok(concat(m, &DVector::zeros(n))));
            let x1 = SmoothMap::from_fn(n + c, 2 * n + c + k, move |a| {
                let m = a.rows(0, n).into_owned();
                let g = a.rows(n, c).into_owned();
                Ok(concat(&concat(&m, &DVector::zeros(n)), &concat(&g, &DVector::zeros(k))))
            });
            (x0, x1)
        }
        _ => (
            SmoothMap::from_fn(n0, 2 * n0, move |p| Ok(concat(p, &DVector::zeros(n0)))),
            SmoothMap::from_fn(n1, 2 * n1, move |p| Ok(concat(p, &DVector::zeros(n1)))),
        ),
    };
    Ok(GroupoidVectorField {
        name: "zero".into(),
        x0,
        x1,
    })
}

/// Samples the section law `π∘X = id` and the morphism law of `X: Γ -> TΓ`.
pub fn check_vector_field(
    gpd: &LieGroupoid,
    tangent: &LieGroupoid,
    field: &GroupoidVectorField,
    rng: &mut Rng,
    samples: usize,
    tol: f64,
) -> Result<VerificationReport> {
    let (p0, p1) = tangent
        .bundle_projection()
        .cloned()
        .ok_or_else(|| Error::field(format!("{} is not a tangent groupoid", tangent.name)))?;
    let mut r = [0.0f64; 6];
    for _ in 0..samples {
        let [a, b, _] = gpd.composable_triple(rng)?;
        let x = gpd.s(&a)?;
        let xa = field.x1.eval(&a)?;
        let xx = field.x0.eval(&x)?;
        r[0] = max_abs(r[0], gpd.object_distance(&p0.eval(&xx)?, &x));
        r[1] = max_abs(r[1], gpd.arrow_distance(&p1.eval(&xa)?, &a));
        r[2] = max_abs(r[2], tangent.object_distance(&tangent.s(&xa)?, &xx));
        r[3] = max_abs(r[3], tangent.object_distance(&tangent.t(&xa)?, &field.x0.eval(&gpd.t(&a)?)?));
        r[4] = max_abs(r[4], tangent.arrow_distance(&field.x1.eval(&gpd.e(&x)?)?, &tangent.e(&xx)?));
        let lhs = tangent.mu(&xa, &field.x1.eval(&b)?)?;
        let rhs = field.x1.eval(&gpd.mu(&a, &b)?)?;
        r[5] = max_abs(r[5], tangent.arrow_distance(&lhs, &rhs));
    }
    let mut report = VerificationReport::new(format!("vector field {} on {}", field.name, gpd.name));
    let names = ["section_objects", "section_arrows", "source", "target", "unit", "product"];
    for (name, res) in names.iter().zip(r) {
        report.check(*name, res, tol);
    }
    Ok(report)
}

/// A vector field `(X, Y)` on an action groupoid `M ⋊ G`.
#[derive(Clone)]
pub struct ActionField {
    pub name: String,
    pub action: Arc<SmoothAction>,
    x: PointFn,
    y: Option<CocycleFn>,
    /// Source expressions, kept for reports.
    pub x_exprs: Option<Vec<Expr>>,
    pub y_exprs: Option<Vec<Expr>>,
}

impl fmt::Debug for ActionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActionField")
            .field("name", &self.name)
            .field("x", &self.x_exprs)
            .field("y", &self.y_exprs)
            .finish()
    }
}

impl ActionField {
    pub fn from_fn<F>(name: impl Into<String>, action: Arc<SmoothAction>, x: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        ActionField {
            name: name.into(),
            action,
            x: Arc::new(x),
            y: None,
            x_exprs: None,
            y_exprs: None,
        }
    }

    pub fn with_y<F>(mut self, y: F) -> Self
    where
        F: Fn(&DVector<f64>, &GroupElement) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        self.y = Some(Arc::new(y));
        self
    }

    /// `X` from one expression per ambient coordinate in `x1..xn`; `Y` from
    /// one expression per Lie algebra coordinate in `x1..xn, g1..gc`.
    pub fn from_exprs(
        name: impl Into<String>,
        action: Arc<SmoothAction>,
        x: Vec<Expr>,
        y: Option<Vec<Expr>>,
    ) -> Result<Self> {
        let name = name.into();
        let n = action.ambient_dim();
        let k = action.group.lie_dim();
        let c = action.group.coordinate_len();
        if x.len() != n {
            return Err(Error::field(format!("field {name}: {} components for ambient R^{n}", x.len())));
        }
        for e in x.iter().chain(y.iter().flatten()) {
            if e.uses_time() {
                return Err(Error::field(format!("field {name}: time-dependent component {e}")));
            }
            if e.max_x_index() > n {
                return Err(Error::field(format!("field {name}: x{} out of range for R^{n}", e.max_x_index())));
            }
        }
        for e in &x {
            if e.max_g_index() > 0 {
                return Err(Error::field(format!("field {name}: X component {e} depends on the group")));
            }
        }
        let x_map = SmoothMap::from_exprs(n, x.clone())?;
        let mut field = ActionField::from_fn(name.clone(), action, move |m| x_map.eval(m));
        field.x_exprs = Some(x);
        if let Some(ys) = y {
            if ys.len() != k {
                return Err(Error::field(format!("field {name}: {} Y components for a {k}-dimensional Lie algebra", ys.len())));
            }
            for e in &ys {
                if e.max_g_index() > c {
                    return Err(Error::field(format!("field {name}: g{} out of range ({c} group coordinates)", e.max_g_index())));
                }
            }
            let group = field.action.group.clone();
            let exprs = ys.clone();
            field = field.with_y(move |m, g| {
                let gc = group.coordinates(g);
                let b = Bindings::with_group(m.as_slice(), &gc);
                let vals = exprs.iter().map(|e| e.eval(&b)).collect::<Result<Vec<_>, _>>()?;
                Ok(DVector::from_vec(vals))
            });
            field.y_exprs = Some(ys);
        }
        Ok(field)
    }

    pub fn zero(action: Arc<SmoothAction>) -> Self {
        let n = action.ambient_dim();
        ActionField::from_fn("zero", action, move |_| Ok(DVector::zeros(n)))
    }

    pub fn has_y(&self) -> bool {
        self.y.is_some()
    }

    pub fn ambient_dim(&self) -> usize {
        self.action.ambient_dim()
    }

    /// `X(m)`, tangent-projected.
    pub fn x(&self, m: &DVector<f64>) -> Result<DVector<f64>> {
        let raw = (self.x)(m)?;
        if raw.len() != self.ambient_dim() {
            return Err(Error::field(format!("field {} returned {} components", self.name, raw.len())));
        }
        if self.action.manifold.codim() == 0 {
            return Ok(raw);
        }
        Ok(self.action.manifold.tangent_project(m, &raw, &self.action.cfg)?.vector)
    }

    /// `Y(m, g)`, zero when not declared.
    pub fn y(&self, m: &DVector<f64>, g: &GroupElement) -> Result<DVector<f64>> {
        match &self.y {
            Some(y) => y(m, g),
            None => Ok(DVector::zeros(self.action.group.lie_dim())),
        }
    }

    /// `a·F + b·G` on both components.
    pub fn linear_combination(a: f64, f: &ActionField, b: f64, g: &ActionField) -> Result<ActionField> {
        if !Arc::ptr_eq(&f.action, &g.action) && f.action.ambient_dim() != g.action.ambient_dim() {
            return Err(Error::field("linear combination of fields on different actions"));
        }
        let (fx, gx) = (f.x.clone(), g.x.clone());
        let mut out = ActionField::from_fn(format!("{a}*{} + {b}*{}", f.name, g.name), f.action.clone(), move |m| {
            Ok(fx(m)? * a + gx(m)? * b)
        });
        if f.has_y() || g.has_y() {
            let (f2, g2) = (f.clone(), g.clone());
            out = out.with_y(move |m, h| Ok(f2.y(m, h)? * a + g2.y(m, h)? * b));
        }
        Ok(out)
    }

    /// `X + ιψ` with `Y` unchanged.
    pub fn plus_inf(&self, psi: &FieldEquivalence) -> ActionField {
        let (x, act, psi_fn) = (self.x.clone(), self.action.clone(), psi.psi.clone());
        let mut out = ActionField::from_fn(format!("{} + ιψ", self.name), self.action.clone(), move |m| {
            Ok(x(m)? + act.inf_action(m, &psi_fn(m)?)?)
        });
        out.y = self.y.clone();
        out
    }

    /// Worst residuals of tangency, the equivariance identity and the cocycle identity.
    pub fn invariant_residuals(&self, rng: &mut Rng, samples: usize, radius: f64) -> Result<VerificationReport> {
        let act = &self.action;
        let group = &act.group;
        let mut r = [0.0f64; 3];
        let mut worst = String::new();
        for _ in 0..samples {
            let m = act.manifold.sample_one(rng, radius, &act.cfg)?;
            let g = group.sample(rng);
            let h = group.sample(rng);
            let raw = (self.x)(&m)?;
            r[0] = max_abs(r[0], act.manifold.tangency_residual(&m, &raw, &act.cfg)?);
            let mg = act.act(&m, &g)?;
            let lhs = self.x(&mg)?;
            let rhs = act.tangent_action(&m, &self.x(&m)?, &g)? + act.inf_action(&mg, &self.y(&m, &g)?)?;
            let e = (lhs - rhs).amax();
            if !(e <= r[1]) {
                worst = format!("m = {:?}, g = {:?}", m.as_slice(), group.coordinates(&g));
            }
            r[1] = max_abs(r[1], e);
            if group.lie_dim() > 0 {
                let lhs = self.y(&m, &group.mul(&g, &h))?;
                let rhs = group.ad(&group.inv(&h), &self.y(&m, &g)?)? + self.y(&mg, &h)?;
                r[2] = max_abs(r[2], (lhs - rhs).amax());
            }
        }
        let mut report = VerificationReport::new(format!("field {}", self.name));
        report.check("tangency", r[0], 1e-7);
        report.check("equivariance", r[1], 1e-7).with_detail(worst);
        report.check("cocycle", r[2], 1e-7);
        Ok(report)
    }

    /// Errors with the worst sample when a field identity fails above `tol`.
    pub fn validate(&self, rng: &mut Rng, samples: usize, radius: f64, tol: f64) -> Result<()> {
        let report = self.invariant_residuals(rng, samples, radius)?;
        for c in &report.checks {
            if !(c.max_residual <= tol) {
                return Err(Error::field(format!(
                    "field {}: {} residual {:.3e} exceeds {tol:.1e}{}",
                    self.name,
                    c.name,
                    c.max_residual,
                    c.detail.as_ref().filter(|d| !d.is_empty()).map(|d| format!(" at {d}")).unwrap_or_default()
                )));
            }
        }
        Ok(())
    }
}

/// Validates `F` and returns `X0 = X`, `X1(m, g) = (X(m), g, Y(m, g))`.
pub fn to_groupoid_field(
    f: &ActionField,
    rng: &mut Rng,
    samples: usize,
    radius: f64,
    tol: f64,
) -> Result<GroupoidVectorField> {
    f.validate(rng, samples, radius, tol)?;
    let n = f.ambient_dim();
    let group = f.action.group.clone();
    let c = group.coordinate_len();
    let k = group.lie_dim();
    let fx = f.clone();
    let x0 = SmoothMap::from_fn(n, 2 * n, move |m| Ok(concat(m, &fx.x(m)?)));
    let fy = f.clone();
    let x1 = SmoothMap::from_fn(n + c, 2 * n + c + k, move |a| {
        let m = a.rows(0, n).into_owned();
        let gc = a.rows(n, c).into_owned();
        let g = group.from_coordinates(gc.as_slice())?;
        Ok(concat(&concat(&m, &fy.x(&m)?), &concat(&gc, &fy.y(&m, &g)?)))
    });
    Ok(GroupoidVectorField {
        name: f.name.clone(),
        x0,
        x1,
    })
}

/// An arrow `ψ: M -> 𝔤` between action fields.
#[derive(Clone)]
pub struct FieldEquivalence {
    pub lie_dim: usize,
    psi: PointFn,
}

impl fmt::Debug for FieldEquivalence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldEquivalence(dim {})", self.lie_dim)
    }
}

impl FieldEquivalence {
    pub fn from_fn<F>(lie_dim: usize, psi: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        FieldEquivalence {
            lie_dim,
            psi: Arc::new(psi),
        }
    }

    pub fn zero(lie_dim: usize) -> Self {
        FieldEquivalence::from_fn(lie_dim, move |_| Ok(DVector::zeros(lie_dim)))
    }

    pub fn constant(xi: DVector<f64>) -> Self {
        FieldEquivalence::from_fn(xi.len(), move |_| Ok(xi.clone()))
    }

    pub fn from_exprs(ambient: usize, exprs: Vec<Expr>) -> Result<Self> {
        let k = exprs.len();
        let map = SmoothMap::from_exprs(ambient, exprs)?;
        Ok(FieldEquivalence::from_fn(k, move |m| map.eval(m)))
    }

    pub fn eval(&self, m: &DVector<f64>) -> Result<DVector<f64>> {
        let v = (self.psi)(m)?;
        if v.len() != self.lie_dim {
            return Err(Error::field(format!("ψ returned {} components, expected {}", v.len(), self.lie_dim)));
        }
        Ok(v)
    }
}

/// Result of Haar averaging: `(X̃, 0)` and the certificate `ψ: F -> F̃`.
#[derive(Clone, Debug)]
pub struct Averaged {
    pub field: ActionField,
    pub psi: FieldEquivalence,
}

/// `X̃(m) = ∫ X(m·g)·g⁻¹ dg` and `ψ(m) = ∫ Ad_g Y(m, g) dg`.
pub fn average(f: &ActionField, haar: &HaarConfig) -> Result<Averaged> {
    let group = f.action.group.clone();
    let rule = Arc::new(group.haar_rule(haar)?);
    let k = group.lie_dim();

    let (fx, rx, act) = (f.clone(), rule.clone(), f.action.clone());
    let g2 = group.clone();
    let x = move |m: &DVector<f64>| -> Result<DVector<f64>> {
        haar_sum(&rx, |g| {
            let mg = act.act(m, g)?;
            act.tangent_action(&mg, &fx.x(&mg)?, &g2.inv(g))
        })
    };
    let mut field = ActionField::from_fn(format!("avg({})", f.name), f.action.clone(), x);
    field.x_exprs = None;

    let psi = if k == 0 || !f.has_y() {
        FieldEquivalence::zero(k)
    } else {
        let (fy, ry, g3) = (f.clone(), rule, group);
        FieldEquivalence::from_fn(k, move |m| haar_sum(&ry, |g| g3.ad(g, &fy.y(m, g)?)))
    };
    Ok(Averaged { field, psi })
}

/// Samples `X' = X + ιψ` and `Y(m, g) + ψ(m·g) = Ad_{g⁻¹} ψ(m) + Y'(m, g)`.
pub fn check_equivalence(
    f: &ActionField,
    f2: &ActionField,
    psi: &FieldEquivalence,
    rng: &mut Rng,
    samples: usize,
    radius: f64,
    tol: f64,
) -> Result<VerificationReport> {
    let act = &f.action;
    let group = &act.group;
    if f2.ambient_dim() != f.ambient_dim() || psi.lie_dim != group.lie_dim() {
        return Err(Error::field("equivalence between fields on different action groupoids"));
    }
    let points = act.manifold.sample(rng, samples, radius, &act.cfg)?;
    let gs: Vec<GroupElement> = (0..samples).map(|_| group.sample(rng)).collect();
    let rows = points
        .par_iter()
        .zip(gs.par_iter())
        .map(|(m, g)| -> Result<(f64, f64)> {
            let p = psi.eval(m)?;
            let field = (f2.x(m)? - f.x(m)? - act.inf_action(m, &p)?).amax();
            let gauge = if group.lie_dim() == 0 {
                0.0
            } else {
                let mg = act.act(m, g)?;
                let lhs = f.y(m, g)? + psi.eval(&mg)?;
                let rhs = group.ad(&group.inv(g), &p)? + f2.y(m, g)?;
                (lhs - rhs).amax()
            };
            Ok((field, gauge))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut rf, mut rg) = (0.0f64, 0.0f64);
    for (a, b) in rows {
        rf = max_abs(rf, a);
        rg = max_abs(rg, b);
    }
    let mut report = VerificationReport::new(format!("equivalence {} -> {}", f.name, f2.name));
    report.check("field_relation", rf, tol);
    report.check("gauge_relation", rg, tol);
    report.count("samples", samples as u64);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportLabel {
    pub point: Vec<f64>,
    /// `min_ξ ‖X̃(m) − ι(m, ξ)‖∞`.
    pub residual: f64,
    /// `max_g ‖ξ(m·g) − Ad_{g⁻¹} ξ(m)‖∞` over the orbit samples.
    pub orbit_residual: f64,
    pub equivalent_to_zero: bool,
    pub in_support: bool,
}

/// Least-squares `ξ` with `ι(m, ξ) ≈ v`, Tikhonov floor 1e-12, and its unregularized residual.
pub fn solve_inf(action: &SmoothAction, m: &DVector<f64>, v: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let a = action.inf_matrix(m)?;
    let k = a.ncols();
    let normal = a.transpose() * &a + DMatrix::identity(k, k) * 1e-12;
    let xi = normal
        .cholesky()
        .ok_or_else(|| Error::field("normal equations are not positive definite"))?
        .solve(&(a.transpose() * v));
    let residual = (&a * &xi - v).amax();
    Ok((xi, residual))
}

/// Pointwise indicator of where an invariant field fails to be equivalent to zero.
pub fn support_indicator(
    f: &ActionField,
    points: &[DVector<f64>],
    orbit: &[GroupElement],
    tol: f64,
) -> Result<Vec<SupportLabel>> {
    let act = &f.action;
    let group = &act.group;
    points
        .par_iter()
        .map(|m| {
            let v = f.x(m)?;
            let (residual, orbit_residual) = if group.lie_dim() == 0 {
                (v.amax(), 0.0)
            } else {
                let (xi, res) = solve_inf(act, m, &v)?;
                let mut worst = 0.0f64;
                for g in orbit {
                    let mg = act.act(m, g)?;
                    let (xi_g, _) = solve_inf(act, &mg, &f.x(&mg)?)?;
                    worst = max_abs(worst, (xi_g - group.ad(&group.inv(g), &xi)?).amax());
                }
                (res, worst)
            };
            let zero = residual <= tol && orbit_residual <= tol;
            Ok(SupportLabel {
                point: m.as_slice().to_vec(),
                residual,
                orbit_residual,
                equivalent_to_zero: zero,
                in_support: !zero,
            })
        })
        .collect()
}
