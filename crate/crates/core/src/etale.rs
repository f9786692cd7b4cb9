//! Charts, étale maps between them, pullback of vector fields, and
//! compatibility of per-chart field assignments.
//!
//! The pullback of `X` along an étale `f: U -> V` is `f*X(u) = (T_u f)⁻¹ X(f(u))`.
//! An assignment is compatible when `f*X_V = X_U` for every declared map.

use std::fmt;

use nalgebra::DVector;
use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{parse, Bindings, Expr};
use crate::flows::{integral_residual, Trajectory, VectorField};
use crate::geometry::SmoothMap;
use crate::report::{max_abs, VerificationReport};
use crate::Rng;

/// Jacobian determinants at or below this magnitude are treated as singular.
pub const DET_FLOOR: f64 = 1e-8;

/// `lhs < rhs` on chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Inequality {
    pub lhs: Expr,
    pub rhs: Expr,
}

impl Inequality {
    /// Parses `a < b` or `a > b`.
    pub fn parse(src: &str) -> Result<Self> {
        let (pos, op) = src
            .char_indices()
            .find(|(_, c)| *c == '<' || *c == '>')
            .ok_or_else(|| Error::etale(format!("domain `{src}` has no `<` or `>`")))?;
        let (a, b) = (&src[..pos], &src[pos + 1..]);
        if b.contains('<') || b.contains('>') {
            return Err(Error::etale(format!("domain `{src}` has more than one comparison")));
        }
        let (a, b) = (parse(a)?, parse(b)?);
        Ok(if op == '<' {
            Inequality { lhs: a, rhs: b }
        } else {
            Inequality { lhs: b, rhs: a }
        })
    }

    pub fn holds(&self, u: &DVector<f64>) -> Result<bool> {
        let b = Bindings::point(u.as_slice());
        Ok(self.lhs.eval(&b)? < self.rhs.eval(&b)?)
    }
}

impl fmt::Display for Inequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} < {}", self.lhs, self.rhs)
    }
}

fn inside(domain: &[Inequality], u: &DVector<f64>) -> Result<bool> {
    for ineq in domain {
        if !ineq.holds(u)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// An open subset of `R^d` cut out by strict inequalities, sampled inside `[-radius, radius]^d`.
#[derive(Debug, Clone)]
pub struct Chart {
    pub name: String,
    pub dim: usize,
    pub domain: Vec<Inequality>,
    pub radius: f64,
}

impl Chart {
    pub fn new(name: impl Into<String>, dim: usize, domain: Vec<Inequality>, radius: f64) -> Self {
        Chart {
            name: name.into(),
            dim,
            domain,
            radius,
        }
    }

    pub fn contains(&self, u: &DVector<f64>) -> Result<bool> {
        inside(&self.domain, u)
    }
}

/// A declared étale map between two charts, defined on a subdomain of its source.
#[derive(Debug, Clone)]
pub struct EtaleMap {
    pub name: String,
    pub from: usize,
    pub to: usize,
    pub map: SmoothMap,
    pub domain: Vec<Inequality>,
}

#[derive(Debug, Clone, Default)]
pub struct ChartSystem {
    pub charts: Vec<Chart>,
    pub maps: Vec<EtaleMap>,
}

/// Rejection sampling inside a chart and the extra inequalities; `None` if nothing was hit.
fn sample_in(chart: &Chart, extra: &[Inequality], rng: &mut Rng) -> Result<Option<DVector<f64>>> {
    for _ in 0..10_000 {
        let u = DVector::from_fn(chart.dim, |_, _| rng.random_range(-chart.radius..=chart.radius));
        if chart.contains(&u)? && inside(extra, &u)? {
            return Ok(Some(u));
        }
    }
    Ok(None)
}

impl ChartSystem {
    pub fn chart_index(&self, name: &str) -> Option<usize> {
        self.charts.iter().position(|c| c.name == name)
    }

    pub fn add_chart(&mut self, chart: Chart) -> Result<usize> {
        if let Some(first) = self.charts.first() {
            if first.dim != chart.dim {
                return Err(Error::etale(format!(
                    "chart {} has dimension {}, but {} has {}",
                    chart.name, chart.dim, first.name, first.dim
                )));
            }
        }
        if self.chart_index(&chart.name).is_some() {
            return Err(Error::etale(format!("chart {} declared twice", chart.name)));
        }
        self.charts.push(chart);
        Ok(self.charts.len() - 1)
    }

    pub fn add_map(&mut self, name: impl Into<String>, from: &str, to: &str, map: SmoothMap, domain: Vec<Inequality>) -> Result<()> {
        let name = name.into();
        let idx = |c: &str| {
            self.chart_index(c)
                .ok_or_else(|| Error::etale(format!("map {name}: unknown chart {c}")))
        };
        let (from, to) = (idx(from)?, idx(to)?);
        let d = self.charts[from].dim;
        if map.domain_dim != d || map.target_dim != self.charts[to].dim {
            return Err(Error::etale(format!(
                "map {name}: R^{} -> R^{} between charts of dimension {d}",
                map.domain_dim, map.target_dim
            )));
        }
        self.maps.push(EtaleMap {
            name,
            from,
            to,
            map,
            domain,
        });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.charts.first().map_or(0, |c| c.dim)
    }

    /// A sample in the domain of `map` whose image lands in the target chart.
    pub fn sample_map_domain(&self, map: &EtaleMap, rng: &mut Rng) -> Result<Option<DVector<f64>>> {
        for _ in 0..100 {
            let Some(u) = sample_in(&self.charts[map.from], &map.domain, rng)? else {
                return Ok(None);
            };
            if self.charts[map.to].contains(&map.map.eval(&u)?)? {
                return Ok(Some(u));
            }
        }
        Ok(None)
    }

    /// Every map has `|det J| > 1e-8` at its samples, and all charts share one dimension.
    pub fn validate(&self, rng: &mut Rng, samples: usize) -> Result<VerificationReport> {
        let mut report = VerificationReport::new("chart system");
        let dims_ok = self.charts.iter().all(|c| c.dim == self.dim());
        report.check("constant_fibre_dimension", if dims_ok { 0.0 } else { 1.0 }, 0.0);
        for m in &self.maps {
            let mut min_det = f64::INFINITY;
            let mut hits = 0u64;
            for _ in 0..samples {
                if let Some(u) = self.sample_map_domain(m, rng)? {
                    min_det = min_det.min(m.map.jacobian(&u)?.determinant().abs());
                    hits += 1;
                }
            }
            if hits == 0 {
                return Err(Error::etale(format!("map {} has no samples in its domain", m.name)));
            }
            report.check_at_least(format!("etale/{}", m.name), min_det, DET_FLOOR);
            report.count(format!("samples/{}", m.name), hits);
        }
        Ok(report)
    }
}

/// `(T_u f)⁻¹ X_V(f(u))`.
pub fn pullback_at(f: &SmoothMap, x_v: &SmoothMap, u: &DVector<f64>) -> Result<DVector<f64>> {
    let j = f.jacobian(u)?;
    if !j.is_square() {
        return Err(Error::etale(format!("{}x{} Jacobian is not square", j.nrows(), j.ncols())));
    }
    let det = j.determinant();
    if !(det.abs() > DET_FLOOR) {
        return Err(Error::etale(format!(
            "not étale at {:?}: |det J| = {:.3e}",
            u.as_slice(),
            det.abs()
        )));
    }
    let rhs = x_v.eval(&f.eval(u)?)?;
    j.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::etale(format!("singular Jacobian at {:?}", u.as_slice())))
}

/// The field `f*X_V` on the source of `f`.
pub fn pullback(f: &SmoothMap, x_v: &SmoothMap) -> SmoothMap {
    let (f, x) = (f.clone(), x_v.clone());
    SmoothMap::from_fn(f.domain_dim, f.domain_dim, move |u| pullback_at(&f, &x, u))
}

/// One vector field per chart, in chart order.
#[derive(Debug, Clone)]
pub struct EtaleFieldAssignment {
    pub fields: Vec<SmoothMap>,
}

/// Residual of `f*X_V = X_U` per declared map and of `f*(g*X) = (g∘f)*X` per composable pair.
pub fn check_assignment(
    system: &ChartSystem,
    assignment: &EtaleFieldAssignment,
    rng: &mut Rng,
    samples: usize,
    tol: f64,
    functoriality_tol: f64,
) -> Result<VerificationReport> {
    if assignment.fields.len() != system.charts.len() {
        return Err(Error::etale(format!(
            "{} fields for {} charts",
            assignment.fields.len(),
            system.charts.len()
        )));
    }
    let mut report = VerificationReport::new("étale field assignment");
    for m in &system.maps {
        let pulled = pullback(&m.map, &assignment.fields[m.to]);
        let mut worst = 0.0f64;
        for _ in 0..samples {
            if let Some(u) = system.sample_map_domain(m, rng)? {
                worst = max_abs(worst, (pulled.eval(&u)? - assignment.fields[m.from].eval(&u)?).amax());
            }
        }
        report.check(format!("triangle/{}", m.name), worst, tol);
    }
    for f in &system.maps {
        for g in system.maps.iter().filter(|g| g.from == f.to) {
            let x = &assignment.fields[g.to];
            let composite = SmoothMap::compose(&g.map, &f.map)?;
            let twice = pullback(&f.map, &pullback(&g.map, x));
            let once = pullback(&composite, x);
            let mut worst = 0.0f64;
            let mut hits = 0;
            for _ in 0..samples {
                let Some(u) = system.sample_map_domain(f, rng)? else { continue };
                let v = f.map.eval(&u)?;
                if !inside(&g.domain, &v)? || !system.charts[g.to].contains(&g.map.eval(&v)?)? {
                    continue;
                }
                hits += 1;
                worst = max_abs(worst, (twice.eval(&u)? - once.eval(&u)?).amax());
            }
            if hits > 0 {
                report.check(format!("functoriality/{};{}", f.name, g.name), worst, functoriality_tol);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct EtaleIntegral {
    pub residual: f64,
    pub outside_domain: usize,
}

/// Central-difference derivative of each trajectory against `X_U`, counting
/// points that left the chart domain.
pub fn check_etale_integral(
    chart: &Chart,
    field: &VectorField,
    trajectories: &[Trajectory],
    times: &[f64],
    tol: f64,
) -> Result<VerificationReport> {
    let mut worst = 0.0f64;
    let mut outside = 0u64;
    for t in trajectories {
        worst = max_abs(worst, integral_residual(field, t, times)?);
        for j in 0..t.points.len() {
            outside += u64::from(!chart.contains(&t.point(j))?);
        }
    }
    let mut report = VerificationReport::new(format!("étale integral on chart {}", chart.name));
    report.check("integral_condition", worst, tol);
    report.count("points_outside_domain", outside);
    Ok(report)
}
