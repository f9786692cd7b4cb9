//! Integral curves, equivariant flows, gauge transport between flows of
//! equivalent fields, and the proper-lift check.
//!
//! Integration is fixed-step RK4 in ambient coordinates. Stage derivatives
//! are tangent-projected where they are evaluated and only the full step is
//! retracted onto the manifold. Retracting every stage point as well is
//! available through [`Integrator::retract_stages`], at the cost of dropping
//! to second order on curved manifolds.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{ActionField, FieldEquivalence};
use crate::geometry::{Config, Manifold, SmoothMap};
use crate::groups::{hat, orthonormalize, wrap_angle, CompactGroup, GroupElement, SmoothAction};
use crate::report::{max_abs, VerificationReport};
use crate::Rng;

type PointFn = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;

/// An autonomous vector field on an embedded manifold.
#[derive(Clone)]
pub struct VectorField {
    pub name: String,
    pub manifold: Manifold,
    pub cfg: Config,
    f: PointFn,
}

impl std::fmt::Debug for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VectorField({} on {})", self.name, self.manifold)
    }
}

impl VectorField {
    pub fn new<F>(name: impl Into<String>, manifold: Manifold, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        VectorField {
            name: name.into(),
            manifold,
            cfg: Config::default(),
            f: Arc::new(f),
        }
    }

    pub fn from_map(name: impl Into<String>, manifold: Manifold, map: SmoothMap) -> Self {
        VectorField::new(name, manifold, move |p| map.eval(p))
    }

    /// The `X` component of an action field.
    pub fn from_action_field(f: &ActionField) -> Self {
        let g = f.clone();
        VectorField {
            name: f.name.clone(),
            manifold: f.action.manifold.clone(),
            cfg: f.action.cfg,
            f: Arc::new(move |p| g.x(p)),
        }
    }

    /// Tangent-projected value, also at points slightly off the manifold.
    pub fn eval(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let v = (self.f)(p)?;
        if v.len() != p.len() {
            return Err(Error::flow(format!("field {} returned {} components at a point of R^{}", self.name, v.len(), p.len())));
        }
        if self.manifold.codim() == 0 {
            return Ok(v);
        }
        Ok(self.manifold.tangent_project(p, &v, &self.cfg)?.vector)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rk4,
    /// RK4, retrying a failed step with halved substeps to localize blow-up.
    Rk4Halving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Integrator {
    pub scheme: Scheme,
    pub step: f64,
    pub max_steps: usize,
    /// Any coordinate beyond this magnitude is a step failure.
    pub blowup: f64,
    /// Leaving `[-b, b]^n` ends the trajectory as escaped.
    pub escape_box: Option<f64>,
    pub retract_stages: bool,
    /// Maximum number of halvings per step for [`Scheme::Rk4Halving`].
    pub max_halvings: u32,
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator {
            scheme: Scheme::Rk4,
            step: 1e-3,
            max_steps: 10_000_000,
            blowup: 1e8,
            escape_box: None,
            retract_stages: false,
            max_halvings: 20,
        }
    }
}

impl Integrator {
    pub fn with_step(mut self, h: f64) -> Self {
        self.step = h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::flow(format!("step {} must be positive", self.step)));
        }
        Ok(())
    }

    /// Grid `t_j = min(j h, T)`.
    pub fn times(&self, duration: f64) -> Result<Vec<f64>> {
        self.validate()?;
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(Error::flow(format!("duration {duration} must be non-negative")));
        }
        let n = (duration / self.step - 1e-9).ceil().max(0.0) as usize;
        if n > self.max_steps {
            return Err(Error::flow(format!("{n} steps exceed the bound of {}", self.max_steps)));
        }
        Ok((0..=n).map(|j| (j as f64 * self.step).min(duration)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Status {
    Complete,
    Escaped { t: f64 },
    StepFailure { t: f64, reason: String },
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Complete => "complete",
            Status::Escaped { .. } => "escaped",
            Status::StepFailure { .. } => "step_failure",
        }
    }

    pub fn is_complete(&self) -> bool {
        matches!(self, Status::Complete)
    }
}

/// Points at the leading grid times; shorter than the grid when the curve stopped early.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub points: Vec<Vec<f64>>,
    pub status: Status,
}

impl Trajectory {
    pub fn point(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.points[j])
    }

    pub fn last(&self) -> DVector<f64> {
        self.point(self.points.len() - 1)
    }
}

fn finite_bounded(x: &DVector<f64>, bound: f64) -> bool {
    x.iter().all(|v| v.is_finite() && v.abs() <= bound)
}

fn rk4_step(field: &VectorField, x: &DVector<f64>, h: f64, retract_stages: bool) -> Result<DVector<f64>> {
    let stage = |p: DVector<f64>| -> Result<DVector<f64>> {
        if retract_stages {
            field.manifold.project_point(&p, &field.cfg)
        } else {
            Ok(p)
        }
    };
    let k1 = field.eval(x)?;
    let k2 = field.eval(&stage(x + &k1 * (h / 2.0))?)?;
    let k3 = field.eval(&stage(x + &k2 * (h / 2.0))?)?;
    let k4 = field.eval(&stage(x + &k3 * h)?)?;
    let dx = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    field.manifold.retract(x, &dx, &field.cfg)
}

/// One grid step of length `h`, subdividing on failure when the scheme allows it.
/// `Err(t)` carries the time reached before giving up.
fn advance(field: &VectorField, x: &DVector<f64>, t: f64, h: f64, integ: &Integrator) -> std::result::Result<DVector<f64>, (f64, String)> {
    let attempt = |x: &DVector<f64>, h: f64| -> std::result::Result<DVector<f64>, String> {
        match rk4_step(field, x, h, integ.retract_stages) {
            Ok(y) if finite_bounded(&y, integ.blowup) => Ok(y),
            Ok(_) => Err(format!("state exceeded {:.0e}", integ.blowup)),
            Err(e) => Err(e.to_string()),
        }
    };
    let first = attempt(x, h);
    let reason = match first {
        Ok(y) => return Ok(y),
        Err(r) => r,
    };
    if integ.scheme == Scheme::Rk4 {
        return Err((t, reason));
    }
    // Substep halving: march with h/2^k; report the furthest time reached at the finest level.
    let mut reached = t;
    let mut last_reason = reason;
    for k in 1..=integ.max_halvings {
        let n = 1usize << k;
        let sub = h / n as f64;
        let mut y = x.clone();
        let mut ok = true;
        for i in 0..n {
            match attempt(&y, sub) {
                Ok(z) => y = z,
                Err(r) => {
                    reached = t + i as f64 * sub;
                    last_reason = r;
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(y);
        }
    }
    Err((reached, last_reason))
}

/// Integral curve of `field` from `m0` sampled at `times`.
pub fn integrate_curve(field: &VectorField, m0: &DVector<f64>, times: &[f64], integ: &Integrator) -> Result<Trajectory> {
    field.manifold.validate_point(m0, &field.cfg)?;
    let mut points = vec![m0.as_slice().to_vec()];
    let mut x = m0.clone();
    for j in 1..times.len() {
        let (t, h) = (times[j - 1], times[j] - times[j - 1]);
        match advance(field, &x, t, h, integ) {
            Ok(y) => x = y,
            Err((t, reason)) => {
                return Ok(Trajectory {
                    points,
                    status: Status::StepFailure { t, reason },
                })
            }
        }
        points.push(x.as_slice().to_vec());
        if let Some(b) = integ.escape_box {
            if x.amax() > b {
                return Ok(Trajectory {
                    points,
                    status: Status::Escaped { t: times[j] },
                });
            }
        }
    }
    Ok(Trajectory {
        points,
        status: Status::Complete,
    })
}

/// Worst `‖(γ(t+h) − γ(t−h))/2h − X(γ(t))‖∞` over interior grid times.
pub fn integral_residual(field: &VectorField, traj: &Trajectory, times: &[f64]) -> Result<f64> {
    let mut worst = 0.0f64;
    for j in 1..traj.points.len().saturating_sub(1) {
        let dt = times[j + 1] - times[j - 1];
        let d = (traj.point(j + 1) - traj.point(j - 1)) / dt;
        worst = max_abs(worst, (d - field.eval(&traj.point(j))?).amax());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowResult {
    pub field: String,
    pub integrator: Integrator,
    pub times: Vec<f64>,
    pub initial: Vec<Vec<f64>>,
    pub trajectories: Vec<Trajectory>,
}

impl FlowResult {
    pub fn complete_count(&self) -> usize {
        self.trajectories.iter().filter(|t| t.status.is_complete()).count()
    }
}

/// The flow of `field` on every grid point, trajectories integrated in parallel.
pub fn flow(field: &VectorField, grid: &[DVector<f64>], duration: f64, integ: &Integrator) -> Result<FlowResult> {
    let times = integ.times(duration)?;
    let trajectories = grid
        .par_iter()
        .map(|m| integrate_curve(field, m, &times, integ))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowResult {
        field: field.name.clone(),
        integrator: *integ,
        times,
        initial: grid.iter().map(|m| m.as_slice().to_vec()).collect(),
        trajectories,
    })
}

/// Residuals of the initial condition, the integral condition, the group law
/// at grid-aligned times, and equivariance under sampled group elements.
///
/// The group law restarts from `Φ(m, s)` with half the step, so it measures
/// `Φ(Φ(m, s), t) = Φ(m, s + t)` up to discretization error rather than
/// replaying identical arithmetic.
pub fn check_flow(
    fr: &FlowResult,
    field: &VectorField,
    action: Option<&SmoothAction>,
    rng: &mut Rng,
    group_samples: usize,
    tol: f64,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::new(format!("flow of {}", fr.field));
    let times = &fr.times;
    let integ = fr.integrator;

    let mut initial = 0.0f64;
    for (m, traj) in fr.initial.iter().zip(&fr.trajectories) {
        let d = traj.points[0].iter().zip(m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        initial = max_abs(initial, d);
    }
    report.check("initial_condition", initial, 0.0);

    // Flow laws are asserted where the trajectory exists on the whole interval;
    // near a blow-up the difference quotients only measure the singularity.
    let complete: Vec<&Trajectory> = fr.trajectories.iter().filter(|t| t.status.is_complete()).collect();
    let integral = complete
        .par_iter()
        .map(|t| integral_residual(field, t, times))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, max_abs);
    report.check("integral_condition", integral, tol);

    let n = times.len() - 1;
    let half = Integrator {
        step: integ.step / 2.0,
        ..integ
    };
    let splits: Vec<usize> = [n / 4, n / 2].into_iter().filter(|&s| s > 0 && s < n).collect();
    let group_law = complete
        .par_iter()
        .map(|traj| -> Result<f64> {
            let mut worst = 0.0f64;
            for &s in &splits {
                if s >= traj.points.len() {
                    continue;
                }
                let rest: Vec<f64> = times[s..].iter().map(|t| t - times[s]).collect();
                let fine: Vec<f64> = (0..2 * rest.len() - 1)
                    .map(|i| if i % 2 == 0 { rest[i / 2] } else { (rest[i / 2] + rest[i / 2 + 1]) / 2.0 })
                    .collect();
                let again = integrate_curve(field, &traj.point(s), &fine, &half)?;
                for (k, j) in (s..traj.points.len()).enumerate() {
                    if 2 * k >= again.points.len() {
                        break;
                    }
                    worst = max_abs(worst, (again.point(2 * k) - traj.point(j)).amax());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, max_abs);
    report.check("group_law", group_law, 10.0 * tol);

    if let Some(act) = action {
        let gs: Vec<GroupElement> = (0..group_samples).map(|_| act.group.sample(rng)).collect();
        let equiv = complete
            .par_iter()
            .map(|traj| -> Result<f64> {
                let mut worst = 0.0f64;
                for g in &gs {
                    let start = act.act(&traj.point(0), g)?;
                    let moved = integrate_curve(field, &start, times, &integ)?;
                    let upto = moved.points.len().min(traj.points.len());
                    for j in 0..upto {
                        let expect = act.act(&traj.point(j), g)?;
                        worst = max_abs(worst, (moved.point(j) - expect).amax());
                    }
                }
                Ok(worst)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, max_abs);
        report.check("equivariance", equiv, 10.0 * tol);
    }
    report.count("trajectories", fr.trajectories.len() as u64);
    report.count("complete", fr.complete_count() as u64);
    if complete.len() < fr.trajectories.len() {
        report.note(format!(
            "{} incomplete trajectories excluded from the integral, group-law and equivariance residuals",
            fr.trajectories.len() - complete.len()
        ));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeStatus {
    Certified,
    /// `ι` was rank-deficient somewhere along the trajectory.
    NonFreePoint,
    /// One of the two flows stopped early; compared on the common prefix.
    Truncated,
}

/// Group elements `g(m, t)` with `Ψ(m, t) = Φ(m, t)·g(m, t)`.
#[derive(Debug, Clone, Serialize)]
pub struct GaugeTransport {
    /// Group coordinates per trajectory per grid time.
    pub elements: Vec<Vec<Vec<f64>>>,
    pub residuals: Vec<f64>,
    pub statuses: Vec<GaugeStatus>,
    pub max_residual: f64,
}

/// Group state in flat coordinates for the gauge ODE `ġ = g·ψ(q)`.
fn group_rate(group: &CompactGroup, g: &DVector<f64>, xi: &DVector<f64>) -> Result<DVector<f64>> {
    match group {
        CompactGroup::Torus(_) => Ok(xi.clone()),
        CompactGroup::So3 => {
            let r = Matrix3::from_row_slice(g.as_slice());
            let d = r * hat(&Vector3::new(xi[0], xi[1], xi[2]));
            Ok(DVector::from_iterator(9, (0..3).flat_map(|i| (0..3).map(move |j| d[(i, j)]))))
        }
        CompactGroup::Finite(_) => Err(Error::flow("gauge transport needs a group of positive dimension")),
    }
}

fn group_retract(group: &CompactGroup, g: &DVector<f64>) -> DVector<f64> {
    match group {
        CompactGroup::Torus(_) => g.map(wrap_angle),
        CompactGroup::So3 => {
            let r = orthonormalize(&Matrix3::from_row_slice(g.as_slice()));
            DVector::from_iterator(9, (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])))
        }
        CompactGroup::Finite(_) => g.clone(),
    }
}

/// Solves `ġ = g·ψ(q)`, `q̇ = X'(q)` with `g(0) = g0` (identity by default)
/// alongside each trajectory and certifies `Ψ(m, t) = Φ(m, t)·g(m, t)`.
pub fn gauge_transport(
    phi: &FlowResult,
    psi_flow: &FlowResult,
    field_prime: &VectorField,
    psi: &FieldEquivalence,
    action: &SmoothAction,
    g0: Option<&GroupElement>,
) -> Result<GaugeTransport> {
    let group = &action.group;
    if group.lie_dim() == 0 {
        return Err(Error::flow("gauge transport needs a group of positive dimension"));
    }
    if phi.times != psi_flow.times || phi.trajectories.len() != psi_flow.trajectories.len() {
        return Err(Error::flow("flows sampled on different grids"));
    }
    let times = &phi.times;
    let start = g0.cloned().unwrap_or_else(|| group.identity());
    let g_start = DVector::from_vec(group.coordinates(&start));
    let rank_tol = action.cfg.rank_tol;

    let rows = phi
        .trajectories
        .par_iter()
        .zip(psi_flow.trajectories.par_iter())
        .map(|(tp, tq)| -> Result<(Vec<Vec<f64>>, f64, GaugeStatus)> {
            let mut q = tq.point(0);
            let mut g = g_start.clone();
            let mut elements = vec![g.as_slice().to_vec()];
            let len = tp.points.len().min(tq.points.len());
            let mut nonfree = false;
            for j in 1..len {
                let h = times[j] - times[j - 1];
                let deriv = |q: &DVector<f64>, g: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
                    Ok((field_prime.eval(q)?, group_rate(group, g, &psi.eval(q)?)?))
                };
                let (a1, b1) = deriv(&q, &g)?;
                let (a2, b2) = deriv(&(&q + &a1 * (h / 2.0)), &(&g + &b1 * (h / 2.0)))?;
                let (a3, b3) = deriv(&(&q + &a2 * (h / 2.0)), &(&g + &b2 * (h / 2.0)))?;
                let (a4, b4) = deriv(&(&q + &a3 * h), &(&g + &b3 * h))?;
                let dq = (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
                q = field_prime.manifold.retract(&q, &dq, &field_prime.cfg)?;
                g = group_retract(group, &(&g + (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (h / 6.0)));
                elements.push(g.as_slice().to_vec());
            }
            let mut residual = 0.0f64;
            for (j, gc) in elements.iter().enumerate() {
                let ge = group.from_coordinates(gc)?;
                let moved = action.act(&tp.point(j), &ge)?;
                residual = max_abs(residual, (tq.point(j) - moved).amax());
                let sv = action.inf_matrix(&tq.point(j))?.singular_values();
                let scale = tq.point(j).amax().max(1.0);
                nonfree |= sv.iter().any(|s| *s <= rank_tol * scale);
            }
            let status = if nonfree {
                GaugeStatus::NonFreePoint
            } else if len < times.len() {
                GaugeStatus::Truncated
            } else {
                GaugeStatus::Certified
            };
            Ok((elements, residual, status))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = GaugeTransport {
        elements: Vec::new(),
        residuals: Vec::new(),
        statuses: Vec::new(),
        max_residual: 0.0,
    };
    for (e, r, s) in rows {
        out.max_residual = max_abs(out.max_residual, r);
        out.elements.push(e);
        out.residuals.push(r);
        out.statuses.push(s);
    }
    Ok(out)
}

/// Lifting integral curves along `π: M -> N` with `Tπ∘X_M = X_N∘π`.
///
/// Rejects the pair before integrating when the intertwining residual on
/// `samples` exceeds `tol`, then checks `π(γ_M(t)) = γ_N(t)` and that `γ_M`
/// completes whenever `γ_N` does.
#[allow(clippy::too_many_arguments)]
pub fn proper_lift_check(
    pi: &SmoothMap,
    x_m: &VectorField,
    x_n: &VectorField,
    m0: &DVector<f64>,
    duration: f64,
    integ: &Integrator,
    samples: &[DVector<f64>],
    tol: f64,
) -> Result<VerificationReport> {
    let mut intertwining = 0.0f64;
    let mut scale = 0.0f64;
    for m in samples.iter().chain(std::iter::once(m0)) {
        let pm = pi.eval(m)?;
        let xn = x_n.eval(&pm)?;
        let pushed = pi.jacobian(m)? * x_m.eval(m)?;
        intertwining = max_abs(intertwining, (pushed - &xn).amax());
        scale = scale.max(xn.amax());
    }
    if !(intertwining <= tol) {
        return Err(Error::flow(format!(
            "fields are not intertwined by π: residual {intertwining:.6e} (max ‖X_N‖∞ {scale:.6e}) exceeds {tol:.1e}"
        )));
    }
    let times = integ.times(duration)?;
    let up = integrate_curve(x_m, m0, &times, integ)?;
    let down = integrate_curve(x_n, &pi.eval(m0)?, &times, integ)?;
    let mut projection = 0.0f64;
    for j in 0..up.points.len().min(down.points.len()) {
        projection = max_abs(projection, (pi.eval(&up.point(j))? - down.point(j)).amax());
    }
    let mut report = VerificationReport::new(format!("lift of {} along π", x_n.name));
    report.check("intertwining", intertwining, tol);
    report.check("projection", projection, tol);
    let lifted = !down.status.is_complete() || up.status.is_complete();
    report.check("lift_completes", if lifted { 0.0 } else { 1.0 }, 0.0);
    report.count("upstairs_steps", up.points.len() as u64 - 1);
    report.count("downstairs_steps", down.points.len() as u64 - 1);
    Ok(report)
}

/// CSV with header `traj_id,t,coord_0..,status`, then group coordinates
/// `g_0..` when a gauge is given. Every `stride`-th grid time is written, plus the last.
pub fn write_flow_csv<W: Write>(out: &mut W, fr: &FlowResult, gauge: Option<&GaugeTransport>, stride: usize) -> Result<()> {
    let dim = fr.initial.first().map_or(0, |p| p.len());
    let gdim = gauge
        .and_then(|g| g.elements.first())
        .and_then(|e| e.first())
        .map_or(0, |c| c.len());
    let mut header = vec!["traj_id".to_string(), "t".to_string()];
    header.extend((0..dim).map(|i| format!("coord_{i}")));
    header.push("status".into());
    header.extend((0..gdim).map(|i| format!("g_{i}")));
    writeln!(out, "{}", header.join(","))?;
    let stride = stride.max(1);
    for (id, traj) in fr.trajectories.iter().enumerate() {
        let last = traj.points.len() - 1;
        for (j, p) in traj.points.iter().enumerate() {
            if j % stride != 0 && j != last {
                continue;
            }
            let mut row = vec![id.to_string(), format!("{}", fr.times[j])];
            row.extend(p.iter().map(|v| format!("{v:.17e}")));
            row.push(traj.status.label().into());
            if let Some(g) = gauge.and_then(|g| g.elements.get(id)).and_then(|e| e.get(j)) {
                row.extend(g.iter().map(|v| format!("{v:.17e}")));
            }
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}
