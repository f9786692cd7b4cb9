use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{Command, Grid, Scenario, Tolerances};
use crate::error::{Error, Result};
use crate::etale::{check_assignment, check_etale_integral, EtaleFieldAssignment};
use crate::fields::{
    average, check_equivalence, check_vector_field, support_indicator, to_groupoid_field, ActionField,
};
use crate::flows::{check_flow, flow, gauge_transport, proper_lift_check, write_flow_csv, GaugeStatus, Integrator, Status, VectorField,
};
use crate::geometry::{Config, Manifold, SmoothMap};
use crate::groupoid::{
    action_groupoid_unchecked, check_groupoid, check_morphism, dictionary_check, projection_naturality,
    tangent_groupoid, tangent_morphism, tangent_projection, FiniteMorphism, GroupoidMorphism,
};
use crate::groups::{CompactGroup, HaarConfig, SmoothAction};
use crate::report::VerificationReport;
use crate::{seeded_rng, Rng};

/// Everything needed to rerun a command: the resolved numeric configuration and the scenario text.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub label: String,
    pub samples: usize,
    pub radius: f64,
    pub geometry: Config,
    pub haar: HaarConfig,
    pub integrator: Integrator,
    pub tolerances: Tolerances,
    pub source: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub command: Command,
    pub seed: u64,
    pub passed: bool,
    pub config: ConfigEcho,
    pub sections: Vec<VerificationReport>,
    /// File names written next to `report.json`.
    pub artifacts: Vec<String>,
    pub wall_time_ms: u64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    /// The report with `wall_time_ms` removed, for reproducibility comparisons.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("reports serialize");
        if let Some(m) = v.as_object_mut() {
            m.remove("wall_time_ms");
        }
        serde_json::to_string_pretty(&v).expect("reports serialize")
    }

    pub fn failures(&self) -> Vec<String> {
        self.sections
            .iter()
            .flat_map(|s| {
                s.checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(move |c| format!("{}: {} = {:.3e} (tolerance {:.1e})", s.title, c.name, c.max_residual, c.tolerance))
            })
            .collect()
    }
}

pub struct RunOutput {
    pub report: RunReport,
    /// `(file name, contents)` for each CSV artifact.
    pub files: Vec<(String, String)>,
}

/// Writes `report.json` and the CSV artifacts into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: &str| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        written.push(p);
        Ok(())
    };
    for (name, body) in &out.files {
        put(name, body)?;
    }
    put("report.json", &out.report.to_json())?;
    Ok(written)
}

struct Sink {
    sections: Vec<VerificationReport>,
    files: Vec<(String, String)>,
}

/// Runs one command. Every command draws from a fresh generator seeded with
/// the scenario seed, so `run` reproduces the individual commands.
pub fn run(sc: &Scenario, cmd: Command) -> Result<RunOutput> {
    let clock = Instant::now();
    let mut sink = Sink {
        sections: Vec::new(),
        files: Vec::new(),
    };
    let cmds = if cmd == Command::Run {
        if sc.tasks.is_empty() {
            return Err(Error::Harness(format!("scenario {} lists no tasks", sc.name)));
        }
        sc.tasks.clone()
    } else {
        vec![cmd]
    };
    for c in cmds {
        let mut rng = seeded_rng(sc.seed);
        let rng = &mut rng;
        match c {
            Command::Check => run_check(sc, rng, &mut sink)?,
            Command::Average => run_average(sc, rng, &mut sink)?,
            Command::Flow => run_flow(sc, rng, &mut sink)?,
            Command::Support => run_support(sc, rng, &mut sink)?,
            Command::Gauge => run_gauge(sc, rng, &mut sink)?,
            Command::Etale => run_etale(sc, rng, &mut sink)?,
            Command::Dictionary => run_dictionary(sc, &mut sink)?,
            Command::Lift => run_lift(sc, rng, &mut sink)?,
            Command::Run => unreachable!("tasks never contain run"),
        }
    }
    for s in &mut sink.sections {
        s.seed = Some(sc.seed);
    }
    let report = RunReport {
        scenario: sc.name.clone(),
        command: cmd,
        seed: sc.seed,
        passed: sink.sections.iter().all(VerificationReport::passed),
        config: ConfigEcho {
            label: sc.label.clone(),
            samples: sc.samples,
            radius: sc.radius,
            geometry: sc.cfg,
            haar: sc.haar,
            integrator: sc.integrator,
            tolerances: sc.tol,
            source: sc.source.clone(),
        },
        sections: sink.sections,
        artifacts: sink.files.iter().map(|(n, _)| n.clone()).collect(),
        wall_time_ms: clock.elapsed().as_millis() as u64,
    };
    Ok(RunOutput {
        report,
        files: sink.files,
    })
}

fn resolve_grid(grid: &Grid, action: &SmoothAction, rng: &mut Rng, radius: f64) -> Result<Vec<DVector<f64>>> {
    match grid {
        Grid::Points(p) => Ok(p.clone()),
        Grid::Sampled(n) => action.manifold.sample(rng, *n, radius, &action.cfg),
    }
}

fn has_exact_rule(group: &CompactGroup) -> bool {
    !matches!(group, CompactGroup::So3)
}

fn run_check(sc: &Scenario, rng: &mut Rng, sink: &mut Sink) -> Result<()> {
    let action = sc.action()?.clone();
    let gpd = action_groupoid_unchecked(action.clone(), sc.radius);
    let mut r = check_groupoid(&gpd, rng, sc.samples, sc.tol.check)?;
    r.title = format!("groupoid {}", gpd.name);
    sink.sections.push(r);

    let tg = tangent_groupoid(&gpd)?;
    let mut r = check_groupoid(&tg, rng, sc.samples, sc.tol.tangent)?;
    r.title = format!("tangent groupoid {}", tg.name);
    sink.sections.push(r);

    let pi = tangent_projection(&tg)?;
    let mut r = check_morphism(&tg, &gpd, &pi, rng, sc.samples, sc.tol.naturality)?;
    r.title = "tangent projection".into();
    let id = GroupoidMorphism::identity(&gpd);
    let mut morphisms = vec![id];
    if action.is_linear() && matches!(action.manifold, Manifold::Euclidean { .. }) {
        let n = action.ambient_dim();
        let scale = SmoothMap::linear(DMatrix::identity(n, n) * 2.0);
        morphisms.push(GroupoidMorphism::equivariant("scale2", scale, action.group.coordinate_len()));
    }
    for f in &morphisms {
        let tf = tangent_morphism(&gpd, f)?;
        let res = projection_naturality(&tg, &tg, &gpd, f, &tf, rng, sc.samples)?;
        r.check(format!("naturality/{}", f.name), res, sc.tol.naturality);
    }
    sink.sections.push(r);

    for name in &sc.check.fields {
        let f = sc.field(name)?;
        let laws = f.invariant_residuals(rng, sc.samples, sc.radius)?;
        let ok = laws.checks.iter().all(|c| c.max_residual <= sc.tol.check);
        let mut r = VerificationReport::new(format!("field {name}"));
        for c in &laws.checks {
            r.check(c.name.clone(), c.max_residual, sc.tol.check).detail = c.detail.clone();
        }
        if ok {
            let gf = to_groupoid_field(f, rng, sc.samples, sc.radius, sc.tol.check)?;
            let vf = check_vector_field(&gpd, &tg, &gf, rng, sc.samples, sc.tol.check)?;
            r.absorb("groupoid_field", vf);
        } else {
            r.note("field laws fail, so the groupoid-level field was not built");
        }
        sink.sections.push(r);
    }
    Ok(())
}

fn csv_row(out: &mut String, parts: &[&[f64]]) {
    let cells: Vec<String> = parts.iter().flat_map(|p| p.iter()).map(|v| format!("{v:.17e}")).collect();
    let _ = writeln!(out, "{}", cells.join(","));
}

fn run_average(sc: &Scenario, rng: &mut Rng, sink: &mut Sink) -> Result<()> {
    let action = sc.action()?.clone();
    let group = &action.group;
    let names: Vec<String> = if sc.average.fields.is_empty() {
        sc.fields.iter().map(|f| f.name.clone()).collect()
    } else {
        sc.average.fields.clone()
    };
    let exact = has_exact_rule(group);
    let mut averaged = Vec::new();
    for name in &names {
        let f = sc.field(name)?;
        let mut r = VerificationReport::new(format!("average of {name}"));
        let input = f.invariant_residuals(rng, sc.samples, sc.radius)?;
        let valid = input.checks.iter().all(|c| c.max_residual <= sc.tol.check);
        let av = average(f, &sc.haar)?;

        let inv = av.field.invariant_residuals(rng, sc.samples, sc.radius)?;
        let residual = inv.residual("equivariance");
        r.check("invariance", residual, sc.tol.average);
        if residual > 100.0 * sc.tol.average {
            r.note("invariance residual exceeds 100x tolerance; raise the [haar] quadrature orders");
        }
        if valid {
            let cert = check_equivalence(f, &av.field, &av.psi, rng, sc.samples, sc.radius, sc.tol.average)?;
            r.absorb("certificate", cert);
        } else {
            r.note("input is not a field on the action groupoid; the certificate check was skipped");
        }

        let points = action.manifold.sample(rng, sc.samples, sc.radius, &action.cfg)?;
        let mut csv = String::new();
        let n = action.ambient_dim();
        let k = group.lie_dim();
        let mut header: Vec<String> = (0..n).map(|i| format!("m_{i}")).collect();
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..n).map(|i| format!("avg_{i}")));
        header.extend((0..k).map(|i| format!("psi_{i}")));
        let _ = writeln!(csv, "{}", header.join(","));
        let mut biggest = 0.0f64;
        let mut values = Vec::new();
        for m in &points {
            let x = f.x(m)?;
            let xt = av.field.x(m)?;
            let p = av.psi.eval(m)?;
            biggest = biggest.max(xt.amax());
            csv_row(&mut csv, &[m.as_slice(), x.as_slice(), xt.as_slice(), p.as_slice()]);
            values.push(xt);
        }
        if sc.average.zero.contains(name) {
            r.check("vanishes", biggest, sc.tol.zero);
        }
        if exact {
            let twice = average(&av.field, &sc.haar)?;
            let mut worst = 0.0f64;
            for (m, xt) in points.iter().zip(&values) {
                worst = worst.max((twice.field.x(m)? - xt).amax());
            }
            r.check("idempotence", worst, sc.tol.idempotence);
        } else {
            r.note("idempotence skipped: the SO(3) quadrature is not exact");
        }
        sink.files.push((format!("average_{name}.csv"), csv));
        sink.sections.push(r);
        averaged.push((f.clone(), points, values));
    }
    if exact && !averaged.is_empty() {
        let (f, points, vf) = &averaged[0];
        let (g, _, _) = averaged.get(1).unwrap_or(&averaged[0]);
        let (a, b) = (2.0, -0.5);
        let combo = average(&ActionField::linear_combination(a, f, b, g)?, &sc.haar)?;
        let gav = average(g, &sc.haar)?;
        let mut worst = 0.0f64;
        for (m, xf) in points.iter().zip(vf) {
            let expected = xf * a + gav.field.x(m)? * b;
            worst = worst.max((combo.field.x(m)? - expected).amax());
        }
        let mut r = VerificationReport::new(format!("linearity of averaging on {} and {}", f.name, g.name));
        r.check("linearity", worst, sc.tol.idempotence);
        sink.sections.push(r);
    }
    Ok(())
}

fn flow_field(sc: &Scenario, name: &str, averaged: bool) -> Result<ActionField> {
    let f = sc.field(name)?;
    if averaged {
        return Ok(average(f, &sc.haar)?.field);
    }
    if f.has_y() {
        return Err(Error::Harness(format!(
            "field {name} has a cocycle; flows need Y = 0 or `averaged = true`"
        )));
    }
    Ok(f.clone())
}

fn run_flow(sc: &Scenario, rng: &mut Rng, sink: &mut Sink) -> Result<()> {
    let task = sc.flow.as_ref().ok_or_else(|| Error::Harness("scenario has no [flow] section".into()))?;
    let action = sc.action()?.clone();
    let f = flow_field(sc, &task.field, task.averaged)?;
    let vf = VectorField::from_action_field(&f);
    let grid = resolve_grid(&task.grid, &action, rng, sc.radius)?;
    let fr = flow(&vf, &grid, task.duration, &sc.integrator)?;
    let mut r = check_flow(&fr, &vf, Some(&action), rng, task.group_samples, sc.tol.flow)?;
    let complete = fr.complete_count();
    r.count("trajectories", fr.trajectories.len() as u64);
    r.count("complete", complete as u64);
    for (i, t) in fr.trajectories.iter().enumerate() {
        match &t.status {
            Status::Complete => continue,
            Status::Escaped { t: when } => r.note(format!("trajectory {i} escaped at t = {when}")),
            Status::StepFailure { t: when, reason } => {
                r.note(format!("trajectory {i} stopped at t = {when}: {reason}"))
            }
        }
        *r.counts.entry(format!("status/{}", t.status.label())).or_insert(0) += 1;
    }
    if task.expect_complete {
        r.check("all_complete", (fr.trajectories.len() - complete) as f64, 0.0);
    }
    let mut buf = Vec::new();
    write_flow_csv(&mut buf, &fr, None, task.stride)?;
    sink.files.push(("flow.csv".into(), String::from_utf8(buf).expect("csv is utf-8")));
    sink.sections.push(r);
    Ok(())
}

fn run_support(sc: &Scenario, rng: &mut Rng, sink: &mut Sink) -> Result<()> {
    let task = sc.support.as_ref().ok_or_else(|| Error::Harness("scenario has no [support] section".into()))?;
    let action = sc.action()?.clone();
    let f = flow_field(sc, &task.field, task.averaged)?;
    let grid = resolve_grid(&task.grid, &action, rng, sc.radius)?;
    let orbit: Vec<_> = (0..task.orbit).map(|_| action.group.sample(rng)).collect();
    let labels = support_indicator(&f, &grid, &orbit, sc.tol.support)?;
    let mut r = VerificationReport::new(format!("support of {}", f.name));
    if !task.averaged {
        let laws = f.invariant_residuals(rng, sc.samples, sc.radius)?;
        r.check("field_equivariance", laws.residual("equivariance"), sc.tol.check);
    }
    let inside = labels.iter().filter(|l| l.in_support).count();
    r.count("points", labels.len() as u64);
    r.count("in_support", inside as u64);
    r.count("equivalent_to_zero", (labels.len() - inside) as u64);
    let n = action.ambient_dim();
    let mut csv = String::new();
    let mut header: Vec<String> = (0..n).map(|i| format!("m_{i}")).collect();
    header.extend(["residual", "orbit_residual", "in_support"].map(String::from));
    let _ = writeln!(csv, "{}", header.join(","));
    for l in &labels {
        let coords: Vec<String> = l.point.iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(
            csv,
            "{},{:.17e},{:.17e},{}",
            coords.join(","),
            l.residual,
            l.orbit_residual,
            u8::from(l.in_support)
        );
    }
    sink.files.push(("support.csv".into(), csv));
    sink.sections.push(r);
    Ok(())
}

fn run_gauge(sc: &Scenario, rng: &mut Rng, sink: &mut Sink) -> Result<()> {
    let task = sc.gauge.as_ref().ok_or_else(|| Error::Harness("scenario has no [gauge] section".into()))?;
    let action = sc.action()?.clone();
    let (f, f2) = (sc.field(&task.from)?, sc.field(&task.to)?);
    let eq = check_equivalence(f, f2, &task.psi, rng, sc.samples, sc.radius, sc.tol.check)?;
    sink.sections.push(eq);

    let (vf, vf2) = (VectorField::from_action_field(f), VectorField::from_action_field(f2));
    let grid = resolve_grid(&task.grid, &action, rng, sc.radius)?;
    let phi = flow(&vf, &grid, task.duration, &sc.integrator)?;
    let psi_flow = flow(&vf2, &grid, task.duration, &sc.integrator)?;
    let gt = gauge_transport(&phi, &psi_flow, &vf2, &task.psi, &action, None)?;
    let mut r = VerificationReport::new(format!("gauge transport {} -> {}", f.name, f2.name));
    r.check("certificate", gt.max_residual, sc.tol.gauge);
    for (label, status) in [
        ("certified", GaugeStatus::Certified),
        ("non_free_point", GaugeStatus::NonFreePoint),
        ("truncated", GaugeStatus::Truncated),
    ] {
        r.count(label, gt.statuses.iter().filter(|s| **s == status).count() as u64);
    }
    if let Some(offset) = task.offset {
        let mut xi = DVector::zeros(action.group.lie_dim());
        xi[0] = 1.0;
        let g0 = action.group.exp(&xi, offset)?;
        let probe = gauge_transport(&phi, &psi_flow, &vf2, &task.psi, &action, Some(&g0))?;
        r.check_at_least("offset_detected", probe.max_residual, 1e-3)
            .with_detail(format!("initial gauge at distance {offset} from the identity"));
    }
    let mut buf = Vec::new();
    write_flow_csv(&mut buf, &psi_flow, Some(&gt), task.stride)?;
    sink.files.push(("gauge.csv".into(), String::from_utf8(buf).expect("csv is utf-8")));
    sink.sections.push(r);
    Ok(())
}

fn run_etale(sc: &Scenario, rng: &mut Rng, sink: &mut Sink) -> Result<()> {
    let task = sc.etale.as_ref().ok_or_else(|| Error::Harness("scenario has no charts".into()))?;
    let mut r = task.system.validate(rng, task.samples)?;
    r.title = "chart system".into();
    sink.sections.push(r);
    let assignment = EtaleFieldAssignment {
        fields: task.fields.clone(),
    };
    let r = check_assignment(&task.system, &assignment, rng, task.samples, sc.tol.etale, sc.tol.functoriality)?;
    sink.sections.push(r);
    if let Some(int) = &task.integrate {
        let i = task.system.chart_index(&int.chart).expect("chart resolved at load");
        let chart = &task.system.charts[i];
        let vf = VectorField::from_map(format!("X_{}", chart.name), Manifold::euclidean(chart.dim), task.fields[i].clone());
        let fr = flow(&vf, &int.starts, int.duration, &sc.integrator)?;
        let mut r = check_etale_integral(chart, &vf, &fr.trajectories, &fr.times, sc.tol.integral)?;
        r.count("complete", fr.complete_count() as u64);
        let mut buf = Vec::new();
        write_flow_csv(&mut buf, &fr, None, 1)?;
        sink.files.push((format!("etale_{}.csv", chart.name), String::from_utf8(buf).expect("csv is utf-8")));
        sink.sections.push(r);
    }
    Ok(())
}

fn run_dictionary(sc: &Scenario, sink: &mut Sink) -> Result<()> {
    if sc.dictionary.is_empty() {
        return Err(Error::Harness("scenario has no [dictionary] checks".into()));
    }
    for c in &sc.dictionary {
        let (from, to) = (&sc.groupoids[&c.from], &sc.groupoids[&c.to]);
        let resolve = |n: &str| -> FiniteMorphism {
            match sc.morphisms.get(n) {
                Some(m) => m.morphism.clone(),
                None => FiniteMorphism::identity(from),
            }
        };
        let (f, g) = (resolve(&c.f), resolve(&c.g));
        let mut r = dictionary_check(from, to, &f, &g)?;
        if let Some(expect) = c.expect {
            let got = r.counts.get("two_morphisms").copied().unwrap_or(0);
            r.check("count_matches", got.abs_diff(expect) as f64, 0.0)
                .with_detail(format!("found {got}, expected {expect}"));
        }
        sink.sections.push(r);
    }
    Ok(())
}

fn run_lift(sc: &Scenario, rng: &mut Rng, sink: &mut Sink) -> Result<()> {
    let task = sc.lift.as_ref().ok_or_else(|| Error::Harness("scenario has no [lift] section".into()))?;
    let up = VectorField::from_map("X_up", task.up.clone(), task.up_field.clone());
    let down = VectorField::from_map("X_down", task.down.clone(), task.down_field.clone());
    let samples = task.up.sample(rng, task.samples, sc.radius, &sc.cfg)?;
    let r = match proper_lift_check(&task.map, &up, &down, &task.start, task.duration, &sc.integrator, &samples, sc.tol.lift) {
        Ok(r) => r,
        Err(e) => {
            let mut r = VerificationReport::new("lift of X_down along π");
            r.check("accepted", 1.0, 0.0).with_detail(e.to_string());
            r
        }
    };
    sink.sections.push(r);
    Ok(())
}
