//! End-to-end acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary so that every criterion is attempted and reported
//! even when an earlier one fails. The process exits non-zero on any failure.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use common::{count_natural_transformations, shunting_yard, CORPUS_POINT, PARSER_CORPUS};
use gflow_core::etale::{check_assignment, check_etale_integral, EtaleFieldAssignment};
use gflow_core::flows::{flow, gauge_transport, integrate_curve, proper_lift_check, Status, VectorField};
use gflow_core::groupoid::{enumerate_two_morphisms, FiniteMorphism};
use gflow_core::groups::angle_diff;
use gflow_core::harness::{self, Command, Grid, RunReport, Scenario};
use gflow_core::{parse, seeded_rng, Bindings, Manifold, SmoothMap, VerificationReport};
use nalgebra::{dvector, DVector};

type Outcome = std::result::Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

const AVERAGE_CORPUS: [(&str, f64, bool); 6] = [
    ("c2_line", 1e-8, true),
    ("s3_space", 1e-8, true),
    ("circle_plane", 1e-8, true),
    ("circle_torus", 1e-8, true),
    ("so3_space", 1e-6, false),
    ("so3_sphere", 1e-6, false),
];

const ACTION_SCENARIOS: [&str; 11] = [
    "c2_line",
    "s3_space",
    "circle_plane",
    "circle_torus",
    "so3_space",
    "so3_sphere",
    "radial_flow",
    "bump_radial",
    "c2_bump",
    "c2_blowup",
    "gauge_spiral",
];

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scn"))
}

fn scenario(name: &str) -> Scenario {
    harness::load(scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn report(sc: &Scenario, cmd: Command) -> RunReport {
    harness::run(sc, cmd).unwrap_or_else(|e| panic!("{} {}: {e}", sc.name, cmd.as_str())).report
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Largest residual over checks of sections whose title starts with `section`
/// and whose name satisfies `pick`, with the number of checks seen.
fn worst(r: &RunReport, section: &str, pick: impl Fn(&str) -> bool) -> (f64, usize) {
    let mut w = 0.0f64;
    let mut n = 0;
    for s in r.sections.iter().filter(|s| s.title.starts_with(section)) {
        for c in s.checks.iter().filter(|c| pick(&c.name)) {
            w = if c.max_residual.is_nan() { f64::NAN } else { w.max(c.max_residual) };
            n += 1;
        }
    }
    (w, n)
}

fn within(name: &str, value: f64, tol: f64) -> Result<(), String> {
    ensure(value <= tol, || format!("{name} = {value:.3e} exceeds {tol:.0e}"))
}

fn section<'a>(r: &'a RunReport, title: &str) -> &'a VerificationReport {
    r.sections
        .iter()
        .find(|s| s.title == title)
        .unwrap_or_else(|| panic!("{}: no section `{title}`", r.scenario))
}

fn averaging(reports: &BTreeMap<&str, RunReport>) -> Outcome {
    let mut certificates = 0;
    for (name, tol, _) in AVERAGE_CORPUS {
        let r = &reports[name];
        let (inv, n) = worst(r, "average of", |c| c == "invariance");
        ensure(n > 0, || format!("{name}: no averaged fields"))?;
        within(&format!("{name} invariance"), inv, tol)?;
        let (cert, m) = worst(r, "average of", |c| c.starts_with("certificate/"));
        ensure(m > 0, || format!("{name}: no certificate was checked"))?;
        within(&format!("{name} certificate"), cert, tol)?;
        certificates += m;
    }
    let square = section(&reports["c2_line"], "average of square").residual("vanishes");
    within("C2 average of x^2", square, 1e-12)?;
    let (sphere, n) = worst(&reports["so3_sphere"], "average of", |c| c == "vanishes");
    ensure(n == 2, || format!("expected two vanishing SO3 averages, saw {n}"))?;
    within("SO3 sphere averages", sphere, 1e-6)?;
    Ok(format!(
        "{} scenarios, {certificates} certificates, C2 x^2 -> {square:.1e}, SO3/S2 -> {sphere:.1e}",
        AVERAGE_CORPUS.len()
    ))
}

fn idempotence(reports: &BTreeMap<&str, RunReport>) -> Outcome {
    let (mut idem, mut lin) = (0.0f64, 0.0f64);
    for (name, _, exact) in AVERAGE_CORPUS.iter().filter(|c| c.2) {
        let r = &reports[name];
        let (i, n) = worst(r, "average of", |c| c == "idempotence");
        ensure(*exact && n > 0, || format!("{name}: idempotence not checked"))?;
        let (l, m) = worst(r, "linearity", |c| c == "linearity");
        ensure(m > 0, || format!("{name}: linearity not checked"))?;
        within(&format!("{name} idempotence"), i, 1e-10)?;
        within(&format!("{name} linearity"), l, 1e-10)?;
        idem = idem.max(i);
        lin = lin.max(l);
    }
    Ok(format!("idempotence {idem:.1e}, linearity {lin:.1e} on the exact-rule scenarios"))
}

fn radial_error(field: &VectorField, m0: &DVector<f64>, h: f64, integ: gflow_core::flows::Integrator) -> f64 {
    let integ = integ.with_step(h);
    let times = integ.times(1.0).unwrap();
    let traj = integrate_curve(field, m0, &times, &integ).unwrap();
    assert!(traj.status.is_complete());
    (traj.last() - m0 * 1f64.exp()).amax()
}

fn flow_correctness() -> Outcome {
    let sc = scenario("radial_flow");
    let field = VectorField::from_action_field(sc.field("radial").map_err(|e| e.to_string())?);
    let task = sc.flow.as_ref().ok_or("radial_flow has no flow task")?;
    ensure(sc.integrator.step == 1e-3 && task.duration == 1.0, || "radial_flow must use h = 1e-3 over T = 1".into())?;
    let Grid::Points(points) = &task.grid else { return Err("radial_flow needs explicit points".into()) };
    let closed = points
        .iter()
        .map(|m| radial_error(&field, m, 1e-3, sc.integrator))
        .fold(0.0, f64::max);
    within("closed-form error", closed, 1e-6)?;

    let m0 = dvector![1.0, 0.0];
    let ratio = radial_error(&field, &m0, 0.1, sc.integrator) / radial_error(&field, &m0, 0.05, sc.integrator);
    ensure((12.0..=20.0).contains(&ratio), || format!("Richardson ratio {ratio:.3} outside [12, 20]"))?;

    let r = report(&sc, Command::Flow);
    let (eq, n) = worst(&r, "flow of", |c| c == "equivariance");
    let (gl, m) = worst(&r, "flow of", |c| c == "group_law");
    ensure(n == 1 && m == 1, || "flow report lacks equivariance or group law".into())?;
    within("equivariance", eq, 1e-5)?;
    within("group law", gl, 1e-5)?;
    Ok(format!("closed form {closed:.1e}, Richardson {ratio:.2}, equivariance {eq:.1e}, group law {gl:.1e}"))
}

fn completeness() -> Outcome {
    let mut parts = Vec::new();
    for name in ["bump_radial", "c2_bump"] {
        let sc = scenario(name);
        let task = sc.flow.as_ref().ok_or_else(|| format!("{name} has no flow task"))?;
        ensure(task.duration >= 10.0, || format!("{name} integrates only to T = {}", task.duration))?;
        let r = report(&sc, Command::Flow);
        let s = r.sections.iter().find(|s| s.title.starts_with("flow of")).ok_or("no flow section")?;
        let (complete, total) = (s.counts["complete"], s.counts["trajectories"]);
        ensure(total > 0 && complete == total, || format!("{name}: {complete}/{total} complete"))?;
        parts.push(format!("{name} {complete}/{total}"));
    }

    let sc = scenario("c2_blowup");
    ensure(sc.integrator.step == 1e-4, || "c2_blowup must use h = 1e-4".into())?;
    let field = VectorField::from_action_field(sc.field("cubic").map_err(|e| e.to_string())?);
    let times = sc.integrator.times(0.2).map_err(|e| e.to_string())?;
    let traj = integrate_curve(&field, &dvector![2.0], &times, &sc.integrator).map_err(|e| e.to_string())?;
    let Status::StepFailure { t, .. } = traj.status else {
        return Err(format!("x^3 from 2 ended as {}", traj.status.label()));
    };
    let rel = (t - 0.125).abs() / 0.125;
    ensure(rel <= 0.2, || format!("blow-up detected at t = {t}, {:.0}% from 0.125", rel * 100.0))?;
    parts.push(format!("blow-up at t = {t:.5}"));
    Ok(parts.join(", "))
}

fn gauge() -> Outcome {
    let sc = scenario("gauge_spiral");
    let task = sc.gauge.as_ref().ok_or("gauge_spiral has no gauge task")?;
    ensure(task.offset == Some(0.1), || "the offset probe must sit at distance 0.1".into())?;
    let r = report(&sc, Command::Gauge);
    let (cert, n) = worst(&r, "gauge transport", |c| c == "certificate");
    ensure(n == 1, || "no certificate check".into())?;
    within("certificate", cert, 1e-5)?;
    let s = r.sections.iter().find(|s| s.title.starts_with("gauge transport")).ok_or("no gauge section")?;
    let offset = s.residual("offset_detected");
    ensure(offset >= 1e-3, || format!("offset gauge residual {offset:.3e} below 1e-3"))?;

    let action = sc.action().map_err(|e| e.to_string())?;
    let x = VectorField::from_action_field(sc.field(&task.from).map_err(|e| e.to_string())?);
    let y = VectorField::from_action_field(sc.field(&task.to).map_err(|e| e.to_string())?);
    let Grid::Points(points) = &task.grid else { return Err("gauge_spiral needs explicit points".into()) };
    let transport = |h: f64| {
        let integ = sc.integrator.with_step(h);
        let phi = flow(&x, points, task.duration, &integ).unwrap();
        let psi = flow(&y, points, task.duration, &integ).unwrap();
        gauge_transport(&phi, &psi, &y, &task.psi, action, None).unwrap()
    };
    let h = sc.integrator.step;
    let (coarse, fine) = (transport(h), transport(h / 2.0));
    let mut diff = 0.0f64;
    for (a, b) in coarse.elements.iter().zip(&fine.elements) {
        for (j, g) in a.iter().enumerate() {
            for (u, v) in g.iter().zip(&b[2 * j]) {
                diff = diff.max(angle_diff(*u, *v).abs());
            }
        }
    }
    within("h vs h/2 gauge difference", diff, 1e-8)?;
    Ok(format!("certificate {cert:.1e}, h vs h/2 {diff:.1e}, offset residual {offset:.3}"))
}

fn lift() -> Outcome {
    let sc = scenario("double_cover");
    let task = sc.lift.as_ref().ok_or("double_cover has no lift task")?;
    ensure(task.duration >= 10.0, || format!("lift integrates only to T = {}", task.duration))?;
    let r = report(&sc, Command::Lift);
    let (proj, n) = worst(&r, "lift of", |c| c == "projection");
    ensure(n == 1, || "no projection check".into())?;
    within("projection", proj, 1e-6)?;
    let (complete, _) = worst(&r, "lift of", |c| c == "lift_completes");
    ensure(complete == 0.0, || "lifted curve did not complete".into())?;

    let corrupt = SmoothMap::from_exprs(2, vec![parse("-0.4*x2").unwrap(), parse("0.4*x1").unwrap()]).unwrap();
    let up = VectorField::from_map("corrupt", task.up.clone(), corrupt);
    let down = VectorField::from_map("down", task.down.clone(), task.down_field.clone());
    let samples = task
        .up
        .sample(&mut seeded_rng(sc.seed), task.samples, sc.radius, &sc.cfg)
        .map_err(|e| e.to_string())?;
    let err = proper_lift_check(&task.map, &up, &down, &task.start, task.duration, &sc.integrator, &samples, 1e-6);
    ensure(err.is_err(), || "non-intertwining lift was accepted".into())?;

    let (mut residual, mut scale) = (0.0f64, 0.0f64);
    for m in samples.iter().chain(std::iter::once(&task.start)) {
        let xn = down.eval(&task.map.eval(m).unwrap()).unwrap();
        let pushed = task.map.jacobian(m).unwrap() * up.eval(m).unwrap();
        residual = residual.max((pushed - &xn).amax());
        scale = scale.max(xn.amax());
    }
    let ratio = residual / scale;
    ensure((ratio - 0.2).abs() <= 1e-9, || format!("corruption residual is {ratio:.6} of max |X_N|, expected 0.2"))?;
    Ok(format!("projection {proj:.1e}, corruption rejected at {ratio:.3} max|X_N|"))
}

fn etale() -> Outcome {
    let sc = scenario("etale_teardrop");
    let r = report(&sc, Command::Etale);
    let (func, n) = worst(&r, "étale field assignment", |c| c.starts_with("functoriality/"));
    ensure(n >= 2, || format!("only {n} composable pairs checked"))?;
    within("functoriality", func, 1e-7)?;
    let (tri, m) = worst(&r, "étale field assignment", |c| c.starts_with("triangle/"));
    ensure(m >= 2, || format!("only {m} transition maps checked"))?;
    within("assignment", tri, 1e-8)?;

    let task = sc.etale.as_ref().ok_or("etale_teardrop has no etale task")?;
    let u = task.system.chart_index("u").ok_or("no chart u")?;
    let mut fields = task.fields.clone();
    let original = fields[u].clone();
    let dim = original.domain_dim;
    fields[u] = SmoothMap::from_fn(dim, dim, move |p| Ok(original.eval(p)? * 2.0));
    let corrupted = EtaleFieldAssignment { fields };
    let bad = check_assignment(&task.system, &corrupted, &mut seeded_rng(sc.seed), task.samples, 1e-8, 1e-7)
        .map_err(|e| e.to_string())?;
    let first = &task.system.maps[0];
    ensure(first.from == u, || "the first transition map should leave chart u".into())?;
    let got = bad.residual(&format!("triangle/{}", first.name));
    let mut rng = seeded_rng(sc.seed);
    let mut expected = 0.0f64;
    for _ in 0..task.samples {
        if let Some(p) = task.system.sample_map_domain(first, &mut rng).unwrap() {
            expected = expected.max(task.fields[u].eval(&p).unwrap().amax());
        }
    }
    ensure(!bad.passed(), || "doubled chart field passed".into())?;
    ensure((got - expected).abs() <= 1e-12 * expected, || format!("corruption residual {got} vs |X_U| {expected}"))?;

    let sc = scenario("etale_circle");
    let r = report(&sc, Command::Etale);
    let (integral, k) = worst(&r, "étale integral", |c| c == "integral_condition");
    ensure(k == 1, || "no integral check".into())?;
    within("étale integral", integral, 1e-6)?;
    let task = sc.etale.as_ref().ok_or("etale_circle has no etale task")?;
    let plan = task.integrate.as_ref().ok_or("etale_circle integrates nothing")?;
    let c = task.system.chart_index(&plan.chart).ok_or("unknown chart")?;
    let line = Manifold::euclidean(1);
    let unit = VectorField::from_map("unit", line.clone(), task.fields[c].clone());
    let double = VectorField::from_map("double", line, SmoothMap::from_exprs(1, vec![parse("2").unwrap()]).unwrap());
    let times = sc.integrator.times(plan.duration).map_err(|e| e.to_string())?;
    let trajs: Vec<_> = plan
        .starts
        .iter()
        .map(|m| integrate_curve(&unit, m, &times, &sc.integrator).unwrap())
        .collect();
    let wrong = check_etale_integral(&task.system.charts[c], &double, &trajs, &times, 1e-6).map_err(|e| e.to_string())?;
    let speed = wrong.residual("integral_condition");
    ensure(!wrong.passed() && (speed - 1.0).abs() <= 1e-6, || format!("double-speed residual {speed}"))?;
    Ok(format!(
        "functoriality {func:.1e} on {n} pairs, assignment {tri:.1e}, x2 corruption {got:.3}, integral {integral:.1e}, double speed {speed:.3}"
    ))
}

fn dictionary() -> Outcome {
    let sc = scenario("dictionary");
    let frozen = [2u64, 1, 1, 0, 1, 1];
    ensure(sc.dictionary.len() == frozen.len(), || format!("{} dictionary checks", sc.dictionary.len()))?;
    let mut counts = Vec::new();
    for (d, want) in sc.dictionary.iter().zip(frozen) {
        let from = &sc.groupoids[&d.from];
        let to = &sc.groupoids[&d.to];
        let pick = |name: &str| {
            if name == "id" {
                FiniteMorphism::identity(from)
            } else {
                sc.morphisms[name].morphism.clone()
            }
        };
        let (f, g) = (pick(&d.f), pick(&d.g));
        let ours = enumerate_two_morphisms(from, to, &f, &g).map_err(|e| e.to_string())?.len() as u64;
        let oracle = count_natural_transformations(from, to, &f, &g);
        ensure(ours == oracle && ours == want, || {
            format!("{} => {} on {}: enumerated {ours}, oracle {oracle}, frozen {want}", d.f, d.g, d.from)
        })?;
        counts.push(format!("{}:{}=>{} {ours}", d.from, d.f, d.g));
    }
    let r = report(&sc, Command::Dictionary);
    ensure(r.passed, || format!("dictionary run failed: {:?}", r.failures()))?;
    Ok(counts.join(", "))
}

fn tangent() -> Outcome {
    let (mut groupoid, mut naturality) = (0.0f64, 0.0f64);
    for name in ACTION_SCENARIOS {
        let r = report(&scenario(name), Command::Check);
        let (g, n) = worst(&r, "tangent groupoid", |_| true);
        let (p, m) = worst(&r, "tangent projection", |_| true);
        ensure(n > 0 && m > 0, || format!("{name}: tangent sections missing"))?;
        within(&format!("{name} tangent groupoid"), g, 1e-6)?;
        within(&format!("{name} projection naturality"), p, 1e-8)?;
        groupoid = groupoid.max(g);
        naturality = naturality.max(p);
    }
    Ok(format!(
        "{} scenarios, tangent groupoid {groupoid:.1e}, naturality {naturality:.1e}",
        ACTION_SCENARIOS.len()
    ))
}

fn parser() -> Outcome {
    ensure(PARSER_CORPUS.len() >= 30, || "corpus too small".into())?;
    let b = Bindings::point(&CORPUS_POINT);
    let mut worst_rel = 0.0f64;
    for src in PARSER_CORPUS {
        let ours = parse(src).map_err(|e| format!("{src}: {e}"))?.eval(&b).map_err(|e| e.to_string())?;
        let oracle = shunting_yard(src, &CORPUS_POINT);
        let rel = (ours - oracle).abs() / oracle.abs().max(1.0);
        within(src, rel, 1e-12)?;
        worst_rel = worst_rel.max(rel);
    }
    let malformed = ["1 +* 2", "sin(1", "x1 x2", "(1+2", "", "2*foo(1)", "3 + y1", "max(1,)", "1 2", "^3"];
    for src in malformed {
        let err = parse(src).err().ok_or_else(|| format!("`{src}` parsed"))?;
        ensure(err.offset <= src.len(), || format!("`{src}`: offset {} out of range", err.offset))?;
        ensure(err.to_string().contains(&format!("byte {}", err.offset)), || format!("`{src}`: {err}"))?;
    }
    Ok(format!(
        "{} expressions, worst relative difference {worst_rel:.1e}, {} malformed inputs located",
        PARSER_CORPUS.len(),
        malformed.len()
    ))
}

fn determinism() -> Outcome {
    let mut names: Vec<String> = std::fs::read_dir(scenario_path("x").parent().unwrap())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".scn").map(String::from))
        .filter(|n| n != "bad_cayley")
        .collect();
    names.sort();
    let mut files = 0;
    for name in &names {
        let sc = scenario(name);
        let a = harness::run(&sc, Command::Run).map_err(|e| format!("{name}: {e}"))?;
        let b = harness::run(&sc, Command::Run).map_err(|e| format!("{name}: {e}"))?;
        ensure(a.report.deterministic_json() == b.report.deterministic_json(), || {
            format!("{name}: reports differ")
        })?;
        ensure(a.files == b.files, || format!("{name}: CSV artifacts differ"))?;
        files += a.files.len();
    }
    Ok(format!("{} scenarios, {files} artifacts byte-identical across two runs", names.len()))
}

fn main() {
    let started = Instant::now();
    let averages = catch_unwind(|| {
        AVERAGE_CORPUS
            .iter()
            .map(|(name, _, _)| (*name, report(&scenario(name), Command::Average)))
            .collect::<BTreeMap<_, _>>()
    });
    let averages = averages.map_err(|_| "averaging corpus did not run".to_string());
    let with_averages = |f: fn(&BTreeMap<&str, RunReport>) -> Outcome| -> Outcome {
        averages.as_ref().map_err(Clone::clone).and_then(f)
    };

    let criteria: Vec<Criterion<'_>> = vec![
        ("averaging produces invariant fields with certificates", Box::new(|| with_averages(averaging))),
        ("averaging is idempotent and linear", Box::new(|| with_averages(idempotence))),
        ("flows match closed forms with fourth-order convergence", Box::new(flow_correctness)),
        ("compact support completes, cubic blow-up is caught", Box::new(completeness)),
        ("gauge transport certifies the spiral flow", Box::new(gauge)),
        ("proper lift along the double cover", Box::new(lift)),
        ("étale pullbacks, assignments and integrals", Box::new(etale)),
        ("dictionary counts match the exhaustive oracle", Box::new(dictionary)),
        ("tangent groupoid and projection naturality", Box::new(tangent)),
        ("parser agrees with the shunting-yard oracle", Box::new(parser)),
        ("runs are byte-identical", Box::new(determinism)),
    ];

    let mut failed = 0;
    for (i, (title, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {title}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {title}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
