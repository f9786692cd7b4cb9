//! Scenario files, the commands run on them, and the JSON/CSV reports they emit.
//!
//! A scenario is a line-oriented text file of `[section]` blocks holding
//! `key = value` entries; mathematical values use the [`crate::expr`] grammar
//! with ambient coordinates `x1..xn` and group coordinates `g1..gc`.
//! [`load`] validates everything it can before any command runs: Cayley
//! tables, sampled action laws, name references and dimensions.

mod parse;
mod run;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::etale::{Chart, ChartSystem, Inequality};
use crate::expr::Expr;
use crate::fields::{ActionField, FieldEquivalence};
use crate::flows::{Integrator, Scheme};
use crate::geometry::{Config, Manifold, SmoothMap};
use crate::groupoid::{FiniteArrow, FiniteGroupoid, FiniteMorphism};
use crate::groups::{ActionKind, CompactGroup, FiniteGroup, HaarConfig, SmoothAction};
use crate::seeded_rng;

use parse::{Section, Source, View};
pub use run::{run, write_outputs, RunOutput, RunReport};

/// Commands accepted by [`run`] and the `gflow` binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Check,
    Average,
    Flow,
    Support,
    Gauge,
    Etale,
    Dictionary,
    Lift,
    /// Every task listed under `[tasks]`.
    Run,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Check,
        Command::Average,
        Command::Flow,
        Command::Support,
        Command::Gauge,
        Command::Etale,
        Command::Dictionary,
        Command::Lift,
        Command::Run,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Average => "average",
            Command::Flow => "flow",
            Command::Support => "support",
            Command::Gauge => "gauge",
            Command::Etale => "etale",
            Command::Dictionary => "dictionary",
            Command::Lift => "lift",
            Command::Run => "run",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Command::ALL.iter().map(|c| c.as_str()).collect();
                Error::Harness(format!("unknown command `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Residual thresholds for each kind of check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Groupoid axioms and field laws on `M ⋊ G`.
    pub check: f64,
    /// Groupoid axioms on the tangent groupoid.
    pub tangent: f64,
    /// Naturality of the tangent projection.
    pub naturality: f64,
    /// Invariance of averaged fields and their certificates.
    pub average: f64,
    /// Fields expected to average to zero.
    pub zero: f64,
    /// Averaging an averaged field, and linearity of averaging.
    pub idempotence: f64,
    pub flow: f64,
    pub gauge: f64,
    pub support: f64,
    pub etale: f64,
    pub functoriality: f64,
    /// Central-difference integral condition on chart flows.
    pub integral: f64,
    pub lift: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            check: 1e-7,
            tangent: 1e-6,
            naturality: 1e-8,
            average: 1e-8,
            zero: 1e-12,
            idempotence: 1e-10,
            flow: 1e-6,
            gauge: 1e-5,
            support: 1e-8,
            etale: 1e-8,
            functoriality: 1e-7,
            integral: 1e-6,
            lift: 1e-6,
        }
    }
}

impl Tolerances {
    fn set(&mut self, key: &str, v: f64) -> bool {
        let slot = match key {
            "check" => &mut self.check,
            "tangent" => &mut self.tangent,
            "naturality" => &mut self.naturality,
            "average" => &mut self.average,
            "zero" => &mut self.zero,
            "idempotence" => &mut self.idempotence,
            "flow" => &mut self.flow,
            "gauge" => &mut self.gauge,
            "support" => &mut self.support,
            "etale" => &mut self.etale,
            "functoriality" => &mut self.functoriality,
            "integral" => &mut self.integral,
            "lift" => &mut self.lift,
            _ => return false,
        };
        *slot = v;
        true
    }

    const KEYS: [&'static str; 13] = [
        "check",
        "tangent",
        "naturality",
        "average",
        "zero",
        "idempotence",
        "flow",
        "gauge",
        "support",
        "etale",
        "functoriality",
        "integral",
        "lift",
    ];

    fn uniform(v: f64) -> Self {
        let mut t = Tolerances::default();
        for k in Tolerances::KEYS {
            t.set(k, v);
        }
        t
    }
}

/// Command-line overrides applied after loading.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Replaces every tolerance.
    pub tol: Option<f64>,
    pub step: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CheckTask {
    pub fields: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AverageTask {
    pub fields: Vec<String>,
    /// Fields whose average must vanish.
    pub zero: Vec<String>,
}

/// Starting points: explicit, or sampled on the manifold.
#[derive(Debug, Clone)]
pub enum Grid {
    Points(Vec<DVector<f64>>),
    Sampled(usize),
}

#[derive(Debug, Clone)]
pub struct FlowTask {
    pub field: String,
    /// Flow the Haar average of the field rather than the field itself.
    pub averaged: bool,
    pub duration: f64,
    pub grid: Grid,
    pub stride: usize,
    pub group_samples: usize,
    pub expect_complete: bool,
}

#[derive(Debug, Clone)]
pub struct SupportTask {
    pub field: String,
    pub averaged: bool,
    pub grid: Grid,
    pub orbit: usize,
}

#[derive(Clone)]
pub struct GaugeTask {
    pub from: String,
    pub to: String,
    pub psi: FieldEquivalence,
    pub psi_exprs: Vec<Expr>,
    pub duration: f64,
    pub grid: Grid,
    pub stride: usize,
    /// Distance from the identity of a deliberately wrong initial gauge.
    pub offset: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EtaleIntegrate {
    pub chart: String,
    pub starts: Vec<DVector<f64>>,
    pub duration: f64,
}

#[derive(Debug, Clone)]
pub struct EtaleTask {
    pub system: ChartSystem,
    /// One field per chart, in chart order.
    pub fields: Vec<SmoothMap>,
    pub samples: usize,
    pub integrate: Option<EtaleIntegrate>,
}

#[derive(Debug, Clone)]
pub struct NamedMorphism {
    pub from: String,
    pub to: String,
    pub morphism: FiniteMorphism,
}

#[derive(Debug, Clone)]
pub struct DictionaryCheck {
    pub from: String,
    pub to: String,
    pub f: String,
    pub g: String,
    /// Expected number of 2-morphisms `f ⇒ g`.
    pub expect: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct LiftTask {
    pub up: Manifold,
    pub down: Manifold,
    pub map: SmoothMap,
    pub up_field: SmoothMap,
    pub down_field: SmoothMap,
    pub start: DVector<f64>,
    pub duration: f64,
    pub samples: usize,
}

/// A fully validated scenario.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    /// Where the text came from, used in error locations.
    pub label: String,
    /// The scenario text, echoed into every report.
    pub source: String,
    pub seed: u64,
    pub samples: usize,
    pub radius: f64,
    pub cfg: Config,
    pub haar: HaarConfig,
    pub integrator: Integrator,
    pub tol: Tolerances,
    pub action: Option<Arc<SmoothAction>>,
    pub fields: Vec<ActionField>,
    pub tasks: Vec<Command>,
    pub check: CheckTask,
    pub average: AverageTask,
    pub flow: Option<FlowTask>,
    pub support: Option<SupportTask>,
    pub gauge: Option<GaugeTask>,
    pub etale: Option<EtaleTask>,
    pub groupoids: BTreeMap<String, Arc<FiniteGroupoid>>,
    pub morphisms: BTreeMap<String, NamedMorphism>,
    pub dictionary: Vec<DictionaryCheck>,
    pub lift: Option<LiftTask>,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("seed", &self.seed)
            .field("fields", &self.fields.iter().map(|x| &x.name).collect::<Vec<_>>())
            .field("tasks", &self.tasks)
            .finish_non_exhaustive()
    }
}

impl Scenario {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.tol {
            self.tol = Tolerances::uniform(t);
        }
        if let Some(h) = o.step {
            self.integrator.step = h;
        }
    }

    pub fn field(&self, name: &str) -> Result<&ActionField> {
        self.fields
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::Harness(format!("no field named `{name}`")))
    }

    pub fn action(&self) -> Result<&Arc<SmoothAction>> {
        self.action
            .as_ref()
            .ok_or_else(|| Error::Harness(format!("scenario {} declares no group action", self.name)))
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    load_str(&text, &path.display().to_string())
}

const SINGLE: &[&str] = &["scenario", "manifold", "group", "action", "integrator", "tolerances", "haar",
    "geometry", "tasks", "check", "average", "flow", "support", "gauge", "etale", "dictionary", "lift"];
const NAMED: &[&str] = &["field", "chart", "map", "finite_groupoid", "morphism"];

/// Parses and validates scenario text; `label` names it in error messages.
pub fn load_str(text: &str, label: &str) -> Result<Scenario> {
    let src = Source { path: label.to_string() };
    let sections = src.sections(text)?;
    let mut single: BTreeMap<&str, &Section> = BTreeMap::new();
    for s in &sections {
        let kind = s.kind.as_str();
        if SINGLE.contains(&kind) {
            if s.name.is_some() {
                return Err(src.err(s.line, format!("[{kind}] takes no name")));
            }
            if single.insert(kind, s).is_some() {
                return Err(src.err(s.line, format!("[{kind}] appears twice")));
            }
        } else if NAMED.contains(&kind) {
            if s.name.is_none() {
                return Err(src.err(s.line, format!("[{kind}] needs a name, as in [{kind} NAME]")));
            }
        } else {
            return Err(src.err(s.line, format!("unknown section [{kind}]")));
        }
    }
    let named = |kind: &'static str| sections.iter().filter(move |s| s.kind == kind);
    let view = |kind: &str| single.get(kind).map(|s| View::new(&src, s));

    let mut sc = Scenario {
        name: label.to_string(),
        label: label.to_string(),
        source: text.to_string(),
        seed: 0,
        samples: 64,
        radius: 2.0,
        cfg: Config::default(),
        haar: HaarConfig::default(),
        integrator: Integrator::default(),
        tol: Tolerances::default(),
        action: None,
        fields: Vec::new(),
        tasks: Vec::new(),
        check: CheckTask { fields: Vec::new() },
        average: AverageTask {
            fields: Vec::new(),
            zero: Vec::new(),
        },
        flow: None,
        support: None,
        gauge: None,
        etale: None,
        groupoids: BTreeMap::new(),
        morphisms: BTreeMap::new(),
        dictionary: Vec::new(),
        lift: None,
    };

    if let Some(v) = view("scenario") {
        v.allow(&["name", "seed", "samples", "radius"], &[])?;
        sc.name = v.str_or("name", label).to_string();
        if let Some(e) = v.get("seed") {
            sc.seed = e.value.parse().map_err(|_| v.err(e.line, format!("seed `{}` is not a u64", e.value)))?;
        }
        sc.samples = v.usize_or("samples", sc.samples)?;
        sc.radius = v.f64_or("radius", sc.radius)?;
    }
    if let Some(v) = view("geometry") {
        v.allow(&["on_manifold_tol", "tangency_tol", "rank_tol", "fd_step", "retract_max_iter"], &[])?;
        sc.cfg.on_manifold_tol = v.f64_or("on_manifold_tol", sc.cfg.on_manifold_tol)?;
        sc.cfg.tangency_tol = v.f64_or("tangency_tol", sc.cfg.tangency_tol)?;
        sc.cfg.rank_tol = v.f64_or("rank_tol", sc.cfg.rank_tol)?;
        sc.cfg.fd_step = v.f64_or("fd_step", sc.cfg.fd_step)?;
        sc.cfg.retract_max_iter = v.usize_or("retract_max_iter", sc.cfg.retract_max_iter)?;
    }
    if let Some(v) = view("haar") {
        v.allow(&["torus_nodes", "so3_beta", "so3_alpha", "so3_gamma"], &[])?;
        sc.haar.torus_nodes = v.usize_or("torus_nodes", sc.haar.torus_nodes)?;
        sc.haar.so3_beta = v.usize_or("so3_beta", sc.haar.so3_beta)?;
        sc.haar.so3_alpha = v.usize_or("so3_alpha", sc.haar.so3_alpha)?;
        sc.haar.so3_gamma = v.usize_or("so3_gamma", sc.haar.so3_gamma)?;
        sc.haar.validate().map_err(|e| src.at(v.section.line, e))?;
    }
    if let Some(v) = view("integrator") {
        load_integrator(&v, &mut sc.integrator)?;
    }
    if let Some(v) = view("tolerances") {
        let keys: Vec<&str> = Tolerances::KEYS.to_vec();
        v.allow(&keys, &[])?;
        for e in &v.section.entries {
            let x = parse::number(&src, e.line, &e.value)?;
            sc.tol.set(&e.key, x);
        }
    }

    // Group action.
    let manifold = view("manifold").map(|v| load_manifold(&v)).transpose()?;
    let group = view("group").map(|v| load_group(&v)).transpose()?;
    match (manifold, group, view("action")) {
        (Some(m), Some(g), Some(v)) => {
            let action = load_action(&v, g, m)?.with_config(sc.cfg);
            let mut rng = seeded_rng(sc.seed);
            action
                .validate(&mut rng, sc.samples.min(32), sc.radius)
                .map_err(|e| src.at(v.section.line, e))?;
            sc.action = Some(Arc::new(action));
        }
        (None, None, None) => {}
        _ => {
            return Err(src.err(1, "[manifold], [group] and [action] must be given together"));
        }
    }

    for s in named("field") {
        let v = View::new(&src, s);
        v.allow(&["x", "y"], &[])?;
        let name = s.name.clone().unwrap_or_default();
        if sc.fields.iter().any(|f| f.name == name) {
            return Err(src.err(s.line, format!("field `{name}` defined twice")));
        }
        let action = sc
            .action
            .clone()
            .ok_or_else(|| src.err(s.line, "fields need a group action"))?;
        let x = v.exprs("x")?.ok_or_else(|| src.err(s.line, format!("field `{name}` is missing `x`")))?;
        let f = ActionField::from_exprs(name, action, x, v.exprs("y")?).map_err(|e| src.at(s.line, e))?;
        sc.fields.push(f);
    }
    let known = |sc: &Scenario, v: &View, names: &[String]| -> Result<()> {
        for n in names {
            if sc.fields.iter().all(|f| &f.name != n) {
                return Err(v.err(v.section.line, format!("{} refers to unknown field `{n}`", v.title())));
            }
        }
        Ok(())
    };

    if let Some(v) = view("tasks") {
        v.allow(&["run"], &[])?;
        for w in v.words("run") {
            let c: Command = w.parse().map_err(|e: Error| src.at(v.section.line, e))?;
            if c == Command::Run {
                return Err(v.err(v.section.line, "`run` cannot list itself"));
            }
            sc.tasks.push(c);
        }
    }
    sc.check.fields = sc.fields.iter().map(|f| f.name.clone()).collect();
    if let Some(v) = view("check") {
        v.allow(&["fields"], &[])?;
        sc.check.fields = v.words("fields");
        known(&sc, &v, &sc.check.fields)?;
    }
    if let Some(v) = view("average") {
        v.allow(&["fields", "zero"], &[])?;
        sc.average.fields = v.words("fields");
        sc.average.zero = v.words("zero");
        known(&sc, &v, &sc.average.fields)?;
        known(&sc, &v, &sc.average.zero)?;
    }
    if let Some(v) = view("flow") {
        v.allow(&["field", "averaged", "duration", "points", "samples", "stride", "group_samples", "expect_complete"], &[])?;
        let field = v.str("field")?.to_string();
        known(&sc, &v, std::slice::from_ref(&field))?;
        sc.flow = Some(FlowTask {
            field,
            averaged: v.bool_or("averaged", false)?,
            duration: v.f64("duration")?,
            grid: load_grid(&v, sc.action.as_deref())?,
            stride: v.usize_or("stride", 1)?.max(1),
            group_samples: v.usize_or("group_samples", 3)?,
            expect_complete: v.bool_or("expect_complete", false)?,
        });
    }
    if let Some(v) = view("support") {
        v.allow(&["field", "averaged", "points", "samples", "orbit"], &[])?;
        let field = v.str("field")?.to_string();
        known(&sc, &v, std::slice::from_ref(&field))?;
        sc.support = Some(SupportTask {
            field,
            averaged: v.bool_or("averaged", false)?,
            grid: load_grid(&v, sc.action.as_deref())?,
            orbit: v.usize_or("orbit", 8)?,
        });
    }
    if let Some(v) = view("gauge") {
        v.allow(&["from", "to", "psi", "duration", "points", "samples", "stride", "offset"], &[])?;
        let (from, to) = (v.str("from")?.to_string(), v.str("to")?.to_string());
        known(&sc, &v, &[from.clone(), to.clone()])?;
        let action = sc.action()?.clone();
        let psi_exprs = v.exprs("psi")?.ok_or_else(|| v.err(v.section.line, "[gauge] is missing `psi`"))?;
        let line = v.require("psi")?.line;
        if psi_exprs.len() != action.group.lie_dim() {
            return Err(v.err(line, format!("psi has {} components for a {}-dimensional Lie algebra", psi_exprs.len(), action.group.lie_dim())));
        }
        let psi = FieldEquivalence::from_exprs(action.ambient_dim(), psi_exprs.clone()).map_err(|e| src.at(line, e))?;
        sc.gauge = Some(GaugeTask {
            from,
            to,
            psi,
            psi_exprs,
            duration: v.f64("duration")?,
            grid: load_grid(&v, Some(&action))?,
            stride: v.usize_or("stride", 1)?.max(1),
            offset: v.get("offset").map(|e| parse::number(&src, e.line, &e.value)).transpose()?,
        });
    }

    load_etale(&src, &sections, view("etale"), &mut sc)?;
    load_groupoids(&src, named("finite_groupoid"), &mut sc)?;
    load_morphisms(&src, named("morphism"), &mut sc)?;
    if let Some(v) = view("dictionary") {
        v.allow(&[], &["check"])?;
        for e in v.all("check") {
            let w: Vec<&str> = e.value.split_whitespace().collect();
            if !(w.len() == 4 || w.len() == 5) {
                return Err(v.err(e.line, "expected `check = FROM TO F G [EXPECTED]`"));
            }
            let c = DictionaryCheck {
                from: w[0].into(),
                to: w[1].into(),
                f: w[2].into(),
                g: w[3].into(),
                expect: w
                    .get(4)
                    .map(|x| x.parse().map_err(|_| v.err(e.line, format!("`{x}` is not a count"))))
                    .transpose()?,
            };
            for gname in [&c.from, &c.to] {
                if !sc.groupoids.contains_key(gname) {
                    return Err(v.err(e.line, format!("unknown finite groupoid `{gname}`")));
                }
            }
            for (mname, role) in [(&c.f, "f"), (&c.g, "g")] {
                let ok = mname == "id" && c.from == c.to
                    || sc.morphisms.get(mname).is_some_and(|m| m.from == c.from && m.to == c.to);
                if !ok {
                    return Err(v.err(e.line, format!("`{mname}` ({role}) is not a morphism {} -> {}", c.from, c.to)));
                }
            }
            sc.dictionary.push(c);
        }
    }
    if let Some(v) = view("lift") {
        sc.lift = Some(load_lift(&v)?);
    }

    // A command must have something to work on.
    for &c in &sc.tasks {
        let missing = match c {
            Command::Check | Command::Average => sc.action.is_none(),
            Command::Flow => sc.flow.is_none(),
            Command::Support => sc.support.is_none(),
            Command::Gauge => sc.gauge.is_none(),
            Command::Etale => sc.etale.is_none(),
            Command::Dictionary => sc.dictionary.is_empty(),
            Command::Lift => sc.lift.is_none(),
            Command::Run => false,
        };
        if missing {
            let line = single.get("tasks").map_or(1, |s| s.line);
            return Err(src.err(line, format!("task `{}` has no matching section", c.as_str())));
        }
    }
    Ok(sc)
}

fn load_integrator(v: &View, integ: &mut Integrator) -> Result<()> {
    v.allow(&["scheme", "step", "blowup", "escape_box", "retract_stages", "max_halvings", "max_steps"], &[])?;
    if let Some(e) = v.get("scheme") {
        integ.scheme = match e.value.as_str() {
            "rk4" => Scheme::Rk4,
            "rk4_halving" => Scheme::Rk4Halving,
            s => return Err(v.err(e.line, format!("unknown scheme `{s}` (rk4, rk4_halving)"))),
        };
    }
    integ.step = v.f64_or("step", integ.step)?;
    integ.blowup = v.f64_or("blowup", integ.blowup)?;
    if v.get("escape_box").is_some() {
        integ.escape_box = Some(v.f64("escape_box")?);
    }
    integ.retract_stages = v.bool_or("retract_stages", integ.retract_stages)?;
    integ.max_halvings = v.usize_or("max_halvings", integ.max_halvings as usize)? as u32;
    integ.max_steps = v.usize_or("max_steps", integ.max_steps)?;
    integ.validate().map_err(|e| v.src.at(v.section.line, e))
}

/// `euclidean N`, `sphere AMBIENT RADIUS` or `torus K`, as words.
fn manifold_words(v: &View, line: usize, words: &[&str]) -> Result<Manifold> {
    let int = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| v.err(line, format!("`{s}` is not a dimension")))
    };
    match words {
        ["euclidean", n] => Ok(Manifold::euclidean(int(n)?)),
        ["sphere", n, r] => Ok(Manifold::sphere(int(n)?, parse::number(v.src, line, r)?)),
        ["torus", k] => Ok(Manifold::torus(int(k)?)),
        _ => Err(v.err(line, format!("unknown manifold `{}` (euclidean N, sphere N R, torus K)", words.join(" ")))),
    }
}

fn load_manifold(v: &View) -> Result<Manifold> {
    v.allow(&["kind", "dim", "ambient", "radius", "k"], &["constraint"])?;
    let line = v.section.line;
    let kind = v.str("kind")?;
    let m = match kind {
        "euclidean" => Manifold::euclidean(v.usize("dim")?),
        "sphere" => Manifold::sphere(v.usize("ambient")?, v.f64_or("radius", 1.0)?),
        "torus" => Manifold::torus(v.usize("k")?),
        "level_set" => {
            let mut cs = Vec::new();
            for e in v.all("constraint") {
                cs.extend(parse::exprs(v.src, e)?);
            }
            Manifold::level_set(v.usize("ambient")?, cs).map_err(|e| v.src.at(line, e))?
        }
        other => {
            return Err(v.err(
                v.require("kind")?.line,
                format!("unknown manifold kind `{other}` (euclidean, sphere, torus, level_set)"),
            ))
        }
    };
    if m.ambient_dim() == 0 {
        return Err(v.err(line, "manifold has ambient dimension 0"));
    }
    Ok(m)
}

fn load_group(v: &View) -> Result<CompactGroup> {
    v.allow(&["name", "elements"], &["row"])?;
    let name = v.str("name")?;
    if v.get("elements").is_none() {
        let line = v.require("name")?.line;
        return CompactGroup::builtin(name).map_err(|e| v.src.at(line, e));
    }
    let names = v.words("elements");
    let mut table = Vec::new();
    for e in v.all("row") {
        let row = e
            .value
            .split_whitespace()
            .map(|w| {
                names
                    .iter()
                    .position(|n| n == w)
                    .ok_or_else(|| v.err(e.line, format!("unknown element `{w}` in Cayley table")))
            })
            .collect::<Result<Vec<_>>>()?;
        table.push(row);
    }
    let g = FiniteGroup::from_table(name, names, table).map_err(|e| v.src.at(v.section.line, e))?;
    Ok(CompactGroup::finite(g))
}

fn load_action(v: &View, group: CompactGroup, manifold: Manifold) -> Result<SmoothAction> {
    v.allow(&["kind", "components"], &["pair", "rotate", "element"])?;
    let line = v.section.line;
    let n = manifold.ambient_dim();
    let index = |e: &parse::Entry, s: &str, bound: usize, what: &str| -> Result<usize> {
        match s.parse::<usize>() {
            Ok(i) if i >= 1 && i <= bound => Ok(i - 1),
            _ => Err(v.err(e.line, format!("{what} `{s}` must be in 1..={bound}"))),
        }
    };
    let per_element = |parse_one: &dyn Fn(&parse::Entry) -> Result<()>| -> Result<()> {
        for e in v.all("element") {
            parse_one(e)?;
        }
        Ok(())
    };
    let element_slot = |e: &parse::Entry| -> Result<usize> {
        let CompactGroup::Finite(g) = &group else {
            return Err(v.err(e.line, "`element` entries need a finite group"));
        };
        let args = e.key_args();
        let [name] = args.as_slice() else {
            return Err(v.err(e.line, "expected `element NAME = ...`"));
        };
        g.element_names
            .iter()
            .position(|x| x == name)
            .ok_or_else(|| v.err(e.line, format!("{} has no element `{name}`", g.name)))
    };
    let order = match &group {
        CompactGroup::Finite(g) => g.order(),
        _ => 0,
    };
    let kind = v.str("kind")?;
    let built = match kind {
        "trivial" => SmoothAction::new(group, manifold, ActionKind::Trivial),
        "sign" => {
            if group.name() != "C2" {
                return Err(v.err(line, format!("the sign action needs C2, not {group}")));
            }
            SmoothAction::sign(manifold)
        }
        "permutation" => SmoothAction::permutation(group, manifold),
        "cyclic_rotation" => {
            let mut pairs = Vec::new();
            for e in v.all("pair") {
                let w: Vec<&str> = e.value.split_whitespace().collect();
                let [a, b] = w.as_slice() else {
                    return Err(v.err(e.line, "expected `pair = A B`"));
                };
                pairs.push((index(e, a, n, "coordinate")?, index(e, b, n, "coordinate")?));
            }
            SmoothAction::cyclic_rotation(group, manifold, &pairs)
        }
        "rotation" => {
            let CompactGroup::Torus(k) = group else {
                return Err(v.err(line, format!("rotation actions need a torus group, not {group}")));
            };
            let mut triples = Vec::new();
            for e in v.all("rotate") {
                let w: Vec<&str> = e.value.split_whitespace().collect();
                let [angle, a, b] = w.as_slice() else {
                    return Err(v.err(e.line, "expected `rotate = ANGLE A B`"));
                };
                triples.push((index(e, angle, k, "angle")?, index(e, a, n, "coordinate")?, index(e, b, n, "coordinate")?));
            }
            SmoothAction::torus_rotation(k, manifold, triples)
        }
        "so3" => SmoothAction::so3_linear(manifold),
        "matrix" => {
            let mut ms: Vec<Option<DMatrix<f64>>> = vec![None; order];
            let cell = std::cell::RefCell::new(&mut ms);
            per_element(&|e| {
                let slot = element_slot(e)?;
                let rows = parse::points(v.src, e.line, &e.value)?;
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(v.err(e.line, format!("expected a {n}x{n} matrix, rows separated by `;`")));
                }
                cell.borrow_mut()[slot] = Some(DMatrix::from_fn(n, n, |i, j| rows[i][j]));
                Ok(())
            })?;
            let ms = collect_elements(v, ms)?;
            SmoothAction::new(group, manifold, ActionKind::FiniteMatrix(ms))
        }
        "expr" if order > 0 => {
            let mut es: Vec<Option<Vec<Expr>>> = vec![None; order];
            let cell = std::cell::RefCell::new(&mut es);
            per_element(&|e| {
                let slot = element_slot(e)?;
                cell.borrow_mut()[slot] = Some(parse::exprs(v.src, e)?);
                Ok(())
            })?;
            let es = collect_elements(v, es)?;
            SmoothAction::new(group, manifold, ActionKind::FiniteExpr(es))
        }
        "expr" => {
            let comps = v.exprs("components")?.ok_or_else(|| v.err(line, "Lie group expr actions need `components`"))?;
            SmoothAction::new(group, manifold, ActionKind::LieExpr(comps))
        }
        other => {
            return Err(v.err(
                v.require("kind")?.line,
                format!("unknown action kind `{other}` (trivial, sign, permutation, cyclic_rotation, rotation, so3, matrix, expr)"),
            ))
        }
    };
    built.map_err(|e| v.src.at(line, e))
}

fn collect_elements<T>(v: &View, slots: Vec<Option<T>>) -> Result<Vec<T>> {
    let missing = slots.iter().filter(|s| s.is_none()).count();
    if missing > 0 {
        return Err(v.err(v.section.line, format!("{missing} group elements have no `element` entry")));
    }
    Ok(slots.into_iter().flatten().collect())
}

fn load_grid(v: &View, action: Option<&SmoothAction>) -> Result<Grid> {
    if let Some(points) = v.points("points")? {
        let line = v.require("points")?.line;
        if let Some(a) = action {
            for p in &points {
                a.manifold.validate_point(p, &a.cfg).map_err(|e| v.src.at(line, e))?;
            }
        }
        return Ok(Grid::Points(points));
    }
    Ok(Grid::Sampled(v.usize_or("samples", 16)?))
}

fn domain(v: &View) -> Result<Vec<Inequality>> {
    v.all("domain")
        .map(|e| Inequality::parse(&e.value).map_err(|err| v.src.at(e.line, err)))
        .collect()
}

fn load_etale(src: &Source, sections: &[Section], etale: Option<View>, sc: &mut Scenario) -> Result<()> {
    let mut system = ChartSystem::default();
    let mut fields = Vec::new();
    for s in sections.iter().filter(|s| s.kind == "chart") {
        let v = View::new(src, s);
        v.allow(&["dim", "radius", "field"], &["domain"])?;
        let dim = v.usize("dim")?;
        let chart = Chart::new(s.name.clone().unwrap_or_default(), dim, domain(&v)?, v.f64_or("radius", 4.0)?);
        system.add_chart(chart).map_err(|e| src.at(s.line, e))?;
        let exprs = v.exprs("field")?.ok_or_else(|| v.err(s.line, format!("{} is missing `field`", v.title())))?;
        fields.push(SmoothMap::from_exprs(dim, exprs).map_err(|e| src.at(v.require("field").map_or(s.line, |e| e.line), e))?);
    }
    for s in sections.iter().filter(|s| s.kind == "map") {
        let v = View::new(src, s);
        v.allow(&["from", "to", "components"], &["domain"])?;
        let (from, to) = (v.str("from")?, v.str("to")?);
        let dim = system
            .chart_index(from)
            .map(|i| system.charts[i].dim)
            .ok_or_else(|| v.err(v.require("from").map_or(s.line, |e| e.line), format!("unknown chart `{from}`")))?;
        let comps = v.exprs("components")?.ok_or_else(|| v.err(s.line, format!("{} is missing `components`", v.title())))?;
        let map = SmoothMap::from_exprs(dim, comps).map_err(|e| src.at(s.line, e))?;
        let dom = domain(&v)?;
        system
            .add_map(s.name.clone().unwrap_or_default(), from, to, map, dom)
            .map_err(|e| src.at(s.line, e))?;
    }
    let Some(v) = etale else {
        if !system.charts.is_empty() {
            sc.etale = Some(EtaleTask {
                system,
                fields,
                samples: sc.samples,
                integrate: None,
            });
        }
        return Ok(());
    };
    v.allow(&["samples", "integrate", "start", "duration"], &[])?;
    if system.charts.is_empty() {
        return Err(v.err(v.section.line, "[etale] needs at least one [chart NAME]"));
    }
    let integrate = match v.get("integrate") {
        None => None,
        Some(e) => {
            if system.chart_index(&e.value).is_none() {
                return Err(v.err(e.line, format!("unknown chart `{}`", e.value)));
            }
            let starts = v.points("start")?.ok_or_else(|| v.err(e.line, "`integrate` needs `start` points"))?;
            Some(EtaleIntegrate {
                chart: e.value.clone(),
                starts,
                duration: v.f64("duration")?,
            })
        }
    };
    sc.etale = Some(EtaleTask {
        system,
        fields,
        samples: v.usize_or("samples", sc.samples)?,
        integrate,
    });
    Ok(())
}

fn load_groupoids<'a>(src: &Source, sections: impl Iterator<Item = &'a Section>, sc: &mut Scenario) -> Result<()> {
    for s in sections {
        let v = View::new(src, s);
        v.allow(&["kind", "objects"], &["arrow", "identity", "compose"])?;
        let name = s.name.clone().unwrap_or_default();
        let kind_line = v.get("kind").map_or(s.line, |e| e.line);
        let words = v.words("kind");
        let lookup = |n: &str| -> Result<Arc<FiniteGroupoid>> {
            sc.groupoids
                .get(n)
                .cloned()
                .ok_or_else(|| v.err(kind_line, format!("unknown finite groupoid `{n}` (define it earlier)")))
        };
        let mut g = match words.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["pair", n] => FiniteGroupoid::pair(n.parse().map_err(|_| v.err(kind_line, format!("`{n}` is not a count")))?),
            ["delooping", gname] => {
                let group = CompactGroup::builtin(gname).map_err(|e| src.at(kind_line, e))?;
                let CompactGroup::Finite(fg) = group else {
                    return Err(v.err(kind_line, format!("{gname} is not a finite group")));
                };
                FiniteGroupoid::delooping(&fg)
            }
            ["union", a, b] => FiniteGroupoid::disjoint_union(lookup(a)?.as_ref(), lookup(b)?.as_ref()),
            [] | ["explicit"] => explicit_groupoid(&v, &name)?,
            _ => {
                return Err(v.err(kind_line, "expected `kind = pair N`, `delooping GROUP`, `union A B` or `explicit`"));
            }
        };
        g.name = name.clone();
        if sc.groupoids.insert(name.clone(), Arc::new(g)).is_some() {
            return Err(v.err(s.line, format!("finite groupoid `{name}` defined twice")));
        }
    }
    Ok(())
}

fn explicit_groupoid(v: &View, name: &str) -> Result<FiniteGroupoid> {
    let objects = v.words("objects");
    if objects.is_empty() {
        return Err(v.err(v.section.line, "explicit groupoids need `objects`"));
    }
    let obj = |line: usize, s: &str| -> Result<usize> {
        objects
            .iter()
            .position(|o| o == s)
            .ok_or_else(|| v.err(line, format!("unknown object `{s}`")))
    };
    let mut arrows = Vec::new();
    for e in v.all("arrow") {
        let args = e.key_args();
        let w: Vec<&str> = e.value.split_whitespace().collect();
        let ([a], [s, t]) = (args.as_slice(), w.as_slice()) else {
            return Err(v.err(e.line, "expected `arrow NAME = SOURCE TARGET`"));
        };
        arrows.push(FiniteArrow {
            name: a.to_string(),
            source: obj(e.line, s)?,
            target: obj(e.line, t)?,
        });
    }
    let arrow = |line: usize, s: &str| -> Result<usize> {
        arrows
            .iter()
            .position(|a| a.name == s)
            .ok_or_else(|| v.err(line, format!("unknown arrow `{s}`")))
    };
    let mut identities = vec![usize::MAX; objects.len()];
    for e in v.all("identity") {
        let args = e.key_args();
        let [o] = args.as_slice() else {
            return Err(v.err(e.line, "expected `identity OBJECT = ARROW`"));
        };
        identities[obj(e.line, o)?] = arrow(e.line, &e.value)?;
    }
    if let Some(x) = identities.iter().position(|&i| i == usize::MAX) {
        return Err(v.err(v.section.line, format!("object `{}` has no identity", objects[x])));
    }
    let mut compositions = Vec::new();
    for e in v.all("compose") {
        let args = e.key_args();
        let [a, b] = args.as_slice() else {
            return Err(v.err(e.line, "expected `compose A B = AB`"));
        };
        compositions.push((arrow(e.line, a)?, arrow(e.line, b)?, arrow(e.line, &e.value)?));
    }
    FiniteGroupoid::new(name, objects.clone(), arrows, identities, &compositions).map_err(|e| v.src.at(v.section.line, e))
}

fn load_morphisms<'a>(src: &Source, sections: impl Iterator<Item = &'a Section>, sc: &mut Scenario) -> Result<()> {
    for s in sections {
        let v = View::new(src, s);
        v.allow(&["from", "to", "identity"], &["object", "arrow"])?;
        let name = s.name.clone().unwrap_or_default();
        let get = |key: &str| -> Result<Arc<FiniteGroupoid>> {
            let n = v.str(key)?;
            sc.groupoids
                .get(n)
                .cloned()
                .ok_or_else(|| v.err(v.require(key).map_or(s.line, |e| e.line), format!("unknown finite groupoid `{n}`")))
        };
        let (from, to) = (get("from")?, get("to")?);
        let morphism = if v.bool_or("identity", false)? {
            if from.name != to.name {
                return Err(v.err(s.line, "an identity morphism needs from = to"));
            }
            FiniteMorphism {
                name: name.clone(),
                ..FiniteMorphism::identity(&from)
            }
        } else {
            let mut objects = vec![usize::MAX; from.object_count()];
            let mut arrows = vec![usize::MAX; from.arrow_count()];
            for e in v.all("object") {
                let args = e.key_args();
                let [x] = args.as_slice() else {
                    return Err(v.err(e.line, "expected `object X = Y`"));
                };
                let (i, j) = (from.object_index(x), to.object_index(&e.value));
                let (Some(i), Some(j)) = (i, j) else {
                    return Err(v.err(e.line, format!("unknown object in `{x} = {}`", e.value)));
                };
                objects[i] = j;
            }
            for e in v.all("arrow") {
                let args = e.key_args();
                let [a] = args.as_slice() else {
                    return Err(v.err(e.line, "expected `arrow A = B`"));
                };
                let (i, j) = (from.arrow_index(a), to.arrow_index(&e.value));
                let (Some(i), Some(j)) = (i, j) else {
                    return Err(v.err(e.line, format!("unknown arrow in `{a} = {}`", e.value)));
                };
                arrows[i] = j;
            }
            if objects.contains(&usize::MAX) || arrows.contains(&usize::MAX) {
                return Err(v.err(s.line, format!("morphism `{name}` must map every object and arrow")));
            }
            FiniteMorphism {
                name: name.clone(),
                objects,
                arrows,
            }
        };
        let bad = morphism.violations(&from, &to);
        if bad != 0 {
            return Err(v.err(s.line, format!("morphism `{name}` is not a functor ({bad} violations)")));
        }
        sc.morphisms.insert(
            name,
            NamedMorphism {
                from: from.name.clone(),
                to: to.name.clone(),
                morphism,
            },
        );
    }
    Ok(())
}

fn load_lift(v: &View) -> Result<LiftTask> {
    v.allow(&["up", "down", "map", "up_field", "down_field", "start", "duration", "samples"], &[])?;
    let words = |key: &str| -> Result<(usize, Vec<String>)> { Ok((v.require(key)?.line, v.words(key))) };
    let (ul, uw) = words("up")?;
    let (dl, dw) = words("down")?;
    let up = manifold_words(v, ul, &uw.iter().map(String::as_str).collect::<Vec<_>>())?;
    let down = manifold_words(v, dl, &dw.iter().map(String::as_str).collect::<Vec<_>>())?;
    let exprs = |key: &str, dim: usize| -> Result<SmoothMap> {
        let line = v.require(key)?.line;
        let es = v.exprs(key)?.unwrap_or_default();
        SmoothMap::from_exprs(dim, es).map_err(|e| v.src.at(line, e))
    };
    let map = exprs("map", up.ambient_dim())?;
    if map.target_dim != down.ambient_dim() {
        return Err(v.err(v.require("map")?.line, format!("map has {} components, downstairs is R^{}", map.target_dim, down.ambient_dim())));
    }
    let up_field = exprs("up_field", up.ambient_dim())?;
    let down_field = exprs("down_field", down.ambient_dim())?;
    for (f, m, key) in [(&up_field, &up, "up_field"), (&down_field, &down, "down_field")] {
        if f.target_dim != m.ambient_dim() {
            return Err(v.err(v.require(key)?.line, format!("{key} needs {} components", m.ambient_dim())));
        }
    }
    let start = v
        .points("start")?
        .and_then(|p| p.into_iter().next())
        .ok_or_else(|| v.err(v.section.line, "[lift] is missing `start`"))?;
    up.validate_point(&start, &Config::default())
        .map_err(|e| v.src.at(v.require("start").map_or(0, |e| e.line), e))?;
    Ok(LiftTask {
        up,
        down,
        map,
        up_field,
        down_field,
        start,
        duration: v.f64("duration")?,
        samples: v.usize_or("samples", 32)?,
    })
}
