//! Lie groupoids as data: structure maps `s, t, e, i, μ` on flat ambient
//! coordinates, the action groupoid `M ⋊ G`, the tangent groupoid, morphisms,
//! 2-morphisms, axiom checks, and exhaustive checks on finite groupoids.
//!
//! Arrows compose in diagrammatic order: `μ(a, b)` is defined when
//! `t(a) = s(b)`, and `s(μ(a, b)) = s(a)`, `t(μ(a, b)) = t(b)`. For `M ⋊ G`
//! this reads `μ((m, g), (m·g, h)) = (m, gh)`.
//!
//! Composable pairs are generated by construction (sample an arrow, then lift
//! its target), so fibre products are never built as manifolds.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{concat, Config, Manifold, SmoothMap};
use crate::groups::{CompactGroup, FiniteGroup, GroupElement, SmoothAction};
use crate::report::{max_abs, VerificationReport};
use crate::Rng;

type SampleFn = Arc<dyn Fn(&mut Rng) -> Result<DVector<f64>> + Send + Sync>;
type LiftFn = Arc<dyn Fn(&DVector<f64>, &mut Rng) -> Result<DVector<f64>> + Send + Sync>;
type DistFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;

/// Which concrete construction a groupoid came from.
#[derive(Clone)]
pub enum Presentation {
    Action(Arc<SmoothAction>),
    /// Pair groupoid `R^n x R^n ⇉ R^n`.
    Pair { n: usize },
    Finite(Arc<FiniteGroupoid>),
    TangentOf(Box<Presentation>),
}

impl fmt::Debug for Presentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Presentation::Action(a) => write!(f, "Action({} on {})", a.group, a.manifold),
            Presentation::Pair { n } => write!(f, "Pair(R^{n})"),
            Presentation::Finite(g) => write!(f, "Finite({})", g.name),
            Presentation::TangentOf(p) => write!(f, "TangentOf({p:?})"),
        }
    }
}

/// Properness is metadata: validated for catalog constructions, asserted otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Properness {
    Validated,
    Asserted,
    Unknown,
}

#[derive(Clone)]
pub struct LieGroupoid {
    pub name: String,
    pub presentation: Presentation,
    pub object_dim: usize,
    pub arrow_dim: usize,
    pub source: SmoothMap,
    pub target: SmoothMap,
    pub unit: SmoothMap,
    pub inverse: SmoothMap,
    /// Defined on concatenated composable pairs `[a, b]`.
    pub multiply: SmoothMap,
    pub is_etale: bool,
    pub properness: Properness,
    sample_object: SampleFn,
    lift: LiftFn,
    object_dist: DistFn,
    arrow_dist: DistFn,
    /// `TΓ0 -> Γ0`, `TΓ1 -> Γ1` for tangent groupoids.
    bundle_projection: Option<(SmoothMap, SmoothMap)>,
}

impl fmt::Debug for LieGroupoid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LieGroupoid")
            .field("name", &self.name)
            .field("presentation", &self.presentation)
            .field("object_dim", &self.object_dim)
            .field("arrow_dim", &self.arrow_dim)
            .field("is_etale", &self.is_etale)
            .field("properness", &self.properness)
            .finish()
    }
}

fn amax_dist() -> DistFn {
    Arc::new(|a: &DVector<f64>, b: &DVector<f64>| {
        if a.len() != b.len() {
            f64::INFINITY
        } else {
            (a - b).amax()
        }
    })
}

fn slice(v: &DVector<f64>, start: usize, len: usize) -> DVector<f64> {
    v.rows(start, len).into_owned()
}

fn join(parts: &[&DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    DVector::from_iterator(len, parts.iter().flat_map(|p| p.iter().copied()))
}

fn gaussian(rng: &mut Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

impl LieGroupoid {
    pub fn s(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        self.source.eval(a)
    }

    pub fn t(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        self.target.eval(a)
    }

    pub fn e(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.unit.eval(x)
    }

    pub fn i(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        self.inverse.eval(a)
    }

    pub fn mu(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.multiply.eval(&concat(a, b))
    }

    pub fn sample_object(&self, rng: &mut Rng) -> Result<DVector<f64>> {
        (self.sample_object)(rng)
    }

    /// A random arrow with the given source.
    pub fn lift(&self, x: &DVector<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
        (self.lift)(x, rng)
    }

    pub fn sample_arrow(&self, rng: &mut Rng) -> Result<DVector<f64>> {
        let x = self.sample_object(rng)?;
        self.lift(&x, rng)
    }

    /// Arrows `a, b, c` with `t(a) = s(b)`, `t(b) = s(c)`.
    pub fn composable_triple(&self, rng: &mut Rng) -> Result<[DVector<f64>; 3]> {
        let a = self.sample_arrow(rng)?;
        let b = self.lift(&self.t(&a)?, rng)?;
        let c = self.lift(&self.t(&b)?, rng)?;
        Ok([a, b, c])
    }

    pub fn object_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (self.object_dist)(a, b)
    }

    pub fn arrow_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (self.arrow_dist)(a, b)
    }

    pub fn bundle_projection(&self) -> Option<&(SmoothMap, SmoothMap)> {
        self.bundle_projection.as_ref()
    }

    pub fn action(&self) -> Option<&Arc<SmoothAction>> {
        match &self.presentation {
            Presentation::Action(a) => Some(a),
            _ => None,
        }
    }
}

/// `M ⋊ G = M x G ⇉ M`. Arrows are `[m, coords(g)]`; the action laws are
/// sampled before construction.
pub fn action_groupoid(
    action: Arc<SmoothAction>,
    rng: &mut Rng,
    samples: usize,
    radius: f64,
) -> Result<LieGroupoid> {
    action.validate(rng, samples, radius)?;
    Ok(action_groupoid_unchecked(action, radius))
}

pub fn action_groupoid_unchecked(action: Arc<SmoothAction>, radius: f64) -> LieGroupoid {
    let n = action.ambient_dim();
    let c = action.group.coordinate_len();
    let group = action.group.clone();

    let split = {
        let group = group.clone();
        move |a: &DVector<f64>| -> Result<(DVector<f64>, GroupElement)> {
            let g = group.from_coordinates(&a.as_slice()[n..n + c])?;
            Ok((slice(a, 0, n), g))
        }
    };
    let pack = {
        let group = group.clone();
        move |m: &DVector<f64>, g: &GroupElement| -> DVector<f64> {
            concat(m, &DVector::from_vec(group.coordinates(g)))
        }
    };

    let source = SmoothMap::from_fn(n + c, n, move |a| Ok(slice(a, 0, n)));
    let target = {
        let (act, split) = (action.clone(), split.clone());
        SmoothMap::from_fn(n + c, n, move |a| {
            let (m, g) = split(a)?;
            act.act(&m, &g)
        })
    };
    let unit = {
        let (group, pack) = (group.clone(), pack.clone());
        SmoothMap::from_fn(n, n + c, move |m| Ok(pack(m, &group.identity())))
    };
    let inverse = {
        let (act, group, split, pack) = (action.clone(), group.clone(), split.clone(), pack.clone());
        SmoothMap::from_fn(n + c, n + c, move |a| {
            let (m, g) = split(a)?;
            Ok(pack(&act.act(&m, &g)?, &group.inv(&g)))
        })
    };
    let multiply = {
        let (group, split, pack) = (group.clone(), split.clone(), pack.clone());
        SmoothMap::from_fn(2 * (n + c), n + c, move |ab| {
            let (m, g) = split(&slice(ab, 0, n + c))?;
            let (_, h) = split(&slice(ab, n + c, n + c))?;
            Ok(pack(&m, &group.mul(&g, &h)))
        })
    };
    let sample_object: SampleFn = {
        let act = action.clone();
        Arc::new(move |rng| act.manifold.sample_one(rng, radius, &act.cfg))
    };
    let lift: LiftFn = {
        let (group, pack) = (group.clone(), pack.clone());
        Arc::new(move |m, rng| Ok(pack(m, &group.sample(rng))))
    };
    let arrow_dist: DistFn = {
        let (group, split) = (group.clone(), split.clone());
        Arc::new(move |a, b| match (split(a), split(b)) {
            (Ok((m, g)), Ok((p, h))) => (m - p).amax().max(group.distance(&g, &h)),
            _ => f64::INFINITY,
        })
    };
    LieGroupoid {
        name: format!("{} ⋊ {}", action.manifold, action.group),
        presentation: Presentation::Action(action.clone()),
        object_dim: n,
        arrow_dim: n + c,
        source,
        target,
        unit,
        inverse,
        multiply,
        is_etale: group.is_finite(),
        properness: Properness::Validated,
        sample_object,
        lift,
        object_dist: amax_dist(),
        arrow_dist,
        bundle_projection: None,
    }
}

/// `R^n x R^n ⇉ R^n` with `s(x, y) = x`, `t(x, y) = y`.
pub fn pair_groupoid(n: usize, radius: f64) -> LieGroupoid {
    let pick = |rows: &[usize], cols: usize| {
        DMatrix::from_fn(rows.len(), cols, |i, j| if rows[i] == j { 1.0 } else { 0.0 })
    };
    let first: Vec<usize> = (0..n).collect();
    let second: Vec<usize> = (n..2 * n).collect();
    let source = SmoothMap::linear(pick(&first, 2 * n));
    let target = SmoothMap::linear(pick(&second, 2 * n));
    let unit_rows: Vec<usize> = (0..n).chain(0..n).collect();
    let unit = SmoothMap::linear(pick(&unit_rows, n));
    let swap: Vec<usize> = (n..2 * n).chain(0..n).collect();
    let inverse = SmoothMap::linear(pick(&swap, 2 * n));
    let mul_rows: Vec<usize> = (0..n).chain(3 * n..4 * n).collect();
    let multiply = SmoothMap::linear(pick(&mul_rows, 4 * n));
    let m = Manifold::euclidean(n);
    let cfg = Config::default();
    let sample_object: SampleFn = Arc::new(move |rng| m.sample_one(rng, radius, &cfg));
    let lift: LiftFn = Arc::new(move |x, rng| {
        let y = DVector::from_fn(n, |_, _| rng.random_range(-radius..=radius));
        Ok(concat(x, &y))
    });
    LieGroupoid {
        name: format!("Pair(R^{n})"),
        presentation: Presentation::Pair { n },
        object_dim: n,
        arrow_dim: 2 * n,
        source,
        target,
        unit,
        inverse,
        multiply,
        is_etale: n == 0,
        properness: Properness::Validated,
        sample_object,
        lift,
        object_dist: amax_dist(),
        arrow_dist: amax_dist(),
        bundle_projection: None,
    }
}

/// A tangent arrow split into base point, base velocity, group element and algebra part.
type TangentArrow = (DVector<f64>, DVector<f64>, GroupElement, DVector<f64>);

/// The tangent groupoid: tangent bundles and derivatives of every structure map.
///
/// For `M ⋊ G`, `TΓ1 ≅ TM x G x 𝔤` with a tangent vector at `g` written `g·η`.
/// Objects are `[m, v]`, arrows `[m, v, coords(g), η]`, and
/// `t = (m·g, v·g + ι(m·g, η))`, `μ = (m, v, gh, Ad_{h⁻¹} η + ζ)`.
pub fn tangent_groupoid(gpd: &LieGroupoid) -> Result<LieGroupoid> {
    match &gpd.presentation {
        Presentation::Action(action) => Ok(tangent_of_action(gpd, action.clone())),
        Presentation::Finite(_) => {
            // Discrete spaces: tangent spaces are zero, TΓ ≅ Γ.
            let mut t = gpd.clone();
            t.name = format!("T({})", gpd.name);
            t.presentation = Presentation::TangentOf(Box::new(gpd.presentation.clone()));
            t.bundle_projection = Some((
                SmoothMap::identity(gpd.object_dim),
                SmoothMap::identity(gpd.arrow_dim),
            ));
            Ok(t)
        }
        _ => Ok(tangent_generic(gpd)),
    }
}

fn tangent_of_action(gpd: &LieGroupoid, action: Arc<SmoothAction>) -> LieGroupoid {
    let n = action.ambient_dim();
    let group = action.group.clone();
    let c = group.coordinate_len();
    let k = group.lie_dim();
    let obj = 2 * n;
    let arr = 2 * n + c + k;

    // [m, v, gc, η] -> (m, v, g, η)
    let split = {
        let group = group.clone();
        move |a: &DVector<f64>| -> Result<TangentArrow> {
            let g = group.from_coordinates(&a.as_slice()[2 * n..2 * n + c])?;
            Ok((slice(a, 0, n), slice(a, n, n), g, slice(a, 2 * n + c, k)))
        }
    };
    let pack = {
        let group = group.clone();
        move |m: &DVector<f64>, v: &DVector<f64>, g: &GroupElement, eta: &DVector<f64>| {
            join(&[m, v, &DVector::from_vec(group.coordinates(g)), eta])
        }
    };
    // Ad_g η, zero-dimensional for finite groups.
    let ad = {
        let group = group.clone();
        move |g: &GroupElement, eta: &DVector<f64>| -> Result<DVector<f64>> {
            if k == 0 {
                Ok(DVector::zeros(0))
            } else {
                group.ad(g, eta)
            }
        }
    };

    let source = SmoothMap::from_fn(arr, obj, move |a| Ok(slice(a, 0, obj)));
    let target = {
        let (act, split) = (action.clone(), split.clone());
        SmoothMap::from_fn(arr, obj, move |a| {
            let (m, v, g, eta) = split(a)?;
            let mg = act.act(&m, &g)?;
            let w = act.tangent_action(&m, &v, &g)? + act.inf_action(&mg, &eta)?;
            Ok(concat(&mg, &w))
        })
    };
    let unit = {
        let (group, pack) = (group.clone(), pack.clone());
        SmoothMap::from_fn(obj, arr, move |x| {
            Ok(pack(&slice(x, 0, n), &slice(x, n, n), &group.identity(), &DVector::zeros(k)))
        })
    };
    let inverse = {
        let (act, group, split, pack, ad) = (action.clone(), group.clone(), split.clone(), pack.clone(), ad.clone());
        SmoothMap::from_fn(arr, arr, move |a| {
            let (m, v, g, eta) = split(a)?;
            let mg = act.act(&m, &g)?;
            let w = act.tangent_action(&m, &v, &g)? + act.inf_action(&mg, &eta)?;
            Ok(pack(&mg, &w, &group.inv(&g), &(-ad(&g, &eta)?)))
        })
    };
    let multiply = {
        let (group, split, pack, ad) = (group.clone(), split.clone(), pack.clone(), ad.clone());
        SmoothMap::from_fn(2 * arr, arr, move |ab| {
            let (m, v, g, eta) = split(&slice(ab, 0, arr))?;
            let (_, _, h, zeta) = split(&slice(ab, arr, arr))?;
            let eta_h = ad(&group.inv(&h), &eta)? + zeta;
            Ok(pack(&m, &v, &group.mul(&g, &h), &eta_h))
        })
    };
    let sample_object: SampleFn = {
        let base = gpd.sample_object.clone();
        let act = action.clone();
        Arc::new(move |rng| {
            let m = base(rng)?;
            let w = gaussian(rng, n);
            let v = act.manifold.tangent_project(&m, &w, &act.cfg)?.vector;
            Ok(concat(&m, &v))
        })
    };
    let lift: LiftFn = {
        let (group, pack) = (group.clone(), pack.clone());
        Arc::new(move |x, rng| {
            let g = group.sample(rng);
            let eta = gaussian(rng, k);
            Ok(pack(&slice(x, 0, n), &slice(x, n, n), &g, &eta))
        })
    };
    let arrow_dist: DistFn = {
        let (group, split) = (group.clone(), split.clone());
        Arc::new(move |a, b| match (split(a), split(b)) {
            (Ok((m, v, g, eta)), Ok((p, w, h, zeta))) => (m - p)
                .amax()
                .max((v - w).amax())
                .max(group.distance(&g, &h))
                .max(if k == 0 { 0.0 } else { (eta - zeta).amax() }),
            _ => f64::INFINITY,
        })
    };
    let proj0 = SmoothMap::from_fn(obj, n, move |x| Ok(slice(x, 0, n)));
    let proj1 = SmoothMap::from_fn(arr, n + c, move |a| {
        Ok(concat(&slice(a, 0, n), &slice(a, 2 * n, c)))
    });
    LieGroupoid {
        name: format!("T({})", gpd.name),
        presentation: Presentation::TangentOf(Box::new(gpd.presentation.clone())),
        object_dim: obj,
        arrow_dim: arr,
        source,
        target,
        unit,
        inverse,
        multiply,
        is_etale: gpd.is_etale,
        properness: gpd.properness,
        sample_object,
        lift,
        object_dist: amax_dist(),
        arrow_dist,
        bundle_projection: Some((proj0, proj1)),
    }
}

/// `Tf(p, v) = (f(p), J_f(p) v)` for every structure map; arrows `[γ, w]`.
fn tangent_generic(gpd: &LieGroupoid) -> LieGroupoid {
    let (n0, n1) = (gpd.object_dim, gpd.arrow_dim);
    let tangent_of = |f: &SmoothMap| -> SmoothMap {
        let f = f.clone();
        let (d, t) = (f.domain_dim, f.target_dim);
        SmoothMap::from_fn(2 * d, 2 * t, move |x| {
            let p = slice(x, 0, d);
            let v = slice(x, d, d);
            Ok(concat(&f.eval(&p)?, &(f.jacobian(&p)? * v)))
        })
    };
    let multiply = {
        let mu = gpd.multiply.clone();
        SmoothMap::from_fn(4 * n1, 2 * n1, move |ab| {
            let (g1, w1) = (slice(ab, 0, n1), slice(ab, n1, n1));
            let (g2, w2) = (slice(ab, 2 * n1, n1), slice(ab, 3 * n1, n1));
            let pair = concat(&g1, &g2);
            Ok(concat(&mu.eval(&pair)?, &(mu.jacobian(&pair)? * concat(&w1, &w2))))
        })
    };
    let sample_object: SampleFn = {
        let base = gpd.sample_object.clone();
        Arc::new(move |rng| {
            let p = base(rng)?;
            Ok(concat(&p, &gaussian(rng, n0)))
        })
    };
    let lift: LiftFn = {
        let (base_lift, s) = (gpd.lift.clone(), gpd.source.clone());
        Arc::new(move |x, rng| {
            let p = slice(x, 0, n0);
            let v = slice(x, n0, n0);
            let gamma = base_lift(&p, rng)?;
            let js = s.jacobian(&gamma)?;
            let pinv = js
                .clone()
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::groupoid(format!("source Jacobian pseudo-inverse: {e}")))?;
            let null = DMatrix::identity(n1, n1) - &pinv * &js;
            let w = &pinv * v + null * gaussian(rng, n1);
            Ok(concat(&gamma, &w))
        })
    };
    let proj0 = SmoothMap::from_fn(2 * n0, n0, move |x| Ok(slice(x, 0, n0)));
    let proj1 = SmoothMap::from_fn(2 * n1, n1, move |x| Ok(slice(x, 0, n1)));
    LieGroupoid {
        name: format!("T({})", gpd.name),
        presentation: Presentation::TangentOf(Box::new(gpd.presentation.clone())),
        object_dim: 2 * n0,
        arrow_dim: 2 * n1,
        source: tangent_of(&gpd.source),
        target: tangent_of(&gpd.target),
        unit: tangent_of(&gpd.unit),
        inverse: tangent_of(&gpd.inverse),
        multiply,
        is_etale: gpd.is_etale,
        properness: gpd.properness,
        sample_object,
        lift,
        object_dist: amax_dist(),
        arrow_dist: amax_dist(),
        bundle_projection: Some((proj0, proj1)),
    }
}

/// Samples every groupoid axiom and reports the worst residual of each.
pub fn check_groupoid(gpd: &LieGroupoid, rng: &mut Rng, samples: usize, tol: f64) -> Result<VerificationReport> {
    if samples == 0 {
        return Err(Error::groupoid("no samples requested"));
    }
    let mut r = [0.0f64; 11];
    for _ in 0..samples {
        let [a, b, c] = gpd.composable_triple(rng)?;
        let x = gpd.s(&a)?;
        let ex = gpd.e(&x)?;
        r[0] = max_abs(r[0], gpd.object_distance(&gpd.s(&ex)?, &x));
        r[1] = max_abs(r[1], gpd.object_distance(&gpd.t(&ex)?, &x));
        r[2] = max_abs(r[2], gpd.arrow_distance(&gpd.mu(&ex, &a)?, &a));
        let et = gpd.e(&gpd.t(&a)?)?;
        r[3] = max_abs(r[3], gpd.arrow_distance(&gpd.mu(&a, &et)?, &a));
        let ia = gpd.i(&a)?;
        r[4] = max_abs(r[4], gpd.object_distance(&gpd.s(&ia)?, &gpd.t(&a)?));
        r[5] = max_abs(r[5], gpd.object_distance(&gpd.t(&ia)?, &x));
        r[6] = max_abs(r[6], gpd.arrow_distance(&gpd.mu(&a, &ia)?, &ex));
        r[7] = max_abs(r[7], gpd.arrow_distance(&gpd.mu(&ia, &a)?, &et));
        let ab = gpd.mu(&a, &b)?;
        r[8] = max_abs(r[8], gpd.object_distance(&gpd.s(&ab)?, &x));
        r[9] = max_abs(r[9], gpd.object_distance(&gpd.t(&ab)?, &gpd.t(&b)?));
        let left = gpd.mu(&ab, &c)?;
        let right = gpd.mu(&a, &gpd.mu(&b, &c)?)?;
        r[10] = max_abs(r[10], gpd.arrow_distance(&left, &right));
    }
    let names = [
        "unit_source",
        "unit_target",
        "left_unit",
        "right_unit",
        "inverse_source",
        "inverse_target",
        "right_inverse",
        "left_inverse",
        "product_source",
        "product_target",
        "associativity",
    ];
    let mut report = VerificationReport::new(format!("groupoid axioms for {}", gpd.name));
    for (name, res) in names.iter().zip(r) {
        report.check(*name, res, tol);
    }
    report.count("samples", samples as u64);
    Ok(report)
}

/// How to differentiate a morphism.
#[derive(Clone)]
pub enum TangentRule {
    /// Differentiate `f0` and `f1` in ambient coordinates.
    Jacobian,
    /// Between action groupoids of the same group: `f0 = φ`, `f1(m, g) = (φ(m), g)`.
    Equivariant(SmoothMap),
    /// Between discrete groupoids: `Tf = f`.
    Discrete,
}

#[derive(Clone)]
pub struct GroupoidMorphism {
    pub name: String,
    pub f0: SmoothMap,
    pub f1: SmoothMap,
    pub rule: TangentRule,
}

impl fmt::Debug for GroupoidMorphism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupoidMorphism({})", self.name)
    }
}

impl GroupoidMorphism {
    pub fn new(name: impl Into<String>, f0: SmoothMap, f1: SmoothMap) -> Self {
        GroupoidMorphism {
            name: name.into(),
            f0,
            f1,
            rule: TangentRule::Jacobian,
        }
    }

    /// The morphism `M ⋊ G -> N ⋊ G` induced by an equivariant map `φ: M -> N`.
    pub fn equivariant(name: impl Into<String>, phi: SmoothMap, group_coords: usize) -> Self {
        let n = phi.domain_dim;
        let p = phi.clone();
        let f1 = SmoothMap::from_fn(n + group_coords, phi.target_dim + group_coords, move |a| {
            Ok(concat(&p.eval(&slice(a, 0, n))?, &slice(a, n, group_coords)))
        });
        GroupoidMorphism {
            name: name.into(),
            f0: phi.clone(),
            f1,
            rule: TangentRule::Equivariant(phi),
        }
    }

    pub fn identity(gpd: &LieGroupoid) -> Self {
        let rule = match &gpd.presentation {
            Presentation::Finite(_) => TangentRule::Discrete,
            // Group coordinates are not a chart, so the tangent map is built equivariantly.
            Presentation::Action(_) => TangentRule::Equivariant(SmoothMap::identity(gpd.object_dim)),
            _ => TangentRule::Jacobian,
        };
        GroupoidMorphism {
            name: "id".into(),
            f0: SmoothMap::identity(gpd.object_dim),
            f1: SmoothMap::identity(gpd.arrow_dim),
            rule,
        }
    }

    /// `self` then `next`.
    pub fn then(&self, next: &GroupoidMorphism) -> Result<GroupoidMorphism> {
        let rule = match (&self.rule, &next.rule) {
            (TangentRule::Equivariant(a), TangentRule::Equivariant(b)) => {
                TangentRule::Equivariant(SmoothMap::compose(b, a)?)
            }
            (TangentRule::Discrete, TangentRule::Discrete) => TangentRule::Discrete,
            _ => TangentRule::Jacobian,
        };
        Ok(GroupoidMorphism {
            name: format!("{}∘{}", next.name, self.name),
            f0: SmoothMap::compose(&next.f0, &self.f0)?,
            f1: SmoothMap::compose(&next.f1, &self.f1)?,
            rule,
        })
    }
}

/// Samples `s∘f1 = f0∘s`, `t∘f1 = f0∘t`, `f1∘e = e∘f0`, `f1∘μ = μ∘(f1, f1)`.
pub fn check_morphism(
    from: &LieGroupoid,
    to: &LieGroupoid,
    f: &GroupoidMorphism,
    rng: &mut Rng,
    samples: usize,
    tol: f64,
) -> Result<VerificationReport> {
    let mut r = [0.0f64; 4];
    for _ in 0..samples {
        let [a, b, _] = from.composable_triple(rng)?;
        let fa = f.f1.eval(&a)?;
        r[0] = max_abs(r[0], to.object_distance(&to.s(&fa)?, &f.f0.eval(&from.s(&a)?)?));
        r[1] = max_abs(r[1], to.object_distance(&to.t(&fa)?, &f.f0.eval(&from.t(&a)?)?));
        let x = from.s(&a)?;
        r[2] = max_abs(r[2], to.arrow_distance(&f.f1.eval(&from.e(&x)?)?, &to.e(&f.f0.eval(&x)?)?));
        let lhs = f.f1.eval(&from.mu(&a, &b)?)?;
        let rhs = to.mu(&fa, &f.f1.eval(&b)?)?;
        r[3] = max_abs(r[3], to.arrow_distance(&lhs, &rhs));
    }
    let mut report = VerificationReport::new(format!("morphism {}", f.name));
    for (name, res) in ["intertwines_source", "intertwines_target", "preserves_units", "preserves_products"]
        .iter()
        .zip(r)
    {
        report.check(*name, res, tol);
    }
    Ok(report)
}

/// `Tf: TΓ -> TΔ`.
pub fn tangent_morphism(from: &LieGroupoid, f: &GroupoidMorphism) -> Result<GroupoidMorphism> {
    let name = format!("T({})", f.name);
    match &f.rule {
        TangentRule::Discrete => Ok(GroupoidMorphism {
            name,
            ..f.clone()
        }),
        TangentRule::Equivariant(phi) => {
            let action = from
                .action()
                .ok_or_else(|| Error::groupoid("equivariant morphism from a non-action groupoid"))?;
            let n = phi.domain_dim;
            let nt = phi.target_dim;
            let c = action.group.coordinate_len();
            let k = action.group.lie_dim();
            let p0 = phi.clone();
            let f0 = SmoothMap::from_fn(2 * n, 2 * nt, move |x| {
                let m = slice(x, 0, n);
                Ok(concat(&p0.eval(&m)?, &(p0.jacobian(&m)? * slice(x, n, n))))
            });
            let p1 = phi.clone();
            let f1 = SmoothMap::from_fn(2 * n + c + k, 2 * nt + c + k, move |a| {
                let m = slice(a, 0, n);
                let v = p1.jacobian(&m)? * slice(a, n, n);
                Ok(join(&[&p1.eval(&m)?, &v, &slice(a, 2 * n, c + k)]))
            });
            Ok(GroupoidMorphism {
                name,
                f0,
                f1,
                rule: TangentRule::Jacobian,
            })
        }
        TangentRule::Jacobian => {
            let tangent_of = |g: &SmoothMap| {
                let g = g.clone();
                let (d, t) = (g.domain_dim, g.target_dim);
                SmoothMap::from_fn(2 * d, 2 * t, move |x| {
                    let p = slice(x, 0, d);
                    Ok(concat(&g.eval(&p)?, &(g.jacobian(&p)? * slice(x, d, d))))
                })
            };
            Ok(GroupoidMorphism {
                name,
                f0: tangent_of(&f.f0),
                f1: tangent_of(&f.f1),
                rule: TangentRule::Jacobian,
            })
        }
    }
}

/// The bundle projection `π: TΓ -> Γ`.
pub fn tangent_projection(tangent: &LieGroupoid) -> Result<GroupoidMorphism> {
    let (p0, p1) = tangent
        .bundle_projection
        .clone()
        .ok_or_else(|| Error::groupoid(format!("{} is not a tangent groupoid", tangent.name)))?;
    Ok(GroupoidMorphism::new("π", p0, p1))
}

/// Naturality of `π`: `π_Δ ∘ Tf = f ∘ π_Γ` on objects and arrows.
pub fn projection_naturality(
    tangent_from: &LieGroupoid,
    tangent_to: &LieGroupoid,
    to: &LieGroupoid,
    f: &GroupoidMorphism,
    tf: &GroupoidMorphism,
    rng: &mut Rng,
    samples: usize,
) -> Result<f64> {
    let pi_from = tangent_projection(tangent_from)?;
    let pi_to = tangent_projection(tangent_to)?;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let a = tangent_from.sample_arrow(rng)?;
        let x = tangent_from.s(&a)?;
        let lhs0 = pi_to.f0.eval(&tf.f0.eval(&x)?)?;
        let rhs0 = f.f0.eval(&pi_from.f0.eval(&x)?)?;
        worst = max_abs(worst, to.object_distance(&lhs0, &rhs0));
        let lhs1 = pi_to.f1.eval(&tf.f1.eval(&a)?)?;
        let rhs1 = f.f1.eval(&pi_from.f1.eval(&a)?)?;
        worst = max_abs(worst, to.arrow_distance(&lhs1, &rhs1));
    }
    Ok(worst)
}

/// A 2-morphism `φ: f ⇒ g`, a map `Γ0 -> Δ1`.
#[derive(Clone, Debug)]
pub struct GroupoidTwoMorphism {
    pub phi: SmoothMap,
}

/// Samples `s∘φ = f0`, `t∘φ = g0` and naturality `μ(f1(γ), φ(tγ)) = μ(φ(sγ), g1(γ))`.
#[allow(clippy::too_many_arguments)]
pub fn check_two_morphism(
    from: &LieGroupoid,
    to: &LieGroupoid,
    f: &GroupoidMorphism,
    g: &GroupoidMorphism,
    phi: &GroupoidTwoMorphism,
    rng: &mut Rng,
    samples: usize,
    tol: f64,
) -> Result<VerificationReport> {
    let mut r = [0.0f64; 3];
    for _ in 0..samples {
        let a = from.sample_arrow(rng)?;
        let (x, y) = (from.s(&a)?, from.t(&a)?);
        let px = phi.phi.eval(&x)?;
        r[0] = max_abs(r[0], to.object_distance(&to.s(&px)?, &f.f0.eval(&x)?));
        r[1] = max_abs(r[1], to.object_distance(&to.t(&px)?, &g.f0.eval(&x)?));
        let lhs = to.mu(&f.f1.eval(&a)?, &phi.phi.eval(&y)?)?;
        let rhs = to.mu(&px, &g.f1.eval(&a)?)?;
        r[2] = max_abs(r[2], to.arrow_distance(&lhs, &rhs));
    }
    let mut report = VerificationReport::new(format!("2-morphism {} ⇒ {}", f.name, g.name));
    report.check("source", r[0], tol);
    report.check("target", r[1], tol);
    report.check("naturality", r[2], tol);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteArrow {
    pub name: String,
    pub source: usize,
    pub target: usize,
}

/// A groupoid with finitely many objects and arrows, validated exhaustively.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGroupoid {
    pub name: String,
    pub objects: Vec<String>,
    pub arrows: Vec<FiniteArrow>,
    identities: Vec<usize>,
    compose: HashMap<(usize, usize), usize>,
    inverse: Vec<usize>,
}

impl FiniteGroupoid {
    /// `compositions` lists `(a, b, a·b)` for every pair with `t(a) = s(b)`.
    pub fn new(
        name: impl Into<String>,
        objects: Vec<String>,
        arrows: Vec<FiniteArrow>,
        identities: Vec<usize>,
        compositions: &[(usize, usize, usize)],
    ) -> Result<Self> {
        let name = name.into();
        let (no, na) = (objects.len(), arrows.len());
        let bad = |m: String| Error::groupoid(format!("finite groupoid {name}: {m}"));
        if identities.len() != no {
            return Err(bad(format!("{} identities for {no} objects", identities.len())));
        }
        for a in &arrows {
            if a.source >= no || a.target >= no {
                return Err(bad(format!("arrow {} has an endpoint outside the object list", a.name)));
            }
        }
        for (x, &id) in identities.iter().enumerate() {
            if id >= na || arrows[id].source != x || arrows[id].target != x {
                return Err(bad(format!("identity of {} is not a loop at it", objects[x])));
            }
        }
        let mut compose = HashMap::new();
        for &(a, b, c) in compositions {
            if a >= na || b >= na || c >= na {
                return Err(bad(format!("composition ({a}, {b}, {c}) references a missing arrow")));
            }
            if arrows[a].target != arrows[b].source {
                return Err(bad(format!(
                    "{} and {} are not composable",
                    arrows[a].name, arrows[b].name
                )));
            }
            if arrows[c].source != arrows[a].source || arrows[c].target != arrows[b].target {
                return Err(bad(format!(
                    "{}·{} = {} has the wrong endpoints",
                    arrows[a].name, arrows[b].name, arrows[c].name
                )));
            }
            if compose.insert((a, b), c).is_some_and(|old| old != c) {
                return Err(bad(format!("{}·{} defined twice", arrows[a].name, arrows[b].name)));
            }
        }
        for a in 0..na {
            for b in 0..na {
                if arrows[a].target == arrows[b].source && !compose.contains_key(&(a, b)) {
                    return Err(bad(format!(
                        "composition {}·{} is missing",
                        arrows[a].name, arrows[b].name
                    )));
                }
            }
        }
        for (a, arrow) in arrows.iter().enumerate() {
            if compose[&(identities[arrow.source], a)] != a || compose[&(a, identities[arrow.target])] != a {
                return Err(bad(format!("unit law fails for {}", arrow.name)));
            }
        }
        let mut inverse = vec![usize::MAX; na];
        for (a, arrow) in arrows.iter().enumerate() {
            inverse[a] = (0..na)
                .find(|&b| {
                    arrows[b].source == arrow.target
                        && arrows[b].target == arrow.source
                        && compose[&(a, b)] == identities[arrow.source]
                        && compose[&(b, a)] == identities[arrow.target]
                })
                .ok_or_else(|| bad(format!("{} has no inverse", arrow.name)))?;
        }
        for a in 0..na {
            for b in 0..na {
                if arrows[a].target != arrows[b].source {
                    continue;
                }
                for c in 0..na {
                    if arrows[b].target != arrows[c].source {
                        continue;
                    }
                    if compose[&(compose[&(a, b)], c)] != compose[&(a, compose[&(b, c)])] {
                        return Err(bad(format!(
                            "associativity fails at ({}, {}, {})",
                            arrows[a].name, arrows[b].name, arrows[c].name
                        )));
                    }
                }
            }
        }
        Ok(FiniteGroupoid {
            name,
            objects,
            arrows,
            identities,
            compose,
            inverse,
        })
    }

    /// The pair groupoid on `n` points: one arrow between each ordered pair.
    pub fn pair(n: usize) -> Self {
        let objects = (0..n).map(|i| format!("p{i}")).collect();
        let idx = |i: usize, j: usize| i * n + j;
        let arrows = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| FiniteArrow {
                name: format!("p{i}p{j}"),
                source: i,
                target: j,
            })
            .collect();
        let identities = (0..n).map(|i| idx(i, i)).collect();
        let mut comps = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    comps.push((idx(i, j), idx(j, k), idx(i, k)));
                }
            }
        }
        FiniteGroupoid::new(format!("Pair({n})"), objects, arrows, identities, &comps)
            .expect("pair groupoid")
    }

    /// `BG`: one object, arrows the group elements, `a·b` from the Cayley table.
    pub fn delooping(group: &FiniteGroup) -> Self {
        let n = group.order();
        let arrows = group
            .element_names
            .iter()
            .map(|name| FiniteArrow {
                name: name.clone(),
                source: 0,
                target: 0,
            })
            .collect();
        let mut comps = Vec::new();
        for a in 0..n {
            for b in 0..n {
                comps.push((a, b, group.mul(a, b)));
            }
        }
        FiniteGroupoid::new(
            format!("B{}", group.name),
            vec!["*".into()],
            arrows,
            vec![group.identity()],
            &comps,
        )
        .expect("delooping of a valid group")
    }

    pub fn disjoint_union(a: &FiniteGroupoid, b: &FiniteGroupoid) -> Self {
        let (no, na) = (a.objects.len(), a.arrows.len());
        let objects = a.objects.iter().chain(&b.objects).cloned().collect();
        let arrows = a
            .arrows
            .iter()
            .cloned()
            .chain(b.arrows.iter().map(|x| FiniteArrow {
                name: x.name.clone(),
                source: x.source + no,
                target: x.target + no,
            }))
            .collect();
        let identities = a
            .identities
            .iter()
            .copied()
            .chain(b.identities.iter().map(|i| i + na))
            .collect();
        let comps: Vec<_> = a
            .compose
            .iter()
            .map(|(&(x, y), &z)| (x, y, z))
            .chain(b.compose.iter().map(|(&(x, y), &z)| (x + na, y + na, z + na)))
            .collect();
        FiniteGroupoid::new(format!("{} ⊔ {}", a.name, b.name), objects, arrows, identities, &comps)
            .expect("disjoint union of valid groupoids")
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn arrow_count(&self) -> usize {
        self.arrows.len()
    }

    pub fn source(&self, a: usize) -> usize {
        self.arrows[a].source
    }

    pub fn target(&self, a: usize) -> usize {
        self.arrows[a].target
    }

    pub fn identity(&self, x: usize) -> usize {
        self.identities[x]
    }

    pub fn inverse(&self, a: usize) -> usize {
        self.inverse[a]
    }

    pub fn compose(&self, a: usize, b: usize) -> Option<usize> {
        self.compose.get(&(a, b)).copied()
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }

    pub fn arrow_index(&self, name: &str) -> Option<usize> {
        self.arrows.iter().position(|a| a.name == name)
    }

    /// The discrete Lie groupoid on index coordinates `[object]`, `[arrow]`.
    pub fn to_lie(self: &Arc<Self>) -> LieGroupoid {
        let g = self.clone();
        let idx = |v: &DVector<f64>| v[0].round() as usize;
        let one = |i: usize| DVector::from_element(1, i as f64);
        let (g1, g2, g3, g4, g5, g6) = (g.clone(), g.clone(), g.clone(), g.clone(), g.clone(), g.clone());
        let source = SmoothMap::from_fn(1, 1, move |a| Ok(one(g1.source(idx(a)))));
        let target = SmoothMap::from_fn(1, 1, move |a| Ok(one(g2.target(idx(a)))));
        let unit = SmoothMap::from_fn(1, 1, move |x| Ok(one(g3.identity(idx(x)))));
        let inverse = SmoothMap::from_fn(1, 1, move |a| Ok(one(g4.inverse(idx(a)))));
        let multiply = SmoothMap::from_fn(2, 1, move |ab| {
            let (a, b) = (ab[0].round() as usize, ab[1].round() as usize);
            g5.compose(a, b).map(one).ok_or_else(|| {
                Error::groupoid(format!("arrows {a} and {b} are not composable in {}", g5.name))
            })
        });
        let no = g.object_count();
        let sample_object: SampleFn = Arc::new(move |rng| Ok(one(rng.random_range(0..no))));
        let lift: LiftFn = Arc::new(move |x, rng| {
            let from: Vec<usize> = (0..g6.arrow_count()).filter(|&a| g6.source(a) == idx(x)).collect();
            Ok(one(from[rng.random_range(0..from.len())]))
        });
        LieGroupoid {
            name: g.name.clone(),
            presentation: Presentation::Finite(g.clone()),
            object_dim: 1,
            arrow_dim: 1,
            source,
            target,
            unit,
            inverse,
            multiply,
            is_etale: true,
            properness: Properness::Validated,
            sample_object,
            lift,
            object_dist: amax_dist(),
            arrow_dist: amax_dist(),
            bundle_projection: None,
        }
    }
}

/// A functor between finite groupoids as index maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteMorphism {
    pub name: String,
    pub objects: Vec<usize>,
    pub arrows: Vec<usize>,
}

impl FiniteMorphism {
    pub fn identity(g: &FiniteGroupoid) -> Self {
        FiniteMorphism {
            name: "id".into(),
            objects: (0..g.object_count()).collect(),
            arrows: (0..g.arrow_count()).collect(),
        }
    }

    /// Number of violated functor laws (0 for a morphism).
    pub fn violations(&self, from: &FiniteGroupoid, to: &FiniteGroupoid) -> usize {
        if self.objects.len() != from.object_count()
            || self.arrows.len() != from.arrow_count()
            || self.objects.iter().any(|&x| x >= to.object_count())
            || self.arrows.iter().any(|&a| a >= to.arrow_count())
        {
            return usize::MAX;
        }
        let mut bad = 0;
        for a in 0..from.arrow_count() {
            let fa = self.arrows[a];
            bad += usize::from(to.source(fa) != self.objects[from.source(a)]);
            bad += usize::from(to.target(fa) != self.objects[from.target(a)]);
        }
        for x in 0..from.object_count() {
            bad += usize::from(self.arrows[from.identity(x)] != to.identity(self.objects[x]));
        }
        for a in 0..from.arrow_count() {
            for b in 0..from.arrow_count() {
                if let Some(ab) = from.compose(a, b) {
                    bad += usize::from(to.compose(self.arrows[a], self.arrows[b]) != Some(self.arrows[ab]));
                }
            }
        }
        bad
    }

    pub fn to_lie(&self) -> GroupoidMorphism {
        let (o, a) = (Arc::new(self.objects.clone()), Arc::new(self.arrows.clone()));
        let f0 = SmoothMap::from_fn(1, 1, move |x| Ok(DVector::from_element(1, o[x[0].round() as usize] as f64)));
        let f1 = SmoothMap::from_fn(1, 1, move |x| Ok(DVector::from_element(1, a[x[0].round() as usize] as f64)));
        GroupoidMorphism {
            name: self.name.clone(),
            f0,
            f1,
            rule: TangentRule::Discrete,
        }
    }
}

/// Whether `phi` (an arrow of `to` per object of `from`) is a 2-morphism `f ⇒ g`.
pub fn is_two_morphism(
    from: &FiniteGroupoid,
    to: &FiniteGroupoid,
    f: &FiniteMorphism,
    g: &FiniteMorphism,
    phi: &[usize],
) -> bool {
    (0..from.object_count()).all(|x| {
        to.source(phi[x]) == f.objects[x] && to.target(phi[x]) == g.objects[x]
    }) && (0..from.arrow_count()).all(|a| {
        let (x, y) = (from.source(a), from.target(a));
        to.compose(f.arrows[a], phi[y]) == to.compose(phi[x], g.arrows[a])
    })
}

/// Every 2-morphism `f ⇒ g`, by enumerating all maps `Γ0 -> Δ1`.
pub fn enumerate_two_morphisms(
    from: &FiniteGroupoid,
    to: &FiniteGroupoid,
    f: &FiniteMorphism,
    g: &FiniteMorphism,
) -> Result<Vec<Vec<usize>>> {
    let (no, na) = (from.object_count(), to.arrow_count());
    let total = (na as f64).powi(no as i32);
    if total > 1e7 {
        return Err(Error::groupoid(format!("{total:.0} candidate maps exceed the enumeration budget")));
    }
    let mut out = Vec::new();
    let mut phi = vec![0usize; no];
    loop {
        if is_two_morphism(from, to, f, g, &phi) {
            out.push(phi.clone());
        }
        let mut i = 0;
        loop {
            if i == no {
                return Ok(out);
            }
            phi[i] += 1;
            if phi[i] < na {
                break;
            }
            phi[i] = 0;
            i += 1;
        }
    }
}

/// Exhaustive checks of the correspondence between groupoid morphisms and
/// their 2-morphisms on finite groupoids:
/// counts the 2-morphisms `f ⇒ g`, checks that vertical composition with the
/// identity 2-morphisms reproduces each of them, and that inversion is a
/// bijection onto the 2-morphisms `g ⇒ f`.
pub fn dictionary_check(
    from: &FiniteGroupoid,
    to: &FiniteGroupoid,
    f: &FiniteMorphism,
    g: &FiniteMorphism,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::new(format!("dictionary {} ⇒ {} : {} -> {}", f.name, g.name, from.name, to.name));
    for m in [f, g] {
        let v = m.violations(from, to);
        if v != 0 {
            return Err(Error::groupoid(format!(
                "{} is not a groupoid morphism {} -> {} ({} violations)",
                m.name,
                from.name,
                to.name,
                if v == usize::MAX { "shape".to_string() } else { v.to_string() }
            )));
        }
    }
    let forward = enumerate_two_morphisms(from, to, f, g)?;
    let backward = enumerate_two_morphisms(from, to, g, f)?;
    let id_f: Vec<usize> = f.objects.iter().map(|&x| to.identity(x)).collect();
    let id_g: Vec<usize> = g.objects.iter().map(|&x| to.identity(x)).collect();

    let mut not_reproduced = 0usize;
    let mut bad_inverse = 0usize;
    for phi in &forward {
        for x in 0..from.object_count() {
            let left = to.compose(id_f[x], phi[x]);
            let right = to.compose(phi[x], id_g[x]);
            not_reproduced += usize::from(left != Some(phi[x]) || right != Some(phi[x]));
        }
        let inv: Vec<usize> = phi.iter().map(|&a| to.inverse(a)).collect();
        bad_inverse += usize::from(!backward.contains(&inv));
    }
    report.count("two_morphisms", forward.len() as u64);
    report.count("reverse_two_morphisms", backward.len() as u64);
    report.count("candidate_maps", (to.arrow_count() as u64).pow(from.object_count() as u32));
    report.check("identity_composition_reproduces", not_reproduced as f64, 0.0);
    report.check("inversion_lands_in_reverse", bad_inverse as f64, 0.0);
    report.check(
        "inversion_bijective",
        (forward.len() as f64 - backward.len() as f64).abs(),
        0.0,
    );
    Ok(report)
}

/// The group-coordinate length of an action groupoid, if any.
pub fn group_of(gpd: &LieGroupoid) -> Option<&CompactGroup> {
    gpd.action().map(|a| &a.group)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::ActionKind;
    use crate::seeded_rng;
    use nalgebra::dvector;

    fn c2_on_line() -> Arc<SmoothAction> {
        Arc::new(SmoothAction::sign(Manifold::euclidean(1)).unwrap())
    }

    fn circle_on_plane() -> Arc<SmoothAction> {
        Arc::new(SmoothAction::torus_rotation(1, Manifold::euclidean(2), vec![(0, 0, 1)]).unwrap())
    }

    #[test]
    fn c2_action_groupoid_structure() {
        let mut rng = seeded_rng(1);
        let g = action_groupoid(c2_on_line(), &mut rng, 10, 2.0).unwrap();
        let arrow = dvector![0.7, 1.0];
        assert_eq!(g.t(&arrow).unwrap(), dvector![-0.7]);
        let m = dvector![0.3];
        assert_eq!(g.s(&g.e(&m).unwrap()).unwrap(), m);
        let back = g.i(&arrow).unwrap();
        assert_eq!(g.mu(&arrow, &back).unwrap(), dvector![0.7, 0.0]);
        assert!(g.is_etale);
        assert_eq!(g.properness, Properness::Validated);
    }

    #[test]
    fn action_groupoids_pass_axioms() {
        let mut rng = seeded_rng(2);
        let actions = vec![
            c2_on_line(),
            circle_on_plane(),
            Arc::new(SmoothAction::so3_linear(Manifold::sphere(3, 1.0)).unwrap()),
            Arc::new(SmoothAction::permutation(CompactGroup::builtin("S3").unwrap(), Manifold::euclidean(3)).unwrap()),
        ];
        for a in actions {
            let g = action_groupoid(a, &mut rng, 10, 2.0).unwrap();
            let r = check_groupoid(&g, &mut rng, 30, 1e-8).unwrap();
            assert!(r.passed(), "{r}");
            let tg = tangent_groupoid(&g).unwrap();
            let r = check_groupoid(&tg, &mut rng, 30, 1e-6).unwrap();
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn corrupted_multiplication_fails() {
        let mut rng = seeded_rng(3);
        let a = Arc::new(SmoothAction::permutation(CompactGroup::builtin("S3").unwrap(), Manifold::euclidean(3)).unwrap());
        let mut g = action_groupoid(a.clone(), &mut rng, 10, 2.0).unwrap();
        let group = a.group.clone();
        g.multiply = SmoothMap::from_fn(8, 4, move |ab| {
            let gi = group.from_coordinates(&[ab[3]]).unwrap();
            let hi = group.from_coordinates(&[ab[7]]).unwrap();
            let swapped = group.mul(&hi, &gi);
            Ok(concat(&slice(ab, 0, 3), &DVector::from_vec(group.coordinates(&swapped))))
        });
        let r = check_groupoid(&g, &mut rng, 60, 1e-8).unwrap();
        assert!(!r.passed());
        assert!(r.residual("product_target") >= 0.1, "{r}");
    }

    #[test]
    fn tangent_target_matches_finite_differences() {
        let mut rng = seeded_rng(4);
        let a = circle_on_plane();
        let g = action_groupoid(a.clone(), &mut rng, 10, 2.0).unwrap();
        let tg = tangent_groupoid(&g).unwrap();
        let (m, v, eta) = (dvector![0.4, -1.1], dvector![0.3, 0.2], 0.7);
        for theta in [0.0, 1.3] {
            let arrow = join(&[&m, &v, &dvector![theta], &dvector![eta]]);
            let tt = tg.t(&arrow).unwrap();
            // Curve (m + εv, θ + εη) pushed through t.
            let h = 1e-5;
            let curve = |e: f64| g.t(&concat(&(&m + &v * e), &dvector![theta + eta * e])).unwrap();
            let fd = (curve(h) - curve(-h)) / (2.0 * h);
            assert!((slice(&tt, 2, 2) - fd).amax() < 1e-7);
        }
    }

    #[test]
    fn pair_groupoid_and_its_tangent_are_exact() {
        let mut rng = seeded_rng(5);
        let g = pair_groupoid(1, 2.0);
        assert!(check_groupoid(&g, &mut rng, 20, 0.0).unwrap().passed());
        let tg = tangent_groupoid(&g).unwrap();
        let r = check_groupoid(&tg, &mut rng, 20, 1e-12).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn tangent_functoriality_and_projection_naturality() {
        let mut rng = seeded_rng(6);
        let a = circle_on_plane();
        let g = action_groupoid(a, &mut rng, 10, 2.0).unwrap();
        let tg = tangent_groupoid(&g).unwrap();
        // Rotation-equivariant maps of the plane: scaling and a radial profile.
        let scale = GroupoidMorphism::equivariant("scale", SmoothMap::linear(DMatrix::identity(2, 2) * 1.5), 1);
        let radial = GroupoidMorphism::equivariant(
            "radial",
            SmoothMap::from_exprs(2, vec![crate::parse("x1*(1 + x1^2 + x2^2)").unwrap(), crate::parse("x2*(1 + x1^2 + x2^2)").unwrap()]).unwrap(),
            1,
        );
        for f in [&scale, &radial] {
            assert!(check_morphism(&g, &g, f, &mut rng, 20, 1e-9).unwrap().passed());
            let tf = tangent_morphism(&g, f).unwrap();
            assert!(check_morphism(&tg, &tg, &tf, &mut rng, 20, 1e-6).unwrap().passed());
            let nat = projection_naturality(&tg, &tg, &g, f, &tf, &mut rng, 20).unwrap();
            assert!(nat <= 1e-8, "{nat}");
        }
        let composed = scale.then(&radial).unwrap();
        let t_composed = tangent_morphism(&g, &composed).unwrap();
        let t_chain = tangent_morphism(&g, &scale).unwrap().then(&tangent_morphism(&g, &radial).unwrap()).unwrap();
        for _ in 0..20 {
            let arrow = tg.sample_arrow(&mut rng).unwrap();
            let d = tg.arrow_distance(&t_composed.f1.eval(&arrow).unwrap(), &t_chain.f1.eval(&arrow).unwrap());
            assert!(d < 1e-6, "{d}");
        }
        let pi = tangent_projection(&tg).unwrap();
        assert!(check_morphism(&tg, &g, &pi, &mut rng, 20, 1e-12).unwrap().passed());
    }

    #[test]
    fn finite_groupoid_builders() {
        let p2 = FiniteGroupoid::pair(2);
        assert_eq!(p2.arrow_count(), 4);
        let bc2 = FiniteGroupoid::delooping(&FiniteGroup::cyclic(2));
        assert_eq!(bc2.arrow_count(), 2);
        let u = FiniteGroupoid::disjoint_union(&p2, &FiniteGroupoid::pair(1));
        assert_eq!(u.object_count(), 3);
        let lie = Arc::new(u).to_lie();
        let mut rng = seeded_rng(7);
        assert!(check_groupoid(&lie, &mut rng, 50, 0.0).unwrap().passed());
        let t = tangent_groupoid(&lie).unwrap();
        assert!(check_groupoid(&t, &mut rng, 20, 0.0).unwrap().passed());
    }

    #[test]
    fn finite_groupoid_rejects_bad_tables() {
        let objects = vec!["a".to_string()];
        let arrows = vec![
            FiniteArrow { name: "e".into(), source: 0, target: 0 },
            FiniteArrow { name: "x".into(), source: 0, target: 0 },
        ];
        // x·x = x leaves x without an inverse.
        let err = FiniteGroupoid::new("bad", objects, arrows, vec![0], &[(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 1)])
            .unwrap_err()
            .to_string();
        assert!(err.contains("inverse"), "{err}");
    }

    #[test]
    fn dictionary_counts() {
        let p2 = FiniteGroupoid::pair(2);
        let id = FiniteMorphism::identity(&p2);
        let r = dictionary_check(&p2, &p2, &id, &id).unwrap();
        assert_eq!(r.counts["two_morphisms"], 1);
        assert!(r.passed());

        let bc2 = FiniteGroupoid::delooping(&FiniteGroup::cyclic(2));
        let id = FiniteMorphism::identity(&bc2);
        let r = dictionary_check(&bc2, &bc2, &id, &id).unwrap();
        assert_eq!(r.counts["two_morphisms"], 2);

        let bs3 = FiniteGroupoid::delooping(&FiniteGroup::symmetric3());
        let id = FiniteMorphism::identity(&bs3);
        let r = dictionary_check(&bs3, &bs3, &id, &id).unwrap();
        assert_eq!(r.counts["two_morphisms"], 1);
    }

    #[test]
    fn lie_level_two_morphism_check() {
        // On BC2 the nontrivial central element is a 2-morphism id ⇒ id.
        let bc2 = Arc::new(FiniteGroupoid::delooping(&FiniteGroup::cyclic(2)));
        let lie = bc2.to_lie();
        let id = GroupoidMorphism::identity(&lie);
        let phi = GroupoidTwoMorphism {
            phi: SmoothMap::from_fn(1, 1, |_| Ok(dvector![1.0])),
        };
        let mut rng = seeded_rng(8);
        let r = check_two_morphism(&lie, &lie, &id, &id, &phi, &mut rng, 20, 0.0).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn expression_action_groupoid() {
        let es = vec![crate::parse("-x1").unwrap()];
        let id = vec![crate::parse("x1").unwrap()];
        let a = SmoothAction::new(
            CompactGroup::builtin("C2").unwrap(),
            Manifold::euclidean(1),
            ActionKind::FiniteExpr(vec![id, es]),
        )
        .unwrap();
        let mut rng = seeded_rng(9);
        let g = action_groupoid(Arc::new(a), &mut rng, 10, 2.0).unwrap();
        assert!(check_groupoid(&g, &mut rng, 20, 1e-12).unwrap().passed());
    }
}
