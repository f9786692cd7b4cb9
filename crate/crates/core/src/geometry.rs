//! Embedded manifolds, tangent projectors, retractions and smooth maps.
//!
//! Every manifold is a level set `{c = 0}` of a constraint map `c: R^n -> R^k`
//! (Euclidean spaces have `k = 0`). Tangent spaces are `ker Dc(p)` and the
//! retraction is a Gauss-Newton projection back onto the level set.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::Rng;

pub type Point = DVector<f64>;

/// Numerical tolerances shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub on_manifold_tol: f64,
    pub tangency_tol: f64,
    pub rank_tol: f64,
    pub fd_step: f64,
    pub retract_max_iter: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            on_manifold_tol: 1e-9,
            tangency_tol: 1e-8,
            rank_tol: 1e-8,
            fd_step: 1e-5,
            retract_max_iter: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Manifold {
    Euclidean {
        n: usize,
    },
    /// Sphere of the given radius in `R^ambient`.
    Sphere {
        ambient: usize,
        radius: f64,
    },
    /// `k` unit circles in `R^{2k}`.
    Torus {
        k: usize,
    },
    LevelSet {
        ambient: usize,
        constraints: Vec<Expr>,
    },
    Product(Box<Manifold>, Box<Manifold>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: Point,
    pub vector: DVector<f64>,
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Manifold::Euclidean { n } => write!(f, "R^{n}"),
            Manifold::Sphere { ambient, radius } => {
                write!(f, "S^{}(r={radius})", ambient.saturating_sub(1))
            }
            Manifold::Torus { k } => write!(f, "T^{k}"),
            Manifold::LevelSet {
                ambient,
                constraints,
            } => write!(f, "levelset(R^{ambient}, codim {})", constraints.len()),
            Manifold::Product(a, b) => write!(f, "{a} x {b}"),
        }
    }
}

impl Manifold {
    pub fn euclidean(n: usize) -> Self {
        Manifold::Euclidean { n }
    }

    pub fn sphere(ambient: usize, radius: f64) -> Self {
        Manifold::Sphere { ambient, radius }
    }

    pub fn torus(k: usize) -> Self {
        Manifold::Torus { k }
    }

    pub fn level_set(ambient: usize, constraints: Vec<Expr>) -> Result<Self> {
        if constraints.len() > ambient {
            return Err(Error::geometry(format!(
                "{} constraints exceed ambient dimension {ambient}",
                constraints.len()
            )));
        }
        if let Some(c) = constraints.iter().find(|c| c.max_x_index() > ambient) {
            return Err(Error::geometry(format!(
                "constraint `{c}` references a coordinate beyond R^{ambient}"
            )));
        }
        Ok(Manifold::LevelSet {
            ambient,
            constraints,
        })
    }

    pub fn product(left: Manifold, right: Manifold) -> Self {
        Manifold::Product(Box::new(left), Box::new(right))
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Manifold::Euclidean { n } => *n,
            Manifold::Sphere { ambient, .. } => *ambient,
            Manifold::Torus { k } => 2 * k,
            Manifold::LevelSet { ambient, .. } => *ambient,
            Manifold::Product(a, b) => a.ambient_dim() + b.ambient_dim(),
        }
    }

    pub fn codim(&self) -> usize {
        match self {
            Manifold::Euclidean { .. } => 0,
            Manifold::Sphere { .. } => 1,
            Manifold::Torus { k } => *k,
            Manifold::LevelSet { constraints, .. } => constraints.len(),
            Manifold::Product(a, b) => a.codim() + b.codim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.ambient_dim() - self.codim()
    }

    /// Splits product coordinates into the two factors.
    pub fn split(&self, p: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        match self {
            Manifold::Product(a, _) => {
                let na = a.ambient_dim();
                Some((
                    p.rows(0, na).into_owned(),
                    p.rows(na, p.len() - na).into_owned(),
                ))
            }
            _ => None,
        }
    }

    pub fn constraint(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(p)?;
        Ok(match self {
            Manifold::Euclidean { .. } => DVector::zeros(0),
            Manifold::Sphere { radius, .. } => {
                DVector::from_element(1, p.norm_squared() - radius * radius)
            }
            Manifold::Torus { k } => DVector::from_fn(*k, |j, _| {
                p[2 * j] * p[2 * j] + p[2 * j + 1] * p[2 * j + 1] - 1.0
            }),
            Manifold::LevelSet { constraints, .. } => {
                let b = Bindings::point(p.as_slice());
                let vals = constraints
                    .iter()
                    .map(|c| c.eval(&b))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                DVector::from_vec(vals)
            }
            Manifold::Product(a, b) => {
                let (pa, pb) = self.split(p).expect("product");
                let ca = a.constraint(&pa)?;
                let cb = b.constraint(&pb)?;
                DVector::from_iterator(ca.len() + cb.len(), ca.iter().chain(cb.iter()).copied())
            }
        })
    }

    /// `Dc(p)`, a `codim x ambient` matrix.
    pub fn constraint_jacobian(&self, p: &DVector<f64>, cfg: &Config) -> Result<DMatrix<f64>> {
        self.check_len(p)?;
        let n = self.ambient_dim();
        Ok(match self {
            Manifold::Euclidean { .. } => DMatrix::zeros(0, n),
            Manifold::Sphere { .. } => DMatrix::from_fn(1, n, |_, j| 2.0 * p[j]),
            Manifold::Torus { k } => {
                let mut m = DMatrix::zeros(*k, n);
                for j in 0..*k {
                    m[(j, 2 * j)] = 2.0 * p[2 * j];
                    m[(j, 2 * j + 1)] = 2.0 * p[2 * j + 1];
                }
                m
            }
            Manifold::LevelSet { .. } => {
                let h = cfg.fd_step;
                let k = self.codim();
                let mut m = DMatrix::zeros(k, n);
                for j in 0..n {
                    let mut plus = p.clone();
                    let mut minus = p.clone();
                    plus[j] += h;
                    minus[j] -= h;
                    let d = (self.constraint(&plus)? - self.constraint(&minus)?) / (2.0 * h);
                    m.set_column(j, &d);
                }
                m
            }
            Manifold::Product(a, b) => {
                let (pa, pb) = self.split(p).expect("product");
                let ja = a.constraint_jacobian(&pa, cfg)?;
                let jb = b.constraint_jacobian(&pb, cfg)?;
                let mut m = DMatrix::zeros(ja.nrows() + jb.nrows(), n);
                m.view_mut((0, 0), (ja.nrows(), ja.ncols())).copy_from(&ja);
                m.view_mut((ja.nrows(), ja.ncols()), (jb.nrows(), jb.ncols()))
                    .copy_from(&jb);
                m
            }
        })
    }

    pub fn constraint_residual(&self, p: &DVector<f64>) -> Result<f64> {
        Ok(self.constraint(p)?.amax())
    }

    pub fn is_on_manifold(&self, p: &DVector<f64>, cfg: &Config) -> bool {
        p.len() == self.ambient_dim()
            && self
                .constraint_residual(p)
                .map(|r| r <= cfg.on_manifold_tol)
                .unwrap_or(false)
    }

    /// Orthogonal projector onto `ker Dc(p)`; block diagonal on products.
    pub fn tangent_projector(&self, p: &DVector<f64>, cfg: &Config) -> Result<DMatrix<f64>> {
        self.check_len(p)?;
        let n = self.ambient_dim();
        match self {
            Manifold::Euclidean { .. } => Ok(DMatrix::identity(n, n)),
            Manifold::Product(a, b) => {
                let (pa, pb) = self.split(p).expect("product");
                let qa = a.tangent_projector(&pa, cfg)?;
                let qb = b.tangent_projector(&pb, cfg)?;
                let na = qa.nrows();
                let mut m = DMatrix::zeros(n, n);
                m.view_mut((0, 0), (na, na)).copy_from(&qa);
                m.view_mut((na, na), (n - na, n - na)).copy_from(&qb);
                Ok(m)
            }
            _ => {
                let j = self.constraint_jacobian(p, cfg)?;
                let gram = gram_inverse(&j, cfg)?;
                Ok(DMatrix::identity(n, n) - j.transpose() * gram * &j)
            }
        }
    }

    pub fn tangent_project(
        &self,
        p: &DVector<f64>,
        w: &DVector<f64>,
        cfg: &Config,
    ) -> Result<TangentVector> {
        if w.len() != self.ambient_dim() {
            return Err(Error::geometry(format!(
                "vector of length {} in ambient R^{}",
                w.len(),
                self.ambient_dim()
            )));
        }
        let vector = match self {
            Manifold::Euclidean { .. } => w.clone(),
            _ => self.tangent_projector(p, cfg)? * w,
        };
        Ok(TangentVector {
            base: p.clone(),
            vector,
        })
    }

    pub fn tangency_residual(
        &self,
        p: &DVector<f64>,
        v: &DVector<f64>,
        cfg: &Config,
    ) -> Result<f64> {
        if self.codim() == 0 {
            return Ok(0.0);
        }
        Ok((self.constraint_jacobian(p, cfg)? * v).amax())
    }

    /// Gauss-Newton projection of `p + v` onto the level set.
    pub fn retract(&self, p: &DVector<f64>, v: &DVector<f64>, cfg: &Config) -> Result<Point> {
        self.check_len(p)?;
        self.project_point(&(p + v), cfg)
    }

    /// Gauss-Newton projection of an ambient point onto the level set.
    pub fn project_point(&self, q: &DVector<f64>, cfg: &Config) -> Result<Point> {
        let mut q = q.clone();
        if self.codim() == 0 {
            return Ok(q);
        }
        for _ in 0..=cfg.retract_max_iter {
            let c = self.constraint(&q)?;
            if c.amax() <= cfg.on_manifold_tol {
                return Ok(q);
            }
            if !c.iter().all(|v| v.is_finite()) {
                break;
            }
            let j = self.constraint_jacobian(&q, cfg)?;
            let gram = gram_inverse(&j, cfg)?;
            q -= j.transpose() * (gram * c);
        }
        Err(Error::geometry(format!(
            "retraction onto {self} did not converge in {} iterations",
            cfg.retract_max_iter
        )))
    }

    /// Random on-manifold samples. Euclidean factors are drawn uniformly from
    /// `[-radius, radius]^n`.
    pub fn sample(&self, rng: &mut Rng, count: usize, radius: f64, cfg: &Config) -> Result<Vec<Point>> {
        (0..count).map(|_| self.sample_one(rng, radius, cfg)).collect()
    }

    pub fn sample_one(&self, rng: &mut Rng, radius: f64, cfg: &Config) -> Result<Point> {
        let n = self.ambient_dim();
        match self {
            Manifold::Euclidean { .. } => Ok(DVector::from_fn(n, |_, _| {
                rng.random_range(-radius..=radius)
            })),
            Manifold::Sphere { radius: r, .. } => loop {
                let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = v.norm();
                if norm > 1e-6 {
                    return Ok(v * (*r / norm));
                }
            },
            Manifold::Torus { k } => {
                let mut p = DVector::zeros(n);
                for j in 0..*k {
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    p[2 * j] = a.cos();
                    p[2 * j + 1] = a.sin();
                }
                Ok(p)
            }
            Manifold::LevelSet { .. } => {
                for _ in 0..100 {
                    let guess = DVector::from_fn(n, |_, _| rng.random_range(-radius..=radius));
                    if let Ok(p) = self.project_point(&guess, cfg) {
                        if self.tangent_projector(&p, cfg).is_ok() {
                            return Ok(p);
                        }
                    }
                }
                Err(Error::geometry(format!("could not sample a point on {self}")))
            }
            Manifold::Product(a, b) => {
                let pa = a.sample_one(rng, radius, cfg)?;
                let pb = b.sample_one(rng, radius, cfg)?;
                Ok(concat(&pa, &pb))
            }
        }
    }

    /// Checks that `p` lies on the manifold and that `Dc(p)` has full rank.
    pub fn validate_point(&self, p: &DVector<f64>, cfg: &Config) -> Result<()> {
        self.check_len(p)?;
        let r = self.constraint_residual(p)?;
        if r > cfg.on_manifold_tol {
            return Err(Error::geometry(format!(
                "point {:?} is off {self} (residual {r:.3e})",
                p.as_slice()
            )));
        }
        self.tangent_projector(p, cfg).map(|_| ())
    }

    fn check_len(&self, p: &DVector<f64>) -> Result<()> {
        if p.len() != self.ambient_dim() {
            return Err(Error::geometry(format!(
                "point of length {} on {self} (ambient {})",
                p.len(),
                self.ambient_dim()
            )));
        }
        Ok(())
    }
}

/// `(J J^T)^{-1}` behind the singular-value rank gate.
fn gram_inverse(j: &DMatrix<f64>, cfg: &Config) -> Result<DMatrix<f64>> {
    let sv = j.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= cfg.rank_tol * max {
        return Err(Error::geometry(format!(
            "constraint Jacobian is rank deficient (singular values {:.3e}..{:.3e})",
            min, max
        )));
    }
    (j * j.transpose())
        .try_inverse()
        .ok_or_else(|| Error::geometry("constraint Gram matrix is singular"))
}

pub fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

pub type EvalFn = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>;

/// A smooth map between ambient coordinate spaces, with an optional analytic
/// Jacobian. Vector fields are smooth maps `R^n -> R^n` read as tangent vectors.
#[derive(Clone)]
pub struct SmoothMap {
    pub domain_dim: usize,
    pub target_dim: usize,
    eval: EvalFn,
    jacobian: Option<JacobianFn>,
    pub fd_step: f64,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("domain_dim", &self.domain_dim)
            .field("target_dim", &self.target_dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl SmoothMap {
    pub fn from_fn<F>(domain_dim: usize, target_dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        SmoothMap {
            domain_dim,
            target_dim,
            eval: Arc::new(f),
            jacobian: None,
            fd_step: Config::default().fd_step,
        }
    }

    pub fn with_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(j));
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    /// Componentwise expressions in `x1..x{domain_dim}`.
    pub fn from_exprs(domain_dim: usize, exprs: Vec<Expr>) -> Result<Self> {
        if let Some(e) = exprs.iter().find(|e| e.max_x_index() > domain_dim) {
            return Err(Error::geometry(format!(
                "`{e}` references a coordinate beyond R^{domain_dim}"
            )));
        }
        let target_dim = exprs.len();
        let exprs = Arc::new(exprs);
        let je = exprs.clone();
        Ok(SmoothMap::from_fn(domain_dim, target_dim, move |p| {
            let b = Bindings::point(p.as_slice());
            let vals = exprs
                .iter()
                .map(|e| e.eval(&b))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(DVector::from_vec(vals))
        })
        .with_jacobian(move |p| {
            let b = Bindings::point(p.as_slice());
            let mut m = DMatrix::zeros(target_dim, domain_dim);
            for (i, e) in je.iter().enumerate() {
                for j in 0..domain_dim {
                    m[(i, j)] = e.eval_dual(&b, j)?.1;
                }
            }
            Ok(m)
        }))
    }

    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let (rows, cols) = matrix.shape();
        let m = Arc::new(matrix);
        let mj = m.clone();
        SmoothMap::from_fn(cols, rows, move |p| Ok(&*m * p))
            .with_jacobian(move |_| Ok((*mj).clone()))
    }

    pub fn identity(n: usize) -> Self {
        SmoothMap::linear(DMatrix::identity(n, n))
    }

    pub fn zero(domain_dim: usize, target_dim: usize) -> Self {
        SmoothMap::from_fn(domain_dim, target_dim, move |_| Ok(DVector::zeros(target_dim)))
            .with_jacobian(move |_| Ok(DMatrix::zeros(target_dim, domain_dim)))
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn eval(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        if p.len() != self.domain_dim {
            return Err(Error::geometry(format!(
                "map from R^{} applied to a point of length {}",
                self.domain_dim,
                p.len()
            )));
        }
        let v = (self.eval)(p)?;
        if v.len() != self.target_dim {
            return Err(Error::geometry(format!(
                "map into R^{} returned {} components",
                self.target_dim,
                v.len()
            )));
        }
        Ok(v)
    }

    /// Analytic Jacobian when available, central differences otherwise.
    pub fn jacobian(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.jacobian {
            Some(j) => j(p),
            None => self.jacobian_fd(p, self.fd_step),
        }
    }

    pub fn jacobian_fd(&self, p: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.target_dim, self.domain_dim);
        for j in 0..self.domain_dim {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus[j] += h;
            minus[j] -= h;
            let d = (self.eval(&plus)? - self.eval(&minus)?) / (2.0 * h);
            m.set_column(j, &d);
        }
        Ok(m)
    }

    /// `T_p f` restricted to tangent spaces: `P_target(f(p)) J(p) P_domain(p)`.
    pub fn tangent_map(
        &self,
        p: &DVector<f64>,
        domain: &Manifold,
        target: &Manifold,
        cfg: &Config,
    ) -> Result<DMatrix<f64>> {
        let j = self.jacobian(p)?;
        let q = self.eval(p)?;
        Ok(target.tangent_projector(&q, cfg)? * j * domain.tangent_projector(p, cfg)?)
    }

    /// `outer ∘ inner`.
    pub fn compose(outer: &SmoothMap, inner: &SmoothMap) -> Result<SmoothMap> {
        if inner.target_dim != outer.domain_dim {
            return Err(Error::geometry(format!(
                "cannot compose R^{} -> R^{} after R^{} -> R^{}",
                outer.domain_dim, outer.target_dim, inner.domain_dim, inner.target_dim
            )));
        }
        let (o, i) = (outer.clone(), inner.clone());
        let mut m = SmoothMap::from_fn(inner.domain_dim, outer.target_dim, move |p| {
            o.eval(&i.eval(p)?)
        });
        m.fd_step = inner.fd_step.min(outer.fd_step);
        if outer.jacobian.is_some() && inner.jacobian.is_some() {
            let (o, i) = (outer.clone(), inner.clone());
            m = m.with_jacobian(move |p| Ok(o.jacobian(&i.eval(p)?)? * i.jacobian(p)?));
        }
        Ok(m)
    }

    /// `a * f + b * g` for maps with the same signature.
    pub fn linear_combination(a: f64, f: &SmoothMap, b: f64, g: &SmoothMap) -> Result<SmoothMap> {
        if f.domain_dim != g.domain_dim || f.target_dim != g.target_dim {
            return Err(Error::geometry("linear combination of maps with different signatures"));
        }
        let (f, g) = (f.clone(), g.clone());
        let (d, t) = (f.domain_dim, f.target_dim);
        let analytic = f.jacobian.is_some() && g.jacobian.is_some();
        let (fj, gj) = (f.clone(), g.clone());
        let m = SmoothMap::from_fn(d, t, move |p| Ok(f.eval(p)? * a + g.eval(p)? * b));
        Ok(if analytic {
            m.with_jacobian(move |p| Ok(fj.jacobian(p)? * a + gj.jacobian(p)? * b))
        } else {
            m
        })
    }
}

/// Coordinate projections `M x N -> M` and `M x N -> N`.
pub fn product_projections(m: &Manifold, n: &Manifold) -> (SmoothMap, SmoothMap) {
    let (a, b) = (m.ambient_dim(), n.ambient_dim());
    let left = DMatrix::from_fn(a, a + b, |i, j| if i == j { 1.0 } else { 0.0 });
    let right = DMatrix::from_fn(b, a + b, |i, j| if j == a + i { 1.0 } else { 0.0 });
    (SmoothMap::linear(left), SmoothMap::linear(right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::seeded_rng;
    use nalgebra::dvector;

    fn cfg() -> Config {
        Config::default()
    }

    #[test]
    fn euclidean_projection_is_identity() {
        let m = Manifold::euclidean(2);
        let v = m
            .tangent_project(&dvector![0.3, -1.0], &dvector![3.0, 4.0], &cfg())
            .unwrap();
        assert_eq!(v.vector, dvector![3.0, 4.0]);
    }

    #[test]
    fn circle_projection_drops_normal() {
        let m = Manifold::sphere(2, 1.0);
        let v = m
            .tangent_project(&dvector![1.0, 0.0], &dvector![5.0, 2.0], &cfg())
            .unwrap();
        assert!((v.vector - dvector![0.0, 2.0]).amax() < 1e-14);
    }

    #[test]
    fn sphere_projection_at_north_pole() {
        let m = Manifold::sphere(3, 1.0);
        let v = m
            .tangent_project(&dvector![0.0, 0.0, 1.0], &dvector![1.0, 1.0, 1.0], &cfg())
            .unwrap();
        assert!((v.vector - dvector![1.0, 1.0, 0.0]).amax() < 1e-14);
    }

    #[test]
    fn euclidean_retraction_is_exact() {
        let m = Manifold::euclidean(3);
        let p = dvector![1.0, 2.0, 3.0];
        let v = dvector![0.5, -0.25, 1.0];
        assert_eq!(m.retract(&p, &v, &cfg()).unwrap(), &p + &v);
    }

    #[test]
    fn circle_retraction_matches_normalization() {
        let m = Manifold::sphere(2, 1.0);
        let p = dvector![1.0, 0.0];
        for theta in [0.1, 0.01, 0.3] {
            let q = m.retract(&p, &dvector![0.0, theta], &cfg()).unwrap();
            let oracle = (&p + dvector![0.0, theta]).normalize();
            assert!((&q - &oracle).amax() < 1e-9);
            let angle = q[1].atan2(q[0]);
            assert!((angle - theta).abs() <= theta.powi(3));
        }
    }

    #[test]
    fn torus_retraction_lands_on_circle() {
        let m = Manifold::torus(1);
        let q = m
            .retract(&dvector![1.0, 0.0], &dvector![0.0, 0.1], &cfg())
            .unwrap();
        assert!((q.norm() - 1.0).abs() < 1e-9);
        assert!((q - dvector![1.0, 0.1].normalize()).amax() < 1e-9);
    }

    #[test]
    fn rank_deficiency_is_an_error() {
        let m = Manifold::sphere(2, 1.0);
        assert!(m.tangent_projector(&dvector![0.0, 0.0], &cfg()).is_err());
    }

    #[test]
    fn level_set_matches_builtin_sphere() {
        let ls = Manifold::level_set(3, vec![parse("x1^2 + x2^2 + x3^2 - 1").unwrap()]).unwrap();
        let sp = Manifold::sphere(3, 1.0);
        let p = dvector![0.6, 0.0, 0.8];
        let diff = ls.tangent_projector(&p, &cfg()).unwrap() - sp.tangent_projector(&p, &cfg()).unwrap();
        assert!(diff.amax() < 1e-9);
        assert_eq!(ls.dim(), 2);
    }

    #[test]
    fn products() {
        let r2 = Manifold::product(Manifold::euclidean(1), Manifold::euclidean(1));
        let p = r2.tangent_projector(&dvector![0.5, 0.7], &cfg()).unwrap();
        assert_eq!(p, DMatrix::identity(2, 2));

        let cyl = Manifold::product(Manifold::sphere(2, 1.0), Manifold::euclidean(1));
        let x = dvector![1.0, 0.0, 0.4];
        let p = cyl.tangent_projector(&x, &cfg()).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((p - expected).amax() < 1e-14);
        assert_eq!(cyl.dim(), 2);
        let t2s2 = Manifold::product(Manifold::torus(2), Manifold::sphere(3, 2.0));
        assert_eq!(t2s2.dim(), 2 + 2);
        let (l, r) = product_projections(&Manifold::sphere(2, 1.0), &Manifold::euclidean(1));
        assert_eq!(l.eval(&x).unwrap(), dvector![1.0, 0.0]);
        assert_eq!(r.eval(&x).unwrap(), dvector![0.4]);
    }

    #[test]
    fn jacobian_examples() {
        let f = SmoothMap::from_exprs(1, vec![parse("2*x1").unwrap()]).unwrap();
        assert!((f.jacobian(&dvector![0.3]).unwrap()[(0, 0)] - 2.0).abs() < 1e-9);

        let g = SmoothMap::from_exprs(2, vec![parse("x1^2").unwrap(), parse("x1*x2").unwrap()])
            .unwrap();
        let j = g.jacobian(&dvector![1.0, 3.0]).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 3.0, 1.0]);
        assert!((j - expected).amax() < 1e-7);

        let id = SmoothMap::identity(3);
        assert_eq!(id.jacobian(&dvector![1.0, 2.0, 3.0]).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn samples_are_on_manifold() {
        let mut rng = seeded_rng(3);
        for m in [
            Manifold::sphere(3, 2.0),
            Manifold::torus(2),
            Manifold::level_set(2, vec![parse("x1^2 + 4*x2^2 - 1").unwrap()]).unwrap(),
            Manifold::product(Manifold::sphere(2, 1.0), Manifold::euclidean(2)),
        ] {
            for p in m.sample(&mut rng, 20, 2.0, &cfg()).unwrap() {
                m.validate_point(&p, &cfg()).unwrap();
            }
        }
    }
}
