//! Steady 3D vector fields with exact Jacobians.
//!
//! A field is backed by analytic expressions (Jacobian by forward-mode AD),
//! an affine map (exact), or a structured grid (Jacobian of the trilinear
//! interpolant). The derived symmetric forms used by the cone and energy
//! computations live here as free functions.

mod grid;

pub use grid::GridField;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::exprparse::{self, Expr, ExprError};
use crate::{Mat3, Vec3};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("point ({}, {}, {}) outside domain", p.x, p.y, p.z)]
    PointOutsideDomain { p: Vec3 },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad field spec: {0}")]
    BadSpec(String),
}

/// Axis-aligned box domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub min: Vec3,
    pub max: Vec3,
}

/// One of the six boundary faces, with its inward unit normal and an
/// orthonormal in-plane basis (the two remaining coordinate axes).
#[derive(Debug, Clone, Copy)]
pub struct Face {
    /// Axis the face is orthogonal to (0 = x, 1 = y, 2 = z).
    pub axis: usize,
    /// True for the min-side face.
    pub at_min: bool,
    /// Plane coordinate along `axis`.
    pub coordinate: f64,
    pub inward_normal: Vec3,
    pub basis: [Vec3; 2],
}

impl BoxDomain {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, FieldError> {
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(FieldError::InvalidDomain(format!(
                "min {min:?} must be componentwise below max {max:?}"
            )));
        }
        Ok(BoxDomain { min, max })
    }

    pub fn unit() -> Self {
        BoxDomain { min: Vec3::zeros(), max: Vec3::new(1.0, 1.0, 1.0) }
    }

    pub fn symmetric_unit() -> Self {
        BoxDomain { min: Vec3::new(-1.0, -1.0, -1.0), max: Vec3::new(1.0, 1.0, 1.0) }
    }

    pub fn diameter(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - tol && p[a] <= self.max[a] + tol)
    }

    /// Clamp into the closed box, then pull grid queries an epsilon inside.
    pub fn clamp_inside(&self, p: &Vec3, eps: f64) -> Vec3 {
        let mut q = *p;
        for a in 0..3 {
            q[a] = q[a].clamp(self.min[a] + eps, self.max[a] - eps);
        }
        q
    }

    pub fn faces(&self) -> [Face; 6] {
        let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
        let mut out = Vec::with_capacity(6);
        for axis in 0..3 {
            let (b1, b2) = (axes[(axis + 1) % 3], axes[(axis + 2) % 3]);
            out.push(Face {
                axis,
                at_min: true,
                coordinate: self.min[axis],
                inward_normal: axes[axis],
                basis: [b1, b2],
            });
            out.push(Face {
                axis,
                at_min: false,
                coordinate: self.max[axis],
                inward_normal: -axes[axis],
                basis: [b1, b2],
            });
        }
        out.try_into().unwrap()
    }

    /// Face the point lies on, within `tol` of its plane, or `None` in the
    /// interior. When several faces match (edges/corners) the first wins in
    /// the fixed x-min, x-max, y-min, ... order.
    pub fn face_of(&self, p: &Vec3, tol: f64) -> Option<Face> {
        self.faces()
            .into_iter()
            .find(|f| (p[f.axis] - f.coordinate).abs() <= tol && self.contains(p, tol))
    }
}

impl Face {
    /// Index in the fixed `BoxDomain::faces()` order.
    pub fn index(&self) -> usize {
        self.axis * 2 + usize::from(!self.at_min)
    }

    pub fn name(&self) -> String {
        let axis = ["x", "y", "z"][self.axis];
        let side = if self.at_min { "min" } else { "max" };
        format!("{axis}-{side}")
    }
}

#[derive(Debug, Clone)]
pub enum FieldBacking {
    /// Component expressions in x, y, z.
    Analytic([Expr; 3]),
    /// Affine field `v(p) = A p + b`.
    Linear { a: Mat3, b: Vec3 },
    Grid(GridField),
}

/// Steady vector field over a box domain.
///
/// Immutable after construction; evaluation is pure and safe to share across
/// threads.
#[derive(Debug, Clone)]
pub struct VectorField {
    backing: FieldBacking,
    pub domain: BoxDomain,
    /// Metadata set by the catalogue or the user; verified by sampling, never
    /// enforced.
    pub declared_divergence_free: bool,
    /// Spec string or catalogue name, echoed into reports.
    pub name: String,
}

impl VectorField {
    pub fn new(
        backing: FieldBacking,
        domain: BoxDomain,
        declared_divergence_free: bool,
        name: impl Into<String>,
    ) -> Self {
        VectorField { backing, domain, declared_divergence_free, name: name.into() }
    }

    pub fn backing(&self) -> &FieldBacking {
        &self.backing
    }

    fn check_domain(&self, p: &Vec3) -> Result<(), FieldError> {
        let tol = 1e-12 * (1.0 + self.domain.diameter());
        if self.domain.contains(p, tol) {
            Ok(())
        } else {
            Err(FieldError::PointOutsideDomain { p: *p })
        }
    }

    /// Velocity at `p`; errors for points strictly outside the domain.
    pub fn eval(&self, p: &Vec3) -> Result<Vec3, FieldError> {
        self.check_domain(p)?;
        self.eval_unchecked(p)
    }

    /// Velocity without the domain check. Analytic and affine backings
    /// evaluate anywhere; grid queries are clamped an epsilon inside their
    /// bounds. Integrators use this so that Runge-Kutta stage points may
    /// momentarily leave the box while exit detection works on positions.
    pub fn eval_unchecked(&self, p: &Vec3) -> Result<Vec3, FieldError> {
        match &self.backing {
            FieldBacking::Analytic(exprs) => {
                let mut v = Vec3::zeros();
                for (i, e) in exprs.iter().enumerate() {
                    v[i] = e.eval(p)?;
                }
                Ok(v)
            }
            FieldBacking::Linear { a, b } => Ok(a * p + b),
            FieldBacking::Grid(g) => {
                let eps = 1e-12 * g.bounds.diameter();
                Ok(g.eval(&g.bounds.clamp_inside(p, eps)))
            }
        }
    }

    /// Jacobian J with `J[(i, j)] = dv_i/dp_j`; exact for analytic and affine
    /// backings, the interpolant derivative for grids.
    pub fn jacobian(&self, p: &Vec3) -> Result<Mat3, FieldError> {
        self.check_domain(p)?;
        self.jacobian_unchecked(p)
    }

    pub fn jacobian_unchecked(&self, p: &Vec3) -> Result<Mat3, FieldError> {
        match &self.backing {
            FieldBacking::Analytic(exprs) => {
                let mut j = Mat3::zeros();
                for (i, e) in exprs.iter().enumerate() {
                    let (_, g) = e.eval_with_gradient(p)?;
                    j.set_row(i, &g.transpose());
                }
                Ok(j)
            }
            FieldBacking::Linear { a, .. } => Ok(*a),
            FieldBacking::Grid(g) => {
                let eps = 1e-12 * g.bounds.diameter();
                Ok(g.jacobian(&g.bounds.clamp_inside(p, eps)))
            }
        }
    }

    /// tr J(p).
    pub fn divergence(&self, p: &Vec3) -> Result<f64, FieldError> {
        Ok(self.jacobian(p)?.trace())
    }

    /// Largest sampled speed over a uniform grid, used to scale time steps.
    pub fn max_speed(&self, per_axis: usize) -> f64 {
        let n = per_axis.max(2);
        let ext = self.domain.extent();
        let mut vmax = 0f64;
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    let p = self.domain.min
                        + Vec3::new(
                            (ix as f64 + 0.5) / n as f64 * ext.x,
                            (iy as f64 + 0.5) / n as f64 * ext.y,
                            (iz as f64 + 0.5) / n as f64 * ext.z,
                        );
                    if let Ok(v) = self.eval_unchecked(&p) {
                        vmax = vmax.max(v.norm());
                    }
                }
            }
        }
        vmax
    }
}

/// Strain rate and vorticity: the symmetric and antisymmetric parts of J.
pub fn strain_vorticity(j: &Mat3) -> (Mat3, Mat3) {
    let jt = j.transpose();
    ((j + jt) * 0.5, (j - jt) * 0.5)
}

/// Symmetric part of a matrix.
pub fn sym_part(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

/// Second-order form K with quadratic form `d K d = |J d|^2 + d J^2 d`, the
/// derivative of the self-conjugacy condition along the flow. Generally
/// non-symmetric; quadratic-form evaluations go through [`sym_part`].
pub fn k_matrix(j: &Mat3) -> Mat3 {
    j.transpose() * j + j * j
}

/// Built-in analytic catalogue powering the oracle tests.
pub mod catalogue {
    use super::*;

    /// Cubic divergence-free field on the unit box.
    pub fn fig3() -> VectorField {
        let exprs = [
            exprparse::parse("x + y^2 + 2*z^3").unwrap(),
            exprparse::parse("10*x^3 + 2*y").unwrap(),
            exprparse::parse("2*x^2*y - 3*z").unwrap(),
        ];
        VectorField::new(
            FieldBacking::Analytic(exprs),
            BoxDomain::unit(),
            true,
            "catalogue:fig3",
        )
    }

    /// Diagonal linear field `v = (a x, b y, c z)`; requires `a + b + c = 0`.
    pub fn linear_diag(a: f64, b: f64, c: f64) -> Result<VectorField, FieldError> {
        if (a + b + c).abs() > 1e-12 {
            return Err(FieldError::BadSpec(format!(
                "linear-diag({a},{b},{c}) is not traceless"
            )));
        }
        Ok(VectorField::new(
            FieldBacking::Linear { a: Mat3::from_diagonal(&Vec3::new(a, b, c)), b: Vec3::zeros() },
            BoxDomain::symmetric_unit(),
            true,
            format!("catalogue:linear-diag({a},{b},{c})"),
        ))
    }

    /// Rigid rotation `v = omega × p`.
    pub fn rotation(omega: Vec3) -> VectorField {
        let a = Mat3::new(
            0.0, -omega.z, omega.y, //
            omega.z, 0.0, -omega.x, //
            -omega.y, omega.x, 0.0,
        );
        VectorField::new(
            FieldBacking::Linear { a, b: Vec3::zeros() },
            BoxDomain::symmetric_unit(),
            true,
            format!("catalogue:rotation({},{},{})", omega.x, omega.y, omega.z),
        )
    }

    /// Constant field `v = b`.
    pub fn constant(b: Vec3) -> VectorField {
        VectorField::new(
            FieldBacking::Linear { a: Mat3::zeros(), b },
            BoxDomain::unit(),
            true,
            format!("catalogue:constant({},{},{})", b.x, b.y, b.z),
        )
    }
}

/// Parsed form of a `--field` argument.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    Catalogue(String),
    Expressions([String; 3]),
    Grid(PathBuf),
}

impl FieldSpec {
    /// Parse `catalogue:NAME`, `expr:VX;VY;VZ` or `grid:PATH`.
    pub fn parse(text: &str) -> Result<Self, FieldError> {
        let (kind, rest) = text
            .split_once(':')
            .ok_or_else(|| FieldError::BadSpec(format!("`{text}` lacks a kind: prefix")))?;
        match kind {
            "catalogue" | "catalog" => Ok(FieldSpec::Catalogue(rest.to_string())),
            "expr" => {
                let parts: Vec<&str> = rest.split(';').collect();
                if parts.len() != 3 {
                    return Err(FieldError::BadSpec(format!(
                        "expr field needs three ;-separated components, got {}",
                        parts.len()
                    )));
                }
                Ok(FieldSpec::Expressions([
                    parts[0].to_string(),
                    parts[1].to_string(),
                    parts[2].to_string(),
                ]))
            }
            "grid" => Ok(FieldSpec::Grid(PathBuf::from(rest))),
            other => Err(FieldError::BadSpec(format!("unknown field kind `{other}`"))),
        }
    }

    /// Build the field. `declared_divergence_free` overrides the catalogue
    /// default when given; `domain` overrides the default box.
    pub fn build(
        &self,
        declared_divergence_free: Option<bool>,
        domain: Option<BoxDomain>,
    ) -> Result<VectorField, FieldError> {
        let mut field = match self {
            FieldSpec::Catalogue(name) => build_catalogue(name)?,
            FieldSpec::Expressions(parts) => {
                let exprs = [
                    exprparse::parse(&parts[0])?,
                    exprparse::parse(&parts[1])?,
                    exprparse::parse(&parts[2])?,
                ];
                VectorField::new(
                    FieldBacking::Analytic(exprs),
                    BoxDomain::unit(),
                    false,
                    format!("expr:{};{};{}", parts[0], parts[1], parts[2]),
                )
            }
            FieldSpec::Grid(path) => load_grid_field(path)?,
        };
        if let Some(flag) = declared_divergence_free {
            field.declared_divergence_free = flag;
        }
        if let Some(domain) = domain {
            field.domain = domain;
        }
        Ok(field)
    }
}

fn parse_args(name: &str, args: &str, n: usize) -> Result<Vec<f64>, FieldError> {
    let vals: Result<Vec<f64>, _> = args.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|_| {
        FieldError::BadSpec(format!("bad arguments `{args}` for catalogue `{name}`"))
    })?;
    if vals.len() != n {
        return Err(FieldError::BadSpec(format!(
            "catalogue `{name}` takes {n} arguments, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn build_catalogue(name: &str) -> Result<VectorField, FieldError> {
    let (base, args) = match name.split_once('(') {
        Some((base, rest)) => {
            let args = rest
                .strip_suffix(')')
                .ok_or_else(|| FieldError::BadSpec(format!("unbalanced parens in `{name}`")))?;
            (base, Some(args))
        }
        None => (name, None),
    };
    match (base, args) {
        ("fig3", None) => Ok(catalogue::fig3()),
        ("linear-diag", Some(args)) => {
            let v = parse_args(base, args, 3)?;
            catalogue::linear_diag(v[0], v[1], v[2])
        }
        ("rotation" | "rigid-rotation", None) => Ok(catalogue::rotation(Vec3::z())),
        ("rotation" | "rigid-rotation", Some(args)) => match args {
            "x" => Ok(catalogue::rotation(Vec3::x())),
            "y" => Ok(catalogue::rotation(Vec3::y())),
            "z" => Ok(catalogue::rotation(Vec3::z())),
            _ => {
                let v = parse_args(base, args, 3)?;
                Ok(catalogue::rotation(Vec3::new(v[0], v[1], v[2])))
            }
        },
        ("constant", None) => Ok(catalogue::constant(Vec3::x())),
        ("constant", Some(args)) => {
            let v = parse_args(base, args, 3)?;
            Ok(catalogue::constant(Vec3::new(v[0], v[1], v[2])))
        }
        _ => Err(FieldError::BadSpec(format!("unknown catalogue field `{name}`"))),
    }
}

fn load_grid_field(path: &Path) -> Result<VectorField, FieldError> {
    let grid = GridField::load(path)?;
    let domain = grid.bounds;
    Ok(VectorField::new(
        FieldBacking::Grid(grid),
        domain,
        false,
        format!("grid:{}", path.display()),
    ))
}

/// Divergence statistics over uniformly sampled points.
pub fn divergence_stats(field: &VectorField, samples: usize, rng_seed: u64) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let ext = field.domain.extent();
    let mut max_abs = 0f64;
    let mut sum_abs = 0f64;
    let mut count = 0usize;
    for _ in 0..samples {
        let p = field.domain.min
            + Vec3::new(
                rng.random::<f64>() * ext.x,
                rng.random::<f64>() * ext.y,
                rng.random::<f64>() * ext.z,
            );
        if let Ok(d) = field.divergence(&p) {
            max_abs = max_abs.max(d.abs());
            sum_abs += d.abs();
            count += 1;
        }
    }
    (max_abs, if count > 0 { sum_abs / count as f64 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn eval_examples() {
        let f = catalogue::fig3();
        assert_eq!(f.eval(&Vec3::zeros()).unwrap(), Vec3::zeros());

        let c = catalogue::constant(Vec3::x());
        assert_eq!(c.eval(&Vec3::new(0.3, 0.7, 0.2)).unwrap(), Vec3::x());

        let r = catalogue::rotation(Vec3::z());
        assert_eq!(r.eval(&Vec3::y()).unwrap(), Vec3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn outside_domain_errors() {
        let f = catalogue::fig3();
        assert!(matches!(
            f.eval(&Vec3::new(2.0, 0.0, 0.0)),
            Err(FieldError::PointOutsideDomain { .. })
        ));
        assert!(matches!(
            f.jacobian(&Vec3::new(-0.5, 0.5, 0.5)),
            Err(FieldError::PointOutsideDomain { .. })
        ));
    }

    #[test]
    fn jacobian_examples() {
        let f = catalogue::fig3();
        let j = f.jacobian(&Vec3::zeros()).unwrap();
        assert_eq!(j, Mat3::from_diagonal(&Vec3::new(1.0, 2.0, -3.0)));

        let r = catalogue::rotation(Vec3::z());
        let j = r.jacobian(&Vec3::new(0.3, -0.4, 0.9)).unwrap();
        assert_eq!(j, Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));

        let d = catalogue::linear_diag(1.0, 1.0, -2.0).unwrap();
        let j = d.jacobian(&Vec3::new(0.1, 0.2, 0.3)).unwrap();
        assert_eq!(j, Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -2.0)));
    }

    #[test]
    fn strain_vorticity_examples() {
        let j = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let (jp, jm) = strain_vorticity(&j);
        assert_eq!(jp, Mat3::zeros());
        assert_eq!(jm, j);

        let j = Mat3::from_diagonal(&Vec3::new(1.0, 2.0, -3.0));
        let (jp, jm) = strain_vorticity(&j);
        assert_eq!(jp, j);
        assert_eq!(jm, Mat3::zeros());

        let j = Mat3::new(1.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -2.0);
        let (jp, jm) = strain_vorticity(&j);
        assert_eq!(jp, Mat3::new(1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, -2.0));
        assert_eq!(jp + jm, j);
    }

    #[test]
    fn k_matrix_examples() {
        let k = k_matrix(&Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -2.0)));
        assert_eq!(k, Mat3::from_diagonal(&Vec3::new(2.0, 2.0, 8.0)));

        // Antisymmetric J: J^T J = -J^2 cancels J^2.
        let j = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(k_matrix(&j), Mat3::zeros());

        let k = k_matrix(&Mat3::from_diagonal(&Vec3::new(1.0, 2.0, -3.0)));
        assert_eq!(k, Mat3::from_diagonal(&Vec3::new(2.0, 8.0, 18.0)));
    }

    #[test]
    fn divergence_examples() {
        let f = catalogue::fig3();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = Vec3::new(rng.random(), rng.random(), rng.random());
            assert!(f.divergence(&p).unwrap().abs() < 1e-12);
        }

        let expand = FieldSpec::parse("expr:x;y;z").unwrap().build(None, None).unwrap();
        assert_relative_eq!(expand.divergence(&Vec3::new(0.2, 0.4, 0.9)).unwrap(), 3.0);

        let r = catalogue::rotation(Vec3::z());
        assert_eq!(r.divergence(&Vec3::new(0.5, -0.5, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn ad_jacobian_matches_finite_differences() {
        let fields = [
            catalogue::fig3(),
            catalogue::linear_diag(1.0, 1.0, -2.0).unwrap(),
            catalogue::rotation(Vec3::new(0.3, -1.0, 0.5)),
            catalogue::constant(Vec3::new(1.0, 2.0, 3.0)),
        ];
        for field in &fields {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            let ext = field.domain.extent();
            let h = 1e-5 * field.domain.diameter();
            for _ in 0..120 {
                let p = field.domain.min
                    + Vec3::new(
                        (0.05 + 0.9 * rng.random::<f64>()) * ext.x,
                        (0.05 + 0.9 * rng.random::<f64>()) * ext.y,
                        (0.05 + 0.9 * rng.random::<f64>()) * ext.z,
                    );
                let j = field.jacobian(&p).unwrap();
                let mut fd = Mat3::zeros();
                for col in 0..3 {
                    let mut pp = p;
                    let mut pm = p;
                    pp[col] += h;
                    pm[col] -= h;
                    let dv = (field.eval_unchecked(&pp).unwrap()
                        - field.eval_unchecked(&pm).unwrap())
                        / (2.0 * h);
                    fd.set_column(col, &dv);
                }
                let tol = 1e-6 * (1.0 + j.norm());
                assert!((j - fd).norm() <= tol, "{}: |J-Jfd| = {:e}", field.name, (j - fd).norm());
            }
        }
    }

    #[test]
    fn strain_trace_matches_jacobian_trace() {
        let f = catalogue::fig3();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let p = Vec3::new(rng.random(), rng.random(), rng.random());
            let j = f.jacobian(&p).unwrap();
            let (jp, _) = strain_vorticity(&j);
            assert!((jp.trace() - j.trace()).abs() <= 1e-12);
        }
    }

    #[test]
    fn k_quadratic_form_equals_symmetric_part() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let j = Mat3::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0);
            let k = k_matrix(&j);
            let kp = sym_part(&k);
            let d = Vec3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            let qk = (d.transpose() * k * d)[0];
            let qkp = (d.transpose() * kp * d)[0];
            assert!((qk - qkp).abs() <= 1e-12 * (1.0 + qk.abs()));
        }
    }

    #[test]
    fn field_spec_parsing() {
        assert_eq!(
            FieldSpec::parse("catalogue:fig3").unwrap(),
            FieldSpec::Catalogue("fig3".into())
        );
        assert!(matches!(FieldSpec::parse("expr:1;0;0").unwrap(), FieldSpec::Expressions(_)));
        assert!(FieldSpec::parse("nonsense").is_err());
        assert!(FieldSpec::parse("catalogue:linear-diag(1,1,-1)")
            .unwrap()
            .build(None, None)
            .is_err());
        let f = FieldSpec::parse("catalogue:linear-diag(1,1,-2)")
            .unwrap()
            .build(None, None)
            .unwrap();
        assert!(f.declared_divergence_free);
    }

    #[test]
    fn face_geometry() {
        let b = BoxDomain::unit();
        assert_relative_eq!(b.diameter(), 3f64.sqrt());
        for f in b.faces() {
            assert_relative_eq!(f.inward_normal.norm(), 1.0);
            // Inward normal points into the box from the face centre.
            let mut centre = b.center();
            centre[f.axis] = f.coordinate;
            let inside = centre + f.inward_normal * 0.25;
            assert!(b.contains(&inside, 0.0));
            assert_relative_eq!(f.basis[0].dot(&f.basis[1]), 0.0);
            assert_relative_eq!(f.basis[0].dot(&f.inward_normal), 0.0);
        }
        let face = b.face_of(&Vec3::new(0.5, 0.0, 0.5), 1e-9).unwrap();
        assert_eq!(face.axis, 1);
        assert!(face.at_min);
    }
}
