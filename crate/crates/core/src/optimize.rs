//! Global stream-surface optimisation: damped Gauss-Newton minimisation of
//! the strain/fairness/proximity objective over the mesh vertices, seed
//! improvement by back-integration and pointwise averaging, and the outer
//! cycle that alternates the two until the surface strain energy stops
//! improving.

use rayon::prelude::*;
use thiserror::Error;

use crate::curves::{CurveError, SeedCurve};
use crate::energies::{e_surface, EnergyError};
use crate::field::{FieldError, VectorField};
use crate::surface::{back_integrate, integrate_surface, StreamSurfaceMesh, SurfaceError};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("normal equations singular even at maximum damping")]
    SingularNormalEquations,
    #[error("fewer than two valid back-integrated points for seed sample {sample}")]
    InsufficientValidPoints { sample: usize },
    #[error("averaged seed collapsed below one chord")]
    SeedCollapsed,
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    /// Fairness weight.
    pub mu1: f64,
    /// Proximity weight.
    pub mu2: f64,
    pub max_outer_iters: usize,
    /// Relative objective decrease below which the inner solve stops.
    pub gn_tol: f64,
    pub gn_max_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            mu1: 0.1,
            mu2: 0.02,
            max_outer_iters: 10,
            gn_tol: 1e-6,
            gn_max_iters: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub f: f64,
    pub f_strain: f64,
    pub f_fair: f64,
    pub f_prox: f64,
}

/// Wedge residual of one quad: the inner product of the leading s-edge with
/// the edge difference across the time step.
fn quad_strain(a: &Vec3, e: &Vec3) -> f64 {
    a.dot(e)
}

fn quad_vectors(mesh: &StreamSurfaceMesh, i: usize, j: usize) -> (Vec3, Vec3) {
    let q00 = mesh.vertex(i, j);
    let q10 = mesh.vertex(i + 1, j);
    let q11 = mesh.vertex(i + 1, j + 1);
    let q01 = mesh.vertex(i, j + 1);
    (q10 - q00, q11 - q10 + q00 - q01)
}

fn quad_valid(mesh: &StreamSurfaceMesh, i: usize, j: usize) -> bool {
    mesh.is_valid(i, j)
        && mesh.is_valid(i + 1, j)
        && mesh.is_valid(i + 1, j + 1)
        && mesh.is_valid(i, j + 1)
}

/// Objective components; stencils touching invalid vertices are excluded.
pub fn objective(mesh: &StreamSurfaceMesh, config: &OptimizerConfig) -> Objective {
    let mut f_strain = 0.0;
    for i in 0..mesh.m.saturating_sub(1) {
        for j in 0..mesh.n.saturating_sub(1) {
            if quad_valid(mesh, i, j) {
                let (a, e) = quad_vectors(mesh, i, j);
                let r = quad_strain(&a, &e);
                f_strain += r * r;
            }
        }
    }
    let mut f_fair = 0.0;
    for i in 1..mesh.m.saturating_sub(1) {
        for j in 0..mesh.n {
            if mesh.is_valid(i - 1, j) && mesh.is_valid(i, j) && mesh.is_valid(i + 1, j) {
                let d = mesh.vertex(i + 1, j) - mesh.vertex(i, j) * 2.0 + mesh.vertex(i - 1, j);
                f_fair += d.norm_squared();
            }
        }
    }
    for i in 0..mesh.m {
        for j in 1..mesh.n.saturating_sub(1) {
            if mesh.is_valid(i, j - 1) && mesh.is_valid(i, j) && mesh.is_valid(i, j + 1) {
                let d = mesh.vertex(i, j + 1) - mesh.vertex(i, j) * 2.0 + mesh.vertex(i, j - 1);
                f_fair += d.norm_squared();
            }
        }
    }
    let mut f_prox = 0.0;
    for i in 0..mesh.m {
        for j in 0..mesh.n {
            if mesh.is_valid(i, j) {
                f_prox += (mesh.vertex(i, j) - mesh.original(i, j)).norm_squared();
            }
        }
    }
    Objective {
        f: f_strain + config.mu1 * f_fair + config.mu2 * f_prox,
        f_strain,
        f_fair,
        f_prox,
    }
}

/// Sparse matrix in compressed-row form.
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    ncols: usize,
}

impl Csr {
    fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .into_par_iter()
            .map(|r| {
                let mut acc = 0.0;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.vals[k] * x[self.cols[k]];
                }
                acc
            })
            .collect()
    }

    fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.ncols];
        for &c in &self.cols {
            counts[c] += 1;
        }
        let mut row_ptr = vec![0usize; self.ncols + 1];
        for c in 0..self.ncols {
            row_ptr[c + 1] = row_ptr[c] + counts[c];
        }
        let mut cols = vec![0usize; self.cols.len()];
        let mut vals = vec![0f64; self.vals.len()];
        let mut cursor = row_ptr.clone();
        for r in 0..self.nrows() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k];
                cols[cursor[c]] = r;
                vals[cursor[c]] = self.vals[k];
                cursor[c] += 1;
            }
        }
        Csr { row_ptr, cols, vals, ncols: self.nrows() }
    }
}

/// Residual stack r(Q) with its sparse Jacobian: per-quad strain residuals,
/// sqrt(mu1)-scaled fairness second differences in both directions, and
/// sqrt(mu2)-scaled proximity residuals. `F(Q) = |r|^2` reproduces the
/// objective exactly.
pub struct ResidualSystem {
    pub residuals: Vec<f64>,
    jac: Csr,
    /// Map vertex (i, j) -> variable block, `None` for invalid vertices.
    var_of: Vec<Option<usize>>,
    pub n_vars: usize,
}

impl ResidualSystem {
    pub fn assemble(mesh: &StreamSurfaceMesh, config: &OptimizerConfig) -> Self {
        let mut var_of = vec![None; mesh.m * mesh.n];
        let mut n_vars = 0usize;
        for i in 0..mesh.m {
            for j in 0..mesh.n {
                if mesh.is_valid(i, j) {
                    var_of[i * mesh.n + j] = Some(n_vars);
                    n_vars += 1;
                }
            }
        }

        let mut residuals = Vec::new();
        let mut row_ptr = vec![0usize];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let push_entry = |cols: &mut Vec<usize>, vals: &mut Vec<f64>, var: usize, axis: usize, v: f64| {
            cols.push(3 * var + axis);
            vals.push(v);
        };

        // Strain rows: one scalar per fully valid quad, touching 4 vertices.
        for i in 0..mesh.m.saturating_sub(1) {
            for j in 0..mesh.n.saturating_sub(1) {
                if !quad_valid(mesh, i, j) {
                    continue;
                }
                let (a, e) = quad_vectors(mesh, i, j);
                residuals.push(quad_strain(&a, &e));
                let stencil = [
                    (i, j, a - e),          // d/dq_{i,j} = -e + a
                    (i + 1, j, e - a),      // d/dq_{i+1,j}
                    (i + 1, j + 1, a),      // d/dq_{i+1,j+1}
                    (i, j + 1, -a),         // d/dq_{i,j+1}
                ];
                for (vi, vj, g) in stencil {
                    let var = var_of[vi * mesh.n + vj].unwrap();
                    for axis in 0..3 {
                        push_entry(&mut cols, &mut vals, var, axis, g[axis]);
                    }
                }
                row_ptr.push(cols.len());
            }
        }

        // Fairness rows: 3-vector second differences, one scalar row per
        // coordinate, interior stencils only.
        let s1 = config.mu1.sqrt();
        let fair_stencil = |cols: &mut Vec<usize>,
                                vals: &mut Vec<f64>,
                                residuals: &mut Vec<f64>,
                                row_ptr: &mut Vec<usize>,
                                va: usize,
                                vb: usize,
                                vc: usize,
                                d: Vec3| {
            for axis in 0..3 {
                residuals.push(s1 * d[axis]);
                push_entry(cols, vals, va, axis, s1);
                push_entry(cols, vals, vb, axis, -2.0 * s1);
                push_entry(cols, vals, vc, axis, s1);
                row_ptr.push(cols.len());
            }
        };
        for i in 1..mesh.m.saturating_sub(1) {
            for j in 0..mesh.n {
                if mesh.is_valid(i - 1, j) && mesh.is_valid(i, j) && mesh.is_valid(i + 1, j) {
                    let d = mesh.vertex(i + 1, j) - mesh.vertex(i, j) * 2.0 + mesh.vertex(i - 1, j);
                    let va = var_of[(i + 1) * mesh.n + j].unwrap();
                    let vb = var_of[i * mesh.n + j].unwrap();
                    let vc = var_of[(i - 1) * mesh.n + j].unwrap();
                    fair_stencil(&mut cols, &mut vals, &mut residuals, &mut row_ptr, va, vb, vc, d);
                }
            }
        }
        for i in 0..mesh.m {
            for j in 1..mesh.n.saturating_sub(1) {
                if mesh.is_valid(i, j - 1) && mesh.is_valid(i, j) && mesh.is_valid(i, j + 1) {
                    let d = mesh.vertex(i, j + 1) - mesh.vertex(i, j) * 2.0 + mesh.vertex(i, j - 1);
                    let va = var_of[i * mesh.n + j + 1].unwrap();
                    let vb = var_of[i * mesh.n + j].unwrap();
                    let vc = var_of[i * mesh.n + j - 1].unwrap();
                    fair_stencil(&mut cols, &mut vals, &mut residuals, &mut row_ptr, va, vb, vc, d);
                }
            }
        }

        // Proximity rows.
        let s2 = config.mu2.sqrt();
        for i in 0..mesh.m {
            for j in 0..mesh.n {
                if let Some(var) = var_of[i * mesh.n + j] {
                    let d = mesh.vertex(i, j) - mesh.original(i, j);
                    for axis in 0..3 {
                        residuals.push(s2 * d[axis]);
                        push_entry(&mut cols, &mut vals, var, axis, s2);
                        row_ptr.push(cols.len());
                    }
                }
            }
        }

        let jac = Csr { row_ptr, cols, vals, ncols: 3 * n_vars };
        ResidualSystem { residuals, jac, var_of, n_vars }
    }

    /// Objective value `|r|^2`.
    pub fn objective_value(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    /// Dense Jacobian (test support for small systems).
    pub fn jacobian_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut out = nalgebra::DMatrix::zeros(self.jac.nrows(), self.jac.ncols);
        for r in 0..self.jac.nrows() {
            for k in self.jac.row_ptr[r]..self.jac.row_ptr[r + 1] {
                out[(r, self.jac.cols[k])] += self.jac.vals[k];
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients on the damped normal equations
/// `(J^T J + lambda D) x = b` with Jacobi preconditioning; `D` is the
/// clamped diagonal of `J^T J`.
fn cg_normal_solve(
    jac: &Csr,
    jt: &Csr,
    diag: &[f64],
    lambda: f64,
    b: &[f64],
) -> Option<Vec<f64>> {
    let n = b.len();
    let apply = |x: &[f64]| -> Vec<f64> {
        let jx = jac.matvec(x);
        let mut out = jt.matvec(&jx);
        for k in 0..n {
            out[k] += lambda * diag[k] * x[k];
        }
        out
    };
    let precond: Vec<f64> = diag.iter().map(|d| 1.0 / (d * (1.0 + lambda))).collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(r, p)| r * p).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let b_norm = dot(b, b).sqrt().max(1e-300);
    let max_iter = (2 * n).clamp(50, 600);
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= 1e-10 * b_norm {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return if pap == 0.0 { Some(x) } else { None };
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        z = r.iter().zip(&precond).map(|(r, p)| r * p).collect();
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[derive(Debug, Clone)]
pub struct GnResult {
    pub mesh: StreamSurfaceMesh,
    /// Objective after every accepted step, starting with the input mesh.
    pub f_history: Vec<Objective>,
}

/// Damped Gauss-Newton on the mesh vertices: solves the sparse normal
/// equations with Levenberg damping, accepts only strictly improving steps,
/// and stops at the relative-decrease tolerance or the iteration cap.
pub fn gauss_newton(
    mesh: &StreamSurfaceMesh,
    config: &OptimizerConfig,
) -> Result<GnResult, OptimizeError> {
    let mut mesh = mesh.clone();
    let mut current = objective(&mesh, config);
    let mut history = vec![current];
    if current.f <= 1e-20 {
        return Ok(GnResult { mesh, f_history: history });
    }
    let mut lambda = 1e-4;

    for _ in 0..config.gn_max_iters {
        let system = ResidualSystem::assemble(&mesh, config);
        let jt = system.jac.transpose();
        // Gradient of |r|^2 is 2 J^T r; the factor cancels in the step.
        let grad = jt.matvec(&system.residuals);
        let gnorm = dot(&grad, &grad).sqrt();
        if gnorm <= 1e-14 * (1.0 + current.f) {
            break;
        }
        // diag(J^T J), clamped away from zero.
        let mut diag = vec![0.0; 3 * system.n_vars];
        for r in 0..jt.nrows() {
            let mut acc = 0.0;
            for k in jt.row_ptr[r]..jt.row_ptr[r + 1] {
                acc += jt.vals[k] * jt.vals[k];
            }
            diag[r] = acc;
        }
        let dmax = diag.iter().cloned().fold(0.0, f64::max).max(1e-300);
        for d in diag.iter_mut() {
            *d = d.max(1e-12 * dmax);
        }
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();

        let mut accepted = false;
        while lambda <= 1e6 {
            let Some(step) = cg_normal_solve(&system.jac, &jt, &diag, lambda, &neg_grad) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = mesh.clone();
            for i in 0..trial.m {
                for j in 0..trial.n {
                    if let Some(var) = system.var_of[i * trial.n + j] {
                        let dv = Vec3::new(step[3 * var], step[3 * var + 1], step[3 * var + 2]);
                        trial.set_vertex(i, j, trial.vertex(i, j) + dv);
                    }
                }
            }
            let trial_obj = objective(&trial, config);
            if trial_obj.f.is_finite() && trial_obj.f < current.f {
                mesh = trial;
                let prev = current.f;
                current = trial_obj;
                history.push(current);
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if prev - current.f <= config.gn_tol * prev {
                    return Ok(GnResult { mesh, f_history: history });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent even at maximum damping: either converged (small
            // gradient relative to curvature) or genuinely singular.
            if !current.f.is_finite() {
                return Err(OptimizeError::SingularNormalEquations);
            }
            break;
        }
    }
    Ok(GnResult { mesh, f_history: history })
}

/// Pointwise average of the back-integrated timelines, resampled to the
/// template's chord length. Every seed sample needs at least two valid
/// back-integrated points.
pub fn update_seed(
    back_curves: &[Vec<Option<Vec3>>],
    template: &SeedCurve,
) -> Result<SeedCurve, OptimizeError> {
    let m = template.points.len();
    let mut averaged = Vec::with_capacity(m);
    for i in 0..m {
        let mut sum = Vec3::zeros();
        let mut count = 0usize;
        for line in back_curves {
            if let Some(Some(p)) = line.get(i) {
                sum += p;
                count += 1;
            }
        }
        if count < 2 {
            return Err(OptimizeError::InsufficientValidPoints { sample: i });
        }
        averaged.push(sum / count as f64);
    }
    SeedCurve::from_polyline(
        &averaged,
        template.h,
        template.family,
        averaged[0],
        template.seed_direction,
    )
    .ok_or(OptimizeError::SeedCollapsed)
}

/// One per-outer-iteration log record.
#[derive(Debug, Clone, Copy)]
pub struct OuterRecord {
    pub outer_iter: usize,
    pub f: f64,
    pub f_strain: f64,
    pub f_fair: f64,
    pub f_prox: f64,
    pub e_s: f64,
}

#[derive(Debug)]
pub struct OptimizeResult {
    pub mesh: StreamSurfaceMesh,
    pub seed: SeedCurve,
    /// Surface strain energy of the integrated surface at every outer
    /// iteration, in iteration order.
    pub es_history: Vec<f64>,
    pub records: Vec<OuterRecord>,
}

/// The outer optimisation cycle: integrate the stream surface, optimise the
/// mesh, back-integrate its timelines, average them into an improved seed,
/// and repeat until the surface strain energy stops decreasing or the cap is
/// reached. Returns the best iterate seen.
pub fn optimise_stream_surface(
    field: &VectorField,
    seed: &SeedCurve,
    config: &OptimizerConfig,
    dt: f64,
    max_steps: usize,
) -> Result<OptimizeResult, OptimizeError> {
    let mut seed_k = seed.clone();
    let mut best: Option<(f64, StreamSurfaceMesh, SeedCurve)> = None;
    let mut es_history = Vec::new();
    let mut records = Vec::new();

    for outer in 0..config.max_outer_iters.max(1) {
        let mesh_k = match integrate_surface(field, &seed_k, dt, max_steps) {
            Ok(m) => m,
            Err(err) => {
                if outer == 0 {
                    return Err(err.into());
                }
                break;
            }
        };
        let es = match e_surface(field, &mesh_k) {
            Ok((es, _)) => es,
            Err(err) => {
                if outer == 0 {
                    return Err(err.into());
                }
                break;
            }
        };
        es_history.push(es);
        let improved = best.as_ref().map_or(true, |(b, _, _)| es < *b);
        if improved {
            best = Some((es, mesh_k.clone(), seed_k.clone()));
        }

        let stop_no_improvement = outer > 0 && es_history[outer] >= es_history[outer - 1];
        let last = outer + 1 == config.max_outer_iters.max(1);

        if stop_no_improvement || last {
            let pre = objective(&mesh_k, config);
            records.push(OuterRecord {
                outer_iter: outer,
                f: pre.f,
                f_strain: pre.f_strain,
                f_fair: pre.f_fair,
                f_prox: pre.f_prox,
                e_s: es,
            });
            break;
        }

        let gn = gauss_newton(&mesh_k, config)?;
        let post = *gn.f_history.last().unwrap();
        records.push(OuterRecord {
            outer_iter: outer,
            f: post.f,
            f_strain: post.f_strain,
            f_fair: post.f_fair,
            f_prox: post.f_prox,
            e_s: es,
        });

        let back = back_integrate(field, &gn.mesh);
        match update_seed(&back, &seed_k) {
            Ok(next) => seed_k = next,
            Err(_) => break,
        }
    }

    let (_, mesh, seed) = best.expect("at least one outer iteration ran");
    Ok(OptimizeResult { mesh, seed, es_history, records })
}
