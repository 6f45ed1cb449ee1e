//! Stream-surface integration: classical RK4 timelines from a seed curve,
//! the rectangular quad mesh with validity trimming, and back-integration of
//! timelines to the initial time.

use rayon::prelude::*;
use thiserror::Error;

use crate::curves::SeedCurve;
use crate::field::{FieldError, VectorField};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("trajectory left the domain at step fraction {exit_fraction} (last inside: {}, {}, {})",
        last_inside.x, last_inside.y, last_inside.z)]
    LeftDomain { last_inside: Vec3, exit_fraction: f64 },
    #[error("empty surface: every timeline exits before the second step")]
    EmptySurface,
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Default number of time steps when no cap is configured.
pub const DEFAULT_MAX_STEPS: usize = 500;

/// Velocity-normalised default time step: the fastest sampled point moves
/// about one percent of the domain diameter per step.
pub fn default_dt(field: &VectorField) -> f64 {
    let vmax = field.max_speed(10);
    let diam = field.domain.diameter();
    if vmax > 0.0 {
        0.01 * diam / vmax
    } else {
        0.01 * diam
    }
}

/// One unvalidated classical RK4 step; stage points may momentarily leave
/// the box. Negative `dt` integrates against the flow.
pub fn rk4_raw(field: &VectorField, p: &Vec3, dt: f64) -> Result<Vec3, FieldError> {
    let k1 = field.eval_unchecked(p)?;
    let k2 = field.eval_unchecked(&(p + k1 * (0.5 * dt)))?;
    let k3 = field.eval_unchecked(&(p + k2 * (0.5 * dt)))?;
    let k4 = field.eval_unchecked(&(p + k3 * dt))?;
    Ok(p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// One RK4 step with domain trimming: when the step exits the box, the exit
/// is bisected to 1e-10 of the diameter and reported.
pub fn rk4_step(field: &VectorField, p: &Vec3, dt: f64) -> Result<Vec3, SurfaceError> {
    let domain = field.domain;
    let tol = 1e-12 * domain.diameter();
    let q = rk4_raw(field, p, dt)?;
    if domain.contains(&q, tol) {
        return Ok(q);
    }
    // Bisect the step fraction to the boundary crossing.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let pos_tol = 1e-10 * domain.diameter();
    let mut last_inside = *p;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let qm = rk4_raw(field, p, mid * dt)?;
        if domain.contains(&qm, tol) {
            lo = mid;
            last_inside = qm;
        } else {
            hi = mid;
        }
        if (rk4_raw(field, p, hi * dt)? - last_inside).norm() <= pos_tol {
            break;
        }
    }
    Err(SurfaceError::LeftDomain { last_inside, exit_fraction: lo })
}

/// Quad mesh of a stream surface: vertex (i, j) is seed sample i advanced by
/// j time steps. Column j = 0 is the seed curve itself. Vertices keep their
/// originals for the proximity term and a validity flag for trimming.
#[derive(Debug, Clone)]
pub struct StreamSurfaceMesh {
    pub m: usize,
    pub n: usize,
    /// Signed time step: negative for backward-in-time surfaces.
    pub dt: f64,
    vertices: Vec<Vec3>,
    valid: Vec<bool>,
    original: Vec<Vec3>,
    pub seed: SeedCurve,
}

impl StreamSurfaceMesh {
    /// Build a mesh directly from row-major vertices (i outer, j inner);
    /// the current vertices double as the proximity originals.
    pub fn from_vertices(
        m: usize,
        n: usize,
        dt: f64,
        vertices: Vec<Vec3>,
        valid: Vec<bool>,
        seed: SeedCurve,
    ) -> Self {
        assert_eq!(vertices.len(), m * n);
        assert_eq!(valid.len(), m * n);
        StreamSurfaceMesh { m, n, dt, original: vertices.clone(), vertices, valid, seed }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    pub fn vertex(&self, i: usize, j: usize) -> Vec3 {
        self.vertices[self.idx(i, j)]
    }

    pub fn set_vertex(&mut self, i: usize, j: usize, v: Vec3) {
        let at = self.idx(i, j);
        self.vertices[at] = v;
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[self.idx(i, j)]
    }

    pub fn original(&self, i: usize, j: usize) -> Vec3 {
        self.original[self.idx(i, j)]
    }

    /// Reset the proximity anchors to the current vertices.
    pub fn rebase_original(&mut self) {
        self.original.copy_from_slice(&self.vertices);
    }

    pub fn time_of(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    /// Timeline j as (point, valid) pairs over the seed index i.
    pub fn timeline(&self, j: usize) -> Vec<(Vec3, bool)> {
        (0..self.m).map(|i| (self.vertex(i, j), self.is_valid(i, j))).collect()
    }

    /// Sum of the areas of fully valid quads, each split into two triangles.
    pub fn quad_area(&self) -> f64 {
        let mut area = 0.0;
        for i in 0..self.m.saturating_sub(1) {
            for j in 0..self.n.saturating_sub(1) {
                if self.is_valid(i, j)
                    && self.is_valid(i + 1, j)
                    && self.is_valid(i + 1, j + 1)
                    && self.is_valid(i, j + 1)
                {
                    let a = self.vertex(i, j);
                    let b = self.vertex(i + 1, j);
                    let c = self.vertex(i + 1, j + 1);
                    let d = self.vertex(i, j + 1);
                    area += 0.5 * (b - a).cross(&(c - a)).norm();
                    area += 0.5 * (c - a).cross(&(d - a)).norm();
                }
            }
        }
        area
    }

    /// Discrete surface normal at an interior vertex (central differences).
    pub fn normal(&self, i: usize, j: usize) -> Option<Vec3> {
        if i == 0 || j == 0 || i + 1 >= self.m || j + 1 >= self.n {
            return None;
        }
        for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (ii, jj) = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
            if !self.is_valid(ii, jj) {
                return None;
            }
        }
        let ds = self.vertex(i + 1, j) - self.vertex(i - 1, j);
        let dt = self.vertex(i, j + 1) - self.vertex(i, j - 1);
        let n = ds.cross(&dt);
        (n.norm() > 0.0).then(|| n.normalize())
    }
}

/// Advance every seed sample point through the field with constant-step RK4.
/// A timeline stops at the domain boundary (vertices beyond the exit are
/// flagged invalid) or at `max_steps`.
pub fn integrate_surface(
    field: &VectorField,
    seed: &SeedCurve,
    dt: f64,
    max_steps: usize,
) -> Result<StreamSurfaceMesh, SurfaceError> {
    let m = seed.points.len();
    if m < 2 {
        return Err(SurfaceError::EmptySurface);
    }
    let domain = field.domain;
    let tol = 1e-12 * domain.diameter();

    let columns: Vec<Vec<Vec3>> = seed
        .points
        .par_iter()
        .map(|p0| {
            let mut col = Vec::with_capacity(max_steps + 1);
            col.push(*p0);
            let mut p = *p0;
            for _ in 0..max_steps {
                match rk4_raw(field, &p, dt) {
                    Ok(q) if domain.contains(&q, tol) => {
                        col.push(q);
                        p = q;
                    }
                    _ => break,
                }
            }
            col
        })
        .collect();

    let n = columns.iter().map(Vec::len).max().unwrap_or(1);
    if n < 2 {
        return Err(SurfaceError::EmptySurface);
    }
    let mut vertices = vec![Vec3::zeros(); m * n];
    let mut valid = vec![false; m * n];
    for (i, col) in columns.iter().enumerate() {
        for j in 0..n {
            let at = i * n + j;
            if j < col.len() {
                vertices[at] = col[j];
                valid[at] = true;
            } else {
                // Keep the last in-domain point so invalid vertices carry a
                // harmless position.
                vertices[at] = *col.last().unwrap();
            }
        }
    }
    Ok(StreamSurfaceMesh {
        m,
        n,
        dt,
        original: vertices.clone(),
        vertices,
        valid,
        seed: seed.clone(),
    })
}

/// Timelines back-integrated to the initial time: entry `[j][i]` is vertex
/// (i, j) integrated against the flow for duration `j * dt`, or `None` when
/// the vertex was invalid or exited during back-integration.
pub fn back_integrate(
    field: &VectorField,
    mesh: &StreamSurfaceMesh,
) -> Vec<Vec<Option<Vec3>>> {
    let domain = field.domain;
    let tol = 1e-12 * domain.diameter();
    (0..mesh.n)
        .into_par_iter()
        .map(|j| {
            (0..mesh.m)
                .map(|i| {
                    if !mesh.is_valid(i, j) {
                        return None;
                    }
                    let mut p = mesh.vertex(i, j);
                    for _ in 0..j {
                        match rk4_raw(field, &p, -mesh.dt) {
                            Ok(q) if domain.contains(&q, tol) => p = q,
                            _ => return None,
                        }
                    }
                    Some(p)
                })
                .collect()
        })
        .collect()
}
