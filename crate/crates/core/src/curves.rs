//! Seed-curve generation: marching the multi-valued admissible direction
//! fields of the three candidate families with the trimming rules.
//!
//! A curve is marched from its seed in both directions with constant step
//! `h`, choosing at each point the admissible direction closest in angle to
//! the previous tangent. Integration stops when no admissible direction
//! remains, the total length reaches the domain diameter, or the domain (or
//! face) boundary would be crossed. Every stored point carries an admissible
//! unit tangent computed at that point.

use thiserror::Error;

use crate::field::{k_matrix, Face, FieldError, VectorField};
use crate::quadrics::{self, DirectionSet};
use crate::{Mat3, Vec3};

/// Accepted curves must reach a tenth of the domain diameter.
pub const MIN_LENGTH_FRACTION: f64 = 0.1;
/// Default marching step as a fraction of the domain diameter.
pub const DEFAULT_STEP_FRACTION: f64 = 0.01;
/// Continuation is abandoned when the best admissible direction turns by
/// more than 60 degrees: the tracked branch has collapsed.
const MIN_TURN_COS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("curve too short: length {length} below minimum {min}")]
    CurveTooShort { length: f64, min: f64 },
    #[error("no admissible direction at the seed")]
    NoAdmissibleDirection,
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveFamily {
    SecondOrder,
    FirstOrderBoundary,
    FirstOrderInterior,
}

impl CurveFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveFamily::SecondOrder => "second_order",
            CurveFamily::FirstOrderBoundary => "first_order_boundary",
            CurveFamily::FirstOrderInterior => "first_order_interior",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "second_order" | "second-order" => Some(CurveFamily::SecondOrder),
            "first_order_boundary" | "boundary" => Some(CurveFamily::FirstOrderBoundary),
            "first_order_interior" | "interior" => Some(CurveFamily::FirstOrderInterior),
            _ => None,
        }
    }
}

/// Arc-length sampled seed curve with per-point unit tangents.
#[derive(Debug, Clone)]
pub struct SeedCurve {
    pub points: Vec<Vec3>,
    pub tangents: Vec<Vec3>,
    pub h: f64,
    pub family: CurveFamily,
    pub seed_point: Vec3,
    pub seed_direction: Vec3,
    /// Face index (in `BoxDomain::faces()` order) for boundary curves.
    pub face: Option<usize>,
}

impl SeedCurve {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn segment_lengths(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).collect()
    }

    /// Rebuild a curve from an arbitrary polyline by resampling it to exact
    /// chord length `h`; tangents follow the chords. `None` when the
    /// polyline is shorter than one chord.
    pub fn from_polyline(
        polyline: &[Vec3],
        h: f64,
        family: CurveFamily,
        seed_point: Vec3,
        seed_direction: Vec3,
    ) -> Option<Self> {
        let points = resample_chords(polyline, h);
        if points.len() < 2 {
            return None;
        }
        let mut tangents: Vec<Vec3> =
            points.windows(2).map(|w| (w[1] - w[0]).normalize()).collect();
        let last = *tangents.last().unwrap();
        tangents.push(last);
        Some(SeedCurve {
            points,
            tangents,
            h,
            family,
            seed_point,
            seed_direction,
            face: None,
        })
    }
}

/// Resample a polyline into points with exact chord spacing `h` (the usual
/// sphere-marching construction).
pub fn resample_chords(polyline: &[Vec3], h: f64) -> Vec<Vec3> {
    if polyline.is_empty() || h <= 0.0 {
        return Vec::new();
    }
    let mut out = vec![polyline[0]];
    let mut seg = 0usize;
    let mut cursor = polyline[0];
    'place: loop {
        let q = *out.last().unwrap();
        let mut s = seg;
        let mut a = cursor;
        while s + 1 < polyline.len() {
            let b = polyline[s + 1];
            let d = b - a;
            let w = a - q;
            let aa = d.norm_squared();
            if aa > 0.0 {
                let bb = 2.0 * w.dot(&d);
                let cc = w.norm_squared() - h * h;
                let disc = bb * bb - 4.0 * aa * cc;
                if disc >= 0.0 {
                    // Outgoing crossing of the sphere of radius h around q.
                    let t = (-bb + disc.sqrt()) / (2.0 * aa);
                    if t > 0.0 && t <= 1.0 {
                        let p = a + d * t;
                        out.push(p);
                        seg = s;
                        cursor = p;
                        continue 'place;
                    }
                }
            }
            s += 1;
            a = b;
        }
        break;
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub enum IntegrationMode {
    SecondOrder,
    Boundary(Face),
    Interior,
}

impl IntegrationMode {
    fn family(&self) -> CurveFamily {
        match self {
            IntegrationMode::SecondOrder => CurveFamily::SecondOrder,
            IntegrationMode::Boundary(_) => CurveFamily::FirstOrderBoundary,
            IntegrationMode::Interior => CurveFamily::FirstOrderInterior,
        }
    }
}

/// Admissible direction set of the given family at a point.
pub fn admissible_set(
    field: &VectorField,
    p: &Vec3,
    mode: &IntegrationMode,
) -> Result<DirectionSet, FieldError> {
    let j = field.jacobian_unchecked(p)?;
    Ok(match mode {
        IntegrationMode::SecondOrder => {
            let k = k_matrix(&j);
            quadrics::second_order_vectors(&j, &k)
        }
        IntegrationMode::Boundary(face) => {
            quadrics::boundary_first_order(&j, &face.basis[0], &face.basis[1])
        }
        IntegrationMode::Interior => quadrics::first_order_cone(&j),
    })
}

/// One marching direction: points paired with the admissible tangent chosen
/// at them. Stops (without adding the offending point) at branch collapse,
/// the length budget, or the domain/face boundary.
fn march(
    field: &VectorField,
    mode: &IntegrationMode,
    start: Vec3,
    dir0: Vec3,
    h: f64,
    budget: f64,
) -> Result<Vec<(Vec3, Vec3)>, CurveError> {
    let domain = &field.domain;
    let tol = 1e-12 * domain.diameter();
    let max_pts = ((budget / h).ceil() as usize).saturating_add(2);
    let mut out: Vec<(Vec3, Vec3)> = Vec::new();
    let mut p = start;
    let mut prev = dir0;
    while out.len() < max_pts {
        let set = admissible_set(field, &p, mode)?;
        let Some(dir) = set.continue_from(&prev) else { break };
        if !out.is_empty() && dir.dot(&prev) < MIN_TURN_COS {
            break;
        }
        out.push((p, dir));
        if (out.len() as f64) * h > budget + 1e-9 * h {
            break;
        }
        let mut next = p + dir * h;
        if let IntegrationMode::Boundary(face) = mode {
            next[face.axis] = face.coordinate;
        }
        if !domain.contains(&next, tol) {
            break;
        }
        p = next;
        prev = dir;
    }
    Ok(out)
}

/// March the admissible direction field of `mode` through `seed` in both
/// `d0` directions and stitch the result into one arc-length sampled curve.
pub fn integrate_direction_field(
    field: &VectorField,
    seed: &Vec3,
    d0: &Vec3,
    mode: &IntegrationMode,
    h: f64,
) -> Result<SeedCurve, CurveError> {
    let diam = field.domain.diameter();
    let backward = march(field, mode, *seed, -d0, h, diam)?;
    if backward.is_empty() {
        return Err(CurveError::NoAdmissibleDirection);
    }
    let len_back = (backward.len() - 1) as f64 * h;
    let forward = march(field, mode, *seed, *d0, h, (diam - len_back).max(0.0))?;

    let mut points = Vec::with_capacity(backward.len() + forward.len().max(1) - 1);
    let mut tangents = Vec::with_capacity(backward.len() + forward.len().max(1) - 1);
    for (p, d) in backward.iter().skip(1).rev() {
        points.push(*p);
        tangents.push(-d);
    }
    for (p, d) in &forward {
        points.push(*p);
        tangents.push(*d);
    }

    let length = (points.len().saturating_sub(1)) as f64 * h;
    let min = diam * MIN_LENGTH_FRACTION;
    if length < min {
        return Err(CurveError::CurveTooShort { length, min });
    }
    let seed_direction = forward.first().map(|(_, d)| *d).unwrap_or(*d0);
    let face = match mode {
        IntegrationMode::Boundary(face) => Some(face.index()),
        _ => None,
    };
    Ok(SeedCurve {
        points,
        tangents,
        h,
        family: mode.family(),
        seed_point: *seed,
        seed_direction,
        face,
    })
}

/// All second-order curves emanating from a seed point; the empty list means
/// no second-order vectors exist there.
pub fn second_order_curve(
    field: &VectorField,
    seed: &Vec3,
    h: f64,
    cone_samples: usize,
) -> Vec<SeedCurve> {
    let mode = IntegrationMode::SecondOrder;
    let Ok(set) = admissible_set(field, seed, &mode) else {
        return Vec::new();
    };
    set.seed_directions(cone_samples)
        .iter()
        .filter_map(|d0| integrate_direction_field(field, seed, d0, &mode, h).ok())
        .collect()
}

/// First-order boundary curves across one face from a seed on it.
pub fn boundary_curve(field: &VectorField, face: &Face, seed: &Vec3, h: f64) -> Vec<SeedCurve> {
    let mode = IntegrationMode::Boundary(*face);
    let mut seed = *seed;
    seed[face.axis] = face.coordinate;
    let Ok(set) = admissible_set(field, &seed, &mode) else {
        return Vec::new();
    };
    set.seed_directions(2)
        .iter()
        .filter_map(|d0| integrate_direction_field(field, &seed, d0, &mode, h).ok())
        .collect()
}

/// Curvature-minimising first-order interior curve: each step projects the
/// previous tangent onto the first-order cone at the new point.
pub fn interior_curve(
    field: &VectorField,
    seed: &Vec3,
    d0: &Vec3,
    h: f64,
) -> Result<SeedCurve, CurveError> {
    integrate_direction_field(field, seed, d0, &IntegrationMode::Interior, h)
}

fn residual_on(field: &VectorField, curve: &SeedCurve, form_of: impl Fn(&Mat3) -> Mat3) -> f64 {
    let mut worst = 0f64;
    for (p, u) in curve.points.iter().zip(&curve.tangents) {
        if let Ok(j) = field.jacobian_unchecked(p) {
            worst = worst.max(quadrics::qform(&form_of(&j), u).abs());
        }
    }
    worst
}

/// Largest pointwise |u J+ u| along the curve.
pub fn max_first_order_residual(field: &VectorField, curve: &SeedCurve) -> f64 {
    residual_on(field, curve, |j| crate::field::sym_part(j))
}

/// Largest pointwise |u K+ u| along the curve.
pub fn max_second_order_residual(field: &VectorField, curve: &SeedCurve) -> f64 {
    residual_on(field, curve, |j| crate::field::sym_part(&k_matrix(j)))
}
