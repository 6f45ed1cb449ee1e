//! Discrete curve and surface energies: the arc-length Taylor coefficients,
//! first- and second-order strain energies, the four alternative ranking
//! energies with the combined ranking, and the surface strain energy.
//!
//! All curve integrals use trapezoidal quadrature over the sample points
//! with the actual segment lengths as weights.

use thiserror::Error;

use crate::curves::SeedCurve;
use crate::field::{k_matrix, sym_part, FieldError, VectorField};
use crate::quadrics::qform;
use crate::surface::StreamSurfaceMesh;
use crate::{Mat3, Vec3};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("curve has fewer than two points or zero length")]
    ZeroLengthCurve,
    #[error("zero velocity on curve: inward energy undefined")]
    ZeroVelocityOnCurve,
    #[error("inward-normal weight set but the curve has no boundary face")]
    MissingNormal,
    #[error("degenerate mesh: no valid area")]
    DegenerateMesh,
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Energies of one curve (or surface) used for ranking and reporting.
#[derive(Debug, Clone, Default)]
pub struct EnergyReport {
    pub c1: f64,
    pub c2: f64,
    pub e1: f64,
    pub e2: f64,
    /// Only boundary curves have an inward normal.
    pub e_in: Option<f64>,
    pub e_ortho: f64,
    pub e_para: f64,
    pub e_rigid: f64,
    pub weights: [f64; 4],
    /// Combined ranking energy for the stored weights.
    pub combined: f64,
    pub e_s: Option<f64>,
    pub area: Option<f64>,
}

/// Best-fit instantaneous rigid motion along a curve.
#[derive(Debug, Clone, Copy)]
pub struct RigidMotion {
    pub angular: Vec3,
    pub translational: Vec3,
}

impl RigidMotion {
    pub fn velocity_at(&self, p: &Vec3) -> Vec3 {
        self.translational + self.angular.cross(p)
    }
}

/// Trapezoid weights from segment lengths: half the adjacent segments.
fn trapezoid_weights(points: &[Vec3]) -> (Vec<f64>, f64) {
    let n = points.len();
    let mut w = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n.saturating_sub(1) {
        let ds = (points[i + 1] - points[i]).norm();
        w[i] += 0.5 * ds;
        w[i + 1] += 0.5 * ds;
        total += ds;
    }
    (w, total)
}

fn require_curve(points: &[Vec3]) -> Result<(), EnergyError> {
    if points.len() < 2 {
        return Err(EnergyError::ZeroLengthCurve);
    }
    Ok(())
}

/// Weighted integral of a pointwise quantity along a polyline; also returns
/// the length.
fn integrate_points(
    points: &[Vec3],
    mut f: impl FnMut(usize, &Vec3) -> Result<f64, EnergyError>,
) -> Result<(f64, f64), EnergyError> {
    require_curve(points)?;
    let (w, total) = trapezoid_weights(points);
    if total <= 0.0 {
        return Err(EnergyError::ZeroLengthCurve);
    }
    let mut sum = 0.0;
    for (i, p) in points.iter().enumerate() {
        sum += w[i] * f(i, p)?;
    }
    Ok((sum, total))
}

/// Arc-length Taylor coefficients of a curve advected by the field:
/// the first-order term integrates `u J u`, the second-order term uses the
/// symmetric K form identity for the timeline acceleration.
pub fn taylor_coeffs(field: &VectorField, curve: &SeedCurve) -> Result<(f64, f64), EnergyError> {
    let (c1, _) = integrate_points(&curve.points, |i, p| {
        let j = field.jacobian(p)?;
        Ok(qform(&j, &curve.tangents[i]))
    })?;
    let (c2, _) = integrate_points(&curve.points, |i, p| {
        let j = field.jacobian(p)?;
        let u = &curve.tangents[i];
        let kp = sym_part(&k_matrix(&j));
        let f1 = qform(&j, u);
        Ok(qform(&kp, u) - f1 * f1)
    })?;
    Ok((c1, c2))
}

/// First-order strain energy: length-normalised integral of `(u J u)^2`.
pub fn e1(field: &VectorField, curve: &SeedCurve) -> Result<f64, EnergyError> {
    let (sum, len) = integrate_points(&curve.points, |i, p| {
        let j = field.jacobian(p)?;
        let f = qform(&j, &curve.tangents[i]);
        Ok(f * f)
    })?;
    Ok(sum / len)
}

/// Second-order strain energy: length-normalised integral of `(u K+ u)^2`.
pub fn e2(field: &VectorField, curve: &SeedCurve) -> Result<f64, EnergyError> {
    let (sum, len) = integrate_points(&curve.points, |i, p| {
        let j = field.jacobian(p)?;
        let kp = sym_part(&k_matrix(&j));
        let f = qform(&kp, &curve.tangents[i]);
        Ok(f * f)
    })?;
    Ok(sum / len)
}

/// Least-squares fit of an instantaneous rigid motion to point velocities
/// with the given weights.
pub fn fit_rigid_motion(points: &[Vec3], velocities: &[Vec3], weights: &[f64]) -> RigidMotion {
    // Unknowns (angular; translational): residual rows are
    //   -[p]_x * angular + translational - v.
    let mut normal = nalgebra::SMatrix::<f64, 6, 6>::zeros();
    let mut rhs = nalgebra::SVector::<f64, 6>::zeros();
    for ((p, v), &w) in points.iter().zip(velocities).zip(weights) {
        let px = Mat3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0);
        let mut a = nalgebra::SMatrix::<f64, 3, 6>::zeros();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-px));
        a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
        normal += a.transpose() * a * w;
        rhs += a.transpose() * v * w;
    }
    // Tiny ridge keeps rank-deficient fits (short or straight curves) solvable.
    let ridge = 1e-14 * (1.0 + normal.trace());
    for i in 0..6 {
        normal[(i, i)] += ridge;
    }
    let sol = normal.lu().solve(&rhs).unwrap_or_else(nalgebra::SVector::<f64, 6>::zeros);
    RigidMotion {
        angular: Vec3::new(sol[0], sol[1], sol[2]),
        translational: Vec3::new(sol[3], sol[4], sol[5]),
    }
}

/// The four alternative ranking energies. `inward_normal` must be given for
/// curves on a boundary face; the inward energy is skipped otherwise.
pub fn alt_energies(
    field: &VectorField,
    curve: &SeedCurve,
    inward_normal: Option<Vec3>,
) -> Result<(Option<f64>, f64, f64, f64), EnergyError> {
    let e_in = match inward_normal {
        Some(m) => {
            let (sum, len) = integrate_points(&curve.points, |_, p| {
                let v = field.eval(p)?;
                let speed = v.norm();
                if speed == 0.0 {
                    return Err(EnergyError::ZeroVelocityOnCurve);
                }
                let cos = v.dot(&m) / speed;
                Ok(1.0 - cos * cos)
            })?;
            Some(sum / len)
        }
        None => None,
    };

    let (sum, len) = integrate_points(&curve.points, |i, p| {
        let v = field.eval(p)?;
        let d = v.dot(&curve.tangents[i]);
        Ok(d * d)
    })?;
    let e_ortho = sum / len;

    let (sum, len) = integrate_points(&curve.points, |i, p| {
        let j = field.jacobian(p)?;
        let ju = j * curve.tangents[i];
        let f = ju.norm_squared();
        Ok(f * f)
    })?;
    let e_para = sum / len;

    // Rigid fit, then the length-normalised fit residual.
    let velocities: Result<Vec<Vec3>, FieldError> =
        curve.points.iter().map(|p| field.eval(p)).collect();
    let velocities = velocities?;
    let (w, _) = trapezoid_weights(&curve.points);
    let motion = fit_rigid_motion(&curve.points, &velocities, &w);
    let (sum, len) = integrate_points(&curve.points, |i, p| {
        Ok((motion.velocity_at(p) - velocities[i]).norm_squared())
    })?;
    let e_rigid = sum / len;

    Ok((e_in, e_ortho, e_para, e_rigid))
}

/// Combined ranking energy: weighted alternative energies plus the
/// second-order strain energy.
pub fn combined_ranking(report: &EnergyReport, w: &[f64; 4]) -> Result<f64, EnergyError> {
    let e_in_term = match (report.e_in, w[0]) {
        (_, w1) if w1 == 0.0 => 0.0,
        (Some(e_in), w1) => w1 * e_in,
        (None, _) => return Err(EnergyError::MissingNormal),
    };
    Ok(e_in_term + w[1] * report.e_ortho + w[2] * report.e_para + w[3] * report.e_rigid + report.e2)
}

/// Full per-curve report with the combined ranking for the given weights.
pub fn curve_report(
    field: &VectorField,
    curve: &SeedCurve,
    weights: &[f64; 4],
) -> Result<EnergyReport, EnergyError> {
    let (c1, c2) = taylor_coeffs(field, curve)?;
    let e1v = e1(field, curve)?;
    let e2v = e2(field, curve)?;
    let inward = curve
        .face
        .map(|f| field.domain.faces()[f].inward_normal);
    let (e_in, e_ortho, e_para, e_rigid) = alt_energies(field, curve, inward)?;
    let mut report = EnergyReport {
        c1,
        c2,
        e1: e1v,
        e2: e2v,
        e_in,
        e_ortho,
        e_para,
        e_rigid,
        weights: *weights,
        combined: 0.0,
        e_s: None,
        area: None,
    };
    report.combined = combined_ranking(&report, weights)?;
    Ok(report)
}

/// First-order strain energy of a polyline with finite-difference tangents
/// (used for mesh timelines, which are not arc-length parameterised).
/// Returns the unnormalised integral and the length.
pub fn e1_polyline_integral(
    field: &VectorField,
    points: &[Vec3],
) -> Result<(f64, f64), EnergyError> {
    require_curve(points)?;
    let n = points.len();
    let mut tangents = Vec::with_capacity(n);
    for i in 0..n {
        let d = if i == 0 {
            points[1] - points[0]
        } else if i + 1 == n {
            points[n - 1] - points[n - 2]
        } else {
            points[i + 1] - points[i - 1]
        };
        let norm = d.norm();
        if norm == 0.0 {
            return Err(EnergyError::ZeroLengthCurve);
        }
        tangents.push(d / norm);
    }
    integrate_points(points, |i, p| {
        let j = field.jacobian_unchecked(p)?;
        let f = qform(&j, &tangents[i]);
        Ok(f * f)
    })
}

/// Surface strain energy: area-normalised time integral (trapezoid over the
/// timelines) of the per-timeline first-order strain energy. Invalid
/// vertices contribute neither to the timeline energies nor to the area.
pub fn e_surface(field: &VectorField, mesh: &StreamSurfaceMesh) -> Result<(f64, f64), EnergyError> {
    let area = mesh.quad_area();
    if area <= 0.0 {
        return Err(EnergyError::DegenerateMesh);
    }
    // Per-timeline energies over maximal valid runs.
    let mut timeline_e1: Vec<Option<f64>> = Vec::with_capacity(mesh.n);
    for j in 0..mesh.n {
        let line = mesh.timeline(j);
        let mut sum = 0.0;
        let mut len = 0.0;
        let mut run: Vec<Vec3> = Vec::new();
        let flush = |run: &mut Vec<Vec3>, sum: &mut f64, len: &mut f64| {
            if run.len() >= 2 {
                if let Ok((s, l)) = e1_polyline_integral(field, run) {
                    *sum += s;
                    *len += l;
                }
            }
            run.clear();
        };
        for (p, ok) in line {
            if ok {
                run.push(p);
            } else {
                flush(&mut run, &mut sum, &mut len);
            }
        }
        flush(&mut run, &mut sum, &mut len);
        timeline_e1.push((len > 0.0).then_some(sum / len));
    }
    // Trapezoid in time over the leading run of computable timelines.
    let dt = mesh.dt.abs();
    let mut numerator = 0.0;
    let mut prev: Option<f64> = None;
    for e in &timeline_e1 {
        match (prev, e) {
            (Some(a), Some(b)) => numerator += 0.5 * (a + b) * dt,
            (None, Some(_)) => {}
            (_, None) => break,
        }
        prev = *e;
    }
    Ok((numerator / area, area))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::{interior_curve, CurveFamily};
    use crate::field::{catalogue, FieldSpec};
    use crate::surface::integrate_surface;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn straight_seed(from: Vec3, dir: Vec3, h: f64, count: usize) -> SeedCurve {
        let points: Vec<Vec3> = (0..count).map(|i| from + dir * (h * i as f64)).collect();
        SeedCurve {
            points,
            tangents: vec![dir; count],
            h,
            family: CurveFamily::FirstOrderInterior,
            seed_point: from,
            seed_direction: dir,
            face: None,
        }
    }

    fn unit_segment_x() -> SeedCurve {
        straight_seed(Vec3::zeros(), Vec3::x(), 0.01, 101)
    }

    #[test]
    fn taylor_coefficients_hand_oracle() {
        // v = (x, y, -2z) along the x axis: c1 = c2 = 1, length e^t.
        let field = FieldSpec::parse("expr:x;y;-2*z").unwrap().build(None, None).unwrap();
        let curve = unit_segment_x();
        let (c1, c2) = taylor_coeffs(&field, &curve).unwrap();
        assert_relative_eq!(c1, 1.0, epsilon = 1e-10);
        assert_relative_eq!(c2, 1.0, epsilon = 1e-10);

        // Reconstruction with the halved second coefficient matches e^t.
        for t in [1e-2, 1e-3] {
            let predicted = 1.0 + c1 * t + 0.5 * c2 * t * t;
            assert!((predicted - t.exp()).abs() <= t * t * t);
        }
    }

    #[test]
    fn taylor_zero_for_rotation_and_constant() {
        let rot = catalogue::rotation(Vec3::z());
        let curve = straight_seed(Vec3::new(0.1, -0.3, 0.2), Vec3::new(0.6, 0.8, 0.0), 0.01, 50);
        let (c1, c2) = taylor_coeffs(&rot, &curve).unwrap();
        assert!(c1.abs() < 1e-14 && c2.abs() < 1e-14);

        let cst = catalogue::constant(Vec3::new(1.0, 2.0, 0.5));
        let curve = straight_seed(Vec3::new(0.1, 0.3, 0.2), Vec3::new(0.0, 0.6, 0.8), 0.01, 50);
        let (c1, c2) = taylor_coeffs(&cst, &curve).unwrap();
        assert_eq!((c1, c2), (0.0, 0.0));
    }

    #[test]
    fn e1_examples() {
        let field = FieldSpec::parse("expr:x;y;-2*z").unwrap().build(None, None).unwrap();
        assert_relative_eq!(e1(&field, &unit_segment_x()).unwrap(), 1.0, epsilon = 1e-12);

        let fig3 = catalogue::fig3();
        let h = 0.01 * fig3.domain.diameter();
        let curve = interior_curve(
            &fig3,
            &Vec3::new(0.4, 0.4, 0.4),
            &(Vec3::new(1.0, 1.0, 1.0) / 3f64.sqrt()),
            h,
        )
        .unwrap();
        assert!(e1(&fig3, &curve).unwrap() <= 1e-16);

        let rot = catalogue::rotation(Vec3::z());
        let chord = straight_seed(Vec3::new(0.0, -0.5, 0.0), Vec3::x(), 0.01, 60);
        assert_eq!(e1(&rot, &chord).unwrap(), 0.0);
    }

    #[test]
    fn e2_examples() {
        let field = FieldSpec::parse("expr:x;y;-2*z").unwrap().build(None, None).unwrap();
        let d = Vec3::new(2f64.sqrt(), 0.0, 1.0) / 3f64.sqrt();
        let curve = straight_seed(Vec3::new(0.2, 0.5, 0.2), d, 0.005, 80);
        assert_relative_eq!(e2(&field, &curve).unwrap(), 16.0, epsilon = 1e-10);

        let rot = catalogue::rotation(Vec3::z());
        let chord = straight_seed(Vec3::new(0.0, -0.5, 0.0), Vec3::x(), 0.01, 60);
        assert_eq!(e2(&rot, &chord).unwrap(), 0.0);
    }

    #[test]
    fn zero_length_curve_rejected() {
        let field = catalogue::constant(Vec3::x());
        let degenerate = SeedCurve {
            points: vec![Vec3::new(0.5, 0.5, 0.5)],
            tangents: vec![Vec3::x()],
            h: 0.01,
            family: CurveFamily::FirstOrderInterior,
            seed_point: Vec3::new(0.5, 0.5, 0.5),
            seed_direction: Vec3::x(),
            face: None,
        };
        assert!(matches!(e1(&field, &degenerate), Err(EnergyError::ZeroLengthCurve)));
    }

    fn arc_curve() -> SeedCurve {
        // Non-collinear samples pin the rigid motion; velocities on a
        // straight line leave a screw about that line free.
        let points: Vec<Vec3> = (0..40)
            .map(|i| {
                let a = 0.04 * i as f64;
                Vec3::new(0.5 * a.cos(), 0.5 * a.sin(), 0.2)
            })
            .collect();
        let tangents: Vec<Vec3> = points
            .windows(2)
            .map(|w| (w[1] - w[0]).normalize())
            .chain(std::iter::once(Vec3::y()))
            .collect();
        SeedCurve {
            seed_point: points[0],
            seed_direction: tangents[0],
            points,
            tangents,
            h: 0.02,
            family: CurveFamily::FirstOrderInterior,
            face: None,
        }
    }

    #[test]
    fn rigid_motion_recovers_rotation() {
        let rot = catalogue::rotation(Vec3::z());
        let curve = arc_curve();
        let (e_in, e_ortho, e_para, e_rigid) = alt_energies(&rot, &curve, None).unwrap();
        assert!(e_in.is_none());
        assert!(e_rigid.abs() <= 1e-20);
        let velocities: Vec<Vec3> =
            curve.points.iter().map(|p| rot.eval(p).unwrap()).collect();
        let (w, _) = trapezoid_weights(&curve.points);
        let motion = fit_rigid_motion(&curve.points, &velocities, &w);
        assert!((motion.angular - Vec3::z()).norm() <= 1e-8);
        assert!(motion.translational.norm() <= 1e-8);
        // Sanity on the remaining energies.
        assert!(e_ortho >= 0.0 && e_para >= 0.0);
    }

    #[test]
    fn rigid_fit_is_optimal() {
        let field = catalogue::fig3();
        let h = 0.01 * field.domain.diameter();
        let curve = interior_curve(
            &field,
            &Vec3::new(0.4, 0.5, 0.4),
            &(Vec3::new(1.0, 1.0, 1.0) / 3f64.sqrt()),
            h,
        )
        .unwrap();
        let velocities: Vec<Vec3> =
            curve.points.iter().map(|p| field.eval(p).unwrap()).collect();
        let (w, _) = trapezoid_weights(&curve.points);
        let motion = fit_rigid_motion(&curve.points, &velocities, &w);
        let residual = |m: &RigidMotion| -> f64 {
            curve
                .points
                .iter()
                .zip(&velocities)
                .zip(&w)
                .map(|((p, v), wi)| wi * (m.velocity_at(p) - v).norm_squared())
                .sum()
        };
        let base = residual(&motion);
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..50 {
            let delta = Vec3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            )
            .normalize()
                * 1e-3;
            let perturbed = RigidMotion {
                angular: motion.angular + delta,
                translational: motion.translational - delta * 0.3,
            };
            assert!(residual(&perturbed) >= base - 1e-15);
        }
    }

    #[test]
    fn ortho_para_vanish_for_transverse_constant_flow() {
        let field = catalogue::constant(Vec3::x());
        let curve = straight_seed(Vec3::new(0.5, 0.0, 0.5), Vec3::y(), 0.01, 80);
        let (_, e_ortho, e_para, _) = alt_energies(&field, &curve, None).unwrap();
        assert_eq!(e_ortho, 0.0);
        assert_eq!(e_para, 0.0);
    }

    #[test]
    fn inward_energy_zero_for_inward_flow() {
        let field = FieldSpec::parse("expr:0;1;0").unwrap().build(None, None).unwrap();
        let curve = straight_seed(Vec3::new(0.2, 0.0, 0.5), Vec3::x(), 0.01, 60);
        let m = Vec3::y(); // inward normal of the y = 0 face
        let (e_in, ..) = alt_energies(&field, &curve, Some(m)).unwrap();
        assert_eq!(e_in, Some(0.0));
    }

    #[test]
    fn combined_ranking_weights() {
        let report = EnergyReport {
            e2: 0.25,
            e_in: Some(0.5),
            e_ortho: 2.0,
            e_para: 3.0,
            e_rigid: 4.0,
            ..Default::default()
        };
        assert_eq!(combined_ranking(&report, &[0.0; 4]).unwrap(), 0.25);
        assert_eq!(combined_ranking(&report, &[0.0, 0.0, 0.0, 1.0]).unwrap(), 4.25);
        assert_eq!(combined_ranking(&report, &[0.0, 1.0, 0.0, 0.0]).unwrap(), 2.25);
        let no_normal = EnergyReport { e_in: None, ..report };
        assert!(matches!(
            combined_ranking(&no_normal, &[1.0, 0.0, 0.0, 0.0]),
            Err(EnergyError::MissingNormal)
        ));
        assert_eq!(combined_ranking(&no_normal, &[0.0, 0.0, 0.0, 0.0]).unwrap(), 0.25);
    }

    #[test]
    fn surface_energy_zero_for_rotation() {
        let rot = catalogue::rotation(Vec3::z());
        let seed = straight_seed(Vec3::new(0.3, 0.0, 0.0), Vec3::x(), 0.05, 7);
        let mesh = integrate_surface(&rot, &seed, 0.02, 30).unwrap();
        let (es, area) = e_surface(&rot, &mesh).unwrap();
        assert!(es.abs() < 1e-25, "E_S = {es:e}");
        assert!(area > 0.0);
    }

    #[test]
    fn surface_energy_single_interval_by_hand() {
        // 2x2 mesh in v = (x, y, -2z): one time interval, two timelines.
        let field = FieldSpec::parse("expr:x;y;-2*z").unwrap().build(None, None).unwrap();
        let seed = straight_seed(Vec3::new(0.2, 0.5, 0.5), Vec3::x(), 0.3, 2);
        let dt = 0.05;
        let mesh = integrate_surface(&field, &seed, dt, 1).unwrap();
        assert_eq!((mesh.m, mesh.n), (2, 2));
        let (es, area) = e_surface(&field, &mesh).unwrap();

        let line0: Vec<Vec3> = vec![mesh.vertex(0, 0), mesh.vertex(1, 0)];
        let line1: Vec<Vec3> = vec![mesh.vertex(0, 1), mesh.vertex(1, 1)];
        let (s0, l0) = e1_polyline_integral(&field, &line0).unwrap();
        let (s1, l1) = e1_polyline_integral(&field, &line1).unwrap();
        let expect = 0.5 * (s0 / l0 + s1 / l1) * dt / area;
        assert_relative_eq!(es, expect, epsilon = 1e-14);
        // Both timelines run along x where uJu = 1, so E1 = 1 each.
        assert_relative_eq!(s0 / l0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_converges_second_order() {
        // E1 error halves quadratically with sample density on a curved
        // curve in a smooth field.
        let field = catalogue::fig3();
        let e1_at = |n: usize| -> f64 {
            let pts: Vec<Vec3> = (0..=n)
                .map(|i| {
                    let a = std::f64::consts::FRAC_PI_2 * i as f64 / n as f64;
                    Vec3::new(0.4 + 0.3 * a.cos(), 0.4 + 0.3 * a.sin(), 0.5)
                })
                .collect();
            let (sum, len) = e1_polyline_integral(&field, &pts).unwrap();
            sum / len
        };
        let reference = e1_at(4096);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for n in [32usize, 64, 128, 256] {
            xs.push((1.0 / n as f64).ln());
            ys.push((e1_at(n) - reference).abs().ln());
        }
        let nn = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / nn;
        let my = ys.iter().sum::<f64>() / nn;
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        assert!(num / den >= 1.9, "slope {}", num / den);
    }

    #[test]
    fn k_identity_matches_flow_derivative() {
        // Finite-difference d/ds of Jv along circular arcs in random
        // traceless linear fields matches the K-form identity to O(h^2).
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..20 {
            let mut a = Mat3::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0);
            let tr = a.trace() / 3.0;
            for i in 0..3 {
                a[(i, i)] -= tr;
            }
            let field = crate::field::VectorField::new(
                crate::field::FieldBacking::Linear { a, b: Vec3::zeros() },
                crate::field::BoxDomain::symmetric_unit(),
                false,
                "test-linear",
            );
            let radius = 0.4;
            let err_at = |h: f64| -> f64 {
                let steps = (std::f64::consts::PI * radius / h) as usize;
                let pts: Vec<Vec3> = (0..steps)
                    .map(|i| {
                        let s = h * i as f64 / radius;
                        Vec3::new(radius * s.cos(), radius * s.sin(), 0.1)
                    })
                    .collect();
                let mut worst = 0f64;
                for i in 1..pts.len() - 1 {
                    let u = (pts[i + 1] - pts[i - 1]).normalize();
                    let j = field.jacobian_unchecked(&pts[i]).unwrap();
                    let jv_next = field.jacobian_unchecked(&pts[i + 1]).unwrap()
                        * field.eval_unchecked(&pts[i + 1]).unwrap();
                    let jv_prev = field.jacobian_unchecked(&pts[i - 1]).unwrap()
                        * field.eval_unchecked(&pts[i - 1]).unwrap();
                    let ds = (pts[i + 1] - pts[i - 1]).norm();
                    let dds = (jv_next - jv_prev) / ds;
                    let lhs = (j * u).norm_squared() + u.dot(&dds);
                    let kp = sym_part(&k_matrix(&j));
                    worst = worst.max((lhs - qform(&kp, &u)).abs());
                }
                worst
            };
            let e1v = err_at(0.02);
            let e2v = err_at(0.01);
            assert!(e1v <= 1e-4, "identity error {e1v:e}");
            let slope = (e1v / e2v).log2();
            assert!(slope >= 1.9 || e2v < 1e-12, "slope {slope}");
        }
    }

    #[test]
    fn taylor_reconstruction_slope_on_linear_fields() {
        // Straight seeds in diagonal linear fields: trapezoid is exact and
        // the cubic remainder drives the fit.
        let mut rng = StdRng::seed_from_u64(44);
        for _ in 0..10 {
            let a = rng.random::<f64>() * 1.5 + 0.2;
            let b = rng.random::<f64>() * 1.2 - 0.6;
            let c = -a - b;
            let field = catalogue::linear_diag(a, b, c).unwrap();
            let dir = {
                let v = Vec3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                );
                v.normalize()
            };
            let curve = straight_seed(Vec3::new(-0.3, -0.2, -0.1), dir, 0.01, 60);
            let l0 = curve.length();
            let (c1, c2) = taylor_coeffs(&field, &curve).unwrap();

            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for e in [-2.0f64, -2.5, -3.0, -3.5] {
                let t = 10f64.powf(e);
                let w = Vec3::new(
                    dir.x * (a * t).exp(),
                    dir.y * (b * t).exp(),
                    dir.z * (c * t).exp(),
                );
                let exact = l0 * w.norm();
                let err = (exact - (l0 + c1 * t + 0.5 * c2 * t * t)).abs();
                if err < 1e-15 {
                    continue;
                }
                xs.push(t.ln());
                ys.push(err.ln());
            }
            if xs.len() < 3 {
                continue;
            }
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            assert!(num / den >= 2.7, "slope {}", num / den);
        }
    }

    #[test]
    fn convention_pinning_shear_oracle() {
        // Non-normal shear A = [[0,2,0],[0,0,0],[0,0,0]], u = (1,2,0)/sqrt(5):
        // the exact second length derivative is 64/25 and distinguishes
        // K = J^T J + J^2 from its transpose-convention variant.
        let field = FieldSpec::parse("expr:2*y;0;0").unwrap().build(None, None).unwrap();
        let dir = Vec3::new(1.0, 2.0, 0.0) / 5f64.sqrt();
        let curve = straight_seed(Vec3::new(0.1, 0.1, 0.5), dir, 0.01, 40);
        let (c1, c2) = taylor_coeffs(&field, &curve).unwrap();
        assert_relative_eq!(c1, curve.length() * 0.8, epsilon = 1e-12);
        assert_relative_eq!(c2 / curve.length(), 64.0 / 25.0, epsilon = 1e-12);
    }
}
