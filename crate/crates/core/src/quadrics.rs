//! Pointwise direction solves on quadratic forms: signature classification,
//! the first-order cone, its restriction to boundary tangent planes, the
//! cone-cone intersection via the pencil of quadrics, and nearest-point
//! projection onto a cone.
//!
//! All solves work on symmetric forms normalised to unit Frobenius norm, so
//! tolerances are scale-invariant. Directions are projective: every returned
//! vector is unit and antipodal representatives are deduplicated.

use thiserror::Error;

use crate::field::sym_part;
use crate::{Mat3, Vec3};

/// Relative eigenvalue threshold below which a form eigenvalue counts as
/// zero. Separates the measure-zero singular signatures from rounding noise.
pub const EPS_SIG: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum QuadricsError {
    #[error("form is definite: no cone of self-conjugate directions exists")]
    NoConeExists,
}

/// Signature classes of a symmetric 3×3 form, by counts of positive,
/// negative and (thresholded) zero eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignatureClass {
    /// (+,+,-) or (+,-,-): a quadratic cone.
    Cone,
    /// (+,+,+) or (-,-,-): only the apex solves the form.
    Definite,
    /// (+,-,0): two planes meeting in a line.
    PlanePair,
    /// (+,0,0) or (-,0,0): one (double) plane.
    DoublePlane,
    /// (+,+,0) or (-,-,0): a single line.
    Line,
    /// (0,0,0): every direction solves the form.
    AllSpace,
}

/// Solution set of one or two quadratic-form conditions on unit directions.
#[derive(Debug, Clone)]
pub enum DirectionSet {
    /// Full quadric cone; carries the symmetric form.
    Cone(Mat3),
    /// Finitely many unit directions, antipodes deduplicated.
    FinitelyMany(Vec<Vec3>),
    /// Union of two planes given by their unit normals (equal normals encode
    /// a single plane of admissible directions).
    PlanePair(Vec3, Vec3),
    /// A single direction line.
    Line(Vec3),
    AllSpace,
    Empty,
}

impl DirectionSet {
    pub fn is_empty(&self) -> bool {
        match self {
            DirectionSet::Empty => true,
            DirectionSet::FinitelyMany(v) => v.is_empty(),
            _ => false,
        }
    }

    /// Representative directions to launch curve integrations from.
    pub fn seed_directions(&self, cone_samples: usize) -> Vec<Vec3> {
        match self {
            DirectionSet::Cone(form) => sample_cone_directions(form, cone_samples),
            DirectionSet::FinitelyMany(dirs) => dirs.clone(),
            DirectionSet::PlanePair(na, nb) => {
                let mut dirs = plane_basis_dirs(na);
                if (na - nb).norm() > 1e-9 && (na + nb).norm() > 1e-9 {
                    dirs.extend(plane_basis_dirs(nb));
                }
                dirs.iter().map(canonical_dir).collect()
            }
            DirectionSet::Line(d) => vec![*d],
            DirectionSet::AllSpace => vec![Vec3::x(), Vec3::y(), Vec3::z()],
            DirectionSet::Empty => Vec::new(),
        }
    }

    /// Admissible direction minimising the angle to `prev`, oriented along
    /// it. `None` when the set is empty.
    pub fn continue_from(&self, prev: &Vec3) -> Option<Vec3> {
        match self {
            DirectionSet::Cone(form) => project_to_cone(prev, form).ok(),
            DirectionSet::FinitelyMany(dirs) => {
                let best = dirs
                    .iter()
                    .max_by(|a, b| {
                        let (fa, fb) = (prev.dot(a).abs(), prev.dot(b).abs());
                        fa.partial_cmp(&fb).unwrap()
                    })?
                    .to_owned();
                Some(orient_along(&best, prev))
            }
            DirectionSet::PlanePair(na, nb) => Some(project_plane_pair(prev, na, nb)),
            DirectionSet::Line(d) => Some(orient_along(d, prev)),
            DirectionSet::AllSpace => Some(*prev),
            DirectionSet::Empty => None,
        }
    }
}

/// Quadratic form value `d M d`.
pub fn qform(m: &Mat3, d: &Vec3) -> f64 {
    d.dot(&(m * d))
}

/// Eigenvalues (ascending) and matching unit eigenvectors of a symmetric form.
pub fn sym_eigen(form: &Mat3) -> (Vec3, Mat3) {
    let se = nalgebra::linalg::SymmetricEigen::new(*form);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let evals = Vec3::new(
        se.eigenvalues[order[0]],
        se.eigenvalues[order[1]],
        se.eigenvalues[order[2]],
    );
    let evecs = Mat3::from_columns(&[
        se.eigenvectors.column(order[0]).into_owned(),
        se.eigenvectors.column(order[1]).into_owned(),
        se.eigenvectors.column(order[2]).into_owned(),
    ]);
    (evals, evecs)
}

fn signature_counts(evals: &Vec3, eps_sig: f64) -> (usize, usize, usize) {
    let scale = evals.iter().fold(0f64, |m, v| m.max(v.abs()));
    let (mut pos, mut neg, mut zero) = (0, 0, 0);
    for &v in evals.iter() {
        if scale == 0.0 || v.abs() <= eps_sig * scale {
            zero += 1;
        } else if v > 0.0 {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    (pos, neg, zero)
}

/// Classify the signature of a symmetric form; eigenvalues with magnitude at
/// most `eps_sig` times the spectral norm count as zero.
pub fn classify(form: &Mat3, eps_sig: f64) -> SignatureClass {
    let (evals, _) = sym_eigen(form);
    classify_evals(&evals, eps_sig)
}

fn classify_evals(evals: &Vec3, eps_sig: f64) -> SignatureClass {
    match signature_counts(evals, eps_sig) {
        (0, 0, 3) => SignatureClass::AllSpace,
        (3, 0, 0) | (0, 3, 0) => SignatureClass::Definite,
        (2, 1, 0) | (1, 2, 0) => SignatureClass::Cone,
        (1, 1, 1) => SignatureClass::PlanePair,
        (2, 0, 1) | (0, 2, 1) => SignatureClass::Line,
        (1, 0, 2) | (0, 1, 2) => SignatureClass::DoublePlane,
        _ => unreachable!(),
    }
}

/// Canonical projective representative: flips the sign so the component of
/// largest magnitude is positive.
pub fn canonical_dir(d: &Vec3) -> Vec3 {
    let mut lead = 0;
    for a in 1..3 {
        if d[a].abs() > d[lead].abs() {
            lead = a;
        }
    }
    if d[lead] < 0.0 {
        -d
    } else {
        *d
    }
}

fn orient_along(d: &Vec3, reference: &Vec3) -> Vec3 {
    if d.dot(reference) < 0.0 {
        -d
    } else {
        *d
    }
}

fn plane_basis_dirs(normal: &Vec3) -> Vec<Vec3> {
    let n = normal.normalize();
    let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let b1 = (seed - n * seed.dot(&n)).normalize();
    let b2 = n.cross(&b1);
    vec![b1, b2]
}

/// Solution set of the full first-order condition `d J+ d = 0`.
pub fn first_order_cone(j: &Mat3) -> DirectionSet {
    quadric_locus(&sym_part(j))
}

/// Real locus of a symmetric quadratic form as a direction set.
fn quadric_locus(form: &Mat3) -> DirectionSet {
    let (evals, evecs) = sym_eigen(form);
    match classify_evals(&evals, EPS_SIG) {
        SignatureClass::AllSpace => DirectionSet::AllSpace,
        SignatureClass::Definite => DirectionSet::Empty,
        SignatureClass::Cone => DirectionSet::Cone(*form),
        SignatureClass::PlanePair => {
            // Ascending eigenvalues: (negative, ~zero, positive).
            let lo = evals[0];
            let hi = evals[2];
            let e_lo = evecs.column(0).into_owned();
            let e_hi = evecs.column(2).into_owned();
            let na = (e_hi * hi.sqrt() - e_lo * (-lo).sqrt()).normalize();
            let nb = (e_hi * hi.sqrt() + e_lo * (-lo).sqrt()).normalize();
            DirectionSet::PlanePair(canonical_dir(&na), canonical_dir(&nb))
        }
        SignatureClass::DoublePlane => {
            let idx = if evals[0].abs() > evals[2].abs() { 0 } else { 2 };
            let n = canonical_dir(&evecs.column(idx).into_owned());
            DirectionSet::PlanePair(n, n)
        }
        SignatureClass::Line => {
            // The zero eigenvector: first entry for (+,+,0), last for (-,-,0).
            let idx = if evals[0].abs() < evals[2].abs() { 0 } else { 2 };
            DirectionSet::Line(canonical_dir(&evecs.column(idx).into_owned()))
        }
    }
}

enum PlaneRestriction {
    Dirs(Vec<Vec3>),
    All,
    None,
}

/// Roots of a symmetric form restricted to the plane spanned by an
/// orthonormal basis. `scale_ref` is the magnitude of the unrestricted form,
/// so a restriction that vanishes relative to it counts as identically zero.
fn restrict_solve(form: &Mat3, b1: &Vec3, b2: &Vec3, scale_ref: f64) -> PlaneRestriction {
    let a = qform(form, b1);
    let c = qform(form, b2);
    let b = b1.dot(&(form * b2));
    let coeff_scale = a.abs().max(b.abs()).max(c.abs());
    if scale_ref == 0.0 || coeff_scale <= EPS_SIG * scale_ref {
        return PlaneRestriction::All;
    }

    // Eigen-decomposition of [[a, b], [b, c]].
    let tr = a + c;
    let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
    let l1 = (tr + disc) * 0.5;
    let l2 = (tr - disc) * 0.5;
    let emax = l1.abs().max(l2.abs());
    let zero = |l: f64| l.abs() <= EPS_SIG * emax;

    let evec2 = |l: f64| -> Vec3 {
        // Null vector of [[a-l, b], [b, c-l]] in the (b1, b2) basis.
        let (p, q) = if (a - l).abs() > (c - l).abs() {
            (-b, a - l)
        } else {
            (c - l, -b)
        };
        let n = p.hypot(q);
        if n == 0.0 {
            *b1
        } else {
            (b1 * (p / n) + b2 * (q / n)).normalize()
        }
    };

    match (zero(l1), zero(l2)) {
        (true, true) => PlaneRestriction::All,
        (true, false) => PlaneRestriction::Dirs(vec![canonical_dir(&evec2(l1))]),
        (false, true) => PlaneRestriction::Dirs(vec![canonical_dir(&evec2(l2))]),
        (false, false) => {
            if l1.signum() == l2.signum() {
                return PlaneRestriction::None;
            }
            let (lp, ln) = (l1.max(l2), l1.min(l2));
            let wp = evec2(lp);
            let wn = evec2(ln);
            let d1 = (wp * (-ln).sqrt() + wn * lp.sqrt()).normalize();
            let d2 = (wp * (-ln).sqrt() - wn * lp.sqrt()).normalize();
            PlaneRestriction::Dirs(vec![canonical_dir(&d1), canonical_dir(&d2)])
        }
    }
}

/// First-order directions restricted to a boundary tangent plane: solve the
/// binary quadratic `d J+ d = 0` over `d = alpha b1 + beta b2`. Returns zero,
/// one or two unit directions, or the whole tangent plane when the
/// restriction vanishes.
pub fn boundary_first_order(j: &Mat3, b1: &Vec3, b2: &Vec3) -> DirectionSet {
    let jp = sym_part(j);
    match restrict_solve(&jp, b1, b2, jp.norm()) {
        PlaneRestriction::All => {
            let n = canonical_dir(&b1.cross(b2).normalize());
            DirectionSet::PlanePair(n, n)
        }
        PlaneRestriction::Dirs(dirs) => DirectionSet::FinitelyMany(dedup_directions(dirs, 1e-9)),
        PlaneRestriction::None => DirectionSet::Empty,
    }
}

fn dedup_directions(dirs: Vec<Vec3>, tol: f64) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = Vec::new();
    for d in dirs {
        let c = canonical_dir(&d);
        if !out.iter().any(|e| (e - c).norm() < tol || (e + c).norm() < tol) {
            out.push(c);
        }
    }
    // Deterministic order regardless of discovery order.
    out.sort_by(|a, b| (a.x, a.y, a.z).partial_cmp(&(b.x, b.y, b.z)).unwrap());
    out
}

/// Real roots of the polynomial with the given coefficients (constant term
/// first), via companion-matrix eigenvalues and one Newton polish.
fn poly_real_roots(coeffs: &[f64; 4]) -> Vec<f64> {
    let cmax = coeffs.iter().fold(0f64, |m, c| m.max(c.abs()));
    if cmax == 0.0 {
        return Vec::new();
    }
    let mut deg = coeffs.len() - 1;
    while deg > 0 && coeffs[deg].abs() <= 1e-10 * cmax {
        deg -= 1;
    }
    let eval = |x: f64| -> (f64, f64) {
        let mut v = 0.0;
        let mut dv = 0.0;
        for i in (0..coeffs.len()).rev() {
            dv = dv * x + v;
            v = v * x + coeffs[i];
        }
        (v, dv)
    };
    let polish = |mut x: f64| -> f64 {
        for _ in 0..2 {
            let (v, dv) = eval(x);
            if dv.abs() > 1e-300 {
                let step = v / dv;
                if step.is_finite() {
                    x -= step;
                }
            }
        }
        x
    };
    match deg {
        0 => Vec::new(),
        1 => vec![-coeffs[0] / coeffs[1]],
        2 => {
            let (a, b, c) = (coeffs[2], coeffs[1], coeffs[0]);
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return Vec::new();
            }
            // Numerically stable pairing.
            let q = -0.5 * (b + 1f64.copysign(b) * disc.sqrt());
            let mut roots = vec![q / a];
            if q != 0.0 {
                roots.push(c / q);
            } else {
                roots.push(0.0);
            }
            roots.into_iter().map(polish).collect()
        }
        _ => {
            // Monic depressed cubic t^3 + p t + q with x = t - a/3.
            let a = coeffs[2] / coeffs[3];
            let b = coeffs[1] / coeffs[3];
            let c = coeffs[0] / coeffs[3];
            let p = b - a * a / 3.0;
            let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
            let shift = -a / 3.0;
            let mut roots = Vec::new();
            let disc = -4.0 * p * p * p - 27.0 * q * q;
            if disc >= 0.0 && p < 0.0 {
                // Three real roots (trigonometric form).
                let m = 2.0 * (-p / 3.0).sqrt();
                let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
                let theta = arg.acos() / 3.0;
                for k in 0..3 {
                    let t = m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos();
                    roots.push(t + shift);
                }
            } else if p.abs() <= 1e-300 && q.abs() <= 1e-300 {
                roots.push(shift); // triple root
            } else {
                // One real root: stable Cardano, avoiding cancellation in
                // the dominant cube-root term.
                let s = (q * q / 4.0 + p * p * p / 27.0).max(0.0).sqrt();
                let w = -q / 2.0 - 1f64.copysign(q) * s;
                let t = if w == 0.0 {
                    (-q).cbrt()
                } else {
                    let u = w.cbrt();
                    u - p / (3.0 * u)
                };
                roots.push(t + shift);
            }
            roots.into_iter().map(polish).collect()
        }
    }
}

/// Coefficients (constant first) of `lambda -> det(m1 + lambda m2)` by
/// interpolation at four nodes.
fn pencil_det_coeffs(m1: &Mat3, m2: &Mat3) -> [f64; 4] {
    let det_at = |l: f64| (m1 + m2 * l).determinant();
    let p0 = det_at(0.0);
    let p1 = det_at(1.0);
    let pm1 = det_at(-1.0);
    let p2 = det_at(2.0);
    let c0 = p0;
    let c2 = (p1 + pm1) * 0.5 - c0;
    let odd = (p1 - pm1) * 0.5; // c3 + c1
    let x = p2 - c0 - 4.0 * c2; // 8 c3 + 2 c1
    let c3 = (x - 2.0 * odd) / 6.0;
    let c1 = odd - c3;
    [c0, c1, c2, c3]
}

/// Newton-polish a direction onto the joint zero set of two forms while
/// staying unit. Returns `None` when the local system is too singular.
fn polish_joint_root(d: &Vec3, m1: &Mat3, m2: &Mat3) -> Option<Vec3> {
    let mut x = *d;
    for _ in 0..8 {
        let f = Vec3::new(qform(m1, &x), qform(m2, &x), x.norm_squared() - 1.0);
        if f.norm() < 1e-15 {
            break;
        }
        let jac = Mat3::from_rows(&[
            ((m1 * x) * 2.0).transpose(),
            ((m2 * x) * 2.0).transpose(),
            (x * 2.0).transpose(),
        ]);
        let step = jac.lu().solve(&f)?;
        if !step.iter().all(|c| c.is_finite()) || step.norm() > 0.5 {
            return None;
        }
        x -= step;
    }
    Some(x.normalize())
}

const JOINT_TOL: f64 = 1e-10;

fn joint_residual(d: &Vec3, m1: &Mat3, m2: &Mat3) -> f64 {
    qform(m1, d).abs().max(qform(m2, d).abs())
}

/// Unit directions solving both normalised forms, found by intersecting the
/// given plane with them. The error side carries a degenerate whole-plane
/// solution set.
fn plane_joint_roots(normal: &Vec3, m1: &Mat3, m2: &Mat3) -> Result<Vec<Vec3>, DirectionSet> {
    let basis = plane_basis_dirs(normal);
    let (b1, b2) = (basis[0], basis[1]);
    let candidates = match restrict_solve(m1, &b1, &b2, m1.norm()) {
        PlaneRestriction::Dirs(dirs) => dirs,
        PlaneRestriction::None => return Ok(Vec::new()),
        PlaneRestriction::All => match restrict_solve(m2, &b1, &b2, m2.norm()) {
            PlaneRestriction::Dirs(dirs) => dirs,
            PlaneRestriction::None => return Ok(Vec::new()),
            // The whole plane solves both forms.
            PlaneRestriction::All => {
                let n = canonical_dir(&normal.normalize());
                return Err(DirectionSet::PlanePair(n, n));
            }
        },
    };
    Ok(candidates
        .into_iter()
        .filter_map(|d| {
            let polished = polish_joint_root(&d, m1, m2).unwrap_or(d);
            (joint_residual(&polished, m1, m2) <= JOINT_TOL).then(|| canonical_dir(&polished))
        })
        .collect())
}

/// Directions solving both `d J+ d = 0` and `d K+ d = 0`: the intersection
/// of the two quadric cones, reduced through a singular member of their
/// pencil. All real pencil roots are tried and the results unioned.
/// Degenerate inputs fall back to the locus of the non-vanishing form, or
/// every direction when both forms vanish.
pub fn second_order_vectors(j: &Mat3, k: &Mat3) -> DirectionSet {
    let m1 = sym_part(j);
    let m2 = sym_part(k);
    let n1 = m1.norm();
    let n2 = m2.norm();
    let big = n1.max(n2);
    if big == 0.0 {
        return DirectionSet::AllSpace;
    }
    if n1 <= 1e-12 * big {
        return quadric_locus(&m2);
    }
    if n2 <= 1e-12 * big {
        return quadric_locus(&m1);
    }
    let m1 = m1 / n1;
    let m2 = m2 / n2;

    let coeffs = pencil_det_coeffs(&m1, &m2);
    let cmax = coeffs.iter().fold(0f64, |m, c| m.max(c.abs()));

    let mut members: Vec<Mat3> = Vec::new();
    if cmax <= 1e-12 {
        // Pencil identically singular (e.g. the forms share a kernel
        // vector): fall back to a fixed sample of members.
        for l in [0.0, 1.0, -1.0] {
            members.push(m1 + m2 * l);
        }
        members.push(m2);
    } else {
        for l in poly_real_roots(&coeffs) {
            members.push(m1 + m2 * l);
        }
        // The member at infinity.
        if coeffs[3].abs() <= 1e-10 * cmax {
            members.push(m2);
        }
    }

    let mut dirs: Vec<Vec3> = Vec::new();
    for member in &members {
        let planes: Vec<Vec3> = match quadric_locus(member) {
            DirectionSet::PlanePair(na, nb) => {
                if (na - nb).norm() < 1e-12 {
                    vec![na]
                } else {
                    vec![na, nb]
                }
            }
            DirectionSet::Line(d) => {
                let polished = polish_joint_root(&d, &m1, &m2).unwrap_or(d);
                if joint_residual(&polished, &m1, &m2) <= JOINT_TOL {
                    dirs.push(canonical_dir(&polished));
                }
                continue;
            }
            DirectionSet::AllSpace => {
                // Member vanished: the forms are proportional.
                return quadric_locus(&m1);
            }
            // A root that failed to produce a singular member, or a definite
            // member: nothing to intersect.
            _ => continue,
        };
        for n in planes {
            match plane_joint_roots(&n, &m1, &m2) {
                Ok(found) => dirs.extend(found),
                Err(set) => return set,
            }
        }
    }

    let dirs = dedup_directions(dirs, 1e-7);
    if dirs.is_empty() {
        DirectionSet::Empty
    } else {
        DirectionSet::FinitelyMany(dirs)
    }
}

/// Project a direction onto the nearest of two planes.
pub fn project_plane_pair(d: &Vec3, na: &Vec3, nb: &Vec3) -> Vec3 {
    let proj = |n: &Vec3| -> Vec3 { d - n * d.dot(n) };
    let pa = proj(na);
    let pb = proj(nb);
    let best = if pa.norm() >= pb.norm() { pa } else { pb };
    if best.norm() < 1e-12 {
        // Direction parallel to both normals: any in-plane direction is
        // equidistant; pick deterministically.
        plane_basis_dirs(na)[0]
    } else {
        best.normalize()
    }
}

/// Nearest unit direction on the cone `x form x = 0` to the unit direction
/// `d`, solved in the eigenbasis through the one-dimensional Lagrange
/// multiplier. Degenerate signatures (plane pair, line, all-space) project
/// componentwise; definite forms have no cone.
pub fn project_to_cone(d: &Vec3, form: &Mat3) -> Result<Vec3, QuadricsError> {
    let (evals, evecs) = sym_eigen(form);
    match classify_evals(&evals, EPS_SIG) {
        SignatureClass::AllSpace => return Ok(*d),
        SignatureClass::Definite => return Err(QuadricsError::NoConeExists),
        SignatureClass::Line => {
            let idx = if evals[0].abs() < evals[2].abs() { 0 } else { 2 };
            let line = evecs.column(idx).into_owned();
            return Ok(orient_along(&line, d));
        }
        SignatureClass::PlanePair | SignatureClass::DoublePlane => {
            if let DirectionSet::PlanePair(na, nb) = quadric_locus(form) {
                return Ok(project_plane_pair(d, &na, &nb));
            }
            unreachable!();
        }
        SignatureClass::Cone => {}
    }

    // Eigenbasis coordinates of d.
    let w = evecs.transpose() * d;
    let l = evals;
    let g = |nu: f64| -> f64 {
        let mut sum = 0.0;
        for i in 0..3 {
            let wi2 = w[i] * w[i];
            if wi2 == 0.0 {
                continue;
            }
            let denom = 1.0 + nu * l[i];
            sum += l[i] * wi2 / (denom * denom);
        }
        sum
    };

    // Principal branch: all 1 + nu*lambda_i > 0.
    let lmax = l[2];
    let lmin = l[0];
    debug_assert!(lmax > 0.0 && lmin < 0.0);
    let lo = -1.0 / lmax;
    let hi = -1.0 / lmin;
    let span = hi - lo;

    let weight_max: f64 = (0..3)
        .filter(|&i| (l[i] - lmax).abs() <= 1e-12 * lmax.abs())
        .map(|i| w[i] * w[i])
        .sum();
    let weight_min: f64 = (0..3)
        .filter(|&i| (l[i] - lmin).abs() <= 1e-12 * lmin.abs())
        .map(|i| w[i] * w[i])
        .sum();

    let x_from_nu = |nu: f64| -> Vec3 {
        Vec3::new(
            w[0] / (1.0 + nu * l[0]),
            w[1] / (1.0 + nu * l[1]),
            w[2] / (1.0 + nu * l[2]),
        )
    };

    // When d has no component in an extreme eigenspace, g stays one-signed
    // and the minimiser sits at the branch end with that coordinate free.
    let boundary_solution = |nu: f64, extreme: usize| -> Vec3 {
        let mut x = Vec3::zeros();
        let mut partial = 0.0;
        for i in 0..3 {
            if i == extreme {
                continue;
            }
            x[i] = w[i] / (1.0 + nu * l[i]);
            partial += l[i] * x[i] * x[i];
        }
        let free2 = (-partial / l[extreme]).max(0.0);
        x[extreme] = free2.sqrt();
        x
    };

    let eps = span * 1e-14;
    let x = if weight_max == 0.0 && g(lo + eps) <= 0.0 {
        boundary_solution(lo, 2)
    } else if weight_min == 0.0 && g(hi - eps) >= 0.0 {
        boundary_solution(hi, 0)
    } else {
        // g decreases monotonically from +inf to -inf on the open branch.
        let mut a = lo + eps;
        let mut b = hi - eps;
        for _ in 0..160 {
            let mid = 0.5 * (a + b);
            if g(mid) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let mut nu = 0.5 * (a + b);
        // Newton polish on g.
        for _ in 0..4 {
            let gv = g(nu);
            let mut dg = 0.0;
            for i in 0..3 {
                let wi2 = w[i] * w[i];
                if wi2 == 0.0 {
                    continue;
                }
                let denom = 1.0 + nu * l[i];
                dg += -2.0 * l[i] * l[i] * wi2 / (denom * denom * denom);
            }
            if dg.abs() < 1e-300 {
                break;
            }
            let next = nu - gv / dg;
            if next > lo && next < hi {
                nu = next;
            } else {
                break;
            }
        }
        x_from_nu(nu)
    };

    let out = evecs * x;
    let out = if out.norm() < 1e-300 {
        // Query on the apex axis: every nearest generator is equidistant.
        evecs * boundary_solution(lo, 2)
    } else {
        out
    };
    Ok(orient_along(&out.normalize(), d))
}

/// Deterministic samples on a cone, parameterised by angle in the positive
/// eigenplane (after flipping the form so it has two positive eigenvalues).
pub fn sample_cone_directions(form: &Mat3, count: usize) -> Vec<Vec3> {
    let mut m = *form;
    let (evals, _) = sym_eigen(&m);
    let (pos, neg, _) = signature_counts(&evals, EPS_SIG);
    if pos < neg {
        m = -m;
    }
    let (evals, evecs) = sym_eigen(&m);
    // Ascending: (negative, positive, positive).
    let (ln, lp1, lp2) = (evals[0], evals[1], evals[2]);
    if !(ln < 0.0 && lp1 > 0.0) {
        return Vec::new();
    }
    let en = evecs.column(0).into_owned();
    let e1 = evecs.column(1).into_owned();
    let e2 = evecs.column(2).into_owned();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let phi = 2.0 * std::f64::consts::PI * k as f64 / count.max(1) as f64;
        let d = e1 * (phi.cos() / lp1.sqrt())
            + e2 * (phi.sin() / lp2.sqrt())
            + en * (1.0 / (-ln).sqrt());
        out.push(d.normalize());
    }
    out
}
