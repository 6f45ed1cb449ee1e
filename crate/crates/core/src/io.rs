//! Artifact serialisation: seed-curve JSON documents, ranking CSV, OBJ
//! meshes with their per-vertex energy sidecars, and optimisation logs.
//!
//! All floating-point output is written with 17 significant digits so that
//! artifacts are byte-reproducible and parse back to the exact same f64.
//! Reading goes through serde; writing is explicit to control the float
//! format.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::curves::{CurveFamily, SeedCurve};
use crate::energies::EnergyReport;
use crate::field::{FieldError, VectorField};
use crate::quadrics::qform;
use crate::surface::StreamSurfaceMesh;
use crate::Vec3;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// 17 significant digits: enough to reproduce any f64 exactly on re-parse.
pub fn fmt_g17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// JSON number token; non-finite values become null.
pub(crate) fn json_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

fn json_vec3(v: &Vec3) -> String {
    format!("[{}, {}, {}]", json_num(v.x), json_num(v.y), json_num(v.z))
}

pub(crate) fn json_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn energies_json(r: &EnergyReport) -> String {
    let mut fields = vec![
        format!("\"c1\": {}", json_num(r.c1)),
        format!("\"c2\": {}", json_num(r.c2)),
        format!("\"e1\": {}", json_num(r.e1)),
        format!("\"e2\": {}", json_num(r.e2)),
    ];
    if let Some(e_in) = r.e_in {
        fields.push(format!("\"e_in\": {}", json_num(e_in)));
    }
    fields.push(format!("\"e_ortho\": {}", json_num(r.e_ortho)));
    fields.push(format!("\"e_para\": {}", json_num(r.e_para)));
    fields.push(format!("\"e_rigid\": {}", json_num(r.e_rigid)));
    fields.push(format!("\"e\": {}", json_num(r.combined)));
    if let Some(e_s) = r.e_s {
        fields.push(format!("\"e_s\": {}", json_num(e_s)));
    }
    if let Some(area) = r.area {
        fields.push(format!("\"area\": {}", json_num(area)));
    }
    format!("{{{}}}", fields.join(", "))
}

/// One seed curve as a JSON object.
pub fn seed_curve_json(curve: &SeedCurve, report: Option<&EnergyReport>) -> String {
    let points: Vec<String> = curve.points.iter().map(json_vec3).collect();
    let tangents: Vec<String> = curve.tangents.iter().map(json_vec3).collect();
    let mut fields = vec![
        format!("\"family\": {}", json_str(curve.family.as_str())),
        format!("\"h\": {}", json_num(curve.h)),
        format!("\"points\": [{}]", points.join(", ")),
        format!("\"tangents\": [{}]", tangents.join(", ")),
        format!("\"length\": {}", json_num(curve.length())),
        format!("\"seed_point\": {}", json_vec3(&curve.seed_point)),
        format!("\"seed_direction\": {}", json_vec3(&curve.seed_direction)),
    ];
    if let Some(face) = curve.face {
        fields.push(format!("\"face\": {face}"));
    }
    if let Some(report) = report {
        fields.push(format!("\"energies\": {}", energies_json(report)));
    }
    format!("{{{}}}", fields.join(", "))
}

/// seeds.json: an object holding the curve documents.
pub fn seeds_json(entries: &[(SeedCurve, Option<EnergyReport>)]) -> String {
    let docs: Vec<String> = entries
        .iter()
        .map(|(curve, report)| seed_curve_json(curve, report.as_ref()))
        .collect();
    format!("{{\"curves\": [\n{}\n]}}\n", docs.join(",\n"))
}

#[derive(Debug, Deserialize)]
struct SeedDocIn {
    family: String,
    h: f64,
    points: Vec<[f64; 3]>,
    tangents: Vec<[f64; 3]>,
    #[allow(dead_code)]
    length: Option<f64>,
    seed_point: Option<[f64; 3]>,
    seed_direction: Option<[f64; 3]>,
    face: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct SeedsFileIn {
    curves: Vec<SeedDocIn>,
}

/// Parse a seeds.json document back into curves.
pub fn parse_seeds_json(text: &str) -> Result<Vec<SeedCurve>, IoError> {
    let parsed: SeedsFileIn =
        serde_json::from_str(text).map_err(|e| IoError::Malformed(e.to_string()))?;
    parsed
        .curves
        .into_iter()
        .map(|doc| {
            let family = CurveFamily::parse(&doc.family)
                .ok_or_else(|| IoError::Malformed(format!("unknown family `{}`", doc.family)))?;
            if doc.points.len() != doc.tangents.len() || doc.points.len() < 2 {
                return Err(IoError::Malformed(
                    "points/tangents length mismatch or too short".into(),
                ));
            }
            let points: Vec<Vec3> =
                doc.points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
            let tangents: Vec<Vec3> =
                doc.tangents.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
            let seed_point = doc
                .seed_point
                .map(|p| Vec3::new(p[0], p[1], p[2]))
                .unwrap_or(points[0]);
            let seed_direction = doc
                .seed_direction
                .map(|p| Vec3::new(p[0], p[1], p[2]))
                .unwrap_or(tangents[0]);
            Ok(SeedCurve {
                points,
                tangents,
                h: doc.h,
                family,
                seed_point,
                seed_direction,
                face: doc.face,
            })
        })
        .collect()
}

pub fn read_seeds_file(path: &Path) -> Result<Vec<SeedCurve>, IoError> {
    let text = std::fs::read_to_string(path)?;
    parse_seeds_json(&text)
}

/// Ranking CSV row.
pub struct RankingRow<'a> {
    pub id: usize,
    pub family: CurveFamily,
    pub length: f64,
    pub report: &'a EnergyReport,
}

/// CSV ranking table with the fixed column set.
pub fn ranking_csv(rows: &[RankingRow<'_>]) -> String {
    let mut out = String::from("id,family,length,E1,E2,E_in,E_ortho,E_para,E_rigid,E,E_S\n");
    for row in rows {
        let r = row.report;
        let e_in = r.e_in.map(fmt_g17).unwrap_or_default();
        let e_s = r.e_s.map(fmt_g17).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.id,
            row.family.as_str(),
            fmt_g17(row.length),
            fmt_g17(r.e1),
            fmt_g17(r.e2),
            e_in,
            fmt_g17(r.e_ortho),
            fmt_g17(r.e_para),
            fmt_g17(r.e_rigid),
            fmt_g17(r.combined),
            e_s,
        );
    }
    out
}

/// OBJ export: valid vertices in row-major (i outer, j inner) order, each
/// fully valid quad as two triangles, faces re-indexed over the omitted
/// invalid vertices.
pub fn mesh_obj(mesh: &StreamSurfaceMesh) -> String {
    let mut out = String::new();
    let mut index = vec![0usize; mesh.m * mesh.n];
    let mut next = 1usize; // OBJ indices are 1-based
    for i in 0..mesh.m {
        for j in 0..mesh.n {
            if mesh.is_valid(i, j) {
                let v = mesh.vertex(i, j);
                let _ = writeln!(out, "v {} {} {}", fmt_g17(v.x), fmt_g17(v.y), fmt_g17(v.z));
                index[i * mesh.n + j] = next;
                next += 1;
            }
        }
    }
    for i in 0..mesh.m.saturating_sub(1) {
        for j in 0..mesh.n.saturating_sub(1) {
            let ok = mesh.is_valid(i, j)
                && mesh.is_valid(i + 1, j)
                && mesh.is_valid(i + 1, j + 1)
                && mesh.is_valid(i, j + 1);
            if ok {
                let a = index[i * mesh.n + j];
                let b = index[(i + 1) * mesh.n + j];
                let c = index[(i + 1) * mesh.n + j + 1];
                let d = index[i * mesh.n + j + 1];
                let _ = writeln!(out, "f {a} {b} {c}");
                let _ = writeln!(out, "f {a} {c} {d}");
            }
        }
    }
    out
}

/// Per-vertex local first-order strain integrand `(u J u)^2`, with the
/// tangent taken along the s-direction, as a CSV sidecar for colour-mapping.
pub fn mesh_energy_csv(field: &VectorField, mesh: &StreamSurfaceMesh) -> String {
    let mut out = String::from("i,j,x,y,z,e1_integrand\n");
    for i in 0..mesh.m {
        for j in 0..mesh.n {
            if !mesh.is_valid(i, j) {
                continue;
            }
            let p = mesh.vertex(i, j);
            // s-direction tangent by one-sided/central difference over valid
            // neighbours.
            let prev = (i > 0 && mesh.is_valid(i - 1, j)).then(|| mesh.vertex(i - 1, j));
            let next = (i + 1 < mesh.m && mesh.is_valid(i + 1, j)).then(|| mesh.vertex(i + 1, j));
            let d = match (prev, next) {
                (Some(a), Some(b)) => b - a,
                (None, Some(b)) => b - p,
                (Some(a), None) => p - a,
                (None, None) => continue,
            };
            let norm = d.norm();
            if norm == 0.0 {
                continue;
            }
            let u = d / norm;
            let value = match field.jacobian_unchecked(&p) {
                Ok(jac) => {
                    let f = qform(&jac, &u);
                    f * f
                }
                Err(_) => f64::NAN,
            };
            let _ = writeln!(
                out,
                "{i},{j},{},{},{},{}",
                fmt_g17(p.x),
                fmt_g17(p.y),
                fmt_g17(p.z),
                fmt_g17(value)
            );
        }
    }
    out
}

/// One JSON-lines optimisation record.
pub fn opt_record_jsonl(r: &crate::optimize::OuterRecord) -> String {
    format!(
        "{{\"outer_iter\": {}, \"F\": {}, \"F_strain\": {}, \"F_fair\": {}, \"F_prox\": {}, \"E_S\": {}}}",
        r.outer_iter,
        json_num(r.f),
        json_num(r.f_strain),
        json_num(r.f_fair),
        json_num(r.f_prox),
        json_num(r.e_s),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::CurveFamily;
    use crate::field::catalogue;
    use crate::surface::integrate_surface;

    fn sample_curve() -> SeedCurve {
        let points: Vec<Vec3> =
            (0..5).map(|i| Vec3::new(0.1 + 0.1 * i as f64, 0.2, 0.3)).collect();
        SeedCurve {
            points,
            tangents: vec![Vec3::x(); 5],
            h: 0.1,
            family: CurveFamily::FirstOrderInterior,
            seed_point: Vec3::new(0.1, 0.2, 0.3),
            seed_direction: Vec3::x(),
            face: None,
        }
    }

    #[test]
    fn float_format_roundtrips_exactly() {
        for x in [
            0.1,
            1.0 / 3.0,
            -2.4493800653684585e-7,
            f64::MIN_POSITIVE,
            1.7976931348623157e308,
            -0.0,
        ] {
            let s = fmt_g17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_g17(f64::INFINITY), "inf");
    }

    #[test]
    fn seeds_json_roundtrip() {
        let curve = sample_curve();
        let text = seeds_json(&[(curve.clone(), None)]);
        let parsed = parse_seeds_json(&text).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].points.len(), curve.points.len());
        for (a, b) in parsed[0].points.iter().zip(&curve.points) {
            assert_eq!(a, b);
        }
        assert_eq!(parsed[0].family, curve.family);
        assert_eq!(parsed[0].h, curve.h);
        assert_eq!(parsed[0].face, None);
    }

    #[test]
    fn obj_counts_match_validity() {
        let field = catalogue::constant(Vec3::x());
        let curve = sample_curve();
        let mesh = integrate_surface(&field, &curve, 0.2, 6).unwrap();
        let obj = mesh_obj(&mesh);
        let vcount = obj.lines().filter(|l| l.starts_with("v ")).count();
        let valid = (0..mesh.m)
            .flat_map(|i| (0..mesh.n).map(move |j| (i, j)))
            .filter(|&(i, j)| mesh.is_valid(i, j))
            .count();
        assert_eq!(vcount, valid);
        // Triangles: two per valid quad.
        let fcount = obj.lines().filter(|l| l.starts_with("f ")).count();
        assert!(fcount > 0 && fcount % 2 == 0);
        // All face indices are in range.
        for line in obj.lines().filter(|l| l.starts_with("f ")) {
            for tok in line.split_whitespace().skip(1) {
                let idx: usize = tok.parse().unwrap();
                assert!(idx >= 1 && idx <= vcount);
            }
        }
    }

    #[test]
    fn energy_csv_has_row_per_valid_vertex() {
        let field = catalogue::constant(Vec3::x());
        let curve = sample_curve();
        let mesh = integrate_surface(&field, &curve, 0.2, 4).unwrap();
        let csv = mesh_energy_csv(&field, &mesh);
        let rows = csv.lines().count() - 1;
        let valid = (0..mesh.m)
            .flat_map(|i| (0..mesh.n).map(move |j| (i, j)))
            .filter(|&(i, j)| mesh.is_valid(i, j))
            .count();
        assert_eq!(rows, valid);
    }
}
