//! The end-to-end pipeline: sample seed points, generate candidate curves
//! with the family fallback chain, rank them by surface strain energy over
//! forward+backward surfaces, refine sampling around the best candidates,
//! optimise the survivors, and emit the report artifacts.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::curves::{
    boundary_curve, interior_curve, second_order_curve, CurveFamily, SeedCurve,
};
use crate::energies::{curve_report, e_surface, EnergyError, EnergyReport};
use crate::field::{BoxDomain, Face, FieldError, VectorField};
use crate::io::{self, IoError};
use crate::optimize::{optimise_stream_surface, OptimizerConfig, OuterRecord};
use crate::quadrics::first_order_cone;
use crate::surface::{default_dt, integrate_surface, StreamSurfaceMesh};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no candidate curves found; families attempted: {}",
        attempted.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(" -> "))]
    NoCandidatesFound { attempted: Vec<CurveFamily> },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Uniform,
    Random,
}

impl SamplingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMode::Uniform => "uniform",
            SamplingMode::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilySelection {
    /// Try second-order, then boundary, then interior curves.
    Auto,
    Fixed(CurveFamily),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub sampling: SamplingMode,
    pub rng_seed: u64,
    /// Initial sample count (cubed root per axis for uniform volume grids).
    pub samples: usize,
    pub refine_rounds: usize,
    pub keep_fraction: f64,
    pub family: FamilySelection,
    pub weights: [f64; 4],
    /// Curve step as a fraction of the domain diameter.
    pub h_frac: f64,
    /// Time step; velocity-normalised default when absent.
    pub dt: Option<f64>,
    pub max_steps: usize,
    /// Directions sampled on a cone when launching curves from it.
    pub cone_samples: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sampling: SamplingMode::Uniform,
            rng_seed: 0,
            samples: 216,
            refine_rounds: 3,
            keep_fraction: 0.05,
            family: FamilySelection::Auto,
            weights: [0.0; 4],
            h_frac: 0.01,
            dt: None,
            max_steps: 500,
            cone_samples: 4,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// A ranked candidate: seed curve, its energy report (with the surface
/// energy over the concatenated forward and backward surfaces) and the rank
/// score.
#[derive(Debug, Clone)]
pub struct RankedCandidate {
    pub id: usize,
    pub curve: SeedCurve,
    pub report: EnergyReport,
    /// Ranking score: the surface energy, or the combined ranking energy
    /// when weights are set; infinite for empty surfaces.
    pub score: f64,
    pub rank: usize,
}

/// Uniform or seeded-random points in a region of the domain (the whole box
/// when `region` is `None`). Uniform mode snaps the count to a per-axis
/// grid of cell centres.
pub fn sample_points(
    domain: &BoxDomain,
    mode: SamplingMode,
    count: usize,
    region: Option<&BoxDomain>,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec3> {
    let region = clip_region(domain, region);
    let ext = region.extent();
    match mode {
        SamplingMode::Uniform => {
            let n = (count as f64).cbrt().round().max(1.0) as usize;
            let mut out = Vec::with_capacity(n * n * n);
            for iz in 0..n {
                for iy in 0..n {
                    for ix in 0..n {
                        out.push(
                            region.min
                                + Vec3::new(
                                    (ix as f64 + 0.5) / n as f64 * ext.x,
                                    (iy as f64 + 0.5) / n as f64 * ext.y,
                                    (iz as f64 + 0.5) / n as f64 * ext.z,
                                ),
                        );
                    }
                }
            }
            out
        }
        SamplingMode::Random => (0..count)
            .map(|_| {
                region.min
                    + Vec3::new(
                        rng.random::<f64>() * ext.x,
                        rng.random::<f64>() * ext.y,
                        rng.random::<f64>() * ext.z,
                    )
            })
            .collect(),
    }
}

fn clip_region(domain: &BoxDomain, region: Option<&BoxDomain>) -> BoxDomain {
    match region {
        None => *domain,
        Some(r) => {
            let min = Vec3::new(
                r.min.x.max(domain.min.x),
                r.min.y.max(domain.min.y),
                r.min.z.max(domain.min.z),
            );
            let max = Vec3::new(
                r.max.x.min(domain.max.x),
                r.max.y.min(domain.max.y),
                r.max.z.min(domain.max.z),
            );
            BoxDomain::new(min, max).unwrap_or(*domain)
        }
    }
}

/// Points on one boundary face: a per-axis grid of cell centres (uniform)
/// or random in-face points, within an optional in-face rectangle.
pub fn sample_face_points(
    domain: &BoxDomain,
    face: &Face,
    mode: SamplingMode,
    count: usize,
    region: Option<&BoxDomain>,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec3> {
    let region = clip_region(domain, region);
    let (a1, a2) = ((face.axis + 1) % 3, (face.axis + 2) % 3);
    let (lo1, hi1) = (region.min[a1], region.max[a1]);
    let (lo2, hi2) = (region.min[a2], region.max[a2]);
    let mut out = Vec::new();
    match mode {
        SamplingMode::Uniform => {
            let n = (count as f64).sqrt().round().max(1.0) as usize;
            for i2 in 0..n {
                for i1 in 0..n {
                    let mut p = Vec3::zeros();
                    p[face.axis] = face.coordinate;
                    p[a1] = lo1 + (i1 as f64 + 0.5) / n as f64 * (hi1 - lo1);
                    p[a2] = lo2 + (i2 as f64 + 0.5) / n as f64 * (hi2 - lo2);
                    out.push(p);
                }
            }
        }
        SamplingMode::Random => {
            for _ in 0..count {
                let mut p = Vec3::zeros();
                p[face.axis] = face.coordinate;
                p[a1] = lo1 + rng.random::<f64>() * (hi1 - lo1);
                p[a2] = lo2 + rng.random::<f64>() * (hi2 - lo2);
                out.push(p);
            }
        }
    }
    out
}

/// All admissible curves of one family from the sampled points, length
/// filtered by the curve module. Boundary points must lie on a face.
pub fn generate_candidates(
    field: &VectorField,
    points: &[Vec3],
    family: CurveFamily,
    h: f64,
    cone_samples: usize,
) -> Vec<SeedCurve> {
    let face_tol = 1e-9 * field.domain.diameter();
    points
        .par_iter()
        .map(|p| match family {
            CurveFamily::SecondOrder => second_order_curve(field, p, h, cone_samples),
            CurveFamily::FirstOrderBoundary => match field.domain.face_of(p, face_tol) {
                Some(face) => boundary_curve(field, &face, p, h),
                None => Vec::new(),
            },
            CurveFamily::FirstOrderInterior => {
                let Ok(j) = field.jacobian_unchecked(p) else {
                    return Vec::new();
                };
                first_order_cone(&j)
                    .seed_directions(cone_samples)
                    .iter()
                    .filter_map(|d0| interior_curve(field, p, d0, h).ok())
                    .collect()
            }
        })
        .collect::<Vec<Vec<SeedCurve>>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Surface strain energy of the forward+backward surface pair, as the joint
/// time integral over the joint area. `None` when both halves are empty.
fn bidirectional_es(
    field: &VectorField,
    curve: &SeedCurve,
    dt: f64,
    max_steps: usize,
) -> Option<(f64, f64)> {
    let mut numerator = 0.0;
    let mut area = 0.0;
    let mut any = false;
    for signed_dt in [dt, -dt] {
        if let Ok(mesh) = integrate_surface(field, curve, signed_dt, max_steps) {
            if let Ok((es, a)) = e_surface(field, &mesh) {
                numerator += es * a;
                area += a;
                any = true;
            }
        }
    }
    (any && area > 0.0).then_some((numerator / area, area))
}

/// Rank candidates ascending by surface strain energy (or by the combined
/// ranking energy when weights are non-zero). Candidates without a valid
/// surface rank last with an infinite score; ties break by curve length
/// (descending), then id.
pub fn rank_candidates(
    field: &VectorField,
    candidates: Vec<(usize, SeedCurve)>,
    dt: f64,
    max_steps: usize,
    weights: &[f64; 4],
) -> Vec<RankedCandidate> {
    let use_combined = weights.iter().any(|w| *w != 0.0);
    let mut ranked: Vec<RankedCandidate> = candidates
        .into_par_iter()
        .map(|(id, curve)| {
            let es = bidirectional_es(field, &curve, dt, max_steps);
            let report = curve_report(field, &curve, weights);
            let mut report = match report {
                Ok(r) => r,
                Err(_) => EnergyReport { weights: *weights, ..Default::default() },
            };
            let (e_s, area) = match es {
                Some((e, a)) => (e, Some(a)),
                None => (f64::INFINITY, None),
            };
            report.e_s = Some(e_s);
            report.area = area;
            let mut score = if use_combined { report.combined } else { e_s };
            if !e_s.is_finite() || !score.is_finite() {
                score = f64::INFINITY;
            }
            RankedCandidate { id, curve, report, score, rank: 0 }
        })
        .collect();
    sort_ranked(&mut ranked);
    ranked
}

fn sort_ranked(ranked: &mut [RankedCandidate]) {
    ranked.sort_by(|a, b| {
        a.score
            .partial_cmp(&b.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                b.curve
                    .length()
                    .partial_cmp(&a.curve.length())
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.id.cmp(&b.id))
    });
    for (rank, c) in ranked.iter_mut().enumerate() {
        c.rank = rank;
    }
}

fn keep_count(total: usize, fraction: f64) -> usize {
    ((total as f64 * fraction).ceil() as usize).max(1).min(total)
}

/// Result of the refinement stage.
pub struct Selection {
    pub survivors: Vec<RankedCandidate>,
    /// The final ranked union (incumbents plus the last round's candidates).
    pub pool: Vec<RankedCandidate>,
    pub family_used: CurveFamily,
    pub families_attempted: Vec<CurveFamily>,
}

/// Sample, generate and rank candidates; then refine: every round samples
/// double-density sub-boxes (edge a quarter of the previous region) around
/// the current best seeds, re-ranks the union, and keeps the best fraction.
/// Incumbents carry forward, so the best score never regresses.
pub fn refine_and_select(
    field: &VectorField,
    config: &PipelineConfig,
) -> Result<Selection, PipelineError> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.rng_seed);
    use rand::SeedableRng;
    let domain = field.domain;
    let h = config.h_frac * domain.diameter();
    let dt = config.dt.unwrap_or_else(|| default_dt(field));
    let mut next_id = 0usize;
    let mut assign_ids = |curves: Vec<SeedCurve>| -> Vec<(usize, SeedCurve)> {
        curves
            .into_iter()
            .map(|c| {
                let id = next_id;
                next_id += 1;
                (id, c)
            })
            .collect()
    };

    // Round 0: whole-domain sampling with the family fallback chain.
    let chain: Vec<CurveFamily> = match config.family {
        FamilySelection::Fixed(f) => vec![f],
        FamilySelection::Auto => vec![
            CurveFamily::SecondOrder,
            CurveFamily::FirstOrderBoundary,
            CurveFamily::FirstOrderInterior,
        ],
    };
    let mut attempted = Vec::new();
    let mut family_used = None;
    let mut initial = Vec::new();
    for family in &chain {
        attempted.push(*family);
        let points = match family {
            CurveFamily::FirstOrderBoundary => {
                let per_face = (config.samples + 5) / 6;
                domain
                    .faces()
                    .iter()
                    .flat_map(|face| {
                        sample_face_points(&domain, face, config.sampling, per_face, None, &mut rng)
                    })
                    .collect::<Vec<Vec3>>()
            }
            _ => sample_points(&domain, config.sampling, config.samples, None, &mut rng),
        };
        let curves = generate_candidates(field, &points, *family, h, config.cone_samples);
        if !curves.is_empty() {
            family_used = Some(*family);
            initial = curves;
            break;
        }
    }
    let Some(family_used) = family_used else {
        return Err(PipelineError::NoCandidatesFound { attempted });
    };

    let mut pool = rank_candidates(field, assign_ids(initial), dt, config.max_steps, &config.weights);
    let mut incumbents: Vec<RankedCandidate> =
        pool.iter().take(keep_count(pool.len(), config.keep_fraction)).cloned().collect();

    let n0 = (config.samples as f64).cbrt().round().max(1.0) as usize;
    for round in 1..=config.refine_rounds {
        // Sub-box edge shrinks fourfold per round; per-axis sampling density
        // doubles relative to the previous round's spacing.
        let edge_frac = 0.25f64.powi(round as i32);
        let per_axis = (n0 / 2usize.pow(round as u32)).max(2);
        let mut new_curves: Vec<SeedCurve> = Vec::new();
        for inc in &incumbents {
            let centre = inc.curve.seed_point;
            let half = domain.extent() * (0.5 * edge_frac);
            let sub = BoxDomain::new(centre - half, centre + half).unwrap_or(domain);
            match family_used {
                CurveFamily::FirstOrderBoundary => {
                    let face_tol = 1e-9 * domain.diameter();
                    if let Some(face) = domain.face_of(&centre, face_tol) {
                        let pts = sample_face_points(
                            &domain,
                            &face,
                            config.sampling,
                            per_axis * per_axis,
                            Some(&sub),
                            &mut rng,
                        );
                        new_curves.extend(generate_candidates(
                            field,
                            &pts,
                            family_used,
                            h,
                            config.cone_samples,
                        ));
                    }
                }
                _ => {
                    let pts = sample_points(
                        &domain,
                        config.sampling,
                        per_axis.pow(3),
                        Some(&sub),
                        &mut rng,
                    );
                    new_curves.extend(generate_candidates(
                        field,
                        &pts,
                        family_used,
                        h,
                        config.cone_samples,
                    ));
                }
            }
        }
        let newly_ranked =
            rank_candidates(field, assign_ids(new_curves), dt, config.max_steps, &config.weights);
        // Union with the incumbents; keep the best fraction.
        let mut union = incumbents.clone();
        union.extend(newly_ranked);
        sort_ranked(&mut union);
        pool = union;
        incumbents =
            pool.iter().take(keep_count(pool.len(), config.keep_fraction)).cloned().collect();
    }

    Ok(Selection { survivors: incumbents, pool, family_used, families_attempted: attempted })
}

/// Per-survivor optimisation outcome.
pub struct OptimisedCandidate {
    pub candidate: RankedCandidate,
    pub final_seed: SeedCurve,
    pub final_mesh: StreamSurfaceMesh,
    /// Surface energy history over the outer iterations (forward surface).
    pub es_history: Vec<f64>,
    pub records: Vec<OuterRecord>,
    /// Initial and best forward-surface energies from the loop.
    pub es_initial: f64,
    pub es_optimised: f64,
    /// Human-readable failure note when optimisation fell back to the
    /// unoptimised surface.
    pub failure: Option<String>,
}

pub struct PipelineResult {
    pub config: PipelineConfig,
    pub field_name: String,
    pub family_used: CurveFamily,
    pub families_attempted: Vec<CurveFamily>,
    /// Final ranked pool (for the ranking table).
    pub pool: Vec<RankedCandidate>,
    /// Survivors with optimisation results, re-ranked by optimised energy.
    pub optimised: Vec<OptimisedCandidate>,
    pub dt: f64,
}

/// The full pipeline: refine-and-select, optimise every survivor, re-rank
/// by the optimised surface energy.
pub fn run_pipeline(
    field: &VectorField,
    config: &PipelineConfig,
) -> Result<PipelineResult, PipelineError> {
    let selection = refine_and_select(field, config)?;
    let dt = config.dt.unwrap_or_else(|| default_dt(field));

    let mut optimised: Vec<OptimisedCandidate> = selection
        .survivors
        .into_par_iter()
        .map(|candidate| {
            match optimise_stream_surface(field, &candidate.curve, &config.optimizer, dt, config.max_steps)
            {
                Ok(res) => {
                    let es_initial = *res.es_history.first().unwrap_or(&f64::INFINITY);
                    let es_optimised =
                        res.es_history.iter().cloned().fold(f64::INFINITY, f64::min);
                    OptimisedCandidate {
                        final_seed: res.seed,
                        final_mesh: res.mesh,
                        es_history: res.es_history,
                        records: res.records,
                        es_initial,
                        es_optimised,
                        failure: None,
                        candidate,
                    }
                }
                Err(err) => {
                    // Keep the unoptimised surface; fall back to a tiny
                    // placeholder mesh when even integration fails.
                    let mesh = integrate_surface(field, &candidate.curve, dt, config.max_steps)
                        .unwrap_or_else(|_| {
                            StreamSurfaceMesh::from_vertices(
                                candidate.curve.points.len().max(2),
                                1,
                                dt,
                                {
                                    let mut v = candidate.curve.points.clone();
                                    while v.len() < 2 {
                                        v.push(candidate.curve.seed_point);
                                    }
                                    v
                                },
                                vec![true; candidate.curve.points.len().max(2)],
                                candidate.curve.clone(),
                            )
                        });
                    let es = e_surface(field, &mesh).map(|(e, _)| e).unwrap_or(f64::INFINITY);
                    OptimisedCandidate {
                        final_seed: candidate.curve.clone(),
                        final_mesh: mesh,
                        es_history: vec![es],
                        records: Vec::new(),
                        es_initial: es,
                        es_optimised: es,
                        failure: Some(err.to_string()),
                        candidate,
                    }
                }
            }
        })
        .collect();

    optimised.sort_by(|a, b| {
        a.es_optimised
            .partial_cmp(&b.es_optimised)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.candidate.id.cmp(&b.candidate.id))
    });

    Ok(PipelineResult {
        config: config.clone(),
        field_name: field.name.clone(),
        family_used: selection.family_used,
        families_attempted: selection.families_attempted,
        pool: selection.pool,
        optimised,
        dt,
    })
}

/// Write the report directory: report.json, ranking.csv, seeds.json and the
/// per-surface OBJ meshes with their energy sidecars. With `timings`, wall
/// times are echoed into report.json (off by default: timings are not
/// byte-reproducible).
pub fn emit_artifacts(
    field: &VectorField,
    result: &PipelineResult,
    out_dir: &Path,
    timings: Option<&[(String, f64)]>,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir.join("surfaces")).map_err(IoError::from)?;

    // ranking.csv over the final pool.
    let rows: Vec<io::RankingRow> = result
        .pool
        .iter()
        .map(|c| io::RankingRow {
            id: c.id,
            family: c.curve.family,
            length: c.curve.length(),
            report: &c.report,
        })
        .collect();
    std::fs::write(out_dir.join("ranking.csv"), io::ranking_csv(&rows)).map_err(IoError::from)?;

    // seeds.json: the optimised survivor seeds with their reports.
    let entries: Vec<(SeedCurve, Option<EnergyReport>)> = result
        .optimised
        .iter()
        .map(|o| (o.final_seed.clone(), Some(o.candidate.report.clone())))
        .collect();
    std::fs::write(out_dir.join("seeds.json"), io::seeds_json(&entries)).map_err(IoError::from)?;

    // Surfaces.
    for (index, o) in result.optimised.iter().enumerate() {
        let base = out_dir.join("surfaces").join(format!("{index:03}"));
        std::fs::write(base.with_extension("obj"), io::mesh_obj(&o.final_mesh))
            .map_err(IoError::from)?;
        std::fs::write(
            base.with_extension("energy.csv"),
            io::mesh_energy_csv(field, &o.final_mesh),
        )
        .map_err(IoError::from)?;
    }

    std::fs::write(out_dir.join("report.json"), report_json(result, timings))
        .map_err(IoError::from)?;
    Ok(())
}

fn report_json(result: &PipelineResult, timings: Option<&[(String, f64)]>) -> String {
    use crate::io::{json_num as json_f64, json_str as json_string};
    let cfg = &result.config;
    let config_json = format!(
        "{{\"sampling\": {}, \"rng_seed\": {}, \"samples\": {}, \"refine\": {}, \"top\": {}, \
         \"family\": {}, \"w\": [{}, {}, {}, {}], \"h_frac\": {}, \"dt\": {}, \"max_steps\": {}, \
         \"mu1\": {}, \"mu2\": {}, \"iters\": {}}}",
        json_string(cfg.sampling.as_str()),
        cfg.rng_seed,
        cfg.samples,
        cfg.refine_rounds,
        json_f64(cfg.keep_fraction),
        json_string(match cfg.family {
            FamilySelection::Auto => "auto",
            FamilySelection::Fixed(f) => f.as_str(),
        }),
        json_f64(cfg.weights[0]),
        json_f64(cfg.weights[1]),
        json_f64(cfg.weights[2]),
        json_f64(cfg.weights[3]),
        json_f64(cfg.h_frac),
        json_f64(result.dt),
        cfg.max_steps,
        json_f64(cfg.optimizer.mu1),
        json_f64(cfg.optimizer.mu2),
        cfg.optimizer.max_outer_iters,
    );

    let candidates: Vec<String> = result
        .pool
        .iter()
        .map(|c| {
            format!(
                "{{\"id\": {}, \"rank\": {}, \"family\": {}, \"seed_point\": [{}, {}, {}], \
                 \"length\": {}, \"score\": {}, \"e1\": {}, \"e2\": {}, \"e_s\": {}}}",
                c.id,
                c.rank,
                json_string(c.curve.family.as_str()),
                json_f64(c.curve.seed_point.x),
                json_f64(c.curve.seed_point.y),
                json_f64(c.curve.seed_point.z),
                json_f64(c.curve.length()),
                json_f64(c.score),
                json_f64(c.report.e1),
                json_f64(c.report.e2),
                json_f64(c.report.e_s.unwrap_or(f64::INFINITY)),
            )
        })
        .collect();

    let survivors: Vec<String> = result
        .optimised
        .iter()
        .enumerate()
        .map(|(index, o)| {
            let history: Vec<String> = o.es_history.iter().map(|e| json_f64(*e)).collect();
            let recs: Vec<String> =
                o.records.iter().map(io::opt_record_jsonl).collect();
            let failure = match &o.failure {
                Some(f) => format!(", \"failure\": {}", json_string(f)),
                None => String::new(),
            };
            format!(
                "{{\"index\": {}, \"id\": {}, \"e_s_initial\": {}, \"e_s_opt\": {}, \
                 \"es_history\": [{}], \"opt_log\": [{}], \"obj\": {}{}}}",
                index,
                o.candidate.id,
                json_f64(o.es_initial),
                json_f64(o.es_optimised),
                history.join(", "),
                recs.join(", "),
                json_string(&format!("surfaces/{index:03}.obj")),
                failure,
            )
        })
        .collect();

    let timings_json = match timings {
        Some(ts) => {
            let entries: Vec<String> = ts
                .iter()
                .map(|(name, secs)| format!("{}: {}", json_string(name), json_f64(*secs)))
                .collect();
            format!(", \"timings\": {{{}}}", entries.join(", "))
        }
        None => String::new(),
    };

    format!(
        "{{\"field\": {}, \"config\": {}, \"family_used\": {}, \"families_attempted\": [{}], \
         \"candidates\": [\n{}\n], \"survivors\": [\n{}\n]{}}}\n",
        json_string(&result.field_name),
        config_json,
        json_string(result.family_used.as_str()),
        result
            .families_attempted
            .iter()
            .map(|f| json_string(f.as_str()))
            .collect::<Vec<_>>()
            .join(", "),
        candidates.join(",\n"),
        survivors.join(",\n"),
        timings_json,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::catalogue;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn uniform_sampling_yields_cubic_grid() {
        let domain = BoxDomain::unit();
        let pts = sample_points(&domain, SamplingMode::Uniform, 216, None, &mut rng());
        assert_eq!(pts.len(), 216);
        for p in &pts {
            assert!(domain.contains(p, 0.0));
        }
    }

    #[test]
    fn random_sampling_is_reproducible() {
        let domain = BoxDomain::unit();
        let a = sample_points(&domain, SamplingMode::Random, 50, None, &mut rng());
        let b = sample_points(&domain, SamplingMode::Random, 50, None, &mut rng());
        assert_eq!(a.len(), 50);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn region_sampling_stays_inside() {
        let domain = BoxDomain::unit();
        let sub = BoxDomain::new(Vec3::new(0.2, 0.3, 0.4), Vec3::new(0.4, 0.5, 0.6)).unwrap();
        for mode in [SamplingMode::Uniform, SamplingMode::Random] {
            let pts = sample_points(&domain, mode, 27, Some(&sub), &mut rng());
            assert!(!pts.is_empty());
            for p in &pts {
                assert!(sub.contains(p, 1e-12), "{p:?}");
            }
        }
    }

    #[test]
    fn rotation_interior_candidates_are_chords() {
        let field = catalogue::rotation(Vec3::z());
        let pts = sample_points(&field.domain, SamplingMode::Uniform, 10, None, &mut rng());
        let h = 0.01 * field.domain.diameter();
        let curves =
            generate_candidates(&field, &pts, CurveFamily::FirstOrderInterior, h, 4);
        assert!(curves.len() >= 10, "{}", curves.len());
        for c in &curves {
            let d = c.tangents[0];
            for t in &c.tangents {
                assert!((t - d).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn second_order_candidates_absent_for_definite_k() {
        let field = crate::field::FieldSpec::parse("expr:x;y;-2*z")
            .unwrap()
            .build(None, None)
            .unwrap();
        let pts = sample_points(&field.domain, SamplingMode::Uniform, 27, None, &mut rng());
        let curves = generate_candidates(&field, &pts, CurveFamily::SecondOrder, 0.017, 4);
        assert!(curves.is_empty());
    }

    #[test]
    fn boundary_candidates_from_face_points() {
        let field = catalogue::fig3();
        let face = field.domain.faces()[2];
        let pts =
            sample_face_points(&field.domain, &face, SamplingMode::Uniform, 9, None, &mut rng());
        assert_eq!(pts.len(), 9);
        let h = 0.01 * field.domain.diameter();
        let curves = generate_candidates(&field, &pts, CurveFamily::FirstOrderBoundary, h, 4);
        assert!(!curves.is_empty());
        // At most two branches per sampled point.
        assert!(curves.len() <= 2 * pts.len());
    }

    #[test]
    fn ranking_ties_break_by_length() {
        let field = catalogue::rotation(Vec3::z());
        let h = 0.01 * field.domain.diameter();
        let pts = vec![Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.6, 0.0, 0.0)];
        let curves = generate_candidates(&field, &pts, CurveFamily::FirstOrderInterior, h, 4);
        let with_ids: Vec<(usize, SeedCurve)> = curves.into_iter().enumerate().collect();
        let ranked = rank_candidates(&field, with_ids, 0.05, 30, &[0.0; 4]);
        // All scores are ~zero; longer curves first.
        for w in ranked.windows(2) {
            assert!(w[0].score.abs() < 1e-20);
            assert!(w[0].curve.length() >= w[1].curve.length() - 1e-12);
        }
    }

    #[test]
    fn keep_count_is_ceil_with_minimum() {
        assert_eq!(keep_count(41, 0.05), 3);
        assert_eq!(keep_count(1, 0.05), 1);
        assert_eq!(keep_count(20, 0.05), 1);
        assert_eq!(keep_count(0, 0.05), 0);
    }

    #[test]
    fn splitting_flow_ranks_last() {
        // Cellular flow: rotation (zero strain) at cell centres, strain
        // concentrated on the saddle separatrices. A seed straddling the
        // x = pi separatrix is torn into both cells and ranks far behind a
        // seed of equal length inside one cell.
        let pi = std::f64::consts::PI;
        let domain =
            BoxDomain::new(Vec3::zeros(), Vec3::new(2.0 * pi, 2.0 * pi, 2.0 * pi)).unwrap();
        let field = crate::field::FieldSpec::parse("expr:sin(x)*cos(y);-cos(x)*sin(y);0.2")
            .unwrap()
            .build(None, Some(domain))
            .unwrap();
        let h = 0.01 * field.domain.diameter();
        let seg = |x0: f64, x1: f64| {
            let n = ((x1 - x0) / h).round().max(4.0) as usize;
            let pts: Vec<Vec3> = (0..=n)
                .map(|i| {
                    Vec3::new(x0 + (x1 - x0) * i as f64 / n as f64, pi / 2.0 - 0.5, 1.0)
                })
                .collect();
            SeedCurve::from_polyline(&pts, h, CurveFamily::FirstOrderInterior, pts[0], Vec3::x())
                .unwrap()
        };
        let center = seg(pi / 2.0 - 0.55, pi / 2.0 + 0.55);
        let crossing = seg(pi - 0.55, pi + 0.55);
        let ranked =
            rank_candidates(&field, vec![(0, center), (1, crossing)], 0.05, 80, &[0.0; 4]);
        assert_eq!(ranked[0].id, 0, "cell-centre surface should rank first");
        assert!(ranked[1].score > 5.0 * ranked[0].score);
    }

    #[test]
    fn refine_terminates_on_rotation_field() {
        let field = catalogue::rotation(Vec3::z());
        let config = PipelineConfig {
            samples: 27,
            refine_rounds: 3,
            max_steps: 40,
            ..Default::default()
        };
        let sel = refine_and_select(&field, &config).unwrap();
        assert!(!sel.survivors.is_empty());
        for s in &sel.survivors {
            assert!(s.score.abs() < 1e-18);
        }
        // Second-order curves exist everywhere in a rigid rotation.
        assert_eq!(sel.family_used, CurveFamily::SecondOrder);
    }

    #[test]
    fn zero_refine_rounds_is_single_pass() {
        let field = catalogue::rotation(Vec3::z());
        let config = PipelineConfig {
            samples: 8,
            refine_rounds: 0,
            max_steps: 20,
            ..Default::default()
        };
        let sel = refine_and_select(&field, &config).unwrap();
        assert!(!sel.survivors.is_empty());
    }

    #[test]
    fn monotone_selection_across_rounds() {
        let field = catalogue::fig3();
        let base = PipelineConfig {
            samples: 27,
            max_steps: 60,
            ..Default::default()
        };
        let mut best_scores = Vec::new();
        for rounds in [0usize, 1, 2] {
            let config = PipelineConfig { refine_rounds: rounds, ..base.clone() };
            let sel = refine_and_select(&field, &config).unwrap();
            best_scores.push(sel.survivors[0].score);
        }
        // Incumbent carry-forward: more rounds never lose the best.
        assert!(best_scores[1] <= best_scores[0] + 1e-15);
        assert!(best_scores[2] <= best_scores[1] + 1e-15);
    }

    #[test]
    fn family_fallback_reports_chain() {
        // Constant field: J = 0 everywhere, so second-order vectors are
        // all of space; the chain stops at the first family.
        let field = catalogue::constant(Vec3::x());
        let config = PipelineConfig { samples: 8, refine_rounds: 0, max_steps: 20, ..Default::default() };
        let sel = refine_and_select(&field, &config).unwrap();
        assert_eq!(sel.families_attempted.len(), 1);
    }
}
