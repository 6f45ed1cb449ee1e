//! Command-line front end: field inspection, seed-curve generation, stream
//! surface integration, optimisation, and the full pipeline.
//!
//! Exit codes: 0 success, 2 usage / bad field spec, 3 I/O failure, 4 the
//! pipeline found no candidate curves.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};

use strainsurf::curves::CurveFamily;
use strainsurf::energies::curve_report;
use strainsurf::field::{
    divergence_stats, k_matrix, BoxDomain, FieldError, FieldSpec, VectorField,
};
use strainsurf::io;
use strainsurf::optimize::{optimise_stream_surface, OptimizerConfig};
use strainsurf::pipeline::{
    self, FamilySelection, PipelineConfig, PipelineError, SamplingMode,
};
use strainsurf::quadrics::{classify, second_order_vectors, SignatureClass, EPS_SIG};
use strainsurf::surface::{default_dt, integrate_surface};
use strainsurf::Vec3;

#[derive(Parser)]
#[command(name = "strainsurf", version, about = "Strain-minimising stream surfaces in steady divergence-free vector fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FieldArgs {
    /// Field spec: `catalogue:NAME`, `expr:VX;VY;VZ`, or `grid:PATH.vfg`.
    #[arg(long)]
    field: String,
    /// Declare the field divergence-free (verified by sampling, warns only).
    #[arg(long)]
    divergence_free: bool,
    /// Override the box domain: xmin,ymin,zmin,xmax,ymax,zmax.
    #[arg(long)]
    domain: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print domain, divergence statistics and strain-form signature
    /// fractions for a field.
    FieldInfo {
        #[command(flatten)]
        field: FieldArgs,
        /// Sample count for the statistics.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// Generate candidate seed curves and write them as seeds.json.
    Seeds {
        #[command(flatten)]
        field: FieldArgs,
        /// Sampling mode: uniform | random.
        #[arg(long, default_value = "uniform")]
        mode: String,
        /// Curve family: auto | second-order | boundary | interior.
        #[arg(long, default_value = "auto")]
        family: String,
        #[arg(long, default_value_t = 216)]
        samples: usize,
        /// Step size as a fraction of the domain diameter.
        #[arg(long, default_value_t = 0.01)]
        h_frac: f64,
        /// Ranking weights w1,w2,w3,w4.
        #[arg(long, default_value = "0,0,0,0")]
        w: String,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        /// Output seeds.json path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate the stream surface of one stored seed curve into an OBJ
    /// mesh plus an energy CSV sidecar.
    Surface {
        #[command(flatten)]
        field: FieldArgs,
        /// seeds.json produced by `seeds`, `optimize` or `pipeline`.
        #[arg(long)]
        seeds: PathBuf,
        /// Index of the curve inside the seeds file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Time step (velocity-scaled default when omitted).
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 500)]
        max_steps: usize,
        /// Output OBJ path; the energy CSV lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the optimisation cycle on one stored seed curve.
    Optimize {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 500)]
        max_steps: usize,
        /// Fairness weight.
        #[arg(long, default_value_t = 0.1)]
        mu1: f64,
        /// Proximity weight.
        #[arg(long, default_value_t = 0.02)]
        mu2: f64,
        /// Outer iteration cap.
        #[arg(long, default_value_t = 10)]
        iters: usize,
        /// Output directory (final.obj, final_seed.json, log.jsonl).
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: sample, rank, refine, optimise, and write the report
    /// directory.
    Pipeline {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long, default_value = "uniform")]
        mode: String,
        #[arg(long, default_value = "auto")]
        family: String,
        #[arg(long, default_value_t = 216)]
        samples: usize,
        /// Refinement rounds.
        #[arg(long, default_value_t = 3)]
        refine: usize,
        /// Kept fraction of ranked candidates.
        #[arg(long, default_value_t = 0.05)]
        top: f64,
        #[arg(long, default_value_t = 0.01)]
        h_frac: f64,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 500)]
        max_steps: usize,
        #[arg(long, default_value_t = 0.1)]
        mu1: f64,
        #[arg(long, default_value_t = 0.02)]
        mu2: f64,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long, default_value = "0,0,0,0")]
        w: String,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        /// Echo wall-clock timings into report.json (breaks byte-level
        /// reproducibility of the report).
        #[arg(long)]
        timings: bool,
    },
}

enum CliError {
    Usage(String),
    Io(String),
    NoCandidates(String),
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::NoCandidates(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::NoCandidates(m) | CliError::Other(m) => m,
        }
    }
}

impl From<FieldError> for CliError {
    fn from(err: FieldError) -> Self {
        match err {
            FieldError::Io(_) | FieldError::Grid(_) => CliError::Io(err.to_string()),
            FieldError::BadSpec(_) | FieldError::Expr(_) | FieldError::InvalidDomain(_) => {
                CliError::Usage(err.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

impl From<io::IoError> for CliError {
    fn from(err: io::IoError) -> Self {
        CliError::Io(err.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        match err {
            PipelineError::NoCandidatesFound { .. } => CliError::NoCandidates(err.to_string()),
            PipelineError::Io(e) => CliError::Io(e.to_string()),
            PipelineError::Field(e) => e.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

fn parse_domain(text: &str) -> Result<BoxDomain, CliError> {
    let parts: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let parts = parts.map_err(|_| CliError::Usage(format!("bad --domain `{text}`")))?;
    if parts.len() != 6 {
        return Err(CliError::Usage("--domain needs six comma-separated numbers".into()));
    }
    BoxDomain::new(
        Vec3::new(parts[0], parts[1], parts[2]),
        Vec3::new(parts[3], parts[4], parts[5]),
    )
    .map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_weights(text: &str) -> Result<[f64; 4], CliError> {
    let parts: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let parts = parts.map_err(|_| CliError::Usage(format!("bad --w `{text}`")))?;
    if parts.len() != 4 {
        return Err(CliError::Usage("--w needs four comma-separated weights".into()));
    }
    if parts.iter().any(|w| *w < 0.0) {
        return Err(CliError::Usage("ranking weights must be non-negative".into()));
    }
    Ok([parts[0], parts[1], parts[2], parts[3]])
}

fn parse_mode(text: &str) -> Result<SamplingMode, CliError> {
    match text {
        "uniform" => Ok(SamplingMode::Uniform),
        "random" => Ok(SamplingMode::Random),
        other => Err(CliError::Usage(format!("unknown sampling mode `{other}`"))),
    }
}

fn parse_family(text: &str) -> Result<FamilySelection, CliError> {
    if text == "auto" {
        return Ok(FamilySelection::Auto);
    }
    CurveFamily::parse(text)
        .map(FamilySelection::Fixed)
        .ok_or_else(|| CliError::Usage(format!("unknown family `{text}`")))
}

fn build_field(args: &FieldArgs) -> Result<VectorField, CliError> {
    let spec = FieldSpec::parse(&args.field)?;
    let domain = args.domain.as_deref().map(parse_domain).transpose()?;
    let declared = args.divergence_free.then_some(true);
    let field = spec.build(declared, domain)?;
    if field.declared_divergence_free {
        let (max_abs, _) = divergence_stats(&field, 1000, 1);
        let tol = 1e-8 * (1.0 + field.max_speed(6));
        if max_abs > tol {
            eprintln!(
                "warning: field declared divergence-free but max |div v| = {} over 1000 samples",
                io::fmt_g17(max_abs)
            );
        }
    }
    Ok(field)
}

fn cmd_field_info(field: &VectorField, samples: usize, rng_seed: u64) -> Result<(), CliError> {
    let domain = field.domain;
    println!("field: {}", field.name);
    println!(
        "domain: [{}, {}, {}] .. [{}, {}, {}]",
        domain.min.x, domain.min.y, domain.min.z, domain.max.x, domain.max.y, domain.max.z
    );
    println!("diameter: {}", io::fmt_g17(domain.diameter()));

    let (max_abs, mean_abs) = divergence_stats(field, samples, rng_seed);
    println!(
        "divergence: declared_free={} max|div|={} mean|div|={} ({} samples)",
        field.declared_divergence_free,
        io::fmt_g17(max_abs),
        io::fmt_g17(mean_abs),
        samples
    );

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let ext = domain.extent();
    let mut counts = [0usize; 6];
    let mut second_order = 0usize;
    let mut evaluated = 0usize;
    for _ in 0..samples {
        let p = domain.min
            + Vec3::new(
                rng.random::<f64>() * ext.x,
                rng.random::<f64>() * ext.y,
                rng.random::<f64>() * ext.z,
            );
        let Ok(j) = field.jacobian(&p) else { continue };
        evaluated += 1;
        let jp = strainsurf::field::sym_part(&j);
        let class = classify(&jp, EPS_SIG);
        let slot = match class {
            SignatureClass::Cone => 0,
            SignatureClass::Definite => 1,
            SignatureClass::PlanePair => 2,
            SignatureClass::DoublePlane => 3,
            SignatureClass::Line => 4,
            SignatureClass::AllSpace => 5,
        };
        counts[slot] += 1;
        if !second_order_vectors(&j, &k_matrix(&j)).is_empty() {
            second_order += 1;
        }
    }
    let pct = |n: usize| 100.0 * n as f64 / evaluated.max(1) as f64;
    println!(
        "strain-form signatures: cone {:.1}% | definite {:.1}% | plane-pair {:.1}% | double-plane {:.1}% | line {:.1}% | zero {:.1}%",
        pct(counts[0]),
        pct(counts[1]),
        pct(counts[2]),
        pct(counts[3]),
        pct(counts[4]),
        pct(counts[5])
    );
    println!("second-order vectors exist at {:.1}% of samples", pct(second_order));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_seeds(
    field: &VectorField,
    mode: SamplingMode,
    family: FamilySelection,
    samples: usize,
    h_frac: f64,
    weights: [f64; 4],
    rng_seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let config = PipelineConfig {
        sampling: mode,
        rng_seed,
        samples,
        refine_rounds: 0,
        family,
        weights,
        h_frac,
        ..Default::default()
    };
    let selection = pipeline::refine_and_select(field, &config)?;
    let entries: Vec<_> = selection
        .pool
        .iter()
        .map(|c| (c.curve.clone(), Some(c.report.clone())))
        .collect();
    std::fs::write(out, io::seeds_json(&entries))?;
    eprintln!(
        "wrote {} curves ({} family) to {}",
        entries.len(),
        selection.family_used.as_str(),
        out.display()
    );
    Ok(())
}

fn load_seed(path: &Path, index: usize) -> Result<strainsurf::curves::SeedCurve, CliError> {
    let curves = io::read_seeds_file(path)?;
    curves.into_iter().nth(index).ok_or_else(|| {
        CliError::Usage(format!("seed index {index} out of range in {}", path.display()))
    })
}

fn cmd_surface(
    field: &VectorField,
    seeds: &Path,
    index: usize,
    dt: Option<f64>,
    max_steps: usize,
    out: &Path,
) -> Result<(), CliError> {
    let curve = load_seed(seeds, index)?;
    let dt = dt.unwrap_or_else(|| default_dt(field));
    let mesh = integrate_surface(field, &curve, dt, max_steps)
        .map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::write(out, io::mesh_obj(&mesh))?;
    let sidecar = out.with_extension("energy.csv");
    std::fs::write(&sidecar, io::mesh_energy_csv(field, &mesh))?;
    eprintln!("wrote {} and {}", out.display(), sidecar.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    field: &VectorField,
    seeds: &Path,
    index: usize,
    dt: Option<f64>,
    max_steps: usize,
    mu1: f64,
    mu2: f64,
    iters: usize,
    out: &Path,
) -> Result<(), CliError> {
    let curve = load_seed(seeds, index)?;
    let dt = dt.unwrap_or_else(|| default_dt(field));
    let config = OptimizerConfig {
        mu1,
        mu2,
        max_outer_iters: iters,
        ..Default::default()
    };
    let result = optimise_stream_surface(field, &curve, &config, dt, max_steps)
        .map_err(|e| CliError::Other(e.to_string()))?;

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("final.obj"), io::mesh_obj(&result.mesh))?;
    let report = curve_report(field, &result.seed, &[0.0; 4]).ok();
    std::fs::write(
        out.join("final_seed.json"),
        io::seeds_json(&[(result.seed.clone(), report)]),
    )?;
    let mut log = String::new();
    for record in &result.records {
        log.push_str(&io::opt_record_jsonl(record));
        log.push('\n');
    }
    std::fs::write(out.join("log.jsonl"), log)?;
    let history: Vec<String> = result.es_history.iter().map(|e| io::fmt_g17(*e)).collect();
    eprintln!("E_S history: {}", history.join(" -> "));
    eprintln!("wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_pipeline(
    field: &VectorField,
    config: PipelineConfig,
    out: &Path,
    timings: bool,
) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    let result = pipeline::run_pipeline(field, &config)?;
    let elapsed = started.elapsed().as_secs_f64();
    let timing_entries = vec![("total".to_string(), elapsed)];
    pipeline::emit_artifacts(
        field,
        &result,
        out,
        timings.then_some(timing_entries.as_slice()),
    )?;
    eprintln!(
        "pipeline: {} candidates, {} survivors ({} family), {:.1} s; report in {}",
        result.pool.len(),
        result.optimised.len(),
        result.family_used.as_str(),
        elapsed,
        out.display()
    );
    Ok(())
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::FieldInfo { field, samples, rng_seed } => {
            let field = build_field(&field)?;
            cmd_field_info(&field, samples, rng_seed)
        }
        Command::Seeds { field, mode, family, samples, h_frac, w, rng_seed, out } => {
            let f = build_field(&field)?;
            cmd_seeds(
                &f,
                parse_mode(&mode)?,
                parse_family(&family)?,
                samples,
                h_frac,
                parse_weights(&w)?,
                rng_seed,
                &out,
            )
        }
        Command::Surface { field, seeds, index, dt, max_steps, out } => {
            let f = build_field(&field)?;
            cmd_surface(&f, &seeds, index, dt, max_steps, &out)
        }
        Command::Optimize { field, seeds, index, dt, max_steps, mu1, mu2, iters, out } => {
            let f = build_field(&field)?;
            cmd_optimize(&f, &seeds, index, dt, max_steps, mu1, mu2, iters, &out)
        }
        Command::Pipeline {
            field,
            mode,
            family,
            samples,
            refine,
            top,
            h_frac,
            dt,
            max_steps,
            mu1,
            mu2,
            iters,
            w,
            rng_seed,
            out,
            timings,
        } => {
            if !(top > 0.0 && top <= 1.0) {
                return Err(CliError::Usage("--top must be in (0, 1]".into()));
            }
            let f = build_field(&field)?;
            let config = PipelineConfig {
                sampling: parse_mode(&mode)?,
                rng_seed,
                samples,
                refine_rounds: refine,
                keep_fraction: top,
                family: parse_family(&family)?,
                weights: parse_weights(&w)?,
                h_frac,
                dt,
                max_steps,
                cone_samples: 4,
                optimizer: OptimizerConfig {
                    mu1,
                    mu2,
                    max_outer_iters: iters,
                    ..Default::default()
                },
            };
            cmd_pipeline(&f, config, &out, timings)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}
