//! Command-line front end: argument parsing, report files and exit codes.
//!
//! Tabular output goes to CSV with a leading `# config=<json>` line; every run also
//! writes a JSON sidecar holding the config, seeds, verdict and any error record.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bergman::KernelModel;
use crate::boundary::{family_from_json, family_to_json, GridParams};
use crate::domain::{convexity_check, estimate_c_omega, finite_difference_check, gradient_band_check, DomainKind, DomainSpec};
use crate::error::{Error, Result};
use crate::flow::{flow, FlowIntegrator};
use crate::geometry::{area_evolution_check, curvature_check};
use crate::numeric::{norm, stream_rng};
use crate::sparse::{WeightedConfig, WeightedRow};
use crate::suite::{derive_seed, Suite, SuiteConfig, Workspace};
use crate::tents::{tent_equivalence_scan, whitney_partition_scan};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "DYADIC_TENTS_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "dyadic-tents", version, about = "Dyadic flow tents and weighted Bergman projection experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Defining-function checks.
    Domain {
        #[command(subcommand)]
        action: DomainAction,
    },
    /// Dyadic grid families.
    Grid {
        #[command(subcommand)]
        action: GridAction,
    },
    /// Flow, Whitney and tent-equivalence checks.
    Tents {
        #[command(subcommand)]
        action: TentsAction,
    },
    /// Curvature, area evolution and tent volumes.
    Geometry {
        #[command(subcommand)]
        action: GeometryAction,
    },
    /// Kernel-tent bound scan.
    Bergman {
        #[command(subcommand)]
        action: BergmanAction,
    },
    /// Sparse domination check.
    Sparse {
        #[command(subcommand)]
        action: SparseAction,
    },
    /// Weighted slope experiment.
    Weighted {
        #[command(subcommand)]
        action: WeightedAction,
    },
    /// Full acceptance pipeline.
    All(AllArgs),
}

#[derive(Subcommand, Debug)]
pub enum DomainAction {
    Check(DomainCheckArgs),
}
#[derive(Subcommand, Debug)]
pub enum GridAction {
    Build(GridBuildArgs),
}
#[derive(Subcommand, Debug)]
pub enum TentsAction {
    Verify(TentsVerifyArgs),
}
#[derive(Subcommand, Debug)]
pub enum GeometryAction {
    Verify(GeometryVerifyArgs),
}
#[derive(Subcommand, Debug)]
pub enum BergmanAction {
    Scan(BergmanScanArgs),
}
#[derive(Subcommand, Debug)]
pub enum SparseAction {
    Check(SparseCheckArgs),
}
#[derive(Subcommand, Debug)]
pub enum WeightedAction {
    Run(WeightedRunArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct DomainCheckArgs {
    #[arg(long)]
    pub domain: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct GridBuildArgs {
    #[arg(long)]
    pub domain: PathBuf,
    #[arg(long, default_value_t = 4000)]
    pub points: usize,
    #[arg(long, default_value_t = 0.125)]
    pub delta: f64,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of adjacent grids `K_0`.
    #[arg(long, default_value_t = 8)]
    pub grids: usize,
    #[arg(long, default_value_t = 2.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1.06)]
    pub c_omega: f64,
    /// Extra Monte-Carlo points per sample point for the Voronoi weights (0 keeps equal weights).
    #[arg(long, default_value_t = 20)]
    pub voronoi_extra: usize,
    /// Run at the given delta even if `96 kappa^6 delta <= 1` or `delta <= 1/(100 C_Omega)` fails.
    #[arg(long)]
    pub waive_delta_conditions: bool,
    /// Level stride `N` (cube sides `delta^(N k)`); default 1.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Use the smallest stride that meets the delta conditions.
    #[arg(long, conflicts_with = "stride")]
    pub auto_stride: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TentsVerifyArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "flow,whitney,equivalence")]
    pub checks: Vec<String>,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct GeometryVerifyArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "curvature,evolution,volumes")]
    pub checks: Vec<String>,
    /// Monte-Carlo cubes per level for the tent-volume check.
    #[arg(long, default_value_t = 5)]
    pub mc_cubes: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct BergmanScanArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Pairs per depth rung.
    #[arg(long, default_value_t = 500)]
    pub pairs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory for the binary moment cache (series kernel only).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SparseCheckArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Second seed for the two-seed stability check.
    #[arg(long)]
    pub stability_seed: Option<u64>,
    #[arg(long, default_value_t = 200_000)]
    pub quad_draws: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct WeightedRunArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// `start:stop:step`, or a comma list; defaults to the ladder for `p`.
    #[arg(long, allow_hyphen_values = true)]
    pub alphas: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 200_000)]
    pub quad_draws: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AllArgs {
    /// Ball domain file; the ellipsoid m = (1, 2) is added for the two-domain criteria.
    #[arg(long)]
    pub domain: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 4000)]
    pub points: usize,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Comma list of criteria to run (default all twelve).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u32>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Result of a subcommand: the verdict and the lines printed to stdout.
#[derive(Debug)]
pub struct Outcome {
    pub pass: bool,
    pub lines: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

/// One line of a check table.
#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub metric: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

fn row(check: &str, metric: &str, value: f64, threshold: &str, pass: bool) -> CheckRow {
    CheckRow {
        check: check.into(),
        metric: metric.into(),
        value,
        threshold: threshold.into(),
        pass,
    }
}

/// Configures the global rayon pool from [`WORKERS_ENV`]; unset or empty leaves the default.
pub fn init_workers() -> Result<Option<usize>> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(None);
    };
    if v.trim().is_empty() {
        return Ok(None);
    }
    let n: usize = v.trim().parse().map_err(|_| Error::InvalidInput(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Error::InvalidInput(format!("{WORKERS_ENV} must be positive")));
    }
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}

/// Parses `start:stop:step` (inclusive, rounded to 1e-9) or `a,b,c`.
pub fn parse_ladder(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidInput(format!("cannot parse ladder {text:?}; use start:stop:step or a comma list"));
    if text.contains(':') {
        let parts: Vec<f64> = text.split(':').map(|x| x.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
        let [a, b, h] = parts[..] else { return Err(bad()) };
        if !(h > 0.0) || b < a {
            return Err(bad());
        }
        let n = ((b - a) / h + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| ((a + i as f64 * h) * 1e9).round() / 1e9).collect())
    } else {
        text.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| bad())).collect()
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// JSON sidecar next to `out`: `report.csv` -> `report.json`, `grid.json` -> `grid.report.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "json") {
        out.with_extension("report.json")
    } else {
        out.with_extension("json")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

/// CSV with a `# config=` comment line, then a header and the rows.
pub fn write_csv<T: Serialize>(path: &Path, config: &Value, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut f = fs::File::create(path)?;
    writeln!(f, "# config={config}")?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

struct GridFile {
    ws: Workspace,
    hash: String,
}

fn load_grid(path: &Path, quad_draws: usize, seed: u64) -> Result<GridFile> {
    let text = read(path)?;
    let (domain, params, sample, family) = family_from_json(&text)?;
    Ok(GridFile {
        ws: Workspace::from_parts(domain, params, sample, family, quad_draws, seed)?,
        hash: sha256_hex(text.as_bytes()),
    })
}

fn config(command: &str, args: &impl Serialize, extra: Value) -> Value {
    json!({ "command": command, "version": env!("CARGO_PKG_VERSION"), "args": args, "inputs": extra })
}

/// Parses `args` (including the program name) and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = init_workers() {
        eprintln!("error[{}]: {e}", e.code());
        return e.exit_code();
    }
    let out = cli.command.report_path();
    match run(&cli.command) {
        Ok(o) => {
            for l in &o.lines {
                println!("{l}");
            }
            o.exit_code()
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            if let Some(p) = out {
                let rec = json!({ "status": "error", "error": { "code": e.code(), "exit_code": e.exit_code(), "message": e.to_string() } });
                let _ = write_json(&sidecar_path(&p), &rec);
            }
            e.exit_code()
        }
    }
}

impl Command {
    /// Main output path, used to place an error record.
    pub fn report_path(&self) -> Option<PathBuf> {
        match self {
            Command::Domain { action: DomainAction::Check(a) } => a.out.clone(),
            Command::Grid { action: GridAction::Build(a) } => Some(a.out.clone()),
            Command::Tents { action: TentsAction::Verify(a) } => Some(a.out.clone()),
            Command::Geometry { action: GeometryAction::Verify(a) } => Some(a.out.clone()),
            Command::Bergman { action: BergmanAction::Scan(a) } => Some(a.out.clone()),
            Command::Sparse { action: SparseAction::Check(a) } => Some(a.out.clone()),
            Command::Weighted { action: WeightedAction::Run(a) } => Some(a.out.clone()),
            Command::All(a) => Some(a.out_dir.join("criteria.csv")),
        }
    }
}

pub fn run(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Domain { action: DomainAction::Check(a) } => domain_check(a),
        Command::Grid { action: GridAction::Build(a) } => grid_build(a),
        Command::Tents { action: TentsAction::Verify(a) } => tents_verify(a),
        Command::Geometry { action: GeometryAction::Verify(a) } => geometry_verify(a),
        Command::Bergman { action: BergmanAction::Scan(a) } => bergman_scan(a),
        Command::Sparse { action: SparseAction::Check(a) } => sparse_check(a),
        Command::Weighted { action: WeightedAction::Run(a) } => weighted_run(a),
        Command::All(a) => all(a),
    }
}

fn finish(out: &Path, cfg: &Value, rows: &[CheckRow], report: Value) -> Result<Outcome> {
    write_csv(out, cfg, rows)?;
    let pass = rows.iter().all(|r| r.pass);
    write_json(&sidecar_path(out), &json!({ "status": if pass { "pass" } else { "fail" }, "config": cfg, "report": report }))?;
    let mut lines: Vec<String> = rows.iter().map(|r| format!("{:<12} {:<28} {:>14.6e}  {:<14} {}", r.check, r.metric, r.value, r.threshold, if r.pass { "PASS" } else { "FAIL" })).collect();
    lines.push(format!("{} -> {}", if pass { "PASS" } else { "FAIL" }, out.display()));
    Ok(Outcome { pass, lines })
}

fn check_names(checks: &[String], known: &[&str]) -> Result<()> {
    match checks.iter().find(|c| !known.contains(&c.as_str())) {
        Some(c) => Err(Error::InvalidInput(format!("unknown check {c:?}; expected one of {}", known.join(",")))),
        None => Ok(()),
    }
}

fn domain_check(a: &DomainCheckArgs) -> Result<Outcome> {
    let text = read(&a.domain)?;
    let d = DomainSpec::from_json(&text)?;
    let cfg = config("domain check", a, json!({ "domain_sha256": sha256_hex(text.as_bytes()) }));
    let cv = convexity_check(&d, a.samples, a.seed)?;
    let gb = gradient_band_check(&d, a.samples, derive_seed(a.seed, 1))?;
    let fd = finite_difference_check(&d, a.samples.min(200), derive_seed(a.seed, 2))?;
    let c_omega = if d.is_bounded() { Some(estimate_c_omega(&d, a.samples.max(100), derive_seed(a.seed, 3))?) } else { None };
    let mut rows = vec![
        row("convexity", "min_hessian_eigenvalue", cv.min_eigenvalue, ">= 0", cv.pass),
        row("gradient", "band_min", gb.band_min, ">= 2/3", gb.pass),
        row("gradient", "band_max", gb.band_max, "<= 3/2", gb.pass),
        row("gradient", "boundary_max_rel_dev", gb.boundary_max_rel_dev, "reported", true),
        row("derivatives", "gradient_rel_err", fd.gradient_rel_err, "fd", fd.pass),
        row("derivatives", "hessian_rel_err", fd.hessian_rel_err, "fd", fd.pass),
        row("derivatives", "hessian_asymmetry", fd.hessian_asymmetry, "fd", fd.pass),
    ];
    if let Some(c) = c_omega {
        rows.push(row("c_omega", "estimate", c, "finite", c.is_finite()));
    }
    let report = json!({ "domain": d.name(), "convexity": cv, "gradient_band": gb, "finite_difference": fd, "c_omega": c_omega });
    match &a.out {
        Some(out) => finish(out, &cfg, &rows, report),
        None => {
            let pass = rows.iter().all(|r| r.pass);
            let mut lines: Vec<String> = rows.iter().map(|r| format!("{:<12} {:<24} {:>14.6e} {}", r.check, r.metric, r.value, if r.pass { "PASS" } else { "FAIL" })).collect();
            lines.push(if pass { "PASS".into() } else { "FAIL".into() });
            Ok(Outcome { pass, lines })
        }
    }
}

fn grid_build(a: &GridBuildArgs) -> Result<Outcome> {
    let text = read(&a.domain)?;
    let d = DomainSpec::from_json(&text)?;
    if a.grids == 0 {
        return Err(Error::InvalidInput("--grids must be at least 1".into()));
    }
    let mut params = GridParams::new(a.delta, a.depth, a.kappa, a.c_omega);
    if a.waive_delta_conditions {
        params = params.waived();
    }
    params.stride = if a.auto_stride { None } else { Some(a.stride.unwrap_or(1)) };
    // refuse before any sampling
    let cond = params.resolve()?;
    let cfg = SuiteConfig {
        seed: a.seed,
        points: a.points,
        voronoi_extra: a.voronoi_extra,
        nbhd_width: d.nbhd_width,
        delta: a.delta,
        depth: a.depth,
        kappa: a.kappa,
        c_omega: a.c_omega,
        waive_delta_conditions: a.waive_delta_conditions,
        grids: a.grids,
        ..SuiteConfig::default()
    };
    let seeds = cfg.grid_seeds();
    let s = crate::boundary::sample_boundary(&d, a.points, derive_seed(a.seed, 1))?;
    let s = if a.voronoi_extra > 0 { crate::boundary::with_voronoi_weights(&d, &s, a.voronoi_extra, derive_seed(a.seed, 2))? } else { s };
    let fam = crate::boundary::build_adjacent_family(&d, &s, &params, &seeds)?;
    ensure_parent(&a.out)?;
    fs::write(&a.out, family_to_json(&d, &params, &s, &fam))?;
    let rows: Vec<Value> = fam.grids.iter().enumerate().map(|(i, g)| json!({ "grid": i, "seed": seeds[i], "n0": g.n0, "levels": g.finest() + 1 - g.first(), "cubes": g.cube_count(), "verification": g.verification, "axioms_hold": g.verification.axioms_hold() })).collect();
    let pass = fam.grids.iter().all(|g| g.verification.axioms_hold());
    let conf = config("grid build", a, json!({ "domain_sha256": sha256_hex(text.as_bytes()), "grid_seeds": seeds }));
    write_json(&sidecar_path(&a.out), &json!({ "status": if pass { "pass" } else { "fail" }, "config": conf, "delta_conditions": cond, "grids": rows }))?;
    let mut lines: Vec<String> = fam
        .grids
        .iter()
        .enumerate()
        .map(|(i, g)| format!("grid {i}: N0 {} levels {}..={} cubes {} frak_c {:.3} axioms {}", g.n0, g.first(), g.finest(), g.cube_count(), g.verification.frak_c, if g.verification.axioms_hold() { "hold" } else { "VIOLATED" }))
        .collect();
    if !cond.ok() {
        lines.push(format!("delta conditions waived: {}", cond.violations().join("; ")));
    }
    lines.push(format!("{} -> {}", if pass { "PASS" } else { "FAIL" }, a.out.display()));
    Ok(Outcome { pass, lines })
}

fn tents_verify(a: &TentsVerifyArgs) -> Result<Outcome> {
    check_names(&a.checks, &["flow", "whitney", "equivalence"])?;
    let g = load_grid(&a.grid, 0, a.seed)?;
    let d = &g.ws.domain;
    let cfg = config("tents verify", a, json!({ "grid_sha256": g.hash }));
    let mut rows = Vec::new();
    let mut report = serde_json::Map::new();
    if a.checks.iter().any(|c| c == "flow") {
        use rand::Rng;
        use rayon::prelude::*;
        let integ = FlowIntegrator::for_domain(d);
        let t0 = d.flow_time();
        let res = (0..a.samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(a.seed, i as u64);
                let z = d.sample_band_point(&mut rng, 0.5 * t0)?;
                let t = rng.random_range(0.0..0.4 * t0);
                let p = flow(d, &z, t, &integ)?;
                let radial = (d.kind == DomainKind::Ball).then(|| (norm(&p) - (norm(&z).powi(2) - 2.0 * t).sqrt()).abs());
                Ok(((d.value(&p) - d.value(&z) + t).abs(), radial))
            })
            .collect::<Result<Vec<_>>>()?;
        let m = res.iter().map(|x| x.0).fold(0.0, f64::max);
        rows.push(row("flow", "max_level_residual", m, "<= 1e-8", m <= 1e-8));
        if d.kind == DomainKind::Ball {
            let r = res.iter().filter_map(|x| x.1).fold(0.0, f64::max);
            rows.push(row("flow", "ball_radial_error", r, "<= 1e-8", r <= 1e-8));
        }
        report.insert("flow".into(), json!({ "integrations": res.len(), "max_residual": m }));
    }
    if a.checks.iter().any(|c| c == "whitney") {
        let grid = &g.ws.family.grids[0];
        let mut scans = Vec::new();
        for k in grid.tent_levels() {
            let s = whitney_partition_scan(d, &g.ws.sample, grid, k, a.samples * 50, derive_seed(a.seed, 20 + k as u64))?;
            let rel = (s.pieces_volume - s.layer_volume).abs() / s.layer_volume.max(1e-300);
            rows.push(row("whitney", &format!("k{k}_pieces_vs_layer"), rel, "<= 1e-12", rel <= 1e-12 && s.projection_failures == 0));
            if let Some(e) = s.exact_layer_volume {
                let z = (s.layer_volume - e).abs() / s.layer_stderr.max(1e-300);
                rows.push(row("whitney", &format!("k{k}_layer_vs_exact_sigma"), z, "<= 3", z <= 3.0));
            }
            scans.push(s);
        }
        report.insert("whitney".into(), serde_json::to_value(scans)?);
    }
    if a.checks.iter().any(|c| c == "equivalence") {
        let ladder = [0.005, 0.01, 0.02, 0.04];
        let r = tent_equivalence_scan(d, &d.reference_point(), &ladder, (a.samples / 20).max(20), derive_seed(a.seed, 30))?;
        rows.push(row("equivalence", "c1", r.c1, if d.kind == DomainKind::Ball { "<= 1.2" } else { "finite" }, r.c1.is_finite() && (d.kind != DomainKind::Ball || r.c1 <= 1.2)));
        rows.push(row("equivalence", "direction_ratio", r.direction_ratio, "<= 3", r.direction_ratio <= 3.0));
        rows.push(row("equivalence", "ladder_spread", r.ladder_spread, "<= 1.3", r.ladder_spread <= 1.3));
        rows.push(row("equivalence", "oracle_failures", r.oracle_failures as f64, "<= 1%", r.valid));
        report.insert("equivalence".into(), serde_json::to_value(r)?);
    }
    finish(&a.out, &cfg, &rows, Value::Object(report))
}

fn geometry_verify(a: &GeometryVerifyArgs) -> Result<Outcome> {
    check_names(&a.checks, &["curvature", "evolution", "volumes"])?;
    let g = load_grid(&a.grid, 0, a.seed)?;
    let d = &g.ws.domain;
    let cfg = config("geometry verify", a, json!({ "grid_sha256": g.hash }));
    let mut rows = Vec::new();
    let mut report = serde_json::Map::new();
    if a.checks.iter().any(|c| c == "curvature") {
        let c = curvature_check(d, 200, derive_seed(a.seed, 1))?;
        match c.max_abs_error {
            Some(e) => rows.push(row("curvature", "max_abs_error", e, "<= 1e-8", e <= 1e-8)),
            None => rows.push(row("curvature", "range_width", c.max - c.min, "reported", true)),
        }
        rows.push(row("curvature", "trace_consistency", c.trace_consistency, "<= 1e-8", c.trace_consistency <= 1e-8));
        report.insert("curvature".into(), serde_json::to_value(c)?);
    }
    if a.checks.iter().any(|c| c == "evolution") {
        let mut rng = stream_rng(derive_seed(a.seed, 2), 0);
        let bases = (0..6).map(|_| d.sample_boundary_point(&mut rng)).collect::<Result<Vec<_>>>()?;
        let e = area_evolution_check(d, &bases, &[0.01, 0.05, 0.1], 3, 0.05, 1e-4, 1e-3, a.seed)?;
        rows.push(row("evolution", "max_residual", e.max_residual, "<= 1e-4", e.max_residual <= 1e-4));
        rows.push(row("evolution", "gronwall_over_bound", e.gronwall_c / e.curvature_bound, "<= 1.1", e.gronwall_c <= 1.1 * e.curvature_bound));
        report.insert("evolution".into(), serde_json::to_value(e)?);
    }
    if a.checks.iter().any(|c| c == "volumes") {
        let reps = g.ws.whitney(a.mc_cubes)?;
        for r in reps {
            let lo = r.rows.iter().map(|w| w.prop35_ratio).fold(f64::INFINITY, f64::min);
            let hi = r.rows.iter().map(|w| w.prop35_ratio).fold(0.0, f64::max);
            rows.push(row("volumes", &format!("k{}_prop35_min", r.level), lo, ">= 0.45", lo >= 0.45));
            rows.push(row("volumes", &format!("k{}_prop35_max", r.level), hi, "<= 2.1", hi <= 2.1));
            rows.push(row("volumes", &format!("k{}_whitney_max", r.level), r.max_ratio, &format!("<= {:.4} + 3 sigma", r.bound), r.pass));
            rows.push(row("volumes", &format!("k{}_skipped", r.level), r.skipped.len() as f64, "0", r.skipped.is_empty()));
        }
        report.insert("volumes".into(), serde_json::to_value(reps)?);
    }
    finish(&a.out, &cfg, &rows, Value::Object(report))
}

fn kernel_for(d: &DomainSpec, cache: Option<&Path>) -> Result<KernelModel> {
    match d.kind {
        DomainKind::Ball => KernelModel::ball_closed_form(d),
        _ => KernelModel::series_auto(d, 0.2, cache),
    }
}

fn bergman_scan(a: &BergmanScanArgs) -> Result<Outcome> {
    let g = load_grid(&a.grid, 0, a.seed)?;
    let model = kernel_for(&g.ws.domain, a.cache_dir.as_deref())?;
    let r = g.ws.kernel_scan(&model, a.pairs, a.seed)?;
    let cfg = config("bergman scan", a, json!({ "grid_sha256": g.hash, "kernel": format!("{:?}", model.mode), "kernel_config": r.config }));
    write_csv(&a.out, &cfg, &r.pairs)?;
    let summary = json!({ "a_max": r.a_max, "depth_ratio": r.depth_ratio, "failure_rate": r.failure_rate, "symmetry": r.symmetry, "rungs": r.rungs, "skipped": r.skipped });
    write_json(&sidecar_path(&a.out), &json!({ "status": if r.pass { "pass" } else { "fail" }, "config": cfg, "report": summary }))?;
    let mut lines: Vec<String> = r.rungs.iter().map(|x| format!("depth {:.3e}: pairs {} root {} failures {} max A {:.4} median A {:.4}", x.depth, x.pairs, x.root_pairs, x.failures, x.max_a, x.median_a)).collect();
    lines.push(format!("A {:.4} depth ratio {:.3} (<= 2) failures {:.4} (<= 0.02) skipped {}", r.a_max, r.depth_ratio, r.failure_rate, r.skipped.len()));
    lines.push(format!("{} -> {}", if r.pass { "PASS" } else { "FAIL" }, a.out.display()));
    Ok(Outcome { pass: r.pass, lines })
}

fn sparse_check(a: &SparseCheckArgs) -> Result<Outcome> {
    let g = load_grid(&a.grid, a.quad_draws, a.seed)?;
    if g.ws.domain.kind != DomainKind::Ball {
        return Err(Error::InvalidInput("sparse check runs on the ball with the closed-form kernel".into()));
    }
    let model = KernelModel::ball_closed_form(&g.ws.domain)?;
    let r = g.ws.sparse(&model, a.seed)?;
    let second = a.stability_seed.map(|s| g.ws.sparse(&model, s)).transpose()?;
    let cfg = config("sparse check", a, json!({ "grid_sha256": g.hash, "sparse_config": r.config }));
    write_csv(&a.out, &cfg, &r.records)?;
    let mut pass = r.c_s.is_finite() && r.violations.is_empty() && r.depth_ratio <= 2.0;
    let mut lines = vec![format!("seed {}: C_s {:.4} rungs {:?} depth ratio {:.3} max raw {:.3} violations {}", a.seed, r.c_s, r.rung_stat.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>(), r.depth_ratio, r.max_raw_ratio, r.violations.len())];
    let mut seed_ratio = None;
    if let Some(b) = &second {
        let q = r.c_s.max(b.c_s) / r.c_s.min(b.c_s);
        pass &= b.c_s.is_finite() && b.violations.is_empty() && b.depth_ratio <= 2.0 && q <= 2.0;
        seed_ratio = Some(q);
        lines.push(format!("seed {}: C_s {:.4} depth ratio {:.3}; two-seed ratio {q:.3}", b.seed, b.c_s, b.depth_ratio));
    }
    let brief = |r: &crate::sparse::SparseReport| json!({ "seed": r.seed, "c_s": r.c_s, "rung_stat": r.rung_stat, "depth_ratio": r.depth_ratio, "tight_rung": r.tight_rung, "max_raw_ratio": r.max_raw_ratio, "summaries": r.summaries, "violations": r.violations, "skipped": r.skipped });
    let mut runs = vec![brief(&r)];
    runs.extend(second.as_ref().map(brief));
    write_json(&sidecar_path(&a.out), &json!({ "status": if pass { "pass" } else { "fail" }, "config": cfg, "runs": runs, "seed_ratio": seed_ratio }))?;
    lines.push(format!("{} -> {}", if pass { "PASS" } else { "FAIL" }, a.out.display()));
    Ok(Outcome { pass, lines })
}

#[derive(Serialize)]
struct SlopeCsvRow<'a> {
    alpha: f64,
    ap_constant: f64,
    norm_lower_bound: f64,
    contributing_trial: &'a str,
    maximal_ratio: f64,
    weighted_maximal_ratio: f64,
    duality_error: f64,
}

impl<'a> From<&'a WeightedRow> for SlopeCsvRow<'a> {
    fn from(r: &'a WeightedRow) -> Self {
        SlopeCsvRow {
            alpha: r.alpha,
            ap_constant: r.ap_constant,
            norm_lower_bound: r.norm_lower_bound,
            contributing_trial: &r.contributing_trial,
            maximal_ratio: r.maximal_ratio,
            weighted_maximal_ratio: r.weighted_maximal_ratio,
            duality_error: r.duality_error,
        }
    }
}

fn weighted_run(a: &WeightedRunArgs) -> Result<Outcome> {
    if !(a.p > 1.0) {
        return Err(Error::InvalidInput(format!("--p must exceed 1, got {}", a.p)));
    }
    let mut wc = WeightedConfig::new(a.p);
    if let Some(s) = &a.alphas {
        wc.alphas = parse_ladder(s)?;
    }
    wc.trials = a.trials;
    let g = load_grid(&a.grid, a.quad_draws, a.seed)?;
    if g.ws.domain.kind != DomainKind::Ball {
        return Err(Error::InvalidInput("weighted run uses the closed-form ball kernel; build the grid on a ball".into()));
    }
    let model = KernelModel::ball_closed_form(&g.ws.domain)?;
    let r = g.ws.weighted(&model, &wc, a.seed)?;
    let cfg = config("weighted run", a, json!({ "grid_sha256": g.hash, "weighted_config": wc }));
    let rows: Vec<SlopeCsvRow> = r.rows.iter().map(SlopeCsvRow::from).collect();
    write_csv(&a.out, &cfg, &rows)?;
    let limit = 1f64.max(1.0 / (a.p - 1.0)) + 0.3;
    let pass = r.slope.is_finite() && r.slope <= limit && r.flagged.is_empty();
    write_json(&sidecar_path(&a.out), &json!({ "status": if pass { "pass" } else { "fail" }, "config": cfg, "slope": r.slope, "intercept": r.intercept, "theory_exponent": r.theory_exponent, "limit": limit, "flagged": r.flagged }))?;
    let mut lines: Vec<String> = r.rows.iter().map(|x| format!("alpha {:+.3}: [w]_Ap {:.4} ||P|| >= {:.4} ({})", x.alpha, x.ap_constant, x.norm_lower_bound, x.contributing_trial)).collect();
    lines.push(format!("slope {:.4} (limit {limit:.3}), theory exponent {:.3}, flagged {}", r.slope, r.theory_exponent, r.flagged.len()));
    lines.push(format!("{} -> {}", if pass { "PASS" } else { "FAIL" }, a.out.display()));
    Ok(Outcome { pass, lines })
}

#[derive(Serialize)]
struct CriterionCsvRow<'a> {
    id: u32,
    name: &'a str,
    pass: bool,
    summary: &'a str,
}

fn all(a: &AllArgs) -> Result<Outcome> {
    let text = read(&a.domain)?;
    let d = DomainSpec::from_json(&text)?;
    if d.kind != DomainKind::Ball || d.n != 2 {
        return Err(Error::InvalidInput("`all` expects the ball in C^2; the ellipsoid (1, 2) is added automatically".into()));
    }
    if let Some(bad) = a.only.iter().find(|&&i| !(1..=12).contains(&i)) {
        return Err(Error::InvalidInput(format!("no criterion {bad}")));
    }
    let sc = SuiteConfig {
        seed: a.seed,
        points: a.points,
        nbhd_width: d.nbhd_width,
        cache_dir: a.cache_dir.clone(),
        ..SuiteConfig::default()
    };
    let ell = DomainSpec::ellipsoid(&[1, 2])?.with_nbhd_width(d.nbhd_width)?;
    let suite = Suite::with_domains(sc.clone(), d, ell)?;
    let ids: Vec<u32> = if a.only.is_empty() { (1..=12).collect() } else { a.only.clone() };
    let results: Vec<_> = ids.iter().map(|&i| suite.run(i)).collect();
    let cfg = config("all", a, json!({ "domain_sha256": sha256_hex(text.as_bytes()), "suite": sc, "grid_seeds": sc.grid_seeds() }));
    let csv_rows: Vec<CriterionCsvRow> = results.iter().map(|c| CriterionCsvRow { id: c.id, name: &c.name, pass: c.pass, summary: &c.summary }).collect();
    let out = a.out_dir.join("criteria.csv");
    write_csv(&out, &cfg, &csv_rows)?;
    let pass = results.iter().all(|c| c.pass);
    write_json(&a.out_dir.join("criteria.json"), &json!({ "status": if pass { "pass" } else { "fail" }, "config": cfg, "criteria": results }))?;
    let mut lines: Vec<String> = results.iter().map(|c| c.line()).collect();
    lines.push(format!("{}/{} criteria pass -> {}", results.iter().filter(|c| c.pass).count(), results.len(), out.display()));
    Ok(Outcome { pass, lines })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_parsing() {
        assert_eq!(parse_ladder("-0.6:0.6:0.2").unwrap(), vec![-0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6]);
        assert_eq!(parse_ladder("0,0.5").unwrap(), vec![0.0, 0.5]);
        assert!(parse_ladder("1:0:0.1").is_err());
        assert!(parse_ladder("a:b").is_err());
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar_path(Path::new("x/report.csv")), PathBuf::from("x/report.json"));
        assert_eq!(sidecar_path(Path::new("grid.json")), PathBuf::from("grid.report.json"));
    }

    #[test]
    fn strict_delta_is_refused_with_condition_named() {
        let dir = tempfile::tempdir().unwrap();
        let dom = dir.path().join("ball2.json");
        fs::write(&dom, DomainSpec::ball(2).unwrap().with_nbhd_width(0.3).unwrap().to_json()).unwrap();
        let out = dir.path().join("grid.json");
        let args = ["dyadic-tents", "grid", "build", "--domain", dom.to_str().unwrap(), "--points", "600", "--delta", "0.125", "--depth", "2", "--out", out.to_str().unwrap()];
        let cli = Cli::try_parse_from(args).unwrap();
        let err = run(&cli.command).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("96"), "{err}");
        assert!(!out.exists());
    }

    #[test]
    fn bad_arguments_are_config_errors() {
        assert_eq!(main_with_args(["dyadic-tents", "grid", "build"]), 2);
        assert_eq!(main_with_args(["dyadic-tents", "domain", "check", "--domain", "/nonexistent/d.json"]), 2);
    }

    #[test]
    fn csv_has_config_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_csv(&p, &json!({ "seed": 3 }), &[row("a", "b", 1.5, "<= 2", true)]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), r#"# config={"seed":3}"#);
        assert_eq!(lines.next().unwrap(), "check,metric,value,threshold,pass");
    }
}
