//! The `metrise` command line: JSON configuration in, JSON and CSV out.
//!
//! Exit codes: 0 when the structure is metrisable or every identity holds,
//! 1 when it is not or an identity fails, 2 on malformed input or an
//! evaluation error (reported as a JSON error object on stdout).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::Tape;
use crate::frame::{equivariance_sweep, projective_change_check};
use crate::geodesic::integrate;
use crate::projective::{
    check_metrisable_by, weyl_decompose, MetrisabilityReport, ProjectiveStructure, DEFAULT_TOL,
};
use crate::sphere::{
    lat_long_grid, liouville_residual, metric_with_sign, search_xi_convention,
    structure_equation_order, structure_equation_residual, structure_samples, CubeAtlas,
    LiouvilleSolution, SphereChart, SphereMetric, UnitTangent,
};
use crate::tensor::{levi_civita, Chart, ConnectionField, MetricField, OneForm, CUBIC_SLOTS};
use crate::{Error, Expr};

pub const DEFAULT_FD_STEP: f64 = 1e-3;
pub const DEFAULT_RK4_STEP: f64 = 1e-3;
/// Contract tolerance of the Liouville residual at the default FD step.
pub const LIOUVILLE_TOL: f64 = 1e-4;
/// Fixed seed for every randomized check, so reports are reproducible.
const SEED: u64 = 0x006d_6574_7269_7365;

#[derive(Parser, Debug)]
#[command(
    name = "metrise",
    version,
    about = "Metrisability checks for projective surfaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Decide whether the configured metric metrises the configured connection.
    Check(ProblemArgs),
    /// Weyl decomposition of the connection relative to the metric, with CSV grids.
    Decompose(ProblemArgs),
    /// Great-circle metric generated by a matrix A, with verification report.
    Sphere(SphereArgs),
    /// Integrate one geodesic and write (t, x, y, x', y') as CSV.
    Geodesic(GeodesicArgs),
    /// Run the frame-bundle and sphere identity checks.
    VerifyIdentities(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct ProblemArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Grid size as NxM.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<[usize; 2]>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SphereArgs {
    /// Nine comma-separated entries of A, row-major.
    #[arg(long = "A", value_parser = parse_matrix, default_value = "1,0,0,0,1,0,0,0,1")]
    pub a: Matrix3<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub fd_step: Option<f64>,
    #[arg(long)]
    pub rk4_step: Option<f64>,
    /// Latitude x longitude cells of the CSV grid, as NxM.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<[usize; 2]>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GeodesicArgs {
    /// Problem file supplying the chart and connection.
    #[arg(long, conflicts_with = "connection")]
    pub config: Option<PathBuf>,
    /// Builtin connection when no config is given.
    #[arg(long, default_value = "flat")]
    pub connection: String,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub x0: [f64; 2],
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub v0: [f64; 2],
    #[arg(long = "T")]
    pub t_end: f64,
    #[arg(long)]
    pub rk4_step: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long)]
    pub fd_step: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| format!("`{}`: {e}", p.trim()))
        })
        .collect()
}

fn parse_matrix(s: &str) -> Result<Matrix3<f64>, String> {
    let v = parse_numbers(s)?;
    if v.len() != 9 {
        return Err(format!("expected 9 numbers, got {}", v.len()));
    }
    Ok(Matrix3::from_row_slice(&v))
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    match parse_numbers(s)?.as_slice() {
        [a, b] => Ok([*a, *b]),
        v => Err(format!("expected 2 numbers, got {}", v.len())),
    }
}

fn parse_grid(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or("expected NxM")?;
    let n = a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?;
    let m = b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?;
    Ok([n, m])
}

/// The JSON problem file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub chart: Chart,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connection: Option<ConnectionConfig>,
    #[serde(default)]
    pub options: Options,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub g11: String,
    pub g12: String,
    pub g22: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConnectionConfig {
    /// `"flat"` or `"levi-civita"` (of the configured metric).
    Builtin(String),
    /// Keys `G1_11, G1_12, G1_22, G2_11, G2_12, G2_22`; missing keys are 0.
    Components(BTreeMap<String, String>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rk4_step: Option<f64>,
}

fn slot_name(i: usize, j: usize, k: usize) -> String {
    format!("G{}_{}{}", i + 1, j + 1, k + 1)
}

fn parse_field(field: &str, src: &str) -> crate::Result<Expr> {
    Expr::parse(src).map_err(|source| Error::Parse {
        field: field.into(),
        source,
    })
}

impl ProblemConfig {
    pub fn load(path: &Path) -> crate::Result<ProblemConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ProblemConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        cfg.chart.validate()?;
        Ok(cfg)
    }

    pub fn metric(&self) -> crate::Result<Option<MetricField>> {
        let Some(m) = &self.metric else {
            return Ok(None);
        };
        let g = MetricField::new(
            parse_field("metric.g11", &m.g11)?,
            parse_field("metric.g12", &m.g12)?,
            parse_field("metric.g22", &m.g22)?,
        );
        g.validate(&self.chart)?;
        Ok(Some(g))
    }

    pub fn connection(&self) -> crate::Result<Option<ConnectionField>> {
        let Some(c) = &self.connection else {
            return Ok(None);
        };
        match c {
            ConnectionConfig::Builtin(name) => match name.as_str() {
                "flat" => Ok(Some(ConnectionField::flat())),
                "levi-civita" => {
                    let g = self.metric()?.ok_or_else(|| {
                        Error::InvalidArgument("connection \"levi-civita\" needs a metric".into())
                    })?;
                    Ok(Some(levi_civita(&g)))
                }
                other => Err(Error::InvalidArgument(format!(
                    "unknown builtin connection `{other}` (expected \"flat\" or \"levi-civita\")"
                ))),
            },
            ConnectionConfig::Components(map) => {
                let valid: Vec<String> = CUBIC_SLOTS
                    .iter()
                    .map(|&(i, j, k)| slot_name(i, j, k))
                    .collect();
                if let Some(bad) = map.keys().find(|k| !valid.contains(k)) {
                    return Err(Error::InvalidArgument(format!(
                        "unknown connection component `{bad}` (expected one of {})",
                        valid.join(", ")
                    )));
                }
                let comps = CUBIC_SLOTS
                    .iter()
                    .map(|&(i, j, k)| {
                        let name = slot_name(i, j, k);
                        match map.get(&name) {
                            Some(src) => parse_field(&format!("connection.{name}"), src),
                            None => Ok(Expr::zero()),
                        }
                    })
                    .collect::<crate::Result<Vec<_>>>()?;
                Ok(Some(ConnectionField::from_components(
                    comps.try_into().expect("six slots"),
                )))
            }
        }
    }

    fn require(&self) -> crate::Result<(ProjectiveStructure, MetricField)> {
        let g = self
            .metric()?
            .ok_or_else(|| Error::InvalidArgument("config has no metric".into()))?;
        let gamma = self
            .connection()?
            .ok_or_else(|| Error::InvalidArgument("config has no connection".into()))?;
        Ok((ProjectiveStructure::new(gamma, self.chart.clone())?, g))
    }
}

/// Machine-readable error object for exit code 2.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: ErrorBody,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

impl ErrorReport {
    fn new(kind: &str, message: impl Into<String>) -> ErrorReport {
        ErrorReport {
            error: ErrorBody {
                kind: kind.into(),
                message: message.into(),
            },
        }
    }

    fn from_error(e: &Error) -> ErrorReport {
        let kind = match e {
            Error::Parse { .. } => "parse",
            Error::Eval(_) => "evaluation",
            Error::InvalidChart(_) | Error::ChartMismatch => "chart",
            Error::NotPositiveDefinite { .. } | Error::NonPositiveVolume { .. } => "domain",
            Error::OutsideDomain(_) | Error::Blowup { .. } => "integration",
            _ => "input",
        };
        ErrorReport::new(kind, e.to_string())
    }
}

/// What a subcommand produced: a JSON document for stdout, files to write, and
/// whether the check passed.
pub struct Output {
    pub json: String,
    pub files: Vec<(String, String)>,
    pub pass: bool,
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize") + "\n"
}

fn resolve(flag: Option<f64>, config: Option<f64>, default: f64, name: &str) -> crate::Result<f64> {
    let v = flag.or(config).unwrap_or(default);
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

fn with_grid(chart: &Chart, grid: Option<[usize; 2]>) -> crate::Result<Chart> {
    match grid {
        Some([n, m]) => chart.with_grid(n, m),
        None => Ok(chart.clone()),
    }
}

fn load_problem(args: &ProblemArgs) -> crate::Result<(ProblemConfig, f64)> {
    let mut cfg = ProblemConfig::load(&args.config)?;
    cfg.chart = with_grid(&cfg.chart, args.grid)?;
    let tol = resolve(args.tol, cfg.options.tol, DEFAULT_TOL, "tol")?;
    Ok((cfg, tol))
}

pub fn cmd_check(args: &ProblemArgs) -> crate::Result<Output> {
    let (cfg, tol) = load_problem(args)?;
    let (p, g) = cfg.require()?;
    let report = check_metrisable_by(&p, &g, tol)?;
    let json = to_json(&report);
    Ok(Output {
        pass: report.verdict,
        files: vec![("report.json".into(), json.clone())],
        json,
    })
}

#[derive(Debug, Serialize)]
pub struct DecomposeReport {
    #[serde(flatten)]
    pub metrisability: MetrisabilityReport,
    pub sup_abs_b_vector: f64,
    pub sup_abs_phi: f64,
    /// `B` and `φ` in closed form.
    pub b_vector: [String; 2],
    pub phi: BTreeMap<String, String>,
    pub files: Vec<String>,
}

fn csv_grid(points: &[(f64, f64)], values: impl Iterator<Item = f64>) -> String {
    let mut s = String::from("x,y,value\n");
    for (&(x, y), v) in points.iter().zip(values) {
        writeln!(s, "{x},{y},{v}").expect("write to string");
    }
    s
}

pub fn cmd_decompose(args: &ProblemArgs) -> crate::Result<Output> {
    let (cfg, tol) = load_problem(args)?;
    let (p, g) = cfg.require()?;
    let d = weyl_decompose(&p, &g)?;
    let pts = &d.residuals.points;

    let mut exprs: Vec<Expr> = d.b.0.to_vec();
    exprs.extend(d.phi.components());
    let tape = Tape::compile(&exprs);
    let values = crate::grid::map_points(pts, &tape, |_, _, v| Ok(v.to_vec()))?;

    let mut files = vec![
        (
            "abs_a.csv".to_string(),
            csv_grid(pts, d.residuals.a.iter().map(|z| z.norm())),
        ),
        (
            "abs_b.csv".to_string(),
            csv_grid(pts, d.residuals.b.iter().map(|z| z.norm())),
        ),
    ];
    let mut names = vec!["B1".to_string(), "B2".to_string()];
    names.extend(
        CUBIC_SLOTS
            .iter()
            .map(|&(i, j, k)| format!("phi{}_{}{}", i + 1, j + 1, k + 1)),
    );
    for (col, name) in names.iter().enumerate() {
        files.push((
            format!("{name}.csv"),
            csv_grid(pts, values.iter().map(|v| v[col])),
        ));
    }
    let sup = |cols: std::ops::Range<usize>| {
        values
            .iter()
            .flat_map(|v| v[cols.clone()].iter().map(|x| x.abs()))
            .fold(0.0, crate::grid::nan_max)
    };
    let report = DecomposeReport {
        metrisability: crate::projective::report_from_residuals(&d.residuals, tol),
        sup_abs_b_vector: sup(0..2),
        sup_abs_phi: sup(2..8),
        b_vector: [d.b.0[0].to_string(), d.b.0[1].to_string()],
        phi: CUBIC_SLOTS
            .iter()
            .map(|&(i, j, k)| {
                (
                    format!("phi{}_{}{}", i + 1, j + 1, k + 1),
                    d.phi.get(i, j, k).to_string(),
                )
            })
            .collect(),
        files: files.iter().map(|(n, _)| n.clone()).collect(),
    };
    let json = to_json(&report);
    files.push(("report.json".into(), json.clone()));
    Ok(Output {
        pass: report.metrisability.verdict,
        files,
        json,
    })
}

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn below(name: &str, residual: f64, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            residual,
            tolerance,
            pass: residual < tolerance,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct OrderReport {
    pub steps: Vec<f64>,
    pub residuals: Vec<f64>,
    pub ratios: Vec<f64>,
    pub accepted_range: [f64; 2],
    pub pass: bool,
}

fn order_report(fd_step: f64) -> crate::Result<OrderReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let samples = structure_samples(40, &mut rng);
    let o = structure_equation_order(fd_step, 3, &samples)?;
    Ok(OrderReport {
        pass: o.within(3.5, 4.5),
        steps: o.steps,
        residuals: o.residuals,
        ratios: o.ratios,
        accepted_range: [3.5, 4.5],
    })
}

#[derive(Debug, Serialize)]
pub struct SphereReport {
    pub a: [f64; 9],
    pub xi_convention: String,
    /// Signs `ε` seen over the sampled points.
    pub epsilon: Vec<f64>,
    pub liouville: Check,
    pub great_circle: Vec<Check>,
    pub structure_equation_order: OrderReport,
    pub metrisability_gnomonic: MetrisabilityReport,
    pub files: Vec<String>,
    pub pass: bool,
}

/// Initial conditions of the geodesic traces written by `sphere`.
fn sphere_starts() -> Vec<UnitTangent> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    (0..3).map(|_| UnitTangent::random(&mut rng)).collect()
}

pub fn cmd_sphere(args: &SphereArgs) -> crate::Result<Output> {
    let fd_step = resolve(args.fd_step, None, DEFAULT_FD_STEP, "fd-step")?;
    let rk4_step = resolve(args.rk4_step, None, DEFAULT_RK4_STEP, "rk4-step")?;
    let tol = resolve(args.tol, None, DEFAULT_TOL, "tol")?;
    let [nlat, nlon] = args.grid.unwrap_or([90, 180]);
    let sol = LiouvilleSolution::new(args.a)?;
    let metric = SphereMetric::Liouville(sol.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let pts: Vec<UnitTangent> = (0..500).map(|_| UnitTangent::random(&mut rng)).collect();
    let mut epsilon = Vec::new();
    for t in &pts {
        let (_, eps) = metric_with_sign(&sol, t)?;
        if !epsilon.contains(&eps) {
            epsilon.push(eps);
        }
    }
    epsilon.sort_by(f64::total_cmp);
    let liou = liouville_residual(|t| metric.sample(t), &pts, fd_step)?;
    let (convention, _) = search_xi_convention(&pts[..20], 1e-4, 1e-6)
        .ok_or_else(|| Error::InvalidArgument("no Ξ arrangement reproduces the coframe".into()))?;

    let mut files = Vec::new();
    let grid = lat_long_grid(&metric, nlat, nlon)?;
    let mut csv = String::from("lat,lon,p,q,r,mu_re,mu_im,mu_abs\n");
    for s in &grid {
        let abs = s.mu[0].hypot(s.mu[1]);
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            s.lat, s.lon, s.p, s.q, s.r, s.mu[0], s.mu[1], abs
        )
        .expect("write to string");
    }
    files.push(("mu_grid.csv".to_string(), csv));

    let atlas = CubeAtlas::new(&metric);
    let mut great_circle = Vec::new();
    for (k, t0) in sphere_starts().iter().enumerate() {
        let path = atlas.integrate(t0, std::f64::consts::TAU, rk4_step)?;
        great_circle.push(Check::below(
            &format!("geodesic_{k}"),
            path.planarity(&t0.w()),
            tol,
        ));
        let mut csv = String::from("t,x,y,z\n");
        for (t, x) in &path.samples {
            writeln!(csv, "{t},{},{},{}", x[0], x[1], x[2]).expect("write to string");
        }
        files.push((format!("geodesic_{k}.csv"), csv));
    }

    let chart = Chart::square(1.0, 64)?;
    let g = metric.chart_metric(&SphereChart::gnomonic());
    let metrisability = check_metrisable_by(&ProjectiveStructure::flat(chart.clone())?, &g, tol)?;
    let [g11, g12, g22] = g.components().map(|e| e.to_string());
    let gnomonic = ProblemConfig {
        chart,
        metric: Some(MetricConfig { g11, g12, g22 }),
        connection: Some(ConnectionConfig::Builtin("flat".into())),
        options: Options {
            tol: Some(tol),
            ..Options::default()
        },
    };
    files.push(("gnomonic_config.json".to_string(), to_json(&gnomonic)));

    let order = order_report(fd_step)?;
    let liouville = Check::below("liouville", liou, LIOUVILLE_TOL);
    let pass = liouville.pass
        && great_circle.iter().all(|c| c.pass)
        && order.pass
        && metrisability.verdict;
    let mut names: Vec<String> = files.iter().map(|(n, _)| n.clone()).collect();
    names.push("report.json".into());
    let a = args.a;
    let report = SphereReport {
        a: std::array::from_fn(|k| a[(k / 3, k % 3)]),
        xi_convention: convention.to_string(),
        epsilon,
        liouville,
        great_circle,
        structure_equation_order: order,
        metrisability_gnomonic: metrisability,
        files: names,
        pass,
    };
    let json = to_json(&report);
    files.push(("report.json".into(), json.clone()));
    Ok(Output { json, files, pass })
}

#[derive(Debug, Serialize)]
pub struct GeodesicReport {
    pub samples: usize,
    pub step: f64,
    pub truncated: bool,
    pub end: [f64; 4],
}

pub fn cmd_geodesic(args: &GeodesicArgs) -> crate::Result<Output> {
    let (chart, gamma, cfg_step) = match &args.config {
        Some(path) => {
            let cfg = ProblemConfig::load(path)?;
            let gamma = cfg
                .connection()?
                .ok_or_else(|| Error::InvalidArgument("config has no connection".into()))?;
            (cfg.chart.clone(), gamma, cfg.options.rk4_step)
        }
        None => {
            let gamma = match args.connection.as_str() {
                "flat" => ConnectionField::flat(),
                "round-gnomonic" => levi_civita(&SphereMetric::round().chart_metric(&SphereChart::gnomonic())),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown builtin connection `{other}` (expected \"flat\" or \"round-gnomonic\")"
                    )))
                }
            };
            (Chart::square(1e3, 2)?, gamma, None)
        }
    };
    let step = resolve(args.rk4_step, cfg_step, DEFAULT_RK4_STEP, "rk4-step")?;
    let path = integrate(&gamma, &chart, args.x0, args.v0, args.t_end, step)?;
    let mut csv = String::from("t,x,y,xdot,ydot\n");
    for s in &path.samples {
        writeln!(csv, "{},{},{},{},{}", s.t, s.x[0], s.x[1], s.v[0], s.v[1])
            .expect("write to string");
    }
    let last = path.last();
    let report = GeodesicReport {
        samples: path.samples.len(),
        step: path.step,
        truncated: path.truncated,
        end: [last.x[0], last.x[1], last.v[0], last.v[1]],
    };
    match &args.out {
        // without an output directory the CSV itself goes to stdout
        None => Ok(Output {
            json: csv,
            files: Vec::new(),
            pass: true,
        }),
        Some(_) => Ok(Output {
            json: to_json(&report),
            files: vec![
                ("geodesic.csv".into(), csv),
                ("report.json".into(), to_json(&report)),
            ],
            pass: true,
        }),
    }
}

#[derive(Debug, Serialize)]
pub struct IdentityReport {
    pub trials: usize,
    pub fd_step: f64,
    pub identities: Vec<Check>,
    pub structure_equation_order: OrderReport,
    pub xi_convention: Option<String>,
    pub pass: bool,
}

pub fn cmd_verify_identities(args: &VerifyArgs) -> crate::Result<Output> {
    let fd_step = resolve(args.fd_step, None, DEFAULT_FD_STEP, "fd-step")?;
    if args.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let chart = Chart::square(1.0, 2)?;
    let gamma = ConnectionField::from_components(
        [
            "x*y + 0.3",
            "sin(x) - y",
            "exp(0.2*y)",
            "cos(x*y)",
            "x^2 - 0.5",
            "atan(x - y)",
        ]
        .map(|s| Expr::parse(s).expect("builtin expression")),
    );
    let xi = OneForm(
        ["0.4*x - y^2", "exp(-x) * cos(y)"].map(|s| Expr::parse(s).expect("builtin expression")),
    );

    let eq = equivariance_sweep(&gamma, &chart, args.trials, &mut rng)?;
    let change = projective_change_check(&gamma, &xi, &chart, args.trials, &mut rng)?;
    let samples = structure_samples(args.trials, &mut rng);
    let structure = structure_equation_residual(fd_step, &samples)?;
    let points: Vec<UnitTangent> = samples.iter().take(20).map(|s| s.0).collect();
    let convention = search_xi_convention(&points, 1e-4, 1e-6).map(|(c, _)| c.to_string());

    // the FD error scales as h²; 10 h² is the contract at the default h = 1e-3
    let structure_tol = 10.0 * fd_step * fd_step;
    let identities = vec![
        Check::below("omega_equivariance", eq.omega, 1e-12),
        Check::below("theta_equivariance", eq.theta, 1e-12),
        Check::below("omega_gl1c", eq.omega_glc, 1e-12),
        Check::below("zeta_gl1c", eq.zeta_glc, 1e-12),
        Check::below("vertical_theta", eq.vertical, 1e-12),
        Check::below("projective_change", change, 1e-10),
        Check::below("structure_equations", structure, structure_tol),
    ];
    let order = order_report(fd_step)?;
    let pass = identities.iter().all(|c| c.pass) && order.pass && convention.is_some();
    let report = IdentityReport {
        trials: args.trials,
        fd_step,
        identities,
        structure_equation_order: order,
        xi_convention: convention,
        pass,
    };
    let json = to_json(&report);
    Ok(Output {
        files: vec![("report.json".into(), json.clone())],
        json,
        pass,
    })
}

fn out_dir(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::Check(a) | Command::Decompose(a) => a.out.as_deref(),
        Command::Sphere(a) => a.out.as_deref(),
        Command::Geodesic(a) => a.out.as_deref(),
        Command::VerifyIdentities(a) => a.out.as_deref(),
    }
}

fn write_files(dir: &Path, files: &[(String, String)]) -> crate::Result<()> {
    let io = |e: std::io::Error| {
        Error::InvalidArgument(format!("cannot write to {}: {e}", dir.display()))
    };
    fs::create_dir_all(dir).map_err(io)?;
    for (name, body) in files {
        fs::write(dir.join(name), body).map_err(io)?;
    }
    Ok(())
}

fn configure_threads() -> Result<(), ErrorReport> {
    let Ok(raw) = std::env::var("METRISE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        ErrorReport::new(
            "input",
            format!("METRISE_THREADS must be a positive integer, got `{raw}`"),
        )
    })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ErrorReport::new("input", format!("cannot size thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn execute(cmd: &Command) -> crate::Result<Output> {
    let out = match cmd {
        Command::Check(a) => cmd_check(a)?,
        Command::Decompose(a) => cmd_decompose(a)?,
        Command::Sphere(a) => cmd_sphere(a)?,
        Command::Geodesic(a) => cmd_geodesic(a)?,
        Command::VerifyIdentities(a) => cmd_verify_identities(a)?,
    };
    if let Some(dir) = out_dir(cmd) {
        write_files(dir, &out.files)?;
    }
    Ok(out)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            print!(
                "{}",
                to_json(&ErrorReport::new("usage", e.to_string().trim_end()))
            );
            return 2;
        }
    };
    if let Err(report) = configure_threads() {
        print!("{}", to_json(&report));
        return 2;
    }
    match execute(&cli.command) {
        Ok(out) => {
            print!("{}", out.json);
            if out.pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            print!("{}", to_json(&ErrorReport::from_error(&e)));
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_parsers() {
        assert_eq!(parse_grid("64x32").unwrap(), [64, 32]);
        assert!(parse_grid("64").is_err());
        assert_eq!(parse_pair("-1, 2.5").unwrap(), [-1.0, 2.5]);
        assert!(parse_pair("1").is_err());
        assert_eq!(
            parse_matrix("1,0,0,0,1,0,0,0,1").unwrap(),
            Matrix3::identity()
        );
        assert!(parse_matrix("1,2").is_err());
        assert!(parse_matrix("1,0,0,0,1,0,0,0,z").is_err());
    }

    #[test]
    fn config_round_trip() {
        let text = r#"{
            "chart": {"x_range": [-1, 1], "y_range": [-1, 1], "nx": 8, "ny": 8},
            "metric": {"g11": "1", "g12": "0", "g22": "1"},
            "connection": {"G1_11": "x", "G2_22": "y"},
            "options": {"tol": 1e-8}
        }"#;
        let cfg: ProblemConfig = serde_json::from_str(text).unwrap();
        let gamma = cfg.connection().unwrap().unwrap();
        assert_eq!(gamma.get(0, 0, 0).to_string(), "x");
        assert!(gamma.get(0, 1, 1).is_zero());
        let back: ProblemConfig = serde_json::from_str(&to_json(&cfg)).unwrap();
        assert_eq!(back, cfg);

        let bad = ProblemConfig {
            connection: Some(ConnectionConfig::Components(BTreeMap::from([(
                "G3_11".into(),
                "1".into(),
            )]))),
            ..cfg.clone()
        };
        assert!(bad.connection().is_err());
        let unparsable = ProblemConfig {
            metric: Some(MetricConfig {
                g11: "1 +".into(),
                g12: "0".into(),
                g22: "1".into(),
            }),
            ..cfg
        };
        assert!(matches!(unparsable.metric(), Err(Error::Parse { .. })));
    }
}
