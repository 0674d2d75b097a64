//! phlab — reproducible experiments on partially hyperbolic torus
//! endomorphisms.
//!
//! Every experiment is described by a JSON config (map, command, parameters,
//! seed, output directory); command-line flags override config fields. Runs
//! are deterministic given the config: re-running writes byte-identical CSV
//! bodies and report.json, with wall-clock metadata segregated into
//! run_meta.json. Exit codes: 0 success, 1 golden-comparison mismatch,
//! 2 config/validation error, 3 numerical failure (a partial report is
//! still written when available).

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use phlab::drift::{run_drift, DriftParams};
use phlab::extension::{extend_past, Chooser, PastWord};
use phlab::leaves::{
    minimality_probe, specialness_probe, unstable_arc, Curve, UnstableArc, DEFAULT_POINT_BUDGET,
};
use phlab::measure::{push_arc_measure, tv_distance, GridHistogram};
use phlab::normal_form::{normal_chart, Bundle};
use phlab::splitting::{
    center_exponent, stopping_times, unstable_stretch, LyapunovNormParams,
};
use phlab::{certify_cones, ConeField, MapSpec, PhlabError, SplitMix64, TorusPoint};

#[derive(Parser)]
#[command(name = "phlab", version, about = "numerical experiments on torus endomorphisms")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Grid resolution for grid-based commands.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Suppress the summary line.
    #[arg(long, global = true, default_value_t = false)]
    quiet: bool,
    /// Map preset: product | irreducible | sheared-product | sheared-irreducible.
    #[arg(long, global = true)]
    map: Option<String>,
    /// Shear size for the sheared presets.
    #[arg(long, global = true)]
    eps: Option<f64>,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Certify the unstable cone condition on a grid.
    CertifyCones(CertifyArgs),
    /// Birkhoff estimate of the center Lyapunov exponent.
    Exponents(ExponentArgs),
    /// Fiber spread of unstable directions over random pasts.
    Specialness(SpecialnessArgs),
    /// Build an unstable arc and export it as CSV.
    UnstableArc(ArcArgs),
    /// Push an arc forward, marking visited grid cells.
    Minimality(MinimalityArgs),
    /// Empirical invariant measure from arc pushforward.
    Ugibbs(UgibbsArgs),
    /// Densities and normal-form charts along an unstable arc.
    NormalFormCheck(NormalFormArgs),
    /// Stopping times of the coupled-configuration clock.
    StoppingTimes(StoppingArgs),
    /// The coupled-configuration drift experiment.
    Drift(DriftArgs),
    /// Run the command named inside a config file.
    Run,
    /// Field-by-field comparison of a report against a golden file.
    CompareGolden(GoldenArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::CertifyCones(_) => "certify-cones",
            Command::Exponents(_) => "exponents",
            Command::Specialness(_) => "specialness",
            Command::UnstableArc(_) => "unstable-arc",
            Command::Minimality(_) => "minimality",
            Command::Ugibbs(_) => "ugibbs",
            Command::NormalFormCheck(_) => "normal-form-check",
            Command::StoppingTimes(_) => "stopping-times",
            Command::Drift(_) => "drift",
            Command::Run => "run",
            Command::CompareGolden(_) => "compare-golden",
        }
    }
}

#[derive(Args, Clone, Default)]
struct CertifyArgs {
    /// Cone as a slope interval "lo,hi".
    #[arg(long)]
    slopes: Option<String>,
    #[arg(long)]
    ell: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct ExponentArgs {
    #[arg(long)]
    n: Option<usize>,
    /// Starting point "x,y" (seeded randomly when absent).
    #[arg(long)]
    point: Option<String>,
}

#[derive(Args, Clone, Default)]
struct SpecialnessArgs {
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct ArcArgs {
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    resolution: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct MinimalityArgs {
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Comma-separated heights; the past is trapped in these rows.
    #[arg(long)]
    trap_rows: Option<String>,
}

#[derive(Args, Clone, Default)]
struct UgibbsArgs {
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Averaged (windowed Cesàro) histogram instead of the last iterate.
    #[arg(long)]
    cesaro: Option<bool>,
    /// Number of independent seed arcs (pairwise tv reported when > 1).
    #[arg(long)]
    arcs: Option<usize>,
    #[arg(long)]
    trap_rows: Option<String>,
}

#[derive(Args, Clone, Default)]
struct NormalFormArgs {
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    truncation: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct StoppingArgs {
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    ell: Option<usize>,
    /// Unstable offset of the translated point.
    #[arg(long)]
    du: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct DriftArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    ell_min: Option<usize>,
    #[arg(long)]
    ell_max: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    alpha_min: Option<f64>,
    #[arg(long)]
    du_min: Option<f64>,
    #[arg(long)]
    du_max: Option<f64>,
}

#[derive(Args, Clone)]
struct GoldenArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    golden: PathBuf,
    /// JSON table {"dotted.field.path": tolerance}; absent fields compare
    /// strictly.
    #[arg(long)]
    tolerances: Option<PathBuf>,
}

/// The fully resolved experiment description, echoed into every report.
#[derive(Clone, Serialize, Deserialize)]
struct ExperimentConfig {
    map: MapSpec,
    command: String,
    #[serde(default)]
    parameters: Value,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_out")]
    output_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("phlab-out")
}

fn parse_point(s: &str) -> anyhow::Result<TorusPoint> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        bail!("point must be \"x,y\", got {s:?}");
    }
    let x: f64 = parts[0].trim().parse().context("point x")?;
    let y: f64 = parts[1].trim().parse().context("point y")?;
    if !x.is_finite() || !y.is_finite() {
        bail!("point coordinates must be finite");
    }
    Ok(TorusPoint::new(x, y))
}

fn parse_rows(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow!("row: {e}")))
        .collect()
}

fn map_preset(name: &str, eps: f64) -> anyhow::Result<MapSpec> {
    Ok(match name {
        "product" => MapSpec::product_expanding(),
        "irreducible" => MapSpec::irreducible_expanding(),
        "sheared-product" => MapSpec::sheared_product(eps),
        "sheared-irreducible" => MapSpec::sheared_irreducible(eps),
        other => bail!(
            "unknown map preset {other:?}; use product | irreducible | sheared-product | \
             sheared-irreducible, or provide a config file"
        ),
    })
}

/// Merge a CLI-provided value into the parameter table.
fn set_if<T: Serialize>(params: &mut Value, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        params[key] = serde_json::to_value(v).unwrap();
    }
}

fn get_or<T: for<'de> Deserialize<'de>>(params: &Value, key: &str, default: T) -> anyhow::Result<T> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => serde_json::from_value(v.clone())
            .with_context(|| format!("parameter {key:?} has the wrong type")),
    }
}

fn seeded_point(rng: &mut SplitMix64) -> TorusPoint {
    TorusPoint::new(rng.next_f64(), rng.next_f64())
}

fn resolve_point(params: &Value, rng: &mut SplitMix64) -> anyhow::Result<TorusPoint> {
    match params.get("point") {
        None | Some(Value::Null) => Ok(seeded_point(rng)),
        Some(v) => {
            let xy: [f64; 2] = serde_json::from_value(v.clone()).context("parameter \"point\"")?;
            Ok(TorusPoint::new(xy[0], xy[1]))
        }
    }
}

fn trapped_or_random_word(
    map: &MapSpec,
    p: TorusPoint,
    depth: usize,
    rows: &Option<Vec<f64>>,
    rng: &mut SplitMix64,
) -> Result<PastWord, PhlabError> {
    match rows {
        Some(rows) => {
            let pred = |z: TorusPoint| {
                rows.iter().any(|r| {
                    let d = (z.y() - r).abs();
                    d.min(1.0 - d) < 1e-9
                })
            };
            extend_past(map, p, &mut Chooser::TrapInSet(&pred), depth)
        }
        None => extend_past(map, p, &mut Chooser::Uniform(rng), depth),
    }
}

struct RunOutput {
    results: Value,
    /// name -> file body, written verbatim (deterministic bytes).
    files: BTreeMap<String, Vec<u8>>,
}

fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput, PhlabError> {
    let map = &config.map;
    let params = &config.parameters;
    let mut rng = SplitMix64::new(config.seed);
    let bad =
        |msg: String| -> PhlabError { PhlabError::InvalidParameter(msg) };
    let p_err = |e: anyhow::Error| bad(e.to_string());

    let mut files = BTreeMap::new();
    let results = match config.command.as_str() {
        "certify-cones" => {
            let slopes: [f64; 2] =
                get_or(params, "slopes", [-0.5, 0.5]).map_err(p_err)?;
            let ell = get_or(params, "ell", 1usize).map_err(p_err)?;
            let grid_n = get_or(params, "grid_n", 64usize).map_err(p_err)?;
            let cone = ConeField::from_slopes(slopes[0], slopes[1])?;
            let cert = certify_cones(map, &cone, ell, grid_n)?;
            files.insert(
                "cones.csv".into(),
                format!(
                    "verified,sigma,margin,tau,ell,grid_n,worst_i,worst_j\n{},{},{},{},{},{},{},{}\n",
                    cert.verified,
                    cert.sigma,
                    cert.margin,
                    cert.tau,
                    cert.ell,
                    cert.grid_n,
                    cert.worst_cell[0],
                    cert.worst_cell[1]
                )
                .into_bytes(),
            );
            serde_json::to_value(&cert).unwrap()
        }
        "exponents" => {
            let n = get_or(params, "n", 100_000usize).map_err(p_err)?;
            let start = resolve_point(params, &mut rng).map_err(p_err)?;
            let est = center_exponent(map, start, n)?;
            files.insert(
                "exponents.csv".into(),
                format!(
                    "value,stderr,n,start_x,start_y\n{},{},{},{},{}\n",
                    est.value,
                    est.stderr,
                    est.n,
                    start.x(),
                    start.y()
                )
                .into_bytes(),
            );
            json!({
                "center_exponent": est.value,
                "stderr": est.stderr,
                "n": est.n,
                "start": [start.x(), start.y()],
            })
        }
        "specialness" => {
            let depth = get_or(params, "depth", 40usize).map_err(p_err)?;
            let samples = get_or(params, "samples", 256usize).map_err(p_err)?;
            let p = resolve_point(params, &mut rng).map_err(p_err)?;
            let rep = specialness_probe(map, p, depth, samples, rng.next_u64(), &[])?;
            let mut csv = String::from("index,theta\n");
            for (i, t) in rep.per_word_theta.iter().enumerate() {
                csv.push_str(&format!("{i},{t}\n"));
            }
            files.insert("thetas.csv".into(), csv.into_bytes());
            json!({
                "angle_spread": rep.angle_spread,
                "sample_count": rep.sample_count,
                "depth": rep.depth,
                "base": [p.x(), p.y()],
            })
        }
        "unstable-arc" => {
            let depth = get_or(params, "depth", 60usize).map_err(p_err)?;
            let radius = get_or(params, "radius", 0.5f64).map_err(p_err)?;
            let resolution = get_or(params, "resolution", 1e-3f64).map_err(p_err)?;
            let p = resolve_point(params, &mut rng).map_err(p_err)?;
            let w = extend_past(map, p, &mut Chooser::Uniform(&mut rng), depth)?;
            let arc = unstable_arc(map, &w, radius, resolution)?;
            files.insert("arc.csv".into(), arc_csv(&arc).into_bytes());
            json!({
                "vertices": arc.points().len(),
                "radius": radius,
                "base": [p.x(), p.y()],
                "branches": w.branches(),
            })
        }
        "minimality" => {
            let depth = get_or(params, "depth", 50usize).map_err(p_err)?;
            let radius = get_or(params, "radius", 0.5f64).map_err(p_err)?;
            let resolution = get_or(params, "resolution", 1e-3f64).map_err(p_err)?;
            let iterations = get_or(params, "iterations", 8usize).map_err(p_err)?;
            let grid_n = get_or(params, "grid_n", 64usize).map_err(p_err)?;
            let rows: Option<Vec<f64>> = get_or(params, "trap_rows", None).map_err(p_err)?;
            let p = resolve_point(params, &mut rng).map_err(p_err)?;
            let w = trapped_or_random_word(map, p, depth, &rows, &mut rng)?;
            let arc = unstable_arc(map, &w, radius, resolution)?;
            let rep = minimality_probe(map, &arc, iterations, grid_n, DEFAULT_POINT_BUDGET)?;
            files.insert("coverage.csv".into(), coverage_csv(&rep.visited_fraction));
            files.insert("mask.pbm".into(), rep.to_pbm().into_bytes());
            json!({
                "grid_n": rep.grid_n,
                "visited_fraction": rep.visited_fraction,
                "final_fraction": rep.final_fraction(),
            })
        }
        "ugibbs" => {
            let depth = get_or(params, "depth", 60usize).map_err(p_err)?;
            let radius = get_or(params, "radius", 0.5f64).map_err(p_err)?;
            let resolution = get_or(params, "resolution", 1e-3f64).map_err(p_err)?;
            let iterations = get_or(params, "iterations", 12usize).map_err(p_err)?;
            let grid_n = get_or(params, "grid_n", 32usize).map_err(p_err)?;
            let cesaro = get_or(params, "cesaro", true).map_err(p_err)?;
            let arcs = get_or(params, "arcs", 1usize).map_err(p_err)?;
            let rows: Option<Vec<f64>> = get_or(params, "trap_rows", None).map_err(p_err)?;
            let mut hists: Vec<GridHistogram> = Vec::new();
            let mut report_json = json!({});
            for k in 0..arcs.max(1) {
                let p = if k == 0 {
                    resolve_point(params, &mut rng).map_err(p_err)?
                } else {
                    seeded_point(&mut rng)
                };
                let w = trapped_or_random_word(map, p, depth, &rows, &mut rng)?;
                let arc = unstable_arc(map, &w, radius, resolution)?;
                let rep =
                    push_arc_measure(map, &arc, iterations, grid_n, cesaro, DEFAULT_POINT_BUDGET)?;
                if k == 0 {
                    files.insert("histogram.csv".into(), rep.histogram.to_csv().into_bytes());
                    files.insert("histogram.bin".into(), rep.histogram.to_binary());
                    report_json = json!({
                        "tv_to_uniform": rep.tv_to_uniform,
                        "center_exponent": rep.center_exponent,
                        "iterations": rep.iterations,
                        "window_start": rep.window_start,
                        "grid_n": grid_n,
                    });
                }
                hists.push(rep.histogram);
            }
            if hists.len() > 1 {
                let mut max_pairwise = 0.0f64;
                for i in 0..hists.len() {
                    for j in (i + 1)..hists.len() {
                        max_pairwise = max_pairwise.max(tv_distance(&hists[i], &hists[j])?);
                    }
                }
                report_json["max_pairwise_tv"] = json!(max_pairwise);
                report_json["arcs"] = json!(hists.len());
            }
            report_json
        }
        "normal-form-check" => {
            let depth = get_or(params, "depth", 80usize).map_err(p_err)?;
            let radius = get_or(params, "radius", 0.1f64).map_err(p_err)?;
            let resolution = get_or(params, "resolution", 1e-3f64).map_err(p_err)?;
            let truncation = get_or(params, "truncation", 40usize).map_err(p_err)?;
            let p = resolve_point(params, &mut rng).map_err(p_err)?;
            let w = extend_past(map, p, &mut Chooser::Uniform(&mut rng), depth)?;
            let arc = unstable_arc(map, &w, radius, resolution)?;
            let chart = normal_chart(map, &arc, &w, Bundle::Unstable, truncation)?;
            let mut csv = String::from("arclength,rho,r\n");
            for i in 0..chart.params.len() {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    chart.params[i], chart.rho[i], chart.r[i]
                ));
            }
            files.insert("chart.csv".into(), csv.into_bytes());

            // Conjugacy residual against the shifted chart.
            let w_next = phlab::extension::shift(map, &w)?;
            let lam_u = unstable_stretch(map, &w)?;
            let arc_next = unstable_arc(map, &w_next, radius * 4.0 + 0.1, resolution)?;
            let chart_next = normal_chart(map, &arc_next, &w_next, Bundle::Unstable, truncation)?;
            let mut residual = 0.0f64;
            for k in 0..arc.points().len() {
                if arc.params()[k].abs() > 0.8 * radius {
                    continue;
                }
                let fy = map.evaluate(arc.points()[k]);
                if let Some((s_img, _)) =
                    phlab::leaves::locate_on_curve(&arc_next, fy, 0.02)
                {
                    residual = residual.max((chart_next.r_at(s_img) - lam_u * chart.r[k]).abs());
                }
            }
            json!({
                "vertices": chart.params.len(),
                "base_slope": chart.base_slope(),
                "conjugacy_residual": residual,
                "truncation": truncation,
            })
        }
        "stopping-times" => {
            let depth = get_or(params, "depth", 60usize).map_err(p_err)?;
            let epsilon = get_or(params, "epsilon", 0.01f64).map_err(p_err)?;
            let ell = get_or(params, "ell", 20usize).map_err(p_err)?;
            let du = get_or(params, "du", 0.3f64).map_err(p_err)?;
            let p = resolve_point(params, &mut rng).map_err(p_err)?;
            let w = extend_past(map, p, &mut Chooser::Uniform(&mut rng), depth)?;
            let arc = unstable_arc(map, &w, du + 0.05, 1e-3)?;
            let x_u = arc.point_at(du);
            let lyap = LyapunovNormParams::default_for(map)?;
            let rec = stopping_times(map, &w, x_u, epsilon, ell, &lyap)?;
            let mut csv = String::from("k,hat_lambda\n");
            for (k, v) in rec.lyapunov_trace.iter().enumerate() {
                csv.push_str(&format!("{k},{v}\n"));
            }
            files.insert("trace.csv".into(), csv.into_bytes());
            json!({
                "tau": rec.tau,
                "t": rec.t,
                "epsilon": rec.epsilon,
                "ell": rec.ell,
                "du": du,
            })
        }
        "drift" => {
            let defaults = DriftParams::default();
            let drift = DriftParams {
                epsilon: get_or(params, "epsilon", defaults.epsilon).map_err(p_err)?,
                ell_min: get_or(params, "ell_min", defaults.ell_min).map_err(p_err)?,
                ell_max: get_or(params, "ell_max", defaults.ell_max).map_err(p_err)?,
                count: get_or(params, "count", defaults.count).map_err(p_err)?,
                alpha_min: get_or(params, "alpha_min", defaults.alpha_min).map_err(p_err)?,
                du_min: get_or(params, "du_min", defaults.du_min).map_err(p_err)?,
                du_max: get_or(params, "du_max", defaults.du_max).map_err(p_err)?,
            };
            let report = run_drift(map, &drift, config.seed)?;
            let mut csv = String::from(
                "ell,alpha,d_u,tau,t,m,displacement_before,displacement_after\n",
            );
            for r in &report.records {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.ell, r.alpha, r.d_u, r.tau, r.t, r.m, r.displacement_before,
                    r.displacement_after
                ));
            }
            files.insert("records.csv".into(), csv.into_bytes());
            json!({
                "count": report.records.len(),
                "beta_hat": report.beta_hat,
                "slope_before": report.slope_before,
                "epsilon": report.epsilon,
            })
        }
        other => {
            return Err(bad(format!(
                "unknown command {other:?} in config"
            )))
        }
    };
    Ok(RunOutput { results, files })
}

fn arc_csv(arc: &UnstableArc) -> String {
    let mut csv = String::from("arclength,x,y\n");
    for (p, s) in arc.points().iter().zip(arc.params()) {
        csv.push_str(&format!("{},{},{}\n", s, p.x(), p.y()));
    }
    csv
}

fn coverage_csv(fractions: &[f64]) -> Vec<u8> {
    let mut csv = String::from("iterate,visited_fraction\n");
    for (i, f) in fractions.iter().enumerate() {
        csv.push_str(&format!("{i},{f}\n"));
    }
    csv.into_bytes()
}

/// Flatten a JSON tree into dotted-path -> value.
fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&path, child, out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), child, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn compare_golden(args: &GoldenArgs) -> anyhow::Result<bool> {
    let report: Value = serde_json::from_str(
        &std::fs::read_to_string(&args.report).context("reading report")?,
    )?;
    let golden: Value = serde_json::from_str(
        &std::fs::read_to_string(&args.golden).context("reading golden")?,
    )?;
    let tolerances: BTreeMap<String, f64> = match &args.tolerances {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    let mut got = BTreeMap::new();
    let mut want = BTreeMap::new();
    flatten("", &report, &mut got);
    flatten("", &golden, &mut want);

    let mut failures = Vec::new();
    for (path, expected) in &want {
        match got.get(path) {
            None => failures.push(format!("missing field {path}")),
            Some(actual) => {
                let ok = match (actual.as_f64(), expected.as_f64()) {
                    (Some(a), Some(e)) => match tolerances.get(path) {
                        Some(tol) => (a - e).abs() <= *tol,
                        None => a == e,
                    },
                    _ => actual == expected,
                };
                if !ok {
                    failures.push(format!("field {path}: got {actual}, want {expected}"));
                }
            }
        }
    }
    for line in &failures {
        eprintln!("compare-golden: {line}");
    }
    Ok(failures.is_empty())
}

fn load_config(common: &CommonArgs, command: &Command) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {path:?}"))?;
            serde_json::from_str::<ExperimentConfig>(&text).context("parsing config")?
        }
        None => {
            let eps = common.eps.unwrap_or(0.01);
            let name = common
                .map
                .as_deref()
                .ok_or_else(|| anyhow!("either --config or --map is required"))?;
            ExperimentConfig {
                map: map_preset(name, eps)?,
                command: command.name().to_string(),
                parameters: json!({}),
                seed: 0,
                output_dir: default_out(),
            }
        }
    };
    // Flag overrides.
    if let Some(name) = &common.map {
        if common.config.is_some() {
            config.map = map_preset(name, common.eps.unwrap_or(0.01))?;
        }
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(grid) = common.grid {
        config.parameters["grid_n"] = json!(grid);
    }
    if !matches!(command, Command::Run | Command::CompareGolden(_)) {
        if config.command != command.name() && common.config.is_some() {
            bail!(
                "config names command {:?} but the {:?} subcommand was invoked; use `phlab run` \
                 to dispatch from the config",
                config.command,
                command.name()
            );
        }
        config.command = command.name().to_string();
    }

    // Per-command flag overrides into the parameter table.
    let params = &mut config.parameters;
    if !params.is_object() {
        *params = json!({});
    }
    match command {
        Command::CertifyCones(a) => {
            if let Some(s) = &a.slopes {
                let rows = parse_rows(s)?;
                if rows.len() != 2 {
                    bail!("--slopes needs \"lo,hi\"");
                }
                params["slopes"] = json!(rows);
            }
            set_if(params, "ell", &a.ell);
        }
        Command::Exponents(a) => {
            set_if(params, "n", &a.n);
            if let Some(p) = &a.point {
                let p = parse_point(p)?;
                params["point"] = json!([p.x(), p.y()]);
            }
        }
        Command::Specialness(a) => {
            set_if(params, "depth", &a.depth);
            set_if(params, "samples", &a.samples);
            if let Some(p) = &a.point {
                let p = parse_point(p)?;
                params["point"] = json!([p.x(), p.y()]);
            }
        }
        Command::UnstableArc(a) => {
            set_if(params, "depth", &a.depth);
            set_if(params, "radius", &a.radius);
            set_if(params, "resolution", &a.resolution);
            if let Some(p) = &a.point {
                let p = parse_point(p)?;
                params["point"] = json!([p.x(), p.y()]);
            }
        }
        Command::Minimality(a) => {
            set_if(params, "depth", &a.depth);
            set_if(params, "radius", &a.radius);
            set_if(params, "resolution", &a.resolution);
            set_if(params, "iterations", &a.iterations);
            if let Some(p) = &a.point {
                let p = parse_point(p)?;
                params["point"] = json!([p.x(), p.y()]);
            }
            if let Some(rows) = &a.trap_rows {
                params["trap_rows"] = json!(parse_rows(rows)?);
            }
        }
        Command::Ugibbs(a) => {
            set_if(params, "depth", &a.depth);
            set_if(params, "radius", &a.radius);
            set_if(params, "resolution", &a.resolution);
            set_if(params, "iterations", &a.iterations);
            set_if(params, "cesaro", &a.cesaro);
            set_if(params, "arcs", &a.arcs);
            if let Some(p) = &a.point {
                let p = parse_point(p)?;
                params["point"] = json!([p.x(), p.y()]);
            }
            if let Some(rows) = &a.trap_rows {
                params["trap_rows"] = json!(parse_rows(rows)?);
            }
        }
        Command::NormalFormCheck(a) => {
            set_if(params, "depth", &a.depth);
            set_if(params, "radius", &a.radius);
            set_if(params, "resolution", &a.resolution);
            set_if(params, "truncation", &a.truncation);
            if let Some(p) = &a.point {
                let p = parse_point(p)?;
                params["point"] = json!([p.x(), p.y()]);
            }
        }
        Command::StoppingTimes(a) => {
            set_if(params, "depth", &a.depth);
            set_if(params, "epsilon", &a.epsilon);
            set_if(params, "ell", &a.ell);
            set_if(params, "du", &a.du);
            if let Some(p) = &a.point {
                let p = parse_point(p)?;
                params["point"] = json!([p.x(), p.y()]);
            }
        }
        Command::Drift(a) => {
            set_if(params, "epsilon", &a.epsilon);
            set_if(params, "ell_min", &a.ell_min);
            set_if(params, "ell_max", &a.ell_max);
            set_if(params, "count", &a.count);
            set_if(params, "alpha_min", &a.alpha_min);
            set_if(params, "du_min", &a.du_min);
            set_if(params, "du_max", &a.du_max);
        }
        Command::Run | Command::CompareGolden(_) => {}
    }
    Ok(config)
}

fn write_outputs(
    config: &ExperimentConfig,
    output: &RunOutput,
    wall: f64,
) -> anyhow::Result<()> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {dir:?}"))?;
    let report = json!({
        "config": serde_json::to_value(config)?,
        "results": output.results,
    });
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    let meta = json!({
        "wall_time_s": wall,
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    std::fs::write(dir.join("run_meta.json"), serde_json::to_string_pretty(&meta)?)?;
    for (name, body) in &output.files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

fn numerical_partial(err: &PhlabError) -> Option<Value> {
    match err {
        PhlabError::CoverageBudget { partial, completed } => Some(json!({
            "completed_iterations": completed,
            "visited_fraction": partial.visited_fraction,
            "grid_n": partial.grid_n,
        })),
        PhlabError::MeasureBudget { partial, completed } => Some(json!({
            "completed_iterations": completed,
            "tv_to_uniform": partial.tv_to_uniform,
        })),
        _ => None,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    // PHLAB_THREADS caps parallelism inside module calls.
    if let Ok(threads) = std::env::var("PHLAB_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }

    if let Command::CompareGolden(args) = &cli.command {
        return match compare_golden(args) {
            Ok(true) => {
                if !cli.common.quiet {
                    println!("compare-golden: pass");
                }
                ExitCode::SUCCESS
            }
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        };
    }

    let config = match load_config(&cli.common, &cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };

    let t0 = Instant::now();
    match run_experiment(&config) {
        Ok(output) => {
            if let Err(e) = write_outputs(&config, &output, t0.elapsed().as_secs_f64()) {
                eprintln!("error writing outputs: {e:#}");
                return ExitCode::from(2);
            }
            if !cli.common.quiet {
                println!(
                    "{}: {}",
                    config.command,
                    serde_json::to_string(&output.results).unwrap_or_default()
                );
            }
            ExitCode::SUCCESS
        }
        Err(e @ (PhlabError::InvalidMap(_) | PhlabError::InvalidParameter(_))) => {
            eprintln!("validation error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("numerical failure: {e}");
            let partial = numerical_partial(&e);
            let output = RunOutput {
                results: json!({ "error": e.to_string(), "partial": partial }),
                files: BTreeMap::new(),
            };
            let _ = write_outputs(&config, &output, t0.elapsed().as_secs_f64());
            ExitCode::from(3)
        }
    }
}
