use crate::output::{real, sha256_hex, Provenance, Sink};
use crate::{Cli, CliError, Command, MethodArg, OutputArgs};
use infector_core::analytic::{analytic_report, extinction_probabilities, r0, AnalyticReport, BoundsForm};
use infector_core::backward::{explore_susceptibility, t_star};
use infector_core::branching::{estimate_rho_bp, solve_malthusian, BackwardSampler};
use infector_core::forward::{replicate_rho, simulate_replicate, Method, ReplicateOptions};
use infector_core::graph::{EpidemicGraph, VertexId};
use infector_core::model::{ModelConfig, TypeIndex};
use infector_core::rng::{stream, Purpose};
use infector_core::Error;
use std::fs;
use std::path::{Path, PathBuf};

struct LoadedConfig {
    config: ModelConfig,
    hash: String,
}

fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::Config(format!("{} is not UTF-8", path.display())))?;
    let config = ModelConfig::from_json(&text)?;
    config.ensure_valid()?;
    Ok(LoadedConfig { config, hash: sha256_hex(&bytes) })
}

fn sink(out: &OutputArgs, hash: Option<String>, seed: Option<u64>) -> Result<Sink, CliError> {
    Sink::new(out.output_dir.clone(), out.force, Provenance { config_hash: hash, seed, timestamp: !out.no_timestamp })
}

fn supercritical(config: &ModelConfig) -> Result<f64, CliError> {
    let r = r0(&config.mean_matrix()?)?;
    if r <= 1.0 {
        return Err(Error::Subcritical { r0: r }.into());
    }
    Ok(r)
}

fn parse_horizon(text: &str, auto: impl FnOnce() -> Result<f64, CliError>) -> Result<f64, CliError> {
    if text == "auto" {
        return auto();
    }
    match text.parse::<f64>() {
        Ok(h) if h > 0.0 => Ok(h),
        _ => Err(CliError::Usage(format!("horizon must be a positive number or `auto`, got `{text}`"))),
    }
}

fn type_arg(t: usize, k: usize) -> Result<TypeIndex, CliError> {
    if t == 0 || t > k {
        return Err(CliError::Usage(format!("type must be between 1 and {k}")));
    }
    Ok(TypeIndex(t - 1))
}

/// `α T` used for W when the horizon is `auto`; larger values overflow the
/// default population cap in heavy-tailed runs.
pub const AUTO_W_HORIZON: f64 = 9.0;

fn opt_real(x: Option<f64>) -> String {
    x.map_or_else(String::new, real)
}

pub(crate) fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.threads {
        None => run_command(cli.command),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().map_err(|e| CliError::Io(e.to_string()))?;
            pool.install(|| run_command(cli.command))
        }
    }
}

fn run_command(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, replicates, threshold, seed, method, min_large, out } => {
            simulate(&config, replicates, threshold, seed, method, min_large, &out)
        }
        Command::Backward { config, vertex, horizon, kappa, seed, out } => backward(&config, vertex, &horizon, kappa, seed, &out),
        Command::BpEstimate { config, target, replicates, horizon, seed, out } => {
            bp_estimate(&config, target, replicates, &horizon, seed, &out)
        }
        Command::Bounds { p1, m1, m2, as_printed, out } => {
            let grid = Grid { p1: vec![p1], m1: vec![m1], m2: vec![m2] };
            let s = sink(&out, None, None)?;
            s.check_free(&["bounds.csv"])?;
            let rows = run_sweep(&grid, form(as_printed));
            if let Some(err) = rows.iter().find_map(|r| r.error.clone()) {
                return Err(err);
            }
            s.write_table("bounds.csv", &SWEEP_HEADER[..SWEEP_HEADER.len() - 1], &rows.iter().map(|r| r.cells(false)).collect::<Vec<_>>())
        }
        Command::Verify { config, replicates, bp_replicates, bp_horizon, threshold, seed, out } => {
            let loaded = load(&config)?;
            let seed = seed.unwrap_or(loaded.config.seed);
            let s = sink(&out, Some(loaded.hash.clone()), Some(seed))?;
            s.check_free(&["verdicts.csv"])?;
            let manifest = Manifest { config_path: config, replicates, bp_replicates, bp_horizon, threshold, seed };
            let report = run_verify(&manifest)?;
            s.write_table("verdicts.csv", &["check", "target", "measured", "tolerance", "verdict"], &report.rows())?;
            match report.failed() {
                0 => Ok(()),
                failed => Err(CliError::Verdict { failed, total: report.checks.len() }),
            }
        }
        Command::Sweep { p1, m1, m2, as_printed, out } => {
            let grid = Grid { p1: parse_values(&p1)?, m1: parse_values(&m1)?, m2: parse_values(&m2)? };
            let s = sink(&out, None, None)?;
            s.check_free(&["sweep.csv"])?;
            let rows: Vec<Vec<String>> = run_sweep(&grid, form(as_printed)).iter().map(|r| r.cells(true)).collect();
            s.write_table("sweep.csv", &SWEEP_HEADER, &rows)
        }
    }
}

fn form(as_printed: bool) -> BoundsForm {
    if as_printed {
        BoundsForm::AsPrinted
    } else {
        BoundsForm::Corrected
    }
}

fn simulate(
    path: &Path,
    replicates: usize,
    threshold: f64,
    seed: Option<u64>,
    method: MethodArg,
    min_large: Option<usize>,
    out: &OutputArgs,
) -> Result<(), CliError> {
    if replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    let loaded = load(path)?;
    let seed = seed.unwrap_or(loaded.config.seed);
    let s = sink(out, Some(loaded.hash), Some(seed))?;
    s.check_free(&["replicates.csv", "summary.csv"])?;
    let method = match method {
        MethodArg::Eager => Method::Eager,
        MethodArg::Lazy => Method::Lazy,
    };
    let opts = ReplicateOptions { replicates, threshold, method, min_large, ..ReplicateOptions::default() };
    let (estimate, records) = replicate_rho(&loaded.config, &opts, seed)?;
    let k = loaded.config.k();
    let mut header = vec!["replicate".to_string(), "large_outbreak".into(), "final_fraction".into()];
    for i in 1..=k {
        for j in 1..=k {
            header.push(format!("rho_{i}_{j}"));
        }
    }
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let mut row = vec![r.replicate.to_string(), r.large_outbreak.to_string(), real(r.final_fraction)];
            row.extend(r.rho.entries.iter().flatten().map(|e| opt_real(*e)));
            row
        })
        .collect();
    s.write_table("replicates.csv", &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;
    let mut summary = Vec::new();
    for i in 0..k {
        for j in 0..k {
            summary.push(vec![
                (i + 1).to_string(),
                (j + 1).to_string(),
                real(estimate.mean[i][j]),
                real(estimate.stderr[i][j]),
                estimate.replicates_used.to_string(),
                estimate.replicates_total.to_string(),
            ]);
        }
    }
    s.write_table("summary.csv", &["infector_type", "infected_type", "mean", "stderr", "replicates_used", "replicates_total"], &summary)
}

fn backward(path: &Path, vertex: u32, horizon: &str, kappa: f64, seed: Option<u64>, out: &OutputArgs) -> Result<(), CliError> {
    let loaded = load(path)?;
    let config = &loaded.config;
    let seed = seed.unwrap_or(config.seed);
    let s = sink(out, Some(loaded.hash.clone()), Some(seed))?;
    s.check_free(&["susceptibility.csv", "summary.csv"])?;
    if vertex as usize >= config.population.n {
        return Err(CliError::Usage(format!("vertex {vertex} is outside 0..{}", config.population.n)));
    }
    let horizon = parse_horizon(horizon, || {
        supercritical(config)?;
        Ok(t_star(config.population.n, solve_malthusian(config)?.alpha, kappa)?)
    })?;
    let graph = EpidemicGraph::build(config, &mut stream(seed, Purpose::Graph, 0))?;
    let snap = explore_susceptibility(&graph, VertexId(vertex), horizon)?;
    let rows: Vec<Vec<String>> = snap
        .explored
        .iter()
        .enumerate()
        .map(|(order, (v, d))| vec![order.to_string(), v.to_string(), graph.type_of(*v).to_string(), real(*d)])
        .collect();
    s.write_table("susceptibility.csv", &["order", "vertex", "type", "distance"], &rows)?;
    let summary = vec![vec![
        vertex.to_string(),
        real(horizon),
        snap.explored.len().to_string(),
        snap.active.len().to_string(),
        snap.passive.len().to_string(),
        snap.collisions.to_string(),
    ]];
    s.write_table("summary.csv", &["root", "horizon", "explored", "active", "passive", "collisions"], &summary)
}

fn bp_estimate(path: &Path, target: usize, replicates: usize, horizon: &str, seed: Option<u64>, out: &OutputArgs) -> Result<(), CliError> {
    if replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    let loaded = load(path)?;
    let config = &loaded.config;
    let j = type_arg(target, config.k())?;
    let seed = seed.unwrap_or(config.seed);
    let s = sink(out, Some(loaded.hash.clone()), Some(seed))?;
    s.check_free(&["ratios.csv", "summary.csv"])?;
    supercritical(config)?;
    let horizon = parse_horizon(horizon, || Ok(AUTO_W_HORIZON / solve_malthusian(config)?.alpha))?;
    let est = estimate_rho_bp(config, j, replicates, horizon, seed)?;
    let k = config.k();
    let mut header = vec!["replicate".to_string(), "positive".into()];
    header.extend((1..=k).map(|i| format!("rho_{i}_{target}")));
    let rows: Vec<Vec<String>> = est
        .ratios
        .iter()
        .enumerate()
        .map(|(r, ratio)| {
            let mut row = vec![r.to_string(), ratio.is_some().to_string()];
            row.extend((0..k).map(|i| opt_real(ratio.as_ref().map(|v| v[i]))));
            row
        })
        .collect();
    s.write_table("ratios.csv", &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;
    let summary: Vec<Vec<String>> = (0..k)
        .map(|i| {
            vec![
                (i + 1).to_string(),
                target.to_string(),
                real(est.mean[i]),
                real(est.stderr[i]),
                real(est.alpha),
                real(est.horizon),
                real(est.survival),
                real(est.positive_fraction),
            ]
        })
        .collect();
    s.write_table(
        "summary.csv",
        &["infector_type", "infected_type", "mean", "stderr", "alpha", "horizon", "survival", "positive_fraction"],
        &summary,
    )
}

/// Inputs of one verification run.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub config_path: PathBuf,
    /// Large outbreaks to collect in the forward simulation.
    pub replicates: usize,
    pub bp_replicates: usize,
    /// Horizon for W, or `auto`.
    pub bp_horizon: String,
    pub threshold: f64,
    pub seed: u64,
}

/// One verification outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub target: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerdictReport {
    pub checks: Vec<Check>,
}

impl VerdictReport {
    fn push(&mut self, name: impl Into<String>, target: impl Into<String>, measured: f64, tolerance: f64, pass: bool) {
        self.checks.push(Check { name: name.into(), target: target.into(), measured, tolerance, pass });
    }

    /// Pass when `|measured - target| <= tolerance`.
    fn near(&mut self, name: impl Into<String>, target: f64, measured: f64, tolerance: f64) {
        let pass = (measured - target).abs() <= tolerance;
        self.push(name, real(target), measured, tolerance, pass);
    }

    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    pub fn rows(&self) -> Vec<Vec<String>> {
        self.checks
            .iter()
            .map(|c| {
                vec![
                    c.name.clone(),
                    c.target.clone(),
                    real(c.measured),
                    real(c.tolerance),
                    if c.pass { "pass" } else { "fail" }.to_string(),
                ]
            })
            .collect()
    }
}

/// Runs forward and backward estimators on one config and checks them
/// against each other and against the analytic layer.
///
/// Statistical disagreements are reported as failed checks; only
/// infrastructure and numeric problems are errors.
pub fn run_verify(manifest: &Manifest) -> Result<VerdictReport, CliError> {
    if manifest.replicates == 0 || manifest.bp_replicates == 0 {
        return Err(CliError::Usage("replicate counts must be at least 1".into()));
    }
    let config = load(&manifest.config_path)?.config;
    supercritical(&config)?;
    let k = config.k();
    let mut report = VerdictReport::default();

    let sol = solve_malthusian(&config)?;
    report.near("malthusian_residual", 0.0, sol.residual, 1e-10);
    let horizon = parse_horizon(&manifest.bp_horizon, || Ok(AUTO_W_HORIZON / sol.alpha))?;

    let opts = ReplicateOptions {
        replicates: manifest.replicates,
        threshold: manifest.threshold,
        min_large: Some(manifest.replicates),
        ..ReplicateOptions::default()
    };
    let (fwd, records) = replicate_rho(&config, &opts, manifest.seed)?;
    let worst_sum = records
        .iter()
        .flat_map(|r| {
            (0..k).filter_map(move |j| {
                let col: Option<Vec<f64>> = (0..k).map(|i| r.rho.entries[i][j]).collect();
                col.map(|c| (c.iter().sum::<f64>() - 1.0).abs())
            })
        })
        .fold(0.0, f64::max);
    report.near("attribution_column_sums", 0.0, worst_sum, 1e-12);

    for j in 0..k {
        let bp = estimate_rho_bp(&config, TypeIndex(j), manifest.bp_replicates, horizon, manifest.seed)?;
        for i in 0..k {
            let tol = 3.0 * (fwd.stderr[i][j].powi(2) + bp.stderr[i].powi(2)).sqrt();
            report.near(format!("forward_vs_backward_rho_{}_{}", i + 1, j + 1), bp.mean[i], fwd.mean[i][j], tol);
        }
    }

    let q = extinction_probabilities(&config.backward_mean_matrix()?)?.q;
    let sampler = BackwardSampler::new(&config)?;
    for (j, &qj) in q.iter().enumerate() {
        let runs = manifest.bp_replicates;
        let mut rng = stream(manifest.seed, Purpose::Test, j as u64);
        let mut extinct = 0usize;
        for _ in 0..runs {
            extinct += sampler.run(&mut rng, TypeIndex(j), horizon, 10_000)?.extinct() as usize;
        }
        let se = (qj * (1.0 - qj) / runs as f64).sqrt();
        report.near(format!("extinction_frequency_type_{}", j + 1), qj, extinct as f64 / runs as f64, 3.0 * se);
    }

    if let Some((p1, m1, m2)) = config.marked_means() {
        let bounds = analytic_report(p1, m1, m2, BoundsForm::Corrected)?;
        let measured = fwd.mean[0][0];
        let pass = measured >= bounds.rho1_minus && measured <= bounds.rho1_plus;
        report.push("sandwich_rho_1", format!("[{}, {}]", real(bounds.rho1_minus), real(bounds.rho1_plus)), measured, 0.0, pass);
    }

    let a = simulate_replicate(&config, Method::Eager, manifest.seed, 0)?;
    let b = simulate_replicate(&config, Method::Eager, manifest.seed, 0)?;
    report.push("determinism", "identical", (a == b) as u8 as f64, 0.0, a == b);
    Ok(report)
}

/// Cartesian grid over `(p1, m̃1, m̃2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub p1: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Grid {
    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.p1.iter().flat_map(move |&p| self.m1.iter().flat_map(move |&a| self.m2.iter().map(move |&b| (p, a, b))))
    }
}

/// Parses `a,b,c` or `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_values(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("cannot parse value list `{text}`"));
    let nums = |s: &str| s.split([',', ':']).map(|x| x.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>();
    let values = if text.contains(':') {
        match nums(text).map_err(|_| bad())?.as_slice() {
            &[start, stop, step] if step > 0.0 && stop >= start => {
                let count = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=count).map(|i| start + i as f64 * step).collect()
            }
            _ => return Err(bad()),
        }
    } else {
        nums(text).map_err(|_| bad())?
    };
    if values.is_empty() {
        return Err(bad());
    }
    Ok(values)
}

const SWEEP_HEADER: [&str; 13] =
    ["p1", "m1", "m2", "form", "r0", "q", "q_tilde_1", "q_tilde_2", "q1", "q2", "rho1_minus", "rho1_plus", "error"];

/// One evaluated grid point.
#[derive(Debug)]
pub struct SweepRow {
    pub point: (f64, f64, f64),
    pub form: BoundsForm,
    pub report: Option<AnalyticReport>,
    pub error: Option<CliError>,
}

impl SweepRow {
    fn cells(&self, with_error: bool) -> Vec<String> {
        let (p1, m1, m2) = self.point;
        let mut row = vec![real(p1), real(m1), real(m2), format!("{:?}", self.form).to_lowercase()];
        match &self.report {
            Some(r) => row.extend([r.r0, r.q, r.q_tilde_1, r.q_tilde_2, r.q1, r.q2, r.rho1_minus, r.rho1_plus].map(real)),
            None => row.extend(std::iter::repeat_n(String::new(), 8)),
        }
        if with_error {
            row.push(self.error.as_ref().map_or_else(String::new, |e| e.to_string()));
        }
        row
    }
}

/// Evaluates the analytic report at every grid point; failures are kept per row.
pub fn run_sweep(grid: &Grid, form: BoundsForm) -> Vec<SweepRow> {
    grid.points()
        .map(|point| {
            let (p1, m1, m2) = point;
            match analytic_report(p1, m1, m2, form) {
                Ok(r) => SweepRow { point, form, report: Some(r), error: None },
                Err(e) => SweepRow { point, form, report: None, error: Some(e.into()) },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_lists() {
        assert_eq!(parse_values("0.1,0.2").unwrap(), vec![0.1, 0.2]);
        let r = parse_values("0.1:0.9:0.1").unwrap();
        assert_eq!(r.len(), 9);
        assert!((r[8] - 0.9).abs() < 1e-12);
        assert!(parse_values("1:0:0.1").is_err());
        assert!(parse_values("x").is_err());
    }

    #[test]
    fn single_point_sweep_matches_report() {
        let grid = Grid { p1: vec![0.5], m1: vec![2.0], m2: vec![2.0] };
        let rows = run_sweep(&grid, BoundsForm::Corrected);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].report.unwrap(), analytic_report(0.5, 2.0, 2.0, BoundsForm::Corrected).unwrap());
    }

    #[test]
    fn subcritical_points_carry_errors() {
        let grid = Grid { p1: vec![0.5], m1: vec![0.5, 2.0], m2: vec![0.5] };
        let rows = run_sweep(&grid, BoundsForm::Corrected);
        assert!(rows[0].error.is_some() && rows[0].report.is_none());
        assert!(rows[1].error.is_none());
        assert!(rows[0].cells(true).last().unwrap().contains("R0"));
    }

    #[test]
    fn upper_bound_grows_with_p1() {
        let grid = Grid { p1: parse_values("0.1:0.9:0.1").unwrap(), m1: vec![3.0], m2: vec![1.5] };
        let plus: Vec<f64> = run_sweep(&grid, BoundsForm::Corrected).iter().map(|r| r.report.unwrap().rho1_plus).collect();
        for w in plus.windows(2) {
            assert!(w[1] >= w[0], "{plus:?}");
        }
    }
}
