//! Verbs behind the command-line tool: each runs one pipeline and writes its
//! artifacts under an output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::age_discretization::check_discrete_hypotheses;
use crate::config::RunConfig;
use crate::diagnostics::{all_margins, DiagnosticsObserver, MarginReport, MeasuredConstants, TestFunction, WeakResidual, WeakResidualObserver};
use crate::error::{Result, SimError};
use crate::model_spec::{validate_hypotheses, HypothesisReport};
use crate::reduced::{cross_validate, reduced_spec_for, run_reduced, CrossValTolerances};
use crate::solver::{run, Observer, Problem, SimState, StepResult};
use crate::spatial_grid::{Field, SpatialGrid};

/// Result of a verb: whether the exit status should be success, plus the
/// JSON summary that was also written to disk.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub ok: bool,
    pub summary: serde_json::Value,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn sha256_json(value: &impl Serialize) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_string(value)?.as_bytes())))
}

#[derive(Debug, Serialize)]
struct Failure<'a> {
    status: &'static str,
    verb: &'a str,
    kind: &'static str,
    message: String,
}

fn error_kind(e: &SimError) -> &'static str {
    match e {
        SimError::NonFiniteEvaluation { .. } => "non_finite_evaluation",
        SimError::DegenerateDiffusion { .. } => "degenerate_diffusion",
        SimError::QuadratureDivergence { .. } => "quadrature_divergence",
        SimError::RatioUndefined { .. } => "ratio_undefined",
        SimError::HypothesisViolation(_) => "hypothesis_violation",
        SimError::NegativeInitialData { .. } => "negative_initial_data",
        SimError::GridMismatch { .. } => "grid_mismatch",
        SimError::NegativeField { .. } => "negative_field",
        SimError::UnstableStep { .. } => "unstable_step",
        SimError::InadmissibleTestFunction(_) => "inadmissible_test_function",
        SimError::ConfigInvalid(_) => "config_invalid",
        SimError::ConfigMismatch(_) => "config_mismatch",
        SimError::Io(_) => "io",
        SimError::Json(_) => "json",
        SimError::Csv(_) => "csv",
    }
}

/// Machine-readable description of an error, written to `failure.json` when
/// the directory is writable.
pub fn failure_json(verb: &str, e: &SimError, out: Option<&Path>) -> String {
    let f = Failure { status: "error", verb, kind: error_kind(e), message: e.to_string() };
    let text = serde_json::to_string_pretty(&f).expect("failure serializes");
    if let Some(dir) = out {
        if fs::create_dir_all(dir).is_ok() {
            let _ = fs::write(dir.join("failure.json"), format!("{text}\n"));
        }
    }
    text
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginSummary {
    pub estimate: String,
    pub min_margin: f64,
    pub passed: bool,
    pub skipped: Option<String>,
}

impl From<&MarginReport> for MarginSummary {
    fn from(m: &MarginReport) -> Self {
        Self { estimate: m.estimate.clone(), min_margin: m.min_margin, passed: m.passed, skipped: m.skipped.clone() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub hypothesis_report_hash: String,
    pub hypotheses_passed: bool,
    pub constants: MeasuredConstants,
    pub margins: Vec<MarginSummary>,
    pub weak_residual_max: Option<f64>,
    pub tstar_crossed: bool,
    pub theta_activations: u64,
    pub steps: u64,
    pub final_time: f64,
    pub wall_time: f64,
}

/// Everything a full run produces in memory.
pub struct RunArtifacts {
    pub manifest: Manifest,
    pub margins: Vec<MarginReport>,
    pub weak: Vec<(TestFunction, WeakResidual)>,
    pub hypotheses: HypothesisReport,
    /// (t, Λ, v) at every sample time.
    pub samples: Vec<(f64, Field, Field)>,
    pub grid: SpatialGrid,
    pub final_state: SimState,
}

impl RunArtifacts {
    pub fn all_margins_nonnegative(&self) -> bool {
        self.margins.iter().all(|m| m.passed)
    }
}

/// Keeps the macroscopic fields and optionally writes every sample to disk.
struct SnapshotWriter {
    dir: Option<PathBuf>,
    samples: Vec<(f64, Field, Field)>,
}

impl SnapshotWriter {
    fn write(&self, dir: &Path, k: usize, s: &SimState, p: &Problem) -> Result<()> {
        let names: Vec<String> = (1..=s.u.len()).map(|i| format!("u_{i}")).collect();
        let mut cols: Vec<(&str, &[f64])> = vec![("lambda", &s.lambda_rec), ("v", &s.v)];
        cols.extend(names.iter().zip(&s.u).map(|(n, u)| (n.as_str(), u.as_slice())));
        p.sgrid.write_csv(BufWriter::new(File::create(dir.join(format!("snap_{k:04}.csv")))?), &cols)?;
        p.sgrid.write_binary(BufWriter::new(File::create(dir.join(format!("snap_{k:04}.bin")))?), s.t, &cols)
    }
}

impl Observer for SnapshotWriter {
    fn on_sample(&mut self, s: &SimState, p: &Problem) -> Result<()> {
        if let Some(dir) = &self.dir {
            self.write(dir, self.samples.len(), s, p)?;
        }
        self.samples.push((s.t, s.lambda_rec.clone(), s.v.clone()));
        Ok(())
    }
}

/// Hooks of the full pipeline run side by side.
struct RunObservers {
    diag: DiagnosticsObserver,
    weak: Option<WeakResidualObserver>,
    snaps: SnapshotWriter,
}

impl Observer for RunObservers {
    fn on_sample(&mut self, s: &SimState, p: &Problem) -> Result<()> {
        self.diag.on_sample(s, p)?;
        if let Some(w) = &mut self.weak {
            w.on_sample(s, p)?;
        }
        self.snaps.on_sample(s, p)
    }

    fn on_step(&mut self, prev: &SimState, next: &SimState, res: &StepResult, p: &Problem) -> Result<()> {
        self.diag.on_step(prev, next, res, p)?;
        if let Some(w) = &mut self.weak {
            w.on_step(prev, next, res, p)?;
        }
        Ok(())
    }
}

fn hypotheses_for(cfg: &RunConfig, p: &Problem) -> Result<HypothesisReport> {
    let r_max = cfg.diagnostics.r_max.unwrap_or(1.0 / cfg.alpha);
    validate_hypotheses(&p.spec, r_max, cfg.a_max(), cfg.diagnostics.hypothesis_samples)
}

/// The full pipeline: hypotheses, binned run with diagnostics and weak
/// residuals, and (if `out` is given) every artifact on disk.
pub fn simulate(cfg: &RunConfig, out: Option<&Path>) -> Result<RunArtifacts> {
    let start = Instant::now();
    let p = cfg.problem()?;
    let hypotheses = hypotheses_for(cfg, &p)?;
    if !hypotheses.all_passed() {
        log::warn!("continuum hypotheses fail on the sampled range; envelopes may not apply");
    }
    let s0 = cfg.initial_state(&p)?;
    let snap_dir = match out {
        Some(dir) => {
            let d = dir.join("snapshots");
            fs::create_dir_all(&d)?;
            Some(d)
        }
        None => None,
    };
    let catalogue = if cfg.test_functions.enabled {
        TestFunction::catalogue(cfg.t_end, p.grid.age_horizon(), &cfg.test_functions.modes, p.sgrid.dim)
    } else {
        Vec::new()
    };
    let mut obs = RunObservers {
        diag: DiagnosticsObserver::new(&s0, &cfg.diagnostics.tail_ages, &p),
        weak: if catalogue.is_empty() { None } else { Some(WeakResidualObserver::new(&catalogue, &p, cfg.t_end)?) },
        snaps: SnapshotWriter { dir: snap_dir, samples: Vec::new() },
    };
    let end = run(s0, &cfg.run_params(), &p, &mut obs)?;
    let record = obs.diag.finish(&p)?;
    let margins = if cfg.diagnostics.enabled { all_margins(&record) } else { Vec::new() };
    let weak: Vec<(TestFunction, WeakResidual)> = match &obs.weak {
        Some(w) => catalogue.into_iter().zip(w.residuals()).collect(),
        None => Vec::new(),
    };
    let manifest = Manifest {
        config_hash: cfg.hash(),
        hypothesis_report_hash: sha256_json(&hypotheses)?,
        hypotheses_passed: hypotheses.all_passed(),
        constants: record.constants,
        margins: margins.iter().map(MarginSummary::from).collect(),
        weak_residual_max: weak.iter().map(|(_, r)| r.value).reduce(f64::max),
        tstar_crossed: end.tstar_crossed,
        theta_activations: end.theta_activations,
        steps: end.step_count,
        final_time: end.t,
        wall_time: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        record.write_csv(BufWriter::new(File::create(dir.join("diagnostics.csv"))?))?;
        write_json(&dir.join("margins.json"), &margins)?;
        write_json(&dir.join("hypotheses.json"), &hypotheses)?;
        let mut wr = csv::Writer::from_path(dir.join("weak_residuals.csv"))?;
        wr.write_record(["mode_x", "mode_y", "residual", "signed", "transport", "inflow", "initial", "diffusion", "flux"])?;
        for (phi, r) in &weak {
            let m = phi.terms[0].modes;
            let mut row = vec![m[0].to_string(), m[1].to_string(), r.value.to_string(), r.signed.to_string()];
            row.extend(r.terms.iter().map(|x| x.to_string()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        write_json(&dir.join("manifest.json"), &manifest)?;
    }
    Ok(RunArtifacts {
        manifest,
        margins,
        weak,
        hypotheses,
        samples: obs.snaps.samples,
        grid: p.sgrid,
        final_state: end,
    })
}

pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let a = simulate(cfg, Some(out))?;
    Ok(Outcome { ok: a.all_margins_nonnegative(), summary: serde_json::to_value(&a.manifest)? })
}

#[derive(Debug, Serialize)]
struct ReducedManifest {
    config_hash: String,
    m0: f64,
    m1: f64,
    m2: f64,
    tau: f64,
    steps: u64,
    final_time: f64,
    wall_time: f64,
}

pub fn cmd_reduced(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let p = cfg.problem()?;
    let spec = reduced_spec_for(cfg)?;
    let s0 = cfg.initial_state(&p)?;
    let traj = run_reduced(&spec, &p.sgrid, s0.lambda_rec, s0.v, &cfg.run_params())?;
    let dir = out.join("snapshots");
    fs::create_dir_all(&dir)?;
    for (k, s) in traj.iter().enumerate() {
        let cols: [(&str, &[f64]); 2] = [("lambda", &s.lambda), ("v", &s.v)];
        p.sgrid.write_csv(BufWriter::new(File::create(dir.join(format!("snap_{k:04}.csv")))?), &cols)?;
        p.sgrid.write_binary(BufWriter::new(File::create(dir.join(format!("snap_{k:04}.bin")))?), s.t, &cols)?;
    }
    let last = traj.last().expect("initial state is always recorded");
    let m = ReducedManifest {
        config_hash: cfg.hash(),
        m0: spec.m0,
        m1: spec.m1,
        m2: spec.m2,
        tau: spec.tau,
        steps: last.step_count,
        final_time: last.t,
        wall_time: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("manifest.json"), &m)?;
    Ok(Outcome { ok: true, summary: serde_json::to_value(&m)? })
}

pub fn cmd_crossval(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let report = cross_validate(cfg, CrossValTolerances::default())?;
    let mut wr = csv::Writer::from_path(out.join("crossval.csv"))?;
    wr.write_record(["alpha", "lambda_l2", "v_l2", "lambda_linf_l1", "v_linf_l1"])?;
    for l in &report.levels {
        wr.write_record([l.alpha, l.lambda_l2, l.v_l2, l.lambda_linf_l1, l.v_linf_l1].map(|x| x.to_string()))?;
    }
    wr.flush()?;
    write_json(&out.join("crossval.json"), &report)?;
    Ok(Outcome { ok: report.passed, summary: serde_json::to_value(&report)? })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepLevel {
    pub level: usize,
    pub alpha: f64,
    pub cells: Vec<usize>,
    /// Difference to the previous (coarser) level; absent on level 0.
    pub diff_lambda: Option<f64>,
    pub diff_v: Option<f64>,
    pub residual: Option<f64>,
    pub margins_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub levels: Vec<SweepLevel>,
    /// diff_{k+1}/diff_k for Λ and v.
    pub ratios_lambda: Vec<f64>,
    pub ratios_v: Vec<f64>,
    /// Observed orders in α between consecutive differences.
    pub orders_lambda: Vec<f64>,
    pub orders_v: Vec<f64>,
    pub config_hash: String,
}

/// α-levels of the sweep: the configured plan, or halvings of the base α.
pub fn sweep_alphas(cfg: &RunConfig, levels: Option<usize>) -> Result<Vec<f64>> {
    let mut alphas = match (&cfg.sweep, levels) {
        (Some(plan), _) => plan.alphas.clone(),
        (None, n) => (0..n.unwrap_or(3)).map(|k| cfg.alpha / 2f64.powi(k as i32)).collect(),
    };
    if let Some(n) = levels {
        alphas.truncate(n);
    }
    let mut bad = Vec::new();
    if alphas.len() < 3 {
        bad.push(format!("sweep: {} levels given, at least 3 are needed", alphas.len()));
    }
    if alphas.windows(2).any(|w| w[1] >= w[0]) {
        bad.push("sweep: alphas must be strictly decreasing".into());
    }
    if bad.is_empty() {
        Ok(alphas)
    } else {
        Err(SimError::ConfigInvalid(bad))
    }
}

/// ‖f − g‖ in L²((0,T)×Ω) with the time integral by the trapezoid rule.
fn space_time_l2(grid: &SpatialGrid, times: &[f64], f: &[Field], g: &[Field]) -> f64 {
    let sq: Vec<f64> = f
        .iter()
        .zip(g)
        .map(|(a, b)| {
            let d: Field = a.iter().zip(b).map(|(x, y)| x - y).collect();
            grid.norm_l2(&d).powi(2)
        })
        .collect();
    let mut acc = 0.0;
    for k in 1..times.len() {
        acc += 0.5 * (times[k] - times[k - 1]) * (sq[k] + sq[k - 1]);
    }
    acc.sqrt()
}

pub fn cmd_sweep(cfg: &RunConfig, levels: Option<usize>, out: &Path) -> Result<Outcome> {
    let report = sweep(cfg, levels, Some(out))?;
    let ok = report.levels.iter().all(|l| l.margins_ok);
    Ok(Outcome { ok, summary: serde_json::to_value(&report)? })
}

/// Runs every level concurrently and differences consecutive levels on the
/// finest grid.
pub fn sweep(cfg: &RunConfig, levels: Option<usize>, out: Option<&Path>) -> Result<SweepReport> {
    let alphas = sweep_alphas(cfg, levels)?;
    let configs: Vec<RunConfig> = alphas.iter().map(|&a| cfg.at_alpha(a)).collect();
    let dirs: Vec<Option<PathBuf>> = (0..configs.len()).map(|k| out.map(|d| d.join(format!("level_{k}")))).collect();
    for d in dirs.iter().flatten() {
        fs::create_dir_all(d)?;
    }
    let results: Vec<Result<RunArtifacts>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .zip(&dirs)
            .map(|(c, d)| s.spawn(move || simulate(c, d.as_deref())))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep level thread")).collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let finest = &runs.last().expect("at least three levels").grid;
    let times: Vec<f64> = runs[0].samples.iter().map(|s| s.0).collect();
    let on_finest = |r: &RunArtifacts| -> Result<(Vec<Field>, Vec<Field>)> {
        let mut l = Vec::new();
        let mut v = Vec::new();
        for (_, lam, sw) in &r.samples {
            l.push(finest.prolong_from(&r.grid, lam)?);
            v.push(finest.prolong_from(&r.grid, sw)?);
        }
        Ok((l, v))
    };
    let fields = runs.iter().map(on_finest).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (k, r) in runs.iter().enumerate() {
        let (dl, dv) = if k == 0 {
            (None, None)
        } else {
            (
                Some(space_time_l2(finest, &times, &fields[k - 1].0, &fields[k].0)),
                Some(space_time_l2(finest, &times, &fields[k - 1].1, &fields[k].1)),
            )
        };
        rows.push(SweepLevel {
            level: k,
            alpha: alphas[k],
            cells: configs[k].grid.cells.clone(),
            diff_lambda: dl,
            diff_v: dv,
            residual: r.manifest.weak_residual_max,
            margins_ok: r.all_margins_nonnegative(),
        });
    }
    let ratios = |f: fn(&SweepLevel) -> Option<f64>| -> Vec<f64> {
        rows.windows(2)
            .filter_map(|w| Some(f(&w[1])? / f(&w[0])?))
            .collect()
    };
    let ratios_lambda = ratios(|l| l.diff_lambda);
    let ratios_v = ratios(|l| l.diff_v);
    let order = |rs: &[f64]| -> Vec<f64> {
        rs.iter()
            .enumerate()
            .map(|(k, r)| -r.ln() / (alphas[k + 1] / alphas[k + 2]).ln())
            .collect()
    };
    let report = SweepReport {
        orders_lambda: order(&ratios_lambda),
        orders_v: order(&ratios_v),
        ratios_lambda,
        ratios_v,
        levels: rows,
        config_hash: cfg.hash(),
    };
    if let Some(dir) = out {
        let mut wr = csv::Writer::from_path(dir.join("sweep.csv"))?;
        wr.write_record(["level", "alpha", "diff_lambda", "diff_v", "residual"])?;
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for l in &report.levels {
            wr.write_record([l.level.to_string(), l.alpha.to_string(), opt(l.diff_lambda), opt(l.diff_v), opt(l.residual)])?;
        }
        wr.flush()?;
        write_json(&dir.join("sweep.json"), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
struct ValidationReport<'a> {
    config_hash: String,
    continuum: &'a HypothesisReport,
    discrete: crate::age_discretization::DiscreteReport,
    passed: bool,
}

pub fn cmd_validate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let p = cfg.problem()?;
    let report = hypotheses_for(cfg, &p)?;
    let discrete = check_discrete_hypotheses(&p.grid, Some(&report));
    let passed = report.all_passed() && discrete.all_passed();
    let v = ValidationReport { config_hash: cfg.hash(), continuum: &report, discrete, passed };
    write_json(&out.join("hypotheses.json"), &v)?;
    Ok(Outcome { ok: passed, summary: serde_json::to_value(&v)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{reference_config, SweepPlan};

    #[test]
    fn degenerate_sweeps_are_rejected() {
        let mut c = reference_config();
        c.sweep = Some(SweepPlan { alphas: vec![0.125, 0.125, 0.0625] });
        assert!(matches!(sweep_alphas(&c, None), Err(SimError::ConfigInvalid(_))));
        c.sweep = None;
        assert!(matches!(sweep_alphas(&c, Some(2)), Err(SimError::ConfigInvalid(_))));
        assert_eq!(sweep_alphas(&c, Some(3)).unwrap(), vec![0.125, 0.0625, 0.03125]);
    }

    #[test]
    fn space_time_norm_of_constant_difference() {
        let g = SpatialGrid::new_1d(2.0, 8);
        let times = [0.0, 0.5, 1.0];
        let f = vec![vec![1.0; 8]; 3];
        let z = vec![vec![0.0; 8]; 3];
        assert!((space_time_l2(&g, &times, &f, &z) - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn failure_json_names_the_kind() {
        let e = SimError::ConfigInvalid(vec!["alpha: must lie in (0, 1)".into()]);
        let v: serde_json::Value = serde_json::from_str(&failure_json("run", &e, None)).unwrap();
        assert_eq!(v["kind"], "config_invalid");
        assert_eq!(v["status"], "error");
    }
}
