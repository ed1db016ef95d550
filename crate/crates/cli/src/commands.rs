//! Subcommand bodies. Each returns the list of files it wrote.

use std::path::{Path, PathBuf};

use log::info;
use serde::Deserialize;
use snaklat::asymmetric::{asymmetric_study, AsymConfig};
use snaklat::asymptotics::{default_fold_finder, normalized_prediction, verify_asymptotics, FoldEnding, ReducedSystem};
use snaklat::codim2::{cusp_sequence, isola_study, CuspConfig, IsolaConfig};
use snaklat::continuation::StepConfig;
use snaklat::dynamics::{integrate, random_perturbation, IntegratorConfig};
use snaklat::lattice::unfold;
use snaklat::model::anti_continuum_pattern;
use snaklat::snake::{snake, SnakeConfig};
use snaklat::{Error, GridSpec, NewtonOptions, PatternId, Problem, Result, Variant};

use crate::config::{Format, StudyConfig};

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub n: usize,
    pub m: usize,
    pub variant: Variant,
}

impl PatternSpec {
    fn build(&self, cfg: &StudyConfig) -> Result<PatternId> {
        if self.n > cfg.grid.n_d {
            return Err(Error::PatternExceedsDomain { n: self.n, n_d: cfg.grid.n_d });
        }
        PatternId::new(self.n, self.m, self.variant, cfg.grid.symmetry)
    }
}

struct Writer<'a> {
    cfg: &'a StudyConfig,
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(cfg: &'a StudyConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.output.directory)?;
        Ok(Self { cfg, dir: cfg.output.directory.clone(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if self.cfg.wants(Format::Json) {
            let p = self.path(name);
            std::fs::write(p, serde_json::to_string_pretty(value)?)?;
        }
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        if self.cfg.wants(Format::Csv) {
            let p = self.path(name);
            let mut w = csv::Writer::from_path(p)?;
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

fn e(x: f64) -> String {
    format!("{x:.15e}")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveRun {
    pattern: PatternSpec,
    mu: f64,
    d: f64,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_iter")]
    max_iter: usize,
}

fn default_tol() -> f64 {
    NewtonOptions::default().tol
}

fn default_iter() -> usize {
    NewtonOptions::default().max_iter
}

pub fn solve(cfg: &StudyConfig) -> Result<Vec<PathBuf>> {
    let run: SolveRun = cfg.run_as(&[])?;
    let id = run.pattern.build(cfg)?;
    if !(run.d >= 0.0) {
        return Err(Error::InvalidArgument("d must be non-negative".into()));
    }
    let nl = cfg.model.build()?;
    let u0 = anti_continuum_pattern(&id, &nl, run.mu, cfg.grid.n_d)?;
    let problem = Problem::new(*u0.grid(), nl);
    let opts = NewtonOptions { tol: run.tol, max_iter: run.max_iter, ..Default::default() };
    let (u, iterations) = if run.d == 0.0 {
        problem.newton_solve(&u0, run.mu, 0.0, &opts)?
    } else {
        let start = snaklat::continuation::continue_in_d(&problem, &u0, run.mu, run.d)?;
        problem.newton_solve(&start.u, run.mu, run.d, &opts)?
    };
    let residual = snaklat::linalg::inf_norm(&problem.residual(u.values(), run.mu, run.d));
    info!("solved in {iterations} iterations, residual {residual:e}");
    let mut w = Writer::new(cfg)?;
    w.json("profile.json", &u)?;
    if cfg.wants(Format::Csv) {
        let p = w.path("profile.csv");
        unfold(&u)?.write_csv(&p)?;
    }
    let log = serde_json::json!({ "pattern": id, "mu": run.mu, "d": run.d, "iterations": iterations, "residual": residual });
    let p = w.path("convergence.json");
    std::fs::write(p, serde_json::to_string_pretty(&log)?)?;
    Ok(w.files)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SnakeRunCfg {
    start: PatternSpec,
    #[serde(default = "default_d")]
    d: f64,
    #[serde(default)]
    mu_start: Option<f64>,
    #[serde(default)]
    step: Option<StepConfig>,
    #[serde(default)]
    crossing_window: Option<f64>,
    #[serde(default = "yes")]
    stability: bool,
}

fn default_d() -> f64 {
    1e-3
}

fn yes() -> bool {
    true
}

pub fn snake_cmd(cfg: &StudyConfig) -> Result<Vec<PathBuf>> {
    let run: SnakeRunCfg = cfg.run_as(&[])?;
    let base = SnakeConfig::default();
    let sc = SnakeConfig {
        start: run.start.build(cfg)?,
        n_d: cfg.grid.n_d,
        d: run.d,
        mu_start: run.mu_start.unwrap_or(base.mu_start),
        step: run.step.unwrap_or(base.step),
        crossing_window: run.crossing_window.unwrap_or(base.crossing_window),
        stability: run.stability,
    };
    let nl = cfg.model.build()?;
    let r = snake(&nl, &sc)?;
    let mut w = Writer::new(cfg)?;
    if cfg.wants(Format::Csv) {
        let p = w.path("branch.csv");
        r.branch.write_csv(&p)?;
    }
    w.json("folds.json", &r.folds)?;
    if cfg.wants(Format::Json) {
        let dir = cfg.output.directory.join("profiles");
        std::fs::create_dir_all(&dir)?;
        w.files.extend(r.branch.write_event_profiles(&dir, "event")?);
    }
    Ok(w.files)
}

pub fn asym(cfg: &StudyConfig) -> Result<Vec<PathBuf>> {
    let ac: AsymConfig = cfg.run_as(&["n_d", "symmetry"])?;
    let nl = cfg.model.build()?;
    let s = asymmetric_study(&nl, &ac)?;
    let mut w = Writer::new(cfg)?;
    if cfg.wants(Format::Csv) {
        let p = w.path("primary.csv");
        s.primary.write_csv(&p)?;
        for b in &s.branches {
            let p = w.path(&format!("asym_{}.csv", b.label));
            b.branch.write_csv(&p)?;
        }
    }
    w.json("asym_summary.json", &s.summary_json())?;
    Ok(w.files)
}

pub fn isola(cfg: &StudyConfig) -> Result<Vec<PathBuf>> {
    let ic: IsolaConfig = cfg.run_as(&["n_d", "symmetry"])?;
    let nl = cfg.model.build()?;
    let r = isola_study(&nl, &ic)?;
    let mut w = Writer::new(cfg)?;
    if cfg.wants(Format::Csv) {
        let p = w.path("isola.csv");
        r.branch.write_csv(&p)?;
    }
    w.json(
        "isola.json",
        &serde_json::json!({
            "d": ic.d,
            "fold_mu": r.fold.mu,
            "seed_mu": r.seed.mu,
            "points": r.branch.points.len(),
            "closed": r.branch.closed,
        }),
    )?;
    Ok(w.files)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CuspRun {
    n_min: usize,
    n_max: usize,
    #[serde(default = "default_d")]
    d_start: f64,
    #[serde(default)]
    cusp: CuspConfig,
}

pub fn cusp(cfg: &StudyConfig) -> Result<Vec<PathBuf>> {
    let run: CuspRun = cfg.run_as(&[])?;
    if run.n_max > cfg.grid.n_d {
        return Err(Error::PatternExceedsDomain { n: run.n_max, n_d: cfg.grid.n_d });
    }
    if run.n_min > run.n_max {
        return Err(Error::InvalidArgument("n_min exceeds n_max".into()));
    }
    let nl = cfg.model.build()?;
    let seq = cusp_sequence(&nl, run.n_min..=run.n_max, cfg.grid.n_d, cfg.grid.symmetry, run.d_start, &run.cusp)?;
    let mut w = Writer::new(cfg)?;
    if cfg.wants(Format::Csv) {
        let p = w.path("cusps.csv");
        seq.write_csv(&p)?;
    }
    if cfg.wants(Format::Json) {
        let p = w.path("cusp_fit.json");
        seq.write_fit_json(&p)?;
    }
    Ok(w.files)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateRun {
    pattern: PatternSpec,
    mu: f64,
    d: f64,
    t_end: f64,
    #[serde(default = "default_amp")]
    perturbation: f64,
    #[serde(default)]
    integrator: IntegratorConfig,
    #[serde(default)]
    profiles: bool,
}

fn default_amp() -> f64 {
    1e-3
}

pub fn simulate(cfg: &StudyConfig) -> Result<Vec<PathBuf>> {
    let run: SimulateRun = cfg.run_as(&[])?;
    let id = run.pattern.build(cfg)?;
    let nl = cfg.model.build()?;
    let u0 = anti_continuum_pattern(&id, &nl, run.mu, cfg.grid.n_d)?;
    let wedge = Problem::new(*u0.grid(), nl);
    let start = snaklat::continuation::continue_in_d(&wedge, &u0, run.mu, run.d)?;
    let (steady, _) = wedge.newton_solve(&start.u, run.mu, run.d, &NewtonOptions::default())?;
    let steady = unfold(&steady)?;
    let full = wedge.full();
    let grid: GridSpec = *steady.grid();
    let noise = random_perturbation(grid, run.perturbation, cfg.seed);
    let init: Vec<f64> = steady.values().iter().zip(noise.values()).map(|(a, b)| a + b).collect();
    let init = snaklat::Field::new(grid, init)?;
    let traj = integrate(&full, &init, run.mu, run.d, run.t_end, Some(&steady), &run.integrator)?;
    info!("final deviation {:e}", traj.deviation.last().copied().unwrap_or(f64::NAN));
    let mut w = Writer::new(cfg)?;
    if cfg.wants(Format::Csv) {
        let p = w.path("trajectory.csv");
        traj.write_csv(&p)?;
        if run.profiles {
            let dir = cfg.output.directory.join("profiles");
            traj.write_profiles(&dir)?;
            w.files.push(dir);
        }
    }
    Ok(w.files)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReducedRun {
    system: String,
    #[serde(default = "default_points")]
    points: usize,
}

fn default_points() -> usize {
    401
}

pub fn reduced(cfg: &StudyConfig) -> Result<Vec<PathBuf>> {
    let run: ReducedRun = cfg.run_as(&[])?;
    let sys = ReducedSystem::parse(&run.system)?;
    if run.points < 2 {
        return Err(Error::InvalidArgument("points must be at least 2".into()));
    }
    let (lo, hi) = sys.range();
    let mut rows = Vec::with_capacity(run.points);
    let mut width = 0;
    for k in 0..run.points {
        // stay off the open ends of the parameter range
        let t = (k as f64 + 0.5) / run.points as f64;
        let s = lo + t * (hi - lo);
        let p = sys.branch(s)?;
        width = p.u.len();
        let mut row = vec![e(s), e(p.d)];
        row.extend(p.u.iter().map(|v| e(*v)));
        rows.push(row);
    }
    let mut header = vec!["s".to_string(), "d".to_string()];
    header.extend((0..width).map(|i| format!("u{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let (fu, fd) = sys.fold();
    let mut w = Writer::new(cfg)?;
    w.csv("reduced.csv", &header, rows)?;
    w.json("reduced_fold.json", &serde_json::json!({ "system": run.system, "u": fu, "d": fd }))?;
    Ok(w.files)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyRun {
    ending: FoldEnding,
    #[serde(default = "default_d_list")]
    d_list: Vec<f64>,
}

fn default_d_list() -> Vec<f64> {
    vec![1e-5, 1e-4, 1e-3]
}

pub fn verify_asym(cfg: &StudyConfig) -> Result<Vec<PathBuf>> {
    let run: VerifyRun = cfg.run_as(&[])?;
    let finder = default_fold_finder(run.ending, cfg.grid.n_d)?;
    let report = verify_asymptotics(run.ending, &run.d_list, finder)?;
    let (family, _, _) = run.ending.default_study();
    let nl = snaklat::Nonlinearity::builtin(family)?;
    let rows: Vec<Vec<String>> = report
        .per_d
        .iter()
        .map(|p| {
            let norm = normalized_prediction(&nl, run.ending, p.d).unwrap_or(f64::NAN);
            vec![e(p.d), e(p.mu), e(p.predicted), e(norm), e((p.mu - p.predicted).abs())]
        })
        .collect();
    let mut w = Writer::new(cfg)?;
    w.csv("folds.csv", &["d", "mu", "predicted", "normalized_prediction", "error"], rows)?;
    w.json("fit.json", &report)?;
    Ok(w.files)
}

pub fn write_manifest(dir: &Path, manifest: &serde_json::Value) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join("manifest.json");
    std::fs::write(&p, serde_json::to_string_pretty(manifest)?)?;
    Ok(p)
}
