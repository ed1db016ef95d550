//! Time integration of `du/dt = d Δu + f(u, mu)`.

use std::io::Write;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Field, GridSpec};
use crate::linalg::{inf_norm, SparseLu};
use crate::solver::Problem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub atol: f64,
    pub rtol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
    /// Keep every `sample_stride`-th accepted step (the last state is always kept).
    pub sample_stride: usize,
    /// Fixed-step implicit Euler instead of the adaptive explicit pair.
    pub implicit: bool,
    pub implicit_dt: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-8,
            h_init: 1e-3,
            h_min: 1e-12,
            max_steps: 2_000_000,
            sample_stride: 1,
            implicit: false,
            implicit_dt: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    /// `max |u(t) - u*|` against the reference state.
    pub deviation: Vec<f64>,
}

impl Trajectory {
    pub fn last_state(&self) -> &Field {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "deviation"])?;
        for (t, dev) in self.times.iter().zip(&self.deviation) {
            w.write_record([format!("{t:.17e}"), format!("{dev:.17e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One CSV of `n,m,u` per stored sample, named `profile_<k>.csv`.
    pub fn write_profiles(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, s) in self.states.iter().enumerate() {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("profile_{k}.csv")))?);
            writeln!(f, "n,m,u")?;
            for (site, v) in s.grid().sites().zip(s.values()) {
                writeln!(f, "{},{},{:.17e}", site.0, site.1, v)?;
            }
        }
        Ok(())
    }

    /// Exponential rate from a log-linear fit of the deviation samples lying in `[lo, hi]`.
    pub fn fit_rate(&self, lo: f64, hi: f64) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.deviation)
            .filter(|(_, &e)| e >= lo && e <= hi)
            .map(|(&t, &e)| (t, e.ln()))
            .collect();
        if pts.len() < 3 {
            return Err(Error::InvalidArgument(format!("only {} samples in [{lo:e}, {hi:e}]", pts.len())));
        }
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        Ok(sxy / sxx)
    }
}

// Dormand–Prince 5(4)
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B_LOW: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct Recorder<'a> {
    grid: GridSpec,
    reference: &'a [f64],
    traj: Trajectory,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, u: &[f64]) -> Result<()> {
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NoConvergence { iterations: 0, residual: f64::INFINITY });
        }
        let dev = u.iter().zip(self.reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        self.traj.times.push(t);
        self.traj.states.push(Field::new(self.grid, u.to_vec())?);
        self.traj.deviation.push(dev);
        Ok(())
    }
}

/// Integrates from `u0` up to `t_end`; deviations are measured against `reference` (or `u0`).
pub fn integrate(
    problem: &Problem,
    u0: &Field,
    mu: f64,
    d: f64,
    t_end: f64,
    reference: Option<&Field>,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("t_end must be positive, got {t_end}")));
    }
    if u0.grid() != problem.grid() || reference.is_some_and(|r| r.grid() != problem.grid()) {
        return Err(Error::InvalidArgument("integrate grids must match the problem".into()));
    }
    if cfg.sample_stride == 0 || !(cfg.atol > 0.0 && cfg.rtol > 0.0) {
        return Err(Error::InvalidArgument("sample_stride and tolerances must be positive".into()));
    }
    let reference = reference.unwrap_or(u0).values();
    let mut rec = Recorder {
        grid: *problem.grid(),
        reference,
        traj: Trajectory { times: Vec::new(), states: Vec::new(), deviation: Vec::new() },
    };
    rec.push(0.0, u0.values())?;
    if cfg.implicit {
        implicit_euler(problem, u0.values(), mu, d, t_end, cfg, &mut rec)?;
    } else {
        dopri(problem, u0.values(), mu, d, t_end, cfg, &mut rec)?;
    }
    Ok(rec.traj)
}

fn dopri(
    problem: &Problem,
    u0: &[f64],
    mu: f64,
    d: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
    rec: &mut Recorder,
) -> Result<()> {
    let n = u0.len();
    let rhs = |u: &[f64]| problem.residual(u, mu, d);
    let mut u = u0.to_vec();
    let mut t = 0.0;
    let mut h = cfg.h_init.min(t_end);
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    k[0] = rhs(&u);
    let mut accepted = 0usize;
    let mut stage = vec![0.0; n];
    // PI control keeps the step off the stability boundary
    let beta = 0.04;
    let mut err_old = 1e-4f64;
    for _ in 0..cfg.max_steps {
        if t >= t_end {
            break;
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * k[j][i];
                }
                stage[i] = u[i] + h * acc;
            }
            k[s] = rhs(&stage);
        }
        // stage 6 is the fifth-order solution (FSAL)
        let mut err = 0.0f64;
        for i in 0..n {
            let mut e = 0.0;
            for s in 0..7 {
                e += (B[s] - B_LOW[s]) * k[s][i];
            }
            let sc = cfg.atol + cfg.rtol * u[i].abs().max(stage[i].abs());
            let r = (h * e).abs() / sc;
            err = if r.is_finite() && stage[i].is_finite() { err.max(r) } else { f64::INFINITY };
        }
        if err <= 1.0 {
            t = if last { t_end } else { t + h };
            u.copy_from_slice(&stage);
            k.swap(0, 6);
            accepted += 1;
            if accepted % cfg.sample_stride == 0 || t >= t_end {
                rec.push(t, &u)?;
            }
            let e = err.max(1e-10);
            let fac = (0.9 * e.powf(-(0.2 - 0.75 * beta)) * err_old.powf(beta)).clamp(0.2, 5.0);
            err_old = e;
            h *= if last { 1.0 } else { fac };
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            if h < cfg.h_min {
                return Err(Error::StepUnderflow { t });
            }
        }
    }
    if t < t_end {
        return Err(Error::StepUnderflow { t });
    }
    Ok(())
}

fn implicit_euler(
    problem: &Problem,
    u0: &[f64],
    mu: f64,
    d: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
    rec: &mut Recorder,
) -> Result<()> {
    let n = u0.len();
    let mut u = u0.to_vec();
    let mut t = 0.0;
    let mut step = 0usize;
    while t < t_end {
        let h = cfg.implicit_dt.min(t_end - t);
        let prev = u.clone();
        let mut converged = false;
        for _ in 0..20 {
            let f = problem.residual(&u, mu, d);
            let g: Vec<f64> = (0..n).map(|i| u[i] - prev[i] - h * f[i]).collect();
            let scale = cfg.atol + cfg.rtol * inf_norm(&u);
            if inf_norm(&g) <= scale {
                converged = true;
                break;
            }
            let m = problem.jacobian(&u, mu, d).scale_add_diagonal(-h, &vec![1.0; n]);
            let dx = SparseLu::from_csr(&m)?.solve(&g)?;
            u.iter_mut().zip(&dx).for_each(|(a, b)| *a -= b);
        }
        if !converged {
            return Err(Error::StepUnderflow { t });
        }
        t = if t + h >= t_end { t_end } else { t + h };
        step += 1;
        if step % cfg.sample_stride == 0 || t >= t_end {
            rec.push(t, &u)?;
        }
    }
    Ok(())
}

/// Uniform random perturbation in `[-amplitude, amplitude]`, reproducible from `seed`.
pub fn random_perturbation(grid: GridSpec, amplitude: f64, seed: u64) -> Field {
    let mut rng = StdRng::seed_from_u64(seed);
    let v: Vec<f64> = (0..grid.size()).map(|_| rng.gen_range(-amplitude..=amplitude)).collect();
    Field::new(grid, v).expect("sizes match")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{unfold, Symmetry};
    use crate::linalg::dense_eigen;
    use crate::model::{anti_continuum_pattern, Family, Nonlinearity, PatternId};
    use crate::solver::NewtonOptions;

    fn steady(id: PatternId, n_d: usize, mu: f64, d: f64) -> (Problem, Field) {
        let nl = Nonlinearity::builtin(Family::CubicQuintic).unwrap();
        let w = anti_continuum_pattern(&id, &nl, mu, n_d).unwrap();
        let full = unfold(&w).unwrap();
        let p = Problem::new(*full.grid(), nl);
        let (u, _) = p.newton_solve(&full, mu, d, &NewtonOptions::default()).unwrap();
        (p, u)
    }

    fn add(a: &Field, b: &Field) -> Field {
        Field::new(*a.grid(), a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect()).unwrap()
    }

    #[test]
    fn equilibrium_stays_put() {
        let (p, u) = steady(PatternId::ubar(2, 1, Symmetry::OffSite), 4, 0.5, 1e-3);
        let tr = integrate(&p, &u, 0.5, 1e-3, 20.0, Some(&u), &IntegratorConfig::default()).unwrap();
        assert!(tr.deviation.iter().all(|&e| e < 1e-8));
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*tr.times.last().unwrap(), 20.0);
    }

    #[test]
    fn stable_state_attracts() {
        let (p, u) = steady(PatternId::ubar(2, 1, Symmetry::OffSite), 4, 0.5, 1e-3);
        let u0 = add(&u, &random_perturbation(*u.grid(), 1e-3, 7));
        let tr = integrate(&p, &u0, 0.5, 1e-3, 200.0, Some(&u), &IntegratorConfig::default()).unwrap();
        assert!(*tr.deviation.last().unwrap() < 1e-6);
        // slowest decay is set by f_u(0, 0.5) = -0.5 up to O(d)
        let rate = tr.fit_rate(1e-7, 1e-4).unwrap();
        assert!((rate + 0.5).abs() < 0.05, "{rate}");
    }

    #[test]
    fn unstable_growth_matches_eigenvalue() {
        let (p, u) = steady(PatternId::vbar(1, 1, Symmetry::OffSite), 3, 0.5, 1e-3);
        let j = p.jacobian(u.values(), 0.5, 1e-3);
        let (lambda, v) = dense_eigen(&j).unwrap().into_iter().max_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
        assert!(lambda > 0.0);
        let dir = Field::new(*u.grid(), v.iter().map(|x| 1e-6 * x / inf_norm(&v)).collect()).unwrap();
        let tr = integrate(&p, &add(&u, &dir), 0.5, 1e-3, 15.0, Some(&u), &IntegratorConfig::default()).unwrap();
        let rate = tr.fit_rate(2e-6, 1e-3).unwrap();
        assert!((rate - lambda).abs() <= 0.1 * lambda, "{rate} vs {lambda}");
    }

    #[test]
    fn odd_symmetry() {
        let (p, u) = steady(PatternId::ubar(1, 1, Symmetry::OffSite), 3, 0.4, 1e-2);
        let u0 = add(&u, &random_perturbation(*u.grid(), 0.05, 3));
        let neg = Field::new(*u.grid(), u0.values().iter().map(|v| -v).collect()).unwrap();
        let cfg = IntegratorConfig::default();
        let a = integrate(&p, &u0, 0.4, 1e-2, 5.0, None, &cfg).unwrap();
        let b = integrate(&p, &neg, 0.4, 1e-2, 5.0, None, &cfg).unwrap();
        let diff = a.last_state().values().iter().zip(b.last_state().values()).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn tolerance_halving_converges() {
        let (p, u) = steady(PatternId::ubar(1, 1, Symmetry::OffSite), 3, 0.4, 1e-2);
        let u0 = add(&u, &random_perturbation(*u.grid(), 0.05, 11));
        let cfg = IntegratorConfig::default();
        let half = IntegratorConfig { atol: cfg.atol / 2.0, rtol: cfg.rtol / 2.0, ..cfg.clone() };
        let a = integrate(&p, &u0, 0.4, 1e-2, 5.0, None, &cfg).unwrap();
        let b = integrate(&p, &u0, 0.4, 1e-2, 5.0, None, &half).unwrap();
        let diff = a.last_state().values().iter().zip(b.last_state().values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 10.0 * cfg.rtol * inf_norm(a.last_state().values()).max(1.0), "{diff}");
    }

    #[test]
    fn implicit_euler_reaches_same_state() {
        let (p, u) = steady(PatternId::ubar(1, 1, Symmetry::OffSite), 3, 0.5, 1e-3);
        let u0 = add(&u, &random_perturbation(*u.grid(), 1e-3, 5));
        let cfg = IntegratorConfig { implicit: true, implicit_dt: 0.5, sample_stride: 10, ..Default::default() };
        let tr = integrate(&p, &u0, 0.5, 1e-3, 100.0, Some(&u), &cfg).unwrap();
        assert!(*tr.deviation.last().unwrap() < 1e-6);
    }

    #[test]
    fn rejects_nonpositive_time() {
        let (p, u) = steady(PatternId::ubar(1, 1, Symmetry::OffSite), 3, 0.5, 1e-3);
        assert!(matches!(
            integrate(&p, &u, 0.5, 1e-3, 0.0, None, &IntegratorConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn tiny_h_min_underflows() {
        let (p, u) = steady(PatternId::ubar(1, 1, Symmetry::OffSite), 3, 0.5, 1e-3);
        let blow = Field::new(*u.grid(), vec![50.0; u.grid().size()]).unwrap();
        let cfg = IntegratorConfig { h_min: 1e-2, h_init: 1.0, ..Default::default() };
        assert!(matches!(integrate(&p, &blow, 0.5, 1e-3, 10.0, None, &cfg), Err(Error::StepUnderflow { .. })));
    }
}
