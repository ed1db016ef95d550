//! Pseudo-arclength continuation, fold refinement, branch switching and isola tracing.

use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Field, GridSpec};
use crate::linalg::{bordered_solve, dot, inf_norm, norm2, normalize, sparse_solve, CsrMatrix};
use crate::solver::{NewtonOptions, Problem};

/// The continuation parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Mu,
    D,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    Secant,
    Tangent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchPoint {
    pub u: Field,
    pub mu: f64,
    pub d: f64,
    /// l2 norm of the unfolded full-square field.
    pub norm: f64,
    pub unstable_count: Option<usize>,
    /// Unit tangent in `(u, p)` space; empty when unknown.
    pub tangent: Vec<f64>,
}

impl BranchPoint {
    pub fn new(u: Field, mu: f64, d: f64) -> Self {
        let norm = u.full_norm();
        Self { u, mu, d, norm, unstable_count: None, tangent: Vec::new() }
    }

    pub fn param(&self, p: Parameter) -> f64 {
        match p {
            Parameter::Mu => self.mu,
            Parameter::D => self.d,
        }
    }

    fn state(&self, p: Parameter) -> Vec<f64> {
        let mut x = self.u.values().to_vec();
        x.push(self.param(p));
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    Fold,
    BranchPoint,
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub index: usize,
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub parameter: Parameter,
    pub points: Vec<BranchPoint>,
    pub events: Vec<Event>,
    pub closed: bool,
}

impl Branch {
    pub fn fold_indices(&self) -> Vec<usize> {
        self.events.iter().filter(|e| e.kind == EventKind::Fold).map(|e| e.index).collect()
    }

    pub fn event_at(&self, index: usize) -> Option<EventKind> {
        self.events.iter().rev().find(|e| e.index == index).map(|e| e.kind)
    }

    /// Cumulative arclength in `(u, p)` space.
    pub fn arclength(&self) -> Vec<f64> {
        let mut s = vec![0.0];
        for w in self.points.windows(2) {
            let a = w[0].state(self.parameter);
            let b = w[1].state(self.parameter);
            let step: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            s.push(s.last().unwrap() + step);
        }
        s
    }

    /// Writes `index,mu,d,norm,n_unstable,event`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "mu", "d", "norm", "n_unstable", "event"])?;
        for (i, p) in self.points.iter().enumerate() {
            let event = match self.event_at(i) {
                Some(EventKind::Start) => "start",
                Some(EventKind::Fold) => "fold",
                Some(EventKind::BranchPoint) => "branch_point",
                Some(EventKind::End) => "end",
                None => "",
            };
            w.write_record([
                i.to_string(),
                format!("{:.15e}", p.mu),
                format!("{:.15e}", p.d),
                format!("{:.15e}", p.norm),
                p.unstable_count.map_or(String::new(), |c| c.to_string()),
                event.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes one profile JSON per event into `dir`, named `<prefix>_<index>.json`.
    pub fn write_event_profiles(&self, dir: &Path, prefix: &str) -> Result<Vec<std::path::PathBuf>> {
        let mut out = Vec::new();
        for e in &self.events {
            let path = dir.join(format!("{prefix}_{:05}.json", e.index));
            self.points[e.index].u.write_json(&path)?;
            out.push(path);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_points: usize,
    /// Continuation stops once the parameter leaves this interval.
    pub p_min: f64,
    pub p_max: f64,
    pub detect_closure: bool,
    pub predictor: Predictor,
    pub tol: f64,
    pub corrector_max_iter: usize,
    /// Optional cap on the branch norm.
    pub max_norm: Option<f64>,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            h_init: 1e-3,
            h_min: 1e-7,
            h_max: 0.05,
            max_points: 2000,
            p_min: f64::NEG_INFINITY,
            p_max: f64::INFINITY,
            detect_closure: false,
            predictor: Predictor::Secant,
            tol: 1e-10,
            corrector_max_iter: 10,
            max_norm: None,
        }
    }
}

fn param_jacobian(problem: &Problem, u: &[f64], mu: f64, p: Parameter) -> Vec<f64> {
    match p {
        Parameter::Mu => problem.d_mu(u, mu),
        Parameter::D => problem.d_d(u),
    }
}

fn split(x: &[f64], p: Parameter, fixed_mu: f64, fixed_d: f64) -> (&[f64], f64, f64) {
    let n = x.len() - 1;
    match p {
        Parameter::Mu => (&x[..n], x[n], fixed_d),
        Parameter::D => (&x[..n], fixed_mu, x[n]),
    }
}

/// Tangent of the solution curve at `x` oriented along `prev`.
fn exact_tangent(problem: &Problem, x: &[f64], p: Parameter, mu: f64, d: f64, prev: &[f64]) -> Result<Vec<f64>> {
    let (u, mu, d) = split(x, p, mu, d);
    let n = u.len();
    let j = problem.jacobian(u, mu, d);
    let fp = param_jacobian(problem, u, mu, p);
    let mut rhs = vec![0.0; n + 1];
    rhs[n] = 1.0;
    let mut t = bordered_solve(&j, &[fp], &[prev[..n].to_vec()], &[vec![prev[n]]], &rhs)?;
    normalize(&mut t);
    if dot(&t, prev) < 0.0 {
        t.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(t)
}

struct Corrected {
    x: Vec<f64>,
    iterations: usize,
}

/// Newton on `F(u, p) = 0`, `<x - pred, t> = 0`.
fn correct(problem: &Problem, pred: &[f64], t: &[f64], p: Parameter, mu0: f64, d0: f64, cfg: &StepConfig) -> Result<Corrected> {
    let n = pred.len() - 1;
    let mut x = pred.to_vec();
    for it in 0..=cfg.corrector_max_iter {
        let (u, mu, d) = split(&x, p, mu0, d0);
        let f = problem.residual(u, mu, d);
        let g: f64 = x.iter().zip(pred).zip(t).map(|((a, b), c)| (a - b) * c).sum();
        let rn = inf_norm(&f);
        if rn <= cfg.tol && g.abs() <= 1e-12 * (1.0 + inf_norm(&x)) {
            return Ok(Corrected { x, iterations: it });
        }
        if it == cfg.corrector_max_iter || !rn.is_finite() {
            break;
        }
        let j = problem.jacobian(u, mu, d);
        let fp = param_jacobian(problem, u, mu, p);
        let mut rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        rhs.push(-g);
        let dx = bordered_solve(&j, &[fp], &[t[..n].to_vec()], &[vec![t[n]]], &rhs)?;
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }
    let (u, mu, d) = split(&x, p, mu0, d0);
    Err(Error::NoConvergence { iterations: cfg.corrector_max_iter, residual: inf_norm(&problem.residual(u, mu, d)) })
}

fn make_point(problem: &Problem, x: &[f64], p: Parameter, mu0: f64, d0: f64, t: Vec<f64>) -> Result<BranchPoint> {
    let (u, mu, d) = split(x, p, mu0, d0);
    let mut bp = BranchPoint::new(Field::new(*problem.grid(), u.to_vec())?, mu, d);
    bp.tangent = t;
    Ok(bp)
}

/// Direction of travel at the start of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Pseudo-arclength continuation from `start`.
pub fn continue_branch(
    problem: &Problem,
    start: &BranchPoint,
    parameter: Parameter,
    direction: Direction,
    cfg: &StepConfig,
) -> Result<Branch> {
    let (mu0, d0) = (start.mu, start.d);
    let newton = NewtonOptions { tol: cfg.tol, ..Default::default() };
    let n = problem.size();
    if start.u.grid() != problem.grid() {
        return Err(Error::InvalidArgument("start point grid does not match problem".into()));
    }
    let r0 = inf_norm(&problem.residual(start.u.values(), mu0, d0));
    if r0 > cfg.tol {
        return Err(Error::InvalidArgument(format!("start residual {r0:e} above tolerance")));
    }
    let mut branch = Branch { parameter, points: Vec::new(), events: vec![Event { index: 0, kind: EventKind::Start }], closed: false };
    let p_start = start.param(parameter);
    let in_range = |v: f64| cfg.p_min <= v && v <= cfg.p_max;
    let mut first = start.clone();
    if first.tangent.len() != n + 1 {
        // secant from a small natural-parameter step
        let sign = if direction == Direction::Increasing { 1.0 } else { -1.0 };
        let mut dp = sign * cfg.h_init.max(cfg.h_min);
        let mut t = None;
        for _ in 0..8 {
            let (mu, d) = match parameter {
                Parameter::Mu => (mu0 + dp, d0),
                Parameter::D => (mu0, d0 + dp),
            };
            if let Ok(out) = problem.newton(start.u.values(), mu, d, &newton) {
                let mut v: Vec<f64> = out.u.iter().zip(start.u.values()).map(|(a, b)| a - b).collect();
                v.push(dp);
                normalize(&mut v);
                t = Some(v);
                break;
            }
            dp *= 0.5;
        }
        let t = match t {
            Some(t) => t,
            None => {
                let mut x = vec![0.0; n + 1];
                x[n] = 1.0;
                exact_tangent(problem, &start.state(parameter), parameter, mu0, d0, &x)?
            }
        };
        first.tangent = t;
    } else if direction == Direction::Decreasing && first.tangent[n] > 0.0
        || direction == Direction::Increasing && first.tangent[n] < 0.0
    {
        first.tangent.iter_mut().for_each(|v| *v = -*v);
    }
    branch.points.push(first);
    if !in_range(p_start) {
        branch.events.push(Event { index: 0, kind: EventKind::End });
        return Ok(branch);
    }
    let mut h = cfg.h_init.clamp(cfg.h_min, cfg.h_max);
    let mut travelled = 0.0;
    let x_start = branch.points[0].state(parameter);
    let t_start = branch.points[0].tangent.clone();
    while branch.points.len() < cfg.max_points {
        let last = branch.points.last().unwrap();
        let x = last.state(parameter);
        let t = match cfg.predictor {
            Predictor::Secant => last.tangent.clone(),
            Predictor::Tangent => exact_tangent(problem, &x, parameter, mu0, d0, &last.tangent)?,
        };
        let corrected = loop {
            let pred: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a + h * b).collect();
            match correct(problem, &pred, &t, parameter, mu0, d0, cfg) {
                Ok(c) => {
                    let jump = norm2(&c.x.iter().zip(&pred).map(|(a, b)| a - b).collect::<Vec<_>>());
                    if jump <= h.max(10.0 * cfg.h_min) {
                        break Some(c);
                    }
                    debug!("corrector jumped {jump:e} at h={h:e}");
                }
                Err(e) => debug!("corrector failed at h={h:e}: {e}"),
            }
            h *= 0.5;
            if h < cfg.h_min {
                break None;
            }
        };
        let Some(c) = corrected else {
            info!("corrector stalled after {} points", branch.points.len());
            let last = branch.points.len() - 1;
            branch.events.push(Event { index: last, kind: EventKind::End });
            return Ok(branch);
        };
        let mut secant: Vec<f64> = c.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let step = normalize(&mut secant);
        travelled += step;
        let prev_tp = t[n];
        let bp = make_point(problem, &c.x, parameter, mu0, d0, secant)?;
        let tp = bp.tangent[n];
        let p_new = c.x[n];
        let norm = bp.norm;
        branch.points.push(bp);
        let idx = branch.points.len() - 1;
        if prev_tp * tp < 0.0 && idx >= 2 {
            branch.events.push(Event { index: idx - 1, kind: EventKind::Fold });
        }
        if c.iterations <= 3 {
            h = (h * 1.3).min(cfg.h_max);
        }
        if !in_range(p_new) || cfg.max_norm.is_some_and(|m| norm > m) {
            branch.events.push(Event { index: idx, kind: EventKind::End });
            return Ok(branch);
        }
        if cfg.detect_closure && idx >= 10 && travelled > 20.0 * h {
            let dist = norm2(&c.x.iter().zip(&x_start).map(|(a, b)| a - b).collect::<Vec<_>>());
            let align = dot(&branch.points[idx].tangent, &t_start);
            if dist < 2.0 * h && align > 0.99 {
                branch.closed = true;
                branch.events.push(Event { index: idx, kind: EventKind::End });
                return Ok(branch);
            }
        }
    }
    let last = branch.points.len() - 1;
    branch.events.push(Event { index: last, kind: EventKind::End });
    Ok(branch)
}

/// A fold refined on the augmented system, or the unrefined candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldPoint {
    pub u: Field,
    pub mu: f64,
    pub d: f64,
    /// Right null vector of the Jacobian, unit l2 norm.
    pub phi: Field,
    pub refined: bool,
    /// Index of the branch point the candidate came from.
    pub index: usize,
    pub residual: f64,
    pub null_residual: f64,
}

/// Newton on `F = 0, J phi = 0, <phi_ref, phi> = 1` in `(u, phi, p)`.
pub fn refine_fold(
    problem: &Problem,
    u0: &[f64],
    mu0: f64,
    d0: f64,
    phi0: &[f64],
    parameter: Parameter,
) -> Result<FoldPoint> {
    let n = u0.len();
    let mut phi_ref = phi0.to_vec();
    if normalize(&mut phi_ref) == 0.0 {
        return Err(Error::RefinementFailed("zero reference vector".into()));
    }
    let mut u = u0.to_vec();
    let mut phi = phi_ref.clone();
    let (mut mu, mut d) = (mu0, d0);
    let nl = problem.nonlinearity();
    let lap = problem.laplacian();
    let residual = |u: &[f64], phi: &[f64], mu: f64, d: f64| -> (Vec<f64>, f64, f64) {
        let f = problem.residual(u, mu, d);
        let jp = problem.jacobian(u, mu, d).mul_vec(phi);
        let fr = inf_norm(&f);
        let jr = inf_norm(&jp);
        let mut r = f;
        r.extend(jp);
        r.push(dot(&phi_ref, phi) - 1.0);
        (r, fr, jr)
    };
    let (mut r, mut fr, mut jr) = residual(&u, &phi, mu, d);
    for _ in 0..40 {
        if fr <= 1e-11 && jr <= 1e-11 && r[2 * n].abs() <= 1e-12 {
            break;
        }
        let j = problem.jacobian(&u, mu, d);
        let mut t = Vec::with_capacity(4 * j.nnz() + 4 * n);
        for (i, k, v) in j.triplets() {
            t.push((i, k, v));
            t.push((n + i, n + k, v));
        }
        let (fp, jpphi) = match parameter {
            Parameter::Mu => (
                problem.d_mu(&u, mu),
                u.iter().zip(&phi).map(|(&a, &b)| nl.dumu(a, mu) * b).collect::<Vec<_>>(),
            ),
            Parameter::D => (lap.mul_vec(&u), lap.mul_vec(&phi)),
        };
        for i in 0..n {
            t.push((n + i, i, nl.duu(u[i], mu) * phi[i]));
            t.push((i, 2 * n, fp[i]));
            t.push((n + i, 2 * n, jpphi[i]));
            t.push((2 * n, n + i, phi_ref[i]));
        }
        let a = CsrMatrix::from_triplets(2 * n + 1, 2 * n + 1, &t);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = sparse_solve(&a, &rhs).map_err(|e| Error::RefinementFailed(e.to_string()))?;
        let before = inf_norm(&r);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let un: Vec<f64> = u.iter().zip(&dx[..n]).map(|(a, b)| a + step * b).collect();
            let pn: Vec<f64> = phi.iter().zip(&dx[n..2 * n]).map(|(a, b)| a + step * b).collect();
            let (mn, dn) = match parameter {
                Parameter::Mu => (mu + step * dx[2 * n], d),
                Parameter::D => (mu, d + step * dx[2 * n]),
            };
            let trial = residual(&un, &pn, mn, dn);
            if inf_norm(&trial.0) < before || step < 1.0 / 64.0 {
                u = un;
                phi = pn;
                mu = mn;
                d = dn;
                (r, fr, jr) = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let norm = normalize(&mut phi);
    let jr_unit = if norm > 0.0 { jr / norm } else { f64::INFINITY };
    if !(fr <= 1e-10 && jr_unit <= 1e-8) {
        return Err(Error::RefinementFailed(format!("residual {fr:e}, null residual {jr_unit:e}")));
    }
    let grid = *problem.grid();
    Ok(FoldPoint {
        u: Field::new(grid, u)?,
        mu,
        d,
        phi: Field::new(grid, phi)?,
        refined: true,
        index: 0,
        residual: fr,
        null_residual: jr_unit,
    })
}

/// Refines every fold candidate of a branch; failed candidates come back with `refined = false`.
pub fn detect_and_refine_folds(problem: &Problem, branch: &Branch) -> Result<Vec<FoldPoint>> {
    if branch.points.len() < 3 {
        return Err(Error::InvalidArgument("fold detection needs at least three points".into()));
    }
    let n = problem.size();
    let mut out = Vec::new();
    for idx in branch.fold_indices() {
        let p = &branch.points[idx];
        let next = &branch.points[(idx + 1).min(branch.points.len() - 1)];
        // the secant into the next point approximates the null direction
        let phi0: Vec<f64> = p.tangent[..n].iter().zip(&next.tangent[..n]).map(|(a, b)| a + b).collect();
        let phi0 = if norm2(&phi0) > 0.0 { phi0 } else { p.tangent[..n].to_vec() };
        match refine_fold(problem, p.u.values(), p.mu, p.d, &phi0, branch.parameter) {
            Ok(mut f) => {
                f.index = idx;
                out.push(f);
            }
            Err(e) => {
                info!("fold candidate {idx} not refined: {e}");
                let mut phi = phi0.clone();
                normalize(&mut phi);
                out.push(FoldPoint {
                    u: p.u.clone(),
                    mu: p.mu,
                    d: p.d,
                    phi: Field::new(*problem.grid(), phi)?,
                    refined: false,
                    index: idx,
                    residual: inf_norm(&problem.residual(p.u.values(), p.mu, p.d)),
                    null_residual: f64::NAN,
                });
            }
        }
    }
    Ok(out)
}

/// Solves `F(u, mu) = 0` with `<w psi, u - u0> = eps` at fixed d.
fn constrained_solve(problem: &Problem, u0: &[f64], mu0: f64, d: f64, psi: &[f64], eps: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
    let n = u0.len();
    let w = problem.grid().weights();
    let wpsi: Vec<f64> = psi.iter().zip(&w).map(|(a, b)| a * b).collect();
    let mut u: Vec<f64> = u0.iter().zip(psi).map(|(a, b)| a + eps * b).collect();
    let mut mu = mu0;
    for it in 0..=40 {
        let f = problem.residual(&u, mu, d);
        let du: Vec<f64> = u.iter().zip(u0).map(|(a, b)| a - b).collect();
        let g = dot(&wpsi, &du) - eps;
        let rn = inf_norm(&f).max(g.abs());
        if rn <= tol {
            return Ok((u, mu));
        }
        if it == 40 || !rn.is_finite() {
            return Err(Error::NoConvergence { iterations: it, residual: rn });
        }
        let j = problem.jacobian(&u, mu, d);
        let fp = problem.d_mu(&u, mu);
        let mut rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        rhs.push(-g);
        let dx = bordered_solve(&j, &[fp], &[wpsi.clone()], &[vec![0.0]], &rhs)?;
        for i in 0..n {
            u[i] += dx[i];
        }
        mu += dx[n];
    }
    unreachable!()
}

/// Moves off `point` along `psi` by `eps`, retrying with `eps / 2` up to four times.
///
/// The corrected point keeps the coordinate `<psi, u - u0>` fixed, so branches invariant
/// under a different symmetry class than `psi` are excluded.
pub fn switch_branch(problem: &Problem, point: &BranchPoint, psi: &Field, eps: f64) -> Result<BranchPoint> {
    if psi.grid() != problem.grid() || point.u.grid() != problem.grid() {
        return Err(Error::InvalidArgument("switch_branch grids must match the problem".into()));
    }
    if eps == 0.0 {
        return Ok(point.clone());
    }
    let mut e = eps;
    let mut last_err = None;
    for _ in 0..5 {
        match constrained_solve(problem, point.u.values(), point.mu, point.d, psi.values(), e, 1e-10) {
            Ok((u, mu)) => {
                let bp = BranchPoint::new(Field::new(*problem.grid(), u)?, mu, point.d);
                return Ok(bp);
            }
            Err(err) => {
                debug!("switch with eps={e:e} failed: {err}");
                last_err = Some(err);
                e *= 0.5;
            }
        }
    }
    Err(last_err.unwrap())
}

/// Default perturbation size `1e-2 * max(1, |u|_inf)`.
pub fn default_epsilon(point: &BranchPoint) -> f64 {
    1e-2 * point.u.max_abs().max(1.0)
}

/// Continues in mu with closure detection; `closed` reports whether the loop closed.
pub fn trace_isola(problem: &Problem, seed: &BranchPoint, cfg: &StepConfig) -> Result<Branch> {
    let cfg = StepConfig { detect_closure: true, ..cfg.clone() };
    continue_branch(problem, seed, Parameter::Mu, Direction::Decreasing, &cfg)
}

/// Continuation in both directions from a start point; the first run is reversed and prepended.
pub fn continue_both_ways(problem: &Problem, start: &BranchPoint, parameter: Parameter, cfg: &StepConfig) -> Result<Branch> {
    let back = continue_branch(problem, start, parameter, Direction::Decreasing, cfg)?;
    let fwd = continue_branch(problem, start, parameter, Direction::Increasing, cfg)?;
    let nb = back.points.len();
    let mut points: Vec<BranchPoint> = back.points.into_iter().rev().collect();
    for p in points.iter_mut() {
        p.tangent.iter_mut().for_each(|v| *v = -*v);
    }
    let mut events = vec![Event { index: 0, kind: EventKind::End }];
    for e in back.events.iter().filter(|e| e.kind == EventKind::Fold) {
        events.push(Event { index: nb - 1 - e.index, kind: EventKind::Fold });
    }
    events.push(Event { index: nb - 1, kind: EventKind::Start });
    events.extend(fwd.events.iter().filter(|e| e.kind != EventKind::Start).map(|e| Event { index: e.index + nb - 1, kind: e.kind }));
    points.extend(fwd.points.into_iter().skip(1));
    events.sort_by_key(|e| e.index);
    Ok(Branch { parameter, points, events, closed: false })
}

/// Starts a branch at a d = 0 pattern and continues it in d up to `d_target` at fixed mu.
pub fn continue_in_d(problem: &Problem, u0: &Field, mu: f64, d_target: f64) -> Result<BranchPoint> {
    let newton = NewtonOptions::default();
    let mut u = u0.values().to_vec();
    let mut d = 0.0;
    let mut h = (d_target / 20.0).min(1e-3).max(1e-12);
    u = problem.newton(&u, mu, 0.0, &newton)?.u;
    while d < d_target {
        let next = (d + h).min(d_target);
        match problem.newton(&u, mu, next, &newton) {
            Ok(out) => {
                let jump = inf_norm(&out.u.iter().zip(&u).map(|(a, b)| a - b).collect::<Vec<_>>());
                if jump < 0.1 {
                    u = out.u;
                    d = next;
                    h *= 1.5;
                    continue;
                }
            }
            Err(e) => debug!("d-step to {next} failed: {e}"),
        }
        h *= 0.25;
        if h < 1e-12 {
            return Err(Error::CorrectorStalled { h });
        }
    }
    Ok(BranchPoint::new(Field::new(*problem.grid(), u)?, mu, d_target))
}

/// Convenience: a grid of the problem.
pub fn grid_of(problem: &Problem) -> GridSpec {
    *problem.grid()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Symmetry;
    use crate::model::{anti_continuum_pattern, Family, Nonlinearity, PatternId};

    fn setup(n_d: usize, d: f64, mu: f64, id: PatternId) -> (Problem, BranchPoint) {
        let nl = Nonlinearity::builtin(Family::CubicQuintic).unwrap();
        let u0 = anti_continuum_pattern(&id, &nl, mu, n_d).unwrap();
        let p = Problem::new(*u0.grid(), nl);
        let (u, _) = p.newton_solve(&u0, mu, d, &NewtonOptions::default()).unwrap();
        (p, BranchPoint::new(u, mu, d))
    }

    #[test]
    fn corner_fold_on_decreasing_mu() {
        let d = 1e-3;
        let (p, start) = setup(6, d, 0.5, PatternId::ubar(1, 1, Symmetry::OffSite));
        let cfg = StepConfig { max_points: 400, p_min: -0.1, p_max: 1.1, ..Default::default() };
        let b = continue_branch(&p, &start, Parameter::Mu, Direction::Decreasing, &cfg).unwrap();
        let folds = detect_and_refine_folds(&p, &b).unwrap();
        let first = folds.first().expect("a fold");
        assert!(first.refined);
        let predicted = 3.0 * d.powf(2.0 / 3.0) / 4f64.cbrt();
        assert!(first.mu > 0.5 * predicted && first.mu < 2.0 * predicted, "{}", first.mu);
        let jphi = p.jacobian(first.u.values(), first.mu, first.d).mul_vec(first.phi.values());
        assert!(inf_norm(&jphi) <= 1e-8);
    }

    #[test]
    fn right_fold_on_increasing_mu() {
        let d = 1e-3;
        let (p, start) = setup(6, d, 0.5, PatternId::ubar(1, 1, Symmetry::OffSite));
        let cfg = StepConfig { max_points: 400, p_min: -0.1, p_max: 1.1, ..Default::default() };
        let b = continue_branch(&p, &start, Parameter::Mu, Direction::Increasing, &cfg).unwrap();
        let folds = detect_and_refine_folds(&p, &b).unwrap();
        assert!((folds[0].mu - (1.0 - 2.0 * d)).abs() < 5.0 * d.powf(1.5));
        for pt in &b.points {
            assert!(inf_norm(&p.residual(pt.u.values(), pt.mu, pt.d)) <= 1e-10);
        }
        let s = b.arclength();
        assert!(s.windows(2).all(|w| w[1] - w[0] >= 1e-7));
    }

    #[test]
    fn range_outside_window_ends_immediately() {
        let (p, start) = setup(4, 1e-3, 0.5, PatternId::ubar(2, 1, Symmetry::OffSite));
        let cfg = StepConfig { p_min: 2.0, p_max: 3.0, ..Default::default() };
        let b = continue_branch(&p, &start, Parameter::Mu, Direction::Increasing, &cfg).unwrap();
        assert_eq!(b.points.len(), 1);
        assert!(b.events.iter().any(|e| e.kind == EventKind::End && e.index == 0));
    }

    #[test]
    fn switch_with_zero_eps_is_identity() {
        let (p, start) = setup(4, 1e-3, 0.5, PatternId::ubar(2, 1, Symmetry::OffSite));
        let psi = Field::from_fn(*p.grid(), |_| 0.1);
        assert_eq!(switch_branch(&p, &start, &psi, 0.0).unwrap(), start);
    }

    #[test]
    fn small_d_state_close_to_pattern() {
        let nl = Nonlinearity::builtin(Family::CubicQuintic).unwrap();
        let id = PatternId::ubar(2, 2, Symmetry::OnSite);
        let u0 = anti_continuum_pattern(&id, &nl, 0.5, 5).unwrap();
        let p = Problem::new(*u0.grid(), nl);
        let bp = continue_in_d(&p, &u0, 0.5, 1e-6).unwrap();
        let diff = bp.u.values().iter().zip(u0.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-5);
    }

    #[test]
    fn primary_branch_is_not_closed() {
        let (p, start) = setup(5, 1e-2, 0.5, PatternId::ubar(1, 1, Symmetry::OffSite));
        let cfg = StepConfig { max_points: 150, p_min: -0.2, p_max: 1.2, ..Default::default() };
        let b = trace_isola(&p, &start, &cfg).unwrap();
        assert!(!b.closed);
    }
}
