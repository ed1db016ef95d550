//! Switchback points on the rightmost fold curves of the `(N,1)` patterns and their limit.

use std::path::Path;

use faer::{Mat, Side};
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::continuation::{
    continue_branch, detect_and_refine_folds, refine_fold, trace_isola, Branch, BranchPoint, Direction, FoldPoint, Parameter,
    StepConfig,
};
use crate::error::{Error, Result};
use crate::lattice::{unfold, Field, GridSpec, GroupElement, Symmetry};
use crate::linalg::{dot, inf_norm, norm2, sparse_solve, CsrMatrix};
use crate::model::{anti_continuum_pattern, Nonlinearity, PatternId};
use crate::solver::{NewtonOptions, Problem};
use crate::spectral::{full_jacobian, IsotypicTag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuspMethod {
    /// Minimizes the second symmetric eigenvalue along the traced fold curve.
    LeastSquares,
    /// Newton on the symmetry-restricted square system.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CuspPoint {
    pub u: Field,
    pub mu: f64,
    pub d: f64,
    pub phi1: Field,
    pub phi2: Field,
    pub label: Option<PatternId>,
    pub residual: f64,
    pub null_residual1: f64,
    pub null_residual2: f64,
    /// Component holding `phi2`.
    pub component: IsotypicTag,
    pub nullity_check: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CuspConfig {
    pub method: CuspMethod,
    pub d_step: f64,
    /// Candidates below this d are ignored; near d = 0 every plateau site is nearly neutral.
    pub d_min: f64,
    pub d_max: f64,
    pub d_tol: f64,
}

impl Default for CuspConfig {
    fn default() -> Self {
        Self { method: CuspMethod::LeastSquares, d_step: 2e-3, d_min: 0.02, d_max: 0.25, d_tol: 1e-7 }
    }
}

/// Eigenpairs of a wedge Jacobian, descending, with `<W phi, phi> = 1`.
pub fn wedge_spectrum(j: &CsrMatrix, w: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = j.nrows();
    let sq: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut s = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        for (k, v) in j.row(i) {
            s[(i, k)] = sq[i] * v / sq[k];
        }
    }
    // symmetrize away rounding
    let s = Mat::from_fn(n, n, |a, b| 0.5 * (s[(a, b)] + s[(b, a)]));
    let eig = s.self_adjoint_eigen(Side::Lower).map_err(|e| Error::FactorizationFailure(format!("{e:?}")))?;
    let vals = eig.S().column_vector();
    let vecs = eig.U();
    Ok((0..n)
        .rev()
        .map(|c| (vals[c], (0..n).map(|r| vecs[(r, c)] / sq[r]).collect()))
        .collect())
}

/// Second eigenvalue of the symmetric-class linearization at a fold, and its mode.
pub fn second_mode(problem: &Problem, fold: &FoldPoint) -> Result<(f64, Field)> {
    let j = problem.jacobian(fold.u.values(), fold.mu, fold.d);
    let spec = wedge_spectrum(&j, &problem.grid().weights())?;
    let mut spec = spec;
    spec.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
    // the closest one belongs to the fold's own null vector
    let (l, mut v) = spec.into_iter().nth(1).ok_or(Error::WrongNullity(0))?;
    let k = (0..v.len()).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
    if v[k] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok((l, Field::new(*problem.grid(), v)?))
}

/// The first fold met when increasing mu from the `(n, 1)` pattern at mu = 0.5.
pub fn rightmost_fold(problem: &Problem, n: usize, d: f64) -> Result<FoldPoint> {
    let grid = problem.grid();
    let id = PatternId::ubar(n, 1, grid.symmetry());
    let u0 = anti_continuum_pattern(&id, problem.nonlinearity(), 0.5, grid.n_d())?;
    let start = crate::continuation::continue_in_d(problem, &u0, 0.5, d)?;
    let cfg = StepConfig { max_points: 400, p_min: -1.0, p_max: 2.0, h_init: 1e-3, h_max: 0.02, ..Default::default() };
    let mut branch = continue_branch(problem, &start, Parameter::Mu, Direction::Increasing, &cfg)?;
    let first = branch.fold_indices().first().copied().ok_or(Error::RefinementFailed("no fold found".into()))?;
    branch.points.truncate(first + 3);
    branch.events.retain(|e| e.index <= first);
    detect_and_refine_folds(problem, &branch)?
        .into_iter()
        .find(|f| f.refined)
        .ok_or_else(|| Error::RefinementFailed("rightmost fold did not refine".into()))
}

/// Follows a fold in d by refining at each requested d from the previous fold.
pub fn trace_fold_curve(problem: &Problem, start: &FoldPoint, d_values: &[f64]) -> Vec<FoldPoint> {
    let mut out = Vec::with_capacity(d_values.len());
    let mut cur = start.clone();
    for &d in d_values {
        match step_fold(problem, &cur, d) {
            Ok(f) => {
                cur = f.clone();
                out.push(f);
            }
            Err(e) => {
                info!("fold curve stopped at d={d}: {e}");
                break;
            }
        }
    }
    out
}

/// Refines at `d` from `from`, subdividing the d-step on failure.
fn step_fold(problem: &Problem, from: &FoldPoint, d: f64) -> Result<FoldPoint> {
    let mut cur = from.clone();
    let mut target = d;
    let mut depth = 0;
    while (cur.d - d).abs() > 0.0 {
        match refine_fold(problem, cur.u.values(), cur.mu, target, cur.phi.values(), Parameter::Mu) {
            Ok(f) => {
                cur = f;
                target = d;
            }
            Err(e) => {
                depth += 1;
                if depth > 6 {
                    return Err(e);
                }
                target = 0.5 * (cur.d + target);
            }
        }
    }
    Ok(cur)
}

fn golden_min(mut a: f64, mut b: f64, tol: f64, mut f: impl FnMut(f64) -> Option<f64>) -> Option<f64> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fe = f(e)?;
    while (b - a).abs() > tol {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = f(e)?;
        }
    }
    Some(0.5 * (a + b))
}

/// Locates a switchback starting from a fold `(u0, mu0, d0)` of the symmetric problem.
pub fn find_cusp(problem: &Problem, seed: &FoldPoint, cfg: &CuspConfig) -> Result<CuspPoint> {
    match cfg.method {
        CuspMethod::LeastSquares => find_cusp_least_squares(problem, seed, cfg),
        CuspMethod::Exact => {
            let mut last = Error::WrongNullity(1);
            for tag in [IsotypicTag::Sign1, IsotypicTag::Sign2, IsotypicTag::Sign3, IsotypicTag::TwoDim] {
                match find_cusp_exact(problem, seed, tag) {
                    Ok(c) => {
                        info!("exact cusp converged in component {tag:?}");
                        return Ok(c);
                    }
                    Err(e) => {
                        debug!("component {tag:?}: {e}");
                        last = e;
                    }
                }
            }
            Err(last)
        }
    }
}

fn cusp_from_fold(problem: &Problem, f: &FoldPoint, component: IsotypicTag) -> Result<CuspPoint> {
    let (l2, phi2) = second_mode(problem, f)?;
    let w = problem.grid().weights();
    let mut phi1 = f.phi.values().to_vec();
    let n1 = weighted_norm(&phi1, &w);
    phi1.iter_mut().for_each(|v| *v /= n1);
    let mut phi2 = phi2.into_values();
    let c = weighted_dot(&phi1, &phi2, &w);
    phi2.iter_mut().zip(&phi1).for_each(|(a, b)| *a -= c * b);
    let n2 = weighted_norm(&phi2, &w);
    phi2.iter_mut().for_each(|v| *v /= n2);
    let j = problem.jacobian(f.u.values(), f.mu, f.d);
    let r2 = inf_norm(&j.mul_vec(&phi2));
    debug!("cusp candidate d={} mu={} lambda2={l2:e}", f.d, f.mu);
    let grid = *problem.grid();
    Ok(CuspPoint {
        u: f.u.clone(),
        mu: f.mu,
        d: f.d,
        phi1: Field::new(grid, phi1)?,
        phi2: Field::new(grid, phi2)?,
        label: None,
        residual: f.residual,
        null_residual1: f.null_residual,
        null_residual2: r2,
        component,
        nullity_check: f.null_residual <= 1e-7 && r2 <= 1e-7,
    })
}

fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), z)| x * y * z).sum()
}

fn weighted_norm(a: &[f64], w: &[f64]) -> f64 {
    weighted_dot(a, a, w).sqrt()
}

fn find_cusp_least_squares(problem: &Problem, seed: &FoldPoint, cfg: &CuspConfig) -> Result<CuspPoint> {
    let mut ds = Vec::new();
    let mut d = seed.d + cfg.d_step;
    while d <= cfg.d_max + 1e-12 {
        ds.push(d);
        d += cfg.d_step;
    }
    let mut curve = vec![seed.clone()];
    curve.extend(trace_fold_curve(problem, seed, &ds));
    if curve.len() < 3 {
        return Err(Error::NoConvergence { iterations: curve.len(), residual: f64::NAN });
    }
    let objective = |f: &FoldPoint| second_mode(problem, f).map(|(l, _)| l.abs());
    let values: Vec<f64> = curve.iter().map(|f| objective(f).unwrap_or(f64::INFINITY)).collect();
    // interior local minima of |lambda2|, plus the end of a curve that turned back in d
    let last = curve.len() - 1;
    let mut candidates: Vec<(usize, f64, f64)> = (1..last)
        .filter(|&k| curve[k].d >= cfg.d_min && values[k] <= values[k - 1] && values[k] <= values[k + 1])
        .map(|k| (k, curve[k - 1].d, curve[k + 1].d))
        .collect();
    if curve.len() < ds.len() + 1 && curve[last].d >= cfg.d_min && values[last] <= values[last - 1] {
        candidates.push((last, curve[last - 1].d, curve[last].d + cfg.d_step));
    }
    let &(best, lo, hi) = candidates
        .iter()
        .min_by(|a, b| values[a.0].total_cmp(&values[b.0]))
        .ok_or(Error::NoConvergence { iterations: curve.len(), residual: f64::NAN })?;
    let anchor = curve[best].clone();
    let mut best_fold = (values[best], anchor.clone());
    let mut eval = |d: f64| -> Option<f64> {
        // refinement breaks down right at the doubly singular point; keep the closest success
        let Ok(f) = step_fold(problem, &anchor, d) else { return Some(f64::INFINITY) };
        let v = objective(&f).unwrap_or(f64::INFINITY);
        if v < best_fold.0 {
            best_fold = (v, f);
        }
        Some(v)
    };
    let _ = golden_min(lo, hi, cfg.d_tol, &mut eval);
    let (_, fold) = best_fold;
    match gauss_newton_cusp(problem, &fold) {
        Ok(c) if (c.d - fold.d).abs() <= 2.0 * cfg.d_step && (c.mu - fold.mu).abs() <= 0.05 => Ok(c),
        Ok(c) => {
            info!("Gauss-Newton moved to d={} mu={}, reporting the fold minimizer", c.d, c.mu);
            cusp_from_fold(problem, &fold, IsotypicTag::Trivial)
        }
        Err(e) => {
            info!("Gauss-Newton polish failed ({e}), reporting the fold minimizer");
            cusp_from_fold(problem, &fold, IsotypicTag::Trivial)
        }
    }
}

/// Levenberg-Marquardt on `F = 0, J phi1 = 0, J phi2 = 0` with W-orthonormal `phi1, phi2`,
/// unknowns `(u, phi1, phi2, mu, d)` on the wedge.
pub fn gauss_newton_cusp(problem: &Problem, fold: &FoldPoint) -> Result<CuspPoint> {
    let n = problem.size();
    let w = problem.grid().weights();
    let nl = problem.nonlinearity();
    let lap = problem.laplacian();
    let j0 = problem.jacobian(fold.u.values(), fold.mu, fold.d);
    let mut spec = wedge_spectrum(&j0, &w)?;
    spec.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
    if spec.len() < 2 {
        return Err(Error::WrongNullity(spec.len()));
    }
    let mut x: Vec<f64> = fold.u.values().to_vec();
    x.extend_from_slice(&spec[0].1);
    x.extend_from_slice(&spec[1].1);
    x.push(fold.mu);
    x.push(fold.d);
    let nx = 3 * n + 2;
    let nr = 3 * n + 3;
    let parts = |x: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, f64, f64) {
        (x[..n].to_vec(), x[n..2 * n].to_vec(), x[2 * n..3 * n].to_vec(), x[3 * n], x[3 * n + 1])
    };
    let residual = |x: &[f64]| -> Vec<f64> {
        let (u, p1, p2, mu, d) = parts(x);
        let j = problem.jacobian(&u, mu, d);
        let mut r = problem.residual(&u, mu, d);
        r.extend(j.mul_vec(&p1));
        r.extend(j.mul_vec(&p2));
        r.push(weighted_dot(&p1, &p1, &w) - 1.0);
        r.push(weighted_dot(&p2, &p2, &w) - 1.0);
        r.push(weighted_dot(&p1, &p2, &w));
        r
    };
    let jacobian = |x: &[f64]| -> Vec<Vec<(usize, f64)>> {
        let (u, p1, p2, mu, d) = parts(x);
        let j = problem.jacobian(&u, mu, d);
        let fmu = problem.d_mu(&u, mu);
        let lu = lap.mul_vec(&u);
        let l1 = lap.mul_vec(&p1);
        let l2 = lap.mul_vec(&p2);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nr];
        for i in 0..n {
            for (k, v) in j.row(i) {
                rows[i].push((k, v));
                rows[n + i].push((n + k, v));
                rows[2 * n + i].push((2 * n + k, v));
            }
            let fuu = nl.duu(u[i], mu);
            let fum = nl.dumu(u[i], mu);
            rows[i].push((3 * n, fmu[i]));
            rows[i].push((3 * n + 1, lu[i]));
            rows[n + i].push((i, fuu * p1[i]));
            rows[n + i].push((3 * n, fum * p1[i]));
            rows[n + i].push((3 * n + 1, l1[i]));
            rows[2 * n + i].push((i, fuu * p2[i]));
            rows[2 * n + i].push((3 * n, fum * p2[i]));
            rows[2 * n + i].push((3 * n + 1, l2[i]));
            rows[3 * n].push((n + i, 2.0 * w[i] * p1[i]));
            rows[3 * n + 1].push((2 * n + i, 2.0 * w[i] * p2[i]));
            rows[3 * n + 2].push((n + i, w[i] * p2[i]));
            rows[3 * n + 2].push((2 * n + i, w[i] * p1[i]));
        }
        rows
    };
    let cost = |r: &[f64]| dot(r, r);
    let mut r = residual(&x);
    let r0 = inf_norm(&r);
    let mut c = cost(&r);
    let mut lambda = 1e-8;
    for it in 0..60 {
        if inf_norm(&r) <= 1e-11 {
            debug!("Gauss-Newton converged after {it} iterations");
            break;
        }
        let rows = jacobian(&x);
        let mut t = Vec::new();
        let mut g = vec![0.0; nx];
        let mut diag = vec![0.0; nx];
        for (row, ri) in rows.iter().zip(&r) {
            for &(a, va) in row {
                g[a] += va * ri;
                diag[a] += va * va;
                for &(b, vb) in row {
                    t.push((a, b, va * vb));
                }
            }
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut tt = t.clone();
            for (a, dv) in diag.iter().enumerate() {
                tt.push((a, a, lambda * dv.max(1e-12)));
            }
            let ata = CsrMatrix::from_triplets(nx, nx, &tt);
            let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
            if let Ok(dx) = crate::linalg::SparseLu::from_csr(&ata).and_then(|lu| lu.solve(&rhs)) {
                let xn: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
                let rn = residual(&xn);
                let cn = cost(&rn);
                if cn < c {
                    (x, r, c) = (xn, rn, cn);
                    lambda = (lambda * 0.1).max(1e-14);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let rn = inf_norm(&r);
    if !(rn < r0) {
        return Err(Error::NoConvergence { iterations: 60, residual: rn });
    }
    let (u, mut p1, mut p2, mu, d) = parts(&x);
    let (u, mu, d) = min_norm_polish(problem, u, mu, d)?;
    let grid = *problem.grid();
    for p in [&mut p1, &mut p2] {
        let nrm = weighted_norm(p, &w);
        p.iter_mut().for_each(|v| *v /= nrm);
    }
    let j = problem.jacobian(&u, mu, d);
    let r1 = inf_norm(&j.mul_vec(&p1));
    let r2 = inf_norm(&j.mul_vec(&p2));
    let ortho = weighted_dot(&p1, &p2, &w).abs();
    Ok(CuspPoint {
        residual: inf_norm(&problem.residual(&u, mu, d)),
        u: Field::new(grid, u)?,
        mu,
        d,
        phi1: Field::new(grid, p1)?,
        phi2: Field::new(grid, p2)?,
        label: None,
        null_residual1: r1,
        null_residual2: r2,
        component: IsotypicTag::Trivial,
        nullity_check: r1 <= 1e-7 && r2 <= 1e-7 && ortho <= 1e-8,
    })
}

/// Orthonormal sparse basis of the fields transforming by a one-dimensional character of a subgroup.
///
/// For the two-dimensional representation the Klein subgroup of half turn and axis reflections is
/// used with the character that is odd under the half turn, which selects one copy of every
/// two-dimensional block.
#[derive(Clone, Debug)]
pub struct SymmetryBasis {
    /// Per full-square site, the column it belongs to and its coefficient.
    entries: Vec<Option<(usize, f64)>>,
    ncols: usize,
}

impl SymmetryBasis {
    pub fn new(grid: GridSpec, tag: IsotypicTag) -> Self {
        let sym = grid.symmetry();
        let elems: Vec<(GroupElement, f64)> = match tag {
            IsotypicTag::TwoDim => vec![
                (GroupElement { rotation: 0, swap: false }, 1.0),
                (GroupElement { rotation: 2, swap: false }, -1.0),
                (GroupElement { rotation: 1, swap: true }, -1.0),
                (GroupElement { rotation: 3, swap: true }, 1.0),
            ],
            _ => GroupElement::all().iter().map(|g| (*g, tag.character(g.class()))).collect(),
        };
        let mut entries = vec![None; grid.size()];
        let mut seen = vec![false; grid.size()];
        let mut ncols = 0;
        for i in 0..grid.size() {
            if seen[i] {
                continue;
            }
            let s = grid.site(i);
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for (g, c) in &elems {
                let k = grid.index(g.apply(s, sym)).expect("square is invariant");
                seen[k] = true;
                match acc.iter_mut().find(|e| e.0 == k) {
                    Some(e) => e.1 += c,
                    None => acc.push((k, *c)),
                }
            }
            acc.retain(|e| e.1 != 0.0);
            if acc.is_empty() {
                continue;
            }
            let norm = acc.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            for (k, c) in acc {
                entries[k] = Some((ncols, c / norm));
            }
            ncols += 1;
        }
        Self { entries, ncols }
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn expand(&self, c: &[f64]) -> Vec<f64> {
        self.entries.iter().map(|e| e.map_or(0.0, |(k, v)| v * c[k])).collect()
    }

    pub fn restrict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (e, xi) in self.entries.iter().zip(x) {
            if let Some((k, v)) = e {
                out[*k] += v * xi;
            }
        }
        out
    }

    /// `B^T A B` for a full-square matrix `A`.
    pub fn reduce(&self, a: &CsrMatrix) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            let Some((ki, bi)) = self.entries[i] else { continue };
            for (j, v) in a.row(i) {
                if let Some((kj, bj)) = self.entries[j] {
                    t.push((ki, kj, bi * v * bj));
                }
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.ncols, &t)
    }
}

fn find_cusp_exact(problem: &Problem, seed: &FoldPoint, tag: IsotypicTag) -> Result<CuspPoint> {
    let grid = *problem.grid();
    if grid.kind() != crate::lattice::GridKind::Wedge {
        return Err(Error::InvalidArgument("exact cusp solve expects a wedge problem".into()));
    }
    let full = grid.full();
    let basis = SymmetryBasis::new(full, tag);
    let nr = basis.ncols();
    let n = grid.size();
    let nl = problem.nonlinearity().clone();
    let full_problem = Problem::new(full, nl.clone());
    // unfolding map: full index -> wedge index
    let unfold_map: Vec<usize> =
        full.sites().map(|s| grid.index(crate::lattice::canonical(s, grid.symmetry())).unwrap()).collect();
    // phi2 seed: the reduced mode with eigenvalue closest to zero
    let (_, jf) = full_jacobian(&seed.u, &nl, seed.mu, seed.d)?;
    let jr = basis.reduce(&jf);
    let mut modes = crate::linalg::dense_eigen(&jr)?;
    modes.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
    let c_ref = modes.first().ok_or(Error::WrongNullity(0))?.1.clone();
    let phi1_ref = seed.phi.values().to_vec();
    let mut u = seed.u.values().to_vec();
    let mut phi1 = phi1_ref.clone();
    let s1 = dot(&phi1_ref, &phi1);
    phi1.iter_mut().for_each(|v| *v /= s1);
    let mut c = c_ref.clone();
    let (mut mu, mut d) = (seed.mu, seed.d);
    let lap_w = problem.laplacian().clone();
    let lap_r = basis.reduce(full_problem.laplacian());
    let dim = 2 * n + nr + 2;
    let residual = |u: &[f64], phi1: &[f64], c: &[f64], mu: f64, d: f64| -> Vec<f64> {
        let mut r = problem.residual(u, mu, d);
        r.extend(problem.jacobian(u, mu, d).mul_vec(phi1));
        let uf: Vec<f64> = unfold_map.iter().map(|&k| u[k]).collect();
        let jr = basis.reduce(&full_problem.jacobian(&uf, mu, d));
        r.extend(jr.mul_vec(c));
        r.push(dot(&phi1_ref, phi1) - 1.0);
        r.push(dot(&c_ref, c) - 1.0);
        r
    };
    let mut r = residual(&u, &phi1, &c, mu, d);
    for it in 0..30 {
        let rn = inf_norm(&r);
        debug!("exact cusp {tag:?} iter {it} residual {rn:e}");
        if rn <= 1e-11 {
            break;
        }
        let mut t = Vec::new();
        let j = problem.jacobian(&u, mu, d);
        for (i, k, v) in j.triplets() {
            t.push((i, k, v));
            t.push((n + i, n + k, v));
        }
        let fmu = problem.d_mu(&u, mu);
        let lu = lap_w.mul_vec(&u);
        let lphi = lap_w.mul_vec(&phi1);
        for i in 0..n {
            t.push((n + i, i, nl.duu(u[i], mu) * phi1[i]));
            t.push((i, dim - 2, fmu[i]));
            t.push((i, dim - 1, lu[i]));
            t.push((n + i, dim - 2, nl.dumu(u[i], mu) * phi1[i]));
            t.push((n + i, dim - 1, lphi[i]));
            t.push((2 * n + nr, n + i, phi1_ref[i]));
        }
        let uf: Vec<f64> = unfold_map.iter().map(|&k| u[k]).collect();
        let phi2f = basis.expand(&c);
        let jr = basis.reduce(&full_problem.jacobian(&uf, mu, d));
        for (a, b, v) in jr.triplets() {
            t.push((2 * n + a, 2 * n + b, v));
        }
        let mut dmu_r = vec![0.0; nr];
        for f in 0..full.size() {
            if let Some((k, bv)) = basis.entries[f] {
                t.push((2 * n + k, unfold_map[f], bv * nl.duu(uf[f], mu) * phi2f[f]));
                dmu_r[k] += bv * nl.dumu(uf[f], mu) * phi2f[f];
            }
        }
        let lc = lap_r.mul_vec(&c);
        for k in 0..nr {
            t.push((2 * n + k, dim - 2, dmu_r[k]));
            t.push((2 * n + k, dim - 1, lc[k]));
            t.push((2 * n + nr + 1, 2 * n + k, c_ref[k]));
        }
        let a = CsrMatrix::from_triplets(dim, dim, &t);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = sparse_solve(&a, &rhs)?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let un: Vec<f64> = u.iter().zip(&dx[..n]).map(|(a, b)| a + step * b).collect();
            let pn: Vec<f64> = phi1.iter().zip(&dx[n..2 * n]).map(|(a, b)| a + step * b).collect();
            let cn: Vec<f64> = c.iter().zip(&dx[2 * n..2 * n + nr]).map(|(a, b)| a + step * b).collect();
            let mn = mu + step * dx[dim - 2];
            let dn = d + step * dx[dim - 1];
            let rt = residual(&un, &pn, &cn, mn, dn);
            if inf_norm(&rt) < rn {
                (u, phi1, c, mu, d, r) = (un, pn, cn, mn, dn, rt);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence { iterations: it, residual: rn });
        }
    }
    let rn = inf_norm(&r);
    if rn > 1e-9 || !(0.0..1.0).contains(&d) {
        return Err(Error::NoConvergence { iterations: 30, residual: rn });
    }
    // independent nullity check on the full square
    let ufield = Field::new(grid, u.clone())?;
    let (_, jf) = full_jacobian(&ufield, &nl, mu, d)?;
    let pairs = crate::spectral::near_zero_eigenpairs(&jf, 4.min(jf.nrows()), full)?;
    let small = pairs.iter().filter(|(l, _)| l.abs() <= 1e-7).count();
    if small < 2 {
        return Err(Error::WrongNullity(small));
    }
    let w = grid.weights();
    let n1 = weighted_norm(&phi1, &w);
    phi1.iter_mut().for_each(|v| *v /= n1);
    let mut phi2 = basis.expand(&c);
    let n2 = norm2(&phi2);
    phi2.iter_mut().for_each(|v| *v /= n2);
    let j = problem.jacobian(&u, mu, d);
    let r1 = inf_norm(&j.mul_vec(&phi1));
    let r2 = inf_norm(&full_problem.jacobian(unfold(&ufield)?.values(), mu, d).mul_vec(&phi2));
    Ok(CuspPoint {
        residual: inf_norm(&problem.residual(&u, mu, d)),
        u: ufield,
        mu,
        d,
        phi1: Field::new(grid, phi1)?,
        phi2: Field::new(full, phi2)?,
        label: None,
        null_residual1: r1,
        null_residual2: r2,
        component: tag,
        nullity_check: r1 <= 1e-7 && r2 <= 1e-7,
    })
}

/// Minimum-norm Gauss-Newton steps on `F(u, mu, d) = 0` in all of `(u, mu, d)`.
fn min_norm_polish(problem: &Problem, mut u: Vec<f64>, mut mu: f64, mut d: f64) -> Result<(Vec<f64>, f64, f64)> {
    let n = u.len();
    for _ in 0..10 {
        let f = problem.residual(&u, mu, d);
        if inf_norm(&f) <= 1e-12 {
            break;
        }
        // [[I, A^T], [A, 0]] [dx; y] = [0; -F], A = [J, F_mu, F_d]
        let j = problem.jacobian(&u, mu, d);
        let fmu = problem.d_mu(&u, mu);
        let fd = problem.d_d(&u);
        let m = n + 2;
        let mut t: Vec<(usize, usize, f64)> = (0..m).map(|i| (i, i, 1.0)).collect();
        for (a, b, v) in j.triplets() {
            t.push((m + a, b, v));
            t.push((b, m + a, v));
        }
        for i in 0..n {
            t.push((m + i, n, fmu[i]));
            t.push((n, m + i, fmu[i]));
            t.push((m + i, n + 1, fd[i]));
            t.push((n + 1, m + i, fd[i]));
        }
        let a = CsrMatrix::from_triplets(m + n, m + n, &t);
        let mut rhs = vec![0.0; m];
        rhs.extend(f.iter().map(|v| -v));
        let dx = sparse_solve(&a, &rhs)?;
        u.iter_mut().zip(&dx[..n]).for_each(|(a, b)| *a += b);
        mu += dx[n];
        d += dx[n + 1];
    }
    let r = inf_norm(&problem.residual(&u, mu, d));
    if r > 1e-10 {
        return Err(Error::NoConvergence { iterations: 10, residual: r });
    }
    Ok((u, mu, d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuspRecord {
    #[serde(rename = "N")]
    pub n: usize,
    pub mu_n: f64,
    pub d_n: f64,
    pub nullity_check: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    pub mu_inf: f64,
    pub d_inf: f64,
    pub rho: f64,
    /// Per-N distance between data and fit.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CuspSequence {
    pub records: Vec<CuspRecord>,
    pub points: Vec<CuspPoint>,
    pub fit: Option<GeometricFit>,
}

impl CuspSequence {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["N", "mu_N", "d_N", "nullity_check", "converged"])?;
        for r in &self.records {
            w.write_record([
                r.n.to_string(),
                format!("{:.12e}", r.mu_n),
                format!("{:.12e}", r.d_n),
                r.nullity_check.to_string(),
                r.converged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_fit_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.fit)?)?;
        Ok(())
    }
}

/// Least-squares fit of `x_N = x_inf + C rho^N` with a common `rho` for mu and d.
pub fn geometric_fit(ns: &[usize], mu: &[f64], d: &[f64]) -> Option<GeometricFit> {
    if ns.len() < 3 {
        return None;
    }
    let lin = |rho: f64, x: &[f64]| -> (f64, f64, f64) {
        // least squares in (x_inf, C)
        let g: Vec<f64> = ns.iter().map(|&n| rho.powi(n as i32)).collect();
        let m = ns.len() as f64;
        let (sg, sgg) = (g.iter().sum::<f64>(), g.iter().map(|v| v * v).sum::<f64>());
        let (sx, sgx) = (x.iter().sum::<f64>(), g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        let det = m * sgg - sg * sg;
        if det.abs() < 1e-300 {
            return (sx / m, 0.0, f64::INFINITY);
        }
        let c = (m * sgx - sg * sx) / det;
        let x0 = (sx - c * sg) / m;
        let res = g.iter().zip(x).map(|(gi, xi)| (x0 + c * gi - xi).powi(2)).sum();
        (x0, c, res)
    };
    let cost = |rho: f64| lin(rho, mu).2 + lin(rho, d).2;
    let mut best = (f64::INFINITY, 0.5);
    for k in 1..1000 {
        let rho = k as f64 / 1000.0;
        let c = cost(rho);
        if c < best.0 {
            best = (c, rho);
        }
    }
    let rho = golden_min((best.1 - 1e-3).max(1e-6), (best.1 + 1e-3).min(0.999999), 1e-10, |r| Some(cost(r)))?;
    let (mu_inf, cm, _) = lin(rho, mu);
    let (d_inf, cd, _) = lin(rho, d);
    let residuals = ns
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let g = rho.powi(n as i32);
            ((mu_inf + cm * g - mu[i]).powi(2) + (d_inf + cd * g - d[i]).powi(2)).sqrt()
        })
        .collect();
    Some(GeometricFit { mu_inf, d_inf, rho, residuals })
}

/// Cusp per `N` from the rightmost fold of the `(N, 1)` pattern at `d_start`, plus the fit.
pub fn cusp_sequence(
    nl: &Nonlinearity,
    n_range: std::ops::RangeInclusive<usize>,
    n_d: usize,
    symmetry: Symmetry,
    d_start: f64,
    cfg: &CuspConfig,
) -> Result<CuspSequence> {
    if *n_range.start() < 1 || *n_range.end() >= n_d {
        return Err(Error::InvalidArgument(format!("N range must lie in [1, {})", n_d)));
    }
    let grid = GridSpec::wedge(n_d, symmetry)?;
    let problem = Problem::new(grid, nl.clone());
    let ns: Vec<usize> = n_range.collect();
    let results: Vec<(usize, Result<CuspPoint>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = ns
            .iter()
            .map(|&n| {
                let problem = &problem;
                scope.spawn(move || {
                    let r = rightmost_fold(problem, n, d_start).and_then(|f| find_cusp(problem, &f, cfg));
                    (n, r)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("cusp worker panicked")).collect()
    });
    let mut records = Vec::new();
    let mut points = Vec::new();
    for (n, r) in results {
        match r {
            Ok(mut c) => {
                c.label = Some(PatternId::ubar(n, 1, symmetry));
                info!("N={n}: mu={} d={}", c.mu, c.d);
                records.push(CuspRecord { n, mu_n: c.mu, d_n: c.d, nullity_check: c.nullity_check, converged: true });
                points.push(c);
            }
            Err(e) => {
                warn!("N={n}: {e}");
                records.push(CuspRecord { n, mu_n: f64::NAN, d_n: f64::NAN, nullity_check: false, converged: false });
            }
        }
    }
    let ok: Vec<&CuspRecord> = records.iter().filter(|r| r.converged).collect();
    let fit = geometric_fit(
        &ok.iter().map(|r| r.n).collect::<Vec<_>>(),
        &ok.iter().map(|r| r.mu_n).collect::<Vec<_>>(),
        &ok.iter().map(|r| r.d_n).collect::<Vec<_>>(),
    );
    Ok(CuspSequence { records, points, fit })
}

/// A point on a closed branch candidate: displaced from a fold along its second mode.
///
/// Solves `F = 0` with `<W phi2, u - u_fold> = eps` at the fold's d.
pub fn isola_seed(problem: &Problem, fold: &FoldPoint, eps: f64) -> Result<BranchPoint> {
    let (_, phi2) = second_mode(problem, fold)?;
    let start = BranchPoint::new(fold.u.clone(), fold.mu, fold.d);
    let seed = crate::continuation::switch_branch(problem, &start, &phi2, eps)?;
    let r = inf_norm(&problem.residual(seed.u.values(), seed.mu, seed.d));
    if r > NewtonOptions::default().tol {
        return Err(Error::NoConvergence { iterations: 0, residual: r });
    }
    Ok(seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolaConfig {
    /// `N` of the `(N, 1)` pattern whose rightmost fold is followed to `d`.
    pub n: usize,
    pub n_d: usize,
    pub symmetry: Symmetry,
    pub d: f64,
    /// d at which the fold is first located.
    pub d_start: f64,
    pub d_step: f64,
    /// Offset along the second mode of the fold.
    pub eps: f64,
    pub step: StepConfig,
}

impl Default for IsolaConfig {
    fn default() -> Self {
        Self {
            n: 4,
            n_d: 14,
            symmetry: Symmetry::OffSite,
            d: 0.12,
            d_start: 1e-3,
            d_step: 2e-3,
            eps: -0.6,
            step: StepConfig { max_points: 600, h_init: 0.01, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug)]
pub struct IsolaRun {
    pub fold: FoldPoint,
    pub seed: BranchPoint,
    pub branch: Branch,
}

/// Follows the rightmost fold of `(N, 1)` to `cfg.d`, steps off along its second mode and traces
/// the resulting branch with closure detection.
pub fn isola_study(nl: &Nonlinearity, cfg: &IsolaConfig) -> Result<IsolaRun> {
    if cfg.n > cfg.n_d {
        return Err(Error::PatternExceedsDomain { n: cfg.n, n_d: cfg.n_d });
    }
    if !(cfg.d_step > 0.0) || cfg.d < cfg.d_start {
        return Err(Error::InvalidArgument("isola needs d >= d_start and d_step > 0".into()));
    }
    let problem = Problem::new(GridSpec::wedge(cfg.n_d, cfg.symmetry)?, nl.clone());
    let start = rightmost_fold(&problem, cfg.n, cfg.d_start)?;
    let ds: Vec<f64> = (1..)
        .map(|k| cfg.d_start + cfg.d_step * k as f64)
        .take_while(|d| *d < cfg.d)
        .chain([cfg.d])
        .collect();
    let curve = trace_fold_curve(&problem, &start, &ds);
    let fold = match curve.last() {
        Some(f) if (f.d - cfg.d).abs() < 1e-12 => f.clone(),
        _ => return Err(Error::RefinementFailed(format!("fold curve did not reach d={}", cfg.d))),
    };
    let seed = isola_seed(&problem, &fold, cfg.eps)?;
    let branch = trace_isola(&problem, &seed, &cfg.step)?;
    info!("isola at d={}: {} points, closed={}", cfg.d, branch.points.len(), branch.closed);
    Ok(IsolaRun { fold, seed, branch })
}
