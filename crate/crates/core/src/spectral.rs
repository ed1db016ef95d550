//! Stability of steady states on the unfolded full square: inertia counts, near-zero
//! eigenpairs, crossing tallies at folds and D4 isotypic classification.

use std::path::Path;

use faer::{Mat, Side};
use log::{debug, warn};
use serde::Serialize;

use crate::continuation::{Branch, Event, EventKind};
use crate::error::{Error, Result};
use crate::lattice::{unfold, ConjugacyClass, Field, GridKind, GridSpec, GroupElement, Symmetry};
use crate::linalg::{dot, inertia, normalize, CsrMatrix, Inertia, SparseLu};
use crate::model::Nonlinearity;
use crate::solver::Problem;

#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub n_unstable: usize,
    pub n_zero: usize,
    pub tau: f64,
    pub near_zero_pairs: Vec<(f64, Field)>,
    pub domain: GridSpec,
}

#[derive(Serialize)]
struct NearZeroJson {
    lambda: f64,
    tag: IsotypicTag,
}

#[derive(Serialize)]
struct SpectrumJson {
    n_unstable: usize,
    n_zero: usize,
    near_zero: Vec<NearZeroJson>,
}

impl SpectrumReport {
    pub fn to_json(&self) -> serde_json::Value {
        let near_zero = self
            .near_zero_pairs
            .iter()
            .map(|(l, v)| NearZeroJson { lambda: *l, tag: isotypic_classify(v).tag })
            .collect();
        serde_json::to_value(SpectrumJson { n_unstable: self.n_unstable, n_zero: self.n_zero, near_zero })
            .expect("spectrum serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }
}

/// The full-square Jacobian at `u` (a wedge field is unfolded first).
pub fn full_jacobian(u: &Field, nl: &Nonlinearity, mu: f64, d: f64) -> Result<(Field, CsrMatrix)> {
    let full = match u.grid().kind() {
        GridKind::Wedge => unfold(u)?,
        GridKind::FullSquare => u.clone(),
    };
    let p = Problem::new(*full.grid(), nl.clone());
    let j = p.jacobian(full.values(), mu, d);
    Ok((full, j))
}

/// Zero tolerance `1e-8 * (8 d + max |f_u|)`.
pub fn zero_tolerance(u: &[f64], nl: &Nonlinearity, mu: f64, d: f64) -> f64 {
    let fu = u.iter().map(|&v| nl.du(v, mu).abs()).fold(0.0, f64::max);
    1e-8 * (8.0 * d.abs() + fu).max(1e-300)
}

/// Inertia-based counts on the full square plus eigenpairs for any near-zero eigenvalues.
pub fn unstable_count(u: &Field, nl: &Nonlinearity, mu: f64, d: f64) -> Result<SpectrumReport> {
    let (full, j) = full_jacobian(u, nl, mu, d)?;
    let tau = zero_tolerance(full.values(), nl, mu, d);
    let above = inertia(&j, tau, None)?;
    let below = inertia(&j, -tau, None)?;
    let n = j.nrows();
    let n_unstable = above.positive;
    let n_zero = n - above.positive - below.negative;
    let near_zero_pairs = if n_zero > 0 {
        near_zero_eigenpairs(&j, n_zero, *full.grid())?
            .into_iter()
            .filter(|(l, _)| l.abs() < tau)
            .collect()
    } else {
        Vec::new()
    };
    Ok(SpectrumReport { n_unstable, n_zero, tau, near_zero_pairs, domain: *full.grid() })
}

/// Inertia of the full-square Jacobian at a shift.
pub fn shifted_inertia(u: &Field, nl: &Nonlinearity, mu: f64, d: f64, shift: f64) -> Result<Inertia> {
    let (_, j) = full_jacobian(u, nl, mu, d)?;
    inertia(&j, shift, None)
}

/// The `k` eigenpairs of a symmetric matrix closest to zero by shift-invert subspace iteration.
///
/// Returned in ascending order of `|lambda|`, unit l2 eigenvectors.
pub fn near_zero_eigenpairs(j: &CsrMatrix, k: usize, grid: GridSpec) -> Result<Vec<(f64, Field)>> {
    let n = j.nrows();
    if k == 0 {
        return Ok(Vec::new());
    }
    if n <= 64 {
        let mut all = crate::linalg::dense_eigen(j)?;
        all.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
        return all.into_iter().take(k).map(|(l, v)| Ok((l, Field::new(grid, v)?))).collect();
    }
    let scale = j.max_abs_row_sum().max(1e-300);
    let block = (k + 4).min(n);
    // a tiny offset keeps the factorization regular at an exact zero eigenvalue
    let sigma = 1e-9 * scale;
    let shifted = j.scale_add_diagonal(1.0, &vec![-sigma; n]);
    let lu = SparseLu::from_csr(&shifted)?;
    let mut basis: Vec<Vec<f64>> = (0..block)
        .map(|c| (0..n).map(|i| ((i * (c + 3) + 7 * c) as f64 * 0.618_033_988).sin()).collect())
        .collect();
    orthonormalize(&mut basis);
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::new();
    for it in 0..300 {
        let mut next = Vec::with_capacity(block);
        for v in &basis {
            next.push(lu.solve(v)?);
        }
        orthonormalize(&mut next);
        // Rayleigh-Ritz on J
        let jv: Vec<Vec<f64>> = next.iter().map(|v| j.mul_vec(v)).collect();
        let h = Mat::from_fn(block, block, |a, b| dot(&next[a], &jv[b]));
        let eig = h
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::FactorizationFailure(format!("{e:?}")))?;
        let vals = eig.S().column_vector();
        let vecs = eig.U();
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &b| vals[a].abs().total_cmp(&vals[b].abs()));
        basis = order
            .iter()
            .map(|&c| {
                let mut x = vec![0.0; n];
                for (r, v) in next.iter().enumerate() {
                    crate::linalg::axpy(vecs[(r, c)], v, &mut x);
                }
                x
            })
            .collect();
        pairs = order.iter().zip(&basis).map(|(&c, x)| (vals[c], x.clone())).collect();
        let worst = pairs[..k]
            .iter()
            .map(|(l, x)| {
                let r: Vec<f64> = j.mul_vec(x).iter().zip(x).map(|(a, b)| a - l * b).collect();
                crate::linalg::norm2(&r)
            })
            .fold(0.0, f64::max);
        if worst <= 1e-10 * scale.max(1.0) {
            debug!("shift-invert converged after {it} sweeps");
            break;
        }
        if it == 299 {
            warn!("shift-invert residual {worst:e} after 300 sweeps");
        }
    }
    pairs.truncate(k);
    pairs
        .into_iter()
        .map(|(l, mut v)| {
            normalize(&mut v);
            Ok((l, Field::new(grid, v)?))
        })
        .collect()
}

fn orthonormalize(vs: &mut [Vec<f64>]) {
    for i in 0..vs.len() {
        for _ in 0..2 {
            for k in 0..i {
                let (head, tail) = vs.split_at_mut(i);
                let c = dot(&head[k], &tail[0]);
                crate::linalg::axpy(-c, &head[k], &mut tail[0]);
            }
        }
        normalize(&mut vs[i]);
    }
}

/// Number of eigenvalues changing sign across the fold at `fold_index`.
///
/// Compares inertia at the points nearest to arclength `s_fold -/+ window` (bounded by neighbouring
/// folds) with a count of tracked near-zero eigenvalues.
pub fn crossing_count_at_fold(
    problem: &Problem,
    branch: &Branch,
    fold_index: usize,
    window: f64,
) -> Result<usize> {
    let s = branch.arclength();
    let folds = branch.fold_indices();
    let lo_bound = folds.iter().copied().filter(|&i| i < fold_index).max().map_or(0, |i| i + 1);
    let hi_bound = folds.iter().copied().filter(|&i| i > fold_index).min().map_or(branch.points.len() - 1, |i| i - 1);
    if lo_bound >= fold_index || hi_bound <= fold_index {
        return Err(Error::InvalidArgument("fold has no neighbouring points".into()));
    }
    let sf = s[fold_index];
    let pick = |target: f64, range: std::ops::RangeInclusive<usize>| {
        range.min_by(|&a, &b| (s[a] - target).abs().total_cmp(&(s[b] - target).abs())).unwrap()
    };
    let before = pick(sf - window, lo_bound..=fold_index - 1);
    let after = pick(sf + window, fold_index + 1..=hi_bound);
    let nl = problem.nonlinearity();
    let count = |i: usize| -> Result<(usize, Vec<f64>)> {
        let p = &branch.points[i];
        let (full, j) = full_jacobian(&p.u, nl, p.mu, p.d)?;
        let tau = zero_tolerance(full.values(), nl, p.mu, p.d);
        let pos = inertia(&j, tau, None)?.positive;
        let k = 24.min(j.nrows());
        let vals = near_zero_eigenpairs(&j, k, *full.grid())?.into_iter().map(|(l, _)| l).collect();
        Ok((pos, vals))
    };
    let (pa, la) = count(before)?;
    let (pb, lb) = count(after)?;
    let by_inertia = pa.abs_diff(pb);
    // eigenvalues inside the common tracked window, counted by sign on either side
    let reach = la.last().map_or(0.0, |l| l.abs()).min(lb.last().map_or(0.0, |l| l.abs()));
    let positive_within = |ls: &[f64]| ls.iter().filter(|l| l.abs() < reach && **l > 0.0).count();
    let tracked = positive_within(&la).abs_diff(positive_within(&lb));
    if tracked != by_inertia {
        return Err(Error::AmbiguousCrossing { inertia: by_inertia, tracked });
    }
    Ok(by_inertia)
}

/// Sets `unstable_count` on every point and inserts `BranchPoint` events where the count
/// changes away from a fold.
pub fn tag_stability(problem: &Problem, branch: &mut Branch) -> Result<()> {
    let nl = problem.nonlinearity().clone();
    let counts: Vec<Result<usize>> = std::thread::scope(|scope| {
        let chunks = std::thread::available_parallelism().map_or(1, |n| n.get()).min(branch.points.len().max(1));
        let per = branch.points.len().div_ceil(chunks);
        let handles: Vec<_> = branch
            .points
            .chunks(per.max(1))
            .map(|chunk| {
                let nl = &nl;
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|p| {
                            let (full, j) = full_jacobian(&p.u, nl, p.mu, p.d)?;
                            let tau = zero_tolerance(full.values(), nl, p.mu, p.d);
                            Ok(inertia(&j, tau, None)?.positive)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("stability worker panicked")).collect()
    });
    for (p, c) in branch.points.iter_mut().zip(counts) {
        p.unstable_count = Some(c?);
    }
    let folds = branch.fold_indices();
    let mut extra = Vec::new();
    for i in 1..branch.points.len() {
        let (a, b) = (branch.points[i - 1].unstable_count, branch.points[i].unstable_count);
        if a != b && !folds.iter().any(|&f| f + 3 >= i && f <= i + 2) {
            extra.push(Event { index: i, kind: EventKind::BranchPoint });
        }
    }
    branch.events.extend(extra);
    branch.events.sort_by_key(|e| e.index);
    Ok(())
}

/// Fails with `MissedEvent` if the unstable count changes between consecutive points with no
/// event nearby.
pub fn check_constant_between_events(branch: &Branch) -> Result<()> {
    for i in 1..branch.points.len() {
        let (a, b) = (branch.points[i - 1].unstable_count, branch.points[i].unstable_count);
        if let (Some(a), Some(b)) = (a, b) {
            if a != b && !branch.events.iter().any(|e| e.index + 3 >= i && e.index <= i + 2) {
                return Err(Error::MissedEvent(i - 1, i));
            }
        }
    }
    Ok(())
}

/// Irreducible representations of D4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsotypicTag {
    /// Invariant under all eight elements.
    Trivial,
    /// Even under rotations, odd under reflections.
    Sign1,
    /// Odd under quarter turns and diagonal reflections.
    Sign2,
    /// Odd under quarter turns and axis reflections.
    Sign3,
    TwoDim,
}

impl IsotypicTag {
    pub const ALL: [IsotypicTag; 5] =
        [IsotypicTag::Trivial, IsotypicTag::Sign1, IsotypicTag::Sign2, IsotypicTag::Sign3, IsotypicTag::TwoDim];

    pub fn dimension(self) -> usize {
        if self == IsotypicTag::TwoDim {
            2
        } else {
            1
        }
    }

    pub fn character(self, class: ConjugacyClass) -> f64 {
        use ConjugacyClass::*;
        use IsotypicTag::*;
        match (self, class) {
            (_, Identity) => self.dimension() as f64,
            (Trivial, _) => 1.0,
            (Sign1, QuarterTurn | HalfTurn) => 1.0,
            (Sign1, _) => -1.0,
            (Sign2, HalfTurn | AxisReflection) => 1.0,
            (Sign2, _) => -1.0,
            (Sign3, HalfTurn | DiagonalReflection) => 1.0,
            (Sign3, _) => -1.0,
            (TwoDim, HalfTurn) => -2.0,
            (TwoDim, _) => 0.0,
        }
    }
}

/// `(g v)(s) = v(g^{-1} s)` on a full-square field.
pub fn act(g: GroupElement, v: &Field) -> Field {
    let grid = *v.grid();
    let sym = grid.symmetry();
    let inv = g.inverse();
    Field::from_fn(grid, |s| v.get(inv.apply(s, sym)).expect("square is D4 invariant"))
}

pub fn project(v: &Field, tag: IsotypicTag) -> Field {
    let grid = *v.grid();
    let mut out = vec![0.0; grid.size()];
    let scale = tag.dimension() as f64 / 8.0;
    for g in GroupElement::all() {
        let c = tag.character(g.class());
        if c != 0.0 {
            crate::linalg::axpy(scale * c, act(g, v).values(), &mut out);
        }
    }
    Field::new(grid, out).expect("same grid")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub tag: IsotypicTag,
    /// l2 norms of the projections in the order of `IsotypicTag::ALL`.
    pub norms: [f64; 5],
}

impl Classification {
    pub fn fraction(&self, tag: IsotypicTag) -> f64 {
        let total: f64 = self.norms.iter().map(|n| n * n).sum();
        let i = IsotypicTag::ALL.iter().position(|t| *t == tag).unwrap();
        if total > 0.0 {
            self.norms[i] * self.norms[i] / total
        } else {
            0.0
        }
    }
}

/// Dominant isotypic component of a full-square field (a wedge field is unfolded).
pub fn isotypic_classify(v: &Field) -> Classification {
    let v = match v.grid().kind() {
        GridKind::Wedge => unfold(v).expect("wedge unfolds"),
        GridKind::FullSquare => v.clone(),
    };
    let mut norms = [0.0; 5];
    for (k, tag) in IsotypicTag::ALL.iter().enumerate() {
        norms[k] = crate::linalg::norm2(project(&v, *tag).values());
    }
    let k = (0..5).max_by(|&a, &b| norms[a].total_cmp(&norms[b])).unwrap();
    Classification { tag: IsotypicTag::ALL[k], norms }
}

/// A field supported on a D4 orbit with value `w[i]` at `g_i(site)`, `g_i` in `GroupElement::all` order.
pub fn orbit_pattern(grid: GridSpec, site: (i64, i64), w: [f64; 8]) -> Field {
    let mut f = Field::zeros(grid);
    let sym = grid.symmetry();
    for (g, wi) in GroupElement::all().iter().zip(w) {
        let s = g.apply(site, sym);
        let cur = f.get(s).unwrap_or(0.0);
        f.set(s, cur + wi);
    }
    f
}

/// Symmetry class with a centre; `None` is treated as off-site.
pub fn centre_of(grid: &GridSpec) -> Symmetry {
    match grid.symmetry() {
        Symmetry::OnSite => Symmetry::OnSite,
        _ => Symmetry::OffSite,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::orbit_size;
    use crate::linalg::dense_eigenvalues;
    use crate::model::{anti_continuum_pattern, Family, PatternId};
    use rand::{Rng, SeedableRng};

    fn cq() -> Nonlinearity {
        Nonlinearity::builtin(Family::CubicQuintic).unwrap()
    }

    #[test]
    fn vbar_count_equals_orbit_size_at_d0() {
        let nl = cq();
        for (id, expected) in [
            (PatternId::vbar(3, 2, Symmetry::OffSite), 8),
            (PatternId::vbar(3, 3, Symmetry::OffSite), 4),
            (PatternId::ubar(3, 2, Symmetry::OffSite), 0),
            (PatternId::vbar(4, 1, Symmetry::OnSite), 4),
        ] {
            let u = anti_continuum_pattern(&id, &nl, 0.5, 6).unwrap();
            let r = unstable_count(&u, &nl, 0.5, 0.0).unwrap();
            assert_eq!(r.n_unstable, expected, "{id}");
            assert_eq!(r.n_unstable, if expected == 0 { 0 } else { orbit_size(id.critical_site(), id.symmetry) });
            assert_eq!(r.n_zero, 0);
        }
    }

    #[test]
    fn d0_eigenvalues_are_sitewise_derivatives() {
        let nl = cq();
        let u = anti_continuum_pattern(&PatternId::vbar(2, 1, Symmetry::OffSite), &nl, 0.5, 4).unwrap();
        let (full, j) = full_jacobian(&u, &nl, 0.5, 0.0).unwrap();
        let mut direct: Vec<f64> = full.values().iter().map(|&v| nl.du(v, 0.5)).collect();
        direct.sort_by(f64::total_cmp);
        let dense = dense_eigenvalues(&j).unwrap();
        for (a, b) in direct.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inertia_matches_dense_oracle() {
        let nl = cq();
        let g = GridSpec::wedge(8, Symmetry::OffSite).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for _ in 0..3 {
            let vals: Vec<f64> = (0..g.size()).map(|_| rng.gen_range(0.0..1.4)).collect();
            let u = Field::new(g, vals).unwrap();
            let r = unstable_count(&u, &nl, 0.5, 0.05).unwrap();
            let (_, j) = full_jacobian(&u, &nl, 0.5, 0.05).unwrap();
            let dense = dense_eigenvalues(&j).unwrap();
            assert_eq!(r.n_unstable, dense.iter().filter(|&&l| l > r.tau).count());
        }
    }

    #[test]
    fn shift_invert_matches_dense() {
        let nl = cq();
        let g = GridSpec::full_square(6, Symmetry::OffSite).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let vals: Vec<f64> = (0..g.size()).map(|_| rng.gen_range(0.0..1.4)).collect();
            let u = Field::new(g, vals).unwrap();
        let p = Problem::new(g, nl);
        let j = p.jacobian(u.values(), 0.5, 0.1);
        let mut dense = dense_eigenvalues(&j).unwrap();
        dense.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let pairs = near_zero_eigenpairs(&j, 4, g).unwrap();
        for ((l, v), e) in pairs.iter().zip(&dense) {
            assert!((l - e).abs() < 1e-9, "{l} {e}");
            let r: Vec<f64> = j.mul_vec(v.values()).iter().zip(v.values()).map(|(a, b)| a - l * b).collect();
            assert!(crate::linalg::norm2(&r) < 1e-8);
        }
    }

    #[test]
    fn projections_reconstruct_and_are_orthogonal() {
        for sym in [Symmetry::OffSite, Symmetry::OnSite] {
            let g = GridSpec::full_square(5, sym).unwrap();
            let mut rng = rand::rngs::StdRng::seed_from_u64(5);
            let vals: Vec<f64> = (0..g.size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = Field::new(g, vals).unwrap();
            let parts: Vec<Field> = IsotypicTag::ALL.iter().map(|t| project(&v, *t)).collect();
            let mut sum = vec![0.0; g.size()];
            for p in &parts {
                crate::linalg::axpy(1.0, p.values(), &mut sum);
            }
            let err = sum.iter().zip(v.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12);
            let c = isotypic_classify(&v);
            let sq: f64 = c.norms.iter().map(|n| n * n).sum();
            assert!((sq - dot(v.values(), v.values())).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_examples() {
        let w = GridSpec::wedge(5, Symmetry::OffSite).unwrap();
        let sym = Field::from_fn(w, |(n, m)| (n * 3 + m) as f64);
        let c = isotypic_classify(&sym);
        assert_eq!(c.tag, IsotypicTag::Trivial);
        assert!((c.fraction(IsotypicTag::Trivial) - 1.0).abs() < 1e-14);
        let g = GridSpec::full_square(5, Symmetry::OffSite).unwrap();
        // rotations r^k at even slots, r^k s at odd slots
        let alt = orbit_pattern(g, (3, 2), [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        assert_eq!(isotypic_classify(&alt).tag, IsotypicTag::Sign1);
        let quarter = orbit_pattern(g, (3, 2), [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0]);
        let c = isotypic_classify(&quarter);
        assert!(matches!(c.tag, IsotypicTag::Sign2 | IsotypicTag::Sign3));
        let odd = orbit_pattern(g, (3, 2), [1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        assert_eq!(isotypic_classify(&odd).tag, IsotypicTag::TwoDim);
    }

    #[test]
    fn characters_are_orthonormal() {
        let elems = GroupElement::all();
        for a in IsotypicTag::ALL {
            for b in IsotypicTag::ALL {
                let s: f64 = elems.iter().map(|g| a.character(g.class()) * b.character(g.class())).sum::<f64>() / 8.0;
                assert_eq!(s, if a == b { 1.0 } else { 0.0 });
            }
        }
    }
}
