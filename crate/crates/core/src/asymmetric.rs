//! Branches of asymmetric patterns bifurcating near a fold of a symmetric branch.

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::codim2::rightmost_fold;
use crate::continuation::{
    continue_both_ways, continue_branch, detect_and_refine_folds, switch_branch, Branch, BranchPoint, Direction,
    FoldPoint, Parameter, StepConfig,
};
use crate::error::{Error, Result};
use crate::lattice::{orbit_size, unfold, Field, GridSpec, GroupElement, Site, Symmetry};
use crate::linalg::{dot, inf_norm, norm2};
use crate::model::{anti_continuum_pattern, Nonlinearity, PatternId};
use crate::solver::Problem;
use crate::spectral::{act, near_zero_eigenpairs, orbit_pattern, project, IsotypicTag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsymConfig {
    /// `N` of the `ū(N,1)` branch whose rightmost fold seeds the study.
    pub n: usize,
    pub n_d: usize,
    pub d: f64,
    pub symmetry: Symmetry,
    /// Offset along the normalised direction (max-norm 1) used for switching.
    pub eps: f64,
    pub max_points: usize,
    pub primary_points: usize,
    /// Asymmetry (max-norm) below which a branch counts as back on the symmetric branch.
    pub reconnect_tol: f64,
    /// Max-norm distance to a primary fold state for a reconnection to be attributed to that fold.
    pub fold_match_tol: f64,
}

impl Default for AsymConfig {
    fn default() -> Self {
        Self { n: 3, n_d: 8, d: 1e-3, symmetry: Symmetry::OffSite, eps: 0.05, max_points: 8000, primary_points: 1500, reconnect_tol: 0.02, fold_match_tol: 0.1 }
    }
}

/// Where an asymmetric branch rejoins the symmetric one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconnection {
    /// Index on the asymmetric branch where the asymmetry has its minimum.
    pub index: usize,
    pub mu: f64,
    /// Index into the primary fold list of the nearest fold.
    pub fold: usize,
    pub fold_mu: f64,
    /// Max-norm distance from the reconnection state to that fold state.
    pub distance: f64,
}

#[derive(Clone, Debug)]
pub struct AsymBranch {
    pub tag: IsotypicTag,
    pub label: String,
    pub eigenvalue: f64,
    pub direction: Field,
    pub branch: Branch,
    pub reconnection: Option<Reconnection>,
}

#[derive(Clone, Debug)]
pub struct AsymStudy {
    pub primary: Branch,
    pub primary_folds: Vec<FoldPoint>,
    pub origin_fold: usize,
    pub branches: Vec<AsymBranch>,
}

impl AsymStudy {
    /// Distinct primary folds reached by the asymmetric branches.
    pub fn distinct_reconnections(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.branches.iter().filter_map(|b| b.reconnection.as_ref().map(|r| r.fold)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "origin_fold": self.origin_fold,
            "primary_folds": self.primary_folds.iter().map(|f| f.mu).collect::<Vec<_>>(),
            "branches": self.branches.iter().map(|b| serde_json::json!({
                "label": b.label,
                "tag": format!("{:?}", b.tag),
                "eigenvalue": b.eigenvalue,
                "points": b.branch.points.len(),
                "reconnection": b.reconnection,
            })).collect::<Vec<_>>(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.primary.write_csv(&dir.join("primary.csv"))?;
        for b in &self.branches {
            b.branch.write_csv(&dir.join(format!("asym_{}.csv", b.label)))?;
        }
        std::fs::write(dir.join("asym_summary.json"), serde_json::to_string_pretty(&self.summary_json())?)?;
        Ok(())
    }
}

fn scaled_max(v: &Field) -> Field {
    let m = v.max_abs().max(f64::MIN_POSITIVE);
    Field::new(*v.grid(), v.values().iter().map(|x| x / m).collect()).expect("same grid")
}

/// Sign patterns on the D4 orbit of `site`: the three non-trivial characters, then one
/// representative per symmetry class of patterns lying entirely in the two-dimensional component.
pub fn sign_patterns(grid: GridSpec, site: Site) -> Vec<(IsotypicTag, String, Field)> {
    let elems = GroupElement::all();
    let mut out = Vec::new();
    for tag in [IsotypicTag::Sign1, IsotypicTag::Sign2, IsotypicTag::Sign3] {
        let w: [f64; 8] = std::array::from_fn(|i| tag.character(elems[i].class()));
        out.push((tag, format!("{tag:?}"), orbit_pattern(grid, site, w)));
    }
    let one_dim = [IsotypicTag::Trivial, IsotypicTag::Sign1, IsotypicTag::Sign2, IsotypicTag::Sign3];
    let mut seen: Vec<Vec<f64>> = Vec::new();
    let mut k = 0;
    for bits in 0u32..256 {
        let w: [f64; 8] = std::array::from_fn(|i| if bits >> i & 1 == 1 { -1.0 } else { 1.0 });
        let f = orbit_pattern(grid, site, w);
        if one_dim.iter().any(|t| norm2(project(&f, *t).values()) > 1e-9) {
            continue;
        }
        if seen.iter().any(|s| s.as_slice() == f.values()) {
            continue;
        }
        for g in elems {
            let gf = act(g, &f);
            seen.push(gf.values().to_vec());
            seen.push(gf.values().iter().map(|v| -v).collect());
        }
        out.push((IsotypicTag::TwoDim, format!("TwoDim{k}"), f));
        k += 1;
    }
    out
}

/// Switching directions: each sign pattern projected onto the near-null space of the
/// unfolded fold state. The third entry is the Rayleigh quotient of the direction.
pub fn switching_directions(
    full: &Problem,
    u: &Field,
    mu: f64,
    d: f64,
    site: Site,
) -> Result<Vec<(IsotypicTag, String, f64, Field)>> {
    let j = full.jacobian(u.values(), mu, d);
    let size = orbit_size(site, u.grid().symmetry());
    let pairs = near_zero_eigenpairs(&j, size, *u.grid())?;
    let mut out = Vec::new();
    for (tag, label, w) in sign_patterns(*u.grid(), site) {
        let mut psi = vec![0.0; w.values().len()];
        for (_, phi) in &pairs {
            let c = dot(phi.values(), w.values()) / dot(phi.values(), phi.values());
            crate::linalg::axpy(c, phi.values(), &mut psi);
        }
        let psi = scaled_max(&Field::new(*u.grid(), psi)?);
        let rq = dot(psi.values(), &j.mul_vec(psi.values())) / dot(psi.values(), psi.values());
        out.push((tag, label, rq, psi));
    }
    Ok(out)
}

/// Max-norm of the part of `u` outside the trivial component.
pub fn asymmetry(u: &Field) -> f64 {
    let sym = project(u, IsotypicTag::Trivial);
    u.values().iter().zip(sym.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn nearest_fold(u: &Field, folds: &[Field]) -> Option<(usize, f64)> {
    folds
        .iter()
        .enumerate()
        .map(|(i, f)| (i, inf_norm(&u.values().iter().zip(f.values()).map(|(a, b)| a - b).collect::<Vec<_>>())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// First local minimum of the asymmetry below `tol` once it has exceeded `RISE`, matched to the
/// nearest fold other than `exclude`.
fn find_reconnection(branch: &Branch, folds: &[Field], fold_mu: &[f64], cfg: &AsymConfig, exclude: usize) -> Option<Reconnection> {
    const RISE: f64 = 0.2;
    let a: Vec<f64> = branch.points.iter().map(|p| asymmetry(&p.u)).collect();
    let left = a.iter().position(|&x| x > RISE)?;
    (left + 1..a.len().saturating_sub(1))
        .filter(|&k| a[k] < cfg.reconnect_tol && a[k] <= a[k - 1] && a[k] <= a[k + 1])
        .filter_map(|k| {
            let (fold, distance) = nearest_fold(&branch.points[k].u, folds)?;
            (fold != exclude && distance < cfg.fold_match_tol).then(|| Reconnection { index: k, mu: branch.points[k].mu, fold, fold_mu: fold_mu[fold], distance })
        })
        .next()
}

/// Runs the full study: primary branch, seeding fold, seven switches, continuation and reconnection.
pub fn asymmetric_study(nl: &Nonlinearity, cfg: &AsymConfig) -> Result<AsymStudy> {
    if cfg.n > cfg.n_d {
        return Err(Error::PatternExceedsDomain { n: cfg.n, n_d: cfg.n_d });
    }
    let grid = GridSpec::wedge(cfg.n_d, cfg.symmetry)?;
    let wedge = Problem::new(grid, nl.clone());
    let origin = rightmost_fold(&wedge, cfg.n, cfg.d)?;
    let pcfg = StepConfig { max_points: cfg.primary_points, h_max: 0.02, p_min: -0.05, p_max: 1.05, ..Default::default() };
    let id = PatternId::ubar(cfg.n, 1, cfg.symmetry);
    let u0 = anti_continuum_pattern(&id, nl, 0.5, cfg.n_d)?;
    let start = crate::continuation::continue_in_d(&wedge, &u0, 0.5, cfg.d)?;
    let primary = continue_both_ways(&wedge, &start, Parameter::Mu, &pcfg)?;
    let primary_folds: Vec<FoldPoint> =
        detect_and_refine_folds(&wedge, &primary)?.into_iter().filter(|f| f.refined).collect();
    let fold_states: Vec<Field> = primary_folds.iter().map(|f| unfold(&f.u)).collect::<Result<_>>()?;
    let fold_mu: Vec<f64> = primary_folds.iter().map(|f| f.mu).collect();
    let u_origin = unfold(&origin.u)?;
    let origin_fold = nearest_fold(&u_origin, &fold_states)
        .map(|x| x.0)
        .ok_or_else(|| Error::RefinementFailed("primary branch has no folds".into()))?;

    let full = wedge.full();
    let site = id.critical_site();
    let dirs = switching_directions(&full, &u_origin, origin.mu, origin.d, site)?;
    info!("{} switching directions", dirs.len());
    let seed = BranchPoint::new(u_origin, origin.mu, origin.d);
    const CHUNK: usize = 200;
    let scfg = StepConfig { max_points: cfg.max_points, h_max: 0.02, p_min: -0.05, p_max: 1.05, ..Default::default() };
    let results: Vec<Result<AsymBranch>> = std::thread::scope(|s| {
        let handles: Vec<_> = dirs
            .into_iter()
            .map(|(tag, label, l, psi)| {
                let (full, seed, scfg, fold_states, fold_mu) = (&full, &seed, &scfg, &fold_states, &fold_mu);
                s.spawn(move || -> Result<AsymBranch> {
                    let p = switch_branch(full, seed, &psi, cfg.eps)?;
                    let chunk = StepConfig { max_points: CHUNK, ..scfg.clone() };
                    let mut branch = continue_branch(full, &p, Parameter::Mu, Direction::Decreasing, &chunk)?;
                    let mut reconnection = find_reconnection(&branch, fold_states, fold_mu, cfg, origin_fold);
                    let mut full_chunk = branch.points.len() == CHUNK;
                    while reconnection.is_none() && full_chunk && branch.points.len() < cfg.max_points {
                        let last = branch.points.last().expect("non-empty").clone();
                        let dir = if last.tangent.last().is_some_and(|t| *t < 0.0) { Direction::Decreasing } else { Direction::Increasing };
                        let more = continue_branch(full, &last, Parameter::Mu, dir, &chunk)?;
                        full_chunk = more.points.len() == CHUNK;
                        branch.points.extend(more.points.into_iter().skip(1));
                        reconnection = find_reconnection(&branch, fold_states, fold_mu, cfg, origin_fold);
                    }
                    info!("{label}: {} points, reconnection {:?}", branch.points.len(), reconnection);
                    Ok(AsymBranch { tag, label, eigenvalue: l, direction: psi, branch, reconnection })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("branch worker panicked")).collect()
    });
    let branches = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(AsymStudy { primary, primary_folds, origin_fold, branches })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_patterns_split_three_plus_four() {
        let grid = GridSpec::full_square(6, Symmetry::OffSite).unwrap();
        let pats = sign_patterns(grid, (3, 1));
        assert_eq!(pats.len(), 7);
        assert_eq!(pats.iter().filter(|p| p.0 == IsotypicTag::TwoDim).count(), 4);
        for (tag, _, f) in &pats {
            let own = norm2(project(f, *tag).values());
            assert!((own - norm2(f.values())).abs() < 1e-12, "{tag:?}");
            assert_eq!(f.values().iter().filter(|v| v.abs() > 0.5).count(), 8);
        }
    }

    #[test]
    fn two_dim_patterns_are_inequivalent() {
        let grid = GridSpec::full_square(6, Symmetry::OffSite).unwrap();
        let pats: Vec<Field> = sign_patterns(grid, (3, 1)).into_iter().skip(3).map(|p| p.2).collect();
        for i in 0..pats.len() {
            for j in i + 1..pats.len() {
                for g in GroupElement::all() {
                    let gi = act(g, &pats[i]);
                    assert_ne!(gi.values(), pats[j].values());
                    let neg: Vec<f64> = gi.values().iter().map(|v| -v).collect();
                    assert_ne!(neg.as_slice(), pats[j].values());
                }
            }
        }
    }

    #[test]
    fn asymmetry_vanishes_on_symmetric_fields() {
        let grid = GridSpec::full_square(5, Symmetry::OffSite).unwrap();
        let sym = Field::from_fn(grid, |(n, m)| 1.0 / (1.0 + ((2 * n - 1).pow(2) + (2 * m - 1).pow(2)) as f64));
        assert!(asymmetry(&sym) < 1e-14);
        let pats = sign_patterns(grid, (2, 1));
        assert!((asymmetry(&pats[0].2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oversize_pattern_is_rejected() {
        let nl = Nonlinearity::builtin(crate::model::Family::CubicQuintic).unwrap();
        let cfg = AsymConfig { n: 9, n_d: 8, ..Default::default() };
        assert!(matches!(asymmetric_study(&nl, &cfg), Err(Error::PatternExceedsDomain { .. })));
    }
}
