//! Snaking runs: continuation in mu from an anti-continuum pattern, stability tagging, fold
//! refinement and crossing counts per fold.

use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::continuation::{continue_both_ways, continue_in_d, detect_and_refine_folds, Branch, Parameter, StepConfig};
use crate::error::{Error, Result};
use crate::lattice::{orbit_size, GridSpec, Site};
use crate::model::{anti_continuum_pattern, Nonlinearity, PatternId};
use crate::solver::Problem;
use crate::spectral::{crossing_count_at_fold, tag_stability};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnakeConfig {
    pub start: PatternId,
    pub n_d: usize,
    pub d: f64,
    /// mu at which the anti-continuum pattern is continued to `d`.
    pub mu_start: f64,
    pub step: StepConfig,
    /// Arclength offset on either side of a fold for crossing counts.
    pub crossing_window: f64,
    pub stability: bool,
}

impl Default for SnakeConfig {
    fn default() -> Self {
        Self {
            start: PatternId::ubar(1, 1, crate::lattice::Symmetry::OffSite),
            n_d: 10,
            d: 1e-3,
            mu_start: 0.5,
            step: StepConfig { max_points: 3000, h_max: 0.02, p_min: -0.05, p_max: 1.05, ..Default::default() },
            crossing_window: 0.01,
            stability: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub index: usize,
    pub mu: f64,
    pub refined: bool,
    /// Wedge site carrying the largest null-vector entry.
    pub critical_site: Site,
    pub orbit_size: usize,
    pub crossing_count: Option<usize>,
    pub error: Option<String>,
}

impl FoldRecord {
    pub fn matches_orbit(&self) -> bool {
        self.crossing_count == Some(self.orbit_size)
    }
}

#[derive(Clone, Debug)]
pub struct SnakeRun {
    pub branch: Branch,
    pub folds: Vec<FoldRecord>,
}

impl SnakeRun {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.branch.write_csv(&dir.join("branch.csv"))?;
        let profiles = dir.join("profiles");
        std::fs::create_dir_all(&profiles)?;
        self.branch.write_event_profiles(&profiles, "event")?;
        std::fs::write(dir.join("folds.json"), serde_json::to_string_pretty(&self.folds)?)?;
        Ok(())
    }
}

/// Continues the start pattern in both mu directions at fixed `d`.
pub fn snake(nl: &Nonlinearity, cfg: &SnakeConfig) -> Result<SnakeRun> {
    if cfg.start.n > cfg.n_d {
        return Err(Error::PatternExceedsDomain { n: cfg.start.n, n_d: cfg.n_d });
    }
    let grid = GridSpec::wedge(cfg.n_d, cfg.start.symmetry)?;
    let problem = Problem::new(grid, nl.clone());
    let u0 = anti_continuum_pattern(&cfg.start, nl, cfg.mu_start, cfg.n_d)?;
    let start = continue_in_d(&problem, &u0, cfg.mu_start, cfg.d)?;
    let mut branch = continue_both_ways(&problem, &start, Parameter::Mu, &cfg.step)?;
    info!("branch with {} points", branch.points.len());
    if cfg.stability {
        tag_stability(&problem, &mut branch)?;
    }
    let folds = if branch.points.len() < 3 { Vec::new() } else { detect_and_refine_folds(&problem, &branch)? };
    let records = folds
        .iter()
        .map(|f| {
            let k = f
                .phi
                .values()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map_or(0, |x| x.0);
            let site = grid.site(k);
            let (crossing_count, error) = if cfg.stability {
                match crossing_count_at_fold(&problem, &branch, f.index, cfg.crossing_window) {
                    Ok(c) => (Some(c), None),
                    Err(e) => {
                        warn!("fold at index {}: {e}", f.index);
                        (None, Some(e.to_string()))
                    }
                }
            } else {
                (None, None)
            };
            FoldRecord {
                index: f.index,
                mu: f.mu,
                refined: f.refined,
                critical_site: site,
                orbit_size: orbit_size(site, cfg.start.symmetry),
                crossing_count,
                error,
            }
        })
        .collect();
    Ok(SnakeRun { branch, folds: records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Symmetry;
    use crate::model::Family;

    #[test]
    fn first_folds_of_the_snake_match_orbit_sizes() {
        let nl = Nonlinearity::builtin(Family::CubicQuintic).unwrap();
        let cfg = SnakeConfig {
            n_d: 5,
            step: StepConfig { max_points: 200, h_max: 0.02, p_min: -0.05, p_max: 1.05, ..Default::default() },
            ..Default::default()
        };
        let run = snake(&nl, &cfg).unwrap();
        let right = run.folds.iter().find(|f| f.critical_site == (1, 1) && f.mu > 0.9).unwrap();
        assert!((right.mu - 0.998).abs() < 1e-3);
        assert_eq!(right.orbit_size, 4);
        assert!(right.matches_orbit());
        let next = run.folds.iter().find(|f| f.critical_site == (2, 1)).unwrap();
        assert_eq!(next.orbit_size, 8);
        assert!(next.matches_orbit());
    }

    #[test]
    fn oversize_start_is_rejected() {
        let nl = Nonlinearity::builtin(Family::CubicQuintic).unwrap();
        let cfg = SnakeConfig { start: PatternId::ubar(6, 1, Symmetry::OffSite), n_d: 5, ..Default::default() };
        assert!(matches!(snake(&nl, &cfg), Err(Error::PatternExceedsDomain { .. })));
    }
}
