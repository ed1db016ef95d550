//! Leading-order fold predictions near the window endpoints and the rescaled
//! reduced equations they come from.

use serde::{Deserialize, Serialize};

use crate::continuation::{continue_branch, detect_and_refine_folds, BranchPoint, Direction, Parameter, StepConfig};
use crate::error::{Error, Result};
use crate::lattice::Symmetry;
use crate::model::{anti_continuum_pattern, Family, Nonlinearity, PatternId};
use crate::solver::{NewtonOptions, Problem};

/// How a branch ends near a window endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FoldEnding {
    PitchforkInterior,
    PitchforkCorner,
    #[serde(rename = "FoldEnding_MNearN")]
    FoldEndingMNearN,
    #[serde(rename = "FoldEnding_M1")]
    FoldEndingM1,
    #[serde(rename = "TranscriticalZero_Interior")]
    TranscriticalZeroInterior,
    #[serde(rename = "TranscriticalZero_Corner")]
    TranscriticalZeroCorner,
    #[serde(rename = "TranscriticalOne_MNearN")]
    TranscriticalOneMNearN,
    #[serde(rename = "TranscriticalOne_M1")]
    TranscriticalOneM1,
}

/// Scaling law between `d` and the distance of the fold from the endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scaling {
    /// `mu = nu^2`, `d = nu^3 d~`.
    Pitchfork,
    /// `1 - mu = nu^2`, `d = nu^2 d~`.
    Saddle,
    /// `mu = nu`, `d = nu^2 d~`.
    TranscriticalZero,
    /// `1 - mu = nu`, `d = nu^2 d~`.
    TranscriticalOne,
}

impl FoldEnding {
    pub const ALL: [FoldEnding; 8] = [
        FoldEnding::PitchforkInterior,
        FoldEnding::PitchforkCorner,
        FoldEnding::FoldEndingMNearN,
        FoldEnding::FoldEndingM1,
        FoldEnding::TranscriticalZeroInterior,
        FoldEnding::TranscriticalZeroCorner,
        FoldEnding::TranscriticalOneMNearN,
        FoldEnding::TranscriticalOneM1,
    ];

    pub fn scaling(self) -> Scaling {
        use FoldEnding::*;
        match self {
            PitchforkInterior | PitchforkCorner => Scaling::Pitchfork,
            FoldEndingMNearN | FoldEndingM1 => Scaling::Saddle,
            TranscriticalZeroInterior | TranscriticalZeroCorner => Scaling::TranscriticalZero,
            TranscriticalOneMNearN | TranscriticalOneM1 => Scaling::TranscriticalOne,
        }
    }

    /// True when the fold sits near `mu = 0`.
    pub fn near_zero(self) -> bool {
        matches!(self.scaling(), Scaling::Pitchfork | Scaling::TranscriticalZero)
    }

    pub fn exponent(self) -> f64 {
        match self.scaling() {
            Scaling::Pitchfork => 2.0 / 3.0,
            Scaling::Saddle => 1.0,
            Scaling::TranscriticalZero | Scaling::TranscriticalOne => 0.5,
        }
    }

    /// Coefficient `C` in `|mu - endpoint| ~ C d^p`.
    pub fn coefficient(self) -> f64 {
        use FoldEnding::*;
        match self {
            PitchforkInterior => 3.0,
            PitchforkCorner => 3.0 / 4f64.cbrt(),
            FoldEndingMNearN | FoldEndingM1 => 2.0,
            TranscriticalZeroInterior => 2.0 * 2f64.sqrt(),
            TranscriticalZeroCorner => 2.0,
            TranscriticalOneMNearN => 2.0 * 2f64.sqrt(),
            TranscriticalOneM1 => 2f64.sqrt(),
        }
    }

    /// Rescaled coupling at the fold of the leading-order reduced equation.
    pub fn reduced_fold_d(self) -> f64 {
        use FoldEnding::*;
        match self {
            PitchforkInterior => ReducedSystem::PitchInterior.fold().1,
            // leading order of the corner system: d~ - u + u^3 = 0
            PitchforkCorner => 2.0 / (3.0 * 3f64.sqrt()),
            FoldEndingMNearN => ReducedSystem::SaddleNearN.fold().1,
            FoldEndingM1 => 0.5,
            TranscriticalZeroInterior => ReducedSystem::TransInterior.fold().1,
            // d~ - u + u^2 = 0
            TranscriticalZeroCorner => 0.25,
            TranscriticalOneMNearN => 0.125,
            TranscriticalOneM1 => 0.5,
        }
    }

    /// Start pattern, family and continuation direction that reach this ending first.
    pub fn default_study(self) -> (Family, PatternId, Direction) {
        use FoldEnding::*;
        let off = Symmetry::OffSite;
        match self {
            PitchforkInterior => (Family::CubicQuintic, PatternId::ubar(3, 1, off), Direction::Decreasing),
            PitchforkCorner => (Family::CubicQuintic, PatternId::ubar(1, 1, off), Direction::Decreasing),
            FoldEndingMNearN => (Family::CubicQuintic, PatternId::ubar(3, 2, off), Direction::Increasing),
            FoldEndingM1 => (Family::CubicQuintic, PatternId::ubar(3, 1, off), Direction::Increasing),
            TranscriticalZeroInterior => (Family::QuadraticCubic, PatternId::ubar(3, 1, off), Direction::Decreasing),
            TranscriticalZeroCorner => (Family::QuadraticCubic, PatternId::ubar(1, 1, off), Direction::Decreasing),
            TranscriticalOneMNearN => (Family::CubicLogistic, PatternId::ubar(3, 2, off), Direction::Increasing),
            TranscriticalOneM1 => (Family::CubicLogistic, PatternId::ubar(3, 1, off), Direction::Increasing),
        }
    }
}

/// Leading-order fold location `mu(d)`.
pub fn predict_fold_mu(ending: FoldEnding, d: f64) -> f64 {
    let dev = ending.coefficient() * d.powf(ending.exponent());
    if ending.near_zero() {
        dev
    } else {
        1.0 - dev
    }
}

/// The same prediction rebuilt from the scaling law and the reduced fold.
pub fn scaling_prediction(ending: FoldEnding, d: f64) -> f64 {
    let dt = ending.reduced_fold_d();
    match ending.scaling() {
        Scaling::Pitchfork => (d / dt).powf(2.0 / 3.0),
        Scaling::Saddle => 1.0 - d / dt,
        Scaling::TranscriticalZero => (d / dt).sqrt(),
        Scaling::TranscriticalOne => 1.0 - (d / dt).sqrt(),
    }
}

/// Prediction for a reaction term that is not in normal form at the endpoint.
///
/// Rescales `u`, `mu` and `d` so that the local expansion matches the normalised
/// one (`-mu u + u^3`, `-mu u + u^2`, `1 - mu - u^2`, `m w - w^2` with plateau 1),
/// then maps the leading-order prediction back.
pub fn normalized_prediction(nl: &Nonlinearity, ending: FoldEnding, d: f64) -> Result<f64> {
    let (lo, hi) = nl.window;
    let eps = 1e-12 * (hi - lo);
    match ending.scaling() {
        Scaling::Pitchfork | Scaling::TranscriticalZero => {
            let up = nl.roots(lo + eps)?.1;
            let c = -nl.dumu(0.0, lo);
            let d_eff = if ending.scaling() == Scaling::Pitchfork {
                let b = nl.partial(3, 0, 0.0, lo) / 6.0;
                d * up * b.sqrt()
            } else {
                let a = nl.duu(0.0, lo) / 2.0;
                d * up * a
            };
            if !(c > 0.0 && d_eff > 0.0) {
                return Err(Error::InvalidArgument("reaction term is not of the expected endpoint type".into()));
            }
            Ok(lo + predict_fold_mu(ending, d_eff) / c)
        }
        Scaling::Saddle => {
            let up = nl.roots(hi - eps)?.1;
            let alpha = -nl.dmu(up, hi);
            if !(alpha > 0.0) {
                return Err(Error::InvalidArgument("reaction term is not of the expected endpoint type".into()));
            }
            Ok(hi - (1.0 - predict_fold_mu(ending, d * up / alpha)))
        }
        Scaling::TranscriticalOne => {
            let up = nl.roots(hi - eps)?.1;
            let alpha = nl.dumu(up, hi).abs();
            let beta = -nl.duu(up, hi) / 2.0;
            if !(alpha > 0.0 && beta > 0.0) {
                return Err(Error::InvalidArgument("reaction term is not of the expected endpoint type".into()));
            }
            Ok(hi - (1.0 - predict_fold_mu(ending, d * beta * up / (alpha * alpha))))
        }
    }
}

/// Rescaled reduced equations at `nu = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReducedSystem {
    PitchInterior,
    PitchCornerOffsite,
    PitchCornerOnsite,
    SaddleNearN,
    SaddleM1,
    TransInterior,
}

/// A point of a reduced branch: rescaled unknowns and the rescaled coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedPoint {
    pub u: Vec<f64>,
    pub d: f64,
}

const S3: f64 = 1.732_050_807_568_877_2;

impl ReducedSystem {
    pub const ALL: [ReducedSystem; 6] = [
        ReducedSystem::PitchInterior,
        ReducedSystem::PitchCornerOffsite,
        ReducedSystem::PitchCornerOnsite,
        ReducedSystem::SaddleNearN,
        ReducedSystem::SaddleM1,
        ReducedSystem::TransInterior,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| format!("{r:?}") == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown reduced system {name}")))
    }

    /// Allowed range of the branch parameter `s`.
    pub fn range(self) -> (f64, f64) {
        match self {
            ReducedSystem::PitchInterior | ReducedSystem::TransInterior => (0.0, 1.0),
            ReducedSystem::SaddleNearN => (-1.0, 1.0),
            ReducedSystem::PitchCornerOffsite | ReducedSystem::PitchCornerOnsite => {
                let r = 2.0 * S3.sqrt() / 9.0;
                (-r, r)
            }
            ReducedSystem::SaddleM1 => (-0.5f64.sqrt(), 0.5f64.sqrt()),
        }
    }

    /// Residuals of the reduced equations.
    ///
    /// The corner systems are in the secondary blow-up variables `(v1, v2)`
    /// with `d` standing for the next-order coupling `d0`; the on-site corner
    /// reduces to the same pair. `SaddleM1` uses `(v1, v2)` and `d~0`.
    pub fn residual(self, u: &[f64], d: f64) -> Result<Vec<f64>> {
        let need = match self {
            ReducedSystem::PitchCornerOffsite | ReducedSystem::PitchCornerOnsite | ReducedSystem::SaddleM1 => 2,
            _ => 1,
        };
        if u.len() != need {
            return Err(Error::InvalidArgument(format!("{self:?} has {need} unknowns, got {}", u.len())));
        }
        Ok(match self {
            ReducedSystem::PitchInterior => vec![2.0 * d - u[0] + u[0].powi(3)],
            ReducedSystem::PitchCornerOffsite | ReducedSystem::PitchCornerOnsite => vec![
                d + S3 * u[0] * u[0] - 4.0 / 27.0,
                d + S3 * u[1] * u[1] - 2.0 / 9.0,
            ],
            ReducedSystem::SaddleNearN => vec![-2.0 * d + 1.0 - u[0] * u[0]],
            ReducedSystem::SaddleM1 => vec![
                0.5 - 2.0 * d - u[0] * u[0],
                2f64.sqrt() - 2.0 * d - u[1] * u[1],
            ],
            ReducedSystem::TransInterior => vec![2.0 * d - u[0] + u[0] * u[0]],
        })
    }

    /// Branch through the critical cell, parametrised by its rescaled value `s`.
    pub fn branch(self, s: f64) -> Result<ReducedPoint> {
        let (a, b) = self.range();
        if !(a <= s && s <= b) {
            return Err(Error::InvalidArgument(format!("s={s} outside [{a}, {b}] for {self:?}")));
        }
        Ok(match self {
            ReducedSystem::PitchInterior => ReducedPoint { u: vec![s], d: s * (1.0 - s * s) / 2.0 },
            ReducedSystem::PitchCornerOffsite | ReducedSystem::PitchCornerOnsite => {
                let d0 = 4.0 / 27.0 - S3 * s * s;
                ReducedPoint { u: vec![s, ((2.0 / 9.0 - d0) / S3).sqrt()], d: d0 }
            }
            ReducedSystem::SaddleNearN => ReducedPoint { u: vec![s], d: (1.0 - s * s) / 2.0 },
            ReducedSystem::SaddleM1 => {
                let d0 = (0.5 - s * s) / 2.0;
                ReducedPoint { u: vec![s, (2f64.sqrt() - 2.0 * d0).sqrt()], d: d0 }
            }
            ReducedSystem::TransInterior => ReducedPoint { u: vec![s], d: (s - s * s) / 2.0 },
        })
    }

    /// `(s, d)` at the fold of the critical cell.
    pub fn fold(self) -> (f64, f64) {
        match self {
            ReducedSystem::PitchInterior => (1.0 / S3, 1.0 / (3.0 * S3)),
            ReducedSystem::PitchCornerOffsite | ReducedSystem::PitchCornerOnsite => (0.0, 4.0 / 27.0),
            ReducedSystem::SaddleNearN => (0.0, 0.5),
            ReducedSystem::SaddleM1 => (0.0, 0.25),
            ReducedSystem::TransInterior => (0.5, 0.125),
        }
    }

    /// Derivative of `d` along the branch; zero at the fold.
    pub fn branch_slope(self, s: f64) -> f64 {
        match self {
            ReducedSystem::PitchInterior => (1.0 - 3.0 * s * s) / 2.0,
            ReducedSystem::PitchCornerOffsite | ReducedSystem::PitchCornerOnsite => -2.0 * S3 * s,
            ReducedSystem::SaddleNearN => -s,
            ReducedSystem::SaddleM1 => -s,
            ReducedSystem::TransInterior => (1.0 - 2.0 * s) / 2.0,
        }
    }
}

/// Cases left open at leading order; no prediction is offered for them.
pub fn degenerate_case(ending_near_zero: bool, n: usize, m: usize) -> Option<&'static str> {
    if ending_near_zero && m == n && n >= 3 {
        Some("corner with N >= 3: reduced equations of the corner cells agree to every computed order")
    } else if !ending_near_zero && n >= 3 && 1 < m && m + 1 < n {
        Some("1 < M < N-1: reduced equations differ only at high order in nu")
    } else {
        None
    }
}

/// One row of a fit report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub d: f64,
    pub mu: f64,
    pub deviation: f64,
    pub predicted: f64,
}

/// Power-law fit of fold deviations against `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub ending: FoldEnding,
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub coefficient: f64,
    /// Multiplicative one-sigma spread of the coefficient.
    pub coefficient_factor: f64,
    pub per_d: Vec<FitSample>,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Least-squares line `y = a + b x`; returns `(a, b, se_a, se_b)`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let sse: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let s2 = if x.len() > 2 { sse / (n - 2.0) } else { 0.0 };
    let se_b = (s2 / sxx).sqrt();
    let se_a = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    (a, b, se_a, se_b)
}

/// Runs `fold_finder` for each `d` in parallel and fits `log|mu - endpoint|` against `log d`.
pub fn verify_asymptotics<F>(ending: FoldEnding, d_list: &[f64], fold_finder: F) -> Result<FitReport>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if d_list.len() < 2 || d_list.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument("need at least two positive d values".into()));
    }
    let results: Vec<Result<f64>> = std::thread::scope(|s| {
        let f = &fold_finder;
        let handles: Vec<_> = d_list.iter().map(|&d| s.spawn(move || f(d))).collect();
        handles.into_iter().map(|h| h.join().expect("fold finder panicked")).collect()
    });
    let mut per_d = Vec::with_capacity(d_list.len());
    for (&d, r) in d_list.iter().zip(results) {
        let mu = r?;
        let deviation = if ending.near_zero() { mu } else { 1.0 - mu };
        per_d.push(FitSample { d, mu, deviation, predicted: predict_fold_mu(ending, d) });
    }
    if per_d.iter().any(|p| !(p.deviation > 0.0)) {
        return Err(Error::InvalidArgument("fold lies on the wrong side of the endpoint".into()));
    }
    let x: Vec<f64> = per_d.iter().map(|p| p.d.ln()).collect();
    let y: Vec<f64> = per_d.iter().map(|p| p.deviation.ln()).collect();
    let (a, b, se_a, se_b) = line_fit(&x, &y);
    Ok(FitReport {
        ending,
        exponent: b,
        exponent_stderr: se_b,
        coefficient: a.exp(),
        coefficient_factor: se_a.exp(),
        per_d,
    })
}

/// First refined fold met when continuing `id` in `mu` from the middle of the window at fixed `d`.
///
/// `scale` is the expected distance of the fold from the endpoint the run heads for;
/// steps are capped by its square root once the branch gets within a few multiples.
pub fn junction_fold(
    nl: &Nonlinearity,
    id: &PatternId,
    n_d: usize,
    d: f64,
    direction: Direction,
    scale: f64,
) -> Result<f64> {
    let (lo, hi) = nl.window;
    let mu0 = 0.5 * (lo + hi);
    let u0 = anti_continuum_pattern(id, nl, mu0, n_d)?;
    let problem = Problem::new(*u0.grid(), nl.clone());
    let start = crate::continuation::continue_in_d(&problem, &u0, mu0, d)?;
    let (u, _) = problem.newton_solve(&start.u, mu0, d, &NewtonOptions::default())?;
    let width = hi - lo;
    let near = (10.0 * scale).max(0.03).min(0.4 * width);
    let coarse = StepConfig {
        max_points: 600,
        h_max: 0.02,
        p_min: if direction == Direction::Decreasing { lo + near } else { lo - 0.1 * width },
        p_max: if direction == Direction::Increasing { hi - near } else { hi + 0.1 * width },
        ..Default::default()
    };
    let first = continue_branch(&problem, &BranchPoint::new(u, mu0, d), Parameter::Mu, direction, &coarse)?;
    let folds = detect_and_refine_folds(&problem, &first).unwrap_or_default();
    if let Some(f) = folds.into_iter().find(|f| f.refined) {
        return Ok(f.mu);
    }
    let last = first.points.last().expect("branch has a start point");
    let (u, _) = problem.newton_solve(&last.u, last.mu, d, &NewtonOptions::default())?;
    let fine = StepConfig {
        max_points: 2000,
        h_init: (0.01 * scale.sqrt()).min(1e-3),
        h_max: (0.1 * scale.sqrt()).min(0.02),
        p_min: lo - near,
        p_max: hi + near,
        ..Default::default()
    };
    let branch = continue_branch(&problem, &BranchPoint::new(u, last.mu, d), Parameter::Mu, direction, &fine)?;
    let folds = detect_and_refine_folds(&problem, &branch)?;
    folds
        .into_iter()
        .find(|f| f.refined)
        .map(|f| f.mu)
        .ok_or_else(|| Error::RefinementFailed(format!("no fold found for {id:?} at d={d}")))
}

/// Fold finder for the default study of `ending` on an `n_d` wedge.
pub fn default_fold_finder(ending: FoldEnding, n_d: usize) -> Result<impl Fn(f64) -> Result<f64> + Sync> {
    let (family, id, direction) = ending.default_study();
    let nl = Nonlinearity::builtin(family)?;
    Ok(move |d: f64| {
        let scale = normalized_prediction(&nl, ending, d).map(|m| m.min(1.0 - m)).unwrap_or(0.0);
        let lit = predict_fold_mu(ending, d);
        junction_fold(&nl, &id, n_d, d, direction, scale.max(lit.min(1.0 - lit)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spot_values() {
        assert!((predict_fold_mu(FoldEnding::PitchforkInterior, 1e-3) - 0.03).abs() < 1e-15);
        assert!((predict_fold_mu(FoldEnding::FoldEndingMNearN, 1e-3) - 0.998).abs() < 1e-15);
        assert!((predict_fold_mu(FoldEnding::TranscriticalZeroInterior, 1e-4) - 0.028284271247461905).abs() < 1e-15);
    }

    #[test]
    fn scaling_identities() {
        for e in FoldEnding::ALL {
            for d in [1e-6, 1e-5, 1e-4, 1e-3, 1e-2] {
                let a = predict_fold_mu(e, d);
                let b = scaling_prediction(e, d);
                assert!((a - b).abs() <= 1e-14, "{e:?} {d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn reduced_folds() {
        let (s, d) = ReducedSystem::PitchInterior.fold();
        assert!((s - 1.0 / 3f64.sqrt()).abs() < 1e-15 && (d - 0.19245008972987526).abs() < 1e-15);
        assert_eq!(ReducedSystem::SaddleNearN.fold(), (0.0, 0.5));
        assert_eq!(ReducedSystem::TransInterior.fold(), (0.5, 0.125));
        assert!((ReducedSystem::PitchCornerOffsite.fold().1 - 4.0 / 27.0).abs() < 1e-16);
        for r in ReducedSystem::ALL {
            let (s, d) = r.fold();
            assert!(r.branch_slope(s).abs() < 1e-15, "{r:?}");
            let p = r.branch(s).unwrap();
            assert!((p.d - d).abs() < 1e-15);
        }
    }

    #[test]
    fn normal_form_is_identity_for_normalised_terms() {
        let cl = Nonlinearity::builtin(Family::CubicLogistic).unwrap();
        for e in [FoldEnding::TranscriticalOneMNearN, FoldEnding::TranscriticalOneM1, FoldEnding::TranscriticalZeroInterior] {
            let a = normalized_prediction(&cl, e, 1e-4).unwrap();
            assert!((a - predict_fold_mu(e, 1e-4)).abs() < 1e-12, "{e:?}");
        }
        let cq = Nonlinearity::builtin(Family::CubicQuintic).unwrap();
        let a = normalized_prediction(&cq, FoldEnding::FoldEndingMNearN, 1e-3).unwrap();
        assert!((a - 0.998).abs() < 1e-12);
        let b = normalized_prediction(&cq, FoldEnding::PitchforkInterior, 1e-3).unwrap();
        assert!((b - 3.0 * (2e-3f64).powf(2.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn fit_recovers_power_law() {
        let r = verify_asymptotics(FoldEnding::PitchforkInterior, &[1e-5, 1e-4, 1e-3], |d| {
            Ok(predict_fold_mu(FoldEnding::PitchforkInterior, d))
        })
        .unwrap();
        assert!((r.exponent - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.coefficient - 3.0).abs() < 1e-10);
        assert!(r.to_json().unwrap().contains("\"per_d\""));
    }

    #[test]
    fn unknown_reduced_id() {
        assert!(ReducedSystem::parse("Nope").is_err());
        assert_eq!(ReducedSystem::parse("SaddleM1").unwrap(), ReducedSystem::SaddleM1);
    }

    #[test]
    fn right_fold_of_m_near_n() {
        let f = default_fold_finder(FoldEnding::FoldEndingMNearN, 8).unwrap();
        let d = 1e-3;
        let mu = f(d).unwrap();
        assert!((mu - (1.0 - 2.0 * d)).abs() <= 5.0 * d.powf(1.5), "{mu}");
    }

    proptest! {
        #[test]
        fn reduced_residuals_vanish(t in 0.0f64..1.0) {
            for r in ReducedSystem::ALL {
                let (a, b) = r.range();
                let p = r.branch(a + t * (b - a)).unwrap();
                for v in r.residual(&p.u, p.d).unwrap() {
                    prop_assert!(v.abs() <= 1e-14, "{:?} {}", r, v);
                }
            }
        }

        #[test]
        fn predictions_monotone(d in 1e-8f64..0.0099) {
            for e in FoldEnding::ALL {
                let a = predict_fold_mu(e, d);
                let b = predict_fold_mu(e, d * 1.01);
                if e.near_zero() { prop_assert!(b > a) } else { prop_assert!(b < a) }
            }
        }
    }
}
