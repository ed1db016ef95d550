//! Bistable nonlinearities, anti-continuum patterns and the d = 0 skeleton.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Field, GridSpec, Site, Symmetry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    CubicQuintic,
    QuadraticCubic,
    CubicLogistic,
    Polynomial,
}

/// Bifurcation type of the trivial or fold structure at a window endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Pitchfork,
    Fold,
    Transcritical,
}

/// One term `c * mu^j * u^k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub mu_power: u32,
    pub u_power: u32,
    pub coefficient: f64,
}

/// A reaction term `f(u, mu) = sum c_jk mu^j u^k` with a bistable window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub family: Family,
    pub terms: Vec<Term>,
    pub window: (f64, f64),
    pub endpoints: (Endpoint, Endpoint),
    /// Upper bracket for numerical root search.
    pub u_max: f64,
}

fn falling(k: u32, r: u32) -> f64 {
    (0..r).map(|i| (k - i) as f64).product()
}

fn term(j: u32, k: u32, c: f64) -> Term {
    Term { mu_power: j, u_power: k, coefficient: c }
}

impl Nonlinearity {
    pub fn builtin(family: Family) -> Result<Self> {
        let (terms, endpoints) = match family {
            Family::CubicQuintic => (
                vec![term(1, 1, -1.0), term(0, 3, 2.0), term(0, 5, -1.0)],
                (Endpoint::Pitchfork, Endpoint::Fold),
            ),
            Family::QuadraticCubic => (
                vec![term(1, 1, -1.0), term(0, 2, 2.0), term(0, 3, -1.0)],
                (Endpoint::Transcritical, Endpoint::Fold),
            ),
            Family::CubicLogistic => (
                vec![term(1, 1, -1.0), term(0, 2, 1.0), term(1, 2, 1.0), term(0, 3, -1.0)],
                (Endpoint::Transcritical, Endpoint::Transcritical),
            ),
            Family::Polynomial => {
                return Err(Error::InvalidArgument("polynomial family needs coefficients".into()))
            }
        };
        Ok(Self { family, terms, window: (0.0, 1.0), endpoints, u_max: 4.0 })
    }

    /// A custom polynomial; endpoint classes are inferred from the roots near each window end.
    pub fn polynomial(terms: Vec<Term>, window: (f64, f64), u_max: f64) -> Result<Self> {
        if !(window.0 < window.1) || !(u_max > 0.0) || terms.is_empty() {
            return Err(Error::InvalidArgument("polynomial needs terms, lo < hi and u_max > 0".into()));
        }
        let mut nl = Self {
            family: Family::Polynomial,
            terms,
            window,
            endpoints: (Endpoint::Fold, Endpoint::Fold),
            u_max,
        };
        nl.endpoints = (nl.classify_endpoint(window.0), nl.classify_endpoint(window.1));
        Ok(nl)
    }

    fn classify_endpoint(&self, mu: f64) -> Endpoint {
        let width = self.window.1 - self.window.0;
        let inward = if mu == self.window.0 { 1.0 } else { -1.0 };
        let (lo, hi) = self.roots_numeric(mu + inward * 1e-3 * width);
        if hi > 0.0 && lo / hi > 0.5 {
            let outside = self.positive_roots(mu - inward * 1e-3 * width);
            if outside.len() >= 2 {
                Endpoint::Transcritical
            } else {
                Endpoint::Fold
            }
        } else if self.partial(2, 0, 0.0, mu).abs() < 1e-12 {
            Endpoint::Pitchfork
        } else {
            Endpoint::Transcritical
        }
    }

    /// Mixed partial derivative `d^a/du^a d^b/dmu^b f`.
    pub fn partial(&self, a: u32, b: u32, u: f64, mu: f64) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.u_power >= a && t.mu_power >= b)
            .map(|t| {
                t.coefficient
                    * falling(t.u_power, a)
                    * falling(t.mu_power, b)
                    * u.powi((t.u_power - a) as i32)
                    * mu.powi((t.mu_power - b) as i32)
            })
            .sum()
    }

    pub fn eval(&self, u: f64, mu: f64) -> f64 {
        self.partial(0, 0, u, mu)
    }

    pub fn du(&self, u: f64, mu: f64) -> f64 {
        self.partial(1, 0, u, mu)
    }

    pub fn dmu(&self, u: f64, mu: f64) -> f64 {
        self.partial(0, 1, u, mu)
    }

    pub fn duu(&self, u: f64, mu: f64) -> f64 {
        self.partial(2, 0, u, mu)
    }

    pub fn dumu(&self, u: f64, mu: f64) -> f64 {
        self.partial(1, 1, u, mu)
    }

    pub fn in_window(&self, mu: f64) -> bool {
        self.window.0 <= mu && mu <= self.window.1
    }

    /// The roots `(u_-, u_+)` on the closed window.
    pub fn roots(&self, mu: f64) -> Result<(f64, f64)> {
        if !self.in_window(mu) {
            return Err(Error::InvalidArgument(format!("mu={mu} outside the bistable window")));
        }
        Ok(match self.family {
            Family::CubicQuintic => {
                let s = (1.0 - mu).sqrt();
                ((mu / (1.0 + s)).sqrt(), (1.0 + s).sqrt())
            }
            Family::QuadraticCubic => {
                let s = (1.0 - mu).sqrt();
                (mu / (1.0 + s), 1.0 + s)
            }
            Family::CubicLogistic => (mu, 1.0),
            Family::Polynomial => self.roots_numeric(mu),
        })
    }

    /// Sign-change roots on `(0, u_max]`, ascending.
    fn positive_roots(&self, mu: f64) -> Vec<f64> {
        const SAMPLES: usize = 4000;
        let h = self.u_max / SAMPLES as f64;
        let mut roots = Vec::new();
        let mut a = h * 1e-3;
        let mut fa = self.eval(a, mu);
        for k in 1..=SAMPLES {
            let b = k as f64 * h;
            let fb = self.eval(b, mu);
            if fb == 0.0 {
                roots.push(b);
            } else if fa * fb < 0.0 {
                let (mut l, mut r, mut fl) = (a, b, fa);
                while r - l > 4.0 * f64::EPSILON * r {
                    let c = 0.5 * (l + r);
                    let fc = self.eval(c, mu);
                    if fc == 0.0 {
                        l = c;
                        r = c;
                    } else if fl * fc < 0.0 {
                        r = c;
                    } else {
                        l = c;
                        fl = fc;
                    }
                }
                roots.push(0.5 * (l + r));
            }
            a = b;
            fa = fb;
        }
        roots
    }

    /// Numerical `(u_-, u_+)`: the largest stable root and the largest unstable root below it.
    fn roots_numeric(&self, mu: f64) -> (f64, f64) {
        let roots = self.positive_roots(mu);
        match roots.len() {
            0 => (0.0, 0.0),
            1 => {
                let r = roots[0];
                if self.du(r, mu) < 0.0 {
                    (0.0, r)
                } else {
                    (r, r)
                }
            }
            _ => {
                let p = roots.iter().rposition(|&r| self.du(r, mu) < 0.0).unwrap_or(roots.len() - 1);
                let plus = roots[p];
                let minus = roots[..p].iter().rev().find(|&&r| self.du(r, mu) > 0.0).copied().unwrap_or(0.0);
                (minus, plus)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    UBar,
    VBar,
}

/// Identifies a d = 0 pattern: filled triangle up to row `n - 1`, then `m` cells of row `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternId {
    pub n: usize,
    pub m: usize,
    pub variant: Variant,
    pub symmetry: Symmetry,
}

impl PatternId {
    pub fn new(n: usize, m: usize, variant: Variant, symmetry: Symmetry) -> Result<Self> {
        if n == 0 || m == 0 || m > n {
            return Err(Error::InvalidArgument(format!("pattern ({n},{m}) needs 1 <= M <= N")));
        }
        if symmetry == Symmetry::None {
            return Err(Error::InvalidArgument("patterns need off-site or on-site symmetry".into()));
        }
        Ok(Self { n, m, variant, symmetry })
    }

    pub fn ubar(n: usize, m: usize, symmetry: Symmetry) -> Self {
        Self::new(n, m, Variant::UBar, symmetry).expect("valid pattern indices")
    }

    pub fn vbar(n: usize, m: usize, symmetry: Symmetry) -> Self {
        Self::new(n, m, Variant::VBar, symmetry).expect("valid pattern indices")
    }

    /// The cell holding `u_-` for v-patterns, and the last filled cell for u-patterns.
    pub fn critical_site(&self) -> Site {
        (self.n as i64, self.m as i64)
    }
}

impl std::fmt::Display for PatternId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = match self.variant {
            Variant::UBar => "u",
            Variant::VBar => "v",
        };
        write!(f, "{v}({},{})", self.n, self.m)
    }
}

/// The d = 0 pattern on the wedge of half-width `n_d`.
pub fn anti_continuum_pattern(id: &PatternId, nl: &Nonlinearity, mu: f64, n_d: usize) -> Result<Field> {
    if id.n > n_d {
        return Err(Error::PatternExceedsDomain { n: id.n, n_d });
    }
    let (um, up) = nl.roots(mu)?;
    let grid = GridSpec::wedge(n_d, id.symmetry)?;
    let (nn, mm) = (id.n as i64, id.m as i64);
    Ok(Field::from_fn(grid, |(n, m)| {
        if n < nn || (n == nn && m < mm) {
            up
        } else if n == nn && m == mm {
            match id.variant {
                Variant::UBar => up,
                Variant::VBar => um,
            }
        } else {
            0.0
        }
    }))
}

/// Where two consecutive segments of the skeleton meet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Junction {
    pub from: PatternId,
    pub to: PatternId,
    pub mu: f64,
    pub exceptional: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaPath {
    /// Segments in traversal order, each with its `(mu_start, mu_end)`.
    pub segments: Vec<(PatternId, f64, f64)>,
    pub junctions: Vec<Junction>,
    /// Exceptional `(pattern, mu)` pairs with `N <= N_*`.
    pub exceptional: Vec<(PatternId, f64)>,
}

/// True when the pattern endpoint belongs to the exceptional set.
pub fn is_exceptional(id: &PatternId, mu: f64) -> bool {
    id.variant == Variant::UBar
        && ((mu == 0.0 && id.m == id.n && id.n >= 3) || (mu == 1.0 && id.m >= 2 && id.m + 2 <= id.n))
}

/// Traversal order of the skeleton from the zero state to `u(N_*, N_*)` at mu = 0.
pub fn gamma_path(n_star: usize, symmetry: Symmetry) -> Result<GammaPath> {
    if n_star < 2 {
        return Err(Error::InvalidArgument("N_* must be at least 2".into()));
    }
    let mut segments = Vec::new();
    let mut junctions = Vec::new();
    let mut exceptional = Vec::new();
    for n in 1..=n_star {
        for m in 1..=n {
            let v = PatternId::vbar(n, m, symmetry);
            let u = PatternId::ubar(n, m, symmetry);
            if let Some(&(prev, _, _)) = segments.last() {
                junctions.push(Junction { from: prev, to: v, mu: 0.0, exceptional: is_exceptional(&prev, 0.0) });
            }
            segments.push((v, 0.0, 1.0));
            junctions.push(Junction { from: v, to: u, mu: 1.0, exceptional: is_exceptional(&u, 1.0) });
            segments.push((u, 1.0, 0.0));
            for mu in [0.0, 1.0] {
                if is_exceptional(&u, mu) {
                    exceptional.push((u, mu));
                }
            }
        }
    }
    Ok(GammaPath { segments, junctions, exceptional })
}
