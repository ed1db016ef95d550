//! Computational domains, D4 symmetry bookkeeping and the folded discrete Laplacian.
//!
//! Wedge sites are `{(n, m) : 1 <= m <= n <= N_d}` stored row-major by `n`, then `m`.
//! Full-square sites are stored row-major over the square's coordinate range.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// A lattice site `(n, m)`.
pub type Site = (i64, i64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Wedge,
    FullSquare,
}

/// Symmetry centre of a pattern: the plaquette `(1/2, 1/2)` or the site `(1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    OffSite,
    OnSite,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRaw", into = "GridSpecRaw")]
pub struct GridSpec {
    kind: GridKind,
    n_d: usize,
    symmetry: Symmetry,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpecRaw {
    kind: GridKind,
    #[serde(rename = "N_d")]
    n_d: usize,
    symmetry: Symmetry,
}

impl TryFrom<GridSpecRaw> for GridSpec {
    type Error = Error;
    fn try_from(r: GridSpecRaw) -> Result<Self> {
        GridSpec::new(r.kind, r.n_d, r.symmetry)
    }
}

impl From<GridSpec> for GridSpecRaw {
    fn from(g: GridSpec) -> Self {
        GridSpecRaw { kind: g.kind, n_d: g.n_d, symmetry: g.symmetry }
    }
}

impl GridSpec {
    pub fn new(kind: GridKind, n_d: usize, symmetry: Symmetry) -> Result<Self> {
        if n_d == 0 {
            return Err(Error::InvalidGrid("N_d must be positive".into()));
        }
        if kind == GridKind::Wedge && symmetry == Symmetry::None {
            return Err(Error::InvalidGrid("symmetry=None requires a full square".into()));
        }
        Ok(Self { kind, n_d, symmetry })
    }

    pub fn wedge(n_d: usize, symmetry: Symmetry) -> Result<Self> {
        Self::new(GridKind::Wedge, n_d, symmetry)
    }

    pub fn full_square(n_d: usize, symmetry: Symmetry) -> Result<Self> {
        Self::new(GridKind::FullSquare, n_d, symmetry)
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn n_d(&self) -> usize {
        self.n_d
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    /// The full square matching this grid's layout.
    pub fn full(&self) -> GridSpec {
        GridSpec { kind: GridKind::FullSquare, ..*self }
    }

    /// Smallest coordinate of the full square; `None` uses the off-site layout.
    fn lo(&self) -> i64 {
        match self.symmetry {
            Symmetry::OnSite => 2 - self.n_d as i64,
            _ => 1 - self.n_d as i64,
        }
    }

    fn width(&self) -> usize {
        (self.n_d as i64 - self.lo() + 1) as usize
    }

    pub fn size(&self) -> usize {
        match self.kind {
            GridKind::Wedge => self.n_d * (self.n_d + 1) / 2,
            GridKind::FullSquare => self.width() * self.width(),
        }
    }

    pub fn contains(&self, (n, m): Site) -> bool {
        let nd = self.n_d as i64;
        match self.kind {
            GridKind::Wedge => 1 <= m && m <= n && n <= nd,
            GridKind::FullSquare => {
                let lo = self.lo();
                (lo..=nd).contains(&n) && (lo..=nd).contains(&m)
            }
        }
    }

    pub fn index(&self, site: Site) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        let (n, m) = site;
        Some(match self.kind {
            GridKind::Wedge => (n * (n - 1) / 2 + m - 1) as usize,
            GridKind::FullSquare => {
                let lo = self.lo();
                (n - lo) as usize * self.width() + (m - lo) as usize
            }
        })
    }

    pub fn site(&self, index: usize) -> Site {
        assert!(index < self.size(), "index {index} out of range");
        match self.kind {
            GridKind::Wedge => {
                let mut n = ((((8 * index + 1) as f64).sqrt() + 1.0) / 2.0).floor() as i64;
                while n * (n - 1) / 2 > index as i64 {
                    n -= 1;
                }
                while (n + 1) * n / 2 <= index as i64 {
                    n += 1;
                }
                (n, index as i64 - n * (n - 1) / 2 + 1)
            }
            GridKind::FullSquare => {
                let w = self.width();
                let lo = self.lo();
                ((index / w) as i64 + lo, (index % w) as i64 + lo)
            }
        }
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.size()).map(|i| self.site(i))
    }

    fn mirror(&self, x: i64, lo: i64) -> i64 {
        let hi = self.n_d as i64;
        if x > hi {
            2 * hi + 1 - x
        } else if x < lo {
            2 * lo - 1 - x
        } else {
            x
        }
    }

    /// Maps a neighbour that may lie outside the domain back onto a domain site.
    pub fn resolve(&self, (mut n, mut m): Site) -> Site {
        match self.kind {
            GridKind::FullSquare => {
                let lo = self.lo();
                (self.mirror(n, lo), self.mirror(m, lo))
            }
            GridKind::Wedge => {
                let reflect = if self.symmetry == Symmetry::OnSite { 2 } else { 1 };
                for _ in 0..8 {
                    if self.contains((n, m)) {
                        break;
                    }
                    n = self.mirror(n, i64::MIN / 4);
                    m = self.mirror(m, i64::MIN / 4);
                    if n < 1 {
                        n = reflect - n;
                    }
                    if m < 1 {
                        m = reflect - m;
                    }
                    if m > n {
                        std::mem::swap(&mut n, &mut m);
                    }
                }
                debug_assert!(self.contains((n, m)));
                (n, m)
            }
        }
    }

    /// Five-point Laplacian with symmetry folding and Neumann mirror closure.
    pub fn laplacian(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(5 * self.size());
        for (i, (n, m)) in self.sites().enumerate() {
            t.push((i, i, -4.0));
            for nb in [(n + 1, m), (n - 1, m), (n, m + 1), (n, m - 1)] {
                let j = self.index(self.resolve(nb)).expect("resolved site lies in domain");
                t.push((i, j, 1.0));
            }
        }
        CsrMatrix::from_triplets(self.size(), self.size(), &t)
    }

    /// Number of full-lattice sites each index stands for (1 on a full square).
    pub fn weights(&self) -> Vec<f64> {
        match self.kind {
            GridKind::FullSquare => vec![1.0; self.size()],
            GridKind::Wedge => self.sites().map(|s| orbit_size(s, self.symmetry) as f64).collect(),
        }
    }
}

/// One of the eight elements `r^k s^j` of D4, `r` a quarter turn and `s` the diagonal swap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupElement {
    pub rotation: u8,
    pub swap: bool,
}

/// Conjugacy classes of D4 about the symmetry centre.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConjugacyClass {
    Identity,
    QuarterTurn,
    HalfTurn,
    AxisReflection,
    DiagonalReflection,
}

impl GroupElement {
    pub fn all() -> [GroupElement; 8] {
        let mut out = [GroupElement { rotation: 0, swap: false }; 8];
        for k in 0..4u8 {
            out[2 * k as usize] = GroupElement { rotation: k, swap: false };
            out[2 * k as usize + 1] = GroupElement { rotation: k, swap: true };
        }
        out
    }

    pub fn class(&self) -> ConjugacyClass {
        match (self.rotation, self.swap) {
            (0, false) => ConjugacyClass::Identity,
            (2, false) => ConjugacyClass::HalfTurn,
            (_, false) => ConjugacyClass::QuarterTurn,
            (0 | 2, true) => ConjugacyClass::DiagonalReflection,
            (_, true) => ConjugacyClass::AxisReflection,
        }
    }

    pub fn inverse(&self) -> GroupElement {
        if self.swap {
            *self
        } else {
            GroupElement { rotation: (4 - self.rotation) % 4, swap: false }
        }
    }

    /// Acts on a site about the centre of `symmetry` (`None` uses the off-site centre).
    pub fn apply(&self, (n, m): Site, symmetry: Symmetry) -> Site {
        // doubled coordinates relative to the centre
        let (mut x, mut y) = match symmetry {
            Symmetry::OnSite => (2 * (n - 1), 2 * (m - 1)),
            _ => (2 * n - 1, 2 * m - 1),
        };
        if self.swap {
            std::mem::swap(&mut x, &mut y);
        }
        for _ in 0..self.rotation {
            (x, y) = (-y, x);
        }
        match symmetry {
            Symmetry::OnSite => (x / 2 + 1, y / 2 + 1),
            _ => ((x + 1) / 2, (y + 1) / 2),
        }
    }
}

/// The two reflections generating the symmetry group of a class.
pub fn generators(symmetry: Symmetry) -> [fn(Site) -> Site; 2] {
    fn off(s: Site) -> Site {
        (1 - s.0, s.1)
    }
    fn on(s: Site) -> Site {
        (2 - s.0, s.1)
    }
    fn swap(s: Site) -> Site {
        (s.1, s.0)
    }
    match symmetry {
        Symmetry::OnSite => [on, swap],
        _ => [off, swap],
    }
}

/// The D4 orbit of a site, sorted and duplicate-free.
pub fn orbit(site: Site, symmetry: Symmetry) -> Vec<Site> {
    let mut v: Vec<Site> = GroupElement::all().iter().map(|g| g.apply(site, symmetry)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

pub fn orbit_size(site: Site, symmetry: Symmetry) -> usize {
    orbit(site, symmetry).len()
}

/// Values on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldRaw")]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldRaw {
    grid: GridSpec,
    values: Vec<f64>,
}

impl TryFrom<FieldRaw> for Field {
    type Error = Error;
    fn try_from(r: FieldRaw) -> Result<Self> {
        Field::new(r.grid, r.values)
    }
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.size()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("field values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: vec![0.0; grid.size()] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(Site) -> f64) -> Self {
        Self { grid, values: grid.sites().map(f).collect() }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, site: Site) -> Option<f64> {
        self.grid.index(site).map(|i| self.values[i])
    }

    pub fn set(&mut self, site: Site, v: f64) {
        let i = self.grid.index(site).expect("site outside grid");
        self.values[i] = v;
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::inf_norm(&self.values)
    }

    /// l2 norm of the field over the full lattice region it represents.
    pub fn full_norm(&self) -> f64 {
        self.grid.weights().iter().zip(&self.values).map(|(w, v)| w * v * v).sum::<f64>().sqrt()
    }

    /// Deviation from D4 invariance about the grid's centre (0 on wedge grids).
    pub fn symmetry_defect(&self) -> f64 {
        if self.grid.kind == GridKind::Wedge {
            return 0.0;
        }
        let sym = self.grid.symmetry;
        let mut worst: f64 = 0.0;
        for (i, s) in self.grid.sites().enumerate() {
            for g in GroupElement::all() {
                let j = self.grid.index(g.apply(s, sym)).expect("square is D4 invariant");
                worst = worst.max((self.values[i] - self.values[j]).abs());
            }
        }
        worst
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n", "m", "value"])?;
        for (s, v) in self.grid.sites().zip(&self.values) {
            w.write_record([s.0.to_string(), s.1.to_string(), format!("{v:.17e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Applies the folded Laplacian to a field.
pub fn laplacian_apply(u: &Field) -> Field {
    let l = u.grid.laplacian();
    Field { grid: u.grid, values: l.mul_vec(&u.values) }
}

/// Extends a wedge field to the D4-symmetric full-square field.
pub fn unfold(u: &Field) -> Result<Field> {
    let g = u.grid;
    if g.kind != GridKind::Wedge {
        return Err(Error::InvalidGrid("unfold expects a wedge field".into()));
    }
    let full = g.full();
    let values = full
        .sites()
        .map(|s| {
            let w = canonical(s, g.symmetry);
            u.values[g.index(w).expect("canonical site lies in wedge")]
        })
        .collect();
    Ok(Field { grid: full, values })
}

/// Restricts a full-square field to its wedge.
pub fn fold(u: &Field) -> Result<Field> {
    let g = u.grid;
    if g.kind != GridKind::FullSquare || g.symmetry == Symmetry::None {
        return Err(Error::InvalidGrid("fold expects a symmetric full-square field".into()));
    }
    let wedge = GridSpec { kind: GridKind::Wedge, ..g };
    Ok(Field::from_fn(wedge, |s| u.get(s).expect("wedge inside square")))
}

/// Representative of a site's orbit inside the wedge.
pub fn canonical(site: Site, symmetry: Symmetry) -> Site {
    GroupElement::all()
        .iter()
        .map(|g| g.apply(site, symmetry))
        .find(|&(n, m)| 1 <= m && m <= n)
        .expect("every orbit meets the wedge")
}
