//! Steady-state residual `d Δu + f(u, mu)`, its Jacobian and Newton's method.

use log::debug;

use crate::error::{Error, Result};
use crate::lattice::{Field, GridSpec};
use crate::linalg::{inf_norm, sparse_solve, CsrMatrix};
use crate::model::Nonlinearity;

/// Newton settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, max_halvings: 8 }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// The steady-state system on a fixed grid with a fixed nonlinearity.
#[derive(Clone, Debug)]
pub struct Problem {
    grid: GridSpec,
    laplacian: CsrMatrix,
    nl: Nonlinearity,
}

impl Problem {
    pub fn new(grid: GridSpec, nl: Nonlinearity) -> Self {
        Self { laplacian: grid.laplacian(), grid, nl }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nl
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    pub fn size(&self) -> usize {
        self.grid.size()
    }

    /// The same system on the full square of matching layout.
    pub fn full(&self) -> Problem {
        Problem::new(self.grid.full(), self.nl.clone())
    }

    pub fn residual(&self, u: &[f64], mu: f64, d: f64) -> Vec<f64> {
        let mut r = self.laplacian.mul_vec(u);
        for (ri, &ui) in r.iter_mut().zip(u) {
            *ri = d * *ri + self.nl.eval(ui, mu);
        }
        r
    }

    pub fn residual_field(&self, u: &Field, mu: f64, d: f64) -> Result<Field> {
        self.check(u)?;
        Field::new(self.grid, self.residual(u.values(), mu, d))
    }

    pub fn jacobian(&self, u: &[f64], mu: f64, d: f64) -> CsrMatrix {
        let diag: Vec<f64> = u.iter().map(|&v| self.nl.du(v, mu)).collect();
        self.laplacian.scale_add_diagonal(d, &diag)
    }

    /// Derivative of the residual with respect to mu.
    pub fn d_mu(&self, u: &[f64], mu: f64) -> Vec<f64> {
        u.iter().map(|&v| self.nl.dmu(v, mu)).collect()
    }

    /// Derivative of the residual with respect to d.
    pub fn d_d(&self, u: &[f64]) -> Vec<f64> {
        self.laplacian.mul_vec(u)
    }

    fn check(&self, u: &Field) -> Result<()> {
        if *u.grid() != self.grid {
            return Err(Error::InvalidArgument("field grid does not match problem grid".into()));
        }
        Ok(())
    }

    /// Damped Newton iteration on the residual at fixed (mu, d).
    pub fn newton(&self, u0: &[f64], mu: f64, d: f64, opts: &NewtonOptions) -> Result<NewtonOutcome> {
        let mut u = u0.to_vec();
        let mut r = self.residual(&u, mu, d);
        let mut rn = inf_norm(&r);
        for it in 0..=opts.max_iter {
            debug!("newton iter {it} residual {rn:e}");
            if rn <= opts.tol {
                return Ok(NewtonOutcome { u, iterations: it, residual: rn });
            }
            if it == opts.max_iter {
                break;
            }
            let j = self.jacobian(&u, mu, d);
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let du = sparse_solve(&j, &neg)?;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..=opts.max_halvings {
                let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + step * b).collect();
                let tr = self.residual(&trial, mu, d);
                let tn = inf_norm(&tr);
                if tn < rn {
                    u = trial;
                    r = tr;
                    rn = tn;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return Err(Error::NoConvergence { iterations: it + 1, residual: rn });
            }
        }
        Err(Error::NoConvergence { iterations: opts.max_iter, residual: rn })
    }

    /// Newton on a field; the result is re-checked against the tolerance.
    pub fn newton_solve(&self, u0: &Field, mu: f64, d: f64, opts: &NewtonOptions) -> Result<(Field, usize)> {
        self.check(u0)?;
        let out = self.newton(u0.values(), mu, d, opts)?;
        let field = Field::new(self.grid, out.u)?;
        debug_assert!(inf_norm(&self.residual(field.values(), mu, d)) <= opts.tol);
        Ok((field, out.iterations))
    }
}
