//! Periodic space-time grids.
//!
//! Simulation replaces `R^d` by the torus `[-L, L)^d` with `n` lattice
//! points per dimension and `nt` uniform time steps on `[0, T]`. Spatial
//! points and jump marks share the [`Point`] representation: a fixed pair of
//! coordinates of which the first `d` are meaningful.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point of `R^d` for `d <= 2`; coordinates past `d` are zero.
pub type Point = [f64; 2];

pub fn point_norm(p: Point, d: usize) -> f64 {
    match d {
        1 => p[0].abs(),
        _ => (p[0] * p[0] + p[1] * p[1]).sqrt(),
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid.{name} = {value} violates: {constraint}")]
    Invalid { name: &'static str, value: f64, constraint: &'static str },
}

/// Space-time lattice: box `[-half_width, half_width)^d`, `n` points per
/// dimension (power of two for the lattice transforms), horizon `T` split
/// into `nt` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub half_width: f64,
    pub n: usize,
    pub horizon: f64,
    pub nt: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.d != 1 && self.d != 2 {
            return Err(GridError::Invalid {
                name: "d",
                value: self.d as f64,
                constraint: "dimension must be 1 or 2",
            });
        }
        if !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return Err(GridError::Invalid {
                name: "half_width",
                value: self.half_width,
                constraint: "must be positive and finite",
            });
        }
        if self.n < 2 || !self.n.is_power_of_two() {
            return Err(GridError::Invalid {
                name: "n",
                value: self.n as f64,
                constraint: "points per dimension must be a power of two >= 2",
            });
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(GridError::Invalid {
                name: "horizon",
                value: self.horizon,
                constraint: "must be positive and finite",
            });
        }
        if self.nt < 1 {
            return Err(GridError::Invalid {
                name: "nt",
                value: self.nt as f64,
                constraint: "at least one time step",
            });
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    /// total number of lattice sites, `n^d`
    #[inline]
    pub fn sites(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    #[inline]
    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.d as i32)
    }

    /// grid time `t_k = k dt`
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// coordinates of the lattice site with flat index `i`
    pub fn site_position(&self, i: usize) -> Point {
        let dx = self.dx();
        match self.d {
            1 => [-self.half_width + i as f64 * dx, 0.0],
            _ => {
                let i1 = i / self.n;
                let i2 = i % self.n;
                [
                    -self.half_width + i1 as f64 * dx,
                    -self.half_width + i2 as f64 * dx,
                ]
            }
        }
    }

    /// Periodically wrapped multilinear interpolation of a lattice field at
    /// an arbitrary point of the box.
    pub fn interp(&self, field: &[f64], p: Point) -> f64 {
        debug_assert_eq!(field.len(), self.sites());
        let n = self.n;
        let dx = self.dx();
        let coord = |c: f64| -> (usize, usize, f64) {
            let s = (c + self.half_width) / dx;
            let i0 = s.floor();
            let w = s - i0;
            let i0 = (i0 as i64).rem_euclid(n as i64) as usize;
            (i0 % n, (i0 + 1) % n, w)
        };
        match self.d {
            1 => {
                let (a, b, w) = coord(p[0]);
                field[a] * (1.0 - w) + field[b] * w
            }
            _ => {
                let (a1, b1, w1) = coord(p[0]);
                let (a2, b2, w2) = coord(p[1]);
                let f = |i: usize, j: usize| field[i * n + j];
                (1.0 - w1) * ((1.0 - w2) * f(a1, a2) + w2 * f(a1, b2))
                    + w1 * ((1.0 - w2) * f(b1, a2) + w2 * f(b1, b2))
            }
        }
    }
}
