//! Dirichlet sine eigenbasis on `(0, L)`.
//!
//! The state of every solver in this crate is a coefficient vector in the
//! orthonormal basis `φ_k(x) = √(2/L) sin(kπx/L)`, `-φ_k'' = λ_k φ_k`,
//! `λ_k = (kπ/L)²`. Grid values live on the `n_grid` uniform interior nodes
//! `x_j = jL/(n_grid+1)`; on those nodes the discrete sine transform pair is
//! exact for every mode `k ≤ n_grid`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_LENGTH: f64 = 1.0;
pub const DEFAULT_MODES: usize = 64;
pub const DEFAULT_GRID: usize = 256;

/// Interval, truncation order and the tabulated basis on the interior grid.
#[derive(Debug, Clone)]
pub struct SpectralGrid {
    length: f64,
    n_modes: usize,
    n_grid: usize,
    eigenvalues: Vec<f64>,
    // row-major n_grid × n_modes tables of φ_k(x_j) and φ_k'(x_j)
    sines: Vec<f64>,
    cosines: Vec<f64>,
}

impl SpectralGrid {
    pub fn new(length: f64, n_modes: usize, n_grid: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::invalid("domain length must be positive"));
        }
        if n_modes == 0 {
            return Err(Error::invalid("n_modes must be positive"));
        }
        if n_grid < 2 * n_modes {
            return Err(Error::invalid(alloc::format!(
                "n_grid = {n_grid} must be at least 2·n_modes = {}",
                2 * n_modes
            )));
        }
        let eigenvalues = (1..=n_modes)
            .map(|k| {
                let w = k as f64 * PI / length;
                w * w
            })
            .collect();
        let norm = (2.0 / length).sqrt();
        let h = length / (n_grid + 1) as f64;
        let mut sines = vec![0.0; n_grid * n_modes];
        let mut cosines = vec![0.0; n_grid * n_modes];
        for j in 0..n_grid {
            let x = (j + 1) as f64 * h;
            for k in 0..n_modes {
                let w = (k + 1) as f64 * PI / length;
                sines[j * n_modes + k] = norm * (w * x).sin();
                cosines[j * n_modes + k] = norm * w * (w * x).cos();
            }
        }
        Ok(Self {
            length,
            n_modes,
            n_grid,
            eigenvalues,
            sines,
            cosines,
        })
    }

    pub fn with_modes(n_modes: usize) -> Result<Self> {
        Self::new(DEFAULT_LENGTH, n_modes, DEFAULT_GRID.max(2 * n_modes))
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Grid spacing of the interior nodes.
    pub fn spacing(&self) -> f64 {
        self.length / (self.n_grid + 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.spacing()
    }

    /// `λ_k` for the 1-based mode index `k`.
    pub fn eigenvalue(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.n_modes {
            return Err(Error::OutOfRange {
                index: k,
                max: self.n_modes,
            });
        }
        Ok(self.eigenvalues[k - 1])
    }

    /// Number of leading modes with `λ_k ≤ mu`.
    pub fn modes_below(&self, mu: f64) -> usize {
        self.eigenvalues.iter().take_while(|&&l| l <= mu).count()
    }

    fn check_coeffs(&self, len: usize) -> Result<()> {
        if len != self.n_modes {
            return Err(Error::ShapeMismatch {
                expected: self.n_modes,
                got: len,
            });
        }
        Ok(())
    }

    /// Inverse sine transform onto the interior nodes.
    pub fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_coeffs(coeffs.len())?;
        let mut out = vec![0.0; self.n_grid];
        self.synthesize_into(coeffs, &mut out);
        Ok(out)
    }

    pub(crate) fn synthesize_into(&self, coeffs: &[f64], out: &mut [f64]) {
        table_apply(&self.sines, self.n_modes, coeffs, out);
    }

    /// Spatial derivative `y_x` on the interior nodes (cosine series of `kπ/L · y_k`).
    pub fn synthesize_derivative(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_coeffs(coeffs.len())?;
        let mut out = vec![0.0; self.n_grid];
        self.derivative_into(coeffs, &mut out);
        Ok(out)
    }

    pub(crate) fn derivative_into(&self, coeffs: &[f64], out: &mut [f64]) {
        table_apply(&self.cosines, self.n_modes, coeffs, out);
    }

    /// Forward sine transform: the first `n_modes` coefficients of the grid
    /// function; content above `n_modes` is discarded.
    pub fn analyze(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.n_grid {
            return Err(Error::ShapeMismatch {
                expected: self.n_grid,
                got: values.len(),
            });
        }
        let mut out = vec![0.0; self.n_modes];
        self.analyze_into(values, &mut out);
        Ok(out)
    }

    pub(crate) fn analyze_into(&self, values: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|c| *c = 0.0);
        for (j, &v) in values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let row = &self.sines[j * self.n_modes..(j + 1) * self.n_modes];
            for (c, &s) in out.iter_mut().zip(row) {
                *c += v * s;
            }
        }
        let h = self.spacing();
        out.iter_mut().for_each(|c| *c *= h);
    }

    /// `(Σ λ_k^order y_k²)^{1/2}`; order 0, 1, 2 give the L², H¹₀ and H²∩H¹₀ norms.
    pub fn sobolev_norm(&self, coeffs: &[f64], order: u32) -> Result<f64> {
        self.check_coeffs(coeffs.len())?;
        if order > 2 {
            return Err(Error::invalid("Sobolev order must be 0, 1 or 2"));
        }
        Ok(sobolev_norm(&self.eigenvalues, coeffs, order as i32))
    }

    /// Orthogonal projection onto `E_μ = span{φ_k : λ_k ≤ μ}`.
    pub fn project_low(&self, coeffs: &[f64], mu: f64) -> Result<Vec<f64>> {
        self.check_coeffs(coeffs.len())?;
        if !(mu > 0.0) {
            return Err(Error::invalid("spectral cutoff must be positive"));
        }
        Ok(coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(&c, &l)| if l <= mu { c } else { 0.0 })
            .collect())
    }

    /// Mass matrix of the control region in the leading `m` modes.
    pub fn control_mass_matrix(&self, region: &ControlRegion, m: usize) -> Result<DMatrix<f64>> {
        if m > self.n_modes {
            return Err(Error::OutOfRange {
                index: m,
                max: self.n_modes,
            });
        }
        if region.a0 < 0.0 || region.b0 > self.length || region.a0 >= region.b0 {
            return Err(Error::invalid("control region must lie inside the domain"));
        }
        Ok(control_mass_matrix(self.length, region, m))
    }
}

fn table_apply(table: &[f64], n_modes: usize, coeffs: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let row = &table[j * n_modes..(j + 1) * n_modes];
        *o = row.iter().zip(coeffs).map(|(a, b)| a * b).sum();
    }
}

/// `(Σ λ_k^order c_k²)^{1/2}` with an arbitrary (possibly negative) order.
pub fn sobolev_norm(eigenvalues: &[f64], coeffs: &[f64], order: i32) -> f64 {
    let sum: f64 = match order {
        0 => coeffs.iter().map(|c| c * c).sum(),
        1 => coeffs.iter().zip(eigenvalues).map(|(c, l)| l * c * c).sum(),
        2 => coeffs.iter().zip(eigenvalues).map(|(c, l)| l * l * c * c).sum(),
        _ => coeffs.iter().zip(eigenvalues).map(|(c, l)| l.powi(order) * c * c).sum(),
    };
    sum.sqrt()
}

/// The control subdomain `D₀ = (a0, b0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlRegion {
    pub a0: f64,
    pub b0: f64,
}

impl Default for ControlRegion {
    fn default() -> Self {
        Self { a0: 0.3, b0: 0.8 }
    }
}

impl ControlRegion {
    /// Validated region strictly inside `(0, length)`.
    pub fn new(a0: f64, b0: f64, length: f64) -> Result<Self> {
        if !(0.0 < a0 && a0 < b0 && b0 < length) {
            return Err(Error::invalid(alloc::format!(
                "control region ({a0}, {b0}) must satisfy 0 < a0 < b0 < {length}"
            )));
        }
        Ok(Self { a0, b0 })
    }

    /// Region without the interior check; `(0, L)` itself is allowed.
    pub fn closed(a0: f64, b0: f64) -> Self {
        Self { a0, b0 }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.a0 < x && x < self.b0
    }
}

/// `B_kj = ∫_{a0}^{b0} φ_k φ_j dx` from closed-form antiderivatives.
pub fn control_mass_matrix(length: f64, region: &ControlRegion, m: usize) -> DMatrix<f64> {
    let (a, b) = (region.a0, region.b0);
    let w = PI / length;
    // ∫ (2/L) sin(kwx) sin(jwx) dx = (1/L) ∫ cos((k-j)wx) - cos((k+j)wx) dx
    let prim = |n: f64, x: f64| -> f64 {
        if n == 0.0 {
            x
        } else {
            (n * w * x).sin() / (n * w)
        }
    };
    let mut out = DMatrix::zeros(m, m);
    for k in 1..=m {
        for j in k..=m {
            let d = (k as f64) - (j as f64);
            let s = (k + j) as f64;
            let v = ((prim(d, b) - prim(d, a)) - (prim(s, b) - prim(s, a))) / length;
            out[(k - 1, j - 1)] = v;
            out[(j - 1, k - 1)] = v;
        }
    }
    out
}
