use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{param, EsdError, Result};

use super::field::{log_permeability, PermeabilityCoefficients};

pub const CG_TOLERANCE: f64 = 1e-10;

/// Stiffness of a unit-coefficient bilinear square element, nodes ordered
/// counter-clockwise from the lower left. It does not depend on the element size.
const ELEMENT_STIFFNESS: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

/// Nodal values on the `(n+1) × (n+1)` lattice of `[0,1]²`; node `(i, j)` sits
/// at `(i/n, j/n)` and is stored at `j (n+1) + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionField {
    pub n: usize,
    pub values: Vec<f64>,
}

impl SolutionField {
    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.values[j * (self.n + 1) + i]
    }

    /// Bilinear interpolation of the nodal values, which is exact for the finite element function.
    pub fn interpolate(&self, x: f64, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(EsdError::Domain(format!("point ({x}, {y}) lies outside the unit square")));
        }
        let n = self.n as f64;
        let (fx, fy) = (x * n, y * n);
        let i = (fx.floor() as usize).min(self.n - 1);
        let j = (fy.floor() as usize).min(self.n - 1);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        Ok((1.0 - tx) * (1.0 - ty) * self.node(i, j)
            + tx * (1.0 - ty) * self.node(i + 1, j)
            + tx * ty * self.node(i + 1, j + 1)
            + (1.0 - tx) * ty * self.node(i, j + 1))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "x,y,u")?;
        let h = 1.0 / self.n as f64;
        for j in 0..=self.n {
            for i in 0..=self.n {
                writeln!(w, "{:?},{:?},{:?}", i as f64 * h, j as f64 * h, self.node(i, j))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// `e^k` at the centre of each of the `n × n` elements, row by row in y.
fn element_coefficients(b: &PermeabilityCoefficients, n: usize) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let mut kappa = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            kappa.push(log_permeability(b, (i as f64 + 0.5) * h, (j as f64 + 0.5) * h).exp());
        }
    }
    kappa
}

/// `out = A x` for the assembled stiffness matrix, with boundary rows and
/// columns removed (boundary entries of `x` must be zero; those of `out` are zeroed).
fn apply_stiffness(kappa: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    let stride = n + 1;
    out.iter_mut().for_each(|o| *o = 0.0);
    for j in 0..n {
        for i in 0..n {
            let nodes = [j * stride + i, j * stride + i + 1, (j + 1) * stride + i + 1, (j + 1) * stride + i];
            let local = nodes.map(|p| x[p]);
            let k = kappa[j * n + i];
            for (a, &p) in nodes.iter().enumerate() {
                let row = &ELEMENT_STIFFNESS[a];
                out[p] += k * (row[0] * local[0] + row[1] * local[1] + row[2] * local[2] + row[3] * local[3]);
            }
        }
    }
    zero_boundary(out, n);
}

fn zero_boundary(v: &mut [f64], n: usize) {
    let stride = n + 1;
    for i in 0..=n {
        v[i] = 0.0;
        v[n * stride + i] = 0.0;
        v[i * stride] = 0.0;
        v[i * stride + n] = 0.0;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `−∇·(e^k ∇u) = 1` on the unit square with `u = 0` on the boundary,
/// using bilinear elements and Jacobi-preconditioned conjugate gradients.
pub fn solve_elliptic(b: &PermeabilityCoefficients, n: usize) -> Result<SolutionField> {
    solve_elliptic_with_stats(b, n).map(|(u, _)| u)
}

pub fn solve_elliptic_with_stats(b: &PermeabilityCoefficients, n: usize) -> Result<(SolutionField, SolveStats)> {
    if n < 4 {
        return Err(param("n", format!("grid size must be at least 4, got {n}")));
    }
    let stride = n + 1;
    let size = stride * stride;
    let kappa = element_coefficients(b, n);
    let h2 = 1.0 / (n * n) as f64;

    let mut rhs = vec![0.0; size];
    let mut diag = vec![0.0; size];
    for j in 0..n {
        for i in 0..n {
            for p in [j * stride + i, j * stride + i + 1, (j + 1) * stride + i + 1, (j + 1) * stride + i] {
                rhs[p] += 0.25 * h2;
                diag[p] += kappa[j * n + i] * ELEMENT_STIFFNESS[0][0];
            }
        }
    }
    zero_boundary(&mut rhs, n);
    let mut inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
    zero_boundary(&mut inv_diag, n);

    let rhs_norm = dot(&rhs, &rhs).sqrt();
    let mut x = vec![0.0; size];
    let mut r = rhs.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; size];
    let mut rz = dot(&r, &z);
    let cap = 10 * n * n;
    let mut residual = 1.0;
    for it in 0..cap {
        residual = dot(&r, &r).sqrt() / rhs_norm;
        if residual < CG_TOLERANCE {
            let stats = SolveStats { iterations: it, relative_residual: residual };
            return Ok((SolutionField { n, values: x }, stats));
        }
        apply_stiffness(&kappa, n, &p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in 0..size {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
            z[k] = r[k] * inv_diag[k];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..size {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(EsdError::SolverNonConvergence { iterations: cap, residual })
}
