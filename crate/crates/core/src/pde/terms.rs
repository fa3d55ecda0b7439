use ndarray::Array1;
use sprs::{CsMat, TriMat};

use super::grid::GridSpec;

/// Pointwise scalar function `g` used by diagonal terms `diag(g(x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateFunction {
    /// `g(s) = s²`
    Square,
    /// `g(s) = exp(−rate·s)`
    ExpDecay(f64),
}

impl StateFunction {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            StateFunction::Square => s * s,
            StateFunction::ExpDecay(rate) => (-rate * s).exp(),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            StateFunction::Square => 2.0 * s,
            StateFunction::ExpDecay(rate) => -rate * (-rate * s).exp(),
        }
    }
}

/// First-order upwind discretization of `y (∂₁y + ∂₂y)` written as `T(x)·x`.
///
/// The local state value is the transport speed: backward differences where it is
/// non-negative, forward differences where it is negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpwindAdvection {
    pub grid: GridSpec,
}

impl UpwindAdvection {
    /// One-sided difference `(D x)_k` selected by the sign of `x_k`.
    fn difference(&self, k: usize, x: &dyn Fn(usize) -> f64) -> f64 {
        let [west, east, south, north] = self.grid.neighbours(k);
        let at = |n: Option<usize>| n.map_or(0.0, x);
        let xk = x(k);
        let (h1, h2) = (self.grid.h1, self.grid.h2);
        if xk >= 0.0 {
            (xk - at(west)) / h1 + (xk - at(south)) / h2
        } else {
            (at(east) - xk) / h1 + (at(north) - xk) / h2
        }
    }

    fn row(&self, k: usize, x: &dyn Fn(usize) -> f64, out: &mut Vec<(usize, f64)>) {
        let [west, east, south, north] = self.grid.neighbours(k);
        let xk = x(k);
        let (h1, h2) = (self.grid.h1, self.grid.h2);
        if xk >= 0.0 {
            out.push((k, xk * (1.0 / h1 + 1.0 / h2)));
            if let Some(w) = west {
                out.push((w, -xk / h1));
            }
            if let Some(s) = south {
                out.push((s, -xk / h2));
            }
        } else {
            out.push((k, -xk * (1.0 / h1 + 1.0 / h2)));
            if let Some(e) = east {
                out.push((e, xk / h1));
            }
            if let Some(n) = north {
                out.push((n, xk / h2));
            }
        }
    }
}

/// One term `A_j(x)` of the operator library.
#[derive(Debug, Clone)]
pub enum OperatorTerm {
    /// State-independent sparse matrix (CSR).
    Constant(CsMat<f64>),
    /// `diag(g(x))`.
    Diagonal(StateFunction),
    /// Upwind advection assembler `T(x)`.
    Upwind(UpwindAdvection),
}

impl OperatorTerm {
    pub fn is_constant(&self) -> bool {
        matches!(self, OperatorTerm::Constant(_))
    }

    /// Nonzeros of row `k` of `A_j(x)` as `(column, value)`; `x` is read through an accessor.
    pub fn row_entries(&self, k: usize, x: &dyn Fn(usize) -> f64, out: &mut Vec<(usize, f64)>) {
        match self {
            OperatorTerm::Constant(m) => {
                if let Some(row) = m.outer_view(k) {
                    out.extend(row.iter().map(|(j, &v)| (j, v)));
                }
            }
            OperatorTerm::Diagonal(g) => out.push((k, g.eval(x(k)))),
            OperatorTerm::Upwind(t) => t.row(k, x, out),
        }
    }

    /// Nonzeros of row `k` of the Jacobian of `x ↦ A_j(x)·x`.
    pub fn jacobian_row_entries(
        &self,
        k: usize,
        x: &dyn Fn(usize) -> f64,
        out: &mut Vec<(usize, f64)>,
    ) {
        match self {
            OperatorTerm::Constant(_) => self.row_entries(k, x, out),
            OperatorTerm::Diagonal(g) => {
                let s = x(k);
                out.push((k, g.eval(s) + g.derivative(s) * s));
            }
            OperatorTerm::Upwind(t) => {
                t.row(k, x, out);
                out.push((k, t.difference(k, x)));
            }
        }
    }

    /// Full-state indices that row `k` can touch, whatever the state.
    pub fn stencil(&self, k: usize) -> Vec<usize> {
        match self {
            OperatorTerm::Constant(m) => m
                .outer_view(k)
                .map(|row| row.indices().to_vec())
                .unwrap_or_default(),
            OperatorTerm::Diagonal(_) => vec![k],
            OperatorTerm::Upwind(t) => {
                let mut s = vec![k];
                s.extend(t.grid.neighbours(k).into_iter().flatten());
                s
            }
        }
    }

    /// Row `k` of `A_j(x)·x`.
    pub fn apply_row(&self, k: usize, x: &dyn Fn(usize) -> f64, buf: &mut Vec<(usize, f64)>) -> f64 {
        buf.clear();
        self.row_entries(k, x, buf);
        buf.iter().map(|&(j, v)| v * x(j)).sum()
    }

    /// `A_j(x)·x`.
    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        let acc = |i: usize| x[i];
        let mut buf = Vec::with_capacity(8);
        Array1::from_iter((0..x.len()).map(|k| self.apply_row(k, &acc, &mut buf)))
    }

    /// Adds `scale·A_j(x)` to a triplet accumulator.
    pub fn add_scaled_into(&self, x: &Array1<f64>, scale: f64, acc: &mut TriMat<f64>) {
        let get = |i: usize| x[i];
        let mut buf = Vec::with_capacity(8);
        for k in 0..x.len() {
            buf.clear();
            self.row_entries(k, &get, &mut buf);
            for &(j, v) in &buf {
                acc.add_triplet(k, j, scale * v);
            }
        }
    }

    /// Adds `scale·∂(A_j(x)x)/∂x` to a triplet accumulator.
    pub fn add_scaled_jacobian_into(&self, x: &Array1<f64>, scale: f64, acc: &mut TriMat<f64>) {
        let get = |i: usize| x[i];
        let mut buf = Vec::with_capacity(8);
        for k in 0..x.len() {
            buf.clear();
            self.jacobian_row_entries(k, &get, &mut buf);
            for &(j, v) in &buf {
                acc.add_triplet(k, j, scale * v);
            }
        }
    }

    /// `A_j(x)` as a CSR matrix.
    pub fn matrix(&self, x: &Array1<f64>) -> CsMat<f64> {
        if let OperatorTerm::Constant(m) = self {
            return m.clone();
        }
        let d = x.len();
        let mut acc = TriMat::with_capacity((d, d), 5 * d);
        self.add_scaled_into(x, 1.0, &mut acc);
        acc.to_csr()
    }

    pub fn jacobian(&self, x: &Array1<f64>) -> CsMat<f64> {
        let d = x.len();
        let mut acc = TriMat::with_capacity((d, d), 6 * d);
        self.add_scaled_jacobian_into(x, 1.0, &mut acc);
        acc.to_csr()
    }
}
