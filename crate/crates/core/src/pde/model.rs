use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use sprs::{CsMat, TriMat};

use super::grid::{BoxRegion, GridSpec, RegionMask};
use super::terms::{OperatorTerm, StateFunction, UpwindAdvection};
use crate::error::{Error, Result};

/// State weight `Q = CᵀC` kept as its `z × d` factor `C`.
#[derive(Debug, Clone)]
pub struct LowRankCost {
    pub factor: Array2<f64>,
}

impl LowRankCost {
    pub fn rank(&self) -> usize {
        self.factor.nrows()
    }

    /// `xᵀQx`
    pub fn quadratic(&self, x: &ArrayView1<f64>) -> f64 {
        let y = self.factor.dot(x);
        y.dot(&y)
    }

    /// `Q·x`
    pub fn apply(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        self.factor.t().dot(&self.factor.dot(x))
    }

    pub fn dense(&self) -> Array2<f64> {
        self.factor.t().dot(&self.factor)
    }

    /// `ΨᵀQΨ`
    pub fn project(&self, basis: &ArrayView2<f64>) -> Array2<f64> {
        let cp = self.factor.dot(basis);
        cp.t().dot(&cp)
    }

    /// `‖Q‖_F` computed from the small Gram matrix `CCᵀ`.
    pub fn frobenius(&self) -> f64 {
        let g = self.factor.dot(&self.factor.t());
        g.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Semi-discretized control system `ẋ = Σⱼ μⱼ Aⱼ(x) x + B u` with quadratic cost.
#[derive(Debug, Clone)]
pub struct SemilinearModel {
    pub grid: GridSpec,
    pub terms: Vec<OperatorTerm>,
    /// `d × m`
    pub actuator: Array2<f64>,
    pub cost: LowRankCost,
    /// `m × m`
    pub control_weight: Array2<f64>,
}

impl SemilinearModel {
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn inputs(&self) -> usize {
        self.actuator.ncols()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    fn check_params(&self, mu: &[f64]) {
        assert_eq!(mu.len(), self.terms.len(), "one coefficient per operator term");
    }

    /// `A(x; μ) = Σⱼ μⱼ Aⱼ(x)`.
    pub fn operator(&self, x: &Array1<f64>, mu: &[f64]) -> CsMat<f64> {
        self.check_params(mu);
        let d = self.dim();
        let mut acc = TriMat::with_capacity((d, d), 5 * d * self.terms.len());
        for (term, &m) in self.terms.iter().zip(mu) {
            if m != 0.0 {
                term.add_scaled_into(x, m, &mut acc);
            }
        }
        acc.to_csr()
    }

    /// `A(0; μ)`, the linearization at the origin.
    pub fn linearization(&self, mu: &[f64]) -> CsMat<f64> {
        self.operator(&Array1::zeros(self.dim()), mu)
    }

    /// `A(x; μ)·x`.
    pub fn drift(&self, x: &Array1<f64>, mu: &[f64]) -> Array1<f64> {
        self.check_params(mu);
        let mut out = Array1::zeros(self.dim());
        for (term, &m) in self.terms.iter().zip(mu) {
            if m != 0.0 {
                out.scaled_add(m, &term.apply(x));
            }
        }
        out
    }

    /// Jacobian of `x ↦ A(x; μ)·x`.
    pub fn jacobian(&self, x: &Array1<f64>, mu: &[f64]) -> CsMat<f64> {
        self.check_params(mu);
        let d = self.dim();
        let mut acc = TriMat::with_capacity((d, d), 6 * d * self.terms.len());
        for (term, &m) in self.terms.iter().zip(mu) {
            if m != 0.0 {
                term.add_scaled_jacobian_into(x, m, &mut acc);
            }
        }
        acc.to_csr()
    }

    /// Columns `Aⱼ(x)·x`, one per term (`d × n`).
    pub fn term_columns(&self, x: &Array1<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.dim(), self.terms.len()));
        for (j, term) in self.terms.iter().enumerate() {
            out.column_mut(j).assign(&term.apply(x));
        }
        out
    }

    pub fn control_cost(&self, u: &ArrayView1<f64>) -> f64 {
        u.dot(&self.control_weight.dot(u))
    }
}

/// Actuator and observation geometry plus the control weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGeometry {
    pub actuator: Vec<BoxRegion>,
    pub observation: Vec<Vec<BoxRegion>>,
    pub control_weight: f64,
}

impl ModelGeometry {
    /// Four actuator patches near the corners and four observation patches at the edge midpoints.
    pub fn benchmark(control_weight: f64) -> Self {
        ModelGeometry {
            actuator: vec![
                BoxRegion::new(0.1, 0.3, 0.1, 0.3),
                BoxRegion::new(0.7, 0.9, 0.7, 0.9),
                BoxRegion::new(0.1, 0.3, 0.7, 0.9),
                BoxRegion::new(0.7, 0.9, 0.1, 0.3),
            ],
            observation: vec![
                vec![BoxRegion::new(0.1, 0.3, 0.4, 0.6)],
                vec![BoxRegion::new(0.4, 0.6, 0.1, 0.3)],
                vec![BoxRegion::new(0.4, 0.6, 0.7, 0.9)],
                vec![BoxRegion::new(0.7, 0.9, 0.4, 0.6)],
            ],
            control_weight,
        }
    }
}

/// The two benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    AllenCahn,
    Advection,
}

impl Benchmark {
    pub fn build(self, grid: &GridSpec, geometry: &ModelGeometry) -> Result<SemilinearModel> {
        match self {
            Benchmark::AllenCahn => allen_cahn_model(grid, geometry),
            Benchmark::Advection => advection_model(grid, geometry),
        }
    }
}

/// Five-point Dirichlet Laplacian on the interior nodes.
pub fn build_dirichlet_laplacian(grid: &GridSpec) -> CsMat<f64> {
    let d = grid.dim();
    let (c1, c2) = (1.0 / (grid.h1 * grid.h1), 1.0 / (grid.h2 * grid.h2));
    let mut acc = TriMat::with_capacity((d, d), 5 * d);
    for k in 0..d {
        acc.add_triplet(k, k, -2.0 * (c1 + c2));
        let [west, east, south, north] = grid.neighbours(k);
        for (n, c) in [(west, c1), (east, c1), (south, c2), (north, c2)] {
            if let Some(n) = n {
                acc.add_triplet(k, n, c);
            }
        }
    }
    acc.to_csr()
}

/// Indicator of the actuator region as a `d × 1` input matrix.
pub fn build_actuator(grid: &GridSpec, mask: &RegionMask) -> Result<Array2<f64>> {
    if mask.is_empty() {
        return Err(Error::ActuatorEmpty);
    }
    let mut b = Array2::zeros((grid.dim(), 1));
    for k in mask.members() {
        b[[k, 0]] = 1.0;
    }
    Ok(b)
}

/// `Q = Σᵢ |Ωᵢ|⁻¹ qᵢqᵢᵀ` with `qᵢ = h₁h₂·𝟙_{Ωᵢ}` approximating the region integral.
pub fn build_cost_matrix(grid: &GridSpec, regions: &[RegionMask]) -> Result<LowRankCost> {
    if regions.is_empty() {
        return Err(Error::InvalidInput("cost needs at least one observation region".into()));
    }
    let mut factor = Array2::zeros((regions.len(), grid.dim()));
    for (i, region) in regions.iter().enumerate() {
        if region.is_empty() || region.area <= 0.0 {
            return Err(Error::EmptyRegion(i));
        }
        let entry = grid.cell_area() / region.area.sqrt();
        for k in region.members() {
            factor[[i, k]] = entry;
        }
    }
    Ok(LowRankCost { factor })
}

fn assemble(grid: &GridSpec, geometry: &ModelGeometry, terms: Vec<OperatorTerm>) -> Result<SemilinearModel> {
    if !(geometry.control_weight > 0.0) {
        return Err(Error::InvalidInput("control weight must be positive".into()));
    }
    let actuator = build_actuator(grid, &RegionMask::new(grid, &geometry.actuator))?;
    let regions: Vec<_> = geometry
        .observation
        .iter()
        .map(|boxes| RegionMask::new(grid, boxes))
        .collect();
    Ok(SemilinearModel {
        grid: *grid,
        terms,
        actuator,
        cost: build_cost_matrix(grid, &regions)?,
        control_weight: Array2::from_elem((1, 1), geometry.control_weight),
    })
}

/// Terms `[Δ_d, I, diag(x²)]`.
pub fn allen_cahn_model(grid: &GridSpec, geometry: &ModelGeometry) -> Result<SemilinearModel> {
    let identity = CsMat::eye(grid.dim());
    assemble(
        grid,
        geometry,
        vec![
            OperatorTerm::Constant(build_dirichlet_laplacian(grid)),
            OperatorTerm::Constant(identity),
            OperatorTerm::Diagonal(StateFunction::Square),
        ],
    )
}

/// Terms `[Δ_d, T(x), diag(exp(−0.1x))]`.
pub fn advection_model(grid: &GridSpec, geometry: &ModelGeometry) -> Result<SemilinearModel> {
    assemble(
        grid,
        geometry,
        vec![
            OperatorTerm::Constant(build_dirichlet_laplacian(grid)),
            OperatorTerm::Upwind(UpwindAdvection { grid: *grid }),
            OperatorTerm::Diagonal(StateFunction::ExpDecay(0.1)),
        ],
    )
}

/// `0.2 sin(πξ₁) sin(πξ₂)` sampled at the interior nodes.
pub fn initial_condition(grid: &GridSpec) -> Array1<f64> {
    Array1::from_iter((0..grid.dim()).map(|k| {
        let (a, b) = grid.coords(k);
        0.2 * (PI * a).sin() * (PI * b).sin()
    }))
}
