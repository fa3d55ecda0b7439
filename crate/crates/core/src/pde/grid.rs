use crate::error::{Error, Result};

/// Uniform tensor grid on the unit square with homogeneous Dirichlet walls.
///
/// Boundary nodes are eliminated, so the state holds only interior nodes, numbered
/// with the ξ₁ node index running fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n1: usize,
    pub n2: usize,
    pub h1: f64,
    pub h2: f64,
}

impl GridSpec {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 < 3 || n2 < 3 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 3 nodes per direction, got {n1}x{n2}"
            )));
        }
        Ok(GridSpec {
            n1,
            n2,
            h1: 1.0 / (n1 - 1) as f64,
            h2: 1.0 / (n2 - 1) as f64,
        })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    /// Interior node count along ξ₁.
    pub fn interior1(&self) -> usize {
        self.n1 - 2
    }

    pub fn interior2(&self) -> usize {
        self.n2 - 2
    }

    /// State dimension (retained interior nodes).
    pub fn dim(&self) -> usize {
        self.interior1() * self.interior2()
    }

    /// Linear index of node `(i, j)`, or `None` for boundary / out-of-range nodes.
    pub fn index(&self, i: usize, j: usize) -> Option<usize> {
        if i == 0 || j == 0 || i >= self.n1 - 1 || j >= self.n2 - 1 {
            return None;
        }
        Some((j - 1) * self.interior1() + (i - 1))
    }

    /// Node `(i, j)` of linear index `k`.
    pub fn node(&self, k: usize) -> (usize, usize) {
        let m = self.interior1();
        (k % m + 1, k / m + 1)
    }

    pub fn coords(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.node(k);
        (i as f64 * self.h1, j as f64 * self.h2)
    }

    pub fn cell_area(&self) -> f64 {
        self.h1 * self.h2
    }

    /// Interior neighbours of `k` in the order west, east, south, north.
    pub fn neighbours(&self, k: usize) -> [Option<usize>; 4] {
        let (i, j) = self.node(k);
        [
            self.index(i - 1, j),
            self.index(i + 1, j),
            self.index(i, j - 1),
            self.index(i, j + 1),
        ]
    }
}

/// Closed axis-aligned rectangle `[lo₁, hi₁] × [lo₂, hi₂]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRegion {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl BoxRegion {
    pub const fn new(lo1: f64, hi1: f64, lo2: f64, hi2: f64) -> Self {
        BoxRegion {
            lo: [lo1, lo2],
            hi: [hi1, hi2],
        }
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]).max(0.0) * (self.hi[1] - self.lo[1]).max(0.0)
    }

    /// Closed membership with a small slack so nodes on an edge are not lost to rounding.
    pub fn contains(&self, p: (f64, f64)) -> bool {
        const SLACK: f64 = 1e-12;
        p.0 >= self.lo[0] - SLACK
            && p.0 <= self.hi[0] + SLACK
            && p.1 >= self.lo[1] - SLACK
            && p.1 <= self.hi[1] + SLACK
    }
}

/// Union of boxes together with the per-node membership it induces on a grid.
#[derive(Debug, Clone)]
pub struct RegionMask {
    pub boxes: Vec<BoxRegion>,
    pub membership: Vec<bool>,
    pub area: f64,
}

impl RegionMask {
    pub fn new(grid: &GridSpec, boxes: &[BoxRegion]) -> Self {
        let membership = (0..grid.dim())
            .map(|k| {
                let p = grid.coords(k);
                boxes.iter().any(|b| b.contains(p))
            })
            .collect();
        RegionMask {
            boxes: boxes.to_vec(),
            membership,
            area: boxes.iter().map(BoxRegion::area).sum(),
        }
    }

    pub fn count(&self) -> usize {
        self.membership.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.membership
            .iter()
            .enumerate()
            .filter_map(|(k, &m)| m.then_some(k))
    }
}
