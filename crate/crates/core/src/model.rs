//! Finite-difference model problem on a uniform rectangular grid.
//!
//! Discretizes the diffusion operator with a five-point stencil over the
//! interior nodes of a rectangle with homogeneous Dirichlet boundary,
//! sampling the coefficient at staggered edge midpoints. Interior nodes are
//! ordered row-major, second index outer, so the first-direction split is
//! block tridiagonal along rows.

use thiserror::Error;

use crate::linalg::{GridFunction, SparseOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("coefficient sample {value:.6e} at midpoint ({x1}, {x2}) is not positive")]
    CoefficientNotPositive { x1: f64, x2: f64, value: f64 },
    #[error("coefficient sample {value:.6e} at midpoint ({x1}, {x2}) is below its claimed lower bound {kappa:.6e}")]
    CoefficientBelowBound {
        x1: f64,
        x2: f64,
        value: f64,
        kappa: f64,
    },
    #[error("eigenmode ({m1}, {m2}) out of range for {n1}x{n2} subdivisions")]
    ModeOutOfRange {
        m1: usize,
        m2: usize,
        n1: usize,
        n2: usize,
    },
}

/// Uniform rectangular grid over (0, l1) x (0, l2) with homogeneous
/// Dirichlet boundary. `n1`, `n2` are subdivisions per direction; interior
/// nodes have indices `i_d = 1..n_d - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    l1: f64,
    l2: f64,
    n1: usize,
    n2: usize,
}

impl Grid2D {
    pub fn new(l1: f64, l2: f64, n1: usize, n2: usize) -> Result<Self, ModelError> {
        if !(l1 > 0.0 && l1.is_finite() && l2 > 0.0 && l2.is_finite()) {
            return Err(ModelError::InvalidGrid(format!(
                "side lengths must be positive and finite, got ({l1}, {l2})"
            )));
        }
        if n1 < 2 || n2 < 2 {
            return Err(ModelError::InvalidGrid(format!(
                "need at least 2 subdivisions per direction, got ({n1}, {n2})"
            )));
        }
        Ok(Self { l1, l2, n1, n2 })
    }

    /// Unit square with `n` subdivisions in each direction.
    pub fn unit_square(n: usize) -> Result<Self, ModelError> {
        Self::new(1.0, 1.0, n, n)
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn h1(&self) -> f64 {
        self.l1 / self.n1 as f64
    }

    pub fn h2(&self) -> f64 {
        self.l2 / self.n2 as f64
    }

    /// Number of interior nodes.
    pub fn interior_len(&self) -> usize {
        (self.n1 - 1) * (self.n2 - 1)
    }

    /// Flat index of interior node (i1, i2), row-major with i2 outer.
    pub fn node_index(&self, i1: usize, i2: usize) -> usize {
        debug_assert!((1..self.n1).contains(&i1) && (1..self.n2).contains(&i2));
        (i2 - 1) * (self.n1 - 1) + (i1 - 1)
    }

    /// Inverse of [`Grid2D::node_index`].
    pub fn node_coords(&self, index: usize) -> (usize, usize) {
        let w = self.n1 - 1;
        (index % w + 1, index / w + 1)
    }

    /// Physical position of interior node (i1, i2).
    pub fn position(&self, i1: usize, i2: usize) -> (f64, f64) {
        (i1 as f64 * self.h1(), i2 as f64 * self.h2())
    }

    /// Interior nodes in storage order: (flat index, (i1, i2)).
    pub fn interior_nodes(&self) -> impl Iterator<Item = (usize, (usize, usize))> + '_ {
        let w = self.n1 - 1;
        (0..self.interior_len()).map(move |idx| (idx, (idx % w + 1, idx / w + 1)))
    }
}

/// Diffusion coefficient k(x1, x2) with a claimed positive lower bound.
pub struct Coefficient {
    eval: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    kappa: f64,
}

impl Coefficient {
    /// `kappa` must be a positive claimed lower bound for `eval`; the
    /// assembler verifies the claim at every sampled midpoint.
    pub fn new(kappa: f64, eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        assert!(
            kappa > 0.0 && kappa.is_finite(),
            "coefficient lower bound must be positive"
        );
        Self {
            eval: Box::new(eval),
            kappa,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(c, move |_, _| c)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        (self.eval)(x1, x2)
    }

    fn sample(&self, x1: f64, x2: f64) -> Result<f64, ModelError> {
        let value = self.eval(x1, x2);
        if !(value > 0.0 && value.is_finite()) {
            return Err(ModelError::CoefficientNotPositive { x1, x2, value });
        }
        if value < self.kappa {
            return Err(ModelError::CoefficientBelowBound {
                x1,
                x2,
                value,
                kappa: self.kappa,
            });
        }
        Ok(value)
    }
}

/// Midpoint abscissa of the first-direction edge whose left node has index
/// `left`. Shared between assembly and the gradient factor so the same
/// coefficient sample is reproduced bitwise.
pub(crate) fn edge_mid_x1(grid: &Grid2D, left: usize) -> f64 {
    (left as f64 + 0.5) * grid.h1()
}

pub(crate) fn edge_mid_x2(grid: &Grid2D, below: usize) -> f64 {
    (below as f64 + 0.5) * grid.h2()
}

/// Per-node stencil contributions split by direction. `d1`/`d2` are the
/// diagonal parts; the off-diagonal couplings sit next to interior
/// neighbors only (Dirichlet boundary terms dropped).
struct StencilRow {
    d1: f64,
    d2: f64,
    west: Option<(usize, f64)>,
    east: Option<(usize, f64)>,
    south: Option<(usize, f64)>,
    north: Option<(usize, f64)>,
}

fn stencil_row(
    grid: &Grid2D,
    k: &Coefficient,
    i1: usize,
    i2: usize,
) -> Result<StencilRow, ModelError> {
    let (x1, x2) = grid.position(i1, i2);
    let inv_h1_sq = 1.0 / (grid.h1() * grid.h1());
    let inv_h2_sq = 1.0 / (grid.h2() * grid.h2());
    let k_east = k.sample(edge_mid_x1(grid, i1), x2)?;
    let k_west = k.sample(edge_mid_x1(grid, i1 - 1), x2)?;
    let k_north = k.sample(x1, edge_mid_x2(grid, i2))?;
    let k_south = k.sample(x1, edge_mid_x2(grid, i2 - 1))?;
    Ok(StencilRow {
        d1: (k_east + k_west) * inv_h1_sq,
        d2: (k_north + k_south) * inv_h2_sq,
        west: (i1 > 1).then(|| (grid.node_index(i1 - 1, i2), -k_west * inv_h1_sq)),
        east: (i1 + 1 < grid.n1).then(|| (grid.node_index(i1 + 1, i2), -k_east * inv_h1_sq)),
        south: (i2 > 1).then(|| (grid.node_index(i1, i2 - 1), -k_south * inv_h2_sq)),
        north: (i2 + 1 < grid.n2).then(|| (grid.node_index(i1, i2 + 1), -k_north * inv_h2_sq)),
    })
}

/// Assemble the five-point grid diffusion operator.
pub fn assemble_operator(grid: &Grid2D, k: &Coefficient) -> Result<SparseOperator, ModelError> {
    let mut triplets = Vec::with_capacity(5 * grid.interior_len());
    for (idx, (i1, i2)) in grid.interior_nodes() {
        let row = stencil_row(grid, k, i1, i2)?;
        triplets.push((idx, idx, row.d1 + row.d2));
        for entry in [row.west, row.east, row.south, row.north]
            .into_iter()
            .flatten()
        {
            triplets.push((idx, entry.0, entry.1));
        }
    }
    SparseOperator::from_triplets(grid.interior_len(), grid.interior_len(), &triplets, true)
        .map_err(|e| ModelError::InvalidGrid(format!("assembly produced invalid operator: {e}")))
}

/// Assemble the two directional parts of the stencil separately. Their
/// entrywise sum reproduces [`assemble_operator`] bitwise.
pub(crate) fn assemble_directional_parts(
    grid: &Grid2D,
    k: &Coefficient,
) -> Result<(SparseOperator, SparseOperator), ModelError> {
    let n = grid.interior_len();
    let mut t1 = Vec::with_capacity(3 * n);
    let mut t2 = Vec::with_capacity(3 * n);
    for (idx, (i1, i2)) in grid.interior_nodes() {
        let row = stencil_row(grid, k, i1, i2)?;
        t1.push((idx, idx, row.d1));
        t2.push((idx, idx, row.d2));
        for entry in [row.west, row.east].into_iter().flatten() {
            t1.push((idx, entry.0, entry.1));
        }
        for entry in [row.south, row.north].into_iter().flatten() {
            t2.push((idx, entry.0, entry.1));
        }
    }
    let a1 = SparseOperator::from_triplets(n, n, &t1, true)
        .map_err(|e| ModelError::InvalidGrid(format!("directional part invalid: {e}")))?;
    let a2 = SparseOperator::from_triplets(n, n, &t2, true)
        .map_err(|e| ModelError::InvalidGrid(format!("directional part invalid: {e}")))?;
    Ok((a1, a2))
}

/// Lower bound kappa * (delta_1 + delta_2) for the smallest eigenvalue of
/// the assembled operator, with
/// `delta_d = (4 / h_d^2) sin^2(pi h_d / (2 l_d))`.
pub fn spectral_lower_bound(grid: &Grid2D, kappa: f64) -> f64 {
    assert!(kappa > 0.0, "kappa must be positive");
    kappa * (direction_delta(grid.h1(), grid.l1) + direction_delta(grid.h2(), grid.l2))
}

fn direction_delta(h: f64, l: f64) -> f64 {
    let s = (std::f64::consts::PI * h / (2.0 * l)).sin();
    4.0 / (h * h) * s * s
}

/// Decay rate of eigenmode (m1, m2) of the unit-coefficient operator:
/// `sum_d (4 / h_d^2) sin^2(m_d pi h_d / (2 l_d))`.
pub fn eigenmode_decay_rate(grid: &Grid2D, mode: (usize, usize)) -> Result<f64, ModelError> {
    let (m1, m2) = mode;
    if m1 < 1 || m1 > grid.n1 - 1 || m2 < 1 || m2 > grid.n2 - 1 {
        return Err(ModelError::ModeOutOfRange {
            m1,
            m2,
            n1: grid.n1,
            n2: grid.n2,
        });
    }
    let s1 = (m1 as f64 * std::f64::consts::PI * grid.h1() / (2.0 * grid.l1)).sin();
    let s2 = (m2 as f64 * std::f64::consts::PI * grid.h2() / (2.0 * grid.l2)).sin();
    Ok(4.0 / (grid.h1() * grid.h1()) * s1 * s1 + 4.0 / (grid.h2() * grid.h2()) * s2 * s2)
}

/// Exact semi-discrete solution `exp(-lambda t) * v` for the
/// unit-coefficient operator, where `v` is the sine-product eigenvector of
/// mode (m1, m2) and `lambda` its decay rate.
pub fn eigenmode_reference(
    grid: &Grid2D,
    mode: (usize, usize),
    t: f64,
) -> Result<GridFunction, ModelError> {
    let lambda = eigenmode_decay_rate(grid, mode)?;
    let (m1, m2) = mode;
    let amplitude = (-lambda * t).exp();
    let mut values = vec![0.0; grid.interior_len()];
    for (idx, (i1, i2)) in grid.interior_nodes() {
        let s1 = (m1 as f64 * std::f64::consts::PI * i1 as f64 / grid.n1 as f64).sin();
        let s2 = (m2 as f64 * std::f64::consts::PI * i2 as f64 / grid.n2 as f64).sin();
        values[idx] = amplitude * s1 * s2;
    }
    Ok(GridFunction::from_vec(values))
}
