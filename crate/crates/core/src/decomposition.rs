//! Additive operator decompositions driven by partitions of unity.
//!
//! A problem operator A is split into summands A_1 + ... + A_p by one of
//! four constructions: directional (stencil terms grouped by direction),
//! diagonal scaling (chi_a * A or A * chi_a), factorized (D* R_a D on the
//! edge space of the gradient factor), and restriction into component
//! spaces (G_a with sum G_a* G_a = I). Every constructor verifies its
//! reconstruction identity before returning.

use thiserror::Error;

use crate::linalg::{GridFunction, LinalgError, SparseOperator};
use crate::model::{
    assemble_directional_parts, assemble_operator, edge_mid_x1, edge_mid_x2, Coefficient, Grid2D,
    ModelError,
};

/// Absolute tolerance for partition identities (sum chi = 1, sum R = I,
/// sum G*G = I).
pub const PARTITION_TOL: f64 = 1e-14;

/// Relative tolerance for operator reconstruction (sum A_a = A).
pub const RECONSTRUCTION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompositionError {
    #[error("partition weight {value:.3e} at component {component}, node {node} is negative")]
    NegativeWeight {
        component: usize,
        node: usize,
        value: f64,
    },
    #[error(
        "partition weights at node {node} sum to {sum} (expected 1 within {PARTITION_TOL:.0e})"
    )]
    PartitionSumOffUnity { node: usize, sum: f64 },
    #[error("partition needs at least one component")]
    EmptyPartition,
    #[error("component {component} has inconsistent length {got} (expected {expected})")]
    ComponentLength {
        component: usize,
        got: usize,
        expected: usize,
    },
    #[error("{count} strips of width about {width} cannot host an overlap of {overlap} nodes")]
    StripsTooThin {
        count: usize,
        width: usize,
        overlap: usize,
    },
    #[error("cannot place {strips} strips on {columns} interior columns")]
    TooManyStrips { strips: usize, columns: usize },
    #[error("reconstruction failed: max |sum A_a - A| = {deviation:.3e} exceeds {tol:.3e}")]
    ReconstructionFailed { deviation: f64, tol: f64 },
    #[error("restriction family lives on dimension {got}, operator needs {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

// ---------------------------------------------------------------------------
// Partition of unity
// ---------------------------------------------------------------------------

/// Family of nonnegative nodal weight vectors chi_a with sum_a chi_a = 1 at
/// every node.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOfUnity {
    chi: Vec<Vec<f64>>,
}

impl PartitionOfUnity {
    pub fn new(chi: Vec<Vec<f64>>) -> Result<Self, DecompositionError> {
        if chi.is_empty() {
            return Err(DecompositionError::EmptyPartition);
        }
        let n = chi[0].len();
        for (a, w) in chi.iter().enumerate() {
            if w.len() != n {
                return Err(DecompositionError::ComponentLength {
                    component: a,
                    got: w.len(),
                    expected: n,
                });
            }
            for (i, &v) in w.iter().enumerate() {
                if v < 0.0 || !v.is_finite() {
                    return Err(DecompositionError::NegativeWeight {
                        component: a,
                        node: i,
                        value: v,
                    });
                }
            }
        }
        for i in 0..n {
            let sum: f64 = chi.iter().map(|w| w[i]).sum();
            if (sum - 1.0).abs() > PARTITION_TOL {
                return Err(DecompositionError::PartitionSumOffUnity { node: i, sum });
            }
        }
        Ok(Self { chi })
    }

    /// Single-component partition chi_1 = 1.
    pub fn trivial(len: usize) -> Self {
        Self {
            chi: vec![vec![1.0; len]],
        }
    }

    pub fn count(&self) -> usize {
        self.chi.len()
    }

    pub fn len(&self) -> usize {
        self.chi[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weights(&self, component: usize) -> &[f64] {
        &self.chi[component]
    }
}

/// Weight profile across strip boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StripProfile {
    /// 0/1 indicator strips, no overlap.
    Hard,
    /// Affine ramp across the overlap window at each internal boundary.
    Linear,
}

/// Partition the interior columns (first direction) into `p` strips.
///
/// With [`StripProfile::Hard`] each interior column belongs to exactly one
/// strip. With [`StripProfile::Linear`] an overlap window of `overlap_nodes`
/// columns straddles each internal boundary and the weights ramp affinely
/// from 1 to 0 across it (`overlap_nodes = 0` degenerates to the hard
/// profile). Weights depend on the column index only.
pub fn build_strip_partition(
    grid: &Grid2D,
    p: usize,
    overlap_nodes: usize,
    profile: StripProfile,
) -> Result<PartitionOfUnity, DecompositionError> {
    if p == 0 {
        return Err(DecompositionError::EmptyPartition);
    }
    let columns = grid.n1() - 1;
    if p > columns {
        return Err(DecompositionError::TooManyStrips { strips: p, columns });
    }
    // Column weights per strip, 0-based column c = i1 - 1.
    let base = columns / p;
    let rem = columns % p;
    let mut chunk_end = Vec::with_capacity(p); // exclusive ends
    let mut acc = 0;
    for a in 0..p {
        acc += base + usize::from(a < rem);
        chunk_end.push(acc);
    }
    let mut col_weights = vec![vec![0.0f64; columns]; p];
    let mut start = 0;
    for (weights, &end) in col_weights.iter_mut().zip(&chunk_end) {
        for w in &mut weights[start..end] {
            *w = 1.0;
        }
        start = end;
    }
    let overlap = match profile {
        StripProfile::Hard => 0,
        StripProfile::Linear => overlap_nodes,
    };
    if overlap > 0 {
        let half_left = overlap.div_ceil(2);
        let half_right = overlap / 2;
        let mut prev_window_end: isize = -1;
        for a in 0..p - 1 {
            let boundary = chunk_end[a]; // first column of strip a + 1
            let w_start = boundary as isize - half_left as isize;
            let w_end = boundary as isize + half_right as isize; // exclusive
            let strip_start = if a == 0 { 0 } else { chunk_end[a - 1] };
            let thin = w_start < strip_start as isize
                || w_end > chunk_end[a + 1] as isize
                || w_start <= prev_window_end;
            if thin {
                return Err(DecompositionError::StripsTooThin {
                    count: p,
                    width: base,
                    overlap: overlap_nodes,
                });
            }
            for (j, c) in (w_start..w_end).enumerate() {
                let ramp = (overlap - j) as f64 / (overlap + 1) as f64;
                let c = c as usize;
                for w in col_weights.iter_mut() {
                    w[c] = 0.0;
                }
                col_weights[a][c] = ramp;
                col_weights[a + 1][c] = 1.0 - ramp;
            }
            prev_window_end = w_end - 1;
        }
    }
    // Replicate the column weights over every interior row.
    let n = grid.interior_len();
    let mut chi = vec![vec![0.0f64; n]; p];
    for (idx, (i1, _)) in grid.interior_nodes() {
        for a in 0..p {
            chi[a][idx] = col_weights[a][i1 - 1];
        }
    }
    PartitionOfUnity::new(chi)
}

// ---------------------------------------------------------------------------
// Operator families
// ---------------------------------------------------------------------------

/// Which construction produced an operator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    /// Stencil terms grouped by coordinate direction.
    Directional,
    /// Row scaling chi_a * A.
    ChiA,
    /// Column scaling A * chi_a.
    AChi,
    /// Row scaling R_a * A by a diagonal restriction family.
    RA,
    /// Column scaling A * R_a.
    AR,
    /// Factorized D* R_a D with symmetric nonnegative summands.
    Drd,
    /// Symmetrized split of a skew-symmetric part: (R_a C + C R_a) / 2.
    SkewSplit,
}

/// Additive family A_1 + ... + A_p = A. Construction verifies the
/// reconstruction identity against the base operator.
#[derive(Debug, Clone)]
pub struct OperatorFamily {
    kind: FamilyKind,
    summands: Vec<SparseOperator>,
    selfadjoint_summands: bool,
}

impl OperatorFamily {
    /// Wrap verified summands. `base` is the operator the summands must
    /// reconstruct entrywise within [`RECONSTRUCTION_TOL`] relative.
    pub fn new(
        kind: FamilyKind,
        summands: Vec<SparseOperator>,
        base: &SparseOperator,
        selfadjoint_summands: bool,
    ) -> Result<Self, DecompositionError> {
        if summands.is_empty() {
            return Err(DecompositionError::EmptyPartition);
        }
        let mut sum = summands[0].clone();
        for s in &summands[1..] {
            sum = sum.add_scaled(1.0, s)?;
        }
        let deviation = sum.max_abs_diff(base);
        let tol = RECONSTRUCTION_TOL * base.max_abs_value().max(f64::MIN_POSITIVE);
        if deviation > tol {
            return Err(DecompositionError::ReconstructionFailed { deviation, tol });
        }
        Ok(Self {
            kind,
            summands,
            selfadjoint_summands,
        })
    }

    /// Single-summand family {A}.
    pub fn trivial(a: &SparseOperator) -> Self {
        Self {
            kind: FamilyKind::RA,
            summands: vec![a.clone()],
            selfadjoint_summands: a.is_symmetric_flagged(),
        }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn count(&self) -> usize {
        self.summands.len()
    }

    pub fn summand(&self, a: usize) -> &SparseOperator {
        &self.summands[a]
    }

    pub fn summands(&self) -> &[SparseOperator] {
        &self.summands
    }

    pub fn selfadjoint_summands(&self) -> bool {
        self.selfadjoint_summands
    }

    pub fn dim(&self) -> usize {
        self.summands[0].rows()
    }
}

/// Directional two-component split of the model operator: first-direction
/// stencil terms in one summand, second-direction terms in the other. Both
/// are symmetric positive semidefinite and sum to the assembled operator
/// bitwise.
pub fn split_directional(
    grid: &Grid2D,
    k: &Coefficient,
) -> Result<OperatorFamily, DecompositionError> {
    let a = assemble_operator(grid, k)?;
    let (a1, a2) = assemble_directional_parts(grid, k)?;
    OperatorFamily::new(FamilyKind::Directional, vec![a1, a2], &a, true)
}

/// Side of the diagonal scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingSide {
    /// A_a = chi_a A (row scaling).
    Left,
    /// A_a = A chi_a (column scaling).
    Right,
}

fn scaled_family(
    a: &SparseOperator,
    weights: &[Vec<f64>],
    side: ScalingSide,
    kind: FamilyKind,
) -> Result<OperatorFamily, DecompositionError> {
    let n = a.rows();
    for (c, w) in weights.iter().enumerate() {
        if w.len() != n {
            return Err(DecompositionError::ComponentLength {
                component: c,
                got: w.len(),
                expected: n,
            });
        }
    }
    let summands: Vec<SparseOperator> = weights
        .iter()
        .map(|w| match side {
            ScalingSide::Left => a.scale_rows(w),
            ScalingSide::Right => a.scale_cols(w),
        })
        .collect();
    // chi_a A is symmetric only when the weight is constant across every
    // stored coupling, e.g. a hard indicator whose supports do not touch.
    let selfadjoint = a.is_symmetric_flagged()
        && weights
            .iter()
            .all(|w| a.triplets().all(|(i, j, v)| v == 0.0 || w[i] == w[j]));
    let summands = if selfadjoint {
        summands.into_iter().map(|s| s.assume_symmetric()).collect()
    } else {
        summands
    };
    OperatorFamily::new(kind, summands, a, selfadjoint)
}

/// Decompose by nodal partition weights: A_a = chi_a A (left) or A chi_a
/// (right). Summands are generally not symmetric.
pub fn decompose_chi(
    a: &SparseOperator,
    pou: &PartitionOfUnity,
    side: ScalingSide,
) -> Result<OperatorFamily, DecompositionError> {
    let kind = match side {
        ScalingSide::Left => FamilyKind::ChiA,
        ScalingSide::Right => FamilyKind::AChi,
    };
    scaled_family(a, &pou.chi, side, kind)
}

/// Decompose through a diagonal restriction family: A_a = R_a A or A R_a.
pub fn decompose_restricted(
    a: &SparseOperator,
    family: &RestrictionFamily,
    side: ScalingSide,
) -> Result<OperatorFamily, DecompositionError> {
    let kind = match side {
        ScalingSide::Left => FamilyKind::RA,
        ScalingSide::Right => FamilyKind::AR,
    };
    scaled_family(a, &family.weights, side, kind)
}

// ---------------------------------------------------------------------------
// Diagonal restriction families
// ---------------------------------------------------------------------------

/// Diagonal operators R_a >= 0 with sum R_a = I, each carried as a nodal
/// weight vector plus an explicit support index set.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionFamily {
    weights: Vec<Vec<f64>>,
    supports: Vec<Vec<usize>>,
}

impl RestrictionFamily {
    /// Validates nonnegativity and the identity decomposition; supports
    /// default to the strictly positive entries.
    pub fn new(
        weights: Vec<Vec<f64>>,
        supports: Option<Vec<Vec<usize>>>,
    ) -> Result<Self, DecompositionError> {
        // Same invariants as a partition of unity.
        let pou = PartitionOfUnity::new(weights)?;
        let weights = pou.chi;
        let supports = match supports {
            Some(s) => s,
            None => weights
                .iter()
                .map(|w| {
                    w.iter()
                        .enumerate()
                        .filter(|(_, &v)| v > 0.0)
                        .map(|(i, _)| i)
                        .collect()
                })
                .collect(),
        };
        Ok(Self { weights, supports })
    }

    pub fn from_partition(pou: &PartitionOfUnity) -> Self {
        Self::new(pou.chi.clone(), None).expect("partition invariants already verified")
    }

    /// Identity split on the edge space of a gradient factor: R_1 selects
    /// the first-direction block, R_2 the second.
    pub fn direction_blocks(factored: &FactorizedForm) -> Self {
        let (n1e, n2e) = (factored.x1_edge_count, factored.x2_edge_count);
        let total = n1e + n2e;
        let mut w1 = vec![0.0; total];
        let mut w2 = vec![0.0; total];
        for v in w1.iter_mut().take(n1e) {
            *v = 1.0;
        }
        for v in w2.iter_mut().skip(n1e) {
            *v = 1.0;
        }
        Self::new(vec![w1, w2], None).expect("block indicators form a partition")
    }

    /// Carry a nodal partition onto the edge space of a gradient factor:
    /// an edge inherits the mean weight of its interior endpoints (the
    /// single interior endpoint for boundary edges), identically on both
    /// direction blocks.
    pub fn on_edges(
        factored: &FactorizedForm,
        pou: &PartitionOfUnity,
    ) -> Result<Self, DecompositionError> {
        let grid = &factored.grid;
        if pou.len() != grid.interior_len() {
            return Err(DecompositionError::DimensionMismatch {
                got: pou.len(),
                expected: grid.interior_len(),
            });
        }
        let total = factored.x1_edge_count + factored.x2_edge_count;
        let mut weights = vec![vec![0.0f64; total]; pou.count()];
        for (a, component) in weights.iter_mut().enumerate() {
            let chi = pou.weights(a);
            for (row, ends) in factored.edge_endpoints().enumerate() {
                component[row] = match ends {
                    (Some(i), Some(j)) => 0.5 * (chi[i] + chi[j]),
                    (Some(i), None) | (None, Some(i)) => chi[i],
                    (None, None) => unreachable!("every edge touches an interior node"),
                };
            }
        }
        Self::new(weights, None)
    }

    pub fn count(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn weights(&self, a: usize) -> &[f64] {
        &self.weights[a]
    }

    pub fn support(&self, a: usize) -> &[usize] {
        &self.supports[a]
    }

    /// The diagonal operator R_a.
    pub fn operator(&self, a: usize) -> SparseOperator {
        SparseOperator::diagonal(&self.weights[a])
    }

    /// sum_a R_a y_a in fixed component order.
    pub fn compose(&self, components: &[GridFunction]) -> GridFunction {
        assert_eq!(components.len(), self.count(), "compose: component count");
        let mut out = GridFunction::zeros(self.dim());
        for (w, y) in self.weights.iter().zip(components) {
            for i in 0..self.dim() {
                out[i] += w[i] * y[i];
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Component-space restrictions
// ---------------------------------------------------------------------------

/// Restrictions G_a into component spaces H_a: node selection on the
/// support of chi_a composed with scaling by chi_a^{1/2}, so that
/// sum_a G_a* G_a = I.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceRestrictionFamily {
    full_dim: usize,
    /// Per component: support node indices and sqrt weights, aligned.
    maps: Vec<(Vec<usize>, Vec<f64>)>,
}

/// Build the component-space restrictions from a partition of unity.
pub fn build_space_restrictions(pou: &PartitionOfUnity) -> SpaceRestrictionFamily {
    let maps = (0..pou.count())
        .map(|a| {
            let chi = pou.weights(a);
            let indices: Vec<usize> = (0..chi.len()).filter(|&i| chi[i] > 0.0).collect();
            let sqrt_weights: Vec<f64> = indices.iter().map(|&i| chi[i].sqrt()).collect();
            (indices, sqrt_weights)
        })
        .collect();
    SpaceRestrictionFamily {
        full_dim: pou.len(),
        maps,
    }
}

impl SpaceRestrictionFamily {
    pub fn count(&self) -> usize {
        self.maps.len()
    }

    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    /// Dimension of the component space H_a.
    pub fn component_dim(&self, a: usize) -> usize {
        self.maps[a].0.len()
    }

    /// G_a u: select support nodes and scale by chi_a^{1/2}.
    pub fn restrict(&self, a: usize, u: &GridFunction) -> GridFunction {
        let (indices, sw) = &self.maps[a];
        let mut out = GridFunction::zeros(indices.len());
        for (slot, (&i, &w)) in indices.iter().zip(sw).enumerate() {
            out[slot] = w * u[i];
        }
        out
    }

    /// G_a* v: scatter back to the full space.
    pub fn prolong(&self, a: usize, v: &GridFunction) -> GridFunction {
        let (indices, sw) = &self.maps[a];
        assert_eq!(v.len(), indices.len(), "prolong: component length");
        let mut out = GridFunction::zeros(self.full_dim);
        for (slot, (&i, &w)) in indices.iter().zip(sw).enumerate() {
            out[i] = w * v[slot];
        }
        out
    }

    /// G_a as an explicit sparse operator (component_dim x full_dim).
    pub fn operator(&self, a: usize) -> SparseOperator {
        let (indices, sw) = &self.maps[a];
        let triplets: Vec<(usize, usize, f64)> = indices
            .iter()
            .zip(sw)
            .enumerate()
            .map(|(slot, (&i, &w))| (slot, i, w))
            .collect();
        SparseOperator::from_triplets(indices.len(), self.full_dim, &triplets, false)
            .expect("restriction triplets are in range")
    }

    /// G_a A G_a*, the component-space image of a full-space operator.
    pub fn conjugate(
        &self,
        a: usize,
        op: &SparseOperator,
    ) -> Result<SparseOperator, DecompositionError> {
        if op.cols() != self.full_dim {
            return Err(DecompositionError::DimensionMismatch {
                got: op.cols(),
                expected: self.full_dim,
            });
        }
        let g = self.operator(a);
        let gag = g.matmul(&op.matmul(&g.transpose())?)?;
        Ok(if op.is_symmetric_flagged() {
            gag.assume_symmetric()
        } else {
            gag
        })
    }

    /// sum_a G_a* y_a in fixed component order.
    pub fn compose(&self, components: &[GridFunction]) -> GridFunction {
        assert_eq!(components.len(), self.count(), "compose: component count");
        let mut out = GridFunction::zeros(self.full_dim);
        for (a, y) in components.iter().enumerate() {
            let (indices, sw) = &self.maps[a];
            for (slot, (&i, &w)) in indices.iter().zip(sw).enumerate() {
                out[i] += w * y[slot];
            }
        }
        out
    }

    /// Split an initial state into components y_a = G_a u.
    pub fn restrict_all(&self, u: &GridFunction) -> Vec<GridFunction> {
        (0..self.count()).map(|a| self.restrict(a, u)).collect()
    }
}

// ---------------------------------------------------------------------------
// Factorized form
// ---------------------------------------------------------------------------

/// Gradient factor D of the model operator: A = D* D, with D mapping
/// interior nodal functions to edge functions (one block per direction,
/// edges scaled by k^{1/2} over the step).
#[derive(Debug, Clone)]
pub struct FactorizedForm {
    grid: Grid2D,
    d: SparseOperator,
    d_adjoint: SparseOperator,
    base: SparseOperator,
    x1_edge_count: usize,
    x2_edge_count: usize,
}

impl FactorizedForm {
    /// Assemble D for the model problem and verify D* D against the
    /// assembled operator.
    pub fn gradient_factor(grid: &Grid2D, k: &Coefficient) -> Result<Self, DecompositionError> {
        let base = assemble_operator(grid, k)?;
        let n = grid.interior_len();
        let (n1, n2) = (grid.n1(), grid.n2());
        let x1_edge_count = n1 * (n2 - 1);
        let x2_edge_count = (n1 - 1) * n2;
        let mut triplets = Vec::new();
        // First-direction edges: row (i2 - 1) * n1 + e, edge e between
        // column nodes e and e + 1 at interior row i2.
        for i2 in 1..n2 {
            for e in 0..n1 {
                let row = (i2 - 1) * n1 + e;
                let mid = edge_mid_x1(grid, e);
                let c = k.eval(mid, i2 as f64 * grid.h2()).sqrt() / grid.h1();
                if e + 1 < n1 {
                    triplets.push((row, grid.node_index(e + 1, i2), c));
                }
                if e >= 1 {
                    triplets.push((row, grid.node_index(e, i2), -c));
                }
            }
        }
        // Second-direction edges: row offset past the first block.
        for i1 in 1..n1 {
            for e in 0..n2 {
                let row = x1_edge_count + (i1 - 1) * n2 + e;
                let mid = edge_mid_x2(grid, e);
                let c = k.eval(i1 as f64 * grid.h1(), mid).sqrt() / grid.h2();
                if e + 1 < n2 {
                    triplets.push((row, grid.node_index(i1, e + 1), c));
                }
                if e >= 1 {
                    triplets.push((row, grid.node_index(i1, e), -c));
                }
            }
        }
        let d = SparseOperator::from_triplets(x1_edge_count + x2_edge_count, n, &triplets, false)?;
        let d_adjoint = d.transpose();
        let gram = d_adjoint.matmul(&d)?;
        let deviation = gram.max_abs_diff(&base);
        let tol = RECONSTRUCTION_TOL * base.max_abs_value();
        if deviation > tol {
            return Err(DecompositionError::ReconstructionFailed { deviation, tol });
        }
        Ok(Self {
            grid: *grid,
            d,
            d_adjoint,
            base,
            x1_edge_count,
            x2_edge_count,
        })
    }

    pub fn factor(&self) -> &SparseOperator {
        &self.d
    }

    pub fn adjoint(&self) -> &SparseOperator {
        &self.d_adjoint
    }

    /// The operator A = D* D that the factorization reproduces.
    pub fn operator(&self) -> &SparseOperator {
        &self.base
    }

    pub fn range_dim(&self) -> usize {
        self.x1_edge_count + self.x2_edge_count
    }

    pub fn x1_edges(&self) -> usize {
        self.x1_edge_count
    }

    pub fn x2_edges(&self) -> usize {
        self.x2_edge_count
    }

    /// Interior endpoints of each edge row, `None` for a boundary endpoint.
    fn edge_endpoints(&self) -> impl Iterator<Item = (Option<usize>, Option<usize>)> + '_ {
        let grid = self.grid;
        let (n1, n2) = (grid.n1(), grid.n2());
        let horizontals = (1..n2).flat_map(move |i2| {
            (0..n1).map(move |e| {
                let left = (e >= 1).then(|| grid.node_index(e, i2));
                let right = (e + 1 < n1).then(|| grid.node_index(e + 1, i2));
                (left, right)
            })
        });
        let verticals = (1..n1).flat_map(move |i1| {
            (0..n2).map(move |e| {
                let below = (e >= 1).then(|| grid.node_index(i1, e));
                let above = (e + 1 < n2).then(|| grid.node_index(i1, e + 1));
                (below, above)
            })
        });
        horizontals.chain(verticals)
    }
}

/// Factorized decomposition A_a = D* R_a D. Every summand is symmetric
/// positive semidefinite by construction.
pub fn decompose_drd(
    factored: &FactorizedForm,
    edge_family: &RestrictionFamily,
) -> Result<OperatorFamily, DecompositionError> {
    if edge_family.dim() != factored.range_dim() {
        return Err(DecompositionError::DimensionMismatch {
            got: edge_family.dim(),
            expected: factored.range_dim(),
        });
    }
    let summands: Vec<SparseOperator> = (0..edge_family.count())
        .map(|a| {
            let rd = factored.d.scale_rows(edge_family.weights(a));
            factored
                .d_adjoint
                .matmul(&rd)
                .map(SparseOperator::assume_symmetric)
        })
        .collect::<Result<_, _>>()?;
    OperatorFamily::new(FamilyKind::Drd, summands, &factored.base, true)
}

// ---------------------------------------------------------------------------
// Skew-symmetric splitting
// ---------------------------------------------------------------------------

/// Split a possibly nonsymmetric operator into B + C with B = (A + A*) / 2
/// decomposed by diagonal scaling on the chosen side and C = (A - A*) / 2
/// decomposed as C_a = (R_a C + C R_a) / 2, which keeps every skew summand
/// exactly skew-symmetric.
pub fn skew_split(
    a: &SparseOperator,
    pou: &PartitionOfUnity,
    symmetric_side: ScalingSide,
) -> Result<(OperatorFamily, OperatorFamily), DecompositionError> {
    let at = a.transpose();
    let b = a.add_scaled(1.0, &at)?.scaled(0.5).assume_symmetric();
    let c = a.add_scaled(-1.0, &at)?.scaled(0.5);
    let b_family = decompose_chi(&b, pou, symmetric_side)?;
    let c_summands: Vec<SparseOperator> = (0..pou.count())
        .map(|alpha| {
            let chi = pou.weights(alpha);
            let left = c.scale_rows(chi);
            let right = c.scale_cols(chi);
            left.add_scaled(1.0, &right).map(|s| s.scaled(0.5))
        })
        .collect::<Result<_, _>>()?;
    let c_family = OperatorFamily::new(FamilyKind::SkewSplit, c_summands, &c, false)?;
    // The two families must jointly reconstruct A itself.
    let mut total = b_family.summands[0].clone();
    for s in &b_family.summands[1..] {
        total = total.add_scaled(1.0, s)?;
    }
    for s in &c_family.summands {
        total = total.add_scaled(1.0, s)?;
    }
    let deviation = total.max_abs_diff(a);
    let tol = RECONSTRUCTION_TOL * a.max_abs_value().max(f64::MIN_POSITIVE);
    if deviation > tol {
        return Err(DecompositionError::ReconstructionFailed { deviation, tol });
    }
    Ok((b_family, c_family))
}
