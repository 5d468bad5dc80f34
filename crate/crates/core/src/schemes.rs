//! Time-stepping compositions over additive operator families.
//!
//! Every step function is pure: it maps the state at one time level to the
//! next, with all configuration passed explicitly. Implicit sub-problems go
//! through a single conjugate-gradient core; shifted operators with
//! nonsymmetric summands are solved through the normal equations. Sums over
//! family components always run in fixed index order.

use thiserror::Error;

use crate::decomposition::{OperatorFamily, RestrictionFamily, SpaceRestrictionFamily};
use crate::linalg::{cg_solve, cgnr_solve, GridFunction, LinalgError, SparseOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error(transparent)]
    Solver(#[from] LinalgError),
    #[error("state has {got} entries, operator needs {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("forcing split into {got} parts, family has {expected} components")]
    ForcingPartsMismatch { got: usize, expected: usize },
    #[error("state carries {got} components, family has {expected}")]
    ComponentCountMismatch { got: usize, expected: usize },
    #[error("restriction component {component} has zero weight at declared support node {node}")]
    SingularRestriction { component: usize, node: usize },
    #[error("scheme requires weight sigma = {expected}, got {got}")]
    UnsupportedWeight { expected: f64, got: f64 },
    #[error("step produced a non-finite entry")]
    NonFiniteState,
}

/// Every step hands its result through this gate so that a successful
/// return implies a finite state.
fn finite(y: GridFunction) -> Result<GridFunction, SchemeError> {
    if y.all_finite() {
        Ok(y)
    } else {
        Err(SchemeError::NonFiniteState)
    }
}

/// Scheme identifiers with their stability-threshold metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Weighted,
    Factorized,
    Componentwise,
    ComponentwiseSymmetrized,
    AdditiveAveraged,
    Regularized,
    VectorAdditive,
    SubdomainLagged,
    SubdomainComposed,
    ComponentSpace,
    ComponentSpaceThreeLevel,
    SecondOrderRegularized,
    SystemRowSplit,
    SystemColumnSplit,
}

impl SchemeKind {
    /// Smallest weight sigma for which the scheme's certified a-priori
    /// estimate holds for a p-component family, or `None` when no threshold
    /// is claimed (the purely implicit system sweeps).
    pub fn stability_threshold(&self, p: usize) -> Option<f64> {
        let p = p as f64;
        match self {
            SchemeKind::Weighted
            | SchemeKind::Factorized
            | SchemeKind::Componentwise
            | SchemeKind::ComponentwiseSymmetrized
            | SchemeKind::AdditiveAveraged => Some(0.5),
            SchemeKind::Regularized
            | SchemeKind::VectorAdditive
            | SchemeKind::SubdomainLagged
            | SchemeKind::SubdomainComposed
            | SchemeKind::ComponentSpace => Some(0.5 * p),
            SchemeKind::ComponentSpaceThreeLevel | SchemeKind::SecondOrderRegularized => {
                Some(0.25 * p)
            }
            SchemeKind::SystemRowSplit | SchemeKind::SystemColumnSplit => None,
        }
    }
}

/// Weight, step size, step count, and solver settings for a scheme run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub sigma: f64,
    pub tau: f64,
    pub steps: usize,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, sigma: f64, tau: f64, steps: usize) -> Self {
        assert!(tau > 0.0 && tau.is_finite(), "time step must be positive");
        Self {
            kind,
            sigma,
            tau,
            steps,
            solver_tol: 1e-13,
            solver_max_iter: 50_000,
        }
    }

    pub fn with_solver(mut self, tol: f64, max_iter: usize) -> Self {
        self.solver_tol = tol;
        self.solver_max_iter = max_iter;
        self
    }

    pub fn stability_threshold(&self, p: usize) -> Option<f64> {
        self.kind.stability_threshold(p)
    }
}

/// Solve the shifted system `m * x = rhs`, dispatching on the symmetry flag:
/// plain conjugate gradients for symmetric operators, normal equations
/// otherwise.
fn implicit_solve(
    m: &SparseOperator,
    rhs: &GridFunction,
    guess: Option<&GridFunction>,
    cfg: &SchemeConfig,
) -> Result<GridFunction, SchemeError> {
    let x = if m.is_symmetric_flagged() {
        cg_solve(m, rhs, guess, cfg.solver_tol, cfg.solver_max_iter)?
    } else {
        cgnr_solve(m, rhs, guess, cfg.solver_tol, cfg.solver_max_iter)?
    };
    Ok(x)
}

/// One two-level weighted transition with operator `a` and step `tau_sub`:
/// `(I + sigma tau A) y' = (I - (1 - sigma) tau A) y + tau f`.
/// `sigma = 0` is fully explicit and performs no solve.
fn two_level_substep(
    a: &SparseOperator,
    y: &GridFunction,
    f: Option<&GridFunction>,
    sigma: f64,
    tau_sub: f64,
    cfg: &SchemeConfig,
) -> Result<GridFunction, SchemeError> {
    let ay = a.apply(y)?;
    let mut rhs = y.clone();
    rhs.axpy(-(1.0 - sigma) * tau_sub, &ay);
    if let Some(f) = f {
        rhs.axpy(tau_sub, f);
    }
    if sigma == 0.0 {
        return finite(rhs);
    }
    let m = a.shift_identity(sigma * tau_sub)?;
    finite(implicit_solve(&m, &rhs, Some(y), cfg)?)
}

/// Convex combination `sigma * f_np1 + (1 - sigma) * f_n` of the forcing at
/// the two surrounding time levels.
pub fn forcing_at_weight(
    f_n: Option<&GridFunction>,
    f_np1: Option<&GridFunction>,
    sigma: f64,
) -> Option<GridFunction> {
    match (f_n, f_np1) {
        (None, None) => None,
        _ => {
            let len = f_n.or(f_np1).unwrap().len();
            let mut out = GridFunction::zeros(len);
            if let Some(f) = f_n {
                out.axpy(1.0 - sigma, f);
            }
            if let Some(f) = f_np1 {
                out.axpy(sigma, f);
            }
            Some(out)
        }
    }
}

// ---------------------------------------------------------------------------
// Two-level scheme with weights
// ---------------------------------------------------------------------------

/// Weighted two-level step for the full operator.
pub fn weighted_step(
    a: &SparseOperator,
    y_n: &GridFunction,
    f_n: Option<&GridFunction>,
    f_np1: Option<&GridFunction>,
    cfg: &SchemeConfig,
) -> Result<GridFunction, SchemeError> {
    let f_sigma = forcing_at_weight(f_n, f_np1, cfg.sigma);
    two_level_substep(a, y_n, f_sigma.as_ref(), cfg.sigma, cfg.tau, cfg)
}

// ---------------------------------------------------------------------------
// Factorized two-component scheme
// ---------------------------------------------------------------------------

/// Factorized step: the transition operator is the product
/// `(I + sigma tau A1)(I + sigma tau A2)` applied to the increment, so each
/// step costs two shifted solves. `f` is the forcing already combined at the
/// weight point.
pub fn factorized_step(
    a1: &SparseOperator,
    a2: &SparseOperator,
    y_n: &GridFunction,
    f: Option<&GridFunction>,
    cfg: &SchemeConfig,
) -> Result<GridFunction, SchemeError> {
    let mut rhs = GridFunction::zeros(y_n.len());
    rhs.axpy(-cfg.tau, &a1.apply(y_n)?);
    rhs.axpy(-cfg.tau, &a2.apply(y_n)?);
    if let Some(f) = f {
        rhs.axpy(cfg.tau, f);
    }
    if cfg.sigma == 0.0 {
        let mut y = y_n.clone();
        y.axpy(1.0, &rhs);
        return finite(y);
    }
    let m1 = a1.shift_identity(cfg.sigma * cfg.tau)?;
    let m2 = a2.shift_identity(cfg.sigma * cfg.tau)?;
    let w = implicit_solve(&m1, &rhs, None, cfg)?;
    let d = implicit_solve(&m2, &w, None, cfg)?;
    let mut y = y_n.clone();
    y.axpy(1.0, &d);
    finite(y)
}

// ---------------------------------------------------------------------------
// Component-wise splitting
// ---------------------------------------------------------------------------

/// Sweep order for component-wise splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrdering {
    /// One weighted sub-step per component, first to last.
    Forward,
    /// Symmetrized double sweep with halved sub-steps:
    /// first to last, then last to first.
    Symmetric,
}

fn check_forcing_parts(f_parts: Option<&[GridFunction]>, p: usize) -> Result<(), SchemeError> {
    if let Some(parts) = f_parts {
        if parts.len() != p {
            return Err(SchemeError::ForcingPartsMismatch {
                got: parts.len(),
                expected: p,
            });
        }
    }
    Ok(())
}

/// Component-wise splitting: sequential weighted sub-steps, one per
/// component (two per component with halved steps for the symmetric order).
/// `f_parts` are the per-component forcings at the weight point; their sum
/// is the total forcing.
pub fn componentwise_sweep(
    family: &OperatorFamily,
    y_n: &GridFunction,
    f_parts: Option<&[GridFunction]>,
    ordering: SweepOrdering,
    cfg: &SchemeConfig,
) -> Result<GridFunction, SchemeError> {
    let p = family.count();
    check_forcing_parts(f_parts, p)?;
    let part = |a: usize| f_parts.map(|parts| &parts[a]);
    let mut y = y_n.clone();
    match ordering {
        SweepOrdering::Forward => {
            for a in 0..p {
                y = two_level_substep(family.summand(a), &y, part(a), cfg.sigma, cfg.tau, cfg)?;
            }
        }
        SweepOrdering::Symmetric => {
            let half = 0.5 * cfg.tau;
            for a in 0..p {
                y = two_level_substep(family.summand(a), &y, part(a), cfg.sigma, half, cfg)?;
            }
            for a in (0..p).rev() {
                y = two_level_substep(family.summand(a), &y, part(a), cfg.sigma, half, cfg)?;
            }
        }
    }
    Ok(y)
}

// ---------------------------------------------------------------------------
// Additive-averaged scheme
// ---------------------------------------------------------------------------

/// Additive-averaged step: p independent weighted sub-steps of length
/// `p * tau` from the shared level, averaged in fixed component order.
pub fn additive_averaged_step(
    family: &OperatorFamily,
    y_n: &GridFunction,
    f_parts: Option<&[GridFunction]>,
    cfg: &SchemeConfig,
) -> Result<GridFunction, SchemeError> {
    let p = family.count();
    check_forcing_parts(f_parts, p)?;
    let stretched = p as f64 * cfg.tau;
    let mut sum = GridFunction::zeros(y_n.len());
    for a in 0..p {
        let f = f_parts.map(|parts| &parts[a]);
        let y_a = two_level_substep(family.summand(a), y_n, f, cfg.sigma, stretched, cfg)?;
        sum.axpy(1.0, &y_a);
    }
    sum.scale(1.0 / p as f64);
    Ok(sum)
}

// ---------------------------------------------------------------------------
// Regularized additive scheme
// ---------------------------------------------------------------------------

fn regularized_increments(
    family: &OperatorFamily,
    y_n: &GridFunction,
    shift: f64,
    cfg: &SchemeConfig,
) -> Result<Vec<GridFunction>, SchemeError> {
    (0..family.count())
        .map(|a| {
            let a_op = family.summand(a);
            let ay = a_op.apply(y_n)?;
            if cfg.sigma == 0.0 {
                return Ok(ay);
            }
            let m = a_op.shift_identity(cfg.sigma * shift)?;
            implicit_solve(&m, &ay, None, cfg)
        })
        .collect()
}

/// Regularized additive step: each summand's explicit contribution is
/// damped by the corresponding shifted inverse,
/// `y' = y - tau * sum_a (I + sigma tau A_a)^{-1} A_a y + tau f`.
pub fn regularized_step(
    family: &OperatorFamily,
    y_n: &GridFunction,
    f: Option<&GridFunction>,
    cfg: &SchemeConfig,
) -> Result<GridFunction, SchemeError> {
    let z = regularized_increments(family, y_n, cfg.tau, cfg)?;
    let mut y = y_n.clone();
    for z_a in &z {
        y.axpy(-cfg.tau, z_a);
    }
    if let Some(f) = f {
        y.axpy(cfg.tau, f);
    }
    finite(y)
}

/// Additive-averaged realization of the homogeneous regularized step:
/// components `y_a = y - p tau (I + sigma tau A_a)^{-1} A_a y` are formed
/// independently and averaged. Algebraically identical to
/// [`regularized_step`] with `f = 0`; kept as a second computational route.
pub fn regularized_step_averaged(
    family: &OperatorFamily,
    y_n: &GridFunction,
    cfg: &SchemeConfig,
) -> Result<GridFunction, SchemeError> {
    let p = family.count();
    let z = regularized_increments(family, y_n, cfg.tau, cfg)?;
    let mut sum = GridFunction::zeros(y_n.len());
    for z_a in &z {
        let mut y_a = y_n.clone();
        y_a.axpy(-(p as f64) * cfg.tau, z_a);
        sum.axpy(1.0, &y_a);
    }
    sum.scale(1.0 / p as f64);
    finite(sum)
}

// ---------------------------------------------------------------------------
// Vector additive scheme
// ---------------------------------------------------------------------------

/// Component states y_a of the replicated-unknown schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorState {
    components: Vec<GridFunction>,
}

impl VectorState {
    /// All components start from the shared initial state.
    pub fn replicate(u0: &GridFunction, p: usize) -> Self {
        Self {
            components: vec![u0.clone(); p],
        }
    }

    pub fn from_components(components: Vec<GridFunction>) -> Self {
        assert!(!components.is_empty(), "state needs at least one component");
        Self { components }
    }

    pub fn count(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, a: usize) -> &GridFunction {
        &self.components[a]
    }

    pub fn components(&self) -> &[GridFunction] {
        &self.components
    }
}

/// Vector additive step: every replica is implicit only in its own summand
/// and sees the shared explicit sum `sum_b A_b y_b`.
pub fn vector_additive_step(
    family: &OperatorFamily,
    state: &VectorState,
    f: Option<&GridFunction>,
    cfg: &SchemeConfig,
) -> Result<VectorState, SchemeError> {
    let p = family.count();
    if state.count() != p {
        return Err(SchemeError::ComponentCountMismatch {
            got: state.count(),
            expected: p,
        });
    }
    let mut explicit_sum = GridFunction::zeros(family.dim());
    for a in 0..p {
        explicit_sum.axpy(1.0, &family.summand(a).apply(state.component(a))?);
    }
    let mut rhs_base = GridFunction::zeros(family.dim());
    rhs_base.axpy(-cfg.tau, &explicit_sum);
    if let Some(f) = f {
        rhs_base.axpy(cfg.tau, f);
    }
    let components = (0..p)
        .map(|a| {
            let d = if cfg.sigma == 0.0 {
                rhs_base.clone()
            } else {
                let m = family.summand(a).shift_identity(cfg.sigma * cfg.tau)?;
                implicit_solve(&m, &rhs_base, None, cfg)?
            };
            let mut y = state.component(a).clone();
            y.axpy(1.0, &d);
            finite(y)
        })
        .collect::<Result<Vec<_>, SchemeError>>()?;
    Ok(VectorState::from_components(components))
}

// ---------------------------------------------------------------------------
// Subdomain (restricted) two-level schemes
// ---------------------------------------------------------------------------

/// Solve the support-restricted increment system
/// `(R_a / tau + sigma R_a A R_a) d = -R_a g` and scatter the increment
/// back to the full space; nodes off the support stay untouched.
fn restricted_increment(
    a: &SparseOperator,
    family: &RestrictionFamily,
    component: usize,
    g: &GridFunction,
    cfg: &SchemeConfig,
) -> Result<GridFunction, SchemeError> {
    let support = family.support(component);
    let weights = family.weights(component);
    for &i in support {
        if weights[i] <= 0.0 {
            return Err(SchemeError::SingularRestriction { component, node: i });
        }
    }
    let mut increment = GridFunction::zeros(a.rows());
    if support.is_empty() {
        return Ok(increment);
    }
    // Substituting e = R_a d turns the restricted system into the
    // symmetric positive definite form (diag(1 / (tau r)) + sigma A_SS) e = -g_S.
    let inv_diag: Vec<f64> = support
        .iter()
        .map(|&i| 1.0 / (cfg.tau * weights[i]))
        .collect();
    let mut m = SparseOperator::diagonal(&inv_diag);
    if cfg.sigma != 0.0 {
        m = m.add_scaled(cfg.sigma, &a.restrict(support))?;
    }
    let rhs = GridFunction::from_vec(support.iter().map(|&i| -g[i]).collect());
    let e = implicit_solve(&m, &rhs, None, cfg)?;
    for (slot, &i) in support.iter().enumerate() {
        increment[i] = e[slot] / weights[i];
    }
    Ok(increment)
}

/// Restricted two-level step with lagged components: each component keeps
/// its own history and the explicit term reads the level-n composition
/// `sum_b R_b y_b`. Returns the advanced components together with the
/// composed solution.
pub fn subdomain_step_lagged(
    a: &SparseOperator,
    family: &RestrictionFamily,
    state: &VectorState,
    cfg: &SchemeConfig,
) -> Result<(VectorState, GridFunction), SchemeError> {
    let p = family.count();
    if state.count() != p {
        return Err(SchemeError::ComponentCountMismatch {
            got: state.count(),
            expected: p,
        });
    }
    let composed_n = family.compose(state.components());
    let g = a.apply(&composed_n)?;
    let components = (0..p)
        .map(|alpha| {
            let d = restricted_increment(a, family, alpha, &g, cfg)?;
            let mut y = state.component(alpha).clone();
            y.axpy(1.0, &d);
            finite(y)
        })
        .collect::<Result<Vec<_>, SchemeError>>()?;
    let state = VectorState::from_components(components);
    let composed = family.compose(state.components());
    Ok((state, composed))
}

/// Restricted two-level step re-composed each level: every component steps
/// from the shared composed solution, so no per-component history survives.
pub fn subdomain_step_composed(
    a: &SparseOperator,
    family: &RestrictionFamily,
    y_n: &GridFunction,
    cfg: &SchemeConfig,
) -> Result<GridFunction, SchemeError> {
    if y_n.len() != a.rows() {
        return Err(SchemeError::DimensionMismatch {
            got: y_n.len(),
            expected: a.rows(),
        });
    }
    let g = a.apply(y_n)?;
    let components = (0..family.count())
        .map(|alpha| {
            let d = restricted_increment(a, family, alpha, &g, cfg)?;
            let mut y = y_n.clone();
            y.axpy(1.0, &d);
            finite(y)
        })
        .collect::<Result<Vec<_>, SchemeError>>()?;
    Ok(family.compose(&components))
}

// ---------------------------------------------------------------------------
// Component-space schemes
// ---------------------------------------------------------------------------

/// Two-level step on the component spaces: each y_a advances in H_a with
/// its own conjugated implicit factor `I + sigma tau G_a A G_a*` against
/// the shared explicit term. Returns components and composition.
pub fn component_space_step(
    a: &SparseOperator,
    g: &SpaceRestrictionFamily,
    state: &VectorState,
    cfg: &SchemeConfig,
) -> Result<(VectorState, GridFunction), SchemeError> {
    let p = g.count();
    if state.count() != p {
        return Err(SchemeError::ComponentCountMismatch {
            got: state.count(),
            expected: p,
        });
    }
    let composed_n = g.compose(state.components());
    let t = a.apply(&composed_n)?;
    let components = (0..p)
        .map(|alpha| {
            let mut rhs = g.restrict(alpha, &t);
            rhs.scale(-cfg.tau);
            let d = if cfg.sigma == 0.0 {
                rhs
            } else {
                let k = g
                    .conjugate(alpha, a)
                    .map_err(|_| SchemeError::DimensionMismatch {
                        got: a.cols(),
                        expected: g.full_dim(),
                    })?;
                let m = k.shift_identity(cfg.sigma * cfg.tau)?;
                implicit_solve(&m, &rhs, None, cfg)?
            };
            let mut y = state.component(alpha).clone();
            y.axpy(1.0, &d);
            finite(y)
        })
        .collect::<Result<Vec<_>, SchemeError>>()?;
    let state = VectorState::from_components(components);
    let composed = g.compose(state.components());
    Ok((state, composed))
}

/// Three-level component-space step; the implicit factor damps the second
/// difference of each component. Bootstrap the first level with one
/// [`component_space_step`] of the same step size.
pub fn component_space_step_three_level(
    a: &SparseOperator,
    g: &SpaceRestrictionFamily,
    state_nm1: &VectorState,
    state_n: &VectorState,
    cfg: &SchemeConfig,
) -> Result<VectorState, SchemeError> {
    let p = g.count();
    if state_n.count() != p || state_nm1.count() != p {
        return Err(SchemeError::ComponentCountMismatch {
            got: state_n.count(),
            expected: p,
        });
    }
    let composed_n = g.compose(state_n.components());
    let t = a.apply(&composed_n)?;
    let two_tau = 2.0 * cfg.tau;
    let components = (0..p)
        .map(|alpha| {
            let k = g
                .conjugate(alpha, a)
                .map_err(|_| SchemeError::DimensionMismatch {
                    got: a.cols(),
                    expected: g.full_dim(),
                })?;
            // (I + 2 tau sigma K) y^{n+1} =
            //   y^{n-1} + 2 tau sigma K (2 y^n - y^{n-1}) - 2 tau G_a A y_composed^n
            let mut smoothed = state_n.component(alpha).clone();
            smoothed.scale(2.0);
            smoothed.axpy(-1.0, state_nm1.component(alpha));
            let mut rhs = state_nm1.component(alpha).clone();
            rhs.axpy(two_tau * cfg.sigma, &k.apply(&smoothed)?);
            rhs.axpy(-two_tau, &g.restrict(alpha, &t));
            if cfg.sigma == 0.0 {
                return finite(rhs);
            }
            let m = k.shift_identity(two_tau * cfg.sigma)?;
            finite(implicit_solve(
                &m,
                &rhs,
                Some(state_n.component(alpha)),
                cfg,
            )?)
        })
        .collect::<Result<Vec<_>, SchemeError>>()?;
    Ok(VectorState::from_components(components))
}

// ---------------------------------------------------------------------------
// Second-order evolution equation
// ---------------------------------------------------------------------------

/// First level for the three-level second-order scheme from the initial
/// state and velocity: `y^1 = u0 + tau v0 - (tau^2 / 2)(A u0 - f0)`.
pub fn second_order_bootstrap(
    a: &SparseOperator,
    u0: &GridFunction,
    v0: &GridFunction,
    f0: Option<&GridFunction>,
    tau: f64,
) -> Result<GridFunction, SchemeError> {
    let mut y = u0.clone();
    y.axpy(tau, v0);
    y.axpy(-0.5 * tau * tau, &a.apply(u0)?);
    if let Some(f) = f0 {
        y.axpy(0.5 * tau * tau, f);
    }
    finite(y)
}

/// Regularized three-level step for the second-order evolution equation.
/// The implicit factor carries `sigma tau^2` (the square of the step).
pub fn second_order_regularized_step(
    family: &OperatorFamily,
    y_nm1: &GridFunction,
    y_n: &GridFunction,
    f_n: Option<&GridFunction>,
    cfg: &SchemeConfig,
) -> Result<GridFunction, SchemeError> {
    let tau_sq = cfg.tau * cfg.tau;
    let z = regularized_increments(family, y_n, tau_sq, cfg)?;
    let mut y = y_n.clone();
    y.scale(2.0);
    y.axpy(-1.0, y_nm1);
    for z_a in &z {
        y.axpy(-tau_sq, z_a);
    }
    if let Some(f) = f_n {
        y.axpy(tau_sq, f);
    }
    finite(y)
}

// ---------------------------------------------------------------------------
// Coupled two-equation systems
// ---------------------------------------------------------------------------

/// Constant operator blocks of a coupled pair of evolution equations.
#[derive(Debug, Clone)]
pub struct SystemOperator {
    a11: SparseOperator,
    a12: SparseOperator,
    a21: SparseOperator,
    a22: SparseOperator,
}

impl SystemOperator {
    pub fn new(
        a11: SparseOperator,
        a12: SparseOperator,
        a21: SparseOperator,
        a22: SparseOperator,
    ) -> Result<Self, SchemeError> {
        let (n1, n2) = (a11.rows(), a22.rows());
        let consistent = a11.cols() == n1
            && a22.cols() == n2
            && a12.rows() == n1
            && a12.cols() == n2
            && a21.rows() == n2
            && a21.cols() == n1;
        if !consistent {
            return Err(SchemeError::DimensionMismatch {
                got: a12.rows(),
                expected: n1,
            });
        }
        Ok(Self { a11, a12, a21, a22 })
    }

    pub fn block_dims(&self) -> (usize, usize) {
        (self.a11.rows(), self.a22.rows())
    }

    pub fn a11(&self) -> &SparseOperator {
        &self.a11
    }

    pub fn a12(&self) -> &SparseOperator {
        &self.a12
    }

    pub fn a21(&self) -> &SparseOperator {
        &self.a21
    }

    pub fn a22(&self) -> &SparseOperator {
        &self.a22
    }
}

/// Paired solution components of the coupled system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub u1: GridFunction,
    pub u2: GridFunction,
}

/// Which triangular part each sweep factor keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemSplit {
    /// Factors keep whole block rows.
    Row,
    /// Factors keep whole block columns.
    Column,
}

/// Purely implicit component-wise sweep of the coupled system (weight
/// fixed at 1); only the diagonal blocks are ever solved with.
///
/// The column variant runs the four updates in the order
/// `u1 half, u2 half, u2 full, u1 full`.
pub fn system_split_step(
    ops: &SystemOperator,
    state: &SystemState,
    variant: SystemSplit,
    cfg: &SchemeConfig,
) -> Result<SystemState, SchemeError> {
    if cfg.sigma != 1.0 {
        return Err(SchemeError::UnsupportedWeight {
            expected: 1.0,
            got: cfg.sigma,
        });
    }
    let tau = cfg.tau;
    let m11 = ops.a11.shift_identity(tau)?;
    let m22 = ops.a22.shift_identity(tau)?;
    match variant {
        SystemSplit::Column => {
            // (I + tau A11) u1' = u1
            let u1_half = implicit_solve(&m11, &state.u1, Some(&state.u1), cfg)?;
            // u2' = u2 - tau A21 u1'
            let mut u2_half = state.u2.clone();
            u2_half.axpy(-tau, &ops.a21.apply(&u1_half)?);
            // (I + tau A22) u2'' = u2'
            let u2_new = implicit_solve(&m22, &u2_half, Some(&u2_half), cfg)?;
            // u1'' = u1' - tau A12 u2''
            let mut u1_new = u1_half;
            u1_new.axpy(-tau, &ops.a12.apply(&u2_new)?);
            Ok(SystemState {
                u1: finite(u1_new)?,
                u2: finite(u2_new)?,
            })
        }
        SystemSplit::Row => {
            // (I + tau A11) u1' = u1 - tau A12 u2 ; u2 unchanged in sweep 1
            let mut rhs1 = state.u1.clone();
            rhs1.axpy(-tau, &ops.a12.apply(&state.u2)?);
            let u1_new = implicit_solve(&m11, &rhs1, Some(&state.u1), cfg)?;
            // (I + tau A22) u2' = u2 - tau A21 u1'
            let mut rhs2 = state.u2.clone();
            rhs2.axpy(-tau, &ops.a21.apply(&u1_new)?);
            let u2_new = implicit_solve(&m22, &rhs2, Some(&state.u2), cfg)?;
            Ok(SystemState {
                u1: finite(u1_new)?,
                u2: finite(u2_new)?,
            })
        }
    }
}
