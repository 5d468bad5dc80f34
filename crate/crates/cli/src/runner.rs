//! Experiment orchestration: build the discrete problem from a config,
//! advance the selected scheme, collect per-step records, and evaluate an
//! optional step-halving order study.

use std::time::Instant;

use rand_core::{RngCore, SeedableRng};

use splitkit_core::analysis::{
    estimate_order, ExponentialReference, OrderEstimate, OrderStudy, RunRecord,
};
use splitkit_core::decomposition::{
    build_space_restrictions, build_strip_partition, decompose_chi, decompose_drd,
    decompose_restricted, split_directional, DecompositionError, FactorizedForm, OperatorFamily,
    PartitionOfUnity, RestrictionFamily, ScalingSide, SpaceRestrictionFamily, StripProfile,
};
use splitkit_core::linalg::{weighted_norm, GridFunction, NormKind, SparseOperator};
use splitkit_core::model::{
    assemble_operator, eigenmode_reference, Coefficient, Grid2D, ModelError,
};
use splitkit_core::schemes::{
    additive_averaged_step, component_space_step, component_space_step_three_level,
    componentwise_sweep, factorized_step, regularized_step, second_order_bootstrap,
    second_order_regularized_step, subdomain_step_composed, subdomain_step_lagged,
    vector_additive_step, weighted_step, SchemeConfig, SchemeError, SchemeKind, SweepOrdering,
    VectorState,
};

use crate::config::{
    CoefficientSpec, DecompositionKind, ExperimentConfig, ForcingSpec, InitialSpec, NormColumn,
    ProfileSpec, ReferenceSpec, SchemeKindSpec,
};
use crate::expr;

/// Failure classes mapped onto the process exit codes.
#[derive(Debug)]
pub enum RunFailure {
    /// Exit 2: the config was structurally valid but cannot be realized.
    Setup(String),
    /// Exit 3: the trajectory escaped the divergence sentinel.
    Divergence { step: usize, energy_ratio: f64 },
    /// Exit 4: an inner solve failed.
    Solver(String),
}

impl RunFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunFailure::Setup(_) => 2,
            RunFailure::Divergence { .. } => 3,
            RunFailure::Solver(_) => 4,
        }
    }
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunFailure::Setup(m) => write!(f, "setup failed: {m}"),
            RunFailure::Divergence { step, energy_ratio } => {
                write!(
                    f,
                    "diverged at step {step}: energy grew {energy_ratio:.3e}x"
                )
            }
            RunFailure::Solver(m) => write!(f, "solver failed: {m}"),
        }
    }
}

impl From<ModelError> for RunFailure {
    fn from(e: ModelError) -> Self {
        RunFailure::Setup(e.to_string())
    }
}

impl From<DecompositionError> for RunFailure {
    fn from(e: DecompositionError) -> Self {
        RunFailure::Setup(e.to_string())
    }
}

impl From<SchemeError> for RunFailure {
    fn from(e: SchemeError) -> Self {
        match e {
            SchemeError::Solver(inner) => RunFailure::Solver(inner.to_string()),
            other => RunFailure::Setup(other.to_string()),
        }
    }
}

/// Energy growth factor over the initial state that aborts a run.
const DIVERGENCE_ENERGY_RATIO: f64 = 1e12;

fn map_scheme_kind(kind: SchemeKindSpec) -> SchemeKind {
    match kind {
        SchemeKindSpec::Weighted => SchemeKind::Weighted,
        SchemeKindSpec::Factorized => SchemeKind::Factorized,
        SchemeKindSpec::Componentwise => SchemeKind::Componentwise,
        SchemeKindSpec::ComponentwiseSymmetrized => SchemeKind::ComponentwiseSymmetrized,
        SchemeKindSpec::AdditiveAveraged => SchemeKind::AdditiveAveraged,
        SchemeKindSpec::Regularized => SchemeKind::Regularized,
        SchemeKindSpec::VectorAdditive => SchemeKind::VectorAdditive,
        SchemeKindSpec::SubdomainLagged => SchemeKind::SubdomainLagged,
        SchemeKindSpec::SubdomainComposed => SchemeKind::SubdomainComposed,
        SchemeKindSpec::ComponentSpace => SchemeKind::ComponentSpace,
        SchemeKindSpec::ComponentSpaceThreeLevel => SchemeKind::ComponentSpaceThreeLevel,
        SchemeKindSpec::SecondOrderRegularized => SchemeKind::SecondOrderRegularized,
    }
}

/// Norm a scheme's stability statement certifies, evaluated per record.
enum CertifiedNorm {
    Identity,
    Operator,
    /// Norm of (I + sigma tau A2) y for the factorized scheme.
    ShiftedSecondFactor(SparseOperator),
}

/// Fully assembled experiment, ready to step.
pub struct Experiment {
    grid: Grid2D,
    a: SparseOperator,
    family: Option<OperatorFamily>,
    restrictions: Option<RestrictionFamily>,
    space: Option<SpaceRestrictionFamily>,
    u0: GridFunction,
    forcing: Option<GridFunction>,
    forcing_parts: Option<Vec<GridFunction>>,
    reference: Option<Reference>,
    cert: CertifiedNorm,
    kind: SchemeKindSpec,
    cfg: SchemeConfig,
    wants_identity: bool,
    wants_operator: bool,
    wants_certified: bool,
}

enum Reference {
    Eigenmode { mode: (usize, usize) },
    Exponential(ExponentialReference),
}

impl Reference {
    fn state_at(&self, grid: &Grid2D, t: f64) -> GridFunction {
        match self {
            Reference::Eigenmode { mode } => {
                eigenmode_reference(grid, *mode, t).expect("mode validated at build time")
            }
            Reference::Exponential(cache) => cache.state_at(t),
        }
    }
}

fn build_coefficient(spec: &CoefficientSpec, grid: &Grid2D) -> Result<Coefficient, RunFailure> {
    Ok(match spec {
        CoefficientSpec::Constant { value } => Coefficient::constant(*value),
        CoefficientSpec::Checkerboard { hi, lo } => {
            let (l1, l2) = (grid.l1(), grid.l2());
            let (hi, lo) = (*hi, *lo);
            Coefficient::new(hi.min(lo), move |x1, x2| {
                let q1 = ((2.0 * x1 / l1).floor() as i64).rem_euclid(2);
                let q2 = ((2.0 * x2 / l2).floor() as i64).rem_euclid(2);
                if q1 == q2 {
                    hi
                } else {
                    lo
                }
            })
        }
        CoefficientSpec::Expression { formula, kappa } => {
            let parsed = expr::parse(formula).map_err(|e| RunFailure::Setup(e.to_string()))?;
            Coefficient::new(*kappa, move |x1, x2| parsed.eval(x1, x2))
        }
    })
}

fn build_initial(spec: &InitialSpec, grid: &Grid2D, seed_override: Option<u64>) -> GridFunction {
    match spec {
        InitialSpec::Eigenmode { m1, m2 } => {
            eigenmode_reference(grid, (*m1, *m2), 0.0).expect("mode validated")
        }
        InitialSpec::Constant { value } => {
            GridFunction::from_vec(vec![*value; grid.interior_len()])
        }
        InitialSpec::Random { seed, .. } => {
            let seed = seed_override.unwrap_or(*seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // Uniform in [-1, 1): 53 mantissa bits of the next u64.
            let values = (0..grid.interior_len())
                .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 52) as f64 - 1.0)
                .collect();
            GridFunction::from_vec(values)
        }
    }
}

impl Experiment {
    pub fn build(
        config: &ExperimentConfig,
        seed_override: Option<u64>,
    ) -> Result<Self, RunFailure> {
        let grid = Grid2D::new(
            config.grid.l1,
            config.grid.l2,
            config.grid.n1,
            config.grid.n2,
        )?;
        let coefficient = build_coefficient(&config.coefficient, &grid)?;
        let a = assemble_operator(&grid, &coefficient)?;
        let n = grid.interior_len();

        let d = &config.decomposition;
        let profile = match d.profile {
            Some(ProfileSpec::Hard) | None => StripProfile::Hard,
            Some(ProfileSpec::Linear) => StripProfile::Linear,
        };
        let pou: Option<PartitionOfUnity> = match d.kind {
            DecompositionKind::None => None,
            DecompositionKind::Directional => None,
            _ => Some(build_strip_partition(
                &grid,
                d.p.unwrap_or(1),
                d.overlap.unwrap_or(0),
                profile,
            )?),
        };

        let needs_restrictions = matches!(
            config.scheme.kind,
            SchemeKindSpec::SubdomainLagged | SchemeKindSpec::SubdomainComposed
        );
        let needs_space = matches!(
            config.scheme.kind,
            SchemeKindSpec::ComponentSpace | SchemeKindSpec::ComponentSpaceThreeLevel
        );
        let needs_family = matches!(
            config.scheme.kind,
            SchemeKindSpec::Factorized
                | SchemeKindSpec::Componentwise
                | SchemeKindSpec::ComponentwiseSymmetrized
                | SchemeKindSpec::AdditiveAveraged
                | SchemeKindSpec::Regularized
                | SchemeKindSpec::VectorAdditive
                | SchemeKindSpec::SecondOrderRegularized
        );

        let family = if needs_family {
            Some(match d.kind {
                DecompositionKind::None => OperatorFamily::trivial(&a),
                DecompositionKind::Directional => split_directional(&grid, &coefficient)?,
                DecompositionKind::ChiA => {
                    decompose_chi(&a, pou.as_ref().unwrap(), ScalingSide::Left)?
                }
                DecompositionKind::AChi => {
                    decompose_chi(&a, pou.as_ref().unwrap(), ScalingSide::Right)?
                }
                DecompositionKind::RA => decompose_restricted(
                    &a,
                    &RestrictionFamily::from_partition(pou.as_ref().unwrap()),
                    ScalingSide::Left,
                )?,
                DecompositionKind::AR => decompose_restricted(
                    &a,
                    &RestrictionFamily::from_partition(pou.as_ref().unwrap()),
                    ScalingSide::Right,
                )?,
                DecompositionKind::Drd => {
                    let factored = FactorizedForm::gradient_factor(&grid, &coefficient)?;
                    let edges = RestrictionFamily::on_edges(&factored, pou.as_ref().unwrap())?;
                    decompose_drd(&factored, &edges)?
                }
            })
        } else {
            None
        };

        let trivial_pou = PartitionOfUnity::trivial(n);
        let restrictions = needs_restrictions
            .then(|| RestrictionFamily::from_partition(pou.as_ref().unwrap_or(&trivial_pou)));
        let space =
            needs_space.then(|| build_space_restrictions(pou.as_ref().unwrap_or(&trivial_pou)));

        let u0 = build_initial(&config.initial, &grid, seed_override);

        let forcing = match &config.forcing {
            ForcingSpec::Zero => None,
            ForcingSpec::Expression { formula } => {
                let parsed = expr::parse(formula).map_err(|e| RunFailure::Setup(e.to_string()))?;
                let mut values = vec![0.0; n];
                for (idx, (i1, i2)) in grid.interior_nodes() {
                    let (x1, x2) = grid.position(i1, i2);
                    values[idx] = parsed.eval(x1, x2);
                }
                Some(GridFunction::from_vec(values))
            }
        };

        // Forcing split across components: by partition weights when a
        // nodal partition drives the family, evenly otherwise.
        let forcing_parts = match (&forcing, &family) {
            (Some(f), Some(family)) if family.count() > 1 => {
                let p = family.count();
                let parts = match (&pou, d.kind) {
                    (
                        Some(pou),
                        DecompositionKind::ChiA
                        | DecompositionKind::AChi
                        | DecompositionKind::RA
                        | DecompositionKind::AR,
                    ) => (0..p)
                        .map(|c| {
                            let chi = pou.weights(c);
                            GridFunction::from_vec((0..n).map(|i| chi[i] * f[i]).collect())
                        })
                        .collect(),
                    _ => {
                        let mut even = f.clone();
                        even.scale(1.0 / p as f64);
                        vec![even; p]
                    }
                };
                Some(parts)
            }
            _ => None,
        };

        let reference = match config.reference {
            ReferenceSpec::None => None,
            ReferenceSpec::Eigenmode => match &config.initial {
                InitialSpec::Eigenmode { m1, m2 } => {
                    Some(Reference::Eigenmode { mode: (*m1, *m2) })
                }
                _ => unreachable!("validated"),
            },
            ReferenceSpec::Expm => Some(Reference::Exponential(
                ExponentialReference::new(&a, &u0).map_err(|e| RunFailure::Setup(e.to_string()))?,
            )),
        };

        let kind = config.scheme.kind;
        let cfg = SchemeConfig::new(
            map_scheme_kind(kind),
            config.scheme.sigma,
            config.scheme.tau,
            config.scheme.steps,
        )
        .with_solver(config.scheme.solver_tol, 100_000);

        let cert = match kind {
            SchemeKindSpec::Factorized => {
                let a2 = family.as_ref().unwrap().summand(1);
                CertifiedNorm::ShiftedSecondFactor(
                    a2.shift_identity(cfg.sigma * cfg.tau)
                        .map_err(|e| RunFailure::Setup(e.to_string()))?,
                )
            }
            SchemeKindSpec::Componentwise
            | SchemeKindSpec::ComponentwiseSymmetrized
            | SchemeKindSpec::AdditiveAveraged
            | SchemeKindSpec::VectorAdditive => CertifiedNorm::Identity,
            SchemeKindSpec::Regularized => {
                if family.as_ref().unwrap().selfadjoint_summands() {
                    CertifiedNorm::Identity
                } else {
                    CertifiedNorm::Operator
                }
            }
            _ => CertifiedNorm::Operator,
        };

        Ok(Self {
            grid,
            a,
            family,
            restrictions,
            space,
            u0,
            forcing,
            forcing_parts,
            reference,
            cert,
            kind,
            cfg,
            wants_identity: config.wants_norm(NormColumn::I),
            wants_operator: config.wants_norm(NormColumn::A),
            wants_certified: config.wants_norm(NormColumn::Cert),
        })
    }

    pub fn scheme_label(&self) -> &'static str {
        match self.kind {
            SchemeKindSpec::Weighted => "WEIGHTED",
            SchemeKindSpec::Factorized => "FACTORIZED",
            SchemeKindSpec::Componentwise => "COMPONENTWISE",
            SchemeKindSpec::ComponentwiseSymmetrized => "COMPONENTWISE_SYMMETRIZED",
            SchemeKindSpec::AdditiveAveraged => "ADDITIVE_AVERAGED",
            SchemeKindSpec::Regularized => "REGULARIZED",
            SchemeKindSpec::VectorAdditive => "VECTOR_ADDITIVE",
            SchemeKindSpec::SubdomainLagged => "SUBDOMAIN_LAGGED",
            SchemeKindSpec::SubdomainComposed => "SUBDOMAIN_COMPOSED",
            SchemeKindSpec::ComponentSpace => "COMPONENT_SPACE",
            SchemeKindSpec::ComponentSpaceThreeLevel => "COMPONENT_SPACE_3LEVEL",
            SchemeKindSpec::SecondOrderRegularized => "SECOND_ORDER_REGULARIZED",
        }
    }

    pub fn sigma(&self) -> f64 {
        self.cfg.sigma
    }

    pub fn tau(&self) -> f64 {
        self.cfg.tau
    }

    pub fn steps(&self) -> usize {
        self.cfg.steps
    }

    fn make_stepper(&self) -> Stepper {
        match self.kind {
            SchemeKindSpec::Weighted => Stepper::Scalar(self.u0.clone(), ScalarKind::Weighted),
            SchemeKindSpec::Factorized => Stepper::Scalar(self.u0.clone(), ScalarKind::Factorized),
            SchemeKindSpec::Componentwise => {
                Stepper::Scalar(self.u0.clone(), ScalarKind::Sweep(SweepOrdering::Forward))
            }
            SchemeKindSpec::ComponentwiseSymmetrized => {
                Stepper::Scalar(self.u0.clone(), ScalarKind::Sweep(SweepOrdering::Symmetric))
            }
            SchemeKindSpec::AdditiveAveraged => {
                Stepper::Scalar(self.u0.clone(), ScalarKind::Averaged)
            }
            SchemeKindSpec::Regularized => {
                Stepper::Scalar(self.u0.clone(), ScalarKind::Regularized)
            }
            SchemeKindSpec::SubdomainComposed => {
                Stepper::Scalar(self.u0.clone(), ScalarKind::SubdomainComposed)
            }
            SchemeKindSpec::VectorAdditive => Stepper::Vector {
                state: VectorState::replicate(&self.u0, self.family.as_ref().unwrap().count()),
                composed: self.u0.clone(),
                lagged_subdomain: false,
            },
            SchemeKindSpec::SubdomainLagged => Stepper::Vector {
                state: VectorState::replicate(
                    &self.u0,
                    self.restrictions.as_ref().unwrap().count(),
                ),
                composed: self.u0.clone(),
                lagged_subdomain: true,
            },
            SchemeKindSpec::ComponentSpace => {
                let g = self.space.as_ref().unwrap();
                Stepper::Space {
                    state: VectorState::from_components(g.restrict_all(&self.u0)),
                    composed: self.u0.clone(),
                }
            }
            SchemeKindSpec::ComponentSpaceThreeLevel => {
                let g = self.space.as_ref().unwrap();
                Stepper::SpaceThreeLevel {
                    prev: None,
                    cur: VectorState::from_components(g.restrict_all(&self.u0)),
                    composed: self.u0.clone(),
                }
            }
            SchemeKindSpec::SecondOrderRegularized => Stepper::TwoLevelHistory {
                prev: self.u0.clone(),
                cur: None,
            },
        }
    }

    /// Advance the scheme over its configured horizon, recording one row
    /// per completed level (the initial state is row 0).
    pub fn run(&self, timing: bool) -> Result<RunResult, (RunResult, RunFailure)> {
        let mut stepper = self.make_stepper();
        let mut records = Vec::with_capacity(self.cfg.steps + 1);
        records.push(self.record(0, stepper.composed(), 0.0));
        let initial_energy = {
            let n = stepper.composed().norm();
            (n * n).max(f64::MIN_POSITIVE)
        };
        for n in 1..=self.cfg.steps {
            let started = timing.then(Instant::now);
            if let Err(e) = stepper.advance(self) {
                return Err((RunResult { records }, e.into()));
            }
            let seconds = started.map_or(0.0, |s| s.elapsed().as_secs_f64());
            let state = stepper.composed();
            let norm = state.norm();
            let energy = norm * norm;
            records.push(self.record(n, state, seconds));
            if !energy.is_finite() || energy > DIVERGENCE_ENERGY_RATIO * initial_energy {
                let failure = RunFailure::Divergence {
                    step: n,
                    energy_ratio: energy / initial_energy,
                };
                return Err((RunResult { records }, failure));
            }
        }
        Ok(RunResult { records })
    }

    fn record(&self, step: usize, state: &GridFunction, seconds: f64) -> RunRecord {
        let t = step as f64 * self.cfg.tau;
        let norm_identity = if self.wants_identity {
            state.norm()
        } else {
            f64::NAN
        };
        let norm_operator = if self.wants_operator {
            weighted_norm(state, NormKind::Operator(&self.a)).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        let norm_certified = if self.wants_certified {
            match &self.cert {
                CertifiedNorm::Identity => state.norm(),
                CertifiedNorm::Operator => {
                    weighted_norm(state, NormKind::Operator(&self.a)).unwrap_or(f64::NAN)
                }
                CertifiedNorm::ShiftedSecondFactor(m) => {
                    m.apply(state).map(|v| v.norm()).unwrap_or(f64::NAN)
                }
            }
        } else {
            f64::NAN
        };
        let (err_identity, err_operator) = match &self.reference {
            None => (f64::NAN, f64::NAN),
            Some(reference) => {
                let mut diff = state.clone();
                diff.axpy(-1.0, &reference.state_at(&self.grid, t));
                (
                    diff.norm(),
                    weighted_norm(&diff, NormKind::Operator(&self.a)).unwrap_or(f64::NAN),
                )
            }
        };
        RunRecord {
            step,
            time: t,
            norm_identity,
            norm_operator,
            norm_certified,
            err_identity,
            err_operator,
            step_seconds: seconds,
        }
    }

    /// Step-halving ladder against the configured reference at the
    /// terminal time of the base run.
    pub fn order_study(&self, levels: usize) -> Result<OrderEstimate, RunFailure> {
        let reference = self
            .reference
            .as_ref()
            .ok_or_else(|| RunFailure::Setup("order study needs a reference".into()))?;
        let t_end = self.cfg.tau * self.cfg.steps as f64;
        let terminal_reference = reference.state_at(&self.grid, t_end);
        let study = OrderStudy {
            tau0: self.cfg.tau,
            levels,
            t_end,
        };
        estimate_order(&study, &self.a, &terminal_reference, |tau, steps| {
            let mut cfg = self.cfg;
            cfg.tau = tau;
            cfg.steps = steps;
            let mut stepper = self.make_stepper();
            for _ in 0..steps {
                stepper.advance_with(self, cfg)?;
            }
            Ok::<_, SchemeError>(stepper.composed().clone())
        })
        .map_err(|e| match e {
            splitkit_core::analysis::AnalysisError::Diverged { level, energy, .. } => {
                RunFailure::Divergence {
                    step: level,
                    energy_ratio: energy,
                }
            }
            other => RunFailure::Solver(other.to_string()),
        })
    }
}

pub struct RunResult {
    pub records: Vec<RunRecord>,
}

enum ScalarKind {
    Weighted,
    Factorized,
    Sweep(SweepOrdering),
    Averaged,
    Regularized,
    SubdomainComposed,
}

enum Stepper {
    Scalar(GridFunction, ScalarKind),
    Vector {
        state: VectorState,
        composed: GridFunction,
        lagged_subdomain: bool,
    },
    Space {
        state: VectorState,
        composed: GridFunction,
    },
    SpaceThreeLevel {
        prev: Option<VectorState>,
        cur: VectorState,
        composed: GridFunction,
    },
    TwoLevelHistory {
        prev: GridFunction,
        cur: Option<GridFunction>,
    },
}

impl Stepper {
    fn composed(&self) -> &GridFunction {
        match self {
            Stepper::Scalar(y, _) => y,
            Stepper::Vector { composed, .. } => composed,
            Stepper::Space { composed, .. } => composed,
            Stepper::SpaceThreeLevel { composed, .. } => composed,
            Stepper::TwoLevelHistory { prev, cur } => cur.as_ref().unwrap_or(prev),
        }
    }

    fn advance(&mut self, exp: &Experiment) -> Result<(), SchemeError> {
        self.advance_with(exp, exp.cfg)
    }

    fn advance_with(&mut self, exp: &Experiment, cfg: SchemeConfig) -> Result<(), SchemeError> {
        let f = exp.forcing.as_ref();
        let parts = exp.forcing_parts.as_deref();
        match self {
            Stepper::Scalar(y, kind) => {
                let next = match kind {
                    ScalarKind::Weighted => weighted_step(&exp.a, y, f, f, &cfg)?,
                    ScalarKind::Factorized => {
                        let family = exp.family.as_ref().unwrap();
                        factorized_step(family.summand(0), family.summand(1), y, f, &cfg)?
                    }
                    ScalarKind::Sweep(ordering) => {
                        let family = exp.family.as_ref().unwrap();
                        let fallback;
                        let sweep_parts = match parts {
                            Some(parts) => Some(parts),
                            None => match f {
                                Some(f) if family.count() == 1 => {
                                    fallback = vec![f.clone()];
                                    Some(fallback.as_slice())
                                }
                                _ => None,
                            },
                        };
                        componentwise_sweep(family, y, sweep_parts, *ordering, &cfg)?
                    }
                    ScalarKind::Averaged => {
                        let family = exp.family.as_ref().unwrap();
                        let fallback;
                        let avg_parts = match parts {
                            Some(parts) => Some(parts),
                            None => match f {
                                Some(f) if family.count() == 1 => {
                                    fallback = vec![f.clone()];
                                    Some(fallback.as_slice())
                                }
                                _ => None,
                            },
                        };
                        additive_averaged_step(family, y, avg_parts, &cfg)?
                    }
                    ScalarKind::Regularized => {
                        regularized_step(exp.family.as_ref().unwrap(), y, f, &cfg)?
                    }
                    ScalarKind::SubdomainComposed => subdomain_step_composed(
                        &exp.a,
                        exp.restrictions.as_ref().unwrap(),
                        y,
                        &cfg,
                    )?,
                };
                *y = next;
            }
            Stepper::Vector {
                state,
                composed,
                lagged_subdomain,
            } => {
                if *lagged_subdomain {
                    let (next, comp) = subdomain_step_lagged(
                        &exp.a,
                        exp.restrictions.as_ref().unwrap(),
                        state,
                        &cfg,
                    )?;
                    *state = next;
                    *composed = comp;
                } else {
                    let family = exp.family.as_ref().unwrap();
                    let next = vector_additive_step(family, state, f, &cfg)?;
                    *state = next;
                    // Any replica approximates the solution; report the first.
                    *composed = state.component(0).clone();
                }
            }
            Stepper::Space { state, composed } => {
                let g = exp.space.as_ref().unwrap();
                let (next, comp) = component_space_step(&exp.a, g, state, &cfg)?;
                *state = next;
                *composed = comp;
            }
            Stepper::SpaceThreeLevel {
                prev,
                cur,
                composed,
            } => {
                let g = exp.space.as_ref().unwrap();
                match prev.take() {
                    None => {
                        // Bootstrap with one two-level step of the same size.
                        let (next, comp) = component_space_step(&exp.a, g, cur, &cfg)?;
                        *prev = Some(std::mem::replace(cur, next));
                        *composed = comp;
                    }
                    Some(state_nm1) => {
                        let next =
                            component_space_step_three_level(&exp.a, g, &state_nm1, cur, &cfg)?;
                        *prev = Some(std::mem::replace(cur, next));
                        *composed = g.compose(cur.components());
                    }
                }
            }
            Stepper::TwoLevelHistory { prev, cur } => {
                let family = exp.family.as_ref().unwrap();
                match cur.take() {
                    None => {
                        // First level from the initial state and zero velocity.
                        let v0 = GridFunction::zeros(prev.len());
                        *cur = Some(second_order_bootstrap(&exp.a, prev, &v0, f, cfg.tau)?);
                    }
                    Some(y_cur) => {
                        let next = second_order_regularized_step(family, prev, &y_cur, f, &cfg)?;
                        *prev = y_cur;
                        *cur = Some(next);
                    }
                }
            }
        }
        Ok(())
    }
}
