//! Experiment configuration: one strict JSON document per experiment.
//! Unknown keys are rejected, and cross-field constraints are validated
//! before anything is allocated.

use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::expr;

/// Identifier of the seeded generator used for RANDOM initial data. The
/// config must name it explicitly so archived inputs stay unambiguous.
pub const RANDOM_ALGORITHM_ID: &str = "chacha8-uniform-v1";

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    /// JSON syntax or schema violation, with line/column from the parser.
    Parse(serde_json::Error),
    /// Cross-field validation failure: field path plus message.
    Invalid {
        field: String,
        message: String,
    },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse(e) => {
                write!(
                    f,
                    "config schema error (line {}, column {}): {e}",
                    e.line(),
                    e.column()
                )
            }
            ConfigError::Invalid { field, message } => {
                write!(f, "invalid config field '{field}': {message}")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub coefficient: CoefficientSpec,
    pub decomposition: DecompositionSpec,
    pub scheme: SchemeSpec,
    pub initial: InitialSpec,
    pub forcing: ForcingSpec,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub orders: Option<OrdersSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub l1: f64,
    pub l2: f64,
    pub n1: usize,
    pub n2: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum CoefficientSpec {
    #[serde(rename = "CONSTANT")]
    Constant { value: f64 },
    /// Four-quadrant checkerboard: `hi` on quadrants where the parities of
    /// floor(2 x1 / l1) and floor(2 x2 / l2) agree, `lo` elsewhere.
    #[serde(rename = "CHECKERBOARD")]
    Checkerboard { hi: f64, lo: f64 },
    #[serde(rename = "EXPRESSION")]
    Expression { formula: String, kappa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum DecompositionKind {
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "DIRECTIONAL")]
    Directional,
    #[serde(rename = "CHI_A")]
    ChiA,
    #[serde(rename = "A_CHI")]
    AChi,
    #[serde(rename = "R_A")]
    RA,
    #[serde(rename = "A_R")]
    AR,
    #[serde(rename = "D_R_D")]
    Drd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum ProfileSpec {
    #[serde(rename = "HARD")]
    Hard,
    #[serde(rename = "LINEAR")]
    Linear,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSpec {
    pub kind: DecompositionKind,
    #[serde(default)]
    pub p: Option<usize>,
    #[serde(default)]
    pub overlap: Option<usize>,
    #[serde(default)]
    pub profile: Option<ProfileSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
pub enum SchemeKindSpec {
    #[serde(rename = "WEIGHTED")]
    Weighted,
    #[serde(rename = "FACTORIZED")]
    Factorized,
    #[serde(rename = "COMPONENTWISE")]
    Componentwise,
    #[serde(rename = "COMPONENTWISE_SYMMETRIZED")]
    ComponentwiseSymmetrized,
    #[serde(rename = "ADDITIVE_AVERAGED")]
    AdditiveAveraged,
    #[serde(rename = "REGULARIZED")]
    Regularized,
    #[serde(rename = "VECTOR_ADDITIVE")]
    VectorAdditive,
    #[serde(rename = "SUBDOMAIN_LAGGED")]
    SubdomainLagged,
    #[serde(rename = "SUBDOMAIN_COMPOSED")]
    SubdomainComposed,
    #[serde(rename = "COMPONENT_SPACE")]
    ComponentSpace,
    #[serde(rename = "COMPONENT_SPACE_3LEVEL")]
    ComponentSpaceThreeLevel,
    #[serde(rename = "SECOND_ORDER_REGULARIZED")]
    SecondOrderRegularized,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub kind: SchemeKindSpec,
    pub sigma: f64,
    pub tau: f64,
    pub steps: usize,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
}

fn default_solver_tol() -> f64 {
    1e-13
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum InitialSpec {
    #[serde(rename = "EIGENMODE")]
    Eigenmode { m1: usize, m2: usize },
    #[serde(rename = "RANDOM")]
    Random { seed: u64, algorithm: String },
    #[serde(rename = "CONSTANT")]
    Constant { value: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum ForcingSpec {
    #[serde(rename = "ZERO")]
    Zero,
    #[serde(rename = "EXPRESSION")]
    Expression { formula: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum ReferenceSpec {
    #[serde(rename = "EIGENMODE")]
    Eigenmode,
    #[serde(rename = "EXPM")]
    Expm,
    #[serde(rename = "NONE")]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum NormColumn {
    I,
    A,
    #[serde(rename = "CERT")]
    Cert,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub summary: Option<String>,
    /// Norm columns to evaluate; omitted columns are emitted as NaN.
    #[serde(default)]
    pub norms: Option<Vec<NormColumn>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrdersSpec {
    pub levels: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(ConfigError::Parse)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        if !(g.l1 > 0.0 && g.l1.is_finite() && g.l2 > 0.0 && g.l2.is_finite()) {
            return Err(invalid("grid", "side lengths must be positive and finite"));
        }
        if g.n1 < 2 || g.n2 < 2 {
            return Err(invalid(
                "grid",
                "need at least 2 subdivisions per direction",
            ));
        }

        match &self.coefficient {
            CoefficientSpec::Constant { value } => {
                if !(*value > 0.0 && value.is_finite()) {
                    return Err(invalid("coefficient.value", "must be positive and finite"));
                }
            }
            CoefficientSpec::Checkerboard { hi, lo } => {
                if !(*hi > 0.0 && hi.is_finite() && *lo > 0.0 && lo.is_finite()) {
                    return Err(invalid("coefficient", "hi and lo must be positive"));
                }
            }
            CoefficientSpec::Expression { formula, kappa } => {
                if !(*kappa > 0.0 && kappa.is_finite()) {
                    return Err(invalid("coefficient.kappa", "must be positive"));
                }
                expr::parse(formula).map_err(|e| invalid("coefficient.formula", e.to_string()))?;
            }
        }

        let d = &self.decomposition;
        let partitioned = matches!(
            d.kind,
            DecompositionKind::ChiA
                | DecompositionKind::AChi
                | DecompositionKind::RA
                | DecompositionKind::AR
                | DecompositionKind::Drd
        );
        if partitioned {
            let p =
                d.p.ok_or_else(|| invalid("decomposition.p", "required for this kind"))?;
            if p == 0 {
                return Err(invalid("decomposition.p", "must be at least 1"));
            }
            let profile = d
                .profile
                .ok_or_else(|| invalid("decomposition.profile", "required for this kind"))?;
            if profile == ProfileSpec::Linear && d.overlap.is_none() {
                return Err(invalid(
                    "decomposition.overlap",
                    "required for LINEAR profile",
                ));
            }
        } else if d.p.is_some() || d.overlap.is_some() || d.profile.is_some() {
            return Err(invalid(
                "decomposition",
                "p/overlap/profile only apply to partition-based kinds",
            ));
        }

        let s = &self.scheme;
        if !(s.tau > 0.0 && s.tau.is_finite()) {
            return Err(invalid("scheme.tau", "must be positive and finite"));
        }
        if s.steps == 0 {
            return Err(invalid("scheme.steps", "must be at least 1"));
        }
        if !s.sigma.is_finite() {
            return Err(invalid("scheme.sigma", "must be finite"));
        }
        if !(s.solver_tol > 0.0 && s.solver_tol < 1.0) {
            return Err(invalid("scheme.solver_tol", "must lie in (0, 1)"));
        }

        // Scheme / decomposition compatibility.
        let nodal_partition = matches!(
            d.kind,
            DecompositionKind::ChiA
                | DecompositionKind::AChi
                | DecompositionKind::RA
                | DecompositionKind::AR
        );
        match s.kind {
            SchemeKindSpec::Weighted => {
                if d.kind != DecompositionKind::None {
                    return Err(invalid(
                        "decomposition.kind",
                        "WEIGHTED runs on the whole operator; use NONE",
                    ));
                }
            }
            SchemeKindSpec::Factorized => {
                let two_part =
                    d.kind == DecompositionKind::Directional || (partitioned && d.p == Some(2));
                if !two_part {
                    return Err(invalid(
                        "decomposition",
                        "FACTORIZED needs exactly two components (DIRECTIONAL or p = 2)",
                    ));
                }
            }
            SchemeKindSpec::SubdomainLagged
            | SchemeKindSpec::SubdomainComposed
            | SchemeKindSpec::ComponentSpace
            | SchemeKindSpec::ComponentSpaceThreeLevel
                if !nodal_partition && d.kind != DecompositionKind::None =>
            {
                return Err(invalid(
                    "decomposition.kind",
                    "restricted schemes need a nodal partition (CHI_A/A_CHI/R_A/A_R) or NONE",
                ));
            }
            _ => {}
        }

        if let InitialSpec::Eigenmode { m1, m2 } = &self.initial {
            if *m1 < 1 || *m1 > g.n1 - 1 || *m2 < 1 || *m2 > g.n2 - 1 {
                return Err(invalid(
                    "initial",
                    "eigenmode indices out of range for the grid",
                ));
            }
        }
        if let InitialSpec::Random { algorithm, .. } = &self.initial {
            if algorithm != RANDOM_ALGORITHM_ID {
                return Err(invalid(
                    "initial.algorithm",
                    format!("unsupported generator; this build provides '{RANDOM_ALGORITHM_ID}'"),
                ));
            }
        }

        if let ForcingSpec::Expression { formula } = &self.forcing {
            expr::parse(formula).map_err(|e| invalid("forcing.formula", e.to_string()))?;
            let forcing_supported = matches!(
                s.kind,
                SchemeKindSpec::Weighted
                    | SchemeKindSpec::Factorized
                    | SchemeKindSpec::Componentwise
                    | SchemeKindSpec::ComponentwiseSymmetrized
                    | SchemeKindSpec::AdditiveAveraged
                    | SchemeKindSpec::Regularized
                    | SchemeKindSpec::VectorAdditive
                    | SchemeKindSpec::SecondOrderRegularized
            );
            if !forcing_supported {
                return Err(invalid(
                    "forcing",
                    "this scheme is implemented for the homogeneous problem only",
                ));
            }
        }

        match self.reference {
            ReferenceSpec::Eigenmode => {
                let ok = matches!(self.initial, InitialSpec::Eigenmode { .. })
                    && matches!(self.coefficient, CoefficientSpec::Constant { .. })
                    && matches!(self.forcing, ForcingSpec::Zero);
                if !ok {
                    return Err(invalid(
                        "reference",
                        "EIGENMODE needs a constant coefficient, eigenmode initial data, and zero forcing",
                    ));
                }
            }
            ReferenceSpec::Expm => {
                if !matches!(self.forcing, ForcingSpec::Zero) {
                    return Err(invalid(
                        "reference",
                        "EXPM reference covers the homogeneous problem",
                    ));
                }
                let interior = (g.n1 - 1) * (g.n2 - 1);
                if interior > 1024 {
                    return Err(invalid(
                        "reference",
                        format!("EXPM is dense-path only (interior {interior} > 1024)"),
                    ));
                }
            }
            ReferenceSpec::None => {}
        }

        if let Some(norms) = &self.output.norms {
            for (i, n) in norms.iter().enumerate() {
                if norms[..i].contains(n) {
                    return Err(invalid("output.norms", "duplicate norm column"));
                }
            }
        }

        if let Some(orders) = &self.orders {
            if orders.levels < 3 {
                return Err(invalid("orders.levels", "need at least 3 levels"));
            }
            if self.reference == ReferenceSpec::None {
                return Err(invalid(
                    "orders",
                    "an order study needs an EIGENMODE or EXPM reference",
                ));
            }
        }

        Ok(())
    }

    pub fn wants_norm(&self, column: NormColumn) -> bool {
        match &self.output.norms {
            None => true,
            Some(list) => list.contains(&column),
        }
    }
}
