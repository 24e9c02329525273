//! Experiment configuration: one JSON document drives every subcommand.

use serde::{Deserialize, Serialize};
use syncstab::linform::{LinearSystemConfig, ScalarSpec, ZetaSpec};
use syncstab::model::{Family, ModelConfig, PerturbationSpec};
use syncstab::ode::IntegratorConfig;
use syncstab::periodic::{FourierTerm, TrigSeries};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearSystemConfig>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub which: WhichConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: f64,
    pub integrator: IntegratorConfig,
    pub seeds: Vec<u64>,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: 200.0,
            integrator: IntegratorConfig::default(),
            seeds: vec![0],
            output_dir: "out".into(),
        }
    }
}

/// Per-subcommand parameters, all optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct WhichConfig {
    pub simulate: SimulateParams,
    pub linear_decompose: DecomposeParams,
    pub psi: PsiParams,
    pub delta: DeltaParams,
    pub locked_orbit: LockedOrbitParams,
    pub stable_manifold: ManifoldParams,
    pub contraction: ContractionParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct SimulateParams {
    /// Initial phases; default spreads a 0.04 dispersion fan.
    pub x0: Option<Vec<f64>>,
    /// Dispersion threshold (the 2D bound).
    pub d_bound: f64,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            x0: None,
            d_bound: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct DecomposeParams {
    pub y: Option<Vec<f64>>,
    pub s_end: f64,
    /// Certification target as a fraction of α.
    pub beta_frac: f64,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        Self {
            y: None,
            s_end: 25.0,
            beta_frac: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct PsiParams {
    pub y: Option<Vec<f64>>,
    /// ψ horizon in integer periods.
    pub periods: usize,
}

impl Default for PsiParams {
    fn default() -> Self {
        Self {
            y: None,
            periods: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct DeltaParams {
    /// Number of random periodic systems.
    pub systems: usize,
    /// β values as fractions of α.
    pub beta_fracs: Vec<f64>,
    /// Lipschitz factor L of the closed form.
    pub l: f64,
}

impl Default for DeltaParams {
    fn default() -> Self {
        Self {
            systems: 5,
            beta_fracs: vec![0.25, 0.5, 0.75],
            l: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct LockedOrbitParams {
    pub x_guess: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ManifoldParams {
    /// Norm of the kernel displacements.
    pub xi_norm: f64,
    /// Number of kernel directions to certify (capped at N−1).
    pub directions: usize,
    /// Contraction measurement horizon.
    pub contraction_horizon: f64,
}

impl Default for ManifoldParams {
    fn default() -> Self {
        Self {
            xi_norm: 1e-3,
            directions: 2,
            contraction_horizon: 60.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ContractionParams {
    /// Offset added to the relaxed base point (mean-zero by construction).
    pub offset_norm: f64,
    pub horizon: f64,
}

impl Default for ContractionParams {
    fn default() -> Self {
        Self {
            offset_norm: 1e-3,
            horizon: 60.0,
        }
    }
}

impl ExperimentConfig {
    /// Built-in default: the canonical Winfree experiment.
    pub fn default_winfree() -> Self {
        Self {
            model: ModelConfig {
                n: 5,
                family: Family::Winfree,
                omega: 1.0,
                kappa: 0.05,
                influence: None,
                response: None,
                perturbation: PerturbationSpec::zero(),
            },
            linear: None,
            run: RunConfig::default(),
            which: WhichConfig::default(),
        }
    }

    /// Fallback linear system when none is configured: the
    /// constant-coefficient oracle b ≡ −1, a_j ≡ 1/N with zero ζ.
    pub fn linear_or_default(&self) -> LinearSystemConfig {
        self.linear.clone().unwrap_or_else(|| LinearSystemConfig {
            n: 2,
            b: ScalarSpec {
                fourier: TrigSeries::new(vec![FourierTerm::Const(-1.0)]),
            },
            a: vec![
                ScalarSpec {
                    fourier: TrigSeries::new(vec![FourierTerm::Const(0.5)]),
                };
                2
            ],
            zeta: ZetaSpec::Zero,
            t_prime: 0.0,
        })
    }

    /// Default fan of initial phases with dispersion 0.04.
    pub fn default_x0(&self) -> Vec<f64> {
        let n = self.model.n;
        (0..n)
            .map(|i| 0.04 * i as f64 / (n - 1).max(1) as f64)
            .collect()
    }
}
