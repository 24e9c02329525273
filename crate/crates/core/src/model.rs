//! The mean-field system family `ẋ_i = F(X, x_i) + H_i(X, x_i)`.
//!
//! The canonical instance is the Winfree model
//! `F(X, x) = ω − κ·σ(X)·sin(2πx)` with `σ(X) = (1/N) Σ_j (1 + cos(2πx_j))`.
//! The general family replaces `1 + cos` and `sin` by finite trigonometric
//! series (influence and response):
//!
//! ```text
//! F(X, x) = ω − (κ/N) Σ_j infl(x_j) · resp(x)
//! ```
//!
//! All partial derivatives are analytic; the seminorm `‖·‖_B` over the slab
//! `B = {max|y_i − y_j| ≤ 1}` is estimated by scanning one diagonal period
//! times the cross-section cube, which is exhaustive for 𝟙-periodic
//! integrands and flagged otherwise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{quadrature, quadrature_checked};
use crate::periodic::{FourierTerm, TrigSeries};
use crate::seed::rng_for;

/// Built-in field families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Winfree,
    CustomTrig,
}

/// Perturbation kinds for `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    Zero,
    TrigDiagPeriodic,
    RandomTrig,
}

/// Serializable perturbation spec. `r` bounds both `‖H‖_B` and `‖dH‖_B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "one-periodic", default = "default_true")]
    pub one_periodic: bool,
}

fn default_true() -> bool {
    true
}

impl PerturbationSpec {
    pub fn zero() -> Self {
        Self {
            kind: PerturbationKind::Zero,
            r: 0.0,
            seed: 0,
            one_periodic: true,
        }
    }
}

/// Materialized perturbation with drawn coefficients.
#[derive(Debug, Clone)]
enum Perturbation {
    Zero,
    /// `H_i = amp · sin(2π x_i)`, `amp = r/(2π)` so that `‖dH‖_B = r`.
    TrigDiag { amp: f64 },
    /// Per-oscillator own-phase mode plus a Kuramoto-type difference term:
    /// `H_i = c_i sin(2π x_i + φ_i) + d_i (1/N) Σ_j sin(2π(x_j − x_i))`.
    RandomTrig {
        own_amp: Vec<f64>,
        own_phase: Vec<f64>,
        diff_amp: Vec<f64>,
    },
}

/// Model config as ingested from JSON. Field names are part of the contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub family: Family,
    pub omega: f64,
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub influence: Option<TrigSeries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<TrigSeries>,
    pub perturbation: PerturbationSpec,
}

/// The mean-field model: field family, analytic partials, and perturbation.
#[derive(Debug, Clone)]
pub struct MeanFieldModel {
    pub n: usize,
    pub family: Family,
    pub omega: f64,
    pub kappa: f64,
    pub perturbation_spec: PerturbationSpec,
    influence: TrigSeries,
    influence_d: TrigSeries,
    influence_dd: TrigSeries,
    response: TrigSeries,
    response_d: TrigSeries,
    response_dd: TrigSeries,
    perturbation: Perturbation,
}

impl MeanFieldModel {
    /// Canonical Winfree instance with zero perturbation.
    pub fn winfree(n: usize, omega: f64, kappa: f64) -> Result<Self> {
        Self::from_config(&ModelConfig {
            n,
            family: Family::Winfree,
            omega,
            kappa,
            influence: None,
            response: None,
            perturbation: PerturbationSpec::zero(),
        })
    }

    pub fn winfree_perturbed(n: usize, omega: f64, kappa: f64, p: PerturbationSpec) -> Result<Self> {
        Self::from_config(&ModelConfig {
            n,
            family: Family::Winfree,
            omega,
            kappa,
            influence: None,
            response: None,
            perturbation: p,
        })
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        if cfg.n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 oscillators, got {}",
                cfg.n
            )));
        }
        let (influence, response) = match cfg.family {
            Family::Winfree => (
                TrigSeries::new(vec![FourierTerm::Const(1.0), FourierTerm::Cos(1, 1.0)]),
                TrigSeries::new(vec![FourierTerm::Sin(1, 1.0)]),
            ),
            Family::CustomTrig => {
                let infl = cfg.influence.clone().ok_or_else(|| {
                    Error::InvalidArgument("custom-trig family requires `influence`".into())
                })?;
                let resp = cfg.response.clone().ok_or_else(|| {
                    Error::InvalidArgument("custom-trig family requires `response`".into())
                })?;
                (infl, resp)
            }
        };
        let perturbation = Perturbation::materialize(&cfg.perturbation, cfg.n)?;
        Ok(Self {
            n: cfg.n,
            family: cfg.family,
            omega: cfg.omega,
            kappa: cfg.kappa,
            perturbation_spec: cfg.perturbation,
            influence_d: influence.deriv(),
            influence_dd: influence.deriv().deriv(),
            response_d: response.deriv(),
            response_dd: response.deriv().deriv(),
            influence,
            response,
            perturbation,
        })
    }

    fn sigma(&self, x_state: &DVector<f64>) -> f64 {
        x_state.iter().map(|&xj| self.influence.eval(xj)).sum::<f64>() / self.n as f64
    }

    /// F(X, x).
    pub fn eval_field(&self, x_state: &DVector<f64>, x: f64) -> f64 {
        self.omega - self.kappa * self.sigma(x_state) * self.response.eval(x)
    }

    /// ∂_{N+1} F(X, x) — derivative in the distinguished phase slot.
    pub fn df_dphase(&self, x_state: &DVector<f64>, x: f64) -> f64 {
        -self.kappa * self.sigma(x_state) * self.response_d.eval(x)
    }

    /// ∂_j F(X, x) for j = 1..N.
    pub fn df_dstate(&self, x_state: &DVector<f64>, x: f64) -> DVector<f64> {
        let scale = -self.kappa / self.n as f64 * self.response.eval(x);
        DVector::from_iterator(
            self.n,
            x_state.iter().map(|&xj| scale * self.influence_d.eval(xj)),
        )
    }

    /// Largest |second partial| of F at the point, over all index pairs.
    fn d2f_max_at(&self, x_state: &DVector<f64>, x: f64) -> f64 {
        let kn = self.kappa / self.n as f64;
        let resp = self.response.eval(x);
        let resp_d = self.response_d.eval(x);
        let resp_dd = self.response_dd.eval(x);
        let sigma = self.sigma(x_state);
        let mut best = (self.kappa * sigma * resp_dd).abs(); // ∂²_{N+1,N+1}
        for &xj in x_state.iter() {
            best = best
                .max((kn * self.influence_d.eval(xj) * resp_d).abs()) // ∂²_{j,N+1}
                .max((kn * self.influence_dd.eval(xj) * resp).abs()); // ∂²_{j,j}
        }
        best
    }

    /// Perturbation vector H(X).
    pub fn h(&self, x_state: &DVector<f64>) -> DVector<f64> {
        self.perturbation.eval(x_state)
    }

    /// Full derivative matrix (∂ H_i / ∂ x_j)(X).
    pub fn dh(&self, x_state: &DVector<f64>) -> DMatrix<f64> {
        self.perturbation.jacobian(x_state)
    }

    /// Right-hand side of the perturbed system: ẋ_i = F(X, x_i) + H_i(X).
    pub fn full_field(&self, x_state: &DVector<f64>) -> DVector<f64> {
        let h = self.h(x_state);
        DVector::from_iterator(
            self.n,
            x_state
                .iter()
                .enumerate()
                .map(|(i, &xi)| self.eval_field(x_state, xi) + h[i]),
        )
    }

    /// Jacobian of the full field: `g_ij = ∂_j F_i(X, x_i)` with the diagonal
    /// carrying both the own-column and the phase-slot derivative.
    pub fn field_jacobian(&self, x_state: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut g = self.dh(x_state);
        for i in 0..n {
            let xi = x_state[i];
            let row = self.df_dstate(x_state, xi);
            for j in 0..n {
                g[(i, j)] += row[j];
            }
            g[(i, i)] += self.df_dphase(x_state, xi);
        }
        g
    }

    /// Diagonal profile: (F(s𝟙,s), ∂_{N+1}F(s𝟙,s), ∂_j F(s𝟙,s)).
    pub fn diagonal_profile(&self, s: f64) -> (f64, f64, DVector<f64>) {
        let diag = DVector::from_element(self.n, s);
        (
            self.eval_field(&diag, s),
            self.df_dphase(&diag, s),
            self.df_dstate(&diag, s),
        )
    }

    /// Transformed coefficients at μ: `b = ∂_{N+1}F/F`, `a_j = ∂_j F/F` on the
    /// diagonal. Fails if the diagonal field value is not positive.
    pub fn coefficients_ab(&self, mu: f64) -> Result<(f64, DVector<f64>)> {
        let (f, dphase, dstate) = self.diagonal_profile(mu);
        if f <= 0.0 {
            return Err(Error::DiagonalVanishing { mu, value: f });
        }
        Ok((dphase / f, dstate / f))
    }

    /// Analytic sup-norm bound `max(‖H‖_B, ‖dH‖_B)` of the perturbation.
    pub fn perturbation_bound(&self) -> f64 {
        self.perturbation.norm_bound(self.n)
    }

    /// Hypothesis checks (H) and (H*).
    pub fn check_hypotheses(&self, quad_points: usize) -> Result<HypothesisReport> {
        let quad_points = quad_points.max(64);
        // min of F on the diagonal: grid + golden-section refinement
        let fdiag = |s: f64| self.diagonal_profile(s).0;
        let grid = 2048;
        let mut min_val = f64::INFINITY;
        let mut min_k = 0;
        for k in 0..=grid {
            let v = fdiag(k as f64 / grid as f64);
            if v < min_val {
                min_val = v;
                min_k = k;
            }
        }
        let mut a = (min_k as f64 - 1.0) / grid as f64;
        let mut b = (min_k as f64 + 1.0) / grid as f64;
        let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if fdiag(c) < fdiag(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let min_f_diag = min_val.min(fdiag(0.5 * (a + b)));

        let (h_star_integral, zero_sum_residual) = if min_f_diag > 0.0 {
            let h_star = quadrature_checked(
                |s| {
                    let (f, dphase, _) = self.diagonal_profile(s);
                    dphase / f
                },
                0.0,
                1.0,
                quad_points,
                1e-8,
            )?;
            let zero_sum = quadrature(
                |s| {
                    let (f, dphase, dstate) = self.diagonal_profile(s);
                    (dphase + dstate.sum()) / f
                },
                0.0,
                1.0,
                quad_points,
            );
            (h_star, zero_sum.abs())
        } else {
            (f64::NAN, f64::NAN)
        };

        // seminorm estimates of F and its first two derivative tensors
        let samples = 2000;
        let norm_f = self.seminorm_of(|y, z| self.eval_field(y, z), samples)?;
        let norm_df = self.seminorm_of(
            |y, z| self.df_dphase(y, z).abs().max(self.df_dstate(y, z).amax()),
            samples,
        )?;
        let norm_d2f = self.seminorm_of(|y, z| self.d2f_max_at(y, z), samples)?;

        // 𝟙-periodicity residual of F on sampled points
        let mut rng = rng_for(0, "hypothesis-periodicity");
        let mut periodicity_residual = 0.0_f64;
        for _ in 0..64 {
            let s: f64 = rng.gen::<f64>();
            let y = DVector::from_fn(self.n, |_, _| s + rng.gen::<f64>() - 0.5);
            let z = s + rng.gen::<f64>() - 0.5;
            let shifted = y.map(|v| v + 1.0);
            periodicity_residual = periodicity_residual
                .max((self.eval_field(&shifted, z + 1.0) - self.eval_field(&y, z)).abs());
        }

        let lipschitz_l = norm_f + norm_df + norm_d2f;
        let satisfied_h = min_f_diag > 1e-10
            && periodicity_residual < 1e-9
            && norm_f.is_finite()
            && norm_df.is_finite()
            && norm_d2f.is_finite();
        let satisfied_h_star = h_star_integral.is_finite() && h_star_integral < -1e-10;
        Ok(HypothesisReport {
            min_f_diag,
            h_star_integral,
            alpha: -h_star_integral,
            zero_sum_residual,
            norm_f,
            norm_df,
            norm_d2f,
            lipschitz_l,
            periodicity_residual,
            satisfied: Satisfied {
                h: satisfied_h,
                h_star: satisfied_h_star,
            },
        })
    }

    /// Seminorm of a scalar observable of `(X, x)` restricted to the slab,
    /// sampling the diagonal period times the cross-section cube.
    fn seminorm_of(&self, g: impl Fn(&DVector<f64>, f64) -> f64, samples: usize) -> Result<f64> {
        seminorm_b(
            |y| {
                let x_state = y.rows(0, self.n).into_owned();
                g(&x_state, y[self.n])
            },
            self.n + 1,
            samples,
            0,
        )
    }
}

impl Perturbation {
    fn materialize(spec: &PerturbationSpec, n: usize) -> Result<Self> {
        if spec.r < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "perturbation amplitude must be >= 0, got {}",
                spec.r
            )));
        }
        Ok(match spec.kind {
            PerturbationKind::Zero => Perturbation::Zero,
            PerturbationKind::TrigDiagPeriodic => Perturbation::TrigDiag {
                amp: spec.r / std::f64::consts::TAU,
            },
            PerturbationKind::RandomTrig => {
                let mut rng = rng_for(spec.seed, "perturbation-random-trig");
                let own_amp: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
                let own_phase: Vec<f64> = (0..n)
                    .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
                    .collect();
                let diff_amp: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
                // scale so the analytic bound max(‖H‖_B, ‖dH‖_B) equals 0.95·r
                let raw = Perturbation::RandomTrig {
                    own_amp,
                    own_phase: own_phase.clone(),
                    diff_amp,
                };
                let bound = raw.norm_bound(n);
                let scale = if bound > 0.0 { 0.95 * spec.r / bound } else { 0.0 };
                match raw {
                    Perturbation::RandomTrig {
                        own_amp, diff_amp, ..
                    } => Perturbation::RandomTrig {
                        own_amp: own_amp.iter().map(|c| c * scale).collect(),
                        own_phase,
                        diff_amp: diff_amp.iter().map(|c| c * scale).collect(),
                    },
                    _ => unreachable!(),
                }
            }
        })
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let tau = std::f64::consts::TAU;
        match self {
            Perturbation::Zero => DVector::zeros(n),
            Perturbation::TrigDiag { amp } => {
                DVector::from_iterator(n, x.iter().map(|&xi| amp * (tau * xi).sin()))
            }
            Perturbation::RandomTrig {
                own_amp,
                own_phase,
                diff_amp,
            } => DVector::from_fn(n, |i, _| {
                let own = own_amp[i] * (tau * x[i] + own_phase[i]).sin();
                let coupling =
                    x.iter().map(|&xj| (tau * (xj - x[i])).sin()).sum::<f64>() / n as f64;
                own + diff_amp[i] * coupling
            }),
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let tau = std::f64::consts::TAU;
        match self {
            Perturbation::Zero => DMatrix::zeros(n, n),
            Perturbation::TrigDiag { amp } => DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    amp * tau * (tau * x[i]).cos()
                } else {
                    0.0
                }
            }),
            Perturbation::RandomTrig {
                own_amp,
                own_phase,
                diff_amp,
            } => DMatrix::from_fn(n, n, |i, j| {
                let mut v = 0.0;
                if i == j {
                    v += own_amp[i] * tau * (tau * x[i] + own_phase[i]).cos();
                    // d/dx_i of the difference sum: -Σ_k cos(2π(x_k − x_i))
                    v -= diff_amp[i] * tau / n as f64
                        * x.iter().map(|&xk| (tau * (xk - x[i])).cos()).sum::<f64>();
                }
                // d/dx_j of the k = j summand (for j = i this is cos(0) = 1)
                v += diff_amp[i] * tau / n as f64 * (tau * (x[j] - x[i])).cos();
                v
            }),
        }
    }

    /// Analytic bound for max(‖H‖_B, ‖dH‖_B).
    fn norm_bound(&self, n: usize) -> f64 {
        let tau = std::f64::consts::TAU;
        match self {
            Perturbation::Zero => 0.0,
            Perturbation::TrigDiag { amp } => amp.abs().max(amp.abs() * tau),
            Perturbation::RandomTrig {
                own_amp, diff_amp, ..
            } => (0..own_amp.len())
                .map(|i| {
                    let h = own_amp[i].abs() + diff_amp[i].abs();
                    let dh_own = (own_amp[i].abs() + diff_amp[i].abs()) * tau;
                    let dh_cross = diff_amp[i].abs() * tau / n as f64;
                    h.max(dh_own).max(dh_cross)
                })
                .fold(0.0, f64::max),
        }
    }
}

/// Satisfaction flags for the two hypotheses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Satisfied {
    pub h: bool,
    pub h_star: bool,
}

/// Report of the synchronization hypothesis checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub min_f_diag: f64,
    pub h_star_integral: f64,
    /// −∫₀¹ b(s) ds of the induced coefficient b = ∂_{N+1}F/F.
    pub alpha: f64,
    pub zero_sum_residual: f64,
    pub norm_f: f64,
    pub norm_df: f64,
    pub norm_d2f: f64,
    /// L = ‖F‖_B + ‖dF‖_B + ‖d²F‖_B.
    pub lipschitz_l: f64,
    pub periodicity_residual: f64,
    pub satisfied: Satisfied,
}

/// Monte-Carlo + grid lower bound of `‖g‖_B = sup_B |g|`.
///
/// `B` is unbounded along the diagonal; one period of the diagonal direction
/// times the cube `[−1/2, 1/2]^dim` is scanned, which suffices for
/// 𝟙-periodic `g`. Non-periodic integrands are rejected with the estimate
/// attached as a lower bound.
pub fn seminorm_b(
    g: impl Fn(&DVector<f64>) -> f64,
    dim: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let samples = samples.max(1000);
    let ones = DVector::from_element(dim, 1.0);
    let mut best = 0.0_f64;
    // diagonal grid sweep
    let grid = 256;
    for k in 0..grid {
        let s = k as f64 / grid as f64;
        best = best.max(g(&(&ones * s)).abs());
    }
    // Monte-Carlo over diagonal shift × cross-section cube
    let mut rng = rng_for(seed, "seminorm-mc");
    let mut worst_violation = 0.0_f64;
    for sample in 0..samples {
        let s: f64 = rng.gen::<f64>();
        let y = DVector::from_fn(dim, |_, _| s + rng.gen::<f64>() - 0.5);
        let v = g(&y).abs();
        best = best.max(v);
        if sample % 32 == 0 {
            // periodicity probe along the scanned diagonal window
            let shifted = &y + &ones;
            let twice = &y + &ones * 2.0;
            let v1 = g(&shifted).abs();
            let v2 = g(&twice).abs();
            best = best.max(v1);
            let residual = (v1 - v).abs().max((v2 - v).abs());
            worst_violation = worst_violation.max(residual / (1.0 + v.abs()));
        }
    }
    if worst_violation > 1e-8 {
        return Err(Error::NonPeriodicUnbounded { lower_bound: best });
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{PI, TAU};

    fn diag(n: usize, s: f64) -> DVector<f64> {
        DVector::from_element(n, s)
    }

    #[test]
    fn winfree_field_examples() {
        let uncoupled = MeanFieldModel::winfree(5, 1.0, 0.0).unwrap();
        assert_eq!(uncoupled.eval_field(&diag(5, 0.37), 0.81), 1.0);

        let m = MeanFieldModel::winfree(5, 1.0, 0.05).unwrap();
        assert_abs_diff_eq!(m.eval_field(&diag(5, 0.0), 0.0), 1.0, epsilon = 1e-15);
        // F(s𝟙,s) = 1 − 0.05·(1+cos(π/2))·sin(π/2) = 0.95
        assert_abs_diff_eq!(m.eval_field(&diag(5, 0.25), 0.25), 0.95, epsilon = 1e-14);
    }

    #[test]
    fn diagonal_profile_examples() {
        let uncoupled = MeanFieldModel::winfree(4, 1.0, 0.0).unwrap();
        let (_, dphase, dstate) = uncoupled.diagonal_profile(0.3);
        assert_eq!(dphase, 0.0);
        assert_eq!(dstate.amax(), 0.0);

        let m = MeanFieldModel::winfree(5, 1.0, 0.05).unwrap();
        let (_, dphase, _) = m.diagonal_profile(0.0);
        assert_abs_diff_eq!(dphase, -2.0 * PI * 0.05 * 2.0, epsilon = 1e-13);

        // 𝟙-periodicity of the profile
        let p0 = m.diagonal_profile(0.33);
        let p1 = m.diagonal_profile(1.33);
        assert_abs_diff_eq!(p0.0, p1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p0.1, p1.1, epsilon = 1e-12);
    }

    #[test]
    fn analytic_partials_match_finite_differences() {
        let spec = PerturbationSpec {
            kind: PerturbationKind::RandomTrig,
            r: 0.02,
            seed: 3,
            one_periodic: true,
        };
        let m = MeanFieldModel::winfree_perturbed(4, 1.0, 0.05, spec).unwrap();
        let mut rng = rng_for(11, "fd-check");
        let h = 1e-6;
        for _ in 0..100 {
            let x = DVector::from_fn(4, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let z: f64 = rng.gen::<f64>() * 2.0 - 1.0;
            let fd_phase = (m.eval_field(&x, z + h) - m.eval_field(&x, z - h)) / (2.0 * h);
            let an_phase = m.df_dphase(&x, z);
            assert!(
                (fd_phase - an_phase).abs() <= 1e-6 * an_phase.abs().max(1.0),
                "phase partial mismatch: fd {fd_phase} vs analytic {an_phase}"
            );
            let an_state = m.df_dstate(&x, z);
            let jac_h = m.dh(&x);
            for j in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (m.eval_field(&xp, z) - m.eval_field(&xm, z)) / (2.0 * h);
                assert!(
                    (fd - an_state[j]).abs() <= 1e-6 * an_state[j].abs().max(1.0),
                    "state partial mismatch at {j}"
                );
                // perturbation jacobian column
                let fdh = (m.h(&xp) - m.h(&xm)) / (2.0 * h);
                for i in 0..4 {
                    assert!(
                        (fdh[i] - jac_h[(i, j)]).abs() <= 1e-6 * jac_h[(i, j)].abs().max(1.0),
                        "dH mismatch at ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn field_jacobian_matches_finite_differences() {
        let m = MeanFieldModel::winfree(3, 1.0, 0.05).unwrap();
        let x = DVector::from_row_slice(&[0.11, 0.17, 0.05]);
        let g = m.field_jacobian(&x);
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (m.full_field(&xp) - m.full_field(&xm)) / (2.0 * h);
            for i in 0..3 {
                assert!(
                    (fd[i] - g[(i, j)]).abs() < 1e-6,
                    "jacobian entry ({i},{j}): fd {} vs {}",
                    fd[i],
                    g[(i, j)]
                );
            }
        }
    }

    #[test]
    fn hypotheses_uncoupled_system_is_neutral() {
        let m = MeanFieldModel::winfree(5, 1.0, 0.0).unwrap();
        let report = m.check_hypotheses(256).unwrap();
        assert_abs_diff_eq!(report.h_star_integral, 0.0, epsilon = 1e-12);
        assert!(report.satisfied.h);
        assert!(!report.satisfied.h_star, "(H*) requires strict negativity");
    }

    #[test]
    fn hypotheses_winfree_kappa_005() {
        let m = MeanFieldModel::winfree(5, 1.0, 0.05).unwrap();
        let report = m.check_hypotheses(512).unwrap();
        assert!(report.satisfied.h && report.satisfied.h_star);
        // oracle values: independent quadrature/minimization give
        // h* = -0.15742434505751887 and min F = 1 - 0.05·3√3/4
        assert_abs_diff_eq!(report.h_star_integral, -0.15742434505751887, epsilon = 1e-9);
        let exact_min = 1.0 - 0.05 * 3.0 * 3.0_f64.sqrt() / 4.0;
        assert_abs_diff_eq!(report.min_f_diag, exact_min, epsilon = 1e-10);
        // leading-order sanity band: alpha ≈ πκ within ±20%
        assert!((report.alpha - PI * 0.05).abs() < 0.2 * PI * 0.05);
        assert!(report.zero_sum_residual < 1e-8);
    }

    #[test]
    fn hypotheses_stable_under_quad_doubling() {
        let m = MeanFieldModel::winfree(3, 1.0, 0.05).unwrap();
        let a = m.check_hypotheses(256).unwrap();
        let b = m.check_hypotheses(512).unwrap();
        assert!((a.h_star_integral - b.h_star_integral).abs() < 1e-8);
        assert!((a.zero_sum_residual - b.zero_sum_residual).abs() < 1e-8);
    }

    #[test]
    fn coefficient_identity_log_derivative() {
        let m = MeanFieldModel::winfree(5, 1.0, 0.05).unwrap();
        // b(μ) at μ=0 from the diagonal-profile example
        let (b0, _) = m.coefficients_ab(0.0).unwrap();
        assert_abs_diff_eq!(b0, -2.0 * PI * 0.05 * 2.0 / 1.0, epsilon = 1e-13);

        // pointwise: b + Σ a_j = d/dμ ln F(μ𝟙,μ)
        let h = 1e-5;
        for k in 0..256 {
            let mu = k as f64 / 256.0;
            let (b, a) = m.coefficients_ab(mu).unwrap();
            let fd =
                (m.diagonal_profile(mu + h).0.ln() - m.diagonal_profile(mu - h).0.ln()) / (2.0 * h);
            assert!(
                (b + a.sum() - fd).abs() < 1e-8,
                "log-derivative identity residual at mu = {mu}"
            );
        }
        // integral identity
        let integral = quadrature(
            |s| {
                let (b, a) = m.coefficients_ab(s).unwrap();
                b + a.sum()
            },
            0.0,
            1.0,
            1024,
        );
        assert_abs_diff_eq!(integral, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn coefficients_uncoupled_are_zero() {
        let m = MeanFieldModel::winfree(3, 1.0, 0.0).unwrap();
        let (b, a) = m.coefficients_ab(0.4).unwrap();
        assert_eq!(b, 0.0);
        assert_eq!(a.amax(), 0.0);
    }

    #[test]
    fn diagonal_vanishing_is_reported() {
        // kappa large enough to push the diagonal field negative
        let m = MeanFieldModel::winfree(3, 1.0, 2.0).unwrap();
        assert!(matches!(
            m.coefficients_ab(1.0 / 6.0),
            Err(Error::DiagonalVanishing { .. })
        ));
        let report = m.check_hypotheses(256).unwrap();
        assert!(report.min_f_diag <= 0.0);
        assert!(!report.satisfied.h);
    }

    #[test]
    fn seminorm_examples() {
        // zero function
        let z = seminorm_b(|_| 0.0, 3, 1000, 0).unwrap();
        assert_eq!(z, 0.0);
        // sin(2π y₁) in one variable has sup 1 on any period
        let s = seminorm_b(|y| (TAU * y[0]).sin(), 1, 20_000, 1).unwrap();
        assert!(s > 0.999 && s <= 1.0, "sup estimate {s}");
        // winfree coupling at κ = 0.05: bounded by ω + κ·max|(1+cos)(sin)|
        let m = MeanFieldModel::winfree(3, 1.0, 0.05).unwrap();
        let est = seminorm_b(
            |y| m.eval_field(&y.rows(0, 3).into_owned(), y[3]),
            4,
            5000,
            2,
        )
        .unwrap();
        assert!(est <= 1.0 + 0.1, "estimate {est} exceeds the analytic bound");
    }

    #[test]
    fn seminorm_rejects_growing_non_periodic_functions() {
        let res = seminorm_b(|y| y[0], 2, 1000, 0);
        assert!(matches!(res, Err(Error::NonPeriodicUnbounded { .. })));
    }

    #[test]
    fn seminorm_is_monotone_in_samples() {
        let g = |y: &DVector<f64>| (TAU * y[0]).sin() * (TAU * y[1]).cos();
        let coarse = seminorm_b(g, 2, 1000, 7).unwrap();
        let fine = seminorm_b(g, 2, 8000, 7).unwrap();
        assert!(fine >= coarse, "estimate shrank with more samples");
    }

    #[test]
    fn perturbation_norm_bound_respected() {
        for kind in [PerturbationKind::TrigDiagPeriodic, PerturbationKind::RandomTrig] {
            let spec = PerturbationSpec {
                kind,
                r: 0.01,
                seed: 9,
                one_periodic: true,
            };
            let m = MeanFieldModel::winfree_perturbed(4, 1.0, 0.05, spec).unwrap();
            assert!(m.perturbation_bound() <= 0.01 + 1e-12);
            // sampled estimate cannot exceed the analytic bound either
            let est = seminorm_b(|y| m.h(&y.rows(0, 4).into_owned()).amax(), 5, 3000, 4).unwrap();
            assert!(est <= 0.01 * (1.0 + 1e-9), "sampled ‖H‖ = {est}");
        }
    }

    #[test]
    fn model_config_round_trip_bit_exact_names() {
        let json =
            r#"{"N":5,"family":"winfree","omega":1.0,"kappa":0.05,"perturbation":{"kind":"zero"}}"#;
        let cfg: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.n, 5);
        assert_eq!(cfg.family, Family::Winfree);
        let m = MeanFieldModel::from_config(&cfg).unwrap();
        assert_eq!(m.n, 5);
        // unknown keys rejected
        let bad = r#"{"N":5,"family":"winfree","omega":1.0,"kappa":0.05,"perturbation":{"kind":"zero"},"extra":1}"#;
        assert!(serde_json::from_str::<ModelConfig>(bad).is_err());
    }
}
