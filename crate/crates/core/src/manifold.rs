//! The nonlinear stability layer: linearization along orbits, the μ-chart
//! reduction, the local stable-manifold chart, and contraction certification.
//!
//! For a synchronized orbit `Φ^t(Z)` the time change `t ↦ μ = μ_Z(t)` (the
//! mean phase) turns the linearization `Ẏ = dℱ(Φ^t(Z))Y` into a perturbed
//! periodic linear system
//!
//! ```text
//! dY*/dμ = [b(μ)·I + 𝒜(μ) + ζ_Z(μ)]·Y*,   Y*(μ_Z(t)) = Y(t),
//! ```
//!
//! with `b = ∂_{N+1}F(μ𝟙,μ)/F(μ𝟙,μ)`, `a_j = ∂_j F(μ𝟙,μ)/F(μ𝟙,μ)` and a
//! small normalizing remainder `ζ_Z` (the orbit velocity is a solution
//! bounded away from zero). The stability form `𝓛_{μ_Z}` of that system,
//! normalized on the velocity, defines the chart ODE
//!
//! ```text
//! d/ds z(ξ,s) = ξ − 𝓛_{μ_{z(ξ,s)}}(ξ)·V_{z(ξ,s)}(t₀),   z(ξ,0) = X,
//! ```
//!
//! whose time-1 map `ξ ↦ z(ξ,1)` parameterizes the exponentially stable
//! manifold over the kernel hyperplane `𝓛_{μ_X}(ξ) = 0`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::log_linear_fit;
use crate::linform::{normalizing_solution, psi_multi, PerturbedLinearSystem, ZetaMatrix};
use crate::model::MeanFieldModel;
use crate::ode::{integrate, integrate_variational, IntegratorConfig, MatrixTrajectory, Trajectory};
use crate::periodic::ScalarPeriodic;
use crate::sync::{flow, LockedOrbit};

/// Shared context for the μ-chart machinery: the model, its sampled
/// hypothesis constants, the induced periodic coefficients, and horizons.
#[derive(Debug, Clone)]
pub struct ManifoldCtx {
    pub model: MeanFieldModel,
    pub cfg: IntegratorConfig,
    /// L = ‖F‖_B + ‖dF‖_B + ‖d²F‖_B (sampled).
    pub lipschitz_l: f64,
    /// min_{[0,1]} F(s𝟙,s).
    pub min_f_diag: f64,
    /// α = −∫₀¹ b of the induced coefficient.
    pub alpha: f64,
    /// Analytic bound on max(‖H‖_B, ‖dH‖_B).
    pub r_bound: f64,
    /// Nonlinear flow horizon backing each μ-chart.
    pub flow_horizon: f64,
    /// ψ horizon in integer periods of μ.
    pub psi_periods: usize,
    /// Validated chart displacement radius.
    pub xi_radius: f64,
    b_mu: ScalarPeriodic,
    a_mu: Vec<ScalarPeriodic>,
}

impl ManifoldCtx {
    pub fn new(model: MeanFieldModel, cfg: IntegratorConfig) -> Result<Arc<Self>> {
        let report = model.check_hypotheses(512)?;
        if !(report.satisfied.h && report.satisfied.h_star) {
            return Err(Error::HstabViolated {
                residual: report.zero_sum_residual,
                alpha: report.alpha,
            });
        }
        let mc = model.clone();
        let b_mu = ScalarPeriodic::from_fn(move |mu| {
            mc.coefficients_ab(mu).map(|(b, _)| b).unwrap_or(f64::NAN)
        });
        let a_mu: Vec<ScalarPeriodic> = (0..model.n)
            .map(|j| {
                let mc = model.clone();
                ScalarPeriodic::from_fn(move |mu| {
                    mc.coefficients_ab(mu).map(|(_, a)| a[j]).unwrap_or(f64::NAN)
                })
            })
            .collect();
        // horizon: the ψ quotient converges at the rate α of the reduced
        // system, so aim at e^{-α·k} ≈ 1e-8 plus transit margin
        let periods = (19.0 / report.alpha).ceil().clamp(12.0, 130.0) as usize;
        let r_bound = model.perturbation_bound();
        Ok(Arc::new(Self {
            model,
            cfg,
            lipschitz_l: report.lipschitz_l,
            min_f_diag: report.min_f_diag,
            alpha: report.alpha,
            r_bound,
            flow_horizon: periods as f64 * 1.35 + 10.0,
            psi_periods: periods,
            xi_radius: 2e-3,
            b_mu,
            a_mu,
        }))
    }

    pub fn with_psi_periods(self: &Arc<Self>, periods: usize) -> Arc<Self> {
        let mut ctx = (**self).clone();
        ctx.psi_periods = periods;
        ctx.flow_horizon = periods as f64 * 1.35 + 10.0;
        Arc::new(ctx)
    }

    pub fn with_xi_radius(self: &Arc<Self>, radius: f64) -> Arc<Self> {
        let mut ctx = (**self).clone();
        ctx.xi_radius = radius;
        Arc::new(ctx)
    }
}

/// Jacobian of the full field along the orbit of `Z` at time `t`.
pub fn jacobian_along(
    model: &MeanFieldModel,
    z: &DVector<f64>,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<f64>> {
    if t == 0.0 {
        return Ok(model.field_jacobian(z));
    }
    let traj = flow(model, z, 0.0, t, cfg)?;
    Ok(model.field_jacobian(traj.end_state()))
}

/// Variational matrix S_Z(t; t0) = dΦ^t(Z) along the orbit.
pub fn variational_s(
    model: &MeanFieldModel,
    z: &DVector<f64>,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<MatrixTrajectory> {
    let (_, s) = integrate_variational(
        |_, state| model.full_field(state),
        |_, state| model.field_jacobian(state),
        z,
        t0,
        t1,
        cfg,
    )?;
    Ok(s)
}

/// The μ-chart of one orbit: the time change, the transformed coefficients,
/// and the normalizing remainder ζ_Z.
#[derive(Debug, Clone)]
pub struct MuChart {
    model: MeanFieldModel,
    b_mu: ScalarPeriodic,
    a_mu: Vec<ScalarPeriodic>,
    /// Φ^t(Z) over the chart horizon.
    pub flow: Trajectory,
    /// μ_Z(t) as a scalar trajectory.
    pub mu: Trajectory,
    pub mu0: f64,
    pub mu_end: f64,
    /// sup_t max_j |Φ^t_j(Z) − μ_Z(t)|.
    pub dispersion_hat: f64,
    /// Sampled sup of |θ(t)| = |F(μ𝟙,μ)/μ̇ − 1|.
    pub theta_sup: f64,
    /// Sampled sup of the entries of ζ_Z.
    pub zeta_sup: f64,
    /// (L+r)·LD/(α−LD) + (r+LD)/α with sampled L, D, r and α = min F(s𝟙,s).
    pub epsilon_bound: f64,
}

/// Build the μ-chart at `Z`: integrate the orbit and the mean phase over the
/// context horizon and sample the transformed-system bounds.
pub fn mu_chart(ctx: &ManifoldCtx, z: &DVector<f64>) -> Result<MuChart> {
    let model = &ctx.model;
    let orbit = flow(model, z, 0.0, ctx.flow_horizon, &ctx.cfg)?;
    let mu0 = z.mean();
    let mu = integrate(
        |t, m| {
            let state = orbit.sample(t);
            DVector::from_element(1, model.eval_field(&state, m[0]))
        },
        &DVector::from_element(1, mu0),
        0.0,
        ctx.flow_horizon,
        &ctx.cfg,
    )?;
    let mu_end = mu.end_state()[0];
    for (k, d) in mu.derivs.iter().enumerate() {
        if d[0] <= 0.0 {
            return Err(Error::DiagonalVanishing {
                mu: mu.states[k][0],
                value: d[0],
            });
        }
    }
    let mut chart = MuChart {
        model: model.clone(),
        b_mu: ctx.b_mu.clone(),
        a_mu: ctx.a_mu.clone(),
        flow: orbit,
        mu,
        mu0,
        mu_end,
        dispersion_hat: 0.0,
        theta_sup: 0.0,
        zeta_sup: 0.0,
        epsilon_bound: 0.0,
    };
    // sampled bounds over the chart span
    let mut dispersion = 0.0_f64;
    let mut theta_sup = 0.0_f64;
    let mut zeta_sup = 0.0_f64;
    let samples = 384;
    for k in 0..=samples {
        let t = ctx.flow_horizon * k as f64 / samples as f64;
        let state = chart.flow.sample(t);
        let mu_t = chart.mu_of_t(t);
        let deviation = state
            .iter()
            .map(|&xj| (xj - mu_t).abs())
            .fold(0.0, f64::max);
        dispersion = dispersion.max(deviation);
        theta_sup = theta_sup.max(chart.theta(t).abs());
        zeta_sup = zeta_sup.max(chart.zeta_at_time(t).amax());
    }
    chart.dispersion_hat = dispersion;
    chart.theta_sup = theta_sup;
    chart.zeta_sup = zeta_sup;
    let (l, r) = (ctx.lipschitz_l, ctx.r_bound);
    let alpha_min = ctx.min_f_diag;
    let ld = l * dispersion;
    chart.epsilon_bound = if alpha_min > ld {
        (l + r) * ld / (alpha_min - ld) + (r + ld) / alpha_min
    } else {
        f64::INFINITY
    };
    Ok(chart)
}

impl MuChart {
    pub fn mu_of_t(&self, t: f64) -> f64 {
        self.mu.sample(t)[0]
    }

    /// Inverse of the diffeomorphism t ↦ μ_Z(t), by monotone bracketing on
    /// the stored knots plus Newton on the dense output.
    pub fn tau_of_mu(&self, mu: f64) -> f64 {
        let knots = &self.mu.times;
        let values = &self.mu.states;
        // binary search over the monotone knot values
        let (mut lo, mut hi) = (0usize, knots.len() - 1);
        if mu <= values[0][0] {
            return knots[0];
        }
        if mu >= values[hi][0] {
            return knots[hi];
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if values[mid][0] <= mu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (t_lo, t_hi) = (knots[lo], knots[hi]);
        let mut t = t_lo
            + (t_hi - t_lo) * (mu - values[lo][0]) / (values[hi][0] - values[lo][0]).max(1e-300);
        for _ in 0..8 {
            let f = self.mu.sample(t)[0] - mu;
            let df = self.mu.sample_deriv(t)[0];
            let step = f / df;
            t = (t - step).clamp(t_lo, t_hi);
            if step.abs() < 1e-13 * t.abs().max(1.0) {
                break;
            }
        }
        t
    }

    /// θ(t) = F(μ𝟙, μ)/μ̇ − 1 with μ̇ = F(Φ^t(Z), μ).
    pub fn theta(&self, t: f64) -> f64 {
        let mu_t = self.mu_of_t(t);
        let diag = DVector::from_element(self.model.n, mu_t);
        let f_diag = self.model.eval_field(&diag, mu_t);
        let mu_dot = self.model.eval_field(&self.flow.sample(t), mu_t);
        f_diag / mu_dot - 1.0
    }

    /// U_Z(t): the Jacobian mismatch between the orbit point and the
    /// diagonal at the mean phase (includes the perturbation derivatives).
    pub fn u_matrix(&self, t: f64) -> DMatrix<f64> {
        let state = self.flow.sample(t);
        let g_full = self.model.field_jacobian(&state);
        g_full - self.diag_jacobian(self.mu_of_t(t))
    }

    fn diag_jacobian(&self, mu: f64) -> DMatrix<f64> {
        let n = self.model.n;
        let (_, dphase, dstate) = self.model.diagonal_profile(mu);
        let mut g = DMatrix::from_fn(n, n, |_, j| dstate[j]);
        for i in 0..n {
            g[(i, i)] += dphase;
        }
        g
    }

    /// ζ_Z(μ) = dℱ(Φ^{τ(μ)}(Z))/μ̇ − b(μ)I − 𝒜(μ), the exact remainder of
    /// the time change.
    pub fn zeta_of_mu(&self, mu: f64) -> DMatrix<f64> {
        self.zeta_at_time(self.tau_of_mu(mu))
    }

    fn zeta_at_time(&self, t: f64) -> DMatrix<f64> {
        let n = self.model.n;
        let state = self.flow.sample(t);
        let mu_t = self.mu_of_t(t);
        let mu_dot = self.model.eval_field(&state, mu_t);
        let mut zeta = self.model.field_jacobian(&state) / mu_dot;
        let (f_diag, dphase, dstate) = {
            let diag = DVector::from_element(n, mu_t);
            (
                self.model.eval_field(&diag, mu_t),
                self.model.df_dphase(&diag, mu_t),
                self.model.df_dstate(&diag, mu_t),
            )
        };
        for i in 0..n {
            for j in 0..n {
                zeta[(i, j)] -= dstate[j] / f_diag;
            }
            zeta[(i, i)] -= dphase / f_diag;
        }
        zeta
    }

    /// Orbit velocity V_Z(t) = d/dt Φ^t(Z).
    pub fn velocity(&self, t: f64) -> DVector<f64> {
        self.model.full_field(&self.flow.sample(t))
    }

    /// The transformed perturbed linear system in the μ variable, anchored
    /// at t' = μ_Z(0).
    pub fn linear_system(self: &Arc<Self>) -> Result<PerturbedLinearSystem> {
        let chart = Arc::clone(self);
        let n = self.model.n;
        let zeta = ZetaMatrix::Fn {
            f: Arc::new(move |mu| chart.zeta_of_mu(mu)),
            span: (self.mu0, self.mu_end),
        };
        PerturbedLinearSystem::from_parts(
            n,
            self.b_mu.clone(),
            self.a_mu.clone(),
            zeta,
            self.mu0,
        )
    }

    /// Certify the transformed system: (H_stab) holds and the velocity is a
    /// normalizing solution over the chart span.
    pub fn certify(self: &Arc<Self>, cfg: &IntegratorConfig) -> Result<crate::linform::NormalizingSolution> {
        let sys = self.linear_system()?;
        sys.check_hstab()?;
        let horizon = (self.mu_end - self.mu0) * 0.9;
        normalizing_solution(&sys, &[self.velocity(0.0)], horizon, cfg)
    }
}

struct ChartData {
    sys: PerturbedLinearSystem,
    velocity0: DVector<f64>,
}

/// The local stable-manifold chart at a base point.
pub struct StableChart {
    ctx: Arc<ManifoldCtx>,
    pub base: DVector<f64>,
    /// Orthonormal basis of ker 𝓛_{μ_X} (N−1 vectors).
    pub kernel_basis: Vec<DVector<f64>>,
    pub xi_radius: f64,
    /// μ-chart data per base point, write-once and shared.
    cache: Mutex<HashMap<Vec<u64>, Arc<ChartData>>>,
}

/// Diagnostics of one chart evaluation.
#[derive(Debug, Clone)]
pub struct ChartEval {
    pub point: DVector<f64>,
    /// |z₈(1) − z₄(1)| of the coarse Richardson pair.
    pub richardson_diff: f64,
}

impl StableChart {
    /// Build the chart at `base`: certify the μ-chart there and construct
    /// the kernel basis by projecting the coordinate directions.
    pub fn new(ctx: Arc<ManifoldCtx>, base: DVector<f64>) -> Result<Self> {
        let n = ctx.model.n;
        let chart = Self {
            xi_radius: ctx.xi_radius,
            ctx,
            base,
            kernel_basis: Vec::new(),
            cache: Mutex::new(HashMap::new()),
        };
        // certification at the base point
        let base_chart = Arc::new(mu_chart(&chart.ctx, &chart.base)?);
        base_chart.certify(&chart.ctx.cfg)?;

        // 𝓛 of the coordinate directions, one bundled solve
        let data = chart.data_at(&chart.base)?;
        let mut directions: Vec<DVector<f64>> =
            (0..n).map(|i| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 })).collect();
        directions.push(data.velocity0.clone());
        let set = psi_multi(&data.sys, &directions, chart.ctx.psi_periods, &chart.ctx.cfg)?;
        let psi_v = set.values[n];
        if psi_v.abs() < 1e-10 {
            return Err(Error::PsiVanishing { value: psi_v });
        }
        // Gram–Schmidt of the projected directions spans the kernel
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n - 1);
        for i in 0..n {
            let l_i = set.values[i] / psi_v;
            let mut q = directions[i].clone() - &data.velocity0 * l_i;
            for e in &basis {
                let coeff = e.dot(&q);
                q -= e * coeff;
            }
            let norm = q.norm();
            if norm > 1e-8 && basis.len() < n - 1 {
                basis.push(q / norm);
            }
        }
        if basis.len() != n - 1 {
            return Err(Error::SingularShootingJacobian);
        }
        Ok(Self {
            kernel_basis: basis,
            ..chart
        })
    }

    fn data_at(&self, z: &DVector<f64>) -> Result<Arc<ChartData>> {
        let key: Vec<u64> = z.iter().map(|v| v.to_bits()).collect();
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(Arc::clone(hit));
        }
        let chart = Arc::new(mu_chart(&self.ctx, z)?);
        let data = Arc::new(ChartData {
            sys: chart.linear_system()?,
            velocity0: chart.velocity(0.0),
        });
        self.cache.lock().unwrap().insert(key, Arc::clone(&data));
        Ok(data)
    }

    /// 𝓛_{μ_z}(ξ) at an arbitrary base point z.
    pub fn l_value(&self, z: &DVector<f64>, xi: &DVector<f64>) -> Result<f64> {
        let data = self.data_at(z)?;
        let set = psi_multi(
            &data.sys,
            &[xi.clone(), data.velocity0.clone()],
            self.ctx.psi_periods,
            &self.ctx.cfg,
        )?;
        let psi_v = set.values[1];
        if psi_v.abs() < 1e-10 {
            return Err(Error::PsiVanishing { value: psi_v });
        }
        Ok(set.values[0] / psi_v)
    }

    /// Project a vector onto the kernel of 𝓛_{μ_X}: v − 𝓛(v)·V_X(t₀).
    pub fn kernel_project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let data = self.data_at(&self.base)?;
        let l = self.l_value(&self.base, v)?;
        Ok(v - &data.velocity0 * l)
    }

    /// Evaluate the chart map ξ ↦ z(ξ, 1).
    pub fn chart(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.chart_with_diagnostics(xi)?.point)
    }

    /// Chart map with the coarse-grid Richardson difference attached.
    pub fn chart_with_diagnostics(&self, xi: &DVector<f64>) -> Result<ChartEval> {
        let norm = xi.norm();
        if norm == 0.0 {
            return Ok(ChartEval {
                point: self.base.clone(),
                richardson_diff: 0.0,
            });
        }
        if norm > self.xi_radius {
            return Err(Error::RadiusExceeded {
                norm,
                radius: self.xi_radius,
            });
        }
        let l_xi = self.l_value(&self.base, xi)?;
        let tol = 1e-8 * norm.max(1.0);
        if l_xi.abs() > tol {
            return Err(Error::KernelViolation {
                value: l_xi.abs(),
                tol,
            });
        }
        let fine = self.integrate_chart_ode(xi, 8)?;
        let coarse = self.integrate_chart_ode(xi, 4)?;
        Ok(ChartEval {
            point: fine.clone(),
            richardson_diff: (fine - coarse).norm(),
        })
    }

    /// Fixed-step RK4 in the chart parameter s; the right-hand side
    /// re-evaluates 𝓛 at each stage's base point.
    fn integrate_chart_ode(&self, xi: &DVector<f64>, steps: usize) -> Result<DVector<f64>> {
        let h = 1.0 / steps as f64;
        let mut z = self.base.clone();
        let rhs = |point: &DVector<f64>| -> Result<DVector<f64>> {
            let data = self.data_at(point)?;
            let set = psi_multi(
                &data.sys,
                &[xi.clone(), data.velocity0.clone()],
                self.ctx.psi_periods,
                &self.ctx.cfg,
            )?;
            let psi_v = set.values[1];
            if psi_v.abs() < 1e-10 {
                return Err(Error::PsiVanishing { value: psi_v });
            }
            Ok(xi - &data.velocity0 * (set.values[0] / psi_v))
        };
        for _ in 0..steps {
            let k1 = rhs(&z)?;
            let k2 = rhs(&(&z + &k1 * (0.5 * h)))?;
            let k3 = rhs(&(&z + &k2 * (0.5 * h)))?;
            let k4 = rhs(&(&z + &k3 * h))?;
            z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        Ok(z)
    }
}

/// 𝓛_{μ_Z}(Y) for a batch of directions: the transformed system's linear
/// form normalized on the orbit velocity.
pub fn linear_form_nonlinear(
    ctx: &Arc<ManifoldCtx>,
    z: &DVector<f64>,
    directions: &[DVector<f64>],
) -> Result<Vec<f64>> {
    let chart = Arc::new(mu_chart(ctx, z)?);
    let sys = chart.linear_system()?;
    let velocity = chart.velocity(0.0);
    let mut all = directions.to_vec();
    all.push(velocity);
    let set = psi_multi(&sys, &all, ctx.psi_periods, &ctx.cfg)?;
    let psi_v = set.values[directions.len()];
    if psi_v.abs() < 1e-10 {
        return Err(Error::PsiVanishing { value: psi_v });
    }
    Ok(set.values[..directions.len()]
        .iter()
        .map(|v| v / psi_v)
        .collect())
}

/// Contraction measurement between two nearby trajectories.
#[derive(Debug, Clone)]
pub struct ContractionReport {
    /// Slope of the log-distance fit (negative means contraction).
    pub fitted_rate: f64,
    /// Lyapunov sup-ratio: max_t d(t)·e^{−rate·(t−t0)} / d(t0).
    pub k_hat: f64,
    pub fit_r2: f64,
    pub times: Vec<f64>,
    pub log_distances: Vec<f64>,
}

/// Serializable summary for CLI output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionSummary {
    pub fitted_rate: f64,
    pub k_hat: f64,
    pub fit_r2: f64,
}

impl ContractionReport {
    pub fn summary(&self) -> ContractionSummary {
        ContractionSummary {
            fitted_rate: self.fitted_rate,
            k_hat: self.k_hat,
            fit_r2: self.fit_r2,
        }
    }
}

/// Measure `d(t) = ‖Φ^t(X) − Φ^t(Y)‖` and fit its tail decay rate.
///
/// Both trajectories ride in one bundled integration so the difference is
/// resolved far below the per-trajectory global error. The fit samples at
/// multiples of `sample_period` (the orbit period) so periodic modulation
/// does not pollute slope or r²; samples under the integrator noise floor
/// are dropped.
pub fn verify_contraction(
    model: &MeanFieldModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    t_end: f64,
    sample_period: f64,
    cfg: &IntegratorConfig,
) -> Result<ContractionReport> {
    let n = model.n;
    let d0 = (x - y).norm();
    if d0 == 0.0 {
        return Err(Error::ZeroSeparation);
    }
    let mut bundle0 = DVector::zeros(2 * n);
    bundle0.rows_mut(0, n).copy_from(x);
    bundle0.rows_mut(n, n).copy_from(y);
    let traj = integrate(
        |_, state| {
            let mut out = DVector::zeros(2 * n);
            out.rows_mut(0, n)
                .copy_from(&model.full_field(&state.rows(0, n).into_owned()));
            out.rows_mut(n, n)
                .copy_from(&model.full_field(&state.rows(n, n).into_owned()));
            out
        },
        &bundle0,
        0.0,
        t_end,
        cfg,
    )?;
    let distance_at = |t: f64| -> f64 {
        let s = traj.sample(t);
        (s.rows(0, n) - s.rows(n, n)).norm()
    };
    let floor = 100.0 * cfg.abs_tol;
    let mut sample_times = Vec::new();
    let mut distances = Vec::new();
    let mut k = 1;
    loop {
        let t = k as f64 * sample_period;
        if t > t_end {
            break;
        }
        let d = distance_at(t);
        if d > floor {
            sample_times.push(t);
            distances.push(d);
        }
        k += 1;
    }
    let tail = sample_times.len() / 2;
    let fit = log_linear_fit(&sample_times[tail..], &distances[tail..], 0.0);
    let mut k_hat = 0.0_f64;
    let mut times = Vec::new();
    let mut log_distances = Vec::new();
    for (&t, &d) in sample_times.iter().zip(&distances) {
        k_hat = k_hat.max(d * (-fit.slope * t).exp() / d0);
        times.push(t);
        log_distances.push(d.ln());
    }
    Ok(ContractionReport {
        fitted_rate: fit.slope,
        k_hat,
        fit_r2: fit.r_squared,
        times,
        log_distances,
    })
}

/// Convergence of a trajectory toward the locked orbit.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub fitted_rate: f64,
    /// Aligned initial distance.
    pub d0: f64,
    /// Phase shift chosen by the alignment.
    pub tau_shift: f64,
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
}

/// Distance `d(t) = ‖Φ^t(X₀) − ρt𝟙 − Ψ(t+τ₀)‖` to the locked orbit, with
/// the comparison phase τ₀ chosen by golden-section minimization of d(0).
pub fn limit_cycle_convergence(
    model: &MeanFieldModel,
    orbit: &LockedOrbit,
    x0: &DVector<f64>,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<ConvergenceReport> {
    let traj = flow(model, x0, 0.0, t_end, cfg)?;
    let distance = |t: f64, tau: f64| -> f64 {
        // Φ^t(X₀) − ρt𝟙 − Ψ(t+τ) = Φ^t(X₀) − Φ^{t+τ}(X_*) + ρτ𝟙
        let mut diff = traj.sample(t) - orbit.state_at(t + tau);
        diff.add_scalar_mut(orbit.rho * tau);
        diff.norm()
    };
    // The misalignment guard works modulo integer 𝟙-translates (the orbit
    // is invariant under them); the reported distance stays unreduced so a
    // pure translate shows its constant offset.
    let reduced = |t: f64, tau: f64| -> f64 {
        let mut diff = traj.sample(t) - orbit.state_at(t + tau);
        diff.add_scalar_mut(orbit.rho * tau);
        let k = diff.mean().round();
        diff.add_scalar_mut(-k);
        diff.norm()
    };
    // golden-section alignment of the comparison phase at t = 0
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, orbit.period);
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if reduced(0.0, c) < reduced(0.0, d) {
            b = d;
        } else {
            a = c;
        }
    }
    let tau_shift = 0.5 * (a + b);
    let d0_reduced = reduced(0.0, tau_shift);
    if d0_reduced > 0.1 {
        return Err(Error::OrbitMisaligned { distance: d0_reduced });
    }
    let d0 = distance(0.0, tau_shift);
    let floor = 100.0 * cfg.abs_tol;
    let mut times = Vec::new();
    let mut distances = Vec::new();
    let mut k = 0;
    loop {
        let t = k as f64 * orbit.period;
        if t > t_end {
            break;
        }
        times.push(t);
        distances.push(distance(t, tau_shift));
        k += 1;
    }
    let usable: Vec<(f64, f64)> = times
        .iter()
        .zip(&distances)
        .filter(|&(_, &d)| d > floor)
        .map(|(&t, &d)| (t, d))
        .collect();
    let tail = usable.split_at(usable.len() / 2).1;
    let fit = if tail.len() >= 3 {
        let (ft, fd): (Vec<f64>, Vec<f64>) = tail.iter().copied().unzip();
        log_linear_fit(&ft, &fd, 0.0)
    } else {
        log_linear_fit(&times, &distances, floor)
    };
    Ok(ConvergenceReport {
        fitted_rate: fit.slope,
        d0,
        tau_shift,
        times,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linform::psi;
    use crate::model::{PerturbationKind, PerturbationSpec};
    use crate::sync::find_locked_orbit;
    use approx::assert_abs_diff_eq;

    fn cfg() -> IntegratorConfig {
        IntegratorConfig::default()
    }

    /// Strongly coupled test model: the reduced decay rate α ≈ πκ is large
    /// enough for short ψ horizons.
    fn fast_model(n: usize) -> MeanFieldModel {
        MeanFieldModel::winfree(n, 1.0, 0.2).unwrap()
    }

    #[test]
    fn jacobian_examples() {
        // uncoupled, unperturbed: J ≡ 0
        let free = MeanFieldModel::winfree(3, 1.0, 0.0).unwrap();
        let j = jacobian_along(&free, &DVector::from_row_slice(&[0.1, 0.4, 0.9]), 0.7, &cfg()).unwrap();
        assert_eq!(j.amax(), 0.0);

        // on the diagonal the row sums agree across rows
        let m = fast_model(4);
        let z = DVector::from_element(4, 0.23);
        let j = m.field_jacobian(&z);
        let sums: Vec<f64> = (0..4).map(|i| j.row(i).sum()).collect();
        for s in &sums {
            assert_abs_diff_eq!(*s, sums[0], epsilon = 1e-12);
        }

        // finite differences at a random point
        let x = DVector::from_row_slice(&[0.05, 0.21, 0.13]);
        let m3 = fast_model(3);
        let j = m3.field_jacobian(&x);
        let h = 1e-5;
        for col in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += h;
            xm[col] -= h;
            let fd = (m3.full_field(&xp) - m3.full_field(&xm)) / (2.0 * h);
            for row in 0..3 {
                assert!((fd[row] - j[(row, col)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn variational_examples() {
        // uncoupled: S = identity for all t
        let free = MeanFieldModel::winfree(2, 1.0, 0.0).unwrap();
        let s = variational_s(&free, &DVector::from_row_slice(&[0.0, 0.4]), 0.0, 3.0, &cfg()).unwrap();
        assert!((s.end_matrix() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
        assert!((&s.matrices[0] - DMatrix::<f64>::identity(2, 2)).amax() == 0.0);

        // finite-difference columns over t = 5
        let m = fast_model(3);
        let z = DVector::from_row_slice(&[0.02, 0.05, 0.11]);
        let s = variational_s(&m, &z, 0.0, 5.0, &cfg()).unwrap();
        let end = s.end_matrix();
        let h = 1e-5;
        for col in 0..3 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[col] += h;
            zm[col] -= h;
            let fp = flow(&m, &zp, 0.0, 5.0, &cfg()).unwrap();
            let fm = flow(&m, &zm, 0.0, 5.0, &cfg()).unwrap();
            let fd = (fp.end_state() - fm.end_state()) / (2.0 * h);
            for row in 0..3 {
                let rel = (fd[row] - end[(row, col)]).abs() / end[(row, col)].abs().max(1.0);
                assert!(rel < 1e-4, "column {col} row {row}: rel {rel}");
            }
        }
    }

    #[test]
    fn mu_chart_diagonal_orbit_has_zero_remainder() {
        let m = fast_model(3);
        let ctx = ManifoldCtx::new(m, cfg()).unwrap().with_psi_periods(12);
        let z = DVector::from_element(3, 0.4);
        let chart = mu_chart(&ctx, &z).unwrap();
        // zero up to the accumulated integrator error of the two solves
        assert!(chart.dispersion_hat < 1e-6, "dispersion {}", chart.dispersion_hat);
        assert!(chart.theta_sup < 1e-6, "theta {}", chart.theta_sup);
        assert!(chart.zeta_sup < 5e-6, "zeta {}", chart.zeta_sup);
        // U_Z vanishes on the diagonal too
        assert!(chart.u_matrix(1.7).amax() < 1e-5);
        // tau inverts mu
        for &t in &[0.0, 0.31, 2.9, 7.0] {
            assert!((chart.tau_of_mu(chart.mu_of_t(t)) - t).abs() < 1e-9);
        }
    }

    #[test]
    fn mu_chart_bounds_hold_for_perturbed_orbit() {
        let spec = PerturbationSpec {
            kind: PerturbationKind::RandomTrig,
            r: 0.005,
            seed: 3,
            one_periodic: true,
        };
        let m = MeanFieldModel::winfree_perturbed(3, 1.0, 0.2, spec).unwrap();
        // relax into the synchronized regime first
        let relax = flow(&m, &DVector::from_row_slice(&[0.0, 0.01, 0.02]), 0.0, 60.0, &cfg()).unwrap();
        let ctx = ManifoldCtx::new(m, cfg()).unwrap().with_psi_periods(25);
        let chart = Arc::new(mu_chart(&ctx, relax.end_state()).unwrap());
        assert!(chart.zeta_sup < chart.epsilon_bound);
        assert!(
            chart.theta_sup
                <= ctx.lipschitz_l * chart.dispersion_hat
                    / (ctx.min_f_diag - ctx.lipschitz_l * chart.dispersion_hat)
                    + 1e-12
        );
        // the transformed system satisfies the stability assumption and the
        // velocity is a normalizing solution
        let sol = chart.certify(&cfg()).unwrap();
        let lower = ctx.min_f_diag - ctx.lipschitz_l * chart.dispersion_hat - ctx.r_bound;
        let upper = 1.0 + 0.2 * 2.0 + ctx.lipschitz_l * chart.dispersion_hat + ctx.r_bound;
        assert!(sol.inf_norm >= lower - 1e-9, "inf {} < {lower}", sol.inf_norm);
        assert!(sol.sup_norm <= upper + 1e-9, "sup {} > {upper}", sol.sup_norm);
    }

    #[test]
    fn transformed_system_equivalence_dual_integration() {
        let spec = PerturbationSpec {
            kind: PerturbationKind::RandomTrig,
            r: 0.005,
            seed: 8,
            one_periodic: true,
        };
        let m = MeanFieldModel::winfree_perturbed(3, 1.0, 0.2, spec).unwrap();
        let relax = flow(&m, &DVector::from_row_slice(&[0.0, 0.015, 0.03]), 0.0, 60.0, &cfg()).unwrap();
        let z = relax.end_state().clone();
        let ctx = ManifoldCtx::new(m.clone(), cfg()).unwrap().with_psi_periods(12);
        let chart = Arc::new(mu_chart(&ctx, &z).unwrap());
        let sys = chart.linear_system().unwrap();

        let y0 = DVector::from_row_slice(&[0.7, -0.2, 0.5]);
        let horizon = 8.0;
        // t-integration of the linearization along the orbit
        let t_traj = integrate(
            |t, y| m.field_jacobian(&chart.flow.sample(t)) * y,
            &y0,
            0.0,
            horizon,
            &cfg(),
        )
        .unwrap();
        // μ-integration of the transformed system
        let mu_end = chart.mu_of_t(horizon);
        let mu_traj = integrate(
            |mu, y| sys.coefficient_matrix(mu) * y,
            &y0,
            chart.mu0,
            mu_end,
            &cfg(),
        )
        .unwrap();
        for &t in &[2.0, 5.0, horizon] {
            let direct = t_traj.sample(t);
            let via_mu = mu_traj.sample(chart.mu_of_t(t));
            let diff = (direct - via_mu).amax();
            assert!(diff < 1e-6, "dual-integration mismatch {diff} at t = {t}");
        }
    }

    #[test]
    fn velocity_solves_the_linearization() {
        let m = fast_model(3);
        let relax = flow(&m, &DVector::from_row_slice(&[0.0, 0.01, 0.03]), 0.0, 40.0, &cfg()).unwrap();
        let z = relax.end_state().clone();
        let orbit = flow(&m, &z, 0.0, 10.0, &cfg()).unwrap();
        let h = 1e-5;
        for &t in &[1.0, 4.5, 9.0] {
            let v_plus = m.full_field(&orbit.sample(t + h));
            let v_minus = m.full_field(&orbit.sample(t - h));
            let dv = (v_plus - v_minus) / (2.0 * h);
            let jv = m.field_jacobian(&orbit.sample(t)) * m.full_field(&orbit.sample(t));
            assert!((dv - jv).amax() < 1e-7, "residual at t = {t}");
        }
    }

    #[test]
    fn linear_form_nonlinear_examples() {
        let m = fast_model(3);
        let ctx = ManifoldCtx::new(m.clone(), cfg()).unwrap();
        let z = DVector::from_element(3, 0.15);
        let velocity = m.full_field(&z);
        let values =
            linear_form_nonlinear(&ctx, &z, &[velocity.clone(), &velocity * 3.5]).unwrap();
        assert_abs_diff_eq!(values[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(values[1], 3.5, epsilon = 1e-9);

        // diagonal orbit, H = 0: ζ_Z = 0, so 𝓛 is the ψ-quotient of the
        // pure (b, 𝒜) system anchored at μ0
        let chart = Arc::new(mu_chart(&ctx, &z).unwrap());
        let pure = PerturbedLinearSystem::from_parts(
            3,
            ctx.b_mu.clone(),
            ctx.a_mu.clone(),
            ZetaMatrix::Zero,
            chart.mu0,
        )
        .unwrap();
        let y = DVector::from_row_slice(&[0.9, -0.3, 0.1]);
        let (psi_y, _) = psi(&pure, &y, ctx.psi_periods as f64, &cfg()).unwrap();
        let (psi_v, _) = psi(&pure, &velocity, ctx.psi_periods as f64, &cfg()).unwrap();
        let l = linear_form_nonlinear(&ctx, &z, &[y]).unwrap()[0];
        assert!((l - psi_y / psi_v).abs() < 1e-7, "cross-module mismatch");
    }

    #[test]
    fn stable_chart_zero_displacement_is_identity() {
        let m = fast_model(3);
        let ctx = ManifoldCtx::new(m, cfg()).unwrap();
        let base = DVector::from_element(3, 0.2);
        let chart = StableChart::new(ctx, base.clone()).unwrap();
        assert_eq!(chart.kernel_basis.len(), 2);
        let image = chart.chart(&DVector::zeros(3)).unwrap();
        assert_eq!(image, base);
    }

    #[test]
    fn stable_chart_guards() {
        let m = fast_model(3);
        let ctx = ManifoldCtx::new(m.clone(), cfg()).unwrap();
        let base = DVector::from_element(3, 0.2);
        let chart = StableChart::new(ctx, base).unwrap();
        // radius guard
        let big = DVector::from_element(3, 1.0);
        assert!(matches!(
            chart.chart(&big),
            Err(Error::RadiusExceeded { .. })
        ));
        // kernel guard: the velocity direction has 𝓛 = 1 ≠ 0
        let v = m.full_field(&DVector::from_element(3, 0.2)) * 1e-3;
        assert!(matches!(
            chart.chart(&v),
            Err(Error::KernelViolation { .. })
        ));
    }

    #[test]
    fn stable_chart_is_near_identity_on_kernel_directions() {
        let m = fast_model(3);
        let ctx = ManifoldCtx::new(m, cfg()).unwrap();
        let base = DVector::from_element(3, 0.2);
        let chart = StableChart::new(ctx, base.clone()).unwrap();
        let xi = &chart.kernel_basis[0] * 1e-3;
        let eval = chart.chart_with_diagnostics(&xi).unwrap();
        let deviation = (&eval.point - &base - &xi).norm();
        assert!(
            deviation <= 0.1 * xi.norm(),
            "chart deviates from identity by {deviation}"
        );
        assert!(eval.richardson_diff < 1e-9, "richardson {}", eval.richardson_diff);

        // second-order smallness: halving ξ shrinks the deviation ~4×
        let xi_half = &xi * 0.5;
        let eval_half = chart.chart_with_diagnostics(&xi_half).unwrap();
        let dev_half = (&eval_half.point - &base - &xi_half).norm();
        assert!(
            dev_half <= 0.6 * deviation + 1e-9,
            "no second-order shrink: {dev_half} vs {deviation}"
        );
    }

    #[test]
    fn contraction_guards_and_neutral_direction() {
        let m = fast_model(3);
        let x = DVector::from_element(3, 0.1);
        assert!(matches!(
            verify_contraction(&m, &x, &x, 10.0, 1.0, &cfg()),
            Err(Error::ZeroSeparation)
        ));
        // pure diagonal shift: the separation is neutral (no net decay) when
        // sampled at the orbit period
        let period = crate::ode::quadrature(
            |s| 1.0 / m.diagonal_profile(s).0,
            0.0,
            1.0,
            1024,
        );
        let y = x.add_scalar(1e-3);
        let report = verify_contraction(&m, &x, &y, 40.0, period, &cfg()).unwrap();
        assert!(
            report.fitted_rate.abs() < 1e-3,
            "translate rate {}",
            report.fitted_rate
        );
        assert!(report.k_hat.is_finite() && report.k_hat < 3.0);
    }

    #[test]
    fn contraction_on_kernel_direction() {
        let m = fast_model(3);
        let ctx = ManifoldCtx::new(m.clone(), cfg()).unwrap();
        let base = DVector::from_element(3, 0.2);
        let chart = StableChart::new(ctx, base.clone()).unwrap();
        let xi = &chart.kernel_basis[0] * 1e-3;
        let y = chart.chart(&xi).unwrap();
        let period =
            crate::ode::quadrature(|s| 1.0 / m.diagonal_profile(s).0, 0.0, 1.0, 1024);
        let report = verify_contraction(&m, &base, &y, 40.0, period, &cfg()).unwrap();
        assert!(
            report.fitted_rate <= -0.01,
            "kernel direction rate {}",
            report.fitted_rate
        );
        assert!(report.fit_r2 > 0.95, "fit r2 {}", report.fit_r2);
        assert!(report.k_hat.is_finite());
    }

    #[test]
    fn limit_cycle_convergence_examples() {
        let m = fast_model(3);
        let x0 = DVector::from_row_slice(&[0.0, 0.005, 0.01]);
        let orbit = find_locked_orbit(&m, &x0, &cfg()).unwrap();

        // on the cycle: d(t) stays at rounding level
        let on = limit_cycle_convergence(&m, &orbit, &orbit.x_star, 20.0, &cfg()).unwrap();
        assert!(on.d0 < 1e-8);
        assert!(on.distances.iter().all(|&d| d < 1e-7));

        // pure 𝟙-translate: constant distance √N
        let translated = orbit.x_star.add_scalar(1.0);
        let shifted = limit_cycle_convergence(&m, &orbit, &translated, 20.0, &cfg()).unwrap();
        let sqrt_n = 3.0_f64.sqrt();
        for (&t, &d) in shifted.times.iter().zip(&shifted.distances) {
            assert!(
                (d - sqrt_n).abs() < 0.05,
                "translate distance {d} at t = {t}"
            );
        }
        assert!(shifted.fitted_rate.abs() < 1e-3);

        // misalignment guard
        let far = orbit.x_star.add_scalar(0.4);
        assert!(matches!(
            limit_cycle_convergence(&m, &orbit, &far, 20.0, &cfg()),
            Err(Error::OrbitMisaligned { .. })
        ));
    }
}
