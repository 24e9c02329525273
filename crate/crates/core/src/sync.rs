//! Nonlinear flow experiments: synchronization monitoring, the mean phase,
//! rotation numbers, and locked-orbit shooting.
//!
//! A locked orbit is an initial condition `X_*` with
//! `Φ^{1/ρ}(X_*) = X_* + 𝟙`: every oscillator advances by exactly one unit
//! per period, so `Φ^t_i(X_*) = ρt + Ψ_i(t)` with `1/ρ`-periodic profiles
//! `Ψ_i`. The shooting problem fixes the section `mean(X) = mean(X_guess)`
//! to remove the neutral direction along the orbit and treats the period as
//! the extra unknown.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MeanFieldModel;
use crate::ode::{integrate, integrate_variational, IntegratorConfig, Trajectory};

/// Synchronization monitoring summary of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyncRunReport {
    /// sup over the run of max_{i,j} |x_i − x_j|.
    pub dispersion_max: f64,
    /// inf over the run of min_i ẋ_i.
    pub velocity_min: f64,
    pub horizon: f64,
    /// Configured dispersion threshold (the 2D bound).
    pub d_bound: f64,
    pub within_bounds: bool,
}

/// The mean phase μ_X(t) driven by the stored trajectory.
#[derive(Debug, Clone)]
pub struct MeanPhase {
    pub times: Vec<f64>,
    pub mu: Vec<f64>,
    pub mu0: f64,
    /// inf over the run of μ̇.
    pub min_velocity: f64,
}

/// A locked periodic orbit `Φ^{1/ρ}(X_*) = X_* + 𝟙`.
#[derive(Debug, Clone)]
pub struct LockedOrbit {
    pub x_star: DVector<f64>,
    pub rho: f64,
    /// 1/ρ.
    pub period: f64,
    /// ‖Φ^{period}(X_*) − X_* − 𝟙‖.
    pub residual: f64,
    /// Ψ_i(t) = Φ^t_i(X_*) − ρt sampled over one period.
    pub psi_profile: Vec<(f64, DVector<f64>)>,
    pub psi_periodicity_residual: f64,
    /// Newton iterations spent.
    pub newton_iterations: usize,
    cycle: Trajectory,
}

impl LockedOrbit {
    /// Φ^t(X_*) for any t ≥ 0, through 𝟙-translation equivariance.
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        let k = (t / self.period).floor();
        let tau = t - k * self.period;
        let mut state = self.cycle.sample(tau);
        state.add_scalar_mut(k);
        state
    }

    /// Ψ(t) = Φ^t(X_*) − ρt·𝟙 (exactly 1/ρ-periodic by construction).
    pub fn psi_at(&self, t: f64) -> DVector<f64> {
        let mut psi = self.state_at(t);
        psi.add_scalar_mut(-self.rho * t);
        psi
    }

    /// Serializable summary (the profile is exported separately as CSV).
    pub fn summary(&self) -> LockedOrbitSummary {
        LockedOrbitSummary {
            x_star: self.x_star.iter().copied().collect(),
            rho: self.rho,
            period: self.period,
            residual: self.residual,
            psi_periodicity_residual: self.psi_periodicity_residual,
            newton_iterations: self.newton_iterations,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LockedOrbitSummary {
    pub x_star: Vec<f64>,
    pub rho: f64,
    pub period: f64,
    pub residual: f64,
    pub psi_periodicity_residual: f64,
    pub newton_iterations: usize,
}

/// Trajectory of the perturbed system from `x0` over `[t0, t1]`.
pub fn flow(
    model: &MeanFieldModel,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate(|_, x| model.full_field(x), x0, t0, t1, cfg)
}

/// Exact max dispersion and min velocity over the stored samples, refined at
/// step midpoints through the dense output.
pub fn dispersion_monitor(traj: &Trajectory, d_bound: f64) -> SyncRunReport {
    let spread = |state: &DVector<f64>| state.max() - state.min();
    let mut dispersion_max = 0.0_f64;
    let mut velocity_min = f64::INFINITY;
    for k in 0..traj.times.len() {
        dispersion_max = dispersion_max.max(spread(&traj.states[k]));
        velocity_min = velocity_min.min(traj.derivs[k].min());
        if k + 1 < traj.times.len() {
            let tm = 0.5 * (traj.times[k] + traj.times[k + 1]);
            dispersion_max = dispersion_max.max(spread(&traj.sample(tm)));
            velocity_min = velocity_min.min(traj.sample_deriv(tm).min());
        }
    }
    SyncRunReport {
        dispersion_max,
        velocity_min,
        horizon: traj.end_time() - traj.start_time(),
        d_bound,
        within_bounds: dispersion_max < d_bound && velocity_min > 0.0,
    }
}

/// Integrate the scalar companion `μ̇ = F(Φ^t(X), μ)` along a stored
/// trajectory (dense-interpolated).
pub fn mean_phase(
    model: &MeanFieldModel,
    traj: &Trajectory,
    mu0: f64,
    cfg: &IntegratorConfig,
) -> Result<MeanPhase> {
    let scalar = integrate(
        |t, mu| {
            let state = traj.sample(t);
            DVector::from_element(1, model.eval_field(&state, mu[0]))
        },
        &DVector::from_element(1, mu0),
        traj.start_time(),
        traj.end_time(),
        cfg,
    )?;
    let min_velocity = scalar.derivs.iter().map(|d| d[0]).fold(f64::INFINITY, f64::min);
    Ok(MeanPhase {
        times: scalar.times.clone(),
        mu: scalar.states.iter().map(|s| s[0]).collect(),
        mu0,
        min_velocity,
    })
}

/// Rotation-number estimate for coordinate `i` using crossings in
/// `[t_lo, end]`: the times of integer advances of the coordinate cancel the
/// 1/ρ-periodic profile, so ρ̂ = (k_last − k_first)/(t_last − t_first) is
/// exact up to the residual transient at `t_lo`. Falls back to the plain
/// secant when fewer than three crossings exist.
fn rotation_from_window(traj: &Trajectory, i: usize, t_lo: f64) -> f64 {
    let x_ref = traj.sample(t_lo)[i];
    let total = traj.end_state()[i] - x_ref;
    let k_max = total.floor() as i64;
    let secant = (traj.end_state()[i] - traj.states[0][i])
        / (traj.end_time() - traj.start_time());
    if k_max < 3 {
        return secant;
    }
    let crossing = |k: i64| -> Option<f64> {
        crate::ode::event_crossing(
            traj,
            |t, state| {
                if t < t_lo {
                    // keep the bracket inside the window
                    -1.0
                } else {
                    state[i] - x_ref - k as f64
                }
            },
            crate::ode::CrossingDirection::Rising,
        )
        .ok()
    };
    match (crossing(1), crossing(k_max)) {
        (Some(t1), Some(tk)) if tk > t1 => (k_max - 1) as f64 / (tk - t1),
        _ => secant,
    }
}

/// Per-oscillator rotation-number estimates from a stored trajectory,
/// discarding the first half as transient.
pub fn rotation_numbers_from(traj: &Trajectory) -> DVector<f64> {
    let t_lo = traj.start_time() + 0.5 * (traj.end_time() - traj.start_time());
    DVector::from_fn(traj.dim(), |i, _| rotation_from_window(traj, i, t_lo))
}

/// Asymptotic frequency ρ = lim x_1(t)/t, estimated over `[0, t_total]`.
///
/// The estimate discards the locking transient (first half) and is checked
/// against the last-quarter window for consistency.
pub fn rotation_number(
    model: &MeanFieldModel,
    x0: &DVector<f64>,
    t_total: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let traj = flow(model, x0, 0.0, t_total, cfg)?;
    let full = rotation_from_window(&traj, 0, 0.5 * t_total);
    let late = rotation_from_window(&traj, 0, 0.75 * t_total);
    if (full - late).abs() > 1e-6 {
        return Err(Error::NotConverged {
            steps: 2,
            last_change: (full - late).abs(),
            approximants: vec![full, late],
        });
    }
    Ok(full)
}

/// Locate the locked orbit by damped Newton on the shooting equations
/// `Φ^T(X) − X − 𝟙 = 0` with the section `mean(X) = mean(X_guess)` and the
/// period T as the extra unknown.
pub fn find_locked_orbit(
    model: &MeanFieldModel,
    x_guess: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Result<LockedOrbit> {
    if !model.perturbation_spec.one_periodic {
        return Err(Error::InvalidArgument(
            "locked-orbit search requires a 𝟙-periodic perturbation".into(),
        ));
    }
    let n = model.n;
    let ones = DVector::from_element(n, 1.0);

    // probe: one mean-advance from the raw guess; if the return residual is
    // already small the guess sits on the cycle and no relaxation is needed
    let probe_span = 3.0 / model.omega.abs().max(0.1);
    let probe = flow(model, x_guess, 0.0, probe_span, cfg)?;
    let mean0 = x_guess.mean();
    let t_probe = crate::ode::event_crossing(
        &probe,
        |_, state| state.mean() - mean0 - 1.0,
        crate::ode::CrossingDirection::Rising,
    )?;
    let probe_residual = (probe.sample(t_probe) - x_guess - &ones).norm();

    let (mut x, mut period) = if probe_residual < 1e-3 {
        (x_guess.clone(), t_probe)
    } else {
        // relax toward the attracting cycle before shooting
        let relax_time = 50.0 / model.omega.abs().max(0.1);
        let relax = flow(model, x_guess, 0.0, relax_time, cfg)?;
        let x = relax.end_state().clone();
        let rho0 = rotation_numbers_from(&relax).mean();
        (x, 1.0 / rho0)
    };
    let section_mean = x.mean();

    let shoot = |x: &DVector<f64>, t_end: f64| -> Result<(DVector<f64>, Trajectory)> {
        let traj = flow(model, x, 0.0, t_end, cfg)?;
        let g = traj.end_state() - x - &ones;
        Ok((g, traj))
    };

    let (mut g, _) = shoot(&x, period)?;
    let mut g_norm = g.norm();
    let mut best = (x.clone(), period, g_norm);
    let mut iterations = 0;
    while g_norm > 1e-11 && iterations < 25 {
        iterations += 1;
        // variational matrix S(T;0) and end velocity for the Newton matrix
        let (traj, s) = integrate_variational(
            |_, state| model.full_field(state),
            |_, state| model.field_jacobian(state),
            &x,
            0.0,
            period,
            cfg,
        )?;
        let end_velocity = model.full_field(traj.end_state());
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        jac.view_mut((0, 0), (n, n))
            .copy_from(&(s.end_matrix() - DMatrix::identity(n, n)));
        for i in 0..n {
            jac[(i, n)] = end_velocity[i];
            jac[(n, i)] = 1.0 / n as f64;
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&g);
        rhs[n] = x.mean() - section_mean;
        let lu = jac.lu();
        let step = lu.solve(&rhs).ok_or(Error::SingularShootingJacobian)?;

        // damping: halve until the residual decreases
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=8 {
            let x_new = &x - step.rows(0, n) * lambda;
            let period_new = period - step[n] * lambda;
            if period_new > 0.1 * period {
                let (g_new, _) = shoot(&x_new, period_new)?;
                let g_new_norm = g_new.norm();
                if g_new_norm < g_norm {
                    x = x_new;
                    period = period_new;
                    g = g_new;
                    g_norm = g_new_norm;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
        if g_norm < best.2 {
            best = (x.clone(), period, g_norm);
        }
    }
    if g_norm > 1e-9 {
        return Err(Error::NewtonDiverged {
            residual: best.2,
            iterations,
            best_state: best.0.iter().copied().collect(),
            best_period: best.1,
        });
    }

    // profile over one period plus the periodicity check over a second one
    let rho = 1.0 / period;
    let two_periods = flow(model, &x, 0.0, 2.0 * period, cfg)?;
    let cycle_idx = two_periods.times.partition_point(|&t| t <= period);
    let cycle = flow(model, &x, 0.0, period, cfg)?;
    let samples = 256;
    let mut psi_profile = Vec::with_capacity(samples + 1);
    for k in 0..=samples {
        let t = period * k as f64 / samples as f64;
        let mut psi = cycle.sample(t);
        psi.add_scalar_mut(-rho * t);
        psi_profile.push((t, psi));
    }
    let mut psi_periodicity_residual = 0.0_f64;
    for k in 0..=samples {
        let t = period * k as f64 / samples as f64;
        let diff = two_periods.sample(t + period) - two_periods.sample(t) - &ones;
        psi_periodicity_residual = psi_periodicity_residual.max(diff.amax());
    }
    let _ = cycle_idx;
    let residual = (cycle.end_state() - &x - &ones).norm();
    Ok(LockedOrbit {
        x_star: x,
        rho,
        period,
        residual,
        psi_profile,
        psi_periodicity_residual,
        newton_iterations: iterations,
        cycle,
    })
}

/// Re-measure the 1/ρ-periodicity of the profile: returns
/// `max_i max_t |Ψ_i(t + 1/ρ) − Ψ_i(t)|` over one period.
pub fn psi_profile_check(
    model: &MeanFieldModel,
    orbit: &LockedOrbit,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let traj = flow(model, &orbit.x_star, 0.0, 2.0 * orbit.period, cfg)?;
    let ones = DVector::from_element(model.n, 1.0);
    let mut residual = 0.0_f64;
    for k in 0..=512 {
        let t = orbit.period * k as f64 / 512.0;
        let diff = traj.sample(t + orbit.period) - traj.sample(t) - &ones;
        residual = residual.max(diff.amax());
    }
    Ok(residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PerturbationKind, PerturbationSpec};
    use approx::assert_abs_diff_eq;

    fn cfg() -> IntegratorConfig {
        IntegratorConfig::default()
    }

    #[test]
    fn uncoupled_flow_is_rigid_rotation() {
        let m = MeanFieldModel::winfree(3, 1.0, 0.0).unwrap();
        let x0 = DVector::from_row_slice(&[0.0, 0.3, 0.7]);
        let traj = flow(&m, &x0, 0.0, 5.0, &cfg()).unwrap();
        let expected = &x0 + DVector::from_element(3, 5.0);
        assert!((traj.end_state() - expected).amax() < 1e-10);
        // dispersion of a rigid rotation is constant
        let report = dispersion_monitor(&traj, 1.0);
        assert_abs_diff_eq!(report.dispersion_max, 0.7, epsilon = 1e-10);
        assert!(report.within_bounds);
    }

    #[test]
    fn diagonal_flow_matches_scalar_reduction() {
        // a diagonal start follows the scalar ODE ṡ = F(s𝟙, s)
        let m = MeanFieldModel::winfree(2, 1.0, 0.05).unwrap();
        let x0 = DVector::from_element(2, 0.2);
        let traj = flow(&m, &x0, 0.0, 3.0, &cfg()).unwrap();
        let m2 = m.clone();
        let scalar = integrate(
            |_, s| {
                DVector::from_element(1, m2.eval_field(&DVector::from_element(2, s[0]), s[0]))
            },
            &DVector::from_element(1, 0.2),
            0.0,
            3.0,
            &cfg(),
        )
        .unwrap();
        assert!((traj.end_state()[0] - scalar.end_state()[0]).abs() < 1e-9);
        assert!((traj.end_state()[0] - traj.end_state()[1]).abs() < 1e-10);
    }

    #[test]
    fn diagonal_is_invariant() {
        let spec = PerturbationSpec {
            kind: PerturbationKind::TrigDiagPeriodic,
            r: 0.01,
            seed: 0,
            one_periodic: true,
        };
        let m = MeanFieldModel::winfree_perturbed(4, 1.0, 0.05, spec).unwrap();
        let traj = flow(&m, &DVector::from_element(4, 0.13), 0.0, 10.0, &cfg()).unwrap();
        let report = dispersion_monitor(&traj, 1.0);
        assert!(report.dispersion_max < 1e-10, "off-diagonal spread {}", report.dispersion_max);
    }

    #[test]
    fn translation_equivariance() {
        let spec = PerturbationSpec {
            kind: PerturbationKind::RandomTrig,
            r: 0.01,
            seed: 5,
            one_periodic: true,
        };
        let m = MeanFieldModel::winfree_perturbed(3, 1.0, 0.05, spec).unwrap();
        let x0 = DVector::from_row_slice(&[0.0, 0.02, 0.05]);
        let ones = DVector::from_element(3, 1.0);
        let a = flow(&m, &x0, 0.0, 7.0, &cfg()).unwrap();
        let b = flow(&m, &(&x0 + &ones), 0.0, 7.0, &cfg()).unwrap();
        let diff = b.end_state() - a.end_state() - &ones;
        assert!(diff.amax() < 1e-9, "equivariance residual {}", diff.amax());
    }

    #[test]
    fn winfree_synchronized_run_stays_bounded() {
        let m = MeanFieldModel::winfree(5, 1.0, 0.05).unwrap();
        let x0 = DVector::from_iterator(5, (0..5).map(|i| 0.01 * i as f64));
        let traj = flow(&m, &x0, 0.0, 100.0, &cfg()).unwrap();
        let report = dispersion_monitor(&traj, 0.1);
        assert!(report.dispersion_max < 0.1, "dispersion {}", report.dispersion_max);
        assert!(report.velocity_min > 0.0);
    }

    #[test]
    fn mean_phase_examples() {
        // uncoupled: μ(t) = μ0 + t
        let m = MeanFieldModel::winfree(2, 1.0, 0.0).unwrap();
        let traj = flow(&m, &DVector::from_row_slice(&[0.1, 0.4]), 0.0, 4.0, &cfg()).unwrap();
        let mp = mean_phase(&m, &traj, 0.0, &cfg()).unwrap();
        assert_abs_diff_eq!(*mp.mu.last().unwrap(), 4.0, epsilon = 1e-9);

        // diagonal start with matching μ0: μ equals the common phase
        let mc = MeanFieldModel::winfree(3, 1.0, 0.05).unwrap();
        let dtraj = flow(&mc, &DVector::from_element(3, 0.3), 0.0, 5.0, &cfg()).unwrap();
        let mp = mean_phase(&mc, &dtraj, 0.3, &cfg()).unwrap();
        let end_phase = dtraj.end_state()[0];
        assert!((mp.mu.last().unwrap() - end_phase).abs() < 1e-8);

        // winfree bulk: |μ − mean(x)| stays below the dispersion bound
        let x0 = DVector::from_iterator(5, (0..5).map(|i| 0.01 * i as f64));
        let m5 = MeanFieldModel::winfree(5, 1.0, 0.05).unwrap();
        let t5 = flow(&m5, &x0, 0.0, 50.0, &cfg()).unwrap();
        let report = dispersion_monitor(&t5, 0.1);
        let mp = mean_phase(&m5, &t5, x0.mean(), &cfg()).unwrap();
        for (k, &t) in mp.times.iter().enumerate().step_by(50) {
            let mean_x = t5.sample(t).mean();
            assert!(
                (mp.mu[k] - mean_x).abs() < report.dispersion_max + 1e-6,
                "mean-phase deviation at t = {t}"
            );
        }
        assert!(mp.min_velocity > 0.0);
    }

    #[test]
    fn rotation_number_examples() {
        let uncoupled = MeanFieldModel::winfree(2, 1.0, 0.0).unwrap();
        let rho = rotation_number(&uncoupled, &DVector::from_row_slice(&[0.0, 0.5]), 100.0, &cfg())
            .unwrap();
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-10);

        let m = MeanFieldModel::winfree(5, 1.0, 0.05).unwrap();
        let x0 = DVector::from_iterator(5, (0..5).map(|i| 0.01 * i as f64));
        let rho = rotation_number(&m, &x0, 150.0, &cfg()).unwrap();
        assert!(rho > 0.9 && rho < 1.1, "rotation number {rho}");

        // frequency consensus on the synchronized run
        let traj = flow(&m, &x0, 0.0, 150.0, &cfg()).unwrap();
        let rhos = rotation_numbers_from(&traj);
        let spread = rhos.max() - rhos.min();
        assert!(spread < 1e-8, "per-oscillator rotation spread {spread}");
    }

    #[test]
    fn locked_orbit_uncoupled_is_immediate() {
        let m = MeanFieldModel::winfree(3, 1.0, 0.0).unwrap();
        let orbit = find_locked_orbit(&m, &DVector::from_row_slice(&[0.0, 0.1, 0.2]), &cfg()).unwrap();
        assert_abs_diff_eq!(orbit.rho, 1.0, epsilon = 1e-10);
        assert!(orbit.residual < 1e-9);
        assert!(orbit.newton_iterations <= 1, "iterations {}", orbit.newton_iterations);
    }

    #[test]
    fn locked_orbit_winfree_unperturbed() {
        let m = MeanFieldModel::winfree(5, 1.0, 0.05).unwrap();
        let x0 = DVector::from_iterator(5, (0..5).map(|i| 0.005 * i as f64));
        let orbit = find_locked_orbit(&m, &x0, &cfg()).unwrap();
        assert!(orbit.residual < 1e-9, "residual {}", orbit.residual);
        assert!(orbit.rho > 0.9 && orbit.rho < 1.1);
        assert!(orbit.psi_periodicity_residual < 1e-7);
        // the unperturbed cycle lies on the diagonal with equal profiles
        let spread = orbit.x_star.max() - orbit.x_star.min();
        assert!(spread < 1e-7, "diagonal spread {spread}");
    }

    #[test]
    fn locked_orbit_with_periodic_perturbation() {
        let spec = PerturbationSpec {
            kind: PerturbationKind::TrigDiagPeriodic,
            r: 0.01,
            seed: 0,
            one_periodic: true,
        };
        let m = MeanFieldModel::winfree_perturbed(5, 1.0, 0.05, spec).unwrap();
        let x0 = DVector::from_iterator(5, (0..5).map(|i| 0.005 * i as f64));
        let orbit = find_locked_orbit(&m, &x0, &cfg()).unwrap();
        assert!(orbit.residual < 1e-9, "residual {}", orbit.residual);
        assert!(orbit.newton_iterations <= 10);
        let check = psi_profile_check(&m, &orbit, &cfg()).unwrap();
        assert!(check < 1e-7, "psi periodicity {check}");

        // fixed point: re-running Newton from X_* makes no progress
        let again = find_locked_orbit(&m, &orbit.x_star, &cfg()).unwrap();
        assert!((again.x_star - &orbit.x_star).amax() < 1e-7, "orbit point moved");
        assert!((again.period - orbit.period).abs() < 1e-9);

        // mean of Ψ̇ over one period is zero: Ψ(T) = Ψ(0)
        let psi_drift = (orbit.psi_at(orbit.period) - orbit.psi_at(0.0)).amax();
        assert!(psi_drift < 1e-9, "Ψ drift {psi_drift}");
    }

    #[test]
    fn psi_profile_constant_for_uncoupled() {
        let m = MeanFieldModel::winfree(2, 1.0, 0.0).unwrap();
        let orbit = find_locked_orbit(&m, &DVector::from_row_slice(&[0.0, 0.2]), &cfg()).unwrap();
        // Ψ ≡ const: compare first and middle sample
        let first = &orbit.psi_profile[0].1;
        let mid = &orbit.psi_profile[orbit.psi_profile.len() / 2].1;
        assert!((first - mid).amax() < 1e-9);
    }
}
