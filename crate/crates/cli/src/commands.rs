//! Subcommand implementations. Each check writes its artifacts into the
//! output directory and returns a `CheckOutcome`; a command passes when all
//! of its checks pass.

use anyhow::Context;
use log::info;
use nalgebra::DVector;
use serde_json::json;

use syncstab::export;
use syncstab::linform::{
    decompose, psi, psi_multi, random_hstab_system, random_normalizing_system, DecomposeMode,
    PerturbedLinearSystem,
};
use syncstab::manifold::{
    limit_cycle_convergence, variational_s, verify_contraction, ManifoldCtx, StableChart,
};
use syncstab::model::{MeanFieldModel, ModelConfig};
use syncstab::ode::IntegratorConfig;
use syncstab::seed::{rng_for, split_seed};
use syncstab::sync::{dispersion_monitor, find_locked_orbit, flow, LockedOrbit};

use rand::Rng;

use crate::config::ExperimentConfig;
use crate::output::{CheckOutcome, OutputDir};

fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

fn csv_series(name: &str, times: &[f64], values: &[f64]) -> Vec<u8> {
    let mut buf = Vec::new();
    export::write_series_csv(&mut buf, name, times, values).expect("in-memory write");
    buf
}

pub fn check_hypotheses(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
) -> anyhow::Result<Vec<CheckOutcome>> {
    let model = MeanFieldModel::from_config(&cfg.model)?;
    let report = model.check_hypotheses(512)?;
    out.write_json("hypotheses.json", &report)?;
    let passed = report.satisfied.h && report.satisfied.h_star;
    info!(
        "hypotheses: h = {}, h* = {} (integral {:.6e})",
        report.satisfied.h, report.satisfied.h_star, report.h_star_integral
    );
    Ok(vec![CheckOutcome {
        name: "hypotheses".into(),
        passed,
        detail: serde_json::to_value(&report)?,
    }])
}

pub fn simulate(cfg: &ExperimentConfig, out: &mut OutputDir) -> anyhow::Result<Vec<CheckOutcome>> {
    let model = MeanFieldModel::from_config(&cfg.model)?;
    let params = &cfg.which.simulate;
    let x0 = params
        .x0
        .clone()
        .unwrap_or_else(|| cfg.default_x0());
    let traj = flow(&model, &dvec(&x0), 0.0, cfg.run.horizon, &cfg.run.integrator)?;
    let report = dispersion_monitor(&traj, params.d_bound);
    let mut csv = Vec::new();
    export::write_trajectory_csv(&mut csv, &traj)?;
    out.write_bytes("trajectory.csv", &csv)?;
    out.write_json("sync_report.json", &report)?;
    info!(
        "simulate: dispersion {:.4}, min velocity {:.4}",
        report.dispersion_max, report.velocity_min
    );
    Ok(vec![CheckOutcome {
        name: "simulate".into(),
        passed: report.within_bounds,
        detail: serde_json::to_value(&report)?,
    }])
}

pub fn linear_decompose(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
) -> anyhow::Result<Vec<CheckOutcome>> {
    let linear_cfg = cfg.linear_or_default();
    let sys = PerturbedLinearSystem::from_config(&linear_cfg)?;
    let constants = sys.check_hstab()?;
    let params = &cfg.which.linear_decompose;
    let y = params
        .y
        .clone()
        .unwrap_or_else(|| (0..linear_cfg.n).map(|i| 1.0 + 2.0 * i as f64).collect());
    let result = decompose(
        &sys,
        &dvec(&y),
        params.s_end,
        DecomposeMode::General,
        &cfg.run.integrator,
    )?;
    let beta_target = params.beta_frac * constants.alpha;
    let summary = result.summary(beta_target);
    // empirical surrogate for the existential perturbation threshold
    let d_star = syncstab::linform::search_d_star(
        linear_cfg.n,
        sys.b(),
        sys.coupling_rows(),
        cfg.run.seeds.first().copied().unwrap_or(0),
        params.beta_frac,
        0.5,
        params.s_end,
        &cfg.run.integrator,
    )?;
    let constants = syncstab::linform::StabilityConstants {
        d_star_search: Some(d_star),
        ..constants
    };
    out.write_json("decomposition.json", &json!({ "summary": summary, "constants": constants }))?;
    out.write_bytes(
        "stable_norms.csv",
        &csv_series("norm", &result.times, &result.stable_norms()),
    )?;
    let passed = summary.certified && summary.identity_residual < 1e-7;
    info!(
        "decompose: psi {:.8}, fitted beta {:.4} (target {:.4}), residual {:.2e}",
        summary.psi_value, summary.fitted_beta, beta_target, summary.identity_residual
    );
    Ok(vec![CheckOutcome {
        name: "linear-decompose".into(),
        passed,
        detail: serde_json::to_value(&summary)?,
    }])
}

pub fn psi_cmd(cfg: &ExperimentConfig, out: &mut OutputDir) -> anyhow::Result<Vec<CheckOutcome>> {
    let linear_cfg = cfg.linear_or_default();
    let sys = PerturbedLinearSystem::from_config(&linear_cfg)?;
    sys.check_hstab()?;
    let params = &cfg.which.psi;
    let y = params
        .y
        .clone()
        .unwrap_or_else(|| (0..linear_cfg.n).map(|i| 1.0 + 2.0 * i as f64).collect());
    let (value, approximants) = psi(&sys, &dvec(&y), params.periods as f64, &cfg.run.integrator)?;
    let steps: Vec<f64> = (1..=approximants.len()).map(|m| m as f64).collect();
    out.write_bytes("psi_approximants.csv", &csv_series("psi", &steps, &approximants))?;
    out.write_json(
        "psi.json",
        &json!({ "value": value, "periods": approximants.len() }),
    )?;
    info!("psi: {value:.10} after {} periods", approximants.len());
    Ok(vec![CheckOutcome {
        name: "psi".into(),
        passed: true,
        detail: json!({ "value": value }),
    }])
}

pub fn delta(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    seed: u64,
) -> anyhow::Result<Vec<CheckOutcome>> {
    let params = &cfg.which.delta;
    let details: Vec<serde_json::Value> = (0..params.systems)
        .map(|k| delta_one_system(split_seed(seed, &format!("delta-{k}")), &params.beta_fracs, params.l))
        .collect::<syncstab::Result<Vec<_>>>()?;
    let passed = details
        .iter()
        .all(|d| d["passed"].as_bool().unwrap_or(false));
    out.write_json("delta.json", &details)?;
    info!("delta: {} systems, pass = {passed}", params.systems);
    Ok(vec![CheckOutcome {
        name: "delta".into(),
        passed,
        detail: serde_json::Value::Array(details),
    }])
}

/// Closed-form Δ suite on one random periodic b: positivity, 1-periodicity,
/// the ODE residual, and max Δ < 1 below the computed D₀ threshold.
pub fn delta_one_system(
    seed: u64,
    beta_fracs: &[f64],
    l: f64,
) -> syncstab::Result<serde_json::Value> {
    let sys = random_hstab_system(2, 0.0, seed)?;
    let alpha = sys.check_hstab()?.alpha;
    let mut passed = true;
    let mut rows = Vec::new();
    for frac in beta_fracs {
        let beta = frac * alpha;
        let d0 = sys.delta_d0(beta, l)?;
        let d = 0.9 * d0;
        let mut max_delta = 0.0_f64;
        let mut min_delta = f64::INFINITY;
        for k in 0..64 {
            let t = k as f64 / 64.0;
            let v = sys.delta_periodic(beta, d, l, t)?;
            max_delta = max_delta.max(v);
            min_delta = min_delta.min(v);
        }
        let periodicity =
            (sys.delta_periodic(beta, d, l, 0.37)? - sys.delta_periodic(beta, d, l, 1.37)?).abs();
        // five-point stencil check of Δ' = (b+β)Δ + DL
        let h = 1e-3;
        let mut ode_residual = 0.0_f64;
        for &t in &[0.21, 0.64] {
            let delta_at = |x: f64| sys.delta_periodic(beta, d, l, x);
            let deriv = (-delta_at(t + 2.0 * h)? + 8.0 * delta_at(t + h)?
                - 8.0 * delta_at(t - h)?
                + delta_at(t - 2.0 * h)?)
                / (12.0 * h);
            let rhs = (sys.b().eval(t) + beta) * delta_at(t)? + d * l;
            ode_residual = ode_residual.max((deriv - rhs).abs());
        }
        let ok = min_delta > 0.0 && max_delta < 1.0 && periodicity < 1e-10 && ode_residual < 1e-8;
        passed &= ok;
        rows.push(json!({
            "beta": beta,
            "d0": d0,
            "max_delta": max_delta,
            "periodicity_residual": periodicity,
            "ode_residual": ode_residual,
            "ok": ok,
        }));
    }
    Ok(json!({ "seed": seed, "alpha": alpha, "betas": rows, "passed": passed }))
}

pub fn locked_orbit(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
) -> anyhow::Result<Vec<CheckOutcome>> {
    let model = MeanFieldModel::from_config(&cfg.model)?;
    let (orbit, outcome) = run_locked_orbit(cfg, &model, out, "")?;
    let _ = orbit;
    Ok(vec![outcome])
}

fn run_locked_orbit(
    cfg: &ExperimentConfig,
    model: &MeanFieldModel,
    out: &mut OutputDir,
    label: &str,
) -> anyhow::Result<(LockedOrbit, CheckOutcome)> {
    let guess = cfg
        .which
        .locked_orbit
        .x_guess
        .clone()
        .map(|v| dvec(&v))
        .unwrap_or_else(|| {
            DVector::from_iterator(
                model.n,
                (0..model.n).map(|i| 0.02 * i as f64 / (model.n - 1).max(1) as f64),
            )
        });
    let orbit = find_locked_orbit(model, &guess, &cfg.run.integrator)?;
    let summary = orbit.summary();
    out.write_json(&format!("locked_orbit{label}.json"), &summary)?;
    let mut csv = Vec::new();
    export::write_profile_csv(&mut csv, &orbit.psi_profile)?;
    out.write_bytes(&format!("psi_profile{label}.csv"), &csv)?;
    let passed = orbit.residual < 1e-9
        && orbit.psi_periodicity_residual < 1e-7
        && orbit.rho > 0.9
        && orbit.rho < 1.1;
    info!(
        "locked orbit{label}: rho {:.8}, residual {:.2e}, {} Newton iterations",
        orbit.rho, orbit.residual, orbit.newton_iterations
    );
    let outcome = CheckOutcome {
        name: format!("locked-orbit{label}"),
        passed,
        detail: serde_json::to_value(&summary)?,
    };
    Ok((orbit, outcome))
}

pub fn stable_manifold(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    jobs: usize,
) -> anyhow::Result<Vec<CheckOutcome>> {
    let model = MeanFieldModel::from_config(&cfg.model)?;
    let params = cfg.which.stable_manifold.clone();
    let (orbit, orbit_outcome) = run_locked_orbit(cfg, &model, out, "")?;
    let mut outcomes = vec![orbit_outcome];
    outcomes.push(run_manifold_checks(cfg, &model, &orbit, &params, out, jobs)?);
    Ok(outcomes)
}

pub fn run_manifold_checks(
    cfg: &ExperimentConfig,
    model: &MeanFieldModel,
    orbit: &LockedOrbit,
    params: &crate::config::ManifoldParams,
    out: &mut OutputDir,
    jobs: usize,
) -> anyhow::Result<CheckOutcome> {
    let ctx = ManifoldCtx::new(model.clone(), cfg.run.integrator)?;
    let chart = StableChart::new(ctx.clone(), orbit.x_star.clone())?;
    let directions = params.directions.min(chart.kernel_basis.len());
    info!(
        "stable manifold: {} directions, xi radius {:.1e}, psi horizon {} periods",
        directions, chart.xi_radius, ctx.psi_periods
    );

    let indices: Vec<usize> = (0..directions).collect();
    let evaluate = |&i: &usize| -> anyhow::Result<_> {
        let xi = &chart.kernel_basis[i] * params.xi_norm;
        let y = chart.chart(&xi)?;
        let contraction = verify_contraction(
            model,
            &orbit.x_star,
            &y,
            params.contraction_horizon,
            orbit.period,
            &cfg.run.integrator,
        )?;
        let convergence = limit_cycle_convergence(
            model,
            orbit,
            &y,
            params.contraction_horizon,
            &cfg.run.integrator,
        )?;
        Ok((i, xi, y, contraction, convergence))
    };
    let results: Vec<_> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .context("rayon pool")?;
        pool.install(|| {
            use rayon::prelude::*;
            indices.par_iter().map(evaluate).collect::<Result<Vec<_>, _>>()
        })?
    } else {
        indices.iter().map(evaluate).collect::<Result<Vec<_>, _>>()?
    };

    // 𝟙-translate control: the neutral direction shows no decay
    let translate = verify_contraction(
        model,
        &orbit.x_star,
        &orbit.x_star.add_scalar(1e-3),
        params.contraction_horizon,
        orbit.period,
        &cfg.run.integrator,
    )?;

    let mut chart_samples = Vec::new();
    let mut passed = translate.fitted_rate.abs() < 1e-3;
    let mut rows = Vec::new();
    for (i, xi, y, contraction, convergence) in &results {
        let mut csv = Vec::new();
        export::write_series_csv(&mut csv, "log_distance", &contraction.times, &contraction.log_distances)?;
        out.write_bytes(&format!("contraction_dir_{i}.csv"), &csv)?;
        let log_d: Vec<f64> = convergence.distances.iter().map(|d| d.max(1e-300).ln()).collect();
        out.write_bytes(
            &format!("convergence_dir_{i}.csv"),
            &csv_series("log_distance", &convergence.times, &log_d),
        )?;
        chart_samples.push((xi.clone(), y.clone()));
        let ok = contraction.fitted_rate <= -0.005
            && contraction.fit_r2 > 0.95
            && convergence.fitted_rate <= -0.005
            && contraction.k_hat.is_finite();
        passed &= ok;
        rows.push(json!({
            "direction": i,
            "contraction_rate": contraction.fitted_rate,
            "contraction_r2": contraction.fit_r2,
            "k_hat": contraction.k_hat,
            "convergence_rate": convergence.fitted_rate,
            "ok": ok,
        }));
    }
    let mut csv = Vec::new();
    export::write_chart_csv(&mut csv, &chart_samples)?;
    out.write_bytes("chart.csv", &csv)?;
    let mut csv = Vec::new();
    export::write_series_csv(&mut csv, "log_distance", &translate.times, &translate.log_distances)?;
    out.write_bytes("translate_control.csv", &csv)?;

    let detail = json!({
        "xi_radius": chart.xi_radius,
        "xi_norm": params.xi_norm,
        "directions": rows,
        "translate_rate": translate.fitted_rate,
    });
    out.write_json("manifold_summary.json", &detail)?;
    Ok(CheckOutcome {
        name: "stable-manifold".into(),
        passed,
        detail,
    })
}

pub fn contraction(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
) -> anyhow::Result<Vec<CheckOutcome>> {
    let model = MeanFieldModel::from_config(&cfg.model)?;
    let params = &cfg.which.contraction;
    // relax to the synchronized regime, then displace by a mean-zero offset
    let relax = flow(
        &model,
        &dvec(&cfg.default_x0()),
        0.0,
        50.0,
        &cfg.run.integrator,
    )?;
    let x = relax.end_state().clone();
    let mut offset = DVector::from_fn(model.n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    offset.add_scalar_mut(-offset.mean());
    let y = &x + offset * (params.offset_norm / (model.n as f64).sqrt());
    let period = 1.0 / syncstab::sync::rotation_numbers_from(&relax).mean();
    let report = verify_contraction(&model, &x, &y, params.horizon, period, &cfg.run.integrator)?;
    let mut csv = Vec::new();
    export::write_series_csv(&mut csv, "log_distance", &report.times, &report.log_distances)?;
    out.write_bytes("contraction.csv", &csv)?;
    let summary = report.summary();
    out.write_json("contraction.json", &summary)?;
    info!(
        "contraction: rate {:.4}, K-hat {:.3}",
        report.fitted_rate, report.k_hat
    );
    Ok(vec![CheckOutcome {
        name: "contraction".into(),
        passed: report.fitted_rate < 0.0,
        detail: serde_json::to_value(&summary)?,
    }])
}

/// The aggregated verification suite: analytic oracles first, then the
/// nonlinear surrogates, in a fixed order.
pub fn report(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    seed: u64,
    jobs: usize,
) -> anyhow::Result<Vec<CheckOutcome>> {
    let integrator = cfg.run.integrator;
    let mut outcomes = Vec::new();

    // constant-coefficient oracle
    {
        let mut ok = true;
        let mut rows = Vec::new();
        for n in [2usize, 3] {
            let sys = PerturbedLinearSystem::constant(n, -1.0, 1.0);
            let y = DVector::from_iterator(n, (0..n).map(|i| 1.0 + 2.0 * i as f64));
            let mean = y.mean();
            let result = decompose(&sys, &y, 20.0, DecomposeMode::General, &integrator)?;
            let psi_err = (result.psi_value - mean).abs();
            let beta_ok = (result.fitted_beta - 1.0).abs() <= 0.01;
            ok &= psi_err < 1e-8 && beta_ok && result.identity_residual < 1e-7;
            rows.push(json!({
                "n": n, "psi_error": psi_err, "fitted_beta": result.fitted_beta,
                "identity_residual": result.identity_residual,
            }));
        }
        outcomes.push(CheckOutcome {
            name: "constant-oracle".into(),
            passed: ok,
            detail: serde_json::Value::Array(rows),
        });
    }

    // pointwise-balanced periodic oracle
    {
        let sys = balanced_system(2);
        let y = dvec(&[1.0, 3.0]);
        let (value, _) = psi(&sys, &y, 25.0, &integrator)?;
        let psi_err = (value - 2.0).abs();
        let stable0 = &y - DVector::from_element(2, value);
        let stable1 = sys.propagate(&stable0, 1.0, &integrator)?;
        let norm_err = (stable1.norm() - (-1.0f64).exp() * stable0.norm()).abs();
        outcomes.push(CheckOutcome {
            name: "balanced-oracle".into(),
            passed: psi_err < 1e-7 && norm_err < 1e-6,
            detail: json!({ "psi_error": psi_err, "stable_norm_error": norm_err }),
        });
    }

    // Δ suite
    outcomes.extend(delta(cfg, out, seed)?);

    // random periodic decompositions: identity, linearity, invariance
    {
        let mut ok = true;
        let mut rows = Vec::new();
        for k in 0..6u64 {
            let sys_seed = split_seed(seed, &format!("report-random-{k}"));
            let n = 2 + (k as usize) % 3;
            let sys = random_hstab_system(n, 0.04, sys_seed)?;
            let mut rng = rng_for(sys_seed, "directions");
            let y = DVector::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let z = DVector::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let result = decompose(&sys, &y, 40.0, DecomposeMode::General, &integrator)?;
            let set = psi_multi(&sys, &[y.clone(), z.clone(), &y * 2.0 + &z], 40, &integrator)?;
            let lin = (set.values[2] - 2.0 * set.values[0] - set.values[1]).abs();
            let norm_sys = random_normalizing_system(n, 0.02, sys_seed)?;
            let inv = syncstab::linform::psi_invariance_check(&norm_sys, &y, 0.0, 1.0, 40.0, &integrator)?;
            let row_ok = result.identity_residual < 1e-7
                && lin <= 1e-6 * (2.0 * y.norm() + z.norm())
                && inv < 1e-6 * y.norm();
            ok &= row_ok;
            rows.push(json!({
                "n": n, "identity_residual": result.identity_residual,
                "linearity": lin, "invariance": inv, "ok": row_ok,
            }));
        }
        outcomes.push(CheckOutcome {
            name: "random-decomposition".into(),
            passed: ok,
            detail: serde_json::Value::Array(rows),
        });
    }

    // hypotheses + synchronized run on the configured model
    outcomes.extend(check_hypotheses(cfg, out)?);
    outcomes.extend(simulate(cfg, out)?);

    // variational accuracy against central finite differences
    {
        let model = MeanFieldModel::from_config(&cfg.model)?;
        let mut rng = rng_for(split_seed(seed, "variational-fd"), "points");
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            let z = DVector::from_fn(model.n, |_, _| 0.05 * rng.gen::<f64>());
            worst = worst.max(variational_fd_error(&model, &z, 5.0, &integrator)?);
        }
        outcomes.push(CheckOutcome {
            name: "variational-fd".into(),
            passed: worst < 1e-4,
            detail: json!({ "worst_relative_error": worst }),
        });
    }

    // locked orbit and the stable-manifold surrogate
    let model = MeanFieldModel::from_config(&cfg.model)?;
    let (orbit, orbit_outcome) = run_locked_orbit(cfg, &model, out, "")?;
    outcomes.push(orbit_outcome);
    let manifold_params = crate::config::ManifoldParams {
        directions: 1,
        ..cfg.which.stable_manifold.clone()
    };
    outcomes.push(run_manifold_checks(cfg, &model, &orbit, &manifold_params, out, jobs)?);

    out.write_json(
        "report.json",
        &outcomes
            .iter()
            .map(|o| json!({ "name": o.name, "passed": o.passed, "detail": o.detail }))
            .collect::<Vec<_>>(),
    )?;
    Ok(outcomes)
}

/// Pointwise-balanced periodic system: b = −1 + 2π·cos(2πt) and
/// Σ a_j = 1 − 2π·cos(2πt), so P ≡ 1.
pub fn balanced_system(n: usize) -> PerturbedLinearSystem {
    use syncstab::periodic::{FourierTerm, ScalarPeriodic, TrigSeries};
    let tau = std::f64::consts::TAU;
    let b = ScalarPeriodic::from_trig(TrigSeries::new(vec![
        FourierTerm::Const(-1.0),
        FourierTerm::Cos(1, tau),
    ]));
    let a = vec![
        ScalarPeriodic::from_trig(TrigSeries::new(vec![
            FourierTerm::Const(1.0 / n as f64),
            FourierTerm::Cos(1, -tau / n as f64),
        ]));
        n
    ];
    PerturbedLinearSystem::from_parts(n, b, a, syncstab::linform::ZetaMatrix::Zero, 0.0)
        .expect("balanced system is well-formed")
}

/// Worst relative error of the variational-matrix columns against central
/// finite differences of the flow.
pub fn variational_fd_error(
    model: &MeanFieldModel,
    z: &DVector<f64>,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> anyhow::Result<f64> {
    let s = variational_s(model, z, 0.0, t_end, cfg)?;
    let end = s.end_matrix();
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for col in 0..model.n {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[col] += h;
        zm[col] -= h;
        let fp = flow(model, &zp, 0.0, t_end, cfg)?;
        let fm = flow(model, &zm, 0.0, t_end, cfg)?;
        let fd = (fp.end_state() - fm.end_state()) / (2.0 * h);
        for row in 0..model.n {
            let rel = (fd[row] - end[(row, col)]).abs() / end[(row, col)].abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Validate a configured model without running anything (config gate).
pub fn validate_model(cfg: &ModelConfig) -> anyhow::Result<MeanFieldModel> {
    Ok(MeanFieldModel::from_config(cfg)?)
}
