//! Integration engine: trajectories with dense output, matrix variational
//! equations, event crossings, and scalar quadrature.
//!
//! The adaptive method is Dormand–Prince 5(4); the fixed method is classical
//! RK4. Dense output is cubic Hermite from the stored endpoint derivatives,
//! so sampling at a knot reproduces the stored state exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Integration method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

/// Integrator configuration.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Step for the fixed method.
    pub step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Adaptive steps are capped so the Hermite interpolant stays accurate
    /// enough for 1e-12 root bracketing on smooth fields.
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            step: 0.01,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_step: 0.02,
            max_steps: 20_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn fixed(step: f64) -> Self {
        Self {
            method: Method::Rk4Fixed,
            step,
            ..Self::default()
        }
    }
}

/// A solution trajectory with cubic-Hermite dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Field values at the knots (the stored endpoint derivatives).
    pub derivs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn end_state(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    fn bracket(&self, t: f64) -> usize {
        // partition_point returns the first knot > t; step index is one less.
        let idx = self.times.partition_point(|&tk| tk <= t);
        idx.clamp(1, self.times.len() - 1) - 1
    }

    /// Dense state at `t` (clamped to the covered span; exact at knots).
    pub fn sample(&self, t: f64) -> DVector<f64> {
        let k = self.bracket(t);
        if t == self.times[k] {
            return self.states[k].clone();
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let (h00, h10, h01, h11) = (
            2.0 * s3 - 3.0 * s2 + 1.0,
            s3 - 2.0 * s2 + s,
            -2.0 * s3 + 3.0 * s2,
            s3 - s2,
        );
        &self.states[k] * h00
            + &self.derivs[k] * (h10 * h)
            + &self.states[k + 1] * h01
            + &self.derivs[k + 1] * (h11 * h)
    }

    /// Dense derivative (the Hermite interpolant differentiated).
    pub fn sample_deriv(&self, t: f64) -> DVector<f64> {
        let k = self.bracket(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let (d00, d10, d01, d11) = (
            (6.0 * s2 - 6.0 * s) / h,
            3.0 * s2 - 4.0 * s + 1.0,
            (-6.0 * s2 + 6.0 * s) / h,
            3.0 * s2 - 2.0 * s,
        );
        &self.states[k] * d00
            + &self.derivs[k] * d10
            + &self.states[k + 1] * d01
            + &self.derivs[k + 1] * d11
    }
}

/// A matrix-valued trajectory (fundamental/variational matrices).
#[derive(Debug, Clone)]
pub struct MatrixTrajectory {
    pub times: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
}

impl MatrixTrajectory {
    pub fn end_matrix(&self) -> &DMatrix<f64> {
        self.matrices.last().unwrap()
    }

    /// Matrix at `t` by linear interpolation between knots (knots exact).
    pub fn sample(&self, t: f64) -> DMatrix<f64> {
        let idx = self.times.partition_point(|&tk| tk <= t);
        let k = idx.clamp(1, self.times.len() - 1) - 1;
        if t == self.times[k] {
            return self.matrices[k].clone();
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        &self.matrices[k] * (1.0 - s) + &self.matrices[k + 1] * s
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
// 4th-order embedded weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate `ẏ = field(t, y)` from `t0` to `t1 > t0`.
pub fn integrate<F>(field: F, y0: &DVector<f64>, t0: f64, t1: f64, cfg: &IntegratorConfig) -> Result<Trajectory>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!(
            "integration span must be forward: t0 = {t0}, t1 = {t1}"
        )));
    }
    match cfg.method {
        Method::Rk4Fixed => integrate_rk4(field, y0, t0, t1, cfg),
        Method::Rk45Adaptive => integrate_rk45(field, y0, t0, t1, cfg),
    }
}

fn integrate_rk4<F>(field: F, y0: &DVector<f64>, t0: f64, t1: f64, cfg: &IntegratorConfig) -> Result<Trajectory>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let n_steps = ((t1 - t0) / cfg.step).ceil().max(1.0) as usize;
    if n_steps > cfg.max_steps {
        return Err(Error::MaxStepsExceeded {
            max_steps: cfg.max_steps,
            t: t0,
        });
    }
    let h = (t1 - t0) / n_steps as f64;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut derivs = Vec::with_capacity(n_steps + 1);
    let mut t = t0;
    let mut y = y0.clone();
    let mut f0 = field(t, &y);
    times.push(t);
    states.push(y.clone());
    derivs.push(f0.clone());
    for step in 0..n_steps {
        let k1 = f0;
        let k2 = field(t + 0.5 * h, &(&y + &k1 * (0.5 * h)));
        let k3 = field(t + 0.5 * h, &(&y + &k2 * (0.5 * h)));
        let k4 = field(t + h, &(&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t = t0 + (step + 1) as f64 * h;
        f0 = field(t, &y);
        times.push(t);
        states.push(y.clone());
        derivs.push(f0.clone());
    }
    Ok(Trajectory { times, states, derivs })
}

fn integrate_rk45<F>(field: F, y0: &DVector<f64>, t0: f64, t1: f64, cfg: &IntegratorConfig) -> Result<Trajectory>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let dim = y0.len();
    let mut t = t0;
    let mut y = y0.clone();
    let mut f_now = field(t, &y);
    let mut h = cfg.max_step.min(t1 - t0);
    let mut times = vec![t];
    let mut states = vec![y.clone()];
    let mut derivs = vec![f_now.clone()];
    let mut k = vec![DVector::<f64>::zeros(dim); 7];
    let mut steps = 0usize;

    while t < t1 {
        if steps >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded {
                max_steps: cfg.max_steps,
                t,
            });
        }
        steps += 1;
        h = h.min(t1 - t);
        // a remaining gap within rounding of t1 is the terminal step, not an
        // error-controller underflow
        let endgame = t1 - t <= 1e-12 * t1.abs().max(1.0);
        if h < 1e-14 * t.abs().max(1.0) && !endgame {
            return Err(Error::StepUnderflow { t, h });
        }

        k[0] = f_now.clone();
        for stage in 0..6 {
            let mut arg = y.clone();
            for (j, kj) in k.iter().enumerate().take(stage + 1) {
                let a = A[stage][j];
                if a != 0.0 {
                    arg.axpy(a * h, kj, 1.0);
                }
            }
            k[stage + 1] = field(t + C[stage] * h, &arg);
        }
        // 5th-order solution is the stage-7 argument (FSAL form).
        let mut y5 = y.clone();
        for (j, kj) in k.iter().enumerate().take(6) {
            let a = A[5][j];
            if a != 0.0 {
                y5.axpy(a * h, kj, 1.0);
            }
        }
        // embedded 4th-order estimate for the error
        let mut y4 = y.clone();
        for (j, kj) in k.iter().enumerate() {
            if B4[j] != 0.0 {
                y4.axpy(B4[j] * h, kj, 1.0);
            }
        }
        let mut err = 0.0f64;
        for i in 0..dim {
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y5[i].abs());
            let e = (y5[i] - y4[i]) / sc;
            err += e * e;
        }
        let err = (err / dim as f64).sqrt();

        if err <= 1.0 || endgame {
            t += h;
            y = y5;
            f_now = k[6].clone();
            times.push(t);
            states.push(y.clone());
            derivs.push(f_now.clone());
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h * factor).min(cfg.max_step);
    }
    Ok(Trajectory { times, states, derivs })
}

/// Integrate the flow together with its variational matrix
/// `Ṡ = J(t, y(t))·S`, `S(t0; t0) = I`.
pub fn integrate_variational<F, J>(
    field: F,
    jacobian: J,
    y0: &DVector<f64>,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, MatrixTrajectory)>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
    J: Fn(f64, &DVector<f64>) -> DMatrix<f64>,
{
    let n = y0.len();
    let mut z0 = DVector::zeros(n + n * n);
    z0.rows_mut(0, n).copy_from(y0);
    for i in 0..n {
        z0[n + i * n + i] = 1.0; // identity, row-major blocks
    }
    let aug_field = |t: f64, z: &DVector<f64>| {
        let y = z.rows(0, n).into_owned();
        let f = field(t, &y);
        let j = jacobian(t, &y);
        let mut dz = DVector::zeros(n + n * n);
        dz.rows_mut(0, n).copy_from(&f);
        // dS[i][:] = row i of J*S; S stored row-major
        for i in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for m in 0..n {
                    acc += j[(i, m)] * z[n + m * n + c];
                }
                dz[n + i * n + c] = acc;
            }
        }
        dz
    };
    let traj = integrate(aug_field, &z0, t0, t1, cfg)?;
    let mut flow_states = Vec::with_capacity(traj.times.len());
    let mut flow_derivs = Vec::with_capacity(traj.times.len());
    let mut matrices = Vec::with_capacity(traj.times.len());
    for (state, deriv) in traj.states.iter().zip(&traj.derivs) {
        flow_states.push(state.rows(0, n).into_owned());
        flow_derivs.push(deriv.rows(0, n).into_owned());
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for c in 0..n {
                m[(i, c)] = state[n + i * n + c];
            }
        }
        matrices.push(m);
    }
    Ok((
        Trajectory {
            times: traj.times.clone(),
            states: flow_states,
            derivs: flow_derivs,
        },
        MatrixTrajectory {
            times: traj.times,
            matrices,
        },
    ))
}

/// Integrate a linear matrix ODE `Ṁ = A(t)·M` from the identity.
pub fn integrate_matrix<A>(a: A, n: usize, t0: f64, t1: f64, cfg: &IntegratorConfig) -> Result<MatrixTrajectory>
where
    A: Fn(f64) -> DMatrix<f64>,
{
    let mut z0 = DVector::zeros(n * n);
    for i in 0..n {
        z0[i * n + i] = 1.0;
    }
    let field = |t: f64, z: &DVector<f64>| {
        let at = a(t);
        let mut dz = DVector::zeros(n * n);
        for i in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for m in 0..n {
                    acc += at[(i, m)] * z[m * n + c];
                }
                dz[i * n + c] = acc;
            }
        }
        dz
    };
    let traj = integrate(field, &z0, t0, t1, cfg)?;
    let matrices = traj
        .states
        .iter()
        .map(|state| {
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for c in 0..n {
                    m[(i, c)] = state[i * n + c];
                }
            }
            m
        })
        .collect();
    Ok(MatrixTrajectory {
        times: traj.times,
        matrices,
    })
}

/// Sign of a crossing to search for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingDirection {
    Rising,
    Falling,
    Any,
}

/// Find `t*` with `g(t*, y(t*)) = 0` on the trajectory's dense output.
/// Bracketed bisection refined until `|g| < 1e-12` or the bracket collapses.
pub fn event_crossing<G>(traj: &Trajectory, g: G, direction: CrossingDirection) -> Result<f64>
where
    G: Fn(f64, &DVector<f64>) -> f64,
{
    let eval = |t: f64| g(t, &traj.sample(t));
    let mut prev_t = traj.times[0];
    let mut prev_v = g(prev_t, &traj.states[0]);
    for (k, &t) in traj.times.iter().enumerate().skip(1) {
        let v = g(t, &traj.states[k]);
        let matches = match direction {
            CrossingDirection::Rising => prev_v < 0.0 && v >= 0.0,
            CrossingDirection::Falling => prev_v > 0.0 && v <= 0.0,
            CrossingDirection::Any => prev_v * v <= 0.0 && (prev_v != 0.0 || v != 0.0),
        };
        if matches {
            let (mut lo, mut hi) = (prev_t, t);
            let (mut flo, mut fhi) = (prev_v, v);
            if flo == 0.0 {
                return Ok(lo);
            }
            for _ in 0..200 {
                // secant proposal, guarded by bisection
                let mid = if (fhi - flo).abs() > 0.0 {
                    let sec = lo - flo * (hi - lo) / (fhi - flo);
                    if sec > lo && sec < hi {
                        sec
                    } else {
                        0.5 * (lo + hi)
                    }
                } else {
                    0.5 * (lo + hi)
                };
                let fm = eval(mid);
                if fm.abs() < 1e-12 || (hi - lo) < 1e-15 * hi.abs().max(1.0) {
                    return Ok(mid);
                }
                if (flo < 0.0) == (fm < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                    fhi = fm;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        prev_t = t;
        prev_v = v;
    }
    Err(Error::NoCrossing {
        t0: traj.start_time(),
        t1: traj.end_time(),
    })
}

/// Composite Simpson quadrature with `n` (rounded up to even) subintervals.
pub fn quadrature<F>(f: F, a: f64, b: f64, n: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let n = if n < 2 { 2 } else { n + n % 2 };
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

/// Simpson estimate together with its doubled-resolution check.
pub fn quadrature_checked<F>(f: F, a: f64, b: f64, n: usize, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let coarse = quadrature(&f, a, b, n);
    let fine = quadrature(&f, a, b, 2 * n);
    let change = (fine - coarse).abs();
    if change > tol {
        return Err(Error::QuadratureNotConverged { change, tol });
    }
    Ok(fine)
}
