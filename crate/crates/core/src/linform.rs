//! Perturbed periodic linear systems and their stability linear forms.
//!
//! The system is `Ẏ(t) = [b(t)·I + 𝒜(t) + ζ(t)]·Y(t)` for `t ≥ t'`, where
//! `b` and the identical rows `a_j` of the rank-1 matrix `𝒜` are 1-periodic
//! and satisfy the stability assumption: `∫₀¹ (b + Σ a_j) = 0` and
//! `α = −∫₀¹ b > 0`. The bounded perturbation `ζ` needs no periodicity.
//!
//! The linear form `ψ_{t'}` splits any initial vector into a neutral
//! component along `R(s;t')𝟙` and an exponentially decaying remainder:
//!
//! ```text
//! R(s;t')·Y = ψ_{t'}(Y)·R(s;t')·𝟙 + R(s;t')·[Y − ψ_{t'}(Y)·𝟙]
//! ```
//!
//! ψ is evaluated without materializing any auxiliary operator: the
//! (N+1)-dimensional companion system is integrated once from the
//! homogeneous initial vector `W = (𝟙ᵀ, 0)ᵀ` and once per forcing vector
//! with zero initial state; the two last components share the common factor
//! `P(t,t')`, so their ratio at integer periods converges directly to ψ.
//! When a normalizing solution `V` exists, `𝓛(Y) = ψ(Y)/ψ(V(t'))` is the
//! form with `𝓛(V) = 1`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::log_linear_fit;
use crate::ode::{integrate, integrate_matrix, IntegratorConfig, MatrixTrajectory};
use crate::periodic::{ScalarPeriodic, TrigSeries};
use crate::seed::rng_for;

/// Serializable spec of the perturbation matrix ζ.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ZetaSpec {
    Zero,
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    TrigPeriodic {
        #[serde(rename = "D")]
        d: f64,
    },
    RandomTrig {
        #[serde(rename = "D")]
        d: f64,
        seed: u64,
    },
}

/// Materialized perturbation matrix.
#[derive(Clone)]
pub enum ZetaMatrix {
    Zero,
    Constant(DMatrix<f64>),
    /// Entries `amp_ij · cos(2πt + phase_ij)`.
    Trig {
        amp: DMatrix<f64>,
        phase: DMatrix<f64>,
    },
    /// Arbitrary bounded matrix function with its validity span, used by the
    /// μ-chart reduction. The sup of entries is sampled over the span.
    Fn {
        f: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
        span: (f64, f64),
    },
}

impl std::fmt::Debug for ZetaMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        match self {
            ZetaMatrix::Zero => write!(f, "ZetaMatrix::Zero"),
            ZetaMatrix::Constant(_) => write!(f, "ZetaMatrix::Constant"),
            ZetaMatrix::Trig { .. } => write!(f, "ZetaMatrix::Trig"),
            ZetaMatrix::Fn { span, .. } => write!(f, "ZetaMatrix::Fn(span {:?})", span),
        }
    }
}

impl ZetaMatrix {
    pub fn from_spec(spec: &ZetaSpec, n: usize) -> Result<Self> {
        Ok(match spec {
            ZetaSpec::Zero => ZetaMatrix::Zero,
            ZetaSpec::Constant { matrix } => {
                if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
                    return Err(Error::InvalidArgument(format!(
                        "zeta matrix must be {n}x{n}"
                    )));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                ZetaMatrix::Constant(DMatrix::from_row_slice(n, n, &flat))
            }
            ZetaSpec::TrigPeriodic { d } => {
                // fixed deterministic pattern with sup-entry-norm exactly D
                let amp = DMatrix::from_fn(n, n, |i, j| if (i + j) % 2 == 0 { *d } else { -*d });
                let phase = DMatrix::from_fn(n, n, |i, j| {
                    std::f64::consts::TAU * (i as f64 + j as f64 / n as f64) / n as f64
                });
                ZetaMatrix::Trig { amp, phase }
            }
            ZetaSpec::RandomTrig { d, seed } => {
                let mut rng = rng_for(*seed, "zeta-random-trig");
                let mut amp = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
                let phase =
                    DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() * std::f64::consts::TAU);
                let max = amp.amax();
                if max > 0.0 {
                    amp *= *d / max; // sup over one period of |amp·cos| is |amp|
                }
                ZetaMatrix::Trig { amp, phase }
            }
        })
    }

    pub fn eval(&self, t: f64, n: usize) -> DMatrix<f64> {
        match self {
            ZetaMatrix::Zero => DMatrix::zeros(n, n),
            ZetaMatrix::Constant(m) => m.clone(),
            ZetaMatrix::Trig { amp, phase } => DMatrix::from_fn(n, n, |i, j| {
                amp[(i, j)] * (std::f64::consts::TAU * t + phase[(i, j)]).cos()
            }),
            ZetaMatrix::Fn { f, .. } => f(t),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, ZetaMatrix::Zero)
    }

    /// Sup of entries: exact for structured kinds, grid-sampled for `Fn`.
    fn sup_norm(&self, _n: usize) -> f64 {
        match self {
            ZetaMatrix::Zero => 0.0,
            ZetaMatrix::Constant(m) => m.amax(),
            ZetaMatrix::Trig { amp, .. } => amp.amax(),
            ZetaMatrix::Fn { f, span } => {
                let samples = 512;
                let (t0, t1) = *span;
                (0..=samples)
                    .map(|k| {
                        let t = t0 + (t1 - t0) * k as f64 / samples as f64;
                        f(t).amax()
                    })
                    .fold(0.0, f64::max)
            }
        }
    }
}

/// Linear-system config as ingested from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSystemConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub b: ScalarSpec,
    pub a: Vec<ScalarSpec>,
    pub zeta: ZetaSpec,
    pub t_prime: f64,
}

/// A 1-periodic scalar coefficient spec: a finite Fourier series.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarSpec {
    pub fourier: TrigSeries,
}

/// The perturbed periodic linear system of the decomposition machinery.
#[derive(Debug, Clone)]
pub struct PerturbedLinearSystem {
    n: usize,
    b: ScalarPeriodic,
    a: Vec<ScalarPeriodic>,
    /// b + Σ a_j, for the P factor.
    ba_sum: ScalarPeriodic,
    zeta: ZetaMatrix,
    t_prime: f64,
    zeta_sup: f64,
}

/// Constants describing the stability assumption and the perturbation size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityConstants {
    /// α = −∫₀¹ b > 0.
    pub alpha: f64,
    /// Default decay exponent β ∈ (0, α) used by certifications.
    pub beta: f64,
    /// max_{[0,1]} |b|.
    pub c_b: f64,
    /// max_{[0,1]} Σ_j |a_j|.
    pub c_a: f64,
    /// Sup of the entries of ζ.
    #[serde(rename = "D")]
    pub d: f64,
    /// Largest tested perturbation size for which decay certification passed.
    #[serde(rename = "D_star_search", skip_serializing_if = "Option::is_none")]
    pub d_star_search: Option<f64>,
}

impl PerturbedLinearSystem {
    pub fn from_config(cfg: &LinearSystemConfig) -> Result<Self> {
        let b = ScalarPeriodic::from_trig(cfg.b.fourier.clone());
        let a: Vec<ScalarPeriodic> = cfg
            .a
            .iter()
            .map(|s| ScalarPeriodic::from_trig(s.fourier.clone()))
            .collect();
        let zeta = ZetaMatrix::from_spec(&cfg.zeta, cfg.n)?;
        Self::from_parts(cfg.n, b, a, zeta, cfg.t_prime)
    }

    pub fn from_parts(
        n: usize,
        b: ScalarPeriodic,
        a: Vec<ScalarPeriodic>,
        zeta: ZetaMatrix,
        t_prime: f64,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("N must be >= 2, got {n}")));
        }
        if a.len() != n {
            return Err(Error::InvalidArgument(format!(
                "expected {n} coupling rows a_j, got {}",
                a.len()
            )));
        }
        let zeta_sup = zeta.sup_norm(n);
        // b + Σ a_j through one cached primitive
        let (bc, ac) = (b.clone(), a.clone());
        let ba_sum = ScalarPeriodic::from_fn(move |t| {
            bc.eval(t) + ac.iter().map(|aj| aj.eval(t)).sum::<f64>()
        });
        Ok(Self {
            n,
            b,
            a,
            ba_sum,
            zeta,
            t_prime,
            zeta_sup,
        })
    }

    /// Constant-coefficient oracle system: b ≡ b_val, a_j ≡ a_total/N, ζ = 0.
    pub fn constant(n: usize, b_val: f64, a_total: f64) -> Self {
        Self::from_parts(
            n,
            ScalarPeriodic::constant(b_val),
            vec![ScalarPeriodic::constant(a_total / n as f64); n],
            ZetaMatrix::Zero,
            0.0,
        )
        .expect("constant system is well-formed")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_prime(&self) -> f64 {
        self.t_prime
    }

    pub fn zeta_sup(&self) -> f64 {
        self.zeta_sup
    }

    pub fn b(&self) -> &ScalarPeriodic {
        &self.b
    }

    pub fn coupling_rows(&self) -> &[ScalarPeriodic] {
        &self.a
    }

    /// Same system re-anchored at a different reference time.
    pub fn with_t_prime(&self, t_prime: f64) -> Self {
        let mut sys = self.clone();
        sys.t_prime = t_prime;
        sys
    }

    /// e(t,s) = exp(∫_s^t b).
    pub fn e_factor(&self, t: f64, s: f64) -> f64 {
        self.b.integral(s, t).exp()
    }

    /// P(t,s) = exp(∫_s^t b + Σ a_j).
    pub fn p_factor(&self, t: f64, s: f64) -> f64 {
        self.ba_sum.integral(s, t).exp()
    }

    /// Row vector of coupling coefficients A_*(t) = (a_1(t), ..., a_N(t)).
    pub fn coupling_row(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.n, self.a.iter().map(|aj| aj.eval(t)))
    }

    /// Full coefficient matrix b·I + 𝒜 + ζ at time t.
    pub fn coefficient_matrix(&self, t: f64) -> DMatrix<f64> {
        let bt = self.b.eval(t);
        let row = self.coupling_row(t);
        let mut m = self.zeta.eval(t, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] += row[j];
            }
            m[(i, i)] += bt;
        }
        m
    }

    /// Verify the stability assumption and collect the constants.
    pub fn check_hstab(&self) -> Result<StabilityConstants> {
        let residual = self.ba_sum.mean().abs();
        let alpha = -self.b.mean();
        if residual > 1e-6 || alpha <= 1e-6 {
            return Err(Error::HstabViolated { residual, alpha });
        }
        let c_b = self.b.max_abs();
        let grid = 2048;
        let c_a = (0..grid)
            .map(|k| {
                let t = k as f64 / grid as f64;
                self.a.iter().map(|aj| aj.eval(t).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max);
        Ok(StabilityConstants {
            alpha,
            beta: 0.5 * alpha,
            c_b,
            c_a,
            d: self.zeta_sup,
            d_star_search: None,
        })
    }

    /// Fundamental matrix R(t; t') as a full trajectory.
    pub fn fundamental_trajectory(
        &self,
        t: f64,
        cfg: &IntegratorConfig,
    ) -> Result<MatrixTrajectory> {
        integrate_matrix(|s| self.coefficient_matrix(s), self.n, self.t_prime, t, cfg)
    }

    /// Fundamental matrix R(t; t') at the endpoint.
    pub fn fundamental_r(&self, t: f64, cfg: &IntegratorConfig) -> Result<DMatrix<f64>> {
        if t == self.t_prime {
            return Ok(DMatrix::identity(self.n, self.n));
        }
        Ok(self.fundamental_trajectory(t, cfg)?.end_matrix().clone())
    }

    /// Propagate a single vector: R(t; t')·y.
    pub fn propagate(
        &self,
        y: &DVector<f64>,
        t: f64,
        cfg: &IntegratorConfig,
    ) -> Result<DVector<f64>> {
        if t == self.t_prime {
            return Ok(y.clone());
        }
        let traj = integrate(|s, v| self.apply_coefficient(s, v), y, self.t_prime, t, cfg)?;
        Ok(traj.end_state().clone())
    }

    fn apply_coefficient(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        let bt = self.b.eval(t);
        let row = self.coupling_row(t);
        let coupling = row.dot(y);
        let mut out = y * bt;
        out.add_scalar_mut(coupling);
        if !self.zeta.is_zero() {
            out += self.zeta.eval(t, self.n) * y;
        }
        out
    }

    /// Periodic solution Δ of `Δ' = (b+β)Δ + D·L` in closed form:
    /// `Δ(t) = D·L·∫_t^{t+1} exp(∫_s^{t+1} b+β) ds / (1 − e^{β−α})`.
    pub fn delta_periodic(&self, beta: f64, d: f64, l: f64, t: f64) -> Result<f64> {
        let alpha = -self.b.mean();
        if !(beta > 0.0 && beta < alpha) {
            return Err(Error::BetaOutOfRange { beta, alpha });
        }
        let upper = self.b.primitive(t + 1.0);
        let integral = crate::ode::quadrature(
            |s| (upper - self.b.primitive(s) + beta * (t + 1.0 - s)).exp(),
            t,
            t + 1.0,
            1024,
        );
        Ok(d * l * integral / (1.0 - (beta - alpha).exp()))
    }

    /// Largest D for which `max_t Δ(t) < 1` (the closed form is linear in D).
    pub fn delta_d0(&self, beta: f64, l: f64) -> Result<f64> {
        let mut max_unit = 0.0_f64;
        for k in 0..256 {
            let t = k as f64 / 256.0;
            max_unit = max_unit.max(self.delta_periodic(beta, 1.0, l, t)?);
        }
        Ok(1.0 / max_unit)
    }

    /// Sum Σ_j a_j(t), derived from the cached b + Σa primitive.
    fn coupling_sum(&self, t: f64) -> f64 {
        self.ba_sum.eval(t) - self.b.eval(t)
    }
}

/// State of the (N+1)-dimensional auxiliary system: the splitting components
/// `Z*` and `z_{N+1}` of `R(t;t')[Y − ψ𝟙] = z_{N+1}𝟙 + Z* + e(t,t')Y`.
#[derive(Debug, Clone)]
pub struct AuxiliaryState {
    pub z_star: DVector<f64>,
    pub z_last: f64,
}

impl AuxiliaryState {
    pub fn zero(n: usize) -> Self {
        Self {
            z_star: DVector::zeros(n),
            z_last: 0.0,
        }
    }

    /// c·W with W = (𝟙ᵀ, 0)ᵀ.
    pub fn scaled_w(c: f64, n: usize) -> Self {
        Self {
            z_star: DVector::from_element(n, c),
            z_last: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.z_star.amax().max(self.z_last.abs())
    }
}

/// Trajectory of the auxiliary system together with its forcing vector.
#[derive(Debug, Clone)]
pub struct AuxiliaryTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<AuxiliaryState>,
    pub forcing: DVector<f64>,
    t_prime: f64,
}

impl AuxiliaryTrajectory {
    /// Reconstruction `z_{N+1}(t)𝟙 + Z*(t) + e(t,t')·Y` at knot k.
    pub fn reconstruct(&self, sys: &PerturbedLinearSystem, k: usize) -> DVector<f64> {
        let st = &self.states[k];
        let e = sys.e_factor(self.times[k], self.t_prime);
        let mut out = st.z_star.clone();
        out.add_scalar_mut(st.z_last);
        out + &self.forcing * e
    }
}

/// Integrate the nonhomogeneous auxiliary system
/// `Ż* = b Z* + ζ[z_{N+1}𝟙 + Z* + e(t,t')Y]`,
/// `ż_{N+1} = [b + ⟨A_*,𝟙⟩] z_{N+1} + ⟨A_*, Z* + e(t,t')Y⟩`.
pub fn solve_auxiliary(
    sys: &PerturbedLinearSystem,
    forcing: &DVector<f64>,
    z0: &AuxiliaryState,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<AuxiliaryTrajectory> {
    let n = sys.n;
    let mut y0 = DVector::zeros(n + 1);
    y0.rows_mut(0, n).copy_from(&z0.z_star);
    y0[n] = z0.z_last;
    let t_prime = sys.t_prime;
    let field = |t: f64, y: &DVector<f64>| {
        let bt = sys.b.eval(t);
        let row = sys.coupling_row(t);
        let suma = sys.coupling_sum(t);
        let e = sys.e_factor(t, t_prime);
        let z_star = y.rows(0, n);
        let z_last = y[n];
        let mut dz = DVector::zeros(n + 1);
        // argument of ζ and of the coupling row
        let mut arg = z_star.into_owned();
        arg.add_scalar_mut(z_last);
        arg.axpy(e, forcing, 1.0);
        let mut dz_star = z_star * bt;
        if !sys.zeta.is_zero() {
            dz_star += sys.zeta.eval(t, n) * &arg;
        }
        dz.rows_mut(0, n).copy_from(&dz_star);
        // ⟨A_*, Z* + eY⟩ = ⟨A_*, arg⟩ − z_last·Σa
        dz[n] = (bt + suma) * z_last + row.dot(&arg) - z_last * suma;
        dz
    };
    let traj = integrate(field, &y0, t_prime, t_end, cfg)?;
    let states = traj
        .states
        .iter()
        .map(|y| AuxiliaryState {
            z_star: y.rows(0, n).into_owned(),
            z_last: y[n],
        })
        .collect();
    Ok(AuxiliaryTrajectory {
        times: traj.times,
        states,
        forcing: forcing.clone(),
        t_prime,
    })
}

/// Value of H(t,t') together with the first empirically safe horizon.
#[derive(Debug, Clone, Copy)]
pub struct HIntegral {
    pub value: f64,
    /// First sampled time after which |H| stayed above the zero threshold.
    pub t_w_hat: f64,
}

/// H(t,t') = ∫_{t'}^t ⟨A_*(s), S*(s;t')W⟩ P(t',s) ds, with S* the top block
/// of the fundamental matrix of the homogeneous companion system.
pub fn h_integral(sys: &PerturbedLinearSystem, t: f64, cfg: &IntegratorConfig) -> Result<HIntegral> {
    let n = sys.n;
    let t_prime = sys.t_prime;
    if t == t_prime {
        return Ok(HIntegral {
            value: 0.0,
            t_w_hat: t_prime,
        });
    }
    // state: [X*, x_{N+1}, h] with ḣ = ⟨A_*, X*⟩·P(t',s)
    let mut y0 = DVector::zeros(n + 2);
    for i in 0..n {
        y0[i] = 1.0;
    }
    let field = |s: f64, y: &DVector<f64>| {
        let bt = sys.b.eval(s);
        let row = sys.coupling_row(s);
        let suma = sys.coupling_sum(s);
        let x_star = y.rows(0, n).into_owned();
        let x_last = y[n];
        let mut dy = DVector::zeros(n + 2);
        let mut arg = x_star.clone();
        arg.add_scalar_mut(x_last);
        let mut dx_star = &x_star * bt;
        if !sys.zeta.is_zero() {
            dx_star += sys.zeta.eval(s, n) * &arg;
        }
        dy.rows_mut(0, n).copy_from(&dx_star);
        let coupling = row.dot(&x_star);
        dy[n] = (bt + suma) * x_last + coupling;
        dy[n + 1] = coupling * sys.p_factor(t_prime, s);
        dy
    };
    let traj = integrate(field, &y0, t_prime, t, cfg)?;
    let value = traj.end_state()[n + 1];
    if value.abs() < 1e-12 {
        return Err(Error::HNearZero { t, value });
    }
    // last knot at which |H| was still within the zero threshold
    let mut t_w_hat = traj.times[0];
    for (k, &tk) in traj.times.iter().enumerate() {
        if traj.states[k][n + 1].abs() <= 1e-12 {
            t_w_hat = tk;
        }
    }
    Ok(HIntegral { value, t_w_hat })
}

/// ψ values for a batch of directions, sharing one homogeneous solve.
#[derive(Debug, Clone)]
pub struct PsiSet {
    pub values: Vec<f64>,
    /// Approximant sequences at integer periods, one per direction.
    pub approximants: Vec<Vec<f64>>,
}

/// Evaluate `ψ_{t'}` on several directions at once.
///
/// One bundled integration carries the homogeneous companion solution from
/// `W` plus one zero-initial-state forced copy per direction; the ψ
/// approximant of direction k at `t_m = t' + m` is the ratio of the last
/// components. Directions are normalized internally so the convergence
/// threshold `1e-7` is relative to `‖Y‖`.
pub fn psi_multi(
    sys: &PerturbedLinearSystem,
    directions: &[DVector<f64>],
    periods: usize,
    cfg: &IntegratorConfig,
) -> Result<PsiSet> {
    let n = sys.n;
    let t_prime = sys.t_prime;
    let periods = periods.max(1);
    let mut scales = Vec::with_capacity(directions.len());
    let mut normalized = Vec::with_capacity(directions.len());
    for y in directions {
        let norm = y.norm();
        scales.push(norm);
        normalized.push(if norm > 0.0 { y / norm } else { y.clone() });
    }
    let m = normalized.len();
    let dim = (n + 1) * (m + 1);
    let mut y0 = DVector::zeros(dim);
    for i in 0..n {
        y0[i] = 1.0; // homogeneous branch starts at W
    }
    let field = |t: f64, y: &DVector<f64>| {
        let bt = sys.b.eval(t);
        let row = sys.coupling_row(t);
        let suma = sys.coupling_sum(t);
        let e = sys.e_factor(t, t_prime);
        let zeta = if sys.zeta.is_zero() {
            None
        } else {
            Some(sys.zeta.eval(t, n))
        };
        let mut dy = DVector::zeros(dim);
        for branch in 0..=m {
            let off = branch * (n + 1);
            let z_star = y.rows(off, n);
            let z_last = y[off + n];
            let mut arg = z_star.into_owned();
            arg.add_scalar_mut(z_last);
            if branch > 0 {
                arg.axpy(e, &normalized[branch - 1], 1.0);
            }
            let mut dz_star = z_star * bt;
            if let Some(z) = &zeta {
                dz_star += z * &arg;
            }
            dy.rows_mut(off, n).copy_from(&dz_star);
            dy[off + n] = (bt + suma) * z_last + row.dot(&arg) - z_last * suma;
        }
        dy
    };
    let traj = integrate(field, &y0, t_prime, t_prime + periods as f64, cfg)?;

    let mut approximants = vec![Vec::with_capacity(periods); m];
    for step in 1..=periods {
        let tm = t_prime + step as f64;
        let state = traj.sample(tm);
        let denom = state[n];
        if denom.abs() < 1e-12 && step == periods {
            return Err(Error::HNearZero { t: tm, value: denom });
        }
        for k in 0..m {
            let num = state[(k + 1) * (n + 1) + n];
            approximants[k].push(if denom.abs() > 0.0 { num / denom } else { f64::NAN });
        }
    }
    let tol = 1e-7;
    let mut values = Vec::with_capacity(m);
    for k in 0..m {
        let seq = &approximants[k];
        if scales[k] == 0.0 {
            values.push(0.0);
            continue;
        }
        let len = seq.len();
        let converged =
            len >= 4 && (1..=3).all(|back| (seq[len - back] - seq[len - back - 1]).abs() < tol);
        if !converged {
            let last_change = if len >= 2 {
                (seq[len - 1] - seq[len - 2]).abs()
            } else {
                f64::INFINITY
            };
            return Err(Error::NotConverged {
                steps: len,
                last_change: last_change * scales[k],
                approximants: seq.iter().map(|r| r * scales[k]).collect(),
            });
        }
        values.push(seq[len - 1] * scales[k]);
    }
    for (k, seq) in approximants.iter_mut().enumerate() {
        for r in seq.iter_mut() {
            *r *= scales[k];
        }
    }
    Ok(PsiSet {
        values,
        approximants,
    })
}

/// The stability linear form ψ_{t'} of one direction, with its approximant
/// sequence at integer periods.
pub fn psi(
    sys: &PerturbedLinearSystem,
    y: &DVector<f64>,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<(f64, Vec<f64>)> {
    let periods = horizon.floor().max(1.0) as usize;
    let set = psi_multi(sys, std::slice::from_ref(y), periods, cfg)?;
    Ok((set.values[0], set.approximants.into_iter().next().unwrap()))
}

/// A certified normalizing solution: bounded away from zero and infinity
/// over the tested horizon.
#[derive(Debug, Clone)]
pub struct NormalizingSolution {
    pub v0: DVector<f64>,
    /// inf of ‖V(t)‖_∞ over the horizon.
    pub inf_norm: f64,
    /// sup of ‖V(t)‖_∞ over the horizon.
    pub sup_norm: f64,
}

/// Integrate each candidate and return the first whose sup-norm trajectory
/// stays within a bounded band: inf > 0 relative to sup.
pub fn normalizing_solution(
    sys: &PerturbedLinearSystem,
    candidates: &[DVector<f64>],
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<NormalizingSolution> {
    for v0 in candidates {
        let traj = integrate(
            |t, y| sys.apply_coefficient(t, y),
            v0,
            sys.t_prime,
            sys.t_prime + horizon,
            cfg,
        )?;
        let mut inf = f64::INFINITY;
        let mut sup = 0.0_f64;
        for state in &traj.states {
            let norm = state.amax();
            inf = inf.min(norm);
            sup = sup.max(norm);
        }
        if inf > 1e-3 * sup && sup.is_finite() && inf > 0.0 {
            return Ok(NormalizingSolution {
                v0: v0.clone(),
                inf_norm: inf,
                sup_norm: sup,
            });
        }
    }
    Err(Error::NotFound {
        tried: candidates.len(),
    })
}

/// `𝓛_{t'}(Y) = ψ_{t'}(Y) / ψ_{t'}(V(t'))` for a normalizing solution V.
pub fn linear_form_l(
    sys: &PerturbedLinearSystem,
    y: &DVector<f64>,
    v0: &DVector<f64>,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let periods = horizon.floor().max(1.0) as usize;
    let set = psi_multi(sys, &[y.clone(), v0.clone()], periods, cfg)?;
    let psi_v = set.values[1];
    if psi_v.abs() < 1e-10 * v0.norm().max(1.0) {
        return Err(Error::PsiVanishing { value: psi_v });
    }
    Ok(set.values[0] / psi_v)
}

/// Which decomposition to produce.
#[derive(Debug, Clone)]
pub enum DecomposeMode {
    /// Split along R(s;t')𝟙 using ψ.
    General,
    /// Split along a normalizing solution V using 𝓛.
    Normalizing { v0: DVector<f64> },
}

/// Fundamental-matrix decomposition with decay-rate certification.
#[derive(Debug, Clone)]
pub struct DecompositionResult {
    /// ψ(Y) in general mode, 𝓛(Y) in normalizing mode.
    pub psi_value: f64,
    pub times: Vec<f64>,
    /// ψ·R(s;t')𝟙 (or 𝓛·V(s)).
    pub neutral_part: Vec<DVector<f64>>,
    /// R(s;t')[Y − ψ𝟙] (or R(s;t')[Y − 𝓛V(t')]).
    pub stable_part: Vec<DVector<f64>>,
    /// max over sample times of ‖R·Y − neutral − stable‖ / ‖Y‖.
    pub identity_residual: f64,
    /// −slope of the log-linear fit of ‖stable‖ over the tail.
    pub fitted_beta: f64,
    pub fit_r2: f64,
}

/// Serializable summary of a decomposition run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub psi_value: f64,
    pub identity_residual: f64,
    pub fitted_beta: f64,
    pub fit_r2: f64,
    pub certified: bool,
}

impl DecompositionResult {
    /// Certification: the fitted decay rate reaches the requested β with a
    /// clean fit. Returns the failure as an error, never silently.
    pub fn certify(&self, beta: f64) -> Result<()> {
        if self.fitted_beta >= beta && self.fit_r2 > 0.99 {
            Ok(())
        } else {
            Err(Error::CertificationFailed {
                fitted_beta: self.fitted_beta,
                fit_r2: self.fit_r2,
            })
        }
    }

    pub fn summary(&self, beta: f64) -> DecompositionSummary {
        DecompositionSummary {
            psi_value: self.psi_value,
            identity_residual: self.identity_residual,
            fitted_beta: self.fitted_beta,
            fit_r2: self.fit_r2,
            certified: self.certify(beta).is_ok(),
        }
    }

    /// Euclidean norms of the stable part, aligned with `times`.
    pub fn stable_norms(&self) -> Vec<f64> {
        self.stable_part.iter().map(|v| v.norm()).collect()
    }
}

/// Decompose `R(s;t')Y` into its neutral and exponentially decaying parts
/// over `s ∈ [t', t' + s_end]`.
///
/// The three branches (full solution, neutral carrier, stable remainder) are
/// propagated in one bundled integration so the identity residual measures
/// only rounding, while the decay content is certified by the fitted β.
pub fn decompose(
    sys: &PerturbedLinearSystem,
    y: &DVector<f64>,
    s_end: f64,
    mode: DecomposeMode,
    cfg: &IntegratorConfig,
) -> Result<DecompositionResult> {
    let n = sys.n;
    let periods = s_end.floor().max(1.0) as usize;
    let (form_value, carrier0, stable0) = match &mode {
        DecomposeMode::General => {
            let set = psi_multi(sys, std::slice::from_ref(y), periods, cfg)?;
            let psi_y = set.values[0];
            let ones = DVector::from_element(n, 1.0);
            let stable0 = y - &ones * psi_y;
            (psi_y, ones, stable0)
        }
        DecomposeMode::Normalizing { v0 } => {
            let set = psi_multi(sys, &[y.clone(), v0.clone()], periods, cfg)?;
            let psi_v = set.values[1];
            if psi_v.abs() < 1e-10 * v0.norm().max(1.0) {
                return Err(Error::PsiVanishing { value: psi_v });
            }
            let l_y = set.values[0] / psi_v;
            let stable0 = y - v0 * l_y;
            (l_y, v0.clone(), stable0)
        }
    };

    // bundled propagation of [R·Y | R·carrier | R·stable]
    let mut y0 = DVector::zeros(3 * n);
    y0.rows_mut(0, n).copy_from(y);
    y0.rows_mut(n, n).copy_from(&carrier0);
    y0.rows_mut(2 * n, n).copy_from(&stable0);
    let field = |t: f64, state: &DVector<f64>| {
        let mut out = DVector::zeros(3 * n);
        for branch in 0..3 {
            let v = state.rows(branch * n, n).into_owned();
            out.rows_mut(branch * n, n)
                .copy_from(&sys.apply_coefficient(t, &v));
        }
        out
    };
    let traj = integrate(field, &y0, sys.t_prime, sys.t_prime + s_end, cfg)?;

    let y_norm = y.norm().max(1e-300);
    let mut times = Vec::with_capacity(traj.times.len());
    let mut neutral_part = Vec::with_capacity(traj.times.len());
    let mut stable_part = Vec::with_capacity(traj.times.len());
    let mut identity_residual = 0.0_f64;
    for (k, &t) in traj.times.iter().enumerate() {
        let full = traj.states[k].rows(0, n).into_owned();
        let neutral = traj.states[k].rows(n, n) * form_value;
        let stable = traj.states[k].rows(2 * n, n).into_owned();
        identity_residual = identity_residual.max((&full - &neutral - &stable).norm() / y_norm);
        times.push(t);
        neutral_part.push(neutral);
        stable_part.push(stable);
    }

    // Decay-rate fit sampled at integer periods so the 1-periodic modulation
    // of ‖stable‖ does not pollute slope or r². Samples below the integrator
    // noise floor are unusable; the fitted window is the tail half of the
    // usable span.
    let floor = (100.0 * cfg.abs_tol).max(1e-13 * y_norm);
    let mut usable: Vec<(f64, f64)> = Vec::new();
    for k in 1..=periods {
        let t = sys.t_prime + k as f64;
        if t <= traj.end_time() {
            let norm = traj.sample(t).rows(2 * n, n).norm();
            if norm > floor {
                usable.push((t, norm));
            }
        }
    }
    let tail = usable.split_at(usable.len() / 2).1;
    let fit = if tail.len() >= 3 {
        let (ft, fn_): (Vec<f64>, Vec<f64>) = tail.iter().copied().unzip();
        log_linear_fit(&ft, &fn_, 0.0)
    } else {
        let half = times.len() / 2;
        let norms: Vec<f64> = stable_part.iter().map(|v| v.norm()).collect();
        log_linear_fit(&times[half..], &norms[half..], floor)
    };
    Ok(DecompositionResult {
        psi_value: form_value,
        times,
        neutral_part,
        stable_part,
        identity_residual,
        fitted_beta: -fit.slope,
        fit_r2: fit.r_squared,
    })
}

/// |ψ_t(Y) − ψ_s(R(s;t)Y)| — the flow-invariance residual of the form.
pub fn psi_invariance_check(
    sys: &PerturbedLinearSystem,
    y: &DVector<f64>,
    t: f64,
    s: f64,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    if s == t {
        return Ok(0.0);
    }
    let at_t = sys.with_t_prime(t);
    let (psi_t, _) = psi(&at_t, y, horizon, cfg)?;
    let moved = at_t.propagate(y, s, cfg)?;
    let at_s = sys.with_t_prime(s);
    let (psi_s, _) = psi(&at_s, &moved, horizon, cfg)?;
    Ok((psi_t - psi_s).abs())
}

/// Bisect the largest perturbation size D ∈ (0, d_max] for which the
/// decomposition still certifies decay at `beta_frac`·α with a clean fit.
pub fn search_d_star(
    n: usize,
    b: &ScalarPeriodic,
    a: &[ScalarPeriodic],
    seed: u64,
    beta_frac: f64,
    d_max: f64,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let alpha = -b.mean();
    let mut rng = rng_for(seed, "d-star-probe");
    let y = DVector::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    let certify = |d: f64| -> bool {
        let zeta = ZetaMatrix::from_spec(&ZetaSpec::RandomTrig { d, seed }, n)
            .expect("random zeta spec is valid");
        let sys = match PerturbedLinearSystem::from_parts(n, b.clone(), a.to_vec(), zeta, 0.0) {
            Ok(sys) => sys,
            Err(_) => return false,
        };
        match decompose(&sys, &y, horizon, DecomposeMode::General, cfg) {
            Ok(result) => result.certify(beta_frac * alpha).is_ok(),
            Err(_) => false,
        }
    };
    if !certify(1e-3) {
        return Ok(0.0);
    }
    if certify(d_max) {
        return Ok(d_max);
    }
    let (mut lo, mut hi) = (1e-3, d_max);
    for _ in 0..10 {
        let mid = 0.5 * (lo + hi);
        if certify(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Draw a random (H_stab)-conforming periodic system: trigonometric b and
/// a_j with the zero-sum identity exact by construction and α ∈ [0.5, 1.5].
pub fn random_hstab_system(n: usize, d: f64, seed: u64) -> Result<PerturbedLinearSystem> {
    use crate::periodic::FourierTerm;
    let mut rng = rng_for(seed, "random-hstab");
    let alpha: f64 = 0.5 + rng.gen::<f64>();
    let mut a = Vec::with_capacity(n);
    let mut a_means = 0.0;
    for _ in 0..n {
        let mean = alpha / n as f64 * (0.5 + rng.gen::<f64>());
        a_means += mean;
        a.push(ScalarPeriodic::from_trig(TrigSeries::new(vec![
            FourierTerm::Const(mean),
            FourierTerm::Cos(1, (rng.gen::<f64>() - 0.5) / n as f64),
            FourierTerm::Sin(2, (rng.gen::<f64>() - 0.5) / n as f64),
        ])));
    }
    // b mean balances Σ a_j exactly
    let b = ScalarPeriodic::from_trig(TrigSeries::new(vec![
        FourierTerm::Const(-a_means),
        FourierTerm::Cos(1, rng.gen::<f64>() - 0.5),
        FourierTerm::Sin(1, rng.gen::<f64>() - 0.5),
        FourierTerm::Sin(3, 0.5 * (rng.gen::<f64>() - 0.5)),
    ]));
    let zeta = if d > 0.0 {
        ZetaMatrix::from_spec(&ZetaSpec::RandomTrig { d, seed }, n)?
    } else {
        ZetaMatrix::Zero
    };
    PerturbedLinearSystem::from_parts(n, b, a, zeta, 0.0)
}

/// Random (H_stab) system with a perturbation that is normalizing by
/// construction: ζ(t) = γ(t)·I with zero-mean γ, so the neutral direction
/// carries a genuinely non-decaying solution while ‖ζ‖ = d.
pub fn random_normalizing_system(n: usize, d: f64, seed: u64) -> Result<PerturbedLinearSystem> {
    let base = random_hstab_system(n, 0.0, seed)?;
    let mut rng = rng_for(seed, "normalizing-gamma");
    let phase: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let amp = DMatrix::from_fn(n, n, |i, j| if i == j { d } else { 0.0 });
    let phases = DMatrix::from_element(n, n, phase);
    PerturbedLinearSystem::from_parts(
        n,
        base.b.clone(),
        base.a.clone(),
        ZetaMatrix::Trig { amp, phase: phases },
        0.0,
    )
}
