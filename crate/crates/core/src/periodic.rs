//! 1-periodic scalar function specs and their cached primitives.
//!
//! Two layers:
//!
//! * [`TrigSeries`] — a finite trigonometric series
//!   `c₀ + Σ cₖ cos(2πkt) + Σ sₖ sin(2πkt)` with exact derivatives and
//!   primitives. This is the serializable function spec used in configs.
//! * [`ScalarPeriodic`] — any 1-periodic scalar function together with a
//!   precomputed cumulative integral over one period, so that
//!   `∫_s^t f` evaluates in O(1) through a common primitive
//!   `B(t) = ⌊t⌋·mean + ∫_0^{frac(t)} f`. Exponential factors built from a
//!   common primitive satisfy the cocycle identity to rounding.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One term of a trigonometric series. Serialized as `["const", c]`,
/// `["cos", k, c]` or `["sin", k, c]` with `c·cos(2πkt)` etc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FourierTerm {
    Const(f64),
    Cos(u32, f64),
    Sin(u32, f64),
}

impl FourierTerm {
    fn eval(&self, t: f64) -> f64 {
        match *self {
            FourierTerm::Const(c) => c,
            FourierTerm::Cos(k, c) => c * (TAU * k as f64 * t).cos(),
            FourierTerm::Sin(k, c) => c * (TAU * k as f64 * t).sin(),
        }
    }

    fn deriv(&self) -> FourierTerm {
        match *self {
            FourierTerm::Const(_) => FourierTerm::Const(0.0),
            FourierTerm::Cos(k, c) => FourierTerm::Sin(k, -TAU * k as f64 * c),
            FourierTerm::Sin(k, c) => FourierTerm::Cos(k, TAU * k as f64 * c),
        }
    }

    /// ∫_0^t of the term, exact.
    fn primitive(&self, t: f64) -> f64 {
        match *self {
            FourierTerm::Const(c) => c * t,
            FourierTerm::Cos(k, c) => {
                let w = TAU * k as f64;
                c * (w * t).sin() / w
            }
            FourierTerm::Sin(k, c) => {
                let w = TAU * k as f64;
                c * (1.0 - (w * t).cos()) / w
            }
        }
    }
}

impl Serialize for FourierTerm {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            FourierTerm::Const(c) => {
                let mut seq = ser.serialize_seq(Some(2))?;
                seq.serialize_element("const")?;
                seq.serialize_element(&c)?;
                seq.end()
            }
            FourierTerm::Cos(k, c) => {
                let mut seq = ser.serialize_seq(Some(3))?;
                seq.serialize_element("cos")?;
                seq.serialize_element(&k)?;
                seq.serialize_element(&c)?;
                seq.end()
            }
            FourierTerm::Sin(k, c) => {
                let mut seq = ser.serialize_seq(Some(3))?;
                seq.serialize_element("sin")?;
                seq.serialize_element(&k)?;
                seq.serialize_element(&c)?;
                seq.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for FourierTerm {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct TermVisitor;
        impl<'de> Visitor<'de> for TermVisitor {
            type Value = FourierTerm;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "[\"const\", c], [\"cos\", k, c] or [\"sin\", k, c]")
            }
            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<FourierTerm, A::Error> {
                let kind: String = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(0, &self))?;
                match kind.as_str() {
                    "const" => {
                        let c: f64 = seq
                            .next_element()?
                            .ok_or_else(|| serde::de::Error::invalid_length(1, &self))?;
                        Ok(FourierTerm::Const(c))
                    }
                    "cos" | "sin" => {
                        let k: u32 = seq
                            .next_element()?
                            .ok_or_else(|| serde::de::Error::invalid_length(1, &self))?;
                        let c: f64 = seq
                            .next_element()?
                            .ok_or_else(|| serde::de::Error::invalid_length(2, &self))?;
                        if k == 0 {
                            return Err(serde::de::Error::custom("harmonic index k must be >= 1"));
                        }
                        if kind == "cos" {
                            Ok(FourierTerm::Cos(k, c))
                        } else {
                            Ok(FourierTerm::Sin(k, c))
                        }
                    }
                    other => Err(serde::de::Error::unknown_variant(
                        other,
                        &["const", "cos", "sin"],
                    )),
                }
            }
        }
        de.deserialize_seq(TermVisitor)
    }
}

/// Finite trigonometric series, 1-periodic by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrigSeries {
    pub terms: Vec<FourierTerm>,
}

impl TrigSeries {
    pub fn new(terms: Vec<FourierTerm>) -> Self {
        Self { terms }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![FourierTerm::Const(c)],
        }
    }

    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.eval(t)).sum()
    }

    /// Term-by-term derivative.
    pub fn deriv(&self) -> TrigSeries {
        TrigSeries {
            terms: self.terms.iter().map(FourierTerm::deriv).collect(),
        }
    }

    /// Exact primitive ∫_0^t.
    pub fn primitive(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.primitive(t)).sum()
    }

    /// Mean over one period (the constant term).
    pub fn mean(&self) -> f64 {
        self.terms
            .iter()
            .map(|term| match *term {
                FourierTerm::Const(c) => c,
                _ => 0.0,
            })
            .sum()
    }

    /// Crude upper bound Σ|coefficients| for the sup over one period.
    pub fn coef_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|term| match *term {
                FourierTerm::Const(c) | FourierTerm::Cos(_, c) | FourierTerm::Sin(_, c) => c.abs(),
            })
            .sum()
    }
}

/// Resolution of the cached cumulative integral.
const CACHE_CELLS: usize = 4096;

enum Backing {
    Trig(TrigSeries),
    Cached {
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        /// f at the grid knots k/n, k = 0..=n.
        values: Vec<f64>,
        /// ∫_0^{k/n} f, built cell-by-cell with Simpson (midpoint sampled).
        cumulative: Vec<f64>,
    },
}

/// A 1-periodic scalar function with an O(1) primitive.
#[derive(Clone)]
pub struct ScalarPeriodic {
    backing: Arc<Backing>,
    mean: f64,
}

impl fmt::Debug for ScalarPeriodic {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match &*self.backing {
            Backing::Trig(s) => write!(f, "ScalarPeriodic::Trig({} terms)", s.terms.len()),
            Backing::Cached { .. } => write!(f, "ScalarPeriodic::Cached(mean = {})", self.mean),
        }
    }
}

impl ScalarPeriodic {
    pub fn from_trig(series: TrigSeries) -> Self {
        let mean = series.mean();
        Self {
            backing: Arc::new(Backing::Trig(series)),
            mean,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::from_trig(TrigSeries::constant(c))
    }

    /// Wrap an arbitrary 1-periodic function; the cumulative integral over
    /// one period is tabulated once at construction.
    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let n = CACHE_CELLS;
        let h = 1.0 / n as f64;
        let mut values = Vec::with_capacity(n + 1);
        for k in 0..=n {
            values.push(f(k as f64 * h));
        }
        let mut cumulative = Vec::with_capacity(n + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for k in 0..n {
            let mid = f((k as f64 + 0.5) * h);
            acc += h / 6.0 * (values[k] + 4.0 * mid + values[k + 1]);
            cumulative.push(acc);
        }
        let mean = acc;
        Self {
            backing: Arc::new(Backing::Cached {
                f: Arc::new(f),
                values,
                cumulative,
            }),
            mean,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match &*self.backing {
            Backing::Trig(s) => s.eval(t),
            Backing::Cached { f, .. } => f(t),
        }
    }

    /// Mean over one period.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Common primitive B(t) = ∫_0^t f, exact for trig series, cubic-Hermite
    /// interpolated from the cached cumulative otherwise.
    pub fn primitive(&self, t: f64) -> f64 {
        match &*self.backing {
            Backing::Trig(s) => s.primitive(t),
            Backing::Cached {
                values, cumulative, ..
            } => {
                let k = t.floor();
                let u = t - k;
                k * self.mean + hermite_cumulative(values, cumulative, u)
            }
        }
    }

    /// ∫_s^t f through the common primitive.
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        self.primitive(t) - self.primitive(s)
    }

    /// Max of |f| over one period (grid scan plus local parabolic refinement).
    pub fn max_abs(&self) -> f64 {
        let n = 2048;
        let mut best = 0.0_f64;
        let mut best_k = 0;
        for k in 0..n {
            let v = self.eval(k as f64 / n as f64).abs();
            if v > best {
                best = v;
                best_k = k;
            }
        }
        // golden-section polish around the best grid cell
        let mut a = (best_k as f64 - 1.0) / n as f64;
        let mut b = (best_k as f64 + 1.0) / n as f64;
        let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        for _ in 0..60 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if self.eval(c).abs() > self.eval(d).abs() {
                b = d;
            } else {
                a = c;
            }
        }
        best.max(self.eval(0.5 * (a + b)).abs())
    }
}

/// Cubic Hermite read of the cumulative table at u ∈ [0, 1]; the derivative of
/// the cumulative at the knots is the tabulated integrand itself.
fn hermite_cumulative(values: &[f64], cumulative: &[f64], u: f64) -> f64 {
    let n = values.len() - 1;
    let x = (u * n as f64).clamp(0.0, n as f64 - 1e-9);
    let cell = (x as usize).min(n - 1);
    let s = x - cell as f64;
    let h = 1.0 / n as f64;
    let (y0, y1) = (cumulative[cell], cumulative[cell + 1]);
    let (d0, d1) = (values[cell], values[cell + 1]);
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * y1
        + (s3 - s2) * h * d1
}
