//! Least-squares fitting of exponential decay rates.

/// Result of a log-linear fit `log y ≈ intercept + slope·t`.
#[derive(Debug, Clone, Copy)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Number of samples that survived the positivity/floor filter.
    pub samples: usize,
}

/// Fit `log y` against `t` by ordinary least squares. Samples with
/// `y <= floor` are dropped so that rounding noise at the bottom of a decay
/// curve does not pollute the slope.
pub fn log_linear_fit(times: &[f64], values: &[f64], floor: f64) -> LogLinearFit {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|&(_, &y)| y > floor && y.is_finite())
        .map(|(&t, &y)| (t, y.ln()))
        .collect();
    let n = pts.len();
    if n < 2 {
        return LogLinearFit {
            slope: 0.0,
            intercept: f64::NAN,
            r_squared: 0.0,
            samples: n,
        };
    }
    let nf = n as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_l = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let mut stt = 0.0;
    let mut stl = 0.0;
    let mut sll = 0.0;
    for &(t, l) in &pts {
        stt += (t - mean_t) * (t - mean_t);
        stl += (t - mean_t) * (l - mean_l);
        sll += (l - mean_l) * (l - mean_l);
    }
    if stt == 0.0 {
        return LogLinearFit {
            slope: 0.0,
            intercept: mean_l,
            r_squared: 0.0,
            samples: n,
        };
    }
    let slope = stl / stt;
    let r_squared = if sll > 0.0 { stl * stl / (stt * sll) } else { 1.0 };
    LogLinearFit {
        slope,
        intercept: mean_l - slope * mean_t,
        r_squared,
        samples: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn recovers_a_pure_exponential() {
        let times: Vec<f64> = (0..200).map(|k| 0.05 * k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let fit = log_linear_fit(&times, &values, 0.0);
        assert_abs_diff_eq!(fit.slope, -0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, 3.0_f64.ln(), epsilon = 1e-12);
        assert!(fit.r_squared > 0.999999);
    }

    #[test]
    fn floor_filters_noise_samples() {
        let times: Vec<f64> = (0..100).map(|k| 0.2 * k as f64).collect();
        let values: Vec<f64> = times
            .iter()
            .map(|t| (-1.0 * t).exp().max(1e-6)) // saturates at the noise floor
            .collect();
        let fit = log_linear_fit(&times, &values, 1.1e-6);
        assert_abs_diff_eq!(fit.slope, -1.0, epsilon = 1e-9);
        assert!(fit.samples < 100);
    }
}
