//! Plot-ready CSV emission.
//!
//! All floats print with 17 significant digits (`{:.16e}`), "." decimal, so
//! values round-trip bit-exactly and identical runs produce byte-identical
//! files.

use std::io::{self, Write};

use crate::ode::{MatrixTrajectory, Trajectory};

/// One float, 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Trajectory as `t,x1,...,xN` rows.
pub fn write_trajectory_csv<W: Write>(w: &mut W, traj: &Trajectory) -> io::Result<()> {
    let n = traj.dim();
    write!(w, "t")?;
    for i in 1..=n {
        write!(w, ",x{i}")?;
    }
    writeln!(w)?;
    for (k, &t) in traj.times.iter().enumerate() {
        write!(w, "{}", format_float(t))?;
        for v in traj.states[k].iter() {
            write!(w, ",{}", format_float(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Matrix trajectory as row-major blocks with a `t` prefix column:
/// `t,m1_1,m1_2,...,mN_N`.
pub fn write_matrix_csv<W: Write>(w: &mut W, traj: &MatrixTrajectory) -> io::Result<()> {
    let n = traj.matrices[0].nrows();
    write!(w, "t")?;
    for i in 1..=n {
        for j in 1..=n {
            write!(w, ",m{i}_{j}")?;
        }
    }
    writeln!(w)?;
    for (k, &t) in traj.times.iter().enumerate() {
        write!(w, "{}", format_float(t))?;
        let m = &traj.matrices[k];
        for i in 0..n {
            for j in 0..n {
                write!(w, ",{}", format_float(m[(i, j)]))?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Scalar series under a caller-chosen value column name (`t,<name>`).
pub fn write_series_csv<W: Write>(
    w: &mut W,
    name: &str,
    times: &[f64],
    values: &[f64],
) -> io::Result<()> {
    writeln!(w, "t,{name}")?;
    for (t, v) in times.iter().zip(values) {
        writeln!(w, "{},{}", format_float(*t), format_float(*v))?;
    }
    Ok(())
}

/// Profile rows `t,psi_1,...,psi_N`.
pub fn write_profile_csv<W: Write>(
    w: &mut W,
    profile: &[(f64, nalgebra::DVector<f64>)],
) -> io::Result<()> {
    if profile.is_empty() {
        return Ok(());
    }
    let n = profile[0].1.len();
    write!(w, "t")?;
    for i in 1..=n {
        write!(w, ",psi_{i}")?;
    }
    writeln!(w)?;
    for (t, row) in profile {
        write!(w, "{}", format_float(*t))?;
        for v in row.iter() {
            write!(w, ",{}", format_float(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Chart samples `xi_1..xi_N,y_1..y_N`.
pub fn write_chart_csv<W: Write>(
    w: &mut W,
    samples: &[(nalgebra::DVector<f64>, nalgebra::DVector<f64>)],
) -> io::Result<()> {
    if samples.is_empty() {
        return Ok(());
    }
    let n = samples[0].0.len();
    let mut header = Vec::new();
    for i in 1..=n {
        header.push(format!("xi_{i}"));
    }
    for i in 1..=n {
        header.push(format!("y_{i}"));
    }
    writeln!(w, "{}", header.join(","))?;
    for (xi, y) in samples {
        let row: Vec<String> = xi.iter().chain(y.iter()).map(|v| format_float(*v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn float_format_has_17_significant_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(1.0), "1.0000000000000000e0");
        let x = std::f64::consts::PI;
        let back: f64 = format_float(x).parse().unwrap();
        assert_eq!(back, x, "format must round-trip bit-exactly");
    }

    #[test]
    fn trajectory_header_matches_contract() {
        let traj = crate::ode::integrate(
            |_, y| -y,
            &DVector::from_row_slice(&[1.0, 2.0]),
            0.0,
            0.1,
            &crate::ode::IntegratorConfig::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,x2\n"));
    }
}
