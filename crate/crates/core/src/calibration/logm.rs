//! Principal matrix logarithm and generator recovery from a transition matrix.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

fn sqrtm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular iterate in matrix square root".into()))?;
        let zi = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular iterate in matrix square root".into()))?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let delta = (&y_next - &y).amax();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.amax().max(1.0) {
            return Ok(y);
        }
    }
    Err(Error::Numerical(
        "matrix square root did not converge".into(),
    ))
}

/// Principal logarithm by inverse scaling and squaring: repeated square
/// roots until `‖A - I‖ < 1/4`, then the series of `log(I + X)`.
pub fn logm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.iter().any(|v| !v.is_finite()) {
        return invalid("matrix logarithm needs a finite square matrix");
    }
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut m = a.clone();
    let mut squarings = 0;
    while (&m - &id).norm() >= 0.25 {
        m = sqrtm(&m)?;
        squarings += 1;
        if squarings > 60 {
            return Err(Error::Numerical(
                "matrix logarithm: no convergent scaling".into(),
            ));
        }
    }
    let x = &m - &id;
    let mut term = x.clone();
    let mut sum = DMatrix::zeros(n, n);
    for k in 1..200 {
        let add = &term / k as f64;
        if k % 2 == 1 {
            sum += &add;
        } else {
            sum -= &add;
        }
        if add.amax() <= 1e-18 * sum.amax().max(1e-300) {
            break;
        }
        term = &term * &x;
    }
    Ok(sum * 2f64.powi(squarings))
}

/// Generator recovered as `log(P)/dt`. Negative off-diagonal rates are set to
/// zero and the diagonal rebalanced; the returned flag reports whether that
/// happened beyond `-1e-10`.
pub fn generator_from_transition(p: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, bool)> {
    if !(dt > 0.0) {
        return invalid("dt must be positive");
    }
    let mut c = logm(p)? / dt;
    let n = c.nrows();
    let mut clamped = false;
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            if c[(i, j)] < 0.0 {
                if c[(i, j)] < -1e-10 {
                    clamped = true;
                }
                c[(i, j)] = 0.0;
            }
            off += c[(i, j)];
        }
        c[(i, i)] = -off;
    }
    if clamped {
        log::warn!("transition matrix is not exactly embeddable; negative rates clamped to zero");
    }
    Ok((c, clamped))
}
