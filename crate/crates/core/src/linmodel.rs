//! Ordinary least squares via the Cholesky factor of the normal equations.
//!
//! Designs here are tiny (at most two predictors plus an intercept), so the
//! cross-product matrix is formed explicitly and factored; a pivot that
//! collapses relative to its diagonal entry is reported as a singular design
//! rather than regularized away.

use crate::datagen::Dataset;
use crate::error::{invalid, Error, Result};
use crate::stochastics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Column {
    X1,
    X2,
    Y,
}

impl Column {
    pub fn of(self, data: &Dataset) -> &[f64] {
        match self {
            Column::X1 => &data.x1,
            Column::X2 => &data.x2,
            Column::Y => &data.y,
        }
    }
}

/// `response ~ predictors (+ intercept)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignSpec {
    pub response: Column,
    pub predictors: Vec<Column>,
    pub intercept: bool,
}

impl DesignSpec {
    pub fn new(response: Column, predictors: Vec<Column>) -> Self {
        Self {
            response,
            predictors,
            intercept: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.predictors.is_empty() {
            return Err(invalid("design needs at least one predictor"));
        }
        if self.predictors.contains(&self.response) {
            return Err(invalid("response listed among predictors"));
        }
        for (i, c) in self.predictors.iter().enumerate() {
            if self.predictors[..i].contains(c) {
                return Err(invalid("duplicate predictor"));
            }
        }
        Ok(())
    }
}

/// Result of an OLS fit.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Intercept first when present, then one slope per predictor.
    pub coefficients: Vec<f64>,
    /// `SSE / (n_obs - p - 1)` (or `n_obs - p` without intercept).
    pub residual_variance: f64,
    pub n_obs: usize,
    /// Number of non-intercept predictors.
    pub p: usize,
    pub intercept: bool,
    /// Lower Cholesky factor `L` of `X'X`, row-major `q × q`.
    crossprod_factor: Vec<f64>,
}

impl OlsFit {
    fn q(&self) -> usize {
        self.p + usize::from(self.intercept)
    }

    pub fn dof(&self) -> usize {
        self.n_obs - self.q()
    }

    /// Slopes without the intercept.
    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[usize::from(self.intercept)..]
    }

    pub fn intercept_value(&self) -> f64 {
        if self.intercept {
            self.coefficients[0]
        } else {
            0.0
        }
    }

    pub fn crossprod_factor(&self) -> &[f64] {
        &self.crossprod_factor
    }

    /// Linear predictor for one row of predictor values.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        predict_with(&self.coefficients, self.intercept, x)
    }
}

fn predict_with(coefficients: &[f64], intercept: bool, x: &[f64]) -> f64 {
    let (mut acc, slopes) = if intercept {
        (coefficients[0], &coefficients[1..])
    } else {
        (0.0, coefficients)
    };
    for (b, v) in slopes.iter().zip(x) {
        acc += b * v;
    }
    acc
}

fn row_iter(n: usize, rows: Option<&[usize]>) -> Box<dyn Iterator<Item = usize> + '_> {
    match rows {
        Some(r) => Box::new(r.iter().copied()),
        None => Box::new(0..n),
    }
}

/// In-place Cholesky of a symmetric positive-definite `q × q` matrix (row-major).
fn cholesky(a: &mut [f64], q: usize) -> Result<()> {
    for j in 0..q {
        let diag_scale = a[j * q + j].abs().max(f64::MIN_POSITIVE);
        let mut d = a[j * q + j];
        for k in 0..j {
            d -= a[j * q + k] * a[j * q + k];
        }
        if !(d > 1e-10 * diag_scale) {
            return Err(Error::SingularDesign);
        }
        let d = d.sqrt();
        a[j * q + j] = d;
        for i in (j + 1)..q {
            let mut s = a[i * q + j];
            for k in 0..j {
                s -= a[i * q + k] * a[j * q + k];
            }
            a[i * q + j] = s / d;
        }
        for k in (j + 1)..q {
            a[j * q + k] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b`.
fn cholesky_solve(l: &[f64], q: usize, b: &mut [f64]) {
    for i in 0..q {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * q + k] * b[k];
        }
        b[i] = s / l[i * q + i];
    }
    back_substitute_transpose(l, q, b);
}

/// Solves `Lᵀ x = b` in place.
fn back_substitute_transpose(l: &[f64], q: usize, b: &mut [f64]) {
    for i in (0..q).rev() {
        let mut s = b[i];
        for k in (i + 1)..q {
            s -= l[k * q + i] * b[k];
        }
        b[i] = s / l[i * q + i];
    }
}

/// Fits `response ~ predictors` over `rows` (all rows when `None`).
pub fn fit_ols(
    response: &[f64],
    predictors: &[&[f64]],
    rows: Option<&[usize]>,
    intercept: bool,
) -> Result<OlsFit> {
    let n_total = response.len();
    if predictors.iter().any(|c| c.len() != n_total) {
        return Err(invalid("predictor and response lengths differ"));
    }
    let p = predictors.len();
    let q = p + usize::from(intercept);
    if q == 0 {
        return Err(invalid("empty design"));
    }
    let n = rows.map_or(n_total, <[usize]>::len);
    if n <= q {
        return Err(Error::InsufficientData {
            n_obs: n,
            min_exclusive: q,
        });
    }

    let mut xtx = vec![0.0; q * q];
    let mut xty = vec![0.0; q];
    let mut x = vec![0.0; q];
    for i in row_iter(n_total, rows) {
        let mut k = 0;
        if intercept {
            x[0] = 1.0;
            k = 1;
        }
        for c in predictors {
            x[k] = c[i];
            k += 1;
        }
        let yi = response[i];
        if !yi.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value in row {i}")));
        }
        for a in 0..q {
            xty[a] += x[a] * yi;
            for b in 0..=a {
                xtx[a * q + b] += x[a] * x[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            xtx[b * q + a] = xtx[a * q + b];
        }
    }
    cholesky(&mut xtx, q)?;
    let mut beta = xty;
    cholesky_solve(&xtx, q, &mut beta);

    let mut sse = 0.0;
    let mut row = vec![0.0; p];
    for i in row_iter(n_total, rows) {
        for (slot, c) in row.iter_mut().zip(predictors) {
            *slot = c[i];
        }
        let r = response[i] - predict_with(&beta, intercept, &row);
        sse += r * r;
    }
    Ok(OlsFit {
        coefficients: beta,
        residual_variance: sse / (n - q) as f64,
        n_obs: n,
        p,
        intercept,
        crossprod_factor: xtx,
    })
}

/// Fits a named design on a dataset.
pub fn fit_design(data: &Dataset, spec: &DesignSpec, rows: Option<&[usize]>) -> Result<OlsFit> {
    spec.validate()?;
    let cols: Vec<&[f64]> = spec.predictors.iter().map(|c| c.of(data)).collect();
    fit_ols(spec.response.of(data), &cols, rows, spec.intercept)
}

/// Fitted values at `rows` (all rows when `None`).
pub fn predict(fit: &OlsFit, predictors: &[&[f64]], rows: Option<&[usize]>) -> Result<Vec<f64>> {
    if predictors.len() != fit.p {
        return Err(invalid(format!(
            "fit expects {} predictor columns, got {}",
            fit.p,
            predictors.len()
        )));
    }
    let n = predictors.first().map_or(0, |c| c.len());
    if predictors.iter().any(|c| c.len() != n) {
        return Err(invalid("predictor column lengths differ"));
    }
    let mut x = vec![0.0; fit.p];
    Ok(row_iter(n, rows)
        .map(|i| {
            for (slot, c) in x.iter_mut().zip(predictors) {
                *slot = c[i];
            }
            fit.predict_row(&x)
        })
        .collect())
}

/// `1 - SSE/SST` of `fit` on the given rows.
pub fn r_squared(
    fit: &OlsFit,
    response: &[f64],
    predictors: &[&[f64]],
    rows: Option<&[usize]>,
) -> Result<f64> {
    let fitted = predict(fit, predictors, rows)?;
    let ys: Vec<f64> = row_iter(response.len(), rows)
        .map(|i| response[i])
        .collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let sst: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    if !(sst > 0.0) {
        return Err(Error::UndefinedStatistic(
            "R² of a constant response".into(),
        ));
    }
    let sse: f64 = ys.iter().zip(&fitted).map(|(y, f)| (y - f).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

/// One draw of `(beta, sigma)` from the normal / scaled-inverse-chi-square
/// posterior under a flat prior:
/// `sigma² = σ̂²·dof / χ²(dof)`, `beta = β̂ + sigma · L⁻ᵀ z`.
pub fn bayes_param_draw(fit: &OlsFit, stream: &mut RngStream) -> Result<(Vec<f64>, f64)> {
    let dof = fit.dof();
    let chi = stream.chi_square(dof)?;
    let sigma = (fit.residual_variance * dof as f64 / chi).sqrt();
    let q = fit.q();
    let mut z = stream.draw_standard_normal(q);
    back_substitute_transpose(&fit.crossprod_factor, q, &mut z);
    let beta = fit
        .coefficients
        .iter()
        .zip(&z)
        .map(|(b, w)| b + sigma * w)
        .collect();
    Ok((beta, sigma))
}

/// Linear predictor with an arbitrary coefficient vector in `fit`'s layout.
pub fn predict_with_coefficients(
    fit: &OlsFit,
    coefficients: &[f64],
    predictors: &[&[f64]],
    rows: Option<&[usize]>,
) -> Result<Vec<f64>> {
    if coefficients.len() != fit.coefficients.len() {
        return Err(invalid("coefficient vector has the wrong length"));
    }
    let mut shadow = fit.clone();
    shadow.coefficients = coefficients.to_vec();
    predict(&shadow, predictors, rows)
}
