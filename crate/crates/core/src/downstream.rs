//! Downstream analyses of a completed dataset and the MSE decomposition.
//!
//! The nine quantities mirror what an analyst would compute on the completed
//! data: location and spread of `y`, the share above the true 90th
//! percentile, the `y`–`x1` correlation, and two regressions, one with `y` as
//! outcome (`y ~ x1 + x2`) and one with `y` as predictor (`x1 ~ y + x2`).

use crate::ampute::IncompleteDataset;
use crate::datagen::{coefficients, Dataset, PopulationSpec};
use crate::error::{invalid, Error, Result};
use crate::imputers::{impute_dispatch, ImputationMethod};
use crate::linmodel::{fit_ols, r_squared};
use crate::stochastics::RngStream;

/// Downstream estimates for one completed dataset.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamSet {
    pub mu: f64,
    pub sigma: f64,
    /// Percentage of completed `y` above the 0.9 quantile of the true `y`.
    pub p90: f64,
    pub rho: f64,
    /// Slope of `x1` in `y ~ x1 + x2`.
    pub gamma: f64,
    pub r2_y: f64,
    /// Slope of `y` in `x1 ~ y + x2`.
    pub delta: f64,
    pub r2_x: f64,
    /// Squared imputation error averaged over all rows.
    pub mse_full: f64,
    /// Squared imputation error averaged over masked rows only.
    pub mse_missing: f64,
}

impl ParamSet {
    pub const FIELDS: [&'static str; 10] = [
        "mu",
        "sigma",
        "p90",
        "rho",
        "gamma",
        "r2_y",
        "delta",
        "r2_x",
        "mse_full",
        "mse_missing",
    ];

    pub fn to_array(&self) -> [f64; 10] {
        [
            self.mu,
            self.sigma,
            self.p90,
            self.rho,
            self.gamma,
            self.r2_y,
            self.delta,
            self.r2_x,
            self.mse_full,
            self.mse_missing,
        ]
    }

    pub fn from_array(v: [f64; 10]) -> Self {
        Self {
            mu: v[0],
            sigma: v[1],
            p90: v[2],
            rho: v[3],
            gamma: v[4],
            r2_y: v[5],
            delta: v[6],
            r2_x: v[7],
            mse_full: v[8],
            mse_missing: v[9],
        }
    }
}

/// Result of [`decompose_mse`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionResult {
    pub bias_sq: f64,
    pub variance: f64,
    pub noise: f64,
    pub total: f64,
}

impl DecompositionResult {
    pub fn sum_of_parts(&self) -> f64 {
        self.bias_sq + self.variance + self.noise
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1)·q`).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("quantile of an empty sequence"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("quantile level {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= v.len() {
        return Ok(v[v.len() - 1]);
    }
    Ok(v[lo] + frac * (v[lo + 1] - v[lo]))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64], m: f64) -> f64 {
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Downstream parameters of `completed` against the row-aligned `truth`.
/// `mask` marks imputed rows (used for `mse_missing`).
pub fn params_of(completed: &Dataset, truth: &Dataset, mask: &[bool]) -> Result<ParamSet> {
    let n = completed.len();
    if truth.len() != n || mask.len() != n {
        return Err(invalid("completed, truth and mask must be row-aligned"));
    }
    if n < 4 {
        return Err(Error::InsufficientData {
            n_obs: n,
            min_exclusive: 3,
        });
    }
    let y = &completed.y;
    let mu = mean(y);
    let sigma = sd(y, mu);
    let mx = mean(&completed.x1);
    let sx = sd(&completed.x1, mx);
    if !(sigma > 0.0) || !(sx > 0.0) {
        return Err(Error::UndefinedStatistic("zero-variance column".into()));
    }

    let cut = quantile(&truth.y, 0.9)?;
    let p90 = 100.0 * y.iter().filter(|&&v| v > cut).count() as f64 / n as f64;

    let cov = y
        .iter()
        .zip(&completed.x1)
        .map(|(a, b)| (a - mu) * (b - mx))
        .sum::<f64>()
        / (n - 1) as f64;
    let rho = cov / (sigma * sx);

    let preds_y = [completed.x1.as_slice(), completed.x2.as_slice()];
    let fit_y = fit_ols(y, &preds_y, None, true)?;
    let r2_y = r_squared(&fit_y, y, &preds_y, None)?;

    let preds_x = [y.as_slice(), completed.x2.as_slice()];
    let fit_x = fit_ols(&completed.x1, &preds_x, None, true)?;
    let r2_x = r_squared(&fit_x, &completed.x1, &preds_x, None)?;

    let sq: Vec<f64> = truth
        .y
        .iter()
        .zip(y)
        .map(|(t, c)| (t - c).powi(2))
        .collect();
    let mse_full = sq.iter().sum::<f64>() / n as f64;
    let n_mis = mask.iter().filter(|&&m| m).count();
    let mse_missing = if n_mis == 0 {
        0.0
    } else {
        sq.iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v)
            .sum::<f64>()
            / n_mis as f64
    };

    Ok(ParamSet {
        mu,
        sigma,
        p90,
        rho,
        gamma: fit_y.slopes()[0],
        r2_y,
        delta: fit_x.slopes()[0],
        r2_x,
        mse_full,
        mse_missing,
    })
}

/// [`params_of`] for an imputer's output.
pub fn estimate_params(
    completed: &crate::imputers::CompletedDataset,
    truth: &Dataset,
) -> Result<ParamSet> {
    params_of(&completed.data, truth, &completed.imputed_mask)
}

/// Parameters of a complete dataset (no imputation, zero MSE).
pub fn complete_data_params(data: &Dataset) -> Result<ParamSet> {
    params_of(data, data, &vec![false; data.len()])
}

/// Bias² / variance / noise split of the imputation MSE over masked cells.
///
/// The same incomplete dataset is imputed `repeats` times on independent
/// sub-streams. For each masked cell, `m_i` is the mean imputation across
/// repeats. `bias_sq` averages `(m_i − f(x_i))²` against the generator's
/// noiseless surface, `variance` averages the across-repeat variance of the
/// imputations (divisor `repeats`), and `noise` is the generator's `1 − r²`.
/// `total` is the mean over repeats of `mse_missing`.
pub fn decompose_mse(
    inc: &IncompleteDataset,
    generator: &PopulationSpec,
    method: &ImputationMethod,
    repeats: usize,
    stream: &mut RngStream,
) -> Result<DecompositionResult> {
    if repeats < 2 {
        return Err(invalid("decomposition needs at least 2 repeats"));
    }
    let mis = inc.missing_indices();
    if mis.is_empty() {
        return Err(invalid("decomposition needs at least one masked cell"));
    }
    let surface = coefficients(generator);
    let truth = inc.truth_y();

    let mut sum = vec![0.0; mis.len()];
    let mut sum_sq = vec![0.0; mis.len()];
    let mut total = 0.0;
    for r in 0..repeats {
        let mut sub = stream.split(r as u64);
        let out = impute_dispatch(inc, method, &mut sub)?;
        let mut sse = 0.0;
        for (k, &i) in mis.iter().enumerate() {
            let v = out.data.y[i];
            sum[k] += v;
            sum_sq[k] += v * v;
            sse += (v - truth[i]).powi(2);
        }
        total += sse / mis.len() as f64;
    }
    let reps = repeats as f64;
    let mut bias_sq = 0.0;
    let mut variance = 0.0;
    for (k, &i) in mis.iter().enumerate() {
        let m = sum[k] / reps;
        let f = surface.surface(inc.x1()[i], inc.x2()[i]);
        bias_sq += (m - f).powi(2);
        variance += (sum_sq[k] / reps - m * m).max(0.0);
    }
    let n0 = mis.len() as f64;
    Ok(DecompositionResult {
        bias_sq: bias_sq / n0,
        variance: variance / n0,
        noise: generator.noise_variance(),
        total: total / reps,
    })
}
