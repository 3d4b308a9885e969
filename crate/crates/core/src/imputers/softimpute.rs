//! Low-rank matrix completion by alternating ridge regressions.
//!
//! Minimizes
//!
//! ```text
//! ½ Σ_{(i,j) observed} (M_ij − a_i·b_j)² + λ/2 (‖A‖² + ‖B‖²)
//! ```
//!
//! over `A` (n × k) and `B` (m × k). Each half-step solves every row of `A`
//! (then `B`) exactly given the other factor, so the objective never rises.

use crate::ampute::IncompleteDataset;
use crate::error::{invalid, Result};
use crate::stochastics::RngStream;

use super::{CompletedDataset, Diagnostics, ImputationMethod};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftImputeParams {
    pub rank_max: usize,
    /// Ridge penalty on both factors.
    pub lambda: f64,
    pub max_iter: usize,
    /// Relative change in the objective that counts as converged.
    pub tol: f64,
    /// Subtract observed column means before factoring.
    pub center: bool,
}

impl Default for SoftImputeParams {
    fn default() -> Self {
        Self {
            rank_max: 2,
            lambda: 0.0,
            max_iter: 200,
            tol: 1e-5,
            center: false,
        }
    }
}

impl SoftImputeParams {
    pub fn validate(&self) -> Result<()> {
        if self.rank_max == 0 {
            return Err(invalid("rank_max must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid("lambda must be a finite non-negative number"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsResult {
    /// Input columns with missing (`NaN`) entries replaced by the reconstruction.
    pub completed: Vec<Vec<f64>>,
    /// Penalized objective after each full sweep.
    pub objectives: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Solves the small SPD system `g x = r` in place (`g` row-major `k × k`).
/// A ridge of `1e-12·trace` is added only if the plain factorization fails.
fn solve_spd(g: &mut [f64], r: &mut [f64], k: usize) {
    let backup = g.to_vec();
    if !cholesky_in_place(g, k) {
        g.copy_from_slice(&backup);
        let trace: f64 = (0..k).map(|i| g[i * k + i]).sum();
        let jitter = 1e-12 * trace.max(1.0);
        for i in 0..k {
            g[i * k + i] += jitter;
        }
        if !cholesky_in_place(g, k) {
            r.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
    }
    for i in 0..k {
        let mut s = r[i];
        for j in 0..i {
            s -= g[i * k + j] * r[j];
        }
        r[i] = s / g[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = r[i];
        for j in (i + 1)..k {
            s -= g[j * k + i] * r[j];
        }
        r[i] = s / g[i * k + i];
    }
}

fn cholesky_in_place(a: &mut [f64], k: usize) -> bool {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / d;
        }
    }
    true
}

/// One exact half-step: refits every row of `target` (len × k) against the
/// fixed factor `fixed`, using the observed entries along that row.
/// `entry(t, f)` returns the centered matrix value linking target row `t` to
/// fixed row `f`, or `None` when unobserved.
fn half_step<F>(target: &mut [f64], fixed: &[f64], k: usize, lambda: f64, entry: F)
where
    F: Fn(usize, usize) -> Option<f64>,
{
    let n_target = target.len() / k;
    let n_fixed = fixed.len() / k;
    let mut g = vec![0.0; k * k];
    let mut r = vec![0.0; k];
    for t in 0..n_target {
        g.iter_mut().for_each(|v| *v = 0.0);
        r.iter_mut().for_each(|v| *v = 0.0);
        for d in 0..k {
            g[d * k + d] = lambda;
        }
        for f in 0..n_fixed {
            if let Some(v) = entry(t, f) {
                let row = &fixed[f * k..(f + 1) * k];
                for a in 0..k {
                    r[a] += v * row[a];
                    for b in 0..k {
                        g[a * k + b] += row[a] * row[b];
                    }
                }
            }
        }
        solve_spd(&mut g, &mut r, k);
        target[t * k..(t + 1) * k].copy_from_slice(&r);
    }
}

/// Top-`k` eigenvectors of the zero-filled Gram matrix, scaled by the root
/// of their eigenvalues. `None` if that leaves the factor rank-deficient.
fn initial_factor(
    n: usize,
    m: usize,
    k: usize,
    value: &impl Fn(usize, usize) -> Option<f64>,
) -> Option<Vec<f64>> {
    let mut gram = nalgebra::DMatrix::<f64>::zeros(m, m);
    let mut row = vec![0.0; m];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = value(i, j).unwrap_or(0.0);
        }
        for p in 0..m {
            for q in 0..m {
                gram[(p, q)] += row[p] * row[q];
            }
        }
    }
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let top = eig.eigenvalues[order[0]];
    let mut b = vec![0.0; m * k];
    for (d, &c) in order.iter().take(k).enumerate() {
        let lam = eig.eigenvalues[c];
        if !(lam > 1e-12 * top) {
            return None;
        }
        for j in 0..m {
            b[j * k + d] = eig.eigenvectors[(j, c)] * (lam / n as f64).sqrt();
        }
    }
    Some(b)
}

/// Completes `columns` (equal length, `NaN` = missing) with a rank ≤ `rank_max` fit.
pub fn soft_impute_als(
    columns: &[&[f64]],
    params: &SoftImputeParams,
    stream: &mut RngStream,
) -> Result<AlsResult> {
    params.validate()?;
    let m = columns.len();
    if m == 0 {
        return Err(invalid("no columns"));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(invalid("column lengths differ"));
    }
    if columns
        .iter()
        .flat_map(|c| c.iter())
        .any(|v| v.is_infinite())
    {
        return Err(invalid("infinite entry"));
    }
    let k = params.rank_max.min(m);

    let means: Vec<f64> = columns
        .iter()
        .map(|c| {
            if !params.center {
                return 0.0;
            }
            let (s, cnt) = c
                .iter()
                .filter(|v| !v.is_nan())
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            if cnt == 0 {
                0.0
            } else {
                s / cnt as f64
            }
        })
        .collect();
    let value = |i: usize, j: usize| -> Option<f64> {
        let v = columns[j][i];
        if v.is_nan() {
            None
        } else {
            Some(v - means[j])
        }
    };

    let mut a = vec![0.0; n * k];
    let mut b =
        initial_factor(n, m, k, &value).unwrap_or_else(|| stream.draw_standard_normal(m * k));

    let objective = |a: &[f64], b: &[f64]| -> f64 {
        let mut sse = 0.0;
        for i in 0..n {
            for j in 0..m {
                if let Some(v) = value(i, j) {
                    let fit: f64 = (0..k).map(|d| a[i * k + d] * b[j * k + d]).sum();
                    sse += (v - fit).powi(2);
                }
            }
        }
        let pen: f64 = a.iter().chain(b.iter()).map(|x| x * x).sum();
        0.5 * sse + 0.5 * params.lambda * pen
    };

    let mut objectives = Vec::new();
    let mut converged = false;
    for _ in 0..params.max_iter {
        half_step(&mut a, &b, k, params.lambda, value);
        half_step(&mut b, &a, k, params.lambda, |j, i| value(i, j));
        let obj = objective(&a, &b);
        let done = objectives.last().is_some_and(|&prev: &f64| {
            (prev - obj).abs() <= params.tol * prev.abs().max(f64::MIN_POSITIVE)
        });
        objectives.push(obj);
        if done {
            converged = true;
            break;
        }
    }

    let completed = (0..m)
        .map(|j| {
            (0..n)
                .map(|i| {
                    let v = columns[j][i];
                    if v.is_nan() {
                        means[j] + (0..k).map(|d| a[i * k + d] * b[j * k + d]).sum::<f64>()
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    Ok(AlsResult {
        completed,
        iterations: objectives.len(),
        objectives,
        converged,
    })
}

/// Treats `(x1, x2, y)` as an `n × 3` matrix and fills the missing `y`
/// entries from its low-rank reconstruction.
pub fn impute_softimpute(
    inc: &IncompleteDataset,
    params: &SoftImputeParams,
    stream: &mut RngStream,
) -> Result<CompletedDataset> {
    let method = ImputationMethod::SoftImpute(params.clone());
    let mis = inc.missing_indices();
    if mis.is_empty() {
        params.validate()?;
        return Ok(CompletedDataset::new(inc, &[], method));
    }
    let res = soft_impute_als(&[inc.x1(), inc.x2(), inc.y_observed()], params, stream)?;
    let imputed: Vec<f64> = mis.iter().map(|&i| res.completed[2][i]).collect();
    let mut out = CompletedDataset::new(inc, &imputed, method);
    out.diagnostics = Diagnostics {
        converged: Some(res.converged),
        iterations: Some(res.iterations),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ampute::MissingnessSpec;
    use crate::imputers::tests::sample;
    use crate::stochastics::{make_stream, SeedSpec};

    #[test]
    fn rank_one_exact_recovery() {
        let mut s = make_stream(SeedSpec::new(1, 1));
        let u = s.draw_standard_normal(30);
        let v = [1.5, -0.5, 2.0];
        let mut cols: Vec<Vec<f64>> = v
            .iter()
            .map(|&vj| u.iter().map(|ui| ui * vj).collect())
            .collect();
        let truth = cols[2][7];
        cols[2][7] = f64::NAN;
        let params = SoftImputeParams {
            rank_max: 1,
            ..SoftImputeParams::default()
        };
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let res = soft_impute_als(&refs, &params, &mut s).unwrap();
        assert!(
            (res.completed[2][7] - truth).abs() < 1e-4,
            "{} vs {truth}",
            res.completed[2][7]
        );
    }

    #[test]
    fn objective_non_increasing() {
        for (seed, lambda, center) in [(1, 0.0, false), (2, 0.5, false), (3, 2.0, true)] {
            let inc = sample(0.2, 500, MissingnessSpec::mcar(0.5), seed);
            let params = SoftImputeParams {
                lambda,
                center,
                tol: 1e-12,
                max_iter: 60,
                ..Default::default()
            };
            let res = soft_impute_als(
                &[inc.x1(), inc.x2(), inc.y_observed()],
                &params,
                &mut make_stream(SeedSpec::new(seed, 9)),
            )
            .unwrap();
            for w in res.objectives.windows(2) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-12),
                    "objective rose: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn observed_entries_untouched_and_flagged() {
        let inc = sample(0.8, 300, MissingnessSpec::mar_right(0.5), 4);
        let out = impute_softimpute(
            &inc,
            &SoftImputeParams::default(),
            &mut make_stream(SeedSpec::new(2, 2)),
        )
        .unwrap();
        for i in inc.observed_indices() {
            assert_eq!(out.data.y[i].to_bits(), inc.y_observed()[i].to_bits());
        }
        assert!(out.diagnostics.converged.is_some());
    }

    #[test]
    fn hitting_max_iter_reports_not_converged() {
        let inc = sample(0.2, 300, MissingnessSpec::mcar(0.5), 5);
        let params = SoftImputeParams {
            max_iter: 2,
            tol: 1e-15,
            ..Default::default()
        };
        let out = impute_softimpute(&inc, &params, &mut make_stream(SeedSpec::new(3, 3))).unwrap();
        assert_eq!(out.diagnostics.converged, Some(false));
        assert_eq!(out.diagnostics.iterations, Some(2));
        assert!(out.data.y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn invalid_params() {
        assert!(SoftImputeParams {
            rank_max: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SoftImputeParams {
            lambda: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SoftImputeParams {
            tol: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
