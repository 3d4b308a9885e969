use crate::ampute::IncompleteDataset;
use crate::error::{invalid, Result};
use crate::linmodel::{bayes_param_draw, predict, predict_with_coefficients};
use crate::stochastics::RngStream;

use super::{fit_observed, CompletedDataset, ImputationMethod};

/// Predictive mean matching with type-1 matching.
///
/// Observed rows are scored with `β̂`, missing rows with a posterior draw
/// `β*`. Each missing row takes the observed outcome of one donor chosen
/// uniformly from the `donors` observed rows with the closest scores.
pub fn impute_pmm(
    inc: &IncompleteDataset,
    stream: &mut RngStream,
    donors: usize,
) -> Result<CompletedDataset> {
    if donors == 0 {
        return Err(invalid("PMM needs at least one donor"));
    }
    let obs = inc.observed_indices();
    if donors > obs.len() {
        return Err(invalid(format!(
            "{donors} donors requested but only {} observed rows",
            obs.len()
        )));
    }
    let mis = inc.missing_indices();
    let method = ImputationMethod::Pmm { donors };
    if mis.is_empty() {
        return Ok(CompletedDataset::new(inc, &[], method));
    }

    let fit = fit_observed(inc)?;
    let cols = [inc.x1(), inc.x2()];
    let (beta_star, _) = bayes_param_draw(&fit, stream)?;
    let yhat_obs = predict(&fit, &cols, Some(&obs))?;
    let yhat_mis = predict_with_coefficients(&fit, &beta_star, &cols, Some(&mis))?;

    // Observed rows sorted by score; ties broken by row index.
    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.sort_by(|&a, &b| yhat_obs[a].total_cmp(&yhat_obs[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&k| yhat_obs[k]).collect();

    let y = inc.y_observed();
    let mut pool = Vec::with_capacity(donors);
    let imputed: Vec<f64> = yhat_mis
        .iter()
        .map(|&target| {
            nearest(&sorted, target, donors, &mut pool);
            let pick = pool[stream.below(donors as u64) as usize];
            y[obs[order[pick]]]
        })
        .collect();
    Ok(CompletedDataset::new(inc, &imputed, method))
}

/// Positions of the `k` entries of the sorted slice closest to `target`.
/// On equal distance the lower entry wins.
fn nearest(sorted: &[f64], target: f64, k: usize, out: &mut Vec<usize>) {
    out.clear();
    let split = sorted.partition_point(|&v| v < target);
    let (mut lo, mut hi) = (split, split);
    while out.len() < k {
        let take_low = match (lo > 0, hi < sorted.len()) {
            (true, true) => target - sorted[lo - 1] <= sorted[hi] - target,
            (true, false) => true,
            (false, true) => false,
            (false, false) => break,
        };
        if take_low {
            lo -= 1;
            out.push(lo);
        } else {
            out.push(hi);
            hi += 1;
        }
    }
}
