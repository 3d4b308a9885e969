//! Bagged CART regression trees and an iterative forest imputer.

use rayon::prelude::*;

use crate::ampute::IncompleteDataset;
use crate::error::{invalid, Result};
use crate::imputers::{CompletedDataset, Diagnostics, ImputationMethod};
use crate::stochastics::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per split; `None` means `max(1, p / 3)`.
    pub mtry: Option<usize>,
    /// Minimum number of training rows in a leaf.
    pub min_node_size: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            mtry: None,
            min_node_size: 5,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| (p / 3).max(1))
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(invalid("n_trees must be at least 1"));
        }
        if self.min_node_size == 0 {
            return Err(invalid("min_node_size must be at least 1"));
        }
        let m = self.mtry_for(p);
        if m == 0 || m > p {
            return Err(invalid(format!("mtry {m} must lie in 1..={p}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        value: f64,
        size: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A fitted regression tree. Rows go left when `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl RegressionTree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Predictions for every row of column-major `features`.
    pub fn predict(&self, features: &[&[f64]]) -> Vec<f64> {
        let n = features.first().map_or(0, |c| c.len());
        let mut row = vec![0.0; features.len()];
        (0..n)
            .map(|i| {
                for (slot, c) in row.iter_mut().zip(features) {
                    *slot = c[i];
                }
                self.predict_row(&row)
            })
            .collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Training-row counts of the leaves.
    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { size, .. } => Some(*size),
                _ => None,
            })
            .collect()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

struct Builder<'a> {
    features: &'a [&'a [f64]],
    y: &'a [f64],
    mtry: usize,
    min_node: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    /// Number of rows going left after sorting on `feature`.
    n_left: usize,
}

impl Builder<'_> {
    fn build(&mut self, rows: &mut [usize], stream: &mut RngStream) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        self.nodes.push(Node::Leaf {
            value: mean,
            size: n,
        });

        if n < 2 * self.min_node || rows.iter().all(|&i| self.y[i] == self.y[rows[0]]) {
            return id;
        }
        let Some(best) = self.best_split(rows, stream) else {
            return id;
        };
        let col = self.features[best.feature];
        rows.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        let (l, r) = rows.split_at_mut(best.n_left);
        let left = self.build(l, stream);
        let right = self.build(r, stream);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, rows: &[usize], stream: &mut RngStream) -> Option<BestSplit> {
        let p = self.features.len();
        let mut candidates = stream
            .sample_without_replacement(p, self.mtry)
            .expect("mtry <= p");
        candidates.sort_unstable();

        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let mut order: Vec<usize> = rows.to_vec();
        let mut best: Option<(f64, BestSplit)> = None;
        for &f in &candidates {
            let col = self.features[f];
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for s in 1..n {
                left_sum += self.y[order[s - 1]];
                if s < self.min_node || n - s < self.min_node {
                    continue;
                }
                let (lo, hi) = (col[order[s - 1]], col[order[s]]);
                if lo == hi {
                    continue;
                }
                let right_sum = total - left_sum;
                // Maximizing this minimizes the children's summed squared error.
                let score = left_sum * left_sum / s as f64 + right_sum * right_sum / (n - s) as f64;
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    let threshold = lo + 0.5 * (hi - lo);
                    best = Some((
                        score,
                        BestSplit {
                            feature: f,
                            threshold,
                            n_left: s,
                        },
                    ));
                }
            }
        }
        best.map(|(_, b)| b)
    }
}

/// Fits one CART tree on column-major `features` (each of length `y.len()`).
/// Bootstrapping, if requested, is the caller's job (see [`fit_forest`]).
pub fn fit_tree(
    features: &[&[f64]],
    y: &[f64],
    params: &ForestParams,
    stream: &mut RngStream,
) -> Result<RegressionTree> {
    let rows: Vec<usize> = (0..y.len()).collect();
    fit_tree_on_rows(features, y, rows, params, stream)
}

fn fit_tree_on_rows(
    features: &[&[f64]],
    y: &[f64],
    mut rows: Vec<usize>,
    params: &ForestParams,
    stream: &mut RngStream,
) -> Result<RegressionTree> {
    if y.is_empty() || rows.is_empty() {
        return Err(invalid("cannot fit a tree on empty data"));
    }
    if features.is_empty() {
        return Err(invalid("tree needs at least one feature"));
    }
    if features.iter().any(|c| c.len() != y.len()) {
        return Err(invalid("feature and response lengths differ"));
    }
    params.validate(features.len())?;
    let mut b = Builder {
        features,
        y,
        mtry: params.mtry_for(features.len()),
        min_node: params.min_node_size,
        nodes: Vec::new(),
    };
    b.build(&mut rows, stream);
    Ok(RegressionTree {
        nodes: b.nodes,
        n_features: features.len(),
    })
}

/// Fits `params.n_trees` trees, each on its own bootstrap sample and sub-stream.
/// Trees are fitted in parallel; the result does not depend on scheduling.
pub fn fit_forest(
    features: &[&[f64]],
    y: &[f64],
    params: &ForestParams,
    stream: &mut RngStream,
) -> Result<Vec<RegressionTree>> {
    if y.is_empty() {
        return Err(invalid("cannot fit a forest on empty data"));
    }
    params.validate(features.len())?;
    let streams: Vec<RngStream> = (0..params.n_trees)
        .map(|t| stream.split(t as u64))
        .collect();
    streams
        .into_par_iter()
        .map(|mut s| {
            let n = y.len();
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| s.below(n as u64) as usize).collect()
            } else {
                (0..n).collect()
            };
            fit_tree_on_rows(features, y, rows, params, &mut s)
        })
        .collect()
}

/// Per-row mean of the trees' predictions.
pub fn predict_forest(trees: &[RegressionTree], features: &[&[f64]]) -> Result<Vec<f64>> {
    if trees.is_empty() {
        return Err(invalid("empty forest"));
    }
    let n = features.first().map_or(0, |c| c.len());
    let mut acc = vec![0.0; n];
    for t in trees {
        for (a, v) in acc.iter_mut().zip(t.predict(features)) {
            *a += v;
        }
    }
    let k = trees.len() as f64;
    Ok(acc.into_iter().map(|v| v / k).collect())
}

/// Iterative forest imputation of the outcome.
///
/// Starts from the observed mean, then repeatedly fits a forest of `y` on
/// `(x1, x2)` over the observed rows and re-predicts the missing rows. Stops
/// at the first iteration whose relative change
/// `Σ(new − old)² / Σ new²` exceeds the previous one, returning the iterate
/// before it, or after `max_outer_iter` iterations.
pub fn impute_forest(
    inc: &IncompleteDataset,
    params: &ForestParams,
    max_outer_iter: usize,
    stream: &mut RngStream,
) -> Result<CompletedDataset> {
    params.validate(2)?;
    if max_outer_iter == 0 {
        return Err(invalid("max_outer_iter must be at least 1"));
    }
    let method = ImputationMethod::Forest {
        params: params.clone(),
        max_outer_iter,
    };
    let mis = inc.missing_indices();
    if mis.is_empty() {
        return Ok(CompletedDataset::new(inc, &[], method));
    }
    let obs = inc.observed_indices();
    if obs.len() < params.min_node_size {
        return Err(invalid(format!(
            "forest imputation needs at least {} observed rows, got {}",
            params.min_node_size,
            obs.len()
        )));
    }

    let y_obs: Vec<f64> = obs.iter().map(|&i| inc.y_observed()[i]).collect();
    let pick = |col: &[f64], idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| col[i]).collect() };
    let (x1_obs, x2_obs) = (pick(inc.x1(), &obs), pick(inc.x2(), &obs));
    let (x1_mis, x2_mis) = (pick(inc.x1(), &mis), pick(inc.x2(), &mis));

    let mean = y_obs.iter().sum::<f64>() / y_obs.len() as f64;
    let mut current = vec![mean; mis.len()];
    let mut prev_change = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..max_outer_iter {
        let mut s = stream.split(it as u64);
        let trees = fit_forest(&[&x1_obs, &x2_obs], &y_obs, params, &mut s)?;
        let next = predict_forest(&trees, &[&x1_mis, &x2_mis])?;
        let num: f64 = next
            .iter()
            .zip(&current)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let den: f64 = next.iter().map(|a| a * a).sum();
        let change = if den > 0.0 { num / den } else { num };
        if change > prev_change {
            break;
        }
        prev_change = change;
        current = next;
        iterations = it + 1;
    }

    let mut out = CompletedDataset::new(inc, &current, method);
    out.diagnostics = Diagnostics {
        converged: Some(iterations < max_outer_iter),
        iterations: Some(iterations),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ampute::MissingnessSpec;
    use crate::datagen::{generate_population, PopulationSpec};
    use crate::imputers::tests::sample;
    use crate::stochastics::{make_stream, SeedSpec};
    use proptest::prelude::*;

    fn params(min_node_size: usize) -> ForestParams {
        ForestParams {
            min_node_size,
            ..ForestParams::default()
        }
    }

    #[test]
    fn constant_response_single_leaf() {
        let x = [
            1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0,
        ];
        let y = [3.5; 12];
        let tree = fit_tree(&[&x], &y, &params(2), &mut make_stream(SeedSpec::new(1, 1))).unwrap();
        assert_eq!(tree.n_leaves(), 1);
        assert_eq!(tree.predict_row(&[100.0]), 3.5);
    }

    #[test]
    fn too_few_rows_single_leaf() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let tree = fit_tree(&[&x], &y, &params(5), &mut make_stream(SeedSpec::new(1, 1))).unwrap();
        assert_eq!(tree.n_leaves(), 1);
    }

    #[test]
    fn empty_input_rejected() {
        let mut s = make_stream(SeedSpec::new(1, 1));
        assert!(fit_tree(&[&[]], &[], &params(5), &mut s).is_err());
        assert!(predict_forest(&[], &[&[1.0]]).is_err());
    }

    #[test]
    fn step_function_fits_exactly() {
        let mut s = make_stream(SeedSpec::new(2, 2));
        let x1 = s.draw_standard_normal(200);
        let x2 = s.draw_standard_normal(200);
        let y: Vec<f64> = x1
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let p = ForestParams {
            mtry: Some(2),
            ..params(5)
        };
        let tree = fit_tree(&[&x1, &x2], &y, &p, &mut s).unwrap();
        let pred = tree.predict(&[&x1, &x2]);
        let mse = pred
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / 200.0;
        assert!(mse < 0.01, "training mse {mse}");
    }

    #[test]
    fn leaves_respect_min_node_size() {
        let inc = sample(0.8, 600, MissingnessSpec::mcar(0.01), 3);
        let p = params(7);
        let tree = fit_tree(
            &[inc.x1(), inc.x2()],
            inc.truth_y(),
            &p,
            &mut make_stream(SeedSpec::new(3, 3)),
        )
        .unwrap();
        assert!(tree.n_leaves() > 10);
        assert!(tree.leaf_sizes().iter().all(|&s| s >= 7));
    }

    #[test]
    fn single_tree_forest_equals_tree() {
        let mut s = make_stream(SeedSpec::new(4, 4));
        let x = s.draw_standard_normal(100);
        let y: Vec<f64> = x
            .iter()
            .map(|v| v.sin() + 0.1 * s.standard_normal())
            .collect();
        let p = ForestParams {
            n_trees: 1,
            bootstrap: false,
            ..params(5)
        };
        let trees = fit_forest(&[&x], &y, &p, &mut make_stream(SeedSpec::new(9, 9))).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(
            predict_forest(&trees, &[&x]).unwrap(),
            trees[0].predict(&[&x])
        );
    }

    #[test]
    fn forest_generalizes_on_high_signal_data() {
        let spec = PopulationSpec {
            size: 2000,
            ..PopulationSpec::with_r_squared(0.8)
        };
        let data = generate_population(&spec, &mut make_stream(SeedSpec::new(5, 5))).unwrap();
        let (tr, te) = (0..1000usize, 1000..2000usize);
        let cut = |c: &[f64], r: std::ops::Range<usize>| c[r].to_vec();
        let (x1a, x2a, ya) = (
            cut(&data.x1, tr.clone()),
            cut(&data.x2, tr.clone()),
            cut(&data.y, tr),
        );
        let (x1b, x2b, yb) = (
            cut(&data.x1, te.clone()),
            cut(&data.x2, te.clone()),
            cut(&data.y, te),
        );
        let trees = fit_forest(
            &[&x1a, &x2a],
            &ya,
            &ForestParams::default(),
            &mut make_stream(SeedSpec::new(6, 6)),
        )
        .unwrap();
        let pred = predict_forest(&trees, &[&x1b, &x2b]).unwrap();
        let mean = yb.iter().sum::<f64>() / yb.len() as f64;
        let sst: f64 = yb.iter().map(|v| (v - mean).powi(2)).sum();
        let sse: f64 = yb.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum();
        let r2 = 1.0 - sse / sst;
        assert!(r2 > 0.6, "held-out R² {r2}");
    }

    #[test]
    fn more_trees_do_not_hurt() {
        let mut ratios = Vec::new();
        for seed in 0..20u64 {
            let spec = PopulationSpec {
                size: 600,
                ..PopulationSpec::with_r_squared(0.8)
            };
            let data =
                generate_population(&spec, &mut make_stream(SeedSpec::new(100 + seed, 0))).unwrap();
            let (x1a, x2a, ya) = (&data.x1[..300], &data.x2[..300], &data.y[..300]);
            let (x1b, x2b, yb) = (&data.x1[300..], &data.x2[300..], &data.y[300..]);
            let mse = |n_trees: usize| {
                let p = ForestParams {
                    n_trees,
                    ..ForestParams::default()
                };
                let trees = fit_forest(
                    &[x1a, x2a],
                    ya,
                    &p,
                    &mut make_stream(SeedSpec::new(seed, 1)),
                )
                .unwrap();
                let pred = predict_forest(&trees, &[x1b, x2b]).unwrap();
                yb.iter()
                    .zip(&pred)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    / yb.len() as f64
            };
            ratios.push(mse(100) / mse(10));
        }
        let avg = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(avg <= 1.05, "mean MSE ratio 100 vs 10 trees: {avg}");
    }

    #[test]
    fn forest_fit_is_schedule_independent() {
        let inc = sample(0.2, 300, MissingnessSpec::mcar(0.5), 7);
        let fit = || {
            fit_forest(
                &[inc.x1(), inc.x2()],
                inc.truth_y(),
                &ForestParams::default(),
                &mut make_stream(SeedSpec::new(1, 2)),
            )
            .unwrap()
        };
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool8 = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap();
        assert_eq!(pool1.install(fit), pool8.install(fit));
    }

    #[test]
    fn imputer_identity_without_missing() {
        let inc = sample(0.8, 100, MissingnessSpec::mcar(0.5), 8);
        let full = IncompleteDataset::from_mask(inc.truth(), vec![false; 100]).unwrap();
        let out = impute_forest(
            &full,
            &ForestParams::default(),
            10,
            &mut make_stream(SeedSpec::new(1, 1)),
        )
        .unwrap();
        assert_eq!(out.data, inc.truth());
    }

    #[test]
    fn imputer_tracks_noiseless_surface() {
        let mut s = make_stream(SeedSpec::new(9, 9));
        let spec = PopulationSpec {
            size: 1000,
            ..PopulationSpec::with_r_squared(0.8)
        };
        let mut data = generate_population(&spec, &mut s).unwrap();
        data.y = data
            .x1
            .iter()
            .zip(&data.x2)
            .map(|(a, b)| 0.8 * a + 0.4 * b)
            .collect();
        let inc = crate::ampute::ampute(data, &MissingnessSpec::mcar(0.5), &mut s).unwrap();
        let out = impute_forest(&inc, &ForestParams::default(), 10, &mut s).unwrap();
        let mis = inc.missing_indices();
        let mse = mis
            .iter()
            .map(|&i| (out.data.y[i] - inc.truth_y()[i]).powi(2))
            .sum::<f64>()
            / mis.len() as f64;
        assert!(mse < 0.05, "mse {mse}");
        for i in inc.observed_indices() {
            assert_eq!(out.data.y[i].to_bits(), inc.y_observed()[i].to_bits());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn forest_predictions_within_training_range(seed in 0u64..10_000, n in 12usize..80) {
            let mut s = make_stream(SeedSpec::new(seed, 0));
            let x1 = s.draw_standard_normal(n);
            let x2 = s.draw_standard_normal(n);
            let y: Vec<f64> = (0..n).map(|i| x1[i] * x2[i] + s.standard_normal()).collect();
            let p = ForestParams { n_trees: 5, ..ForestParams::default() };
            let trees = fit_forest(&[&x1, &x2], &y, &p, &mut s).unwrap();
            let probe1 = s.draw_standard_normal(30).iter().map(|v| v * 3.0).collect::<Vec<_>>();
            let probe2 = s.draw_standard_normal(30).iter().map(|v| v * 3.0).collect::<Vec<_>>();
            let pred = predict_forest(&trees, &[&probe1, &probe2]).unwrap();
            let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in pred {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
