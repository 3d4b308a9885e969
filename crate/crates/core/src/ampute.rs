//! Missingness injection into the outcome column.

use std::fmt;

use crate::datagen::Dataset;
use crate::error::{invalid, Error, Result};
use crate::stochastics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mechanism {
    Mcar,
    /// Missingness probability rises with a weighted predictor score.
    MarRight,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Mcar => "MCAR",
            Mechanism::MarRight => "MAR",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    /// Target proportion of missing `y` values.
    pub prop: f64,
    /// Score weights over `(x1, x2, y)`. Ignored under MCAR; the `y` weight must be zero.
    pub weights: [f64; 3],
}

impl MissingnessSpec {
    pub fn mcar(prop: f64) -> Self {
        Self {
            mechanism: Mechanism::Mcar,
            prop,
            weights: [1.0, 1.0, 1.0],
        }
    }

    pub fn mar_right(prop: f64) -> Self {
        Self {
            mechanism: Mechanism::MarRight,
            prop,
            weights: [1.0, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prop > 0.0 && self.prop < 1.0) {
            return Err(invalid(format!(
                "missing proportion {} must lie in (0, 1)",
                self.prop
            )));
        }
        if self.mechanism == Mechanism::MarRight {
            if self.weights[2] != 0.0 {
                return Err(invalid("MAR weights must not load on y"));
            }
            if self.weights[0] == 0.0 && self.weights[1] == 0.0 {
                return Err(invalid("MAR needs a nonzero weight on x1 or x2"));
            }
            if self.weights.iter().any(|w| !w.is_finite()) {
                return Err(invalid("MAR weights must be finite"));
            }
        }
        Ok(())
    }

    pub fn canonical_label(&self) -> String {
        match self.mechanism {
            Mechanism::Mcar => format!("mech[MCAR,p={}]", self.prop),
            Mechanism::MarRight => format!(
                "mech[MAR,p={},w={}/{}/{}]",
                self.prop, self.weights[0], self.weights[1], self.weights[2]
            ),
        }
    }
}

/// Complete predictors with some outcome values hidden.
///
/// The hidden values are kept in `truth_y` for evaluation; `y_observed` holds
/// `NaN` at masked positions.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteDataset {
    x1: Vec<f64>,
    x2: Vec<f64>,
    y_observed: Vec<f64>,
    mask: Vec<bool>,
    truth_y: Vec<f64>,
}

impl IncompleteDataset {
    /// `mask[i] == true` hides `data.y[i]`.
    pub fn from_mask(data: Dataset, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != data.len() {
            return Err(invalid(format!(
                "mask length {} != data length {}",
                mask.len(),
                data.len()
            )));
        }
        let y_observed = data
            .y
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { f64::NAN } else { v })
            .collect();
        Ok(Self {
            x1: data.x1,
            x2: data.x2,
            y_observed,
            mask,
            truth_y: data.y,
        })
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn x2(&self) -> &[f64] {
        &self.x2
    }

    /// Outcome with `NaN` at masked rows.
    pub fn y_observed(&self) -> &[f64] {
        &self.y_observed
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Pre-amputation outcome. For evaluation only.
    pub fn truth_y(&self) -> &[f64] {
        &self.truth_y
    }

    pub fn truth(&self) -> Dataset {
        Dataset {
            x1: self.x1.clone(),
            x2: self.x2.clone(),
            y: self.truth_y.clone(),
        }
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.mask[i]).collect()
    }

    pub fn missing_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn n_missing(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Completes the outcome with `imputed` at masked rows; observed values are copied verbatim.
    pub(crate) fn fill(&self, imputed: &[f64]) -> Dataset {
        let mut y = self.y_observed.clone();
        for (slot, &v) in self.missing_indices().iter().zip(imputed) {
            y[*slot] = v;
        }
        Dataset {
            x1: self.x1.clone(),
            x2: self.x2.clone(),
            y,
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mean_logistic(scores: &[f64], shift: f64) -> f64 {
    scores.iter().map(|&s| logistic(s + shift)).sum::<f64>() / scores.len() as f64
}

/// Shift `b` with `mean(logistic(score + b)) = prop`, by bisection.
pub fn solve_shift(scores: &[f64], prop: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(invalid("no scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("scores must be finite"));
    }
    if !(prop > 0.0 && prop < 1.0) {
        return Err(invalid(format!("proportion {prop} must lie in (0, 1)")));
    }
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    while mean_logistic(scores, lo) > prop {
        lo *= 2.0;
    }
    while mean_logistic(scores, hi) < prop {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = mean_logistic(scores, mid);
        if (f - prop).abs() < 1e-12 {
            return Ok(mid);
        }
        if f < prop {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Standardized weighted predictor score (sample sd, `n - 1`).
fn standardized_scores(data: &Dataset, weights: &[f64; 3]) -> Result<Vec<f64>> {
    let raw: Vec<f64> = (0..data.len())
        .map(|i| weights[0] * data.x1[i] + weights[1] * data.x2[i])
        .collect();
    let n = raw.len() as f64;
    if raw.len() < 2 {
        return Err(Error::DegenerateScores);
    }
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        return Err(Error::DegenerateScores);
    }
    Ok(raw.into_iter().map(|s| (s - mean) / sd).collect())
}

/// Hides outcome values. MCAR masks each row with probability `prop`; MAR
/// masks row `i` with probability `logistic(s_i + b)` where `s` is the
/// standardized weighted predictor score and `b` calibrates the mean to `prop`.
pub fn ampute(
    data: Dataset,
    spec: &MissingnessSpec,
    stream: &mut RngStream,
) -> Result<IncompleteDataset> {
    spec.validate()?;
    let mask = match spec.mechanism {
        Mechanism::Mcar => (0..data.len())
            .map(|_| stream.uniform() < spec.prop)
            .collect(),
        Mechanism::MarRight => {
            let scores = standardized_scores(&data, &spec.weights)?;
            let b = solve_shift(&scores, spec.prop)?;
            scores
                .iter()
                .map(|&s| stream.uniform() < logistic(s + b))
                .collect()
        }
    };
    IncompleteDataset::from_mask(data, mask)
}
