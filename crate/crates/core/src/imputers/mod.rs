//! Single imputation of the outcome column.
//!
//! Every method fits on the observed rows of `y ~ x1 + x2` (or the
//! `(x1, x2, y)` matrix) and writes values only into masked positions;
//! observed outcomes are copied bit-for-bit into the completed dataset.

mod pmm;
mod softimpute;

pub use pmm::impute_pmm;
pub use softimpute::{impute_softimpute, soft_impute_als, AlsResult, SoftImputeParams};

use std::fmt;

use crate::ampute::IncompleteDataset;
use crate::datagen::Dataset;
use crate::error::{invalid, Result};
use crate::forest::{impute_forest, ForestParams};
use crate::linmodel::{bayes_param_draw, fit_ols, predict, predict_with_coefficients, OlsFit};
use crate::stochastics::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub enum ImputationMethod {
    /// Conditional mean from the observed-data regression.
    Predict,
    /// Conditional mean plus `N(0, σ̂²)` noise; `bayes` draws `(β, σ)` from
    /// their posterior first.
    Draw {
        bayes: bool,
    },
    /// Type-1 predictive mean matching.
    Pmm {
        donors: usize,
    },
    SoftImpute(SoftImputeParams),
    Forest {
        params: ForestParams,
        max_outer_iter: usize,
    },
}

impl ImputationMethod {
    pub fn draw() -> Self {
        ImputationMethod::Draw { bayes: false }
    }

    pub fn pmm() -> Self {
        ImputationMethod::Pmm { donors: 5 }
    }

    pub fn softimpute() -> Self {
        ImputationMethod::SoftImpute(SoftImputeParams::default())
    }

    pub fn forest() -> Self {
        ImputationMethod::Forest {
            params: ForestParams::default(),
            max_outer_iter: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ImputationMethod::Predict | ImputationMethod::Draw { .. } => Ok(()),
            ImputationMethod::Pmm { donors } => {
                if *donors == 0 {
                    Err(invalid("PMM needs at least one donor"))
                } else {
                    Ok(())
                }
            }
            ImputationMethod::SoftImpute(p) => p.validate(),
            ImputationMethod::Forest {
                params,
                max_outer_iter,
            } => {
                if *max_outer_iter == 0 {
                    return Err(invalid("forest imputer needs at least one outer iteration"));
                }
                params.validate(2)
            }
        }
    }

    /// Short name used in tables.
    pub fn label(&self) -> &'static str {
        match self {
            ImputationMethod::Predict => "predict",
            ImputationMethod::Draw { bayes: false } => "draw",
            ImputationMethod::Draw { bayes: true } => "draw_bayes",
            ImputationMethod::Pmm { .. } => "pmm",
            ImputationMethod::SoftImpute(_) => "softimpute",
            ImputationMethod::Forest { .. } => "forest",
        }
    }

    /// Value-based identity including parameters; feeds stream-id derivation.
    pub fn canonical_label(&self) -> String {
        match self {
            ImputationMethod::Predict => "method[predict]".into(),
            ImputationMethod::Draw { bayes } => format!("method[draw,bayes={bayes}]"),
            ImputationMethod::Pmm { donors } => format!("method[pmm,d={donors}]"),
            ImputationMethod::SoftImpute(p) => format!(
                "method[softimpute,k={},l={},it={},tol={},c={}]",
                p.rank_max, p.lambda, p.max_iter, p.tol, p.center
            ),
            ImputationMethod::Forest {
                params,
                max_outer_iter,
            } => format!(
                "method[forest,t={},m={:?},s={},b={},it={}]",
                params.n_trees, params.mtry, params.min_node_size, params.bootstrap, max_outer_iter
            ),
        }
    }
}

impl fmt::Display for ImputationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Extra information some imputers report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletedDataset {
    pub data: Dataset,
    pub imputed_mask: Vec<bool>,
    pub method: ImputationMethod,
    pub diagnostics: Diagnostics,
}

impl CompletedDataset {
    pub(crate) fn new(inc: &IncompleteDataset, imputed: &[f64], method: ImputationMethod) -> Self {
        Self {
            data: inc.fill(imputed),
            imputed_mask: inc.mask().to_vec(),
            method,
            diagnostics: Diagnostics::default(),
        }
    }

    /// Values written into masked rows, in row order.
    pub fn imputed_values(&self) -> Vec<f64> {
        self.imputed_mask
            .iter()
            .zip(&self.data.y)
            .filter(|(m, _)| **m)
            .map(|(_, &v)| v)
            .collect()
    }
}

/// OLS of `y ~ x1 + x2` on the observed rows.
pub(crate) fn fit_observed(inc: &IncompleteDataset) -> Result<OlsFit> {
    let obs = inc.observed_indices();
    fit_ols(inc.y_observed(), &[inc.x1(), inc.x2()], Some(&obs), true)
}

pub fn impute_predict(inc: &IncompleteDataset) -> Result<CompletedDataset> {
    let fit = fit_observed(inc)?;
    let mis = inc.missing_indices();
    let imputed = predict(&fit, &[inc.x1(), inc.x2()], Some(&mis))?;
    Ok(CompletedDataset::new(
        inc,
        &imputed,
        ImputationMethod::Predict,
    ))
}

pub fn impute_draw(
    inc: &IncompleteDataset,
    stream: &mut RngStream,
    bayes: bool,
) -> Result<CompletedDataset> {
    let fit = fit_observed(inc)?;
    let mis = inc.missing_indices();
    let cols = [inc.x1(), inc.x2()];
    let (mut imputed, sigma) = if bayes {
        let (beta, sigma) = bayes_param_draw(&fit, stream)?;
        (
            predict_with_coefficients(&fit, &beta, &cols, Some(&mis))?,
            sigma,
        )
    } else {
        (
            predict(&fit, &cols, Some(&mis))?,
            fit.residual_variance.sqrt(),
        )
    };
    for v in &mut imputed {
        *v += sigma * stream.standard_normal();
    }
    Ok(CompletedDataset::new(
        inc,
        &imputed,
        ImputationMethod::Draw { bayes },
    ))
}

/// Routes to the imputer named by `method`.
pub fn impute_dispatch(
    inc: &IncompleteDataset,
    method: &ImputationMethod,
    stream: &mut RngStream,
) -> Result<CompletedDataset> {
    method.validate()?;
    match method {
        ImputationMethod::Predict => impute_predict(inc),
        ImputationMethod::Draw { bayes } => impute_draw(inc, stream, *bayes),
        ImputationMethod::Pmm { donors } => impute_pmm(inc, stream, *donors),
        ImputationMethod::SoftImpute(params) => impute_softimpute(inc, params, stream),
        ImputationMethod::Forest {
            params,
            max_outer_iter,
        } => impute_forest(inc, params, *max_outer_iter, stream),
    }
}
