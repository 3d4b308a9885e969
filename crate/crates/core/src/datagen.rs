//! Synthetic populations: two correlated standard-normal predictors and a
//! linear outcome with Gaussian noise, plus the closed-form parameters such a
//! population implies.

use std::io::{BufRead, Write};

use crate::downstream::ParamSet;
use crate::error::{invalid, Error, Result};
use crate::stochastics::RngStream;

/// Parameters of the data-generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    /// Proportion of outcome variance explained by `x1` and `x2`.
    pub r_squared: f64,
    /// Split of the explained variance between `x1` and `x2`.
    pub var_prop: (f64, f64),
    pub predictor_corr: f64,
    pub size: usize,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            r_squared: 0.8,
            var_prop: (0.8, 0.2),
            predictor_corr: 0.5,
            size: 1_000_000,
        }
    }
}

impl PopulationSpec {
    pub fn with_r_squared(r_squared: f64) -> Self {
        Self {
            r_squared,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_squared > 0.0 && self.r_squared < 1.0) {
            return Err(invalid(format!(
                "r_squared {} must lie in (0, 1)",
                self.r_squared
            )));
        }
        let (a, b) = self.var_prop;
        if a < 0.0 || b < 0.0 || ((a + b) - 1.0).abs() > 1e-6 {
            return Err(invalid("var_prop must be non-negative and sum to 1"));
        }
        if !(self.predictor_corr > -1.0 && self.predictor_corr < 1.0) {
            return Err(invalid("predictor_corr must lie in (-1, 1)"));
        }
        if self.size == 0 {
            return Err(invalid("population size must be positive"));
        }
        Ok(())
    }

    /// Variance of the noise term, `1 - r²`.
    pub fn noise_variance(&self) -> f64 {
        1.0 - self.r_squared
    }

    /// Short label used in tables: `high` for r² = 0.8, `low` for r² = 0.2.
    pub fn signal_label(&self) -> String {
        if self.r_squared == 0.8 {
            "high".to_string()
        } else if self.r_squared == 0.2 {
            "low".to_string()
        } else {
            format!("r2={}", self.r_squared)
        }
    }

    /// Canonical, value-based identity; feeds stream-id derivation.
    pub fn canonical_label(&self) -> String {
        format!(
            "pop[r2={},vp={}/{},rho={},n={}]",
            self.r_squared, self.var_prop.0, self.var_prop.1, self.predictor_corr, self.size
        )
    }
}

/// Generator constants `(beta1, beta2, noise_sd)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub beta1: f64,
    pub beta2: f64,
    pub noise_sd: f64,
}

impl Coefficients {
    /// The noiseless surface `beta1·x1 + beta2·x2`.
    pub fn surface(&self, x1: f64, x2: f64) -> f64 {
        self.beta1 * x1 + self.beta2 * x2
    }
}

pub fn coefficients(spec: &PopulationSpec) -> Coefficients {
    Coefficients {
        beta1: (spec.r_squared * spec.var_prop.0).sqrt(),
        beta2: (spec.r_squared * spec.var_prop.1).sqrt(),
        noise_sd: (1.0 - spec.r_squared).sqrt(),
    }
}

/// Three equal-length columns `x1`, `x2`, `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x1.len() != x2.len() || x1.len() != y.len() {
            return Err(invalid(format!(
                "column lengths differ: x1={}, x2={}, y={}",
                x1.len(),
                x2.len(),
                y.len()
            )));
        }
        if x1.iter().chain(&x2).chain(&y).any(|v| !v.is_finite()) {
            return Err(invalid("dataset contains non-finite values"));
        }
        Ok(Self { x1, x2, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x1: indices.iter().map(|&i| self.x1[i]).collect(),
            x2: indices.iter().map(|&i| self.x2[i]).collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Same predictors, different outcome column.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Dataset> {
        Dataset::new(self.x1.clone(), self.x2.clone(), y)
    }

    /// Writes `x1,x2,y` CSV. Values use the shortest exact decimal form.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x1,x2,y")?;
        for i in 0..self.len() {
            writeln!(out, "{},{},{}", self.x1[i], self.x2[i], self.y[i])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Dataset> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "x1,x2,y" {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header x1,x2,y, got {header:?}"),
            });
        }
        let (mut x1, mut x2, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for (idx, line) in lines.enumerate() {
            let line = line?;
            let lineno = idx + 2;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: e.to_string(),
                })
            };
            x1.push(parse(fields[0])?);
            x2.push(parse(fields[1])?);
            y.push(parse(fields[2])?);
        }
        Dataset::new(x1, x2, y)
    }
}

/// Draws `spec.size` rows: `(x1, x2)` bivariate normal with unit variances and
/// correlation `predictor_corr`, `y = beta1·x1 + beta2·x2 + N(0, 1 - r²)`.
pub fn generate_population(spec: &PopulationSpec, stream: &mut RngStream) -> Result<Dataset> {
    spec.validate()?;
    let c = coefficients(spec);
    let rho = spec.predictor_corr;
    let l22 = (1.0 - rho * rho).sqrt();
    let n = spec.size;
    let (mut x1, mut x2, mut y) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let z1 = stream.standard_normal();
        let z2 = stream.standard_normal();
        let e = stream.standard_normal();
        let a = z1;
        let b = rho * z1 + l22 * z2;
        x1.push(a);
        x2.push(b);
        y.push(c.surface(a, b) + c.noise_sd * e);
    }
    Ok(Dataset { x1, x2, y })
}

/// Population moments of `(x1, x2, y)` implied by `spec`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PopulationMoments {
    pub var_y: f64,
    pub cov_y_x1: f64,
    pub cov_y_x2: f64,
    pub cov_x1_x2: f64,
}

pub(crate) fn population_moments(spec: &PopulationSpec) -> PopulationMoments {
    let c = coefficients(spec);
    let rho = spec.predictor_corr;
    PopulationMoments {
        var_y: c.beta1 * c.beta1
            + c.beta2 * c.beta2
            + 2.0 * rho * c.beta1 * c.beta2
            + spec.noise_variance(),
        cov_y_x1: c.beta1 + rho * c.beta2,
        cov_y_x2: rho * c.beta1 + c.beta2,
        cov_x1_x2: rho,
    }
}

/// Closed-form downstream parameters of the infinite population.
pub fn ground_truth(spec: &PopulationSpec) -> Result<ParamSet> {
    spec.validate()?;
    let c = coefficients(spec);
    let m = population_moments(spec);
    let sigma = m.var_y.sqrt();

    // x1 ~ y + x2 on population covariances:
    // [var_y    cov_yx2] [delta]   [cov_yx1]
    // [cov_yx2  1      ] [c2   ] = [rho    ]
    let det = m.var_y - m.cov_y_x2 * m.cov_y_x2;
    let delta = (m.cov_y_x1 - m.cov_y_x2 * m.cov_x1_x2) / det;
    let c2 = (m.var_y * m.cov_x1_x2 - m.cov_y_x2 * m.cov_y_x1) / det;
    let r2_x = delta * m.cov_y_x1 + c2 * m.cov_x1_x2;

    Ok(ParamSet {
        mu: 0.0,
        sigma,
        p90: 10.0,
        rho: m.cov_y_x1 / sigma,
        gamma: c.beta1,
        r2_y: (m.var_y - spec.noise_variance()) / m.var_y,
        delta,
        r2_x,
        mse_full: 0.0,
        mse_missing: 0.0,
    })
}

/// `n` rows drawn without replacement.
pub fn draw_sample(pop: &Dataset, n: usize, stream: &mut RngStream) -> Result<Dataset> {
    let idx = stream.sample_without_replacement(pop.len(), n)?;
    Ok(pop.select(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::{make_stream, SeedSpec};
    use approx::assert_abs_diff_eq;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn coefficient_values() {
        let hi = coefficients(&PopulationSpec::with_r_squared(0.8));
        assert_abs_diff_eq!(hi.beta1, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(hi.beta2, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(hi.noise_sd, 0.4472, epsilon = 1e-4);
        let lo = coefficients(&PopulationSpec::with_r_squared(0.2));
        assert_abs_diff_eq!(lo.beta1, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(lo.beta2, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(lo.noise_sd, 0.8944, epsilon = 1e-4);
        let one = coefficients(&PopulationSpec {
            var_prop: (1.0, 0.0),
            ..PopulationSpec::with_r_squared(0.5)
        });
        assert_eq!(one.beta2, 0.0);
    }

    #[test]
    fn spec_validation() {
        assert!(PopulationSpec::with_r_squared(0.0).validate().is_err());
        assert!(PopulationSpec::with_r_squared(1.0).validate().is_err());
        let bad = PopulationSpec {
            var_prop: (0.7, 0.2),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let neg = PopulationSpec {
            var_prop: (1.2, -0.2),
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn ground_truth_closed_forms() {
        // Hand-evaluated: var_y = 0.64 + 0.16 + 0.32 + 0.2 = 1.32, cov(y,x1) = 1.0.
        let hi = ground_truth(&PopulationSpec::with_r_squared(0.8)).unwrap();
        assert_abs_diff_eq!(hi.sigma, 1.32f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(hi.sigma, 1.149, epsilon = 5e-4);
        assert_abs_diff_eq!(hi.rho, 0.870, epsilon = 5e-4);
        assert_abs_diff_eq!(hi.gamma, 0.80, epsilon = 1e-12);
        assert_abs_diff_eq!(hi.r2_y, 0.848, epsilon = 5e-4);
        // delta = 0.6 / 0.68 from the 2x2 system.
        assert_abs_diff_eq!(hi.delta, 0.6 / 0.68, epsilon = 1e-12);
        assert_abs_diff_eq!(hi.delta, 0.88, epsilon = 5e-3);
        assert_abs_diff_eq!(hi.r2_x, 0.78, epsilon = 5e-3);
        assert_eq!(hi.p90, 10.0);
        assert_eq!(hi.mse_full, 0.0);

        let lo = ground_truth(&PopulationSpec::with_r_squared(0.2)).unwrap();
        assert_abs_diff_eq!(lo.sigma, 1.039, epsilon = 5e-4);
        assert_abs_diff_eq!(lo.rho, 0.481, epsilon = 5e-4);
        assert_abs_diff_eq!(lo.gamma, 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(lo.r2_y, 0.26, epsilon = 5e-3);
        assert_abs_diff_eq!(lo.delta, 0.33, epsilon = 5e-3);
        assert_abs_diff_eq!(lo.r2_x, 0.35, epsilon = 5e-3);
    }

    #[test]
    fn generated_population_matches_closed_form_moments() {
        let mut s = make_stream(SeedSpec::new(123, 1));
        let hi = generate_population(&PopulationSpec::with_r_squared(0.8), &mut s).unwrap();
        let n = hi.len() as f64;
        let m = hi.y.iter().sum::<f64>() / n;
        let sd = (hi.y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(sd > 1.14 && sd < 1.16, "sd {sd}");
        let r12 = corr(&hi.x1, &hi.x2);
        assert!(r12 > 0.495 && r12 < 0.505, "corr {r12}");

        let lo = generate_population(&PopulationSpec::with_r_squared(0.2), &mut s).unwrap();
        let r = corr(&lo.y, &lo.x1);
        assert!(r > 0.47 && r < 0.49, "corr {r}");
        let r12 = corr(&lo.x1, &lo.x2);
        assert!(r12 > 0.495 && r12 < 0.505, "corr {r12}");
    }

    #[test]
    fn sample_rows_come_from_population() {
        let spec = PopulationSpec {
            size: 5000,
            ..Default::default()
        };
        let mut s = make_stream(SeedSpec::new(3, 3));
        let pop = generate_population(&spec, &mut s).unwrap();
        let sample = draw_sample(&pop, 1000, &mut s).unwrap();
        assert_eq!(sample.len(), 1000);
        let mut keys: Vec<u64> = pop.y.iter().map(|v| v.to_bits()).collect();
        keys.sort_unstable();
        assert!(sample
            .y
            .iter()
            .all(|v| keys.binary_search(&v.to_bits()).is_ok()));

        let all = draw_sample(&pop, pop.len(), &mut s).unwrap();
        let mut a: Vec<u64> = all.x1.iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = pop.x1.iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);

        assert!(draw_sample(&pop, 5001, &mut s).is_err());
    }

    #[test]
    fn sample_mean_within_sampling_bounds() {
        let spec = PopulationSpec {
            size: 200_000,
            ..Default::default()
        };
        let mut s = make_stream(SeedSpec::new(9, 0));
        let pop = generate_population(&spec, &mut s).unwrap();
        let pop_mean = pop.x1.iter().sum::<f64>() / pop.len() as f64;
        for _ in 0..20 {
            let sample = draw_sample(&pop, 1000, &mut s).unwrap();
            let m = sample.x1.iter().sum::<f64>() / 1000.0;
            assert!((m - pop_mean).abs() < 4.0 / 1000f64.sqrt());
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let spec = PopulationSpec {
            size: 50,
            ..Default::default()
        };
        let mut s = make_stream(SeedSpec::new(1, 1));
        let d = generate_population(&spec, &mut s).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        assert!(Dataset::read_csv("a,b,c\n1,2,3\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("x1,x2,y\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn mismatched_columns_rejected() {
        assert!(Dataset::new(vec![1.0], vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(Dataset::new(vec![f64::NAN], vec![1.0], vec![1.0]).is_err());
    }
}
