//! Flat TOML config file mirroring `ExperimentConfig`.
//!
//! ```toml
//! pop_size = 100000
//! n_sample = 1000
//! t_rep = 20
//! base_seed = 123
//! threads = 4
//! r_squared = [0.8, 0.2]
//! mechanisms = ["mcar", "mar"]
//! prop = 0.5
//! methods = ["predict", "draw"]
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use noisyimpute::{ExperimentConfig, ImputationMethod, MissingnessSpec, PopulationSpec};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub pop_size: Option<usize>,
    pub n_sample: Option<usize>,
    pub t_rep: Option<usize>,
    pub base_seed: Option<u64>,
    pub threads: Option<usize>,
    pub r_squared: Option<Vec<f64>>,
    pub mechanisms: Option<Vec<String>>,
    pub prop: Option<f64>,
    pub methods: Option<Vec<String>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies the file's values on top of `cfg`.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = self.pop_size {
            cfg.pop_size = v;
        }
        if let Some(v) = self.n_sample {
            cfg.n_sample = v;
        }
        if let Some(v) = self.t_rep {
            cfg.t_rep = v;
        }
        if let Some(v) = self.base_seed {
            cfg.base_seed = v;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if let Some(r2) = &self.r_squared {
            cfg.populations = r2
                .iter()
                .map(|&r| PopulationSpec::with_r_squared(r))
                .collect();
        }
        let prop = self.prop.unwrap_or(0.5);
        if let Some(mechs) = &self.mechanisms {
            cfg.mechanisms = mechs
                .iter()
                .map(|m| parse_mechanism(m, prop))
                .collect::<Result<_>>()?;
        } else if self.prop.is_some() {
            for m in &mut cfg.mechanisms {
                m.prop = prop;
            }
        }
        if let Some(methods) = &self.methods {
            cfg.methods = methods
                .iter()
                .map(|m| parse_method(m))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }
}

pub fn parse_mechanism(name: &str, prop: f64) -> Result<MissingnessSpec> {
    match name.to_ascii_lowercase().as_str() {
        "mcar" => Ok(MissingnessSpec::mcar(prop)),
        "mar" | "mar_right" => Ok(MissingnessSpec::mar_right(prop)),
        other => bail!("unknown mechanism {other:?} (expected mcar or mar)"),
    }
}

pub fn parse_method(name: &str) -> Result<ImputationMethod> {
    Ok(match name.to_ascii_lowercase().as_str() {
        "predict" => ImputationMethod::Predict,
        "draw" => ImputationMethod::draw(),
        "draw_bayes" => ImputationMethod::Draw { bayes: true },
        "pmm" => ImputationMethod::pmm(),
        "softimpute" => ImputationMethod::softimpute(),
        "forest" => ImputationMethod::forest(),
        other => bail!("unknown method {other:?} (expected predict, draw, draw_bayes, pmm, softimpute or forest)"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn applies_every_field() {
        let file: FileConfig = toml::from_str(
            r#"
            pop_size = 5000
            n_sample = 100
            t_rep = 3
            base_seed = 9
            threads = 2
            r_squared = [0.5]
            mechanisms = ["MAR"]
            prop = 0.3
            methods = ["pmm", "forest"]
            "#,
        )
        .unwrap();
        let mut cfg = ExperimentConfig::default();
        file.apply(&mut cfg).unwrap();
        assert_eq!(
            (
                cfg.pop_size,
                cfg.n_sample,
                cfg.t_rep,
                cfg.base_seed,
                cfg.threads
            ),
            (5000, 100, 3, 9, Some(2))
        );
        assert_eq!(cfg.populations, vec![PopulationSpec::with_r_squared(0.5)]);
        assert_eq!(cfg.mechanisms, vec![MissingnessSpec::mar_right(0.3)]);
        assert_eq!(
            cfg.methods,
            vec![ImputationMethod::pmm(), ImputationMethod::forest()]
        );
    }

    #[test]
    fn rejects_unknown_keys_and_names() {
        assert!(toml::from_str::<FileConfig>("popsize = 3").is_err());
        let file = FileConfig {
            methods: Some(vec!["mean".into()]),
            ..Default::default()
        };
        assert!(file.apply(&mut ExperimentConfig::default()).is_err());
    }
}
