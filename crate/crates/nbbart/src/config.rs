//! Run configuration: a TOML file whose values command-line flags override.
//!
//! ```toml
//! [data]
//! input = "data.csv"
//! adjacency = "adjacency.csv"
//! year = 2010
//! k_star = 3
//!
//! [model]
//! variant = "nb-bart-ii"
//!
//! [chains]
//! chains = 4
//! iters = 10000
//! burn_in = 5000
//! thin = 2
//! seed = 7
//!
//! [priors]
//! gamma_variance = 100.0
//!
//! [ranking]
//! alpha = 0.05
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use nbbart_core::data::{ModelVariant, PredictorSpace, SpaceId, Standardize, DEFAULT_K_STAR};
use nbbart_core::gibbs::{ChainConfig, Hyperparameters, TreeSettings};
use nbbart_core::synth::{ColumnSpec, LinkShape, SynthConfig};
use nbbart_core::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub year: Option<i32>,
    pub k_star: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Option<String>,
    /// Linear and tree columns of a `custom` variant.
    pub f_columns: Option<Vec<String>>,
    pub x_columns: Option<Vec<String>>,
    pub allow_overlap: Option<bool>,
    pub standardize_linear: Option<bool>,
    pub standardize_trees: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub chains: Option<usize>,
    pub iters: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub parallel: Option<bool>,
    pub keep_trees: Option<bool>,
    pub pg_terms: Option<usize>,
    pub tau_step: Option<f64>,
    pub adapt_interval: Option<usize>,
    pub target_acceptance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSection {
    pub m: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVector {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVector {
    fn expand(&self, p: usize, what: &str) -> AppResult<Vec<f64>> {
        match self {
            ScalarOrVector::Scalar(v) => Ok(vec![*v; p]),
            ScalarOrVector::Vector(v) if v.len() == p => Ok(v.clone()),
            ScalarOrVector::Vector(v) => Err(AppError::Config(format!("{what} has {} entries, the model has {p} coefficients", v.len()))),
        }
    }
}

/// Prior overrides. `gamma_variance` sets a diagonal prior covariance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub gamma_mean: Option<ScalarOrVector>,
    pub gamma_variance: Option<ScalarOrVector>,
    pub tau_mean: Option<f64>,
    pub tau_variance: Option<f64>,
    pub b_sigma2: Option<f64>,
    pub c_sigma2: Option<f64>,
    pub r0: Option<f64>,
    pub b0: Option<f64>,
    pub c0: Option<f64>,
}

impl PriorSection {
    pub fn resolve(&self, p: usize) -> AppResult<Hyperparameters> {
        let mut h = Hyperparameters::default_for(p);
        if let Some(m) = &self.gamma_mean {
            h.zeta_gamma = DVector::from_vec(m.expand(p, "gamma_mean")?);
        }
        if let Some(v) = &self.gamma_variance {
            h.delta_gamma = DMatrix::from_diagonal(&DVector::from_vec(v.expand(p, "gamma_variance")?));
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut h.zeta_tau, self.tau_mean);
        set(&mut h.sigma2_tau, self.tau_variance);
        set(&mut h.b_sigma2, self.b_sigma2);
        set(&mut h.c_sigma2, self.c_sigma2);
        set(&mut h.r0, self.r0);
        set(&mut h.b0, self.b0);
        set(&mut h.c0, self.c0);
        h.validate(p).map_err(AppError::config)?;
        Ok(h)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingSection {
    pub alpha: Option<f64>,
    /// Linear predictors of the empirical-Bayes baseline.
    pub eb_columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Overrides of the default synthetic configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_sites: Option<usize>,
    pub n_facilities: Option<usize>,
    pub columns: Option<Vec<ColumnSpec>>,
    pub f_columns: Option<Vec<String>>,
    pub gamma_true: Option<Vec<f64>>,
    pub link: Option<LinkShape>,
    pub tau: Option<f64>,
    pub sigma2: Option<f64>,
    pub r: Option<f64>,
    pub k_star: Option<usize>,
    pub year: Option<i32>,
    pub seed: Option<u64>,
    pub count_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub chains: ChainSection,
    pub trees: TreeSection,
    pub priors: PriorSection,
    pub ranking: RankingSection,
    pub output: OutputSection,
    pub simulate: SimulateSection,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> AppResult<Self> {
        toml::from_str(text).map_err(AppError::config)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(AppError::io(path))?;
        Self::from_toml(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
    }
}

/// Values given on the command line; `Some` wins over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub chains: Option<usize>,
    pub iters: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub alpha: Option<f64>,
    pub model: Option<String>,
    pub data: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub year: Option<i32>,
}

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_OUT: &str = "out";

/// Fully resolved settings shared by all commands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub year: Option<i32>,
    pub k_star: usize,
    pub variant: ModelVariant,
    pub space: PredictorSpace,
    pub standardize: Standardize,
    pub n_chains: usize,
    pub parallel: bool,
    pub chain: ChainConfig,
    pub priors: PriorSection,
    pub alpha: f64,
    pub eb_columns: Option<Vec<String>>,
    pub out: PathBuf,
    pub simulate: SynthConfig,
}

impl RunConfig {
    pub fn resolve(file: FileConfig, flags: Overrides) -> AppResult<Self> {
        let model_name = flags.model.or(file.model.variant).unwrap_or_else(|| ModelVariant::NbBartII.label().into());
        let variant = ModelVariant::from_str(&model_name).map_err(AppError::config)?;
        let space = match variant.predictor_space() {
            Some(space) => {
                if file.model.f_columns.is_some() || file.model.x_columns.is_some() {
                    return Err(AppError::Config(format!("column lists require variant `custom`, not `{variant}`")));
                }
                space
            }
            None => {
                let f = file.model.f_columns.unwrap_or_default();
                let x = file.model.x_columns.unwrap_or_default();
                PredictorSpace::new(f, x, SpaceId::Custom, file.model.allow_overlap.unwrap_or(false)).map_err(AppError::config)?
            }
        };
        let defaults = Standardize::default();
        let standardize = Standardize {
            linear: file.model.standardize_linear.unwrap_or(defaults.linear),
            trees: file.model.standardize_trees.unwrap_or(defaults.trees),
        };

        let c = &file.chains;
        let base = ChainConfig::default();
        let tree_defaults = TreeSettings::default();
        let chain = ChainConfig {
            n_iter: flags.iters.or(c.iters).unwrap_or(base.n_iter),
            burn_in: flags.burn_in.or(c.burn_in).unwrap_or(base.burn_in),
            thin: flags.thin.or(c.thin).unwrap_or(base.thin),
            seed: flags.seed.or(c.seed).unwrap_or(base.seed),
            bart: !space.x_columns.is_empty(),
            trees: TreeSettings {
                m: file.trees.m.unwrap_or(tree_defaults.m),
                alpha: file.trees.alpha.unwrap_or(tree_defaults.alpha),
                beta: file.trees.beta.unwrap_or(tree_defaults.beta),
                k: file.trees.k.unwrap_or(tree_defaults.k),
            },
            keep_trees: c.keep_trees.unwrap_or(base.keep_trees),
            pg_terms: c.pg_terms.unwrap_or(base.pg_terms),
            tau_step: c.tau_step.unwrap_or(base.tau_step),
            adapt_interval: c.adapt_interval.unwrap_or(base.adapt_interval),
            target_acceptance: c.target_acceptance.unwrap_or(base.target_acceptance),
        };
        let n_chains = flags.chains.or(c.chains).unwrap_or(ChainConfig::DEFAULT_CHAINS);

        let s = file.simulate;
        let d = SynthConfig::default();
        let simulate = SynthConfig {
            n_sites: s.n_sites.unwrap_or(d.n_sites),
            n_facilities: s.n_facilities.unwrap_or(d.n_facilities),
            columns: s.columns.unwrap_or(d.columns),
            f_columns: s.f_columns.unwrap_or(d.f_columns),
            gamma_true: s.gamma_true.unwrap_or(d.gamma_true),
            link: s.link.unwrap_or(d.link),
            tau: s.tau.unwrap_or(d.tau),
            sigma2: s.sigma2.unwrap_or(d.sigma2),
            r: s.r.unwrap_or(d.r),
            k_star: s.k_star.unwrap_or(d.k_star),
            year: s.year.unwrap_or(d.year),
            seed: flags.seed.or(s.seed).unwrap_or(d.seed),
            count_seed: s.count_seed,
        };

        let config = RunConfig {
            data: flags.data.or(file.data.input),
            adjacency: flags.adjacency.or(file.data.adjacency),
            year: flags.year.or(file.data.year),
            k_star: file.data.k_star.unwrap_or(DEFAULT_K_STAR),
            variant,
            space,
            standardize,
            n_chains,
            parallel: c.parallel.unwrap_or(true),
            chain,
            priors: file.priors,
            alpha: flags.alpha.or(file.ranking.alpha).unwrap_or(DEFAULT_ALPHA),
            eb_columns: file.ranking.eb_columns,
            out: flags.out.or(file.output.dir).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            simulate,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> AppResult<()> {
        let c = &self.chain;
        if c.burn_in >= c.n_iter {
            return Err(AppError::Config(format!("burn-in ({}) must be smaller than iterations ({})", c.burn_in, c.n_iter)));
        }
        if c.thin == 0 {
            return Err(AppError::Config("thinning must be at least 1".into()));
        }
        if self.n_chains == 0 {
            return Err(AppError::Config("at least one chain is required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AppError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.k_star == 0 {
            return Err(AppError::Config("k_star must be at least 1".into()));
        }
        if c.tau_step <= 0.0 || !(c.target_acceptance > 0.0 && c.target_acceptance < 1.0) || c.adapt_interval == 0 || c.pg_terms == 0 {
            return Err(AppError::Config("tau step, adaptation interval, target acceptance and PG terms must be positive".into()));
        }
        self.simulate.validate().map_err(AppError::config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_standard_run_length() {
        let c = RunConfig::resolve(FileConfig::default(), Overrides::default()).unwrap();
        assert_eq!((c.n_chains, c.chain.n_iter, c.chain.burn_in, c.chain.thin), (4, 10_000, 5_000, 2));
        assert_eq!(c.chain.retained(), 2_500);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.variant, ModelVariant::NbBartII);
        assert!(c.chain.bart);
    }

    #[test]
    fn flags_win_over_the_file() {
        let file = FileConfig::from_toml("[chains]\niters = 300\nburn_in = 100\nseed = 5\n[ranking]\nalpha = 0.1\n").unwrap();
        let flags = Overrides { iters: Some(50), burn_in: Some(10), alpha: Some(0.2), ..Overrides::default() };
        let c = RunConfig::resolve(file, flags).unwrap();
        assert_eq!((c.chain.n_iter, c.chain.burn_in, c.chain.seed, c.alpha), (50, 10, 5, 0.2));
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        let bad = |toml: &str, flags: Overrides| {
            let e = FileConfig::from_toml(toml).and_then(|f| RunConfig::resolve(f, flags)).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{e}");
        };
        bad("[chains]\niters = 100\nburn_in = 100\n", Overrides::default());
        bad("", Overrides { thin: Some(0), ..Overrides::default() });
        bad("", Overrides { chains: Some(0), ..Overrides::default() });
        bad("", Overrides { alpha: Some(1.0), ..Overrides::default() });
        bad("", Overrides { model: Some("nb-random".into()), ..Overrides::default() });
        bad("[chains]\nunknown = 1\n", Overrides::default());
        bad("[model]\nvariant = \"nb-fixed\"\nf_columns = [\"a\"]\n", Overrides::default());
    }

    #[test]
    fn custom_space_and_priors() {
        let file = FileConfig::from_toml(
            "[model]\nvariant = \"custom\"\nf_columns = [\"a\"]\nx_columns = [\"b\", \"c\"]\n[priors]\ngamma_mean = [1.0, 2.0]\ngamma_variance = 4.0\nr0 = 2.0\n",
        )
        .unwrap();
        let c = RunConfig::resolve(file, Overrides::default()).unwrap();
        assert_eq!(c.space.f_columns, vec!["a"]);
        assert_eq!(c.space.x_columns, vec!["b", "c"]);
        let h = c.priors.resolve(2).unwrap();
        assert_eq!(h.zeta_gamma.as_slice(), &[1.0, 2.0]);
        assert_eq!(h.delta_gamma[(1, 1)], 4.0);
        assert_eq!(h.delta_gamma[(0, 1)], 0.0);
        assert_eq!(h.r0, 2.0);
        assert!(c.priors.resolve(3).is_err());
    }
}
