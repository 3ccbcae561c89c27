//! Forward simulation from the model for validation runs.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{build_weight_matrix, columns as col, CrashDataset, PredictorColumn, SpatialWeights, DEFAULT_K_STAR};
use crate::gibbs::{chain_seed, draw_nb};
use crate::mess::exp_action;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnDist {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    Bernoulli { p: f64 },
    /// `1[source < cut]`.
    Below { source: String, cut: f64 },
    /// `1[source <= cut]`.
    AtMost { source: String, cut: f64 },
    /// `ln(scale * source)`.
    Log { source: String, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub dist: ColumnDist,
}

impl ColumnSpec {
    pub fn new(name: &str, dist: ColumnDist) -> Self {
        ColumnSpec { name: name.to_string(), dist }
    }
}

/// Nonlinear part `g(X)` added to the link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkShape {
    Linear,
    /// `height * 1[x > cut]`.
    Step { column: String, cut: f64, height: f64 },
    /// `height * 1[a > cut_a and b > cut_b]`.
    StepInteraction { a: String, cut_a: f64, b: String, cut_b: f64, height: f64 },
    /// `scale * (10 sin(pi x1 x2) + 20 (x3 - 1/2)^2 + 10 x4 + 5 x5 - 14.4)`;
    /// the offset centres the term for uniform inputs on `[0, 1]`.
    FriedmanLike { columns: Vec<String>, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_sites: usize,
    pub n_facilities: usize,
    pub columns: Vec<ColumnSpec>,
    /// Columns of the linear part; `gamma_true[0]` is the intercept and the
    /// remaining entries multiply the raw column values.
    pub f_columns: Vec<String>,
    pub gamma_true: Vec<f64>,
    pub link: LinkShape,
    pub tau: f64,
    pub sigma2: f64,
    pub r: f64,
    pub k_star: usize,
    pub year: i32,
    /// Drives predictors and the spatial effect.
    pub seed: u64,
    /// Drives the counts; defaults to `seed`. Keeping `seed` and varying this
    /// gives several observation years of the same network.
    pub count_seed: Option<u64>,
}

impl SynthConfig {
    pub const DEFAULT_SITES: usize = 200;

    /// Columns with moments loosely matching a highway network sample.
    pub fn default_columns() -> Vec<ColumnSpec> {
        use ColumnDist::*;
        vec![
            ColumnSpec::new(col::INTERSTATE, Bernoulli { p: 0.45 }),
            ColumnSpec::new(col::EXURBAN, Bernoulli { p: 0.27 }),
            ColumnSpec::new(col::ASPHALT_PAVEMENT, Bernoulli { p: 0.17 }),
            ColumnSpec::new(col::ASPHALT_SHOULDER, Bernoulli { p: 0.60 }),
            ColumnSpec::new(col::TOTAL_ROAD_WIDTH, Normal { mean: 54.51, sd: 15.17 }),
            ColumnSpec::new(col::LEFT_SHOULDER_WIDTH, Normal { mean: 8.61, sd: 2.78 }),
            ColumnSpec::new(col::RIGHT_SHOULDER_WIDTH, Normal { mean: 9.02, sd: 2.31 }),
            ColumnSpec::new(col::LEFT_SHOULDER_LT_10FT, Below { source: col::LEFT_SHOULDER_WIDTH.into(), cut: 10.0 }),
            ColumnSpec::new(col::RIGHT_SHOULDER_LT_10FT, Below { source: col::RIGHT_SHOULDER_WIDTH.into(), cut: 10.0 }),
            ColumnSpec::new(col::ROAD_QUALITY_INDEX, Normal { mean: 35.40, sd: 20.11 }),
            ColumnSpec::new(col::ROAD_QUALITY_LE_45, AtMost { source: col::ROAD_QUALITY_INDEX.into(), cut: 45.0 }),
            ColumnSpec::new(col::ROAD_COMFORT_INDEX, Normal { mean: 34.48, sd: 5.70 }),
            ColumnSpec::new(col::ROAD_STRUCTURAL_INDEX, Normal { mean: 41.80, sd: 14.95 }),
            ColumnSpec::new(col::ROAD_SURFACE_INDEX, Normal { mean: 0.61, sd: 1.27 }),
            ColumnSpec::new(col::SPEED_LIMIT, Normal { mean: 61.17, sd: 5.05 }),
            ColumnSpec::new(col::THROUGH_LANES, Normal { mean: 3.13, sd: 0.99 }),
            ColumnSpec::new(col::ROAD_PROFILE_AVG, Normal { mean: 117.45, sd: 35.76 }),
            ColumnSpec::new(col::ROAD_PROFILE_LEFT, Normal { mean: 117.15, sd: 35.11 }),
            ColumnSpec::new(col::ROAD_PROFILE_RIGHT, Normal { mean: 117.88, sd: 37.55 }),
            ColumnSpec::new(col::AADT_PER_LANE, Uniform { low: 0.1, high: 3.0 }),
            ColumnSpec::new(col::LOG_AADT_PER_LANE, Log { source: col::AADT_PER_LANE.into(), scale: 1e4 }),
            ColumnSpec::new(col::TRUCK_PCT, Normal { mean: 10.49, sd: 6.73 }),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::InvalidParameter("at least two sites are required".into()));
        }
        if self.n_facilities == 0 || self.n_facilities > self.n_sites {
            return Err(Error::InvalidParameter(format!("facility count {} must lie in 1..={}", self.n_facilities, self.n_sites)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) || !(self.r > 0.0 && self.r.is_finite()) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter("sigma2 and r must be positive and tau finite".into()));
        }
        if self.gamma_true.len() != self.f_columns.len() + 1 {
            return Err(Error::Dimension(format!("{} coefficients for {} linear columns plus intercept", self.gamma_true.len(), self.f_columns.len())));
        }
        if self.k_star == 0 {
            return Err(Error::InvalidParameter("k_star must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sites: Self::DEFAULT_SITES,
            n_facilities: 4,
            columns: Self::default_columns(),
            f_columns: vec![col::INTERSTATE.into(), col::LOG_AADT_PER_LANE.into(), col::TRUCK_PCT.into()],
            gamma_true: vec![-3.5, 0.3, 0.6, 0.02],
            link: LinkShape::Linear,
            tau: -1.5,
            sigma2: 0.25,
            r: 1.5,
            k_star: DEFAULT_K_STAR,
            year: 2010,
            seed: 1,
            count_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub gamma: Vec<f64>,
    pub f_columns: Vec<String>,
    pub link: LinkShape,
    pub tau: f64,
    pub sigma2: f64,
    pub r: f64,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub g: Vec<f64>,
    /// `r exp(psi)`.
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: CrashDataset,
    pub weights: SpatialWeights,
    pub truth: SynthTruth,
    /// First-order adjacency as segment-id pairs.
    pub edges: Vec<(i64, i64)>,
}

fn lookup<'a>(cols: &'a [PredictorColumn], name: &str) -> Result<&'a [f64]> {
    cols.iter().find(|c| c.name == name).map(|c| c.values.as_slice()).ok_or_else(|| Error::MissingColumn(name.into()))
}

fn draw_columns(specs: &[ColumnSpec], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PredictorColumn>> {
    let mut out: Vec<PredictorColumn> = Vec::with_capacity(specs.len());
    let bad = |name: &str| Error::InvalidParameter(format!("column `{name}` has an invalid distribution"));
    for spec in specs {
        let values: Vec<f64> = match &spec.dist {
            ColumnDist::Normal { mean, sd } => {
                let d = Normal::new(*mean, *sd).map_err(|_| bad(&spec.name))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            ColumnDist::Uniform { low, high } => {
                let d = Uniform::new(*low, *high).map_err(|_| bad(&spec.name))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            ColumnDist::Bernoulli { p } => {
                let d = Bernoulli::new(*p).map_err(|_| bad(&spec.name))?;
                (0..n).map(|_| if d.sample(rng) { 1.0 } else { 0.0 }).collect()
            }
            ColumnDist::Below { source, cut } => lookup(&out, source)?.iter().map(|&v| if v < *cut { 1.0 } else { 0.0 }).collect(),
            ColumnDist::AtMost { source, cut } => lookup(&out, source)?.iter().map(|&v| if v <= *cut { 1.0 } else { 0.0 }).collect(),
            ColumnDist::Log { source, scale } => {
                let v: Vec<f64> = lookup(&out, source)?.iter().map(|&v| libm::log(scale * v)).collect();
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(bad(&spec.name));
                }
                v
            }
        };
        out.push(PredictorColumn { name: spec.name.clone(), values });
    }
    Ok(out)
}

fn link_values(link: &LinkShape, cols: &[PredictorColumn], n: usize) -> Result<Vec<f64>> {
    Ok(match link {
        LinkShape::Linear => vec![0.0; n],
        LinkShape::Step { column, cut, height } => lookup(cols, column)?.iter().map(|&v| if v > *cut { *height } else { 0.0 }).collect(),
        LinkShape::StepInteraction { a, cut_a, b, cut_b, height } => {
            let (xa, xb) = (lookup(cols, a)?, lookup(cols, b)?);
            (0..n).map(|i| if xa[i] > *cut_a && xb[i] > *cut_b { *height } else { 0.0 }).collect()
        }
        LinkShape::FriedmanLike { columns, scale } => {
            if columns.len() != 5 {
                return Err(Error::InvalidParameter("the Friedman-like link needs five columns".into()));
            }
            let x: Vec<&[f64]> = columns.iter().map(|c| lookup(cols, c)).collect::<Result<_>>()?;
            (0..n)
                .map(|i| {
                    let v = 10.0 * libm::sin(core::f64::consts::PI * x[0][i] * x[1][i]) + 20.0 * (x[2][i] - 0.5) * (x[2][i] - 0.5) + 10.0 * x[3][i] + 5.0 * x[4][i]
                        - 14.4;
                    scale * v
                })
                .collect()
        }
    })
}

/// Contiguous blocks of sites per facility, the first `n % f` one longer.
fn layout(n: usize, f: usize) -> (Vec<i64>, Vec<i64>) {
    let mut facility = Vec::with_capacity(n);
    let mut position = Vec::with_capacity(n);
    for k in 0..f {
        let len = n / f + usize::from(k < n % f);
        for p in 0..len {
            facility.push(k as i64 + 1);
            position.push(p as i64);
        }
    }
    (facility, position)
}

/// Draws predictors, `phi = exp(-tau W) eps`, the link and the counts.
pub fn generate_dataset(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let n = config.n_sites;
    let mut rng = ChaCha8Rng::seed_from_u64(chain_seed(config.seed, 0));
    let columns = draw_columns(&config.columns, n, &mut rng)?;
    let (facility_ids, positions) = layout(n, config.n_facilities);
    let segment_ids: Vec<i64> = (1..=n as i64).collect();
    let mut edges = Vec::new();
    for i in 1..n {
        if facility_ids[i] == facility_ids[i - 1] {
            edges.push((segment_ids[i - 1], segment_ids[i]));
        }
    }

    // Placeholder counts until the link is known; only the layout matters for W.
    let skeleton = CrashDataset::new(config.year, segment_ids.clone(), vec![0; n], facility_ids.clone(), positions.clone(), Vec::new())?;
    let weights = build_weight_matrix(&skeleton, config.k_star, None)?;

    let normal = Normal::new(0.0, libm::sqrt(config.sigma2)).map_err(|_| Error::InvalidParameter("sigma2".into()))?;
    let eps: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let phi = exp_action(-config.tau, weights.sparse(), &eps);

    let g = link_values(&config.link, &columns, n)?;
    let f_values: Vec<&[f64]> = config.f_columns.iter().map(|c| lookup(&columns, c)).collect::<Result<_>>()?;
    let psi: Vec<f64> = (0..n)
        .map(|i| config.gamma_true[0] + f_values.iter().zip(&config.gamma_true[1..]).map(|(x, b)| x[i] * b).sum::<f64>() + g[i] + phi[i])
        .collect();
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("synthetic link"));
    }

    let mut count_rng = ChaCha8Rng::seed_from_u64(chain_seed(config.count_seed.unwrap_or(config.seed), 1));
    let counts = psi.iter().map(|&p| draw_nb(config.r, p, &mut count_rng)).collect::<Result<Vec<_>>>()?;
    let lambda = psi.iter().map(|&p| config.r * libm::exp(p)).collect();
    let dataset = CrashDataset::new(config.year, segment_ids, counts, facility_ids, positions, columns)?;
    let truth = SynthTruth {
        gamma: config.gamma_true.clone(),
        f_columns: config.f_columns.clone(),
        link: config.link.clone(),
        tau: config.tau,
        sigma2: config.sigma2,
        r: config.r,
        psi,
        phi,
        g,
        lambda,
    };
    Ok(SynthOutput { dataset, weights, truth, edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{mean, sample_variance};

    fn bare(n: usize) -> SynthConfig {
        SynthConfig {
            n_sites: n,
            n_facilities: 5,
            columns: vec![ColumnSpec::new("x1", ColumnDist::Uniform { low: 0.0, high: 1.0 })],
            f_columns: vec![],
            gamma_true: vec![0.0],
            link: LinkShape::Linear,
            tau: 0.0,
            sigma2: 1e-12,
            r: 1.0,
            k_star: 3,
            year: 2008,
            seed: 3,
            count_seed: None,
        }
    }

    #[test]
    fn defaults_generate() {
        let out = generate_dataset(&SynthConfig::default()).unwrap();
        assert_eq!(out.dataset.len(), 200);
        assert_eq!(out.dataset.columns().len(), 22);
        assert_eq!(out.edges.len(), 196);
        let y: Vec<f64> = out.dataset.counts().iter().map(|&v| v as f64).collect();
        assert!(mean(&y) > 2.0);
    }

    #[test]
    fn same_seed_same_data() {
        let c = SynthConfig::default();
        let a = generate_dataset(&c).unwrap();
        let b = generate_dataset(&c).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let other_year = generate_dataset(&SynthConfig { count_seed: Some(99), ..c }).unwrap();
        assert_eq!(other_year.dataset.columns(), a.dataset.columns());
        assert_eq!(other_year.truth.psi, a.truth.psi);
        assert_ne!(other_year.dataset.counts(), a.dataset.counts());
    }

    #[test]
    fn tau_zero_phi_is_white_noise() {
        let c = SynthConfig { n_sites: 4000, sigma2: 0.3, ..bare(4000) };
        let out = generate_dataset(&c).unwrap();
        let v = sample_variance(&out.truth.phi);
        // sd of a sample variance is sigma^2 sqrt(2 / (n - 1))
        assert!((v - 0.3).abs() < 4.0 * 0.3 * libm::sqrt(2.0 / 3999.0));
    }

    #[test]
    fn unit_mean_counts() {
        let out = generate_dataset(&bare(4000)).unwrap();
        let y: Vec<f64> = out.dataset.counts().iter().map(|&v| v as f64).collect();
        // NB(1, 1/2): variance 2.
        assert!((mean(&y) - 1.0).abs() < 4.0 * libm::sqrt(2.0 / 4000.0));
        assert!(sample_variance(&y) / mean(&y) > 1.0);
    }

    #[test]
    fn step_link_mean_ratio() {
        let c = SynthConfig { link: LinkShape::Step { column: "x1".into(), cut: 0.5, height: 2.0 }, ..bare(4000) };
        let out = generate_dataset(&c).unwrap();
        let x = out.dataset.column("x1").unwrap();
        let (mut hi, mut lo) = (Vec::new(), Vec::new());
        for (i, &y) in out.dataset.counts().iter().enumerate() {
            if x[i] > 0.5 { hi.push(y as f64) } else { lo.push(y as f64) }
        }
        let ratio = mean(&hi) / mean(&lo);
        let e2 = libm::exp(2.0);
        assert!((ratio - e2).abs() < 0.15 * e2, "ratio {ratio}");
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_dataset(&SynthConfig { n_sites: 1, n_facilities: 1, ..bare(1) }).is_err());
        assert!(generate_dataset(&SynthConfig { r: 0.0, ..bare(10) }).is_err());
        assert!(generate_dataset(&SynthConfig { gamma_true: vec![], ..bare(10) }).is_err());
        let missing = SynthConfig { link: LinkShape::Step { column: "nope".into(), cut: 0.0, height: 1.0 }, ..bare(10) };
        assert!(matches!(generate_dataset(&missing), Err(Error::MissingColumn(_))));
    }
}
