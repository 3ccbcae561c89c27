//! Hot-spot identification and the temporal consistency tests.
//!
//! Sites are ranked in descending order of a score; ties go to the smaller
//! site index. The hot-spot cutoff for risk level `alpha` over `N` sites is
//! `m = ceil(alpha N)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::CrashDataset;
use crate::diagnostics::nb_log_pmf;
use crate::gibbs::PosteriorDraws;
use crate::math::{digamma, logistic, mean, sample_variance, softplus};
use crate::{Error, Result};

/// `ceil(alpha n)`, clamped to `[1, n]`. A tolerance of `1e-9` keeps exact
/// products such as `0.05 * 200` from rounding up.
pub fn cutoff(alpha: f64, n: usize) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n == 0 {
        return Err(Error::NoRows);
    }
    let m = libm::ceil(alpha * n as f64 - 1e-9) as usize;
    Ok(m.clamp(1, n))
}

/// Site indices from most to least hazardous.
pub fn order_by(primary: &[f64], secondary: Option<&[f64]>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..primary.len()).collect();
    idx.sort_by(|&a, &b| {
        let key = primary[b].total_cmp(&primary[a]);
        let key = match (key, secondary) {
            (Ordering::Equal, Some(s)) => s[b].total_cmp(&s[a]),
            (k, _) => k,
        };
        key.then(a.cmp(&b))
    });
    idx
}

/// 1-based rank of every site for a given order.
pub fn ranks_of(order: &[usize]) -> Vec<usize> {
    let mut ranks = vec![0; order.len()];
    for (k, &site) in order.iter().enumerate() {
        ranks[site] = k + 1;
    }
    ranks
}

/// Share of draws in which each site is among the `ceil(alpha N)` largest
/// `lambda` values.
pub fn hotspot_probability(lambda_draws: &[Vec<f64>], alpha: f64) -> Result<Vec<f64>> {
    let first = lambda_draws.first().ok_or(Error::Input("no retained draws".into()))?;
    let n = first.len();
    let m = cutoff(alpha, n)?;
    let mut hits = vec![0usize; n];
    for draw in lambda_draws {
        if draw.len() != n {
            return Err(Error::Dimension("draws disagree on site count".into()));
        }
        for &site in &order_by(draw, None)[..m] {
            hits[site] += 1;
        }
    }
    let d = lambda_draws.len() as f64;
    Ok(hits.into_iter().map(|h| h as f64 / d).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotSet {
    pub period: i32,
    pub alpha: f64,
    pub cutoff: usize,
    /// Members in rank order.
    pub members: Vec<usize>,
    /// 1-based rank of every site.
    pub ranks: Vec<usize>,
    pub scores: Vec<f64>,
}

impl HotspotSet {
    pub fn from_scores(period: i32, alpha: f64, scores: Vec<f64>, secondary: Option<&[f64]>) -> Result<Self> {
        let m = cutoff(alpha, scores.len())?;
        if secondary.is_some_and(|s| s.len() != scores.len()) {
            return Err(Error::Dimension("secondary scores have the wrong length".into()));
        }
        let order = order_by(&scores, secondary);
        Ok(HotspotSet { period, alpha, cutoff: m, members: order[..m].to_vec(), ranks: ranks_of(&order), scores })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, site: usize) -> bool {
        self.ranks.get(site).is_some_and(|&r| r <= self.cutoff)
    }
}

/// Ranking by observed counts.
pub fn naive_hotspots(period: i32, counts: &[u64], alpha: f64) -> Result<HotspotSet> {
    HotspotSet::from_scores(period, alpha, counts.iter().map(|&y| y as f64).collect(), None)
}

/// Ranking by posterior top-`m` probability, then posterior mean `lambda`.
pub fn model_hotspots(period: i32, draws: &PosteriorDraws, alpha: f64) -> Result<(HotspotSet, Vec<f64>)> {
    let lambda = draws.lambda_draws();
    let prob = hotspot_probability(&lambda, alpha)?;
    let mean_lambda = draws.posterior_mean_lambda();
    Ok((HotspotSet::from_scores(period, alpha, prob, Some(&mean_lambda))?, mean_lambda))
}

/// Maximum likelihood fit of `y ~ NB(r, logistic(F gamma))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbFit {
    pub gamma: Vec<f64>,
    pub r: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// `log r` ended above [`NEAR_POISSON_LOG_R`], or ran past [`MAX_LOG_R`]
    /// in which case it is fixed there. Either way the fit is a Poisson
    /// regression in all but name.
    pub near_poisson: bool,
    /// Asymptotic standard errors of `(gamma, log r)` from the observed
    /// information; `None` when it is not invertible.
    pub std_errors: Option<Vec<f64>>,
}

pub const MAX_LOG_R: f64 = 30.0;
pub const NEAR_POISSON_LOG_R: f64 = 15.0;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 500;

struct NbObjective<'a> {
    counts: &'a [u64],
    f: &'a DMatrix<f64>,
}

impl NbObjective<'_> {
    /// Log-likelihood and gradient in `(gamma, log r)`.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let p = self.f.ncols();
        let r = libm::exp(theta[p]);
        let mut ll = 0.0;
        let mut grad = vec![0.0; p + 1];
        let dr = digamma(r);
        for (i, &y) in self.counts.iter().enumerate() {
            let psi: f64 = (0..p).map(|j| self.f[(i, j)] * theta[j]).sum();
            ll += nb_log_pmf(y, r, psi);
            let yf = y as f64;
            let d_psi = yf - (yf + r) * logistic(psi);
            for (j, g) in grad.iter_mut().take(p).enumerate() {
                *g += d_psi * self.f[(i, j)];
            }
            grad[p] += r * (digamma(yf + r) - dr - softplus(psi));
        }
        (ll, grad)
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Ascent {
    theta: Vec<f64>,
    value: f64,
    iterations: usize,
    diverged: bool,
}

/// BFGS ascent with Armijo backtracking over the free coordinates. Stops
/// early with `diverged` if `limit(theta)` fires. When the line search
/// stalls at rounding level of the likelihood, Newton steps on the gradient
/// finish the job.
fn bfgs(objective: &dyn Fn(&[f64]) -> (f64, Vec<f64>), start: Vec<f64>, free: &[bool], limit: &dyn Fn(&[f64]) -> bool) -> Result<Ascent> {
    let k = start.len();
    let mask = |g: &mut Vec<f64>| g.iter_mut().zip(free).for_each(|(v, &f)| if !f { *v = 0.0 });
    let mut theta = start;
    let (mut value, mut grad) = objective(&theta);
    mask(&mut grad);
    let mut hinv = DMatrix::<f64>::identity(k, k);
    let mut stalled = 0;
    for it in 0..MAX_ITERATIONS {
        if max_norm(&grad) < GRADIENT_TOLERANCE {
            return Ok(Ascent { theta, value, iterations: it, diverged: false });
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("likelihood"));
        }
        if stalled >= 3 {
            return newton_polish(objective, theta, free, it);
        }
        let g = DVector::from_column_slice(&grad);
        let mut dir = &hinv * &g;
        if dir.dot(&g) <= 0.0 {
            hinv = DMatrix::identity(k, k);
            dir = g.clone();
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let (next, next_value, mut next_grad) = loop {
            let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
            let (v, gr) = objective(&cand);
            if v.is_finite() && v >= value + 1e-4 * step * slope {
                break (cand, v, gr);
            }
            step *= 0.5;
            if step < 1e-16 {
                return newton_polish(objective, theta, free, it);
            }
        };
        mask(&mut next_grad);
        let s = DVector::from_iterator(k, next.iter().zip(&theta).map(|(a, b)| a - b));
        // Maximizing: curvature pair uses the negated gradient change.
        let yv = DVector::from_iterator(k, grad.iter().zip(&next_grad).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let left = &i - &s * yv.transpose() * rho;
            let right = &i - &yv * s.transpose() * rho;
            hinv = &left * &hinv * &right + &s * s.transpose() * rho;
        }
        stalled = if next_value - value <= 1e-13 * value.abs().max(1.0) { stalled + 1 } else { 0 };
        theta = next;
        value = next_value;
        grad = next_grad;
        if limit(&theta) {
            return Ok(Ascent { theta, value, iterations: it + 1, diverged: true });
        }
    }
    newton_polish(objective, theta, free, MAX_ITERATIONS)
}

/// Hessian of the free block by central differences of the gradient.
fn gradient_jacobian(objective: &dyn Fn(&[f64]) -> (f64, Vec<f64>), theta: &[f64], idx: &[usize]) -> DMatrix<f64> {
    let k = idx.len();
    let mut hess = DMatrix::zeros(k, k);
    for (b, &j) in idx.iter().enumerate() {
        let h = 1e-5 * theta[j].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut down = theta.to_vec();
        up[j] += h;
        down[j] -= h;
        let (_, gu) = objective(&up);
        let (_, gd) = objective(&down);
        for (a, &i) in idx.iter().enumerate() {
            hess[(a, b)] = (gu[i] - gd[i]) / (2.0 * h);
        }
    }
    (&hess + hess.transpose()) * 0.5
}

const NEWTON_STEPS: usize = 25;

/// Newton iterations that accept a step when it shrinks the gradient.
fn newton_polish(objective: &dyn Fn(&[f64]) -> (f64, Vec<f64>), mut theta: Vec<f64>, free: &[bool], iterations: usize) -> Result<Ascent> {
    let idx: Vec<usize> = (0..theta.len()).filter(|&j| free[j]).collect();
    let masked = |t: &[f64]| {
        let (v, g) = objective(t);
        (v, idx.iter().map(|&j| g[j]).collect::<Vec<f64>>())
    };
    let (mut value, mut grad) = masked(&theta);
    for extra in 0..NEWTON_STEPS {
        if max_norm(&grad) < GRADIENT_TOLERANCE {
            return Ok(Ascent { theta, value, iterations: iterations + extra, diverged: false });
        }
        let neg = -gradient_jacobian(objective, &theta, &idx);
        let Some(chol) = neg.cholesky() else { break };
        let dir = chol.solve(&DVector::from_column_slice(&grad));
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-8 {
            let mut cand = theta.clone();
            for (a, &j) in idx.iter().enumerate() {
                cand[j] += step * dir[a];
            }
            let (v, g) = masked(&cand);
            if v.is_finite() && max_norm(&g) < max_norm(&grad) {
                theta = cand;
                value = v;
                grad = g;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if max_norm(&grad) < GRADIENT_TOLERANCE {
        return Ok(Ascent { theta, value, iterations: iterations + NEWTON_STEPS, diverged: false });
    }
    Err(Error::NoConvergence { iterations, gradient_norm: max_norm(&grad) })
}

/// Fits `(gamma, log r)` by BFGS from a method-of-moments start.
pub fn ml_nb_fit(counts: &[u64], f: &DMatrix<f64>) -> Result<NbFit> {
    let (n, p) = f.shape();
    if n == 0 {
        return Err(Error::NoRows);
    }
    if counts.len() != n {
        return Err(Error::Dimension("counts and design disagree".into()));
    }
    if counts.iter().all(|&y| y == 0) {
        return Err(Error::Degenerate("all counts are zero"));
    }
    let ys: Vec<f64> = counts.iter().map(|&y| y as f64).collect();
    let mu = mean(&ys);
    let var = sample_variance(&ys);
    let r0 = if var > mu * 1.0001 { mu * mu / (var - mu) } else { 10.0 };
    // Least-squares projection of the constant log-odds log(mu / r0) onto F.
    let target = DVector::from_element(n, libm::log(mu / r0));
    let ftf = f.transpose() * f + DMatrix::identity(p, p) * 1e-10;
    let g0 = ftf.cholesky().ok_or(Error::NotPositiveDefinite("F^T F"))?.solve(&(f.transpose() * target));
    let mut start: Vec<f64> = g0.iter().copied().collect();
    start.push(libm::log(r0).min(MAX_LOG_R));

    let obj = NbObjective { counts, f };
    let eval = |t: &[f64]| obj.eval(t);
    let all = vec![true; p + 1];
    let past_limit = |t: &[f64]| t[p] > MAX_LOG_R;
    let mut ascent = bfgs(&eval, start, &all, &past_limit)?;
    let near_poisson = ascent.diverged;
    if near_poisson {
        let mut theta = ascent.theta;
        theta[p] = MAX_LOG_R;
        let mut free = all.clone();
        free[p] = false;
        ascent = bfgs(&eval, theta, &free, &|_| false)?;
    }
    let near_poisson = near_poisson || ascent.theta[p] > NEAR_POISSON_LOG_R;
    let std_errors = if near_poisson { None } else { standard_errors(&obj, &ascent.theta) };
    Ok(NbFit {
        gamma: ascent.theta[..p].to_vec(),
        r: libm::exp(ascent.theta[p]),
        log_likelihood: ascent.value,
        iterations: ascent.iterations,
        near_poisson,
        std_errors,
    })
}

/// Square roots of the diagonal of the inverse observed information, with
/// the Hessian taken by central differences of the analytic gradient.
fn standard_errors(obj: &NbObjective<'_>, theta: &[f64]) -> Option<Vec<f64>> {
    let k = theta.len();
    let idx: Vec<usize> = (0..k).collect();
    let information = -gradient_jacobian(&|t: &[f64]| obj.eval(t), theta, &idx);
    let cov = information.cholesky()?.inverse();
    Some((0..k).map(|i| libm::sqrt(cov[(i, i)])).collect())
}

/// `w mu + (1 - w) y` with `w = r / (r + mu)`, evaluated as
/// `mu + mu (y - mu) / (r + mu)`.
pub fn eb_estimate(mu: f64, r: f64, y: f64) -> f64 {
    mu + mu * (y - mu) / (r + mu)
}

/// Empirical-Bayes expected counts with `mu_i = r exp(F_i gamma)`.
pub fn eb_estimates(counts: &[u64], f: &DMatrix<f64>, fit: &NbFit) -> Result<Vec<f64>> {
    if f.ncols() != fit.gamma.len() || f.nrows() != counts.len() {
        return Err(Error::Dimension("fit, design and counts disagree".into()));
    }
    Ok((0..counts.len())
        .map(|i| {
            let psi: f64 = (0..f.ncols()).map(|j| f[(i, j)] * fit.gamma[j]).sum();
            eb_estimate(fit.r * libm::exp(psi), fit.r, counts[i] as f64)
        })
        .collect())
}

/// Mean of next-period predicted counts over this period's hot spots.
pub fn site_consistency(hotspots: &HotspotSet, predicted_next: &[f64]) -> Result<f64> {
    if hotspots.is_empty() {
        return Err(Error::Input("empty hot-spot set".into()));
    }
    if predicted_next.len() != hotspots.ranks.len() {
        return Err(Error::Dimension("periods cover different sites".into()));
    }
    Ok(hotspots.members.iter().map(|&h| predicted_next[h]).sum::<f64>() / hotspots.len() as f64)
}

/// Number of sites that are hot spots in both periods.
pub fn method_consistency(hotspots: &HotspotSet, hotspots_next: &HotspotSet) -> usize {
    hotspots.members.iter().filter(|&&h| hotspots_next.contains(h)).count()
}

/// Mean absolute rank change of this period's hot spots.
pub fn total_rank_differences(hotspots: &HotspotSet, ranks_next: &[usize]) -> Result<f64> {
    if hotspots.is_empty() {
        return Err(Error::Input("empty hot-spot set".into()));
    }
    let mut total = 0.0;
    for &h in &hotspots.members {
        let next = *ranks_next.get(h).ok_or_else(|| Error::Input(format!("no next-period rank for site {h}")))?;
        total += (next as f64 - hotspots.ranks[h] as f64).abs();
    }
    Ok(total / hotspots.len() as f64)
}

/// The three consistency tests for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub method: String,
    pub t_sc: f64,
    pub t_mc: usize,
    pub t_trd: f64,
}

pub fn consistency_row(method: &str, this: &HotspotSet, next: &HotspotSet, predicted_next: &[f64]) -> Result<ConsistencyRow> {
    if this.ranks.len() != next.ranks.len() {
        return Err(Error::Dimension("periods cover different sites".into()));
    }
    Ok(ConsistencyRow {
        method: method.into(),
        t_sc: site_consistency(this, predicted_next)?,
        t_mc: method_consistency(this, next),
        t_trd: total_rank_differences(this, &next.ranks)?,
    })
}

/// One site's row of the ranking table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRanking {
    pub site_id: i64,
    pub facility: i64,
    pub position: i64,
    pub prob_top: f64,
    pub posterior_mean_lambda: f64,
    pub model_rank: usize,
    pub naive_flag: bool,
    pub eb_count: f64,
    pub eb_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub method: String,
    pub period: i32,
    pub alpha: f64,
    pub cutoff: usize,
    pub probability_sum: f64,
    pub eb_fit: Option<NbFit>,
    pub sites: Vec<SiteRanking>,
}

/// Model, naive and empirical-Bayes rankings of one period.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRankings {
    pub model: HotspotSet,
    pub mean_lambda: Vec<f64>,
    pub naive: HotspotSet,
    pub eb: HotspotSet,
    pub eb_counts: Vec<f64>,
    pub eb_fit: NbFit,
}

/// Ranks one period; the empirical-Bayes baseline is fitted on `eb_design`.
pub fn rank_methods(period: i32, counts: &[u64], draws: &PosteriorDraws, eb_design: &DMatrix<f64>, alpha: f64) -> Result<MethodRankings> {
    if draws.n_sites() != counts.len() {
        return Err(Error::Dimension(format!("draws cover {} sites, data {}", draws.n_sites(), counts.len())));
    }
    let (model, mean_lambda) = model_hotspots(period, draws, alpha)?;
    let naive = naive_hotspots(period, counts, alpha)?;
    let eb_fit = ml_nb_fit(counts, eb_design)?;
    let eb_counts = eb_estimates(counts, eb_design, &eb_fit)?;
    let eb = HotspotSet::from_scores(period, alpha, eb_counts.clone(), None)?;
    Ok(MethodRankings { model, mean_lambda, naive, eb, eb_counts, eb_fit })
}

impl MethodRankings {
    pub fn report(&self, method: &str, dataset: &CrashDataset) -> RankingReport {
        let sites = (0..dataset.len())
            .map(|i| SiteRanking {
                site_id: dataset.segment_ids()[i],
                facility: dataset.facility_ids()[i],
                position: dataset.positions()[i],
                prob_top: self.model.scores[i],
                posterior_mean_lambda: self.mean_lambda[i],
                model_rank: self.model.ranks[i],
                naive_flag: self.naive.contains(i),
                eb_count: self.eb_counts[i],
                eb_rank: self.eb.ranks[i],
            })
            .collect();
        RankingReport {
            method: method.into(),
            period: self.model.period,
            alpha: self.model.alpha,
            cutoff: self.model.cutoff,
            probability_sum: self.model.scores.iter().sum(),
            eb_fit: Some(self.eb_fit.clone()),
            sites,
        }
    }

    /// Model, EB and naive rows of the consistency table against the next
    /// period, whose sites must be in the same order.
    pub fn consistency(&self, method: &str, next: &MethodRankings, next_counts: &[u64]) -> Result<Vec<ConsistencyRow>> {
        let observed: Vec<f64> = next_counts.iter().map(|&y| y as f64).collect();
        Ok(vec![
            consistency_row(method, &self.model, &next.model, &next.mean_lambda)?,
            consistency_row("eb", &self.eb, &next.eb, &next.eb_counts)?,
            consistency_row("naive", &self.naive, &next.naive, &observed)?,
        ])
    }
}
