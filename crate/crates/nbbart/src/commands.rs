//! The `fit`, `rank`, `consistency` and `simulate` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nbbart_core::bart::inclusion_proportions;
use nbbart_core::data::{build_weight_matrix, columns, select_predictor_space, CrashDataset, Design, PredictorColumn, PredictorSpace, Standardize};
use nbbart_core::diagnostics::{fit_report, FitReport};
use nbbart_core::gibbs::{run_chains, scalar_names, PosteriorDraws, Problem};
use nbbart_core::math::quantile;
use nbbart_core::ranking::{rank_methods, ConsistencyRow, MethodRankings, RankingReport};
use nbbart_core::synth::{generate_dataset, SynthConfig, SynthTruth};
use serde::Serialize;

use crate::config::RunConfig;
use crate::draws_file::{read_draws, write_draws, DrawsMeta, PriorRecord};
use crate::error::{AppError, AppResult};
use crate::io::{read_dataset, read_edges, write_dataset, write_edges};
use crate::parallel::run_chains_parallel;

pub const DRAWS_FILE: &str = "draws.txt";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const PSRF_FILE: &str = "psrf.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const INCLUSION_FILE: &str = "inclusion.csv";
pub const RANKING_JSON: &str = "ranking.json";
pub const RANKING_CSV: &str = "ranking.csv";
pub const FACILITY_SERIES_FILE: &str = "facility_series.csv";
pub const CONSISTENCY_FILE: &str = "consistency.csv";
pub const DATA_FILE: &str = "data.csv";
pub const ADJACENCY_FILE: &str = "adjacency.csv";
pub const TRUTH_FILE: &str = "truth.json";

fn prepare_out(dir: &Path) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(AppError::io(dir))
}

fn write_text(path: &Path, text: &str) -> AppResult<()> {
    fs::write(path, text).map_err(AppError::io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(AppError::data)?;
    text.push('\n');
    write_text(path, &text)
}

fn data_path(config: &RunConfig) -> AppResult<&Path> {
    config.data.as_deref().ok_or_else(|| AppError::Config("no input dataset given (--data or [data] input)".into()))
}

pub struct FitOutput {
    pub dataset: CrashDataset,
    pub design: Design,
    pub draws: PosteriorDraws,
    pub meta: DrawsMeta,
    pub report: FitReport,
    pub files: Vec<PathBuf>,
}

/// Loads the data, runs the chains and writes the draws file plus reports.
pub fn fit(config: &RunConfig) -> AppResult<FitOutput> {
    let path = data_path(config)?;
    let dataset = read_dataset(path, config.year)?;
    let edges = config.adjacency.as_deref().map(read_edges).transpose()?;
    let weights = build_weight_matrix(&dataset, config.k_star, edges.as_deref()).map_err(AppError::data)?;
    let design = select_predictor_space(&dataset, &config.space, config.standardize).map_err(AppError::data)?;
    let hyper = config.priors.resolve(design.f.ncols())?;
    let mut chain = config.chain;
    chain.bart = design.x.ncols() > 0;
    let problem = Problem { counts: dataset.counts(), f: &design.f, x: chain.bart.then_some(&design.x), weights: &weights };
    let draws = if config.parallel && config.n_chains > 1 {
        run_chains_parallel(problem, &hyper, &chain, config.n_chains)
    } else {
        run_chains(problem, &hyper, &chain, config.n_chains)
    }
    .map_err(AppError::sampler)?;

    let report = fit_report(&draws, dataset.counts(), chain.seed).map_err(AppError::sampler)?;
    let meta = DrawsMeta {
        model: config.variant.label().into(),
        year: dataset.year(),
        segment_ids: dataset.segment_ids().to_vec(),
        f_names: design.f_names.clone(),
        x_names: design.x_names.clone(),
        f_transforms: design.f_transforms.clone(),
        x_transforms: design.x_transforms.clone(),
        k_star: weights.k_star(),
        config: chain,
        priors: PriorRecord::from(&hyper),
        chains: DrawsMeta::chain_metas(&draws),
    };

    let out = &config.out;
    prepare_out(out)?;
    let mut files = Vec::new();
    let mut emit = |name: &str| {
        let p = out.join(name);
        files.push(p.clone());
        p
    };
    write_draws(&emit(DRAWS_FILE), &meta, &draws)?;
    write_json(&emit(FIT_REPORT_FILE), &report)?;
    write_text(&emit(PSRF_FILE), &psrf_table(&report))?;
    write_text(&emit(SUMMARY_FILE), &summary_table(&draws, &design))?;
    if !design.x_names.is_empty() {
        write_text(&emit(INCLUSION_FILE), &inclusion_table(&draws, &design.x_names)?)?;
    }
    Ok(FitOutput { dataset, design, draws, meta, report, files })
}

fn psrf_table(report: &FitReport) -> String {
    let mut out = String::from("parameter,psrf\n");
    for (name, v) in &report.psrf {
        let _ = writeln!(out, "{name},{v:?}");
    }
    out
}

/// Posterior mean, standard deviation and central 95% interval of each
/// scalar, pooled over chains. Linear coefficients are on the scale of the
/// (possibly standardized) design.
fn summary_table(draws: &PosteriorDraws, design: &Design) -> String {
    let mut out = String::from("parameter,mean,sd,lower_95,upper_95\n");
    let mut names = scalar_names(design.f_names.len());
    for (j, n) in design.f_names.iter().enumerate() {
        names[j] = format!("gamma_{n}");
    }
    for (name, series) in names.iter().zip(draws.scalar_series()) {
        let pooled: Vec<f64> = series.into_iter().flatten().collect();
        if pooled.is_empty() {
            continue;
        }
        let m = pooled.iter().sum::<f64>() / pooled.len() as f64;
        let var = pooled.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (pooled.len().max(2) - 1) as f64;
        let _ = writeln!(out, "{name},{m:?},{:?},{:?},{:?}", var.sqrt(), quantile(&pooled, 0.025), quantile(&pooled, 0.975));
    }
    out
}

fn inclusion_table(draws: &PosteriorDraws, names: &[String]) -> AppResult<String> {
    let counts: Vec<Vec<usize>> = draws.pooled().map(|d| d.split_counts.clone()).collect();
    let summary = inclusion_proportions(&counts).map_err(AppError::data)?;
    let mut out = String::from("variable,mean,lower_95,upper_95\n");
    for (j, name) in names.iter().enumerate() {
        let _ = writeln!(out, "{name},{:?},{:?},{:?}", summary.mean[j], summary.lower[j], summary.upper[j]);
    }
    Ok(out)
}

/// Linear design of the empirical-Bayes baseline: the configured columns,
/// else the fitted model's linear columns, else the restricted predictor
/// space when the data carry it, else an intercept.
fn eb_design(config: &RunConfig, meta: &DrawsMeta, dataset: &CrashDataset) -> AppResult<Design> {
    let names: Vec<String> = match &config.eb_columns {
        Some(c) => c.clone(),
        None if meta.f_names.len() > 1 => meta.f_names[1..].to_vec(),
        None if columns::SPACE_I.iter().all(|c| dataset.column(c).is_some()) => columns::SPACE_I.iter().map(|s| s.to_string()).collect(),
        None => Vec::new(),
    };
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let space = PredictorSpace::custom(&refs, &[]).map_err(AppError::config)?;
    select_predictor_space(dataset, &space, Standardize { linear: true, trees: false }).map_err(AppError::data)
}

fn check_sites(meta: &DrawsMeta, dataset: &CrashDataset, draws_path: &Path) -> AppResult<()> {
    if meta.segment_ids != dataset.segment_ids() {
        return Err(AppError::Data(format!(
            "{} was fitted on {} sites that do not match the {} dataset sites",
            draws_path.display(),
            meta.segment_ids.len(),
            dataset.len()
        )));
    }
    Ok(())
}

/// Loads a draws file plus its dataset and ranks the sites.
pub fn load_and_rank(config: &RunConfig, data: &Path, draws_path: &Path) -> AppResult<(CrashDataset, DrawsMeta, MethodRankings)> {
    let (meta, draws) = read_draws(draws_path)?;
    let dataset = read_dataset(data, Some(meta.year))?;
    check_sites(&meta, &dataset, draws_path)?;
    let design = eb_design(config, &meta, &dataset)?;
    nbbart_core::ranking::cutoff(config.alpha, dataset.len()).map_err(AppError::config)?;
    let rankings = rank_methods(dataset.year(), dataset.counts(), &draws, &design.f, config.alpha).map_err(AppError::data)?;
    Ok((dataset, meta, rankings))
}

pub struct RankOutput {
    pub report: RankingReport,
    pub files: Vec<PathBuf>,
}

pub fn rank(config: &RunConfig, draws_path: &Path) -> AppResult<RankOutput> {
    let (dataset, meta, rankings) = load_and_rank(config, data_path(config)?, draws_path)?;
    let report = rankings.report(&meta.model, &dataset);
    prepare_out(&config.out)?;
    let files: Vec<PathBuf> = [RANKING_JSON, RANKING_CSV, FACILITY_SERIES_FILE].iter().map(|n| config.out.join(n)).collect();
    write_json(&files[0], &report)?;
    write_text(&files[1], &ranking_table(&report))?;
    write_text(&files[2], &facility_series(&report, dataset.counts()))?;
    Ok(RankOutput { report, files })
}

pub fn ranking_table(report: &RankingReport) -> String {
    let mut out = String::from("site_id,facility,position,prob_top,posterior_mean_lambda,model_rank,naive_flag,eb_count,eb_rank\n");
    for s in &report.sites {
        let _ = writeln!(
            out,
            "{},{},{},{:?},{:?},{},{},{:?},{}",
            s.site_id, s.facility, s.position, s.prob_top, s.posterior_mean_lambda, s.model_rank, u8::from(s.naive_flag), s.eb_count, s.eb_rank
        );
    }
    out
}

/// Sites ordered along each facility, one row per site, for plotting the
/// ranking statistics as series.
pub fn facility_series(report: &RankingReport, counts: &[u64]) -> String {
    let mut order: Vec<usize> = (0..report.sites.len()).collect();
    order.sort_by_key(|&i| (report.sites[i].facility, report.sites[i].position));
    let mut out = String::from("facility,position,site_id,crash_count,prob_top,posterior_mean_lambda,eb_count\n");
    for i in order {
        let s = &report.sites[i];
        let _ = writeln!(
            out,
            "{},{},{},{},{:?},{:?},{:?}",
            s.facility, s.position, s.site_id, counts[i], s.prob_top, s.posterior_mean_lambda, s.eb_count
        );
    }
    out
}

/// Rows of `dataset` reordered to follow `ids`.
fn align_dataset(dataset: &CrashDataset, ids: &[i64]) -> AppResult<(CrashDataset, Vec<usize>)> {
    if dataset.len() != ids.len() {
        return Err(AppError::Data(format!("periods cover {} and {} sites", ids.len(), dataset.len())));
    }
    let perm = ids
        .iter()
        .map(|&id| dataset.index_of_segment(id).ok_or_else(|| AppError::Data(format!("segment {id} is missing from the second period"))))
        .collect::<AppResult<Vec<_>>>()?;
    let pick_i = |v: &[i64]| perm.iter().map(|&k| v[k]).collect::<Vec<_>>();
    let columns = dataset
        .columns()
        .iter()
        .map(|c| PredictorColumn { name: c.name.clone(), values: perm.iter().map(|&k| c.values[k]).collect() })
        .collect();
    let aligned = CrashDataset::new(
        dataset.year(),
        pick_i(dataset.segment_ids()),
        perm.iter().map(|&k| dataset.counts()[k]).collect(),
        pick_i(dataset.facility_ids()),
        pick_i(dataset.positions()),
        columns,
    )
    .map_err(AppError::data)?;
    Ok((aligned, perm))
}

fn align_draws(draws: &mut PosteriorDraws, perm: &[usize]) {
    for c in &mut draws.chains {
        for d in &mut c.draws {
            d.psi = perm.iter().map(|&k| d.psi[k]).collect();
            d.phi = perm.iter().map(|&k| d.phi[k]).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyOutput {
    pub period: i32,
    pub next_period: i32,
    pub alpha: f64,
    pub cutoff: usize,
    pub rows: Vec<ConsistencyRow>,
}

/// Consistency of period `a` hot spots against period `b`. Predicted counts
/// for `b` come from the model fitted to `b`.
pub fn consistency(config: &RunConfig, data_a: &Path, draws_a: &Path, data_b: &Path, draws_b: &Path) -> AppResult<(ConsistencyOutput, PathBuf)> {
    let (dataset_a, meta_a, rank_a) = load_and_rank(config, data_a, draws_a)?;
    let (meta_b, mut posterior_b) = read_draws(draws_b)?;
    let dataset_b = read_dataset(data_b, Some(meta_b.year))?;
    check_sites(&meta_b, &dataset_b, draws_b)?;
    let (aligned_b, perm) = align_dataset(&dataset_b, dataset_a.segment_ids())?;
    align_draws(&mut posterior_b, &perm);
    let mut meta_b_aligned = meta_b.clone();
    meta_b_aligned.segment_ids = aligned_b.segment_ids().to_vec();
    let design_b = eb_design(config, &meta_b_aligned, &aligned_b)?;
    let rank_b = rank_methods(aligned_b.year(), aligned_b.counts(), &posterior_b, &design_b.f, config.alpha).map_err(AppError::data)?;
    let rows = rank_a.consistency(&meta_a.model, &rank_b, aligned_b.counts()).map_err(AppError::data)?;
    let output = ConsistencyOutput { period: dataset_a.year(), next_period: aligned_b.year(), alpha: config.alpha, cutoff: rank_a.model.cutoff, rows };
    prepare_out(&config.out)?;
    let path = config.out.join(CONSISTENCY_FILE);
    write_text(&path, &consistency_table(&output))?;
    Ok((output, path))
}

pub fn consistency_table(output: &ConsistencyOutput) -> String {
    let mut out = String::from("method,period,next_period,alpha,cutoff,t_sc,t_mc,t_trd\n");
    for r in &output.rows {
        let _ = writeln!(out, "{},{},{},{:?},{},{:?},{},{:?}", r.method, output.period, output.next_period, output.alpha, output.cutoff, r.t_sc, r.t_mc, r.t_trd);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthFile<'a> {
    pub config: &'a SynthConfig,
    pub segment_ids: &'a [i64],
    pub truth: &'a SynthTruth,
}

/// Writes a synthetic dataset, its adjacency list and the generating values.
pub fn simulate(config: &RunConfig) -> AppResult<Vec<PathBuf>> {
    let output = generate_dataset(&config.simulate).map_err(AppError::config)?;
    prepare_out(&config.out)?;
    let files: Vec<PathBuf> = [DATA_FILE, ADJACENCY_FILE, TRUTH_FILE].iter().map(|n| config.out.join(n)).collect();
    write_dataset(&files[0], &output.dataset)?;
    write_edges(&files[1], &output.edges)?;
    write_json(&files[2], &TruthFile { config: &config.simulate, segment_ids: output.dataset.segment_ids(), truth: &output.truth })?;
    Ok(files)
}
