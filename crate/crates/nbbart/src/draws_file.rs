//! Self-describing text file of posterior draws.
//!
//! ```text
//! #nbbart-draws 1
//! #meta {"model":...}
//! [scalars]
//! chain,draw,iteration,gamma_0,...,r,h,tau,sigma2,split_<x>...
//! [psi]
//! chain,draw,site_<id>...
//! [phi]
//! [lambda]
//! [trees]
//! chain,draw,tree,node,parent,kind,split_var,split_value,mu
//! ```
//!
//! Reals are written in their shortest round-trip form, so reading a file
//! back reproduces every draw bit for bit.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nbbart_core::bart::{NodeRecord, RecordKind};
use nbbart_core::data::Affine;
use nbbart_core::gibbs::{scalar_names, ChainConfig, ChainDraws, Draw, Hyperparameters, PosteriorDraws};
use nbbart_core::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const MAGIC: &str = "#nbbart-draws";
pub const VERSION: u32 = 1;

/// Prior constants in plain form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub gamma_mean: Vec<f64>,
    /// Row-major `p x p` prior covariance of `gamma`.
    pub gamma_covariance: Vec<f64>,
    pub tau_mean: f64,
    pub tau_variance: f64,
    pub b_sigma2: f64,
    pub c_sigma2: f64,
    pub r0: f64,
    pub b0: f64,
    pub c0: f64,
}

impl From<&Hyperparameters> for PriorRecord {
    fn from(h: &Hyperparameters) -> Self {
        let p = h.n_gamma();
        PriorRecord {
            gamma_mean: h.zeta_gamma.iter().copied().collect(),
            gamma_covariance: (0..p * p).map(|k| h.delta_gamma[(k / p, k % p)]).collect(),
            tau_mean: h.zeta_tau,
            tau_variance: h.sigma2_tau,
            b_sigma2: h.b_sigma2,
            c_sigma2: h.c_sigma2,
            r0: h.r0,
            b0: h.b0,
            c0: h.c0,
        }
    }
}

impl PriorRecord {
    pub fn to_hyperparameters(&self) -> AppResult<Hyperparameters> {
        let p = self.gamma_mean.len();
        if self.gamma_covariance.len() != p * p {
            return Err(AppError::Data("prior covariance does not match the prior mean".into()));
        }
        Ok(Hyperparameters {
            zeta_gamma: DVector::from_column_slice(&self.gamma_mean),
            delta_gamma: DMatrix::from_row_slice(p, p, &self.gamma_covariance),
            zeta_tau: self.tau_mean,
            sigma2_tau: self.tau_variance,
            b_sigma2: self.b_sigma2,
            c_sigma2: self.c_sigma2,
            r0: self.r0,
            b0: self.b0,
            c0: self.c0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub chain: usize,
    pub seed: u64,
    pub n_draws: usize,
    pub tau_acceptance: Option<f64>,
    pub tau_step: f64,
    pub tree_acceptance: Option<f64>,
    pub sigma_mu: Option<f64>,
    pub warnings: Vec<String>,
}

/// Header of a draws file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsMeta {
    pub model: String,
    pub year: i32,
    pub segment_ids: Vec<i64>,
    pub f_names: Vec<String>,
    pub x_names: Vec<String>,
    pub f_transforms: Vec<Option<Affine>>,
    pub x_transforms: Vec<Option<Affine>>,
    pub k_star: Option<usize>,
    pub config: ChainConfig,
    pub priors: PriorRecord,
    pub chains: Vec<ChainMeta>,
}

impl DrawsMeta {
    pub fn chain_metas(draws: &PosteriorDraws) -> Vec<ChainMeta> {
        draws
            .chains
            .iter()
            .map(|c| ChainMeta {
                chain: c.chain,
                seed: c.seed,
                n_draws: c.draws.len(),
                tau_acceptance: c.tau_acceptance,
                tau_step: c.tau_step,
                tree_acceptance: c.tree_acceptance,
                sigma_mu: c.sigma_mu,
                warnings: c.warnings.clone(),
            })
            .collect()
    }
}

fn real(out: &mut String, v: f64) {
    let _ = write!(out, "{v:?}");
}

fn opt_real(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        real(out, v);
    }
}

fn site_block(out: &mut String, name: &str, meta: &DrawsMeta, draws: &PosteriorDraws, value: impl Fn(&Draw, usize) -> f64) {
    let _ = writeln!(out, "[{name}]");
    out.push_str("chain,draw");
    for id in &meta.segment_ids {
        let _ = write!(out, ",site_{id}");
    }
    out.push('\n');
    for c in &draws.chains {
        for (k, d) in c.draws.iter().enumerate() {
            let _ = write!(out, "{},{k}", c.chain);
            for i in 0..d.psi.len() {
                out.push(',');
                real(out, value(d, i));
            }
            out.push('\n');
        }
    }
}

/// Serializes `draws` with `meta` (whose `chains` entry is refreshed from
/// the draws).
pub fn render(meta: &DrawsMeta, draws: &PosteriorDraws) -> AppResult<String> {
    let mut meta = meta.clone();
    meta.chains = DrawsMeta::chain_metas(draws);
    meta.config = draws.config;
    if meta.segment_ids.len() != draws.n_sites() {
        return Err(AppError::Data("metadata and draws disagree on site count".into()));
    }
    let json = serde_json::to_string(&meta).map_err(AppError::data)?;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "#meta {json}");

    let p = meta.f_names.len();
    out.push_str("[scalars]\nchain,draw,iteration");
    for name in scalar_names(p) {
        let _ = write!(out, ",{name}");
    }
    for name in &meta.x_names {
        let _ = write!(out, ",split_{name}");
    }
    out.push('\n');
    for c in &draws.chains {
        for (k, d) in c.draws.iter().enumerate() {
            let _ = write!(out, "{},{k},{}", c.chain, d.iteration);
            for v in d.gamma.iter().chain([d.r, d.h, d.tau, d.sigma2].iter()) {
                out.push(',');
                real(&mut out, *v);
            }
            for s in &d.split_counts {
                let _ = write!(out, ",{s}");
            }
            out.push('\n');
        }
    }
    site_block(&mut out, "psi", &meta, draws, |d, i| d.psi[i]);
    site_block(&mut out, "phi", &meta, draws, |d, i| d.phi[i]);
    site_block(&mut out, "lambda", &meta, draws, |d, i| d.r * d.psi[i].exp());
    out.push_str("[trees]\nchain,draw,tree,node,parent,kind,split_var,split_value,mu\n");
    for c in &draws.chains {
        for (k, d) in c.draws.iter().enumerate() {
            for r in &d.trees {
                let _ = write!(out, "{},{k},{},{},", c.chain, r.tree, r.node);
                if let Some(p) = r.parent {
                    let _ = write!(out, "{p}");
                }
                out.push_str(match r.kind {
                    RecordKind::Leaf => ",leaf,",
                    RecordKind::Split => ",split,",
                });
                if let Some(v) = r.split_var {
                    let _ = write!(out, "{v}");
                }
                out.push(',');
                opt_real(&mut out, r.split_value);
                out.push(',');
                opt_real(&mut out, r.mu);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn write_draws(path: &Path, meta: &DrawsMeta, draws: &PosteriorDraws) -> AppResult<()> {
    let text = render(meta, draws)?;
    let file = File::create(path).map_err(AppError::io(path))?;
    let mut out = BufWriter::new(file);
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(AppError::io(path))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::io::Lines<BufReader<File>>>,
    path: &'a Path,
    peeked: Option<(usize, String)>,
}

impl Lines<'_> {
    fn next(&mut self) -> AppResult<Option<(usize, String)>> {
        if let Some(l) = self.peeked.take() {
            return Ok(Some(l));
        }
        match self.inner.next() {
            None => Ok(None),
            Some((i, Ok(l))) => Ok(Some((i + 1, l))),
            Some((_, Err(e))) => Err(AppError::Io { path: self.path.to_path_buf(), source: e }),
        }
    }

    fn expect(&mut self, what: &str) -> AppResult<(usize, String)> {
        self.next()?.ok_or_else(|| AppError::Data(format!("{}: truncated before {what}", self.path.display())))
    }
}

fn bad(path: &Path, line: usize, msg: impl std::fmt::Display) -> AppError {
    AppError::Data(format!("{} line {line}: {msg}", path.display()))
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, raw: &str) -> AppResult<T> {
    raw.parse().map_err(|_| bad(path, line, format!("cannot parse `{raw}`")))
}

fn opt_num<T: std::str::FromStr>(path: &Path, line: usize, raw: &str) -> AppResult<Option<T>> {
    if raw.is_empty() {
        Ok(None)
    } else {
        num(path, line, raw).map(Some)
    }
}

/// Reads the rows of one section up to the next `[name]` line.
fn section(lines: &mut Lines<'_>, name: &str, width: usize) -> AppResult<Vec<(usize, Vec<String>)>> {
    let path = lines.path;
    let (n, head) = lines.expect(name)?;
    if head != format!("[{name}]") {
        return Err(bad(path, n, format!("expected section [{name}]")));
    }
    let (n, header) = lines.expect(name)?;
    if header.split(',').count() != width {
        return Err(bad(path, n, format!("[{name}] header has the wrong number of columns")));
    }
    let mut rows = Vec::new();
    while let Some((n, line)) = lines.next()? {
        if line.starts_with('[') {
            lines.peeked = Some((n, line));
            break;
        }
        let fields: Vec<String> = line.split(',').map(String::from).collect();
        if fields.len() != width {
            return Err(bad(path, n, format!("expected {width} fields, found {}", fields.len())));
        }
        rows.push((n, fields));
    }
    Ok(rows)
}

/// Every tree must be present with one more leaf than splits, and the split
/// rules must agree with the draw's split counts.
fn check_trees(d: &Draw, m: usize, q: usize) -> Result<(), String> {
    let mut splits = vec![0usize; m];
    let mut leaves = vec![0usize; m];
    let mut counts = vec![0usize; q];
    for rec in &d.trees {
        if rec.tree >= m {
            return Err(format!("tree {} out of range", rec.tree));
        }
        match rec.kind {
            RecordKind::Split => {
                let v = rec.split_var.filter(|&v| v < q).ok_or("split without a valid variable")?;
                splits[rec.tree] += 1;
                counts[v] += 1;
            }
            RecordKind::Leaf => leaves[rec.tree] += 1,
        }
    }
    if let Some(t) = (0..m).find(|&t| leaves[t] != splits[t] + 1) {
        return Err(format!("tree {t} is incomplete"));
    }
    if counts != d.split_counts {
        return Err("split rules disagree with the split counts".into());
    }
    Ok(())
}

pub fn read_draws(path: &Path) -> AppResult<(DrawsMeta, PosteriorDraws)> {
    let file = File::open(path).map_err(AppError::io(path))?;
    let mut lines = Lines { inner: BufReader::new(file).lines().enumerate(), path, peeked: None };
    let (n, magic) = lines.expect("header")?;
    match magic.strip_prefix(MAGIC).map(str::trim) {
        Some(v) if v == VERSION.to_string() => {}
        Some(v) => return Err(bad(path, n, format!("unsupported draws format version {v}"))),
        None => return Err(bad(path, n, "not a draws file")),
    }
    let (n, meta_line) = lines.expect("metadata")?;
    let json = meta_line.strip_prefix("#meta ").ok_or_else(|| bad(path, n, "missing #meta line"))?;
    let meta: DrawsMeta = serde_json::from_str(json).map_err(|e| bad(path, n, e))?;

    let p = meta.f_names.len();
    let q = meta.x_names.len();
    let n_sites = meta.segment_ids.len();
    let mut chains: Vec<ChainDraws> = meta
        .chains
        .iter()
        .map(|c| ChainDraws {
            chain: c.chain,
            seed: c.seed,
            draws: Vec::with_capacity(c.n_draws),
            tau_acceptance: c.tau_acceptance,
            tau_step: c.tau_step,
            tree_acceptance: c.tree_acceptance,
            sigma_mu: c.sigma_mu,
            warnings: c.warnings.clone(),
        })
        .collect();
    let slot = |chain: usize, line: usize| -> AppResult<usize> {
        meta.chains.iter().position(|c| c.chain == chain).ok_or_else(|| bad(path, line, format!("unknown chain {chain}")))
    };

    for (line, f) in section(&mut lines, "scalars", 3 + p + 4 + q)? {
        let c = slot(num(path, line, &f[0])?, line)?;
        let k: usize = num(path, line, &f[1])?;
        if k != chains[c].draws.len() {
            return Err(bad(path, line, "draws out of order"));
        }
        let reals = f[3..3 + p + 4].iter().map(|v| num::<f64>(path, line, v)).collect::<AppResult<Vec<_>>>()?;
        chains[c].draws.push(Draw {
            iteration: num(path, line, &f[2])?,
            gamma: reals[..p].to_vec(),
            r: reals[p],
            h: reals[p + 1],
            tau: reals[p + 2],
            sigma2: reals[p + 3],
            psi: Vec::new(),
            phi: Vec::new(),
            split_counts: f[3 + p + 4..].iter().map(|v| num(path, line, v)).collect::<AppResult<_>>()?,
            trees: Vec::new(),
        });
    }
    for c in 0..chains.len() {
        if chains[c].draws.len() != meta.chains[c].n_draws {
            return Err(AppError::Data(format!("{}: chain {} lists {} draws, metadata says {}", path.display(), meta.chains[c].chain, chains[c].draws.len(), meta.chains[c].n_draws)));
        }
    }
    for block in ["psi", "phi", "lambda"] {
        let rows = section(&mut lines, block, 2 + n_sites)?;
        let total: usize = chains.iter().map(|c| c.draws.len()).sum();
        if rows.len() != total {
            return Err(AppError::Data(format!("{}: [{block}] has {} rows, expected {total}", path.display(), rows.len())));
        }
        for (line, f) in rows {
            let c = slot(num(path, line, &f[0])?, line)?;
            let k: usize = num(path, line, &f[1])?;
            let d = chains[c].draws.get_mut(k).ok_or_else(|| bad(path, line, "draw index out of range"))?;
            let values = f[2..].iter().map(|v| num::<f64>(path, line, v)).collect::<AppResult<Vec<_>>>()?;
            match block {
                "psi" => d.psi = values,
                "phi" => d.phi = values,
                _ => {}
            }
        }
    }
    for (line, f) in section(&mut lines, "trees", 9)? {
        let c = slot(num(path, line, &f[0])?, line)?;
        let k: usize = num(path, line, &f[1])?;
        let d = chains[c].draws.get_mut(k).ok_or_else(|| bad(path, line, "draw index out of range"))?;
        let kind = match f[5].as_str() {
            "leaf" => RecordKind::Leaf,
            "split" => RecordKind::Split,
            other => return Err(bad(path, line, format!("unknown node kind `{other}`"))),
        };
        d.trees.push(NodeRecord {
            tree: num(path, line, &f[2])?,
            node: num(path, line, &f[3])?,
            parent: opt_num(path, line, &f[4])?,
            kind,
            split_var: opt_num(path, line, &f[6])?,
            split_value: opt_num(path, line, &f[7])?,
            mu: opt_num(path, line, &f[8])?,
        });
    }
    if let Some((n, _)) = lines.next()? {
        return Err(bad(path, n, "unexpected content after [trees]"));
    }
    if meta.config.keep_trees && q > 0 {
        for c in &chains {
            for (k, d) in c.draws.iter().enumerate() {
                check_trees(d, meta.config.trees.m, q).map_err(|e| AppError::Data(format!("{}: chain {} draw {k}: {e}", path.display(), c.chain)))?;
            }
        }
    }
    Ok((meta.clone(), PosteriorDraws { config: meta.config, chains }))
}
