//! Crash-count datasets, predictor spaces and contiguity weight matrices.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::SparseRows;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorColumn {
    pub name: String,
    pub values: Vec<f64>,
}

/// Crash counts and segment attributes for one observation year.
#[derive(Debug, Clone, PartialEq)]
pub struct CrashDataset {
    year: i32,
    segment_ids: Vec<i64>,
    counts: Vec<u64>,
    facility_ids: Vec<i64>,
    positions: Vec<i64>,
    columns: Vec<PredictorColumn>,
}

impl CrashDataset {
    /// Validates and assembles a dataset. Row numbers in errors are 1-based.
    pub fn new(
        year: i32,
        segment_ids: Vec<i64>,
        counts: Vec<u64>,
        facility_ids: Vec<i64>,
        positions: Vec<i64>,
        columns: Vec<PredictorColumn>,
    ) -> Result<Self> {
        let n = segment_ids.len();
        if n == 0 {
            return Err(Error::NoRows);
        }
        if counts.len() != n || facility_ids.len() != n || positions.len() != n {
            return Err(Error::Dimension("segment metadata columns differ in length".into()));
        }
        let mut seen_ids = BTreeSet::new();
        let mut seen_pos = BTreeSet::new();
        for i in 0..n {
            if !seen_ids.insert(segment_ids[i]) {
                return Err(Error::DuplicateSegment { id: segment_ids[i], row: i + 1 });
            }
            if !seen_pos.insert((facility_ids[i], positions[i])) {
                return Err(Error::DuplicatePosition {
                    facility: facility_ids[i],
                    position: positions[i],
                    row: i + 1,
                });
            }
        }
        let mut names = BTreeSet::new();
        for col in &columns {
            if !names.insert(col.name.as_str()) {
                return Err(Error::Input(format!("duplicate predictor column `{}`", col.name)));
            }
            if col.values.len() != n {
                return Err(Error::Dimension(format!("column `{}` has {} values, expected {n}", col.name, col.values.len())));
            }
            if let Some(row) = col.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Cell {
                    row: row + 1,
                    column: col.name.clone(),
                    message: "missing or non-finite value".into(),
                });
            }
        }
        Ok(CrashDataset { year, segment_ids, counts, facility_ids, positions, columns })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn segment_ids(&self) -> &[i64] {
        &self.segment_ids
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn facility_ids(&self) -> &[i64] {
        &self.facility_ids
    }

    pub fn positions(&self) -> &[i64] {
        &self.positions
    }

    pub fn columns(&self) -> &[PredictorColumn] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.values.as_slice())
    }

    pub fn index_of_segment(&self, id: i64) -> Option<usize> {
        self.segment_ids.iter().position(|&s| s == id)
    }
}

/// Canonical column names of the road-segment attributes.
pub mod columns {
    pub const INTERSTATE: &str = "interstate";
    pub const EXURBAN: &str = "exurban";
    pub const ASPHALT_PAVEMENT: &str = "asphalt_pavement";
    pub const ASPHALT_SHOULDER: &str = "asphalt_shoulder";
    pub const TOTAL_ROAD_WIDTH: &str = "total_road_width";
    pub const LEFT_SHOULDER_WIDTH: &str = "left_shoulder_width";
    pub const RIGHT_SHOULDER_WIDTH: &str = "right_shoulder_width";
    pub const LEFT_SHOULDER_LT_10FT: &str = "left_shoulder_lt_10ft";
    pub const RIGHT_SHOULDER_LT_10FT: &str = "right_shoulder_lt_10ft";
    pub const ROAD_QUALITY_INDEX: &str = "road_quality_index";
    pub const ROAD_QUALITY_LE_45: &str = "road_quality_le_45";
    pub const ROAD_COMFORT_INDEX: &str = "road_comfort_index";
    pub const ROAD_STRUCTURAL_INDEX: &str = "road_structural_index";
    pub const ROAD_SURFACE_INDEX: &str = "road_surface_index";
    pub const SPEED_LIMIT: &str = "speed_limit";
    pub const THROUGH_LANES: &str = "through_lanes";
    pub const ROAD_PROFILE_AVG: &str = "road_profile_avg";
    pub const ROAD_PROFILE_LEFT: &str = "road_profile_left";
    pub const ROAD_PROFILE_RIGHT: &str = "road_profile_right";
    pub const AADT_PER_LANE: &str = "aadt_per_lane";
    pub const LOG_AADT_PER_LANE: &str = "log_aadt_per_lane";
    pub const TRUCK_PCT: &str = "truck_pct";

    /// Restricted space: some continuous attributes pre-discretized.
    pub const SPACE_I: &[&str] = &[
        INTERSTATE,
        EXURBAN,
        ASPHALT_PAVEMENT,
        ASPHALT_SHOULDER,
        LEFT_SHOULDER_LT_10FT,
        RIGHT_SHOULDER_LT_10FT,
        ROAD_QUALITY_LE_45,
        SPEED_LIMIT,
        ROAD_PROFILE_AVG,
        LOG_AADT_PER_LANE,
        TRUCK_PCT,
    ];

    /// Unrestricted space: all attributes in their original form.
    pub const SPACE_II: &[&str] = &[
        INTERSTATE,
        EXURBAN,
        ASPHALT_PAVEMENT,
        ASPHALT_SHOULDER,
        TOTAL_ROAD_WIDTH,
        LEFT_SHOULDER_WIDTH,
        RIGHT_SHOULDER_WIDTH,
        ROAD_QUALITY_INDEX,
        ROAD_COMFORT_INDEX,
        ROAD_STRUCTURAL_INDEX,
        ROAD_SURFACE_INDEX,
        SPEED_LIMIT,
        THROUGH_LANES,
        ROAD_PROFILE_LEFT,
        ROAD_PROFILE_RIGHT,
        AADT_PER_LANE,
        TRUCK_PCT,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceId {
    I,
    II,
    Custom,
}

/// Which columns enter the linear part `F` and which the tree part `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpace {
    pub f_columns: Vec<String>,
    pub x_columns: Vec<String>,
    pub space: SpaceId,
    pub allow_overlap: bool,
}

impl PredictorSpace {
    pub fn new(f_columns: Vec<String>, x_columns: Vec<String>, space: SpaceId, allow_overlap: bool) -> Result<Self> {
        if !allow_overlap {
            if let Some(c) = f_columns.iter().find(|c| x_columns.contains(c)) {
                return Err(Error::Input(format!(
                    "column `{c}` is in both the linear and the tree predictor sets; set allow_overlap to permit this"
                )));
            }
        }
        Ok(PredictorSpace { f_columns, x_columns, space, allow_overlap })
    }

    pub fn custom(f_columns: &[&str], x_columns: &[&str]) -> Result<Self> {
        Self::new(to_strings(f_columns), to_strings(x_columns), SpaceId::Custom, false)
    }

    pub fn validate(&self, dataset: &CrashDataset) -> Result<()> {
        for name in self.f_columns.iter().chain(&self.x_columns) {
            if dataset.column(name).is_none() {
                return Err(Error::MissingColumn(name.clone()));
            }
        }
        Ok(())
    }
}

fn to_strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Named model specifications. The BART variants keep only the intercept in
/// the linear part and hand the whole predictor space to the trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVariant {
    NbFixed,
    NbBartI,
    NbBartII,
    Custom,
}

impl ModelVariant {
    pub fn label(self) -> &'static str {
        match self {
            ModelVariant::NbFixed => "nb-fixed",
            ModelVariant::NbBartI => "nb-bart-i",
            ModelVariant::NbBartII => "nb-bart-ii",
            ModelVariant::Custom => "custom",
        }
    }

    /// Predictor space of a named variant; `None` for `Custom`.
    pub fn predictor_space(self) -> Option<PredictorSpace> {
        let space = match self {
            ModelVariant::NbFixed => PredictorSpace {
                f_columns: to_strings(columns::SPACE_I),
                x_columns: Vec::new(),
                space: SpaceId::I,
                allow_overlap: false,
            },
            ModelVariant::NbBartI => PredictorSpace {
                f_columns: Vec::new(),
                x_columns: to_strings(columns::SPACE_I),
                space: SpaceId::I,
                allow_overlap: false,
            },
            ModelVariant::NbBartII => PredictorSpace {
                f_columns: Vec::new(),
                x_columns: to_strings(columns::SPACE_II),
                space: SpaceId::II,
                allow_overlap: false,
            },
            ModelVariant::Custom => return None,
        };
        Some(space)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nb-fixed" => Ok(ModelVariant::NbFixed),
            "nb-bart-i" => Ok(ModelVariant::NbBartI),
            "nb-bart-ii" => Ok(ModelVariant::NbBartII),
            "custom" => Ok(ModelVariant::Custom),
            "nb-random" => Err(Error::Input("nb-random is not supported".into())),
            other => Err(Error::Input(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Dummy,
    Continuous,
}

/// Affine map applied to a column: `(x - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub center: f64,
    pub scale: f64,
}

impl Affine {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.scale + self.center
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Standardize {
    pub linear: bool,
    pub trees: bool,
}

impl Default for Standardize {
    fn default() -> Self {
        Standardize { linear: true, trees: false }
    }
}

/// Design matrices for one predictor space. `f` carries a leading intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub f: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub f_names: Vec<String>,
    pub x_names: Vec<String>,
    pub f_kinds: Vec<ColumnKind>,
    pub x_kinds: Vec<ColumnKind>,
    pub f_transforms: Vec<Option<Affine>>,
    pub x_transforms: Vec<Option<Affine>>,
}

pub const INTERCEPT: &str = "intercept";

pub fn column_kind(values: &[f64]) -> ColumnKind {
    if values.iter().all(|&v| v == 0.0 || v == 1.0) {
        ColumnKind::Dummy
    } else {
        ColumnKind::Continuous
    }
}

struct Block {
    values: Vec<Vec<f64>>,
    kinds: Vec<ColumnKind>,
    transforms: Vec<Option<Affine>>,
}

fn prepare_block(dataset: &CrashDataset, names: &[String], standardize: bool) -> Result<Block> {
    let mut block = Block { values: Vec::new(), kinds: Vec::new(), transforms: Vec::new() };
    for name in names {
        let raw = dataset.column(name).ok_or_else(|| Error::MissingColumn(name.clone()))?;
        let kind = column_kind(raw);
        let mut transform = None;
        let mut values = raw.to_vec();
        if standardize && kind == ColumnKind::Continuous {
            let center = crate::math::mean(raw);
            let scale = libm::sqrt(crate::math::sample_variance(raw));
            if !(scale > 0.0) {
                return Err(Error::ZeroVariance(name.clone()));
            }
            let affine = Affine { center, scale };
            values.iter_mut().for_each(|v| *v = affine.apply(*v));
            transform = Some(affine);
        }
        block.values.push(values);
        block.kinds.push(kind);
        block.transforms.push(transform);
    }
    Ok(block)
}

/// Builds `F` (intercept first) and `X` from the dataset columns. Dummy
/// columns are never transformed.
pub fn select_predictor_space(dataset: &CrashDataset, space: &PredictorSpace, standardize: Standardize) -> Result<Design> {
    space.validate(dataset)?;
    let n = dataset.len();
    let f_block = prepare_block(dataset, &space.f_columns, standardize.linear)?;
    let x_block = prepare_block(dataset, &space.x_columns, standardize.trees)?;

    let p = f_block.values.len() + 1;
    let f = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { f_block.values[j - 1][i] });
    let q = x_block.values.len();
    let x = DMatrix::from_fn(n, q, |i, j| x_block.values[j][i]);

    let mut f_names = vec![INTERCEPT.to_string()];
    f_names.extend(space.f_columns.iter().cloned());
    let mut f_kinds = vec![ColumnKind::Dummy];
    f_kinds.extend(f_block.kinds);
    let mut f_transforms = vec![None];
    f_transforms.extend(f_block.transforms);
    Ok(Design {
        f,
        x,
        f_names,
        x_names: space.x_columns.clone(),
        f_kinds,
        x_kinds: x_block.kinds,
        f_transforms,
        x_transforms: x_block.transforms,
    })
}

/// Contiguity proximity `C` and its row-normalized form `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    k_star: Option<usize>,
    order: Vec<Vec<(usize, u32)>>,
    c: DMatrix<f64>,
    w: DMatrix<f64>,
    w_sparse: SparseRows,
}

pub const DEFAULT_K_STAR: usize = 3;

impl SpatialWeights {
    /// Wraps an explicit proximity matrix (square, non-negative, zero
    /// diagonal).
    pub fn from_proximity(c: DMatrix<f64>) -> Result<Self> {
        if c.nrows() != c.ncols() {
            return Err(Error::Dimension("proximity matrix must be square".into()));
        }
        for i in 0..c.nrows() {
            if c[(i, i)] != 0.0 {
                return Err(Error::InvalidParameter(format!("proximity matrix has non-zero diagonal at {i}")));
            }
        }
        if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("proximity entries must be finite and non-negative".into()));
        }
        let order = vec![Vec::new(); c.nrows()];
        Ok(Self::assemble(None, order, c))
    }

    fn assemble(k_star: Option<usize>, order: Vec<Vec<(usize, u32)>>, c: DMatrix<f64>) -> Self {
        let mut w = c.clone();
        for i in 0..w.nrows() {
            let sum: f64 = w.row(i).iter().sum();
            if sum > 0.0 {
                w.row_mut(i).iter_mut().for_each(|v| *v /= sum);
            }
        }
        let w_sparse = SparseRows::from_dense(&w);
        SpatialWeights { k_star, order, c, w, w_sparse }
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.nrows() == 0
    }

    pub fn k_star(&self) -> Option<usize> {
        self.k_star
    }

    pub fn proximity(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn normalized(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn sparse(&self) -> &SparseRows {
        &self.w_sparse
    }

    /// Neighbour order `d_i(j)` when `1 <= d_i(j) <= k*`.
    pub fn neighbour_order(&self, i: usize, j: usize) -> Option<u32> {
        self.order[i].iter().find(|(k, _)| *k == j).map(|&(_, d)| d)
    }

    pub fn neighbours(&self, i: usize) -> &[(usize, u32)] {
        &self.order[i]
    }
}

/// Builds the `1/d` contiguity weights. Without explicit edges, segments on
/// the same facility whose positions differ by one are first-order
/// neighbours; `d` is the breadth-first distance truncated at `k_star`.
pub fn build_weight_matrix(dataset: &CrashDataset, k_star: usize, edges: Option<&[(i64, i64)]>) -> Result<SpatialWeights> {
    if k_star < 1 {
        return Err(Error::InvalidParameter("k_star must be at least 1".into()));
    }
    let n = dataset.len();
    let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    match edges {
        Some(edges) => {
            let index: BTreeMap<i64, usize> = dataset.segment_ids().iter().enumerate().map(|(i, &s)| (s, i)).collect();
            for &(a, b) in edges {
                let ia = *index.get(&a).ok_or(Error::UnknownSegment(a))?;
                let ib = *index.get(&b).ok_or(Error::UnknownSegment(b))?;
                if ia != ib {
                    adjacency[ia].insert(ib);
                    adjacency[ib].insert(ia);
                }
            }
        }
        None => {
            let mut by_position: BTreeMap<(i64, i64), usize> = BTreeMap::new();
            for i in 0..n {
                by_position.insert((dataset.facility_ids()[i], dataset.positions()[i]), i);
            }
            for (&(facility, position), &i) in &by_position {
                if let Some(&j) = by_position.get(&(facility, position + 1)) {
                    adjacency[i].insert(j);
                    adjacency[j].insert(i);
                }
            }
        }
    }

    let mut c = DMatrix::zeros(n, n);
    let mut order = Vec::with_capacity(n);
    let mut dist = vec![u32::MAX; n];
    let mut queue = VecDeque::new();
    for source in 0..n {
        let mut row = Vec::new();
        dist[source] = 0;
        queue.push_back(source);
        let mut visited = vec![source];
        while let Some(u) = queue.pop_front() {
            let du = dist[u];
            if du as usize >= k_star {
                continue;
            }
            for &v in &adjacency[u] {
                if dist[v] == u32::MAX {
                    dist[v] = du + 1;
                    visited.push(v);
                    queue.push_back(v);
                    row.push((v, du + 1));
                }
            }
        }
        row.sort_unstable();
        for &(j, d) in &row {
            c[(source, j)] = 1.0 / f64::from(d);
        }
        order.push(row);
        for v in visited {
            dist[v] = u32::MAX;
        }
    }
    Ok(SpatialWeights::assemble(Some(k_star), order, c))
}
