//! Growing hierarchical self-organizing map for context discovery.
//!
//! Normalized telemetry vectors are clustered by a two-criterion GHSOM: each
//! grid grows horizontally (row/column insertion) until its mean quantization
//! error over occupied units drops below `τ1` times its parent's error, and
//! any unit still coarser than `τ2` times the root-level reference error
//! spawns a child grid trained on just its mapped samples. Leaves receive
//! contiguous context ids; [`GhsomTree::map_context`] descends by
//! best-matching unit to turn any feature vector into one of those ids.
//!
//! Training is an ordinary online SOM pass — per-sample BMU search, Gaussian
//! neighborhood, linearly decaying learning rate and radius — run epoch by
//! epoch over a seeded shuffle, so the whole build is a deterministic
//! function of (data order, seed, params). Ties in BMU search always resolve
//! to the lowest unit index for the same reason.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::NormStats;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Linear decay from `start` to `end` across a training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub start: f64,
    pub end: f64,
}

impl DecaySchedule {
    /// Value at `step` of `total` steps (clamped at `end`).
    pub fn at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.end;
        }
        let frac = step as f64 / (total - 1) as f64;
        self.start + (self.end - self.start) * frac.min(1.0)
    }
}

/// GHSOM hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GhsomParams {
    /// Breadth threshold: grids grow while mean occupied MQE > τ1·parent MQE.
    pub tau1: f64,
    /// Depth threshold: units with MQE > τ2·mqe0 spawn children.
    pub tau2: f64,
    pub max_depth: u32,
    pub init_rows: usize,
    pub init_cols: usize,
    pub max_rows: usize,
    pub max_cols: usize,
    /// Full passes over the data per (re)training round.
    pub epochs: u32,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Neighborhood radius decays from max(rows, cols)/2 down to this.
    pub radius_end: f64,
    /// Units mapping fewer samples than this never spawn children.
    pub min_unit_samples: usize,
}

impl Default for GhsomParams {
    fn default() -> Self {
        GhsomParams {
            tau1: 0.6,
            tau2: 0.2,
            max_depth: 3,
            init_rows: 2,
            init_cols: 2,
            max_rows: 8,
            max_cols: 8,
            epochs: 30,
            lr_start: 0.5,
            lr_end: 0.01,
            radius_end: 0.5,
            min_unit_samples: 4,
        }
    }
}

impl GhsomParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > 0.0 && self.tau2 > 0.0) {
            return Err(Error::Config("tau1 and tau2 must be positive".into()));
        }
        if self.init_rows == 0 || self.init_cols == 0 {
            return Err(Error::Config("initial grid must be at least 1x1".into()));
        }
        if self.max_rows < self.init_rows || self.max_cols < self.init_cols {
            return Err(Error::Config("max grid must contain the initial grid".into()));
        }
        if self.max_depth == 0 || self.epochs == 0 {
            return Err(Error::Config("max_depth and epochs must be >= 1".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return Err(Error::Config("learning rate must decay toward a positive floor".into()));
        }
        Ok(())
    }

    fn lr(&self) -> DecaySchedule {
        DecaySchedule { start: self.lr_start, end: self.lr_end }
    }
}

fn radius_for(rows: usize, cols: usize, end: f64) -> DecaySchedule {
    DecaySchedule { start: (rows.max(cols) as f64 / 2.0).max(end), end }
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// One map unit: a prototype vector plus its assignment statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomUnit {
    pub weight: Vec<f64>,
    pub hit_count: u64,
    /// Mean Euclidean distance of mapped samples (0 when unoccupied).
    pub mqe: f64,
}

/// A rectangular SOM lattice, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomGrid {
    pub rows: usize,
    pub cols: usize,
    pub units: Vec<SomUnit>,
    /// 1 for the root grid, increasing downward.
    pub depth: u32,
    /// (arena index of parent grid, unit index within it); None for the root.
    pub parent: Option<(u32, u32)>,
    /// Per unit: arena index of its child grid, if it was refined.
    pub children: Vec<Option<u32>>,
    /// Per unit: contiguous context id, present exactly on childless units.
    pub labels: Vec<Option<u32>>,
    /// True when growth wanted another insertion but hit the size cap.
    pub saturated: bool,
}

impl SomGrid {
    fn unit_coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.cols, idx % self.cols)
    }

    /// Best-matching unit by Euclidean distance; ties go to the lowest index.
    pub fn bmu(&self, x: &[f64]) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, u) in self.units.iter().enumerate() {
            let d = sq_dist(&u.weight, x);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Indices of the 4-neighborhood of `idx`.
    fn neighbors(&self, idx: usize) -> Vec<usize> {
        let (r, c) = self.unit_coords(idx);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push((r - 1) * self.cols + c);
        }
        if r + 1 < self.rows {
            out.push((r + 1) * self.cols + c);
        }
        if c > 0 {
            out.push(r * self.cols + c - 1);
        }
        if c + 1 < self.cols {
            out.push(r * self.cols + c + 1);
        }
        out
    }

    /// Mean MQE over occupied units (0 when nothing is mapped).
    pub fn mean_occupied_mqe(&self) -> f64 {
        let occupied: Vec<&SomUnit> = self.units.iter().filter(|u| u.hit_count > 0).collect();
        if occupied.is_empty() {
            return 0.0;
        }
        occupied.iter().map(|u| u.mqe).sum::<f64>() / occupied.len() as f64
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean Euclidean distance from `mapped` samples to a prototype.
pub fn unit_mqe(weight: &[f64], mapped: &[&[f64]]) -> f64 {
    if mapped.is_empty() {
        return 0.0;
    }
    mapped.iter().map(|x| sq_dist(weight, x).sqrt()).sum::<f64>() / mapped.len() as f64
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn check_data(data: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = data.first() else {
        return Err(Error::InvalidData("cannot train a SOM on an empty dataset".into()));
    };
    let dim = first.len();
    if dim == 0 || data.iter().any(|x| x.len() != dim) {
        return Err(Error::InvalidData("training vectors must share a nonzero dimension".into()));
    }
    Ok(dim)
}

/// One full round of online epochs over `data`, mutating grid weights.
fn run_epochs(
    grid: &mut SomGrid,
    data: &[Vec<f64>],
    epochs: u32,
    lr: DecaySchedule,
    radius: DecaySchedule,
    rng: &mut ChaCha8Rng,
) {
    let total = epochs as usize * data.len();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            let x = &data[i];
            let bmu = grid.bmu(x);
            let (br, bc) = grid.unit_coords(bmu);
            let lr_t = lr.at(step, total);
            let r_t = radius.at(step, total);
            let denom = 2.0 * r_t * r_t;
            for idx in 0..grid.units.len() {
                let (r, c) = grid.unit_coords(idx);
                let dr = r as f64 - br as f64;
                let dc = c as f64 - bc as f64;
                let h = (-(dr * dr + dc * dc) / denom).exp();
                let w = &mut grid.units[idx].weight;
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += lr_t * h * (xj - *wj);
                }
            }
            step += 1;
        }
    }
}

/// Recompute hit counts and per-unit MQE; returns each sample's BMU.
fn assign(grid: &mut SomGrid, data: &[Vec<f64>]) -> Vec<usize> {
    for u in &mut grid.units {
        u.hit_count = 0;
        u.mqe = 0.0;
    }
    let mut bmus = Vec::with_capacity(data.len());
    for x in data {
        let b = grid.bmu(x);
        grid.units[b].hit_count += 1;
        grid.units[b].mqe += sq_dist(&grid.units[b].weight, x).sqrt();
        bmus.push(b);
    }
    for u in &mut grid.units {
        if u.hit_count > 0 {
            u.mqe /= u.hit_count as f64;
        }
    }
    bmus
}

/// Train a fresh `rows`×`cols` SOM on `data`.
///
/// Classic online algorithm: per sample, move every unit toward the sample
/// with strength `lr · exp(−grid_dist² / 2·radius²)` centered on the BMU.
/// Weights initialize from data points drawn with `rng`; epoch order is a
/// seeded shuffle, so results are a pure function of (data, schedules, seed).
pub fn train_som(
    data: &[Vec<f64>],
    rows: usize,
    cols: usize,
    epochs: u32,
    lr: DecaySchedule,
    radius: DecaySchedule,
    rng: &mut ChaCha8Rng,
) -> Result<SomGrid> {
    check_data(data)?;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidData("grid must be at least 1x1".into()));
    }
    let n_units = rows * cols;
    let units: Vec<SomUnit> = (0..n_units)
        .map(|_| SomUnit {
            weight: data[rand::Rng::random_range(rng, 0..data.len())].clone(),
            hit_count: 0,
            mqe: 0.0,
        })
        .collect();
    let mut grid = SomGrid {
        rows,
        cols,
        units,
        depth: 1,
        parent: None,
        children: vec![None; n_units],
        labels: vec![None; n_units],
        saturated: false,
    };
    run_epochs(&mut grid, data, epochs, lr, radius, rng);
    assign(&mut grid, data);
    Ok(grid)
}

/// Insert a full row or column between the worst unit and its most
/// dissimilar neighbor, initializing new prototypes as flanking means.
/// Returns false if the size cap blocked every admissible insertion.
fn insert_between(grid: &mut SomGrid, max_rows: usize, max_cols: usize) -> bool {
    // Highest-MQE occupied unit drives the split.
    let Some((err_idx, _)) = grid
        .units
        .iter()
        .enumerate()
        .filter(|(_, u)| u.hit_count > 0)
        .max_by(|a, b| {
            a.1.mqe
                .partial_cmp(&b.1.mqe)
                .unwrap()
                .then(b.0.cmp(&a.0)) // ties -> lowest index
        })
    else {
        return false;
    };
    let (er, ec) = grid.unit_coords(err_idx);
    // Most dissimilar neighbor, preferring whichever direction is growable.
    let mut candidates: Vec<(usize, f64)> = grid
        .neighbors(err_idx)
        .into_iter()
        .map(|n| (n, sq_dist(&grid.units[err_idx].weight, &grid.units[n].weight)))
        .collect();
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (n_idx, _) in candidates {
        let (nr, nc) = grid.unit_coords(n_idx);
        if nr == er && grid.cols < max_cols {
            insert_col(grid, ec.min(nc));
            return true;
        }
        if nc == ec && grid.rows < max_rows {
            insert_row(grid, er.min(nr));
            return true;
        }
    }
    false
}

fn mean_weight(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

fn blank(weight: Vec<f64>) -> SomUnit {
    SomUnit { weight, hit_count: 0, mqe: 0.0 }
}

/// Insert a new column between columns `c` and `c+1`.
fn insert_col(grid: &mut SomGrid, c: usize) {
    let new_cols = grid.cols + 1;
    let mut units = Vec::with_capacity(grid.rows * new_cols);
    for r in 0..grid.rows {
        for cc in 0..grid.cols {
            units.push(grid.units[r * grid.cols + cc].clone());
            if cc == c {
                let left = &grid.units[r * grid.cols + cc].weight;
                let right = &grid.units[r * grid.cols + cc + 1].weight;
                units.push(blank(mean_weight(left, right)));
            }
        }
    }
    grid.cols = new_cols;
    grid.units = units;
    grid.children = vec![None; grid.rows * grid.cols];
    grid.labels = vec![None; grid.rows * grid.cols];
}

/// Insert a new row between rows `r` and `r+1`.
fn insert_row(grid: &mut SomGrid, r: usize) {
    let mut units = Vec::with_capacity((grid.rows + 1) * grid.cols);
    for rr in 0..grid.rows {
        units.extend(grid.units[rr * grid.cols..(rr + 1) * grid.cols].iter().cloned());
        if rr == r {
            for c in 0..grid.cols {
                let above = &grid.units[rr * grid.cols + c].weight;
                let below = &grid.units[(rr + 1) * grid.cols + c].weight;
                units.push(blank(mean_weight(above, below)));
            }
        }
    }
    grid.rows += 1;
    grid.units = units;
    grid.children = vec![None; grid.rows * grid.cols];
    grid.labels = vec![None; grid.rows * grid.cols];
}

/// Grow `grid` horizontally until its mean occupied MQE is at most
/// `τ1 · parent_mqe` or the size cap bites (marked as saturated).
pub fn grow_horizontal(
    mut grid: SomGrid,
    data: &[Vec<f64>],
    tau1: f64,
    parent_mqe: f64,
    params: &GhsomParams,
    rng: &mut ChaCha8Rng,
) -> Result<SomGrid> {
    check_data(data)?;
    loop {
        assign(&mut grid, data);
        if grid.mean_occupied_mqe() <= tau1 * parent_mqe {
            return Ok(grid);
        }
        if !insert_between(&mut grid, params.max_rows, params.max_cols) {
            grid.saturated = true;
            return Ok(grid);
        }
        let radius = radius_for(grid.rows, grid.cols, params.radius_end);
        run_epochs(&mut grid, data, params.epochs, params.lr(), radius, rng);
    }
}

// ---------------------------------------------------------------------------
// Tree
// ---------------------------------------------------------------------------

/// The trained hierarchy: an arena of grids (root at index 0) plus the
/// normalization statistics the features were whitened with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhsomTree {
    pub grids: Vec<SomGrid>,
    pub num_contexts: u32,
    /// Mean distance of the training data to its global centroid.
    pub mqe0: f64,
    pub params: GhsomParams,
    pub norm_stats: NormStats,
}

/// Train the full hierarchy on normalized feature vectors.
///
/// `mqe0` is the 1-means reference error; the root grows against it, and any
/// unit whose own MQE still exceeds `τ2·mqe0` (with spare depth and at least
/// `min_unit_samples` mapped samples) recursively trains a child grid on its
/// mapped subset. Childless units then receive contiguous labels 0..K−1 in
/// (grid, unit) order.
pub fn train_ghsom(
    data: &[Vec<f64>],
    norm_stats: NormStats,
    params: &GhsomParams,
    seed: u64,
) -> Result<GhsomTree> {
    params.validate()?;
    let dim = check_data(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroid = vec![0.0; dim];
    for x in data {
        for (c, v) in centroid.iter_mut().zip(x) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= data.len() as f64;
    }
    let mqe0 = data.iter().map(|x| sq_dist(&centroid, x).sqrt()).sum::<f64>() / data.len() as f64;

    let root = {
        let radius = radius_for(params.init_rows, params.init_cols, params.radius_end);
        let grid = train_som(
            data,
            params.init_rows,
            params.init_cols,
            params.epochs,
            params.lr(),
            radius,
            &mut rng,
        )?;
        grow_horizontal(grid, data, params.tau1, mqe0, params, &mut rng)?
    };

    let mut grids = vec![root];
    // Breadth-first refinement; indices into `data` per pending grid.
    let all: Vec<usize> = (0..data.len()).collect();
    let mut queue: Vec<(u32, Vec<usize>)> = vec![(0, all)];
    while let Some((gi, sample_idx)) = queue.pop() {
        let subset: Vec<Vec<f64>> = sample_idx.iter().map(|&i| data[i].clone()).collect();
        let bmus = assign(&mut grids[gi as usize], &subset);
        let depth = grids[gi as usize].depth;
        let n_units = grids[gi as usize].units.len();
        for u in 0..n_units {
            let mapped: Vec<usize> = sample_idx
                .iter()
                .zip(&bmus)
                .filter(|&(_, &b)| b == u)
                .map(|(&i, _)| i)
                .collect();
            let too_coarse = grids[gi as usize].units[u].mqe > params.tau2 * mqe0;
            if !(too_coarse && depth < params.max_depth && mapped.len() >= params.min_unit_samples)
            {
                continue;
            }
            let child_data: Vec<Vec<f64>> = mapped.iter().map(|&i| data[i].clone()).collect();
            let parent_unit_mqe = grids[gi as usize].units[u].mqe;
            let radius = radius_for(params.init_rows, params.init_cols, params.radius_end);
            let mut child = train_som(
                &child_data,
                params.init_rows,
                params.init_cols,
                params.epochs,
                params.lr(),
                radius,
                &mut rng,
            )?;
            child = grow_horizontal(child, &child_data, params.tau1, parent_unit_mqe, params, &mut rng)?;
            child.depth = depth + 1;
            child.parent = Some((gi, u as u32));
            let ci = grids.len() as u32;
            grids.push(child);
            grids[gi as usize].children[u] = Some(ci);
            queue.push((ci, mapped));
        }
    }

    // Contiguous leaf labels in (grid, unit) order.
    let mut next = 0u32;
    for g in &mut grids {
        for u in 0..g.units.len() {
            if g.children[u].is_none() {
                g.labels[u] = Some(next);
                next += 1;
            }
        }
    }

    Ok(GhsomTree { grids, num_contexts: next, mqe0, params: params.clone(), norm_stats })
}

impl GhsomTree {
    /// Number of leaf contexts K.
    pub fn num_contexts(&self) -> usize {
        self.num_contexts as usize
    }

    /// Descend from the root by BMU until a childless unit; return its label.
    /// Total and deterministic for any vector of the trained dimension.
    pub fn map_context(&self, f_norm: &[f64]) -> usize {
        let mut gi = 0usize;
        loop {
            let grid = &self.grids[gi];
            let b = grid.bmu(f_norm);
            match grid.children[b] {
                Some(child) => gi = child as usize,
                None => {
                    return grid.labels[b].expect("childless units are labeled") as usize;
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
