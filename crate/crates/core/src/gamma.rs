//! Admissible partition trees and the `γ_α` functional.
//!
//! A tree is a sequence of nested partitions of a point set with
//! `|level n| ≤ 2^{2^n}`, starting from the whole set and ending in
//! singletons. Any such tree gives an upper bound
//! `sup_t Σ_n 2^{n/α} Δ(A_n(t))` for `γ_α`; the exact value is available by
//! enumeration for sets of at most eight points.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc_sup::{esup_mc, Driver};
use crate::par::{self, Execution};
use crate::points::{MetricKind, PointSet};
use crate::stream::RandomStream;

/// Largest set handled by [`gamma_exact_small`].
pub const EXACT_LIMIT: usize = 8;

/// `2^{2^n}`, saturating.
pub fn level_budget(n: usize) -> usize {
    if n >= 6 {
        usize::MAX
    } else {
        1usize.checked_shl(1 << n).unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaKind {
    ExactSmall,
    GreedyUpper,
    Dudley,
    SudakovLower,
    GaussianProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaValue {
    pub alpha: f64,
    pub value: f64,
    pub method: GammaKind,
    /// Monte Carlo standard error, for the Gaussian proxy only.
    pub stderr: Option<f64>,
}

impl GammaValue {
    fn new(alpha: f64, value: f64, method: GammaKind) -> Self {
        Self {
            alpha,
            value,
            method,
            stderr: None,
        }
    }
}

pub type Cell = Vec<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTree {
    set: Arc<PointSet>,
    levels: Vec<Vec<Cell>>,
}

#[derive(Serialize, Deserialize)]
struct TreeDoc {
    levels: Vec<Vec<Cell>>,
}

impl PartitionTree {
    /// Build a tree from explicit levels, checking admissibility.
    pub fn from_levels(set: Arc<PointSet>, levels: Vec<Vec<Cell>>) -> Result<Self> {
        let tree = Self::from_levels_unchecked(set, levels);
        tree.check_admissible()?;
        Ok(tree)
    }

    fn from_levels_unchecked(set: Arc<PointSet>, mut levels: Vec<Vec<Cell>>) -> Self {
        for level in &mut levels {
            for cell in level.iter_mut() {
                cell.sort_unstable();
            }
        }
        Self { set, levels }
    }

    pub fn set(&self) -> &Arc<PointSet> {
        &self.set
    }

    pub fn levels(&self) -> &[Vec<Cell>] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Level `n`, repeating the last stored level beyond the depth.
    pub fn level(&self, n: usize) -> &[Cell] {
        &self.levels[n.min(self.levels.len() - 1)]
    }

    /// Check the admissibility invariants: level 0 is the whole set, each
    /// level partitions the set, levels are nested, `|level n| ≤ 2^{2^n}`,
    /// and the final level is all singletons.
    pub fn check_admissible(&self) -> Result<()> {
        let m = self.set.len();
        let bad = |msg: String| Err(Error::NotAdmissible(msg));
        let Some(first) = self.levels.first() else {
            return bad("no levels".into());
        };
        if first.len() != 1 || first[0].len() != m {
            return bad("level 0 is not the whole set".into());
        }
        let mut parent_of_prev: Vec<usize> = vec![0; m];
        for (n, level) in self.levels.iter().enumerate() {
            if level.len() > level_budget(n) {
                return bad(format!("level {n} has {} cells, budget {}", level.len(), level_budget(n)));
            }
            let mut owner = vec![usize::MAX; m];
            for (c, cell) in level.iter().enumerate() {
                if cell.is_empty() {
                    return bad(format!("level {n} has an empty cell"));
                }
                let parent = cell.first().map(|&i| if i < m { parent_of_prev[i] } else { 0 });
                for &i in cell {
                    if i >= m {
                        return bad(format!("level {n} references point {i} of {m}"));
                    }
                    if owner[i] != usize::MAX {
                        return bad(format!("level {n}: point {i} lies in two cells"));
                    }
                    owner[i] = c;
                    if Some(parent_of_prev[i]) != parent {
                        return bad(format!("level {n}: cell {c} is not inside one cell of level {}", n.saturating_sub(1)));
                    }
                }
            }
            if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
                return bad(format!("level {n} does not cover point {i}"));
            }
            parent_of_prev = owner;
        }
        if self.levels.last().is_some_and(|l| l.iter().any(|c| c.len() > 1)) {
            return bad("final level is not all singletons".into());
        }
        Ok(())
    }

    /// Nested `level → cells → point indices` JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TreeDoc {
            levels: self.levels.clone(),
        })?)
    }

    pub fn from_json(set: Arc<PointSet>, json: &str) -> Result<Self> {
        let doc: TreeDoc = serde_json::from_str(json)?;
        Self::from_levels(set, doc.levels)
    }

    fn same_set(&self, other: &PointSet) -> bool {
        std::ptr::eq(self.set.as_ref(), other) || *self.set == *other
    }
}

/// Farthest-point traversal of `cell`: the cell's largest-norm point first,
/// then repeatedly the point farthest from those chosen (lowest index on
/// ties). Returns the order and each point's insertion radius.
fn farthest_point_order(set: &PointSet, cell: &[usize], metric: MetricKind, count: usize) -> (Vec<usize>, Vec<f64>) {
    let count = count.min(cell.len());
    let mut order = Vec::with_capacity(count);
    let mut radii = Vec::with_capacity(count);
    if count == 0 {
        return (order, radii);
    }
    let start = cell
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (pos, &i)| {
            let v = metric.norm(set.point(i));
            if v > bv {
                (pos, v)
            } else {
                (bi, bv)
            }
        })
        .0;
    let mut nearest = vec![f64::INFINITY; cell.len()];
    let mut chosen = vec![false; cell.len()];
    let mut next = start;
    let mut radius = f64::INFINITY;
    for _ in 0..count {
        chosen[next] = true;
        order.push(cell[next]);
        radii.push(radius);
        let c = set.point(cell[next]);
        for (pos, &i) in cell.iter().enumerate() {
            let d = metric.dist_unchecked(c, set.point(i));
            if d < nearest[pos] {
                nearest[pos] = d;
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for pos in 0..cell.len() {
            if !chosen[pos] && best.is_none_or(|(_, v)| nearest[pos] > v) {
                best = Some((pos, nearest[pos]));
            }
        }
        match best {
            Some((pos, v)) => {
                next = pos;
                radius = v;
            }
            None => break,
        }
    }
    (order, radii)
}

/// Split `cell` around `k` farthest-point centers, assigning every point to
/// its nearest center (earliest center on ties).
fn split_cell(set: &PointSet, cell: &[usize], metric: MetricKind, k: usize) -> Vec<Cell> {
    if k <= 1 || cell.len() <= 1 {
        return vec![cell.to_vec()];
    }
    if k >= cell.len() {
        return cell.iter().map(|&i| vec![i]).collect();
    }
    let (centers, _) = farthest_point_order(set, cell, metric, k);
    let mut children: Vec<Cell> = vec![Vec::new(); centers.len()];
    for &i in cell {
        let p = set.point(i);
        let (best, _) = centers
            .iter()
            .enumerate()
            .map(|(c, &ci)| (c, metric.dist_unchecked(p, set.point(ci))))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        children[best].push(i);
    }
    children.retain(|c| !c.is_empty());
    children
}

/// Children per cell: an equal share of the level budget rounded up, capped
/// by cell size, then trimmed from the last cells while over budget.
fn allocate(sizes: &[usize], budget: usize) -> Vec<usize> {
    let share = budget.div_ceil(sizes.len().max(1));
    let mut alloc: Vec<usize> = sizes.iter().map(|&c| c.min(share)).collect();
    let mut total: usize = alloc.iter().sum();
    let mut i = alloc.len();
    while total > budget && i > 0 {
        i -= 1;
        if alloc[i] > 1 {
            alloc[i] -= 1;
            total -= 1;
        }
        if i == 0 && total > budget {
            i = alloc.len();
        }
    }
    alloc
}

/// Greedy admissible tree: each level splits every cell by farthest-point
/// k-center under its share of the budget; once `2^{2^n} ≥ m` the level is
/// all singletons.
pub fn build_greedy_tree(set: &PointSet, metric: MetricKind) -> PartitionTree {
    let m = set.len();
    let mut levels = vec![vec![(0..m).collect::<Cell>()]];
    let mut n = 0;
    while levels[n].iter().any(|c| c.len() > 1) {
        n += 1;
        let prev = &levels[n - 1];
        let next = if level_budget(n) >= m {
            (0..m).map(|i| vec![i]).collect()
        } else {
            let sizes: Vec<usize> = prev.iter().map(Vec::len).collect();
            let alloc = allocate(&sizes, level_budget(n));
            prev.iter()
                .zip(alloc)
                .flat_map(|(cell, k)| split_cell(set, cell, metric, k))
                .collect()
        };
        levels.push(next);
    }
    PartitionTree::from_levels_unchecked(Arc::new(set.clone()), levels)
}

fn level_diameters(set: &PointSet, level: &[Cell], diam: &(impl Fn(&PointSet, &[usize]) -> f64 + Sync)) -> Vec<f64> {
    par::map_indexed(level.len(), Execution::auto(), |c| diam(set, &level[c]))
}

/// `sup_t Σ_n weight(n) · diam(A_n(t))` over the stored levels.
fn sup_of_sums(tree: &PartitionTree, weight: impl Fn(usize) -> f64, diam: impl Fn(&PointSet, &[usize]) -> f64 + Sync) -> f64 {
    let set = tree.set.as_ref();
    let mut acc = vec![0.0; set.len()];
    for (n, level) in tree.levels.iter().enumerate() {
        let w = weight(n);
        let diams = level_diameters(set, level, &diam);
        for (cell, d) in level.iter().zip(diams) {
            if d > 0.0 {
                for &i in cell {
                    acc[i] += w * d;
                }
            }
        }
    }
    acc.into_iter().fold(0.0, f64::max)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")))
    }
}

/// Evaluate `sup_t Σ_n 2^{n/α} Δ(A_n(t))` on `tree`, an upper bound for `γ_α`.
pub fn gamma_from_tree(tree: &PartitionTree, alpha: f64, metric: MetricKind) -> Result<GammaValue> {
    check_alpha(alpha)?;
    tree.check_admissible()?;
    let value = sup_of_sums(tree, |n| 2f64.powf(n as f64 / alpha), |s, c| s.diameter_unchecked(c, metric));
    Ok(GammaValue::new(alpha, value, GammaKind::GreedyUpper))
}

/// Restricted-growth enumeration of all partitions of `0..m` into at most
/// `max_blocks` blocks; `visit` receives the block label of every element.
fn for_each_partition(m: usize, max_blocks: usize, visit: &mut impl FnMut(&[usize], usize)) {
    fn rec(i: usize, used: usize, labels: &mut Vec<usize>, m: usize, max_blocks: usize, visit: &mut impl FnMut(&[usize], usize)) {
        if i == m {
            visit(labels, used);
            return;
        }
        for b in 0..=used.min(max_blocks - 1) {
            labels[i] = b;
            rec(i + 1, used.max(b + 1), labels, m, max_blocks, visit);
        }
    }
    let mut labels = vec![0; m];
    rec(0, 0, &mut labels, m, max_blocks, visit);
}

/// Exact `γ_α` and an optimal tree for `m ≤ 8`.
///
/// With `m ≤ 8 < 16` level 2 can always be all singletons, so the optimum is
/// `Δ(T) + 2^{1/α} · min over ≤4-block partitions of the largest block
/// diameter`, found by enumerating every such partition.
pub fn gamma_exact_with_tree(set: &PointSet, metric: MetricKind, alpha: f64) -> Result<(GammaValue, PartitionTree)> {
    check_alpha(alpha)?;
    let m = set.len();
    if m > EXACT_LIMIT {
        return Err(Error::TooLarge { m, limit: EXACT_LIMIT });
    }
    let mut dist = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..i {
            let d = set.distance(i, j, metric);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let whole = dist.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let mut best = (f64::INFINITY, vec![0; m], 1);
    for_each_partition(m, level_budget(1).min(m), &mut |labels, blocks| {
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..i {
                if labels[i] == labels[j] {
                    worst = worst.max(dist[i][j]);
                }
            }
        }
        if worst < best.0 {
            best = (worst, labels.to_vec(), blocks);
        }
    });
    let (level1_diam, labels, blocks) = best;
    let value = whole + 2f64.powf(alpha.recip()) * level1_diam;
    let mut levels = vec![vec![(0..m).collect::<Cell>()]];
    if m > 1 {
        let mut cells: Vec<Cell> = vec![Vec::new(); blocks];
        for (i, &b) in labels.iter().enumerate() {
            cells[b].push(i);
        }
        let singletons = cells.iter().all(|c| c.len() == 1);
        levels.push(cells);
        if !singletons {
            levels.push((0..m).map(|i| vec![i]).collect());
        }
    }
    let tree = PartitionTree::from_levels(Arc::new(set.clone()), levels)?;
    Ok((GammaValue::new(alpha, value, GammaKind::ExactSmall), tree))
}

/// Exact `γ_α` by exhaustive search, `m ≤ 8` only.
pub fn gamma_exact_small(set: &PointSet, metric: MetricKind, alpha: f64) -> Result<GammaValue> {
    gamma_exact_with_tree(set, metric, alpha).map(|(g, _)| g)
}

/// Insertion radii of a farthest-point traversal of the whole set; entry
/// `c` is the covering radius achieved by the first `c` centers.
fn traversal_radii(set: &PointSet, metric: MetricKind) -> Vec<f64> {
    let all: Vec<usize> = (0..set.len()).collect();
    let (_, radii) = farthest_point_order(set, &all, metric, set.len());
    radii
}

/// Entropy-sum upper companion of `γ₂`: `Σ_n 2^{n/2} e_n` with `e_n` the
/// covering radius of `min(m, 2^{2^n})` farthest-point centers.
pub fn dudley_bound(set: &PointSet, metric: MetricKind) -> GammaValue {
    let m = set.len();
    let radii = traversal_radii(set, metric);
    let mut total = 0.0;
    let mut n = 0;
    loop {
        // level 0 is the whole set: one center
        let centers = if n == 0 { 1 } else { level_budget(n).min(m) };
        if centers >= m {
            break;
        }
        total += 2f64.powf(n as f64 / 2.0) * radii[centers];
        n += 1;
    }
    GammaValue::new(2.0, total, GammaKind::Dudley)
}

/// Packing lower companion of `γ₂`: `max_ε ε √(ln P(ε))`, where the prefix
/// of a farthest-point traversal up to radius `ε` is an ε-packing. The
/// maximum is taken over the traversal's own radii, where `P` jumps.
pub fn sudakov_lower(set: &PointSet, metric: MetricKind) -> GammaValue {
    let radii = traversal_radii(set, metric);
    let value = radii
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &r)| r * ((i + 1) as f64).ln().sqrt())
        .fold(0.0, f64::max);
    GammaValue::new(2.0, value, GammaKind::SudakovLower)
}

/// `E sup_t Σ t_k g_k`, which equals `γ₂(T, d₂)` up to universal constants.
pub fn gaussian_gamma2_proxy(set: &PointSet, samples: u64, stream: RandomStream) -> Result<GammaValue> {
    let est = esup_mc(set, &Driver::Gaussian, samples, stream)?;
    Ok(GammaValue {
        alpha: 2.0,
        value: est.mean,
        method: GammaKind::GaussianProxy,
        stderr: Some(est.stderr),
    })
}

/// Level `n ≥ 1` of the result holds the non-empty intersections of level
/// `n−1` of `a` with level `n−1` of `b`; level 0 is the whole set.
pub fn intersect_trees(a: &PartitionTree, b: &PartitionTree) -> Result<PartitionTree> {
    if !a.same_set(&b.set) {
        return Err(Error::MismatchedSets);
    }
    let m = a.set.len();
    let mut levels = vec![vec![(0..m).collect::<Cell>()]];
    let mut n = 1;
    while levels[n - 1].iter().any(|c| c.len() > 1) {
        let (la, lb) = (a.level(n - 1), b.level(n - 1));
        let mut owner_b = vec![0; m];
        for (j, cell) in lb.iter().enumerate() {
            for &i in cell {
                owner_b[i] = j;
            }
        }
        let mut next = Vec::new();
        for cell in la {
            let mut parts: Vec<Cell> = vec![Vec::new(); lb.len()];
            for &i in cell {
                parts[owner_b[i]].push(i);
            }
            next.extend(parts.into_iter().filter(|p| !p.is_empty()));
        }
        levels.push(next);
        n += 1;
    }
    PartitionTree::from_levels(Arc::clone(&a.set), levels)
}

/// `sup_t Σ_k Δ_k(A_k(t))` with
/// `Δ_k(A) = sup_{s,u∈A} [2^{k/2}‖s−u‖₂ + 2^{k/r}‖s−u‖_∞]`, the moment-bound
/// diameter at order `p = 2^k` without its law-dependent constant.
pub fn chaining_bound(set: &PointSet, r: f64, tree: &PartitionTree) -> Result<f64> {
    if !(r > 0.0 && r <= 2.0) {
        return Err(Error::InvalidParameter(format!("r must lie in (0, 2], got {r}")));
    }
    if !tree.same_set(set) {
        return Err(Error::MismatchedSets);
    }
    tree.check_admissible()?;
    let set_ref = tree.set.as_ref();
    let mut acc = vec![0.0; set_ref.len()];
    for (n, level) in tree.levels.iter().enumerate() {
        let (a, b) = (2f64.powf(n as f64 / 2.0), 2f64.powf(n as f64 / r));
        let diams = level_diameters(set_ref, level, &|s: &PointSet, cell: &[usize]| {
            let mut best = 0.0f64;
            for (x, &i) in cell.iter().enumerate() {
                for &j in &cell[x + 1..] {
                    let (p, q) = (s.point(i), s.point(j));
                    let v = a * MetricKind::L2.dist_unchecked(p, q) + b * MetricKind::Linf.dist_unchecked(p, q);
                    best = best.max(v);
                }
            }
            best
        });
        for (cell, d) in level.iter().zip(diams) {
            for &i in cell {
                acc[i] += d;
            }
        }
    }
    Ok(acc.into_iter().fold(0.0, f64::max))
}

/// The chaining tree used for the upper bound: greedy trees for `d₂` and
/// `d_∞`, intersected level by level.
pub fn chaining_tree(set: &PointSet) -> Result<PartitionTree> {
    let a = build_greedy_tree(set, MetricKind::L2);
    let b = build_greedy_tree(set, MetricKind::Linf);
    intersect_trees(&a, &b)
}
