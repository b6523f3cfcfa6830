//! Axis-aligned decision trees, a class-weighted random forest and
//! gradient-boosted trees on the logistic loss.
//!
//! Splits have the form `x[f] <= t` where `t` is a feature value observed on the
//! left side, so fitted trees only depend on the ordering of each feature.

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::sigmoid;
use super::mix_seed;

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut k = 0usize;
        loop {
            let node = &self.nodes[k];
            if node.feature == LEAF {
                return node.value;
            }
            k = if row[node.feature as usize] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, k: usize) -> usize {
            let n = &t.nodes[k];
            if n.feature == LEAF {
                0
            } else {
                1 + walk(t, n.left as usize).max(walk(t, n.right as usize))
            }
        }
        walk(self, 0)
    }
}

/// Additive per-row statistics: `(a, b)` plus the row multiplicity `n`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Stats {
    a: f64,
    b: f64,
    n: f64,
}

impl Stats {
    fn add(&mut self, o: Stats) {
        self.a += o.a;
        self.b += o.b;
        self.n += o.n;
    }

    fn minus(self, o: Stats) -> Stats {
        Stats {
            a: self.a - o.a,
            b: self.b - o.b,
            n: self.n - o.n,
        }
    }
}

trait Criterion {
    fn splittable(&self, s: Stats) -> bool;
    fn gain(&self, parent: Stats, left: Stats, right: Stats) -> f64;
    fn accept(&self, gain: f64) -> bool;
    fn leaf(&self, s: Stats) -> f64;
}

/// Weighted Gini impurity; `a` = negative weight, `b` = positive weight.
struct Gini;

impl Gini {
    fn weighted_impurity(s: Stats) -> f64 {
        let w = s.a + s.b;
        if w <= 0.0 {
            0.0
        } else {
            w - (s.a * s.a + s.b * s.b) / w
        }
    }
}

impl Criterion for Gini {
    fn splittable(&self, s: Stats) -> bool {
        s.a > 0.0 && s.b > 0.0
    }

    fn gain(&self, parent: Stats, left: Stats, right: Stats) -> f64 {
        Self::weighted_impurity(parent) - Self::weighted_impurity(left) - Self::weighted_impurity(right)
    }

    /// Zero-gain splits are allowed in impure nodes so XOR-like structure can be reached.
    fn accept(&self, gain: f64) -> bool {
        gain >= -1e-12
    }

    fn leaf(&self, s: Stats) -> f64 {
        let w = s.a + s.b;
        if w > 0.0 {
            s.b / w
        } else {
            0.5
        }
    }
}

/// Second-order boosting criterion; `a` = gradient sum, `b` = hessian sum.
struct Newton {
    lambda: f64,
    min_hessian: f64,
}

impl Newton {
    fn score(&self, s: Stats) -> f64 {
        s.a * s.a / (s.b + self.lambda)
    }
}

impl Criterion for Newton {
    fn splittable(&self, s: Stats) -> bool {
        s.b >= 2.0 * self.min_hessian
    }

    fn gain(&self, parent: Stats, left: Stats, right: Stats) -> f64 {
        if left.b < self.min_hessian || right.b < self.min_hessian {
            return f64::NEG_INFINITY;
        }
        self.score(left) + self.score(right) - self.score(parent)
    }

    fn accept(&self, gain: f64) -> bool {
        gain > 1e-12
    }

    fn leaf(&self, s: Stats) -> f64 {
        -s.a / (s.b + self.lambda)
    }
}

struct GrowParams {
    max_depth: usize,
    min_leaf: f64,
    max_features: usize,
}

/// Row indices sorted by each feature.
fn presort(x: &Array2<f64>, rows: &[usize]) -> Vec<Vec<u32>> {
    (0..x.ncols())
        .map(|f| {
            let mut r: Vec<u32> = rows.iter().map(|&i| i as u32).collect();
            r.sort_by(|&a, &b| x[[a as usize, f]].total_cmp(&x[[b as usize, f]]).then(a.cmp(&b)));
            r
        })
        .collect()
}

/// Level-wise exact greedy growth over presorted rows. `row_stats[r].n == 0`
/// excludes row `r` (out of bootstrap).
fn grow<C: Criterion>(
    x: &Array2<f64>,
    sorted: &[Vec<u32>],
    row_stats: &[Stats],
    criterion: &C,
    params: &GrowParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let d = x.ncols();
    let mut node_of = vec![LEAF; x.nrows()];
    let mut root = Stats::default();
    for &r in &sorted[0] {
        if row_stats[r as usize].n > 0.0 {
            node_of[r as usize] = 0;
            root.add(row_stats[r as usize]);
        }
    }
    let mut nodes = vec![TreeNode {
        feature: LEAF,
        threshold: 0.0,
        left: 0,
        right: 0,
        value: criterion.leaf(root),
    }];
    let mut stats = vec![root];
    let mut frontier: Vec<u32> = vec![0];

    for _ in 0..params.max_depth {
        // Slot per splittable frontier node.
        let mut slot_of = vec![u32::MAX; nodes.len()];
        let mut slots: Vec<u32> = Vec::new();
        for &k in &frontier {
            let s = stats[k as usize];
            if s.n >= 2.0 * params.min_leaf && criterion.splittable(s) {
                slot_of[k as usize] = slots.len() as u32;
                slots.push(k);
            }
        }
        if slots.is_empty() {
            break;
        }
        let allowed: Vec<Vec<bool>> = slots
            .iter()
            .map(|_| {
                let mut mask = vec![params.max_features >= d; d];
                if params.max_features < d {
                    for f in sample(rng, d, params.max_features) {
                        mask[f] = true;
                    }
                }
                mask
            })
            .collect();

        let mut best: Vec<(f64, u32, f64)> = vec![(f64::NEG_INFINITY, LEAF, 0.0); slots.len()];
        let scan = |allowed: &[Vec<bool>], best: &mut [(f64, u32, f64)]| {
            let mut run = vec![Stats::default(); slots.len()];
            let mut last: Vec<Option<f64>> = vec![None; slots.len()];
            for (f, order) in sorted.iter().enumerate() {
                if !allowed.iter().any(|m| m[f]) {
                    continue;
                }
                run.iter_mut().for_each(|s| *s = Stats::default());
                last.iter_mut().for_each(|l| *l = None);
                for &r in order {
                    let node = node_of[r as usize];
                    if node == LEAF {
                        continue;
                    }
                    let slot = slot_of[node as usize];
                    if slot == u32::MAX || !allowed[slot as usize][f] {
                        continue;
                    }
                    let slot = slot as usize;
                    let v = x[[r as usize, f]];
                    if let Some(lv) = last[slot] {
                        if v > lv {
                            let parent = stats[slots[slot] as usize];
                            let left = run[slot];
                            let right = parent.minus(left);
                            if left.n >= params.min_leaf && right.n >= params.min_leaf {
                                let g = criterion.gain(parent, left, right);
                                if g > best[slot].0 {
                                    best[slot] = (g, f as u32, lv);
                                }
                            }
                        }
                    }
                    run[slot].add(row_stats[r as usize]);
                    last[slot] = Some(v);
                }
            }
        };
        scan(&allowed, &mut best);
        // Nodes whose sampled features admit no partition fall back to the rest.
        if params.max_features < d {
            let retry: Vec<Vec<bool>> = allowed
                .iter()
                .zip(&best)
                .map(|(mask, b)| {
                    if b.1 == LEAF {
                        mask.iter().map(|&m| !m).collect()
                    } else {
                        vec![false; d]
                    }
                })
                .collect();
            if retry.iter().any(|m| m.iter().any(|&v| v)) {
                scan(&retry, &mut best);
            }
        }

        let mut next = Vec::new();
        let mut children: Vec<Option<(u32, u32)>> = vec![None; slots.len()];
        for (slot, &k) in slots.iter().enumerate() {
            let (g, f, t) = best[slot];
            if f == LEAF || !criterion.accept(g) {
                continue;
            }
            let l = nodes.len() as u32;
            for _ in 0..2 {
                nodes.push(TreeNode {
                    feature: LEAF,
                    threshold: 0.0,
                    left: 0,
                    right: 0,
                    value: 0.0,
                });
                stats.push(Stats::default());
            }
            let node = &mut nodes[k as usize];
            node.feature = f;
            node.threshold = t;
            node.left = l;
            node.right = l + 1;
            children[slot] = Some((l, l + 1));
            next.push(l);
            next.push(l + 1);
        }
        if next.is_empty() {
            break;
        }
        for r in 0..x.nrows() {
            let node = node_of[r];
            if node == LEAF {
                continue;
            }
            let slot = slot_of[node as usize];
            let child = if slot == u32::MAX {
                None
            } else {
                children[slot as usize]
            };
            match child {
                Some((l, rr)) => {
                    let n = &nodes[node as usize];
                    let c = if x[[r, n.feature as usize]] <= n.threshold { l } else { rr };
                    node_of[r] = c;
                    stats[c as usize].add(row_stats[r]);
                }
                None => node_of[r] = LEAF,
            }
        }
        for &c in &next {
            nodes[c as usize].value = criterion.leaf(stats[c as usize]);
        }
        frontier = next;
    }
    Tree { nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features drawn per node; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Class-weighted forest: positive rows weigh `pos_weight`.
    pub fn fit(x: &Array2<f64>, y: &[bool], rows: &[usize], pos_weight: f64, params: &ForestParams, seed: u64) -> Self {
        let d = x.ncols();
        let sorted = presort(x, rows);
        let max_features = params
            .max_features
            .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1))
            .clamp(1, d.max(1));
        let grow_params = GrowParams {
            max_depth: params.max_depth,
            min_leaf: params.min_samples_leaf.max(1) as f64,
            max_features,
        };
        let trees = (0..params.trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[t as u64, 0xf0]));
                let mut counts = vec![0.0; x.nrows()];
                if params.bootstrap {
                    for _ in 0..rows.len() {
                        let pick = rows[rand::Rng::gen_range(&mut rng, 0..rows.len())];
                        counts[pick] += 1.0;
                    }
                } else {
                    for &r in rows {
                        counts[r] = 1.0;
                    }
                }
                let row_stats: Vec<Stats> = (0..x.nrows())
                    .map(|r| {
                        let c = counts[r];
                        if y[r] {
                            Stats { a: 0.0, b: c * pos_weight, n: c }
                        } else {
                            Stats { a: c, b: 0.0, n: c }
                        }
                    })
                    .collect();
                grow(x, &sorted, &row_stats, &Gini, &grow_params, &mut rng)
            })
            .collect();
        Self { trees }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        let m = self.trees.len().max(1) as f64;
        x.rows()
            .into_iter()
            .map(|row| self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub lambda: f64,
    pub min_child_hessian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosted {
    pub prior: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
}

impl GradientBoosted {
    pub fn fit(x: &Array2<f64>, y: &[bool], rows: &[usize], pos_weight: f64, params: &BoostParams) -> Self {
        let weight = |r: usize| if y[r] { pos_weight } else { 1.0 };
        let wpos: f64 = rows.iter().filter(|&&r| y[r]).map(|&r| weight(r)).sum();
        let wneg: f64 = rows.iter().filter(|&&r| !y[r]).map(|&r| weight(r)).sum();
        let prior = (wpos.max(1e-12) / wneg.max(1e-12)).ln();
        let sorted = presort(x, rows);
        let criterion = Newton {
            lambda: params.lambda,
            min_hessian: params.min_child_hessian,
        };
        let grow_params = GrowParams {
            max_depth: params.max_depth,
            min_leaf: 1.0,
            max_features: x.ncols(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut margin = vec![prior; x.nrows()];
        let mut trees = Vec::with_capacity(params.rounds);
        let mut row_stats = vec![Stats::default(); x.nrows()];
        for _ in 0..params.rounds {
            if params.shrinkage == 0.0 {
                break;
            }
            for &r in rows {
                let p = sigmoid(margin[r]);
                let w = weight(r);
                let target = if y[r] { 1.0 } else { 0.0 };
                row_stats[r] = Stats {
                    a: w * (p - target),
                    b: w * (p * (1.0 - p)).max(1e-16),
                    n: 1.0,
                };
            }
            let tree = grow(x, &sorted, &row_stats, &criterion, &grow_params, &mut rng);
            for &r in rows {
                margin[r] += params.shrinkage * tree.predict_row(x.row(r));
            }
            trees.push(tree);
        }
        Self {
            prior,
            shrinkage: params.shrinkage,
            trees,
        }
    }

    pub fn margin(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.prior + self.shrinkage * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| sigmoid(self.margin(r))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor() -> (Array2<f64>, Vec<bool>) {
        let x = Array2::from_shape_vec((4, 2), vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        (x, vec![false, true, true, false])
    }

    #[test]
    fn single_tree_fits_xor_through_zero_gain_root() {
        let (x, y) = xor();
        let params = ForestParams {
            trees: 1,
            max_depth: 2,
            min_samples_leaf: 1,
            max_features: Some(2),
            bootstrap: false,
        };
        let f = Forest::fit(&x, &y, &[0, 1, 2, 3], 1.0, &params, 1);
        assert_eq!(f.trees[0].depth(), 2);
        let p = f.predict(&x);
        assert_eq!(p, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn forest_fits_xor() {
        let (x, y) = xor();
        let params = ForestParams {
            trees: 25,
            max_depth: 2,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
        };
        let p = Forest::fit(&x, &y, &[0, 1, 2, 3], 1.0, &params, 3).predict(&x);
        for (pi, yi) in p.iter().zip(&y) {
            assert_eq!(*pi > 0.5, *yi, "{p:?}");
        }
    }

    #[test]
    fn zero_shrinkage_predicts_prior() {
        let (x, y) = xor();
        let params = BoostParams {
            rounds: 20,
            max_depth: 3,
            shrinkage: 0.0,
            lambda: 1.0,
            min_child_hessian: 1e-6,
        };
        let m = GradientBoosted::fit(&x, &[true, false, false, false], &[0, 1, 2, 3], 1.0, &params);
        let p = m.predict(&x);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-12));
        let _ = y;
    }

    #[test]
    fn boosting_separates_a_threshold() {
        let x = Array2::from_shape_fn((40, 1), |(i, _)| i as f64);
        let y: Vec<bool> = (0..40).map(|i| i >= 30).collect();
        let rows: Vec<usize> = (0..40).collect();
        let params = BoostParams {
            rounds: 50,
            max_depth: 3,
            shrinkage: 0.1,
            lambda: 1.0,
            min_child_hessian: 1e-6,
        };
        let p = GradientBoosted::fit(&x, &y, &rows, 3.0, &params).predict(&x);
        assert!(p[35] > 0.9 && p[5] < 0.1);
    }
}
