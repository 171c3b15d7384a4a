//! CART regression tree grown on presorted feature orders.
//!
//! Every feature keeps its rows sorted by value (ties by row index); a split
//! stably partitions each order, so nodes always see their rows in sorted
//! order without re-sorting. Rows carry integer weights, which is how
//! bootstrap duplicates are represented.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Design;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
        count: f64,
    },
    /// Rows with `x[feature] <= threshold` go left. `gain` is the weighted SSE
    /// decrease achieved by the split.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
        count: f64,
    },
}

/// Flat arena, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn constant(value: f64, count: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { value, count }],
        }
    }

    #[inline]
    pub fn predict_with(&self, x: &dyn Fn(usize) -> f64) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if x(feature) <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, design: &Design) -> Vec<f64> {
        (0..design.n_rows())
            .map(|i| self.predict_with(&|j| design.get(i, j)))
            .collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Marks every feature used by at least one split.
    pub fn used_features(&self, n_features: usize) -> Vec<bool> {
        let mut used = vec![false; n_features];
        for n in &self.nodes {
            if let Node::Split { feature, .. } = n {
                used[*feature] = true;
            }
        }
        used
    }

    /// Adds each split's gain to its feature's slot.
    pub fn accumulate_gain(&self, into: &mut [f64]) {
        for n in &self.nodes {
            if let Node::Split { feature, gain, .. } = n {
                into[*feature] += gain;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Minimum (weighted) row count per leaf.
    pub min_leaf: usize,
    /// Candidate features per node; `None` means all.
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_leaf: 5,
            mtry: None,
            max_depth: None,
        }
    }
}

impl TreeParams {
    pub(crate) fn validate(&self, n_features: usize) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(Error::InvalidParameter("min_leaf must be >= 1".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > n_features {
                return Err(Error::InvalidParameter(format!(
                    "mtry {m} outside 1..={n_features}"
                )));
            }
        }
        Ok(())
    }
}

/// Fits one tree on all rows with unit weights.
pub fn fit_tree<R: Rng + ?Sized>(design: &Design, y: &[f64], params: &TreeParams, rng: &mut R) -> Result<Tree> {
    design.check_target(y)?;
    params.validate(design.n_cols())?;
    if design.n_rows() < 2 * params.min_leaf {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot hold two leaves of {}",
            design.n_rows(),
            params.min_leaf
        )));
    }
    let presorted = Presorted::new(design);
    let weights = vec![1.0; design.n_rows()];
    Ok(grow(&presorted, y, &weights, params, rng))
}

/// Per-feature row orders sorted by value, ties by row index.
pub(crate) struct Presorted<'a> {
    design: &'a Design,
    order: Vec<Vec<u32>>,
}

impl<'a> Presorted<'a> {
    pub(crate) fn new(design: &'a Design) -> Self {
        let order = (0..design.n_cols())
            .map(|j| {
                let col = design.column(j);
                let mut idx: Vec<u32> = (0..design.n_rows() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { design, order }
    }
}

struct Builder<'a, R: ?Sized> {
    y: &'a [f64],
    weights: &'a [f64],
    params: &'a TreeParams,
    /// Per feature: active rows in value order, and the matching values.
    order: Vec<Vec<u32>>,
    values: Vec<Vec<f64>>,
    goes_left: Vec<bool>,
    scratch_rows: Vec<u32>,
    scratch_values: Vec<f64>,
    nodes: Vec<Node>,
    rng: &'a mut R,
}

struct Best {
    feature: usize,
    position: usize,
    threshold: f64,
    gain: f64,
}

/// Grows a tree on rows with positive weight.
pub(crate) fn grow<R: Rng + ?Sized>(
    presorted: &Presorted<'_>,
    y: &[f64],
    weights: &[f64],
    params: &TreeParams,
    rng: &mut R,
) -> Tree {
    let order: Vec<Vec<u32>> = presorted
        .order
        .iter()
        .map(|o| o.iter().copied().filter(|&i| weights[i as usize] > 0.0).collect())
        .collect();
    let values = order
        .iter()
        .enumerate()
        .map(|(j, o)| {
            let col = presorted.design.column(j);
            o.iter().map(|&i| col[i as usize]).collect()
        })
        .collect();
    let active = order.first().map_or(0, Vec::len);
    let mut b = Builder {
        y,
        weights,
        params,
        order,
        values,
        goes_left: vec![false; y.len()],
        scratch_rows: vec![0; active],
        scratch_values: vec![0.0; active],
        nodes: Vec::new(),
        rng,
    };
    b.node(0, active, 0);
    Tree { nodes: b.nodes }
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn node(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let (mut w_sum, mut s_sum) = (0.0, 0.0);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &self.order[0][lo..hi] {
            let (w, yi) = (self.weights[i as usize], self.y[i as usize]);
            w_sum += w;
            s_sum += w * yi;
            y_min = y_min.min(yi);
            y_max = y_max.max(yi);
        }
        let value = s_sum / w_sum;
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value,
            count: w_sum,
        });

        let min_leaf = self.params.min_leaf as f64;
        if w_sum < 2.0 * min_leaf || y_min == y_max || self.params.max_depth.is_some_and(|d| depth >= d) {
            return at;
        }
        let Some(best) = self.best_split(lo, hi, value, w_sum) else {
            return at;
        };

        let split_at = best.position + 1;
        for (k, &i) in self.order[best.feature][lo..hi].iter().enumerate() {
            self.goes_left[i as usize] = k < split_at - lo;
        }
        // Stable, branchless partition of every feature's order: left rows
        // compact in place, right rows collect in scratch and are appended.
        for f in 0..self.order.len() {
            let rows = &mut self.order[f][lo..hi];
            let vals = &mut self.values[f][lo..hi];
            let (mut l, mut r) = (0, 0);
            for k in 0..rows.len() {
                let (i, v) = (rows[k], vals[k]);
                let left = self.goes_left[i as usize] as usize;
                rows[l] = i;
                vals[l] = v;
                self.scratch_rows[r] = i;
                self.scratch_values[r] = v;
                l += left;
                r += 1 - left;
            }
            rows[l..].copy_from_slice(&self.scratch_rows[..r]);
            vals[l..].copy_from_slice(&self.scratch_values[..r]);
        }

        let left = self.node(lo, split_at, depth + 1);
        let right = self.node(split_at, hi, depth + 1);
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            gain: best.gain,
            count: w_sum,
        };
        at
    }

    fn best_split(&mut self, lo: usize, hi: usize, mean: f64, w_sum: f64) -> Option<Best> {
        let p = self.order.len();
        let candidates = candidate_features(p, self.params.mtry, self.rng);
        let min_leaf = self.params.min_leaf as f64;

        let (mut s_total, mut sse) = (0.0, 0.0);
        for &i in &self.order[0][lo..hi] {
            let (w, d) = (self.weights[i as usize], self.y[i as usize] - mean);
            s_total += w * d;
            sse += w * d * d;
        }
        let parent = s_total * s_total / w_sum;
        let tolerance = sse * 1e-12;

        let mut best: Option<Best> = None;
        for f in candidates {
            let rows = &self.order[f][lo..hi];
            let xs = &self.values[f][lo..hi];
            let (mut wl, mut sl) = (0.0, 0.0);
            for k in 0..rows.len() - 1 {
                let i = rows[k] as usize;
                let w = self.weights[i];
                wl += w;
                sl += w * (self.y[i] - mean);
                let (a, b) = (xs[k], xs[k + 1]);
                let wr = w_sum - wl;
                if a >= b || wl < min_leaf || wr < min_leaf {
                    continue;
                }
                let sr = s_total - sl;
                let gain = sl * sl / wl + sr * sr / wr - parent;
                if gain > tolerance && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Best {
                        feature: f,
                        position: lo + k,
                        threshold: midpoint(a, b),
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Ascending candidate feature indices for one node.
pub(crate) fn candidate_features<R: Rng + ?Sized>(p: usize, mtry: Option<usize>, rng: &mut R) -> Vec<usize> {
    match mtry {
        Some(m) if m < p => {
            let mut c = rand::seq::index::sample(rng, p, m).into_vec();
            c.sort_unstable();
            c
        }
        _ => (0..p).collect(),
    }
}

/// Midpoint of `a < b`, never equal to `b` so that `a` still goes left.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let t = a * 0.5 + b * 0.5;
    if t >= b || t < a {
        a
    } else {
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::testutil::design;
    use crate::rng::job_rng;
    use proptest::prelude::*;

    /// Independent builder: re-sorts each node's rows per candidate feature
    /// and scans every split point. Must match the presorted builder exactly.
    fn reference_tree(d: &Design, y: &[f64], w: &[f64], params: &TreeParams, seed: u64) -> Tree {
        fn build(
            d: &Design,
            y: &[f64],
            w: &[f64],
            params: &TreeParams,
            rng: &mut crate::rng::JobRng,
            rows: Vec<usize>,
            depth: usize,
            nodes: &mut Vec<Node>,
        ) -> usize {
            let mut by_first = rows.clone();
            by_first.sort_by(|&a, &b| d.get(a, 0).total_cmp(&d.get(b, 0)).then(a.cmp(&b)));
            let w_sum: f64 = by_first.iter().map(|&i| w[i]).sum();
            let s_sum: f64 = by_first.iter().map(|&i| w[i] * y[i]).sum();
            let mean = s_sum / w_sum;
            let at = nodes.len();
            nodes.push(Node::Leaf { value: mean, count: w_sum });
            let constant = by_first.iter().all(|&i| y[i] == y[by_first[0]]);
            let ml = params.min_leaf as f64;
            if w_sum < 2.0 * ml || constant || params.max_depth.is_some_and(|m| depth >= m) {
                return at;
            }
            let cands = candidate_features(d.n_cols(), params.mtry, rng);
            let s_total: f64 = by_first.iter().map(|&i| w[i] * (y[i] - mean)).sum();
            let sse: f64 = by_first.iter().map(|&i| w[i] * (y[i] - mean).powi(2)).sum();
            let mut best: Option<(f64, usize, f64)> = None;
            for f in cands {
                let mut s = rows.clone();
                s.sort_by(|&a, &b| d.get(a, f).total_cmp(&d.get(b, f)).then(a.cmp(&b)));
                for k in 0..s.len() - 1 {
                    let wl: f64 = s[..=k].iter().map(|&i| w[i]).sum::<f64>();
                    let mut sl = 0.0;
                    for &i in &s[..=k] {
                        sl += w[i] * (y[i] - mean);
                    }
                    let (a, b) = (d.get(s[k], f), d.get(s[k + 1], f));
                    if a >= b || wl < ml || w_sum - wl < ml {
                        continue;
                    }
                    let sr = s_total - sl;
                    let gain = sl * sl / wl + sr * sr / (w_sum - wl) - s_total * s_total / w_sum;
                    if gain > sse * 1e-12 && best.is_none_or(|b| gain > b.0) {
                        best = Some((gain, f, midpoint(a, b)));
                    }
                }
            }
            let Some((gain, feature, threshold)) = best else { return at };
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| d.get(i, feature) <= threshold);
            let left = build(d, y, w, params, rng, l, depth + 1, nodes);
            let right = build(d, y, w, params, rng, r, depth + 1, nodes);
            nodes[at] = Node::Split { feature, threshold, left, right, gain, count: w_sum };
            at
        }
        let mut rng = job_rng(seed, &[]);
        let rows: Vec<usize> = (0..y.len()).filter(|&i| w[i] > 0.0).collect();
        let mut nodes = Vec::new();
        build(d, y, w, params, &mut rng, rows, 0, &mut nodes);
        Tree { nodes }
    }

    fn params(min_leaf: usize) -> TreeParams {
        TreeParams { min_leaf, mtry: None, max_depth: None }
    }

    #[test]
    fn binary_feature_gives_depth_one() {
        let d = design(vec![vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]]);
        let y = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let t = fit_tree(&d, &y, &params(1), &mut job_rng(0, &[])).unwrap();
        // Group means 2 and 11; the perfect-split case uses distinct constant groups.
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
        let y2 = [2.0, 2.0, 2.0, 11.0, 11.0, 11.0];
        let t2 = fit_tree(&d, &y2, &params(1), &mut job_rng(0, &[])).unwrap();
        assert_eq!(t2.depth(), 1);
        let pred = t2.predict(&d);
        let sse: f64 = pred.iter().zip(&y2).map(|(p, y)| (p - y).powi(2)).sum();
        assert_eq!(sse, 0.0);
        assert_eq!(pred, y2.to_vec());
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let d = design(vec![(0..20).map(f64::from).collect()]);
        let t = fit_tree(&d, &[4.5; 20], &params(1), &mut job_rng(0, &[])).unwrap();
        assert_eq!(t.nodes, vec![Node::Leaf { value: 4.5, count: 20.0 }]);
    }

    #[test]
    fn four_point_split() {
        let d = design(vec![vec![1.0, 2.0, 3.0, 4.0]]);
        let t = fit_tree(&d, &[0.0, 0.0, 10.0, 10.0], &params(1), &mut job_rng(0, &[])).unwrap();
        let Node::Split { threshold, left, right, .. } = t.nodes[0] else { panic!() };
        assert!(threshold > 2.0 && threshold <= 3.0);
        assert_eq!(t.nodes[left], Node::Leaf { value: 0.0, count: 2.0 });
        assert_eq!(t.nodes[right], Node::Leaf { value: 10.0, count: 2.0 });
    }

    #[test]
    fn empty_design_is_an_error() {
        let d = Design::new(vec![], vec![]).unwrap();
        assert!(fit_tree(&d, &[], &params(1), &mut job_rng(0, &[])).is_err());
    }

    #[test]
    fn min_leaf_respected() {
        let d = design(vec![(0..50).map(|i| (i * 7 % 50) as f64).collect()]);
        let y: Vec<f64> = (0..50).map(|i| ((i * 13) % 17) as f64).collect();
        let t = fit_tree(&d, &y, &params(4), &mut job_rng(1, &[])).unwrap();
        for n in &t.nodes {
            if let Node::Leaf { count, .. } = n {
                assert!(*count >= 4.0);
            }
        }
    }

    #[test]
    fn depth_cap() {
        let d = design(vec![(0..64).map(f64::from).collect()]);
        let y: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let t = fit_tree(&d, &y, &TreeParams { min_leaf: 1, mtry: None, max_depth: Some(3) }, &mut job_rng(0, &[])).unwrap();
        assert!(t.depth() <= 3);
        assert!(t.n_leaves() <= 8);
    }

    #[test]
    fn full_tree_interpolates_training_data() {
        let d = design(vec![(0..40).map(|i| (i * 17 % 40) as f64).collect(), (0..40).map(|i| (i % 3) as f64).collect()]);
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).cos()).collect();
        let t = fit_tree(&d, &y, &params(1), &mut job_rng(0, &[])).unwrap();
        assert_eq!(t.predict(&d), y);
    }

    #[test]
    fn tie_breaks_to_lowest_feature() {
        let x: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0];
        let d = design(vec![x.clone(), x]);
        let t = fit_tree(&d, &[0.0, 0.0, 5.0, 5.0], &params(1), &mut job_rng(0, &[])).unwrap();
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    fn arb_problem() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
        (5usize..60, 1usize..5).prop_flat_map(|(n, p)| {
            (
                prop::collection::vec(prop::collection::vec((0i32..12).prop_map(f64::from), n), p),
                prop::collection::vec((-20i32..20).prop_map(|v| f64::from(v) / 4.0), n),
                prop::collection::vec(0u8..3, n).prop_map(|w| w.into_iter().map(f64::from).collect()),
            )
        })
    }

    proptest! {
        #[test]
        fn presorted_builder_matches_reference((cols, y, mut w) in arb_problem(), min_leaf in 1usize..4, mtry_all in any::<bool>(), seed in any::<u64>()) {
            w[0] = 1.0;
            let d = design(cols);
            let p = d.n_cols();
            let params = TreeParams { min_leaf, mtry: if mtry_all { None } else { Some(p.div_ceil(2)) }, max_depth: None };
            let presorted = Presorted::new(&d);
            let fast = grow(&presorted, &y, &w, &params, &mut job_rng(seed, &[]));
            let slow = reference_tree(&d, &y, &w, &params, seed);
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn monotone_transform_keeps_partition((cols, y, _w) in arb_problem()) {
            let d = design(cols.clone());
            let mut moved = cols;
            moved[0] = moved[0].iter().map(|v| (v * 0.5).exp() - 3.0).collect();
            let d2 = design(moved);
            let a = fit_tree(&d, &y, &params(1), &mut job_rng(3, &[])).unwrap();
            let b = fit_tree(&d2, &y, &params(1), &mut job_rng(3, &[])).unwrap();
            prop_assert_eq!(a.predict(&d), b.predict(&d2));
            prop_assert_eq!(a.nodes.len(), b.nodes.len());
        }
    }
}
