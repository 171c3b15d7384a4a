//! Bagged regression forest with out-of-bag prediction and importances.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Presorted, Tree, TreeParams};
use super::{Design, Regressor};
use crate::error::{Error, Result};
use crate::rng::job_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` resolves to `ceil(p / 3)`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
    /// When false every tree sees each row exactly once (test hook).
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            mtry: None,
            min_leaf: 5,
            max_depth: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry.unwrap_or_else(|| n_features.div_ceil(3).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub names: Vec<String>,
    pub params: ForestParams,
    pub n_train: usize,
    pub trees: Vec<Tree>,
    /// Per tree, how often each training row was drawn into its bootstrap.
    pub inbag: Vec<Vec<u32>>,
}

/// Out-of-bag predictions; `prediction[i]` is NaN when `coverage[i] == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OobPrediction {
    pub prediction: Vec<f64>,
    pub coverage: Vec<u32>,
}

impl OobPrediction {
    pub fn uncovered(&self) -> usize {
        self.coverage.iter().filter(|&&c| c == 0).count()
    }
}

/// Mean importance per feature with its standard error across trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub names: Vec<String>,
    pub scores: Vec<f64>,
    pub std_errors: Vec<f64>,
}

pub fn fit_forest(design: &Design, y: &[f64], params: &ForestParams) -> Result<Forest> {
    design.check_target(y)?;
    if params.n_trees == 0 {
        return Err(Error::InvalidParameter("n_trees must be >= 1".into()));
    }
    let p = design.n_cols();
    let tree_params = TreeParams {
        min_leaf: params.min_leaf,
        mtry: Some(params.resolved_mtry(p)),
        max_depth: params.max_depth,
    };
    tree_params.validate(p)?;
    let n = design.n_rows();
    let presorted = Presorted::new(design);
    let fitted: Vec<(Tree, Vec<u32>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = job_rng(params.seed, &[t as u64]);
            let mut counts = vec![0u32; n];
            if params.bootstrap {
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
            } else {
                counts.fill(1);
            }
            let weights: Vec<f64> = counts.iter().map(|&c| f64::from(c)).collect();
            (grow(&presorted, y, &weights, &tree_params, &mut rng), counts)
        })
        .collect();
    let (trees, inbag) = fitted.into_iter().unzip();
    Ok(Forest {
        names: design.names().to_vec(),
        params: *params,
        n_train: n,
        trees,
        inbag,
    })
}

impl Regressor for Forest {
    fn feature_names(&self) -> &[String] {
        &self.names
    }

    fn predict_with(&self, x: &dyn Fn(usize) -> f64) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_with(x)).sum();
        sum / self.trees.len() as f64
    }

    fn predict(&self, design: &Design) -> Result<Vec<f64>> {
        design.check_names(&self.names)?;
        Ok((0..design.n_rows())
            .into_par_iter()
            .map(|i| self.predict_with(&|j| design.get(i, j)))
            .collect())
    }
}

impl Forest {
    fn check_training(&self, design: &Design) -> Result<()> {
        design.check_names(&self.names)?;
        if design.n_rows() != self.n_train {
            return Err(Error::Misaligned(format!(
                "out-of-bag use needs the {} training rows, got {}",
                self.n_train,
                design.n_rows()
            )));
        }
        Ok(())
    }

    /// Averages, per training row, only the trees whose bootstrap left it out.
    pub fn oob_predict(&self, design: &Design) -> Result<OobPrediction> {
        self.check_training(design)?;
        let (prediction, coverage) = (0..self.n_train)
            .into_par_iter()
            .map(|i| {
                let (mut sum, mut k) = (0.0, 0u32);
                for (tree, inbag) in self.trees.iter().zip(&self.inbag) {
                    if inbag[i] == 0 {
                        sum += tree.predict_with(&|j| design.get(i, j));
                        k += 1;
                    }
                }
                (if k == 0 { f64::NAN } else { sum / f64::from(k) }, k)
            })
            .unzip();
        Ok(OobPrediction {
            prediction,
            coverage,
        })
    }

    /// Per tree and feature, the increase in out-of-bag MAE when the feature
    /// is shuffled among that tree's out-of-bag rows; averaged over trees that
    /// have out-of-bag rows. Features a tree never splits on contribute 0.
    pub fn permutation_importance(&self, design: &Design, y: &[f64], seed: u64) -> Result<Importance> {
        self.check_training(design)?;
        design.check_target(y)?;
        let p = self.names.len();
        let per_tree: Vec<Option<Vec<f64>>> = self
            .trees
            .par_iter()
            .zip(&self.inbag)
            .enumerate()
            .map(|(t, (tree, inbag))| {
                let oob: Vec<usize> = (0..self.n_train).filter(|&i| inbag[i] == 0).collect();
                if oob.is_empty() {
                    return None;
                }
                let m = oob.len() as f64;
                let base: f64 = oob
                    .iter()
                    .map(|&i| (tree.predict_with(&|j| design.get(i, j)) - y[i]).abs())
                    .sum::<f64>()
                    / m;
                let used = tree.used_features(p);
                let mut out = vec![0.0; p];
                for f in (0..p).filter(|&f| used[f]) {
                    let mut shuffled: Vec<f64> = oob.iter().map(|&i| design.get(i, f)).collect();
                    shuffled.shuffle(&mut job_rng(seed, &[t as u64, f as u64]));
                    let permuted: f64 = oob
                        .iter()
                        .zip(&shuffled)
                        .map(|(&i, &v)| {
                            let pred = tree.predict_with(&|j| if j == f { v } else { design.get(i, j) });
                            (pred - y[i]).abs()
                        })
                        .sum::<f64>()
                        / m;
                    out[f] = permuted - base;
                }
                Some(out)
            })
            .collect();
        let rows: Vec<Vec<f64>> = per_tree.into_iter().flatten().collect();
        let k = rows.len() as f64;
        let mut scores = vec![0.0; p];
        let mut std_errors = vec![0.0; p];
        if !rows.is_empty() {
            for f in 0..p {
                let mean = rows.iter().map(|r| r[f]).sum::<f64>() / k;
                scores[f] = mean;
                if rows.len() > 1 {
                    let var = rows.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / (k - 1.0);
                    std_errors[f] = (var / k).sqrt();
                }
            }
        }
        Ok(Importance {
            names: self.names.clone(),
            scores,
            std_errors,
        })
    }

    /// Mean per-tree SSE decrease attributed to each feature.
    pub fn impurity_importance(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.names.len()];
        for t in &self.trees {
            t.accumulate_gain(&mut total);
        }
        let n = self.trees.len() as f64;
        total.iter_mut().for_each(|v| *v /= n);
        total
    }
}
