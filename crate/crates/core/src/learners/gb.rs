//! Least-squares gradient boosting with shallow trees.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Presorted, Tree, TreeParams};
use super::{Design, Regressor};
use crate::error::{Error, Result};
use crate::rng::JobRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for GbParams {
    fn default() -> Self {
        GbParams {
            n_rounds: 500,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbModel {
    pub names: Vec<String>,
    pub params: GbParams,
    pub init: f64,
    pub trees: Vec<Tree>,
}

/// Round `t` fits a tree to the current residuals and adds
/// `learning_rate` times its output. Zero rounds yields the mean predictor.
pub fn fit_gb(design: &Design, y: &[f64], params: &GbParams) -> Result<GbModel> {
    design.check_target(y)?;
    if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) {
        return Err(Error::InvalidParameter("learning_rate must be positive".into()));
    }
    let tree_params = TreeParams {
        min_leaf: params.min_leaf,
        mtry: None,
        max_depth: Some(params.max_depth),
    };
    tree_params.validate(design.n_cols())?;

    let n = design.n_rows();
    let init = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![init; n];
    let mut residual = vec![0.0; n];
    let weights = vec![1.0; n];
    let presorted = Presorted::new(design);
    // All features are candidates, so the generator is never consulted.
    let mut rng = JobRng::seed_from_u64(0);
    let mut trees = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        for i in 0..n {
            residual[i] = y[i] - fitted[i];
        }
        let tree = grow(&presorted, &residual, &weights, &tree_params, &mut rng);
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += params.learning_rate * tree.predict_with(&|j| design.get(i, j));
        }
        trees.push(tree);
    }
    Ok(GbModel {
        names: design.names().to_vec(),
        params: *params,
        init,
        trees,
    })
}

impl Regressor for GbModel {
    fn feature_names(&self) -> &[String] {
        &self.names
    }

    fn predict_with(&self, x: &dyn Fn(usize) -> f64) -> f64 {
        let mut v = self.init;
        for t in &self.trees {
            v += self.params.learning_rate * t.predict_with(x);
        }
        v
    }
}
