//! Three-stage predictor selection: a full forest ranked by permutation
//! importance, an ensemble of forests on random predictor subsets, and greedy
//! forward selection over the pooled candidates under k-fold MAE.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{fold_assignment, kfold_predict, mae, nmae, pearson, ModelSpec};
use crate::learners::{fit_forest, Design, ForestParams};
use crate::rng::{derive_seed, job_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    /// Size of each stage's shortlist and of the final ranking.
    pub top_k: usize,
    pub full_trees: usize,
    pub realisations: usize,
    pub vars_per_realisation: usize,
    pub realisation_trees: usize,
    pub folds: usize,
    /// Trees per forest while choosing the next predictor.
    pub inner_trees: usize,
    /// Trees per forest when re-evaluating the chosen sequence.
    pub final_trees: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            top_k: 10,
            full_trees: 1000,
            realisations: 300,
            vars_per_realisation: 20,
            realisation_trees: 300,
            folds: 5,
            inner_trees: 300,
            final_trees: 1000,
            min_leaf: 5,
            seed: 0,
        }
    }
}

impl SelectionParams {
    /// A reduced ensemble for quick runs on small machines: the same
    /// procedure with fewer trees and realisations.
    pub fn quick() -> Self {
        SelectionParams {
            full_trees: 300,
            realisations: 60,
            realisation_trees: 60,
            inner_trees: 60,
            final_trees: 200,
            ..Default::default()
        }
    }

    fn forest(&self, n_trees: usize, seed: u64) -> ForestParams {
        ForestParams {
            n_trees,
            min_leaf: self.min_leaf,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub name: String,
    pub score: f64,
}

/// Descending by score, ties by name.
fn rank(mut scored: Vec<Scored>) -> Vec<Scored> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
    scored
}

/// Permutation importance of one forest over every predictor; the first
/// `top_k` by descending score.
pub fn stage_full_rf(design: &Design, y: &[f64], params: &SelectionParams) -> Result<Vec<Scored>> {
    if design.n_cols() < params.top_k {
        log::warn!(
            "only {} predictors available; returning all of them",
            design.n_cols()
        );
    }
    let forest = fit_forest(design, y, &params.forest(params.full_trees, derive_seed(params.seed, &[1])))?;
    let imp = forest.permutation_importance(design, y, derive_seed(params.seed, &[2]))?;
    let scored = imp
        .names
        .into_iter()
        .zip(imp.scores)
        .map(|(name, score)| Scored { name, score })
        .collect();
    let mut ranked = rank(scored);
    ranked.truncate(params.top_k);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleResult {
    pub top: Vec<Scored>,
    /// Per predictor (design order): mean normalized importance over the
    /// realisations that drew it, 0 if never drawn.
    pub aggregate: Vec<f64>,
    /// Per predictor: how many realisations drew it.
    pub appearances: Vec<usize>,
}

/// Fits one forest per realisation on a random predictor subset; each
/// realisation's importances are divided by their positive total.
pub fn stage_subsample(design: &Design, y: &[f64], params: &SelectionParams) -> Result<SubsampleResult> {
    let p = design.n_cols();
    let m = params.vars_per_realisation;
    if m == 0 || p < m {
        return Err(Error::InsufficientData(format!(
            "subsampling {m} predictors per realisation needs at least {m}, got {p}"
        )));
    }
    let per_real: Vec<Vec<(usize, f64)>> = (0..params.realisations)
        .into_par_iter()
        .map(|r| {
            let r64 = r as u64;
            let mut cols = sample(&mut job_rng(params.seed, &[3, r64]), p, m).into_vec();
            cols.sort_unstable();
            let names: Vec<&str> = cols.iter().map(|&j| design.names()[j].as_str()).collect();
            let sub = design.select_columns(&names)?;
            let forest = fit_forest(&sub, y, &params.forest(params.realisation_trees, derive_seed(params.seed, &[4, r64])))?;
            let imp = forest.permutation_importance(&sub, y, derive_seed(params.seed, &[5, r64]))?;
            let total: f64 = imp.scores.iter().filter(|&&s| s > 0.0).sum();
            Ok(cols
                .into_iter()
                .zip(imp.scores)
                .map(|(j, s)| (j, if total > 0.0 { s / total } else { 0.0 }))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0; p];
    let mut appearances = vec![0usize; p];
    for real in &per_real {
        for &(j, s) in real {
            sum[j] += s;
            appearances[j] += 1;
        }
    }
    let aggregate: Vec<f64> = sum
        .iter()
        .zip(&appearances)
        .map(|(s, &a)| if a == 0 { 0.0 } else { s / a as f64 })
        .collect();
    let scored = design
        .names()
        .iter()
        .zip(&aggregate)
        .zip(&appearances)
        .filter(|(_, &a)| a > 0)
        .map(|((name, &score), _)| Scored {
            name: name.clone(),
            score,
        })
        .collect();
    let mut top = rank(scored);
    top.truncate(params.top_k);
    Ok(SubsampleResult {
        top,
        aggregate,
        appearances,
    })
}

/// Union of both shortlists, first-stage order first, without duplicates.
pub fn pool(stage_a: &[Scored], stage_b: &[Scored]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    stage_a
        .iter()
        .chain(stage_b)
        .filter(|s| seen.insert(s.name.clone()))
        .map(|s| s.name.clone())
        .collect()
}

/// One forward-selection step: the predictor added and the performance of
/// the set chosen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub name: String,
    /// k-fold MAE of the inner forest that won this step.
    pub selection_mae: f64,
    pub nmae: f64,
    pub corr: f64,
}

/// Greedy forward selection: each step adds the remaining candidate whose
/// inclusion gives the lowest k-fold MAE. One fold partition and one forest
/// seed serve every comparison, so candidates are compared on equal terms.
/// The chosen sequence is then re-scored with `final_trees` trees.
pub fn pool_and_rank<S: AsRef<str>>(candidates: &[S], design: &Design, y: &[f64], params: &SelectionParams) -> Result<Vec<Step>> {
    let candidates: Vec<String> = candidates.iter().map(|s| s.as_ref().to_string()).collect();
    if candidates.is_empty() {
        return Err(Error::InsufficientData("no candidate predictors to rank".into()));
    }
    let unique: BTreeSet<&String> = candidates.iter().collect();
    if unique.len() != candidates.len() {
        return Err(Error::InvalidParameter("duplicate candidate predictors".into()));
    }
    let design = design.select_columns(&candidates)?;
    let folds = fold_assignment(y.len(), params.folds, derive_seed(params.seed, &[6]))?;
    let forest_seed = derive_seed(params.seed, &[7]);
    let inner = ModelSpec::Rf(params.forest(params.inner_trees, forest_seed));
    let steps = params.top_k.min(candidates.len());

    let mut chosen: Vec<String> = Vec::new();
    let mut chosen_mae = Vec::new();
    for step in 0..steps {
        let remaining: Vec<&String> = candidates.iter().filter(|c| !chosen.contains(c)).collect();
        let scores: Vec<f64> = remaining
            .par_iter()
            .map(|c| {
                let mut names = chosen.clone();
                names.push((*c).clone());
                let pred = kfold_predict(&inner, &design.select_columns(&names)?, y, &folds)?;
                mae(&pred, y)
            })
            .collect::<Result<_>>()?;
        let best = (0..remaining.len())
            .min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)))
            .expect("at least one remaining candidate");
        log::info!("step {}: {} (MAE {:.4})", step + 1, remaining[best], scores[best]);
        chosen.push(remaining[best].clone());
        chosen_mae.push(scores[best]);
    }

    let outer = ModelSpec::Rf(params.forest(params.final_trees, forest_seed));
    (0..chosen.len())
        .into_par_iter()
        .map(|n| {
            let pred = kfold_predict(&outer, &design.select_columns(&chosen[..=n])?, y, &folds)?;
            Ok(Step {
                name: chosen[n].clone(),
                selection_mae: chosen_mae[n],
                nmae: nmae(&pred, y, y)?,
                corr: pearson(&pred, y)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub stage_a: Vec<Scored>,
    pub stage_b: Vec<Scored>,
    pub pooled: Vec<String>,
    pub ranking: Vec<Step>,
}

impl SelectionReport {
    pub fn ranked_names(&self) -> Vec<String> {
        self.ranking.iter().map(|s| s.name.clone()).collect()
    }

    /// Long-form table: `table,rank,predictor,score,nmae,corr`, where table is
    /// one of `stage_a`, `stage_b`, `pooled`, `ranking`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("table,rank,predictor,score,nmae,corr\n");
        let q = |s: &str| {
            if s.contains([',', '"']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        for (table, rows) in [("stage_a", &self.stage_a), ("stage_b", &self.stage_b)] {
            for (i, s) in rows.iter().enumerate() {
                out.push_str(&format!("{table},{},{},{:.6e},,\n", i + 1, q(&s.name), s.score));
            }
        }
        for (i, name) in self.pooled.iter().enumerate() {
            out.push_str(&format!("pooled,{},{},,,\n", i + 1, q(name)));
        }
        for (i, s) in self.ranking.iter().enumerate() {
            out.push_str(&format!(
                "ranking,{},{},{:.6e},{:.6},{:.6}\n",
                i + 1,
                q(&s.name),
                s.selection_mae,
                s.nmae,
                s.corr
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Forward-selection curve: `step,added,nmae,corr`.
    pub fn write_curve(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,added,nmae,corr\n");
        for (i, s) in self.ranking.iter().enumerate() {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", i + 1, s.name, s.nmae, s.corr));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// All three stages on one design.
pub fn run_selection(design: &Design, y: &[f64], params: &SelectionParams) -> Result<SelectionReport> {
    log::info!("selection stage A: {} predictors, {} trees", design.n_cols(), params.full_trees);
    let stage_a = stage_full_rf(design, y, params)?;
    log::info!(
        "selection stage B: {} realisations of {} predictors",
        params.realisations,
        params.vars_per_realisation
    );
    let stage_b = stage_subsample(design, y, params)?.top;
    let pooled = pool(&stage_a, &stage_b);
    log::info!("selection stage C: ranking {} pooled candidates", pooled.len());
    let ranking = pool_and_rank(&pooled, design, y, params)?;
    Ok(SelectionReport {
        stage_a,
        stage_b,
        pooled,
        ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Uniform};

    fn small() -> SelectionParams {
        SelectionParams {
            full_trees: 60,
            realisations: 30,
            vars_per_realisation: 4,
            realisation_trees: 30,
            inner_trees: 30,
            final_trees: 40,
            ..Default::default()
        }
    }

    /// `y = 2 a + b^2` plus `p - 2` noise predictors.
    fn world(n: usize, p: usize, seed: u64) -> (Design, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(-1.0, 1.0).unwrap();
        let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| u.sample(&mut rng)).collect()).collect();
        let y = (0..n).map(|i| 2.0 * cols[0][i] + 2.0 * cols[1][i].powi(2)).collect();
        let mut names: Vec<String> = (0..p).map(|j| format!("noise{j}")).collect();
        names[0] = "a".into();
        names[1] = "b".into();
        (Design::new(names, cols).unwrap(), y)
    }

    #[test]
    fn full_stage_finds_drivers() {
        let (d, y) = world(300, 12, 1);
        let top = stage_full_rf(&d, &y, &small()).unwrap();
        assert_eq!(top.len(), 10);
        let names: Vec<&str> = top.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(&names[..2], &["a", "b"]);
        assert!(top.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn few_predictors_returns_all() {
        let (d, y) = world(100, 5, 2);
        assert_eq!(stage_full_rf(&d, &y, &small()).unwrap().len(), 5);
    }

    #[test]
    fn subsample_stage() {
        let (d, y) = world(200, 12, 3);
        let params = small();
        let r = stage_subsample(&d, &y, &params).unwrap();
        assert_eq!(r.appearances.iter().sum::<usize>(), params.realisations * params.vars_per_realisation);
        let names: Vec<&str> = r.top.iter().map(|s| s.name.as_str()).collect();
        assert!(names[..2].contains(&"a") && names[..2].contains(&"b"), "{names:?}");
        let too_many = SelectionParams { vars_per_realisation: 13, ..params };
        assert!(stage_subsample(&d, &y, &too_many).is_err());
    }

    #[test]
    fn pool_deduplicates_in_order() {
        let s = |n: &str| Scored { name: n.into(), score: 1.0 };
        assert_eq!(pool(&[s("x"), s("y")], &[s("y"), s("z")]), vec!["x", "y", "z"]);
    }

    #[test]
    fn single_candidate_curve() {
        let (d, y) = world(100, 3, 4);
        let steps = pool_and_rank(&["a"], &d, &y, &small()).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].name, "a");
    }

    #[test]
    fn two_driver_forward_selection() {
        let (d, y) = world(300, 4, 5);
        let steps = pool_and_rank(&["noise2", "b", "a", "noise3"], &d, &y, &small()).unwrap();
        let names: Vec<&str> = steps.iter().map(|s| s.name.as_str()).collect();
        assert!(names[..2].contains(&"a") && names[..2].contains(&"b"), "{names:?}");
        assert!(steps[1].nmae < steps[0].nmae);
        assert!(steps[1].selection_mae < steps[0].selection_mae);
    }

    #[test]
    fn relabeling_permutes_names_only() {
        let (d, y) = world(150, 6, 6);
        let renamed: Vec<String> = d.names().iter().map(|n| format!("{n}_x")).collect();
        let cols: Vec<Vec<f64>> = (0..6).map(|j| d.column(j).to_vec()).collect();
        let d2 = Design::new(renamed, cols).unwrap();
        let a = stage_full_rf(&d, &y, &small()).unwrap();
        let b = stage_full_rf(&d2, &y, &small()).unwrap();
        for (x, z) in a.iter().zip(&b) {
            assert_eq!(format!("{}_x", x.name), z.name);
            assert_eq!(x.score, z.score);
        }
    }
}
