use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PredictError;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Candidate features per node; `None` means ⌈d/3⌉.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), PredictError> {
        if self.n_trees < 1 {
            return Err(PredictError::Config("n_trees must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(PredictError::Config("min_samples_split must be >= 2".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(PredictError::Config("features_per_split must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat CART tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

fn mean_of(y: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

impl Builder<'_> {
    fn grow<R: Rng>(&mut self, idx: &mut [usize], depth: usize, rng: &mut R) -> usize {
        let id = self.nodes.len();
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        // a pure leaf stores the shared value itself; a rounded mean could differ
        let value = if pure { self.y[idx[0]] } else { mean_of(self.y, idx) };
        self.nodes.push(Node::Leaf { value });
        if pure || idx.len() < self.cfg.min_samples_split || self.cfg.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(idx, rng) else {
            return id;
        };
        let mut cut = 0;
        for j in 0..idx.len() {
            if self.x[idx[j]][feature] <= threshold {
                idx.swap(cut, j);
                cut += 1;
            }
        }
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Variance-reduction split over up to `mtry` non-constant features drawn
    /// in random order; thresholds are midpoints of adjacent distinct values.
    fn best_split<R: Rng>(&self, idx: &[usize], rng: &mut R) -> Option<(usize, f64)> {
        let d = self.x[0].len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        let n = idx.len() as f64;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        // maximise sum_L^2/n_L + sum_R^2/n_R, equivalent to minimising child SSE
        let mut best: Option<(f64, usize, f64)> = None;
        let mut tried = 0;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(idx.len());
        for &f in &order {
            if tried == self.mtry {
                break;
            }
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[pairs.len() - 1].0 {
                continue;
            }
            tried += 1;
            let mut left = 0.0;
            for k in 0..pairs.len() - 1 {
                left += pairs[k].1;
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let nl = (k + 1) as f64;
                let right = total - left;
                let score = left * left / nl + right * right / (n - nl);
                if best.map_or(true, |b| score > b.0) {
                    let mid = 0.5 * (pairs[k].0 + pairs[k + 1].0);
                    // guard against the midpoint rounding onto the upper value
                    let thr = if mid < pairs[k + 1].0 { mid } else { pairs[k].0 };
                    best = Some((score, f, thr));
                }
            }
        }
        // a zero-gain split is still taken: both children are non-empty, so
        // growth terminates, and impure leaves would break memorisation
        best.map(|(_, f, thr)| (f, thr))
    }
}

fn check_xy(x: &[Vec<f64>], y: &[f64]) -> Result<usize, PredictError> {
    if x.len() != y.len() {
        return Err(PredictError::LengthMismatch(x.len(), y.len()));
    }
    let first = x.first().ok_or(PredictError::EmptyDataset)?;
    let d = first.len();
    if x.iter().any(|r| r.len() != d) {
        return Err(PredictError::Config("ragged feature matrix".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(PredictError::NonFinite);
    }
    Ok(d)
}

pub fn fit_forest(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Result<ForestModel, PredictError> {
    cfg.validate()?;
    let d = check_xy(x, y)?;
    let mtry = cfg.features_per_split.unwrap_or(d.div_ceil(3)).clamp(1, d.max(1));
    let n = x.len();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(cfg.seed, t as u64);
            let mut idx: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                x,
                y,
                cfg,
                mtry,
                nodes: Vec::new(),
            };
            b.grow(&mut idx, 0, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(ForestModel {
        config: cfg.clone(),
        n_features: d,
        trees,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintySource {
    /// Point model without a spread estimate; σ is 0.
    Deterministic,
    ForestEnsemble,
    McDropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertainPrediction {
    pub mean: f64,
    /// Standard deviation.
    pub sigma: f64,
    pub source: UncertaintySource,
}

impl ForestModel {
    /// Tree mean and population standard deviation across trees. Per-tree
    /// outputs are sorted before summation, so neither depends on tree order.
    pub fn predict_with_variance(&self, x: &[f64]) -> Result<UncertainPrediction, PredictError> {
        if x.len() != self.n_features {
            return Err(PredictError::LengthMismatch(x.len(), self.n_features));
        }
        let mut outs: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        outs.sort_by(f64::total_cmp);
        let b = outs.len() as f64;
        let mean = outs.iter().sum::<f64>() / b;
        let var = outs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b;
        Ok(UncertainPrediction {
            mean,
            sigma: var.sqrt(),
            source: UncertaintySource::ForestEnsemble,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, PredictError> {
        Ok(self.predict_with_variance(x)?.mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, ((i * 37) % 11) as f64]).collect();
        let y = x.iter().map(|r| (r[0] * 0.3).sin() + 0.1 * r[1]).collect();
        (x, y)
    }

    #[test]
    fn constant_target_gives_zero_sigma() {
        let (x, _) = grid(30);
        let m = fit_forest(
            &x,
            &[2.5; 30],
            &ForestConfig {
                n_trees: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let p = m.predict_with_variance(&[3.0, 100.0]).unwrap();
        assert_eq!((p.mean, p.sigma), (2.5, 0.0));
    }

    #[test]
    fn single_unbootstrapped_tree_memorises() {
        let (x, y) = grid(50);
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            features_per_split: Some(2),
            ..Default::default()
        };
        let m = fit_forest(&x, &y, &cfg).unwrap();
        for (r, t) in x.iter().zip(&y) {
            let p = m.predict_with_variance(r).unwrap();
            assert_eq!((p.mean, p.sigma), (*t, 0.0));
        }
    }

    #[test]
    fn depth_limit_respected() {
        let (x, y) = grid(60);
        let m = fit_forest(
            &x,
            &y,
            &ForestConfig {
                n_trees: 5,
                max_depth: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn seeded_and_tree_order_invariant() {
        let (x, y) = grid(40);
        let cfg = ForestConfig {
            n_trees: 25,
            seed: 9,
            ..Default::default()
        };
        let a = fit_forest(&x, &y, &cfg).unwrap();
        assert_eq!(a, fit_forest(&x, &y, &cfg).unwrap());
        let mut b = a.clone();
        b.trees.reverse();
        b.trees.swap(0, 7);
        for q in [[1.5, 2.0], [33.3, 7.0]] {
            assert_eq!(a.predict_with_variance(&q).unwrap(), b.predict_with_variance(&q).unwrap());
        }
    }

    #[test]
    fn wider_spread_outside_training_hull() {
        let x: Vec<Vec<f64>> = (0..80).map(|i| vec![(i % 40) as f64 / 40.0, (i / 40) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 * r[0] + r[1]).collect();
        let m = fit_forest(
            &x,
            &y,
            &ForestConfig {
                n_trees: 100,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let sigma = |pts: Vec<[f64; 2]>| {
            let mut s: Vec<f64> = pts.iter().map(|p| m.predict_with_variance(p).unwrap().sigma).collect();
            s.sort_by(f64::total_cmp);
            s[s.len() / 2]
        };
        let inside = sigma((0..20).map(|i| [0.3 + 0.02 * i as f64, 0.0]).collect());
        let outside = sigma((0..20).map(|i| [5.0 + i as f64, 0.5]).collect());
        assert!(outside > inside, "{outside} vs {inside}");
    }

    #[test]
    fn rejects_zero_trees() {
        let (x, y) = grid(5);
        assert!(fit_forest(
            &x,
            &y,
            &ForestConfig {
                n_trees: 0,
                ..Default::default()
            }
        )
        .is_err());
    }
}
