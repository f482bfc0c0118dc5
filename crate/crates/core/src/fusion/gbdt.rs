//! Multiclass gradient-boosted regression trees with a softmax objective,
//! second-order (Newton) leaf values and exact greedy split search.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const MIN_HESSIAN: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum hessian sum in each child.
    pub min_child_weight: f64,
    /// Fraction of rows sampled (without replacement) for each round.
    pub subsample: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

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
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    pub n_classes: usize,
    pub n_features: usize,
    /// One tree per class per round.
    pub rounds: Vec<Vec<Tree>>,
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Booster {
    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n_classes];
        for round in &self.rounds {
            for (k, t) in round.iter().enumerate() {
                z[k] += t.predict(x);
            }
        }
        z
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.margins(x))
    }
}

/// Mean negative log-likelihood of `labels` under margins `z`.
pub fn softmax_loss(z: &[Vec<f64>], labels: &[usize]) -> f64 {
    z.iter().zip(labels).map(|(zi, &y)| -softmax(zi)[y].max(1e-300).ln()).sum::<f64>() / z.len() as f64
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    /// Row indices sorted by each feature's value.
    sorted: &'a [Vec<usize>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a BoostParams,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.params.lambda) * self.params.learning_rate
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    fn best_split(&self, member: &[bool], g_tot: f64, h_tot: f64) -> Option<BestSplit> {
        let parent = self.score(g_tot, h_tot);
        let mut best: Option<BestSplit> = None;
        for (f, order) in self.sorted.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            let mut prev: Option<f64> = None;
            for &i in order.iter().filter(|&&i| member[i]) {
                let v = self.x[i][f];
                if let Some(pv) = prev {
                    if v > pv {
                        let (gr, hr) = (g_tot - gl, h_tot - hl);
                        if hl >= self.params.min_child_weight && hr >= self.params.min_child_weight {
                            let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
                            if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                                best = Some(BestSplit { gain, feature: f, threshold: pv + (v - pv) / 2.0 });
                            }
                        }
                    }
                }
                gl += self.grad[i];
                hl += self.hess[i];
                prev = Some(v);
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, n_total: usize) -> usize {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: self.leaf_value(g, h) });
        if depth >= self.params.max_depth || rows.len() < 2 {
            return id;
        }
        let mut member = vec![false; n_total];
        for &i in &rows {
            member[i] = true;
        }
        let Some(split) = self.best_split(&member, g, h) else { return id };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][split.feature] < split.threshold);
        let left = self.grow(l, depth + 1, n_total);
        let right = self.grow(r, depth + 1, n_total);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

/// Fits the ensemble. `labels[i]` is a class index below `n_classes`.
/// `on_round` sees the training margins after every round.
pub fn fit(
    x: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    params: &BoostParams,
    mut on_round: impl FnMut(usize, &[Vec<f64>]),
) -> Booster {
    let n = x.len();
    let n_features = x.first().map_or(0, Vec::len);
    let sorted: Vec<Vec<usize>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut margins = vec![vec![0.0; n_classes]; n];
    let mut rounds = Vec::with_capacity(params.n_rounds);
    for round in 0..params.n_rounds {
        let probs: Vec<Vec<f64>> = margins.iter().map(|z| softmax(z)).collect();
        let rows: Vec<usize> = if params.subsample < 1.0 {
            let m = ((n as f64 * params.subsample).round() as usize).clamp(1, n);
            let mut r = sample(&mut rng, n, m).into_vec();
            r.sort_unstable();
            r
        } else {
            (0..n).collect()
        };
        let mut trees = Vec::with_capacity(n_classes);
        for k in 0..n_classes {
            let grad: Vec<f64> = (0..n).map(|i| probs[i][k] - f64::from(u8::from(labels[i] == k))).collect();
            let hess: Vec<f64> = (0..n).map(|i| (2.0 * probs[i][k] * (1.0 - probs[i][k])).max(MIN_HESSIAN)).collect();
            let mut grower = Grower { x, sorted: &sorted, grad: &grad, hess: &hess, params, nodes: Vec::new() };
            grower.grow(rows.clone(), 0, n);
            trees.push(Tree { nodes: grower.nodes });
        }
        for (i, z) in margins.iter_mut().enumerate() {
            for (k, t) in trees.iter().enumerate() {
                z[k] += t.predict(&x[i]);
            }
        }
        rounds.push(trees);
        on_round(round, &margins);
    }
    Booster { n_classes, n_features, rounds }
}
