//! Closed-form and iterative label propagation, absorbing random-walk
//! probabilities, and the GCN / MLP reference classifiers.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{indices, FeatureMatrix, Graph, LabelVector, SplitMasks};
use crate::linalg::solve;
use crate::model::{fit, glorot, FitOutcome, FitSettings, Forward};

/// Propagation operator: the random-walk matrix `D^-1 A`, or the symmetric
/// `D^-1/2 A D^-1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    RandomWalk,
    Symmetric,
}

pub fn propagation_operator(g: &Graph, norm: Normalization) -> Result<Array2<f64>> {
    let (lnorm, p) = g.normalized_operators::<f64>()?;
    Ok(match norm {
        Normalization::RandomWalk => p,
        Normalization::Symmetric => Array2::eye(g.n()) - lnorm,
    })
}

/// `Y(i, c) = 1` iff border node `i` carries label `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedMatrix {
    y: Array2<f64>,
}

impl SeedMatrix {
    pub fn new(labels: &LabelVector, border: &[bool]) -> Result<Self> {
        labels.check_len(border.len())?;
        let mut y = Array2::zeros((labels.len(), labels.num_classes()));
        for (i, &b) in border.iter().enumerate() {
            if b {
                y[[i, labels.get(i)]] = 1.0;
            }
        }
        Ok(SeedMatrix { y })
    }

    /// Seeds from `(node, class)` pairs.
    pub fn from_seeds(n: usize, classes: usize, seeds: &[(usize, usize)]) -> Result<Self> {
        let mut y = Array2::zeros((n, classes));
        for &(i, c) in seeds {
            if i >= n {
                return Err(Error::NodeOutOfRange { node: i, n });
            }
            if c >= classes {
                return Err(Error::arg(format!("seed class {c} outside {classes} classes")));
            }
            if y.row(i).sum() > 0.0 {
                return Err(Error::arg(format!("node {i} seeded twice")));
            }
            y[[i, c]] = 1.0;
        }
        Ok(SeedMatrix { y })
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn border(&self) -> Vec<usize> {
        (0..self.y.nrows()).filter(|&i| self.y.row(i).sum() > 0.0).collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg(format!("propagation alpha {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

/// `F = (1 - alpha) (I - alpha P)^-1 Y`.
pub fn propagate_closed(p: &Array2<f64>, y: &SeedMatrix, alpha: f64) -> Result<Array2<f64>> {
    check_alpha(alpha)?;
    let n = p.nrows();
    if y.y.nrows() != n {
        return Err(Error::dim("seed matrix rows", n, y.y.nrows()));
    }
    let m = Array2::eye(n) - p * alpha;
    Ok(solve(&m, &y.y)? * (1.0 - alpha))
}

/// `F(t+1) = alpha P F(t) + (1 - alpha) Y` from `F(1) = Y`.
pub fn propagate_iterative(p: &Array2<f64>, y: &SeedMatrix, alpha: f64, t: usize) -> Result<Array2<f64>> {
    check_alpha(alpha)?;
    if t == 0 {
        return Err(Error::arg("iteration count must be at least 1"));
    }
    let mut f = y.y.clone();
    for _ in 1..t {
        f = p.dot(&f) * alpha + &y.y * (1.0 - alpha);
    }
    Ok(f)
}

/// Largest entry of `|F - alpha P F - (1 - alpha) Y|`, the gradient of the
/// propagation objective at `F`.
pub fn stationarity_residual(p: &Array2<f64>, y: &SeedMatrix, alpha: f64, f: &Array2<f64>) -> f64 {
    let r = f - &(p.dot(f) * alpha) - &(&y.y * (1.0 - alpha));
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Argmax labels with the lowest class index winning ties.
pub fn extract_labels(f: &Array2<f64>) -> Vec<usize> {
    crate::metrics::argmax_rows(f.view())
}

/// Probabilities that a walk from each non-absorbing node (ascending order)
/// ends in each absorbing node (in the given order).
pub fn absorbing_probabilities(g: &Graph, absorbing: &[usize]) -> Result<Array2<f64>> {
    let n = g.n();
    let mut is_abs = vec![false; n];
    for &a in absorbing {
        if a >= n {
            return Err(Error::NodeOutOfRange { node: a, n });
        }
        if is_abs[a] {
            return Err(Error::arg(format!("absorbing node {a} listed twice")));
        }
        is_abs[a] = true;
    }
    if absorbing.is_empty() {
        return Err(Error::Singular("absorbing_probabilities (no absorbing nodes)"));
    }
    // every transient node must reach the absorbing set
    let mut reach = is_abs.clone();
    let mut stack: Vec<usize> = absorbing.to_vec();
    while let Some(v) = stack.pop() {
        for &(u, _) in g.neighbors(v) {
            if !reach[u] {
                reach[u] = true;
                stack.push(u);
            }
        }
    }
    if reach.iter().any(|r| !r) {
        return Err(Error::Singular("absorbing_probabilities (unreachable absorbing set)"));
    }

    let (_, p) = g.normalized_operators::<f64>()?;
    let transient: Vec<usize> = (0..n).filter(|&i| !is_abs[i]).collect();
    let q = p.select(Axis(0), &transient).select(Axis(1), &transient);
    let r = p.select(Axis(0), &transient).select(Axis(1), absorbing);
    let m = Array2::eye(transient.len()) - q;
    solve(&m, &r)
}

/// Settings shared by the reference classifiers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            hidden: 64,
            dropout: 0.5,
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 700,
            patience: 100,
            seed: 0,
        }
    }
}

fn settings(cfg: &BaselineConfig) -> FitSettings {
    FitSettings {
        lr: cfg.lr,
        epochs: cfg.epochs,
        patience: cfg.patience,
        seed: cfg.seed,
    }
}

fn two_layer_init(f: usize, h: usize, c: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        glorot(f, h, &mut rng),
        Array2::zeros((1, h)),
        glorot(h, c, &mut rng),
        Array2::zeros((1, c)),
    ]
}

fn decay(tape: &mut Tape, loss: Var, weights: &[Var], wd: f64) -> Result<Var> {
    let mut total = loss;
    if wd > 0.0 {
        for &w in weights {
            let sq = tape.frobenius_sq(w);
            let term = tape.scale(sq, 0.5 * wd);
            total = tape.add(total, term)?;
        }
    }
    Ok(total)
}

/// Two-layer GCN on `D~^-1/2 (A + I) D~^-1/2`.
pub fn gcn_baseline(
    g: &Graph,
    x: &FeatureMatrix,
    labels: &LabelVector,
    masks: &SplitMasks,
    cfg: &BaselineConfig,
) -> Result<FitOutcome> {
    g.require_connected()?;
    labels.check_len(g.n())?;
    if x.n() != g.n() {
        return Err(Error::dim("feature rows", g.n(), x.n()));
    }
    let a_hat = gcn_operator(g);
    let train = indices(&masks.train);
    let train_labels: Vec<usize> = train.iter().map(|&i| labels.get(i)).collect();
    let init = two_layer_init(x.width(), cfg.hidden, labels.num_classes(), cfg.seed);
    let xv = x.as_array().clone();
    let forward = |tape: &mut Tape, p: &[Var], training: bool, rng: &mut ChaCha8Rng| -> Result<Forward> {
        let drop = if training { cfg.dropout } else { 0.0 };
        let a = tape.constant(a_hat.clone());
        let xin = tape.constant(xv.clone());
        let xd = tape.dropout(xin, drop, rng)?;
        let xw = tape.matmul(xd, p[0])?;
        let agg = tape.matmul(a, xw)?;
        let pre = tape.add_row(agg, p[1])?;
        let h = tape.relu(pre);
        let hd = tape.dropout(h, drop, rng)?;
        let hw = tape.matmul(hd, p[2])?;
        let agg2 = tape.matmul(a, hw)?;
        let logits = tape.add_row(agg2, p[3])?;
        let ce = tape.cross_entropy(logits, &train, &train_labels)?;
        let ce_value = tape.scalar(ce);
        let loss = decay(tape, ce, &[p[0], p[2]], cfg.weight_decay)?;
        Ok(Forward::plain(loss, logits, ce_value))
    };
    fit(init, &settings(cfg), labels, masks, forward)
}

/// Two-layer perceptron on the features alone.
pub fn mlp_baseline(
    x: &FeatureMatrix,
    labels: &LabelVector,
    masks: &SplitMasks,
    cfg: &BaselineConfig,
) -> Result<FitOutcome> {
    labels.check_len(x.n())?;
    let train = indices(&masks.train);
    let train_labels: Vec<usize> = train.iter().map(|&i| labels.get(i)).collect();
    let init = two_layer_init(x.width(), cfg.hidden, labels.num_classes(), cfg.seed);
    let xv = x.as_array().clone();
    let forward = |tape: &mut Tape, p: &[Var], training: bool, rng: &mut ChaCha8Rng| -> Result<Forward> {
        let drop = if training { cfg.dropout } else { 0.0 };
        let xin = tape.constant(xv.clone());
        let xd = tape.dropout(xin, drop, rng)?;
        let xw = tape.matmul(xd, p[0])?;
        let pre = tape.add_row(xw, p[1])?;
        let h = tape.relu(pre);
        let hd = tape.dropout(h, drop, rng)?;
        let hw = tape.matmul(hd, p[2])?;
        let logits = tape.add_row(hw, p[3])?;
        let ce = tape.cross_entropy(logits, &train, &train_labels)?;
        let ce_value = tape.scalar(ce);
        let loss = decay(tape, ce, &[p[0], p[2]], cfg.weight_decay)?;
        Ok(Forward::plain(loss, logits, ce_value))
    };
    fit(init, &settings(cfg), labels, masks, forward)
}

/// `D~^-1/2 (A + I) D~^-1/2`.
pub fn gcn_operator(g: &Graph) -> Array2<f64> {
    let n = g.n();
    let mut a = g.adjacency::<f64>() + Array2::<f64>::eye(n);
    let d: Vec<f64> = a.sum_axis(Axis(1)).iter().map(|x| 1.0 / x.sqrt()).collect();
    for ((i, j), v) in a.indexed_iter_mut() {
        *v *= d[i] * d[j];
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures;
    use ndarray::array;

    #[test]
    fn k2_closed_form() {
        let g = fixtures::single_edge();
        let p = propagation_operator(&g, Normalization::RandomWalk).unwrap();
        let y = SeedMatrix::from_seeds(2, 1, &[(0, 0)]).unwrap();
        let f = propagate_closed(&p, &y, 0.5).unwrap();
        assert!((f[[0, 0]] - 2.0 / 3.0).abs() < 1e-12);
        assert!((f[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_must_be_open_unit() {
        let g = fixtures::single_edge();
        let p = propagation_operator(&g, Normalization::RandomWalk).unwrap();
        let y = SeedMatrix::from_seeds(2, 1, &[(0, 0)]).unwrap();
        assert!(propagate_closed(&p, &y, 1.0).is_err());
        assert!(propagate_closed(&p, &y, 0.0).is_err());
        assert!(propagate_iterative(&p, &y, 0.5, 0).is_err());
    }

    #[test]
    fn first_iterate_is_seed() {
        let g = fixtures::path3();
        let p = propagation_operator(&g, Normalization::RandomWalk).unwrap();
        let y = SeedMatrix::from_seeds(3, 2, &[(0, 0), (2, 1)]).unwrap();
        assert_eq!(&propagate_iterative(&p, &y, 0.7, 1).unwrap(), y.as_array());
    }

    #[test]
    fn absorbing_small_paths() {
        let b = absorbing_probabilities(&fixtures::path3(), &[0, 2]).unwrap();
        assert_eq!(b, array![[0.5, 0.5]]);
        let p4 = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let b = absorbing_probabilities(&p4, &[0, 3]).unwrap();
        assert!((b[[0, 0]] - 2.0 / 3.0).abs() < 1e-12);
        assert!((b[[0, 1]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_absorbing_set() {
        let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(absorbing_probabilities(&g, &[0]), Err(Error::Singular(_))));
    }

    #[test]
    fn symmetric_operator_is_symmetric() {
        let p = propagation_operator(&fixtures::path3(), Normalization::Symmetric).unwrap();
        assert!((&p - &p.t()).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn gcn_operator_rows() {
        let a = gcn_operator(&fixtures::single_edge());
        assert!((a - array![[0.5, 0.5], [0.5, 0.5]]).iter().all(|x| x.abs() < 1e-15));
    }
}
