//! The diffusion-jump network: per-jump branches `relu(J^k X W^k)`, an
//! optional homophilic branch `relu(A X W)`, a single softmax over branch
//! logits, a one-hidden-layer classifier head, and the joint loss
//! `mu_d * ratio + mu_o * ortho + CE + weight decay`.
//!
//! Also hosts the shared full-batch training loop used by the reference
//! classifiers.

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_diff_check, Tape, Var};
use crate::baselines::gcn_operator;
use crate::error::{Error, Result};
use crate::graph::{indices, FeatureMatrix, Graph, LabelVector, SplitMasks};
use crate::jump::{filter_bank, FilterBank, JumpMode};
use crate::metrics::{accuracy, argmax_rows, mean_std};
use crate::optim::{Adam, AdamConfig};
use crate::pump::{
    distance_matrix_with, init_std, train_pump, Activation, DistanceKind, DistanceMatrix, PumpBasis,
    PumpConfig, PumpParams, RatioOperators,
};

/// Glorot-uniform initialisation.
pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..a))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitSettings {
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

/// What a forward pass hands back to the training loop.
#[derive(Debug, Clone)]
pub struct Forward {
    pub loss: Var,
    pub logits: Var,
    pub dirichlet: f64,
    pub ortho: f64,
    pub ce: f64,
    pub alphas: Vec<f64>,
}

impl Forward {
    pub fn plain(loss: Var, logits: Var, ce: f64) -> Self {
        Forward {
            loss,
            logits,
            dirichlet: 0.0,
            ortho: 0.0,
            ce,
            alphas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dirichlet: f64,
    pub ce: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters at the best validation epoch.
    pub params: Vec<Array2<f64>>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub predictions: Vec<usize>,
}

/// Full-batch Adam with early stopping on validation accuracy.
///
/// `forward(tape, params, training, rng)` builds one pass; with
/// `training = false` it must not draw from `rng`.
pub fn fit<F>(
    init: Vec<Array2<f64>>,
    settings: &FitSettings,
    labels: &LabelVector,
    masks: &SplitMasks,
    mut forward: F,
) -> Result<FitOutcome>
where
    F: FnMut(&mut Tape, &[Var], bool, &mut ChaCha8Rng) -> Result<Forward>,
{
    labels.check_len(masks.len())?;
    let (train, val, test) = (indices(&masks.train), indices(&masks.val), indices(&masks.test));
    if train.is_empty() {
        return Err(Error::EmptyBorder);
    }
    if settings.epochs == 0 {
        return Err(Error::arg("epochs must be positive"));
    }
    let y = labels.as_slice();
    let mut params = init;
    let mut opt = Adam::<f64>::new(AdamConfig::with_lr(settings.lr), params.iter().map(|p| p.dim()));
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut history = Vec::new();
    let mut best: Option<FitOutcome> = None;
    let mut since_best = 0;

    for epoch in 0..settings.epochs {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let out = forward(&mut tape, &vars, true, &mut rng)?;
        let loss = tape.scalar(out.loss);
        if !loss.is_finite() {
            return Err(Error::Divergence { step: epoch });
        }
        let grads = tape.backward(out.loss)?;
        let gs: Vec<Array2<f64>> = vars.iter().map(|&v| grads.get(v)).collect();
        drop(tape);
        {
            let mut refs: Vec<&mut Array2<f64>> = params.iter_mut().collect();
            let grefs: Vec<&Array2<f64>> = gs.iter().collect();
            opt.update(&mut refs, &grefs);
        }

        let mut eval = Tape::new();
        let evars: Vec<Var> = params.iter().map(|p| eval.constant(p.clone())).collect();
        let eout = forward(&mut eval, &evars, false, &mut rng)?;
        let pred = argmax_rows(eval.value(eout.logits).view());
        let (val_acc, test_acc) = (accuracy(&pred, y, &val), accuracy(&pred, y, &test));
        history.push(EpochRecord {
            epoch,
            loss,
            dirichlet: out.dirichlet,
            ce: out.ce,
            val_acc,
            test_acc,
            alphas: eout.alphas,
        });

        if best.as_ref().is_none_or(|b| val_acc > b.val_acc) {
            best = Some(FitOutcome {
                params: params.clone(),
                history: Vec::new(),
                best_epoch: epoch,
                train_acc: accuracy(&pred, y, &train),
                val_acc,
                test_acc,
                predictions: pred,
            });
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= settings.patience {
                break;
            }
        }
    }
    let mut out = best.expect("at least one epoch ran");
    out.history = history;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub jumps: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub ortho_weight: f64,
    pub dirichlet_weight: f64,
    pub pump_width: usize,
    pub activation: Activation,
    pub homophilic_branch: bool,
    /// Symmetric normalisation with self loops in the homophilic branch.
    pub normalized_homophilic: bool,
    pub decoupled: bool,
    pub seed: u64,
    pub jump_mode: JumpMode,
    pub distance: DistanceKind,
    pub pump_basis: PumpBasis,
    /// Pre-training steps for the pump in decoupled mode.
    pub pump_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            jumps: 20,
            hidden: 64,
            dropout: 0.2,
            lr: 0.03,
            weight_decay: 5e-4,
            epochs: 700,
            patience: 100,
            ortho_weight: 1.0,
            dirichlet_weight: 1.0,
            pump_width: 3,
            activation: Activation::Identity,
            homophilic_branch: true,
            normalized_homophilic: false,
            decoupled: false,
            seed: 0,
            jump_mode: JumpMode::Rank,
            distance: DistanceKind::Norm,
            pump_basis: PumpBasis::Adjacency,
            pump_steps: 2000,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::arg("hidden_channels must be positive"));
        }
        if self.pump_width < 2 {
            return Err(Error::arg("pump_width must be at least 2"));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || self.ortho_weight < 0.0 || self.dirichlet_weight < 0.0 {
            return Err(Error::arg("lr must be positive and loss weights nonnegative"));
        }
        Ok(())
    }

    pub fn branches(&self) -> usize {
        self.jumps + 1 + usize::from(self.homophilic_branch)
    }
}

/// Positions of the parameter blocks in the flat parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub pump_w: Option<usize>,
    pub jumps: Vec<usize>,
    pub homophilic: Option<usize>,
    pub logits: usize,
    pub head: [usize; 4],
}

impl ParamLayout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut names = Vec::new();
        let mut push = |name: String| {
            names.push(name);
            names.len() - 1
        };
        let pump_w = (!cfg.decoupled).then(|| push("pump_w".into()));
        let jumps = (0..=cfg.jumps).map(|k| push(format!("w_jump_{k}"))).collect();
        let homophilic = cfg.homophilic_branch.then(|| push("w_homophilic".into()));
        let logits = push("attention_logits".into());
        let head = [
            push("head_w1".into()),
            push("head_b1".into()),
            push("head_w2".into()),
            push("head_b2".into()),
        ];
        ParamLayout {
            names,
            pump_w,
            jumps,
            homophilic,
            logits,
            head,
        }
    }

    /// Blocks subject to weight decay.
    fn weights(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.pump_w.into_iter().collect();
        w.extend(&self.jumps);
        w.extend(self.homophilic);
        w.push(self.head[0]);
        w.push(self.head[2]);
        w
    }
}

/// How jump supports are obtained during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Supports<'a> {
    /// Recompute masks from the current embedding.
    Refresh,
    /// Keep these masks; coefficients still follow the embedding.
    Frozen(&'a FilterBank<f64>),
    /// Masks and coefficients fixed (pump decoupled).
    Fixed(&'a FilterBank<f64>),
}

/// Graph-dependent constants of one model instance.
#[derive(Debug, Clone)]
pub struct DjModel {
    cfg: ModelConfig,
    layout: ParamLayout,
    n: usize,
    classes: usize,
    basis: Option<Array2<f64>>,
    laplacian: Array2<f64>,
    degree_diag: Array2<f64>,
    homophilic_adj: Array2<f64>,
    x: Array2<f64>,
    train: Vec<usize>,
    train_labels: Vec<usize>,
    pump_std: f64,
}

impl DjModel {
    pub fn new(g: &Graph, x: &FeatureMatrix, labels: &LabelVector, train_mask: &[bool], cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        g.require_connected()?;
        let n = g.n();
        labels.check_len(n)?;
        if x.n() != n {
            return Err(Error::dim("feature rows", n, x.n()));
        }
        if train_mask.len() != n {
            return Err(Error::dim("train mask", n, train_mask.len()));
        }
        if cfg.jumps >= n {
            return Err(Error::arg(format!("k_jumps {} must be below n = {n}", cfg.jumps)));
        }
        let train = indices(train_mask);
        if train.is_empty() {
            return Err(Error::EmptyBorder);
        }
        let train_labels = train.iter().map(|&i| labels.get(i)).collect();
        let ops = RatioOperators::<f64>::new(g);
        let basis = match cfg.pump_basis {
            PumpBasis::Adjacency => Some(g.adjacency()),
            PumpBasis::Identity => None,
        };
        let homophilic_adj = if cfg.normalized_homophilic {
            gcn_operator(g)
        } else {
            g.adjacency()
        };
        Ok(DjModel {
            cfg: cfg.clone(),
            layout: ParamLayout::new(cfg),
            n,
            classes: labels.num_classes(),
            basis,
            laplacian: ops.laplacian,
            degree_diag: Array2::from_diag(&ops.degrees),
            homophilic_adj,
            x: x.as_array().clone(),
            train,
            train_labels,
            pump_std: init_std(g, cfg.pump_basis),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn init_params(&self) -> Vec<Array2<f64>> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let f = self.x.ncols();
        let h = cfg.hidden;
        let mut out = vec![Array2::zeros((0, 0)); self.layout.names.len()];
        if let Some(i) = self.layout.pump_w {
            let normal = Normal::new(0.0, self.pump_std).expect("positive std");
            out[i] = Array2::from_shape_simple_fn((self.n, cfg.pump_width), || normal.sample(&mut rng));
        }
        for &i in &self.layout.jumps {
            out[i] = glorot(f, h, &mut rng);
        }
        if let Some(i) = self.layout.homophilic {
            out[i] = glorot(f, h, &mut rng);
        }
        out[self.layout.logits] = Array2::zeros((1, cfg.branches()));
        let [w1, b1, w2, b2] = self.layout.head;
        out[w1] = glorot(cfg.branches() * h, h, &mut rng);
        out[b1] = Array2::zeros((1, h));
        out[w2] = glorot(h, self.classes, &mut rng);
        out[b2] = Array2::zeros((1, self.classes));
        out
    }

    fn pump_embedding(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        let z = match &self.basis {
            Some(b) => {
                let bv = tape.constant(b.clone());
                tape.matmul(bv, w)?
            }
            None => w,
        };
        Ok(match self.cfg.activation {
            Activation::Identity => z,
            Activation::Tanh => tape.tanh(z),
        })
    }

    /// The pump embedding `U` for the given parameters.
    pub fn embedding(&self, params: &[Array2<f64>]) -> Result<Array2<f64>> {
        let i = self
            .layout
            .pump_w
            .ok_or_else(|| Error::arg("decoupled model carries no pump parameters"))?;
        let basis = self.basis.clone().unwrap_or_else(|| Array2::eye(self.n));
        crate::pump::pump_forward(
            &basis,
            &PumpParams {
                w: params[i].clone(),
                bias: None,
            },
            self.cfg.activation,
        )
    }

    pub fn distances(&self, params: &[Array2<f64>]) -> Result<DistanceMatrix<f64>> {
        Ok(distance_matrix_with(self.embedding(params)?.view(), self.cfg.distance))
    }

    /// Filter bank from the embedding the parameters produce.
    pub fn support_bank(&self, params: &[Array2<f64>]) -> Result<FilterBank<f64>> {
        filter_bank(&self.distances(params)?, self.cfg.jumps, self.cfg.jump_mode)
    }

    /// One forward pass. `dropout` is the probability used for this pass.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &[Var],
        supports: Supports<'_>,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward> {
        let cfg = &self.cfg;
        let lay = &self.layout;
        let mut loss_terms: Vec<Var> = Vec::new();
        let (mut ratio_value, mut ortho_value) = (0.0, 0.0);

        let mut u = None;
        if let Some(pw) = lay.pump_w {
            let uv = self.pump_embedding(tape, p[pw])?;
            let ut = tape.transpose(uv);
            let l = tape.constant(self.laplacian.clone());
            let lu = tape.matmul(l, uv)?;
            let num_m = tape.matmul(ut, lu)?;
            let num = tape.trace(num_m)?;
            let d = tape.constant(self.degree_diag.clone());
            let du = tape.matmul(d, uv)?;
            let den_m = tape.matmul(ut, du)?;
            let den = tape.trace(den_m)?;
            let ratio = tape.div(num, den)?;
            let gram = tape.matmul(ut, uv)?;
            let eye = tape.constant(Array2::eye(cfg.pump_width));
            let diff = tape.sub(gram, eye)?;
            let ortho = tape.frobenius_sq(diff);
            ratio_value = tape.scalar(ratio);
            ortho_value = tape.scalar(ortho);
            loss_terms.push(tape.scale(ratio, cfg.dirichlet_weight));
            loss_terms.push(tape.scale(ortho, cfg.ortho_weight));
            u = Some(uv);
        }

        let refreshed;
        let (bank, fixed) = match supports {
            Supports::Refresh => {
                let uv = u.ok_or_else(|| Error::arg("refreshing supports needs the pump"))?;
                let dist = distance_matrix_with(tape.value(uv).view(), cfg.distance);
                refreshed = filter_bank(&dist, cfg.jumps, cfg.jump_mode)?;
                (&refreshed, false)
            }
            Supports::Frozen(b) => (b, false),
            Supports::Fixed(b) => (b, true),
        };
        if bank.jumps() != cfg.jumps || bank.n != self.n {
            return Err(Error::dim("filter bank jumps", cfg.jumps, bank.jumps()));
        }

        let x = tape.constant(self.x.clone());
        let xd = tape.dropout(x, dropout, rng)?;
        let mut branches = Vec::with_capacity(cfg.branches());
        for (k, &wk) in lay.jumps.iter().enumerate() {
            let jx = if k == 0 {
                xd
            } else {
                let filt = &bank.filters[k];
                let coeffs = if fixed {
                    tape.constant(Array2::from_shape_vec((filt.coeffs.len(), 1), filt.coeffs.clone()).expect("column"))
                } else {
                    let uv = u.ok_or_else(|| Error::arg("learned coefficients need the pump"))?;
                    let dist = tape.pair_distance(uv, &filt.pairs, cfg.distance == DistanceKind::Squared)?;
                    let neg = tape.scale(dist, -1.0);
                    tape.exp(neg)
                };
                tape.sparse_aggregate(&filt.pairs, coeffs, xd)?
            };
            let pre = tape.matmul(jx, p[wk])?;
            branches.push(tape.relu(pre));
        }
        if let Some(hb) = lay.homophilic {
            let a = tape.constant(self.homophilic_adj.clone());
            let xw = tape.matmul(xd, p[hb])?;
            let pre = tape.matmul(a, xw)?;
            branches.push(tape.relu(pre));
        }

        let alpha = tape.row_softmax(p[lay.logits]);
        let alphas = tape.value(alpha).row(0).to_vec();
        let weighted: Vec<Var> = branches
            .iter()
            .enumerate()
            .map(|(b, &h)| tape.scale_by_entry(h, alpha, b))
            .collect::<Result<_>>()?;
        let hcat = tape.concat(&weighted)?;

        let [w1, b1, w2, b2] = lay.head;
        let hd = tape.dropout(hcat, dropout, rng)?;
        let z1 = tape.matmul(hd, p[w1])?;
        let z1 = tape.add_row(z1, p[b1])?;
        let z1 = tape.relu(z1);
        let z1 = tape.dropout(z1, dropout, rng)?;
        let z2 = tape.matmul(z1, p[w2])?;
        let logits = tape.add_row(z2, p[b2])?;

        let ce = tape.cross_entropy(logits, &self.train, &self.train_labels)?;
        let ce_value = tape.scalar(ce);
        loss_terms.push(ce);
        if cfg.weight_decay > 0.0 {
            for i in lay.weights() {
                let sq = tape.frobenius_sq(p[i]);
                loss_terms.push(tape.scale(sq, 0.5 * cfg.weight_decay));
            }
        }
        let mut loss = loss_terms[0];
        for &t in &loss_terms[1..] {
            loss = tape.add(loss, t)?;
        }
        Ok(Forward {
            loss,
            logits,
            dirichlet: ratio_value,
            ortho: ortho_value,
            ce: ce_value,
            alphas,
        })
    }

    /// Loss and gradient with dropout off.
    pub fn loss_and_grad(&self, params: &[Array2<f64>], supports: Supports<'_>) -> Result<(f64, Vec<Array2<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &vars, supports, 0.0, &mut rng)?;
        let grads = tape.backward(out.loss)?;
        Ok((tape.scalar(out.loss), vars.iter().map(|&v| grads.get(v)).collect()))
    }

    pub fn loss(&self, params: &[Array2<f64>], supports: Supports<'_>) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &vars, supports, 0.0, &mut rng)?;
        Ok(tape.scalar(out.loss))
    }

    /// Class scores with dropout off.
    pub fn logits(&self, params: &[Array2<f64>], supports: Supports<'_>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &vars, supports, 0.0, &mut rng)?;
        Ok(tape.value(out.logits).clone())
    }
}

/// A trained model with the artefacts needed for reporting.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: DjModel,
    pub fit: FitOutcome,
    /// Distances at the best epoch (or the frozen ones when decoupled).
    pub distances: DistanceMatrix<f64>,
    pub bank: FilterBank<f64>,
    /// Final pump ratio of the decoupled pre-training, if any.
    pub pretrained_ratio: Option<f64>,
}

impl TrainedModel {
    pub fn alphas(&self) -> Vec<f64> {
        let a = &self.fit.params[self.model.layout.logits];
        let m = a.fold(f64::NEG_INFINITY, |x, &y| x.max(y));
        let e = a.mapv(|x| (x - m).exp());
        let s = e.sum();
        e.row(0).iter().map(|x| x / s).collect()
    }

    pub fn evaluate(&self, labels: &LabelVector, masks: &SplitMasks) -> Result<Accuracies> {
        let supports = match self.model.layout.pump_w {
            Some(_) => Supports::Refresh,
            None => Supports::Fixed(&self.bank),
        };
        let logits = self.model.logits(&self.fit.params, supports)?;
        Ok(evaluate_logits(&logits, labels, masks))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

/// Argmax accuracy on each split.
pub fn evaluate_logits(logits: &Array2<f64>, labels: &LabelVector, masks: &SplitMasks) -> Accuracies {
    let pred = argmax_rows(logits.view());
    let y = labels.as_slice();
    Accuracies {
        train: accuracy(&pred, y, &indices(&masks.train)),
        val: accuracy(&pred, y, &indices(&masks.val)),
        test: accuracy(&pred, y, &indices(&masks.test)),
    }
}

/// Trains the network on one split.
pub fn train(
    g: &Graph,
    x: &FeatureMatrix,
    labels: &LabelVector,
    masks: &SplitMasks,
    cfg: &ModelConfig,
) -> Result<TrainedModel> {
    labels.check_len(masks.len())?;
    let model = DjModel::new(g, x, labels, &masks.train, cfg)?;
    let settings = FitSettings {
        lr: cfg.lr,
        epochs: cfg.epochs,
        patience: cfg.patience,
        seed: cfg.seed,
    };
    let init = model.init_params();

    if cfg.decoupled {
        let pump = train_pump::<f64>(
            g,
            &PumpConfig {
                width: cfg.pump_width,
                lr: cfg.lr,
                steps: cfg.pump_steps,
                ortho_weight: if cfg.dirichlet_weight > 0.0 {
                    cfg.ortho_weight / cfg.dirichlet_weight
                } else {
                    cfg.ortho_weight
                },
                seed: cfg.seed,
                activation: cfg.activation,
                basis: cfg.pump_basis,
                bias: false,
                distance: cfg.distance,
            },
        )?;
        let bank = filter_bank(&pump.distances, cfg.jumps, cfg.jump_mode)?;
        let ratio = pump.env.ratio;
        let fit = fit(init, &settings, labels, masks, |tape, p, training, rng| {
            let drop = if training { cfg.dropout } else { 0.0 };
            let mut out = model.forward(tape, p, Supports::Fixed(&bank), drop, rng)?;
            out.dirichlet = ratio;
            Ok(out)
        })?;
        return Ok(TrainedModel {
            model,
            fit,
            distances: pump.distances,
            bank,
            pretrained_ratio: Some(ratio),
        });
    }

    let fit = fit(init, &settings, labels, masks, |tape, p, training, rng| {
        let drop = if training { cfg.dropout } else { 0.0 };
        model.forward(tape, p, Supports::Refresh, drop, rng)
    })?;
    let distances = model.distances(&fit.params)?;
    let bank = filter_bank(&distances, cfg.jumps, cfg.jump_mode)?;
    Ok(TrainedModel {
        model,
        fit,
        distances,
        bank,
        pretrained_ratio: None,
    })
}

/// Test accuracies over several splits with their mean and population std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub test_accs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SplitSummary {
    pub fn new(test_accs: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&test_accs);
        SplitSummary { test_accs, mean, std }
    }
}

impl fmt::Display for SplitSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

pub fn run_splits(
    g: &Graph,
    x: &FeatureMatrix,
    labels: &LabelVector,
    splits: &[SplitMasks],
    cfg: &ModelConfig,
) -> Result<SplitSummary> {
    let accs = splits
        .iter()
        .map(|m| train(g, x, labels, m, cfg).map(|t| t.fit.test_acc))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitSummary::new(accs))
}

/// Per-block worst relative error from a finite-difference comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub blocks: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

impl GradReport {
    fn new(names: &[String], errs: Vec<f64>) -> Self {
        let max_rel_err = errs.iter().copied().fold(0.0, f64::max);
        GradReport {
            blocks: names.iter().cloned().zip(errs).collect(),
            max_rel_err,
        }
    }
}

/// A small random connected instance: a ring plus seeded chords, Gaussian
/// features, alternating labels and every other node in the training set.
pub fn toy_instance(n: usize, features: usize, classes: usize, seed: u64) -> Result<(Graph, FeatureMatrix, LabelVector, SplitMasks)> {
    if n < 3 {
        return Err(Error::arg("toy instance needs at least 3 nodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..n {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    let edges: std::collections::BTreeSet<(usize, usize)> = edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
    let g = Graph::new(n, edges)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let x = FeatureMatrix::new(Array2::from_shape_simple_fn((n, features), || normal.sample(&mut rng)))?;
    let labels = LabelVector::new((0..n).map(|i| i % classes).collect(), classes)?;
    let train: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let val: Vec<bool> = (0..n).map(|i| i % 4 == 1).collect();
    let test: Vec<bool> = (0..n).map(|i| i % 4 == 3).collect();
    Ok((g, x, labels, SplitMasks::new(train, val, test)?))
}

/// Finite-difference check of the full loss on a toy instance with frozen
/// supports and dropout off.
pub fn gradcheck_model(n: usize, jumps: usize, seed: u64) -> Result<GradReport> {
    let (g, x, labels, masks) = toy_instance(n, 4, 2, seed)?;
    let cfg = ModelConfig {
        jumps,
        hidden: 5,
        dropout: 0.0,
        pump_width: 3,
        seed,
        ..ModelConfig::default()
    };
    let model = DjModel::new(&g, &x, &labels, &masks.train, &cfg)?;
    let mut params = model.init_params();
    // nonzero attention logits so the softmax gradient is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    params[model.layout.logits].mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let bank = model.support_bank(&params)?;
    let (_, analytic) = model.loss_and_grad(&params, Supports::Frozen(&bank))?;
    let check = finite_diff_check(|p| model.loss(p, Supports::Frozen(&bank)), &params, &analytic, 1e-6)?;
    Ok(GradReport::new(&model.layout.names, check.per_block))
}

/// Finite-difference check of the pump trace-ratio loss with respect to `U`.
pub fn gradcheck_pump(n: usize, width: usize, seed: u64) -> Result<GradReport> {
    let (g, _, _, _) = toy_instance(n, 1, 2, seed)?;
    let ops = RatioOperators::<f64>::new(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let u = Array2::from_shape_simple_fn((n, width), || normal.sample(&mut rng));
    let (_, grad) = ops.gradient(u.view())?;
    let check = finite_diff_check(|p| ops.ratio(p[0].view()), &[u], &[grad], 1e-6)?;
    Ok(GradReport::new(&["pump_ratio_u".to_string()], check.per_block))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_alphas() {
        let (g, x, labels, masks) = toy_instance(10, 3, 2, 4).unwrap();
        let cfg = ModelConfig {
            jumps: 2,
            hidden: 4,
            epochs: 1,
            ..ModelConfig::default()
        };
        let model = DjModel::new(&g, &x, &labels, &masks.train, &cfg).unwrap();
        let params = model.init_params();
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward(&mut tape, &vars, Supports::Refresh, 0.0, &mut rng).unwrap();
        assert_eq!(out.alphas.len(), 4);
        for a in out.alphas {
            assert!((a - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        let report = gradcheck_model(12, 2, 1).unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    #[test]
    fn pump_gradient_matches_finite_differences() {
        let report = gradcheck_pump(10, 3, 3).unwrap();
        assert!(report.max_rel_err <= 1e-5, "{report:?}");
    }

    #[test]
    fn rejects_bad_config() {
        let bad = ModelConfig {
            dropout: 1.0,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            epochs: 0,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn split_summary_format() {
        let s = SplitSummary::new(vec![0.9, 0.7]);
        assert_eq!(s.to_string(), "80.00 ± 10.00");
    }
}
