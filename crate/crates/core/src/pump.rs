//! The diffusion pump: a learned map `U = act(B W + 1 b^T)` (with `B` the
//! adjacency, or the identity for the ablation) trained to minimise the
//! trace-ratio Dirichlet loss `Tr[U^T L U] / Tr[U^T D U]` plus a soft
//! orthonormality penalty `||U^T U - I||_F^2`.
//!
//! Row distances of the trained `U` approximate asymptotic diffusion
//! distances and drive the jump filters.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

/// Input the pump projects: the adjacency (`f(A)`) or the identity (`f(I)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PumpBasis {
    #[default]
    Adjacency,
    Identity,
}

/// Whether pair distances are Euclidean norms or their squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Norm,
    Squared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PumpParams<T> {
    pub w: Array2<T>,
    pub bias: Option<Array1<T>>,
}

impl<T: Scalar> PumpParams<T> {
    pub fn zeros(n_in: usize, width: usize) -> Self {
        PumpParams {
            w: Array2::zeros((n_in, width)),
            bias: None,
        }
    }

    /// Gaussian initialisation scaled so that the columns of `B W` have
    /// roughly unit norm.
    pub fn random(n_in: usize, width: usize, std: f64, with_bias: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("positive std");
        let w = Array2::from_shape_simple_fn((n_in, width), || T::of(normal.sample(&mut rng)));
        let bias = with_bias.then(|| Array1::zeros(width));
        PumpParams { w, bias }
    }

    pub fn width(&self) -> usize {
        self.w.ncols()
    }
}

/// Dense operators the loss needs, built once per graph.
#[derive(Debug, Clone)]
pub struct RatioOperators<T> {
    pub laplacian: Array2<T>,
    pub degrees: Array1<T>,
}

impl<T: Scalar> RatioOperators<T> {
    pub fn new(g: &Graph) -> Self {
        RatioOperators {
            laplacian: g.laplacian(),
            degrees: g.degree_vector(),
        }
    }

    fn n(&self) -> usize {
        self.degrees.len()
    }

    /// `(Tr[U^T L U], Tr[U^T D U], L U)`.
    fn traces(&self, u: ArrayView2<T>) -> (T, T, Array2<T>) {
        let lu = self.laplacian.dot(&u);
        let num = u.iter().zip(lu.iter()).map(|(&a, &b)| a * b).sum();
        let den = u
            .outer_iter()
            .zip(self.degrees.iter())
            .map(|(row, &d)| d * row.dot(&row))
            .sum();
        (num, den, lu)
    }

    pub fn ratio(&self, u: ArrayView2<T>) -> Result<T> {
        self.check(u)?;
        let (num, den, _) = self.traces(u);
        if !(den > T::zero()) {
            return Err(Error::ZeroDenominator("dirichlet_ratio"));
        }
        Ok(num / den)
    }

    /// Gradient `(2 L U - 2 rho D U) / Tr[U^T D U]` of the ratio.
    pub fn gradient(&self, u: ArrayView2<T>) -> Result<(T, Array2<T>)> {
        self.check(u)?;
        let (num, den, lu) = self.traces(u);
        if !(den > T::zero()) {
            return Err(Error::ZeroDenominator("pump_gradient"));
        }
        let rho = num / den;
        let two = T::of(2.0);
        let mut grad = lu;
        for (i, mut row) in grad.outer_iter_mut().enumerate() {
            let d = self.degrees[i];
            for (g, &x) in row.iter_mut().zip(u.row(i)) {
                *g = two * (*g - rho * d * x) / den;
            }
        }
        Ok((rho, grad))
    }

    fn check(&self, u: ArrayView2<T>) -> Result<()> {
        if u.nrows() != self.n() {
            return Err(Error::dim("pump embedding rows", self.n(), u.nrows()));
        }
        Ok(())
    }
}

/// `U = act(B W + 1 b^T)`.
pub fn pump_forward<T: Scalar>(
    basis: &Array2<T>,
    params: &PumpParams<T>,
    act: Activation,
) -> Result<Array2<T>> {
    if basis.ncols() != params.w.nrows() {
        return Err(Error::dim("pump_forward", basis.ncols(), params.w.nrows()));
    }
    let mut z = basis.dot(&params.w);
    if let Some(b) = &params.bias {
        if b.len() != params.w.ncols() {
            return Err(Error::dim("pump bias", params.w.ncols(), b.len()));
        }
        z += &b.view().insert_axis(Axis(0));
    }
    if act == Activation::Tanh {
        z.mapv_inplace(|x| x.tanh());
    }
    Ok(z)
}

pub fn dirichlet_ratio<T: Scalar>(u: ArrayView2<T>, g: &Graph) -> Result<T> {
    RatioOperators::new(g).ratio(u)
}

pub fn pump_gradient<T: Scalar>(u: ArrayView2<T>, g: &Graph) -> Result<Array2<T>> {
    Ok(RatioOperators::new(g).gradient(u)?.1)
}

/// `||U^T U - I||_F^2`.
pub fn ortho_penalty<T: Scalar>(u: ArrayView2<T>) -> T {
    let gram = u.t().dot(&u);
    let mut acc = T::zero();
    for ((i, j), &x) in gram.indexed_iter() {
        let e = if i == j { x - T::one() } else { x };
        acc += e * e;
    }
    acc
}

/// Gradient `4 U (U^T U - I)` of the orthonormality penalty.
pub fn ortho_gradient<T: Scalar>(u: ArrayView2<T>) -> Array2<T> {
    let mut gram = u.t().dot(&u);
    for i in 0..gram.nrows() {
        gram[[i, i]] -= T::one();
    }
    u.dot(&gram).mapv(|x| x * T::of(4.0))
}

/// Pairwise row distances of an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    data: Array2<T>,
    kind: DistanceKind,
}

impl<T: Scalar> DistanceMatrix<T> {
    /// Wraps an explicit matrix after checking symmetry, sign and diagonal.
    pub fn from_matrix(data: Array2<T>) -> Result<Self> {
        let n = data.nrows();
        if data.ncols() != n {
            return Err(Error::dim("distance matrix (square)", n, data.ncols()));
        }
        for i in 0..n {
            if data[[i, i]] != T::zero() {
                return Err(Error::arg(format!("distance diagonal at {i} is not zero")));
            }
            for j in 0..n {
                let x = data[[i, j]];
                if !(x >= T::zero()) || !x.is_finite() {
                    return Err(Error::arg(format!("distance ({i}, {j}) is negative or not finite")));
                }
                if x != data[[j, i]] {
                    return Err(Error::NotSymmetric((x - data[[j, i]]).abs().f64()));
                }
            }
        }
        Ok(DistanceMatrix {
            data,
            kind: DistanceKind::Norm,
        })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[[i, j]]
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    pub fn as_array(&self) -> &Array2<T> {
        &self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.data.row(i)
    }

    /// Applies a node relabeling: entry `(perm[i], perm[j])` of the result is
    /// entry `(i, j)` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut data = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                data[[perm[i], perm[j]]] = self.data[[i, j]];
            }
        }
        DistanceMatrix {
            data,
            kind: self.kind,
        }
    }
}

pub fn distance_matrix<T: Scalar>(u: ArrayView2<T>) -> DistanceMatrix<T> {
    distance_matrix_with(u, DistanceKind::Norm)
}

pub fn distance_matrix_with<T: Scalar>(u: ArrayView2<T>, kind: DistanceKind) -> DistanceMatrix<T> {
    let n = u.nrows();
    let mut data = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: T = u
                .row(i)
                .iter()
                .zip(u.row(j))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            let d = match kind {
                DistanceKind::Norm => sq.sqrt(),
                DistanceKind::Squared => sq,
            };
            data[[i, j]] = d;
            data[[j, i]] = d;
        }
    }
    DistanceMatrix { data, kind }
}

/// The trained embedding with per-column generalised Rayleigh quotients
/// `u^T L u / u^T D u` and the overall trace ratio.
#[derive(Debug, Clone)]
pub struct FiedlerEnvironment<T> {
    pub u: Array2<T>,
    pub rayleigh: Vec<T>,
    pub ratio: T,
}

impl<T: Scalar> FiedlerEnvironment<T> {
    pub fn new(u: Array2<T>, ops: &RatioOperators<T>) -> Result<Self> {
        let ratio = ops.ratio(u.view())?;
        let rayleigh = column_rayleigh(u.view(), ops, false);
        Ok(FiedlerEnvironment { u, rayleigh, ratio })
    }

    /// Rayleigh quotients after removing each column's component along the
    /// constant (trivial) direction in the `D` inner product.
    pub fn deflated_rayleigh(&self, ops: &RatioOperators<T>) -> Vec<T> {
        column_rayleigh(self.u.view(), ops, true)
    }
}

/// Pearson correlation of each column of `u` with the lifted Fiedler vector
/// `D^-1/2 phi_2`.
pub fn fiedler_correlations(u: ArrayView2<f64>, g: &Graph) -> Result<Vec<f64>> {
    if u.nrows() != g.n() {
        return Err(Error::dim("embedding rows", g.n(), u.nrows()));
    }
    let spec = crate::spectral::SpectralData::<f64>::new(g)?;
    let psi2 = spec.psi(1).to_vec();
    Ok(u.columns()
        .into_iter()
        .map(|c| crate::metrics::pearson(&c.to_vec(), &psi2))
        .collect())
}

fn column_rayleigh<T: Scalar>(u: ArrayView2<T>, ops: &RatioOperators<T>, deflate: bool) -> Vec<T> {
    let vol: T = ops.degrees.sum();
    u.columns()
        .into_iter()
        .map(|col| {
            let mut c = col.to_owned();
            if deflate {
                let proj = c.iter().zip(ops.degrees.iter()).map(|(&x, &d)| x * d).sum::<T>() / vol;
                c.mapv_inplace(|x| x - proj);
            }
            let num = c.dot(&ops.laplacian.dot(&c));
            let den = c.iter().zip(ops.degrees.iter()).map(|(&x, &d)| d * x * x).sum::<T>();
            if den > T::zero() {
                num / den
            } else {
                T::zero()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PumpConfig {
    pub width: usize,
    pub lr: f64,
    pub steps: usize,
    pub ortho_weight: f64,
    pub seed: u64,
    pub activation: Activation,
    pub basis: PumpBasis,
    pub bias: bool,
    pub distance: DistanceKind,
}

impl Default for PumpConfig {
    fn default() -> Self {
        PumpConfig {
            width: 3,
            lr: 0.01,
            steps: 2000,
            ortho_weight: 1.0,
            seed: 0,
            activation: Activation::Identity,
            basis: PumpBasis::Adjacency,
            bias: false,
            distance: DistanceKind::Norm,
        }
    }
}

/// Everything needed to evaluate and differentiate the pump objective.
#[derive(Debug, Clone)]
pub struct Pump<T> {
    pub basis: Array2<T>,
    pub ops: RatioOperators<T>,
    pub params: PumpParams<T>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpLoss<T> {
    pub ratio: T,
    pub ortho: T,
    pub total: T,
}

impl<T: Scalar> Pump<T> {
    pub fn new(g: &Graph, cfg: &PumpConfig) -> Result<Self> {
        if cfg.width < 2 {
            return Err(Error::arg("pump width must be at least 2"));
        }
        let n = g.n();
        let basis = match cfg.basis {
            PumpBasis::Adjacency => g.adjacency::<T>(),
            PumpBasis::Identity => Array2::eye(n),
        };
        let std = init_std(g, cfg.basis);
        let params = PumpParams::random(n, cfg.width, std, cfg.bias, cfg.seed);
        Ok(Pump {
            basis,
            ops: RatioOperators::new(g),
            params,
            activation: cfg.activation,
        })
    }

    pub fn forward(&self) -> Result<Array2<T>> {
        pump_forward(&self.basis, &self.params, self.activation)
    }

    /// Loss `ratio + ortho_weight * penalty` and its gradient with respect to
    /// the weights (and bias, when present).
    pub fn loss_and_grad(&self, ortho_weight: T) -> Result<(PumpLoss<T>, PumpParams<T>)> {
        let u = self.forward()?;
        let (ratio, mut gu) = self.ops.gradient(u.view())?;
        let ortho = ortho_penalty(u.view());
        gu.scaled_add(ortho_weight, &ortho_gradient(u.view()));
        Ok((
            PumpLoss {
                ratio,
                ortho,
                total: ratio + ortho_weight * ortho,
            },
            self.backprop(&u, gu),
        ))
    }

    /// Chains an embedding gradient back to the parameters.
    pub fn backprop(&self, u: &Array2<T>, mut grad_u: Array2<T>) -> PumpParams<T> {
        if self.activation == Activation::Tanh {
            grad_u.zip_mut_with(u, |g, &y| *g *= T::one() - y * y);
        }
        let w = self.basis.t().dot(&grad_u);
        let bias = self.params.bias.as_ref().map(|_| grad_u.sum_axis(Axis(0)));
        PumpParams { w, bias }
    }
}

pub(crate) fn init_std(g: &Graph, basis: PumpBasis) -> f64 {
    let n = g.n().max(1) as f64;
    match basis {
        PumpBasis::Adjacency => {
            // column norm of A W is about std * ||A||_F
            let fro_sq: f64 = g.edges().iter().map(|&(_, _, w)| 2.0 * w * w).sum::<f64>()
                + g.self_loops().iter().map(|&(_, w)| w * w).sum::<f64>();
            1.0 / fro_sq.max(1e-12).sqrt()
        }
        PumpBasis::Identity => 1.0 / n.sqrt(),
    }
}

#[derive(Debug, Clone)]
pub struct PumpResult<T> {
    pub env: FiedlerEnvironment<T>,
    pub distances: DistanceMatrix<T>,
    pub params: PumpParams<T>,
    pub initial_loss: T,
    pub final_loss: T,
    pub history: Vec<T>,
}

/// Trains the pump alone with Adam.
pub fn train_pump<T: Scalar>(g: &Graph, cfg: &PumpConfig) -> Result<PumpResult<T>> {
    g.require_connected()?;
    let mut pump = Pump::<T>::new(g, cfg)?;
    let mu = T::of(cfg.ortho_weight);
    let mut shapes = vec![pump.params.w.dim()];
    if pump.params.bias.is_some() {
        shapes.push((1, cfg.width));
    }
    let mut opt = Adam::<T>::new(AdamConfig::with_lr(cfg.lr), shapes);
    let mut history = Vec::with_capacity(cfg.steps + 1);

    for step in 0..cfg.steps {
        let (loss, grad) = pump.loss_and_grad(mu)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence { step });
        }
        history.push(loss.total);
        apply_step(&mut opt, &mut pump.params, grad);
    }
    let (final_loss, _) = pump.loss_and_grad(mu)?;
    if !final_loss.total.is_finite() {
        return Err(Error::Divergence { step: cfg.steps });
    }
    history.push(final_loss.total);

    let u = pump.forward()?;
    let distances = distance_matrix_with(u.view(), cfg.distance);
    let env = FiedlerEnvironment::new(u, &pump.ops)?;
    Ok(PumpResult {
        env,
        distances,
        params: pump.params,
        initial_loss: history[0],
        final_loss: final_loss.total,
        history,
    })
}

pub(crate) fn apply_step<T: Scalar>(opt: &mut Adam<T>, params: &mut PumpParams<T>, grad: PumpParams<T>) {
    match (&mut params.bias, grad.bias) {
        (Some(b), Some(gb)) => {
            let mut b2 = b.clone().insert_axis(Axis(0));
            let gb2 = gb.insert_axis(Axis(0));
            opt.update(&mut [&mut params.w, &mut b2], &[&grad.w, &gb2]);
            *b = b2.index_axis_move(Axis(0), 0);
        }
        _ => opt.update(&mut [&mut params.w], &[&grad.w]),
    }
}
