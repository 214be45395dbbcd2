//! Reverse-mode differentiation over a fixed set of dense primitives, plus a
//! central finite-difference verifier.
//!
//! A [`Tape`] is rebuilt for every forward pass. Leaves are either
//! parameters (which receive gradients) or constants (which do not); every
//! other node records the primitive that produced it.

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// Adds a `1 x c` row to every row.
    AddRow(Var, Var),
    Exp(Var),
    Tanh(Var),
    Relu(Var),
    SelectRows(Var, Vec<usize>),
    RowSoftmax(Var),
    Trace(Var),
    FrobeniusSq(Var),
    Concat(Vec<Var>),
    /// Elementwise product with a fixed (already rescaled) mask.
    Dropout(Var, Array2<f64>),
    CrossEntropy {
        logits: Var,
        rows: Vec<usize>,
        labels: Vec<usize>,
    },
    /// Scalar over scalar.
    Div(Var, Var),
    /// `a * s[0, idx]`.
    ScaleByEntry(Var, Var, usize),
    /// Column of row distances `||u_i - u_j||` (or squared) over `pairs`.
    PairDistance {
        u: Var,
        pairs: Vec<(usize, usize)>,
        squared: bool,
    },
    /// `out[i] += c[p] * x[j]` for each pair `p = (i, j)`.
    SparseAggregate {
        pairs: Vec<(usize, usize)>,
        coeffs: Var,
        x: Var,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adj: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Array2<f64> {
        self.adj[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }
}

fn dims_eq(a: (usize, usize), b: (usize, usize), what: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            what,
            expected: a,
            found: b,
        });
    }
    Ok(())
}

fn scalar_check(shape: (usize, usize), what: &'static str) -> Result<()> {
    dims_eq((1, 1), shape, what)
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Param,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::dim("matmul inner dimension", sa.1, sb.0));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        dims_eq(self.shape(a), self.shape(b), "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        dims_eq(self.shape(a), self.shape(b), "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        dims_eq((1, self.shape(a).1), self.shape(row), "bias row")?;
        let v = self.value(a) + self.value(row);
        Ok(self.push(v, Op::AddRow(a, row), &[a, row]))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    /// `max(x, 0)`; the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let n = self.shape(a).0;
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::NodeOutOfRange { node: r, n });
        }
        let v = self.value(a).select(Axis(0), rows);
        Ok(self.push(v, Op::SelectRows(a, rows.to_vec()), &[a]))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::RowSoftmax(a), &[a])
    }

    pub fn trace(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != c {
            return Err(Error::dim("trace (square)", r, c));
        }
        let t = self.value(a).diag().sum();
        Ok(self.push(Array2::from_elem((1, 1), t), Op::Trace(a), &[a]))
    }

    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let t = self.value(a).iter().map(|x| x * x).sum();
        self.push(Array2::from_elem((1, 1), t), Op::FrobeniusSq(a), &[a])
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::arg("concat of nothing"))?;
        let rows = self.shape(*first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::dim("concat rows", rows, self.shape(p).0));
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(v, Op::Concat(parts.to_vec()), parts))
    }

    /// Inverted dropout with a mask drawn from `rng`. Probability 0 returns
    /// `a` unchanged and consumes no randomness.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::arg(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let mask = Array2::from_shape_simple_fn(self.shape(a), || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        self.apply_mask(a, mask)
    }

    /// Elementwise product with a fixed mask.
    pub fn apply_mask(&mut self, a: Var, mask: Array2<f64>) -> Result<Var> {
        dims_eq(self.shape(a), mask.dim(), "dropout mask")?;
        let v = self.value(a) * &mask;
        Ok(self.push(v, Op::Dropout(a, mask), &[a]))
    }

    /// Mean cross-entropy of the row-softmax of `logits` over `rows`.
    pub fn cross_entropy(&mut self, logits: Var, rows: &[usize], labels: &[usize]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptyBorder);
        }
        if rows.len() != labels.len() {
            return Err(Error::dim("cross-entropy labels", rows.len(), labels.len()));
        }
        let (n, c) = self.shape(logits);
        for (&r, &y) in rows.iter().zip(labels) {
            if r >= n {
                return Err(Error::NodeOutOfRange { node: r, n });
            }
            if y >= c {
                return Err(Error::arg(format!("label {y} outside {c} classes")));
            }
        }
        let z = self.value(logits);
        let mut total = 0.0;
        for (&r, &y) in rows.iter().zip(labels) {
            let row = z.row(r);
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let v = Array2::from_elem((1, 1), total / rows.len() as f64);
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                rows: rows.to_vec(),
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        scalar_check(self.shape(a), "div numerator")?;
        scalar_check(self.shape(b), "div denominator")?;
        let den = self.scalar(b);
        if den == 0.0 {
            return Err(Error::ZeroDenominator("div"));
        }
        let v = Array2::from_elem((1, 1), self.scalar(a) / den);
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    /// `a * s[0, idx]` for a row vector `s`.
    pub fn scale_by_entry(&mut self, a: Var, s: Var, idx: usize) -> Result<Var> {
        let (r, c) = self.shape(s);
        if r != 1 || idx >= c {
            return Err(Error::dim("scale entry", c, idx));
        }
        let v = self.value(a) * self.value(s)[[0, idx]];
        Ok(self.push(v, Op::ScaleByEntry(a, s, idx), &[a, s]))
    }

    pub fn pair_distance(&mut self, u: Var, pairs: &[(usize, usize)], squared: bool) -> Result<Var> {
        let n = self.shape(u).0;
        let uv = self.value(u);
        let mut v = Array2::zeros((pairs.len(), 1));
        for (p, &(i, j)) in pairs.iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::NodeOutOfRange { node: i.max(j), n });
            }
            let sq: f64 = uv.row(i).iter().zip(uv.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            v[[p, 0]] = if squared { sq } else { sq.sqrt() };
        }
        Ok(self.push(
            v,
            Op::PairDistance {
                u,
                pairs: pairs.to_vec(),
                squared,
            },
            &[u],
        ))
    }

    /// Sparse product `J X` with `J` given by `pairs` and a coefficient column.
    pub fn sparse_aggregate(&mut self, pairs: &[(usize, usize)], coeffs: Var, x: Var) -> Result<Var> {
        dims_eq((pairs.len(), 1), self.shape(coeffs), "sparse coefficients")?;
        let (n, f) = self.shape(x);
        let mut out = Array2::zeros((n, f));
        let c = self.value(coeffs);
        let xv = self.value(x);
        for (p, &(i, j)) in pairs.iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::NodeOutOfRange { node: i.max(j), n });
            }
            out.row_mut(i).scaled_add(c[[p, 0]], &xv.row(j));
        }
        Ok(self.push(
            out,
            Op::SparseAggregate {
                pairs: pairs.to_vec(),
                coeffs,
                x,
            },
            &[coeffs, x],
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut adj);
            adj[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.dim()).collect();
        Ok(Gradients { adj, shapes })
    }

    fn propagate(&self, op: &Op, out: &Array2<f64>, g: &Array2<f64>, adj: &mut [Option<Array2<f64>>]) {
        let mut acc = |v: Var, delta: Array2<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(a) => *a += &delta,
                slot => *slot = Some(delta),
            }
        };
        match op {
            Op::Param | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Exp(a) => acc(*a, g * out),
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
                acc(*a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| if x <= 0.0 { *d = 0.0 });
                acc(*a, d);
            }
            Op::SelectRows(a, rows) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (k, &r) in rows.iter().enumerate() {
                    let mut dr = d.row_mut(r);
                    dr += &g.row(k);
                }
                acc(*a, d);
            }
            Op::RowSoftmax(a) => {
                let mut d = g.clone();
                for (mut drow, srow) in d.outer_iter_mut().zip(out.outer_iter()) {
                    let dot: f64 = drow.iter().zip(srow.iter()).map(|(x, y)| x * y).sum();
                    Zip::from(&mut drow).and(&srow).for_each(|x, &s| *x = s * (*x - dot));
                }
                acc(*a, d);
            }
            Op::Trace(a) => {
                let n = self.shape(*a).0;
                acc(*a, Array2::eye(n) * g[[0, 0]]);
            }
            Op::FrobeniusSq(a) => acc(*a, self.value(*a) * (2.0 * g[[0, 0]])),
            Op::Concat(parts) => {
                let mut col = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(p, g.slice(s![.., col..col + w]).to_owned());
                    col += w;
                }
            }
            Op::Dropout(a, mask) => acc(*a, g * mask),
            Op::CrossEntropy { logits, rows, labels } => {
                let z = self.value(*logits);
                let mut d = Array2::zeros(z.dim());
                let scale = g[[0, 0]] / rows.len() as f64;
                for (&r, &y) in rows.iter().zip(labels) {
                    let p = softmax_rows(&z.slice(s![r..r + 1, ..]).to_owned());
                    let mut dr = d.row_mut(r);
                    dr.scaled_add(scale, &p.row(0));
                    dr[y] -= scale;
                }
                acc(*logits, d);
            }
            Op::Div(a, b) => {
                let (x, y) = (self.scalar(*a), self.scalar(*b));
                acc(*a, Array2::from_elem((1, 1), g[[0, 0]] / y));
                acc(*b, Array2::from_elem((1, 1), -g[[0, 0]] * x / (y * y)));
            }
            Op::ScaleByEntry(a, s, idx) => {
                let sv = self.value(*s);
                acc(*a, g * sv[[0, *idx]]);
                if self.nodes[s.0].needs_grad {
                    let dot: f64 = g.iter().zip(self.value(*a).iter()).map(|(x, y)| x * y).sum();
                    let mut d = Array2::zeros(sv.dim());
                    d[[0, *idx]] = dot;
                    acc(*s, d);
                }
            }
            Op::PairDistance { u, pairs, squared } => {
                let uv = self.value(*u);
                let mut d = Array2::zeros(uv.dim());
                for (p, &(i, j)) in pairs.iter().enumerate() {
                    let dist = out[[p, 0]];
                    let factor = if *squared {
                        2.0 * g[[p, 0]]
                    } else if dist > 0.0 {
                        g[[p, 0]] / dist
                    } else {
                        0.0
                    };
                    if factor == 0.0 || i == j {
                        continue;
                    }
                    for c in 0..uv.ncols() {
                        let diff = factor * (uv[[i, c]] - uv[[j, c]]);
                        d[[i, c]] += diff;
                        d[[j, c]] -= diff;
                    }
                }
                acc(*u, d);
            }
            Op::SparseAggregate { pairs, coeffs, x } => {
                let cv = self.value(*coeffs);
                let xv = self.value(*x);
                if self.nodes[coeffs.0].needs_grad {
                    let mut dc = Array2::zeros(cv.dim());
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        dc[[p, 0]] = g.row(i).dot(&xv.row(j));
                    }
                    acc(*coeffs, dc);
                }
                if self.nodes[x.0].needs_grad {
                    let mut dx = Array2::zeros(xv.dim());
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        dx.row_mut(j).scaled_add(cv[[p, 0]], &g.row(i));
                    }
                    acc(*x, dx);
                }
            }
        }
    }
}

/// Outcome of a finite-difference comparison, per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub per_block: Vec<f64>,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        self.per_block.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares `analytic` with central differences of `f` around `params`.
///
/// The relative error of each coordinate uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(mut f: F, params: &[Array2<f64>], analytic: &[Array2<f64>], h: f64) -> Result<GradCheck>
where
    F: FnMut(&[Array2<f64>]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::arg("finite-difference step must be positive"));
    }
    if params.len() != analytic.len() {
        return Err(Error::dim("gradient blocks", params.len(), analytic.len()));
    }
    let mut work: Vec<Array2<f64>> = params.to_vec();
    let mut per_block = Vec::with_capacity(params.len());
    for b in 0..params.len() {
        dims_eq(params[b].dim(), analytic[b].dim(), "gradient block")?;
        let mut worst: f64 = 0.0;
        for idx in 0..params[b].len() {
            let (r, c) = (idx / params[b].ncols(), idx % params[b].ncols());
            let x0 = params[b][[r, c]];
            work[b][[r, c]] = x0 + h;
            let fp = f(&work)?;
            work[b][[r, c]] = x0 - h;
            let fm = f(&work)?;
            work[b][[r, c]] = x0;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite("finite-difference evaluation"));
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[b][[r, c]];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        per_block.push(worst);
    }
    Ok(GradCheck { per_block })
}

/// Reduces any node to `sum(out * weights)` so every primitive can be
/// checked through a scalar.
fn weighted_sum(t: &mut Tape, out: Var, weights: &Array2<f64>) -> Result<Var> {
    let (r, c) = t.shape(out);
    let masked = t.apply_mask(out, weights.clone())?;
    let left = t.constant(Array2::ones((1, r)));
    let right = t.constant(Array2::ones((c, 1)));
    let row = t.matmul(left, masked)?;
    t.matmul(row, right)
}

type PrimitiveCase = (&'static str, Vec<Array2<f64>>, fn(&mut Tape, &[Var]) -> Result<Var>);

fn primitive_cases(seed: u64) -> Vec<PrimitiveCase> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut m = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0));
    // entries kept away from the ReLU kink
    let away = m(4, 3).mapv(|x: f64| if x.abs() < 0.2 { 0.5 * x.signum() } else { x });
    let positive = m(1, 1).mapv(|x: f64| 1.5 + x.abs());
    vec![
        ("matmul", vec![m(4, 3), m(3, 5)], |t, p| t.matmul(p[0], p[1])),
        ("transpose", vec![m(4, 3)], |t, p| Ok(t.transpose(p[0]))),
        ("add", vec![m(4, 3), m(4, 3)], |t, p| t.add(p[0], p[1])),
        ("sub", vec![m(4, 3), m(4, 3)], |t, p| t.sub(p[0], p[1])),
        ("scale", vec![m(4, 3)], |t, p| Ok(t.scale(p[0], -1.7))),
        ("add_row", vec![m(4, 3), m(1, 3)], |t, p| t.add_row(p[0], p[1])),
        ("exp", vec![m(4, 3)], |t, p| Ok(t.exp(p[0]))),
        ("tanh", vec![m(4, 3)], |t, p| Ok(t.tanh(p[0]))),
        ("relu", vec![away], |t, p| Ok(t.relu(p[0]))),
        ("select_rows", vec![m(5, 3)], |t, p| t.select_rows(p[0], &[4, 1, 1])),
        ("row_softmax", vec![m(4, 3)], |t, p| Ok(t.row_softmax(p[0]))),
        ("trace", vec![m(4, 4)], |t, p| t.trace(p[0])),
        ("frobenius_sq", vec![m(4, 3)], |t, p| Ok(t.frobenius_sq(p[0]))),
        ("concat", vec![m(4, 2), m(4, 3)], |t, p| t.concat(&[p[0], p[1]])),
        ("dropout", vec![m(4, 3)], |t, p| {
            let mut r = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
            t.dropout(p[0], 0.5, &mut r)
        }),
        ("cross_entropy", vec![m(5, 3)], |t, p| t.cross_entropy(p[0], &[0, 2, 3], &[1, 0, 2])),
        ("div", vec![m(1, 1), positive], |t, p| t.div(p[0], p[1])),
        ("scale_by_entry", vec![m(4, 3), m(1, 4)], |t, p| t.scale_by_entry(p[0], p[1], 2)),
        ("pair_distance_sq", vec![m(5, 3)], |t, p| t.pair_distance(p[0], &[(0, 1), (2, 4), (4, 2)], true)),
        ("pair_distance", vec![m(5, 3)], |t, p| t.pair_distance(p[0], &[(0, 1), (2, 4), (4, 2)], false)),
        ("sparse_aggregate", vec![m(4, 1), m(5, 3)], |t, p| {
            t.sparse_aggregate(&[(0, 1), (0, 3), (2, 2), (4, 0)], p[0], p[1])
        }),
    ]
}

/// Central-difference check of every primitive on small seeded inputs.
/// Returns the worst relative error per primitive.
pub fn primitive_gradcheck(seed: u64, h: f64) -> Result<Vec<(&'static str, f64)>> {
    use rand::SeedableRng;
    let mut out = Vec::new();
    for (name, params, build) in primitive_cases(seed) {
        let mut wrng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let eval_shape = {
            let mut t = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| t.param(p.clone())).collect();
            let o = build(&mut t, &vars)?;
            t.shape(o)
        };
        let weights = Array2::from_shape_simple_fn(eval_shape, || wrng.random_range(0.5..1.5));
        let run = |p: &[Array2<f64>]| -> Result<(Tape, Var, Vec<Var>)> {
            let mut t = Tape::new();
            let vars: Vec<Var> = p.iter().map(|x| t.param(x.clone())).collect();
            let o = build(&mut t, &vars)?;
            let loss = weighted_sum(&mut t, o, &weights)?;
            Ok((t, loss, vars))
        };
        let (tape, loss, vars) = run(&params)?;
        let grads = tape.backward(loss)?;
        let analytic: Vec<Array2<f64>> = vars.iter().map(|&v| grads.get(v)).collect();
        let check = finite_diff_check(
            |p| {
                let (t, l, _) = run(p)?;
                Ok(t.scalar(l))
            },
            &params,
            &analytic,
            h,
        )?;
        out.push((name, check.max()));
    }
    Ok(out)
}
