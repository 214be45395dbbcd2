//! Undirected graphs, their dense operators, Dirichlet energies and
//! homophily statistics.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Simple undirected graph with positive edge weights.
///
/// Edges are stored once, as `(u, v, w)` with `u < v`, sorted. The dense
/// operators are built on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    self_loops: Vec<(usize, f64)>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

/// Options controlling how raw edge lists become a [`Graph`].
#[derive(Debug, Clone, Copy, Default)]
pub struct GraphOptions {
    /// Keep `(i, i)` entries instead of rejecting them.
    pub allow_self_loops: bool,
    /// Drop `(i, i)` entries silently (takes precedence over `allow_self_loops`).
    pub drop_self_loops: bool,
}

impl Graph {
    /// Unweighted graph from an edge list. Duplicate edges accumulate weight.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::weighted(n, edges.into_iter().map(|(u, v)| (u, v, 1.0)))
    }

    pub fn weighted(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        Self::with_options(n, edges, GraphOptions::default())
    }

    pub fn with_options(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        opts: GraphOptions,
    ) -> Result<Self> {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut loops: BTreeMap<usize, f64> = BTreeMap::new();
        for (u, v, w) in edges {
            for node in [u, v] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { node, n });
                }
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::BadWeight { u, v, weight: w });
            }
            if u == v {
                if opts.drop_self_loops {
                    continue;
                }
                if !opts.allow_self_loops {
                    return Err(Error::SelfLoop(u));
                }
                *loops.entry(u).or_insert(0.0) += w;
                continue;
            }
            let key = (u.min(v), u.max(v));
            *merged.entry(key).or_insert(0.0) += w;
        }
        let edges: Vec<_> = merged.into_iter().map(|((u, v), w)| (u, v, w)).collect();
        let self_loops: Vec<_> = loops.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v, w) in &edges {
            neighbors[u].push((v, w));
            neighbors[v].push((u, w));
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(j, _)| j);
        }
        Ok(Graph {
            n,
            edges,
            self_loops,
            neighbors,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of distinct (non-loop) edges.
    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn self_loops(&self) -> &[(usize, f64)] {
        &self.self_loops
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Weighted degree of every node, self-loops counted once.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d: Vec<f64> = self
            .neighbors
            .iter()
            .map(|nb| nb.iter().map(|&(_, w)| w).sum())
            .collect();
        for &(i, w) in &self.self_loops {
            d[i] += w;
        }
        d
    }

    pub fn volume(&self) -> f64 {
        self.degrees().iter().sum()
    }

    pub fn adjacency<T: Scalar>(&self) -> Array2<T> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(u, v, w) in &self.edges {
            a[[u, v]] = T::of(w);
            a[[v, u]] = T::of(w);
        }
        for &(i, w) in &self.self_loops {
            a[[i, i]] = T::of(w);
        }
        a
    }

    pub fn degree_vector<T: Scalar>(&self) -> Array1<T> {
        Array1::from_iter(self.degrees().into_iter().map(T::of))
    }

    /// Unnormalised Laplacian `D - A`.
    pub fn laplacian<T: Scalar>(&self) -> Array2<T> {
        let mut l = self.adjacency::<T>().mapv(|x| -x);
        for (i, d) in self.degrees().into_iter().enumerate() {
            l[[i, i]] += T::of(d);
        }
        l
    }

    /// Normalised Laplacian `I - D^{-1/2} A D^{-1/2}` and transition matrix
    /// `P = D^{-1} A`.
    pub fn normalized_operators<T: Scalar>(&self) -> Result<(Array2<T>, Array2<T>)> {
        let deg = self.degrees();
        if let Some(i) = deg.iter().position(|&d| d <= 0.0) {
            return Err(Error::IsolatedNode(i));
        }
        let a = self.adjacency::<T>();
        let inv_sqrt: Vec<T> = deg.iter().map(|&d| T::of(1.0 / d.sqrt())).collect();
        let mut lnorm = Array2::zeros((self.n, self.n));
        let mut p = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            let di = T::of(deg[i]);
            for j in 0..self.n {
                let aij = a[[i, j]];
                if aij != T::zero() {
                    lnorm[[i, j]] = -aij * inv_sqrt[i] * inv_sqrt[j];
                    p[[i, j]] = aij / di;
                }
            }
            lnorm[[i, i]] += T::one();
        }
        Ok((lnorm, p))
    }

    /// Connected components as a per-node component index plus the count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut comp = vec![usize::MAX; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.neighbors[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    pub fn is_connected(&self) -> bool {
        self.components().1 <= 1
    }

    pub fn require_connected(&self) -> Result<()> {
        let (_, components) = self.components();
        if components > 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(())
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::dim("permutation", self.n, perm.len()));
        }
        Graph::with_options(
            self.n,
            self.edges
                .iter()
                .map(|&(u, v, w)| (perm[u], perm[v], w))
                .chain(self.self_loops.iter().map(|&(i, w)| (perm[i], perm[i], w))),
            GraphOptions {
                allow_self_loops: true,
                drop_self_loops: false,
            },
        )
    }
}

/// Per-node class identifiers in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::arg(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(LabelVector {
            labels,
            num_classes,
        })
    }

    /// Infers the class count as `max + 1`.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        LabelVector {
            labels,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn one_hot<T: Scalar>(&self) -> Array2<T> {
        let mut y = Array2::zeros((self.labels.len(), self.num_classes));
        for (i, &c) in self.labels.iter().enumerate() {
            y[[i, c]] = T::one();
        }
        y
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.labels.len() != n {
            return Err(Error::dim("labels", n, self.labels.len()));
        }
        Ok(())
    }
}

/// Node feature matrix, one row per node, finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(FeatureMatrix(data))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Train / validation / test masks. The training mask is the border set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn new(train: Vec<bool>, val: Vec<bool>, test: Vec<bool>) -> Result<Self> {
        let n = train.len();
        if val.len() != n {
            return Err(Error::dim("validation mask", n, val.len()));
        }
        if test.len() != n {
            return Err(Error::dim("test mask", n, test.len()));
        }
        for i in 0..n {
            let hits = train[i] as u8 + val[i] as u8 + test[i] as u8;
            if hits > 1 {
                return Err(Error::arg(format!("node {i} belongs to more than one split")));
            }
        }
        Ok(SplitMasks { train, val, test })
    }

    /// Seeded random split: the first `train` fraction of a shuffled node
    /// order trains, the next `val` fraction validates, the rest tests.
    pub fn random(n: usize, train: f64, val: f64, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
            return Err(Error::arg(format!("split fractions {train}/{val} are invalid")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((n as f64) * train).round() as usize;
        let n_val = (((n as f64) * val).round() as usize).min(n - n_train);
        let mut masks = SplitMasks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        };
        for (pos, &i) in order.iter().enumerate() {
            if pos < n_train {
                masks.train[i] = true;
            } else if pos < n_train + n_val {
                masks.val[i] = true;
            } else {
                masks.test[i] = true;
            }
        }
        Ok(masks)
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn border(&self) -> Vec<usize> {
        indices(&self.train)
    }

    pub fn unknown(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.train[i]).collect()
    }
}

pub fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

/// Edge-sum Dirichlet energy `sum_{i~j} w_ij ||x_i - x_j||^2` of a signal
/// with one row per node (a plain vector is the one-column case).
pub fn dirichlet_energy<T: Scalar>(x: ArrayView2<T>, g: &Graph) -> Result<T> {
    if x.nrows() != g.n() {
        return Err(Error::dim("dirichlet_energy rows", g.n(), x.nrows()));
    }
    let mut total = T::zero();
    for &(u, v, w) in g.edges() {
        let mut acc = T::zero();
        for c in 0..x.ncols() {
            let diff = x[[u, c]] - x[[v, c]];
            acc += diff * diff;
        }
        total += T::of(w) * acc;
    }
    Ok(total)
}

pub fn dirichlet_energy_vec<T: Scalar>(x: ArrayView1<T>, g: &Graph) -> Result<T> {
    let col = x.insert_axis(ndarray::Axis(1));
    dirichlet_energy(col, g)
}

/// Matrix form `Tr[X^T (D - A) X]`.
pub fn dirichlet_energy_trace<T: Scalar>(x: ArrayView2<T>, g: &Graph) -> Result<T> {
    if x.nrows() != g.n() {
        return Err(Error::dim("dirichlet_energy rows", g.n(), x.nrows()));
    }
    let lx = g.laplacian::<T>().dot(&x);
    Ok(x.iter().zip(lx.iter()).map(|(&a, &b)| a * b).sum())
}

/// One-hot Dirichlet energy of a labeling: twice the weight of cut edges.
pub fn label_energy(labels: &LabelVector, g: &Graph) -> Result<f64> {
    labels.check_len(g.n())?;
    Ok(g.edges()
        .iter()
        .filter(|&&(u, v, _)| labels.get(u) != labels.get(v))
        .map(|&(_, _, w)| 2.0 * w)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct HomophilyStats {
    pub edge_h: f64,
    pub node_h: f64,
    pub class_h: f64,
}

/// Edge, node and class-normalised homophily (edge weights ignored).
///
/// Nodes without neighbours are skipped by the node average. With fewer than
/// two classes the class-normalised value is 0.
pub fn homophily_stats(g: &Graph, labels: &LabelVector) -> Result<HomophilyStats> {
    labels.check_len(g.n())?;
    if g.m() == 0 {
        return Err(Error::NoEdges);
    }
    let same_edges = g
        .edges()
        .iter()
        .filter(|&&(u, v, _)| labels.get(u) == labels.get(v))
        .count();
    let edge_h = same_edges as f64 / g.m() as f64;

    let c = labels.num_classes();
    let mut node_sum = 0.0;
    let mut node_count = 0usize;
    let mut class_same = vec![0usize; c];
    let mut class_deg = vec![0usize; c];
    for i in 0..g.n() {
        let nb = g.neighbors(i);
        if nb.is_empty() {
            continue;
        }
        let same = nb.iter().filter(|&&(j, _)| labels.get(j) == labels.get(i)).count();
        node_sum += same as f64 / nb.len() as f64;
        node_count += 1;
        class_same[labels.get(i)] += same;
        class_deg[labels.get(i)] += nb.len();
    }
    let node_h = node_sum / node_count as f64;

    let class_h = if c < 2 {
        0.0
    } else {
        let counts = labels.counts();
        let n = g.n() as f64;
        let excess: f64 = (0..c)
            .map(|k| {
                if class_deg[k] == 0 {
                    return 0.0;
                }
                let hk = class_same[k] as f64 / class_deg[k] as f64;
                (hk - counts[k] as f64 / n).max(0.0)
            })
            .sum();
        excess / (c - 1) as f64
    };
    Ok(HomophilyStats {
        edge_h,
        node_h,
        class_h,
    })
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::linalg::eig_sym;
    use ndarray::{array, Array1};

    #[test]
    fn path_laplacian_row() {
        let l = path3().laplacian::<f64>();
        assert_eq!(l.row(1).to_vec(), vec![-1.0, 2.0, -1.0]);
    }

    #[test]
    fn single_edge_operators() {
        let g = single_edge();
        assert_eq!(g.laplacian::<f64>(), array![[1.0, -1.0], [-1.0, 1.0]]);
        let (ln, p) = g.normalized_operators::<f64>().unwrap();
        assert_eq!(p, array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(ln, array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn barbell_trace_is_twice_edges() {
        let g = barbell();
        assert_eq!(g.m(), 7);
        let l = g.laplacian::<f64>();
        assert_eq!(l.diag().sum(), 14.0);
        for row in l.rows() {
            assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn path_transition_row() {
        let (_, p) = path3().normalized_operators::<f64>().unwrap();
        assert_eq!(p.row(1).to_vec(), vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn triangle_transition_spectrum() {
        // P is similar to I - L~, so its spectrum is 1 - spec(L~).
        let (ln, _) = triangle().normalized_operators::<f64>().unwrap();
        let eig = eig_sym(&ln).unwrap();
        let mut gammas: Vec<f64> = eig.values.iter().map(|l| 1.0 - l).collect();
        gammas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((gammas[0] + 0.5).abs() < 1e-12);
        assert!((gammas[1] + 0.5).abs() < 1e-12);
        assert!((gammas[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_is_named() {
        let g = Graph::new(3, [(0, 1)]).unwrap();
        assert!(matches!(
            g.normalized_operators::<f64>(),
            Err(Error::IsolatedNode(2))
        ));
    }

    #[test]
    fn self_loops_rejected_unless_allowed() {
        assert!(matches!(Graph::new(2, [(1, 1)]), Err(Error::SelfLoop(1))));
        let g = Graph::with_options(
            2,
            [(0, 1, 1.0), (1, 1, 1.0)],
            GraphOptions {
                allow_self_loops: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(g.degrees(), vec![1.0, 2.0]);
    }

    #[test]
    fn duplicates_accumulate() {
        let g = Graph::new(2, [(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.m(), 1);
        assert_eq!(g.edges()[0], (0, 1, 2.0));
    }

    #[test]
    fn out_of_range_endpoint() {
        assert!(matches!(
            Graph::new(2, [(0, 2)]),
            Err(Error::NodeOutOfRange { node: 2, n: 2 })
        ));
    }

    #[test]
    fn dirichlet_examples() {
        let g = barbell();
        let constant = Array1::from_elem(6, 3.5);
        assert_eq!(dirichlet_energy_vec(constant.view(), &g).unwrap(), 0.0);
        let pm = array![1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        assert_eq!(dirichlet_energy_vec(pm.view(), &g).unwrap(), 4.0);
        let flipped = array![-1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        assert_eq!(dirichlet_energy_vec(flipped.view(), &g).unwrap(), 12.0);
    }

    #[test]
    fn one_hot_energy_counts_cut_edges_twice() {
        let g = barbell();
        let labels = LabelVector::new(vec![1, 1, 1, 0, 0, 0], 2).unwrap();
        assert_eq!(label_energy(&labels, &g).unwrap(), 2.0);
        let oh = labels.one_hot::<f64>();
        assert_eq!(dirichlet_energy(oh.view(), &g).unwrap(), 2.0);
        assert_eq!(dirichlet_energy_trace(oh.view(), &g).unwrap(), 2.0);
    }

    #[test]
    fn dimension_mismatch() {
        let x = Array1::<f64>::zeros(4);
        assert!(matches!(
            dirichlet_energy_vec(x.view(), &barbell()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn homophily_examples() {
        let g = barbell();
        let same = LabelVector::new(vec![0; 6], 1).unwrap();
        let h = homophily_stats(&g, &same).unwrap();
        assert_eq!(h.edge_h, 1.0);
        assert_eq!(h.node_h, 1.0);

        let e = single_edge();
        let distinct = LabelVector::new(vec![0, 1], 2).unwrap();
        assert_eq!(homophily_stats(&e, &distinct).unwrap().edge_h, 0.0);

        let aligned = LabelVector::new(vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        let h = homophily_stats(&g, &aligned).unwrap();
        assert!((h.edge_h - 6.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn homophily_needs_edges() {
        let g = Graph::new(2, std::iter::empty()).unwrap();
        let l = LabelVector::new(vec![0, 0], 1).unwrap();
        assert!(matches!(homophily_stats(&g, &l), Err(Error::NoEdges)));
    }

    #[test]
    fn splits_must_be_disjoint() {
        let r = SplitMasks::new(vec![true, false], vec![true, false], vec![false, true]);
        assert!(r.is_err());
    }
}
