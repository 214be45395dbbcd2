//! Exact spectral quantities used as ground truth: Fiedler data, diffusion
//! and commute-time distances, escape probabilities, unsupervised structural
//! labelings and the structural heterophily ratio.

use ndarray::{s, Array1, Array2, ArrayView1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{label_energy, Graph, LabelVector};
use crate::kmeans::{kmeans, KMeansConfig};
pub use crate::linalg::{eig_sym, EigenSystem};
use crate::linalg::pinv_sym;
use crate::scalar::Scalar;

/// Which Laplacian the Fiedler pair is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LaplacianKind {
    #[default]
    Normalized,
    Unnormalized,
}

fn require_connected(g: &Graph) -> Result<()> {
    g.require_connected()
}

/// Second-smallest eigenpair of the chosen Laplacian.
pub fn fiedler_with<T: Scalar>(g: &Graph, kind: LaplacianKind) -> Result<(T, Array1<T>)> {
    require_connected(g)?;
    if g.n() < 2 {
        return Err(Error::arg("Fiedler pair needs at least two nodes"));
    }
    let m = match kind {
        LaplacianKind::Normalized => g.normalized_operators::<T>()?.0,
        LaplacianKind::Unnormalized => g.laplacian::<T>(),
    };
    let eig = eig_sym(&m)?;
    Ok((eig.values[1], eig.vectors.column(1).to_owned()))
}

pub fn fiedler<T: Scalar>(g: &Graph) -> Result<(T, Array1<T>)> {
    fiedler_with(g, LaplacianKind::Normalized)
}

/// Cached spectrum of the normalised Laplacian for repeated distance queries.
///
/// With `phi_r` the unit eigenvectors of `L~` and `lambda_r` their
/// eigenvalues, the random-walk eigenvectors are `psi_r(i) = phi_r(i)/sqrt(d_i)`
/// and `P` has eigenvalues `gamma_r = 1 - lambda_r`.
#[derive(Debug, Clone)]
pub struct SpectralData<T> {
    pub eig: EigenSystem<T>,
    pub degrees: Array1<T>,
    pub volume: T,
    psi: Array2<T>,
}

impl<T: Scalar> SpectralData<T> {
    pub fn new(g: &Graph) -> Result<Self> {
        require_connected(g)?;
        let (lnorm, _) = g.normalized_operators::<T>()?;
        let eig = eig_sym(&lnorm)?;
        let degrees = g.degree_vector::<T>();
        let volume = degrees.sum();
        let mut psi = eig.vectors.clone();
        for (i, mut row) in psi.rows_mut().into_iter().enumerate() {
            let s = T::one() / degrees[i].sqrt();
            row.mapv_inplace(|x| x * s);
        }
        Ok(SpectralData {
            eig,
            degrees,
            volume,
            psi,
        })
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn lambda2(&self) -> T {
        self.eig.values[1]
    }

    /// Random-walk eigenvector `psi_r = D^-1/2 phi_r`.
    pub fn psi(&self, r: usize) -> ArrayView1<'_, T> {
        self.psi.column(r)
    }

    /// Squared diffusion distance at time `t` from the spectral expansion
    /// `vol * sum_r gamma_r^{2t} (psi_r(i) - psi_r(j))^2`.
    pub fn diffusion_distance_sq(&self, t: u32, i: usize, j: usize) -> T {
        let mut acc = T::zero();
        for r in 0..self.n() {
            let gamma = T::one() - self.eig.values[r];
            let a = self.psi[[i, r]] - self.psi[[j, r]];
            acc += gamma.powi(2 * t as i32) * a * a;
        }
        self.volume * acc
    }

    /// Commute time `vol * sum_{r>=2} (psi_r(i) - psi_r(j))^2 / lambda_r`.
    pub fn commute_time(&self, i: usize, j: usize) -> T {
        if i == j {
            return T::zero();
        }
        let mut acc = T::zero();
        for r in 1..self.n() {
            let a = self.psi[[i, r]] - self.psi[[j, r]];
            acc += a * a / self.eig.values[r];
        }
        self.volume * acc
    }

    pub fn commute_time_matrix(&self) -> Array2<T> {
        let n = self.n();
        let mut ct = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let v = self.commute_time(i, j);
                ct[[i, j]] = v;
                ct[[j, i]] = v;
            }
        }
        ct
    }
}

fn check_node(g: &Graph, i: usize) -> Result<()> {
    if i >= g.n() {
        return Err(Error::NodeOutOfRange { node: i, n: g.n() });
    }
    Ok(())
}

/// `t`-step distribution of a walk started at `i`.
pub fn walk_distribution<T: Scalar>(p: &Array2<T>, t: u32, i: usize) -> Array1<T> {
    let mut dist = Array1::zeros(p.nrows());
    dist[i] = T::one();
    for _ in 0..t {
        dist = dist.dot(p);
    }
    dist
}

/// Squared diffusion distance from its probability definition
/// `sum_k (p(k,t|i) - p(k,t|j))^2 / pi(k)` with `pi(k) = d_k / vol`.
pub fn diffusion_distance_sq<T: Scalar>(g: &Graph, t: u32, i: usize, j: usize) -> Result<T> {
    check_node(g, i)?;
    check_node(g, j)?;
    require_connected(g)?;
    if i == j {
        return Ok(T::zero());
    }
    let (_, p) = g.normalized_operators::<T>()?;
    let deg = g.degree_vector::<T>();
    let vol = deg.sum();
    let pi_ = walk_distribution(&p, t, i);
    let pj = walk_distribution(&p, t, j);
    Ok((0..g.n())
        .map(|k| {
            let d = pi_[k] - pj[k];
            d * d * vol / deg[k]
        })
        .sum())
}

pub fn diffusion_distance<T: Scalar>(g: &Graph, t: u32, i: usize, j: usize) -> Result<T> {
    Ok(diffusion_distance_sq::<T>(g, t, i, j)?.max(T::zero()).sqrt())
}

/// Spectral commute time between two nodes.
pub fn commute_time<T: Scalar>(g: &Graph, i: usize, j: usize) -> Result<T> {
    check_node(g, i)?;
    check_node(g, j)?;
    Ok(SpectralData::<T>::new(g)?.commute_time(i, j))
}

/// Commute time as `vol(G) * R_eff(i, j)` with the effective resistance read
/// off the Laplacian pseudoinverse.
pub fn commute_time_resistance<T: Scalar>(g: &Graph, i: usize, j: usize) -> Result<T> {
    check_node(g, i)?;
    check_node(g, j)?;
    require_connected(g)?;
    let lp = pinv_sym(&g.laplacian::<T>(), T::of(1e-9))?;
    let r = lp[[i, i]] + lp[[j, j]] - lp[[i, j]] - lp[[j, i]];
    Ok(T::of(g.volume()) * r)
}

pub fn commute_time_resistance_matrix<T: Scalar>(g: &Graph) -> Result<Array2<T>> {
    require_connected(g)?;
    let lp = pinv_sym(&g.laplacian::<T>(), T::of(1e-9))?;
    let vol = T::of(g.volume());
    let n = g.n();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            T::zero()
        } else {
            vol * (lp[[i, i]] + lp[[j, j]] - lp[[i, j]] - lp[[j, i]])
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EscapeSpec {
    /// Escape probability between two nodes, `1 / CT(i, j)`.
    Pair(usize, usize),
    /// One-step escape from a node subset: `cut(S, V \ S) / vol(S)`.
    Subset(Vec<usize>),
}

pub fn escape_probability<T: Scalar>(g: &Graph, spec: &EscapeSpec) -> Result<T> {
    match spec {
        EscapeSpec::Pair(i, j) => {
            if i == j {
                return Err(Error::arg("escape probability needs two distinct nodes"));
            }
            let ct = commute_time::<T>(g, *i, *j)?;
            Ok(T::one() / ct)
        }
        EscapeSpec::Subset(nodes) => {
            require_connected(g)?;
            let mut inside = vec![false; g.n()];
            for &v in nodes {
                check_node(g, v)?;
                inside[v] = true;
            }
            let size = inside.iter().filter(|&&b| b).count();
            if size == 0 || size == g.n() {
                return Err(Error::arg("escape subset must be nonempty and proper"));
            }
            let deg = g.degrees();
            let vol: f64 = (0..g.n()).filter(|&i| inside[i]).map(|i| deg[i]).sum();
            let cut: f64 = g
                .edges()
                .iter()
                .filter(|&&(u, v, _)| inside[u] != inside[v])
                .map(|&(_, _, w)| w)
                .sum();
            Ok(T::of(cut / vol))
        }
    }
}

/// Labeling derived from structure alone: constant for one class, the sign
/// of the Fiedler vector for two, and k-means over the `width` smallest
/// nontrivial eigenvectors of `L~` otherwise.
pub fn unsupervised_labeling<T: Scalar>(
    g: &Graph,
    classes: usize,
    width: usize,
    seed: u64,
) -> Result<LabelVector> {
    let n = g.n();
    if classes == 0 || classes > n {
        return Err(Error::arg(format!(
            "class count {classes} must lie in [1, {n}]"
        )));
    }
    if classes == 1 {
        return LabelVector::new(vec![0; n], 1);
    }
    let spec = SpectralData::<T>::new(g)?;
    if classes == 2 {
        let labels = spec
            .eig
            .vectors
            .column(1)
            .iter()
            .map(|&x| usize::from(x < T::zero()))
            .collect();
        return LabelVector::new(labels, 2);
    }
    let width = width.clamp(1, n - 1);
    let emb = spec.eig.vectors.slice(s![.., 1..=width]).to_owned();
    let cfg = KMeansConfig {
        seed,
        ..Default::default()
    };
    let km = kmeans(emb.view(), classes, cfg)?;
    LabelVector::new(km.assignment, classes)
}

#[derive(Debug, Clone, Serialize)]
pub struct HeterophilyReport {
    /// Energy ratio of the ground truth against the structural labeling.
    pub ratio: f64,
    pub num_energy: f64,
    pub den_energy: f64,
    pub unsupervised: Vec<usize>,
    /// Set when the ratio is below one, which an ideal structural learner
    /// would never produce.
    pub below_one: bool,
}

/// Structural heterophily of `labels` against the unsupervised labeling with
/// the same class count (embedding width `classes - 1`).
pub fn structural_heterophily(g: &Graph, labels: &LabelVector) -> Result<HeterophilyReport> {
    let c = labels.num_classes().max(1);
    structural_heterophily_with(g, labels, c.saturating_sub(1).max(1), 0)
}

pub fn structural_heterophily_with(
    g: &Graph,
    labels: &LabelVector,
    width: usize,
    seed: u64,
) -> Result<HeterophilyReport> {
    labels.check_len(g.n())?;
    let u = unsupervised_labeling::<f64>(g, labels.num_classes().max(1), width, seed)?;
    structural_heterophily_against(g, labels, &u)
}

/// Ratio against an explicit reference labeling.
pub fn structural_heterophily_against(
    g: &Graph,
    labels: &LabelVector,
    reference: &LabelVector,
) -> Result<HeterophilyReport> {
    labels.check_len(g.n())?;
    reference.check_len(g.n())?;
    let den = label_energy(reference, g)?;
    if den <= 0.0 {
        return Err(Error::DegenerateLabeling {
            labeling: reference.as_slice().to_vec(),
        });
    }
    let num = label_energy(labels, g)?;
    let ratio = num / den;
    Ok(HeterophilyReport {
        ratio,
        num_energy: num,
        den_energy: den,
        unsupervised: reference.as_slice().to_vec(),
        below_one: ratio < 1.0,
    })
}

/// Bounds on the optimal trace ratio from the Laplacian spectrum and the
/// sorted degrees:
/// `(l_2+..+l_p)/(d_{p+1}+..+d_n) <= rho <= (l_2+..+l_p)/(d_1+..+d_p)`.
pub fn trace_ratio_bounds<T: Scalar>(g: &Graph, p: usize) -> Result<(T, T)> {
    require_connected(g)?;
    let n = g.n();
    if p == 0 || p >= n {
        return Err(Error::arg(format!("trace ratio width must satisfy 1 <= p < n, got {p}")));
    }
    let eig = eig_sym(&g.laplacian::<T>())?;
    let num: T = eig.values.iter().skip(1).take(p - 1).copied().sum();
    let mut deg = g.degrees();
    deg.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let low_den: f64 = deg[p..].iter().sum();
    let up_den: f64 = deg[..p].iter().sum();
    Ok((num / T::of(low_den), num / T::of(up_den)))
}

/// Compact summary of a graph's spectrum.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpectralSummary {
    pub lambda2: f64,
    /// Distance between the first two nontrivial eigenvalues of `L~`.
    pub spectral_gap: f64,
}

pub fn spectral_summary(g: &Graph) -> Result<SpectralSummary> {
    let spec = SpectralData::<f64>::new(g)?;
    let vals = &spec.eig.values;
    let lambda2 = vals[1];
    let gap = if vals.len() > 2 { vals[2] - vals[1] } else { 0.0 };
    Ok(SpectralSummary {
        lambda2,
        spectral_gap: gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::graph::Graph;

    #[test]
    fn path_normalized_spectrum() {
        let (ln, _) = path3().normalized_operators::<f64>().unwrap();
        let eig = eig_sym(&ln).unwrap();
        for (got, want) in eig.values.iter().zip([0.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fiedler_single_edge() {
        let (l2, phi) = fiedler::<f64>(&single_edge()).unwrap();
        assert!((l2 - 2.0).abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((phi[0].abs() - s).abs() < 1e-12);
        assert!((phi[0] + phi[1]).abs() < 1e-12);
    }

    #[test]
    fn fiedler_complete_graph() {
        let k4 = Graph::new(4, (0..4).flat_map(|i| ((i + 1)..4).map(move |j| (i, j)))).unwrap();
        let (l2, _) = fiedler::<f64>(&k4).unwrap();
        assert!((l2 - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fiedler_rejects_disconnected() {
        let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(
            fiedler::<f64>(&g),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn diffusion_distance_examples() {
        let g = path3();
        assert_eq!(diffusion_distance::<f64>(&g, 3, 1, 1).unwrap(), 0.0);
        assert!(diffusion_distance::<f64>(&g, 1, 0, 2).unwrap().abs() < 1e-15);
        let spec = SpectralData::<f64>::new(&g).unwrap();
        assert!(spec.diffusion_distance_sq(1, 0, 2).abs() < 1e-12);
        let b = barbell();
        let d01 = diffusion_distance::<f64>(&b, 2, 0, 4).unwrap();
        let d10 = diffusion_distance::<f64>(&b, 2, 4, 0).unwrap();
        assert!((d01 - d10).abs() < 1e-14);
    }

    #[test]
    fn t_zero_is_indicator_distance() {
        let g = barbell();
        assert_eq!(diffusion_distance::<f64>(&g, 0, 2, 2).unwrap(), 0.0);
        assert!(diffusion_distance::<f64>(&g, 0, 0, 1).unwrap() > 0.0);
    }

    #[test]
    fn commute_time_path() {
        let g = path3();
        let ct01 = commute_time::<f64>(&g, 0, 1).unwrap();
        let ct02 = commute_time::<f64>(&g, 0, 2).unwrap();
        assert!((ct01 - 4.0).abs() < 1e-10);
        assert!((ct02 - 8.0).abs() < 1e-10);
        assert!((commute_time_resistance::<f64>(&g, 0, 1).unwrap() - 4.0).abs() < 1e-10);
        assert!((commute_time_resistance::<f64>(&g, 0, 2).unwrap() - 8.0).abs() < 1e-10);
        assert_eq!(commute_time::<f64>(&g, 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn escape_examples() {
        let b = barbell();
        let p = escape_probability::<f64>(&b, &EscapeSpec::Subset(vec![0, 1, 2])).unwrap();
        assert!((p - 1.0 / 7.0).abs() < 1e-15);
        let q = escape_probability::<f64>(&path3(), &EscapeSpec::Pair(0, 1)).unwrap();
        assert!((q - 0.25).abs() < 1e-10);
        assert!(escape_probability::<f64>(&b, &EscapeSpec::Subset(vec![])).is_err());
        assert!(escape_probability::<f64>(&b, &EscapeSpec::Subset((0..6).collect())).is_err());
    }

    #[test]
    fn escape_from_star_minus_leaf() {
        // star centred at 0 with leaves 1..=4; S = V \ {4}
        let star = Graph::new(5, (1..5).map(|l| (0, l))).unwrap();
        let p = escape_probability::<f64>(&star, &EscapeSpec::Subset(vec![0, 1, 2, 3])).unwrap();
        // brute force: only edge 0-4 is cut; vol(S) = 4 + 1 + 1 + 1
        let inside = [true, true, true, true, false];
        let mut cut = 0.0;
        let mut vol = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let a = if (i == 0) != (j == 0) && i != j { 1.0 } else { 0.0 };
                if inside[i] {
                    vol += a;
                    if !inside[j] {
                        cut += a;
                    }
                }
            }
        }
        assert!((p - cut / vol).abs() < 1e-15);
    }

    #[test]
    fn barbell_unsupervised_split() {
        let u = unsupervised_labeling::<f64>(&barbell(), 2, 1, 0).unwrap();
        let s = u.as_slice();
        assert!(s[0] == s[1] && s[1] == s[2]);
        assert!(s[3] == s[4] && s[4] == s[5]);
        assert_ne!(s[0], s[3]);
    }

    #[test]
    fn one_class_is_constant() {
        let u = unsupervised_labeling::<f64>(&barbell(), 1, 1, 0).unwrap();
        assert!(u.as_slice().iter().all(|&c| c == 0));
        assert!(unsupervised_labeling::<f64>(&barbell(), 7, 1, 0).is_err());
    }

    #[test]
    fn heterophily_barbell() {
        let g = barbell();
        let flipped = LabelVector::new(vec![1, 0, 0, 1, 1, 1], 2).unwrap();
        let rep = structural_heterophily(&g, &flipped).unwrap();
        assert!((rep.ratio - 3.0).abs() < 1e-12);
        let aligned = LabelVector::new(vec![1, 1, 1, 0, 0, 0], 2).unwrap();
        let rep = structural_heterophily(&g, &aligned).unwrap();
        assert_eq!(rep.ratio, 1.0);
    }

    #[test]
    fn heterophily_degenerate_reference() {
        let g = barbell();
        let labels = LabelVector::new(vec![0, 1, 0, 1, 0, 1], 2).unwrap();
        let constant = LabelVector::new(vec![0; 6], 2).unwrap();
        assert!(matches!(
            structural_heterophily_against(&g, &labels, &constant),
            Err(Error::DegenerateLabeling { .. })
        ));
    }

    #[test]
    fn trace_ratio_bounds_examples() {
        let (lo, hi) = trace_ratio_bounds::<f64>(&path3(), 1).unwrap();
        assert_eq!((lo, hi), (0.0, 0.0));
        let (lo, hi) = trace_ratio_bounds::<f64>(&path3(), 2).unwrap();
        assert!((lo - 0.5).abs() < 1e-12);
        assert!((hi - 0.5).abs() < 1e-12);
    }
}
