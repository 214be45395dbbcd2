//! Jump hierarchy built from a distance matrix: per-row distance ranks,
//! rank projectors and the structural filters `J^k = Pi^k * exp(-D)`.
//!
//! Supports are hard rank selections; gradients reach the distances only
//! through the coefficients `exp(-d)` on a frozen support.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pump::DistanceMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpMode {
    /// `Pi^k` selects the partner at rank exactly `k`.
    #[default]
    Rank,
    /// `Pi^k` selects every partner with rank in `1..=k`.
    Cumulative,
}

impl fmt::Display for JumpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JumpMode::Rank => "rank",
            JumpMode::Cumulative => "cumulative",
        })
    }
}

impl FromStr for JumpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank" => Ok(JumpMode::Rank),
            "cumulative" => Ok(JumpMode::Cumulative),
            other => Err(Error::arg(format!("unknown jump mode `{other}`"))),
        }
    }
}

/// Per-row ordering of partners by distance.
///
/// `order[i][r]` is the node at rank `r` from `i`. The node itself is always
/// rank 0; remaining ties are broken by ascending node index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankTable {
    order: Vec<Vec<usize>>,
}

impl RankTable {
    pub fn n(&self) -> usize {
        self.order.len()
    }

    pub fn partner(&self, i: usize, rank: usize) -> usize {
        self.order[i][rank]
    }

    /// Dense `rank(i, j)` matrix.
    pub fn to_matrix(&self) -> Array2<usize> {
        let n = self.n();
        let mut m = Array2::zeros((n, n));
        for (i, row) in self.order.iter().enumerate() {
            for (r, &j) in row.iter().enumerate() {
                m[[i, j]] = r;
            }
        }
        m
    }
}

fn check_distances<T: Scalar>(d: ArrayView2<T>) -> Result<()> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::dim("distance matrix (square)", n, d.ncols()));
    }
    if let Some(((i, j), _)) = d.indexed_iter().find(|(_, &x)| !(x >= T::zero())) {
        return Err(Error::arg(format!("negative or NaN distance at ({i}, {j})")));
    }
    Ok(())
}

pub fn rank_table<T: Scalar>(d: ArrayView2<T>) -> Result<RankTable> {
    rank_table_top(d, d.nrows())
}

/// Like [`rank_table`] but keeps only ranks `0..depth` of every row.
pub fn rank_table_top<T: Scalar>(d: ArrayView2<T>, depth: usize) -> Result<RankTable> {
    check_distances(d)?;
    let n = d.nrows();
    let depth = depth.min(n);
    let order = (0..n)
        .map(|i| {
            let cmp = |a: &usize, b: &usize| {
                (*a != i)
                    .cmp(&(*b != i))
                    .then(d[[i, *a]].partial_cmp(&d[[i, *b]]).unwrap())
                    .then(a.cmp(b))
            };
            let mut idx: Vec<usize> = (0..n).collect();
            if depth > 0 && depth < n {
                idx.select_nth_unstable_by(depth - 1, cmp);
                idx.truncate(depth);
            }
            idx.sort_by(cmp);
            idx
        })
        .collect();
    Ok(RankTable { order })
}

/// `rank(i, j)`: position of `j` in the ascending order of row `i`.
pub fn distance_ranks<T: Scalar>(d: ArrayView2<T>) -> Result<Array2<usize>> {
    Ok(rank_table(d)?.to_matrix())
}

/// Binary mask stored as selected columns per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JumpMask {
    pub rows: Vec<Vec<usize>>,
}

impl JumpMask {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.rows[i].contains(&j)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, cols)| cols.iter().map(move |&j| (i, j)))
    }

    pub fn count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Array2<u8> {
        let n = self.rows.len();
        let mut m = Array2::zeros((n, n));
        for (i, j) in self.pairs() {
            m[[i, j]] = 1;
        }
        m
    }
}

fn mask_from_table(table: &RankTable, k: usize, mode: JumpMode) -> JumpMask {
    let rows = (0..table.n())
        .map(|i| match (k, mode) {
            (0, _) | (_, JumpMode::Rank) => vec![table.partner(i, k)],
            (_, JumpMode::Cumulative) => {
                let mut cols: Vec<usize> = (1..=k).map(|r| table.partner(i, r)).collect();
                cols.sort_unstable();
                cols
            }
        })
        .collect();
    JumpMask { rows }
}

/// Rank projector `Pi^k`.
pub fn projector<T: Scalar>(d: ArrayView2<T>, k: usize, mode: JumpMode) -> Result<JumpMask> {
    let n = d.nrows();
    if k >= n {
        return Err(Error::arg(format!("jump index {k} must be below n = {n}")));
    }
    Ok(mask_from_table(&rank_table_top(d, k + 1)?, k, mode))
}

/// Masks `Pi^0 .. Pi^K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JumpProjector {
    pub masks: Vec<JumpMask>,
    pub mode: JumpMode,
}

pub fn projectors<T: Scalar>(d: ArrayView2<T>, jumps: usize, mode: JumpMode) -> Result<JumpProjector> {
    let n = d.nrows();
    if jumps >= n {
        return Err(Error::arg(format!("jump count {jumps} must be below n = {n}")));
    }
    let table = rank_table_top(d, jumps + 1)?;
    Ok(JumpProjector {
        masks: (0..=jumps).map(|k| mask_from_table(&table, k, mode)).collect(),
        mode,
    })
}

/// One structural filter: a sparse support with coefficients `exp(-d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter<T> {
    pub k: usize,
    pub pairs: Vec<(usize, usize)>,
    pub coeffs: Vec<T>,
}

impl<T: Scalar> Filter<T> {
    pub fn to_dense(&self, n: usize) -> Array2<T> {
        let mut m = Array2::zeros((n, n));
        for (&(i, j), &c) in self.pairs.iter().zip(&self.coeffs) {
            m[[i, j]] += c;
        }
        m
    }

    /// `J X` without materialising `J`.
    pub fn apply(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros(x.dim());
        for (&(i, j), &c) in self.pairs.iter().zip(&self.coeffs) {
            out.row_mut(i).scaled_add(c, &x.row(j));
        }
        out
    }

    /// Divides each row's coefficients by their sum.
    pub fn row_normalized(&self, n: usize) -> Self {
        let mut sums = vec![T::zero(); n];
        for (&(i, _), &c) in self.pairs.iter().zip(&self.coeffs) {
            sums[i] += c;
        }
        let coeffs = self
            .pairs
            .iter()
            .zip(&self.coeffs)
            .map(|(&(i, _), &c)| if sums[i] > T::zero() { c / sums[i] } else { c })
            .collect();
        Filter {
            k: self.k,
            pairs: self.pairs.clone(),
            coeffs,
        }
    }

    /// `d c / d D(i, j) = -exp(-D(i, j))` on the support, in support order.
    pub fn coefficient_grad(&self) -> Vec<T> {
        self.coeffs.iter().map(|&c| -c).collect()
    }
}

/// `J^0 .. J^K` sharing one distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T> {
    pub n: usize,
    pub mode: JumpMode,
    pub filters: Vec<Filter<T>>,
}

impl<T: Scalar> FilterBank<T> {
    pub fn jumps(&self) -> usize {
        self.filters.len().saturating_sub(1)
    }

    pub fn masks(&self) -> JumpProjector {
        let masks = self
            .filters
            .iter()
            .map(|f| {
                let mut rows = vec![Vec::new(); self.n];
                for &(i, j) in &f.pairs {
                    rows[i].push(j);
                }
                JumpMask { rows }
            })
            .collect();
        JumpProjector {
            masks,
            mode: self.mode,
        }
    }

    /// Recomputes coefficients from `d` on the current (frozen) supports.
    pub fn with_coefficients(&self, d: &DistanceMatrix<T>) -> Result<Self> {
        if d.n() != self.n {
            return Err(Error::dim("filter bank distances", self.n, d.n()));
        }
        let filters = self
            .filters
            .iter()
            .map(|f| Filter {
                k: f.k,
                pairs: f.pairs.clone(),
                coeffs: f.pairs.iter().map(|&(i, j)| (-d.get(i, j)).exp()).collect(),
            })
            .collect();
        Ok(FilterBank {
            n: self.n,
            mode: self.mode,
            filters,
        })
    }

    /// Writes filter `k` as `# jump k=<k> n=<n> mode=<mode>` followed by
    /// `i j c` lines with 17 significant digits.
    pub fn write_filter<W: Write>(&self, k: usize, mut out: W) -> std::io::Result<()> {
        let f = &self.filters[k];
        writeln!(out, "# jump k={} n={} mode={}", f.k, self.n, self.mode)?;
        for (&(i, j), &c) in f.pairs.iter().zip(&f.coeffs) {
            writeln!(out, "{} {} {:.16e}", i, j, c.f64())?;
        }
        Ok(())
    }
}

fn build_filter<T: Scalar>(mask: &JumpMask, k: usize, d: &DistanceMatrix<T>) -> Filter<T> {
    let pairs: Vec<(usize, usize)> = mask.pairs().collect();
    let coeffs = pairs.iter().map(|&(i, j)| (-d.get(i, j)).exp()).collect();
    Filter { k, pairs, coeffs }
}

/// Builds `J^0 .. J^K` from the current distances.
pub fn filter_bank<T: Scalar>(d: &DistanceMatrix<T>, jumps: usize, mode: JumpMode) -> Result<FilterBank<T>> {
    let proj = projectors(d.as_array().view(), jumps, mode)?;
    let filters = proj
        .masks
        .iter()
        .enumerate()
        .map(|(k, m)| build_filter(m, k, d))
        .collect();
    Ok(FilterBank {
        n: d.n(),
        mode,
        filters,
    })
}

/// Recomputes supports and coefficients from the current distances.
pub fn refresh_supports<T: Scalar>(bank: &FilterBank<T>, d: &DistanceMatrix<T>) -> Result<FilterBank<T>> {
    if d.n() != bank.n {
        return Err(Error::dim("filter bank distances", bank.n, d.n()));
    }
    filter_bank(d, bank.jumps(), bank.mode)
}

/// Parsed form of an exported filter file.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterFile {
    pub k: usize,
    pub n: usize,
    pub mode: JumpMode,
    pub entries: Vec<(usize, usize, f64)>,
}

pub fn read_filter<R: BufRead>(input: R) -> Result<FilterFile> {
    let bad = |line: usize, msg: String| Error::Parse {
        file: "<filter>".into(),
        line,
        msg,
    };
    let mut header: Option<(usize, usize, JumpMode)> = None;
    let mut entries = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| bad(lineno, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# jump") {
            let mut k = None;
            let mut n = None;
            let mut mode = None;
            for tok in rest.split_whitespace() {
                match tok.split_once('=') {
                    Some(("k", v)) => k = v.parse().ok(),
                    Some(("n", v)) => n = v.parse().ok(),
                    Some(("mode", v)) => mode = v.parse().ok(),
                    _ => {}
                }
            }
            match (k, n, mode) {
                (Some(k), Some(n), Some(m)) => header = Some((k, n, m)),
                _ => return Err(bad(lineno, "malformed jump header".into())),
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(bad(lineno, format!("expected `i j c`, got `{line}`")));
        }
        let i = toks[0].parse().map_err(|_| bad(lineno, "bad row index".into()))?;
        let j = toks[1].parse().map_err(|_| bad(lineno, "bad column index".into()))?;
        let c = toks[2].parse().map_err(|_| bad(lineno, "bad coefficient".into()))?;
        entries.push((i, j, c));
    }
    let (k, n, mode) = header.ok_or_else(|| bad(1, "missing `# jump` header".into()))?;
    Ok(FilterFile { k, n, mode, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn d3() -> DistanceMatrix<f64> {
        DistanceMatrix::from_matrix(array![[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]]).unwrap()
    }

    #[test]
    fn rank_examples() {
        let r = distance_ranks(array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]].view()).unwrap();
        assert_eq!(r.row(0).to_vec(), vec![0, 1, 2]);
        let tie = distance_ranks(array![[0.0, 5.0, 5.0], [5.0, 0.0, 1.0], [5.0, 1.0, 0.0]].view()).unwrap();
        assert_eq!(tie.row(0).to_vec(), vec![0, 1, 2]);
        let t = rank_table(d3().as_array().view()).unwrap();
        assert_eq!((t.partner(0, 1), t.partner(1, 1), t.partner(2, 1)), (1, 0, 0));
    }

    #[test]
    fn negative_distances_rejected() {
        let d = array![[0.0, -1.0], [-1.0, 0.0]];
        assert!(distance_ranks(d.view()).is_err());
    }

    #[test]
    fn projector_examples() {
        let d = d3();
        let p0 = projector(d.as_array().view(), 0, JumpMode::Rank).unwrap();
        assert_eq!(p0.to_dense(), Array2::<u8>::eye(3));
        let p2 = projector(d.as_array().view(), 2, JumpMode::Rank).unwrap();
        let mut pairs: Vec<_> = p2.pairs().collect();
        pairs.sort();
        assert_eq!(pairs, vec![(0, 2), (1, 2), (2, 1)]);
        let c1 = projector(d.as_array().view(), 1, JumpMode::Cumulative).unwrap();
        let r1 = projector(d.as_array().view(), 1, JumpMode::Rank).unwrap();
        assert_eq!(c1, r1);
        assert!(projector(d.as_array().view(), 3, JumpMode::Rank).is_err());
    }

    #[test]
    fn zero_distances_keep_identity_and_unit_coefficients() {
        let d = DistanceMatrix::from_matrix(Array2::<f64>::zeros((4, 4))).unwrap();
        let bank = filter_bank(&d, 3, JumpMode::Rank).unwrap();
        assert_eq!(bank.filters[0].to_dense(4), Array2::<f64>::eye(4));
        for f in &bank.filters {
            assert!(f.coeffs.iter().all(|&c| c == 1.0));
        }
    }

    #[test]
    fn bank_coefficients() {
        let bank = filter_bank(&d3(), 2, JumpMode::Rank).unwrap();
        let j1 = bank.filters[1].to_dense(3);
        assert!((j1[[0, 1]] - 0.36787944117144233).abs() < 1e-15);
        assert_eq!(bank.filters[0].to_dense(3), Array2::<f64>::eye(3));
        for f in &bank.filters {
            assert!(f.coeffs.iter().all(|&c| c > 0.0 && c <= 1.0));
        }
    }

    #[test]
    fn refresh_is_idempotent() {
        let d = d3();
        let bank = filter_bank(&d, 2, JumpMode::Rank).unwrap();
        assert_eq!(refresh_supports(&bank, &d).unwrap(), bank);
    }

    #[test]
    fn small_perturbation_keeps_support() {
        let bank = filter_bank(&d3(), 2, JumpMode::Rank).unwrap();
        let d2 = DistanceMatrix::from_matrix(array![[0.0, 1.1, 2.0], [1.1, 0.0, 3.0], [2.0, 3.0, 0.0]]).unwrap();
        let fresh = refresh_supports(&bank, &d2).unwrap();
        for (a, b) in fresh.filters.iter().zip(&bank.filters) {
            assert_eq!(a.pairs, b.pairs);
        }
        assert!((fresh.filters[1].to_dense(3)[[0, 1]] - (-1.1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rank_swap_changes_only_swapped_pair() {
        let bank = filter_bank(&d3(), 2, JumpMode::Rank).unwrap();
        // row 0 now prefers node 2 over node 1
        let d2 = DistanceMatrix::from_matrix(array![[0.0, 2.5, 2.0], [2.5, 0.0, 3.0], [2.0, 3.0, 0.0]]).unwrap();
        let fresh = refresh_supports(&bank, &d2).unwrap();
        let old1 = bank.masks().masks[1].clone();
        let new1 = fresh.masks().masks[1].clone();
        assert_eq!(old1.rows[0], vec![1]);
        assert_eq!(new1.rows[0], vec![2]);
        assert_eq!(old1.rows[1], new1.rows[1]);
        assert_eq!(old1.rows[2], new1.rows[2]);
    }

    #[test]
    fn export_round_trip() {
        let bank = filter_bank(&d3(), 2, JumpMode::Rank).unwrap();
        let mut buf = Vec::new();
        bank.write_filter(1, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# jump k=1 n=3 mode=rank\n"));
        let parsed = read_filter(buf.as_slice()).unwrap();
        assert_eq!(parsed.k, 1);
        assert_eq!(parsed.n, 3);
        for (&(i, j, c), (&(pi, pj), &pc)) in parsed
            .entries
            .iter()
            .zip(bank.filters[1].pairs.iter().zip(&bank.filters[1].coeffs))
        {
            assert_eq!((i, j), (pi, pj));
            assert_eq!(c, pc);
        }
    }
}
