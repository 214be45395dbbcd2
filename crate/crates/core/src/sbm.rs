//! Stochastic block models with controlled spectral gap, label-flip
//! heterophily, synthetic features and the gap x heterophily sweep.

use std::io::Write;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{gcn_baseline, mlp_baseline, BaselineConfig};
use crate::error::{Error, Result};
use crate::graph::{homophily_stats, FeatureMatrix, Graph, LabelVector, SplitMasks};
use crate::model::{train, ModelConfig};
use crate::spectral::structural_heterophily;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub sizes: Vec<usize>,
    /// Intra-block edge probability.
    pub p: f64,
    /// Inter-block edge probability.
    pub q: f64,
    pub seed: u64,
    pub max_attempts: usize,
}

impl SbmSpec {
    pub fn new(sizes: Vec<usize>, p: f64, q: f64, seed: u64) -> Self {
        SbmSpec {
            sizes,
            p,
            q,
            seed,
            max_attempts: 100,
        }
    }

    /// Two equal blocks whose `(p - q) / (p + q)` equals `gap` at the given
    /// mean degree.
    pub fn from_gap(block: usize, blocks: usize, gap: f64, mean_degree: f64, seed: u64) -> Result<Self> {
        if !(gap > 0.0 && gap < 1.0) {
            return Err(Error::arg(format!("gap {gap} must lie in (0, 1)")));
        }
        // p + q = s, p - q = gap * s; mean degree = p (b - 1) + q b (blocks - 1)
        let b = block as f64;
        let k = blocks as f64;
        let s = mean_degree / (0.5 * (1.0 + gap) * (b - 1.0) + 0.5 * (1.0 - gap) * b * (k - 1.0));
        let p = 0.5 * s * (1.0 + gap);
        let q = 0.5 * s * (1.0 - gap);
        let spec = SbmSpec::new(vec![block; blocks], p, q, seed);
        spec.validate()?;
        Ok(spec)
    }

    pub fn gap(&self) -> f64 {
        (self.p - self.q) / (self.p + self.q)
    }

    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.q && self.q < self.p && self.p <= 1.0) && !(self.p == 1.0 && self.q == 1.0) {
            return Err(Error::arg(format!(
                "SBM probabilities must satisfy 0 <= q < p <= 1 (got p={}, q={})",
                self.p, self.q
            )));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::arg("SBM blocks must be nonempty"));
        }
        Ok(())
    }

    pub fn blocks(&self) -> LabelVector {
        let labels = self
            .sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
            .collect();
        LabelVector::from_labels(labels)
    }
}

/// Samples every node pair independently; resamples until connected.
pub fn gen_sbm(spec: &SbmSpec) -> Result<(Graph, LabelVector)> {
    spec.validate()?;
    let blocks = spec.blocks();
    let n = spec.n();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..spec.max_attempts.max(1) {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let prob = if blocks.get(i) == blocks.get(j) {
                    spec.p
                } else {
                    spec.q
                };
                if rng.random::<f64>() < prob {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::new(n, edges)?;
        if g.is_connected() {
            return Ok((g, blocks));
        }
    }
    Err(Error::RetryLimit {
        attempts: spec.max_attempts.max(1),
    })
}

/// Moves each listed node to a different class, drawn uniformly.
pub fn flip_labels<R: Rng>(labels: &LabelVector, nodes: &[usize], rng: &mut R) -> Result<LabelVector> {
    let c = labels.num_classes();
    let mut out = labels.as_slice().to_vec();
    for &i in nodes {
        if i >= out.len() {
            return Err(Error::NodeOutOfRange { node: i, n: out.len() });
        }
        if c < 2 {
            return Err(Error::arg("flipping needs at least two classes"));
        }
        let shift = rng.random_range(1..c);
        out[i] = (out[i] + shift) % c;
    }
    LabelVector::new(out, c)
}

/// Flips a uniformly sampled `fraction` of the nodes and reports the
/// structural heterophily of the result.
pub fn inject_heterophily(g: &Graph, blocks: &LabelVector, fraction: f64, seed: u64) -> Result<(LabelVector, f64)> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(Error::arg(format!("flip fraction {fraction} outside [0, 0.5]")));
    }
    blocks.check_len(g.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (fraction * g.n() as f64).round() as usize;
    let mut nodes = sample(&mut rng, g.n(), count).into_vec();
    nodes.sort_unstable();
    let labels = flip_labels(blocks, &nodes, &mut rng)?;
    let r = structural_heterophily(g, &labels)?.ratio;
    Ok((labels, r))
}

/// One-hot of a label copy corrupted with probability `noise` (independent
/// of the topology), followed by the zero-mean, unit-variance degree.
pub fn synth_features(g: &Graph, labels: &LabelVector, noise: f64, seed: u64) -> Result<FeatureMatrix> {
    if !(0.0..0.5).contains(&noise) {
        return Err(Error::arg(format!("feature noise {noise} outside [0, 0.5)")));
    }
    labels.check_len(g.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = labels.num_classes();
    let n = g.n();
    let mut x = Array2::zeros((n, c + 1));
    for i in 0..n {
        let mut y = labels.get(i);
        if c > 1 && rng.random::<f64>() < noise {
            y = (y + rng.random_range(1..c)) % c;
        }
        x[[i, y]] = 1.0;
    }
    let deg = g.degrees();
    let mean = deg.iter().sum::<f64>() / n as f64;
    let sd = (deg.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64).sqrt();
    for i in 0..n {
        x[[i, c]] = if sd > 0.0 { (deg[i] - mean) / sd } else { 0.0 };
    }
    FeatureMatrix::new(x)
}

/// Gap x heterophily grid with the fixed pieces of every cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub gaps: Vec<f64>,
    pub flips: Vec<f64>,
    pub seeds: Vec<u64>,
    pub block_size: usize,
    pub blocks: usize,
    pub mean_degree: f64,
    pub noise: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub model: ModelConfig,
    pub baseline: BaselineConfig,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            gaps: vec![0.2, 0.5, 0.67, 0.98],
            flips: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            seeds: vec![13],
            block_size: 500,
            blocks: 2,
            mean_degree: 80.0,
            noise: 0.3,
            train_fraction: 0.48,
            val_fraction: 0.32,
            model: benchmark_model(),
            baseline: BaselineConfig {
                hidden: 32,
                dropout: 0.2,
                lr: 0.01,
                weight_decay: 5e-4,
                epochs: 300,
                patience: 100,
                seed: 0,
            },
        }
    }
}

/// The small network configuration used by sweeps and the benchmark.
pub fn benchmark_model() -> ModelConfig {
    ModelConfig {
        jumps: 4,
        hidden: 32,
        dropout: 0.2,
        lr: 0.01,
        weight_decay: 5e-4,
        epochs: 300,
        patience: 100,
        ..ModelConfig::default()
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gaps.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
            return Err(Error::arg(format!("gap target {g} outside (0, 1)")));
        }
        if let Some(f) = self.flips.iter().find(|f| !(0.0..=0.5).contains(*f)) {
            return Err(Error::arg(format!("flip fraction {f} outside [0, 0.5]")));
        }
        if self.gaps.is_empty() || self.flips.is_empty() || self.seeds.is_empty() {
            return Err(Error::arg("sweep grid has an empty axis"));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(f64, f64, u64)> {
        let mut out = Vec::new();
        for &gap in &self.gaps {
            for &flip in &self.flips {
                for &seed in &self.seeds {
                    out.push((gap, flip, seed));
                }
            }
        }
        out
    }
}

/// A generated benchmark instance.
#[derive(Debug, Clone)]
pub struct SbmInstance {
    pub graph: Graph,
    pub blocks: LabelVector,
    pub labels: LabelVector,
    pub features: FeatureMatrix,
    pub masks: SplitMasks,
    pub r: f64,
}

/// Graph, flipped labels, features and split for one `(gap, flip, seed)`.
pub fn make_instance(grid: &SweepGrid, gap: f64, flip: f64, seed: u64) -> Result<SbmInstance> {
    let spec = SbmSpec::from_gap(grid.block_size, grid.blocks, gap, grid.mean_degree, seed)?;
    let (graph, blocks) = gen_sbm(&spec)?;
    let (labels, r) = inject_heterophily(&graph, &blocks, flip, seed.wrapping_add(1))?;
    let features = synth_features(&graph, &labels, grid.noise, seed.wrapping_add(2))?;
    let masks = SplitMasks::random(graph.n(), grid.train_fraction, grid.val_fraction, seed.wrapping_add(3))?;
    Ok(SbmInstance {
        graph,
        blocks,
        labels,
        features,
        masks,
        r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gap: f64,
    pub flip: f64,
    pub seed: u64,
    #[serde(rename = "R")]
    pub r: f64,
    pub node_h: f64,
    pub acc_dj: f64,
    pub acc_gcn: f64,
    pub acc_mlp: f64,
}

pub fn run_cell(grid: &SweepGrid, gap: f64, flip: f64, seed: u64) -> Result<SweepRow> {
    let inst = make_instance(grid, gap, flip, seed)?;
    let hom = homophily_stats(&inst.graph, &inst.labels)?;
    let model = ModelConfig {
        seed,
        ..grid.model.clone()
    };
    let base = BaselineConfig { seed, ..grid.baseline };
    let dj = train(&inst.graph, &inst.features, &inst.labels, &inst.masks, &model)?;
    let gcn = gcn_baseline(&inst.graph, &inst.features, &inst.labels, &inst.masks, &base)?;
    let mlp = mlp_baseline(&inst.features, &inst.labels, &inst.masks, &base)?;
    Ok(SweepRow {
        gap,
        flip,
        seed,
        r: inst.r,
        node_h: hom.node_h,
        acc_dj: dj.fit.test_acc,
        acc_gcn: gcn.test_acc,
        acc_mlp: mlp.test_acc,
    })
}

/// Runs every cell on a pool of at most `threads` workers; rows come back
/// in grid order regardless of scheduling.
pub fn sweep(grid: &SweepGrid, threads: usize) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    let cells = grid.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::arg(format!("worker pool: {e}")))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|&(gap, flip, seed)| run_cell(grid, gap, flip, seed))
            .collect()
    })
}

pub const SWEEP_HEADER: &str = "gap,flip,seed,R,node_h,acc_dj,acc_gcn,acc_mlp";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.gap, r.flip, r.seed, r.r, r.node_h, r.acc_dj, r.acc_gcn, r.acc_mlp
        )?;
    }
    Ok(())
}
