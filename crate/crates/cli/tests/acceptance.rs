//! Acceptance suite: one status line per criterion, detail lines indented
//! below it. Exits non-zero when any criterion fails; criteria that need
//! the WebKB Texas files report SKIP unless `DJLAB_TEXAS_DIR` points at a
//! directory holding `out1_graph_edges.txt`, `out1_node_feature_label.txt`
//! and a `splits/` directory of split CSVs.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use djlab_core::autodiff::primitive_gradcheck;
use djlab_core::baselines::{
    absorbing_probabilities, propagate_closed, propagate_iterative, propagation_operator, stationarity_residual,
    Normalization, SeedMatrix,
};
use djlab_core::graph::{Graph, LabelVector};
use djlab_core::io::{read_split, read_webkb, split_files};
use djlab_core::jump::{filter_bank, projectors, JumpMode};
use djlab_core::metrics::{mean_std, spearman};
use djlab_core::model::{gradcheck_model, gradcheck_pump, run_splits, train, ModelConfig};
use djlab_core::pump::{fiedler_correlations, train_pump, DistanceMatrix, PumpBasis, PumpConfig};
use djlab_core::sbm::{gen_sbm, make_instance, sweep, SbmSpec, SweepGrid};
use djlab_core::spectral::{
    commute_time_resistance_matrix, diffusion_distance_sq, structural_heterophily,
    structural_heterophily_against, SpectralData,
};

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Criterion {
    details: Vec<String>,
    failed: bool,
    skipped: bool,
}

impl Criterion {
    fn new() -> Self {
        Criterion {
            details: Vec::new(),
            failed: false,
            skipped: false,
        }
    }

    fn check(&mut self, ok: bool, detail: String) {
        self.failed |= !ok;
        self.details.push(format!("{} {detail}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, detail: String) {
        self.details.push(format!("     {detail}"));
    }

    fn skip(&mut self, detail: String) {
        self.skipped = true;
        self.details.push(format!("skip {detail}"));
    }

    fn status(&self) -> Status {
        if self.failed {
            Status::Fail
        } else if self.skipped && self.details.iter().all(|d| d.starts_with("skip")) {
            Status::Skip
        } else {
            Status::Pass
        }
    }
}

fn random_connected(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = std::collections::BTreeSet::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        edges.insert((j, i));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.insert((i, j));
            }
        }
    }
    Graph::new(n, edges).expect("valid random graph")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn texas_dir() -> Option<PathBuf> {
    std::env::var_os("DJLAB_TEXAS_DIR").map(PathBuf::from)
}

fn gradient_suite(c: &mut Criterion) {
    let start = Instant::now();
    let pump = gradcheck_pump(12, 3, 1).expect("pump gradcheck");
    c.check(pump.max_rel_err <= 1e-4, format!("pump ratio loss: max rel err {:.3e} <= 1e-4", pump.max_rel_err));
    let mut worst = ("", 0.0f64);
    for seed in [1, 2, 3] {
        for (name, err) in primitive_gradcheck(seed, 1e-5).expect("primitive gradcheck") {
            if err > worst.1 {
                worst = (name, err);
            }
        }
    }
    c.check(worst.1 <= 1e-6, format!("primitives (3 seeds): worst {:.3e} ({}) <= 1e-6", worst.1, worst.0));
    let mut model_worst = 0.0f64;
    for seed in [1, 2, 3] {
        let r = gradcheck_model(12, 2, seed).expect("model gradcheck");
        model_worst = model_worst.max(r.max_rel_err);
    }
    c.check(
        model_worst <= 1e-4,
        format!("full loss n=12 K=2 F=4 C=2 (3 seeds): max rel err {model_worst:.3e} <= 1e-4"),
    );
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 30.0, format!("runtime {secs:.1} s < 30 s"));
}

fn spectral_oracles(c: &mut Criterion) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut diff_err = 0.0f64;
    let mut ct_err = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(3..=50);
        let g = random_connected(n, rng.random_range(0.05..0.3), &mut rng);
        let spec = SpectralData::<f64>::new(&g).unwrap();
        for _ in 0..10 {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            for t in [1u32, 2, 5] {
                let prob = diffusion_distance_sq::<f64>(&g, t, i, j).unwrap();
                diff_err = diff_err.max(rel(prob, spec.diffusion_distance_sq(t, i, j)));
            }
        }
        let ct = spec.commute_time_matrix();
        let res = commute_time_resistance_matrix::<f64>(&g).unwrap();
        for (a, b) in ct.iter().zip(res.iter()) {
            ct_err = ct_err.max(rel(*a, *b));
        }
    }
    c.check(diff_err <= 1e-8, format!("diffusion distance, walk vs spectral (20 graphs, n<=50): {diff_err:.3e} <= 1e-8"));
    c.check(ct_err <= 1e-8, format!("commute time, spectral vs vol x resistance: {ct_err:.3e} <= 1e-8"));

    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(3..=30);
        let g = random_connected(n, rng.random_range(0.05..0.4), &mut rng);
        let ct = SpectralData::<f64>::new(&g).unwrap().commute_time_matrix();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let slack = ct[[i, k]] - ct[[i, j]] - ct[[j, k]];
                    worst = worst.max(slack / ct[[i, k]].max(1.0));
                    if slack > 1e-9 * ct[[i, k]].max(1.0) {
                        violations += 1;
                    }
                }
            }
        }
    }
    c.check(
        violations == 0,
        format!("commute-time triangle inequality on 100 graphs (n<=30): {violations} violations, worst relative slack {worst:.3e}"),
    );
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 60.0, format!("runtime {secs:.1} s < 60 s"));
}

fn structural(c: &mut Criterion) {
    let g = Graph::new(6, [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (2, 3)]).unwrap();
    let blocks = LabelVector::new(vec![0, 0, 0, 1, 1, 1], 2).unwrap();
    let flipped = LabelVector::new(vec![1, 0, 0, 1, 1, 1], 2).unwrap();
    let r = structural_heterophily(&g, &flipped).unwrap().ratio;
    c.check((r - 3.0).abs() <= 1e-9, format!("barbell, non-bridge node flipped: R = {r} (want 3 +- 1e-9)"));
    let same = structural_heterophily(&g, &blocks).unwrap();
    let r1 = structural_against_self(&g, &same.unsupervised);
    c.check((r1 - 1.0).abs() <= 1e-9, format!("labels equal to the structural labeling: R = {r1} (want 1 +- 1e-9)"));
    match texas_dir() {
        None => c.skip("Texas R within 15% of 18.37: DJLAB_TEXAS_DIR not set".into()),
        Some(dir) => match read_webkb(&dir).and_then(|(g, _, y)| structural_heterophily(&g, &y)) {
            Ok(rep) => {
                let dev = (rep.ratio - 18.37).abs() / 18.37;
                c.check(dev <= 0.15, format!("Texas R = {:.4} (18.37 +- 15%, deviation {:.1}%)", rep.ratio, 100.0 * dev));
            }
            Err(e) => c.check(false, format!("Texas R: {e}")),
        },
    }
}

fn structural_against_self(g: &Graph, unsupervised: &[usize]) -> f64 {
    let u = LabelVector::from_labels(unsupervised.to_vec());
    structural_heterophily_against(g, &u, &u).unwrap().ratio
}

fn fiedler_environment(c: &mut Criterion) {
    let start = Instant::now();
    let (g, _) = gen_sbm(&SbmSpec::new(vec![50, 50], 0.3, 0.02, 7)).unwrap();
    let res = train_pump::<f64>(&g, &PumpConfig::default()).unwrap();
    let corr = fiedler_correlations(res.env.u.view(), &g).unwrap();
    let min_abs = corr.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    c.check(
        min_abs > 0.9,
        format!(
            "every column |corr| with phi_2 > 0.9: {:?}",
            corr.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>()
        ),
    );
    let ct = SpectralData::<f64>::new(&g).unwrap().commute_time_matrix();
    let n = g.n();
    let (mut d2, mut cts) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in (i + 1)..n {
            let d = res.distances.get(i, j);
            d2.push(d * d);
            cts.push(ct[[i, j]]);
        }
    }
    let rho = spearman(&d2, &cts);
    c.check(rho > 0.85, format!("Spearman(D^2, exact commute time) over all pairs = {rho:.4} > 0.85"));
    c.note(format!("trained ratio {:.4}, Rayleigh quotients {:?}", res.env.ratio, res.env.rayleigh));
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 120.0, format!("runtime {secs:.1} s < 120 s"));
}

fn projector_algebra(c: &mut Criterion) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut problems = Vec::new();
    for trial in 0..200 {
        let n = rng.random_range(2..=50);
        // integer grid points on some trials to force distance ties
        let grid = trial % 3 == 0;
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let mut p = [0.0; 3];
                for x in &mut p {
                    *x = if grid { rng.random_range(0..3) as f64 } else { rng.random_range(0.0..2.0) };
                }
                p
            })
            .collect();
        let d = Array2::from_shape_fn((n, n), |(i, j)| {
            pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        });
        let dm = DistanceMatrix::from_matrix(d).unwrap();
        let proj = projectors(dm.as_array().view(), n - 1, JumpMode::Rank).unwrap();
        let mut cover = Array2::<u32>::zeros((n, n));
        for m in &proj.masks {
            for (i, j) in m.pairs() {
                cover[[i, j]] += 1;
            }
        }
        if proj.masks[0].to_dense() != Array2::<u8>::eye(n) {
            problems.push(format!("trial {trial}: Pi^0 != I"));
        }
        if cover.iter().any(|&v| v != 1) {
            problems.push(format!("trial {trial}: masks not a disjoint cover of all pairs"));
        }
        let bank = filter_bank(&dm, n - 1, JumpMode::Rank).unwrap();
        if bank.filters[0].to_dense(n) != Array2::<f64>::eye(n) {
            problems.push(format!("trial {trial}: J^0 != I"));
        }
        if bank.filters.iter().flat_map(|f| f.coeffs.iter()).any(|&x| !(x > 0.0 && x <= 1.0)) {
            problems.push(format!("trial {trial}: coefficient outside (0, 1]"));
        }
    }
    c.check(
        problems.is_empty(),
        format!(
            "200 distance matrices (n<=50, 1/3 with ties): Pi^0 = I, disjoint, sum = ones, J^0 = I, coeffs in (0,1]{}",
            problems.first().map(|p| format!("; first problem: {p}")).unwrap_or_default()
        ),
    );
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 10.0, format!("runtime {secs:.1} s < 10 s"));
}

fn propagation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut gap = 0.0f64;
    let mut resid = 0.0f64;
    for _ in 0..10 {
        let n = rng.random_range(4..=40);
        let g = random_connected(n, 0.15, &mut rng);
        let seeds: Vec<(usize, usize)> = (0..n).filter(|i| i % 4 == 0).map(|i| (i, (i / 4) % 3)).collect();
        let y = SeedMatrix::from_seeds(n, 3, &seeds).unwrap();
        for norm in [Normalization::RandomWalk, Normalization::Symmetric] {
            let p = propagation_operator(&g, norm).unwrap();
            let closed = propagate_closed(&p, &y, 0.9).unwrap();
            let iter = propagate_iterative(&p, &y, 0.9, 500).unwrap();
            gap = gap.max((&closed - &iter).iter().fold(0.0, |m: f64, x| m.max(x.abs())));
            resid = resid.max(stationarity_residual(&p, &y, 0.9, &closed));
        }
    }
    c.check(gap <= 1e-8, format!("closed form vs 500 iterations (alpha 0.9): {gap:.3e} <= 1e-8"));

    let k2 = Graph::new(2, [(0, 1)]).unwrap();
    let p = propagation_operator(&k2, Normalization::RandomWalk).unwrap();
    let f = propagate_closed(&p, &SeedMatrix::from_seeds(2, 1, &[(0, 0)]).unwrap(), 0.5).unwrap();
    let e = (f[[0, 0]] - 2.0 / 3.0).abs().max((f[[1, 0]] - 1.0 / 3.0).abs());
    c.check(e <= 1e-12, format!("K2, alpha 1/2: F = ({}, {}), error {e:.1e} <= 1e-12", f[[0, 0]], f[[1, 0]]));

    let p4 = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
    let b = absorbing_probabilities(&p4, &[0, 3]).unwrap();
    let e = (b[[0, 0]] - 2.0 / 3.0).abs().max((b[[0, 1]] - 1.0 / 3.0).abs());
    c.check(e <= 1e-12, format!("path of 4, absorbing ends, from node 1: ({}, {}), error {e:.1e} <= 1e-12", b[[0, 0]], b[[0, 1]]));
    c.check(resid <= 1e-9, format!("stationarity residual at the closed form: {resid:.3e} <= 1e-9"));
}

fn sbm_ordering(c: &mut Criterion) {
    let start = Instant::now();
    let base = SweepGrid::default();
    let seed = base.seeds[0];
    let grid = SweepGrid {
        gaps: vec![0.5],
        flips: vec![0.0, 0.4],
        seeds: vec![seed],
        ..base
    };
    let threads = std::env::var("DJLAB_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rows = sweep(&grid, threads).expect("sweep");
    let (hom, het) = (&rows[0], &rows[1]);
    c.note(format!(
        "n = {}, mean degree {}, noise {}, seed {seed}",
        grid.block_size * grid.blocks,
        grid.mean_degree,
        grid.noise
    ));
    c.check(
        het.acc_dj >= het.acc_gcn + 0.10,
        format!(
            "heterophilic cell (gap 0.5, flip 0.4, R {:.3}): dj {:.3} >= gcn {:.3} + 0.10 (mlp {:.3})",
            het.r, het.acc_dj, het.acc_gcn, het.acc_mlp
        ),
    );
    let inst = make_instance(&grid, 0.5, 0.4, seed).unwrap();
    let cfg = ModelConfig {
        seed,
        pump_basis: PumpBasis::Identity,
        ..grid.model.clone()
    };
    let ablation = train(&inst.graph, &inst.features, &inst.labels, &inst.masks, &cfg).unwrap();
    c.check(
        het.acc_dj >= ablation.fit.test_acc,
        format!("ablation: acc f(A) {:.3} >= acc f(I) {:.3}", het.acc_dj, ablation.fit.test_acc),
    );
    for (name, acc) in [("dj", hom.acc_dj), ("gcn", hom.acc_gcn), ("mlp", hom.acc_mlp)] {
        c.check(acc >= 0.9, format!("homophilic cell (gap 0.5, flip 0): {name} {acc:.3} >= 0.90"));
    }
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 600.0, format!("runtime {secs:.1} s < 600 s"));
}

fn texas_accuracy(c: &mut Criterion) {
    let Some(dir) = texas_dir() else {
        c.skip("Texas mean accuracy >= 80% over 10 splits: DJLAB_TEXAS_DIR not set".into());
        return;
    };
    let start = Instant::now();
    let outcome = (|| -> djlab_core::Result<Vec<f64>> {
        let (g, x, y) = read_webkb(&dir)?;
        let splits = split_files(&dir.join("splits"))?
            .iter()
            .map(|f| read_split(f))
            .collect::<djlab_core::Result<Vec<_>>>()?;
        Ok(run_splits(&g, &x, &y, &splits, &ModelConfig::default())?.test_accs)
    })();
    match outcome {
        Ok(accs) => {
            let (mean, std) = mean_std(&accs);
            c.check(
                accs.len() == 10 && mean >= 0.8,
                format!("Texas, {} splits: {:.2} +- {:.2} (>= 80)", accs.len(), 100.0 * mean, 100.0 * std),
            );
        }
        Err(e) => c.check(false, format!("Texas run: {e}")),
    }
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 900.0, format!("runtime {secs:.1} s < 900 s"));
}

fn run(bin: &Path, args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(bin)
        .args(args)
        .env("DJLAB_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Every file under `dir` except manifests, with contents.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|f| f != "djlab_manifest.json") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(c: &mut Criterion) {
    let bin = Path::new(env!("CARGO_BIN_EXE_djlab"));
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = root.join("data");
    if let Err(e) = run(
        bin,
        &["gen-sbm", "--sizes", "30,30", "--p", "0.3", "--q", "0.05", "--flip", "0.3", "--seed", "4", "--out", &s(&data)],
        "1",
    ) {
        c.check(false, format!("gen-sbm: {e}"));
        return;
    }
    let data_dir = s(&data);
    let graph = s(&data.join("graph.txt"));
    let cases: [(&str, &str, &str); 3] = [("train", "1", "1"), ("pump", "1", "1"), ("sweep", "1", "4")];
    for (name, t1, t2) in cases {
        let mut snaps = Vec::new();
        for (rep, threads) in [(0, t1), (1, t2)] {
            let out = root.join(format!("{name}_{rep}"));
            let o = s(&out);
            let args: Vec<String> = match name {
                "train" => vec![
                    "train", "--data-dir", &data_dir, "--set", "epochs=40", "--set", "k_jumps=3", "--set", "seed=9",
                    "--out", &o, "--emit-plot-data", &s(&out.join("plot")),
                ]
                .into_iter()
                .map(String::from)
                .collect(),
                "pump" => ["pump", "--graph", &graph, "--steps", "300", "--seed", "9", "--export-jumps", "3", "--out", &o]
                    .into_iter()
                    .map(String::from)
                    .collect(),
                _ => vec![
                    "sweep", "--gaps", "0.5,0.9", "--flips", "0,0.4", "--seeds", "1,2", "--block-size", "25",
                    "--mean-degree", "8", "--epochs", "30", "--out", &s(&out.join("sweep.csv")),
                ]
                .into_iter()
                .map(String::from)
                .collect(),
            };
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            if let Err(e) = run(bin, &refs, threads) {
                c.check(false, format!("{name}: {e}"));
                return;
            }
            snaps.push(snapshot(&out));
        }
        let files = snaps[0].len();
        c.check(
            files > 0 && snaps[0] == snaps[1],
            format!("{name}: {files} output files bit-identical across two runs (threads {t1} vs {t2})"),
        );
    }
}

fn main() {
    let criteria: [(&str, fn(&mut Criterion)); 9] = [
        ("gradient suite", gradient_suite),
        ("spectral oracle self-consistency", spectral_oracles),
        ("structural heterophily", structural),
        ("Fiedler-environment quality", fiedler_environment),
        ("projector algebra", projector_algebra),
        ("propagation baselines", propagation),
        ("SBM method ordering", sbm_ordering),
        ("Texas accuracy", texas_accuracy),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("DJLAB_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = Vec::new();
    for (idx, (name, f)) in criteria.iter().enumerate() {
        let id = idx + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let mut c = Criterion::new();
        f(&mut c);
        let tag = match c.status() {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        println!("[{tag}] criterion {id}: {name}");
        for d in &c.details {
            println!("       {d}");
        }
        if c.status() == Status::Fail {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed or skipped");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
