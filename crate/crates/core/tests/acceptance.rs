//! Acceptance suite. Runs as a plain binary so every criterion prints exactly
//! one PASS/FAIL line whether or not it succeeds.

use std::collections::HashSet;
use std::path::Path;
use std::time::{Duration, Instant};

use itertools::Itertools;
use ndarray::Array2;
use num_rational::Rational32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mmrec::eval::{
    average_precision, average_precision_thresholds, ndcg_at_k, precision_recall_at_k, Segment,
};
use mmrec::experiment::{
    load_data, make_synthetic, run_experiment, run_in_memory, sweep_k, ExperimentConfig, ExperimentData,
    RunOutcome, SynthSpec,
};
use mmrec::graph::{build_knn_graph, normalize_adjacency, GraphConfig};
use mmrec::ingest::ModalityFeatures;
use mmrec::model::{
    backward, bpr_objective, forward, train, train_mf, BprTriple, ItemGraphState, ModelConfig, ModelParams,
    TrainConfig,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Items per block in the default synthetic spec.
const BLOCK_SIZE: usize = 10;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

// ---------------------------------------------------------------- criterion 1

fn dense_cosine(values: &Array2<f64>, i: usize, j: usize) -> f64 {
    let (a, b) = (values.row(i), values.row(j));
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Dense kNN adjacency: positive cosine, top-k per row, ties to the smaller index.
fn brute_force_knn(values: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = values.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let mut cands: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, dense_cosine(values, i, j)))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(j, s) in cands.iter().take(k) {
            out[[i, j]] = s;
        }
    }
    out
}

fn brute_force_normalize(adj: &Array2<f64>) -> Array2<f64> {
    let deg: Vec<f64> = adj.rows().into_iter().map(|r| r.sum()).collect();
    Array2::from_shape_fn(adj.raw_dim(), |(i, j)| {
        let d = deg[i] * deg[j];
        if adj[[i, j]] != 0.0 && d > 0.0 {
            adj[[i, j]] / d.sqrt()
        } else {
            0.0
        }
    })
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Array2<f64> {
    let mut values = Array2::from_shape_simple_fn((n, dim), || rng.sample::<f64, _>(StandardNormal));
    // Duplicated rows force exact ties; zero rows have no neighbors.
    for _ in 0..n / 10 {
        let (src, dst) = (rng.random_range(0..n), rng.random_range(0..n));
        let row = values.row(src).to_owned();
        values.row_mut(dst).assign(&row);
    }
    if rng.random_bool(0.5) {
        values.row_mut(rng.random_range(0..n)).fill(0.0);
    }
    values
}

fn graph_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for instance in 0..50 {
        let k = [1, 5, 20][instance % 3];
        let n = rng.random_range(k + 1..=200);
        let dim = rng.random_range(1..=32);
        let values = random_features(&mut rng, n, dim);
        let features = ModalityFeatures::new("m", values.clone()).unwrap();
        let knn = build_knn_graph(&features, k).unwrap();
        let normalized = normalize_adjacency(&knn).unwrap();
        let expected = brute_force_knn(&values, k);
        let expected_norm = brute_force_normalize(&expected);
        for (got, want) in [(knn.to_dense(), &expected), (normalized.to_dense(), &expected_norm)] {
            for i in 0..n {
                let got_edges: Vec<usize> = knn.row(i).map(|(j, _)| j).collect();
                let want_edges: Vec<usize> = (0..n).filter(|&j| expected[[i, j]] != 0.0).collect();
                if got_edges != want_edges {
                    return Verdict::new(false, format!("instance {instance}: row {i} edges {got_edges:?} vs {want_edges:?}"));
                }
                for j in 0..n {
                    worst = worst.max((got[[i, j]] - want[[i, j]]).abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    Verdict::new(
        worst <= 1e-9 && elapsed < Duration::from_secs(30),
        format!("50 instances, max weight error {worst:.2e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- criterion 2

fn objective(params: &ModelParams, state: &ItemGraphState<'_>, triples: &[BprTriple], l2: f64) -> f64 {
    let fwd = forward(params, state).unwrap();
    bpr_objective(params, &fwd, triples, l2).unwrap().total()
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let instances = 24;
    for instance in 0..instances {
        let n_users = rng.random_range(2..=5);
        let n_items = rng.random_range(5..=9);
        let dim = rng.random_range(2..=4);
        let n_modalities = rng.random_range(1..=2);
        let features: Vec<ModalityFeatures> = (0..n_modalities)
            .map(|m| {
                let fdim = rng.random_range(2..=4);
                let values = Array2::from_shape_simple_fn((n_items, fdim), || rng.random_range(-0.3..1.0));
                ModalityFeatures::new(format!("m{m}"), values).unwrap()
            })
            .collect();
        let transform_dim = rng.random_range(2..=4);
        let graph = GraphConfig {
            k: rng.random_range(1..=3),
            sigma: rng.random_range(0.2..0.95),
            transform_dim,
            ..Default::default()
        };
        let model = ModelConfig {
            embedding_dim: dim,
            n_layers: rng.random_range(1..=3),
            use_item_graph: true,
            init_scale: 0.5,
        };
        let shapes: Vec<(usize, usize)> = features.iter().map(|f| (transform_dim, f.values.ncols())).collect();
        let mut params = ModelParams::init(n_users, n_items, dim, &shapes, 0.5, instance as u64);
        for logit in &mut params.modality_logits {
            *logit = rng.random_range(-1.0..1.0);
        }
        let mut state = ItemGraphState::new(&features, &graph, &model).unwrap();
        state.rebuild_learned(&params.transforms).unwrap();
        let triples: Vec<BprTriple> = (0..rng.random_range(1..=6))
            .map(|_| {
                let pos = rng.random_range(0..n_items);
                let neg = (pos + rng.random_range(1..n_items)) % n_items;
                BprTriple { user: rng.random_range(0..n_users), pos, neg }
            })
            .collect();
        let l2 = rng.random_range(0.0..0.05);
        let fwd = forward(&params, &state).unwrap();
        let grads = backward(&params, &state, &fwd, &triples, l2).unwrap();
        let analytic: Vec<Vec<f64>> = grads.groups().into_iter().map(|(_, g)| g.to_vec()).collect();
        for (g, values) in analytic.iter().enumerate() {
            for (idx, &a) in values.iter().enumerate() {
                let mut plus = params.clone();
                plus.groups_mut()[g].1[idx] += h;
                let mut minus = params.clone();
                minus.groups_mut()[g].1[idx] -= h;
                let numeric = (objective(&plus, &state, &triples, l2) - objective(&minus, &state, &triples, l2)) / (2.0 * h);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = start.elapsed();
    Verdict::new(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("{instances} instances, max relative error {worst:.2e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- criterion 3

fn r(n: usize) -> Rational32 {
    Rational32::from_integer(n as i32)
}

fn metric_oracles() -> Verdict {
    let mut checked = 0usize;
    let mut worst_ndcg = 0.0f64;
    for n in 1..=6usize {
        let subsets: Vec<HashSet<usize>> = (0u32..1 << n)
            .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
            .collect();
        let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
        let dcg = |ranked: &[usize], rel: &HashSet<usize>, k: usize| -> f64 {
            ranked
                .iter()
                .take(k)
                .enumerate()
                .filter(|(_, i)| rel.contains(i))
                .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
                .sum()
        };
        for rel in &subsets {
            for k in 1..=n {
                let ideal = perms.iter().map(|p| dcg(p, rel, k)).fold(0.0, f64::max);
                for ranked in &perms {
                    checked += 1;
                    let prf = precision_recall_at_k::<Rational32>(ranked, rel, k).unwrap();
                    let ap = average_precision::<Rational32>(ranked, rel, k).unwrap();
                    let ap_t = average_precision_thresholds::<Rational32>(ranked, rel, k).unwrap();
                    let nd = ndcg_at_k(ranked, rel, k).unwrap();
                    if rel.is_empty() {
                        if prf.is_some() || ap.is_some() || ap_t.is_some() || nd.is_some() {
                            return Verdict::new(false, format!("n={n} k={k}: empty relevant set scored"));
                        }
                        continue;
                    }
                    let hit = |pos: usize| rel.contains(&ranked[pos]);
                    let hits = (0..k).filter(|&p| hit(p)).count();
                    let want_pr = (r(hits) / r(k), r(hits) / r(rel.len()));
                    let mut want_ap = Rational32::from_integer(0);
                    for pos in 0..k {
                        if hit(pos) {
                            let prefix_hits = (0..=pos).filter(|&p| hit(p)).count();
                            want_ap += r(prefix_hits) / r(pos + 1);
                        }
                    }
                    want_ap /= r(rel.len().min(k));
                    if prf != Some(want_pr) || ap != Some(want_ap) || ap_t != ap {
                        return Verdict::new(
                            false,
                            format!("n={n} k={k} ranked={ranked:?} rel={rel:?}: {prf:?} {ap:?} {ap_t:?}"),
                        );
                    }
                    worst_ndcg = worst_ndcg.max((nd.unwrap() - dcg(ranked, rel, k) / ideal).abs());
                }
            }
        }
    }
    Verdict::new(
        worst_ndcg < 1e-12,
        format!("{checked} (ranking, relevant set, k) cases, AP forms equal exactly, max NDCG error {worst_ndcg:.1e}"),
    )
}

// ---------------------------------------------------------- criteria 4, 5, 6

struct SeedRun {
    seed: u64,
    mmrs: RunOutcome,
    mf: RunOutcome,
    noise: RunOutcome,
    elapsed: Duration,
    sweep: Vec<(usize, f64)>,
}

fn write_synthetic(spec: &SynthSpec, dir: &Path) -> ExperimentConfig {
    let files = make_synthetic(spec).unwrap().write(dir).unwrap();
    ExperimentConfig::from_file(&files.config).unwrap()
}

fn run_seed(seed: u64) -> SeedRun {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { seed, ..Default::default() };
    let config = write_synthetic(&spec, &dir.path().join("informative"));
    let noise_config = write_synthetic(&SynthSpec { noise: 1.0, ..spec }, &dir.path().join("noise"));

    let start = Instant::now();
    let data = load_data(&config).unwrap();
    let noise_data = load_data(&noise_config).unwrap();
    assert_eq!(data.splits.train, noise_data.splits.train, "noise only changes features");
    let mmrs = run_in_memory(&config, &data).unwrap();
    let mf_config = config.with_overrides(&["model_train.mode=mf".to_string()]).unwrap();
    let mf = run_in_memory(&mf_config, &ExperimentData { splits: data.splits.clone(), features: Vec::new() }).unwrap();
    let noise = run_in_memory(&noise_config, &noise_data).unwrap();
    let elapsed = start.elapsed();

    let n_items = data.splits.n_items();
    let ks = [1, 3, 5, BLOCK_SIZE, n_items - 1];
    let sweep = sweep_k(&config, &data, &ks).unwrap().into_iter().map(|row| (row.k, row.ndcg)).collect();
    SeedRun {
        seed,
        mmrs,
        mf,
        noise,
        elapsed,
        sweep,
    }
}

fn ndcg20(outcome: &RunOutcome) -> f64 {
    outcome.report.segment(Segment::All).unwrap().at(20).unwrap().ndcg
}

fn recall10(outcome: &RunOutcome, segment: Segment) -> f64 {
    outcome.report.segment(segment).unwrap().at(10).unwrap().recall
}

fn directional(runs: &[SeedRun]) -> Verdict {
    let mean = |f: &dyn Fn(&SeedRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let mmrs = mean(&|r| ndcg20(&r.mmrs));
    let mf = mean(&|r| ndcg20(&r.mf));
    let noise = mean(&|r| ndcg20(&r.noise));
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap();
    Verdict::new(
        mmrs >= 1.1 * mf && mmrs > noise && slowest < Duration::from_secs(600),
        format!(
            "mean NDCG@20 mmrs {mmrs:.4}, mf {mf:.4} ({:+.1}%), noise features {noise:.4}; slowest seed {:.1}s",
            100.0 * (mmrs / mf - 1.0),
            slowest.as_secs_f64()
        ),
    )
}

fn cold_start(runs: &[SeedRun]) -> Verdict {
    let count = |f: &dyn Fn(&SeedRun) -> bool| runs.iter().filter(|r| f(r)).count();
    let mmrs = count(&|r| recall10(&r.mmrs, Segment::Cold) < recall10(&r.mmrs, Segment::Warm));
    let mf = count(&|r| recall10(&r.mf, Segment::Cold) < recall10(&r.mf, Segment::Warm));
    let beats = count(&|r| recall10(&r.mmrs, Segment::Cold) > recall10(&r.mf, Segment::Cold));
    for r in runs {
        println!(
            "    seed {}: recall@10 warm/cold mmrs {:.4}/{:.4}, mf {:.4}/{:.4}",
            r.seed,
            recall10(&r.mmrs, Segment::Warm),
            recall10(&r.mmrs, Segment::Cold),
            recall10(&r.mf, Segment::Warm),
            recall10(&r.mf, Segment::Cold)
        );
    }
    let n = runs.len();
    Verdict::new(
        mmrs >= 4 && mf >= 4 && beats >= 4,
        format!("cold < warm: mmrs {mmrs}/{n}, mf {mf}/{n}; mmrs cold > mf cold {beats}/{n}"),
    )
}

fn k_shape(runs: &[SeedRun]) -> Verdict {
    let mut failing = Vec::new();
    for r in runs {
        let rising: Vec<f64> = r.sweep.iter().filter(|(k, _)| *k <= BLOCK_SIZE).map(|&(_, v)| v).collect();
        let plateau = rising.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (k_last, last) = *r.sweep.last().unwrap();
        let monotone = rising.windows(2).all(|w| w[1] >= w[0]);
        let curve: Vec<String> = r.sweep.iter().map(|(k, v)| format!("k={k}:{v:.4}")).collect();
        println!("    seed {}: {}", r.seed, curve.join(" "));
        if !(monotone && last < plateau) {
            failing.push(format!("seed {} (non-decreasing {monotone}, k={k_last} below plateau {})", r.seed, last < plateau));
        }
    }
    Verdict::new(
        failing.is_empty(),
        if failing.is_empty() {
            format!("all {} seeds rise to k={BLOCK_SIZE} and drop at k=n_items-1", runs.len())
        } else {
            format!("failing: {}", failing.join(", "))
        },
    )
}

// ---------------------------------------------------------------- criterion 7

fn determinism() -> Verdict {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = write_synthetic(&SynthSpec { seed: 11, ..Default::default() }, &dir.path().join("data"));
    let files = ["history.csv", "report.json", "report.csv", "model.mmck"];
    let outputs: Vec<Vec<Vec<u8>>> = (0..2)
        .map(|run| {
            let out = dir.path().join(format!("run{run}"));
            pool.install(|| run_experiment(&config, &out)).unwrap();
            files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect()
        })
        .collect();
    let differing: Vec<&str> = files
        .iter()
        .zip(outputs[0].iter().zip(&outputs[1]))
        .filter(|(_, (a, b))| a != b)
        .map(|(f, _)| *f)
        .collect();
    Verdict::new(
        differing.is_empty(),
        if differing.is_empty() {
            format!("two single-threaded runs byte-identical ({})", files.join(", "))
        } else {
            format!("differs: {}", differing.join(", "))
        },
    )
}

// ---------------------------------------------------------------- criterion 8

fn collapse_to_mf() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut config = write_synthetic(&SynthSpec { seed: 5, ..Default::default() }, &dir.path().join("data"));
    config.ratios = mmrec::ingest::SplitRatios::default();
    let data = load_data(&config).unwrap();
    let train_config = TrainConfig { epochs: 15, ..config.train.clone() };
    let collapsed = ModelConfig {
        n_layers: 0,
        use_item_graph: false,
        ..config.model.clone()
    };
    let mmrs = train(&data.splits, &data.features, &config.graph, &collapsed, &train_config).unwrap();
    let mf = train_mf(&data.splits, config.model.embedding_dim, &train_config).unwrap();
    let (a, b) = (mmrs.history.losses(), mf.history.losses());
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max);
    let same_params = mmrs.params == mf.params;
    Verdict::new(
        a.len() == b.len() && !a.is_empty() && worst <= 1e-12 && same_params,
        format!("{} epochs, max loss difference {worst:.1e}, final parameters equal: {same_params}", a.len()),
    )
}

fn main() {
    let mut verdicts: Vec<(usize, &str, Verdict)> = vec![
        (1, "kNN graph + normalization vs dense brute force", graph_oracle()),
        (2, "analytic vs central-difference gradients", gradient_check()),
        (3, "ranking metrics vs exhaustive oracles", metric_oracles()),
    ];
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    verdicts.push((4, "graph model beats MF and noise features", directional(&runs)));
    verdicts.push((5, "cold-start pattern", cold_start(&runs)));
    verdicts.push((6, "neighbor-count sensitivity shape", k_shape(&runs)));
    verdicts.push((7, "single-threaded determinism", determinism()));
    verdicts.push((8, "disabled graph collapses to MF", collapse_to_mf()));

    println!();
    for (n, name, v) in &verdicts {
        println!("criterion {n} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed = verdicts.iter().filter(|(_, _, v)| !v.pass).count();
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
