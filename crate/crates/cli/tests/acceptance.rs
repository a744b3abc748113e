//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance -- 3 7` runs only the listed criteria.
//! Expected values come from oracles written here, never from the library
//! under test.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use alquery::active_loop::{
    dedup_accounting, run_loop, BoxError, InitialLabeled, LoopConfig, SelectionPool, TrainerAdapter,
};
use alquery::diversity::{
    box_constrained_lsq, omp_solve, omp_with_matrix, select, select_coreset, select_kmpp,
    similarity_kernel, CandidatePool, CoresetStart, Metric, SamplingConfig, Strategy,
};
use alquery::model::{
    Detection, DetectionSet, LedgerRecord, PredictionStack, ScoredImage, StackDims,
};
use alquery::scoring::{
    detection_entropy, mean_probability_map, mutual_information_map, score_image, Aggregation,
    GradReduce, ScoreInput, ScoringConfig, ScoringFunction, DEFAULT_EPSILON,
};
use alquery::synth::{generate_pool, SynthPool, SynthPoolSpec, ToyTrainer, TrainerOptions};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = DEFAULT_EPSILON;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

const fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

const CRITERIA: [Criterion; 10] = [
    Criterion {
        id: 1,
        name: "formula oracles",
        limit: secs(1),
        run: formula_oracles,
    },
    Criterion {
        id: 2,
        name: "mutual information bounds",
        limit: secs(10),
        run: mi_properties,
    },
    Criterion {
        id: 3,
        name: "core-set vs brute force",
        limit: secs(30),
        run: coreset_brute_force,
    },
    Criterion {
        id: 4,
        name: "k-means++ distribution",
        limit: secs(30),
        run: kmpp_distribution,
    },
    Criterion {
        id: 5,
        name: "OMP correctness",
        limit: secs(60),
        run: omp_correctness,
    },
    Criterion {
        id: 6,
        name: "loop hand trace",
        limit: secs(1),
        run: loop_hand_trace,
    },
    Criterion {
        id: 7,
        name: "AL beats random",
        limit: secs(600),
        run: al_beats_random,
    },
    Criterion {
        id: 8,
        name: "diversity covers scenes",
        limit: secs(300),
        run: diversity_covers_scenes,
    },
    Criterion {
        id: 9,
        name: "streaming scale",
        limit: None,
        run: streaming_scale,
    },
    Criterion {
        id: 10,
        name: "CLI determinism",
        limit: None,
        run: cli_determinism,
    },
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let wanted: Option<Vec<u32>> = filters.iter().map(|f| f.parse().ok()).collect();
    let Some(wanted) = wanted else {
        println!("acceptance: filter {filters:?} names no criterion; nothing run");
        return ExitCode::SUCCESS;
    };
    let mut failed = 0;
    for c in CRITERIA
        .iter()
        .filter(|c| wanted.is_empty() || wanted.contains(&c.id))
    {
        let start = Instant::now();
        let out = (c.run)();
        let elapsed = start.elapsed();
        let in_time = c.limit.is_none_or(|limit| elapsed < limit);
        let pass = out.pass && in_time;
        let late = if in_time {
            String::new()
        } else {
            format!(" [over the {:?} limit]", c.limit.unwrap())
        };
        println!(
            "{} {:>2} {:<26} {:>8.2}s  {}{late}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            out.detail
        );
        std::io::stdout().flush().ok();
        failed += usize::from(!pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// Independent scalar oracles.

/// Bernoulli entropy in nats through `ln_1p`, a different route from the
/// library's two plain logarithms.
fn oracle_entropy(p: f64) -> f64 {
    let q = p.clamp(EPS, 1.0 - EPS);
    -(q * q.ln() + (1.0 - q) * (-q).ln_1p())
}

/// Compensated (Neumaier) summation.
fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + c
}

fn exact_mean(values: &[f64]) -> f64 {
    exact_sum(values.iter().copied()) / values.len() as f64
}

fn gradient(p: f64) -> f64 {
    if p >= 0.5 {
        1.0 - p
    } else {
        p
    }
}

fn random_probability(rng: &mut ChaCha8Rng) -> f32 {
    match rng.random_range(0..10) {
        0 => [0.0, 1.0][rng.random_range(0..2)],
        1 => 0.5 + rng.random_range(-1e-3f32..1e-3),
        2 => rng.random_range(0.0f32..1e-6),
        _ => rng.random::<f32>(),
    }
}

/// Values in `[member][class][row][col]` order.
struct RawStack {
    dims: StackDims,
    values: Vec<f32>,
}

impl RawStack {
    fn random(rng: &mut ChaCha8Rng, members: usize) -> Self {
        let dims = StackDims::new(
            members,
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        );
        let n = dims.members * dims.classes * dims.height * dims.width;
        Self {
            dims,
            values: (0..n).map(|_| random_probability(rng)).collect(),
        }
    }

    fn cells(&self) -> usize {
        self.dims.height * self.dims.width
    }

    fn get(&self, e: usize, c: usize, cell: usize) -> f64 {
        f64::from(self.values[(e * self.dims.classes + c) * self.cells() + cell])
    }

    fn member_values(&self, c: usize, cell: usize) -> Vec<f64> {
        (0..self.dims.members)
            .map(|e| self.get(e, c, cell))
            .collect()
    }

    fn stack(&self, id: &str) -> PredictionStack {
        PredictionStack::from_vec(id, self.dims, self.values.clone()).unwrap()
    }

    /// Per-class maps of `f(member values at a position)`.
    fn class_maps(&self, f: impl Fn(&[f64]) -> f64) -> Vec<Vec<f64>> {
        (0..self.dims.classes)
            .map(|c| {
                (0..self.cells())
                    .map(|cell| f(&self.member_values(c, cell)))
                    .collect()
            })
            .collect()
    }
}

fn oracle_mi(values: &[f64]) -> f64 {
    let h_mean = oracle_entropy(exact_mean(values));
    let mean_h = exact_mean(
        &values
            .iter()
            .map(|&p| oracle_entropy(p))
            .collect::<Vec<_>>(),
    );
    (h_mean - mean_h).max(0.0)
}

fn oracle_gradient_variance(values: &[f64]) -> f64 {
    let g: Vec<f64> = values.iter().map(|&p| gradient(p)).collect();
    let mean = exact_mean(&g);
    exact_mean(
        &g.iter()
            .map(|v| (v - mean) * (v - mean))
            .collect::<Vec<_>>(),
    )
}

/// Image score from per-class maps: max over everything or mean over all cells.
fn oracle_aggregate(maps: &[Vec<f64>], aggregation: Aggregation) -> f64 {
    match aggregation {
        Aggregation::Max => maps
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
        _ => {
            let all: Vec<f64> = maps.iter().flatten().copied().collect();
            exact_mean(&all)
        }
    }
}

// ---------------------------------------------------------------------------
// 1. Formula oracles.

fn formula_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    let mut check = |got: f64, want: f64| {
        worst = worst.max((got - want).abs());
        checks += 1;
    };
    for i in 0..1000 {
        let members = rng.random_range(1..=8);
        let raw = RawStack::random(&mut rng, members);
        let stack = raw.stack("x");
        let score = |config: ScoringConfig| {
            score_image(ScoreInput::Stack(&stack), &config)
                .unwrap()
                .score
        };
        for agg in [Aggregation::Max, Aggregation::Avg] {
            let entropy = raw.class_maps(|v| oracle_entropy(exact_mean(v)));
            check(
                score(ScoringConfig::new(ScoringFunction::Entropy, agg)),
                oracle_aggregate(&entropy, agg),
            );
            let mi = raw.class_maps(oracle_mi);
            check(
                score(ScoringConfig::new(ScoringFunction::MutualInformation, agg)),
                oracle_aggregate(&mi, agg),
            );
            let grad = raw.class_maps(|v| gradient(exact_mean(v)));
            check(
                score(ScoringConfig::new(ScoringFunction::Grad, agg)),
                oracle_aggregate(&grad, agg),
            );
        }
        if members >= 2 {
            let var = raw.class_maps(oracle_gradient_variance);
            let max = ScoringConfig::new(ScoringFunction::Grad, Aggregation::Max)
                .with_grad_reduce(GradReduce::MaxVariance);
            check(score(max), oracle_aggregate(&var, Aggregation::Max));
            let mean = ScoringConfig::new(ScoringFunction::Grad, Aggregation::Avg)
                .with_grad_reduce(GradReduce::MeanVariance);
            check(score(mean), oracle_aggregate(&var, Aggregation::Avg));
        }
        let confidences: Vec<f64> = (0..rng.random_range(0..8))
            .map(|_| f64::from(random_probability(&mut rng)))
            .collect();
        let dets = DetectionSet {
            image_id: format!("d{i}"),
            detections: confidences
                .iter()
                .enumerate()
                .map(|(k, &confidence)| Detection {
                    class: k as u32 % 3,
                    x: 0.0,
                    y: 0.0,
                    w: 4.0,
                    h: 4.0,
                    confidence,
                })
                .collect(),
        };
        let h: Vec<f64> = confidences.iter().map(|&p| oracle_entropy(p)).collect();
        check(
            detection_entropy(&dets, Aggregation::Max, EPS)
                .unwrap()
                .score,
            h.iter().copied().fold(0.0, f64::max),
        );
        check(
            detection_entropy(&dets, Aggregation::Sum, EPS)
                .unwrap()
                .score,
            exact_sum(h.iter().copied()),
        );
    }
    outcome(
        worst <= 1e-9,
        format!("{checks} values over 1000 inputs, max |error| {worst:.2e} (tolerance 1e-9)"),
    )
}

// ---------------------------------------------------------------------------
// 2. Mutual-information properties.

fn mi_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut min_mi, mut worst_excess, mut worst_identical) =
        (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for i in 0..10_000 {
        let members = rng.random_range(2..=8);
        let mut raw = RawStack::random(&mut rng, members);
        if i % 2 == 1 {
            let len = raw.values.len() / members;
            let first = raw.values[..len].to_vec();
            for e in 1..members {
                raw.values[e * len..(e + 1) * len].copy_from_slice(&first);
            }
        }
        let stack = raw.stack("x");
        for c in 0..raw.dims.classes {
            let mi = mutual_information_map(&stack, c, EPS).unwrap();
            let mean = mean_probability_map(&stack, c).unwrap();
            for (&v, &p) in mi.iter().zip(mean.iter()) {
                min_mi = min_mi.min(v);
                worst_excess = worst_excess.max(v - oracle_entropy(p));
                if i % 2 == 1 {
                    worst_identical = worst_identical.max(v.abs());
                }
            }
        }
    }
    let pass = min_mi >= -1e-9 && worst_excess <= 1e-9 && worst_identical <= 1e-9;
    outcome(
        pass,
        format!("10000 stacks: min MI {min_mi:.2e}, max MI - H(mean) {worst_excess:.2e}, max |MI| identical members {worst_identical:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 3. Core-set greedy against a full-scan reference.

fn oracle_distance(metric: Metric, a: &[f32], b: &[f32]) -> f64 {
    let a: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
    let b: Vec<f64> = b.iter().map(|&v| f64::from(v)).collect();
    match metric {
        Metric::Euclidean => a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum(),
        Metric::Cosine => {
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            (1.0 - dot / (na * nb)).max(0.0)
        }
    }
}

/// Every step rescans all pairs: `argmax_x s(x) · min_{c ∈ C} d(x, c)`,
/// ties to the smaller id. The first centre is the highest score.
fn brute_force_coreset(
    ids: &[String],
    vectors: &[Vec<f32>],
    scores: &[f64],
    n: usize,
    metric: Metric,
) -> Vec<String> {
    let m = ids.len();
    let better = |a: usize, wa: f64, b: usize, wb: f64| wa > wb || (wa == wb && ids[a] < ids[b]);
    let mut first = 0;
    for i in 1..m {
        if better(i, scores[i], first, scores[first]) {
            first = i;
        }
    }
    let mut chosen = vec![first];
    while chosen.len() < n.min(m) {
        let mut best: Option<(usize, f64)> = None;
        for x in (0..m).filter(|x| !chosen.contains(x)) {
            let d_min = chosen
                .iter()
                .map(|&c| oracle_distance(metric, &vectors[x], &vectors[c]))
                .fold(f64::INFINITY, f64::min);
            let w = scores[x] * d_min;
            if best.is_none_or(|(b, wb)| better(x, w, b, wb)) {
                best = Some((x, w));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen.into_iter().map(|i| ids[i].clone()).collect()
}

struct RandomPool {
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    scores: Vec<f64>,
}

impl RandomPool {
    /// Random ids so that id order and generation order differ. With
    /// `coarse`, coordinates and scores sit on small integer grids, which
    /// produces exact ties.
    fn new(rng: &mut ChaCha8Rng, m: usize, dim: usize, coarse: bool) -> Self {
        let mut seen = HashSet::new();
        let ids: Vec<String> = std::iter::repeat_with(|| format!("{:08x}", rng.random::<u32>()))
            .filter(|id| seen.insert(id.clone()))
            .take(m)
            .collect();
        let vectors = (0..m)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        if coarse {
                            rng.random_range(1..4) as f32
                        } else {
                            rng.random_range(-1.0f32..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let scores = (0..m)
            .map(|_| {
                if coarse {
                    f64::from(rng.random_range(1..4))
                } else {
                    rng.random_range(0.01..1.0)
                }
            })
            .collect();
        Self {
            ids,
            vectors,
            scores,
        }
    }

    fn candidates(&self) -> CandidatePool {
        CandidatePool::from_parts(self.ids.clone(), self.vectors.clone(), self.scores.clone())
            .unwrap()
    }
}

fn coreset_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = Vec::new();
    for case in 0..100 {
        let m = rng.random_range(1..=200);
        let n = rng.random_range(1..=20.min(m));
        let dim = rng.random_range(1..=8);
        let pool = RandomPool::new(&mut rng, m, dim, case % 5 == 0);
        let candidates = pool.candidates();
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let got = select_coreset(&candidates, n, metric, CoresetStart::HighestScore, 0)
                .unwrap()
                .selected;
            let want = brute_force_coreset(&pool.ids, &pool.vectors, &pool.scores, n, metric);
            if got != want {
                mismatches.push(format!("case {case} {metric}"));
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "100 pools x 2 metrics, {} id-sequence mismatches {mismatches:?}",
            mismatches.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. k-means++ second-pick distribution.

fn kmpp_distribution() -> Outcome {
    let ids: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
    let points: Vec<Vec<f32>> = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 2.0],
        vec![3.0, 3.0],
    ];
    let scores = vec![1.0, 0.5, 2.0, 1.0];
    // First pick uniform; then p(x | f) = s(x) d(x, f) / sum over y != f.
    let d = |i: usize, j: usize| oracle_distance(Metric::Euclidean, &points[i], &points[j]);
    let mut analytic = [0.0f64; 4];
    for f in 0..4 {
        let total: f64 = (0..4)
            .filter(|&y| y != f)
            .map(|y| scores[y] * d(y, f))
            .sum();
        for x in (0..4).filter(|&x| x != f) {
            analytic[x] += 0.25 * scores[x] * d(x, f) / total;
        }
    }
    let pool = CandidatePool::from_parts(ids.clone(), points, scores).unwrap();
    let trials = 100_000u64;
    let mut counts = [0usize; 4];
    for seed in 0..trials {
        let batch = select_kmpp(&pool, 2, Metric::Euclidean, seed).unwrap();
        counts[ids.iter().position(|id| *id == batch.selected[1]).unwrap()] += 1;
    }
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / trials as f64).collect();
    let worst = empirical
        .iter()
        .zip(&analytic)
        .map(|(e, a)| (e - a).abs())
        .fold(0.0, f64::max);
    outcome(
        worst <= 0.01,
        format!(
            "analytic {:.4?}, empirical {:.4?} over {trials} trials, max |diff| {worst:.4} (tolerance 0.01)",
            analytic, empirical
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. OMP.

fn top_n_set(scores: &[f64], n: usize) -> HashSet<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.into_iter().take(n).collect()
}

/// `‖Ax − b‖²` on the 1e-3 grid of `[0, 1]^k`, k ≤ 3. The last coordinate
/// of each grid line is found exactly: along it the objective is a convex
/// parabola, so the best grid value is a neighbour of its clipped vertex.
fn grid_search(a: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let k = a.ncols();
    let q = |i: usize, j: usize| a.column(i).dot(&a.column(j));
    let c: Vec<f64> = (0..k)
        .map(|i| a.column(i).iter().zip(b).map(|(x, y)| x * y).sum())
        .collect();
    let qm: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| q(i, j)).collect()).collect();
    let objective = |x: &[f64]| {
        let mut f = 0.0;
        for i in 0..k {
            f -= 2.0 * c[i] * x[i];
            for j in 0..k {
                f += x[i] * qm[i][j] * x[j];
            }
        }
        f
    };
    let steps = 1000usize;
    let grid = |i: usize| i as f64 / steps as f64;
    let last = k - 1;
    let outer = (steps + 1).pow(last as u32);
    let mut best = (f64::INFINITY, vec![0.0; k]);
    let mut x = vec![0.0; k];
    for index in 0..outer {
        let mut rest = index;
        for xi in x.iter_mut().take(last) {
            *xi = grid(rest % (steps + 1));
            rest /= steps + 1;
        }
        let cross: f64 = (0..last).map(|j| qm[last][j] * x[j]).sum();
        let vertex = ((c[last] - cross) / qm[last][last]).clamp(0.0, 1.0) * steps as f64;
        for g in [vertex.floor(), vertex.ceil()] {
            x[last] = grid(g as usize);
            let f = objective(&x);
            if f < best.0 {
                best = (f, x.clone());
            }
        }
    }
    best.1
}

fn omp_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut identity_failures = 0;
    for _ in 0..100 {
        let m = rng.random_range(2..=40);
        let n = rng.random_range(1..=m);
        let scores: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let result = omp_with_matrix(&Array2::eye(m), &scores, n).unwrap();
        if result.active.iter().copied().collect::<HashSet<_>>() != top_n_set(&scores, n) {
            identity_failures += 1;
        }
    }

    let mut grid_worst = 0.0f64;
    let mut grid_cases = 0;
    for case in 0..60 {
        let m = rng.random_range(3..=8);
        let pool = RandomPool::new(&mut rng, m, 3, false);
        let candidates = pool.candidates();
        let metric = if case % 2 == 0 {
            Metric::Euclidean
        } else {
            Metric::Cosine
        };
        let sim = similarity_kernel(candidates.distance_matrix(metric).unwrap());
        let k = 1 + case % 3;
        let mut columns: Vec<usize> = (0..m).collect();
        for i in 0..k {
            let j = rng.random_range(i..m);
            columns.swap(i, j);
        }
        let a = sim.select(ndarray::Axis(1), &columns[..k]);
        let scores = candidates.scores();
        let x = box_constrained_lsq(&a, scores).unwrap();
        let g = grid_search(&a, scores);
        grid_worst = x
            .iter()
            .zip(&g)
            .map(|(u, v)| (u - v).abs())
            .fold(grid_worst, f64::max);
        grid_cases += 1;
    }

    let mut duplicate_failures = 0;
    for case in 0..100 {
        let m = rng.random_range(3..=10);
        let mut pool = RandomPool::new(&mut rng, m, 4, false);
        pool.vectors[1] = pool.vectors[0].clone();
        pool.scores[0] = rng.random_range(0.8..1.0);
        pool.scores[1] = rng.random_range(0.8..1.0);
        let metric = if case % 2 == 0 {
            Metric::Euclidean
        } else {
            Metric::Cosine
        };
        let candidates = pool.candidates();
        let result = omp_solve(&candidates, 2, metric).unwrap();
        let chosen: HashSet<&String> = result
            .active
            .iter()
            .map(|&i| &candidates.ids()[i])
            .collect();
        if chosen.contains(&pool.ids[0]) && chosen.contains(&pool.ids[1]) {
            duplicate_failures += 1;
        }
    }

    let pass = identity_failures == 0 && grid_worst <= 2e-3 && duplicate_failures == 0;
    outcome(
        pass,
        format!(
            "(a) identity D: {identity_failures}/100 differ from top-N; (b) {grid_cases} solves vs grid, max |dx| {grid_worst:.2e} (tolerance 2e-3); (c) duplicates co-selected {duplicate_failures}/100"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Loop replay against a hand trace.

/// Single-member 1×1 stacks from one probability table per iteration. The
/// model handle is the training-list length, which fixes the iteration.
struct ScriptedTrainer {
    tables: Vec<BTreeMap<&'static str, f32>>,
    trained: Vec<Vec<String>>,
    predicted: Vec<Vec<String>>,
}

impl TrainerAdapter for ScriptedTrainer {
    type Model = usize;

    fn train(&mut self, list: &[String]) -> Result<usize, BoxError> {
        self.trained.push(list.to_vec());
        Ok(list.len())
    }

    fn predict(&mut self, model: &usize, ids: &[String]) -> Result<Vec<PredictionStack>, BoxError> {
        self.predicted.push(ids.to_vec());
        let table = &self.tables[(model - 2) / 2];
        ids.iter()
            .map(|id| {
                let p = table.get(id.as_str()).copied().unwrap_or(0.01);
                PredictionStack::from_vec(id.clone(), StackDims::new(1, 1, 1, 1), vec![p])
                    .map_err(Into::into)
            })
            .collect()
    }

    fn evaluate(&mut self, model: &usize) -> Result<serde_json::Value, BoxError> {
        Ok(serde_json::json!({ "train_len": model }))
    }
}

fn record(iteration: usize, selected: &[&str], counts: [usize; 5]) -> LedgerRecord {
    let [newly, unique, cumulative, labeled, train_len] = counts;
    LedgerRecord {
        iteration,
        selected_ids: selected.iter().map(|s| s.to_string()).collect(),
        newly_labeled_count: newly,
        unique_image_count: unique,
        cumulative_selected: cumulative,
        labeled_total: labeled,
        training_list_len: train_len,
        metrics: serde_json::json!({ "train_len": train_len }),
    }
}

fn strings(ids: &[&str]) -> Vec<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

fn trace(
    selection_pool: SelectionPool,
    tables: Vec<BTreeMap<&'static str, f32>>,
) -> (ScriptedTrainer, alquery::model::LoopState) {
    let pool: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
    let mut config = LoopConfig::new(InitialLabeled::Ids(strings(&["p0", "p1"])), 2, 3);
    config.scoring = ScoringConfig::new(ScoringFunction::Entropy, Aggregation::Max);
    config.selection_pool = selection_pool;
    let mut trainer = ScriptedTrainer {
        tables,
        trained: Vec::new(),
        predicted: Vec::new(),
    };
    let state = run_loop(&pool, None, &config, &mut trainer).unwrap();
    (trainer, state)
}

fn loop_hand_trace() -> Outcome {
    let mut problems = Vec::new();
    let mut expect = |what: &str, ok: bool| {
        if !ok {
            problems.push(what.to_string());
        }
    };

    // Unlabeled-only: entropy falls with distance from 0.5, so each round
    // takes the two unlabeled ids nearest 0.5.
    let table: BTreeMap<&str, f32> = [
        ("p0", 0.5),
        ("p1", 0.5),
        ("p2", 0.1),
        ("p3", 0.45),
        ("p4", 0.2),
        ("p5", 0.4),
        ("p6", 0.35),
        ("p7", 0.05),
        ("p8", 0.3),
        ("p9", 0.25),
    ]
    .into();
    let (trainer, state) = trace(SelectionPool::UnlabeledOnly, vec![table.clone(); 3]);
    let want = vec![
        record(1, &["p3", "p5"], [2, 2, 2, 4, 4]),
        record(2, &["p6", "p8"], [2, 4, 4, 6, 6]),
        record(3, &["p9", "p4"], [2, 6, 6, 8, 8]),
    ];
    expect("unlabeled-only ledger", state.ledger == want);
    expect(
        "unlabeled-only initial metrics",
        state.initial_metrics == Some(serde_json::json!({ "train_len": 2 })),
    );
    expect(
        "unlabeled-only predictions",
        trainer.predicted
            == [
                strings(&["p2", "p3", "p4", "p5", "p6", "p7", "p8", "p9"]),
                strings(&["p2", "p4", "p6", "p7", "p8", "p9"]),
                strings(&["p2", "p4", "p7", "p9"]),
            ],
    );
    expect(
        "unlabeled-only training lists",
        trainer.trained.last() == Some(&strings(&["p0", "p1", "p3", "p5", "p6", "p8", "p9", "p4"])),
    );
    expect(
        "unlabeled-only final partition",
        state.unlabeled_ids == ["p2", "p7"].map(String::from).into(),
    );

    // Union: round 1 re-picks p0 and takes p5, round 2 re-picks p5 and takes
    // p7, round 3 re-picks p1 and p0.
    let scripted =
        |pairs: &[(&'static str, f32)]| pairs.iter().copied().collect::<BTreeMap<_, _>>();
    let tables = vec![
        scripted(&[("p0", 0.5), ("p5", 0.4), ("p1", 0.2)]),
        scripted(&[("p5", 0.45), ("p7", 0.4), ("p0", 0.3)]),
        scripted(&[("p1", 0.5), ("p0", 0.45), ("p9", 0.3)]),
    ];
    let (trainer, state) = trace(SelectionPool::UnionLabeledUnlabeled, tables);
    let want = vec![
        record(1, &["p0", "p5"], [1, 1, 2, 3, 4]),
        record(2, &["p5", "p7"], [1, 2, 4, 4, 6]),
        record(3, &["p1", "p0"], [0, 2, 6, 4, 8]),
    ];
    expect("union ledger", state.ledger == want);
    let everyone: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
    expect(
        "union predictions",
        trainer.predicted.iter().all(|ids| *ids == everyone),
    );
    expect(
        "union training lists",
        trainer.trained
            == [
                strings(&["p0", "p1"]),
                strings(&["p0", "p1", "p0", "p5"]),
                strings(&["p0", "p1", "p0", "p5", "p5", "p7"]),
                strings(&["p0", "p1", "p0", "p5", "p5", "p7", "p1", "p0"]),
            ],
    );
    let costs: Vec<(usize, usize)> = dedup_accounting(&state)
        .iter()
        .map(|c| (c.labeling_cost, c.training_repeats))
        .collect();
    expect(
        "union labeling cost and repeats",
        costs == [(1, 1), (1, 1), (0, 2)],
    );
    expect(
        "unique <= cumulative, strict after a repeat",
        state
            .ledger
            .iter()
            .all(|r| r.unique_image_count < r.cumulative_selected),
    );
    expect("state invariants", state.check_invariants().is_ok());

    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "both selection pools reproduce the hand-traced ledger".to_string()
        } else {
            format!("mismatches: {problems:?}")
        },
    )
}

// ---------------------------------------------------------------------------
// 7 and 8. Synthetic directional checks.

const SYNTH_POOL: usize = 20_000;
const SYNTH_CLASSES: usize = 3;
const RARE_CLASS: usize = 2;
const PREVALENCE: [f64; SYNTH_CLASSES] = [0.3, 0.3, 0.05];
const REDUNDANCY: usize = 5;
const MEMBERS: usize = 6;
const NOISE: f64 = 1.0;
const TEST_SIZE: usize = 10_000;
const AL_INITIAL: usize = 100;
const AL_BATCH: usize = 300;
const AL_ITERATIONS: usize = 3;
const REPETITIONS: u64 = 10;
const DIVERSITY_BATCH: usize = 500;

fn synth_pool(seed: u64) -> Arc<SynthPool> {
    let mut spec = SynthPoolSpec::new(SYNTH_POOL, SYNTH_CLASSES);
    spec.prevalence = PREVALENCE.to_vec();
    spec.redundancy = REDUNDANCY;
    spec.members = MEMBERS;
    spec.noise = NOISE;
    spec.test_size = TEST_SIZE;
    spec.seed = seed;
    Arc::new(generate_pool(&spec).unwrap())
}

fn rare_class_ap(pool: &Arc<SynthPool>, strategy: Strategy, seed: u64) -> f64 {
    let mut config = LoopConfig::new(InitialLabeled::Count(AL_INITIAL), AL_BATCH, AL_ITERATIONS);
    config.scoring = ScoringConfig::new(ScoringFunction::MutualInformation, Aggregation::Max);
    config.sampling.strategy = strategy;
    config.seed = seed;
    let options = TrainerOptions {
        seed,
        ..TrainerOptions::default()
    };
    let mut trainer = ToyTrainer::new(pool.clone(), options);
    let state = run_loop(&pool.ids, Some(&pool.embeddings), &config, &mut trainer).unwrap();
    state.ledger.last().unwrap().metrics["ap"][RARE_CLASS]
        .as_f64()
        .unwrap()
}

fn al_beats_random() -> Outcome {
    let mut wins = 0;
    let mut gains = Vec::new();
    for rep in 0..REPETITIONS {
        let pool = synth_pool(100 + rep);
        let al = rare_class_ap(&pool, Strategy::TopN, rep);
        let random = rare_class_ap(&pool, Strategy::Random, rep);
        wins += usize::from(al >= random);
        gains.push(al - random);
    }
    let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
    outcome(
        wins >= 8 && mean_gain > 0.0,
        format!(
            "rare-class AP: AL >= random in {wins}/{REPETITIONS} pairs, mean gain {mean_gain:+.4} (need >= 8 and > 0); gains {:.3?}",
            gains
        ),
    )
}

fn distinct_scenes(pool: &SynthPool, ids: &[String]) -> usize {
    let index: std::collections::HashMap<&str, usize> = pool
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    ids.iter()
        .map(|id| pool.scene[index[id.as_str()]])
        .collect::<HashSet<_>>()
        .len()
}

fn diversity_covers_scenes() -> Outcome {
    let mut totals = [0usize; 3];
    for seed in 0..REPETITIONS {
        let pool = synth_pool(200 + seed);
        let options = TrainerOptions {
            seed,
            ..TrainerOptions::default()
        };
        let mut trainer = ToyTrainer::new(pool.clone(), options);
        let labeled: Vec<usize> = (0..pool.len()).step_by(pool.len() / AL_INITIAL).collect();
        let model = trainer.fit(&labeled);
        let config = ScoringConfig::new(ScoringFunction::MutualInformation, Aggregation::Max);
        let scores: Vec<ScoredImage> = (0..pool.len())
            .map(|i| score_image(ScoreInput::Stack(&trainer.stack(&model, i)), &config).unwrap())
            .collect();
        for (total, strategy) in
            totals
                .iter_mut()
                .zip([Strategy::TopN, Strategy::Coreset, Strategy::Kmpp])
        {
            let mut sampling = SamplingConfig::new(strategy, DIVERSITY_BATCH);
            sampling.seed = seed;
            let batch = select(&scores, Some(&pool.embeddings), &sampling).unwrap();
            *total += distinct_scenes(&pool, &batch.selected);
        }
    }
    let mean = totals.map(|t| t as f64 / REPETITIONS as f64);
    let (coreset, kmpp) = (mean[1] / mean[0], mean[2] / mean[0]);
    outcome(
        coreset >= 1.5 && kmpp >= 1.5,
        format!(
            "mean distinct scenes in {DIVERSITY_BATCH}: top-n {:.1}, coreset {:.1} ({coreset:.2}x), kmpp {:.1} ({kmpp:.2}x), need >= 1.5x",
            mean[0], mean[1], mean[2]
        ),
    )
}

// ---------------------------------------------------------------------------
// 9 and 10. End-to-end CLI runs.

fn cli() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_alquery"));
    cmd.env_remove("ALQUERY_WORKERS").stdout(Stdio::null());
    cmd
}

fn run(mut cmd: Command) -> Result<(), String> {
    let out = cmd
        .stderr(Stdio::piped())
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{cmd:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

/// Runs to completion and returns the peak resident set size in bytes.
fn run_measuring_rss(mut cmd: Command) -> Result<u64, String> {
    let child = cmd
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| e.to_string())?;
    let pid = child.id() as libc::pid_t;
    let mut status = 0;
    // SAFETY: rusage is plain data; wait4 fills it for the child we own.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let reaped = unsafe { libc::wait4(pid, &mut status, 0, &mut usage) };
    if reaped != pid {
        return Err(format!("wait4: {}", std::io::Error::last_os_error()));
    }
    if !(libc::WIFEXITED(status) && libc::WEXITSTATUS(status) == 0) {
        return Err(format!("{cmd:?} exited with status {status}"));
    }
    Ok(usage.ru_maxrss as u64 * 1024)
}

const SCALE_SMALL: usize = 10_000;
const SCALE_LARGE: usize = 100_000;
const TARGET_THROUGHPUT: f64 = 1000.0;
/// The throughput target is stated for an 8-core desktop.
const REFERENCE_CORES: usize = 8;

struct ScaleRun {
    rss: u64,
    images_per_second: f64,
}

fn scale_run(root: &Path, images: usize, workers: usize) -> Result<ScaleRun, String> {
    let dir = root.join(format!("pool{images}"));
    let mut synth = cli();
    synth.args([
        "synth",
        "--classes",
        "5",
        "--height",
        "64",
        "--width",
        "64",
        "--members",
        "6",
    ]);
    synth.args([
        "--test-size",
        "100",
        "--seed",
        "9",
        "--initial-labeled",
        "1000",
    ]);
    synth
        .arg("--pool-size")
        .arg(images.to_string())
        .arg("-o")
        .arg(&dir);
    run(synth)?;
    let mut score = cli();
    score.args([
        "score",
        "--function",
        "mi",
        "--agg",
        "max",
        "--workers",
        &workers.to_string(),
    ]);
    score
        .arg("--manifest")
        .arg(dir.join("manifest.jsonl"))
        .arg("-o")
        .arg(root.join(format!("scores{images}.tsv")));
    let start = Instant::now();
    let rss = run_measuring_rss(score)?;
    let images_per_second = images as f64 / start.elapsed().as_secs_f64();
    fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
    Ok(ScaleRun {
        rss,
        images_per_second,
    })
}

fn streaming_scale() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers = cores.min(REFERENCE_CORES);
    let runs = scale_run(root.path(), SCALE_SMALL, workers)
        .and_then(|small| Ok((small, scale_run(root.path(), SCALE_LARGE, workers)?)));
    let (small, large) = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e),
    };
    let ratio = large.rss as f64 / small.rss as f64;
    // Scoring is embarrassingly parallel, so with fewer cores than the
    // reference machine the rate is scaled by the core ratio.
    let projected = large.images_per_second * REFERENCE_CORES as f64 / workers as f64;
    let mb = |b: u64| b as f64 / (1024.0 * 1024.0);
    outcome(
        ratio < 1.25 && projected >= TARGET_THROUGHPUT,
        format!(
            "peak RSS {:.1} MiB ({SCALE_SMALL}) vs {:.1} MiB ({SCALE_LARGE}), ratio {ratio:.3} (need < 1.25); {:.0} img/s on {workers} of {cores} cores, {projected:.0} img/s projected to {REFERENCE_CORES} cores (need >= {TARGET_THROUGHPUT})",
            mb(small.rss),
            mb(large.rss),
            large.images_per_second
        ),
    )
}

/// Relative paths and contents of every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn cli_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let mut differing = Vec::new();
    let mut compared = 0;
    let mut errors = Vec::new();

    let synth = |out: &Path| {
        let mut c = cli();
        c.args([
            "synth",
            "--pool-size",
            "300",
            "--classes",
            "3",
            "--height",
            "8",
            "--width",
            "8",
            "--members",
            "4",
        ]);
        c.args([
            "--redundancy",
            "3",
            "--test-size",
            "50",
            "--seed",
            "5",
            "-o",
        ])
        .arg(out);
        c
    };
    let (pool_a, pool_b) = (root.join("pool_a"), root.join("pool_b"));
    for cmd in [synth(&pool_a), synth(&pool_b)] {
        if let Err(e) = run(cmd) {
            return outcome(false, e);
        }
    }
    let (a, b) = (snapshot(&pool_a), snapshot(&pool_b));
    compared += a.len();
    if a != b {
        differing.push("synth pool directory".to_string());
    }

    let manifest = pool_a.join("manifest.jsonl");
    let embeddings = pool_a.join("embeddings.alem");
    // Each job runs twice; the second copy gets a different worker count
    // where that is a knob, since it must not show up in the output.
    let mut jobs: Vec<(String, Vec<Vec<String>>)> = Vec::new();
    let scoring = [
        ("mi", "max", "none"),
        ("entropy", "avg", "none"),
        ("grad", "max", "max-variance"),
        ("det-ent", "sum", "none"),
    ];
    for (function, agg, reduce) in scoring {
        let name = format!("scores-{function}");
        let runs = ["1", "3"]
            .iter()
            .map(|workers| {
                let mut args = strings(&[
                    "score",
                    "--function",
                    function,
                    "--agg",
                    agg,
                    "--grad-reduce",
                    reduce,
                    "--workers",
                    workers,
                ]);
                args.push("--manifest".into());
                args.push(manifest.display().to_string());
                args
            })
            .collect();
        jobs.push((name, runs));
    }
    let scores = root.join("scores-mi-0.tsv");
    let selections = [
        vec!["top-n"],
        vec!["top-third"],
        vec!["top-half-bottom-half"],
        vec!["bottom-n"],
        vec!["random", "--seed", "4"],
        vec!["kmpp", "--seed", "4", "--metric", "cosine"],
        vec!["coreset"],
        vec!["coreset", "--coreset-start", "random", "--seed", "2"],
        vec!["omp", "--shortlist", "120"],
        vec!["round-robin", "--classes", "0,2"],
    ];
    for (i, extra) in selections.iter().enumerate() {
        let mut args = strings(&["select", "--n", "25", "--strategy"]);
        args.extend(strings(extra));
        args.extend(["--scores".to_string(), scores.display().to_string()]);
        args.extend(["--embeddings".to_string(), embeddings.display().to_string()]);
        jobs.push((format!("select-{i}-{}", extra[0]), vec![args.clone(), args]));
    }
    let loops = [
        vec![
            "--strategy",
            "top-n",
            "--iterations",
            "2",
            "--batch-size",
            "20",
        ],
        vec![
            "--strategy",
            "coreset",
            "--iterations",
            "2",
            "--batch-size",
            "20",
            "--seed",
            "3",
        ],
        vec![
            "--strategy",
            "random",
            "--selection-pool",
            "union",
            "--iterations",
            "3",
            "--batch-size",
            "30",
            "--initial",
            "40",
        ],
    ];
    for (i, extra) in loops.iter().enumerate() {
        let mut args = strings(&["loop", "--pool"]);
        args.push(pool_a.display().to_string());
        args.extend(strings(extra));
        jobs.push((format!("ledger-{i}"), vec![args.clone(), args]));
    }

    for (name, runs) in &jobs {
        let outputs: Vec<PathBuf> = (0..runs.len())
            .map(|k| root.join(format!("{name}-{k}.tsv")))
            .collect();
        for (args, out) in runs.iter().zip(&outputs) {
            let mut c = cli();
            c.args(args).arg("-o").arg(out);
            if let Err(e) = run(c) {
                errors.push(e);
            }
        }
        let bytes: Vec<Vec<u8>> = outputs
            .iter()
            .map(|p| fs::read(p).unwrap_or_default())
            .collect();
        compared += 1;
        if bytes.iter().any(|b| b.is_empty() || *b != bytes[0]) {
            differing.push(name.clone());
        }
    }
    if !errors.is_empty() {
        return outcome(false, errors.join("; "));
    }
    outcome(
        differing.is_empty(),
        format!(
            "{compared} outputs from {} commands compared, differing: {differing:?}",
            2 * jobs.len() + 2
        ),
    )
}
