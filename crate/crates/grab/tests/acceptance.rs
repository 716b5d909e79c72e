//! Acceptance suite. Each test prints one `ACn PASS|FAIL` line before
//! asserting, so `cargo test --test acceptance -- --nocapture` doubles as a
//! report.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use grab::cli::run_config;
use grab::config::ExperimentConfig;
use grab::data::gen_blobs;
use grab::trainer::{run_experiment, OrderingSpec, RunConfig, TrainError};
use grab_core::{
    accumulate, deterministic_sign, probabilistic_sign, Accumulator, AccumulatorTree, Balancer,
    Example, GradientMatrix, KernelConfig, ModelKind, ModelParams, OptimConfig, Permutation, Sign,
    Sorter, Variant,
};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

fn verdict(id: u32, ok: bool, detail: impl std::fmt::Display) {
    println!("AC{id:<2} {}  {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "AC{id} failed: {detail}");
}

fn gaussian(rng: &mut StdRng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect()
}

fn centered(mut vs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = vs.len() as f64;
    for j in 0..vs[0].len() {
        let m = vs.iter().map(|v| v[j]).sum::<f64>() / n;
        vs.iter_mut().for_each(|v| v[j] -= m);
    }
    vs
}

/// Prefix-sum discrepancy computed column by column from scratch.
fn oracle_discrepancy(vs: &[Vec<f64>], order: &[usize]) -> f64 {
    let n = order.len() as f64;
    let mut worst = 0.0f64;
    for j in 0..vs[0].len() {
        let mean = order.iter().map(|&i| vs[i][j]).sum::<f64>() / n;
        let mut run = 0.0;
        for &i in order {
            run += vs[i][j] - mean;
            worst = worst.max(run.abs());
        }
    }
    worst
}

/// One epoch in the sorter's order; ragged chunks are split into powers of
/// two so every variant accepts them.
fn run_epoch(s: &mut Sorter, vs: &[Vec<f64>], batch: usize) -> Permutation {
    let order = s.current_order().clone();
    for chunk in order.as_slice().chunks(batch) {
        let mut rest = chunk;
        while !rest.is_empty() {
            let take = 1 << (usize::BITS - 1 - rest.len().leading_zeros());
            let (head, tail) = rest.split_at(take);
            let rows: Vec<&[f64]> = head.iter().map(|&i| vs[i].as_slice()).collect();
            s.step(&GradientMatrix::from_rows(head.to_vec(), &rows).unwrap()).unwrap();
            rest = tail;
        }
    }
    s.next_epoch().unwrap()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 0 {
        0.5 * (xs[m - 1] + xs[m])
    } else {
        xs[m]
    }
}

#[test]
fn ac01_permutation_validity() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let mut bad = Vec::new();
    let mut epochs = 0;
    for variant in Variant::ALL {
        for run in 0..20u64 {
            let n = rng.gen_range(1..=512);
            let d = rng.gen_range(1..=8);
            let batch = 1 << rng.gen_range(0..7);
            let depth = variant.is_recursive().then(|| rng.gen_range(1..=4));
            let kernel = if run % 2 == 0 {
                KernelConfig::deterministic()
            } else {
                KernelConfig::probabilistic(None, run)
            };
            let mut s = Sorter::new(variant, n, d, kernel, depth, run).unwrap();
            for _ in 0..50 {
                let vs = gaussian(&mut rng, n, d);
                let p = run_epoch(&mut s, &vs, batch);
                epochs += 1;
                if p.len() != n || !Permutation::is_bijection(p.as_slice()) {
                    bad.push((variant, n));
                }
            }
        }
    }
    let elapsed = started.elapsed();
    verdict(
        1,
        bad.is_empty() && elapsed < Duration::from_secs(30),
        format!("{epochs} epochs, {} non-bijections, {elapsed:.2?}", bad.len()),
    );
}

#[test]
fn ac02_deterministic_energy_bound() {
    let mut worst = 0.0f64;
    for (seed, d) in [(0u64, 2usize), (1, 8), (2, 32), (3, 128)] {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut acc = Accumulator::new(d);
        let mut energy = 0.0;
        for _ in 0..10_000 {
            let scale = rng.gen_range(0.01..10.0);
            let v: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            energy += v.iter().map(|x| x * x).sum::<f64>();
            let s = deterministic_sign(&acc, &v).unwrap();
            accumulate(&mut acc, &v, s).unwrap();
            worst = worst.max(acc.norm_sq() / energy);
        }
    }
    verdict(2, worst <= 1.0 + 1e-6, format!("max ||a_t||^2 / sum ||v_i||^2 = {worst:.3e}"));
}

#[test]
fn ac03_probabilistic_boundaries() {
    let c = 2.5;
    let mut rng = StdRng::seed_from_u64(3);
    let v = [1.0, 0.0];
    let at = |ip: f64| Accumulator::from_values(vec![ip, 7.0]);
    let forced = (0..1000).all(|_| {
        probabilistic_sign(&at(c), &v, c, &mut rng).unwrap().sign == Sign::Minus
            && probabilistic_sign(&at(-c), &v, c, &mut rng).unwrap().sign == Sign::Plus
    });
    let draws = 100_000;
    let plus = (0..draws)
        .filter(|_| probabilistic_sign(&at(0.0), &v, c, &mut rng).unwrap().sign == Sign::Plus)
        .count();
    let freq = plus as f64 / draws as f64;
    verdict(
        3,
        forced && (freq - 0.5).abs() <= 0.01,
        format!("boundaries forced: {forced}, P(+|<a,v>=0) = {freq:.4}"),
    );
}

#[test]
fn ac04_herding_micro_benchmark() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(4);
    let (n, d) = (256, 16);
    let vs = centered(gaussian(&mut rng, n, d));
    let mut s = Sorter::new(Variant::MeanBalance, n, d, KernelConfig::deterministic(), None, 4).unwrap();
    let mut order = s.current_order().clone();
    for _ in 0..10 {
        order = run_epoch(&mut s, &vs, 16);
    }
    let ours = oracle_discrepancy(&vs, order.as_slice());
    let baseline = (0..100)
        .map(|_| {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(&mut rng);
            oracle_discrepancy(&vs, &o)
        })
        .sum::<f64>()
        / 100.0;
    let elapsed = started.elapsed();
    verdict(
        4,
        ours <= 0.5 * baseline && elapsed < Duration::from_secs(10),
        format!("mean balance {ours:.3} vs random {baseline:.3} (ratio {:.3}), {elapsed:.2?}", ours / baseline),
    );
}

#[test]
fn ac05_probabilistic_balancing_quality() {
    let started = Instant::now();
    let (n, d, c) = (4096, 32, 30.0);
    let mut ours = Vec::new();
    let mut random = Vec::new();
    for seed in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(500 + seed);
        let vs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let u: [f64; 32] = rng.sample(UnitSphereN);
                u.to_vec()
            })
            .collect();
        let mut bal = Balancer::new(KernelConfig::probabilistic(Some(c), seed)).unwrap();
        let mut acc = Accumulator::new(d);
        let mut coin = Accumulator::new(d);
        for v in &vs {
            let s = bal.sign(&acc, v).unwrap();
            accumulate(&mut acc, v, s).unwrap();
            let r = if rng.gen::<bool>() { Sign::Plus } else { Sign::Minus };
            accumulate(&mut coin, v, r).unwrap();
        }
        ours.push(acc.norm_inf());
        random.push(coin.norm_inf());
    }
    let (m_ours, m_rand) = (median(ours), median(random));
    let ratio = m_ours / m_rand;
    let elapsed = started.elapsed();
    verdict(
        5,
        ratio <= 0.25 && elapsed < Duration::from_secs(30),
        format!("median ||a||_inf {m_ours:.3} vs random signs {m_rand:.3} (ratio {ratio:.3}), {elapsed:.2?}"),
    );
}

/// Uniform direction in 32 dimensions.
struct UnitSphereN;

impl rand::distributions::Distribution<[f64; 32]> for UnitSphereN {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 32] {
        let mut u = [0.0; 32];
        u.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        u
    }
}

/// Visits every permutation of `0..n` (Heap's algorithm).
fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    f(&a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn ac06_small_instance_oracle() {
    let started = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..5u64 {
        let mut rng = StdRng::seed_from_u64(60 + seed);
        let vs = centered(gaussian(&mut rng, 8, 2));
        let mut best = f64::INFINITY;
        let mut count = 0;
        for_each_permutation(8, |o| {
            best = best.min(oracle_discrepancy(&vs, o));
            count += 1;
        });
        assert_eq!(count, 40_320);
        let mut s = Sorter::new(Variant::MeanBalance, 8, 2, KernelConfig::deterministic(), None, seed).unwrap();
        let mut order = s.current_order().clone();
        for _ in 0..5 {
            order = run_epoch(&mut s, &vs, 1);
        }
        let ours = oracle_discrepancy(&vs, order.as_slice());
        ok &= ours <= 2.0 * best;
        lines.push(format!("{:.2}x", ours / best));
    }
    let elapsed = started.elapsed();
    verdict(
        6,
        ok && elapsed < Duration::from_secs(5),
        format!("mean balance / optimum per set: {}, {elapsed:.2?}", lines.join(" ")),
    );
}

#[test]
fn ac07_desk_scale_direction() {
    let started = Instant::now();
    let ds = gen_blobs(1024, 20, 10, 3.0, 0).unwrap();
    let (train, test) = ds.split(5.0 / 6.0, 0).unwrap();
    let model = ModelKind::MultinomialLogistic { inputs: 20, classes: 10 };
    let optim = OptimConfig {
        learning_rate: 0.001,
        momentum: 0.9,
        weight_decay: 0.01,
        batch_size: 16,
        epochs: 30,
    };
    let seeds = [0u64, 7, 42];
    let final_loss = |variant: Variant| -> f64 {
        seeds
            .iter()
            .map(|&seed| {
                let cfg = RunConfig { model, ordering: OrderingSpec::new(variant, 3), optim, seed };
                run_experiment(&train, Some(&test), &cfg).unwrap().last().unwrap().train_loss
            })
            .sum::<f64>()
            / seeds.len() as f64
    };
    let losses: Vec<(Variant, f64)> = Variant::ALL.iter().map(|&v| (v, final_loss(v))).collect();
    let rr = losses[0].1;
    let ok = losses.iter().all(|&(v, l)| match v {
        Variant::RandomReshuffle => true,
        Variant::MeanBalance => l <= rr,
        _ => l <= rr + 0.002,
    });
    let elapsed = started.elapsed();
    let table: Vec<String> = losses.iter().map(|(v, l)| format!("{}={l:.5}", v.name())).collect();
    verdict(7, ok && elapsed < Duration::from_secs(180), format!("{}, {elapsed:.1?}", table.join(" ")));
}

#[test]
fn ac08_recursive_slot_accounting() {
    let mut ok = true;
    for depth in 1..=6 {
        let tree = AccumulatorTree::new(depth, 3).unwrap();
        let want = (1 << (depth + 1)) - 1;
        ok &= tree.node_count() == want && tree.nodes().len() == want;
        for v in [Variant::RecursiveBalance, Variant::RecursivePairBalance] {
            let s = Sorter::new(v, 32, 3, KernelConfig::deterministic(), Some(depth), 0).unwrap();
            ok &= s.accumulator_slots() == want && s.tree().unwrap().nodes().len() == want;
        }
    }
    verdict(8, ok, "node count 2^(D+1)-1 for D in 1..=6");
}

#[test]
fn ac09_batch_balance_invariance() {
    let mut rng = StdRng::seed_from_u64(9);
    let mut mismatches = 0;
    for trial in 0..200u64 {
        let n = rng.gen_range(2..64);
        let d = rng.gen_range(1..6);
        let batch = rng.gen_range(1..=n);
        let vs = gaussian(&mut rng, n, d);
        let kernel = if trial % 2 == 0 {
            KernelConfig::deterministic()
        } else {
            KernelConfig::probabilistic(None, trial)
        };
        let mut a = Sorter::new(Variant::BatchBalance, n, d, kernel, None, trial).unwrap();
        let mut b = a.clone();
        let order = a.current_order().clone();
        for chunk in order.as_slice().chunks(batch) {
            let mut shuffled = chunk.to_vec();
            shuffled.shuffle(&mut rng);
            for (s, ids) in [(&mut a, chunk.to_vec()), (&mut b, shuffled)] {
                let rows: Vec<&[f64]> = ids.iter().map(|&i| vs[i].as_slice()).collect();
                s.step(&GradientMatrix::from_rows(ids, &rows).unwrap()).unwrap();
            }
        }
        let map = |s: &Sorter| -> HashMap<usize, Sign> {
            s.placement_signs().iter().enumerate().filter_map(|(i, x)| x.map(|x| (i, x))).collect()
        };
        if map(&a) != map(&b) || map(&a).len() != n {
            mismatches += 1;
        }
    }
    verdict(9, mismatches == 0, format!("{mismatches} of 200 shuffled-batch trials changed a sign"));
}

#[test]
fn ac10_recursive_pair_guard() {
    let ds = gen_blobs(64, 3, 2, 3.0, 0).unwrap();
    let (train, _) = ds.split(1.0, 0).unwrap();
    let run = |batch_size: usize| {
        let cfg = RunConfig {
            model: ModelKind::BinaryLogistic { inputs: 3 },
            ordering: OrderingSpec::new(Variant::RecursivePairBalance, 3),
            optim: OptimConfig { batch_size, epochs: 2, ..OptimConfig::default() },
            seed: 0,
        };
        run_experiment(&train, None, &cfg)
    };
    let rejected = match run(12) {
        Err(TrainError::Core(e @ grab_core::Error::BatchNotPowerOfTwo { batch: 12 })) => {
            e.to_string().contains("power-of-2")
        }
        _ => false,
    };
    let mut s = Sorter::new(Variant::RecursivePairBalance, 64, 3, KernelConfig::deterministic(), Some(3), 0)
        .unwrap();
    let rows = vec![vec![1.0; 3]; 12];
    let direct = s.step(&GradientMatrix::from_rows((0..12).collect(), &rows).unwrap()).is_err();
    let accepted = [2, 4, 8, 16].iter().all(|&b| run(b).is_ok());
    verdict(
        10,
        rejected && direct && accepted,
        format!("batch 12 rejected: {}, sizes 2/4/8/16 accepted: {accepted}", rejected && direct),
    );
}

#[test]
fn ac11_gradient_oracle() {
    let kinds = [
        ModelKind::LinearRegression { inputs: 6 },
        ModelKind::BinaryLogistic { inputs: 6 },
        ModelKind::MultinomialLogistic { inputs: 5, classes: 4 },
        ModelKind::Mlp { inputs: 4, hidden: 5, classes: 3 },
    ];
    let mut rng = StdRng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for kind in kinds {
        for i in 0..100 {
            let theta: Vec<f64> =
                (0..kind.param_dim()).map(|_| 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
            let params = ModelParams::from_vec(&kind, theta.clone()).unwrap();
            let x = (0..kind.inputs()).map(|_| rng.sample(StandardNormal)).collect();
            let y = match kind.classes() {
                Some(c) => rng.gen_range(0..c) as f64,
                None => rng.sample(StandardNormal),
            };
            let batch = [Example { x, y, id: i }];
            let analytic = kind.per_sample_grads(&params, &batch).unwrap();
            let loss = |t: &[f64]| {
                kind.loss(&ModelParams::from_vec(&kind, t.to_vec()).unwrap(), &batch).unwrap().0
            };
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..theta.len() {
                let h = 1e-5 * theta[j].abs().max(1.0);
                let mut t = theta.clone();
                t[j] += h;
                let up = loss(&t);
                t[j] -= 2.0 * h;
                let fd = (up - loss(&t)) / (2.0 * h);
                num += (analytic.row(0)[j] - fd).powi(2);
                den += fd * fd;
            }
            worst = worst.max(num.sqrt() / den.sqrt().max(1e-12));
        }
    }
    verdict(11, worst <= 1e-4, format!("worst relative error {worst:.2e} over 400 points"));
}

fn strip_wall_time(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "wall_seconds").unwrap();
    std::iter::once(csv.lines().next().unwrap().to_string())
        .chain(lines.map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f[col] = "";
            f.join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

fn collect_results(root: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for v in fs::read_dir(root.join("results")).unwrap() {
        let v = v.unwrap().path();
        for f in fs::read_dir(&v).unwrap() {
            let f = f.unwrap().path();
            let rel = f.strip_prefix(root).unwrap().display().to_string();
            out.push((rel, strip_wall_time(&fs::read_to_string(&f).unwrap())));
        }
    }
    out.sort();
    out
}

#[test]
fn ac12_end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[data]\nkind = blobs\nn = 200\nfeature_dim = 5\nclasses = 4\n\n\
                [ordering]\nvariants = RR, MeanBalance, PairBalance, BatchBalance, RecursiveBalance, RecursivePairBalance\n\
                kernel = probabilistic\ndepth = 3\n\n\
                [optim]\nlearning_rate = 0.01\nepochs = 4\n\n\
                [experiment]\nseeds = 0, 7, 42\nworkers = 4\n";
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let mut cfg: ExperimentConfig = text.parse().unwrap();
        cfg.experiment.output_dir = dir.path().join(name);
        run_config(&cfg).unwrap();
        runs.push(collect_results(&cfg.experiment.output_dir));
    }
    let files = runs[0].len();
    verdict(
        12,
        files == 18 && runs[0] == runs[1],
        format!("{files} result files, identical modulo wall time: {}", runs[0] == runs[1]),
    );
}
