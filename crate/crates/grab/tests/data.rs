use std::fs;

use grab::data::{gen_blobs, gen_linreg, load_csv, save_csv, sidecar_path, DataError, Task};
use grab::trainer::{run_experiment, OrderingSpec, RunConfig};
use grab_core::{ModelKind, OptimConfig, Variant};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_round_trip_is_exact(n in 1usize..60, d in 1usize..6, k in 2usize..5, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blobs.csv");
        let ds = gen_blobs(n.max(k), d, k, 2.5, seed).unwrap();
        save_csv(&ds, &path).unwrap();
        prop_assert_eq!(load_csv(&path).unwrap(), ds);

        let (reg, _) = gen_linreg(n, d, 0.3, seed).unwrap();
        let path = dir.path().join("lin.csv");
        save_csv(&reg, &path).unwrap();
        prop_assert_eq!(load_csv(&path).unwrap(), reg);
    }
}

#[test]
fn malformed_row_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let mut text = String::from("y,x0,x1\n");
    for i in 0..15 {
        text.push_str(&format!("{},{}.5,-1\n", i % 2, i));
    }
    text.push_str("1,2.0\n");
    text.push_str("0,1,1\n");
    fs::write(&path, text).unwrap();
    match load_csv(&path) {
        Err(DataError::Malformed { line, .. }) => assert_eq!(line, 17),
        other => panic!("expected malformed-row error, got {other:?}"),
    }

    fs::write(&path, "y,x0\n1,abc\n").unwrap();
    let err = load_csv(&path).unwrap_err();
    assert!(matches!(err, DataError::Malformed { line: 2, .. }), "{err}");
}

#[test]
fn empty_inputs_have_a_clear_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    fs::write(&path, "").unwrap();
    assert!(matches!(load_csv(&path), Err(DataError::NoExamples)));
    fs::write(&path, "y,x0,x1\n").unwrap();
    let err = load_csv(&path).unwrap_err();
    assert_eq!(err.to_string(), "no examples");
}

#[test]
fn task_is_inferred_without_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let ds = gen_blobs(40, 3, 4, 3.0, 9).unwrap();
    save_csv(&ds, &path).unwrap();
    fs::remove_file(sidecar_path(&path)).unwrap();
    assert_eq!(load_csv(&path).unwrap().meta.task, Task::Classification { classes: 4 });
}

fn blob_accuracy(separation: f64) -> f64 {
    let ds = gen_blobs(600, 5, 3, separation, 11).unwrap();
    let (train, test) = ds.split(5.0 / 6.0, 0).unwrap();
    let cfg = RunConfig {
        model: ModelKind::MultinomialLogistic { inputs: 5, classes: 3 },
        ordering: OrderingSpec::new(Variant::RandomReshuffle, 1),
        optim: OptimConfig { learning_rate: 0.05, epochs: 15, ..OptimConfig::default() },
        seed: 0,
    };
    let reports = run_experiment(&train, Some(&test), &cfg).unwrap();
    reports.last().unwrap().test_accuracy.unwrap()
}

#[test]
fn blob_separation_controls_difficulty() {
    let easy = blob_accuracy(10.0);
    let hard = blob_accuracy(0.0);
    assert!(easy >= 0.95, "separation 10 accuracy {easy}");
    assert!(hard <= 0.5, "separation 0 accuracy {hard}");
}

/// Solves the least-squares problem with a bias column through the normal
/// equations and Gaussian elimination with partial pivoting.
fn least_squares(xs: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
    let p = xs[0].len() + 1;
    let mut a = vec![vec![0.0; p + 1]; p];
    for (x, &y) in xs.iter().zip(ys) {
        let row: Vec<f64> = x.iter().copied().chain([1.0]).collect();
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * y;
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

#[test]
fn linear_regression_reaches_least_squares_loss() {
    let (ds, w_true) = gen_linreg(400, 4, 0.1, 5).unwrap();
    let xs: Vec<Vec<f64>> = ds.examples.iter().map(|e| e.x.clone()).collect();
    let ys: Vec<f64> = ds.examples.iter().map(|e| e.y).collect();
    let beta = least_squares(&xs, &ys);
    for (b, w) in beta.iter().zip(&w_true) {
        assert!((b - w).abs() < 0.05, "least squares {b} vs generator {w}");
    }
    let optimum = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let pred: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + beta[4];
            0.5 * (pred - y).powi(2)
        })
        .sum::<f64>()
        / xs.len() as f64;

    let cfg = RunConfig {
        model: ModelKind::LinearRegression { inputs: 4 },
        ordering: OrderingSpec::new(Variant::MeanBalance, 1),
        optim: OptimConfig {
            learning_rate: 0.01,
            weight_decay: 0.0,
            epochs: 40,
            ..OptimConfig::default()
        },
        seed: 1,
    };
    let (train, _) = ds.split(1.0, 0).unwrap();
    let loss = run_experiment(&train, None, &cfg).unwrap().last().unwrap().train_loss;
    assert!(loss >= optimum - 1e-12);
    assert!(loss - optimum < 1e-3, "sgd {loss} vs optimum {optimum}");
}
