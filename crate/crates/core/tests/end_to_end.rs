use acdt::adapt::transform;
use acdt::bundle::{load_bundle, save_bundle};
use acdt::config::RunConfig;
use acdt::data::{load_csv, zscore};
use acdt::dp::adjusted_rand_index;
use acdt::pipeline::{evaluate, mine_domains, run_on, RunOutput};
use acdt::projection::{emit_projection, ProjectionMode};
use acdt::synth::{generate, write_synth, Synth, SynthSpec};
use nalgebra::{DMatrix, DVector};

fn shifted(seed: u64) -> Synth {
    generate(&SynthSpec {
        atoms: vec![vec![2.0, 3.0, -1.0], vec![-2.0, -3.0, 1.0]],
        intercepts: vec![],
        train_sizes: vec![60, 40],
        test_sizes: vec![0, 30],
        shifts: vec![1.0, -1.0],
        noise: 0.1,
        seed,
    })
    .unwrap()
}

fn quick(q: usize) -> RunConfig {
    RunConfig {
        sweeps: 60,
        burn_in: 20,
        q: Some(q),
        ..RunConfig::default()
    }
}

fn fit(data: &Synth, q: usize) -> RunOutput {
    run_on(&data.train, data.test.as_ref(), &quick(q)).unwrap()
}

#[test]
fn reloaded_bundle_predicts_identically() {
    let data = shifted(1);
    let out = fit(&data, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_bundle(&out.fitted.bundle, &path).unwrap();
    let reloaded = load_bundle(&path).unwrap();
    let before = out.evaluation.unwrap().predictions;
    let after = evaluate(&reloaded, data.test.as_ref().unwrap()).unwrap().predictions;
    assert!((&before.z - &after.z).amax() <= 1e-12);
    assert!((&before.raw - &after.raw).amax() <= 1e-12);

    let again = dir.path().join("again.json");
    save_bundle(&reloaded, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

/// Top-two principal axes via the power method with deflation.
fn top_two_axes(cov: &DMatrix<f64>) -> [DVector<f64>; 2] {
    let p = cov.nrows();
    let mut m = cov.clone();
    let mut axes = Vec::new();
    for _ in 0..2 {
        let mut v = DVector::from_fn(p, |i, _| 1.0 + i as f64 * 0.37);
        for _ in 0..20_000 {
            let next = &m * &v;
            v = &next / next.norm();
        }
        let value = (v.transpose() * &m * &v)[(0, 0)];
        m -= &v * v.transpose() * value;
        axes.push(v);
    }
    [axes[0].clone(), axes[1].clone()]
}

#[test]
fn pca_projection_matches_covariance_oracle() {
    let data = shifted(2);
    let out = fit(&data, 2);
    let bundle = &out.fitted.bundle;
    let test = data.test.as_ref().unwrap();
    let rows = emit_projection(bundle, &data.train, Some(test), ProjectionMode::Pca).unwrap();

    // oracle on the stacked standardized features
    let all: Vec<DMatrix<f64>> = [&data.train, test]
        .iter()
        .map(|d| bundle.scaler.standardize_features(&d.features).unwrap())
        .collect();
    let n = all[0].nrows() + all[1].nrows();
    let p = bundle.p();
    let mut x = DMatrix::zeros(n, p);
    x.rows_mut(0, all[0].nrows()).copy_from(&all[0]);
    x.rows_mut(all[0].nrows(), all[1].nrows()).copy_from(&all[1]);
    let mean = x.row_mean();
    for mut r in x.row_iter_mut() {
        r -= &mean;
    }
    let cov = x.transpose() * &x / n as f64;
    let axes = top_two_axes(&cov);
    for (k, axis) in axes.iter().enumerate() {
        let scores = &x * axis;
        let emitted = DVector::from_iterator(n, rows.iter().map(|r| if k == 0 { r.x1 } else { r.x2 }));
        let gap = (&emitted - &scores).amax().min((&emitted + &scores).amax());
        assert!(gap <= 1e-8, "component {k}: gap {gap}");
    }
}

#[test]
fn transferred_projection_equals_transform() {
    let data = shifted(3);
    let out = fit(&data, 2);
    let bundle = &out.fitted.bundle;
    let test = data.test.as_ref().unwrap();
    let rows = emit_projection(bundle, &data.train, Some(test), ProjectionMode::Transferred).unwrap();
    // the stack groups columns by latent domain; every instance's emitted
    // row must be the transform of its own column
    let stack = &out.fitted.stack;
    let z = transform(&bundle.map, &stack.d).unwrap();
    let cols: Vec<usize> = stack.train_columns().into_iter().chain(stack.test_columns()).collect();
    assert_eq!(cols.len(), rows.len());
    for (row, &col) in rows.iter().zip(&cols) {
        assert_eq!((row.x1, row.x2), (z[(0, col)], z[(1, col)]));
    }
    let projected = bundle
        .project_standardized(&bundle.scaler.standardize_features(&test.features).unwrap())
        .unwrap();
    for (i, row) in rows[data.train.n()..].iter().enumerate() {
        assert_eq!((row.x1, row.x2), (projected[(i, 0)], projected[(i, 1)]));
    }

    let m = bundle.partition.sizes.len();
    let allowed: Vec<String> = (1..=m).map(|k| k.to_string()).chain(["target".into()]).collect();
    assert!(rows.iter().all(|r| allowed.contains(&r.domain)));
    assert_eq!(rows.iter().filter(|r| r.domain == "target").count(), test.n());
}

#[test]
fn transferred_projection_needs_two_components() {
    let data = shifted(4);
    let out = fit(&data, 1);
    let err = emit_projection(&out.fitted.bundle, &data.train, data.test.as_ref(), ProjectionMode::Transferred);
    assert!(err.is_err());
}

#[test]
fn noiseless_single_domain_is_recovered_by_least_squares() {
    let atom = [1.5, -0.25, 4.0];
    let data = generate(&SynthSpec {
        atoms: vec![atom.to_vec()],
        intercepts: vec![0.75],
        train_sizes: vec![30],
        test_sizes: vec![],
        shifts: vec![0.5],
        noise: 0.0,
        seed: 9,
    })
    .unwrap();
    let x = &data.train.features;
    let y = data.train.response.as_ref().unwrap();
    let design = x.clone().insert_column(0, 1.0);
    let coef = (design.transpose() * &design)
        .lu()
        .solve(&(design.transpose() * y))
        .unwrap();
    assert!((coef[0] - 0.75).abs() <= 1e-10);
    for (j, a) in atom.iter().enumerate() {
        assert!((coef[j + 1] - a).abs() <= 1e-10, "coef {j}: {}", coef[j + 1]);
    }
}

#[test]
fn written_label_files_match_row_counts() {
    let data = shifted(5);
    let dir = tempfile::tempdir().unwrap();
    write_synth(&data, dir.path()).unwrap();
    for (rows, labels) in [("train.csv", "train_labels.csv"), ("test.csv", "test_labels.csv")] {
        let d = load_csv(dir.path().join(rows), Some("y")).unwrap();
        let text = std::fs::read_to_string(dir.path().join(labels)).unwrap();
        assert_eq!(text.lines().next(), Some("domain"));
        assert_eq!(text.lines().count() - 1, d.n());
    }
}

#[test]
fn identical_atoms_collapse_to_one_domain() {
    let data = generate(&SynthSpec {
        atoms: vec![vec![1.0, -2.0], vec![1.0, -2.0]],
        intercepts: vec![],
        train_sizes: vec![50, 50],
        test_sizes: vec![],
        shifts: vec![],
        noise: 0.1,
        seed: 6,
    })
    .unwrap();
    let y = data.train.response.as_ref().unwrap();
    let x_std = acdt::data::fit_scaler(&data.train)
        .standardize_features(&data.train.features)
        .unwrap();
    let mined = mine_domains(&x_std, &zscore(y), &RunConfig::default()).unwrap();
    let single = vec![0; y.len()];
    let ari = adjusted_rand_index(&mined.labels, &single);
    assert!(ari >= 0.9, "sizes {:?}", mined.sizes());
}
