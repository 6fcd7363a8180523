use mdpde::experiment::{csv_header, run_experiment, run_sample_size, ExperimentConfig};

#[test]
fn default_grid_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        n_grid: vec![100, 200],
        reps: 2,
        out_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    let files = run_experiment(&cfg).unwrap();
    assert_eq!(files.len(), 3);
    for n in [100, 200] {
        let text = std::fs::read_to_string(dir.path().join(format!("mdpde_all_n{n}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), csv_header(2));
        let rows: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 16);
        for w in rows.windows(2) {
            assert!((w[0][0], w[0][1]) < (w[1][0], w[1][1]));
        }
        for r in &rows {
            assert_eq!(r[9], r[10], "S12 and S21 differ");
        }
    }
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("run_metadata.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["config"]["reps"], 2);
    assert!(meta["rng_algorithm"].as_str().unwrap().contains("ChaCha"));
}

#[test]
fn csv_values_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        n_grid: vec![120],
        eps_grid: vec![0.05],
        alpha_grid: vec![0.5],
        reps: 3,
        out_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    run_experiment(&cfg).unwrap();
    let cells = run_sample_size(&cfg, 120).unwrap();
    let text = std::fs::read_to_string(dir.path().join("mdpde_all_n120.csv")).unwrap();
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(&row[2..12], cells[0].mean.as_slice());
    assert_eq!(&row[12..22], cells[0].rmse.as_slice());
}

#[test]
fn clean_large_sample_is_consistent() {
    let cfg = ExperimentConfig {
        n_grid: vec![2000],
        eps_grid: vec![0.0],
        alpha_grid: vec![0.0, 0.1],
        reps: 200,
        ..Default::default()
    };
    let truth = cfg.truth().unwrap();
    let cells = run_sample_size(&cfg, 2000).unwrap();
    let b_true: Vec<f64> = truth.drift.matrix.transpose().iter().copied().collect();
    let s_true: Vec<f64> = truth
        .sigma
        .as_matrix()
        .transpose()
        .iter()
        .copied()
        .collect();
    let max_err = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    };
    let ml = &cells[0];
    assert!(max_err(&ml.mean[..4], &b_true) < 0.25);
    assert!(max_err(&ml.mean[6..], &s_true) < 0.3);

    // efficiency retention under the model
    let rmse_beta =
        |c: &mdpde::experiment::CellSummary| c.rmse[..6].iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(rmse_beta(&cells[1]) <= 1.25 * rmse_beta(ml));
}
