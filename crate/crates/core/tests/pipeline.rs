use glu_scaling::checkpoint;
use glu_scaling::construct::Orientation;
use glu_scaling::construct::{construct_glu, dense_rmse};
use glu_scaling::experiments::{
    fit_slope, friedman, initial_params, load_csv, records_from_csv, records_to_csv, sample_target,
    scaling_sweep, target_1d, Axis,
};
use glu_scaling::models::{forward, mse, Domain};
use glu_scaling::train::{train, TrainConfig};
use glu_scaling::{ArchKind, Architecture, Block};

#[test]
fn checkpoint_round_trip_preserves_the_function() {
    let f = target_1d();
    let params = construct_glu(&f, 9, (-1.0, 1.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("glu.json");
    checkpoint::save(&params, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded, params);
    assert_eq!(
        dense_rmse(&loaded, &f, (-1.0, 1.0)).unwrap(),
        dense_rmse(&params, &f, (-1.0, 1.0)).unwrap()
    );
}

#[test]
fn sweep_records_survive_csv_and_refit() {
    let data = sample_target(&target_1d(), &Domain::interval(-1.0, 1.0), 500, 3).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.max_outer_iters = 40;
    let records = scaling_sweep(ArchKind::Glu, &data, &[2, 4, 8, 16], &cfg, 2).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.windows(2).all(|w| w[0].n < w[1].n));
    let back = records_from_csv(&records_to_csv(&records)).unwrap();
    assert_eq!(back, records);
    let fit = fit_slope(&back, Axis::Neurons).unwrap();
    assert!(fit.slope < -1.0, "{fit:?}");
}

#[test]
fn training_improves_on_friedman_data() {
    let mut data = friedman(2, 400, 0.0, 1).unwrap();
    data.normalize();
    let arch = Architecture::new(ArchKind::Mlp, data.dim_x(), 1, 6).unwrap();
    let init = initial_params(arch, &data, 0, Orientation::Alternating).unwrap();
    let before = mse(&init, &data.x, &data.y).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.max_outer_iters = 20;
    let (params, report) = train(&init, &data.x, &data.y, &cfg).unwrap();
    assert!(report.final_mse < 0.1 * before);
    assert!(
        (mse(&params, &data.x, &data.y).unwrap() - report.final_mse).abs()
            <= 1e-12 * report.final_mse
    );
}

#[test]
fn csv_dataset_trains_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut text = String::from("x,noise,y\n");
    for i in 0..200 {
        let x = -1.0 + 2.0 * i as f64 / 199.0;
        text.push_str(&format!("{x},{},{}\n", i % 7, x * x));
    }
    std::fs::write(&path, text).unwrap();
    let data = load_csv(&path, &["x".to_string()], "y", false).unwrap();
    assert_eq!(data.dim_x(), 1);
    // the square is in the GLU span, so head and values alone fit it
    let arch = Architecture::scalar(ArchKind::Glu, 3).unwrap();
    let init = initial_params(arch, &data, 0, Orientation::Uniform).unwrap();
    let cfg = TrainConfig::default().with_blocks(&[Block::Head, Block::Values]);
    let (params, _) = train(&init, &data.x, &data.y, &cfg).unwrap();
    let residual = forward(&params, &data.x).unwrap() - &data.y;
    assert!(residual.amax() < 1e-8, "{}", residual.amax());
}
