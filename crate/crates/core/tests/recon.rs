use std::path::PathBuf;

use speckle_cs::forward::{build_matrix, measure};
use speckle_cs::generator::{load_model, random_latent, to_measurement_domain, GeneratorModel};
use speckle_cs::recon::{reconstruct, reconstruct_digit_case, ReconConfig};
use speckle_cs::speckle::SpeckleConfig;
use speckle_cs::forward::MeasurementMatrix;

fn model() -> GeneratorModel {
    load_model(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny_generator.ggw1")).unwrap()
}

fn problem(model: &GeneratorModel, m: usize) -> (MeasurementMatrix, Vec<f64>) {
    let a = build_matrix(m, &SpeckleConfig::new(28, 0.7, 5).unwrap()).unwrap();
    let truth = model.decode(&random_latent(100, 123)).unwrap();
    let y = measure(&a, &truth).unwrap().values().to_vec();
    (a, y)
}

fn config(steps: usize, restarts: usize) -> ReconConfig {
    ReconConfig { steps, restarts, seed: 9, ..ReconConfig::default() }
}

#[test]
fn more_restarts_never_hurt() {
    let model = model();
    let (a, y) = problem(&model, 60);
    let mut previous = f64::INFINITY;
    for restarts in [1, 2, 4, 8] {
        let result = reconstruct(&model, &a, &y, &config(40, restarts)).unwrap();
        assert!(result.best_loss <= previous);
        previous = result.best_loss;
    }
}

#[test]
fn best_restart_is_the_minimum() {
    let model = model();
    let (a, y) = problem(&model, 60);
    let result = reconstruct(&model, &a, &y, &config(30, 5)).unwrap();
    let losses: Vec<f64> = result.restart_losses.iter().map(|l| l.unwrap()).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.iter().all(|&l| result.best_loss <= l));
    assert_eq!(losses[result.best_restart], result.best_loss);
    assert_eq!(*result.loss_trace.last().unwrap(), result.best_loss);
    assert!(result.best_loss <= result.loss_trace[0]);
}

#[test]
fn image_is_decoded_latent() {
    let model = model();
    let (a, y) = problem(&model, 40);
    let result = reconstruct(&model, &a, &y, &config(25, 2)).unwrap();
    let expected = to_measurement_domain(&model.forward(&result.z).unwrap().to_image().unwrap()).unwrap();
    assert_eq!(result.image, expected);
    assert_eq!(result.best_loss, model.loss(&result.z, &a, &y).unwrap());
}

#[test]
fn zero_steps_returns_initialization() {
    let model = model();
    let (a, y) = problem(&model, 30);
    let result = reconstruct(&model, &a, &y, &config(0, 1)).unwrap();
    assert_eq!(result.loss_trace.len(), 1);
    assert_eq!(result.loss_trace[0], result.best_loss);
    assert_eq!(result.image, model.decode(&result.z).unwrap());
}

#[test]
fn reconstruction_is_deterministic_and_thread_independent() {
    let model = model();
    let (a, y) = problem(&model, 50);
    let cfg = config(20, 4);
    let first = reconstruct(&model, &a, &y, &cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let second = pool.install(|| reconstruct(&model, &a, &y, &cfg)).unwrap();
    assert_eq!(first.z, second.z);
    assert_eq!(first.restart_losses, second.restart_losses);
    assert_eq!(first.to_json().unwrap(), second.to_json().unwrap());
}

#[test]
fn digit_case_end_to_end() {
    let model = model();
    let truth = model.decode(&random_latent(100, 55)).unwrap();
    let cfg = config(300, 3);
    let (result, r) = reconstruct_digit_case(&model, &truth, 150, 0.7, 0.0, 4, &cfg).unwrap();
    let (again, r2) = reconstruct_digit_case(&model, &truth, 150, 0.7, 0.0, 4, &cfg).unwrap();
    assert_eq!(r, r2);
    assert_eq!(result.z, again.z);
    assert!(r.unwrap() > 0.5, "r = {r:?}");
    assert!(reconstruct_digit_case(&model, &truth, 0, 0.7, 0.0, 4, &cfg).is_err());
}

#[test]
fn mismatched_shapes_are_rejected() {
    let model = model();
    let (a, y) = problem(&model, 10);
    assert!(reconstruct(&model, &a, &y[..9], &config(1, 1)).is_err());
    assert!(reconstruct(&model, &a, &y, &config(1, 0)).is_err());
}
