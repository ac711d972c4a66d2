use esd_core::amortized::*;
use esd_core::gmm_prior::{build_spherical_prior, zscore_normalize};
use esd_core::reverse_ode::{generate_labeled_dataset, LabeledDataset, ResampledObservations, ReverseOdeConfig};
use esd_core::rng::stream;
use esd_core::synthetic::bimodal_joint_samples;
use ndarray::{array, concatenate, Array1, Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

fn random_model(index: u64) -> (MlpModel, Array2<f64>, Array2<f64>) {
    let mut rng = stream(77, index);
    let d_v = rng.random_range(1..=2usize);
    let d_u = rng.random_range(1..=2usize);
    let hidden = rng.random_range(3..=6usize);
    let layers = rng.random_range(1..=2usize);
    let mut sizes = vec![2 * d_v + d_u];
    sizes.extend(std::iter::repeat_n(hidden, layers));
    sizes.push(d_u);
    let mut model = MlpModel::new(&sizes, Activation::Tanh, index).unwrap();
    for b in model.params_mut().biases.iter_mut() {
        b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let n = rng.random_range(1..=8usize);
    let x = Array2::from_shape_fn((n, sizes[0]), |_| rng.random_range(-2.0..2.0));
    let u = Array2::from_shape_fn((n, d_u), |_| rng.random_range(-2.0..2.0));
    (model, x, u)
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-5;
    for index in 0..20 {
        let (model, x, u) = random_model(index);
        assert!(model.params().len() <= 200);
        let (_, grads) = model.loss_and_grad(x.view(), u.view()).unwrap();
        let analytic: Vec<f64> = grads.iter().copied().collect();
        let n_params = model.params().len();
        for p in 0..n_params {
            let eval = |delta: f64| {
                let mut m = model.clone();
                *m.params_mut().iter_mut().nth(p).unwrap() += delta;
                m.loss_and_grad(x.view(), u.view()).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (analytic[p] - fd).abs() / fd.abs().max(1e-4);
            assert!(rel < 1e-5, "model {index} param {p}: analytic {} fd {fd}", analytic[p]);
        }
    }
}

#[test]
fn zero_network_outputs_zero() {
    let mut model = MlpModel::new(&[3, 4, 2], Activation::Tanh, 0).unwrap();
    model.params_mut().iter_mut().for_each(|p| *p = 0.0);
    assert_eq!(model.forward(&[1.0], &[2.0, -3.0]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn linear_selection_layer() {
    let params = Parameters {
        weights: vec![array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]],
        biases: vec![Array1::zeros(2)],
    };
    let model = MlpModel::from_parameters(&[3, 2], Activation::Tanh, params).unwrap();
    assert_eq!(model.forward(&[9.0], &[0.25, -4.0]).unwrap(), vec![0.25, -4.0]);
}

#[test]
fn batched_forward_matches_rows() {
    let model = MlpModel::new(&[5, 50, 50, 3], Activation::Tanh, 4).unwrap();
    let mut rng = stream(5, 0);
    let x = Array2::from_shape_fn((40, 5), |_| rng.random_range(-3.0..3.0));
    let batch = model.forward_batch(x.view()).unwrap();
    for (row, out) in x.rows().into_iter().zip(batch.rows()) {
        let r = row.to_vec();
        let single = model.forward(&r[..1], &r[1..]).unwrap();
        for (a, b) in single.iter().zip(out) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn perfect_fit_has_zero_loss_and_gradient() {
    let (model, x, _) = random_model(3);
    let u = model.forward_batch(x.view()).unwrap();
    let (loss, grads) = model.loss_and_grad(x.view(), u.view()).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.iter().all(|g| *g == 0.0));
}

#[test]
fn duplicated_batch_keeps_mean_loss() {
    let (model, x, u) = random_model(8);
    let (l1, _) = model.loss_and_grad(x.view(), u.view()).unwrap();
    let x2 = concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
    let u2 = concatenate(Axis(0), &[u.view(), u.view()]).unwrap();
    let (l2, _) = model.loss_and_grad(x2.view(), u2.view()).unwrap();
    assert!((l1 - l2).abs() <= 1e-14 * l1.max(1.0));
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut model = MlpModel::new(&[3, 4, 1], Activation::Tanh, 1).unwrap();
    let before = model.clone();
    let mut adam = AdamState::new(&model, 1e-3).unwrap();
    let zero = Parameters::zeros_like(model.params());
    adam.step(&mut model, &zero).unwrap();
    assert_eq!(model, before);
    assert_eq!(adam.step, 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut model = MlpModel::new(&[3, 4, 1], Activation::Tanh, 1).unwrap();
    let before = model.clone();
    let mut adam = AdamState::new(&model, 1e-3).unwrap();
    let mut g = Parameters::zeros_like(model.params());
    g.iter_mut().for_each(|x| *x = 0.37);
    adam.step(&mut model, &g).unwrap();
    for (a, b) in before.params().iter().zip(model.params().iter()) {
        assert!(((a - b) - 1e-3).abs() < 1e-10);
    }
}

fn tiny_labeled_set() -> LabeledDataset {
    let mut rng = stream(9, 0);
    let u = Array2::from_shape_fn((64, 1), |_| rng.random_range(-1.0..1.0));
    let z = Array2::from_shape_fn((64, 2), |_| rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_fn((64, 1), |_| rng.random_range(-1.0..1.0));
    LabeledDataset::new(u, z, y, 9).unwrap()
}

#[test]
fn training_is_deterministic() {
    let data = tiny_labeled_set();
    for batch in [None, Some(10)] {
        let cfg = TrainConfig {
            batch_size: batch,
            hidden: vec![8],
            ..TrainConfig::new(100, 42)
        };
        let a = train_amortized(&data, &cfg).unwrap();
        let b = train_amortized(&data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.loss_history.len(), 100);
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = MlpModel::new(&[3, 7, 2], Activation::Tanh, 11).unwrap();
    write_checkpoint(&path, &model, 11, None).unwrap();
    let (back, header) = read_checkpoint(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(header.seed, 11);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(read_checkpoint(&path).is_err());
}

#[test]
fn bimodal_training_reduces_loss_tenfold() {
    let data = bimodal_joint_samples(2000, 0.1, 5).unwrap();
    let (norm, _) = zscore_normalize(&data).unwrap();
    let prior = build_spherical_prior(&norm, 0.005, 0.005).unwrap();
    let ys = ResampledObservations::new(norm.v().to_owned(), 1e-4).unwrap();
    let cfg = ReverseOdeConfig::new(200, 6).unwrap();
    let labeled = generate_labeled_dataset(&ys, 2000, &prior, 1e-4, &cfg).unwrap();
    let trained = train_amortized(&labeled, &TrainConfig::new(5000, 7)).unwrap();
    let first = trained.loss_history[0];
    let last = *trained.loss_history.last().unwrap();
    assert!(last <= 0.1 * first, "loss went from {first} to {last}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loss_is_nonnegative_and_vanishes_only_on_fit(index in 0u64..500, shift in -1.0f64..1.0) {
        let (model, x, _) = random_model(index);
        let fit = model.forward_batch(x.view()).unwrap();
        let (loss, _) = model.loss_and_grad(x.view(), fit.view()).unwrap();
        prop_assert_eq!(loss, 0.0);
        prop_assume!(shift.abs() > 1e-6);
        let off = fit.mapv(|v| v + shift);
        let (loss, _) = model.loss_and_grad(x.view(), off.view()).unwrap();
        prop_assert!(loss > 0.0);
    }
}
