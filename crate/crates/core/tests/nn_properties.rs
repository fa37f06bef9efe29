use cmlsim::data::{Dataset, Labels};
use cmlsim::nn::{
    evaluate, local_train_step, Activation, LocalSchedule, Loss, Metric, Model, ModelShape,
    OptimizerParams, OptimizerState, OutputHead, ParamVector,
};
use cmlsim::rng::rng_for;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

/// Central finite-difference gradient of the mean batch loss.
fn numeric_gradient(model: &Model, batch: &Dataset, loss: Loss, h: f64) -> Vec<f64> {
    let base = model.params().as_slice().to_vec();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let f = |p: Vec<f64>| {
                model
                    .with_params(ParamVector::new(p))
                    .unwrap()
                    .loss(batch, loss)
                    .unwrap()
            };
            (f(plus) - f(minus)) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn random_case(seed: u64, loss: Loss) -> (Model, Dataset) {
    let mut rng = rng_for(seed, &[99]);
    let n_in = rng.gen_range(1..=4);
    let hidden = rng.gen_range(1..=4);
    let n_out = match loss {
        Loss::Mse if rng.gen_bool(0.5) => 1,
        _ => rng.gen_range(2..=4),
    };
    let head = match loss {
        Loss::CrossEntropy => OutputHead::SoftmaxXent,
        Loss::Hinge => OutputHead::HingeMargin,
        Loss::Mse => OutputHead::LinearMse,
    };
    let activation = if rng.gen_bool(0.7) {
        Activation::Relu
    } else {
        Activation::Identity
    };
    let shape = ModelShape::new(vec![n_in, hidden, n_out], activation, head).unwrap();
    assert!(shape.param_count() <= 50);
    let model = Model::init(shape, &mut rng);
    let n = rng.gen_range(1..=5);
    let inputs = Array2::from_shape_fn((n, n_in), |_| rng.gen_range(-2.0..2.0));
    let labels = if loss == Loss::Mse && n_out == 1 {
        Labels::Real((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    } else {
        Labels::Class {
            values: (0..n).map(|_| rng.gen_range(0..n_out)).collect(),
            n_classes: n_out,
        }
    };
    (model, Dataset::new("g", inputs, labels).unwrap())
}

#[test]
fn six_parameter_model_matches_finite_differences() {
    // 2 inputs -> 2 outputs: (2+1)*2 = 6 parameters, 3 samples
    let shape = ModelShape::new(vec![2, 2], Activation::Identity, OutputHead::SoftmaxXent).unwrap();
    let model = Model::from_params(
        shape,
        ParamVector::new(vec![0.3, -0.2, 0.5, 0.1, -0.05, 0.2]),
    )
    .unwrap();
    let batch = Dataset::new(
        "six",
        ndarray::array![[1.0, 2.0], [-0.5, 0.3], [0.0, -1.0]],
        Labels::Class {
            values: vec![0, 1, 1],
            n_classes: 2,
        },
    )
    .unwrap();
    for loss in [Loss::CrossEntropy, Loss::Hinge, Loss::Mse] {
        let (_, grad) = model.loss_and_gradient(&batch, loss).unwrap();
        let numeric = numeric_gradient(&model, &batch, loss, 1e-6);
        let err = relative_error(grad.as_slice(), &numeric);
        assert!(err < 1e-4, "{loss:?}: relative error {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_gradient_matches_central_differences(seed in any::<u64>(), which in 0usize..3) {
        let loss = [Loss::CrossEntropy, Loss::Hinge, Loss::Mse][which];
        let (model, batch) = random_case(seed, loss);
        let (_, grad) = model.loss_and_gradient(&batch, loss).unwrap();
        let numeric = numeric_gradient(&model, &batch, loss, 1e-6);
        let err = relative_error(grad.as_slice(), &numeric);
        prop_assert!(err < 1e-4, "{:?}: relative error {}", loss, err);
    }

    #[test]
    fn params_model_params_is_identity(values in prop::collection::vec(-10.0f64..10.0, 17)) {
        // 3-2-3: (3+1)*2 + (2+1)*3 = 17
        let shape = ModelShape::new(vec![3, 2, 3], Activation::Relu, OutputHead::SoftmaxXent).unwrap();
        let p = ParamVector::new(values);
        let m = Model::from_params(shape, p.clone()).unwrap();
        prop_assert_eq!(m.into_params(), p);
    }
}

fn separable_toy() -> Dataset {
    let mut rng = rng_for(5, &[1]);
    let n = 40;
    let inputs = Array2::from_shape_fn((n, 2), |(i, _)| {
        let center = if i % 2 == 0 { -1.5 } else { 1.5 };
        center + rng.gen_range(-0.5..0.5)
    });
    Dataset::new(
        "sep",
        inputs,
        Labels::Class {
            values: (0..n).map(|i| i % 2).collect(),
            n_classes: 2,
        },
    )
    .unwrap()
}

#[test]
fn sgd_strictly_reduces_training_loss_on_separable_toy() {
    let data = separable_toy();
    let shape = ModelShape::new(vec![2, 4, 2], Activation::Relu, OutputHead::SoftmaxXent).unwrap();
    let mut model = Model::init(shape, &mut rng_for(8, &[0]));
    let mut opt = OptimizerState::new(OptimizerParams::sgd(0.05), model.params().len());
    let mut previous = evaluate(&model, &data, Metric::MeanLoss).unwrap();
    for epoch in 0..30 {
        let step = local_train_step(&model, &mut opt, &data, &LocalSchedule::new(8), epoch).unwrap();
        model = step.model;
        let loss = evaluate(&model, &data, Metric::MeanLoss).unwrap();
        assert!(loss < previous, "epoch {epoch}: {loss} >= {previous}");
        previous = loss;
    }
}

#[test]
fn fixed_seed_gives_bit_identical_trajectories() {
    let data = separable_toy();
    let shape = ModelShape::new(vec![2, 3, 2], Activation::Relu, OutputHead::SoftmaxXent).unwrap();
    let trajectory = || {
        let mut model = Model::init(shape.clone(), &mut rng_for(1, &[0]));
        let mut opt = OptimizerState::new(OptimizerParams::adam(0.01), model.params().len());
        let mut bits = Vec::new();
        for epoch in 0..5 {
            model = local_train_step(&model, &mut opt, &data, &LocalSchedule::new(7), epoch)
                .unwrap()
                .model;
            bits.extend(model.params().as_slice().iter().map(|v| v.to_bits()));
        }
        bits
    };
    assert_eq!(trajectory(), trajectory());
}
