use cmlsim::adversary::{AttackKind, AttackSpec, Observation};
use cmlsim::aggregators::{AggregatorSpec, DeltaPolicy, EvaluatorKind};
use cmlsim::data::{Dataset, Labels};
use cmlsim::nn::{Activation, LocalSchedule, Model, ModelShape, OptimizerParams, OutputHead, ParamVector};
use cmlsim::simulator::{distance_to_target, run, RunConfig, Simulation, SimulationData, Topology};
use ndarray::Array2;

fn shape() -> ModelShape {
    ModelShape::new(vec![3, 5, 2], Activation::Relu, OutputHead::SoftmaxXent).unwrap()
}

fn toy_data(rows: usize, salt: usize) -> Dataset {
    let inputs = Array2::from_shape_fn((rows, 3), |(i, j)| (((i + 3 * salt) * 13 + j * 7) % 19) as f64 / 9.0 - 1.0);
    let values = (0..rows).map(|i| usize::from(inputs[[i, 0]] - inputs[[i, 2]] > 0.0)).collect();
    Dataset::new("toy", inputs, Labels::Class { values, n_classes: 2 }).unwrap()
}

fn data(n: usize) -> SimulationData {
    SimulationData {
        user_data: (0..n).map(|u| toy_data(12, u)).collect(),
        validation: toy_data(10, 50),
        train_probe: Some(toy_data(8, 60)),
        server_eval: None,
    }
}

fn config(topology: Topology, aggregator: AggregatorSpec, attack: AttackSpec, epochs: usize) -> RunConfig {
    RunConfig {
        topology,
        aggregator,
        attack,
        shape: shape(),
        optimizer: OptimizerParams::adam(0.02),
        schedule: LocalSchedule::new(4),
        epochs,
        seed: 11,
        eval_every: 1,
        record_updates: true,
    }
}

fn no_attack() -> AttackSpec {
    AttackSpec::none(shape().param_count())
}

#[test]
fn star_and_complete_agree_under_mean() {
    let n = 4;
    let mean = AggregatorSpec::new(EvaluatorKind::Mean);
    let mut star = Simulation::new(config(Topology::star(n), mean.clone(), no_attack(), 5), data(n)).unwrap();
    let mut p2p = Simulation::new(config(Topology::complete(n), mean, no_attack(), 5), data(n)).unwrap();
    for _ in 0..5 {
        star.run_epoch().unwrap();
        p2p.run_epoch().unwrap();
        let global = star.global_model().unwrap().params();
        for m in p2p.honest_models() {
            assert!(m.params().dist(global) <= 1e-9 * (1.0 + global.norm()));
        }
    }
}

#[test]
fn benign_star_users_share_the_global_model() {
    let n = 3;
    let mut sim = Simulation::new(
        config(Topology::star(n), AggregatorSpec::new(EvaluatorKind::Mean), no_attack(), 2),
        data(n),
    )
    .unwrap();
    sim.run().unwrap();
    let global = sim.global_model().unwrap().params().clone();
    assert!(sim.honest_models().all(|m| m.params() == &global));
}

#[test]
fn state_override_with_mean_reaches_target_after_one_epoch() {
    let n = 5;
    let target = ParamVector::new((0..shape().param_count()).map(|i| (i % 4) as f64 - 1.5).collect());
    let attack = AttackSpec {
        kind: AttackKind::StateOverride,
        target: target.clone(),
        adversary_ids: vec![3, 4],
        observation: Observation::LastMover,
        fit_acceptance: false,
    };
    let traces = run(
        config(Topology::star(n), AggregatorSpec::new(EvaluatorKind::Mean), attack, 3),
        data(n),
    )
    .unwrap();
    for t in &traces {
        assert!(t.metrics["distance_to_target"] < 1e-9, "epoch {}: {}", t.epoch, t.metrics["distance_to_target"]);
    }
}

#[test]
fn same_seed_gives_identical_traces() {
    let n = 4;
    let scc = AggregatorSpec::new(EvaluatorKind::Scc).with_delta(DeltaPolicy::Fixed(0.3));
    let attack = AttackSpec {
        kind: AttackKind::StateOverrideScc,
        target: ParamVector::zeros(shape().param_count()),
        adversary_ids: vec![3],
        observation: Observation::LastMover,
        fit_acceptance: false,
    };
    let a = run(config(Topology::complete(n), scc.clone(), attack.clone(), 4), data(n)).unwrap();
    let b = run(config(Topology::complete(n), scc, attack, 4), data(n)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn zero_epochs_give_an_empty_trace() {
    let n = 2;
    let traces = run(
        config(Topology::star(n), AggregatorSpec::new(EvaluatorKind::Mean), no_attack(), 0),
        data(n),
    )
    .unwrap();
    assert!(traces.is_empty());
}

#[test]
fn trace_length_matches_epochs() {
    let n = 3;
    let traces = run(
        config(Topology::star(n), AggregatorSpec::new(EvaluatorKind::Mean), no_attack(), 4),
        data(n),
    )
    .unwrap();
    assert_eq!(traces.iter().map(|t| t.epoch).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
}

#[test]
fn attack_none_ignores_the_target() {
    let n = 3;
    let mut other = no_attack();
    other.target = ParamVector::new(vec![4.0; shape().param_count()]);
    let rofl = AggregatorSpec::new(EvaluatorKind::RoflNorm).with_delta(DeltaPolicy::Fixed(2.0));
    let a = run(config(Topology::star(n), rofl.clone(), no_attack(), 3), data(n)).unwrap();
    let b = run(config(Topology::star(n), rofl, other, 3), data(n)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn distance_to_target_examples() {
    let s = ModelShape::new(vec![1, 1], Activation::Identity, OutputHead::LinearMse).unwrap();
    let at = |a: f64, b: f64| Model::from_params(s.clone(), ParamVector::new(vec![a, b])).unwrap();
    let origin = ParamVector::zeros(2);
    assert_eq!(distance_to_target([&at(3.0, 4.0)], &origin).unwrap(), 5.0);
    assert_eq!(distance_to_target([&at(0.0, 0.0), &at(0.0, 0.0)], &origin).unwrap(), 0.0);
    assert_eq!(distance_to_target([&at(3.0, 4.0), &at(0.0, 1.0)], &origin).unwrap(), 3.0);
    assert!(distance_to_target(std::iter::empty::<&Model>(), &origin).is_err());
}

#[test]
fn invalid_combinations_are_rejected() {
    let n = 3;
    let scc = AggregatorSpec::new(EvaluatorKind::Scc).with_delta(DeltaPolicy::Fixed(1.0));
    assert!(Simulation::new(config(Topology::star(n), scc, no_attack(), 1), data(n)).is_err());
    let attack = AttackSpec {
        kind: AttackKind::StateOverrideScc,
        target: ParamVector::zeros(shape().param_count()),
        adversary_ids: vec![2],
        observation: Observation::LastMover,
        fit_acceptance: false,
    };
    let mean = AggregatorSpec::new(EvaluatorKind::Mean);
    assert!(Simulation::new(config(Topology::complete(n), mean, attack, 1), data(n)).is_err());
}
