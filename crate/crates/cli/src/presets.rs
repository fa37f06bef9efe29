//! The preset table.
//!
//! Every preset names a default configuration and the set of runs it
//! expands to. Preset names are stable: output files and plot figures are
//! keyed by them.

use std::path::{Path, PathBuf};

use cmlsim::adversary::{AttackKind, AttackSpec, Observation};
use cmlsim::aggregators::{AggregatorSpec, CandidateForm, DeltaPolicy, EvaluatorKind};
use cmlsim::data::{
    load_mnist_idx, load_tabular_csv, partition_by_label, partition_iid, partition_iid_sized,
    subsample_split, Dataset, KnowledgeMode,
};
use cmlsim::games::{GameConfig, GameData};
use cmlsim::nn::{Activation, LocalSchedule, ModelShape, OptimizerParams, OutputHead, ParamVector};
use cmlsim::simulator::{RunConfig, SimulationData, Topology, TopologyKind};

use crate::config::{
    AggregatorSettings, AttackSettings, ConfigError, DataSettings, GameSettings, PartitionKind,
    Settings, Training, Violation,
};
use crate::CliError;

/// Local data sizes of the ten users in the health task.
pub const HEALTH_USER_SIZES: [usize; 10] = [39, 39, 39, 59, 59, 59, 80, 80, 80, 80];

/// Samples of the training pool used to measure training loss.
const TRAIN_PROBE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    /// SCC, Multi-KRUM and RoFL under the state-override attack on MNIST.
    AggregatorsMnist,
    /// SCC at several fixed deltas, benign and attacked.
    SccDeltaSweep,
    /// SCC with a dynamic delta, benign and under dissensus.
    Dissensus,
    /// Knowledge sweep with the test subject as a peer or as the server.
    Knowledge(TopologyKind),
    /// SCC, Multi-KRUM and RoFL under the state-override attack on the
    /// diabetes table, with a prediction dump.
    Health,
    /// Benign mean aggregation.
    Baseline,
}

#[derive(Debug, Clone, Copy)]
pub struct PresetInfo {
    pub name: &'static str,
    pub kind: PresetKind,
    pub summary: &'static str,
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "fig2-mnist-iid",
        kind: PresetKind::AggregatorsMnist,
        summary: "accuracy and distance to target for SCC, Multi-KRUM and RoFL under state override, IID split",
    },
    PresetInfo {
        name: "fig2-mnist-noniid",
        kind: PresetKind::AggregatorsMnist,
        summary: "as fig2-mnist-iid with one class per user",
    },
    PresetInfo {
        name: "fig3-scc-delta",
        kind: PresetKind::SccDeltaSweep,
        summary: "SCC at delta 0.5, 1 and 5, benign and under state override",
    },
    PresetInfo {
        name: "fig5-dissensus",
        kind: PresetKind::Dissensus,
        summary: "mean dynamic delta of SCC users, benign baseline against the dissensus attack",
    },
    PresetInfo {
        name: "fig6-knowledge-p2p",
        kind: PresetKind::Knowledge(TopologyKind::Complete),
        summary: "peer test subject: decision accuracy, FPR and learning potential per knowledge degree",
    },
    PresetInfo {
        name: "fig7-knowledge-server",
        kind: PresetKind::Knowledge(TopologyKind::Star),
        summary: "server test subject: decision accuracy, FPR and learning potential per knowledge degree",
    },
    PresetInfo {
        name: "fig8-health",
        kind: PresetKind::Health,
        summary: "diabetes table under state override toward the all-zero model: error rate and predictions",
    },
    PresetInfo {
        name: "baseline-mean-iid",
        kind: PresetKind::Baseline,
        summary: "benign mean aggregation on the IID MNIST subset",
    },
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn info(name: &str) -> Result<&'static PresetInfo, ConfigError> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| ConfigError::UnknownPreset { name: name.to_string() })
}

fn mnist_base(preset: &str, seed: u64) -> Settings {
    Settings {
        preset: preset.to_string(),
        seed,
        training: Training {
            epochs: 30,
            learning_rate: 0.01,
            batch_size: 32,
            local_epochs: 1,
            eval_every: 1,
            n_users: 20,
        },
        data: DataSettings {
            dir: "data".into(),
            mnist_images: "mnist/mnist-10k-images-idx3-ubyte.gz".into(),
            mnist_labels: "mnist/mnist-10k-labels-idx1-ubyte.gz".into(),
            pima_csv: "pima/pima-synthetic.csv".into(),
            train_size: 6000,
            val_size: 1000,
            partition: PartitionKind::Iid,
        },
        attack: AttackSettings {
            adversaries: 2,
            observation: Observation::LastMover,
            fit_acceptance: true,
        },
        aggregator: AggregatorSettings {
            delta: 1.0,
            deltas: vec![0.5, 1.0, 5.0],
        },
        games: GameSettings {
            labels_degrees: (1..=10).map(f64::from).collect(),
            iid_degrees: vec![0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0],
            potential_steps: 300,
        },
    }
}

/// Default settings of a preset.
pub fn defaults(name: &str, seed: u64) -> Result<Settings, ConfigError> {
    let preset = info(name)?;
    let mut s = mnist_base(name, seed);
    match preset.kind {
        PresetKind::AggregatorsMnist => {
            if name.ends_with("noniid") {
                s.data.partition = PartitionKind::Label;
            }
        }
        PresetKind::SccDeltaSweep | PresetKind::Dissensus => s.training.eval_every = 5,
        PresetKind::Knowledge(topology) => {
            s.training.n_users = 10;
            s.training.epochs = match topology {
                TopologyKind::Complete => 5,
                TopologyKind::Star => 10,
            };
            s.attack.adversaries = 0;
        }
        PresetKind::Health => {
            s.training.epochs = 50;
            s.training.learning_rate = 1e-5;
            s.training.batch_size = 10;
            s.training.n_users = HEALTH_USER_SIZES.len();
            s.data.train_size = 614;
            s.data.val_size = 154;
        }
        PresetKind::Baseline => {
            s.training.eval_every = 5;
            s.attack.adversaries = 0;
        }
    }
    Ok(s)
}

/// Constraints that depend on the preset.
pub fn check(s: &Settings) -> Result<(), Violation> {
    let Ok(preset) = info(&s.preset) else {
        return Ok(());
    };
    let fail = |key, message: &str| {
        Err(Violation {
            key,
            message: format!("{message} for {}", s.preset),
        })
    };
    match preset.kind {
        PresetKind::AggregatorsMnist | PresetKind::Health => {
            if s.aggregator.delta <= 0.0 {
                return fail("aggregator.delta", "delta must be > 0");
            }
        }
        PresetKind::SccDeltaSweep => {
            if s.aggregator.deltas.is_empty() {
                return fail("aggregator.deltas", "deltas must not be empty");
            }
        }
        PresetKind::Knowledge(_) => {
            if s.games.labels_degrees.is_empty() && s.games.iid_degrees.is_empty() {
                return fail("games.labels_degrees", "at least one knowledge degree is required");
            }
            if s.training.n_users > 11 {
                return fail("training.n_users", "n_users must be ≤ 11");
            }
            if s.attack.adversaries != 0 {
                return fail("attack.adversaries", "adversaries must be 0");
            }
        }
        PresetKind::Baseline => {
            if s.attack.adversaries != 0 {
                return fail("attack.adversaries", "adversaries must be 0");
            }
        }
        PresetKind::Dissensus => {}
    }
    let attacked = matches!(
        preset.kind,
        PresetKind::AggregatorsMnist | PresetKind::SccDeltaSweep | PresetKind::Dissensus | PresetKind::Health
    );
    if attacked && s.attack.adversaries == 0 {
        return fail("attack.adversaries", "adversaries must be ≥ 1");
    }
    if preset.kind == PresetKind::Health {
        if s.training.n_users != HEALTH_USER_SIZES.len() {
            return fail("training.n_users", "n_users must be 10");
        }
        let needed: usize = HEALTH_USER_SIZES.iter().sum();
        if s.data.train_size < needed {
            return fail("data.train_size", &format!("train_size must be ≥ {needed}"));
        }
    }
    if s.data.partition == PartitionKind::Label && preset.kind != PresetKind::AggregatorsMnist {
        return fail("data.partition", "label partitioning is not available");
    }
    Ok(())
}

/// One simulation of a preset.
#[derive(Debug, Clone)]
pub struct NamedRun {
    pub name: String,
    pub config: RunConfig,
    pub data: SimulationData,
    /// Dump the final honest models' test predictions.
    pub dump_predictions: bool,
}

#[derive(Debug, Clone)]
pub struct KnowledgeJob {
    pub config: GameConfig,
    pub data: GameData,
    pub knowledge: Vec<(KnowledgeMode, f64)>,
}

#[derive(Debug, Clone)]
pub enum Job {
    Simulations(Vec<NamedRun>),
    Knowledge(KnowledgeJob),
}

/// `dir` as given when it exists, else the repository's `data` directory.
pub fn resolve_data_dir(dir: &str) -> PathBuf {
    let given = PathBuf::from(dir);
    if given.exists() || given.is_absolute() {
        return given;
    }
    let repo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(dir);
    if repo.exists() {
        repo
    } else {
        given
    }
}

/// Seeded train/validation split of the MNIST file pair.
pub fn load_mnist(s: &Settings) -> Result<(Dataset, Dataset), CliError> {
    let dir = resolve_data_dir(&s.data.dir);
    let full = load_mnist_idx(dir.join(&s.data.mnist_images), dir.join(&s.data.mnist_labels))?;
    Ok(subsample_split(&full, s.data.train_size, s.data.val_size, s.seed)?)
}

/// Seeded train/test split of the z-scored diabetes table.
pub fn load_health(s: &Settings) -> Result<(Dataset, Dataset), CliError> {
    let dir = resolve_data_dir(&s.data.dir);
    let table = load_tabular_csv(dir.join(&s.data.pima_csv), "Outcome", true)?;
    Ok(subsample_split(&table, s.data.train_size, s.data.val_size, s.seed)?)
}

pub fn health_shape() -> ModelShape {
    ModelShape::new(vec![8, 16, 8, 2], Activation::Relu, OutputHead::SoftmaxXent).expect("valid shape")
}

fn schedule(s: &Settings) -> LocalSchedule {
    LocalSchedule {
        batch_size: s.training.batch_size,
        local_epochs: s.training.local_epochs,
        max_batches: None,
    }
}

/// The highest user ids are the adversaries.
fn adversary_ids(s: &Settings) -> Vec<usize> {
    let n = s.training.n_users;
    (n - s.attack.adversaries..n).collect()
}

fn attack(s: &Settings, kind: AttackKind, param_count: usize) -> AttackSpec {
    if kind == AttackKind::None {
        return AttackSpec::none(param_count);
    }
    AttackSpec {
        kind,
        target: ParamVector::zeros(param_count),
        adversary_ids: adversary_ids(s),
        observation: s.attack.observation,
        fit_acceptance: s.attack.fit_acceptance,
    }
}

struct RunFactory<'a> {
    settings: &'a Settings,
    shape: ModelShape,
    data: SimulationData,
    dump_predictions: bool,
}

impl RunFactory<'_> {
    fn make(&self, name: String, topology: Topology, aggregator: AggregatorSpec, kind: AttackKind) -> NamedRun {
        let s = self.settings;
        NamedRun {
            name,
            config: RunConfig {
                topology,
                aggregator,
                attack: attack(s, kind, self.shape.param_count()),
                shape: self.shape.clone(),
                optimizer: OptimizerParams::adam(s.training.learning_rate),
                schedule: schedule(s),
                epochs: s.training.epochs,
                seed: s.seed,
                eval_every: s.training.eval_every,
                record_updates: false,
            },
            data: self.data.clone(),
            dump_predictions: self.dump_predictions,
        }
    }

    /// SCC on the peer-to-peer topology, Multi-KRUM and RoFL at a server.
    fn three_aggregators(&self) -> Vec<NamedRun> {
        let n = self.settings.training.n_users;
        let delta = DeltaPolicy::Fixed(self.settings.aggregator.delta);
        vec![
            self.make(
                "scc".into(),
                Topology::complete(n),
                AggregatorSpec::new(EvaluatorKind::Scc).with_delta(delta),
                AttackKind::StateOverrideScc,
            ),
            self.make(
                "mkrum".into(),
                Topology::star(n),
                AggregatorSpec::multi_krum_default(n),
                AttackKind::StateOverride,
            ),
            self.make(
                "rofl".into(),
                Topology::star(n),
                AggregatorSpec::new(EvaluatorKind::RoflNorm).with_delta(delta),
                AttackKind::StateOverride,
            ),
        ]
    }
}

fn mnist_simulation_data(s: &Settings, probe: bool) -> Result<SimulationData, CliError> {
    let (train, validation) = load_mnist(s)?;
    let n = s.training.n_users;
    let partition = match s.data.partition {
        PartitionKind::Iid => partition_iid(train.len(), n, s.seed)?,
        PartitionKind::Label => partition_by_label(&train, n)?,
    };
    let train_probe = probe.then(|| {
        let k = TRAIN_PROBE.min(train.len());
        train.select(&(0..k).collect::<Vec<_>>()).with_name("train-probe")
    });
    Ok(SimulationData {
        user_data: partition.materialize(&train),
        validation,
        train_probe,
        server_eval: None,
    })
}

/// Knowledge points in the order they are swept: label prefixes first.
pub fn knowledge_points(s: &Settings) -> Vec<(KnowledgeMode, f64)> {
    let labels = s.games.labels_degrees.iter().map(|&d| (KnowledgeMode::LabelsPrefix, d));
    let iid = s.games.iid_degrees.iter().map(|&d| (KnowledgeMode::IidFraction, d));
    labels.chain(iid).collect()
}

/// Game configuration of a knowledge preset; the ground-truth threshold
/// is 0 for both evaluators.
pub fn game_config(s: &Settings, topology: TopologyKind) -> GameConfig {
    GameConfig {
        topology,
        evaluators: vec![EvaluatorKind::RdSvmHinge, EvaluatorKind::ErrRejection],
        shape: ModelShape::mnist_default(),
        optimizer: OptimizerParams::adam(s.training.learning_rate),
        schedule: schedule(s),
        epochs: s.training.epochs,
        seed: s.seed,
        delta: 0.0,
        candidate_form: CandidateForm::Update,
        control_fractions: GameConfig::control_ramp(s.training.n_users - 1),
        potential_steps: s.games.potential_steps,
    }
}

/// Loads the data and expands a preset into its runs.
pub fn build_job(s: &Settings) -> Result<Job, CliError> {
    let preset = info(&s.preset)?;
    let n = s.training.n_users;
    let job = match preset.kind {
        PresetKind::Knowledge(topology) => {
            let (train, validation) = load_mnist(s)?;
            Job::Knowledge(KnowledgeJob {
                config: game_config(s, topology),
                data: GameData { train, validation },
                knowledge: knowledge_points(s),
            })
        }
        PresetKind::Health => {
            let (train, test) = load_health(s)?;
            let partition = partition_iid_sized(train.len(), &HEALTH_USER_SIZES, s.seed)?;
            let factory = RunFactory {
                settings: s,
                shape: health_shape(),
                data: SimulationData {
                    user_data: partition.materialize(&train),
                    validation: test,
                    train_probe: None,
                    server_eval: None,
                },
                dump_predictions: true,
            };
            Job::Simulations(factory.three_aggregators())
        }
        kind => {
            let factory = RunFactory {
                settings: s,
                shape: ModelShape::mnist_default(),
                data: mnist_simulation_data(s, kind == PresetKind::SccDeltaSweep)?,
                dump_predictions: false,
            };
            let runs = match kind {
                PresetKind::AggregatorsMnist => factory.three_aggregators(),
                PresetKind::SccDeltaSweep => s
                    .aggregator
                    .deltas
                    .iter()
                    .flat_map(|&d| {
                        let spec = AggregatorSpec::new(EvaluatorKind::Scc).with_delta(DeltaPolicy::Fixed(d));
                        [("benign", AttackKind::None), ("attack", AttackKind::StateOverrideScc)].map(
                            |(label, attack)| {
                                factory.make(format!("scc_d{d}_{label}"), Topology::complete(n), spec.clone(), attack)
                            },
                        )
                    })
                    .collect(),
                PresetKind::Dissensus => {
                    let spec = AggregatorSpec::new(EvaluatorKind::Scc).with_delta(DeltaPolicy::DynamicVariance);
                    vec![
                        factory.make("baseline".into(), Topology::complete(n), spec.clone(), AttackKind::None),
                        factory.make("dissensus".into(), Topology::complete(n), spec, AttackKind::Dissensus),
                    ]
                }
                PresetKind::Baseline => vec![factory.make(
                    "mean".into(),
                    Topology::star(n),
                    AggregatorSpec::new(EvaluatorKind::Mean),
                    AttackKind::None,
                )],
                PresetKind::Knowledge(_) | PresetKind::Health => unreachable!("handled above"),
            };
            Job::Simulations(runs)
        }
    };
    if let Job::Simulations(runs) = &job {
        for run in runs {
            run.config.validate().map_err(|e| ConfigError::Constraint {
                origin: s.preset.clone(),
                line: None,
                key: run.name.clone(),
                message: e.to_string(),
            })?;
        }
    }
    Ok(job)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_are_unique_and_resolve() {
        let mut names = names();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), PRESETS.len());
        for p in PRESETS {
            let s = defaults(p.name, 0).unwrap();
            s.check().unwrap();
        }
    }

    #[test]
    fn fig3_runs_cover_each_delta_twice() {
        let s = defaults("fig3-scc-delta", 0).unwrap();
        let Job::Simulations(runs) = build_job(&s).unwrap() else { panic!() };
        let names: Vec<&str> = runs.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "scc_d0.5_benign",
                "scc_d0.5_attack",
                "scc_d1_benign",
                "scc_d1_attack",
                "scc_d5_benign",
                "scc_d5_attack"
            ]
        );
        assert!(runs.iter().all(|r| r.data.train_probe.is_some()));
    }

    #[test]
    fn adversaries_take_the_highest_ids() {
        let s = defaults("fig2-mnist-iid", 0).unwrap();
        assert_eq!(adversary_ids(&s), vec![18, 19]);
    }

    #[test]
    fn health_runs_use_the_uneven_shards() {
        let s = defaults("fig8-health", 0).unwrap();
        let Job::Simulations(runs) = build_job(&s).unwrap() else { panic!() };
        assert_eq!(runs.len(), 3);
        let sizes: Vec<usize> = runs[0].data.user_data.iter().map(Dataset::len).collect();
        assert_eq!(sizes, HEALTH_USER_SIZES);
        assert_eq!(runs[0].data.validation.len(), 154);
        assert!(runs.iter().all(|r| r.dump_predictions));
    }

    #[test]
    fn preset_specific_constraints() {
        let mut s = defaults("fig8-health", 0).unwrap();
        s.training.n_users = 12;
        assert_eq!(s.check().unwrap_err().key, "training.n_users");
        let mut s = defaults("fig2-mnist-iid", 0).unwrap();
        s.aggregator.delta = 0.0;
        assert_eq!(s.check().unwrap_err().key, "aggregator.delta");
        let mut s = defaults("baseline-mean-iid", 0).unwrap();
        s.attack.adversaries = 1;
        assert_eq!(s.check().unwrap_err().key, "attack.adversaries");
    }
}
