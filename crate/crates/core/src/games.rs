//! Robustness-indistinguishability experiments.
//!
//! A test subject holding a slice of the domain scores the updates honest
//! control users send during ordinary training. Each score on the subject's
//! slice is compared with the same evaluator computed on the full domain
//! proxy (training data plus held-out validation data), which serves as
//! ground truth. Sweeping the size or coverage of the slice traces how the
//! subject's decision quality moves with its learning potential.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adversary::AttackSpec;
use crate::aggregators::{err_scores, rd_svm_aggregate, AggregatorSpec, CandidateForm, EvaluatorClass, EvaluatorKind};
use crate::data::{knowledge_indices, partition_iid_sized, Dataset, KnowledgeMode};
use crate::error::{Error, Result};
use crate::nn::{
    evaluate, local_train_step, LocalSchedule, Metric, Model, ModelShape, OptimizerParams, OptimizerState,
    ParamVector,
};
use crate::rng;
use crate::simulator::{RunConfig, Simulation, SimulationData, Topology, TopologyKind};

/// One received update as judged by the test subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub epoch: usize,
    pub update_id: usize,
    pub ground_truth_benign: bool,
    pub decision_benign: bool,
    /// `R(θ, S_D)` on the subject's slice.
    pub score_local: f64,
    /// `R(θ, D)` on the domain proxy.
    pub score_global: f64,
}

/// Confusion counts with "classified benign" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    /// Malicious updates classified benign.
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, ground_truth_benign: bool, decision_benign: bool) {
        match (ground_truth_benign, decision_benign) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinguisherReport {
    pub evaluator: EvaluatorKind,
    pub mode: KnowledgeMode,
    pub knowledge_degree: f64,
    pub accuracy: f64,
    /// `fp / (fp + tn)`; zero when no update was malicious.
    pub fpr: f64,
    pub counts: ConfusionCounts,
}

impl DistinguisherReport {
    pub fn from_records(
        evaluator: EvaluatorKind,
        mode: KnowledgeMode,
        knowledge_degree: f64,
        records: &[GameRecord],
    ) -> Self {
        let mut counts = ConfusionCounts::default();
        for r in records {
            counts.record(r.ground_truth_benign, r.decision_benign);
        }
        let total = counts.total();
        let negatives = counts.fp + counts.tn;
        DistinguisherReport {
            evaluator,
            mode,
            knowledge_degree,
            accuracy: if total == 0 {
                0.0
            } else {
                (counts.tp + counts.tn) as f64 / total as f64
            },
            fpr: if negatives == 0 {
                0.0
            } else {
                counts.fp as f64 / negatives as f64
            },
            counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningPotentialReport {
    pub acc_local: f64,
    pub acc_all: f64,
    /// `acc_all − acc_local`.
    pub potential: f64,
}

/// Fixed training effort used to compare what two datasets can teach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainBudget {
    /// Total minibatch steps.
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerParams,
    pub seed: u64,
}

/// Everything measured at one knowledge degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mode: KnowledgeMode,
    pub degree: f64,
    pub slice_size: usize,
    pub potential: LearningPotentialReport,
    /// One report per configured evaluator, in configuration order.
    pub reports: Vec<DistinguisherReport>,
    #[serde(skip)]
    pub records: BTreeMap<EvaluatorKind, Vec<GameRecord>>,
}

impl SweepPoint {
    pub fn report(&self, evaluator: EvaluatorKind) -> Option<&DistinguisherReport> {
        self.reports.iter().find(|r| r.evaluator == evaluator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// `Complete` for the peer-to-peer game, `Star` for the server game.
    pub topology: TopologyKind,
    pub evaluators: Vec<EvaluatorKind>,
    pub shape: ModelShape,
    pub optimizer: OptimizerParams,
    pub schedule: LocalSchedule,
    pub epochs: usize,
    pub seed: u64,
    /// Acceptance threshold shared by decisions and ground truth.
    pub delta: f64,
    pub candidate_form: CandidateForm,
    /// Fractions of the training pool held by the control users.
    pub control_fractions: Vec<f64>,
    pub potential_steps: usize,
}

impl GameConfig {
    /// Control users on a linear ramp from 5% to 15% of the training pool.
    pub fn control_ramp(n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![0.10];
        }
        (0..n).map(|i| 0.05 + 0.10 * i as f64 / (n - 1) as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.evaluators.is_empty() {
            return Err(Error::invalid("at least one evaluator is required"));
        }
        for &kind in &self.evaluators {
            require_behavior(kind)?;
        }
        if self.control_fractions.is_empty() {
            return Err(Error::invalid("at least one control user is required"));
        }
        let total: f64 = self.control_fractions.iter().sum();
        if self.control_fractions.iter().any(|&f| f <= 0.0) || total > 1.0 + 1e-9 {
            return Err(Error::invalid(format!(
                "control fractions must be positive and sum to at most 1 (sum = {total})"
            )));
        }
        if !self.delta.is_finite() {
            return Err(Error::invalid("delta must be finite"));
        }
        if self.potential_steps == 0 {
            return Err(Error::invalid("potential_steps must be positive"));
        }
        self.optimizer.validate()
    }

    fn budget(&self) -> TrainBudget {
        TrainBudget {
            steps: self.potential_steps,
            batch_size: self.schedule.batch_size,
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }
}

/// The training pool the slices and control shards are cut from, and the
/// held-out data that completes the domain proxy.
#[derive(Debug, Clone)]
pub struct GameData {
    pub train: Dataset,
    pub validation: Dataset,
}

impl GameData {
    /// `D`: the training pool followed by the validation data.
    pub fn domain_proxy(&self) -> Result<Dataset> {
        Dataset::concat("domain-proxy", &[&self.train, &self.validation])
    }
}

fn require_behavior(kind: EvaluatorKind) -> Result<()> {
    if kind.class() != EvaluatorClass::BehaviorBased {
        return Err(Error::invalid(format!(
            "{} is not behavior-based; the game harness only judges behavior-based evaluators",
            kind.name()
        )));
    }
    Ok(())
}

/// `R(θ_k, S)` for every update in `updates`, the others acting as
/// co-updates where the evaluator needs them.
pub fn behavior_scores(
    kind: EvaluatorKind,
    updates: &[ParamVector],
    current_model: &Model,
    eval_set: &Dataset,
    form: CandidateForm,
) -> Result<Vec<f64>> {
    require_behavior(kind)?;
    match kind {
        EvaluatorKind::RdSvmHinge => Ok(rd_svm_aggregate(updates, current_model, eval_set, form)?.per_update_score),
        _ => err_scores(updates, current_model, eval_set),
    }
}

/// Whether `updates[index]` is benign: `R(θ, D) < δ` on the domain proxy.
pub fn ground_truth_label(
    kind: EvaluatorKind,
    updates: &[ParamVector],
    index: usize,
    current_model: &Model,
    full_domain: &Dataset,
    delta: f64,
) -> Result<bool> {
    if index >= updates.len() {
        return Err(Error::invalid(format!(
            "update index {index} out of range for {} updates",
            updates.len()
        )));
    }
    let scores = behavior_scores(kind, updates, current_model, full_domain, CandidateForm::Update)?;
    Ok(scores[index] < delta)
}

/// Trains a fresh model for exactly `budget.steps` minibatches.
fn train_with_budget(shape: &ModelShape, data: &Dataset, budget: &TrainBudget) -> Result<Model> {
    let init = Model::init(shape.clone(), &mut rng::rng_for(budget.seed, &[rng::stream::INIT]));
    let mut opt = OptimizerState::new(budget.optimizer, shape.param_count());
    let per_pass = data.len().div_ceil(budget.batch_size);
    let mut model = init;
    let mut remaining = budget.steps;
    let mut pass = 0u64;
    while remaining > 0 {
        let take = remaining.min(per_pass);
        let schedule = LocalSchedule {
            batch_size: budget.batch_size,
            local_epochs: 1,
            max_batches: Some(take),
        };
        let seed = rng::derive_seed(budget.seed, &[rng::stream::TRIAL, pass]);
        model = local_train_step(&model, &mut opt, data, &schedule, seed)?.model;
        remaining -= take;
        pass += 1;
    }
    Ok(model)
}

/// Accuracy gap between a model trained on `all_users` and one trained on
/// `local`, both from the same initialization and budget.
///
/// `local` is expected to be a subset of `all_users`.
pub fn learning_potential(
    local: &Dataset,
    all_users: &Dataset,
    shape: &ModelShape,
    budget: &TrainBudget,
    validation: &Dataset,
) -> Result<LearningPotentialReport> {
    if local.is_empty() {
        return Err(Error::invalid("learning potential needs a non-empty local set"));
    }
    let acc_local = evaluate(&train_with_budget(shape, local, budget)?, validation, Metric::Accuracy)?;
    let acc_all = if all_users.inputs() == local.inputs() && all_users.labels() == local.labels() {
        acc_local
    } else {
        evaluate(&train_with_budget(shape, all_users, budget)?, validation, Metric::Accuracy)?
    };
    Ok(LearningPotentialReport {
        acc_local,
        acc_all,
        potential: acc_all - acc_local,
    })
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either input is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// One training epoch as seen by the evaluating party.
struct Observed {
    epoch: usize,
    current: Model,
    ids: Vec<usize>,
    updates: Vec<ParamVector>,
}

struct Layout {
    control: Vec<Vec<usize>>,
}

impl Layout {
    fn new(config: &GameConfig, train: &Dataset) -> Result<Self> {
        let n = train.len();
        let sizes: Vec<usize> = config
            .control_fractions
            .iter()
            .map(|f| ((f * n as f64).round() as usize).max(1))
            .collect();
        let partition = partition_iid_sized(n, &sizes, config.seed)?;
        Ok(Layout {
            control: partition.assignments,
        })
    }

    /// Sorted union of the control shards and `extra`.
    fn union_with(&self, extra: &[usize]) -> Vec<usize> {
        let mut all: Vec<usize> = self.control.iter().flatten().copied().chain(extra.iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

fn run_config(config: &GameConfig, topology: Topology) -> RunConfig {
    RunConfig {
        topology,
        aggregator: AggregatorSpec::new(EvaluatorKind::Mean),
        attack: AttackSpec::none(config.shape.param_count()),
        shape: config.shape.clone(),
        optimizer: config.optimizer,
        schedule: config.schedule,
        epochs: config.epochs,
        seed: config.seed,
        eval_every: config.epochs.max(1),
        record_updates: true,
    }
}

/// Runs the training process and hands every epoch's pre-aggregation model
/// and control updates to `observe`.
fn observe_training(
    config: &GameConfig,
    topology: Topology,
    user_data: Vec<Dataset>,
    validation: &Dataset,
    observer_id: Option<usize>,
    n_control: usize,
    mut observe: impl FnMut(Observed) -> Result<()>,
) -> Result<()> {
    let data = SimulationData {
        user_data,
        validation: validation.clone(),
        train_probe: None,
        server_eval: None,
    };
    let mut sim = Simulation::new(run_config(config, topology), data)?;
    for epoch in 0..config.epochs {
        let current = match observer_id {
            Some(id) => sim.user(id).expect("observer exists").model.clone(),
            None => sim.global_model().expect("star topology has a global model").clone(),
        };
        let trace = sim.run_epoch()?;
        let (ids, updates): (Vec<usize>, Vec<ParamVector>) =
            trace.updates.into_iter().filter(|(id, _)| *id < n_control).unzip();
        observe(Observed {
            epoch,
            current,
            ids,
            updates,
        })?;
    }
    Ok(())
}

fn judge(
    config: &GameConfig,
    kind: EvaluatorKind,
    seen: &Observed,
    global_scores: &[f64],
    slice: &Dataset,
) -> Result<Vec<GameRecord>> {
    let local = behavior_scores(kind, &seen.updates, &seen.current, slice, config.candidate_form)?;
    Ok(seen
        .ids
        .iter()
        .zip(local.iter().zip(global_scores))
        .map(|(&id, (&score_local, &score_global))| GameRecord {
            epoch: seen.epoch,
            update_id: id,
            ground_truth_benign: score_global < config.delta,
            // the evaluator's own rule: reject only when R exceeds δ
            decision_benign: score_local <= config.delta,
            score_local,
            score_global,
        })
        .collect())
}

fn finish_point(
    config: &GameConfig,
    mode: KnowledgeMode,
    degree: f64,
    slice_size: usize,
    potential: LearningPotentialReport,
    records: BTreeMap<EvaluatorKind, Vec<GameRecord>>,
) -> SweepPoint {
    let reports = config
        .evaluators
        .iter()
        .map(|&k| DistinguisherReport::from_records(k, mode, degree, &records[&k]))
        .collect();
    SweepPoint {
        mode,
        degree,
        slice_size,
        potential,
        reports,
        records,
    }
}

/// Peer-to-peer game: the test subject is an ordinary participant training
/// on its slice, and judges the control users' updates it receives.
///
/// One full training process is run per knowledge point, in input order.
pub fn play_rind_sweep(
    config: &GameConfig,
    data: &GameData,
    knowledge: &[(KnowledgeMode, f64)],
) -> Result<Vec<SweepPoint>> {
    config.validate()?;
    if config.topology != TopologyKind::Complete {
        return Err(Error::invalid(
            "the peer-to-peer game needs a complete topology; use server_mode_sweep for a server",
        ));
    }
    let domain = data.domain_proxy()?;
    let layout = Layout::new(config, &data.train)?;
    let n_control = layout.control.len();
    let budget = config.budget();
    let mut points = Vec::with_capacity(knowledge.len());
    for &(mode, degree) in knowledge {
        let slice_idx = knowledge_indices(&data.train, mode, degree, config.seed)?;
        let slice = data.train.select(&slice_idx);
        let mut user_data: Vec<Dataset> = layout.control.iter().map(|idx| data.train.select(idx)).collect();
        user_data.push(slice.clone());
        let mut records: BTreeMap<EvaluatorKind, Vec<GameRecord>> = BTreeMap::new();
        observe_training(
            config,
            Topology::complete(n_control + 1),
            user_data,
            &data.validation,
            Some(n_control),
            n_control,
            |seen| {
                for &kind in &config.evaluators {
                    let global = behavior_scores(kind, &seen.updates, &seen.current, &domain, config.candidate_form)?;
                    let judged = judge(config, kind, &seen, &global, &slice)?;
                    records.entry(kind).or_default().extend(judged);
                }
                Ok(())
            },
        )?;
        let all_users = data.train.select(&layout.union_with(&slice_idx));
        let potential = learning_potential(&slice, &all_users, &config.shape, &budget, &data.validation)?;
        points.push(finish_point(config, mode, degree, slice.len(), potential, records));
    }
    Ok(points)
}

/// Federated game: the server holds the slice and judges every user update.
///
/// The server does not train, so the training process is the same at every
/// knowledge point; it is run once and each slice judges the same updates.
pub fn server_mode_sweep(
    config: &GameConfig,
    data: &GameData,
    knowledge: &[(KnowledgeMode, f64)],
) -> Result<Vec<SweepPoint>> {
    config.validate()?;
    if config.topology != TopologyKind::Star {
        return Err(Error::invalid("the server game needs a star topology"));
    }
    let domain = data.domain_proxy()?;
    let layout = Layout::new(config, &data.train)?;
    let n_control = layout.control.len();
    let slices = knowledge
        .iter()
        .map(|&(mode, degree)| knowledge_indices(&data.train, mode, degree, config.seed))
        .collect::<Result<Vec<_>>>()?;
    let slice_sets: Vec<Dataset> = slices.iter().map(|idx| data.train.select(idx)).collect();
    let mut records: Vec<BTreeMap<EvaluatorKind, Vec<GameRecord>>> = vec![BTreeMap::new(); knowledge.len()];
    let user_data = layout.control.iter().map(|idx| data.train.select(idx)).collect();
    observe_training(
        config,
        Topology::star(n_control),
        user_data,
        &data.validation,
        None,
        n_control,
        |seen| {
            for &kind in &config.evaluators {
                let global = behavior_scores(kind, &seen.updates, &seen.current, &domain, config.candidate_form)?;
                for (slice, point) in slice_sets.iter().zip(records.iter_mut()) {
                    point.entry(kind).or_default().extend(judge(config, kind, &seen, &global, slice)?);
                }
            }
            Ok(())
        },
    )?;
    let budget = config.budget();
    knowledge
        .iter()
        .zip(slices.iter().zip(slice_sets))
        .zip(records)
        .map(|((&(mode, degree), (idx, slice)), recs)| {
            // the server's own data counts among what the collaboration knows
            let all_users = data.train.select(&layout.union_with(idx));
            let potential = learning_potential(&slice, &all_users, &config.shape, &budget, &data.validation)?;
            Ok(finish_point(config, mode, degree, slice.len(), potential, recs))
        })
        .collect()
}
